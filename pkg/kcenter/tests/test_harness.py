import csv
import json

import numpy as np
import numpy.testing
import pytest

from ..config import ExperimentConfig
from ..exceptions import (ConfigError, InfeasibleGeometry, InvalidParams,
                          TooLarge)
from ..geometry import PointSet, cost, save_points
from ..harness import (brute_force_opt, cluster_statistics, generate_planted,
                       gonzalez_baseline, render_summary, run_experiment,
                       run_grid, write_csv)
from .conftest import random_points


def test_generate_planted(planted):
    points = planted.points
    assert points.n == 200
    assert planted.k_true == 4
    numpy.testing.assert_array_equal(points.ids, np.arange(200))
    assert points.min_pair_dist == pytest.approx(1.0)
    numpy.testing.assert_array_equal(np.bincount(planted.membership),
                                     [50, 50, 50, 50])
    for cluster in range(4):
        members = points.coords[planted.membership == cluster]
        offsets = members - planted.centers[cluster]
        assert np.linalg.norm(offsets, axis=1).max() <= \
            planted.r_star * (1 + 1e-9)
    separation = np.linalg.norm(planted.centers[:, np.newaxis] -
                                planted.centers[np.newaxis], axis=2)
    assert separation[np.triu_indices(4, 1)].min() >= \
        planted.separation * (1 - 1e-9)


def test_generate_planted_deterministic():
    first = generate_planted(3, 50, 2, 1.0, 10.0, seed=4)
    second = generate_planted(3, 50, 2, 1.0, 10.0, seed=4)
    numpy.testing.assert_array_equal(first.points.coords,
                                     second.points.coords)


def test_generate_planted_invalid():
    with pytest.raises(InvalidParams):
        generate_planted(5, 4, 2, 1.0, 10.0)
    with pytest.raises(InvalidParams):
        generate_planted(2, 10, 2, 1.0, 1.5)


def test_generate_planted_no_room():
    with pytest.raises(InfeasibleGeometry):
        generate_planted(20, 100, 1, 1.0, 10.0, box=50.0)


def test_gonzalez_baseline():
    points = PointSet([[0.0], [1.0], [10.0]])
    centers = gonzalez_baseline(points, 2)
    assert centers.selection == (0, 2)
    assert cost(points, centers.points) == 1.0


def test_brute_force_opt():
    points = PointSet([[0.0], [1.0], [10.0]])
    centers, opt = brute_force_opt(points, 2)
    assert opt == 1.0
    assert cost(points, centers.points) == 1.0
    assert brute_force_opt(points, 3)[1] == 0.0


@pytest.mark.parametrize('seed', range(10))
def test_gonzalez_within_twice_opt(seed):
    points = random_points(9, seed=seed)
    for k in (1, 2, 3):
        _, opt = brute_force_opt(points, k)
        centers = gonzalez_baseline(points, k)
        assert len(centers) == k
        assert cost(points, centers.points) <= 2 * opt + 1e-9


def test_brute_force_too_large():
    with pytest.raises(TooLarge):
        brute_force_opt(random_points(100), 10)


def test_cluster_statistics(planted):
    centers = gonzalez_baseline(planted.points, 4)
    statistics = cluster_statistics(planted, centers)
    assert statistics['clusters'] == 4
    assert statistics['clusters_covered'] == 4
    assert statistics['max_centers_per_cluster'] == 1
    assert statistics['crowded_clusters'] == 0


@pytest.fixture
def point_file(tmp_path):
    path = tmp_path / 'points.txt'
    save_points(path, random_points(12, seed=3))
    return path


def test_run_experiment_brute(point_file):
    report = run_experiment({'k': 2, 'input': str(point_file), 'psi': 2})
    assert report.baseline == 'brute'
    assert report.n == 12
    assert report.cost_achieved <= report.cost_certificate
    assert report.approx_ratio == pytest.approx(
        report.cost_achieved / report.baseline_cost)
    assert report.centers_returned <= report.threshold
    assert report.outside_regime
    assert report.rounds_total > 0
    assert report.peak_local_words <= report.local_space_words
    assert [radius for radius, _ in report.feasibility][0] >= report.radius
    assert report.cluster_statistics is None


@pytest.mark.parametrize('oracle', [None, 'brute', 'gonzalez'])
def test_run_experiment_more_centers_than_points(point_file, oracle):
    report = run_experiment({'k': 20, 'input': str(point_file), 'psi': 1,
                             'oracle': oracle})
    assert report.k == 20
    assert report.n == 12
    assert report.baseline == (oracle or 'brute')
    assert report.baseline_cost == 0.0
    assert (report.approx_ratio == 1.0) == (report.cost_achieved == 0)
    assert report.cost_achieved <= report.cost_certificate
    assert 'Baseline' in render_summary(report)


def test_run_experiment_planted(tmp_path):
    r_star = generate_planted(4, 300, 2, 1.0, 100.0, seed=2).r_star
    config = ExperimentConfig.from_dict({
        'k': 4, 'planted': '4,300,2,1,100', 'seed': 2, 'pipeline': 'repeat',
        'radius': 2 * r_star, 'psi': 2, 'out': str(tmp_path / 'report.json'),
        'csv': str(tmp_path / 'report.csv'),
        'summary': str(tmp_path / 'summary.txt'),
    })
    report = run_experiment(config)
    assert report.baseline == 'planted'
    assert report.cost_achieved <= report.cost_certificate
    assert report.cluster_statistics['clusters_covered'] == 4
    assert report.trace
    assert report.feasibility == []

    saved = json.loads((tmp_path / 'report.json').read_text())
    assert saved['centers_returned'] == report.centers_returned
    assert saved['config']['planted'] == [4, 300, 2, 1.0, 100.0]
    with open(tmp_path / 'report.csv', newline='') as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 1
    assert int(rows[0]['centers_returned']) == report.centers_returned
    assert 'Cost certificate' in (tmp_path / 'summary.txt').read_text()


def test_run_experiment_in_process(point_file):
    report = run_experiment({'k': 3, 'input': str(point_file), 'psi': 1,
                             'simulate': False, 'oracle': 'gonzalez'})
    assert report.baseline == 'gonzalez'
    assert report.rounds_total == 0
    assert report.primitive_counts == {}


def test_run_experiment_reproducible(point_file):
    config = {'k': 2, 'input': str(point_file), 'psi': 2, 'seed': 9}
    first = run_experiment(config).to_json(wallclock=False)
    second = run_experiment(config).to_json(wallclock=False)
    assert first == second


def test_run_experiment_thread_count_invariant(tmp_path):
    reports = []
    traces = []
    for workers in (1, 3):
        trace = tmp_path / f'trace-{workers}.jsonl'
        report = run_experiment({'k': 4, 'planted': '4,300,2,1,100',
                                 'seed': 2, 'psi': 3, 'workers': workers,
                                 'trace': str(trace)})
        result = report.to_dict(wallclock=False)
        del result['config']
        reports.append(json.dumps(result, sort_keys=True))
        traces.append(trace.read_bytes())
    assert reports[0] == reports[1]
    assert traces[0] == traces[1]
    assert traces[0]


def test_run_experiment_invalid():
    with pytest.raises(ConfigError):
        run_experiment({'k': 2})


def test_run_grid(point_file):
    config = ExperimentConfig.from_dict({'k': 2, 'input': str(point_file),
                                         'psi': 1})
    reports = run_grid(config, [0, 1], max_workers=2)
    assert [report.config['seed'] for report in reports] == [0, 1]
    serial = run_grid(config, [0, 1])
    assert [r.to_json(wallclock=False) for r in reports] == \
        [r.to_json(wallclock=False) for r in serial]


def test_write_csv_and_summary(tmp_path, point_file):
    reports = [run_experiment({'k': k, 'input': str(point_file), 'psi': 1})
               for k in (2, 3)]
    path = write_csv(reports, tmp_path / 'grid.csv')
    with open(path, newline='') as f:
        rows = list(csv.DictReader(f))
    assert [row['k'] for row in rows] == ['2', '3']
    assert rows[0]['config.input'] == str(point_file)

    summary = render_summary(reports[0])
    assert summary.startswith('k-center run: n=12 k=2 pipeline=search')
    assert 'Radius ladder:' in summary
    assert 'outside of the analyzed regime' in summary
