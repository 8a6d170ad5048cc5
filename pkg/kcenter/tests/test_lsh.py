import numpy as np
import numpy.testing
import pytest

from ..exceptions import EmptySet, HubNotInSet, InvalidParams, SearchFailed
from ..geometry import PointSet, nearest_neighbors
from ..lsh import (LshParams, _rank_hubs, _resolve_lane, build_family,
                   calibrate, collision_probability, concatenation_depth,
                   lane_dtype, measure_collision_rate, nearest_hub_search)
from .conftest import random_points


@pytest.fixture(scope='module')
def params_1024():
    return LshParams.for_points(1024, 0.5, seed=11)


def test_collision_probability_shape():
    assert collision_probability(0.0, 4.0) == 1.0
    ratios = np.array([0.5, 1.0, 2.0, 4.0])
    probabilities = collision_probability(ratios, 4.0)
    assert np.all(np.diff(probabilities) < 0)
    assert np.all((probabilities > 0) & (probabilities < 1))


def test_calibrate():
    c_rho, K = calibrate(0.5, 4.0, 1024)
    assert 1 < c_rho < 2.5
    assert K == concatenation_depth(c_rho, 4.0, 1024)
    params = LshParams(n=1024, c_rho=c_rho, K=K)
    assert params.effective_rho <= 0.5 + 1e-9
    # Smaller rho needs a larger approximation constant
    assert calibrate(0.25, 4.0, 1024)[0] > c_rho


@pytest.mark.parametrize('rho, w', [(0, 4), (1, 4), (0.5, 0)])
def test_calibrate_invalid(rho, w):
    with pytest.raises(InvalidParams):
        calibrate(rho, w, 100)


def test_params_defaults(params_1024):
    assert params_1024.L == 32
    assert params_1024.I == 20
    assert params_1024.max_hubs_per_bucket == 10
    explicit = LshParams.for_points(1024, 0.5, c_rho=4.0, L=3, I=2)
    assert (explicit.c_rho, explicit.L, explicit.I) == (4.0, 3, 2)
    assert explicit.K == concatenation_depth(4.0, 4.0, 1024)


@pytest.mark.parametrize('kwargs', [dict(r=0), dict(c_rho=1.0), dict(L=0),
                                    dict(K=0), dict(I=0), dict(rho=1.5),
                                    dict(max_hubs_per_bucket=0)])
def test_params_validation(kwargs):
    with pytest.raises(InvalidParams):
        LshParams(n=10, **kwargs)


def test_family_deterministic(params_1024):
    points = np.random.default_rng(0).normal(size=(50, 3))
    first = build_family(params_1024, 3)
    second = build_family(params_1024, 3)
    for ell in (0, 5, 31):
        numpy.testing.assert_array_equal(first.hash_points(ell, points),
                                         second.hash_points(ell, points))
    assert first.hash(2, points[0]) == int(first.hash_points(2, points)[0])

    other = build_family(params_1024.at_radius(1.0, seed=12), 3)
    assert not np.array_equal(first.hash_points(0, points),
                              other.hash_points(0, points))


def test_identical_points_collide(params_1024):
    family = build_family(params_1024, 2)
    for ell in range(params_1024.L):
        assert family.hash(ell, (1.5, -3.0)) == family.hash(ell, (1.5, -3.0))


def test_function_index_range(params_1024):
    family = build_family(params_1024, 2)
    with pytest.raises(InvalidParams):
        family.hash_points(params_1024.L, np.zeros((1, 2)))


def test_collision_rates(params_1024):
    family = build_family(params_1024, 2)
    n = params_1024.n
    near, _ = measure_collision_rate(family, 1.0, 10000, seed=1)
    assert near >= n ** -params_1024.rho / 2
    far, _ = measure_collision_rate(family, params_1024.c_rho, 10000, seed=2)
    assert far <= 2 / n
    _, any_function = measure_collision_rate(family, 0.5, 10000, seed=3)
    assert any_function >= 2 / 3


def test_resolve_lane_truncates_buckets():
    records = np.zeros(13, dtype=lane_dtype(1))
    records['bucket'] = 7
    records['non_hub'][12] = 1
    records['pos'] = np.arange(13)
    records['coords'][:, 0] = [20, 21, 22, 23, 24, 25, 26, 27, 28, 29,
                               0.5, 0.1, 0]
    _rank_hubs(records)
    query, hub, distance, truncated, kept = _resolve_lane(
        records, max_hubs=10, threshold=100)
    assert (truncated, kept) == (1, 10)
    # The two closest hubs were beyond the retained ten
    numpy.testing.assert_array_equal(query, [12])
    numpy.testing.assert_array_equal(hub, [0])
    numpy.testing.assert_allclose(distance, [20])


def test_resolve_lane_threshold():
    records = np.zeros(3, dtype=lane_dtype(1))
    records['non_hub'] = [0, 0, 1]
    records['pos'] = [0, 1, 2]
    records['coords'][:, 0] = [10, 3, 0]
    _rank_hubs(records)
    query, hub, distance, _, _ = _resolve_lane(records, 10, threshold=5)
    numpy.testing.assert_array_equal(hub, [1])
    query, hub, distance, _, _ = _resolve_lane(records, 10, threshold=2)
    assert not len(query)


def check_assignment(points, hub_ids, assignment, c_rho):
    non_hubs = np.setdiff1d(points.ids, hub_ids)
    numpy.testing.assert_array_equal(assignment.point_ids, non_hubs)
    assert np.all(np.isin(assignment.hub_ids, hub_ids))
    assert np.all(assignment.distances
                  <= c_rho * assignment.radii + 1e-9)
    query = points.select(assignment.point_ids)
    actual = np.linalg.norm(
        query.coords - points.coords[points.positions_of(assignment.hub_ids)],
        axis=1)
    numpy.testing.assert_allclose(actual, assignment.distances)
    nearest, _ = nearest_neighbors(query, points.select(hub_ids))
    return assignment.distances <= 2 * c_rho * nearest + 1e-9


def test_nearest_hub_quality():
    points = random_points(1000, seed=21)
    params = LshParams.for_points(points.n, 0.5)
    good = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        hub_ids = rng.choice(points.ids, 50, replace=False)
        assignment = nearest_hub_search(
            points, hub_ids, params.at_radius(1.0, seed=seed))
        assert not assignment.failed
        good.append(check_assignment(points, hub_ids, assignment,
                                     params.c_rho))
    assert np.mean(np.concatenate(good)) >= 0.99


def test_nearest_hub_simulated_matches_in_process(make_context):
    points = random_points(200, seed=22)
    context = make_context(points, seed=4)
    hub_ids = points.ids[::10]
    params = context.lsh.at_radius(1.0, seed=9)
    expected = nearest_hub_search(points, hub_ids, params)
    cluster = context.cluster
    actual = nearest_hub_search(points, hub_ids, params, cluster=cluster)
    for field in ('point_ids', 'hub_ids', 'trial', 'guess', 'distances'):
        numpy.testing.assert_array_equal(getattr(actual, field),
                                         getattr(expected, field))
    assert cluster.round_counter > 0
    assert cluster.primitive_invocations['sort'] > 0
    assert cluster.peak_local_words <= cluster.local_space_words


def test_nearest_hub_all_hubs():
    points = PointSet([[0, 0], [5, 5]])
    params = LshParams(n=2)
    assignment = nearest_hub_search(points, [0, 1], params)
    assert len(assignment) == 0
    assert not assignment.failed


def test_nearest_hub_failure():
    points = PointSet([[0], [10], [20]], ids=[4, 5, 6])
    params = LshParams(n=3, c_rho=2.0, I=2)
    with pytest.raises(SearchFailed) as ex:
        nearest_hub_search(points, [4], params, delta=1)
    assert ex.value.stage == 'nearest_hub_search'

    assignment = nearest_hub_search(points, [4], params, delta=1,
                                    raise_on_failure=False)
    assert assignment.failed
    numpy.testing.assert_array_equal(assignment.unresolved_ids, [5, 6])


def test_nearest_hub_bad_hubs():
    points = PointSet([[0], [10]])
    params = LshParams(n=2)
    with pytest.raises(HubNotInSet):
        nearest_hub_search(points, [7], params)
    with pytest.raises(EmptySet):
        nearest_hub_search(points, [], params)


def test_hub_assignment_lookup():
    points = PointSet([[0], [1], [2], [50], [51]])
    params = LshParams.for_points(5, 0.5, seed=3)
    assignment = nearest_hub_search(points, [0, 3], params)
    mapping = assignment.as_dict()
    assert set(mapping) == {1, 2, 4}
    for point_id, hub_id in mapping.items():
        assert assignment.close(point_id) == hub_id
    with pytest.raises(KeyError):
        assignment.close(0)
