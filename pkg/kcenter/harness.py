'''
Instances, baselines, oracles, and the experiment driver.
'''
import concurrent.futures
import csv
import dataclasses
import itertools
import json
import logging
import math
import pathlib
import time
from typing import Optional

import jinja2
import numpy as np
import scipy.spatial.distance
import scipy.special

from .clustering import CenterSet
from .config import ExperimentConfig
from .context import PipelineContext
from .exceptions import (CertificateViolation, InfeasibleGeometry,
                         InvalidParams, TooLarge)
from .geometry import (PointSet, cost, load_points, nearest_neighbors,
                       normalize)
from .refine import (WrapperConfig, center_count_threshold, ext_k_center,
                     ext_k_center_repeat, ext_k_center_search,
                     phase_two_decay, write_trace)
from .utils import make_rng


logger = logging.getLogger(__name__)

#: Largest number of candidate center sets `brute_force_opt` enumerates
BRUTE_FORCE_LIMIT = 10 ** 6
#: Placement attempts per planted center
PLACEMENT_RETRIES = 1000

_jinja_env = jinja2.Environment(
    loader=jinja2.PackageLoader('kcenter', 'templates'),
    trim_blocks=True,
    lstrip_blocks=True,
)


@dataclasses.dataclass
class PlantedInstance:
    '''
    A synthetic instance with known clusters

    Attributes
    ----------
    points : PointSet
        Normalized points; ids are ``0 .. n-1``
    k_true : int
    r_star : float
        Planted cluster radius (normalized)
    separation : float
        Minimum distance between planted centers (normalized)
    membership : np.ndarray
        Planted cluster of every point id
    centers : np.ndarray
        Planted center coordinates (normalized; not input points)
    seed : int
    '''
    points: PointSet
    k_true: int
    r_star: float
    separation: float
    membership: np.ndarray
    centers: np.ndarray
    seed: int = 0


def _place_centers(k, d, separation, rng, side):
    centers = np.empty((k, d))
    for i in range(k):
        for _ in range(PLACEMENT_RETRIES):
            candidate = rng.uniform(0, side, d)
            if i == 0 or np.min(np.linalg.norm(centers[:i] - candidate,
                                               axis=1)) >= separation:
                centers[i] = candidate
                break
        else:
            raise InfeasibleGeometry(
                f'Could not place center {i + 1} of {k} at separation '
                f'{separation:g} in a box of side {side:g}')
    return centers


def generate_planted(k, n, d, r_star, separation, seed=0, *, box=None):
    '''
    Generate ``k`` well-separated clusters of radius ``r_star``

    Centers are placed by rejection sampling in ``[0, box]^d`` (by default
    a box with room for every center), points are uniform in the ball of
    radius ``r_star`` around their center, and the result is normalized
    with ``r_star`` and ``separation`` rescaled alike.

    Raises
    ------
    InfeasibleGeometry
        If the centers cannot be placed
    '''
    if not 1 <= k <= n:
        raise InvalidParams(f'Need 1 <= k <= n; got k={k}, n={n}')
    if d < 1:
        raise InvalidParams(f'Need d >= 1; got {d}')
    if r_star <= 0 or separation <= 2 * r_star:
        raise InvalidParams('Need r_star > 0 and separation > 2 r_star')

    rng = make_rng(seed, k, n, d)
    if box is None:
        box = 2 * separation * math.ceil(k ** (1 / d))
    centers = _place_centers(k, d, separation, rng, box)

    sizes = np.full(k, n // k)
    sizes[:n % k] += 1
    membership = np.repeat(np.arange(k), sizes)
    direction = rng.standard_normal((n, d))
    direction /= np.linalg.norm(direction, axis=1)[:, np.newaxis]
    radius = r_star * rng.uniform(0, 1, n) ** (1 / d)
    coords = centers[membership] + direction * radius[:, np.newaxis]

    order = rng.permutation(n)
    coords, membership = coords[order], membership[order]
    if n == 1:
        points, factor = PointSet(coords), 1.0
    else:
        points = normalize(PointSet(coords))
        factor = points.scale
    logger.debug('Planted %d clusters of %d points in %d-d (factor %g)',
                 k, n, d, factor)
    return PlantedInstance(points=points, k_true=k, r_star=r_star * factor,
                           separation=separation * factor,
                           membership=membership, centers=centers * factor,
                           seed=seed)


def gonzalez_baseline(P, k):
    '''
    Farthest-first traversal from the lowest-id point, exactly ``k``
    centers

    Ties go to the lowest id.
    '''
    if not 1 <= k <= P.n:
        raise InvalidParams(f'Need 1 <= k <= n; got k={k}, n={P.n}')
    first = int(np.argmin(P.ids))
    chosen = [first]
    distance = np.linalg.norm(P.coords - P.coords[first], axis=1)
    while len(chosen) < k:
        farthest = distance.max()
        ties = np.flatnonzero(distance == farthest)
        position = int(ties[np.argmin(P.ids[ties])])
        chosen.append(position)
        distance = np.minimum(
            distance, np.linalg.norm(P.coords - P.coords[position], axis=1))
    centers = P.take(chosen)
    return CenterSet(points=centers, source_radius=float(distance.max()),
                     cost_bound=float(distance.max()),
                     selection=tuple(int(P.ids[p]) for p in chosen))


def brute_force_opt(P, k, *, chunk=4096):
    '''
    The optimal k-center solution among all k-subsets of ``P``

    Returns
    -------
    centers : CenterSet
        The first optimal subset in position order
    opt : float

    Raises
    ------
    TooLarge
        If there are more than `BRUTE_FORCE_LIMIT` subsets
    '''
    if not 1 <= k <= P.n:
        raise InvalidParams(f'Need 1 <= k <= n; got k={k}, n={P.n}')
    subsets = scipy.special.comb(P.n, k, exact=True)
    if subsets > BRUTE_FORCE_LIMIT:
        raise TooLarge(f'C({P.n}, {k}) = {subsets} candidate sets exceed '
                       f'{BRUTE_FORCE_LIMIT}')

    distances = scipy.spatial.distance.cdist(P.coords, P.coords)
    combinations = itertools.combinations(range(P.n), k)
    best, best_cost = None, math.inf
    while True:
        block = np.array(list(itertools.islice(combinations, chunk)),
                         dtype=np.int64)
        if not len(block):
            break
        costs = distances[block].min(axis=1).max(axis=1)
        index = int(np.argmin(costs))
        if costs[index] < best_cost:
            best, best_cost = block[index], float(costs[index])

    centers = P.take(best)
    return (CenterSet(points=centers, source_radius=best_cost,
                      cost_bound=best_cost), best_cost)


def cluster_statistics(instance, centers):
    'How the centers spread over the planted clusters'
    counts = np.bincount(instance.membership[centers.ids],
                         minlength=instance.k_true)
    return {
        'clusters': int(instance.k_true),
        'clusters_covered': int(np.count_nonzero(counts)),
        'max_centers_per_cluster': int(counts.max(initial=0)),
        'mean_centers_per_cluster': float(counts.mean()),
        'crowded_clusters': int(np.count_nonzero(counts >= 2)),
    }


def hub_count_statistics(instance, centers, c_rho):
    '''
    Check that sample-and-solve keeps exactly the hubs of a cluster

    The premise holds for a planted cluster that contains a hub and whose
    non-hub members were all assigned a hub within ``2 c_rho d(q, H)``.

    Parameters
    ----------
    instance : PlantedInstance
    centers : CenterSet
        A sample-and-solve result over ``instance.points``
    c_rho : float

    Returns
    -------
    dict
        ``premise`` (clusters where the premise held), ``equal`` (of those,
        clusters with as many centers as hubs), and the two rates
    '''
    if centers.hub_ids is None or centers.hub_assignment is None:
        raise InvalidParams('Hub statistics need a sample-and-solve result')
    points = instance.points
    membership = instance.membership
    hubs = points.select(centers.hub_ids)
    assignment = centers.hub_assignment

    ok = np.zeros(points.n, dtype=bool)
    ok[points.positions_of(centers.hub_ids)] = True
    if len(assignment):
        query = points.select(assignment.point_ids)
        nearest, _ = nearest_neighbors(query, hubs)
        good = assignment.distances <= 2 * c_rho * nearest + 1e-9
        ok[points.positions_of(assignment.point_ids[good])] = True

    k = instance.k_true
    hub_counts = np.bincount(membership[points.positions_of(centers.hub_ids)],
                             minlength=k)
    center_counts = np.bincount(membership[points.positions_of(centers.ids)],
                                minlength=k)
    all_ok = np.bincount(membership, weights=~ok, minlength=k) == 0
    premise = all_ok & (hub_counts >= 1)
    equal = premise & (hub_counts == center_counts)
    n_premise = int(np.count_nonzero(premise))
    return {
        'premise': n_premise,
        'equal': int(np.count_nonzero(equal)),
        'premise_rate': n_premise / k,
        'equality_rate': (np.count_nonzero(equal) / n_premise
                          if n_premise else math.nan),
    }


@dataclasses.dataclass
class ExperimentReport:
    'Everything measured by one run'
    config: dict
    n: int
    k: int
    pipeline: str
    cost_achieved: float
    cost_certificate: float
    baseline_cost: Optional[float]
    baseline: str
    approx_ratio: Optional[float]
    centers_returned: int
    threshold: int
    radius: float
    feasibility: list
    outside_regime: bool
    rounds_total: int
    peak_local_words: int
    peak_global_words: int
    local_space_words: int
    primitive_counts: dict
    trace: list
    cluster_statistics: Optional[dict] = None
    phase_two_decay: Optional[list] = None
    wallclock: float = 0.0

    def to_dict(self, *, wallclock=True):
        result = dataclasses.asdict(self)
        if not wallclock:
            del result['wallclock']
        return result

    def to_json(self, *, wallclock=True, **kwargs):
        return json.dumps(self.to_dict(wallclock=wallclock), sort_keys=True,
                          **kwargs)

    def csv_row(self):
        'The scalar fields, flattened'
        row = {}
        for key, value in self.to_dict().items():
            if key == 'config':
                row.update({f'config.{name}': item
                            for name, item in value.items()
                            if not isinstance(item, (dict, list))})
            elif key == 'cluster_statistics' and value:
                row.update({f'clusters.{name}': item
                            for name, item in value.items()})
            elif not isinstance(value, (dict, list)):
                row[key] = value
        return row


def write_report(report, path):
    'Write a report as JSON'
    path = pathlib.Path(path)
    with open(path, 'wt') as f:
        f.write(report.to_json(indent=2))
        f.write('\n')
    return path


def write_csv(reports, path):
    'Write one CSV row per report'
    rows = [report.csv_row() for report in reports]
    fields = []
    for row in rows:
        fields.extend(key for key in row if key not in fields)
    path = pathlib.Path(path)
    with open(path, 'wt', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    return path


def render_summary(report, template='summary.txt'):
    'Human-readable summary of a report'
    return _jinja_env.get_template(template).render(report=report)


def load_instance(config):
    '''
    The point set of an experiment (and the planted instance, if any)

    Returns
    -------
    points : PointSet
    instance : PlantedInstance or None
    '''
    if config.input is not None:
        return normalize(load_points(config.input)), None
    spec = config.planted
    instance = generate_planted(spec.k, spec.n, spec.d, spec.r_star,
                                spec.separation, seed=config.seed)
    return instance.points, instance


def _baseline(config, points, instance):
    # With k >= n every point can be its own center
    k = min(config.k, points.n)
    kind = config.oracle
    if kind is None:
        if scipy.special.comb(points.n, k, exact=True) <= BRUTE_FORCE_LIMIT:
            kind = 'brute'
        elif instance is not None:
            kind = 'planted'
        else:
            kind = 'gonzalez'
    if kind == 'brute':
        return kind, brute_force_opt(points, k)[1]
    if kind == 'planted':
        return kind, instance.r_star
    centers = gonzalez_baseline(points, k)
    return kind, cost(points, centers.points)


def run_experiment(config):
    '''
    Run one experiment end to end

    Parameters
    ----------
    config : ExperimentConfig or dict

    Returns
    -------
    ExperimentReport
    '''
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    started = time.monotonic()
    points, instance = load_instance(config)
    context = PipelineContext.create(
        points,
        delta=config.delta,
        rho=config.rho,
        seed=config.seed,
        simulate=config.simulate,
        local_space_factor=config.local_space_factor,
        bucket_width=config.bucket_width,
        c_rho=config.c_rho,
        lsh_repetitions=config.lsh_repetitions,
        lsh_trials=config.lsh_trials,
        max_hubs_per_bucket=config.max_hubs_per_bucket,
        primitive_round_cost=config.primitive_round_cost,
        max_workers=1,
        constants=config.constants,
    )
    threshold = center_count_threshold(config.k, points.n, config.alpha,
                                       config.constants.c_add)
    wrapper = WrapperConfig.for_points(
        points, config.k, config.constants, psi=config.psi,
        parallelism=config.workers,
        evaluate_all_radii=config.evaluate_all_radii)

    feasibility = []
    outside = False
    if config.pipeline == 'search':
        search = ext_k_center_search(points, config.alpha, config.k, wrapper,
                                     context=context)
        centers, radius = search.centers, search.radius
        feasibility = [list(item) for item in zip(search.radii,
                                                  search.feasibility)]
        outside = search.outside_regime
    elif config.pipeline == 'repeat':
        radius = config.radius
        centers = ext_k_center_repeat(points, config.alpha, radius, wrapper,
                                      context=context)
    else:
        radius = config.radius
        centers = ext_k_center(points, config.alpha, radius, context=context)

    achieved = cost(points, centers.points)
    if achieved > centers.cost_bound + 1e-9:
        raise CertificateViolation(f'cost {achieved:.6g} exceeds the '
                                   f'certificate {centers.cost_bound:.6g}')
    if config.pipeline == 'search' and len(centers) > threshold:
        raise CertificateViolation(f'{len(centers)} centers exceed the '
                                   f'threshold {threshold}')

    kind, baseline = _baseline(config, points, instance)
    if baseline > 0:
        ratio = achieved / baseline
    else:
        ratio = 1.0 if achieved == 0 else None

    statistics = decay = None
    if instance is not None:
        statistics = cluster_statistics(instance, centers)
        decay = phase_two_decay(centers.trace, instance.membership)
        if decay and np.mean(decay) > config.constants.zeta_alert:
            logger.warning('Phase-two decay %.3f exceeds %.3f',
                           np.mean(decay), config.constants.zeta_alert)

    usage = (context.cluster.usage() if context.cluster is not None
             else dict(rounds=0, peak_local_words=0, peak_global_words=0,
                       primitive_counts={}))
    report = ExperimentReport(
        config=config.to_dict(),
        n=points.n,
        k=config.k,
        pipeline=config.pipeline,
        cost_achieved=achieved,
        cost_certificate=centers.cost_bound,
        baseline_cost=baseline,
        baseline=kind,
        approx_ratio=ratio,
        centers_returned=len(centers),
        threshold=threshold,
        radius=radius,
        feasibility=feasibility,
        outside_regime=outside,
        rounds_total=usage['rounds'],
        peak_local_words=usage['peak_local_words'],
        peak_global_words=usage['peak_global_words'],
        local_space_words=context.mpc.local_space_words,
        primitive_counts=usage['primitive_counts'],
        trace=[record.to_dict() for record in centers.trace],
        cluster_statistics=statistics,
        phase_two_decay=decay,
        wallclock=time.monotonic() - started,
    )
    logger.info('n=%d k=%d: %d centers, cost %.4g (certificate %.4g), '
                '%d rounds', report.n, report.k, report.centers_returned,
                achieved, report.cost_certificate, report.rounds_total)

    if config.out:
        write_report(report, config.out)
    if config.csv:
        write_csv([report], config.csv)
    if config.summary:
        with open(config.summary, 'wt') as f:
            f.write(render_summary(report))
    if config.trace:
        write_trace(centers.trace, config.trace)
    return report


def run_grid(config, seeds, *, max_workers=1):
    '''
    Run ``config`` once per seed

    Output paths of ``config`` are ignored; reports come back in seed order.
    '''
    configs = [config.replace(seed=seed, out=None, csv=None, summary=None,
                              trace=None)
               for seed in seeds]
    if max_workers > 1:
        with concurrent.futures.ThreadPoolExecutor(
                max_workers=max_workers) as pool:
            return list(pool.map(run_experiment, configs))
    return [run_experiment(item) for item in configs]
