'''
Refinement: Uniform-Center, the two-phase Ext-k-Center, and the wrappers
that repeat it (minimum cardinality wins) and search the radius ladder.
'''
import concurrent.futures
import contextlib
import dataclasses
import json
import logging
import math
import pathlib
from typing import List, Optional

import numpy as np

from .clustering import CenterSet, sample_and_solve
from .exceptions import (AllRepetitionsFailed, CertificateViolation,
                         InvalidParams, NoFeasibleRadius, PipelineFailure)
from .geometry import TOLERANCE, cost
from .utils import derive_seed


logger = logging.getLogger(__name__)

#: Phase-two sampling probability
PHASE_TWO_PROBABILITY = 0.5


def iter_log(n, j):
    '''
    The j-fold base-2 logarithm of ``n``

    ``iter_log(n, 0)`` is ``n``.  Every application is clamped below at 2.
    '''
    if j < 0:
        raise InvalidParams(f'j must be nonnegative; got {j}')
    if n < 1:
        raise InvalidParams(f'n must be positive; got {n}')
    value = n
    for _ in range(j):
        value = max(2.0, math.log2(value))
    return value


def log_star(n):
    '''
    Applications of log2 needed to bring ``n`` down to 1 or less

    By convention ``log_star(n)`` is 0 for ``n <= 2``.
    '''
    if n < 1:
        raise InvalidParams(f'n must be positive; got {n}')
    if n <= 2:
        return 0
    count = 0
    value = n
    while value > 1:
        value = math.log2(value)
        count += 1
    return count


def _loglog(t):
    'Unclamped log2 log2 t, 0 for t <= 2'
    return math.log2(math.log2(t)) if t > 2 else 0.0


@dataclasses.dataclass(frozen=True)
class UniformSchedule:
    '''
    Iterations and sampling probabilities of one Uniform-Center call

    ``p[i - 1]`` is the probability used by iteration ``i``.
    '''
    t: float
    tau: int
    s: tuple
    p: tuple

    @classmethod
    def build(cls, t, n, delta, constants):
        tau = max(1, math.ceil(constants.c_tau * _loglog(t) - 1e-9))
        s = [float(t)]
        for _ in range(tau):
            s.append(math.sqrt(s[-1]))
        p0 = min(1.0, constants.c_p * math.log2(max(n, 2)) / n ** delta)
        p = [p0] + [min(1.0, 1.0 / value) for value in s[1:]]
        return cls(t=t, tau=tau, s=tuple(s), p=tuple(p))


@dataclasses.dataclass(frozen=True)
class ExtSchedule:
    '''
    The parameter ladder of one Ext-k-Center run

    Attributes
    ----------
    alpha : int
        Number of Uniform-Center phases (after clamping)
    t : tuple
        t_0 .. t_alpha
    radii : tuple
        r_0 .. r_alpha with ``r_j = r / log log t_j``
    taus : tuple
        Iterations of Uniform-Center in phase j, for j = 1 .. alpha
    beta : int
        Sample-and-solve calls of phase two
    '''
    n: int
    r: float
    alpha: int
    t: tuple
    radii: tuple
    taus: tuple
    beta: int

    @classmethod
    def build(cls, n, dim, alpha, r, constants, delta=0.5):
        if r <= 0:
            raise InvalidParams(f'r must be positive; got {r}')
        if alpha < 1:
            raise InvalidParams(f'alpha must be at least 1; got {alpha}')
        alpha_max = max(1, log_star(n) - constants.c_0)
        if alpha > alpha_max:
            logger.warning('alpha=%d exceeds log*(n) - c_0 = %d; clamped',
                           alpha, alpha_max)
            alpha = alpha_max

        t = [n]
        for _ in range(alpha):
            previous = t[-1]
            t.append(min(previous, math.ceil(
                constants.c_t * iter_log(previous, 1)
                * iter_log(previous, 2) ** (dim + 2))))
        radii = [r / iter_log(value, 2) for value in t]
        taus = [UniformSchedule.build(value, n, delta, constants).tau
                for value in t[:-1]]
        beta = max(1, math.ceil(constants.c_beta
                                * iter_log(n, alpha + 1) - 1e-9))
        return cls(n=n, r=r, alpha=alpha, t=tuple(t), radii=tuple(radii),
                   taus=tuple(taus), beta=beta)

    def certificate(self, c_rho):
        '4 c_rho (sum_j r_{j-1} tau_{j-1} + beta r)'
        phase_one = sum(radius * tau
                        for radius, tau in zip(self.radii, self.taus))
        return 4 * c_rho * (phase_one + self.beta * self.r)


@dataclasses.dataclass
class StageRecord:
    'One sample-and-solve stage of a refinement'
    stage: str
    input_size: int
    output_size: int
    r_used: float
    rounds_charged: int
    measured_cost_bound: float
    cost: Optional[float] = None
    center_ids: Optional[np.ndarray] = dataclasses.field(default=None,
                                                         repr=False)

    def to_dict(self):
        return {
            'stage': self.stage,
            'input_size': self.input_size,
            'output_size': self.output_size,
            'r_used': self.r_used,
            'rounds_charged': self.rounds_charged,
            'measured_cost_bound': self.measured_cost_bound,
            'cost': self.cost,
        }


def write_trace(trace, path):
    'Write stage records as JSON lines'
    path = pathlib.Path(path)
    with open(path, 'wt') as f:
        for record in trace:
            f.write(json.dumps(record.to_dict(), sort_keys=True))
            f.write('\n')
    return path


def _rounds(context):
    return context.cluster.round_counter if context.cluster is not None \
        else 0


def _solve_stage(Q, p, r, context, seed, stage, trace, bound):
    'Run one sample-and-solve stage and append its record'
    before = _rounds(context)
    try:
        result = sample_and_solve(Q, p, r, context=context, seed=seed)
    except PipelineFailure as ex:
        raise ex.tag(stage)
    trace.append(StageRecord(
        stage=stage,
        input_size=Q.n,
        output_size=len(result),
        r_used=r,
        rounds_charged=_rounds(context) - before,
        measured_cost_bound=bound + result.cost_bound,
        center_ids=result.ids,
    ))
    return result


def uniform_center(V, r, t, *, context, seed=None, stage='uniform',
                   base_bound=0.0):
    '''
    Refine ``V`` by sample-and-solve on a quadratically growing probability
    schedule

    Parameters
    ----------
    V : PointSet
    r : float
    t : int
        Size parameter, at most n
    context : PipelineContext
    seed : int, optional
    stage : str, optional
        Prefix of the stage names in the trace
    base_bound : float, optional
        Certificate accumulated before this call, added to the bounds
        reported in the trace

    Returns
    -------
    CenterSet
        ``cost_bound`` is ``tau * 4 c_rho r``
    '''
    seed = context.seed if seed is None else seed
    schedule = UniformSchedule.build(t, context.n, context.mpc.delta,
                                     context.constants)
    S = V
    bound = 0.0
    trace = []
    for i in range(1, schedule.tau + 1):
        result = _solve_stage(S, schedule.p[i - 1], r, context,
                              derive_seed(seed, i), f'{stage}/iter{i}',
                              trace, base_bound + bound)
        bound += result.cost_bound
        S = result.points

    measured = cost(V, S)
    if measured > bound + TOLERANCE:
        raise CertificateViolation(f'{stage}: cost {measured:.6g} exceeds '
                                   f'{bound:.6g}')
    logger.debug('%s: %d -> %d points in %d iteration(s) (t=%g, r=%g)',
                 stage, V.n, S.n, schedule.tau, t, r)
    return CenterSet(points=S, source_radius=r, cost_bound=bound,
                     trace=trace)


def _check_stage(P, T_prev, T, bound, stage, trace):
    if not np.all(T_prev.contains(T.ids)):
        raise CertificateViolation(f'{stage}: output is not a subset of '
                                   f'the input')
    measured = cost(P, T)
    if measured > bound + TOLERANCE:
        raise CertificateViolation(f'{stage}: cost {measured:.6g} exceeds '
                                   f'the certificate {bound:.6g}')
    if trace:
        trace[-1].cost = measured
    return measured


def ext_k_center(P, alpha, r, *, context, seed=None):
    '''
    The two-phase refinement

    Phase one runs Uniform-Center ``alpha`` times with the shrinking ladders
    t_j and r_j; phase two runs ``beta`` sample-and-solve calls with
    probability 1/2 at radius ``r``.  Nesting and the cost certificate are
    checked after every stage.

    Parameters
    ----------
    P : PointSet
    alpha : int
    r : float
    context : PipelineContext
        Its cluster, if any, must hold ``P``
    seed : int, optional

    Returns
    -------
    CenterSet
        ``cost_bound`` is the certificate; ``trace`` holds one record per
        sample-and-solve stage

    Raises
    ------
    PipelineFailure
        Tagged with the failing stage
    '''
    seed = context.seed if seed is None else seed
    schedule = ExtSchedule.build(P.n, P.dim, alpha, r, context.constants,
                                 delta=context.mpc.delta)
    c_rho = context.c_rho
    T = P
    bound = 0.0
    trace = []

    for j in range(1, schedule.alpha + 1):
        stage = f'phase1.{j}'
        result = uniform_center(T, schedule.radii[j - 1], schedule.t[j - 1],
                                context=context,
                                seed=derive_seed(seed, 1, j), stage=stage,
                                base_bound=bound)
        bound += result.cost_bound
        trace.extend(result.trace)
        _check_stage(P, T, result.points, bound, stage, trace)
        T = result.points

    for i in range(1, schedule.beta + 1):
        stage = f'phase2.{i}'
        result = _solve_stage(T, PHASE_TWO_PROBABILITY, r, context,
                              derive_seed(seed, 2, i), stage, trace, bound)
        bound += result.cost_bound
        _check_stage(P, T, result.points, bound, stage, trace)
        T = result.points

    expected = schedule.certificate(c_rho)
    if not math.isclose(bound, expected, rel_tol=1e-9):
        raise CertificateViolation(f'Accumulated bound {bound:.6g} differs '
                                   f'from the schedule {expected:.6g}')
    logger.info('Ext-k-Center: n=%d alpha=%d beta=%d r=%g -> %d centers, '
                'certificate %.4g', P.n, schedule.alpha, schedule.beta, r,
                T.n, bound)
    return CenterSet(points=T, source_radius=r, cost_bound=bound,
                     trace=trace)


def center_count_threshold(k, n, alpha, c_add=8):
    '''
    The number of centers accepted by the radius search

    ``k (1 + 1/L) + c_add L ** 3`` rounded up, with
    ``L = max(2, iter_log(n, alpha))``.
    '''
    if k < 1:
        raise InvalidParams(f'k must be at least 1; got {k}')
    L = max(2.0, iter_log(n, alpha))
    return math.ceil(k + k / L + c_add * L ** 3 - 1e-9)


def analyzed_regime(k, n):
    'Whether k >= (log2 n) ** 2'
    return k >= math.log2(max(n, 2)) ** 2


@dataclasses.dataclass(frozen=True)
class WrapperConfig:
    '''
    Settings of the repetition and radius-search wrappers

    Attributes
    ----------
    k : int
    psi : int
        Independent repetitions per radius
    phi : int
        Radii on the ladder Delta, Delta/2, ...
    c_add : float
    parallelism : int
        Threads running repetitions
    evaluate_all_radii : bool
        Keep evaluating radii after the first infeasible one (the choice
        does not change; the flags are reported)
    '''
    k: int = 1
    psi: int = 1
    phi: int = 1
    c_add: float = 8.0
    parallelism: int = 1
    evaluate_all_radii: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise InvalidParams('k must be at least 1')
        if self.psi < 1 or self.phi < 1:
            raise InvalidParams('psi and phi must be at least 1')
        if self.parallelism < 1:
            raise InvalidParams('parallelism must be at least 1')

    @classmethod
    def for_points(cls, points, k, constants, *, psi=None, parallelism=1,
                   evaluate_all_radii=False):
        delta = max(points.delta_diameter, 1.0)
        if psi is None:
            psi = max(1, math.ceil(constants.c_psi * math.log2(
                max(points.n, math.log2(delta), 2))))
        return cls(k=k, psi=psi, phi=math.ceil(math.log2(delta)) + 1,
                   c_add=constants.c_add, parallelism=parallelism,
                   evaluate_all_radii=evaluate_all_radii)


def _section(context):
    return context.cluster.parallel() if context.cluster is not None \
        else contextlib.nullcontext()


def ext_k_center_repeat(P, alpha, r, config, *, context, seed=None):
    '''
    Run ``config.psi`` independent Ext-k-Center instances and keep the one
    with the fewest centers (ties to the lowest instance)

    Failed instances are discarded.

    Raises
    ------
    AllRepetitionsFailed
    '''
    seed = context.seed if seed is None else seed
    with _section(context) as section:
        contexts = [context.spawn(section, P, derive_seed(seed, rep))
                    for rep in range(config.psi)]

        def attempt(rep):
            try:
                return ext_k_center(P, alpha, r, context=contexts[rep],
                                    seed=derive_seed(seed, rep))
            except PipelineFailure as ex:
                ex.tag(f'ext[{rep}]')
                logger.exception('Repetition %d at r=%g failed', rep, r)
                return ex

        if config.parallelism > 1 and config.psi > 1:
            with concurrent.futures.ThreadPoolExecutor(
                    max_workers=config.parallelism) as pool:
                outcomes = list(pool.map(attempt, range(config.psi)))
        else:
            outcomes = [attempt(rep) for rep in range(config.psi)]

    successes = [(len(outcome), rep, outcome)
                 for rep, outcome in enumerate(outcomes)
                 if isinstance(outcome, CenterSet)]
    if not successes:
        last = outcomes[-1]
        raise AllRepetitionsFailed(
            f'all {config.psi} repetition(s) failed; last: {last}',
            stage=f'r={r:g}') from last
    size, rep, best = min(successes, key=lambda item: item[:2])
    logger.debug('Repetitions at r=%g: sizes %s; kept #%d',
                 r, [len(o) if isinstance(o, CenterSet) else None
                     for o in outcomes], rep)
    return best


@dataclasses.dataclass
class RadiusSearchResult:
    '''
    Outcome of the radius search

    Attributes
    ----------
    centers : CenterSet
    radius : float
        The chosen r
    radii : list of float
        Evaluated radii, largest first
    feasibility : list of bool
        Whether each evaluated radius met the threshold
    center_counts : list of int or None
        Centers returned at each radius (None when all repetitions failed)
    threshold : int
    outside_regime : bool
        k is below the analyzed regime
    '''
    centers: CenterSet
    radius: float
    radii: List[float]
    feasibility: List[bool]
    center_counts: List[Optional[int]]
    threshold: int
    outside_regime: bool = False


def radius_ladder(delta_diameter, phi):
    'Delta, Delta/2, ..., phi radii'
    return [delta_diameter / 2 ** i for i in range(phi)]


def ext_k_center_search(P, alpha, k, config, *, context, seed=None):
    '''
    Evaluate the repeated refinement on the radius ladder and return the
    smallest radius whose center count meets the threshold

    Radii are scanned from the largest down; the result is the last feasible
    radius before the first infeasible one.

    Raises
    ------
    NoFeasibleRadius
        If the largest radius already returns too many centers
    AllRepetitionsFailed
        If every repetition at the largest radius failed
    '''
    seed = context.seed if seed is None else seed
    threshold = center_count_threshold(k, P.n, alpha, config.c_add)
    outside = not analyzed_regime(k, P.n)
    if outside:
        logger.warning('k=%d is below (log2 n)^2 for n=%d: outside the '
                       'analyzed regime', k, P.n)
    radii = radius_ladder(max(P.delta_diameter, 1.0), config.phi)

    evaluated, feasibility, counts = [], [], []
    chosen = None
    stopped = False
    with _section(context) as section:
        for index, radius in enumerate(radii):
            child = context.spawn(section, P, derive_seed(seed, index))
            try:
                result = ext_k_center_repeat(P, alpha, radius, config,
                                             context=child,
                                             seed=derive_seed(seed, index))
            except AllRepetitionsFailed:
                if index == 0:
                    raise
                result = None
            feasible = result is not None and len(result) <= threshold
            evaluated.append(radius)
            feasibility.append(feasible)
            counts.append(len(result) if result is not None else None)
            logger.info('r=%g: %s centers (threshold %d)', radius,
                        counts[-1], threshold)

            if feasible and not stopped:
                chosen = (result, radius)
            elif feasible:
                logger.warning('r=%g is feasible after an infeasible '
                               'larger radius', radius)
            else:
                stopped = True
                if not config.evaluate_all_radii:
                    break

    if chosen is None:
        raise NoFeasibleRadius(
            f'{counts[0]} centers at r=Delta={radii[0]:g} exceed the '
            f'threshold {threshold}', stage='search')
    centers, radius = chosen
    return RadiusSearchResult(centers=centers, radius=radius, radii=evaluated,
                              feasibility=feasibility, center_counts=counts,
                              threshold=threshold, outside_regime=outside)


def phase_two_decay(trace, membership):
    '''
    How fast phase two thins out clusters with several surviving centers

    Parameters
    ----------
    trace : list of StageRecord
    membership : np.ndarray
        Planted cluster of every point id

    Returns
    -------
    list of float
        For every phase-two stage, the ratio of centers sitting in planted
        clusters with at least two survivors, after versus before the stage
        (stages starting from zero such centers are skipped)
    '''
    membership = np.asarray(membership)

    def crowded(ids):
        counts = np.bincount(membership[ids], minlength=1)
        return int(counts[counts >= 2].sum())

    rates = []
    previous = None
    for record in trace:
        if record.center_ids is None:
            continue
        current = crowded(record.center_ids)
        if record.stage.startswith('phase2') and previous:
            rates.append(current / previous)
        previous = current
    return rates
