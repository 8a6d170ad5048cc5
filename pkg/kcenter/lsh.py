'''
Euclidean locality-sensitive hashing and nearest-hub search.

The family is the usual p-stable construction: K concatenated Gaussian
projections ``floor((a . x + b) / (w * r))`` per function, L functions per
family.  `nearest_hub_search` runs trials ``i`` and radius guesses
``r = 2 ** j``, keeping at most ``max_hubs_per_bucket`` hubs per bucket and
accepting a hub only if it lies within ``c_rho * r``.
'''
import contextlib
import dataclasses
import logging
import math
import numpy as np
import scipy.stats

from .exceptions import (DimensionMismatch, EmptySet, HubNotInSet,
                         InvalidParams, SearchFailed)
from .geometry import TOLERANCE, Point, PointSet
from .mpc import record_words, segment_starts, segmented_cumsum
from .utils import derive_seed, make_rng


logger = logging.getLogger(__name__)

#: Step of the grid searched by `calibrate`
CALIBRATION_STEP = 0.01
#: Largest approximation constant considered by `calibrate`
CALIBRATION_LIMIT = 64.0

_MIX_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)


def collision_probability(distance_ratio, w):
    '''
    Probability that one p-stable projection puts two points into the same
    cell

    Parameters
    ----------
    distance_ratio : float or np.ndarray
        Point distance divided by the radius r
    w : float
        Cell width factor (cells are ``w * r`` wide)

    Returns
    -------
    float or np.ndarray
    '''
    c = np.asarray(distance_ratio, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        t = w / c
        p = (1 - 2 * scipy.stats.norm.cdf(-t)
             - 2 / (np.sqrt(2 * np.pi) * t) * (1 - np.exp(-t ** 2 / 2)))
    p = np.where(c <= 0, 1.0, p)
    return float(p) if p.ndim == 0 else p


def calibrate(rho, w, n):
    '''
    Find the approximation constant and concatenation depth for ``rho``

    Parameters
    ----------
    rho : float
        Target exponent, 0 < rho < 1
    w : float
        Cell width factor
    n : int
        Ambient point count

    Returns
    -------
    c_rho : float
        Smallest c on the calibration grid with
        ``ln(1/p(1)) / ln(1/p(c)) <= rho``
    K : int
        ``ceil(ln n / ln(1/p(c_rho)))``, at least 1
    '''
    if not 0 < rho < 1:
        raise InvalidParams(f'rho must be in (0, 1); got {rho}')
    if w <= 0:
        raise InvalidParams(f'Bucket width factor must be positive; got {w}')

    grid = np.arange(1 + CALIBRATION_STEP, CALIBRATION_LIMIT,
                     CALIBRATION_STEP)
    near = -math.log(collision_probability(1.0, w))
    far = -np.log(collision_probability(grid, w))
    ok = np.flatnonzero(near / far <= rho + 1e-12)
    if not len(ok):
        raise InvalidParams(f'No approximation constant below '
                            f'{CALIBRATION_LIMIT} reaches rho={rho} at w={w}')
    c_rho = round(float(grid[ok[0]]), 6)
    return c_rho, concatenation_depth(c_rho, w, n)


def concatenation_depth(c_rho, w, n):
    'K such that pairs at ``c_rho * r`` collide with probability <= 1/n'
    far = -math.log(collision_probability(c_rho, w))
    return max(1, math.ceil(math.log(max(n, 2)) / far))


@dataclasses.dataclass(frozen=True)
class LshParams:
    '''
    Parameters of one (r, c_rho * r, n^-rho, 1/n)-sensitive family

    Use `LshParams.for_points` to get calibrated defaults.
    '''
    n: int
    r: float = 1.0
    rho: float = 0.5
    c_rho: float = 2.0
    L: int = 1
    K: int = 1
    bucket_width_factor: float = 4.0
    I: int = 1
    max_hubs_per_bucket: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.r <= 0:
            raise InvalidParams(f'r must be positive; got {self.r}')
        if not 0 < self.rho < 1:
            raise InvalidParams(f'rho must be in (0, 1); got {self.rho}')
        if self.c_rho <= 1:
            raise InvalidParams(f'c_rho must exceed 1; got {self.c_rho}')
        for name in ('L', 'K', 'I', 'max_hubs_per_bucket'):
            if getattr(self, name) < 1:
                raise InvalidParams(f'{name} must be at least 1')
        if self.bucket_width_factor <= 0:
            raise InvalidParams('bucket_width_factor must be positive')

    @classmethod
    def for_points(cls, n, rho=0.5, *, bucket_width_factor=4.0, c_rho=None,
                   L=None, I=None, max_hubs_per_bucket=10, seed=0):
        '''
        Calibrated parameters for ``n`` points

        ``L`` defaults to ``ceil(n ** rho)`` and ``I`` to ``ceil(2 log2 n)``.
        An explicit ``c_rho`` skips calibration but still sets ``K``.
        '''
        if c_rho is None:
            c_rho, K = calibrate(rho, bucket_width_factor, n)
        else:
            K = concatenation_depth(c_rho, bucket_width_factor, n)
        n_eff = max(n, 2)
        return cls(
            n=n,
            rho=rho,
            c_rho=c_rho,
            L=L if L is not None else math.ceil(n_eff ** rho),
            K=K,
            bucket_width_factor=bucket_width_factor,
            I=I if I is not None else math.ceil(2 * math.log2(n_eff)),
            max_hubs_per_bucket=max_hubs_per_bucket,
            seed=seed,
        )

    def at_radius(self, r, seed=None):
        'The same parameters at radius ``r`` (and optionally another seed)'
        return dataclasses.replace(
            self, r=float(r), seed=self.seed if seed is None else seed)

    @property
    def effective_rho(self):
        'ln(1/p(1)) / ln(1/p(c_rho)) for the configured cell width'
        w = self.bucket_width_factor
        return (math.log(collision_probability(1.0, w))
                / math.log(collision_probability(self.c_rho, w)))


def _mix(state, values):
    'One splitmix64 step folding ``values`` into ``state`` (uint64 arrays)'
    with np.errstate(over='ignore'):
        z = state ^ values.astype(np.uint64)
        z = z + _MIX_GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX_1
        z = (z ^ (z >> np.uint64(27))) * _MIX_2
        return z ^ (z >> np.uint64(31))


class LshFamily:
    '''
    L seeded hash functions of K concatenated p-stable projections

    Parameters
    ----------
    params : LshParams
    dim : int
        Dimension of the hashed points
    '''

    def __init__(self, params, dim):
        self.params = params
        self.dim = int(dim)
        rng = np.random.default_rng(derive_seed(params.seed, self.dim))
        self.width = params.bucket_width_factor * params.r
        self.projections = rng.standard_normal((params.L, params.K, self.dim))
        self.offsets = rng.uniform(0, self.width, (params.L, params.K))
        self._salt = np.uint64(derive_seed(params.seed, self.dim, 1))

    def __repr__(self):
        return (f'<{self.__class__.__name__} L={self.params.L} '
                f'K={self.params.K} r={self.params.r:g} d={self.dim}>')

    def _coords(self, points):
        if isinstance(points, PointSet):
            coords = points.coords
        elif isinstance(points, Point):
            coords = np.asarray(points.coords, dtype=float)[np.newaxis]
        else:
            coords = np.atleast_2d(np.asarray(points, dtype=float))
        if coords.shape[1] != self.dim:
            raise DimensionMismatch(
                f'Family hashes {self.dim}-d points; got {coords.shape[1]}')
        return coords

    def cells(self, ell, points):
        'The (n, K) integer cell coordinates under function ``ell``'
        coords = self._coords(points)
        projected = coords @ self.projections[ell].T + self.offsets[ell]
        return np.floor(projected / self.width).astype(np.int64)

    def hash_points(self, ell, points):
        '''
        Bucket ids of ``points`` under function ``ell``

        The K-tuple of cells is folded into one 64-bit word.

        Returns
        -------
        np.ndarray of uint64
        '''
        if not 0 <= ell < self.params.L:
            raise InvalidParams(f'Function index {ell} outside of '
                                f'[0, {self.params.L})')
        cells = self.cells(ell, points)
        state = np.full(len(cells), self._salt, dtype=np.uint64)
        for column in cells.T:
            state = _mix(state, np.ascontiguousarray(column).view(np.uint64))
        return state

    def hash(self, ell, point):
        'Bucket id of a single point under function ``ell``'
        return int(self.hash_points(ell, point)[0])


def build_family(params, dim):
    'Build the seeded family described by ``params`` for ``dim``-d points'
    return LshFamily(params, dim)


def measure_collision_rate(family, distance, trials, seed=0):
    '''
    Monte-Carlo collision rates for pairs at a fixed distance

    Parameters
    ----------
    family : LshFamily
    distance : float
    trials : int
        Number of random pairs
    seed : int, optional

    Returns
    -------
    per_function : float
        Fraction of (pair, function) combinations that collide
    any_function : float
        Fraction of pairs colliding under at least one function
    '''
    rng = make_rng(seed, trials)
    span = 100 * family.width
    x = rng.uniform(-span, span, (trials, family.dim))
    direction = rng.standard_normal((trials, family.dim))
    direction /= np.linalg.norm(direction, axis=1)[:, np.newaxis]
    y = x + distance * direction

    hits = np.zeros((family.params.L, trials), dtype=bool)
    for ell in range(family.params.L):
        hits[ell] = family.hash_points(ell, x) == family.hash_points(ell, y)
    return float(hits.mean()), float(hits.any(axis=0).mean())


@dataclasses.dataclass
class HubAssignment:
    '''
    close(q) for every non-hub point q, as found by `nearest_hub_search`

    Arrays are aligned and ordered by point id.

    Attributes
    ----------
    point_ids : np.ndarray
    hub_ids : np.ndarray
    trial : np.ndarray
        The trial i that produced the hub
    guess : np.ndarray
        The radius guess index j (the radius is ``2 ** j``)
    distances : np.ndarray
        d(q, close(q))
    failed : bool
    unresolved_ids : np.ndarray
        Points left without a hub (only when failures are tolerated)
    truncated_buckets : int
        Buckets in which hubs beyond ``max_hubs_per_bucket`` were dropped
    max_hubs_kept : int
        Largest number of hubs retained in any bucket
    '''
    point_ids: np.ndarray
    hub_ids: np.ndarray
    trial: np.ndarray
    guess: np.ndarray
    distances: np.ndarray
    failed: bool = False
    unresolved_ids: np.ndarray = dataclasses.field(
        default_factory=lambda: np.zeros(0, dtype=np.int64))
    truncated_buckets: int = 0
    max_hubs_kept: int = 0

    def __len__(self):
        return len(self.point_ids)

    @property
    def radii(self):
        'The radius guess at which each point was assigned'
        return 2.0 ** self.guess

    def as_dict(self):
        'point id -> hub id'
        return dict(zip(self.point_ids.tolist(), self.hub_ids.tolist()))

    def close(self, point_id):
        'The hub assigned to ``point_id``'
        idx = np.searchsorted(self.point_ids, point_id)
        if idx >= len(self.point_ids) or self.point_ids[idx] != point_id:
            raise KeyError(point_id)
        return int(self.hub_ids[idx])


def lane_dtype(dim):
    'Record layout of the (f(q), hub-flag, q) tuples sorted by a search lane'
    return np.dtype([
        ('ell', np.int64),
        ('bucket', np.uint64),
        ('non_hub', np.int64),
        ('pos', np.int64),
        ('hub_rank', np.int64),
        ('coords', np.float64, (dim,)),
    ])


def _lane_records(coords, query_pos, hub_pos, family):
    'Hash queries and hubs under every function of ``family``'
    members = np.concatenate([hub_pos, query_pos])
    non_hub = np.concatenate([np.zeros(len(hub_pos), dtype=np.int64),
                              np.ones(len(query_pos), dtype=np.int64)])
    L = family.params.L
    records = np.zeros(L * len(members), dtype=lane_dtype(coords.shape[1]))
    for ell in range(L):
        block = slice(ell * len(members), (ell + 1) * len(members))
        records['ell'][block] = ell
        records['bucket'][block] = family.hash_points(ell, coords[members])
        records['non_hub'][block] = non_hub
        records['pos'][block] = members
        records['coords'][block] = coords[members]
    return records


_LANE_ORDER = ['ell', 'bucket', 'non_hub', 'pos']


def _rank_hubs(records):
    'hub_rank: running hub count within each (ell, bucket) segment'
    records['hub_rank'] = segmented_cumsum(
        (records['non_hub'] == 0).astype(np.int64),
        [records['ell'], records['bucket']])


def _resolve_lane(records, max_hubs, threshold):
    '''
    Match every query record against the retained hubs of its bucket

    ``records`` must be sorted by (ell, bucket, non_hub, pos) with
    ``hub_rank`` filled in.

    Returns
    -------
    query_pos, hub_pos, distance : np.ndarray
        One entry per query point matched under some function: the closest
        retained hub within ``threshold`` over all functions (ties to the
        lowest ell)
    truncated : int
    max_kept : int
    '''
    n = len(records)
    empty = np.zeros(0, dtype=np.int64)
    if not n:
        return empty, empty, np.zeros(0), 0, 0

    starts = segment_starts([records['ell'], records['bucket']], n)
    segment = np.cumsum(starts) - 1
    first = np.flatnonzero(starts)
    is_hub = records['non_hub'] == 0
    hub_count = np.bincount(segment, weights=is_hub,
                            minlength=len(first)).astype(np.int64)
    kept = np.minimum(hub_count, max_hubs)
    truncated = int(np.count_nonzero(hub_count > max_hubs))
    max_kept = int(kept.max(initial=0))

    queries = np.flatnonzero(~is_hub)
    queries = queries[kept[segment[queries]] > 0]
    if not len(queries):
        return empty, empty, np.zeros(0), truncated, max_kept

    slots = np.arange(max_hubs)
    seg = segment[queries]
    candidates = first[seg][:, np.newaxis] + slots[np.newaxis, :]
    valid = slots[np.newaxis, :] < kept[seg][:, np.newaxis]
    candidates = np.where(valid, candidates, first[seg][:, np.newaxis])
    delta = (records['coords'][candidates]
             - records['coords'][queries][:, np.newaxis, :])
    distances = np.sqrt(np.sum(delta ** 2, axis=2))
    distances = np.where(valid & (distances <= threshold + TOLERANCE),
                         distances, np.inf)

    column = np.argmin(distances, axis=1)
    rows = np.flatnonzero(np.isfinite(distances[np.arange(len(queries)),
                                                column]))
    column = column[rows]
    query_pos = records['pos'][queries[rows]]
    hub_pos = records['pos'][candidates[rows, column]]
    distance = distances[rows, column]
    ell = records['ell'][queries[rows]]

    # Closest match per query point
    order = np.lexsort((ell, distance, query_pos))
    query_pos, hub_pos, distance = (query_pos[order], hub_pos[order],
                                    distance[order])
    _, unique = np.unique(query_pos, return_index=True)
    return (query_pos[unique], hub_pos[unique], distance[unique],
            truncated, max_kept)


def _search_lane(coords, query_pos, hub_pos, family, section=None):
    '''
    One (trial, radius guess) lane of the search

    With a parallel ``section`` the tuples are loaded on a child cluster and
    sorted, ranked, and shared there; otherwise the same steps run
    in-process.
    '''
    params = family.params
    records = _lane_records(coords, query_pos, hub_pos, family)
    threshold = params.c_rho * params.r

    if section is None:
        records = records[np.lexsort([records[key]
                                      for key in _LANE_ORDER[::-1]])]
        _rank_hubs(records)
        return _resolve_lane(records, params.max_hubs_per_bucket, threshold)

    headroom = params.max_hubs_per_bucket * record_words(records.dtype)
    lane = section.spawn(records, headroom_words=headroom)
    lane.sort_distributed(_LANE_ORDER)
    lane.prefix_sum(lambda rec: (rec['non_hub'] == 0).astype(np.int64),
                    field='hub_rank', segment=['ell', 'bucket'])
    kept = ((lane.records['non_hub'] == 0) &
            (lane.records['hub_rank'] <= params.max_hubs_per_bucket))
    lane.share_segment_heads(['ell', 'bucket'], kept,
                             limit=params.max_hubs_per_bucket, name='hubs')
    result = _resolve_lane(lane.records, params.max_hubs_per_bucket,
                           threshold)
    # Per-point minimum over the functions
    lane.sort_distributed(['non_hub', 'pos', 'ell'])
    lane.clear_side()
    return result


def nearest_hub_search(Q, hub_ids, params, *, delta=None, cluster=None,
                       raise_on_failure=True):
    '''
    Assign every point of ``Q`` that is not a hub to a nearby hub

    Trials ``i = 0 .. I-1`` and radius guesses ``r = 2 ** j`` for
    ``j = 0 .. ceil(log2 delta)`` are evaluated in order.  A point keeps the
    hub found at its smallest successful guess within the lowest trial that
    found one: the closest retained hub under any function of that guess,
    ties going to the lowest function index.
    Points resolved by an earlier (trial, guess) are not re-hashed, which
    yields exactly the result of evaluating the whole grid.

    Parameters
    ----------
    Q : PointSet
    hub_ids : array-like
        Ids of the hubs H; a nonempty subset of ``Q``
    params : LshParams
        Template parameters; ``r`` is replaced by every guess and the seed
        is the base for per-(trial, guess) families
    delta : float, optional
        Upper bound on the diameter of ``Q``; defaults to its diameter
    cluster : MpcCluster, optional
        Run every lane on its own child cluster of ``cluster``
    raise_on_failure : bool, optional
        Raise `SearchFailed` if some point has no hub after every trial;
        otherwise return an assignment flagged ``failed``

    Returns
    -------
    HubAssignment
    '''
    hub_ids = np.unique(np.asarray(hub_ids, dtype=np.int64))
    if not len(hub_ids):
        raise EmptySet('Nearest-hub search needs at least one hub')
    inside = Q.contains(hub_ids)
    if not np.all(inside):
        raise HubNotInSet(f'Hubs not in the point set: '
                          f'{hub_ids[~inside][:10].tolist()}')

    hub_pos = np.sort(Q.positions_of(hub_ids))
    is_hub = np.zeros(Q.n, dtype=bool)
    is_hub[hub_pos] = True
    unresolved = np.flatnonzero(~is_hub)

    if delta is None:
        delta = Q.delta_diameter
    guesses = max(0, math.ceil(math.log2(delta))) if delta > 1 else 0

    found = {key: [] for key in ('pos', 'hub', 'dist', 'trial', 'guess')}
    truncated = 0
    max_kept = 0

    context = (cluster.parallel() if cluster is not None
               else contextlib.nullcontext())
    with context as section:
        for trial in range(params.I):
            for guess in range(guesses + 1):
                if not len(unresolved):
                    break
                family = build_family(
                    params.at_radius(2.0 ** guess,
                                     seed=derive_seed(params.seed, trial,
                                                      guess)),
                    Q.dim)
                (query_pos, matched_hub, distance, lane_truncated,
                 lane_kept) = _search_lane(Q.coords, unresolved, hub_pos,
                                           family, section)
                truncated += lane_truncated
                max_kept = max(max_kept, lane_kept)
                found['pos'].append(query_pos)
                found['hub'].append(matched_hub)
                found['dist'].append(distance)
                found['trial'].append(np.full(len(query_pos), trial))
                found['guess'].append(np.full(len(query_pos), guess))
                unresolved = np.setdiff1d(unresolved, query_pos,
                                          assume_unique=True)
                logger.debug('Trial %d, guess %d: %d matched, %d left',
                             trial, guess, len(query_pos), len(unresolved))
            if not len(unresolved):
                break

    def gather(key, dtype):
        if not found[key]:
            return np.zeros(0, dtype=dtype)
        return np.concatenate(found[key]).astype(dtype)

    positions = gather('pos', np.int64)
    order = np.argsort(Q.ids[positions], kind='stable')
    assignment = HubAssignment(
        point_ids=Q.ids[positions][order],
        hub_ids=Q.ids[gather('hub', np.int64)][order],
        trial=gather('trial', np.int64)[order],
        guess=gather('guess', np.int64)[order],
        distances=gather('dist', float)[order],
        failed=bool(len(unresolved)),
        unresolved_ids=np.sort(Q.ids[unresolved]),
        truncated_buckets=truncated,
        max_hubs_kept=max_kept,
    )

    if assignment.failed:
        message = (f'{len(unresolved)} point(s) without a hub after '
                   f'{params.I} trial(s)')
        if raise_on_failure:
            raise SearchFailed(message, stage='nearest_hub_search')
        logger.warning('Nearest-hub search: %s', message)
    return assignment
