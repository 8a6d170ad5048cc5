'''
Farthest-point greedy and sample-and-solve.

`sample_and_solve` samples hubs, sends every other point to a nearby hub,
splits bags that do not fit on one machine, and runs `greedy` on every bag
(or part) with the hub as its seed.  The union of the greedy outputs covers
the input within ``4 * c_rho * r``.
'''
import dataclasses
import logging
import math
from typing import Optional

import numpy as np

from .context import point_records
from .exceptions import (CertificateViolation, EmptySet, HubNotInSet,
                         InvalidParams, SampleFailed)
from .geometry import TOLERANCE, PointSet, cost
from .lsh import HubAssignment, nearest_hub_search
from .mpc import segment_starts, segmented_cumsum
from .utils import derive_seed, make_rng


logger = logging.getLogger(__name__)


@dataclasses.dataclass
class CenterSet:
    '''
    Centers chosen from a point set

    Attributes
    ----------
    points : PointSet
        The centers (a subset of the input)
    source_radius : float
        The radius r they were computed at
    hub_ids : np.ndarray, optional
        Hubs sampled by sample-and-solve
    hub_assignment : HubAssignment, optional
    cost_bound : float
        Certified upper bound on the cost of the input against the centers
    selection : tuple
        Greedy selection order (ids)
    trace : list
        Stage records of the refinement that produced the centers
    '''
    points: PointSet
    source_radius: float
    hub_ids: Optional[np.ndarray] = None
    hub_assignment: Optional[HubAssignment] = None
    cost_bound: float = math.inf
    selection: tuple = ()
    trace: list = dataclasses.field(default_factory=list)

    def __len__(self):
        return self.points.n

    def __repr__(self):
        return (f'<{self.__class__.__name__} centers={len(self)} '
                f'r={self.source_radius:g} bound={self.cost_bound:g}>')

    @property
    def ids(self):
        return self.points.ids


@dataclasses.dataclass
class Bag:
    '''
    The points assigned to one hub

    Attributes
    ----------
    hub : int
        Id of the hub
    members : PointSet
        Every point of the bag, the hub included
    split_parts : list of PointSet, optional
        Set by `split_bag`; each part contains the hub
    '''
    hub: int
    members: PointSet
    split_parts: Optional[list] = None

    def __post_init__(self):
        if not self.members.contains([self.hub])[0]:
            raise HubNotInSet(f'Hub {self.hub} is not a bag member')

    def __len__(self):
        return self.members.n

    @property
    def parts(self):
        'The split parts, or the whole bag'
        return self.split_parts if self.split_parts is not None \
            else [self.members]


def greedy_threshold(r, c_rho):
    '4 * c_rho * r'
    return 4 * c_rho * r


def greedy(R, h, r, *, c_rho):
    '''
    Farthest-point greedy seeded with ``h``

    Keep adding the point farthest from the chosen set while it is more than
    ``4 * c_rho * r`` away.  Ties go to the lowest id.

    Parameters
    ----------
    R : PointSet
    h : int
        Id of the seed; must be a member of ``R``
    r : float
    c_rho : float

    Returns
    -------
    CenterSet

    Raises
    ------
    HubNotInSet
    '''
    if r <= 0:
        raise InvalidParams(f'r must be positive; got {r}')
    h = int(h)
    if not R.contains([h])[0]:
        raise HubNotInSet(f'Seed {h} is not a member of the point set')

    threshold = greedy_threshold(r, c_rho)
    chosen = [int(R.positions_of([h])[0])]
    distance = np.sqrt(np.sum((R.coords - R.coords[chosen[0]]) ** 2, axis=1))
    while True:
        farthest = distance.max()
        if farthest <= threshold:
            break
        ties = np.flatnonzero(distance == farthest)
        position = int(ties[np.argmin(R.ids[ties])])
        chosen.append(position)
        distance = np.minimum(
            distance,
            np.sqrt(np.sum((R.coords - R.coords[position]) ** 2, axis=1)))

    return CenterSet(points=R.take(chosen), source_radius=r,
                     cost_bound=threshold,
                     selection=tuple(int(R.ids[p]) for p in chosen))


def split_bag(bag, capacity):
    '''
    Split a bag that does not fit on one machine

    Non-hub members, in id order, are cut into chunks of ``capacity - 1``;
    every part is a chunk plus the hub.

    Parameters
    ----------
    bag : Bag
    capacity : int
        Points per machine, at least 2

    Returns
    -------
    Bag
        With ``split_parts`` set
    '''
    if capacity < 2:
        raise InvalidParams('Splitting needs room for the hub and one more')
    if len(bag) <= capacity:
        raise InvalidParams(f'Bag of {len(bag)} fits into {capacity}; '
                            f'nothing to split')
    members = bag.members
    hub_pos = members.positions_of([bag.hub])
    others = np.setdiff1d(np.arange(members.n), hub_pos)
    others = others[np.argsort(members.ids[others], kind='stable')]
    chunk = capacity - 1
    parts = [members.take(np.concatenate([hub_pos, others[i:i + chunk]]))
             for i in range(0, len(others), chunk)]
    return dataclasses.replace(bag, split_parts=parts)


def part_index(records, capacity):
    '''
    The split part of every point record

    ``records`` must be sorted by (hub, non_hub, id).  The hub is in part 0
    (and replicated into every other part).
    '''
    rank = segmented_cumsum(np.ones(len(records), dtype=np.int64),
                            [records['hub']])
    return _part_from_rank(rank, records['non_hub'], capacity)


def _part_from_rank(rank, non_hub, capacity):
    'Part of the point at 1-based ``rank`` within its bag'
    return np.where(non_hub == 0, 0, (rank - 2) // (capacity - 1))


def bag_destinations(records, capacity):
    '''
    Machine of every point record once bags are packed

    Parts of split bags get a machine each; whole bags are packed in order,
    starting a new machine whenever the next bag does not fit.
    '''
    n = len(records)
    destination = np.zeros(n, dtype=np.int64)
    if not n:
        return destination
    starts = np.flatnonzero(segment_starts([records['hub'],
                                            records['part']], n))
    ends = np.append(starts[1:], n)
    machine = -1
    used = capacity
    for begin, end in zip(starts, ends):
        size = end - begin
        split = records['part'][begin] > 0 or (
            end < n and records['hub'][end] == records['hub'][begin])
        if split:
            machine += 1
            used = capacity
        elif used + size > capacity:
            machine += 1
            used = size
        else:
            used += size
        destination[begin:end] = machine
    return destination


def coverage_radius(Q, S):
    'max over q in Q of d(q, S)'
    return cost(Q, S.points if isinstance(S, CenterSet) else S)


def assert_coverage(Q, S, bound, stage=''):
    '''
    Check ``cost(Q, S) <= bound``

    Raises
    ------
    CertificateViolation
    '''
    measured = coverage_radius(Q, S)
    if measured > bound + TOLERANCE:
        raise CertificateViolation(
            f'{stage or "coverage"}: cost {measured:.6g} exceeds the '
            f'certified {bound:.6g}')
    return measured


def _check_cluster(cluster, Q):
    held = np.sort(cluster.records['id'])
    if len(held) != Q.n or not np.array_equal(held, np.sort(Q.ids)):
        raise InvalidParams('The cluster does not hold the input point set')


def sample_and_solve(Q, p, r, *, context, seed=None):
    '''
    Sample hubs with probability ``p``, bag points by nearest hub, and solve
    every bag with `greedy`

    If ``Q`` fits on one machine this is a single greedy call seeded with
    its lowest-id point.

    Parameters
    ----------
    Q : PointSet
    p : float
        Hub sampling probability, 0 < p <= 1
    r : float
    context : PipelineContext
        When it carries a cluster, that cluster must hold ``Q``; it holds
        the centers afterwards
    seed : int, optional
        Defaults to the context seed

    Returns
    -------
    CenterSet

    Raises
    ------
    SampleFailed
        If no hub was sampled
    SearchFailed
        Propagated from the nearest-hub search
    '''
    if not 0 < p <= 1:
        raise InvalidParams(f'p must be in (0, 1]; got {p}')
    if r <= 0:
        raise InvalidParams(f'r must be positive; got {r}')
    if not Q.n:
        raise EmptySet('Sample-and-solve needs at least one point')

    seed = context.seed if seed is None else seed
    c_rho = context.c_rho
    capacity = context.capacity
    cluster = context.cluster
    bound = greedy_threshold(r, c_rho)
    if cluster is not None:
        _check_cluster(cluster, Q)

    if Q.n <= capacity:
        if cluster is not None:
            cluster.route(np.zeros(len(cluster.records), dtype=np.int64))
        result = greedy(Q, int(Q.ids.min()), r, c_rho=c_rho)
        if cluster is not None:
            cluster.filter(np.isin(cluster.records['id'], result.ids))
        assert_coverage(Q, result, bound, 'greedy')
        return result

    rng = make_rng(seed, 0)
    hub_mask = rng.random(Q.n) < p
    if not hub_mask.any():
        raise SampleFailed(f'no hub sampled from {Q.n} points at p={p:.3g}',
                           stage='sample_and_solve')
    hub_ids = Q.ids[hub_mask]

    lsh = context.lsh.at_radius(context.lsh.r, seed=derive_seed(seed, 1))
    assignment = nearest_hub_search(Q, hub_ids, lsh,
                                    delta=context.delta_diameter,
                                    cluster=cluster)

    hub_of = Q.ids.copy()
    if len(assignment):
        hub_of[Q.positions_of(assignment.point_ids)] = assignment.hub_ids

    if cluster is None:
        records = point_records(Q)
        records['hub'] = hub_of
        records['non_hub'] = ~hub_mask
        records = records[np.lexsort((records['id'], records['non_hub'],
                                      records['hub']))]
        records['part'] = part_index(records, capacity)
    else:
        def annotate(records):
            positions = Q.positions_of(records['id'])
            records['hub'] = hub_of[positions]
            records['non_hub'] = ~hub_mask[positions]
            return records

        cluster.annotate(annotate)
        cluster.sort_distributed(['hub', 'non_hub', 'id'])
        cluster.prefix_sum(lambda rec: np.ones(len(rec), dtype=np.int64),
                           field='part', segment='hub')
        cluster.annotate(lambda rec: _with_parts(rec, capacity))
        # Packing the parts onto machines is a prefix sum over part sizes
        cluster.charge('prefix_sum')
        cluster.route(bag_destinations(cluster.records, capacity))
        cluster.share_segment_heads('hub', cluster.records['non_hub'] == 0,
                                    limit=1, name='bag_hub')
        records = cluster.records

    centers, bags, splits = _solve_bags(Q, records, r, c_rho)
    if cluster is not None:
        cluster.filter(np.isin(cluster.records['id'], centers))
        cluster.clear_side('bag_hub')

    logger.debug('Sample-and-solve: |Q|=%d, p=%.3g, %d hubs, %d bags '
                 '(%d split), %d centers', Q.n, p, len(hub_ids), bags,
                 splits, len(centers))
    result = CenterSet(points=Q.select(centers), source_radius=r,
                       hub_ids=np.sort(hub_ids), hub_assignment=assignment,
                       cost_bound=bound)
    assert_coverage(Q, result, bound, 'sample_and_solve')
    return result


def _with_parts(records, capacity):
    records['part'] = _part_from_rank(records['part'], records['non_hub'],
                                      capacity)
    return records


def _solve_bags(Q, records, r, c_rho):
    '''
    Run greedy on every part of every bag

    ``records`` are sorted by (hub, non_hub, id) with ``part`` filled in.

    Returns
    -------
    centers : np.ndarray
        Ids of the union of the greedy outputs
    bags, splits : int
    '''
    n = len(records)
    starts = np.flatnonzero(segment_starts([records['hub']], n))
    ends = np.append(starts[1:], n)
    centers = [records['hub'][starts]]
    splits = 0
    for begin, end in zip(starts, ends):
        if end - begin == 1:
            continue
        hub = int(records['hub'][begin])
        parts = records['part'][begin:end]
        members = records['id'][begin:end]
        if parts[-1] > 0:
            splits += 1
        for part in range(int(parts[-1]) + 1):
            ids = members[parts == part]
            if part > 0:
                ids = np.append(ids, hub)
            if len(ids) == 1:
                continue
            result = greedy(Q.select(ids), hub, r, c_rho=c_rho)
            centers.append(result.ids)
    return np.unique(np.concatenate(centers)), len(starts), splits
