'''
A round-synchronous simulation of a low-local-space MPC cluster.

Machines hold numpy structured records.  The cluster keeps them as one
global array in machine order plus a per-machine record count, so that the
O(1)-round primitives (sort, prefix sum, broadcast) can be evaluated with
vectorized numpy while the word budget of every machine is still checked at
every round boundary.  A record costs one word per scalar slot of its dtype.
'''
import collections
import concurrent.futures
import contextlib
import dataclasses
import json
import logging
import math
from typing import Optional

import numpy as np

from .exceptions import (CapacityExceeded, CommViolation, InvalidParams,
                         SpaceViolation)
from .utils import derive_seed


logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class MpcConfig:
    '''
    Configuration of a simulated cluster

    Parameters
    ----------
    n : int
        Input size the local space is derived from
    delta : float
        Local-space exponent, 0 < delta < 1
    rho : float
        Global-space exponent, rho > 0
    local_space_factor : float
        c_S in S = ceil(c_S * n ** delta)
    local_space_words : int, optional
        Explicit S, overriding the formula
    min_local_words : int
        Floor applied to the formula
    machine_count : int, optional
        M; by default the smallest count that holds the payload
    seed : int
        Randomness seed
    primitive_round_cost : int
        Rounds charged per sort / prefix-sum / broadcast invocation
    max_workers : int
        Threads used to evaluate per-machine programs
    '''
    n: int
    delta: float = 0.5
    rho: float = 0.5
    local_space_factor: float = 4.0
    local_space_words: Optional[int] = None
    min_local_words: int = 1
    machine_count: Optional[int] = None
    seed: int = 0
    primitive_round_cost: int = 1
    max_workers: int = 1

    def __post_init__(self):
        if self.n < 0:
            raise InvalidParams(f'n must be nonnegative; got {self.n}')
        if not 0 < self.delta < 1:
            raise InvalidParams(f'delta must be in (0, 1); got {self.delta}')
        if self.rho <= 0:
            raise InvalidParams(f'rho must be positive; got {self.rho}')
        if self.local_space_factor <= 0:
            raise InvalidParams('local_space_factor must be positive')
        if self.primitive_round_cost < 0:
            raise InvalidParams('primitive_round_cost must be nonnegative')
        if self.max_workers < 1:
            raise InvalidParams('max_workers must be at least 1')
        if self.machine_count is not None and self.machine_count < 1:
            raise InvalidParams('machine_count must be at least 1')

        if self.local_space_words is None:
            words = math.ceil(self.local_space_factor
                              * max(self.n, 1) ** self.delta)
            object.__setattr__(self, 'local_space_words',
                               max(int(self.min_local_words), words))
        if self.local_space_words < 1:
            raise InvalidParams('local_space_words must be at least 1')


@dataclasses.dataclass(frozen=True)
class RoundStats:
    'What one operation charged'
    rounds_charged: int
    words_sent_max: int = 0
    words_received_max: int = 0
    kind: str = 'round'


def record_words(dtype):
    'Words used by one record of ``dtype``: one per scalar slot'
    dtype = np.dtype(dtype)
    if dtype.names is None:
        return max(1, int(np.prod(dtype.shape, dtype=np.int64)))
    return sum(max(1, int(np.prod(dtype[name].shape, dtype=np.int64)))
               for name in dtype.names)


def as_records(payload):
    '''
    Coerce a payload to a structured record array

    Structured arrays pass through; anything else becomes records with a
    single ``value`` field (one row of a 2-D array per record).
    '''
    array = np.asarray(payload)
    if array.dtype.names is not None:
        return np.ascontiguousarray(array.reshape(-1))
    if array.ndim <= 1:
        array = array.reshape(-1)
        records = np.zeros(len(array), dtype=[('value', array.dtype)])
    else:
        records = np.zeros(len(array),
                           dtype=[('value', array.dtype, array.shape[1:])])
    records['value'] = array
    return records


def segment_starts(keys, n):
    '''
    Boolean mask of segment starts for records in global order

    Parameters
    ----------
    keys : sequence of np.ndarray
        A new segment starts wherever any key changes
    n : int
        Number of records
    '''
    change = np.zeros(n, dtype=bool)
    if n:
        change[0] = True
    for key in keys:
        key = np.asarray(key)
        if key.ndim > 1:
            change[1:] |= np.any(key[1:] != key[:-1],
                                 axis=tuple(range(1, key.ndim)))
        else:
            change[1:] |= key[1:] != key[:-1]
    return change


def segmented_cumsum(values, keys=()):
    'Inclusive prefix sums of ``values`` restarting at each segment start'
    values = np.asarray(values)
    total = np.cumsum(values)
    if not len(values) or not keys:
        return total
    starts = segment_starts(keys, len(values))
    segment = np.cumsum(starts) - 1
    first = np.flatnonzero(starts)
    base = total[first] - values[first]
    return total - base[segment]


def _lexsort_keys(records, key):
    if callable(key):
        key = key(records)
        return [np.asarray(key)]
    if isinstance(key, str):
        key = [key]
    arrays = []
    for item in key:
        arrays.append(records[item] if isinstance(item, str)
                      else np.asarray(item))
    return arrays


class MpcCluster:
    '''
    A simulated MPC cluster

    Use `create_cluster` to build one.  The cluster is driven by one caller
    at a time; independent child clusters (see `parallel`) may be driven
    from different threads.

    Attributes
    ----------
    records : np.ndarray
        All records, in machine order
    counts : np.ndarray
        Records held by each machine
    side : list of dict
        Per-machine side data (broadcast values, shared segment heads);
        counts against the local space
    round_counter : int
    peak_local_words : int
    peak_global_words : int
    primitive_invocations : collections.Counter
    ledger : list of RoundStats
        Every charged operation; ``round_counter`` is the sum of their
        ``rounds_charged``
    '''

    def __init__(self, config, records, counts):
        self.config = config
        self.records = records
        self.counts = np.asarray(counts, dtype=np.int64)
        self.side = [dict() for _ in range(len(self.counts))]
        self.round_counter = 0
        self.peak_local_words = 0
        self.peak_global_words = 0
        self.primitive_invocations = collections.Counter()
        self.ledger = []
        self._update_peaks()

    def __repr__(self):
        return (f'<{self.__class__.__name__} M={self.machine_count} '
                f'S={self.local_space_words} records={len(self.records)} '
                f'rounds={self.round_counter}>')

    @property
    def machine_count(self):
        'M'
        return len(self.counts)

    @property
    def local_space_words(self):
        'S'
        return self.config.local_space_words

    @property
    def record_words(self):
        'Words per record of the current dtype'
        return record_words(self.records.dtype)

    @property
    def offsets(self):
        'Start offset of every machine in ``records`` (length M + 1)'
        return np.concatenate([[0], np.cumsum(self.counts)])

    @property
    def global_words(self):
        'Words currently stored across all machines'
        return int(self.machine_words().sum())

    def machine(self, machine_id):
        'Read-only view of the records held by one machine'
        offsets = self.offsets
        view = self.records[offsets[machine_id]:offsets[machine_id + 1]]
        view.flags.writeable = False
        return view

    @property
    def machines(self):
        'Read-only views of every machine, in order'
        return [self.machine(m) for m in range(self.machine_count)]

    def machine_ids(self):
        'The machine holding each record'
        return np.repeat(np.arange(self.machine_count), self.counts)

    def _side_words(self):
        return np.array([sum(record_words(value.dtype) * len(value)
                             for value in side.values())
                         for side in self.side], dtype=np.int64)

    def machine_words(self, counts=None, dtype=None):
        'Words stored on each machine (optionally for a proposed layout)'
        counts = self.counts if counts is None else counts
        dtype = self.records.dtype if dtype is None else dtype
        return counts * record_words(dtype) + self._side_words()

    def _check_storage(self, words, operation):
        if not len(words):
            return
        worst = int(np.argmax(words))
        if words[worst] > self.local_space_words:
            raise SpaceViolation(worst, int(words[worst]),
                                 self.local_space_words, operation)

    def _update_peaks(self):
        words = self.machine_words()
        if len(words):
            self.peak_local_words = max(self.peak_local_words,
                                        int(words.max()))
        self.peak_global_words = max(self.peak_global_words,
                                     int(words.sum()))

    def _charge(self, stats, primitive=None):
        self.round_counter += stats.rounds_charged
        self.ledger.append(stats)
        if primitive is not None:
            self.primitive_invocations[primitive] += 1
        self._update_peaks()
        logger.debug('%s: charged %d round(s); total %d', stats.kind,
                     stats.rounds_charged, self.round_counter)
        return stats

    def _primitive_stats(self, kind):
        words = self.machine_words()
        peak = int(words.max()) if len(words) else 0
        return RoundStats(self.config.primitive_round_cost, peak, peak, kind)

    def charge(self, kind):
        '''
        Charge one primitive invocation without moving data

        Used for aggregation steps whose inputs the driver already holds.
        '''
        return self._charge(self._primitive_stats(kind), primitive=kind)

    def _rng(self, machine_id):
        return np.random.default_rng(
            derive_seed(self.config.seed, self.round_counter, machine_id))

    def run_round(self, program):
        '''
        Run one synchronous round

        Parameters
        ----------
        program : callable
            ``program(machine_id, records, rng) -> (keep, outbox)``, where
            ``keep`` is the record array the machine retains and ``outbox``
            maps destination machine to a record array.  Received records
            are appended after ``keep`` in order of sending machine.

        Returns
        -------
        RoundStats

        Raises
        ------
        CommViolation
            If a machine sends or receives more than S words
        SpaceViolation
            If a machine would store more than S words; nothing is mutated
        '''
        machines = range(self.machine_count)

        def evaluate(machine_id):
            return program(machine_id, self.machine(machine_id),
                           self._rng(machine_id))

        if self.config.max_workers > 1:
            with concurrent.futures.ThreadPoolExecutor(
                    max_workers=self.config.max_workers) as pool:
                outputs = list(pool.map(evaluate, machines))
        else:
            outputs = [evaluate(m) for m in machines]

        dtype = None
        for keep, outbox in outputs:
            for array in [keep, *outbox.values()]:
                array = np.asarray(array)
                if len(array) and dtype is None:
                    dtype = array.dtype
                elif len(array) and array.dtype != dtype:
                    raise InvalidParams('All records of a round must share '
                                        'one dtype')
        if dtype is None:
            dtype = self.records.dtype
        words_per_record = record_words(dtype)

        sent = np.zeros(self.machine_count, dtype=np.int64)
        received = np.zeros(self.machine_count, dtype=np.int64)
        inbox = [[] for _ in machines]
        for source, (keep, outbox) in enumerate(outputs):
            for dest, array in sorted(outbox.items()):
                if not 0 <= dest < self.machine_count:
                    raise InvalidParams(f'No such machine: {dest}')
                words = len(array) * words_per_record
                sent[source] += words
                received[dest] += words
                inbox[dest].append(np.asarray(array, dtype=dtype))

        limit = self.local_space_words
        for counter, direction in ((sent, 'send'), (received, 'receive')):
            if len(counter) and counter.max() > limit:
                worst = int(np.argmax(counter))
                raise CommViolation(worst, int(counter[worst]), limit,
                                    direction)

        new_counts = np.array(
            [len(keep) + sum(len(array) for array in inbox[m])
             for m, (keep, _) in enumerate(outputs)], dtype=np.int64)
        self._check_storage(self.machine_words(new_counts, dtype), 'round')

        parts = []
        for m, (keep, _) in enumerate(outputs):
            parts.append(np.asarray(keep, dtype=dtype))
            parts.extend(inbox[m])
        self.records = (np.concatenate(parts) if parts
                        else np.zeros(0, dtype=dtype))
        self.counts = new_counts
        return self._charge(RoundStats(1, int(sent.max(initial=0)),
                                       int(received.max(initial=0))))

    def route(self, destinations):
        '''
        A round in which every record is sent to one destination machine

        Records keep their relative order within each destination.

        Parameters
        ----------
        destinations : array-like of int
            One destination per record

        Returns
        -------
        RoundStats
        '''
        destinations = np.asarray(destinations, dtype=np.int64)
        if len(destinations) != len(self.records):
            raise InvalidParams('One destination per record is required')
        if len(destinations) and (destinations.min() < 0 or
                                  destinations.max() >= self.machine_count):
            raise InvalidParams('Destination out of range')

        sources = self.machine_ids()
        moving = sources != destinations
        words = self.record_words
        sent = np.bincount(sources[moving], minlength=self.machine_count)
        received = np.bincount(destinations[moving],
                               minlength=self.machine_count)
        limit = self.local_space_words
        for counter, direction in ((sent * words, 'send'),
                                   (received * words, 'receive')):
            if len(counter) and counter.max() > limit:
                worst = int(np.argmax(counter))
                raise CommViolation(worst, int(counter[worst]), limit,
                                    direction)

        new_counts = np.bincount(destinations, minlength=self.machine_count)
        self._check_storage(self.machine_words(new_counts), 'route')

        order = np.argsort(destinations, kind='stable')
        self.records = self.records[order]
        self.counts = new_counts.astype(np.int64)
        return self._charge(RoundStats(1, int((sent * words).max(initial=0)),
                                       int((received * words).max(initial=0))))

    def sort_distributed(self, key):
        '''
        Sort all records globally; machine record counts are preserved

        Parameters
        ----------
        key : str, sequence, or callable
            A field name, a sequence of field names / arrays (most
            significant first), or ``callable(records) -> array``.  Ties keep
            the current global order.
        '''
        keys = _lexsort_keys(self.records, key)
        if len(self.records):
            order = np.lexsort(keys[::-1])
            self.records = self.records[order]
        return self._charge(self._primitive_stats('sort'), primitive='sort')

    def prefix_sum(self, extractor, *, field='prefix', segment=None):
        '''
        Annotate every record with the inclusive prefix sum of a value

        Parameters
        ----------
        extractor : str or callable
            A field name or ``callable(records) -> values``
        field : str
            The field written; appended to the dtype if missing
        segment : str or sequence of str, optional
            Restart the sum whenever these fields change
        '''
        values = (self.records[extractor] if isinstance(extractor, str)
                  else np.asarray(extractor(self.records)))
        if isinstance(segment, str):
            segment = [segment]
        keys = [self.records[name] for name in (segment or ())]
        sums = segmented_cumsum(values, keys)

        if field in (self.records.dtype.names or ()):
            records = self.records.copy()
        else:
            kind = np.int64 if np.issubdtype(sums.dtype, np.integer) \
                else np.float64
            dtype = np.dtype(self.records.dtype.descr + [(field, kind)])
            self._check_storage(self.machine_words(dtype=dtype),
                                'prefix_sum')
            records = np.zeros(len(self.records), dtype=dtype)
            for name in self.records.dtype.names:
                records[name] = self.records[name]
        records[field] = sums
        self.records = records
        return self._charge(self._primitive_stats('prefix_sum'),
                            primitive='prefix_sum')

    def broadcast(self, value, *, name='broadcast'):
        '''
        Give every machine a copy of ``value`` (kept as side data)

        Raises
        ------
        SpaceViolation
            If any machine cannot hold the copy
        '''
        value = as_records(np.atleast_1d(value))
        extra = record_words(value.dtype) * len(value)
        words = self.machine_words() + extra
        for m, side in enumerate(self.side):
            if name in side:
                words[m] -= record_words(side[name].dtype) * len(side[name])
        self._check_storage(words, 'broadcast')
        value.flags.writeable = False
        for side in self.side:
            side[name] = value
        return self._charge(self._primitive_stats('broadcast'),
                            primitive='broadcast')

    def share_segment_heads(self, segment, head_mask, *, limit,
                            name='heads'):
        '''
        Send the head records of each segment to the machines it continues on

        Records are assumed sorted so that the heads of a segment come
        first.  A machine whose first segment started on an earlier machine
        receives up to ``limit`` of that segment's heads.

        Returns
        -------
        RoundStats
        '''
        if isinstance(segment, str):
            segment = [segment]
        n = len(self.records)
        head_mask = np.asarray(head_mask, dtype=bool)
        starts = segment_starts([self.records[f] for f in segment], n)
        seg_id = np.cumsum(starts) - 1
        seg_first = np.flatnonzero(starts)
        offsets = self.offsets

        shared = {}
        for m in range(self.machine_count):
            first = offsets[m]
            if self.counts[m] == 0:
                continue
            begin = seg_first[seg_id[first]]
            if begin == first:
                continue
            candidates = np.arange(begin, first)
            heads = candidates[head_mask[begin:first]][:limit]
            if len(heads):
                shared[m] = self.records[heads]

        words = self.machine_words()
        for m, heads in shared.items():
            words[m] += record_words(heads.dtype) * len(heads)
        self._check_storage(words, 'share_segment_heads')
        for side in self.side:
            side.pop(name, None)
        for m, heads in shared.items():
            heads.flags.writeable = False
            self.side[m][name] = heads
        return self._charge(self._primitive_stats('segment_broadcast'),
                            primitive='segment_broadcast')

    def clear_side(self, name=None):
        'Drop side data (all of it, or one name)'
        for side in self.side:
            if name is None:
                side.clear()
            else:
                side.pop(name, None)

    def annotate(self, fn):
        '''
        Free local computation: rewrite every record in place

        Parameters
        ----------
        fn : callable
            ``fn(records) -> records`` returning the same number of records
        '''
        records = as_records(fn(self.records.copy()))
        if len(records) != len(self.records):
            raise InvalidParams('annotate must preserve the record count')
        self._check_storage(self.machine_words(dtype=records.dtype),
                            'annotate')
        self.records = records
        self._update_peaks()

    def filter(self, mask):
        'Free local computation: drop records where ``mask`` is False'
        mask = np.asarray(mask, dtype=bool)
        if len(mask) != len(self.records):
            raise InvalidParams('One mask entry per record is required')
        self.counts = np.bincount(self.machine_ids()[mask],
                                  minlength=self.machine_count
                                  ).astype(np.int64)
        self.records = self.records[mask]

    @contextlib.contextmanager
    def parallel(self):
        '''
        Run independent sub-computations on disjoint machines

        Yields a `ParallelSection`; on exit the parent is charged the
        maximum number of rounds any child used.
        '''
        section = ParallelSection(self)
        try:
            yield section
        finally:
            section.join()

    def usage(self):
        'The usage report'
        return {
            'rounds': self.round_counter,
            'peak_local_words': self.peak_local_words,
            'peak_global_words': self.peak_global_words,
            'primitive_counts': dict(sorted(
                self.primitive_invocations.items())),
        }

    def to_json(self, **kwargs):
        'The usage report as JSON'
        return json.dumps(self.usage(), sort_keys=True, **kwargs)


class ParallelSection:
    '''
    Child clusters that run concurrently with each other

    Children get their own machines and derived seeds.  Joining charges the
    parent ``max`` of the child round counts, adds the child peak global
    space on top of what the parent holds, and merges primitive counters.
    '''

    def __init__(self, parent):
        self.parent = parent
        self.children = []
        self.joined = False

    def spawn(self, payload, *, headroom_words=0, machine_count=None):
        'Create a child cluster holding ``payload``'
        parent = self.parent
        config = dataclasses.replace(
            parent.config,
            machine_count=machine_count,
            seed=derive_seed(parent.config.seed, parent.round_counter,
                             len(self.children)),
        )
        child = create_cluster(config, payload,
                               headroom_words=headroom_words)
        self.children.append(child)
        return child

    def join(self):
        if self.joined:
            return
        self.joined = True
        parent = self.parent
        if not self.children:
            return
        rounds = max(child.round_counter for child in self.children)
        sent = max((stats.words_sent_max for child in self.children
                    for stats in child.ledger), default=0)
        received = max((stats.words_received_max for child in self.children
                        for stats in child.ledger), default=0)
        for child in self.children:
            parent.primitive_invocations.update(child.primitive_invocations)
        parent.peak_local_words = max(
            parent.peak_local_words,
            max(child.peak_local_words for child in self.children))
        parent.peak_global_words = max(
            parent.peak_global_words,
            parent.global_words + sum(child.peak_global_words
                                      for child in self.children))
        parent._charge(RoundStats(rounds, sent, received, 'parallel'))


def create_cluster(config, payload, *, headroom_words=0):
    '''
    Distribute ``payload`` contiguously across machines

    Parameters
    ----------
    config : MpcConfig
    payload : array-like
        Records (structured array) or plain values
    headroom_words : int, optional
        Words per machine left free for side data

    Returns
    -------
    MpcCluster

    Raises
    ------
    CapacityExceeded
        If the payload does not fit
    '''
    records = as_records(payload)
    n = len(records)
    per_record = record_words(records.dtype)
    capacity = (config.local_space_words - headroom_words) // per_record
    if n and capacity < 1:
        raise CapacityExceeded(
            f'A {per_record}-word record does not fit into '
            f'S={config.local_space_words} words '
            f'(headroom {headroom_words})'
        )

    if config.machine_count is not None:
        machine_count = config.machine_count
    else:
        machine_count = max(1, math.ceil(n / capacity)) if n else 1
    if n > machine_count * max(capacity, 0):
        raise CapacityExceeded(
            f'{n} records of {per_record} words do not fit on '
            f'{machine_count} machines of {config.local_space_words} words'
        )

    counts = np.zeros(machine_count, dtype=np.int64)
    if n:
        full, rest = divmod(n, capacity)
        counts[:full] = capacity
        if rest:
            counts[full] = rest
    return MpcCluster(config, records, counts)
