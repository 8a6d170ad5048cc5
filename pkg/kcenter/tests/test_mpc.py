import json

import numpy as np
import numpy.testing
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ..exceptions import (CapacityExceeded, CommViolation, InvalidParams,
                          SpaceViolation)
from ..mpc import (MpcConfig, as_records, create_cluster, record_words,
                   segmented_cumsum)


def make_cluster(values, *, words, machines=None, headroom=0, **kwargs):
    config = MpcConfig(n=max(len(values), 1), local_space_words=words,
                       machine_count=machines, **kwargs)
    return create_cluster(config, np.asarray(values, dtype=np.int64),
                          headroom_words=headroom)


def noop(machine_id, records, rng):
    return records, {}


def echo(machine_id, records, rng):
    return records[:0], {machine_id: records}


def test_config_local_space():
    config = MpcConfig(n=10000, delta=0.5, local_space_factor=4)
    assert config.local_space_words == 400
    assert MpcConfig(n=10, min_local_words=50).local_space_words == 50
    assert MpcConfig(n=10, local_space_words=7).local_space_words == 7


@pytest.mark.parametrize('kwargs', [dict(delta=0), dict(delta=1),
                                    dict(rho=0), dict(max_workers=0),
                                    dict(local_space_words=0)])
def test_config_validation(kwargs):
    with pytest.raises(InvalidParams):
        MpcConfig(n=10, **kwargs)


def test_record_words():
    assert record_words(np.int64) == 1
    dtype = np.dtype([('id', np.int64), ('coords', np.float64, (3,))])
    assert record_words(dtype) == 4
    assert record_words(as_records(np.zeros((5, 2))).dtype) == 2


def test_create_contiguous():
    cluster = make_cluster(range(8), words=4, machines=2)
    numpy.testing.assert_array_equal(cluster.machine(0)['value'], [0, 1, 2, 3])
    numpy.testing.assert_array_equal(cluster.machine(1)['value'], [4, 5, 6, 7])
    assert cluster.round_counter == 0
    assert cluster.peak_local_words == 4
    assert cluster.peak_global_words == 8


def test_create_capacity_exceeded():
    with pytest.raises(CapacityExceeded):
        make_cluster(range(8), words=4, machines=1)


def test_create_empty():
    cluster = make_cluster([], words=4)
    assert cluster.machine_count == 1
    assert len(cluster.machine(0)) == 0
    assert cluster.round_counter == 0


def test_create_default_machine_count():
    cluster = make_cluster(range(10), words=4)
    assert cluster.machine_count == 3
    numpy.testing.assert_array_equal(cluster.counts, [4, 4, 2])


def test_machine_view_is_read_only():
    cluster = make_cluster(range(4), words=4)
    with pytest.raises(ValueError):
        cluster.machine(0)['value'][0] = 9


def test_noop_round():
    cluster = make_cluster(range(8), words=4, machines=2)
    stats = cluster.run_round(noop)
    assert (stats.rounds_charged, stats.words_sent_max,
            stats.words_received_max) == (1, 0, 0)
    assert cluster.round_counter == 1


def test_echo_round():
    cluster = make_cluster(range(8), words=4, machines=2)
    before = cluster.records.copy()
    stats = cluster.run_round(echo)
    numpy.testing.assert_array_equal(cluster.records, before)
    assert cluster.round_counter == 1
    assert stats.words_sent_max == 4


def test_receive_over_limit():
    cluster = make_cluster(range(8), words=4, machines=2)
    before = cluster.records.copy()

    def gather(machine_id, records, rng):
        return records[:0], {0: records}

    with pytest.raises(CommViolation) as ex:
        cluster.run_round(gather)
    assert ex.value.machine == 0
    assert ex.value.direction == 'receive'
    numpy.testing.assert_array_equal(cluster.records, before)
    assert cluster.round_counter == 0


def test_storage_over_limit():
    cluster = make_cluster(range(8), words=4, machines=2)

    def one_more(machine_id, records, rng):
        if machine_id == 1:
            return records[1:], {0: records[:1]}
        return records, {}

    with pytest.raises(SpaceViolation) as ex:
        cluster.run_round(one_more)
    assert ex.value.machine == 0
    assert ex.value.words == 5
    numpy.testing.assert_array_equal(cluster.counts, [4, 4])


def test_round_moves_records():
    cluster = make_cluster(range(6), words=4, machines=2)
    cluster.run_round(lambda m, records, rng: (records[:2],
                                               {1 - m: records[2:]}))
    numpy.testing.assert_array_equal(cluster.machine(0)['value'], [0, 1])
    numpy.testing.assert_array_equal(cluster.machine(1)['value'],
                                     [4, 5, 2, 3])


def test_sort_small():
    cluster = make_cluster([3, 1, 2], words=2, machines=2)
    stats = cluster.sort_distributed('value')
    numpy.testing.assert_array_equal(cluster.records['value'], [1, 2, 3])
    numpy.testing.assert_array_equal(cluster.counts, [2, 1])
    assert stats.rounds_charged == 1


def test_sort_already_sorted_still_charged():
    config = dict(primitive_round_cost=3)
    cluster = make_cluster([1, 2, 3], words=4, **config)
    cluster.sort_distributed('value')
    numpy.testing.assert_array_equal(cluster.records['value'], [1, 2, 3])
    assert cluster.round_counter == 3
    assert cluster.primitive_invocations['sort'] == 1


def test_sort_matches_reference():
    values = np.random.default_rng(0).integers(0, 1000, 10000)
    cluster = make_cluster(values, words=400)
    assert cluster.machine_count == 25
    cluster.sort_distributed('value')
    numpy.testing.assert_array_equal(cluster.records['value'], np.sort(values))


def test_sort_by_several_keys():
    records = np.zeros(4, dtype=[('a', np.int64), ('b', np.int64)])
    records['a'] = [1, 0, 1, 0]
    records['b'] = [0, 5, -1, 2]
    cluster = create_cluster(MpcConfig(n=4, local_space_words=8), records)
    cluster.sort_distributed(['a', 'b'])
    numpy.testing.assert_array_equal(cluster.records['b'], [2, 5, -1, 0])


@pytest.mark.parametrize('values, expected', [([1, 1, 1, 1], [1, 2, 3, 4]),
                                              ([5], [5])])
def test_prefix_sum(values, expected):
    cluster = make_cluster(values, words=8)
    stats = cluster.prefix_sum('value')
    numpy.testing.assert_array_equal(cluster.records['prefix'], expected)
    assert stats.rounds_charged == 1


def test_prefix_sum_matches_scan():
    values = np.random.default_rng(1).integers(-50, 50, 10000)
    cluster = make_cluster(values, words=800, headroom=400)
    cluster.prefix_sum('value')
    expected = []
    total = 0
    for value in values:
        total += int(value)
        expected.append(total)
    numpy.testing.assert_array_equal(cluster.records['prefix'], expected)


def test_prefix_sum_segmented():
    records = np.zeros(6, dtype=[('group', np.int64), ('one', np.int64)])
    records['group'] = [0, 0, 1, 1, 1, 2]
    records['one'] = 1
    cluster = create_cluster(MpcConfig(n=6, local_space_words=6), records)
    cluster.prefix_sum('one', field='one', segment='group')
    numpy.testing.assert_array_equal(cluster.records['one'],
                                     [1, 2, 1, 2, 3, 1])


def test_prefix_sum_needs_space_for_the_new_field():
    cluster = make_cluster(range(4), words=4, machines=1)
    with pytest.raises(SpaceViolation):
        cluster.prefix_sum('value')
    assert cluster.round_counter == 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-100, 100), min_size=1, max_size=200),
       st.lists(st.integers(0, 3), min_size=1, max_size=200))
def test_segmented_cumsum_oracle(values, groups):
    size = min(len(values), len(groups))
    values, groups = np.array(values[:size]), np.array(groups[:size])
    result = segmented_cumsum(values, [groups])
    expected = []
    for i, value in enumerate(values):
        if i and groups[i] == groups[i - 1]:
            expected.append(expected[-1] + value)
        else:
            expected.append(value)
    numpy.testing.assert_array_equal(result, expected)


# 100 records fill a machine; multiples of 100 leave every machine full
ORACLE_SIZES = [1, 2, 99, 100, 101, 300, 10000] + [
    int(size) for size in np.random.default_rng(11).integers(1, 10001, 93)]


@pytest.mark.parametrize('size', ORACLE_SIZES)
def test_sort_and_prefix_sum_oracles(size):
    rng = np.random.default_rng(size)
    records = np.zeros(size, dtype=[('key', np.int64), ('value', np.int64),
                                    ('index', np.int64)])
    records['key'] = rng.integers(0, 8, size)
    records['value'] = rng.integers(-1000, 1000, size)
    records['index'] = np.arange(size)
    config = MpcConfig(n=size, local_space_words=400)
    cluster = create_cluster(config, records, headroom_words=100)
    counts = cluster.counts.copy()
    if size % 100 == 0:
        assert np.all(counts == 100)

    cluster.sort_distributed(['key', 'value'])
    expected = sorted(range(size),
                      key=lambda i: (records['key'][i], records['value'][i]))
    numpy.testing.assert_array_equal(cluster.records['index'], expected)
    numpy.testing.assert_array_equal(cluster.counts, counts)

    cluster.prefix_sum('value', segment='key')
    keys = cluster.records['key']
    values = cluster.records['value']
    starts = np.flatnonzero(np.append(True, keys[1:] != keys[:-1]))
    totals = np.cumsum(values)
    offsets = np.repeat(totals[starts] - values[starts],
                        np.diff(np.append(starts, size)))
    numpy.testing.assert_array_equal(cluster.records['prefix'],
                                     totals - offsets)
    assert cluster.peak_local_words <= cluster.local_space_words
    assert cluster.round_counter == 2


def test_broadcast():
    cluster = make_cluster(range(16), words=4, headroom=3)
    assert cluster.machine_count == 16
    stats = cluster.broadcast(7, name='x')
    assert all(side['x']['value'][0] == 7 for side in cluster.side)
    assert stats.rounds_charged == cluster.config.primitive_round_cost
    assert cluster.peak_local_words == 2


def test_broadcast_too_large():
    cluster = make_cluster(range(8), words=4, machines=2)
    with pytest.raises(SpaceViolation):
        cluster.broadcast(np.arange(4))
    assert cluster.round_counter == 0


def test_broadcast_single_machine():
    cluster = make_cluster([1], words=4)
    cluster.broadcast(3)
    assert cluster.round_counter == 1
    assert cluster.primitive_invocations['broadcast'] == 1


def test_share_segment_heads():
    records = np.zeros(6, dtype=[('seg', np.int64), ('head', np.int64)])
    records['seg'] = [0, 0, 0, 1, 1, 1]
    records['head'] = [1, 0, 0, 1, 0, 0]
    config = MpcConfig(n=6, local_space_words=4)
    cluster = create_cluster(config, records, headroom_words=2)
    assert cluster.machine_count == 6

    cluster.share_segment_heads('seg', records['head'] == 1, limit=1)
    assert 'heads' not in cluster.side[0]
    assert 'heads' not in cluster.side[3]
    for machine, head in [(1, 0), (2, 0), (4, 1), (5, 1)]:
        assert cluster.side[machine]['heads']['seg'].tolist() == [head]
    assert cluster.primitive_invocations['segment_broadcast'] == 1

    cluster.clear_side()
    assert all(not side for side in cluster.side)


def test_route():
    cluster = make_cluster(range(6), words=4, machines=3)
    stats = cluster.route([2, 0, 2, 0, 1, 1])
    numpy.testing.assert_array_equal(cluster.records['value'],
                                     [1, 3, 4, 5, 0, 2])
    numpy.testing.assert_array_equal(cluster.counts, [2, 2, 2])
    assert stats.rounds_charged == 1
    assert stats.words_received_max == 2


def test_route_over_limit():
    cluster = make_cluster(range(12), words=4, machines=3)
    with pytest.raises(CommViolation) as ex:
        cluster.route(np.full(12, 2))
    assert ex.value.machine == 2
    numpy.testing.assert_array_equal(cluster.counts, [4, 4, 4])


def test_annotate_and_filter():
    cluster = make_cluster(range(8), words=4, machines=2)

    def double(records):
        records['value'] *= 2
        return records

    cluster.annotate(double)
    cluster.filter(cluster.records['value'] % 4 == 0)
    numpy.testing.assert_array_equal(cluster.records['value'], [0, 4, 8, 12])
    numpy.testing.assert_array_equal(cluster.counts, [2, 2])
    assert cluster.round_counter == 0


def test_parallel_section():
    cluster = make_cluster(range(8), words=4, machines=2)
    with cluster.parallel() as section:
        first = section.spawn(np.arange(4))
        second = section.spawn(np.arange(8))
        for _ in range(3):
            first.sort_distributed('value')
        second.prefix_sum('value', field='value')
        assert first.config.seed != second.config.seed

    assert cluster.round_counter == 3
    assert cluster.primitive_invocations == {'sort': 3, 'prefix_sum': 1}
    assert cluster.peak_global_words >= 8 + 4 + 8
    assert cluster.ledger[-1].kind == 'parallel'


def random_program(machine_id, records, rng):
    keep = records.copy()
    keep['value'] = rng.integers(0, 1000, len(keep))
    return keep, {}


@pytest.mark.parametrize('workers', [1, 4])
def test_determinism(workers):
    reference = make_cluster(range(20), words=4)
    reference.run_round(random_program)
    cluster = make_cluster(range(20), words=4, max_workers=workers)
    cluster.run_round(random_program)
    numpy.testing.assert_array_equal(cluster.records, reference.records)


def test_accounting_soundness():
    cluster = make_cluster(range(16), words=8, headroom=4,
                           primitive_round_cost=2)
    cluster.run_round(echo)
    cluster.sort_distributed('value')
    cluster.broadcast(1)
    cluster.charge('sort')
    assert cluster.round_counter == sum(stats.rounds_charged
                                        for stats in cluster.ledger)
    assert cluster.round_counter == 1 + 2 + 2 + 2


def test_usage_report():
    cluster = make_cluster(range(8), words=4)
    cluster.sort_distributed('value')
    report = json.loads(cluster.to_json())
    assert report == {'rounds': 1, 'peak_local_words': 4,
                      'peak_global_words': 8,
                      'primitive_counts': {'sort': 1}}
