import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degreesketch.cluster import (
    BarrierError,
    Cluster,
    ExactSum,
    Message,
    MessageTag,
    Partitioner,
    PartitionMode,
    RunawayError,
    WORK_BATCH,
)
from degreesketch.degreesketch import TopKHeap
from oracles import ref_topk

SCHEDULES = [
    pytest.param({}, id="ordered"),
    pytest.param({"scheduler_seed": 3}, id="random"),
    pytest.param({"threaded": True}, id="threaded"),
]


# ------------------------------------------------------------- partitioning


def test_single_worker_owns_everything():
    for mode in PartitionMode:
        f = Partitioner(1, mode)
        assert {f(v) for v in range(1000)} == {0}


def test_round_robin_is_modulo():
    f = Partitioner(4)
    assert f(10) == 2
    assert [f(v) for v in range(8)] == [0, 1, 2, 3, 0, 1, 2, 3]


@pytest.mark.parametrize("mode", list(PartitionMode))
@pytest.mark.parametrize("P", [3, 8])
def test_assign_matches_scalar_owner(mode, P):
    f = Partitioner(P, mode, seed=5)
    vs = np.arange(0, 5000, 7, dtype=np.uint64)
    assert f.assign(vs).tolist() == [f(int(v)) for v in vs]


@pytest.mark.parametrize("P", [2, 4, 8, 16])
def test_hash_partition_is_balanced(P):
    counts = np.bincount(Partitioner(P, "hash").assign(np.arange(10**4, dtype=np.uint64)), minlength=P)
    assert np.all(np.abs(counts - 10**4 / P) <= 0.2 * 10**4 / P)


def test_hash_partition_depends_on_seed():
    vs = np.arange(200, dtype=np.uint64)
    assert not np.array_equal(Partitioner(8, "hash", 0).assign(vs), Partitioner(8, "hash", 1).assign(vs))
    assert np.array_equal(Partitioner(8, "hash", 1).assign(vs), Partitioner(8, "hash", 1).assign(vs))


def test_partitioner_rejects_bad_arguments():
    with pytest.raises(ValueError):
        Partitioner(0)
    with pytest.raises(ValueError):
        Partitioner(2, "modulo")


# ----------------------------------------------------------------- messages


def test_message_constructors():
    e = Message.edge(1, 2)
    assert e.tag is MessageTag.EDGE and (e.x, e.y, e.t) == (1, 2, None)
    s = Message.sketch_of(b"abc", 3, 4, t=2)
    assert s.tag is MessageTag.SKETCH and s.sketch == b"abc" and s.t == 2
    m = Message.est(1.5, 9)
    assert m.tag is MessageTag.EST and m.x == 9 and m.value == 1.5


# ------------------------------------------------------------------ running


@pytest.mark.parametrize("opts", SCHEDULES)
def test_no_work_returns_immediately(opts):
    c = Cluster(4, **opts)
    stats = c.run(lambda ctx, msg: None)
    assert stats.sent == stats.handled == 0
    assert not c.running


@pytest.mark.parametrize("opts", SCHEDULES)
def test_edge_then_reply(opts):
    seen = []

    def handler(ctx, msg):
        seen.append((ctx.rank, msg.tag))
        if msg.tag is MessageTag.EDGE:
            ctx.send(0, Message.est(1.0, msg.x))

    def start(ctx):
        ctx.send(1, Message.edge(5, 6))
        return ()

    c = Cluster(2, **opts)
    stats = c.run(handler, [start, None])
    assert stats.sent == stats.handled == 2
    assert stats.by_tag == {"edge": 1, "est": 1}
    assert sorted(seen) == [(0, MessageTag.EST), (1, MessageTag.EDGE)]


def endpoint_run(edges, P, **opts):
    """Send each edge to the owners of both endpoints; count per vertex."""
    c = Cluster(P, **opts)
    states = [dict() for _ in range(P)]
    chunks = np.array_split(edges, P)

    def work(chunk):
        def go(ctx):
            for u, v in chunk.tolist():
                ctx.send_to_owner(u, Message.edge(u, v))
                ctx.send_to_owner(v, Message.edge(v, u))
                yield
        return go

    def handler(ctx, msg):
        assert ctx.owner(msg.x) == ctx.rank
        ctx.state[msg.x] = ctx.state.get(msg.x, 0) + 1

    stats = c.run(handler, [work(ch) for ch in chunks], states)
    merged = {}
    for s in states:
        assert not merged.keys() & s.keys()
        merged.update(s)
    return stats, merged


@pytest.mark.parametrize("opts", SCHEDULES)
def test_exactly_two_messages_per_edge(opts):
    rng = np.random.default_rng(0)
    edges = rng.integers(0, 5000, size=(10**5, 2))
    stats, deg = endpoint_run(edges, 8, **opts)
    assert stats.sent == stats.handled == 2 * 10**5
    assert stats.by_tag == {"edge": 2 * 10**5}
    ref = np.bincount(edges.ravel(), minlength=5000)
    assert all(deg.get(v, 0) == ref[v] for v in range(5000))


@pytest.mark.parametrize("P", [1, 2, 5])
def test_schedules_agree_on_final_state(P):
    edges = np.random.default_rng(1).integers(0, 300, size=(3000, 2))
    results = [endpoint_run(edges, P)[1]]
    results += [endpoint_run(edges, P, scheduler_seed=s)[1] for s in range(4)]
    results.append(endpoint_run(edges, P, threaded=True)[1])
    assert all(r == results[0] for r in results[1:])


def test_per_channel_delivery_is_fifo():
    for opts in ({}, {"scheduler_seed": 11}, {"threaded": True}):
        got = [[] for _ in range(3)]

        def handler(ctx, msg):
            got[ctx.rank].append((msg.y, msg.x))

        def work(rank):
            def go(ctx):
                for i in range(500):
                    ctx.send(i % 3, Message.edge(i, rank))
                    yield
            return go

        Cluster(3, **opts).run(handler, [work(r) for r in range(3)])
        for inbox in got:
            for src in range(3):
                seq = [x for s, x in inbox if s == src]
                assert seq == sorted(seq)


def test_random_schedule_interleaves_work_and_delivery():
    order = []

    def handler(ctx, msg):
        order.append("h")

    def go(ctx):
        for i in range(200):
            order.append("w")
            ctx.send(0, Message.edge(i, 0))
            yield

    Cluster(1, scheduler_seed=0).run(handler, [go])
    first_h = order.index("h")
    assert first_h < len(order) - 200  # delivery begins before the work is exhausted


def test_ordered_schedule_drains_between_batches():
    order = []

    def handler(ctx, msg):
        order.append("h")

    def go(ctx):
        for i in range(3 * WORK_BATCH):
            order.append("w")
            ctx.send(0, Message.edge(i, 0))
            yield

    Cluster(1).run(handler, [go])
    assert order[: 2 * WORK_BATCH] == ["w"] * WORK_BATCH + ["h"] * WORK_BATCH


@pytest.mark.parametrize("opts", SCHEDULES)
def test_circuit_breaker_stops_runaway_chains(opts):
    def handler(ctx, msg):
        ctx.send((ctx.rank + 1) % ctx.workers, msg)

    def start(ctx):
        ctx.send(0, Message.edge(0, 0))

    c = Cluster(2, max_messages=1000, **opts)
    with pytest.raises(RunawayError):
        c.run(handler, [start, None])
    assert not c.running


@pytest.mark.parametrize("opts", SCHEDULES)
def test_handler_errors_propagate(opts):
    def handler(ctx, msg):
        raise KeyError("boom")

    def start(ctx):
        ctx.send(0, Message.edge(0, 0))

    with pytest.raises(KeyError):
        Cluster(2, **opts).run(handler, [start, None])


def test_run_argument_validation():
    c = Cluster(3)
    with pytest.raises(ValueError):
        c.run(lambda ctx, msg: None, [None])
    with pytest.raises(ValueError):
        c.run(lambda ctx, msg: None, None, [{}])
    with pytest.raises(ValueError):
        Cluster(2, threaded=True, scheduler_seed=0)


def test_send_to_missing_worker_fails():
    def start(ctx):
        ctx.send(7, Message.edge(0, 0))

    with pytest.raises(ValueError):
        Cluster(2).run(lambda ctx, msg: None, [start, None])


def test_totals_accumulate_across_runs():
    c = Cluster(2)

    def start(ctx):
        ctx.send(1 - ctx.rank, Message.est(1.0, ctx.rank))

    c.run(lambda ctx, msg: None, [start, start])
    c.run(lambda ctx, msg: None, [start, start])
    assert c.total.sent == c.total.handled == 4
    assert c.total.by_tag == {"est": 4}


# --------------------------------------------------------------- reductions


def test_reduce_sum_of_ones():
    for P in (1, 4, 9):
        assert Cluster(P).reduce_sum([1.0] * P) == P


def test_reductions_are_barriers():
    c = Cluster(2)
    caught = []

    def handler(ctx, msg):
        for call in (lambda: c.reduce_sum([0.0]), lambda: c.reduce_topk([TopKHeap(1)])):
            try:
                call()
            except BarrierError:
                caught.append(True)

    def start(ctx):
        ctx.send(0, Message.edge(0, 0))

    c.run(handler, [start, None])
    assert caught == [True, True]


def test_reduce_topk_example():
    a, b = TopKHeap(2), TopKHeap(2)
    a.offer(5, "a")
    a.offer(3, "b")
    b.offer(4, "c")
    out = Cluster(2).reduce_topk([a, b])
    assert out.items() == [(5, "a"), (4, "c")]
    assert a.items() == [(5, "a"), (3, "b")]  # inputs untouched


@given(st.lists(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 10**6)), max_size=40),
                min_size=1, max_size=6), st.integers(1, 15))
@settings(max_examples=80)
def test_reduce_topk_matches_global_heap(parts, k):
    # Ids are unique across workers, as vertices and edges are.
    seen, clean = set(), []
    for part in parts:
        keep = []
        for s, i in part:
            if i not in seen:
                seen.add(i)
                keep.append((s, i))
        clean.append(keep)
    heaps = []
    for part in clean:
        h = TopKHeap(k)
        for s, i in part:
            h.offer(s, i)
        heaps.append(h)
    out = Cluster(len(heaps)).reduce_topk(heaps)
    table = {i: s for part in clean for s, i in part}
    assert out.ids() == ref_topk(table, k)


def test_reduce_topk_needs_a_heap():
    with pytest.raises(ValueError):
        Cluster(1).reduce_topk([])


# --------------------------------------------------------------- exact sums


floats = st.floats(-1e12, 1e12, allow_nan=False, allow_infinity=False)


@given(st.lists(floats, max_size=200), st.randoms(use_true_random=False))
def test_exact_sum_is_order_invariant(xs, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    assert ExactSum(xs).value() == ExactSum(ys).value() == math.fsum(xs)


@given(st.lists(floats, max_size=100), st.lists(floats, max_size=100))
def test_exact_sum_merge(xs, ys):
    a, b = ExactSum(xs), ExactSum(ys)
    a.merge(b)
    assert a.value() == math.fsum(xs + ys)
    assert float(a) == a.value()


def test_exact_sum_beats_naive_summation():
    xs = [1e16, 1.0, -1e16] * 1000
    assert sum(xs) != 1000.0
    assert ExactSum(xs).value() == 1000.0


def test_reduce_sum_independent_of_split():
    rng = random.Random(4)
    xs = [rng.uniform(0, 100) * 10 ** rng.randint(-8, 8) for _ in range(5000)]
    totals = set()
    for P in (1, 2, 3, 8):
        parts = [ExactSum(xs[w::P]) for w in range(P)]
        totals.add(Cluster(P).reduce_sum(parts))
    assert totals == {math.fsum(xs)}
