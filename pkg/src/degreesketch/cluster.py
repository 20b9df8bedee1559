"""Simulated message-passing runtime.

A :class:`Cluster` owns ``P`` logical workers. Each worker runs an optional
piece of initial work (typically reading its edge substream) and a message
handler. Messages travel through per-(sender, receiver) FIFO channels and a
run ends at quiescence: every channel is empty and all initial work is done.

Three schedulers share the same contract:

* deterministic (default): workers advance their initial work in small
  batches, then channels are drained in (receiver, sender) order;
* randomized (``scheduler_seed`` set): each step picks a random nonempty
  channel or unfinished work item, keeping per-channel FIFO order;
* threaded: one thread per worker with an outstanding-message counter for
  quiescence detection.

Reductions are only legal between runs.
"""

from __future__ import annotations

import enum
import math
import queue
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .hll import MASK64, hash64, hash64_array, hash_key

__all__ = [
    "BarrierError",
    "Cluster",
    "ExactSum",
    "Message",
    "MessageTag",
    "Partitioner",
    "PartitionMode",
    "RunStats",
    "RunawayError",
    "WorkerContext",
]

DEFAULT_MAX_MESSAGES = 10**9
WORK_BATCH = 64


class BarrierError(RuntimeError):
    """A reduction was requested while a run was in progress."""


class RunawayError(RuntimeError):
    """The message circuit breaker tripped."""


# ---------------------------------------------------------------- partitioning


class PartitionMode(str, enum.Enum):
    ROUND_ROBIN = "rr"
    HASH = "hash"


@dataclass(frozen=True)
class Partitioner:
    """Total map from vertex id to worker index."""

    workers: int
    mode: PartitionMode = PartitionMode.ROUND_ROBIN
    seed: int = 0

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("need at least one worker")
        object.__setattr__(self, "mode", PartitionMode(self.mode))

    @property
    def _key(self) -> int:
        # Offset so the partition hash is independent of the sketch hash.
        return hash_key((self.seed + 0x5BD1E995) & MASK64)

    def __call__(self, v: int) -> int:
        if self.mode is PartitionMode.ROUND_ROBIN:
            return v % self.workers
        return hash64(v, self._key) % self.workers

    def assign(self, vertices: np.ndarray) -> np.ndarray:
        """Vectorized worker assignment (int64)."""
        v = np.asarray(vertices, dtype=np.uint64)
        if self.mode is PartitionMode.ROUND_ROBIN:
            return (v % np.uint64(self.workers)).astype(np.int64)
        return (hash64_array(v, self._key) % np.uint64(self.workers)).astype(np.int64)


# -------------------------------------------------------------------- messages


class MessageTag(enum.IntEnum):
    EDGE = 0
    SKETCH = 1
    EST = 2


class Message(NamedTuple):
    """Tagged message.

    EDGE carries ``(x, y)`` and an optional layer ``t``; SKETCH adds the
    serialized sketch in ``sketch``; EST carries ``value`` for vertex ``x``.
    """

    tag: MessageTag
    x: int
    y: int = -1
    t: int | None = None
    sketch: bytes | None = None
    value: float | None = None

    @classmethod
    def edge(cls, x: int, y: int, t: int | None = None) -> Message:
        return cls(MessageTag.EDGE, x, y, t)

    @classmethod
    def sketch_of(cls, data: bytes, x: int, y: int, t: int | None = None) -> Message:
        return cls(MessageTag.SKETCH, x, y, t, data)

    @classmethod
    def est(cls, value: float, vertex: int) -> Message:
        return cls(MessageTag.EST, vertex, -1, None, None, value)


# ----------------------------------------------------------------- exact sums


class ExactSum:
    """Running float sum with no rounding error until :meth:`value`.

    Keeps non-overlapping partials (Shewchuk), so the result is the correctly
    rounded exact sum regardless of insertion order or grouping.
    """

    __slots__ = ("_partials",)

    def __init__(self, values: Iterable[float] = ()) -> None:
        self._partials: list[float] = []
        for v in values:
            self.add(v)

    def add(self, x: float) -> None:
        partials = self._partials
        i = 0
        for y in partials:
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo:
                partials[i] = lo
                i += 1
            x = hi
        partials[i:] = [x]

    def merge(self, other: ExactSum) -> None:
        for v in other._partials:
            self.add(v)

    @property
    def partials(self) -> tuple[float, ...]:
        return tuple(self._partials)

    def value(self) -> float:
        return math.fsum(self._partials)

    def __float__(self) -> float:
        return self.value()


# --------------------------------------------------------------------- runtime


@dataclass
class RunStats:
    sent: int = 0
    handled: int = 0
    by_tag: dict[str, int] = field(default_factory=dict)


class WorkerContext:
    """Handle given to initial work and handlers of one worker."""

    __slots__ = ("rank", "state", "_cluster")

    def __init__(self, cluster: Cluster, rank: int, state: Any) -> None:
        self.rank = rank
        self.state = state
        self._cluster = cluster

    @property
    def workers(self) -> int:
        return self._cluster.workers

    def owner(self, v: int) -> int:
        return self._cluster.partitioner(v)

    def send(self, dest: int, msg: Message) -> None:
        self._cluster._send(self.rank, dest, msg)

    def send_to_owner(self, v: int, msg: Message) -> None:
        self._cluster._send(self.rank, self._cluster.partitioner(v), msg)


Handler = Callable[[WorkerContext, Message], None]
Work = Callable[[WorkerContext], "Iterable[Any] | None"]


class Cluster:
    def __init__(
        self,
        workers: int | Partitioner = 1,
        *,
        scheduler_seed: int | None = None,
        threaded: bool = False,
        max_messages: int = DEFAULT_MAX_MESSAGES,
    ) -> None:
        self.partitioner = workers if isinstance(workers, Partitioner) else Partitioner(workers)
        self.workers = self.partitioner.workers
        if threaded and scheduler_seed is not None:
            raise ValueError("threaded mode has no scheduler seed")
        self.scheduler_seed = scheduler_seed
        self.threaded = threaded
        self.max_messages = max_messages
        self.total = RunStats()
        self._running = False
        self._stats = RunStats()
        self._lock = threading.Lock()
        self._channels: list[list[deque]] = []
        self._pending = 0
        self._on_send: Callable[[int, int], None] | None = None

    @property
    def running(self) -> bool:
        return self._running

    # -- sending
    def _send(self, src: int, dst: int, msg: Message) -> None:
        if not 0 <= dst < self.workers:
            raise ValueError(f"no worker {dst}")
        stats = self._stats
        if self.threaded:
            with self._lock:
                stats.sent += 1
                self._pending += 1
                sent = stats.sent
            if sent > self.max_messages:
                raise RunawayError(f"more than {self.max_messages} messages sent")
            self._inboxes[dst].put(msg)
            return
        stats.sent += 1
        if stats.sent > self.max_messages:
            raise RunawayError(f"more than {self.max_messages} messages sent")
        chan = self._channels[dst][src]
        chan.append(msg)
        self._pending += 1
        if self._on_send is not None and len(chan) == 1:
            self._on_send(src, dst)

    # -- running
    def run(
        self,
        handler: Handler,
        work: Sequence[Work | None] | None = None,
        states: Sequence[Any] | None = None,
    ) -> RunStats:
        """Run initial work and deliver messages until quiescent."""
        if self._running:
            raise RuntimeError("cluster is already running")
        P = self.workers
        if work is not None and len(work) != P:
            raise ValueError(f"expected {P} work items, got {len(work)}")
        if states is not None and len(states) != P:
            raise ValueError(f"expected {P} worker states, got {len(states)}")
        contexts = [WorkerContext(self, w, None if states is None else states[w]) for w in range(P)]
        self._stats = RunStats()
        self._pending = 0
        self._running = True
        try:
            if self.threaded:
                self._run_threaded(handler, work, contexts)
            elif self.scheduler_seed is None:
                self._run_ordered(handler, work, contexts)
            else:
                self._run_random(handler, work, contexts)
        finally:
            self._running = False
            self._on_send = None
        stats = self._stats
        if stats.handled != stats.sent:
            raise AssertionError(f"sent {stats.sent} messages but handled {stats.handled}")
        self.total.sent += stats.sent
        self.total.handled += stats.handled
        for tag, n in stats.by_tag.items():
            self.total.by_tag[tag] = self.total.by_tag.get(tag, 0) + n
        return stats

    @staticmethod
    def _start(work: Work | None, ctx: WorkerContext) -> Iterator[Any] | None:
        if work is None:
            return None
        out = work(ctx)
        return None if out is None else iter(out)

    def _finish_counts(self, counts: list[int]) -> None:
        self._stats.handled = sum(counts)
        self._stats.by_tag = {MessageTag(i).name.lower(): n for i, n in enumerate(counts) if n}

    def _run_ordered(self, handler: Handler, work, contexts) -> None:
        P = self.workers
        self._channels = [[deque() for _ in range(P)] for _ in range(P)]
        counts = [0, 0, 0]
        iters = [self._start(None if work is None else work[w], contexts[w]) for w in range(P)]
        while True:
            live = False
            for w, it in enumerate(iters):
                if it is None:
                    continue
                for _ in range(WORK_BATCH):
                    if next(it, _DONE) is _DONE:
                        iters[w] = None
                        break
                else:
                    live = True
            while self._pending:
                for dst in range(P):
                    ctx = contexts[dst]
                    for chan in self._channels[dst]:
                        while chan:
                            msg = chan.popleft()
                            self._pending -= 1
                            handler(ctx, msg)
                            counts[msg.tag] += 1
            if not live:
                break
        self._finish_counts(counts)

    def _run_random(self, handler: Handler, work, contexts) -> None:
        P = self.workers
        rng = np.random.default_rng(self.scheduler_seed)
        self._channels = [[deque() for _ in range(P)] for _ in range(P)]
        counts = [0, 0, 0]
        # Items are ("w", rank) for unfinished work and ("c", src, dst) for
        # nonempty channels; swap-remove keeps selection O(1).
        items: list[tuple] = []
        where: dict[tuple, int] = {}

        def add(item: tuple) -> None:
            where[item] = len(items)
            items.append(item)

        def remove(item: tuple) -> None:
            i = where.pop(item)
            last = items.pop()
            if i < len(items):
                items[i] = last
                where[last] = i

        # Work may send while it starts, so channel tracking comes first.
        self._on_send = lambda src, dst: add(("c", src, dst))
        iters = [self._start(None if work is None else work[w], contexts[w]) for w in range(P)]
        for w, it in enumerate(iters):
            if it is not None:
                add(("w", w))
        # Draw random indices in blocks; the fraction maps onto the current size.
        draws = iter(())
        while items:
            u = next(draws, None)
            if u is None:
                draws = iter(rng.random(4096).tolist())
                u = next(draws)
            item = items[int(u * len(items))]
            if item[0] == "w":
                if next(iters[item[1]], _DONE) is _DONE:
                    remove(item)
                continue
            _, src, dst = item
            chan = self._channels[dst][src]
            msg = chan.popleft()
            self._pending -= 1
            if not chan:
                remove(item)
            handler(contexts[dst], msg)
            counts[msg.tag] += 1
        self._finish_counts(counts)

    def _run_threaded(self, handler: Handler, work, contexts) -> None:
        P = self.workers
        self._inboxes = [queue.SimpleQueue() for _ in range(P)]
        done = threading.Event()
        errors: list[BaseException] = []
        counts = [[0, 0, 0] for _ in range(P)]
        remaining = [P]

        def check_quiet() -> None:
            # Caller holds the lock.
            if remaining[0] == 0 and self._pending == 0:
                done.set()

        def body(w: int) -> None:
            ctx = contexts[w]
            inbox = self._inboxes[w]
            mine = counts[w]
            try:
                it = self._start(None if work is None else work[w], ctx)
                if it is not None:
                    for _ in it:
                        pass
                with self._lock:
                    remaining[0] -= 1
                    check_quiet()
                while True:
                    msg = inbox.get()
                    if msg is _DONE:
                        return
                    handler(ctx, msg)
                    mine[msg.tag] += 1
                    with self._lock:
                        self._pending -= 1
                        check_quiet()
            except BaseException as exc:  # surfaced by the caller
                errors.append(exc)
                done.set()

        threads = [threading.Thread(target=body, args=(w,), daemon=True) for w in range(P)]
        for th in threads:
            th.start()
        done.wait()
        for box in self._inboxes:
            box.put(_DONE)
        for th in threads:
            th.join()
        if errors:
            raise errors[0]
        self._finish_counts([sum(c[i] for c in counts) for i in range(3)])

    # -- reductions
    def _barrier(self) -> None:
        if self._running:
            raise BarrierError("reduction requested before quiescence")

    def reduce_sum(self, values: Sequence[float | ExactSum]) -> float:
        """Global sum of per-worker contributions, exactly rounded."""
        self._barrier()
        acc = ExactSum()
        for v in values:
            if isinstance(v, ExactSum):
                acc.merge(v)
            else:
                acc.add(float(v))
        return acc.value()

    def reduce_topk(self, heaps: Sequence[Any]):
        """Merge per-worker top-k heaps into one global heap."""
        self._barrier()
        if not heaps:
            raise ValueError("reduce_topk needs at least one heap")
        out = heaps[0].copy()
        for h in heaps[1:]:
            out.merge(h)
        return out


_DONE = object()
