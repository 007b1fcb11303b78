"""Shared memory in B-word blocks, private LRU caches, write-invalidate.

The model is the ideal-cache one: fully associative, capacity M words per
processor, LRU eviction, valid/invalid coherence with a single writer.
State changes happen atomically when an access is *granted* (the scheduler
arbitrates same-cycle contention before calling `access`); the b-cycle miss
latency is pure delay afterwards.

Move accounting: every fetch of a block into a cache is logged as a
transfer (from = supplying cache or -1 for memory).  When a write
invalidates a remote copy, the removal is also logged, with to = -1, so
the log carries one entry per invalidated copy plus the fetch.  Block
delay in the Def-4 sense counts transfers *into* caches (to >= 0);
invalidation removals are bookkeeping entries.
"""

from __future__ import annotations

from bisect import bisect_right
from collections import OrderedDict
from dataclasses import dataclass

# outcome classifications
HIT, CACHE_MISS, BLOCK_MISS = 0, 1, 2
OUTCOME_NAMES = {HIT: "HIT", CACHE_MISS: "CACHE_MISS", BLOCK_MISS: "BLOCK_MISS"}

# move-log causes
CAUSE_COLD, CAUSE_EVICT, CAUSE_INVALIDATE, CAUSE_INVALIDATE_OUT = 0, 1, 2, 3
CAUSE_NAMES = {CAUSE_COLD: "cold", CAUSE_EVICT: "evict",
               CAUSE_INVALIDATE: "invalidate", CAUSE_INVALIDATE_OUT: "invalidate"}

MEMORY = -1

# region kinds
REGION_GLOBAL, REGION_STACK = 0, 1

STACK_STRIDE_BLOCKS = 1 << 16  # address-space reservation per task stack


class SimFault(RuntimeError):
    """Raised on simulator-bug conditions (unallocated access, bad free)."""


@dataclass(frozen=True)
class AccessOutcome:
    classification: int
    latency: int
    stalled_cycles: int = 0

    @property
    def name(self) -> str:
        return OUTCOME_NAMES[self.classification]


class Region:
    __slots__ = ("base", "limit", "kind", "key")

    def __init__(self, base: int, limit: int, kind: int, key):
        self.base = base
        self.limit = limit
        self.kind = kind
        self.key = key


class Allocator:
    """Block-granular bump allocator over an unbounded word address space.

    Every allocation is rounded up to whole blocks and starts block-aligned,
    so no two allocations (hence no two regions, hence no two processors'
    requests) ever share a block.
    """

    def __init__(self, B: int):
        self.B = B
        self.next_word = 0
        self.regions: list[Region] = []
        self._bases: list[int] = []

    def allocate(self, kind: int, key, words: int) -> int:
        if words < 1:
            raise SimFault("allocation of zero or negative words")
        nblocks = -(-words // self.B)
        base = self.next_word
        self.next_word += nblocks * self.B
        region = Region(base, self.next_word, kind, key)
        self.regions.append(region)
        self._bases.append(base)
        return base

    def reserve_stack(self, key) -> "TaskStack":
        base = self.next_word
        self.next_word += STACK_STRIDE_BLOCKS * self.B
        region = Region(base, self.next_word, REGION_STACK, key)
        self.regions.append(region)
        self._bases.append(base)
        return TaskStack(region, self.B)

    def region_of(self, addr: int) -> Region:
        i = bisect_right(self._bases, addr) - 1
        if i < 0:
            raise SimFault(f"access to unallocated address {addr}")
        r = self.regions[i]
        if addr >= r.limit:
            raise SimFault(f"access to unallocated address {addr}")
        return r


class TaskStack:
    """One task's execution stack: word-granular LIFO inside a reserved
    block-aligned range.  Segments may share blocks and freed words are
    reused by later pushes, which is exactly the block-reuse the delay
    bounds are about."""

    __slots__ = ("region", "B", "top", "_marks", "high_water")

    def __init__(self, region: Region, B: int):
        self.region = region
        self.B = B
        self.top = region.base
        self._marks: list[int] = []
        self.high_water = region.base

    def push(self, words: int) -> int:
        base = self.top
        self.top += words
        if self.top > self.region.limit:
            raise SimFault("task stack overflow of reserved range")
        self._marks.append(base)
        if self.top > self.high_water:
            self.high_water = self.top
        return base

    def pop(self, base: int) -> None:
        if not self._marks:
            raise SimFault("pop from empty stack")
        if self._marks[-1] != base:
            raise SimFault(f"non-LIFO stack free: {base} != {self._marks[-1]}")
        self._marks.pop()
        self.top = base

    def blocks(self) -> range:
        """Block ids ever used by this stack (up to the high-water mark)."""
        return range(self.region.base // self.B,
                     -(-self.high_water // self.B) if self.high_water > self.region.base
                     else self.region.base // self.B)


class MoveLog:
    """Append-only transfer log; per-block interval queries after the run."""

    def __init__(self):
        self.t: list[int] = []
        self.block: list[int] = []
        self.frm: list[int] = []
        self.to: list[int] = []
        self.cause: list[int] = []
        self._index: dict[int, list[tuple[int, int, int]]] | None = None

    def append(self, t: int, block: int, frm: int, to: int, cause: int) -> None:
        self.t.append(t)
        self.block.append(block)
        self.frm.append(frm)
        self.to.append(to)
        self.cause.append(cause)
        self._index = None

    def __len__(self) -> int:
        return len(self.t)

    def _build_index(self) -> dict[int, list[tuple[int, int, int]]]:
        if self._index is None:
            idx: dict[int, list[tuple[int, int, int]]] = {}
            for i, b in enumerate(self.block):
                idx.setdefault(b, []).append((self.t[i], self.to[i], self.cause[i]))
            self._index = idx
        return self._index

    def block_delay(self, block: int, t1: int, t2: int) -> int:
        """Def-4 block delay: transfers of `block` into a cache in [t1, t2]."""
        return sum(1 for (t, to, _) in self._build_index().get(block, ())
                   if t1 <= t <= t2 and to >= 0)

    def sharing_moves(self, block: int, t1: int, t2: int) -> int:
        """Transfers caused by invalidations only (excludes cold/evict fills)."""
        return sum(1 for (t, to, c) in self._build_index().get(block, ())
                   if t1 <= t <= t2 and to >= 0 and c == CAUSE_INVALIDATE)

    def rows(self):
        for i in range(len(self.t)):
            yield (self.t[i], self.block[i], self.frm[i], self.to[i],
                   CAUSE_NAMES[self.cause[i]])

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("time_cycles,block,from_cache,to_cache,cause\n")
            for row in self.rows():
                f.write("%d,%d,%d,%d,%s\n" % row)


class _BlockState:
    __slots__ = ("holders", "last_writer", "writer_dirty", "lost")

    def __init__(self):
        self.holders: set[int] = set()
        self.last_writer: int = MEMORY
        self.writer_dirty: bool = False
        # per-proc reason the block left that proc's cache
        self.lost: dict[int, int] = {}


class MemorySystem:
    """Caches + directory + allocator + value store for one simulation."""

    def __init__(self, p: int, M: int, B: int, b: int):
        if M % B:
            raise ValueError("M must be a multiple of B")
        if B < 2:
            raise ValueError("B must be at least 2")
        self.p = p
        self.M = M
        self.B = B
        self.b = b
        self.frames = M // B
        self.alloc = Allocator(B)
        self.caches: list[OrderedDict[int, bool]] = [OrderedDict() for _ in range(p)]
        self.dir: dict[int, _BlockState] = {}
        self.log = MoveLog()
        self.values: dict[int, int] = {}
        # counters per proc
        self.hits = [0] * p
        self.cache_misses = [0] * p
        self.block_misses = [0] * p
        self.moves_in = 0

    # -- value plane (engine reads/writes around access bookkeeping) -------

    def read_value(self, addr: int) -> int:
        return self.values.get(addr, 0)

    def write_value(self, addr: int, v: int) -> None:
        self.values[addr] = v

    # -- coherence plane ----------------------------------------------------

    def access(self, proc: int, addr: int, mode: int, now: int):
        """Granted access by `proc`; returns (classification, latency,
        dirty_writer) where dirty_writer >= 0 flags a miss-causing transfer
        (the previous writer's last write forced this block's move)."""
        self.alloc.region_of(addr)  # fault on unallocated
        block = addr // self.B
        cache = self.caches[proc]
        st = self.dir.get(block)
        if st is None:
            st = self.dir[block] = _BlockState()
        dirty_writer = MEMORY
        if block in cache:
            cls = HIT
            latency = 1
            cache.move_to_end(block)
            self.hits[proc] += 1
        else:
            lost = st.lost.pop(proc, None)
            if lost == CAUSE_INVALIDATE:
                cls = BLOCK_MISS
                cause = CAUSE_INVALIDATE
                self.block_misses[proc] += 1
            else:
                cls = CACHE_MISS
                cause = CAUSE_EVICT if lost == CAUSE_EVICT else CAUSE_COLD
                self.cache_misses[proc] += 1
            latency = 1 + self.b
            # supplier: the last writer if it still holds a valid copy
            frm = st.last_writer if st.last_writer in st.holders else MEMORY
            if st.last_writer >= 0 and st.last_writer != proc and st.writer_dirty:
                dirty_writer = st.last_writer
                st.writer_dirty = False
            self._insert(proc, block, now)
            self.log.append(now, block, frm, proc, cause)
            self.moves_in += 1
        if mode == 1:  # WRITE: invalidate all other copies
            for other in sorted(st.holders):
                if other != proc:
                    del self.caches[other][block]
                    st.holders.discard(other)
                    st.lost[other] = CAUSE_INVALIDATE
                    self.log.append(now, block, other, MEMORY, CAUSE_INVALIDATE_OUT)
            st.holders = {proc}
            if st.last_writer != proc or not st.writer_dirty:
                st.last_writer = proc
            st.writer_dirty = True
        return cls, latency, dirty_writer

    def _insert(self, proc: int, block: int, now: int) -> None:
        cache = self.caches[proc]
        if len(cache) >= self.frames:
            victim, _ = cache.popitem(last=False)
            vst = self.dir[victim]
            vst.holders.discard(proc)
            vst.lost[proc] = CAUSE_EVICT
        cache[block] = True
        self.dir[block].holders.add(proc)

    # -- spec surface for stacks -------------------------------------------

    def allocate(self, kind: int, key, words: int) -> int:
        return self.alloc.allocate(kind, key, words)

    def new_stack(self, key) -> TaskStack:
        return self.alloc.reserve_stack(key)

    def free_stack(self, stack: TaskStack, base: int) -> None:
        stack.pop(base)

    def block_delay(self, block: int, t1: int, t2: int) -> int:
        return self.log.block_delay(block, t1, t2)


class ArbitrationPolicy:
    """Chooses the same-cycle winner among contending accesses to a block.

    The model does not assume fairness; the adversarial policy makes the
    longest waiter lose, to stress the delay bounds.
    """

    RANDOM, ROUND_ROBIN, ADVERSARIAL = "random", "round_robin", "adversarial"

    def __init__(self, name: str):
        if name not in (self.RANDOM, self.ROUND_ROBIN, self.ADVERSARIAL):
            raise ValueError(f"unknown arbitration policy {name!r}")
        self.name = name
        self._rr: dict[int, int] = {}

    def pick(self, block: int, procs: list[int], waits: dict[int, int], rng) -> int:
        """procs is sorted; waits maps proc -> cycles already stalled."""
        if len(procs) == 1:
            return procs[0]
        if self.name == self.RANDOM:
            return procs[rng.randrange(len(procs))]
        if self.name == self.ROUND_ROBIN:
            start = self._rr.get(block, -1)
            winner = next((q for q in procs if q > start), procs[0])
            self._rr[block] = winner
            return winner
        # adversarial: freshest requester wins, longest waiter starves
        min_wait = min(waits.get(q, 0) for q in procs)
        return next(q for q in procs if waits.get(q, 0) == min_wait)
