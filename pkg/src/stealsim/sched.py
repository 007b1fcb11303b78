"""Randomized work stealing over a series-parallel DAG on the simulated machine.

One run is a deterministic discrete-time simulation: processors act in id
order within a cycle, randomness (victim choice, steal winners, steal-cost
draws, block arbitration) comes from a single seeded generator, and the
clock skips to the next busy-until event.  Within a cycle the order is:

  A. transitions - node completions, fork pushes, join arrivals, own-deque
     pops; each ready processor advances until it needs memory, sleeps, or
     wants to steal;
  B. memory arbitration - per block, all same-cycle requesters proceed if
     they only read; any writer forces a single winner, losers stall one
     cycle (a stall cap bounds starvation under unfair policies);
  C. steal resolution - one success per victim per cycle, losers and
     empty-deque attempts pay the failure cost.

Tasks are the stolen-or-root units: each owns an execution stack; the
kernel of a task is whatever is not stolen from it.  The last finisher at
a join continues the join's task - a usurpation when that processor
arrived from the stolen side.
"""

from __future__ import annotations

import random
from array import array
from collections import deque as _deque
from dataclasses import dataclass, field

from . import sp_dag as sd
from .memsys import (ArbitrationPolicy, BLOCK_MISS, CACHE_MISS, HIT, MEMORY,
                     MemorySystem, REGION_GLOBAL, SimFault)
from .sp_dag import FORK, JOIN, GLOBAL_ARRAY, READ, WRITE, unpack_ref

VALUE_MASK = (1 << 31) - 1

DOWN, UP = 0, 1  # task phase for the analysis layer


@dataclass
class SimConfig:
    p: int = 4
    M: int = 256          # cache capacity, words
    B: int = 8            # block size, words
    b: int = 1            # cache-miss cost, cycles
    s: int = 4            # successful-steal cost lower bound, cycles
    a2: int = 2           # steal cost upper factor
    s_fail: int = -1      # unsuccessful steal cost; defaults to s
    seed: int = 0
    arbitration: str = "random"
    stall_cap: int = 0    # 0 means 10000*b
    mode: str = "off"     # levels instrumentation: off|coarse|refined|both
    l3_queue_scope: str = "same_task"  # or "any"; identical under the deque invariant
    trace: bool = False

    def __post_init__(self):
        if self.s_fail < 0:
            self.s_fail = self.s
        if self.stall_cap == 0:
            self.stall_cap = 10_000 * self.b
        self.validate()

    def validate(self) -> None:
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.s < self.b:
            raise ValueError("steal cost s must be >= cache-miss cost b")
        if self.s % self.b:
            raise ValueError("s must be an integer multiple of b")
        if self.a2 < 1:
            raise ValueError("a2 must be >= 1")
        if self.s_fail > self.s:
            raise ValueError("s_fail must be <= s")
        if self.M % self.B:
            raise ValueError("M must be a multiple of B")


@dataclass
class MetricsRecord:
    w_ops: int = 0                 # operations executed (accesses + computes)
    q_cache_misses: int = 0        # cold/capacity misses
    block_misses: int = 0          # invalidation-forced refetches
    s_steals: int = 0              # successful steals
    failed_steals: int = 0
    stall_cycles: int = 0          # arbitration losses, cycles
    block_wait_cycles: int = 0     # b*block_misses + stall_cycles
    steal_time_cycles: int = 0     # paid by all thieves, success + failure
    makespan_cycles: int = 0
    d_b_cmu: float = 0.0           # max path block-miss cost, cache-miss units
    e_observed_cmu: float = 0.0    # max per-node miss cost, cache-miss units
    usurpations: int = 0
    moves: int = 0                 # block transfers into caches
    cap_hits: int = 0              # stall-cap force grants

    def block_wait_cmu(self, b: int) -> float:
        return self.block_wait_cycles / b


@dataclass
class StealRec:
    order: int
    fork: int
    root: int
    sink: int
    path_index: int
    t: int
    done: bool = False


class Task:
    __slots__ = ("id", "root", "sink", "parent", "stack", "created_t",
                 "start_t", "end_t", "path_stack", "steal_records",
                 "leaves_remaining", "phase", "thief", "steal_rec")

    def __init__(self, tid: int, root: int, sink: int, parent, created_t: int):
        self.id = tid
        self.root = root
        self.sink = sink
        self.parent = parent
        self.stack = None
        self.created_t = created_t
        self.start_t = -1
        self.end_t = -1
        self.path_stack: list[int] = []
        self.steal_records: list[StealRec] = []
        self.leaves_remaining = 0
        self.phase = DOWN
        self.thief = -1
        self.steal_rec: StealRec | None = None


# processor states
P_EXEC, P_IDLE, P_STEALING, P_START, P_START_STOLEN, P_DONE = range(6)


class _Proc:
    __slots__ = ("id", "state", "busy_until", "task", "node", "pos", "reads",
                 "writes", "node_start_t", "node_miss_cycles", "stall_count",
                 "pending_block", "work_units", "payload")

    def __init__(self, pid: int):
        self.id = pid
        self.state = P_IDLE
        self.busy_until = 0
        self.task: Task | None = None
        self.node = -1
        self.pos = 0
        self.reads: list[int] = []
        self.writes: list[int] | None = None
        self.node_start_t = 0
        self.node_miss_cycles = 0
        self.stall_count = 0
        self.pending_block = -1
        self.work_units = 0
        self.payload = None


def compute_writes(op: int, reads: list[int], n_writes: int) -> list[int]:
    """Value semantics per opcode; arithmetic is mod 2**31."""
    m = VALUE_MASK
    if op == sd.OP_NOP:
        return []
    if op == sd.OP_SYNC:
        return [1] * n_writes
    if op == sd.OP_COPYV:
        return [r & m for r in reads[:n_writes]]
    if op == sd.OP_DUP:
        return [reads[0] & m] * n_writes
    if op == sd.OP_ADDV:
        k = n_writes
        return [(reads[j] + reads[k + j]) & m for j in range(k)]
    if op == sd.OP_SUM2_DUP:
        v = (reads[0] + reads[1]) & m
        return [v] * n_writes
    if op == sd.OP_SCAN_DOWN:
        carry, leftsum = (reads[0], reads[1]) if len(reads) == 2 else (0, reads[0])
        return [carry & m, carry & m, (carry + leftsum) & m][:n_writes]
    if op == sd.OP_ADD2:
        return [(reads[0] + reads[1]) & m] + [1] * (n_writes - 1)
    if op == sd.OP_DOT2:
        return [(reads[0] * reads[1] + reads[2] * reads[3]) & m] + [1] * (n_writes - 1)
    if op == sd.OP_MUL2:
        return [(reads[0] * reads[1]) & m] + [1] * (n_writes - 1)
    raise SimFault(f"unknown opcode {op}")


class SimResult:
    def __init__(self, metrics, mem, tasks, trace, outputs, levels, dag):
        self.metrics: MetricsRecord = metrics
        self.mem: MemorySystem = mem
        self.tasks: list[Task] = tasks
        self.trace = trace
        self.outputs: dict[int, list[int]] = outputs
        self.levels = levels
        self.dag = dag


class Engine:
    """One simulation run.  Construct, then call run()."""

    def __init__(self, dag, cfg: SimConfig, inputs=None, levels=None,
                 output_ids=None):
        self.dag = dag
        self.cfg = cfg
        self.levels = levels
        self.rng = random.Random(cfg.seed)
        self.mem = MemorySystem(cfg.p, cfg.M, cfg.B, cfg.b)
        self.policy = ArbitrationPolicy(cfg.arbitration)
        self.procs = [_Proc(i) for i in range(cfg.p)]
        self.deques: list[_deque] = [_deque() for _ in range(cfg.p)]
        self.metrics = MetricsRecord()
        self.trace: list[tuple] = []
        self.tasks: list[Task] = []
        self.done = False
        self.t = 0
        self._attempt_no = 0
        self.deque_height_warns = 0
        self.obs1_warns = 0

        # static maps
        pend = array("b", [0] * dag.n)
        for u in range(dag.n):
            for v in dag.succs(u):
                if dag.kind[v] == JOIN:
                    pend[v] += 1
        self.join_pending = pend
        self.fork_of_join: dict[int, int] = {}
        self.fork_of_child: dict[int, int] = {}
        for f, info in dag.fork_info.items():
            if info[0] >= 0:
                self.fork_of_join[info[0]] = f
                self.fork_of_child[dag.succ1[f]] = f
        self.fork_task: dict[int, Task] = {}

        # leaf prefix counts for task phase bookkeeping
        role = dag.meta.role if dag.meta is not None else None
        self.leaf_prefix = array("l", [0] * (dag.n + 1))
        for u in range(dag.n):
            is_leaf = 1 if (role is not None and role[u] == 3) else 0
            self.leaf_prefix[u + 1] = self.leaf_prefix[u] + is_leaf

        # runtime variable table and segment bookkeeping
        self.var_addr: dict[int, int] = {}
        self.close_map: dict[int, list] = {}
        self.node_block_cycles = array("q", [0] * dag.n)

        # global arrays
        self.garray_base: list[int] = []
        for i, (_, ext) in enumerate(dag.global_arrays):
            self.garray_base.append(self.mem.allocate(REGION_GLOBAL, ("g", i), ext))
        if inputs:
            for aid, values in inputs.items():
                base = self.garray_base[aid]
                for off, v in enumerate(values):
                    self.mem.write_value(base + off, v)
        self.output_ids = list(output_ids or [])
        self.task_execs: dict[int, set[int]] = {}

    # -- helpers -------------------------------------------------------------

    def _ev(self, t, proc, kind, node, detail=None):
        if self.cfg.trace:
            self.trace.append((t, proc, kind, node, detail))

    def _new_task(self, root: int, sink: int, parent, t: int) -> Task:
        task = Task(len(self.tasks), root, sink, parent, t)
        task.leaves_remaining = self.leaf_prefix[sink + 1] - self.leaf_prefix[root]
        self.tasks.append(task)
        return task

    def _resolve(self, ref: int) -> tuple[int, int]:
        region, ident, offset, mode = unpack_ref(ref)
        if region == GLOBAL_ARRAY:
            return self.garray_base[ident] + offset, mode
        addr = self.var_addr.get(ident)
        if addr is None:
            raise SimFault(f"access to dead or undeclared variable {ident}")
        return addr + offset, mode

    # -- node lifecycle ------------------------------------------------------

    def _start_node(self, proc: _Proc, node: int, t: int) -> None:
        task = proc.task
        decls = self.dag.decls.get(node)
        if decls:
            words = sum(d.words for d in decls)
            base = task.stack.push(words)
            off = 0
            vids = []
            for d in decls:
                self.var_addr[d.vid] = base + off
                off += d.words
                vids.append(d.vid)
            self.close_map.setdefault(decls[0].close_node, []).append(
                (task, base, tuple(vids)))
        proc.state = P_EXEC
        proc.node = node
        proc.pos = 0
        proc.reads = []
        proc.writes = None
        proc.node_start_t = t
        proc.node_miss_cycles = 0
        proc.stall_count = 0
        if task.start_t < 0:
            task.start_t = t
        if self.levels is not None:
            self.levels.on_node_start(t, proc.id, task, node)

    def _release_segments(self, node: int) -> None:
        for task, base, vids in self.close_map.pop(node, ()):
            for vid in vids:
                self.var_addr.pop(vid, None)
            task.stack.pop(base)

    def _complete_node(self, proc: _Proc, t: int) -> None:
        dag = self.dag
        u = proc.node
        task = proc.task
        self.metrics.w_ops += dag.extra[u]
        miss_cmu = proc.node_miss_cycles / self.cfg.b
        if miss_cmu > self.metrics.e_observed_cmu:
            self.metrics.e_observed_cmu = miss_cmu
        if self.levels is not None:
            self.levels.on_node_complete(t, proc.id, task, u)
        role = dag.meta.role[u] if dag.meta is not None else 0
        if role == 3 and task.leaves_remaining > 0:
            task.leaves_remaining -= 1
            if task.leaves_remaining <= 1:
                task.phase = UP
        if dag.kind[u] == JOIN:
            f = self.fork_of_join.get(u)
            jt = self.fork_task.get(f)
            if jt is not None and jt.path_stack and jt.path_stack[-1] == f:
                jt.path_stack.pop()
        self._release_segments(u)
        self._ev(t, proc.id, "node_done", u)

        if dag.kind[u] == FORK:
            right = dag.succ1[u]
            left = dag.succ0[u]
            task.path_stack.append(u)
            self.fork_task[u] = task
            dq = self.deques[proc.id]
            if dq:
                prev = dq[-1][0]
                if dag.heights()[prev] < dag.heights()[right] + 1:
                    self.deque_height_warns += 1
            dq.append((right, task))
            if self.levels is not None:
                self.levels.on_queued(t, right, task)
            self._ev(t, proc.id, "push", right)
            self._start_node(proc, left, t)
            return

        if u == task.sink:
            task.end_t = t
            self._ev(t, proc.id, "task_done", u, task.id)
        if u == dag.sink:
            self.done = True
            self.metrics.makespan_cycles = t
            proc.state = P_DONE
            return

        succs = dag.succs(u)
        v = succs[0]
        if dag.kind[v] == JOIN:
            self.join_pending[v] -= 1
            if self.join_pending[v] == 0:
                jf = self.fork_of_join[v]
                jtask = self.fork_task[jf]
                if jtask is not task:
                    self.metrics.usurpations += 1
                    self._ev(t, proc.id, "usurp", v, (task.id, jtask.id))
                    self._set_task(proc, jtask)
                self._start_node(proc, v, t)
            else:
                self._ev(t, proc.id, "join_wait", v)
                self._set_task(proc, None)
                proc.state = P_IDLE
        else:
            self._start_node(proc, v, t)

    def _set_task(self, proc: _Proc, task: Task | None) -> None:
        old = proc.task
        if old is not None:
            s = self.task_execs.get(old.id)
            if s:
                s.discard(proc.id)
        proc.task = task
        if task is not None:
            self.task_execs.setdefault(task.id, set()).add(proc.id)

    # -- main loop -----------------------------------------------------------

    def run(self) -> SimResult:
        cfg = self.cfg
        root_task = self._new_task(self.dag.root, self.dag.sink, None, 0)
        root_task.stack = self.mem.new_stack(("task", 0))
        root_task.thief = 0
        self._set_task(self.procs[0], root_task)
        self._start_node(self.procs[0], self.dag.root, 0)
        for q in self.procs[1:]:
            q.state = P_IDLE
        t = 0
        while not self.done:
            if self.levels is not None:
                self.levels.advance_time(t)
            self.t = t
            access_intents: dict[int, list[_Proc]] = {}
            steal_intents: list[tuple[_Proc, int]] = []
            for proc in self.procs:
                if proc.state == P_DONE or proc.busy_until > t:
                    continue
                self._advance(proc, t, access_intents, steal_intents)
                if self.done:
                    break
            if self.done:
                break
            if access_intents:
                self._arbitrate(access_intents, t)
            if self.done:
                break
            if steal_intents:
                self._steals(steal_intents, t)
            nxt = None
            for proc in self.procs:
                if proc.state == P_DONE:
                    continue
                bu = proc.busy_until if proc.busy_until > t else t + 1
                if nxt is None or bu < nxt:
                    nxt = bu
            if nxt is None:
                raise SimFault("deadlock: no runnable processor before sink")
            t = nxt
            if t > (1 << 48):
                raise SimFault("runaway simulation clock")
        # drain metrics
        self.metrics.q_cache_misses = sum(self.mem.cache_misses)
        self.metrics.block_misses = sum(self.mem.block_misses)
        self.metrics.block_wait_cycles = (cfg.b * self.metrics.block_misses
                                          + self.metrics.stall_cycles)
        self.metrics.moves = self.mem.moves_in
        self.metrics.d_b_cmu = self._d_b()
        outputs = {}
        for aid in self.output_ids:
            base = self.garray_base[aid]
            ext = self.dag.global_arrays[aid][1]
            outputs[aid] = [self.mem.read_value(base + k) for k in range(ext)]
        if self.levels is not None:
            self.levels.finish(self.metrics.makespan_cycles)
        return SimResult(self.metrics, self.mem, self.tasks, self.trace,
                         outputs, self.levels, self.dag)

    def _advance(self, proc: _Proc, t: int, access_intents, steal_intents) -> None:
        dag = self.dag
        while True:
            if proc.state == P_START:
                node, task = proc.payload
                self._set_task(proc, task)
                self._start_node(proc, node, t)
            elif proc.state == P_START_STOLEN:
                task = proc.payload
                task.stack = self.mem.new_stack(("task", task.id))
                self._set_task(proc, task)
                self._start_node(proc, task.root, t)
            if proc.state == P_IDLE:
                dq = self.deques[proc.id]
                if dq:
                    node, task = dq.pop()
                    if self.levels is not None:
                        self.levels.on_pop(t, node, task)
                    self._ev(t, proc.id, "pop", node)
                    proc.state = P_START
                    proc.payload = (node, task)
                    proc.busy_until = t + 1
                    return
                if cfg_p := self.cfg.p:
                    if cfg_p == 1:
                        raise SimFault("p=1 processor idle before sink")
                r = self.rng.randrange(self.cfg.p - 1)
                victim = r if r < proc.id else r + 1
                steal_intents.append((proc, victim))
                proc.state = P_STEALING
                return
            if proc.state == P_STEALING:
                return  # resolved in phase C
            if proc.state != P_EXEC:
                return
            # executing a node
            off, ln = dag.script_off[proc.node], dag.script_len[proc.node]
            if proc.pos < ln:
                ref = dag.scripts[off + proc.pos]
                addr, _ = self._resolve(ref)
                block = addr // self.cfg.B
                proc.pending_block = block
                access_intents.setdefault(block, []).append(proc)
                return
            extra = dag.extra[proc.node]
            if extra == 0 and ln == 0:
                extra = 1  # every node takes at least one cycle
            if extra and proc.pos == ln:
                proc.pos += 1  # mark extra ops as consumed
                proc.busy_until = t + extra
                if self.levels is not None:
                    self.levels.on_work_units(t, proc.id, proc.node, extra, False)
                if proc.busy_until > t:
                    return
            self._complete_node(proc, t)
            if self.done or proc.state != P_EXEC:
                if proc.state in (P_IDLE,):
                    continue
                return

    def _arbitrate(self, intents: dict[int, list[_Proc]], t: int) -> None:
        cfg = self.cfg
        for block in sorted(intents):
            procs = intents[block]
            has_write = False
            for pr in procs:
                ref = self.dag.scripts[self.dag.script_off[pr.node] + pr.pos]
                if ref & 1:
                    has_write = True
                    break
            if has_write and len(procs) > 1:
                ids = sorted(pr.id for pr in procs)
                waits = {pr.id: pr.stall_count for pr in procs}
                capped = [pr for pr in procs if pr.stall_count >= cfg.stall_cap]
                if capped:
                    winner_id = min(pr.id for pr in capped)
                    self.metrics.cap_hits += 1
                else:
                    winner_id = self.policy.pick(block, ids, waits, self.rng)
                winners = [pr for pr in procs if pr.id == winner_id]
                losers = [pr for pr in procs if pr.id != winner_id]
            else:
                winners = sorted(procs, key=lambda pr: pr.id)
                losers = []
            stalled_ids = [pr.id for pr in losers]
            for pr in losers:
                pr.stall_count += 1
                pr.busy_until = t + 1
                self.metrics.stall_cycles += 1
                self.node_block_cycles[pr.node] += 1
            for pr in winners:
                self._grant(pr, t, stalled_ids)
                if self.done:
                    return

    def _grant(self, proc: _Proc, t: int, stalled_ids) -> None:
        dag = self.dag
        cfg = self.cfg
        u = proc.node
        ref = dag.scripts[dag.script_off[u] + proc.pos]
        region, ident, offset, mode = unpack_ref(ref)
        addr, _ = self._resolve(ref)
        cls, latency, dirty_writer = self.mem.access(proc.id, addr, mode, t)
        self.metrics.w_ops += 1
        if cls != HIT:
            proc.node_miss_cycles += cfg.b
            if cls == BLOCK_MISS:
                self.node_block_cycles[u] += cfg.b
        if mode == READ:
            proc.reads.append(self.mem.read_value(addr))
        else:
            if proc.writes is None:
                off, ln = dag.script_off[u], dag.script_len[u]
                n_writes = sum(1 for r in dag.scripts[off:off + ln] if r & 1)
                proc.writes = compute_writes(dag.op[u], proc.reads, n_writes)
                proc.payload = 0
            self.mem.write_value(addr, proc.writes[proc.payload])
            proc.payload += 1
        proc.pos += 1
        proc.stall_count = 0
        proc.busy_until = t + latency
        if self.levels is not None:
            self.levels.on_access(t, proc.id, proc.task, u, addr, addr // cfg.B,
                                  mode, cls, dirty_writer, stalled_ids)
            self.levels.on_work_units(t, proc.id, u, cfg.b, True)

    def _steals(self, intents: list[tuple[_Proc, int]], t: int) -> None:
        cfg = self.cfg
        by_victim: dict[int, list[_Proc]] = {}
        for proc, victim in intents:
            by_victim.setdefault(victim, []).append(proc)
        for victim in sorted(by_victim):
            thieves = sorted(by_victim[victim], key=lambda pr: pr.id)
            dq = self.deques[victim]
            winner = None
            if dq:
                winner = thieves[self.rng.randrange(len(thieves))]
                node, vtask = dq.popleft()  # steal from the top
                n_costs = (cfg.a2 * cfg.s - cfg.s) // cfg.b + 1
                cost = cfg.s + cfg.b * self.rng.randrange(n_costs)
                self.metrics.s_steals += 1
                self.metrics.steal_time_cycles += cost
                sink = self.dag.subtask_sink(node)
                task = self._new_task(node, sink, vtask, t)
                task.thief = winner.id
                fork = self.fork_of_child[node]
                try:
                    pidx = vtask.path_stack.index(fork)
                except ValueError:
                    pidx = -1
                rec = StealRec(len(vtask.steal_records), fork, node, sink, pidx, t)
                vtask.steal_records.append(rec)
                vtask.leaves_remaining -= (self.leaf_prefix[sink + 1]
                                           - self.leaf_prefix[node])
                if vtask.leaves_remaining <= 1:
                    vtask.phase = UP
                winner.state = P_START_STOLEN
                winner.payload = task
                winner.busy_until = t + cost
                if self.levels is not None:
                    self.levels.on_steal_grant(t, node, vtask, task)
                self._ev(t, winner.id, "steal_ok", node, (victim, cost))
            for pr in thieves:
                self._attempt_no += 1
                if self.levels is not None:
                    self.levels.on_steal_attempt(t)
                if pr is winner:
                    continue
                pr.state = P_IDLE
                pr.busy_until = t + cfg.s_fail
                self.metrics.failed_steals += 1
                self.metrics.steal_time_cycles += cfg.s_fail
                self._ev(t, pr.id, "steal_fail", -1, victim)

    def _d_b(self) -> float:
        dag = self.dag
        best = array("q", [0] * dag.n)
        for u in reversed(dag.topo_order()):
            mx = 0
            for v in dag.succs(u):
                if best[v] > mx:
                    mx = best[v]
            best[u] = mx + self.node_block_cycles[u]
        return best[dag.root] / self.cfg.b


def run(instance_or_dag, cfg: SimConfig, levels=None) -> SimResult:
    """Execute a kernel instance (or bare DAG) under the given config."""
    if hasattr(instance_or_dag, "dag"):
        inst = instance_or_dag
        eng = Engine(inst.dag, cfg, inputs=inst.inputs, levels=levels,
                     output_ids=inst.outputs)
    else:
        eng = Engine(instance_or_dag, cfg, levels=levels)
    return eng.run()
