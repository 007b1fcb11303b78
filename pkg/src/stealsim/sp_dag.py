"""Series-parallel computation DAGs with per-node access scripts.

Nodes are O(1) computations: each carries an ordered list of word accesses
(packed into ints, see pack_ref) plus a compute-op count, with the total
bounded by E1 per node.  Storage is columnar (parallel arrays indexed by
dense node id) so that million-node DAGs stay affordable; `SPNode` is a
lightweight view for callers that want an object.

A DAG is immutable once `GraphBuilder.finish` returns.  Node ids are
assigned in construction order, so two builds of the same kernel produce
byte-identical structures.
"""

from __future__ import annotations

from array import array
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

# node kinds
FORK, JOIN, LEAF, SERIAL = 0, 1, 2, 3
KIND_NAMES = {FORK: "FORK", JOIN: "JOIN", LEAF: "LEAF", SERIAL: "SERIAL"}

# access regions / modes
GLOBAL_ARRAY, STACK_LOCAL = 0, 1
READ, WRITE = 0, 1

# opcodes: how write values are derived from read values (all mod 2**31)
OP_NOP = 0        # no writes
OP_SYNC = 1       # every write gets 1 (completion flags)
OP_COPYV = 2      # k reads, k writes: w[j] = r[j]
OP_DUP = 3        # 1 read, k writes: w[j] = r[0]
OP_ADDV = 4       # 2k reads, k writes: w[j] = r[j] + r[k+j]
OP_SUM2_DUP = 5   # 2 reads, k writes: w[j] = r[0] + r[1]
OP_SCAN_DOWN = 6  # reads (carry, leftsum); writes (carry, carry, carry+leftsum)
OP_ADD2 = 7       # 2 reads, 1 write
OP_DOT2 = 8       # 4 reads, 1 write: r0*r1 + r2*r3
OP_MUL2 = 9       # 2 reads, 1 write: r0*r1

# compute-op cycles charged per opcode, as a function of write count k
_COMPUTE_OPS = {
    OP_NOP: lambda k: 0,
    OP_SYNC: lambda k: 0,
    OP_COPYV: lambda k: 0,
    OP_DUP: lambda k: 0,
    OP_ADDV: lambda k: k,
    OP_SUM2_DUP: lambda k: 1,
    OP_SCAN_DOWN: lambda k: 1,
    OP_ADD2: lambda k: 1,
    OP_DOT2: lambda k: 2,
    OP_MUL2: lambda k: 1,
}

E1 = 8  # per-node bound on reads+writes+compute ops
LOCAL_WORDS_MAX = 6  # plain (non-array) locals per node
VALUE_MASK = (1 << 31) - 1

_OFF_SHIFT = 32
_ID_SHIFT = 2
_ID_MASK = (1 << 30) - 1


def pack_ref(region: int, ident: int, offset: int, mode: int) -> int:
    """Pack one VarRef into an int: mode | region<<1 | id<<2 | offset<<32."""
    if not 0 <= ident <= _ID_MASK:
        raise ValueError(f"ref id out of range: {ident}")
    if offset < 0:
        raise ValueError("negative offset")
    return mode | (region << 1) | (ident << _ID_SHIFT) | (offset << _OFF_SHIFT)


def unpack_ref(ref: int) -> tuple[int, int, int, int]:
    """Inverse of pack_ref: (region, ident, offset, mode)."""
    return ((ref >> 1) & 1, (ref >> _ID_SHIFT) & _ID_MASK, ref >> _OFF_SHIFT, ref & 1)


@dataclass(frozen=True)
class VarRef:
    region: int
    ident: int
    offset: int
    mode: int

    @classmethod
    def from_packed(cls, ref: int) -> "VarRef":
        return cls(*unpack_ref(ref))

    def packed(self) -> int:
        return pack_ref(self.region, self.ident, self.offset, self.mode)


def var_id(node: int, slot: int) -> int:
    """Stack variable ids encode the declaring node: node*8 + slot."""
    return node * 8 + slot


def var_owner(vid: int) -> int:
    return vid // 8


@dataclass(frozen=True)
class Decl:
    """One variable declared by a node, live until `close_node` completes.

    is_array marks procedure-level transfer arrays (allowed only at nodes
    tagged as region entries); plain locals are capped at LOCAL_WORDS_MAX
    words per node.
    """

    vid: int
    words: int
    is_array: bool
    close_node: int


@dataclass
class SPNode:
    """View of one node; field layout mirrors the columnar storage."""

    id: int
    kind: int
    op: int
    script: tuple[VarRef, ...]
    extra_ops: int
    succs: tuple[int, ...]
    decls: tuple[Decl, ...]

    @property
    def kind_name(self) -> str:
        return KIND_NAMES[self.kind]


@dataclass
class ValidationReport:
    violations: list[tuple[str, str]] = field(default_factory=list)

    def add(self, code: str, detail: str) -> None:
        self.violations.append((code, detail))

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {c for c, _ in self.violations}


class SPDag:
    """Immutable series-parallel DAG in columnar form."""

    def __init__(self, builder: "GraphBuilder", root: int, sink: int):
        self.n = len(builder.kind)
        self.kind = builder.kind
        self.op = builder.op
        self.extra = builder.extra
        self.succ0 = builder.succ0
        self.succ1 = builder.succ1
        self.script_off = builder.script_off
        self.script_len = builder.script_len
        self.scripts = builder.scripts
        self.decls: dict[int, tuple[Decl, ...]] = builder.decls
        self.fork_info: dict[int, tuple[int, int, int]] = builder.fork_info
        self.root = root
        self.sink = sink
        self.global_arrays: list[tuple[str, int]] = list(builder.global_arrays)
        self.meta = None  # kernels attach a KernelMeta
        self._ht: Optional[list[int]] = None
        self._preds: Optional[list[tuple[int, ...]]] = None
        # id ranges are validated here so pack_ref stays within its field
        if self.n * 8 > _ID_MASK:
            raise ValueError("DAG too large for packed var ids")

    # -- structure ---------------------------------------------------------

    def succs(self, u: int) -> tuple[int, ...]:
        a, b = self.succ0[u], self.succ1[u]
        if a < 0:
            return ()
        if b < 0:
            return (a,)
        return (a, b)

    def preds(self) -> list[tuple[int, ...]]:
        if self._preds is None:
            acc: list[list[int]] = [[] for _ in range(self.n)]
            for u in range(self.n):
                for v in self.succs(u):
                    acc[v].append(u)
            self._preds = [tuple(x) for x in acc]
        return self._preds

    def node(self, u: int) -> SPNode:
        off, ln = self.script_off[u], self.script_len[u]
        script = tuple(VarRef.from_packed(r) for r in self.scripts[off:off + ln])
        return SPNode(u, self.kind[u], self.op[u], script, self.extra[u],
                      self.succs(u), self.decls.get(u, ()))

    def node_refs(self, u: int):
        off, ln = self.script_off[u], self.script_len[u]
        return self.scripts[off:off + ln]

    def topo_order(self) -> list[int]:
        indeg = [0] * self.n
        for u in range(self.n):
            for v in self.succs(u):
                indeg[v] += 1
        order = []
        stack = [u for u in range(self.n) if indeg[u] == 0]
        while stack:
            u = stack.pop()
            order.append(u)
            for v in self.succs(u):
                indeg[v] -= 1
                if indeg[v] == 0:
                    stack.append(v)
        if len(order) != self.n:
            raise ValueError("cycle in DAG")
        return order

    def heights(self) -> list[int]:
        """ht(sink)=0; ht(u) = 1 + max over successors, measured in edges."""
        if self._ht is None:
            ht = [0] * self.n
            for u in reversed(self.topo_order()):
                ss = self.succs(u)
                if ss:
                    ht[u] = 1 + max(ht[v] for v in ss)
            self._ht = ht
        return self._ht

    def critical_path_nodes(self) -> int:
        """T_inf: length in nodes of the longest root-to-sink path."""
        return self.heights()[self.root] + 1

    def subtask_nodes(self, w: int) -> list[int]:
        """Nodes of the subtask rooted at fork-right-child w (sink inclusive).

        Only valid for nodes registered as stealable roots (fork children);
        traversal stops at the subtask sink so the enclosing join is excluded.
        """
        sink_w = self._subtask_sink(w)
        seen = {w}
        stack = [w]
        out = []
        while stack:
            u = stack.pop()
            out.append(u)
            if u == sink_w:
                continue
            for v in self.succs(u):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return out

    def _subtask_sink(self, w: int) -> int:
        info = self.fork_info.get(w)
        if info is not None and info[0] == -1:
            return info[1]  # registered (sink, size_hint) entry for a child
        raise KeyError(f"node {w} is not a registered stealable root")

    def subtask_sink(self, w: int) -> int:
        return self._subtask_sink(w)

    def size_hint(self, w: int) -> int:
        """Input-size measure of the subtask at w (kernel-declared units)."""
        info = self.fork_info.get(w)
        if info is not None and info[0] == -1:
            return info[2]
        raise KeyError(f"node {w} has no size hint")

    def task_size(self, w: int, cap: Optional[int] = None) -> int:
        """|tau|: distinct one-word variables accessed by the subtask at w.

        With `cap`, stops early once the count exceeds cap and returns the
        partial count (used where only min(|tau|, threshold) matters).
        """
        words: set[tuple[int, int, int]] = set()
        for u in self.subtask_nodes(w):
            off, ln = self.script_off[u], self.script_len[u]
            for r in self.scripts[off:off + ln]:
                region, ident, offset, _ = unpack_ref(r)
                words.add((region, ident, offset))
            if cap is not None and len(words) > cap:
                return len(words)
        return len(words)

    # -- validation --------------------------------------------------------

    def validate(self, e2: Optional[int] = None) -> ValidationReport:
        return validate(self, e2=e2)

    # -- export ------------------------------------------------------------

    def export_json(self) -> dict:
        """Debug export; not a stable wire format."""
        nodes = []
        for u in range(self.n):
            nd = self.node(u)
            nodes.append({
                "id": u,
                "kind": nd.kind_name,
                "op": nd.op,
                "script": [(r.region, r.ident, r.offset, r.mode) for r in nd.script],
                "extra_ops": nd.extra_ops,
                "succs": list(nd.succs),
                "decls": [(d.vid, d.words, d.is_array, d.close_node) for d in nd.decls],
            })
        return {
            "root": self.root,
            "sink": self.sink,
            "global_arrays": list(self.global_arrays),
            "nodes": nodes,
        }


class GraphBuilder:
    """Accumulates nodes/edges; `finish` freezes them into an SPDag.

    fork_info carries two record shapes keyed by node id:
      fork id   -> (join_id, left_sink, right_sink)
      child id  -> (-1, subtask_sink, size_hint)   # stealable roots
    """

    def __init__(self):
        self.kind = array("b")
        self.op = array("b")
        self.extra = array("b")
        self.succ0 = array("i")
        self.succ1 = array("i")
        self.script_off = array("l")
        self.script_len = array("i")
        self.scripts = array("q")
        self.decls: dict[int, tuple[Decl, ...]] = {}
        self.fork_info: dict[int, tuple[int, int, int]] = {}
        self.global_arrays: list[tuple[str, int]] = []

    def n_nodes(self) -> int:
        return len(self.kind)

    def add_array(self, name: str, extent: int) -> int:
        if extent <= 0:
            raise ValueError("array extent must be positive")
        self.global_arrays.append((name, extent))
        return len(self.global_arrays) - 1

    def add_node(self, kind: int, op: int = OP_NOP,
                 refs: Iterable[int] = (), extra: Optional[int] = None) -> int:
        refs = list(refs)
        writes = sum(1 for r in refs if r & 1)
        if extra is None:
            extra = _COMPUTE_OPS[op](writes)
        if len(refs) + extra > E1:
            raise ValueError(f"node script exceeds E1={E1}: "
                             f"{len(refs)} refs + {extra} ops")
        u = len(self.kind)
        self.kind.append(kind)
        self.op.append(op)
        self.extra.append(extra)
        self.succ0.append(-1)
        self.succ1.append(-1)
        self.script_off.append(len(self.scripts))
        self.script_len.append(len(refs))
        self.scripts.extend(refs)
        return u

    def declare(self, node: int, slot: int, words: int,
                is_array: bool, close_node: int) -> int:
        vid = var_id(node, slot)
        cur = self.decls.get(node, ())
        if any(d.vid == vid for d in cur):
            raise ValueError("duplicate declaration slot")
        self.decls[node] = cur + (Decl(vid, words, is_array, close_node),)
        return vid

    def set_close(self, node: int, close_node: int) -> None:
        self.decls[node] = tuple(
            Decl(d.vid, d.words, d.is_array, close_node) for d in self.decls[node])

    def edge(self, u: int, v: int) -> None:
        if self.succ0[u] < 0:
            self.succ0[u] = v
        elif self.succ1[u] < 0:
            self.succ1[u] = v
        else:
            raise ValueError(f"node {u} already has two successors")

    def register_fork(self, fork: int, join: int,
                      left_sink: int, right_sink: int) -> None:
        self.fork_info[fork] = (join, left_sink, right_sink)

    def register_stealable(self, child: int, sink: int, size_hint: int) -> None:
        self.fork_info[child] = (-1, sink, size_hint)

    def finish(self, root: int, sink: int) -> SPDag:
        return SPDag(self, root, sink)


# -- public composition ops -------------------------------------------------

def single_node(kind: int = LEAF, op: int = OP_NOP, refs: Iterable[int] = ()) -> SPDag:
    b = GraphBuilder()
    u = b.add_node(kind, op, refs)
    return b.finish(u, u)


def chain(k: int) -> SPDag:
    if k < 1:
        raise ValueError("chain needs at least one node")
    b = GraphBuilder()
    prev = b.add_node(SERIAL)
    first = prev
    for _ in range(k - 1):
        u = b.add_node(SERIAL)
        b.edge(prev, u)
        prev = u
    return b.finish(first, prev)


def _copy_into(b: GraphBuilder, g: SPDag, array_base: int) -> int:
    """Append g's nodes into b, remapping node ids, var ids and array ids."""
    base = b.n_nodes()
    for u in range(g.n):
        refs = []
        for r in g.node_refs(u):
            region, ident, offset, mode = unpack_ref(r)
            if region == STACK_LOCAL:
                ident += base * 8
            else:
                ident += array_base
            refs.append(pack_ref(region, ident, offset, mode))
        b.add_node(g.kind[u], g.op[u], refs, g.extra[u])
    for u in range(g.n):
        for v in g.succs(u):
            b.edge(base + u, base + v)
    for u, ds in g.decls.items():
        b.decls[base + u] = tuple(
            Decl(d.vid + base * 8, d.words, d.is_array, d.close_node + base)
            for d in ds)
    for u, (a, x, y) in g.fork_info.items():
        if a == -1:
            b.fork_info[base + u] = (-1, base + x, y)
        else:
            b.fork_info[base + u] = (base + a, base + x, base + y)
    return base


def compose_series(g1: SPDag, g2: SPDag) -> SPDag:
    """Sequencing: connect g1's terminal node to g2's start node.

    Returns a fresh DAG; inputs are unchanged.  Kernel metadata is not
    carried over (kernels sequence internally when metadata matters).
    """
    if g1.n == 0 or g2.n == 0:
        raise ValueError("cannot sequence an empty DAG")
    b = GraphBuilder()
    for name, ext in g1.global_arrays:
        b.add_array(name, ext)
    base1 = _copy_into(b, g1, 0)
    abase = len(g1.global_arrays)
    for name, ext in g2.global_arrays:
        b.add_array(name, ext)
    base2 = _copy_into(b, g2, abase)
    b.edge(base1 + g1.sink, base2 + g2.root)
    return b.finish(base1 + g1.root, base2 + g2.sink)


def compose_parallel(g1: SPDag, g2: SPDag) -> SPDag:
    """Parallel construct: new FORK start s and JOIN terminal t around g1, g2."""
    if g1.n == 0 or g2.n == 0:
        raise ValueError("cannot parallel-compose an empty DAG")
    b = GraphBuilder()
    for name, ext in g1.global_arrays:
        b.add_array(name, ext)
    s = b.add_node(FORK)
    base1 = _copy_into(b, g1, 0)
    abase = len(g1.global_arrays)
    for name, ext in g2.global_arrays:
        b.add_array(name, ext)
    base2 = _copy_into(b, g2, abase)
    t = b.add_node(JOIN)
    b.edge(s, base1 + g1.root)
    b.edge(s, base2 + g2.root)
    b.edge(base1 + g1.sink, t)
    b.edge(base2 + g2.sink, t)
    b.register_fork(s, t, base1 + g1.sink, base2 + g2.sink)
    b.register_stealable(base2 + g2.root, base2 + g2.sink, g2.n)
    return b.finish(s, t)


# -- validation --------------------------------------------------------------

def validate(dag: SPDag, e2: Optional[int] = None,
             sp_check: bool = True) -> ValidationReport:
    """Structural + access-discipline audit; findings go into the report.

    Checks: degree discipline per kind, acyclicity + series-parallel
    reducibility, fork/join registration consistency, per-word write counts
    against the limited-access bound e2, local-declaration sizes, script
    budget E1, and that STACK_LOCAL refs name a declared variable.
    """
    rep = ValidationReport()
    if e2 is None:
        e2 = dag.meta.e2 if dag.meta is not None else 4

    # degrees
    preds = dag.preds()
    for u in range(dag.n):
        ns, np_ = len(dag.succs(u)), len(preds[u])
        k = dag.kind[u]
        if k == FORK and ns != 2:
            rep.add("degree", f"FORK {u} has {ns} successors")
        if k != FORK and ns > 1:
            rep.add("degree", f"non-fork {u} has {ns} successors")
        if k == JOIN and np_ != 2:
            rep.add("degree", f"JOIN {u} has {np_} predecessors")
        if k != JOIN and np_ > 1:
            rep.add("degree", f"non-join {u} has {np_} predecessors")
        if u != dag.root and np_ == 0:
            rep.add("degree", f"unreachable node {u}")
        if u != dag.sink and ns == 0:
            rep.add("degree", f"dead-end node {u}")

    try:
        dag.topo_order()
    except ValueError:
        rep.add("cycle", "graph has a cycle")
        return rep

    if sp_check and not _is_series_parallel(dag):
        rep.add("non_sp", "graph does not reduce to a single series-parallel edge")

    # limited access: writes per word <= e2
    writes: dict[tuple[int, int, int], int] = {}
    extents = {i: ext for i, (_, ext) in enumerate(dag.global_arrays)}
    decl_words = {}
    for u, ds in dag.decls.items():
        for d in ds:
            decl_words[d.vid] = d.words
    for u in range(dag.n):
        off, ln = dag.script_off[u], dag.script_len[u]
        if ln + dag.extra[u] > E1:
            rep.add("e1", f"node {u} script budget {ln}+{dag.extra[u]} > {E1}")
        for r in dag.scripts[off:off + ln]:
            region, ident, offset, mode = unpack_ref(r)
            if region == GLOBAL_ARRAY:
                if ident not in extents or offset >= extents[ident]:
                    rep.add("bounds", f"node {u} global ref ({ident},{offset})")
                    continue
            else:
                if ident not in decl_words or offset >= decl_words[ident]:
                    rep.add("undeclared",
                            f"node {u} stack ref var {ident} offset {offset}")
                    continue
            if mode == WRITE:
                key = (region, ident, offset)
                writes[key] = writes.get(key, 0) + 1
    for (region, ident, offset), cnt in writes.items():
        if cnt > e2:
            where = "global" if region == GLOBAL_ARRAY else "stack"
            rep.add("limited_access",
                    f"{where} word ({ident},{offset}) written {cnt} times > e2={e2}")

    # declarations
    entry_nodes = set()
    if dag.meta is not None:
        entry_nodes = {r.entry for r in dag.meta.regions}
    for u, ds in dag.decls.items():
        plain = sum(d.words for d in ds if not d.is_array)
        if plain > LOCAL_WORDS_MAX:
            rep.add("locals", f"node {u} declares {plain} plain local words")
        if any(d.is_array for d in ds) and dag.meta is not None and u not in entry_nodes:
            rep.add("locals", f"node {u} declares an array but is not a region entry")

    # fork/join registration
    for f, info in dag.fork_info.items():
        if info[0] == -1:
            continue
        j, ls, rs = info
        if dag.kind[f] != FORK or dag.kind[j] != JOIN:
            rep.add("forkjoin", f"registration ({f},{j}) kinds mismatch")
            continue
        if set(preds[j]) != {ls, rs}:
            rep.add("forkjoin", f"join {j} preds {preds[j]} != sinks ({ls},{rs})")
    return rep


def _is_series_parallel(dag: SPDag) -> bool:
    """Two-terminal SP recognition by series reduction over the node graph.

    Repeatedly splices out interior nodes with in-degree and out-degree 1
    (merging the parallel edges this creates); SP iff everything between
    root and sink disappears.
    """
    succs: dict[int, set[int]] = {u: set(dag.succs(u)) for u in range(dag.n)}
    preds: dict[int, set[int]] = {u: set() for u in range(dag.n)}
    for u, vs in succs.items():
        for v in vs:
            preds[v].add(u)
    work = [u for u in range(dag.n)
            if u not in (dag.root, dag.sink)
            and len(succs[u]) == 1 and len(preds[u]) == 1]
    alive = set(range(dag.n))
    inwork = set(work)
    while work:
        u = work.pop()
        inwork.discard(u)
        if u not in alive or len(succs[u]) != 1 or len(preds[u]) != 1:
            continue
        (p,), (s,) = preds[u], succs[u]
        if p == s:
            return False
        alive.discard(u)
        succs[p].discard(u)
        preds[s].discard(u)
        succs[p].add(s)    # set-ness merges parallel edges
        preds[s].add(p)
        for x in (p, s):
            if (x in alive and x not in (dag.root, dag.sink)
                    and len(succs[x]) == 1 and len(preds[x]) == 1
                    and x not in inwork):
                work.append(x)
                inwork.add(x)
    return alive == {dag.root, dag.sink} or (
        dag.root == dag.sink and alive == {dag.root})
