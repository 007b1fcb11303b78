"""Shared machinery for emitting kernel DAGs.

Kernels are built from balanced binary fork/join trees whose leaves are
either O(1) node chains (tree computations) or whole recursive-call
subdags (the forking apparatus of hierarchical algorithms).  Alongside the
DAG itself we record the structural metadata the analysis layer needs:
which nodes form each tree (down-pass forks / up-pass joins / leaf
chains), fork-join twinning and depths, and the nested call regions with
their declared transfer arrays.

Node-id discipline: nodes of a region occupy one contiguous id interval
(construction is depth-first), so region membership is an interval test.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .. import sp_dag as sd
from ..sp_dag import (FORK, JOIN, LEAF, SERIAL, GLOBAL_ARRAY, STACK_LOCAL,
                      READ, WRITE, GraphBuilder, pack_ref, var_id)

# tree roles
R_NONE, R_DOWN, R_UP, R_LEAF = 0, 1, 2, 3


@dataclass
class KernelSpec:
    """Static description of a kernel family for the analysis layer."""

    name: str
    type_level: int                   # 0 sequential, 1 tree/BP, 2 hierarchical
    c: int                            # number of recursive-call collections
    s_of_n: Callable[[int], int]      # recursive subproblem size bound
    S_l: Callable[[int], int]         # local-variable space per call of size r
    c1: float = 1.0                   # subtree balance lower constant
    c2: float = 1.0
    alpha: float = 0.5
    write_pattern: str = "regular"    # regular | leaf_only | local_parent
    e2: int = 4                       # limited-access bound per word


@dataclass
class TreeRec:
    """One down-pass/up-pass tree pair."""

    id: int
    kind: str                          # debug label: "bp1", "spawn", ...
    c1: float
    c2: float
    alpha: float
    down_root: int = -1
    up_root: int = -1
    forks: list[int] = field(default_factory=list)
    joins: list[int] = field(default_factory=list)
    twin: dict[int, int] = field(default_factory=dict)
    fork_depth: dict[int, int] = field(default_factory=dict)
    children: dict[int, tuple] = field(default_factory=dict)  # fork -> 2 items
    leaf_groups: list[list[int]] = field(default_factory=list)
    leaf_parent: list[int] = field(default_factory=list)      # per group
    tree_parent: dict[int, int] = field(default_factory=dict)  # node -> fork above
    height: int = 0                    # leaf depth (root fork depth 0)
    has_global_writes: bool = False
    regular_stride: int = 0            # a, when internal nodes write regularly
    single_leaf: list[int] | None = None  # degenerate tree: no forks

    def down_subtree_count(self, item) -> int:
        """Node count of the down-side subtree at `item` (fork or leaf grp)."""
        kind, ident = item
        if kind == "leaf":
            return len(self.leaf_groups[ident])
        total = 1
        for ch in self.children[ident]:
            total += self.down_subtree_count(ch)
        return total

    def down_members(self, item) -> list[int]:
        """Down-side node ids of the subtree at `item` (forks + leaf chains)."""
        kind, ident = item
        if kind == "leaf":
            return list(self.leaf_groups[ident])
        out = [ident]
        for ch in self.children[ident]:
            out.extend(self.down_members(ch))
        return out


@dataclass
class RegionRec:
    """A Type-2 call instance or a complete BP computation instance."""

    id: int
    kind: str                          # "type2" | "bp"
    size: int                          # input-size measure of the call
    lo: int = -1
    hi: int = -1
    entry: int = -1
    exit: int = -1
    parent: int = -1
    anchors: list[tuple[str, int]] = field(default_factory=list)  # ("g",aid)|("s",vid)
    c: int = 1


class KernelMeta:
    """Attached to SPDag.meta; read by validation audits and the levels layer."""

    def __init__(self, name: str, n: int, spec: KernelSpec, chunk: int):
        self.name = name
        self.n = n
        self.spec = spec
        self.chunk = chunk
        self.e2 = spec.e2
        self.trees: list[TreeRec] = []
        self.regions: list[RegionRec] = []
        self.tree_id = None   # array('i'), -1 outside trees
        self.role = None      # array('b')
        self.region_of = None  # array('i'), innermost region id or -1
        self.output_arrays: list[int] = []

    def finalize(self, n_nodes: int) -> None:
        from array import array
        self.tree_id = array("i", [-1] * n_nodes)
        self.role = array("b", [R_NONE] * n_nodes)
        self.region_of = array("i", [-1] * n_nodes)
        for t in self.trees:
            for f in t.forks:
                self.tree_id[f] = t.id
                self.role[f] = R_DOWN
            for j in t.joins:
                self.tree_id[j] = t.id
                self.role[j] = R_UP
            for grp in t.leaf_groups:
                for u in grp:
                    self.tree_id[u] = t.id
                    self.role[u] = R_LEAF
            if t.single_leaf:
                for u in t.single_leaf:
                    self.tree_id[u] = t.id
                    self.role[u] = R_LEAF
        for r in self.regions:  # creation order: inner regions overwrite outer
            for u in range(r.lo, r.hi + 1):
                self.region_of[u] = r.id

    def region_chain(self, u: int):
        rid = self.region_of[u]
        while rid >= 0:
            yield rid
            rid = self.regions[rid].parent


@dataclass
class KernelInstance:
    """A built kernel: DAG plus concrete inputs and its sequential oracle."""

    name: str
    n: int
    dag: object
    inputs: dict[int, list[int]]      # array id -> initial contents
    outputs: list[int]                # array ids holding results
    spec: KernelSpec
    oracle: Callable[[], dict[int, list[int]]]  # expected output contents


class KernelBuilder:
    """GraphBuilder plus metadata recording."""

    def __init__(self, name: str, n: int, spec: KernelSpec, chunk: int):
        self.b = GraphBuilder()
        self.meta = KernelMeta(name, n, spec, chunk)
        self._region_stack: list[int] = []

    # -- nodes ---------------------------------------------------------------

    def node(self, kind: int, op: int = sd.OP_NOP, refs=(), extra=None) -> int:
        return self.b.add_node(kind, op, refs, extra)

    def edge(self, u: int, v: int) -> None:
        self.b.edge(u, v)

    def array(self, name: str, extent: int) -> int:
        return self.b.add_array(name, extent)

    # -- regions ---------------------------------------------------------------

    def begin_region(self, kind: str, size: int, c: int = 1) -> RegionRec:
        rec = RegionRec(id=len(self.meta.regions), kind=kind, size=size, c=c)
        rec.lo = self.b.n_nodes()
        rec.parent = self._region_stack[-1] if self._region_stack else -1
        self.meta.regions.append(rec)
        self._region_stack.append(rec.id)
        return rec

    def end_region(self, rec: RegionRec, entry: int, exit_: int,
                   anchors: list[tuple[str, int]]) -> None:
        assert self._region_stack and self._region_stack[-1] == rec.id
        self._region_stack.pop()
        rec.hi = self.b.n_nodes() - 1
        rec.entry, rec.exit = entry, exit_
        rec.anchors = anchors

    # -- trees -----------------------------------------------------------------

    def new_tree(self, kind: str, spec: KernelSpec) -> TreeRec:
        t = TreeRec(id=len(self.meta.trees), kind=kind,
                    c1=spec.c1, c2=spec.c2, alpha=spec.alpha)
        self.meta.trees.append(t)
        return t

    def finish(self, root: int, sink: int, outputs: list[int]):
        dag = self.b.finish(root, sink)
        self.meta.output_arrays = outputs
        self.meta.finalize(dag.n)
        dag.meta = self.meta
        return dag


class TreeCallbacks:
    """Per-kernel hooks invoked by build_tree.

    fork(lo, hi, parent_fork, side, depth) -> fork node id (declares its
        segment; close node is patched to the twin join afterwards)
    join(lo, hi, fork, parent_fork, side, depth) -> join node id
    leaf(pos, parent_fork, side, depth) -> (entry, exit, [node ids])
    size_hint(lo, hi) -> task input-size measure for stealable registration
    """

    def fork(self, lo, hi, parent_fork, side, depth):  # pragma: no cover
        raise NotImplementedError

    def join(self, lo, hi, fork, parent_fork, side, depth):  # pragma: no cover
        raise NotImplementedError

    def leaf(self, pos, parent_fork, side, depth):  # pragma: no cover
        raise NotImplementedError

    def size_hint(self, lo, hi) -> int:  # pragma: no cover
        raise NotImplementedError


def build_tree(kb: KernelBuilder, tree: TreeRec, cb: TreeCallbacks,
               lo: int, hi: int, parent_fork: int = -1, side: int = 0,
               depth: int = 0) -> tuple[int, int]:
    """Balanced binary fork/join tree over leaf positions [lo, hi).

    Returns (entry, exit) node ids.  Records depths, twins, children, leaf
    groups and stealable-task registrations into `tree` and the builder.
    """
    if hi - lo == 1:
        entry, exit_, nodes = cb.leaf(lo, parent_fork, side, depth)
        grp = len(tree.leaf_groups)
        tree.leaf_groups.append(list(nodes))
        tree.leaf_parent.append(parent_fork)
        for u in nodes:
            tree.tree_parent[u] = parent_fork
        tree.height = max(tree.height, depth)
        if parent_fork < 0:
            tree.single_leaf = list(nodes)
            tree.down_root = entry
            tree.up_root = exit_
        return entry, exit_, ("leaf", grp)

    mid = (lo + hi) // 2
    f = cb.fork(lo, hi, parent_fork, side, depth)
    tree.forks.append(f)
    tree.fork_depth[f] = depth
    if parent_fork >= 0:
        tree.tree_parent[f] = parent_fork
    le, lx, litem = build_tree(kb, tree, cb, lo, mid, f, 0, depth + 1)
    re, rx, ritem = build_tree(kb, tree, cb, mid, hi, f, 1, depth + 1)
    j = cb.join(lo, hi, f, parent_fork, side, depth)
    tree.joins.append(j)
    tree.twin[f] = j
    tree.twin[j] = f
    if parent_fork >= 0:
        tree.tree_parent[j] = parent_fork
    tree.children[f] = (litem, ritem)
    kb.edge(f, le)
    kb.edge(f, re)
    kb.edge(lx, j)
    kb.edge(rx, j)
    kb.b.register_fork(f, j, lx, rx)
    kb.b.register_stealable(re, rx, cb.size_hint(mid, hi))
    if kb.b.decls.get(f):
        kb.b.set_close(f, j)
    if parent_fork < 0:
        tree.down_root = f
        tree.up_root = j
    return f, j, ("f", f)


def tree_entry_exit(kb, tree, cb, n_leaves) -> tuple[int, int]:
    e, x, _ = build_tree(kb, tree, cb, 0, n_leaves)
    return e, x


def split_words(words: list[int], per_node: int, last_budget: int) -> list[list[int]]:
    """Split leaf word indices into chain-node groups.

    Every group holds at most per_node words; the final group at most
    last_budget (it carries the completion deposit as an extra write).
    """
    groups = [words[i:i + per_node] for i in range(0, len(words), per_node)]
    if len(groups[-1]) > last_budget:
        tail = groups.pop()
        groups.append(tail[:len(tail) - last_budget])
        groups.append(tail[len(tail) - last_budget:])
    return groups


def deposit_ref(parent_fork: int, side: int, slot: int = 0) -> int:
    """Completion/value deposit into the parent fork's segment slot."""
    return pack_ref(STACK_LOCAL, var_id(parent_fork, slot), side, WRITE)


def chain(kb: KernelBuilder, nodes: list[int]) -> tuple[int, int]:
    for a, b in zip(nodes, nodes[1:]):
        kb.edge(a, b)
    return nodes[0], nodes[-1]
