"""Prefix sums as two sequenced balanced-tree passes.

Pass one (reduce) computes every subtree sum bottom-up; pass two (scan)
pushes exclusive carries top-down and has the leaves emit carry+input.
Internal-node writes to the partials/carries arrays follow the regular
inorder pattern with stride a=1: subtree sums land at slot lo+hi-1 of a
2n-1 array (full-tree inorder), carries at the fork's rank among internal
nodes.  Value deposits between tree levels go through each fork's stack
segment, which is what makes the execution-stack delay accounting
non-vacuous for this kernel.
"""

from __future__ import annotations

import random

from .. import sp_dag as sd
from ..sp_dag import (FORK, JOIN, LEAF, GLOBAL_ARRAY, STACK_LOCAL, READ,
                      WRITE, pack_ref, var_id)
from .base import (KernelBuilder, KernelInstance, KernelSpec, R_LEAF,
                   TreeCallbacks, build_tree)

VALUE_MASK = (1 << 31) - 1


def _gref(aid: int, off: int, mode: int) -> int:
    return pack_ref(GLOBAL_ARRAY, aid, off, mode)


def _sref(vid: int, off: int, mode: int) -> int:
    return pack_ref(STACK_LOCAL, vid, off, mode)


class _ReduceCB(TreeCallbacks):
    """Up-sweep: leaves lift inputs, joins sum children into P1 + parent seg."""

    def __init__(self, kb: KernelBuilder, a_in: int, a_p1: int):
        self.kb, self.a_in, self.a_p1 = kb, a_in, a_p1

    def fork(self, lo, hi, parent, side, depth):
        f = self.kb.node(FORK)
        self.kb.b.declare(f, 0, 2, False, f)  # children deposit sums here
        return f

    def join(self, lo, hi, fork, parent, side, depth):
        refs = [_sref(var_id(fork, 0), 0, READ), _sref(var_id(fork, 0), 1, READ),
                _gref(self.a_p1, lo + hi - 1, WRITE)]
        if parent >= 0:
            refs.append(_sref(var_id(parent, 0), side, WRITE))
        return self.kb.node(JOIN, sd.OP_SUM2_DUP, refs)

    def leaf(self, pos, parent, side, depth):
        refs = [_gref(self.a_in, pos, READ), _gref(self.a_p1, 2 * pos, WRITE)]
        if parent >= 0:
            refs.append(_sref(var_id(parent, 0), side, WRITE))
        u = self.kb.node(LEAF, sd.OP_DUP, refs)
        return u, u, [u]

    def size_hint(self, lo, hi):
        return hi - lo


class _ScanCB(TreeCallbacks):
    """Down-sweep: forks split carries (reading left sums from P1), leaves
    write carry+input; joins are completion sync only."""

    def __init__(self, kb: KernelBuilder, a_in: int, a_out: int,
                 a_p1: int, a_p2: int):
        self.kb = kb
        self.a_in, self.a_out, self.a_p1, self.a_p2 = a_in, a_out, a_p1, a_p2

    def fork(self, lo, hi, parent, side, depth):
        mid = (lo + hi) // 2
        f = self.kb.b.n_nodes()  # id of the node about to be created
        refs = []
        if parent >= 0:
            refs.append(_sref(var_id(parent, 0), side, READ))
        refs += [_gref(self.a_p1, lo + mid - 1, READ),
                 _gref(self.a_p2, (lo + hi - 1) // 2, WRITE),
                 _sref(var_id(f, 0), 0, WRITE), _sref(var_id(f, 0), 1, WRITE)]
        made = self.kb.node(FORK, sd.OP_SCAN_DOWN, refs)
        assert made == f
        self.kb.b.declare(f, 0, 2, False, f)  # carry slots read by children
        self.kb.b.declare(f, 1, 2, False, f)  # completion slots
        return f

    def join(self, lo, hi, fork, parent, side, depth):
        refs = [_sref(var_id(fork, 1), 0, READ), _sref(var_id(fork, 1), 1, READ)]
        if parent >= 0:
            refs.append(_sref(var_id(parent, 1), side, WRITE))
        return self.kb.node(JOIN, sd.OP_SYNC, refs)

    def leaf(self, pos, parent, side, depth):
        if parent >= 0:
            refs = [_sref(var_id(parent, 0), side, READ),
                    _gref(self.a_in, pos, READ),
                    _gref(self.a_out, pos, WRITE),
                    _sref(var_id(parent, 1), side, WRITE)]
            u = self.kb.node(LEAF, sd.OP_ADD2, refs)
        else:  # n == 1: output = input
            u = self.kb.node(LEAF, sd.OP_COPYV,
                             [_gref(self.a_in, pos, READ),
                              _gref(self.a_out, pos, WRITE)])
        return u, u, [u]

    def size_hint(self, lo, hi):
        return hi - lo


def _spec() -> KernelSpec:
    return KernelSpec(name="prefix_sums", type_level=1, c=1,
                      s_of_n=lambda r: r // 2, S_l=lambda r: 4,
                      c1=1.0, c2=1.0, alpha=0.5,
                      write_pattern="regular", e2=4)


def prefix_sums(n: int, seed: int = 0, data: list[int] | None = None,
                chunk: int = 1) -> KernelInstance:
    """Inclusive prefix sums over n words (n a power of two >= 1)."""
    if n < 1 or n & (n - 1):
        raise ValueError("n must be a power of two >= 1")
    spec = _spec()
    kb = KernelBuilder("prefix_sums", n, spec, chunk=1)
    a_in = kb.array("input", n)
    a_out = kb.array("output", n)
    a_p1 = kb.array("partials", 2 * n - 1)
    a_p2 = kb.array("carries", max(n - 1, 1))

    r1 = kb.begin_region("bp", n)
    t1 = kb.new_tree("bp_reduce", spec)
    t1.has_global_writes = True
    t1.regular_stride = 1
    e1, x1, _ = build_tree(kb, t1, _ReduceCB(kb, a_in, a_p1), 0, n)
    kb.end_region(r1, e1, x1, [("g", a_p1)])

    r2 = kb.begin_region("bp", n)
    t2 = kb.new_tree("bp_scan", spec)
    t2.has_global_writes = True
    t2.regular_stride = 1
    e2_, x2, _ = build_tree(kb, t2, _ScanCB(kb, a_in, a_out, a_p1, a_p2), 0, n)
    kb.end_region(r2, e2_, x2, [("g", a_p2), ("g", a_out)])

    kb.edge(x1, e2_)
    dag = kb.finish(e1, x2, [a_out])

    rng = random.Random(f"prefix_sums:{n}:{seed}")
    values = data if data is not None else [rng.randrange(1000) for _ in range(n)]
    if len(values) != n:
        raise ValueError("data length mismatch")

    def oracle() -> dict[int, list[int]]:
        out, acc = [], 0
        for v in values:
            acc = (acc + v) & VALUE_MASK
            out.append(acc)
        return {a_out: out}

    return KernelInstance("prefix_sums", n, dag, {a_in: list(values)},
                          [a_out], spec, oracle)
