"""Structure and validation tests for the series-parallel DAG module."""

from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from stealsim import sp_dag as sd
from stealsim.sp_dag import (
    FORK, JOIN, LEAF, SERIAL, GLOBAL_ARRAY, STACK_LOCAL, READ, WRITE,
    GraphBuilder, chain, compose_parallel, compose_series, pack_ref,
    single_node, unpack_ref,
)


def brute_force_longest_path(dag) -> int:
    """Independent oracle: longest path in edges via memoized edge DFS."""
    memo: dict[int, int] = {}
    order = []
    stack = [(dag.root, False)]
    seen = set()
    # iterative post-order so deep dags do not hit the recursion limit
    while stack:
        u, processed = stack.pop()
        if processed:
            order.append(u)
            continue
        if u in seen:
            continue
        seen.add(u)
        stack.append((u, True))
        for v in dag.succs(u):
            stack.append((v, False))
    for u in order:
        best = 0
        for v in dag.succs(u):
            best = max(best, 1 + memo[v])
        memo[u] = best
    return memo[dag.root]


def test_pack_roundtrip():
    r = pack_ref(STACK_LOCAL, 12345, 678, WRITE)
    assert unpack_ref(r) == (STACK_LOCAL, 12345, 678, WRITE)
    r = pack_ref(GLOBAL_ARRAY, 0, 0, READ)
    assert unpack_ref(r) == (GLOBAL_ARRAY, 0, 0, READ)


def test_series_of_two_singles_is_two_node_chain():
    g = compose_series(single_node(), single_node())
    assert g.n == 2
    assert g.critical_path_nodes() == 2


def test_series_rejects_empty():
    g1 = chain(2)

    class Empty:
        n = 0

    with pytest.raises(ValueError):
        compose_series(g1, Empty())  # type: ignore[arg-type]


def test_chain_concatenation_t_inf():
    g = compose_series(chain(3), chain(4))
    assert g.critical_path_nodes() == 7


def test_parallel_of_singles_is_diamond():
    g = compose_parallel(single_node(), single_node())
    assert g.n == 4
    assert g.critical_path_nodes() == 3
    ht = g.heights()
    assert ht[g.sink] == 0
    assert ht[g.root] == 2
    branches = [u for u in range(g.n) if u not in (g.root, g.sink)]
    assert all(ht[u] == 1 for u in branches)


def test_parallel_unbalanced_t_inf():
    g = compose_parallel(chain(2), chain(5))
    assert g.critical_path_nodes() == 7


def test_nested_parallel_depth_recurrence():
    # oracle: T_inf(d) = T_inf(d-1) + 2 with T_inf(0) = 1
    expect = 1
    g = single_node()
    for _ in range(6):
        expect += 2
        g = compose_parallel(g, single_node())
        assert g.critical_path_nodes() == expect


def test_heights_match_brute_force_on_composites():
    g = compose_parallel(compose_series(chain(3), compose_parallel(chain(2), chain(6))),
                         chain(4))
    assert g.heights()[g.root] == brute_force_longest_path(g)


@settings(max_examples=60, deadline=None)
@given(st.recursive(
    st.just(("leaf",)),
    lambda kids: st.tuples(st.sampled_from(["s", "p"]), kids, kids),
    max_leaves=20,
))
def test_random_sp_terms_validate_and_heights(term):
    def build(t):
        if t[0] == "leaf":
            return single_node()
        _, a, b = t
        ga, gb = build(a), build(b)
        return compose_series(ga, gb) if t[0] == "s" else compose_parallel(ga, gb)

    g = build(term)
    rep = g.validate(e2=4)
    assert rep.ok, rep.violations
    assert g.heights()[g.root] == brute_force_longest_path(g)
    for u in range(g.n):
        for v in g.succs(u):
            assert g.heights()[u] >= g.heights()[v] + 1


def test_validate_flags_limited_access_violation():
    # one word written many times, like an in-place accumulator
    b = GraphBuilder()
    a = b.add_array("out", 4)
    prev = b.add_node(SERIAL, sd.OP_SYNC, [pack_ref(GLOBAL_ARRAY, a, 0, WRITE)])
    first = prev
    for _ in range(7):
        u = b.add_node(SERIAL, sd.OP_SYNC, [pack_ref(GLOBAL_ARRAY, a, 0, WRITE)])
        b.edge(prev, u)
        prev = u
    g = b.finish(first, prev)
    rep = g.validate(e2=4)
    assert "limited_access" in rep.codes()


def test_validate_flags_cross_edge_as_non_sp():
    b = GraphBuilder()
    s = b.add_node(FORK)
    x = b.add_node(SERIAL)
    y = b.add_node(SERIAL)
    y2 = b.add_node(SERIAL)
    t = b.add_node(JOIN)
    b.edge(s, x)
    b.edge(s, y)
    b.edge(y, y2)
    b.edge(x, t)
    b.edge(y2, t)
    b.edge(x, y2)  # cross edge between parallel branches
    g = b.finish(s, t)
    rep = g.validate(e2=4)
    assert "non_sp" in rep.codes() or "degree" in rep.codes()


def test_validate_flags_oversized_locals():
    b = GraphBuilder()
    u = b.add_node(SERIAL)
    b.declare(u, 0, sd.LOCAL_WORDS_MAX + 1, False, u)
    g = b.finish(u, u)
    assert "locals" in g.validate(e2=4).codes()


def test_validate_flags_unmatched_fork_registration():
    b = GraphBuilder()
    s = b.add_node(FORK)
    x = b.add_node(SERIAL)
    y = b.add_node(SERIAL)
    t = b.add_node(JOIN)
    b.edge(s, x)
    b.edge(s, y)
    b.edge(x, t)
    b.edge(y, t)
    b.register_fork(s, t, x, x)  # wrong right sink
    g = b.finish(s, t)
    assert "forkjoin" in g.validate(e2=4).codes()


def test_e1_budget_enforced_at_build():
    b = GraphBuilder()
    a = b.add_array("out", 16)
    refs = [pack_ref(GLOBAL_ARRAY, a, i, WRITE) for i in range(9)]
    with pytest.raises(ValueError):
        b.add_node(SERIAL, sd.OP_SYNC, refs)


def test_task_size_counts_distinct_words():
    left = single_node(LEAF)
    b = GraphBuilder()
    a = b.add_array("v", 8)
    refs = [pack_ref(GLOBAL_ARRAY, a, i, READ) for i in (0, 1, 1, 2)]
    right = b.add_node(LEAF, sd.OP_NOP, refs)
    g = compose_parallel(left, b.finish(right, right))
    # right branch root is registered stealable by compose_parallel
    w = [u for u in range(g.n) if g.fork_info.get(u, (0,))[0] == -1][0]
    assert g.task_size(w) == 3
