import numpy as np
import pytest

from twowayfe import (
    ConnectedSet,
    DataError,
    Panel,
    build_graph,
    largest_connected_set,
    leave_one_out_connected_set,
)
from twowayfe.correct import compute_leverages

from conftest import random_connected_panel


def panel_from_pairs(pairs):
    """pairs: list of (worker, firm); periods assigned sequentially per worker."""
    seen = {}
    rows = []
    for w, f in pairs:
        seen[w] = seen.get(w, 0) + 1
        rows.append((w, f, seen[w]))
    rng = np.random.default_rng(0)
    return Panel(
        worker=[r[0] for r in rows],
        firm=[r[1] for r in rows],
        period=[r[2] for r in rows],
        log_wage=rng.normal(size=len(rows)),
    )


# -- independent connectivity oracles ------------------------------------


def bfs_components(firms, edges):
    adj = {f: set() for f in firms}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen, comps = set(), []
    for f in firms:
        if f in seen:
            continue
        stack, comp = [f], set()
        while stack:
            u = stack.pop()
            if u in comp:
                continue
            comp.add(u)
            seen.add(u)
            stack.extend(adj[u] - comp)
        comps.append(comp)
    return comps


def cooccurrence_edges(obs):
    byw = {}
    for w, f in obs:
        byw.setdefault(w, set()).add(f)
    edges = set()
    for fs in byw.values():
        fs = sorted(fs)
        for i in range(len(fs)):
            for j in range(i + 1, len(fs)):
                edges.add((fs[i], fs[j]))
    return edges, byw


def expansion_largest_set(obs):
    """The seed-and-expand construction: start from one worker, pull in their
    firms, then all workers of those firms, until the set stops growing.
    Run from every seed and keep the best set under the library tie-break."""
    byw = {}
    byf = {}
    for w, f in obs:
        byw.setdefault(w, set()).add(f)
        byf.setdefault(f, set()).add(w)

    def expand(seed):
        workers, firms = {seed}, set(byw[seed])
        while True:
            new_workers = set().union(*(byf[f] for f in firms)) - workers
            if not new_workers:
                break
            workers |= new_workers
            firms |= set().union(*(byw[w] for w in new_workers))
        return workers, firms

    best = None
    for seed in sorted(byw):
        workers, firms = expand(seed)
        n_obs = sum(1 for w, f in obs if f in firms)
        key = (-len(workers), -n_obs, min(firms))
        if best is None or key < best[0]:
            best = (key, workers, firms)
    return best[2], best[1]


def oracle_leave_one_out(obs):
    """Brute force: iterate (largest component, drop single-observation
    workers, delete every worker whose removal disconnects the firms) until
    stable, testing each deletion by BFS."""
    obs = list(obs)
    while True:
        firms = sorted({f for _, f in obs})
        if not firms:
            return None
        edges, _ = cooccurrence_edges(obs)
        comps = bfs_components(firms, edges)
        if len(comps) > 1:

            def rank(c):
                ws = {w for w, f in obs if f in c}
                n_o = sum(1 for _, f in obs if f in c)
                return (-len(ws), -n_o, min(c))

            best = min(comps, key=rank)
            obs = [(w, f) for w, f in obs if f in best]
            continue
        counts = {}
        for w, _ in obs:
            counts[w] = counts.get(w, 0) + 1
        singles = {w for w, c in counts.items() if c < 2}
        if singles:
            obs = [(w, f) for w, f in obs if w not in singles]
            if not obs:
                return None
            continue
        firms = sorted({f for _, f in obs})
        workers = sorted({w for w, _ in obs})
        if len(firms) == 1:
            if len(workers) < 2:
                return None
            break
        cut = set()
        for w0 in workers:
            rem = [(w, f) for w, f in obs if w != w0]
            if {f for _, f in rem} != set(firms):
                cut.add(w0)
                continue
            e2, _ = cooccurrence_edges(rem)
            if len(bfs_components(firms, e2)) > 1:
                cut.add(w0)
        if not cut:
            break
        obs = [(w, f) for w, f in obs if w not in cut]
        if not obs:
            return None
    return sorted({f for _, f in obs}), sorted({w for w, _ in obs})


def external_pairs(panel):
    return [
        (panel.worker_ids[i], panel.firm_ids[j])
        for i, j in zip(panel.worker_idx, panel.firm_idx)
    ]


# -- build_graph -----------------------------------------------------------


class TestBuildGraph:
    def test_no_movers_no_edges(self):
        panel = panel_from_pairs([("a", "f1"), ("a", "f1"), ("b", "f2")])
        graph = build_graph(panel)
        assert graph.n_edges == 0

    def test_bridging_firm(self):
        panel = panel_from_pairs(
            [("a", "f1"), ("a", "f3"), ("b", "f2"), ("b", "f3")]
        )
        graph = build_graph(panel)
        edges = {
            (graph.firm_ids[a], graph.firm_ids[b]): m
            for (a, b), m in graph.edges().items()
        }
        assert edges == {("f1", "f3"): 1, ("f2", "f3"): 1}

    def test_fixture_edge_and_mover_count(self, exactfit_panel):
        graph = build_graph(exactfit_panel)
        assert graph.n_edges == 1
        assert list(graph.edges().values()) == [3]

    def test_mover_counts_are_distinct_workers(self):
        # same worker visiting twice still counts once
        panel = panel_from_pairs(
            [("a", "f1"), ("a", "f2"), ("a", "f1"), ("b", "f1"), ("b", "f2")]
        )
        graph = build_graph(panel)
        assert list(graph.edges().values()) == [2]


# -- largest connected set ---------------------------------------------------


class TestLargestConnectedSet:
    def test_fully_connected(self, exactfit_panel):
        conn = largest_connected_set(build_graph(exactfit_panel))
        assert conn.firms == {"f1", "f2"}
        assert conn.workers == {"w1", "w2", "w3"}
        assert conn.kind == "largest_connected"

    def test_two_components_most_workers_wins(self):
        pairs = []
        # component A: 3 firms, 10 workers
        for w in range(10):
            pairs += [(f"a{w}", f"fa{w % 3}"), (f"a{w}", f"fa{(w + 1) % 3}")]
        # component B: 2 firms, 4 workers
        for w in range(4):
            pairs += [(f"b{w}", f"fb{w % 2}"), (f"b{w}", f"fb{(w + 1) % 2}")]
        conn = largest_connected_set(build_graph(panel_from_pairs(pairs)))
        assert conn.firms == {"fa0", "fa1", "fa2"}
        assert conn.n_workers == 10

    def test_bridging_firm_single_component(self):
        panel = panel_from_pairs(
            [("a", "f1"), ("a", "f3"), ("b", "f2"), ("b", "f3")]
        )
        conn = largest_connected_set(build_graph(panel))
        assert conn.firms == {"f1", "f2", "f3"}

    def test_matches_expansion_algorithm_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(40):
            W, F = int(rng.integers(4, 25)), int(rng.integers(2, 9))
            rows = []
            for w in range(W):
                for t, f in enumerate(rng.integers(0, F, size=rng.integers(1, 4))):
                    rows.append((f"w{w:02d}", f"f{f}", t + 1))
            panel = Panel(
                worker=[r[0] for r in rows],
                firm=[r[1] for r in rows],
                period=[r[2] for r in rows],
                log_wage=rng.normal(size=len(rows)),
            )
            firms, workers = expansion_largest_set(external_pairs(panel))
            conn = largest_connected_set(build_graph(panel))
            assert conn.firms == set(firms)
            assert conn.workers == set(workers)

    def test_invariant_to_relabeling_and_order(self):
        rng = np.random.default_rng(1)
        panel = random_connected_panel(rng, n_workers=15, n_firms=4)
        conn = largest_connected_set(build_graph(panel))
        # relabel firms with a reversible map and shuffle rows
        perm = rng.permutation(panel.n_obs)
        relabel = {f: f"z{f}" for f in panel.firm_ids}
        panel2 = Panel(
            worker=[panel.worker_ids[i] for i in panel.worker_idx[perm]],
            firm=[relabel[panel.firm_ids[j]] for j in panel.firm_idx[perm]],
            period=panel.period[perm],
            log_wage=panel.log_wage[perm],
        )
        conn2 = largest_connected_set(build_graph(panel2))
        assert {relabel[f] for f in conn.firms} == conn2.firms
        assert conn.workers == conn2.workers


# -- leave-one-out connected set ---------------------------------------------


class TestLeaveOneOut:
    def test_single_mover_firm_pruned(self):
        # f3 hangs off the 2-mover core f1-f2 by exactly one mover
        pairs = [
            ("a", "f1"), ("a", "f2"),
            ("b", "f1"), ("b", "f2"),
            ("c", "f2"), ("c", "f3"),
            ("d", "f3"), ("d", "f3"),
        ]
        loo = leave_one_out_connected_set(
            build_graph(panel_from_pairs(pairs)), panel_from_pairs(pairs)
        )
        assert loo.firms == {"f1", "f2"}
        assert loo.workers == {"a", "b"}
        assert loo.kind == "leave_one_out"

    def test_two_movers_per_pair_unchanged(self):
        pairs = []
        for w, (fa, fb) in enumerate([("f1", "f2"), ("f1", "f2"), ("f2", "f3"), ("f2", "f3")]):
            pairs += [(f"w{w}", fa), (f"w{w}", fb)]
        panel = panel_from_pairs(pairs)
        loo = leave_one_out_connected_set(build_graph(panel), panel)
        assert loo.firms == {"f1", "f2", "f3"}
        assert loo.n_workers == 4

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            W, F = int(rng.integers(5, 30)), int(rng.integers(3, 10))
            rows = []
            for w in range(W):
                for t, f in enumerate(rng.integers(0, F, size=rng.integers(1, 4))):
                    rows.append((f"w{w:03d}", f"f{f}", t + 1))
            panel = Panel(
                worker=[r[0] for r in rows],
                firm=[r[1] for r in rows],
                period=[r[2] for r in rows],
                log_wage=rng.normal(size=len(rows)),
            )
            expected = oracle_leave_one_out(external_pairs(panel))
            try:
                got = leave_one_out_connected_set(build_graph(panel), panel)
                result = (sorted(got.firms), sorted(got.workers))
            except DataError:
                result = None
            assert result == expected

    def test_subset_chain(self):
        rng = np.random.default_rng(3)
        panel = random_connected_panel(rng, n_workers=25, n_firms=6, mover_share=0.5)
        graph = build_graph(panel)
        largest = largest_connected_set(graph)
        loo = leave_one_out_connected_set(graph, panel)
        assert loo.firms <= largest.firms <= set(panel.firm_ids)
        assert loo.workers <= largest.workers

    def test_leverage_strictly_below_one(self):
        rng = np.random.default_rng(11)
        for seed in range(5):
            panel = random_connected_panel(
                np.random.default_rng(seed), n_workers=30, n_firms=6, mover_share=0.5
            )
            try:
                loo = leave_one_out_connected_set(build_graph(panel), panel)
            except DataError:
                continue
            table = compute_leverages(panel, loo, backend="exact")
            assert table.leverage.max() < 1 - 1e-10
            assert table.leverage.min() >= 0

    def test_too_sparse_raises(self):
        # one mover connecting two one-worker firms: nothing survives
        pairs = [("a", "f1"), ("a", "f2")]
        panel = panel_from_pairs(pairs)
        with pytest.raises(DataError):
            leave_one_out_connected_set(build_graph(panel), panel)
