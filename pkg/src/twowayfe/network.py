"""Worker-firm mobility graph and connected-set extraction.

Firms are nodes; an edge joins two firms whenever at least one worker is
observed at both, weighted by the number of distinct such movers. Worker and
firm effects are only identified relative to each other inside a connected
component of this graph, so estimation restricts to one: usually the largest.

The leave-one-out connected set additionally survives the deletion of any
single worker, which is what gives every observation a regression leverage
strictly below one and makes the heteroskedastic-robust bias correction
feasible.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import networkx as nx
import numpy as np

from .errors import ConfigError, DataError
from .panel import Panel, restrict_panel


class UnionFind:
    """Disjoint sets over 0..n-1 with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, a: int) -> int:
        parent = self.parent
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]

    def labels(self) -> np.ndarray:
        return np.fromiter((self.find(i) for i in range(len(self.parent))), dtype=np.int64)


@dataclass(frozen=True)
class MobilityGraph:
    """Firm-level mover graph plus the worker -> firms incidence it came from."""

    n_firms: int
    edge_a: np.ndarray  # firm index, edge_a < edge_b
    edge_b: np.ndarray
    edge_movers: np.ndarray  # distinct workers observed at both endpoints
    worker_firms: tuple  # per worker: sorted array of distinct firm indices
    obs_per_firm: np.ndarray
    obs_per_worker: np.ndarray
    firm_ids: tuple
    worker_ids: tuple

    @property
    def n_edges(self) -> int:
        return len(self.edge_a)

    def edges(self) -> dict:
        """Edge dict {(a, b): mover_count} with a < b (internal firm indices)."""
        return {
            (int(a), int(b)): int(m)
            for a, b, m in zip(self.edge_a, self.edge_b, self.edge_movers)
        }


@dataclass(frozen=True)
class ConnectedSet:
    """Membership of a connected set, keyed by external ids."""

    firms: frozenset
    workers: frozenset
    kind: str  # "largest_connected" or "leave_one_out"

    @property
    def n_firms(self) -> int:
        return len(self.firms)

    @property
    def n_workers(self) -> int:
        return len(self.workers)


def build_graph(panel: Panel) -> MobilityGraph:
    """Construct the mover graph of a panel.

    An edge (a, b) exists iff some worker is observed at both a and b, with
    weight equal to the number of distinct such workers.
    """
    pairs = np.unique(np.stack([panel.worker_idx, panel.firm_idx], axis=1), axis=0)
    counts = np.bincount(pairs[:, 0], minlength=panel.n_workers)
    splits = np.split(pairs[:, 1], np.cumsum(counts)[:-1])
    worker_firms = tuple(np.sort(s) for s in splits)

    edge_counts: dict[tuple[int, int], int] = {}
    for firms in worker_firms:
        if firms.size < 2:
            continue
        for a, b in combinations(firms.tolist(), 2):
            edge_counts[(a, b)] = edge_counts.get((a, b), 0) + 1

    if edge_counts:
        keys = sorted(edge_counts)
        edge_a = np.array([k[0] for k in keys], dtype=np.int64)
        edge_b = np.array([k[1] for k in keys], dtype=np.int64)
        edge_movers = np.array([edge_counts[k] for k in keys], dtype=np.int64)
    else:
        edge_a = edge_b = edge_movers = np.empty(0, dtype=np.int64)

    return MobilityGraph(
        n_firms=panel.n_firms,
        edge_a=edge_a,
        edge_b=edge_b,
        edge_movers=edge_movers,
        worker_firms=worker_firms,
        obs_per_firm=np.bincount(panel.firm_idx, minlength=panel.n_firms),
        obs_per_worker=np.bincount(panel.worker_idx, minlength=panel.n_workers),
        firm_ids=panel.firm_ids,
        worker_ids=panel.worker_ids,
    )


def _component_labels(n_firms: int, edge_a, edge_b) -> np.ndarray:
    uf = UnionFind(n_firms)
    for a, b in zip(edge_a, edge_b):
        uf.union(int(a), int(b))
    return uf.labels()


def _pick_component(labels, worker_firms, obs_per_firm, firm_ids):
    """Choose the component with the most workers; ties broken by observation
    count, then by smallest external firm id."""
    workers_per: dict[int, int] = {}
    for firms in worker_firms:
        if firms.size:
            root = labels[firms[0]]
            workers_per[root] = workers_per.get(root, 0) + 1
    obs_per: dict[int, int] = {}
    for j in range(len(labels)):
        obs_per[labels[j]] = obs_per.get(labels[j], 0) + int(obs_per_firm[j])
    min_id: dict[int, str] = {}
    for j in range(len(labels)):
        root = labels[j]
        fid = firm_ids[j]
        if root not in min_id or fid < min_id[root]:
            min_id[root] = fid

    def rank(root):
        # larger worker/obs counts first, then lexicographically smallest id
        return (-workers_per.get(root, 0), -obs_per.get(root, 0), min_id[root])

    return min(set(labels.tolist()), key=rank)


def largest_connected_set(graph: MobilityGraph) -> ConnectedSet:
    """Largest connected component of the mover graph, by worker count.

    Every firm a worker visits lies in the same component (the worker's own
    co-employment edges join them), so each worker belongs to exactly one
    component.
    """
    if graph.n_firms == 0:
        raise ConfigError("mobility graph has no firms")
    labels = _component_labels(graph.n_firms, graph.edge_a, graph.edge_b)
    best = _pick_component(labels, graph.worker_firms, graph.obs_per_firm, graph.firm_ids)
    firm_members = frozenset(
        graph.firm_ids[j] for j in range(graph.n_firms) if labels[j] == best
    )
    worker_members = frozenset(
        graph.worker_ids[w]
        for w, firms in enumerate(graph.worker_firms)
        if firms.size and labels[firms[0]] == best
    )
    return ConnectedSet(firms=firm_members, workers=worker_members, kind="largest_connected")


def leave_one_out_connected_set(graph: MobilityGraph, panel: Panel) -> ConnectedSet:
    """Largest subset of the largest connected set that stays connected when
    any single worker's observations are deleted.

    Iterates to a fixed point: keep the largest component, drop workers with a
    single observation (their one row would otherwise carry leverage one),
    then drop every worker whose deletion disconnects the remaining firms.
    Articulation workers are found on the auxiliary graph whose nodes are
    firms plus movers and whose edges join each mover to the firms they visit:
    deleting a worker splits the firm set exactly when that worker is an
    articulation point there.
    """
    base = largest_connected_set(graph)
    current = restrict_panel(panel, base.workers, base.firms)

    while True:
        widx, fidx = current.worker_idx, current.firm_idx
        n_w, n_f = current.n_workers, current.n_firms

        pairs = np.unique(np.stack([widx, fidx], axis=1), axis=0)
        counts = np.bincount(pairs[:, 0], minlength=n_w)
        worker_firms = np.split(pairs[:, 1], np.cumsum(counts)[:-1])

        # largest component of the current restriction
        uf = UnionFind(n_f)
        for firms in worker_firms:
            for k in range(len(firms) - 1):
                uf.union(int(firms[k]), int(firms[k + 1]))
        labels = uf.labels()
        if np.unique(labels).size > 1:
            best = _pick_component(
                labels,
                tuple(worker_firms),
                np.bincount(fidx, minlength=n_f),
                current.firm_ids,
            )
            keep_f = {current.firm_ids[j] for j in range(n_f) if labels[j] == best}
            keep_w = {
                current.worker_ids[w]
                for w in range(n_w)
                if worker_firms[w].size and labels[worker_firms[w][0]] == best
            }
            current = restrict_panel(current, keep_w, keep_f)
            continue

        # single-observation workers carry leverage one: drop them
        obs_per_worker = np.bincount(widx, minlength=n_w)
        singles = np.flatnonzero(obs_per_worker < 2)
        if singles.size:
            keep_w = {current.worker_ids[w] for w in range(n_w) if obs_per_worker[w] >= 2}
            if not keep_w:
                raise DataError("leave-one-out connected set is empty: data too sparse")
            current = restrict_panel(current, keep_w, set(current.firm_ids))
            continue

        movers = [w for w in range(n_w) if worker_firms[w].size >= 2]
        if n_f == 1:
            # single-firm set: any worker can be left out iff another remains
            if n_w < 2:
                raise DataError("leave-one-out connected set is empty: data too sparse")
            break

        aux = nx.Graph()
        aux.add_nodes_from(("f", j) for j in range(n_f))
        for w in movers:
            for j in worker_firms[w]:
                aux.add_edge(("w", w), ("f", int(j)))
        # deleting worker w splits the firm set (or empties a firm) exactly
        # when w is an articulation point of the firms+movers graph
        cut_workers = {
            node[1] for node in nx.articulation_points(aux) if node[0] == "w"
        }
        if not cut_workers:
            break
        keep_w = {current.worker_ids[w] for w in range(n_w) if w not in cut_workers}
        if not keep_w:
            raise DataError("leave-one-out connected set is empty: data too sparse")
        current = restrict_panel(current, keep_w, set(current.firm_ids))

    return ConnectedSet(
        firms=frozenset(current.firm_ids),
        workers=frozenset(current.worker_ids),
        kind="leave_one_out",
    )


def connected_set_summary(panel: Panel, conn: ConnectedSet) -> dict:
    """JSON-ready membership summary for a connected set of `panel`."""
    fmask = np.fromiter((f in conn.firms for f in panel.firm_ids), dtype=bool)
    wmask = np.fromiter((w in conn.workers for w in panel.worker_ids), dtype=bool)
    kept = fmask[panel.firm_idx] & wmask[panel.worker_idx]
    return {
        "schema_version": 1,
        "kind": conn.kind,
        "n_firms_kept": conn.n_firms,
        "n_workers_kept": conn.n_workers,
        "share_of_observations": float(kept.mean()),
    }
