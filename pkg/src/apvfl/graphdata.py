"""Graph container, synthetic SBM generator, balanced partitioner and splits."""
from __future__ import annotations

import heapq
import json
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BALANCE_EPS = 0.05


class GraphFormatError(ValueError):
    """Raised when a graph or partition file does not match the JSON schema."""


def _canonical_edges(edges, n: int) -> tuple[np.ndarray, int, int]:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise ValueError(f"edge endpoint out of range [0, {n})")
    loops = int(np.sum(e[:, 0] == e[:, 1]))
    e = e[e[:, 0] != e[:, 1]]
    e = np.sort(e, axis=1)
    uniq = np.unique(e, axis=0) if len(e) else e.reshape(0, 2)
    return uniq, loops, len(e) - len(uniq)


@dataclass(eq=False)
class Graph:
    """Undirected attributed graph with integer class labels.

    Edges are stored once as ``(u, v)`` with ``u < v``, sorted
    lexicographically. Self-loops are never stored; normalisation adds them.
    """

    n: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.n = int(self.n)
        self.edges, loops, dups = _canonical_edges(self.edges, self.n)
        if loops:
            warnings.warn(f"dropped {loops} self-loop(s)", stacklevel=3)
        if dups:
            warnings.warn(f"dropped {dups} duplicate edge(s)", stacklevel=3)
        self.features = np.ascontiguousarray(self.features, dtype=np.float64).reshape(self.n, -1)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.num_classes = int(self.num_classes)
        if len(self.labels) != self.n:
            raise ValueError(f"{len(self.labels)} labels for {self.n} nodes")
        if self.n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite feature values")

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.n == other.n
            and self.num_classes == other.num_classes
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        if len(self.edges):
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
            a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def neighbors(self) -> list[np.ndarray]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges.tolist():
            adj[u].append(v)
            adj[v].append(u)
        return [np.array(sorted(x), dtype=np.int64) for x in adj]

    def subgraph(self, nodes) -> "Graph":
        nodes = np.asarray(nodes, dtype=np.int64)
        index = -np.ones(self.n, dtype=np.int64)
        index[nodes] = np.arange(len(nodes))
        if len(self.edges):
            keep = (index[self.edges[:, 0]] >= 0) & (index[self.edges[:, 1]] >= 0)
            e = index[self.edges[keep]]
        else:
            e = np.zeros((0, 2), dtype=np.int64)
        return Graph(len(nodes), e, self.features[nodes], self.labels[nodes], self.num_classes)


@dataclass(eq=False)
class Partition:
    assignment: np.ndarray

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64).reshape(-1)
        if len(self.assignment) and self.assignment.min() < 0:
            raise ValueError("negative client id in partition")

    @property
    def num_parts(self) -> int:
        return int(self.assignment.max()) + 1 if len(self.assignment) else 0

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def sizes(self, num_parts: int | None = None) -> np.ndarray:
        return np.bincount(self.assignment, minlength=num_parts or self.num_parts)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Partition):
            return NotImplemented
        return np.array_equal(self.assignment, other.assignment)


@dataclass(eq=False)
class ClientSubgraph:
    client_id: int
    node_ids: np.ndarray
    graph: Graph
    train_mask: np.ndarray = field(default=None)
    val_mask: np.ndarray = field(default=None)
    test_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.node_ids = np.asarray(self.node_ids, dtype=np.int64)
        n = self.graph.n
        for name in ("train_mask", "val_mask", "test_mask"):
            m = getattr(self, name)
            setattr(self, name, np.zeros(n, dtype=bool) if m is None else np.asarray(m, dtype=bool))

    @property
    def n(self) -> int:
        return self.graph.n


def max_part_size(n: int, k: int, eps: float = BALANCE_EPS) -> int:
    # the float product can land a hair above an integer (e.g. 1.05 * 40 / 2)
    return max(math.ceil((1 + eps) * n / k - 1e-9), math.ceil(n / k))


def edge_cut(g: Graph, part: Partition) -> int:
    if not len(g.edges):
        return 0
    a = part.assignment
    return int(np.sum(a[g.edges[:, 0]] != a[g.edges[:, 1]]))


# ---------------------------------------------------------------- partitioner


def _bfs_dist(nbrs: list[np.ndarray], sources) -> np.ndarray:
    dist = np.full(len(nbrs), -1, dtype=np.int64)
    q = deque()
    for s in sources:
        dist[s] = 0
        q.append(s)
    while q:
        u = q.popleft()
        for v in nbrs[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def _grow_region(nbrs: list[np.ndarray], assign: np.ndarray, seed: int, target: int, r: int) -> int:
    """Greedy graph growing: repeatedly absorb the unassigned frontier node
    with the most edges into region ``r`` (ties to the lowest index)."""
    conn: dict[int, int] = {}
    heap: list[tuple[int, int]] = []

    def claim(u: int):
        assign[u] = r
        for v in nbrs[u].tolist():
            if assign[v] < 0:
                c = conn.get(v, 0) + 1
                conn[v] = c
                heapq.heappush(heap, (-c, v))

    claim(seed)
    size = 1
    while size < target:
        while heap and (assign[heap[0][1]] >= 0 or -heap[0][0] != conn[heap[0][1]]):
            heapq.heappop(heap)
        if not heap:
            break
        _, u = heapq.heappop(heap)
        claim(u)
        size += 1
    return size


def _next_seed(nbrs: list[np.ndarray], deg: np.ndarray, assign: np.ndarray, jitter: np.ndarray) -> int:
    # the unassigned node with the smallest share of its edges into claimed
    # regions, i.e. the farthest point from them in connectivity terms
    claimed = (assign >= 0).astype(np.float64)
    share = np.array([claimed[nb].sum() for nb in nbrs]) / np.maximum(deg, 1.0)
    share[assign >= 0] = np.inf
    return int(np.lexsort((jitter, share))[0])


def _peripheral(nbrs: list[np.ndarray], start: int) -> int:
    dist = _bfs_dist(nbrs, [start])
    reach = np.flatnonzero(dist >= 0)
    far = reach[dist[reach] == dist[reach].max()]
    return int(far.min())


def _refine(g: Graph, nbrs: list[np.ndarray], assign: np.ndarray, k: int, max_size: int, passes: int) -> None:
    """Boundary sweeps: move a node to the region holding most of its
    neighbours when that strictly lowers the cut and keeps the size bound."""
    size = np.bincount(assign, minlength=k)
    for _ in range(passes):
        moved = 0
        for u in range(g.n):
            nb = nbrs[u]
            if not len(nb):
                continue
            counts = np.bincount(assign[nb], minlength=k)
            own = assign[u]
            if size[own] <= 1:
                continue
            counts_masked = np.where(size < max_size, counts, -1)
            counts_masked[own] = -1
            best = int(np.argmax(counts_masked))
            if counts_masked[best] > counts[own]:
                assign[u] = best
                size[own] -= 1
                size[best] += 1
                moved += 1
        if not moved:
            break


def partition(g: Graph, k: int, rng: np.random.Generator, refine_passes: int = 8) -> Partition:
    """Balanced non-overlapping ``k``-way partition by seeded region growing.

    Regions are grown one after another to ``n/k`` nodes each. The first
    seed is a peripheral node (farthest from a seeded random start); each
    later seed is the unassigned node least connected to the regions grown
    so far. Boundary sweeps then move nodes to reduce the edge cut while
    keeping every part at most ``ceil(1.05 n / k)``.
    """
    if k < 1:
        raise ValueError("need at least one part")
    if k > g.n:
        raise ValueError(f"cannot split {g.n} nodes into {k} parts")
    if k == 1:
        return Partition(np.zeros(g.n, dtype=np.int64))
    nbrs = g.neighbors()
    deg = np.array([len(x) for x in nbrs], dtype=np.float64)
    jitter = rng.random(g.n)
    assign = -np.ones(g.n, dtype=np.int64)
    base, extra = divmod(g.n, k)
    seed = _peripheral(nbrs, int(rng.integers(g.n)))
    for r in range(k):
        target = base + (r < extra)
        size = 0
        while size < target:
            size += _grow_region(nbrs, assign, seed, target - size, r)
            if size < target or r + 1 < k:
                if np.all(assign >= 0):
                    break
                seed = _next_seed(nbrs, deg, assign, jitter)
    _refine(g, nbrs, assign, k, max_part_size(g.n, k), refine_passes)
    return Partition(_relabel(assign, k))


def _relabel(assign: np.ndarray, k: int) -> np.ndarray:
    # part ids ordered by their smallest member node
    first = np.full(k, len(assign), dtype=np.int64)
    np.minimum.at(first, assign, np.arange(len(assign)))
    order = np.argsort(first, kind="stable")
    new = np.empty(k, dtype=np.int64)
    new[order] = np.arange(k)
    return new[assign]


# ---------------------------------------------------------------- SBM


@dataclass
class SbmConfig:
    """Synthetic stochastic block model with grouped blocks.

    Blocks are the clients. Consecutive runs of ``blocks // groups`` blocks
    form a group; group ``i`` (1-based) uses intra-block edge probability
    ``intra_step * i`` and majority label ``i - 1``.
    """

    nodes: int = 3000
    blocks: int = 20
    groups: int = 5
    p_inter: float = 0.02
    intra_step: float = 0.15
    label_prob: float = 0.8

    def __post_init__(self):
        if self.nodes % self.blocks:
            raise ValueError("nodes must divide evenly into blocks")
        if self.blocks % self.groups:
            raise ValueError("blocks must divide evenly into groups")
        if not 0 <= self.p_inter <= 1:
            raise ValueError("p_inter must be a probability")
        if not 0 < self.intra_step * self.groups <= 1:
            raise ValueError("intra probabilities must lie in (0, 1]")
        if not 0 <= self.label_prob <= 1:
            raise ValueError("label_prob must be a probability")

    def block_group(self, b: int) -> int:
        """0-based group of block ``b``."""
        return b // (self.blocks // self.groups)


def gen_sbm(cfg: SbmConfig, rng: np.random.Generator) -> tuple[Graph, Partition]:
    n = cfg.nodes
    size = n // cfg.blocks
    block = np.repeat(np.arange(cfg.blocks), size)
    group = np.array([cfg.block_group(b) for b in block])
    c = cfg.groups

    labels = group.copy()
    flip = rng.random(n) >= cfg.label_prob
    if c > 1:
        # uniform over the other c-1 labels
        offset = rng.integers(1, c, size=n)
        labels[flip] = (group[flip] + offset[flip]) % c

    p_intra = cfg.intra_step * (group + 1)
    iu, ju = np.triu_indices(n, k=1)
    same = block[iu] == block[ju]
    prob = np.where(same, p_intra[iu], cfg.p_inter)
    keep = rng.random(len(iu)) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    feats = np.eye(c)[labels]
    return Graph(n, edges, feats, labels, c), Partition(block)


# ---------------------------------------------------------------- clients


def split(sub: ClientSubgraph, ratios=(0.2, 0.4, 0.4), rng: np.random.Generator | None = None) -> ClientSubgraph:
    """Random train/val/test masks for one client, deterministic by ``rng``."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1) > 1e-9:
        raise ValueError(f"split ratios must be three non-negatives summing to 1, got {ratios}")
    n = sub.n
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    if n < 3:
        if ratios[0] < 1:
            warnings.warn(f"client {sub.client_id} has {n} node(s); all assigned to train", stacklevel=2)
        train[:] = True
    else:
        counts = [int(round(r * n)) for r in ratios[:2]]
        for i in range(2):
            if ratios[i] > 0:
                counts[i] = max(counts[i], 1)
        counts.append(n - counts[0] - counts[1])
        if ratios[2] > 0 and counts[2] < 1:
            j = int(np.argmax(counts[:2]))
            counts[j] -= 1
            counts[2] += 1
        order = (rng if rng is not None else np.random.default_rng(0)).permutation(n)
        train[order[: counts[0]]] = True
        val[order[counts[0] : counts[0] + counts[1]]] = True
        test[order[counts[0] + counts[1] :]] = True
    return ClientSubgraph(sub.client_id, sub.node_ids, sub.graph, train, val, test)


def build_clients(g: Graph, part: Partition, num_parts: int | None = None) -> list[ClientSubgraph]:
    """One re-indexed subgraph per part; cross-part edges are dropped."""
    k = num_parts or part.num_parts
    out = []
    for c in range(k):
        nodes = part.members(c)
        out.append(ClientSubgraph(c, nodes, g.subgraph(nodes)))
    return out


# ---------------------------------------------------------------- file I/O


def graph_to_dict(g: Graph) -> dict:
    return {
        "n": g.n,
        "num_classes": g.num_classes,
        "edges": g.edges.tolist(),
        "features": g.features.tolist(),
        "labels": g.labels.tolist(),
    }


def _field(doc: dict, name: str, kind):
    if name not in doc:
        raise GraphFormatError(f"missing field '{name}'")
    value = doc[name]
    if kind is int and (not isinstance(value, int) or isinstance(value, bool)):
        raise GraphFormatError(f"field '{name}' must be an integer")
    if kind is list and not isinstance(value, list):
        raise GraphFormatError(f"field '{name}' must be a list")
    return value


def graph_from_dict(doc: dict) -> Graph:
    if not isinstance(doc, dict):
        raise GraphFormatError("graph document must be a JSON object")
    n = _field(doc, "n", int)
    c = _field(doc, "num_classes", int)
    edges = _field(doc, "edges", list)
    feats = _field(doc, "features", list)
    labels = _field(doc, "labels", list)
    if any(not isinstance(e, list) or len(e) != 2 or not all(isinstance(x, int) for x in e) for e in edges):
        raise GraphFormatError("field 'edges' must hold [u, v] integer pairs")
    if len(feats) != n or any(not isinstance(r, list) for r in feats):
        raise GraphFormatError(f"field 'features' must hold {n} rows")
    if len({len(r) for r in feats}) > 1:
        raise GraphFormatError("field 'features' rows differ in length")
    if len(labels) != n or any(not isinstance(y, int) for y in labels):
        raise GraphFormatError(f"field 'labels' must hold {n} integers")
    try:
        arr = np.array(feats, dtype=np.float64).reshape(n, -1)
    except (TypeError, ValueError) as exc:
        raise GraphFormatError("field 'features' must be numeric") from exc
    try:
        return Graph(n, np.array(edges, dtype=np.int64).reshape(-1, 2), arr, labels, c)
    except ValueError as exc:
        msg = str(exc)
        name = "edges" if "edge" in msg else "labels" if "label" in msg else "features"
        raise GraphFormatError(f"field '{name}': {msg}") from exc


def save_graph(g: Graph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(g)))


def load_graph(path) -> Graph:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: not valid JSON ({exc})") from exc
    return graph_from_dict(doc)


def save_partition(part: Partition, path) -> None:
    Path(path).write_text(json.dumps({"assignment": part.assignment.tolist()}))


def load_partition(path) -> Partition:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise GraphFormatError("partition document must be a JSON object")
    a = _field(doc, "assignment", list)
    if any(not isinstance(x, int) for x in a):
        raise GraphFormatError("field 'assignment' must hold integers")
    return Partition(a)
