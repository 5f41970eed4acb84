"""Undirected graphs, normalization constants, SBM synthesis and noise injection."""
from dataclasses import dataclass, field

import numpy as np

from .autodiff.rng import RngStream
from .autodiff.sparse import SparsePattern
from .exceptions import ContractError


@dataclass(frozen=True, eq=False)
class Graph:
    n: int
    pattern: SparsePattern
    has_self_loops: bool = False

    def __post_init__(self):
        if self.pattern.n != self.n:
            raise ContractError("pattern size does not match node count")
        p = self.pattern
        on_diag = p.rows == p.col_indices
        if self.has_self_loops and on_diag.sum() != self.n:
            raise ContractError("has_self_loops set but some diagonal entries are missing")
        if not self.has_self_loops and on_diag.any():
            raise ContractError("diagonal entries present but has_self_loops is False")

    @classmethod
    def from_edges(cls, n, edges):
        """Graph without self loops from undirected pairs (any orientation)."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ContractError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ContractError("self loops are not allowed in an edge list")
        canon = np.sort(edges, axis=1)
        if np.unique(canon, axis=0).shape[0] != canon.shape[0]:
            raise ContractError("duplicate undirected edge")
        return cls(n, SparsePattern.from_edges(n, canon))

    @property
    def nnz(self):
        return self.pattern.nnz

    @property
    def num_edges(self):
        """Undirected non-loop edge count."""
        loops = self.n if self.has_self_loops else 0
        return (self.pattern.nnz - loops) // 2

    def edges(self):
        """Canonical ``(m, 2)`` array of undirected pairs with ``u < v``, sorted."""
        p = self.pattern
        upper = p.rows < p.col_indices
        return np.stack([p.rows[upper], p.col_indices[upper]], axis=1)

    def without_self_loops(self):
        if not self.has_self_loops:
            return self
        return Graph.from_edges(self.n, self.edges())


@dataclass(frozen=True, eq=False)
class DataSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            arr = np.sort(np.asarray(getattr(self, name), dtype=np.int64))
            if arr.size == 0:
                raise ContractError(f"{name} split is empty")
            if np.unique(arr).size != arr.size:
                raise ContractError(f"{name} split has duplicate indices")
            object.__setattr__(self, name, arr)
        joined = np.concatenate([self.train, self.val, self.test])
        if np.unique(joined).size != joined.size:
            raise ContractError("train/val/test splits overlap")

    def validate(self, n):
        for name in ("train", "val", "test"):
            arr = getattr(self, name)
            if arr.min() < 0 or arr.max() >= n:
                raise ContractError(f"{name} split index out of range [0, {n})")


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    split: DataSplit
    name: str = "bundle"
    num_classes: int = field(default=None)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] != self.graph.n:
            raise ContractError("feature rows must equal node count")
        if labels.shape != (self.graph.n,):
            raise ContractError("labels length must equal node count")
        if not np.all(np.isfinite(features)):
            raise ContractError("features must be finite")
        if labels.size and labels.min() < 0:
            raise ContractError("class indices must be non-negative")
        num_classes = self.num_classes
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if labels.size else 0
        elif labels.size and labels.max() >= num_classes:
            raise ContractError("class index exceeds num_classes")
        self.split.validate(self.graph.n)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", int(num_classes))

    @property
    def n(self):
        return self.graph.n

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def with_graph(self, graph):
        return DatasetBundle(graph, self.features, self.labels, self.split, self.name, self.num_classes)


def add_self_loops(g):
    if g.has_self_loops:
        raise ContractError("graph already has self loops")
    p = g.pattern
    loops = np.arange(g.n)
    pattern = SparsePattern.from_pairs(
        g.n, np.concatenate([p.rows, loops]), np.concatenate([p.col_indices, loops])
    )
    return Graph(g.n, pattern, has_self_loops=True)


def degrees(g):
    return g.pattern.degrees()


def sym_norm_values(g):
    """``1/sqrt(d_i d_j)`` per stored entry of a self-looped graph."""
    if not g.has_self_loops:
        raise ContractError("symmetric normalization expects self loops")
    d = degrees(g).astype(np.float64)
    p = g.pattern
    return 1.0 / np.sqrt(d[p.rows] * d[p.col_indices])


def row_norm_values(g):
    """``1/d_i`` per stored entry of row i; isolated rows simply have no entries."""
    if g.has_self_loops:
        raise ContractError("row normalization expects a graph without self loops")
    d = degrees(g).astype(np.float64)
    return 1.0 / d[g.pattern.rows]


def inter_class_ratio(g, labels):
    edges = g.edges()
    if edges.shape[0] == 0:
        return 0.0
    labels = np.asarray(labels)
    return float(np.mean(labels[edges[:, 0]] != labels[edges[:, 1]]))


def _available_inter_pairs(g, labels):
    counts = np.bincount(labels)
    total = (counts.sum() ** 2 - (counts**2).sum()) // 2
    edges = g.edges()
    existing = int(np.sum(labels[edges[:, 0]] != labels[edges[:, 1]])) if edges.size else 0
    return int(total - existing)


def inject_inter_class_edges(g, labels, k, rng):
    """Add ``k`` new undirected edges whose endpoints carry different labels.

    Pairs are drawn uniformly from all non-adjacent differing-label pairs.
    """
    labels = np.asarray(labels, dtype=np.int64)
    k = int(k)
    if k < 0:
        raise ContractError("k must be non-negative")
    if np.unique(labels).size < 2:
        raise ContractError("noise injection needs at least two classes")
    if k == 0:
        return g
    available = _available_inter_pairs(g, labels)
    if k > available:
        raise ContractError(f"requested {k} inter-class edges but only {available} candidates exist")

    base = g.without_self_loops()
    n = g.n
    existing = set((base.edges()[:, 0] * n + base.edges()[:, 1]).tolist())
    gen = rng.generator()
    if k * 4 > available and n <= 5000:
        iu, ju = np.triu_indices(n, 1)
        keys = iu * n + ju
        ok = labels[iu] != labels[ju]
        keys = keys[ok]
        keys = keys[~np.isin(keys, np.fromiter(existing, dtype=np.int64, count=len(existing)))]
        chosen = np.sort(gen.choice(keys, size=k, replace=False))
        added = np.stack([chosen // n, chosen % n], axis=1)
    else:
        picked = []
        seen = set(existing)
        while len(picked) < k:
            batch = gen.integers(0, n, size=(2 * (k - len(picked)) + 16, 2))
            for u, v in batch.tolist():
                if u == v or labels[u] == labels[v]:
                    continue
                if u > v:
                    u, v = v, u
                key = u * n + v
                if key in seen:
                    continue
                seen.add(key)
                picked.append((u, v))
                if len(picked) == k:
                    break
        added = np.asarray(picked, dtype=np.int64)
    noisy = Graph.from_edges(n, np.concatenate([base.edges(), added]))
    return add_self_loops(noisy) if g.has_self_loops else noisy


def random_split(n, rng, ratios=(0.1, 0.2, 0.7)):
    """Random train/val/test split with the given proportions."""
    perm = rng.generator().permutation(n)
    n_train = max(1, int(round(ratios[0] * n)))
    n_val = max(1, int(round(ratios[1] * n)))
    if n_train + n_val >= n:
        raise ContractError("too few nodes for a three-way split")
    return DataSplit(perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :])


def generate_sbm(
    n,
    classes,
    p_intra,
    p_inter,
    feature_dim=None,
    feature_noise=1.0,
    rng=None,
    name="sbm",
):
    """Stochastic block model bundle with noisy one-hot class features."""
    if classes < 2:
        raise ContractError("need at least two classes")
    if n < 3 * classes:
        raise ContractError("too few nodes for the requested number of classes")
    for p in (p_intra, p_inter):
        if not 0.0 <= p <= 1.0:
            raise ContractError("edge probabilities must lie in [0, 1]")
    feature_dim = classes if feature_dim is None else int(feature_dim)
    if feature_dim < classes:
        raise ContractError("feature_dim must be at least the number of classes")
    rng = RngStream(0) if rng is None else rng

    labels = np.arange(n, dtype=np.int64) % classes
    iu, ju = np.triu_indices(n, 1)
    prob = np.where(labels[iu] == labels[ju], p_intra, p_inter)
    hit = rng.uniform(size=iu.size) < prob
    graph = Graph.from_edges(n, np.stack([iu[hit], ju[hit]], axis=1))

    features = np.zeros((n, feature_dim))
    features[np.arange(n), labels] = 1.0
    features += feature_noise * rng.normal(size=(n, feature_dim))
    split = random_split(n, rng)
    return DatasetBundle(graph, features, labels, split, name=name, num_classes=classes)
