"""scikit-learn style wrapper for transductive node classification."""
import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .autodiff.rng import RngStream
from .bilevel import TrainConfig, train_gsebo, train_vanilla
from .graph import DataSplit, DatasetBundle, Graph, random_split
from .models import BackboneConfig, forward, structure_for


def check_adjacency(adjacency, n):
    """Coerce a dense/sparse adjacency, an ``(m, 2)`` edge array or a Graph.

    The diagonal is dropped (self loops are added by the backbones that need
    them); any nonzero counts as an edge. Asymmetric input is rejected.
    """
    if isinstance(adjacency, Graph):
        if adjacency.n != n:
            raise ValueError(f"graph has {adjacency.n} nodes, X has {n} rows")
        return adjacency.without_self_loops()
    if sp.issparse(adjacency) or (np.ndim(adjacency) == 2 and np.shape(adjacency) == (n, n)):
        a = sp.coo_matrix(adjacency)
        if a.shape != (n, n):
            raise ValueError(f"adjacency must be {n}x{n}, got {a.shape}")
        a.eliminate_zeros()
        a = sp.coo_matrix((np.ones(a.nnz, dtype=np.int8), (a.row, a.col)), shape=a.shape)
        a.sum_duplicates()
        csr = a.tocsr()
        if (csr != csr.T).nnz:
            raise ValueError("adjacency must be symmetric")
        keep = a.row < a.col
        return Graph.from_edges(n, np.stack([a.row[keep], a.col[keep]], axis=1))
    edges = check_array(adjacency, dtype=np.int64, ensure_min_samples=0)
    if edges.shape[1] != 2:
        raise ValueError("edge list must have two columns")
    edges = edges[edges[:, 0] != edges[:, 1]]
    canon = np.unique(np.sort(edges, axis=1), axis=0)
    return Graph.from_edges(n, canon)


class GSEBOClassifier(ClassifierMixin, TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Node classifier that learns per-edge strengths alongside GNN weights.

    ``fit`` is transductive: ``X`` and ``y`` cover every node of the graph and
    only the labels at ``train_idx``/``val_idx`` are used for learning. With
    ``learn_structure=False`` the model is the plain backbone.

    ``transform`` returns the learned strengths ``clamp01(Z)`` laid out on the
    propagation pattern (self loops included for gcn, jknet and gat) as a CSR
    matrix, so the denoised graph can feed other estimators.
    """

    def __init__(
        self,
        backbone="gcn",
        layers=2,
        hidden=16,
        heads=1,
        dropout=0.5,
        tau=15,
        eta_inner=0.01,
        eta_outer=0.01,
        lam=5e-4,
        patience=20,
        max_outer=400,
        include_direct_term=True,
        warm_start=True,
        reg_z=False,
        reduction="sum",
        learn_structure=True,
        random_state=0,
    ):
        self.backbone = backbone
        self.layers = layers
        self.hidden = hidden
        self.heads = heads
        self.dropout = dropout
        self.tau = tau
        self.eta_inner = eta_inner
        self.eta_outer = eta_outer
        self.lam = lam
        self.patience = patience
        self.max_outer = max_outer
        self.include_direct_term = include_direct_term
        self.warm_start = warm_start
        self.reg_z = reg_z
        self.reduction = reduction
        self.learn_structure = learn_structure
        self.random_state = random_state

    def _configs(self):
        backbone = BackboneConfig(self.backbone, self.layers, self.hidden, self.heads, self.dropout)
        train = TrainConfig(
            eta_inner=self.eta_inner,
            eta_outer=self.eta_outer,
            tau=self.tau,
            lam=self.lam,
            patience=self.patience,
            max_outer=self.max_outer,
            seed=int(self.random_state or 0),
            include_direct_term=self.include_direct_term,
            warm_start=self.warm_start,
            reg_z=self.reg_z,
            reduction=self.reduction,
        )
        return backbone, train

    def fit(self, X, y, adjacency, train_idx=None, val_idx=None, test_idx=None):
        X = check_array(X, dtype=np.float64)
        y = column_or_1d(y)
        n = X.shape[0]
        if y.shape[0] != n:
            raise ValueError(f"y has {y.shape[0]} entries, X has {n} rows")
        graph = check_adjacency(adjacency, n)

        if train_idx is None or val_idx is None:
            drawn = random_split(n, RngStream(int(self.random_state or 0)).spawn(7))
            train_idx = drawn.train if train_idx is None else train_idx
            val_idx = drawn.val if val_idx is None else val_idx
        train_idx = np.asarray(train_idx, dtype=np.int64)
        val_idx = np.asarray(val_idx, dtype=np.int64)
        labelled = np.concatenate([train_idx, val_idx])

        self.classes_ = np.unique(y[labelled])
        known = np.isin(y, self.classes_)
        encoded = np.zeros(n, dtype=np.int64)
        encoded[known] = np.searchsorted(self.classes_, y[known])
        if test_idx is None:
            rest = np.setdiff1d(np.arange(n), labelled)
            test_idx = rest[known[rest]]
        test_idx = np.asarray(test_idx, dtype=np.int64)
        if test_idx.size == 0:
            raise ValueError("no test nodes: pass test_idx or leave some labelled nodes outside train/val")
        split = DataSplit(train_idx, val_idx, test_idx)
        bundle = DatasetBundle(graph, X, encoded, split, num_classes=len(self.classes_))
        backbone_cfg, train_cfg = self._configs()
        train = train_gsebo if self.learn_structure else train_vanilla
        self.state_, self.history_ = train(bundle, backbone_cfg, train_cfg)
        self.bundle_ = bundle
        self.n_features_in_ = X.shape[1]
        return self

    def _bundle_for(self, X):
        check_is_fitted(self, "state_")
        if X is None:
            return self.bundle_
        X = check_array(X, dtype=np.float64)
        if X.shape != self.bundle_.features.shape:
            raise ValueError(
                f"X must cover the fitted graph: expected shape {self.bundle_.features.shape}, got {X.shape}"
            )
        b = self.bundle_
        return DatasetBundle(b.graph, X, b.labels, b.split, b.name, b.num_classes)

    def decision_function(self, X=None):
        return forward(self.state_, self._bundle_for(X), vanilla=not self.learn_structure)

    def predict_proba(self, X=None):
        logits = self.decision_function(X)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X=None):
        check_is_fitted(self, "state_")
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    @property
    def edge_strengths_(self):
        check_is_fitted(self, "state_")
        return np.clip(self.state_.z, 0.0, 1.0)

    def transform(self, X=None):
        check_is_fitted(self, "state_")
        st = structure_for(self.bundle_, self.state_.config)
        values = self.edge_strengths_.reshape(st.heads, st.nnz).mean(axis=0)  # GAT: head average
        return st.pattern.to_scipy(values)
