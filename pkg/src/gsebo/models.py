"""GNN backbones whose propagation matrix is ``clamp01(Z) * A_tilde``.

Every backbone runs either in structure-learning mode, where ``Z`` is a tape
leaf, or in vanilla mode, where the propagation weights are the usual fixed
normalization constants (GCN, GraphSAGE, JK-Net) or attention (GAT).
"""
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .autodiff import ops
from .autodiff.rng import RngStream
from .autodiff.tape import Tape
from .exceptions import ContractError
from .graph import add_self_loops, row_norm_values, sym_norm_values

BACKBONES = ("gcn", "sage", "jknet", "gat")
ATTENTION_SLOPE = 0.2


@dataclass(frozen=True)
class BackboneConfig:
    backbone: str = "gcn"
    layers: int = 2
    hidden: int = 16
    heads: int = 1
    dropout: float = 0.5

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ContractError(f"unknown backbone {self.backbone!r}; expected one of {BACKBONES}")
        if self.layers < 1 or self.hidden < 1 or self.heads < 1:
            raise ContractError("layers, hidden and heads must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must lie in [0, 1)")


@dataclass
class ModelState:
    config: BackboneConfig
    weights: list
    z: np.ndarray
    rng: RngStream = field(default_factory=lambda: RngStream(0))

    def copy(self):
        return ModelState(
            self.config, [w.copy() for w in self.weights], self.z.copy(), self.rng.copy()
        )


class Structure:
    """Propagation pattern and initial strengths for one graph/backbone pair."""

    def __init__(self, graph, backbone, heads=1):
        base = graph.without_self_loops()
        if backbone == "sage":
            self.graph = base
            init = row_norm_values(base)
        else:
            self.graph = add_self_loops(base)
            init = sym_norm_values(self.graph)
        self.pattern = self.graph.pattern
        self.base_values = init
        reps = heads if backbone == "gat" else 1
        self.init_values = np.tile(init, reps)
        self.heads = reps

    @property
    def nnz(self):
        return self.pattern.nnz


@lru_cache(maxsize=64)
def _structure(graph, backbone, heads):
    return Structure(graph, backbone, heads)


def structure_for(bundle, config):
    heads = config.heads if config.backbone == "gat" else 1
    return _structure(bundle.graph, config.backbone, heads)


def weight_shapes(config, in_dim, n_classes):
    k, h = config.layers, config.hidden
    dims = [in_dim] + [h] * (k - 1) + [n_classes]
    if config.backbone == "gcn":
        return [(dims[i], dims[i + 1]) for i in range(k)]
    if config.backbone == "sage":
        return [(2 * dims[i], dims[i + 1]) for i in range(k)]
    if config.backbone == "jknet":
        hidden = [(dims[i], h) for i in range(k - 1)]
        return hidden + [(in_dim + (k - 1) * h, n_classes)]
    shapes = []
    for i in range(k):
        for _ in range(config.heads):
            shapes += [(dims[i], dims[i + 1]), (dims[i + 1], 1), (dims[i + 1], 1)]
    return shapes


def glorot(gen, shape):
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return gen.uniform(-limit, limit, size=shape)


def init_z(bundle, config):
    return structure_for(bundle, config).init_values.copy()


def init_model(bundle, config, rng):
    """Glorot-uniform weights and ``Z`` set to the backbone's normalized adjacency."""
    gen = rng.generator()
    shapes = weight_shapes(config, bundle.feature_dim, bundle.num_classes)
    weights = [glorot(gen, s) for s in shapes]
    return ModelState(config, weights, init_z(bundle, config), rng.spawn(1))


def gse_extract(z, pattern):
    """Edge values of ``clamp01(Z) * A_tilde`` on the stored pattern."""
    if z.shape[0] % pattern.nnz:
        raise ContractError("strength vector is not aligned to the pattern")
    return ops.clamp01(z)


class MaskSource:
    """Supplies dropout masks: freshly drawn, or replayed from a record."""

    def __init__(self, rng=None, replay=None):
        self.rng = rng
        self._replay = list(replay) if replay is not None else None
        self.drawn = []

    def apply(self, x, rate, training):
        if not training or rate == 0.0:
            return x
        mask = None
        if self._replay is not None:
            if not self._replay:
                raise ContractError("dropout replay record exhausted")
            mask = self._replay.pop(0)
        out, mask = ops.dropout(x, rate, self.rng, training=True, mask=mask)
        self.drawn.append(mask)
        return out


def _propagate(pattern, values, h, w):
    # (S H) W == S (H W); contract the wide side first
    if h.shape[1] > w.shape[1]:
        return ops.spmm(pattern, values, ops.matmul(h, w))
    return ops.matmul(ops.spmm(pattern, values, h), w)


def build_logits(tape, weights, z, bundle, config, training=False, masks=None):
    """Record the forward pass; ``z=None`` selects vanilla mode."""
    st = structure_for(bundle, config)
    masks = masks or MaskSource()
    x = tape.constant(bundle.features)
    rate = config.dropout
    pattern = st.pattern
    if z is None:
        values = tape.constant(st.init_values)
    else:
        if z.shape != (st.init_values.size,):
            raise ContractError(
                f"strength vector has shape {z.shape}, expected ({st.init_values.size},)"
            )
        values = gse_extract(z, pattern)

    k = config.layers
    backbone = config.backbone
    if backbone == "gcn":
        h = x
        for i, w in enumerate(weights):
            h = _propagate(pattern, values, h, w)
            if i < k - 1:
                h = masks.apply(ops.relu(h), rate, training)
        return h

    if backbone == "sage":
        h = x
        for i, w in enumerate(weights):
            h = ops.matmul(ops.concat_cols(h, ops.spmm(pattern, values, h)), w)
            if i < k - 1:
                h = masks.apply(ops.relu(h), rate, training)
        return h

    if backbone == "jknet":
        reps, h = [x], x
        for w in weights[:-1]:
            h = masks.apply(ops.relu(_propagate(pattern, values, h, w)), rate, training)
            reps.append(h)
        return ops.matmul(ops.concat_cols(*reps), weights[-1])

    heads = config.heads
    nnz = pattern.nnz
    h = x
    for i in range(k):
        outs = []
        for j in range(heads):
            w, a_src, a_dst = weights[3 * (i * heads + j) : 3 * (i * heads + j) + 3]
            if z is None:
                hw = ops.matmul(h, w)
                score = ops.add(
                    ops.reshape(ops.take(ops.matmul(hw, a_src), pattern.rows), (nnz,)),
                    ops.reshape(ops.take(ops.matmul(hw, a_dst), pattern.col_indices), (nnz,)),
                )
                alpha = ops.segment_softmax(ops.leaky_relu(score, ATTENTION_SLOPE), pattern)
                outs.append(ops.spmm(pattern, alpha, hw))
            else:
                head_values = values if heads == 1 else ops.take(values, np.arange(j * nnz, (j + 1) * nnz))
                outs.append(_propagate(pattern, head_values, h, w))
        total = outs[0]
        for o in outs[1:]:
            total = ops.add(total, o)
        h = ops.scale(total, 1.0 / heads)
        if i < k - 1:
            h = masks.apply(ops.relu(h), rate, training)
    return h


def weight_penalty(weights):
    total = None
    for w in weights:
        term = ops.sum(ops.mul(w, w))
        total = term if total is None else ops.add(total, term)
    return total


class GSEObjective:
    """Inner (train) and outer (validation) losses for one bundle and backbone.

    ``reg_z`` adds ``lam * ||Z||^2`` to the validation objective; placed in
    the inner loss it would not depend on the weights and so could never
    influence the hypergradient.
    """

    def __init__(self, bundle, config, lam=5e-4, reg_z=False, reduction="sum"):
        if reduction not in ("mean", "sum"):
            raise ContractError("reduction must be 'mean' or 'sum'")
        self.bundle = bundle
        self.config = config
        self.lam = float(lam)
        self.reg_z = bool(reg_z)
        self.reduction = reduction

    def _ce(self, logits, mask):
        loss = ops.masked_softmax_cross_entropy(logits, self.bundle.labels, mask)
        return ops.scale(loss, float(mask.size)) if self.reduction == "sum" else loss

    def inner(self, tape, weights, z, masks=None, training=True):
        b = self.bundle
        logits = build_logits(tape, weights, z, b, self.config, training, masks)
        loss = self._ce(logits, b.split.train)
        if self.lam:
            loss = ops.add(loss, ops.scale(weight_penalty(weights), self.lam))
        return loss

    def outer(self, tape, weights, z):
        b = self.bundle
        logits = build_logits(tape, weights, z, b, self.config, training=False)
        loss = self._ce(logits, b.split.val)
        if self.reg_z and self.lam and z is not None:
            loss = ops.add(loss, ops.scale(ops.sum(ops.mul(z, z)), self.lam))
        return loss


def _leaves(tape, state, vanilla):
    weights = [tape.leaf(w) for w in state.weights]
    z = None if vanilla else tape.leaf(state.z)
    return weights, z


def forward(state, bundle, training=False, vanilla=False, masks=None):
    """Logits as a numpy array."""
    tape = Tape()
    weights, z = _leaves(tape, state, vanilla)
    if training and masks is None:
        masks = MaskSource(state.rng)
    return build_logits(tape, weights, z, bundle, state.config, training, masks).value


def _forward_checked(kind, state, bundle, training, vanilla):
    if state.config.backbone != kind:
        raise ContractError(f"state was built for {state.config.backbone!r}, not {kind!r}")
    return forward(state, bundle, training=training, vanilla=vanilla)


def forward_gcn(state, bundle, training=False, vanilla=False):
    return _forward_checked("gcn", state, bundle, training, vanilla)


def forward_sage(state, bundle, training=False, vanilla=False):
    return _forward_checked("sage", state, bundle, training, vanilla)


def forward_jknet(state, bundle, training=False, vanilla=False):
    return _forward_checked("jknet", state, bundle, training, vanilla)


def forward_gat(state, bundle, training=False, vanilla=False):
    return _forward_checked("gat", state, bundle, training, vanilla)


def inner_loss(state, bundle, training=False, lam=5e-4, vanilla=False, reduction="sum"):
    """Training cross-entropy plus ``lam`` times the squared Frobenius norm of the weights."""
    tape = Tape()
    weights, z = _leaves(tape, state, vanilla)
    masks = MaskSource(state.rng) if training else None
    objective = GSEObjective(bundle, state.config, lam, reduction=reduction)
    return float(objective.inner(tape, weights, z, masks, training).value)


def outer_loss(state, bundle, vanilla=False, reduction="sum"):
    """Validation cross-entropy with dropout off and no penalty."""
    tape = Tape()
    weights, z = _leaves(tape, state, vanilla)
    objective = GSEObjective(bundle, state.config, 0.0, reduction=reduction)
    return float(objective.outer(tape, weights, z).value)


def with_config(state, **changes):
    return ModelState(replace(state.config, **changes), state.weights, state.z, state.rng)
