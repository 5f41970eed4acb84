"""Unrolled inner gradient descent and the reverse hypergradient recurrence.

The inner problem takes ``tau`` plain gradient steps on the weights,
``W_t = W_{t-1} - eta_i * grad_W L(W_{t-1}, Z)``. Walking those steps
backwards carries a cotangent ``alpha`` on the weights and accumulates the
hypergradient ``P``::

    alpha_tau = dF/dW_tau
    for t = tau .. 1:
        P       += alpha_t . N_t   = -eta_i * alpha_t . d(grad_W L)/dZ
        alpha_{t-1} = alpha_t . M_t = alpha_t - eta_i * alpha_t . d(grad_W L)/dW

Both products are vector-Jacobian products through a recorded gradient, so
no Hessian is ever formed.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff.rng import RngStream
from .autodiff.tape import Tape, vjp_through_gradient
from .exceptions import ContractError, DivergenceError
from .metrics import accuracy
from .models import GSEObjective, MaskSource, build_logits, init_model

NNZ_GUARD = 512


@dataclass(frozen=True)
class TrainConfig:
    eta_inner: float = 0.01
    eta_outer: float = 0.01
    tau: int = 15
    lam: float = 5e-4
    patience: int = 20
    max_outer: int = 400
    seed: int = 0
    include_direct_term: bool = True
    warm_start: bool = True
    reg_z: bool = False
    reduction: str = "sum"

    def __post_init__(self):
        if self.tau < 1:
            raise ContractError("tau must be at least 1")
        if self.eta_inner < 0 or self.eta_outer < 0:
            raise ContractError("learning rates must be non-negative")
        if self.patience < 0 or self.max_outer < 0:
            raise ContractError("patience and max_outer must be non-negative")


@dataclass
class Trajectory:
    """Weight checkpoints ``W_0 .. W_tau`` and the dropout masks of each step."""

    checkpoints: list
    masks: list
    losses: list
    z: object
    eta: float
    training: bool

    @property
    def tau(self):
        return len(self.checkpoints) - 1


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_iteration: int = -1

    COLUMNS = (
        "iteration",
        "inner_loss",
        "outer_loss",
        "train_acc",
        "val_acc",
        "test_acc",
        "hypergrad_norm",
    )

    def __len__(self):
        return len(self.records)

    @property
    def best(self):
        return self.records[self.best_iteration] if self.records else None

    @property
    def final_test_accuracy(self):
        return self.best["test_acc"] if self.records else float("nan")

    def to_tsv(self):
        lines = ["\t".join(self.COLUMNS)]
        for r in self.records:
            cells = [str(r["iteration"])]
            cells += [f"{r[c]:.10g}" for c in self.COLUMNS[1:]]
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"


def _step_tape(objective, weights, z, masks, training):
    tape = Tape()
    w_leaves = [tape.leaf(w) for w in weights]
    z_leaf = None if z is None else tape.leaf(z)
    loss = objective.inner(tape, w_leaves, z_leaf, masks, training)
    return tape, w_leaves, z_leaf, loss


def run_inner(objective, weights, z, eta, tau, rng=None, training=True):
    """``tau`` gradient-descent steps on ``weights`` with ``z`` held fixed.

    ``z=None`` runs the objective in vanilla mode.
    """
    if tau < 1:
        raise ContractError("tau must be at least 1")
    current = [np.array(w, dtype=np.float64) for w in weights]
    checkpoints, all_masks, losses = [current], [], []
    for t in range(1, tau + 1):
        masks = MaskSource(rng)
        # overflow surfaces as DivergenceError below, not as numpy warnings
        with np.errstate(over="ignore", invalid="ignore"):
            tape, w_leaves, _, loss = _step_tape(objective, current, z, masks, training)
        value = float(loss.value)
        if not np.isfinite(value):
            raise DivergenceError(f"inner loss became non-finite ({value}) at step {t}")
        grads = tape.gradients(loss, w_leaves)
        current = [w - eta * g for w, g in zip(current, grads.values_of(w_leaves))]
        checkpoints.append(current)
        all_masks.append(masks.drawn)
        losses.append(value)
    return Trajectory(checkpoints, all_masks, losses, None if z is None else np.array(z), eta, training)


def replay_step(objective, traj, t, create_graph=True):
    """Rebuild inner step ``t`` (1-based) from ``W_{t-1}`` and its recorded masks."""
    masks = MaskSource(replay=traj.masks[t - 1])
    tape, w_leaves, z_leaf, loss = _step_tape(
        objective, traj.checkpoints[t - 1], traj.z, masks, traj.training
    )
    grads = tape.gradients(loss, w_leaves, create_graph=create_graph)
    updated = [w - traj.eta * g for w, g in zip(traj.checkpoints[t - 1], grads.values_of(w_leaves))]
    return updated, tape, w_leaves, z_leaf, grads


def outer_gradients(objective, weights, z):
    """``(dF/dW, dF/dZ)`` of the validation objective at ``(weights, z)``."""
    tape = Tape()
    w_leaves = [tape.leaf(w) for w in weights]
    z_leaf = tape.leaf(z)
    loss = objective.outer(tape, w_leaves, z_leaf)
    grads = tape.gradients(loss, w_leaves + [z_leaf])
    return float(loss.value), grads.values_of(w_leaves), grads[z_leaf].value


def reverse_hypergradient(objective, traj, include_direct_term=True):
    if traj.z is None:
        raise ContractError("trajectory was run in vanilla mode; there is no Z to differentiate")
    _, alpha, direct = outer_gradients(objective, traj.checkpoints[-1], traj.z)
    p = np.zeros_like(traj.z)
    for t in range(traj.tau, 0, -1):
        updated, tape, w_leaves, z_leaf, grads = replay_step(objective, traj, t)
        if not all(np.array_equal(a, b) for a, b in zip(updated, traj.checkpoints[t])):
            raise ContractError(f"trajectory/tape mismatch at inner step {t}")
        v_m, v_n = vjp_through_gradient(tape, grads, alpha, w_leaves, z_leaf)
        p -= traj.eta * v_n
        alpha = [a - traj.eta * m for a, m in zip(alpha, v_m)]
    if include_direct_term:
        p += direct
    return p


def _objective(state, bundle, cfg, objective):
    if objective is not None:
        return objective
    return GSEObjective(bundle, state.config, cfg.lam, cfg.reg_z, cfg.reduction)


def inner_unroll(state, bundle, cfg, objective=None, vanilla=False):
    """Unroll ``cfg.tau`` steps from ``state.weights``; leaves ``W_tau`` in the state."""
    objective = _objective(state, bundle, cfg, objective)
    training = state.config.dropout > 0
    traj = run_inner(
        objective,
        state.weights,
        None if vanilla else state.z,
        cfg.eta_inner,
        cfg.tau,
        state.rng,
        training,
    )
    state.weights = traj.checkpoints[-1]
    return traj


def hypergradient_reverse(traj, state, bundle, cfg, objective=None):
    objective = _objective(state, bundle, cfg, objective)
    return reverse_hypergradient(objective, traj, cfg.include_direct_term)


def outer_step(z, p, cfg):
    """Gradient step on the raw (unclamped) strengths."""
    z = np.asarray(z, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if z.shape != p.shape:
        raise ContractError("hypergradient is not aligned with Z")
    if not np.all(np.isfinite(p)):
        raise DivergenceError("hypergradient contains non-finite entries")
    return z - cfg.eta_outer * p


def fd_hypergradient_oracle(state, bundle, cfg, epsilon=1e-4, objective=None, max_nnz=NNZ_GUARD):
    """Central finite differences of ``F(unroll(W_0, Z), Z)`` per strength entry.

    The unroll restarts from ``state.weights`` for every probe. With the
    direct term disabled the validation loss is read at the unperturbed Z.
    """
    if state.config.dropout != 0:
        raise ContractError("finite-difference oracle requires dropout disabled")
    objective = _objective(state, bundle, cfg, objective)
    z0 = np.array(state.z, dtype=np.float64)
    if z0.size > max_nnz:
        raise ContractError(f"oracle guard: {z0.size} strength entries exceed {max_nnz}")
    return finite_difference_hypergradient(
        objective, state.weights, z0, cfg.eta_inner, cfg.tau, epsilon, cfg.include_direct_term
    )


def finite_difference_hypergradient(objective, weights, z0, eta, tau, epsilon, include_direct_term=True):
    def value(z):
        w_tau = run_inner(objective, weights, z, eta, tau, training=False).checkpoints[-1]
        tape = Tape()
        leaves = [tape.leaf(w) for w in w_tau]
        probe = tape.leaf(z if include_direct_term else z0)
        return float(objective.outer(tape, leaves, probe).value)

    out = np.zeros_like(z0)
    for i in range(z0.size):
        plus, minus = z0.copy(), z0.copy()
        plus.flat[i] += epsilon
        minus.flat[i] -= epsilon
        out.flat[i] = (value(plus) - value(minus)) / (2.0 * epsilon)
    return out


def _evaluate(objective, state, vanilla):
    b = objective.bundle
    tape = Tape()
    weights = [tape.leaf(w) for w in state.weights]
    z = None if vanilla else tape.leaf(state.z)
    logits = build_logits(tape, weights, z, b, state.config, training=False)
    val_objective = GSEObjective(b, state.config, 0.0, reduction=objective.reduction).outer(
        tape, weights, z
    )
    s = b.split
    return (
        float(val_objective.value),
        accuracy(logits.value, b.labels, s.train),
        accuracy(logits.value, b.labels, s.val),
        accuracy(logits.value, b.labels, s.test),
    )


def _train(bundle, backbone_cfg, cfg, learn_z, callback=None):
    rng = RngStream(cfg.seed)
    state = init_model(bundle, backbone_cfg, rng)
    objective = GSEObjective(bundle, backbone_cfg, cfg.lam, cfg.reg_z, cfg.reduction)
    history = TrainHistory()
    best_state, best_acc, since_best = state.copy(), -np.inf, 0
    initial_weights = [w.copy() for w in state.weights]
    vanilla = not learn_z

    for it in range(cfg.max_outer):
        start = time.perf_counter()
        if not cfg.warm_start:
            state.weights = [w.copy() for w in initial_weights]
        traj = inner_unroll(state, bundle, cfg, objective, vanilla=vanilla)
        outer, acc_train, acc_val, acc_test = _evaluate(objective, state, vanilla)
        p = None
        if learn_z:
            p = reverse_hypergradient(objective, traj, cfg.include_direct_term)
        record = {
            "iteration": it,
            "inner_loss": traj.losses[-1],
            "outer_loss": outer,
            "train_acc": acc_train,
            "val_acc": acc_val,
            "test_acc": acc_test,
            "hypergrad_norm": float(np.linalg.norm(p)) if p is not None else 0.0,
        }
        if not np.isfinite(outer):
            raise DivergenceError(f"validation loss became non-finite at outer iteration {it}")
        if acc_val > best_acc:
            best_acc, best_state, since_best = acc_val, state.copy(), 0
            history.best_iteration = it
        else:
            since_best += 1
        if learn_z:
            state.z = outer_step(state.z, p, cfg)
        record["wall_time"] = time.perf_counter() - start
        history.records.append(record)
        if callback is not None:
            callback(record)
        if since_best >= cfg.patience:
            break
    return best_state, history


def train_gsebo(bundle, backbone_cfg, cfg, callback=None):
    """Alternate inner unrolls, hypergradients and strength updates with early stopping.

    Returns the snapshot with the best validation accuracy and the history.
    """
    return _train(bundle, backbone_cfg, cfg, learn_z=True, callback=callback)


def train_vanilla(bundle, backbone_cfg, cfg, callback=None):
    """Same schedule with the structure frozen (attention for GAT)."""
    return _train(bundle, backbone_cfg, cfg, learn_z=False, callback=callback)


def relu_margin(objective, traj):
    """Smallest |pre-activation| fed to a ReLU anywhere along the trajectory."""
    from .autodiff.ops import Relu

    margin = np.inf
    for w in traj.checkpoints:
        tape, *_ = _step_tape(objective, w, traj.z, None, False)
        for node in tape.nodes:
            if node.op is Relu and node.inputs[0].value.size:
                margin = min(margin, float(np.abs(node.inputs[0].value).min()))
    return margin


@dataclass
class GradCheckResult:
    backbone: str
    tau: int
    max_rel_error: float
    checked: int
    skipped: int
    relu_margin: float
    analytic: np.ndarray
    numeric: np.ndarray

    def passed(self, tol=1e-3):
        return self.max_rel_error <= tol


def compare_hypergradients(analytic, numeric, floor=1e-8):
    """Max per-entry relative error, skipping entries with ``|numeric| < floor``."""
    keep = np.abs(numeric) >= floor
    if not keep.any():
        return 0.0, 0, int(keep.size)
    rel = np.abs(analytic[keep] - numeric[keep]) / np.abs(numeric[keep])
    return float(rel.max()), int(keep.sum()), int((~keep).sum())


def check_hypergradient(
    bundle,
    backbone_cfg,
    cfg,
    epsilon=1e-4,
    margin=1e-3,
    max_attempts=50,
):
    """Reverse hypergradient vs. the finite-difference oracle at a kink-free point.

    Strengths are jittered into (0, 1) away from the clamp corners and the
    jitter is redrawn until every ReLU input along the unroll is at least
    ``margin`` from zero.
    """
    if backbone_cfg.dropout != 0:
        raise ContractError("gradient check requires dropout disabled")
    rng = RngStream(cfg.seed)
    base = init_model(bundle, backbone_cfg, rng)
    objective = GSEObjective(bundle, backbone_cfg, cfg.lam, cfg.reg_z, cfg.reduction)
    for attempt in range(max_attempts):
        state = base.copy()
        jitter = rng.spawn(100 + attempt).uniform(size=state.z.size, low=0.75, high=0.95)
        state.z = np.clip(state.z, 0.05, 1.0) * jitter
        traj = run_inner(objective, state.weights, state.z, cfg.eta_inner, cfg.tau, training=False)
        found = relu_margin(objective, traj)
        if found >= margin:
            break
    else:
        raise ContractError(f"no kink-free point found in {max_attempts} attempts")
    analytic = reverse_hypergradient(objective, traj, cfg.include_direct_term)
    numeric = fd_hypergradient_oracle(state, bundle, cfg, epsilon, objective)
    err, checked, skipped = compare_hypergradients(analytic, numeric)
    return GradCheckResult(
        backbone_cfg.backbone, cfg.tau, err, checked, skipped, found, analytic, numeric
    )
