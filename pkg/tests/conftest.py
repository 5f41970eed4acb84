import numpy as np
import pytest

from gsebo.autodiff import Tape, ops
from gsebo.autodiff.rng import RngStream
from gsebo.graph import DataSplit, DatasetBundle, Graph, generate_sbm


def central_fd(f, x, eps=1e-6):
    """Central differences of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    for i in range(x.size):
        p, m = x.copy(), x.copy()
        p.flat[i] += eps
        m.flat[i] -= eps
        out.flat[i] = (f(p) - f(m)) / (2 * eps)
    return out


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, float), np.asarray(b, float)
    keep = np.abs(b) >= floor
    if not keep.any():
        return float(np.max(np.abs(a - b)))
    return float(np.max(np.abs(a[keep] - b[keep]) / np.abs(b[keep])))


class QuadraticToy:
    """Scalar inner loss ``(w - z)^2`` and outer loss ``w^2``."""

    reduction = "sum"

    def inner(self, tape, weights, z, masks=None, training=True):
        d = ops.sub(weights[0], z)
        return ops.sum(ops.mul(d, d))

    def outer(self, tape, weights, z):
        return ops.sum(ops.mul(weights[0], weights[0]))


@pytest.fixture
def toy():
    return QuadraticToy()


def tiny_bundle(n=6, seed=0, classes=2, feature_dim=3):
    """Hand-sized graph: a ring plus one chord, isolated-free."""
    edges = [(i, (i + 1) % n) for i in range(n)] + [(0, n // 2)]
    g = Graph.from_edges(n, edges)
    gen = np.random.default_rng(seed)
    x = gen.normal(size=(n, feature_dim))
    y = np.arange(n) % classes
    split = DataSplit([0, 1], [2, 3], list(range(4, n)))
    return DatasetBundle(g, x, y, split, name="tiny", num_classes=classes)


@pytest.fixture
def small_sbm():
    return generate_sbm(14, 2, 0.5, 0.1, feature_dim=4, feature_noise=0.5, rng=RngStream(3))


def leaf_fn(build):
    """Wrap ``build(tape, leaf) -> scalar node`` as (value_fn, grad_fn)."""

    def value(x):
        t = Tape()
        return float(build(t, t.leaf(x)).value)

    def grad(x):
        t = Tape()
        leaf = t.leaf(x)
        loss = build(t, leaf)
        return t.gradients(loss, [leaf])[leaf].value

    return value, grad


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
