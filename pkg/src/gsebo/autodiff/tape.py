"""Define-by-run reverse-mode tape.

Backward rules are written in terms of recorded primitives, so with
``create_graph=True`` the gradient computation itself lands on the tape and
can be differentiated again (reverse-over-reverse).
"""
from contextlib import contextmanager

import numpy as np

from ..exceptions import ContractError


class Node:
    __slots__ = ("tape", "value", "op", "inputs", "aux", "index", "name")

    def __init__(self, tape, value, op=None, inputs=(), aux=None, index=-1, name=None):
        self.tape = tape
        self.value = value
        self.op = op
        self.inputs = inputs
        self.aux = aux or {}
        self.index = index
        self.name = name

    @property
    def recorded(self):
        """True for leaves and op outputs that depend on a leaf."""
        return self.index >= 0

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        kind = self.op.name if self.op is not None else ("leaf" if self.recorded else "const")
        return f"Node({kind}, shape={self.shape}, index={self.index})"

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __mul__(self, other):
        from . import ops

        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


class GradientMap(dict):
    """Leaf -> gradient node, remembering whether second order is available."""

    def __init__(self, items, second_order):
        super().__init__(items)
        self.second_order = second_order

    def values_of(self, leaves):
        return [self[leaf].value for leaf in leaves]


class Tape:
    def __init__(self):
        self.nodes = []
        self.leaves = []
        self._recording = True

    def __len__(self):
        return len(self.nodes)

    @contextmanager
    def paused(self):
        prev = self._recording
        self._recording = False
        try:
            yield
        finally:
            self._recording = prev

    def leaf(self, value, name=None):
        value = np.array(value, dtype=np.float64)
        node = Node(self, value, index=len(self.nodes), name=name)
        self.nodes.append(node)
        self.leaves.append(node)
        return node

    def constant(self, value):
        return Node(self, np.asarray(value, dtype=np.float64))

    def as_node(self, x):
        if isinstance(x, Node):
            if x.tape is not self:
                raise ContractError("node belongs to a different tape")
            return x
        return self.constant(x)

    def record(self, op, inputs, **aux):
        inputs = tuple(self.as_node(x) for x in inputs)
        value = op.forward(*(x.value for x in inputs), **aux)
        if self._recording and any(x.recorded for x in inputs):
            node = Node(self, value, op, inputs, aux, index=len(self.nodes))
            self.nodes.append(node)
            return node
        return Node(self, value)

    def gradients(self, loss, leaves, create_graph=False):
        """Reverse-mode gradients of scalar ``loss`` with respect to ``leaves``."""
        loss = self.as_node(loss)
        if loss.value.shape != ():
            raise ContractError("loss must be a scalar")
        wanted = set()
        for leaf in leaves:
            if not isinstance(leaf, Node) or leaf.tape is not self or leaf.op is not None or not leaf.recorded:
                raise ContractError("requested leaf is not a leaf of this tape")
            wanted.add(leaf.index)

        result = {}
        if loss.recorded:
            stop = loss.index + 1
            needs = np.zeros(stop, dtype=bool)
            for node in self.nodes[:stop]:
                if node.op is None:
                    needs[node.index] = node.index in wanted
                else:
                    needs[node.index] = any(x.recorded and needs[x.index] for x in node.inputs)

            ctx = self._null() if create_graph else self.paused()
            with ctx:
                grads = {loss.index: self.constant(np.ones(()))}
                for node in reversed(self.nodes[:stop]):
                    g = grads.pop(node.index, None)
                    if g is None or not needs[node.index]:
                        continue
                    if node.op is None:
                        result[node.index] = g
                        continue
                    mask = tuple(x.recorded and needs[x.index] for x in node.inputs)
                    parts = node.op.backward(node, g, mask)
                    for x, m, part in zip(node.inputs, mask, parts):
                        if not m or part is None:
                            continue
                        prev = grads.get(x.index)
                        grads[x.index] = part if prev is None else _accumulate(prev, part)

        out = {}
        for leaf in leaves:
            g = result.get(leaf.index)
            out[leaf] = g if g is not None else self.constant(np.zeros_like(leaf.value))
        return GradientMap(out, second_order=create_graph)

    def replay(self, leaf_values=None):
        """Recompute every recorded value from the leaves, in tape order."""
        leaf_values = leaf_values or {}
        values = []
        for node in self.nodes:
            if node.op is None:
                values.append(np.array(leaf_values.get(node, node.value), dtype=np.float64))
            else:
                args = [values[x.index] if x.recorded else x.value for x in node.inputs]
                values.append(node.op.forward(*args, **node.aux))
        return values

    @contextmanager
    def _null(self):
        yield


def _accumulate(a, b):
    from . import ops

    return ops.add(a, b)


def tape_gradients(tape, loss, leaves, create_graph=False):
    return tape.gradients(loss, leaves, create_graph=create_graph)


def vjp_through_gradient(tape, grad_map, v, w_leaves, z_leaf):
    """Contract cotangent ``v`` with the Jacobian of a recorded gradient map.

    Returns ``(v . dg/dW, v . dg/dZ)`` where ``g = grad_map[w]`` for ``w`` in
    ``w_leaves``. Jacobians are never formed.
    """
    from . import ops

    if not getattr(grad_map, "second_order", False):
        raise ContractError("gradient map was recorded without create_graph=True")
    if len(v) != len(w_leaves):
        raise ContractError("cotangent must align with the weight leaves")
    total = None
    for leaf, vec in zip(w_leaves, v):
        g = grad_map[leaf]
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != g.shape:
            raise ContractError(f"cotangent shape {vec.shape} != gradient shape {g.shape}")
        term = ops.sum(ops.mul_const(g, vec))
        total = term if total is None else ops.add(total, term)
    second = tape.gradients(total, list(w_leaves) + [z_leaf])
    return [second[w].value for w in w_leaves], second[z_leaf].value
