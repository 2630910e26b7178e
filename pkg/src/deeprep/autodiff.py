"""A small define-by-run reverse-mode differentiation engine.

Only the operators needed by the model are provided: slice-wise 3x3
convolution, the mode-3 fully connected map, LeakyReLU, mode permutations,
mode-3 concatenation/splitting, the masked squared residual, the sum of
slice nuclear norms, and scalar sums. Each operator builds a :class:`Node`
holding its value and a vector-Jacobian product closure; :func:`backward`
walks the graph once in reverse topological order.

Example
-------
>>> x = Node(np.ones((2, 2, 1)))
>>> loss = sum_sq(x)
>>> grads = backward(loss)
>>> grads[x][0, 0, 0]
2.0
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import linalg, tensor_core as tc

DEFAULT_SLOPE = 0.01


class Node:
    """A value in the computation graph.

    Leaves are created directly (``Node(array)``); interior nodes are created
    by the operator functions of this module. After :func:`backward`, every
    node reached from the loss has ``grad`` set to its total adjoint.
    """

    __slots__ = ("value", "parents", "op", "grad", "_vjp")

    def __init__(self, value, parents: Sequence["Node"] = (), op: str = "leaf",
                 vjp: Callable[[np.ndarray], Sequence[np.ndarray]] | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.op = op
        self.grad: np.ndarray | None = None
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _topo_order(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> dict[Node, np.ndarray]:
    """Propagate adjoints from a scalar ``loss`` to every node of its graph.

    Returns a mapping from each leaf to its accumulated gradient. Adjoints of
    a node used by several consumers are summed.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    leaves = {}
    for node in reversed(order):
        g = node.grad
        if node.is_leaf:
            leaves[node] = g if g is not None else np.zeros_like(node.value)
            continue
        if g is None:
            continue
        for parent, pg in zip(node.parents, node._vjp(g)):
            if pg is None:
                continue
            parent.grad = pg if parent.grad is None else parent.grad + pg
    return leaves


# ---------------------------------------------------------------------------
# tensor operators


def conv3x3_per_slice(x: Node, kernels: Node) -> Node:
    """Convolve frontal slice ``k`` of ``x`` with its own 3x3 kernel ``kernels[k]``.

    Zero padding 1, stride 1, no bias. As in deep-learning frameworks the
    kernel is applied as a cross-correlation:
    ``y[l, j, k] = sum_ab kernels[k, a, b] * xpad[l + a, j + b, k]``.
    """
    xv, w = x.value, kernels.value
    if xv.ndim != 3 or w.shape != (xv.shape[2], 3, 3):
        raise ValueError(f"need {xv.shape[2] if xv.ndim == 3 else '?'} kernels of 3x3, got {w.shape}")
    m1, m2, _ = xv.shape
    xp = np.pad(xv, ((1, 1), (1, 1), (0, 0)))
    y = np.zeros_like(xv)
    for a in range(3):
        for b in range(3):
            y += xp[a : a + m1, b : b + m2, :] * w[:, a, b]

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w)
        for a in range(3):
            for b in range(3):
                gxp[a : a + m1, b : b + m2, :] += g * w[:, a, b]
                gw[:, a, b] = np.einsum("ljk,ljk->k", g, xp[a : a + m1, b : b + m2, :])
        return gxp[1:-1, 1:-1, :], gw

    return Node(y, (x, kernels), "conv3x3", vjp)


def fc_mode3(x: Node, W2: Node) -> Node:
    """Mode-3 product ``x ×₃ W2`` with ``W2`` of shape ``(m_out, m_in)``."""
    xv, W = x.value, W2.value
    y = tc.mode3_product(xv, W)

    def vjp(g):
        gx = g @ W
        gW = g.reshape(-1, g.shape[2]).T @ xv.reshape(-1, xv.shape[2])
        return gx, gW

    return Node(y, (x, W2), "fc_mode3", vjp)


def leaky_relu(x: Node, slope: float = DEFAULT_SLOPE) -> Node:
    """Elementwise ``max(x, slope * x)``; the derivative at exactly 0 is ``slope``."""
    if not 0 < slope < 1:
        raise ValueError("slope must lie in (0, 1)")
    pos = x.value > 0
    y = np.where(pos, x.value, slope * x.value)

    def vjp(g):
        return (np.where(pos, g, slope * g),)

    return Node(y, (x,), "leaky_relu", vjp)


def permute_node(x: Node, i: int) -> Node:
    return Node(tc.permute(x.value, i), (x,), f"permute{i}", lambda g: (tc.ipermute(g, i),))


def ipermute_node(x: Node, i: int) -> Node:
    return Node(tc.ipermute(x.value, i), (x,), f"ipermute{i}", lambda g: (tc.permute(g, i),))


def concat3_node(a: Node, b: Node, c: Node) -> Node:
    return Node(tc.concat3(a.value, b.value, c.value), (a, b, c), "concat3", tc.split3)


def split3_node(x: Node) -> tuple[Node, Node, Node]:
    """Three nodes holding the consecutive mode-3 thirds of ``x``."""
    parts = tc.split3(x.value)
    n3 = parts[0].shape[2]
    out = []
    for p, part in enumerate(parts):
        def vjp(g, p=p):
            full = np.zeros_like(x.value)
            full[:, :, p * n3 : (p + 1) * n3] = g
            return (full,)

        out.append(Node(part, (x,), f"split3[{p}]", vjp))
    return tuple(out)


# ---------------------------------------------------------------------------
# scalar-valued operators


def masked_sq_residual(x: Node, o, m) -> Node:
    """``|| P_Omega(x - o) ||_F^2`` with ``o`` and the mask held constant."""
    o = np.asarray(o, dtype=np.float64)
    m = tc.as_mask(m, x.shape)
    if o.shape != x.shape:
        raise ValueError(f"observation shape {o.shape} does not match {x.shape}")
    r = np.where(m, x.value - o, 0.0)
    value = np.vdot(r, r)
    return Node(value, (x,), "masked_sq_residual", lambda g: (2.0 * g * r,))


def nuclear_penalty(x: Node, i: int = 3, rank_tol: float = linalg.DEFAULT_RANK_TOL) -> Node:
    """Sum of nuclear norms of the mode-``i`` frontal slices of ``x``.

    The backward pass places the subgradient ``U_r V_r^T`` of each slice at
    that slice's position.
    """
    xp = tc.permute(x.value, i)
    stack = np.moveaxis(xp, 2, 0)
    norms, G = linalg.nuclear_value_and_subgrad(stack, rank_tol)
    grad = tc.ipermute(np.moveaxis(G, 0, 2), i)
    return Node(norms.sum(), (x,), f"nuclear{i}", lambda g: (g * grad,))


def sum_sq(x: Node) -> Node:
    v = x.value
    return Node(np.vdot(v, v), (x,), "sum_sq", lambda g: (2.0 * g * v,))


def scale(x: Node, c: float) -> Node:
    c = float(c)
    return Node(c * x.value, (x,), "scale", lambda g: (c * g,))


def add(*nodes: Node) -> Node:
    """Sum of equally-shaped nodes."""
    if not nodes:
        raise ValueError("add needs at least one node")
    value = nodes[0].value.copy()
    for n in nodes[1:]:
        value = value + n.value
    return Node(value, nodes, "add", lambda g: tuple(g for _ in nodes))


def weighted_sum(terms: Sequence[tuple[float, Node]]) -> Node:
    """``sum_k w_k * node_k``; zero-weight terms are dropped from the graph."""
    kept = [scale(n, w) for w, n in terms if w != 0]
    if not kept:
        return Node(np.zeros(()))
    return kept[0] if len(kept) == 1 else add(*kept)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """One bias-corrected Adam update. Parameters are updated in place and returned."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch in adam_step: {p.shape} vs {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params
