"""The three-directional deep low-rank tensor representation model.

Each direction ``i`` owns a learnable latent tensor and a coupled transform
block (a per-slice 3x3 convolution followed by a mode-3 fully connected map,
each followed by LeakyReLU). The latent of direction ``i`` is stored already
permuted, i.e. with mode ``i`` moved to the third axis, so the low-rank
penalty is always the sum of nuclear norms of the stored array's third-axis
slices and the directional transform is ``ipermute(ctb(latent), i)``. An
aggregation block maps the mode-3 concatenation of the three directional
reconstructions (``3 * n3`` bands) back to ``n3`` bands.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import autodiff as ad, tensor_core as tc
from .autodiff import Node
from .linalg import DEFAULT_RANK_TOL
from .tnn import AdmmConfig, tnn_complete

log = logging.getLogger(__name__)

ALL_DIRECTIONS = (1, 2, 3)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class CtbParams:
    """Weights of one coupled transform block.

    ``kernels`` has shape ``(m_in, 3, 3)``, one kernel per input slice;
    ``W2`` has shape ``(m_out, m_in)``.
    """

    kernels: np.ndarray
    W2: np.ndarray
    slope: float = ad.DEFAULT_SLOPE

    def __post_init__(self):
        self.kernels = np.ascontiguousarray(self.kernels, dtype=np.float64)
        self.W2 = np.ascontiguousarray(self.W2, dtype=np.float64)
        if self.kernels.ndim != 3 or self.kernels.shape[1:] != (3, 3):
            raise ValueError(f"kernels must have shape (m, 3, 3), got {self.kernels.shape}")
        if self.W2.ndim != 2 or self.W2.shape[1] != self.kernels.shape[0]:
            raise ValueError(f"W2 of shape {self.W2.shape} does not match {self.kernels.shape[0]} kernels")

    @property
    def n_in(self) -> int:
        return self.kernels.shape[0]

    @property
    def n_out(self) -> int:
        return self.W2.shape[0]

    @classmethod
    def identity(cls, n: int, slope: float = ad.DEFAULT_SLOPE) -> "CtbParams":
        """Delta kernels and identity FC map (acts as LeakyReLU twice)."""
        kernels = np.zeros((n, 3, 3))
        kernels[:, 1, 1] = 1.0
        return cls(kernels, np.eye(n), slope)


@dataclass
class ModelParams:
    dims: tuple[int, int, int]
    directions: tuple[int, ...]
    latents: dict[int, np.ndarray]
    theta: dict[int, CtbParams]
    theta_g: CtbParams | None = None

    def arrays(self) -> list[np.ndarray]:
        """All learnable arrays in a fixed order (latents, blocks, aggregation)."""
        out = [self.latents[i] for i in self.directions]
        for i in self.directions:
            out += [self.theta[i].kernels, self.theta[i].W2]
        if self.theta_g is not None:
            out += [self.theta_g.kernels, self.theta_g.W2]
        return out

    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.dims,
            self.directions,
            {i: v.copy() for i, v in self.latents.items()},
            {i: CtbParams(p.kernels.copy(), p.W2.copy(), p.slope) for i, p in self.theta.items()},
            None if self.theta_g is None else CtbParams(self.theta_g.kernels.copy(), self.theta_g.W2.copy(), self.theta_g.slope),
        )


@dataclass
class HyperParams:
    beta: float = 1e-5
    theta: float = 0.1
    gamma: float = 1.0
    k: int = 1
    rank_tol: float = DEFAULT_RANK_TOL
    slope: float = ad.DEFAULT_SLOPE
    lr: float = 3e-3
    latent_lr: float | None = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    iterations: int = 2000
    early_stop: bool = True
    plateau_window: int = 200
    plateau_tol: float = 1e-7
    seed: int = 0
    directions: tuple[int, ...] = ALL_DIRECTIONS
    expanded_init_std: float = 1e-2

    def __post_init__(self):
        for name in ("beta", "theta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.lr <= 0 or (self.latent_lr is not None and self.latent_lr < 0):
            raise ValueError("learning rates must be positive (latent_lr may be 0 to freeze the latents)")
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise ValueError("iterations must be a non-negative integer")
        self.directions = tuple(sorted(int(i) for i in self.directions))
        if self.directions not in ((1,), (2,), (3,), ALL_DIRECTIONS):
            raise ValueError(f"directions must be a single mode or all three, got {self.directions}")

    @property
    def effective_latent_lr(self) -> float:
        return self.lr if self.latent_lr is None else self.latent_lr

    @property
    def direction_weights(self) -> dict[int, float]:
        """Normalised weights ``(1, 1, theta) / (2 + theta)`` of the three low-rank terms."""
        if math.isinf(self.theta):
            return {1: 0.0, 2: 0.0, 3: 1.0}
        d = 2.0 + self.theta
        return {1: 1.0 / d, 2: 1.0 / d, 3: self.theta / d}

    def to_dict(self) -> dict:
        out = asdict(self)
        out["directions"] = list(self.directions)
        return out


# ---------------------------------------------------------------------------
# forward model


def ctb_forward(x: Node, p: CtbParams, kernels: Node | None = None, W2: Node | None = None) -> Node:
    """Coupled transform block: ``σ(σ(conv(x)) ×₃ W2)`` with σ = LeakyReLU.

    ``kernels``/``W2`` may be passed as existing graph leaves so gradients
    reach them; otherwise fresh leaves are wrapped around ``p``.
    """
    kernels = kernels if kernels is not None else Node(p.kernels)
    W2 = W2 if W2 is not None else Node(p.W2)
    h = ad.leaky_relu(ad.conv3x3_per_slice(x, kernels), p.slope)
    return ad.leaky_relu(ad.fc_mode3(h, W2), p.slope)


def directional_forward(latent: Node, i: int, p: CtbParams, leaves=None) -> Node:
    """Directional transform for a latent stored with mode ``i`` last.

    Equivalent to ``ipermute(ctb(permute(X_i, i)), i)`` on the unpermuted latent.
    """
    i = tc.check_mode(i)
    if latent.shape[2] != p.n_in:
        raise ValueError(f"latent with {latent.shape[2]} slices does not fit a block of {p.n_in} kernels")
    y = ctb_forward(latent, p, *(leaves or (None, None)))
    return y if i == 3 else ad.ipermute_node(y, i)


def aggregate(x1: Node, x2: Node, x3: Node, p_g: CtbParams, leaves=None) -> Node:
    """Fuse three directional reconstructions with a block over ``3 * n3`` bands."""
    if not (x1.shape == x2.shape == x3.shape):
        raise ValueError("directional reconstructions differ in shape")
    n3 = x1.shape[2]
    if p_g.n_in != 3 * n3 or p_g.n_out != n3:
        raise ValueError(f"aggregation block must map {3 * n3} -> {n3} bands, got {p_g.n_in} -> {p_g.n_out}")
    return ctb_forward(ad.concat3_node(x1, x2, x3), p_g, *(leaves or (None, None)))


class Graph(NamedTuple):
    loss: Node
    output: Node
    directional: dict[int, Node]
    terms: dict[str, Node]
    leaves: list[Node]


def build_graph(params: ModelParams, o, m, h: HyperParams) -> Graph:
    """Assemble the training objective

    ``beta * sum_i w_i * nuc_i + gamma * sum_i ||P(X_i - O)||^2 + ||P(X - O)||^2``

    for the directions present in ``params``. With a single direction the
    output is that direction's reconstruction, its low-rank weight is 1 and
    there is no separate directional fidelity term.
    """
    leaves = []
    latent_nodes, block_leaves = {}, {}
    for i in params.directions:
        latent_nodes[i] = Node(params.latents[i])
        leaves.append(latent_nodes[i])
    for i in params.directions:
        block_leaves[i] = (Node(params.theta[i].kernels), Node(params.theta[i].W2))
        leaves += block_leaves[i]

    directional = {
        i: directional_forward(latent_nodes[i], i, params.theta[i], block_leaves[i])
        for i in params.directions
    }
    terms = {}
    for i in params.directions:
        terms[f"nuclear{i}"] = ad.nuclear_penalty(latent_nodes[i], 3, h.rank_tol)

    if len(params.directions) == 3:
        g_leaves = (Node(params.theta_g.kernels), Node(params.theta_g.W2))
        leaves += g_leaves
        output = aggregate(directional[1], directional[2], directional[3], params.theta_g, g_leaves)
        weights = h.direction_weights
        for i in params.directions:
            terms[f"fidelity{i}"] = ad.masked_sq_residual(directional[i], o, m)
        weighted = [(h.beta * weights[i], terms[f"nuclear{i}"]) for i in params.directions]
        weighted += [(h.gamma, terms[f"fidelity{i}"]) for i in params.directions]
    else:
        (i,) = params.directions
        output = directional[i]
        weighted = [(h.beta, terms[f"nuclear{i}"])]
    terms["fidelity"] = ad.masked_sq_residual(output, o, m)
    weighted.append((1.0, terms["fidelity"]))
    loss = ad.weighted_sum(weighted)
    return Graph(loss, output, directional, terms, leaves)


def loss(params: ModelParams, o, m, h: HyperParams) -> Node:
    return build_graph(params, o, m, h).loss


def predict(params: ModelParams) -> np.ndarray:
    """Current recovered tensor (unclamped)."""
    directional = [
        directional_forward(Node(params.latents[i]), i, params.theta[i]) for i in params.directions
    ]
    if len(directional) == 1:
        return directional[0].value
    return aggregate(*directional, params.theta_g).value


# ---------------------------------------------------------------------------
# initialisation and training


def latent_shape(dims, i: int, k: int = 1) -> tuple[int, int, int]:
    a, b, c = tc.permuted_shape(dims, i)
    return (a, b, k * c)


def _gaussian_block(rng: np.random.Generator, n_in: int, n_out: int, slope: float) -> CtbParams:
    kernels = rng.normal(0.0, 1.0 / 3.0, size=(n_in, 3, 3))  # fan-in 9
    W2 = rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_out, n_in))
    return CtbParams(kernels, W2, slope)


def init_params(dims, h: HyperParams, tnn_init) -> ModelParams:
    """Latents from a completed tensor, block weights from a seeded Gaussian.

    Kernels are drawn with standard deviation 1/3 (fan-in 9) and FC matrices
    with ``1/sqrt(m_in)``. For ``k > 1`` the completed tensor fills the first
    ``n_i`` slices of latent ``i`` and the remaining slices are Gaussian with
    standard deviation ``h.expanded_init_std``.
    """
    dims = tuple(int(d) for d in dims)
    tnn_init = tc.as_tensor(tnn_init, "initial tensor")
    if tnn_init.shape != dims:
        raise ValueError(f"initial tensor has shape {tnn_init.shape}, expected {dims}")
    rng = np.random.default_rng(h.seed)
    latents, theta = {}, {}
    for i in h.directions:
        base = tc.permute(tnn_init, i)
        if h.k == 1:
            latents[i] = base
        else:
            lat = rng.normal(0.0, h.expanded_init_std, size=latent_shape(dims, i, h.k))
            lat[:, :, : base.shape[2]] = base
            latents[i] = lat
    for i in h.directions:
        n = dims[i - 1]
        theta[i] = _gaussian_block(rng, h.k * n, n, h.slope)
    theta_g = None
    if len(h.directions) == 3:
        theta_g = _gaussian_block(rng, 3 * dims[2], dims[2], h.slope)
    return ModelParams(dims, h.directions, latents, theta, theta_g)


def param_count(dims, k: int = 1, directions: Sequence[int] = ALL_DIRECTIONS) -> int:
    """Closed-form number of learnable scalars.

    Each direction contributes a latent of ``k * n1 * n2 * n3`` entries,
    ``k * n_i`` 3x3 kernels and an ``n_i x k * n_i`` FC matrix; the full model
    adds an aggregation block with ``3 * n3`` kernels and an ``n3 x 3 * n3``
    matrix.
    """
    n1, n2, n3 = (int(d) for d in dims)
    directions = tuple(sorted(directions))
    total = 0
    for i in directions:
        ni = (n1, n2, n3)[i - 1]
        total += k * n1 * n2 * n3 + 9 * k * ni + ni * k * ni
    if len(directions) == 3:
        total += 9 * 3 * n3 + n3 * 3 * n3
    return total


class TrainResult(NamedTuple):
    x: np.ndarray
    history: list[dict]
    params: ModelParams
    init_x: np.ndarray
    tnn_x: np.ndarray


def _record(it: int, graph: Graph, h: HyperParams) -> dict:
    rec = {"iteration": it, "loss": float(graph.loss.value)}
    rec.update({name: float(node.value) for name, node in graph.terms.items()})
    return rec


def train(o, m, h: HyperParams | None = None, admm: AdmmConfig | None = None,
          callback: Callable[[dict], None] | None = None, tnn_x=None) -> TrainResult:
    """Fit the model to observation ``o`` on mask ``m`` with Adam.

    The latents are initialised by TNN completion (computed here unless
    ``tnn_x`` is given) and stepped with their own learning rate
    ``h.latent_lr``; the block weights use ``h.lr``. With one shared rate the
    free latents absorb the fit on observed entries while the blocks stay
    near their random start, which ruins the missing entries. ``history`` holds one record per evaluated loss:
    iteration, total loss and every individual term. The returned tensor is
    unclamped.
    """
    h = h or HyperParams()
    o = tc.as_tensor(o, "observation")
    m = tc.as_mask(m, o.shape)
    if not m.any():
        raise ValueError("mask has no observed entries")
    if tnn_x is None:
        tnn_x = tnn_complete(o, m, admm).x
    params = init_params(o.shape, h, tnn_x)
    arrays = params.arrays()
    n_lat = len(params.directions)
    lat_state = ad.AdamState(h.effective_latent_lr, h.adam_beta1, h.adam_beta2, h.adam_eps)
    net_state = ad.AdamState(h.lr, h.adam_beta1, h.adam_beta2, h.adam_eps)
    history: list[dict] = []
    init_x = None

    for it in range(h.iterations + 1):
        graph = build_graph(params, o, m, h)
        rec = _record(it, graph, h)
        if not np.isfinite(rec["loss"]):
            raise TrainingDiverged(f"non-finite loss at iteration {it}: {rec}")
        history.append(rec)
        if callback is not None:
            callback(rec)
        if init_x is None:
            init_x = graph.output.value.copy()
        if it == h.iterations:
            break
        if h.early_stop and it >= h.plateau_window:
            prev = history[it - h.plateau_window]["loss"]
            if abs(prev - rec["loss"]) <= h.plateau_tol * max(abs(prev), 1e-300):
                log.info("loss plateau at iteration %d", it)
                break
        grads = ad.backward(graph.loss)
        g = [grads[leaf] for leaf in graph.leaves]
        if lat_state.lr > 0:
            ad.adam_step(arrays[:n_lat], g[:n_lat], lat_state)
        ad.adam_step(arrays[n_lat:], g[n_lat:], net_state)

    return TrainResult(predict(params), history, params, init_x, tnn_x)
