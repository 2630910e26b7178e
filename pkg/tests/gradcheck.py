"""Central finite-difference checks shared by the gradient tests."""

import numpy as np

from deeprep.autodiff import Node, backward

STEP = 1e-5


def numeric_grad(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        up = f()
        x[idx] = orig - step
        down = f()
        x[idx] = orig
        g[idx] = (up - down) / (2 * step)
    return g


def rel_error(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def check_vjp(build, inputs: list[np.ndarray], seed: int = 0):
    """Compare analytic and numeric gradients of ``<w, build(*nodes)>`` for random ``w``.

    Returns the largest relative error over all inputs.
    """
    rng = np.random.default_rng(seed)
    out_shape = build(*[Node(x) for x in inputs]).value.shape
    w = rng.normal(size=out_shape)

    def scalar():
        return float(np.sum(w * build(*[Node(x) for x in inputs]).value))

    nodes = [Node(x) for x in inputs]
    out = build(*nodes)
    loss = Node(np.sum(w * out.value), (out,), "probe", lambda g: (g * w,))
    grads = backward(loss)
    return max(rel_error(grads[n], numeric_grad(scalar, x)) for n, x in zip(nodes, inputs))
