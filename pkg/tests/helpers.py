"""Oracles and builders shared by the test modules."""

import numpy as np

from ppgm import numerics as nx
from ppgm.graphs import Graph, degree_features


def numeric_grad(fn, params: dict, h: float = 1e-6, sample: int | None = None, rng=None, order: int = 2) -> dict:
    """Central differences of a scalar ``fn()`` w.r.t. every tensor in ``params``.

    ``order=4`` uses the five-point stencil, whose O(h^4) truncation allows a
    larger ``h`` and so a lower round-off floor. With ``sample`` only that
    many random coordinates per tensor are probed; the others are NaN.
    """
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        coords = list(np.ndindex(p.data.shape))
        if sample is not None and sample < len(coords):
            g[:] = np.nan
            coords = [coords[i] for i in rng.choice(len(coords), size=sample, replace=False)]
        for idx in coords:
            orig = p.data[idx]

            def at(step):
                p.data[idx] = orig + step
                return float(fn().data)

            if order == 4:
                g[idx] = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h)
            else:
                g[idx] = (at(h) - at(-h)) / (2 * h)
            p.data[idx] = orig
        out[name] = g
    return out


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    keep = ~(np.isnan(a) | np.isnan(b))
    a, b = a[keep], b[keep]
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b))))


def make_graph(n, edges, gid="g", family="er", f=8):
    return Graph(gid, n, degree_features(n, edges, f), tuple(edges), {"family": family})


def random_graph(rng, n, p=0.4, gid="g", family="er", f=8):
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    return make_graph(n, edges, gid, family, f)


def generic_params(params: dict, seed: int) -> dict:
    """Overwrite every tensor (biases included) with N(0, 1/fan_in) draws.

    Gradient checks run here rather than at the init point, where zero
    biases put ReLU pre-activations within a finite-difference step of the
    kink and several gradient groups are near the round-off floor.
    """
    rng = np.random.default_rng(seed)
    for p in params.values():
        fan = p.shape[0] if p.data.ndim == 2 else 4
        p.data = rng.standard_normal(p.shape) / np.sqrt(fan)
    return params


def generic_graph(rng, n, gid="g", p=0.5, f=8):
    """Random graph with Gaussian node features, so node rows are distinct."""
    g = random_graph(rng, n, p=p, gid=gid, f=f)
    return Graph(gid, n, rng.standard_normal((n, f)), g.edges, g.props)


def ppgm_gradient_errors(task, hyper, seed=0, sample=None, n=5) -> dict:
    """Per-group relative error of the PPGM batch-MSE gradient against a five-point stencil (h=1e-4)."""
    from ppgm import model as M
    params = generic_params(M.init_params("ppgm", hyper, 8, task, seed), seed + 100)
    rng = np.random.default_rng(seed)
    pairs = [(generic_graph(rng, n, "a"), generic_graph(rng, n, "b")),
             (generic_graph(rng, n, "c"), generic_graph(rng, n, "d"))]
    labels = [1.0, 0.0] if task == "cls" else [0.7, 0.2]

    def loss():
        return M.mse_loss(M.ppgm_batch_scores(pairs, params, hyper), labels, task)

    analytic = nx.backward(loss())
    numeric = numeric_grad(loss, params, h=1e-4, sample=sample, rng=np.random.default_rng(seed + 1), order=4)
    return {k: rel_err(analytic[k], numeric[k]) for k in params}
