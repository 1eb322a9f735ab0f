"""PPGM and the baseline similarity models, on top of :mod:`ppgm.numerics`.

Parameters are a flat ``dict[str, Tensor]``; name prefixes group them
(``gcn.*``, ``ctx.codes``, ``ctx_attn.*``, ``msg_attn.*``, ``lstm.*``,
``head.*``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, asdict, replace
from functools import lru_cache
from weakref import WeakKeyDictionary

import numpy as np

from . import numerics as nx
from .graphs import Graph, normalized_adjacency
from .numerics import Tensor

log = logging.getLogger(__name__)

FAMILIES = ("ppgm", "sgnn", "sgnn_ldp", "nodematch")
GATES = ("i", "f", "g", "o")


def canonical_family(name: str) -> str:
    fam = name.lower().replace("-", "_")
    if fam not in FAMILIES:
        raise ValueError(f"unknown model family {name!r}; expected one of {', '.join(FAMILIES)}")
    return fam


@dataclass(frozen=True)
class HyperParams:
    d: int = 100
    layers: int = 3
    m: int = 8
    heads: int = 4
    lr: float = 5e-4
    epochs: int = 100
    batch: int = 10
    no_obfuscation: bool = False
    no_context_codes: bool = False
    no_ng_matching: bool = False
    ldp_b: float = 0.0

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.m < 1 or self.layers < 1:
            raise ValueError("m and layers must be >= 1")
        if self.ldp_b < 0:
            raise ValueError(f"ldp scale must be >= 0, got {self.ldp_b}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> HyperParams:
        return cls(**d)

    def with_(self, **kw) -> HyperParams:
        return replace(self, **kw)


# --- parameters ----------------------------------------------------------------

def param_shapes(family: str, hyper: HyperParams, f: int, task: str = "cls") -> dict[str, tuple[int, ...]]:
    family = canonical_family(family)
    d = hyper.d
    shapes: dict[str, tuple[int, ...]] = {}
    for layer in range(hyper.layers):
        shapes[f"gcn.{layer}"] = (f if layer == 0 else d, d)
    if family == "ppgm":
        shapes["ctx.codes"] = (hyper.m, d)
        for block in ("ctx_attn", "msg_attn"):
            for p in ("q", "k", "v", "o"):
                shapes[f"{block}.{p}"] = (d, d)
        for gate in GATES:
            shapes[f"lstm.w_{gate}"] = (3 * d, d)
            shapes[f"lstm.b_{gate}"] = (d,)
        if task == "reg":
            h = d // 2
            shapes.update({"head.w1": (2 * d, d), "head.b1": (d,), "head.w2": (d, h), "head.b2": (h,), "head.w3": (h, 1), "head.b3": (1,)})
    elif task == "reg":
        raise ValueError(f"{family} has no regression head")
    return shapes


def init_params(family: str, hyper: HyperParams, f: int, task: str = "cls", seed: int = 0) -> dict[str, Tensor]:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, N(0, 0.1^2) context codes."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(family, hyper, f, task).items():
        if name == "ctx.codes":
            data = 0.1 * rng.standard_normal(shape)
        elif len(shape) == 1:
            data = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def param_count(params) -> int:
    return int(sum(np.asarray(getattr(p, "data", p)).size for p in params.values()))


# --- layers ----------------------------------------------------------------------

_adj_cache: "WeakKeyDictionary[Graph, Tensor]" = WeakKeyDictionary()


def _adjacency(g: Graph) -> Tensor:
    a = _adj_cache.get(g)
    if a is None:
        a = _adj_cache[g] = Tensor(normalized_adjacency(g))
    return a


@lru_cache(maxsize=None)
def _head_masks(d: int, heads: int) -> tuple[np.ndarray, ...]:
    dh = d // heads
    return tuple(np.repeat(np.eye(heads)[h], dh) for h in range(heads))


def mha_pool(query, keys, values, params, block: str, heads: int, return_weights: bool = False):
    """Multi-head attention pooling of ``values`` for one query or a row-stack of queries.

    One attention layer: Q/K/V projections, per-head scaled dot-product
    softmax over the ``n`` keys, heads concatenated and projected by W_O.
    """
    query, keys, values = nx.as_tensor(query), nx.as_tensor(keys), nx.as_tensor(values)
    if keys.data.ndim != 2 or keys.shape[0] == 0:
        raise ValueError(f"mha_pool: need at least one key, got shape {keys.shape}")
    single = query.data.ndim == 1
    d = params[f"{block}.k"].shape[1]
    inv = 1.0 / math.sqrt(d // heads)
    q = nx.scale(nx.matmul(query, params[f"{block}.q"]), inv)
    k = nx.matmul(keys, params[f"{block}.k"])
    v = nx.matmul(values, params[f"{block}.v"])
    # head h sees only its own column block; masking keeps every product 2-D
    out, weights = None, []
    for mask in _head_masks(d, heads):
        qh = nx.mul(q, mask)
        scores = nx.matmul(k, qh) if single else nx.matmul(qh, nx.transpose(k))
        att = nx.softmax_lastdim(scores)
        weights.append(att.data)
        part = nx.matmul(att, nx.mul(v, mask))
        out = part if out is None else nx.add(out, part)
    out = nx.matmul(out, params[f"{block}.o"])
    if return_weights:
        return out, weights
    return out


def gcn_encode(g: Graph, params) -> Tensor:
    """Stacked bias-free GCN layers with ReLU; returns the last layer's node matrix."""
    w0 = params["gcn.0"]
    if g.f != w0.shape[0]:
        raise ValueError(f"gcn_encode: graph {g.id} has feature dim {g.f}, encoder expects {w0.shape[0]}")
    adj = _adjacency(g)
    h = Tensor(g.features)
    layer = 0
    while f"gcn.{layer}" in params:
        h = nx.relu(nx.matmul(adj, nx.matmul(h, params[f"gcn.{layer}"])))
        layer += 1
    return h


def _repeat_mean(H: Tensor, m: int) -> Tensor:
    mean = nx.mean_rows(H)
    return nx.stack_rows([mean] * m)


def extract_messages(H: Tensor, params, hyper: HyperParams) -> Tensor:
    """Context-attentive messages, one row per context code (``m x d``)."""
    if hyper.no_context_codes:
        return _repeat_mean(H, hyper.m)
    return mha_pool(params["ctx.codes"], H, H, params, "ctx_attn", hyper.heads)


def message_pool(H: Tensor, incoming: Tensor, params, hyper: HyperParams) -> Tensor:
    """Own-graph pooling guided by each incoming message (``m x d``)."""
    incoming = nx.as_tensor(incoming)
    if incoming.data.ndim != 2 or incoming.shape[0] != hyper.m:
        raise ValueError(f"message_pool: expected {hyper.m} incoming messages, got shape {incoming.shape}")
    if hyper.no_ng_matching:
        return _repeat_mean(H, hyper.m)
    return mha_pool(incoming, H, H, params, "msg_attn", hyper.heads)


def lstm_last_hidden_batch(seqs, params) -> Tensor:
    """Final hidden states of a single-layer LSTM, one row per input sequence.

    All sequences must have the same length; the initial hidden and cell
    states are zero.
    """
    seqs = [nx.as_tensor(s) for s in seqs]
    steps, width = seqs[0].shape
    if any(s.shape != (steps, width) for s in seqs):
        raise ValueError("lstm: all sequences must share one shape")
    d = params["lstm.b_i"].shape[0]
    n = len(seqs)
    # gate weights act on [x_t ; h_{t-1}]; input rows are projected for all steps at once
    w = nx.concat([params[f"lstm.w_{k}"] for k in GATES])
    b = nx.concat([params[f"lstm.b_{k}"] for k in GATES])
    x = seqs[0] if n == 1 else nx.vstack(seqs)
    xw = nx.add(nx.matmul(x, nx.rows(w, 0, width)), b)
    wh = nx.rows(w, width, width + d)
    h = c = None
    for t in range(steps):
        a = nx.take_rows(xw, np.arange(n) * steps + t)
        if h is not None:
            a = nx.add(a, nx.matmul(h, wh))
        i = nx.sigmoid(nx.columns(a, 0, d))
        f = nx.sigmoid(nx.columns(a, d, 2 * d))
        g = nx.tanh(nx.columns(a, 2 * d, 3 * d))
        o = nx.sigmoid(nx.columns(a, 3 * d, 4 * d))
        c = nx.mul(i, g) if c is None else nx.add(nx.mul(f, c), nx.mul(i, g))
        h = nx.mul(o, nx.tanh(c))
    return h


def lstm_last_hidden(seq, params) -> Tensor:
    return nx.row(lstm_last_hidden_batch([seq], params), 0)


def obfuscation_sequence(p_list, g_list, hyper: HyperParams, own_messages=None) -> Tensor:
    """Rows ``p_i || g_i``; with ``no_obfuscation`` the device's own messages replace ``g``."""
    p_list, g_list = nx.as_tensor(p_list), nx.as_tensor(g_list)
    if hyper.no_obfuscation:
        if own_messages is None:
            raise ValueError("obfuscate: no_obfuscation needs the device's own messages")
        g_list = nx.as_tensor(own_messages)
    if p_list.shape[0] != g_list.shape[0]:
        raise ValueError(f"obfuscate: {p_list.shape[0]} pooled vectors vs {g_list.shape[0]} messages")
    return nx.concat([p_list, g_list])


def obfuscate(p_list, g_list, params, hyper: HyperParams, own_messages=None) -> Tensor:
    """Fuse own pooled vectors with the partner's messages into one vector.

    Position ``i`` feeds ``p_i || g_i`` to an LSTM; the output is its final
    hidden state.
    """
    return lstm_last_hidden(obfuscation_sequence(p_list, g_list, hyper, own_messages), params)


def predict_classification(o1, o2) -> Tensor:
    o1, o2 = nx.as_tensor(o1), nx.as_tensor(o2)
    if min(np.linalg.norm(o1.data), np.linalg.norm(o2.data)) <= nx.NORM_EPS:
        log.info("predict_classification: zero representation, score defined as 0")
    return nx.cosine(o1, o2)


def predict_regression(o1, o2, params) -> Tensor:
    if "head.w1" not in params:
        raise ValueError("predict_regression: checkpoint has no regression head")
    x = nx.concat([o1, o2])
    x = nx.relu(nx.add(nx.matmul(x, params["head.w1"]), params["head.b1"]))
    x = nx.relu(nx.add(nx.matmul(x, params["head.w2"]), params["head.b2"]))
    x = nx.add(nx.matmul(x, params["head.w3"]), params["head.b3"])
    return nx.row(nx.sigmoid(x), 0)


def task_of(params) -> str:
    return "reg" if "head.w1" in params else "cls"


def predict(o1, o2, params) -> Tensor:
    if task_of(params) == "reg":
        return predict_regression(o1, o2, params)
    return predict_classification(o1, o2)


def mse_loss(predictions, labels, task: str = "reg") -> Tensor:
    """Mean squared error; classification labels {0,1} are compared as {-1,+1}."""
    preds = list(predictions) if not isinstance(predictions, Tensor) else [predictions]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    if not preds or len(preds) != len(labels):
        raise ValueError(f"mse_loss: need equal non-empty batches, got {len(preds)} predictions and {len(labels)} labels")
    if task == "cls":
        labels = 2.0 * labels - 1.0
    total = None
    for p, y in zip(preds, labels):
        r = nx.sub(p, y)
        sq = nx.mul(r, r)
        total = sq if total is None else nx.add(total, sq)
    return nx.scale(total, 1.0 / len(preds))


# --- full forward passes ------------------------------------------------------------

def ppgm_device_messages(g: Graph, params, hyper: HyperParams):
    H = gcn_encode(g, params)
    return H, extract_messages(H, params, hyper)


def ppgm_device_obfuscated(H, own_msgs, incoming, params, hyper: HyperParams):
    p = message_pool(H, incoming, params, hyper)
    return p, obfuscate(p, incoming, params, hyper, own_messages=own_msgs)


def ppgm_forward(g1: Graph, g2: Graph, params, hyper: HyperParams) -> dict:
    """Monolithic PPGM pass; returns every intermediate plus ``score``."""
    H1, m1 = ppgm_device_messages(g1, params, hyper)
    H2, m2 = ppgm_device_messages(g2, params, hyper)
    p1, o1 = ppgm_device_obfuscated(H1, m1, m2, params, hyper)
    p2, o2 = ppgm_device_obfuscated(H2, m2, m1, params, hyper)
    return {"H1": H1, "H2": H2, "g1": m1, "g2": m2, "p1": p1, "p2": p2, "o1": o1, "o2": o2, "score": predict(o1, o2, params)}


def ppgm_batch_scores(graph_pairs, params, hyper: HyperParams) -> list[Tensor]:
    """Training-path scores for many pairs with one batched LSTM recurrence.

    Numerically equal to :func:`ppgm_forward` up to BLAS summation order.
    """
    seqs = []
    for g1, g2 in graph_pairs:
        H1, m1 = ppgm_device_messages(g1, params, hyper)
        H2, m2 = ppgm_device_messages(g2, params, hyper)
        p1 = message_pool(H1, m2, params, hyper)
        p2 = message_pool(H2, m1, params, hyper)
        seqs.append(obfuscation_sequence(p1, m2, hyper, m1))
        seqs.append(obfuscation_sequence(p2, m1, hyper, m2))
    O = lstm_last_hidden_batch(seqs, params)
    return [predict(nx.row(O, 2 * k), nx.row(O, 2 * k + 1), params) for k in range(len(graph_pairs))]


def ldp_noise(rep, b: float, rng: np.random.Generator) -> np.ndarray:
    if b < 0:
        raise ValueError(f"ldp_noise: scale must be >= 0, got {b}")
    rep = np.asarray(getattr(rep, "data", rep), dtype=np.float64)
    if b == 0:
        return rep.copy()
    return rep + rng.laplace(0.0, b, size=rep.shape)


def sgnn_graph_rep(g: Graph, params) -> Tensor:
    return nx.mean_rows(gcn_encode(g, params))


def sgnn_forward(g1: Graph, g2: Graph, params, ldp_b: float = 0.0, rng: np.random.Generator | None = None) -> dict:
    """Siamese GCN + mean pooling; with ``ldp_b > 0`` Laplace noise is added before comparison."""
    r1, r2 = sgnn_graph_rep(g1, params), sgnn_graph_rep(g2, params)
    if ldp_b > 0:
        if rng is None:
            raise ValueError("sgnn_forward: LDP noise needs a seeded generator")
        r1 = nx.add(r1, ldp_noise(np.zeros(r1.shape), ldp_b, rng))
        r2 = nx.add(r2, ldp_noise(np.zeros(r2.shape), ldp_b, rng))
    return {"r1": r1, "r2": r2, "score": nx.cosine(r1, r2)}


def nodematch_side(H_own, H_other, r_own) -> Tensor:
    d = H_own.shape[1]
    att = nx.softmax_lastdim(nx.scale(nx.matmul(H_own, nx.transpose(H_other)), 1.0 / math.sqrt(d)))
    matched = nx.mean_rows(nx.matmul(att, H_other))
    return nx.concat([r_own, matched])


def nodematch_score(H1, r1, H2, r2) -> Tensor:
    return nx.cosine(nodematch_side(H1, H2, r1), nodematch_side(H2, H1, r2))


def nodematch_forward(g1: Graph, g2: Graph, params) -> dict:
    """Node-exposing stand-in: node matrices and mean vectors both leave the device."""
    H1, H2 = gcn_encode(g1, params), gcn_encode(g2, params)
    r1, r2 = nx.mean_rows(H1), nx.mean_rows(H2)
    return {"H1": H1, "H2": H2, "r1": r1, "r2": r2, "score": nodematch_score(H1, r1, H2, r2)}


def forward(family: str, g1: Graph, g2: Graph, params, hyper: HyperParams, rng: np.random.Generator | None = None) -> dict:
    family = canonical_family(family)
    if family == "ppgm":
        return ppgm_forward(g1, g2, params, hyper)
    if family == "sgnn":
        return sgnn_forward(g1, g2, params)
    if family == "sgnn_ldp":
        return sgnn_forward(g1, g2, params, hyper.ldp_b, rng)
    return nodematch_forward(g1, g2, params)
