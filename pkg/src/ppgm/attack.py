"""Black-box property inference against intercepted representations.

An attacker holds a labelled shadow subset of the training graphs, runs
sessions with the deployed model, trains an MLP on what it intercepts, and
is scored by AUC on the validation and test graphs.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import model as M
from . import numerics as nx
from .graphs import Dataset
from .protocol import frozen, intercept, run_pairwise_session

log = logging.getLogger(__name__)

POLICIES = ("uniform-one", "all")

_SURFACES = {
    "ppgm": ({"G", "O"}, False),
    "sgnn": ({"G"}, False),
    "sgnn_ldp": ({"G"}, False),
    "nodematch": ({"N", "G"}, True),
}


def classify_attack_surface(family: str) -> dict:
    """Which representation kinds leave the device, and which attacks they enable."""
    try:
        fam = M.canonical_family(family)
    except ValueError:
        raise ValueError(f"unknown model family {family!r}") from None
    reps, recon = _SURFACES[fam]
    return {"reps": set(reps), "reconstruction_attackable": recon, "property_inference_attackable": True}


@dataclass(frozen=True, eq=False)
class AttackSample:
    representation: np.ndarray
    property_label: str
    rep_kind: str
    source_graph_id: str


@dataclass
class AttackerParams:
    params: dict
    input_dim: int
    label_values: tuple[str, str]

    def scores(self, X: np.ndarray) -> np.ndarray:
        p = self.params
        h = np.maximum(X @ p["w1"].data + p["b1"].data, 0.0)
        h = np.maximum(h @ p["w2"].data + p["b2"].data, 0.0)
        z = (h @ p["w3"].data + p["b3"].data)[:, 0]
        return 1.0 / (1.0 + np.exp(-z))


@dataclass
class AttackReport:
    model: str
    property: str
    seed: int
    val_auc: float
    test_auc: float
    n_train_samples: int
    policy: str
    n_val_samples: int = 0
    n_test_samples: int = 0
    shadow_graphs: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")
        return path


# --- metric ---------------------------------------------------------------------

def compute_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(random positive outranks random negative), ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("compute_auc: both classes must be present")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# --- data ---------------------------------------------------------------------------

def build_shadow_set(dataset: Dataset, fraction: float = 0.10, seed: int = 0) -> list[str]:
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"shadow fraction must lie in (0, 1], got {fraction}")
    ids = dataset.split_graph_ids("train")
    if not ids:
        raise ValueError("build_shadow_set: empty training split")
    k = max(1, int(round(fraction * len(ids))))
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(ids), size=k, replace=False)
    return sorted(ids[i] for i in pick)


def collect_attackable(
    checkpoint,
    graph_ids,
    dataset: Dataset,
    policy: str = "uniform-one",
    seed: int = 0,
    prop: str = "family",
    allow_untrained: bool = False,
) -> list[AttackSample]:
    """Run one session per graph (random partner from ``graph_ids``) and keep what it emitted.

    PPGM with ``uniform-one``: every message and the obfuscated vector the
    graph's device sent are separate samples. ``all`` concatenates them into
    one. Baselines yield one sample per graph: the graph vector, and for
    NodeMatch the mean node vector concatenated with it.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown interception policy {policy!r}")
    if not allow_untrained and checkpoint.meta.get("epochs_completed", 0) < 1:
        raise ValueError("collect_attackable: model has not been trained")
    family = checkpoint.family
    hyper = checkpoint.hyper
    params = frozen(checkpoint.params)
    rng = np.random.default_rng(seed)
    noise_rng = np.random.default_rng([seed, 1])
    ids = list(graph_ids)
    samples = []
    for idx, gid in enumerate(ids):
        j = int(rng.integers(len(ids) - 1)) if len(ids) > 1 else 0
        if len(ids) > 1 and j >= idx:
            j += 1
        g, partner = dataset.graphs[gid], dataset.graphs[ids[j]]
        _, transcript = run_pairwise_session(g, partner, params, family, hyper, rng=noise_rng, session_id=gid)
        own = [v for v in intercept(transcript) if v.sender == "A"]
        label = str(g.props[prop])
        if family == "ppgm":
            if policy == "uniform-one":
                samples.extend(AttackSample(v.vector, label, v.tag, gid) for v in own)
            else:
                samples.append(AttackSample(np.concatenate([v.vector for v in own]), label, "all", gid))
        elif family == "nodematch":
            nodes = np.stack([v.vector for v in own if v.tag == "node_rep"])
            graph = [v.vector for v in own if v.tag == "graph_rep"][0]
            samples.append(AttackSample(np.concatenate([nodes.mean(axis=0), graph]), label, "node_rep+graph_rep", gid))
        else:
            samples.append(AttackSample(own[0].vector, label, "graph_rep", gid))
    return samples


def _binary_labels(samples, values=None):
    labs = [s.property_label for s in samples]
    if values is None:
        values = tuple(sorted(set(labs)))
        if len(values) != 2:
            raise ValueError(f"attack needs a binary property with both classes present, got {values}")
    return np.array([1.0 if lab == values[1] else 0.0 for lab in labs]), values


# --- attacker -----------------------------------------------------------------------

def train_attacker(samples, seed: int = 0, epochs: int = 200, lr: float = 1e-3, widths=(128, 64)) -> AttackerParams:
    """Full-batch BCE training of a 3-layer ReLU MLP with Adam."""
    y, values = _binary_labels(samples)
    if min(y.sum(), len(y) - y.sum()) < 2:
        raise ValueError("train_attacker: need at least two samples of each class")
    X = np.stack([s.representation for s in samples])
    dims = [X.shape[1], *widths, 1]
    rng = np.random.default_rng(seed)
    params = {}
    for i in range(3):
        bound = 1.0 / math.sqrt(dims[i])
        params[f"w{i + 1}"] = nx.Tensor(rng.uniform(-bound, bound, size=(dims[i], dims[i + 1])), True, f"w{i + 1}")
        params[f"b{i + 1}"] = nx.Tensor(np.zeros(dims[i + 1]), True, f"b{i + 1}")
    state = nx.AdamState(lr=lr)
    Xt = nx.Tensor(X)
    pos, neg = nx.Tensor(y[:, None]), nx.Tensor(1.0 - y[:, None])
    for _ in range(epochs):
        h = nx.relu(nx.add(nx.matmul(Xt, params["w1"]), params["b1"]))
        h = nx.relu(nx.add(nx.matmul(h, params["w2"]), params["b2"]))
        z = nx.add(nx.matmul(h, params["w3"]), params["b3"])
        ll = nx.add(nx.mul(pos, nx.log_sigmoid(z)), nx.mul(neg, nx.log_sigmoid(nx.scale(z, -1.0))))
        loss = nx.scale(nx.sum_all(ll), -1.0 / len(y))
        nx.adam_step(params, nx.backward(loss), state)
    return AttackerParams(params, X.shape[1], values)


def attack_auc(attacker: AttackerParams, samples) -> float:
    y, _ = _binary_labels(samples, attacker.label_values)
    X = np.stack([s.representation for s in samples])
    return compute_auc(attacker.scores(X), y)


def run_attack(
    checkpoint,
    dataset: Dataset,
    prop: str = "family",
    seed: int = 0,
    shadow_frac: float = 0.10,
    policy: str = "uniform-one",
    allow_untrained: bool = False,
) -> AttackReport:
    """Shadow-set training, then AUC on every validation and test graph."""
    shadow = build_shadow_set(dataset, shadow_frac, seed)
    val_ids = dataset.split_graph_ids("val")
    test_ids = dataset.split_graph_ids("test")
    if set(shadow) & (set(val_ids) | set(test_ids)):
        raise AssertionError("shadow graphs leaked into the evaluation sets")
    kw = dict(policy=policy, prop=prop, allow_untrained=allow_untrained)
    train = collect_attackable(checkpoint, shadow, dataset, seed=seed, **kw)
    val = collect_attackable(checkpoint, val_ids, dataset, seed=seed + 1, **kw)
    test = collect_attackable(checkpoint, test_ids, dataset, seed=seed + 2, **kw)
    attacker = train_attacker(train, seed)
    return AttackReport(
        model=checkpoint.family,
        property=prop,
        seed=seed,
        val_auc=attack_auc(attacker, val),
        test_auc=attack_auc(attacker, test),
        n_train_samples=len(train),
        policy=policy,
        n_val_samples=len(val),
        n_test_samples=len(test),
        shadow_graphs=len(shadow),
    )
