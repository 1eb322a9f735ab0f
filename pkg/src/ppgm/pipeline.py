"""Training, evaluation, checkpoints and the m / epoch sweeps."""

from __future__ import annotations

import base64
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import model as M
from . import numerics as nx
from .attack import compute_auc, run_attack
from .graphs import Dataset
from .model import HyperParams
from .protocol import frozen, run_pairwise_session

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
BYTES_PER_PARAM = 4
M_GRID = (1, 2, 4, 8, 16)
EPOCH_GRID = (20, 40, 60, 80, 100)


class CheckpointError(ValueError):
    pass


@dataclass(eq=False)
class Checkpoint:
    family: str
    hyper: HyperParams
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    @property
    def task(self) -> str:
        return self.meta.get("task", "cls")

    def tensors(self) -> dict[str, nx.Tensor]:
        return {k: nx.Tensor(v) for k, v in self.params.items()}

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            (self.version, self.family, self.hyper, self.meta) == (other.version, other.family, other.hyper, other.meta)
            and self.params.keys() == other.params.keys()
            and all(self.params[k].shape == other.params[k].shape and self.params[k].tobytes() == other.params[k].tobytes() for k in self.params)
        )


@dataclass
class RunRecord:
    family: str
    seed: int
    initial_train_loss: float
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = float("nan")
    test_metric: float = float("nan")
    metric: str = "auc"
    seconds: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)

    def deterministic_view(self) -> dict:
        d = self.to_json()
        d.pop("seconds")
        return d

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.epochs:
                fh.write(json.dumps({"record": "epoch", **e}) + "\n")
            summary = {k: v for k, v in self.to_json().items() if k != "epochs"}
            fh.write(json.dumps({"record": "summary", **summary}) + "\n")
        return path


# --- accounting & io -------------------------------------------------------------------

def model_size_bytes(checkpoint: Checkpoint) -> int:
    """Deployment size at 32 bits per parameter."""
    return BYTES_PER_PARAM * M.param_count(checkpoint.params)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "version": ckpt.version,
        "family": ckpt.family,
        "hyper": ckpt.hyper.to_json(),
        "params": {
            name: {"shape": list(arr.shape), "data_b64": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")}
            for name, arr in ckpt.params.items()
        },
        "meta": ckpt.meta,
    }
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if path.is_dir():
        path = path / "checkpoint.json"
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a checkpoint document: {exc}") from None
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {doc.get('version')!r} is not supported (expected {CHECKPOINT_VERSION})")
    family = M.canonical_family(doc["family"])
    hyper = HyperParams.from_json(doc["hyper"])
    meta = doc.get("meta", {})
    params = {}
    for name, rec in doc["params"].items():
        shape = tuple(rec["shape"])
        raw = base64.b64decode(rec["data_b64"])
        n = int(np.prod(shape)) if shape else 1
        if len(raw) != 8 * n:
            raise CheckpointError(f"{path}: tensor {name!r} holds {len(raw) // 8} values, shape {shape} needs {n}")
        params[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if params and "f" in meta:
        expected = M.param_shapes(family, hyper, int(meta["f"]), meta.get("task", "cls"))
        for name, shape in expected.items():
            if name not in params:
                raise CheckpointError(f"{path}: missing tensor {name!r}")
            if params[name].shape != shape:
                raise CheckpointError(f"{path}: tensor {name!r} has shape {params[name].shape}, hyperparameters imply {shape}")
        extra = set(params) - set(expected)
        if extra:
            raise CheckpointError(f"{path}: unexpected tensors {sorted(extra)}")
    return Checkpoint(family, hyper, params, meta, doc["version"])


def new_checkpoint(family: str, hyper: HyperParams, dataset: Dataset, seed: int) -> Checkpoint:
    """A freshly initialised (untrained) model."""
    family = M.canonical_family(family)
    params = M.init_params(family, hyper, dataset.f, dataset.task, seed)
    return Checkpoint(family, hyper, {k: v.data.copy() for k, v in params.items()},
                      {"seed": seed, "epochs_completed": 0, "f": dataset.f, "task": dataset.task, "best_val": None})


# --- scoring ----------------------------------------------------------------------------

def _scores(family, hyper, params, dataset: Dataset, split: str, seed: int, distributed: bool) -> list[float]:
    p = frozen(params)
    rng = np.random.default_rng([seed, 7])
    out = []
    for i, pair in enumerate(dataset.pairs[split]):
        g1, g2 = dataset.graphs[pair.g1], dataset.graphs[pair.g2]
        if distributed:
            s, _ = run_pairwise_session(g1, g2, p, family, hyper, rng=rng, session_id=f"{split}-{i}")
        else:
            s = float(M.forward(family, g1, g2, p, hyper, rng)["score"].data)
        out.append(s)
    return out


def _metric(dataset: Dataset, split: str, scores) -> float:
    y = np.array([p.y for p in dataset.pairs[split]])
    if dataset.task == "cls":
        return compute_auc(scores, y)
    return float(np.mean((np.asarray(scores) - y) ** 2))


def evaluate_gsl(checkpoint: Checkpoint, dataset: Dataset, split: str = "test", distributed: bool = True) -> float:
    """AUC (classification) or MSE (regression), every pair scored through a device session."""
    if not dataset.pairs[split]:
        raise ValueError(f"evaluate_gsl: split {split!r} is empty")
    scores = _scores(checkpoint.family, checkpoint.hyper, checkpoint.params, dataset, split,
                     checkpoint.meta.get("seed", 0), distributed)
    return _metric(dataset, split, scores)


# --- training -----------------------------------------------------------------------------

def batch_slices(n: int, size: int) -> list[slice]:
    """Consecutive mini-batches over ``n`` items; the last one may be partial."""
    return [slice(b, min(b + size, n)) for b in range(0, n, size)]


def _batch_loss(family, hyper, params, dataset, batch, rng):
    graphs = [(dataset.graphs[p.g1], dataset.graphs[p.g2]) for p in batch]
    if family == "ppgm":
        preds = M.ppgm_batch_scores(graphs, params, hyper)
    else:
        preds = [M.forward(family, g1, g2, params, hyper, rng)["score"] for g1, g2 in graphs]
    return M.mse_loss(preds, [p.y for p in batch], dataset.task)


def _better(task: str, new: float, best: float | None) -> bool:
    if best is None:
        return True
    return new > best if task == "cls" else new < best


def train_gsl(dataset: Dataset, family: str, hyper: HyperParams, seed: int = 0, snapshot_epochs=()) -> tuple[Checkpoint, RunRecord] | tuple[Checkpoint, RunRecord, dict]:
    """Adam on MSE with shuffled mini-batches; keeps the best-validation parameters.

    With ``snapshot_epochs`` also returns ``{epoch: Checkpoint}`` holding the
    model that a run of exactly that many epochs would have selected.
    """
    family = M.canonical_family(family)
    if dataset.task == "reg" and family != "ppgm":
        raise ValueError(f"{family} has no regression head; regression datasets need ppgm")
    if not dataset.pairs["train"]:
        raise ValueError("train_gsl: empty training split")
    if not dataset.pairs["val"]:
        raise ValueError("train_gsl: model selection needs a non-empty validation split")
    start = time.perf_counter()
    params = M.init_params(family, hyper, dataset.f, dataset.task, seed)
    state = nx.AdamState(lr=hyper.lr)
    order_rng = np.random.default_rng([seed, 1])
    noise_rng = np.random.default_rng([seed, 2])
    train = dataset.pairs["train"]

    def full_train_loss():
        ps = frozen(params)
        losses = [float(_batch_loss(family, hyper, ps, dataset, train[i:i + 50], noise_rng).data) * len(train[i:i + 50])
                  for i in range(0, len(train), 50)]
        return sum(losses) / len(train)

    record = RunRecord(family, seed, full_train_loss(), metric="auc" if dataset.task == "cls" else "mse")
    best = {k: v.data.copy() for k, v in params.items()}
    best_val = None
    snapshots = {}
    for epoch in range(1, hyper.epochs + 1):
        order = order_rng.permutation(len(train))
        total = 0.0
        for sl in batch_slices(len(order), hyper.batch):
            batch = [train[i] for i in order[sl]]
            loss = _batch_loss(family, hyper, params, dataset, batch, noise_rng)
            nx.adam_step(params, nx.backward(loss), state)
            total += float(loss.data) * len(batch)
        val = _metric(dataset, "val", _scores(family, hyper, params, dataset, "val", seed, distributed=False))
        record.epochs.append({"epoch": epoch, "train_loss": total / len(train), "val": val})
        if _better(dataset.task, val, best_val):
            best_val = val
            best = {k: v.data.copy() for k, v in params.items()}
            record.best_epoch = epoch
        log.info("%s seed=%d epoch %d loss %.4f val %.4f", family, seed, epoch, total / len(train), val)
        if epoch in snapshot_epochs:
            snapshots[epoch] = Checkpoint(family, hyper.with_(epochs=epoch), {k: v.copy() for k, v in best.items()},
                                          {"seed": seed, "epochs_completed": epoch, "f": dataset.f, "task": dataset.task,
                                           "best_val": best_val, "best_epoch": record.best_epoch})
    record.best_val = best_val
    ckpt = Checkpoint(family, hyper, best, {"seed": seed, "epochs_completed": hyper.epochs, "f": dataset.f,
                                            "task": dataset.task, "best_val": best_val, "best_epoch": record.best_epoch})
    if dataset.pairs["test"]:
        record.test_metric = evaluate_gsl(ckpt, dataset, "test")
    record.seconds = time.perf_counter() - start
    if snapshot_epochs:
        return ckpt, record, snapshots
    return ckpt, record


# --- sweeps -------------------------------------------------------------------------------

def _sweep_point(args):
    dataset, family, hyper, kind, point, seed, shadow_frac = args
    if kind == "m":
        ckpt, rec = train_gsl(dataset, family, hyper.with_(m=point), seed)
        return [_row(kind, point, seed, ckpt, dataset, rec.test_metric, shadow_frac)]
    ckpt, rec, snaps = train_gsl(dataset, family, hyper.with_(epochs=max(EPOCH_GRID)), seed, snapshot_epochs=EPOCH_GRID)
    return [_row(kind, e, seed, snaps[e], dataset, evaluate_gsl(snaps[e], dataset, "test"), shadow_frac) for e in EPOCH_GRID]


def _row(kind, point, seed, ckpt, dataset, task_auc, shadow_frac):
    rep = run_attack(ckpt, dataset, "family", seed, shadow_frac)
    return {"kind": kind, "point": point, "seed": seed, "task_auc": task_auc, "attack_val_auc": rep.val_auc, "attack_test_auc": rep.test_auc}


def sweep(dataset: Dataset, family: str, kind: str, seeds, hyper: HyperParams | None = None, jobs: int = 1, shadow_frac: float = 0.10) -> list[dict]:
    """One row per (grid point, seed) for the m grid or the epoch grid.

    The epoch grid trains once to the largest epoch count and reads off the
    model each shorter run would have selected; per-epoch shuffling makes the
    two identical.
    """
    if dataset.task != "cls":
        raise ValueError("sweep needs a classification dataset")
    if kind not in ("m", "epochs"):
        raise ValueError(f"unknown sweep kind {kind!r}")
    hyper = hyper or HyperParams(epochs=30)
    family = M.canonical_family(family)
    if kind == "m":
        jobs_args = [(dataset, family, hyper, kind, m, s, shadow_frac) for m in M_GRID for s in seeds]
    else:
        jobs_args = [(dataset, family, hyper, kind, None, s, shadow_frac) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            chunks = list(pool.map(_sweep_point, jobs_args))
    else:
        chunks = [_sweep_point(a) for a in jobs_args]
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: (r["point"], r["seed"]))
    return rows


def summarize(rows: list[dict], keys=("task_auc", "attack_test_auc")) -> list[dict]:
    """Mean and population std per grid point."""
    out = []
    for point in sorted({r["point"] for r in rows}):
        sel = [r for r in rows if r["point"] == point]
        agg = {"point": point, "n": len(sel)}
        for k in keys:
            vals = np.array([r[k] for r in sel])
            agg[f"{k}_mean"] = float(vals.mean())
            agg[f"{k}_std"] = float(vals.std())
        out.append(agg)
    return out


def render_table(rows: list[dict], columns=None) -> str:
    if not rows:
        return "(no rows)\n"
    columns = columns or list(rows[0])

    def fmt(v):
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    cells = [[fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"
