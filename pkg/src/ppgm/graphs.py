"""Graph data model, synthetic pair benchmark, exact GED, dataset files."""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from functools import lru_cache
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
TASKS = ("cls", "reg")
FAMILIES = ("er", "pa")
GED_MAX_NODES = 8


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    id: str
    num_nodes: int
    features: np.ndarray
    edges: tuple[tuple[int, int], ...]
    props: dict = field(default_factory=dict)
    base: str | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.num_nodes:
            raise DatasetError(f"graph {self.id}: feature rows {feats.shape} != num_nodes {self.num_nodes}")
        object.__setattr__(self, "features", feats)
        seen = set()
        canon = []
        for u, v in self.edges:
            u, v = int(u), int(v)
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise DatasetError(f"graph {self.id}: edge ({u}, {v}) out of range for {self.num_nodes} nodes")
            if u == v:
                raise DatasetError(f"graph {self.id}: self-loop on node {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise DatasetError(f"graph {self.id}: duplicate edge {key}")
            seen.add(key)
            canon.append(key)
        object.__setattr__(self, "edges", tuple(canon))

    @property
    def f(self) -> int:
        return self.features.shape[1]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        for u, v in self.edges:
            a[u, v] = a[v, u] = 1.0
        return a

    def permute(self, perm) -> Graph:
        """Relabel nodes so that old node ``i`` becomes node ``perm[i]``."""
        perm = np.asarray(perm)
        feats = np.empty_like(self.features)
        feats[perm] = self.features
        edges = tuple((int(perm[u]), int(perm[v])) for u, v in self.edges)
        return Graph(self.id, self.num_nodes, feats, edges, dict(self.props), self.base)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.id == other.id
            and self.num_nodes == other.num_nodes
            and np.array_equal(self.features, other.features)
            and self.edges == other.edges
            and self.props == other.props
            and self.base == other.base
        )

    __hash__ = object.__hash__


@dataclass(frozen=True)
class GraphPair:
    g1: str
    g2: str
    y: float


@dataclass
class Dataset:
    graphs: dict[str, Graph]
    pairs: dict[str, list[GraphPair]]
    task: str
    f: int
    seed: int = 0
    config: dict = field(default_factory=dict)

    def split_graph_ids(self, split: str) -> list[str]:
        ids = []
        seen = set()
        for p in self.pairs[split]:
            for gid in (p.g1, p.g2):
                if gid not in seen:
                    seen.add(gid)
                    ids.append(gid)
        return ids

    def summary(self) -> dict:
        out = {"task": self.task, "f": self.f, "graphs": len(self.graphs)}
        for s in SPLITS:
            out[f"pairs_{s}"] = len(self.pairs[s])
        out["empty_splits"] = [s for s in SPLITS if not self.pairs[s]]
        return out

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.task == other.task
            and self.f == other.f
            and self.seed == other.seed
            and self.config == other.config
            and self.pairs == other.pairs
            and list(self.graphs) == list(other.graphs)
            and all(self.graphs[k] == other.graphs[k] for k in self.graphs)
        )


# --- structure ---------------------------------------------------------------

def normalized_adjacency(g: Graph) -> np.ndarray:
    """Renormalized adjacency D^-1/2 (A + I) D^-1/2."""
    a = g.adjacency() + np.eye(g.num_nodes)
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return a * d[:, None] * d[None, :]


def degree_features(num_nodes: int, edges, buckets: int = 8) -> np.ndarray:
    deg = np.zeros(num_nodes, dtype=int)
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    x = np.zeros((num_nodes, buckets))
    x[np.arange(num_nodes), np.minimum(deg, buckets - 1)] = 1.0
    return x


# --- exact GED ---------------------------------------------------------------

@lru_cache(maxsize=None)
def _perms(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.intp).reshape(-1, n)


def _padded_adjacency(g: Graph, n: int) -> np.ndarray:
    a = np.zeros((n, n), dtype=np.int8)
    for u, v in g.edges:
        a[u, v] = a[v, u] = 1
    return a


def exact_ged(g1: Graph, g2: Graph) -> int:
    """Unit-cost GED for unlabeled graphs by exhaustive node mapping.

    The smaller graph is padded with isolated dummy nodes; matching a real
    node to a dummy is a node insertion/deletion and every mismatched
    adjacency entry is one edge edit.
    """
    n = max(g1.num_nodes, g2.num_nodes)
    if n > GED_MAX_NODES:
        raise ValueError(f"exact_ged supports at most {GED_MAX_NODES} nodes per graph, got {g1.num_nodes} and {g2.num_nodes}")
    node_cost = abs(g1.num_nodes - g2.num_nodes)
    if n == 0:
        return 0
    a1 = _padded_adjacency(g1, n)
    a2 = _padded_adjacency(g2, n)
    iu = np.triu_indices(n, 1)
    target = a1[iu]
    best = None
    perms = _perms(n)
    # chunked to bound memory at n == 8 (40320 permutations)
    for start in range(0, len(perms), 8192):
        p = perms[start:start + 8192]
        mapped = a2[p[:, iu[0]], p[:, iu[1]]]
        cost = np.abs(mapped - target).sum(axis=1).min()
        best = cost if best is None else min(best, cost)
    return int(best) + node_cost


def ged_similarity(g1: Graph, g2: Graph) -> float:
    ged = exact_ged(g1, g2)
    return math.exp(-2.0 * ged / (g1.num_nodes + g2.num_nodes))


# --- synthetic benchmark -----------------------------------------------------

@dataclass
class SyntheticConfig:
    graphs: int = 60
    pairs: tuple[int, int, int] = (500, 100, 100)
    min_nodes: int = 20
    max_nodes: int = 40
    perturb: float = 0.10
    task: str = "cls"
    er_p: float = 0.15
    pa_k: int = 2
    feature_buckets: int = 8

    def to_json(self) -> dict:
        d = asdict(self)
        d["pairs"] = list(self.pairs)
        return d

    @classmethod
    def from_json(cls, d: dict) -> SyntheticConfig:
        d = dict(d)
        d["pairs"] = tuple(d["pairs"])
        return cls(**d)


def _erdos_renyi(n: int, p: float, rng: np.random.Generator) -> list[tuple[int, int]]:
    iu = np.triu_indices(n, 1)
    keep = rng.random(len(iu[0])) < p
    return [(int(u), int(v)) for u, v in zip(iu[0][keep], iu[1][keep])]


def _preferential_attachment(n: int, k: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    edges = [(u, v) for u in range(k + 1) for v in range(u + 1, k + 1)]
    targets = [x for e in edges for x in e]
    for new in range(k + 1, n):
        chosen: set[int] = set()
        while len(chosen) < k:
            chosen.add(targets[int(rng.integers(len(targets)))])
        for t in sorted(chosen):
            edges.append((t, new))
            targets.extend((t, new))
    return edges


def rewire(n: int, edges, rate: float, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Remove ``round(rate*|E|)`` edges and add as many previously absent ones."""
    edges = sorted((min(u, v), max(u, v)) for u, v in edges)
    k = int(round(rate * len(edges)))
    if k == 0:
        return edges
    drop = set(rng.choice(len(edges), size=k, replace=False).tolist())
    kept = [e for i, e in enumerate(edges) if i not in drop]
    present = set(edges)
    absent = [(u, v) for u in range(n) for v in range(u + 1, n) if (u, v) not in present]
    k = min(k, len(absent))
    add = rng.choice(len(absent), size=k, replace=False)
    return sorted(kept + [absent[i] for i in add])


def _split_counts(total: int, weights) -> list[int]:
    w = np.asarray(weights, dtype=float)
    raw = total * w / w.sum()
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: total - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def generate_synthetic_dataset(config: SyntheticConfig | None = None, seed: int = 0) -> Dataset:
    """Pairs of perturbed ER / preferential-attachment graphs.

    Positive pairs are two independent rewirings of one base graph, negative
    pairs are rewirings of two distinct base graphs. Base graphs are split
    across train/val/test before pairing, balanced per family.
    """
    cfg = config or SyntheticConfig()
    if cfg.min_nodes < 3:
        raise ValueError(f"min_nodes must be >= 3, got {cfg.min_nodes}")
    if cfg.max_nodes < cfg.min_nodes:
        raise ValueError(f"max_nodes {cfg.max_nodes} < min_nodes {cfg.min_nodes}")
    if not 0.0 <= cfg.perturb <= 0.5:
        raise ValueError(f"perturbation rate must lie in [0, 0.5], got {cfg.perturb}")
    if cfg.task not in TASKS:
        raise ValueError(f"unknown task kind {cfg.task!r}")
    if cfg.task == "reg" and cfg.max_nodes > GED_MAX_NODES:
        raise ValueError(f"regression labels need exact GED: max_nodes must be <= {GED_MAX_NODES}")
    if cfg.graphs < 2 * len(SPLITS) * 2:
        raise ValueError(f"need at least {4 * len(SPLITS)} base graphs, got {cfg.graphs}")

    rng = np.random.default_rng(seed)
    n_er = cfg.graphs // 2
    families = ["er"] * n_er + ["pa"] * (cfg.graphs - n_er)
    bases = []
    for i, fam in enumerate(families):
        n = int(rng.integers(cfg.min_nodes, cfg.max_nodes + 1))
        if fam == "er":
            edges = _erdos_renyi(n, cfg.er_p, rng)
        else:
            edges = _preferential_attachment(n, cfg.pa_k, rng)
        bases.append((f"b{i:04d}", fam, n, edges))

    # partition each family across splits in proportion to pair counts
    split_bases: dict[str, list] = {s: [] for s in SPLITS}
    for fam in FAMILIES:
        members = [b for b in bases if b[1] == fam]
        order = rng.permutation(len(members))
        counts = _split_counts(len(members), [max(p, 1) for p in cfg.pairs])
        for s, c in zip(SPLITS, counts):
            c = max(c, 1)
            split_bases[s].extend(members[i] for i in order[:c])
            order = order[c:]

    graphs: dict[str, Graph] = {}
    pairs: dict[str, list[GraphPair]] = {s: [] for s in SPLITS}
    counter = itertools.count()

    def variant(base) -> Graph:
        bid, fam, n, edges = base
        new_edges = rewire(n, edges, cfg.perturb, rng)
        gid = f"g{next(counter):05d}"
        g = Graph(gid, n, degree_features(n, new_edges, cfg.feature_buckets), tuple(new_edges), {"family": fam}, bid)
        graphs[gid] = g
        return g

    for s, total in zip(SPLITS, cfg.pairs):
        pool = split_bases[s]
        labels = np.array([1] * (total // 2) + [0] * (total - total // 2))
        labels = labels[rng.permutation(total)]
        for lab in labels:
            if lab == 1 or len(pool) < 2:
                b = pool[int(rng.integers(len(pool)))]
                ga, gb = variant(b), variant(b)
                lab = 1
            else:
                i, j = rng.choice(len(pool), size=2, replace=False)
                ga, gb = variant(pool[i]), variant(pool[j])
            if cfg.task == "cls":
                y = float(lab)
            else:
                y = ged_similarity(ga, gb)
            pairs[s].append(GraphPair(ga.id, gb.id, y))

    return Dataset(graphs, pairs, cfg.task, cfg.feature_buckets, seed, cfg.to_json())


# --- files -------------------------------------------------------------------

def _real(x: float) -> float:
    return float(x)


def _dump(obj) -> str:
    # repr(float) is the shortest string that round-trips a 64-bit value
    return json.dumps(obj, separators=(",", ":"), sort_keys=False)


def write_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "graphs.jsonl", "w", encoding="utf-8") as fh:
        for g in ds.graphs.values():
            rec = {
                "id": g.id,
                "n": g.num_nodes,
                "features": [[_real(x) for x in r] for r in g.features],
                "edges": [list(e) for e in g.edges],
                "props": g.props,
            }
            if g.base is not None:
                rec["base"] = g.base
            fh.write(_dump(rec) + "\n")
    with open(path / "pairs.jsonl", "w", encoding="utf-8") as fh:
        for s in SPLITS:
            for p in ds.pairs[s]:
                fh.write(_dump({"split": s, "g1": p.g1, "g2": p.g2, "y": p.y}) + "\n")
    with open(path / "meta.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"task": ds.task, "f": ds.f, "seed": ds.seed, "config": ds.config}, indent=2, sort_keys=True) + "\n")
    return path


def read_dataset(path) -> Dataset:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetError(f"{path}: missing meta.json") from None
    task = meta.get("task")
    if task not in TASKS:
        raise DatasetError(f"{path / 'meta.json'}: unknown task kind {task!r}")
    f = int(meta["f"])

    graphs: dict[str, Graph] = {}
    gpath = path / "graphs.jsonl"
    with open(gpath, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                n = int(rec["n"])
                if n < 1:
                    raise DatasetError("empty graph")
                feats = np.asarray(rec["features"], dtype=np.float64).reshape(n, -1) if n else np.zeros((0, f))
                if feats.shape[1] != f:
                    raise DatasetError(f"feature dim {feats.shape[1]} != f={f}")
                g = Graph(str(rec["id"]), n, feats, tuple(tuple(e) for e in rec["edges"]), dict(rec.get("props", {})), rec.get("base"))
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{gpath}:{lineno}: {exc}") from None
            if g.id in graphs:
                raise DatasetError(f"{gpath}:{lineno}: duplicate graph id {g.id!r}")
            graphs[g.id] = g

    pairs: dict[str, list[GraphPair]] = {s: [] for s in SPLITS}
    ppath = path / "pairs.jsonl"
    with open(ppath, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                split = rec["split"]
                if split not in pairs:
                    raise DatasetError(f"unknown split {split!r}")
                p = GraphPair(str(rec["g1"]), str(rec["g2"]), float(rec["y"]))
                for gid in (p.g1, p.g2):
                    if gid not in graphs:
                        raise DatasetError(f"unknown graph id {gid!r}")
                if task == "cls" and p.y not in (0.0, 1.0):
                    raise DatasetError(f"classification label must be 0 or 1, got {p.y}")
                if task == "reg" and not 0.0 <= p.y <= 1.0:
                    raise DatasetError(f"regression label must lie in [0, 1], got {p.y}")
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{ppath}:{lineno}: {exc}") from None
            pairs[split].append(p)

    ds = Dataset(graphs, pairs, task, f, int(meta.get("seed", 0)), meta.get("config", {}))
    empty = ds.summary()["empty_splits"]
    if empty:
        log.warning("dataset %s has empty pair splits: %s", path, ", ".join(empty))
    return ds
