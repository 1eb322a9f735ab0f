"""Attack a property that varies inside positive pairs.

The generator family is shared by both graphs of a positive pair, so a
similarity model has no reason to discard it. Here every graph variant
also draws a "style": plain, or with extra random edges added. Two
variants of one base graph can differ in style and are still a positive
pair, so a trained model is pushed towards style invariance. The script
reports the style attack AUC for untrained and trained models.

    python3 scripts/nuisance_property.py --seeds 0 --models ppgm sgnn
"""

import json

import numpy as np

from common import base_parser, mean_by, setup, write

from ppgm import pipeline as P
from ppgm.attack import run_attack
from ppgm.graphs import Dataset, Graph, degree_features
from ppgm.model import HyperParams


def add_style(ds: Dataset, extra: float, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    graphs = {}
    for gid, g in ds.graphs.items():
        style = "dense" if rng.random() < 0.5 else "plain"
        edges = set(g.edges)
        if style == "dense":
            target = len(edges) + max(1, round(extra * len(edges)))
            while len(edges) < min(target, g.num_nodes * (g.num_nodes - 1) // 2):
                u, v = sorted(int(x) for x in rng.choice(g.num_nodes, size=2, replace=False))
                edges.add((u, v))
        edges = tuple(sorted(edges))
        graphs[gid] = Graph(gid, g.num_nodes, degree_features(g.num_nodes, edges, ds.f), edges,
                            {**g.props, "style": style}, g.base)
    return Dataset(graphs, ds.pairs, ds.task, ds.f, ds.seed, {**ds.config, "style_extra": extra})


def main():
    ap = base_parser(__doc__, "results/nuisance_property")
    ap.add_argument("--extra", type=float, default=0.3, help="fraction of extra edges in the dense style")
    ap.add_argument("--models", nargs="+", default=["ppgm", "sgnn"])
    args = ap.parse_args()
    ds = add_style(setup(args), args.extra, seed=args.data_seed + 1000)
    rows = []
    for family in args.models:
        for s in args.seeds:
            untrained = P.new_checkpoint(family, HyperParams(), ds, s)
            ckpt, rec = P.train_gsl(ds, family, HyperParams(epochs=args.epochs), s)
            for label, c, task in ((f"{family} untrained", untrained, P.evaluate_gsl(untrained, ds, "test")),
                                   (f"{family} trained", ckpt, rec.test_metric)):
                row = {"model": label, "seed": s, "task_auc": task}
                for prop in ("style", "family"):
                    rep = run_attack(c, ds, prop, s, allow_untrained=True)
                    row[f"{prop}_attack_auc"] = rep.test_auc
                rows.append(row)
                print(json.dumps(row), flush=True)
    summary = mean_by(rows, values=("task_auc", "style_attack_auc", "family_attack_auc"))
    print(write(args.out, "nuisance_property", rows, summary), end="")


if __name__ == "__main__":
    main()
