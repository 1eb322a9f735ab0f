"""Shared pieces for the experiment scripts: data, one training run, output files."""

import argparse
import json
import logging
from pathlib import Path

import numpy as np

from ppgm import graphs as G
from ppgm import pipeline as P
from ppgm.attack import run_attack
from ppgm.model import HyperParams


def base_parser(description: str, out: str) -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--data", help="dataset directory written by `ppgm gen-data`; generated in memory if omitted")
    ap.add_argument("--data-seed", type=int, default=7)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--out", default=out)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def setup(args):
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    if args.data:
        return G.read_dataset(args.data)
    return G.generate_synthetic_dataset(G.SyntheticConfig(), seed=args.data_seed)


def run_one(dataset, family, seed, hyper: HyperParams, label=None, attack=True) -> dict:
    """Train, evaluate, attack; one flat row."""
    ckpt, rec = P.train_gsl(dataset, family, hyper, seed)
    row = {"model": label or family, "seed": seed, "task_auc": rec.test_metric, "best_epoch": rec.best_epoch,
           "train_seconds": round(rec.seconds, 1)}
    if attack:
        rep = run_attack(ckpt, dataset, "family", seed)
        row.update(attack_val_auc=rep.val_auc, attack_test_auc=rep.test_auc)
    print(json.dumps(row), flush=True)
    return row


def mean_by(rows, key="model", values=("task_auc", "attack_test_auc")) -> list[dict]:
    out = []
    for name in dict.fromkeys(r[key] for r in rows):
        sel = [r for r in rows if r[key] == name]
        agg = {key: name, "n": len(sel)}
        for v in values:
            if v in sel[0]:
                agg[f"{v}_mean"] = float(np.mean([r[v] for r in sel]))
                agg[f"{v}_std"] = float(np.std([r[v] for r in sel]))
        out.append(agg)
    return out


def write(out, name, rows, summary) -> str:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{name}.jsonl", "w") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")
    text = P.render_table(rows) + "\n" + P.render_table(summary)
    (out / f"{name}.txt").write_text(text)
    return text
