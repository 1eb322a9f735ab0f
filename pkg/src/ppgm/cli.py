"""``ppgm`` command line: gen-data, train, eval, simulate, attack, sweep, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import graphs as G
from . import model as M
from . import pipeline as P
from .attack import run_attack
from .protocol import Transcript, replay_score, run_pairwise_session

ABLATIONS = {"no-obf": "no_obfuscation", "no-ctx": "no_context_codes", "no-ngm": "no_ng_matching"}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ppgm", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic pair benchmark")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--graphs", type=int, default=60)
    g.add_argument("--pairs", type=int, nargs=3, default=[500, 100, 100], metavar=("TRAIN", "VAL", "TEST"))
    g.add_argument("--min-nodes", type=int, default=None)
    g.add_argument("--max-nodes", type=int, default=None)
    g.add_argument("--task", choices=G.TASKS, default="cls")
    g.add_argument("--perturb", type=float, default=0.10)

    t = sub.add_parser("train", help="train a similarity model")
    t.add_argument("--data", required=True)
    t.add_argument("--model", required=True, choices=["ppgm", "sgnn", "sgnn-ldp", "nodematch"])
    t.add_argument("--d", type=int, default=100)
    t.add_argument("--layers", type=int, default=3)
    t.add_argument("--m", type=int, default=8)
    t.add_argument("--heads", type=int, default=4)
    t.add_argument("--lr", type=float, default=5e-4)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch", type=int, default=10)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--ablate", choices=sorted(ABLATIONS), action="append", default=[])
    t.add_argument("--ldp-b", type=float, default=0.0)

    e = sub.add_parser("eval", help="evaluate a checkpoint through device sessions")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=G.SPLITS, default="test")

    s = sub.add_parser("simulate", help="run one two-party session and write its transcript")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--pair-index", type=int, required=True)
    s.add_argument("--split", choices=G.SPLITS, default="test")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--transcript", required=True)

    a = sub.add_parser("attack", help="property inference attack on a checkpoint")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--shadow-frac", type=float, default=0.10)
    a.add_argument("--property", default="family")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--policy", choices=["uniform-one", "all"], default="uniform-one")
    a.add_argument("--report", required=True)

    w = sub.add_parser("sweep", help="m or epoch sweep with attack evaluation")
    w.add_argument("--data", required=True)
    w.add_argument("--model", default="ppgm", choices=["ppgm", "sgnn", "sgnn-ldp", "nodematch"])
    w.add_argument("--kind", required=True, choices=["m", "epochs"])
    w.add_argument("--seeds", type=int, nargs="+", default=[0])
    w.add_argument("--epochs", type=int, default=30, help="training epochs for the m sweep")
    w.add_argument("--d", type=int, default=100)
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("--out", required=True)

    r = sub.add_parser("report", help="assemble run records, attack reports and sweep rows into one table")
    r.add_argument("--inputs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    return ap


def _resolved(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "verbose"}


def cmd_gen_data(args):
    task = args.task
    lo = args.min_nodes if args.min_nodes is not None else (20 if task == "cls" else 5)
    hi = args.max_nodes if args.max_nodes is not None else (40 if task == "cls" else 8)
    cfg = G.SyntheticConfig(graphs=args.graphs, pairs=tuple(args.pairs), min_nodes=lo, max_nodes=hi, perturb=args.perturb, task=task)
    ds = G.generate_synthetic_dataset(cfg, args.seed)
    G.write_dataset(ds, args.out)
    print(json.dumps(ds.summary()))


def cmd_train(args):
    ds = G.read_dataset(args.data)
    flags = {ABLATIONS[a]: True for a in args.ablate}
    hyper = M.HyperParams(d=args.d, layers=args.layers, m=args.m, heads=args.heads, lr=args.lr, epochs=args.epochs,
                          batch=args.batch, ldp_b=args.ldp_b, **flags)
    ckpt, record = P.train_gsl(ds, args.model, hyper, args.seed)
    out = Path(args.out)
    P.save_checkpoint(ckpt, out / "checkpoint.json")
    record.write(out / "run.jsonl")
    rows = [{"epoch": e["epoch"], "train_loss": e["train_loss"], "val": e["val"]} for e in record.epochs]
    (out / "run.txt").write_text(P.render_table(rows) + f"best_epoch {record.best_epoch}  test_{record.metric} {record.test_metric:.4f}\n")
    print(json.dumps({"checkpoint": str(out / "checkpoint.json"), "test": record.test_metric, "metric": record.metric}))


def cmd_eval(args):
    ckpt = P.load_checkpoint(args.ckpt)
    ds = G.read_dataset(args.data)
    value = P.evaluate_gsl(ckpt, ds, args.split)
    print(json.dumps({"split": args.split, "metric": "auc" if ds.task == "cls" else "mse", "value": value}))


def cmd_simulate(args):
    ckpt = P.load_checkpoint(args.ckpt)
    ds = G.read_dataset(args.data)
    pairs = ds.pairs[args.split]
    if not 0 <= args.pair_index < len(pairs):
        raise ValueError(f"pair index {args.pair_index} out of range for {len(pairs)} {args.split} pairs")
    pair = pairs[args.pair_index]
    rng = np.random.default_rng(args.seed)
    score, transcript = run_pairwise_session(ds.graphs[pair.g1], ds.graphs[pair.g2], ckpt.tensors(), ckpt.family,
                                             ckpt.hyper, rng=rng, session_id=f"{args.split}-{args.pair_index}")
    transcript.write(args.transcript)
    replay = replay_score(Transcript.read(args.transcript), ckpt.tensors(), ckpt.family)
    print(json.dumps({"score": score, "replayed": replay, "events": len(transcript.events), "label": pair.y}))


def cmd_attack(args):
    ckpt = P.load_checkpoint(args.ckpt)
    ds = G.read_dataset(args.data)
    rep = run_attack(ckpt, ds, args.property, args.seed, args.shadow_frac, args.policy)
    rep.write(args.report)
    print(json.dumps(rep.to_json()))


def cmd_sweep(args):
    ds = G.read_dataset(args.data)
    hyper = M.HyperParams(d=args.d, epochs=args.epochs)
    rows = P.sweep(ds, args.model, args.kind, args.seeds, hyper, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"sweep_{args.kind}.jsonl", "w") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")
    text = P.render_table(rows) + "\n" + P.render_table(P.summarize(rows))
    (out / f"sweep_{args.kind}.txt").write_text(text)
    print(text, end="")


def _load_rows(path: Path) -> list[dict]:
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
        docs = doc if isinstance(doc, list) else [doc]
    except json.JSONDecodeError:
        docs = [json.loads(line) for line in text.splitlines() if line.strip()]
    rows = []
    for d in docs:
        if d.get("record") == "epoch":
            continue
        rows.append({"source": path.name, **{k: v for k, v in d.items() if not isinstance(v, (dict, list))}})
    return rows


def cmd_report(args):
    rows = []
    for p in args.inputs:
        p = Path(p)
        files = sorted(p.rglob("*.json*")) if p.is_dir() else [p]
        for f in files:
            if f.name in ("checkpoint.json", "meta.json", "graphs.jsonl", "pairs.jsonl"):
                continue
            rows.extend(_load_rows(f))
    columns = []
    for r in rows:
        columns += [k for k in r if k not in columns]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.jsonl", "w") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")
    text = P.render_table(rows, columns)
    (out / "report.txt").write_text(text)
    print(text, end="")


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "simulate": cmd_simulate,
            "attack": cmd_attack, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    print(json.dumps({"command": args.verb, "config": _resolved(args)}, default=str), flush=True)
    try:
        COMMANDS[args.verb](args)
    except (ValueError, OSError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "command": args.verb, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
