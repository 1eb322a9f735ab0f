"""Task AUC and family-inference attack AUC for PPGM and the three baselines.

    python3 scripts/privacy_table.py --seeds 0 1 2 --ldp-b 0.01
"""

from common import base_parser, mean_by, run_one, setup, write

from ppgm.model import HyperParams


def main():
    ap = base_parser(__doc__, "results/privacy_table")
    ap.add_argument("--ldp-b", type=float, default=0.01)
    ap.add_argument("--models", nargs="+", default=["ppgm", "sgnn", "sgnn-ldp", "nodematch"])
    args = ap.parse_args()
    ds = setup(args)
    hyper = HyperParams(epochs=args.epochs)
    rows = []
    for family in args.models:
        h = hyper.with_(ldp_b=args.ldp_b) if family == "sgnn-ldp" else hyper
        rows += [run_one(ds, family, s, h) for s in args.seeds]
    print(write(args.out, "privacy_table", rows, mean_by(rows)), end="")


if __name__ == "__main__":
    main()
