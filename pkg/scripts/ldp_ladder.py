"""SGNN with Laplace noise on the shared graph vector, over a ladder of noise scales.

b = 0 is plain SGNN. Shows how task AUC and attack AUC fall together.

    python3 scripts/ldp_ladder.py --b 0 0.002 0.005 0.01 0.02 0.05 0.1
"""

from common import base_parser, mean_by, run_one, setup, write

from ppgm.model import HyperParams


def main():
    ap = base_parser(__doc__, "results/ldp_ladder")
    ap.add_argument("--b", type=float, nargs="+", default=[0.0, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1])
    args = ap.parse_args()
    ds = setup(args)
    rows = []
    for b in args.b:
        family = "sgnn-ldp" if b > 0 else "sgnn"
        rows += [run_one(ds, family, s, HyperParams(epochs=args.epochs, ldp_b=b), label=f"b={b:g}") for s in args.seeds]
    print(write(args.out, "ldp_ladder", rows, mean_by(rows)), end="")


if __name__ == "__main__":
    main()
