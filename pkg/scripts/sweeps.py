"""Message-count sweep (m in 1..16) and training-length sweep (20..100 epochs) for PPGM.

    python3 scripts/sweeps.py --kind epochs --seeds 0
    python3 scripts/sweeps.py --kind m --seeds 0 1 2
"""

from common import base_parser, setup, write

from ppgm import pipeline as P
from ppgm.model import HyperParams


def main():
    ap = base_parser(__doc__, "results/sweeps")
    ap.add_argument("--kind", choices=["m", "epochs"], required=True)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    ds = setup(args)
    rows = P.sweep(ds, "ppgm", args.kind, args.seeds, HyperParams(epochs=args.epochs), jobs=args.jobs)
    print(write(args.out, f"sweep_{args.kind}", rows, P.summarize(rows)), end="")


if __name__ == "__main__":
    main()
