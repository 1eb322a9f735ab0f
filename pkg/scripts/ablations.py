"""PPGM with each privacy component removed in turn.

    python3 scripts/ablations.py --seeds 0 1 2
"""

from common import base_parser, mean_by, run_one, setup, write

from ppgm.model import HyperParams

VARIANTS = {"ppgm": {}, "no-obf": {"no_obfuscation": True}, "no-ctx": {"no_context_codes": True},
            "no-ngm": {"no_ng_matching": True}}


def main():
    ap = base_parser(__doc__, "results/ablations")
    args = ap.parse_args()
    ds = setup(args)
    hyper = HyperParams(epochs=args.epochs)
    rows = [run_one(ds, "ppgm", s, hyper.with_(**flags), label=name) for name, flags in VARIANTS.items() for s in args.seeds]
    print(write(args.out, "ablations", rows, mean_by(rows)), end="")


if __name__ == "__main__":
    main()
