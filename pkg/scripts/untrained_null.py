"""Task and attack AUC of freshly initialized models, i.e. what a random encoder already reveals.

    python3 scripts/untrained_null.py --seeds 0 1 2 3 4
"""

from common import base_parser, mean_by, setup, write

from ppgm import pipeline as P
from ppgm.attack import run_attack
from ppgm.model import HyperParams


def main():
    ap = base_parser(__doc__, "results/untrained_null")
    ap.add_argument("--models", nargs="+", default=["ppgm", "sgnn", "nodematch"])
    args = ap.parse_args()
    ds = setup(args)
    rows = []
    for family in args.models:
        for s in args.seeds:
            ckpt = P.new_checkpoint(family, HyperParams(), ds, s)
            rep = run_attack(ckpt, ds, "family", s, allow_untrained=True)
            rows.append({"model": family, "seed": s, "task_auc": P.evaluate_gsl(ckpt, ds, "test"),
                         "attack_val_auc": rep.val_auc, "attack_test_auc": rep.test_auc})
    print(write(args.out, "untrained_null", rows, mean_by(rows)), end="")


if __name__ == "__main__":
    main()
