"""Sweep the false-positive weight C of the hybrid loss; mean-FP and plain focal as references.

    python scripts/ablation_c.py --out runs/c --epochs 20
"""

from _common import make_corpus, parse_args, print_table, train_and_evaluate

C_VALUES = (1.0, 5.0, 10.0, 20.0)


def main() -> None:
    args = parse_args(__doc__.splitlines()[0], "ablation_c")
    make_corpus(args.out, args.seed)
    train = {"mode": "dynamic", "delta": 0.2, "epochs": args.epochs, "seed": args.seed}
    rows = [train_and_evaluate(args.out, "focal", train, {"variant": "focal"})]
    for c in C_VALUES:
        rows.append(train_and_evaluate(args.out, f"hybrid_C{c:g}", train, {"variant": "hybrid_focal", "c_weight": c}))
    rows.append(train_and_evaluate(args.out, "mean_fp", train, {"variant": "mean_fp_focal"}))
    print_table(rows)


if __name__ == "__main__":
    main()
