"""Sweep the selection fraction delta against a traditional baseline on one synthetic corpus.

    python scripts/ablation_delta.py --out runs/delta --epochs 20
"""

from _common import make_corpus, parse_args, print_table, train_and_evaluate

DELTAS = (0.2, 0.5, 1.0)


def main() -> None:
    args = parse_args(__doc__.splitlines()[0], "ablation_delta")
    make_corpus(args.out, args.seed)
    base = {"epochs": args.epochs, "seed": args.seed}
    rows = [train_and_evaluate(args.out, "traditional", {**base, "mode": "traditional"})]
    for delta in DELTAS:
        rows.append(train_and_evaluate(args.out, f"delta_{delta}", {**base, "mode": "dynamic", "delta": delta}))
    print_table(rows)


if __name__ == "__main__":
    main()
