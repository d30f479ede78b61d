"""Relate per-patient train counts to per-patient dice after dynamic training.

Trains with delta=0.2 for 50 epochs, writes the two scatter files through the
``report`` command, and prints the rank correlation between count and dice
along with where the injected hard samples land.

    python scripts/scatter_analysis.py --out runs/scatter
"""

import csv

import yaml
from scipy.stats import spearmanr

from _common import make_corpus, parse_args, run, train_and_evaluate


def _column(path, key):
    with open(path, newline="") as fh:
        return {r["patient_id"]: float(r[key]) for r in csv.DictReader(fh)}


def main() -> None:
    args = parse_args(__doc__.splitlines()[0], "scatter", epochs=50)
    corpus = make_corpus(args.out, args.seed)
    train_and_evaluate(args.out, "dynamic", {"mode": "dynamic", "delta": 0.2, "epochs": args.epochs, "seed": args.seed})
    run_dir = args.out / "dynamic"
    run("report", "--ledger", run_dir / "ledger.csv", "--metrics", run_dir / "metrics.csv", "--out", args.out / "report")

    counts = _column(args.out / "report" / "pid_vs_count.csv", "train_count_sum")
    dice = _column(args.out / "report" / "pid_vs_dice.csv", "avg_dice")
    pids = sorted(counts)
    rho, pval = spearmanr([counts[p] for p in pids], [dice[p] for p in pids])
    injected = yaml.safe_load((corpus / "manifest.json").read_text())["generator"]["injections"]

    print(f"{'patient':>8}  {'count':>6}  {'avg_dice':>8}  injection")
    for pid in sorted(pids, key=lambda p: (-counts[p], p)):
        print(f"{pid:>8}  {counts[pid]:>6.0f}  {dice[pid]:>8.2f}  {injected.get(pid, '')}")
    print(f"spearman(count, avg_dice) = {rho:.3f} (p = {pval:.3g})")


if __name__ == "__main__":
    main()
