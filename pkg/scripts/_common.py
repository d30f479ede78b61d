"""Helpers shared by the experiment scripts: write configs, call the CLI, summarise metrics."""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
import yaml

from dynbatch.cli import main
from dynbatch.metrics import REGIONS, read_metrics_csv
from dynbatch.scheduler import read_ledger_csv

GENERATOR = {
    "n_samples": 12,
    "depth": 8,
    "height": 12,
    "width": 12,
    "seed": 0,
    "label_permutation": 2,
    "rare_class_absent": 2,
    "tiny_region": 1,
}


def parse_args(description: str, default_out: str, epochs: int = 20) -> argparse.Namespace:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--out", type=Path, default=Path("runs") / default_out)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=epochs)
    return p.parse_args()


def run(*argv: str) -> None:
    code = main([str(a) for a in argv])
    if code:
        raise SystemExit(f"dynbatch {argv[0]} failed with exit code {code}")


def make_corpus(out: Path, seed: int) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    cfg = out / "gen.yaml"
    cfg.write_text(yaml.safe_dump({"generator": {**GENERATOR, "seed": seed}}))
    run("gen-corpus", "--config", cfg, "--out", out / "corpus")
    return out / "corpus"


def train_and_evaluate(out: Path, name: str, train: dict, loss: dict | None = None) -> dict:
    run_dir = out / name
    run_dir.mkdir(parents=True, exist_ok=True)
    doc = {"corpus": {"path": "../corpus"}, "model": {"hidden": 16}, "train": {"batch_size": 4, **train}}
    if loss:
        doc["loss"] = loss
    cfg = run_dir / "run.yaml"
    cfg.write_text(yaml.safe_dump(doc))
    run("train", "--config", cfg, "--out", run_dir)
    run("evaluate", "--checkpoint", run_dir / "checkpoint.bin", "--corpus", out / "corpus", "--out", run_dir / "metrics.csv")
    scores = read_metrics_csv(run_dir / "metrics.csv")
    ledger = read_ledger_csv(run_dir / "ledger.csv")
    row = {"run": name, "trainings": sum(e.train_count for e in ledger)}
    for r in REGIONS:
        row[f"dice_{r}"] = float(np.mean([s[r].dice for s in scores.values()]))
        row[f"hd95_{r}"] = float(np.mean([s[r].hd95 for s in scores.values()]))
    return row


def print_table(rows: list[dict]) -> None:
    cols = list(rows[0])
    print("  ".join(f"{c:>12}" for c in cols))
    for row in rows:
        print("  ".join(f"{v:>12.4f}" if isinstance(v, float) else f"{v!s:>12}" for v in row.values()))
