"""Command-line entry point: gen-corpus, train, evaluate, report."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .data import DataError, VolumeSample, build_batches, generate_synthetic_corpus, load_corpus, preprocess_sample, write_corpus
from .metrics import evaluate_regions, fmt_float, mean_dice, read_metrics_csv, write_metrics_csv
from .model import TinySegNet, load_checkpoint, save_checkpoint
from .numerics import NumericError, ShapeError, make_rng
from .scheduler import (
    TrainingError,
    hard_sample_report,
    read_ledger_csv,
    train,
    write_ledger_csv,
)

log = logging.getLogger("dynbatch")

INIT_STREAM = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 1


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _evaluate(net: TinySegNet, samples: list[VolumeSample]) -> list[tuple[str, dict]]:
    out = []
    for s in samples:
        if s.input.shape[-1] != net.c_in:
            raise CliError(f"sample {s.patient_id}: {s.input.shape[-1]} channels, checkpoint expects {net.c_in}")
        out.append((s.patient_id, evaluate_regions(net.predict_labels(s.input), s.labels)))
    return out


def _load_prepared(corpus_dir, threshold: float) -> list[VolumeSample]:
    try:
        _, samples = load_corpus(corpus_dir)
    except (DataError, ShapeError, OSError) as exc:
        raise CliError(f"corpus {corpus_dir}: {exc}") from exc
    return [preprocess_sample(s, threshold) for s in samples]


# --------------------------------------------------------------------------
# commands


def cmd_gen_corpus(config: Path, out: Path) -> None:
    cfg = load_config(config)
    cfg.require("generator")
    manifest, samples = generate_synthetic_corpus(cfg.generator)
    try:
        write_corpus(out, manifest, samples)
    except OSError as exc:
        raise CliError(f"cannot write corpus to {out}: {exc}", EXIT_RUNTIME) from exc
    log.info("wrote %d samples to %s (hard ids: %s)", len(samples), out, manifest.hard_ids or "none")


def cmd_train(config: Path, out: Path) -> None:
    cfg: RunConfig = load_config(config)
    cfg.require("corpus", "train")
    tc = cfg.train
    samples = _load_prepared(cfg.corpus_path, cfg.foreground_threshold)
    if not samples:
        raise CliError("corpus has no samples")
    c_in = {s.input.shape[-1] for s in samples}
    if len(c_in) != 1:
        raise CliError(f"samples disagree on channel count: {sorted(c_in)}")
    batches = build_batches(samples, tc.batch_size)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out}: {exc}", EXIT_RUNTIME) from exc

    net = TinySegNet.initialized(c_in.pop(), cfg.hidden, make_rng(tc.seed, INIT_STREAM))
    ckpt_path = out / "checkpoint.bin"
    best = {"dice": -1.0}

    def on_checkpoint(model: TinySegNet, epoch: int):
        reports = _evaluate(model, samples)
        score = float(np.mean([mean_dice(r) for _, r in reports]))
        log.info("epoch %d: training mean dice %.4f", epoch, score)
        if score > best["dice"]:
            best.update(dice=score, epoch=epoch, params=model.params.copy())
            meta = {"epoch": epoch, "mean_dice": round(score, 12), "foreground_threshold": cfg.foreground_threshold}
            save_checkpoint(ckpt_path, model, meta)
            return {"epoch": epoch, "mean_dice": score}
        return None

    record = train(net, batches, tc, on_checkpoint)
    write_ledger_csv(out / "ledger.csv", record.ledger)
    _write_csv(out / "losses.csv", ("epoch", "mean_loss"),
               [(i + 1, f"{v:.6g}") for i, v in enumerate(record.epoch_losses)])

    best_net = TinySegNet(net.c_in, net.hidden, net.n_classes, params=best["params"])
    reports = _evaluate(best_net, samples)
    write_metrics_csv(out / "train_metrics.csv", reports)
    _write_scatter(out, record.ledger, {pid: r for pid, r in reports})
    log.info("trained %d batch steps; best mean dice %.4f at epoch %d",
             record.total_trainings, best["dice"], best["epoch"])


def _write_scatter(out: Path, ledger, reports: dict) -> None:
    rows = hard_sample_report(ledger)
    counts = {r.patient_id: r.train_count for r in rows}
    _write_csv(out / "pid_vs_count.csv", ("patient_id", "train_count_sum"),
               [(pid, counts[pid]) for pid in sorted(counts)])
    _write_csv(out / "pid_vs_dice.csv", ("patient_id", "avg_dice"),
               [(pid, fmt_float(100.0 * mean_dice(reports[pid]))) for pid in sorted(reports)])
    _write_csv(out / "hard_samples.csv", ("rank", "patient_id", "train_count_sum", "mean_last_loss"),
               [(i + 1, r.patient_id, r.train_count, fmt_float(r.mean_last_loss)) for i, r in enumerate(rows)])


def cmd_evaluate(checkpoint: Path, corpus: Path, out: Path) -> None:
    try:
        net, meta = load_checkpoint(checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"checkpoint {checkpoint}: {exc}") from exc
    samples = _load_prepared(corpus, float(meta.get("foreground_threshold", 0.0)))
    reports = _evaluate(net, samples)
    try:
        write_metrics_csv(out, reports)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_RUNTIME) from exc


def cmd_report(ledger_path: Path, metrics_path: Path, out: Path, top_k: int = 10) -> list:
    try:
        ledger = read_ledger_csv(ledger_path)
        metrics = read_metrics_csv(metrics_path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(str(exc)) from exc
    if not ledger:
        raise CliError(f"{ledger_path}: no ledger rows")
    ledger_ids = {e.patient_id for e in ledger}
    unmatched = sorted(ledger_ids ^ set(metrics))
    if unmatched:
        raise CliError(f"patient ids not present in both inputs: {', '.join(unmatched)}")
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_scatter(out, ledger, metrics)
    except OSError as exc:
        raise CliError(f"cannot write report to {out}: {exc}", EXIT_RUNTIME) from exc
    return hard_sample_report(ledger, top_k)


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynbatch", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="write a synthetic corpus")
    g.add_argument("--config", type=Path, required=True)
    g.add_argument("--out", type=Path, required=True)

    t = sub.add_parser("train", help="train and write checkpoint, ledger and scatter data")
    t.add_argument("--config", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True)

    e = sub.add_parser("evaluate", help="per-patient Dice/HD95 for a checkpoint")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--corpus", type=Path, required=True)
    e.add_argument("--out", type=Path, required=True)

    r = sub.add_parser("report", help="hard-sample ranking and scatter files")
    r.add_argument("--ledger", type=Path, required=True)
    r.add_argument("--metrics", type=Path, required=True)
    r.add_argument("--out", type=Path, required=True)
    r.add_argument("--top-k", type=int, default=10)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "gen-corpus":
            cmd_gen_corpus(args.config, args.out)
        elif args.command == "train":
            cmd_train(args.config, args.out)
        elif args.command == "evaluate":
            cmd_evaluate(args.checkpoint, args.corpus, args.out)
        elif args.command == "report":
            if args.top_k < 1:
                raise CliError("--top-k must be >= 1")
            for i, row in enumerate(cmd_report(args.ledger, args.metrics, args.out, args.top_k), 1):
                print(f"{i}\t{row.patient_id}\t{row.train_count}\t{row.mean_last_loss:.6g}")
    except (CliError, ConfigError) as exc:
        print(f"dynbatch {args.command}: {exc}", file=sys.stderr)
        return getattr(exc, "code", EXIT_USAGE)
    except (TrainingError, NumericError) as exc:
        print(f"dynbatch {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
