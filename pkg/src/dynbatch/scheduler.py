"""Per-batch loss ledger plus the traditional and dynamic training loops.

Dynamic training runs ``epochs // 2`` outer iterations. Each iteration makes
one shuffled pass over every batch, then ``floor(1/delta)`` rounds that sort
the ledger by descending last loss (ties: ascending batch id) and retrain the
first ``ceil(delta * N)`` batches. A batch's ledger loss is the loss of its
most recent forward pass, taken before that step's parameter update. An odd
epoch budget ends with one extra regular pass.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import BatchUnit
from .losses import LossConfig, compute_loss, loss_gradient
from .model import Adam, SegModel
from .numerics import Rng, make_rng

log = logging.getLogger(__name__)

LEDGER_HEADER = ("batch_id", "patient_id", "last_loss", "train_count")
# absorbs float noise such as 0.2 * 15 == 3.0000000000000004
_ROUND_TOL = 1e-9


class TrainingError(RuntimeError):
    pass


@dataclass
class LedgerEntry:
    batch_id: int
    patient_id: str
    last_loss: float | None = None
    train_count: int = 0


@dataclass
class TrainConfig:
    delta: float = 0.2
    epochs: int = 50
    batch_size: int = 64
    loss: LossConfig = field(default_factory=LossConfig)
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    mode: str = "dynamic"

    def __post_init__(self):
        for name in ("epochs", "batch_size", "seed"):
            if not isinstance(getattr(self, name), int) or isinstance(getattr(self, name), bool):
                raise TypeError(f"{name} must be an integer, got {getattr(self, name)!r}")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.mode not in ("traditional", "dynamic"):
            raise ValueError(f"mode must be 'traditional' or 'dynamic', got {self.mode!r}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")

    def optimizer(self) -> Adam:
        return Adam(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.adam_eps)


@dataclass
class TrainRecord:
    epoch_losses: list[float]
    ledger: list[LedgerEntry]
    total_trainings: int
    checkpoints: list[dict] = field(default_factory=list)


class Ledger:
    def __init__(self, batches: Sequence[BatchUnit]):
        ids = [b.batch_id for b in batches]
        if len(set(ids)) != len(ids):
            raise ValueError("batch ids must be unique")
        self.entries = {b.batch_id: LedgerEntry(b.batch_id, b.patient_id) for b in batches}

    def record(self, batch_id: int, loss: float) -> None:
        e = self.entries[batch_id]
        e.last_loss = loss
        e.train_count += 1

    def ranked(self) -> list[int]:
        """Batch ids by descending last loss, ascending id on ties; unseen batches last."""

        def key(e: LedgerEntry):
            seen = e.last_loss is not None
            return (not seen, -(e.last_loss if seen else 0.0), e.batch_id)

        return [e.batch_id for e in sorted(self.entries.values(), key=key)]

    def snapshot(self) -> list[LedgerEntry]:
        return [LedgerEntry(**vars(e)) for e in sorted(self.entries.values(), key=lambda e: e.batch_id)]


def selection_size(delta: float, n_batches: int) -> int:
    return min(n_batches, max(1, math.ceil(delta * n_batches - _ROUND_TOL)))


def n_rounds(delta: float) -> int:
    return max(1, math.floor(1.0 / delta + _ROUND_TOL))


def budget(delta: float, n_batches: int, epochs: int) -> int:
    """Number of batch-trainings dynamic_train performs."""
    outer = epochs // 2
    return outer * (n_batches + n_rounds(delta) * selection_size(delta, n_batches)) + (epochs % 2) * n_batches


def count_bounds(delta: float, epochs: int) -> tuple[int, int]:
    """(min, max) per-batch train count under dynamic_train; the odd extra pass adds one to both."""
    outer = epochs // 2
    extra = epochs % 2
    return outer + extra, outer * (1 + n_rounds(delta)) + extra


class _Trainer:
    def __init__(self, model: SegModel, batches: Sequence[BatchUnit], cfg: TrainConfig):
        if not batches:
            raise ValueError("no batches to train on")
        self.model = model
        self.batches = {b.batch_id: b for b in batches}
        self.order = [b.batch_id for b in batches]
        self.cfg = cfg
        self.opt = cfg.optimizer()
        self.rng: Rng = make_rng(cfg.seed)
        self.ledger = Ledger(batches)
        self.total = 0

    def step(self, batch_id: int) -> float:
        b = self.batches[batch_id]
        probs = self.model.forward(b.input)
        # a diverged model yields NaN probabilities, which the loss would reject as out of domain
        loss = compute_loss(b.target, probs, self.cfg.loss).total if np.isfinite(probs).all() else math.nan
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss} on batch {batch_id} (patient {b.patient_id})")
        grad = loss_gradient(b.target, probs, self.cfg.loss)
        self.opt.step(self.model.params, self.model.backward(b.input, grad))
        self.ledger.record(batch_id, loss)
        self.total += 1
        return loss

    def regular_pass(self) -> float:
        ids = [self.order[i] for i in self.rng.permutation(len(self.order))]
        return float(np.mean([self.step(i) for i in ids]))

    def record(self, epoch_losses, checkpoints) -> TrainRecord:
        return TrainRecord(epoch_losses, self.ledger.snapshot(), self.total, checkpoints)


CheckpointHook = Callable[[SegModel, int], "dict | None"]


def traditional_train(
    model: SegModel,
    batches: Sequence[BatchUnit],
    cfg: TrainConfig,
    on_checkpoint: CheckpointHook | None = None,
) -> TrainRecord:
    """Every batch once per epoch in a freshly shuffled order."""
    if cfg.mode != "traditional":
        raise ValueError(f"traditional_train called with mode={cfg.mode!r}")
    tr = _Trainer(model, batches, cfg)
    losses, checkpoints = [], []
    for epoch in range(cfg.epochs):
        losses.append(tr.regular_pass())
        log.info("epoch %d mean loss %.6g", epoch + 1, losses[-1])
        if on_checkpoint is not None:
            info = on_checkpoint(model, epoch + 1)
            if info:
                checkpoints.append(info)
    return tr.record(losses, checkpoints)


def dynamic_train(
    model: SegModel,
    batches: Sequence[BatchUnit],
    cfg: TrainConfig,
    on_checkpoint: CheckpointHook | None = None,
) -> TrainRecord:
    """Regular pass followed by loss-ranked retraining of the hardest batches.

    ``epoch_losses`` holds two entries per outer iteration: the regular pass
    mean and the mean over all dynamic rounds.
    """
    if cfg.mode != "dynamic":
        raise ValueError(f"dynamic_train called with mode={cfg.mode!r}")
    tr = _Trainer(model, batches, cfg)
    k = selection_size(cfg.delta, len(tr.order))
    rounds = n_rounds(cfg.delta)
    losses, checkpoints = [], []
    epoch = 0
    for _ in range(cfg.epochs // 2):
        losses.append(tr.regular_pass())
        dyn = []
        for _ in range(rounds):
            chosen = tr.ledger.ranked()[:k]
            dyn.extend(tr.step(i) for i in chosen)
        losses.append(float(np.mean(dyn)))
        epoch += 2
        log.info("epochs %d-%d: regular %.6g, dynamic %.6g", epoch - 1, epoch, losses[-2], losses[-1])
        if on_checkpoint is not None:
            info = on_checkpoint(model, epoch)
            if info:
                checkpoints.append(info)
    if cfg.epochs % 2:
        losses.append(tr.regular_pass())
        if on_checkpoint is not None:
            info = on_checkpoint(model, cfg.epochs)
            if info:
                checkpoints.append(info)
    return tr.record(losses, checkpoints)


def train(model: SegModel, batches: Sequence[BatchUnit], cfg: TrainConfig, on_checkpoint=None) -> TrainRecord:
    fn = dynamic_train if cfg.mode == "dynamic" else traditional_train
    return fn(model, batches, cfg, on_checkpoint)


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class HardSampleRow:
    patient_id: str
    train_count: int
    mean_last_loss: float


def hard_sample_report(ledger: Sequence[LedgerEntry], top_k: int | None = None) -> list[HardSampleRow]:
    """Per-patient totals ranked by count (desc), then patient id (asc).

    Returns all rows when ``top_k`` is None.
    """
    if not ledger:
        raise ValueError("empty ledger")
    if top_k is not None and top_k < 1:
        raise ValueError("top_k must be >= 1")
    counts: dict[str, int] = {}
    losses: dict[str, list[float]] = {}
    for e in ledger:
        counts[e.patient_id] = counts.get(e.patient_id, 0) + e.train_count
        if e.last_loss is not None:
            losses.setdefault(e.patient_id, []).append(e.last_loss)
    rows = [
        HardSampleRow(pid, counts[pid], float(np.mean(losses[pid])) if pid in losses else float("nan"))
        for pid in counts
    ]
    rows.sort(key=lambda r: (-r.train_count, r.patient_id))
    return rows if top_k is None else rows[:top_k]


def write_ledger_csv(path, ledger: Sequence[LedgerEntry]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_HEADER)
        for e in sorted(ledger, key=lambda e: e.batch_id):
            loss = "" if e.last_loss is None else f"{e.last_loss:.6g}"
            w.writerow([e.batch_id, e.patient_id, loss, e.train_count])


def read_ledger_csv(path) -> list[LedgerEntry]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LEDGER_HEADER:
            raise ValueError(f"{path}: expected header {','.join(LEDGER_HEADER)}")
        return [
            LedgerEntry(
                int(r["batch_id"]),
                r["patient_id"],
                float(r["last_loss"]) if r["last_loss"] else None,
                int(r["train_count"]),
            )
            for r in reader
        ]
