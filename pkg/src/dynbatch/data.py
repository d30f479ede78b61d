"""Corpus representation, raw on-disk format, synthetic generator, preprocessing.

Label convention follows BraTS: 0 background, 1 NET/NCR, 2 edema, 4 enhancing
tumour. One-hot channels are ordered (background, NET/NCR, ED, ET).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .numerics import Rng, ShapeError, make_rng

LABEL_VALUES = (0, 1, 2, 4)
N_CLASSES = len(LABEL_VALUES)
MANIFEST_VERSION = 1
DEFAULT_MODALITIES = ("FLAIR", "T1CE", "T2")
INJECTION_KINDS = ("label_permutation", "rare_class_absent", "tiny_region", "heavy_noise")


class DataError(ValueError):
    pass


class GeneratorError(ValueError):
    pass


@dataclass
class VolumeSample:
    patient_id: str
    input: np.ndarray  # [D, H, W, C_in]
    labels: np.ndarray  # [D, H, W], values in LABEL_VALUES

    def __post_init__(self):
        if self.input.ndim != 4 or min(self.input.shape) < 1:
            raise ShapeError(f"{self.patient_id}: input must be [D,H,W,C], got {self.input.shape}")
        if self.labels.shape != self.input.shape[:3]:
            raise ShapeError(
                f"{self.patient_id}: labels {self.labels.shape} do not match input {self.input.shape[:3]}"
            )

    @property
    def depth(self) -> int:
        return self.input.shape[0]


@dataclass
class BatchUnit:
    batch_id: int
    patient_id: str
    slice_range: tuple[int, int]
    input: np.ndarray  # [d, H, W, C_in]
    target: np.ndarray  # [d, H, W, K] one-hot


@dataclass
class SampleEntry:
    patient_id: str
    dims: list[int]  # [D, H, W, C_in]
    modalities: list[str]
    input_path: str
    labels_path: str


@dataclass
class CorpusManifest:
    samples: list[SampleEntry]
    generator: dict | None = None
    version: int = MANIFEST_VERSION

    def to_json(self) -> str:
        doc = {"version": self.version, "samples": [asdict(s) for s in self.samples]}
        if self.generator is not None:
            doc["generator"] = self.generator
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CorpusManifest":
        try:
            doc = json.loads(text)
            samples = [SampleEntry(**s) for s in doc["samples"]]
            version = int(doc["version"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed manifest: {exc}") from exc
        if version != MANIFEST_VERSION:
            raise DataError(f"unsupported manifest version {version}")
        return cls(samples=samples, generator=doc.get("generator"), version=version)

    @property
    def hard_ids(self) -> list[str]:
        return list((self.generator or {}).get("hard_ids", []))


# --------------------------------------------------------------------------
# preprocessing


class ZScored(NamedTuple):
    volume: np.ndarray
    degenerate: bool


def zscore_normalize(volume, foreground_threshold: float = 0.0) -> ZScored:
    """Standardise voxels above ``foreground_threshold``; others are left as is.

    Uses the population standard deviation. An empty foreground gives the
    volume back with ``degenerate=True``; a constant foreground is shifted to
    zero without scaling.
    """
    vol = np.array(volume, dtype=np.float64, copy=True)
    if not np.all(np.isfinite(vol)):
        raise DataError("volume contains non-finite values")
    fg = vol > foreground_threshold
    if not fg.any():
        return ZScored(vol, True)
    values = vol[fg]
    mean = values.mean()
    std = values.std()
    # spread at rounding level counts as constant
    if std <= 1e-12 * max(1.0, abs(mean)):
        vol[fg] = values - mean
        return ZScored(vol, True)
    vol[fg] = (values - mean) / std
    return ZScored(vol, False)


def one_hot(labels) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros(labels.shape + (N_CLASSES,), dtype=np.float64)
    known = np.zeros(labels.shape, dtype=bool)
    for ch, value in enumerate(LABEL_VALUES):
        hit = labels == value
        out[..., ch] = hit
        known |= hit
    if not known.all():
        idx = tuple(int(i) for i in np.argwhere(~known)[0])
        raise DataError(f"unknown label value {labels[idx]!r} at voxel {idx}")
    return out


def labels_from_channels(channel_index) -> np.ndarray:
    """Map channel indices (e.g. an argmax) back to label values."""
    return np.asarray(LABEL_VALUES, dtype=np.uint8)[np.asarray(channel_index)]


def stack_modalities(volumes: Sequence) -> np.ndarray:
    if len(volumes) == 0:
        raise ShapeError("need at least one modality")
    arrays = [np.asarray(v, dtype=np.float64) for v in volumes]
    first = arrays[0].shape
    for k, a in enumerate(arrays[1:], start=1):
        if a.shape != first:
            raise ShapeError(f"modality {k} has dims {a.shape}, expected {first}")
    return np.stack(arrays, axis=-1)


def partition_batches(sample: VolumeSample, batch_size: int, first_batch_id: int = 0) -> list[BatchUnit]:
    """Split a sample into contiguous slabs of ``batch_size`` slices."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    target = one_hot(sample.labels)
    units = []
    for k, start in enumerate(range(0, sample.depth, batch_size)):
        end = min(start + batch_size, sample.depth)
        units.append(
            BatchUnit(
                batch_id=first_batch_id + k,
                patient_id=sample.patient_id,
                slice_range=(start, end),
                input=sample.input[start:end],
                target=target[start:end],
            )
        )
    return units


def preprocess_sample(sample: VolumeSample, foreground_threshold: float = 0.0) -> VolumeSample:
    """Z-score every modality channel independently."""
    channels = [
        zscore_normalize(sample.input[..., c], foreground_threshold).volume
        for c in range(sample.input.shape[-1])
    ]
    return VolumeSample(sample.patient_id, stack_modalities(channels), sample.labels)


def build_batches(samples: Sequence[VolumeSample], batch_size: int) -> list[BatchUnit]:
    """Freeze the batch partition of a corpus; ids are assigned in sample order."""
    batches: list[BatchUnit] = []
    for s in samples:
        batches.extend(partition_batches(s, batch_size, first_batch_id=len(batches)))
    return batches


# --------------------------------------------------------------------------
# synthetic corpus

# mean intensity per tissue for each modality; rows: healthy, NCR, ED, ET
_SIGNATURES = {
    "FLAIR": (1.0, 1.4, 2.2, 1.6),
    "T1CE": (1.0, 0.6, 1.0, 2.4),
    "T2": (1.0, 2.0, 1.8, 1.2),
    "T1": (1.0, 0.7, 0.8, 1.1),
}


@dataclass
class GeneratorSpec:
    n_samples: int = 12
    depth: int = 4
    height: int = 8
    width: int = 8
    modalities: tuple[str, ...] = DEFAULT_MODALITIES
    noise: float = 0.1
    heavy_noise_factor: float = 5.0
    # number of samples receiving each injection; samples are disjoint
    label_permutation: int = 0
    rare_class_absent: int = 0
    tiny_region: int = 0
    heavy_noise: int = 0
    seed: int = 0
    injections: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.modalities = tuple(self.modalities)
        self.injections = {k: int(getattr(self, k)) for k in INJECTION_KINDS}

    def validate(self) -> None:
        if self.n_samples < 1:
            raise GeneratorError("n_samples must be >= 1")
        if self.depth < 1:
            raise GeneratorError("depth must be >= 1")
        if self.height < 5 or self.width < 5:
            raise GeneratorError(
                f"in-plane dims {self.height}x{self.width} too small for nested tumour regions (need >= 5x5)"
            )
        if not self.modalities:
            raise GeneratorError("at least one modality required")
        unknown = [m for m in self.modalities if m not in _SIGNATURES]
        if unknown:
            raise GeneratorError(f"no intensity signature for modalities {unknown}")
        if self.noise < 0 or self.heavy_noise_factor < 1:
            raise GeneratorError("noise must be >= 0 and heavy_noise_factor >= 1")
        counts = self.injections
        if any(v < 0 for v in counts.values()):
            raise GeneratorError("injection counts must be >= 0")
        if sum(counts.values()) > self.n_samples:
            raise GeneratorError(
                f"{sum(counts.values())} injections requested for {self.n_samples} samples"
            )


def _tumour_labels(shape, rng: Rng, tiny: bool) -> np.ndarray:
    D, H, W = shape
    cz = int(rng.integers(0, D))
    cy = int(rng.integers(2, H - 2))
    cx = int(rng.integers(2, W - 2))
    if tiny:
        rz = ry = rx = 1.2
    else:
        ry = rng.uniform(2.0, max(2.0, (H - 1) / 3.0))
        rx = rng.uniform(2.0, max(2.0, (W - 1) / 3.0))
        rz = rng.uniform(1.0, max(1.0, D / 3.0))
    z, y, x = np.meshgrid(np.arange(D), np.arange(H), np.arange(W), indexing="ij")
    rho = np.sqrt(((z - cz) / rz) ** 2 + ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2)
    labels = np.zeros(shape, dtype=np.uint8)
    labels[rho <= 1.0] = 2
    labels[rho <= 0.65] = 4
    labels[rho <= 0.35] = 1
    return labels


def _brain_mask(shape) -> np.ndarray:
    D, H, W = shape
    y, x = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    ry, rx = H / 2.0, W / 2.0
    inside = ((y + 0.5 - ry) / ry) ** 2 + ((x + 0.5 - rx) / rx) ** 2 <= 1.0
    return np.broadcast_to(inside, shape).copy()


def _render(labels: np.ndarray, brain: np.ndarray, modalities, noise: float, rng: Rng) -> np.ndarray:
    tissue = np.zeros(labels.shape, dtype=np.intp)  # 0 healthy
    for row, value in ((1, 1), (2, 2), (3, 4)):
        tissue[labels == value] = row
    gain = rng.uniform(0.8, 1.2)
    chans = []
    for m in modalities:
        sig = np.asarray(_SIGNATURES[m])
        vol = gain * sig[tissue] + noise * rng.standard_normal(labels.shape)
        vol = np.maximum(vol, 0.05)
        vol[~brain] = 0.0
        chans.append(vol)
    # round-trip through float32 so in-memory samples equal what is written
    return np.stack(chans, axis=-1).astype(np.float32).astype(np.float64)


def generate_synthetic_corpus(spec: GeneratorSpec, rng: Rng | None = None) -> tuple[CorpusManifest, list[VolumeSample]]:
    """Build an in-memory corpus; pure in (spec, seed).

    Injections are assigned to distinct, randomly chosen samples:

    * ``label_permutation`` shuffles the label voxels, so labels no longer
      follow the image content;
    * ``rare_class_absent`` relabels enhancing tumour as NET/NCR;
    * ``tiny_region`` shrinks the tumour to a couple of voxels;
    * ``heavy_noise`` multiplies the intensity noise.
    """
    spec.validate()
    rng = make_rng(spec.seed) if rng is None else rng
    shape = (spec.depth, spec.height, spec.width)
    order = rng.permutation(spec.n_samples)
    kind_of: dict[int, str] = {}
    pos = 0
    for kind in INJECTION_KINDS:
        for _ in range(spec.injections[kind]):
            kind_of[int(order[pos])] = kind
            pos += 1

    brain = _brain_mask(shape)
    samples = []
    injections: dict[str, str] = {}
    for i in range(spec.n_samples):
        pid = f"P{i:03d}"
        kind = kind_of.get(i)
        labels = _tumour_labels(shape, rng, tiny=kind == "tiny_region")
        labels[~brain] = 0
        noise = spec.noise * (spec.heavy_noise_factor if kind == "heavy_noise" else 1.0)
        image = _render(labels, brain, spec.modalities, noise, rng)
        if kind == "rare_class_absent":
            labels[labels == 4] = 1
        elif kind == "label_permutation":
            labels = rng.permutation(labels.reshape(-1)).reshape(shape).astype(np.uint8)
        if kind is not None:
            injections[pid] = kind
        samples.append(VolumeSample(pid, image, labels))
    generator = {
        "seed": spec.seed,
        "hard_ids": sorted(injections),
        "injections": dict(sorted(injections.items())),
    }
    return manifest_for(samples, spec.modalities, generator), samples


def manifest_for(samples: Sequence[VolumeSample], modalities: Sequence[str], generator: dict | None = None) -> CorpusManifest:
    """Manifest with the standard ``<pid>/input.raw`` layout for in-memory samples."""
    entries = []
    for s in samples:
        if s.input.shape[-1] != len(modalities):
            raise DataError(f"{s.patient_id}: {s.input.shape[-1]} channels for {len(modalities)} modalities")
        entries.append(
            SampleEntry(
                patient_id=s.patient_id,
                dims=list(s.input.shape),
                modalities=list(modalities),
                input_path=f"{s.patient_id}/input.raw",
                labels_path=f"{s.patient_id}/labels.raw",
            )
        )
    return CorpusManifest(entries, generator)


# --------------------------------------------------------------------------
# raw files


def write_corpus(out_dir, manifest: CorpusManifest, samples: Sequence[VolumeSample]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for entry, sample in zip(manifest.samples, samples):
        ip, lp = out / entry.input_path, out / entry.labels_path
        ip.parent.mkdir(parents=True, exist_ok=True)
        lp.parent.mkdir(parents=True, exist_ok=True)
        ip.write_bytes(np.ascontiguousarray(sample.input, dtype="<f4").tobytes())
        lp.write_bytes(np.ascontiguousarray(sample.labels, dtype=np.uint8).tobytes())
    tmp = out / "manifest.json.tmp"
    tmp.write_text(manifest.to_json(), encoding="utf-8", newline="\n")
    os.replace(tmp, out / "manifest.json")


def load_manifest(corpus_dir) -> CorpusManifest:
    path = Path(corpus_dir) / "manifest.json"
    if not path.is_file():
        raise DataError(f"no manifest.json in {corpus_dir}")
    return CorpusManifest.from_json(path.read_text(encoding="utf-8"))


def load_corpus(corpus_dir) -> tuple[CorpusManifest, list[VolumeSample]]:
    """Read and validate every sample listed in the manifest."""
    root = Path(corpus_dir)
    manifest = load_manifest(root)
    samples = []
    for e in manifest.samples:
        if len(e.dims) != 4 or any(int(d) < 1 for d in e.dims):
            raise DataError(f"{e.patient_id}: bad dims {e.dims}")
        if len(e.modalities) != e.dims[3]:
            raise DataError(f"{e.patient_id}: {len(e.modalities)} modalities for {e.dims[3]} channels")
        n_in = math.prod(e.dims)
        n_lab = math.prod(e.dims[:3])
        ip, lp = root / e.input_path, root / e.labels_path
        for p, nbytes in ((ip, 4 * n_in), (lp, n_lab)):
            if not p.is_file():
                raise DataError(f"{e.patient_id}: missing file {p}")
            if p.stat().st_size != nbytes:
                raise DataError(f"{e.patient_id}: {p.name} has {p.stat().st_size} bytes, expected {nbytes}")
        image = np.frombuffer(ip.read_bytes(), dtype="<f4").astype(np.float64).reshape(e.dims)
        labels = np.frombuffer(lp.read_bytes(), dtype=np.uint8).reshape(e.dims[:3]).copy()
        bad = ~np.isin(labels, LABEL_VALUES)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise DataError(f"{e.patient_id}: invalid label {labels[idx]} at voxel {idx}")
        samples.append(VolumeSample(e.patient_id, image, labels))
    return manifest, samples
