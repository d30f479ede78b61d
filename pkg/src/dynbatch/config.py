"""YAML run configuration with strict key checking.

Sections: ``generator``, ``corpus``, ``model``, ``train``, ``loss``,
``report``. Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import GeneratorSpec
from .losses import LossConfig
from .scheduler import TrainConfig


class ConfigError(ValueError):
    pass


# section -> (required keys, optional keys)
_SCHEMA = {
    "generator": (
        {"n_samples", "depth", "height", "width", "seed"},
        {"modalities", "noise", "heavy_noise_factor", "label_permutation", "rare_class_absent",
         "tiny_region", "heavy_noise"},
    ),
    "corpus": ({"path"}, {"foreground_threshold"}),
    "model": (set(), {"hidden"}),
    "train": ({"mode", "epochs", "seed"}, {"delta", "batch_size", "lr", "beta1", "beta2", "adam_eps"}),
    "loss": (set(), {"variant", "gamma", "alpha_fg", "alpha_bg", "c_weight", "epsilon"}),
    "report": (set(), {"top_k"}),
}


@dataclass
class RunConfig:
    base_dir: Path
    generator: GeneratorSpec | None = None
    corpus_path: Path | None = None
    foreground_threshold: float = 0.0
    hidden: int = 16
    train: TrainConfig | None = None
    top_k: int = 10
    raw: dict = field(default_factory=dict, repr=False)

    def require(self, *sections: str) -> None:
        missing = [s for s in sections if s not in self.raw]
        if missing:
            raise ConfigError(f"config lacks required section(s): {', '.join(missing)}")


def _section(doc: dict, name: str) -> dict | None:
    if name not in doc:
        return None
    sec = doc[name]
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    required, optional = _SCHEMA[name]
    unknown = set(sec) - required - optional
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(sorted(unknown))}")
    missing = required - set(sec)
    if missing:
        raise ConfigError(f"missing key(s) in {name}: {', '.join(sorted(missing))}")
    return sec


def parse_config(doc, base_dir=".") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping of sections")
    unknown = set(doc) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    cfg = RunConfig(base_dir=Path(base_dir), raw=doc)
    try:
        if (g := _section(doc, "generator")) is not None:
            cfg.generator = GeneratorSpec(**g)
            cfg.generator.validate()
        if (c := _section(doc, "corpus")) is not None:
            p = Path(c["path"])
            cfg.corpus_path = p if p.is_absolute() else cfg.base_dir / p
            cfg.foreground_threshold = float(c.get("foreground_threshold", 0.0))
        if (m := _section(doc, "model")) is not None:
            cfg.hidden = int(m.get("hidden", cfg.hidden))
            if cfg.hidden < 1:
                raise ConfigError("model.hidden must be >= 1")
        loss_sec = _section(doc, "loss")
        loss = LossConfig(**(loss_sec or {}))
        if (t := _section(doc, "train")) is not None:
            cfg.train = TrainConfig(loss=loss, **t)
        if (r := _section(doc, "report")) is not None:
            cfg.top_k = int(r.get("top_k", cfg.top_k))
            if cfg.top_k < 1:
                raise ConfigError("report.top_k must be >= 1")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return parse_config(doc, base_dir=path.parent)
