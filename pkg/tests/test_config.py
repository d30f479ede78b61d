import pytest

from dynbatch.config import ConfigError, load_config, parse_config

BASE = {
    "corpus": {"path": "corpus"},
    "train": {"mode": "dynamic", "epochs": 4, "seed": 3, "delta": 0.5, "batch_size": 2},
}


def test_minimal_train_config(tmp_path):
    cfg = parse_config(BASE, tmp_path)
    assert cfg.corpus_path == tmp_path / "corpus"
    assert cfg.train.delta == 0.5 and cfg.train.loss.variant == "hybrid_focal"
    assert cfg.hidden == 16 and cfg.generator is None


def test_loss_section_flows_into_train(tmp_path):
    cfg = parse_config({**BASE, "loss": {"variant": "mean_fp_focal", "gamma": 1.5}}, tmp_path)
    assert cfg.train.loss.variant == "mean_fp_focal" and cfg.train.loss.gamma == 1.5


def test_absolute_corpus_path_kept(tmp_path):
    cfg = parse_config({"corpus": {"path": "/data/c"}}, tmp_path)
    assert str(cfg.corpus_path) == "/data/c"


@pytest.mark.parametrize(
    "doc,match",
    [
        ({**BASE, "extra": {}}, "unknown section"),
        ({**BASE, "train": {**BASE["train"], "momentum": 0.9}}, "unknown key.*momentum"),
        ({"train": {"mode": "dynamic", "epochs": 2}}, "missing key.*seed"),
        ({"generator": {"n_samples": 3, "depth": 2, "height": 8, "width": 8}}, "missing key.*seed"),
        ({**BASE, "train": {**BASE["train"], "delta": 1.5}}, "delta"),
        ({**BASE, "train": {**BASE["train"], "epochs": 0}}, "epochs"),
        ({**BASE, "train": {**BASE["train"], "epochs": 2.5}}, "epochs"),
        ({**BASE, "loss": {"variant": "dice"}}, "variant"),
        ({**BASE, "loss": {"alpha_fg": 2.0}}, "alpha"),
        ({"model": {"hidden": 0}}, "hidden"),
        ({"report": {"top_k": 0}}, "top_k"),
        ({"generator": {"n_samples": 3, "depth": 2, "height": 3, "width": 8, "seed": 0}}, "too small"),
        ({"train": [1, 2]}, "mapping"),
        ([1, 2], "mapping"),
    ],
)
def test_rejects(doc, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(doc)


def test_require_sections(tmp_path):
    cfg = parse_config({"corpus": {"path": "x"}}, tmp_path)
    with pytest.raises(ConfigError, match="train"):
        cfg.require("corpus", "train")


def test_load_yaml(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text("generator:\n  n_samples: 4\n  depth: 2\n  height: 8\n  width: 8\n  seed: 1\n  label_permutation: 1\n")
    cfg = load_config(p)
    assert cfg.generator.n_samples == 4 and cfg.generator.injections["label_permutation"] == 1


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: [unclosed\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(bad)
