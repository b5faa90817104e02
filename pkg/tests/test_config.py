import pytest

from cornerquant.config import RunConfig, load_config, parse_triplet
from cornerquant.errors import ConfigError


def test_defaults():
    cfg = load_config()
    assert cfg == RunConfig()
    assert cfg.calib.act.clip_ratio == 0.9 and cfg.eval.weight.clip_ratio == 1.0
    assert cfg.eval.triplets == ("4-4-16", "4-4-4")
    assert cfg.model_config().seed == cfg.seed == 0
    assert "seed" not in cfg.to_dict()["model"]
    assert load_config(text="") == cfg


def test_overrides_and_derived_seeds():
    cfg = load_config(text="seed: 9\nmodel: {d_model: 32, n_heads: 2}\ncalib: {mode: offline, kv: {bits: 8, granularity: grouped}}\n")
    assert cfg.model.d_model == 32 and cfg.model_config().seed == 9 and cfg.synthetic_spec().seed == 9
    assert cfg.calib.mode == "offline" and cfg.calib.kv.bits == 8
    assert cfg.calib.kv.to_spec(group_size=16).group_size == 16
    assert cfg.with_seed(4).model_config().seed == 4
    assert cfg.with_mode("quant-aware").calib.mode == "quant-aware"
    with pytest.raises(ConfigError):
        cfg.with_mode("int8")


@pytest.mark.parametrize("text", [
    "colour: red",
    "model: {d_model: 64, seed: 3}",
    "calib: {act: {bits: 4, rounding: floor}}",
    "calib: {mode: sgd}",
    "calib: {epochs: -1}",
    "calib: {batch_size: 100}",
    "calib: {act: {bits: 1}}",
    "eval: {triplets: [4-4]}",
    "eval: {triplets: 4-4-16}",
    "eval: {kv: {granularity: per_token}}",
    "eval: {act: {clip_ratio: 1.5}}",
    "outliers: {outlier_gain: 0.5}",
    "outliers: {outlier_channels: 64}",
    "data: {seq_len: many}",
    "data: {source: file}",
    "data: {source: file, path: missing.txt}",
    "rotation_init: nowhere.crrs",
    "pr: {grid: 1}",
    "model: {n_heads: true}",
    "model: [1, 2]",
    "seed: [",
])
def test_invalid_configs_fail_closed(text):
    with pytest.raises(ConfigError):
        load_config(text=text)


def test_relative_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "corpus.txt").write_bytes(b"x" * 100)
    (tmp_path / "run.yaml").write_text("data: {source: file, path: corpus.txt}\n")
    cfg = load_config(tmp_path / "run.yaml")
    assert cfg.data.path == str(tmp_path / "corpus.txt")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


def test_parse_triplet():
    assert parse_triplet("4-4-16") == (4, 4, 16)
    assert parse_triplet("2-8-4") == (2, 8, 4)
    for bad in ("4-4", "4-4-17", "1-4-4", "a-b-c", 4):
        with pytest.raises(ConfigError):
            parse_triplet(bad)
