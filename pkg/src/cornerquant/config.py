"""Run configuration: a YAML file mapped onto nested dataclasses.

Every section is optional and falls back to the toy defaults. Unknown keys,
wrong types and out-of-range values raise :class:`ConfigError`.

Grammar (all keys shown with their defaults)::

    seed: 0                      # model weights, outlier recipe, data, Hadamard init
    output_dir: runs/default
    model:
      d_model: 64
      n_heads: 4
      n_layers: 2
      d_ffn: 128
      vocab: 256
      rope_base: 10000.0
    outliers:                    # weight perturbation applied to the model
      base_scale: 1.0
      outlier_channels: 4
      outlier_gain: 20.0
    data:
      source: synthetic          # or "file"
      path: null                 # raw text, byte-level tokens (source: file)
      n_sequences: 64
      seq_len: 128
      heldout_sequences: 16
    calib:
      batch_size: 2
      mode: fp                   # fp | quant-aware | offline
      epochs: 1                  # 0 keeps the initial rotations
      act: {bits: 4, mode: zeropoint, granularity: per_token, clip_ratio: 0.9}
      kv: null                   # quant-aware only, e.g. {bits: 4, granularity: grouped}
    rotation_init: hadamard      # identity | hadamard | path to a CRRS file
    eval:
      triplets: ["4-4-16", "4-4-4"]
      weight: {mode: symmetric, granularity: per_token, clip_ratio: 1.0}
      act: {mode: zeropoint, granularity: per_token, clip_ratio: 0.9}
      kv: {mode: zeropoint, granularity: grouped, clip_ratio: 1.0}
      batch_size: 8
    pr:
      grid: 101

A quantizer mapping takes ``bits``, ``mode``, ``granularity``, ``group_size``
and ``clip_ratio``. Under ``eval`` the bit widths come from each ``W-A-KV``
triplet; a width of 16 leaves that tensor unquantized. A grouped KV quantizer
without ``group_size`` uses one group per head.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError, InvalidInputError, InvalidSpecError
from .quantizers import QuantizerSpec
from .synthetic import SyntheticSpec
from .toy_transformer import ModelConfig

__all__ = ["QuantSection", "DataSection", "CalibSection", "EvalSection", "RunConfig", "load_config", "parse_triplet"]

CALIB_MODES = ("fp", "quant-aware", "offline")
FP_BITS = 16


@dataclass(frozen=True)
class QuantSection:
    bits: int = 4
    mode: str = "zeropoint"
    granularity: str = "per_token"
    group_size: int | None = None
    clip_ratio: float = 1.0

    def to_spec(self, bits: int | None = None, group_size: int | None = None) -> QuantizerSpec:
        return QuantizerSpec(
            bits=self.bits if bits is None else bits,
            mode=self.mode,
            granularity=self.granularity,
            group_size=self.group_size if self.group_size is not None else group_size,
            clip_ratio=self.clip_ratio,
        )


@dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"
    path: str | None = None
    n_sequences: int = 64
    seq_len: int = 128
    heldout_sequences: int = 16


def _act_default():
    return QuantSection(clip_ratio=0.9)


@dataclass(frozen=True)
class CalibSection:
    batch_size: int = 2
    mode: str = "fp"
    epochs: int = 1
    act: QuantSection = field(default_factory=_act_default)
    kv: QuantSection | None = None


@dataclass(frozen=True)
class EvalSection:
    triplets: tuple[str, ...] = ("4-4-16", "4-4-4")
    weight: QuantSection = field(default_factory=lambda: QuantSection(mode="symmetric"))
    act: QuantSection = field(default_factory=_act_default)
    kv: QuantSection = field(default_factory=lambda: QuantSection(granularity="grouped"))
    batch_size: int = 8


@dataclass(frozen=True)
class PrSection:
    grid: int = 101


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    model: ModelConfig = field(default_factory=ModelConfig)
    outliers: SyntheticSpec = field(default_factory=SyntheticSpec)
    data: DataSection = field(default_factory=DataSection)
    calib: CalibSection = field(default_factory=CalibSection)
    rotation_init: str = "hadamard"
    eval: EvalSection = field(default_factory=EvalSection)
    pr: PrSection = field(default_factory=PrSection)

    # Seeds of the sub-components are derived from ``seed``; the config
    # sections for them do not carry their own.
    def model_config(self) -> ModelConfig:
        return dataclasses.replace(self.model, seed=self.seed)

    def synthetic_spec(self) -> SyntheticSpec:
        return dataclasses.replace(self.outliers, seed=self.seed)

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seed=seed)

    def with_mode(self, mode: str) -> "RunConfig":
        if mode not in CALIB_MODES:
            raise ConfigError(f"calib.mode must be one of {CALIB_MODES}, got {mode!r}")
        return dataclasses.replace(self, calib=dataclasses.replace(self.calib, mode=mode))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"].pop("seed")
        d["outliers"].pop("seed")
        d["eval"]["triplets"] = list(self.eval.triplets)
        return d


_SEEDLESS = {ModelConfig: "seed", SyntheticSpec: "seed"}


def _build(cls, raw, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls) if f.name != _SEEDLESS.get(cls)}
    unknown = sorted(set(raw) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, unknown))}")
    kwargs = {}
    for name, value in raw.items():
        kwargs[name] = _coerce(cls, names[name], value, f"{where}.{name}")
    try:
        return cls(**kwargs)
    except (InvalidInputError, InvalidSpecError, TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


_SECTIONS = {
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "outliers"): SyntheticSpec,
    (RunConfig, "data"): DataSection,
    (RunConfig, "calib"): CalibSection,
    (RunConfig, "eval"): EvalSection,
    (RunConfig, "pr"): PrSection,
    (CalibSection, "act"): QuantSection,
    (CalibSection, "kv"): QuantSection,
    (EvalSection, "weight"): QuantSection,
    (EvalSection, "act"): QuantSection,
    (EvalSection, "kv"): QuantSection,
}


def _coerce(owner, f: dataclasses.Field, value, where: str):
    sub = _SECTIONS.get((owner, f.name))
    if sub is not None:
        if value is None and owner is CalibSection and f.name == "kv":
            return None
        return _build(sub, value, where)
    if f.name == "triplets":
        if isinstance(value, str) or not isinstance(value, list) or not value:
            raise ConfigError(f"{where}: expected a non-empty list of W-A-KV strings")
        for t in value:
            parse_triplet(t)
        return tuple(value)
    default = f.default if f.default is not dataclasses.MISSING else None
    if value is None:
        if default is None:
            return None
        raise ConfigError(f"{where}: may not be null")
    if isinstance(default, bool) or isinstance(value, bool):
        raise ConfigError(f"{where}: booleans are not accepted here")
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, int) or f.name == "group_size":
        if not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, str) or f.name == "path":
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def parse_triplet(text) -> tuple[int, int, int]:
    """``"4-4-16"`` -> ``(4, 4, 16)``; every width must lie in ``2..16``."""
    if not isinstance(text, str):
        raise ConfigError(f"triplet must be a string like '4-4-16', got {text!r}")
    parts = text.split("-")
    try:
        bits = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"malformed triplet {text!r}") from None
    if len(bits) != 3 or any(not 2 <= b <= FP_BITS for b in bits):
        raise ConfigError(f"triplet {text!r} needs three bit widths in 2..{FP_BITS}")
    return bits


def _validate(cfg: RunConfig, base: Path) -> RunConfig:
    if cfg.calib.mode not in CALIB_MODES:
        raise ConfigError(f"calib.mode must be one of {CALIB_MODES}, got {cfg.calib.mode!r}")
    if cfg.data.source not in ("synthetic", "file"):
        raise ConfigError(f"data.source must be 'synthetic' or 'file', got {cfg.data.source!r}")
    if cfg.data.n_sequences < 1 or cfg.data.seq_len < 1 or cfg.data.heldout_sequences < 1:
        raise ConfigError("data sizes must be >= 1")
    if cfg.calib.batch_size < 1 or cfg.calib.batch_size > cfg.data.n_sequences:
        raise ConfigError("calib.batch_size must lie in [1, data.n_sequences]")
    if cfg.calib.epochs < 0:
        raise ConfigError("calib.epochs must be >= 0")
    if cfg.eval.batch_size < 1:
        raise ConfigError("eval.batch_size must be >= 1")
    if cfg.pr.grid < 2:
        raise ConfigError("pr.grid must be >= 2")
    for q in (cfg.calib.act, cfg.calib.kv):
        if q is not None and not 2 <= q.bits <= FP_BITS:
            raise ConfigError(f"quantizer bits must lie in 2..{FP_BITS}, got {q.bits}")
    try:
        cfg.synthetic_spec().validate(cfg.model_config())
    except InvalidInputError as e:
        raise ConfigError(f"outliers: {e}") from e
    d_head = cfg.model.d_head
    quants = {"calib.act": cfg.calib.act, "calib.kv": cfg.calib.kv, "eval.weight": cfg.eval.weight,
              "eval.act": cfg.eval.act, "eval.kv": cfg.eval.kv}
    for where, q in quants.items():
        if q is None:
            continue
        if where.endswith("kv") and q.granularity != "grouped":
            raise ConfigError(f"{where}: KV-cache quantizers must use granularity 'grouped'")
        try:
            q.to_spec(group_size=d_head if where.endswith("kv") else None)
        except (InvalidSpecError, InvalidInputError) as e:
            raise ConfigError(f"{where}: {e}") from e
    if cfg.data.source == "file":
        if not cfg.data.path:
            raise ConfigError("data.path is required when data.source is 'file'")
        cfg = dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, path=str(_resolve(base, cfg.data.path))))
        if not Path(cfg.data.path).is_file():
            raise ConfigError(f"data.path {cfg.data.path} does not exist")
    if cfg.rotation_init not in ("identity", "hadamard"):
        path = _resolve(base, cfg.rotation_init)
        if not path.is_file():
            raise ConfigError(f"rotation_init {cfg.rotation_init!r} is neither identity, hadamard nor an existing file")
        cfg = dataclasses.replace(cfg, rotation_init=str(path))
    return cfg


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def load_config(path=None, text: str | None = None) -> RunConfig:
    """Parse a config file (or ``text``); ``None`` for both gives the defaults.

    Relative paths inside the file are resolved against its directory.
    """
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        base = path.parent
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
    raw = {}
    if text is not None:
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML: {e}") from e
        if raw is None:
            raw = {}
    return _validate(_build(RunConfig, raw, "config"), base)
