"""Synthetic calibration data and outlier-inducing weight perturbations.

Outliers are created by scaling weights rather than activations, so a model
perturbed this way produces self-consistent outlier channels in every
forward pass, quantized or not. A recipe scales

* the embedding columns and the output rows of ``Wo`` and ``W_down`` for a
  set of residual channels (outliers at the attention and MLP inputs),
* the output rows of ``Wv`` for a set of value channels (outliers at the
  output-projection input),
* the output rows of ``W_up`` for a set of hidden MLP channels (outliers at
  the down-projection input).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInputError
from .tensor_core import rng
from .toy_transformer import ModelConfig, ToyTransformer

__all__ = ["SyntheticSpec", "OutlierRecipe", "make_recipe", "apply_recipe", "synthetic_tokens", "pack_bytes"]

RECIPE_VERSION = 1


@dataclass(frozen=True)
class SyntheticSpec:
    base_scale: float = 1.0
    outlier_channels: int = 4
    outlier_gain: float = 20.0
    seed: int = 0

    def validate(self, cfg: ModelConfig):
        if self.outlier_channels < 0 or self.outlier_channels >= cfg.d_model:
            raise InvalidInputError("outlier_channels must lie in [0, d_model)")
        if self.outlier_gain < 1:
            raise InvalidInputError("outlier_gain must be >= 1")
        if self.base_scale <= 0:
            raise InvalidInputError("base_scale must be positive")


@dataclass(frozen=True)
class OutlierRecipe:
    base_scale: float
    gain: float
    residual_channels: tuple[int, ...]
    value_channels: tuple[int, ...]
    ffn_channels: tuple[int, ...]

    def to_json(self) -> str:
        d = asdict(self)
        d["version"] = RECIPE_VERSION
        for k in ("residual_channels", "value_channels", "ffn_channels"):
            d[k] = list(d[k])
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "OutlierRecipe":
        d = json.loads(text)
        if d.pop("version", None) != RECIPE_VERSION:
            raise InvalidInputError("unsupported recipe version")
        for k in ("residual_channels", "value_channels", "ffn_channels"):
            d[k] = tuple(int(c) for c in d[k])
        return cls(**d)

    @property
    def is_identity(self) -> bool:
        return self.base_scale == 1.0 and (self.gain == 1.0 or not self.residual_channels)


def make_recipe(spec: SyntheticSpec, cfg: ModelConfig) -> OutlierRecipe:
    spec.validate(cfg)
    g = rng([spec.seed, 7])
    k = spec.outlier_channels
    pick = lambda n: tuple(sorted(int(c) for c in g.choice(n, size=min(k, n), replace=False)))
    return OutlierRecipe(
        base_scale=float(spec.base_scale),
        gain=float(spec.outlier_gain),
        residual_channels=pick(cfg.d_model),
        value_channels=pick(cfg.d_model),
        ffn_channels=pick(cfg.d_ffn),
    )


def apply_recipe(model: ToyTransformer, recipe: OutlierRecipe) -> ToyTransformer:
    """Return a perturbed copy of an unfolded model."""
    m = model.copy()
    gain = recipe.gain
    res = list(recipe.residual_channels)
    m.embedding = m.embedding * recipe.base_scale
    m.embedding[:, res] *= gain
    for lw in m.layers:
        lw.wo[res, :] *= gain
        lw.w_down[res, :] *= gain
        lw.wv[list(recipe.value_channels), :] *= gain
        lw.w_up[list(recipe.ffn_channels), :] *= gain
    return m


def synthetic_tokens(n: int, t: int, seed: int, vocab: int = 256, language_seed: int = 0) -> np.ndarray:
    """``(n, t)`` byte tokens drawn i.i.d. from a fixed Zipf-like unigram distribution.

    ``language_seed`` fixes which tokens are frequent; ``seed`` only selects
    the sample, so calibration and held-out sets share a distribution.
    """
    p = 1.0 / np.arange(1, vocab + 1) ** 1.1
    p /= p.sum()
    perm = rng([language_seed, 13]).permutation(vocab)
    g = rng([seed, 11])
    return perm[g.choice(vocab, size=(n, t), p=p)].astype(np.int64)


def pack_bytes(raw: bytes, t: int, n: int | None = None) -> np.ndarray:
    """Byte-level tokenization: split ``raw`` into full sequences of length ``t``.

    A trailing partial sequence is dropped; ``n`` truncates to the first ``n``.
    """
    if t < 1:
        raise InvalidInputError("sequence length must be >= 1")
    arr = np.frombuffer(raw, dtype=np.uint8)
    count = arr.size // t
    if n is not None:
        count = min(count, n)
    if count == 0:
        raise InvalidInputError(f"need at least {t} bytes to form one sequence")
    return arr[: count * t].reshape(count, t).astype(np.int64)
