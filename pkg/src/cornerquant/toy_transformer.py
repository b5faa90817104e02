"""A small pre-norm decoder-only transformer with foldable rotations.

Weights follow the ``y = x Wᵀ`` convention (``W`` is ``out × in``) and a
rotation ``R`` acts on column activations, so a row matrix ``X`` becomes
``X Rᵀ``. Folding a residual rotation ``R1`` therefore maps

* embedding ``E -> E R1ᵀ`` and every reading projection ``W -> W R1ᵀ``
* every writing projection ``W -> R1 W``

and the per-layer block rotation ``R2`` maps ``Wv -> R2 Wv``, ``Wo -> Wo R2ᵀ``.
RMSNorm scales must be fused into the following projections first.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import InvalidInputError, InvalidSpecError, PreconditionError
from .procrustes import BlockDiagonalRotation
from .quantizers import QuantizerSpec, quantize_tensor
from .tensor_core import hadamard_transform, is_power_of_two, rng

__all__ = [
    "SITES",
    "ModelConfig",
    "LayerWeights",
    "ToyTransformer",
    "RotationSet",
    "TapRecord",
    "init_model",
    "fuse_rmsnorm",
    "fold_rotations",
    "quantize_weights",
    "forward",
    "kv_quantize",
    "nll",
]

SITES = ("attn_in", "mlp_in", "oproj_in", "downproj_in", "k_cache", "v_cache")
RMS_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ffn: int = 128
    vocab: int = 256
    seed: int = 0
    rope_base: float = 10000.0

    def __post_init__(self):
        for name in ("d_model", "n_heads", "n_layers", "d_ffn"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise InvalidInputError("d_model must be divisible by n_heads")
        if not is_power_of_two(self.d_model):
            raise InvalidInputError(f"d_model must be a power of 2, got {self.d_model}")
        if not is_power_of_two(self.d_head) or self.d_head < 2:
            raise InvalidInputError(f"d_head must be an even power of 2, got {self.d_head}")
        if not is_power_of_two(self.d_ffn):
            raise InvalidInputError(f"d_ffn must be a power of 2, got {self.d_ffn}")
        if self.vocab < 2:
            raise InvalidInputError("vocab must be >= 2")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class LayerWeights:
    attn_norm: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    mlp_norm: np.ndarray
    w_up: np.ndarray
    w_gate: np.ndarray
    w_down: np.ndarray

    # order used by the checkpoint format
    FIELDS = ("attn_norm", "wq", "wk", "wv", "wo", "mlp_norm", "w_up", "w_gate", "w_down")


@dataclass
class RotationSet:
    """Residual rotation ``r1``, per-layer block rotations ``r2`` and online Hadamard flags."""

    r1: np.ndarray
    r2: list[BlockDiagonalRotation]
    use_r3: bool = False
    use_r4: bool = False

    @classmethod
    def identity(cls, cfg: ModelConfig, use_r3: bool = False, use_r4: bool = False) -> "RotationSet":
        return cls(
            r1=np.eye(cfg.d_model),
            r2=[BlockDiagonalRotation.identity(cfg.n_heads, cfg.d_head) for _ in range(cfg.n_layers)],
            use_r3=use_r3,
            use_r4=use_r4,
        )

    def copy(self) -> "RotationSet":
        return RotationSet(
            r1=self.r1.copy(),
            r2=[BlockDiagonalRotation(b.blocks.copy()) for b in self.r2],
            use_r3=self.use_r3,
            use_r4=self.use_r4,
        )

    def check(self, cfg: ModelConfig):
        if self.r1.shape != (cfg.d_model, cfg.d_model):
            raise InvalidInputError(f"r1 shape {self.r1.shape} does not match d_model={cfg.d_model}")
        if len(self.r2) != cfg.n_layers:
            raise InvalidInputError(f"expected {cfg.n_layers} r2 rotations, got {len(self.r2)}")
        for r2 in self.r2:
            if r2.blocks.shape != (cfg.n_heads, cfg.d_head, cfg.d_head):
                raise InvalidInputError(f"r2 blocks shape {r2.blocks.shape} does not match config")

    def is_identity(self) -> bool:
        eye = np.eye(self.r1.shape[0])
        return bool(
            np.array_equal(self.r1, eye)
            and all(np.array_equal(b.blocks, np.broadcast_to(np.eye(b.block_dim), b.blocks.shape)) for b in self.r2)
        )


@dataclass
class TapRecord:
    site: str
    layer: int
    data: np.ndarray


@dataclass
class ToyTransformer:
    cfg: ModelConfig
    embedding: np.ndarray
    layers: list[LayerWeights]
    final_norm: np.ndarray
    lm_head: np.ndarray
    fused: bool = False
    rotations: RotationSet | None = field(default=None)

    @property
    def use_r3(self) -> bool:
        return self.rotations is not None and self.rotations.use_r3

    @property
    def use_r4(self) -> bool:
        return self.rotations is not None and self.rotations.use_r4

    def copy(self) -> "ToyTransformer":
        return copy.deepcopy(self)


def init_model(cfg: ModelConfig) -> ToyTransformer:
    """Gaussian weights with standard deviation ``1/sqrt(fan_in)``; RMSNorm scales of one."""
    g = rng(cfg.seed)
    d, f = cfg.d_model, cfg.d_ffn

    def lin(out_dim, in_dim):
        return g.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)

    embedding = g.standard_normal((cfg.vocab, d))
    layers = []
    for _ in range(cfg.n_layers):
        layers.append(
            LayerWeights(
                attn_norm=np.ones(d),
                wq=lin(d, d),
                wk=lin(d, d),
                wv=lin(d, d),
                wo=lin(d, d),
                mlp_norm=np.ones(d),
                w_up=lin(f, d),
                w_gate=lin(f, d),
                w_down=lin(d, f),
            )
        )
    return ToyTransformer(cfg=cfg, embedding=embedding, layers=layers, final_norm=np.ones(d), lm_head=lin(cfg.vocab, d))


def fuse_rmsnorm(model: ToyTransformer) -> ToyTransformer:
    """Absorb every RMSNorm scale into the projections that read its output."""
    m = model.copy()
    for lw in m.layers:
        lw.wq = lw.wq * lw.attn_norm
        lw.wk = lw.wk * lw.attn_norm
        lw.wv = lw.wv * lw.attn_norm
        lw.attn_norm = np.ones_like(lw.attn_norm)
        lw.w_up = lw.w_up * lw.mlp_norm
        lw.w_gate = lw.w_gate * lw.mlp_norm
        lw.mlp_norm = np.ones_like(lw.mlp_norm)
    m.lm_head = m.lm_head * m.final_norm
    m.final_norm = np.ones_like(m.final_norm)
    m.fused = True
    return m


def fold_rotations(model: ToyTransformer, rots: RotationSet) -> ToyTransformer:
    """Return a copy of a fused model with ``rots`` merged into its weights.

    ``R1`` and ``R2`` are absorbed exactly; with ``use_r4`` the inverse of
    the online Hadamard is folded into ``W_down``. ``R3`` needs no weights.
    """
    if not model.fused:
        raise PreconditionError("fold_rotations requires an RMSNorm-fused model")
    if model.rotations is not None:
        raise PreconditionError("model already has rotations folded in")
    rots.check(model.cfg)
    r1 = rots.r1
    m = model.copy()
    m.embedding = m.embedding @ r1.T
    for lw, r2 in zip(m.layers, rots.r2):
        r2d = r2.dense()
        lw.wq = lw.wq @ r1.T
        lw.wk = lw.wk @ r1.T
        lw.wv = r2d @ lw.wv @ r1.T
        lw.wo = r1 @ lw.wo @ r2d.T
        lw.w_up = lw.w_up @ r1.T
        lw.w_gate = lw.w_gate @ r1.T
        w_down = lw.w_down
        if rots.use_r4:
            # (H x) is fed online, so W_down must absorb Hᵀ; H is symmetric.
            w_down = hadamard_transform(w_down)
        lw.w_down = r1 @ w_down
    m.lm_head = m.lm_head @ r1.T
    m.rotations = rots.copy()
    return m


def quantize_weights(model: ToyTransformer, spec: QuantizerSpec | None) -> ToyTransformer:
    """Round-to-nearest quantization of every block projection, one scale per output row."""
    if spec is None:
        return model
    m = model.copy()
    for lw in m.layers:
        for name in ("wq", "wk", "wv", "wo", "w_up", "w_gate", "w_down"):
            setattr(lw, name, quantize_tensor(getattr(lw, name), spec))
    return m


def _rms(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMS_EPS)


def _rope_tables(t: int, d_head: int, base: float):
    half = d_head // 2
    inv = base ** (-np.arange(half) / half)
    ang = np.arange(t)[:, None] * inv[None, :]
    return np.cos(ang), np.sin(ang)


def _rope(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # x: (B, T, H, dh); rotate-half pairing (i, i + dh/2)
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    c = cos[None, :, None, :]
    s = sin[None, :, None, :]
    return np.concatenate((x1 * c - x2 * s, x1 * s + x2 * c), axis=-1)


def kv_quantize(k: np.ndarray, v: np.ndarray, spec: QuantizerSpec) -> tuple[np.ndarray, np.ndarray]:
    """Group-wise quantization of cached keys and values (rows are tokens)."""
    if spec.granularity != "grouped":
        raise InvalidSpecError("kv_quantize expects a grouped spec")
    return quantize_tensor(k, spec), quantize_tensor(v, spec)


def forward(
    model: ToyTransformer,
    tokens,
    rots: RotationSet | None = None,
    qa: QuantizerSpec | None = None,
    taps: Iterable[str] = (),
    kv_spec: QuantizerSpec | None = None,
    on_tap: Callable[[TapRecord], None] | None = None,
    on_oproj: Callable[[int, np.ndarray], np.ndarray | None] | None = None,
) -> tuple[np.ndarray, list[TapRecord]]:
    """Causal forward pass over a batch of token sequences.

    ``tokens`` is ``(T,)`` or ``(B, T)``. R1/R2 must already be folded into
    ``model``; if ``rots`` is given it has to match what was folded and only
    its R3/R4 flags are consulted. With ``qa`` every block projection input
    is quantized per token after rotation. Taps capture activations before
    quantization as ``(B*T, dim)`` matrices; ``on_tap`` receives each record as
    soon as it is produced, and records are only kept in the returned list
    for sites named in ``taps``.

    ``on_oproj(layer, rows)`` sees each o_proj input as it is produced and may
    return a change of frame ``D`` (``R2_new R2_oldᵀ``); the rest of that layer
    then runs as if ``R2_new`` had been folded, so later layers of the same
    batch see the new rotation.
    """
    cfg = model.cfg
    tokens = np.asarray(tokens)
    squeeze = tokens.ndim == 1
    tokens = np.atleast_2d(tokens)
    if tokens.ndim != 2 or tokens.shape[1] == 0:
        raise InvalidInputError(f"tokens must be (T,) or (B, T), got shape {tokens.shape}")
    if not np.issubdtype(tokens.dtype, np.integer) or tokens.min() < 0 or tokens.max() >= cfg.vocab:
        raise InvalidInputError(f"tokens must be integers in [0, {cfg.vocab})")

    if rots is not None and not rots.is_identity():
        folded = model.rotations
        if folded is None or not (
            np.array_equal(folded.r1, rots.r1) and all(np.array_equal(a.blocks, b.blocks) for a, b in zip(folded.r2, rots.r2))
        ):
            raise PreconditionError("rotations must be folded into the model before forward")
    use_r3 = rots.use_r3 if rots is not None else model.use_r3
    use_r4 = rots.use_r4 if rots is not None else model.use_r4
    if use_r4 != model.use_r4:
        raise PreconditionError("use_r4 requires the inverse Hadamard folded into W_down")

    want = set(taps)
    unknown = want - set(SITES)
    if unknown:
        raise InvalidInputError(f"unknown tap sites {sorted(unknown)}")
    records: list[TapRecord] = []

    def emit(site, layer, x):
        if site not in want and on_tap is None:
            return
        rec = TapRecord(site, layer, x.reshape(-1, x.shape[-1]).copy())
        if on_tap is not None:
            on_tap(rec)
        if site in want:
            records.append(rec)

    def quant(x):
        return x if qa is None else quantize_tensor(x, qa)

    b, t = tokens.shape
    nh, dh = cfg.n_heads, cfg.d_head
    cos, sin = _rope_tables(t, dh, cfg.rope_base)
    mask = np.triu(np.full((t, t), -np.inf), k=1)

    h = model.embedding[tokens]
    for li, lw in enumerate(model.layers):
        a = _rms(h) * lw.attn_norm
        emit("attn_in", li, a)
        a = quant(a)
        q = (a @ lw.wq.T).reshape(b, t, nh, dh)
        k = (a @ lw.wk.T).reshape(b, t, nh, dh)
        v = (a @ lw.wv.T).reshape(b, t, nh, dh)
        q, k = _rope(q, cos, sin), _rope(k, cos, sin)
        if use_r3:
            q, k = hadamard_transform(q), hadamard_transform(k)
        emit("k_cache", li, k.reshape(b, t, -1))
        emit("v_cache", li, v.reshape(b, t, -1))
        if kv_spec is not None:
            kq, vq = kv_quantize(k.reshape(b * t, -1), v.reshape(b * t, -1), kv_spec)
            k, v = kq.reshape(b, t, nh, dh), vq.reshape(b, t, nh, dh)
        scores = np.einsum("bthd,bshd->bhts", q, k) / np.sqrt(dh) + mask
        scores -= scores.max(axis=-1, keepdims=True)
        p = np.exp(scores)
        p /= p.sum(axis=-1, keepdims=True)
        o = np.einsum("bhts,bshd->bthd", p, v).reshape(b, t, -1)
        emit("oproj_in", li, o)
        wo = lw.wo
        if on_oproj is not None:
            delta = on_oproj(li, o.reshape(-1, o.shape[-1]))
            if delta is not None:
                o, wo = o @ delta.T, wo @ delta.T
        h = h + quant(o) @ wo.T

        m = _rms(h) * lw.mlp_norm
        emit("mlp_in", li, m)
        m = quant(m)
        gate = m @ lw.w_gate.T
        act = gate / (1.0 + np.exp(-gate)) * (m @ lw.w_up.T)
        if use_r4:
            act = hadamard_transform(act)
        emit("downproj_in", li, act)
        h = h + quant(act) @ lw.w_down.T

    logits = (_rms(h) * model.final_norm) @ model.lm_head.T
    if squeeze:
        logits = logits[0]
    return logits, records


def nll(logits: np.ndarray, tokens) -> float:
    """Mean next-token negative log-likelihood (nats)."""
    if logits.ndim == 2:
        logits = logits[None]
    tokens = np.atleast_2d(np.asarray(tokens))
    pred = logits[:, :-1]
    tgt = tokens[:, 1:]
    pred = pred - pred.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(pred).sum(axis=-1))
    picked = np.take_along_axis(pred, tgt[..., None], axis=-1)[..., 0]
    return float(np.mean(logz - picked))
