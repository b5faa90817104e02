"""Versioned little-endian binary containers.

``CRTM``  model weights::

    magic "CRTM" | u32 version | u32 n | n bytes UTF-8 JSON config |
    f64 blobs: embedding, per layer (attn_norm, wq, wk, wv, wo, mlp_norm,
    w_up, w_gate, w_down), final_norm, lm_head

``CRRS``  rotation set::

    magic "CRRS" | u32 version | u32 d_model | u32 n_layers | u32 n_heads |
    u32 d_head | u32 flags (bit 0 = R3, bit 1 = R4) | f64 R1 (d×d) |
    f64 R2 blocks, layer-major then head-major (d_head×d_head each)

``CRAD``  activation dump, one file per (site, layer)::

    magic "CRAD" | u32 version | u32 site index | u32 layer | u32 d |
    u64 rows | f64 rows (row-major)

All matrices are row-major.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, PreconditionError
from .procrustes import BlockDiagonalRotation
from .toy_transformer import SITES, LayerWeights, ModelConfig, RotationSet, ToyTransformer

__all__ = [
    "save_model",
    "load_model",
    "save_rotations",
    "load_rotations",
    "ActivationDumpWriter",
    "read_activation_dump",
]

VERSION = 1
_F8 = np.dtype("<f8")


def _read_exact(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise InvalidInputError("truncated container")
    return b


def _check_magic(f, magic: bytes):
    got = _read_exact(f, 4)
    if got != magic:
        raise InvalidInputError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(f, 4))
    if version != VERSION:
        raise InvalidInputError(f"unsupported {magic.decode()} version {version}")


def _read_f8(f, shape) -> np.ndarray:
    n = int(np.prod(shape))
    return np.frombuffer(_read_exact(f, 8 * n), dtype=_F8).astype(np.float64).reshape(shape)


def save_model(model: ToyTransformer, path) -> None:
    if model.rotations is not None:
        raise PreconditionError("save the unfolded model and its rotation set separately")
    cfg = model.cfg
    header = {
        "d_model": cfg.d_model,
        "n_heads": cfg.n_heads,
        "n_layers": cfg.n_layers,
        "d_ffn": cfg.d_ffn,
        "vocab": cfg.vocab,
        "seed": cfg.seed,
        "rope_base": cfg.rope_base,
        "fused": model.fused,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(b"CRTM" + struct.pack("<II", VERSION, len(blob)) + blob)
        f.write(model.embedding.astype(_F8).tobytes())
        for lw in model.layers:
            for name in LayerWeights.FIELDS:
                f.write(getattr(lw, name).astype(_F8).tobytes())
        f.write(model.final_norm.astype(_F8).tobytes())
        f.write(model.lm_head.astype(_F8).tobytes())


def load_model(path) -> ToyTransformer:
    with open(path, "rb") as f:
        _check_magic(f, b"CRTM")
        (n,) = struct.unpack("<I", _read_exact(f, 4))
        header = json.loads(_read_exact(f, n).decode())
        fused = bool(header.pop("fused"))
        cfg = ModelConfig(**header)
        d, ff, v = cfg.d_model, cfg.d_ffn, cfg.vocab
        shapes = {
            "attn_norm": (d,), "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
            "mlp_norm": (d,), "w_up": (ff, d), "w_gate": (ff, d), "w_down": (d, ff),
        }
        embedding = _read_f8(f, (v, d))
        layers = [LayerWeights(**{k: _read_f8(f, shapes[k]) for k in LayerWeights.FIELDS}) for _ in range(cfg.n_layers)]
        final_norm = _read_f8(f, (d,))
        lm_head = _read_f8(f, (v, d))
        if f.read(1):
            raise InvalidInputError("trailing bytes in CRTM container")
    return ToyTransformer(cfg, embedding, layers, final_norm, lm_head, fused=fused)


def save_rotations(rots: RotationSet, path) -> None:
    d = rots.r1.shape[0]
    n_layers = len(rots.r2)
    n_heads = rots.r2[0].n_blocks if rots.r2 else 0
    d_head = rots.r2[0].block_dim if rots.r2 else 0
    flags = int(rots.use_r3) | (int(rots.use_r4) << 1)
    with open(path, "wb") as f:
        f.write(b"CRRS" + struct.pack("<6I", VERSION, d, n_layers, n_heads, d_head, flags))
        f.write(rots.r1.astype(_F8).tobytes())
        for r2 in rots.r2:
            f.write(r2.blocks.astype(_F8).tobytes())


def load_rotations(path) -> RotationSet:
    with open(path, "rb") as f:
        _check_magic(f, b"CRRS")
        d, n_layers, n_heads, d_head, flags = struct.unpack("<5I", _read_exact(f, 20))
        r1 = _read_f8(f, (d, d))
        r2 = [BlockDiagonalRotation(_read_f8(f, (n_heads, d_head, d_head))) for _ in range(n_layers)]
        if f.read(1):
            raise InvalidInputError("trailing bytes in CRRS container")
    return RotationSet(r1=r1, r2=r2, use_r3=bool(flags & 1), use_r4=bool(flags & 2))


class ActivationDumpWriter:
    """Append-only writer for a ``CRAD`` file; the row count is patched on close."""

    _HEADER = struct.Struct("<4sIIIIQ")

    def __init__(self, path, site: str, layer: int, d: int):
        if site not in SITES:
            raise InvalidInputError(f"unknown site {site!r}")
        self.path = Path(path)
        self.site, self.layer, self.d = site, layer, d
        self.rows = 0
        self._f = open(self.path, "wb")
        self._f.write(self._HEADER.pack(b"CRAD", VERSION, SITES.index(site), layer, d, 0))

    def append(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise InvalidInputError(f"expected rows of width {self.d}, got {x.shape}")
        self._f.write(np.ascontiguousarray(x).astype(_F8).tobytes())
        self.rows += x.shape[0]

    def close(self):
        if self._f.closed:
            return
        self._f.seek(0)
        self._f.write(self._HEADER.pack(b"CRAD", VERSION, SITES.index(self.site), self.layer, self.d, self.rows))
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_activation_dump(path, mmap: bool = True) -> tuple[str, int, np.ndarray]:
    """Return ``(site, layer, rows)``; rows are memory-mapped unless ``mmap`` is false."""
    hdr = ActivationDumpWriter._HEADER
    with open(path, "rb") as f:
        raw = f.read(hdr.size)
    if len(raw) != hdr.size:
        raise InvalidInputError("truncated CRAD header")
    magic, version, site_idx, layer, d, rows = hdr.unpack(raw)
    if magic != b"CRAD":
        raise InvalidInputError(f"bad magic {magic!r}, expected b'CRAD'")
    if version != VERSION:
        raise InvalidInputError(f"unsupported CRAD version {version}")
    if site_idx >= len(SITES):
        raise InvalidInputError(f"bad site index {site_idx}")
    expected = hdr.size + 8 * d * rows
    if Path(path).stat().st_size != expected:
        raise InvalidInputError("CRAD payload size does not match its header")
    if rows == 0:
        data = np.zeros((0, d))
    elif mmap:
        data = np.memmap(path, dtype=_F8, mode="r", offset=hdr.size, shape=(rows, d))
    else:
        data = np.fromfile(path, dtype=_F8, offset=hdr.size).reshape(rows, d)
    return SITES[site_idx], layer, data
