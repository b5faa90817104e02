"""Online mini-batch calibration of the residual and per-head rotations.

For each mini-batch the model is run with the current rotations folded in.
Inputs to the attention and MLP blocks of every layer feed one shared
Procrustes accumulator for ``R1``; inputs to each layer's output projection
feed per-head accumulators for that layer's ``R2``. Taps are consumed as the
forward produces them, so at most one site's activations are held at a time.
After the batch, every rotation is replaced by its Procrustes update and the
accumulators start empty for the next batch.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .containers import ActivationDumpWriter, read_activation_dump
from .corner_geometry import NormalizedBatch, corner_objective, participation_ratios
from .errors import InvalidInputError
from .procrustes import BlockDiagonalRotation, ProcrustesAccumulator
from .quantizers import QuantizerSpec
from .tensor_core import random_hadamard, rng
from .toy_transformer import ModelConfig, RotationSet, TapRecord, ToyTransformer, fold_rotations, forward

__all__ = [
    "R1_SITES",
    "CalibConfig",
    "CalibTrace",
    "calibrate_online",
    "calibrate_offline",
    "hadamard_baseline",
    "r1_objective_on_data",
]

R1_SITES = ("attn_in", "mlp_in")
MODES = ("fp", "quant_aware")


def default_act_spec() -> QuantizerSpec:
    return QuantizerSpec(bits=4, mode="zeropoint", granularity="per_token", clip_ratio=0.9)


@dataclass
class CalibConfig:
    batch_size: int = 2
    n_sequences: int = 64
    seq_len: int = 128
    mode: str = "fp"
    act_spec: QuantizerSpec = field(default_factory=default_act_spec)
    kv_spec: QuantizerSpec | None = None
    seed: int = 0
    epochs: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.n_sequences < self.batch_size:
            raise InvalidInputError("n_sequences must be >= batch_size")
        if self.seq_len < 1:
            raise InvalidInputError("seq_len must be >= 1")
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 0:
            raise InvalidInputError("epochs must be >= 0")


@dataclass
class CalibTrace:
    """One record per Procrustes step.

    ``r1_objective`` is the corner objective of the step's R1 rows under the
    rotation in force when they were collected; ``r1_objective_after`` is the
    distance of the same rows to the same targets under the updated rotation,
    an upper bound on their new corner objective.
    """

    records: list[dict] = field(default_factory=list)
    peak_tap_reals: int = 0

    def columns(self) -> list[str]:
        if not self.records:
            return ["batch", "r1_rows", "r1_objective", "r1_objective_after", "mean_pr"]
        return list(self.records[0].keys())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            cols = self.columns()
            w.writerow(cols)
            for rec in self.records:
                w.writerow([_fmt(rec[c]) for c in cols])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _batches(data: np.ndarray, batch_size: int):
    for start in range(0, data.shape[0], batch_size):
        yield data[start:start + batch_size]


def _check_data(data) -> np.ndarray:
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
        raise InvalidInputError(f"calibration data must be a non-empty (N, T) token array, got {data.shape}")
    return data


class _StepState:
    """Accumulators for one Procrustes step over R1 and every R2."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.acc1 = ProcrustesAccumulator(cfg.d_model)
        self.acc2 = [[ProcrustesAccumulator(cfg.d_head) for _ in range(cfg.n_heads)] for _ in range(cfg.n_layers)]
        self.pr_sum = 0.0
        self.pr_rows = 0
        # layer -> (objective before, bound after) for R2s already solved mid-forward
        self.r2_done: dict[int, tuple[float, float]] = {}

    def add_r1(self, r1: np.ndarray, x: np.ndarray, rotated: np.ndarray | None = None):
        self.acc1.add(r1, x)
        y = x @ r1.T if rotated is None else rotated
        nz = np.any(y != 0, axis=1)
        if np.any(nz):
            self.pr_sum += float(participation_ratios(y[nz]).sum())
            self.pr_rows += int(nz.sum())

    def add_r2(self, layer: int, r2: BlockDiagonalRotation, x: np.ndarray):
        dh = self.cfg.d_head
        for h, acc in enumerate(self.acc2[layer]):
            acc.add(r2.blocks[h], x[:, h * dh:(h + 1) * dh])

    def solve_r2(self, layer: int, r2: BlockDiagonalRotation) -> tuple[BlockDiagonalRotation, float, float]:
        blocks = r2.blocks.copy()
        before = after = 0.0
        for h, acc in enumerate(self.acc2[layer]):
            if acc.n_samples == 0:
                continue
            blocks[h] = acc.solve()
            before += acc.objective_before()
            after += acc.objective_bound(blocks[h])
        return BlockDiagonalRotation(blocks), before, after

    def update_r2(self, layer: int, rots: RotationSet) -> BlockDiagonalRotation:
        """Solve R2 of ``layer`` now and store it in ``rots``; returns the old rotation."""
        old = rots.r2[layer]
        rots.r2[layer], before, after = self.solve_r2(layer, old)
        self.r2_done[layer] = (before, after)
        return old

    def finish(self, rots: RotationSet, index: int) -> dict:
        rec = {"batch": index, "r1_rows": self.acc1.n_samples}
        if self.acc1.n_samples:
            new_r1 = self.acc1.solve()
            rec["r1_objective"] = self.acc1.objective_before()
            rec["r1_objective_after"] = self.acc1.objective_bound(new_r1)
            rots.r1 = new_r1
        else:
            rec["r1_objective"] = rec["r1_objective_after"] = 0.0
        for layer in range(self.cfg.n_layers):
            if layer in self.r2_done:
                before, after = self.r2_done[layer]
            else:
                rots.r2[layer], before, after = self.solve_r2(layer, rots.r2[layer])
            rec[f"r2_objective_l{layer}"] = before
            rec[f"r2_objective_after_l{layer}"] = after
        rec["mean_pr"] = self.pr_sum / self.pr_rows if self.pr_rows else float("nan")
        return rec


def calibrate_online(
    model: ToyTransformer, data, cfg: CalibConfig, init: RotationSet
) -> tuple[RotationSet, CalibTrace]:
    """Run online calibration over ``data`` (an ``(N, T)`` token array).

    ``model`` must be RMSNorm-fused and unfolded. In ``quant_aware`` mode the
    calibration forwards quantize each projection input with
    ``cfg.act_spec`` (and the KV cache with ``cfg.kv_spec`` if set), so later
    layers see the activations they would see at inference.

    Each R2 is re-solved as soon as the forward reaches its layer, so deeper
    layers of the same batch (and the R1 taps they produce) already see it.
    R1 is solved once the whole batch has been processed.
    """
    data = _check_data(data)
    init.check(model.cfg)
    mcfg = model.cfg
    rots = init.copy()
    trace = CalibTrace()
    quant = cfg.mode == "quant_aware"
    step = 0
    for _ in range(cfg.epochs):
        for batch in _batches(data, cfg.batch_size):
            folded = fold_rotations(model, rots)
            state = _StepState(mcfg)
            r1 = rots.r1

            def on_tap(rec: TapRecord):
                if rec.site in R1_SITES:
                    trace.peak_tap_reals = max(trace.peak_tap_reals, rec.data.size)
                    # taps are in the rotated frame: tap = x R1ᵀ
                    state.add_r1(r1, rec.data @ r1, rotated=rec.data)

            def on_oproj(layer: int, rows: np.ndarray) -> np.ndarray:
                # R2 is re-solved as soon as its layer is reached; the rest of
                # the forward runs in the new frame
                r2 = rots.r2[layer]
                state.add_r2(layer, r2, r2.apply_inverse(rows))
                old = state.update_r2(layer, rots)
                return BlockDiagonalRotation(rots.r2[layer].blocks @ old.blocks.transpose(0, 2, 1)).dense()

            forward(
                folded,
                batch,
                qa=cfg.act_spec if quant else None,
                kv_spec=cfg.kv_spec if quant else None,
                on_tap=on_tap,
                on_oproj=on_oproj,
            )
            trace.records.append(state.finish(rots, step))
            step += 1
    return rots, trace


def _dump_name(site: str, layer: int) -> str:
    return f"{site}_l{layer}.crad"


class _RowPool:
    """Concatenated view over several memory-mapped dumps."""

    def __init__(self, arrays: list[np.ndarray]):
        self.arrays = arrays
        self.offsets = np.cumsum([0] + [a.shape[0] for a in arrays])

    @property
    def n(self) -> int:
        return int(self.offsets[-1])

    def take(self, idx: np.ndarray) -> np.ndarray:
        idx = np.sort(idx)
        parts = []
        which = np.searchsorted(self.offsets, idx, side="right") - 1
        for k, arr in enumerate(self.arrays):
            sel = idx[which == k] - self.offsets[k]
            if sel.size:
                parts.append(np.asarray(arr[sel]))
        return np.concatenate(parts, axis=0)


def calibrate_offline(
    model: ToyTransformer, data, cfg: CalibConfig, init: RotationSet, store_path
) -> tuple[RotationSet, CalibTrace]:
    """Stored-activation variant of :func:`calibrate_online`.

    Pass one runs full-precision forwards under ``init`` and writes every
    calibration-site activation (un-rotated) to ``CRAD`` files in
    ``store_path``. Pass two performs as many Procrustes steps as the online
    schedule, each on the same number of rows, drawn by shuffling the stored
    rows once per epoch and splitting them into consecutive chunks.
    """
    data = _check_data(data)
    init.check(model.cfg)
    mcfg = model.cfg
    store = Path(store_path)
    store.mkdir(parents=True, exist_ok=True)

    writers = {}
    for layer in range(mcfg.n_layers):
        for site in (*R1_SITES, "oproj_in"):
            writers[(site, layer)] = ActivationDumpWriter(store / _dump_name(site, layer), site, layer, mcfg.d_model)
    r1_sizes, r2_sizes = [], []
    folded = fold_rotations(model, init)
    try:
        for batch in _batches(data, cfg.batch_size):
            counts = {"r1": 0, "r2": 0}

            def on_tap(rec: TapRecord):
                if rec.site in R1_SITES:
                    writers[(rec.site, rec.layer)].append(rec.data @ init.r1)
                    counts["r1"] += rec.data.shape[0]
                elif rec.site == "oproj_in":
                    writers[(rec.site, rec.layer)].append(init.r2[rec.layer].apply_inverse(rec.data))
                    if rec.layer == 0:
                        counts["r2"] += rec.data.shape[0]

            forward(folded, batch, on_tap=on_tap)
            r1_sizes.append(counts["r1"])
            r2_sizes.append(counts["r2"])
    finally:
        for w in writers.values():
            w.close()

    r1_pool = _RowPool(
        [read_activation_dump(store / _dump_name(s, l))[2] for l in range(mcfg.n_layers) for s in R1_SITES]
    )
    r2_pools = [_RowPool([read_activation_dump(store / _dump_name("oproj_in", l))[2]]) for l in range(mcfg.n_layers)]

    g = rng(cfg.seed)
    rots = init.copy()
    trace = CalibTrace(peak_tap_reals=0)
    step = 0
    for _ in range(cfg.epochs):
        perm1 = g.permutation(r1_pool.n)
        perm2 = [g.permutation(p.n) for p in r2_pools]
        o1 = o2 = 0
        for n1, n2 in zip(r1_sizes, r2_sizes):
            state = _StepState(mcfg)
            state.add_r1(rots.r1, r1_pool.take(perm1[o1:o1 + n1]))
            for layer, pool in enumerate(r2_pools):
                state.add_r2(layer, rots.r2[layer], pool.take(perm2[layer][o2:o2 + n2]))
            o1 += n1
            o2 += n2
            trace.records.append(state.finish(rots, step))
            step += 1
    return rots, trace


def hadamard_baseline(cfg: ModelConfig, seed: int) -> RotationSet:
    """Random-Hadamard rotations with online R3/R4 enabled.

    Seeds are derived from ``seed`` as ``[seed, 0]`` for R1 and
    ``[seed, 1, layer, head]`` for each R2 block.
    """
    r1 = random_hadamard(cfg.d_model, [seed, 0])
    r2 = [
        BlockDiagonalRotation(np.stack([random_hadamard(cfg.d_head, [seed, 1, l, h]) for h in range(cfg.n_heads)]))
        for l in range(cfg.n_layers)
    ]
    return RotationSet(r1=r1, r2=r2, use_r3=True, use_r4=True)


def r1_objective_on_data(model: ToyTransformer, rots: RotationSet, data, batch_size: int = 8) -> float:
    """Mean per-row corner objective of ``rots.r1`` over all R1-site activations of ``data``."""
    data = _check_data(data)
    folded = fold_rotations(model, rots)
    total, rows = 0.0, 0
    eye = np.eye(model.cfg.d_model)

    def on_tap(rec: TapRecord):
        nonlocal total, rows
        if rec.site in R1_SITES:
            b = NormalizedBatch.from_raw(rec.data)
            total += corner_objective(eye, b)
            rows += b.n

    for batch in _batches(data, batch_size):
        forward(folded, batch, on_tap=on_tap)
    return total / rows if rows else math.nan
