"""Layerwise quantization-error reports, participation-ratio analysis and exports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .corner_geometry import cdf_of_values, participation_ratios
from .errors import InvalidInputError
from .procrustes import BlockDiagonalRotation
from .quantizers import QuantizerSpec, quantize_tensor
from .toy_transformer import RotationSet, TapRecord, ToyTransformer, fold_rotations, forward, nll, quantize_weights

__all__ = [
    "ACT_SITES",
    "KV_SITES",
    "EvalSpecs",
    "LayerErrorReport",
    "relative_quant_error",
    "evaluate_model",
    "collect_pr",
    "export_csv",
    "read_csv",
    "export_pr_cdf",
    "summary_json",
]

ACT_SITES = ("attn_in", "oproj_in", "mlp_in", "downproj_in")
KV_SITES = ("k_cache", "v_cache")
SUMMARY_SCHEMA_VERSION = 1
REPORT_COLUMNS = ("site", "layer", "rel_err", "n_rows")


def relative_quant_error(x: np.ndarray, r, spec: QuantizerSpec) -> float:
    """``||X Rᵀ - Q(X Rᵀ)||_F² / ||X||_F²``.

    ``r`` may be a dense orthogonal matrix, a :class:`BlockDiagonalRotation`
    or ``None`` for the identity.
    """
    x = np.asarray(x, dtype=np.float64)
    denom = float(np.sum(x * x))
    if denom == 0.0:
        raise InvalidInputError("relative error of an all-zero activation matrix is undefined")
    if r is None:
        y = x
    elif isinstance(r, BlockDiagonalRotation):
        y = r.apply(x)
    else:
        y = x @ np.asarray(r, dtype=np.float64).T
    err = y - quantize_tensor(y, spec)
    return float(np.sum(err * err)) / denom


@dataclass(frozen=True)
class EvalSpecs:
    """Weight, activation and KV-cache quantizers; ``None`` keeps that tensor in float64."""

    weight: QuantizerSpec | None = None
    act: QuantizerSpec | None = None
    kv: QuantizerSpec | None = None


@dataclass
class LayerErrorReport:
    rows: list[tuple[str, int, float, int]] = field(default_factory=list)

    def get(self, site: str, layer: int) -> float:
        for s, l, e, _ in self.rows:
            if s == site and l == layer:
                return e
        raise KeyError((site, layer))

    def mean_rel_err(self, sites=ACT_SITES) -> float:
        vals = [e for s, _, e, _ in self.rows if s in sites]
        return float(np.mean(vals)) if vals else float("nan")


def evaluate_model(
    model: ToyTransformer, rots: RotationSet, data, specs: EvalSpecs, batch_size: int = 8
) -> tuple[LayerErrorReport, dict]:
    """Fold ``rots`` into a fused model and measure quantization damage.

    Relative errors are computed on the activations of the full-precision
    folded model, so they reflect the rotations alone. The mean next-token
    NLL is reported twice: for the float64 folded model and for the model
    with weight, activation and KV quantization applied. Toy NLLs are not
    comparable to perplexities of real language models.
    """
    data = np.atleast_2d(np.asarray(data))
    if data.size == 0:
        raise InvalidInputError("evaluation data is empty")
    folded = fold_rotations(model, rots)
    quantized = quantize_weights(folded, specs.weight)

    num: dict[tuple[str, int], float] = {}
    den: dict[tuple[str, int], float] = {}
    cnt: dict[tuple[str, int], int] = {}

    def on_tap(rec: TapRecord):
        spec = specs.act if rec.site in ACT_SITES else specs.kv
        key = (rec.site, rec.layer)
        x = rec.data
        if spec is None:
            err = 0.0
        else:
            d = x - quantize_tensor(x, spec)
            err = float(np.sum(d * d))
        num[key] = num.get(key, 0.0) + err
        den[key] = den.get(key, 0.0) + float(np.sum(x * x))
        cnt[key] = cnt.get(key, 0) + x.shape[0]

    nll_fp, nll_q, tokens = 0.0, 0.0, 0
    for start in range(0, data.shape[0], batch_size):
        batch = data[start:start + batch_size]
        logits, _ = forward(folded, batch, on_tap=on_tap)
        logits_q, _ = forward(quantized, batch, qa=specs.act, kv_spec=specs.kv)
        n = batch.shape[0] * (batch.shape[1] - 1)
        nll_fp += nll(logits, batch) * n
        nll_q += nll(logits_q, batch) * n
        tokens += n

    sites = ACT_SITES + (KV_SITES if specs.kv is not None else ())
    report = LayerErrorReport()
    for layer in range(model.cfg.n_layers):
        for site in sites:
            key = (site, layer)
            report.rows.append((site, layer, num[key] / den[key] if den[key] > 0 else 0.0, cnt[key]))

    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "mean_rel_err": report.mean_rel_err(),
        "mean_rel_err_kv": report.mean_rel_err(KV_SITES) if specs.kv is not None else None,
        "nll": nll_q / tokens if tokens else float("nan"),
        "nll_fp": nll_fp / tokens if tokens else float("nan"),
        "n_sequences": int(data.shape[0]),
        "seq_len": int(data.shape[1]),
        "note": "toy-model NLL in nats; not comparable to published perplexities",
    }
    return report, summary


def collect_pr(model: ToyTransformer, rots: RotationSet, data, sites=("attn_in", "mlp_in"), batch_size: int = 8) -> np.ndarray:
    """Normalized participation ratios of every token activation at ``sites``."""
    data = np.atleast_2d(np.asarray(data))
    folded = fold_rotations(model, rots)
    out = []

    def on_tap(rec: TapRecord):
        if rec.site in sites:
            x = rec.data[np.any(rec.data != 0, axis=1)]
            if x.size:
                out.append(participation_ratios(x))

    for start in range(0, data.shape[0], batch_size):
        forward(folded, data[start:start + batch_size], on_tap=on_tap)
    if not out:
        raise InvalidInputError("no activations collected")
    return np.concatenate(out)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def export_csv(report: LayerErrorReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for site, layer, err, n in report.rows:
            w.writerow([site, layer, _fmt(err), n])


def read_csv(path) -> LayerErrorReport:
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        header = next(r)
        if tuple(header) != REPORT_COLUMNS:
            raise InvalidInputError(f"unexpected report header {header}")
        return LayerErrorReport([(s, int(l), float(e), int(n)) for s, l, e, n in r])


def export_pr_cdf(values: np.ndarray, grid: int, path) -> None:
    """Write the ``threshold, fraction`` CDF of normalized PR values; ``grid`` rows after the header."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("threshold", "fraction"))
        for t, frac in cdf_of_values(values, grid):
            w.writerow([_fmt(t), _fmt(frac)])


def summary_json(summary: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
