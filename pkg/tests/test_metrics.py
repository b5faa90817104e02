import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cornerquant.calibration import hadamard_baseline
from cornerquant.errors import InvalidInputError
from cornerquant.metrics import (
    ACT_SITES,
    KV_SITES,
    EvalSpecs,
    LayerErrorReport,
    collect_pr,
    evaluate_model,
    export_csv,
    export_pr_cdf,
    read_csv,
    relative_quant_error,
    summary_json,
)
from cornerquant.procrustes import BlockDiagonalRotation
from cornerquant.quantizers import QuantizerSpec, quantize_tensor
from cornerquant.tensor_core import random_hadamard, random_orthogonal
from cornerquant.toy_transformer import RotationSet, fuse_rmsnorm

SYM4 = QuantizerSpec(bits=4, mode="symmetric", granularity="per_token")
ZP4 = QuantizerSpec(bits=4, mode="zeropoint", granularity="per_token")


def outlier_batch(n, d, seed):
    x = np.random.default_rng(seed).standard_t(3, size=(n, d))
    x[:, :2] *= 25
    return x


def test_relative_error_examples():
    x = outlier_batch(20, 16, 0)
    huge = QuantizerSpec(bits=40, mode="symmetric", granularity="per_token")
    assert relative_quant_error(x, None, huge) <= 1e-10
    corners = np.random.default_rng(1).choice([-1.0, 1.0], size=(8, 16)) / 4
    assert relative_quant_error(corners, np.eye(16), SYM4) == pytest.approx(0.0, abs=1e-30)
    with pytest.raises(InvalidInputError):
        relative_quant_error(np.zeros((2, 4)), None, SYM4)


def test_relative_error_formula_and_block_rotation():
    x = outlier_batch(30, 16, 2)
    r = random_orthogonal(16, 2)
    y = x @ r.T
    want = np.sum((y - quantize_tensor(y, ZP4)) ** 2) / np.sum(x * x)
    assert relative_quant_error(x, r, ZP4) == pytest.approx(want, rel=1e-12)
    bd = BlockDiagonalRotation(np.stack([random_orthogonal(8, 0), random_orthogonal(8, 1)]))
    assert relative_quant_error(x, bd, ZP4) == pytest.approx(relative_quant_error(x, bd.dense(), ZP4), rel=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_relative_error_ordering_on_heavy_tails(seed):
    from cornerquant.corner_geometry import NormalizedBatch
    from cornerquant.procrustes import alternate

    # heavy tails with spread channel scales and two massive fixed-sign channels
    g = np.random.default_rng(seed)
    x = g.standard_t(3, size=(400, 32)) * np.exp(g.normal(0, 1, 32))
    x[:, :2] += 30
    had = random_hadamard(32, 0)
    opt = alternate(had, NormalizedBatch.from_raw(x), 20)
    e_id, e_had, e_opt = (relative_quant_error(x, r, SYM4) for r in (None, had, opt))
    assert e_opt <= e_had <= e_id


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_relative_error_row_permutation_invariant(seed):
    x = outlier_batch(25, 8, seed)
    perm = np.random.default_rng(seed).permutation(25)
    r = random_orthogonal(8, seed)
    assert relative_quant_error(x[perm], r, ZP4) == pytest.approx(relative_quant_error(x, r, ZP4), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([2, 4, 8]))
def test_relative_error_aggregated_bound(seed, b):
    d = 16
    x = outlier_batch(20, d, seed)
    r = random_orthogonal(d, seed)
    y = x @ r.T
    rho = np.max(np.max(np.abs(y), axis=1) ** 2 / np.sum(y * y, axis=1))
    bound = d * rho / (4 * (2 ** (b - 1) - 1) ** 2) * (np.sum(x * x) / np.sum(x * x))
    spec = QuantizerSpec(bits=b, mode="symmetric", granularity="per_token")
    assert relative_quant_error(x, r, spec) <= bound * (1 + 1e-12)


@pytest.fixture(scope="module")
def small_eval(small_model):
    m = fuse_rmsnorm(small_model)
    data = np.random.default_rng(0).integers(0, 32, (3, 10))
    return m, data


def test_evaluate_determinism_and_schema(small_eval):
    m, data = small_eval
    specs = EvalSpecs(weight=SYM4, act=ZP4, kv=QuantizerSpec(bits=4, granularity="grouped", group_size=8))
    ident = RotationSet.identity(m.cfg)
    r1, s1 = evaluate_model(m, ident, data, specs)
    r2, s2 = evaluate_model(m, ident, data, specs)
    assert r1.rows == r2.rows and s1 == s2
    assert {row[0] for row in r1.rows} == set(ACT_SITES) | set(KV_SITES)
    assert all(row[2] >= 0 and row[3] == 30 for row in r1.rows)
    assert s1["nll"] != s1["nll_fp"]
    assert s1["mean_rel_err"] == pytest.approx(r1.mean_rel_err())


def test_evaluate_fp_specs(small_eval):
    m, data = small_eval
    fine = QuantizerSpec(bits=40, mode="zeropoint", granularity="per_token")
    fine_w = QuantizerSpec(bits=40, mode="symmetric", granularity="per_token")
    rep, s = evaluate_model(m, hadamard_baseline(m.cfg, 0), data, EvalSpecs(weight=fine_w, act=fine))
    assert s["nll"] == pytest.approx(s["nll_fp"], abs=1e-6)
    assert s["mean_rel_err_kv"] is None
    assert rep.mean_rel_err() <= 1e-10
    _, s_none = evaluate_model(m, RotationSet.identity(m.cfg), data, EvalSpecs())
    assert s_none["nll"] == s_none["nll_fp"] and s_none["mean_rel_err"] == 0.0


def test_evaluate_rel_err_uses_fp_taps(small_eval):
    m, data = small_eval
    rots = hadamard_baseline(m.cfg, 1)
    rep, _ = evaluate_model(m, rots, data, EvalSpecs(act=ZP4))
    pr_taps = collect_pr(m, rots, data, sites=("attn_in",))
    assert pr_taps.size == 2 * 30
    from cornerquant.toy_transformer import fold_rotations, forward

    _, recs = forward(fold_rotations(m, rots), data, taps=("attn_in",))
    x = recs[0].data
    assert rep.get("attn_in", 0) == pytest.approx(relative_quant_error(x, None, ZP4), rel=1e-12)
    with pytest.raises(KeyError):
        rep.get("attn_in", 9)


def test_export_csv(tmp_path):
    rep = LayerErrorReport([("attn_in", 0, 1 / 3, 10), ("mlp_in", 1, 2.5e-17, 4)])
    export_csv(rep, tmp_path / "a.csv")
    export_csv(rep, tmp_path / "b.csv")
    raw = (tmp_path / "a.csv").read_bytes()
    assert raw == (tmp_path / "b.csv").read_bytes()
    assert b"\r" not in raw and raw.startswith(b"site,layer,rel_err,n_rows\n")
    assert read_csv(tmp_path / "a.csv").rows == rep.rows
    export_csv(LayerErrorReport(), tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "site,layer,rel_err,n_rows\n"


def test_export_pr_cdf_and_summary(tmp_path):
    export_pr_cdf(np.array([0.1, 0.5, 1.0]), 5, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "threshold,fraction" and len(lines) == 6
    assert lines[-1] == "1,1"
    summary_json({"b": 1, "a": 0.5}, tmp_path / "s.json")
    assert json.loads((tmp_path / "s.json").read_text()) == {"a": 0.5, "b": 1}


def test_pr_cdf_of_corner_taps_steps_at_one(tmp_path):
    corners = np.random.default_rng(0).choice([-1.0, 1.0], size=(50, 16))
    from cornerquant.corner_geometry import participation_ratios

    export_pr_cdf(participation_ratios(corners), 11, tmp_path / "c.csv")
    fractions = [float(line.split(",")[1]) for line in (tmp_path / "c.csv").read_text().splitlines()[1:]]
    assert fractions == [0.0] * 10 + [1.0]
