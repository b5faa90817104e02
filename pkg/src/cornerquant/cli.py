"""Command-line driver: ``python -m cornerquant <command>``.

Commands
--------
gen-data     write the token corpus, the outlier recipe and the perturbed model
calibrate    fit rotations; write a CRRS checkpoint, a trace CSV and a manifest
evaluate     quantization error report and toy NLL for each W-A-KV triplet
analyze-pr   participation-ratio CDFs per rotation variant
info         describe a container file, or print the default config

Exit codes: 0 success, 1 configuration error, 2 i/o error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .calibration import CalibConfig, calibrate_offline, calibrate_online, hadamard_baseline
from .config import FP_BITS, RunConfig, load_config, parse_triplet
from .containers import load_model, load_rotations, read_activation_dump, save_model, save_rotations
from .errors import ConfigError, EmptyAccumulatorError, InvalidInputError, InvalidSpecError, NumericalError
from .metrics import EvalSpecs, collect_pr, evaluate_model, export_csv, export_pr_cdf, summary_json
from .synthetic import apply_recipe, make_recipe, pack_bytes, synthetic_tokens
from .toy_transformer import RotationSet, ToyTransformer, fuse_rmsnorm, init_model

log = logging.getLogger("cornerquant")

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 1, 2, 3


class ContainerReadError(OSError):
    """A binary container or token file could not be parsed."""


# --- shared pipeline pieces ---------------------------------------------------


def build_model(cfg: RunConfig) -> tuple[ToyTransformer, object]:
    """Seeded toy model with the configured outlier recipe, RMSNorm fused."""
    mcfg = cfg.model_config()
    recipe = make_recipe(cfg.synthetic_spec(), mcfg)
    return fuse_rmsnorm(apply_recipe(init_model(mcfg), recipe)), recipe


def load_tokens(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """Calibration and held-out token arrays; held-out sequences follow the calibration ones."""
    n, h, t = cfg.data.n_sequences, cfg.data.heldout_sequences, cfg.data.seq_len
    if cfg.data.source == "synthetic":
        tokens = synthetic_tokens(n + h, t, cfg.seed, vocab=cfg.model.vocab)
    else:
        if cfg.model.vocab != 256:
            raise ConfigError("byte-level file data needs model.vocab = 256")
        raw = Path(cfg.data.path).read_bytes()
        if len(raw) < (n + h) * t:
            raise ConfigError(
                f"{cfg.data.path} holds {len(raw) // t} sequences of length {t}; need {n + h} (calibration + held-out)"
            )
        tokens = pack_bytes(raw, t, n + h)
    return tokens[:n], tokens[n:]


def initial_rotations(cfg: RunConfig) -> RotationSet:
    mcfg = cfg.model_config()
    if cfg.rotation_init == "identity":
        return RotationSet.identity(mcfg)
    if cfg.rotation_init == "hadamard":
        return hadamard_baseline(mcfg, cfg.seed)
    return read_rotations(cfg.rotation_init, cfg)


def read_rotations(path, cfg: RunConfig) -> RotationSet:
    try:
        rots = load_rotations(path)
    except InvalidInputError as e:
        raise ContainerReadError(f"{path}: {e}") from e
    try:
        rots.check(cfg.model_config())
    except InvalidInputError as e:
        raise ConfigError(f"checkpoint {path} does not match the model config: {e}") from e
    return rots


def resolve_rotations(spec: str, cfg: RunConfig) -> RotationSet:
    """``identity``, ``hadamard`` or a CRRS path."""
    if spec == "identity":
        return RotationSet.identity(cfg.model_config())
    if spec == "hadamard":
        return hadamard_baseline(cfg.model_config(), cfg.seed)
    if not Path(spec).is_file():
        raise ConfigError(f"rotations {spec!r} is neither identity, hadamard nor an existing file")
    return read_rotations(spec, cfg)


def calib_config(cfg: RunConfig) -> CalibConfig:
    c = cfg.calib
    kv = c.kv.to_spec(group_size=cfg.model.d_head) if c.kv is not None else None
    return CalibConfig(
        batch_size=c.batch_size,
        n_sequences=cfg.data.n_sequences,
        seq_len=cfg.data.seq_len,
        mode="quant_aware" if c.mode == "quant-aware" else "fp",
        act_spec=c.act.to_spec(),
        kv_spec=kv,
        seed=cfg.seed,
        epochs=c.epochs,
    )


def eval_specs(cfg: RunConfig, triplet: str) -> EvalSpecs:
    """Quantizers for a ``W-A-KV`` triplet; a width of 16 disables that quantizer."""
    w, a, kv = parse_triplet(triplet)
    e = cfg.eval
    return EvalSpecs(
        weight=None if w == FP_BITS else e.weight.to_spec(bits=w),
        act=None if a == FP_BITS else e.act.to_spec(bits=a),
        kv=None if kv == FP_BITS else e.kv.to_spec(bits=kv, group_size=cfg.model.d_head),
    )


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions() -> dict:
    return {"cornerquant": __version__, "numpy": np.__version__, "python": platform.python_version()}


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def write_manifest(cfg: RunConfig, command: str, out: Path, outputs: list[str], extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "seeds": {"seed": cfg.seed, "model": cfg.seed, "outliers": cfg.seed, "data": cfg.seed,
                  "hadamard": cfg.seed, "offline_sampling": cfg.seed},
        "versions": versions(),
        "outputs": {name: sha256(out / name) for name in outputs},
    }
    if extra:
        manifest.update(extra)
    write_json(manifest, out / f"manifest_{command}.json")


# --- commands -----------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig, out: Path) -> list[str]:
    """Token corpus (raw bytes, calibration then held-out), recipe and perturbed model."""
    if cfg.model.vocab > 256:
        raise ConfigError("gen-data writes one byte per token; model.vocab must be <= 256")
    model, recipe = build_model(cfg)
    calib, held = load_tokens(dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, source="synthetic")))
    (out / "tokens.bin").write_bytes(np.concatenate([calib, held]).astype(np.uint8).tobytes())
    (out / "recipe.json").write_text(recipe.to_json(), encoding="utf-8", newline="\n")
    save_model(model, out / "model.crtm")
    outputs = ["tokens.bin", "recipe.json", "model.crtm"]
    write_manifest(cfg, "gen-data", out, outputs, {"tokens": {"calibration": int(calib.shape[0]),
                                                             "heldout": int(held.shape[0]),
                                                             "seq_len": int(calib.shape[1])}})
    return outputs


def cmd_calibrate(cfg: RunConfig, out: Path) -> list[str]:
    model, _ = build_model(cfg)
    calib, _ = load_tokens(cfg)
    init = initial_rotations(cfg)
    ccfg = calib_config(cfg)
    if cfg.calib.mode == "offline":
        rots, trace = calibrate_offline(model, calib, ccfg, init, out / "activations")
    else:
        rots, trace = calibrate_online(model, calib, ccfg, init)
    save_rotations(rots, out / "rotations.crrs")
    trace.to_csv(out / "trace.csv")
    outputs = ["rotations.crrs", "trace.csv"]
    write_manifest(cfg, "calibrate", out, outputs, {"mode": cfg.calib.mode, "steps": len(trace.records)})
    if trace.records:
        last = trace.records[-1]
        log.info("calibrated %d steps; last R1 objective %.6g -> %.6g", len(trace.records),
                 last["r1_objective"], last["r1_objective_after"])
    return outputs


def cmd_evaluate(cfg: RunConfig, rotations: str, out: Path) -> list[str]:
    model, _ = build_model(cfg)
    _, held = load_tokens(cfg)
    rots = resolve_rotations(rotations, cfg)
    label = rotations if rotations in ("identity", "hadamard") else Path(rotations).name
    outputs = []
    for triplet in cfg.eval.triplets:
        report, summary = evaluate_model(model, rots, held, eval_specs(cfg, triplet), batch_size=cfg.eval.batch_size)
        summary["triplet"] = triplet
        summary["rotations"] = label
        csv_name, json_name = f"report_{triplet}.csv", f"summary_{triplet}.json"
        export_csv(report, out / csv_name)
        summary_json(summary, out / json_name)
        outputs += [csv_name, json_name]
        log.info("%s: mean rel_err %.6g, nll %.6f (fp %.6f)", triplet, summary["mean_rel_err"],
                 summary["nll"], summary["nll_fp"])
    write_manifest(cfg, "evaluate", out, outputs, {"rotations": label})
    return outputs


def cmd_analyze_pr(cfg: RunConfig, rotations: list[str], out: Path) -> list[str]:
    """PR-CDF at the R1 sites for identity, Hadamard and each ``name=path`` checkpoint."""
    model, _ = build_model(cfg)
    _, held = load_tokens(cfg)
    variants = {"identity": "identity", "hadamard": "hadamard"}
    for item in rotations:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = "calibrated" if len(rotations) == 1 else Path(item).stem, item
        if not name or name in variants:
            raise ConfigError(f"duplicate or empty variant name in {item!r}")
        variants[name] = path
    outputs = []
    for name, spec in variants.items():
        pr = collect_pr(model, resolve_rotations(spec, cfg), held)
        fname = f"pr_cdf_{name}.csv"
        export_pr_cdf(pr, cfg.pr.grid, out / fname)
        outputs.append(fname)
        log.info("%s: median normalized PR %.4f", name, float(np.median(pr)))
    write_manifest(cfg, "analyze-pr", out, outputs)
    return outputs


def cmd_info(path: str | None) -> dict:
    """Header summary of a CRTM/CRRS/CRAD file, or package defaults when ``path`` is None."""
    if path is None:
        return {"version": __version__, "default_config": RunConfig().to_dict()}
    p = Path(path)
    magic = p.read_bytes()[:4]
    try:
        if magic == b"CRTM":
            m = load_model(p)
            return {"container": "CRTM", **dataclasses.asdict(m.cfg), "fused": m.fused}
        if magic == b"CRRS":
            r = load_rotations(p)
            return {"container": "CRRS", "d_model": r.r1.shape[0], "n_layers": len(r.r2),
                    "n_heads": r.r2[0].n_blocks if r.r2 else 0, "d_head": r.r2[0].block_dim if r.r2 else 0,
                    "use_r3": r.use_r3, "use_r4": r.use_r4, "identity": r.is_identity()}
        if magic == b"CRAD":
            site, layer, data = read_activation_dump(p)
            return {"container": "CRAD", "site": site, "layer": layer, "rows": int(data.shape[0]),
                    "d": int(data.shape[1])}
    except InvalidInputError as e:
        raise ContainerReadError(f"{p}: {e}") from e
    raise ContainerReadError(f"{p}: not a CRTM, CRRS or CRAD container")


# --- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cornerquant", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mode=False):
        p.add_argument("--config", help="YAML run config (defaults when omitted)")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="override the config seed")
        if mode:
            p.add_argument("--mode", choices=["fp", "quant-aware", "offline"], help="calibration mode")

    common(sub.add_parser("gen-data", help="write tokens, outlier recipe and model"))
    common(sub.add_parser("calibrate", help="fit rotations"), mode=True)
    p = sub.add_parser("evaluate", help="quantization error and toy NLL per W-A-KV triplet")
    common(p)
    p.add_argument("--rotations", default="hadamard", help="identity, hadamard or a CRRS checkpoint")
    p = sub.add_parser("analyze-pr", help="participation-ratio CDFs per rotation variant")
    common(p)
    p.add_argument("--rotations", action="append", default=[], help="[name=]path to a CRRS checkpoint; repeatable")
    p = sub.add_parser("info", help="describe a container file or print defaults")
    p.add_argument("path", nargs="?")
    return parser


def _run(args) -> int:
    if args.command == "info":
        print(json.dumps(cmd_info(args.path), indent=2, sort_keys=True))
        return 0
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "mode", None):
        cfg = cfg.with_mode(args.mode)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "gen-data":
        written = cmd_gen_data(cfg, out)
    elif args.command == "calibrate":
        written = cmd_calibrate(cfg, out)
    elif args.command == "evaluate":
        written = cmd_evaluate(cfg, args.rotations, out)
    else:
        written = cmd_analyze_pr(cfg, args.rotations, out)
    for name in written:
        print(out / name)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _run(args)
    except (ConfigError, InvalidSpecError, InvalidInputError, yaml.YAMLError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, EmptyAccumulatorError, FloatingPointError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
