"""Command-line entry point.

Subcommands: train, eval, gradcheck, equiv, express, export, subset.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.
The RAM_LOG environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .errors import ConfigError, DataError, NumericError, RamError
from .evaluation import evaluate
from .expressive import construct, ground_truth_from_json, verify_separation
from .gradcheck import run_gradcheck
from .kb import (
    KnowledgeBase,
    build_kb,
    export_split,
    parse_normalized,
    parse_role_json,
    parse_tabular,
    subset_by_arity,
)
from .mathcore import make_rng
from .model import ModelConfig, ModelParams, score
from .presets import PRESET_KINDS, reference_score
from .training import TrainConfig, train, write_trace_csv

log = logging.getLogger("ramkb.cli")


def _read_config_file(path: Path) -> dict[str, str]:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _coerce(field_type: str, value: str):
    if field_type == "int":
        return int(value)
    if field_type == "float":
        return float(value)
    return value


def load_configs(config_path: Path | None, overrides: dict) -> tuple[ModelConfig, TrainConfig]:
    """Build model/train configs from a key=value file plus CLI overrides."""
    raw = _read_config_file(config_path) if config_path else {}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    model_fields = {f.name: f for f in fields(ModelConfig)}
    train_fields = {f.name: f for f in fields(TrainConfig)}
    model_kwargs: dict = {}
    train_kwargs: dict = {}
    for key, value in raw.items():
        if key == "mode":
            mode, preset = ModelConfig.parse_mode(str(value))
            model_kwargs["mode"] = mode
            if preset is not None:
                model_kwargs["preset"] = preset
        elif key in model_fields:
            try:
                model_kwargs[key] = _coerce(model_fields[key].type, str(value))
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
        elif key == "negatives":
            train_kwargs[key] = value if value == "full" else int(value)
        elif key in train_fields:
            try:
                train_kwargs[key] = _coerce(train_fields[key].type, str(value))
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return ModelConfig(**model_kwargs), TrainConfig(**train_kwargs)


def _sniff_and_parse(path: Path):
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if path.suffix in (".json", ".jsonl"):
        first = next((ln for ln in lines if ln.strip()), "")
        try:
            probe = json.loads(first) if first else {}
        except json.JSONDecodeError:
            probe = {}
        if isinstance(probe, dict) and "relation" in probe and "entities" in probe:
            return parse_normalized(lines)
        return parse_role_json(lines)
    return parse_tabular(lines)


def _find_split(data_dir: Path, split: str) -> Path | None:
    for ext in (".txt", ".tsv", ".jsonl", ".json"):
        path = data_dir / f"{split}{ext}"
        if path.exists():
            return path
    return None


def load_dataset(
    data_dir: str | Path,
    explicit_roles: bool = False,
    valid_fraction: float = 0.2,
    seed: int = 0,
) -> tuple[KnowledgeBase, dict]:
    """Load train/valid/test splits from a directory.

    When no validation file exists and `valid_fraction` > 0, that fraction
    of the training facts is held out deterministically.
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"data directory not found: {data_dir}")
    paths = {split: _find_split(data_dir, split) for split in ("train", "valid", "test")}
    if paths["train"] is None:
        raise DataError(f"no train split found under {data_dir}")
    raw = {
        split: _sniff_and_parse(path) if path else []
        for split, path in paths.items()
    }
    if not raw["valid"] and valid_fraction > 0 and raw["train"]:
        rng = make_rng(seed, 3)
        n_valid = int(valid_fraction * len(raw["train"]))
        order = rng.permutation(len(raw["train"]))
        hold = set(int(i) for i in order[:n_valid])
        raw["valid"] = [f for i, f in enumerate(raw["train"]) if i in hold]
        raw["train"] = [f for i, f in enumerate(raw["train"]) if i not in hold]
        log.info("held out %d training facts as validation", n_valid)
    kb = build_kb(raw["train"], raw["valid"], raw["test"], explicit_roles=explicit_roles)
    checksums = {
        split: hashlib.sha256(path.read_bytes()).hexdigest()
        for split, path in paths.items()
        if path
    }
    return kb, {"paths": {s: str(p) for s, p in paths.items() if p}, "sha256": checksums}


def _arity_predicate(spec: str | None):
    if spec is None or spec == "all":
        return lambda arity: True
    if spec.startswith(">="):
        floor = int(spec[2:])
        return lambda arity: arity >= floor
    if spec.startswith("<="):
        cap = int(spec[2:])
        return lambda arity: arity <= cap
    allowed = {int(tok) for tok in spec.split(",")}
    return lambda arity: arity in allowed


def cmd_train(args) -> int:
    overrides = {"seed": args.seed, "threads": args.threads, "mode": args.mode}
    model_cfg, train_cfg = load_configs(
        Path(args.config) if args.config else None, overrides
    )
    kb, data_info = load_dataset(
        args.data_dir,
        explicit_roles=model_cfg.mode == "explicit",
        valid_fraction=args.valid_fraction,
        seed=train_cfg.seed,
    )
    if args.arity_filter or args.ratio is not None:
        kb = subset_by_arity(
            kb,
            _arity_predicate(args.arity_filter),
            binary_keep_ratio=1.0 if args.ratio is None else args.ratio,
            seed=train_cfg.seed,
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    ckpt_path = out / "model.ramckpt"
    trace_path = out / "trace.csv"
    manifest = {
        "model_config": model_cfg.to_dict(),
        "train_config": train_cfg.to_dict(),
        "data": data_info,
        "dataset_stats": kb.stats(),
        "seed": train_cfg.seed,
        "artifacts": {
            "checkpoint": str(ckpt_path),
            "trace": str(trace_path),
            "manifest": str(manifest_path),
        },
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")

    result = train(kb, model_cfg, train_cfg, progress=True)
    ckpt.save_checkpoint(ckpt_path, result.params, kb.vocab)
    write_trace_csv(result.trace, trace_path)
    manifest["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    manifest["best_valid_mrr"] = result.best_valid_mrr
    manifest["epochs_run"] = len(result.trace)
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    print(f"checkpoint: {ckpt_path}")
    print(f"trace: {trace_path}")
    if result.best_valid_mrr is not None:
        print(f"best valid MRR: {result.best_valid_mrr:.4f}")
    return 0


def cmd_eval(args) -> int:
    params, vocab = ckpt.load_checkpoint(args.checkpoint)
    kb, _ = load_dataset(
        args.data_dir,
        explicit_roles=params.cfg.mode == "explicit",
        valid_fraction=args.valid_fraction,
        seed=args.seed if args.seed is not None else 0,
    )
    ckpt.check_vocab_compatible(vocab, kb.vocab)
    report = evaluate(params, kb, split=args.split, threads=args.threads or 1)
    print(report.table())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"eval_{args.split}.json").write_text(report.to_json(), encoding="utf-8")
        (out / f"eval_{args.split}_per_arity.csv").write_text(
            report.per_arity_csv(), encoding="utf-8"
        )
        print(f"report written to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(trials=args.trials, seed=args.seed or 0, tol=args.tol)
    for family, err in sorted(report.family_errors.items()):
        print(f"{family:12} max relative error {err:.3e}")
    print(f"overall max {report.max_error:.3e} (tolerance {report.tol:.1e})")
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


def cmd_equiv(args) -> int:
    if args.kind not in PRESET_KINDS:
        raise ConfigError(f"unknown preset {args.kind!r}; expected one of {PRESET_KINDS}")
    from .kb import Vocabulary
    from .kb import Fact as KFact

    rng = make_rng(args.seed or 0, 11)
    mode, preset = ModelConfig.parse_mode(f"preset:{args.kind}")
    cfg = ModelConfig(embed_dim=args.dim, mode=mode, preset=preset)
    vocab = Vocabulary()
    vocab.add_entity("h")
    vocab.add_entity("t")
    vocab.add_relation("r", 2)
    max_abs = 0.0
    max_rel = 0.0
    for _ in range(args.trials):
        params = ModelParams.init(cfg, vocab, seed=0)
        params.data[("ent",)] = rng.normal(0, 1, params.data[("ent",)].shape)
        params.data[("preset_u", 0)] = rng.normal(0, 1, params.data[("preset_u", 0)].shape)
        got = score(params, KFact(0, (0, 1)))
        ent = params.data[("ent",)]
        want = reference_score(args.kind, params.data[("preset_u", 0)], ent[0], ent[1])
        diff = abs(got - want)
        max_abs = max(max_abs, diff)
        max_rel = max(max_rel, diff / max(abs(want), 1e-300))
    print(f"{args.kind}: {args.trials} trials, max abs dev {max_abs:.3e}, "
          f"max rel dev {max_rel:.3e}")
    passed = max_rel <= 1e-9
    print("PASS" if passed else "FAIL")
    return 0 if passed else 1


def cmd_express(args) -> int:
    gt = ground_truth_from_json(Path(args.spec).read_text(encoding="utf-8"))
    params = construct(gt)
    report = verify_separation(gt, params)
    text = json.dumps(report.to_dict(), indent=2)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "separation.json").write_text(text, encoding="utf-8")
    return 0 if report.passed else 1


def cmd_export(args) -> int:
    params, vocab = ckpt.load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    exporters = {
        "entity": ckpt.export_entities_csv,
        "role": ckpt.export_roles_csv,
        "pattern": ckpt.export_patterns_csv,
    }
    kinds = list(exporters) if args.what == "all" else [args.what]
    for kind in kinds:
        path = out / f"{kind}.csv"
        path.write_text(exporters[kind](params, vocab), encoding="utf-8")
        print(f"wrote {path}")
    return 0


def cmd_subset(args) -> int:
    kb, _ = load_dataset(args.data_dir, valid_fraction=0.0)
    sub = subset_by_arity(
        kb,
        _arity_predicate(args.arity_filter),
        binary_keep_ratio=1.0 if args.ratio is None else args.ratio,
        seed=args.seed or 0,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "valid", "test"):
        path = out / f"{split}.jsonl"
        path.write_text(
            "".join(line + "\n" for line in export_split(sub, split)), encoding="utf-8"
        )
        print(f"wrote {path}")
    (out / "stats.json").write_text(
        json.dumps(sub.stats(), indent=2), encoding="utf-8"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ram", description="Role-aware n-ary relational KB completion"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, out_required=False):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        if data:
            p.add_argument("--data-dir", required=True)
        p.add_argument("--out", required=out_required, default=None)

    p_train = sub.add_parser("train", help="train a model, write checkpoint+trace+manifest")
    common(p_train, data=True, out_required=True)
    p_train.add_argument("--config", help="key=value config file")
    p_train.add_argument("--mode", help="latent | explicit | extended | preset:<Kind>")
    p_train.add_argument("--ratio", type=float, help="binary training fact keep ratio")
    p_train.add_argument("--arity-filter", help="e.g. '2,4,5' or '>=3' or 'all'")
    p_train.add_argument("--valid-fraction", type=float, default=0.2,
                         help="train fraction held out when no valid split exists")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(p_eval, data=True)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p_eval.add_argument("--valid-fraction", type=float, default=0.2)
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    common(p_grad)
    p_grad.add_argument("--trials", type=int, default=20)
    p_grad.add_argument("--tol", type=float, default=1e-4)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_equiv = sub.add_parser("equiv", help="preset vs reference bilinear scorer")
    common(p_equiv)
    p_equiv.add_argument("--kind", required=True)
    p_equiv.add_argument("--trials", type=int, default=200)
    p_equiv.add_argument("--dim", type=int, default=8)
    p_equiv.set_defaults(func=cmd_equiv)

    p_express = sub.add_parser("express", help="exact-separation construction check")
    common(p_express)
    p_express.add_argument("--spec", required=True, help="ground-truth JSON file")
    p_express.set_defaults(func=cmd_express)

    p_export = sub.add_parser("export", help="CSV export of learned parameters")
    common(p_export, out_required=True)
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--what", default="all",
                          choices=["entity", "role", "pattern", "all"])
    p_export.set_defaults(func=cmd_export)

    p_subset = sub.add_parser("subset", help="arity/ratio subsetting of a dataset")
    common(p_subset, data=True, out_required=True)
    p_subset.add_argument("--ratio", type=float, default=None)
    p_subset.add_argument("--arity-filter", default=None)
    p_subset.set_defaults(func=cmd_subset)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("RAM_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
