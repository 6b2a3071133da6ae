"""Command-line entry point: ``oiaedl gen|train|eval|inspect|sweep-threshold``.

Exit codes: 0 success, 1 usage error, 2 data or checkpoint error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .metrics import evaluate
from .model import ModelConfig, infer
from .nn import Rng
from .scenesim import (
    ACTIONS,
    EXPLANATIONS,
    DatasetError,
    GeneratorConfig,
    corrupt,
    generate_dataset,
    perturb_heavy,
    read_dataset,
    split_samples,
    write_dataset,
)
from .trainer import (
    Strategies,
    TrainConfig,
    compute_uncertainties,
    select_threshold,
    train_phase1,
    train_phase2,
)

__all__ = ["main", "UsageError", "DataError"]

DATASET_FILE = "dataset.jsonl"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _dataset_path(path) -> Path:
    p = Path(path)
    return p / DATASET_FILE if p.is_dir() else p


def _load_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read config ({exc})") from None
    if not isinstance(data, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return data


def _configs(path, seed) -> tuple[ModelConfig, TrainConfig]:
    """Training config file: ``{"model": {...}, "train": {...}}``, both optional."""
    raw = _load_json(path) if path else {}
    unknown = set(raw) - {"model", "train"}
    if unknown:
        raise DataError(f"{path}: unknown sections {sorted(unknown)}")
    try:
        mcfg = ModelConfig.from_dict(raw.get("model", {}))
        tdict = dict(raw.get("train", {}))
        if seed is not None:
            tdict["seed"] = seed
        tcfg = TrainConfig.from_dict(tdict)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad training config ({exc})") from None
    return mcfg, tcfg


def _read(path, dim=None):
    p = _dataset_path(path)
    try:
        return read_dataset(p, dim)
    except FileNotFoundError:
        raise DataError(f"{p}: no such dataset") from None


def _select(samples, split: str, stress: str, seed: int):
    chosen = samples if split == "all" else split_samples(samples, split)
    if not chosen:
        raise DataError(f"split {split!r} is empty")
    if stress == "heavy":
        rng = Rng(seed).stream("heavy", split)
        chosen = [perturb_heavy(s, rng, seed, (split, i)) for i, s in enumerate(chosen)]
    elif stress.startswith("corrupt"):
        severity = float(stress.split(":", 1)[1]) if ":" in stress else 0.7
        rng = Rng(seed).stream("corrupt", split)
        chosen = [corrupt(s, severity, rng) for s in chosen]
    return chosen


def _format(records, fmt: str) -> str:
    buf = io.StringIO()
    if fmt == "json-lines":
        for rec in records:
            buf.write(json.dumps(rec, sort_keys=True) + "\n")
        return buf.getvalue()
    columns = []
    for rec in records:
        columns.extend(k for k in rec if k not in columns)
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow({k: ("" if v is None else v) for k, v in rec.items()})
    return buf.getvalue()


def _emit(text: str, path) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def cmd_gen(args) -> None:
    try:
        cfg = GeneratorConfig.load(args.config) if args.config else GeneratorConfig()
    except OSError as exc:
        raise DataError(f"{args.config}: {exc}") from None
    except (ValueError, TypeError) as exc:
        raise DataError(f"{args.config}: bad generator config ({exc})") from None
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = generate_dataset(cfg)
    write_dataset(samples, out / DATASET_FILE)
    (out / "generator.json").write_text(json.dumps(cfg.to_flat(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(samples)} samples to {out / DATASET_FILE}")


def cmd_train(args) -> None:
    if args.phase == 2 and not args.init_checkpoint:
        raise UsageError("train --phase 2 needs --init-checkpoint")
    try:
        strategies = Strategies.parse(args.strategies)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.phase == 1 and args.strategies:
        raise UsageError("--strategies only applies to --phase 2")
    mcfg, tcfg = _configs(args.config, args.seed)
    params = None
    if args.init_checkpoint:
        ckpt = load_checkpoint(args.init_checkpoint)
        if args.config is None or "model" not in _load_json(args.config):
            mcfg = ckpt.config
        elif ckpt.config != mcfg:
            raise DataError("--init-checkpoint was trained with a different model config")
        params = ckpt.params
    samples = _read(args.data, mcfg.region_feature_dim)
    out = Path(args.out)
    train, val = split_samples(samples, "train"), split_samples(samples, "val")
    if args.val_stress != "none":
        val = _select(samples, "val", args.val_stress, tcfg.seed)
    log_path = out / f"phase{args.phase}_log.jsonl"
    if args.phase == 1:
        result = train_phase1(train, mcfg, tcfg, params, val=val, out_dir=out, log_path=log_path)
    else:
        result = train_phase2(params, train, mcfg, tcfg, strategies, val=val, out_dir=out,
                              log_path=log_path)
    (out / f"phase{args.phase}_config.json").write_text(
        json.dumps({"model": mcfg.to_dict(), "train": tcfg.to_dict(),
                    "strategies": strategies.label()}, indent=2, sort_keys=True) + "\n")
    st = result.state
    print(f"phase {args.phase}: best epoch {st.best_epoch}, val macro-F1 {st.best_score:.4f}, "
          f"checkpoint {st.checkpoint_path}")


def cmd_eval(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    samples = _select(_read(args.data, ckpt.config.region_feature_dim), args.split, args.stress,
                      args.seed)
    report = evaluate(ckpt.params, samples, ckpt.config)
    records = [{"split": args.split, **row} for row in report.rows()]
    _emit(_format(records, args.format), args.report)
    if args.report:
        s = report.summary()
        print(f"{args.split}: action micro-F1 {s['action_micro_f1']:.4f}, "
              f"explanation micro-F1 {s['explanation_micro_f1']:.4f} -> {args.report}")


def _parse_ids(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--ids expects comma-separated integers, got {text!r}") from None


def cmd_inspect(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config
    samples = _read(args.data, cfg.region_feature_dim)
    by_id = {s.id: s for s in samples}
    wanted = _parse_ids(args.ids)
    missing = [i for i in wanted if i not in by_id]
    if missing:
        raise DataError(f"unknown sample ids {missing}")
    chosen = [by_id[i] for i in wanted]
    out = infer(ckpt.params, chosen, cfg)
    a_names = ACTIONS if cfg.n_actions == len(ACTIONS) else [f"a{i}" for i in range(cfg.n_actions)]
    e_names = (EXPLANATIONS if cfg.n_explanations == len(EXPLANATIONS)
               else [f"e{i}" for i in range(cfg.n_explanations)])
    records = []
    for k, s in enumerate(chosen):
        weights = out.selector_weights[k]
        n = s.n_regions
        for a, name in enumerate(a_names):
            w = weights[a]
            ranking = [("global" if j == n else str(j)) for j in np.argsort(-w, kind="stable")]
            records.append({"id": s.id, "kind": "selector", "head": name,
                            "weights": " ".join(repr(float(x)) for x in w),
                            "ranking": " ".join(ranking)})
        for group, names, ev, truth in (("action", a_names, out.actions, s.actions),
                                        ("explanation", e_names, out.explanations, s.explanations)):
            for j, name in enumerate(names):
                records.append({"id": s.id, "kind": group, "head": name,
                                "alpha_present": float(ev.alpha[k, j, 0]),
                                "alpha_absent": float(ev.alpha[k, j, 1]),
                                "uncertainty": float(ev.uncertainty[k, j]),
                                "entropy_bits": float(ev.entropy[k, j]),
                                "p_present": float(ev.probability[k, j, 0]),
                                "label": int(truth[j])})
    _emit(_format(records, args.format), args.report)


def cmd_sweep(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    samples = _select(_read(args.data, ckpt.config.region_feature_dim), args.split, args.stress,
                      args.seed)
    report = compute_uncertainties(ckpt.params, samples, ckpt.config)
    quantiles = None
    if args.quantiles:
        try:
            quantiles = [float(q) for q in args.quantiles.split(",")]
        except ValueError:
            raise UsageError("--quantiles expects comma-separated numbers") from None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        choice = select_threshold(report, quantiles=quantiles, criterion=args.criterion)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    records = [{"quantile": q, "tau_m": tau, "score": score, "selected": q == choice.quantile}
               for q, tau, score in choice.candidates]
    records.append({"quantile": choice.quantile, "tau_m": choice.tau, "auc": choice.auc,
                    "fallback": choice.fallback, "n": len(report),
                    "n_errors": int((~report.correct).sum())})
    _emit(_format(records, args.format), args.report)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="oiaedl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen", help="write a synthetic dataset")
    g.add_argument("--config", help="JSON generator config (flat keys)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="run training phase 1 or 2")
    t.add_argument("--phase", type=int, choices=(1, 2), required=True)
    t.add_argument("--strategies", help="phase-2 strategies, e.g. sp,rw,ag")
    t.add_argument("--config", help='JSON {"model": {...}, "train": {...}}')
    t.add_argument("--seed", type=int)
    t.add_argument("--data", required=True, help="dataset file or directory")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--init-checkpoint")
    t.add_argument("--val-stress", default="none",
                   help="perturb the validation split: none, heavy or corrupt[:severity]")
    t.set_defaults(func=cmd_train)

    def data_args(p, default_split):
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True, help="dataset file or directory")
        p.add_argument("--split", default=default_split, choices=("train", "val", "test", "all"))
        p.add_argument("--stress", default="none",
                       help="none, heavy or corrupt[:severity] applied to the split")
        p.add_argument("--seed", type=int, default=7, help="stream seed for --stress")
        p.add_argument("--format", choices=("csv", "json-lines"), default="csv")
        p.add_argument("--report", help="output file (default stdout)")

    e = sub.add_parser("eval", help="score a checkpoint on a split")
    data_args(e, "test")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="per-head evidence and selector weights for samples")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--ids", required=True, help="comma-separated sample ids")
    i.add_argument("--format", choices=("csv", "json-lines"), default="csv")
    i.add_argument("--report")
    i.set_defaults(func=cmd_inspect)

    w = sub.add_parser("sweep-threshold", help="uncertainty-threshold diagnostics")
    data_args(w, "val")
    w.add_argument("--quantiles", help="comma-separated candidate quantiles")
    w.add_argument("--criterion", default="balanced_accuracy",
                   choices=("balanced_accuracy", "youden"))
    w.set_defaults(func=cmd_sweep)
    return parser


def _check_stress(value: str) -> None:
    if value in ("none", "heavy"):
        return
    if value.startswith("corrupt"):
        rest = value[len("corrupt"):]
        if rest == "":
            return
        try:
            if rest.startswith(":") and 0.0 <= float(rest[1:]) <= 1.0:
                return
        except ValueError:
            pass
    raise UsageError(f"unrecognised stress value {value!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        for attr in ("stress", "val_stress"):
            if hasattr(args, attr):
                _check_stress(getattr(args, attr))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s")
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (DataError, DatasetError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
