"""Command-line interface: ``overrule fit | predict | evaluate | synth-bench``.

Exit codes: 0 success, 2 config error, 3 data error, 4 solver shortfall.
On failure one line ``overrule: error <CODE>: <detail>`` goes to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from .data import DataError, Schema, load_csv
from .estimators import EstimatorError, Policy
from .pipeline import (
    DegenerateError,
    IN_OVERLAP,
    OverRuleConfig,
    ShortfallError,
    _reference_count,
    base_labels,
    evaluate,
    fit_overlap,
    fit_support,
    load_model,
    predict,
)
from .rules import RuleError
from .solver import SearchConfig, SolverError
from .synth import DEFAULT_GRID, BENCH_REFERENCE, BENCH_SEARCH, SynthConfig, summarize, synth_bench
from .theory import theory_report

log = logging.getLogger("overrule")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SHORTFALL = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# flag name -> (config field, type)
_FIT_FLAGS = {
    "alpha": float, "beta": float, "eps": float,
    "support_form": str, "overlap_form": str,
    "support_lambda0": float, "support_lambda1": float,
    "overlap_lambda0": float, "overlap_lambda1": float,
    "base": str, "l2_strength": float, "knn_k": int, "knn_threshold": str,
    "cbb_alpha": float, "num_quantiles": int, "reference_count": int, "seed": int,
}
_SEARCH_FLAGS = {
    "beam_width": int, "columns_per_iter": int, "max_cg_iterations": int, "max_degree": int,
}


def _read_json(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p}: {e}") from None


def build_config(args: argparse.Namespace) -> OverRuleConfig:
    """Config file values, then command-line flags on top."""
    raw = _read_json(args.config)
    search = dict(raw.pop("search", {}) or {})
    for name in _FIT_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            raw[name] = v
    for name in _SEARCH_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            search[name] = v
    try:
        raw["search"] = SearchConfig(**search)
        return OverRuleConfig.from_dict(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def _load_policy(args, data, schema: Schema) -> Policy | None:
    if getattr(args, "policy", None):
        return Policy.load(args.policy)
    if schema.policy_column:
        if data.extra is None or schema.policy_column not in data.extra.columns:
            raise DataError(f"policy column {schema.policy_column!r} not in data")
        return Policy.from_column(data.extra[schema.policy_column].tolist())
    return None


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_fit(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    schema = Schema.load(args.schema)
    data = load_csv(args.data, schema)
    if data.groups is None:
        raise DataError("schema declares no group column; overlap needs group labels")
    policy = _load_policy(args, data, schema)
    out = _out_dir(args.output)

    support, bd = fit_support(data, cfg)
    model = fit_overlap(data, support, cfg, policy, bd)
    model.save(out / "model.json")
    report = [f"# rows: {len(data)}   groups: {list(data.group_set)}   base: {cfg.base}   eps: {cfg.label_eps:g}", ""]
    report.append(model.rules_text(data))
    (out / "rules.txt").write_text("\n".join(report) + "\n")

    fm = model.fit_metrics
    row = {
        "n_rows": fm["n_rows"],
        "n_support": fm["n_support"],
        "n_base_overlap": fm["n_base_overlap"],
        **{f"train_{k}": v for k, v in fm["train_vs_base"].items()},
        "support_clauses": len(support.clauses),
        "support_literals": support.literal_count,
        "overlap_clauses": len(model.overlap.clauses),
        "overlap_literals": model.overlap.literal_count,
        "support_coverage": support.provenance["coverage"],
        "support_reference_coverage": support.provenance["negative_coverage"],
        "overlap_coverage": model.overlap.provenance["coverage"],
    }
    pd.DataFrame([row]).to_csv(out / "metrics.csv", index=False)

    # binary variables behind the literal set (each literal has its negation)
    d_bin = max(1, len(bd.literals) // 2)
    n_ref = _reference_count(cfg, len(data), len(data.features))
    theory = {}
    for name, lam in (("support", cfg.support_lambda1), ("overlap", cfg.overlap_lambda1)):
        rep = theory_report(len(data), n_ref, d_bin, lam)
        theory[name] = rep.to_dict() if rep else {"note": f"lambda1 = {lam} outside (0, 1]; no bound"}
    (out / "theory.json").write_text(json.dumps(theory, indent=2))
    print(report[0])
    print(report[-1])
    return EXIT_OK


def _read_rows(path: str) -> pd.DataFrame:
    p = Path(path)
    if not p.exists():
        raise DataError(f"data file not found: {p}")
    return pd.read_csv(p, dtype=str, skipinitialspace=True)


def run_predict(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    rows = _read_rows(args.data)
    try:
        labels = predict(model, rows)
    except (KeyError, ValueError) as e:
        raise DataError(f"cannot evaluate rules on {args.data}: {e}") from None
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"region": labels}).to_csv(out, index=False)
    counts = pd.Series(labels).value_counts()
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def run_evaluate(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    rows = _read_rows(args.data)
    pred = predict(model, rows) == IN_OVERLAP
    if args.truth_column:
        if args.truth_column not in rows.columns:
            raise DataError(f"truth column {args.truth_column!r} not in {args.data}")
        truth = pd.to_numeric(rows[args.truth_column], errors="raise").to_numpy() != 0
        against = args.truth_column
    else:
        if model.base is None:
            raise ConfigError("model has no base estimator; pass --truth-column")
        bd = model.binarize(rows)
        truth = base_labels(model.base, bd.origin, model.config).labels & model.support.evaluate(bd)
        against = "base_estimator"
    m = evaluate(pred, truth, (model.support, model.overlap))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([{"against": against, **m.to_dict()}]).to_csv(out, index=False)
    print(f"balanced_accuracy={m.balanced_accuracy:.4f} fpr={m.fpr:.4f} fnr={m.fnr:.4f} literals={m.literal_count}")
    return EXIT_OK


def run_synth_bench(args: argparse.Namespace) -> int:
    raw = _read_json(args.config)
    grid = dict(raw.get("grid", {}))
    for key, flag in (("alpha", "alphas"), ("lambda0", "lambda0s"), ("lambda1", "lambda1s"),
                      ("beam_width", "beam_widths"), ("seed", "seeds")):
        v = getattr(args, flag, None)
        if v:
            grid[key] = tuple(v)
    unknown = set(grid) - set(DEFAULT_GRID)
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    try:
        synth = SynthConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.get("synth", {}).items()})
        search = replace(BENCH_SEARCH, **raw.get("search", {}))
        if args.max_cg_iterations:
            search = replace(search, max_cg_iterations=args.max_cg_iterations)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    ref = args.reference_count or raw.get("reference_count", BENCH_REFERENCE)
    out = _out_dir(args.output)
    bench = synth_bench(grid, synth, search, int(ref), args.jobs)
    bench.to_csv(out / "bench.csv", index=False)
    summary = summarize(bench)
    summary.to_csv(out / "summary.csv", index=False)
    by_b = bench.groupby("beam_width").recovered.mean()
    print(" ".join(f"B={b}:Rec={r:.2f}" for b, r in by_b.items()))
    return EXIT_OK


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    for name, typ in {**_FIT_FLAGS, **_SEARCH_FLAGS}.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="overrule", description="Boolean-rule overlap characterization")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="learn support and overlap rules")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--config")
    p.add_argument("--policy", help="JSON policy rule file")
    p.add_argument("--output", default="overrule_out")
    _add_fit_flags(p)
    p.set_defaults(func=run_fit)

    p = sub.add_parser("predict", help="label rows with a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--output", default="predictions.csv")
    p.set_defaults(func=run_predict)

    p = sub.add_parser("evaluate", help="score a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--truth-column")
    p.add_argument("--output", default="metrics.csv")
    p.set_defaults(func=run_evaluate)

    p = sub.add_parser("synth-bench", help="planted-exclusion recovery sweep")
    p.add_argument("--config")
    p.add_argument("--output", default="bench_out")
    p.add_argument("--alphas", type=float, nargs="+")
    p.add_argument("--lambda0s", type=float, nargs="+")
    p.add_argument("--lambda1s", type=float, nargs="+")
    p.add_argument("--beam-widths", dest="beam_widths", type=int, nargs="+")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--reference-count", type=int)
    p.add_argument("--max-cg-iterations", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=run_synth_bench)
    return ap


def _fail(code: int, name: str, detail: str) -> int:
    print(f"overrule: error {name}: {detail}".replace("\n", " "), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "CONFIG", str(e))
    except (ShortfallError, SolverError) as e:
        return _fail(EXIT_SHORTFALL, "SHORTFALL", str(e))
    except (DataError, DegenerateError, EstimatorError, RuleError) as e:
        return _fail(EXIT_DATA, "DATA", str(e))


if __name__ == "__main__":
    sys.exit(main())
