"""Command-line entry points for every pipeline stage.

Exit codes: 0 success, 1 validation error (bad flags or inputs, overwrite
refusal), 2 runtime failure. Every run appends a line with the config hash
and seed to a run log, and every artifact file carries the config hash
that produced it; re-running with a changed config refuses to overwrite
artifacts unless --force is given.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from . import datamodel, explain, metrics, synthetic, tree, tuning, usability

OK, VALIDATION_ERROR, RUNTIME_ERROR = 0, 1, 2


class UsageError(ValueError):
    """User-facing validation problem; exits with code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits 2; spec wants 1
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _config_hash(command: str, args: argparse.Namespace) -> str:
    payload = {
        "command": command,
        "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("force", "func", "command")},
    }
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode("utf-8")).hexdigest()
    return digest[:12]


def _append_run_log(directory: str, command: str, config_hash: str, seed: Optional[int]) -> None:
    os.makedirs(directory, exist_ok=True)
    entry = {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
    }
    with open(os.path.join(directory, "run_log.jsonl"), "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, sort_keys=True))
        fh.write("\n")


def _existing_hash(path: str) -> Optional[str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            body = fh.read()
    except OSError:
        return None
    first = body.splitlines()[0] if body else ""
    if first.startswith("#"):
        if "config_hash=" in first:
            return first.split("config_hash=", 1)[1].strip()
        return None
    try:
        payload = json.loads(body)
    except json.JSONDecodeError:
        return None
    return payload.get("config_hash") if isinstance(payload, dict) else None


def _check_overwrite(path: str, config_hash: str, force: bool) -> None:
    if not os.path.exists(path):
        return
    existing = _existing_hash(path)
    if existing is not None and existing != config_hash and not force:
        raise UsageError(
            f"{path} was produced by config {existing}, current config is {config_hash}; "
            "pass --force to overwrite"
        )


def _write_json_artifact(path: str, payload: dict, config_hash: str, force: bool) -> None:
    _check_overwrite(path, config_hash, force)
    body = {"config_hash": config_hash, **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv_artifact(path: str, lines: list[str], config_hash: str, force: bool) -> None:
    _check_overwrite(path, config_hash, force)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write("\n".join(lines))
        fh.write("\n")


def _require_file(path: str, flag: str) -> str:
    if not path or not os.path.exists(path):
        raise UsageError(f"{flag} file not found: {path!r}")
    return path


def _load_schema(args: argparse.Namespace) -> datamodel.FeatureSchema:
    if getattr(args, "schema", None):
        _require_file(args.schema, "--schema")
        return datamodel.FeatureSchema.from_json_file(args.schema)
    return datamodel.default_schema()


def _load_kb(args: argparse.Namespace) -> explain.KnowledgeBase:
    if getattr(args, "kb", None):
        _require_file(args.kb, "--kb")
        return explain.KnowledgeBase.from_json_file(args.kb)
    return explain.default_knowledge_base()


def _make_backend(args: argparse.Namespace) -> explain.LlmBackend:
    return explain.make_backend(args.backend, url=getattr(args, "endpoint", ""), model=getattr(args, "model_name", "default"))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace) -> int:
    _require_file(args.config, "--config")
    with open(args.config, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    schema = _load_schema(args)
    rules = tuple(
        synthetic.PlantedRule(feature=r["feature"], value=r["value"], direction=r["direction"])
        for r in raw.get("planted_rules", [])
    )
    config = synthetic.SyntheticConfig(
        n_cases=raw["n_cases"],
        positive_share=raw["positive_share"],
        planted_rules=rules,
        label_noise=raw.get("label_noise", 0.0),
        missing_rate=raw.get("missing_rate", {}),
        seed=raw.get("seed", args.seed),
    )
    panel = synthetic.generate_synthetic(config, schema)
    config_hash = _config_hash("gen-data", args)
    _check_overwrite(args.out, config_hash, args.force)
    datamodel.save_panel(panel, args.out, header_comment=f"config_hash={config_hash}")
    _append_run_log(os.path.dirname(os.path.abspath(args.out)), "gen-data", config_hash, config.seed)
    print(f"wrote {len(panel.records)} records for {config.n_cases} students to {args.out}")
    return OK


def _grid_from_args(args: argparse.Namespace) -> tuning.GridSpec:
    if getattr(args, "grid_file", None):
        _require_file(args.grid_file, "--grid-file")
        with open(args.grid_file, "r", encoding="utf-8") as fh:
            return tuning.GridSpec.from_dict({**json.load(fh), "seed": args.seed})
    if args.grid == "default":
        return tuning.GridSpec(seed=args.seed)
    # a small grid for smoke runs and fixtures
    return tuning.GridSpec(depth_range=(1, 6), leaf_range=(5, 15), seed=args.seed)


def cmd_train(args: argparse.Namespace) -> int:
    _require_file(args.data, "--data")
    schema = _load_schema(args)
    panel = datamodel.load_panel(args.data, schema)
    records = panel.for_year(args.cohort_year)
    if not records:
        raise UsageError(f"no records for cohort year {args.cohort_year} in {args.data}")
    if any(r.outcome is None for r in records):
        raise UsageError("training data must be fully labeled")

    labels = [1 if r.outcome == datamodel.LABEL_ATRISK else 0 for r in records]
    train_idx, holdout_idx = tuning.stratified_holdout(labels, args.holdout, args.seed)
    train_records = [records[i] for i in train_idx]
    holdout_ids = sorted({records[i].student_id for i in holdout_idx})

    builder = datamodel.MatrixBuilder(schema, args.cohort_year, args.missing_policy).fit(train_records)
    matrix = builder.transform(train_records)

    grid = _grid_from_args(args)
    result = tuning.grid_search(matrix, grid)
    final_tree = tree.train(matrix, result.best)

    config_hash = _config_hash("train", args)
    os.makedirs(args.out_dir, exist_ok=True)
    year = args.cohort_year
    model_payload = {
        "format": "model/v1",
        "cohort_year": year,
        "tree": tree.serialize_tree(final_tree),
        "transform": builder.to_dict(),
        "best": {
            "criterion": result.best.criterion,
            "max_depth": result.best.max_depth,
            "min_samples_leaf": result.best.min_samples_leaf,
            "cv_weighted_f1": result.best_mean,
        },
    }
    _write_json_artifact(os.path.join(args.out_dir, f"model_year{year}.json"), model_payload, config_hash, args.force)
    _write_csv_artifact(
        os.path.join(args.out_dir, f"cv_table_year{year}.csv"), tuning.cv_table_lines(result), config_hash, args.force
    )
    _write_json_artifact(
        os.path.join(args.out_dir, f"holdout_year{year}.json"),
        {"cohort_year": year, "student_ids": holdout_ids},
        config_hash,
        args.force,
    )
    _append_run_log(args.out_dir, "train", config_hash, args.seed)
    print(
        f"cohort year {year}: best {result.best.criterion}/depth={result.best.max_depth}/"
        f"leaf={result.best.min_samples_leaf} cv weighted F1 {result.best_mean:.4f} "
        f"({len(train_records)} train, {len(holdout_ids)} holdout)"
    )
    return OK


def _load_model(path: str):
    _require_file(path, "--model")
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "model/v1":
        raise UsageError(f"{path} is not a model file")
    fitted = datamodel.MatrixBuilder.from_dict(payload["transform"])
    return tree.deserialize_tree(payload["tree"]), fitted, payload


def cmd_evaluate(args: argparse.Namespace) -> int:
    _require_file(args.data, "--data")
    model_tree, builder, payload = _load_model(args.model)
    year = payload["cohort_year"]
    panel = datamodel.load_panel(args.data, builder.schema)
    records = panel.for_year(year)
    if args.ids:
        _require_file(args.ids, "--ids")
        with open(args.ids, "r", encoding="utf-8") as fh:
            wanted = set(json.load(fh)["student_ids"])
        records = [r for r in records if r.student_id in wanted]
    if not records:
        raise UsageError(f"no records to evaluate for cohort year {year}")
    if any(r.outcome is None for r in records):
        raise UsageError("evaluation data must be labeled")

    matrix = builder.transform(records)
    preds, _ = tree.predict_batch(model_tree, matrix.values)
    report = metrics.class_report(preds, matrix.labels, cohort_year=year)
    curve = metrics.roc_auc(tree.atrisk_scores(model_tree, matrix.values), matrix.labels)

    config_hash = _config_hash("evaluate", args)
    os.makedirs(args.out_dir, exist_ok=True)
    _write_json_artifact(
        os.path.join(args.out_dir, f"report_year{year}.json"),
        {"report": report.to_dict(), "auc": curve.auc},
        config_hash,
        args.force,
    )
    _write_csv_artifact(
        os.path.join(args.out_dir, f"roc_year{year}.csv"), metrics.roc_csv_lines(curve), config_hash, args.force
    )
    _append_run_log(args.out_dir, "evaluate", config_hash, None)
    print(metrics.render_comparison_table(report))
    print(f"AUC: {curve.auc:.4f}  accuracy: {report.accuracy:.4f}")
    return OK


def cmd_explain(args: argparse.Namespace) -> int:
    _require_file(args.data, "--data")
    model_tree, builder, payload = _load_model(args.model)
    year = payload["cohort_year"]
    panel = datamodel.load_panel(args.data, builder.schema)
    records = panel.for_year(year)
    if not records:
        raise UsageError(f"no records for cohort year {year}")

    matrix = builder.transform(records)
    by_id = {rec.student_id: i for i, rec in enumerate(records)}
    if args.cases:
        wanted = [s.strip() for s in args.cases.split(",") if s.strip()]
        unknown = [s for s in wanted if s not in by_id]
        if unknown:
            raise UsageError(f"unknown case ids: {unknown}")
    else:
        scores = tree.atrisk_scores(model_tree, matrix.values)
        order = np.argsort(-scores, kind="stable")
        wanted = [records[i].student_id for i in order[: args.top]]

    variants = [args.variant] if args.variant != "both" else [explain.VARIANT_BASIC, explain.VARIANT_WITH_KB]
    kb = _load_kb(args) if (explain.VARIANT_WITH_KB in variants) else None
    backend = _make_backend(args)
    settings = explain.GenerationSettings(retries=args.retries)

    jobs = []
    for student_id in wanted:
        rendering = explain.render_case_data(panel, student_id, year)
        row = matrix.values[by_id[student_id]]
        for variant in variants:
            jobs.append((student_id, row, rendering, variant))

    def run(job):
        student_id, row, rendering, variant = job
        return explain.explain_case(
            model_tree, student_id, row, rendering, variant, backend,
            kb=kb if variant == explain.VARIANT_WITH_KB else None, settings=settings,
        )

    if args.parallel > 1:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            bundles = list(pool.map(run, jobs))
    else:
        bundles = [run(job) for job in jobs]

    store = explain.BundleStore(args.out)
    for bundle in bundles:  # single writer regardless of call parallelism
        store.append(bundle)
    config_hash = _config_hash("explain", args)
    _append_run_log(os.path.dirname(os.path.abspath(args.out)), "explain", config_hash, None)
    failed = sum(1 for b in bundles if b.status != "ok")
    print(f"stored {len(bundles)} bundles ({failed} backend failures) in {args.out}")
    return OK if failed == 0 else RUNTIME_ERROR


def cmd_zero_shot(args: argparse.Namespace) -> int:
    _require_file(args.data, "--data")
    schema = _load_schema(args)
    panel = datamodel.load_panel(args.data, schema)
    backend = _make_backend(args)
    result = explain.zero_shot_evaluate(panel, args.cohort_year, backend,
                                        explain.GenerationSettings(retries=args.retries))
    config_hash = _config_hash("zero-shot", args)
    os.makedirs(args.out_dir, exist_ok=True)
    year = args.cohort_year
    _write_json_artifact(
        os.path.join(args.out_dir, f"zero_shot_year{year}.json"), result.to_dict(), config_hash, args.force
    )
    if args.bundles_out:
        store = explain.BundleStore(args.bundles_out)
        for bundle in result.bundles:
            store.append(bundle)
    _append_run_log(args.out_dir, "zero-shot", config_hash, None)
    baseline = None
    if args.report:
        _require_file(args.report, "--report")
        with open(args.report, "r", encoding="utf-8") as fh:
            baseline_payload = json.load(fh)
        primary = metrics.ClassReport.from_dict(baseline_payload["report"])
        print(metrics.render_comparison_table(primary, result.report))
    else:
        print(metrics.render_comparison_table(result.report, baseline))
    print(f"coverage: {result.n_parsed}/{result.n_cases} parsed, {result.n_fallback} scored as fallback")
    return OK


def cmd_serve(args: argparse.Namespace) -> int:
    _require_file(args.bundles, "--bundles")
    if not os.path.exists(args.session):
        if not args.raters:
            raise UsageError(f"session file {args.session!r} not found; pass --raters to create one")
        bundles = explain.BundleStore(args.bundles).load()
        if not bundles:
            raise UsageError(f"bundle store {args.bundles!r} is empty")
        session = usability.create_session(bundles, [r.strip() for r in args.raters.split(",") if r.strip()])
        session.save(args.session)
        print(f"created session {session.session_id} with {len(session.bundles)} bundles")

    from .service import create_app

    app = create_app(args.bundles, args.session, args.ratings, cors_origin=args.cors_origin, ui_dir=args.ui_dir)
    config_hash = _config_hash("serve", args)
    _append_run_log(os.path.dirname(os.path.abspath(args.session)) or ".", "serve", config_hash, None)

    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return OK


def cmd_ingest_ratings(args: argparse.Namespace) -> int:
    _require_file(args.ratings_file, "--ratings-file")
    _require_file(args.bundles, "--bundles")
    known = {b.bundle_id for b in explain.BundleStore(args.bundles).load()}
    store = usability.RatingStore(args.store)
    try:
        stored = usability.ingest_ratings(args.ratings_file, store, known_bundle_ids=known)
    except usability.RatingValidationError as exc:
        raise UsageError(str(exc))
    config_hash = _config_hash("ingest-ratings", args)
    _append_run_log(os.path.dirname(os.path.abspath(args.store)) or ".", "ingest-ratings", config_hash, None)
    print(f"stored {len(stored)} ratings in {args.store}")
    return OK


def cmd_analyze_ratings(args: argparse.Namespace) -> int:
    _require_file(args.store, "--store")
    _require_file(args.bundles, "--bundles")
    ratings = usability.RatingStore(args.store).load()
    if not ratings:
        raise UsageError(f"rating store {args.store!r} is empty")
    bundles = explain.BundleStore(args.bundles).load()

    summaries = usability.summarize(ratings)
    report = usability.regression_report(ratings, bundles)

    config_hash = _config_hash("analyze-ratings", args)
    os.makedirs(args.out_dir, exist_ok=True)
    _write_csv_artifact(
        os.path.join(args.out_dir, "usability_summary.csv"),
        usability.summary_csv_lines(summaries),
        config_hash,
        args.force,
    )
    _write_json_artifact(
        os.path.join(args.out_dir, "usability_regression.json"), report.to_dict(), config_hash, args.force
    )
    _append_run_log(args.out_dir, "analyze-ratings", config_hash, None)

    print("Dimension summaries:")
    for s in summaries:
        print(f"  {s.format_line()}")
    print("Knowledge-base effect (with vs. without), clustered by rater:")
    for e in report.entries:
        print(
            f"  {e.dimension}: beta={e.beta:+.3f} se={e.se:.3f} t={e.t_stat:+.2f} "
            f"p={e.p_value:.3f} 90% CI [{e.ci_low:+.3f}, {e.ci_high:+.3f}]"
        )
    if report.entries and report.entries[0].few_clusters_warning:
        g = report.entries[0].n_clusters
        print(f"warning: only {g} clusters (raters); clustered inference is fragile at this scale")
    return OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="casepath", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic cohort panel")
    p.add_argument("--config", required=True, help="synthetic config JSON")
    p.add_argument("--schema", help="feature schema JSON (default: built-in)")
    p.add_argument("--out", required=True, help="output panel CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="grid-search, cross-validate, and fit one cohort-year tree")
    p.add_argument("--data", required=True, help="panel CSV")
    p.add_argument("--schema", help="feature schema JSON (default: built-in)")
    p.add_argument("--cohort-year", type=int, required=True, choices=[1, 2, 3, 4])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--holdout", type=float, default=0.2, help="held-out fraction (default 0.2)")
    p.add_argument("--grid", choices=["default", "fast"], default="fast")
    p.add_argument("--grid-file", help="grid spec JSON overriding --grid")
    p.add_argument("--missing-policy", choices=list(datamodel.MISSING_POLICIES), default="median_indicator")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained model on labeled records")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="model JSON from train")
    p.add_argument("--ids", help="holdout JSON restricting evaluation to listed students")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="render prompts, call the LLM backend, store bundles")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--variant", choices=["basic", "with_kb", "both"], default="both")
    p.add_argument("--kb", help="knowledge base JSON (default: built-in sample)")
    p.add_argument("--cases", help="comma-separated student ids (default: top --top at-risk)")
    p.add_argument("--top", type=int, default=15, help="number of highest-risk cases to explain")
    p.add_argument("--backend", choices=["mock", "http"], default="mock")
    p.add_argument("--endpoint", default="", help="http backend URL")
    p.add_argument("--model-name", default="default", help="http backend model identifier")
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--out", required=True, help="bundle store JSONL (appended)")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("zero-shot", help="LLM-only baseline evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", help="feature schema JSON (default: built-in)")
    p.add_argument("--cohort-year", type=int, required=True, choices=[1, 2, 3, 4])
    p.add_argument("--backend", choices=["mock", "http"], default="mock")
    p.add_argument("--endpoint", default="")
    p.add_argument("--model-name", default="default")
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--report", help="tree report JSON; prints it with baseline values in parentheses")
    p.add_argument("--bundles-out", help="optional JSONL to store the zero-shot bundles")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_zero_shot)

    p = sub.add_parser("serve", help="run the blinded review HTTP service")
    p.add_argument("--bundles", required=True, help="bundle store JSONL")
    p.add_argument("--session", required=True, help="session JSON (created when missing and --raters given)")
    p.add_argument("--ratings", required=True, help="rating store JSONL")
    p.add_argument("--raters", help="comma-separated rater tokens for session creation")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--cors-origin", default="*")
    p.add_argument("--ui-dir", help="static directory for the review UI")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("ingest-ratings", help="import a scoring-sheet CSV into the rating store")
    p.add_argument("--ratings-file", required=True)
    p.add_argument("--bundles", required=True)
    p.add_argument("--store", required=True)
    p.set_defaults(func=cmd_ingest_ratings)

    p = sub.add_parser("analyze-ratings", help="dimension summaries and the kb-effect regression")
    p.add_argument("--store", required=True)
    p.add_argument("--bundles", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_analyze_ratings)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_ERROR
    except (datamodel.SchemaError, datamodel.PanelFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_ERROR
    except Exception as exc:  # noqa: BLE001 - boundary: report and exit 2
        print(f"runtime failure: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
