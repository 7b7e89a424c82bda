"""Command-line entry point: ``opcost {generate,train,estimate,analyze,tune}``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import correlation as corr
from .combiner import DEFAULT_MIN_ACT_COST_MS, MixedCostEstimator, pick_pivot
from .feedback import DEFAULT_THRESHOLD, FeedbackStore
from .models import dumps_models, load_models
from .plan import check_backbone, dumps_plans, kind_name, load_plans
from .synth import GroundTruth, SynthSpec, synth_plans, synth_triples
from .tuning import (
    COMBINED_MODE,
    DEFAULT_REGRESSION_CUT,
    OPTIMIZER_MODE,
    build_tuning_suite,
    outcomes_to_csv,
    regression_report,
    report_to_json,
    run_tuning,
)

FIXTURES = {"example": ("example_plan.json", "example_feedback.jsonl")}


@dataclass
class RunConfig:
    subcommand: str
    plans: Optional[str] = None
    models: Optional[str] = None
    feedback: Optional[str] = None
    out_dir: str = "."
    backbone: Optional[list] = None
    threshold: int = DEFAULT_THRESHOLD
    min_act_cost: float = DEFAULT_MIN_ACT_COST_MS
    tau: list = field(default_factory=lambda: [0.0, 0.1, 0.2])
    seed: Optional[int] = None
    eta_prime_inf: float = corr.ETA_PRIME_INF
    queries: int = 100
    leaves: int = 3
    internals: int = 2
    indexes: int = 5
    noise_sd: float = 0.0
    fixture: Optional[str] = None
    synth_spec: Optional[dict] = None
    ground_truth: Optional[dict] = None

    def validate(self):
        for name in ("plans", "models", "feedback"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise FileNotFoundError(f"--{name}: no such file {path}")
        if self.subcommand in ("generate", "tune") and self.seed is None:
            raise ValueError(f"{self.subcommand} needs --seed")
        if self.threshold < 1:
            raise ValueError("--threshold must be >= 1")
        for t in self.tau:
            if not 0 <= t < 1:
                raise ValueError(f"--tau values must lie in [0, 1), got {t}")


class CliError(Exception):
    pass


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fixture_paths(name: str) -> tuple:
    try:
        plan_file, feedback_file = FIXTURES[name]
    except KeyError:
        raise CliError(f"unknown fixture {name!r}; known: {sorted(FIXTURES)}") from None
    data = resources.files("opcost") / "data"
    return str(data / plan_file), str(data / feedback_file)


def _fmt(x) -> str:
    return f"{x:.10g}"


def _feedback_for(cfg: RunConfig, plans) -> FeedbackStore:
    backbone = check_backbone(cfg.backbone)
    if cfg.feedback:
        return FeedbackStore.load(cfg.feedback, backbone)
    store = FeedbackStore(backbone)
    for p in plans:
        store.ingest(p)
    return store


def _estimator(cfg: RunConfig, store: FeedbackStore) -> MixedCostEstimator:
    params = dict(backbone=cfg.backbone, threshold=cfg.threshold, min_act_cost_ms=cfg.min_act_cost)
    if cfg.models:
        models = load_models(cfg.models)
        pivot = pick_pivot(store, cfg.min_act_cost, kinds=set(models)) if models else None
        return MixedCostEstimator.from_parts(models, pivot, **params)
    return MixedCostEstimator(**params).fit(store)


def _require_plans(cfg: RunConfig) -> list:
    if not cfg.plans:
        raise CliError(f"{cfg.subcommand} needs --plans")
    return load_plans(cfg.plans)


# -- subcommands ------------------------------------------------------------


def cmd_generate(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    out_dir = Path(cfg.out_dir)
    gt = GroundTruth.from_dict(cfg.ground_truth or {"noise_sd": cfg.noise_sd})
    plans = synth_plans(cfg.queries, gt, cfg.leaves, cfg.internals, seed=cfg.seed)
    write_atomic(out_dir / "plans.jsonl", dumps_plans(plans))
    print(f"plans={len(plans)} seed={cfg.seed} path={out_dir / 'plans.jsonl'}", file=out)
    if cfg.synth_spec:
        doc = dict(cfg.synth_spec)
        doc.setdefault("seed", cfg.seed)
        lam = float(doc.pop("lambda", 1.0))
        d = synth_triples(SynthSpec.from_dict(doc), lam)
        lines = ["L,I,Lp,Ip"] + [",".join(repr(float(v)) for v in row) for row in zip(d.L, d.I, d.Lp, d.Ip)]
        write_atomic(out_dir / "triples.csv", "\n".join(lines) + "\n")
        print(f"triples={len(d)} path={out_dir / 'triples.csv'}", file=out)
    return 0


def cmd_train(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    plans = _require_plans(cfg)
    backbone = check_backbone(cfg.backbone)
    store = FeedbackStore.load(cfg.feedback, backbone) if cfg.feedback else FeedbackStore(backbone)
    added = sum(store.ingest(p) for p in plans)
    est = MixedCostEstimator(cfg.backbone, cfg.threshold, cfg.min_act_cost).fit(store)
    out_dir = Path(cfg.out_dir)
    write_atomic(out_dir / "feedback.jsonl", store.dumps())
    write_atomic(out_dir / "models.json", dumps_models(est.models_.values()))
    print(f"records_added={added} records_total={len(store)}", file=out)
    for kind in sorted(backbone, key=kind_name):
        n = store.count(kind)
        status = "trained" if kind in est.models_ else "insufficient"
        extra = f" residual_rms={_fmt(est.models_[kind].residual_rms_)}" if kind in est.models_ else ""
        print(f"kind={kind_name(kind)} records={n} threshold={cfg.threshold} {status}{extra}", file=out)
    return 0


def cmd_estimate(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    plans = _require_plans(cfg)
    store = _feedback_for(cfg, plans)
    est = _estimator(cfg, store)
    pivot = est.pivot_
    if pivot is None:
        print("pivot=none models=0 (optimizer costs only)", file=out)
    else:
        print(f"pivot record_id={pivot.record_id} opt_cost={_fmt(pivot.opt_cost)} "
              f"act_cost={_fmt(pivot.act_cost)} lambda={_fmt(pivot.lam)}", file=out)
    estimates = [est.estimate(p) for p in plans]
    write_atomic(Path(cfg.out_dir) / "estimates.jsonl", "".join(e.dumps() + "\n" for e in estimates))
    for e in estimates:
        print(f"query={e.query_id} total={_fmt(e.total)}", file=out)
    return 0


def curve_tables(eta_prime_inf: float) -> dict:
    """CSV text for the four analysis curves."""
    eta = np.round(np.arange(1.0, 50.0 + 1e-9, 0.5), 10)
    bounds = ["eta,f,g"] + [
        f"{e!r},{corr.lower_bound_f(e, eta_prime_inf)!r},{corr.lower_bound_g(e, eta_prime_inf)!r}"
        for e in eta.tolist()
    ]
    eta0_rows = ["eps,alpha,eta_0"]
    for eps in (0.05, 0.01):
        for a in np.round(np.arange(-1.0, 1.0 + 1e-9, 0.01), 10).tolist():
            if a <= 1 - eps:
                eta0_rows.append(f"{eps!r},{a!r},{corr.eta_0(a, eps)!r}")
    eta0_max_rows = ["eps,eta_0_max,argmax_alpha,eta_0_max_positive"]
    for eps in np.round(np.arange(0.005, 0.5 + 1e-9, 0.005), 10).tolist():
        m, a = corr.eta_0_max(eps)
        eta0_max_rows.append(f"{eps!r},{m!r},{a!r},{corr.eta_0_max_positive(eps)!r}")
    rho_rows = ["alpha,eta,rho"]
    for a in (0.0, 0.5):
        for e in np.round(np.arange(0.0, 50.0 + 1e-9, 0.25), 10).tolist():
            rho_rows.append(f"{a!r},{e!r},{corr.rho_approx(e, a)!r}")
    return {
        "lower_bounds.csv": "\n".join(bounds) + "\n",
        "eta0_vs_alpha.csv": "\n".join(eta0_rows) + "\n",
        "eta0_max_vs_eps.csv": "\n".join(eta0_max_rows) + "\n",
        "rho_approx_vs_eta.csv": "\n".join(rho_rows) + "\n",
    }


def analysis_report(plans, estimator, backbone, eta_prime_inf) -> dict:
    estimates = [estimator.estimate(p) for p in plans]
    d = corr.decompose(plans, estimates, backbone)
    s = corr.stats(d)
    P, Pp = d.P, d.Pp
    eta0 = {}
    for eps in (0.05, 0.01):
        try:
            eta0[repr(eps)] = corr.eta_0(s.alpha, eps)
        except corr.DomainError:
            eta0[repr(eps)] = None
    try:
        ext = corr.rho_extrema_in_eta_prime(s.eta, s.alpha, s.beta, s.gamma).to_dict()
    except corr.DomainError as exc:
        ext = {"skipped": str(exc)}
    return {
        "n_queries": len(d),
        "stats": s.to_dict(),
        "pearson_PPprime": corr.pearson(P, Pp),
        "spearman_PPprime": corr.spearman(P, Pp),
        "rho_closed_form": corr.rho_from_stats(s),
        "bounds": {
            "f": corr.lower_bound_f(s.eta, s.eta_prime),
            "g": corr.lower_bound_g(s.eta, s.eta_prime),
            "f_eta_prime_inf": corr.lower_bound_f(s.eta, eta_prime_inf),
            "g_eta_prime_inf": corr.lower_bound_g(s.eta, eta_prime_inf),
        },
        "approx": {"rho_approx": corr.rho_approx(s.eta, s.alpha), "eta_0_curve": eta0},
        "extrema": ext,
        "eta_prime_infinity": eta_prime_inf,
    }


def cmd_analyze(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    plans = _require_plans(cfg)
    store = _feedback_for(cfg, plans)
    est = _estimator(cfg, store)
    report = analysis_report(plans, est, check_backbone(cfg.backbone), cfg.eta_prime_inf)
    out_dir = Path(cfg.out_dir)
    write_atomic(out_dir / "analysis.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    for name, text in curve_tables(cfg.eta_prime_inf).items():
        write_atomic(out_dir / name, text)
    s = report["stats"]
    print(f"queries={report['n_queries']} eta={_fmt(s['eta'])} eta_prime={_fmt(s['eta_prime'])} "
          f"alpha={_fmt(s['alpha'])} beta={_fmt(s['beta'])} gamma={_fmt(s['gamma'])}", file=out)
    print(f"pearson={_fmt(report['pearson_PPprime'])} closed_form={_fmt(report['rho_closed_form'])} "
          f"f={_fmt(report['bounds']['f'])} g={_fmt(report['bounds']['g'])}", file=out)
    print(f"eta_prime_infinity={cfg.eta_prime_inf:g}", file=out)
    return 0


def cmd_tune(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    suite = build_tuning_suite(cfg.queries, cfg.indexes, seed=cfg.seed)
    est = MixedCostEstimator(cfg.backbone, cfg.threshold, cfg.min_act_cost).fit(suite.feedback(cfg.backbone))
    est.require_models()
    csv_parts, hist = [], {}
    print(f"queries={cfg.queries} configurations={cfg.indexes} pivot_record={est.pivot_.record_id} "
          f"lambda={_fmt(est.pivot_.lam)}", file=out)
    for i, tau in enumerate(cfg.tau):
        outcomes = run_tuning(suite, OPTIMIZER_MODE, tau) + run_tuning(suite, COMBINED_MODE, tau, est)
        text = outcomes_to_csv(outcomes, tau)
        csv_parts.append(text if i == 0 else text.split("\n", 1)[1])
        report = regression_report(outcomes, DEFAULT_REGRESSION_CUT)
        hist[repr(tau)] = json.loads(report_to_json(report))["modes"]
        print(f"tau={tau:g} regressions optimizer={report[OPTIMIZER_MODE].regressions} "
              f"combined={report[COMBINED_MODE].regressions} "
              f"recommended optimizer={report[OPTIMIZER_MODE].n_recommended} "
              f"combined={report[COMBINED_MODE].n_recommended}", file=out)
    out_dir = Path(cfg.out_dir)
    write_atomic(out_dir / "tuning_report.csv", "".join(csv_parts))
    doc = {"regression_cut": DEFAULT_REGRESSION_CUT, "seed": cfg.seed, "by_tau": hist}
    write_atomic(out_dir / "tuning_histogram.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "estimate": cmd_estimate,
    "analyze": cmd_analyze,
    "tune": cmd_tune,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--plans", help="plan documents (JSON lines or JSON array)")
    common.add_argument("--models", help="model file written by 'train'")
    common.add_argument("--feedback", help="feedback JSON-lines file")
    common.add_argument("--backbone", help="comma-separated backbone operator kinds")
    common.add_argument("--threshold", type=int, help="records per kind needed to train a model")
    common.add_argument("--min-act-cost", type=float, help="pivot eligibility floor, ms")
    common.add_argument("--tau", help="comma-separated estimated-improvement thresholds")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--eta-prime-inf", type=float, help="stand-in value for eta' -> infinity")

    parser = argparse.ArgumentParser(prog="opcost", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    g = sub.add_parser("generate", parents=[common], help="generate synthetic plans")
    g.add_argument("--queries", type=int)
    g.add_argument("--leaves", type=int)
    g.add_argument("--internals", type=int)
    g.add_argument("--noise-sd", type=float)
    sub.add_parser("train", parents=[common], help="ingest feedback and train operator models")
    e = sub.add_parser("estimate", parents=[common], help="combined cost estimates for plans")
    e.add_argument("--fixture", choices=sorted(FIXTURES), help="use a bundled plan + feedback fixture")
    sub.add_parser("analyze", parents=[common], help="correlation analysis and curve tables")
    t = sub.add_parser("tune", parents=[common], help="simulated index tuning in both estimator modes")
    t.add_argument("--queries", type=int)
    t.add_argument("--indexes", type=int)
    return parser


def make_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            values.update(json.load(fh))
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    for key, value in vars(args).items():
        if key in ("config",) or value is None:
            continue
        values[key] = value
    if isinstance(values.get("backbone"), str):
        values["backbone"] = [k.strip() for k in values["backbone"].split(",") if k.strip()]
    if isinstance(values.get("tau"), str):
        values["tau"] = [float(t) for t in values["tau"].split(",") if t.strip()]
    elif isinstance(values.get("tau"), (int, float)):
        values["tau"] = [float(values["tau"])]
    if values.get("fixture"):
        plans, feedback = fixture_paths(values["fixture"])
        values.setdefault("plans", plans)
        values.setdefault("feedback", feedback)
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = make_config(args)
        return COMMANDS[cfg.subcommand](cfg)
    except Exception as exc:  # reported as one machine-readable line
        line = {"error": type(exc).__name__, "message": str(exc), "subcommand": args.subcommand}
        print(json.dumps(line), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
