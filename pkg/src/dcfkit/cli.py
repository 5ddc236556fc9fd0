"""Command-line pipeline: fit, diagnose, dcf, power, and the full report.

Every command reads one enrollment CSV, writes its artifacts plus a
manifest into the output directory, and is deterministic under a fixed
seed. Exit codes: 0 success, 1 internal error, 2 input/config error,
3 guard refusal.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

from . import diagnostics, irt, power, reporting
from .config import RunConfig, RunManifest, build_config, parse_config_file
from .data import (
    achievement_rates,
    build_groups,
    compute_gpa,
    dichotomize,
    iterative_filter,
    parse_enrollments,
)
from .dcf import run_dcf_analysis
from .errors import ConfigError, DcfkitError, GuardError, SchemaError
from .irt import ModelSpec
from .power import SimConfig


@dataclass
class PreparedData:
    records: list
    rejects: list
    matrix: object
    achievement_grade: str
    sizes_before: dict
    sizes_after: dict


def _prepare(config: RunConfig) -> PreparedData:
    if not config.input:
        raise ConfigError("no input file given (use --input or the config file)")
    path = Path(config.input)
    if not path.exists():
        raise ConfigError(f"input not found: {path}")
    with open(path, "rb") as handle:
        parsed = parse_enrollments(handle, config.attribute_columns or None)
    if not parsed.records:
        raise ConfigError(f"no usable records in {path}")
    matrix, ag = dichotomize(parsed.records, config.ag_policy())
    sizes_before = {
        "students": matrix.n_students,
        "courses": matrix.n_courses,
        "entries": matrix.n_entries,
    }
    filtered = iterative_filter(
        matrix,
        config.min_grades_per_student,
        config.min_students_per_course,
        config.require_variance,
    )
    sizes_after = {
        "students": filtered.n_students,
        "courses": filtered.n_courses,
        "entries": filtered.n_entries,
    }
    return PreparedData(parsed.records, parsed.rejects, filtered, ag, sizes_before, sizes_after)


def _manifest(command: str, config: RunConfig, prepared: PreparedData | None) -> RunManifest:
    manifest = RunManifest(command=command, config=config.as_dict(), seed=config.seed).start()
    if prepared is not None:
        manifest.resolved_ag = prepared.achievement_grade
        manifest.sizes_before = prepared.sizes_before
        manifest.sizes_after = prepared.sizes_after
    return manifest


def _write_manifest(out: Path, manifest: RunManifest):
    reporting.atomic_write(out / "manifest.json", manifest.finish().to_json())


def _fit_model(prepared: PreparedData, config: RunConfig):
    spec = ModelSpec(family=config.family, dims=config.dims)
    model = irt.fit(prepared.matrix, spec)
    traits = irt.estimate_traits(model, prepared.matrix)
    return model, traits


def cmd_fit(config: RunConfig, prepared: PreparedData | None = None) -> int:
    prepared = prepared or _prepare(config)
    manifest = _manifest("fit", config, prepared)
    model, traits = _fit_model(prepared, config)
    out = Path(config.out)
    reporting.write_model_csv(out / "model.csv", model)
    reporting.write_traits_csv(out / "traits.csv", traits)
    reporting.write_rejects_csv(out / "rejects.csv", prepared.rejects)
    manifest.model_summary = {
        "model": model.spec.label,
        "loglik": model.marginal_loglik,
        "em_iterations": model.em_iterations_used,
        "converged": model.converged,
    }
    _write_manifest(out, manifest)
    print(
        f"fit {model.spec.label}: {prepared.sizes_after['students']} students x "
        f"{prepared.sizes_after['courses']} courses, AG={prepared.achievement_grade}, "
        f"loglik={model.marginal_loglik:.2f}"
    )
    return 0


def _selection_summary(selection) -> dict:
    return {
        "best": selection.best_label,
        "rasch_admissible": selection.rasch_admissible,
        "bic": {
            c.spec.label: (None if c.model is None else c.bic) for c in selection.candidates
        },
    }


def _run_diagnostics(prepared: PreparedData, config: RunConfig):
    selection = diagnostics.select_model(
        prepared.matrix, diagnostics.candidate_specs(config.select_dims)
    )
    best = selection.best_candidate.model
    traits = irt.estimate_traits(best, prepared.matrix)
    q3 = diagnostics.q3_statistics(best, traits, prepared.matrix)
    rel_random = diagnostics.split_half_reliability(prepared.matrix, "random", config.seed)
    rel_time = diagnostics.split_half_reliability(prepared.matrix, "time", config.seed)
    gpa = compute_gpa(prepared.records)
    ar = achievement_rates(prepared.matrix)
    validity = diagnostics.concurrent_validity(traits, gpa, best, ar)
    payload = reporting.diagnostics_payload(
        config.dataset_name,
        prepared.matrix.n_students,
        prepared.matrix.n_courses,
        selection,
        q3,
        rel_random,
        rel_time,
        validity,
    )
    return selection, payload


def cmd_diagnose(config: RunConfig, prepared: PreparedData | None = None) -> int:
    prepared = prepared or _prepare(config)
    manifest = _manifest("diagnose", config, prepared)
    selection, payload = _run_diagnostics(prepared, config)
    out = Path(config.out)
    reporting.write_diagnostics_json(out / "diagnostics.json", payload)
    manifest.selection_summary = _selection_summary(selection)
    _write_manifest(out, manifest)
    print(
        f"best model: {payload['best_bic_model']}  q3_pass: {payload['q3_pass']}  "
        f"rasch_admissible: {payload['rasch_admissible']}"
    )
    return 0


def cmd_dcf(config: RunConfig, prepared: PreparedData | None = None) -> int:
    if not (config.group_attr and config.group_neg and config.group_pos):
        raise ConfigError("dcf needs --group-attr, --group-neg, --group-pos")
    prepared = prepared or _prepare(config)
    manifest = _manifest("dcf", config, prepared)
    selection = diagnostics.select_model(
        prepared.matrix, diagnostics.candidate_specs(config.select_dims)
    )
    manifest.selection_summary = _selection_summary(selection)
    if not selection.rasch_admissible and not config.override_rasch_guard:
        raise GuardError(
            f"best BIC model is {selection.best_label}; the Rasch-based group "
            "analysis is not admissible (use --override-rasch-guard to force)"
        )
    model = next(
        (c.model for c in selection.candidates if c.spec.family == "1PL" and c.model), None
    )
    if model is None:
        model = irt.fit(prepared.matrix, ModelSpec())
    traits = irt.estimate_traits(model, prepared.matrix)
    groups = build_groups(
        prepared.records, config.group_attr, config.group_neg, config.group_pos
    )
    report = run_dcf_analysis(
        prepared.matrix,
        groups,
        model,
        traits,
        q=config.fdr_q,
        lrt_df=config.lrt_df,
        min_group_size=config.min_group_size,
        rasch_admissible=selection.rasch_admissible,
        override_rasch_guard=config.override_rasch_guard,
    )
    out = Path(config.out)
    reporting.write_dcf_csv(out / "dcf.csv", report)
    reporting.write_ar_csv(out / "ar.csv", report)
    reporting.write_dcf_plot_csv(out / "dcf_effects_plot.csv", report)
    reporting.write_ar_plot_csv(out / "ar_effects_plot.csv", report)
    manifest.notes = {
        "groups": {
            "attribute": config.group_attr,
            "neg": config.group_neg,
            "pos": config.group_pos,
            "excluded_students": len(groups.excluded),
        },
        "lrt_df": config.lrt_df,
        "fdr_q": config.fdr_q,
        "guard_overridden": report.guard_overridden,
    }
    _write_manifest(out, manifest)
    for line in reporting.dcf_summary_lines(report):
        print(line)
    return 0


def _sim_config(config: RunConfig) -> SimConfig:
    return SimConfig(
        n_courses=config.n_courses,
        n_dcf_courses=config.n_dcf_courses,
        beta1_grid=config.beta1_grid,
        group_size_grid=config.group_sizes,
        group_ratio=config.group_ratio,
        replications=config.replications,
        alpha=config.power_alpha,
        master_seed=config.seed,
        lrt_df=config.power_lrt_df,
    )


def cmd_power(config: RunConfig) -> int:
    cfg = _sim_config(config)
    manifest = _manifest("power", config, None)
    curve = power.run_power_study(cfg)
    fdr = power.estimate_null_fdr(cfg, replications=config.fdr_replications)
    out = Path(config.out)
    reporting.write_power_csv(out / "power.csv", curve)
    reporting.write_fdr_json(out / "fdr.json", fdr)
    manifest.notes = {
        "power_lrt_df": cfg.lrt_df,
        "alpha": cfg.alpha,
        "cells": len(curve.cells),
        "fdr_replications": config.fdr_replications,
    }
    _write_manifest(out, manifest)
    above = sum(1 for c in curve.cells if c.power > 0.8)
    print(
        f"power grid: {len(curve.cells)} cells, {above} with power > 0.8; "
        f"null FDR {fdr.fdr:.4f}, TPR {fdr.tpr:.3f}"
    )
    return 0


def cmd_report(config: RunConfig) -> int:
    prepared = _prepare(config)
    manifest = _manifest("report", config, prepared)
    cmd_fit(config, prepared)
    cmd_diagnose(config, prepared)
    cmd_dcf(config, prepared)
    cmd_power(config)
    _write_manifest(Path(config.out), manifest)
    return 0


_COMMANDS = {
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "dcf": cmd_dcf,
    "power": cmd_power,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dcfkit",
        description="IRT-based detection of group-dependent course difficulty",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in _COMMANDS.items():
        cmd = sub.add_parser(name)
        cmd.set_defaults(func=func)
        cmd.add_argument("--input")
        cmd.add_argument("--config")
        cmd.add_argument("--out")
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--fdr-q", dest="fdr_q", type=float)
        cmd.add_argument("--lrt-df", dest="lrt_df", type=int)
        cmd.add_argument("--group-attr", dest="group_attr")
        cmd.add_argument("--group-neg", dest="group_neg")
        cmd.add_argument("--group-pos", dest="group_pos")
        cmd.add_argument(
            "--override-rasch-guard",
            dest="override_rasch_guard",
            action="store_const",
            const=True,
        )
        cmd.add_argument("--attribute-columns", dest="attribute_columns")
        cmd.add_argument("--dataset-name", dest="dataset_name")
        cmd.add_argument("--family")
        cmd.add_argument("--dims", type=int)
        cmd.add_argument("--ag-mode", dest="ag_mode")
        cmd.add_argument("--ag-grade", dest="ag_grade")
        cmd.add_argument("--min-grades-per-student", dest="min_grades_per_student", type=int)
        cmd.add_argument("--min-students-per-course", dest="min_students_per_course", type=int)
        cmd.add_argument("--beta1", dest="beta1_grid")
        cmd.add_argument("--group-sizes", dest="group_sizes")
        cmd.add_argument("--replications", type=int)
        cmd.add_argument("--power-alpha", dest="power_alpha", type=float)
        cmd.add_argument("--power-lrt-df", dest="power_lrt_df", type=int)
        cmd.add_argument("--n-courses", dest="n_courses", type=int)
        cmd.add_argument("--fdr-replications", dest="fdr_replications", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        k: v
        for k, v in vars(args).items()
        if k not in ("command", "func", "config") and v is not None
    }
    try:
        file_values = parse_config_file(args.config) if args.config else None
        config = build_config(file_values, overrides)
        return args.func(config)
    except (ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GuardError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 3
    except DcfkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
