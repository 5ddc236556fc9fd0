"""Artifact writers: CSV/JSON reports with atomic, reproducible output.

Files are written to a temporary path and renamed into place, and floats
are formatted with repr so identical runs produce identical bytes.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

from .dcf import DcfReport
from .diagnostics import Q3Report, ReliabilityReport, SelectionReport, ValidityReport
from .irt import FittedModel, TraitEstimates
from .power import FdrReport, PowerCurve


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def atomic_write(path: str | Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _csv(rows) -> str:
    return "\n".join(",".join(_fmt(v) for v in row) for row in rows) + "\n"


def write_model_csv(path, model: FittedModel):
    dims = model.spec.dims
    header = (
        ["course_id"]
        + [f"alpha_{d+1}" for d in range(dims)]
        + [f"delta_{d+1}" for d in range(dims)]
        + ["projected_difficulty"]
    )
    rows = [header]
    for i, course in enumerate(model.course_ids):
        rows.append(
            [course]
            + [float(v) for v in model.discriminations[i]]
            + [float(v) for v in model.locations[i]]
            + [float(model.projected_difficulty[i])]
        )
    atomic_write(path, _csv(rows))


def write_traits_csv(path, traits: TraitEstimates):
    dims = traits.traits.shape[1]
    header = (
        ["student_id"]
        + [f"theta_{d+1}" for d in range(dims)]
        + [f"posterior_sd_{d+1}" for d in range(dims)]
        + ["trait_norm"]
    )
    rows = [header]
    for i, student in enumerate(traits.student_ids):
        rows.append(
            [student]
            + [float(v) for v in traits.traits[i]]
            + [float(v) for v in traits.posterior_sd[i]]
            + [float(traits.trait_norm[i])]
        )
    atomic_write(path, _csv(rows))


def write_dcf_csv(path, report: DcfReport):
    header = [
        "course_id",
        "beta0",
        "beta1",
        "lrt_stat",
        "p_value",
        "significant",
        "effect_size_prob",
        "theta_bar",
        "n_g1",
        "n_g2",
        "case_label",
        "skip_reason",
    ]
    rows = [header]
    skipped = {s.course_id: s.reason for s in report.skipped}
    tested = {r.course_id: r for r in report.dcf_results}
    for course in sorted(set(tested) | set(skipped)):
        if course in tested:
            r = tested[course]
            rows.append(
                [
                    course,
                    r.fit.beta0,
                    r.fit.beta1,
                    r.lrt_statistic,
                    r.p_value,
                    int(r.significant_fdr),
                    r.effect_size_prob,
                    r.theta_bar,
                    r.fit.n_neg,
                    r.fit.n_pos,
                    r.case_label,
                    "",
                ]
            )
        else:
            rows.append([course] + [""] * 10 + [skipped[course]])
    atomic_write(path, _csv(rows))


def write_ar_csv(path, report: DcfReport):
    header = ["course_id", "ar_g1", "ar_g2", "ar_delta", "p_value", "significant", "skip_reason"]
    rows = [header]
    computed = {a.course_id: a for a in report.ar_results}
    skipped = {s.course_id: s.reason for s in report.skipped if s.course_id not in computed}
    for course in sorted(set(computed) | set(skipped)):
        if course in computed:
            a = computed[course]
            rows.append(
                [course, a.ar_g1, a.ar_g2, a.ar_delta, a.p_value, int(a.significant_fdr), ""]
            )
        else:
            rows.append([course, "", "", "", "", "", skipped[course]])
    atomic_write(path, _csv(rows))


def write_dcf_plot_csv(path, report: DcfReport):
    """Bar-chart data: one row per tested course, effect size and flag."""
    rows = [["course_id", "effect_size_prob", "significant"]]
    for r in report.dcf_results:
        rows.append([r.course_id, r.effect_size_prob, int(r.significant_fdr)])
    atomic_write(path, _csv(rows))


def write_ar_plot_csv(path, report: DcfReport):
    rows = [["course_id", "ar_delta", "significant"]]
    for a in report.ar_results:
        rows.append([a.course_id, a.ar_delta, int(a.significant_fdr)])
    atomic_write(path, _csv(rows))


def write_power_csv(path, curve: PowerCurve):
    rows = [["beta1", "group_size", "power", "ci_low", "ci_high", "replications", "fit_failures"]]
    for cell in curve.cells:
        rows.append(
            [
                cell.beta1,
                cell.group_size,
                cell.power,
                cell.ci_low,
                cell.ci_high,
                cell.n_replications,
                cell.fit_failures,
            ]
        )
    atomic_write(path, _csv(rows))


def write_fdr_json(path, report: FdrReport):
    payload = {
        "fdr": report.fdr,
        "fdr_ci": list(report.fdr_ci),
        "tpr": report.tpr,
        "pure_null_any_discovery_rate": report.pure_null_any_discovery_rate,
        "replications": report.replications,
        "beta1": report.beta1,
        "group_size": report.group_size,
        "q": report.q,
    }
    atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def diagnostics_payload(
    dataset: str,
    n_students: int,
    n_courses: int,
    selection: SelectionReport,
    q3: Q3Report,
    reliability_random: ReliabilityReport,
    reliability_time: ReliabilityReport,
    validity: ValidityReport,
) -> dict:
    """One diagnostics row: selection, assumption checks, reliability, validity."""

    def _num(x):
        return None if x is None or (isinstance(x, float) and math.isnan(x)) else x

    return {
        "dataset": dataset,
        "n_students": n_students,
        "n_courses": n_courses,
        "best_bic_model": selection.best_label,
        "bic_candidates": [
            {
                "model": c.spec.label,
                "loglik": _num(c.loglik),
                "parameters": c.parameter_count,
                "bic": None if c.model is None else c.bic,
                "error": c.error,
            }
            for c in selection.candidates
        ],
        "q3_pass": q3.passed,
        "q3_mean": _num(q3.mean_q3),
        "q3_flagged_pairs": [list(p) for p in q3.flagged_pairs],
        "reliability_random": _num(reliability_random.pearson_r),
        "reliability_random_p": _num(reliability_random.p_value),
        "reliability_time": _num(reliability_time.pearson_r),
        "reliability_time_p": _num(reliability_time.p_value),
        "validity_student": _num(validity.student_r),
        "validity_student_p": _num(validity.student_p),
        "validity_course": _num(validity.course_r),
        "validity_course_p": _num(validity.course_p),
        "rasch_admissible": selection.rasch_admissible,
    }


def write_diagnostics_json(path, payload: dict):
    atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_rejects_csv(path, rejects):
    rows = [["row", "reason"]] + [[r.row, r.reason] for r in rejects]
    atomic_write(path, _csv(rows))


def dcf_summary_lines(report: DcfReport) -> list[str]:
    """Counts of significant courses per direction, report-style."""
    tested = list(report.dcf_results)
    significant = [r for r in tested if r.significant_fdr]
    easier_g1 = [r for r in significant if r.fit.beta1 < 0]
    easier_g2 = [r for r in significant if r.fit.beta1 > 0]
    ar_sig = [a for a in report.ar_results if a.significant_fdr]
    lines = [
        f"DCF: {len(significant)}/{len(tested)} courses significant "
        f"(BH threshold {report.dcf_threshold:.6g}, q={report.q}, df={report.lrt_df})",
        f"  easier for G1: {len(easier_g1)}/{len(significant)}",
        f"  easier for G2: {len(easier_g2)}/{len(significant)}",
        f"AR gap: {len(ar_sig)}/{len(report.ar_results)} courses significant "
        f"(BH threshold {report.ar_threshold:.6g})",
        f"skipped: {len(report.skipped)}",
    ]
    if report.guard_overridden:
        lines.append("warning: Rasch admissibility guard overridden")
    return lines
