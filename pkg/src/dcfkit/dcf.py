"""Per-course differential functioning on top of a fitted Rasch model.

For each course, a two-parameter logistic regression
logit(p) = beta0 + beta1 * g + (theta - delta) is fitted with the trait
offset held fixed, compared against the pure Rasch prediction
(beta0 = beta1 = 0) by a likelihood-ratio test, and the per-course
p-values are Benjamini-Hochberg adjusted. The achievement-rate gap with a
two-proportion test runs alongside as the naive baseline, and each course
is placed in the four-way taxonomy spanned by trait-gap and AR-gap
significance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import stats
from scipy.special import expit, log_expit

from .data import GroupAssignment, ResponseMatrix
from .errors import DataError, FitError, GuardError
from .irt import FittedModel, TraitEstimates
from .statutil import two_proportion_p, welch_p

_NEWTON_RIDGE = 1e-6
_SEPARATION_RIDGE = 1e-2
_BETA_BOUND = 10.0
_NEWTON_MAX_ITER = 50

CASE_LABELS = ("I", "II", "III", "IV")


@dataclass(frozen=True)
class DcfFit:
    """Fitted group-shift regression for one course.

    loglik_null is the pure Rasch prediction (beta0 = beta1 = 0);
    loglik_intercept frees beta0 only and anchors the df=1 group-effect test.
    """

    course_id: str
    beta0: float
    beta1: float
    loglik_full: float
    loglik_null: float
    loglik_intercept: float
    n_neg: int
    n_pos: int
    converged: bool
    ridge_flagged: bool = False  # separation fallback was needed


@dataclass(frozen=True)
class DcfResult:
    fit: DcfFit
    lrt_statistic: float
    p_value: float
    significant_fdr: bool
    effect_size_prob: float
    theta_bar: float
    case_label: str

    @property
    def course_id(self) -> str:
        return self.fit.course_id


@dataclass(frozen=True)
class ArDeltaResult:
    course_id: str
    ar_g1: float
    ar_g2: float
    ar_delta: float
    p_value: float
    significant_fdr: bool = False


@dataclass(frozen=True)
class SkippedCourse:
    course_id: str
    reason: str


@dataclass(frozen=True)
class DcfReport:
    """Everything run_dcf_analysis produces, in course-id order."""

    dcf_results: tuple[DcfResult, ...]
    ar_results: tuple[ArDeltaResult, ...]
    skipped: tuple[SkippedCourse, ...]
    q: float
    lrt_df: int
    dcf_threshold: float
    ar_threshold: float
    guard_overridden: bool = False


def _as_triples(course_responses):
    rows = np.asarray(list(course_responses), dtype=float)
    if rows.ndim != 2 or rows.shape[1] != 3:
        raise DataError("course_responses must be (response, theta, group) triples")
    x, theta, g = rows[:, 0], rows[:, 1], rows[:, 2]
    if not np.isin(x, (0.0, 1.0)).all():
        raise DataError("responses must be 0 or 1")
    if not np.isin(g, (-1.0, 1.0)).all():
        raise DataError("group codes must be -1 or +1")
    return x, theta, g


def _offset_loglik(x, eta):
    return float(np.sum(x * log_expit(eta) + (1.0 - x) * log_expit(-eta)))


def _fit_offset_logistic(x, offset, g, ridge):
    """Maximize the Bernoulli likelihood over (beta0, beta1) with fixed offset.

    Newton-Raphson from (0, 0) with an L2 penalty of `ridge` on the
    coefficients and step halving on the penalized objective, so the
    unpenalized log-likelihood at the estimate can never drop below the
    null's. Returns (beta, unpenalized loglik, converged).
    """
    z = np.column_stack([np.ones_like(g), g])
    return _fit_offset_glm(x, offset, z, ridge)


def _fit_offset_glm(x, offset, z, ridge):
    beta = np.zeros(z.shape[1])

    def penalized(b):
        return _offset_loglik(x, offset + z @ b) - 0.5 * ridge * float(b @ b)

    obj = penalized(beta)
    converged = False
    for _ in range(_NEWTON_MAX_ITER):
        eta = offset + z @ beta
        p = expit(eta)
        grad = z.T @ (x - p) - ridge * beta
        if np.abs(grad).max() < 1e-8 * max(1.0, x.size):
            converged = True
            break
        w = p * (1.0 - p)
        hess = (z * w[:, None]).T @ z + ridge * np.eye(z.shape[1])
        step = np.linalg.solve(hess, grad)
        improved = False
        for _ in range(40):
            cand = beta + step
            cand_obj = penalized(cand)
            if cand_obj >= obj - 1e-12:
                beta, obj = cand, cand_obj
                improved = True
                break
            step = 0.5 * step
        if not improved:
            converged = True  # no ascent left at working precision
            break
    return beta, _offset_loglik(x, offset + z @ beta), converged


def fit_dcf(
    course_responses,
    delta_c: float,
    course_id: str = "",
    min_group_size: int = 10,
) -> DcfFit:
    """Fit the per-course group-shift regression.

    `course_responses` holds (response, theta, group_code) triples for the
    course's responders. Both groups must have at least `min_group_size`
    responders. Separation is handled by refitting with a stronger ridge;
    a fit that still diverges is returned with converged=False.
    """
    x, theta, g = _as_triples(course_responses)
    n_neg = int((g == -1).sum())
    n_pos = int((g == 1).sum())
    if min(n_neg, n_pos) < min_group_size:
        raise DataError(
            f"group below min size ({n_neg} vs {n_pos}, need {min_group_size})"
        )
    offset = theta - float(delta_c)
    beta, loglik, converged = _fit_offset_logistic(x, offset, g, _NEWTON_RIDGE)
    ridge_flagged = False
    if np.abs(beta).max() > _BETA_BOUND:
        beta, loglik, converged = _fit_offset_logistic(x, offset, g, _SEPARATION_RIDGE)
        ridge_flagged = True
        if np.abs(beta).max() > _BETA_BOUND:
            converged = False
    loglik_null = _offset_loglik(x, offset)
    _, loglik_intercept, _ = _fit_offset_glm(
        x, offset, np.ones((x.size, 1)), _NEWTON_RIDGE
    )
    return DcfFit(
        course_id=course_id,
        beta0=float(beta[0]),
        beta1=float(beta[1]),
        loglik_full=loglik,
        loglik_null=loglik_null,
        loglik_intercept=loglik_intercept,
        n_neg=n_neg,
        n_pos=n_pos,
        converged=converged,
        ridge_flagged=ridge_flagged,
    )


def lrt_pvalue(fit: DcfFit, df: int = 2) -> tuple[float, float]:
    """Likelihood-ratio statistic for the group-shift model and its p-value.

    df=2 (default) tests against the pure Rasch prediction: both beta0 and
    beta1 are added relative to that null. df=1 tests the group effect
    alone, comparing against the intercept-only fit, the usual convention
    in differential-functioning practice.
    """
    if not fit.converged:
        raise FitError(f"course {fit.course_id!r}: fit did not converge")
    if df == 2:
        statistic = 2.0 * (fit.loglik_full - fit.loglik_null)
    elif df == 1:
        statistic = 2.0 * (fit.loglik_full - fit.loglik_intercept)
    else:
        raise DataError("df must be 1 or 2")
    if statistic < -1e-9:
        raise FitError(f"nesting violated: LRT statistic {statistic:.3e} < 0")
    statistic = max(statistic, 0.0)
    return statistic, float(stats.chi2.sf(statistic, df))


def bh_adjust(p_values, q: float = 0.05) -> tuple[float, np.ndarray]:
    """Benjamini-Hochberg step-up rule.

    Returns the rejection threshold (the largest sorted p with
    p_(i) <= i*q/m, or 0 when none qualifies) and per-test flags p <= threshold.
    """
    p = np.asarray(list(p_values), dtype=float)
    if p.size == 0:
        raise DataError("no p-values to adjust")
    if not 0.0 <= q < 1.0:
        raise DataError("q must be in [0, 1)")
    if q == 0.0:
        return 0.0, np.zeros(p.size, dtype=bool)
    ordered = np.sort(p)
    m = p.size
    cutoffs = q * np.arange(1, m + 1) / m
    passing = np.flatnonzero(ordered <= cutoffs)
    threshold = float(ordered[passing[-1]]) if passing.size else 0.0
    return threshold, p <= threshold


def effect_size_probability(fit: DcfFit, theta_bar: float, delta_c: float) -> float:
    """Group probability gap P_G1 - P_G2 at the pooled mean trait.

    Negative beta1 means the g=-1 group finds the course easier, so the
    returned gap is positive in that case.
    """
    base = fit.beta0 + theta_bar - delta_c
    return float(expit(base - fit.beta1) - expit(base + fit.beta1))


def ar_delta_test(course_responses, course_id: str = "") -> ArDeltaResult:
    """Achievement-rate gap between the groups with a two-sided test."""
    rows = np.asarray(list(course_responses), dtype=float)
    if rows.ndim != 2 or rows.shape[1] != 2:
        raise DataError("course_responses must be (response, group) pairs")
    x, g = rows[:, 0], rows[:, 1]
    neg = g == -1
    pos = g == 1
    if not neg.any() or not pos.any():
        raise DataError("empty group in AR comparison")
    k1, n1 = int(x[neg].sum()), int(neg.sum())
    k2, n2 = int(x[pos].sum()), int(pos.sum())
    ar1, ar2 = k1 / n1, k2 / n2
    return ArDeltaResult(
        course_id=course_id,
        ar_g1=ar1,
        ar_g2=ar2,
        ar_delta=ar1 - ar2,
        p_value=two_proportion_p(k1, n1, k2, n2),
    )


def classify_case(dcf: DcfResult, ar: ArDeltaResult, trait_gap_significant: bool) -> str:
    """Four-way taxonomy of group outcome differences for one course.

    Split on AR-gap significance, then on trait-gap significance:
    neither -> I (null); trait gap with equal ARs -> II; AR gap without a
    trait gap -> III (course-specific difficulty, same trend); both -> IV
    (trends may differ).
    """
    if dcf.course_id != ar.course_id:
        raise DataError("DCF and AR results refer to different courses")
    if not ar.significant_fdr:
        return "II" if trait_gap_significant else "I"
    return "IV" if trait_gap_significant else "III"


def run_dcf_analysis(
    matrix: ResponseMatrix,
    groups: GroupAssignment,
    model: FittedModel,
    traits: TraitEstimates,
    q: float = 0.05,
    *,
    lrt_df: int = 2,
    min_group_size: int = 10,
    trait_gap_alpha: float = 0.05,
    theta_bar_scope: str = "course",
    rasch_admissible: bool = True,
    override_rasch_guard: bool = False,
) -> DcfReport:
    """Per-course DCF fits, LRT p-values, and BH adjustment over all courses.

    Requires a 1PL model on data whose selection admitted the Rasch family
    (`rasch_admissible`); both guards can be bypassed together with
    `override_rasch_guard`, which is recorded on the report. Students
    without a group code are excluded from the group analyses. AR gaps are
    BH-adjusted with the same q for comparability. Courses that cannot be
    tested are listed with reasons. Reports are ordered by course id.
    """
    overridden = False
    if model.spec.family != "1PL":
        if not override_rasch_guard:
            raise GuardError("DCF is defined for 1PL models only")
        overridden = True
    if not rasch_admissible:
        if not override_rasch_guard:
            raise GuardError("model selection did not admit the Rasch family")
        overridden = True
    if tuple(model.course_ids) != tuple(matrix.courses):
        raise DataError("model and matrix disagree on the course set")
    if len(set(groups.encoding.values()) - {-1, 1}) > 0:
        raise DataError("group encoding must be -1/+1")

    trait_of = dict(zip(traits.student_ids, traits.traits[:, 0]))
    theta_all = np.array([trait_of.get(s, np.nan) for s in matrix.students])
    codes_all = groups.codes_for(matrix.students)
    global_theta_bar = float(np.nanmean(theta_all))

    entry_g = codes_all[matrix.student_idx]
    entry_theta = theta_all[matrix.student_idx]
    usable = (entry_g != 0) & np.isfinite(entry_theta)

    order = np.argsort(np.array(matrix.courses))
    tested: list[tuple[DcfFit, float, float, float, float]] = []
    ar_rows: list[ArDeltaResult] = []
    ar_gaps: list[bool] = []
    skipped: list[SkippedCourse] = []
    for c in order:
        course_id = matrix.courses[c]
        sel = usable & (matrix.course_idx == c)
        x = matrix.responses[sel].astype(float)
        g = entry_g[sel].astype(float)
        theta = entry_theta[sel]
        n_neg = int((g == -1).sum())
        n_pos = int((g == 1).sum())
        if n_neg == 0 or n_pos == 0:
            skipped.append(SkippedCourse(course_id, "empty group"))
            continue
        ar_rows.append(ar_delta_test(np.column_stack([x, g]), course_id))
        ar_gaps.append(welch_p(theta[g == -1], theta[g == 1]) < trait_gap_alpha)
        if min(n_neg, n_pos) < min_group_size:
            skipped.append(
                SkippedCourse(course_id, f"group below min size ({n_neg}/{n_pos})")
            )
            continue
        delta_c = float(model.projected_difficulty[c])
        dcf_fit = fit_dcf(
            np.column_stack([x, theta, g]),
            delta_c,
            course_id=course_id,
            min_group_size=min_group_size,
        )
        if not dcf_fit.converged:
            skipped.append(SkippedCourse(course_id, "fit did not converge"))
            continue
        statistic, p = lrt_pvalue(dcf_fit, df=lrt_df)
        theta_bar = (
            float(theta.mean()) if theta_bar_scope == "course" else global_theta_bar
        )
        effect = effect_size_probability(dcf_fit, theta_bar, delta_c)
        tested.append((dcf_fit, statistic, p, theta_bar, effect))

    dcf_threshold = 0.0
    dcf_flags = np.zeros(len(tested), dtype=bool)
    if tested:
        dcf_threshold, dcf_flags = bh_adjust([t[2] for t in tested], q)
    ar_threshold = 0.0
    if ar_rows:
        ar_threshold, ar_flags = bh_adjust([a.p_value for a in ar_rows], q)
        ar_rows = [
            replace(a, significant_fdr=bool(f)) for a, f in zip(ar_rows, ar_flags)
        ]

    ar_by_course = {a.course_id: a for a in ar_rows}
    gap_by_course = {a.course_id: s for a, s in zip(ar_rows, ar_gaps)}
    dcf_results = []
    for (dcf_fit, statistic, p, theta_bar, effect), flag in zip(tested, dcf_flags):
        result = DcfResult(
            fit=dcf_fit,
            lrt_statistic=statistic,
            p_value=p,
            significant_fdr=bool(flag),
            effect_size_prob=effect,
            theta_bar=theta_bar,
            case_label="I",
        )
        label = classify_case(
            result, ar_by_course[dcf_fit.course_id], gap_by_course[dcf_fit.course_id]
        )
        dcf_results.append(replace(result, case_label=label))

    return DcfReport(
        dcf_results=tuple(dcf_results),
        ar_results=tuple(ar_rows),
        skipped=tuple(skipped),
        q=q,
        lrt_df=lrt_df,
        dcf_threshold=dcf_threshold,
        ar_threshold=ar_threshold,
        guard_overridden=overridden,
    )
