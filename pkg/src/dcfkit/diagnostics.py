"""Model checking battery: dimensionality, local independence, reliability,
and concurrent validity.

Dimensionality is selected by BIC across 1PL and 1-3 dimensional 2PL fits.
Local independence is screened with Yen's Q3 (pairwise correlations of
response residuals). Reliability splits each student's responses in half
and correlates the trait estimates from independent per-half fits.
Validity correlates the trait summary with GPA and the projected course
difficulty with the course achievement rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import AchievementRates, ResponseMatrix
from .errors import DataError, FitError
from .irt import (
    FittedModel,
    ModelSpec,
    TraitEstimates,
    estimate_traits,
    fit,
    free_parameter_count,
)
from .statutil import pearson_with_p

Q3_FLAG_THRESHOLD = 0.2


def bic(loglik: float, parameter_count: int, n_students: float) -> float:
    """Bayesian information criterion: k * ln(N) - 2 * loglik."""
    if n_students < 1:
        raise DataError("n_students must be >= 1")
    return parameter_count * math.log(n_students) - 2.0 * loglik


@dataclass(frozen=True)
class CandidateFit:
    spec: ModelSpec
    loglik: float
    parameter_count: int
    bic: float
    model: FittedModel | None
    error: str | None = None


@dataclass(frozen=True)
class SelectionReport:
    """BIC comparison across candidate dimensionalities."""

    candidates: tuple[CandidateFit, ...]
    best: int
    rasch_admissible: bool

    @property
    def best_candidate(self) -> CandidateFit:
        return self.candidates[self.best]

    @property
    def best_label(self) -> str:
        return self.best_candidate.spec.label


@dataclass(frozen=True)
class Q3Report:
    course_ids: tuple[str, ...]
    pair_q3: np.ndarray  # symmetric, NaN on the diagonal and skipped pairs
    mean_q3: float
    flagged_pairs: tuple[tuple[str, str], ...]
    passed: bool


@dataclass(frozen=True)
class ReliabilityReport:
    scheme: str
    pearson_r: float
    p_value: float
    n_students_correlated: int


@dataclass(frozen=True)
class ValidityReport:
    student_r: float
    student_p: float
    n_students: int
    course_r: float
    course_p: float
    n_courses: int


def candidate_specs(dims=(1, 2, 3), base: ModelSpec = ModelSpec()) -> tuple[ModelSpec, ...]:
    """The default ladder: 1PL plus 2PL at each requested dimensionality."""
    specs = [
        ModelSpec(
            family="1PL",
            dims=1,
            max_em_iterations=base.max_em_iterations,
            loglik_rel_tolerance=base.loglik_rel_tolerance,
        )
    ]
    for n in dims:
        specs.append(
            ModelSpec(
                family="2PL",
                dims=n,
                max_em_iterations=base.max_em_iterations,
                loglik_rel_tolerance=base.loglik_rel_tolerance,
            )
        )
    return tuple(specs)


def select_model(matrix: ResponseMatrix, specs=None) -> SelectionReport:
    """Fit the candidate ladder and pick the BIC minimizer.

    Individual fit failures are recorded per candidate and selection
    proceeds over the rest; everything failing is an error. Ties break
    toward fewer parameters. The Rasch-based group analysis is admissible
    only when the winner is unidimensional.
    """
    if specs is None:
        specs = candidate_specs()
    candidates = []
    for spec in specs:
        k = free_parameter_count(spec, matrix.n_courses)
        try:
            model = fit(matrix, spec)
        except FitError as exc:
            candidates.append(CandidateFit(spec, math.nan, k, math.inf, None, str(exc)))
            continue
        candidates.append(
            CandidateFit(
                spec,
                model.marginal_loglik,
                k,
                bic(model.marginal_loglik, k, matrix.n_students),
                model,
            )
        )
    usable = [i for i, c in enumerate(candidates) if c.model is not None]
    if not usable:
        raise FitError("every candidate model failed to fit")
    best = min(usable, key=lambda i: (candidates[i].bic, candidates[i].parameter_count))
    return SelectionReport(
        candidates=tuple(candidates),
        best=best,
        rasch_admissible=candidates[best].spec.dims == 1,
    )


def q3_statistics(
    model: FittedModel,
    traits: TraitEstimates,
    matrix: ResponseMatrix,
    flag_threshold: float = Q3_FLAG_THRESHOLD,
    min_pair_overlap: int = 30,
) -> Q3Report:
    """Yen's Q3: pairwise correlation of response residuals across courses.

    Residual = observed response minus the model probability at the
    student's trait estimate. Pairs sharing fewer than `min_pair_overlap`
    students are skipped. A pair is flagged when its Q3 deviates from the
    mean Q3 by more than `flag_threshold`.
    """
    if matrix.n_courses < 2:
        raise DataError("Q3 needs at least two courses")
    if tuple(model.course_ids) != tuple(matrix.courses):
        raise DataError("model and matrix disagree on the course set")
    trait_of = dict(zip(traits.student_ids, traits.traits))
    theta = np.array(
        [trait_of.get(s, np.full(model.spec.dims, np.nan)) for s in matrix.students]
    )
    x, mask = matrix.to_dense()
    eta = theta @ model.discriminations.T - (
        model.discriminations * model.locations
    ).sum(axis=1)
    resid = np.where(mask & np.isfinite(eta), x - expit(eta), 0.0)
    obs = (mask & np.isfinite(eta)).astype(float)

    n = obs.T @ obs
    sx = resid.T @ obs
    sxx = (resid**2).T @ obs
    sxy = resid.T @ resid
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = sxy - sx * sx.T / n
        var_x = sxx - sx**2 / n
        q3 = cov / np.sqrt(var_x * var_x.T)
    q3[~np.isfinite(q3)] = np.nan
    q3[n < min_pair_overlap] = np.nan
    np.fill_diagonal(q3, np.nan)

    upper = np.triu_indices(matrix.n_courses, k=1)
    values = q3[upper]
    if not np.isfinite(values).any():
        raise DataError("no course pair has enough common students")
    mean_q3 = float(np.nanmean(values))
    deviates = np.abs(q3 - mean_q3) > flag_threshold
    flagged = [
        (matrix.courses[i], matrix.courses[j])
        for i, j in zip(*upper)
        if np.isfinite(q3[i, j]) and deviates[i, j]
    ]
    return Q3Report(
        course_ids=matrix.courses,
        pair_q3=q3,
        mean_q3=mean_q3,
        flagged_pairs=tuple(flagged),
        passed=not flagged,
    )


def _split_entry_mask(matrix: ResponseMatrix, scheme: str, rng_seed: int) -> np.ndarray:
    """True marks the first half of each student's responses.

    Random: a seeded shuffle per student. Time: earlier terms first. Odd
    counts put the extra response in the first (earlier) half.
    """
    if scheme == "random":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(rng_seed)))
        key = rng.random(matrix.n_entries)
        order = np.lexsort((key, matrix.student_idx))
    elif scheme == "time":
        order = np.lexsort((matrix.course_idx, matrix.terms, matrix.student_idx))
    else:
        raise DataError(f"unknown split scheme: {scheme!r}")
    counts = matrix.student_counts()
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    position = np.empty(matrix.n_entries, dtype=np.int64)
    position[order] = np.arange(matrix.n_entries) - starts[matrix.student_idx[order]]
    first_size = (counts[matrix.student_idx] + 1) // 2
    return position < first_size


def _half_traits(half: ResponseMatrix, label: str, base: ModelSpec):
    """Rasch traits for one half, keeping only courses with variance there."""
    keep = half.course_variance_mask()
    if not keep.any():
        raise DataError(f"{label} has no fittable course")
    reduced = half.subset(np.ones(half.n_students, dtype=bool), keep)
    model = fit(reduced, base)
    estimates = estimate_traits(model, reduced, warn_on_empty=False)
    return dict(zip(estimates.student_ids, estimates.traits[:, 0]))


def correlate_half_traits(
    first: ResponseMatrix,
    second: ResponseMatrix,
    eligible: set[str],
    base: ModelSpec = ModelSpec(),
) -> tuple[float, float, int]:
    """Fit a Rasch model per half and correlate traits over eligible students."""
    traits_1 = _half_traits(first, "first half", base)
    traits_2 = _half_traits(second, "second half", base)
    common = sorted(eligible & traits_1.keys() & traits_2.keys())
    return pearson_with_p(
        [traits_1[s] for s in common], [traits_2[s] for s in common]
    )


def split_half_reliability(
    matrix: ResponseMatrix,
    scheme: str = "random",
    rng_seed: int = 0,
    min_half_responses: int = 2,
    spec: ModelSpec = ModelSpec(),
) -> ReliabilityReport:
    """Internal-consistency reliability via disjoint half fits.

    Each student's responses are partitioned in two (at random, or into the
    earlier and later parts of their record), one Rasch model is fitted per
    half, and the two trait estimates are correlated across students with
    at least `min_half_responses` responses in each half.
    """
    first_mask = _split_entry_mask(matrix, scheme, rng_seed)
    first = matrix.select_entries(first_mask)
    second = matrix.select_entries(~first_mask)
    counts_1 = first.student_counts()
    counts_2 = second.student_counts()
    eligible = {
        s
        for s, a, b in zip(matrix.students, counts_1, counts_2)
        if a >= min_half_responses and b >= min_half_responses
    }
    r, p, n = correlate_half_traits(first, second, eligible, spec)
    return ReliabilityReport(scheme=scheme, pearson_r=r, p_value=p, n_students_correlated=n)


def concurrent_validity(
    traits: TraitEstimates,
    gpa: dict[str, float],
    model: FittedModel,
    ar: AchievementRates,
) -> ValidityReport:
    """Correlate the trait summary with GPA and difficulty with course AR.

    The trait summary is the signed trait for one dimension and the trait
    vector norm otherwise. Degenerate correlations (under 3 points or zero
    variance) come back as NaN.
    """
    missing = [s for s in traits.student_ids if s not in gpa]
    if missing:
        raise DataError(f"GPA missing for {len(missing)} student(s), e.g. {missing[0]!r}")
    summary = traits.traits[:, 0] if model.spec.dims == 1 else traits.trait_norm
    gpa_values = np.array([gpa[s] for s in traits.student_ids])
    student_r, student_p, n_students = pearson_with_p(summary, gpa_values)
    if tuple(ar.course_ids) != tuple(model.course_ids):
        raise DataError("achievement rates and model disagree on the course set")
    course_r, course_p, n_courses = pearson_with_p(model.projected_difficulty, ar.overall)
    return ValidityReport(
        student_r=student_r,
        student_p=student_p,
        n_students=n_students,
        course_r=course_r,
        course_p=course_p,
        n_courses=n_courses,
    )
