"""Logistic response models fitted by marginal maximum likelihood.

The response model is P(x=1 | theta) = sigmoid(<alpha_c, theta - delta_c>)
with a standard multivariate normal trait prior. Item parameters are
estimated by EM over a fixed quadrature grid (expected counts per node in
the E-step, per-course Newton updates in the M-step); traits are posterior
means (EAP) on the same grid. Joint ML is deliberately avoided: it is
inconsistent for item parameters, and the prior pins the latent scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .data import (
    GroupAssignment,
    ResponseMatrix,
    matrix_from_dense,
    synthetic_course_ids,
    synthetic_student_ids,
)
from .errors import DataError, FitError

# Quadrature points per dimension, chosen so the full grid stays desk-sized
# (21 / 121 / 343 nodes for 1-3 dimensions), spanning +-4 per dimension.
QUADRATURE_POINTS = {1: 21, 2: 11, 3: 7}
QUADRATURE_SPAN = 4.0

_LL_DECREASE_TOL = 1e-9
_MSTEP_RIDGE = 1e-6
_MSTEP_MAX_NEWTON = 25
_MSTEP_GRAD_TOL = 1e-9
_INIT_SEED = 20240517  # fixed: fit() must be a pure function of its inputs


@dataclass(frozen=True)
class ModelSpec:
    """Model family and estimation settings.

    family "1PL" fixes every discrimination at 1 (one dimension only);
    "2PL" frees the discriminations, with `dims` trait dimensions.
    """

    family: str = "1PL"
    dims: int = 1
    quadrature_points_per_dim: int | None = None
    max_em_iterations: int = 500
    loglik_rel_tolerance: float = 1e-4

    def __post_init__(self):
        if self.family not in ("1PL", "2PL"):
            raise DataError(f"unknown model family: {self.family!r}")
        if self.family == "1PL" and self.dims != 1:
            raise DataError("1PL is one-dimensional; use 2PL for dims > 1")
        if self.dims < 1:
            raise DataError("dims must be >= 1")
        if self.max_em_iterations < 1 or self.loglik_rel_tolerance <= 0:
            raise DataError("invalid estimation settings")

    @property
    def points_per_dim(self) -> int:
        if self.quadrature_points_per_dim is not None:
            return self.quadrature_points_per_dim
        return QUADRATURE_POINTS.get(self.dims, 5)

    @property
    def label(self) -> str:
        if self.family == "1PL":
            return "1PL"
        return f"2PL-{self.dims}DIM"


@dataclass(frozen=True)
class FittedModel:
    """Item parameters plus fit metadata; immutable once fitted."""

    spec: ModelSpec
    course_ids: tuple[str, ...]
    discriminations: np.ndarray  # (C, dims)
    locations: np.ndarray  # (C, dims)
    projected_difficulty: np.ndarray  # (C,)
    marginal_loglik: float
    em_iterations_used: int
    converged: bool
    loglik_history: tuple[float, ...]
    trait_prior: str = "standard-normal"


@dataclass(frozen=True)
class TraitEstimates:
    """EAP trait estimates with per-dimension posterior spread."""

    student_ids: tuple[str, ...]
    traits: np.ndarray  # (S, dims)
    posterior_sd: np.ndarray  # (S, dims)
    trait_norm: np.ndarray  # (S,)


def irf(theta, alpha, delta) -> float:
    """Achievement probability sigmoid(<alpha, theta - delta>)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    if not (theta.shape == alpha.shape == delta.shape):
        raise DataError("theta, alpha, delta must share one dimension")
    return float(expit(np.dot(alpha, theta - delta)))


def projected_difficulty(alpha, delta) -> float:
    """Collapse a location vector to one difficulty: <alpha, delta> / ||alpha||."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    norm = float(np.linalg.norm(alpha))
    if norm == 0.0:
        raise DataError("undefined difficulty: zero discrimination vector")
    return float(np.dot(alpha, delta) / norm)


def quadrature_grid(dims: int, points_per_dim: int, span: float = QUADRATURE_SPAN):
    """Tensor grid of nodes with normalized standard-normal log-weights."""
    axis = np.linspace(-span, span, points_per_dim)
    log_w_axis = -0.5 * axis**2
    if dims == 1:
        nodes = axis[:, None]
        log_w = log_w_axis
    else:
        mesh = np.meshgrid(*([axis] * dims), indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=1)
        log_w = sum(np.meshgrid(*([log_w_axis] * dims), indexing="ij")).ravel()
    return nodes, log_w - logsumexp(log_w)


def _free_slope_mask(spec: ModelSpec, n_courses: int) -> np.ndarray:
    """Which discrimination entries are free to vary.

    1PL: none (all fixed to 1). Multidimensional 2PL: the first dims-1
    courses anchor the solution with a zero upper triangle, removing
    rotational indeterminacy (dims*(dims-1)/2 constraints).
    """
    if spec.family == "1PL":
        return np.zeros((n_courses, spec.dims), dtype=bool)
    free = np.ones((n_courses, spec.dims), dtype=bool)
    for c in range(min(spec.dims - 1, n_courses)):
        free[c, c + 1 :] = False
    return free


def free_parameter_count(spec: ModelSpec, n_courses: int) -> int:
    """Free parameters: |C| for 1PL, |C|*(n+1) - n(n-1)/2 for 2PL-nDIM."""
    if spec.family == "1PL":
        return n_courses
    n = spec.dims
    return n_courses * (n + 1) - n * (n - 1) // 2


def _course_log_probs(alpha, intercept, nodes):
    """Per-course log response probabilities at each node: (C, K) pair."""
    eta = alpha @ nodes.T + intercept[:, None]
    return log_expit(eta), log_expit(-eta)


def _estep(x_weighted, miss_weighted, alpha, intercept, nodes, log_w):
    """Posterior node weights per student and the marginal log-likelihood.

    x_weighted holds observed 1-responses, miss_weighted observed
    0-responses (both zero where unobserved).
    """
    log_p, log_q = _course_log_probs(alpha, intercept, nodes)
    joint = x_weighted @ log_p + miss_weighted @ log_q + log_w[None, :]
    ll_per_student = logsumexp(joint, axis=1)
    posterior = np.exp(joint - ll_per_student[:, None])
    return float(ll_per_student.sum()), posterior


def _expected_q(eta, r_ck, n_ck):
    """Expected complete-data log-likelihood per course at logits eta."""
    return (r_ck * log_expit(eta) + (n_ck - r_ck) * log_expit(-eta)).sum(axis=1)


def _mstep_intercept_only(intercept, nodes1d, r_ck, n_ck):
    """Vectorized Newton update of per-course intercepts (slopes fixed at 1)."""
    b = intercept.copy()
    for _ in range(_MSTEP_MAX_NEWTON):
        eta = nodes1d[None, :] + b[:, None]
        p = expit(eta)
        grad = (r_ck - n_ck * p).sum(axis=1)
        hess = (n_ck * p * (1.0 - p)).sum(axis=1) + _MSTEP_RIDGE
        step = grad / hess
        if np.abs(step).max() < _MSTEP_GRAD_TOL:
            break
        q_cur = _expected_q(eta, r_ck, n_ck)
        remaining = np.ones(b.size, dtype=bool)
        for _ in range(30):
            cand = np.where(remaining, b + step, b)
            q_new = _expected_q(nodes1d[None, :] + cand[:, None], r_ck, n_ck)
            ok = remaining & (q_new >= q_cur - 1e-12)
            b = np.where(ok, cand, b)
            remaining &= ~ok
            if not remaining.any():
                break
            step = np.where(remaining, 0.5 * step, step)
    return b


def _mstep_per_course(alpha, intercept, nodes, r_ck, n_ck, free):
    """Newton update of (free slopes, intercept) course by course."""
    alpha = alpha.copy()
    intercept = intercept.copy()
    for c in range(alpha.shape[0]):
        idx = np.flatnonzero(free[c])
        z = np.concatenate([nodes[:, idx], np.ones((nodes.shape[0], 1))], axis=1)
        params = np.concatenate([alpha[c, idx], [intercept[c]]])
        fixed = alpha[c].copy()
        fixed[idx] = 0.0
        offset = nodes @ fixed  # contribution of constrained slopes
        r, n = r_ck[c], n_ck[c]
        for _ in range(_MSTEP_MAX_NEWTON):
            eta = offset + z @ params
            p = expit(eta)
            grad = z.T @ (r - n * p)
            if np.abs(grad).max() < 1e-8:
                break
            w = n * p * (1.0 - p)
            hess = (z * w[:, None]).T @ z + _MSTEP_RIDGE * np.eye(z.shape[1])
            step = np.linalg.solve(hess, grad)
            q_cur = float(_expected_q(eta[None, :], r[None, :], n[None, :])[0])
            for _ in range(30):
                cand = params + step
                q_new = float(
                    _expected_q((offset + z @ cand)[None, :], r[None, :], n[None, :])[0]
                )
                if q_new >= q_cur - 1e-12:
                    params = cand
                    break
                step = 0.5 * step
            else:
                break
        alpha[c, idx] = params[:-1]
        intercept[c] = params[-1]
    return alpha, intercept


def _initial_params(x, mask, spec: ModelSpec, free):
    """Start from observed-rate logits; break slope symmetry deterministically."""
    counts = mask.sum(axis=0) if mask is not None else np.full(x.shape[1], x.shape[0])
    ones = (x * mask).sum(axis=0) if mask is not None else x.sum(axis=0)
    rate = np.clip(ones / np.maximum(counts, 1), 1e-3, 1 - 1e-3)
    intercept = np.log(rate / (1.0 - rate))
    alpha = np.ones((x.shape[1], spec.dims))
    if spec.family == "2PL" and spec.dims > 1:
        rng = np.random.Generator(np.random.PCG64(_INIT_SEED))
        jitter = 0.1 * rng.standard_normal(alpha.shape)
        alpha[:, 1:] = 0.5 + jitter[:, 1:]
    alpha[~free & (np.arange(spec.dims)[None, :] > 0)] = 0.0
    return alpha, intercept


def _fit_arrays(x, mask, spec: ModelSpec, course_labels=None):
    """EM core on dense arrays. mask=None means fully observed.

    Returns (alpha, intercept, loglik, history, iterations, converged,
    posterior); the posterior corresponds to the returned parameters.
    """
    x = np.asarray(x, dtype=float)
    n_students, n_courses = x.shape
    if n_students == 0 or n_courses == 0:
        raise FitError("empty response matrix")
    if mask is not None:
        mask = np.asarray(mask, dtype=float)
        x_weighted = x * mask
        miss_weighted = mask - x_weighted
    else:
        x_weighted = x
        miss_weighted = 1.0 - x

    ones = x_weighted.sum(axis=0)
    counts = mask.sum(axis=0) if mask is not None else np.full(n_courses, n_students, dtype=float)
    degenerate = (ones <= 0) | (ones >= counts)
    if degenerate.any():
        c = int(np.argmax(degenerate))
        label = course_labels[c] if course_labels is not None else str(c)
        raise FitError(f"course {label!r} has constant responses; filter the matrix first")

    nodes, log_w = quadrature_grid(spec.dims, spec.points_per_dim)
    free = _free_slope_mask(spec, n_courses)
    alpha, intercept = _initial_params(x, mask, spec, free)
    nodes1d = nodes[:, 0]

    loglik, posterior = _estep(x_weighted, miss_weighted, alpha, intercept, nodes, log_w)
    if not np.isfinite(loglik):
        raise FitError("non-finite marginal log-likelihood at initialization")
    history = [loglik]
    converged = False
    iterations = 0
    for _ in range(spec.max_em_iterations):
        n_ck = (mask.T @ posterior) if mask is not None else np.broadcast_to(
            posterior.sum(axis=0), (n_courses, posterior.shape[1])
        )
        r_ck = x_weighted.T @ posterior
        if spec.family == "1PL":
            intercept = _mstep_intercept_only(intercept, nodes1d, r_ck, n_ck)
        else:
            alpha, intercept = _mstep_per_course(alpha, intercept, nodes, r_ck, n_ck, free)
        iterations += 1
        new_loglik, posterior = _estep(x_weighted, miss_weighted, alpha, intercept, nodes, log_w)
        if not np.isfinite(new_loglik):
            raise FitError("non-finite marginal log-likelihood during EM")
        if new_loglik < loglik - _LL_DECREASE_TOL:
            raise FitError(
                f"EM log-likelihood decreased ({loglik:.9f} -> {new_loglik:.9f})"
            )
        history.append(new_loglik)
        done = abs(new_loglik - loglik) / max(abs(loglik), 1e-300) < spec.loglik_rel_tolerance
        loglik = new_loglik
        if done:
            converged = True
            break
    return alpha, intercept, loglik, history, iterations, converged, posterior


def _model_from_arrays(spec, course_ids, alpha, intercept, loglik, history, iterations, converged):
    norms = np.linalg.norm(alpha, axis=1)
    if (norms == 0.0).any():
        raise FitError("zero discrimination vector after fitting")
    difficulty = -intercept / norms
    locations = difficulty[:, None] * (alpha / norms[:, None])
    return FittedModel(
        spec=spec,
        course_ids=tuple(course_ids),
        discriminations=alpha,
        locations=locations,
        projected_difficulty=difficulty,
        marginal_loglik=loglik,
        em_iterations_used=iterations,
        converged=converged,
        loglik_history=tuple(history),
    )


def fit(matrix: ResponseMatrix, spec: ModelSpec = ModelSpec()) -> FittedModel:
    """Fit item parameters by marginal ML under the standard normal prior.

    The matrix must already be filtered: every course needs response
    variance. Non-convergence within the iteration budget is reported on
    the result, not raised.
    """
    x, mask = matrix._dense
    alpha, intercept, loglik, history, iterations, converged, _ = _fit_arrays(
        x, mask, spec, course_labels=matrix.courses
    )
    if not converged:
        warnings.warn(
            f"EM did not reach tolerance within {spec.max_em_iterations} iterations",
            stacklevel=2,
        )
    return _model_from_arrays(
        spec, matrix.courses, alpha, intercept, loglik, history, iterations, converged
    )


def _eap_from_posterior(posterior, nodes):
    theta = posterior @ nodes
    second = posterior @ nodes**2
    var = np.maximum(second - theta**2, 0.0)
    return theta, np.sqrt(var)


def _alpha_intercept(model: FittedModel):
    alpha = model.discriminations
    intercept = -(alpha * model.locations).sum(axis=1)
    return alpha, intercept


def _check_courses(model: FittedModel, matrix: ResponseMatrix):
    if tuple(model.course_ids) != tuple(matrix.courses):
        raise DataError("model and matrix disagree on the course set")


def estimate_traits(
    model: FittedModel, matrix: ResponseMatrix, warn_on_empty: bool = True
) -> TraitEstimates:
    """EAP traits: posterior mean and spread per student on the fitted grid.

    Students with no responses are excluded (with a warning by default).
    """
    _check_courses(model, matrix)
    x, mask = matrix._dense
    nodes, log_w = quadrature_grid(model.spec.dims, model.spec.points_per_dim)
    alpha, intercept = _alpha_intercept(model)
    x_weighted = x * mask
    _, posterior = _estep(x_weighted, mask - x_weighted, alpha, intercept, nodes, log_w)
    theta, sd = _eap_from_posterior(posterior, nodes)

    answered = mask.any(axis=1)
    if not answered.all():
        dropped = [s for s, a in zip(matrix.students, answered) if not a]
        if warn_on_empty:
            warnings.warn(f"excluding {len(dropped)} student(s) with no responses", stacklevel=2)
        theta, sd = theta[answered], sd[answered]
        ids = tuple(s for s, a in zip(matrix.students, answered) if a)
    else:
        ids = matrix.students
    return TraitEstimates(
        student_ids=ids,
        traits=theta,
        posterior_sd=sd,
        trait_norm=np.linalg.norm(theta, axis=1),
    )


def marginal_log_likelihood(model: FittedModel, matrix: ResponseMatrix) -> float:
    """Sum over students of the log marginal response probability.

    A student with no responses contributes log 1 = 0.
    """
    _check_courses(model, matrix)
    x, mask = matrix._dense
    nodes, log_w = quadrature_grid(model.spec.dims, model.spec.points_per_dim)
    alpha, intercept = _alpha_intercept(model)
    x_weighted = x * mask
    loglik, _ = _estep(x_weighted, mask - x_weighted, alpha, intercept, nodes, log_w)
    return loglik


def response_probabilities(
    difficulties: np.ndarray,
    traits: np.ndarray,
    dcf_injection: tuple[int, float, np.ndarray] | None = None,
) -> np.ndarray:
    """Achievement probabilities sigmoid(theta_s - delta_c) for a 1PL model.

    `dcf_injection` = (course_index, beta1, group_codes) shifts the injected
    course's response function by beta1 * g_s.
    """
    difficulties = np.asarray(difficulties, dtype=float)
    traits = np.asarray(traits, dtype=float)
    probs = expit(traits[:, None] - difficulties[None, :])
    if dcf_injection is not None:
        course, beta1, codes = dcf_injection
        if not 0 <= course < difficulties.size:
            raise DataError(f"injection course index {course} out of range")
        codes = np.asarray(codes, dtype=float)
        probs[:, course] = expit(traits - difficulties[course] + beta1 * codes)
    return probs


def simulate_responses(
    difficulties,
    traits,
    dcf_injection: tuple[int, float, GroupAssignment] | None = None,
    rng_seed: int = 0,
) -> ResponseMatrix:
    """Draw Bernoulli responses from a 1PL model; deterministic per seed.

    Students and courses get synthetic ids ("s00000", "c000", ...) in input
    order; term_index equals the course position, so every simulated student
    progresses through the courses in the same order.
    """
    difficulties = np.asarray(difficulties, dtype=float)
    traits = np.asarray(traits, dtype=float)
    students = synthetic_student_ids(traits.size)
    injection = None
    if dcf_injection is not None:
        course, beta1, groups = dcf_injection
        injection = (course, beta1, groups.codes_for(students))
    probs = response_probabilities(difficulties, traits, injection)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(rng_seed)))
    draws = (rng.random(probs.shape) < probs).astype(np.int8)
    return matrix_from_dense(draws, students=students)
