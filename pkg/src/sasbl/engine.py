"""Mean-field variational updates and the solver loop shared by all modes.

Factors: ``q(x) = N(mu, Phi)``, ``q(alpha_i) = Gamma(a_tilde, b_tilde_i)``,
``q(gamma) = Gamma(c_tilde, d_tilde)`` and, for learnable indices,
``q(b_i) = Gamma(p, q_tilde_i)``. All Gamma laws use the shape/rate form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.linalg import lapack
from scipy.special import digamma, gammaln

from .model import (BSchedule, Mode, PriorSupport, SensingProblem,
                    SolverConfig, ValidationError, build_b_schedule)

LOG_2PI = math.log(2.0 * math.pi)
JITTER_LEVELS = (1e-12, 1e-10, 1e-8)


class NumericBreakdownError(ArithmeticError):
    """A factorization or bound evaluation produced unusable numbers.

    ``jitter`` lists the relative diagonal loadings that were tried, and
    ``partial`` carries the last finite :class:`SolverResult` when the
    failure happened inside :func:`solve`.
    """

    def __init__(self, message, jitter=(), partial=None):
        super().__init__(message)
        self.jitter = tuple(jitter)
        self.partial = partial


@dataclass(frozen=True)
class PosteriorState:
    mu: np.ndarray
    phi: np.ndarray
    a_tilde: float
    b_tilde: np.ndarray
    alpha_mean: np.ndarray
    c_tilde: float
    d_tilde: float
    gamma_mean: float
    q_tilde: np.ndarray  # one entry per learnable index, in index order
    b_mean: np.ndarray
    x2_mean: np.ndarray


@dataclass(frozen=True)
class SolverResult:
    x_hat: np.ndarray
    state: PosteriorState
    iterations: int
    converged: bool
    elbo_trace: np.ndarray
    mu_delta_trace: np.ndarray


def _cholesky_with_jitter(M):
    """Lower Cholesky factor of ``M``, loading the diagonal if needed."""
    L, info = lapack.dpotrf(M, lower=1, clean=1)
    if info == 0:
        return L
    scale = np.abs(M).sum(axis=1).max()
    tried = []
    for level in JITTER_LEVELS:
        tried.append(level)
        L, info = lapack.dpotrf(M + level * scale * np.eye(M.shape[0]), lower=1, clean=1)
        if info == 0:
            return L
    raise NumericBreakdownError(
        "posterior precision is not numerically positive definite", jitter=tried)


class _Moments(NamedTuple):
    mu: np.ndarray
    phi_diag: np.ndarray
    fit_trace: float  # tr(A^T A Phi)
    logdet_phi: float
    build_phi: Callable[[], np.ndarray]


def _coefficient_space(gram, Aty, gamma_mean, alpha_mean):
    M = gamma_mean * gram
    M[np.diag_indices_from(M)] += alpha_mean
    if not np.all(np.isfinite(M)):
        raise NumericBreakdownError("posterior precision has non-finite entries")
    L = _cholesky_with_jitter(M)
    mu, _ = lapack.dpotrs(L, gamma_mean * Aty, lower=1)
    inv, _ = lapack.dpotri(L, lower=1)
    phi = np.tril(inv) + np.tril(inv, -1).T
    logdet = -2.0 * np.sum(np.log(np.diag(L)))
    return _Moments(mu, np.diag(phi).copy(), float(np.sum(gram * phi)), logdet,
                    lambda: phi)


def _data_space(A, y, gamma_mean, alpha_mean):
    # Phi = W - W A^T S^{-1} A W with W = diag(1/alpha), S = I/gamma + A W A^T
    m = A.shape[0]
    w = 1.0 / alpha_mean
    AW = A * w
    S = AW @ A.T
    S[np.diag_indices_from(S)] += 1.0 / gamma_mean
    if not np.all(np.isfinite(S)):
        raise NumericBreakdownError("data-space covariance has non-finite entries")
    L = _cholesky_with_jitter(S)
    Linv, _ = lapack.dtrtri(L, lower=1)
    G = Linv @ AW
    mu = G.T @ (Linv @ y)
    phi_diag = w - np.einsum("ij,ij->j", G, G)
    # A Phi A^T = I/gamma - S^{-1}/gamma^2
    fit = m / gamma_mean - np.sum(Linv * Linv) / gamma_mean ** 2
    logdet = -(np.sum(np.log(alpha_mean)) + m * math.log(gamma_mean)
               + 2.0 * np.sum(np.log(np.diag(L))))

    def build_phi():
        phi = -(G.T @ G)
        phi[np.diag_indices_from(phi)] += w
        return 0.5 * (phi + phi.T)

    return _Moments(mu, phi_diag, max(float(fit), 0.0), float(logdet), build_phi)


def _update_x_gram(gram, Aty, gamma_mean, alpha_mean):
    mom = _coefficient_space(gram, Aty, gamma_mean, alpha_mean)
    return mom.mu, mom.build_phi()


def update_x(A, y, gamma_mean, alpha_mean):
    """Gaussian factor ``q(x)``.

    Returns ``mu = gamma * Phi @ A.T @ y`` and
    ``Phi = (gamma * A.T @ A + diag(alpha))^{-1}``. The precision matrix is
    Cholesky-factored; on failure a diagonal load of 1e-12, 1e-10 and then
    1e-8 times its infinity norm is tried before giving up.
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    alpha_mean = np.asarray(alpha_mean, dtype=float)
    if A.ndim != 2 or y.shape != (A.shape[0],) or alpha_mean.shape != (A.shape[1],):
        raise ValidationError("update_x: inconsistent shapes")
    if not gamma_mean > 0 or not np.all(alpha_mean > 0):
        raise ValidationError("update_x: precisions must be positive")
    return _update_x_gram(A.T @ A, A.T @ y, float(gamma_mean), alpha_mean)


def expected_residual(A, y, mu, phi) -> float:
    """``E||y - A x||^2`` under ``N(mu, phi)``: ``||y - A mu||^2 + tr(A^T A phi)``."""
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    m, n = A.shape
    if y.shape != (m,) or mu.shape != (n,) or phi.shape != (n, n):
        raise ValidationError("expected_residual: inconsistent shapes")
    r = y - A @ mu
    value = float(r @ r + np.sum((A @ phi) * A))
    return max(value, 0.0)


def update_alpha(a, b_effective, x2_mean, alpha_cap=1e12):
    """Gamma factor over the coefficient precisions.

    ``a_tilde = a + 1/2`` and ``b_tilde_i = b_eff_i + x2_i / 2``, so that
    ``<alpha_i> = (1 + 2a) / (x2_i + 2 b_eff_i)``. Where that ratio exceeds
    ``alpha_cap`` the rate is raised to ``a_tilde / alpha_cap``; the returned
    triple then still satisfies ``alpha_mean == a_tilde / b_tilde``.
    """
    b_effective = np.asarray(b_effective, dtype=float)
    x2_mean = np.asarray(x2_mean, dtype=float)
    a_tilde = a + 0.5
    b_tilde = np.maximum(b_effective + 0.5 * x2_mean, a_tilde / alpha_cap)
    alpha_mean = a_tilde / b_tilde
    return a_tilde, b_tilde, alpha_mean


def update_gamma(c, d, m, residual, gamma_cap=1e12):
    c_tilde = 0.5 * m + c
    d_tilde = max(d + 0.5 * residual, c_tilde / gamma_cap)
    return c_tilde, d_tilde, c_tilde / d_tilde


def update_b(p, q, alpha_mean, learnable, b_mean=None):
    """Gamma factor over the learnable rates: ``q_tilde_i = q + <alpha_i>``
    and ``<b_i> = p / q_tilde_i``. Entries outside ``learnable`` keep their
    values from ``b_mean`` (zeros if not given).
    """
    alpha_mean = np.asarray(alpha_mean, dtype=float)
    learnable = np.asarray(learnable, dtype=bool)
    out = np.zeros_like(alpha_mean) if b_mean is None else np.array(b_mean, dtype=float)
    q_tilde = q + alpha_mean[learnable]
    out[learnable] = p / q_tilde
    return q_tilde, out


def _gamma_entropy(shape, rate):
    return shape - np.log(rate) + gammaln(shape) + (1.0 - shape) * digamma(shape)


def _elbo_terms(config, schedule, m, n, residual, x2_mean, logdet_phi,
                a_tilde, b_tilde, c_tilde, d_tilde, q_tilde):
    a, c, d, p, q = config.a, config.c, config.d, config.p, config.q
    learn = schedule.learnable

    e_gamma = c_tilde / d_tilde
    e_log_gamma = digamma(c_tilde) - math.log(d_tilde)
    e_alpha = a_tilde / b_tilde
    e_log_alpha = digamma(a_tilde) - np.log(b_tilde)

    b_val = np.array(schedule.values, dtype=float)
    log_b = np.log(b_val)
    if learn.any():
        b_val[learn] = p / q_tilde
        log_b[learn] = digamma(p) - np.log(q_tilde)

    # expected log joint
    total = 0.5 * m * (e_log_gamma - LOG_2PI) - 0.5 * e_gamma * residual
    total += np.sum(0.5 * (e_log_alpha - LOG_2PI) - 0.5 * e_alpha * x2_mean)
    total += np.sum(a * log_b - gammaln(a) + (a - 1.0) * e_log_alpha - b_val * e_alpha)
    total += c * math.log(d) - gammaln(c) + (c - 1.0) * e_log_gamma - d * e_gamma
    if learn.any():
        total += np.sum(p * math.log(q) - gammaln(p) + (p - 1.0) * log_b[learn]
                        - q * b_val[learn])
        total += np.sum(_gamma_entropy(p, q_tilde))
    # entropies
    total += 0.5 * n * (1.0 + LOG_2PI) + 0.5 * logdet_phi
    total += np.sum(_gamma_entropy(a_tilde, b_tilde))
    total += _gamma_entropy(c_tilde, d_tilde)

    total = float(total)
    if not math.isfinite(total):
        raise NumericBreakdownError("evidence lower bound is not finite")
    return total


def elbo(problem: SensingProblem, schedule: BSchedule, config: SolverConfig,
         state: PosteriorState) -> float:
    """Evidence lower bound of the current mean-field factors.

    Covers the likelihood, the Gaussian coefficient prior, the per-index
    Gamma prior on ``alpha``, the Gamma prior on ``gamma`` and, on learnable
    indices, the Gamma(p, q) prior on ``b_i``; plus the entropy of every
    factor. Deterministic given its inputs.
    """
    try:
        chol = np.linalg.cholesky(state.phi)
        logdet_phi = 2.0 * float(np.sum(np.log(np.diag(chol))))
    except np.linalg.LinAlgError:
        sign, logdet_phi = np.linalg.slogdet(state.phi)
        if sign <= 0:
            raise NumericBreakdownError("posterior covariance is not positive definite")
    residual = expected_residual(problem.A, problem.y, state.mu, state.phi)
    return _elbo_terms(config, schedule, problem.m, problem.n, residual, state.x2_mean,
                       logdet_phi, state.a_tilde, state.b_tilde, state.c_tilde,
                       state.d_tilde, state.q_tilde)


def initial_state(problem: SensingProblem, schedule: BSchedule,
                  config: SolverConfig) -> PosteriorState:
    """Unit coefficient precisions, noise precision scaled to the data energy
    and learnable rates at their prior mean."""
    m, n = problem.A.shape
    y = problem.y
    a_tilde = config.a + 0.5
    alpha = np.ones(n)
    c_tilde = 0.5 * m + config.c
    gamma = min(m / (0.1 * float(y @ y) + 1e-12), config.gamma_cap)
    n_learn = int(schedule.learnable.sum())
    return PosteriorState(
        mu=np.zeros(n), phi=np.eye(n), a_tilde=a_tilde, b_tilde=a_tilde / alpha,
        alpha_mean=alpha, c_tilde=c_tilde, d_tilde=c_tilde / gamma, gamma_mean=gamma,
        q_tilde=np.full(n_learn, config.q), b_mean=np.array(schedule.values, dtype=float),
        x2_mean=np.ones(n))


def _column_scaled(problem):
    norms = np.linalg.norm(problem.A, axis=0)
    norms[norms == 0] = 1.0
    return SensingProblem(problem.A / norms, problem.y), norms


def solve(problem: SensingProblem, prior: Optional[PriorSupport] = None,
          config: Optional[SolverConfig] = None,
          callback: Optional[Callable] = None) -> SolverResult:
    """Run cyclic updates x -> alpha -> gamma (-> b in SL mode) to convergence.

    Stops once ``||mu_t - mu_{t-1}||_2 <= epsilon`` or after ``max_iter``
    cycles. ``callback(t, state, b_effective)`` is invoked after every cycle
    with the rates that fed that cycle's alpha update.

    When ``m < n`` the Gaussian factor is evaluated through the ``m x m``
    matrix ``I / gamma + A diag(1/alpha) A^T`` and the full covariance is only
    assembled for states that leave this function.
    """
    config = config or SolverConfig()
    prior = prior or PriorSupport()
    schedule = build_b_schedule(config, prior, problem.n)
    norms = None
    if config.normalize_columns:
        problem, norms = _column_scaled(problem)

    A, y = problem.A, problem.y
    m, n = A.shape
    data_space = m < n
    gram = None if data_space else A.T @ A
    Aty = None if data_space else A.T @ y
    learn = schedule.learnable
    sl_mode = config.mode is Mode.SL and bool(learn.any())

    state = initial_state(problem, schedule, config)
    alpha, gamma, b_mean, q_t = state.alpha_mean, state.gamma_mean, state.b_mean, state.q_tilde
    mu_prev = state.mu
    elbos, deltas = [], []
    last = None  # (moments, factors) of the newest finite cycle

    def make_state(entry):
        mom, (a_t, b_t, al, c_t, d_t, g, qt, bm, x2) = entry
        return PosteriorState(mu=mom.mu, phi=mom.build_phi(), a_tilde=a_t, b_tilde=b_t,
                              alpha_mean=al, c_tilde=c_t, d_tilde=d_t, gamma_mean=g,
                              q_tilde=qt, b_mean=bm, x2_mean=x2)

    def result(entry, conv):
        st = make_state(entry)
        x_hat = st.mu if norms is None else st.mu / norms
        return SolverResult(x_hat=x_hat, state=st, iterations=len(deltas), converged=conv,
                            elbo_trace=np.array(elbos), mu_delta_trace=np.array(deltas))

    def breakdown(exc):
        exc.partial = None if last is None else result(last, False)
        return exc

    converged = False
    for t in range(1, config.max_iter + 1):
        try:
            if data_space:
                mom = _data_space(A, y, gamma, alpha)
            else:
                mom = _coefficient_space(gram, Aty, gamma, alpha)
        except NumericBreakdownError as exc:
            raise breakdown(exc)
        mu = mom.mu
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(mom.phi_diag))):
            if last is None:
                raise NumericBreakdownError("first iterate is not finite")
            return result(last, False)

        x2 = mu * mu + mom.phi_diag
        b_eff = b_mean
        a_t, b_t, alpha = update_alpha(config.a, b_eff, x2, config.alpha_cap)
        r = y - A @ mu
        residual = max(float(r @ r) + mom.fit_trace, 0.0)
        c_t, d_t, gamma = update_gamma(config.c, config.d, m, residual, config.gamma_cap)
        if sl_mode:
            q_t, b_mean = update_b(config.p, config.q, alpha, learn, b_mean)

        try:
            elbos.append(_elbo_terms(config, schedule, m, n, residual, x2, mom.logdet_phi,
                                     a_t, b_t, c_t, d_t, q_t))
        except NumericBreakdownError as exc:
            raise breakdown(exc)
        delta = float(np.linalg.norm(mu - mu_prev))
        deltas.append(delta)
        last = (mom, (a_t, b_t, alpha, c_t, d_t, gamma, q_t, b_mean, x2))
        mu_prev = mu
        if callback is not None:
            callback(t, make_state(last), b_eff)

        tol = config.epsilon
        if config.relative_tol:
            tol = config.epsilon * (1.0 + float(np.linalg.norm(mu)))
        if delta <= tol:
            converged = True
            break

    return result(last, converged)
