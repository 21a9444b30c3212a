"""CRLB computation, quasi-stationary statistics and Monte Carlo diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, stats

from .errors import ConfigMismatch, InsufficientData, InsufficientHorizon, NotPositiveDefinite
from .estimators import RunRecord, StepSchedule
from .signal_model import ArxSystem, Trajectory, regressors

DEFAULT_BURN_IN = 1000
PD_TOLERANCE = 1e-8
LP_ORDERS = (1, 2, 4)


# -- time-averaged covariances ----------------------------------------------------------


def empirical_covariance(x, tau: int, burn_in: int = DEFAULT_BURN_IN, z=None) -> float:
    """Time average of ``x_k z_{k-tau}`` over ``k >= burn_in`` (``z = x`` by default).

    Sequences are indexed from 0. Only products with both indices inside the
    sequence are averaged.
    """
    x = np.asarray(x, dtype=float)
    z = x if z is None else np.asarray(z, dtype=float)
    N = min(x.size, z.size)
    lo = max(burn_in, tau)
    hi = min(N, N + tau)
    if hi - lo < 2:
        raise InsufficientData(
            f"{N} samples leave {max(hi - lo, 0)} terms after burn-in {burn_in} at lag {tau}"
        )
    return float(np.mean(x[lo:hi] * z[lo - tau : hi - tau]))


@dataclass(frozen=True)
class CovarianceFunctionSet:
    """``R_y[tau]``, ``R_u[tau]`` for tau = 0..tau_max and ``R_yu[tau + tau_max] = E[y_k u_{k-tau}]``."""

    R_y: np.ndarray
    R_u: np.ndarray
    R_yu: np.ndarray

    @property
    def tau_max(self) -> int:
        return self.R_y.size - 1

    def yu(self, tau: int) -> float:
        return float(self.R_yu[tau + self.tau_max])


def covariance_functions(traj: Trajectory, tau_max: int, burn_in: int = DEFAULT_BURN_IN) -> CovarianceFunctionSet:
    y = np.concatenate(([0.0], traj.y))  # y_0 .. y_K
    u = np.asarray(traj.u)  # u_0 .. u_K
    R_y = np.array([empirical_covariance(y, t, burn_in) for t in range(tau_max + 1)])
    R_u = np.array([empirical_covariance(u, t, burn_in) for t in range(tau_max + 1)])
    R_yu = np.array([empirical_covariance(y, t, burn_in, z=u) for t in range(-tau_max, tau_max + 1)])
    return CovarianceFunctionSet(R_y, R_u, R_yu)


def _check_pd(M: np.ndarray, what: str) -> None:
    eig = np.linalg.eigvalsh(M)
    if eig[0] <= PD_TOLERANCE * max(np.trace(M), 0.0):
        raise NotPositiveDefinite(
            f"{what} is not positive definite (min eigenvalue {eig[0]:.3g}, trace {np.trace(M):.3g})"
        )


def assemble_excitation_matrix(covs: CovarianceFunctionSet, m: int, n: int) -> np.ndarray:
    """Block-Toeplitz ``E[phi phi^T]`` from covariance functions.

    Entry (output lag i, input lag j) is ``-R_yu[j - i]``; the diagonal blocks
    are Toeplitz in ``R_y`` and ``R_u``.
    """
    need = max(m, n) - 1
    if covs.tau_max < need:
        raise InsufficientData(f"need covariances up to lag {need}, have {covs.tau_max}")
    D = m + n
    M = np.empty((D, D))
    for i in range(m):
        for j in range(m):
            M[i, j] = covs.R_y[abs(i - j)]
    for i in range(n):
        for j in range(n):
            M[m + i, m + j] = covs.R_u[abs(i - j)]
    for i in range(m):
        for j in range(n):
            M[i, m + j] = M[m + j, i] = -covs.yu(j - i)
    _check_pd(M, "excitation matrix")
    return M


def excitation_from_trajectory(traj: Trajectory, sys: ArxSystem, burn_in: int = DEFAULT_BURN_IN) -> np.ndarray:
    covs = covariance_functions(traj, max(sys.m, sys.n, 1) - 1, burn_in)
    return assemble_excitation_matrix(covs, sys.m, sys.n)


def time_average_gram(traj: Trajectory, sys: ArxSystem, burn_in: int = DEFAULT_BURN_IN) -> np.ndarray:
    """Direct time average of ``phi_k phi_k^T`` over ``k > burn_in``."""
    Phi = regressors(traj, sys)[burn_in:]
    if Phi.shape[0] < 2:
        raise InsufficientData("trajectory too short for the requested burn-in")
    return Phi.T @ Phi / Phi.shape[0]


# -- CRLB ----------------------------------------------------------------------------------


@dataclass(frozen=True)
class CrlbResult:
    sigma_cr_bar: np.ndarray
    sigma_cr_k: np.ndarray | None = None
    k: int | None = None

    @property
    def trace_bar(self) -> float:
        return float(np.trace(self.sigma_cr_bar))


def _spd_inverse(M: np.ndarray, what: str) -> np.ndarray:
    M = 0.5 * (M + M.T)
    _check_pd(M, what)
    c = linalg.cho_factor(M)
    inv = linalg.cho_solve(c, np.eye(M.shape[0]))
    return 0.5 * (inv + inv.T)


def crlb_bar(excitation: np.ndarray, noise_std: float) -> np.ndarray:
    """Limit ``noise_var * inv(E[phi phi^T])`` of the k-scaled original CRLB."""
    return noise_std**2 * _spd_inverse(np.atleast_2d(excitation), "excitation matrix")


def crlb_finite(gram_sum: np.ndarray, noise_std: float) -> np.ndarray:
    """``noise_var * inv(sum_{l<=k} E[phi_l phi_l^T])``."""
    return noise_std**2 * _spd_inverse(np.atleast_2d(gram_sum), "cumulative regressor Gram")


def crlb(source, noise_std: float, gram_sum=None, k: int | None = None, m: int | None = None, n: int | None = None) -> CrlbResult:
    """CRLB from an excitation matrix or a :class:`CovarianceFunctionSet` (which needs m, n).

    ``gram_sum`` is the ensemble estimate of ``sum_{l<=k} E[phi_l phi_l^T]``; when
    given, the finite-sample bound at time k is included.
    """
    if isinstance(source, CovarianceFunctionSet):
        if m is None or n is None:
            raise ValueError("orders m and n are required with covariance functions")
        source = assemble_excitation_matrix(source, m, n)
    bar = crlb_bar(source, noise_std)
    finite = None if gram_sum is None else crlb_finite(gram_sum, noise_std)
    return CrlbResult(bar, finite, k)


def ensemble_gram(trajs: Sequence[Trajectory], sys: ArxSystem, k: int) -> np.ndarray:
    """Cross-run average of ``sum_{l<=k} phi_l phi_l^T``."""
    total = np.zeros((sys.dim, sys.dim))
    for traj in trajs:
        Phi = regressors(traj, sys)[:k]
        total += Phi.T @ Phi
    return total / len(trajs)


# -- tracking diagnostic ---------------------------------------------------------------------


@dataclass(frozen=True)
class OmegaTrace:
    """``omega[k-1] = theta_hat_k[i_k] - theta_rls_{k+D}[i_k]`` for k = 1..K-D."""

    omega: np.ndarray
    rho: float
    alpha: float

    def radius(self, k) -> np.ndarray:
        return self.rho / np.asarray(k, dtype=float) ** self.alpha

    def exceeds(self) -> np.ndarray:
        k = np.arange(1, self.omega.size + 1)
        return np.abs(self.omega) > self.radius(k)


def omega_values(theta_hat: np.ndarray, theta_rls: np.ndarray) -> np.ndarray:
    K, D = theta_hat.shape
    if K <= D:
        raise InsufficientHorizon(f"horizon {K} does not exceed the dimension {D}")
    ks = np.arange(1, K - D + 1)
    idx = ks % D
    return theta_hat[ks - 1, idx] - theta_rls[ks + D - 1, idx]


def omega_trace(run: RunRecord, schedule: StepSchedule | None = None) -> OmegaTrace:
    schedule = schedule or run.schedule
    if schedule is None:
        raise ValueError("run carries no step schedule; pass one explicitly")
    return OmegaTrace(omega_values(run.theta_hat, run.theta_rls), schedule.rho, schedule.alpha)


# -- ensembles -------------------------------------------------------------------------------


@dataclass
class RunSummary:
    """Per-run quantities on the output grid; this is all :func:`aggregate` needs."""

    seed: int
    config_hash: str
    grid: np.ndarray
    err_sa: np.ndarray  # (G, D) remote estimation error
    err_rls: np.ndarray  # (G, D) RLS estimation error
    omega: np.ndarray  # (G,) NaN where k > K - D
    gram: np.ndarray  # (G, D, D) cumulative sum of phi phi^T
    rho: float
    alpha: float


def summarize_run(run: RunRecord, sys: ArxSystem, grid, schedule: StepSchedule | None = None) -> RunSummary:
    schedule = schedule or run.schedule
    grid = np.asarray(grid, dtype=int)
    K, D = run.theta_hat.shape
    if grid.size == 0 or grid.min() < 1 or grid.max() > K:
        raise InsufficientHorizon(f"grid must lie in [1, {K}]")
    theta = sys.theta
    omega = np.full(grid.size, np.nan)
    ok = grid <= K - D
    if ok.any():
        g = grid[ok]
        idx = g % D
        omega[ok] = run.theta_hat[g - 1, idx] - run.theta_rls[g + D - 1, idx]
    Phi = regressors(run.trajectory, sys)
    cum = np.cumsum(Phi[:, :, None] * Phi[:, None, :], axis=0)
    return RunSummary(
        seed=run.seed,
        config_hash=run.config_hash,
        grid=grid,
        err_sa=run.theta_hat[grid - 1] - theta,
        err_rls=run.theta_rls[grid - 1] - theta,
        omega=omega,
        gram=cum[grid - 1],
        rho=schedule.rho,
        alpha=schedule.alpha,
    )


@dataclass
class MseAggregate:
    grid: np.ndarray
    n_runs: int
    k_mse: np.ndarray
    k_mse_rls: np.ndarray
    err_cov: np.ndarray
    tail_fraction: np.ndarray
    as_stat: np.ndarray
    lp_moments: dict = field(default_factory=dict)
    lp_moments_rls: dict = field(default_factory=dict)
    k_trace_crlb: np.ndarray | None = None
    seeds: tuple = ()

    def at(self, k: int) -> int:
        hits = np.flatnonzero(self.grid == k)
        if hits.size == 0:
            raise KeyError(f"k={k} is not on the output grid")
        return int(hits[0])

    def lp_log2_ratio(self, k: int, k_later: int, p: int) -> float:
        """``log2(E|err_{k_later}|^p / E|err_k|^p)``."""
        return math.log2(self.lp_moments[p][self.at(k_later)] / self.lp_moments[p][self.at(k)])


def aggregate(
    runs, grid=None, sys: ArxSystem | None = None, schedule: StepSchedule | None = None, noise_std: float | None = None
) -> MseAggregate:
    """Reduce an ensemble of runs (records or summaries) to per-grid statistics.

    Runs are ordered by seed before any reduction so the result does not depend
    on the order they were produced in.
    """
    runs = list(runs)
    if len(runs) < 2:
        raise InsufficientData(f"aggregation needs at least 2 runs, got {len(runs)}")
    summaries = []
    for r in runs:
        if isinstance(r, RunSummary):
            summaries.append(r)
        else:
            if grid is None or sys is None:
                raise ValueError("grid and system are required to aggregate raw run records")
            summaries.append(summarize_run(r, sys, grid, schedule))
    summaries.sort(key=lambda s: s.seed)
    first = summaries[0]
    seeds = [s.seed for s in summaries]
    if len(set(seeds)) != len(seeds):
        raise ConfigMismatch("runs must have distinct seeds")
    for s in summaries[1:]:
        if s.config_hash != first.config_hash:
            raise ConfigMismatch(f"run with seed {s.seed} comes from a different configuration")
        if not np.array_equal(s.grid, first.grid) or s.err_sa.shape != first.err_sa.shape:
            raise ConfigMismatch(f"run with seed {s.seed} uses a different grid or dimension")
        if s.rho != first.rho or s.alpha != first.alpha:
            raise ConfigMismatch(f"run with seed {s.seed} uses a different step schedule")

    grid = first.grid
    kf = grid.astype(float)
    E = np.stack([s.err_sa for s in summaries])  # (T, G, D)
    R = np.stack([s.err_rls for s in summaries])
    W = np.stack([s.omega for s in summaries])  # (T, G)
    norms = np.linalg.norm(E, axis=-1)
    norms_rls = np.linalg.norm(R, axis=-1)

    k_mse = kf * np.mean(norms**2, axis=0)
    k_mse_rls = kf * np.mean(norms_rls**2, axis=0)
    err_cov = kf[:, None, None] * np.mean(E[..., :, None] * E[..., None, :], axis=0)
    err_cov = 0.5 * (err_cov + np.swapaxes(err_cov, -1, -2))

    radius = first.rho / kf**first.alpha
    with np.errstate(invalid="ignore"):
        tail = np.mean(np.abs(W) > radius, axis=0)
    tail[np.isnan(W).any(axis=0)] = np.nan

    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.sqrt(kf / np.log(kf))
    scale[grid < 2] = np.nan
    as_stat = scale * norms.max(axis=0)

    lp = {p: np.mean(norms**p, axis=0) for p in LP_ORDERS}
    lp_rls = {p: np.mean(norms_rls**p, axis=0) for p in LP_ORDERS}
    return MseAggregate(
        grid=grid,
        n_runs=len(summaries),
        k_mse=k_mse,
        k_mse_rls=k_mse_rls,
        err_cov=err_cov,
        tail_fraction=tail,
        as_stat=as_stat,
        lp_moments=lp,
        lp_moments_rls=lp_rls,
        k_trace_crlb=None if noise_std is None else ensemble_crlb_trace(summaries, noise_std),
        seeds=tuple(seeds),
    )


def ensemble_crlb_trace(summaries: Sequence[RunSummary], noise_std: float) -> np.ndarray:
    """``k * tr(Sigma_CR(k))`` per grid point, NaN until the ensemble Gram is positive definite."""
    summaries = sorted(summaries, key=lambda s: s.seed)
    G = np.mean(np.stack([s.gram for s in summaries]), axis=0)
    grid = summaries[0].grid
    out = np.full(grid.size, np.nan)
    for g in range(grid.size):
        try:
            out[g] = grid[g] * np.trace(crlb_finite(G[g], noise_std))
        except NotPositiveDefinite:
            pass
    return out


# -- normality ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalityResult:
    cov_deviation: float
    mean: np.ndarray
    skewness: np.ndarray
    excess_kurtosis: np.ndarray

    @property
    def mean_skewness(self) -> float:
        return float(np.mean(self.skewness))


def inverse_sqrt_spd(M: np.ndarray) -> np.ndarray:
    M = np.atleast_2d(M)
    _check_pd(M, "covariance")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V / np.sqrt(w)) @ V.T


def normality_stat(errors, k: int, sigma_cr_bar, min_runs: int = 200) -> NormalityResult:
    """Compare whitened ``sqrt(k) * err`` with a standard normal.

    ``errors`` is a ``(runs, D)`` array of estimation errors at time k, or a
    sequence of :class:`RunSummary` whose grid contains k.
    """
    if not isinstance(errors, np.ndarray):
        errors = list(errors)
        if errors and isinstance(errors[0], RunSummary):
            errors = sorted(errors, key=lambda s: s.seed)
            errors = np.stack([s.err_sa[int(np.flatnonzero(s.grid == k)[0])] for s in errors])
        else:
            errors = np.asarray(errors, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if errors.ndim == 1:
        errors = errors[:, None]
    if errors.shape[0] < min_runs:
        raise InsufficientData(f"normality check needs at least {min_runs} runs, got {errors.shape[0]}")
    Z = math.sqrt(k) * errors @ inverse_sqrt_spd(sigma_cr_bar)
    C = np.atleast_2d(np.cov(Z, rowvar=False))
    dev = float(np.linalg.norm(C - np.eye(C.shape[0]), "fro"))
    return NormalityResult(
        cov_deviation=dev,
        mean=Z.mean(axis=0),
        skewness=np.atleast_1d(stats.skew(Z, axis=0)),
        excess_kurtosis=np.atleast_1d(stats.kurtosis(Z, axis=0, fisher=True)),
    )


# -- sign-measurement Fisher information --------------------------------------------------------


def sign_fisher_factor(c: float) -> float:
    """Fisher information of ``sign(x - t)`` relative to ``x`` itself, x Gaussian.

    ``c`` is the threshold offset from the mean in noise standard deviations;
    the factor is ``pdf(c)^2 / (cdf(c) sf(c))``, maximal (2/pi) at c = 0.
    """
    c = float(c)
    return math.exp(2.0 * stats.norm.logpdf(c) - stats.norm.logcdf(c) - stats.norm.logsf(c))
