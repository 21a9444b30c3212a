"""ARX system definition, input generators and seeded trajectory simulation.

The model is ``A(q) y_k = B(q) u_k + d_k`` with ``A(q) = 1 + a_1 q^-1 + ... + a_m q^-m``
and ``B(q) = b_1 q^-1 + ... + b_n q^-n``. Outputs vanish for ``k <= 0`` and inputs for
``k < 0``; everything in this module follows those conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.signal import lfilter

from .errors import DimensionMismatch, IndexOutOfRange, UnstablePolynomial, ValidationError

STABILITY_MARGIN = 1e-10
_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class ArxSystem:
    m: int
    n: int
    a: np.ndarray
    b: np.ndarray
    noise_std: float

    @property
    def dim(self) -> int:
        return self.m + self.n

    @property
    def theta(self) -> np.ndarray:
        """True parameter vector ``[a_1..a_m, b_1..b_n]``."""
        return np.concatenate((self.a, self.b))

    def spectral_radius(self) -> float:
        return spectral_radius(self.a)


def companion_matrix(a: Sequence[float]) -> np.ndarray:
    """Companion matrix of the monic polynomial ``z^m + a_1 z^(m-1) + ... + a_m``."""
    a = np.asarray(a, dtype=float)
    m = a.size
    C = np.zeros((m, m))
    if m:
        C[0, :] = -a
        C[1:, :-1] = np.eye(m - 1)
    return C


def spectral_radius(a: Sequence[float]) -> float:
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(a)))))


def make_arx(m: int, n: int, a, b, noise_std: float) -> ArxSystem:
    """Validate and build an :class:`ArxSystem`.

    ``m = 0`` gives an FIR model, for which the stability check is vacuous.
    """
    if int(m) != m or int(n) != n:
        raise DimensionMismatch(f"orders must be integers, got m={m!r}, n={n!r}")
    m, n = int(m), int(n)
    if m < 0 or n < 1:
        raise DimensionMismatch(f"need m >= 0 and n >= 1, got m={m}, n={n}")
    a = np.array(a, dtype=float).reshape(-1)
    b = np.array(b, dtype=float).reshape(-1)
    if a.size != m:
        raise DimensionMismatch(f"expected {m} AR coefficients, got {a.size}")
    if b.size != n:
        raise DimensionMismatch(f"expected {n} input coefficients, got {b.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("coefficients must be finite")
    noise_std = float(noise_std)
    if not (noise_std > 0 and math.isfinite(noise_std)):
        raise ValidationError(f"noise_std must be positive and finite, got {noise_std}")
    rho = spectral_radius(a)
    if rho >= 1.0 - STABILITY_MARGIN:
        raise UnstablePolynomial(
            f"A(q) has a root of modulus {rho:.6g}; all roots must lie strictly inside the unit circle"
        )
    a.setflags(write=False)
    b.setflags(write=False)
    return ArxSystem(m, n, a, b, noise_std)


# -- input recipes ---------------------------------------------------------------


@dataclass(frozen=True)
class Sinusoid:
    amplitude: float
    freq: float
    phase: float = 0.0

    def values(self, k: np.ndarray) -> np.ndarray:
        return self.amplitude * np.sin(self.freq * k + self.phase)


@dataclass(frozen=True)
class PeriodicTable:
    table: tuple

    def __post_init__(self):
        if len(self.table) == 0:
            raise ValidationError("periodic table must not be empty")
        object.__setattr__(self, "table", tuple(float(v) for v in self.table))
        if not all(math.isfinite(v) for v in self.table):
            raise ValidationError("periodic table entries must be finite")

    def values(self, k: np.ndarray) -> np.ndarray:
        return np.asarray(self.table)[k % len(self.table)]


@dataclass(frozen=True)
class Constant:
    c: float

    def values(self, k: np.ndarray) -> np.ndarray:
        return np.full(k.shape, float(self.c))


@dataclass(frozen=True)
class Zero:
    def values(self, k: np.ndarray) -> np.ndarray:
        return np.zeros(k.shape)


@dataclass(frozen=True)
class GaussianNoise:
    variance: float

    def __post_init__(self):
        if not self.variance >= 0:
            raise ValidationError(f"variance must be non-negative, got {self.variance}")

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.normal(0.0, math.sqrt(self.variance), size=size)


@dataclass(frozen=True)
class UniformNoise:
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValidationError(f"need low < high, got [{self.low}, {self.high}]")
        if abs(self.low + self.high) > 1e-12 * (self.high - self.low):
            raise ValidationError("uniform input noise must be zero-mean (low == -high)")

    @property
    def variance(self) -> float:
        return (self.high - self.low) ** 2 / 12.0

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=size)


@dataclass(frozen=True)
class NoNoise:
    variance: float = 0.0

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.zeros(size)


Deterministic = Union[Sinusoid, PeriodicTable, Constant, Zero]
Stochastic = Union[GaussianNoise, UniformNoise, NoNoise]


@dataclass(frozen=True)
class SignalGenerator:
    """Input recipe ``u_k = r_k + e_k``: bounded deterministic part plus i.i.d. noise."""

    deterministic: Deterministic = field(default_factory=Zero)
    stochastic: Stochastic = field(default_factory=NoNoise)
    seed: int | None = None

    def deterministic_part(self, K: int) -> np.ndarray:
        """Deterministic values for ``k = 0..K-1``."""
        return self.deterministic.values(np.arange(K))

    def sequence(self, K: int, rng: np.random.Generator) -> np.ndarray:
        """Inputs ``u_0..u_{K-1}``; noise is drawn from ``rng`` in k-order."""
        return self.deterministic_part(K) + self.stochastic.draw(rng, K)


def input_at(gen: SignalGenerator, k: int, rng: np.random.Generator | None = None) -> float:
    """Input at time ``k``.

    Without ``rng`` only the deterministic part is returned. With ``rng`` one
    stochastic draw is consumed, so calling this for k = 0, 1, ... reproduces
    :meth:`SignalGenerator.sequence` on the same stream.
    """
    if k < 0:
        raise IndexOutOfRange(f"input index must be non-negative, got {k}")
    value = float(gen.deterministic.values(np.array([k]))[0])
    if rng is not None:
        value += float(gen.stochastic.draw(rng, 1)[0])
    return value


def run_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Split a run seed into independent (input, observation-noise) generators."""
    ss = np.random.SeedSequence(int(seed) & _SEED_MASK)
    input_ss, noise_ss = ss.spawn(2)
    return np.random.default_rng(input_ss), np.random.default_rng(noise_ss)


# -- trajectories ------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """Simulated data. ``y[k-1] = y_k`` and ``d[k-1] = d_k`` for k = 1..K; ``u[k] = u_k`` for k = 0..K."""

    y: np.ndarray
    u: np.ndarray
    d: np.ndarray

    @property
    def K(self) -> int:
        return self.y.size

    def y_at(self, k: int) -> float:
        return float(self.y[k - 1]) if 1 <= k <= self.K else 0.0

    def u_at(self, k: int) -> float:
        return float(self.u[k]) if 0 <= k <= self.K else 0.0


def simulate(sys: ArxSystem, gen: SignalGenerator, K: int, seed: int | None = None) -> Trajectory:
    if K < 1:
        raise ValidationError(f"horizon must be >= 1, got {K}")
    if seed is None:
        seed = gen.seed
    if seed is None:
        raise ValidationError("no seed given and the generator carries none")
    input_rng, noise_rng = run_streams(seed)
    u = gen.sequence(K + 1, input_rng)
    d = noise_rng.normal(0.0, sys.noise_std, size=K)
    return propagate(sys, u, d)


def propagate(sys: ArxSystem, u, d) -> Trajectory:
    """Outputs driven by given inputs ``u_0..u_K`` and noise ``d_1..d_K``."""
    u = np.array(u, dtype=float)
    d = np.array(d, dtype=float)
    if u.size != d.size + 1:
        raise DimensionMismatch(f"need len(u) == len(d) + 1, got {u.size} and {d.size}")
    # x_k = B(q) u_k for k = 1..K, then y = x + d filtered through 1/A(q)
    x = lfilter(np.concatenate(([0.0], sys.b)), [1.0], u)[1:]
    y = lfilter([1.0], np.concatenate(([1.0], sys.a)), x + d)
    for arr in (y, u, d):
        arr.setflags(write=False)
    return Trajectory(y=y, u=u, d=d)


def regressor_at(traj: Trajectory, sys: ArxSystem, k: int) -> np.ndarray:
    """``phi_k = [-y_{k-1}, ..., -y_{k-m}, u_{k-1}, ..., u_{k-n}]``."""
    if not 1 <= k <= traj.K:
        raise IndexOutOfRange(f"k must lie in [1, {traj.K}], got {k}")
    ys = [-traj.y_at(k - i) for i in range(1, sys.m + 1)]
    us = [traj.u_at(k - j) for j in range(1, sys.n + 1)]
    return np.array(ys + us, dtype=float)


def padded_histories(y: np.ndarray, u: np.ndarray, m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Zero-padded copies so that lagged windows can be sliced directly.

    Works on trailing time axes: ``yext[..., m + j] = y_j`` for j = 0..K (``y_0 = 0``)
    and ``uext[..., n + j] = u_j`` for j = 0..K; earlier slots are zero.
    """
    lead = y.shape[:-1]
    yext = np.concatenate((np.zeros(lead + (m + 1,)), y), axis=-1)
    uext = np.concatenate((np.zeros(lead + (n,)), u), axis=-1)
    return yext, uext


def regressor_from_padded(yext: np.ndarray, uext: np.ndarray, m: int, n: int, k: int) -> np.ndarray:
    ys = yext[..., k : m + k][..., ::-1]
    us = uext[..., k : n + k][..., ::-1]
    return np.concatenate((-ys, us), axis=-1)


def regressors(traj: Trajectory, sys: ArxSystem) -> np.ndarray:
    """All regressors stacked as a ``(K, m+n)`` array, row ``k-1`` holding ``phi_k``."""
    K, m, n = traj.K, sys.m, sys.n
    Phi = np.empty((K, m + n))
    for i in range(1, m + 1):
        Phi[:, i - 1] = 0.0
        if i < K:
            Phi[i:, i - 1] = -traj.y[: K - i]
    for j in range(1, n + 1):
        # u_{k-j} for k = 1..K  ->  u[1-j .. K-j]
        col = m + j - 1
        if j <= K:
            Phi[j - 1 :, col] = traj.u[: K - j + 1]
            Phi[: j - 1, col] = 0.0
        else:
            Phi[:, col] = 0.0
    return Phi
