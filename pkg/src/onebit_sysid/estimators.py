"""Quantizer-side RLS, one-bit encoder, remote SA decoder and the RLS-SA protocol.

Per step k the quantizer runs one RLS update on ``(phi_k, y_k)``, picks the
component ``mod(k, m+n) + 1`` of the parameter vector, and sends the sign of
``theta_rls_k[i] - theta_hat_{k-1}[i]``. Both sides then move that component of
``theta_hat`` by ``s_k * beta_k / k**alpha``.

The arithmetic kernels (``_rls_step``, ``_sa_step``) broadcast over leading axes
and are shared by the single-run protocol and the batched engine, so both
produce bit-identical numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteInput, NotPositiveDefinite, ValidationError
from .signal_model import (
    ArxSystem,
    SignalGenerator,
    Trajectory,
    padded_histories,
    regressor_at,
    regressor_from_padded,
    simulate,
)


# -- step schedule ---------------------------------------------------------------


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``beta_k / k**alpha``.

    ``beta`` is a scalar or a finite pattern repeated cyclically, which keeps
    every ``beta_k`` between ``min(beta)`` and ``max(beta)``.
    """

    alpha: float = 0.95
    beta: tuple = (1.0,)

    def __post_init__(self):
        beta = self.beta
        if np.isscalar(beta):
            beta = (beta,)
        beta = tuple(float(b) for b in beta)
        object.__setattr__(self, "beta", beta)
        if not 0.5 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (1/2, 1), got {self.alpha}")
        if not beta or not all(math.isfinite(b) and b > 0 for b in beta):
            raise ValidationError(f"beta values must be positive and finite, got {beta}")

    @property
    def beta_lower(self) -> float:
        return min(self.beta)

    @property
    def beta_upper(self) -> float:
        return max(self.beta)

    @property
    def rho(self) -> float:
        """Tail-probability radius ``beta_upper + 2 beta_lower / 3``."""
        return self.beta_upper + 2.0 * self.beta_lower / 3.0

    def beta_at(self, k: int) -> float:
        return self.beta[(k - 1) % len(self.beta)]

    def step(self, k: int) -> float:
        # recomputed from integer k every time; no running products
        return self.beta_at(k) * float(k) ** -self.alpha


# -- kernels -----------------------------------------------------------------------


def _rls_step(theta, P, phi, y):
    Pphi = np.sum(P * phi[..., None, :], axis=-1)
    gain = 1.0 / (1.0 + np.sum(phi * Pphi, axis=-1))
    resid = y - np.sum(phi * theta, axis=-1)
    theta = theta + (gain * resid)[..., None] * Pphi
    P = P - gain[..., None, None] * (Pphi[..., :, None] * Pphi[..., None, :])
    P = 0.5 * (P + np.swapaxes(P, -1, -2))
    return theta, P, gain


def selector(k: int, dim: int) -> int:
    """1-based index of the component refreshed at time k: ``mod(k, dim) + 1``."""
    if k < 1 or dim < 1:
        raise ValidationError(f"need k >= 1 and dim >= 1, got k={k}, dim={dim}")
    return k % dim + 1


def _encode(rls_comp, hat_comp):
    # ties go to -1
    return np.where(rls_comp > hat_comp, 1, -1).astype(np.int8)


def _sa_step(theta_hat, s, idx0, step):
    theta_hat = theta_hat.copy()
    theta_hat[..., idx0] += s * step
    return theta_hat


# -- single-run state objects -------------------------------------------------------


@dataclass(frozen=True)
class RlsState:
    theta_rls: np.ndarray
    P: np.ndarray
    k: int = 0
    gain: float = float("nan")

    @classmethod
    def initial(cls, theta_rls_0, P0) -> "RlsState":
        theta = np.array(theta_rls_0, dtype=float).reshape(-1)
        P = np.array(P0, dtype=float)
        if P.ndim == 0:
            P = P * np.eye(theta.size)
        if P.shape != (theta.size, theta.size):
            raise DimensionMismatch(f"P0 has shape {P.shape}, expected {(theta.size, theta.size)}")
        if not np.allclose(P, P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(P).max())):
            raise ValidationError("P0 must be symmetric")
        if theta.size and np.linalg.eigvalsh(P).min() <= 0:
            raise NotPositiveDefinite("P0 must be positive definite")
        return cls(theta, P, 0)


def rls_update(state: RlsState, phi, y: float) -> RlsState:
    phi = np.asarray(phi, dtype=float)
    if phi.shape != state.theta_rls.shape:
        raise DimensionMismatch(f"regressor has shape {phi.shape}, state has {state.theta_rls.shape}")
    if not (np.all(np.isfinite(phi)) and math.isfinite(y)):
        raise NonFiniteInput("regressor and output must be finite")
    theta, P, gain = _rls_step(state.theta_rls, state.P, phi, float(y))
    return RlsState(theta, P, state.k + 1, float(gain))


@dataclass(frozen=True)
class OneBitSymbol:
    s: int

    def __post_init__(self):
        if self.s not in (-1, 1):
            raise ValidationError(f"symbol must be -1 or +1, got {self.s}")

    @property
    def bit(self) -> int:
        return (self.s + 1) // 2


def encode(theta_rls_k, theta_hat_prev, x_index: int) -> OneBitSymbol:
    """Sign of the selected component difference; ``x_index`` is 1-based."""
    theta_rls_k = np.asarray(theta_rls_k, dtype=float)
    theta_hat_prev = np.asarray(theta_hat_prev, dtype=float)
    if theta_rls_k.shape != theta_hat_prev.shape:
        raise DimensionMismatch("estimates must have the same length")
    i = x_index - 1
    return OneBitSymbol(int(_encode(theta_rls_k[i], theta_hat_prev[i])))


@dataclass(frozen=True)
class RemoteState:
    theta_hat: np.ndarray
    schedule: StepSchedule = field(default_factory=StepSchedule)
    k: int = 0


def sa_update(state: RemoteState, s: OneBitSymbol | int, x_index: int, k: int | None = None) -> RemoteState:
    if k is None:
        k = state.k + 1
    if k != state.k + 1:
        raise ValidationError(f"out-of-order update: state at k={state.k}, got k={k}")
    s = s.s if isinstance(s, OneBitSymbol) else int(s)
    theta = _sa_step(state.theta_hat, s, x_index - 1, state.schedule.step(k))
    return RemoteState(theta, state.schedule, k)


# -- protocol ------------------------------------------------------------------------


class Quantizer:
    """Sensor side: sees (phi_k, y_k), runs RLS, keeps a replica of the remote estimate."""

    def __init__(self, theta_rls_0, P0, theta_hat_0, schedule: StepSchedule):
        self.rls = RlsState.initial(theta_rls_0, P0)
        self.replica = RemoteState(np.array(theta_hat_0, dtype=float), schedule)
        if self.replica.theta_hat.shape != self.rls.theta_rls.shape:
            raise DimensionMismatch("theta_hat_0 and theta_rls_0 must have the same length")

    def step(self, phi, y: float) -> OneBitSymbol:
        k = self.rls.k + 1
        self.rls = rls_update(self.rls, phi, y)
        idx = selector(k, self.rls.theta_rls.size)
        s = encode(self.rls.theta_rls, self.replica.theta_hat, idx)
        self.replica = sa_update(self.replica, s, idx, k)
        return s


class RemoteEstimator:
    """Receiver side: knows only the shared configuration and the received symbols."""

    def __init__(self, dim: int, theta_hat_0, schedule: StepSchedule):
        self.dim = dim
        self.state = RemoteState(np.array(theta_hat_0, dtype=float), schedule)

    def receive(self, s: OneBitSymbol) -> np.ndarray:
        k = self.state.k + 1
        self.state = sa_update(self.state, s, selector(k, self.dim), k)
        return self.state.theta_hat


@dataclass
class RunRecord:
    """Everything one RLS-SA run produced; row ``k-1`` of each trajectory is time k."""

    seed: int
    theta_hat: np.ndarray
    theta_rls: np.ndarray
    transcript: np.ndarray
    trajectory: Trajectory
    P: np.ndarray | None = None
    P_final: np.ndarray | None = None
    gains: np.ndarray | None = None
    schedule: StepSchedule | None = None
    config_hash: str = ""
    summary: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.transcript.size

    @property
    def dim(self) -> int:
        return self.theta_hat.shape[1]

    @property
    def noise(self) -> np.ndarray:
        return self.trajectory.d


def _check_run_args(sys: ArxSystem, theta_rls_0, P0, theta_hat_0, K: int):
    D = sys.dim
    for name, v in (("theta_rls_0", theta_rls_0), ("theta_hat_0", theta_hat_0)):
        if np.asarray(v, dtype=float).reshape(-1).size != D:
            raise DimensionMismatch(f"{name} must have length {D}")
    if K < 1:
        raise ValidationError(f"horizon must be >= 1, got {K}")


def run_rls_sa(
    sys: ArxSystem,
    gen: SignalGenerator,
    schedule: StepSchedule,
    theta_rls_0,
    P0,
    theta_hat_0,
    K: int,
    seed: int,
    store_P: bool = True,
) -> RunRecord:
    """Run Algorithm RLS-SA for K steps with a quantizer and a remote estimator in lock-step.

    Exactly one symbol crosses from quantizer to remote per step. The remote
    estimate is checked against the quantizer's replica at every step.
    """
    _check_run_args(sys, theta_rls_0, P0, theta_hat_0, K)
    traj = simulate(sys, gen, K, seed)
    D = sys.dim
    quantizer = Quantizer(theta_rls_0, P0, theta_hat_0, schedule)
    remote = RemoteEstimator(D, theta_hat_0, schedule)

    theta_hat = np.empty((K, D))
    theta_rls = np.empty((K, D))
    transcript = np.empty(K, dtype=np.int8)
    gains = np.empty(K)
    Ps = np.empty((K, D, D)) if store_P else None
    for k in range(1, K + 1):
        phi = regressor_at(traj, sys, k)
        s = quantizer.step(phi, traj.y[k - 1])
        transcript[k - 1] = s.s
        received = remote.receive(s)
        if not np.array_equal(received, quantizer.replica.theta_hat):
            raise RuntimeError(f"remote estimate diverged from quantizer replica at k={k}")
        theta_hat[k - 1] = received
        theta_rls[k - 1] = quantizer.rls.theta_rls
        gains[k - 1] = quantizer.rls.gain
        if store_P:
            Ps[k - 1] = quantizer.rls.P
    return RunRecord(
        seed=int(seed),
        theta_hat=theta_hat,
        theta_rls=theta_rls,
        transcript=transcript,
        trajectory=traj,
        P=Ps,
        P_final=quantizer.rls.P,
        gains=gains,
        schedule=schedule,
    )


def run_rls_sa_batch(
    sys: ArxSystem,
    gen: SignalGenerator,
    schedule: StepSchedule,
    theta_rls_0,
    P0,
    theta_hat_0,
    K: int,
    seeds: Sequence[int],
) -> list[RunRecord]:
    """Vectorised equivalent of :func:`run_rls_sa` over several seeds.

    Every run is advanced by the same kernels, so each record is bit-identical
    to the one the single-run protocol would produce for that seed.
    """
    _check_run_args(sys, theta_rls_0, P0, theta_hat_0, K)
    seeds = [int(s) for s in seeds]
    T, D, m, n = len(seeds), sys.dim, sys.m, sys.n
    init = RlsState.initial(theta_rls_0, P0)
    trajs = [simulate(sys, gen, K, s) for s in seeds]
    y = np.stack([t.y for t in trajs])
    yext, uext = padded_histories(y, np.stack([t.u for t in trajs]), m, n)

    theta = np.repeat(init.theta_rls[None, :], T, axis=0)
    P = np.repeat(init.P[None, :, :], T, axis=0)
    hat = np.repeat(np.asarray(theta_hat_0, dtype=float).reshape(1, D), T, axis=0)
    remote = hat.copy()

    theta_hat_traj = np.empty((T, K, D))
    theta_rls_traj = np.empty((T, K, D))
    transcript = np.empty((T, K), dtype=np.int8)
    gains = np.empty((T, K))
    for k in range(1, K + 1):
        phi = regressor_from_padded(yext, uext, m, n, k)
        theta, P, gain = _rls_step(theta, P, phi, y[:, k - 1])
        i0 = selector(k, D) - 1
        step = schedule.step(k)
        s = _encode(theta[:, i0], hat[:, i0])
        hat = _sa_step(hat, s, i0, step)
        # remote side sees only s
        remote = _sa_step(remote, s, i0, step)
        theta_hat_traj[:, k - 1] = remote
        theta_rls_traj[:, k - 1] = theta
        transcript[:, k - 1] = s
        gains[:, k - 1] = gain
    if not np.array_equal(remote, hat):
        raise RuntimeError("remote estimates diverged from quantizer replicas")
    return [
        RunRecord(
            seed=seeds[t],
            theta_hat=theta_hat_traj[t],
            theta_rls=theta_rls_traj[t],
            transcript=transcript[t],
            trajectory=trajs[t],
            P_final=P[t],
            gains=gains[t],
            schedule=schedule,
        )
        for t in range(T)
    ]


def remote_norm_bound(theta_hat_0, schedule: StepSchedule, k) -> np.ndarray:
    """Deterministic bound ``|theta_hat_0| + beta_upper (1 + (k^(1-a) - 1)/(1-a))`` on ``|theta_hat_k|``."""
    k = np.asarray(k, dtype=float)
    a = schedule.alpha
    return float(np.linalg.norm(theta_hat_0)) + schedule.beta_upper * (1.0 + (k ** (1.0 - a) - 1.0) / (1.0 - a))


# -- channel transcript I/O -------------------------------------------------------------


def pack_transcript(symbols) -> bytes:
    """Pack symbols as bits ``(s+1)/2``, little-endian within each byte."""
    symbols = np.asarray(symbols)
    if symbols.size and not np.all(np.abs(symbols) == 1):
        raise ValidationError("transcript symbols must be -1 or +1")
    bits = ((symbols.astype(np.int16) + 1) // 2).astype(np.uint8)
    return np.packbits(bits, bitorder="little").tobytes()


def unpack_transcript(data: bytes, count: int) -> np.ndarray:
    if len(data) * 8 < count:
        raise ValidationError(f"{len(data)} bytes cannot hold {count} symbols")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little", count=count)
    return (2 * bits.astype(np.int8) - 1).astype(np.int8)


def transcript_text(symbols) -> str:
    """One character per symbol, ``'+'`` or ``'-'``."""
    return "".join("+" if s > 0 else "-" for s in np.asarray(symbols))


def parse_transcript_text(text: str) -> np.ndarray:
    text = text.strip()
    bad = set(text) - {"+", "-"}
    if bad:
        raise ValidationError(f"unexpected characters in transcript: {sorted(bad)}")
    return np.array([1 if c == "+" else -1 for c in text], dtype=np.int8)
