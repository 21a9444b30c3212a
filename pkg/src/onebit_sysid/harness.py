"""Seeded Monte Carlo orchestration, persistence and CSV output.

Runs are grouped into fixed-size chunks of consecutive seeds. A chunk is the
unit of work handed to a worker, and chunk boundaries depend only on the
config, so ``--parallel`` never changes any number that is written.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import (
    CrlbResult,
    MseAggregate,
    RunSummary,
    aggregate,
    crlb,
    excitation_from_trajectory,
    normality_stat,
    omega_values,
    summarize_run,
)
from .config import ExperimentConfig, parse_config
from .errors import InsufficientData, NotPositiveDefinite, ValidationError
from .estimators import RunRecord, pack_transcript, run_rls_sa_batch, unpack_transcript
from .signal_model import Trajectory, simulate

log = logging.getLogger(__name__)

CHUNK_SIZE = 50
THREADS_ENV = "ONEBIT_SYSID_THREADS"
MSE_COLUMNS = ("k", "k_mse_rls_sa", "k_mse_rls", "k_trace_crlb", "tail_fraction", "as_stat")
RESOLVED_CONFIG = "config.resolved"


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    aggregate: MseAggregate
    summaries: list
    crlb: CrlbResult | None
    diagnostics: dict
    out_dir: Path | None = None
    files: dict = field(default_factory=dict)


class RunFailure(RuntimeError):
    pass


# -- running -------------------------------------------------------------------------------


def _chunks(cfg: ExperimentConfig) -> list[tuple[int, list[int]]]:
    seeds = cfg.seeds()
    return [(i, seeds[i : i + CHUNK_SIZE]) for i in range(0, len(seeds), CHUNK_SIZE)]


def run_chunk(cfg: ExperimentConfig, seeds: list[int], runs_dir: str | None = None, keep_first: bool = False):
    """Simulate a block of seeds; return their summaries and, optionally, the first full record."""
    sys_ = cfg.system()
    records = run_rls_sa_batch(
        sys_, cfg.generator(), cfg.schedule(), cfg.theta_rls_0, cfg.P0(), cfg.theta_hat_0, cfg.horizon, seeds
    )
    h = cfg.config_hash()
    summaries = []
    for rec in records:
        rec.config_hash = h
        summaries.append(summarize_run(rec, sys_, cfg.grid, cfg.schedule()))
        if runs_dir is not None:
            save_run(rec, Path(runs_dir))
    return summaries, (records[0] if keep_first else None)


def _run_chunk_job(args):
    index, cfg, seeds, runs_dir, keep_first = args
    try:
        return run_chunk(cfg, seeds, runs_dir, keep_first)
    except Exception as exc:
        raise RunFailure(f"run {index} (seeds {seeds[0]}..{seeds[-1]}) failed: {exc}") from exc


def resolve_parallel(parallel: int | None) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            parallel = int(env)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {env!r}")
    parallel = 1 if parallel is None else int(parallel)
    if parallel < 1:
        raise ValidationError(f"parallelism must be >= 1, got {parallel}")
    return parallel


def simulate_ensemble(cfg: ExperimentConfig, parallel: int | None = 1, runs_dir: Path | None = None):
    """All run summaries in seed order, plus the full record of the first run."""
    parallel = resolve_parallel(parallel)
    jobs = [
        (i, cfg, seeds, None if runs_dir is None else str(runs_dir), i == 0) for i, seeds in _chunks(cfg)
    ]
    if parallel == 1 or len(jobs) == 1:
        results = [_run_chunk_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(parallel, len(jobs))) as pool:
            results = list(pool.map(_run_chunk_job, jobs))
    summaries = [s for chunk, _ in results for s in chunk]
    return summaries, results[0][1]


def crlb_for_config(cfg: ExperimentConfig) -> CrlbResult:
    """Limit CRLB from one long trajectory, time-averaged after the configured burn-in."""
    sys_ = cfg.system()
    traj = simulate(sys_, cfg.generator(), cfg.crlb_horizon, cfg.seed)
    M = excitation_from_trajectory(traj, sys_, cfg.burn_in)
    return crlb(M, sys_.noise_std)


def run_experiment(
    cfg: ExperimentConfig,
    out_dir=None,
    parallel: int | None = 1,
    save_runs: bool = False,
    with_crlb: bool = True,
) -> ExperimentResult:
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs_dir = None
    if save_runs:
        runs_dir = out / "runs"
        runs_dir.mkdir(exist_ok=True)
    (out / RESOLVED_CONFIG).write_text(cfg.echo())
    log.info("running %d runs of %d steps (parallel=%s)", cfg.runs, cfg.horizon, parallel)
    summaries, first = simulate_ensemble(cfg, parallel, runs_dir)
    files = {"config": out / RESOLVED_CONFIG}
    files["trajectory"] = write_trajectory_csv(out / "trajectory.csv", first)
    result = _finish(cfg, summaries, out, with_crlb)
    result.files.update(files)
    return result


def _finish(cfg: ExperimentConfig, summaries: list, out: Path, with_crlb: bool) -> ExperimentResult:
    if len(summaries) >= 2:
        agg = aggregate(summaries, noise_std=cfg.noise_std)
    else:
        agg = _single_run_aggregate(summaries[0], cfg)
    bound = None
    if with_crlb:
        try:
            bound = crlb_for_config(cfg)
        except (NotPositiveDefinite, InsufficientData) as exc:
            log.warning("CRLB unavailable: %s", exc)
    diag = diagnostics(cfg, agg, summaries, bound)
    files = {
        "mse": write_mse_csv(out / "mse.csv", agg),
        "moments": write_moments_csv(out / "moments.csv", agg),
        "diagnostics": out / "diagnostics.json",
    }
    files["diagnostics"].write_text(json.dumps(diag, indent=2, sort_keys=True) + "\n")
    return ExperimentResult(cfg, agg, summaries, bound, diag, out, files)


def _single_run_aggregate(s: RunSummary, cfg: ExperimentConfig) -> MseAggregate:
    # aggregate() needs two runs; a duplicate with a shifted seed gives the same per-k statistics
    twin = RunSummary(s.seed + 1, s.config_hash, s.grid, s.err_sa, s.err_rls, s.omega, s.gram, s.rho, s.alpha)
    agg = aggregate([s, twin], noise_std=cfg.noise_std)
    agg.n_runs, agg.seeds = 1, (s.seed,)
    return agg


# -- diagnostics ---------------------------------------------------------------------------------


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return None if math.isnan(x) or math.isinf(x) else x
    return x


def diagnostics(cfg: ExperimentConfig, agg: MseAggregate, summaries: list, bound: CrlbResult | None) -> dict:
    grid = list(agg.grid)
    d = {
        "config_hash": cfg.config_hash(),
        "runs": agg.n_runs,
        "horizon": cfg.horizon,
        "rho": cfg.schedule().rho,
        "k_mse_rls_sa": dict(zip(grid, agg.k_mse)),
        "k_mse_rls": dict(zip(grid, agg.k_mse_rls)),
        "tail_fraction": dict(zip(grid, agg.tail_fraction)),
        "as_stat": dict(zip(grid, agg.as_stat)),
    }
    pairs = [(k, 4 * k) for k in grid if 4 * k in grid]
    d["lp_log2_ratio_k_to_4k"] = {
        f"{k}->{k4}": {str(p): agg.lp_log2_ratio(k, k4, p) for p in sorted(agg.lp_moments)} for k, k4 in pairs
    }
    if bound is not None:
        d["crlb"] = {"sigma_cr_bar": bound.sigma_cr_bar.tolist(), "trace": bound.trace_bar}
        k_last = grid[-1]
        try:
            nrm = normality_stat(summaries, k_last, bound.sigma_cr_bar)
            d["normality"] = {
                "k": k_last,
                "cov_deviation": nrm.cov_deviation,
                "skewness": nrm.skewness,
                "excess_kurtosis": nrm.excess_kurtosis,
            }
        except InsufficientData:
            d["normality"] = None
    return _clean(d)


# -- CSV writers -----------------------------------------------------------------------------------


def write_mse_csv(path: Path, agg: MseAggregate) -> Path:
    trace = agg.k_trace_crlb if agg.k_trace_crlb is not None else np.full(agg.grid.size, np.nan)
    lines = [",".join(MSE_COLUMNS)]
    for g, k in enumerate(agg.grid):
        row = (int(k), agg.k_mse[g], agg.k_mse_rls[g], trace[g], agg.tail_fraction[g], agg.as_stat[g])
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_moments_csv(path: Path, agg: MseAggregate) -> Path:
    D = agg.err_cov.shape[-1]
    orders = sorted(agg.lp_moments)
    cols = ["k"] + [f"lp{p}" for p in orders] + [f"k_cov_{i + 1}_{j + 1}" for i in range(D) for j in range(i, D)]
    lines = [",".join(cols)]
    for g, k in enumerate(agg.grid):
        row = [int(k)] + [agg.lp_moments[p][g] for p in orders]
        row += [agg.err_cov[g, i, j] for i in range(D) for j in range(i, D)]
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_trajectory_csv(path: Path, rec: RunRecord) -> Path:
    K, D = rec.theta_hat.shape
    omega = np.full(K, np.nan)
    if K > D:
        omega[: K - D] = omega_values(rec.theta_hat, rec.theta_rls)
    cols = ["k"] + [f"theta_hat_{i + 1}" for i in range(D)] + [f"theta_rls_{i + 1}" for i in range(D)] + ["s", "omega"]
    lines = [",".join(cols)]
    for k in range(1, K + 1):
        row = [k, *rec.theta_hat[k - 1], *rec.theta_rls[k - 1], int(rec.transcript[k - 1]), omega[k - 1]]
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


# -- per-run persistence ------------------------------------------------------------------------------


def save_run(rec: RunRecord, runs_dir: Path) -> Path:
    path = runs_dir / f"run_{rec.seed}.npz"
    np.savez(
        path,
        seed=rec.seed,
        config_hash=rec.config_hash,
        theta_hat=rec.theta_hat,
        theta_rls=rec.theta_rls,
        transcript=np.frombuffer(pack_transcript(rec.transcript), dtype=np.uint8),
        y=rec.trajectory.y,
        u=rec.trajectory.u,
        d=rec.trajectory.d,
        P_final=rec.P_final,
    )
    (runs_dir / f"run_{rec.seed}.bits").write_bytes(pack_transcript(rec.transcript))
    return path


def load_run(path: Path) -> RunRecord:
    with np.load(path) as z:
        K = z["theta_hat"].shape[0]
        return RunRecord(
            seed=int(z["seed"]),
            theta_hat=z["theta_hat"],
            theta_rls=z["theta_rls"],
            transcript=unpack_transcript(z["transcript"].tobytes(), K),
            trajectory=Trajectory(y=z["y"], u=z["u"], d=z["d"]),
            P_final=z["P_final"],
            config_hash=str(z["config_hash"]),
        )


def load_runs(runs_dir: Path) -> list[RunRecord]:
    paths = sorted(Path(runs_dir).glob("run_*.npz"))
    if not paths:
        raise ValidationError(f"no persisted runs found in {runs_dir}")
    return sorted((load_run(p) for p in paths), key=lambda r: r.seed)


def diagnose(in_dir, out_dir=None, with_crlb: bool = True) -> ExperimentResult:
    """Recompute the aggregate outputs from runs persisted with ``save_runs``."""
    in_dir = Path(in_dir)
    cfg_path = in_dir / RESOLVED_CONFIG
    if not cfg_path.exists():
        raise ValidationError(f"{cfg_path} not found; was the directory produced by 'run'?")
    cfg = parse_config(cfg_path.read_text())
    records = load_runs(in_dir / "runs")
    sys_, schedule = cfg.system(), cfg.schedule()
    summaries = []
    for rec in records:
        if rec.config_hash != cfg.config_hash():
            raise ValidationError(f"run {rec.seed} was produced by a different configuration")
        summaries.append(summarize_run(rec, sys_, cfg.grid, schedule))
    out = Path(out_dir) if out_dir is not None else in_dir
    out.mkdir(parents=True, exist_ok=True)
    return _finish(cfg, summaries, out, with_crlb)
