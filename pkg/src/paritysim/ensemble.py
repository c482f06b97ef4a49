"""Monte Carlo ensembles: many trajectories, border events, statistics.

Runs are split into fixed chunks of _CHUNK consecutive run indices; each
run draws its noise from its own derived stream
SeedSequence(entropy=seed, spawn_key=(run,)), and chunk partial sums are
merged in chunk order, so results are byte-identical for any worker
count. Border events (genesis, sudden death, sudden birth) are detected
at full step resolution even when the averaged series is decimated.
"""

from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .concurrence import lambda_branch_values
from .fpt import DIFFUSION, CrossingPrediction, diagonal_state, predict
from .qstate import DensityMatrix, DivergenceError
from .trajectory import (
    _NOISE_BLOCK,
    C_NOISE,
    SimConfig,
    TrajectoryRecord,
    clip_floor,
    clip_negative_eigenvalues,
    hermitize,
    step_batch,
)

__all__ = [
    "EventKind",
    "BorderEvent",
    "EnsembleStats",
    "GenesisHistogram",
    "ValidationReport",
    "events_from_series",
    "detect_events",
    "run_ensemble",
    "genesis_histogram",
    "first_crossing_times",
    "validate_against_analytics",
]

_CHUNK = 256      # fixed batching unit; --jobs maps chunks to processes
_I = np.array([1.0, 1.0, -1.0, -1.0])
_X_TOL = 1e-9
_ESCAPE = 6.0     # log-likelihood distance at which a run is retired
                  # as never-crossing (recovery probability e^{-2*6})


class EventKind(enum.Enum):
    GENESIS = "genesis"
    SUDDEN_DEATH = "sudden-death"
    SUDDEN_BIRTH = "sudden-birth"


@dataclass(frozen=True)
class BorderEvent:
    """One border crossing: time is the linear-interpolation zero of the
    branch maximum, step the grid index of the first sample on the new
    side (kept so histograms can be rebuilt from raw indices)."""

    time: float
    kind: EventKind
    step: int


def events_from_series(times: np.ndarray, lam: np.ndarray) -> list[BorderEvent]:
    """Border events of one run from its sampled branch-maximum series.

    Entangled means lam > 0. The first positive-going crossing of a run
    that started unentangled is genesis; later positive-going crossings
    are sudden births, negative-going ones sudden deaths.
    """
    times = np.asarray(times, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if times.shape != lam.shape or times.ndim != 1:
        raise ValueError("times and lam must be matching 1-d arrays")
    if np.isnan(lam).any():
        raise ValueError("series left the closed X class; events undefined")
    ent = lam > 0.0
    events = []
    genesis_seen = bool(ent[0])
    for k in np.nonzero(ent[1:] != ent[:-1])[0]:
        t0, t1 = times[k], times[k + 1]
        t_star = t0 + (t1 - t0) * (lam[k] / (lam[k] - lam[k + 1]))
        if ent[k + 1]:
            kind = EventKind.SUDDEN_BIRTH if genesis_seen else EventKind.GENESIS
            genesis_seen = True
        else:
            kind = EventKind.SUDDEN_DEATH
        events.append(BorderEvent(float(t_star), kind, int(k + 1)))
    return events


def detect_events(record: TrajectoryRecord) -> list[BorderEvent]:
    """Events of a recorded trajectory, at the record grid's resolution."""
    return events_from_series(record.times, record.lam)


@dataclass(frozen=True)
class EnsembleStats:
    """Aggregate of n_runs independent trajectories.

    genesis_times and rise_times are per-run, nan where the run never
    crossed (resp. never rose above the threshold) within the window;
    censored runs are tallied, never dropped or imputed. Standard errors
    come from the per-run variance at each grid point.
    """

    config: SimConfig
    n_runs: int
    times: np.ndarray
    avg_lambda: np.ndarray
    se_lambda: np.ndarray
    avg_concurrence: np.ndarray
    se_concurrence: np.ndarray
    genesis_times: np.ndarray
    rise_times: np.ndarray | None
    events: tuple[tuple[BorderEvent, ...], ...]
    trace_correction_total: float
    clip_total: float
    n_clips: int

    @property
    def crossed_times(self) -> np.ndarray:
        return self.genesis_times[~np.isnan(self.genesis_times)]

    @property
    def n_never(self) -> int:
        return int(np.isnan(self.genesis_times).sum())

    @property
    def crossing_fraction(self) -> float:
        return 1.0 - self.n_never / self.n_runs

    def event_totals(self) -> dict[EventKind, int]:
        totals = {kind: 0 for kind in EventKind}
        for run in self.events:
            for ev in run:
                totals[ev.kind] += 1
        return totals

    def death_birth_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-run numbers of sudden-death and sudden-birth events."""
        deaths = np.array(
            [sum(ev.kind is EventKind.SUDDEN_DEATH for ev in run) for run in self.events]
        )
        births = np.array(
            [sum(ev.kind is EventKind.SUDDEN_BIRTH for ev in run) for run in self.events]
        )
        return deaths, births

    def write_avg_lambda_csv(self, path) -> None:
        cols = np.column_stack(
            [
                self.times,
                self.avg_lambda,
                self.se_lambda,
                self.avg_concurrence,
                self.se_concurrence,
            ]
        )
        header = "t,avg_lambda,se_lambda,avg_concurrence,se_concurrence"
        np.savetxt(path, cols, fmt="%.17g", delimiter=",", header=header, comments="")

    def write_events_csv(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="") as fh:
            fh.write("run,step,time,kind\n")
            for i, run in enumerate(self.events):
                for ev in run:
                    fh.write(f"{i},{ev.step},{ev.time:.17g},{ev.kind.value}\n")

    def stats_dict(self) -> dict:
        crossed = self.crossed_times
        totals = self.event_totals()
        out = {
            "n_runs": self.n_runs,
            "n_crossed": int(crossed.size),
            "n_never": self.n_never,
            "crossing_fraction": self.crossing_fraction,
            "genesis_time_mean": float(crossed.mean()) if crossed.size else None,
            "genesis_time_median": float(np.median(crossed)) if crossed.size else None,
            "genesis_time_min": float(crossed.min()) if crossed.size else None,
            "genesis_time_max": float(crossed.max()) if crossed.size else None,
            "events_genesis": totals[EventKind.GENESIS],
            "events_sudden_death": totals[EventKind.SUDDEN_DEATH],
            "events_sudden_birth": totals[EventKind.SUDDEN_BIRTH],
            "trace_correction_total": self.trace_correction_total,
            "clip_total": self.clip_total,
            "n_clips": self.n_clips,
            "dt": self.config.dt,
            "duration": self.config.duration,
            "record_points": int(self.times.size),
        }
        if self.rise_times is not None:
            risen = self.rise_times[~np.isnan(self.rise_times)]
            out["rise_time_median"] = float(np.median(risen)) if risen.size else None
            out["n_never_risen"] = int(np.isnan(self.rise_times).sum())
        return out

    def write_stats_json(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(self.stats_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _noise_generators(seed: int, lo: int, hi: int) -> list[np.random.Generator]:
    return [
        np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        for i in range(lo, hi)
    ]


def _ensemble_chunk(args) -> dict:
    """Runs [lo, hi): the batched mirror of trajectory.simulate."""
    cfg, initial_mat, lo, hi, rise_threshold = args
    n = hi - lo
    n_steps = cfg.n_steps
    rec_steps = list(range(0, n_steps + 1, cfg.record_stride))
    if rec_steps[-1] != n_steps:
        rec_steps.append(n_steps)
    n_rec = len(rec_steps)
    dt, s0 = cfg.dt, cfg.s0
    sigma = math.sqrt(C_NOISE * s0 / dt)
    floor = clip_floor(cfg)

    gens = _noise_generators(cfg.seed, lo, hi)
    n_blocks = -(-n_steps // _NOISE_BLOCK)
    xi_all = np.empty((n, n_blocks * _NOISE_BLOCK))
    for j, g in enumerate(gens):
        for b in range(n_blocks):
            xi_all[j, b * _NOISE_BLOCK : (b + 1) * _NOISE_BLOCK] = g.normal(
                0.0, sigma, _NOISE_BLOCK
            )

    rho = np.tile(initial_mat.astype(np.complex128), (n, 1, 1))
    lam_rec = np.empty((n, n_rec))
    genesis = np.full(n, np.nan)
    genesis_seen = np.zeros(n, dtype=bool)
    rise = np.full(n, np.nan)
    events: list[list[BorderEvent]] = [[] for _ in range(n)]
    corrections = 0.0
    clip_total = 0.0
    n_clips = 0
    prev_lam = None
    slot = 0
    for k in range(n_steps + 1):
        pops = np.real(np.einsum("nii->ni", rho))
        l1, l2, l3 = lambda_branch_values(pops, np.imag(rho[:, 1, 2]))
        lam = np.maximum(np.maximum(l1, l2), l3)
        if rec_steps[slot] == k:
            lam_rec[:, slot] = lam
            slot += 1
        if k == 0:
            genesis_seen[:] = lam > 0.0
            if rise_threshold is not None:
                rise[lam > rise_threshold] = 0.0
        else:
            # same interpolation expression as events_from_series so an
            # ensemble of one reproduces detect_events exactly
            t0, t1 = (k - 1) * dt, k * dt
            ent_prev = prev_lam > 0.0
            ent = lam > 0.0
            for j in np.nonzero(ent != ent_prev)[0]:
                t_star = t0 + (t1 - t0) * (prev_lam[j] / (prev_lam[j] - lam[j]))
                if ent[j]:
                    if genesis_seen[j]:
                        kind = EventKind.SUDDEN_BIRTH
                    else:
                        kind = EventKind.GENESIS
                        genesis[j] = t_star
                        genesis_seen[j] = True
                else:
                    kind = EventKind.SUDDEN_DEATH
                events[j].append(BorderEvent(float(t_star), kind, k))
            if rise_threshold is not None:
                for j in np.nonzero(np.isnan(rise) & (lam > rise_threshold))[0]:
                    rise[j] = t0 + (t1 - t0) * (
                        (rise_threshold - prev_lam[j]) / (lam[j] - prev_lam[j])
                    )
        prev_lam = lam
        if k == n_steps:
            break
        rho = step_batch(rho, xi_all[:, k], dt, s0, cfg.delta, cfg.gamma)
        rho = hermitize(rho)
        tr = np.real(rho[:, 0, 0] + rho[:, 1, 1] + rho[:, 2, 2] + rho[:, 3, 3])
        bad = ~np.isfinite(tr) | (np.abs(tr - 1.0) > 1e-6)
        if bad.any():
            j = int(np.nonzero(bad)[0][0])
            raise DivergenceError(
                f"run {lo + j}: trace drifted to {tr[j]!r} at step {k + 1}"
            )
        corrections += float(np.abs(tr - 1.0).sum())
        rho /= tr[:, None, None]
        try:
            rho, clipped, n_c = clip_negative_eigenvalues(rho, floor)
        except DivergenceError as exc:
            raise DivergenceError(f"runs [{lo}, {hi}) at step {k + 1}: {exc}") from None
        clip_total += clipped
        n_clips += n_c

    conc_rec = np.maximum(lam_rec, 0.0)
    return {
        "lam_sum": lam_rec.sum(axis=0),
        "lam_sumsq": (lam_rec**2).sum(axis=0),
        "conc_sum": conc_rec.sum(axis=0),
        "conc_sumsq": (conc_rec**2).sum(axis=0),
        "genesis": genesis,
        "rise": rise,
        "events": [tuple(run) for run in events],
        "corrections": corrections,
        "clip_total": clip_total,
        "n_clips": n_clips,
        "times": np.asarray(rec_steps, dtype=float) * dt,
    }


def _map_chunks(fn, chunks, jobs: int) -> list:
    if jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(chunks))) as ex:
            return list(ex.map(fn, chunks))
    return [fn(c) for c in chunks]


def run_ensemble(
    cfg: SimConfig,
    initial: DensityMatrix,
    n_runs: int,
    *,
    jobs: int = 1,
    rise_threshold: float | None = None,
) -> EnsembleStats:
    """n_runs independent trajectories, aggregated.

    Entanglement along runs is evaluated with the X-class branch values,
    so the initial state must be in the closed class (rho_14 = 0, rho_23
    imaginary); the dynamics never leaves it. rise_threshold, if given,
    also records the first time each run's branch maximum exceeds it.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    mat = initial.mat
    if abs(mat[0, 3]) > _X_TOL or abs(np.real(mat[1, 2])) > _X_TOL:
        raise ValueError(
            "ensemble statistics require the closed X class "
            "(rho_14 = 0, rho_23 imaginary)"
        )
    chunks = [
        (cfg, mat, lo, min(lo + _CHUNK, n_runs), rise_threshold)
        for lo in range(0, n_runs, _CHUNK)
    ]
    parts = _map_chunks(_ensemble_chunk, chunks, jobs)

    times = parts[0]["times"]
    n_rec = times.size
    lam_sum = np.zeros(n_rec)
    lam_sumsq = np.zeros(n_rec)
    conc_sum = np.zeros(n_rec)
    conc_sumsq = np.zeros(n_rec)
    genesis = []
    rise = []
    events = []
    corrections = 0.0
    clip_total = 0.0
    n_clips = 0
    for part in parts:
        lam_sum += part["lam_sum"]
        lam_sumsq += part["lam_sumsq"]
        conc_sum += part["conc_sum"]
        conc_sumsq += part["conc_sumsq"]
        genesis.append(part["genesis"])
        rise.append(part["rise"])
        events.extend(part["events"])
        corrections += part["corrections"]
        clip_total += part["clip_total"]
        n_clips += part["n_clips"]

    def mean_se(total, totalsq):
        mean = total / n_runs
        if n_runs == 1:
            return mean, np.zeros(n_rec)
        var = np.maximum(totalsq - n_runs * mean**2, 0.0) / (n_runs - 1)
        return mean, np.sqrt(var / n_runs)

    avg_lam, se_lam = mean_se(lam_sum, lam_sumsq)
    avg_conc, se_conc = mean_se(conc_sum, conc_sumsq)
    return EnsembleStats(
        config=cfg,
        n_runs=n_runs,
        times=times,
        avg_lambda=avg_lam,
        se_lambda=se_lam,
        avg_concurrence=avg_conc,
        se_concurrence=se_conc,
        genesis_times=np.concatenate(genesis),
        rise_times=None if rise_threshold is None else np.concatenate(rise),
        events=tuple(events),
        trace_correction_total=corrections,
        clip_total=clip_total,
        n_clips=n_clips,
    )


@dataclass(frozen=True)
class GenesisHistogram:
    """Genesis-time counts on uniform bins; runs that never crossed are
    tallied separately, not binned."""

    bin_width: float
    edges: np.ndarray
    counts: np.ndarray
    n_never: int

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="") as fh:
            fh.write("bin_start,bin_end,count\n")
            for a, b, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                fh.write(f"{a:.17g},{b:.17g},{c}\n")


def genesis_histogram(stats: EnsembleStats, bin_width: float) -> GenesisHistogram:
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    crossed = stats.crossed_times
    n_bins = 1 if crossed.size == 0 else int(crossed.max() / bin_width) + 1
    edges = np.arange(n_bins + 1) * bin_width
    counts, _ = np.histogram(crossed, bins=edges)
    return GenesisHistogram(
        bin_width=bin_width, edges=edges, counts=counts, n_never=stats.n_never
    )


def _crossing_chunk(args) -> dict:
    """Measurement-only first-crossing kernel for runs [lo, hi).

    The conditioned state with the drive off is an exact function of the
    integrated record, p_i(gamma) proportional to p_i(0) exp(I_i gamma),
    so the kernel maintains populations through that map (positive at any
    step size) while the record log-likelihood itself advances by the
    Euler rule (mean current + noise) dt. A run crosses when the
    log-likelihood reaches the finite threshold; a Brownian-bridge draw
    between samples removes the discrete-monitoring barrier bias, with
    bridge uniforms from a separate per-run stream. Runs are retired once
    crossed or once _ESCAPE beyond the surviving side. After tau_bulk
    (where essentially all crossing mass lies) the step coarsens 20x to
    finish the window.
    """
    seed, p0, lo, hi, thr, dt1, tau_bulk, tau_max = args
    n = hi - lo
    side = math.copysign(1.0, thr)
    n1 = max(1, int(math.ceil(tau_bulk / dt1)))
    dt2 = 20.0 * dt1
    n2 = max(0, int(math.ceil((tau_max - n1 * dt1) / dt2)))
    dts = np.concatenate([np.full(n1, dt1), np.full(n2, dt2)])

    noise_gens = _noise_generators(seed, lo, hi)
    bridge_gens = [
        np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i, 1)))
        for i in range(lo, hi)
    ]
    p0 = np.asarray(p0, dtype=float)
    gam = np.zeros(n)
    weights = np.tile(p0, (n, 1))
    alive = np.arange(n)
    times = np.full(n, np.nan)
    blk = ublk = None
    t = 0.0
    for k, dt in enumerate(dts):
        if alive.size == 0:
            break
        col = k % _NOISE_BLOCK
        if col == 0:
            blk = np.empty((alive.size, _NOISE_BLOCK))
            ublk = np.empty_like(blk)
            for r, j in enumerate(alive):
                blk[r] = noise_gens[j].standard_normal(_NOISE_BLOCK)
                ublk[r] = bridge_gens[j].random(_NOISE_BLOCK)
        xi = blk[:, col] * math.sqrt(1.0 / dt)
        mean_i = (weights @ _I) / weights.sum(axis=1)
        g_new = gam + (mean_i + xi) * dt
        weights = p0[None, :] * np.exp(np.outer(g_new, _I))
        a = side * (gam - thr)
        b = side * (g_new - thr)
        hit = b >= 0.0
        pb = np.where(hit, 1.0, np.exp(np.minimum(-(a * b) / (DIFFUSION * dt), 0.0)))
        bridged = ~hit & (ublk[:, col] < pb)
        newly = hit | bridged
        if newly.any():
            frac = np.where(hit, (thr - gam) / np.where(hit, g_new - gam, 1.0), 0.5)
            times[alive[newly]] = t + dt * frac[newly]
        gam = g_new
        retire = newly | (b < -_ESCAPE)
        if retire.any():
            keep = ~retire
            alive = alive[keep]
            weights = weights[keep]
            gam = gam[keep]
            blk = blk[keep]
            ublk = ublk[keep]
        t += dt
    return {"times": times, "n_open": int(alive.size)}


def first_crossing_times(
    state,
    cfg: SimConfig,
    n_runs: int,
    *,
    jobs: int = 1,
) -> tuple[np.ndarray, int]:
    """Per-run border-crossing times (units T_M, nan = never) from the
    measurement-only simulator, plus the count of runs still open at the
    window end. cfg.delta must be 0; cfg.dt sets the fine step and
    cfg.duration the window, both converted to T_M units internally."""
    if cfg.delta != 0.0:
        raise ValueError("first-crossing analytics require delta = 0")
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    ds = diagonal_state(np.asarray(state, dtype=float))
    pred = predict(ds)
    thr = pred.r2 if math.isfinite(pred.r2) else pred.r1
    if not math.isfinite(thr):
        raise ValueError("state has no finite crossing boundary to validate")
    dt1 = cfg.dt / cfg.s0
    tau_max = cfg.duration / cfg.s0
    tau_bulk = min(abs(thr) + 6.0 * math.sqrt(abs(thr)) + 2.0, tau_max)
    chunks = [
        (cfg.seed, ds.p, lo, min(lo + _CHUNK, n_runs), thr, dt1, tau_bulk, tau_max)
        for lo in range(0, n_runs, _CHUNK)
    ]
    parts = _map_chunks(_crossing_chunk, chunks, jobs)
    times = np.concatenate([part["times"] for part in parts])
    n_open = sum(part["n_open"] for part in parts)
    return times, n_open


@dataclass(frozen=True)
class ValidationReport:
    """Simulation vs closed forms for one measurement-only initial state.

    Times in T_M units. mean_z is nan when no run crossed.
    """

    state: tuple[float, float, float, float]
    n_runs: int
    prediction: CrossingPrediction
    n_crossed: int
    n_open: int
    observed_fraction: float
    fraction_se: float
    fraction_z: float
    observed_mean: float
    mean_se: float
    mean_z: float

    def passed(self, z_max: float = 3.0) -> bool:
        ok = abs(self.fraction_z) <= z_max
        if math.isfinite(self.mean_z):
            ok = ok and abs(self.mean_z) <= z_max
        return ok

    def to_dict(self) -> dict:
        return {
            "state": list(self.state),
            "n_runs": self.n_runs,
            "n_crossed": self.n_crossed,
            "n_open": self.n_open,
            "predicted_fraction": self.prediction.p_cross,
            "observed_fraction": self.observed_fraction,
            "fraction_se": self.fraction_se,
            "fraction_z": self.fraction_z,
            "predicted_mean": self.prediction.mean_time,
            "observed_mean": self.observed_mean,
            "mean_se": self.mean_se,
            "mean_z": self.mean_z,
            "passed": self.passed(),
        }


def validate_against_analytics(
    state,
    cfg: SimConfig,
    n_runs: int,
    *,
    jobs: int = 1,
) -> ValidationReport:
    """Compare the simulated crossing fraction and conditional mean
    crossing time against the closed forms for one initial state.

    The state must be in a supported single-boundary class (the predict
    preconditions); cfg.delta must be 0. z-scores use the binomial
    standard error for the fraction and the sample standard error for
    the conditional mean.
    """
    ds = diagonal_state(np.asarray(state, dtype=float))
    pred = predict(ds)
    times, n_open = first_crossing_times(ds.p, cfg, n_runs, jobs=jobs)
    crossed = times[~np.isnan(times)]
    frac = crossed.size / n_runs
    p = pred.p_cross
    f_se = math.sqrt(p * (1.0 - p) / n_runs)
    f_z = 0.0 if f_se == 0.0 and frac == p else (frac - p) / f_se if f_se else math.inf
    if crossed.size > 1:
        m = float(crossed.mean())
        m_se = float(crossed.std(ddof=1) / math.sqrt(crossed.size))
        m_z = (m - pred.mean_time) / m_se if m_se else math.inf
    else:
        m, m_se, m_z = math.nan, math.nan, math.nan
    return ValidationReport(
        state=tuple(float(x) for x in ds.p),
        n_runs=n_runs,
        prediction=pred,
        n_crossed=int(crossed.size),
        n_open=n_open,
        observed_fraction=frac,
        fraction_se=f_se,
        fraction_z=f_z,
        observed_mean=m,
        mean_se=m_se,
        mean_z=m_z,
    )
