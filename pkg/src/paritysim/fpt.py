"""Measurement-only analytics: Bayes updates, thresholds, first passage.

With the Hamiltonian off, a parity measurement record enters the state only
through the log-likelihood variable gamma(t), Gaussian per parity with mean
+-t/T_M and variance t/T_M. Diagonal Bell-basis states update as

    (p1, p2, p3, p4) -> (p1 e^g, p2 e^g, p3 e^-g, p4 e^-g) / N(g)

so entanglement genesis and sudden death reduce to the first passage of a
biased random walk (drift +-1, diffusion 1/2 in tau = t/T_M units) across a
threshold r2 fixed by the initial populations. All times here are in units
of the measurement time T_M.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .concurrence import diagonal_lambda

__all__ = [
    "DiagonalState",
    "diagonal_state",
    "bayes_update",
    "lambda_of_gamma",
    "crossing_thresholds",
    "p_genesis",
    "p_sudden_death",
    "p_cross_parity",
    "mean_crossing_time",
    "fpt_pdf",
    "fpt_pdf_conditioned",
    "green_function",
    "BorderLines",
    "border_geometry",
    "CrossingPrediction",
    "predict",
    "walk_crossing_times",
]

CLASS_TOL = 1e-12
DRIFT = 1.0       # |v| of the log-likelihood walk, tau units
DIFFUSION = 0.5   # D of the log-likelihood walk, tau units

_CURRENT_SIGNS = np.array([1.0, 1.0, -1.0, -1.0])


@dataclass(frozen=True, eq=False)
class DiagonalState:
    """Diagonal Bell-basis state (populations only)."""

    p: np.ndarray

    @property
    def p_even(self) -> float:
        return float(self.p[0] + self.p[1])

    @property
    def p_odd(self) -> float:
        return float(self.p[2] + self.p[3])

    @property
    def even_blocked(self) -> bool:
        """True when rho_11 = rho_22: the even-collapse border is unreachable."""
        return abs(self.p[0] - self.p[1]) <= CLASS_TOL

    @property
    def odd_blocked(self) -> bool:
        """True when rho_33 = rho_44: the odd-collapse border is unreachable."""
        return abs(self.p[2] - self.p[3]) <= CLASS_TOL


def diagonal_state(populations) -> DiagonalState:
    p = np.asarray(populations, dtype=float).copy()
    if p.shape != (4,):
        raise ValueError("expected four populations")
    if np.any(p < -CLASS_TOL):
        raise ValueError(f"negative population: {p.min()!r}")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"populations sum to {p.sum()!r}, not 1")
    p = np.clip(p, 0.0, None)
    p.setflags(write=False)
    return DiagonalState(p)


def _swap_parity(state: DiagonalState) -> DiagonalState:
    return diagonal_state(np.array([state.p[2], state.p[3], state.p[0], state.p[1]]))


def _log_weights(state: DiagonalState, gamma: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logp = np.log(state.p)
    return logp + gamma * _CURRENT_SIGNS


def bayes_update(state: DiagonalState, gamma: float) -> DiagonalState:
    """Posterior after observing integrated log-likelihood gamma.

    Log-domain arithmetic, safe for any finite gamma; +-inf returns the
    corresponding parity subspace.
    """
    if math.isinf(gamma):
        mask = _CURRENT_SIGNS == (1.0 if gamma > 0 else -1.0)
        q = np.where(mask, state.p, 0.0)
        if q.sum() <= 0.0:
            raise ValueError("limit subspace has zero weight")
        return diagonal_state(q / q.sum())
    logq = _log_weights(state, gamma)
    m = logq.max()
    q = np.exp(logq - m)
    return diagonal_state(q / q.sum())


def lambda_of_gamma(state: DiagonalState, gamma: float) -> float:
    """Lambda of the gamma-updated state: 2 max_i p_i(gamma) - 1."""
    if math.isinf(gamma):
        return diagonal_lambda(bayes_update(state, gamma).p)
    logq = _log_weights(state, gamma)
    m = logq.max()
    q = np.exp(logq - m)
    return float(2.0 * q.max() / q.sum() - 1.0)


def crossing_thresholds(state: DiagonalState) -> tuple[float, float]:
    """Thresholds (r1, r2) where Lambda(gamma) = 0.

    r1 is the even-side crossing (gamma -> +inf direction), r2 the odd-side
    one. Blocked routes return infinite sentinels: r1 = +inf when
    rho_11 = rho_22, r2 = -inf when rho_33 = rho_44; a vanishing opposite
    subspace pushes the threshold to the other infinity.
    """
    p = state.p
    d_even = abs(p[0] - p[1])
    d_odd = abs(p[2] - p[3])
    if d_even <= CLASS_TOL:
        r1 = math.inf
    elif state.p_odd <= CLASS_TOL:
        r1 = -math.inf
    else:
        r1 = 0.5 * math.log(state.p_odd / d_even)
    if d_odd <= CLASS_TOL:
        r2 = -math.inf
    elif state.p_even <= CLASS_TOL:
        r2 = math.inf
    else:
        r2 = -0.5 * math.log(state.p_even / d_odd)
    return r1, r2


def _require_standard_class(state: DiagonalState, op: str) -> None:
    if not state.even_blocked:
        raise ValueError(f"{op} needs rho_11 = rho_22 (got {state.p[0]!r}, {state.p[1]!r})")
    if state.odd_blocked:
        raise ValueError(f"{op} needs rho_33 != rho_44")
    if state.p_even <= CLASS_TOL:
        raise ValueError(f"{op} needs rho_11 = rho_22 != 0")


def p_genesis(state: DiagonalState) -> float:
    """Probability that an unentangled state ever crosses to C > 0.

    P_EG = 2 max(rho_33, rho_44), assembled from the per-parity crossing
    probabilities weighted by the parity populations.
    """
    _require_standard_class(state, "p_genesis")
    if diagonal_lambda(state.p) > CLASS_TOL:
        raise ValueError("state is entangled; use p_sudden_death")
    return float(2.0 * max(state.p[2], state.p[3]))


def p_sudden_death(state: DiagonalState) -> float:
    """Probability that an entangled state ever crosses to C = 0.

    P_SD = 2 max(rho_33, rho_44) (rho_11 + rho_22) / |rho_33 - rho_44|.
    """
    _require_standard_class(state, "p_sudden_death")
    if diagonal_lambda(state.p) <= CLASS_TOL:
        raise ValueError("state is not entangled; use p_genesis")
    return float(
        2.0 * max(state.p[2], state.p[3]) * state.p_even / abs(state.p[2] - state.p[3])
    )


def p_cross_parity(r2: float, parity: str) -> float:
    """Crossing probability of a definite-parity walk against threshold r2.

    1 when the drift points at the threshold, exp(r2 v / D)-type decay
    otherwise: exp((r2 v - |r2 v|)/(2 D)) with v = +1 (even), -1 (odd).
    """
    v = _parity_drift(parity)
    x = r2 * v
    return 1.0 if x >= 0.0 else float(math.exp((x - abs(x)) / (2.0 * DIFFUSION)))


def mean_crossing_time(state: DiagonalState) -> float:
    """Mean conditioned crossing time in units of T_M: |r2| (inf if blocked)."""
    _, r2 = crossing_thresholds(state)
    return abs(r2)


def _parity_drift(parity) -> float:
    if parity in ("even", 1, +1.0):
        return DRIFT
    if parity in ("odd", -1, -1.0):
        return -DRIFT
    raise ValueError(f"parity must be 'even' or 'odd', got {parity!r}")


def fpt_pdf(tau, r2: float, parity: str):
    """Unconditioned first-passage density of the definite-parity walk.

    |r2| / sqrt(4 pi D tau^3) * exp(-(r2 - v tau)^2 / (4 D tau)); integrates
    to p_cross_parity(r2, parity) over tau > 0.
    """
    v = _parity_drift(parity)
    tau = np.asarray(tau, dtype=float)
    out = np.zeros_like(tau)
    pos = tau > 0.0
    t = tau[pos]
    out[pos] = (
        abs(r2)
        / np.sqrt(4.0 * np.pi * DIFFUSION * t**3)
        * np.exp(-((r2 - v * t) ** 2) / (4.0 * DIFFUSION * t))
    )
    return out if out.ndim else float(out)


def fpt_pdf_conditioned(tau, r2: float):
    """Crossing-time density conditioned on crossing: the same inverse
    Gaussian for both parities, mean |r2|, shape r2^2."""
    tau = np.asarray(tau, dtype=float)
    out = np.zeros_like(tau)
    pos = tau > 0.0
    t = tau[pos]
    out[pos] = abs(r2) / np.sqrt(2.0 * np.pi * t**3) * np.exp(-((abs(r2) - t) ** 2) / (2.0 * t))
    return out if out.ndim else float(out)


def green_function(gamma, tau: float, r2: float, parity: str):
    """Survival density of the walk with an absorbing boundary at r2.

    Image-charge solution; zero at gamma = r2 and the free Gaussian as
    r2 -> -+inf. gamma must lie on the surviving side of r2.
    """
    v = _parity_drift(parity)
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    gamma = np.asarray(gamma, dtype=float)
    if r2 < 0 and np.any(gamma < r2 - 1e-12):
        raise ValueError("gamma below the absorbing boundary")
    if r2 > 0 and np.any(gamma > r2 + 1e-12):
        raise ValueError("gamma above the absorbing boundary")
    d = DIFFUSION
    free = np.exp(-((gamma - v * tau) ** 2) / (4.0 * d * tau)) / np.sqrt(4.0 * np.pi * d * tau)
    image = 1.0 - np.exp(-(r2**2 - r2 * gamma) / (d * tau))
    out = free * image
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class BorderLines:
    """The Lambda(gamma) = 0 loci in the (rho_33, rho_44) plane at
    rho_11 = rho_22, as lines rho_44 = a rho_33 + b. Both pass through
    (1/2, 1/2); the branch that degenerates to a vertical line carries inf
    sentinels."""

    upper: tuple[float, float]   # branch with rho_44 > rho_33
    lower: tuple[float, float]   # branch with rho_33 > rho_44


def border_geometry(gamma: float) -> BorderLines:
    th = math.tanh(gamma)
    upper = (-th, 0.5 * (1.0 + th))
    if th == 0.0:
        lower = (math.inf, math.inf)
    else:
        lower = (-1.0 / th, -1.0 / math.expm1(-2.0 * gamma))
    return BorderLines(upper=upper, lower=lower)


def _json_num(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return x


@dataclass(frozen=True)
class CrossingPrediction:
    """Closed-form border-crossing forecast for a diagonal state."""

    r1: float
    r2: float
    initially_entangled: bool
    p_cross: float
    mean_time: float                      # units of T_M
    pdf_params: tuple[float, float, float]  # (|threshold|, drift, diffusion)

    def to_json(self) -> str:
        return json.dumps(
            {
                "r1": _json_num(self.r1),
                "r2": _json_num(self.r2),
                "initially_entangled": self.initially_entangled,
                "p_cross": self.p_cross,
                "mean_time_tm": _json_num(self.mean_time),
                "pdf_params": [_json_num(v) for v in self.pdf_params],
            },
            sort_keys=True,
        )


def predict(state: DiagonalState) -> CrossingPrediction:
    """Assemble thresholds, crossing probability, and timing for a state.

    Supported classes: rho_11 = rho_22 != 0 with rho_33 != rho_44 (odd-side
    threshold r2), its parity mirror (even-side threshold r1), and the
    degenerate class blocked on both sides (p_cross = 0, mean_time = inf).
    States with both routes open (two finite thresholds) are rejected.
    """
    lam0 = diagonal_lambda(state.p)
    entangled = lam0 > CLASS_TOL
    r1, r2 = crossing_thresholds(state)
    f1, f2 = math.isfinite(r1), math.isfinite(r2)
    if f1 and f2:
        raise ValueError(
            "both rho_11 != rho_22 and rho_33 != rho_44: two finite thresholds, "
            "outside the analyzed classes"
        )
    if not f1 and not f2:
        return CrossingPrediction(
            r1, r2, entangled, 0.0, math.inf, (math.inf, DRIFT, DIFFUSION)
        )
    work = state if f2 else _swap_parity(state)
    p_cross = p_sudden_death(work) if entangled else p_genesis(work)
    thr = abs(r2) if f2 else abs(r1)
    return CrossingPrediction(r1, r2, entangled, p_cross, thr, (thr, DRIFT, DIFFUSION))


def walk_crossing_times(
    p_even: float,
    r2: float,
    n_walkers: int,
    *,
    dt_tau: float = 1e-3,
    t_max_tau: float | None = None,
    seed: int = 0,
    chunk: int = 16384,
) -> tuple[np.ndarray, np.ndarray]:
    """Direct Monte Carlo of the log-likelihood walk, the oracle behind the
    closed forms.

    Each walker draws a parity (even with probability p_even), then runs
    dgamma = v dtau + sqrt(2 D dtau) N(0,1) until absorbed at r2. Sub-step
    crossings are resolved exactly with the Brownian-bridge crossing
    probability exp(-(g0-r2)(g1-r2)/(D dtau)), so the crossing fraction is
    unbiased at any step size; crossing times carry only an O(dtau) bias.
    Walkers far beyond recovery (drift away, distance > 15) retire early.

    Returns (crossed mask, times); times are nan for non-crossers.
    Deterministic for fixed (seed, chunk): chunk c uses the stream derived
    from SeedSequence(seed, spawn_key=(c,)).
    """
    if not 0.0 <= p_even <= 1.0:
        raise ValueError("p_even must be in [0, 1]")
    if not math.isfinite(r2) or r2 == 0.0:
        raise ValueError("walk oracle needs a finite nonzero threshold")
    # Fine steps through the bulk of the conditional-time distribution, then
    # 20x coarser through the straggler tail. The bridge rule keeps the
    # crossing fraction unbiased at any step size, so coarsening only touches
    # the time resolution of the few late crossers.
    t_bulk = abs(r2) + 6.0 * math.sqrt(abs(r2)) + 2.0
    if t_max_tau is None:
        t_max_tau = t_bulk + 24.0
    phases = [(dt_tau, t_bulk)]
    if t_max_tau > t_bulk:
        phases.append((20.0 * dt_tau, t_max_tau))
    side = -1.0 if r2 < 0 else 1.0   # crossing means side*(gamma - r2) >= 0
    crossed = np.zeros(n_walkers, dtype=bool)
    times = np.full(n_walkers, np.nan)

    for c, lo in enumerate(range(0, n_walkers, chunk)):
        hi = min(lo + chunk, n_walkers)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(c,)))
        size = hi - lo
        v = np.where(rng.random(size) < p_even, DRIFT, -DRIFT)
        gam = np.zeros(size)
        idx = np.arange(size)
        t = 0.0
        for dt, t_end in phases:
            sq = math.sqrt(2.0 * DIFFUSION * dt)
            while t < t_end - 0.5 * dt and idx.size:
                noise = rng.normal(0.0, sq, idx.size)
                new = gam + v * dt + noise
                a = side * (gam - r2)
                b = side * (new - r2)
                direct = b >= 0.0
                # survivors have a < 0 and b < 0, so a*b > 0 and pb < 1;
                # the direct entries are hits regardless of pb
                pb = np.exp(-(a * b) / (DIFFUSION * dt))
                hit = direct | (rng.random(idx.size) < pb)
                if hit.any():
                    frac = np.where(
                        direct[hit],
                        np.clip((r2 - gam[hit]) / (new[hit] - gam[hit]), 0.0, 1.0),
                        0.5,
                    )
                    g = idx[hit]
                    crossed[lo + g] = True
                    times[lo + g] = t + frac * dt
                # a drift-away walker 6+ past the threshold recovers with
                # probability < e^-12; retire it
                escaped = (-b > 6.0) & ~hit
                keep = ~(hit | escaped)
                gam, v, idx = new[keep], v[keep], idx[keep]
                t += dt
            if not idx.size:
                break
    return crossed, times
