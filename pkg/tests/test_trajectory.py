"""Integrator tests against closed-form and statistical oracles.

The Hamiltonian block is checked against scipy's matrix exponential, the
measurement update against the exact Bayes posterior, and the noise
calibration against the Gaussian law of the integrated detector record
(mean +-t/T_M, variance t/T_M per parity). Ensemble-level statistical
invariants use the vectorized kernel directly to keep runtimes small.
"""

import math

import numpy as np
import pytest
from scipy.linalg import expm

from paritysim import fpt, trajectory
from paritysim.concurrence import lambda_branch_values
from paritysim.qstate import DensityMatrix, make_state, preset_state
from paritysim.trajectory import SimConfig, hamiltonian, ito_step, sample_noise, simulate


def bell_diag(p1, p2, p3, p4):
    return make_state(np.diag([p1, p2, p3, p4]).astype(complex), "bell")


MIXED = preset_state("mixed")
U1 = bell_diag(1, 0, 0, 0)
U4 = bell_diag(0, 0, 0, 1)


def batch_lambda(rho):
    pops = np.real(np.einsum("nii->ni", rho))
    l1, l2, l3 = lambda_branch_values(pops, np.imag(rho[:, 1, 2]))
    return np.maximum(np.maximum(l1, l2), l3)


def run_batch(cfg, initial, n_runs, n_steps, seed, checkpoints=()):
    """Small ensemble driver on the raw kernel with per-run noise streams."""
    rho = np.broadcast_to(initial.mat, (n_runs, 4, 4)).astype(np.complex128).copy()
    sigma = math.sqrt(trajectory.C_NOISE * cfg.s0 / cfg.dt)
    rngs = [
        np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        for i in range(n_runs)
    ]
    noise = np.empty((n_runs, n_steps))
    for i, rng in enumerate(rngs):
        noise[i] = rng.normal(0.0, sigma, n_steps)
    grabbed = {}
    floor = trajectory.clip_floor(cfg)
    for k in range(n_steps):
        rho = trajectory.step_batch(
            rho, noise[:, k], cfg.dt, cfg.s0, cfg.delta, cfg.gamma
        )
        rho = trajectory.hermitize(rho)
        tr = np.real(np.einsum("nii->n", rho))
        rho /= tr[:, None, None]
        rho, _, _ = trajectory.clip_negative_eigenvalues(rho, floor)
        if k + 1 in checkpoints:
            grabbed[k + 1] = rho.copy()
    return rho, noise, grabbed


# -------------------------------------------------------------- structure


def test_hamiltonian_matrix():
    h = hamiltonian(1.0)
    expect = np.zeros((4, 4))
    expect[1, 2] = expect[2, 1] = 1.0
    assert np.array_equal(h, expect)
    assert np.array_equal(hamiltonian(3.5), 3.5 * expect)
    with pytest.raises(ValueError):
        hamiltonian(0.0)


def test_stationary_diagonal_commutator():
    h = hamiltonian(2.0)
    rho = np.diag([0.7, 0.0, 0.0, 0.3])
    assert np.allclose(h @ rho - rho @ h, 0.0, atol=0.0)


def test_u2_rotation_matches_expm_oracle():
    """H alone rotates u2 <-> u3: populations cos^2/sin^2(Delta t), rho_23
    purely imaginary. Oracle: scipy expm of the generator."""
    delta = 2.0 * math.pi
    h = hamiltonian(delta)
    rho0 = np.zeros((4, 4), dtype=complex)
    rho0[1, 1] = 1.0
    for t in (0.03, 0.11, 0.20):
        u = expm(-1j * h * t)
        rho_t = u @ rho0 @ u.conj().T
        assert rho_t[1, 1].real == pytest.approx(math.cos(delta * t) ** 2, abs=1e-12)
        assert rho_t[2, 2].real == pytest.approx(math.sin(delta * t) ** 2, abs=1e-12)
        assert abs(rho_t[1, 2].real) < 1e-12
        assert abs(rho_t[0, 0]) < 1e-15 and abs(rho_t[3, 3]) < 1e-15


def test_step_batch_hamiltonian_term_tracks_expm():
    """With noise off and the measurement rate negligible, the elementwise
    commutator reproduces the unitary rotation."""
    cfg = SimConfig(k_ratio=1e-5, duration=0.25, dt=2.0 * math.pi / (2.0 * math.pi) / 20000)
    rho = np.zeros((1, 4, 4), dtype=complex)
    rho[0, 1, 1] = 1.0
    n = int(round(0.25 / cfg.dt))
    for _ in range(n):
        rho = trajectory.step_batch(
            rho, np.zeros(1), cfg.dt, cfg.s0, cfg.delta, cfg.gamma
        )
        rho = trajectory.hermitize(rho)
        rho /= np.real(np.einsum("nii->n", rho))[:, None, None]
    u = expm(-1j * hamiltonian(cfg.delta) * n * cfg.dt)
    expect = u @ np.diag([0, 1, 0, 0]).astype(complex) @ u.conj().T
    assert np.max(np.abs(rho[0] - expect)) < 5e-3


# ------------------------------------------------------------ fixed points


def test_u1_projector_is_exact_fixed_point():
    cfg = SimConfig(k_ratio=2.0, duration=0.1)
    for xi in (-3.7, 0.0, 12.0):
        out = ito_step(U1, cfg, xi)
        assert np.array_equal(out.mat, U1.mat)


def test_diagonal_state_fixed_under_zero_noise():
    cfg = SimConfig(k_ratio=1.0, duration=0.1)
    rho = bell_diag(0.1, 0.2, 0.3, 0.4)
    with np.errstate(all="raise"):
        out = trajectory.step_batch(
            rho.mat[None].astype(complex), np.zeros(1), cfg.dt, cfg.s0, 0.0, cfg.gamma
        )
    assert np.max(np.abs(out[0] - rho.mat)) < 1e-16


def test_u4_trajectory_stays_maximally_entangled():
    cfg = SimConfig(k_ratio=2.0, duration=1.0, seed=11)
    rec = simulate(cfg, U4)
    assert np.all(np.abs(rec.concurrence - 1.0) < 1e-12)
    assert np.all(np.abs(rec.lam - 1.0) < 1e-12)
    # current samples scatter around the odd-parity value -1
    se = math.sqrt(trajectory.C_NOISE * cfg.s0 / cfg.dt / rec.currents.size)
    assert abs(np.mean(rec.currents) + 1.0) < 4.0 * se


# ------------------------------------------------------- measurement update


def test_single_step_matches_bayes_posterior():
    """Diagonal Euler update vs the exact posterior with log-likelihood
    increment xi dt / S0: the gap shrinks linearly in dt at fixed
    standardized noise."""
    cfg = SimConfig(k_ratio=1.0, duration=1.0)
    state = fpt.diagonal_state([0.25, 0.25, 0.25, 0.25])
    u = 1.3  # standardized noise draw
    errs = []
    for dt in (cfg.t_m / 200.0, cfg.t_m / 2000.0, cfg.t_m / 20000.0):
        xi = u * math.sqrt(trajectory.C_NOISE * cfg.s0 / dt)
        out = trajectory.step_batch(
            np.diag([0.25] * 4).astype(complex)[None], np.array([xi]), dt, cfg.s0, 0.0, cfg.gamma
        )
        euler = np.real(np.diagonal(out[0]))
        euler = euler / euler.sum()
        bayes = fpt.bayes_update(state, xi * dt / cfg.s0).p
        errs.append(np.max(np.abs(euler - bayes)))
    assert errs[1] < errs[0] / 8.0
    assert errs[2] < errs[1] / 8.0


def test_step_diagonal_agrees_with_step_batch(rng):
    cfg = SimConfig(k_ratio=3.0, duration=0.1)
    p = rng.dirichlet(np.ones(4), size=64)
    xi = rng.normal(0.0, math.sqrt(cfg.s0 / cfg.dt), 64)
    full = trajectory.step_batch(
        np.einsum("ni,ij->nij", p, np.eye(4)).astype(complex),
        xi,
        cfg.dt,
        cfg.s0,
        0.0,
        cfg.gamma,
    )
    fast = trajectory.step_diagonal(p, xi, cfg.dt, cfg.s0)
    assert np.max(np.abs(np.real(np.einsum("nii->ni", full)) - fast)) < 1e-15
    assert np.max(np.abs(fast.sum(axis=1) - 1.0)) < 1e-14


def test_noise_calibration():
    """The pinned (coefficient, variance) pair: integrated record of a
    frozen even-parity state is Gaussian with mean t/T_M and variance
    t/T_M."""
    cfg = SimConfig(k_ratio=2.0, duration=1.0, seed=5)  # t = 2 T_M
    n_runs, n_steps = 4000, cfg.n_steps
    sigma = math.sqrt(trajectory.C_NOISE * cfg.s0 / cfg.dt)
    gammas = np.empty(n_runs)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=5, spawn_key=(0,)))
    for i in range(n_runs):
        xi = rng.normal(0.0, sigma, n_steps)
        gammas[i] = np.sum(1.0 + xi) * cfg.dt / cfg.s0  # frozen <I> = +1
    tau = cfg.duration / cfg.t_m
    se_mean = math.sqrt(tau / n_runs)
    assert abs(gammas.mean() - tau) < 4.0 * se_mean
    se_var = tau * math.sqrt(2.0 / (n_runs - 1))
    assert abs(gammas.var(ddof=1) - tau) < 4.0 * se_var


def test_sample_noise_distribution():
    rng = np.random.default_rng(7)
    cfg = SimConfig(k_ratio=1.0, duration=1.0)
    draws = np.array([sample_noise(rng, cfg.dt, cfg.s0) for _ in range(20000)])
    var = trajectory.C_NOISE * cfg.s0 / cfg.dt
    assert abs(draws.mean()) < 4.0 * math.sqrt(var / draws.size)
    assert abs(draws.var(ddof=1) - var) < 4.0 * var * math.sqrt(2.0 / draws.size)
    with pytest.raises(ValueError):
        sample_noise(rng, 0.0, 1.0)


def test_trajectory_posterior_tracks_record_bayes_filter():
    """Along a measurement-only run, the integrated record (1/S0) int I dt
    reproduces the state via the exact Bayes filter up to O(dt) stepping
    error."""
    cfg = SimConfig(k_ratio=1.0, duration=0.5, dt=1.0 / 5000.0, seed=23)
    init = fpt.diagonal_state([0.25, 0.25, 0.3, 0.2])
    rho = np.array([np.diag(init.p).astype(complex)])
    rng = np.random.default_rng(np.random.SeedSequence(entropy=23, spawn_key=(0,)))
    sigma = math.sqrt(trajectory.C_NOISE * cfg.s0 / cfg.dt)
    gamma_rec = 0.0
    for _ in range(cfg.n_steps):
        xi = rng.normal(0.0, sigma)
        mean_i = float(np.real(rho[0, 0, 0] + rho[0, 1, 1] - rho[0, 2, 2] - rho[0, 3, 3]))
        gamma_rec += (mean_i + xi) * cfg.dt / cfg.s0
        rho = trajectory.step_batch(rho, np.array([xi]), cfg.dt, cfg.s0, 0.0, cfg.gamma)
        rho = trajectory.hermitize(rho)
        rho /= np.real(np.einsum("nii->n", rho))[:, None, None]
    filtered = fpt.bayes_update(init, gamma_rec).p
    stepped = np.real(np.diagonal(rho[0]))
    assert np.max(np.abs(stepped - filtered)) < 5e-3


# ----------------------------------------------------------- full runs


def test_simulate_deterministic_and_seed_sensitive():
    cfg = SimConfig(k_ratio=1.0, duration=0.5, seed=42)
    a = simulate(cfg, MIXED)
    b = simulate(cfg, MIXED)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.currents, b.currents)
    c = simulate(SimConfig(k_ratio=1.0, duration=0.5, seed=43), MIXED)
    assert not np.array_equal(a.currents, c.currents)


def test_trace_corrections_stay_at_rounding_floor():
    """Trace is preserved algebraically; logged corrections must sit at the
    accumulation floor of double rounding for any dt."""
    for dt_div in (200.0, 400.0):
        cfg = SimConfig(k_ratio=1.0, duration=1.0, dt=1.0 / dt_div, seed=9)
        rec = simulate(cfg, MIXED)
        assert rec.trace_correction_total <= cfg.n_steps * 1e-14


def test_positivity_projections_shrink_with_dt():
    """Tangential boundary overshoots are clipped; the logged total must
    fall at least linearly in dt (measured: much faster)."""
    totals = []
    for dt_div in (200, 400):
        tot = 0.0
        for s in range(40):
            cfg = SimConfig(k_ratio=1.0, duration=1.0, dt=1.0 / dt_div, seed=s)
            tot += simulate(cfg, MIXED).clip_total
        totals.append(tot)
    assert totals[0] > 0.0  # the regime actually exercises the projection
    assert totals[1] <= 0.5 * totals[0]


def test_x_closure_along_runs():
    for seed in (1, 2):
        cfg = SimConfig(k_ratio=4.0, duration=2.0, seed=seed)
        rec = simulate(cfg, MIXED)
        assert np.max(np.abs(rec.states[:, 0, 3])) <= 1e-12
        assert np.max(np.abs(np.real(rec.states[:, 1, 2]))) <= 1e-12
        # sigma-style initial coherence keeps the closure too
        sigma_state = preset_state("sigma-boundary")
        rec = simulate(cfg, sigma_state)
        assert np.max(np.abs(rec.states[:, 0, 3])) <= 1e-12
        assert np.max(np.abs(np.real(rec.states[:, 1, 2]))) <= 1e-12


def test_record_grid_and_stride():
    cfg = SimConfig(k_ratio=1.0, duration=0.1, dt=1e-3, record_stride=7, seed=3)
    rec = simulate(cfg, MIXED)
    assert rec.times[0] == 0.0
    assert rec.times[-1] == pytest.approx(0.1, abs=1e-12)
    steps = np.round(rec.times / cfg.dt).astype(int)
    assert np.all(np.diff(steps[:-1]) == 7)
    assert rec.integrated_output[0] == 0.0
    # running mean of the record at full resolution matches a direct
    # reconstruction at the recorded points
    assert len(rec) == len(rec.times)


def test_simulate_records_integrated_output_consistently():
    cfg = SimConfig(k_ratio=1.0, duration=0.05, dt=1e-3, seed=6)
    rec = simulate(cfg, MIXED)
    # with stride 1 the running mean can be rebuilt from the current column
    isum = np.cumsum(rec.currents[:-1]) * cfg.dt
    expect = isum / rec.times[1:]
    assert np.max(np.abs(rec.integrated_output[1:] - expect)) < 1e-10


def test_parity_populations_martingale():
    """Measurement only: ensemble-average odd weight is constant in time."""
    cfg = SimConfig(k_ratio=1.0, duration=2.0, seed=77)
    n_runs = 10_000
    n_steps = cfg.n_steps
    sigma = math.sqrt(trajectory.C_NOISE * cfg.s0 / cfg.dt)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=77, spawn_key=(1,)))
    p = np.full((n_runs, 4), 0.25)
    checkpoints = {n_steps // 4, n_steps // 2, n_steps}
    for k in range(n_steps):
        xi = rng.normal(0.0, sigma, n_runs)
        p = trajectory.step_diagonal(p, xi, cfg.dt, cfg.s0)
        if k + 1 in checkpoints:
            p_odd = p[:, 2] + p[:, 3]
            se = p_odd.std(ddof=1) / math.sqrt(n_runs)
            assert abs(p_odd.mean() - 0.5) < 3.0 * se + 1e-12


def test_step_size_convergence():
    """Halving dt moves the ensemble-average Lambda curve by less than the
    Monte Carlo error."""
    n_runs = 600
    curves = []
    ses = []
    for divider, seed in ((200, 101), (400, 102)):
        cfg = SimConfig(k_ratio=1.0, duration=1.0, dt=1.0 / divider, seed=seed)
        checkpoints = {cfg.n_steps // 4, cfg.n_steps // 2, cfg.n_steps}
        _, _, grabbed = run_batch(cfg, MIXED, n_runs, cfg.n_steps, seed, checkpoints)
        lam = {k * cfg.dt: batch_lambda(v) for k, v in grabbed.items()}
        curves.append({t: v.mean() for t, v in lam.items()})
        ses.append({t: v.std(ddof=1) / math.sqrt(n_runs) for t, v in lam.items()})
    for t in curves[0]:
        se = math.hypot(ses[0][t], ses[1][t])
        assert abs(curves[0][t] - curves[1][t]) < 3.2 * se


def test_asymptotic_entanglement_recovery():
    """Weak coupling, long runs: the ensemble ends almost maximally
    entangled."""
    cfg = SimConfig(k_ratio=0.3, duration=20.0, seed=55)
    rho, _, _ = run_batch(cfg, MIXED, 200, cfg.n_steps, 55)
    lam = batch_lambda(rho)
    assert np.mean(np.maximum(lam, 0.0)) >= 0.9


def test_zeno_regime_fast_lambda_rise():
    """Strong coupling: Lambda leaves -1/2 for the border on the T_M
    timescale."""
    cfg = SimConfig(k_ratio=30.0, duration=0.4, seed=88)
    n_runs = 30
    checkpoints = set(range(1, cfg.n_steps + 1))
    rho = np.broadcast_to(MIXED.mat, (n_runs, 4, 4)).astype(np.complex128).copy()
    sigma = math.sqrt(trajectory.C_NOISE * cfg.s0 / cfg.dt)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=88, spawn_key=(0,)))
    first = np.full(n_runs, np.inf)
    for k in range(cfg.n_steps):
        xi = rng.normal(0.0, sigma, n_runs)
        rho = trajectory.step_batch(rho, xi, cfg.dt, cfg.s0, cfg.delta, cfg.gamma)
        rho = trajectory.hermitize(rho)
        rho /= np.real(np.einsum("nii->n", rho))[:, None, None]
        lam = batch_lambda(rho)
        newly = (lam > -0.05) & ~np.isfinite(first)
        first[newly] = (k + 1) * cfg.dt
    assert np.median(first) < cfg.t_q / 10.0


# ------------------------------------------------------------- validation


def test_simconfig_validation():
    with pytest.raises(ValueError, match="dt"):
        SimConfig(k_ratio=1.0, duration=1.0, dt=0.02)  # above min/100 cap
    with pytest.raises(ValueError, match="delta"):
        SimConfig(delta=-1.0, duration=1.0)
    with pytest.raises(ValueError, match="duration"):
        SimConfig(k_ratio=1.0, duration=0.0)
    with pytest.raises(ValueError, match="symmetric"):
        g = np.zeros((4, 4))
        g[0, 1] = 0.5
        SimConfig(k_ratio=1.0, duration=1.0, gamma=g)
    with pytest.raises(ValueError, match="diagonal"):
        SimConfig(k_ratio=1.0, duration=1.0, gamma=np.eye(4))
    with pytest.raises(ValueError, match="asymmetric"):
        SimConfig(k_ratio=1.0, duration=1.0, epsilon_asymmetry=0.1)
    with pytest.raises(ValueError, match="stride"):
        SimConfig(k_ratio=1.0, duration=1.0, record_stride=0)
    cfg = SimConfig(k_ratio=4.0, duration=1.0)
    assert cfg.t_q == pytest.approx(1.0)
    assert cfg.t_m == pytest.approx(0.25)
    assert cfg.s0 == cfg.t_m
    assert cfg.dt == pytest.approx(0.25 / 200.0)


def test_environment_gamma_decays_coherence():
    """A nonzero gamma_23 rate damps the 2-3 coherence of a Hamiltonian-off
    run at the prescribed exponential rate."""
    g = np.zeros((4, 4))
    g[1, 2] = g[2, 1] = 5.0
    cfg = SimConfig(k_ratio=1.0, duration=0.4, dt=1e-4, gamma=g)
    sigma_state = preset_state("sigma-boundary")
    rho = sigma_state.mat[None].astype(complex)
    for _ in range(cfg.n_steps):
        rho = trajectory.step_batch(rho, np.zeros(1), cfg.dt, cfg.s0, 0.0, cfg.gamma)
        rho = trajectory.hermitize(rho)
        rho /= np.real(np.einsum("nii->n", rho))[:, None, None]
    # rho_23 links the parity subspaces, so measurement dephasing
    # (I2-I3)^2/(8 S0) = 1/(2 S0) and the environment rate add
    rate = 1.0 / (2.0 * cfg.s0) + 5.0
    expect = 0.25 * math.exp(-rate * cfg.duration)
    assert rho[0, 1, 2].imag == pytest.approx(expect, rel=5e-3)


def test_ito_step_rejects_nonfinite_noise():
    cfg = SimConfig(k_ratio=1.0, duration=1.0)
    with pytest.raises(ValueError, match="finite"):
        ito_step(MIXED, cfg, math.inf)


def test_psd_violations_flags_bad_matrices():
    good = np.diag([0.5, 0.5, 0.0, 0.0]).astype(complex)[None]
    assert not trajectory.psd_violations(good, 1e-9).any()
    bad = np.diag([0.6, 0.5, -0.1, 0.0]).astype(complex)[None]
    assert trajectory.psd_violations(bad, 1e-9).all()
    edge = np.diag([0.5, 0.5, 0.0, -0.5e-9]).astype(complex)[None]
    assert not trajectory.psd_violations(edge, 1e-9).any()


def test_csv_serialization(tmp_path):
    cfg = SimConfig(k_ratio=1.0, duration=0.02, dt=1e-3, seed=4)
    rec = simulate(cfg, MIXED)
    path = tmp_path / "traj.csv"
    rec.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == (
        "t,rho_11,rho_22,rho_33,rho_44,re_rho_23,im_rho_23,"
        "re_rho_14,im_rho_14,current,integrated_output,lambda,concurrence"
    )
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (len(rec), 13)
    assert np.array_equal(data[:, 0], rec.times)  # %.17g is repr-exact
    assert np.array_equal(data[:, 9], rec.currents)
    rec.to_csv(tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_state_at_returns_valid_density_matrix():
    cfg = SimConfig(k_ratio=1.0, duration=0.05, dt=1e-3, seed=21)
    rec = simulate(cfg, MIXED)
    dm = rec.state_at(len(rec) - 1)
    assert isinstance(dm, DensityMatrix)
    assert dm.mat.trace().real == pytest.approx(1.0, abs=1e-12)
