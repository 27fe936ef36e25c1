import math

import mpmath
import numpy as np
import pytest
from scipy import stats

from mirrorlang.diagnostics import histogram_build, tv_distance
from mirrorlang.mirror_core import entropic_grad_h, entropic_grad_h_star
from mirrorlang.samplers import (
    CHAIN_BLOCK,
    ChainState,
    CirParams,
    DivergenceError,
    NoiseStream,
    StepSchedule,
    block_generator,
    cir_run,
    cir_smld_step,
    default_R0_sq,
    dual_mode,
    estimate_sigma_sq,
    mld_run,
    mld_step_dual,
    mld_step_primal,
    oracle_first_coordinate,
    run_ensemble,
    sample_dirichlet_exact,
    sgrld_sample,
    sgrld_step,
    smld_run,
    smld_step_size_bound,
)
from mirrorlang.targets import (
    DirichletModel,
    ObservationList,
    Potential,
    dirichlet_grad_W,
    dirichlet_stochastic_grad_W,
    synthetic_benchmark_model,
)

PINNED = DirichletModel([2, 1, 0], [1.0, 1.0, 1.0])
PINNED_OBS = ObservationList([0, 0, 1], 3)
FLAT = DirichletModel([0, 0, 0], [1.0, 1.0, 1.0])


# --- state, schedules, noise ------------------------------------------------


def test_chain_state_cache():
    s = ChainState(np.array([0.3, -1.2]))
    assert s.x_cache is None
    x = s.x
    assert s.x_cache is x
    np.testing.assert_allclose(s.x_cache, entropic_grad_h_star(s.y), atol=1e-12)


def test_step_schedule():
    assert StepSchedule.const(0.1).at(10**6) == 0.1
    seq = StepSchedule.sequence([0.1, 0.2])
    assert seq.at(1) == 0.2
    with pytest.raises(IndexError):
        seq.at(2)
    for bad in ([0.1, 0.0], [-1.0], [math.inf], []):
        with pytest.raises(ValueError):
            StepSchedule.sequence(bad)


def test_noise_stream_is_reproducible_and_chain_specific():
    a, b = NoiseStream(3, 5, 4), NoiseStream(3, 5, 4)
    for _ in range(5):
        np.testing.assert_array_equal(a.normal(), b.normal())
    c = NoiseStream(3, 6, 4)
    assert not np.array_equal(NoiseStream(3, 5, 4).normal(), c.normal())
    with pytest.raises(ValueError):
        NoiseStream(0, -1, 2)


# --- kernels ----------------------------------------------------------------


def test_mld_step_dual_examples():
    s = ChainState(np.array([0.4, -0.2]))
    assert np.array_equal(mld_step_dual(s, np.zeros(2), 0.1, np.zeros(2)).y, s.y)
    out = mld_step_dual(ChainState(np.zeros(2)), dirichlet_grad_W(PINNED, np.zeros(2)), 0.01,
                        np.zeros(2))
    np.testing.assert_allclose(out.y, [0.01, 0.0], atol=1e-16)
    assert out.step_count == 1
    with pytest.raises(ValueError):
        mld_step_dual(s, np.zeros(2), 0.0, np.zeros(2))
    with pytest.raises(DivergenceError):
        mld_step_dual(s, [np.nan, 0.0], 0.1, np.zeros(2))


def test_mld_step_primal_examples():
    rest = mld_step_primal(ChainState(np.zeros(2)), FLAT, 0.1, np.zeros(2))
    np.testing.assert_allclose(rest.y, [0.0, 0.0], atol=1e-16)
    out = mld_step_primal(ChainState(np.zeros(2)), PINNED, 0.01, np.zeros(2))
    np.testing.assert_allclose(out.y, [0.01, 0.0], atol=1e-15)


def test_dual_and_primal_steps_agree():
    rng = np.random.default_rng(0)
    for _ in range(100):
        d = int(rng.integers(1, 8))
        model = DirichletModel(rng.integers(0, 50, d + 1), rng.uniform(0.1, 3, d + 1))
        s = ChainState(rng.normal(scale=2, size=d))
        xi = rng.normal(size=d)
        beta = 10 ** rng.uniform(-4, -1)
        dual = mld_step_dual(s, dirichlet_grad_W(model, s.y), beta, xi)
        primal = mld_step_primal(ChainState(s.y.copy()), model, beta, xi)
        assert np.abs(dual.y - primal.y).max() < 1e-10


def test_primal_step_accepts_generic_potential():
    pot = Potential(value=lambda x: 0.0, grad=lambda x: np.zeros_like(x))
    out = mld_step_primal(ChainState(np.zeros(3)), pot, 0.1, np.zeros(3))
    np.testing.assert_allclose(out.y, 0.0, atol=1e-15)


# --- runs -------------------------------------------------------------------


def test_full_batch_smld_reproduces_mld():
    model = DirichletModel([5, 2, 0, 3], [0.5, 0.5, 0.5, 0.5])
    obs = ObservationList.from_counts(model.counts)
    s1, t1 = mld_run(model, 0.01, 50, NoiseStream(1, 0, 3), record=True)
    s2, t2 = smld_run(model, obs, len(obs), 0.01, 50, NoiseStream(1, 0, 3), record=True)
    np.testing.assert_array_equal(t1, t2)
    assert t2.shape == (51, 3)


def test_smld_single_step_matches_hand_computation():
    noise = NoiseStream(11, 0, 2)
    rng = block_generator(11, 0, 1)
    batch = rng.choice(3, size=1, replace=False)
    xi = NoiseStream(11, 0, 2).normal()
    grad = dirichlet_stochastic_grad_W(PINNED, PINNED_OBS, batch, np.zeros(2))
    assert {tuple(grad)} <= {(-2.0, 1.0), (1.0, -2.0)}
    state, _ = smld_run(PINNED, PINNED_OBS, 1, 0.01, 1, noise)
    np.testing.assert_allclose(state.y, -0.01 * grad + math.sqrt(0.02) * xi, atol=1e-15)


def test_runs_are_deterministic():
    obs = ObservationList.from_counts(PINNED.counts)
    a = smld_run(PINNED, obs, 2, 0.01, 30, NoiseStream(5, 2, 2), record=True)[1]
    b = smld_run(PINNED, obs, 2, 0.01, 30, NoiseStream(5, 2, 2), record=True)[1]
    assert a.tobytes() == b.tobytes()
    c = smld_run(PINNED, obs, 2, 0.01, 30, NoiseStream(6, 2, 2), record=True)[1]
    assert a.tobytes() != c.tobytes()


def test_smld_with_replacement_option():
    obs = ObservationList.from_counts(PINNED.counts)
    state, _ = smld_run(PINNED, obs, 3, 0.01, 20, NoiseStream(0, 0, 2), replace=True)
    assert np.all(np.isfinite(state.y))
    with pytest.raises(ValueError):
        smld_run(PINNED, obs, 4, 0.01, 1, NoiseStream(0, 0, 2))


def test_step_schedule_sequence_in_run():
    betas = [0.01, 0.02, 0.03]
    state, trace = mld_run(PINNED, betas, 3, NoiseStream(0, 0, 2), record=True)
    xi = NoiseStream(0, 0, 2)
    y = np.zeros(2)
    for b in betas:
        y = y - b * dirichlet_grad_W(PINNED, y) + math.sqrt(2 * b) * xi.normal()
    np.testing.assert_allclose(state.y, y, atol=1e-14)


# --- step-size bound --------------------------------------------------------


def test_step_size_bound_examples():
    assert smld_step_size_bound(1, 0.5, 1, 1, 0) == 1.0
    val = smld_step_size_bound(1e4, 10, 10021.1, 10, 0)
    oracle = min(1 / mpmath.sqrt(2 * mpmath.mpf(10) ** 4 * 10 * mpmath.mpf("100211")),
                 1 / mpmath.mpf("10021.1"))
    assert val == pytest.approx(float(oracle), rel=1e-12)
    assert val == pytest.approx(7.0636196e-6, rel=1e-7)


def test_step_size_bound_scaling_and_validation():
    a = smld_step_size_bound(1e4, 10, 10021.1, 10, 3.0)
    b = smld_step_size_bound(2e4, 10, 10021.1, 10, 3.0)
    assert a / b == pytest.approx(math.sqrt(2), rel=1e-12)
    assert smld_step_size_bound(1e-6, 1, 4.0, 1, 0) == 0.25
    for args in ((0, 1, 1, 1, 0), (1, 0, 1, 1, 0), (1, 1, -1, 1, 0), (1, 1, 1, 0, 0),
                 (1, 1, 1, 1, -1)):
        with pytest.raises(ValueError):
            smld_step_size_bound(*args)


def test_bound_helpers():
    m = synthetic_benchmark_model()
    assert np.linalg.norm(dirichlet_grad_W(m, dual_mode(m))) < 1e-9
    assert default_R0_sq(m) == pytest.approx(np.sum(dual_mode(m) ** 2) + 10 / m.L)
    assert default_R0_sq(m, dual_mode(m)) == pytest.approx(10 / m.L)
    obs = ObservationList.from_counts(PINNED.counts)
    # singleton batches at y = 0 deviate by (-1, 1) or (2, -2) from the mean
    sig = estimate_sigma_sq(PINNED, obs, 1, np.zeros(2), np.random.default_rng(0), 3000)
    assert sig == pytest.approx(4.0, rel=0.1)
    assert estimate_sigma_sq(PINNED, obs, 3, np.zeros(2), np.random.default_rng(0), 10) == 0.0


# --- SGRLD ------------------------------------------------------------------


def test_sgrld_fixed_points():
    c = PINNED.concentration
    np.testing.assert_array_equal(sgrld_step(PINNED, c, 0.1, np.zeros(3)), c)
    theta = np.array([0.5, 2.0, 7.0])
    np.testing.assert_array_equal(sgrld_step(PINNED, theta, 0.0, np.ones(3)), theta)
    np.testing.assert_allclose(sgrld_sample(theta), [0.5 / 9.5, 2 / 9.5])
    with pytest.raises(ValueError):
        sgrld_step(PINNED, theta, -0.1, np.zeros(3))


def test_sgrld_long_run_flat_model():
    rng = np.random.default_rng(1)
    theta = FLAT.concentration.copy()
    total = np.zeros(2)
    steps = 100_000
    xis = rng.standard_normal((steps, 3))
    for k in range(steps):
        theta = sgrld_step(FLAT, theta, 1e-3, xis[k])
        total += sgrld_sample(theta)
    np.testing.assert_allclose(total / steps, [1 / 3, 1 / 3], atol=0.02)


# --- exact oracle -----------------------------------------------------------


def test_exact_sampler_moments():
    rng = np.random.default_rng(2)
    x = sample_dirichlet_exact(DirichletModel([0, 0, 0, 0], [2.0] * 4), rng, 100_000)
    se = np.sqrt(0.25 * 0.75 / 9 / 100_000)
    np.testing.assert_allclose(x.mean(axis=0), 0.25, atol=5 * se)
    b = sample_dirichlet_exact(DirichletModel([1, 0], [1.0, 1.0]), rng, 100_000)[:, 0]
    assert abs(b.mean() - 2 / 3) < 3 * math.sqrt(1 / 18 / 100_000)
    assert sample_dirichlet_exact(PINNED, rng).shape == (2,)


def test_exact_sampler_marginal_ks():
    m = synthetic_benchmark_model()
    x1 = sample_dirichlet_exact(m, np.random.default_rng(3), 100_000)[:, 0]
    c = m.concentration
    ks = stats.kstest(x1, stats.beta(c[0], m.L - c[0]).cdf).statistic
    assert ks < 1.628 / math.sqrt(100_000)  # 1% critical value


def test_push_forward_round_trip_of_exact_draws():
    x = sample_dirichlet_exact(DirichletModel([3, 0, 1, 2], [0.5] * 4), np.random.default_rng(4),
                               2000)
    np.testing.assert_allclose(entropic_grad_h_star(entropic_grad_h(x)), x, rtol=0, atol=1e-12)


# --- CIR --------------------------------------------------------------------


def test_cir_params():
    p = CirParams(2, 1, 1)
    assert p.stationary_mean == 1 and p.stationary_var == 0.25
    with pytest.raises(ValueError):
        CirParams(1, 1, 2)
    with pytest.raises(ValueError):
        CirParams(1, 1, 0)


def test_cir_step():
    p = CirParams(2, 1, 1)
    assert cir_smld_step(p, 1.0, 1e-3, 0.0) == 1.0
    assert cir_smld_step(p, 0.01, 0.1, -5.0) == pytest.approx(
        abs(0.01 + 0.1 * 2 * 0.99 + math.sqrt(0.001) * -5.0))
    with pytest.raises(ValueError):
        cir_smld_step(p, 0.0, 1e-3, 0.0)


def test_cir_run_matches_scalar_kernel():
    p = CirParams(2, 1, 1)
    rng = block_generator(0, 0, 3)
    xis = block_generator(0, 0, 3).standard_normal(500)
    mean, var = cir_run(p, 1e-2, 500, rng)
    x, path = 1.0, []
    for xi in xis:
        x = cir_smld_step(p, x, 1e-2, xi)
        path.append(x)
    assert mean == pytest.approx(np.mean(path), rel=1e-12)
    assert var == pytest.approx(np.var(path), rel=1e-9)


def test_cir_stationary_moments():
    p = CirParams(2, 1, 1)
    mean, var = cir_run(p, 1e-2, 400_000, np.random.default_rng(5))
    assert abs(mean - 1) < 0.1 and abs(var - 0.25) < 0.25 * 0.25


# --- ensembles --------------------------------------------------------------


def test_noise_stream_matches_ensemble_row():
    model = DirichletModel([4, 1, 2], [0.5, 0.5, 0.5])
    chain = CHAIN_BLOCK + 7
    res = run_ensemble(model, "mld", 0.05, 20, chain + 1, 9, [5, 20])
    state, trace = mld_run(model, 0.05, 20, NoiseStream(9, chain, 2), record=True)
    xs = entropic_grad_h_star(trace)[:, 0]
    assert res.samples[0, chain] == pytest.approx(xs[5], abs=1e-14)
    assert res.samples[1, chain] == pytest.approx(xs[20], abs=1e-14)


def test_ensemble_prefix_does_not_depend_on_trial_count():
    model = DirichletModel([4, 1, 2], [0.5, 0.5, 0.5])
    a = run_ensemble(model, "smld", 0.02, 10, 100, 1, [10], batch_size=3)
    b = run_ensemble(model, "smld", 0.02, 10, 2000, 1, [10], batch_size=3)
    np.testing.assert_array_equal(a.samples, b.samples[:, :100])


@pytest.mark.parametrize("sampler", ["mld", "smld", "sgrld"])
def test_parallel_ensemble_is_identical(sampler):
    model = DirichletModel([40, 5, 0, 3], [0.5] * 4)
    kw = dict(batch_size=10) if sampler == "smld" else {}
    a = run_ensemble(model, sampler, 0.01, 15, 3 * CHAIN_BLOCK, 4, [1, 15], workers=1, **kw)
    b = run_ensemble(model, sampler, 0.01, 15, 3 * CHAIN_BLOCK, 4, [1, 15], workers=2, **kw)
    assert a.samples.tobytes() == b.samples.tobytes()


def test_ensemble_full_batch_smld_equals_mld():
    model = DirichletModel([4, 1, 2], [0.5, 0.5, 0.5])
    a = run_ensemble(model, "mld", 0.02, 10, 500, 3, [10])
    b = run_ensemble(model, "smld", 0.02, 10, 500, 3, [10], batch_size=model.N)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_ensemble_divergence_flag():
    model = DirichletModel([4, 1, 2], [0.5, 0.5, 0.5])
    # the dual drift is bounded by N + Gamma, so only an overflowing step diverges
    res = run_ensemble(model, "mld", 1e308, 3, 10, 0, [3])
    assert res.diverged


def test_ensemble_validation():
    with pytest.raises(ValueError):
        run_ensemble(PINNED, "hmc", 0.1, 1, 1, 0, [1])
    with pytest.raises(ValueError):
        run_ensemble(PINNED, "smld", 0.1, 1, 1, 0, [1])
    with pytest.raises(ValueError):
        run_ensemble(PINNED, "mld", 0.1, 5, 1, 0, [6])


def test_oracle_start_stays_at_oracle_level():
    m = DirichletModel([30, 5, 1], [0.5, 0.5, 0.5])
    c = m.concentration
    edges = np.linspace(0, 1, 31)
    oracle = histogram_build(oracle_first_coordinate(m, 20_000, 0, 0), edges=edges)
    null = tv_distance(oracle, histogram_build(oracle_first_coordinate(m, 20_000, 0, 1),
                                               edges=edges))
    res = run_ensemble(m, "mld", 1e-3, 5, 20_000, 0, [5], init="oracle")
    tv = tv_distance(oracle, histogram_build(res.samples[0], edges=edges))
    assert tv < 3 * null + 0.01
    assert stats.kstest(res.samples[0], stats.beta(c[0], m.L - c[0]).cdf).pvalue > 1e-3


def test_mld_stationarity_flat_posterior():
    # 128 chains x 800 steps after burn-in, stored every step: 10^5 states
    res = run_ensemble(FLAT, "mld", 5e-3, 1000, 128, 2, range(201, 1001))
    x = res.samples.ravel()
    assert abs(x.mean() - 1 / 3) < 0.02
    oracle = histogram_build(oracle_first_coordinate(FLAT, x.size, 2), bins=30)
    assert tv_distance(histogram_build(x, bins=30), oracle) < 0.05
    y_state, _ = mld_run(FLAT, 5e-3, 100_000, NoiseStream(2, 0, 2))
    assert np.all(np.isfinite(y_state.y))

