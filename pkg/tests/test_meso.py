import time

import numpy as np
import pytest

from crowdevac.kernels import draw_batches_with
from crowdevac.meso import (DensityGrid, MfmcConfig, ParticleEnsemble,
                            hat_alignment, hat_repulsion, kde_density,
                            mfmc_step, read_density_grid, subsample,
                            topological_radius, write_density_grid)
from crowdevac.micro import euler_step
from crowdevac.state import CrowdState, LeaderState

from helpers import (env_with_exit, equivalence_config, leaders_only,
                     matching_ensemble, open_env, params_for, random_crowd)

NO_LEADERS = CrowdState([], [])


def _plain_ensemble(pos, vel=None, density=1.0):
    pos = np.asarray(pos, dtype=float).reshape(-1, 2)
    vel = np.zeros_like(pos) if vel is None else np.asarray(vel, dtype=float)
    return ParticleEnsemble(pos, vel, number_density=density)


# ---- subsample -------------------------------------------------------------


def test_subsample_full_is_permutation():
    rng = np.random.default_rng(0)
    out = subsample(rng, 7, 7)
    assert sorted(out.tolist()) == list(range(7))


def test_subsample_single():
    rng = np.random.default_rng(0)
    assert subsample(rng, 1, 1).tolist() == [0]


def test_subsample_deterministic():
    a = subsample(np.random.default_rng(123), 10, 5)
    b = subsample(np.random.default_rng(123), 10, 5)
    np.testing.assert_array_equal(a, b)
    assert len(set(a.tolist())) == 5


def test_subsample_rejects_oversized():
    with pytest.raises(ValueError):
        subsample(np.random.default_rng(0), 3, 4)


def test_subsample_uniform_over_subsets():
    # every index should appear in a batch with frequency M/n
    rng = np.random.default_rng(9)
    counts = np.zeros(6)
    trials = 4000
    for _ in range(trials):
        counts[subsample(rng, 6, 2)] += 1
    freq = counts / trials
    np.testing.assert_allclose(freq, 2 / 6, atol=0.03)


# ---- hat quantities --------------------------------------------------------


def test_hat_repulsion_empty_neighborhood():
    params = params_for(2, 0)
    ens = _plain_ensemble([(0.0, 0.0), (3.0, 0.0)])
    r_f, x_f, r_l, y_l = hat_repulsion(ens, NO_LEADERS, 0, [1], params)
    assert r_f == 0.0 and r_l == 0.0
    np.testing.assert_array_equal(x_f, ens.pos[0])


def test_hat_repulsion_single_neighbor():
    params = params_for(2, 0, c_r_f=2.0, gamma=1.0, r=1.0)
    ens = _plain_ensemble([(0.0, 0.0), (0.5, 0.0)])
    r_f, x_f, r_l, y_l = hat_repulsion(ens, NO_LEADERS, 0, [1], params)
    assert r_f == pytest.approx(2.4261226388505337, rel=1e-9)
    np.testing.assert_allclose(x_f, [0.5, 0.0], rtol=1e-9)
    assert r_l == 0.0


def test_hat_alignment_zero_radius():
    params = params_for(2, 0)
    ens = _plain_ensemble([(0.0, 0.0), (0.5, 0.0)], [(0, 0), (1, 0)])
    a_f, v_f, a_l, w_l = hat_alignment(ens, NO_LEADERS, 0, [1], params, 0.0)
    assert a_f == 0.0 and a_l == 0.0
    np.testing.assert_array_equal(v_f, [0.0, 0.0])


def test_hat_alignment_plain_average():
    params = params_for(2, 0, c_al_f=3.0)
    ens = _plain_ensemble([(0.0, 0.0), (0.2, 0.0), (0.0, 0.2)],
                          [(0, 0), (1, 0), (0, 1)])
    a_f, v_f, a_l, w_l = hat_alignment(ens, NO_LEADERS, 0, [1, 2], params, 1.0)
    assert a_f == pytest.approx(3.0, rel=1e-9)
    np.testing.assert_allclose(v_f, [0.5, 0.5], rtol=1e-9)


# ---- topological radius ----------------------------------------------------


def test_topological_radius_single_particle_mass():
    ens = _plain_ensemble([(0.0, 0.0), (2.0, 0.0), (5.0, 0.0)])
    w = ens.weight
    r = topological_radius(ens, NO_LEADERS, (1.0, 0.0), [0, 1, 2], w)
    assert r == pytest.approx(1.0)


def test_topological_radius_cumulative():
    ens = _plain_ensemble([(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)])
    r = topological_radius(ens, NO_LEADERS, (0.0, 0.0), [0, 1, 2], 0.6)
    assert r == pytest.approx(2.0)


def test_topological_radius_full_mass():
    ens = _plain_ensemble([(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)])
    r = topological_radius(ens, NO_LEADERS, (0.0, 0.0), [0, 1, 2], 1.0)
    assert r == pytest.approx(3.0)


def test_topological_radius_monotone_in_target():
    rng = np.random.default_rng(4)
    ens = _plain_ensemble(rng.uniform(0, 3, (40, 2)))
    batch = np.arange(40)
    targets = np.linspace(0.05, 1.0, 12)
    radii = [topological_radius(ens, NO_LEADERS, (1.5, 1.5), batch, t)
             for t in targets]
    assert all(r2 >= r1 for r1, r2 in zip(radii, radii[1:]))


def test_topological_radius_rejects_unreachable_target():
    ens = _plain_ensemble([(1.0, 0.0), (2.0, 0.0)])
    with pytest.raises(ValueError):
        topological_radius(ens, NO_LEADERS, (0.0, 0.0), [0, 1], 2.0)


def test_topological_radius_counts_leaders():
    ens = _plain_ensemble([(1.0, 0.0), (5.0, 0.0)], density=0.5)
    leaders = CrowdState([], [LeaderState((0.5, 0.0), (0.0, 0.0), 0.5)])
    # leader at 0.5 carries half the mass: target 0.5 reached at the leader
    r = topological_radius(ens, leaders, (0.0, 0.0), [0, 1], 0.5)
    assert r == pytest.approx(0.5)


# ---- mfmc step -------------------------------------------------------------


@pytest.mark.parametrize("n_samples,n_lead", [(10, 0), (10, 3), (50, 0), (50, 4)])
def test_full_batch_matches_micro_step(n_samples, n_lead):
    params = params_for(n_samples, n_lead, n_top=5)
    env = env_with_exit((2.0, 2.0), 1.5, 0.4)
    for seed in range(5):
        rng = np.random.default_rng(seed)
        state = random_crowd(rng, n_samples, n_lead, params)
        controls = rng.normal(0.0, 1.0, (n_lead, 2))
        micro_next = euler_step(params, env, state, controls)

        ens = matching_ensemble(state, params)
        ens2, lead2 = mfmc_step(ens, leaders_only(state),
                                equivalence_config(n_samples, params),
                                params, env, np.random.default_rng(seed + 999),
                                controls)
        assert np.abs(ens2.pos - micro_next.fpos).max() < 1e-12
        assert np.abs(ens2.vel - micro_next.fvel).max() < 1e-12
        if n_lead:
            assert np.abs(lead2.lpos - micro_next.lpos).max() < 1e-12
            assert np.abs(lead2.lvel - micro_next.lvel).max() < 1e-12


def test_mfmc_single_sample_ballistic():
    params = params_for(1, 0, dt=0.1)
    env = open_env()
    v = np.array([params.s, 0.0])
    ens = ParticleEnsemble([(0.0, 0.0)], [v], number_density=1.0)
    cfg = MfmcConfig(batch_size=1, rho_top=1.0)
    ens2, _ = mfmc_step(ens, NO_LEADERS, cfg, params, env,
                        np.random.default_rng(0))
    np.testing.assert_allclose(ens2.vel[0], v, atol=1e-14)
    np.testing.assert_allclose(ens2.pos[0], 0.1 * v, rtol=1e-12)


def test_mfmc_mass_bookkeeping():
    params = params_for(60, 2)
    env = env_with_exit((2.0, 2.0), 1.5, 0.8)
    rng = np.random.default_rng(1)
    state = random_crowd(rng, 60, 2, params)
    ens = matching_ensemble(state, params)
    lead = leaders_only(state)
    cfg = MfmcConfig(batch_size=12, rho_top=0.1)
    total0 = ens.number_density + float(lead.lmass.sum())
    for step in range(40):
        ens, lead = mfmc_step(ens, lead, cfg, params, env,
                              np.random.default_rng(step))
        total = (ens.active_mass() + ens.evacuated_mass_by_exit(1).sum()
                 + lead.lmass.sum())
        assert abs(total - total0) < 1e-12


def test_mfmc_cost_scales_with_batch_size():
    # doubling the batch roughly doubles the per-step work
    params = params_for(2000, 0)
    rng = np.random.default_rng(3)
    pos = rng.uniform(0, 20, (2000, 2))
    vel = rng.normal(0, 0.4, (2000, 2))
    env = open_env()

    def best_time(m):
        cfg = MfmcConfig(batch_size=m, rho_top=0.05)
        ens = ParticleEnsemble(pos, vel, number_density=1.0)
        best = np.inf
        for rep in range(3):
            t0 = time.perf_counter()
            mfmc_step(ens, NO_LEADERS, cfg, params, env,
                      np.random.default_rng(rep))
            best = min(best, time.perf_counter() - t0)
        return best

    best_time(50)  # warm-up
    ratio = best_time(100) / best_time(50)
    assert 1.5 <= ratio <= 2.5, f"scaling ratio {ratio:.2f}"


def test_batch_estimator_unbiased_for_repulsion():
    # frozen configuration: the batch-averaged repulsion force matches the
    # full sum within 3 standard errors, componentwise
    params = params_for(200, 0)
    rng = np.random.default_rng(12)
    ens = _plain_ensemble(rng.uniform(0, 3, (200, 2)))
    r_full, x_full, _, _ = hat_repulsion(ens, NO_LEADERS, 0, np.arange(200), params)
    force_full = r_full * (np.asarray(x_full) - ens.pos[0])

    m = 20
    draws = np.zeros((10_000, 2))
    for t in range(10_000):
        batch = subsample(rng, 200, m)
        r_f, x_f, _, _ = hat_repulsion(ens, NO_LEADERS, 0, batch, params)
        draws[t] = r_f * (np.asarray(x_f) - ens.pos[0])
    mean = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(mean - force_full) <= 3 * se)


def test_draw_batches_shape_and_distinctness():
    rng = np.random.default_rng(0)
    act = np.array([2, 3, 5, 7, 11, 13])
    b = draw_batches_with(rng, act, 4)
    assert b.shape == (6, 4)
    for row in b:
        assert len(set(row.tolist())) == 4
        assert set(row.tolist()) <= set(act.tolist())


# ---- density reconstruction ------------------------------------------------


def test_kde_peak_value():
    ens = _plain_ensemble([(1.0, 2.0)])
    grid = DensityGrid((1.0, 2.0), (0.5, 0.5), 3, 3)
    out = kde_density(ens, grid, 0.4)
    assert out[0, 0] == pytest.approx(0.9947183943243458, rel=1e-9)


def test_kde_empty_ensemble():
    ens = _plain_ensemble([(0.0, 0.0)])
    ens.evacuated_at[0] = 0.0
    grid = DensityGrid((0.0, 0.0), (0.5, 0.5), 4, 4)
    np.testing.assert_array_equal(kde_density(ens, grid, 0.4), np.zeros((4, 4)))


def test_kde_nonnegative_and_integrates_to_mass():
    rng = np.random.default_rng(8)
    ens = _plain_ensemble(rng.uniform(4, 6, (80, 2)), density=0.7)
    h = 0.4
    grid = DensityGrid((0.0, 0.0), (0.1, 0.1), 101, 101)
    out = kde_density(ens, grid, h)
    assert (out >= 0).all()
    integral = out.sum() * 0.1 * 0.1
    assert integral == pytest.approx(0.7, rel=0.02)


def test_density_grid_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    grid = DensityGrid((1.0, -2.0), (0.5, 0.25), 6, 4)
    values = rng.random((4, 6))
    path = tmp_path / "density_0.grid"
    write_density_grid(path, grid, values)
    grid2, values2 = read_density_grid(path)
    assert grid2 == grid
    np.testing.assert_allclose(values2, values, rtol=1e-15)
