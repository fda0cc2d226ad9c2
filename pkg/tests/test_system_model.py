import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdswipt.system_model import (
    SystemConfig,
    assign_pilots,
    channel_statistics,
    compute_large_scale,
    draw_channel_batch,
    draw_channels,
    estimate_batch,
    generate_geometry,
    los_products,
    make_scenario,
    mmse_coefficients,
    mmse_estimate,
    steering_ula,
    steering_upa,
)


# ---------------------------------------------------------------- config


def test_default_config_is_valid():
    cfg = SystemConfig()
    assert cfg.tau == cfg.K + cfg.J - cfg.prf_i - cfg.prf_e
    assert cfg.L > cfg.K


@pytest.mark.parametrize(
    "changes",
    [dict(L=3, K=3), dict(N=5), dict(prf_e=4), dict(xi=0.0), dict(gamma_min=-1.0), dict(tau_c=4)],
)
def test_config_rejects_invalid(changes):
    with pytest.raises(ValueError):
        SystemConfig(**changes)


def test_config_json_roundtrip(tmp_path):
    cfg = SystemConfig(M=5, gamma_min=[1e-6, 2e-6, 0.0, 0.0], se_min=2.0)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = SystemConfig.from_json(path)
    assert back.to_dict() == cfg.to_dict()


def test_threshold_vectors_broadcast():
    cfg = SystemConfig(se_min=3.0)
    assert np.allclose(cfg.sinr_min_vec, 7.0)
    assert cfg.gamma_min_vec.shape == (cfg.J,)


# ---------------------------------------------------------------- geometry


def test_geometry_deterministic():
    cfg = SystemConfig()
    g1, g2 = generate_geometry(cfg, 7), generate_geometry(cfg, 7)
    assert np.array_equal(g1.ap_xy, g2.ap_xy) and np.array_equal(g1.er_azi, g2.er_azi)


def test_heights():
    geo = generate_geometry(SystemConfig(), 0)
    assert (geo.h_ap, geo.h_ris, geo.h_rx) == (15.0, 15.0, 1.65)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_wraparound_bounds(seed):
    cfg = SystemConfig()
    geo = generate_geometry(cfg, seed)
    assert geo.dist_ap_ir.max() <= cfg.area_side / np.sqrt(2) + 1e-9
    for xy in (geo.ap_xy, geo.ir_xy, geo.er_xy, geo.ris_xy[None]):
        assert np.all((xy >= 0) & (xy <= cfg.area_side))
    for ang in (geo.ap_aoa_azi, geo.ris_aod_azi, geo.er_azi, geo.er_ele):
        assert np.all(np.abs(ang) <= np.pi)


def test_state_vector_dimension_and_range():
    cfg = SystemConfig()
    s = generate_geometry(cfg, 1).state_vector()
    assert s.shape == (2 * (cfg.M + 1) + 2 * (cfg.K + cfg.J),)
    assert s.min() >= 0 and s.max() <= 1


# ---------------------------------------------------------------- large scale


def test_blockage_extremes():
    geo = generate_geometry(SystemConfig(), 2)
    assert np.all(compute_large_scale(geo, SystemConfig(blockage_prob=0.0), 2).beta_E > 0)
    assert np.all(compute_large_scale(geo, SystemConfig(blockage_prob=1.0), 2).beta_E == 0)


def test_zeta_bar_identity():
    cfg = SystemConfig()
    ls = compute_large_scale(generate_geometry(cfg, 4), cfg, 4)
    m, j = 3, 1
    assert ls.zeta_bar[m, j] == pytest.approx(ls.zeta[m] * ls.alpha_ris[j] / (1 + cfg.kappa), rel=1e-14)
    assert min(ls.beta_I.min(), ls.zeta.min(), ls.alpha_ris.min()) > 0


# ---------------------------------------------------------------- steering vectors


def test_steering_ula_examples():
    assert np.allclose(steering_ula(1, 0.3, 0.2, 0.05, 0.1), [1])
    assert np.allclose(steering_ula(6, np.pi / 2, 0.4, 0.05, 0.1), np.ones(6))
    assert np.allclose(steering_ula(2, 0.0, 0.0, 0.05, 0.1), [1, -1])


def test_steering_upa_examples():
    assert np.allclose(steering_upa(1, 0.3, 0.2, 0.05, 0.05, 0.1), [1])
    assert np.allclose(steering_upa(9, 0.0, 0.0, 0.05, 0.05, 0.1), np.ones(9))
    assert np.allclose(steering_upa(4, np.pi / 2, 0.0, 0.05, 0.05, 0.1), [1, -1, 1, -1])
    with pytest.raises(ValueError):
        steering_upa(5, 0, 0, 0.05, 0.05, 0.1)


@given(st.floats(-np.pi, np.pi), st.floats(-np.pi / 2, np.pi / 2))
def test_steering_unit_modulus(azi, ele):
    assert np.allclose(np.abs(steering_ula(8, azi, ele, 0.05, 0.1)), 1.0)
    assert np.allclose(np.abs(steering_upa(16, azi, ele, 0.05, 0.05, 0.1)), 1.0)


# ---------------------------------------------------------------- pilots


def test_pilots_full_sharing():
    plan = assign_pilots(SystemConfig(K=3, J=4, prf_i=0, prf_e=3))
    assert plan.tau == 4 and plan.tau_J == 1
    assert np.all(plan.pilot_E == 3)


def test_pilots_orthogonal():
    cfg = SystemConfig(K=3, J=4, prf_i=0, prf_e=0)
    plan = assign_pilots(cfg)
    assert plan.tau == 7
    assert all(len(plan.copilot_E(j)) == 1 for j in range(4))
    assert all(len(plan.copilot_I(k)) == 1 for k in range(3))


def test_pilots_one_shared():
    plan = assign_pilots(SystemConfig(K=3, J=4, prf_e=1))
    assert plan.tau == 6 and plan.tau_J == 3
    sizes = sorted(len(plan.copilot_E(j)) for j in range(4))
    assert sizes == [1, 1, 2, 2]
    assert len(set(plan.pilot_I) & set(plan.pilot_E)) == 0


@given(st.integers(1, 5), st.integers(1, 5), st.data())
def test_pilot_plan_invariants(K, J, data):
    prf_e = data.draw(st.integers(0, J - 1))
    prf_i = data.draw(st.integers(0, min(K - 1, J - prf_e)))  # keeps K <= tau
    cfg = SystemConfig(K=K, J=J, L=K + 2, prf_i=prf_i, prf_e=prf_e)
    plan = assign_pilots(cfg)
    assert plan.tau_K + plan.tau_J == cfg.tau
    assert not set(plan.pilot_I) & set(plan.pilot_E)
    for j in range(J):
        assert j in plan.copilot_E(j)
        for jp in plan.copilot_E(j):
            assert set(plan.copilot_E(jp)) == set(plan.copilot_E(j))


# ---------------------------------------------------------------- channels and estimates


def test_mmse_gamma_example():
    # one receiver, no contamination, tau*rho_u = 10, beta = 1, unit noise
    _, gamma = mmse_coefficients(np.array([[1.0]]), np.array([0]), 10.0)
    assert gamma[0, 0] == pytest.approx(10 / 11, rel=1e-14)


def test_mmse_high_snr_limit():
    _, gamma = mmse_coefficients(np.array([[0.7]]), np.array([0]), 1e14)
    assert gamma[0, 0] == pytest.approx(0.7, rel=1e-12)


def test_estimate_variance_bounds(small_setup):
    cfg, scen, _, stats = small_setup
    assert np.all(stats.gamma_I <= stats.beta_I) and np.all(stats.gamma_I >= 0)
    assert np.all(stats.gamma_E <= stats.s_E) and np.all(stats.gamma_E >= 0)
    for j in range(cfg.J):
        for jp in stats.plan.copilot_E(j):
            assert np.allclose(stats.gamma_E[:, jp], stats.upsilon[:, j, jp] ** 2 * stats.gamma_E[:, j])


def test_ricean_limit():
    cfg = SystemConfig(M=2, L=4, K=1, J=1, N=4, prf_e=0, kappa=1e9)
    scen = make_scenario(cfg, 0)
    real = draw_channels(scen.ls, scen.geo, np.eye(4), cfg, 0)
    target = np.sqrt(scen.ls.zeta)[:, None, None] * real.F_bar
    assert np.max(np.abs(real.F - target)) <= 1e-3 * np.max(np.abs(target))


def test_identity_theta_no_direct_link():
    cfg = SystemConfig(M=2, L=4, K=1, J=2, N=4, prf_e=1, blockage_prob=1.0)
    scen = make_scenario(cfg, 1)
    real = draw_channels(scen.ls, scen.geo, np.eye(4), cfg, 1)
    assert np.array_equal(real.g_E, np.einsum("mln,jn->mjl", real.F, real.z))
    assert np.allclose(np.sum(np.abs(real.z) ** 2, axis=1), cfg.N * scen.ls.alpha_ris)


def test_seeded_realizations_identical(small_setup):
    cfg, scen, theta, _ = small_setup
    r1 = draw_channels(scen.ls, scen.geo, theta, cfg, 9)
    r2 = draw_channels(scen.ls, scen.geo, theta, cfg, 9)
    assert np.array_equal(r1.g_E, r2.g_E) and np.array_equal(r1.g_I, r2.g_I)
    e1 = mmse_estimate(r1, scen.plan, scen.ls, cfg, 3)
    e2 = mmse_estimate(r2, scen.plan, scen.ls, cfg, 3)
    assert np.array_equal(e1.ghat_E, e2.ghat_E)


def _batch(cfg, scen, theta, n, seed):
    F_bar, z, _ = los_products(scen.geo, scen.ls, theta.theta, cfg)
    rng = np.random.default_rng(seed)
    real = draw_channel_batch(rng, scen.ls, F_bar, z, theta.theta, cfg, n)
    return real, estimate_batch(rng, real, scen.plan, scen.ls, cfg)


def test_copilot_estimates_collinear(small_setup):
    cfg, scen, theta, stats = small_setup
    real, est = _batch(cfg, scen, theta, 4, 0)
    j, jp = [(j, jp) for j in range(cfg.J) for jp in stats.plan.copilot_E(j) if jp != j][0]
    x = est.ghat_E[:, :, j] - est.mean_E[:, j]
    y = est.ghat_E[:, :, jp] - est.mean_E[:, jp]
    ratio = est.c_E[:, jp] / est.c_E[:, j]
    assert np.allclose(y, ratio[None, :, None] * x, rtol=1e-10, atol=0)


def test_estimate_mean_and_orthogonality(small_setup):
    cfg, scen, theta, stats = small_setup
    n = 20000
    real, est = _batch(cfg, scen, theta, n, 1)
    m, j = 2, 0
    sample = est.ghat_E[:, m, j].mean(axis=0)
    se = np.sqrt(stats.gamma_E[m, j] / n)
    assert np.all(np.abs(sample - stats.los_mean[m, j]) <= 3 * se * np.sqrt(2) + 1e-30)
    # estimation error is uncorrelated with the estimate
    err = real.g_I[:, m, 0] - est.ghat_I[:, m, 0]
    corr = np.abs(np.mean(np.sum(err.conj() * est.ghat_I[:, m, 0], axis=-1)))
    assert corr <= 5 * cfg.L * np.sqrt(stats.gamma_I[m, 0] * (stats.beta_I[m, 0] - stats.gamma_I[m, 0]) / n)
