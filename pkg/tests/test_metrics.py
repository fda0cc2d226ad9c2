import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdswipt.metrics import (
    energy_breakdown,
    evaluate,
    harvested_q_closed_form,
    harvested_q_shared_pilot,
    logistic,
    nleh,
    nleh_inverse,
    rf_requirement,
    se_from_sinr,
    sinr_closed_form,
)
from bdswipt.oracle import (
    er_moment_check,
    monte_carlo_oracle,
    moment_values,
    projector_moment_closed,
    projector_moment_sampled,
)
from bdswipt.precoding import Allocation, RankDeficiencyError, build_precoders
from bdswipt.scattering import random_scattering
from bdswipt.system_model import (
    ChannelStats,
    PilotPlan,
    SystemConfig,
    channel_statistics,
    draw_channel_batch,
    estimate_batch,
    los_products,
    make_scenario,
)

from conftest import rel


def _random_alloc(cfg, seed, scale=0.9):
    rng = np.random.default_rng(seed)
    a = (rng.uniform(size=cfg.M) < 0.5).astype(float)
    a[0], a[1] = 1.0, 0.0
    return Allocation(a, rng.dirichlet(np.ones(cfg.K), cfg.M) * scale, rng.dirichlet(np.ones(cfg.J), cfg.M) * scale)


def _estimates(cfg, scen, theta, n, seed):
    F_bar, z, _ = los_products(scen.geo, scen.ls, theta.theta, cfg)
    rng = np.random.default_rng(seed)
    real = draw_channel_batch(rng, scen.ls, F_bar, z, theta.theta, cfg, n)
    return real, estimate_batch(rng, real, scen.plan, scen.ls, cfg)


# ---------------------------------------------------------------- allocation


def test_allocation_power_budget():
    al = Allocation.equal(np.array([1.0, 0.0, 1.0]), 3, 2)
    assert np.allclose(al.load, 1.0) and al.power_ok()
    bad = Allocation(np.ones(2), np.full((2, 2), 0.6), np.zeros((2, 1)))
    assert not bad.power_ok()


# ---------------------------------------------------------------- precoders


def test_precoder_projector_and_collapse(small_setup):
    cfg, scen, theta, stats = small_setup
    _, est = _estimates(cfg, scen, theta, 3, 0)
    pre = build_precoders(est, cfg)
    B = pre.B
    r = cfg.L - scen.plan.tau_K
    assert np.max(np.abs(B @ B - B)) <= 1e-10
    assert np.max(np.abs(B - np.swapaxes(B.conj(), -1, -2))) <= 1e-10
    assert np.allclose(np.trace(B, axis1=-2, axis2=-1).real, r, atol=1e-10)
    inner = np.einsum("rmkl,rmql->rmkq", est.ghat_I.conj(), pre.w_pzf)
    same = scen.plan.same_I
    expect = np.where(same[None], np.sqrt(r * est.gamma_I)[:, :, None], 0.0)
    assert np.allclose(inner, expect[None], atol=1e-8 * np.sqrt(est.gamma_I.max()))
    leak = np.einsum("rmkl,rmjl->rmkj", est.ghat_I.conj(), pre.w_pmrt)
    assert np.max(np.abs(leak)) <= 1e-10 * np.max(np.abs(pre.w_pmrt)) * np.max(np.abs(est.ghat_I)) * cfg.L


def test_precoder_normalization(small_setup):
    cfg, scen, theta, _ = small_setup
    _, est = _estimates(cfg, scen, theta, 10000, 1)
    pre = build_precoders(est, cfg)
    assert np.all(rel(np.mean(np.sum(np.abs(pre.w_pmrt) ** 2, axis=-1), axis=0), 1.0) <= 0.02)
    assert np.all(rel(np.mean(np.sum(np.abs(pre.w_pzf) ** 2, axis=-1), axis=0), 1.0) <= 0.05)


def test_rank_deficiency_raises(small_setup):
    cfg, scen, theta, _ = small_setup
    _, est = _estimates(cfg, scen, theta, 1, 2)
    est.ghat_I[..., 1, :] = est.ghat_I[..., 0, :]
    with pytest.raises(RankDeficiencyError):
        build_precoders(est, cfg)


# ---------------------------------------------------------------- SINR and SE


def _single_ap_stats(L=9, gamma=0.5, beta=1.0):
    plan = PilotPlan(np.array([0]), np.array([1]), 1, 1)
    z = np.zeros((1, 1))
    return ChannelStats(L=L, N=1, tau=2, tau_K=1, tau_rho_u=1.0, beta_I=np.array([[beta]]), beta_E=z, zeta_bar=z,
                        kappa=0.0, g_bar=np.zeros((1, 1, L), complex), c_I=z + 1, gamma_I=np.array([[gamma]]),
                        c_E=z, gamma_E=z, upsilon=np.ones((1, 1, 1)), ris_cov=np.zeros((1, 1, 1), complex), plan=plan)


def test_sinr_single_ap_value():
    cfg = SystemConfig(M=1, L=9, K=1, J=1, N=1, prf_e=0, rho_d=1.0)
    al = Allocation(np.ones(1), np.ones((1, 1)), np.zeros((1, 1)))
    assert sinr_closed_form(_single_ap_stats(), al, cfg)[0] == pytest.approx(4 / 1.5, rel=1e-14)


def test_sinr_zero_power(small_setup):
    cfg, _, _, stats = small_setup
    al = Allocation(np.ones(cfg.M), np.zeros((cfg.M, cfg.K)), np.zeros((cfg.M, cfg.J)))
    assert np.all(sinr_closed_form(stats, al, cfg) == 0)


def test_se_examples():
    cfg = SystemConfig(tau_c=200)
    assert se_from_sinr(0.0, cfg) == 0
    assert se_from_sinr(1023.0, cfg, tau=4) == pytest.approx(9.8, rel=1e-14)
    assert se_from_sinr(55.0, cfg, tau=200) == 0


# ---------------------------------------------------------------- EH model


def test_nleh_examples():
    cfg = SystemConfig()
    assert nleh(0.0, cfg) == 0.0
    assert nleh(10.0, cfg) == pytest.approx(0.024, rel=1e-12)
    assert logistic(cfg.chi, cfg) == pytest.approx(0.012, rel=1e-14)
    omega = 1 / (1 + np.exp(3.6))
    assert nleh(0.024, cfg) == pytest.approx((0.012 - 0.024 * omega) / (1 - omega), rel=1e-14)
    assert nleh(0.024, cfg) == pytest.approx(0.011673, abs=1e-6)


@given(st.floats(1e-9, 0.024 * (1 - 1e-9)))
def test_logistic_inverse_identity(g):
    cfg = SystemConfig()
    assert logistic(nleh_inverse(g, cfg), cfg) == pytest.approx(g, rel=1e-10)


@given(st.floats(0.0, 0.0239))
def test_rf_requirement_inverts_nleh(g):
    cfg = SystemConfig()
    e = rf_requirement(g, cfg)
    assert nleh(e, cfg) == pytest.approx(g, rel=1e-9, abs=1e-18)


@given(st.floats(0.0, 1e3))
def test_nleh_range(e):
    out = nleh(e, SystemConfig())
    assert 0.0 <= out <= 0.024


def test_inverse_rejects_saturation():
    with pytest.raises(ValueError):
        nleh_inverse(0.024, SystemConfig())
    with pytest.raises(ValueError):
        rf_requirement(0.024, SystemConfig())


# ---------------------------------------------------------------- received energy


def test_q_noise_only(small_setup):
    cfg, _, _, stats = small_setup
    al = Allocation(np.ones(cfg.M), np.zeros((cfg.M, cfg.K)), np.ones((cfg.M, cfg.J)))
    assert np.all(harvested_q_closed_form(stats, al, cfg) == (cfg.tau_c - cfg.tau) * cfg.sigma_n2)


@pytest.mark.parametrize("exact", [False, True])
def test_shared_pilot_reduction(exact):
    cfg = SystemConfig(M=6, L=10, K=2, J=4, N=9, prf_e=3)
    scen = make_scenario(cfg, 11)
    stats = channel_statistics(scen.ls, scen.geo, random_scattering(9, 2).theta, scen.plan, cfg)
    al = _random_alloc(cfg, 4)
    general = harvested_q_closed_form(stats, al, cfg, exact)
    assert np.max(rel(harvested_q_shared_pilot(stats, al, cfg, exact), general)) <= 1e-12


def test_shared_pilot_reduction_requires_sharing():
    cfg = SystemConfig(M=4, L=8, K=2, J=3, N=4, prf_e=1)
    scen = make_scenario(cfg, 0)
    stats = channel_statistics(scen.ls, scen.geo, random_scattering(4, 0).theta, scen.plan, cfg)
    with pytest.raises(ValueError):
        harvested_q_shared_pilot(stats, _random_alloc(cfg, 0), cfg)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 7), st.integers(0, 1))
def test_q_monotone_in_energy_power(small_setup, seed, m, j):
    cfg, _, _, stats = small_setup
    al = _random_alloc(cfg, seed, 0.8)
    bumped = Allocation(al.a, al.eta_I, al.eta_E.copy())
    bumped.eta_E[m, j] += 1e-3
    assert np.all(harvested_q_closed_form(stats, bumped, cfg) >= harvested_q_closed_form(stats, al, cfg))


def test_metrics_report_csv(small_setup):
    cfg, _, _, stats = small_setup
    rep = evaluate(stats, _random_alloc(cfg, 1), cfg)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "kind,index,sinr,se,q_joule,he_watt"
    assert len(lines) == 1 + cfg.K + cfg.J
    assert np.allclose(rep.se, (1 - cfg.tau / cfg.tau_c) * np.log2(1 + rep.sinr))
    assert np.all((rep.harvested_nl >= 0) & (rep.harvested_nl <= cfg.phi_max))


def test_energy_breakdown_nonnegative(small_setup):
    _, _, _, stats = small_setup
    for exact in (False, True):
        br = energy_breakdown(stats, exact)
        assert np.all(br.pair >= 0) and np.all(br.ir >= 0)


# ---------------------------------------------------------------- oracle


def test_oracle_deterministic(small_setup):
    cfg, scen, theta, _ = small_setup
    al = _random_alloc(cfg, 2)
    o1 = monte_carlo_oracle(cfg, theta, al, n_real=1, seed=4, scenario=scen)
    o2 = monte_carlo_oracle(cfg, theta, al, n_real=1, seed=4, scenario=scen)
    assert np.array_equal(o1.q, o2.q) and np.array_equal(o1.ds, o2.ds)
    with pytest.raises(ValueError):
        monte_carlo_oracle(cfg, theta, al, n_real=0, seed=4, scenario=scen)


def test_oracle_zero_power_exact(small_setup):
    cfg, scen, theta, _ = small_setup
    al = Allocation(np.ones(cfg.M), np.zeros((cfg.M, cfg.K)), np.zeros((cfg.M, cfg.J)))
    o = monte_carlo_oracle(cfg, theta, al, n_real=300, seed=0, scenario=scen)
    assert np.all(o.q == (cfg.tau_c - cfg.tau) * cfg.sigma_n2)


@pytest.mark.slow
@pytest.mark.parametrize("L", [8, 16])
def test_closed_forms_match_oracle(L):
    cfg = SystemConfig(M=8, L=L, K=3, J=2, N=4, prf_e=1)
    scen = make_scenario(cfg, 3)
    theta = random_scattering(4, 5)
    stats = channel_statistics(scen.ls, scen.geo, theta.theta, scen.plan, cfg)
    al = _random_alloc(cfg, 1)
    o = monte_carlo_oracle(cfg, theta, al, n_real=20000, seed=3, scenario=scen)
    assert np.max(rel(sinr_closed_form(stats, al, cfg), o.sinr)) <= 0.03
    assert np.max(rel(harvested_q_closed_form(stats, al, cfg), o.q)) <= 0.10


# ---------------------------------------------------------------- moment identities


def test_projector_moment_values():
    assert projector_moment_closed(2, 1, 1.0) == 2
    assert projector_moment_closed(5, 5, 1.7) == 0
    v = moment_values(4, 1.0, 1, 0.0, 0.0, 0.0, 0.5, 4, 1, 2.0)
    assert v.second_true == 4 and v.second_est == 2 and v.fourth_est == 20 * 0.25
    assert v.projector == 3 * 4 * 4


@pytest.mark.slow
def test_projector_moment_sampled():
    assert rel(projector_moment_sampled(8, 3, 1.0, 100_000, 0), projector_moment_closed(8, 3, 1.0)) <= 0.02


@pytest.mark.slow
def test_er_moments_sampled():
    cfg = SystemConfig(M=8, L=12, K=3, J=2, N=4, prf_e=0)
    chk = er_moment_check(cfg, random_scattering(4, 0), 0, 0, 100_000, 0)
    assert rel(chk.sampled_second_true, chk.closed.second_true) <= 0.02
    assert rel(chk.sampled_second_est, chk.closed.second_est) <= 0.02
    assert rel(chk.sampled_fourth_est, chk.closed.fourth_est) <= 0.05
