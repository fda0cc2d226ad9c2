import cvxpy as cp
import numpy as np
import pytest

from bdswipt.metrics import evaluate
from bdswipt.precoding import Allocation
from bdswipt.scattering import build_scattering
from bdswipt.sca import (
    ConvexSubproblem,
    InfeasibleError,
    gap_epa,
    random_modes,
    rap_epa,
    reference_energy,
    solve_jap_pa,
    solve_rap_pa,
    solve_subproblem,
)
from bdswipt.system_model import SystemConfig, channel_statistics, make_scenario


def _segments_monotone(trace, tol=1e-9):
    for prev, cur in zip(trace, trace[1:]):
        if cur.segment == prev.segment and cur.objective < prev.objective - tol * max(1.0, abs(prev.objective)):
            return False
    return True


@pytest.fixture(scope="module")
def tiny():
    cfg = SystemConfig(M=4, L=8, K=2, J=2, N=4, prf_e=1)
    scen = make_scenario(cfg, 0)
    theta = build_scattering("heu", "fc", scen.ls, scen.geo, cfg, 0)
    stats = channel_statistics(scen.ls, scen.geo, theta.theta, scen.plan, cfg)
    return cfg, scen, theta, stats


@pytest.fixture(scope="module")
def jap(tiny):
    cfg, scen, theta, stats = tiny
    return solve_jap_pa(stats, theta, scen.plan, cfg)


# ---------------------------------------------------------------- subproblem contract


def test_subproblem_linear_program():
    x = cp.Variable(2)
    p = ConvexSubproblem({"x": x}, cp.sum(x), [("box", x <= 1.5), ("pos", x >= 0)])
    res = solve_subproblem(p)
    assert res.objective == pytest.approx(3.0, abs=1e-6)
    assert np.allclose(res.values["x"], 1.5, atol=1e-6)


def test_subproblem_geometric_mean():
    x, y, t = cp.Variable(), cp.Variable(), cp.Variable()
    p = ConvexSubproblem({"x": x, "y": y, "t": t}, t,
                         [("gm", t <= cp.geo_mean(cp.hstack([x, y]))), ("x", x == 1), ("y", y == 1)])
    assert solve_subproblem(p).values["t"] == pytest.approx(1.0, abs=1e-6)


def test_subproblem_infeasible():
    x = cp.Variable()
    p = ConvexSubproblem({"x": x}, x, [("lo", x >= 2), ("hi", x <= 1)])
    with pytest.raises(InfeasibleError):
        solve_subproblem(p)


def test_subproblem_rejects_nonconvex():
    x = cp.Variable()
    with pytest.raises(ValueError):
        _ = ConvexSubproblem({"x": x}, cp.square(x), [("hi", x <= 1)]).problem


# ---------------------------------------------------------------- solvers


def test_unreachable_harvest_threshold(tiny):
    cfg, scen, theta, stats = tiny
    hard = cfg.replace(gamma_min=cfg.phi_max)
    with pytest.raises(InfeasibleError) as info:
        solve_rap_pa(stats, theta, scen.plan, hard, [1, 0, 1, 0])
    assert info.value.constraint_class == "HE"


def test_rap_pa_rejects_fractional_modes(tiny):
    cfg, scen, theta, stats = tiny
    with pytest.raises(ValueError):
        solve_rap_pa(stats, theta, scen.plan, cfg, [0.5, 0, 1, 1])


def test_jap_pa_binary_feasible(jap, tiny):
    cfg = tiny[0]
    assert set(np.unique(jap.allocation.a)) <= {0.0, 1.0}
    assert jap.report.feasible and jap.allocation.power_ok()
    assert np.all(jap.report.harvested_nl <= cfg.phi_max)


def test_jap_trace_monotone_per_segment(jap):
    assert len(jap.state.trace) >= 2
    assert _segments_monotone(jap.state.trace)
    assert _segments_monotone(jap.state.trace_final)


def test_rap_pa_reproduces_jap(jap, tiny):
    cfg, scen, theta, stats = tiny
    res = solve_rap_pa(stats, theta, scen.plan, cfg, jap.allocation.a)
    assert abs(res.report.sum_he - jap.report.sum_he) <= 0.01 * jap.report.sum_he
    assert res.state.stop_reason == "converged" and res.state.residual <= 1e-3


def test_jap_not_worse_than_greedy(jap, tiny):
    cfg, scen, theta, stats = tiny
    greedy = evaluate(stats, gap_epa(stats, theta, scen.plan, cfg), cfg)
    if greedy.feasible:
        assert jap.report.sum_he >= greedy.sum_he * (1 - 1e-6)


def test_trace_csv(jap, tmp_path):
    path = tmp_path / "trace.csv"
    jap.trace_csv(path, timing=False)
    lines = path.read_text().splitlines()
    assert lines[0] == "n,objective,binary_residual,max_constraint_violation,wall_ms"
    assert len(lines) == 1 + len(jap.state.trace)
    assert all(line.endswith(",") for line in lines[1:])


def test_reference_energy_positive(tiny):
    _, _, _, stats = tiny
    assert reference_energy(stats, tiny[0]) > 0


# ---------------------------------------------------------------- baselines


def test_gap_epa_unreachable_se_keeps_all_information(tiny):
    cfg, scen, theta, stats = tiny
    al = gap_epa(stats, theta, scen.plan, cfg.replace(se_min=30.0))
    assert np.array_equal(al.a, np.ones(cfg.M))


def test_gap_epa_flips_only_improve(tiny):
    cfg, scen, theta, stats = tiny
    loose = cfg.replace(se_min=0.0, gamma_min=0.0)
    al = gap_epa(stats, theta, scen.plan, loose)
    assert np.array_equal(al.a, gap_epa(stats, theta, scen.plan, loose).a)
    base = evaluate(stats, Allocation.equal(np.ones(cfg.M), cfg.K, cfg.J), loose)
    assert evaluate(stats, al, loose).sum_he >= base.sum_he
    assert np.allclose(al.load, 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_rap_epa_equal_split(seed):
    cfg = SystemConfig()
    al = rap_epa(cfg, seed)
    a = al.a
    assert 0 < a.sum() < cfg.M
    assert np.allclose(al.eta_I.sum(axis=1), 1.0) and np.allclose(al.eta_E.sum(axis=1), 1.0)
    assert np.allclose(al.eta_I, 1 / cfg.K) and np.allclose(al.eta_E, 1 / cfg.J)
    assert np.array_equal(a, random_modes(cfg.M, seed))
