"""Batch runner: sweep points x seeds -> one CSV row each, plus a summary."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .metrics import evaluate, harvested_q_closed_form, harvested_q_shared_pilot, sinr_closed_form
from .precoding import Allocation
from .scattering import TOL, build_scattering, dft_blocks, parse_arch, random_scattering, validate
from .sca import (
    InfeasibleError,
    IterationLimitError,
    gap_epa,
    random_modes,
    rap_epa,
    solve_jap_pa,
    solve_rap_pa,
)
from .system_model import SystemConfig, channel_statistics, make_scenario

SCHEMES = ("jap-pa", "ml-jap-pa", "rap-pa", "gap-epa", "rap-epa")
SCATTERINGS = ("heu", "dft", "random")
SWEEP_VARS = ("M", "N", "se_min", "receivers")
COLUMNS = ["scheme", "scattering", "arch", "sweep_var", "sweep_val", "seed",
           "sum_he_w", "min_se", "min_he_w", "feasible", "iters", "wall_ms"]
SUMMARY_COLUMNS = ["scheme", "scattering", "arch", "sweep_var", "sweep_val", "n", "feasible_rate",
                   "mean_sum_he_w", "ci95_sum_he_w", "mean_min_se", "ci95_min_se"]


@dataclass
class ExperimentSpec:
    scheme: str = "jap-pa"
    scattering: str = "heu"
    arch: str = "fc"
    sweep_var: str = "M"
    sweep_vals: list = field(default_factory=lambda: [8])
    seeds: list = field(default_factory=lambda: list(range(20)))
    realizations: int = 0  # > 0 adds a Monte Carlo cross-check per point
    out: Optional[str] = None
    base: SystemConfig = field(default_factory=SystemConfig)
    heuristic_draws: int = 50
    ml_product: int = 96
    workers: int = 1
    timing: bool = False  # wall_ms stays blank otherwise so reruns are byte-identical
    drl_episodes: int = 200

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.scattering not in SCATTERINGS:
            raise ValueError(f"unknown scattering {self.scattering!r}; choose from {SCATTERINGS}")
        if self.sweep_var not in SWEEP_VARS:
            raise ValueError(f"unknown sweep variable {self.sweep_var!r}; choose from {SWEEP_VARS}")
        if not self.sweep_vals:
            raise ValueError("sweep list is empty")
        if not self.seeds:
            raise ValueError("seed list is empty")
        for v in self.sweep_vals:
            parse_arch(self.arch, self.config_for(v).N)

    def config_for(self, value) -> SystemConfig:
        b = self.base
        if self.sweep_var == "M":
            M = int(value)
            if self.ml_product % M:
                raise ValueError(f"M={M} does not divide M*L={self.ml_product}")
            return b.replace(M=M, L=self.ml_product // M)
        if self.sweep_var == "N":
            return b.replace(N=int(value))
        if self.sweep_var == "se_min":
            return b.replace(se_min=float(value))
        n = int(value)
        return b.replace(K=n, J=n, prf_i=0, prf_e=n - 1)


@dataclass
class Row:
    scheme: str
    scattering: str
    arch: str
    sweep_var: str
    sweep_val: str
    seed: int
    sum_he_w: float
    min_se: float
    min_he_w: float
    feasible: bool
    iters: int
    wall_ms: Optional[float]

    def cells(self) -> list:
        def num(x):
            return "nan" if x is None or not math.isfinite(x) else repr(float(x))

        wall = "" if self.wall_ms is None else f"{self.wall_ms:.3f}"
        return [self.scheme, self.scattering, self.arch, self.sweep_var, self.sweep_val, self.seed,
                num(self.sum_he_w), num(self.min_se), num(self.min_he_w), int(self.feasible), self.iters, wall]


def _fmt_val(v) -> str:
    f = float(v)
    return str(int(f)) if f.is_integer() else repr(f)


def _train_policy(cfg: SystemConfig, arch: str, episodes: int):
    from .drl import DdpgHyper, MdpEnv, train_ddpg

    env = MdpEnv(cfg, theta=dft_blocks(cfg.N, parse_arch(arch, cfg.N)))
    return train_ddpg(env, DdpgHyper(episodes=episodes), seed=0)


def _solve(spec: ExperimentSpec, cfg: SystemConfig, seed: int, policy=None):
    scen = make_scenario(cfg, seed)
    theta = build_scattering(spec.scattering, spec.arch, scen.ls, scen.geo, cfg, seed, spec.heuristic_draws)
    stats = channel_statistics(scen.ls, scen.geo, theta.theta, scen.plan, cfg)
    iters = 0
    if spec.scheme == "jap-pa":
        res = solve_jap_pa(stats, theta, scen.plan, cfg, seed=seed)
        alloc, iters = res.allocation, res.iterations
    elif spec.scheme == "rap-pa":
        res = solve_rap_pa(stats, theta, scen.plan, cfg, random_modes(cfg.M, seed))
        alloc, iters = res.allocation, res.iterations
    elif spec.scheme == "gap-epa":
        alloc = gap_epa(stats, theta, scen.plan, cfg)
    elif spec.scheme == "rap-epa":
        alloc = rap_epa(cfg, seed)
    else:
        from .drl import act

        alloc = act(policy, scen.geo.state_vector())
    return scen, theta, stats, alloc, iters


def _run_point(args) -> tuple:
    spec, value, seed, policy = args
    cfg = spec.config_for(value)
    t0 = time.perf_counter()
    check = None
    try:
        scen, theta, stats, alloc, iters = _solve(spec, cfg, seed, policy)
    except (InfeasibleError, IterationLimitError):
        wall = 1e3 * (time.perf_counter() - t0) if spec.timing else None
        row = Row(spec.scheme, spec.scattering, spec.arch, spec.sweep_var, _fmt_val(value), seed,
                  math.nan, math.nan, math.nan, False, 0, wall)
        return row, None
    rep = evaluate(stats, alloc, cfg)
    wall = 1e3 * (time.perf_counter() - t0) if spec.timing else None
    if spec.realizations > 0:
        from .oracle import monte_carlo_oracle

        o = monte_carlo_oracle(cfg, theta, alloc, scen.plan, n_real=spec.realizations, seed=seed, scenario=scen)
        check = {"sweep_val": _fmt_val(value), "seed": seed,
                 "max_rel_err_sinr": float(np.max(np.abs(rep.sinr / o.sinr - 1.0))),
                 "max_rel_err_q": float(np.max(np.abs(rep.rf_energy_q / o.q - 1.0)))}
    row = Row(spec.scheme, spec.scattering, spec.arch, spec.sweep_var, _fmt_val(value), seed,
              rep.sum_he, float(rep.se.min()), float(rep.harvested_nl.min()), rep.feasible, int(iters), wall)
    return row, check


@dataclass
class SummaryRow:
    sweep_val: str
    n: int
    feasible_rate: float
    mean_sum_he_w: float
    ci95_sum_he_w: float
    mean_min_se: float
    ci95_min_se: float


def _mean_ci(x: np.ndarray) -> tuple:
    x = x[np.isfinite(x)]
    if x.size == 0:
        return math.nan, math.nan
    half = 1.959963984540054 * x.std(ddof=1) / math.sqrt(x.size) if x.size > 1 else math.nan
    return float(x.mean()), float(half)


def summarize(rows: Sequence[Row]) -> list:
    """Per sweep point; an infeasible point contributes zero harvested power."""
    out = []
    order: list = []
    for r in rows:
        if r.sweep_val not in order:
            order.append(r.sweep_val)
    for v in order:
        pts = [r for r in rows if r.sweep_val == v]
        he = np.array([r.sum_he_w if r.feasible else 0.0 for r in pts])
        se = np.array([r.min_se for r in pts])
        m_he, c_he = _mean_ci(he)
        m_se, c_se = _mean_ci(se)
        out.append(SummaryRow(v, len(pts), float(np.mean([r.feasible for r in pts])), m_he, c_he, m_se, c_se))
    return out


@dataclass
class ExperimentResult:
    rows: list
    summary: list
    checks: list
    csv_text: str
    paths: dict = field(default_factory=dict)


def rows_csv(rows: Sequence[Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow(r.cells())
    return buf.getvalue()


def summary_csv(spec: ExperimentSpec, summary: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for s in summary:
        w.writerow([spec.scheme, spec.scattering, spec.arch, spec.sweep_var, s.sweep_val, s.n,
                    repr(s.feasible_rate), repr(s.mean_sum_he_w), repr(s.ci95_sum_he_w),
                    repr(s.mean_min_se), repr(s.ci95_min_se)])
    return buf.getvalue()


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    spec.validate()
    policies = {}
    if spec.scheme == "ml-jap-pa":
        for v in spec.sweep_vals:
            policies[_fmt_val(v)] = _train_policy(spec.config_for(v), spec.arch, spec.drl_episodes)
    jobs = [(spec, v, int(s), policies.get(_fmt_val(v))) for v in spec.sweep_vals for s in spec.seeds]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]
    rows = [r for r, _ in results]
    checks = [c for _, c in results if c is not None]
    summary = summarize(rows)
    text = rows_csv(rows)
    res = ExperimentResult(rows, summary, checks, text)
    if spec.out:
        out = Path(spec.out)
        out.mkdir(parents=True, exist_ok=True)
        res.paths["rows"] = out / "results.csv"
        res.paths["rows"].write_text(text)
        res.paths["summary"] = out / "summary.csv"
        res.paths["summary"].write_text(summary_csv(spec, summary))
        if checks:
            res.paths["oracle"] = out / "oracle_check.csv"
            with open(res.paths["oracle"], "w", newline="") as fh:
                w = csv.DictWriter(fh, list(checks[0]), lineterminator="\n")
                w.writeheader()
                w.writerows(checks)
    return res


# ---------------------------------------------------------------- validation suite


@dataclass
class Check:
    name: str
    measured: float
    tolerance: float
    passed: bool


def _random_allocation(cfg: SystemConfig, seed: int) -> Allocation:
    rng = np.random.default_rng([seed, 71])
    a = random_modes(cfg.M, seed)
    eta_I = rng.dirichlet(np.ones(cfg.K), size=cfg.M) * 0.9
    eta_E = rng.dirichlet(np.ones(cfg.J), size=cfg.M) * 0.9
    return Allocation(a, eta_I, eta_E)


def validate_suite(cfg: Optional[SystemConfig] = None, seed: int = 0, n_real: int = 20_000,
                   moment_draws: int = 100_000) -> list:
    """Closed forms against sampling, channel moments and scattering validity."""
    from .oracle import er_moment_check, projector_moment_closed, projector_moment_sampled, monte_carlo_oracle

    cfg = cfg or SystemConfig(M=8, L=12, K=3, J=2, N=4, prf_e=1)
    checks = []
    scen = make_scenario(cfg, seed)
    theta = random_scattering(cfg.N, seed)
    stats = channel_statistics(scen.ls, scen.geo, theta.theta, scen.plan, cfg)
    alloc = _random_allocation(cfg, seed)
    o = monte_carlo_oracle(cfg, theta, alloc, scen.plan, n_real=n_real, seed=seed, scenario=scen)
    err = float(np.max(np.abs(sinr_closed_form(stats, alloc, cfg) / o.sinr - 1.0)))
    checks.append(Check("sinr_closed_vs_mc", err, 0.03, err <= 0.03))
    err = float(np.max(np.abs(harvested_q_closed_form(stats, alloc, cfg) / o.q - 1.0)))
    checks.append(Check("q_closed_vs_mc", err, 0.10, err <= 0.10))

    shared = cfg.replace(prf_e=cfg.J - 1)
    s_sc = make_scenario(shared, seed)
    s_st = channel_statistics(s_sc.ls, s_sc.geo, theta.theta, s_sc.plan, shared)
    general = harvested_q_closed_form(s_st, alloc, shared)
    err = float(np.max(np.abs(harvested_q_shared_pilot(s_st, alloc, shared) / general - 1.0)))
    checks.append(Check("shared_pilot_reduction", err, 1e-10, err <= 1e-10))

    zero = Allocation(alloc.a, np.zeros_like(alloc.eta_I), np.zeros_like(alloc.eta_E))
    oz = monte_carlo_oracle(cfg, theta, zero, scen.plan, n_real=200, seed=seed, scenario=scen)
    err = float(np.max(np.abs(oz.q - (cfg.tau_c - cfg.tau) * cfg.sigma_n2)))
    checks.append(Check("zero_power_q", err, 0.0, err == 0.0))

    # ER alone on its pilot so the estimate variance is gamma
    solo = cfg.replace(prf_e=0)
    l1 = er_moment_check(solo, theta, 0, 0, moment_draws, seed)
    for name, got, ref, tol in (
        ("er_second_moment_true", l1.sampled_second_true, l1.closed.second_true, 0.02),
        ("er_second_moment_est", l1.sampled_second_est, l1.closed.second_est, 0.02),
        ("er_fourth_moment_est", l1.sampled_fourth_est, l1.closed.fourth_est, 0.05),
    ):
        err = float(abs(got / ref - 1.0))
        checks.append(Check(name, err, tol, err <= tol))
    ref = projector_moment_closed(cfg.L, cfg.K, 1.0)
    err = float(abs(projector_moment_sampled(cfg.L, cfg.K, 1.0, moment_draws, seed) / ref - 1.0))
    checks.append(Check("projector_fourth_moment", err, 0.02, err <= 0.02))

    for N in (4, 9, 16):
        c = cfg.replace(N=N)
        sc = make_scenario(c, seed)
        for kind, arch in (("dft", "fc"), ("heu", "fc"), ("heu", "gc:2" if N % 2 == 0 else "gc:3"),
                           ("heu", "diag"), ("random", "fc")):
            th = build_scattering(kind, arch, sc.ls, sc.geo, c, seed, D=5)
            v = validate(th)
            worst = max(v.unitary_residual, v.symmetry_residual, v.block_residual)
            checks.append(Check(f"scattering_{kind}_{arch}_N{N}", float(worst), TOL, bool(v.passed)))
    return checks


def checks_csv(checks: Sequence[Check]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check", "measured", "tolerance", "passed"])
    for c in checks:
        w.writerow([c.name, repr(float(c.measured)), repr(float(c.tolerance)), int(c.passed)])
    return buf.getvalue()


def spec_from_json(path) -> ExperimentSpec:
    """Config JSON: SystemConfig keys at top level, experiment keys under "experiment"."""
    data = json.loads(Path(path).read_text())
    exp = data.pop("experiment", {})
    return ExperimentSpec(base=SystemConfig.from_dict(data), **exp)


def spec_to_dict(spec: ExperimentSpec) -> dict:
    d = asdict(spec)
    d["base"] = spec.base.to_dict()
    return d
