"""Joint AP mode selection and power control by successive convex approximation.

Each outer iteration solves one convex program built from the anchors of the
previous iterate.  All constraints are inner approximations of the exact
closed forms, so every accepted iterate is feasible for the original problem.

Scaling: the SINR constraint is written with rho_d-scaled statistics, each
energy constraint is divided by T sigma^2 rho_d d_j with d_j the largest
energy coefficient of ER j, and harvested energies are expressed in units
of ``e_ref`` so the objective is O(J).
"""

from __future__ import annotations

import csv
import itertools
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import cvxpy as cp
import numpy as np

from .metrics import MetricsReport, energy_breakdown, evaluate, nleh, rf_requirement, sinr_terms
from .precoding import Allocation
from .system_model import ChannelStats, SystemConfig

LINEAR = "LINEAR"
CONVEX_QUADRATIC = "CONVEX-QUADRATIC"
GEOMEAN_SOC = "GEOMEAN-SOC"


class InfeasibleError(RuntimeError):
    def __init__(self, message: str, constraint_class: str = ""):
        super().__init__(message)
        self.constraint_class = constraint_class


class IterationLimitError(RuntimeError):
    def __init__(self, message: str, best: Optional[dict] = None):
        super().__init__(message)
        self.best = best


# ---------------------------------------------------------------- subproblem contract


@dataclass
class ConvexSubproblem:
    """A maximization over named cvxpy variables with tagged constraints."""

    variables: dict
    objective: cp.Expression
    constraints: list  # of (tag, cvxpy constraint)
    _problem: Optional[cp.Problem] = field(default=None, repr=False)

    @property
    def problem(self) -> cp.Problem:
        if self._problem is None:
            self._problem = cp.Problem(cp.Maximize(self.objective), [c for _, c in self.constraints])
            if not self._problem.is_dcp(dpp=True) and not self._problem.is_dcp():
                raise ValueError("subproblem is not convex")
        return self._problem


@dataclass
class SubproblemResult:
    status: str
    values: dict
    objective: float


def solve_subproblem(p: ConvexSubproblem, tol: float = 1e-8, max_iter: int = 200) -> SubproblemResult:
    """Interior-point solve; raises InfeasibleError or IterationLimitError."""
    prob = p.problem
    try:
        prob.solve(
            solver=cp.CLARABEL,
            tol_gap_abs=tol,
            tol_gap_rel=tol,
            tol_feas=tol,
            max_iter=max_iter,
        )
    except cp.error.SolverError as exc:
        raise IterationLimitError(f"solver failed: {exc}") from exc
    status = prob.status
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        raise InfeasibleError("convex subproblem is infeasible")
    if status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        raise ValueError("convex subproblem is unbounded")
    values = {k: (None if v.value is None else np.array(v.value)) for k, v in p.variables.items()}
    if status != cp.OPTIMAL:
        if any(v is None for v in values.values()):
            raise IterationLimitError(f"solver stopped with status {status}")
        return SubproblemResult(status, values, float(prob.value))
    return SubproblemResult(status, values, float(prob.value))


# ---------------------------------------------------------------- SCA state


@dataclass
class TraceRow:
    n: int
    objective: float
    binary_residual: float
    max_constraint_violation: float
    wall_ms: float
    lambda_pen: float
    segment: int = 0  # bumps when the penalty weight changes or modes are fixed


@dataclass
class ScaState:
    a: np.ndarray
    eta_I: np.ndarray
    eta_E: np.ndarray
    e: np.ndarray  # harvested energy per ER (W)
    n: int = 0
    trace: list = field(default_factory=list)
    residual: float = np.inf
    lambda_pen: float = 10.0
    stop_reason: str = ""
    trace_final: list = field(default_factory=list)  # fixed-mode re-solve trace

    @property
    def allocation(self) -> Allocation:
        return Allocation(self.a.copy(), self.eta_I.copy(), self.eta_E.copy())

    @property
    def objective_trace(self) -> np.ndarray:
        return np.array([r.objective for r in self.trace])


@dataclass
class ScaResult:
    allocation: Allocation
    report: MetricsReport
    state: ScaState
    relaxed: Optional[Allocation] = None
    iterations: int = 0

    def trace_csv(self, path, timing: bool = True) -> None:
        write_trace(self.state.trace, path, timing)


def write_trace(rows: Sequence[TraceRow], path, timing: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "objective", "binary_residual", "max_constraint_violation", "wall_ms"])
        for r in rows:
            w.writerow([r.n, repr(r.objective), repr(r.binary_residual), repr(r.max_constraint_violation),
                        f"{r.wall_ms:.3f}" if timing else ""])


# ---------------------------------------------------------------- model pieces


@dataclass
class _Coeffs:
    """Normalized long-term coefficients shared by every outer iteration."""

    D: np.ndarray  # (M, J, J') normalized energy coefficients
    R: np.ndarray  # (M, J)
    d_ref: np.ndarray  # (J,)
    noise: np.ndarray  # (J,) normalized noise term
    gamma_hat: np.ndarray  # (M, K) rho_d gamma_I
    nu_hat: np.ndarray  # (M, K) rho_d (beta_I - gamma_I)
    sinr_scale: np.ndarray  # (K,) divides gamma_hat, nu_hat and the noise term
    T: np.ndarray  # (K,) SINR targets
    rank: int
    same_I: np.ndarray
    q_scale: float  # T sigma^2 rho_d


def _coeffs(stats: ChannelStats, cfg: SystemConfig, exact: bool) -> _Coeffs:
    br = energy_breakdown(stats, exact)
    d_ref = np.maximum(br.pair.max(axis=(0, 2)), br.ir.max(axis=0))
    D = br.pair / d_ref[None, :, None]
    R = br.ir / d_ref[None, :]
    gamma_hat = cfg.rho_d * stats.gamma_I
    nu_hat = cfg.rho_d * (stats.beta_I - stats.gamma_I)
    sinr_scale = np.maximum(np.maximum(stats.rank * gamma_hat.max(axis=0), nu_hat.max(axis=0)), 1.0)
    return _Coeffs(
        D=D,
        R=R,
        d_ref=d_ref,
        noise=1.0 / (cfg.rho_d * d_ref),
        gamma_hat=gamma_hat / sinr_scale,
        nu_hat=nu_hat / sinr_scale,
        sinr_scale=sinr_scale,
        T=cfg.sinr_min_vec,
        rank=stats.rank,
        same_I=stats.plan.same_I,
        q_scale=(cfg.tau_c - cfg.tau) * cfg.sigma_n2 * cfg.rho_d,
    )


def _exact_q(co: _Coeffs, cfg: SystemConfig, a, eta_I, eta_E) -> np.ndarray:
    eE = (1.0 - a)[:, None] * eta_E
    aI = a * eta_I.sum(axis=1)
    normalized = np.einsum("mjk,mk->j", co.D, eE) + aI @ co.R + co.noise
    return co.q_scale * co.d_ref * normalized


def _xi_pieces(e0: np.ndarray, cfg: SystemConfig):
    """RF requirement around e0 (W) with its slope and a curvature bound."""
    omega = 1.0 / (1.0 + np.exp(cfg.xi * cfg.chi))
    phi = cfg.phi_max
    et0 = (1.0 - omega) * e0 + phi * omega
    f0 = rf_requirement(e0, cfg)
    slope = (1.0 - omega) / cfg.xi * (1.0 / et0 + 1.0 / (phi - et0))
    w_min = 0.5 * (phi - et0)
    curv = (1.0 - omega) ** 2 / (cfg.xi * w_min**2)
    e_max = e0 + w_min / (1.0 - omega)
    return f0, slope, curv, e_max


_MAX_DOUBLINGS = 6
_MARGIN = 1e-4  # relative target tightening that absorbs solver tolerance
_E_CAP = 1e3  # normalized energy cap, far above any single-AP contribution


class _Builder:
    """Parametrized convex program reused across outer iterations."""

    def __init__(self, co: _Coeffs, cfg: SystemConfig, e_ref: float, a_fixed: Optional[np.ndarray], phase1: bool):
        self.co, self.cfg, self.e_ref, self.phase1 = co, cfg, e_ref, phase1
        M, K = co.gamma_hat.shape
        J = co.R.shape[1]
        self.M, self.K, self.J = M, K, J
        fixed = a_fixed is not None
        self.fixed = fixed
        eta_I = cp.Variable((M, K), nonneg=True, name="eta_I")
        eta_E = cp.Variable((M, J), nonneg=True, name="eta_E")
        e_hat = cp.Variable(J, nonneg=True, name="e")
        t = cp.Variable((M, K), nonneg=True, name="t")
        a = cp.Constant(np.asarray(a_fixed, dtype=float)) if fixed else cp.Variable(M, name="a")
        self.vars = {"eta_I": eta_I, "eta_E": eta_E, "e": e_hat, "t": t}
        if not fixed:
            self.vars["a"] = a
        # anchors
        self.p_a0 = cp.Parameter(M, name="a0")
        self.p_pen = cp.Parameter(M, name="pen_lin")
        self.p_P0 = cp.Parameter((M, J), name="aZ0")
        self.p_q0 = cp.Parameter(K, nonneg=True, name="q0")
        self.p_q0sq = cp.Parameter(K, nonneg=True, name="q0sq")
        self.p_W0 = cp.Parameter(M, name="aw0")
        self.p_c = cp.Parameter((M, K), pos=True, name="c")
        self.p_cinv = cp.Parameter((M, K), pos=True, name="cinv")
        # requirement majorizer c0 + c1 e + c2 e^2 in normalized units
        self.p_f0 = cp.Parameter(J, name="c0")
        self.p_f1 = cp.Parameter(J, name="c1")
        self.p_f2 = cp.Parameter(J, nonneg=True, name="c2")
        self.p_emax = cp.Parameter(J, nonneg=True, name="emax")

        cons = []
        sum_I = cp.sum(eta_I, axis=1)
        sum_E = cp.sum(eta_E, axis=1)
        # power budgets
        if fixed:
            cons.append((LINEAR, sum_I <= a.value))
            cons.append((LINEAR, sum_E <= 1.0 - a.value))
        else:
            self.p_lo = cp.Parameter(M, nonneg=True, name="a_lo")
            self.p_hi = cp.Parameter(M, nonneg=True, name="a_hi")
            self.p_lo.value = np.zeros(M)
            self.p_hi.value = np.ones(M)
            cons.append((LINEAR, a >= self.p_lo))
            cons.append((LINEAR, a <= self.p_hi))
            # a sum_I + (1 - a) sum_E <= a^2 + (1 - a)^2 <= 1
            cons.append((LINEAR, sum_I <= a))
            cons.append((LINEAR, sum_E <= 1.0 - a))
        # geometric-mean hypograph t <= sqrt(a eta)
        a_b = cp.reshape(a, (M, 1), order="C") @ np.ones((1, K))
        cons.append((GEOMEAN_SOC, cp.SOC(cp.vec(a_b + eta_I, order="C"),
                                         cp.vstack([cp.vec(2 * t, order="C"), cp.vec(a_b - eta_I, order="C")]),
                                         axis=0)))
        slack_terms = []
        # SINR constraints
        r = co.rank
        for k in range(K):
            if co.T[k] <= 0:
                continue
            Tk = co.T[k] * (1.0 + _MARGIN)
            sg = np.sqrt(co.gamma_hat[:, k])
            q = sg @ t[:, k]
            lhs = 4 * r * (2 * cp.multiply(self.p_q0[k], q) - self.p_q0sq[k])
            rhs = 4.0 / co.sinr_scale[k]
            pcs = [kp for kp in np.flatnonzero(co.same_I[k]) if kp != k]
            for kp in pcs:
                amgm = 0.5 * (cp.multiply(a, self.p_c[:, kp]) + cp.multiply(eta_I[:, kp], self.p_cinv[:, kp]))
                rhs = rhs + 4 * r * cp.square(sg @ amgm)
            nu = co.nu_hat[:, k]
            if fixed:
                av = a.value
                rhs = rhs + 4 * (nu * av) @ sum_I + 4 * (nu * (1 - av)) @ sum_E
            else:
                omega = sum_I - sum_E
                lin = cp.multiply(self.p_W0, 2 * (a - omega)) - cp.square(self.p_W0)
                lhs = lhs + Tk * (nu @ lin)
                rhs = rhs + cp.sum(cp.multiply(nu, cp.square(a + omega))) + 4 * nu @ sum_E
            if phase1:
                s = cp.Variable(nonneg=True, name=f"s_sinr{k}")
                slack_terms.append(s)
                lhs = lhs + s
            cons.append((CONVEX_QUADRATIC, lhs >= Tk * rhs))
        self.n_sinr_slack = len(slack_terms)
        # energy constraints
        gamma_hat_he = cfg.gamma_min_vec / e_ref
        for j in range(J):
            Dj = co.D[:, j, :]
            if fixed:
                av = a.value
                Qn = cp.sum(cp.multiply(Dj * (1 - av)[:, None], eta_E)) + (co.R[:, j] * av) @ sum_I + co.noise[j]
            else:
                Zj = cp.multiply(co.R[:, j], sum_I) - cp.sum(cp.multiply(Dj, eta_E), axis=1)
                lin = cp.multiply(self.p_P0[:, j], 2 * (a + Zj)) - cp.square(self.p_P0[:, j])
                Qn = cp.sum(cp.multiply(Dj, eta_E)) + 0.25 * (cp.sum(lin) - cp.sum_squares(a - Zj)) + co.noise[j]
            req = self.p_f0[j] + self.p_f1[j] * e_hat[j] + self.p_f2[j] * cp.square(e_hat[j])
            cons.append((CONVEX_QUADRATIC, Qn >= req))
            cons.append((LINEAR, e_hat[j] <= self.p_emax[j]))
            if phase1 and gamma_hat_he[j] > 0:
                s = cp.Variable(nonneg=True, name=f"s_he{j}")
                slack_terms.append(s)
                cons.append((LINEAR, e_hat[j] + s >= gamma_hat_he[j]))
            else:
                cons.append((LINEAR, e_hat[j] >= gamma_hat_he[j]))
        self.slacks = slack_terms
        if phase1:
            obj = -cp.sum(cp.hstack(slack_terms)) if slack_terms else cp.Constant(0.0)
        elif fixed:
            obj = cp.sum(e_hat)
        else:
            # linearized penalty lambda * sum(a - a0 (2a - a0)) without its constant
            obj = cp.sum(e_hat) - self.p_pen @ a
        self.sub = ConvexSubproblem(self.vars, obj, cons)

    def set_anchors(self, a0, eta_I0, eta_E0, e0_w, lam: float) -> None:
        co, cfg = self.co, self.cfg
        a0 = np.clip(np.asarray(a0, float), 0.0, 1.0)
        self.p_a0.value = a0
        self.p_pen.value = lam * (1.0 - 2.0 * a0)
        sum_I0 = eta_I0.sum(axis=1)
        sum_E0 = eta_E0.sum(axis=1)
        Z0 = co.R * sum_I0[:, None] - np.einsum("mjk,mk->mj", co.D, eta_E0)
        self.p_P0.value = a0[:, None] + Z0
        q0 = np.sum(np.sqrt(np.maximum(a0[:, None] * eta_I0, 0.0) * co.gamma_hat), axis=0)
        self.p_q0.value = q0
        self.p_q0sq.value = q0**2
        self.p_W0.value = a0 - (sum_I0 - sum_E0)
        eps = 1e-9
        # any c > 0 gives a valid bound; clipping keeps the program well scaled
        c = np.clip(np.sqrt(np.maximum(eta_I0, eps) / np.maximum(a0, eps)[:, None]), 1e-2, 1e2)
        self.p_c.value = c
        self.p_cinv.value = 1.0 / c
        e0_w = np.maximum(np.asarray(e0_w, float), 0.0)
        f0, f1, f2, e_max = _xi_pieces(e0_w, cfg)
        scale = self.e_ref / (co.q_scale * co.d_ref)
        norm = co.q_scale * co.d_ref
        x0 = e0_w / self.e_ref
        g0 = f0 / norm
        g1 = f1 * scale
        g2 = 0.5 * f2 * scale * self.e_ref
        self.p_f0.value = g0 - g1 * x0 + g2 * x0**2
        self.p_f1.value = g1 - 2.0 * g2 * x0
        self.p_f2.value = g2
        self.p_emax.value = np.minimum(e_max / self.e_ref, _E_CAP)


# ---------------------------------------------------------------- helpers


def _true_metrics(co: _Coeffs, cfg: SystemConfig, stats: ChannelStats, a, eta_I, eta_E):
    alloc = Allocation(a, eta_I, eta_E)
    t = sinr_terms(stats, alloc)
    sinr = t["num"] / (t["pc"] + t["iui"] + t["eui"] + 1.0 / cfg.rho_d)
    q = _exact_q(co, cfg, np.asarray(a, float), eta_I, eta_E)
    he = nleh(q, cfg)
    return sinr, q, he


def _violation(cfg: SystemConfig, sinr, he, alloc: Allocation) -> float:
    T = cfg.sinr_min_vec
    v_sinr = np.max(np.where(T > 0, (T - sinr) / np.maximum(T, 1e-300), 0.0), initial=0.0)
    G = cfg.gamma_min_vec
    v_he = np.max(np.where(G > 0, (G - he) / np.maximum(G, 1e-300), 0.0), initial=0.0)
    v_pow = max(0.0, float(np.max(alloc.load)) - 1.0)
    return float(max(v_sinr, v_he, v_pow, 0.0))


def _binary_residual(a) -> float:
    a = np.asarray(a, float)
    return float(np.max(np.minimum(np.abs(a), np.abs(1.0 - a)), initial=0.0))


def _e_ref(co: _Coeffs, cfg: SystemConfig) -> float:
    # harvested energy of the best single-AP full-power energy beam, averaged over ERs
    best = co.q_scale * co.d_ref * (co.D.max(axis=(0, 2)) + co.noise)
    return float(max(np.mean(nleh(best, cfg)), 1e-300))


def reference_energy(stats: ChannelStats, cfg: SystemConfig, exact: bool = False) -> float:
    """Mean per-ER harvest from the best single AP at full energy power (W)."""
    return _e_ref(_coeffs(stats, cfg, exact), cfg)


def _clean(values: dict, M: int, a_fixed) -> tuple:
    """Clip solver round-off so the power budgets hold exactly."""
    eta_I = np.maximum(values["eta_I"], 0.0)
    eta_E = np.maximum(values["eta_E"], 0.0)
    a = np.asarray(a_fixed, float) if a_fixed is not None else np.clip(values["a"], 0.0, 1.0)
    for eta, cap in ((eta_I, a), (eta_E, 1.0 - a)):
        tot = eta.sum(axis=1)
        over = tot > cap
        eta[over] *= (cap[over] / tot[over])[:, None]
    return a, eta_I, eta_E


def _feasible_start(co, cfg, stats, a0, eta_I0, eta_E0) -> bool:
    sinr, q, he = _true_metrics(co, cfg, stats, a0, eta_I0, eta_E0)
    return _violation(cfg, sinr, he, Allocation(a0, eta_I0, eta_E0)) <= 1e-9


def _phase1(builder: _Builder, co, cfg, stats, a, eta_I, eta_E, a_fixed, max_iter: int = 100):
    """Minimize constraint slack until the start point is strictly feasible."""
    prev = np.inf
    for _ in range(max_iter):
        _, _, he = _true_metrics(co, cfg, stats, a, eta_I, eta_E)
        builder.set_anchors(a, eta_I, eta_E, he, 0.0)
        try:
            res = solve_subproblem(builder.sub)
        except InfeasibleError as exc:
            raise InfeasibleError("feasibility phase failed", "POWER") from exc
        a, eta_I, eta_E = _clean(res.values, co.gamma_hat.shape[0], a_fixed)
        slack = np.array([float(s.value) for s in builder.slacks]) if builder.slacks else np.zeros(0)
        total = float(slack.sum())
        if _feasible_start(co, cfg, stats, a, eta_I, eta_E):
            return a, eta_I, eta_E
        if abs(prev - total) <= 1e-9 * max(1.0, total):
            break
        prev = total
    sinr, _, he = _true_metrics(co, cfg, stats, a, eta_I, eta_E)
    T = cfg.sinr_min_vec
    cls = "SINR" if np.any(sinr < T * (1 - 1e-6)) else "HE"
    raise InfeasibleError(f"no feasible start found ({cls} constraints)", cls)


def _run_sca(
    stats: ChannelStats,
    cfg: SystemConfig,
    a_fixed: Optional[np.ndarray],
    start: Optional[Allocation],
    exact: bool,
    max_iter: int,
    tol: float,
    lambda_pen: Optional[float],
) -> ScaState:
    co = _coeffs(stats, cfg, exact)
    if np.any(cfg.gamma_min_vec >= cfg.phi_max):
        raise InfeasibleError("harvesting threshold at or above the saturation level is unreachable", "HE")
    M, K = co.gamma_hat.shape
    J = co.R.shape[1]
    relaxed = a_fixed is None
    e_ref = _e_ref(co, cfg)
    if start is None:
        a0 = np.full(M, 0.5) if relaxed else np.asarray(a_fixed, float)
        if relaxed:
            eta_I0, eta_E0 = np.full((M, K), 0.5 / K), np.full((M, J), 0.5 / J)
        else:
            eta_I0, eta_E0 = np.outer(a0, np.full(K, 1.0 / K)), np.outer(1 - a0, np.full(J, 1.0 / J))
    else:
        a0 = start.a.copy() if relaxed else np.asarray(a_fixed, float)
        eta_I0 = start.eta_I * (1.0 if relaxed else a0[:, None])
        eta_E0 = start.eta_E * (1.0 if relaxed else (1 - a0)[:, None])
    a0, eta_I0, eta_E0 = _clean({"a": a0, "eta_I": eta_I0, "eta_E": eta_E0}, M, a_fixed)
    lam = cfg.lambda_pen if lambda_pen is None else lambda_pen
    lam_cap = lam * 2.0**_MAX_DOUBLINGS
    if not _feasible_start(co, cfg, stats, a0, eta_I0, eta_E0):
        p1 = _Builder(co, cfg, e_ref, a_fixed, phase1=True)
        a0, eta_I0, eta_E0 = _phase1(p1, co, cfg, stats, a0, eta_I0, eta_E0, a_fixed)

    builder = _Builder(co, cfg, e_ref, a_fixed, phase1=False)
    sinr, q, he = _true_metrics(co, cfg, stats, a0, eta_I0, eta_E0)

    def objective(a, he_vec, lam_val):
        pen = lam_val * float(np.sum(a - a * a)) if relaxed else 0.0
        return float(np.sum(he_vec) / e_ref - pen)

    def resid_of(a):
        return _binary_residual(a) if relaxed else 0.0

    state = ScaState(a0, eta_I0, eta_E0, he, lambda_pen=lam)
    state.residual = resid_of(a0)
    obj = objective(a0, he, lam)
    segment = 0
    t_start = time.perf_counter()

    def record(n, value, viol):
        state.trace.append(TraceRow(n, value, state.residual, viol, 1e3 * (time.perf_counter() - t_start), lam, segment))

    record(0, obj, _violation(cfg, sinr, he, state.allocation))
    stall = 0
    for n in range(1, max_iter + 1):
        builder.set_anchors(state.a, state.eta_I, state.eta_E, state.e, lam)
        try:
            res = solve_subproblem(builder.sub)
        except (InfeasibleError, IterationLimitError) as exc:
            state.stop_reason = f"solver: {exc}"
            break
        a, eta_I, eta_E = _clean(res.values, M, a_fixed)
        sinr, q, he = _true_metrics(co, cfg, stats, a, eta_I, eta_E)
        viol = _violation(cfg, sinr, he, Allocation(a, eta_I, eta_E))
        if viol > 1e-6:
            state.stop_reason = f"rejected step (violation {viol:.3e})"
            break
        new_obj = objective(a, he, lam)
        moved = new_obj >= obj  # a decrease is solver noise around a fixed point
        if moved:
            state.a, state.eta_I, state.eta_E, state.e = a, eta_I, eta_E, he
            state.n = n
            state.residual = resid_of(a)
            record(n, new_obj, viol)
            converged = new_obj - obj <= tol * max(1.0, abs(new_obj))
            obj = new_obj
        else:
            converged = True
        if not converged:
            stall = 0
            continue
        if not relaxed or state.residual <= 1e-3:
            state.stop_reason = "converged"
            break
        stall += 1
        if stall < 10 and moved:
            continue
        stall = 0
        segment += 1
        if lam < lam_cap:
            lam *= 2.0
            state.lambda_pen = lam
        elif not _snap_modes(builder, co, cfg, stats, state):
            state.stop_reason = "modes pinned by constraints"
            break
        obj = objective(state.a, state.e, lam)
        record(n, obj, state.trace[-1].max_constraint_violation)
    else:
        state.stop_reason = "iteration limit"
    state.residual = resid_of(state.a)
    return state


def _snap_modes(builder: _Builder, co, cfg, stats, state: ScaState) -> bool:
    """Fix APs the penalty cannot move, against their blocked direction."""
    a = state.a.copy()
    frac = np.minimum(a, 1.0 - a) > 1e-3
    target = np.where(a < 0.5, 1.0, 0.0)
    a[frac] = target[frac]
    eta_I, eta_E = state.eta_I.copy(), state.eta_E.copy()
    eta_I[frac & (a == 0)] = 0.0
    eta_E[frac & (a == 1)] = 0.0
    a, eta_I, eta_E = _clean({"a": a, "eta_I": eta_I, "eta_E": eta_E}, len(a), None)
    lo = np.where(frac, a, builder.p_lo.value)
    hi = np.where(frac, a, builder.p_hi.value)
    if not _feasible_start(co, cfg, stats, a, eta_I, eta_E):
        # let the powers re-balance around the fixed modes
        p1 = _Builder(co, cfg, builder.e_ref, None, phase1=True)
        p1.p_lo.value, p1.p_hi.value = lo, hi
        try:
            a, eta_I, eta_E = _phase1(p1, co, cfg, stats, a, eta_I, eta_E, None)
        except InfeasibleError:
            return False
    builder.p_lo.value, builder.p_hi.value = lo, hi
    _, _, he = _true_metrics(co, cfg, stats, a, eta_I, eta_E)
    state.a, state.eta_I, state.eta_E, state.e = a, eta_I, eta_E, he
    state.residual = _binary_residual(a)
    return True


# ---------------------------------------------------------------- public solvers


def solve_rap_pa(
    stats: ChannelStats,
    theta,
    plan,
    cfg: SystemConfig,
    a_fixed,
    start: Optional[Allocation] = None,
    exact: bool = False,
    max_iter: int = 200,
    tol: float = 1e-5,
) -> ScaResult:
    a_fixed = np.asarray(a_fixed, dtype=float)
    if not np.all((a_fixed == 0) | (a_fixed == 1)):
        raise ValueError("a_fixed must be binary")
    state = _run_sca(stats, cfg, a_fixed, start, exact, max_iter, tol, None)
    alloc = state.allocation
    return ScaResult(alloc, evaluate(stats, alloc, cfg, exact), state, iterations=state.n)


def _repair(a_round: np.ndarray, relaxed: np.ndarray) -> np.ndarray:
    a = a_round.copy()
    if np.all(a == 1):
        a[np.argmin(relaxed)] = 0.0
    elif np.all(a == 0):
        a[np.argmax(relaxed)] = 1.0
    return a


def _round_modes(stats, theta, plan, cfg, state: ScaState, exact, max_iter, tol) -> Optional[ScaResult]:
    """Round at 0.5 and re-solve powers with the modes fixed; repair keeps both modes present."""
    relaxed = state.allocation

    def attempt(a):
        try:
            res = solve_rap_pa(stats, theta, plan, cfg, a, start=relaxed, exact=exact, max_iter=max_iter, tol=tol)
        except (InfeasibleError, IterationLimitError):
            return None
        return res if res.report.feasible else None

    a_round = (state.a >= 0.5).astype(float)
    if np.all(a_round == a_round[0]):
        # both receiver classes must be served: keep the best single flip
        best = None
        for m in range(cfg.M):
            cand = a_round.copy()
            cand[m] = 1.0 - cand[m]
            res = attempt(cand)
            if res is not None and (best is None or res.report.sum_he > best.report.sum_he):
                best = res
        return best if best is not None else attempt(a_round)
    res = attempt(a_round)
    # a pattern left infeasible by rounding gets its fractional APs promoted, largest first
    order = [m for m in np.argsort(-state.a, kind="stable") if a_round[m] == 0 and state.a[m] > 1e-6]
    cand = a_round.copy()
    for m in order:
        if res is not None:
            break
        cand[m] = 1.0
        if cand.all():
            break
        res = attempt(cand)
    return res


def default_starts(stats: ChannelStats, theta, plan, cfg: SystemConfig, exact: bool = False,
                   per_ap: bool = False) -> list:
    """Uniform 0.5 and the greedy pattern softened; optionally each AP leaning alone to either mode."""
    greedy = gap_epa(stats, theta, plan, cfg, exact).a
    starts = [np.full(cfg.M, 0.5), 0.25 + 0.5 * greedy]
    if per_ap:
        for lean in (0.75, 0.25):
            for m in range(cfg.M):
                a0 = np.full(cfg.M, 1.0 - lean)
                a0[m] = lean
                starts.append(a0)
    return starts


def polish_modes(stats, theta, plan, cfg: SystemConfig, res: ScaResult, exact: bool = False,
                 max_iter: int = 200, tol: float = 1e-5) -> ScaResult:
    """Flip and swap local search over modes with a power re-solve per candidate."""
    best = res

    def neighbours(a):
        for m in range(cfg.M):
            cand = a.copy()
            cand[m] = 1.0 - cand[m]
            yield cand
        for i in np.flatnonzero(a == 1):
            for e in np.flatnonzero(a == 0):
                cand = a.copy()
                cand[i], cand[e] = 0.0, 1.0
                yield cand

    improved = True
    while improved:
        improved = False
        for cand in neighbours(best.allocation.a):
            if cand.sum() in (0, cfg.M):
                continue
            try:
                trial = solve_rap_pa(stats, theta, plan, cfg, cand, exact=exact, max_iter=max_iter, tol=tol)
            except (InfeasibleError, IterationLimitError):
                continue
            if trial.report.feasible and trial.report.sum_he > best.report.sum_he * (1.0 + 1e-9):
                best = ScaResult(trial.allocation, trial.report, res.state, res.relaxed, res.iterations)
                improved = True
    return best


def _start_allocation(a0: np.ndarray, K: int, J: int) -> Allocation:
    """Equal powers filling each relaxed budget."""
    a0 = np.asarray(a0, float)
    return Allocation(a0, np.outer(a0, np.full(K, 1.0 / K)), np.outer(1.0 - a0, np.full(J, 1.0 / J)))


def solve_jap_pa(
    stats: ChannelStats,
    theta,
    plan,
    cfg: SystemConfig,
    seed: int = 0,
    exact: bool = False,
    max_iter: int = 200,
    tol: float = 1e-5,
    starts: Optional[Sequence[np.ndarray]] = None,
    polish: bool = True,
) -> ScaResult:
    """Relaxed-mode SCA with penalty from each start, rounding, fixed-mode re-solve; best result wins."""
    if starts is None:
        starts = default_starts(stats, theta, plan, cfg, exact=exact)
    best = None
    failure: Optional[InfeasibleError] = None
    for a0 in starts:
        try:
            state = _run_sca(stats, cfg, None, _start_allocation(a0, cfg.K, cfg.J), exact, max_iter, tol, None)
        except InfeasibleError as exc:
            failure = exc
            continue
        final = _round_modes(stats, theta, plan, cfg, state, exact, max_iter, tol)
        if final is None:
            continue
        state.trace_final = final.state.trace
        res = ScaResult(final.allocation, final.report, state, relaxed=state.allocation, iterations=state.n)
        if best is None or res.report.sum_he > best.report.sum_he:
            best = res
    if best is None:
        raise failure or InfeasibleError("no feasible mode pattern after rounding", "SINR")
    return polish_modes(stats, theta, plan, cfg, best, exact, max_iter, tol) if polish else best


def gap_epa(stats: ChannelStats, theta, plan, cfg: SystemConfig, exact: bool = False) -> Allocation:
    """Greedy flips from all-information mode under equal power loading."""
    M, K, J = cfg.M, cfg.K, cfg.J
    a = np.ones(M)
    current = evaluate(stats, Allocation.equal(a, K, J), cfg, exact)
    if not np.all(current.se_ok):
        return Allocation.equal(a, K, J)
    for m in range(M):
        trial = a.copy()
        trial[m] = 0.0
        rep = evaluate(stats, Allocation.equal(trial, K, J), cfg, exact)
        if rep.feasible and rep.sum_he > current.sum_he:
            a, current = trial, rep
    return Allocation.equal(a, K, J)


def random_modes(M: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 51])
    while True:
        a = (rng.uniform(size=M) < 0.5).astype(float)
        if 0 < a.sum() < M:
            return a


def rap_epa(cfg: SystemConfig, seed: int) -> Allocation:
    return Allocation.equal(random_modes(cfg.M, seed), cfg.K, cfg.J)


@dataclass
class BruteForceResult:
    best: ScaResult
    patterns: list  # (pattern, sum_he or nan)


def brute_force_modes(stats: ChannelStats, theta, plan, cfg: SystemConfig, exact: bool = False) -> BruteForceResult:
    """Power-only optimization for every one of the 2^M mode patterns."""
    best = None
    rows = []
    for bits in itertools.product([0.0, 1.0], repeat=cfg.M):
        a = np.array(bits)
        try:
            res = solve_rap_pa(stats, theta, plan, cfg, a, exact=exact)
        except (InfeasibleError, IterationLimitError):
            rows.append((a, np.nan))
            continue
        ok = res.report.feasible
        rows.append((a, res.report.sum_he if ok else np.nan))
        if ok and (best is None or res.report.sum_he > best.report.sum_he):
            best = res
    if best is None:
        raise InfeasibleError("no feasible mode pattern", "SINR")
    return BruteForceResult(best, rows)
