"""Closed-form SINR, SE and average received RF energy under PPZF, plus the EH curve.

Every closed form works in the noise-normalized units of ``ChannelStats``.
The energy moments are written for a generic pair (u, v) of Gaussian vectors
seen through a uniformly oriented rank-r projector B:

    E|u^H B v|^2 = A |mu_u^H mu_v|^2 + C ||mu_u||^2 ||mu_v||^2
                   + 2 (r^2/L) Re(c mu_u^H mu_v) + r^2 |c|^2
                   + (r/L) (var_v ||mu_u||^2 + var_u ||mu_v||^2) + r var_u var_v

with A = r(rL-1)/(L(L^2-1)), C = r(L-r)/(L(L^2-1)) and c the per-antenna
cross-covariance of the fluctuations.  The default ``exact=False`` replaces
(A, C) by ((r/L)^2, 0), i.e. the projector's second moment is replaced by the
square of its mean.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .precoding import Allocation
from .system_model import ChannelStats, SystemConfig


# ---------------------------------------------------------------- EH model


def _omega(cfg: SystemConfig) -> float:
    return 1.0 / (1.0 + np.exp(cfg.xi * cfg.chi))


def logistic(e_rf, cfg: SystemConfig):
    return cfg.phi_max / (1.0 + np.exp(-cfg.xi * (np.asarray(e_rf, dtype=float) - cfg.chi)))


def nleh(e_rf, cfg: SystemConfig):
    """Harvested DC power for received RF energy ``e_rf``, zero at zero input."""
    omega = _omega(cfg)
    out = (logistic(e_rf, cfg) - cfg.phi_max * omega) / (1.0 - omega)
    return np.clip(out, 0.0, cfg.phi_max)


def nleh_inverse(gamma_tilde, cfg: SystemConfig):
    """Logistic inverse: the RF input whose logistic output is ``gamma_tilde``."""
    g = np.asarray(gamma_tilde, dtype=float)
    if np.any(g >= cfg.phi_max) or np.any(g <= 0):
        raise ValueError("logistic inverse needs 0 < gamma_tilde < phi_max")
    return cfg.chi - np.log((cfg.phi_max - g) / g) / cfg.xi


def rf_requirement(gamma_he, cfg: SystemConfig):
    """Smallest RF energy whose harvested output reaches ``gamma_he``.

    Written in log1p form so it stays accurate for outputs far below the
    saturation level.
    """
    g = np.asarray(gamma_he, dtype=float)
    if np.any(g >= cfg.phi_max):
        raise ValueError("harvesting threshold at or above saturation is unreachable")
    omega = _omega(cfg)
    x = g / cfg.phi_max
    return (np.log1p((1.0 - omega) * x / omega) - np.log1p(-x)) / cfg.xi


# ---------------------------------------------------------------- SE


def se_from_sinr(sinr, cfg: SystemConfig, tau: int | None = None):
    tau = cfg.tau if tau is None else tau
    return (1.0 - tau / cfg.tau_c) * np.log2(1.0 + np.asarray(sinr, dtype=float))


def sinr_terms(stats: ChannelStats, alloc: Allocation) -> dict:
    """Numerator and interference terms scaled by 1/rho_d."""
    r = stats.rank
    aI = alloc.a[:, None] * alloc.eta_I  # (M, K)
    eE = (1.0 - alloc.a)[:, None] * alloc.eta_E  # (M, J)
    err = stats.beta_I - stats.gamma_I  # (M, K) per receiver k
    root = np.sqrt(np.maximum(aI, 0.0)[:, None, :] * stats.gamma_I[:, :, None])  # [m, k, k']
    coh = root.sum(axis=0)  # [k, k']
    same = stats.plan.same_I
    num = r * np.diag(coh) ** 2
    pc = r * np.sum(np.where(same & ~np.eye(len(num), dtype=bool), coh**2, 0.0), axis=1)
    iui = err.T @ aI.sum(axis=1)
    eui = err.T @ eE.sum(axis=1)
    return {"num": num, "pc": pc, "iui": iui, "eui": eui}


def sinr_closed_form(stats: ChannelStats, alloc: Allocation, cfg: SystemConfig) -> np.ndarray:
    t = sinr_terms(stats, alloc)
    return t["num"] / (t["pc"] + t["iui"] + t["eui"] + 1.0 / cfg.rho_d)


# ---------------------------------------------------------------- energy


def projector_coeffs(r: int, L: int, exact: bool):
    if exact:
        den = L * (L * L - 1.0)
        return r * (r * L - 1.0) / den, r * (L - r) / den
    return (r / L) ** 2, 0.0


def projected_moment(mu_u, mu_v, var_u, var_v, cross, r: int, L: int, exact: bool = False):
    """E|u^H B v|^2 for the generic pair described in the module docstring."""
    A, C = projector_coeffs(r, L, exact)
    inner = np.sum(np.conj(mu_u) * mu_v, axis=-1)
    nu = np.sum(np.abs(mu_u) ** 2, axis=-1)
    nv = np.sum(np.abs(mu_v) ** 2, axis=-1)
    return (
        A * np.abs(inner) ** 2
        + C * nu * nv
        + 2.0 * r * r / L * np.real(cross * inner)
        + r * r * np.abs(cross) ** 2
        + r / L * (var_v * nu + var_u * nv)
        + r * var_u * var_v
    )


def estimate_covariances(stats: ChannelStats):
    """Per-antenna variance of each ER estimate and its covariance with every true channel.

    Returns ``var_hat`` (M, J) and ``cross`` (M, J, J') with
    cross[m, j, j'] = E[x_j y_j'^H] / I, x the fluctuation of g_j and y that
    of the estimate of g_j'.
    """
    K = stats.ris_cov  # [m, j, j'] = E[x_j x_j'^H]
    same = stats.plan.same_E.astype(float)  # [i, j']
    sq = np.sqrt(stats.tau_rho_u)
    summed = np.einsum("mji,ik->mjk", K, same)  # sum over i' in P_j'
    cross = stats.c_E[:, None, :] * sq * summed
    load = np.real(np.einsum("ij,mik,kj->mj", same, K, same))
    var_hat = stats.c_E**2 * (stats.tau_rho_u * load + 1.0)
    return var_hat, cross


@dataclass
class EnergyBreakdown:
    """Normalized energy contributions; Q = T sigma^2 [rho_d * (sum of terms) + 1]."""

    pair: np.ndarray  # (M, J, J') alpha_j' E|g_j^H B ghat_j'|^2
    ir: np.ndarray  # (M, J) E|g_j^H w_pzf|^2
    same_E: np.ndarray  # (J, J') co-pilot indicator

    def weighted(self, alloc: Allocation):
        eE = (1.0 - alloc.a)[:, None] * alloc.eta_E
        aI = (alloc.a * alloc.eta_I.sum(axis=1))[:, None]
        per = np.einsum("mjk,mk->mjk", self.pair, eE)
        off = ~np.eye(self.same_E.shape[0], dtype=bool)
        self_term = np.einsum("mjj->j", per)
        copilot = np.einsum("mjk,jk->j", per, (self.same_E & off).astype(float))
        cross = np.einsum("mjk,jk->j", per, (~self.same_E).astype(float))
        ir = np.sum(aI * self.ir, axis=0)
        return {"self": self_term, "copilot": copilot, "cross": cross, "ir": ir}


def energy_breakdown(stats: ChannelStats, exact: bool = False) -> EnergyBreakdown:
    r, L = stats.rank, stats.L
    mu = stats.los_mean  # (M, J, L)
    var_hat, cross = estimate_covariances(stats)
    s = stats.s_E
    mom = projected_moment(
        mu[:, :, None, :],
        mu[:, None, :, :],
        s[:, :, None],
        var_hat[:, None, :],
        cross,
        r,
        L,
        exact,
    )
    alpha = 1.0 / (r / L * (L * stats.gamma_E + stats.los_power))
    pair = alpha[:, None, :] * mom
    ir = s + stats.los_power / L
    return EnergyBreakdown(pair, ir, stats.plan.same_E)


def harvested_q_closed_form(
    stats: ChannelStats, alloc: Allocation, cfg: SystemConfig, exact: bool = False
) -> np.ndarray:
    parts = energy_breakdown(stats, exact).weighted(alloc)
    total = parts["self"] + parts["copilot"] + parts["cross"] + parts["ir"]
    return (cfg.tau_c - cfg.tau) * cfg.sigma_n2 * (cfg.rho_d * total + 1.0)


def harvested_q_shared_pilot(
    stats: ChannelStats, alloc: Allocation, cfg: SystemConfig, exact: bool = False
) -> np.ndarray:
    """Reduced evaluator for the case where every ER uses one pilot.

    Loops over co-pilot pairs only, with no separate non-co-pilot sum.
    """
    if not np.all(stats.plan.same_E):
        raise ValueError("reduced form needs every ER on the same pilot")
    r, L = stats.rank, stats.L
    mu = stats.los_mean
    var_hat, cross = estimate_covariances(stats)
    s = stats.s_E
    alpha = 1.0 / (r / L * (L * stats.gamma_E + stats.los_power))
    eE = (1.0 - alloc.a)[:, None] * alloc.eta_E
    J = s.shape[1]
    total = np.zeros(J)
    for j in range(J):
        for jp in stats.plan.copilot_E(j):
            mom = projected_moment(mu[:, j], mu[:, jp], s[:, j], var_hat[:, jp], cross[:, j, jp], r, L, exact)
            total[j] += np.sum(eE[:, jp] * alpha[:, jp] * mom)
    total += np.sum((alloc.a * alloc.eta_I.sum(axis=1))[:, None] * (s + stats.los_power / L), axis=0)
    return (cfg.tau_c - cfg.tau) * cfg.sigma_n2 * (cfg.rho_d * total + 1.0)


def psi_terms(los_power, s, gamma, r: int, L: int, exact: bool = False):
    """Own-precoder moment split into an LoS-driven part and an error part.

    Valid when the ER's scattered channel is uncorrelated with other ERs.
    The error part is (r/L)(s - gamma)(L gamma + ||mu||^2).
    """
    A, C = projector_coeffs(r, L, exact)
    psi2 = r / L * (s - gamma) * (L * gamma + los_power)
    psi1 = (A + C) * los_power**2 + 2.0 * (r + 1.0) * r / L * gamma * los_power + r * (r + 1.0) * gamma**2
    return psi1, psi2


def phi_terms(mu_j, mu_jp, s_j, gamma_j, upsilon, r: int, L: int, exact: bool = False):
    """Co-pilot moment E|g_j^H B ghat_j'|^2 split like ``psi_terms``.

    Uses the collinearity ghat_j' - mu_j' = upsilon (ghat_j - mu_j).
    """
    A, C = projector_coeffs(r, L, exact)
    inner = np.sum(np.conj(mu_j) * mu_jp, axis=-1)
    nj = np.sum(np.abs(mu_j) ** 2, axis=-1)
    njp = np.sum(np.abs(mu_jp) ** 2, axis=-1)
    gamma_jp = upsilon**2 * gamma_j
    phi2 = r / L * (s_j - gamma_j) * (L * gamma_jp + njp)
    phi1 = (
        A * np.abs(inner) ** 2
        + C * nj * njp
        + 2.0 * r * r / L * upsilon * gamma_j * np.real(inner)
        + r * r * gamma_jp * gamma_j
        + r / L * (gamma_jp * nj + gamma_j * njp)
        + r * gamma_j * gamma_jp
    )
    return phi1, phi2


# ---------------------------------------------------------------- report


@dataclass
class MetricsReport:
    sinr: np.ndarray
    se: np.ndarray
    rf_energy_q: np.ndarray
    harvested_nl: np.ndarray
    sum_he: float
    se_ok: np.ndarray
    he_ok: np.ndarray
    power_ok: bool
    extra: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return bool(np.all(self.se_ok) and np.all(self.he_ok) and self.power_ok)

    def rows(self) -> list[dict]:
        out = []
        for k, (g, s) in enumerate(zip(self.sinr, self.se)):
            out.append({"kind": "IR", "index": k, "sinr": g, "se": s, "q_joule": "", "he_watt": ""})
        for j, (q, h) in enumerate(zip(self.rf_energy_q, self.harvested_nl)):
            out.append({"kind": "ER", "index": j, "sinr": "", "se": "", "q_joule": q, "he_watt": h})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, ["kind", "index", "sinr", "se", "q_joule", "he_watt"], lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})
        return buf.getvalue()


def evaluate(
    stats: ChannelStats, alloc: Allocation, cfg: SystemConfig, exact: bool = False, tol: float = 1e-6
) -> MetricsReport:
    sinr = sinr_closed_form(stats, alloc, cfg)
    se = se_from_sinr(sinr, cfg)
    q = harvested_q_closed_form(stats, alloc, cfg, exact)
    he = nleh(q, cfg)
    # targets are T_k = 2^S_k - 1, so the check is on SINR (no pilot pre-log)
    se_ok = sinr >= cfg.sinr_min_vec * (1.0 - tol)
    he_ok = he >= cfg.gamma_min_vec * (1.0 - tol)
    return MetricsReport(sinr, se, q, he, float(he.sum()), se_ok, he_ok, alloc.power_ok())
