"""Monte Carlo references for the closed forms and for the channel moment identities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .precoding import Allocation, build_precoders
from .scattering import ScatteringMatrix
from .system_model import (
    Scenario,
    SystemConfig,
    draw_channel_batch,
    estimate_batch,
    los_products,
    make_scenario,
)


@dataclass
class OracleResult:
    sinr: np.ndarray
    q: np.ndarray
    q_stderr: np.ndarray
    ds: np.ndarray
    bu: np.ndarray
    iui: np.ndarray
    eui: np.ndarray
    n_real: int


def _chunks(n: int, size: int):
    done = 0
    while done < n:
        step = min(size, n - done)
        yield done, step
        done += step


def monte_carlo_oracle(
    cfg: SystemConfig,
    theta,
    alloc: Allocation,
    plan=None,
    n_real: int = 20000,
    seed: int = 0,
    scenario: Scenario | None = None,
    chunk: int = 1000,
) -> OracleResult:
    """Sampled hardening-bound SINR and mean received RF energy.

    Each chunk of realizations uses its own child seed, so results depend
    only on (seed, n_real, chunk).
    """
    if n_real < 1:
        raise ValueError("n_real must be positive")
    scen = scenario if scenario is not None else make_scenario(cfg, seed)
    plan = plan if plan is not None else scen.plan
    theta_m = getattr(theta, "theta", theta)
    F_bar, z, _ = los_products(scen.geo, scen.ls, theta_m, cfg)
    M, K, J = cfg.M, cfg.K, cfg.J
    amp_I = np.sqrt(cfg.rho_d * alloc.a[:, None] * alloc.eta_I)  # (M, K)
    amp_E = np.sqrt(cfg.rho_d * (1.0 - alloc.a)[:, None] * alloc.eta_E)  # (M, J)
    scale = (cfg.tau_c - cfg.tau) * cfg.sigma_n2

    s_desired = np.zeros(K, dtype=complex)
    s2_desired = np.zeros(K)
    s2_ir = np.zeros((K, K))
    s2_er = np.zeros((K, J))
    e_sum = np.zeros(J)
    e_sq = np.zeros(J)
    children = np.random.SeedSequence([seed, 31]).spawn(-(-n_real // chunk))
    for child, (_, n) in zip(children, _chunks(n_real, chunk)):
        rng = np.random.default_rng(child)
        real = draw_channel_batch(rng, scen.ls, F_bar, z, theta_m, cfg, n)
        est = estimate_batch(rng, real, plan, scen.ls, cfg)
        pre = build_precoders(est, cfg)
        gI = real.g_I.conj()
        # IR side: sum over APs of weighted effective gains
        S_I = np.einsum("rmkl,rmql,mq->rkq", gI, pre.w_pzf, amp_I)  # [r, k, k']
        S_E = np.einsum("rmkl,rmjl,mj->rkj", gI, pre.w_pmrt, amp_E)
        d = np.einsum("rkk->rk", S_I)
        s_desired += d.sum(axis=0)
        s2_desired += np.sum(np.abs(d) ** 2, axis=0)
        s2_ir += np.sum(np.abs(S_I) ** 2, axis=0)
        s2_er += np.sum(np.abs(S_E) ** 2, axis=0)
        # ER side: non-coherent sum of per-AP received energy
        gE = real.g_E.conj()
        p_E = np.abs(np.einsum("rmjl,rmql->rmjq", gE, pre.w_pmrt)) ** 2
        p_I = np.abs(np.einsum("rmjl,rmkl->rmjk", gE, pre.w_pzf)) ** 2
        energy = np.einsum("rmjq,mq->rj", p_E, amp_E**2) + np.einsum("rmjk,mk->rj", p_I, amp_I**2)
        e_sum += energy.sum(axis=0)
        e_sq += np.sum(energy**2, axis=0)

    ds = s_desired / n_real
    bu = s2_desired / n_real - np.abs(ds) ** 2
    iui_all = s2_ir / n_real
    iui = iui_all.sum(axis=1) - np.diag(iui_all)
    eui = (s2_er / n_real).sum(axis=1)
    sinr = np.abs(ds) ** 2 / (bu + iui + eui + 1.0)
    mean_e = e_sum / n_real
    var = np.maximum(e_sq / n_real - mean_e**2, 0.0)
    # noise floor added once so zero transmit power gives the floor exactly
    q = scale * (mean_e + 1.0)
    return OracleResult(sinr, q, scale * np.sqrt(var / n_real), ds, bu, iui, eui, n_real)


# ---------------------------------------------------------------- moment checks


@dataclass
class MomentValues:
    second_true: float  # E||g||^2
    second_est: float  # E||ghat||^2
    fourth_est: float  # E||ghat||^4
    projector: float  # E|x^H B x|^2


def moment_values(L: int, beta: float, N: int, zeta_bar: float, kappa: float, los_norm2: float, gamma: float,
                 proj_dim: int, proj_rank_removed: int, alpha: float) -> MomentValues:
    """Closed-form second and fourth moments of the aggregated ER channel and its estimate.

    ``los_norm2`` is ||g_bar||^2.  The projector entry uses a rank
    (proj_dim - proj_rank_removed) complement and x ~ CN(0, alpha I).
    """
    mu2 = zeta_bar * kappa * los_norm2
    r = proj_dim - proj_rank_removed
    return MomentValues(
        second_true=L * beta + L * N * zeta_bar + mu2,
        second_est=L * gamma + mu2,
        fourth_est=mu2**2 + 2.0 * (L + 1) * gamma * mu2 + L * (L + 1) * gamma**2,
        projector=r * (r + 1) * alpha**2,
    )


def projector_moment_closed(M: int, N: int, alpha: float) -> float:
    return (M - N) * (M - N + 1) * alpha**2


def projector_moment_sampled(M: int, N: int, alpha: float, n_draws: int, seed: int) -> float:
    """E|x^H B x|^2 with B the complement projector of a random full-rank M x N matrix."""
    rng = np.random.default_rng([seed, 41])
    R = rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))
    B = np.eye(M) - R @ np.linalg.solve(R.conj().T @ R, R.conj().T) if N else np.eye(M)
    total = 0.0
    for _, n in _chunks(n_draws, 20000):
        x = np.sqrt(alpha / 2.0) * (rng.standard_normal((n, M)) + 1j * rng.standard_normal((n, M)))
        quad = np.real(np.einsum("ri,ij,rj->r", x.conj(), B, x))
        total += np.sum(quad**2)
    return total / n_draws


@dataclass
class ErMomentCheck:
    closed: MomentValues
    sampled_second_true: float
    sampled_second_est: float
    sampled_fourth_est: float


def er_moment_check(cfg: SystemConfig, theta, m: int, j: int, n_draws: int, seed: int) -> ErMomentCheck:
    """Sampled moments of g_E[m, j] and its estimate for one scenario.

    The ER should be alone on its pilot so the estimate variance equals gamma.
    """
    from .system_model import channel_statistics

    scen = make_scenario(cfg, seed)
    theta_m = getattr(theta, "theta", theta)
    stats = channel_statistics(scen.ls, scen.geo, theta_m, scen.plan, cfg)
    F_bar, z, _ = los_products(scen.geo, scen.ls, theta_m, cfg)
    rng_root = np.random.SeedSequence([seed, 42])
    n_chunks = -(-n_draws // 5000)
    acc = np.zeros(3)
    for child, (_, n) in zip(rng_root.spawn(n_chunks), _chunks(n_draws, 5000)):
        rng = np.random.default_rng(child)
        real = draw_channel_batch(rng, scen.ls, F_bar, z, theta_m, cfg, n)
        est = estimate_batch(rng, real, scen.plan, scen.ls, cfg)
        g2 = np.sum(np.abs(real.g_E[:, m, j]) ** 2, axis=-1)
        h2 = np.sum(np.abs(est.ghat_E[:, m, j]) ** 2, axis=-1)
        acc += [g2.sum(), h2.sum(), (h2**2).sum()]
    acc /= n_draws
    closed = moment_values(
        cfg.L,
        stats.beta_E[m, j],
        cfg.N,
        stats.zeta_bar[m, j],
        stats.kappa,
        float(np.sum(np.abs(stats.g_bar[m, j]) ** 2)),
        stats.gamma_E[m, j],
        cfg.L,
        stats.tau_K,
        1.0,
    )
    return ErMomentCheck(closed, *acc)
