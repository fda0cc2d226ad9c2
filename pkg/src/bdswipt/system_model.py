"""Network geometry, large-scale fading, channel draws and MMSE channel estimation.

All powers inside the channel model are normalized by the receiver noise power,
so ``rho_d`` and ``rho_u`` are linear SNRs and the pilot-projection noise has
unit variance.  ``sigma_n2`` (in W) only re-enters when converting received
signal power back to physical energy at the energy receivers.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


def _dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class SystemConfig:
    """Scalar parameters of one deployment.

    Field names double as the JSON configuration keys.
    """

    M: int = 8
    L: int = 12
    K: int = 3
    J: int = 4
    N: int = 16
    tau_c: int = 200
    sigma_n2: float = _dbm_to_watt(-92.0)
    rho_d: Optional[float] = None  # default: 1 W over sigma_n2
    rho_u: Optional[float] = None  # default: 0.1 W over sigma_n2
    kappa: float = 10.0
    prf_i: int = 0
    prf_e: int = 3
    xi: float = 150.0
    chi: float = 0.024
    phi_max: float = 0.024
    gamma_min: Sequence[float] | float = 0.0
    se_min: Sequence[float] | float = 1.0
    lambda_pen: float = 10.0
    lambda_se: Optional[float] = None  # default: 2 * J * phi_max
    blockage_prob: float = 0.0
    area_side: float = 500.0
    h_ap: float = 15.0
    h_ris: float = 15.0
    h_rx: float = 1.65
    freq_mhz: float = 1900.0
    wavelength: Optional[float] = None
    d_bs: Optional[float] = None
    d_h: Optional[float] = None
    d_v: Optional[float] = None
    shadow_std_db: float = 8.0
    slope_d0: float = 10.0
    slope_d1: float = 50.0
    er_cluster_radius: float = 20.0
    er_cluster_offset: float = 10.0

    def __post_init__(self) -> None:
        if self.rho_d is None:
            self.rho_d = 1.0 / self.sigma_n2
        if self.rho_u is None:
            self.rho_u = 0.1 / self.sigma_n2
        if self.lambda_se is None:
            self.lambda_se = 2.0 * self.J * self.phi_max
        if self.wavelength is None:
            self.wavelength = SPEED_OF_LIGHT / (self.freq_mhz * 1e6)
        for name in ("d_bs", "d_h", "d_v"):
            if getattr(self, name) is None:
                setattr(self, name, self.wavelength / 2.0)
        if not np.isscalar(self.gamma_min):
            self.gamma_min = [float(x) for x in self.gamma_min]
        if not np.isscalar(self.se_min):
            self.se_min = [float(x) for x in self.se_min]
        self.validate()

    @property
    def tau(self) -> int:
        return self.K + self.J - (self.prf_i + self.prf_e)

    @property
    def n_side(self) -> int:
        return math.isqrt(self.N)

    @property
    def gamma_min_vec(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.gamma_min, dtype=float), (self.J,)).copy()

    @property
    def se_min_vec(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.se_min, dtype=float), (self.K,)).copy()

    @property
    def sinr_min_vec(self) -> np.ndarray:
        return 2.0 ** self.se_min_vec - 1.0

    def validate(self) -> None:
        if min(self.M, self.L, self.K, self.J, self.N) < 1:
            raise ValueError("M, L, K, J and N must all be positive")
        if self.L <= self.K:
            raise ValueError(f"PZF needs L > K, got L={self.L}, K={self.K}")
        if not (0 <= self.prf_i < self.K and 0 <= self.prf_e < self.J):
            raise ValueError("pilot reuse factors must leave at least one pilot per group")
        if not (self.K <= self.tau < self.tau_c):
            raise ValueError(f"need K <= tau < tau_c, got tau={self.tau}")
        if self.n_side ** 2 != self.N:
            raise ValueError(f"planar RIS needs a perfect-square N, got {self.N}")
        if self.xi <= 0 or self.phi_max <= 0:
            raise ValueError("xi and phi_max must be positive")
        scalars = (self.rho_d, self.rho_u, self.sigma_n2, self.kappa, self.lambda_pen, self.lambda_se)
        if min(scalars) < 0 or np.any(self.gamma_min_vec < 0) or np.any(self.se_min_vec < 0):
            raise ValueError("powers and thresholds must be non-negative")
        if not 0.0 <= self.blockage_prob <= 1.0:
            raise ValueError("blockage_prob must lie in [0, 1]")

    def replace(self, **changes) -> "SystemConfig":
        data = self.to_dict()
        data.update(changes)
        # derived defaults follow the new values unless given explicitly
        for key in ("lambda_se",):
            if key not in changes and "J" in changes:
                data[key] = None
        return SystemConfig(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "SystemConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class Geometry:
    """Positions (m) and the angles derived from them.

    Horizontal distances use the wrap-around (torus) metric.
    """

    side: float
    ap_xy: np.ndarray  # (M, 2)
    ir_xy: np.ndarray  # (K, 2)
    er_xy: np.ndarray  # (J, 2)
    ris_xy: np.ndarray  # (2,)
    h_ap: float
    h_ris: float
    h_rx: float
    dist_ap_ir: np.ndarray  # (M, K)
    dist_ap_er: np.ndarray  # (M, J)
    dist_ap_ris: np.ndarray  # (M,)
    dist_ris_er: np.ndarray  # (J,)
    ap_aoa_azi: np.ndarray  # (M,) at the AP, towards the RIS
    ap_aoa_ele: np.ndarray
    ris_aod_azi: np.ndarray  # (M,) at the RIS, towards each AP
    ris_aod_ele: np.ndarray
    er_azi: np.ndarray  # (J,) at the RIS, towards each ER
    er_ele: np.ndarray

    def state_vector(self) -> np.ndarray:
        """x/y coordinates of APs, RIS, IRs and ERs scaled to [0, 1]."""
        parts = [self.ap_xy.ravel(), self.ris_xy.ravel(), self.ir_xy.ravel(), self.er_xy.ravel()]
        return np.concatenate(parts) / self.side


def _wrap(delta: np.ndarray, side: float) -> np.ndarray:
    return (delta + side / 2.0) % side - side / 2.0


def generate_geometry(cfg: SystemConfig, seed: int) -> Geometry:
    rng = np.random.default_rng([seed, 11])
    side = cfg.area_side
    ap = rng.uniform(0.0, side, size=(cfg.M, 2))
    ir = rng.uniform(0.0, side, size=(cfg.K, 2))
    ris = rng.uniform(0.0, side, size=2)

    # ER zone: a disc next to the RIS
    phi0 = rng.uniform(-np.pi, np.pi)
    centre = ris + cfg.er_cluster_offset * np.array([np.cos(phi0), np.sin(phi0)])
    rad = cfg.er_cluster_radius * np.sqrt(rng.uniform(size=cfg.J))
    ang = rng.uniform(-np.pi, np.pi, size=cfg.J)
    er = (centre + np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)) % side

    d_ap_ir = np.linalg.norm(_wrap(ir[None, :, :] - ap[:, None, :], side), axis=-1)
    d_ap_er = np.linalg.norm(_wrap(er[None, :, :] - ap[:, None, :], side), axis=-1)
    v_ap_ris = _wrap(ris[None, :] - ap, side)
    d_ap_ris = np.linalg.norm(v_ap_ris, axis=-1)
    v_ris_er = _wrap(er - ris[None, :], side)
    d_ris_er = np.linalg.norm(v_ris_er, axis=-1)

    dh_ap = cfg.h_ris - cfg.h_ap
    dh_er = cfg.h_rx - cfg.h_ris
    return Geometry(
        side=side,
        ap_xy=ap,
        ir_xy=ir,
        er_xy=er,
        ris_xy=ris,
        h_ap=cfg.h_ap,
        h_ris=cfg.h_ris,
        h_rx=cfg.h_rx,
        dist_ap_ir=d_ap_ir,
        dist_ap_er=d_ap_er,
        dist_ap_ris=d_ap_ris,
        dist_ris_er=d_ris_er,
        ap_aoa_azi=np.arctan2(v_ap_ris[:, 1], v_ap_ris[:, 0]),
        ap_aoa_ele=np.arctan2(np.full(cfg.M, dh_ap), d_ap_ris),
        ris_aod_azi=np.arctan2(-v_ap_ris[:, 1], -v_ap_ris[:, 0]),
        ris_aod_ele=np.arctan2(np.full(cfg.M, -dh_ap), d_ap_ris),
        er_azi=np.arctan2(v_ris_er[:, 1], v_ris_er[:, 0]),
        er_ele=np.arctan2(np.full(cfg.J, dh_er), d_ris_er),
    )


def three_slope_db(d_m, h_tx: float, h_rx: float, cfg: SystemConfig) -> np.ndarray:
    """Three-slope path loss (dB, negative) with a Hata-style intercept."""
    f = cfg.freq_mhz
    intercept = (
        46.3
        + 33.9 * np.log10(f)
        - 13.82 * np.log10(h_tx)
        - (1.1 * np.log10(f) - 0.7) * h_rx
        + (1.56 * np.log10(f) - 0.8)
    )
    d = np.maximum(np.asarray(d_m, dtype=float), 1.0) / 1000.0
    d0, d1 = cfg.slope_d0 / 1000.0, cfg.slope_d1 / 1000.0
    far = -intercept - 35.0 * np.log10(d)
    mid = -intercept - 15.0 * np.log10(d1) - 20.0 * np.log10(d)
    near = -intercept - 15.0 * np.log10(d1) - 20.0 * np.log10(d0)
    return np.where(d > d1, far, np.where(d > d0, mid, near))


@dataclass(frozen=True)
class LargeScale:
    beta_I: np.ndarray  # (M, K)
    beta_E: np.ndarray  # (M, J), zero where blocked
    beta_E_nominal: np.ndarray  # (M, J) before blockage
    zeta: np.ndarray  # (M,)
    alpha_ris: np.ndarray  # (J,)
    kappa: float

    @property
    def zeta_bar(self) -> np.ndarray:
        return self.zeta[:, None] * self.alpha_ris[None, :] / (1.0 + self.kappa)


def compute_large_scale(geo: Geometry, cfg: SystemConfig, seed: int) -> LargeScale:
    rng = np.random.default_rng([seed, 12])

    def lsfc(d_h, h_tx, h_rx):
        d = np.sqrt(np.asarray(d_h) ** 2 + (h_tx - h_rx) ** 2)
        pl = three_slope_db(d, h_tx, h_rx, cfg)
        shadow = cfg.shadow_std_db * rng.standard_normal(np.shape(d))
        pl = pl + np.where(d > cfg.slope_d1, shadow, 0.0)
        return 10.0 ** (pl / 10.0)

    beta_I = lsfc(geo.dist_ap_ir, cfg.h_ap, cfg.h_rx)
    beta_E_nom = lsfc(geo.dist_ap_er, cfg.h_ap, cfg.h_rx)
    zeta = lsfc(geo.dist_ap_ris, cfg.h_ap, cfg.h_ris)
    alpha = lsfc(geo.dist_ris_er, cfg.h_ris, cfg.h_rx)
    blocked = rng.uniform(size=beta_E_nom.shape) < cfg.blockage_prob
    beta_E = np.where(blocked, 0.0, beta_E_nom)
    return LargeScale(beta_I, beta_E, beta_E_nom, zeta, alpha, float(cfg.kappa))


def steering_ula(L: int, azi: float, ele: float, spacing: float, wavelength: float) -> np.ndarray:
    l = np.arange(L)
    return np.exp(1j * 2 * np.pi * spacing / wavelength * l * np.cos(azi) * np.cos(ele))


def steering_upa(N: int, azi: float, ele: float, d_h: float, d_v: float, wavelength: float) -> np.ndarray:
    side = math.isqrt(N)
    if side * side != N:
        raise ValueError(f"planar array needs a perfect-square element count, got {N}")
    n = np.arange(N)
    n_v = n // side
    n_h = n % side
    rho_h = 2 * np.pi * d_h / wavelength * n_h * np.sin(azi) * np.cos(ele)
    rho_v = 2 * np.pi * d_v / wavelength * n_v * np.sin(ele)
    return np.exp(1j * (rho_h + rho_v))


@dataclass(frozen=True)
class PilotPlan:
    pilot_I: np.ndarray  # (K,) pilot index of each IR, in [0, tau_K)
    pilot_E: np.ndarray  # (J,) pilot index of each ER, in [tau_K, tau)
    tau_K: int
    tau_J: int

    @property
    def tau(self) -> int:
        return self.tau_K + self.tau_J

    def copilot_I(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.pilot_I == self.pilot_I[k])

    def copilot_E(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.pilot_E == self.pilot_E[j])

    @property
    def same_I(self) -> np.ndarray:
        """Boolean (K, K) co-pilot indicator."""
        return self.pilot_I[:, None] == self.pilot_I[None, :]

    @property
    def same_E(self) -> np.ndarray:
        return self.pilot_E[:, None] == self.pilot_E[None, :]

    def representative_I(self) -> np.ndarray:
        """First IR on each IR pilot; its estimate spans that pilot's column."""
        return np.array([np.flatnonzero(self.pilot_I == p)[0] for p in range(self.tau_K)])


def assign_pilots(cfg: SystemConfig) -> PilotPlan:
    tau_K = cfg.K - cfg.prf_i
    tau_J = cfg.J - cfg.prf_e
    if cfg.tau < cfg.K:
        raise ValueError(f"pilot length {cfg.tau} is shorter than K={cfg.K}")
    pilot_I = np.arange(cfg.K) % tau_K
    pilot_E = tau_K + np.arange(cfg.J) % tau_J
    return PilotPlan(pilot_I, pilot_E, tau_K, tau_J)


@dataclass(frozen=True)
class ChannelStats:
    """Long-term statistics used by every closed form.

    ``ris_cov[m, j, j']`` is the per-antenna covariance between the
    fluctuating parts of the aggregated ER channels j and j' at AP m.  Its
    diagonal equals beta_E + N * zeta_bar; the off-diagonal entries come from
    the shared AP-RIS scattering matrix.
    """

    L: int
    N: int
    tau: int
    tau_K: int
    tau_rho_u: float
    beta_I: np.ndarray  # (M, K)
    beta_E: np.ndarray  # (M, J)
    zeta_bar: np.ndarray  # (M, J)
    kappa: float
    g_bar: np.ndarray  # (M, J, L) LoS product F_bar Theta z_unit
    c_I: np.ndarray
    gamma_I: np.ndarray
    c_E: np.ndarray
    gamma_E: np.ndarray
    upsilon: np.ndarray  # (M, J, J), meaningful for co-pilot pairs
    ris_cov: np.ndarray  # (M, J, J) complex
    plan: PilotPlan

    @property
    def M(self) -> int:
        return self.beta_I.shape[0]

    @property
    def K(self) -> int:
        return self.beta_I.shape[1]

    @property
    def J(self) -> int:
        return self.beta_E.shape[1]

    @property
    def rank(self) -> int:
        """Dimension of the protected subspace left to the E-APs."""
        return self.L - self.tau_K

    @property
    def los_mean(self) -> np.ndarray:
        """sqrt(zeta_bar kappa) g_bar, the mean of g_E and of its estimate."""
        return np.sqrt(self.zeta_bar * self.kappa)[..., None] * self.g_bar

    @property
    def los_power(self) -> np.ndarray:
        return self.zeta_bar * self.kappa * np.sum(np.abs(self.g_bar) ** 2, axis=-1)

    @property
    def s_E(self) -> np.ndarray:
        """Per-antenna variance of g_E."""
        return self.beta_E + self.N * self.zeta_bar


def mmse_coefficients(beta: np.ndarray, pilots: np.ndarray, tau_rho_u: float, noise: float = 1.0):
    """MMSE gain c and estimate variance gamma for one receiver class.

    ``beta`` holds the per-antenna variances (M, n); receivers with equal
    ``pilots`` entries contaminate each other.
    """
    same = pilots[:, None] == pilots[None, :]
    load = beta @ same.T.astype(float)  # sum over co-pilot receivers
    c = np.sqrt(tau_rho_u) * beta / (tau_rho_u * load + noise)
    gamma = np.sqrt(tau_rho_u) * beta * c
    return c, gamma


def los_products(geo: Geometry, ls: LargeScale, theta: np.ndarray, cfg: SystemConfig):
    """F_bar (M, L, N), z (J, N) and g_bar (M, J, L).

    g_bar is formed with the unit-gain steering vectors, so the LoS mean of
    g_E is sqrt(zeta_bar kappa) g_bar with zeta_bar already carrying alpha.
    """
    a_l = np.stack(
        [steering_ula(cfg.L, az, el, cfg.d_bs, cfg.wavelength) for az, el in zip(geo.ap_aoa_azi, geo.ap_aoa_ele)]
    )
    a_n = np.stack(
        [
            steering_upa(cfg.N, az, el, cfg.d_h, cfg.d_v, cfg.wavelength)
            for az, el in zip(geo.ris_aod_azi, geo.ris_aod_ele)
        ]
    )
    F_bar = a_l[:, :, None] * a_n.conj()[:, None, :]
    z = np.stack(
        [steering_upa(cfg.N, az, el, cfg.d_h, cfg.d_v, cfg.wavelength) for az, el in zip(geo.er_azi, geo.er_ele)]
    ) * np.sqrt(ls.alpha_ris)[:, None]
    g_bar = np.einsum("mln,nk,jk->mjl", F_bar, theta, z / np.sqrt(ls.alpha_ris)[:, None])
    return F_bar, z, g_bar


def channel_statistics(ls: LargeScale, geo: Geometry, theta, plan: PilotPlan, cfg: SystemConfig) -> ChannelStats:
    theta = getattr(theta, "theta", theta)
    _, z, g_bar = los_products(geo, ls, theta, cfg)
    tau_rho_u = cfg.tau * cfg.rho_u
    zeta_bar = ls.zeta_bar
    s_E = ls.beta_E + cfg.N * zeta_bar
    c_I, gamma_I = mmse_coefficients(ls.beta_I, plan.pilot_I, tau_rho_u)
    c_E, gamma_E = mmse_coefficients(s_E, plan.pilot_E, tau_rho_u)
    upsilon = s_E[:, None, :] / s_E[:, :, None]
    # cross-covariance of the scattered parts: zeta/(1+kappa) * z_j'^H z_j
    gram = z.conj() @ z.T  # gram[j', j] = z_j'^H z_j
    scale = ls.zeta / (1.0 + ls.kappa)
    ris_cov = scale[:, None, None] * gram.T[None, :, :]
    ris_cov = ris_cov + np.einsum("mj,jk->mjk", ls.beta_E, np.eye(cfg.J))
    return ChannelStats(
        L=cfg.L,
        N=cfg.N,
        tau=cfg.tau,
        tau_K=plan.tau_K,
        tau_rho_u=tau_rho_u,
        beta_I=ls.beta_I,
        beta_E=ls.beta_E,
        zeta_bar=zeta_bar,
        kappa=ls.kappa,
        g_bar=g_bar,
        c_I=c_I,
        gamma_I=gamma_I,
        c_E=c_E,
        gamma_E=gamma_E,
        upsilon=upsilon,
        ris_cov=ris_cov,
        plan=plan,
    )


@dataclass
class ChannelRealization:
    """One coherence block.  Arrays may carry a leading batch axis."""

    g_I: np.ndarray  # (..., M, K, L)
    h_E: np.ndarray  # (..., M, J, L)
    F: np.ndarray  # (..., M, L, N)
    F_bar: np.ndarray  # (M, L, N)
    F_tilde: np.ndarray  # (..., M, L, N)
    z: np.ndarray  # (J, N)
    theta: np.ndarray  # (N, N)
    g_E: np.ndarray  # (..., M, J, L)
    g_bar_E: np.ndarray  # (M, J, L) F_bar Theta z_unit


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def draw_channel_batch(
    rng: np.random.Generator,
    ls: LargeScale,
    F_bar: np.ndarray,
    z: np.ndarray,
    theta: np.ndarray,
    cfg: SystemConfig,
    n: int,
) -> ChannelRealization:
    M, L, N, K, J = cfg.M, cfg.L, cfg.N, cfg.K, cfg.J
    g_I = np.sqrt(ls.beta_I)[None, :, :, None] * _cn(rng, (n, M, K, L))
    h_E = np.sqrt(ls.beta_E)[None, :, :, None] * _cn(rng, (n, M, J, L))
    F_tilde = _cn(rng, (n, M, L, N))
    amp = np.sqrt(ls.zeta / (1.0 + ls.kappa))[None, :, None, None]
    F = amp * (np.sqrt(ls.kappa) * F_bar[None] + F_tilde)
    tz = z @ theta.T  # rows: Theta z_j
    g_E = h_E + np.einsum("rmln,jn->rmjl", F, tz)
    g_bar = np.einsum("mln,jn->mjl", F_bar, tz / np.sqrt(ls.alpha_ris)[:, None])
    return ChannelRealization(g_I, h_E, F, F_bar, F_tilde, z, theta, g_E, g_bar)


def draw_channels(ls: LargeScale, geo: Geometry, theta, cfg: SystemConfig, seed: int) -> ChannelRealization:
    theta = getattr(theta, "theta", theta)
    F_bar, z, _ = los_products(geo, ls, theta, cfg)
    rng = np.random.default_rng([seed, 13])
    batch = draw_channel_batch(rng, ls, F_bar, z, theta, cfg, 1)
    return ChannelRealization(
        g_I=batch.g_I[0],
        h_E=batch.h_E[0],
        F=batch.F[0],
        F_bar=F_bar,
        F_tilde=batch.F_tilde[0],
        z=z,
        theta=theta,
        g_E=batch.g_E[0],
        g_bar_E=batch.g_bar_E,
    )


@dataclass
class EstimateSet:
    ghat_I: np.ndarray  # (..., M, K, L)
    ghat_E: np.ndarray  # (..., M, J, L)
    gamma_I: np.ndarray
    gamma_E: np.ndarray
    c_I: np.ndarray
    c_E: np.ndarray
    upsilon: np.ndarray
    mean_E: np.ndarray  # (M, J, L) LoS mean of the ER estimates
    plan: PilotPlan


def estimate_batch(
    rng: np.random.Generator,
    real: ChannelRealization,
    plan: PilotPlan,
    ls: LargeScale,
    cfg: SystemConfig,
) -> EstimateSet:
    """Pilot projections are synthesized from co-pilot sums plus unit noise."""
    tau_rho_u = cfg.tau * cfg.rho_u
    sq = np.sqrt(tau_rho_u)
    s_E = ls.beta_E + cfg.N * ls.zeta_bar
    c_I, gamma_I = mmse_coefficients(ls.beta_I, plan.pilot_I, tau_rho_u)
    c_E, gamma_E = mmse_coefficients(s_E, plan.pilot_E, tau_rho_u)

    lead = real.g_I.shape[:-3]
    M, L = cfg.M, cfg.L
    sel_I = (plan.pilot_I[None, :] == np.arange(plan.tau_K)[:, None]).astype(float)  # (tau_K, K)
    y_I = sq * np.einsum("pk,...mkl->...mpl", sel_I, real.g_I) + _cn(rng, lead + (M, plan.tau_K, L))
    ghat_I = c_I[..., None] * y_I[..., plan.pilot_I, :]

    e_idx = plan.pilot_E - plan.tau_K
    sel_E = (e_idx[None, :] == np.arange(plan.tau_J)[:, None]).astype(float)  # (tau_J, J)
    mean_E = np.sqrt(ls.zeta_bar * ls.kappa)[..., None] * real.g_bar_E  # (M, J, L)
    y_E = sq * np.einsum("pj,...mjl->...mpl", sel_E, real.g_E - mean_E) + _cn(rng, lead + (M, plan.tau_J, L))
    ghat_E = mean_E + c_E[..., None] * y_E[..., e_idx, :]
    upsilon = s_E[:, None, :] / s_E[:, :, None]
    return EstimateSet(ghat_I, ghat_E, gamma_I, gamma_E, c_I, c_E, upsilon, mean_E, plan)


def mmse_estimate(real: ChannelRealization, plan: PilotPlan, ls: LargeScale, cfg: SystemConfig, seed: int) -> EstimateSet:
    rng = np.random.default_rng([seed, 14])
    return estimate_batch(rng, real, plan, ls, cfg)


@dataclass
class Scenario:
    """Everything that stays fixed across coherence blocks for one seed."""

    cfg: SystemConfig
    seed: int
    geo: Geometry
    ls: LargeScale
    plan: PilotPlan


def make_scenario(cfg: SystemConfig, seed: int) -> Scenario:
    geo = generate_geometry(cfg, seed)
    ls = compute_large_scale(geo, cfg, seed)
    return Scenario(cfg, seed, geo, ls, assign_pilots(cfg))
