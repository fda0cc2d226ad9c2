"""Protective partial zero-forcing precoders and the allocation container."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .system_model import EstimateSet, SystemConfig


class RankDeficiencyError(np.linalg.LinAlgError):
    """Estimated IR channel matrix at some AP is not full column rank."""


@dataclass
class Allocation:
    a: np.ndarray  # (M,) mode, 1 = information AP
    eta_I: np.ndarray  # (M, K)
    eta_E: np.ndarray  # (M, J)

    def __post_init__(self) -> None:
        self.a = np.asarray(self.a, dtype=float)
        self.eta_I = np.asarray(self.eta_I, dtype=float)
        self.eta_E = np.asarray(self.eta_E, dtype=float)

    @property
    def load(self) -> np.ndarray:
        return self.a * self.eta_I.sum(axis=1) + (1.0 - self.a) * self.eta_E.sum(axis=1)

    def power_ok(self, tol: float = 1e-9) -> bool:
        nonneg = self.eta_I.min(initial=0.0) >= -tol and self.eta_E.min(initial=0.0) >= -tol
        return bool(nonneg and np.all(self.load <= 1.0 + tol))

    @classmethod
    def equal(cls, a, K: int, J: int) -> "Allocation":
        a = np.asarray(a, dtype=float)
        M = a.size
        return cls(a, np.full((M, K), 1.0 / K), np.full((M, J), 1.0 / J))

    def rounded(self) -> "Allocation":
        return Allocation((self.a >= 0.5).astype(float), self.eta_I, self.eta_E)

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "eta_I": self.eta_I.tolist(), "eta_E": self.eta_E.tolist()}


@dataclass
class PrecoderSet:
    """Arrays may carry a leading realization axis."""

    w_pzf: np.ndarray  # (..., M, K, L)
    w_pmrt: np.ndarray  # (..., M, J, L)
    B: np.ndarray  # (..., M, L, L)
    alpha_pzf: np.ndarray  # (M, K)
    alpha_pmrt: np.ndarray  # (M, J)


def pmrt_alpha(gamma_E: np.ndarray, los_power: np.ndarray, L: int, rank: int) -> np.ndarray:
    return 1.0 / (rank / L * (L * gamma_E + los_power))


def build_precoders(est: EstimateSet, cfg: SystemConfig, cond_max: float = 1e12) -> PrecoderSet:
    plan = est.plan
    L = cfg.L
    rank = L - plan.tau_K
    reps = plan.representative_I()
    G = np.swapaxes(est.ghat_I[..., reps, :], -1, -2)  # (..., M, L, tau_K)
    gram = np.swapaxes(G.conj(), -1, -2) @ G
    if not np.all(np.isfinite(gram)) or np.any(np.linalg.cond(gram) > cond_max):
        raise RankDeficiencyError("IR estimate Gram matrix is singular at some AP")
    P = np.swapaxes(np.linalg.solve(gram, np.swapaxes(G.conj(), -1, -2)), -1, -2).conj()  # G (G^H G)^-1
    # rescale each IR's column so E||w||^2 = 1 when it is not its pilot's representative
    ratio = est.c_I[:, reps][:, plan.pilot_I] / est.c_I  # (M, K)
    alpha_pzf = rank * est.gamma_I
    cols = np.swapaxes(P[..., plan.pilot_I], -1, -2)  # (..., M, K, L)
    w_pzf = (np.sqrt(alpha_pzf) * ratio)[..., None] * cols
    B = np.eye(L) - P @ np.swapaxes(G.conj(), -1, -2)
    los_power = np.sum(np.abs(est.mean_E) ** 2, axis=-1)
    alpha_pmrt = pmrt_alpha(est.gamma_E, los_power, L, rank)
    w_pmrt = np.sqrt(alpha_pmrt)[..., None] * np.einsum("...ab,...jb->...ja", B, est.ghat_E)
    return PrecoderSet(w_pzf, w_pmrt, B, alpha_pzf, alpha_pmrt)
