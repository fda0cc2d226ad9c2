"""Unitary symmetric scattering matrices for FC, GC(G) and diagonal surfaces."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .system_model import Geometry, LargeScale, SystemConfig, los_products

TOL = 1e-10


@dataclass(frozen=True)
class ScatteringMatrix:
    theta: np.ndarray
    architecture: str  # "FC", "GC(G)" or "DIAG"

    @property
    def N(self) -> int:
        return self.theta.shape[0]

    @property
    def groups(self) -> int:
        if self.architecture == "FC":
            return 1
        if self.architecture == "DIAG":
            return self.N
        return int(self.architecture[3:-1])

    def to_json(self) -> str:
        rows = [[[float(v.real), float(v.imag)] for v in row] for row in self.theta]
        return json.dumps({"architecture": self.architecture, "theta": rows})

    @classmethod
    def from_json(cls, text: str) -> "ScatteringMatrix":
        data = json.loads(text)
        arr = np.asarray(data["theta"], dtype=float)
        return cls(arr[..., 0] + 1j * arr[..., 1], data["architecture"])


def arch_tag(N: int, G: int) -> str:
    if G == 1:
        return "FC"
    if G == N:
        return "DIAG"
    return f"GC({G})"


@dataclass(frozen=True)
class ValidationReport:
    unitary_residual: float
    symmetry_residual: float
    block_residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.unitary_residual, self.symmetry_residual, self.block_residual) <= self.tol

    def __bool__(self) -> bool:
        return self.passed


def block_mask(N: int, G: int) -> np.ndarray:
    size = N // G
    idx = np.arange(N) // size
    return idx[:, None] == idx[None, :]


def validate(theta, tol: float = TOL) -> ValidationReport:
    arch = getattr(theta, "architecture", "FC")
    mat = np.asarray(getattr(theta, "theta", theta))
    N = mat.shape[0]
    unit = np.linalg.norm(mat.conj().T @ mat - np.eye(N))
    sym = np.linalg.norm(mat - mat.T)
    if arch == "FC":
        G = 1
    elif arch == "DIAG":
        G = N
    else:
        G = int(arch[3:-1])
    blk = np.linalg.norm(mat[~block_mask(N, G)]) if N % G == 0 else np.inf
    return ValidationReport(float(unit), float(sym), float(blk), tol)


def _square_side(N: int) -> int:
    side = math.isqrt(N)
    if side * side != N:
        raise ValueError(f"DFT design needs a perfect-square N, got {N}")
    return side


def literal_dft(N: int) -> np.ndarray:
    """Planar-index DFT with exponent |n_h - 1| * |n'_v - 1| (unit base phase)."""
    side = _square_side(N)
    n = np.arange(N)
    i_h = np.abs(n % side - 1)
    i_v = np.abs(n // side - 1)
    return np.exp(-2j * np.pi / N * np.outer(i_h, i_v)) / np.sqrt(N)


def classical_dft(N: int) -> np.ndarray:
    n = np.arange(N)
    return np.exp(-2j * np.pi / N * np.outer(n, n)) / np.sqrt(N)


def dft_matrix(N: int) -> ScatteringMatrix:
    """Planar DFT design, falling back to the classical DFT when not unitary."""
    lit = ScatteringMatrix(literal_dft(N), "FC")
    if validate(lit).passed:
        return lit
    return ScatteringMatrix(classical_dft(N), "FC")


def project_unitary_symmetric(A: np.ndarray, rank_tol: float = 1e-12) -> ScatteringMatrix:
    """Closest-style unitary symmetric matrix to the symmetric part of A."""
    A = np.asarray(A, dtype=complex)
    N = A.shape[0]
    A_sym = 0.5 * (A + A.T)
    U, s, Vh = np.linalg.svd(A_sym)
    if s[0] == 0.0:
        return ScatteringMatrix(np.eye(N, dtype=complex), "FC")
    r = int(np.sum(s > rank_tol * s[0]))
    V = Vh.conj().T
    U_hat = np.concatenate([U[:, :r], V[:, r:].conj()], axis=1)
    theta = U_hat @ Vh
    # clean round-off so symmetry holds to machine precision
    theta = 0.5 * (theta + theta.T)
    return ScatteringMatrix(theta, "FC")


def group_connected(N: int, G: int, block_source: Callable[[int, int], np.ndarray]) -> ScatteringMatrix:
    """Block-diagonal matrix with G unitary symmetric blocks from ``block_source(g, size)``."""
    if G < 1 or N % G:
        raise ValueError(f"group count {G} does not divide N={N}")
    size = N // G
    theta = np.zeros((N, N), dtype=complex)
    for g in range(G):
        sl = slice(g * size, (g + 1) * size)
        theta[sl, sl] = block_source(g, size)
    return ScatteringMatrix(theta, arch_tag(N, G))


def _projected_blocks(A: np.ndarray, G: int) -> ScatteringMatrix:
    N = A.shape[0]
    if G == N:
        diag = np.diag(A)
        phase = np.where(np.abs(diag) > 0, diag / np.where(diag == 0, 1, np.abs(diag)), 1.0)
        return ScatteringMatrix(np.diag(phase), "DIAG")
    size = N // G
    return group_connected(
        N, G, lambda g, s: project_unitary_symmetric(A[g * size : (g + 1) * size, g * size : (g + 1) * size]).theta
    )


def dft_blocks(N: int, G: int) -> ScatteringMatrix:
    """DFT design per group; G=N gives the identity diagonal surface."""

    def source(g: int, size: int) -> np.ndarray:
        if math.isqrt(size) ** 2 == size:
            return dft_matrix(size).theta
        return classical_dft(size)

    return group_connected(N, G, source)


def random_scattering(N: int, seed: int, G: int = 1) -> ScatteringMatrix:
    rng = np.random.default_rng([seed, 21])
    A = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    return _projected_blocks(A, G)


def los_score(theta: np.ndarray, F_bar: np.ndarray, z: np.ndarray) -> float:
    """Sum over APs and ERs of the LoS product energy."""
    g_bar = np.einsum("mln,nk,jk->mjl", F_bar, theta, z)
    return float(np.sum(np.abs(g_bar) ** 2))


def heuristic_search(
    ls: LargeScale,
    geo: Geometry,
    cfg: SystemConfig,
    D: int,
    seed: int,
    groups: int = 1,
) -> ScatteringMatrix:
    """Random-candidate search over projected local correlation matrices."""
    if D < 1:
        raise ValueError("D must be at least 1")
    N, L, M, J = cfg.N, cfg.L, cfg.M, cfg.J
    if N % groups:
        raise ValueError(f"group count {groups} does not divide N={N}")
    rng = np.random.default_rng([seed, 22])
    F_bar, z, _ = los_products(geo, ls, np.eye(N), cfg)
    z = z / np.sqrt(ls.alpha_ris)[:, None]  # unit steering; alpha sits in zeta_bar
    zb = np.sqrt(ls.zeta_bar)  # (M, J)
    best: Optional[ScatteringMatrix] = None
    best_score = -np.inf
    for _ in range(D):
        for m in range(M):
            F_t = (rng.standard_normal((L, N)) + 1j * rng.standard_normal((L, N))) / np.sqrt(2)
            H = (rng.standard_normal((L, J)) + 1j * rng.standard_normal((L, J))) / np.sqrt(2)
            H = H * np.sqrt(ls.beta_E_nominal[m])[None, :]
            # per-ER scaling folded into the columns of H
            A = np.zeros((N, N), dtype=complex)
            for j in range(J):
                F_mj = zb[m, j] * (np.sqrt(ls.kappa) * F_bar[m] + F_t)
                A += np.outer(F_mj.conj().T @ H[:, j], z[j].conj())
            cand = _projected_blocks(A, groups)
            score = los_score(cand.theta, F_bar, z)
            if score > best_score:
                best, best_score = cand, score
    return best


def build_scattering(kind: str, arch: str, ls, geo, cfg: SystemConfig, seed: int, D: int = 50) -> ScatteringMatrix:
    """Dispatch used by experiments: kind in {heu, dft, random}, arch in {fc, gc:G, diag}."""
    G = parse_arch(arch, cfg.N)
    if kind == "heu":
        return heuristic_search(ls, geo, cfg, D, seed, groups=G)
    if kind == "dft":
        return dft_blocks(cfg.N, G)
    if kind == "random":
        return random_scattering(cfg.N, seed, G)
    raise ValueError(f"unknown scattering kind {kind!r}")


def parse_arch(arch: str, N: int) -> int:
    arch = arch.lower()
    if arch == "fc":
        return 1
    if arch == "diag":
        return N
    if arch.startswith("gc:"):
        G = int(arch[3:])
        if N % G:
            raise ValueError(f"group count {G} does not divide N={N}")
        return G
    raise ValueError(f"unknown architecture {arch!r}")
