"""SVD-based rank policy shared by every rank decision in the package."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .errors import NonFiniteEntry

RANK_RTOL = 1e-10
UNCERTAIN_GAP = 1e3


@dataclass(frozen=True)
class RankInfo:
    rank: int
    smallest_kept: float  # nan when rank == 0
    largest_dropped: float  # 0.0 when nothing was dropped
    tol: float
    singular_values: np.ndarray

    @property
    def gap_ratio(self) -> float:
        """smallest kept / largest dropped singular value (inf when clean)."""
        if self.rank == 0 or self.largest_dropped == 0.0:
            return float("inf")
        return self.smallest_kept / self.largest_dropped

    @property
    def uncertain(self) -> bool:
        return self.gap_ratio < UNCERTAIN_GAP


def rank_with_tolerance(M, rtol: float = RANK_RTOL) -> RankInfo:
    """Numerical rank: singular values above ``max(rows, cols) * sigma_max * rtol``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise NonFiniteEntry("matrix has non-finite entries")
    if M.size == 0:
        return RankInfo(0, float("nan"), 0.0, 0.0, np.zeros(0))
    s = np.linalg.svd(M, compute_uv=False)
    tol = max(M.shape) * s[0] * rtol
    rank = int(np.sum(s > tol)) if s[0] > 0 else 0
    kept = float(s[rank - 1]) if rank > 0 else float("nan")
    dropped = float(s[rank]) if rank < len(s) else 0.0
    return RankInfo(rank, kept, dropped, float(tol), s)


def null_space(M, rtol: float = RANK_RTOL, ncols: int | None = None) -> np.ndarray:
    """Orthonormal basis (columns) of the right null space of M."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if ncols is None:
        ncols = M.shape[1]
    if M.size == 0:
        return np.eye(ncols)
    _, s, vt = np.linalg.svd(M)
    tol = max(M.shape) * (s[0] if len(s) else 0.0) * rtol
    rank = int(np.sum(s > tol)) if len(s) and s[0] > 0 else 0
    return vt[rank:].T.copy()


def left_null_space(M, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis (rows) of the left null space of M."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] == 0:
        return np.eye(M.shape[0])
    return null_space(M.T, rtol).T


def pinv(M, rtol: float = RANK_RTOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse with the package rank cut-off."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return np.zeros((M.shape[1], M.shape[0]))
    u, s, vt = np.linalg.svd(M, full_matrices=False)
    tol = max(M.shape) * s[0] * rtol
    inv = np.where(s > tol, 1.0 / np.where(s > tol, s, 1.0), 0.0)
    return (vt.T * inv) @ u.T


MAX_MINORS = 4096


def minors_indicator(M, k: int) -> np.ndarray:
    """All k x k minors of M, normalised by the k-th power of its largest singular value.

    The vector is a polynomial (hence continuous, sign-carrying) function of the
    entries and vanishes exactly where rank M < k.  A sign flip of
    ``indicator(a) @ indicator(b)`` along a path flags a possible rank drop.
    A stack of matrices (..., r, c) gives a stack of indicator vectors.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[None, :]
    r, c = M.shape[-2:]
    lead = M.shape[:-2]
    if k <= 0 or k > min(r, c):
        return np.zeros(lead + (0,))
    if comb(r, k) * comb(c, k) > MAX_MINORS:
        raise ValueError(f"too many {k}x{k} minors for a {r}x{c} matrix")
    R = np.array(list(combinations(range(r), k)))
    C = np.array(list(combinations(range(c), k)))
    blocks = M[..., R[:, None, :, None], C[None, :, None, :]]
    vals = np.linalg.det(blocks).reshape(lead + (-1,))
    smax = np.linalg.norm(M, 2, axis=(-2, -1))
    smax = np.where(smax > 0, smax, 1.0)
    return vals / (smax**k)[..., None]
