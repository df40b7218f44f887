"""Deterministic SVD and the incremental left-SVD update used along the user chain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SingularState",
    "svd_full",
    "left_svd",
    "incremental_update",
    "truncate_left",
    "apply_sign_convention",
]

# residual columns at or below this fraction of ||B||_F count as zero-norm
RESIDUAL_RTOL = 1e-12


@dataclass(frozen=True)
class SingularState:
    """Left singular basis ``u`` (m x m, orthonormal) and its ``m`` singular values.

    Only the diagonal of the singular value matrix is kept; it is padded with
    zeros when the factored matrix has fewer than ``m`` columns.
    """

    u: np.ndarray
    s: np.ndarray

    @property
    def m(self) -> int:
        return self.u.shape[0]

    def energy(self) -> float:
        return float(np.sum(self.s**2))


def _check_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")


def _rank_tol(s: np.ndarray, shape: tuple[int, int]) -> float:
    if s.size == 0:
        return 0.0
    return float(s.max()) * max(shape) * np.finfo(np.float64).eps


def apply_sign_convention(u: np.ndarray) -> np.ndarray:
    """Per-column signs making the largest-magnitude entry of each column positive.

    Ties go to the smallest row index. Returns the sign vector (entries +-1).
    """
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def _complete_basis(basis: np.ndarray, m: int) -> np.ndarray:
    """Extend orthonormal columns to an m x m basis with coordinate directions.

    Coordinate vectors e_0, e_1, ... are orthogonalized (twice) against the
    current basis in index order and accepted when enough of them survives.
    """
    cols = [basis[:, j] for j in range(basis.shape[1])]
    for i in range(m):
        if len(cols) == m:
            break
        v = np.zeros(m)
        v[i] = 1.0
        for _ in range(2):
            for c in cols:
                v -= np.dot(c, v) * c
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            cols.append(v / norm)
    return np.column_stack(cols) if cols else np.zeros((m, 0))


def _canonical(u: np.ndarray, s: np.ndarray, shape: tuple[int, int]):
    """Pad ``s`` to m entries, regenerate the null-space columns, fix signs."""
    m = u.shape[0]
    s_full = np.zeros(m)
    s_full[: s.size] = s
    rank = int(np.sum(s_full > _rank_tol(s_full, shape)))
    s_full[rank:] = 0.0
    u_full = _complete_basis(u[:, :rank], m)
    signs = apply_sign_convention(u_full)
    return u_full * signs, s_full, signs, rank


def svd_full(a: np.ndarray) -> tuple[SingularState, np.ndarray]:
    """SVD ``a = u @ diag(s) @ v.T`` with a complete ``m x m`` left basis.

    Parameters
    ----------
    a : ndarray
        ``m x k`` matrix.

    Returns
    -------
    state : SingularState
        ``u`` is ``m x m``; ``s`` has ``m`` entries, zeros beyond the rank.
    v : ndarray
        ``k x m`` matrix; columns past the rank are zero.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or min(a.shape) < 1:
        raise ValueError("svd_full expects a non-empty 2-D matrix")
    _check_finite(a, "matrix")
    m, k = a.shape
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    u_full, s_full, signs, rank = _canonical(u, s, a.shape)
    v = np.zeros((k, m))
    v[:, :rank] = vt[:rank].T * signs[:rank]
    return SingularState(u_full, s_full), v


def left_svd(a: np.ndarray) -> SingularState:
    """Left half of :func:`svd_full`; the right singular vectors are discarded."""
    return svd_full(a)[0]


def incremental_update(state: SingularState, b: np.ndarray) -> SingularState:
    """Left SVD of ``[A B]`` from the left SVD of ``A`` and the new block ``B``.

    Steps: residual ``R = B - U U^T B``; column-normalized ``R_check`` (zero
    columns stay zero); SVD of ``M = [[diag(s), U^T B], [0, E]]`` where
    ``E = diag(||r_j||)``; the new basis is the first ``m`` columns of
    ``[U R_check] @ U_M`` and the new singular values the first ``m`` of
    ``M``'s.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] != state.m:
        raise ValueError(
            f"update block has shape {b.shape}, expected {state.m} rows"
        )
    _check_finite(b, "update block")
    m, p = b.shape
    u_a, s_a = state.u, state.s

    proj = u_a.T @ b
    resid = b - u_a @ proj
    norms = np.linalg.norm(resid, axis=0)
    zero = norms <= RESIDUAL_RTOL * np.linalg.norm(b)
    norms[zero] = 0.0
    r_check = np.zeros_like(resid)
    r_check[:, ~zero] = resid[:, ~zero] / norms[~zero]

    k = s_a.size
    mid = np.zeros((k + p, k + p))
    mid[:k, :k] = np.diag(s_a)
    mid[:k, k:] = proj
    mid[k:, k:] = np.diag(norms)
    # rows of M belonging to zero residual columns are identically zero; they
    # add nothing to the left singular structure, so factor the others only
    keep = np.concatenate([np.ones(k, dtype=bool), ~zero])
    u_kept, s_m, _ = np.linalg.svd(mid[keep], full_matrices=False)
    u_m = np.zeros((k + p, u_kept.shape[1]))
    u_m[keep] = u_kept

    u_c = (np.hstack([u_a, r_check]) @ u_m)[:, :m]
    u_c, s_c, _, _ = _canonical(u_c, s_m[:m], (m, k + p))
    return SingularState(u_c, s_c)


def truncate_left(state: SingularState, p: int) -> np.ndarray:
    """First ``p`` columns of the left basis."""
    if not 1 <= p <= state.m:
        raise ValueError(f"truncation rank {p} outside 1..{state.m}")
    return state.u[:, :p].copy()
