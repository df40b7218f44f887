"""Multilinear PCA by alternating partial projections (centralized reference).

Every eigen-step of the classic algorithm is taken through the SVD of a
concatenated unfolding instead of forming the scatter matrices, so the
centralized fit and the federated chain share the same numerical kernel
(:func:`chain_subspace`). The scatter matrices are only built in tests.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .linalg import SingularState, incremental_update, left_svd, truncate_left
from .tensor import (
    multi_mode_project,
    phi_kron,
    read_tnsr,
    unfold_samples,
    write_tnsr,
)

logger = logging.getLogger(__name__)

__all__ = [
    "MpcaModel",
    "mpca_fit",
    "choose_ranks",
    "ranks_from_spectrum",
    "project_features",
    "scatter",
    "chain_subspace",
    "partial_unfolding",
    "save_model",
    "load_model",
]

DEFAULT_MAX_ITER = 10
DEFAULT_RELATIVE_ETA = 1e-6


@dataclass
class MpcaModel:
    """Fitted projection. ``factors[n]`` is ``I_n x P_n`` with orthonormal columns."""

    mean: np.ndarray
    factors: list[np.ndarray]
    scatter_history: list[float] = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.mean.shape)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(u.shape[1] for u in self.factors)

    def transform(self, samples, center=False):
        return project_features(samples, self, center=center)


def _as_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim < 2:
        raise ValueError("samples must be a stack of tensors, shape (M, I_1, ..., I_N)")
    if x.shape[0] == 0:
        raise ValueError("no samples given")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite entries")
    return x


def chain_subspace(blocks: Sequence[np.ndarray]) -> SingularState:
    """Left SVD of ``[B_1, B_2, ...]`` by factoring ``B_1`` and folding in the rest.

    This is the user chain with the users collapsed into one process.
    """
    state = left_svd(blocks[0])
    for b in blocks[1:]:
        state = incremental_update(state, b)
    return state


def partial_unfolding(centered: np.ndarray, factors, n: int) -> np.ndarray:
    """``[X_1(n) Phi, ..., X_M(n) Phi]`` with ``Phi = phi_kron(factors, n)``."""
    kron = phi_kron(factors, n)
    m = centered.shape[0]
    stacked = unfold_samples(centered, n).reshape(centered.shape[1 + n], m, -1)
    return np.einsum("imj,jp->imp", stacked, kron).reshape(centered.shape[1 + n], -1)


def scatter(centered: np.ndarray, factors) -> float:
    """Total scatter ``sum_m ||X~_m x_1 U_1^T ... x_N U_N^T||_F^2`` of centered samples."""
    ndim = centered.ndim - 1
    y = centered
    for n in range(ndim):
        y = np.moveaxis(np.tensordot(y, np.asarray(factors[n]), axes=(1 + n, 0)), -1, 1 + n)
    return float(np.sum(y**2))


def ranks_from_spectrum(s: np.ndarray, q: float) -> int:
    """Smallest ``P`` whose top-``P`` squared singular values hold ``q`` of the energy."""
    if not 0.0 < q <= 1.0:
        raise ValueError(f"variation target must be in (0, 1], got {q}")
    energy = np.asarray(s, dtype=np.float64) ** 2
    total = energy.sum()
    if total <= 0.0:
        return 1
    cum = np.cumsum(energy)
    p = int(np.searchsorted(cum, q * total - 1e-12 * total, side="left")) + 1
    return min(p, energy.size)


def choose_ranks(samples, q: float) -> tuple[int, ...]:
    """Per-mode ranks keeping a fraction ``q`` of the centered mode-n energy."""
    x = _as_samples(samples)
    centered = x - x.mean(axis=0)
    return tuple(
        ranks_from_spectrum(left_svd(unfold_samples(centered, n)).s, q)
        for n in range(x.ndim - 1)
    )


def _resolve_ranks(ranks, dims) -> tuple[int, ...] | None:
    if ranks is None or isinstance(ranks, float):
        return None
    ranks = tuple(int(p) for p in ranks)
    if len(ranks) != len(dims):
        raise ValueError(f"expected {len(dims)} ranks, got {len(ranks)}")
    for p, i in zip(ranks, dims):
        if not 1 <= p <= i:
            raise ValueError(f"rank {p} outside 1..{i}")
    return ranks


def mpca_fit(samples, ranks=0.97, eta=None, max_iter=DEFAULT_MAX_ITER) -> MpcaModel:
    """Fit MPCA on a stack of samples.

    Parameters
    ----------
    samples : array_like
        Shape ``(M, I_1, ..., I_N)``.
    ranks : sequence of int or float
        Explicit ranks ``(P_1, ..., P_N)``, or a variation fraction in (0, 1]
        from which each ``P_n`` is picked during initialization.
    eta : float, optional
        Convergence tolerance on the scatter increase. Defaults to
        ``1e-6 * Psi_0``.
    max_iter : int
        Maximum number of full N-mode sweeps.

    Returns
    -------
    MpcaModel
    """
    x = _as_samples(samples)
    dims = x.shape[1:]
    ndim = len(dims)
    fixed = _resolve_ranks(ranks, dims)

    mean = x.mean(axis=0)
    centered = x - mean

    factors = []
    for n in range(ndim):
        state = chain_subspace([unfold_samples(centered, n)])
        p = fixed[n] if fixed else ranks_from_spectrum(state.s, ranks)
        factors.append(truncate_left(state, p))

    history = [scatter(centered, factors)]
    tol = DEFAULT_RELATIVE_ETA * history[0] if eta is None else eta
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        for n in range(ndim):
            state = chain_subspace([partial_unfolding(centered, factors, n)])
            factors[n] = truncate_left(state, factors[n].shape[1])
        history.append(scatter(centered, factors))
        if history[-1] - history[-2] <= tol:
            converged = True
            break
    if not converged:
        logger.info("MPCA stopped after %d sweeps without meeting eta=%g", k, tol)
    return MpcaModel(mean, factors, history, k, converged)


def project_features(samples, model: MpcaModel, center=False) -> np.ndarray:
    """Project a stack of samples (or a single tensor) onto the model subspace."""
    x = np.asarray(samples, dtype=np.float64)
    single = x.shape == model.dims
    if single:
        x = x[None]
    if x.shape[1:] != model.dims:
        raise ValueError(f"sample dims {x.shape[1:]} do not match model dims {model.dims}")
    if center:
        x = x - model.mean
    y = np.stack([multi_mode_project(xm, model.factors) for xm in x])
    return y[0] if single else y


# -- serialization ------------------------------------------------------------


def save_model(model: MpcaModel, directory) -> None:
    """Write ``mpca.json`` plus TNSR files for the mean and each factor."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tnsr(directory / "mean.tnsr", model.mean)
    files = []
    for n, u in enumerate(model.factors):
        name = f"factor_{n}.tnsr"
        write_tnsr(directory / name, u)
        files.append(name)
    manifest = {
        "dims": list(model.dims),
        "ranks": list(model.ranks),
        "iterations": model.iterations_run,
        "converged": model.converged,
        "scatter_history": [float(v) for v in model.scatter_history],
        "mean_file": "mean.tnsr",
        "factor_files": files,
    }
    (directory / "mpca.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_model(directory) -> MpcaModel:
    directory = Path(directory)
    manifest = json.loads((directory / "mpca.json").read_text())
    mean = read_tnsr(directory / manifest["mean_file"])
    factors = [read_tnsr(directory / f) for f in manifest["factor_files"]]
    return MpcaModel(
        mean=mean,
        factors=factors,
        scatter_history=list(manifest["scatter_history"]),
        iterations_run=int(manifest["iterations"]),
        converged=bool(manifest["converged"]),
    )
