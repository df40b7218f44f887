"""Dense tensor algebra: matricization, mode products, Kronecker chains.

Tensors are plain :class:`numpy.ndarray` objects whose shape is the
dimension list ``(I_1, ..., I_N)``. Modes are 0-based, as numpy axes are.

Index conventions
-----------------
*Vectorization* and the on-disk layout are first-index-fastest (Fortran
order), so ``vectorize(x)`` stacks the mode-0 fibers.

*Mode-n matricization* orders the columns so that the multilinear projection
identity

    unfold(x x_0 U_0^T ... x_{N-1} U_{N-1}^T, n)
        == U_n^T @ unfold(x, n) @ phi_kron(U, n)

holds with the Kronecker chain taken in the cyclic order
``n+1, ..., N-1, 0, ..., n-1``. Concretely, the column index treats
``i_{n+1}`` as the slowest index and ``i_{n-1}`` as the fastest, walking the
remaining modes cyclically. In numpy terms this is "move mode n to the front,
keep the other modes in cyclic order, reshape in C order".
"""

from __future__ import annotations

import struct
from functools import reduce
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "mode_n_matricize",
    "mode_n_fold",
    "mode_n_product",
    "multi_mode_project",
    "kronecker",
    "khatri_rao",
    "phi_kron",
    "vectorize",
    "unvectorize",
    "frobenius_norm",
    "inner_product",
    "unfold_samples",
    "read_tnsr",
    "write_tnsr",
    "tnsr_bytes",
]

TNSR_MAGIC = b"TNSR1\x00"


def _check_mode(ndim: int, n: int) -> None:
    if not 0 <= n < ndim:
        raise ValueError(f"mode {n} out of range for an order-{ndim} tensor")


def _cyclic_axes(ndim: int, n: int) -> list[int]:
    return [n] + [(n + k) % ndim for k in range(1, ndim)]


def mode_n_matricize(x: np.ndarray, n: int) -> np.ndarray:
    """Unfold ``x`` along mode ``n`` into an ``I_n x prod(I_m, m != n)`` matrix.

    Examples
    --------
    >>> x = np.arange(1, 9, dtype=float).reshape(2, 2, 2, order="F")
    >>> mode_n_matricize(x, 0)
    array([[1., 5., 3., 7.],
           [2., 6., 4., 8.]])
    """
    x = np.asarray(x)
    _check_mode(x.ndim, n)
    return np.transpose(x, _cyclic_axes(x.ndim, n)).reshape(x.shape[n], -1)


def mode_n_fold(m: np.ndarray, n: int, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`mode_n_matricize`."""
    dims = tuple(int(d) for d in dims)
    m = np.asarray(m)
    _check_mode(len(dims), n)
    rest = int(np.prod([d for k, d in enumerate(dims) if k != n], dtype=np.int64))
    if m.shape != (dims[n], rest):
        raise ValueError(
            f"matrix of shape {m.shape} cannot fold into mode {n} of {dims}"
        )
    axes = _cyclic_axes(len(dims), n)
    folded = m.reshape([dims[a] for a in axes])
    return np.transpose(folded, np.argsort(axes))


def mode_n_product(x: np.ndarray, u: np.ndarray, n: int) -> np.ndarray:
    """Mode-n product ``x x_n u``: contracts mode ``n`` of ``x`` with the columns of ``u``."""
    x = np.asarray(x)
    u = np.asarray(u)
    _check_mode(x.ndim, n)
    if u.ndim != 2 or u.shape[1] != x.shape[n]:
        raise ValueError(
            f"matrix with shape {u.shape} does not match mode {n} of size {x.shape[n]}"
        )
    out = np.tensordot(u, x, axes=(1, n))
    return np.moveaxis(out, 0, n)


def multi_mode_project(x, factors, transpose=True, skip=None):
    """Apply ``x_n U_n^T`` (or ``x_n U_n`` if ``transpose`` is False) for every mode.

    Parameters
    ----------
    x : ndarray
        Tensor of shape ``(I_0, ..., I_{N-1})``.
    factors : sequence of ndarray
        One matrix per mode. With ``transpose=True`` factor ``n`` must be
        ``I_n x P_n``.
    transpose : bool
        Whether to apply the transposed factors (projection onto the subspace).
    skip : int, optional
        A mode to leave untouched (partial projection).

    Returns
    -------
    ndarray
        The projected tensor, modes processed in ascending order.
    """
    x = np.asarray(x)
    if len(factors) != x.ndim:
        raise ValueError(f"expected {x.ndim} factors, got {len(factors)}")
    for n, u in enumerate(factors):
        if n == skip:
            continue
        u = np.asarray(u)
        x = mode_n_product(x, u.T if transpose else u, n)
    return x


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product of two matrices (``mp x nq`` block matrix ``[a_ij * b]``)."""
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product of two matrices with equal column counts."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("Khatri-Rao product needs equal column counts")
    return (a[:, None, :] * b[None, :, :]).reshape(-1, a.shape[1])


def phi_kron(factors: Sequence[np.ndarray], n: int) -> np.ndarray:
    """Kronecker chain of all factors except ``n``, in cyclic order n+1, ..., n-1.

    Right-multiplying ``mode_n_matricize(x, n)`` by this matrix projects every
    mode except ``n``. For a single-mode set the result is the 1x1 identity.
    """
    ndim = len(factors)
    _check_mode(ndim, n)
    chain = [np.asarray(factors[(n + k) % ndim]) for k in range(1, ndim)]
    if not chain:
        return np.eye(1)
    return reduce(np.kron, chain)


def vectorize(x: np.ndarray) -> np.ndarray:
    """Entries of ``x`` in first-index-fastest order."""
    return np.asarray(x).ravel(order="F")


def unvectorize(v: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    return np.asarray(v).reshape(tuple(dims), order="F")


def inner_product(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))


def frobenius_norm(x: np.ndarray) -> float:
    return float(np.sqrt(inner_product(x, x)))


def unfold_samples(samples: np.ndarray, n: int) -> np.ndarray:
    """Concatenate the mode-n unfoldings of a stack of samples side by side.

    ``samples`` has shape ``(M, I_0, ..., I_{N-1})``; the result is
    ``[unfold(x_1, n), ..., unfold(x_M, n)]`` with shape ``I_n x (M * J_n)``.
    """
    samples = np.asarray(samples)
    ndim = samples.ndim - 1
    _check_mode(ndim, n)
    rest = [1 + (n + k) % ndim for k in range(1, ndim)]
    return np.transpose(samples, [1 + n, 0] + rest).reshape(samples.shape[1 + n], -1)


# -- TNSR binary format -------------------------------------------------------


def tnsr_bytes(x: np.ndarray) -> bytes:
    """Serialize ``x`` in the TNSR layout (also used for payload digests)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 1 or x.ndim > 255:
        raise ValueError("TNSR stores tensors of order 1..255")
    header = TNSR_MAGIC + struct.pack("<B", x.ndim)
    header += struct.pack(f"<{x.ndim}Q", *x.shape)
    return header + x.ravel(order="F").astype("<f8").tobytes()


def write_tnsr(path, x: np.ndarray) -> None:
    Path(path).write_bytes(tnsr_bytes(x))


def read_tnsr(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:6] != TNSR_MAGIC:
        raise ValueError(f"{path}: not a TNSR file")
    order = raw[6]
    dims = struct.unpack_from(f"<{order}Q", raw, 7)
    offset = 7 + 8 * order
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) != offset + 8 * count:
        raise ValueError(f"{path}: truncated or oversized payload")
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
    return data.astype(np.float64).reshape(dims, order="F")
