"""(Log-)location-scale regression of time-to-failure on tensor features."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize

from .federated import InMemoryBus, Participant, Transport, secure_sum
from .tensor import vectorize

__all__ = [
    "FAMILIES",
    "ProgModel",
    "AssetRecord",
    "design_matrix",
    "lls_fit",
    "fed_lls_fit",
    "predict_ttf",
    "prediction_error",
    "truncate_training",
    "sev_negloglik",
    "sev_gradient",
    "save_prog_model",
    "load_prog_model",
]

FAMILIES = ("normal", "lognormal", "sev")
# median of the standard smallest-extreme-value distribution
_SEV_MEDIAN = float(np.log(np.log(2.0)))


@dataclass
class ProgModel:
    beta0: float
    beta1: np.ndarray
    sigma: float
    family: str
    feature_dims: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "beta0": float(self.beta0),
            "beta1": [float(b) for b in self.beta1],
            "sigma": float(self.sigma),
            "feature_dims": list(self.feature_dims),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProgModel":
        return cls(float(d["beta0"]), np.asarray(d["beta1"], dtype=np.float64),
                   float(d["sigma"]), d["family"], tuple(d["feature_dims"]))


@dataclass
class AssetRecord:
    asset_id: str
    tensor: np.ndarray
    ttf: float

    def __post_init__(self):
        if not self.ttf > 0:
            raise ValueError(f"asset {self.asset_id}: ttf must be positive")


def _check_family(family: str) -> None:
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


def design_matrix(features) -> np.ndarray:
    """Rows ``[1, vec(Y_m)]`` for a stack of feature tensors ``(M, P_1, ..., P_N)``."""
    y = np.asarray(features, dtype=np.float64)
    flat = np.stack([vectorize(f) for f in y]) if y.ndim > 1 else y[:, None]
    return np.column_stack([np.ones(len(flat)), flat])


def _response(ttfs, family: str) -> np.ndarray:
    z = np.asarray(ttfs, dtype=np.float64)
    if np.any(z <= 0):
        raise ValueError("time-to-failure values must be positive")
    return np.log(z) if family == "lognormal" else z


def sev_negloglik(params, design, z) -> float:
    """Negative SEV log-likelihood; ``params = [beta..., log sigma]``."""
    beta, log_sigma = params[:-1], params[-1]
    w = (z - design @ beta) / np.exp(log_sigma)
    return float(-np.sum(w - np.exp(w)) + z.size * log_sigma)


def sev_gradient(params, design, z) -> np.ndarray:
    beta, log_sigma = params[:-1], params[-1]
    sigma = np.exp(log_sigma)
    w = (z - design @ beta) / sigma
    g = 1.0 - np.exp(w)  # d loglik / d w
    grad_beta = design.T @ g / sigma
    grad_log_sigma = np.sum(g * w) + z.size
    return np.concatenate([grad_beta, [grad_log_sigma]])


def _fit_sev(design, z, beta_start, sigma_start):
    start = np.concatenate([beta_start, [np.log(max(sigma_start, 1e-8))]])
    res = optimize.minimize(sev_negloglik, start, args=(design, z), jac=sev_gradient,
                            method="BFGS", options={"gtol": 1e-9, "maxiter": 10_000})
    # Newton polish for a tight stationary point
    res = optimize.minimize(sev_negloglik, res.x, args=(design, z), jac=sev_gradient,
                            method="trust-exact", hess=_sev_hessian, options={"gtol": 1e-10})
    return res.x[:-1], float(np.exp(res.x[-1]))


def _sev_hessian(params, design, z):
    beta, log_sigma = params[:-1], params[-1]
    sigma = np.exp(log_sigma)
    w = (z - design @ beta) / sigma
    e = np.exp(w)
    h_bb = design.T @ (design * e[:, None]) / sigma**2
    h_bs = design.T @ (e * w + e - 1.0) / sigma
    h_ss = np.sum(w * (e * w + e - 1.0))
    hess = np.empty((len(params), len(params)))
    hess[:-1, :-1] = h_bb
    hess[:-1, -1] = h_bs
    hess[-1, :-1] = h_bs
    hess[-1, -1] = h_ss
    return hess


def _solve_normal(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    # symmetric diagonal scaling keeps the intercept/feature scales comparable
    d = np.sqrt(np.diag(gram))
    if np.any(d == 0):
        raise np.linalg.LinAlgError("design has an all-zero column")
    scaled = gram / np.outer(d, d)
    if np.linalg.matrix_rank(scaled) < scaled.shape[0]:
        raise np.linalg.LinAlgError("design matrix is rank deficient")
    return np.linalg.solve(scaled, rhs / d) / d


def lls_fit(features, ttfs, family="lognormal") -> ProgModel:
    """Fit ``z = beta0 + vec(Y)^T beta1 + sigma * eps``.

    ``z`` is the TTF (normal, sev) or its logarithm (lognormal). Coefficients
    come from least squares and ``sigma`` from maximum likelihood (1/M
    normalization); the sev family is fitted by numerical MLE.
    """
    _check_family(family)
    y = np.asarray(features, dtype=np.float64)
    design = design_matrix(y)
    z = _response(ttfs, family)
    if design.shape[0] != z.size:
        raise ValueError("features and ttfs differ in length")
    if design.shape[0] < design.shape[1] or np.linalg.matrix_rank(design) < design.shape[1]:
        raise np.linalg.LinAlgError(
            f"rank-deficient design: {design.shape[0]} samples for {design.shape[1]} coefficients"
        )
    beta, *_ = np.linalg.lstsq(design, z, rcond=None)
    sigma = float(np.sqrt(np.mean((z - design @ beta) ** 2)))
    if family == "sev":
        beta, sigma = _fit_sev(design, z, beta, sigma)
    return ProgModel(float(beta[0]), beta[1:].copy(), sigma, family, tuple(y.shape[1:]))


def fed_lls_fit(participants: Sequence[Participant], data: dict, family="lognormal",
                seed=0, bus: Transport | None = None) -> ProgModel:
    """Federated fit from masked sufficient statistics.

    ``data`` maps user id to ``(features, ttfs)``. Each user uploads
    ``[X^T X, X^T z, z^T z, M_d]`` with pairwise masks added; the server solves
    the pooled normal equations. Only normal and lognormal families.
    """
    if family not in ("normal", "lognormal"):
        raise ValueError("federated fitting supports the normal and lognormal families")
    bus = bus or InMemoryBus()
    stats = {}
    feature_dims = None
    for p in participants:
        features, ttfs = data[p.user_id]
        features = np.asarray(features, dtype=np.float64)
        feature_dims = tuple(features.shape[1:])
        x = design_matrix(features)
        z = _response(ttfs, family)
        stats[p.user_id] = np.concatenate(
            [(x.T @ x).ravel(), x.T @ z, [z @ z, float(z.size)]])
    total = secure_sum(participants, stats, bus, seed, "lls", "lls")
    k = int(round(np.sqrt(total.size - 2 + 0.25) - 0.5))  # k*k + k + 2 entries
    gram = total[: k * k].reshape(k, k)
    xtz = total[k * k: k * k + k]
    ztz, count = total[-2], total[-1]
    if count < k:
        raise np.linalg.LinAlgError(f"rank-deficient design: {count:g} samples for {k} coefficients")
    beta = _solve_normal(gram, xtz)
    sse = max(ztz - 2 * beta @ xtz + beta @ gram @ beta, 0.0)
    sigma = float(np.sqrt(sse / count))
    return ProgModel(float(beta[0]), beta[1:].copy(), sigma, family, feature_dims)


def predict_ttf(model: ProgModel, feature) -> tuple[float, float, float]:
    """Return ``(location, scale, point_estimate)``; the point estimate is the median."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape != tuple(model.feature_dims) and feature.size != model.beta1.size:
        raise ValueError(f"feature dims {feature.shape} do not match {model.feature_dims}")
    if feature.size != model.beta1.size:
        raise ValueError(f"feature has {feature.size} entries, model expects {model.beta1.size}")
    location = float(model.beta0 + vectorize(feature) @ model.beta1)
    if model.family == "lognormal":
        point = float(np.exp(location))
    elif model.family == "sev":
        point = location + model.sigma * _SEV_MEDIAN
    else:
        point = location
    return location, model.sigma, point


def prediction_error(estimated: float, true_ttf: float) -> float:
    """Relative absolute error ``|estimated - true| / true``."""
    if not true_ttf > 0:
        raise ValueError("true TTF must be positive")
    return abs(estimated - true_ttf) / true_ttf


def truncate_training(assets: Sequence[AssetRecord], i_t: int) -> list[AssetRecord]:
    """Keep the first ``i_t`` frames (last mode) of every asset long enough; drop the rest."""
    if i_t < 1:
        raise ValueError("i_t must be at least 1")
    out = []
    for a in assets:
        if a.tensor.shape[-1] >= i_t:
            out.append(AssetRecord(a.asset_id, a.tensor[..., :i_t].copy(), a.ttf))
    return out


def save_prog_model(model: ProgModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_prog_model(path) -> ProgModel:
    return ProgModel.from_dict(json.loads(Path(path).read_text()))
