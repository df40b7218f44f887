"""Synthetic degradation image streams from a 2-D heat-transfer process.

Each asset is a square plate with a hot Dirichlet boundary and a cold start,
integrated with the forward-time centered-space scheme. Frames are sampled
on an ``n x n`` interior grid, a subset of frames is kept, pixel noise is
added, and time-to-failure values are drawn from a lognormal model on
randomly perturbed MPCA features.

Noise levels
------------
All three noise levels are standard deviations: pixel noise 0.1, regression
coefficients 0.01 and log-TTF noise ``sqrt(0.1)``. Reading every level as a
variance pushes ``log ttf`` past the float64 exponent range, since the
features are projections of raw temperatures through perturbed factors.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .mpca import mpca_fit
from .tensor import multi_mode_project, read_tnsr, vectorize, write_tnsr

__all__ = [
    "SimConfig",
    "SyntheticAsset",
    "Dataset",
    "discretization",
    "simulate_heat",
    "make_asset_stream",
    "generate_dataset",
    "write_dataset",
    "read_dataset",
    "asset_rng",
]


@dataclass
class SimConfig:
    n: int = 21
    length: float = 0.2
    boundary: float = 30.0
    alpha_range: tuple[float, float] = (0.5e-4, 1e-4)
    frames: int = 150
    kept: tuple[int, ...] = tuple(range(15, 151, 15))
    frame_time: float = 1.0
    max_ratio: float = 0.2
    substeps: int | None = None
    pixel_sd: float = 0.1
    coef_sd: float = 0.01
    ttf_sd: float = math.sqrt(0.1)
    variation: float = 0.97
    asset_count: int = 500
    seed: int = 0

    def __post_init__(self):
        self.alpha_range = tuple(float(a) for a in self.alpha_range)
        self.kept = tuple(int(k) for k in self.kept)
        if self.n < 2:
            raise ValueError("grid needs n >= 2")
        lo, hi = self.alpha_range
        if not 0 < lo <= hi:
            raise ValueError("alpha range must be positive and ordered")
        if not self.kept or min(self.kept) < 1 or max(self.kept) > self.frames:
            raise ValueError(f"kept frames must lie in 1..{self.frames}")
        if min(self.pixel_sd, self.coef_sd, self.ttf_sd) < 0:
            raise ValueError("noise standard deviations must be non-negative")
        if self.asset_count < 1:
            raise ValueError("asset_count must be positive")
        if self.substeps is not None and self.substeps < 1:
            raise ValueError("substeps must be positive")
        if not 0 < self.max_ratio <= 0.25:
            raise ValueError("max_ratio must lie in (0, 0.25]")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha_range"] = list(self.alpha_range)
        d["kept"] = list(self.kept)
        return d


@dataclass
class SyntheticAsset:
    alpha: float
    tensor: np.ndarray
    ttf: float


@dataclass
class Dataset:
    assets: list[SyntheticAsset]
    config: SimConfig
    ranks: tuple[int, ...] = ()
    beta0: float = 0.0
    beta1: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def tensors(self) -> np.ndarray:
        return np.stack([a.tensor for a in self.assets])

    def ttfs(self) -> np.ndarray:
        return np.array([a.ttf for a in self.assets])

    def alphas(self) -> np.ndarray:
        return np.array([a.alpha for a in self.assets])


def discretization(cfg: SimConfig) -> dict:
    """Grid spacing, time step and sub-steps per frame.

    By default a frame lasts ``frame_time`` and the step is the largest
    ``frame_time / k`` (integer ``k``) keeping ``alpha_max * dt / dx^2`` at or
    below ``max_ratio``. With ``cfg.substeps`` set, ``dt`` is fixed by
    ``alpha_max * dt / dx^2 = max_ratio`` and a frame is ``substeps`` steps.
    """
    dx = cfg.length / (cfg.n + 1)
    alpha_max = cfg.alpha_range[1]
    if cfg.substeps is not None:
        substeps = cfg.substeps
        dt = cfg.max_ratio * dx**2 / alpha_max
    else:
        ratio_per_frame = alpha_max * cfg.frame_time / dx**2
        substeps = max(1, math.ceil(ratio_per_frame / cfg.max_ratio - 1e-12))
        dt = cfg.frame_time / substeps
    return {"dx": dx, "dt": dt, "substeps": substeps, "frame_time": dt * substeps,
            "max_ratio": alpha_max * dt / dx**2}


def simulate_heat(alpha, cfg: SimConfig, include_boundary=False) -> np.ndarray:
    """Integrate the heat equation and return every frame.

    Parameters
    ----------
    alpha : float or array of float
        Thermal diffusivity; an array simulates several plates at once.
    cfg : SimConfig
    include_boundary : bool
        Return the ``(n+2) x (n+2)`` field with the fixed boundary ring
        instead of the ``n x n`` interior.

    Returns
    -------
    ndarray
        Shape ``(n, n, T)`` (or ``(len(alpha), n, n, T)`` for array input).
    """
    alphas = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
    disc = discretization(cfg)
    ratio = alphas * disc["dt"] / disc["dx"] ** 2
    if np.any(ratio > 0.25):
        raise ValueError(
            f"FTCS stability violated: alpha*dt/dx^2 = {ratio.max():.4f} > 0.25 "
            f"(dx={disc['dx']:.4g}, dt={disc['dt']:.4g})"
        )
    n = cfg.n
    field_ = np.zeros((alphas.size, n + 2, n + 2))
    field_[:, 0, :] = field_[:, -1, :] = cfg.boundary
    field_[:, :, 0] = field_[:, :, -1] = cfg.boundary
    r = ratio[:, None, None]

    out = np.empty((alphas.size, n + 2, n + 2, cfg.frames))
    out[..., 0] = field_
    for t in range(1, cfg.frames):
        for _ in range(disc["substeps"]):
            inner = field_[:, 1:-1, 1:-1]
            lap = (field_[:, :-2, 1:-1] + field_[:, 2:, 1:-1]
                   + field_[:, 1:-1, :-2] + field_[:, 1:-1, 2:] - 4.0 * inner)
            field_[:, 1:-1, 1:-1] = inner + r * lap
        out[..., t] = field_
    if not include_boundary:
        out = out[:, 1:-1, 1:-1, :]
    return out[0] if np.ndim(alpha) == 0 else out


def asset_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for asset ``index``; serial and parallel runs agree."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, index)))


def _global_rng(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, purpose)))


def make_asset_stream(alpha: float, cfg: SimConfig, rng: np.random.Generator,
                      raw: np.ndarray | None = None) -> np.ndarray:
    """Kept frames of one plate plus i.i.d. Gaussian pixel noise (``n x n x len(kept)``)."""
    if raw is None:
        raw = simulate_heat(alpha, cfg)
    frames = raw[..., [k - 1 for k in cfg.kept]]
    sd = cfg.pixel_sd
    if sd == 0:
        return frames.copy()
    return frames + sd * rng.standard_normal(frames.shape)


def generate_dataset(cfg: SimConfig, seed: int | None = None) -> Dataset:
    """Simulate ``cfg.asset_count`` assets and attach lognormal time-to-failure values.

    The TTF model: fit MPCA (variation ``cfg.variation``) on all streams, add
    standard normal noise to every factor entry, project the raw streams with
    the perturbed factors, and draw ``log ttf = beta0 + vec(Y)^T beta1 + eps``.
    """
    seed = cfg.seed if seed is None else seed
    rngs = [asset_rng(seed, i) for i in range(cfg.asset_count)]
    lo, hi = cfg.alpha_range
    alphas = np.array([rng.uniform(lo, hi) for rng in rngs])
    raw = simulate_heat(alphas, cfg)
    streams = np.stack([make_asset_stream(a, cfg, rng, raw[i])
                        for i, (a, rng) in enumerate(zip(alphas, rngs))])

    model = mpca_fit(streams, cfg.variation)
    rng = _global_rng(seed, 0)
    perturbed = [u + rng.standard_normal(u.shape) for u in model.factors]
    features = np.stack([vectorize(multi_mode_project(x, perturbed)) for x in streams])

    coef_sd = cfg.coef_sd
    beta0 = float(coef_sd * rng.standard_normal())
    beta1 = coef_sd * rng.standard_normal(features.shape[1])
    eps = cfg.ttf_sd * np.array([r.standard_normal() for r in rngs])
    log_ttf = beta0 + features @ beta1 + eps
    if np.any(log_ttf > 700):
        raise OverflowError("log time-to-failure exceeds the float64 range")
    ttfs = np.exp(log_ttf)

    assets = [SyntheticAsset(float(a), x, float(z)) for a, x, z in zip(alphas, streams, ttfs)]
    return Dataset(assets, cfg, model.ranks, beta0, beta1)


# -- dataset directory --------------------------------------------------------

MANIFEST_FIELDS = ("asset_id", "alpha", "ttf", "tensor_file")


def write_dataset(ds: Dataset, directory) -> Path:
    """Write ``manifest.csv``, one TNSR file per asset and ``config.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(ds.assets) - 1)))
    with (directory / "manifest.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for i, a in enumerate(ds.assets):
            asset_id = f"asset_{i:0{width}d}"
            name = f"{asset_id}.tnsr"
            write_tnsr(directory / name, a.tensor)
            writer.writerow([asset_id, repr(a.alpha), repr(a.ttf), name])
    meta = {
        "sim_config": ds.config.to_dict(),
        "discretization": discretization(ds.config),
        "ttf_model": {"ranks": list(ds.ranks), "beta0": ds.beta0,
                      "beta1": [float(b) for b in ds.beta1]},
    }
    (directory / "config.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return directory


def read_dataset(directory):
    """Load ``(asset_ids, tensors, ttfs)`` from a dataset directory."""
    directory = Path(directory)
    ids, tensors, ttfs = [], [], []
    with (directory / "manifest.csv").open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["asset_id"])
            tensors.append(read_tnsr(directory / row["tensor_file"]))
            ttfs.append(float(row["ttf"]))
    return ids, np.stack(tensors), np.array(ttfs)
