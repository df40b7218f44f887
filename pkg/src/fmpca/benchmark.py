"""Replicated prognostics benchmark: federated vs combined vs single-user models.

Each replication draws a random train/test split, assigns the training assets
to users, and fits five methods:

``fmpca``
    federated MPCA plus federated lognormal regression over all users;
``combined``
    centralized MPCA and regression on the pooled training set;
``user_k``
    MPCA and regression on user ``k``'s assets only.

Ranks come from a variation fraction ``q`` per method (or from k-fold
cross-validation when enabled). Test errors are ``|estimate - truth| / truth``.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .datagen import SimConfig, generate_dataset
from .federated import audit_log, fed_mpca, make_participants
from .mpca import mpca_fit, project_features
from .prognostics import fed_lls_fit, lls_fit, prediction_error, predict_ttf

logger = logging.getLogger(__name__)

__all__ = [
    "BenchmarkConfig",
    "MethodResult",
    "BenchmarkReport",
    "run_replication",
    "run_benchmark",
    "cv_variation",
    "ERROR_COLUMNS",
    "SUMMARY_COLUMNS",
]

ERROR_COLUMNS = ("replication", "method", "asset_id", "true_ttf", "predicted_ttf", "error")
SUMMARY_COLUMNS = ("replication", "method", "n_train", "ranks", "iterations", "converged",
                   "status", "median", "q1", "q3", "iqr", "max_dev_vs_combined")


@dataclass
class BenchmarkConfig:
    sim: SimConfig = field(default_factory=lambda: SimConfig(
        n=11, kept=(30, 60, 90, 120, 150), asset_count=125))
    split: tuple[int, ...] = (50, 30, 20)
    replications: int = 10
    variation: float = 0.97
    eta: float | None = None
    max_iter: int = 10
    family: str = "lognormal"
    seed: int = 0
    methods: tuple[str, ...] | None = None
    cv_folds: int = 0
    cv_grid: tuple[float, ...] = (0.8, 0.85, 0.9, 0.95, 0.97, 0.99)

    def __post_init__(self):
        if isinstance(self.sim, dict):
            self.sim = SimConfig.from_dict(self.sim)
        self.split = tuple(int(m) for m in self.split)
        if any(m < 1 for m in self.split):
            raise ValueError("every user needs at least one training asset")
        if sum(self.split) >= self.sim.asset_count:
            raise ValueError(
                f"split sums to {sum(self.split)}, leaving no test assets out of "
                f"{self.sim.asset_count}"
            )
        if self.replications < 1:
            raise ValueError("replications must be positive")
        if self.family not in ("normal", "lognormal"):
            raise ValueError("benchmark family must be normal or lognormal")
        known = self.all_methods()
        if self.methods is not None:
            self.methods = tuple(self.methods)
            bad = [m for m in self.methods if m not in known]
            if bad or not self.methods:
                raise ValueError(f"unknown methods {bad}; choose from {known}")
        if self.cv_folds == 1 or self.cv_folds < 0:
            raise ValueError("cv_folds must be 0 (off) or at least 2")

    def all_methods(self) -> tuple[str, ...]:
        return ("fmpca", "combined") + tuple(f"user_{k}" for k in range(1, len(self.split) + 1))

    @property
    def active_methods(self) -> tuple[str, ...]:
        return self.methods or self.all_methods()

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for key in ("split", "methods", "cv_grid"):
            if known.get(key) is not None:
                known[key] = tuple(known[key])
        return cls(**known)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sim"] = self.sim.to_dict()
        return d


@dataclass
class MethodResult:
    method: str
    n_train: int
    ranks: tuple[int, ...] = ()
    iterations: int = 0
    converged: bool = False
    status: str = "ok"
    scatter_history: list[float] = field(default_factory=list)
    audit_findings: list[str] = field(default_factory=list)
    predictions: np.ndarray = field(default_factory=lambda: np.zeros(0))
    errors: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def quartiles(self) -> tuple[float, float, float]:
        if self.errors.size == 0:
            return (float("nan"),) * 3
        q1, med, q3 = np.percentile(self.errors, [25, 50, 75])
        return float(med), float(q1), float(q3)


@dataclass
class BenchmarkReport:
    config: BenchmarkConfig
    # replications[r][method] -> MethodResult
    replications: list[dict[str, MethodResult]]
    test_ids: list[list[str]]
    test_ttfs: list[np.ndarray]

    def max_dev(self, rep: int, method: str) -> float:
        """Largest relative gap between a method's and the combined predictions."""
        res = self.replications[rep]
        if "combined" not in res or method not in res:
            return float("nan")
        a, b = res[method].predictions, res["combined"].predictions
        if a.size == 0 or b.size == 0:
            return float("nan")
        return float(np.max(np.abs(a - b) / np.abs(b)))

    def errors_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(ERROR_COLUMNS)
        for r, res in enumerate(self.replications):
            for method in self.config.active_methods:
                mr = res[method]
                for i, asset in enumerate(self.test_ids[r]):
                    pred = mr.predictions[i] if mr.predictions.size else float("nan")
                    err = mr.errors[i] if mr.errors.size else float("nan")
                    writer.writerow([r, method, asset, _fmt(self.test_ttfs[r][i]),
                                     _fmt(pred), _fmt(err)])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {self.header()}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for r, res in enumerate(self.replications):
            for method in self.config.active_methods:
                mr = res[method]
                med, q1, q3 = mr.quartiles()
                writer.writerow([r, method, mr.n_train, "x".join(map(str, mr.ranks)),
                                 mr.iterations, int(mr.converged), mr.status,
                                 _fmt(med), _fmt(q1), _fmt(q3), _fmt(q3 - q1),
                                 _fmt(self.max_dev(r, method))])
        return buf.getvalue()

    def header(self) -> str:
        cfg = self.config
        if cfg.cv_folds:
            how = f"{cfg.cv_folds}-fold cross-validation over q in {list(cfg.cv_grid)}"
        else:
            how = (f"fixed variation fraction q={cfg.variation} "
                   "(cross-validated rank selection disabled for runtime)")
        return f"rank selection: {how}; family={cfg.family}; seed={cfg.seed}"

    def medians(self, method: str) -> np.ndarray:
        return np.array([res[method].quartiles()[0] for res in self.replications])


def _fmt(x: float) -> str:
    return repr(float(x))


def _rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, rep)))


def _predict(model, features) -> np.ndarray:
    return np.array([predict_ttf(model, f)[2] for f in features])


def cv_variation(tensors, ttfs, grid: Sequence[float], folds: int, family: str,
                 rng: np.random.Generator, max_iter: int = 10, eta=None) -> float:
    """Variation fraction with the lowest mean k-fold validation error."""
    m = len(ttfs)
    if m < folds:
        raise ValueError(f"{folds}-fold cross-validation needs at least {folds} assets")
    perm = rng.permutation(m)
    chunks = np.array_split(perm, folds)
    best, best_score = None, np.inf
    for q in grid:
        errs = []
        try:
            for chunk in chunks:
                train = np.setdiff1d(perm, chunk)
                model = mpca_fit(tensors[train], q, eta=eta, max_iter=max_iter)
                prog = lls_fit(project_features(tensors[train], model), ttfs[train], family)
                pred = _predict(prog, project_features(tensors[chunk], model))
                errs.extend(np.abs(pred - ttfs[chunk]) / ttfs[chunk])
        except np.linalg.LinAlgError:
            continue
        score = float(np.mean(errs))
        if score < best_score:
            best, best_score = q, score
    if best is None:
        raise np.linalg.LinAlgError("no variation fraction gave a full-rank design")
    return best


def _central(method, tensors, ttfs, test, test_ttf, cfg, q) -> MethodResult:
    res = MethodResult(method, len(ttfs))
    try:
        model = mpca_fit(tensors, q, eta=cfg.eta, max_iter=cfg.max_iter)
        res.ranks, res.iterations, res.converged = model.ranks, model.iterations_run, model.converged
        res.scatter_history = list(model.scatter_history)
        prog = lls_fit(project_features(tensors, model), ttfs, cfg.family)
    except np.linalg.LinAlgError as exc:
        res.status = "rank-deficient"
        logger.info("%s: %s", method, exc)
        return res
    res.predictions = _predict(prog, project_features(test, model))
    res.errors = np.array([prediction_error(p, z) for p, z in zip(res.predictions, test_ttf)])
    return res


def _federated(tensors, ttfs, test, test_ttf, cfg, q, seed) -> MethodResult:
    res = MethodResult("fmpca", len(ttfs))
    users = make_participants(tensors, cfg.split)
    fed = fed_mpca(users, ranks=q, eta=cfg.eta, max_iter=cfg.max_iter, seed=seed)
    res.ranks, res.iterations, res.converged = fed.ranks, fed.iterations_run, fed.converged
    res.scatter_history = list(fed.scatter_history)
    res.audit_findings = audit_log(fed.log, users)
    bounds = np.cumsum([0, *cfg.split])
    data = {p.user_id: (fed.features[p.user_id], ttfs[a:b])
            for p, a, b in zip(users, bounds[:-1], bounds[1:])}
    try:
        prog = fed_lls_fit(users, data, cfg.family, seed=seed)
    except np.linalg.LinAlgError as exc:
        res.status = "rank-deficient"
        logger.info("fmpca: %s", exc)
        return res
    res.predictions = _predict(prog, project_features(test, fed.to_model()))
    res.errors = np.array([prediction_error(p, z) for p, z in zip(res.predictions, test_ttf)])
    return res


def run_replication(cfg: BenchmarkConfig, tensors, ttfs, ids, rep: int):
    """One replication; returns ``(results by method, test ids, test ttfs)``."""
    rng = _rep_rng(cfg.seed, rep)
    perm = rng.permutation(len(ttfs))
    n_train = sum(cfg.split)
    train, test = perm[:n_train], np.sort(perm[n_train:])
    x_tr, z_tr = tensors[train], ttfs[train]
    x_te, z_te = tensors[test], ttfs[test]
    bounds = np.cumsum([0, *cfg.split])

    def variation(x, z):
        if not cfg.cv_folds:
            return cfg.variation
        return cv_variation(x, z, cfg.cv_grid, cfg.cv_folds, cfg.family, rng,
                            cfg.max_iter, cfg.eta)

    pooled_q = None
    results = {}
    for method in cfg.active_methods:
        if method in ("fmpca", "combined"):
            # one pooled selection shared by both; for fmpca it stands in for a
            # federated search
            if pooled_q is None:
                pooled_q = variation(x_tr, z_tr)
            if method == "fmpca":
                results[method] = _federated(x_tr, z_tr, x_te, z_te, cfg, pooled_q,
                                             cfg.seed + rep)
            else:
                results[method] = _central(method, x_tr, z_tr, x_te, z_te, cfg, pooled_q)
        else:
            k = int(method.split("_")[1])
            sl = slice(bounds[k - 1], bounds[k])
            try:
                q = variation(x_tr[sl], z_tr[sl])
            except (ValueError, np.linalg.LinAlgError):
                results[method] = MethodResult(method, sl.stop - sl.start, status="rank-deficient")
                continue
            results[method] = _central(method, x_tr[sl], z_tr[sl], x_te, z_te, cfg, q)
    return results, [ids[i] for i in test], z_te


def run_benchmark(cfg: BenchmarkConfig, dataset=None) -> BenchmarkReport:
    """Generate (or take) a dataset and run every replication in order.

    ``dataset`` may be ``(ids, tensors, ttfs)``; otherwise ``cfg.sim`` is
    simulated with ``cfg.seed``.
    """
    if dataset is None:
        ds = generate_dataset(cfg.sim, cfg.seed)
        width = max(4, len(str(len(ds.assets) - 1)))
        ids = [f"asset_{i:0{width}d}" for i in range(len(ds.assets))]
        tensors, ttfs = ds.tensors(), ds.ttfs()
    else:
        ids, tensors, ttfs = dataset
        tensors, ttfs = np.asarray(tensors), np.asarray(ttfs)
    if sum(cfg.split) >= len(ttfs):
        raise ValueError(f"split {cfg.split} leaves no test assets out of {len(ttfs)}")
    reps, test_ids, test_ttfs = [], [], []
    for rep in range(cfg.replications):
        res, tid, tz = run_replication(cfg, tensors, ttfs, ids, rep)
        reps.append(res)
        test_ids.append(tid)
        test_ttfs.append(tz)
    return BenchmarkReport(cfg, reps, test_ids, test_ttfs)
