"""Command-line front end: data generation, fitting, prediction, comparison, benchmark.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
Non-convergence within the sweep budget is not an error; it is recorded in
the outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .benchmark import BenchmarkConfig, run_benchmark
from .datagen import SimConfig, generate_dataset, read_dataset, write_dataset
from .federated import audit_log, export_log, fed_mpca, make_participants
from .mpca import load_model, mpca_fit, project_features, save_model
from .prognostics import (
    fed_lls_fit,
    lls_fit,
    load_prog_model,
    predict_ttf,
    save_prog_model,
)
from .tensor import read_tnsr

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(Exception):
    pass


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _ranks_arg(args):
    if args.ranks is not None:
        return tuple(args.ranks)
    return float(args.variation)


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    sim = SimConfig.from_dict(cfg.get("sim", cfg))
    if args.seed is not None:
        sim.seed = args.seed
    if args.asset_count is not None:
        sim = SimConfig.from_dict({**sim.to_dict(), "asset_count": args.asset_count})
    ds = generate_dataset(sim)
    out = write_dataset(ds, args.out)
    print(f"wrote {len(ds.assets)} assets to {out} (ranks {ds.ranks})")
    return EXIT_OK


def cmd_fit(args) -> int:
    ids, tensors, ttfs = read_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ranks = _ranks_arg(args)
    if args.mode == "central":
        model = mpca_fit(tensors, ranks, eta=args.eta, max_iter=args.max_iter)
        prog = lls_fit(project_features(tensors, model), ttfs, args.family)
        findings: list[str] = []
    else:
        split = args.split or [len(ids)]
        if sum(split) != len(ids):
            raise ConfigError(f"split {split} does not sum to the {len(ids)} dataset assets")
        users = make_participants(tensors, split)
        fed = fed_mpca(users, ranks=ranks, eta=args.eta, max_iter=args.max_iter, seed=args.seed)
        model = fed.to_model()
        bounds = np.cumsum([0, *split])
        data = {p.user_id: (fed.features[p.user_id], ttfs[a:b])
                for p, a, b in zip(users, bounds[:-1], bounds[1:])}
        prog = fed_lls_fit(users, data, args.family, seed=args.seed)
        findings = audit_log(fed.log, users)
        export_log(fed.log, out / "protocol_log.jsonl")
    save_model(model, out / "mpca")
    save_prog_model(prog, out / "prog.json")
    _write_json(out / "fit.json", {
        "mode": args.mode,
        "split": args.split,
        "ranks": list(model.ranks),
        "iterations": model.iterations_run,
        "converged": model.converged,
        "scatter_history": [float(v) for v in model.scatter_history],
        "family": args.family,
        "seed": args.seed,
        "audit_findings": findings,
    })
    flag = "" if model.converged else " (not converged)"
    print(f"{args.mode} fit: ranks {model.ranks}, {model.iterations_run} sweeps{flag}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model_dir = Path(args.model)
    model = load_model(model_dir / "mpca")
    prog = load_prog_model(model_dir / "prog.json")
    x = read_tnsr(args.tensor)
    if x.shape != model.dims:
        raise ConfigError(f"tensor dims {x.shape} do not match model dims {model.dims}")
    location, scale, point = predict_ttf(prog, project_features(x, model))
    result = {"location": location, "scale": scale, "point": point}
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _sign_aligned_dev(a: np.ndarray, b: np.ndarray) -> float:
    signs = np.sign(np.sum(a * b, axis=0))
    signs[signs == 0] = 1.0
    return float(np.max(np.abs(a - b * signs)))


def cmd_diff(args) -> int:
    a_dir, b_dir = Path(args.first), Path(args.second)
    a, b = load_model(a_dir / "mpca"), load_model(b_dir / "mpca")
    if a.dims != b.dims or a.ranks != b.ranks:
        raise ConfigError(f"models differ in shape: dims {a.dims}/{b.dims}, ranks {a.ranks}/{b.ranks}")
    factor_dev = max(_sign_aligned_dev(u, v) for u, v in zip(a.factors, b.factors))
    ha, hb = np.array(a.scatter_history), np.array(b.scatter_history)
    if ha.shape == hb.shape:
        scatter_dev = float(np.max(np.abs(ha - hb) / np.maximum(np.abs(hb), 1e-300)))
    else:
        scatter_dev = float("inf")
    report = {
        "max_factor_deviation": factor_dev,
        "max_mean_deviation": float(np.max(np.abs(a.mean - b.mean))),
        "max_scatter_relative_deviation": scatter_dev,
    }
    if (a_dir / "prog.json").exists() and (b_dir / "prog.json").exists():
        pa, pb = load_prog_model(a_dir / "prog.json"), load_prog_model(b_dir / "prog.json")
        report["beta0_deviation"] = abs(pa.beta0 - pb.beta0)
        report["max_beta1_deviation"] = float(np.max(np.abs(pa.beta1 - pb.beta1), initial=0.0))
        report["sigma_deviation"] = abs(pa.sigma - pb.sigma)
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.tol is not None and factor_dev > args.tol:
        print(f"factor deviation {factor_dev:.3e} exceeds {args.tol:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_benchmark(args) -> int:
    raw = _load_json(args.config) if args.config else {}
    if args.replications is not None:
        raw["replications"] = args.replications
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.variation is not None:
        raw["variation"] = args.variation
    if args.cv:
        raw["cv_folds"] = args.cv
    if args.methods:
        raw["methods"] = args.methods.split(",")
    cfg = BenchmarkConfig.from_dict(raw)
    dataset = read_dataset(args.dataset) if args.dataset else None
    report = run_benchmark(cfg, dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "errors.csv").write_text(report.errors_csv(), encoding="utf-8")
    (out / "summary.csv").write_text(report.summary_csv(), encoding="utf-8")
    _write_json(out / "config.json", cfg.to_dict())
    print(report.header())
    for method in cfg.active_methods:
        med = report.medians(method)
        print(f"{method:>10}: median error over replications {np.nanmedian(med):.4f}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fmpca", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate a heat-transfer dataset")
    p.add_argument("--config", help="JSON with SimConfig fields (optionally under 'sim')")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--asset-count", type=int)
    p.set_defaults(func=cmd_gen_data)

    def add_fit_options(q):
        g = q.add_mutually_exclusive_group()
        g.add_argument("--ranks", type=_int_list, help="explicit ranks, e.g. 3,3,2")
        g.add_argument("--variation", type=float, default=0.97,
                       help="variation fraction for rank selection (default 0.97)")
        q.add_argument("--eta", type=float, help="absolute convergence tolerance")
        q.add_argument("--max-iter", type=int, default=10)
        q.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("fit", help="fit MPCA and a lognormal regression")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=("central", "federated"), default="central")
    p.add_argument("--split", type=_int_list, help="per-user asset counts, e.g. 250,100,50")
    p.add_argument("--family", choices=("normal", "lognormal"), default="lognormal")
    p.add_argument("--out", required=True)
    add_fit_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict the TTF of one tensor")
    p.add_argument("--model", required=True, help="directory written by 'fit'")
    p.add_argument("--tensor", required=True, help="TNSR file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("diff", help="compare two fitted model directories")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("--tol", type=float, help="exit 3 if the factor deviation exceeds this")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("benchmark", help="replicated prognostics benchmark")
    p.add_argument("--config", help="JSON with BenchmarkConfig fields")
    p.add_argument("--dataset", help="use an existing dataset instead of simulating")
    p.add_argument("--out", required=True)
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--variation", type=float)
    p.add_argument("--cv", type=int, default=0, metavar="FOLDS",
                   help="select the variation fraction by k-fold cross-validation")
    p.add_argument("--methods", help="comma-separated subset, e.g. fmpca,user_3")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    # LinAlgError subclasses ValueError, so it has to be caught first
    except (np.linalg.LinAlgError, OverflowError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, KeyError, TypeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
