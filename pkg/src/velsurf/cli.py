"""Command-line interface orchestrating the pipeline end to end.

Every run that writes files also writes a JSON manifest next to its primary
output recording the command, all resolved parameters, input fingerprints,
and the tool version, so results can be reproduced or audited later.
Outputs are written atomically (temp file, then rename).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, FORMAT_VERSION
from .data_model import load_dataset, serialize_experiment, validate_dataset
from .errors import DataError, NumericalError, VelsurfError
from .kernels import AnisotropicRbfKernel, Kernel, PolynomialKernel, RbfKernel
from .model_selection import (
    DEFAULT_CS,
    DEFAULT_EPSILONS,
    DEFAULT_GAMMAS,
    REDUCED_CS,
    REDUCED_EPSILONS,
    REDUCED_GAMMAS,
    STRATEGIES,
    STRATEGY_BY_EXPERIMENT,
    grid_search,
)
from .preprocess import (
    DEFAULT_HALF_WIDTH,
    DEFAULT_ONSET_THRESHOLD,
    load_scaled_dataset,
    preprocess_dataset,
    save_scaled_dataset,
)
from .solver import SolverConfig, kkt_violation, solve_qp_reference
from .surface import (
    DEFAULT_CELL_BUDGET,
    DEFAULT_OUTLIER_THRESHOLD,
    flag_outliers,
    reconstruct_surface,
    score_experiments,
    score_experiments_loo,
)
from .svr import HyperParams, load_model, predict_physical, save_model, train
from .synthgen import SynthConfig, generate_dataset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage problems; this tool reserves 2 for
    data errors, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("usage", message)
        raise SystemExit(EXIT_USAGE)


def _emit_error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(out_path: Path, command: str, params: dict, inputs: list) -> None:
    manifest = {
        "command": command,
        "parameters": params,
        "inputs": {str(p): _sha256_file(p) for p in inputs},
        "tool_version": __version__,
        "format_version": FORMAT_VERSION,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    _atomic_write(Path(str(out_path) + ".manifest.json"),
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _resolved_params(args: argparse.Namespace) -> dict:
    skip = {"func", "config"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        if isinstance(value, Path):
            value = str(value)
        if isinstance(value, list):
            value = [str(v) if isinstance(v, Path) else v for v in value]
        out[key] = value
    return out


def _parse_float_list(text: str, what: str) -> tuple[float, ...]:
    try:
        values = tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise DataError(f"{what} must be a comma-separated number list, got {text!r}") from None
    if not values:
        raise DataError(f"{what} is empty")
    return values


def _parse_pair(text: str, what: str) -> tuple[float, float]:
    values = _parse_float_list(text, what)
    if len(values) != 2:
        raise DataError(f"{what} needs exactly two numbers (intercept,slope), got {text!r}")
    return values


def _kernel_from_args(args: argparse.Namespace) -> Kernel:
    if args.kernel == "rbf":
        return RbfKernel(gamma=args.gamma)
    if args.kernel == "arbf":
        return AnisotropicRbfKernel(gammas=(args.gamma_t, args.gamma_w))
    return PolynomialKernel(degree=args.degree, scale=args.scale, offset=args.offset)


def _solver_config(args: argparse.Namespace, C: float, epsilon: float) -> SolverConfig:
    return SolverConfig(
        C=C, epsilon=epsilon, tolerance=args.tolerance,
        max_iterations=args.max_iterations, cache_budget=args.cache_budget,
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    dataset = load_dataset(args.paths)
    report = validate_dataset(
        dataset, min_length=args.min_length,
        thickness_range=tuple(args.thickness_range),
    )
    text = report.format()
    if args.out:
        _atomic_write(args.out, text)
        _write_manifest(args.out, "validate", _resolved_params(args), args.paths)
    else:
        sys.stdout.write(text)
    return EXIT_OK if not report.has_errors else EXIT_DATA


def cmd_preprocess(args) -> int:
    dataset = load_dataset(args.paths)
    scaled, _ = preprocess_dataset(
        dataset, half_width=args.half_width,
        threshold_frac=args.threshold_frac, smoothing=not args.no_smoothing,
    )
    save_scaled_dataset(scaled, args.out)
    _write_manifest(args.out, "preprocess", _resolved_params(args), args.paths)
    print(f"wrote {scaled.n_points} points from {len(scaled.experiment_ids)} experiments "
          f"to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = load_scaled_dataset(args.dataset)
    kernel = _kernel_from_args(args)
    hp = HyperParams(gamma=args.gamma, C=args.C, epsilon=args.epsilon)
    cfg = _solver_config(args, args.C, args.epsilon)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = train(dataset, hp, cfg, kernel=kernel)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if args.verify:
        solution = solve_qp_reference(dataset.x, dataset.y, kernel, cfg)
        gap = abs(solution.objective - model.meta.objective)
        kkt = kkt_violation(solution, dataset.x, dataset.y, kernel, cfg)
        print(f"verify: reference objective gap {gap:.3e}, reference KKT violation {kkt:.3e}")
    save_model(model, args.out)
    _write_manifest(args.out, "train", _resolved_params(args), [args.dataset])
    print(f"trained on {model.meta.n_train} points: {model.n_support} support vectors, "
          f"objective {model.meta.objective:.6g}, converged={model.meta.converged}")
    if args.strict and not model.meta.converged:
        _emit_error("numerical", "solver did not converge and --strict was given")
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    dataset = load_scaled_dataset(args.dataset)
    if args.reduced:
        gammas, cs, epsilons = REDUCED_GAMMAS, REDUCED_CS, REDUCED_EPSILONS
    else:
        gammas = _parse_float_list(args.gammas, "--gammas")
        cs = _parse_float_list(args.Cs, "--Cs")
        epsilons = _parse_float_list(args.epsilons, "--epsilons")
    cfg = SolverConfig(
        C=1.0, epsilon=0.001, tolerance=args.tolerance,
        max_iterations=args.max_iterations, cache_budget=args.cache_budget,
    )

    def progress(done, total, result):
        if not args.quiet:
            print(f"[{done}/{total}] {result.params.label()}: "
                  f"mean_error={result.mean_error:.6g}", file=sys.stderr)

    table = grid_search(
        dataset, gammas=gammas, cs=cs, epsilons=epsilons, k=args.k,
        strategy=args.strategy, seed=args.seed, config=cfg, jobs=args.jobs,
        progress=progress,
    )
    _atomic_write(args.out, table.to_csv(include_timing=not args.no_timing))
    _write_manifest(args.out, "gridsearch", _resolved_params(args), [args.dataset])
    best = table.best
    best_payload = {
        "gamma": best.params.gamma, "C": best.params.C, "epsilon": best.params.epsilon,
        "mean_error": best.mean_error, "complete": best.complete,
    }
    if args.best_out:
        _atomic_write(args.best_out, json.dumps(best_payload, indent=2, sort_keys=True) + "\n")
    print(f"best: {best.params.label()} mean_error={best.mean_error:.6g}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    if args.query_csv:
        rows = []
        with open(args.query_csv, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#") or line.startswith("time_ns"):
                    continue
                cells = line.split(",")
                if len(cells) != 2:
                    raise DataError(
                        f"{args.query_csv}: line {line_no}: expected 'time_ns,thickness_in'"
                    )
                rows.append((float(cells[0]), float(cells[1])))
        if not rows:
            raise DataError(f"{args.query_csv}: no query rows")
        t = np.array([r[0] for r in rows])
        w = np.array([r[1] for r in rows])
        values = np.atleast_1d(predict_physical(model, t, w))
    elif args.time_ns is not None and args.thickness_in is not None:
        values = np.array([predict_physical(model, args.time_ns, args.thickness_in)])
    else:
        raise DataError("predict needs either --time-ns and --thickness-in, or --query-csv")
    text = "\n".join(repr(float(v)) for v in values) + "\n"
    if args.out:
        _atomic_write(args.out, text)
        inputs = [args.model] + ([args.query_csv] if args.query_csv else [])
        _write_manifest(args.out, "predict", _resolved_params(args), inputs)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_surface(args) -> int:
    model = load_model(args.model)
    sv = model.support_vectors
    if sv.shape[0] == 0:
        raise DataError("model has no support vectors; specify explicit ranges")
    scaler = model.scaler
    t_lo = args.t_min if args.t_min is not None else float(scaler.unscale_time(sv[:, 0].min()))
    t_hi = args.t_max if args.t_max is not None else float(scaler.unscale_time(sv[:, 0].max()))
    w_lo = args.w_min if args.w_min is not None else float(scaler.unscale_thickness(sv[:, 1].min()))
    w_hi = args.w_max if args.w_max is not None else float(scaler.unscale_thickness(sv[:, 1].max()))
    t_step = args.t_step if args.t_step is not None else scaler.time_step_ns
    w_step = args.w_step if args.w_step is not None else scaler.thickness_step_in / 4.0
    grid = reconstruct_surface(
        model, (t_lo, t_hi, t_step), (w_lo, w_hi, w_step), cell_budget=args.cell_budget,
    )
    text = grid.to_matrix_csv() if args.format == "matrix" else grid.to_xyz_csv()
    _atomic_write(args.out, text)
    _write_manifest(args.out, "surface", _resolved_params(args), [args.model])
    print(f"wrote {grid.times_ns.shape[0]} x {grid.thicknesses_in.shape[0]} surface to {args.out}")
    return EXIT_OK


def cmd_outliers(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.paths)
    if args.loo:
        meta = model.meta
        gamma = model.kernel.params().get("gamma")
        if gamma is None:
            gammas = model.kernel.params()
            gamma = (gammas["gamma_0"], gammas["gamma_1"])
        hp = HyperParams(gamma=gamma, C=meta.C, epsilon=meta.epsilon)
        cfg = SolverConfig(C=meta.C, epsilon=meta.epsilon, tolerance=meta.tolerance,
                           max_iterations=meta.max_iterations)
        scores = score_experiments_loo(
            dataset, hp, cfg, half_width=args.half_width,
            threshold_frac=args.threshold_frac, smoothing=not args.no_smoothing,
        )
    else:
        scores = score_experiments(
            model, dataset, half_width=args.half_width,
            threshold_frac=args.threshold_frac, smoothing=not args.no_smoothing,
        )
    report = flag_outliers(scores, threshold=args.threshold)
    text = report.to_csv()
    if args.out:
        _atomic_write(args.out, text)
        _write_manifest(args.out, "outliers", _resolved_params(args),
                        [args.model] + list(args.paths))
    else:
        sys.stdout.write(text)
    flagged = [e.id for e in report.entries if e.flagged]
    if flagged:
        print(f"flagged {len(flagged)} outlier(s): {', '.join(flagged)}", file=sys.stderr)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        thicknesses_in=tuple(_parse_float_list(args.thicknesses, "--thicknesses")),
        n_steps=args.n_steps, dt_ns=args.dt_ns,
        peak_mps=_parse_pair(args.peak, "--peak"),
        onset_ns=_parse_pair(args.onset, "--onset"),
        rise_ns=_parse_pair(args.rise, "--rise"),
        decay_per_ns=_parse_pair(args.decay, "--decay"),
        ring_amplitude=args.ring_amplitude,
        ring_period_ns=args.ring_period,
        noise_rel=0.0 if args.noiseless else args.noise_rel,
        seed=args.seed,
    )
    dataset, _ = generate_dataset(cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for series in dataset:
        path = out_dir / f"{series.id}.csv"
        _atomic_write(path, serialize_experiment(series))
        written.append(path)
    _write_manifest(out_dir / "synth", "synth", _resolved_params(args), written)
    print(f"wrote {len(written)} experiment files to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------

def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tolerance", type=float, default=1e-3,
                   help="KKT stopping tolerance (default 1e-3)")
    p.add_argument("--max-iterations", type=int, default=10_000_000,
                   help="pair-update budget (default 1e7)")
    p.add_argument("--cache-budget", type=int, default=512 * 2**20,
                   help="kernel row cache in bytes (default 512 MiB)")


def _add_preprocess_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--half-width", type=int, default=DEFAULT_HALF_WIDTH,
                   help="triangular smoothing half-width in samples (default 5)")
    p.add_argument("--threshold-frac", type=float, default=DEFAULT_ONSET_THRESHOLD,
                   help="onset threshold as a fraction of peak (default 0.05)")
    p.add_argument("--no-smoothing", action="store_true", help="skip smoothing")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="velsurf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"velsurf {__version__} (format v{FORMAT_VERSION})")
    parser.add_argument("--config", type=Path, default=None,
                        help="key=value defaults file (flags override)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="structural checks on experiment files")
    p.add_argument("paths", nargs="+", type=Path)
    p.add_argument("--min-length", type=int, default=100)
    p.add_argument("--thickness-range", type=float, nargs=2, default=[0.01, 10.0],
                   metavar=("LO", "HI"))
    p.add_argument("-o", "--out", type=Path, default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("preprocess", help="smooth, align, truncate, scale")
    p.add_argument("paths", nargs="+", type=Path)
    p.add_argument("-o", "--out", type=Path, required=True)
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="fit an epsilon-SVR model on a scaled dataset")
    p.add_argument("dataset", type=Path)
    p.add_argument("-o", "--out", type=Path, required=True)
    p.add_argument("--kernel", choices=("rbf", "arbf", "poly"), default="rbf")
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--gamma-t", type=float, default=0.1, help="time-axis gamma (arbf)")
    p.add_argument("--gamma-w", type=float, default=0.1, help="thickness-axis gamma (arbf)")
    p.add_argument("--degree", type=int, default=3, help="polynomial degree")
    p.add_argument("--scale", type=float, default=1.0, help="polynomial scale")
    p.add_argument("--offset", type=float, default=1.0, help="polynomial offset")
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=0.001)
    p.add_argument("--verify", action="store_true",
                   help="cross-check against the dense reference solver (small datasets)")
    p.add_argument("--strict", action="store_true",
                   help="exit 3 if the solver did not converge")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gridsearch", help="cross-validated (gamma, C, epsilon) search")
    p.add_argument("dataset", type=Path)
    p.add_argument("-o", "--out", type=Path, required=True)
    p.add_argument("--best-out", type=Path, default=None)
    p.add_argument("--gammas", default=",".join(str(g) for g in DEFAULT_GAMMAS))
    p.add_argument("--Cs", default=",".join(str(c) for c in DEFAULT_CS))
    p.add_argument("--epsilons", default=",".join(str(e) for e in DEFAULT_EPSILONS))
    p.add_argument("--reduced", action="store_true",
                   help="use the documented reduced 3x3x2 grid")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--strategy", choices=STRATEGIES, default=STRATEGY_BY_EXPERIMENT)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--no-timing", action="store_true",
                   help="omit wall-time column for byte-reproducible tables")
    p.add_argument("--quiet", action="store_true")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("predict", help="evaluate a model at (time, thickness) queries")
    p.add_argument("model", type=Path)
    p.add_argument("--time-ns", type=float, default=None)
    p.add_argument("--thickness-in", type=float, default=None)
    p.add_argument("--query-csv", type=Path, default=None)
    p.add_argument("-o", "--out", type=Path, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("surface", help="dense surface reconstruction to CSV")
    p.add_argument("model", type=Path)
    p.add_argument("-o", "--out", type=Path, required=True)
    p.add_argument("--format", choices=("matrix", "xyz"), default="matrix")
    p.add_argument("--t-min", type=float, default=None)
    p.add_argument("--t-max", type=float, default=None)
    p.add_argument("--t-step", type=float, default=None)
    p.add_argument("--w-min", type=float, default=None)
    p.add_argument("--w-max", type=float, default=None)
    p.add_argument("--w-step", type=float, default=None)
    p.add_argument("--cell-budget", type=int, default=DEFAULT_CELL_BUDGET)
    p.set_defaults(func=cmd_surface)

    p = sub.add_parser("outliers", help="score experiments against a surface")
    p.add_argument("model", type=Path)
    p.add_argument("paths", nargs="+", type=Path)
    p.add_argument("--threshold", type=float, default=DEFAULT_OUTLIER_THRESHOLD)
    p.add_argument("--loo", action="store_true",
                   help="leave-one-out: retrain without each experiment before scoring it")
    p.add_argument("-o", "--out", type=Path, default=None)
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_outliers)

    p = sub.add_parser("synth", help="generate synthetic experiment files")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--thicknesses", default="0.25,0.3125,0.375,0.4375,0.5")
    p.add_argument("--n-steps", type=int, default=1656)
    p.add_argument("--dt-ns", type=float, default=2.0)
    p.add_argument("--peak", default="2400,-1600", help="peak law intercept,slope (m/s per in)")
    p.add_argument("--onset", default="150,900", help="onset law intercept,slope (ns per in)")
    p.add_argument("--rise", default="20,40", help="rise law intercept,slope (ns per in)")
    p.add_argument("--decay", default="0.004,0", help="ring decay law intercept,slope (1/ns)")
    p.add_argument("--ring-amplitude", type=float, default=0.02)
    p.add_argument("--ring-period", type=float, default=60.0)
    p.add_argument("--noise-rel", type=float, default=0.04)
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Two-pass parse so ``--config`` supplies defaults that flags override."""
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config {args.config}: {exc}") from exc
    overrides = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{args.config}: line {line_no}: expected key=value")
        key, _, value = line.partition("=")
        overrides[key.strip().replace("-", "_")] = value.strip()
    if not overrides:
        return args
    merged = dict(vars(args))
    provided = _explicit_flags(argv)
    for key, raw in overrides.items():
        if key not in merged:
            raise DataError(f"{args.config}: unknown option {key!r}")
        if key in provided:
            continue
        current = merged[key]
        if isinstance(current, bool):
            merged[key] = raw.lower() in ("1", "true", "yes", "on")
        elif isinstance(current, int):
            merged[key] = int(raw)
        elif isinstance(current, float):
            merged[key] = float(raw)
        elif isinstance(current, Path) or (current is None and key in ("out", "best_out")):
            merged[key] = Path(raw)
        else:
            merged[key] = raw
    return argparse.Namespace(**merged)


def _explicit_flags(argv: list[str]) -> set[str]:
    out = set()
    for token in argv:
        if token.startswith("--"):
            out.add(token[2:].split("=")[0].replace("-", "_"))
    return out


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
        return args.func(args)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else EXIT_USAGE
        return code
    except NumericalError as exc:
        _emit_error("numerical", str(exc))
        return EXIT_NUMERICAL
    except DataError as exc:
        _emit_error("data", str(exc))
        return EXIT_DATA
    except VelsurfError as exc:
        _emit_error("error", str(exc))
        return EXIT_DATA
    except OSError as exc:
        _emit_error("io", str(exc))
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
