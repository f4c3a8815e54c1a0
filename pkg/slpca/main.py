"""
slpca command line.

Commands:
- fit        Fit at a given (k, λ), or choose λ by BIC with --select-lambda
- select     Staged (λ, k, λ) search by BIC
- simulate   Planted-model experiment from a key = value spec file
- bootstrap  Parametric bootstrap envelope of fitted probabilities
- diagnose   Residual correlations, group F tests and a permutation check

Exit codes: 0 success, 2 validation error, 3 numerical degeneracy, 4 I/O.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from pydantic import ValidationError

from slpca import __version__
from slpca.config import settings
from slpca.graph.workflow import select_k
from slpca.logging_config import LoggerSetup
from slpca.models.schemas import Bound, FitConfig, FitMode, Link, ScoreUpdate
from slpca.services import evaluation, matrix_io, selection, simulation, solver
from slpca.services.errors import (
    DataValidationError,
    SelectionAbortedError,
    SlpcaError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DEGENERATE = 3
EXIT_IO = 4


def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _add_fit_options(parser: argparse.ArgumentParser, with_k: bool = True) -> None:
    if with_k:
        parser.add_argument("--k", type=int, default=2, help="Rank")
    parser.add_argument("--link", choices=[l.value for l in Link], default=Link.LOGIT.value)
    parser.add_argument("--bound", choices=[b.value for b in Bound], default=Bound.UNIFORM.value)
    parser.add_argument("--score-update", choices=[s.value for s in ScoreUpdate], default=ScoreUpdate.PROCRUSTES.value)
    parser.add_argument("--tol", type=float, default=settings.tol)
    parser.add_argument("--max-iter", type=int, default=settings.max_iter)
    parser.add_argument("--restarts", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)


def _add_data_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("data", help="CSV data matrix (0/1/NA, optional header)")
    parser.add_argument("--schema", default=None, help="Column-kind schema (default: <data>.schema.json)")


def _config(args: argparse.Namespace, k: Optional[int] = None, lam: Any = 0.0) -> FitConfig:
    return FitConfig(
        k=k if k is not None else args.k,
        link=args.link,
        bound=args.bound,
        score_update=args.score_update,
        lambda_=lam,
        tol=args.tol,
        max_iter=args.max_iter,
        restarts=args.restarts,
        seed=args.seed,
    )


def _manifest_config(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: value for key, value in vars(args).items() if key != "handler"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slpca", description="Sparse logistic PCA")
    parser.add_argument("--version", action="version", version=f"slpca {__version__}")
    parser.add_argument("--threads", type=int, default=None, help="Worker cap (also SLPCA_THREADS)")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR")
    parser.add_argument("--log-dir", default=None, help="Also write a rotating log file here")
    commands = parser.add_subparsers(dest="command", required=True)

    fit_cmd = commands.add_parser("fit", help="Fit one model")
    _add_data_options(fit_cmd)
    _add_fit_options(fit_cmd)
    penalty = fit_cmd.add_mutually_exclusive_group()
    penalty.add_argument("--lambda", dest="lam", type=float, default=0.0, help="Penalty")
    penalty.add_argument("--select-lambda", action="store_true", help="Choose λ by BIC over --grid")
    fit_cmd.add_argument("--grid", type=_float_list, default=None, help="λ grid (default: fine grid)")
    fit_cmd.add_argument("--out", required=True, help="Output directory")
    fit_cmd.set_defaults(handler=run_fit)

    select_cmd = commands.add_parser("select", help="Staged choice of k and λ")
    _add_data_options(select_cmd)
    _add_fit_options(select_cmd, with_k=False)
    select_cmd.add_argument("--k-init", type=int, default=settings.k_init)
    select_cmd.add_argument("--k-max", type=int, default=None)
    select_cmd.add_argument("--rough-grid", type=_float_list, default=None)
    select_cmd.add_argument("--fine-grid", type=_float_list, default=None)
    select_cmd.add_argument("--fresh", action="store_true", help="Fit every grid point from a fresh start")
    select_cmd.add_argument("--out", required=True)
    select_cmd.set_defaults(handler=run_select)

    simulate_cmd = commands.add_parser("simulate", help="Planted-model experiment")
    simulate_cmd.add_argument("--spec", required=True, help="key = value spec file")
    simulate_cmd.add_argument("--modes", default=None, help="Comma-separated modes, e.g. regularized:k_true")
    simulate_cmd.add_argument("--replicates", type=int, default=None)
    simulate_cmd.add_argument("--seed", type=int, default=None)
    simulate_cmd.add_argument("--out", required=True)
    simulate_cmd.set_defaults(handler=run_simulate)

    bootstrap_cmd = commands.add_parser("bootstrap", help="Bootstrap envelope of fitted probabilities")
    _add_data_options(bootstrap_cmd)
    _add_fit_options(bootstrap_cmd)
    bootstrap_cmd.add_argument("--lambda", dest="lam", type=float, default=0.0)
    bootstrap_cmd.add_argument("--model", default=None, help="Directory written by `slpca fit`")
    bootstrap_cmd.add_argument("--n-boot", type=int, default=settings.n_boot)
    bootstrap_cmd.add_argument("--cold", action="store_true", help="Refit from random starts")
    bootstrap_cmd.add_argument("--out", required=True)
    bootstrap_cmd.set_defaults(handler=run_bootstrap)

    diagnose_cmd = commands.add_parser("diagnose", help="Residual and score diagnostics")
    _add_data_options(diagnose_cmd)
    _add_fit_options(diagnose_cmd)
    diagnose_cmd.add_argument("--lambda", dest="lam", type=float, default=0.0)
    diagnose_cmd.add_argument("--model", default=None, help="Directory written by `slpca fit`")
    diagnose_cmd.add_argument("--groups", default=None, help="CSV of (column, group) rows")
    diagnose_cmd.add_argument("--labels", default=None, help="CSV with one label per row")
    diagnose_cmd.add_argument("--permute", action="store_true", help="Add F tests on column-permuted data")
    diagnose_cmd.add_argument("--out", required=True)
    diagnose_cmd.set_defaults(handler=run_diagnose)

    return parser


def _model_and_config(args: argparse.Namespace, data):
    """Model from --model, or a fresh fit at (--k, --lambda)."""
    if args.model:
        model, _ = matrix_io.read_model(args.model)
        config = _config(args, k=model.k, lam=list(model.lambda_)).with_updates(link=model.link)
        return model, config
    config = _config(args, lam=args.lam)
    return solver.fit(data, config).model, config


def run_fit(args: argparse.Namespace) -> None:
    manifest = matrix_io.build_manifest("fit", _manifest_config(args), args.seed, args.data)
    data = matrix_io.load_matrix(args.data, schema_path=args.schema)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.select_lambda:
        report = selection.select_lambda(data, args.k, args.grid, _config(args))
        matrix_io.write_selection([report], out / "selection.csv")
        result = report.best
    else:
        result = solver.fit(data, _config(args, lam=args.lam))
    matrix_io.write_model(result, out, data=data, manifest=manifest)


def run_select(args: argparse.Namespace) -> None:
    manifest = matrix_io.build_manifest("select", _manifest_config(args), args.seed, args.data)
    data = matrix_io.load_matrix(args.data, schema_path=args.schema)
    staged = select_k(
        data,
        _config(args, k=1),
        k_init=args.k_init,
        k_max=args.k_max,
        rough_grid=args.rough_grid,
        fine_grid=args.fine_grid,
        warm_start=not args.fresh,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrix_io.write_selection([staged.rough, staged.k_scan, staged.fine], out / "selection.csv")
    matrix_io.write_model(
        staged.fit,
        out,
        data=data,
        manifest=manifest,
        extra={"selected_k": staged.k, "selected_lambda": staged.lambda_, "n_fits": staged.n_fits},
    )


def run_simulate(args: argparse.Namespace) -> None:
    spec = matrix_io.parse_spec_file(args.spec)
    updates: Dict[str, Any] = {}
    if args.replicates is not None:
        updates["replicates"] = args.replicates
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.modes:
        updates["modes"] = [FitMode(m.strip()) for m in args.modes.split(",") if m.strip()]
    if updates:
        spec = type(spec)(**{**spec.model_dump(), **updates})
    manifest = matrix_io.build_manifest("simulate", spec.model_dump(mode="json"), spec.seed, args.spec)
    table = simulation.run_experiment(spec)
    matrix_io.write_experiment(table, args.out)
    matrix_io.write_manifest(manifest, args.out)


def run_bootstrap(args: argparse.Namespace) -> None:
    manifest = matrix_io.build_manifest("bootstrap", _manifest_config(args), args.seed, args.data)
    data = matrix_io.load_matrix(args.data, schema_path=args.schema)
    model, config = _model_and_config(args, data)
    envelope = evaluation.bootstrap_envelope(
        data, model, n_boot=args.n_boot, seed=args.seed, config=config, warm_start=not args.cold
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrix_io.write_envelope(envelope, out / "envelope.csv")
    matrix_io.write_manifest(manifest, out)
    logger.info(
        f"Envelope over {envelope.point.size} cells: mean width {envelope.mean_width:.4f}, "
        f"{envelope.n_success} refits ok, {envelope.n_failed} failed"
    )


def run_diagnose(args: argparse.Namespace) -> None:
    manifest = matrix_io.build_manifest("diagnose", _manifest_config(args), args.seed, args.data)
    data = matrix_io.load_matrix(args.data, schema_path=args.schema)
    model, config = _model_and_config(args, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    residuals = evaluation.pearson_residuals(data, model)
    groups = (
        matrix_io.read_groups(args.groups, data.column_names)
        if args.groups
        else [list(range(data.d))]
    )
    summary = evaluation.residual_pairwise_correlations(residuals, groups)
    matrix_io.write_correlations({"model": summary}, out / "correlations.csv")

    if args.labels:
        labels = matrix_io.read_labels(args.labels)
        rows = []
        for l in range(model.k):
            test = evaluation.group_f_test(model.A[:, l], labels)
            rows.append({"source": "fitted", "component": l + 1, **test.model_dump()})
        if args.permute:
            for l, test in enumerate(evaluation.permutation_f_test(data, config, labels, seed=args.seed)):
                rows.append({"source": "permuted", "component": l + 1, **test.model_dump()})
        pd.DataFrame(rows).to_csv(out / "ftests.csv", index=False, float_format=f"%.{settings.float_digits}g")

    matrix_io.write_manifest(manifest, out)


def exit_code(exc: BaseException) -> int:
    """Map an exception to the documented exit code."""
    if isinstance(exc, SelectionAbortedError) and isinstance(exc.__cause__, DataValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, (DataValidationError, ValidationError)):
        return EXIT_VALIDATION
    if isinstance(exc, SlpcaError):
        return EXIT_DEGENERATE
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, ValueError):
        return EXIT_VALIDATION
    raise exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    LoggerSetup.setup_logging(
        log_level=args.log_level,
        log_dir=args.log_dir,
        log_to_file=bool(args.log_dir) or None,
    )
    if args.threads is not None:
        settings.threads = max(1, args.threads)

    try:
        args.handler(args)
    except Exception as exc:
        code = exit_code(exc)
        logger.error(f"slpca {args.command} failed: {exc}")
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
