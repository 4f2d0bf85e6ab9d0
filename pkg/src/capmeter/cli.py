"""Command-line entry point: train, measure, bound and certify two-layer ReLU networks."""

import argparse
import json
import logging
import math
import sys
from collections.abc import Callable
from pathlib import Path

import numpy as np

from capmeter import report
from capmeter.bounds import CoverSpec, bound_panel, cover_construct, cover_count_log, cover_size
from capmeter.config import (
    Config,
    ExitCode,
    GammaSource,
    InitScheme,
    Normalize,
    RademacherMode,
)
from capmeter.data import DatasetSpec, apply_spec, load_path, parse_synthetic
from capmeter.exceptions import (
    BoundDomainError,
    CapmeterError,
    CheckpointError,
    ConfigError,
    ConvergenceError,
    DatasetError,
    DivergenceError,
    NonFiniteError,
    UsageError,
)
from capmeter.linalg import percentile_nearest_rank
from capmeter.lowerbound import build_instance, certification_report, rademacher_lower_estimate
from capmeter.measures import measure_panel
from capmeter.nn import (
    FeatureScale,
    LabeledDataset,
    load_checkpoint,
    margin_distribution,
    save_checkpoint,
    sidecar_path,
)
from capmeter.selftest import run_selftest
from capmeter.train import (
    TrainConfig,
    init_network,
    provenance,
    report_path,
    stored_scale,
    train,
    width_sweep,
)
from capmeter.utils import write_json

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise UsageError(f"{self.prog}: {message}")


########################################
# Argument helpers
########################################
# MARK: _floats
def _floats(text: str) -> list[float]:
    return [float(item) for item in text.split(",") if item]


# MARK: _ints
def _ints(text: str) -> list[int]:
    return [int(item) for item in text.split(",") if item]


# MARK: _add_data_args
def _add_data_args(parser: argparse.ArgumentParser, *, test: bool = False) -> None:
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--data", help="CSV file, MNIST directory or images,labels IDX pair")
    source.add_argument("--synthetic", help="synthetic Gaussian classes: d,m,c,separation,seed")
    parser.add_argument("--limit", type=int, help="keep only the first LIMIT samples")
    parser.add_argument(
        "--normalize",
        choices=[n.value for n in Normalize],
        help="default: as the --ckpt was trained, else unit_range for files, none for synthetic",
    )
    parser.add_argument("--random-labels", type=float, default=0.0, metavar="FRACTION")
    parser.add_argument("--label-seed", type=int, default=Config.SEED)
    if test:
        parser.add_argument("--test-data", help="held-out set in any --data format")


# MARK: _add_train_args
def _add_train_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lr", type=float, default=Config.LR)
    parser.add_argument("--momentum", type=float, default=Config.MOMENTUM)
    parser.add_argument("--batch", type=int, default=Config.BATCH_SIZE)
    parser.add_argument("--stop-loss", type=float, default=Config.STOP_LOSS)
    parser.add_argument("--max-epochs", type=int, default=Config.MAX_EPOCHS)
    parser.add_argument("--seed", type=int, default=Config.SEED)
    parser.add_argument(
        "--init",
        choices=[s.value for s in InitScheme],
        default=InitScheme.UNIFORM_FAN_IN.value,
    )
    parser.add_argument("--init-sigma", type=float, default=1.0)
    parser.add_argument("--no-shuffle", action="store_true")


# MARK: _add_gamma_args
def _add_gamma_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--delta", type=float, default=Config.DELTA)
    parser.add_argument(
        "--gamma-source",
        choices=[g.value for g in GammaSource],
        default=GammaSource.TRAIN.value,
    )
    parser.add_argument("--p", default=",".join(Config.THM4_P), help="comma list, e.g. 2,4,lnh")


# MARK: _dataset_spec
def _dataset_spec(
    args: argparse.Namespace,
    stored: FeatureScale | None = None,
    *,
    trained: bool = False,
) -> DatasetSpec:
    """An explicit ``--normalize`` wins.

    Otherwise data for a trained network is scaled as its training set was, and data for a new
    network is unit-range scaled when it comes from a file and left raw when synthetic.
    """
    if args.normalize is not None:
        normalize = Normalize(args.normalize)
    elif trained:
        normalize = Normalize.NONE if stored is None else Normalize.UNIT_RANGE
    else:
        normalize = Normalize.NONE if args.synthetic else Normalize.UNIT_RANGE
    return DatasetSpec(
        limit=args.limit,
        normalize=normalize,
        random_label_fraction=args.random_labels,
        label_seed=args.label_seed,
        scale=stored,
    )


# MARK: _load_data
def _load_data(
    args: argparse.Namespace,
    stored: FeatureScale | None = None,
    *,
    trained: bool = False,
) -> LabeledDataset:
    spec = _dataset_spec(args, stored, trained=trained)
    if args.synthetic:
        return apply_spec(parse_synthetic(args.synthetic), spec)
    return load_path(args.data, spec, "train")


# MARK: _load_test_data
def _load_test_data(args: argparse.Namespace, train_data: LabeledDataset) -> LabeledDataset | None:
    """The held-out set, mapped with the training set's feature scale."""
    if not getattr(args, "test_data", None):
        return None
    normalize = Normalize.NONE if train_data.scale is None else Normalize.UNIT_RANGE
    spec = DatasetSpec(limit=args.limit, normalize=normalize, scale=train_data.scale)
    return load_path(args.test_data, spec, "test")


# MARK: _train_config
def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        lr=args.lr,
        momentum=args.momentum,
        batch_size=args.batch,
        stop_loss=args.stop_loss,
        max_epochs=args.max_epochs,
        seed=args.seed,
        init_scheme=InitScheme(args.init),
        init_sigma=args.init_sigma,
        shuffle=not args.no_shuffle,
    )


########################################
# Subcommands
########################################
# MARK: cmd_train
def cmd_train(args: argparse.Namespace) -> ExitCode:
    data = _load_data(args)
    cfg = _train_config(args)
    net = init_network(data.d, args.h, data.c, cfg.init_scheme, cfg.seed, cfg.init_sigma)
    result = train(net, data, cfg)
    save_checkpoint(net, args.out, provenance(cfg, data))
    write_json(report_path(args.out), result.to_dict())
    return ExitCode.OK


# MARK: cmd_sweep
def cmd_sweep(args: argparse.Namespace) -> ExitCode:
    data = _load_data(args)
    results = width_sweep(_ints(args.widths), data, _train_config(args), args.out_dir, args.workers)
    return ExitCode.FAILURE if any(r.failed for r in results) else ExitCode.OK


# MARK: cmd_measure
def cmd_measure(args: argparse.Namespace) -> ExitCode:
    net, sidecar = load_checkpoint(args.ckpt)
    data = _load_data(args, stored_scale(sidecar), trained=True)
    panel = measure_panel(net, data, args.gamma_percentile, spectrum=args.spectrum)
    write_json(args.out, panel.to_dict())
    if args.csv:
        row = {"checkpoint": Path(args.ckpt).name, **report.measure_row(net, panel)}
        report.append_row(args.csv, row)
    return ExitCode.OK


# MARK: _resolve_gamma
def _resolve_gamma(args: argparse.Namespace, net, data, test_data) -> float:
    if args.gamma != "auto":
        return float(args.gamma)
    if GammaSource(args.gamma_source) is GammaSource.TEST:
        if test_data is None:
            raise ConfigError("--gamma-source test needs --test-data")
        data = test_data
    return percentile_nearest_rank(margin_distribution(net, data), Config.GAMMA_PERCENTILE)


# MARK: cmd_bounds
def cmd_bounds(args: argparse.Namespace) -> ExitCode:
    net, sidecar = load_checkpoint(args.ckpt)
    data = _load_data(args, stored_scale(sidecar), trained=True)
    test_data = _load_test_data(args, data)
    gamma = _resolve_gamma(args, net, data, test_data)
    panel = bound_panel(net, data, gamma, args.delta, tuple(args.p.split(",")))
    write_json(args.out, panel.to_dict())
    return ExitCode.OK


# MARK: cmd_compare
def cmd_compare(args: argparse.Namespace) -> ExitCode:
    checkpoints = sorted(Path(args.sweep_dir).glob(f"*{Config.CHECKPOINT_SUFFIX}"))
    sidecars = [sidecar_path(p) for p in checkpoints if sidecar_path(p).exists()]
    stored = stored_scale(json.loads(sidecars[0].read_text())) if sidecars else None
    data = _load_data(args, stored, trained=bool(checkpoints))
    test_data = _load_test_data(args, data)
    summary, _ = report.summarize_sweep(
        args.sweep_dir,
        data,
        test_data=test_data,
        gamma_source=GammaSource(args.gamma_source),
        delta=args.delta,
        ps=tuple(args.p.split(",")),
        workers=args.workers,
    )
    report.write_csv(summary, args.out)
    if args.svg:
        columns = args.columns.split(",") if args.columns else _default_svg_columns(summary)
        report.emit_svg(summary, columns, args.svg, title="Capacity measures normalized by max")
    return ExitCode.OK


# MARK: _default_svg_columns
def _default_svg_columns(summary) -> list[str]:
    wanted = [name + Config.NORMALIZED_SUFFIX for name in Config.BOUND_COLUMNS]
    return [c for c in wanted if c in summary.columns]


# MARK: cmd_lowerbound
def cmd_lowerbound(args: argparse.Namespace) -> ExitCode:
    h = 2**args.k
    alpha = _floats(args.alpha) if args.alpha else [1.0] * h
    beta = _floats(args.beta) if args.beta else [1.0] * h
    instance = build_instance(args.k, args.n, np.array(alpha), np.array(beta))
    estimate = rademacher_lower_estimate(
        instance,
        RademacherMode(args.mode),
        trials=args.trials,
        seed=args.seed,
        workers=args.workers,
    )
    result = certification_report(instance, estimate)
    if args.out:
        write_json(args.out, result)
    print(json.dumps(result, indent=2, sort_keys=True))
    return ExitCode.OK if result["certified"] else ExitCode.FAILURE


# MARK: cmd_cover
def cmd_cover(args: argparse.Namespace) -> ExitCode:
    spec = CoverSpec(D=args.D, p=args.p, eps=args.eps, beta_radius=args.beta)
    log_n = cover_count_log(spec)
    print(f"K={cover_size(spec)}")
    print(f"ln_N={log_n:.12g}")
    if log_n < math.log(2**53):
        print(f"N={round(math.exp(log_n))}")
    if args.construct:
        print(f"boxes={len(cover_construct(spec))}")
    return ExitCode.OK


# MARK: cmd_selftest
def cmd_selftest(args: argparse.Namespace) -> ExitCode:
    results = run_selftest()
    for result in results:
        print(f"{'PASS' if result.passed else 'FAIL'}  {result.name}: {result.detail}")
    return ExitCode.OK if all(r.passed for r in results) else ExitCode.SELFTEST_FAILED


########################################
# Parser
########################################
# MARK: build_parser
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="capmeter", description=__doc__ or "Capacity measures for ReLU nets.")
    parser.add_argument("--config", type=Path, help="JSON file of flag defaults")
    parser.add_argument("--log-level", default=Config.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train one network")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train one network per width")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--widths", default=",".join(map(str, Config.SWEEP_WIDTHS)))
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--workers", type=int, default=Config.THREADS)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("measure", help="unit and layer measures of a checkpoint")
    _add_data_args(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--csv", type=Path, help="append a summary row to this CSV")
    p.add_argument("--spectrum", action="store_true", help="export singular values of U")
    p.add_argument("--gamma-percentile", type=float, default=Config.GAMMA_PERCENTILE)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("bounds", help="generalization bounds and comparators of a checkpoint")
    _add_data_args(p, test=True)
    _add_gamma_args(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--gamma", default="auto")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("compare", help="summary table and chart of a sweep directory")
    _add_data_args(p, test=True)
    _add_gamma_args(p)
    p.add_argument("--sweep-dir", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--svg", type=Path)
    p.add_argument("--columns", help="comma list of summary columns for the chart")
    p.add_argument("--workers", type=int, default=Config.THREADS)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("lowerbound", help="certify the Hadamard lower-bound construction")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--alpha", help="comma list of 2^k unit impacts (default all ones)")
    p.add_argument("--beta", help="comma list of 2^k unit capacities (default all ones)")
    p.add_argument("--mode", choices=[m.value for m in RademacherMode], default="exact")
    p.add_argument("--trials", type=int, default=Config.SAMPLED_TRIALS)
    p.add_argument("--seed", type=int, default=Config.SEED)
    p.add_argument("--workers", type=int, default=Config.THREADS)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_lowerbound)

    p = sub.add_parser("cover", help="covering number of the l_p ball lattice")
    p.add_argument("--D", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--construct", action="store_true", help="also enumerate the boxes")
    p.set_defaults(func=cmd_cover)

    p = sub.add_parser("selftest", help="run the built-in property checks")
    p.set_defaults(func=cmd_selftest)

    return parser


# MARK: _config_parser
def _config_parser() -> argparse.ArgumentParser:
    parser = _Parser(add_help=False)
    parser.add_argument("--config", type=Path)
    return parser


# MARK: _apply_config
def _apply_config(parser: argparse.ArgumentParser, path: Path) -> None:
    """Use the flat keys of a JSON file as defaults of every subcommand that knows them."""
    try:
        values = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: expected a JSON object of flag values")

    values = {key.replace("-", "_"): value for key, value in values.items()}
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    known = set()
    for sub in subparsers.choices.values():
        dests = {action.dest for action in sub._actions}
        sub.set_defaults(**{k: v for k, v in values.items() if k in dests})
        known |= dests
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")


EXIT_CODES: list[tuple[type[BaseException], ExitCode]] = [
    (UsageError, ExitCode.USAGE),
    (FileNotFoundError, ExitCode.MISSING_FILE),
    (ConfigError, ExitCode.BAD_CONFIG),
    (DatasetError, ExitCode.DATA_ERROR),
    (CheckpointError, ExitCode.DATA_ERROR),
    (ConvergenceError, ExitCode.NUMERIC_ERROR),
    (DivergenceError, ExitCode.NUMERIC_ERROR),
    (BoundDomainError, ExitCode.NUMERIC_ERROR),
    (NonFiniteError, ExitCode.NUMERIC_ERROR),
    (CapmeterError, ExitCode.FAILURE),
    (ValueError, ExitCode.FAILURE),
]


# MARK: _exit_code
def _exit_code(exc: BaseException) -> ExitCode:
    return next((code for kind, code in EXIT_CODES if isinstance(exc, kind)), ExitCode.FAILURE)


# MARK: run
def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return ExitCode.USAGE

    logging.basicConfig(level=Config.LOG_LEVEL.upper(), format=Config.LOG_FORMAT, force=True)
    try:
        pre, _ = _config_parser().parse_known_args(argv)
        if pre.config is not None:
            _apply_config(parser, pre.config)
        args = parser.parse_args(argv)
        logging.getLogger().setLevel(args.log_level.upper())
        if args.command is None:
            parser.print_usage(sys.stderr)
            return ExitCode.USAGE
        command: Callable[[argparse.Namespace], ExitCode] = args.func
        return int(command(args))
    except SystemExit as exc:
        return int(exc.code or 0)
    except (CapmeterError, FileNotFoundError, ValueError) as exc:
        code = _exit_code(exc)
        if isinstance(exc, UsageError):
            parser.print_usage(sys.stderr)
        logger.error("%s", exc)
        return code


# MARK: main
def main() -> None:
    sys.exit(run())
