"""Command-line interface for WoodPrune."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import TYPE_CHECKING, TypeVar

from .const import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_CHUNK_SIZE,
    DEFAULT_DAMP,
    DEFAULT_FIRST_PRUNE_EPOCH,
    DEFAULT_FISHER_MINIBATCH,
    DEFAULT_FISHER_SUBSAMPLE,
    DEFAULT_INITIAL_SPARSITY,
    DEFAULT_LAST_PRUNE_EPOCH,
    DEFAULT_LAYER_SIZES,
    DEFAULT_LEARNING_RATE,
    DEFAULT_LR_DECAY_FACTOR,
    DEFAULT_LR_DECAY_PERIOD,
    DEFAULT_MOMENTUM,
    DEFAULT_PRUNE_INTERVAL,
    DEFAULT_TOTAL_EPOCHS,
    LOGGER,
    THREADS_ENV,
    GroupMode,
    LabelMode,
    PruneMethod,
    PruneScope,
    RngStream,
    Split,
)
from .core import LayerLayout, Mask, layer_sparsity, rng_for
from .exceptions import WoodPruneConfigError, WoodPruneDataError, WoodPruneError
from .fisher import collect_grad_samples
from .io import (
    load_checkpoint,
    load_mnist_idx,
    read_flop_table,
    read_groups,
    save_checkpoint,
    write_grad_dump,
    write_metrics_csv,
    write_report,
    write_scan_csv,
    write_trace_csv,
)
from .model import MlpModel, accuracy, sgd_train
from .models import (
    FisherConfig,
    LrDecay,
    RunConfig,
    ScheduleConfig,
    TrainConfig,
)
from .oracle import compare_curvature
from .pruner import GroupSpec, layer_direction, one_shot_prune, quad_scan
from .schedule import gradual_prune

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from .io import Dataset
    from .models import LayerSparsity

_T = TypeVar("_T")

MNIST_FILES = {
    Split.TRAIN: ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    Split.TEST: ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
DEFAULT_SCAN_LAYER = "fc1.weight"
DEFAULT_SCAN_SPARSITY = 0.5
DEFAULT_SCAN_STEPS = 21
DEFAULT_TOP_K = 5


def _layer_sizes(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",")]
    except ValueError as exception:
        msg = f"invalid layer sizes {text!r}, expected e.g. 784,40,20,10"
        raise argparse.ArgumentTypeError(msg) from exception


def _common_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--seed", type=int, default=0, help="run seed")
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help=f"worker threads for chunk builds (default: ${THREADS_ENV} or 1)",
    )
    parser.add_argument("--verbose", action="store_true", help="log debug output")
    data = parser.add_argument_group("data")
    data.add_argument("--data-dir", type=Path, help="directory with MNIST files")
    data.add_argument("--train-images")
    data.add_argument("--train-labels")
    data.add_argument("--test-images")
    data.add_argument("--test-labels")
    data.add_argument("--train-limit", type=int, help="keep the first N examples")
    data.add_argument("--test-limit", type=int, help="keep the first N examples")
    return parser


def _fisher_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    fisher = parser.add_argument_group("fisher")
    fisher.add_argument(
        "--fisher-subsample", type=int, default=DEFAULT_FISHER_SUBSAMPLE
    )
    fisher.add_argument(
        "--fisher-minibatch", type=int, default=DEFAULT_FISHER_MINIBATCH
    )
    fisher.add_argument("--chunk-size", type=int, default=DEFAULT_CHUNK_SIZE)
    fisher.add_argument("--damp", type=float, default=DEFAULT_DAMP)
    fisher.add_argument(
        "--fisher-labels",
        type=LabelMode,
        choices=[mode.value for mode in LabelMode],
        default=LabelMode.EMPIRICAL,
    )
    return parser


def _prune_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    prune = parser.add_argument_group("pruning")
    prune.add_argument(
        "--method",
        type=PruneMethod,
        choices=[method.value for method in PruneMethod],
        default=PruneMethod.WOODFISHER,
    )
    prune.add_argument(
        "--mode",
        type=PruneScope,
        choices=[scope.value for scope in PruneScope],
        default=PruneScope.JOINT,
    )
    prune.add_argument("--beta", type=float, default=0.0, help="FLOPs exponent")
    prune.add_argument("--flop-table", help="JSON object of per-layer dense FLOPs")
    return parser


def _train_arguments(parser: argparse.ArgumentParser) -> None:
    train = parser.add_argument_group("training")
    train.add_argument("--epochs", type=int, default=DEFAULT_TOTAL_EPOCHS)
    train.add_argument("--lr", type=float, default=DEFAULT_LEARNING_RATE)
    train.add_argument("--momentum", type=float, default=DEFAULT_MOMENTUM)
    train.add_argument("--weight-decay", type=float, default=0.0)
    train.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE)


def _schedule_arguments(parser: argparse.ArgumentParser) -> None:
    schedule = parser.add_argument_group("schedule")
    schedule.add_argument(
        "--initial-sparsity", type=float, default=DEFAULT_INITIAL_SPARSITY
    )
    schedule.add_argument("--final-sparsity", type=float, required=True)
    schedule.add_argument(
        "--first-prune-epoch", type=int, default=DEFAULT_FIRST_PRUNE_EPOCH
    )
    schedule.add_argument(
        "--prune-interval", type=int, default=DEFAULT_PRUNE_INTERVAL
    )
    schedule.add_argument(
        "--last-prune-epoch", type=int, default=DEFAULT_LAST_PRUNE_EPOCH
    )
    schedule.add_argument(
        "--lr-decay-start",
        type=int,
        help="first decayed epoch, defaults to the one after the last pruning",
    )
    schedule.add_argument(
        "--lr-decay-factor", type=float, default=DEFAULT_LR_DECAY_FACTOR
    )
    schedule.add_argument(
        "--lr-decay-period", type=int, default=DEFAULT_LR_DECAY_PERIOD
    )


def build_parser() -> argparse.ArgumentParser:
    """Create the argument parser with one subcommand per experiment."""
    common, fisher, prune = _common_parser(), _fisher_parser(), _prune_parser()
    parser = argparse.ArgumentParser(
        prog="woodprune",
        description="Second-order pruning of small networks with WoodFisher.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", parents=[common], help="train an MLP")
    train.add_argument(
        "--layers",
        type=_layer_sizes,
        default=list(DEFAULT_LAYER_SIZES),
        help="comma separated layer widths, input first",
    )
    _train_arguments(train)
    train.add_argument("--output", required=True, help="checkpoint path")
    train.add_argument("--metrics", help="per-epoch metrics CSV")

    oneshot = commands.add_parser(
        "prune-oneshot",
        parents=[common, fisher, prune],
        help="prune a checkpoint without retraining",
    )
    oneshot.add_argument("--model", required=True, help="checkpoint to prune")
    oneshot.add_argument("--sparsity", type=float, required=True)
    oneshot.add_argument("--recompute-steps", type=int, default=1)
    oneshot.add_argument("--groups", help="JSON list of index lists")
    oneshot.add_argument(
        "--group-mode",
        type=GroupMode,
        choices=[mode.value for mode in GroupMode],
        default=GroupMode.CORRELATED,
    )
    oneshot.add_argument("--output", required=True, help="report JSON path")
    oneshot.add_argument("--save-model", help="checkpoint for the pruned model")

    gradual = commands.add_parser(
        "prune-gradual",
        parents=[common, fisher, prune],
        help="prune on a cubic schedule while retraining",
    )
    gradual.add_argument("--model", required=True, help="starting checkpoint")
    _schedule_arguments(gradual)
    _train_arguments(gradual)
    gradual.add_argument("--output", required=True, help="final checkpoint path")
    gradual.add_argument("--trace", required=True, help="per-epoch trace CSV")

    scan = commands.add_parser(
        "quad-scan",
        parents=[common, fisher],
        help="compare the loss with its quadratic model along a direction",
    )
    scan.add_argument("--model", required=True, help="checkpoint to scan")
    scan.add_argument("--layer", default=DEFAULT_SCAN_LAYER)
    scan.add_argument("--sparsity", type=float, default=DEFAULT_SCAN_SPARSITY)
    scan.add_argument("--steps", type=int, default=DEFAULT_SCAN_STEPS)
    scan.add_argument("--output", required=True, help="curve CSV path")

    dump = commands.add_parser(
        "dump-grads",
        parents=[common, fisher],
        help="write the Fisher gradient samples of a checkpoint",
    )
    dump.add_argument("--model", required=True, help="checkpoint to sample")
    dump.add_argument("--output", required=True, help="WFGD dump path")

    curvature = commands.add_parser(
        "compare-curvature",
        parents=[common],
        help="compare the empirical Fisher of a tiny model with its Hessian",
    )
    curvature.add_argument("--model", required=True, help="checkpoint to measure")
    curvature.add_argument(
        "--top-k", type=int, default=DEFAULT_TOP_K, help="eigenvectors compared"
    )
    curvature.add_argument("--output", required=True, help="comparison JSON path")
    return parser


def resolve_threads(flag: int | None) -> int:
    """Return the thread count from the flag, the environment or 1."""
    raw: int | str = flag if flag is not None else os.environ.get(THREADS_ENV, "1")
    try:
        threads = int(raw)
    except ValueError as exception:
        msg = f"{THREADS_ENV} must be an integer, got {raw!r}"
        raise WoodPruneConfigError(msg) from exception
    if threads < 1:
        msg = f"threads must be at least 1, got {threads}"
        raise WoodPruneConfigError(msg)
    return threads


def _data_path(args: argparse.Namespace, split: Split, kind: str) -> str | None:
    explicit: str | None = getattr(args, f"{split.value}_{kind}")
    if explicit is not None or args.data_dir is None:
        return explicit
    images, labels = MNIST_FILES[split]
    return str(args.data_dir / (images if kind == "images" else labels))


def _fisher_config(args: argparse.Namespace) -> FisherConfig:
    return FisherConfig(
        subsample_size=args.fisher_subsample,
        minibatch_size=args.fisher_minibatch,
        damp=args.damp,
        chunk_size=args.chunk_size,
        label_mode=args.fisher_labels,
    )


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )


def _schedule_config(args: argparse.Namespace) -> ScheduleConfig:
    return ScheduleConfig(
        initial_sparsity=args.initial_sparsity,
        final_sparsity=args.final_sparsity,
        first_prune_epoch=args.first_prune_epoch,
        prune_interval=args.prune_interval,
        last_prune_epoch=args.last_prune_epoch,
        total_epochs=args.epochs,
        lr_decay=LrDecay(
            start_epoch=args.lr_decay_start,
            factor=args.lr_decay_factor,
            period=args.lr_decay_period,
        ),
    )


def build_config(args: argparse.Namespace) -> RunConfig:
    """Resolve parsed flags into a validated run configuration.

    Raises
    ------
        WoodPruneConfigError: A flag value is out of range.
        WoodPruneStructuralError: The layer sizes do not form a network.

    """
    common = {
        "command": args.command,
        "seed": args.seed,
        "output": args.output,
        "train_images": _data_path(args, Split.TRAIN, "images"),
        "train_labels": _data_path(args, Split.TRAIN, "labels"),
        "test_images": _data_path(args, Split.TEST, "images"),
        "test_labels": _data_path(args, Split.TEST, "labels"),
        "train_limit": args.train_limit,
        "test_limit": args.test_limit,
    }
    match args.command:
        case "train":
            LayerLayout.for_mlp(args.layers)
            return RunConfig(
                **common,
                layer_sizes=args.layers,
                metrics=args.metrics,
                train=_train_config(args),
            )
        case "prune-oneshot":
            return RunConfig(
                **common,
                model_path=args.model,
                save_model=args.save_model,
                fisher=_fisher_config(args),
                method=args.method,
                scope=args.mode,
                sparsity=args.sparsity,
                recompute_steps=args.recompute_steps,
                beta=args.beta,
                groups=args.groups,
                group_mode=args.group_mode,
                flop_table=args.flop_table,
            )
        case "prune-gradual":
            return RunConfig(
                **common,
                model_path=args.model,
                trace=args.trace,
                fisher=_fisher_config(args),
                train=_train_config(args),
                schedule=_schedule_config(args),
                method=args.method,
                scope=args.mode,
                beta=args.beta,
                flop_table=args.flop_table,
            )
        case "quad-scan":
            return RunConfig(
                **common,
                model_path=args.model,
                fisher=_fisher_config(args),
                layer=args.layer,
                sparsity=args.sparsity,
                steps=args.steps,
            )
        case "compare-curvature":
            return RunConfig(**common, model_path=args.model, top_k=args.top_k)
        case _:
            return RunConfig(
                **common,
                model_path=args.model,
                fisher=_fisher_config(args),
            )


def _need(value: _T | None, what: str) -> _T:
    if value is None:
        msg = f"the {what} setting is required for this command"
        raise WoodPruneConfigError(msg)
    return value


def _load_split(config: RunConfig, split: Split) -> Dataset | None:
    if split is Split.TRAIN:
        images, labels = config.train_images, config.train_labels
        limit = config.train_limit
    else:
        images, labels = config.test_images, config.test_labels
        limit = config.test_limit
    if images is None and labels is None and split is Split.TEST:
        return None
    if images is None or labels is None:
        msg = (
            f"{split.value} data needs both images and labels; pass --data-dir "
            f"or --{split.value}-images and --{split.value}-labels"
        )
        raise WoodPruneDataError(msg)
    return load_mnist_idx(images, labels, limit, split=split)


def _load_train(config: RunConfig) -> Dataset:
    return _need(_load_split(config, Split.TRAIN), "training data")


def format_layer_table(layers: Sequence[LayerSparsity]) -> str:
    """Render the per-layer sparsity table."""
    width = max([len("layer"), *(len(row.layer) for row in layers)])
    lines = [f"{'layer':<{width}}  {'dense':>9}  {'remaining':>9}  {'sparsity':>8}"]
    lines.extend(
        f"{row.layer:<{width}}  {row.dense_params:>9}  "
        f"{row.remaining_params:>9}  {row.sparsity:>8.2%}"
        for row in layers
    )
    return "\n".join(lines)


def cmd_train(config: RunConfig, threads: int) -> int:  # noqa: ARG001
    """Train a fresh network and write its checkpoint and metrics."""
    train_cfg = _need(config.train, "training")
    train = _load_train(config)
    test = _load_split(config, Split.TEST)
    model = MlpModel.initialize(_need(config.layer_sizes, "layers"), config.seed)
    model, metrics = sgd_train(model, train, train_cfg, test=test)
    save_checkpoint(
        _need(config.output, "output"),
        model,
        seed=config.seed,
        epoch=train_cfg.epochs,
    )
    if config.metrics is not None:
        write_metrics_csv(config.metrics, metrics)
    if test is not None:
        print(f"test accuracy: {accuracy(model, test):.4f}")
    return 0


def _groups(config: RunConfig) -> GroupSpec | None:
    if config.groups is None:
        return None
    return GroupSpec(
        groups=tuple(tuple(group) for group in read_groups(config.groups)),
        mode=config.group_mode,
    )


def _dense_flops(config: RunConfig) -> dict[str, float] | None:
    if config.flop_table is None:
        return None
    return read_flop_table(config.flop_table)


def cmd_prune_oneshot(config: RunConfig, threads: int) -> int:
    """Prune a checkpoint to a target sparsity and write the report."""
    model, header = load_checkpoint(_need(config.model_path, "model"))
    train = _load_train(config)
    test = _load_split(config, Split.TEST)
    pruned, report = one_shot_prune(
        model,
        train,
        _need(config.fisher, "fisher"),
        _need(config.sparsity, "sparsity"),
        _need(config.scope, "mode"),
        config.recompute_steps,
        _need(config.method, "method"),
        test=test,
        seed=config.seed,
        threads=threads,
        beta=config.beta,
        dense_flops=_dense_flops(config),
        groups=_groups(config),
        config=config,
    )
    write_report(_need(config.output, "output"), report)
    if config.save_model is not None:
        save_checkpoint(
            config.save_model, pruned, seed=config.seed, epoch=header.epoch
        )
    print(format_layer_table(report.layers))
    print(
        f"sparsity {report.sparsity:.4f}, accuracy "
        f"{report.accuracy_before:.4f} -> {report.accuracy_after:.4f}"
    )
    return 0


def cmd_prune_gradual(config: RunConfig, threads: int) -> int:
    """Run gradual pruning and write the final checkpoint and the trace."""
    schedule = _need(config.schedule, "schedule")
    model, header = load_checkpoint(_need(config.model_path, "model"))
    train = _load_train(config)
    test = _load_split(config, Split.TEST)
    final, trace = gradual_prune(
        model,
        train,
        _need(config.fisher, "fisher"),
        schedule,
        _need(config.method, "method"),
        _need(config.scope, "mode"),
        train=_need(config.train, "training"),
        test=test,
        threads=threads,
        beta=config.beta,
        dense_flops=_dense_flops(config),
    )
    save_checkpoint(
        _need(config.output, "output"),
        final,
        seed=config.seed,
        epoch=header.epoch + schedule.total_epochs,
    )
    write_trace_csv(_need(config.trace, "trace"), trace)
    mask = Mask.from_zeros(final.space)
    print(format_layer_table(layer_sparsity(mask, final.space)))
    if test is not None:
        print(f"test accuracy: {accuracy(final, test):.4f}")
    return 0


def cmd_quad_scan(config: RunConfig, threads: int) -> int:
    """Scan a layer's pruning direction against the quadratic model."""
    layer = _need(config.layer, "layer")
    model, _ = load_checkpoint(_need(config.model_path, "model"))
    model.layout.segment(layer)
    train = _load_train(config)
    delta_w, inverse = layer_direction(
        model,
        train,
        _need(config.fisher, "fisher"),
        layer,
        _need(config.sparsity, "sparsity"),
        seed=config.seed,
        threads=threads,
    )
    points = quad_scan(model, train, delta_w, _need(config.steps, "steps"), inverse)
    write_scan_csv(_need(config.output, "output"), points)
    LOGGER.info("Wrote %d scan points to %s", len(points), config.output)
    return 0


def cmd_dump_grads(config: RunConfig, threads: int) -> int:  # noqa: ARG001
    """Write the Fisher gradient samples of a checkpoint."""
    model, _ = load_checkpoint(_need(config.model_path, "model"))
    train = _load_train(config)
    samples = collect_grad_samples(
        model,
        train,
        _need(config.fisher, "fisher"),
        rng_for(config.seed, RngStream.FISHER_SAMPLING, 0),
        label_rng=rng_for(config.seed, RngStream.LABEL_SAMPLING, 0),
    )
    write_grad_dump(_need(config.output, "output"), samples, size=model.space.size)
    return 0


def cmd_compare_curvature(config: RunConfig, threads: int) -> int:  # noqa: ARG001
    """Compare the empirical Fisher of a checkpoint with its Hessian."""
    model, _ = load_checkpoint(_need(config.model_path, "model"))
    comparison = compare_curvature(
        model, _load_train(config), _need(config.top_k, "top-k")
    )
    write_report(_need(config.output, "output"), comparison)
    print(f"relative difference: {comparison.relative_difference:.4f}")
    print(f"top-{comparison.top_k} overlap: {comparison.top_overlap:.4f}")
    return 0


COMMANDS: dict[str, Callable[[RunConfig, int], int]] = {
    "train": cmd_train,
    "prune-oneshot": cmd_prune_oneshot,
    "prune-gradual": cmd_prune_gradual,
    "quad-scan": cmd_quad_scan,
    "dump-grads": cmd_dump_grads,
    "compare-curvature": cmd_compare_curvature,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line and return its exit code.

    Exit codes: 0 on success, 2 for configuration errors, 3 for data errors
    and 4 for numeric errors.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        threads = resolve_threads(args.threads)
        config = build_config(args)
        return COMMANDS[config.command](config, threads)
    except WoodPruneError as exception:
        print(f"woodprune: error: {exception}", file=sys.stderr)
        return exception.exit_code


if __name__ == "__main__":
    sys.exit(main())
