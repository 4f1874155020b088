"""Command-line entry point: ``python -m src.main <subcommand> [flags]``.

Subcommands: synth, stats, train, eval, detect, sweep-offsets, retrieve, gradcheck and
benchmark. Every run writes its resolved configuration to ``<out>/run_config.env`` and
its tables as CSV next to it. Logs go to standard error.

Exit codes: 0 success, 1 usage, 2 data/validation/configuration, 3 numeric failure
(divergence or a failed gradient check).
"""

import argparse
import logging
import sys
from pathlib import Path

# Get the project root directory (parent of src/)
PROJECT_ROOT = Path(__file__).parent.parent

# Add project root to Python path so imports work
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple  # noqa: E402

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from dotenv import load_dotenv  # noqa: E402
from pydantic import ValidationError as PydanticValidationError  # noqa: E402

from src.checkpoint import load_checkpoint, save_checkpoint  # noqa: E402
from src.config import (  # noqa: E402
    RunConfig,
    resolve_run_config,
    write_resolved_config,
)
from src.data import Dataset, dataset_stats, load_dataset, save_dataset  # noqa: E402
from src.errors import (  # noqa: E402
    ConfigurationError,
    DivergenceError,
    GradientCheckError,
    MultiLstmError,
    ValidationError,
)
from src.evaluation import (  # noqa: E402
    class_length_stats,
    detect_dataset,
    detection_map,
    detections_frame,
    mean_ap,
    offset_sweep,
)
from src.experiments import ExperimentSettings, run_ordering_experiment  # noqa: E402
from src.gradcheck import DEFAULT_SEED, reports_frame, run_gradcheck  # noqa: E402
from src.models import build_model, predict_dataset  # noqa: E402
from src.multilstm import shift_labels  # noqa: E402
from src.numeric import Matrix, make_rng  # noqa: E402
from src.retrieval import (  # noqa: E402
    SequentialQuery,
    cooccurrence_frame,
    cooccurrence_matrix,
    cooccurring_frame,
    retrieve_cooccurring,
    retrieve_sequential,
    sequential_frame,
)
from src.synth import (  # noqa: E402
    audit_rules,
    load_synth_spec,
    reference_synth_spec,
    synth_generate,
)
from src.training import train  # noqa: E402

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
FLOAT_FORMAT = "%.6f"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    """Bad command line (unknown subcommand or flag, malformed value)."""


class CliParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (DivergenceError, GradientCheckError)):
        return EXIT_NUMERIC
    return EXIT_DATA


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("Wrote %s", path)
    return path


# Flag groups ---------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run")
    group.add_argument("--config", help="dotenv-style config file")
    group.add_argument("--seed", type=int)
    group.add_argument("--out", help="output directory")
    group.add_argument("--workers", type=int, help="threads for per-video prediction")
    group.add_argument("--log-level", dest="log_level")


def _model_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("model")
    group.add_argument("--architecture", choices=["frame", "lstm", "multilstm"])
    group.add_argument("--hidden", type=int)
    group.add_argument("--attention-units", dest="attention_units", type=int)
    group.add_argument("--window", type=int, help="input window W")
    group.add_argument("--output-window", dest="output_window", type=int, help="N")
    group.add_argument("--offset", type=int, help="label offset s in frames")
    group.add_argument("--no-attention", dest="attention", action="store_false")
    group.add_argument("--frame-rate", dest="frame_rate", type=float)


def _training_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training")
    group.add_argument("--learning-rate", dest="learning_rate", type=float)
    group.add_argument("--decay", type=float)
    group.add_argument("--epsilon", type=float)
    group.add_argument("--clip", type=float)
    group.add_argument("--minibatch", type=int)
    group.add_argument("--epochs", type=int)
    group.add_argument("--no-shuffle", dest="shuffle", action="store_false")


def _evaluation_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("detection")
    group.add_argument("--threshold", type=float, help="frame threshold lambda")
    group.add_argument("--length-penalty", dest="length_penalty", type=float)
    group.add_argument("--overlap", type=float, help="temporal IoU threshold")


def _prediction_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", help="dataset directory")
    parser.add_argument("--checkpoint")
    parser.add_argument(
        "--oracle", action="store_true", help="use ground-truth labels as predictions"
    )


def build_parser() -> CliParser:
    parser = CliParser(
        prog="multilstm",
        description="Dense multilabel action labeling with MultiLSTM",
        argument_default=argparse.SUPPRESS,
    )
    commands = parser.add_subparsers(
        dest="command", required=True, parser_class=CliParser
    )

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(
            name, help=help_text, argument_default=argparse.SUPPRESS
        )
        _global_flags(sub)
        return sub

    synth = command("synth", "generate a synthetic dataset")
    synth.add_argument("--spec", help="synthetic dataset spec (JSON)")

    stats = command("stats", "dataset statistics")
    stats.add_argument("--data")

    training = command("train", "train a model")
    training.add_argument("--data")
    training.add_argument("--checkpoint", help="default <out>/model.ckpt")
    _model_flags(training)
    _training_flags(training)

    evaluate = command("eval", "frame-level mAP")
    _prediction_flags(evaluate)

    detect = command("detect", "detections and detection mAP")
    _prediction_flags(detect)
    detect.add_argument("--train-data", dest="train_data")
    _evaluation_flags(detect)

    sweep = command("sweep-offsets", "mAP versus label offset")
    sweep.add_argument("--data")
    sweep.add_argument("--train-data", dest="train_data")
    sweep.add_argument("--checkpoint-dir", dest="checkpoint_dir")
    sweep.add_argument("--offsets", help="comma-separated offsets in frames")

    retrieve = command("retrieve", "sequential or co-occurring action retrieval")
    _prediction_flags(retrieve)
    retrieve.add_argument("--mode", choices=["sequential", "cooccurring"])
    retrieve.add_argument("--first")
    retrieve.add_argument("--second")
    retrieve.add_argument("--max-gap", dest="max_gap", type=int)
    retrieve.add_argument("--top-k", dest="top_k", type=int)
    retrieve.add_argument("--no-suppress", dest="suppress", action="store_false")

    command("gradcheck", "finite-difference check of every backward pass")

    benchmark = command("benchmark", "frame vs LSTM vs MultiLSTM on synthetic data")
    benchmark.add_argument("--spec", help="synthetic dataset spec (JSON)")
    for flag, kind in (
        ("--hidden", int),
        ("--attention-units", int),
        ("--window", int),
        ("--epochs", int),
        ("--minibatch", int),
        ("--learning-rate", float),
    ):
        benchmark.add_argument(flag, dest=flag[2:].replace("-", "_"), type=kind)
    return parser


# Helpers --------------------------------------------------------------------


def _required(value: Optional[str], flag: str) -> Path:
    if not value:
        raise ConfigurationError(f"{flag} is required for this command")
    return Path(value)


def _load_predictions(
    config: RunConfig, dataset: Dataset
) -> Tuple[List[Matrix], int]:
    """Per-video predictions and the label offset they are made at."""
    if config.oracle:
        return [z.astype(np.float64) for z in dataset.label_matrices()], 0
    checkpoint = load_checkpoint(_required(config.checkpoint, "--checkpoint"))
    settings = checkpoint.model_config
    if (settings.input_dim, settings.num_classes) != (
        dataset.feature_dim,
        dataset.num_classes,
    ):
        raise ConfigurationError(
            f"checkpoint expects D={settings.input_dim}, C={settings.num_classes}; "
            f"dataset has D={dataset.feature_dim}, C={dataset.num_classes}"
        )
    model = build_model(settings)
    predictions = predict_dataset(
        model, checkpoint.params, dataset.features(), workers=config.workers
    )
    return predictions, settings.offset


def _load_eval_dataset(config: RunConfig) -> Dataset:
    path = _required(config.data, "--data")
    return load_dataset(path, require_features=not config.oracle)


# Subcommands ----------------------------------------------------------------


def cmd_synth(config: RunConfig, out: Path) -> None:
    spec = load_synth_spec(Path(config.spec)) if config.spec else reference_synth_spec()
    data = synth_generate(spec, make_rng(config.seed))
    violations = audit_rules(data.train, spec) + audit_rules(data.test, spec)
    if violations:
        raise ValidationError(
            f"{len(violations)} planted-rule violations, e.g. {violations[0]}"
        )
    save_dataset(data.train, out / "train")
    save_dataset(data.test, out / "test")
    spec_text = spec.model_dump_json(indent=1) + "\n"
    (out / "synth_spec.json").write_text(spec_text, encoding="utf-8")


def cmd_stats(config: RunConfig, out: Path) -> None:
    dataset = load_dataset(_required(config.data, "--data"))
    report = dataset_stats(dataset)
    report.write(out)
    matrix = cooccurrence_matrix(dataset.label_matrices())
    pmi = cooccurrence_frame(matrix, dataset.vocabulary)
    write_csv(pmi, out / "cooccurrence_pmi.csv")
    logger.info(
        "%d videos, %.3f labels per frame, %.3f classes per video",
        len(dataset.videos),
        report.summary["mean_labels_per_frame"],
        report.summary["mean_classes_per_video"],
    )


def cmd_train(config: RunConfig, out: Path) -> None:
    dataset = load_dataset(_required(config.data, "--data"), require_features=True)
    settings = config.model_settings(dataset.feature_dim or 0, dataset.num_classes)
    result = train(build_model(settings), dataset, config.train_settings())
    target = Path(config.checkpoint) if config.checkpoint else out / "model.ckpt"
    save_checkpoint(result.checkpoint, target)
    write_csv(result.losses, out / "losses.csv")


def cmd_eval(config: RunConfig, out: Path) -> None:
    dataset = _load_eval_dataset(config)
    predictions, offset = _load_predictions(config, dataset)
    targets = [shift_labels(z, offset) for z in dataset.label_matrices()]
    result = mean_ap(
        predictions,
        [z for z, _ in targets],
        dataset.vocabulary,
        masks=[m for _, m in targets],
    )
    write_csv(result.per_class, out / "per_class_ap.csv")
    summary = pd.DataFrame([{"offset_frames": offset, "map": result.value}])
    write_csv(summary, out / "map.csv")
    logger.info("Frame mAP %.4f over %d videos", result.value, len(dataset.videos))


def cmd_detect(config: RunConfig, out: Path) -> None:
    dataset = _load_eval_dataset(config)
    train_set = load_dataset(_required(config.train_data, "--train-data"))
    if train_set.vocabulary != dataset.vocabulary:
        raise ValidationError("training and evaluation vocabularies differ")
    predictions, offset = _load_predictions(config, dataset)
    if offset:
        logger.warning("Detecting with a model trained at offset %d", offset)
    stats = class_length_stats(train_set.label_matrices())
    eval_settings = config.eval_settings()
    video_ids = [video.video_id for video in dataset.videos]
    detections = detect_dataset(
        predictions,
        video_ids,
        stats,
        eval_settings.threshold,
        eval_settings.length_penalty,
    )
    write_csv(detections_frame(detections, dataset.vocabulary), out / "detections.csv")
    result = detection_map(
        detections,
        dataset.label_matrices(),
        video_ids,
        dataset.vocabulary,
        eval_settings.overlap,
    )
    write_csv(result.per_class, out / "detection_ap.csv")
    write_csv(
        pd.DataFrame([{"overlap": eval_settings.overlap, "map": result.value}]),
        out / "detection_map.csv",
    )
    logger.info(
        "Detection mAP %.4f at overlap %.2f", result.value, eval_settings.overlap
    )


def cmd_sweep_offsets(config: RunConfig, out: Path) -> None:
    dataset = load_dataset(_required(config.data, "--data"), require_features=True)
    train_labels = None
    if config.train_data:
        train_labels = load_dataset(Path(config.train_data)).label_matrices()
    table = offset_sweep(
        _required(config.checkpoint_dir, "--checkpoint-dir"),
        config.offsets,
        dataset,
        train_labels=train_labels,
        workers=config.workers,
    )
    write_csv(table, out / "offset_sweep.csv")


def cmd_retrieve(config: RunConfig, out: Path) -> None:
    if not config.first or not config.second:
        raise ConfigurationError("retrieve needs --first and --second")
    dataset = _load_eval_dataset(config)
    predictions, _ = _load_predictions(config, dataset)
    video_ids = [video.video_id for video in dataset.videos]
    if config.mode == "sequential":
        query = SequentialQuery(
            first=config.first,
            second=config.second,
            max_gap=config.max_gap,
            top_k=config.top_k,
            suppress=config.suppress,
        )
        hits = retrieve_sequential(predictions, video_ids, dataset.vocabulary, query)
        frame = sequential_frame(hits)
    else:
        found = retrieve_cooccurring(
            predictions,
            video_ids,
            dataset.vocabulary,
            config.first,
            config.second,
            config.top_k,
        )
        frame = cooccurring_frame(found)
    write_csv(frame, out / "retrieval.csv")


def cmd_gradcheck(config: RunConfig, out: Path) -> None:
    reports = run_gradcheck(seed=config.seed)
    write_csv(reports_frame(reports), out / "gradcheck.csv")
    worst = max(reports, key=lambda r: r.max_relative_error)
    logger.info("Max relative error %.3e (%s)", worst.max_relative_error, worst.name)
    failed = [r.name for r in reports if not r.passed]
    if failed:
        raise GradientCheckError(
            f"gradient check failed for {', '.join(failed)}: worst coordinate "
            f"{worst.worst_coordinate} (relative error {worst.max_relative_error:.3e})"
        )


BENCHMARK_KEYS = (
    "hidden",
    "attention_units",
    "window",
    "epochs",
    "minibatch",
    "learning_rate",
)


def cmd_benchmark(config: RunConfig, out: Path, explicit: Dict[str, Any]) -> None:
    """Model sizes come from explicit flags only; the run defaults are too large."""
    spec = load_synth_spec(Path(config.spec)) if config.spec else reference_synth_spec()
    data = synth_generate(spec, make_rng(config.seed))
    sizes = {key: explicit[key] for key in BENCHMARK_KEYS if key in explicit}
    settings = ExperimentSettings(seed=config.seed, workers=config.workers, **sizes)
    (out / "benchmark_settings.json").write_text(
        settings.model_dump_json(indent=1) + "\n", encoding="utf-8"
    )
    table = run_ordering_experiment(data, settings)
    write_csv(table, out / "benchmark.csv")


# Seeds used when neither flag, config file nor environment sets one.
COMMAND_SEEDS: Dict[str, int] = {"gradcheck": DEFAULT_SEED}

COMMANDS: Dict[str, Callable[[RunConfig, Path], None]] = {
    "synth": cmd_synth,
    "stats": cmd_stats,
    "train": cmd_train,
    "eval": cmd_eval,
    "detect": cmd_detect,
    "sweep-offsets": cmd_sweep_offsets,
    "retrieve": cmd_retrieve,
    "gradcheck": cmd_gradcheck,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, run one subcommand and return its exit status."""
    load_dotenv()
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"{parser.prog}: error: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)

    command = args.pop("command")
    config_path = args.pop("config", None)
    try:
        config = resolve_run_config(args, Path(config_path) if config_path else None)
        if command in COMMAND_SEEDS and "seed" not in config.model_fields_set:
            config = config.model_copy(update={"seed": COMMAND_SEEDS[command]})
        configure_logging(config.log_level)
        out = Path(config.out)
        write_resolved_config(config, out)
        logger.info("Running %s, outputs in %s", command, out)
        if command == "benchmark":
            cmd_benchmark(config, out, args)
        else:
            COMMANDS[command](config, out)
    except (MultiLstmError, OSError, PydanticValidationError) as exc:
        code = exit_code(exc)
        logger.error("%s failed: %s", command, exc)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(run())
