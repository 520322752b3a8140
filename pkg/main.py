import argparse
import os
import sys
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from loguru import logger
from pydantic import ValidationError

from frame2video.errors import ConfigurationError
from frame2video.logger import setup_logger
from frame2video.models import StageResult
from frame2video.orchestrator import Orchestrator
from frame2video.utils import load_run_config

# Load environment
load_dotenv()
ENABLE_FILE_LOGGING = os.getenv("ENABLE_FILE_LOGGING", "false").lower() == "true"
LOG_LEVEL = os.getenv("LOG_LEVEL")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config (default: $F2V_CONFIG)")
    common.add_argument("--seed", type=int, help="seed for dataset generation, training and scoring")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING, ERROR")

    output = argparse.ArgumentParser(add_help=False)
    output.add_argument("--out", help="output directory for checkpoints, scores, reports and plots")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="dataset root")

    parser = argparse.ArgumentParser(
        prog="frame2video",
        description="Frame-to-Video semantic prediction for video anomaly detection"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", parents=[common], help="generate the synthetic benchmark")
    synth.add_argument("--out", required=True, help="dataset root to create")
    synth.add_argument("--image-size", type=int)
    synth.add_argument("--force", action="store_true", help="overwrite a non-empty dataset root")

    train = commands.add_parser("train", parents=[common, output, data], help="train a model")
    train.add_argument("--epochs", type=int)
    train.add_argument("--beta", type=float)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--tiny", action="store_true", help="reduced channel widths and image size")
    train.add_argument("--image-size", type=int)
    train.add_argument("--resume", help="checkpoint to continue from")

    score = commands.add_parser("score", parents=[common, output, data], help="score test clips")
    score.add_argument("--checkpoint", help="default: <out>/checkpoints/last.pt")
    score.add_argument("--timestep", help="'all' or a prediction step 1..horizon")
    score.add_argument("--order", choices=["smooth_first", "normalize_first"])
    score.add_argument("--no-maps", action="store_true", help="skip anomaly map PNGs")

    evaluate = commands.add_parser("eval", parents=[common, output, data], help="frame-level AUC report")
    evaluate.add_argument("--scores", help="default: <out>/scores.csv")
    evaluate.add_argument("--per-clip", action="store_true", help="average per-clip AUCs")

    plot = commands.add_parser("plot", parents=[common, output, data], help="write figures")
    plot.add_argument("--checkpoint", help="default: <out>/checkpoints/last.pt")

    run = commands.add_parser("run", parents=[common, output, data], help="synth, train, score, eval, plot")
    run.add_argument("--epochs", type=int)
    run.add_argument("--tiny", action="store_true")
    run.add_argument("--image-size", type=int)
    run.add_argument("--force", action="store_true", help="regenerate the dataset")

    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Command-line values as a nested RunConfig fragment; unset flags stay None."""
    get = lambda name: getattr(args, name, None)
    image_size = get("image_size")
    per_clip = get("per_clip")

    overrides = {
        "seed": args.seed,
        "log_level": args.log_level,
        "data_root": get("data"),
        "out_root": get("out"),
        "force": True if get("force") else None,
        "model": {
            "tiny_mode": True if get("tiny") else None,
            "image_size": image_size,
        },
        "train": {"epochs": get("epochs"), "beta": get("beta"), "batch_size": get("batch_size")},
        "score": {
            "timestep_mode": get("timestep"),
            "order": get("order"),
            "write_maps": False if get("no_maps") else None,
        },
        "eval": {"aggregation": "per_clip" if per_clip else None},
        "synth": {"image_size": image_size},
    }
    if args.command == "synth":
        # synth's --out names the dataset root
        overrides["data_root"], overrides["out_root"] = get("out"), None
        overrides["model"]["image_size"] = None
    elif args.command == "train":
        overrides["synth"]["image_size"] = None
    return overrides


def _report(result: StageResult) -> int:
    for name, path in result.artifacts.items():
        print(f"{name}: {path}")
    for warning in result.warnings:
        logger.warning(warning)
    if not result.success:
        logger.error(f"{result.stage} failed: {result.metadata.get('error')}")
    return result.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logger(enable_file_logging=ENABLE_FILE_LOGGING, log_level=(args.log_level or LOG_LEVEL or "INFO").upper())

    try:
        config = load_run_config(args.config, _overrides(args))
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        return 2
    except ConfigurationError as e:
        logger.error(str(e))
        return e.exit_code

    # The config file may raise the level or turn on the file sink
    setup_logger(
        enable_file_logging=ENABLE_FILE_LOGGING or config.enable_file_logging,
        log_level=(args.log_level or LOG_LEVEL or config.log_level).upper(),
        log_dir=config.out_root / "logs"
    )
    logger.info(f"Running '{args.command}' with seed {config.seed}")
    orchestrator = Orchestrator(config)

    if args.command == "synth":
        result = orchestrator.synth()
    elif args.command == "train":
        result = orchestrator.train(resume_from=args.resume)
    elif args.command == "score":
        result = orchestrator.score(checkpoint=args.checkpoint)
    elif args.command == "eval":
        result = orchestrator.evaluate(scores=args.scores)
    elif args.command == "plot":
        result = orchestrator.plot(checkpoint=args.checkpoint)
    else:
        result = orchestrator.run()
    return _report(result)


if __name__ == "__main__":
    sys.exit(main())
