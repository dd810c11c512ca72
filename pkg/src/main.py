"""
TGVFM desk - command-line runner

Every flag falls back to an environment variable TGVFM_<FLAG> (a .env file
in the working directory is loaded first), then to the value in the run
configuration file.
"""

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any

from dotenv import load_dotenv

# Add src to path
sys.path.insert(0, str(Path(__file__).parent))

from ablation import (  # noqa: E402
    compare_e2vid_presets,
    compare_representations,
    compare_zero_init,
    run_ablation,
    sharing_table,
    sweep_memory_k,
)
from config_validator import validate_config  # noqa: E402
from datasets import SequenceDataset, simulate_dataset  # noqa: E402
from e2vid import E2VID_PRESETS, load_e2vid  # noqa: E402
from errors import TGVFMError  # noqa: E402
from logging_config import get_logger, setup_logging  # noqa: E402
from models import RunConfig, load_run_config  # noqa: E402
from report import emit_report, load_records  # noqa: E402
from trainer import evaluate_e2vid, train_distilled, train_e2vid, train_supervised  # noqa: E402

DEFAULT_OUT_DIR = "runs"
STUDIES = ("components", "zero-init", "representation", "e2vid", "sharing")


def _env(flag: str, default: Any = None) -> Any:
    return os.getenv(f"TGVFM_{flag.upper().replace('-', '_')}", default)


def _env_int(flag: str) -> int | None:
    value = _env(flag)
    return int(value) if value not in (None, "") else None


def _env_float(flag: str) -> float | None:
    value = _env(flag)
    return float(value) if value not in (None, "") else None


def _env_ints(flag: str) -> list[int] | None:
    value = _env(flag)
    if not value:
        return None
    return [int(v) for v in value.replace(",", " ").split()]


def _env_strs(flag: str) -> list[str] | None:
    value = _env(flag)
    if not value:
        return None
    return value.replace(",", " ").split()


def _load(args: argparse.Namespace, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Config file, then global flags, then command overrides."""
    return load_run_config(args.config, {"seed": args.seed, **(overrides or {})})


# =============================================================================
# Commands
# =============================================================================


def cmd_simulate(args: argparse.Namespace) -> None:
    overrides = {
        "data.data_dir": args.out,
        "data.n_sequences": args.n_sequences,
        "data.n_jobs": args.jobs,
        "data.contrast_threshold": args.threshold,
        "data.scene.n_frames": args.frames,
        "data.scene.height": args.size,
        "data.scene.width": args.size,
    }
    config = _load(args, overrides)
    data = config.data
    root = simulate_dataset(
        data.data_dir,
        seed=config.seed,
        n_sequences=data.n_sequences,
        scene_config=data.scene,
        contrast_threshold=data.contrast_threshold,
        n_jobs=data.n_jobs,
    )
    print(f"Wrote {data.n_sequences} sequences to {root}")


def cmd_e2vid_train(args: argparse.Namespace) -> None:
    overrides = {"e2vid.preset": args.preset, "data.data_dir": args.data, "e2vid.iterations": args.iters}
    config = _load(args, overrides)
    run_dir = Path(args.out or Path(args.out_dir) / f"e2vid_{config.e2vid.preset}")
    _, record = train_e2vid(config, run_dir)
    print(f"E2VID-{config.e2vid.preset}: held-out SSIM {record.final_metrics['ssim']:.4f} "
          f"(zeroed state {record.final_metrics['ssim_zero_state']:.4f})")
    print(f"Run directory: {run_dir}")


def cmd_e2vid_eval(args: argparse.Namespace) -> None:
    if not args.ckpt:
        raise TGVFMError("e2vid-eval needs --ckpt (or TGVFM_CKPT)")
    config = _load(args, {"data.data_dir": args.data})
    model = load_e2vid(args.ckpt)
    dataset = SequenceDataset(config.data.data_dir, "voxel", model.config.num_bins)
    _, val_idx = dataset.split(config.data.val_fraction)
    metrics = evaluate_e2vid(model, dataset, val_idx)
    if args.report:
        path = Path(args.report)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(metrics, f, indent=2, sort_keys=True)
        print(f"Wrote {path}")
    print(json.dumps(metrics, indent=2, sort_keys=True))


def _train_overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {"name": args.name, "train.iterations": args.iters, "e2vid.checkpoint": args.e2vid_ckpt}


def cmd_train(args: argparse.Namespace) -> None:
    config = _load(args, _train_overrides(args))
    run_dir = Path(args.out_dir) / config.name
    record = train_supervised(config, run_dir, resume=args.resume)
    _print_metrics(record.name, record.final_metrics, run_dir)


def cmd_distill(args: argparse.Namespace) -> None:
    overrides = {**_train_overrides(args), "mode": "distilled", "train.teacher_checkpoint": args.teacher}
    config = _load(args, overrides)
    run_dir = Path(args.out_dir) / config.name
    record = train_distilled(config, run_dir, resume=args.resume)
    _print_metrics(record.name, record.final_metrics, run_dir)


def cmd_ablate(args: argparse.Namespace) -> None:
    config = _load(args, {"train.iterations": args.iters, "e2vid.checkpoint": args.e2vid_ckpt})
    out_dir = Path(args.out_dir) / "ablation"
    if args.study == "components":
        table, _ = run_ablation(config, out_dir, seeds=args.seeds)
    elif args.study == "zero-init":
        table, _ = compare_zero_init(config, out_dir)
    elif args.study == "representation":
        table, _ = compare_representations(config, out_dir)
    elif args.study == "e2vid":
        table, _ = compare_e2vid_presets(config, out_dir, tuple(args.presets))
    else:
        table = sharing_table(config)
        table.to_csv(out_dir / "sharing.csv")
    print(table.format_text())


def cmd_sweep_k(args: argparse.Namespace) -> None:
    config = _load(args, {"train.iterations": args.iters, "e2vid.checkpoint": args.e2vid_ckpt})
    table, _ = sweep_memory_k(config, args.k, Path(args.out_dir) / "ablation")
    print(table.format_text())


def cmd_report(args: argparse.Namespace) -> None:
    records = load_records(args.runs)
    out = Path(args.out or Path(args.out_dir) / "report")
    written = emit_report(records, out)
    for path in written:
        print(path)


def cmd_validate(args: argparse.Namespace) -> None:
    if not args.config:
        print("Error: validate needs --config (or TGVFM_CONFIG)", file=sys.stderr)
        sys.exit(1)
    result = validate_config(args.config)
    if result.is_valid:
        print(f"Configuration file '{args.config}' is valid.")
        return
    print(result, file=sys.stderr)
    sys.exit(1)


def _print_metrics(name: str, metrics: dict[str, Any], run_dir: Path) -> None:
    print(f"\n{name}")
    for key in sorted(metrics):
        value = metrics[key]
        print(f"  {key:<16} {value:.4f}" if isinstance(value, float) else f"  {key:<16} {value}")
    print(f"Run directory: {run_dir}")


COMMANDS = {
    "simulate": cmd_simulate,
    "e2vid-train": cmd_e2vid_train,
    "e2vid-eval": cmd_e2vid_eval,
    "train": cmd_train,
    "distill": cmd_distill,
    "ablate": cmd_ablate,
    "sweep-k": cmd_sweep_k,
    "report": cmd_report,
    "validate": cmd_validate,
}


# =============================================================================
# Parser
# =============================================================================


def _add_training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--iters", type=int, default=_env_int("iters"), help="Training iterations")
    parser.add_argument("--e2vid-ckpt", default=_env("e2vid_ckpt"), help="E2VID checkpoint for reconstructed input")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tgvfm", description="Temporal-guided event vision at desk scale")
    parser.add_argument("-c", "--config", default=_env("config"), help="Path to the run config.cfg")
    parser.add_argument("--seed", type=int, default=_env_int("seed"), help="Random seed")
    parser.add_argument("--out-dir", default=_env("out_dir", DEFAULT_OUT_DIR), help="Root for run directories")
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose logging")

    subparsers = parser.add_subparsers(dest="command", help="Commands")

    simulate = subparsers.add_parser("simulate", help="Generate a synthetic event dataset")
    simulate.add_argument("--frames", type=int, default=_env_int("frames"), help="Frames per sequence")
    simulate.add_argument("--size", type=int, default=_env_int("size"), help="Square sensor size in pixels")
    simulate.add_argument("--threshold", type=float, default=_env_float("threshold"), help="Contrast threshold")
    simulate.add_argument("--out", default=_env("out"), help="Dataset directory")
    simulate.add_argument("--n-sequences", type=int, default=_env_int("n_sequences"), help="Number of sequences")
    simulate.add_argument("--jobs", type=int, default=_env_int("jobs"), help="Parallel workers")

    e2vid_train = subparsers.add_parser("e2vid-train", help="Train an E2VID reconstructor")
    e2vid_train.add_argument("--preset", default=_env("preset"), help="Architecture preset (B0-B4)")
    e2vid_train.add_argument("--data", default=_env("data"), help="Dataset directory")
    e2vid_train.add_argument("--iters", type=int, default=_env_int("iters"), help="Training iterations")
    e2vid_train.add_argument("--out", default=_env("out"), help="Run directory")

    e2vid_eval = subparsers.add_parser("e2vid-eval", help="Evaluate a reconstructor on held-out sequences")
    e2vid_eval.add_argument("--ckpt", default=_env("ckpt"), help="E2VID checkpoint (.e2v)")
    e2vid_eval.add_argument("--data", default=_env("data"), help="Dataset directory")
    e2vid_eval.add_argument("--report", default=_env("report"), help="Write metrics JSON here")

    train = subparsers.add_parser("train", help="Supervised backbone training")
    train.add_argument("--name", default=_env("name"), help="Run name (directory under --out-dir)")
    train.add_argument("--resume", action="store_true", help="Resume from state.pt in the run directory")
    _add_training_flags(train)

    distill = subparsers.add_parser("distill", help="Train against a frozen teacher on clean frames")
    distill.add_argument("--teacher", default=_env("teacher"), help="Teacher model checkpoint (.tgv)")
    distill.add_argument("--name", default=_env("name"), help="Run name (directory under --out-dir)")
    distill.add_argument("--resume", action="store_true", help="Resume from state.pt in the run directory")
    _add_training_flags(distill)

    ablate = subparsers.add_parser("ablate", help="Run an ablation study")
    ablate.add_argument("--study", choices=STUDIES, default=_env("study", "components"), help="Which study")
    ablate.add_argument("--seeds", type=int, nargs="+", default=_env_ints("seeds"), help="Seeds to average over")
    ablate.add_argument(
        "--presets",
        nargs="+",
        choices=list(E2VID_PRESETS),
        default=_env_strs("presets") or list(E2VID_PRESETS),
        help="E2VID presets for --study e2vid",
    )
    _add_training_flags(ablate)

    sweep = subparsers.add_parser("sweep-k", help="Sweep the memory window size")
    sweep.add_argument("--k", type=int, nargs="+", default=_env_ints("k") or [1, 2, 3, 4, 5], help="Window sizes")
    _add_training_flags(sweep)

    report = subparsers.add_parser("report", help="Comparison table and loss plots from run directories")
    report.add_argument("runs", nargs="+", help="Run directories or record.json files")
    report.add_argument("--out", default=_env("report_dir"), help="Report directory")

    subparsers.add_parser("validate", help="Validate configuration file")
    return parser


def main(argv: list[str] | None = None) -> None:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)

    setup_logging(verbose=args.verbose)
    logger = get_logger(__name__)

    handler = COMMANDS.get(args.command)
    if handler is None:
        parser.print_help()
        return

    try:
        handler(args)
    except TGVFMError as e:
        logger.error("Command failed", extra={"command": args.command, "error_type": type(e).__name__, "error": str(e)})
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
