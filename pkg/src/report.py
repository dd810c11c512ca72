"""
Report generation from finalized run records.

Writes comparison.csv (one row per record) and one loss-curve PNG per
record. Output depends only on the records, so regenerating a report from
the same record.json files reproduces it byte for byte.
"""

import csv
import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from errors import ContractError  # noqa: E402
from logging_config import get_logger  # noqa: E402
from runs import RunRecord  # noqa: E402

logger = get_logger(__name__)

COMPARISON_FILE = "comparison.csv"
# no timestamp or version in PNG metadata
_PNG_METADATA = {"Software": None}


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "run"


def _numeric(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def load_records(paths: list[str | Path]) -> list[RunRecord]:
    """Load records from run directories or record.json files."""
    return [RunRecord.load(p) for p in paths]


def write_comparison(records: list[RunRecord], path: str | Path) -> Path:
    keys = sorted({k for r in records for k, v in r.final_metrics.items() if _numeric(v)})
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["name", *keys, "wall_ms"])
        for record in records:
            row = [record.name]
            for key in keys:
                value = record.final_metrics.get(key)
                row.append(f"{value:.6f}" if _numeric(value) else "")
            row.append(f"{record.wall_ms:.1f}")
            writer.writerow(row)
    return path


def plot_loss_curves(records: list[RunRecord], path: str | Path, title: str = "Training loss") -> Path:
    """All records' loss curves on one set of axes."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for record in records:
        iterations, values = record.loss_curve()
        ax.plot(iterations, values, label=record.name)
    ax.set_title(title)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    if len(records) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def emit_report(records: list[RunRecord], report_dir: str | Path) -> list[Path]:
    """
    Write the comparison table and a loss plot per record.

    Raises:
        ContractError: no records, or a record that is not finalized
    """
    if not records:
        raise ContractError("emit_report needs at least one record")
    for record in records:
        if not record.finalized:
            raise ContractError(f"run record {record.name!r} is not finalized")

    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    written = [write_comparison(records, report_dir / COMPARISON_FILE)]

    used: set[str] = set()
    for index, record in enumerate(records):
        stem = _slug(record.name)
        if stem in used:
            stem = f"{stem}_{index}"
        used.add(stem)
        written.append(plot_loss_curves([record], report_dir / f"{stem}_loss.png", title=record.name))

    logger.info("Wrote report", extra={"report_dir": str(report_dir), "records": len(records)})
    return written
