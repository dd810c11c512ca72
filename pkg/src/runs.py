"""
Run persistence: the append-only RunRecord and the metrics.log writer.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from errors import ContractError, DataNotFoundError
from logging_config import get_logger

logger = get_logger(__name__)

RECORD_FILE = "record.json"
METRICS_FILE = "metrics.log"
CONFIG_FILE = "config.cfg"
STATE_FILE = "state.pt"
TIMING_KEYS = ("wall_ms",)


@dataclass
class RunRecord:
    """
    Configuration echo, logged losses and evaluations, and final metrics.

    Entries can only be appended until finalize() is called, exactly once.
    """

    name: str
    config: dict[str, Any]
    losses: list[dict[str, Any]] = field(default_factory=list)
    evaluations: list[dict[str, Any]] = field(default_factory=list)
    final_metrics: dict[str, Any] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)
    wall_ms: float = 0.0
    finalized: bool = False

    def _check_open(self) -> None:
        if self.finalized:
            raise ContractError(f"run record {self.name!r} is already finalized")

    def log_losses(self, iteration: int, values: dict[str, float]) -> None:
        self._check_open()
        self.losses.append({"iteration": iteration, **values})

    def log_evaluation(self, iteration: int, metrics: dict[str, float]) -> None:
        self._check_open()
        self.evaluations.append({"iteration": iteration, **metrics})

    def add_artifact(self, name: str, path: str | Path) -> None:
        self._check_open()
        self.artifacts[name] = str(path)

    def finalize(self, final_metrics: dict[str, Any], wall_ms: float) -> "RunRecord":
        self._check_open()
        self.final_metrics = dict(final_metrics)
        self.wall_ms = float(wall_ms)
        self.finalized = True
        return self

    def loss_curve(self, key: str = "loss") -> tuple[list[int], list[float]]:
        points = [(entry["iteration"], entry[key]) for entry in self.losses if key in entry]
        return [p[0] for p in points], [p[1] for p in points]

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "config": self.config,
            "losses": self.losses,
            "evaluations": self.evaluations,
            "final_metrics": self.final_metrics,
            "artifacts": self.artifacts,
            "wall_ms": self.wall_ms,
            "finalized": self.finalized,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunRecord":
        return cls(
            name=data["name"],
            config=data["config"],
            losses=list(data.get("losses", [])),
            evaluations=list(data.get("evaluations", [])),
            final_metrics=dict(data.get("final_metrics", {})),
            artifacts=dict(data.get("artifacts", {})),
            wall_ms=float(data.get("wall_ms", 0.0)),
            finalized=bool(data.get("finalized", False)),
        )

    def save(self, run_dir: str | Path) -> Path:
        path = Path(run_dir) / RECORD_FILE
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return path

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunRecord":
        path = Path(run_dir)
        if path.is_dir():
            path = path / RECORD_FILE
        if not path.exists():
            raise DataNotFoundError(path, "Run `tgvfm train` (or `distill`) to create a run directory.")
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def truncate_after(self, iteration: int) -> None:
        """Drop entries logged after iteration (used when resuming)."""
        self._check_open()
        self.losses = [e for e in self.losses if e["iteration"] <= iteration]
        self.evaluations = [e for e in self.evaluations if e["iteration"] <= iteration]


class MetricsLog:
    """
    Append-only JSON-lines log, one record per logging or evaluation interval.

    Every record carries iteration, wall_ms and a kind ('train' or 'eval').
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, iteration: int, kind: str, wall_ms: float, values: dict[str, Any]) -> None:
        record = {"iteration": iteration, "kind": kind, "wall_ms": round(float(wall_ms), 3), **values}
        with open(self.path, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def read(self, strip_timing: bool = False) -> list[dict[str, Any]]:
        if not self.path.exists():
            return []
        with open(self.path) as f:
            records = [json.loads(line) for line in f if line.strip()]
        if strip_timing:
            records = [{k: v for k, v in r.items() if k not in TIMING_KEYS} for r in records]
        return records

    def truncate_after(self, iteration: int) -> None:
        """Keep records up to and including iteration."""
        kept = [r for r in self.read() if r["iteration"] <= iteration]
        with open(self.path, "w") as f:
            for record in kept:
                f.write(json.dumps(record, sort_keys=True) + "\n")
        logger.debug("Truncated metrics log", extra={"path": str(self.path), "kept": len(kept)})
