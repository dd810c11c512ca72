"""
Configuration validation for TGVFM run files.

A run file is flat text, one `section.key = value` per line, with `#`
comment lines. Values are JSON literals or YAML flow scalars and lists
(`seg`, `[lta, cross, window]`). The validator checks a run's config.cfg
before any data is generated or any model is built, reporting every
problem with its dotted path.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, TypeVar

import pydantic
import yaml

from errors import ConfigurationError

CONFIG_VERSION = 1
CONFIG_FILE_NAME = "config.cfg"

KNOWN_SECTIONS = {"data", "e2vid", "backbone", "tcfb", "optim", "train", "silog"}
KNOWN_SCALARS = {"config_version", "seed", "task", "mode", "name", "use_tcfb"}
REPRESENTATIONS = {"e2vid", "frames", "voxel", "time_surface"}

ModelT = TypeVar("ModelT", bound=pydantic.BaseModel)


def coerce_model(model_cls: type[ModelT], value: Any, path: str = "") -> ModelT:
    """
    Build a pydantic model from a mapping (or pass an instance through).

    pydantic's ValidationError is re-raised as ConfigurationError with the
    failing field paths in the message.
    """
    if isinstance(value, model_cls):
        return value
    if isinstance(value, pydantic.BaseModel):
        value = value.model_dump()
    try:
        return model_cls.model_validate(value)
    except pydantic.ValidationError as e:
        problems = []
        for err in e.errors():
            loc = ".".join(str(part) for part in err["loc"])
            full = ".".join(p for p in (path, loc) if p)
            problems.append(f"{full or model_cls.__name__}: {err['msg']}")
        raise ConfigurationError("; ".join(problems)) from e


# =============================================================================
# Flat key = value files
# =============================================================================


def parse_value(text: str) -> Any:
    """JSON literal if it parses, otherwise a YAML flow value (bare words, [a, b])."""
    text = text.strip()
    if not text:
        return None
    try:
        return json.loads(text)
    except ValueError:
        pass
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"cannot parse value {text!r}") from e
    if isinstance(value, dict):
        raise ConfigurationError(f"{text!r}: write sections as dotted keys, not mappings")
    return value


def parse_flat_config(text: str) -> dict[str, Any]:
    """
    Parse `dotted.key = value` lines into a nested mapping.

    Raises:
        ConfigurationError: a malformed line, a duplicate key, or a key used
            both as a value and as a section. The message names the line.
    """
    config: dict[str, Any] = {}
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        parts = key.split(".")
        if not sep or not key or any(not p or p != p.strip() or " " in p for p in parts):
            raise ConfigurationError(f"line {lineno}: expected 'section.key = value', got {line!r}")
        if key in seen:
            raise ConfigurationError(f"line {lineno}: duplicate key {key}")
        seen.add(key)

        node = config
        for depth, part in enumerate(parts[:-1]):
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"line {lineno}: {'.'.join(parts[: depth + 1])} is a value, not a section")
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigurationError(f"line {lineno}: {key} is a section, not a value")
        try:
            node[parts[-1]] = parse_value(value)
        except ConfigurationError as e:
            raise ConfigurationError(f"line {lineno}: {key}: {e}") from e
    return config


def read_flat_config(path: str | Path) -> dict[str, Any]:
    with open(path) as f:
        return parse_flat_config(f.read())


def flatten_config(mapping: dict[str, Any], prefix: str = "") -> list[tuple[str, Any]]:
    """(dotted key, value) pairs, depth first, keys sorted within each section."""
    items: list[tuple[str, Any]] = []
    for key in sorted(mapping):
        value = mapping[key]
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            items.extend(flatten_config(value, f"{dotted}."))
        else:
            items.append((dotted, value))
    return items


def format_flat_config(mapping: dict[str, Any]) -> str:
    """Inverse of parse_flat_config; config_version is written first."""
    items = flatten_config(mapping)
    items.sort(key=lambda item: item[0] != "config_version")
    lines = [f"{key} = {json.dumps(value)}" for key, value in items]
    return "\n".join(lines) + "\n"


@dataclass
class ValidationError:
    """Represents a single validation error."""

    path: str
    message: str
    value: Any = None

    def __str__(self) -> str:
        if self.value is not None:
            return f"{CONFIG_FILE_NAME}:{self.path} {self.message}, got {type(self.value).__name__}: {self.value!r}"
        return f"{CONFIG_FILE_NAME}:{self.path} {self.message}"


@dataclass
class ValidationResult:
    """Result of configuration validation."""

    errors: list[ValidationError] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return len(self.errors) == 0

    def add_error(self, path: str, message: str, value: Any = None) -> None:
        self.errors.append(ValidationError(path, message, value))

    def __str__(self) -> str:
        if self.is_valid:
            return "Configuration is valid"
        lines = ["Configuration validation failed:"]
        for error in self.errors:
            lines.append(f"  - {error}")
        return "\n".join(lines)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


class ConfigValidator:
    """Validates a run configuration file (or an already-loaded mapping)."""

    def __init__(self, config_path: str | Path = CONFIG_FILE_NAME):
        self.config_path = Path(config_path)
        self.result = ValidationResult()

    def validate(self) -> ValidationResult:
        """
        Validate the configuration file.

        Returns:
            ValidationResult with any errors found.
        """
        self.result = ValidationResult()

        if not self.config_path.exists():
            self.result.add_error("", f"Configuration file not found: {self.config_path}")
            return self.result

        try:
            config = read_flat_config(self.config_path)
        except ConfigurationError as e:
            self.result.add_error("", f"Invalid syntax: {e}")
            return self.result

        if not config:
            self.result.add_error("", "Configuration file is empty")
            return self.result

        return self.validate_mapping(config)

    def validate_mapping(self, config: Any) -> ValidationResult:
        """Validate a configuration mapping without touching the filesystem."""
        self.result = ValidationResult()
        if not isinstance(config, dict):
            self.result.add_error("", "must be a mapping", config)
            return self.result

        self._validate_top_level(config)
        self._validate_data(config)
        self._validate_e2vid(config)
        self._validate_backbone(config)
        self._validate_tcfb(config)
        self._validate_optim(config)
        self._validate_train(config)
        self._validate_silog(config)
        return self.result

    def _section(self, config: dict, name: str) -> dict | None:
        section = config.get(name)
        if section is None:
            return {}
        if not isinstance(section, dict):
            self.result.add_error(name, "must be a mapping", section)
            return None
        return section

    def _check_number(
        self,
        section: dict,
        path: str,
        key: str,
        minimum: float | None = None,
        strict: bool = False,
        integer: bool = False,
    ) -> None:
        value = section.get(key)
        if value is None:
            return
        full = f"{path}.{key}"
        if integer and not _is_int(value):
            self.result.add_error(full, "must be an integer", value)
        elif not integer and not _is_number(value):
            self.result.add_error(full, "must be a number", value)
        elif minimum is not None and strict and value <= minimum:
            self.result.add_error(full, f"must be > {minimum}", value)
        elif minimum is not None and not strict and value < minimum:
            self.result.add_error(full, f"must be >= {minimum}", value)

    def _validate_top_level(self, config: dict) -> None:
        for key in config:
            if key not in KNOWN_SECTIONS and key not in KNOWN_SCALARS:
                self.result.add_error(str(key), "is not a known section or setting")

        version = config.get("config_version")
        if version is None:
            self.result.add_error("config_version", "is required")
        elif version != CONFIG_VERSION:
            self.result.add_error("config_version", f"must be {CONFIG_VERSION}", version)

        seed = config.get("seed")
        if seed is not None and (not _is_int(seed) or seed < 0):
            self.result.add_error("seed", "must be a non-negative integer", seed)

        task = config.get("task", "seg")
        if task not in ("seg", "depth"):
            self.result.add_error("task", "must be one of: seg, depth", task)

        mode = config.get("mode", "supervised")
        if mode not in ("supervised", "distilled"):
            self.result.add_error("mode", "must be one of: supervised, distilled", mode)

        use_tcfb = config.get("use_tcfb")
        if use_tcfb is not None and not isinstance(use_tcfb, bool):
            self.result.add_error("use_tcfb", "must be a boolean", use_tcfb)

    def _validate_data(self, config: dict) -> None:
        data = self._section(config, "data")
        if data is None:
            return
        self._check_number(data, "data", "n_sequences", minimum=2, integer=True)
        self._check_number(data, "data", "contrast_threshold", minimum=0, strict=True)
        self._check_number(data, "data", "num_bins", minimum=2, integer=True)
        self._check_number(data, "data", "unroll", minimum=1, integer=True)

        val_fraction = data.get("val_fraction")
        if val_fraction is not None and (not _is_number(val_fraction) or not 0 < val_fraction < 1):
            self.result.add_error("data.val_fraction", "must be in (0, 1)", val_fraction)

        representation = data.get("representation")
        if representation is not None and representation not in REPRESENTATIONS:
            self.result.add_error(
                "data.representation", f"must be one of: {', '.join(sorted(REPRESENTATIONS))}", representation
            )

        scene = data.get("scene", {})
        if not isinstance(scene, dict):
            self.result.add_error("data.scene", "must be a mapping", scene)
            return
        for key in ("height", "width"):
            self._check_number(scene, "data.scene", key, minimum=16, integer=True)
        self._check_number(scene, "data.scene", "n_frames", minimum=8, integer=True)
        self._check_number(scene, "data.scene", "n_objects", minimum=2, integer=True)

    def _resolution(self, config: dict) -> tuple[Any, Any]:
        data = config.get("data")
        scene = data.get("scene", {}) if isinstance(data, dict) else {}
        if not isinstance(scene, dict):
            scene = {}
        return scene.get("height", 64), scene.get("width", 64)

    def _validate_e2vid(self, config: dict) -> None:
        from e2vid import E2VID_PRESETS

        e2vid = self._section(config, "e2vid")
        if e2vid is None:
            return
        preset = e2vid.get("preset", "B0")
        if preset not in E2VID_PRESETS:
            self.result.add_error("e2vid.preset", f"must be one of: {', '.join(E2VID_PRESETS)}", preset)
            return
        self._check_number(e2vid, "e2vid", "lr", minimum=0, strict=True)
        self._check_number(e2vid, "e2vid", "iterations", minimum=1, integer=True)
        self._check_number(e2vid, "e2vid", "batch_size", minimum=1, integer=True)

        height, width = self._resolution(config)
        factor = 2 ** len(E2VID_PRESETS[preset]["encoder_channels"])
        for name, size in (("height", height), ("width", width)):
            if _is_int(size) and size % factor != 0:
                self.result.add_error(
                    f"data.scene.{name}", f"must be divisible by {factor} for E2VID preset {preset}", size
                )

    def _validate_backbone(self, config: dict) -> None:
        backbone = self._section(config, "backbone")
        if backbone is None:
            return
        for key in ("n_blocks", "channels", "patch_size", "n_tcfb_sites", "n_heads", "n_classes"):
            self._check_number(backbone, "backbone", key, minimum=1, integer=True)

        n_blocks = backbone.get("n_blocks", 6)
        n_sites = backbone.get("n_tcfb_sites", 2)
        if _is_int(n_blocks) and _is_int(n_sites) and n_sites > 0 and n_blocks % n_sites != 0:
            self.result.add_error(
                "backbone.n_blocks", f"must be divisible by n_tcfb_sites ({n_sites})", n_blocks
            )

        channels = backbone.get("channels", 64)
        n_heads = backbone.get("n_heads", 4)
        if _is_int(channels) and _is_int(n_heads) and n_heads > 0 and channels % n_heads != 0:
            self.result.add_error("backbone.channels", f"must be divisible by n_heads ({n_heads})", channels)

        patch = backbone.get("patch_size", 8)
        height, width = self._resolution(config)
        for name, size in (("height", height), ("width", width)):
            if _is_int(patch) and patch > 0 and _is_int(size) and size % patch != 0:
                self.result.add_error(
                    f"data.scene.{name}", f"must be divisible by backbone.patch_size ({patch})", size
                )

    def _validate_tcfb(self, config: dict) -> None:
        tcfb = self._section(config, "tcfb")
        if tcfb is None:
            return
        self._check_number(tcfb, "tcfb", "k", minimum=1, integer=True)
        self._check_number(tcfb, "tcfb", "delta", minimum=0, integer=True)
        self._check_number(tcfb, "tcfb", "d", minimum=1, integer=True)

        if tcfb.get("use_dfgm", True) and not (tcfb.get("use_lta", True) or tcfb.get("use_dsa", True)):
            self.result.add_error("tcfb.use_dfgm", "requires use_lta or use_dsa", tcfb.get("use_dfgm"))

        order = tcfb.get("order")
        if order is not None:
            allowed = {"lta", "cross", "window"}
            if not isinstance(order, list) or sorted(order) != sorted(allowed):
                self.result.add_error("tcfb.order", "must be a permutation of [lta, cross, window]", order)

    def _validate_optim(self, config: dict) -> None:
        optim = self._section(config, "optim")
        if optim is None:
            return
        self._check_number(optim, "optim", "lr", minimum=0)
        self._check_number(optim, "optim", "weight_decay", minimum=0)

    def _validate_train(self, config: dict) -> None:
        train = self._section(config, "train")
        if train is None:
            return
        for key in ("iterations", "batch_size", "log_interval", "eval_interval", "checkpoint_interval"):
            self._check_number(train, "train", key, minimum=1, integer=True)

        if config.get("mode") == "distilled" and not train.get("teacher_checkpoint"):
            self.result.add_error("train.teacher_checkpoint", "is required when mode is distilled")

    def _validate_silog(self, config: dict) -> None:
        silog = self._section(config, "silog")
        if silog is None:
            return
        lam = silog.get("lam")
        if lam is not None and (not _is_number(lam) or not 0 <= lam <= 1):
            self.result.add_error("silog.lam", "must be in [0, 1]", lam)


def validate_config(config_path: str | Path = CONFIG_FILE_NAME) -> ValidationResult:
    """
    Convenience function to validate a configuration file.

    Args:
        config_path: Path to the run's config.cfg.

    Returns:
        ValidationResult with any errors found.
    """
    validator = ConfigValidator(config_path)
    return validator.validate()
