"""
Configuration management for the PatchGrad training engine.
Handles application defaults (config.json) and declarative run configs
(flat key=value files).
"""

import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union
from utils.logger import setup_logger
from utils.error_manager import ConfigError

logger = setup_logger(__name__)

# Project root directory
PROJECT_ROOT = Path(__file__).parent.parent

# Tasks
CLASSIFICATION = "classification"
SEGMENTATION = "segmentation"
TASK_ALIASES = {"cls": CLASSIFICATION, "classification": CLASSIFICATION,
                "seg": SEGMENTATION, "segmentation": SEGMENTATION}

# Training defaults
DEFAULT_LR = {CLASSIFICATION: 1e-3, SEGMENTATION: 1e-4}
ACCUM_CAP = {CLASSIFICATION: 3, SEGMENTATION: 2}
DEFAULT_BATCH_SIZE = 4
DEFAULT_EPOCHS = 100
DEFAULT_WEIGHT_DECAY = 0.01
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Network defaults
DEFAULT_WIDTHS = {CLASSIFICATION: (16, 32, 64), SEGMENTATION: (8, 16, 32)}
DEFAULT_FEATURE_DIM = 64
DEFAULT_SEG_CHANNELS = 8

# Runtime defaults
DEFAULT_CHUNK_SIZE = 4
DEFAULT_LOG_EVERY = 10
DEFAULT_THREADS = 0  # 0 = one worker per CPU
THREADS_ENV = "PATCHGRAD_THREADS"

class Config:
    """
    Configuration manager for application settings.
    Loads configuration from a JSON file over built-in defaults.
    """

    def __init__(self, config_file: Path = None):
        """Initialize configuration manager."""
        self.config_file = config_file or (PROJECT_ROOT / "config.json")
        self.settings: Dict[str, Any] = self._load_defaults()
        self.load()

    def _load_defaults(self) -> Dict[str, Any]:
        """Load default configuration values."""
        return {
            "training": {
                "classification": {
                    "base_lr": DEFAULT_LR[CLASSIFICATION],
                    "accum_cap": ACCUM_CAP[CLASSIFICATION]
                },
                "segmentation": {
                    "base_lr": DEFAULT_LR[SEGMENTATION],
                    "accum_cap": ACCUM_CAP[SEGMENTATION]
                },
                "batch_size": DEFAULT_BATCH_SIZE,
                "epochs": DEFAULT_EPOCHS,
                "weight_decay": DEFAULT_WEIGHT_DECAY,
                "adam": {"beta1": ADAM_BETA1, "beta2": ADAM_BETA2, "eps": ADAM_EPS}
            },
            "runtime": {
                "threads": DEFAULT_THREADS,
                "chunk_size": DEFAULT_CHUNK_SIZE,
                "log_every": DEFAULT_LOG_EVERY
            },
            "logging": {
                "level": "INFO"
            }
        }

    def load(self) -> None:
        """Load configuration from file, or use defaults if file doesn't exist."""
        if self.config_file.exists():
            try:
                with open(self.config_file, 'r') as f:
                    loaded_settings = json.load(f)
                self._merge(self.settings, loaded_settings)
                logger.debug(f"Configuration loaded from {self.config_file}")
            except Exception as e:
                logger.error(f"Failed to load configuration: {e}")
        else:
            logger.debug("Using default configuration")

    def _merge(self, base: Dict[str, Any], update: Dict[str, Any]) -> None:
        for key, value in update.items():
            if isinstance(value, dict) and isinstance(base.get(key), dict):
                self._merge(base[key], value)
            else:
                base[key] = value

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by dot-separated key."""
        keys = key.split('.')
        value = self.settings
        for k in keys:
            if isinstance(value, dict):
                value = value.get(k, default)
            else:
                return default
        return value

def resolve_threads(flag: Optional[int] = None) -> int:
    """
    Number of worker threads: --threads flag, else PATCHGRAD_THREADS,
    else the config default (0 means one per CPU).
    """
    if flag is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                flag = int(env)
            except ValueError:
                logger.warning(f"Ignoring non-integer {THREADS_ENV}={env!r}")
        if flag is None:
            flag = int(config.get("runtime.threads", DEFAULT_THREADS))
    if flag <= 0:
        flag = os.cpu_count() or 1
    return flag

# ============================================================================
# Run Configuration
# ============================================================================

def _setting(key: str, fallback: Any, cast: Callable[[Any], Any]) -> Any:
    """Dataclass field whose default is read from config.json when the RunConfig is built."""
    return field(default_factory=lambda: cast(config.get(key, fallback)))

@dataclass
class RunConfig:
    """Declarative description of one training run."""
    task: str = CLASSIFICATION
    data_dir: str = ""
    test_data_dir: str = ""
    out_dir: str = ""
    mode: str = "patch"  # patch | downsampled
    grid_m: int = 4
    grid_n: int = 4
    sampling_rate: float = 0.25
    inner_iterations: int = 3
    use_global_patch: bool = True
    fusion: str = "add"  # add | concat (classification only)
    baseline_size: int = 64
    widths: Tuple[int, ...] = ()
    feature_dim: int = DEFAULT_FEATURE_DIM
    seg_channels: int = DEFAULT_SEG_CHANNELS
    base_lr: Optional[float] = None
    warmup_steps: Optional[int] = None
    epochs: int = _setting("training.epochs", DEFAULT_EPOCHS, int)
    batch_size: int = _setting("training.batch_size", DEFAULT_BATCH_SIZE, int)
    accum_steps: Optional[int] = None
    seed: int = 0
    memory_budget_bytes: Optional[int] = None
    weight_decay: float = _setting("training.weight_decay", DEFAULT_WEIGHT_DECAY, float)
    beta1: float = _setting("training.adam.beta1", ADAM_BETA1, float)
    beta2: float = _setting("training.adam.beta2", ADAM_BETA2, float)
    adam_eps: float = _setting("training.adam.eps", ADAM_EPS, float)
    chunk_size: int = _setting("runtime.chunk_size", DEFAULT_CHUNK_SIZE, int)
    log_every: int = _setting("runtime.log_every", DEFAULT_LOG_EVERY, int)

    def __post_init__(self):
        self.task = TASK_ALIASES.get(self.task, self.task)
        if self.task in DEFAULT_LR:
            if self.base_lr is None:
                self.base_lr = float(config.get(f"training.{self.task}.base_lr", DEFAULT_LR[self.task]))
            if self.accum_steps is None:
                self.accum_steps = int(config.get(f"training.{self.task}.accum_cap", ACCUM_CAP[self.task]))
            if not self.widths:
                self.widths = DEFAULT_WIDTHS[self.task]

    @property
    def grid_cells(self) -> int:
        return self.grid_m * self.grid_n

    @property
    def patches_per_iteration(self) -> int:
        """k = max(1, floor(S * m * n))."""
        return max(1, math.floor(self.sampling_rate * self.grid_cells))

    def validate(self) -> None:
        """Check every field; raise one ConfigError listing all violations."""
        violations: List[str] = []
        if self.task not in DEFAULT_LR:
            violations.append(f"task: must be cls or seg, got '{self.task}'")
        if self.mode not in ("patch", "downsampled"):
            violations.append(f"mode: must be patch or downsampled, got '{self.mode}'")
        if self.fusion not in ("add", "concat"):
            violations.append(f"fusion: must be add or concat, got '{self.fusion}'")
        if self.fusion == "concat" and self.task == SEGMENTATION:
            violations.append("fusion: segmentation always concatenates; leave fusion=add")
        for name in ("grid_m", "grid_n", "inner_iterations", "epochs", "batch_size",
                     "feature_dim", "seg_channels", "chunk_size", "baseline_size", "log_every"):
            if getattr(self, name) < 1:
                violations.append(f"{name}: must be >= 1, got {getattr(self, name)}")
        if not 0.0 < self.sampling_rate <= 1.0:
            violations.append(f"sampling_rate: must lie in (0, 1], got {self.sampling_rate}")
        elif self.grid_m >= 1 and self.grid_n >= 1 and self.inner_iterations >= 1:
            k, cells = self.patches_per_iteration, self.grid_cells
            if k * self.inner_iterations > cells:
                violations.append(
                    f"inner_iterations: k*J = {k}*{self.inner_iterations} exceeds the {cells} grid cells"
                )
        if not self.widths or any(w < 1 for w in self.widths):
            violations.append(f"widths: must be positive integers, got {list(self.widths)}")
        if self.task == SEGMENTATION and len(self.widths) != 3:
            violations.append(f"widths: segmentation backbone needs exactly 3 widths, got {len(self.widths)}")
        if self.base_lr is not None and self.base_lr <= 0:
            violations.append(f"base_lr: must be > 0, got {self.base_lr}")
        if self.accum_steps is not None and self.task in ACCUM_CAP:
            cap = ACCUM_CAP[self.task]
            if not 1 <= self.accum_steps <= cap:
                violations.append(f"accum_steps: must lie in [1, {cap}] for {self.task}, got {self.accum_steps}")
        if self.warmup_steps is not None and self.warmup_steps < 0:
            violations.append(f"warmup_steps: must be >= 0, got {self.warmup_steps}")
        if self.memory_budget_bytes is not None and self.memory_budget_bytes < 0:
            violations.append(f"memory_budget_bytes: must be >= 0, got {self.memory_budget_bytes}")
        if self.weight_decay < 0:
            violations.append(f"weight_decay: must be >= 0, got {self.weight_decay}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            violations.append(f"beta1/beta2: must lie in [0, 1), got {self.beta1}/{self.beta2}")
        if self.adam_eps <= 0:
            violations.append(f"adam_eps: must be > 0, got {self.adam_eps}")
        if violations:
            raise ConfigError(violations)

    def to_text(self) -> str:
        """Serialize as key=value lines (every field, declaration order)."""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got '{text}'")

def _parse_optional_int(text: str) -> Optional[int]:
    return None if text.lower() in ("", "none") else int(text)

def _parse_optional_float(text: str) -> Optional[float]:
    return None if text.lower() in ("", "none") else float(text)

def _parse_widths(text: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in text.replace(" ", "").split(",") if part)

FIELD_PARSERS = {
    "task": str, "data_dir": str, "test_data_dir": str, "out_dir": str, "mode": str,
    "grid_m": int, "grid_n": int, "sampling_rate": float, "inner_iterations": int,
    "use_global_patch": _parse_bool, "fusion": str, "baseline_size": int,
    "widths": _parse_widths, "feature_dim": int, "seg_channels": int,
    "base_lr": _parse_optional_float, "warmup_steps": _parse_optional_int,
    "epochs": int, "batch_size": int, "accum_steps": _parse_optional_int, "seed": int,
    "memory_budget_bytes": _parse_optional_int, "weight_decay": float,
    "beta1": float, "beta2": float, "adam_eps": float, "chunk_size": int, "log_every": int,
}

def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    """
    Parse key=value text into a validated RunConfig.

    Unknown keys, malformed lines and unparsable values are collected together
    with the semantic checks of RunConfig.validate into one ConfigError.
    """
    values: Dict[str, Any] = {}
    violations: List[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            violations.append(f"{source}:{lineno}: expected key=value, got '{raw.strip()}'")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        parser = FIELD_PARSERS.get(key)
        if parser is None:
            violations.append(f"{key}: unknown key ({source}:{lineno})")
            continue
        try:
            values[key] = parser(value)
        except ValueError as e:
            violations.append(f"{key}: {e}")
    if violations:
        raise ConfigError(violations)

    run_config = RunConfig(**values)
    run_config.validate()
    return run_config

def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Load and validate a run config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    run_config = parse_run_config(path.read_text(encoding="utf-8"), source=str(path))
    logger.info(f"Run configuration loaded from {path}")
    return run_config

# Global configuration instance
config = Config()
