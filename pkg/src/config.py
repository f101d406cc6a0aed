"""
Configuration Management
Application settings from the environment and experiment settings from config files
"""

import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import structlog
from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, Field, ValidationError

from errors import ConfigError
from evaluator import EvalConfig
from interactions import DataSchema
from objective import TrainConfig
from sine_model import ModelConfig
from synthworld import SynthConfig

# Load environment variables from project root
# This handles the case where the script is run from the src/ directory
project_root = Path(__file__).parent.parent
env_path = project_root / ".env"
load_dotenv(env_path)

# Also try loading from current directory as fallback
load_dotenv()

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
LOG_FORMATS = ("console", "json")
MODEL_PRESETS = ("sine", "sasrec", "sasrec-n")


class Config:
    """Application configuration"""

    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FORMAT: str = os.getenv("LOG_FORMAT", "console")

    # Directories
    RUNS_DIR: str = os.getenv("RUNS_DIR", "runs")
    DATA_DIR: str = os.getenv("DATA_DIR", "data")

    DEFAULT_SEED: str = os.getenv("DEFAULT_SEED", "2023")
    SWEEP_WORKERS: str = os.getenv("SWEEP_WORKERS", "1")

    @classmethod
    def validate(cls) -> bool:
        """
        Validate the environment settings

        Returns:
            True if configuration is valid

        Raises:
            ConfigError naming the offending variable
        """
        if cls.LOG_LEVEL.upper() not in LOG_LEVELS:
            raise ConfigError("LOG_LEVEL", f"expected one of {', '.join(LOG_LEVELS)}, got {cls.LOG_LEVEL!r}")
        if cls.LOG_FORMAT not in LOG_FORMATS:
            raise ConfigError("LOG_FORMAT", f"expected one of {', '.join(LOG_FORMATS)}, got {cls.LOG_FORMAT!r}")
        for name in ("DEFAULT_SEED", "SWEEP_WORKERS"):
            try:
                int(getattr(cls, name))
            except ValueError:
                raise ConfigError(name, f"expected an integer, got {getattr(cls, name)!r}") from None
        if cls.sweep_workers() < 1:
            raise ConfigError("SWEEP_WORKERS", "must be >= 1")
        return True

    @classmethod
    def default_seed(cls) -> int:
        return int(cls.DEFAULT_SEED)

    @classmethod
    def sweep_workers(cls) -> int:
        return int(cls.SWEEP_WORKERS)


# Create config instance
config = Config()


class DataConfig(BaseModel):
    columns: DataSchema = DataSchema()
    pos_ratio: float = Field(0.5, ge=0.0)
    neg_seconds: float = Field(3.0, ge=0.0)
    n_core: int = Field(10, ge=1)
    max_len: int = Field(50, ge=1)


class ExperimentConfig(BaseModel):
    """Every setting of one experiment, grouped by the stage that uses it"""

    data: DataConfig = DataConfig()
    synth: SynthConfig = SynthConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()


def _check_keys(tree: Dict[str, Any], model: type, prefix: str = ""):
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if key not in model.model_fields:
            raise ConfigError(path, "unknown setting")
        annotation = model.model_fields[key].annotation
        if isinstance(value, dict):
            if not (isinstance(annotation, type) and issubclass(annotation, BaseModel)):
                raise ConfigError(path, "is a value, not a section")
            _check_keys(value, annotation, path + ".")


def _assign(tree: Dict[str, Any], parts, value: str, source: str):
    node = tree
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(".".join(parts), f"conflicting keys in {source}")
        node = child
    node[parts[-1]] = value


def _merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def load_experiment_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """
    Build an ExperimentConfig from defaults, a config file and overrides

    The file uses dotenv syntax with ``SECTION__KEY=value`` lines (deeper
    sections add more ``__``). Overrides use dotted keys such as
    ``model.n_interests``. Overrides beat the file, the file beats defaults.

    Raises:
        ConfigError naming the unknown or invalid setting
    """
    tree: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError("--config", f"file not found: {path}")
        for key, value in dotenv_values(path).items():
            parts = key.lower().split("__")
            if len(parts) < 2 or not all(parts):
                raise ConfigError(key, "expected SECTION__KEY")
            if value is None:
                raise ConfigError(".".join(parts), "missing value")
            _assign(tree, parts, value, str(path))

    for dotted, value in (overrides or {}).items():
        parts = dotted.lower().split(".")
        if len(parts) < 2 or not all(parts):
            raise ConfigError(dotted, "expected section.key")
        _assign(tree, parts, value, "overrides")

    _check_keys(tree, ExperimentConfig)
    return _validated(tree)


def _validated(tree: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(tree)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "config"
        raise ConfigError(field, first["msg"]) from None


def apply_model_preset(experiment: ExperimentConfig, model: str, neg_mix: Optional[float] = None) -> ExperimentConfig:
    """
    Settings of a named model

    ``sasrec`` is a single-interest, positives-only encoder scored by a dot
    product; ``sasrec-n`` also mixes passive negatives into its O1 negatives
    (``neg_mix``, default 0.5). ``sine`` leaves the config as it is.
    """
    if model not in MODEL_PRESETS:
        raise ConfigError("model", f"expected one of {', '.join(MODEL_PRESETS)}, got {model!r}")
    tree = experiment.model_dump()
    if model in ("sasrec", "sasrec-n"):
        _merge(
            tree,
            {
                "model": {
                    "architecture": "sasrec",
                    "n_interests": 1,
                    "ablate_negative_feedback": True,
                    "beta1": 1.0,
                    "freeze_prototypes": True,
                },
                "train": {
                    "lambda1": tree["train"]["lambda1"] + tree["train"]["lambda2"],
                    "lambda2": 0.0,
                },
            },
        )
        if model == "sasrec-n":
            tree["train"]["neg_mix"] = 0.5 if neg_mix is None else neg_mix
    elif neg_mix is not None:
        tree["train"]["neg_mix"] = neg_mix
    return _validated(tree)


def setup_logging(level: Optional[str] = None, fmt: Optional[str] = None):
    """Configure stdlib logging and structlog for the application"""
    level_name = (level or config.LOG_LEVEL).upper()
    log_level = getattr(logging, level_name, logging.INFO)
    fmt = fmt or config.LOG_FORMAT

    logging.basicConfig(
        level=log_level,
        format="%(message)s",
    )

    renderer = structlog.processors.JSONRenderer() if fmt == "json" else structlog.dev.ConsoleRenderer(colors=False)
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="%Y-%m-%d %H:%M:%S"),
            structlog.processors.StackInfoRenderer(),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(log_level),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )
    return structlog.get_logger(__name__)


def setup_directories():
    """Create necessary directories if they don't exist"""
    directories = [
        config.RUNS_DIR,
        config.DATA_DIR,
    ]

    for directory in directories:
        os.makedirs(directory, exist_ok=True)
