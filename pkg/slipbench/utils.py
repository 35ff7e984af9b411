import csv
import hashlib
import json
import logging
import os
import sys
from enum import IntEnum
from pathlib import Path
from typing import Any, Iterable, Optional, Union

import colorlog
import numpy as np
import sentry_sdk
import toml
from pydantic import ValidationError

from slipbench.models import ConfigError, ExperimentConfig

PROFILES_DIR = Path(__file__).parent / "profiles"
TEMPLATES_DIR = Path(__file__).parent / "templates"

LOG_FORMAT = "%(yellow)s[%(asctime)s] %(log_color)s[%(levelname)s]%(reset)s %(message)s"


class Stream(IntEnum):
    """
    Independent random streams derived from the run seed
    """

    F_N = 1
    CONTACT = 2
    INJECTION = 3
    MEDIUM_NOISE = 4
    MICRO_SLIP = 5
    ELECTRODES = 6
    SPLIT = 7
    SUBSAMPLE = 8
    FOLDS = 9
    CONTROL = 10


def setup_logging(level: Optional[str] = None) -> logging.Logger:
    logger = logging.getLogger()
    level = (level or os.environ.get("SLIPBENCH_LOG_LEVEL", "INFO")).upper()
    logger.setLevel(level)
    if not any(getattr(h, "_slipbench", False) for h in logger.handlers):
        handler = logging.StreamHandler(sys.stdout)
        handler.setFormatter(colorlog.ColoredFormatter(LOG_FORMAT))
        handler._slipbench = True
        logger.addHandler(handler)
    for h in logger.handlers:
        h.setLevel(level)
    return logger


def get_poetry_version() -> str:
    v = "unknown"
    pyproject_toml_file = Path(__file__).parent.parent / "pyproject.toml"
    if pyproject_toml_file.exists() and pyproject_toml_file.is_file():
        data = toml.load(pyproject_toml_file)
        v = data.get("tool", {}).get("poetry", {}).get("version", v)
    return v


def get_jobs(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("SLIPBENCH_JOBS", default)))
    except ValueError:
        raise ConfigError(f"SLIPBENCH_JOBS must be an integer, got {os.environ['SLIPBENCH_JOBS']!r}")


def get_runs_dir() -> Path:
    return Path(os.environ.get("SLIPBENCH_RUNS_DIR", "runs"))


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Builds a generator that only depends on the run seed and the given keys,
    so results do not depend on evaluation order or worker count
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def _canonical(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, Path):
        return obj.as_posix()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def canonical_json(obj: Any) -> str:
    return json.dumps(_canonical(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config: ExperimentConfig) -> str:
    # output_dir does not change results
    data = config.model_dump(mode="json", exclude={"output_dir"})
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def resolve_profile(name_or_path: Union[str, Path]) -> Path:
    path = Path(name_or_path)
    if path.is_file():
        return path
    candidate = PROFILES_DIR / f"{name_or_path}.toml"
    if candidate.is_file():
        return candidate
    raise ConfigError(f"Unknown profile or config file: {name_or_path}")


def load_config(
    name_or_path: Union[str, Path], overrides: Optional[dict] = None
) -> ExperimentConfig:
    """
    Loads an experiment configuration from a TOML file or a bundled profile
    :param name_or_path: profile name (demo, full) or path to a TOML file
    :param overrides: top level keys replacing the file values
    :return: validated configuration
    """
    path = resolve_profile(name_or_path)
    try:
        data = toml.load(path)
    except toml.TomlDecodeError as e:
        raise ConfigError(f"Invalid TOML in {path}: {e}")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_dict(data)


def config_from_dict(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e.error_count()} error(s)\n{e}")


def write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(_canonical(data), f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path: Path) -> Any:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def format_float(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(round(float(value), 10))
    return str(value)


def write_csv(path: Path, header: list[str], rows: Iterable[Iterable[Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) for v in row])


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        return header, [row for row in reader]


def init_sentry() -> bool:
    if not os.environ.get("SENTRY_DSN"):
        return False
    sentry_sdk.init(
        dsn=os.environ.get("SENTRY_DSN"),
        environment=os.environ.get("ENVIRONMENT", "production"),
        traces_sample_rate=float(os.environ.get("SENTRY_TRACES_SAMPLE_RATE", 1)),
    )
    return True
