import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from decoding import BeamConfig
from errors import UsageError
from ranker import RankerConfig
from training import TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "settings.yaml"
DEFAULT_SEED = 1234
SEED_ENV = "HRED_SEED"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AppSettings(_Section):
    name: str = "hred-suggest"
    version: str = "1.0.0"
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"

    @field_validator("log_level", mode="before")
    @classmethod
    def _upper_level(cls, value: Any) -> Any:
        return value.upper() if isinstance(value, str) else value


class ModelSettings(_Section):
    d_h: int = Field(default=32, ge=1)
    d_s: int = Field(default=48, ge=1)
    d_e: int = Field(default=24, ge=1)


class TrainSettings(TrainConfig):
    model_config = ConfigDict(extra="forbid")

    fit_on: str = Field(default="background", pattern="^(background|training)$")
    precision: str = Field(default="float32", pattern="^float(32|64)$")
    max_sessions: Optional[int] = Field(default=None, ge=1)

    def train_config(self, seed: int) -> TrainConfig:
        fields = self.model_dump(exclude={"fit_on", "precision", "max_sessions", "seed"})
        return TrainConfig(seed=seed, **fields)


class BeamSettings(BeamConfig):
    model_config = ConfigDict(extra="forbid")


class CorpusSettings(_Section):
    vocab_size: int = Field(default=5000, ge=3)
    session_gap_seconds: int = Field(default=1800, ge=1)
    cutoffs: List[int] = []


class BaselineSettings(_Section):
    qvmm_order: int = Field(default=3, ge=1)
    noisy_top_n: int = Field(default=100, ge=1)


class RankerSettings(RankerConfig):
    model_config = ConfigDict(extra="forbid")


class PathSettings(_Section):
    log: Optional[str] = None
    sessions: Optional[str] = None
    vocab: Optional[str] = None
    checkpoint: Optional[str] = None
    out: Optional[str] = None


class Settings(_Section):
    app: AppSettings = AppSettings()
    model: ModelSettings = ModelSettings()
    train: TrainSettings = TrainSettings()
    beam: BeamSettings = BeamSettings()
    corpus: CorpusSettings = CorpusSettings()
    baselines: BaselineSettings = BaselineSettings()
    ranker: RankerSettings = RankerSettings()
    paths: PathSettings = PathSettings()
    seed: Optional[int] = None


def _read_yaml(path: Path) -> Dict[str, Any]:
    try:
        with open(path, 'r') as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise UsageError(f"Configuration file {path} is not valid YAML: {e}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"Configuration file {path} must hold a mapping of sections")
    return data


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> Settings:
    """Default config/settings.yaml, then the user file, then command-line overrides."""
    data = _read_yaml(DEFAULT_CONFIG_PATH) if DEFAULT_CONFIG_PATH.is_file() else {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"Configuration file not found: {path}")
        data = _merge(data, _read_yaml(path))
    if overrides:
        data = _merge(data, overrides)

    try:
        return Settings.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise UsageError(f"Invalid configuration: {problems}")


def flatten(settings: Settings) -> Dict[str, str]:
    flat = {}
    for section, values in settings.model_dump().items():
        if isinstance(values, dict):
            for key, value in values.items():
                flat[f"{section}.{key}"] = str(value)
        else:
            flat[section] = str(values)
    return dict(sorted(flat.items()))


def resolve_seed(flag: Optional[int], settings: Settings, environ: Optional[Dict[str, str]] = None) -> int:
    environ = os.environ if environ is None else environ
    if flag is not None:
        return flag
    if environ.get(SEED_ENV):
        try:
            return int(environ[SEED_ENV])
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got '{environ[SEED_ENV]}'")
    if settings.seed is not None:
        return settings.seed
    return DEFAULT_SEED
