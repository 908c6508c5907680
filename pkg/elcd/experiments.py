import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .datasets import (Dataset, PendulumConfig, RosenbrockConfig, Standardization, compose, gen_pendulum,
                       gen_rosenbrock, gen_toy_linear, load_csv, standardize, trim_initial)
from .errors import ConfigError, DatasetFormatError
from .trainer import ModelSpec, TrainConfig

DEFAULT_PRESETS = Path(__file__).resolve().parent.parent / "data" / "experiments.json"
GENERATORS = ("toy-linear", "pendulum", "rosenbrock", "csv")


@dataclass
class ExperimentPreset:
    name: str
    description: str
    generator: str
    config: Dict = field(default_factory=dict)
    standardize: bool = True
    trim: int = 5
    model: Dict = field(default_factory=dict)
    train: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ConfigError("generator", f"preset {self.name!r} names unknown generator {self.generator!r}")

    def generate(self, seed: int = 0, inputs: Sequence[str] = ()) -> Dataset:
        """Raw dataset for this preset; CSV presets read (and stack) the given files."""
        if self.generator == "toy-linear":
            return gen_toy_linear(**self.config)
        if self.generator == "pendulum":
            return gen_pendulum(PendulumConfig(**self.config), seed=seed)
        if self.generator == "rosenbrock":
            return gen_rosenbrock(RosenbrockConfig(**self.config), seed=seed)
        expected = self.config.get("inputs", 1)
        if len(inputs) != expected:
            raise ConfigError("inputs", f"preset {self.name!r} needs {expected} converted CSV file(s), got {len(inputs)}")
        datasets = [load_csv(path) for path in inputs]
        return datasets[0] if expected == 1 else compose(datasets)

    def prepare(self, dataset: Dataset, trim: Optional[int] = None,
                standardize_data: Optional[bool] = None) -> Tuple[Dataset, Optional[Standardization]]:
        """Trim the stationary head, then standardize if asked; returns the statistics used."""
        trim = self.trim if trim is None else trim
        if trim:
            dataset = trim_initial(dataset, trim)
        if standardize_data is None:
            standardize_data = self.standardize
        stats = None
        if standardize_data:
            dataset, stats = standardize(dataset)
        return dataset, stats

    def model_spec(self, dimension: int, kind: str = "elcd", **overrides) -> ModelSpec:
        return ModelSpec(**{**self.model, "kind": kind, "dimension": dimension, **overrides})

    def train_config(self, **overrides) -> TrainConfig:
        return TrainConfig(**{**self.train, **overrides})


class ExperimentRegistry:
    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else DEFAULT_PRESETS
        self.presets = self._load()

    def _load(self) -> Dict[str, ExperimentPreset]:
        try:
            with open(self.path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except FileNotFoundError:
            raise DatasetFormatError("experiment presets not found", path=str(self.path))
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"invalid preset file ({exc.msg})", line=exc.lineno, path=str(self.path))
        presets = {}
        for name, entry in raw.items():
            try:
                presets[name] = ExperimentPreset(name=name, **entry)
            except TypeError as exc:
                raise ConfigError(name, f"malformed preset ({exc})")
        return presets

    def names(self) -> List[str]:
        return list(self.presets)

    def get(self, name: str) -> ExperimentPreset:
        if name not in self.presets:
            raise ConfigError("preset", f"unknown preset {name!r} (choose from {', '.join(self.names())})")
        return self.presets[name]


# Plain CSV training without a named preset.
DEFAULT_PRESET = ExperimentPreset(name="default", description="converted trajectory CSV", generator="csv")
