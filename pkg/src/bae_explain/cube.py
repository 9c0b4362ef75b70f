"""Data carriers shared by the pipeline, the models and the metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONFIGURATIONS = ("centralised", "coalitional")
METHODS = ("mean-nll", "var-nll")


@dataclass
class SensorCube:
    """Readings laid out as (cycle N, sensor K, feature D)."""

    data: np.ndarray
    sensor_names: tuple[str, ...] | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"cube must be a non-empty 3-axis array, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("cube contains non-finite values")
        if self.sensor_names is None:
            self.sensor_names = tuple(f"s{k}" for k in range(self.data.shape[1]))
        self.sensor_names = tuple(str(s) for s in self.sensor_names)
        if len(self.sensor_names) != self.data.shape[1]:
            raise ValueError("one name per sensor required")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def n_cycles(self) -> int:
        return self.data.shape[0]

    @property
    def n_sensors(self) -> int:
        return self.data.shape[1]

    @property
    def n_features(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray) -> "SensorCube":
        return SensorCube(data, self.sensor_names)

    def sensor(self, k: int) -> "SensorCube":
        return SensorCube(self.data[:, k:k + 1, :], (self.sensor_names[k],))


def as_array(cube) -> np.ndarray:
    return cube.data if isinstance(cube, SensorCube) else np.asarray(cube, dtype=np.float64)


@dataclass
class AttributionMatrix:
    """Per-cycle, per-sensor attribution scores (N x K)."""

    scores: np.ndarray
    method: str
    config: str
    flagged_sensors: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ValueError(f"attribution scores must be N x K, got {self.scores.shape}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.config not in CONFIGURATIONS:
            raise ValueError(f"unknown configuration {self.config!r}")
