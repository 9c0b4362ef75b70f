"""Data preparation: ingestion, trimming, spectra, splitting, scaling,
shift scenarios, attribution post-processing and a synthetic drift source."""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cube import AttributionMatrix, SensorCube

log = logging.getLogger(__name__)

CUBE_MAGIC = b"SCUB1"
ZERO_MEAN_EPS = 1e-12


class CubeFormatError(ValueError):
    pass


# -- ingestion -----------------------------------------------------------------

def read_csv_cube(path) -> SensorCube:
    """Parse a ``cycle,sensor,f0,...,f{D-1}`` file sorted by (cycle, sensor).

    Errors name the offending file line (the header is line 1).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CubeFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[:2] != ["cycle", "sensor"]:
            raise CubeFormatError(f"{path}: row 1: header must start with 'cycle,sensor'")
        n_feat = len(header) - 2
        if header[2:] != [f"f{d}" for d in range(n_feat)]:
            raise CubeFormatError(f"{path}: row 1: feature columns must be f0..f{n_feat - 1}")
        cycles: list[str] = []
        rows: dict[str, list[tuple[str, list[float]]]] = {}
        for line, cells in enumerate(reader, start=2):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header) or any(c.strip() == "" for c in cells):
                raise CubeFormatError(
                    f"{path}: row {line}: expected {len(header)} non-empty cells, got "
                    f"{sum(1 for c in cells if c.strip())}"
                )
            cycle, sensor = cells[0].strip(), cells[1].strip()
            try:
                values = [float(c) for c in cells[2:]]
            except ValueError as exc:
                raise CubeFormatError(f"{path}: row {line}: non-numeric cell ({exc})") from None
            if cycle not in rows:
                cycles.append(cycle)
                rows[cycle] = []
            elif cycles[-1] != cycle:
                raise CubeFormatError(f"{path}: row {line}: cycle {cycle} is not contiguous")
            rows[cycle].append((sensor, values))
    if not cycles:
        raise CubeFormatError(f"{path}: no data rows")
    sensors = [s for s, _ in rows[cycles[0]]]
    for c in cycles:
        got = [s for s, _ in rows[c]]
        if got != sensors:
            raise CubeFormatError(f"{path}: cycle {c} lists sensors {got}, expected {sensors}")
    data = np.array([[v for _, v in rows[c]] for c in cycles], dtype=np.float64)
    return SensorCube(data, tuple(sensors))


def write_csv_cube(cube: SensorCube, path) -> None:
    n, k, d = cube.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cycle", "sensor"] + [f"f{i}" for i in range(d)])
        for c in range(n):
            for s in range(k):
                w.writerow([c, cube.sensor_names[s]] + [repr(float(v)) for v in cube.data[c, s]])


def read_binary_cube(path) -> SensorCube:
    raw = Path(path).read_bytes()
    if not raw.startswith(CUBE_MAGIC):
        raise CubeFormatError(f"{path}: offset 0: missing SCUB1 magic")
    head = len(CUBE_MAGIC)
    if len(raw) < head + 24:
        raise CubeFormatError(f"{path}: offset {head}: truncated dimension header")
    n, k, d = struct.unpack_from("<3Q", raw, head)
    body = head + 24
    expected = body + 8 * n * k * d
    if len(raw) != expected:
        raise CubeFormatError(
            f"{path}: offset {min(len(raw), expected)}: dims {n}x{k}x{d} need {expected} bytes, file has {len(raw)}"
        )
    data = np.frombuffer(raw, dtype="<f8", offset=body).astype(np.float64).reshape(n, k, d)
    return SensorCube(data)


def write_binary_cube(cube: SensorCube, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<3Q", *cube.shape))
        fh.write(np.ascontiguousarray(cube.data, dtype="<f8").tobytes())


def ingest_cube(path, format: str | None = None) -> SensorCube:
    if format is None:
        format = "csv" if str(path).endswith(".csv") else "binary-cube"
    if format == "csv":
        return read_csv_cube(path)
    if format == "binary-cube":
        return read_binary_cube(path)
    raise ValueError(f"unknown cube format {format!r}")


# -- preprocessing ---------------------------------------------------------------

def _floor_frac(frac: float, n: int) -> int:
    # guard against 0.29 * 100 == 28.999999999999996
    return int(np.floor(frac * n + 1e-9))


def trim_cycles(cube: SensorCube, head_frac: float = 0.10, tail_frac: float = 0.05) -> SensorCube:
    n = cube.n_cycles
    head, tail = _floor_frac(head_frac, n), _floor_frac(tail_frac, n)
    if n - head - tail < 1:
        raise ValueError(f"trimming {head}+{tail} of {n} cycles leaves nothing")
    return cube.with_data(cube.data[head:n - tail])


def fft_magnitude(cube: SensorCube) -> SensorCube:
    """Amplitude spectrum bins 0..D/2-1 (DC kept) of each (cycle, sensor) row.

    Rows are zero-padded to the next power of two before the transform.
    """
    d = cube.n_features
    if d < 2:
        raise ValueError("need at least 2 samples per row")
    size = 1 << (d - 1).bit_length()
    spectrum = np.fft.fft(cube.data, n=size, axis=-1)
    return cube.with_data(np.abs(spectrum[..., : d // 2]))


def chronological_split(cube: SensorCube, train_frac: float = 0.20) -> tuple[SensorCube, SensorCube]:
    n_train = _floor_frac(train_frac, cube.n_cycles)
    if n_train < 1 or n_train >= cube.n_cycles:
        raise ValueError(f"train fraction {train_frac} of {cube.n_cycles} cycles gives an empty split")
    return cube.with_data(cube.data[:n_train]), cube.with_data(cube.data[n_train:])


@dataclass(frozen=True)
class ScalerState:
    low: np.ndarray
    high: np.ndarray


def fit_scale(train: SensorCube) -> ScalerState:
    return ScalerState(train.data.min(axis=0), train.data.max(axis=0))


def apply_scale(state: ScalerState, cube: SensorCube, clip: bool = True) -> SensorCube:
    """Min-max scale per (sensor, feature); constant features map to 0.5."""
    span = state.high - state.low
    flat = span == 0
    out = (cube.data - state.low) / np.where(flat, 1.0, span)
    out = np.where(flat, 0.5, out)
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return cube.with_data(out)


# -- shift scenarios ---------------------------------------------------------------

@dataclass
class ShiftScenario:
    shift_set: tuple[int, ...]
    noshift_set: tuple[int, ...]
    test_cube: SensorCube
    Y: np.ndarray

    @property
    def I(self) -> int:
        return len(self.shift_set)

    @property
    def J(self) -> int:
        return len(self.noshift_set)

    @property
    def key(self) -> str:
        return "shift-" + "-".join(str(k) for k in self.shift_set)


def degradation_proxy(n: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)


def build_scenario(train: SensorCube, test: SensorCube, shift_set, seed: int) -> ShiftScenario:
    """Keep real test rows for shifting sensors, bootstrap the rest from train.

    Each non-shifting sensor gets its own i.i.d. draw (with replacement) of
    whole training rows, as many as there are test cycles.
    """
    if train.n_cycles < 1:
        raise ValueError("empty training set")
    k = test.n_sensors
    shift = tuple(sorted(set(int(s) for s in shift_set)))
    if not shift or shift[0] < 0 or shift[-1] >= k:
        raise ValueError(f"shift set {shift_set} invalid for {k} sensors")
    noshift = tuple(s for s in range(k) if s not in shift)
    rng = np.random.default_rng(seed)
    data = test.data.copy()
    n_test = test.n_cycles
    for s in noshift:
        idx = rng.integers(0, train.n_cycles, size=n_test)
        data[:, s] = train.data[idx, s]
    return ShiftScenario(shift, noshift, test.with_data(data), degradation_proxy(n_test))


# -- attribution post-processing ------------------------------------------------------

def trailing_moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean along axis 0; the first rows average the available prefix."""
    if window < 1:
        raise ValueError("window must be at least 1")
    x = np.asarray(x, dtype=np.float64)
    csum = np.cumsum(x, axis=0)
    out = csum.copy()
    out[window:] = csum[window:] - csum[:-window]
    counts = np.minimum(np.arange(1, x.shape[0] + 1), window).astype(np.float64)
    return out / counts.reshape((-1,) + (1,) * (x.ndim - 1))


def postprocess(attr: AttributionMatrix, window: int, train_attr_mean) -> AttributionMatrix:
    """Smooth each sensor column, then divide by that sensor's training mean."""
    means = np.asarray(train_attr_mean, dtype=np.float64)
    if means.shape != (attr.scores.shape[1],):
        raise ValueError(f"need one training mean per sensor, got shape {means.shape}")
    zero = np.flatnonzero(means <= 0)
    if zero.size:
        log.warning("training attribution mean is zero for sensors %s", zero.tolist())
    divisor = np.where(means <= 0, ZERO_MEAN_EPS, means)
    smoothed = trailing_moving_average(attr.scores, window)
    return AttributionMatrix(
        smoothed / divisor, attr.method, attr.config, tuple(sorted(set(attr.flagged_sensors) | set(zero.tolist())))
    )


# -- synthetic drift -----------------------------------------------------------------

@dataclass
class SynthConfig:
    K: int = 4
    D: int = 32
    N_train: int = 60
    N_test: int = 240
    drifting: tuple[int, ...] = (0,)
    profile: str = "linear"
    amplitude: float = 1.0
    noise: float = 0.05
    seed: int = 0


def drift_profile(n: int, profile: str) -> np.ndarray:
    t = degradation_proxy(n)
    if profile == "linear":
        return t
    if profile == "quadratic":
        return t**2
    raise ValueError(f"unknown drift profile {profile!r}")


def synth_drift(cfg: SynthConfig) -> tuple[SensorCube, SensorCube, tuple[int, ...]]:
    """Stationary spectra plus noise; drifting sensors move along a fixed
    unit direction by ``amplitude * g(n)`` over the test cycles."""
    for name in ("K", "D", "N_train", "N_test"):
        if getattr(cfg, name) < 1:
            raise ValueError(f"{name} must be positive")
    if cfg.noise < 0 or cfg.amplitude < 0:
        raise ValueError("noise and amplitude must be non-negative")
    drifting = tuple(sorted(set(cfg.drifting)))
    if any(not 0 <= k < cfg.K for k in drifting):
        raise ValueError(f"drifting sensors {drifting} out of range for K={cfg.K}")
    rng = np.random.default_rng(cfg.seed)
    freqs = np.arange(cfg.D)
    base = np.empty((cfg.K, cfg.D))
    for k in range(cfg.K):
        # a decaying spectrum with a couple of resonance peaks per sensor
        peaks = rng.choice(cfg.D, size=2, replace=False)
        base[k] = 0.5 * np.exp(-freqs / (0.3 * cfg.D)) + 0.2
        for p in peaks:
            base[k] += 0.6 * np.exp(-0.5 * ((freqs - p) / 1.5) ** 2)
    directions = rng.normal(size=(cfg.K, cfg.D))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    train = base[None] + cfg.noise * rng.normal(size=(cfg.N_train, cfg.K, cfg.D))
    test = base[None] + cfg.noise * rng.normal(size=(cfg.N_test, cfg.K, cfg.D))
    g = drift_profile(cfg.N_test, cfg.profile)
    for k in drifting:
        test[:, k] += cfg.amplitude * g[:, None] * directions[k][None]
    names = tuple(f"s{k}" for k in range(cfg.K))
    return SensorCube(train, names), SensorCube(test, names), drifting
