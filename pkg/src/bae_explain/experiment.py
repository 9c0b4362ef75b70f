"""End-to-end runs: prepare data, train each configuration once, then
evaluate every shift scenario and attribution method against it."""

from __future__ import annotations

import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .bae import AgentError, FittedModel, Hyperparams, attribute, fit_configuration
from .config import ExperimentConfig, derive_seed
from .cube import SensorCube
from .metrics import evaluate, group_curves
from .pipeline import (
    apply_scale,
    build_scenario,
    chronological_split,
    fft_magnitude,
    fit_scale,
    ingest_cube,
    postprocess,
    synth_drift,
    trim_cycles,
)

log = logging.getLogger(__name__)

RECORD_SCHEMA_VERSION = 1
VOLATILE_KEYS = ("timing",)


def sweep_combinations(K: int, policy: str = "all-subsets", sizes=(), explicit=()) -> list[tuple[int, ...]]:
    """Shift sets to evaluate, smallest first.

    ``all-subsets`` yields every non-empty proper subset; ``sizes`` yields
    all subsets of the listed sizes. Sets that would leave no non-shifting
    sensor are dropped, since the metrics are undefined for them.
    """
    if policy == "all-subsets":
        wanted = range(1, K)
    elif policy == "sizes":
        wanted = sorted(set(int(s) for s in sizes))
    elif policy == "explicit":
        out = [tuple(sorted(set(int(k) for k in s))) for s in explicit]
        for s in out:
            if not s or s[0] < 0 or s[-1] >= K:
                raise ValueError(f"shift set {s} invalid for {K} sensors")
        kept = [s for s in out if len(s) < K]
        if len(kept) < len(out):
            log.warning("dropped shift sets covering every sensor (metrics undefined)")
        return kept
    else:
        raise ValueError(f"unknown policy {policy!r}")
    combos = []
    for size in wanted:
        if size >= K:
            log.warning("skipping shift sets of size %d: no non-shifting sensor remains", size)
            continue
        if size < 1:
            continue
        combos.extend(itertools.combinations(range(K), size))
    return combos


@dataclass
class PreparedData:
    train: SensorCube
    test: SensorCube
    true_shift: tuple[int, ...] | None = None


def prepare_data(config: ExperimentConfig) -> PreparedData:
    """Load or synthesise, then trim -> spectra -> chronological split.

    Synthetic sources arrive already split, so trimming and splitting are
    skipped for them.
    """
    if config.source == "synth":
        train, test, drifting = synth_drift(config.synth)
        if config.use_fft:
            train, test = fft_magnitude(train), fft_magnitude(test)
        return PreparedData(train, test, drifting)
    cube = ingest_cube(config.path, config.format or None)
    cube = trim_cycles(cube, config.trim_head, config.trim_tail)
    if config.use_fft:
        cube = fft_magnitude(cube)
    train, test = chronological_split(cube, config.train_frac)
    return PreparedData(train, test)


@dataclass
class RunResult:
    records: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)


def _hyperparams(config: ExperimentConfig, capacity: float, depth: int, seed: int) -> Hyperparams:
    return Hyperparams(
        M=config.M,
        lam=config.lam,
        epochs=config.epochs,
        depth=depth,
        capacity=capacity,
        lr=config.lr,
        lr_span=(config.lr_min, config.lr_max),
        lr_steps=config.lr_steps,
        batch_size=config.batch_size,
        full_batch_max=config.full_batch_max,
        seed=seed,
    )


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> RunResult:
    config.validate()
    result = RunResult()
    data = prepare_data(config)
    scaler = fit_scale(data.train)
    train_s = apply_scale(scaler, data.train)
    K = data.train.n_sensors
    combos = sweep_combinations(K, config.policy, config.sizes, config.shift_sets)
    window = config.ma_window or data.train.n_cycles

    scenarios = []
    for shift in combos:
        seed = derive_seed("scenario", config.seed, shift)
        scen = build_scenario(data.train, data.test, shift, seed)
        scen.test_cube = apply_scale(scaler, scen.test_cube)
        scenarios.append((scen, seed))

    for capacity, depth in itertools.product(config.capacities, config.depths):
        cell_seed = derive_seed("cell", config.seed, capacity, depth)
        hp = _hyperparams(config, capacity, depth, cell_seed)
        cell = {"capacity": capacity, "depth": depth, "seed": cell_seed}
        for configuration in config.configurations:
            t0 = time.perf_counter()
            try:
                model = fit_configuration(configuration, train_s, hp, jobs)
            except Exception as exc:
                failure = {"configuration": configuration, "cell": cell, "stage": "train", "error": str(exc)}
                if isinstance(exc, AgentError):
                    failure["sensor"] = exc.sensor
                log.error("%s failed: %s", configuration, exc)
                result.failures.append(failure)
                continue
            train_seconds = time.perf_counter() - t0
            try:
                result.records.extend(
                    _evaluate_model(config, model, train_s, scenarios, window, cell, train_seconds)
                )
            except Exception as exc:
                log.error("%s evaluation failed: %s", configuration, exc)
                result.failures.append(
                    {"configuration": configuration, "cell": cell, "stage": "evaluate", "error": str(exc)}
                )
    return result


def _evaluate_model(config, model: FittedModel, train_s, scenarios, window, cell, train_seconds) -> list[dict]:
    train_nll = model.nll(train_s)
    train_means = {m: attribute(train_nll, m, model.config).scores.mean(axis=0) for m in config.methods}
    digest = model.digest()
    records = []
    for scen, scen_seed in scenarios:
        t0 = time.perf_counter()
        nll = model.nll(scen.test_cube)
        for method in config.methods:
            attr = postprocess(attribute(nll, method, model.config), window, train_means[method])
            report = evaluate(attr, scen.shift_set, scen.Y, config.alpha, config.w1, config.w2)
            shift_curve, noshift_curve = group_curves(attr.scores, scen.shift_set, scen.noshift_set)
            records.append(_clean({
                "schema_version": RECORD_SCHEMA_VERSION,
                "name": config.name,
                "config_digest": config.digest(),
                "seed": config.seed,
                "cell": cell,
                "configuration": model.config,
                "method": method,
                "scenario": {
                    "key": scen.key,
                    "shift_set": scen.shift_set,
                    "noshift_set": scen.noshift_set,
                    "seed": scen_seed,
                },
                "model_digest": digest,
                "lr": [e.lr for e in model.ensembles],
                "flagged_sensors": attr.flagged_sensors,
                "report": report.to_dict(),
                "curves": {
                    "shift_mean": shift_curve,
                    "noshift_mean": noshift_curve,
                    "per_sensor": attr.scores.T,
                },
                "timing": {
                    "train_seconds": train_seconds,
                    "eval_seconds": time.perf_counter() - t0,
                    "finished_at": datetime.now(timezone.utc).isoformat(),
                },
            }))
    return records


# -- persistence ---------------------------------------------------------------------

def record_label(record: dict) -> str:
    return f"{record['configuration']}/{record['method']}"


def record_filename(record: dict) -> str:
    cell = record["cell"]
    return (
        f"{record['name']}__c{cell['capacity']:g}-d{cell['depth']}__"
        f"{record['configuration']}__{record['method']}__{record['scenario']['key']}.json"
    )


def record_json(record: dict) -> str:
    return json.dumps(record, sort_keys=True, indent=1)


def stable_json(record: dict) -> str:
    """Serialisation with the wall-clock fields removed."""
    return json.dumps({k: v for k, v in record.items() if k not in VOLATILE_KEYS}, sort_keys=True)


def write_records(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    rec_dir = out / "records"
    rec_dir.mkdir(parents=True, exist_ok=True)
    for record in result.records:
        (rec_dir / record_filename(record)).write_text(record_json(record), encoding="utf-8")
    (out / "failures.json").write_text(json.dumps(result.failures, indent=1, sort_keys=True), encoding="utf-8")
    return rec_dir


def load_records(*dirs) -> list[dict]:
    records = []
    for d in dirs:
        d = Path(d)
        if (d / "records").is_dir():
            d = d / "records"
        for path in sorted(d.glob("*.json")):
            rec = json.loads(path.read_text(encoding="utf-8"))
            if rec.get("schema_version") != RECORD_SCHEMA_VERSION:
                raise ValueError(f"{path}: unsupported record schema {rec.get('schema_version')}")
            records.append(rec)
    records.sort(key=record_filename)
    return records
