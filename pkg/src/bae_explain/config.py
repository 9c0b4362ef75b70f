"""Experiment configuration: an INI-style file with one section per stage.

Example::

    [experiment]
    name = synth-k4
    seed = 0

    [data]
    source = synth          ; or: file
    path =                  ; cube path when source = file
    train_frac = 0.20

    [synth]
    K = 4
    D = 32
    drifting = 0

    [model]
    M = 5
    capacities = 0.5, 1
    depths = 1, 2

    [training]
    epochs = 250
    lr = auto

    [evaluation]
    configurations = centralised, coalitional
    methods = mean-nll, var-nll
    policy = all-subsets    ; or: sizes, explicit
    sizes = 1

Every key has a default; the defaults follow the reference experiments
(ensemble of 5, prior scale 0.001, 250 epochs, 10%/5% trimming).
Per-cell seeds for the capacity x depth sweep are derived from the root
seed by hashing the cell coordinates (:func:`derive_seed`).
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .cube import CONFIGURATIONS, METHODS
from .pipeline import SynthConfig

POLICIES = ("all-subsets", "sizes", "explicit")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    # data
    source: str = "synth"
    path: str = ""
    format: str = ""
    fft: bool | None = None
    trim_head: float = 0.10
    trim_tail: float = 0.05
    train_frac: float = 0.20
    synth: SynthConfig = field(default_factory=SynthConfig)
    # model
    M: int = 5
    lam: float = 1e-3
    capacities: tuple[float, ...] = (1.0,)
    depths: tuple[int, ...] = (1,)
    # training
    epochs: int = 250
    lr: float | str = "auto"
    lr_min: float = 1e-5
    lr_max: float = 1e-1
    lr_steps: int = 100
    batch_size: int = 64
    full_batch_max: int = 512
    # evaluation
    configurations: tuple[str, ...] = CONFIGURATIONS
    methods: tuple[str, ...] = METHODS
    policy: str = "all-subsets"
    sizes: tuple[int, ...] = ()
    shift_sets: tuple[tuple[int, ...], ...] = ()
    alpha: float = 0.05
    w1: float = 0.5
    w2: float = 0.5
    ma_window: int = 0  # 0 = number of training cycles

    @property
    def use_fft(self) -> bool:
        # synthetic cubes are already spectra
        return self.fft if self.fft is not None else self.source == "file"

    def validate(self) -> "ExperimentConfig":
        problems = []
        if self.source not in ("synth", "file"):
            problems.append(f"data.source must be synth or file, got {self.source!r}")
        if self.source == "file" and not self.path:
            problems.append("data.path is required when source = file")
        if not 0.15 <= self.train_frac <= 0.25:
            problems.append(f"data.train_frac must lie in [0.15, 0.25], got {self.train_frac}")
        if not (0 <= self.trim_head < 1 and 0 <= self.trim_tail < 1):
            problems.append("trim fractions must lie in [0, 1)")
        if self.M < 1:
            problems.append("model.M must be at least 1")
        if self.lam < 0:
            problems.append("model.lambda must be non-negative")
        if self.epochs < 1:
            problems.append("training.epochs must be positive")
        if self.lr != "auto" and not (isinstance(self.lr, (int, float)) and self.lr > 0):
            problems.append(f"training.lr must be 'auto' or a positive number, got {self.lr!r}")
        if not 0 < self.lr_min < self.lr_max:
            problems.append("training.lr_min must be positive and below lr_max")
        if not self.capacities or any(c <= 0 for c in self.capacities):
            problems.append("model.capacities must be positive")
        if not self.depths or any(d not in (1, 2, 3) for d in self.depths):
            problems.append("model.depths must be drawn from 1, 2, 3")
        bad = [c for c in self.configurations if c not in CONFIGURATIONS]
        if bad or not self.configurations:
            problems.append(f"evaluation.configurations must be drawn from {CONFIGURATIONS}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            problems.append(f"evaluation.methods must be drawn from {METHODS}")
        if "var-nll" in self.methods and self.M < 2:
            problems.append("var-nll needs an ensemble (M >= 2)")
        if self.policy not in POLICIES:
            problems.append(f"evaluation.policy must be one of {POLICIES}")
        if self.policy == "sizes" and not self.sizes:
            problems.append("evaluation.sizes is required for policy = sizes")
        if self.policy == "explicit" and not self.shift_sets:
            problems.append("evaluation.shift_sets is required for policy = explicit")
        if self.w1 < 0 or self.w2 < 0 or abs(self.w1 + self.w2 - 1) > 1e-12:
            problems.append("SEQI weights must be non-negative and sum to 1")
        if not 0 < self.alpha < 1:
            problems.append("evaluation.alpha must lie in (0, 1)")
        if self.ma_window < 0:
            problems.append("evaluation.ma_window must be >= 0")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["synth"] = asdict(self.synth)
        return json.loads(json.dumps(d))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def derive_seed(*parts) -> int:
    """Stable 31-bit seed from arbitrary JSON-serialisable coordinates."""
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:4], "little") & 0x7FFFFFFF


# -- parsing -------------------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(";", ",").split(",") if t.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _sets(text: str) -> tuple[tuple[int, ...], ...]:
    # "0; 1, 2" -> ((0,), (1, 2))
    return tuple(_ints(part) for part in text.split(";") if part.strip())


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# (section, key) -> (field name, converter)
_KEYS = {
    ("experiment", "name"): ("name", str),
    ("experiment", "seed"): ("seed", int),
    ("data", "source"): ("source", str),
    ("data", "path"): ("path", str),
    ("data", "format"): ("format", str),
    ("data", "fft"): ("fft", _bool),
    ("data", "trim_head"): ("trim_head", float),
    ("data", "trim_tail"): ("trim_tail", float),
    ("data", "train_frac"): ("train_frac", float),
    ("model", "m"): ("M", int),
    ("model", "lambda"): ("lam", float),
    ("model", "capacities"): ("capacities", _floats),
    ("model", "depths"): ("depths", _ints),
    ("training", "epochs"): ("epochs", int),
    ("training", "lr"): ("lr", lambda t: "auto" if t.strip() == "auto" else float(t)),
    ("training", "lr_min"): ("lr_min", float),
    ("training", "lr_max"): ("lr_max", float),
    ("training", "lr_steps"): ("lr_steps", int),
    ("training", "batch_size"): ("batch_size", int),
    ("training", "full_batch_max"): ("full_batch_max", int),
    ("evaluation", "configurations"): ("configurations", _names),
    ("evaluation", "methods"): ("methods", _names),
    ("evaluation", "policy"): ("policy", str),
    ("evaluation", "sizes"): ("sizes", _ints),
    ("evaluation", "shift_sets"): ("shift_sets", _sets),
    ("evaluation", "alpha"): ("alpha", float),
    ("evaluation", "w1"): ("w1", float),
    ("evaluation", "w2"): ("w2", float),
    ("evaluation", "ma_window"): ("ma_window", int),
}

_SYNTH_KEYS = {
    "k": ("K", int),
    "d": ("D", int),
    "n_train": ("N_train", int),
    "n_test": ("N_test", int),
    "drifting": ("drifting", _ints),
    "profile": ("profile", str),
    "amplitude": ("amplitude", float),
    "noise": ("noise", float),
    "seed": ("seed", int),
}


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    values: dict = {}
    synth: dict = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if section == "synth":
                target = _SYNTH_KEYS.get(key)
                store = synth
            else:
                target = _KEYS.get((section, key))
                store = values
            if target is None:
                raise ConfigError(f"{source}: unknown key [{section}] {key}")
            name, conv = target
            if raw.strip() == "" and name in ("path", "format"):
                continue
            try:
                store[name] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key}: {exc}") from None
    if synth:
        values["synth"] = SynthConfig(**synth)
    return ExperimentConfig(**values).validate()


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    if "synth" in d:
        s = dict(d["synth"])
        s["drifting"] = tuple(s.get("drifting", ()))
        d["synth"] = SynthConfig(**s)
    names = {f.name for f in fields(ExperimentConfig)}
    for key in ("capacities", "depths", "configurations", "methods", "sizes"):
        if key in d:
            d[key] = tuple(d[key])
    if "shift_sets" in d:
        d["shift_sets"] = tuple(tuple(s) for s in d["shift_sets"])
    return ExperimentConfig(**{k: v for k, v in d.items() if k in names}).validate()
