"""Anchored-ensemble Bayesian autoencoder and its sensor attributions.

Each of the M members is trained on

    (1/N) sum_n ||x_n - f(x_n)||^2 + (lambda/N) ||theta - theta_anchor||^2

where the anchor is a second Kaiming-uniform draw that stays fixed. At test
time the per-feature squared error of every member is kept, giving an
``(M, N, K, D)`` NLL cube; summing its ensemble mean (or population
variance) over features yields one attribution score per sensor and cycle.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cube import CONFIGURATIONS, METHODS, AttributionMatrix, SensorCube, as_array
from .nn import AdamState, Architecture, ParamSet, adam_step, backward, forward, kaiming_uniform_init

log = logging.getLogger(__name__)

AGENT_SEED_STRIDE = 10007
CHECKPOINT_MAGIC = b"BAECKPT\n"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class AgentError(RuntimeError):
    """Failure inside one coalition agent."""

    def __init__(self, sensor: int, cause: Exception):
        super().__init__(f"sensor {sensor}: {cause}")
        self.sensor = sensor
        self.cause = cause


@dataclass
class Hyperparams:
    M: int = 5
    lam: float = 1e-3
    epochs: int = 250
    depth: int = 1
    capacity: float = 1.0
    lr: float | str = "auto"
    lr_span: tuple[float, float] = (1e-5, 1e-1)
    lr_steps: int = 100
    batch_size: int = 64
    full_batch_max: int = 512
    seed: int = 0


@dataclass
class BaeEnsemble:
    arch: Architecture
    members: list[ParamSet]
    anchors: list[ParamSet]
    lam: float
    seed: int
    scope: str = "centralised"
    lr: float = 1e-3
    history: list[list[float]] = field(default_factory=list, repr=False)

    @property
    def M(self) -> int:
        return len(self.members)

    def predict(self, x) -> np.ndarray:
        """Reconstructions of every member, shape (M, N, K, D)."""
        x = as_array(x)
        return np.stack([self.arch.reconstruct(p, x) for p in self.members])

    def digest(self) -> str:
        h = hashlib.sha256()
        for p in self.members:
            h.update(p.flat.astype("<f8").tobytes())
        return h.hexdigest()


def member_seeds(seed: int, M: int) -> list[tuple[int, int]]:
    """(init seed, anchor seed) per member, derived from one root seed."""
    children = np.random.SeedSequence(seed).spawn(M)
    return [tuple(int(s) for s in c.generate_state(2)) for c in children]


def batches(n: int, batch_size: int, full_batch_max: int) -> list[slice]:
    if n <= full_batch_max:
        return [slice(0, n)]
    return [slice(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def anchored_loss(
    params: ParamSet, anchor: ParamSet, arch: Architecture, x: np.ndarray, lam: float, n_total: int | None = None
) -> tuple[float, ParamSet]:
    """Batch loss and its gradient.

    ``n_total`` is the full training-set size used to scale the anchor
    penalty; it defaults to the batch size.
    """
    n_total = x.shape[0] if n_total is None else n_total
    y, cache = forward(params, arch.specs, arch.pad(x))
    resid = y[:, :, : arch.length] - x
    diff = params.flat - anchor.flat
    loss = float(np.sum(resid**2)) / x.shape[0] + lam / n_total * float(diff @ diff)
    grads = backward(cache, arch.crop_grad(2.0 * resid / x.shape[0]))
    grads.flat += 2.0 * lam / n_total * diff
    return loss, grads


def _train_member(arch, x, lam, epochs, lr, init_seed, anchor_seed, batch_size, full_batch_max, tag):
    params = kaiming_uniform_init(arch.specs, init_seed)
    anchor = kaiming_uniform_init(arch.specs, anchor_seed)
    state = AdamState.fresh(params, lr)
    n = x.shape[0]
    history = []
    for epoch in range(epochs):
        total = 0.0
        for sl in batches(n, batch_size, full_batch_max):
            loss, grads = anchored_loss(params, anchor, arch, x[sl], lam, n)
            if not math.isfinite(loss):
                raise TrainingError(f"{tag}: non-finite loss at epoch {epoch}")
            params, state = adam_step(params, grads, state)
            total += loss * (sl.stop - sl.start)
        history.append(total / n)
    return params, anchor, history


def train_bae(
    train_cube,
    arch: Architecture,
    M: int = 5,
    lam: float = 1e-3,
    epochs: int = 250,
    seed: int = 0,
    lr: float = 1e-3,
    batch_size: int = 64,
    full_batch_max: int = 512,
    scope: str = "centralised",
    jobs: int = 1,
) -> BaeEnsemble:
    x = as_array(train_cube)
    if x.ndim != 3 or x.shape[0] == 0:
        raise ValueError("empty training set")
    if M < 1:
        raise ValueError("ensemble size must be at least 1")
    if x.min() < 0 or x.max() > 1:
        raise ValueError("training data must be scaled to [0, 1]")
    seeds = member_seeds(seed, M)
    args = [
        (arch, x, lam, epochs, lr, s_init, s_anc, batch_size, full_batch_max, f"{scope} member {m}")
        for m, (s_init, s_anc) in enumerate(seeds)
    ]
    results = _map(_train_member_args, args, jobs)
    return BaeEnsemble(
        arch=arch,
        members=[r[0] for r in results],
        anchors=[r[1] for r in results],
        lam=lam,
        seed=seed,
        scope=scope,
        lr=lr,
        history=[r[2] for r in results],
    )


def _train_member_args(args):
    return _train_member(*args)


def _map(fn, items, jobs):
    # executor.map keeps input order, so merging is deterministic
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


# -- learning-rate finder ------------------------------------------------------

@dataclass
class LrFinderResult:
    lr: float
    lrs: np.ndarray
    losses: np.ndarray
    diverged_at_start: bool = False


def select_lr(lrs: Sequence[float], losses: Sequence[float], lr_min: float, lr_max: float) -> float:
    """One decade below the loss-minimising rate, clamped to the span.

    ``argmin`` returns the first minimum, so ties go to the smaller rate.
    """
    best = int(np.argmin(np.asarray(losses)))
    return float(np.clip(lrs[best] / 10.0, lr_min, lr_max))


def find_lr(
    objective: Callable[[ParamSet, int], tuple[float, ParamSet]],
    params: ParamSet,
    span: tuple[float, float] = (1e-5, 1e-1),
    steps: int = 100,
    beta: float = 0.98,
    diverge_factor: float = 4.0,
) -> LrFinderResult:
    """Range test over a geometric learning-rate ramp.

    ``objective(params, step)`` returns (loss, grads) for the batch to use
    at that step. The smoothed loss is an exponential moving average with
    bias correction; the ramp stops once it exceeds ``diverge_factor`` times
    the best value seen.
    """
    lr_min, lr_max = span
    if not (0 < lr_min < lr_max):
        raise ValueError(f"need 0 < lr_min < lr_max, got {span}")
    ramp = np.geomspace(lr_min, lr_max, steps)
    state = AdamState.fresh(params, lr_min)
    avg, best = 0.0, math.inf
    lrs, smoothed = [], []
    for i, lr in enumerate(ramp):
        loss, grads = objective(params, i)
        if not math.isfinite(loss) or not np.all(np.isfinite(grads.flat)):
            break
        avg = beta * avg + (1 - beta) * loss
        value = avg / (1 - beta ** (i + 1))
        if i > 0 and value > diverge_factor * best:
            break
        best = min(best, value)
        lrs.append(lr)
        smoothed.append(value)
        state = AdamState(state.m, state.v, state.step, lr, state.beta1, state.beta2, state.eps)
        params, state = adam_step(params, grads, state)
    if len(lrs) <= 1:
        log.warning("loss diverged at the start of the learning-rate ramp; using lr_min")
        return LrFinderResult(lr_min, np.asarray(lrs), np.asarray(smoothed), True)
    return LrFinderResult(select_lr(lrs, smoothed, lr_min, lr_max), np.asarray(lrs), np.asarray(smoothed))


def lr_range_test(
    train_cube,
    arch: Architecture,
    span: tuple[float, float] = (1e-5, 1e-1),
    steps: int = 100,
    seed: int = 0,
    lam: float = 0.0,
    batch_size: int = 64,
    full_batch_max: int = 512,
) -> LrFinderResult:
    x = as_array(train_cube)
    init_seed, anchor_seed = member_seeds(seed, 1)[0]
    params = kaiming_uniform_init(arch.specs, init_seed)
    anchor = kaiming_uniform_init(arch.specs, anchor_seed)
    parts = batches(x.shape[0], batch_size, full_batch_max)

    def objective(p, step):
        return anchored_loss(p, anchor, arch, x[parts[step % len(parts)]], lam, x.shape[0])

    return find_lr(objective, params, span, steps)


# -- prediction and attribution --------------------------------------------------

def nll_cube(ensembles, test_cube) -> np.ndarray:
    """Per-member, per-feature squared reconstruction error, shape (M, N, K, D).

    ``ensembles`` is one centralised ensemble or a list with one
    single-sensor ensemble per sensor (concatenated along the sensor axis).
    """
    x = as_array(test_cube)
    if isinstance(ensembles, BaeEnsemble):
        ensembles = [ensembles]
    ensembles = list(ensembles)
    if len(ensembles) == 1 and ensembles[0].arch.in_channels == x.shape[1]:
        return (ensembles[0].predict(x) - x[None]) ** 2
    if len(ensembles) != x.shape[1]:
        raise ValueError(f"{len(ensembles)} per-sensor models for a {x.shape[1]}-sensor cube")
    if len({e.M for e in ensembles}) != 1:
        raise ValueError("per-sensor ensembles have different sizes")
    parts = [(e.predict(x[:, k:k + 1]) - x[None, :, k:k + 1]) ** 2 for k, e in enumerate(ensembles)]
    return np.concatenate(parts, axis=2)


def attribute(nll: np.ndarray, method: str, config: str = "centralised") -> AttributionMatrix:
    nll = np.asarray(nll, dtype=np.float64)
    if nll.ndim != 4:
        raise ValueError(f"NLL cube must be M x N x K x D, got {nll.shape}")
    if method == "mean-nll":
        scores = nll.mean(axis=0).sum(axis=-1)
    elif method == "var-nll":
        if nll.shape[0] < 2:
            raise ValueError("epistemic variance requires an ensemble")
        scores = nll.var(axis=0).sum(axis=-1)
    else:
        raise ValueError(f"unknown method {method!r}")
    return AttributionMatrix(scores, method, config)


# -- configurations --------------------------------------------------------------

@dataclass
class FittedModel:
    """A trained configuration: one ensemble, or one ensemble per sensor."""

    config: str
    ensembles: list[BaeEnsemble]

    def nll(self, cube) -> np.ndarray:
        return nll_cube(self.ensembles, cube)

    def digest(self) -> str:
        h = hashlib.sha256(self.config.encode())
        for e in self.ensembles:
            h.update(e.digest().encode())
        return h.hexdigest()


def _fit_scope(x, hp: Hyperparams, seed: int, scope: str, jobs: int) -> BaeEnsemble:
    arch = Architecture(x.shape[1], x.shape[2], hp.depth, hp.capacity)
    lr = hp.lr
    if lr == "auto":
        lr = lr_range_test(
            x, arch, tuple(hp.lr_span), hp.lr_steps, seed, hp.lam, hp.batch_size, hp.full_batch_max
        ).lr
    return train_bae(
        x, arch, hp.M, hp.lam, hp.epochs, seed, float(lr), hp.batch_size, hp.full_batch_max, scope, jobs
    )


def _fit_agent(args):
    k, x, hp, seed = args
    try:
        return _fit_scope(x, hp, seed, f"sensor({k})", 1)
    except Exception as exc:  # re-raised with the sensor index attached
        raise AgentError(k, exc) from exc


def agent_seed(seed: int, k: int) -> int:
    return seed + k * AGENT_SEED_STRIDE


def fit_configuration(config: str, train_cube, hp: Hyperparams, jobs: int = 1) -> FittedModel:
    x = as_array(train_cube)
    if config == "centralised":
        return FittedModel(config, [_fit_scope(x, hp, hp.seed, "centralised", jobs)])
    if config == "coalitional":
        args = [(k, x[:, k:k + 1], hp, agent_seed(hp.seed, k)) for k in range(x.shape[1])]
        return FittedModel(config, _map(_fit_agent, args, jobs))
    raise ValueError(f"unknown configuration {config!r}")


def run_configuration(
    config: str, train_cube, test_cube, hp: Hyperparams, methods=METHODS, jobs: int = 1
) -> dict[str, AttributionMatrix]:
    """Train one configuration and attribute the test cube with each method."""
    if as_array(train_cube).shape[1] < 1:
        raise ValueError("need at least one sensor")
    model = fit_configuration(config, train_cube, hp, jobs)
    nll = model.nll(test_cube)
    return {m: attribute(nll, m, config) for m in methods}


# -- checkpoints -------------------------------------------------------------------

def spec_digest(arch: Architecture) -> str:
    payload = json.dumps([s.to_dict() for s in arch.specs], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def save_checkpoint(ensemble: BaeEnsemble, path) -> None:
    header = {
        "format_version": CHECKPOINT_VERSION,
        "scope": ensemble.scope,
        "M": ensemble.M,
        "lambda": ensemble.lam,
        "spec_digest": spec_digest(ensemble.arch),
        "seed": ensemble.seed,
        "lr": ensemble.lr,
        "architecture": ensemble.arch.to_dict(),
        "param_count": ensemble.members[0].total_count,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p, a in zip(ensemble.members, ensemble.anchors):
            fh.write(p.flat.astype("<f8").tobytes())
            fh.write(a.flat.astype("<f8").tobytes())


def load_checkpoint(path) -> BaeEnsemble:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a BAE checkpoint")
    offset = len(CHECKPOINT_MAGIC)
    (size,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    header = json.loads(raw[offset:offset + size])
    offset += size
    if header["format_version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['format_version']}")
    arch = Architecture(**header["architecture"])
    if spec_digest(arch) != header["spec_digest"]:
        raise ValueError("layer list does not match the stored digest")
    n = header["param_count"]
    expected = offset + 2 * header["M"] * n * 8
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=offset).astype(np.float64)
    blocks = values.reshape(header["M"], 2, n)
    return BaeEnsemble(
        arch=arch,
        members=[ParamSet(arch.specs, b[0].copy()) for b in blocks],
        anchors=[ParamSet(arch.specs, b[1].copy()) for b in blocks],
        lam=header["lambda"],
        seed=header["seed"],
        scope=header["scope"],
        lr=header["lr"],
    )
