"""Compound-generator training, fine-tuning, evaluation metrics and stress runs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LongMemError, NonFiniteGradient, TrainingDiverged
from .estimators import get_method, whittle_estimate_batch
from .fgn import sample_fgn_mixed
from .nn import AdamWState, CnnModel, Topology, adamw_step
from .processes import (
    FouParams,
    fou_substeps,
    sample_ar1,
    sample_arfima,
    sample_fou,
    sample_stable_levy,
)
from .rng import as_rng, make_rng

log = logging.getLogger(__name__)

EPSILON = 0.025
MAX_RETRIES = 3
FINETUNE_STAGE = 1000


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Uniform:
    a: float = 0.0
    b: float = 1.0

    def sample(self, rng, size):
        return rng.uniform(self.a, self.b, size)


@dataclass(frozen=True)
class Exponential:
    mean: float = 1.0

    def sample(self, rng, size):
        return rng.exponential(self.mean, size)


@dataclass(frozen=True)
class Normal:
    mu: float = 0.0
    var: float = 1.0

    def sample(self, rng, size):
        return rng.normal(self.mu, math.sqrt(self.var), size)


@dataclass(frozen=True)
class PointMass:
    value: float = 0.0

    def sample(self, rng, size):
        return np.full(size, float(self.value))


_DISTS = {"uniform": Uniform, "exponential": Exponential, "normal": Normal, "pointmass": PointMass}

REQUIRED = {
    "fbm": ("H",),
    "arfima": ("d",),
    "fou": ("H", "alpha", "eta", "mu", "sigma"),
}
TARGET = {"fbm": "H", "arfima": "d", "fou": "H"}
# native sample representation of each process
NATIVE = {"fbm": "increments", "arfima": "increments", "fou": "path"}


def parse_dist(desc):
    """Descriptor from a dict like ``{"kind": "uniform", "a": 0, "b": 1}`` (or a distribution)."""
    if isinstance(desc, tuple(_DISTS.values())):
        return desc
    if isinstance(desc, (int, float)):
        return PointMass(float(desc))
    if not isinstance(desc, dict) or "kind" not in desc:
        raise ConfigError(f"unsupported distribution descriptor {desc!r}")
    kw = {k: v for k, v in desc.items() if k != "kind"}
    try:
        return _DISTS[str(desc["kind"]).lower()](**kw)
    except KeyError:
        raise ConfigError(f"unsupported distribution kind {desc['kind']!r}") from None
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {desc['kind']}: {exc}") from None


def dist_to_json(d) -> dict:
    kind = {v: k for k, v in _DISTS.items()}[type(d)]
    return {"kind": kind, **d.__dict__}


@dataclass(frozen=True)
class PriorSpec:
    process: str
    params: dict

    def __post_init__(self):
        if self.process not in REQUIRED:
            raise ConfigError(f"unknown process {self.process!r}")
        parsed = {k: parse_dist(v) for k, v in dict(self.params).items()}
        need = set(REQUIRED[self.process])
        if set(parsed) != need:
            raise ConfigError(
                f"{self.process} prior needs exactly {sorted(need)}, got {sorted(parsed)}"
            )
        object.__setattr__(self, "params", parsed)

    @property
    def target(self) -> str:
        return TARGET[self.process]

    def to_json(self) -> dict:
        return {"process": self.process,
                "params": {k: dist_to_json(v) for k, v in self.params.items()}}

    @classmethod
    def from_json(cls, obj: dict) -> PriorSpec:
        try:
            return cls(obj["process"], obj["params"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad prior spec: {exc}") from None


def default_prior(process: str) -> PriorSpec:
    if process == "fbm":
        return PriorSpec("fbm", {"H": Uniform(0.0, 1.0)})
    if process == "arfima":
        return PriorSpec("arfima", {"d": Uniform(-0.5, 0.5)})
    if process == "fou":
        return PriorSpec("fou", {"H": Uniform(0.0, 1.0), "alpha": Exponential(100.0),
                                 "eta": Normal(0.0, 1.0), "mu": PointMass(0.0),
                                 "sigma": PointMass(1.0)})
    raise ConfigError(f"unknown process {process!r}")


def sample_prior(spec: PriorSpec, rng, size: int | None = None) -> dict:
    """One draw per descriptor (arrays of ``size`` draws when given)."""
    rng = as_rng(rng)
    out = {}
    for name in REQUIRED[spec.process]:
        dist = spec.params[name]
        if not hasattr(dist, "sample"):
            raise ConfigError(f"unsupported descriptor for {name}")
        v = dist.sample(rng, 1 if size is None else size)
        out[name] = float(v[0]) if size is None else v
    return out


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

_TINY = 1e-9


def _open_unit(h):
    return np.clip(h, _TINY, 1.0 - _TINY)


def generate(spec: PriorSpec, n: int, count: int, rng):
    """``count`` labelled samples in the process's native representation.

    Returns ``(X, params)``; X is count x n (fBm increments, ARFIMA series)
    or count x (n + 1) (fOU path on [0, 1] with dt = 1/n).
    """
    rng = as_rng(rng)
    params = sample_prior(spec, rng, count)
    if spec.process == "fbm":
        params["H"] = _open_unit(params["H"])
        X = sample_fgn_mixed(n, params["H"], rng) if count else np.empty((0, n))
    elif spec.process == "arfima":
        params["d"] = np.clip(params["d"], -0.5 + _TINY, 0.5 - _TINY)
        X = np.empty((count, n))
        for i in range(count):
            X[i] = sample_arfima(n, params["d"][i], rng).values
    else:
        params["H"] = _open_unit(params["H"])
        params["alpha"] = np.abs(params["alpha"])
        dt = 1.0 / n
        X = np.empty((count, n + 1))
        for i in range(count):
            p = FouParams(eta=params["eta"][i], hurst=params["H"][i], alpha=params["alpha"][i],
                          mu=params["mu"][i], sigma=params["sigma"][i], dt=dt)
            X[i] = sample_fou(p, n, rng, substeps=fou_substeps(p.alpha, dt)).values
    return X, params


def convert(X: np.ndarray, have: str, want: str) -> np.ndarray:
    """Switch a batch between ``increments`` and ``path`` representations."""
    if have == want or want == "series" and have == "increments":
        return X
    if want == "path":
        return np.concatenate([np.zeros((X.shape[0], 1)), np.cumsum(X, axis=1)], axis=1)
    return np.diff(X, axis=1)


def make_batch(spec: PriorSpec, n: int, B: int, rng):
    """``(inputs, targets)``: fBm gives increments, ARFIMA and fOU their raw series."""
    X, params = generate(spec, n, B, rng)
    return X, np.asarray(params[spec.target], dtype=np.float64)


def default_topology(process: str, **kw) -> Topology:
    """fBm models difference a path; ARFIMA and fOU models read the raw series."""
    if process == "fbm":
        base = dict(use_diff=True, consumes="path", target="H")
    elif process == "arfima":
        base = dict(use_diff=False, consumes="increments", target="d")
    elif process == "fou":
        base = dict(use_diff=False, consumes="path", target="H")
    else:
        raise ConfigError(f"unknown process {process!r}")
    base.update(kw)
    return Topology(**base)


def model_inputs(model: CnnModel, X: np.ndarray, have: str) -> np.ndarray:
    return convert(X, have, model.topology.consumes)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    prior: PriorSpec
    seq_len: int = 100
    batch_size: int = 32
    virtual_epochs: int = 1
    seqs_per_epoch: int = 100_000
    lr: float = 1e-4
    weight_decay: float = 0.01
    finetune_schedule: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.seqs_per_epoch < 1 or self.virtual_epochs < 0:
            raise ConfigError("epochs must be >= 0 and seqs_per_epoch >= 1")
        self.finetune_schedule = [(int(a), int(b)) for a, b in self.finetune_schedule]
        lengths = [self.seq_len] + [n for n, _ in self.finetune_schedule]
        if any(b <= a for a, b in zip(lengths, lengths[1:])):
            raise ConfigError("fine-tune lengths must be strictly increasing")

    def to_json(self) -> dict:
        return {"prior": self.prior.to_json(), "seq_len": self.seq_len,
                "batch_size": self.batch_size, "virtual_epochs": self.virtual_epochs,
                "seqs_per_epoch": self.seqs_per_epoch, "lr": self.lr,
                "weight_decay": self.weight_decay,
                "finetune_schedule": [list(s) for s in self.finetune_schedule],
                "seed": self.seed}

    @classmethod
    def from_json(cls, obj: dict) -> TrainConfig:
        obj = dict(obj)
        try:
            obj["prior"] = PriorSpec.from_json(obj["prior"])
            return cls(**obj)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad training config: {exc}") from None


@dataclass
class TrainResult:
    model: CnnModel
    state: AdamWState
    trace: list  # (epoch, n, mean_mse)
    drawn: int = 0


class Trainer:
    """Streams fresh batches into AdamW; every batch comes from its own RNG stream."""

    def __init__(self, model: CnnModel, state: AdamWState, spec: PriorSpec, seed: int = 0,
                 batch_size: int = 32, seqs_per_epoch: int = 100_000):
        self.model, self.state, self.spec = model, state, spec
        self.seed, self.batch_size, self.seqs_per_epoch = seed, batch_size, seqs_per_epoch
        self.trace: list = []
        self.drawn = 0
        self.stage = 0

    def _batch(self, n: int, step: int, attempt: int):
        rng = make_rng(self.seed, self.stage, step, attempt)
        X, y = make_batch(self.spec, n, self.batch_size, rng)
        self.drawn += X.shape[0]
        return model_inputs(self.model, X, NATIVE[self.spec.process]), y

    def run(self, n: int, epochs: int, callback=None) -> None:
        steps = math.ceil(self.seqs_per_epoch / self.batch_size)
        step = 0
        for _ in range(epochs):
            losses = []
            for _ in range(steps):
                for attempt in range(MAX_RETRIES + 1):
                    X, y = self._batch(n, step, attempt)
                    loss, grad = self.model.loss_and_grad(X, y)
                    try:
                        if not math.isfinite(loss):
                            raise NonFiniteGradient("non-finite loss")
                        adamw_step(self.model, grad, self.state)
                        break
                    except NonFiniteGradient:
                        log.warning("non-finite gradient at n=%d step %d (attempt %d)", n, step, attempt)
                else:
                    raise TrainingDiverged(
                        f"{MAX_RETRIES} consecutive retries failed at n={n}", self.trace
                    )
                losses.append(loss)
                step += 1
            self.trace.append((len(self.trace) + 1, n, float(np.mean(losses))))
            if callback is not None:
                callback(self.trace[-1])
        self.stage += 1


def train(config: TrainConfig, model: CnnModel | None = None, callback=None) -> TrainResult:
    """Initial phase at ``seq_len`` followed by the fine-tune schedule."""
    if model is None:
        model = CnnModel.init(default_topology(config.prior.process), make_rng(config.seed, 999))
    state = AdamWState.zeros(model.params.size, lr=config.lr, weight_decay=config.weight_decay)
    tr = Trainer(model, state, config.prior, config.seed, config.batch_size, config.seqs_per_epoch)
    tr.run(config.seq_len, config.virtual_epochs, callback)
    tr.stage = FINETUNE_STAGE  # same streams as a separate finetune() call
    for n, epochs in config.finetune_schedule:
        tr.run(n, epochs, callback)
    return TrainResult(model, state, tr.trace, tr.drawn)


def finetune(model: CnnModel, state: AdamWState, schedule, spec: PriorSpec, seed: int = 0,
             batch_size: int = 32, seqs_per_epoch: int = 100_000, callback=None) -> TrainResult:
    """Continue training at each ``(length, epochs)`` in turn, keeping optimizer state."""
    lengths = [int(n) for n, _ in schedule]
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ConfigError("fine-tune lengths must be strictly increasing")
    tr = Trainer(model, state, spec, seed, batch_size, seqs_per_epoch)
    tr.stage = FINETUNE_STAGE  # keep streams disjoint from the initial phase
    for n, epochs in schedule:
        tr.run(int(n), int(epochs), callback)
    return TrainResult(model, state, tr.trace, tr.drawn)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricBundle:
    mse: float
    epsilon: float
    count: int
    bias_curve: list  # [x, b_eps(x)] pairs; None where a window is empty
    sigma_curve: list
    b_hat: float
    sigma_hat: float
    errors_excluded: int = 0

    def to_json(self) -> dict:
        return {"mse": self.mse, "epsilon": self.epsilon, "count": self.count,
                "bias_curve": self.bias_curve, "sigma_curve": self.sigma_curve,
                "b_hat": self.b_hat, "sigma_hat": self.sigma_hat,
                "errors_excluded": self.errors_excluded}

    @classmethod
    def from_json(cls, obj: dict) -> MetricBundle:
        return cls(**{k: obj[k] for k in cls.__dataclass_fields__})


def aggregate(curve, epsilon: float) -> float:
    """``eps * sum |c(x)|`` over the non-empty grid points of a curve."""
    return float(epsilon * sum(abs(v) for _, v in curve if v is not None))


def metric_bundle(estimates, truths, epsilon: float = EPSILON, offset: float = 0.0,
                  errors: int = 0) -> MetricBundle:
    """MSE and sliding-window bias/deviation curves of ``estimates - truths``.

    ``offset`` maps the truth onto the unit grid (0.5 for ARFIMA d); reported
    grid points are mapped back. Curves are computed on the residuals so a
    perfect estimator scores zero even in the half windows at the edges.
    """
    est = np.asarray(estimates, dtype=np.float64)
    tru = np.asarray(truths, dtype=np.float64)
    resid = est - tru
    u = tru + offset
    J = int(math.floor(1.0 / epsilon + 1e-9))
    bias, sigma = [], []
    for j in range(J + 1):
        x = epsilon * j
        r = resid[np.abs(u - x) <= epsilon + 1e-12]
        xs = float(x - offset)
        bias.append([xs, float(r.mean()) if r.size else None])
        sigma.append([xs, float(r.std(ddof=1)) if r.size > 1 else None])
    return MetricBundle(
        mse=float(np.mean(resid * resid)) if resid.size else float("nan"),
        epsilon=float(epsilon),
        count=int(est.size + errors),
        bias_curve=bias,
        sigma_curve=sigma,
        b_hat=aggregate(bias, epsilon),
        sigma_hat=aggregate(sigma, epsilon),
        errors_excluded=int(errors),
    )


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _classical_batch(name: str, X: np.ndarray, have: str):
    info = get_method(name)
    data = convert(X, have, info.consumes)
    if name in ("whittle-fgn", "whittle-arfima"):
        family = "fgn" if name == "whittle-fgn" else "arfima"
        try:
            return np.array([e.value for e in whittle_estimate_batch(data, family)]), np.ones(len(X), bool)
        except LongMemError:
            pass  # fall back to per-row so one bad row does not sink the chunk
    out = np.full(len(X), np.nan)
    ok = np.zeros(len(X), bool)
    for i, row in enumerate(data):
        try:
            out[i] = info.fn(row).value
            ok[i] = True
        except (LongMemError, ValueError, ArithmeticError):
            pass
    return out, ok


def predict(estimator, X: np.ndarray, have: str):
    """Apply a method name, CnnModel, or callable to a batch; returns (values, ok mask)."""
    if isinstance(estimator, CnnModel):
        return estimator.predict(model_inputs(estimator, X, have)), np.ones(len(X), bool)
    if isinstance(estimator, str):
        return _classical_batch(estimator, X, have)
    out = np.full(len(X), np.nan)
    ok = np.zeros(len(X), bool)
    for i, row in enumerate(X):
        try:
            v = estimator(row)
            out[i] = getattr(v, "value", v)
            ok[i] = True
        except (LongMemError, ValueError, ArithmeticError):
            pass
    return out, ok


def evaluate(estimator, spec: PriorSpec, n: int, count: int = 10_000, epsilon: float = EPSILON,
             seed: int = 0, chunk: int = 500, truth_fn=None) -> MetricBundle:
    """Fresh labelled paths -> estimates -> MetricBundle.

    ``truth_fn`` (optional) receives the raw parameter dict and returns the
    values to compare against; the default is the process target.
    """
    if count < 100:
        raise ConfigError("evaluation needs count >= 100")
    have = NATIVE[spec.process]
    ests, truths, failed = [], [], []
    for c, start in enumerate(range(0, count, chunk)):
        m = min(chunk, count - start)
        X, params = generate(spec, n, m, make_rng(seed, 7, c))
        truth = params[spec.target] if truth_fn is None else truth_fn(params)
        est, ok = predict(estimator, X, have)
        ests.append(est[ok])
        truths.append(np.asarray(truth)[ok])
        failed.extend(np.asarray(truth)[~ok].tolist())
    if failed:
        log.warning("%d estimator failures excluded (truth values: %s)", len(failed), failed[:20])
        if len(failed) > 0.01 * count:
            log.warning("estimator failed on more than 1%% of inputs")
    offset = 0.5 if spec.target == "d" else 0.0
    return metric_bundle(np.concatenate(ests), np.concatenate(truths), epsilon, offset, len(failed))


# ---------------------------------------------------------------------------
# stress scenarios
# ---------------------------------------------------------------------------

SCENARIOS = ("cross-arfima", "cross-fbm", "ou-alpha-sweep", "noise-sweep", "smooth-sweep",
             "ar1-sweep", "levy-sweep", "fbm-sum", "lambda-sweep")


@dataclass
class StressResult:
    scenario: str
    knob: np.ndarray
    estimate: np.ndarray
    truth: np.ndarray  # NaN where the scenario has no ground truth

    def to_csv(self) -> str:
        lines = ["knob,estimate"]
        lines += [f"{k!r},{e!r}" for k, e in zip(self.knob.tolist(), self.estimate.tolist())]
        return "\n".join(lines) + "\n"

    def mse(self, mask=None) -> float:
        r = self.estimate - self.truth
        if mask is not None:
            r = r[mask]
        return float(np.mean(r * r))


def _knobs(default, count, knobs, rng):
    if knobs is None:
        return default(rng, count)
    knobs = np.asarray(knobs, dtype=np.float64).reshape(-1)
    return np.resize(knobs, count)


def _scenario_data(scenario: str, n: int, count: int, rng, knobs, hurst1: float):
    """(X, representation, knob, truth) for one scenario."""
    nan = np.full(count, np.nan)
    if scenario == "cross-arfima":
        k = _knobs(lambda r, c: r.uniform(-0.5, 0.5, c), count, knobs, rng)
        X = np.stack([sample_arfima(n, float(np.clip(d, -0.5 + _TINY, 0.5 - _TINY)), rng).values for d in k])
        return X, "increments", k, k + 0.5
    if scenario == "cross-fbm":
        k = _open_unit(_knobs(lambda r, c: r.uniform(0, 1, c), count, knobs, rng))
        return sample_fgn_mixed(n, k, rng), "increments", k, k
    if scenario == "ou-alpha-sweep":
        k = _knobs(lambda r, c: r.uniform(0, 200, c), count, knobs, rng)
        dt = 1.0 / n
        X = np.stack([
            sample_fou(FouParams(0.0, 0.5, a, 0.0, 1.0, dt), n, rng, substeps=fou_substeps(a, dt)).values
            for a in k
        ])
        return X, "path", k, nan
    if scenario in ("noise-sweep", "smooth-sweep", "lambda-sweep"):
        H = _open_unit(rng.uniform(0, 1, count))
        if scenario == "noise-sweep":
            k = _knobs(lambda r, c: r.uniform(0, 2, c), count, knobs, rng)
            X = convert(sample_fgn_mixed(n, H, rng), "increments", "path")
            X = X + k[:, None] * rng.standard_normal(X.shape)
            return X, "path", k, H
        if scenario == "smooth-sweep":
            k = np.rint(_knobs(lambda r, c: r.integers(1, 33, c), count, knobs, rng)).astype(int)
            X = np.empty((count, n + 1))
            for i in range(count):
                w = int(k[i])
                path = convert(sample_fgn_mixed(n + w - 1, H[i:i + 1], rng), "increments", "path")[0]
                X[i] = np.convolve(path, np.full(w, 1.0 / w), mode="valid")
            return X, "path", k.astype(float), H
        k = _knobs(lambda r, c: 10.0 ** r.uniform(-2, 2, c), count, knobs, rng)
        return k[:, None] * sample_fgn_mixed(n, H, rng), "increments", k, H
    if scenario == "ar1-sweep":
        k = _knobs(lambda r, c: r.uniform(-1, 1, c), count, knobs, rng)
        X = np.stack([sample_ar1(n + 1, a, rng).values for a in k])
        return X, "path", k, nan
    if scenario == "levy-sweep":
        k = _knobs(lambda r, c: r.uniform(0.2, 2.0, c), count, knobs, rng)
        X = np.stack([sample_stable_levy(n, a, rng).values for a in k])
        return X, "path", k, nan
    if scenario == "fbm-sum":
        k = _open_unit(_knobs(lambda r, c: r.uniform(0, 1, c), count, knobs, rng))
        a = convert(sample_fgn_mixed(n, np.full(count, hurst1), rng), "increments", "path")
        b = convert(sample_fgn_mixed(n, k, rng), "increments", "path")
        return a + b, "path", k, nan
    raise ConfigError(f"unknown stress scenario {scenario!r}; choose from {list(SCENARIOS)}")


def stress_run(model, scenario: str, n: int = 1600, count: int = 2000, seed: int = 0,
               knobs=None, hurst1: float = 0.3, chunk: int = 250) -> StressResult:
    """Scatter of scenario knob vs. inferred value (a CnnModel or classical method name).

    ARFIMA-trained models report d; their outputs are mapped to H = d + 1/2
    so every scenario is read on the Hurst scale.
    """
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown stress scenario {scenario!r}; choose from {list(SCENARIOS)}")
    shift = 0.5 if isinstance(model, CnnModel) and model.topology.target == "d" else 0.0
    ks, es, ts = [], [], []
    for c, start in enumerate(range(0, count, chunk)):
        m = min(chunk, count - start)
        sub = None if knobs is None else np.resize(np.asarray(knobs, float), count)[start:start + m]
        X, have, k, t = _scenario_data(scenario, n, m, make_rng(seed, 11, c), sub, hurst1)
        est, ok = predict(model, X, have)
        est = np.where(ok, est + shift, np.nan)
        ks.append(k)
        es.append(est)
        ts.append(t)
    return StressResult(scenario, np.concatenate(ks), np.concatenate(es), np.concatenate(ts))


__all__ = [
    "Uniform",
    "Exponential",
    "Normal",
    "PointMass",
    "PriorSpec",
    "default_prior",
    "sample_prior",
    "generate",
    "convert",
    "make_batch",
    "default_topology",
    "model_inputs",
    "TrainConfig",
    "TrainResult",
    "Trainer",
    "train",
    "finetune",
    "MetricBundle",
    "metric_bundle",
    "aggregate",
    "evaluate",
    "predict",
    "SCENARIOS",
    "StressResult",
    "stress_run",
]
