"""Convolutional Hurst/memory estimator with hand-written reverse-mode gradients.

Pipeline: optional differencing -> optional per-sequence standardization ->
valid 1-D convolutions with PReLU -> global average pooling -> dense head.

All parameters live in one flat float64 vector; individual tensors are views
into it, which keeps the optimizer and the checkpoint format trivial.
Convolutions are channels-last and computed as ``kernel`` shifted matrix
products over the flattened ``(B * L, C)`` activations.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CheckpointError, NonFiniteGradient, ShapeError

STD_FLOOR = 1e-12
PRELU_INIT = 0.25


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"expected a B x L batch, got shape {x.shape}")
    return x


def standardize(batch) -> np.ndarray:
    """Per-row ``(x - mean) / std`` with population std; flat rows map to zeros."""
    x = _as_batch(batch)
    if x.shape[1] < 2:
        raise ShapeError("standardize needs L >= 2")
    centered = x - x.mean(axis=1, keepdims=True)
    sd = np.sqrt(np.mean(centered * centered, axis=1, keepdims=True))
    ok = sd >= STD_FLOOR
    return np.where(ok, centered / np.where(ok, sd, 1.0), 0.0)


def difference(batch) -> np.ndarray:
    x = _as_batch(batch)
    if x.shape[1] < 2:
        raise ShapeError("difference needs L >= 2")
    return np.diff(x, axis=1)


# ---------------------------------------------------------------------------
# layer primitives (each with an explicit backward)
# ---------------------------------------------------------------------------

def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid convolution (cross-correlation) of ``x`` (B, L, Cin) with ``w`` (k, Cin, Cout)."""
    B, L, cin = x.shape
    k, _, cout = w.shape
    Lout = L - k + 1
    if Lout < 1:
        raise ShapeError(f"sequence of length {L} too short for kernel {k}")
    flat = x.reshape(B * L, cin)
    rows = B * L - k + 1
    y = np.zeros((B * L, cout))
    for j in range(k):
        y[:rows] += flat[j:j + rows] @ w[j]
    y = y.reshape(B, L, cout)[:, :Lout]
    y += b
    return np.ascontiguousarray(y)


def conv1d_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    """Gradients ``(dx, dw, db)`` of a valid convolution given upstream ``dy``."""
    B, L, cin = x.shape
    k, _, cout = w.shape
    Lout = L - k + 1
    if dy.shape != (B, Lout, cout):
        raise ShapeError("upstream gradient does not match convolution output")
    pad = np.zeros((B, L, cout))
    pad[:, :Lout] = dy
    pad = pad.reshape(B * L, cout)
    flat = x.reshape(B * L, cin)
    rows = B * L - k + 1
    dw = np.empty_like(w)
    dx = np.zeros((B * L, cin))
    d = pad[:rows]
    for j in range(k):
        dw[j] = flat[j:j + rows].T @ d
        dx[j:j + rows] += d @ w[j].T
    db = dy.sum(axis=(0, 1))
    return dx.reshape(B, L, cin), dw, db


def prelu_forward(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0, z, slope * z)


def prelu_backward(z: np.ndarray, slope: float, da: np.ndarray):
    neg = z <= 0
    dslope = float(np.sum(da * z, where=neg))
    dz = np.where(neg, slope * da, da)
    return dz, dslope


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def dense_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def mse_loss(pred, target):
    """Mean squared error and its gradient ``2 (pred - target) / B``."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction/target length mismatch: {pred.size} vs {target.size}")
    r = pred - target
    return float(np.mean(r * r)), 2.0 * r / r.size


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Topology:
    conv_channels: tuple = (64, 64, 128, 128, 128, 128)
    kernel: int = 4
    head: tuple = (128, 64, 1)
    in_channels: int = 1
    use_diff: bool = True
    use_standardize: bool = True
    consumes: str = "path"  # representation fed to the model: "path" or "increments"
    target: str = "H"

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "head", tuple(int(h) for h in self.head))
        if not self.conv_channels or not self.head or self.head[-1] != 1:
            raise ShapeError("topology needs >= 1 conv layer and a head ending in 1 unit")
        if self.kernel < 1:
            raise ShapeError("kernel must be >= 1")
        if self.consumes not in ("path", "increments"):
            raise ShapeError(f"unknown input representation {self.consumes!r}")

    @property
    def min_length(self) -> int:
        """Shortest post-preprocessing length giving one conv output."""
        return len(self.conv_channels) * (self.kernel - 1) + 1

    def param_shapes(self) -> list[tuple[str, tuple]]:
        shapes = []
        cin = self.in_channels
        for i, cout in enumerate(self.conv_channels):
            shapes += [(f"conv{i}.w", (self.kernel, cin, cout)),
                       (f"conv{i}.b", (cout,)),
                       (f"conv{i}.slope", (1,))]
            cin = cout
        for i, units in enumerate(self.head):
            shapes += [(f"dense{i}.w", (cin, units)), (f"dense{i}.b", (units,))]
            if i < len(self.head) - 1:
                shapes.append((f"dense{i}.slope", (1,)))
            cin = units
        return shapes

    def param_count(self) -> int:
        return int(sum(np.prod(s) for _, s in self.param_shapes()))

    def to_json(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["head"] = list(self.head)
        return d


def tiny_topology(**kw) -> Topology:
    """Small model used for gradient checks: two 3-channel conv layers."""
    base = dict(conv_channels=(3, 3), kernel=4, head=(4, 1))
    base.update(kw)
    return Topology(**base)


def _views(flat: np.ndarray, topo: Topology) -> dict:
    out, pos = {}, 0
    for name, shape in topo.param_shapes():
        size = int(np.prod(shape))
        out[name] = flat[pos:pos + size].reshape(shape)
        pos += size
    return out


@dataclass
class Tape:
    """Activations retained by ``forward`` for the backward pass."""
    batch: int
    inputs: np.ndarray              # (B, L, 1) after preprocessing
    pre: list = field(default_factory=list)       # conv pre-activations
    pooled: np.ndarray | None = None
    dense_in: list = field(default_factory=list)
    dense_pre: list = field(default_factory=list)
    param_count: int = 0


class CnnModel:
    def __init__(self, topology: Topology | None = None, params: np.ndarray | None = None):
        self.topology = topology or Topology()
        n = self.topology.param_count()
        if params is None:
            params = np.zeros(n)
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (n,):
            raise ShapeError(f"expected {n} parameters, got {params.shape}")
        self.params = params
        self.p = _views(self.params, self.topology)

    @classmethod
    def init(cls, topology: Topology | None = None, rng=None) -> CnnModel:
        """Uniform(+-sqrt(1/fan_in)) weights, zero biases, PReLU slopes at 0.25."""
        from .rng import as_rng
        rng = as_rng(rng)
        model = cls(topology)
        for name, shape in model.topology.param_shapes():
            view = model.p[name]
            if name.endswith(".w"):
                fan_in = int(np.prod(shape[:-1]))
                bound = np.sqrt(1.0 / fan_in)
                view[...] = rng.uniform(-bound, bound, shape)
            elif name.endswith(".slope"):
                view[...] = PRELU_INIT
        return model

    def copy(self) -> CnnModel:
        return CnnModel(self.topology, self.params.copy())

    @property
    def min_input_length(self) -> int:
        return self.topology.min_length + (1 if self.topology.use_diff else 0)

    def preprocess(self, batch) -> np.ndarray:
        x = _as_batch(batch)
        if self.topology.use_diff:
            x = difference(x)
        if x.shape[1] < self.topology.min_length:
            raise ShapeError(
                f"effective input length {x.shape[1]} < minimum {self.topology.min_length}"
            )
        if self.topology.use_standardize:
            x = standardize(x)
        return x

    def forward(self, batch, keep_tape: bool = True):
        topo, p = self.topology, self.p
        x = self.preprocess(batch)
        B = x.shape[0]
        h = np.ascontiguousarray(x[:, :, None])
        tape = Tape(batch=B, inputs=h, param_count=self.params.size) if keep_tape else None
        for i in range(len(topo.conv_channels)):
            z = conv1d_forward(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
            if tape is not None:
                tape.pre.append(z)
            h = prelu_forward(z, p[f"conv{i}.slope"][0])
        h = h.mean(axis=1)
        if tape is not None:
            tape.pooled = h
        last = len(topo.head) - 1
        for i in range(len(topo.head)):
            if tape is not None:
                tape.dense_in.append(h)
            z = dense_forward(h, p[f"dense{i}.w"], p[f"dense{i}.b"])
            if i < last:
                if tape is not None:
                    tape.dense_pre.append(z)
                h = prelu_forward(z, p[f"dense{i}.slope"][0])
            else:
                h = z
        return h[:, 0], tape

    def predict(self, batch, chunk: int = 256) -> np.ndarray:
        x = _as_batch(batch)
        out = [self.forward(x[i:i + chunk], keep_tape=False)[0] for i in range(0, x.shape[0], chunk)]
        return np.concatenate(out) if out else np.empty(0)

    def backward(self, tape: Tape, loss_grad) -> np.ndarray:
        """Flat gradient vector (same layout as ``params``)."""
        topo, p = self.topology, self.p
        g = np.asarray(loss_grad, dtype=np.float64).reshape(-1)
        if tape is None or tape.param_count != self.params.size or g.size != tape.batch:
            raise ShapeError("tape does not match this model or loss gradient")
        grad = np.zeros_like(self.params)
        gv = _views(grad, topo)

        dh = g[:, None]
        for i in reversed(range(len(topo.head))):
            if i < len(topo.head) - 1:
                z = tape.dense_pre[i]
                dh, ds = prelu_backward(z, p[f"dense{i}.slope"][0], dh)
                gv[f"dense{i}.slope"][0] = ds
            dh, dw, db = dense_backward(tape.dense_in[i], p[f"dense{i}.w"], dh)
            gv[f"dense{i}.w"][...] = dw
            gv[f"dense{i}.b"][...] = db

        nconv = len(topo.conv_channels)
        Lf = tape.pre[-1].shape[1]
        dh = np.broadcast_to(dh[:, None, :] / Lf, tape.pre[-1].shape)
        for i in reversed(range(nconv)):
            z = tape.pre[i]
            dz, ds = prelu_backward(z, p[f"conv{i}.slope"][0], dh)
            gv[f"conv{i}.slope"][0] = ds
            if i > 0:
                h_in = prelu_forward(tape.pre[i - 1], p[f"conv{i - 1}.slope"][0])
            else:
                h_in = tape.inputs
            dh, dw, db = conv1d_backward(h_in, p[f"conv{i}.w"], dz)
            gv[f"conv{i}.w"][...] = dw
            gv[f"conv{i}.b"][...] = db
        return grad

    def loss_and_grad(self, batch, target):
        pred, tape = self.forward(batch)
        loss, dl = mse_loss(pred, target)
        return loss, self.backward(tape, dl)


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------

@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def zeros(cls, size: int, **hyper) -> AdamWState:
        return cls(np.zeros(size), np.zeros(size), **hyper)

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "weight_decay": self.weight_decay}


def adamw_step(model: CnnModel, grad: np.ndarray, state: AdamWState) -> None:
    """In-place decoupled-weight-decay Adam update of ``model.params``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != model.params.shape or state.m.shape != grad.shape:
        raise ShapeError("gradient/optimizer state does not match parameters")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient(f"non-finite gradient at step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    update = m_hat / (np.sqrt(v_hat) + state.eps)
    if state.weight_decay:
        update += state.weight_decay * model.params
    model.params -= state.lr * update


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def numerical_grad(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (``x`` is perturbed in place and restored)."""
    g = np.empty(x.size)
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return g.reshape(x.shape)


def relative_error(a, b, floor: float = 1e-7) -> float:
    """Largest ``|a - b| / max(|a|, |b|, floor)`` over all entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def check_model_gradient(model: CnnModel, batch, target, h: float = 1e-4) -> float:
    analytic = model.loss_and_grad(batch, target)[1]

    def f():
        return mse_loss(model.forward(batch, keep_tape=False)[0], target)[0]

    numeric = numerical_grad(f, model.params, h)
    return relative_error(analytic, numeric)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"LMNN"
FORMAT_VERSION = 1


def checkpoint_save(model: CnnModel, state: AdamWState | None, path) -> None:
    if state is None:
        state = AdamWState.zeros(model.params.size)
    header = model.topology.to_json()
    header.update(param_count=model.params.size, step=state.step, optimizer=state.hyper())
    meta = json.dumps(header, sort_keys=True).encode("utf-8")
    le = np.dtype("<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(meta)))
        fh.write(meta)
        for arr in (model.params, state.m, state.v):
            fh.write(arr.astype(le).tobytes())


def checkpoint_load(path) -> tuple[CnnModel, AdamWState]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    version, mlen = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[12:12 + mlen].decode("utf-8"))
        topo = Topology(
            conv_channels=header["conv_channels"], kernel=header["kernel"],
            head=header["head"], in_channels=header["in_channels"],
            use_diff=bool(header["use_diff"]), use_standardize=bool(header["use_standardize"]),
            consumes=header.get("consumes", "path"), target=header.get("target", "H"),
        )
        declared = int(header["param_count"])
        step = int(header["step"])
        hyper = dict(header["optimizer"])
    except (ValueError, KeyError, TypeError, ShapeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    n = topo.param_count()
    if declared != n:
        raise CheckpointError(f"declared {declared} parameters but topology implies {n}")
    body = blob[12 + mlen:]
    if len(body) != 3 * n * 8:
        raise CheckpointError(f"checkpoint body has {len(body)} bytes, expected {3 * n * 8}")
    data = np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(3, n)
    model = CnnModel(topo, data[0].copy())
    state = AdamWState(m=data[1].copy(), v=data[2].copy(), step=step, **hyper)
    return model, state


__all__ = [
    "Topology",
    "tiny_topology",
    "CnnModel",
    "Tape",
    "AdamWState",
    "standardize",
    "difference",
    "conv1d_forward",
    "conv1d_backward",
    "prelu_forward",
    "prelu_backward",
    "dense_forward",
    "dense_backward",
    "mse_loss",
    "adamw_step",
    "numerical_grad",
    "relative_error",
    "check_model_gradient",
    "checkpoint_save",
    "checkpoint_load",
]
