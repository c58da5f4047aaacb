"""A small MNN-H style network engine written directly in numpy.

Each branch restricts the input to ``n_sub`` nodes with an LCR layer, applies
``depth - 2`` periodic convolutions with ReLU, and interpolates back to the
input grid with an LCI layer. Branch outputs are summed and scaled by
``gamma``. All layers use NTK parameterization: stored weights are unit
Gaussian and each layer output carries a fixed ``1/sqrt(fan_in)`` factor.

Parameters live in an ordered ``dict`` of float64 arrays. Reverse mode is
hand written; :func:`backward` can return per-example gradients, which the
empirical NTK uses to build Jacobian rows.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import TrainingDivergenceError


@dataclass(frozen=True)
class Branch:
    n_sub: int
    depth: int = 4
    channels: int = 32
    conv_window: int = 7


@dataclass(frozen=True)
class NetworkSpec:
    dim: int = 1
    n_input: int = 64
    branches: tuple = (Branch(8), Branch(16), Branch(32), Branch(64))
    transfer_window: int = 3
    gamma: float = 3.0e-4

    def __post_init__(self):
        object.__setattr__(
            self, "branches", tuple(b if isinstance(b, Branch) else Branch(**b) for b in self.branches)
        )
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.transfer_window % 2 == 0:
            raise ValueError("transfer_window must be odd")
        if not self.branches:
            raise ValueError("need at least one branch")
        for b in self.branches:
            if self.n_input % b.n_sub:
                raise ValueError(f"n_sub={b.n_sub} does not divide n_input={self.n_input}")
            if b.depth < 3 or b.channels < 1 or b.conv_window % 2 == 0:
                raise ValueError(f"invalid branch {b}")

    @property
    def out_shape(self) -> tuple:
        return (self.n_input,) * self.dim

    @property
    def n_out(self) -> int:
        return self.n_input**self.dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["branches"] = tuple(Branch(**b) for b in d["branches"])
        return cls(**d)


def desk_spec(gamma: float = 3.0e-4) -> NetworkSpec:
    """Default 1-D desk-scale network on 64 nodes."""
    return NetworkSpec(gamma=gamma)


@dataclass(frozen=True)
class Layer:
    name: str
    kind: str  # lcr | conv | lci
    c_in: int
    c_out: int
    window: int
    scale: float
    relu: bool


def branch_layers(spec: NetworkSpec, bi: int) -> list[Layer]:
    b = spec.branches[bi]
    r = (spec.n_input // b.n_sub) ** spec.dim
    c = b.channels
    kt = spec.transfer_window
    k = b.conv_window
    layers = [Layer(f"b{bi}.lcr", "lcr", r, c, kt, 1.0 / np.sqrt(c), False)]
    for j in range(b.depth - 2):
        layers.append(Layer(f"b{bi}.conv{j}", "conv", c, c, k, 1.0 / np.sqrt(c * k**spec.dim), True))
    # the preset carries sqrt(C) on top of the 1/sqrt(C) fan-in scale
    layers.append(Layer(f"b{bi}.lci", "lci", c, r, kt, 1.0 / c, False))
    return layers


def all_layers(spec: NetworkSpec) -> list[tuple[int, list[Layer]]]:
    return [(bi, branch_layers(spec, bi)) for bi in range(len(spec.branches))]


@lru_cache(maxsize=None)
def _stencil_index(n_sub: int, dim: int, window: int):
    """Neighbour gather indices ``idx[k, p]`` and their inverses for a periodic stencil."""
    half = window // 2
    offs = np.arange(-half, half + 1)
    if dim == 1:
        p = np.arange(n_sub)
        idx = (p[None, :] + offs[:, None]) % n_sub
    else:
        i, j = np.meshgrid(np.arange(n_sub), np.arange(n_sub), indexing="ij")
        i, j = i.ravel(), j.ravel()
        rows = []
        for a in offs:
            for b in offs:
                rows.append(((i + a) % n_sub) * n_sub + (j + b) % n_sub)
        idx = np.array(rows)
    inv = np.argsort(idx, axis=1)
    idx.setflags(write=False)
    inv.setflags(write=False)
    return idx, inv


def restriction_stencil(r: int, dim: int, window: int) -> np.ndarray:
    """Block average: ``R[d, w]`` with ``sum_{d,w} R = 1``."""
    ch = r**dim
    st = np.zeros((ch, window**dim))
    st[:, (window**dim) // 2] = 1.0 / ch
    return st


def interpolation_stencil(r: int, dim: int, window: int) -> np.ndarray:
    """Linear interpolation: ``I[d, w]`` with ``sum_w I[d, w] = 1`` for every ``d``."""
    half = window // 2
    one = np.zeros((r, window))
    t = np.arange(r) / r
    one[:, half] = 1 - t
    if window > 1:
        one[:, half + 1] = t
    else:
        one[:, half] = 1.0
    if dim == 1:
        return one
    return np.einsum("aw,bv->abwv", one, one).reshape(r * r, window * window)


class NetworkState:
    """Network spec plus its parameter arrays (ordered by layer)."""

    def __init__(self, spec: NetworkSpec, params: dict):
        self.spec = spec
        self.params = params

    def copy(self) -> "NetworkState":
        return NetworkState(self.spec, {k: v.copy() for k, v in self.params.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params.values()])

    def set_flat(self, x: np.ndarray) -> None:
        i = 0
        for k, p in self.params.items():
            self.params[k] = np.asarray(x[i : i + p.size], dtype=np.float64).reshape(p.shape).copy()
            i += p.size

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def digest(self) -> str:
        return _digest(self.params)


def _digest(arrays: dict) -> str:
    h = hashlib.sha256()
    for k, v in arrays.items():
        h.update(k.encode())
        h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return h.hexdigest()


def build_network(spec: NetworkSpec, seed) -> NetworkState:
    rng = np.random.default_rng(seed)
    params = {}
    for bi, layers in all_layers(spec):
        b = spec.branches[bi]
        r = spec.n_input // b.n_sub
        gain = np.sqrt(b.channels / r)
        kt = spec.transfer_window
        for layer in layers:
            kk = layer.window**spec.dim
            if layer.kind == "lcr":
                wc = rng.standard_normal(layer.c_out)
                st = restriction_stencil(r, spec.dim, kt)
                w = gain * wc[:, None, None] * st[None, :, :]
            elif layer.kind == "lci":
                wc = rng.standard_normal(layer.c_in)
                st = interpolation_stencil(r, spec.dim, kt)
                w = gain * wc[None, :, None] * st[:, None, :]
            else:
                w = rng.standard_normal((layer.c_out, layer.c_in, kk))
            params[layer.name + ".W"] = w
            params[layer.name + ".b"] = rng.standard_normal(layer.c_out)
    return NetworkState(spec, params)


def _to_channels(x: np.ndarray, spec: NetworkSpec, n_sub: int) -> np.ndarray:
    """(B, N[, N]) -> (B, r^dim, n_sub^dim) with fine index ``n * r + d``."""
    bsz = x.shape[0]
    r = spec.n_input // n_sub
    if spec.dim == 1:
        return x.reshape(bsz, n_sub, r).transpose(0, 2, 1)
    return x.reshape(bsz, n_sub, r, n_sub, r).transpose(0, 2, 4, 1, 3).reshape(bsz, r * r, n_sub * n_sub)


def _from_channels(y: np.ndarray, spec: NetworkSpec, n_sub: int) -> np.ndarray:
    bsz = y.shape[0]
    r = spec.n_input // n_sub
    if spec.dim == 1:
        return y.transpose(0, 2, 1).reshape(bsz, spec.n_input)
    y = y.reshape(bsz, r, r, n_sub, n_sub).transpose(0, 3, 1, 4, 2)
    return y.reshape(bsz, spec.n_input, spec.n_input)


def _conv(x, w, b, scale, idx):
    bsz, c_in, p = x.shape
    xu = x[:, :, idx].reshape(bsz, c_in * idx.shape[0], p)
    y = scale * np.matmul(w.reshape(w.shape[0], -1), xu) + b[None, :, None]
    return y, xu


def forward(net: NetworkState, v: np.ndarray, cache: bool = False):
    """Evaluate the network on a batch ``v`` of shape ``(B, *grid)`` (or a single field)."""
    spec = net.spec
    x = np.asarray(getattr(v, "values", v), dtype=np.float64)
    single = x.ndim == spec.dim
    if single:
        x = x[None]
    if x.shape[1:] != spec.out_shape:
        raise ValueError(f"input shape {x.shape[1:]} does not match network {spec.out_shape}")
    out = np.zeros_like(x)
    tape = []
    for bi, layers in all_layers(spec):
        n_sub = spec.branches[bi].n_sub
        idx_t, _ = _stencil_index(n_sub, spec.dim, spec.transfer_window)
        idx_c, _ = _stencil_index(n_sub, spec.dim, spec.branches[bi].conv_window)
        h = _to_channels(x, spec, n_sub)
        records = []
        for layer in layers:
            idx = idx_c if layer.kind == "conv" else idx_t
            h, xu = _conv(h, net.params[layer.name + ".W"], net.params[layer.name + ".b"], layer.scale, idx)
            mask = None
            if layer.relu:
                mask = h > 0
                h = h * mask
            records.append((layer, xu, mask))
        out += _from_channels(h, spec, n_sub)
        tape.append((bi, records))
    out *= spec.gamma
    if single:
        out = out[0]
    if cache:
        return out, tape
    return out


def backward(net: NetworkState, tape, cot: np.ndarray, per_example: bool = False) -> dict:
    """Reverse pass for output co-tangents ``cot`` of shape ``(B, *grid)``.

    With ``per_example`` the returned arrays carry a leading batch axis; the
    forward pass may then have used a single input shared by all co-tangents.
    """
    spec = net.spec
    cot = np.asarray(cot, dtype=np.float64) * spec.gamma
    grads = {}
    for bi, records in tape:
        n_sub = spec.branches[bi].n_sub
        dy = _to_channels(cot, spec, n_sub)
        for layer, xu, mask in reversed(records):
            if mask is not None:
                dy = dy * mask
            w = net.params[layer.name + ".W"]
            kk = layer.window**spec.dim
            if per_example:
                gw = layer.scale * np.matmul(dy, np.swapaxes(xu, 1, 2))
                grads[layer.name + ".W"] = gw.reshape(dy.shape[0], *w.shape)
                grads[layer.name + ".b"] = dy.sum(axis=2)
            else:
                xs = np.broadcast_to(xu, (dy.shape[0],) + xu.shape[1:])
                gw = layer.scale * np.einsum("bop,bip->oi", dy, xs, optimize=True)
                grads[layer.name + ".W"] = gw.reshape(w.shape)
                grads[layer.name + ".b"] = dy.sum(axis=(0, 2))
            if layer.kind == "lcr":
                break
            idx = _stencil_index(n_sub, spec.dim, layer.window)[1]
            dxu = layer.scale * np.matmul(w.reshape(w.shape[0], -1).T, dy)
            dxu = dxu.reshape(dy.shape[0], layer.c_in, kk, -1)
            dy = dxu[:, :, np.arange(kk)[:, None], idx].sum(axis=2)
    return {k: grads[k] for k in net.params}


def mse(pred: np.ndarray, u: np.ndarray, h: float, dim: int) -> float:
    """Mean over samples of the squared grid L2 norm of ``u - pred``."""
    diff = (u - pred).reshape(u.shape[0], -1)
    return float(np.mean(h**dim * np.sum(diff**2, axis=1)))


def loss_and_grads(net: NetworkState, v: np.ndarray, u: np.ndarray):
    """Batch MSE ``mean ||u - NN(v)||_{L2}^2`` and its exact gradient."""
    v = np.asarray(v, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if v.shape[0] == 0:
        raise ValueError("empty batch")
    h = 1.0 / net.spec.n_input
    pred, tape = forward(net, v, cache=True)
    loss = mse(pred, u, h, net.spec.dim)
    cot = -2.0 * h**net.spec.dim / v.shape[0] * (u - pred)
    return loss, backward(net, tape, cot)


def predict(net: NetworkState, v: np.ndarray, batch: int = 256) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] <= batch:
        return forward(net, v)
    return np.concatenate([forward(net, v[i : i + batch]) for i in range(0, v.shape[0], batch)])


# -- optimizers ------------------------------------------------------------------


@dataclass
class OptimizerState:
    kind: str = "momentum"
    hyper: dict = field(default_factory=dict)
    slots: dict = field(default_factory=dict)
    step_count: int = 0

    def digest(self) -> str:
        flat = {f"{k}/{i}": a for k, arrs in self.slots.items() for i, a in enumerate(arrs)}
        return _digest(flat) + f":{self.step_count}"


def make_optimizer(kind: str = "momentum", **hyper) -> OptimizerState:
    if kind == "momentum":
        defaults = {"lr": 10.0, "mu": 0.975}
    elif kind == "adam":
        defaults = {"lr": 3.0e-4, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}
    else:
        raise ValueError(f"unknown optimizer {kind!r}")
    unknown = set(hyper) - set(defaults)
    if unknown:
        raise ValueError(f"unknown hyper-parameters {sorted(unknown)} for {kind}")
    defaults.update({k: float(v) for k, v in hyper.items()})
    return OptimizerState(kind, defaults)


def opt_step(opt: OptimizerState, net: NetworkState, grads: dict):
    """Apply one update in place; returns ``(opt, net)`` for convenience."""
    hp = opt.hyper
    if not opt.slots:
        n_slots = 1 if opt.kind == "momentum" else 2
        opt.slots = {k: [np.zeros_like(p) for _ in range(n_slots)] for k, p in net.params.items()}
    opt.step_count += 1
    if opt.kind == "momentum":
        for k, p in net.params.items():
            m = opt.slots[k][0]
            m *= hp["mu"]
            m += grads[k]
            p -= hp["lr"] * m
    else:
        t = opt.step_count
        b1, b2 = hp["beta1"], hp["beta2"]
        for k, p in net.params.items():
            m, s = opt.slots[k]
            g = grads[k]
            m *= b1
            m += (1 - b1) * g
            s *= b2
            s += (1 - b2) * g * g
            mhat = m / (1 - b1**t)
            shat = s / (1 - b2**t)
            p -= hp["lr"] * mhat / (np.sqrt(shat) + hp["eps"])
    return opt, net


# -- training loop ----------------------------------------------------------------


@dataclass
class LossCurve:
    iterations: list = field(default_factory=list)
    train_mse: list = field(default_factory=list)
    test_mse: list = field(default_factory=list)
    monitor_mse: list = field(default_factory=list)
    start_digest: str = ""
    end_digest: str = ""
    start_opt_digest: str = ""
    end_opt_digest: str = ""

    def iterations_to(self, threshold: float, series: str = "train_mse"):
        """First logged iteration whose ``series`` value is at or below ``threshold``."""
        for it, val in zip(self.iterations, getattr(self, series)):
            if val <= threshold:
                return it
        return None


def fit(
    net: NetworkState,
    opt: OptimizerState,
    v: np.ndarray,
    u: np.ndarray,
    iters: int,
    batch_size: int = 32,
    seed=0,
    log_every: int = 50,
    eval_v: np.ndarray | None = None,
    eval_u: np.ndarray | None = None,
    log=None,
    monitor=None,
) -> LossCurve:
    """Mini-batch MSE training; mutates ``net`` and ``opt`` in place.

    ``monitor`` is an optional ``(v, u)`` pair whose MSE is logged alongside
    the training and test losses.
    """
    v = np.asarray(v, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    m = v.shape[0]
    if m == 0:
        raise ValueError("empty training set")
    h = 1.0 / net.spec.n_input
    dim = net.spec.dim
    bs = min(batch_size, m)
    rng = np.random.default_rng(seed)
    curve = LossCurve(start_digest=net.digest(), start_opt_digest=opt.digest())

    def record(it):
        tr = mse(predict(net, v), u, h, dim)
        te = mse(predict(net, eval_v), eval_u, h, dim) if eval_v is not None else float("nan")
        curve.iterations.append(it)
        curve.train_mse.append(tr)
        curve.test_mse.append(te)
        if monitor is not None:
            curve.monitor_mse.append(mse(predict(net, monitor[0]), monitor[1], h, dim))
        if log is not None:
            log(it, tr, te)
        if not np.isfinite(tr):
            raise TrainingDivergenceError(f"non-finite training loss at iteration {it}", iteration=it)

    record(0)
    order = rng.permutation(m)
    pos = 0
    for it in range(1, iters + 1):
        if pos + bs > m:
            order = rng.permutation(m)
            pos = 0
        batch = order[pos : pos + bs]
        pos += bs
        loss, grads = loss_and_grads(net, v[batch], u[batch])
        if not np.isfinite(loss):
            raise TrainingDivergenceError(f"non-finite loss at iteration {it}", iteration=it)
        opt_step(opt, net, grads)
        if it % log_every == 0 or it == iters:
            record(it)
    curve.end_digest = net.digest()
    curve.end_opt_digest = opt.digest()
    return curve


# -- checkpoints ------------------------------------------------------------------

CKPT_MAGIC = b"MLFTNET1"


def save_checkpoint(path, net: NetworkState, opt: OptimizerState | None = None, extra: dict | None = None) -> Path:
    meta = {
        "extra": extra or {},
        "spec": net.spec.to_dict(),
        "params": [[k, list(p.shape)] for k, p in net.params.items()],
        "optimizer": None,
    }
    arrays = list(net.params.values())
    if opt is not None:
        slot_names = list(opt.slots)
        n_slots = len(next(iter(opt.slots.values()))) if opt.slots else 0
        meta["optimizer"] = {
            "kind": opt.kind,
            "hyper": opt.hyper,
            "step_count": opt.step_count,
            "slots": slot_names,
            "n_slots": n_slots,
        }
        for k in slot_names:
            arrays.extend(opt.slots[k])
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC + b"\n")
    buf.write(json.dumps(meta, sort_keys=True).encode() + b"\n")
    for a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    path = Path(path)
    path.write_bytes(buf.getvalue())
    return path


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    magic, meta_line, body = raw.split(b"\n", 2)
    if magic != CKPT_MAGIC:
        raise ValueError("not an MLFTNET1 checkpoint")
    meta = json.loads(meta_line)
    spec = NetworkSpec.from_dict(meta["spec"])
    data = np.frombuffer(body, dtype="<f8")
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        a = data[pos : pos + size].astype(np.float64).reshape(shape)
        pos += size
        return a

    params = {k: take(shape) for k, shape in meta["params"]}
    net = NetworkState(spec, params)
    opt = None
    om = meta["optimizer"]
    if om is not None:
        opt = OptimizerState(om["kind"], om["hyper"], {}, om["step_count"])
        for k in om["slots"]:
            opt.slots[k] = [take(params[k].shape) for _ in range(om["n_slots"])]
    return net, opt
