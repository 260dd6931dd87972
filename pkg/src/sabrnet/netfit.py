"""Feedforward ReLU network mapping (T, K, alpha0, nu, rho) to implied vol.

Plain numpy forward/backward passes, ADAM, and a validation-driven
learning-rate schedule: the rate is divided by ``lr_decay_factor`` every time
the validation loss fails to improve for ``patience`` epochs, and training
stops once it reaches ``lr_floor``.
"""

import copy
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .exceptions import ConfigError, DomainError, FormatError, TrainingError, VersionError

N_INPUTS = 5
INPUT_NAMES = ("T", "K", "alpha0", "nu", "rho")

CKPT_MAGIC = b"SABRNN"
CKPT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class NetConfig:
    hidden_layers: int = 2
    nodes_per_layer: int = 256
    init_seed: int = 0
    standardize: bool = False
    activation: str = "relu"

    def __post_init__(self):
        if self.hidden_layers < 1:
            raise ConfigError("hidden_layers must be >= 1")
        if self.nodes_per_layer < 1:
            raise ConfigError("nodes_per_layer must be >= 1")
        if self.activation != "relu":
            raise ConfigError("only relu activation is supported")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 100
    lr_initial: float = 1e-5
    lr_decay_factor: float = 10.0
    lr_floor: float = 1e-8
    patience: int = 1
    max_epochs: int = 1000
    shuffle_seed: int = 0

    def __post_init__(self):
        if not self.lr_floor < self.lr_initial:
            raise ConfigError("lr_floor must be below lr_initial")
        if not self.lr_decay_factor > 1:
            raise ConfigError("lr_decay_factor must be > 1")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, patience and max_epochs must be >= 1")


@dataclass
class Network:
    config: NetConfig
    weights: list
    biases: list
    x_shift: np.ndarray = field(default_factory=lambda: np.zeros(N_INPUTS))
    x_scale: np.ndarray = field(default_factory=lambda: np.ones(N_INPUTS))
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, flat):
        i = 0
        for p in self.params():
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def copy(self):
        return copy.deepcopy(self)

    def predict_points(self, X):
        """Vols for an ``(L, 5)`` array of inputs."""
        h = (np.asarray(X, dtype=float) - self.x_shift) / self.x_scale
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                np.maximum(h, 0.0, out=h)
        return h[:, 0]


def init_network(cfg, n_inputs=N_INPUTS):
    """He-normal hidden layers, variance-1/fan_in output layer, zero biases."""
    rng = np.random.default_rng(cfg.init_seed)
    sizes = [n_inputs] + [cfg.nodes_per_layer] * cfg.hidden_layers + [1]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = 1.0 if i == len(sizes) - 2 else 2.0
        weights.append(rng.standard_normal((fan_in, fan_out)) * math.sqrt(gain / fan_in))
        biases.append(np.zeros(fan_out))
    return Network(cfg, weights, biases)


def forward(net, inputs):
    """Apply the network pointwise to a ``(..., 5)`` grid; returns shape ``(...)``."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.shape[-1] != N_INPUTS:
        raise DomainError(f"last axis must have length {N_INPUTS}")
    if not np.isfinite(inputs).all():
        raise DomainError("inputs must be finite")
    flat = inputs.reshape(-1, N_INPUTS)
    return net.predict_points(flat).reshape(inputs.shape[:-1])


def loss_and_grad(net, X, y, valid):
    """Masked mean squared error over ``valid`` points and its gradient.

    Returns ``(loss, grads)`` with ``grads`` ordered like ``net.params()``.
    """
    count = int(valid.sum())
    h = (X - net.x_shift) / net.x_scale
    acts = [h]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    pred = h[:, 0]
    resid = np.where(valid, pred - np.where(valid, y, 0.0), 0.0)
    loss = float(resid @ resid) / count
    delta = (2.0 / count) * resid[:, None]
    grads = [None] * (2 * len(net.weights))
    for i in range(last, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (acts[i] > 0.0)
    return loss, grads


def masked_mse(pred, target, mask=None):
    """Mean of squared errors over non-excluded points.

    ``target`` may be an :class:`~sabrnet.surfaces.IvSurface` (its mask is
    used) or an array together with an explicit ``mask`` of excluded points.
    """
    if mask is None:
        mask = target.mask
        target = target.iv
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise DomainError("shape mismatch")
    keep = ~np.asarray(mask, dtype=bool)
    n = int(keep.sum())
    if n == 0:
        return float("nan")
    d = pred[keep] - target[keep]
    return float(d @ d) / n


def dataset_mse(net, ds):
    X, y, mask, _, _ = ds.points()
    return masked_mse(net.predict_points(X), y, mask)


class _Adam:
    def __init__(self, params):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1.0 - ADAM_BETA1 ** self.t
        c2 = 1.0 - ADAM_BETA2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def _surface_arrays(ds):
    X = np.stack([s.inputs().reshape(-1, N_INPUTS) for s in ds.surfaces])
    y = np.stack([s.iv.ravel() for s in ds.surfaces])
    valid = ~np.stack([s.mask.ravel() for s in ds.surfaces])
    return X, np.where(valid, y, 0.0), valid


def fit_standardization(net, ds):
    X, _, valid = _surface_arrays(ds)
    pts = X[valid]
    net.x_shift = pts.mean(axis=0)
    scale = pts.std(axis=0)
    net.x_scale = np.where(scale > 0, scale, 1.0)


def _lr_reached_floor(lr, floor):
    return lr <= floor * (1.0 + 1e-9)


def train(net, train_ds, val_ds, tcfg, callback=None):
    """ADAM on mini-batches of whole surfaces; returns the best-validation state.

    Excluded points carry zero weight. ``callback(record)`` is invoked after
    every epoch with the history record.
    """
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise DomainError("datasets must be nonempty")
    keys = {(train_ds.role, train_ds.seed, i) for i in train_ds.ids}
    if any((val_ds.role, val_ds.seed, i) in keys for i in val_ds.ids):
        raise DomainError("validation surfaces overlap the training surfaces")
    net = net.copy()
    if net.config.standardize:
        fit_standardization(net, train_ds)
    Xt, yt, vt = _surface_arrays(train_ds)
    Xv, yv, vv = _surface_arrays(val_ds)
    Xv, yv, vv = Xv.reshape(-1, N_INPUTS), yv.ravel(), vv.ravel()
    n_surf = Xt.shape[0]

    params = net.params()
    opt = _Adam(params)
    lr = tcfg.lr_initial
    best_val = math.inf
    best = net.get_flat()
    bad = 0
    net.history = []
    net.meta.update(train_config=asdict(tcfg), loss="mean over non-excluded points per batch")

    for epoch in range(1, tcfg.max_epochs + 1):
        order = np.random.default_rng([tcfg.shuffle_seed, epoch]).permutation(n_surf)
        tot, cnt = 0.0, 0
        for start in range(0, n_surf, tcfg.batch_size):
            sel = order[start:start + tcfg.batch_size]
            valid = vt[sel].ravel()
            c = int(valid.sum())
            if c == 0:
                continue
            before = net.get_flat()
            loss, grads = loss_and_grad(net, Xt[sel].reshape(-1, N_INPUTS), yt[sel].ravel(), valid)
            if not (math.isfinite(loss) and all(np.isfinite(g).all() for g in grads)):
                net.set_flat(before)
                raise TrainingError(f"non-finite loss at epoch {epoch}", network=net)
            opt.step(params, grads, lr)
            tot += loss * c
            cnt += c
        train_loss = tot / cnt if cnt else float("nan")
        val_loss = masked_mse(net.predict_points(Xv), yv, ~vv)
        if not math.isfinite(val_loss):
            net.set_flat(best)
            raise TrainingError(f"non-finite validation loss at epoch {epoch}", network=net)
        record = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": lr}
        net.history.append(record)
        if callback is not None:
            callback(record)
        if val_loss < best_val:
            best_val = val_loss
            best = net.get_flat()
            bad = 0
        else:
            bad += 1
            if bad >= tcfg.patience:
                lr /= tcfg.lr_decay_factor
                bad = 0
                if _lr_reached_floor(lr, tcfg.lr_floor):
                    break
    net.set_flat(best)
    net.meta["best_val_loss"] = best_val
    return net


def write_history_csv(net, path, header=None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write("epoch,train_loss,val_loss,lr\n")
        for r in net.history:
            fh.write(f"{r['epoch']},{r['train_loss']!r},{r['val_loss']!r},{r['lr']!r}\n")


def save_network(net, path, extra=None):
    """Versioned binary checkpoint: magic, version, JSON header, float64 blobs."""
    head = {
        "tool_version": __version__,
        "config": asdict(net.config),
        "shapes": [list(p.shape) for p in net.params()],
        "x_shift": [float(v) for v in net.x_shift],
        "x_scale": [float(v) for v in net.x_scale],
        "history": net.history,
        "meta": net.meta,
    }
    if extra:
        head.update(extra)
    blob = json.dumps(head, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<HI", CKPT_VERSION, len(blob)))
        fh.write(blob)
        for p in net.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_network(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:6] != CKPT_MAGIC:
        raise FormatError("not a network checkpoint", offset=0)
    if len(data) < 12:
        raise FormatError("truncated header", offset=len(data))
    version, hlen = struct.unpack_from("<HI", data, 6)
    if version != CKPT_VERSION:
        raise VersionError(f"checkpoint version {version}, expected {CKPT_VERSION}")
    off = 12
    if len(data) < off + hlen:
        raise FormatError("truncated header", offset=len(data))
    head = json.loads(data[off:off + hlen])
    off += hlen
    arrays = []
    for shape in head["shapes"]:
        nbytes = 8 * int(np.prod(shape))
        if len(data) < off + nbytes:
            raise FormatError("truncated parameter blob", offset=len(data))
        arrays.append(np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=off)
                      .astype(float).reshape(shape))
        off += nbytes
    if off != len(data):
        raise FormatError("trailing bytes after parameter blob", offset=off)
    cfg = NetConfig(**head["config"])
    net = Network(cfg, arrays[0::2], arrays[1::2], np.array(head["x_shift"]),
                  np.array(head["x_scale"]), head["history"], head["meta"])
    net.meta["checkpoint_header"] = {k: v for k, v in head.items()
                                     if k not in ("history", "meta", "shapes")}
    return net
