"""Flat ``key = value`` run configuration.

Lines starting with ``#`` and blank lines are ignored. Unknown keys are an
error. ``SCHEMA`` lists every key with its type, default and meaning; the
CLI ``--print-config`` flag dumps it.
"""

import hashlib
from dataclasses import fields

from . import __version__
from .exceptions import ConfigError
from .mc import SimConfig
from .netfit import NetConfig, TrainConfig
from .surfaces import GenHyper

_G = GenHyper()

SCHEMA = {
    # surface generation
    "gen.m": (int, _G.m, "maturities per surface"),
    "gen.n": (int, _G.n, "strikes per maturity"),
    "gen.alpha0_min": (float, _G.alpha0_min, "lower bound of initial vol"),
    "gen.alpha0_max": (float, _G.alpha0_max, "upper bound of initial vol"),
    "gen.nu_min": (float, _G.nu_min, "lower bound of vol-of-vol"),
    "gen.nu_max": (float, _G.nu_max, "upper bound of vol-of-vol"),
    "gen.rho_min": (float, _G.rho_min, "lower bound of correlation"),
    "gen.rho_max": (float, _G.rho_max, "upper bound of correlation"),
    "gen.t_last": (float, _G.t_last, "last maturity horizon"),
    "gen.eta_min": (float, _G.eta_min, "lower bound of strike half-width multiplier"),
    "gen.eta_max": (float, _G.eta_max, "upper bound of strike half-width multiplier"),
    "gen.literal_k_formula": (bool, False, "use alpha0 (not alpha0^2) in the low-strike drift term"),
    "gen.literal_dk": (bool, False, "strike spacing (K_n - K_1) / n instead of / (n - 1)"),
    "gen.nu_mode": (str, "per_row", "per_row: nu/sqrt(T) per maturity row; single: raw nu, one path set"),
    # simulation
    "sim.n_paths": (int, 20000, "paths per surface row (train/validate/test)"),
    "sim.dt": (float, _G.dt, "Euler time step"),
    "sim.antithetic": (bool, True, "antithetic pairing"),
    "sim.accurate_factor": (int, 25, "path multiplier for the test-accurate role"),
    # network
    "net.hidden_layers": (int, 2, "hidden layers"),
    "net.nodes_per_layer": (int, 256, "nodes per hidden layer"),
    "net.init_seed": (int, 0, "weight initialisation seed"),
    "net.standardize": (bool, False, "affine input standardisation fitted on the training set"),
    # training
    "train.batch_size": (int, 100, "surfaces per mini-batch"),
    "train.lr_initial": (float, 1e-5, "initial learning rate"),
    "train.lr_decay_factor": (float, 10.0, "learning-rate divisor on a non-improving epoch"),
    "train.lr_floor": (float, 1e-8, "training stops once the learning rate reaches this"),
    "train.patience": (int, 1, "non-improving epochs before a decay"),
    "train.max_epochs": (int, 1000, "hard epoch cap"),
    "train.shuffle_seed": (int, 0, "mini-batch shuffling seed"),
    # data paths
    "data.train": (str, "", "training dataset file"),
    "data.validate": (str, "", "validation dataset file"),
    "data.test": (str, "", "test dataset file"),
    "data.test_accurate": (str, "", "higher-precision test dataset file"),
    # run
    "run.seed": (int, 0, "master seed"),
    "run.workers": (int, 1, "worker processes; never changes outputs"),
    "generate.count": (int, 4000, "surfaces to generate"),
    "evaluate.quintile_inputs": (str, "T,K,alpha0,nu,rho", "inputs for quintile tables"),
    "evaluate.ci_surfaces": (int, 3, "surfaces written to the CI plot table"),
    # synthetic validation
    "synth.points": (int, 10000, "points per synthetic test set"),
    "synth.m1": (int, 10000, "higher path count"),
    "synth.m2": (int, 1000, "lower path count"),
    "synth.replications": (int, 2000, "replications"),
    "synth.delta_scale": (float, 1e-3, "std of the fixed synthetic prediction errors"),
    "synth.beta_min": (float, 0.05, "lower bound of per-point noise scale"),
    "synth.beta_max": (float, 0.5, "upper bound of per-point noise scale"),
    # Hagan comparison
    "hagan.alpha0": (float, 0.3, "initial vol"),
    "hagan.nu": (float, 1.0, "vol-of-vol"),
    "hagan.rho": (float, -0.5, "correlation"),
    "hagan.maturities": (str, "0.25,1.5", "comma-separated maturities"),
    "hagan.n_strikes": (int, 21, "strikes per maturity"),
    "hagan.eta": (float, 2.576, "strike half-width multiplier"),
    "hagan.n_paths": (int, 1000000, "paths per maturity"),
    # sweeps
    "sweep.layers": (str, "1,2,3", "hidden-layer counts"),
    "sweep.nodes": (str, "64,128,256", "nodes per layer"),
    "study.fractions": (str, "1,0.5,0.25", "nested training fractions (powers of 1/2)"),
}

# keys that never change results; left out of the hash and embedded dumps
NON_SEMANTIC = ("run.workers",)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(key, kind, raw):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw, 0)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


class RunConfig:
    """Resolved configuration: defaults overlaid by a file and CLI overrides."""

    def __init__(self, values=None):
        self.values = {k: v[1] for k, v in SCHEMA.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key, value):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        kind = SCHEMA[key][0]
        self.values[key] = _convert(key, kind, value) if isinstance(value, str) else kind(value)

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def parse(cls, text):
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            cfg.values[key] = _convert(key, SCHEMA[key][0], raw)
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.parse(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def dump(self, semantic_only=True):
        keys = sorted(k for k in self.values if not (semantic_only and k in NON_SEMANTIC))
        return "".join(f"{k} = {_render(self.values[k])}\n" for k in keys)

    def hash(self):
        return hashlib.sha256(self.dump().encode()).hexdigest()[:16]

    def provenance(self):
        return f"sabrnet {__version__} config={self.hash()}"

    def _section(self, prefix, cls_):
        names = {f.name for f in fields(cls_)}
        return {k[len(prefix):]: v for k, v in self.values.items()
                if k.startswith(prefix) and k[len(prefix):] in names}

    def gen_hyper(self):
        kw = self._section("gen.", GenHyper)
        return _wrap(GenHyper, dt=self["sim.dt"], **kw)

    def sim_config(self, n_paths=None):
        return _wrap(SimConfig, n_paths=n_paths or self["sim.n_paths"], dt=self["sim.dt"],
                     seed=self["run.seed"], antithetic=self["sim.antithetic"])

    def net_config(self):
        return _wrap(NetConfig, **self._section("net.", NetConfig))

    def train_config(self):
        return _wrap(TrainConfig, **self._section("train.", TrainConfig))

    def floats(self, key):
        try:
            return [float(x) for x in self[key].split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"{key}: expected comma-separated numbers") from None

    def ints(self, key):
        return [int(v) for v in self.floats(key)]


def _render(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _wrap(cls_, **kw):
    try:
        return cls_(**kw)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"invalid {cls_.__name__}: {exc}") from None


def schema_text():
    lines = ["# sabrnet run configuration (flat key = value)"]
    for k, (kind, default, doc) in SCHEMA.items():
        lines.append(f"# {doc} [{kind.__name__}]")
        lines.append(f"{k} = {_render(default)}")
    return "\n".join(lines) + "\n"
