"""Experiment configuration: INI-style sections or JSON, validated on load.

Grammar (INI)::

    [model]
    name = pendulum          # zero-drift | linear | kinetic-linear | pendulum | hamiltonian
    d = 2                    # zero-drift only
    B = 0 1; 0 0             # linear only, rows separated by ';'
    A = 0 0; 0 1             # optional noise matrix
    potential = cosine       # hamiltonian: cosine | quadratic | free
    strength = 1.0           # hamiltonian potential strength
    A_v = 1                  # hamiltonian momentum noise matrix

    [spec]
    beta = 0.5
    c = 1.0
    eps = 1e-4

    [run]
    t = 1.0
    N = 100000
    seed = 7
    threads = 1              # optional
    dt_max = 0.004           # optional

    [experiment]
    ...                      # free keys, read by each subcommand with defaults

JSON input uses the same section and key names.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .flow import SdeModel, hamiltonian_model, kinetic_linear, linear, pendulum, zero_drift
from .subordinator import SubordinatorSpec, make_stable_spec

MODEL_NAMES = ("zero-drift", "linear", "kinetic-linear", "pendulum", "hamiltonian")
REQUIRED = [
    ("model", "name"),
    ("spec", "beta"),
    ("spec", "c"),
    ("spec", "eps"),
    ("run", "t"),
    ("run", "N"),
    ("run", "seed"),
]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def parse_matrix(text: str) -> np.ndarray:
    rows = [r.split() for r in str(text).split(";") if r.strip()]
    try:
        M = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"cannot parse matrix {text!r}") from exc
    if M.ndim != 2:
        raise ConfigError(f"ragged matrix {text!r}")
    return M


def format_matrix(M) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return "; ".join(" ".join(repr(float(v)) for v in row) for row in M)


def parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in str(text).replace(",", " ").split()], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"cannot parse vector {text!r}") from exc


@dataclass
class ExperimentConfig:
    model: dict
    spec: dict
    run: dict
    experiment: dict = field(default_factory=dict)

    # typed accessors -----------------------------------------------------
    @property
    def beta(self) -> float:
        return float(self.spec["beta"])

    @property
    def c(self) -> float:
        return float(self.spec["c"])

    @property
    def eps(self) -> float:
        return float(self.spec["eps"])

    @property
    def t(self) -> float:
        return float(self.run["t"])

    @property
    def N(self) -> int:
        return int(self.run["N"])

    @property
    def seed(self) -> int:
        return int(self.run["seed"])

    @property
    def threads(self) -> int:
        return int(self.run.get("threads", 1))

    @property
    def dt_max(self) -> Optional[float]:
        v = self.run.get("dt_max")
        return None if v in (None, "") else float(v)

    def get(self, key: str, default=None):
        return self.experiment.get(key, default)

    def get_float(self, key: str, default: float) -> float:
        try:
            return float(self.experiment.get(key, default))
        except ValueError as exc:
            raise ConfigError(f"experiment.{key}: not a number") from exc

    def get_int(self, key: str, default: int) -> int:
        try:
            return int(self.experiment.get(key, default))
        except ValueError as exc:
            raise ConfigError(f"experiment.{key}: not an integer") from exc

    def get_vector(self, key: str, default) -> np.ndarray:
        v = self.experiment.get(key)
        return np.asarray(default, dtype=float) if v is None else parse_vector(v)

    def get_matrix(self, key: str, default) -> np.ndarray:
        v = self.experiment.get(key)
        return np.atleast_2d(np.asarray(default, dtype=float)) if v is None else parse_matrix(v)

    # construction --------------------------------------------------------
    def build_spec(self) -> SubordinatorSpec:
        return make_stable_spec(self.beta, self.c)

    def build_model(self) -> SdeModel:
        return build_model(self.model)

    def with_overrides(self, seed: Optional[int] = None, threads: Optional[int] = None) -> "ExperimentConfig":
        run = dict(self.run)
        if seed is not None:
            run["seed"] = str(seed)
        if threads is not None:
            run["threads"] = str(threads)
        cfg = ExperimentConfig(dict(self.model), dict(self.spec), run, dict(self.experiment))
        validate(cfg)
        return cfg

    # serialization -------------------------------------------------------
    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for name in ("model", "spec", "run", "experiment"):
            section = getattr(self, name)
            cp[name] = {k: str(section[k]) for k in sorted(section)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {k: getattr(self, k) for k in ("model", "spec", "run", "experiment")}, sort_keys=True, indent=2
        )

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()[:16]


def _sections_from_text(text: str) -> dict:
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("JSON config must be an object of sections")
        return {s: {k: str(v) for k, v in (raw.get(s) or {}).items()} for s in ("model", "spec", "run", "experiment")}
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"invalid config syntax: {exc}") from exc
    return {s: dict(cp[s]) if cp.has_section(s) else {} for s in ("model", "spec", "run", "experiment")}


def _number(cfg: ExperimentConfig, section: str, key: str, kind=float):
    raw = getattr(cfg, section).get(key)
    try:
        v = kind(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: expected {kind.__name__}, got {raw!r}") from exc
    if kind is float and not math.isfinite(v):
        raise ConfigError(f"{section}.{key}: must be finite")
    return v


def validate(cfg: ExperimentConfig) -> None:
    """Raise ConfigError naming the first missing or invalid field."""
    for section, key in REQUIRED:
        if str(getattr(cfg, section).get(key, "")).strip() == "":
            raise ConfigError(f"missing field {section}.{key}")
    name = cfg.model["name"]
    if name not in MODEL_NAMES:
        raise ConfigError(f"model.name: unknown model {name!r} (expected one of {', '.join(MODEL_NAMES)})")
    beta = _number(cfg, "spec", "beta")
    if not 0.0 < beta < 1.0:
        raise ConfigError("spec.beta: must lie in (0, 1)")
    if _number(cfg, "spec", "c") <= 0:
        raise ConfigError("spec.c: must be positive")
    if not 0.0 < _number(cfg, "spec", "eps") < 1.0:
        raise ConfigError("spec.eps: must lie in (0, 1)")
    if _number(cfg, "run", "t") <= 0:
        raise ConfigError("run.t: must be positive")
    if _number(cfg, "run", "N", int) < 1:
        raise ConfigError("run.N: must be at least 1")
    if _number(cfg, "run", "seed", int) < 0:
        raise ConfigError("run.seed: must be a nonnegative integer")
    if "threads" in cfg.run and _number(cfg, "run", "threads", int) < 1:
        raise ConfigError("run.threads: must be at least 1")
    if cfg.run.get("dt_max") not in (None, "") and _number(cfg, "run", "dt_max") <= 0:
        raise ConfigError("run.dt_max: must be positive")
    try:
        build_model(cfg.model)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def build_model(section: dict) -> SdeModel:
    name = section.get("name")
    A = parse_matrix(section["A"]) if section.get("A") else None
    if name == "zero-drift":
        if not section.get("d") and A is None:
            raise ConfigError("missing field model.d")
        d = int(section["d"]) if section.get("d") else A.shape[0]
        return zero_drift(d, A)
    if name == "linear":
        if not section.get("B"):
            raise ConfigError("missing field model.B")
        B = parse_matrix(section["B"])
        return linear(B, np.eye(B.shape[0]) if A is None else A)
    if name == "kinetic-linear":
        return kinetic_linear()
    if name == "pendulum":
        return pendulum(A)
    if name == "hamiltonian":
        pot = section.get("potential", "cosine")
        k = float(section.get("strength", 1.0))
        A_v = parse_matrix(section.get("A_v", "1"))
        d = A_v.shape[0]
        if pot == "cosine":
            grad = lambda z: np.concatenate([-k * np.sin(z[..., :d]), z[..., d:]], axis=-1)  # noqa: E731
            dV = lambda x: -k * np.cos(x)  # noqa: E731
        elif pot == "quadratic":
            grad = lambda z: np.concatenate([k * z[..., :d], z[..., d:]], axis=-1)  # noqa: E731
            dV = lambda x: np.full_like(x, k)  # noqa: E731
        elif pot == "free":
            grad = lambda z: np.concatenate([np.zeros_like(z[..., :d]), z[..., d:]], axis=-1)  # noqa: E731
            dV = lambda x: np.zeros_like(x)  # noqa: E731
        else:
            raise ConfigError(f"model.potential: unknown potential {pot!r}")

        def hess(z):
            z = np.asarray(z, dtype=float)
            out = np.zeros(z.shape + (2 * d,))
            idx = np.arange(d)
            out[..., idx, idx] = dV(z[..., :d])
            out[..., d + idx, d + idx] = 1.0
            return out

        return hamiltonian_model(grad, A_v, hess)
    raise ConfigError(f"model.name: unknown model {name!r}")


def parse_config(text: str) -> ExperimentConfig:
    s = _sections_from_text(text)
    cfg = ExperimentConfig(s["model"], s["spec"], s["run"], s["experiment"])
    validate(cfg)
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
