"""Experiment configuration and seeded random substreams.

The on-disk format is TOML. Powers, losses and gains may be given either in
linear units (``kappa``, ``sigma2``, ``G_S``, ``G_D``, ``P0``) or in decibels
(``kappa_db``, ``sigma2_dbm``, ``G_S_dbi``, ``G_D_dbi``, ``P0_dbm``). The
loader converts once; every field of :class:`SystemConfig` is linear SI.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import tomli


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration input."""


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(w: float) -> float:
    return 10.0 * math.log10(w) + 30.0


@dataclass(frozen=True)
class PathLossConfig:
    alpha: float = 3.8
    kappa: float = 1e-6
    G_S: float = 10 ** 0.5
    G_D: float = 1.0
    Delta: float = 100.0
    ps_height: float = 10.0
    placement_law: str = "disk_uniform"


@dataclass(frozen=True)
class LearningConfig:
    # "auto" sets each rate to 1/omega_k estimated from the task data
    eta: tuple[float, ...] | str = "auto"
    local_steps: int = 1
    batch_fraction: float = 1.0
    lam: float = 1e-3
    features: int = 20
    classes: int = 10
    samples_per_device: int = 100
    test_samples: int = 2000
    partition: str = "iid"
    classes_per_device: int = 5
    class_sep: float = 1.0


@dataclass(frozen=True)
class CorrelationConfig:
    mode: str = "uniform"
    epsilon: float = 1.0


@dataclass(frozen=True)
class OptimizerConfig:
    I_max: int = 50
    rel_tol: float = 1e-6
    refresh_y_per_device: bool = False


@dataclass(frozen=True)
class GibbsConfig:
    enabled: bool = False
    J_max: int = 50
    beta0: float = 1.0
    gamma: float = 0.9
    # AO sweeps used to score each candidate; 0 means optimizer.I_max. With a
    # smaller budget the winning selection is re-optimized with the full one.
    score_I_max: int = 0


@dataclass(frozen=True)
class SystemConfig:
    K: int = 2
    M: tuple[int, ...] = (10, 10)
    N_T: int = 2
    N_R: int = 8
    P0: float = 1.0
    sigma2: float = 1e-11
    rounds: int = 100
    seed: int = 0
    pathloss: PathLossConfig = field(default_factory=PathLossConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    correlation: CorrelationConfig = field(default_factory=CorrelationConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    gibbs: GibbsConfig = field(default_factory=GibbsConfig)

    @property
    def model_dim(self) -> int:
        """Parameter count of one task model (weights plus biases)."""
        return (self.learning.features + 1) * self.learning.classes

    @property
    def D(self) -> int:
        # one zero entry pads an odd-sized model
        return self.model_dim + self.model_dim % 2

    @property
    def total_devices(self) -> int:
        return sum(self.M)

    def task_of_device(self) -> np.ndarray:
        return np.repeat(np.arange(self.K), self.M)

    def validate(self) -> "SystemConfig":
        checks = [
            (self.K >= 1, "K >= 1"),
            (len(self.M) == self.K, "len(M) != K"),
            (all(m >= 1 for m in self.M), "all M_k >= 1"),
            (self.N_T >= 1, "N_T >= 1"),
            (self.N_R >= 1, "N_R >= 1"),
            (self.P0 > 0, "P0 > 0"),
            (self.sigma2 >= 0, "sigma2 >= 0"),
            (self.rounds >= 0, "rounds >= 0"),
            (0 <= self.seed < 2 ** 64, "seed is a 64-bit unsigned integer"),
            (self.pathloss.alpha >= 0, "alpha >= 0"),
            (self.pathloss.kappa > 0, "kappa > 0"),
            (self.pathloss.G_S > 0 and self.pathloss.G_D > 0, "antenna gains > 0"),
            (self.pathloss.Delta > 0, "Delta > 0"),
            (self.pathloss.ps_height >= 0, "ps_height >= 0"),
            (self.pathloss.placement_law in ("disk_uniform", "paper_literal"),
             "placement_law in {disk_uniform, paper_literal}"),
            (self.correlation.mode in ("uniform", "empirical"),
             "correlation.mode in {uniform, empirical}"),
            (0.0 <= self.correlation.epsilon <= 1.0, "0 <= epsilon <= 1"),
            (0.0 < self.gibbs.gamma < 1.0, "0 < gamma < 1"),
            (self.gibbs.beta0 > 0, "beta0 > 0"),
            (self.gibbs.J_max >= 0, "J_max >= 0"),
            (self.gibbs.score_I_max >= 0, "score_I_max >= 0"),
            (self.optimizer.I_max >= 1, "I_max >= 1"),
            (self.optimizer.rel_tol >= 0, "rel_tol >= 0"),
            (self.learning.local_steps >= 1, "local_steps >= 1"),
            (0 < self.learning.batch_fraction <= 1, "0 < batch_fraction <= 1"),
            (self.learning.lam > 0, "lam > 0"),
            (self.learning.features >= 1 and self.learning.classes >= 2,
             "features >= 1 and classes >= 2"),
            (self.learning.samples_per_device >= 1, "samples_per_device >= 1"),
            (self.learning.partition in ("iid", "noniid"), "partition in {iid, noniid}"),
            (1 <= self.learning.classes_per_device <= self.learning.classes,
             "1 <= classes_per_device <= classes"),
        ]
        if not isinstance(self.learning.eta, str):
            checks.append((len(self.learning.eta) == self.K, "len(eta) != K"))
            checks.append((all(e > 0 for e in self.learning.eta), "eta > 0"))
        elif self.learning.eta != "auto":
            checks.append((False, "eta is a list of rates or 'auto'"))
        for ok, msg in checks:
            if not ok:
                raise ConfigError(f"invalid config: {msg}")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def canonical(self) -> str:
        """Deterministic JSON text of every field."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def replace(self, **changes: Any) -> "SystemConfig":
        return dataclasses.replace(self, **changes).validate()


_SECTIONS = {
    "pathloss": PathLossConfig,
    "learning": LearningConfig,
    "correlation": CorrelationConfig,
    "optimizer": OptimizerConfig,
    "gibbs": GibbsConfig,
}

# dB-valued keys and their converters into the linear field they replace
_DB_KEYS = {
    ("", "sigma2_dbm"): ("sigma2", dbm_to_watt),
    ("", "P0_dbm"): ("P0", dbm_to_watt),
    ("pathloss", "kappa_db"): ("kappa", db_to_linear),
    ("pathloss", "G_S_dbi"): ("G_S", db_to_linear),
    ("pathloss", "G_D_dbi"): ("G_D", db_to_linear),
}


def _convert_db(section: str, table: dict[str, Any]) -> dict[str, Any]:
    out = {}
    for key, value in table.items():
        spec = _DB_KEYS.get((section, key))
        if spec is None:
            out[key] = value
            continue
        linear_key, conv = spec
        if linear_key in table:
            raise ConfigError(f"both {key} and {linear_key} given")
        out[linear_key] = conv(float(value))
    return out


def _build_section(cls: type, section: str, table: Mapping[str, Any]) -> Any:
    if not isinstance(table, Mapping):
        raise ConfigError(f"[{section}] must be a table")
    table = _convert_db(section, dict(table))
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in table:
            kwargs[f.name] = _coerce(f.name, table[f.name])
    return cls(**kwargs)


def _coerce(name: str, value: Any) -> Any:
    if isinstance(value, list):
        return tuple(value)
    if isinstance(value, int) and not isinstance(value, bool) and name not in (
        "K", "N_T", "N_R", "rounds", "seed", "I_max", "J_max", "score_I_max", "local_steps",
        "features", "classes", "samples_per_device", "test_samples",
        "classes_per_device",
    ):
        return float(value)
    return value


def config_from_dict(data: Mapping[str, Any]) -> SystemConfig:
    data = dict(data)
    sections = {}
    for name, cls in _SECTIONS.items():
        sections[name] = _build_section(cls, name, data.pop(name, {}))
    top = _convert_db("", data)
    names = {f.name for f in dataclasses.fields(SystemConfig)} - set(_SECTIONS)
    unknown = set(top) - names
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    kwargs = {k: _coerce(k, v) for k, v in top.items()}
    try:
        cfg = SystemConfig(**kwargs, **sections)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def apply_overrides(data: dict[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    """Apply ``key=value`` strings (dotted keys, TOML-literal values)."""
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        try:
            value = tomli.loads(f"v = {raw.strip()}")["v"]
        except tomli.TOMLDecodeError:
            value = raw.strip()
        parts = key.split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        # a dB override replaces a linear value (and vice versa)
        section = parts[0] if len(parts) > 1 else ""
        for (sec, dbk), (lin, _) in _DB_KEYS.items():
            if sec == section and parts[-1] == dbk:
                node.pop(lin, None)
            elif sec == section and parts[-1] == lin:
                node.pop(dbk, None)
        node[parts[-1]] = value
    return data


def read_config_dict(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"parse error in {path}: {exc}") from exc


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> SystemConfig:
    return config_from_dict(apply_overrides(read_config_dict(path), overrides))


def substream(seed: int | SystemConfig, label: str) -> np.random.Generator:
    """Independent generator keyed by ``(seed, label)``.

    The label is hashed with SHA-256; the seed and the first four 32-bit words
    of the digest form the entropy of a :class:`numpy.random.SeedSequence`.
    """
    if not label:
        raise ValueError("substream label must be nonempty")
    if isinstance(seed, SystemConfig):
        seed = seed.seed
    words = np.frombuffer(hashlib.sha256(label.encode()).digest()[:16], dtype="<u4")
    entropy = [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF, *map(int, words)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
