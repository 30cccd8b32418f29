"""Configuration, architecture tags and the seeding contract.

Randomness: every random stream is a ``numpy.random.Generator`` backed by
PCG64, seeded through ``SeedSequence([seed, stream_index, purpose_key])``
where ``purpose_key`` is the first 8 bytes (big-endian) of the SHA-256 of the
purpose label.  The mapping is fixed for a given repository version, so a
(seed, stream_index, purpose) triple always reproduces the same numbers no
matter how work is scheduled across processes.
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

ARCH_KINDS = ("linear", "erf", "nn")
STRATEGIES = ("none", "constant", "greedy", "greedy-sample", "greedy-partial", "clairvoyant")

RngStream = np.random.Generator


class ConfigError(ValueError):
    """Raised when a configuration violates one of its invariants."""


@dataclass(frozen=True)
class Architecture:
    """Model family shared by teacher, student and target.

    ``kind`` is ``linear`` (w.x/sqrt(D)), ``erf`` (sigmoidal perceptron) or
    ``nn`` (two-layer erf network with ``M`` hidden units and a linear read-out).
    """

    kind: str = "linear"
    M: int = 1

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear"


@dataclass(frozen=True)
class AttackSettings:
    strategy: str = "greedy"
    grid_points: int = 501
    n_mc: int = 100
    buffer_capacity: int | None = None
    a_const: float | None = None
    calibrate: bool = False
    calib_grid: int = 11
    calib_streams: int = 10
    calib_len: int = 2000
    cv_max_iters: int = 2000
    cv_tol: float = 1e-6


@dataclass(frozen=True)
class TSAConfig:
    D: int = 10
    P: int = 1
    eta: float | None = None
    C: float = 1.0
    gamma: float = 0.995
    gamma_tilde: float | None = None
    a_min: float = -2.0
    a_max: float = 3.0
    rho: float = 1.0
    sigma2: float = 1.0
    weight_decay: float = 0.0
    arch: Architecture = field(default_factory=Architecture)
    seed: int = 0
    stream_len: int = 10_000
    clean_steps: int | None = None
    sample_specific: bool = False
    n_streams: int = 10
    window: int = 1000
    n_eval: int = 10_000
    eval_every: int = 1
    attack: AttackSettings = field(default_factory=AttackSettings)
    n_poisoned: int | None = None

    @property
    def strategy(self) -> str:
        return self.attack.strategy

    def with_updates(self, **dotted: Any) -> "TSAConfig":
        return set_dotted(self, dotted)


def default_eta(D: int, arch: Architecture) -> float:
    if arch.kind == "nn":
        return 0.02 * D * math.sqrt(arch.M)
    return 0.02 * D


def optimal_gamma_tilde_default(D: int, sigma2: float, eta: float) -> float:
    return D / (sigma2 * eta)


def validate(config: TSAConfig) -> TSAConfig:
    """Check invariants and fill derived fields (eta, gamma_tilde, n_poisoned, clean_steps)."""
    c = config
    a = c.arch
    if a.kind not in ARCH_KINDS:
        raise ConfigError(f"arch.kind must be one of {ARCH_KINDS}, got {a.kind!r}")
    if a.kind == "nn" and a.M < 1:
        raise ConfigError("arch.M must be ≥ 1")
    if c.D < 1:
        raise ConfigError("D must be ≥ 1")
    if c.P < 1:
        raise ConfigError("P must be ≥ 1")
    if c.eta is not None and not c.eta > 0:
        raise ConfigError("eta must be > 0")
    if not c.C >= 0:
        raise ConfigError("C must be ≥ 0")
    if not 0 < c.gamma < 1:
        raise ConfigError("gamma must lie in (0, 1)")
    if c.gamma_tilde is not None and not c.gamma_tilde > 0:
        raise ConfigError("gamma_tilde must be > 0")
    if not c.a_min <= c.a_max:
        raise ConfigError("a_min must be ≤ a_max")
    if not 0 < c.rho <= 1:
        raise ConfigError("rho must lie in (0, 1]")
    if not c.sigma2 > 0:
        raise ConfigError("sigma2 must be > 0")
    if not c.weight_decay >= 0:
        raise ConfigError("weight_decay must be ≥ 0")
    if not 0 <= c.seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if c.stream_len < 1:
        raise ConfigError("stream_len must be ≥ 1")
    if c.clean_steps is not None and c.clean_steps < 0:
        raise ConfigError("clean_steps must be ≥ 0")
    if c.n_streams < 1:
        raise ConfigError("n_streams must be ≥ 1")
    if c.window < 1:
        raise ConfigError("window must be ≥ 1")
    if c.n_eval < 1:
        raise ConfigError("n_eval must be ≥ 1")
    if c.eval_every < 1:
        raise ConfigError("eval_every must be ≥ 1")
    s = c.attack
    if s.strategy not in STRATEGIES:
        raise ConfigError(f"attack.strategy must be one of {STRATEGIES}, got {s.strategy!r}")
    if s.grid_points < 1:
        raise ConfigError("attack.grid_points must be ≥ 1")
    if s.n_mc < 1:
        raise ConfigError("attack.n_mc must be ≥ 1")
    if s.buffer_capacity is not None and s.buffer_capacity < 1:
        raise ConfigError("attack.buffer_capacity must be ≥ 1")
    if s.strategy == "clairvoyant" and a.kind == "nn":
        raise ConfigError("attack.strategy 'clairvoyant' is unsupported for arch.kind 'nn'")

    rho_p = c.rho * c.P
    n_poisoned = round(rho_p)
    if abs(rho_p - n_poisoned) > 1e-9 or n_poisoned < 1:
        raise ConfigError(f"rho*P must be an integer ≥ 1 (rho*P={rho_p:g})")

    eta = c.eta if c.eta is not None else default_eta(c.D, a)
    gamma_tilde = c.gamma_tilde if c.gamma_tilde is not None else optimal_gamma_tilde_default(c.D, c.sigma2, eta)
    clean_steps = c.clean_steps if c.clean_steps is not None else math.ceil(8 * c.D / (c.sigma2 * eta))

    attack = s
    sample_specific = c.sample_specific or s.strategy == "greedy-sample"
    if sample_specific and s.strategy == "greedy":
        attack = replace(s, strategy="greedy-sample")
    return replace(
        c, eta=float(eta), gamma_tilde=float(gamma_tilde), n_poisoned=int(n_poisoned),
        clean_steps=int(clean_steps), sample_specific=sample_specific, attack=attack,
    )


def _purpose_key(purpose: str) -> int:
    return int.from_bytes(hashlib.sha256(purpose.encode("utf-8")).digest()[:8], "big")


def derive_rng(seed: int, stream_index: int, purpose: str) -> RngStream:
    ss = np.random.SeedSequence([int(seed), int(stream_index), _purpose_key(purpose)])
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# config file (YAML, nested mappings; every field reachable by a dotted path)

_NESTED = {"arch": Architecture, "attack": AttackSettings}


def to_dict(config: TSAConfig) -> dict:
    return dataclasses.asdict(config)


def from_dict(data: dict) -> TSAConfig:
    data = dict(data)
    known = {f.name for f in fields(TSAConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, cls in _NESTED.items():
        if key in data:
            sub = data[key]
            if isinstance(sub, cls):
                continue
            if not isinstance(sub, dict):
                raise ConfigError(f"{key} must be a mapping")
            sub_known = {f.name for f in fields(cls)}
            bad = set(sub) - sub_known
            if bad:
                raise ConfigError(f"unknown config keys: {sorted(f'{key}.{b}' for b in bad)}")
            data[key] = cls(**sub)
    return TSAConfig(**data)


def dotted_paths() -> list[str]:
    out = []
    for f in fields(TSAConfig):
        if f.name in _NESTED:
            out.extend(f"{f.name}.{g.name}" for g in fields(_NESTED[f.name]))
        else:
            out.append(f.name)
    return out


def set_dotted(config: TSAConfig, updates: dict[str, Any]) -> TSAConfig:
    data = to_dict(config)
    for path, value in updates.items():
        head, _, tail = path.partition(".")
        if tail:
            if head not in _NESTED or not isinstance(data.get(head), dict):
                raise ConfigError(f"unknown config key: {path}")
            if tail not in {f.name for f in fields(_NESTED[head])}:
                raise ConfigError(f"unknown config key: {path}")
            data[head][tail] = value
        else:
            if head not in data or head in _NESTED:
                raise ConfigError(f"unknown config key: {path}")
            data[head] = value
    return from_dict(data)


def parse_override(text: str) -> tuple[str, Any]:
    """Parse ``key=value``; the value is read as a YAML scalar."""
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def dump_config(config: TSAConfig) -> str:
    return yaml.safe_dump(to_dict(config), sort_keys=False)


def load_config(path: str | Path) -> TSAConfig:
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping at top level")
    return from_dict(data)


def save_config(config: TSAConfig, path: str | Path) -> None:
    Path(path).write_text(dump_config(config))
