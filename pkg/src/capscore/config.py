"""Run configuration: one YAML file describing backends, roster and knobs.

String values support ${ENV_VAR} interpolation so endpoints and similar
settings can stay out of version control; actual secrets never live in
the file at all (backends name an env var via credentials_env). Relative
paths resolve against the config file's directory.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import yaml

from .alignment import PPOConfig
from .errors import ConfigError
from .gateway import BackendSpec

_ENV_PATTERN = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _interpolate(value, source: str):
    if isinstance(value, str):
        def sub(match):
            name = match.group(1)
            if name not in os.environ:
                raise ConfigError(f"{source}: environment variable {name} is not set")
            return os.environ[name]

        return _ENV_PATTERN.sub(sub, value)
    if isinstance(value, dict):
        return {k: _interpolate(v, source) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v, source) for v in value]
    return value


@dataclass(frozen=True)
class ChannelSettings:
    alpha_r: float = 0.5
    min_margin: float = 0.0
    n_candidates: int = 4
    precision_floor: Optional[float] = None


@dataclass(frozen=True)
class ToySettings:
    """Dimensions and training knobs for the desk-scale alignment loop."""

    vocab_size: int = 8
    max_len: int = 8
    rm_lr: float = 0.1
    rm_epochs: int = 1
    rm_holdout_frac: float = 0.2
    ppo_steps: int = 50
    prompt_pool: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    backends: dict[str, BackendSpec]
    cache_dir: str = ".capscore-cache"
    templates_dir: Optional[str] = None
    seed: int = 0
    max_workers: int = 4
    # roster: which backend plays which role
    decompose_backend: str = ""
    match_backend: str = ""
    verify_backend: str = ""
    generate_backend: str = ""
    ensemble: tuple[str, ...] = ()
    channels: ChannelSettings = field(default_factory=ChannelSettings)
    toy: ToySettings = field(default_factory=ToySettings)
    ppo: PPOConfig = field(default_factory=PPOConfig)

    def backend(self, name: str) -> BackendSpec:
        if name not in self.backends:
            raise ConfigError(
                f"backend {name!r} is not defined (have: {sorted(self.backends)})"
            )
        return self.backends[name]

    def ensure_cache_writable(self) -> None:
        try:
            Path(self.cache_dir).mkdir(parents=True, exist_ok=True)
            probe = Path(self.cache_dir) / ".write-probe"
            probe.touch()
            probe.unlink()
        except OSError as exc:
            raise ConfigError(f"cache dir {self.cache_dir} is not writable: {exc}") from exc

    def ensemble_backends(self) -> list[BackendSpec]:
        if not self.ensemble:
            raise ConfigError("config defines no ensemble backends")
        return [self.backend(name) for name in self.ensemble]

    def to_snapshot(self) -> dict:
        """Resolved settings for reproducibility records (no secrets)."""
        return {
            "seed": self.seed,
            "cache_dir": self.cache_dir,
            "templates_dir": self.templates_dir,
            "max_workers": self.max_workers,
            "backends": {
                name: {
                    "kind": spec.kind,
                    "model_id": spec.model_id,
                    "endpoint": spec.endpoint,
                    "max_parallel": spec.max_parallel,
                    "timeout": spec.timeout,
                }
                for name, spec in sorted(self.backends.items())
            },
            "roster": {
                "decompose": self.decompose_backend,
                "match": self.match_backend,
                "verify": self.verify_backend,
                "generate": self.generate_backend,
                "ensemble": list(self.ensemble),
            },
            "channels": dict(self.channels.__dict__),
            "toy": dict(self.toy.__dict__),
            "ppo": dict(self.ppo.__dict__),
        }


def _resolve_path(value: Optional[str], base: Path) -> Optional[str]:
    if value is None:
        return None
    path = Path(value)
    return str(path if path.is_absolute() else base / path)


def load_config(path: str | Path, seed_override: Optional[int] = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    base = path.parent
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    raw = _interpolate(raw, str(path))

    backends = {}
    for entry in raw.get("backends", []):
        try:
            spec = BackendSpec(
                name=entry["name"],
                kind=entry.get("kind", "remote-chat"),
                model_id=entry.get("model_id", ""),
                endpoint=entry.get("endpoint"),
                credentials_env=entry.get("credentials_env"),
                fixtures_dir=_resolve_path(entry.get("fixtures_dir"), base),
                max_parallel=int(entry.get("max_parallel", 4)),
                timeout=float(entry.get("timeout", 60.0)),
            )
        except KeyError as exc:
            raise ConfigError(f"{path}: backend entry missing {exc}") from exc
        if spec.name in backends:
            raise ConfigError(f"{path}: duplicate backend name {spec.name!r}")
        backends[spec.name] = spec

    roster = raw.get("roster", {})
    try:
        channels = ChannelSettings(**raw.get("channels", {}))
        toy = ToySettings(**{
            **raw.get("toy", {}),
            "prompt_pool": _resolve_path(raw.get("toy", {}).get("prompt_pool"), base),
        })
        ppo = PPOConfig(**raw.get("ppo", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: bad settings: {exc}") from exc

    cfg = RunConfig(
        backends=backends,
        cache_dir=_resolve_path(raw.get("cache_dir", ".capscore-cache"), base),
        templates_dir=_resolve_path(raw.get("templates_dir"), base),
        seed=int(raw.get("seed", 0)),
        max_workers=int(raw.get("max_workers", 4)),
        decompose_backend=roster.get("decompose", ""),
        match_backend=roster.get("match", ""),
        verify_backend=roster.get("verify", ""),
        generate_backend=roster.get("generate", ""),
        ensemble=tuple(roster.get("ensemble", [])),
        channels=channels,
        toy=toy,
        ppo=ppo,
    )
    if seed_override is not None:
        cfg = replace(cfg, seed=seed_override)

    for role, name in (
        ("decompose", cfg.decompose_backend),
        ("match", cfg.match_backend),
        ("verify", cfg.verify_backend),
        ("generate", cfg.generate_backend),
    ):
        if name and name not in backends:
            raise ConfigError(f"{path}: roster.{role} references unknown backend {name!r}")
    for name in cfg.ensemble:
        if name not in backends:
            raise ConfigError(f"{path}: ensemble references unknown backend {name!r}")
    return cfg
