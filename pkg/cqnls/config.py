from __future__ import annotations

import logging
import typing
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any

from dotenv import dotenv_values

from cqnls.dynamics import PropagatorConfig
from cqnls.errors import ConfigError
from cqnls.grid import GridSpec, ProblemParams
from cqnls.minimize import MinimizerConfig
from cqnls.mountain_pass import PathSpec
from cqnls.storage import format_value, write_record

logger = logging.getLogger(__name__)

SECTIONS: dict[str, type] = {
    "grid": GridSpec,
    "params": ProblemParams,
    "minimizer": MinimizerConfig,
    "path": PathSpec,
    "propagator": PropagatorConfig,
}
TOP_LEVEL = ("output_dir", "seed")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec
    params: ProblemParams
    minimizer: MinimizerConfig = field(default_factory=MinimizerConfig)
    path: PathSpec = field(default_factory=PathSpec)
    propagator: PropagatorConfig = field(default_factory=PropagatorConfig)
    output_dir: str = "results"
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if not str(self.output_dir).strip():
            raise ValueError("output_dir must not be empty")

    @classmethod
    def default(cls) -> RunConfig:
        # Three-solution demonstration regime on a desk-scale grid.
        return cls(
            grid=GridSpec.cube(64, 18.0),
            params=ProblemParams(omega=1.2e-5, k=4.0, mu=0.08, m=31.5, l=0.0, rho=8.0),
            propagator=PropagatorConfig(dt=1e-3, t_final=10.0, record_every=10),
        )

    def to_flat(self) -> dict[str, str]:
        flat: dict[str, str] = {}
        for section in SECTIONS:
            record = getattr(self, section)
            for item in fields(record):
                flat[f"{section}.{item.name}"] = format_value(getattr(record, item.name))
        flat["output_dir"] = str(self.output_dir)
        flat["seed"] = str(self.seed)
        return flat

    @classmethod
    def from_flat(cls, flat: Mapping[str, str]) -> RunConfig:
        unknown = sorted(set(flat) - set(_known_keys()))
        if unknown:
            raise ConfigError("unknown config keys", keys=",".join(unknown))
        base = cls.default().to_flat()
        base.update(flat)

        sections: dict[str, Any] = {}
        for name, record_type in SECTIONS.items():
            hints = typing.get_type_hints(record_type)
            kwargs = {}
            for item in fields(record_type):
                key = f"{name}.{item.name}"
                kwargs[item.name] = _coerce(key, base[key], hints[item.name])
            try:
                sections[name] = record_type(**kwargs)
            except (TypeError, ValueError) as error:
                raise ConfigError(f"invalid {name} section: {error}") from error
        try:
            return cls(**sections, output_dir=base["output_dir"], seed=_coerce("seed", base["seed"], int))
        except ValueError as error:
            raise ConfigError(str(error)) from error


def _known_keys() -> list[str]:
    keys = [f"{name}.{item.name}" for name, record_type in SECTIONS.items() for item in fields(record_type)]
    return [*keys, *TOP_LEVEL]


def _coerce(key: str, text: str | None, kind: Any) -> Any:
    text = "" if text is None else str(text).strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if isinstance(kind, type) and issubclass(kind, Enum):
            return kind(text)
        return text
    except ValueError as error:
        raise ConfigError(f"cannot parse {key}", value=text, reason=str(error)) from error


def parse_overrides(overrides: Iterable[str]) -> dict[str, str]:
    parsed = {}
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError("override must look like KEY=VALUE", override=item)
        parsed[key.strip()] = value.strip()
    return parsed


def apply_overrides(cfg: RunConfig, overrides: Iterable[str]) -> RunConfig:
    flat = cfg.to_flat()
    flat.update(parse_overrides(overrides))
    return RunConfig.from_flat(flat)


def load_config(
    path: str | Path | None = None,
    overrides: Iterable[str] = (),
    output_dir: str | None = None,
    seed: int | None = None,
) -> RunConfig:
    # Defaults, then the config file, then overrides, then explicit --out/--seed
    flat = RunConfig.default().to_flat()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError("config file not found", path=str(path))
        from_file = {key: value or "" for key, value in dotenv_values(path).items()}
        unknown = sorted(set(from_file) - set(flat))
        if unknown:
            raise ConfigError("unknown config keys", path=str(path), keys=",".join(unknown))
        flat.update(from_file)
        logger.debug("loaded %d keys from %s", len(from_file), path)
    flat.update(parse_overrides(overrides))
    cfg = RunConfig.from_flat(flat)
    if output_dir is not None:
        cfg = replace(cfg, output_dir=output_dir)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def dump_config(cfg: RunConfig, path: str | Path) -> Path:
    return write_record(path, cfg.to_flat())
