"""Run configuration: typed flat key/value files plus environment overrides.

Precedence, lowest to highest: dataclass defaults (the reference
hyperparameter table where the paper trail specifies one), config file,
``GOSSIPSAC_<KEY>`` environment variables, explicit overrides (CLI flags).
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from typing import Any, get_type_hints

ENV_PREFIX = "GOSSIPSAC_"


@dataclass
class RunConfig:
    # environment
    env: str = "ring"
    n_agents: int = 4
    steps_per_epoch: int = 500
    epochs: int = 200
    ring_circumference: float = 200.0
    ring_dt: float = 0.1
    ring_accel_max: float = 3.0
    ring_v_desired: float = 20.0
    ring_v_limit: float = 30.0
    ring_gap_min: float = 2.0
    ring_v_init_min: float = 0.0
    ring_v_init_max: float = 5.0
    # learner
    hidden: tuple[int, ...] = (64, 64)
    buffer_capacity: int = 100_000
    batch_size: int = 256
    lr_policy: float = 4e-5
    lr_critic: float = 3e-4
    lr_alpha: float = 3e-4
    gamma: float = 0.99
    polyak: float = 1e-3
    policy_delay: int = 10
    init_alpha: float = 0.2
    # communication / mixing
    mode: str = "rsm"              # rsm | avg | none
    comm_interval: int = 8         # policy updates between comm rounds
    n_segments: int = 4
    n_replicas: int = 3
    prr: float = 1.0
    comm_range: float = 90.0
    payload_bytes: int = 4480
    advantage_samples: int = 50
    k_entropy: int = 16
    n_value_actions: int = 8
    n_fim_actions: int = 1
    fim_mode: str = "batch_mean"
    c_safety: float = 0.9
    zeta_cap: float = 1.0
    weight_clip: float = 20.0
    # bookkeeping
    seed: int = 0
    eval_every: int = 10
    eval_episodes: int = 2
    figures: bool = True
    record_wallclock: bool = False  # off by default: keeps CSVs bit-reproducible


_MODES = ("rsm", "avg", "none")


def _parse_value(raw: str, target_type: Any) -> Any:
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is str:
        return raw
    if target_type == tuple[int, ...]:
        return tuple(int(x) for x in raw.replace("(", "").replace(")", "")
                     .split(",") if x.strip())
    raise ValueError(f"unsupported config field type {target_type}")


def _field_types() -> dict[str, Any]:
    hints = get_type_hints(RunConfig)
    return {f.name: hints[f.name] for f in fields(RunConfig)}


def parse_config_text(text: str) -> dict[str, Any]:
    """Parse ``key = value`` lines; '#' starts a comment."""
    types = _field_types()
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        out[key] = _parse_value(raw, types[key])
    return out


def _env_overrides() -> dict[str, Any]:
    types = _field_types()
    out: dict[str, Any] = {}
    for key, typ in types.items():
        raw = os.environ.get(ENV_PREFIX + key.upper())
        if raw is not None:
            out[key] = _parse_value(raw, typ)
    return out


def load_config(path: str | None = None, **overrides: Any) -> RunConfig:
    """Defaults -> file -> environment -> explicit overrides."""
    values: dict[str, Any] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    values.update(_env_overrides())
    for key, val in overrides.items():
        if val is None:
            continue
        if key not in _field_types():
            raise ValueError(f"unknown config key {key!r}")
        values[key] = val
    cfg = RunConfig(**values)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}")
    positive = ("n_agents", "steps_per_epoch", "epochs", "buffer_capacity",
                "batch_size", "comm_interval", "n_segments",
                "advantage_samples", "k_entropy", "n_value_actions",
                "n_fim_actions", "eval_every", "eval_episodes")
    for name in positive:
        if getattr(cfg, name) <= 0:
            raise ValueError(f"{name} must be positive")
    if cfg.n_replicas < 0:  # zero replicas = communication disabled
        raise ValueError("n_replicas must be non-negative")
    if not 0.0 <= cfg.prr <= 1.0:
        raise ValueError("prr must lie in [0, 1]")
    if not 0.0 < cfg.gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if not 0.0 <= cfg.zeta_cap <= 1.0:
        raise ValueError("zeta_cap must lie in [0, 1]")


def config_to_text(cfg: RunConfig) -> str:
    """Serialize a config in the same flat format the parser reads."""
    lines = []
    for f in fields(RunConfig):
        val = getattr(cfg, f.name)
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


def as_dict(cfg: RunConfig) -> dict[str, Any]:
    return dataclasses.asdict(cfg)
