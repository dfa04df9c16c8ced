"""Pipeline configuration: one flat key=value document for every knob.

Keys are dotted paths (train.augment.p_each = 0.2). Precedence, lowest
to highest: dataclass defaults, config file, environment variables (data
and output roots only), command-line overrides. The global seed
propagates into every module config so one value pins a whole run.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .augmentation import AugmentPolicy
from .loss import LossConfig
from .network import ModelConfig
from .phantom import CohortEffects, PhantomSpec
from .trainer import TrainConfig

__all__ = [
    "PipelineConfig",
    "parse_config_text",
    "build_pipeline_config",
    "load_pipeline_config",
    "render_config",
    "DATA_ROOT_ENV",
    "OUTPUT_ROOT_ENV",
]

DATA_ROOT_ENV = "PATSEG_DATA_ROOT"
OUTPUT_ROOT_ENV = "PATSEG_OUTPUT_ROOT"


@dataclass(frozen=True)
class PipelineConfig:
    data_root: Path
    output_root: Path
    seed: int
    train: TrainConfig
    phantom: PhantomSpec
    effects: CohortEffects


def _parse_bool(s: str) -> bool:
    if s == "true":
        return True
    if s == "false":
        return False
    raise ValueError(f"expected true or false, got {s!r}")


def _tuple_parser(example: tuple):
    elem = type(example[0])

    def parse(s: str) -> tuple:
        return tuple(elem(part.strip()) for part in s.split(","))

    return parse


def _parser_for(default):
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, str):
        return str
    if isinstance(default, tuple) and default:
        return _tuple_parser(default)
    raise TypeError(f"no parser for default {default!r}")


def _dataclass_keys(prefix: str, instance, skip=("seed",)) -> dict:
    out = {}
    for f in dataclasses.fields(instance):
        if f.name in skip:
            continue
        value = getattr(instance, f.name)
        if dataclasses.is_dataclass(value):
            continue  # nested configs get their own prefix
        out[f"{prefix}.{f.name}"] = (prefix, f.name, _parser_for(value))
    return out


def _known_keys() -> dict:
    keys = {
        "seed": ("", "seed", int),
        "paths.data_root": ("paths", "data_root", str),
        "paths.output_root": ("paths", "output_root", str),
    }
    keys.update(_dataclass_keys("train", TrainConfig()))
    keys.update(_dataclass_keys("train.augment", AugmentPolicy()))
    keys.update(_dataclass_keys("train.loss", LossConfig()))
    keys.update(_dataclass_keys("train.model", ModelConfig()))
    keys.update(_dataclass_keys("phantom", PhantomSpec()))
    keys.update(_dataclass_keys("effects", CohortEffects()))
    return keys


KNOWN_KEYS = _known_keys()


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value strings from a config document.

    Lines are `key = value`; blank lines and `#` comments are skipped.
    Unknown or repeated keys are errors so typos cannot silently fall
    back to defaults.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in KNOWN_KEYS:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def build_pipeline_config(
    file_values: dict[str, str] | None = None,
    env: dict[str, str] | None = None,
    overrides: dict[str, str] | None = None,
) -> PipelineConfig:
    merged: dict[str, str] = dict(file_values or {})
    env = env or {}
    if DATA_ROOT_ENV in env:
        merged["paths.data_root"] = env[DATA_ROOT_ENV]
    if OUTPUT_ROOT_ENV in env:
        merged["paths.output_root"] = env[OUTPUT_ROOT_ENV]
    for key, value in (overrides or {}).items():
        if key not in KNOWN_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        merged[key] = value

    typed: dict[str, dict] = {}
    for key, raw in merged.items():
        prefix, field, parser = KNOWN_KEYS[key]
        try:
            typed.setdefault(prefix, {})[field] = parser(raw)
        except ValueError as exc:
            raise ValueError(f"bad value for {key}: {exc}") from None

    seed = typed.get("", {}).get("seed", 0)
    paths = typed.get("paths", {})
    augment = AugmentPolicy(**typed.get("train.augment", {}), seed=seed)
    loss = LossConfig(**typed.get("train.loss", {}))
    model = ModelConfig(**typed.get("train.model", {}))
    train = TrainConfig(
        **typed.get("train", {}),
        seed=seed, augment=augment, loss=loss, model=model,
    )
    phantom = PhantomSpec(**typed.get("phantom", {}), seed=seed)
    effects = CohortEffects(**typed.get("effects", {}))
    return PipelineConfig(
        data_root=Path(paths.get("data_root", ".")),
        output_root=Path(paths.get("output_root", "out")),
        seed=seed,
        train=train,
        phantom=phantom,
        effects=effects,
    )


def load_pipeline_config(
    path=None,
    env: dict[str, str] | None = None,
    overrides: dict[str, str] | None = None,
) -> PipelineConfig:
    file_values = None
    if path is not None:
        file_values = parse_config_text(Path(path).read_text())
    return build_pipeline_config(file_values, env, overrides)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(cfg: PipelineConfig) -> str:
    """The full resolved configuration as a loadable document."""
    sections = {
        "": {"seed": cfg.seed},
        "paths": {"data_root": cfg.data_root, "output_root": cfg.output_root},
        "train": cfg.train,
        "train.augment": cfg.train.augment,
        "train.loss": cfg.train.loss,
        "train.model": cfg.train.model,
        "phantom": cfg.phantom,
        "effects": cfg.effects,
    }
    lines = []
    for key in sorted(KNOWN_KEYS):
        prefix, field, _ = KNOWN_KEYS[key]
        holder = sections[prefix]
        value = holder[field] if isinstance(holder, dict) else getattr(holder, field)
        lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"
