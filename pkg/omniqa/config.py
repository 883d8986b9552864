"""
Flat key=value configuration files.

    # comments and blank lines are ignored
    n_viewpoints = 20
    scales = 1.2, 2.4, 4.8
    train.seed = 3

A bare key sets the field of that name in every section that has it
(`seed` exists in both the model and the training section); a
`section.key` sets one section only.
"""
from dataclasses import dataclass, field, fields, replace
from typing import Dict, get_type_hints

import logging

from omniqa.model import ModelConfig
from omniqa.trainer import TrainConfig
from omniqa.utils.errors import DataError
from omniqa.viewpoint import DetectorConfig

logger = logging.getLogger(__name__)

_TRUE = ('1', 'true', 'yes', 'on')
_FALSE = ('0', 'false', 'no', 'off')


@dataclass
class RunConfig:
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    SECTIONS = ('detector', 'model', 'train')


def _parse_value(raw: str, hint):
    if hint is bool:
        lowered = raw.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    if hint is str:
        return raw
    # Tuple[float, ...]
    return tuple(float(v) for v in raw.split(',') if v.strip())


def parse_config(text: str, source: str = '<config>', base: RunConfig = None) -> RunConfig:
    """
    :raises DataError: naming the line of an unknown key, a malformed line or
                       a value that does not parse or validate.
    """
    base = base or RunConfig()
    hints = {name: get_type_hints(type(getattr(base, name))) for name in RunConfig.SECTIONS}
    updates: Dict[str, Dict] = {name: {} for name in RunConfig.SECTIONS}
    lines: Dict[str, int] = {}

    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise DataError(f"{source}:{number}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split('=', 1))

        if '.' in key:
            section, name = key.split('.', 1)
            targets = [section] if section in hints and name in hints[section] else []
        else:
            name = key
            targets = [s for s in RunConfig.SECTIONS if name in hints[s]]
        if not targets:
            raise DataError(f"{source}:{number}: unknown key {key!r}")

        for section in targets:
            try:
                updates[section][name] = _parse_value(raw, hints[section][name])
            except ValueError as err:
                raise DataError(f"{source}:{number}: bad value for {key}: {err}") from None
            lines[section] = number

    sections = {}
    for section in RunConfig.SECTIONS:
        try:
            sections[section] = replace(getattr(base, section), **updates[section])
        except ValueError as err:
            raise DataError(f"{source}:{lines.get(section, 0)}: {err}") from None
    return RunConfig(**sections)


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as err:
        raise DataError(f"cannot read config {path}: {err}") from err
    cfg = parse_config(text, source=path)
    logger.debug("config %s: %s", path, cfg)
    return cfg


def format_config(cfg: RunConfig) -> str:
    """Inverse of `parse_config`: every field as section.key = value."""
    out = []
    for section in RunConfig.SECTIONS:
        for f in fields(getattr(cfg, section)):
            value = getattr(getattr(cfg, section), f.name)
            if isinstance(value, tuple):
                value = ', '.join(repr(v) for v in value)
            out.append(f'{section}.{f.name} = {value}')
    return '\n'.join(out) + '\n'
