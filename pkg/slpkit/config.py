#!/usr/bin/env python3

"""
Run configuration: every setting of every component, loaded from a plain-text
file and overridden from the command line.

Config files contain one setting per line:

    # Comments and blank lines are ignored.
    seed = 1
    model.d_model = 64
    train.regime = pretrain
    encoder.frames_per_char = 2-4

The top-level seed also seeds training and the pseudo-encoder, unless
`train.seed` or `encoder.seed` are given explicitly.
"""

import enum
import logging

from pathlib import Path
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator
from .model import ModelConfig
from .trainer import TrainConfig, MaskingPolicy
from .generator import DecodeConfig
from .corpus import PseudoEncoderConfig, CorpusConfig
from .tokenizer import VocabConfig
from .util import default_seed, format_float
from .errors import ConfigError

log = logging.getLogger(__name__)

# Sections whose seed follows the top-level seed unless given explicitly.
SEEDED_SECTIONS = 'train', 'encoder'

class RunConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    seed: int = 0
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    masking: MaskingPolicy = MaskingPolicy()
    decode: DecodeConfig = DecodeConfig()
    encoder: PseudoEncoderConfig = PseudoEncoderConfig()
    corpus: CorpusConfig = CorpusConfig()
    vocab: VocabConfig = VocabConfig()

    @model_validator(mode='after')
    def _check_sections_agree(self):
        if self.encoder.d_speech != self.model.d_speech:
            raise ValueError(f"encoder.d_speech ({self.encoder.d_speech}) must equal model.d_speech ({self.model.d_speech})")
        if self.decode.max_len > self.model.max_text:
            raise ValueError(f"decode.max_len ({self.decode.max_len}) can't exceed model.max_text ({self.model.max_text})")
        return self

    @classmethod
    def sections(cls):
        return [k for k in cls.model_fields if k != 'seed']


def load_config(path=None, overrides=(), flags=None):
    """
    Resolve a run configuration.

    Settings are taken from, in increasing order of precedence: the defaults,
    the config file at *path*, the ``key=value`` strings in *overrides*, and
    the *flags* dictionary (keys like ``'train.epochs'``; None values are
    ignored).  The seed falls back to ``$SLP_SEED`` if it isn't set anywhere.
    """
    settings = {}

    if path is not None:
        settings.update(_read_config_file(path))

    for override in overrides:
        key, sep, value = override.partition('=')
        if not sep:
            raise ConfigError(f"expected 'key=value', not {override!r}")
        settings[_check_key(key.strip())] = value.strip()

    for key, value in (flags or {}).items():
        if value is not None:
            settings[_check_key(key)] = str(value)

    if 'seed' not in settings:
        settings['seed'] = str(default_seed())

    for section in SEEDED_SECTIONS:
        settings.setdefault(f'{section}.seed', settings['seed'])

    nested = {}
    for key, value in settings.items():
        if '.' in key:
            section, name = key.split('.', 1)
            nested.setdefault(section, {})[name] = _parse_value(value)
        else:
            nested[key] = _parse_value(value)

    try:
        return RunConfig(**nested)
    except ValidationError as err:
        raise ConfigError(_describe(err)) from None

def format_config(config):
    """
    Render every setting, sorted by key, in the same syntax that config files
    use.  Loading the output gives back the same configuration.
    """
    return [f'{k} = {_format_value(v)}' for k, v in sorted(_flatten(config))]

def log_config(config):
    for line in format_config(config):
        log.info(line)


def _read_config_file(path):
    settings = {}

    try:
        lines = Path(path).read_text(encoding='utf8').split('\n')
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None

    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue

        key, sep, value = line.partition('=')
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', not {line!r}")

        try:
            settings[_check_key(key.strip())] = value.strip()
        except ConfigError as err:
            raise ConfigError(f"{path}:{lineno}: {err}") from None

    return settings

def _check_key(key):
    if key == 'seed':
        return key

    section, sep, name = key.partition('.')
    if not sep or not name:
        raise ConfigError(f"setting names must look like 'section.key', not {key!r}")

    sections = RunConfig.sections()
    if section not in sections:
        raise ConfigError(f"unknown section {section!r} (expected one of: {', '.join(sections)})")

    fields = RunConfig.model_fields[section].annotation.model_fields
    if name not in fields:
        raise ConfigError(f"unknown setting {key!r}")

    return key

def _parse_value(value):
    return None if value.lower() in ('none', '') else value

def _flatten(config):
    yield 'seed', config.seed
    for section in RunConfig.sections():
        for name, value in getattr(config, section):
            yield f'{section}.{name}', value

def _format_value(value):
    if value is None:
        return 'none'
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, tuple):
        return '-'.join(str(x) for x in value)
    if isinstance(value, float):
        return format_float(value)
    return str(value)

def _describe(err):
    error = err.errors()[0]
    where = '.'.join(str(x) for x in error['loc'])
    return f"{where}: {error['msg']}" if where else error['msg']
