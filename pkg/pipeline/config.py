'''
DEANet Low-Light Enhancement Toolkit
Run configuration: five sections (wls, net, loss, train, iqa) read from a
flat "section.key = value" file and overridable key by key.

Precedence: defaults < config file < overrides (--set) < dedicated flags.
'''

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from iqa.metrics import IqaConfig
from losses.loss_functions import LossConfig
from retinex_nets.networks import NetConfig
from utilities.exceptions import ConfigError
from wls_split.wls_filter import WlsParams


logger = logging.getLogger(__name__)

STAGES = ('decom', 'joint')
PRECISIONS = ('float32', 'float64')

# config-file key -> dataclass field, where they differ
KEY_ALIASES = {('wls', 'lambda'): 'lam'}


@dataclass
class TrainConfig:
    '''Training schedule (config section "train").

    Attributes:
        stage (str): 'decom' (stage 1) or 'joint' (stage 2)
        epochs (int): passes over the dataset
        batch_size (int): pairs per step
        lr, beta1, beta2, epsilon (float): Adam settings
        lr_decay_every (int): epochs between learning-rate decays; 0 keeps lr constant
        lr_decay_factor (float): multiplier applied at each decay
        seed (int): drives initialisation, pair order, crops and flips
        patch_size (int): side of the paired training crops
        flip (bool): random horizontal flips
        freeze_decom (bool): keep DecomNet fixed in the joint stage
        max_steps (int): stop after this many steps in total; 0 means no cap
        precision (str): 'float32' or 'float64'
        log_every (int): steps between INFO log lines
        wls_cache (str): directory of the WLS split cache; empty disables it
    '''

    stage: str = 'decom'
    epochs: int = 30
    batch_size: int = 1
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lr_decay_every: int = 0
    lr_decay_factor: float = 0.5
    seed: int = 0
    patch_size: int = 192
    flip: bool = True
    freeze_decom: bool = True
    max_steps: int = 0
    precision: str = 'float32'
    log_every: int = 10
    wls_cache: str = ''

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f'train.stage must be one of {STAGES}, got {self.stage!r}')
        if self.precision not in PRECISIONS:
            raise ValueError(f'train.precision must be one of {PRECISIONS}, '
                             f'got {self.precision!r}')
        if self.epochs < 1 or self.batch_size < 1 or self.patch_size < 1:
            raise ValueError('train.epochs, train.batch_size and train.patch_size '
                             'must be >= 1')
        if self.lr <= 0:
            raise ValueError(f'train.lr must be > 0, got {self.lr}')

    def lr_at(self, epoch):
        '''Learning rate of a zero-based epoch under the step-decay schedule.'''

        if self.lr_decay_every <= 0:
            return self.lr
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_every)


SECTIONS = {'wls': WlsParams, 'net': NetConfig, 'loss': LossConfig,
            'train': TrainConfig, 'iqa': IqaConfig}


@dataclass
class RunConfig:
    '''Effective configuration of one run.'''

    wls: WlsParams = field(default_factory=WlsParams)
    net: NetConfig = field(default_factory=NetConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    iqa: IqaConfig = field(default_factory=IqaConfig)

    def with_values(self, values, origin='override'):
        '''New RunConfig with raw "section.key" -> text values applied.

        Arguments:
            values (list of tuple): (dotted key, raw text) in application order
            origin (str): where the values came from, for error messages

        Returns:
            RunConfig
        '''

        updates = {name: {} for name in SECTIONS}
        for dotted, raw in values:
            section, attr, kind = resolve_key(dotted, origin)
            updates[section][attr] = coerce_value(raw, kind, dotted, origin)

        sections = {}
        for name, cls in SECTIONS.items():
            current = getattr(self, name)
            try:
                sections[name] = replace(current, **updates[name]) if updates[name] else current
            except (TypeError, ValueError) as err:
                raise ConfigError(f'{origin}: invalid [{name}] settings: {err}') from err
        return RunConfig(**sections)

    def dump(self):
        '''Render as a config file; parsing it reproduces this configuration.'''

        lines = []
        for name in SECTIONS:
            section = getattr(self, name)
            lines.append(f'# {name}')
            for f in fields(section):
                key = next((k for (s, k), a in KEY_ALIASES.items()
                            if s == name and a == f.name), f.name)
                lines.append(f'{name}.{key} = {render_value(getattr(section, f.name))}')
            lines.append('')
        return '\n'.join(lines)


def resolve_key(dotted, origin='config'):
    '''Map "section.key" to (section, field name, field default type).'''

    section, _, key = dotted.strip().partition('.')
    if section not in SECTIONS:
        raise ConfigError(f'{origin}: unknown config section {section!r} in key {dotted!r}')
    attr = KEY_ALIASES.get((section, key), key)
    known = {f.name for f in fields(SECTIONS[section])}
    aliased = {a for (s, _), a in KEY_ALIASES.items() if s == section}
    if attr not in known or key in aliased:
        raise ConfigError(f'{origin}: unknown config key {dotted!r}')
    default = SECTIONS[section]()
    return section, attr, type(getattr(default, attr))


def coerce_value(raw, kind, key, origin='config'):
    '''Parse raw text with YAML scalar rules and coerce it to the field type.'''

    text = raw.strip()
    if kind is str:
        if len(text) >= 2 and text[0] == text[-1] and text[0] in '\'"':
            return text[1:-1]
        return text
    try:
        value = yaml.safe_load(text) if text else None
    except yaml.YAMLError as err:
        raise ConfigError(f'{origin}: cannot parse value of {key!r}: {err}') from err

    if kind is bool:
        if isinstance(value, bool):
            return value
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
    elif kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            # YAML 1.1 reads exponent-only literals such as 1e-4 as strings
            try:
                return float(value)
            except ValueError:
                pass
    elif kind is list:
        if value is None:
            return []
        if isinstance(value, int) and not isinstance(value, bool):
            return [value]
        if isinstance(value, str):
            try:
                return [int(part) for part in value.split(',') if part.strip()]
            except ValueError:
                pass
        if isinstance(value, list) and all(isinstance(v, int) for v in value):
            return value
    raise ConfigError(f'{origin}: value {raw.strip()!r} of {key!r} is not a valid {kind.__name__}')


def render_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return '[' + ', '.join(str(v) for v in value) + ']'
    if isinstance(value, str) and value == '':
        return "''"
    return str(value)


def parse_config_text(text, origin='config'):
    '''(dotted key, raw value) pairs of a config file body.'''

    values = []
    for number, line in enumerate(text.splitlines(), start=1):
        content = line.split('#', 1)[0].strip()
        if not content:
            continue
        key, sep, raw = content.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f'{origin}:{number}: expected "section.key = value", got {line.strip()!r}')
        values.append((key.strip(), raw))
    return values


def parse_override(text):
    '''Split a --set argument "section.key=value".'''

    key, sep, raw = text.partition('=')
    if not sep or not key.strip():
        raise ConfigError(f'--set: expected section.key=value, got {text!r}')
    return key.strip(), raw


def load_config(path=None, overrides=(), seed=None):
    '''Build the effective configuration.

    Arguments:
        path (str or Path or None): config file
        overrides (iterable of str): "section.key=value" strings
        seed (int or None): dedicated seed flag, applied last

    Returns:
        RunConfig
    '''

    config = RunConfig()
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding='utf-8')
        except (OSError, UnicodeDecodeError) as err:
            raise ConfigError(f'Cannot read config file {path}: {err}') from err
        config = config.with_values(parse_config_text(text, str(path)), origin=str(path))
        logger.debug('Loaded config file %s', path)
    config = config.with_values([parse_override(item) for item in overrides], origin='--set')
    if seed is not None:
        config = RunConfig(wls=config.wls, net=config.net, loss=config.loss,
                           train=replace(config.train, seed=int(seed)), iqa=config.iqa)
    return config
