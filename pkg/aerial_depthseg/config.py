#!/usr/bin/env python3
# -*- coding: UTF-8 -*-

# Copyright (c) 2024, aerial_depthseg developers
# All rights reserved.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.
#

import argparse
import logging
import re
from dataclasses import asdict, dataclass, field, fields

import yaml

from aerial_depthseg.augment import AugmentationConfig
from aerial_depthseg.errors import ConfigurationError
from aerial_depthseg.losses import LossConfig
from aerial_depthseg.model import ArchitectureConfig
from aerial_depthseg.synthetic import SceneConfig
from aerial_depthseg.training import TrainConfig


@dataclass
class DataConfig:
    """Dataset location and loading.

    :ivar str root: dataset root with ``dataset.yaml`` and the manifests.
    :ivar list image_size: ``[H, W]`` to resize to, or None.
    :ivar dict class_overrides: MidAir class name to target class name.
    :ivar float depth_cap: depth cap of the metrics in meters.
    """

    root: str = 'data/synthetic'
    image_size: list = None
    class_overrides: dict = field(default_factory=dict)
    depth_cap: float = 80.0

    def __post_init__(self):
        if self.image_size is not None:
            if len(self.image_size) != 2 or min(self.image_size) < 1:
                raise ConfigurationError('image_size must be [height, '
                                         'width], got {0}'.format(
                                             self.image_size))
            self.image_size = [int(v) for v in self.image_size]
        if not self.depth_cap > 0:
            raise ConfigurationError('depth_cap must be positive')
        self.class_overrides = dict(self.class_overrides or {})


@dataclass
class OutputConfig:
    """Output locations.

    :ivar str run_dir: directory of logs, checkpoints and reports.
    :ivar bool visualize: write colorized depth and overlays on predict.
    """

    run_dir: str = 'runs/default'
    visualize: bool = True


SECTIONS = {
    'architecture': ArchitectureConfig,
    'loss': LossConfig,
    'training': TrainConfig,
    'data': DataConfig,
    'augmentation': AugmentationConfig,
    'synthetic': SceneConfig,
    'output': OutputConfig,
}
# values that are free-form mappings
_OPEN_KEYS = {('data', 'class_overrides')}
_NESTED = {'loss', 'architecture'}
_SCALAR_TYPES = {
    'int': (int,),
    'float': (int, float),
    'bool': (bool,),
    'str': (str,),
    'list': (list,),
    'dict': (dict,),
}


def section_keys(name):
    keys = {f.name for f in fields(SECTIONS[name])}
    if name == 'training':
        keys -= _NESTED
    return keys


@dataclass
class RunConfig:
    """A complete run configuration, one attribute per file section."""

    architecture: ArchitectureConfig = field(
        default_factory=ArchitectureConfig,
    )
    loss: LossConfig = field(default_factory=LossConfig)
    training: TrainConfig = None
    data: DataConfig = field(default_factory=DataConfig)
    augmentation: AugmentationConfig = field(
        default_factory=AugmentationConfig,
    )
    synthetic: SceneConfig = field(default_factory=SceneConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        if self.training is None:
            self.training = TrainConfig(loss=self.loss,
                                        architecture=self.architecture)

    @classmethod
    def from_dict(cls, document):
        """Build from a parsed document; missing keys keep their
        defaults."""
        document = document or {}
        unknown = sorted(set(document) - set(SECTIONS))
        if unknown:
            raise ConfigurationError('unknown sections: {0}'.format(
                ', '.join(unknown),
            ))
        values = {}
        for name in ('architecture', 'loss', 'data', 'augmentation',
                     'synthetic', 'output'):
            section = document.get(name) or {}
            extra = sorted(set(section) - section_keys(name))
            if extra:
                raise ConfigurationError('unknown keys in {0}: {1}'.format(
                    name, ', '.join(extra),
                ))
            values[name] = _build(name, SECTIONS[name], section)
        values['training'] = _build(
            'training', TrainConfig, document.get('training') or {},
            loss=values['loss'], architecture=values['architecture'],
        )
        return cls(**values)

    def as_dict(self):
        document = {}
        for name in SECTIONS:
            value = asdict(getattr(self, name))
            if name == 'training':
                for key in _NESTED:
                    value.pop(key)
            document[name] = value
        return document

    def to_text(self):
        return yaml.safe_dump(self.as_dict(), default_flow_style=False,
                              sort_keys=False)


def _type_name(annotation):
    return annotation if isinstance(annotation, str) else \
        getattr(annotation, '__name__', '')


def _coerce(name, cls, section):
    """Check the scalar types of a section, reading numeric strings as
    floats (YAML 1.1 takes ``1e-4`` for a string)."""
    types = {f.name: _type_name(f.type) for f in fields(cls)}
    values = dict(section)
    for key, value in section.items():
        expected = types.get(key)
        if value is None or expected not in _SCALAR_TYPES:
            continue
        if expected == 'float' and isinstance(value, str):
            try:
                values[key] = float(value)
                continue
            except ValueError:
                pass
        accepted = _SCALAR_TYPES[expected]
        if (isinstance(value, bool) and bool not in accepted) or \
                not isinstance(value, accepted):
            raise _section_error(name, '{0} must be of type {1}, got {2!r}'
                                 .format(key, expected, value))
    return values


def _section_error(name, message):
    error = ConfigurationError('section {0}: {1}'.format(name, message))
    error.section = name
    return error


def _build(name, cls, section, **extra):
    section = _coerce(name, cls, section)
    try:
        if extra:
            return cls.from_dict(section, **extra)
        return cls(**section)
    except (ConfigurationError, TypeError) as e:
        raise _section_error(name, e)


def _key_lines(root):
    """Line of every section and of every key, from the composed nodes."""
    lines = {}
    if not isinstance(root, yaml.MappingNode):
        return lines
    for key_node, value_node in root.value:
        lines[(key_node.value, None)] = key_node.start_mark.line + 1
        if isinstance(value_node, yaml.MappingNode):
            for child, _ in value_node.value:
                lines[(key_node.value, child.value)] = \
                    child.start_mark.line + 1
    return lines


def _error_line(lines, error):
    section = getattr(error, 'section', None)
    if section is None:
        return None
    message = str(error)
    for (name, key), line in lines.items():
        if name == section and key is not None and \
                re.search(r'\b{0}\b'.format(re.escape(key)), message):
            return line
    return lines.get((section, None))


def _check_node_keys(root, source):
    """Reject unknown keys, reporting the line of the offending key."""
    if root is None:
        return
    if not isinstance(root, yaml.MappingNode):
        raise ConfigurationError('{0}: line {1}: the configuration must be '
                                 'a mapping'.format(source,
                                                    root.start_mark.line + 1))
    for key_node, value_node in root.value:
        section = key_node.value
        if section not in SECTIONS:
            raise ConfigurationError(
                '{0}: line {1}: unknown section {2}'.format(
                    source, key_node.start_mark.line + 1, section,
                )
            )
        if isinstance(value_node, yaml.ScalarNode) and \
                value_node.tag.endswith(':null'):
            continue
        if not isinstance(value_node, yaml.MappingNode):
            raise ConfigurationError(
                '{0}: line {1}: section {2} must be a mapping'.format(
                    source, value_node.start_mark.line + 1, section,
                )
            )
        known = section_keys(section)
        for child, _ in value_node.value:
            if child.value not in known and \
                    (section, child.value) not in _OPEN_KEYS:
                raise ConfigurationError(
                    '{0}: line {1}: unknown key {2} in section {3}'.format(
                        source, child.start_mark.line + 1, child.value,
                        section,
                    )
                )


def parse_config_text(text, source='<config>'):
    """Parse and validate a YAML run configuration.

    :param str text: YAML document.
    :param str source: name used in error messages.

    :rtype: :class:`RunConfig`
    """
    try:
        root = yaml.compose(text)
        _check_node_keys(root, source)
        document = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        line = '?' if mark is None else mark.line + 1
        raise ConfigurationError('{0}: line {1}: {2}'.format(
            source, line, getattr(e, 'problem', None) or e,
        ))
    try:
        return RunConfig.from_dict(document)
    except ConfigurationError as e:
        line = _error_line(_key_lines(root), e)
        if line is None:
            raise ConfigurationError('{0}: {1}'.format(source, e))
        raise ConfigurationError('{0}: line {1}: {2}'.format(source, line, e))


def load_config(path):
    """Load a YAML run configuration file."""
    with open(path, 'r', encoding='utf-8') as f:
        return parse_config_text(f.read(), source=path)


def build_parser():
    parser = argparse.ArgumentParser(
        prog='aerial-depthseg',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Joint depth and semantic segmentation for aerial "
                    "image sequences.",
    )
    parser.add_argument(
        "-c", "--config",
        required=False,
        metavar="FILE",
        default=None,
        help="Configuration file (defaults apply without one)",
    )
    parser.add_argument(
        "-l", "--loglevel",
        required=False,
        default='INFO',
        help="""Set the loglevel.
        Possible values are:
        DEBUG, INFO, WARN, ERROR, CRITICAL
        """
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Seed of training and of the synthetic scene",
    )
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.required = True

    synth = commands.add_parser('synth', help="Render a synthetic dataset")
    synth.add_argument("--out", default=None,
                       help="Dataset directory (default: data.root)")
    synth.add_argument("--frames", type=int, default=None,
                       help="Frames per trajectory")
    synth.add_argument("--force", action='store_true',
                       help="Write into a non-empty directory")

    train = commands.add_parser('train', help="Train a network")
    train.add_argument("--out", default=None,
                       help="Run directory (default: output.run_dir)")
    train.add_argument("--resume", metavar="CHECKPOINT", default=None,
                       help="Resume from a checkpoint")
    train.add_argument("--max-steps", type=int, default=None,
                       help="Stop after this many steps")

    evaluate = commands.add_parser('eval', help="Evaluate a checkpoint")
    evaluate.add_argument("checkpoint", nargs='?', default=None,
                          help="Checkpoint (default: the run's best)")
    evaluate.add_argument("--split", default='test',
                          choices=('train', 'val', 'test'))
    evaluate.add_argument("--out", default=None,
                          help="Report directory (default: output.run_dir)")

    predict = commands.add_parser('predict', help="Predict a sequence")
    predict.add_argument("checkpoint")
    predict.add_argument("sequence", help="Dataset root of the sequence")
    predict.add_argument("--split", default='test',
                         choices=('train', 'val', 'test'))
    predict.add_argument("--out", default=None,
                         help="Output directory (default: "
                              "<run_dir>/predictions)")

    bench = commands.add_parser('bench', help="Time inference")
    bench.add_argument("checkpoint")
    bench.add_argument("--iterations", type=int, default=20)
    bench.add_argument("--warmup", type=int, default=5)
    bench.add_argument("--out", default=None,
                       help="Report directory (default: output.run_dir)")
    return parser


class Config:
    """Load configuration file and validate settings.
    """

    def __init__(self):
        logging.basicConfig(level=logging.INFO)
        self._logging = logging.getLogger(__name__)
        self._conf = RunConfig()
        self.args = None

    def argparse(self, args):
        """Parse arguments from cli.

        :param list args: argument list from program call.
        """
        parser = build_parser()
        if args is not None:
            argp = parser.parse_args(args)
        else:
            argp = parser.parse_args()
        self.args = argp

        # set log level
        logging.getLogger().setLevel(argp.loglevel.upper())

        # load configuration
        if argp.config is not None:
            self._logging.debug("Load configuration file {0}".format(
                argp.config,
            ))
            try:
                self._conf = load_config(argp.config)
            except (ConfigurationError, OSError):
                self._logging.critical(
                    "Error while loading and parsing config {0}".format(
                        argp.config,
                    )
                )
                raise
        self._apply_overrides(argp)
        self._logging.debug("Configuration:\n{0}".format(
            self._conf.to_text(),
        ))

    def _apply_overrides(self, argp):
        document = self._conf.as_dict()
        if argp.seed is not None:
            document['training']['seed'] = argp.seed
            document['synthetic']['texture_seed'] = argp.seed
        if argp.command == 'synth' and argp.frames is not None:
            document['synthetic']['trajectory_length'] = argp.frames
        if argp.command == 'train' and argp.max_steps is not None:
            document['training']['max_steps'] = argp.max_steps
        self._conf = RunConfig.from_dict(document)

    def get(self):
        """Get configuration.

        :returns: run configuration.
        :rtype: :class:`RunConfig`
        """
        return self._conf

    def loglevel(self):
        """Get log level.

        :returns: log level.
        :rtype: logging
        """
        return logging.getLogger().getEffectiveLevel()
