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

"""Checkpoint archives.

An archive is a single ``torch.save`` file holding the parameters keyed by
their hierarchical names, the :class:`ArchitectureConfig` as YAML text and
its hash, plus optional training state (optimizer, scheduler and counters)
used to resume. No generator state is archived: batch order and
augmentation are drawn from generators seeded with the run seed, the epoch
and the item index.
"""

import logging
import os

import torch

from aerial_depthseg.errors import CheckpointError
from aerial_depthseg.model import ArchitectureConfig, build_network

ARCHIVE_FORMAT = 'aerial_depthseg/1'

_TRAINING_KEYS = ('optimizer', 'scheduler', 'epoch', 'step', 'batches_done',
                  'run_config')


class Checkpoint:
    """A loaded archive.

    :ivar torch.nn.Module network: network with the archived parameters.
    :ivar ArchitectureConfig cfg: archived architecture.
    :ivar dict state: training state, empty for inference-only archives.
    """

    def __init__(self, network, cfg, config_hash, state):
        self.network = network
        self.cfg = cfg
        self.config_hash = config_hash
        self.state = state

    @property
    def kind(self):
        return self.network.kind

    @property
    def epoch(self):
        return self.state.get('epoch')

    @property
    def step(self):
        return self.state.get('step')


def save_checkpoint(path, network, **training_state):
    """Write a network (and optionally its training state) to ``path``.

    The archive is written next to the target and renamed into place, so a
    reader never sees a partial file.

    :param str path: archive path.
    :param torch.nn.Module network: network built by
        :func:`aerial_depthseg.model.build_network`.
    :param training_state: any of ``optimizer``, ``scheduler``, ``epoch``,
        ``step``, ``batches_done`` and ``run_config``.

    :returns: hash of the archived architecture.
    :rtype: str
    """
    unknown = sorted(set(training_state) - set(_TRAINING_KEYS))
    if unknown:
        raise CheckpointError('unknown training state entries: {0}'.format(
            ', '.join(unknown),
        ))
    cfg = network.cfg
    archive = {
        'format': ARCHIVE_FORMAT,
        'network': network.kind,
        'config': cfg.to_text(),
        'config_hash': cfg.config_hash(),
        'parameters': {
            name: tensor.detach().cpu().clone()
            for name, tensor in network.state_dict().items()
        },
    }
    for key, value in training_state.items():
        if value is not None:
            archive[key] = value

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = '{0}.tmp'.format(path)
    torch.save(archive, tmp_path)
    os.replace(tmp_path, path)
    logging.getLogger(__name__).info('checkpoint written to {0}'.format(
        path,
    ))
    return archive['config_hash']


def _read_archive(path):
    if not os.path.isfile(path):
        raise FileNotFoundError('checkpoint {0} does not exist'.format(path))
    try:
        # the archive carries optimizer state and the run configuration
        archive = torch.load(path, map_location='cpu', weights_only=False)
    except Exception as e:
        raise CheckpointError('cannot read checkpoint {0}: {1}'.format(
            path, e,
        ))
    if not isinstance(archive, dict) or \
            archive.get('format') != ARCHIVE_FORMAT:
        raise CheckpointError('{0} is not a checkpoint archive'.format(path))
    return archive


def _check_parameters(network, parameters, path):
    expected = network.state_dict()
    missing = sorted(set(expected) - set(parameters))
    unexpected = sorted(set(parameters) - set(expected))
    if missing or unexpected:
        raise CheckpointError(
            '{0}: missing parameters [{1}], unexpected parameters '
            '[{2}]'.format(path, ', '.join(missing), ', '.join(unexpected))
        )
    for name, tensor in expected.items():
        if tuple(parameters[name].shape) != tuple(tensor.shape):
            raise CheckpointError('{0}: parameter {1} has shape {2}, the '
                                  'network expects {3}'.format(
                                      path, name,
                                      tuple(parameters[name].shape),
                                      tuple(tensor.shape),
                                  ))


def load_checkpoint(path, cfg=None, kind=None, device='cpu'):
    """Load an archive and rebuild its network.

    :param str path: archive path.
    :param ArchitectureConfig cfg: expected architecture; a mismatch with
        the archived one raises :class:`CheckpointError`.
    :param str kind: expected network kind.
    :param str device: device of the rebuilt network.

    :rtype: :class:`Checkpoint`
    """
    archive = _read_archive(path)
    archived = ArchitectureConfig.from_text(archive['config'])
    config_hash = archived.config_hash()
    if config_hash != archive.get('config_hash'):
        raise CheckpointError('{0}: embedded config does not match its '
                              'hash'.format(path))
    if cfg is not None and cfg.config_hash() != config_hash:
        raise CheckpointError(
            '{0}: archived architecture differs from the configured one:\n'
            '{1}'.format(path, _config_diff(archived, cfg))
        )
    if kind is not None and kind != archive['network']:
        raise CheckpointError('{0} holds a {1} network, not {2}'.format(
            path, archive['network'], kind,
        ))

    network = build_network(archive['network'], archived)
    _check_parameters(network, archive['parameters'], path)
    network.load_state_dict(archive['parameters'])
    network.to(device)
    state = {key: archive[key] for key in _TRAINING_KEYS if key in archive}
    logging.getLogger(__name__).debug('loaded {0} network from {1}'.format(
        archive['network'], path,
    ))
    return Checkpoint(network, archived, config_hash, state)


def _config_diff(archived, configured):
    lines = []
    old = archived.as_dict()
    new = configured.as_dict()
    for key in sorted(old):
        if old[key] != new[key]:
            lines.append('  {0}: archive {1}, config {2}'.format(
                key, old[key], new[key],
            ))
    return '\n'.join(lines)
