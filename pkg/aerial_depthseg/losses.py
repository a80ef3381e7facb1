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

"""Multi-level depth and semantic losses.

Both losses are sums over decoder levels of per-level means. Prediction and
ground-truth pyramids are ordered from the coarsest to the finest level;
:attr:`LossConfig.level_orientation` decides which end is level 1 in the
``2^(l+1)`` depth weights.
"""

import logging
import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from aerial_depthseg.errors import (
    ConfigurationError,
    DataError,
    DegenerateBatchError,
    DivergenceError,
    ShapeError,
)
from aerial_depthseg.geometry import IGNORE_LABEL, DepthMap
from aerial_depthseg.layers import downsample_nearest

DEPTH_EPS = 1e-3
LOG_BASES = {'natural': 1.0, '2': math.log(2.0), '10': math.log(10.0)}
LEVEL_ORIENTATIONS = ('coarse_to_fine', 'fine_to_coarse')

_logging = logging.getLogger(__name__)


@dataclass
class LossConfig:
    """Loss weighting.

    :ivar float semantic_weight: ``w`` in ``L_depth + w * L_semantic``.
    :ivar str log_base: logarithm of the depth loss.
    :ivar str level_orientation: ``coarse_to_fine`` makes the coarsest
        level ``l = 1``, so the output level carries the largest weight.
    """

    semantic_weight: float = 0.1
    log_base: str = 'natural'
    level_orientation: str = 'coarse_to_fine'

    def __post_init__(self):
        self.semantic_weight = float(self.semantic_weight)
        if not math.isfinite(self.semantic_weight) or \
                self.semantic_weight < 0:
            raise ConfigurationError(
                'semantic_weight must be finite and not negative, got '
                '{0}'.format(self.semantic_weight)
            )
        self.log_base = str(self.log_base)
        if self.log_base not in LOG_BASES:
            raise ConfigurationError('log_base must be one of {0}'.format(
                ', '.join(LOG_BASES),
            ))
        if self.level_orientation not in LEVEL_ORIENTATIONS:
            raise ConfigurationError(
                'level_orientation must be one of {0}'.format(
                    ', '.join(LEVEL_ORIENTATIONS),
                )
            )

    def as_dict(self):
        return asdict(self)


@dataclass
class GroundTruthPyramid:
    """Ground truth resized to the decoder levels, coarsest first.

    :ivar list depth: :class:`DepthMap` per level, or None.
    :ivar list labels: ``(B, H_l, W_l)`` label maps per level, or None.
    :ivar list depth_counts: valid depth pixels per level.
    :ivar list label_counts: non-ignored label pixels per level.
    """

    depth: list = None
    labels: list = None
    depth_counts: list = None
    label_counts: list = None

    def __len__(self):
        return len(self.depth if self.depth is not None else self.labels)


def check_labels(labels, num_classes):
    """Raise :class:`DataError` for ids outside ``0..N_c-1`` and ignore."""
    invalid = (labels != IGNORE_LABEL) & ((labels < 0) |
                                          (labels >= num_classes))
    if bool(invalid.any()):
        values = sorted(set(labels[invalid].unique().tolist()))
        raise DataError('label ids {0} are outside 0..{1} and not the '
                        'ignore label {2}'.format(values, num_classes - 1,
                                                  IGNORE_LABEL))


def build_gt_pyramid(depth_gt, semantic_gt, cfg):
    """Downsample full resolution ground truth to every decoder level.

    Both depth and labels use corner-anchored nearest sampling, so level
    ``l`` keeps every ``2^l``-th pixel starting at the top-left corner.

    :param DepthMap depth_gt: ``(B, 1, H, W)`` depth or None.
    :param torch.Tensor semantic_gt: ``(B, H, W)`` label ids or None.
    :param ArchitectureConfig cfg: architecture (levels and classes).

    :rtype: :class:`GroundTruthPyramid`
    """
    if depth_gt is None and semantic_gt is None:
        raise DataError('no ground truth given')
    pyramid = GroundTruthPyramid()
    levels = range(cfg.num_levels, 0, -1)
    if depth_gt is not None:
        if not isinstance(depth_gt, DepthMap):
            depth_gt = DepthMap.from_values(depth_gt)
        cfg.check_input(*depth_gt.shape)
        valid = depth_gt.valid_mask & (depth_gt.values > 0)
        pyramid.depth = []
        pyramid.depth_counts = []
        for level in levels:
            factor = 2 ** level
            level_valid = downsample_nearest(valid, factor)
            pyramid.depth.append(DepthMap(
                downsample_nearest(depth_gt.values, factor), level_valid,
            ))
            pyramid.depth_counts.append(int(level_valid.sum()))
    if semantic_gt is not None:
        if semantic_gt.dim() != 3:
            raise ShapeError('labels must be (B, H, W), got {0}'.format(
                tuple(semantic_gt.shape),
            ))
        cfg.check_input(*semantic_gt.shape[-2:])
        check_labels(semantic_gt, cfg.num_classes)
        semantic_gt = semantic_gt.long()
        pyramid.labels = []
        pyramid.label_counts = []
        for level in levels:
            labels = downsample_nearest(semantic_gt, 2 ** level)
            pyramid.labels.append(labels)
            pyramid.label_counts.append(int((labels != IGNORE_LABEL).sum()))
    return pyramid


def level_weight(index, num_levels, orientation='coarse_to_fine'):
    """Depth weight ``2^(l+1)`` of the ``index``-th level, coarsest first."""
    if orientation == 'coarse_to_fine':
        level = index + 1
    else:
        level = num_levels - index
    return 2.0 ** (level + 1)


def _depth_values(prediction):
    if isinstance(prediction, DepthMap):
        return prediction.values
    return prediction


def depth_loss(pred_pyramid, gt, cfg=None):
    """Multi-level log L1 depth loss.

    ``sum_l 2^(l+1) / N_l * sum_i |log d_i - log d^_i|`` over the valid
    ground-truth pixels of each level. Predictions below ``1e-3`` m are
    clamped before the logarithm.

    :param list pred_pyramid: predicted :class:`DepthMap` (or tensors) per
        level, coarsest first.
    :param GroundTruthPyramid gt: ground truth.
    :param LossConfig cfg: loss settings.

    :rtype: torch.Tensor
    """
    cfg = cfg or LossConfig()
    if gt.depth is None:
        raise DataError('the ground truth has no depth')
    if len(pred_pyramid) != len(gt.depth):
        raise ShapeError('{0} predicted levels for {1} ground-truth '
                         'levels'.format(len(pred_pyramid), len(gt.depth)))
    scale = LOG_BASES[cfg.log_base]
    total = None
    for index, (prediction, target) in enumerate(zip(pred_pyramid,
                                                      gt.depth)):
        values = _depth_values(prediction)
        if values.shape != target.values.shape:
            raise ShapeError('level {0}: prediction {1} and ground truth {2} '
                             'differ'.format(index, tuple(values.shape),
                                             tuple(target.values.shape)))
        count = gt.depth_counts[index]
        if count == 0:
            continue
        valid = target.valid_mask
        clamped = (values <= DEPTH_EPS) & valid
        if bool(clamped.any()):
            _logging.warning(
                '{0} predicted depths at or below {1} m clamped'.format(
                    int(clamped.sum()), DEPTH_EPS,
                )
            )
        predicted = torch.clamp(values[valid], min=DEPTH_EPS)
        error = torch.abs(torch.log(target.values[valid]) -
                          torch.log(predicted)) / scale
        weight = level_weight(index, len(gt.depth), cfg.level_orientation)
        term = weight * error.sum() / count
        total = term if total is None else total + term
    if total is None:
        raise DegenerateBatchError('no valid depth pixel in the batch')
    return total


def _log_probabilities(prediction):
    logits = getattr(prediction, 'logits', None)
    if logits is not None:
        return F.log_softmax(logits, dim=1)
    probabilities = getattr(prediction, 'probabilities', prediction)
    tiny = torch.finfo(probabilities.dtype).tiny
    return torch.log(probabilities.clamp(min=tiny)) - \
        torch.log(probabilities.sum(dim=1, keepdim=True))


def semantic_loss(pred_pyramid, gt):
    """Multi-level categorical cross entropy.

    ``sum_l 1 / N_l * sum_i -log(p_target / sum_j p_j)`` over the
    non-ignored pixels of each level. Semantic level states are scored from
    their logits.

    :param list pred_pyramid: :class:`SemanticLevelState` objects or
        ``(B, N_c, H_l, W_l)`` probability maps, coarsest first.
    :param GroundTruthPyramid gt: ground truth.

    :rtype: torch.Tensor
    """
    if gt.labels is None:
        raise DataError('the ground truth has no semantic labels')
    if len(pred_pyramid) != len(gt.labels):
        raise ShapeError('{0} predicted levels for {1} ground-truth '
                         'levels'.format(len(pred_pyramid), len(gt.labels)))
    total = None
    for index, (prediction, labels) in enumerate(zip(pred_pyramid,
                                                      gt.labels)):
        log_p = _log_probabilities(prediction)
        if log_p.shape[-2:] != labels.shape[-2:] or \
                log_p.shape[0] != labels.shape[0]:
            raise ShapeError('level {0}: prediction {1} and labels {2} '
                             'differ'.format(index, tuple(log_p.shape),
                                             tuple(labels.shape)))
        count = gt.label_counts[index]
        if count == 0:
            continue
        term = F.nll_loss(log_p, labels, ignore_index=IGNORE_LABEL,
                          reduction='sum') / count
        total = term if total is None else total + term
    if total is None:
        raise DegenerateBatchError('every label pixel is ignored')
    return total


def total_loss(l_depth, l_semantic, cfg=None):
    """Joint loss ``L_depth + w * L_semantic``.

    :param torch.Tensor l_depth: depth loss.
    :param torch.Tensor l_semantic: semantic loss.
    :param LossConfig cfg: loss settings.

    :rtype: torch.Tensor
    """
    cfg = cfg or LossConfig()
    for name, value in (('depth', l_depth), ('semantic', l_semantic)):
        if not bool(torch.isfinite(torch.as_tensor(value)).all()):
            raise DivergenceError('{0} loss is not finite: {1}'.format(
                name, float(value),
            ))
    return l_depth + cfg.semantic_weight * l_semantic
