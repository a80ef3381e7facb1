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

"""Depth and segmentation metrics, runtime benchmark and parameter count.

Metrics are accumulated in 64-bit numpy arithmetic. Reports serialize to a
flat ``key: value`` text and to a YAML document.
"""

import logging
import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import yaml

from aerial_depthseg.errors import (
    ConfigurationError,
    DataError,
    DegenerateBatchError,
    ShapeError,
)
from aerial_depthseg.geometry import IGNORE_LABEL, DepthMap

DEPTH_CAP = 80.0
DEPTH_EPS = 1e-3
DELTA_BASE = 1.25

_logging = logging.getLogger(__name__)


def _flatten(prefix, value, lines):
    if isinstance(value, dict):
        for key in value:
            _flatten('{0}{1}.'.format(prefix, key), value[key], lines)
    elif isinstance(value, (list, tuple)) and value and \
            isinstance(value[0], (list, tuple)):
        for index, row in enumerate(value):
            _flatten('{0}{1}.'.format(prefix, index), list(row), lines)
    else:
        lines.append('{0}: {1}'.format(prefix[:-1], value))


class _Report:
    """Serialization shared by the metric reports."""

    def to_dict(self):
        return asdict(self)

    def to_text(self):
        """Flat ``key: value`` lines, nested keys joined with dots."""
        lines = []
        _flatten('', self.to_dict(), lines)
        return '\n'.join(lines) + '\n'

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), default_flow_style=False,
                              sort_keys=False)


@dataclass
class DepthMetricsReport(_Report):
    rmse: float
    abs_rel: float
    delta1: float
    delta2: float
    delta3: float
    valid_pixels: int
    cap: float


def _to_numpy(value):
    if isinstance(value, torch.Tensor):
        return value.detach().cpu().numpy()
    return np.asarray(value)


def _depth_arrays(depth):
    if isinstance(depth, DepthMap):
        return (_to_numpy(depth.values).astype(np.float64),
                _to_numpy(depth.valid_mask).astype(bool))
    values = _to_numpy(depth).astype(np.float64)
    return values, np.isfinite(values) & (values > 0)


class DepthMetrics:
    """Accumulator of depth errors over many maps.

    Both maps are clamped to ``[1e-3, cap]`` on the pixels where the ground
    truth is valid and the prediction is finite.
    """

    def __init__(self, cap=DEPTH_CAP):
        if not cap > DEPTH_EPS:
            raise ConfigurationError('depth cap must exceed {0}'.format(
                DEPTH_EPS,
            ))
        self.cap = float(cap)
        self.squared_error = 0.0
        self.relative_error = 0.0
        self.within = np.zeros(3, dtype=np.int64)
        self.count = 0

    def update(self, pred, gt):
        pred_values, _ = _depth_arrays(pred)
        gt_values, gt_valid = _depth_arrays(gt)
        if pred_values.shape != gt_values.shape:
            raise ShapeError('prediction {0} and ground truth {1} '
                             'differ'.format(pred_values.shape,
                                             gt_values.shape))
        valid = gt_valid & np.isfinite(pred_values)
        d = np.clip(gt_values[valid], DEPTH_EPS, self.cap)
        d_hat = np.clip(pred_values[valid], DEPTH_EPS, self.cap)
        ratio = np.maximum(d / d_hat, d_hat / d)
        self.squared_error += float(np.sum((d - d_hat) ** 2))
        self.relative_error += float(np.sum(np.abs(d - d_hat) / d))
        for k in range(3):
            self.within[k] += int(np.sum(ratio < DELTA_BASE ** (k + 1)))
        self.count += int(valid.sum())
        return self

    def merge(self, other):
        if other.cap != self.cap:
            raise ConfigurationError('cannot merge metrics with caps {0} and '
                                     '{1}'.format(self.cap, other.cap))
        self.squared_error += other.squared_error
        self.relative_error += other.relative_error
        self.within += other.within
        self.count += other.count
        return self

    def report(self):
        if self.count == 0:
            raise DegenerateBatchError('no pixel with valid depth to '
                                       'evaluate')
        deltas = self.within / self.count
        return DepthMetricsReport(
            rmse=float(np.sqrt(self.squared_error / self.count)),
            abs_rel=float(self.relative_error / self.count),
            delta1=float(deltas[0]),
            delta2=float(deltas[1]),
            delta3=float(deltas[2]),
            valid_pixels=self.count,
            cap=self.cap,
        )


def depth_metrics(pred, gt, cap=DEPTH_CAP):
    """Compute RMSE, AbsRel and the ``delta < 1.25^k`` accuracies.

    :param pred: predicted :class:`DepthMap`, tensor or array.
    :param gt: ground-truth :class:`DepthMap`, tensor or array.
    :param float cap: maximum depth in meters.

    :rtype: :class:`DepthMetricsReport`
    """
    return DepthMetrics(cap).update(pred, gt).report()


@dataclass
class SegmentationReport(_Report):
    """Per-class IoU (None for classes absent from both maps), mIoU and the
    confusion matrix with ground-truth rows."""

    per_class_iou: list
    miou: float
    confusion: list
    pixel_count: int
    class_names: list = field(default_factory=list)


class ConfusionMatrix:

    def __init__(self, num_classes, class_names=None):
        if num_classes < 2:
            raise ConfigurationError('at least 2 classes are needed')
        if class_names is not None and len(class_names) != num_classes:
            raise ConfigurationError('{0} class names for {1} classes'.format(
                len(class_names), num_classes,
            ))
        self.num_classes = num_classes
        self.class_names = list(class_names or [])
        self.matrix = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred, gt):
        """Count the non-ignored pixels of a prediction.

        :param pred: predicted label ids.
        :param gt: ground-truth label ids, :data:`IGNORE_LABEL` is skipped.
        """
        pred = _to_numpy(pred).astype(np.int64).ravel()
        gt = _to_numpy(gt).astype(np.int64).ravel()
        if pred.shape != gt.shape:
            raise ShapeError('{0} predicted labels for {1} ground-truth '
                             'labels'.format(pred.size, gt.size))
        keep = gt != IGNORE_LABEL
        pred = pred[keep]
        gt = gt[keep]
        n = self.num_classes
        for name, values in (('ground truth', gt), ('prediction', pred)):
            if values.size and (values.min() < 0 or values.max() >= n):
                raise DataError('{0} has label ids outside 0..{1}'.format(
                    name, n - 1,
                ))
        self.matrix += np.bincount(
            n * gt + pred, minlength=n * n,
        ).reshape(n, n)
        return self

    def merge(self, other):
        if other.num_classes != self.num_classes:
            raise ConfigurationError('cannot merge {0} and {1} class '
                                     'matrices'.format(self.num_classes,
                                                       other.num_classes))
        self.matrix += other.matrix
        return self

    @property
    def total(self):
        return int(self.matrix.sum())

    def iou(self):
        """Per-class IoU, NaN where the union is empty."""
        tp = np.diag(self.matrix).astype(np.float64)
        union = self.matrix.sum(axis=0) + self.matrix.sum(axis=1) - tp
        with np.errstate(divide='ignore', invalid='ignore'):
            return np.where(union > 0, tp / np.maximum(union, 1), np.nan)

    def report(self):
        if self.total == 0:
            raise DegenerateBatchError('no labelled pixel to evaluate')
        iou = self.iou()
        return SegmentationReport(
            per_class_iou=[None if np.isnan(v) else float(v) for v in iou],
            miou=float(np.nanmean(iou)),
            confusion=self.matrix.tolist(),
            pixel_count=self.total,
            class_names=self.class_names,
        )


def segmentation_metrics(pred, gt, num_classes, class_names=None):
    """Compute per-class IoU and mIoU of a label prediction.

    :rtype: :class:`SegmentationReport`
    """
    return ConfusionMatrix(num_classes, class_names).update(pred, gt).report()


@dataclass
class RuntimeReport(_Report):
    mean_ms: float
    std_ms: float
    warmup: int
    iterations: int
    hardware: str
    timings_ms: list = field(default_factory=list)


def hardware_description(device=None):
    if device is not None and torch.device(device).type == 'cuda':
        return torch.cuda.get_device_name(torch.device(device))
    return '{0} {1} ({2} threads)'.format(
        platform.machine(), platform.processor() or 'cpu',
        torch.get_num_threads(),
    )


def _synchronize(device):
    if device is not None and torch.device(device).type == 'cuda':
        torch.cuda.synchronize(torch.device(device))


def runtime_benchmark(forward, sample, iterations, warmup=0,
                      hardware=None, device=None, frames_per_call=1):
    """Time a forward function per frame.

    :param callable forward: function under test.
    :param sample: argument of ``forward``; a tuple is unpacked.
    :param int iterations: timed calls.
    :param int warmup: untimed calls first.
    :param str hardware: hardware note, detected if not given.
    :param device: device to synchronize before reading the clock.
    :param int frames_per_call: frames produced by one call.

    :rtype: :class:`RuntimeReport`
    """
    if iterations < 1:
        raise ConfigurationError('at least one timed iteration is needed')
    if warmup < 0:
        raise ConfigurationError('warmup must not be negative')
    args = sample if isinstance(sample, tuple) else (sample,)
    timings = []
    with torch.no_grad():
        for index in range(warmup + iterations):
            _synchronize(device)
            start = time.perf_counter()
            forward(*args)
            _synchronize(device)
            elapsed = (time.perf_counter() - start) * 1000.0
            if index >= warmup:
                timings.append(elapsed / frames_per_call)
    timings = np.asarray(timings, dtype=np.float64)
    report = RuntimeReport(
        mean_ms=float(timings.mean()),
        std_ms=float(timings.std()),
        warmup=int(warmup),
        iterations=int(iterations),
        hardware=hardware or hardware_description(device),
        timings_ms=timings.tolist(),
    )
    _logging.debug('benchmark: {0:.3f} +- {1:.3f} ms/frame'.format(
        report.mean_ms, report.std_ms,
    ))
    return report


def count_parameters(model):
    """Count the trainable scalars of a module."""
    return int(sum(p.numel() for p in model.parameters() if p.requires_grad))


def write_report(path, reports):
    """Write named reports as YAML (``.yaml``/``.yml``) or flat text.

    :param str path: output file.
    :param dict reports: section name to report (or plain dict).
    """
    document = {
        name: report.to_dict() if isinstance(report, _Report) else report
        for name, report in reports.items()
    }
    with open(path, 'w', encoding='utf-8') as f:
        if path.endswith(('.yaml', '.yml')):
            yaml.safe_dump(document, f, default_flow_style=False,
                           sort_keys=False)
        else:
            lines = []
            _flatten('', document, lines)
            f.write('\n'.join(lines) + '\n')
