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

"""Geometric and photometric augmentation of frame windows.

Geometric transforms move the camera: a rotation about the optical axis or
a horizontal mirror is applied to every frame of a window, and the window's
motions are conjugated with the same transform so they stay consistent with
the images. Color jitter changes the images only.
"""

import math
from dataclasses import asdict, dataclass

import torch
import torchvision.transforms.functional as TF

from aerial_depthseg.errors import ConfigurationError
from aerial_depthseg.geometry import (
    CorrespondenceField,
    DepthMap,
    SE3Transform,
    reproject,
    warp,
)

_MIRROR = torch.diag(torch.tensor([-1.0, 1.0, 1.0]))


@dataclass
class AugmentationConfig:
    """Augmentation ranges.

    :ivar float rotation_degrees: roll angle drawn from ``[-r, r]``.
    :ivar float flip_probability: horizontal mirror probability.
    :ivar float brightness: brightness factor drawn from ``[1-b, 1+b]``.
    :ivar float contrast: contrast factor drawn from ``[1-c, 1+c]``.
    :ivar float saturation: saturation factor drawn from ``[1-s, 1+s]``.
    :ivar float hue: hue shift drawn from ``[-h, h]``.
    :ivar bool enabled: apply augmentation to the training split.
    """

    rotation_degrees: float = 15.0
    flip_probability: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    hue: float = 0.05
    enabled: bool = True

    def __post_init__(self):
        for name in ('rotation_degrees', 'flip_probability', 'brightness',
                     'contrast', 'saturation', 'hue'):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise ConfigurationError(
                    '{0} must be finite and not negative, got {1}'.format(
                        name, value,
                    )
                )
            setattr(self, name, value)
        if self.flip_probability > 1:
            raise ConfigurationError('flip_probability must be in [0, 1]')
        for name in ('brightness', 'contrast', 'saturation'):
            if getattr(self, name) > 1:
                raise ConfigurationError('{0} must be in [0, 1]'.format(name))
        if self.hue > 0.5:
            raise ConfigurationError('hue must be in [0, 0.5]')

    def as_dict(self):
        return asdict(self)


def _uniform(generator, low, high):
    draw = torch.rand(1, generator=generator, dtype=torch.float64).item()
    return low + (high - low) * draw


def conjugate_motions(rotations, translations, matrix):
    """Express motions in cameras transformed by ``X' = matrix X``.

    :param torch.Tensor rotations: ``(k, 3, 3)`` rotations.
    :param torch.Tensor translations: ``(k, 3)`` translations.
    :param torch.Tensor matrix: orthogonal ``(3, 3)`` camera transform.

    :returns: conjugated rotations and translations.
    :rtype: tuple
    """
    matrix = matrix.to(rotations.dtype)
    rotations = matrix @ rotations @ matrix.transpose(0, 1)
    translations = translations @ matrix.transpose(0, 1)
    return rotations, translations


def roll_matrix(degrees):
    angle = math.radians(degrees)
    c, s = math.cos(angle), math.sin(angle)
    return torch.tensor([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
                        dtype=torch.float64)


def _expand(field, batch):
    return CorrespondenceField(
        field.coords.expand(batch, *field.coords.shape[1:]),
        field.in_view_mask.expand(batch, *field.in_view_mask.shape[1:]),
    )


def rotate_sample(sample, degrees, intr):
    """Roll the camera by ``degrees`` about its optical axis.

    Pixels that come from outside the original image get zero color,
    invalid depth and the ignore label. Camera z-depth does not change
    under a roll, so depth values are resampled as they are.
    """
    rotation = roll_matrix(degrees)
    images = sample['images']
    height, width = images.shape[-2:]
    ones = torch.ones(1, 1, height, width, dtype=images.dtype)
    # new pixels look along roll^T applied to their own rays
    source = SE3Transform(
        rotation.transpose(0, 1).to(images.dtype),
        torch.zeros(3, dtype=images.dtype),
    )
    field = reproject(DepthMap(ones, ones.bool()), source, intr)

    result = dict(sample)
    result['images'], _ = warp(images, _expand(field, images.shape[0]),
                               'bilinear')
    depth, _ = warp(sample['depth'].unsqueeze(0), field, 'nearest')
    result['depth'] = depth[0]
    labels, _ = warp(sample['labels'].unsqueeze(0), field, 'nearest')
    result['labels'] = labels[0]
    result['rotations'], result['translations'] = conjugate_motions(
        sample['rotations'], sample['translations'], rotation,
    )
    return result


def flip_sample(sample, intr):
    """Mirror a window horizontally; applying it twice is the identity.

    The mirror keeps the intrinsics only for a centred principal point.
    """
    if abs(intr.cx - (intr.width - 1) / 2.0) > 1e-6:
        raise ConfigurationError(
            'horizontal flip needs cx = (width - 1) / 2, got cx={0} for a '
            'width of {1}'.format(intr.cx, intr.width)
        )
    result = dict(sample)
    result['images'] = sample['images'].flip(-1)
    result['depth'] = sample['depth'].flip(-1)
    result['labels'] = sample['labels'].flip(-1)
    result['rotations'], result['translations'] = conjugate_motions(
        sample['rotations'], sample['translations'], _MIRROR,
    )
    return result


def jitter_images(images, brightness, contrast, saturation, hue):
    """Apply color factors to ``(n, 3, H, W)`` images; 1 (0 for hue) is
    a no-op."""
    if brightness != 1.0:
        images = TF.adjust_brightness(images, brightness)
    if contrast != 1.0:
        images = TF.adjust_contrast(images, contrast)
    if saturation != 1.0:
        images = TF.adjust_saturation(images, saturation)
    if hue != 0.0:
        images = TF.adjust_hue(images, hue)
    return images.clamp(0.0, 1.0)


def augment(sample, cfg, intr, generator):
    """Augment a dataset item.

    All random draws come from ``generator`` in a fixed order, so the same
    generator state always gives the same output.

    :param dict sample: item of :class:`SequenceDataset`.
    :param AugmentationConfig cfg: ranges.
    :param CameraIntrinsics intr: intrinsics of the item.
    :param torch.Generator generator: seeded generator.

    :returns: augmented copy of the item.
    :rtype: dict
    """
    angle = _uniform(generator, -cfg.rotation_degrees, cfg.rotation_degrees)
    flip = _uniform(generator, 0.0, 1.0) < cfg.flip_probability
    factors = [
        _uniform(generator, 1.0 - cfg.brightness, 1.0 + cfg.brightness),
        _uniform(generator, 1.0 - cfg.contrast, 1.0 + cfg.contrast),
        _uniform(generator, 1.0 - cfg.saturation, 1.0 + cfg.saturation),
        _uniform(generator, -cfg.hue, cfg.hue),
    ]

    result = dict(sample)
    if angle != 0.0:
        result = rotate_sample(result, angle, intr)
    if flip:
        result = flip_sample(result, intr)
    result['images'] = jitter_images(result['images'], *factors)
    return result
