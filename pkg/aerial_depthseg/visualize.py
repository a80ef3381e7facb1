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

"""Colorized depth maps and semantic overlays."""

import matplotlib
import numpy as np
from PIL import Image

from aerial_depthseg.geometry import IGNORE_LABEL
from aerial_depthseg.metrics import DEPTH_CAP

# Sky, Water, Land, Trees, Boulders, Road, Others
PALETTE = np.array([
    [135, 206, 235],
    [30, 90, 200],
    [150, 110, 60],
    [30, 130, 40],
    [128, 128, 128],
    [60, 60, 60],
    [220, 80, 40],
], dtype=np.uint8)
DEPTH_COLORMAP = 'magma'


def palette(num_classes):
    """Class colors; beyond the seven documented ones ``tab20`` is used."""
    if num_classes <= len(PALETTE):
        return PALETTE[:num_classes]
    cmap = matplotlib.colormaps['tab20']
    extra = [
        np.round(np.asarray(cmap(i % cmap.N)[:3]) * 255).astype(np.uint8)
        for i in range(num_classes - len(PALETTE))
    ]
    return np.concatenate([PALETTE, np.stack(extra)])


def colorize_labels(labels, num_classes=len(PALETTE)):
    """Map ``(H, W)`` label ids to RGB; ignored pixels are black."""
    labels = np.asarray(labels)
    colors = palette(num_classes)
    rgb = np.zeros(labels.shape + (3,), dtype=np.uint8)
    known = labels != IGNORE_LABEL
    rgb[known] = colors[labels[known]]
    return rgb


def colorize_depth(depth, cap=DEPTH_CAP, colormap=DEPTH_COLORMAP):
    """Map ``(H, W)`` depth to RGB, normalized by ``cap``; invalid depth is
    black."""
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(depth) & (depth > 0)
    normalized = np.clip(np.where(valid, depth, 0.0) / cap, 0.0, 1.0)
    rgb = matplotlib.colormaps[colormap](normalized)[..., :3]
    rgb = np.round(rgb * 255.0).astype(np.uint8)
    rgb[~valid] = 0
    return rgb


def overlay(image, labels, num_classes=len(PALETTE), alpha=0.5):
    """Blend the label colors over an ``(H, W, 3)`` image in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    colors = colorize_labels(labels, num_classes) / 255.0
    known = (np.asarray(labels) != IGNORE_LABEL)[..., None]
    blended = np.where(known, (1.0 - alpha) * image + alpha * colors, image)
    return np.round(np.clip(blended, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_rgb(array, path):
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)
