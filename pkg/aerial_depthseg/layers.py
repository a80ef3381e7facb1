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

"""Parameter-free feature operations and the convolution blocks used by the
encoder and the refiners."""

import math

import torch
import torch.nn.functional as F
from torch import nn

DINL_EPS = 1e-5
L2_EPS = 1e-8


def dinl_normalize(features):
    """Domain-invariant normalization of a ``(B, C, H, W)`` feature map.

    Every channel is standardized over its spatial extent:
    ``(x - mean) / (std + 1e-5)``. Constant channels map to zero.
    """
    mean = features.mean(dim=(-2, -1), keepdim=True)
    centered = features - mean
    var = (centered * centered).mean(dim=(-2, -1), keepdim=True)
    # sqrt has an infinite slope at zero variance
    std = torch.sqrt(var + 1e-12)
    return centered / (std + DINL_EPS)


def l2_normalize(features):
    """Scale every pixel's feature vector to unit length.

    ``x / sqrt(|x|^2 + 1e-8)``; all-zero vectors stay zero.
    """
    norm = torch.sqrt((features * features).sum(dim=1, keepdim=True) + L2_EPS)
    return features / norm


def cost_volume(reference, other, radius):
    """Spatial neighbourhood cost volume.

    Channel ``k`` holds ``sum_c reference(x) * other(x + o_k)`` for the
    offsets ``o_k = (dy, dx)`` with ``dy`` the outer and ``dx`` the inner
    loop over ``-radius..radius``. Offsets leaving the map correlate with
    zeros.

    :param torch.Tensor reference: ``(B, C, H, W)`` features.
    :param torch.Tensor other: ``(B, C, H, W)`` features.
    :param int radius: neighbourhood radius ``r``.

    :returns: ``(B, (2r+1)^2, H, W)`` correlations.
    :rtype: torch.Tensor
    """
    height, width = reference.shape[-2:]
    padded = F.pad(other, (radius, radius, radius, radius))
    volume = []
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            shifted = padded[:, :, dy:dy + height, dx:dx + width]
            volume.append((reference * shifted).sum(dim=1))
    return torch.stack(volume, dim=1)


def upsample_nearest(values, factor=2):
    """Replicate every pixel in a ``factor x factor`` block (any dtype)."""
    return values.repeat_interleave(factor, dim=-2).repeat_interleave(
        factor, dim=-1,
    )


def upsample_bilinear(values, factor=2):
    return F.interpolate(
        values, scale_factor=factor, mode='bilinear', align_corners=False,
    )


def downsample_nearest(values, factor):
    """Corner-anchored nearest sampling: keep every ``factor``-th pixel."""
    return values[..., ::factor, ::factor]


class DINL(nn.Module):
    """Layer wrapper around :func:`dinl_normalize` (no parameters)."""

    def forward(self, features):
        return dinl_normalize(features)


class Refiner(nn.Module):
    """Stack of 3x3 convolutions with ReLU and a linear output convolution.

    :ivar int in_channels: input channels.
    :ivar int width: channels of the hidden convolutions.
    :ivar int depth: number of hidden convolutions.
    :ivar int out_channels: channels of the final convolution.
    """

    def __init__(self, in_channels, width, depth, out_channels):
        super().__init__()
        layers = []
        channels = in_channels
        for _ in range(depth):
            layers.append(nn.Conv2d(channels, width, 3, padding=1))
            layers.append(nn.ReLU())
            channels = width
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv2d(channels, out_channels, 3, padding=1)
        self.in_channels = in_channels
        self.out_channels = out_channels

    def forward(self, x):
        return self.head(self.body(x))


def init_weights(module, seed):
    """Seeded fan-in scaled uniform initialization of every convolution.

    Weights are drawn from ``U(-sqrt(6 / fan_in), sqrt(6 / fan_in))``,
    biases start at zero.
    """
    generator = torch.Generator().manual_seed(int(seed))
    for layer in module.modules():
        if not isinstance(layer, nn.Conv2d):
            continue
        fan_in = layer.in_channels // layer.groups
        fan_in *= layer.kernel_size[0] * layer.kernel_size[1]
        bound = math.sqrt(6.0 / fan_in)
        with torch.no_grad():
            sample = torch.rand(
                layer.weight.shape, generator=generator, dtype=torch.float64,
            )
            layer.weight.copy_(((2.0 * sample - 1.0) * bound).to(
                layer.weight.dtype,
            ))
            if layer.bias is not None:
                layer.bias.zero_()
