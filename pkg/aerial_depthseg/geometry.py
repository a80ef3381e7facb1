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

"""Geometric kernels shared by the networks, the losses and the data code.

All functions work on batched torch tensors (``B x C x H x W`` maps,
``B x 3 x 3`` rotations), are differentiable and have no side effects.

Parallax is the pixel distance between the reprojection of a pixel at its
depth and the reprojection of the same viewing ray at infinity (the
rotation-only reprojection). For a camera motion ``X_prev = R X + t`` and a
viewing ray ``a = R K^-1 q`` this distance is::

    p = |g| / (a_z (d a_z + t_z))
    g = (fx (t_x a_z - a_x t_z), fy (t_y a_z - a_y t_z))

which is the stereo disparity ``f b / d`` for a lateral baseline and is
inverted per ray by ``d = (|g| / (a_z p) - t_z) / a_z``.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from aerial_depthseg.errors import (
    ConfigurationError,
    DegenerateBaselineError,
    InvalidPoseError,
    ModeMisuseError,
    ShapeError,
)

PARALLAX_EPS = 1e-4
BASELINE_EPS = 1e-6
IGNORE_LABEL = 255
WARP_MODES = ('bilinear', 'nearest')

_Z_EPS = 1e-9
_FRAME_TOLERANCE = 1e-4


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera parameters in pixels.

    :ivar float fx: horizontal focal length.
    :ivar float fy: vertical focal length.
    :ivar float cx: principal point column.
    :ivar float cy: principal point row.
    :ivar int width: image width.
    :ivar int height: image height.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError(
                'focal lengths must be positive, got fx={0} fy={1}'.format(
                    self.fx, self.fy,
                )
            )
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigurationError(
                'principal point ({0}, {1}) outside a {2}x{3} image'.format(
                    self.cx, self.cy, self.width, self.height,
                )
            )

    def scaled(self, width, height):
        """Get the intrinsics of the same camera at another resolution.

        :param int width: new image width.
        :param int height: new image height.

        :returns: rescaled intrinsics.
        :rtype: :class:`CameraIntrinsics`
        """
        sx = width / self.width
        sy = height / self.height
        return CameraIntrinsics(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=self.cx * sx,
            cy=self.cy * sy,
            width=int(width),
            height=int(height),
        )

    def matrix(self, dtype=torch.float64, device=None):
        return torch.tensor(
            [[self.fx, 0.0, self.cx],
             [0.0, self.fy, self.cy],
             [0.0, 0.0, 1.0]],
            dtype=dtype,
            device=device,
        )

    def as_dict(self):
        return {
            'fx': float(self.fx),
            'fy': float(self.fy),
            'cx': float(self.cx),
            'cy': float(self.cy),
            'width': int(self.width),
            'height': int(self.height),
        }


@dataclass(frozen=True)
class SE3Transform:
    """Rigid transform ``x -> rotation @ x + translation``.

    Tensors may carry leading batch dimensions: ``rotation`` is
    ``(..., 3, 3)`` and ``translation`` is ``(..., 3)`` in meters.
    """

    rotation: torch.Tensor
    translation: torch.Tensor

    @classmethod
    def identity(cls, batch_shape=(), dtype=torch.float64, device=None):
        rotation = torch.eye(3, dtype=dtype, device=device)
        rotation = rotation.expand(*batch_shape, 3, 3).clone()
        translation = torch.zeros(*batch_shape, 3, dtype=dtype, device=device)
        return cls(rotation, translation)

    def matrix(self):
        """Get the homogeneous ``(..., 4, 4)`` matrix."""
        batch_shape = self.rotation.shape[:-2]
        matrix = torch.zeros(
            *batch_shape, 4, 4,
            dtype=self.rotation.dtype,
            device=self.rotation.device,
        )
        matrix[..., :3, :3] = self.rotation
        matrix[..., :3, 3] = self.translation
        matrix[..., 3, 3] = 1.0
        return matrix

    def compose(self, other):
        """Get ``self o other`` (apply ``other`` first)."""
        rotation = self.rotation @ other.rotation
        translation = (
            self.rotation @ other.translation.unsqueeze(-1)
        ).squeeze(-1) + self.translation
        return SE3Transform(rotation, translation)

    def invert(self):
        rotation = self.rotation.transpose(-1, -2)
        translation = -(rotation @ self.translation.unsqueeze(-1)).squeeze(-1)
        return SE3Transform(rotation, translation)

    def translation_norm(self):
        return torch.linalg.norm(self.translation, dim=-1)

    def to(self, *args, **kwargs):
        return SE3Transform(
            self.rotation.to(*args, **kwargs),
            self.translation.to(*args, **kwargs),
        )

    def __getitem__(self, index):
        return SE3Transform(self.rotation[index], self.translation[index])

    def check(self, tolerance=None):
        """Raise if the rotation is not a proper rotation matrix.

        :param float tolerance: accepted deviation; defaults to 1e-6 for
            64-bit and 1e-4 for 32-bit tensors.
        """
        if tolerance is None:
            tolerance = _tolerance(self.rotation.dtype)
        rotation = self.rotation
        if rotation.shape[-2:] != (3, 3) or self.translation.shape[-1] != 3:
            raise InvalidPoseError('malformed transform shapes {0} {1}'.format(
                tuple(rotation.shape), tuple(self.translation.shape),
            ))
        eye = torch.eye(3, dtype=rotation.dtype, device=rotation.device)
        gram = rotation.transpose(-1, -2) @ rotation
        ortho_error = (gram - eye).abs().amax() if gram.numel() else 0.0
        det_error = (torch.linalg.det(rotation) - 1.0).abs()
        det_error = det_error.amax() if det_error.numel() else 0.0
        if not (torch.isfinite(rotation).all() and
                torch.isfinite(self.translation).all()):
            raise InvalidPoseError('non-finite pose')
        if ortho_error > tolerance or det_error > tolerance:
            raise InvalidPoseError(
                'rotation is not orthonormal (|RtR-I|={0:.3g}, '
                '|det-1|={1:.3g})'.format(float(ortho_error), float(det_error))
            )
        return self


@dataclass
class DepthMap:
    """Metric depth ``(B, 1, H, W)`` with its validity mask."""

    values: torch.Tensor
    valid_mask: torch.Tensor

    @classmethod
    def from_values(cls, values):
        """Wrap raw depths, marking non-positive or non-finite ones invalid."""
        valid = torch.isfinite(values) & (values > 0)
        return cls(torch.where(valid, values, torch.zeros_like(values)), valid)

    @property
    def shape(self):
        return tuple(self.values.shape[-2:])


@dataclass
class ParallaxMap:
    """Non-negative parallax ``(B, 1, H, W)`` in pixels."""

    values: torch.Tensor


@dataclass
class CorrespondenceField:
    """Subpixel source coordinates ``(B, H, W, 2)`` as ``(x, y)``."""

    coords: torch.Tensor
    in_view_mask: torch.Tensor


def _tolerance(dtype):
    return 1e-6 if dtype == torch.float64 else 1e-4


def relative_motion(pose_prev, pose_curr):
    """Get the motion mapping current camera points into the previous camera.

    :param SE3Transform pose_prev: world-from-camera pose at ``t-1``.
    :param SE3Transform pose_curr: world-from-camera pose at ``t``.

    :returns: camera_prev-from-camera_curr transform.
    :rtype: :class:`SE3Transform`
    """
    pose_prev.check()
    pose_curr.check()
    return pose_prev.invert().compose(pose_curr)


def _batched_motion(motion, batch, dtype, device):
    rotation = motion.rotation.to(dtype=dtype, device=device)
    translation = motion.translation.to(dtype=dtype, device=device)
    if rotation.dim() == 2:
        rotation = rotation.expand(batch, 3, 3)
        translation = translation.expand(batch, 3)
    if rotation.shape[0] != batch:
        raise ShapeError('{0} motions for a batch of {1}'.format(
            rotation.shape[0], batch,
        ))
    return rotation, translation


def pixel_grid(height, width, dtype=torch.float64, device=None):
    """Get the ``(u, v)`` pixel coordinate grids of an image."""
    v, u = torch.meshgrid(
        torch.arange(height, dtype=dtype, device=device),
        torch.arange(width, dtype=dtype, device=device),
        indexing='ij',
    )
    return u, v


def camera_rays(intr, dtype=torch.float64, device=None):
    """Get the ``(3, H, W)`` viewing rays ``K^-1 q`` (unit z component)."""
    u, v = pixel_grid(intr.height, intr.width, dtype, device)
    x = (u - intr.cx) / intr.fx
    y = (v - intr.cy) / intr.fy
    return torch.stack([x, y, torch.ones_like(x)], dim=0)


def _rotated_rays(motion, intr, batch, dtype, device):
    rotation, translation = _batched_motion(motion, batch, dtype, device)
    rays = camera_rays(intr, dtype, device)
    rotated = torch.einsum('bij,jhw->bihw', rotation, rays)
    return rotated, translation


def _check_resolution(values, intr):
    if tuple(values.shape[-2:]) != (intr.height, intr.width):
        raise ShapeError('map of {0}x{1} does not match intrinsics '
                         '{2}x{3}'.format(values.shape[-1], values.shape[-2],
                                          intr.width, intr.height))


def _finish_field(coords, front, intr):
    # rounding may land a border pixel a hair outside the frame
    u = coords[..., 0]
    v = coords[..., 1]
    tol = _FRAME_TOLERANCE
    in_view = front & (
        (u >= -tol) & (u <= intr.width - 1 + tol) &
        (v >= -tol) & (v <= intr.height - 1 + tol)
    )
    clamped = torch.stack([
        u.clamp(0, intr.width - 1),
        v.clamp(0, intr.height - 1),
    ], dim=-1)
    coords = torch.where(in_view.unsqueeze(-1), clamped, coords)
    return CorrespondenceField(coords, in_view)


def baseline_degenerate(motion, batch):
    """Get the ``(B,)`` mask of motions too short to triangulate depth."""
    norm = motion.translation_norm()
    return (norm <= BASELINE_EPS).expand(batch) if norm.dim() == 0 else (
        norm <= BASELINE_EPS
    )


def reproject(depth, motion, intr):
    """Map every pixel of the current frame into the previous frame.

    :param DepthMap depth: current-frame depth.
    :param SE3Transform motion: camera_prev-from-camera_curr motion.
    :param CameraIntrinsics intr: intrinsics at the depth resolution.

    :returns: subpixel coordinates in the previous frame.
    :rtype: :class:`CorrespondenceField`
    """
    values = depth.values
    _check_resolution(values, intr)
    batch = values.shape[0]
    rotated, translation = _rotated_rays(
        motion, intr, batch, values.dtype, values.device,
    )
    points = values * rotated + translation[:, :, None, None]
    z = points[:, 2]
    front = z > _Z_EPS
    z_safe = torch.where(front, z, torch.ones_like(z))
    u = intr.fx * points[:, 0] / z_safe + intr.cx
    v = intr.fy * points[:, 1] / z_safe + intr.cy
    coords = torch.stack([u, v], dim=-1)
    return _finish_field(coords, front & depth.valid_mask[:, 0], intr)


def _parallax_terms(motion, intr, batch, dtype, device):
    rotated, translation = _rotated_rays(motion, intr, batch, dtype, device)
    tx, ty, tz = (translation[:, i, None, None] for i in range(3))
    ax, ay, az = rotated[:, 0], rotated[:, 1], rotated[:, 2]
    gx = intr.fx * (tx * az - ax * tz)
    gy = intr.fy * (ty * az - ay * tz)
    return ax, ay, az, tz, gx, gy


def depth_to_parallax(depth, motion, intr):
    """Convert depth into parallax with respect to the previous camera.

    Pixels with invalid depth, or whose point lies behind either camera,
    get zero parallax.

    :rtype: :class:`ParallaxMap`
    """
    values = depth.values
    _check_resolution(values, intr)
    _, _, az, tz, gx, gy = _parallax_terms(
        motion, intr, values.shape[0], values.dtype, values.device,
    )
    d = values[:, 0]
    g_norm = torch.sqrt(gx * gx + gy * gy)
    denom = az * (d * az + tz)
    valid = depth.valid_mask[:, 0] & (az > _Z_EPS) & (d * az + tz > _Z_EPS)
    safe = torch.where(valid, denom, torch.ones_like(denom))
    parallax = torch.where(valid, g_norm / safe, torch.zeros_like(denom))
    return ParallaxMap(parallax.unsqueeze(1))


def parallax_to_depth(parallax, motion, intr, strict=True):
    """Convert parallax back into depth along each viewing ray.

    Pixels whose parallax is below :data:`PARALLAX_EPS` are marked invalid.
    Their values stay finite so that masked losses can still use them.

    :param ParallaxMap parallax: parallax in pixels.
    :param SE3Transform motion: camera_prev-from-camera_curr motion.
    :param CameraIntrinsics intr: intrinsics at the parallax resolution.
    :param bool strict: raise on a degenerate baseline instead of
        invalidating the whole sample.

    :returns: depth map.
    :rtype: :class:`DepthMap`
    """
    p = parallax.values
    _check_resolution(p, intr)
    batch = p.shape[0]
    rotation, translation = _batched_motion(motion, batch, p.dtype, p.device)
    degenerate = torch.linalg.norm(translation, dim=-1) <= BASELINE_EPS
    if strict and bool(degenerate.any()):
        raise DegenerateBaselineError(
            'translation norm below {0} m, depth is not observable'.format(
                BASELINE_EPS,
            )
        )
    _, _, az, tz, gx, gy = _parallax_terms(
        motion, intr, batch, p.dtype, p.device,
    )
    g_norm = torch.sqrt(gx * gx + gy * gy)
    front = az > _Z_EPS
    az_safe = torch.where(front, az, torch.ones_like(az))
    p_safe = p[:, 0].clamp_min(PARALLAX_EPS)
    depth = (g_norm / (az_safe * p_safe) - tz) / az_safe
    valid = (
        (p[:, 0] > PARALLAX_EPS) & front & (depth > 0) &
        torch.isfinite(depth) & ~degenerate[:, None, None]
    )
    return DepthMap(depth.unsqueeze(1), valid.unsqueeze(1))


def parallax_correspondence(parallax, motion, intr):
    """Reprojection field computed straight from a parallax map.

    Equals ``reproject(parallax_to_depth(parallax))`` wherever the parallax
    is invertible; a zero parallax gives the rotation-only reprojection
    (point at infinity) instead of an invalid pixel.

    :rtype: :class:`CorrespondenceField`
    """
    p = parallax.values
    _check_resolution(p, intr)
    ax, ay, az, _, gx, gy = _parallax_terms(
        motion, intr, p.shape[0], p.dtype, p.device,
    )
    front = az > _Z_EPS
    az_safe = torch.where(front, az, torch.ones_like(az))
    g_norm = torch.sqrt(gx * gx + gy * gy).clamp_min(1e-12)
    u = intr.fx * ax / az_safe + intr.cx + p[:, 0] * gx / g_norm
    v = intr.fy * ay / az_safe + intr.cy + p[:, 0] * gy / g_norm
    coords = torch.stack([u, v], dim=-1)
    return _finish_field(coords, front, intr)


def warp(source_map, field, mode='bilinear'):
    """Sample a previous-frame map at the coordinates of a field.

    Continuous maps (features, images, probabilities) may use ``bilinear``
    or ``nearest``; integer label maps must use ``nearest``. Out-of-view
    pixels are filled with 0, or :data:`IGNORE_LABEL` for label maps.

    :param torch.Tensor source_map: ``(B, C, H, W)`` map, or ``(B, H, W)``
        label map.
    :param CorrespondenceField field: correspondences at the same
        resolution.
    :param str mode: ``bilinear`` or ``nearest``.

    :returns: warped map and ``(B, H, W)`` validity mask.
    :rtype: tuple
    """
    if mode not in WARP_MODES:
        raise ConfigurationError('unknown warp mode {0}'.format(mode))
    is_label = not torch.is_floating_point(source_map)
    if is_label and mode == 'bilinear':
        raise ModeMisuseError('label maps must be warped with nearest mode')
    squeeze = source_map.dim() == 3
    if squeeze:
        source_map = source_map.unsqueeze(1)
    height, width = source_map.shape[-2:]
    if tuple(field.coords.shape[1:3]) != (height, width):
        raise ShapeError('field of {0} does not match map of {1}'.format(
            tuple(field.coords.shape[1:3]), (height, width),
        ))
    if field.coords.shape[0] != source_map.shape[0]:
        raise ShapeError('field batch {0} does not match map batch '
                         '{1}'.format(field.coords.shape[0],
                                      source_map.shape[0]))

    mask = field.in_view_mask
    sample = source_map.to(torch.float32) if is_label else source_map
    coords = field.coords.to(sample.dtype)
    grid = torch.stack([
        2.0 * coords[..., 0] / max(width - 1, 1) - 1.0,
        2.0 * coords[..., 1] / max(height - 1, 1) - 1.0,
    ], dim=-1)
    grid = torch.where(mask.unsqueeze(-1), grid, torch.full_like(grid, -2.0))
    warped = F.grid_sample(
        sample, grid, mode=mode, padding_mode='zeros', align_corners=True,
    )
    mask_c = mask.unsqueeze(1)
    if is_label:
        warped = torch.round(warped).to(source_map.dtype)
        warped = torch.where(
            mask_c, warped, torch.full_like(warped, IGNORE_LABEL),
        )
    else:
        warped = warped * mask_c.to(warped.dtype)
    if squeeze:
        warped = warped[:, 0]
    return warped, mask
