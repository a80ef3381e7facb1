#!/usr/bin/env python
# -*- coding: UTF-8 -*-

"""Test for geometry."""

import math

import pytest
import torch

from aerial_depthseg import geometry
from aerial_depthseg.errors import (
    ConfigurationError,
    DegenerateBaselineError,
    InvalidPoseError,
    ModeMisuseError,
    ShapeError,
)
from aerial_depthseg.geometry import (
    CameraIntrinsics,
    CorrespondenceField,
    DepthMap,
    ParallaxMap,
    SE3Transform,
)


def rotation(axis, angle):
    axis = torch.tensor(axis, dtype=torch.float64)
    axis = axis / torch.linalg.norm(axis)
    skew = torch.tensor([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ], dtype=torch.float64)
    return torch.linalg.matrix_exp(angle * skew)


def constant_depth(value, intr, batch=1):
    return DepthMap.from_values(torch.full(
        (batch, 1, intr.height, intr.width), value, dtype=torch.float64,
    ))


def lateral(x, y=0.0, z=0.0):
    return SE3Transform(torch.eye(3, dtype=torch.float64),
                        torch.tensor([x, y, z], dtype=torch.float64))


def test_intrinsics_scaled(intr):
    half = intr.scaled(32, 32)
    assert half.fx == 50.0
    assert half.cx == pytest.approx(15.75)
    assert (half.width, half.height) == (32, 32)


def test_intrinsics_rejects_bad_values():
    with pytest.raises(ConfigurationError):
        CameraIntrinsics(0.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(ConfigurationError):
        CameraIntrinsics(1.0, 1.0, 5.0, 1.0, 4, 4)


def test_relative_motion_same_pose_is_identity():
    pose = SE3Transform(rotation([1, 2, 3], 0.7),
                        torch.tensor([4.0, -1.0, 2.0], dtype=torch.float64))
    motion = geometry.relative_motion(pose, pose)
    assert torch.allclose(motion.rotation, torch.eye(3, dtype=torch.float64),
                          atol=1e-12)
    assert torch.allclose(motion.translation,
                          torch.zeros(3, dtype=torch.float64), atol=1e-12)


def test_relative_motion_translation():
    motion = geometry.relative_motion(SE3Transform.identity(),
                                      lateral(1.0))
    assert motion.translation.tolist() == [1.0, 0.0, 0.0]


def test_relative_motion_matches_homogeneous_matrices():
    generator = torch.Generator().manual_seed(3)
    for _ in range(5):
        axes = torch.randn(2, 3, generator=generator, dtype=torch.float64)
        angles = torch.rand(2, generator=generator, dtype=torch.float64)
        shifts = torch.randn(2, 3, generator=generator, dtype=torch.float64)
        prev = SE3Transform(rotation(axes[0].tolist(), float(angles[0])),
                            shifts[0])
        curr = SE3Transform(rotation(axes[1].tolist(), float(angles[1])),
                            shifts[1])
        expected = torch.linalg.inv(prev.matrix()) @ curr.matrix()
        got = geometry.relative_motion(prev, curr).matrix()
        assert (got - expected).abs().max() < 1e-9


def test_relative_motion_rejects_non_orthonormal_rotation():
    bad = SE3Transform(2.0 * torch.eye(3, dtype=torch.float64),
                       torch.zeros(3, dtype=torch.float64))
    with pytest.raises(InvalidPoseError):
        geometry.relative_motion(bad, SE3Transform.identity())
    mirror = SE3Transform(torch.diag(torch.tensor([-1.0, 1.0, 1.0],
                                                  dtype=torch.float64)),
                          torch.zeros(3, dtype=torch.float64))
    with pytest.raises(InvalidPoseError):
        mirror.check()


def test_compose_invert():
    pose = SE3Transform(rotation([0, 1, 0], 0.3),
                        torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64))
    product = pose.compose(pose.invert()).matrix()
    assert torch.allclose(product, torch.eye(4, dtype=torch.float64),
                          atol=1e-12)


def random_poses(count, generator):
    omega = torch.randn(count, 3, generator=generator, dtype=torch.float64)
    skew = torch.zeros(count, 3, 3, dtype=torch.float64)
    skew[:, 0, 1], skew[:, 0, 2] = -omega[:, 2], omega[:, 1]
    skew[:, 1, 0], skew[:, 1, 2] = omega[:, 2], -omega[:, 0]
    skew[:, 2, 0], skew[:, 2, 1] = -omega[:, 1], omega[:, 0]
    translation = 5.0 * torch.randn(count, 3, generator=generator,
                                    dtype=torch.float64)
    return SE3Transform(torch.linalg.matrix_exp(skew), translation)


def test_compose_invert_closure():
    generator = torch.Generator().manual_seed(0)
    a, b, c = (random_poses(1000, generator) for _ in range(3))
    eye = torch.eye(4, dtype=torch.float64).expand(1000, 4, 4)

    assert torch.allclose(a.compose(a.invert()).matrix(), eye, atol=1e-9)
    assert torch.allclose(a.invert().compose(a).matrix(), eye, atol=1e-9)
    assert torch.allclose(a.invert().invert().matrix(), a.matrix(),
                          atol=1e-12)
    assert torch.allclose(a.compose(b).invert().matrix(),
                          b.invert().compose(a.invert()).matrix(), atol=1e-9)
    assert torch.allclose(a.compose(b).compose(c).matrix(),
                          a.compose(b.compose(c)).matrix(), atol=1e-9)
    assert torch.allclose(a.compose(b).matrix(), a.matrix() @ b.matrix(),
                          atol=1e-9)
    a.compose(b).invert().check()


def test_reproject_identity_is_pixel_grid(intr):
    field = geometry.reproject(constant_depth(7.0, intr),
                               SE3Transform.identity(), intr)
    u, v = geometry.pixel_grid(intr.height, intr.width)
    assert torch.allclose(field.coords[0, ..., 0], u, atol=1e-9)
    assert torch.allclose(field.coords[0, ..., 1], v, atol=1e-9)
    assert field.in_view_mask.all()


def test_reproject_lateral_shift(intr):
    field = geometry.reproject(constant_depth(10.0, intr), lateral(1.0),
                               intr)
    u, v = geometry.pixel_grid(intr.height, intr.width)
    assert torch.allclose(field.coords[0, ..., 0], u + 10.0, atol=1e-9)
    assert torch.allclose(field.coords[0, ..., 1], v, atol=1e-9)
    assert field.in_view_mask[0, :, :54].all()
    assert not field.in_view_mask[0, :, 54:].any()


def test_reproject_behind_camera(intr):
    field = geometry.reproject(constant_depth(1.0, intr),
                               lateral(0.0, 0.0, -2.0), intr)
    assert not field.in_view_mask.any()


def test_reproject_invalid_depth_is_out_of_view(intr):
    depth = constant_depth(5.0, intr)
    depth.values[0, 0, 3, 4] = 0.0
    depth = DepthMap.from_values(depth.values)
    field = geometry.reproject(depth, SE3Transform.identity(), intr)
    assert not field.in_view_mask[0, 3, 4]
    assert field.in_view_mask.sum() == intr.width * intr.height - 1


def test_reproject_resolution_mismatch(intr):
    with pytest.raises(ShapeError):
        geometry.reproject(constant_depth(1.0, intr.scaled(32, 32)),
                           SE3Transform.identity(), intr)


def test_warp_identity(intr):
    field = geometry.reproject(constant_depth(3.0, intr),
                               SE3Transform.identity(), intr)
    source = torch.rand(1, 2, intr.height, intr.width, dtype=torch.float64)
    warped, mask = geometry.warp(source, field)
    assert torch.allclose(warped, source, atol=1e-9)
    assert mask.all()


def shifted_field(size, shift):
    v, u = torch.meshgrid(torch.arange(size, dtype=torch.float64),
                          torch.arange(size, dtype=torch.float64),
                          indexing='ij')
    coords = torch.stack([u + shift, v], dim=-1)[None]
    return CorrespondenceField(coords, (u + shift <= size - 1)[None])


def test_warp_integer_shift_nearest():
    source = torch.arange(16, dtype=torch.float32).reshape(1, 1, 4, 4)
    warped, mask = geometry.warp(source, shifted_field(4, 1.0), 'nearest')
    assert torch.equal(warped[0, 0, :, :3], source[0, 0, :, 1:])
    assert (warped[0, 0, :, 3] == 0).all()
    assert mask[0, :, :3].all()
    assert not mask[0, :, 3].any()


def test_warp_labels_nearest():
    labels = torch.arange(16, dtype=torch.int64).reshape(1, 4, 4)
    warped, _ = geometry.warp(labels, shifted_field(4, 1.0), 'nearest')
    assert warped.dtype == torch.int64
    assert torch.equal(warped[0, :, :3], labels[0, :, 1:])
    assert (warped[0, :, 3] == geometry.IGNORE_LABEL).all()


def test_warp_labels_bilinear_rejected():
    labels = torch.zeros(1, 4, 4, dtype=torch.int64)
    with pytest.raises(ModeMisuseError):
        geometry.warp(labels, shifted_field(4, 0.0), 'bilinear')


def test_warp_unknown_mode():
    with pytest.raises(ConfigurationError):
        geometry.warp(torch.zeros(1, 1, 4, 4), shifted_field(4, 0.0),
                      'bicubic')


def test_warp_shape_mismatch():
    with pytest.raises(ShapeError):
        geometry.warp(torch.zeros(1, 1, 5, 5), shifted_field(4, 0.0))
    with pytest.raises(ShapeError):
        geometry.warp(torch.zeros(2, 1, 4, 4), shifted_field(4, 0.0))


def test_parallax_pure_rotation_is_zero(intr):
    motion = SE3Transform(rotation([0, 1, 0], 0.05),
                          torch.zeros(3, dtype=torch.float64))
    parallax = geometry.depth_to_parallax(constant_depth(20.0, intr), motion,
                                          intr)
    assert (parallax.values == 0).all()


def test_parallax_is_disparity(intr):
    parallax = geometry.depth_to_parallax(constant_depth(50.0, intr),
                                          lateral(1.0), intr)
    assert parallax.values[0, 0, 31, 31] == pytest.approx(2.0, abs=1e-12)
    assert torch.allclose(parallax.values,
                          torch.full_like(parallax.values, 2.0))


def test_parallax_roundtrip(intr):
    generator = torch.Generator().manual_seed(11)
    values = 1.0 + 79.0 * torch.rand(2, 1, intr.height, intr.width,
                                     generator=generator,
                                     dtype=torch.float64)
    depth = DepthMap.from_values(values)
    direction = torch.randn(3, generator=generator, dtype=torch.float64)
    motion = SE3Transform(rotation([0.2, 1.0, 0.1], 0.04),
                          0.5 * direction / torch.linalg.norm(direction))
    parallax = geometry.depth_to_parallax(depth, motion, intr)
    back = geometry.parallax_to_depth(parallax, motion, intr)
    usable = back.valid_mask & (parallax.values > geometry.PARALLAX_EPS)
    assert usable.sum() > 0.5 * usable.numel()
    error = ((back.values - values).abs() / values)[usable]
    assert error.max() < 1e-6


def test_parallax_to_depth_pure_rotation(intr):
    motion = SE3Transform(rotation([1, 0, 0], 0.1),
                          torch.zeros(3, dtype=torch.float64))
    parallax = ParallaxMap(torch.ones(1, 1, intr.height, intr.width,
                                      dtype=torch.float64))
    with pytest.raises(DegenerateBaselineError):
        geometry.parallax_to_depth(parallax, motion, intr)
    depth = geometry.parallax_to_depth(parallax, motion, intr, strict=False)
    assert not depth.valid_mask.any()
    assert torch.isfinite(depth.values).all()


def test_parallax_below_epsilon_is_invalid(intr):
    values = torch.full((1, 1, intr.height, intr.width), 2.0,
                        dtype=torch.float64)
    values[0, 0, 0, 0] = 0.0
    depth = geometry.parallax_to_depth(ParallaxMap(values), lateral(1.0),
                                       intr)
    assert not depth.valid_mask[0, 0, 0, 0]
    assert depth.valid_mask.sum() == intr.width * intr.height - 1
    assert depth.values[0, 0, 5, 5] == pytest.approx(50.0)


def test_parallax_correspondence_matches_reprojection(intr):
    motion = SE3Transform(rotation([0, 0, 1], 0.02),
                          torch.tensor([0.3, -0.2, 0.4], dtype=torch.float64))
    depth = constant_depth(25.0, intr)
    parallax = geometry.depth_to_parallax(depth, motion, intr)
    direct = geometry.parallax_correspondence(parallax, motion, intr)
    expected = geometry.reproject(
        geometry.parallax_to_depth(parallax, motion, intr), motion, intr,
    )
    both = direct.in_view_mask & expected.in_view_mask
    assert both.any()
    assert torch.allclose(direct.coords[both], expected.coords[both],
                          atol=1e-6)


def test_parallax_correspondence_zero_parallax_is_rotation_only(intr):
    parallax = ParallaxMap(torch.zeros(1, 1, intr.height, intr.width,
                                       dtype=torch.float64))
    field = geometry.parallax_correspondence(parallax, lateral(1.0), intr)
    u, v = geometry.pixel_grid(intr.height, intr.width)
    assert torch.allclose(field.coords[0, ..., 0], u, atol=1e-9)
    assert torch.allclose(field.coords[0, ..., 1], v, atol=1e-9)
    assert field.in_view_mask.all()


def test_baseline_degenerate():
    motions = SE3Transform(
        torch.eye(3, dtype=torch.float64).expand(2, 3, 3),
        torch.tensor([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]], dtype=torch.float64),
    )
    assert geometry.baseline_degenerate(motions, 2).tolist() == [True, False]
    assert geometry.baseline_degenerate(lateral(0.0), 3).tolist() == [
        True, True, True,
    ]


def test_camera_rays_principal_point():
    rays = geometry.camera_rays(CameraIntrinsics(
        100.0, 100.0, 2.0, 1.0, 5, 3,
    ))
    assert rays[:, 1, 2].tolist() == [0.0, 0.0, 1.0]
    assert rays[0, 1, 4] == pytest.approx(0.02)
    assert not math.isnan(float(rays.sum()))
