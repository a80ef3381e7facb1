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

"""Procedural aerial scenes rendered by ray casting.

A scene is a textured ground plane with a road strip, water discs and
objects resting on the ground: spheres (trees) and axis-aligned boxes
(boulders and constructions). Every pixel is traced analytically, so depth
and labels are exact and come from the same ray hit.

World axes follow the camera convention with ``y`` pointing down; the
ground is the plane ``y = plane_height``. Depth is camera z-depth; sky
pixels have no depth (stored as 0) and the Sky label.
"""

import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import yaml
from PIL import Image

from aerial_depthseg.dataset import TARGET_CLASSES, write_dataset_info
from aerial_depthseg.errors import ConfigurationError
from aerial_depthseg.geometry import CameraIntrinsics, SE3Transform

SKY, WATER, LAND, TREES, BOULDERS, ROAD, OTHERS = range(7)

BASE_COLORS = np.array([
    [0.55, 0.70, 0.90],
    [0.15, 0.35, 0.55],
    [0.45, 0.40, 0.25],
    [0.15, 0.45, 0.15],
    [0.55, 0.55, 0.55],
    [0.30, 0.30, 0.32],
    [0.70, 0.35, 0.25],
])
TEXTURE_AMPLITUDE = 0.15
# texture contrast fades with distance so far ground does not alias
TEXTURE_FADE = 8.0
ROAD_HALF_WIDTH = 1.0
CORRIDOR = 2.5


@dataclass
class SceneConfig:
    """Synthetic dataset parameters.

    :ivar int width: image width.
    :ivar int height: image height.
    :ivar float plane_height: camera height above the ground in meters.
    :ivar int object_count: objects scattered along the trajectories.
    :ivar int texture_seed: seed of the textures, objects and trajectories.
    :ivar int trajectory_length: frames per trajectory.
    :ivar int train_trajectories: trajectories of the train split.
    :ivar int val_trajectories: trajectories of the val split.
    :ivar int test_trajectories: trajectories of the test split.
    :ivar float speed: forward motion per frame in meters.
    :ivar float tilt_degrees: downward camera pitch.
    """

    width: int = 64
    height: int = 64
    plane_height: float = 2.0
    object_count: int = 12
    texture_seed: int = 0
    trajectory_length: int = 20
    train_trajectories: int = 2
    val_trajectories: int = 1
    test_trajectories: int = 1
    speed: float = 0.5
    tilt_degrees: float = 10.0

    def __post_init__(self):
        if self.trajectory_length < 1:
            raise ConfigurationError(
                'trajectory_length must be at least 1, got {0}'.format(
                    self.trajectory_length,
                )
            )
        if self.width < 2 or self.height < 2:
            raise ConfigurationError('image size must be at least 2x2')
        if self.plane_height <= 0:
            raise ConfigurationError('plane_height must be positive')
        if self.texture_seed < 0:
            raise ConfigurationError('texture_seed must not be negative')
        if self.object_count < 0:
            raise ConfigurationError('object_count must not be negative')
        if self.speed <= 0:
            raise ConfigurationError('speed must be positive')
        if not 0 <= self.tilt_degrees < 90:
            raise ConfigurationError('tilt_degrees must be in [0, 90)')
        for name in ('train_trajectories', 'val_trajectories',
                     'test_trajectories'):
            if getattr(self, name) < 0:
                raise ConfigurationError('{0} must not be negative'.format(
                    name,
                ))

    def intrinsics(self):
        return CameraIntrinsics(
            fx=self.width / 2.0,
            fy=self.width / 2.0,
            cx=(self.width - 1) / 2.0,
            cy=(self.height - 1) / 2.0,
            width=self.width,
            height=self.height,
        )

    def as_dict(self):
        return asdict(self)


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    label: int = TREES


@dataclass
class Box:
    low: np.ndarray
    high: np.ndarray
    label: int = BOULDERS


@dataclass
class Scene:
    plane_height: float
    objects: list = field(default_factory=list)
    water: list = field(default_factory=list)
    # per class: wave vectors (2, 3) and phases (2,)
    waves: np.ndarray = None
    phases: np.ndarray = None


def rotation_x(angle):
    """Pitch: the camera's forward axis turns towards ``+y`` (down)."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def rotation_y(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def build_scene(cfg, extent):
    """Place the objects of a scene.

    :param SceneConfig cfg: scene parameters.
    :param float extent: furthest forward camera position.

    :rtype: :class:`Scene`
    """
    rng = np.random.default_rng(cfg.texture_seed)
    h = cfg.plane_height
    wavelengths = rng.uniform(3.0, 8.0, size=(len(BASE_COLORS), 2))
    directions = rng.normal(size=(len(BASE_COLORS), 2, 3))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    scene = Scene(
        plane_height=h,
        waves=directions * (2.0 * math.pi / wavelengths)[..., None],
        phases=rng.uniform(0.0, 2.0 * math.pi, size=(len(BASE_COLORS), 2)),
    )

    z_far = extent + 25.0
    for _ in range(cfg.object_count):
        kind = rng.integers(3)
        side = 1.0 if rng.random() < 0.5 else -1.0
        z = rng.uniform(4.0, z_far)
        if kind == 0:
            radius = rng.uniform(0.5, 1.2)
            x = side * (CORRIDOR + radius + rng.uniform(0.0, 6.0))
            scene.objects.append(Sphere(
                center=np.array([x, h - radius, z]), radius=radius,
            ))
        else:
            if kind == 1:
                half = rng.uniform(0.2, 0.5, size=3)
                label = BOULDERS
            else:
                half = np.array([rng.uniform(0.4, 0.8),
                                 rng.uniform(1.0, 2.0),
                                 rng.uniform(0.4, 0.8)])
                label = OTHERS
            x = side * (CORRIDOR + half[0] + rng.uniform(0.0, 6.0))
            center = np.array([x, h - half[1], z])
            scene.objects.append(Box(center - half, center + half, label))
    for _ in range(max(1, cfg.object_count // 6)):
        side = 1.0 if rng.random() < 0.5 else -1.0
        scene.water.append((
            side * rng.uniform(4.0, 8.0), rng.uniform(5.0, z_far),
            rng.uniform(1.5, 3.0),
        ))
    return scene


def _hit_plane(origin, dirs, h):
    with np.errstate(divide='ignore', invalid='ignore'):
        t = (h - origin[1]) / dirs[:, 1]
    return np.where((dirs[:, 1] > 0) & (t > 0), t, np.inf)


def _hit_sphere(origin, dirs, sphere):
    oc = origin - sphere.center
    a = np.einsum('ij,ij->i', dirs, dirs)
    b = 2.0 * dirs @ oc
    c = oc @ oc - sphere.radius ** 2
    disc = b * b - 4.0 * a * c
    root = np.sqrt(np.maximum(disc, 0.0))
    t = (-b - root) / (2.0 * a)
    return np.where((disc >= 0) & (t > 0), t, np.inf)


def _hit_box(origin, dirs, box):
    safe = np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    t1 = (box.low - origin) / safe
    t2 = (box.high - origin) / safe
    t_near = np.minimum(t1, t2).max(axis=1)
    t_far = np.maximum(t1, t2).min(axis=1)
    return np.where((t_near <= t_far) & (t_near > 0), t_near, np.inf)


def _ground_labels(points, scene):
    labels = np.full(points.shape[0], LAND, dtype=np.uint8)
    labels[np.abs(points[:, 0]) < ROAD_HALF_WIDTH] = ROAD
    for x, z, radius in scene.water:
        inside = (points[:, 0] - x) ** 2 + (points[:, 2] - z) ** 2 < \
            radius ** 2
        labels[inside] = WATER
    return labels


def _shade(points, labels, depth, scene):
    colors = BASE_COLORS[labels].copy()
    waves = scene.waves[labels]
    phases = scene.phases[labels]
    pattern = np.sin(np.einsum('nij,nj->ni', waves, points) + phases)
    texture = pattern[:, 0] * pattern[:, 1] * TEXTURE_AMPLITUDE * \
        np.exp(-depth / TEXTURE_FADE)
    colors += texture[:, None]
    return np.clip(colors, 0.0, 1.0)


def render_frame(scene, pose, intr):
    """Render one frame.

    :param Scene scene: scene.
    :param tuple pose: world-from-camera ``(rotation, center)`` numpy arrays.
    :param CameraIntrinsics intr: camera.

    :returns: ``(H, W, 3)`` float image in [0, 1], ``(H, W)`` float32 depth
        (0 for sky) and ``(H, W)`` uint8 labels.
    :rtype: tuple
    """
    rotation, origin = pose
    v, u = np.meshgrid(np.arange(intr.height, dtype=np.float64),
                       np.arange(intr.width, dtype=np.float64),
                       indexing='ij')
    rays = np.stack([
        (u - intr.cx) / intr.fx,
        (v - intr.cy) / intr.fy,
        np.ones_like(u),
    ], axis=-1).reshape(-1, 3)
    # camera rays have unit z, so the hit parameter is the z-depth
    dirs = rays @ rotation.T

    t = _hit_plane(origin, dirs, scene.plane_height)
    labels = np.full(t.shape, LAND, dtype=np.uint8)
    ground = np.isfinite(t)
    for obj in scene.objects:
        if isinstance(obj, Sphere):
            t_obj = _hit_sphere(origin, dirs, obj)
        else:
            t_obj = _hit_box(origin, dirs, obj)
        closer = t_obj < t
        t = np.where(closer, t_obj, t)
        labels[closer] = obj.label
        ground &= ~closer

    hit = np.isfinite(t)
    points = origin + dirs * np.where(hit, t, 0.0)[:, None]
    labels[ground] = _ground_labels(points[ground], scene)
    labels[~hit] = SKY
    depth = np.where(hit, t, 0.0)

    image = np.empty((t.shape[0], 3))
    image[hit] = _shade(points[hit], labels[hit], depth[hit], scene)
    # sky brightens towards the horizon
    elevation = np.clip(-dirs[~hit, 1] / np.linalg.norm(dirs[~hit], axis=1),
                        0.0, 1.0)
    image[~hit] = BASE_COLORS[SKY] + 0.25 * (1.0 - elevation)[:, None]
    image = np.clip(image, 0.0, 1.0)

    shape = (intr.height, intr.width)
    return (image.reshape(*shape, 3), depth.reshape(shape).astype(np.float32),
            labels.reshape(shape))


def trajectory_poses(cfg, index):
    """World-from-camera poses of one smooth 6-DoF trajectory.

    :returns: list of ``(rotation, center)`` numpy arrays.
    :rtype: list
    """
    rng = np.random.default_rng([cfg.texture_seed, index + 1])
    phase = rng.uniform(0.0, 2.0 * math.pi)
    offset = rng.uniform(-0.8, 0.8)
    start = index * 3.0
    tilt = math.radians(cfg.tilt_degrees)
    poses = []
    for k in range(cfg.trajectory_length):
        center = np.array([
            offset + 0.5 * math.sin(0.15 * k + phase),
            -0.2 * math.sin(0.1 * k + phase),
            start + cfg.speed * k,
        ])
        rotation = (
            rotation_y(0.08 * math.sin(0.12 * k + phase)) @
            rotation_x(tilt + 0.03 * math.sin(0.2 * k + phase)) @
            rotation_z(0.04 * math.sin(0.17 * k + phase))
        )
        poses.append((rotation, center))
    return poses


def pose_transform(pose):
    rotation, center = pose
    return SE3Transform(torch.from_numpy(rotation), torch.from_numpy(center))


def _save_frame(out_dir, trajectory, frame, image, depth, labels):
    names = {
        'image': os.path.join('images', trajectory,
                              '{0:04d}.png'.format(frame)),
        'depth': os.path.join('depth', trajectory,
                              '{0:04d}.tiff'.format(frame)),
        'labels': os.path.join('labels', trajectory,
                               '{0:04d}.png'.format(frame)),
    }
    for name in names.values():
        os.makedirs(os.path.join(out_dir, os.path.dirname(name)),
                    exist_ok=True)
    pixels = np.round(image * 255.0).astype(np.uint8)
    Image.fromarray(pixels).save(os.path.join(out_dir, names['image']))
    Image.fromarray(depth).save(os.path.join(out_dir, names['depth']))
    Image.fromarray(labels).save(os.path.join(out_dir, names['labels']))
    return names


def manifest_line(trajectory, frame, names, pose):
    rotation, center = pose
    numbers = ' '.join('{0:.17g}'.format(value)
                       for value in list(rotation.ravel()) + list(center))
    return '{0} {1} {2} {3} {4} {5}\n'.format(
        trajectory, frame, names['image'], names['depth'], names['labels'],
        numbers,
    )


def split_trajectories(cfg):
    splits = []
    index = 0
    for split, count in (('train', cfg.train_trajectories),
                         ('val', cfg.val_trajectories),
                         ('test', cfg.test_trajectories)):
        splits.append((split, list(range(index, index + count))))
        index += count
    return splits


def generate_synthetic_scene(cfg, out_dir):
    """Render a synthetic dataset into ``out_dir``.

    Writes RGB images, float32 depth, labels in the 7 target classes, one
    manifest per split, the ``dataset.yaml`` sidecar and ``scene.yaml``
    with the generating parameters.

    :param SceneConfig cfg: scene parameters.
    :param str out_dir: dataset root.

    :returns: frame count per split.
    :rtype: dict
    """
    logger = logging.getLogger(__name__)
    intr = cfg.intrinsics()
    splits = split_trajectories(cfg)
    trajectories = sum(len(indices) for _, indices in splits)
    if trajectories == 0:
        raise ConfigurationError('the scene has no trajectory')
    extent = (trajectories - 1) * 3.0 + cfg.speed * cfg.trajectory_length
    scene = build_scene(cfg, extent)

    os.makedirs(out_dir, exist_ok=True)
    write_dataset_info(out_dir, intr, 'target', TARGET_CLASSES)
    with open(os.path.join(out_dir, 'scene.yaml'), 'w',
              encoding='utf-8') as f:
        yaml.safe_dump(cfg.as_dict(), f, default_flow_style=False,
                       sort_keys=True)

    counts = {}
    for split, indices in splits:
        lines = []
        for index in indices:
            trajectory = 'traj_{0:03d}'.format(index)
            for frame, pose in enumerate(trajectory_poses(cfg, index)):
                image, depth, labels = render_frame(scene, pose, intr)
                names = _save_frame(out_dir, trajectory, frame, image,
                                    depth, labels)
                lines.append(manifest_line(trajectory, frame, names, pose))
        with open(os.path.join(out_dir, '{0}.txt'.format(split)), 'w',
                  encoding='utf-8') as f:
            f.writelines(lines)
        counts[split] = len(lines)
        logger.info('{0}: {1} frames'.format(split, len(lines)))
    return counts
