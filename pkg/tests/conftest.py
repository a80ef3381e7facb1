#!/usr/bin/env python
# -*- coding: UTF-8 -*-

"""Shared fixtures."""

import os

import numpy as np
import pytest
from PIL import Image

from aerial_depthseg.dataset import MIDAIR_CLASSES, write_dataset_info
from aerial_depthseg.geometry import CameraIntrinsics
from aerial_depthseg.model import ArchitectureConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run slow end-to-end tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end tests, opt-in")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def intr():
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=31.5, cy=31.5,
                            width=64, height=64)


@pytest.fixture
def small_arch():
    """A network small enough to run on 32x32 frames in tests."""
    return ArchitectureConfig(
        num_levels=3,
        encoder_channels=[4, 6, 8],
        num_classes=3,
        refiner_depth=1,
        refiner_channels=8,
        sncv_radius=1,
    )


def write_frames(root, trajectory, count, size=32, label_offset=0,
                 manifest=None):
    """Write ``count`` frames of a forward moving camera; returns manifest
    lines."""
    lines = []
    for folder in ('images', 'depth', 'labels'):
        os.makedirs(os.path.join(root, folder), exist_ok=True)
    for frame in range(count):
        stem = '{0}_{1}'.format(trajectory, frame)
        image = np.full((size, size, 3), 40 * frame % 256, dtype=np.uint8)
        Image.fromarray(image).save(os.path.join(root, 'images',
                                                 stem + '.png'))
        depth = np.full((size, size), 10.0, dtype=np.float32)
        Image.fromarray(depth).save(os.path.join(root, 'depth',
                                                 stem + '.tiff'))
        labels = ((np.arange(size * size).reshape(size, size) +
                   label_offset) % 14).astype(np.uint8)
        Image.fromarray(labels).save(os.path.join(root, 'labels',
                                                  stem + '.png'))
        lines.append(
            '{0} {1} images/{2}.png depth/{2}.tiff labels/{2}.png '
            '1 0 0 0 1 0 0 0 1 0 0 {3}\n'.format(trajectory, frame, stem,
                                                 0.5 * frame)
        )
    if manifest is not None:
        with open(os.path.join(root, manifest), 'a') as f:
            f.writelines(lines)
    return lines


@pytest.fixture
def tiny_dataset(tmp_path):
    """MidAir-labelled dataset: train has trajectories ``a`` (5 frames) and
    ``b`` (3 frames), val and test one trajectory of 3 frames."""
    root = str(tmp_path / 'data')
    os.makedirs(root)
    write_dataset_info(root, CameraIntrinsics(16.0, 16.0, 15.5, 15.5, 32, 32),
                       'midair', MIDAIR_CLASSES)
    write_frames(root, 'a', 5, manifest='train.txt')
    write_frames(root, 'b', 3, label_offset=3, manifest='train.txt')
    write_frames(root, 'c', 3, manifest='val.txt')
    write_frames(root, 'd', 3, manifest='test.txt')
    return root


@pytest.fixture
def frame_writer():
    return write_frames
