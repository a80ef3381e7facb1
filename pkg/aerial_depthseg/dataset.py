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

"""Frame manifests, class mappings and sequence windows.

A dataset root holds a ``dataset.yaml`` sidecar (intrinsics, label space
and class names) and one manifest per split, ``<split>.txt``, with one
frame per line::

    trajectory frame image depth|- labels|- r11 r12 r13 ... r33 tx ty tz

The pose is world-from-camera, the rotation row-major. Paths are relative
to the root. Empty lines and lines starting with ``#`` are skipped.
"""

import logging
import os
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import torch
import yaml
from PIL import Image
from torch.utils.data import Dataset

from aerial_depthseg.augment import augment
from aerial_depthseg.errors import (
    ConfigurationError,
    DataError,
    InvalidPoseError,
)
from aerial_depthseg.geometry import (
    IGNORE_LABEL,
    CameraIntrinsics,
    SE3Transform,
    relative_motion,
)

SPLITS = ('train', 'val', 'test')
SIDECAR = 'dataset.yaml'
MANIFEST_FIELDS = 17
MISSING = '-'

MIDAIR_CLASSES = (
    'Sky', 'Animals', 'Trees', 'Dirt Ground', 'Ground Vegetation',
    'Rocky Ground', 'Boulders', 'Empty', 'Water', 'Man-Made Construction',
    'Road', 'Train Track', 'Road Sign', 'Others',
)
TARGET_CLASSES = (
    'Sky', 'Water', 'Land', 'Trees', 'Boulders', 'Road', 'Others',
)
AEROSCAPES_CLASSES = (
    'Background', 'Person', 'Bike', 'Car', 'Drone', 'Boat', 'Animal',
    'Obstacle', 'Construction', 'Vegetation', 'Road', 'Sky',
)
MIDAIR_MERGES = {
    'Sky': 'Sky',
    'Animals': 'Others',
    'Trees': 'Trees',
    'Dirt Ground': 'Land',
    'Ground Vegetation': 'Land',
    'Rocky Ground': 'Land',
    'Boulders': 'Boulders',
    'Empty': 'Others',
    'Water': 'Water',
    'Man-Made Construction': 'Others',
    'Road': 'Road',
    'Train Track': 'Others',
    'Road Sign': 'Others',
    'Others': 'Others',
}
LABEL_SPACES = ('midair', 'target', 'aeroscapes')


class ClassMapping:
    """Total mapping from source class ids to dense target ids.

    :param list source_names: source class names, index is the id.
    :param list target_names: target class names, index is the id.
    :param dict assignment: source name to target name.
    """

    def __init__(self, source_names, target_names, assignment):
        self.source_names = tuple(source_names)
        self.target_names = tuple(target_names)
        unmapped = [name for name in self.source_names
                    if name not in assignment]
        if unmapped:
            raise ConfigurationError('source classes without a target: '
                                     '{0}'.format(', '.join(unmapped)))
        unknown = sorted(set(assignment) - set(self.source_names))
        if unknown:
            raise ConfigurationError('unknown source classes: {0}'.format(
                ', '.join(unknown),
            ))
        # 256 marks ids without a source class
        self.lut = np.full(256, 256, dtype=np.int64)
        self.lut[IGNORE_LABEL] = IGNORE_LABEL
        for source_id, name in enumerate(self.source_names):
            target = assignment[name]
            if target not in self.target_names:
                raise ConfigurationError(
                    '{0} is mapped to the unknown class {1}'.format(
                        name, target,
                    )
                )
            self.lut[source_id] = self.target_names.index(target)

    @classmethod
    def identity(cls, names):
        return cls(names, names, {name: name for name in names})

    @classmethod
    def midair(cls, overrides=None):
        """The 14 to 7 class mapping; ``overrides`` reassigns classes."""
        assignment = dict(MIDAIR_MERGES)
        assignment.update(overrides or {})
        return cls(MIDAIR_CLASSES, TARGET_CLASSES, assignment)

    @classmethod
    def for_label_space(cls, label_space, overrides=None):
        if label_space == 'midair':
            return cls.midair(overrides)
        if overrides:
            raise ConfigurationError('class overrides only apply to the '
                                     'midair label space')
        if label_space == 'target':
            return cls.identity(TARGET_CLASSES)
        if label_space == 'aeroscapes':
            return cls.identity(AEROSCAPES_CLASSES)
        raise ConfigurationError('unknown label space {0}, expected one of '
                                 '{1}'.format(label_space,
                                              ', '.join(LABEL_SPACES)))

    @property
    def num_classes(self):
        return len(self.target_names)

    def apply(self, labels):
        """Map a label array; :data:`IGNORE_LABEL` stays ignored."""
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() > 255):
            raise DataError('label ids must be 8-bit')
        mapped = self.lut[labels.astype(np.int64)]
        unknown = mapped == 256
        if unknown.any():
            raise DataError('unknown source label ids {0}'.format(
                sorted(set(np.unique(labels[unknown]).tolist())),
            ))
        return mapped


def remap_semantic_labels(labels, mapping=None):
    """Map 14-class MidAir labels to the 7 target classes.

    :param labels: label ids (array or tensor).
    :param ClassMapping mapping: mapping, the MidAir default if None.

    :returns: mapped ids of the same type as the input.
    """
    mapping = mapping or ClassMapping.midair()
    if isinstance(labels, torch.Tensor):
        mapped = mapping.apply(labels.cpu().numpy())
        return torch.from_numpy(mapped).to(labels.device)
    return mapping.apply(labels)


@dataclass
class FrameRecord:
    trajectory: str
    frame_index: int
    image_path: str
    pose: SE3Transform
    intrinsics: CameraIntrinsics
    depth_path: str = None
    semantic_path: str = None
    line: int = 0


@dataclass
class FrameSequenceSample:
    """``n`` consecutive frames, ``motions[i]`` maps frame ``i + 1`` into
    frame ``i``; the last frame is the target."""

    records: list
    motions: list = field(default_factory=list)

    @property
    def target(self):
        return self.records[-1]

    def __len__(self):
        return len(self.records)


@dataclass
class DatasetInfo:
    intrinsics: CameraIntrinsics
    label_space: str
    class_names: list


def read_dataset_info(root):
    """Read the ``dataset.yaml`` sidecar of a dataset root.

    :rtype: :class:`DatasetInfo`
    """
    path = os.path.join(root, SIDECAR)
    if not os.path.isfile(path):
        raise DataError('{0} has no {1}'.format(root, SIDECAR))
    with open(path, 'r', encoding='utf-8') as f:
        info = yaml.safe_load(f) or {}
    try:
        intrinsics = CameraIntrinsics(**info['intrinsics'])
        label_space = info.get('label_space', 'target')
        mapping = ClassMapping.for_label_space(label_space)
    except (KeyError, TypeError) as e:
        raise DataError('{0}: malformed sidecar ({1})'.format(path, e))
    except ConfigurationError as e:
        raise DataError('{0}: {1}'.format(path, e))
    class_names = info.get('classes') or list(mapping.source_names)
    return DatasetInfo(intrinsics, label_space, list(class_names))


def write_dataset_info(root, intrinsics, label_space, class_names):
    with open(os.path.join(root, SIDECAR), 'w', encoding='utf-8') as f:
        yaml.safe_dump({
            'intrinsics': intrinsics.as_dict(),
            'label_space': label_space,
            'classes': list(class_names),
        }, f, default_flow_style=False, sort_keys=False)


def _optional_path(root, value, name, line, manifest):
    if value == MISSING:
        return None
    path = os.path.join(root, value)
    if not os.path.isfile(path):
        raise DataError('{0}:{1}: {2} file {3} does not exist'.format(
            manifest, line, name, value,
        ))
    return path


def parse_manifest_line(root, text, line, manifest, intrinsics):
    """Parse one manifest line into a :class:`FrameRecord`."""
    parts = text.split()
    if len(parts) != MANIFEST_FIELDS:
        raise DataError('{0}:{1}: expected {2} fields, got {3}'.format(
            manifest, line, MANIFEST_FIELDS, len(parts),
        ))
    try:
        frame_index = int(parts[1])
        numbers = [float(value) for value in parts[5:]]
    except ValueError as e:
        raise DataError('{0}:{1}: {2}'.format(manifest, line, e))
    pose = SE3Transform(
        torch.tensor(numbers[:9], dtype=torch.float64).reshape(3, 3),
        torch.tensor(numbers[9:], dtype=torch.float64),
    )
    try:
        pose.check()
    except InvalidPoseError as e:
        raise DataError('{0}:{1}: invalid pose, {2}'.format(
            manifest, line, e,
        ))
    image_path = os.path.join(root, parts[2])
    if not os.path.isfile(image_path):
        raise DataError('{0}:{1}: image file {2} does not exist'.format(
            manifest, line, parts[2],
        ))
    return FrameRecord(
        trajectory=parts[0],
        frame_index=frame_index,
        image_path=image_path,
        pose=pose,
        intrinsics=intrinsics,
        depth_path=_optional_path(root, parts[3], 'depth', line, manifest),
        semantic_path=_optional_path(root, parts[4], 'label', line,
                                     manifest),
        line=line,
    )


def load_manifest(root, split):
    """Load the frame records of a split, sorted by trajectory and frame.

    :param str root: dataset root.
    :param str split: ``train``, ``val`` or ``test``.

    :rtype: list
    """
    if split not in SPLITS:
        raise ConfigurationError('unknown split {0}, expected one of '
                                 '{1}'.format(split, ', '.join(SPLITS)))
    manifest = os.path.join(root, '{0}.txt'.format(split))
    if not os.path.isfile(manifest):
        raise DataError('split {0} has no manifest {1}'.format(
            split, manifest,
        ))
    info = read_dataset_info(root)
    logger = logging.getLogger(__name__)
    logger.debug('loading manifest {0}'.format(manifest))

    records = []
    seen = {}
    with open(manifest, 'r', encoding='utf-8') as f:
        for line, text in enumerate(f, start=1):
            text = text.strip()
            if not text or text.startswith('#'):
                continue
            record = parse_manifest_line(root, text, line, manifest,
                                         info.intrinsics)
            key = (record.trajectory, record.frame_index)
            if key in seen:
                raise DataError(
                    '{0}:{1}: frame {2} of trajectory {3} already listed on '
                    'line {4}'.format(manifest, line, record.frame_index,
                                      record.trajectory, seen[key])
                )
            seen[key] = line
            records.append(record)
    records.sort(key=lambda r: (r.trajectory, r.frame_index))
    logger.debug('{0} records in split {1}'.format(len(records), split))
    return records


def make_sequences(records, n=3):
    """Cut records into sliding windows of ``n`` frames (stride 1).

    Windows never cross a trajectory boundary; trajectories shorter than
    ``n`` contribute no window.

    :param list records: time-ordered frame records.
    :param int n: frames per window.

    :rtype: list
    """
    if n < 1:
        raise ConfigurationError('a window needs at least one frame')
    trajectories = OrderedDict()
    for record in records:
        trajectories.setdefault(record.trajectory, []).append(record)
    samples = []
    for frames in trajectories.values():
        motions = [relative_motion(prev.pose, curr.pose)
                   for prev, curr in zip(frames, frames[1:])]
        for start in range(len(frames) - n + 1):
            samples.append(FrameSequenceSample(
                records=frames[start:start + n],
                motions=motions[start:start + n - 1],
            ))
    return samples


def load_image(path, size=None):
    """Load an 8-bit RGB image as a ``(3, H, W)`` float tensor in [0, 1]."""
    with Image.open(path) as img:
        img = img.convert('RGB')
        if size is not None and img.size != (size[1], size[0]):
            img = img.resize((size[1], size[0]), Image.BILINEAR)
        array = np.asarray(img, dtype=np.float32) / 255.0
    return torch.from_numpy(array.copy()).permute(2, 0, 1)


def load_depth(path, size=None):
    """Load a float32 depth raster as ``(1, H, W)``; invalid depth is 0."""
    with Image.open(path) as img:
        if img.mode != 'F':
            img = img.convert('F')
        if size is not None and img.size != (size[1], size[0]):
            img = img.resize((size[1], size[0]), Image.NEAREST)
        array = np.asarray(img, dtype=np.float32)
    array = np.where(np.isfinite(array) & (array > 0), array, 0.0)
    return torch.from_numpy(array.astype(np.float32)).unsqueeze(0)


def load_labels(path, mapping, size=None):
    """Load an 8-bit label raster and map it, as ``(H, W)`` int64."""
    with Image.open(path) as img:
        if img.mode not in ('L', 'P'):
            raise DataError('{0}: labels must be single-channel 8-bit, got '
                            'mode {1}'.format(path, img.mode))
        if size is not None and img.size != (size[1], size[0]):
            img = img.resize((size[1], size[0]), Image.NEAREST)
        array = np.asarray(img)
    try:
        return torch.from_numpy(mapping.apply(array))
    except DataError as e:
        raise DataError('{0}: {1}'.format(path, e))


def item_generator(seed, epoch, index):
    """Random generator of one dataset item in one epoch."""
    state = np.random.SeedSequence([seed, epoch, index]).generate_state(1)
    generator = torch.Generator()
    generator.manual_seed(int(state[0]))
    return generator


class SequenceDataset(Dataset):
    """Torch dataset of frame windows.

    An item is a dict with ``images`` ``(n, 3, H, W)``, the target frame's
    ``depth`` ``(1, H, W)`` and ``labels`` ``(H, W)``, and the window's
    ``rotations`` ``(n - 1, 3, 3)`` and ``translations`` ``(n - 1, 3)``.

    :param list samples: :class:`FrameSequenceSample` windows.
    :param ClassMapping mapping: label mapping.
    :param tuple image_size: ``(H, W)`` to resize to, or None.
    :param AugmentationConfig augmentation: augmentation, or None.
    :param int seed: augmentation seed.
    """

    def __init__(self, samples, mapping, image_size=None, augmentation=None,
                 seed=0):
        if not samples:
            raise ConfigurationError('the dataset has no sample')
        self.samples = samples
        self.mapping = mapping
        self.image_size = tuple(image_size) if image_size else None
        self.augmentation = augmentation
        self.seed = seed
        self.epoch = 0
        intrinsics = samples[0].target.intrinsics
        if self.image_size is not None:
            intrinsics = intrinsics.scaled(self.image_size[1],
                                           self.image_size[0])
        self.intrinsics = intrinsics

    def __len__(self):
        return len(self.samples)

    def set_epoch(self, epoch):
        self.epoch = epoch

    def load(self, index):
        sample = self.samples[index]
        target = sample.target
        size = self.image_size or (target.intrinsics.height,
                                   target.intrinsics.width)
        images = torch.stack([
            load_image(record.image_path, size) for record in sample.records
        ])
        if target.depth_path is not None:
            depth = load_depth(target.depth_path, size)
        else:
            depth = torch.zeros(1, *size)
        if target.semantic_path is not None:
            labels = load_labels(target.semantic_path, self.mapping, size)
        else:
            labels = torch.full(size, IGNORE_LABEL, dtype=torch.int64)
        if sample.motions:
            rotations = torch.stack([m.rotation for m in sample.motions])
            translations = torch.stack([m.translation
                                        for m in sample.motions])
        else:
            rotations = torch.zeros(0, 3, 3, dtype=torch.float64)
            translations = torch.zeros(0, 3, dtype=torch.float64)
        return {
            'images': images,
            'depth': depth,
            'labels': labels,
            'rotations': rotations.float(),
            'translations': translations.float(),
            'index': index,
        }

    def __getitem__(self, index):
        item = self.load(index)
        if self.augmentation is not None:
            item = augment(
                item, self.augmentation, self.intrinsics,
                item_generator(self.seed, self.epoch, index),
            )
        return item


def batch_motions(batch, dtype=torch.float32):
    """Get the ``n - 1`` batched motions of a collated batch."""
    rotations = batch['rotations'].to(dtype)
    translations = batch['translations'].to(dtype)
    return [
        SE3Transform(rotations[:, i], translations[:, i])
        for i in range(rotations.shape[1])
    ]


def build_dataset(root, split, sequence_length, image_size=None,
                  augmentation=None, seed=0, class_overrides=None):
    """Load a split and window it into a :class:`SequenceDataset`."""
    info = read_dataset_info(root)
    mapping = ClassMapping.for_label_space(info.label_space,
                                           class_overrides)
    records = load_manifest(root, split)
    samples = make_sequences(records, sequence_length)
    if not samples:
        raise DataError('split {0} of {1} has no window of {2} '
                        'frames'.format(split, root, sequence_length))
    return SequenceDataset(samples, mapping, image_size, augmentation, seed)
