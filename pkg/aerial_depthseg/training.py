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

"""End-to-end training, validation and checkpoint selection.

The trainer draws its batch order from ``seed + epoch`` and every
augmentation from ``(seed, epoch, index)``, so a run resumed from a
checkpoint replays exactly the batches and parameter updates of an
uninterrupted run.
"""

import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields

import torch
import yaml
from torch.utils.data import DataLoader

from aerial_depthseg.checkpoint import load_checkpoint, save_checkpoint
from aerial_depthseg.dataset import batch_motions
from aerial_depthseg.errors import (
    ConfigurationError,
    DegenerateBatchError,
    DivergenceError,
)
from aerial_depthseg.geometry import DepthMap, SE3Transform
from aerial_depthseg.losses import (
    LossConfig,
    build_gt_pyramid,
    depth_loss,
    semantic_loss,
    total_loss,
)
from aerial_depthseg.metrics import ConfusionMatrix, DepthMetrics
from aerial_depthseg.model import NETWORKS, ArchitectureConfig, build_network

TRAIN_LOG = 'train.log'
CHECKPOINT_DIR = 'checkpoints'
CHECKPOINT_INDEX = 'checkpoints.yaml'
BEST_MARKER = 'best.yaml'


@dataclass
class TrainConfig:
    """Optimization settings.

    :ivar float learning_rate: Adam learning rate.
    :ivar float beta1: Adam first moment decay.
    :ivar float beta2: Adam second moment decay.
    :ivar int batch_size: windows per batch.
    :ivar int epochs: passes over the training windows.
    :ivar int seed: seed of the weights, batch order and augmentation.
    :ivar int max_steps: stop after this many steps (None: no limit).
    :ivar list lr_steps: epochs after which the rate is multiplied by
        ``lr_gamma``.
    :ivar float lr_gamma: rate decay factor.
    :ivar float grad_clip: global gradient norm limit (None: off).
    :ivar int sequence_length: frames per window.
    :ivar str network: ``joint``, ``depth`` or ``semantic``.
    :ivar int num_workers: data loader worker processes.
    :ivar str device: torch device.
    """

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 3
    epochs: int = 60
    seed: int = 0
    max_steps: int = None
    lr_steps: list = field(default_factory=list)
    lr_gamma: float = 0.1
    grad_clip: float = 10.0
    sequence_length: int = 3
    network: str = 'joint'
    num_workers: int = 0
    device: str = 'cpu'
    loss: LossConfig = field(default_factory=LossConfig)
    architecture: ArchitectureConfig = field(
        default_factory=ArchitectureConfig,
    )

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError('learning_rate must be positive')
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError('Adam betas must be in [0, 1)')
        if self.batch_size < 1:
            raise ConfigurationError('batch_size must be at least 1')
        if self.epochs < 1:
            raise ConfigurationError('epochs must be at least 1')
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationError('max_steps must be at least 1')
        if not 0 < self.lr_gamma <= 1:
            raise ConfigurationError('lr_gamma must be in (0, 1]')
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigurationError('grad_clip must be positive')
        if self.network not in NETWORKS:
            raise ConfigurationError('network must be one of {0}'.format(
                ', '.join(NETWORKS),
            ))
        if self.sequence_length < 1:
            raise ConfigurationError('sequence_length must be at least 1')
        if self.network != 'semantic' and self.sequence_length < 2:
            raise ConfigurationError(
                'the {0} network needs windows of at least 2 frames'.format(
                    self.network,
                )
            )
        if self.num_workers < 0:
            raise ConfigurationError('num_workers must not be negative')
        self.lr_steps = sorted(int(step) for step in self.lr_steps)

    @classmethod
    def from_dict(cls, values, loss=None, architecture=None):
        known = {f.name for f in fields(cls)} - {'loss', 'architecture'}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigurationError('unknown training keys: {0}'.format(
                ', '.join(unknown),
            ))
        return cls(loss=loss or LossConfig(),
                   architecture=architecture or ArchitectureConfig(),
                   **values)

    def as_dict(self):
        values = asdict(self)
        values['loss'] = self.loss.as_dict()
        values['architecture'] = self.architecture.as_dict()
        return values


@dataclass
class CheckpointMeta:
    """A written checkpoint and its validation scores."""

    epoch: int
    step: int
    path: str
    config_hash: str
    batches_done: int = 0
    val_loss: float = None
    val_depth_loss: float = None
    val_semantic_loss: float = None
    miou: float = None
    abs_rel: float = None

    def as_dict(self):
        return asdict(self)


@dataclass
class StepLosses:
    depth: torch.Tensor
    semantic: torch.Tensor
    total: torch.Tensor

    def values(self):
        """Get the depth, semantic and total loss as floats."""
        return tuple(torch.as_tensor(value).detach().item()
                     for value in (self.depth, self.semantic, self.total))


def run_network(network, batch, intr, device='cpu'):
    """Forward a collated batch through any network kind.

    :rtype: :class:`aerial_depthseg.model.JointOutput`
    """
    images = batch['images'].to(device)
    if network.kind == 'semantic':
        return _semantic_forward(network, images, batch, intr, device)
    motions = [motion.to(device) for motion in batch_motions(batch)]
    return network(images, motions, intr)


def _semantic_forward(network, images, batch, intr, device):
    current = images[:, -1]
    cfg = network.cfg
    if not cfg.use_semantic_time_warp:
        return network(current)
    if images.shape[1] < 2:
        raise ConfigurationError(
            'the semantic time warp needs windows of at least 2 frames'
        )
    depth = DepthMap.from_values(batch['depth'].to(device))
    motion = batch_motions(batch)[-1].to(device)
    batch_size, _, height, width = current.shape
    # the previous frame is segmented without a map of its own predecessor
    with torch.no_grad():
        empty = current.new_zeros(batch_size, cfg.num_classes, height // 2,
                                  width // 2)
        identity = SE3Transform.identity((batch_size,), dtype=current.dtype,
                                         device=current.device)
        previous = network(images[:, -2], intr, identity, depth, empty)
    return network(current, intr, motion, depth,
                   previous.semantic_levels[-1].probabilities)


def compute_losses(network, output, batch, loss_cfg, device='cpu'):
    """Compute the depth, semantic and total loss of a forward pass.

    The term of a task the network lacks is zero.

    :rtype: :class:`StepLosses`
    """
    arch = network.cfg
    depth_gt = None
    labels = None
    if network.kind != 'semantic':
        depth_gt = DepthMap.from_values(batch['depth'].to(device))
    if network.kind != 'depth':
        labels = batch['labels'].to(device)
    gt = build_gt_pyramid(depth_gt, labels, arch)
    zero = torch.zeros((), device=device)
    l_depth = zero
    l_semantic = zero
    if depth_gt is not None:
        l_depth = depth_loss(output.depth_pyramid(), gt, loss_cfg)
    if labels is not None:
        l_semantic = semantic_loss(output.semantic_levels, gt)
    return StepLosses(l_depth, l_semantic,
                      total_loss(l_depth, l_semantic, loss_cfg))


class Trainer:
    """Train one network on a :class:`SequenceDataset`.

    :param TrainConfig cfg: training configuration.
    :param SequenceDataset train_set: training windows.
    :param str run_dir: directory of the log and the checkpoints.
    :param str resume: checkpoint to resume from.
    """

    def __init__(self, cfg, train_set, run_dir, resume=None):
        self._logging = logging.getLogger(__name__)
        self.cfg = cfg
        self.train_set = train_set
        self.run_dir = run_dir
        self.intr = train_set.intrinsics
        self.device = torch.device(cfg.device)
        if len(train_set) == 0:
            raise ConfigurationError('the training set is empty')
        arch = cfg.architecture
        if train_set.mapping.num_classes != arch.num_classes:
            raise ConfigurationError(
                'the dataset has {0} classes, the architecture {1}'.format(
                    train_set.mapping.num_classes, arch.num_classes,
                )
            )

        torch.manual_seed(cfg.seed)
        self.network = build_network(cfg.network, arch, seed=cfg.seed)
        self.network.to(self.device)
        self.optimizer = torch.optim.Adam(
            self.network.parameters(), lr=cfg.learning_rate,
            betas=(cfg.beta1, cfg.beta2),
        )
        self.scheduler = torch.optim.lr_scheduler.MultiStepLR(
            self.optimizer, milestones=cfg.lr_steps, gamma=cfg.lr_gamma,
        )
        self.epoch = 0
        self.step = 0
        self.batches_done = 0
        self.checkpoints = []
        if resume is not None:
            self.resume(resume)

    @property
    def learning_rate(self):
        return self.optimizer.param_groups[0]['lr']

    def resume(self, path):
        checkpoint = load_checkpoint(path, cfg=self.cfg.architecture,
                                     kind=self.cfg.network)
        state = checkpoint.state
        if 'optimizer' not in state:
            raise ConfigurationError('{0} has no training state'.format(path))
        self.network.load_state_dict(checkpoint.network.state_dict())
        self.optimizer.load_state_dict(state['optimizer'])
        self.scheduler.load_state_dict(state['scheduler'])
        self.epoch = state['epoch']
        self.step = state['step']
        self.batches_done = state.get('batches_done', 0)
        self.checkpoints = [
            meta for meta in read_checkpoint_index(self.run_dir)
            if meta.step <= self.step
        ]
        self._logging.info(
            'resuming from {0} at epoch {1}, step {2}'.format(
                path, self.epoch, self.step,
            )
        )

    def epoch_batches(self, epoch):
        """Batch index lists of an epoch, shuffled with ``seed + epoch``."""
        generator = torch.Generator()
        generator.manual_seed(self.cfg.seed + epoch)
        order = torch.randperm(len(self.train_set),
                               generator=generator).tolist()
        size = self.cfg.batch_size
        return [order[i:i + size] for i in range(0, len(order), size)]

    def train_step(self, batch):
        """One optimization step.

        :returns: the losses before the update, or None when the batch has
            no supervision left.
        :rtype: :class:`StepLosses`
        """
        self.network.train()
        self.optimizer.zero_grad()
        output = run_network(self.network, batch, self.intr, self.device)
        try:
            losses = compute_losses(self.network, output, batch,
                                    self.cfg.loss, self.device)
        except DegenerateBatchError as e:
            self._logging.warning('step {0} skipped: {1}'.format(
                self.step + 1, e,
            ))
            return None
        except DivergenceError as e:
            raise DivergenceError(
                'epoch {0}, step {1}, lr {2:.3g}: {3}'.format(
                    self.epoch, self.step + 1, self.learning_rate, e,
                )
            )
        losses.total.backward()
        if self.cfg.grad_clip is not None:
            norm = torch.nn.utils.clip_grad_norm_(
                self.network.parameters(), self.cfg.grad_clip,
            )
            if not math.isfinite(norm.item()):
                raise DivergenceError(
                    'epoch {0}, step {1}: gradient norm is {2} (depth loss '
                    '{3:.6g}, semantic loss {4:.6g})'.format(
                        self.epoch, self.step + 1, norm.item(),
                        *losses.values()[:2],
                    )
                )
        self.optimizer.step()
        return losses

    def _log_step(self, losses, wall_ms):
        line = '{0}, {1:.8f}, {2:.8f}, {3:.8f}, {4:.8g}, {5:.3f}\n'.format(
            self.step, *losses.values(), self.learning_rate, wall_ms,
        )
        with open(os.path.join(self.run_dir, TRAIN_LOG), 'a',
                  encoding='utf-8') as f:
            f.write(line)
        self._logging.info(
            'step {0}: depth {1:.4f}, semantic {2:.4f}, total {3:.4f}'.format(
                self.step, *losses.values(),
            )
        )

    def save(self, epoch, batches_done):
        """Write a checkpoint positioned at ``epoch``/``batches_done``."""
        directory = os.path.join(self.run_dir, CHECKPOINT_DIR)
        if batches_done:
            name = 'step_{0:06d}.pt'.format(self.step)
        else:
            name = 'epoch_{0:03d}.pt'.format(epoch)
        path = os.path.join(directory, name)
        config_hash = save_checkpoint(
            path, self.network,
            optimizer=self.optimizer.state_dict(),
            scheduler=self.scheduler.state_dict(),
            epoch=epoch,
            step=self.step,
            batches_done=batches_done,
            run_config=self.cfg.as_dict(),
        )
        meta = CheckpointMeta(epoch=epoch, step=self.step, path=path,
                              config_hash=config_hash,
                              batches_done=batches_done)
        self.checkpoints.append(meta)
        write_checkpoint_index(self.run_dir, self.checkpoints)
        return meta

    def _limit_reached(self):
        return self.cfg.max_steps is not None and \
            self.step >= self.cfg.max_steps

    def train(self):
        """Run the remaining epochs.

        :returns: the checkpoints written so far.
        :rtype: list
        """
        os.makedirs(self.run_dir, exist_ok=True)
        start = self.epoch
        for epoch in range(start, self.cfg.epochs):
            if self._limit_reached():
                break
            self.epoch = epoch
            self.train_set.set_epoch(epoch)
            batches = self.epoch_batches(epoch)
            skip = self.batches_done if epoch == start else 0
            loader = DataLoader(self.train_set, batch_sampler=batches[skip:],
                                num_workers=self.cfg.num_workers)
            done = skip
            for batch in loader:
                tic = time.perf_counter()
                losses = self.train_step(batch)
                done += 1
                if losses is not None:
                    self.step += 1
                    self._log_step(losses,
                                   (time.perf_counter() - tic) * 1000.0)
                if self._limit_reached():
                    break
            if done < len(batches):
                self.batches_done = done
                self.save(epoch, done)
                break
            self.batches_done = 0
            self.scheduler.step()
            self.save(epoch + 1, 0)
        return self.checkpoints


def train_loop(train_set, val_set, cfg, run_dir, resume=None):
    """Train and checkpoint every epoch.

    The validation set is only checked for emptiness here so a run fails
    before training; :func:`validate_and_select` scores it afterwards.

    :param SequenceDataset train_set: training windows.
    :param SequenceDataset val_set: validation windows, or None.
    :param TrainConfig cfg: configuration.
    :param str run_dir: output directory.
    :param str resume: checkpoint to resume from.

    :rtype: list
    """
    if val_set is not None and len(val_set) == 0:
        raise ConfigurationError('the validation set is empty')
    trainer = Trainer(cfg, train_set, run_dir, resume=resume)
    return trainer.train()


def write_checkpoint_index(run_dir, checkpoints):
    with open(os.path.join(run_dir, CHECKPOINT_INDEX), 'w',
              encoding='utf-8') as f:
        yaml.safe_dump([meta.as_dict() for meta in checkpoints], f,
                       default_flow_style=False, sort_keys=False)


def read_checkpoint_index(run_dir):
    path = os.path.join(run_dir, CHECKPOINT_INDEX)
    if not os.path.isfile(path):
        return []
    with open(path, 'r', encoding='utf-8') as f:
        return [CheckpointMeta(**entry) for entry in yaml.safe_load(f) or []]


@dataclass
class Evaluation:
    """Validation or test scores.

    Loss fields are None when losses were not computed.
    """

    depth: object = None
    segmentation: object = None
    loss: float = None
    depth_loss: float = None
    semantic_loss: float = None
    samples: int = 0


def evaluate_predictions(predictor, dataset, num_classes, batch_size=1,
                         class_names=None, cap=80.0, loss_fn=None):
    """Score a predictor over a dataset.

    :param callable predictor: maps a collated batch to a
        :class:`aerial_depthseg.model.JointOutput`.
    :param SequenceDataset dataset: evaluation windows.
    :param int num_classes: semantic classes.
    :param int batch_size: windows per batch.
    :param list class_names: class names for the report.
    :param float cap: depth cap of the metrics.
    :param callable loss_fn: maps ``(output, batch)`` to
        :class:`StepLosses`; losses are averaged per window when given.

    :rtype: :class:`Evaluation`
    """
    depth_metrics = DepthMetrics(cap)
    confusion = ConfusionMatrix(num_classes, class_names)
    sums = [0.0, 0.0, 0.0]
    loss_samples = 0
    samples = 0
    loader = DataLoader(dataset, batch_size=batch_size, shuffle=False)
    has_depth = has_labels = False
    with torch.no_grad():
        for batch in loader:
            output = predictor(batch)
            count = batch['images'].shape[0]
            samples += count
            if output.depth is not None:
                has_depth = True
                depth_metrics.update(output.depth,
                                     DepthMap.from_values(batch['depth']))
            if output.labels is not None:
                has_labels = True
                confusion.update(output.labels, batch['labels'])
            if loss_fn is not None:
                try:
                    losses = loss_fn(output, batch)
                except DegenerateBatchError:
                    continue
                for index, value in enumerate(losses.values()):
                    sums[index] += value * count
                loss_samples += count
    result = Evaluation(samples=samples)
    if has_depth and depth_metrics.count:
        result.depth = depth_metrics.report()
    if has_labels and confusion.total:
        result.segmentation = confusion.report()
    if loss_samples:
        result.depth_loss, result.semantic_loss, result.loss = (
            value / loss_samples for value in sums
        )
    return result


def validate(network, dataset, cfg, class_names=None):
    """Losses and metrics of a network on a dataset.

    :rtype: :class:`Evaluation`
    """
    device = torch.device(cfg.device)
    network.to(device)
    network.eval()
    intr = dataset.intrinsics

    def predictor(batch):
        return run_network(network, batch, intr, device)

    def loss_fn(output, batch):
        return compute_losses(network, output, batch, cfg.loss, device)

    return evaluate_predictions(
        predictor, dataset, network.cfg.num_classes,
        batch_size=cfg.batch_size, class_names=class_names, loss_fn=loss_fn,
    )


def select_best(checkpoints):
    """Lowest validation loss; ties go to the earliest epoch, then step."""
    if not checkpoints:
        raise ConfigurationError('no checkpoint to select from')

    def key(meta):
        loss = meta.val_loss if meta.val_loss is not None else math.inf
        return (loss, meta.epoch, meta.step)

    return min(checkpoints, key=key)


def validate_and_select(checkpoints, val_set, cfg, run_dir=None):
    """Score every checkpoint on the validation set and pick the best.

    :param list checkpoints: :class:`CheckpointMeta` entries.
    :param SequenceDataset val_set: validation windows.
    :param TrainConfig cfg: configuration.
    :param str run_dir: where to write the index and ``best.yaml``.

    :rtype: :class:`CheckpointMeta`
    """
    logger = logging.getLogger(__name__)
    for meta in checkpoints:
        checkpoint = load_checkpoint(meta.path, cfg=cfg.architecture,
                                     kind=cfg.network)
        scores = validate(checkpoint.network, val_set, cfg)
        meta.val_loss = scores.loss
        meta.val_depth_loss = scores.depth_loss
        meta.val_semantic_loss = scores.semantic_loss
        if scores.segmentation is not None:
            meta.miou = scores.segmentation.miou
        if scores.depth is not None:
            meta.abs_rel = scores.depth.abs_rel
        logger.debug('{0}: validation loss {1}'.format(meta.path,
                                                       meta.val_loss))
    best = select_best(checkpoints)
    logger.info('best checkpoint {0} (epoch {1}, validation loss '
                '{2})'.format(best.path, best.epoch, best.val_loss))
    if run_dir is not None:
        write_checkpoint_index(run_dir, checkpoints)
        with open(os.path.join(run_dir, BEST_MARKER), 'w',
                  encoding='utf-8') as f:
            yaml.safe_dump(best.as_dict(), f, default_flow_style=False,
                           sort_keys=False)
    return best
