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

"""Command line interface: ``synth``, ``train``, ``eval``, ``predict`` and
``bench``.

Every command writes ``outputs.yaml`` listing the files it produced next to
them. Exit codes: 0 success, 1 usage or configuration, 2 data, 3 numerical
divergence.
"""

import logging
import os
import sys

import numpy as np
import torch
import yaml
from PIL import Image

from aerial_depthseg import config, visualize
from aerial_depthseg.checkpoint import load_checkpoint
from aerial_depthseg.dataset import build_dataset
from aerial_depthseg.errors import (
    EXIT_CONFIG,
    EXIT_OK,
    ConfigurationError,
    DataError,
    exit_code,
)
from aerial_depthseg.metrics import (
    count_parameters,
    runtime_benchmark,
    write_report,
)
from aerial_depthseg.synthetic import generate_synthetic_scene
from aerial_depthseg.training import (
    BEST_MARKER,
    run_network,
    train_loop,
    validate,
    validate_and_select,
)

OUTPUTS = 'outputs.yaml'
TABLE_HEADERS = ('Architecture', 'Output', 'Params(M)', 'Inf. Time (ms/f)',
                 'mIoU', 'RMSE', 'AbsRelErr', 'δ<1.25', 'δ<1.25^2',
                 'δ<1.25^3')
OUTPUT_NAMES = {'joint': 'depth+semantic', 'depth': 'depth',
                'semantic': 'semantic'}


def write_outputs(directory, paths):
    """Write the ``outputs.yaml`` manifest of produced files."""
    listed = sorted(os.path.relpath(path, directory) for path in paths)
    manifest = os.path.join(directory, OUTPUTS)
    with open(manifest, 'w', encoding='utf-8') as f:
        yaml.safe_dump({'files': listed}, f, default_flow_style=False)
    return manifest


def format_table(headers, rows):
    """Render rows as a pipe-separated table with aligned columns."""
    cells = [list(headers)] + [[str(cell) for cell in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = []
    for index, row in enumerate(cells):
        lines.append(' | '.join(cell.ljust(width)
                                for cell, width in zip(row, widths)))
        if index == 0:
            lines.append('-+-'.join('-' * width for width in widths))
    return '\n'.join(lines) + '\n'


def _percent(value, digits):
    if value is None:
        return '-'
    return '{0:.{1}f}%'.format(100.0 * value, digits)


def _number(value, digits):
    if value is None:
        return '-'
    return '{0:.{1}f}'.format(value, digits)


def metrics_row(kind, params, runtime, evaluation):
    depth = evaluation.depth
    segmentation = evaluation.segmentation
    return [
        kind,
        OUTPUT_NAMES[kind],
        '{0:.2f}'.format(params / 1e6),
        _number(runtime.mean_ms if runtime else None, 1),
        _percent(segmentation.miou if segmentation else None, 2),
        _number(depth.rmse if depth else None, 2),
        _number(depth.abs_rel if depth else None, 3),
        _percent(depth.delta1 if depth else None, 1),
        _percent(depth.delta2 if depth else None, 1),
        _percent(depth.delta3 if depth else None, 1),
    ]


def class_table(segmentation):
    names = segmentation.class_names or [
        str(i) for i in range(len(segmentation.per_class_iou))
    ]
    row = [_percent(value, 2) for value in segmentation.per_class_iou]
    return format_table(list(names) + ['mIoU'],
                        [row + [_percent(segmentation.miou, 2)]])


def cmd_synth(cfg, out_dir, force=False):
    """Render the synthetic dataset of the configuration.

    :returns: frame count per split.
    :rtype: dict
    """
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise ConfigurationError(
            '{0} is not empty, use --force to write into it'.format(out_dir)
        )
    counts = generate_synthetic_scene(cfg.synthetic, out_dir)
    for split, count in counts.items():
        sys.stdout.write('{0}: {1} frames\n'.format(split, count))
    produced = [os.path.join(out_dir, name) for name in
                ['dataset.yaml', 'scene.yaml'] +
                ['{0}.txt'.format(split) for split in counts]]
    write_outputs(out_dir, produced)
    return counts


def _datasets(cfg, splits, augment_train=False, root=None):
    data = cfg.data
    training = cfg.training
    augmentation = cfg.augmentation if (
        augment_train and cfg.augmentation.enabled) else None
    return [
        build_dataset(
            root or data.root, split, training.sequence_length,
            image_size=data.image_size,
            augmentation=augmentation if split == 'train' else None,
            seed=training.seed, class_overrides=data.class_overrides,
        )
        for split in splits
    ]


def cmd_train(cfg, run_dir, resume=None):
    """Train, checkpoint every epoch and select the best checkpoint.

    :rtype: :class:`aerial_depthseg.training.CheckpointMeta`
    """
    os.makedirs(run_dir, exist_ok=True)
    train_set, val_set = _datasets(cfg, ('train', 'val'), augment_train=True)
    config_path = os.path.join(run_dir, 'config.yaml')
    with open(config_path, 'w', encoding='utf-8') as f:
        f.write(cfg.to_text())
    checkpoints = train_loop(train_set, val_set, cfg.training, run_dir,
                             resume=resume)
    if not checkpoints:
        raise ConfigurationError('training wrote no checkpoint')
    best = validate_and_select(checkpoints, val_set, cfg.training, run_dir)
    sys.stdout.write('best checkpoint: {0}\n'.format(best.path))
    produced = [config_path, os.path.join(run_dir, 'train.log'),
                os.path.join(run_dir, 'checkpoints.yaml'),
                os.path.join(run_dir, BEST_MARKER)]
    produced += [meta.path for meta in checkpoints]
    write_outputs(run_dir, produced)
    return best


def best_checkpoint(run_dir):
    marker = os.path.join(run_dir, BEST_MARKER)
    if not os.path.isfile(marker):
        raise ConfigurationError('no checkpoint given and {0} does not '
                                 'exist'.format(marker))
    with open(marker, 'r', encoding='utf-8') as f:
        return yaml.safe_load(f)['path']


def _load(cfg, path, check_config):
    expected = cfg.architecture if check_config else None
    checkpoint = load_checkpoint(path, cfg=expected,
                                 device=cfg.training.device)
    checkpoint.network.eval()
    return checkpoint


def _benchmark_sample(network, dataset, device):
    batch = next(iter(torch.utils.data.DataLoader(dataset, batch_size=1)))

    def forward(sample):
        return run_network(network, sample, dataset.intrinsics, device)

    return forward, batch


def cmd_eval(cfg, checkpoint_path, split, out_dir, check_config=True,
             iterations=10, warmup=2):
    """Evaluate a checkpoint on a split and print the metric tables.

    :returns: the evaluation.
    :rtype: :class:`aerial_depthseg.training.Evaluation`
    """
    checkpoint = _load(cfg, checkpoint_path, check_config)
    network = checkpoint.network
    dataset, = _datasets(cfg, (split,))
    if dataset.mapping.num_classes != network.cfg.num_classes:
        raise DataError('split {0} has {1} classes, the network {2}'.format(
            split, dataset.mapping.num_classes, network.cfg.num_classes,
        ))
    evaluation = validate(network, dataset, cfg.training,
                          class_names=list(dataset.mapping.target_names))
    device = torch.device(cfg.training.device)
    forward, sample = _benchmark_sample(network, dataset, device)
    runtime = runtime_benchmark(forward, sample, iterations, warmup,
                                device=device)
    params = count_parameters(network)

    table = format_table(TABLE_HEADERS, [
        metrics_row(checkpoint.kind, params, runtime, evaluation),
    ])
    if evaluation.segmentation is not None:
        table += '\n' + class_table(evaluation.segmentation)
    sys.stdout.write(table)

    os.makedirs(out_dir, exist_ok=True)
    reports = {
        'checkpoint': {'path': checkpoint_path, 'network': checkpoint.kind,
                       'split': split, 'parameters': params},
    }
    if evaluation.depth is not None:
        reports['depth'] = evaluation.depth
    if evaluation.segmentation is not None:
        reports['segmentation'] = evaluation.segmentation
    produced = []
    for name in ('metrics.yaml', 'metrics.txt'):
        path = os.path.join(out_dir, name)
        write_report(path, reports)
        produced.append(path)
    # timings vary between runs, the metric files above do not
    runtime_path = os.path.join(out_dir, 'runtime.yaml')
    write_report(runtime_path, {'runtime': runtime})
    produced.append(runtime_path)
    table_path = os.path.join(out_dir, 'metrics_table.txt')
    with open(table_path, 'w', encoding='utf-8') as f:
        f.write(table)
    produced.append(table_path)
    write_outputs(out_dir, produced)
    logging.getLogger(__name__).info('metrics written to {0}'.format(
        out_dir,
    ))
    return evaluation


def cmd_predict(cfg, checkpoint_path, sequence_root, split, out_dir,
                check_config=True):
    """Predict the target frame of every window of a sequence.

    Writes float32 depth rasters, 8-bit label rasters and, with
    ``output.visualize``, colorized depth and semantic overlays.

    :returns: produced files.
    :rtype: list
    """
    checkpoint = _load(cfg, checkpoint_path, check_config)
    network = checkpoint.network
    dataset, = _datasets(cfg, (split,), root=sequence_root)
    device = torch.device(cfg.training.device)
    num_classes = network.cfg.num_classes
    for name in ('depth', 'labels', 'visualizations'):
        os.makedirs(os.path.join(out_dir, name), exist_ok=True)

    produced = []
    with torch.no_grad():
        for index in range(len(dataset)):
            item = dataset[index]
            batch = torch.utils.data.default_collate([item])
            output = run_network(network, batch, dataset.intrinsics, device)
            target = dataset.samples[index].target
            stem = '{0}_{1:04d}'.format(target.trajectory, target.frame_index)
            image = item['images'][-1].permute(1, 2, 0).numpy()
            if output.depth is not None:
                depth = output.depth.values[0, 0]
                depth = torch.where(output.depth.valid_mask[0, 0], depth,
                                    torch.zeros_like(depth))
                depth = depth.cpu().numpy().astype(np.float32)
                path = os.path.join(out_dir, 'depth', stem + '.tiff')
                Image.fromarray(depth).save(path)
                produced.append(path)
                if cfg.output.visualize:
                    path = os.path.join(out_dir, 'visualizations',
                                        stem + '_depth.png')
                    visualize.save_rgb(visualize.colorize_depth(
                        depth, cfg.data.depth_cap,
                    ), path)
                    produced.append(path)
            if output.labels is not None:
                labels = output.labels[0].cpu().numpy().astype(np.uint8)
                path = os.path.join(out_dir, 'labels', stem + '.png')
                Image.fromarray(labels).save(path)
                produced.append(path)
                if cfg.output.visualize:
                    path = os.path.join(out_dir, 'visualizations',
                                        stem + '_overlay.png')
                    visualize.save_rgb(visualize.overlay(
                        image, labels, num_classes,
                    ), path)
                    produced.append(path)
    write_outputs(out_dir, produced)
    logging.getLogger(__name__).info('{0} predictions written to {1}'.format(
        len(dataset), out_dir,
    ))
    return produced


def benchmark_inputs(cfg, network, device):
    """Seeded random frames of the configured size with a forward motion."""
    if cfg.data.image_size is not None:
        height, width = cfg.data.image_size
    else:
        height, width = cfg.synthetic.height, cfg.synthetic.width
    intr = cfg.synthetic.intrinsics().scaled(width, height)
    generator = torch.Generator().manual_seed(cfg.training.seed)
    count = cfg.training.sequence_length
    if network.kind == 'semantic':
        count = 2 if network.cfg.use_semantic_time_warp else 1
    images = torch.rand(1, count, 3, height, width, generator=generator)
    batch = {
        'images': images,
        'depth': torch.full((1, 1, height, width), 10.0),
        'rotations': torch.eye(3).expand(1, count - 1, 3, 3),
        'translations': torch.tensor([0.0, 0.0, -0.5]).expand(
            1, count - 1, 3),
    }

    def forward(sample):
        return run_network(network, sample, intr, device)

    return forward, batch


def cmd_bench(cfg, checkpoint_path, iterations, warmup, out_dir,
              check_config=True):
    """Time inference of a checkpoint.

    :rtype: :class:`aerial_depthseg.metrics.RuntimeReport`
    """
    checkpoint = _load(cfg, checkpoint_path, check_config)
    device = torch.device(cfg.training.device)
    forward, batch = benchmark_inputs(cfg, checkpoint.network, device)
    report = runtime_benchmark(forward, batch, iterations, warmup,
                               device=device)
    sys.stdout.write('{0}: {1:.2f} +- {2:.2f} ms/frame ({3})\n'.format(
        checkpoint.kind, report.mean_ms, report.std_ms, report.hardware,
    ))
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, 'runtime.yaml')
    write_report(path, {'runtime': report})
    write_outputs(out_dir, [path])
    return report


def run(args=None):
    """Run a command.

    :param list args: argument list, ``sys.argv`` if None.

    :returns: exit code.
    :rtype: int
    """
    cfg = config.Config()
    try:
        cfg.argparse(args)
    except SystemExit as e:
        # argparse exits 2 on usage errors
        return EXIT_OK if not e.code else EXIT_CONFIG
    except Exception as e:
        sys.stderr.write('{0}: {1}\n'.format(type(e).__name__, e))
        return exit_code(e)
    argp = cfg.args
    try:
        conf = cfg.get()
        run_dir = conf.output.run_dir
        check = argp.config is not None
        if argp.command == 'synth':
            cmd_synth(conf, argp.out or conf.data.root, argp.force)
        elif argp.command == 'train':
            cmd_train(conf, argp.out or run_dir, argp.resume)
        elif argp.command == 'eval':
            checkpoint = argp.checkpoint or best_checkpoint(run_dir)
            cmd_eval(conf, checkpoint, argp.split, argp.out or run_dir,
                     check_config=check)
        elif argp.command == 'predict':
            cmd_predict(conf, argp.checkpoint, argp.sequence, argp.split,
                        argp.out or os.path.join(run_dir, 'predictions'),
                        check_config=check)
        elif argp.command == 'bench':
            cmd_bench(conf, argp.checkpoint, argp.iterations, argp.warmup,
                      argp.out or run_dir, check_config=check)
    except Exception as e:
        sys.stderr.write('{0}: {1}\n'.format(type(e).__name__, e))
        return exit_code(e)
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == '__main__':
    main()
