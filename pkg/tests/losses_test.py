#!/usr/bin/env python
# -*- coding: UTF-8 -*-

"""Test for losses."""

import logging
import math

import pytest
import torch

from aerial_depthseg import losses
from aerial_depthseg.errors import (
    ConfigurationError,
    DataError,
    DegenerateBatchError,
    DivergenceError,
)
from aerial_depthseg.geometry import IGNORE_LABEL, DepthMap
from aerial_depthseg.losses import GroundTruthPyramid, LossConfig
from aerial_depthseg.model import ArchitectureConfig, SemanticLevelState


def depth_level(*values):
    return DepthMap.from_values(torch.tensor(values, dtype=torch.float64)
                                .reshape(1, 1, 1, len(values)))


def depth_gt(*levels):
    return GroundTruthPyramid(
        depth=list(levels),
        depth_counts=[int(level.valid_mask.sum()) for level in levels],
    )


def label_gt(*levels):
    return GroundTruthPyramid(
        labels=list(levels),
        label_counts=[int((level != IGNORE_LABEL).sum()) for level in levels],
    )


@pytest.fixture
def two_levels():
    return ArchitectureConfig(num_levels=2, encoder_channels=[4, 8],
                              num_classes=2)


def test_loss_config_validation():
    with pytest.raises(ConfigurationError):
        LossConfig(semantic_weight=-1.0)
    with pytest.raises(ConfigurationError):
        LossConfig(log_base='e')
    with pytest.raises(ConfigurationError):
        LossConfig(level_orientation='sideways')


def test_gt_pyramid_resolutions():
    cfg = ArchitectureConfig()
    depth = DepthMap.from_values(torch.ones(1, 1, 384, 384))
    labels = torch.zeros(1, 384, 384, dtype=torch.int64)
    gt = losses.build_gt_pyramid(depth, labels, cfg)
    assert [d.shape for d in gt.depth] == [(12, 12), (24, 24), (48, 48),
                                           (96, 96), (192, 192)]
    assert [tuple(lv.shape[-2:]) for lv in gt.labels] == [
        (12, 12), (24, 24), (48, 48), (96, 96), (192, 192),
    ]
    assert gt.depth_counts[0] == 144
    assert len(gt) == 5


def test_gt_pyramid_constant_labels(two_levels):
    labels = torch.ones(2, 8, 8, dtype=torch.int64)
    gt = losses.build_gt_pyramid(None, labels, two_levels)
    assert gt.depth is None
    assert all((level == 1).all() for level in gt.labels)


def test_gt_pyramid_corner_anchored(two_levels):
    labels = torch.tensor([[0, 1], [1, 0]]).repeat(2, 2)[None]
    gt = losses.build_gt_pyramid(None, labels, two_levels)
    assert gt.labels[0].tolist() == [[[0]]]
    assert gt.labels[1].tolist() == [[[0, 0], [0, 0]]]


def test_gt_pyramid_rejects_unknown_labels(two_levels):
    labels = torch.zeros(1, 4, 4, dtype=torch.int64)
    labels[0, 0, 0] = 2
    with pytest.raises(DataError):
        losses.build_gt_pyramid(None, labels, two_levels)
    labels[0, 0, 0] = IGNORE_LABEL
    gt = losses.build_gt_pyramid(None, labels, two_levels)
    assert gt.label_counts == [0, 3]


def test_gt_pyramid_needs_ground_truth(two_levels):
    with pytest.raises(DataError):
        losses.build_gt_pyramid(None, None, two_levels)


def test_level_weights():
    assert losses.level_weight(0, 5) == 4.0
    assert losses.level_weight(4, 5) == 64.0
    assert losses.level_weight(0, 5, 'fine_to_coarse') == 64.0


def test_depth_loss_perfect_prediction():
    gt = depth_gt(depth_level(3.0, 4.0), depth_level(5.0, 6.0))
    assert float(losses.depth_loss(gt.depth, gt)) == 0.0


def test_depth_loss_single_pixel():
    gt = depth_gt(depth_level(2.0))
    loss = losses.depth_loss([depth_level(1.0)], gt)
    assert float(loss) == pytest.approx(2.772589, abs=1e-6)


def test_depth_loss_two_levels():
    gt = depth_gt(depth_level(1.0, 2.0), depth_level(3.0, 4.0, 5.0))
    pred = [torch.tensor([[[[math.e, 2.0 * math.e]]]], dtype=torch.float64),
            torch.tensor([[[[3.0, 4.0, 5.0]]]], dtype=torch.float64) * math.e]
    assert float(losses.depth_loss(pred, gt)) == pytest.approx(12.0)


def test_depth_loss_log_base():
    gt = depth_gt(depth_level(2.0))
    loss = losses.depth_loss([depth_level(1.0)], gt, LossConfig(log_base='2'))
    assert float(loss) == pytest.approx(4.0)


def test_depth_loss_skips_invalid_pixels():
    gt = depth_gt(depth_level(2.0, 0.0))
    loss = losses.depth_loss([torch.tensor([[[[1.0, 50.0]]]],
                                           dtype=torch.float64)], gt)
    assert float(loss) == pytest.approx(2.772589, abs=1e-6)


def test_depth_loss_clamps_non_positive(caplog):
    gt = depth_gt(depth_level(1.0))
    pred = torch.zeros(1, 1, 1, 1, dtype=torch.float64, requires_grad=True)
    with caplog.at_level(logging.WARNING):
        loss = losses.depth_loss([pred], gt)
    assert float(loss) == pytest.approx(4.0 * math.log(1e3))
    assert 'clamped' in caplog.text


def test_depth_loss_no_valid_pixel():
    gt = depth_gt(depth_level(0.0, -1.0))
    with pytest.raises(DegenerateBatchError):
        losses.depth_loss([torch.ones(1, 1, 1, 2)], gt)


def test_depth_loss_gradient():
    gt = depth_gt(depth_level(2.0, 3.0))
    pred = torch.tensor([[[[1.0, 4.0]]]], dtype=torch.float64,
                        requires_grad=True)
    losses.depth_loss([pred], gt).backward()
    assert torch.isfinite(pred.grad).all()
    assert pred.grad[0, 0, 0, 0] < 0 < pred.grad[0, 0, 0, 1]


def test_semantic_loss_perfect_prediction():
    labels = torch.tensor([[[0, 2]]])
    probabilities = torch.zeros(1, 3, 1, 2, dtype=torch.float64)
    probabilities[0, 0, 0, 0] = 1.0
    probabilities[0, 2, 0, 1] = 1.0
    loss = losses.semantic_loss([probabilities], label_gt(labels))
    assert float(loss) == pytest.approx(0.0, abs=1e-12)


def test_semantic_loss_uniform():
    probabilities = torch.full((1, 7, 1, 1), 1.0 / 7.0, dtype=torch.float64)
    loss = losses.semantic_loss([probabilities],
                                label_gt(torch.tensor([[[4]]])))
    assert float(loss) == pytest.approx(1.945910, abs=1e-6)


def test_semantic_loss_half_probability():
    probabilities = torch.tensor([0.5, 0.25, 0.25],
                                 dtype=torch.float64).reshape(1, 3, 1, 1)
    loss = losses.semantic_loss([probabilities],
                                label_gt(torch.tensor([[[0]]])))
    assert float(loss) == pytest.approx(0.693147, abs=1e-6)


def test_semantic_loss_from_logits():
    logits = torch.zeros(1, 7, 1, 1, dtype=torch.float64)
    state = SemanticLevelState(torch.zeros(1, 4, 1, 1),
                               torch.softmax(logits, dim=1), logits)
    loss = losses.semantic_loss([state], label_gt(torch.tensor([[[1]]])))
    assert float(loss) == pytest.approx(math.log(7.0))


def test_semantic_loss_ignores_pixels():
    probabilities = torch.tensor([[0.5, 0.9], [0.5, 0.1]],
                                 dtype=torch.float64).reshape(1, 2, 1, 2)
    labels = torch.tensor([[[0, IGNORE_LABEL]]])
    loss = losses.semantic_loss([probabilities], label_gt(labels))
    assert float(loss) == pytest.approx(math.log(2.0))
    with pytest.raises(DegenerateBatchError):
        losses.semantic_loss([probabilities], label_gt(
            torch.full((1, 1, 2), IGNORE_LABEL),
        ))


def test_total_loss():
    assert float(losses.total_loss(torch.tensor(0.0),
                                   torch.tensor(0.0))) == 0.0
    assert float(losses.total_loss(torch.tensor(1.0),
                                   torch.tensor(7.0))) == pytest.approx(1.7)
    weighted = losses.total_loss(torch.tensor(1.0), torch.tensor(7.0),
                                 LossConfig(semantic_weight=1.0))
    assert float(weighted) == pytest.approx(8.0)


def test_total_loss_diverged():
    with pytest.raises(DivergenceError):
        losses.total_loss(torch.tensor(float('nan')), torch.tensor(1.0))
    with pytest.raises(DivergenceError):
        losses.total_loss(torch.tensor(1.0), torch.tensor(float('inf')))


def random_pyramid(generator, num_classes=5, base=8, levels=3):
    """Depth and probability predictions with ground truth, coarsest
    first; some ground truth pixels are invalid or ignored."""
    preds, gts, probs, labels = [], [], [], []
    for index in range(levels):
        size = base // 2 ** (levels - 1 - index)
        shape = (2, 1, size, size)
        pred = 0.1 + 50.0 * torch.rand(shape, generator=generator,
                                       dtype=torch.float64)
        gt = 0.5 + 80.0 * torch.rand(shape, generator=generator,
                                     dtype=torch.float64)
        gt[torch.rand(shape, generator=generator) < 0.2] = 0.0
        preds.append(pred)
        gts.append(DepthMap.from_values(gt))
        probs.append(torch.rand((2, num_classes, size, size),
                                generator=generator, dtype=torch.float64)
                     + 1e-3)
        label = torch.randint(0, num_classes, (2, size, size),
                              generator=generator)
        label[torch.rand(label.shape, generator=generator) < 0.2] = \
            IGNORE_LABEL
        labels.append(label)
    gt = GroundTruthPyramid(
        depth=gts,
        labels=labels,
        depth_counts=[int(level.valid_mask.sum()) for level in gts],
        label_counts=[int((level != IGNORE_LABEL).sum()) for level in labels],
    )
    return preds, probs, gt


def looped_depth_loss(preds, gt):
    total = 0.0
    for index, (pred, target) in enumerate(zip(preds, gt.depth)):
        p = pred.flatten().tolist()
        d = target.values.flatten().tolist()
        valid = target.valid_mask.flatten().tolist()
        error, count = 0.0, 0
        for pi, di, vi in zip(p, d, valid):
            if vi:
                error += abs(math.log(di) - math.log(max(pi, 1e-3)))
                count += 1
        if count:
            total += 2.0 ** (index + 2) * error / count
    return total


def looped_semantic_loss(probs, gt):
    total = 0.0
    for prob, labels in zip(probs, gt.labels):
        batch, classes, height, width = prob.shape
        error, count = 0.0, 0
        for b in range(batch):
            for y in range(height):
                for x in range(width):
                    label = int(labels[b, y, x])
                    if label == IGNORE_LABEL:
                        continue
                    column = [float(prob[b, c, y, x]) for c in range(classes)]
                    error -= math.log(column[label] / sum(column))
                    count += 1
        if count:
            total += error / count
    return total


def test_losses_match_scalar_loops():
    generator = torch.Generator().manual_seed(0)
    cfg = LossConfig()
    for _ in range(100):
        preds, probs, gt = random_pyramid(generator)
        l_depth = losses.depth_loss(preds, gt)
        l_semantic = losses.semantic_loss(probs, gt)
        expected_depth = looped_depth_loss(preds, gt)
        expected_semantic = looped_semantic_loss(probs, gt)
        assert float(l_depth) == pytest.approx(expected_depth, rel=1e-6)
        assert float(l_semantic) == pytest.approx(expected_semantic,
                                                  rel=1e-6)
        assert float(losses.total_loss(l_depth, l_semantic, cfg)) == \
            pytest.approx(expected_depth + 0.1 * expected_semantic,
                          rel=1e-6)


def test_losses_invariant_to_pixel_permutation():
    generator = torch.Generator().manual_seed(1)
    preds, probs, gt = random_pyramid(generator)
    permuted_preds, permuted_probs, permuted_depth, permuted_labels = \
        [], [], [], []
    for pred, prob, depth, labels in zip(preds, probs, gt.depth, gt.labels):
        height, width = pred.shape[-2:]
        order = torch.randperm(height * width, generator=generator)

        def shuffle(values):
            flat = values.reshape(*values.shape[:-2], height * width)
            return flat[..., order].reshape(values.shape)

        permuted_preds.append(shuffle(pred))
        permuted_probs.append(shuffle(prob))
        permuted_depth.append(DepthMap(shuffle(depth.values),
                                       shuffle(depth.valid_mask)))
        permuted_labels.append(shuffle(labels))
    permuted = GroundTruthPyramid(depth=permuted_depth,
                                  labels=permuted_labels,
                                  depth_counts=gt.depth_counts,
                                  label_counts=gt.label_counts)
    assert float(losses.depth_loss(permuted_preds, permuted)) == \
        pytest.approx(float(losses.depth_loss(preds, gt)), rel=1e-12)
    assert float(losses.semantic_loss(permuted_probs, permuted)) == \
        pytest.approx(float(losses.semantic_loss(probs, gt)), rel=1e-12)


def test_depth_loss_scale_invariant():
    generator = torch.Generator().manual_seed(2)
    preds, _, gt = random_pyramid(generator)
    scaled = GroundTruthPyramid(
        depth=[DepthMap(level.values * 3.7, level.valid_mask)
               for level in gt.depth],
        depth_counts=gt.depth_counts,
    )
    assert float(losses.depth_loss([p * 3.7 for p in preds], scaled)) == \
        pytest.approx(float(losses.depth_loss(preds, gt)), rel=1e-9)


@pytest.mark.parametrize('orientation', ['coarse_to_fine', 'fine_to_coarse'])
def test_depth_loss_level_weight_law(orientation):
    """One wrong pixel at a single level is weighted ``2^(l+1) / N_l``."""
    levels = 3
    gt = depth_gt(*(DepthMap.from_values(torch.ones(1, 1, 2 ** i, 2 ** i,
                                                    dtype=torch.float64))
                    for i in range(levels)))
    cfg = LossConfig(level_orientation=orientation)
    for index in range(levels):
        preds = [level.values.clone() for level in gt.depth]
        preds[index][0, 0, 0, 0] = 2.0
        count = 4 ** index
        expected = losses.level_weight(index, levels, orientation) * \
            math.log(2.0) / count
        assert float(losses.depth_loss(preds, gt, cfg)) == \
            pytest.approx(expected, rel=1e-12)
    assert [losses.level_weight(i, levels) for i in range(levels)] == \
        [4.0, 8.0, 16.0]
