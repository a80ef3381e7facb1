#!/usr/bin/env python
# -*- coding: UTF-8 -*-

"""Test for model."""

import logging

import pytest
import torch

from aerial_depthseg import model
from aerial_depthseg.errors import (
    ConfigurationError,
    SequencingError,
    ShapeError,
)
from aerial_depthseg.geometry import CameraIntrinsics, DepthMap, SE3Transform
from aerial_depthseg.layers import Refiner
from aerial_depthseg.model import ArchitectureConfig


@pytest.fixture
def intr32():
    return CameraIntrinsics(16.0, 16.0, 15.5, 15.5, 32, 32)


def frames(count, batch=1, seed=0):
    generator = torch.Generator().manual_seed(seed)
    return torch.rand(batch, count, 3, 32, 32, generator=generator)


def motion(tx=0.0, tz=-0.5, batch=1):
    return SE3Transform(
        torch.eye(3).expand(batch, 3, 3).clone(),
        torch.tensor([[tx, 0.0, tz]]).expand(batch, 3).clone(),
    )


def test_architecture_defaults():
    cfg = ArchitectureConfig()
    assert cfg.encoder_channels == [16, 32, 64, 96, 128]
    assert cfg.num_classes == 7
    assert cfg.sncv_channels == 49


def test_architecture_rejects_bad_values():
    with pytest.raises(ConfigurationError):
        ArchitectureConfig(num_levels=3, encoder_channels=[8, 8, 16])
    with pytest.raises(ConfigurationError):
        ArchitectureConfig(num_levels=3, encoder_channels=[8, 16])
    with pytest.raises(ConfigurationError):
        ArchitectureConfig.from_dict({'levels': 3})


def test_architecture_text_roundtrip(small_arch):
    text = small_arch.to_text()
    again = ArchitectureConfig.from_text(text)
    assert again == small_arch
    assert again.config_hash() == small_arch.config_hash()
    assert ArchitectureConfig().config_hash() != small_arch.config_hash()


def test_encoder_resolutions(small_arch):
    encoder = model.Encoder(small_arch)
    pyramid = model.encode(encoder, torch.rand(2, 3, 32, 32))
    assert pyramid.resolutions == [(16, 16), (8, 8), (4, 4)]
    assert [f.shape[1] for f in pyramid.levels] == [4, 6, 8]


def test_encoder_default_resolutions():
    cfg = ArchitectureConfig(refiner_depth=1, refiner_channels=4)
    pyramid = model.Encoder(cfg)(torch.rand(1, 3, 64, 64))
    assert pyramid.resolutions == [(32, 32), (16, 16), (8, 8), (4, 4),
                                   (2, 2)]


def test_encoder_rejects_indivisible_input(small_arch):
    with pytest.raises(ConfigurationError):
        model.Encoder(small_arch)(torch.rand(1, 3, 30, 32))


def test_encoder_deterministic(small_arch):
    encoder = model.Encoder(small_arch)
    image = torch.rand(1, 3, 32, 32)
    first = encoder(image)
    second = encoder(image)
    for a, b in zip(first.levels, second.levels):
        assert torch.equal(a, b)


def test_encoder_weight_drives_both_heads(small_arch, intr32):
    network = model.JointNetwork(small_arch, seed=1).eval()
    clip = frames(3)
    motions = [motion(), motion()]
    with torch.no_grad():
        before = network(clip, motions, intr32)
        weight = next(network.encoder.parameters())
        generator = torch.Generator().manual_seed(2)
        weight.add_(0.5 * torch.randn(weight.shape, generator=generator))
        after = network(clip, motions, intr32)
    assert not torch.equal(before.depth.values, after.depth.values)
    assert not torch.equal(before.probabilities, after.probabilities)


def test_semantic_preprocess_coarsest(small_arch):
    f_enc = torch.rand(1, 8, 4, 4)
    out = model.semantic_preprocess(None, f_enc, small_arch)
    assert out.shape == (1, 8 + 4 + 3, 4, 4)
    assert out.shape[1] == model.semantic_input_channels(small_arch, 3)
    assert (out[:, 8:] == 0).all()


def test_semantic_preprocess_shape_mismatch(small_arch):
    state = model.SemanticLevelState(
        torch.zeros(1, 4, 3, 3), torch.zeros(1, 3, 3, 3),
        torch.zeros(1, 3, 3, 3),
    )
    with pytest.raises(ShapeError):
        model.semantic_preprocess(state, torch.rand(1, 6, 8, 8), small_arch)


def test_semantic_refiner_emits_features_and_classes():
    decoder = model.SemanticDecoder(ArchitectureConfig(refiner_depth=1,
                                                       refiner_channels=4))
    assert all(refiner.out_channels == 11 for refiner in decoder.refiners)


def test_semantic_refine_uniform_logits(small_arch):
    refiner = Refiner(15, 8, 1, 7)
    for parameter in refiner.parameters():
        torch.nn.init.zeros_(parameter)
    state = model.semantic_refine(refiner, torch.rand(1, 15, 4, 4),
                                  small_arch)
    assert state.features.shape == (1, 4, 4, 4)
    assert torch.allclose(state.probabilities,
                          torch.full((1, 3, 4, 4), 1.0 / 3.0))


def test_depth_decode_level_identity_motion(small_arch):
    decoder = model.DepthDecoder(small_arch)
    f_enc = torch.rand(1, 8, 4, 4)
    state = decoder.decode_level(
        3, f_enc, f_enc, None, None,
        SE3Transform.identity((1,), dtype=torch.float32),
        CameraIntrinsics(16.0, 16.0, 15.5, 15.5, 32, 32),
    )
    assert state.degenerate.tolist() == [True]
    assert (state.parallax.values == 0).all()
    assert not state.depth.valid_mask.any()


def test_joint_forward_shapes(small_arch, intr32):
    network = model.JointNetwork(small_arch, seed=1)
    output = network(frames(3), [motion(), motion()], intr32)
    assert output.depth.values.shape == (1, 1, 32, 32)
    assert output.depth_half.values.shape == (1, 1, 16, 16)
    assert output.labels.shape == (1, 32, 32)
    assert output.labels_half.shape == (1, 16, 16)
    assert output.probabilities.shape == (1, 3, 32, 32)
    assert [s.parallax.values.shape[-1] for s in output.depth_levels] == [
        4, 8, 16,
    ]
    assert [s.probabilities.shape[-1] for s in output.semantic_levels] == [
        4, 8, 16,
    ]
    assert (output.depth_levels[-1].parallax.values >= 0).all()
    assert not output.first_frame
    assert output.degenerate.tolist() == [False]


def test_joint_forward_deterministic(small_arch, intr32):
    network = model.JointNetwork(small_arch, seed=1).eval()
    clip = frames(3, batch=2)
    motions = [motion(batch=2), motion(0.2, -0.3, batch=2)]
    with torch.no_grad():
        first = network(clip, motions, intr32)
        second = network(clip, motions, intr32)
    assert torch.equal(first.depth.values, second.depth.values)
    assert torch.equal(first.labels, second.labels)


def test_seeded_networks_are_identical(small_arch):
    first = model.build_network('joint', small_arch, seed=4)
    second = model.build_network('joint', small_arch, seed=4)
    for a, b in zip(first.state_dict().values(),
                    second.state_dict().values()):
        assert torch.equal(a, b)


def test_joint_forward_missing_motion(small_arch, intr32):
    network = model.JointNetwork(small_arch)
    with pytest.raises(SequencingError):
        network(frames(3), [motion()], intr32)


def test_first_frame_duplicates_pyramid(small_arch, intr32):
    network = model.DepthNetwork(small_arch)
    output = network(frames(1), [], intr32)
    assert output.first_frame
    assert output.degenerate.all()
    assert not output.depth.valid_mask.any()
    assert output.labels is None


def test_degenerate_baseline_passes_parallax_through(small_arch, intr32,
                                                     caplog):
    network = model.DepthNetwork(small_arch)
    with caplog.at_level(logging.WARNING):
        output = network(frames(2), [motion(0.0, 0.0)], intr32)
    assert output.degenerate.all()
    assert 'baseline too short' in caplog.text


def test_stream_context_requires_motion(small_arch, intr32):
    network = model.DepthNetwork(small_arch)
    context = model.StreamContext()
    pyramid = network.encoder(frames(1)[:, 0])
    _, first = context.step(network.depth_decoder, pyramid, None, intr32)
    assert first
    with pytest.raises(SequencingError):
        context.step(network.depth_decoder, pyramid, None, intr32)
    context.reset()
    assert context.frames == 0


def test_semantic_network_ignores_previous_without_time_warp(small_arch,
                                                             intr32):
    network = model.SemanticNetwork(small_arch).eval()
    image = frames(1)[:, 0]
    with torch.no_grad():
        plain = network(image)
        other = network(image, intr32, motion(), DepthMap.from_values(
            torch.full((1, 1, 32, 32), 5.0)), torch.rand(1, 3, 16, 16))
    assert torch.equal(plain.probabilities, other.probabilities)
    assert plain.depth is None


def test_semantic_time_warp_needs_inputs(small_arch):
    cfg = ArchitectureConfig(**dict(small_arch.as_dict(),
                                    use_semantic_time_warp=True))
    network = model.SemanticNetwork(cfg)
    with pytest.raises(ConfigurationError):
        network(torch.rand(1, 3, 32, 32))


def test_semantic_time_warp_forward(small_arch, intr32):
    cfg = ArchitectureConfig(**dict(small_arch.as_dict(),
                                    use_semantic_time_warp=True))
    network = model.SemanticNetwork(cfg)
    depth = DepthMap.from_values(torch.full((1, 1, 32, 32), 5.0))
    output = network(torch.rand(1, 3, 32, 32), intr32, motion(), depth,
                     torch.rand(1, 3, 16, 16))
    assert output.labels.shape == (1, 32, 32)


def test_joint_network_rejects_time_warp(small_arch):
    cfg = ArchitectureConfig(**dict(small_arch.as_dict(),
                                    use_semantic_time_warp=True))
    with pytest.raises(ConfigurationError):
        model.JointNetwork(cfg)


def test_warp_previous_semantics_identity(small_arch, intr32):
    previous = torch.rand(1, 3, 16, 16)
    depth = DepthMap.from_values(torch.full((1, 1, 32, 32), 10.0))
    warped = model.warp_previous_semantics(
        previous, depth, SE3Transform.identity((1,), dtype=torch.float32),
        intr32, small_arch,
    )
    assert [w.shape[-1] for w in warped] == [16, 8, 4]
    assert torch.allclose(warped[0], previous)
    assert torch.allclose(warped[1], previous[..., ::2, ::2])


def test_warp_previous_semantics_zero_without_depth(small_arch, intr32):
    previous = torch.rand(1, 3, 16, 16) + 0.1
    values = torch.full((1, 1, 32, 32), 10.0)
    values[..., :16, :] = 0.0
    warped = model.warp_previous_semantics(
        previous, DepthMap.from_values(values),
        SE3Transform.identity((1,), dtype=torch.float32), intr32, small_arch,
    )
    assert (warped[0][..., :8, :] == 0).all()
    assert torch.allclose(warped[0][..., 8:, :], previous[..., 8:, :])
    assert (warped[1][..., :4, :] == 0).all()


def test_sncv_variant_forward(small_arch, intr32):
    cfg = ArchitectureConfig(**dict(small_arch.as_dict(), use_sncv=True))
    network = model.JointNetwork(cfg)
    output = network(frames(2), [motion()], intr32)
    assert output.depth.values.shape == (1, 1, 32, 32)


def test_upsample_outputs_blocks():
    depth = DepthMap.from_values(torch.arange(1.0, 5.0).reshape(1, 1, 2, 2))
    labels = torch.tensor([[[0, 1], [2, 0]]])
    up_depth, up_labels = model.upsample_outputs(depth, labels, size=(4, 4))
    assert (up_depth.values[0, 0, 2:, :2] == 3.0).all()
    assert up_depth.valid_mask.all()
    assert (up_labels[0, :2, 2:] == 1).all()
    with pytest.raises(ShapeError):
        model.upsample_outputs(labels, size=(8, 8))


def test_build_network_unknown(small_arch):
    with pytest.raises(ConfigurationError):
        model.build_network('stereo', small_arch)
    assert model.build_network('semantic', small_arch).kind == 'semantic'
