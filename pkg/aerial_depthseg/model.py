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

"""Joint depth and semantic segmentation network.

A pyramidal encoder is shared by two decoders that run from the coarsest to
the finest level:

* the depth decoder predicts parallax from the current and the previous
  frame's features and the camera motion, then converts it into depth;
* the semantic decoder works on the current frame only and predicts
  semantic features and class probabilities.

Level ``l`` (1-based) of every pyramid has the resolution ``input / 2^l``;
decoder outputs are ordered from the coarsest to the finest level.
"""

import hashlib
import logging
from dataclasses import asdict, dataclass, field, fields

import torch
import torch.nn.functional as F
import yaml
from torch import nn

from aerial_depthseg.errors import (
    ConfigurationError,
    SequencingError,
    ShapeError,
)
from aerial_depthseg.geometry import (
    DepthMap,
    ParallaxMap,
    SE3Transform,
    baseline_degenerate,
    parallax_correspondence,
    parallax_to_depth,
    reproject,
    warp,
)
from aerial_depthseg.layers import (
    DINL,
    Refiner,
    cost_volume,
    downsample_nearest,
    init_weights,
    l2_normalize,
    upsample_bilinear,
    upsample_nearest,
)

DEFAULT_ENCODER_CHANNELS = (16, 32, 64, 96, 128, 192, 256)

_logging = logging.getLogger(__name__)


@dataclass
class ArchitectureConfig:
    """Network hyper-parameters and the architecture-study switches.

    :ivar int num_levels: pyramid levels ``M``.
    :ivar list encoder_channels: channels per encoder level, finest first.
    :ivar int num_classes: semantic classes ``N_c``.
    :ivar int semantic_feature_channels: semantic feature map depth.
    :ivar int depth_feature_channels: depth feature map depth.
    :ivar bool use_dinl: domain-invariant normalization in the first level.
    :ivar bool use_feature_normalization: L2-normalize encoder features in
        the decoders' preprocessing.
    :ivar bool use_sncv: spatial neighbourhood cost volume.
    :ivar bool use_semantic_time_warp: feed the warped previous semantic
        map to the semantic decoder.
    :ivar int refiner_depth: hidden convolutions per refiner.
    :ivar int refiner_channels: hidden refiner width.
    :ivar int sncv_radius: cost volume radius.
    """

    num_levels: int = 5
    encoder_channels: list = None
    num_classes: int = 7
    semantic_feature_channels: int = 4
    depth_feature_channels: int = 4
    use_dinl: bool = True
    use_feature_normalization: bool = True
    use_sncv: bool = False
    use_semantic_time_warp: bool = False
    refiner_depth: int = 5
    refiner_channels: int = 64
    sncv_radius: int = 3

    def __post_init__(self):
        if self.num_levels < 2:
            raise ConfigurationError('at least 2 levels are needed, got '
                                     '{0}'.format(self.num_levels))
        if self.encoder_channels is None:
            if self.num_levels > len(DEFAULT_ENCODER_CHANNELS):
                raise ConfigurationError(
                    'no default encoder channels for {0} levels'.format(
                        self.num_levels,
                    )
                )
            self.encoder_channels = list(
                DEFAULT_ENCODER_CHANNELS[:self.num_levels]
            )
        self.encoder_channels = [int(ch) for ch in self.encoder_channels]
        if len(self.encoder_channels) != self.num_levels:
            raise ConfigurationError(
                '{0} encoder channel counts for {1} levels'.format(
                    len(self.encoder_channels), self.num_levels,
                )
            )
        if any(a >= b for a, b in zip(self.encoder_channels,
                                      self.encoder_channels[1:])):
            raise ConfigurationError(
                'encoder channels must be strictly increasing: {0}'.format(
                    self.encoder_channels,
                )
            )
        if self.num_classes < 2:
            raise ConfigurationError('at least 2 classes are needed')
        for name in ('semantic_feature_channels', 'depth_feature_channels',
                     'refiner_depth', 'refiner_channels'):
            if getattr(self, name) < 1:
                raise ConfigurationError('{0} must be positive'.format(name))
        if self.sncv_radius < 0:
            raise ConfigurationError('sncv_radius must not be negative')

    def check_input(self, height, width):
        """Raise unless the image size is divisible by ``2^M``."""
        divisor = 2 ** self.num_levels
        if height % divisor or width % divisor:
            raise ConfigurationError(
                'input {0}x{1} is not divisible by 2^{2}={3}'.format(
                    width, height, self.num_levels, divisor,
                )
            )

    @property
    def sncv_channels(self):
        return (2 * self.sncv_radius + 1) ** 2

    def as_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigurationError('unknown architecture keys: {0}'.format(
                ', '.join(unknown),
            ))
        return cls(**values)

    def to_text(self):
        """Serialize as ``key: value`` text (YAML)."""
        return yaml.safe_dump(self.as_dict(), default_flow_style=False,
                              sort_keys=True)

    @classmethod
    def from_text(cls, text):
        return cls.from_dict(yaml.safe_load(text) or {})

    def config_hash(self):
        return hashlib.sha256(self.to_text().encode('utf-8')).hexdigest()


@dataclass
class FeaturePyramid:
    """Encoder features, ``levels[0]`` is level 1 (half resolution)."""

    levels: list

    def __len__(self):
        return len(self.levels)

    def level(self, level):
        return self.levels[level - 1]

    @property
    def resolutions(self):
        return [tuple(f.shape[-2:]) for f in self.levels]


@dataclass
class SemanticLevelState:
    """Semantic decoder output at one level."""

    features: torch.Tensor
    probabilities: torch.Tensor
    logits: torch.Tensor


@dataclass
class DepthLevelState:
    """Depth decoder output at one level.

    :ivar ParallaxMap parallax: predicted parallax.
    :ivar torch.Tensor features: depth features handed to the next level.
    :ivar DepthMap depth: parallax converted into depth.
    :ivar torch.Tensor previous_features: previous-frame encoder features.
    :ivar torch.Tensor previous_parallax: previous-frame parallax warped
        into the current frame.
    :ivar torch.Tensor degenerate: ``(B,)`` samples whose motion had no
        usable baseline (parallax passed through).
    """

    parallax: ParallaxMap
    features: torch.Tensor
    depth: DepthMap
    previous_features: torch.Tensor = None
    previous_parallax: torch.Tensor = None
    degenerate: torch.Tensor = None


@dataclass
class JointOutput:
    """Network predictions; fields of a task the network lacks stay None."""

    depth: DepthMap = None
    depth_half: DepthMap = None
    probabilities: torch.Tensor = None
    labels: torch.Tensor = None
    labels_half: torch.Tensor = None
    depth_levels: list = field(default_factory=list)
    semantic_levels: list = field(default_factory=list)
    first_frame: bool = False
    degenerate: torch.Tensor = None

    def depth_pyramid(self):
        return [state.depth for state in self.depth_levels]


class EncoderLevel(nn.Module):

    def __init__(self, in_channels, out_channels, use_dinl=False):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=2,
                               padding=1)
        self.dinl = DINL() if use_dinl else None
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)

    def forward(self, x):
        x = self.conv1(x)
        if self.dinl is not None:
            x = self.dinl(x)
        x = F.relu(x)
        return F.relu(self.conv2(x))


class Encoder(nn.Module):
    """Pyramidal encoder: two 3x3 convolutions per level, the first one
    halving the resolution."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        levels = []
        in_channels = 3
        for index, channels in enumerate(cfg.encoder_channels):
            levels.append(EncoderLevel(
                in_channels, channels, use_dinl=cfg.use_dinl and index == 0,
            ))
            in_channels = channels
        self.levels = nn.ModuleList(levels)

    def forward(self, image):
        self.cfg.check_input(*image.shape[-2:])
        features = []
        x = image
        for level in self.levels:
            x = level(x)
            features.append(x)
        return FeaturePyramid(features)


def encode(encoder, image):
    """Extract the feature pyramid of a ``(B, 3, H, W)`` image in [0, 1].

    :rtype: :class:`FeaturePyramid`
    """
    return encoder(image)


def _normalize(features, cfg):
    if cfg.use_feature_normalization:
        return l2_normalize(features)
    return features


def semantic_input_channels(cfg, level):
    if cfg.use_sncv:
        channels = cfg.sncv_channels
    else:
        channels = cfg.encoder_channels[level - 1]
    channels += cfg.semantic_feature_channels + cfg.num_classes
    if cfg.use_semantic_time_warp:
        channels += cfg.num_classes
    return channels


def semantic_preprocess(prev_state, f_enc, cfg, warped_previous=None):
    """Build the semantic refiner input of one level (no parameters).

    Concatenates the normalized encoder features (or their autocorrelation
    cost volume with ``use_sncv``), the upscaled semantic features of the
    coarser level, its upscaled semantic map and, with
    ``use_semantic_time_warp``, the warped previous-frame semantic map.

    :param SemanticLevelState prev_state: coarser level output, or None at
        the coarsest level (zeros are used instead).
    :param torch.Tensor f_enc: encoder features of this level.
    :param ArchitectureConfig cfg: architecture.
    :param torch.Tensor warped_previous: warped previous semantic map.

    :returns: refiner input.
    :rtype: torch.Tensor
    """
    batch, _, height, width = f_enc.shape
    if prev_state is None:
        features = f_enc.new_zeros(
            batch, cfg.semantic_feature_channels, height, width,
        )
        probabilities = f_enc.new_zeros(batch, cfg.num_classes, height, width)
    else:
        coarse = tuple(prev_state.probabilities.shape[-2:])
        if coarse != (height // 2, width // 2):
            raise ShapeError('coarser semantic map {0} does not fit a level '
                             'of {1}'.format(coarse, (height, width)))
        features = upsample_bilinear(prev_state.features)
        probabilities = upsample_nearest(prev_state.probabilities)

    normalized = _normalize(f_enc, cfg)
    if cfg.use_sncv:
        normalized = cost_volume(normalized, normalized, cfg.sncv_radius)
    parts = [normalized, features, probabilities]
    if cfg.use_semantic_time_warp:
        if warped_previous is None:
            raise ConfigurationError(
                'semantic time warp needs the warped previous semantic map'
            )
        if tuple(warped_previous.shape[-2:]) != (height, width):
            raise ShapeError('warped previous map {0} does not fit a level '
                             'of {1}'.format(tuple(warped_previous.shape[-2:]),
                                             (height, width)))
        parts.append(warped_previous)
    return torch.cat(parts, dim=1)


def semantic_refine(refiner, refiner_input, cfg):
    """Run a semantic refiner and split its output.

    The first ``semantic_feature_channels`` channels are the semantic
    features, the remaining ``N_c`` go through a per-pixel softmax.

    :rtype: :class:`SemanticLevelState`
    """
    out = refiner(refiner_input)
    expected = cfg.semantic_feature_channels + cfg.num_classes
    if out.shape[1] != expected:
        raise ShapeError('semantic refiner emitted {0} channels instead of '
                         '{1}'.format(out.shape[1], expected))
    logits = out[:, cfg.semantic_feature_channels:]
    return SemanticLevelState(
        features=out[:, :cfg.semantic_feature_channels],
        probabilities=F.softmax(logits, dim=1),
        logits=logits,
    )


class SemanticDecoder(nn.Module):

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        out_channels = cfg.semantic_feature_channels + cfg.num_classes
        self.refiners = nn.ModuleList([
            Refiner(semantic_input_channels(cfg, level),
                    cfg.refiner_channels, cfg.refiner_depth, out_channels)
            for level in range(1, cfg.num_levels + 1)
        ])

    def forward(self, pyramid, warped_previous=None):
        """Decode a pyramid into per-level states, coarsest first.

        :param FeaturePyramid pyramid: current frame features.
        :param list warped_previous: warped previous semantic maps per level
            (finest first), only with ``use_semantic_time_warp``.
        """
        states = []
        state = None
        for level in range(self.cfg.num_levels, 0, -1):
            previous = None
            if warped_previous is not None:
                previous = warped_previous[level - 1]
            refiner_input = semantic_preprocess(
                state, pyramid.level(level), self.cfg, previous,
            )
            state = semantic_refine(
                self.refiners[level - 1], refiner_input, self.cfg,
            )
            states.append(state)
        return states


def depth_input_channels(cfg, level):
    channels = 2 * cfg.encoder_channels[level - 1]
    if cfg.use_sncv:
        channels += cfg.sncv_channels
    return channels + 2 + cfg.depth_feature_channels


def depth_decode_level(refiner, f_enc_curr, f_enc_prev, coarse_state,
                       prev_frame_parallax, motion, intr, cfg):
    """Predict the parallax of one depth decoder level.

    Preprocessing warps the previous frame's features (and its parallax)
    into the current frame with the reprojection implied by the upscaled
    coarser parallax; with ``use_sncv`` a cost volume between the current
    and the warped features is added. The refiner output ``z`` is added to
    the upscaled parallax ``p_up`` and mapped through a softplus, so the
    level parallax ``softplus(z + p_up)`` is never negative.

    Samples whose motion has no baseline pass ``p_up`` through unchanged
    and are flagged in ``DepthLevelState.degenerate``.

    :param Refiner refiner: parallax refiner of this level.
    :param torch.Tensor f_enc_curr: current features of this level.
    :param torch.Tensor f_enc_prev: previous-frame features of this level.
    :param DepthLevelState coarse_state: coarser level output or None.
    :param torch.Tensor prev_frame_parallax: previous-frame parallax of this
        level or None.
    :param SE3Transform motion: camera_prev-from-camera_curr motion.
    :param CameraIntrinsics intr: full resolution intrinsics.
    :param ArchitectureConfig cfg: architecture.

    :rtype: :class:`DepthLevelState`
    """
    if f_enc_curr.shape != f_enc_prev.shape:
        raise ShapeError('current features {0} and previous features {1} '
                         'differ'.format(tuple(f_enc_curr.shape),
                                         tuple(f_enc_prev.shape)))
    batch, _, height, width = f_enc_curr.shape
    level_intr = intr.scaled(width, height)
    fd = cfg.depth_feature_channels

    if coarse_state is None:
        p_up = f_enc_curr.new_zeros(batch, 1, height, width)
        feat_up = f_enc_curr.new_zeros(batch, fd, height, width)
    else:
        coarse = tuple(coarse_state.parallax.values.shape[-2:])
        if coarse != (height // 2, width // 2):
            raise ShapeError('coarser parallax {0} does not fit a level of '
                             '{1}'.format(coarse, (height, width)))
        # parallax is measured in pixels of the level resolution
        p_up = 2.0 * upsample_bilinear(coarse_state.parallax.values)
        feat_up = upsample_bilinear(coarse_state.features)

    degenerate = baseline_degenerate(motion, batch).to(f_enc_curr.device)
    field = parallax_correspondence(ParallaxMap(p_up), motion, level_intr)
    current = _normalize(f_enc_curr, cfg)
    warped_prev, _ = warp(_normalize(f_enc_prev, cfg), field, 'bilinear')
    if prev_frame_parallax is None:
        warped_parallax = torch.zeros_like(p_up)
    else:
        warped_parallax, _ = warp(prev_frame_parallax, field, 'bilinear')

    if bool(degenerate.all()):
        parallax = p_up
        features = feat_up
    else:
        parts = [current, warped_prev]
        if cfg.use_sncv:
            parts.append(cost_volume(current, warped_prev, cfg.sncv_radius))
        parts += [warped_parallax, p_up, feat_up]
        out = refiner(torch.cat(parts, dim=1))
        features = out[:, :fd]
        parallax = F.softplus(out[:, fd:] + p_up)
        if bool(degenerate.any()):
            selected = degenerate[:, None, None, None]
            parallax = torch.where(selected, p_up, parallax)
            features = torch.where(selected, feat_up, features)

    depth = parallax_to_depth(
        ParallaxMap(parallax), motion, level_intr, strict=False,
    )
    return DepthLevelState(
        parallax=ParallaxMap(parallax),
        features=features,
        depth=depth,
        previous_features=f_enc_prev,
        previous_parallax=warped_parallax,
        degenerate=degenerate,
    )


class DepthDecoder(nn.Module):

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.refiners = nn.ModuleList([
            Refiner(depth_input_channels(cfg, level), cfg.refiner_channels,
                    cfg.refiner_depth, cfg.depth_feature_channels + 1)
            for level in range(1, cfg.num_levels + 1)
        ])

    def decode_level(self, level, f_enc_curr, f_enc_prev, coarse_state,
                     prev_frame_parallax, motion, intr):
        return depth_decode_level(
            self.refiners[level - 1], f_enc_curr, f_enc_prev, coarse_state,
            prev_frame_parallax, motion, intr, self.cfg,
        )

    def forward(self, current, previous, previous_states, motion, intr):
        """Decode the current pyramid, coarsest level first.

        :param FeaturePyramid current: current frame features.
        :param FeaturePyramid previous: previous frame features.
        :param list previous_states: previous frame's decoder states
            (coarsest first) or None.
        :param SE3Transform motion: camera_prev-from-camera_curr motion.
        :param CameraIntrinsics intr: full resolution intrinsics.
        """
        states = []
        state = None
        for index, level in enumerate(range(self.cfg.num_levels, 0, -1)):
            prev_parallax = None
            if previous_states is not None:
                prev_parallax = previous_states[index].parallax.values
            state = self.decode_level(
                level, current.level(level), previous.level(level), state,
                prev_parallax, motion, intr,
            )
            states.append(state)
        return states


class StreamContext:
    """Streaming state of one frame sequence.

    Holds the previous frame's pyramid and depth decoder states. A context
    belongs to exactly one sequence; the first frame is decoded against a
    copy of itself with the identity motion.
    """

    def __init__(self):
        self._logging = logging.getLogger(__name__)
        self.reset()

    def reset(self):
        self.pyramid = None
        self.depth_states = None
        self.frames = 0

    def step(self, decoder, pyramid, motion, intr):
        """Decode the depth of the next frame.

        :returns: decoder states (coarsest first) and whether the frame was
            the first of the stream.
        :rtype: tuple
        """
        first = self.pyramid is None
        batch = pyramid.levels[0].shape[0]
        dtype = pyramid.levels[0].dtype
        device = pyramid.levels[0].device
        if first:
            previous = pyramid
            motion = SE3Transform.identity((batch,), dtype=dtype,
                                           device=device)
            self._logging.debug('first frame, duplicating its pyramid')
        else:
            if motion is None:
                raise SequencingError(
                    'frame {0} has no motion to its predecessor'.format(
                        self.frames,
                    )
                )
            previous = self.pyramid
        states = decoder(pyramid, previous, self.depth_states, motion, intr)
        if not first and bool(states[-1].degenerate.any()):
            self._logging.warning(
                'frame {0}: camera baseline too short, parallax passed '
                'through'.format(self.frames)
            )
        self.pyramid = pyramid
        self.depth_states = states
        self.frames += 1
        return states, first


def upsample_outputs(*maps, size=None):
    """Nearest-neighbour x2 upsampling of half resolution outputs.

    :param maps: :class:`DepthMap` objects or label/probability tensors.
    :param tuple size: full ``(H, W)``; checked against the maps if given.

    :returns: upsampled maps in the same order (a single map if one was
        given).
    """
    result = []
    for value in maps:
        tensor = value.values if isinstance(value, DepthMap) else value
        if size is not None and \
                tuple(tensor.shape[-2:]) != (size[0] // 2, size[1] // 2):
            raise ShapeError('output {0} is not half of {1}'.format(
                tuple(tensor.shape[-2:]), tuple(size),
            ))
        if isinstance(value, DepthMap):
            result.append(DepthMap(
                upsample_nearest(value.values),
                upsample_nearest(value.valid_mask),
            ))
        else:
            result.append(upsample_nearest(value))
    return result[0] if len(result) == 1 else tuple(result)


def _depth_fields(output, states, first, size):
    final = states[-1]
    output.depth_levels = states
    output.depth_half = final.depth
    output.depth = upsample_outputs(final.depth, size=size)
    output.first_frame = first
    output.degenerate = final.degenerate


def _semantic_fields(output, states, size):
    probabilities = states[-1].probabilities
    output.semantic_levels = states
    output.labels_half = probabilities.argmax(dim=1)
    output.probabilities, output.labels = upsample_outputs(
        probabilities, output.labels_half, size=size,
    )


def _check_sequence(frames, motions, cfg):
    if frames.dim() != 5:
        raise ShapeError('frames must be (B, n, 3, H, W), got {0}'.format(
            tuple(frames.shape),
        ))
    count = frames.shape[1]
    if count < 1:
        raise SequencingError('empty frame sequence')
    motions = list(motions or [])
    if len(motions) != count - 1:
        raise SequencingError('{0} frames need {1} motions, got {2}'.format(
            count, count - 1, len(motions),
        ))
    cfg.check_input(*frames.shape[-2:])
    return count, motions


def _run_depth(network, frames, motions, intr):
    count, motions = _check_sequence(frames, motions, network.cfg)
    context = StreamContext()
    pyramids = [network.encoder(frames[:, i]) for i in range(count)]
    _logging.debug('pyramid resolutions {0}'.format(
        pyramids[0].resolutions,
    ))
    states, first = None, True
    for index, pyramid in enumerate(pyramids):
        motion = motions[index - 1] if index else None
        states, first = context.step(
            network.depth_decoder, pyramid, motion, intr,
        )
    return pyramids, states, first


def forward_joint(network, frames, motions, intr):
    """Run the joint network on a window of frames; the last one is the
    target.

    :param JointNetwork network: joint network.
    :param torch.Tensor frames: ``(B, n, 3, H, W)`` images in [0, 1].
    :param list motions: ``n - 1`` batched motions, ``motions[i]`` maps
        frame ``i + 1`` camera points into frame ``i``.
    :param CameraIntrinsics intr: full resolution intrinsics.

    :rtype: :class:`JointOutput`
    """
    size = tuple(frames.shape[-2:])
    pyramids, states, first = _run_depth(network, frames, motions, intr)
    output = JointOutput()
    _depth_fields(output, states, first, size)
    _semantic_fields(output, network.semantic_decoder(pyramids[-1]), size)
    return output


def warp_previous_semantics(previous, gt_depth, motion, intr, cfg):
    """Warp the previous frame's semantic map into every decoder level.

    Pixels without valid depth (sky) or projecting outside the previous
    frame get an all-zero probability vector, the fill :func:`warp` uses
    for continuous maps; the decoder reads them as carrying no prior.

    :param torch.Tensor previous: ``(B, N_c, H/2, W/2)`` previous semantic
        probabilities.
    :param DepthMap gt_depth: full resolution depth of the current frame.
    :param SE3Transform motion: camera_prev-from-camera_curr motion.
    :param CameraIntrinsics intr: full resolution intrinsics.
    :param ArchitectureConfig cfg: architecture.

    :returns: warped maps per level, finest first.
    :rtype: list
    """
    warped = []
    for level in range(1, cfg.num_levels + 1):
        factor = 2 ** level
        depth = DepthMap(
            downsample_nearest(gt_depth.values, factor),
            downsample_nearest(gt_depth.valid_mask, factor),
        )
        source = downsample_nearest(previous, 2 ** (level - 1))
        height, width = depth.shape
        if tuple(source.shape[-2:]) != (height, width):
            raise ShapeError('previous semantic map {0} does not fit level '
                             '{1}'.format(tuple(previous.shape[-2:]), level))
        field_ = reproject(depth, motion, intr.scaled(width, height))
        map_, _ = warp(source, field_, 'nearest')
        warped.append(map_)
    return warped


def forward_semantic_single(network, image, intr=None, motion=None,
                            gt_depth=None, previous=None):
    """Run the standalone semantic network on one image.

    With ``use_semantic_time_warp`` the previous semantic map is warped with
    the motion and the ground-truth depth and fed to every level.

    :rtype: :class:`JointOutput`
    """
    cfg = network.cfg
    warped = None
    if cfg.use_semantic_time_warp:
        missing = [name for name, value in (
            ('intrinsics', intr), ('motion', motion),
            ('ground-truth depth', gt_depth), ('previous semantics', previous),
        ) if value is None]
        if missing:
            raise ConfigurationError(
                'semantic time warp requires {0}'.format(', '.join(missing))
            )
        warped = warp_previous_semantics(previous, gt_depth, motion, intr, cfg)
    pyramid = network.encoder(image)
    output = JointOutput()
    _semantic_fields(
        output, network.semantic_decoder(pyramid, warped),
        tuple(image.shape[-2:]),
    )
    return output


class DepthNetwork(nn.Module):
    """Encoder and depth decoder."""

    kind = 'depth'

    def __init__(self, cfg, seed=0):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.depth_decoder = DepthDecoder(cfg)
        init_weights(self, seed)

    def forward(self, frames, motions, intr):
        size = tuple(frames.shape[-2:])
        _, states, first = _run_depth(self, frames, motions, intr)
        output = JointOutput()
        _depth_fields(output, states, first, size)
        return output


class SemanticNetwork(nn.Module):
    """Encoder and single-image semantic decoder."""

    kind = 'semantic'

    def __init__(self, cfg, seed=0):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.semantic_decoder = SemanticDecoder(cfg)
        init_weights(self, seed)

    def forward(self, image, intr=None, motion=None, gt_depth=None,
                previous=None):
        return forward_semantic_single(
            self, image, intr, motion, gt_depth, previous,
        )


class JointNetwork(nn.Module):
    """Shared encoder with a depth and a semantic decoder."""

    kind = 'joint'

    def __init__(self, cfg, seed=0):
        super().__init__()
        if cfg.use_semantic_time_warp:
            raise ConfigurationError(
                'the semantic time warp is only available in the semantic '
                'network'
            )
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.depth_decoder = DepthDecoder(cfg)
        self.semantic_decoder = SemanticDecoder(cfg)
        init_weights(self, seed)

    def forward(self, frames, motions, intr):
        return forward_joint(self, frames, motions, intr)


NETWORKS = {
    'joint': JointNetwork,
    'depth': DepthNetwork,
    'semantic': SemanticNetwork,
}


def build_network(kind, cfg, seed=0):
    """Build a network by name (``joint``, ``depth`` or ``semantic``)."""
    try:
        network_class = NETWORKS[kind]
    except KeyError:
        raise ConfigurationError('network {0} is not defined'.format(kind))
    return network_class(cfg, seed=seed)
