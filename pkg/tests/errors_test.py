#!/usr/bin/env python
# -*- coding: UTF-8 -*-

"""Test for errors."""

import pytest

from aerial_depthseg.errors import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_DIVERGENCE,
    CheckpointError,
    ConfigurationError,
    DataError,
    DegenerateBaselineError,
    DegenerateBatchError,
    DivergenceError,
    InvalidPoseError,
    ModeMisuseError,
    SequencingError,
    ShapeError,
    exit_code,
)


@pytest.mark.parametrize('exc,code', [
    (ConfigurationError('x'), EXIT_CONFIG),
    (ModeMisuseError('x'), EXIT_CONFIG),
    (ShapeError('x'), EXIT_CONFIG),
    (CheckpointError('x'), EXIT_CONFIG),
    (DataError('x'), EXIT_DATA),
    (SequencingError('x'), EXIT_DATA),
    (InvalidPoseError('x'), EXIT_DATA),
    (DegenerateBatchError('x'), EXIT_DATA),
    (DegenerateBaselineError('x'), EXIT_DATA),
    (FileNotFoundError('x'), EXIT_DATA),
    (DivergenceError('x'), EXIT_DIVERGENCE),
    (RuntimeError('x'), EXIT_CONFIG),
])
def test_exit_code(exc, code):
    assert exit_code(exc) == code


def test_mode_misuse_is_configuration_error():
    with pytest.raises(ConfigurationError):
        raise ModeMisuseError('stream needs reset')
