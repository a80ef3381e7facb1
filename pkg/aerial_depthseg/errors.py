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

"""Exceptions raised by aerial_depthseg.

Every exception derives from a built-in so callers may keep catching
``ValueError``/``LookupError`` as before. :func:`exit_code` maps them to
the exit codes of the command line tool.
"""

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3


class ConfigurationError(ValueError):
    """Invalid configuration, flag or mode."""


class ModeMisuseError(ConfigurationError):
    """A label map was asked to be interpolated."""


class ShapeError(ValueError):
    """Resolutions or channel counts do not agree."""


class CheckpointError(ValueError):
    """A checkpoint archive does not match the requested configuration."""


class InvalidPoseError(ValueError):
    """A rotation is not orthonormal or not right handed."""


class DegenerateBaselineError(ValueError):
    """The camera translation is too short to triangulate depth."""


class DataError(ValueError):
    """Malformed or inconsistent dataset content."""


class SequencingError(LookupError):
    """Frames or motions are missing from a sequence."""


class DegenerateBatchError(ValueError):
    """No valid pixel is left to compute a loss or a metric."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""


def exit_code(exc):
    """Get the command line exit code for an exception.

    :param BaseException exc: raised exception.

    :returns: exit code (1 usage/config, 2 data, 3 numerical divergence).
    :rtype: int
    """
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGENCE
    if isinstance(exc, (ConfigurationError, ShapeError, CheckpointError)):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, SequencingError, InvalidPoseError,
                        DegenerateBatchError, DegenerateBaselineError,
                        FileNotFoundError)):
        return EXIT_DATA
    return EXIT_CONFIG
