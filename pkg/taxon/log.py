# Copyright 2025 The Taxon developers
#
# This file is part of Taxon. Taxon is free software: you can
# redistribute it and/or modify it under the terms of the GNU General
# Public License as published by the Free Software Foundation, either
# version 3 of the License, or (at your option) any later version.
#
# Taxon is distributed in the hope that it will be useful, but WITHOUT
# ANY WARRANTY; without even the implied warranty of MERCHANTABILITY
# or FITNESS FOR A PARTICULAR PURPOSE. See the GNU General Public
# License for more details.
#
# You should have received a copy of the GNU General Public License
# along with Taxon. If not, see <https://www.gnu.org/licenses/>.

"""
Logging helpers. The functions info, warning, begin and end work like
their FEniCS namesakes: begin/end open and close an indented block so
that nested iterations read as a tree in the log.
"""

import logging
import threading

logger = logging.getLogger("taxon")

_state = threading.local()


def _indent():
    return "  " * getattr(_state, "depth", 0)


def set_log_level(level):
    "Set log level (name or number) and attach a handler if needed"
    if isinstance(level, str):
        level = getattr(logging, level.upper())
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)
    logger.setLevel(level)


def debug(message, *args):
    logger.debug(_indent() + message, *args)


def info(message, *args):
    logger.info(_indent() + message, *args)


def warning(message, *args):
    logger.warning(_indent() + "*** Warning: " + message, *args)


def begin(message, *args):
    "Log message and increase indentation level"
    info(message, *args)
    _state.depth = getattr(_state, "depth", 0) + 1


def end():
    "Decrease indentation level"
    _state.depth = max(getattr(_state, "depth", 0) - 1, 0)
