#!/usr/bin/env python3
# --------------------------------------------------------------------------- #
# The MIT License (MIT)                                                       #
#                                                                             #
# Copyright (c) 2024 The touchtools contributors                              #
#                                                                             #
# Permission is hereby granted, free of charge, to any person obtaining       #
# a copy of this software and associated documentation files                  #
# (the "Software"), to deal in the Software without restriction, including    #
# without limitation the rights to use, copy, modify, merge, publish,         #
# distribute, sublicense, and/or sell copies of the Software, and to permit   #
# persons to whom the Software is furnished to do so, subject to the          #
# following conditions:                                                       #
#                                                                             #
# The above copyright notice and this permission notice shall be included     #
# in all copies or substantial portions of the Software.                      #
#                                                                             #
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR  #
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,    #
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL     #
# THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER  #
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING     #
# FROM, OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER         #
# DEALINGS IN THE SOFTWARE.                                                   #
# --------------------------------------------------------------------------- #
"""Exceptions raised by the touchtools package.

Every exception carries the exit code that the command line application
returns when the exception reaches it.
::
    0  ok
    2  configuration or parameter error
    3  data error (files, samples, checkpoints, metrics)
    4  numeric divergence
"""


class TouchError(Exception):
    """Base class of all errors raised by touchtools."""
    exit_code = 1


class ConfigError(TouchError):
    exit_code = 2


class ParameterError(TouchError):
    exit_code = 2


class DimensionError(TouchError):
    exit_code = 2


class ContractError(TouchError):
    exit_code = 2


class DataError(TouchError):
    exit_code = 3


class FormatError(DataError):
    pass


class ValidationError(DataError):
    pass


class CheckpointError(DataError):
    pass


class MetricError(DataError):
    pass


class NumericError(TouchError):
    exit_code = 4


class DivergenceError(NumericError):
    """A training loss became NaN or infinite."""
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
