# Licensed under the Apache License, Version 2.0 (the "License"); you may
# not use this file except in compliance with the License. You may obtain
# a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
# WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
# License for the specific language governing permissions and limitations
# under the License.

"""Errors raised by the perception monitor."""


class MonitorError(Exception):
    """Base class of all errors raised by this package."""

    pass


class ConfigError(MonitorError):
    """Error raised when the pipeline configuration is invalid."""

    pass


class FormatError(MonitorError):
    """Error raised when a file does not match its expected format."""

    pass


class DatasetError(MonitorError):
    """Error raised for malformed frame records.

    The message names the file and the (1-based) line when known.
    """

    def __init__(self, message, path=None, line=None):
        """Build the error.

        Parameters:
            message: description of the problem
            path: the dataset file
            line: 1-based line number of the offending record
        """
        prefix = ''
        if path is not None:
            prefix = '%s' % path
            if line is not None:
                prefix += ':%d' % line
            prefix += ': '
        super(DatasetError, self).__init__(prefix + message)
        self.path = path
        self.line = line


class GeometryError(MonitorError):
    """Error raised when an object cannot be projected into the image."""

    pass


class FISError(MonitorError):
    """Error raised for an invalid fuzzy inference system."""

    pass
