#
# Licensed under the Apache License, Version 2.0 (the "License"); you may
# not use this file except in compliance with the License. You may obtain
# a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
# WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
# License for the specific language governing permissions and limitations
# under the License.

"""Common classes and utils for the tests."""

import warnings

import fixtures
import numpy as np
from oslo_log import log as logging
import oslotest.base as oslotest

from perceptionmonitor import _depth


class MonitorTestCase(oslotest.BaseTestCase):
    """Base class for all test-cases."""

    def setUp(self):
        """Set up the test."""
        super(MonitorTestCase, self).setUp()

        # If perceptionmonitor calls any deprecated function this will raise
        # an exception.
        warnings.filterwarnings('error', category=DeprecationWarning,
                                module='^perceptionmonitor\\.')
        self.addCleanup(warnings.resetwarnings)

        self.logger = self.useFixture(fixtures.FakeLogger(level=logging.DEBUG))

    def rng(self, seed=0):
        """Seeded random generator for reproducible fixtures."""
        return np.random.default_rng(seed)

    def assertObjectClose(self, expected, actual, places=6):
        """Compare two 2.5D objects attribute by attribute."""
        for name in _depth.Object25D._fields:
            self.assertAlmostEqual(getattr(expected, name),
                                   getattr(actual, name), places=places,
                                   msg='attribute %s differs' % name)


def box(x0, y0, x1, y1, d=10.0):
    """2.5D object covering the continuous extent [x0, x1] x [y0, y1]."""
    return _depth.Object25D((x0 + x1) / 2.0, (y0 + y1) / 2.0,
                            float(x1 - x0), float(y1 - y0), float(d))
