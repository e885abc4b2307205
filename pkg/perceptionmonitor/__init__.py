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

"""Run-time collision risk monitoring for camera-based perception.

The RiskMonitor retrieves safety-critical objects from a depth map,
measures how well the 3D detector's predictions align with them and maps
the alignment to a collision risk with a fuzzy inference system.
"""

import collections
import copy
import os

from oslo_config import cfg
from oslo_log import log as logging

from perceptionmonitor import _alignment
from perceptionmonitor import _depth
from perceptionmonitor import _fuzzy
from perceptionmonitor._exceptions import GeometryError

LOG = logging.getLogger(__name__)

MATCHING_GROUP = 'matching'
RETRIEVAL_GROUP = 'retrieval'
FIS_GROUP = 'fis'
OPTIMIZER_GROUP = 'optimizer'
SCENARIO_GROUP = 'scenario'
MONITOR_GROUP = 'monitor'

_MATCHING_OPTS = [
    cfg.FloatOpt('alpha', default=0.3, min=0.0, max=1.0,
                 help='IoU a matched pair must exceed.'),
    cfg.FloatOpt('beta', default=0.2, min=0.0, max=1.0,
                 help='Bound on the absolute relative depth discrepancy of '
                      'a matched pair.'),
]

_RETRIEVAL_OPTS = [
    cfg.FloatOpt('canny_low', default=20.0,
                 help='Lower hysteresis threshold on the Sobel magnitude.'),
    cfg.FloatOpt('canny_high', default=60.0,
                 help='Upper hysteresis threshold on the Sobel magnitude.'),
    cfg.IntOpt('min_box_area', default=64, min=1,
               help='Retrieved boxes smaller than this (pixels) are '
                    'dropped.'),
    cfg.FloatOpt('max_depth', default=20.0,
                 help='Objects farther than this (meters) are not '
                      'safety-critical.'),
    cfg.IntOpt('blur_radius', default=2, min=0,
               help='Radius of the Gaussian blur before edge detection.'),
    cfg.FloatOpt('epsilon', default=1e-3, min=0.0,
                 help='Depth floor (meters) when inverting depth maps.'),
]

_FIS_OPTS = [
    cfg.StrOpt('path', default='',
               help='Fuzzy system JSON document; empty selects the '
                    'handcrafted system.'),
    cfg.IntOpt('defuzz_resolution', default=1001, min=101,
               help='Output samples of the centroid defuzzification.'),
]

_OPTIMIZER_OPTS = [
    cfg.IntOpt('iterations', default=1000, min=1,
               help='Pattern search iterations.'),
    cfg.IntOpt('swarm_size', default=100, min=1,
               help='Particles, i.e. evaluations per swarm generation.'),
    cfg.IntOpt('swarm_iterations', default=20, min=1,
               help='Swarm generations.'),
    cfg.IntOpt('folds', default=5, min=2,
               help='Cross-validation folds of membership tuning.'),
    cfg.IntOpt('seed', default=0, min=0, help='Random seed.'),
    cfg.FloatOpt('initial_mesh', default=0.1,
                 help='Initial pattern search mesh size.'),
    cfg.FloatOpt('min_mesh', default=1e-6,
                 help='Pattern search stops below this mesh size.'),
    cfg.FloatOpt('inertia', default=0.729, help='Swarm inertia weight.'),
    cfg.FloatOpt('cognitive', default=1.49445,
                 help='Swarm cognitive coefficient.'),
    cfg.FloatOpt('social', default=1.49445,
                 help='Swarm social coefficient.'),
    cfg.BoolOpt('hybrid_polish', default=True,
                help='Refine the learned rule table by single-cell sweeps.'),
]

_SCENARIO_OPTS = [
    cfg.FloatOpt('ego_speed0', default=10.0,
                 help='Initial ego speed (m/s).'),
    cfg.FloatOpt('obstacle_distance0', default=40.0,
                 help='Initial gap to the obstacle (meters).'),
    cfg.StrOpt('obstacle_kind', default='static',
               choices=['static', 'crossing'],
               help='Parked obstacle or one crossing the lane.'),
    cfg.FloatOpt('detector_miss_prob', default=0.5, min=0.0, max=1.0,
                 help='Probability that the detector misses the obstacle.'),
    cfg.FloatOpt('detector_depth_noise', default=0.05, min=0.0,
                 help='Relative std of the detector depth error.'),
    cfg.FloatOpt('shield_threshold', default=0.5,
                 help='Risk above which the shield decelerates.'),
    cfg.FloatOpt('decel', default=4.0, help='Shield deceleration (m/s2).'),
    cfg.FloatOpt('dt', default=0.1, help='Simulation step (seconds).'),
    cfg.IntOpt('horizon', default=200, min=1,
               help='Maximum steps per run.'),
    cfg.FloatOpt('crossing_speed', default=1.0,
                 help='Lateral speed of a crossing obstacle (m/s).'),
    cfg.FloatOpt('crossing_offset0', default=-4.0,
                 help='Initial lateral offset of a crossing obstacle.'),
]

_MONITOR_OPTS = [
    cfg.StrOpt('mean_map', default='',
               help='DM01 mean inverse depth map of the training split.'),
    cfg.IntOpt('workers', default=1, min=1,
               help='Frames or scenario runs processed concurrently.'),
    cfg.BoolOpt('metrics_enabled', default=False,
                help='Emit statsd metrics through datadog.'),
]

_OPT_GROUPS = [
    (MATCHING_GROUP, _MATCHING_OPTS),
    (RETRIEVAL_GROUP, _RETRIEVAL_OPTS),
    (FIS_GROUP, _FIS_OPTS),
    (OPTIMIZER_GROUP, _OPTIMIZER_OPTS),
    (SCENARIO_GROUP, _SCENARIO_OPTS),
    (MONITOR_GROUP, _MONITOR_OPTS),
]

CONF = cfg.CONF
for _group, _opts in _OPT_GROUPS:
    CONF.register_opts(_opts, group=_group)

Assessment = collections.namedtuple('Assessment',
                                    ['retrieved', 'alignment', 'risk'])


def list_opts():
    """Return a list of oslo_config options available in the monitor.

    Each element of the list is a tuple. The first element is the name of
    the group under which the list of options in the second element is
    registered.

    :returns: a list of (group_name, opts) tuples
    """
    return [(group, copy.deepcopy(opts)) for group, opts in _OPT_GROUPS]


class RiskMonitor(object):
    """Estimate the collision risk of one frame at a time."""

    def __init__(self, mean_map, fis=None, retrieval=None, thresholds=None,
                 camera=None, metrics_enabled=False):
        """Set up the monitor.

        Parameters:
            mean_map: mean inverse DepthMap of the training data
            fis: FISConfig, the handcrafted system by default
            retrieval: RetrievalConfig, defaults when omitted
            thresholds: MatchThresholds, defaults when omitted
            camera: CameraModel used to project 3D predictions
            metrics_enabled: whether statsd metrics shall be emitted
        """
        self._mean_map = mean_map
        self._fis = _fuzzy.validate(fis or _fuzzy.default_fis())
        self._retrieval = _depth.validate_retrieval_config(
            retrieval or _depth.RetrievalConfig())
        self._thresholds = thresholds or _alignment.MatchThresholds()
        self._camera = camera
        self._statsd = self._create_statsd_client() \
            if metrics_enabled else None

    def _create_statsd_client(self):
        """Create the statsd client (if datadog package is present)."""
        try:
            import datadog

            return datadog.dogstatsd.DogStatsd(
                host=os.getenv('STATSD_HOST', 'localhost'),
                port=int(os.getenv('STATSD_PORT', '8125')),
                namespace='perception_monitor')
        except ImportError:
            LOG.warning("Python datadog package not installed. No "
                        "perception_monitor.* metrics will be produced.")
            return None

    @property
    def fis(self):
        return self._fis

    def project(self, objects, camera=None):
        """Bring predictions into 2.5D, projecting 3D boxes.

        Boxes that cannot be projected are skipped with a warning.
        """
        camera = camera or self._camera
        result = []
        for obj in objects:
            if isinstance(obj, _depth.Object25D):
                result.append(obj)
                continue
            if camera is None:
                raise GeometryError('3D boxes need a camera model')
            try:
                result.append(_alignment.project_box3d(obj, camera))
            except GeometryError as err:
                LOG.warning('skipping prediction: %s', err)
        return result

    def retrieve(self, depth_map):
        return _depth.retrieve_safety_critical(depth_map, self._mean_map,
                                               self._retrieval)

    def assess(self, depth_map, predictions, camera=None):
        """Return the retrieved objects, their alignment and the risk."""
        retrieved = self.retrieve(depth_map)
        alignment = _alignment.align_frame(self.project(predictions, camera),
                                           retrieved, self._thresholds)
        risk = _fuzzy.infer_batch(
            self._fis, [[alignment.mean_rdd, alignment.mean_iou]],
            check=False)[0]
        if self._statsd:
            self._statsd.gauge('risk', float(risk))
        return Assessment(retrieved, alignment, float(risk))

    def report_shield(self):
        """Count one engagement of the brake shield."""
        if self._statsd:
            self._statsd.increment('shield_engaged')
