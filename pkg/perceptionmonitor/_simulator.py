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

"""Closed-loop kinematic simulation of the monitor and its brake shield.

An ego vehicle drives along a straight lane towards an obstacle. Every step
renders a depth map of the scene from a forward camera, runs the monitor
on it together with a noisy detector, and lets the shield decelerate the
vehicle once the estimated risk crosses the threshold.
"""

import collections
from concurrent import futures

import numpy as np
from oslo_log import log as logging
from scipy import stats

import perceptionmonitor
from perceptionmonitor import _alignment
from perceptionmonitor import _depth
from perceptionmonitor._depth import Object25D
from perceptionmonitor._exceptions import ConfigError

LOG = logging.getLogger(__name__)

ScenarioConfig = collections.namedtuple(
    'ScenarioConfig',
    ['ego_speed0', 'obstacle_distance0', 'obstacle_kind',
     'detector_miss_prob', 'detector_depth_noise', 'shield_threshold',
     'decel', 'dt', 'horizon', 'seed', 'shield_enabled', 'crossing_speed',
     'crossing_offset0'],
    defaults=(10.0, 40.0, 'static', 0.0, 0.05, 0.5, 4.0, 0.1, 200, 0, True,
              1.0, -4.0))
ScenarioState = collections.namedtuple(
    'ScenarioState',
    ['t', 'ego_pos', 'ego_vel', 'obstacle_pos', 'obstacle_lateral', 'risk',
     'shield_active', 'collided'])
ScenarioOutcome = collections.namedtuple(
    'ScenarioOutcome',
    ['seed', 'collided', 'min_gap', 'stop_time', 'risk_trace'])

KINDS = ('static', 'crossing')

SENSOR_RANGE = 80.0
CAMERA = _alignment.CameraModel(160.0, 160.0, 80.0, 60.0, 160, 120)
CAMERA_HEIGHT = 1.5
OBSTACLE_WIDTH = 1.8
OBSTACLE_HEIGHT = 1.6
GROUND_CLEARANCE = 0.3
# lateral offset below which a crossing obstacle blocks the ego lane
LANE_HALF_WIDTH = 1.8


def validate_scenario(cfg):
    if cfg.obstacle_kind not in KINDS:
        raise ConfigError('unknown obstacle kind %r' % (cfg.obstacle_kind,))
    if min(cfg.ego_speed0, cfg.obstacle_distance0, cfg.decel, cfg.dt) <= 0:
        raise ConfigError('speed, distance, decel and dt must be positive')
    if not 0 <= cfg.detector_miss_prob <= 1:
        raise ConfigError('detector_miss_prob must lie in [0, 1]')
    if cfg.detector_depth_noise < 0:
        raise ConfigError('detector_depth_noise must be non-negative')
    if cfg.horizon < 1:
        raise ConfigError('horizon must be >= 1 step')
    return cfg


def initial_state(cfg):
    lateral = cfg.crossing_offset0 if cfg.obstacle_kind == 'crossing' \
        else 0.0
    return ScenarioState(0.0, 0.0, cfg.ego_speed0, cfg.obstacle_distance0,
                         lateral, 0.0, False, False)


def background(cam=CAMERA, height=CAMERA_HEIGHT):
    """Depth of the flat ground seen by a level pinhole camera."""
    rows = np.arange(cam.image_height, dtype=np.float64) - cam.cy0
    with np.errstate(divide='ignore'):
        depth = np.where(rows > 0, cam.fy * height / rows, SENSOR_RANGE)
    depth = np.minimum(depth, SENSOR_RANGE)
    return np.repeat(depth[:, None], cam.image_width, axis=1)


def mean_map(cam=CAMERA):
    """Mean inverse map of the object-free frames of the scenario."""
    return _depth.invert(_depth.make_depth_map(background(cam)))


def obstacle_box(gap, lateral, cam=CAMERA):
    """Image rectangle (x0, y0, x1, y1) of the obstacle body, or None."""
    if gap <= 0 or gap > SENSOR_RANGE:
        return None
    y0 = cam.cy0 + cam.fy * (CAMERA_HEIGHT - OBSTACLE_HEIGHT) / gap
    y1 = cam.cy0 + cam.fy * (CAMERA_HEIGHT - GROUND_CLEARANCE) / gap
    x0 = cam.cx0 + cam.fx * (lateral - OBSTACLE_WIDTH / 2.0) / gap
    x1 = cam.cx0 + cam.fx * (lateral + OBSTACLE_WIDTH / 2.0) / gap
    x0, x1 = max(x0, 0.0), min(x1, float(cam.image_width))
    y0, y1 = max(y0, 0.0), min(y1, float(cam.image_height))
    if x1 - x0 < 1 or y1 - y0 < 1:
        return None
    return x0, y0, x1, y1


def synth_frame(state, cfg, rng, cam=CAMERA):
    """Render the depth map, detector output and ground truth of a state.

    Returns (depth_map, predictions, ground_truths).
    """
    data = background(cam)
    gap = state.obstacle_pos - state.ego_pos
    box = obstacle_box(gap, state.obstacle_lateral, cam)
    truths = []
    if box is not None:
        x0, y0, x1, y1 = box
        r0, r1 = int(np.floor(y0)), int(np.ceil(y1))
        c0, c1 = int(np.floor(x0)), int(np.ceil(x1))
        data[r0:r1, c0:c1] = gap
        # truth is the painted footprint in pixel-center coordinates
        truths.append(Object25D((c0 + c1 - 1) / 2.0, (r0 + r1 - 1) / 2.0,
                                float(c1 - c0), float(r1 - r0), gap))

    predictions = []
    for truth in truths:
        missed = rng.random() < cfg.detector_miss_prob
        error = stats.truncnorm.rvs(-2.0, 2.0, random_state=rng)
        if not missed:
            predictions.append(truth._replace(
                d=truth.d * (1.0 + cfg.detector_depth_noise * error)))
    return _depth.make_depth_map(data), predictions, truths


def shield(risk, cfg, latched=False):
    """Acceleration command of the shield.

    Decelerates while the risk exceeds the threshold or the shield has
    latched; otherwise passes the nominal command (zero) through.
    """
    if latched or risk > cfg.shield_threshold:
        return -cfg.decel
    return 0.0


def _in_lane(state):
    return abs(state.obstacle_lateral) <= LANE_HALF_WIDTH


def step(state, accel, cfg):
    """Advance the kinematics by one time step."""
    vel = max(0.0, state.ego_vel + accel * cfg.dt)
    pos = state.ego_pos + vel * cfg.dt
    lateral = state.obstacle_lateral
    if cfg.obstacle_kind == 'crossing':
        lateral += cfg.crossing_speed * cfg.dt
    nxt = state._replace(t=state.t + cfg.dt, ego_pos=pos, ego_vel=vel,
                         obstacle_lateral=lateral)
    hit = (nxt.obstacle_pos - pos <= 0 and vel > 0 and _in_lane(nxt)
           and state.obstacle_pos - state.ego_pos > 0)
    return nxt._replace(collided=state.collided or hit)


def run_scenario(cfg, fis, retrieval, thresholds, monitor=None):
    """Simulate one closed-loop run.

    Parameters:
        cfg: ScenarioConfig
        fis: FISConfig estimating the risk
        retrieval: RetrievalConfig of the depth-based retrieval
        thresholds: MatchThresholds for the alignment
        monitor: optional RiskMonitor to reuse instead of building one
    """
    validate_scenario(cfg)
    if monitor is None:
        monitor = perceptionmonitor.RiskMonitor(
            mean_map(), fis=fis, retrieval=retrieval, thresholds=thresholds)
    rng = np.random.default_rng(cfg.seed)
    state = initial_state(cfg)
    min_gap = cfg.obstacle_distance0
    stop_time = None
    trace = []

    for _ in range(cfg.horizon):
        depth_map, predictions, _ = synth_frame(state, cfg, rng)
        risk = monitor.assess(depth_map, predictions).risk
        trace.append(risk)

        latched = state.shield_active and state.ego_vel > 0
        engaged = cfg.shield_enabled and (
            latched or risk > cfg.shield_threshold)
        if engaged and not state.shield_active:
            monitor.report_shield()
        accel = shield(risk, cfg, latched) if cfg.shield_enabled else 0.0
        state = step(state._replace(risk=risk, shield_active=engaged),
                     accel, cfg)

        gap = state.obstacle_pos - state.ego_pos
        if state.collided:
            min_gap = 0.0
            break
        if gap < 0:
            # passed behind a crossing obstacle
            min_gap = 0.0
            break
        min_gap = min(min_gap, gap)
        if state.ego_vel == 0.0:
            stop_time = state.t
            break

    outcome = ScenarioOutcome(cfg.seed, state.collided, min_gap, stop_time,
                              trace)
    LOG.info('scenario seed %s: collided=%s min_gap=%.2f stop_time=%s',
             cfg.seed, outcome.collided, outcome.min_gap, outcome.stop_time)
    return outcome


def sweep(cfg, fis, retrieval, thresholds, seeds, workers=1):
    """Run one scenario per seed; outcomes follow the order of seeds."""
    configs = [cfg._replace(seed=int(seed)) for seed in seeds]
    with futures.ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(
            lambda c: run_scenario(c, fis, retrieval, thresholds), configs))
