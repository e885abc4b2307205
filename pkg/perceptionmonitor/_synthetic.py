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

"""Seeded generators of synthetic depth scenes and object sets.

Scenes are a row-wise ground ramp, far at the top and near at the bottom,
with upright rectangles of constant depth standing a few rows above the
ground row of equal depth. The ramp alone is the object-free background,
so the mean inverse map of a scene family is known exactly.
"""

import collections
import os

import numpy as np
from oslo_log import log as logging

from perceptionmonitor import _alignment
from perceptionmonitor import _depth
from perceptionmonitor._depth import Object25D
from perceptionmonitor import _metrics

LOG = logging.getLogger(__name__)

Scene = collections.namedtuple('Scene', ['depth_map', 'objects'])
ConditionProfile = collections.namedtuple(
    'ConditionProfile', ['miss_prob', 'depth_noise', 'retrieval_jitter'])

NEAR = 5.0
FAR = 80.0
WIDTH = 160
HEIGHT = 120
# rows between a rectangle's bottom edge and the ground row of its depth
CLEARANCE = 4
MIN_SIDE = 16
MAX_SIDE = 28
MIN_SPACING = 10

CAMERA = _alignment.CameraModel(160.0, 160.0, 80.0, 60.0, WIDTH, HEIGHT)

CONDITIONS = collections.OrderedDict([
    ('nominal', ConditionProfile(0.05, 0.03, 0.0)),
    ('rare', ConditionProfile(0.3, 0.05, 0.02)),
    ('noise', ConditionProfile(0.35, 0.08, 0.05)),
    ('rain', ConditionProfile(0.3, 0.06, 0.08)),
    ('snow', ConditionProfile(0.4, 0.08, 0.1)),
    ('night', ConditionProfile(0.45, 0.1, 0.12)),
])


def ground_ramp(width=WIDTH, height=HEIGHT, near=NEAR, far=FAR):
    """Object-free background: depth falls linearly from far to near."""
    rows = far - (far - near) * np.arange(height) / (height - 1.0)
    return np.repeat(rows[:, None], width, axis=1)


def mean_map(width=WIDTH, height=HEIGHT):
    """Mean inverse map of the object-free scene family."""
    return _depth.invert(_depth.make_depth_map(ground_ramp(width, height)))


def contact_row(d, height=HEIGHT, near=NEAR, far=FAR):
    """Row at which the ground ramp reaches depth d."""
    return (far - d) * (height - 1.0) / (far - near)


def make_scene(rng, depths, width=WIDTH, height=HEIGHT, rendered=None):
    """Render one rectangle per depth onto the ground ramp.

    Rectangles are placed left to right with MIN_SPACING free columns
    between them. Returns the scene and the true 2.5D objects, in
    placement order. rendered optionally gives the depth actually drawn
    for each rectangle.
    """
    data = ground_ramp(width, height)
    rendered = list(depths) if rendered is None else list(rendered)
    sizes = [(int(rng.integers(MIN_SIDE, MAX_SIDE + 1)),
              int(rng.integers(MIN_SIDE, MAX_SIDE + 1))) for _ in depths]
    slack = width - 2 - sum(w for w, _ in sizes) - MIN_SPACING * (
        len(sizes) - 1)
    if slack < 0:
        raise ValueError('too many rectangles for a %d pixel wide scene'
                         % width)

    x = 1 + int(rng.integers(0, slack // max(len(sizes), 1) + 1))
    objects = []
    for d, d_drawn, (w, h) in zip(depths, rendered, sizes):
        bottom = int(np.floor(contact_row(d, height))) - CLEARANCE
        top = bottom - h + 1
        data[top:bottom + 1, x:x + w] = d_drawn
        objects.append(Object25D(x + (w - 1) / 2.0, top + (h - 1) / 2.0,
                                 float(w), float(h), float(d)))
        x += w + MIN_SPACING + int(rng.integers(0, slack // max(
            len(sizes), 1) + 1))
    return Scene(_depth.make_depth_map(data), objects)


def random_scene(rng, max_objects=2, min_depth=6.0, max_depth=18.0):
    count = int(rng.integers(1, max_objects + 1))
    depths = rng.uniform(min_depth, max_depth, size=count)
    return make_scene(rng, [float(d) for d in depths])


def _jitter(rng, obj, box_sigma, depth_sigma):
    d = obj.d * (1.0 + rng.normal(0.0, depth_sigma)) if depth_sigma else obj.d
    if box_sigma:
        return Object25D(obj.cx + rng.normal(0.0, box_sigma) * obj.w,
                         obj.cy + rng.normal(0.0, box_sigma) * obj.h,
                         obj.w * max(0.1, 1.0 + rng.normal(0.0, box_sigma)),
                         obj.h * max(0.1, 1.0 + rng.normal(0.0, box_sigma)),
                         max(d, 0.1))
    return obj._replace(d=max(d, 0.1))


def perturbation_frames(rng, count, noise, condition='nominal'):
    """Frames whose retrieved objects are the ground truths plus noise.

    Every frame holds 1 to 4 ground truths in separated slots at 5 to 20 m.
    The detector sees each one with a per-frame probability drawn from
    U(0.3, 1) and perturbs its depth by 5% and its box by 2%. The
    retrieved set perturbs depths by the relative noise and boxes by half
    of it.
    """
    frames = []
    for idx in range(count):
        gts = []
        for slot in range(int(rng.integers(1, 5))):
            w = rng.uniform(40.0, 120.0)
            h = rng.uniform(40.0, 120.0)
            gts.append(Object25D(200.0 + 300.0 * slot, 450.0, w, h,
                                 rng.uniform(5.0, 20.0)))
        quality = rng.uniform(0.3, 1.0)
        preds = [_jitter(rng, g, 0.02, 0.05) for g in gts
                 if rng.random() < quality]
        retrieved = [_jitter(rng, g, noise / 2.0, noise) for g in gts]
        frames.append(_metrics.FrameObjects('%s-%05d' % (condition, idx),
                                            condition, retrieved, preds,
                                            gts))
    return frames


def _object_dict(obj):
    return {'cx': obj.cx, 'cy': obj.cy, 'w': obj.w, 'h': obj.h, 'd': obj.d}


def write_corpus(output_dir, frames_per_condition, seed):
    """Write a demo corpus: depth maps, the mean map and frames.jsonl.

    Returns the frame records as dictionaries, in file order.
    """
    rng = np.random.default_rng(seed)
    maps_dir = os.path.join(output_dir, 'depth')
    os.makedirs(maps_dir, exist_ok=True)
    _depth.save_depth_map(mean_map(), os.path.join(output_dir, 'mean.dm01'))

    camera = {'fx': CAMERA.fx, 'fy': CAMERA.fy, 'cx': CAMERA.cx0,
              'cy': CAMERA.cy0, 'width': CAMERA.image_width,
              'height': CAMERA.image_height}
    records = []
    for condition, profile in CONDITIONS.items():
        for idx in range(frames_per_condition):
            count = int(rng.integers(1, 3))
            depths = [float(d) for d in rng.uniform(6.0, 18.0, size=count)]
            drawn = [d * (1.0 + rng.normal(0.0, profile.retrieval_jitter))
                     for d in depths]
            scene = make_scene(rng, depths,
                               rendered=[max(d, NEAR) for d in drawn])
            preds = [_jitter(rng, g, 0.02, profile.depth_noise)
                     for g in scene.objects
                     if rng.random() >= profile.miss_prob]
            frame_id = '%s-%04d' % (condition, idx)
            name = '%s.dm01' % frame_id
            _depth.save_depth_map(scene.depth_map,
                                  os.path.join(maps_dir, name))
            records.append({
                'frame_id': frame_id,
                'condition': condition,
                'depth_map': os.path.join('depth', name),
                'camera': dict(camera),
                'predictions': [_object_dict(p) for p in preds],
                'ground_truths': [_object_dict(g) for g in scene.objects],
            })
    LOG.info('generated %d synthetic frames in %s', len(records), output_dir)
    return records
