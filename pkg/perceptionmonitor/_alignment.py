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

"""Geometry primitives and frame-level alignment of two object sets."""

import collections
import math

import numpy as np
from oslo_log import log as logging
from scipy.optimize import linear_sum_assignment

from perceptionmonitor._depth import Object25D
from perceptionmonitor._exceptions import GeometryError

LOG = logging.getLogger(__name__)

Box3D = collections.namedtuple('Box3D', ['center', 'size', 'yaw', 'score'],
                               defaults=(0.0, None))
CameraModel = collections.namedtuple(
    'CameraModel', ['fx', 'fy', 'cx0', 'cy0', 'image_width', 'image_height'])
MatchThresholds = collections.namedtuple('MatchThresholds',
                                         ['alpha', 'beta'],
                                         defaults=(0.3, 0.2))
MatchedPair = collections.namedtuple('MatchedPair',
                                     ['pred', 'ref', 'iou', 'rdd'])
AlignmentResult = collections.namedtuple(
    'AlignmentResult',
    ['pairs', 'unmatched_refs', 'unmatched_preds', 'mean_iou', 'mean_rdd'])

# corners closer than this are not projected
Z_NEAR = 0.1

# worst scores of an unmatched reference
WORST_IOU = 0.0
WORST_RDD = 1.0


def _extent(box):
    return (box.cx - box.w / 2.0, box.cy - box.h / 2.0,
            box.cx + box.w / 2.0, box.cy + box.h / 2.0)


def _intersection(a, b):
    ax0, ay0, ax1, ay1 = _extent(a)
    bx0, by0, bx1, by1 = _extent(b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a, b):
    """Intersection over union of the image-plane boxes of two objects."""
    inter = _intersection(a, b)
    union = a.w * a.h + b.w * b.h - inter
    if union <= 0:
        return 0.0
    return inter / union


def iog(p, g):
    """Intersection of p and g over the area of g."""
    return _intersection(p, g) / (g.w * g.h)


def rdd(d_p, d_s):
    """Relative depth discrepancy, clamped to [-1, 1]."""
    return max(-1.0, min(1.0, (d_p - d_s) / d_s))


def dr(d_p, d_g):
    """Distance ratio min(1, d_g / d_p)."""
    return min(1.0, d_g / d_p)


def _rotation(yaw):
    c = math.cos(yaw)
    s = math.sin(yaw)
    # rotation about the camera's vertical (y) axis
    return np.array([[c, 0.0, s],
                     [0.0, 1.0, 0.0],
                     [-s, 0.0, c]])


def box_corners(box):
    """Return the 8 corners (8, 3) of a 3D box in camera coordinates.

    Length runs along the local x axis, height along y and width along z.
    """
    length, width, height = box.size
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1)
                      for sz in (-1, 1)], dtype=np.float64)
    local = signs * np.array([length, height, width]) / 2.0
    return local.dot(_rotation(box.yaw).T) + np.asarray(box.center, float)


def closest_distance(box):
    """Euclidean distance from the camera origin to the closest box point."""
    length, width, height = box.size
    half = np.array([length, height, width]) / 2.0
    # origin expressed in the box frame
    local = _rotation(box.yaw).T.dot(-np.asarray(box.center, float))
    nearest = np.clip(local, -half, half)
    return float(np.linalg.norm(local - nearest))


def project_box3d(box, cam):
    """Project a 3D box to a 2.5D object.

    Raises GeometryError when the box lies entirely behind the camera or
    outside the image.
    """
    if min(box.size) <= 0:
        raise GeometryError('3D box has non-positive size %s'
                            % (tuple(box.size),))
    corners = box_corners(box)
    visible = corners[corners[:, 2] > Z_NEAR]
    if not len(visible):
        raise GeometryError('3D box at %s lies behind the camera'
                            % (tuple(box.center),))

    u = cam.fx * visible[:, 0] / visible[:, 2] + cam.cx0
    v = cam.fy * visible[:, 1] / visible[:, 2] + cam.cy0
    x0 = min(max(u.min(), 0.0), cam.image_width)
    x1 = min(max(u.max(), 0.0), cam.image_width)
    y0 = min(max(v.min(), 0.0), cam.image_height)
    y1 = min(max(v.max(), 0.0), cam.image_height)
    if x1 <= x0 or y1 <= y0:
        raise GeometryError('3D box at %s projects outside the image'
                            % (tuple(box.center),))

    d = max(closest_distance(box), Z_NEAR)
    return Object25D((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0, d)


def center_distances(preds, refs):
    """Matrix of Euclidean distances between box centers (pixels)."""
    p = np.array([[o.cx, o.cy] for o in preds], dtype=np.float64)
    r = np.array([[o.cx, o.cy] for o in refs], dtype=np.float64)
    return np.hypot(p[:, None, 0] - r[None, :, 0],
                    p[:, None, 1] - r[None, :, 1])


def hungarian(cost):
    """Minimum-cost assignment of min(n, m) rows and columns.

    Returns a list of (row, column) tuples ordered by row.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return []
    rows, cols = linear_sum_assignment(cost)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def match(preds, refs, thresholds):
    """Pair predictions with references and apply the matching thresholds.

    Returns (pairs, unmatched_refs, unmatched_preds) where pairs are
    MatchedPair tuples ordered by reference index.
    """
    preds = list(preds)
    refs = list(refs)
    pairs = []
    if preds and refs:
        for p_idx, r_idx in hungarian(center_distances(preds, refs)):
            score = iou(preds[p_idx], refs[r_idx])
            discrepancy = rdd(preds[p_idx].d, refs[r_idx].d)
            if score > thresholds.alpha and abs(discrepancy) < thresholds.beta:
                pairs.append(MatchedPair(p_idx, r_idx, score, discrepancy))
    pairs.sort(key=lambda pair: pair.ref)
    matched_refs = {pair.ref for pair in pairs}
    matched_preds = {pair.pred for pair in pairs}
    unmatched_refs = [i for i in range(len(refs)) if i not in matched_refs]
    unmatched_preds = [i for i in range(len(preds))
                       if i not in matched_preds]
    return pairs, unmatched_refs, unmatched_preds


def align_frame(preds, refs, thresholds):
    """Measure how well predictions align with the reference objects.

    Every reference contributes the (iou, rdd) of its pair or the worst
    scores (0, 1) when unmatched. With no reference at all the frame
    scores (1, 0).
    """
    refs = list(refs)
    pairs, unmatched_refs, unmatched_preds = match(preds, refs, thresholds)
    if not refs:
        return AlignmentResult(pairs, unmatched_refs, unmatched_preds,
                               1.0, 0.0)

    total_iou = sum(pair.iou for pair in pairs) + WORST_IOU * len(
        unmatched_refs)
    total_rdd = sum(pair.rdd for pair in pairs) + WORST_RDD * len(
        unmatched_refs)
    result = AlignmentResult(pairs, unmatched_refs, unmatched_preds,
                             total_iou / len(refs), total_rdd / len(refs))
    LOG.debug('aligned %d predictions to %d references: %d pairs, '
              'iou=%.3f rdd=%.3f', len(unmatched_preds) + len(pairs),
              len(refs), len(pairs), result.mean_iou, result.mean_rdd)
    return result
