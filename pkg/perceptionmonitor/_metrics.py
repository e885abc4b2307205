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

"""Risk-correlating metrics and the open-loop evaluation analyses.

The spatial coverage score of a prediction P for a ground truth G is
IoG(P, G) * DR(d_P, d_G). Frames average it over all ground truths and
the deficit from the full mark is the regression target of the fuzzy
system.
"""

import collections

import numpy as np
from oslo_log import log as logging
from scipy import stats

from perceptionmonitor import _alignment
from perceptionmonitor._exceptions import MonitorError

LOG = logging.getLogger(__name__)

UscScore = collections.namedtuple('UscScore',
                                  ['per_gt', 'mean_usc', 'target'])
RecallReport = collections.namedtuple(
    'RecallReport',
    ['condition', 'frames', 'gt_count', 'retrieved_by_s', 'retrieved_by_p',
     'approved_tp', 'identified_fn'])

# The objects of one frame: retrieved (S), predicted (P) and annotated (G).
FrameObjects = collections.namedtuple(
    'FrameObjects',
    ['frame_id', 'condition', 'retrieved', 'predictions', 'ground_truths'])


def usc_pair(p, g):
    """Spatial coverage of ground truth g by prediction p."""
    return _alignment.iog(p, g) * _alignment.dr(p.d, g.d)


def usc_frame(preds, gts, thresholds):
    """Average coverage of all ground truths in one frame.

    Ground truths without a prediction passing the matching thresholds
    score 0. A frame without ground truths scores a full mark.
    """
    preds = list(preds)
    gts = list(gts)
    if not gts:
        return UscScore([], 1.0, 0.0)

    pairs, _, _ = _alignment.match(preds, gts, thresholds)
    scores = [0.0] * len(gts)
    for pair in pairs:
        scores[pair.ref] = usc_pair(preds[pair.pred], gts[pair.ref])
    mean = sum(scores) / len(gts)
    return UscScore(list(enumerate(scores)), mean, 1.0 - mean)


def pearson(xs, ys):
    """Sample Pearson correlation coefficient of two series."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape:
        raise MonitorError('series lengths differ: %d vs %d'
                           % (xs.size, ys.size))
    if xs.size < 2:
        raise MonitorError('correlation needs at least two samples')
    if np.ptp(xs) == 0 or np.ptp(ys) == 0:
        raise MonitorError('correlation of a constant series is undefined')
    r, _ = stats.pearsonr(xs, ys)
    return float(min(1.0, max(-1.0, r)))


def rmse(est, tgt):
    """Root mean squared error between estimates and targets."""
    est = np.asarray(est, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    if est.shape != tgt.shape:
        raise MonitorError('series lengths differ: %d vs %d'
                           % (est.size, tgt.size))
    if est.size == 0:
        raise MonitorError('rmse of empty series')
    return float(np.sqrt(np.mean((est - tgt) ** 2)))


def _measure_series(frames, thresholds):
    s_iou, s_rdd, g_iou, g_rdd = [], [], [], []
    for frame in frames:
        by_s = _alignment.align_frame(frame.predictions, frame.retrieved,
                                      thresholds)
        by_g = _alignment.align_frame(frame.predictions, frame.ground_truths,
                                      thresholds)
        s_iou.append(by_s.mean_iou)
        s_rdd.append(by_s.mean_rdd)
        g_iou.append(by_g.mean_iou)
        g_rdd.append(by_g.mean_rdd)
    return s_iou, s_rdd, g_iou, g_rdd


def correlation_experiment(frames, thresholds):
    """Correlate alignment measures against S with those against G.

    One sample per frame. Returns (r_iou, r_rdd).
    """
    frames = list(frames)
    s_iou, s_rdd, g_iou, g_rdd = _measure_series(frames, thresholds)
    result = (pearson(s_iou, g_iou), pearson(s_rdd, g_rdd))
    LOG.info('correlation over %d frames at (%.2f, %.2f): iou=%.3f '
             'rdd=%.3f', len(frames), thresholds.alpha, thresholds.beta,
             result[0], result[1])
    return result


def _group_by_condition(frames):
    groups = collections.OrderedDict()
    for frame in frames:
        if not frame.condition:
            raise MonitorError('frame %s has no condition label'
                               % frame.frame_id)
        groups.setdefault(frame.condition, []).append(frame)
    return groups


def correlation_by_condition(frames, thresholds):
    """Run the correlation experiment separately for every condition.

    Returns an ordered mapping condition -> (r_iou, r_rdd).
    """
    return collections.OrderedDict(
        (condition, correlation_experiment(group, thresholds))
        for condition, group in _group_by_condition(frames).items())


def _matched_gts(objects, gts, thresholds):
    pairs, _, _ = _alignment.match(objects, gts, thresholds)
    return {pair.ref for pair in pairs}


def recall_analysis(frames, t_strict, t_loose):
    """Recall of ground truths by S and P plus the TP/FN breakdown.

    The detector is evaluated against the ground truths with the loose
    thresholds to mark true positives and false negatives; the report then
    counts how many of each are recovered by the retrieved objects.
    Returns one RecallReport per condition, in order of appearance.
    """
    reports = []
    for condition, group in _group_by_condition(frames).items():
        gt_count = 0
        by_s = [0, 0]
        by_p = [0, 0]
        tp = [0, 0]
        fn = [0, 0]
        for frame in group:
            gts = list(frame.ground_truths)
            gt_count += len(gts)
            for i, thresholds in enumerate((t_strict, t_loose)):
                by_s[i] += len(_matched_gts(frame.retrieved, gts, thresholds))
                by_p[i] += len(_matched_gts(frame.predictions, gts,
                                            thresholds))

            detected = _matched_gts(frame.predictions, gts, t_loose)
            retrieved = _matched_gts(frame.retrieved, gts, t_loose)
            for idx in range(len(gts)):
                bucket = tp if idx in detected else fn
                bucket[1] += 1
                if idx in retrieved:
                    bucket[0] += 1

        def ratio(count):
            return count / gt_count if gt_count else 0.0

        reports.append(RecallReport(
            condition, len(group), gt_count,
            (ratio(by_s[0]), ratio(by_s[1])),
            (ratio(by_p[0]), ratio(by_p[1])),
            tuple(tp), tuple(fn)))
    return reports
