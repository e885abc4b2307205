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

"""Frame records (JSON-Lines) and the CSV reports."""

import collections
import csv
import os

from oslo_log import log as logging
from oslo_serialization import jsonutils

from perceptionmonitor import _alignment
from perceptionmonitor._depth import Object25D
from perceptionmonitor._exceptions import DatasetError
from perceptionmonitor._exceptions import FormatError
from perceptionmonitor import _tuning

LOG = logging.getLogger(__name__)

FrameRecord = collections.namedtuple(
    'FrameRecord',
    ['frame_id', 'condition', 'depth_map', 'camera', 'predictions',
     'ground_truths', 'base_dir'])

REQUIRED_FIELDS = ('frame_id', 'condition', 'depth_map', 'camera',
                   'predictions', 'ground_truths')
CAMERA_FIELDS = ('fx', 'fy', 'cx', 'cy', 'width', 'height')
SAMPLE_HEADER = ('frame_id', 'condition', 'mean_iou', 'mean_rdd', 'target')
MONITOR_HEADER = ('frame_id', 'condition', 'mean_iou', 'mean_rdd', 'risk')
OUTCOME_HEADER = ('seed', 'collided', 'min_gap', 'stop_time')


def depth_map_path(record):
    """Absolute location of a record's depth map."""
    return os.path.join(record.base_dir, record.depth_map)


def _parse_camera(doc):
    missing = [k for k in CAMERA_FIELDS if k not in doc]
    if missing:
        raise ValueError('camera lacks %s' % ', '.join(missing))
    cam = _alignment.CameraModel(float(doc['fx']), float(doc['fy']),
                                 float(doc['cx']), float(doc['cy']),
                                 int(doc['width']), int(doc['height']))
    if cam.fx <= 0 or cam.fy <= 0:
        raise ValueError('focal lengths must be positive')
    if not (0 <= cam.cx0 <= cam.image_width
            and 0 <= cam.cy0 <= cam.image_height):
        raise ValueError('principal point lies outside the image')
    return cam


def _parse_object(doc):
    if 'center' in doc:
        center = tuple(float(v) for v in doc['center'])
        size = tuple(float(v) for v in doc['size'])
        if len(center) != 3 or len(size) != 3:
            raise ValueError('3D boxes need 3 center and 3 size values')
        if min(size) <= 0:
            raise ValueError('3D box size must be positive')
        score = doc.get('score')
        return _alignment.Box3D(center, size, float(doc.get('yaw', 0.0)),
                                None if score is None else float(score))
    obj = Object25D(*[float(doc[k]) for k in Object25D._fields])
    if obj.w <= 0 or obj.h <= 0 or obj.d <= 0:
        raise ValueError('2.5D objects need positive w, h and d')
    return obj


def _parse_objects(field, items):
    if not isinstance(items, list):
        raise ValueError('"%s" must be a list' % field)
    objects = [_parse_object(item) for item in items]
    if len({type(o) for o in objects}) > 1:
        raise ValueError('"%s" mixes 3D boxes and 2.5D objects' % field)
    return objects


def parse_record(doc, base_dir):
    """Validate one decoded frame document."""
    if not isinstance(doc, dict):
        raise ValueError('frame must be a JSON object')
    for field in REQUIRED_FIELDS:
        if field not in doc:
            raise ValueError('missing field "%s"' % field)
    try:
        camera = _parse_camera(doc['camera'])
    except (TypeError, KeyError) as err:
        raise ValueError('malformed camera: %s' % err)
    try:
        predictions = _parse_objects('predictions', doc['predictions'])
        truths = _parse_objects('ground_truths', doc['ground_truths'])
    except (TypeError, KeyError) as err:
        raise ValueError('malformed object: missing %s' % err)
    record = FrameRecord(str(doc['frame_id']), str(doc['condition']),
                         str(doc['depth_map']), camera, predictions, truths,
                         base_dir)
    if not os.path.isfile(depth_map_path(record)):
        raise ValueError('depth map %s does not exist'
                         % depth_map_path(record))
    return record


def load_dataset(path):
    """Read and validate a JSON-Lines frame dataset.

    Depth map paths are resolved relative to the dataset's directory.
    Blank lines are ignored.
    """
    base_dir = os.path.dirname(os.path.abspath(path))
    records = []
    try:
        f = open(path, 'r')
    except (IOError, OSError) as err:
        raise DatasetError('cannot read dataset: %s' % err, path=path)
    with f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(parse_record(jsonutils.loads(line), base_dir))
            except ValueError as err:
                raise DatasetError(str(err), path=path, line=lineno)
    LOG.info('loaded %d frames from %s', len(records), path)
    return records


def _object_to_dict(obj):
    if isinstance(obj, Object25D):
        return dict(obj._asdict())
    doc = {'center': list(obj.center), 'size': list(obj.size),
           'yaw': obj.yaw}
    if obj.score is not None:
        doc['score'] = obj.score
    return doc


def record_to_dict(record):
    """JSON document of a frame record, the inverse of parse_record."""
    cam = record.camera
    return {
        'frame_id': record.frame_id,
        'condition': record.condition,
        'depth_map': record.depth_map,
        'camera': {'fx': cam.fx, 'fy': cam.fy, 'cx': cam.cx0,
                   'cy': cam.cy0, 'width': cam.image_width,
                   'height': cam.image_height},
        'predictions': [_object_to_dict(o) for o in record.predictions],
        'ground_truths': [_object_to_dict(o) for o in record.ground_truths],
    }


def write_jsonl(docs, path):
    with open(path, 'w') as f:
        for doc in docs:
            f.write(jsonutils.dumps(doc, sort_keys=True))
            f.write('\n')


def write_json(doc, path):
    with open(path, 'w') as f:
        f.write(jsonutils.dumps(doc, sort_keys=True, indent=2))
        f.write('\n')


def _cell(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return '%.10g' % value
    if value is None:
        return ''
    return str(value)


def write_csv(path, header, rows):
    """Write a CSV report with '\\n' line endings."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def write_samples(samples, path):
    write_csv(path, SAMPLE_HEADER,
              ([s.frame_id, s.condition, float(s.mean_iou),
                float(s.mean_rdd), float(s.target)] for s in samples))


def read_samples(path):
    """Read training samples written by write_samples."""
    try:
        f = open(path, 'r', newline='')
    except (IOError, OSError) as err:
        raise FormatError('cannot read samples %s: %s' % (path, err))
    samples = []
    with f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != SAMPLE_HEADER:
            raise FormatError('%s: expected header %s'
                              % (path, ','.join(SAMPLE_HEADER)))
        for lineno, row in enumerate(reader, 2):
            try:
                frame_id, condition, iou, rdd, target = row
                sample = _tuning.TrainingSample(frame_id, condition,
                                                float(iou), float(rdd),
                                                float(target))
            except ValueError as err:
                raise FormatError('%s:%d: %s' % (path, lineno, err))
            if not (0 <= sample.mean_iou <= 1 and -1 <= sample.mean_rdd <= 1
                    and 0 <= sample.target <= 1):
                raise FormatError('%s:%d: sample values out of range'
                                  % (path, lineno))
            samples.append(sample)
    return samples
