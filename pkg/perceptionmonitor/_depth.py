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

"""Depth map preprocessing and retrieval of safety-critical 2.5D objects.

The retrieval pipeline inverts a metric depth map, subtracts the mean
inverse map of the training data (the static driving perspective),
normalizes the result to an intensity image and then runs a Canny edge
detector followed by contour linking. Overlapping contours are merged and
each yields an axis-aligned box whose depth is the smallest metric depth
inside it.
"""

import collections
import struct

import numpy as np
from oslo_log import log as logging
from scipy import ndimage

from perceptionmonitor._exceptions import FormatError

LOG = logging.getLogger(__name__)

DepthMap = collections.namedtuple('DepthMap', ['width', 'height', 'data'])
IntensityImage = collections.namedtuple('IntensityImage',
                                        ['width', 'height', 'data'])
EdgeMask = collections.namedtuple('EdgeMask', ['width', 'height', 'data'])

Object25D = collections.namedtuple('Object25D', ['cx', 'cy', 'w', 'h', 'd'])

RetrievalConfig = collections.namedtuple(
    'RetrievalConfig',
    ['canny_low', 'canny_high', 'min_box_area', 'max_depth', 'blur_radius',
     'epsilon'],
    defaults=(20.0, 60.0, 64, 20.0, 2, 1e-3))

DM01_MAGIC = b'DM01'
_HEADER = struct.Struct('<4sII')

# 8-connectivity for hysteresis and contour linking
_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)

# salience (1/m) below this is treated as background
SALIENCE_FLOOR = 1e-4


def make_depth_map(data, metric=True):
    """Wrap a 2-D array as a DepthMap after validating its values.

    Parameters:
        data: array-like of shape (height, width)
        metric: True for metric maps (values > 0), False for inverse or
                salience maps (values >= 0)
    """
    arr = np.array(data, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise FormatError('depth raster must be a non-empty 2-D array, '
                          'got shape %s' % (arr.shape,))
    if not np.all(np.isfinite(arr)):
        raise FormatError('depth raster contains non-finite values')
    if metric and not np.all(arr > 0):
        raise FormatError('metric depth raster contains non-positive values')
    if not metric and not np.all(arr >= 0):
        raise FormatError('inverse depth raster contains negative values')
    return DepthMap(arr.shape[1], arr.shape[0], arr)


def validate_retrieval_config(cfg):
    """Check the RetrievalConfig invariants, raising FormatError."""
    if not 0 < cfg.canny_low < cfg.canny_high:
        raise FormatError('retrieval thresholds need 0 < canny_low < '
                          'canny_high, got %s/%s'
                          % (cfg.canny_low, cfg.canny_high))
    if cfg.min_box_area < 1:
        raise FormatError('min_box_area must be >= 1')
    if cfg.max_depth <= 0:
        raise FormatError('max_depth must be positive')
    if cfg.blur_radius < 0 or cfg.epsilon < 0:
        raise FormatError('blur_radius and epsilon must be non-negative')
    return cfg


def load_depth_map(path, metric=True):
    """Read a DM01 raster file.

    Parameters:
        path: file to read
        metric: whether the raster holds meters (strictly positive) or
                inverse/mean values (non-negative)
    """
    try:
        with open(path, 'rb') as f:
            blob = f.read()
    except (IOError, OSError) as err:
        raise FormatError('cannot read depth map %s: %s' % (path, err))

    if len(blob) < _HEADER.size:
        raise FormatError('%s: truncated DM01 header' % path)
    magic, width, height = _HEADER.unpack_from(blob)
    if magic != DM01_MAGIC:
        raise FormatError('%s: bad magic %r (expected DM01)' % (path, magic))
    expected = width * height * 4
    payload = blob[_HEADER.size:]
    if width == 0 or height == 0 or len(payload) != expected:
        raise FormatError('%s: payload of %d bytes does not match %dx%d'
                          % (path, len(payload), width, height))

    data = np.frombuffer(payload, dtype='<f4').reshape(height, width)
    try:
        return make_depth_map(data.astype(np.float64), metric=metric)
    except FormatError as err:
        raise FormatError('%s: %s' % (path, err))


def save_depth_map(depth_map, path):
    """Write a DepthMap as a DM01 raster (float32, little endian)."""
    header = _HEADER.pack(DM01_MAGIC, depth_map.width, depth_map.height)
    with open(path, 'wb') as f:
        f.write(header)
        f.write(np.ascontiguousarray(depth_map.data, dtype='<f4').tobytes())


def invert(depth_map, epsilon=1e-3):
    """Return the pointwise inverse 1 / max(D, epsilon)."""
    data = 1.0 / np.maximum(depth_map.data, max(epsilon, np.finfo(float).tiny))
    return DepthMap(depth_map.width, depth_map.height, data)


def normalize(depth_map):
    """Map a raster linearly onto the intensity range [0, 255].

    A constant raster maps to an all-zero image.
    """
    data = depth_map.data
    lo = data.min()
    hi = data.max()
    if hi > lo:
        out = (data - lo) * (255.0 / (hi - lo))
    else:
        out = np.zeros_like(data)
    return IntensityImage(depth_map.width, depth_map.height, out)


def _check_same_shape(a, b):
    if (a.width, a.height) != (b.width, b.height):
        raise FormatError('raster dimensions differ: %dx%d vs %dx%d'
                          % (a.width, a.height, b.width, b.height))


def mean_inverse_map(maps):
    """Pointwise mean of already inverted depth maps."""
    maps = list(maps)
    if not maps:
        raise FormatError('cannot average an empty collection of maps')
    for m in maps[1:]:
        _check_same_shape(maps[0], m)
    data = np.mean(np.stack([m.data for m in maps]), axis=0)
    return DepthMap(maps[0].width, maps[0].height, data)


def build_mean_map(raw_maps, epsilon=1e-3):
    """Invert metric maps and average them into the mean inverse map."""
    return mean_inverse_map(invert(m, epsilon) for m in raw_maps)


def subtract_foreground(inv, mean):
    """Subtract the mean inverse map, clamping the result at zero."""
    _check_same_shape(inv, mean)
    data = np.maximum(inv.data - mean.data, 0.0)
    return DepthMap(inv.width, inv.height, data)


def _non_maximum_suppression(magnitude, gx, gy):
    """Thin gradient ridges to one pixel along the gradient direction."""
    height, width = magnitude.shape
    padded = np.pad(magnitude, 1, mode='constant')

    def shifted(dy, dx):
        return padded[1 + dy:1 + dy + height, 1 + dx:1 + dx + width]

    # gradient angle in array coordinates (x = column, y = row)
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    horizontal = (angle < 22.5) | (angle >= 157.5)
    diagonal = (angle >= 22.5) & (angle < 67.5)
    vertical = (angle >= 67.5) & (angle < 112.5)

    ahead = np.where(horizontal, shifted(0, 1),
                     np.where(diagonal, shifted(1, 1),
                              np.where(vertical, shifted(1, 0),
                                       shifted(1, -1))))
    behind = np.where(horizontal, shifted(0, -1),
                      np.where(diagonal, shifted(-1, -1),
                               np.where(vertical, shifted(-1, 0),
                                        shifted(-1, 1))))

    # on a plateau only the first pixel along the gradient axis survives
    keep = (magnitude > 0) & (magnitude >= ahead) & (magnitude > behind)
    return np.where(keep, magnitude, 0.0)


def canny_edges(img, cfg):
    """Run the Canny edge detector on an intensity image.

    Gaussian blur (sigma = blur_radius / 2, kernel radius = blur_radius),
    Sobel gradients, non-maximum suppression and double-threshold
    hysteresis. Thresholds apply to the raw Sobel magnitude of the [0, 255]
    intensity scale.
    """
    if img.width < 3 or img.height < 3:
        raise FormatError('image too small for edge detection: %dx%d'
                          % (img.width, img.height))

    smoothed = np.asarray(img.data, dtype=np.float64)
    if cfg.blur_radius > 0:
        smoothed = ndimage.gaussian_filter(smoothed,
                                           sigma=cfg.blur_radius / 2.0,
                                           truncate=2.0)
    gx = ndimage.sobel(smoothed, axis=1)
    gy = ndimage.sobel(smoothed, axis=0)
    suppressed = _non_maximum_suppression(np.hypot(gx, gy), gx, gy)

    strong = suppressed >= cfg.canny_high
    candidates = suppressed >= cfg.canny_low
    labels, _ = ndimage.label(candidates, structure=_EIGHT_CONNECTED)
    keep = np.unique(labels[strong])
    mask = np.isin(labels, keep[keep > 0])
    return EdgeMask(img.width, img.height, mask)


def trace_contours(mask):
    """Link edge pixels into 8-connected chains.

    Returns a list of (k, 2) integer arrays of (row, column) pixels in
    raster order; chains are ordered by their first pixel.
    """
    data = np.asarray(mask.data, dtype=bool)
    if not data.any():
        return []
    labels, count = ndimage.label(data, structure=_EIGHT_CONNECTED)
    pixels = np.argwhere(data)
    owners = labels[data]
    order = np.argsort(owners, kind='stable')
    bounds = np.searchsorted(owners[order], np.arange(1, count + 1))
    return np.split(pixels[order], bounds[1:])


def _chain_extent(chain):
    rows = chain[:, 0]
    cols = chain[:, 1]
    return (int(rows.min()), int(cols.min()), int(rows.max()),
            int(cols.max()))


def merge_extents(extents):
    """Merge overlapping inclusive (y0, x0, y1, x1) extents into unions.

    Merging repeats until no two extents share a pixel. The result is
    sorted by (y0, x0).
    """
    merged = [tuple(e) for e in extents]
    changed = True
    while changed:
        changed = False
        out = []
        for ext in merged:
            for i, other in enumerate(out):
                if (ext[0] <= other[2] and other[0] <= ext[2] and
                        ext[1] <= other[3] and other[1] <= ext[3]):
                    out[i] = (min(ext[0], other[0]), min(ext[1], other[1]),
                              max(ext[2], other[2]), max(ext[3], other[3]))
                    changed = True
                    break
            else:
                out.append(ext)
        merged = out
    return sorted(merged)


def _box_from_extent(extent, depth, cfg):
    y0, x0, y1, x1 = extent
    w = x1 - x0 + 1
    h = y1 - y0 + 1
    if w * h < cfg.min_box_area:
        return None
    d = float(depth.data[y0:y1 + 1, x0:x1 + 1].min())
    if d > cfg.max_depth:
        return None
    return Object25D((x0 + x1) / 2.0, (y0 + y1) / 2.0, float(w), float(h), d)


def fit_boxes(chains, depth, cfg):
    """Fit tight axis-aligned boxes to chains and attach their depth.

    Parameters:
        chains: pixel chains from trace_contours
        depth: the original metric depth map
        cfg: RetrievalConfig (min_box_area and max_depth filters)
    """
    boxes = (_box_from_extent(_chain_extent(c), depth, cfg) for c in chains)
    return [box for box in boxes if box is not None]


def retrieve_safety_critical(raw, mean_inv, cfg):
    """Retrieve the safety-critical objects of one depth map.

    Salience under SALIENCE_FLOOR counts as background. Edges are detected
    on the salience padded with a zero border, so objects cut by the image
    border get closed contours; chains are clipped back to the image.
    Contours whose extents overlap yield a single box.
    """
    salience = subtract_foreground(invert(raw, cfg.epsilon), mean_inv)
    pad = int(cfg.blur_radius) + 2
    data = np.where(salience.data >= SALIENCE_FLOOR, salience.data, 0.0)
    data = np.pad(data, pad, mode='constant')
    padded = DepthMap(data.shape[1], data.shape[0], data)

    chains = trace_contours(canny_edges(normalize(padded), cfg))
    limits = np.array([raw.height - 1, raw.width - 1])
    extents = [_chain_extent(np.clip(c - pad, 0, limits)) for c in chains]
    boxes = (_box_from_extent(e, raw, cfg) for e in merge_extents(extents))
    objects = [box for box in boxes if box is not None]
    LOG.debug('retrieved %d objects from %d contours', len(objects),
              len(chains))
    return objects
