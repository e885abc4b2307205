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

"""Mamdani fuzzy inference mapping alignment measures to a collision risk.

Conjunction and implication are min, aggregation is max and the crisp
output is the centroid of the aggregated membership, sampled uniformly over
the output domain. The handcrafted system assigns high risk to high RDD
and medium or low risk otherwise, depending on the IoU.
"""

import collections
import itertools

import numpy as np
from oslo_log import log as logging
from oslo_serialization import jsonutils
import skfuzzy

from perceptionmonitor._exceptions import FISError
from perceptionmonitor._exceptions import FormatError

LOG = logging.getLogger(__name__)

MembershipFunction = collections.namedtuple('MembershipFunction',
                                            ['a', 'b', 'c', 'd'])
FuzzyTerm = collections.namedtuple('FuzzyTerm', ['name', 'mf'])
FuzzyVariable = collections.namedtuple('FuzzyVariable',
                                       ['name', 'domain', 'terms'])
FuzzyRule = collections.namedtuple('FuzzyRule',
                                   ['antecedent', 'consequent', 'provenance'],
                                   defaults=(None,))
FISConfig = collections.namedtuple(
    'FISConfig', ['inputs', 'output', 'rules', 'defuzz_resolution'],
    defaults=(1001,))

TERM_NAMES = ('low', 'medium', 'high')
LOW, MEDIUM, HIGH = range(3)

MIN_RESOLUTION = 101
# sample count of the domain coverage check
_COVERAGE_SAMPLES = 1001


def triangle(a, b, c):
    return MembershipFunction(a, b, b, c)


def default_terms(lo, hi):
    """Uniformly spread low/medium/high terms over [lo, hi]."""
    w = float(hi - lo)
    return (
        FuzzyTerm('low', MembershipFunction(lo, lo, lo + 0.2 * w,
                                            lo + 0.45 * w)),
        FuzzyTerm('medium', triangle(lo + 0.3 * w, lo + 0.5 * w,
                                     lo + 0.7 * w)),
        FuzzyTerm('high', MembershipFunction(lo + 0.55 * w, lo + 0.8 * w,
                                             hi, hi)),
    )


def _trap(x, mf):
    return skfuzzy.trapmf(np.atleast_1d(np.asarray(x, dtype=np.float64)),
                          np.array(mf, dtype=np.float64))


def membership(mf, x, domain=None):
    """Degree of membership of x in a trapezoidal membership function.

    Parameters:
        mf: MembershipFunction (a <= b <= c <= d)
        x: crisp value
        domain: optional (lo, hi); x is clamped into it first
    """
    if domain is not None:
        x = min(max(x, domain[0]), domain[1])
    return float(_trap(x, mf)[0])


# (rdd term, iou term) -> risk term, cells whose consequent is inferred
# from the tie rules are marked
_DEFAULT_RULES = (
    ((HIGH, LOW), HIGH, None),
    ((HIGH, MEDIUM), HIGH, None),
    ((HIGH, HIGH), HIGH, None),
    ((MEDIUM, HIGH), LOW, None),
    ((MEDIUM, MEDIUM), LOW, 'inferred'),
    ((MEDIUM, LOW), MEDIUM, None),
    ((LOW, HIGH), LOW, None),
    ((LOW, MEDIUM), MEDIUM, 'inferred'),
    ((LOW, LOW), MEDIUM, None),
)


def default_fis(defuzz_resolution=1001):
    """The handcrafted system over (RDD, IoU) with a risk output."""
    inputs = (
        FuzzyVariable('rdd', (-1.0, 1.0), default_terms(-1.0, 1.0)),
        FuzzyVariable('iou', (0.0, 1.0), default_terms(0.0, 1.0)),
    )
    output = FuzzyVariable('risk', (0.0, 1.0), default_terms(0.0, 1.0))
    rules = tuple(FuzzyRule(ante, cons, prov)
                  for ante, cons, prov in _DEFAULT_RULES)
    return FISConfig(inputs, output, rules, defuzz_resolution)


def rule_grid(fis):
    """All antecedent combinations of the input term grid, in order."""
    return list(itertools.product(*[range(len(v.terms))
                                    for v in fis.inputs]))


def consequent_table(fis):
    """Consequent term per grid cell (first matching rule wins)."""
    table = {}
    for rule in fis.rules:
        table.setdefault(tuple(rule.antecedent), rule.consequent)
    return [table[cell] for cell in rule_grid(fis)]


def with_consequents(fis, table):
    """Return fis with a complete grid rule base using the given table."""
    provenance = {tuple(r.antecedent): r.provenance for r in fis.rules}
    rules = []
    for cell, cons in zip(rule_grid(fis), table):
        prov = provenance.get(cell)
        if cons != _lookup(fis, cell):
            prov = 'learned'
        rules.append(FuzzyRule(cell, int(cons), prov))
    return fis._replace(rules=tuple(rules))


def _lookup(fis, cell):
    for rule in fis.rules:
        if tuple(rule.antecedent) == cell:
            return rule.consequent
    return None


def _validate_variable(var):
    lo, hi = var.domain
    if not hi > lo:
        raise FISError('variable %s has an empty domain [%s, %s]'
                       % (var.name, lo, hi))
    if len(var.terms) < 2:
        raise FISError('variable %s needs at least two terms' % var.name)
    for term in var.terms:
        mf = term.mf
        if not mf.a <= mf.b <= mf.c <= mf.d:
            raise FISError('%s.%s: vertices %s are not ordered'
                           % (var.name, term.name, tuple(mf)))
        if mf.a < lo or mf.d > hi:
            raise FISError('%s.%s: vertices %s leave the domain [%s, %s]'
                           % (var.name, term.name, tuple(mf), lo, hi))
    xs = np.linspace(lo, hi, _COVERAGE_SAMPLES)
    degrees = np.max([_trap(xs, t.mf) for t in var.terms], axis=0)
    if not np.all(degrees > 0):
        gap = xs[np.argmin(degrees)]
        raise FISError('variable %s does not cover %.4g' % (var.name, gap))


def validate(fis):
    """Check every FISConfig invariant, raising FISError."""
    if not fis.inputs:
        raise FISError('fuzzy system has no inputs')
    if fis.defuzz_resolution < MIN_RESOLUTION:
        raise FISError('defuzz_resolution must be >= %d, got %d'
                       % (MIN_RESOLUTION, fis.defuzz_resolution))
    for var in tuple(fis.inputs) + (fis.output,):
        _validate_variable(var)

    covered = set()
    for rule in fis.rules:
        ante = tuple(rule.antecedent)
        if len(ante) != len(fis.inputs):
            raise FISError('rule %s does not name one term per input'
                           % (ante,))
        for var, term in zip(fis.inputs, ante):
            if not 0 <= term < len(var.terms):
                raise FISError('rule %s: no term %s in %s'
                               % (ante, term, var.name))
        if not 0 <= rule.consequent < len(fis.output.terms):
            raise FISError('rule %s: no output term %s'
                           % (ante, rule.consequent))
        covered.add(ante)
    missing = [cell for cell in rule_grid(fis) if cell not in covered]
    if missing:
        raise FISError('rule base does not cover %s' % (missing,))
    return fis


def _degrees(var, values):
    lo, hi = var.domain
    x = np.clip(np.asarray(values, dtype=np.float64), lo, hi)
    return np.stack([_trap(x, t.mf) for t in var.terms], axis=1)


def rule_strengths(fis, points, cells=None):
    """Firing strength (N, R) of each rule, or of each given grid cell."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != len(fis.inputs):
        raise FISError('expected %d inputs, got %d'
                       % (len(fis.inputs), points.shape[1]))
    degrees = [_degrees(var, points[:, i])
               for i, var in enumerate(fis.inputs)]
    if cells is None:
        cells = [tuple(rule.antecedent) for rule in fis.rules]
    strengths = np.ones((points.shape[0], len(cells)))
    for j, cell in enumerate(cells):
        for i, term in enumerate(cell):
            strengths[:, j] = np.minimum(strengths[:, j],
                                         degrees[i][:, term])
    return strengths


def activation(strengths, consequents, n_terms):
    """Aggregate rule strengths into one level (N, T) per output term."""
    consequents = np.asarray(consequents)
    act = np.zeros((strengths.shape[0], n_terms))
    for k in range(n_terms):
        chosen = consequents == k
        if chosen.any():
            act[:, k] = strengths[:, chosen].max(axis=1)
    return act


def defuzzify(fis, act):
    """Centroid of the clipped-and-aggregated output membership.

    The centroid is the plain sum of x times membership over the sum of
    membership on defuzz_resolution evenly spaced samples. Rows with no
    mass return the midpoint.
    """
    lo, hi = fis.output.domain
    xs = np.linspace(lo, hi, fis.defuzz_resolution)
    terms = np.stack([_trap(xs, t.mf) for t in fis.output.terms])
    mu = np.max(np.minimum(act[:, :, None], terms[None, :, :]), axis=1)
    mass = mu.sum(axis=1)
    moment = mu.dot(xs)
    out = np.full(act.shape[0], (lo + hi) / 2.0)
    nonzero = mass > 0
    out[nonzero] = moment[nonzero] / mass[nonzero]
    return out


def infer_batch(fis, points, check=True):
    """Crisp outputs for an (N, inputs) array of input points."""
    if check:
        validate(fis)
    strengths = rule_strengths(fis, points)
    act = activation(strengths, [r.consequent for r in fis.rules],
                     len(fis.output.terms))
    return defuzzify(fis, act)


def infer(fis, inputs):
    """Crisp output of the fuzzy system for one input vector."""
    return float(infer_batch(fis, [list(inputs)])[0])


def output_surface(fis, resolution=21):
    """Sample a two-input system on a grid.

    Returns a list of (x0, x1, output) rows, x0 varying slowest.
    """
    if len(fis.inputs) != 2:
        raise FISError('output surface needs a two-input system')
    if resolution < 2:
        raise FISError('surface resolution must be >= 2')
    axes = [np.linspace(v.domain[0], v.domain[1], resolution)
            for v in fis.inputs]
    grid = np.array([(a, b) for a in axes[0] for b in axes[1]])
    values = infer_batch(fis, grid)
    return [(float(a), float(b), float(r))
            for (a, b), r in zip(grid, values)]


def _variable_to_dict(var):
    return {'name': var.name,
            'domain': [float(v) for v in var.domain],
            'terms': [{'name': t.name, 'mf': [float(v) for v in t.mf]}
                      for t in var.terms]}


def fis_to_dict(fis, provenance=None):
    """Serialize a FISConfig into a JSON-compatible document."""
    names = [[t.name for t in v.terms] for v in fis.inputs]
    out_names = [t.name for t in fis.output.terms]
    rules = []
    for rule in fis.rules:
        entry = {'if': [names[i][term]
                        for i, term in enumerate(rule.antecedent)],
                 'then': out_names[rule.consequent]}
        if rule.provenance:
            entry['provenance'] = rule.provenance
        rules.append(entry)
    doc = {'inputs': [_variable_to_dict(v) for v in fis.inputs],
           'output': _variable_to_dict(fis.output),
           'rules': rules,
           'defuzz_resolution': int(fis.defuzz_resolution)}
    if provenance:
        doc['provenance'] = dict(provenance)
    return doc


def _variable_from_dict(doc):
    try:
        terms = tuple(FuzzyTerm(str(t['name']),
                                MembershipFunction(*[float(v)
                                                     for v in t['mf']]))
                      for t in doc['terms'])
        lo, hi = doc['domain']
        return FuzzyVariable(str(doc['name']), (float(lo), float(hi)), terms)
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError('malformed fuzzy variable %r: %s'
                          % (doc.get('name') if isinstance(doc, dict)
                             else doc, err))


def fis_from_dict(doc):
    """Build and validate a FISConfig from its JSON document."""
    if not isinstance(doc, dict):
        raise FormatError('fuzzy system document must be an object')
    for key in ('inputs', 'output', 'rules'):
        if key not in doc:
            raise FormatError('fuzzy system document lacks "%s"' % key)
    inputs = tuple(_variable_from_dict(v) for v in doc['inputs'])
    output = _variable_from_dict(doc['output'])

    rules = []
    for entry in doc['rules']:
        try:
            ante = tuple(
                [t.name for t in var.terms].index(name)
                for var, name in zip(inputs, entry['if']))
            if len(ante) != len(entry['if']):
                raise ValueError('one term per input expected')
            cons = [t.name for t in output.terms].index(entry['then'])
        except (KeyError, TypeError, ValueError) as err:
            raise FormatError('malformed rule %r: %s' % (entry, err))
        rules.append(FuzzyRule(ante, cons, entry.get('provenance')))

    fis = FISConfig(inputs, output, tuple(rules),
                    int(doc.get('defuzz_resolution', 1001)))
    return validate(fis)


def load_fis(path):
    """Read a fuzzy system from a JSON document."""
    try:
        with open(path, 'rb') as f:
            doc = jsonutils.load(f)
    except (IOError, OSError) as err:
        raise FormatError('cannot read fuzzy system %s: %s' % (path, err))
    except ValueError as err:
        raise FormatError('%s is not valid JSON: %s' % (path, err))
    try:
        return fis_from_dict(doc)
    except (FormatError, FISError) as err:
        raise type(err)('%s: %s' % (path, err))


def save_fis(fis, path, provenance=None):
    """Write a fuzzy system, with an optional provenance block."""
    with open(path, 'w') as f:
        f.write(jsonutils.dumps(fis_to_dict(fis, provenance),
                                sort_keys=True, indent=2))
        f.write('\n')
    LOG.info('wrote fuzzy system to %s', path)
