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

import numpy as np

from perceptionmonitor import _fuzzy
from perceptionmonitor._exceptions import FISError
from perceptionmonitor._exceptions import FormatError
from perceptionmonitor.tests.unit import base
from perceptionmonitor.tests.unit import utils


def _dense_centroid(fis, point, samples=100001):
    """Reference Mamdani inference on a dense grid, using np.interp."""
    def degree(mf, x):
        return np.interp(x, list(mf), [0.0, 1.0, 1.0, 0.0])

    levels = np.zeros(len(fis.output.terms))
    for rule in fis.rules:
        strength = min(degree(var.terms[term].mf, x)
                       for var, term, x in zip(fis.inputs, rule.antecedent,
                                               point))
        levels[rule.consequent] = max(levels[rule.consequent], strength)

    lo, hi = fis.output.domain
    xs = np.linspace(lo, hi, samples)
    mu = np.max([np.minimum(level, degree(term.mf, xs))
                 for level, term in zip(levels, fis.output.terms)], axis=0)
    if mu.sum() == 0:
        return (lo + hi) / 2.0
    return float((mu * xs).sum() / mu.sum())


def _perturbed(rng, fis, spread=0.05):
    """Jitter the interior vertices of every term, keeping the shoulders."""
    def jitter(var):
        lo, hi = var.domain
        width = hi - lo
        terms = []
        for idx, term in enumerate(var.terms):
            vertices = np.array(term.mf, dtype=np.float64)
            vertices += rng.uniform(-spread, spread, 4) * width
            if idx == 0:
                vertices[:2] = lo
            if idx == len(var.terms) - 1:
                vertices[2:] = hi
            vertices = np.sort(np.clip(vertices, lo, hi))
            terms.append(term._replace(
                mf=_fuzzy.MembershipFunction(*vertices.tolist())))
        return var._replace(terms=tuple(terms))

    return fis._replace(inputs=tuple(jitter(v) for v in fis.inputs),
                        output=jitter(fis.output))


class MembershipTest(utils.MonitorTestCase):

    def test_trapezoid(self):
        mf = _fuzzy.MembershipFunction(0.0, 1.0, 2.0, 4.0)
        self.assertEqual(0.0, _fuzzy.membership(mf, -1.0))
        self.assertAlmostEqual(0.5, _fuzzy.membership(mf, 0.5))
        self.assertEqual(1.0, _fuzzy.membership(mf, 1.5))
        self.assertAlmostEqual(0.25, _fuzzy.membership(mf, 3.5))
        self.assertEqual(0.0, _fuzzy.membership(mf, 5.0))

    def test_left_shoulder(self):
        mf = _fuzzy.MembershipFunction(0.0, 0.0, 0.2, 0.45)
        self.assertEqual(1.0, _fuzzy.membership(mf, 0.0))
        self.assertEqual(1.0, _fuzzy.membership(mf, -0.5, domain=(0, 1)))

    def test_triangle(self):
        mf = _fuzzy.triangle(0.3, 0.5, 0.7)
        self.assertEqual(1.0, _fuzzy.membership(mf, 0.5))
        self.assertAlmostEqual(0.5, _fuzzy.membership(mf, 0.6))

    def test_default_terms_cover_domain(self):
        terms = _fuzzy.default_terms(-1.0, 1.0)
        self.assertEqual(_fuzzy.TERM_NAMES, tuple(t.name for t in terms))
        for x in np.linspace(-1.0, 1.0, 101):
            self.assertGreater(max(_fuzzy.membership(t.mf, x)
                                   for t in terms), 0.0)


class ValidateTest(utils.MonitorTestCase):

    def setUp(self):
        super(ValidateTest, self).setUp()
        self.fis = _fuzzy.default_fis()

    def replace_term(self, var_idx, term_idx, mf):
        var = self.fis.inputs[var_idx]
        terms = list(var.terms)
        terms[term_idx] = terms[term_idx]._replace(mf=mf)
        inputs = list(self.fis.inputs)
        inputs[var_idx] = var._replace(terms=tuple(terms))
        return self.fis._replace(inputs=tuple(inputs))

    def test_default_is_valid(self):
        self.assertEqual(self.fis, _fuzzy.validate(self.fis))
        self.assertEqual(9, len(self.fis.rules))
        self.assertEqual(['rdd', 'iou'], [v.name for v in self.fis.inputs])

    def test_unordered_vertices(self):
        broken = self.replace_term(
            1, 1, _fuzzy.MembershipFunction(0.5, 0.3, 0.6, 0.7))
        self.assertRaisesRegex(FISError, 'not ordered', _fuzzy.validate,
                               broken)

    def test_vertices_outside_domain(self):
        broken = self.replace_term(
            1, 2, _fuzzy.MembershipFunction(0.55, 0.8, 1.0, 1.2))
        self.assertRaisesRegex(FISError, 'leave the domain',
                               _fuzzy.validate, broken)

    def test_coverage_gap(self):
        broken = self.replace_term(
            1, 1, _fuzzy.MembershipFunction(0.5, 0.5, 0.5, 0.52))
        self.assertRaisesRegex(FISError, 'does not cover', _fuzzy.validate,
                               broken)

    def test_incomplete_rule_base(self):
        broken = self.fis._replace(rules=self.fis.rules[:-1])
        self.assertRaisesRegex(FISError, 'does not cover', _fuzzy.validate,
                               broken)

    def test_unknown_consequent(self):
        rules = list(self.fis.rules)
        rules[0] = rules[0]._replace(consequent=5)
        self.assertRaises(FISError, _fuzzy.validate,
                          self.fis._replace(rules=tuple(rules)))

    def test_low_resolution(self):
        self.assertRaises(FISError, _fuzzy.validate,
                          self.fis._replace(defuzz_resolution=50))


class InferenceTest(utils.MonitorTestCase):

    def setUp(self):
        super(InferenceTest, self).setUp()
        self.fis = _fuzzy.default_fis()

    def test_large_discrepancy_is_risky(self):
        self.assertGreaterEqual(_fuzzy.infer(self.fis, (0.9, 0.05)), 0.7)
        self.assertGreaterEqual(_fuzzy.infer(self.fis, (0.9, 0.9)), 0.7)

    def test_good_alignment_is_safe(self):
        self.assertLessEqual(_fuzzy.infer(self.fis, (-0.9, 0.9)), 0.35)

    def test_empty_reference_scores_low(self):
        # only the low output term fires, fully: 55.4165 / 325.5 on the grid
        self.assertAlmostEqual(0.17025, _fuzzy.infer(self.fis, (0.0, 1.0)),
                               places=4)

    def test_output_stays_in_domain(self):
        rng = self.rng(9)
        points = np.column_stack([rng.uniform(-1, 1, 500),
                                  rng.uniform(0, 1, 500)])
        out = _fuzzy.infer_batch(self.fis, points)
        self.assertTrue(np.all(out >= 0.0))
        self.assertTrue(np.all(out <= 1.0))

    def test_inputs_are_clamped(self):
        self.assertAlmostEqual(_fuzzy.infer(self.fis, (1.0, 0.0)),
                               _fuzzy.infer(self.fis, (3.0, -2.0)))

    def test_monotone_in_positive_discrepancy(self):
        rdd = np.linspace(0.0, 1.0, 101)
        for iou in (0.05, 0.5, 0.9):
            points = np.column_stack([rdd, np.full_like(rdd, iou)])
            out = _fuzzy.infer_batch(self.fis, points)
            self.assertTrue(np.all(np.diff(out) >= -1e-9),
                            'not monotone at iou=%s' % iou)

    def test_batch_matches_single(self):
        points = [(0.3, 0.4), (-0.2, 0.8), (0.7, 0.1)]
        batch = _fuzzy.infer_batch(self.fis, points)
        for point, value in zip(points, batch):
            self.assertAlmostEqual(value, _fuzzy.infer(self.fis, point))

    def test_no_activation_returns_midpoint(self):
        act = np.zeros((1, 3))
        self.assertEqual(0.5, _fuzzy.defuzzify(self.fis, act)[0])

    def test_wrong_arity(self):
        self.assertRaises(FISError, _fuzzy.infer, self.fis, (0.1,))

    def test_matches_dense_reference(self):
        rng = self.rng(17)
        for _ in range(20):
            fis = _fuzzy.validate(_perturbed(rng, self.fis))
            for _ in range(10):
                point = (rng.uniform(-1, 1), rng.uniform(0, 1))
                self.assertAlmostEqual(_dense_centroid(fis, point),
                                       _fuzzy.infer(fis, point),
                                       delta=1e-3)

    def test_output_surface(self):
        rows = _fuzzy.output_surface(self.fis, resolution=3)
        self.assertEqual(9, len(rows))
        self.assertEqual((-1.0, 0.0), rows[0][:2])
        self.assertEqual((-1.0, 0.5), rows[1][:2])
        self.assertEqual((1.0, 1.0), rows[-1][:2])
        self.assertAlmostEqual(_fuzzy.infer(self.fis, (0.0, 0.5)),
                               rows[4][2])


class RuleTableTest(utils.MonitorTestCase):

    def test_grid_and_table(self):
        fis = _fuzzy.default_fis()
        self.assertEqual((0, 0), _fuzzy.rule_grid(fis)[0])
        self.assertEqual((2, 2), _fuzzy.rule_grid(fis)[-1])
        self.assertEqual([1, 1, 0, 1, 0, 0, 2, 2, 2],
                         _fuzzy.consequent_table(fis))

    def test_with_consequents_marks_learned_cells(self):
        fis = _fuzzy.default_fis()
        table = _fuzzy.consequent_table(fis)
        table[0] = _fuzzy.LOW
        learned = _fuzzy.with_consequents(fis, table)
        self.assertEqual(table, _fuzzy.consequent_table(learned))
        by_cell = {r.antecedent: r.provenance for r in learned.rules}
        self.assertEqual('learned', by_cell[(0, 0)])
        self.assertEqual('inferred', by_cell[(1, 1)])
        self.assertIsNone(by_cell[(2, 2)])


class SerializationTest(base.BaseMonitorTest):

    def test_save_and_load(self):
        fis = _fuzzy.default_fis()
        path = self.path('fis.json')
        _fuzzy.save_fis(fis, path, provenance={'mode': 'handcrafted'})
        loaded = _fuzzy.load_fis(path)
        self.assertEqual(fis, loaded)
        self.assertEqual({'mode': 'handcrafted'},
                         self.read_json(path)['provenance'])

    def test_rules_use_term_names(self):
        doc = _fuzzy.fis_to_dict(_fuzzy.default_fis())
        self.assertIn({'if': ['high', 'low'], 'then': 'high'}, doc['rules'])
        self.assertIn({'if': ['medium', 'medium'], 'then': 'low',
                       'provenance': 'inferred'}, doc['rules'])

    def test_unknown_term_name(self):
        doc = _fuzzy.fis_to_dict(_fuzzy.default_fis())
        doc['rules'][0]['if'] = ['huge', 'low']
        self.assertRaises(FormatError, _fuzzy.fis_from_dict, doc)

    def test_missing_section(self):
        doc = _fuzzy.fis_to_dict(_fuzzy.default_fis())
        del doc['output']
        self.assertRaisesRegex(FormatError, '"output"',
                               _fuzzy.fis_from_dict, doc)

    def test_invalid_system_is_rejected(self):
        doc = _fuzzy.fis_to_dict(_fuzzy.default_fis())
        doc['rules'].pop()
        self.assertRaises(FISError, _fuzzy.fis_from_dict, doc)

    def test_not_json(self):
        path = self.path('broken.json')
        with open(path, 'w') as f:
            f.write('{not json')
        self.assertRaises(FormatError, _fuzzy.load_fis, path)
