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

import mock

import perceptionmonitor
from perceptionmonitor import _alignment
from perceptionmonitor._exceptions import FISError
from perceptionmonitor._exceptions import GeometryError
from perceptionmonitor import _fuzzy
from perceptionmonitor import _synthetic
from perceptionmonitor.tests.unit import base


class RiskMonitorTest(base.BaseMonitorTest):

    def setUp(self):
        super(RiskMonitorTest, self).setUp()
        self.scene = _synthetic.make_scene(self.rng(7), [9.0, 14.0])
        self.monitor = perceptionmonitor.RiskMonitor(_synthetic.mean_map())

    def test_correct_predictions_are_low_risk(self):
        result = self.monitor.assess(self.scene.depth_map, self.scene.objects)
        self.assertEqual(2, len(result.retrieved))
        self.assertEqual(2, len(result.alignment.pairs))
        self.assertLess(result.risk, 0.35)

    def test_missing_predictions_are_high_risk(self):
        result = self.monitor.assess(self.scene.depth_map, [])
        self.assertEqual([0, 1], result.alignment.unmatched_refs)
        self.assertGreater(result.risk, 0.7)

    def test_underestimated_distance_is_high_risk(self):
        far = [o._replace(d=o.d * 1.8) for o in self.scene.objects]
        result = self.monitor.assess(self.scene.depth_map, far)
        self.assertGreater(result.risk, 0.7)

    def test_empty_scene(self):
        ramp = self.scene.depth_map._replace(data=_synthetic.ground_ramp())
        result = self.monitor.assess(ramp, [])
        self.assertEqual([], result.retrieved)
        self.assertEqual((1.0, 0.0), (result.alignment.mean_iou,
                                      result.alignment.mean_rdd))
        self.assertAlmostEqual(_fuzzy.infer(self.monitor.fis, (0.0, 1.0)),
                               result.risk)

    def test_invalid_fis_is_rejected(self):
        fis = _fuzzy.default_fis()
        self.assertRaises(FISError, perceptionmonitor.RiskMonitor,
                          _synthetic.mean_map(),
                          fis=fis._replace(rules=fis.rules[:3]))

    def test_projection_needs_camera(self):
        box3d = _alignment.Box3D((0.0, 0.0, 10.0), (2.0, 2.0, 2.0))
        self.assertRaises(GeometryError, self.monitor.project, [box3d])
        projected = self.monitor.project([box3d], _synthetic.CAMERA)
        self.assertEqual(1, len(projected))
        self.assertAlmostEqual(9.0, projected[0].d)

    def test_unprojectable_boxes_are_skipped(self):
        behind = _alignment.Box3D((0.0, 0.0, -10.0), (2.0, 2.0, 2.0))
        self.assertEqual([], self.monitor.project([behind],
                                                  _synthetic.CAMERA))
        self.assertIn('skipping prediction', self.logger.output)

    def test_risk_gauge(self):
        monitor = perceptionmonitor.RiskMonitor(_synthetic.mean_map(),
                                                metrics_enabled=True)
        result = monitor.assess(self.scene.depth_map, [])
        self.statsd_report_mock.assert_any_call('risk', 'g', result.risk,
                                                None, mock.ANY)

    def test_no_metrics_without_datadog(self):
        with mock.patch.dict('sys.modules', {'datadog': None}):
            monitor = perceptionmonitor.RiskMonitor(_synthetic.mean_map(),
                                                    metrics_enabled=True)
        self.assertIn('datadog package not installed', self.logger.output)
        monitor.assess(self.scene.depth_map, [])
        monitor.report_shield()
        self.statsd_report_mock.assert_not_called()


class OptionsTest(base.BaseMonitorTest):

    def test_list_opts(self):
        groups = dict(perceptionmonitor.list_opts())
        self.assertEqual({'matching', 'retrieval', 'fis', 'optimizer',
                          'scenario', 'monitor'}, set(groups))
        self.assertIn('alpha', [o.name for o in groups['matching']])

    def test_defaults(self):
        conf = perceptionmonitor.CONF
        self.assertEqual(0.3, conf.matching.alpha)
        self.assertEqual(20.0, conf.retrieval.max_depth)
        self.assertEqual(1001, conf.fis.defuzz_resolution)
        self.assertEqual('static', conf.scenario.obstacle_kind)
