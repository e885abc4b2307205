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

import csv
import os

import mock
from oslo_serialization import jsonutils

import perceptionmonitor
from perceptionmonitor import _alignment
from perceptionmonitor import _dataset
from perceptionmonitor import _depth
from perceptionmonitor._exceptions import ConfigError
from perceptionmonitor import _fuzzy
from perceptionmonitor import _synthetic
from perceptionmonitor import cli
from perceptionmonitor.tests.unit import base


class PipelineConfigTest(base.BaseMonitorTest):

    def test_defaults(self):
        pipeline = cli.build_pipeline_config(perceptionmonitor.CONF)
        self.assertEqual(_alignment.MatchThresholds(0.3, 0.2),
                         pipeline.thresholds)
        self.assertEqual(_depth.RetrievalConfig(), pipeline.retrieval)
        self.assertIsNone(pipeline.fis)
        self.assertIsNone(pipeline.mean_map)
        self.assertEqual(0.5, pipeline.scenario.detector_miss_prob)
        self.assertEqual(1, pipeline.workers)

    def test_config_document(self):
        cli.apply_config_document(perceptionmonitor.CONF, self.pipeline_file)
        pipeline = cli.build_pipeline_config(perceptionmonitor.CONF)
        self.assertEqual(7, pipeline.optimizer.seed)
        self.assertEqual(40, pipeline.optimizer.iterations)
        self.assertEqual(3, pipeline.optimizer.folds)
        self.assertEqual(7, pipeline.scenario.seed)

    def write_config(self, doc):
        path = self.path('config.json')
        with open(path, 'w') as f:
            f.write(jsonutils.dumps(doc))
        return path

    def test_unknown_option(self):
        path = self.write_config({'matching': {'gamma': 1.0}})
        self.assertRaises(ConfigError, cli.apply_config_document,
                          perceptionmonitor.CONF, path)

    def test_unknown_group(self):
        path = self.write_config({'camera': {'alpha': 1.0}})
        self.assertRaises(ConfigError, cli.apply_config_document,
                          perceptionmonitor.CONF, path)

    def test_value_out_of_range(self):
        path = self.write_config({'matching': {'alpha': 1.5}})
        self.assertRaises(ConfigError, cli.apply_config_document,
                          perceptionmonitor.CONF, path)

    def test_group_must_be_object(self):
        path = self.write_config({'matching': [1, 2]})
        self.assertRaises(ConfigError, cli.apply_config_document,
                          perceptionmonitor.CONF, path)

    def test_missing_document(self):
        self.assertRaises(ConfigError, cli.apply_config_document,
                          perceptionmonitor.CONF, self.path('absent.json'))

    def test_inconsistent_retrieval(self):
        self.cfg.config(canny_low=80.0, canny_high=60.0, group='retrieval')
        err = self.assertRaises(ConfigError, cli.build_pipeline_config,
                                perceptionmonitor.CONF)
        self.assertIn('[retrieval]', str(err))

    def test_inconsistent_optimizer(self):
        self.cfg.config(min_mesh=1.0, group='optimizer')
        err = self.assertRaises(ConfigError, cli.build_pipeline_config,
                                perceptionmonitor.CONF)
        self.assertIn('[optimizer]', str(err))

    def test_monitor_needs_mean_map(self):
        pipeline = cli.build_pipeline_config(perceptionmonitor.CONF)
        self.assertRaises(ConfigError, cli.make_monitor, pipeline)


class FrameProcessingTest(base.BaseMonitorTest):

    def setUp(self):
        super(FrameProcessingTest, self).setUp()
        rng = self.rng(5)
        docs = []
        for idx in range(4):
            scene = _synthetic.make_scene(rng, [8.0 + 2 * idx])
            preds = scene.objects if idx % 2 else []
            docs.append(self.write_frame('f%d' % idx, scene.depth_map, preds,
                                         scene.objects))
        self.frames = _dataset.load_dataset(self.write_dataset(docs))
        self.monitor = perceptionmonitor.RiskMonitor(_synthetic.mean_map())

    def test_run_monitor_keeps_order(self):
        rows = cli.run_monitor(self.frames, self.monitor, workers=3)
        self.assertEqual(['f0', 'f1', 'f2', 'f3'], [r[0] for r in rows])
        for frame_id, _, _, _, risk in rows:
            if frame_id in ('f0', 'f2'):
                self.assertGreater(risk, 0.7)
            else:
                self.assertLess(risk, 0.35)

    def test_build_targets(self):
        samples = cli.build_targets(self.frames, self.monitor,
                                    _alignment.MatchThresholds())
        missed = [s for s in samples if s.frame_id in ('f0', 'f2')]
        self.assertEqual([1.0, 1.0], [s.target for s in missed])
        for s in samples:
            if s.frame_id in ('f1', 'f3'):
                self.assertAlmostEqual(0.0, s.target)
                self.assertGreater(s.mean_iou, 0.7)

    def test_errors_name_the_frame(self):
        os.remove(_dataset.depth_map_path(self.frames[2]))
        err = self.assertRaises(Exception, cli.run_monitor, self.frames,
                                self.monitor)
        self.assertIn('frame f2', str(err))


class MainTest(base.BaseMonitorTest):

    def setUp(self):
        super(MainTest, self).setUp()
        patcher = mock.patch('oslo_log.log.setup')
        patcher.start()
        self.addCleanup(patcher.stop)

        self.corpus = self.path('corpus')
        doc = jsonutils.loads(base.pipeline_content)
        doc['monitor'] = {'mean_map': os.path.join(self.corpus, 'mean.dm01')}
        self.config = self.path('config.json')
        with open(self.config, 'w') as f:
            f.write(jsonutils.dumps(doc))

    def main(self, *args):
        cli.main(['--config', self.config] + list(args))

    def read_csv(self, path):
        with open(path) as f:
            return list(csv.reader(f))

    def demo_data(self, frames=4):
        self.main('demo-data', '--output-dir', self.corpus,
                  '--frames', str(frames))
        return os.path.join(self.corpus, 'frames.jsonl')

    def test_demo_data(self):
        dataset = self.demo_data(frames=2)
        records = _dataset.load_dataset(dataset)
        self.assertEqual(12, len(records))
        self.assertEqual(list(_synthetic.CONDITIONS),
                         [r.condition for r in records][::2])
        rows = self.read_csv(os.path.join(self.corpus, 'samples.csv'))
        self.assertEqual(list(_dataset.SAMPLE_HEADER), rows[0])
        self.assertEqual(13, len(rows))

    def test_monitor_and_targets(self):
        dataset = self.demo_data(frames=2)
        out = self.path('risk.csv')
        self.main('monitor', '--dataset', dataset, '--output', out)
        rows = self.read_csv(out)
        self.assertEqual(list(_dataset.MONITOR_HEADER), rows[0])
        for row in rows[1:]:
            self.assertTrue(0.0 <= float(row[4]) <= 1.0)

        samples = self.path('samples.csv')
        self.main('targets', '--dataset', dataset, '--output', samples)
        self.assertEqual(12, len(_dataset.read_samples(samples)))

    def test_fit_fis_is_reproducible(self):
        self.demo_data()
        samples = os.path.join(self.corpus, 'samples.csv')
        outputs = []
        for name in ('a.json', 'b.json'):
            outputs.append(self.path(name))
            self.main('fit-fis', '--mode', 'learn-rules', '--samples',
                      samples, '--output', outputs[-1])
        with open(outputs[0]) as a, open(outputs[1]) as b:
            self.assertEqual(a.read(), b.read())
        doc = self.read_json(outputs[0])
        self.assertEqual('learn-rules', doc['provenance']['mode'])
        self.assertEqual(7, doc['provenance']['seed'])
        _fuzzy.load_fis(outputs[0])

    def test_fit_fis_needs_samples(self):
        err = self.assertRaises(SystemExit, self.main, 'fit-fis', '--mode',
                                'tune-mf', '--output', self.path('x.json'))
        self.assertIn('needs --samples', str(err.code))

    def test_handcrafted_with_surface(self):
        out = self.path('fis.json')
        surface = self.path('surface.csv')
        self.main('fit-fis', '--mode', 'handcrafted', '--output', out,
                  '--surface', surface)
        self.assertEqual(_fuzzy.default_fis(), _fuzzy.load_fis(out))
        rows = self.read_csv(surface)
        self.assertEqual(['rdd', 'iou', 'risk'], rows[0])
        self.assertEqual(21 * 21 + 1, len(rows))

    def test_eval(self):
        dataset = self.demo_data()
        out = self.path('reports')
        self.main('eval', '--dataset', dataset, '--output-dir', out,
                  '--variants')
        correlation = self.read_csv(os.path.join(out, 'correlation.csv'))
        self.assertEqual(['condition', 'alpha', 'beta', 'r_iou', 'r_rdd'],
                         correlation[0])
        self.assertEqual(['all', '0.5', '0.1'], correlation[1][:3])
        self.assertEqual(2 * (1 + len(_synthetic.CONDITIONS)) + 1,
                         len(correlation))
        recall = self.read_csv(os.path.join(out, 'recall.csv'))
        self.assertEqual(1 + len(_synthetic.CONDITIONS), len(recall))
        rmse = self.read_csv(os.path.join(out, 'rmse.csv'))
        self.assertEqual('24', rmse[1][0])
        variants = self.read_csv(os.path.join(out, 'variants.csv'))
        self.assertEqual(['handcrafted', 'tune-mf', 'learn-rules'],
                         [row[0] for row in variants[1:]])

    def test_simulate(self):
        out = self.path('outcomes.csv')
        traces = self.path('traces')
        self.main('simulate', '--runs', '2', '--output', out,
                  '--traces-dir', traces)
        rows = self.read_csv(out)
        self.assertEqual(list(_dataset.OUTCOME_HEADER), rows[0])
        self.assertEqual(['7', '8'], [row[0] for row in rows[1:]])
        self.assertTrue(os.path.exists(os.path.join(traces, 'trace-7.csv')))

    def use_workers(self, workers):
        doc = self.read_json(self.config)
        doc['monitor']['workers'] = workers
        with open(self.config, 'w') as f:
            f.write(jsonutils.dumps(doc))

    def read_bytes(self, path):
        with open(path, 'rb') as f:
            return f.read()

    def test_monitor_output_is_byte_identical_across_runs(self):
        dataset = self.demo_data(frames=3)
        self.use_workers(3)
        outputs = []
        for name in ('a.csv', 'b.csv'):
            outputs.append(self.path(name))
            self.main('monitor', '--dataset', dataset, '--output',
                      outputs[-1])
        first = self.read_bytes(outputs[0])
        self.assertEqual(first, self.read_bytes(outputs[1]))
        self.assertEqual(1 + 18, len(first.splitlines()))

    def test_simulate_output_is_byte_identical_across_runs(self):
        self.use_workers(3)
        outputs = []
        for name in ('a.csv', 'b.csv'):
            outputs.append(self.path(name))
            self.main('simulate', '--runs', '4', '--output',
                      outputs[-1], '--traces-dir', self.path(name + '.d'))
        self.assertEqual(self.read_bytes(outputs[0]),
                         self.read_bytes(outputs[1]))
        for seed in range(7, 11):
            trace = 'trace-%d.csv' % seed
            self.assertEqual(
                self.read_bytes(self.path('a.csv.d', trace)),
                self.read_bytes(self.path('b.csv.d', trace)))

    def test_unparsable_config(self):
        with open(self.config, 'w') as f:
            f.write('{"matching": [1, 2')
        err = self.assertRaises(SystemExit, self.main, 'simulate',
                                '--output', self.path('x.csv'))
        self.assertIn('neither JSON nor YAML', str(err.code))

    def test_seed_flag_overrides_document(self):
        out = self.path('outcomes.csv')
        self.main('--seed', '3', 'simulate', '--runs', '1', '--output', out)
        self.assertEqual('3', self.read_csv(out)[1][0])

    def test_mean_map_and_retrieve(self):
        rng = self.rng(1)
        paths = []
        for idx in range(2):
            paths.append(self.path('ramp%d.dm01' % idx))
            _depth.save_depth_map(
                _depth.make_depth_map(_synthetic.ground_ramp()), paths[-1])
        mean = self.path('mean.dm01')
        self.main('mean-map', '--output', mean, *paths)
        loaded = _depth.load_depth_map(mean, metric=False)
        self.assertEqual((160, 120), (loaded.width, loaded.height))

        scene = _synthetic.make_scene(rng, [10.0])
        depth = self.path('scene.dm01')
        _depth.save_depth_map(scene.depth_map, depth)
        out = self.path('objects.json')
        self.main('retrieve', '--depth-map', depth, '--mean-map', mean,
                  '--output', out)
        objects = self.read_json(out)['objects']
        self.assertEqual(1, len(objects))
        self.assertLessEqual(abs(objects[0]['d'] - 10.0), 0.5)

    def test_errors_exit_with_message(self):
        err = self.assertRaises(SystemExit, self.main, 'monitor',
                                '--dataset', self.path('absent.jsonl'),
                                '--output', self.path('out.csv'))
        self.assertTrue(str(err.code).startswith('ERROR: '))
