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

"""Command line interface of the perception monitor."""

import collections
from concurrent import futures
import os
import sys

from oslo_config import cfg
from oslo_log import log as logging
import yaml

import perceptionmonitor
from perceptionmonitor import _alignment
from perceptionmonitor import _dataset
from perceptionmonitor import _depth
from perceptionmonitor._exceptions import ConfigError
from perceptionmonitor._exceptions import FormatError
from perceptionmonitor._exceptions import MonitorError
from perceptionmonitor import _fuzzy
from perceptionmonitor import _metrics
from perceptionmonitor import _simulator
from perceptionmonitor import _synthetic
from perceptionmonitor import _tuning

LOG = logging.getLogger(__name__)
CONF = perceptionmonitor.CONF

PipelineConfig = collections.namedtuple(
    'PipelineConfig',
    ['thresholds', 'retrieval', 'fis', 'mean_map', 'optimizer', 'scenario',
     'workers', 'metrics_enabled'])

STRICT_THRESHOLDS = _alignment.MatchThresholds(0.5, 0.1)
HOLDOUT_FRACTION = 0.2


def build_pipeline_config(conf):
    """Materialize the resolved options as immutable tuples."""
    retrieval = _depth.RetrievalConfig(
        conf.retrieval.canny_low, conf.retrieval.canny_high,
        conf.retrieval.min_box_area, conf.retrieval.max_depth,
        conf.retrieval.blur_radius, conf.retrieval.epsilon)
    try:
        _depth.validate_retrieval_config(retrieval)
    except FormatError as err:
        raise ConfigError('[%s] %s' % (perceptionmonitor.RETRIEVAL_GROUP,
                                       err))

    opt = conf.optimizer
    optimizer = _tuning.OptimizerConfig(
        'handcrafted', opt.iterations, opt.swarm_size, opt.swarm_iterations,
        opt.folds, opt.seed, opt.initial_mesh, opt.min_mesh, opt.inertia,
        opt.cognitive, opt.social, opt.hybrid_polish)
    try:
        _tuning.validate_optimizer_config(optimizer)
    except ConfigError as err:
        raise ConfigError('[%s] %s' % (perceptionmonitor.OPTIMIZER_GROUP,
                                       err))

    sc = conf.scenario
    scenario = _simulator.ScenarioConfig(
        sc.ego_speed0, sc.obstacle_distance0, sc.obstacle_kind,
        sc.detector_miss_prob, sc.detector_depth_noise, sc.shield_threshold,
        sc.decel, sc.dt, sc.horizon, opt.seed, True, sc.crossing_speed,
        sc.crossing_offset0)
    try:
        _simulator.validate_scenario(scenario)
    except ConfigError as err:
        raise ConfigError('[%s] %s' % (perceptionmonitor.SCENARIO_GROUP,
                                       err))

    return PipelineConfig(
        _alignment.MatchThresholds(conf.matching.alpha, conf.matching.beta),
        retrieval, conf.fis.path or None, conf.monitor.mean_map or None,
        optimizer, scenario, conf.monitor.workers,
        conf.monitor.metrics_enabled)


def apply_config_document(conf, path):
    """Apply a {group: {option: value}} document as overrides."""
    try:
        with open(path, 'r') as f:
            doc = yaml.safe_load(f)
    except (IOError, OSError) as err:
        raise ConfigError('cannot read config %s: %s' % (path, err))
    except yaml.YAMLError as err:
        raise ConfigError('config %s is neither JSON nor YAML: %s'
                          % (path, err))
    if doc is None:
        return
    if not isinstance(doc, dict):
        raise ConfigError('config %s must map groups to options' % path)
    for group, options in doc.items():
        if not isinstance(options, dict):
            raise ConfigError('config %s: group %s must be an object'
                              % (path, group))
        for name, value in options.items():
            try:
                conf.set_override(name, value, group)
            except (cfg.NoSuchOptError, cfg.NoSuchGroupError) as err:
                raise ConfigError('config %s: %s' % (path, err))
            except ValueError as err:
                raise ConfigError('config %s: [%s] %s: %s'
                                  % (path, group, name, err))


def _apply_flags(conf):
    if conf.seed is not None:
        conf.set_override('seed', conf.seed, perceptionmonitor.OPTIMIZER_GROUP)
    for name in ('alpha', 'beta'):
        value = getattr(conf, name)
        if value is not None:
            try:
                conf.set_override(name, value,
                                  perceptionmonitor.MATCHING_GROUP)
            except ValueError as err:
                raise ConfigError('--%s: %s' % (name, err))


def load_fis(pipeline):
    if pipeline.fis:
        return _fuzzy.load_fis(pipeline.fis)
    return _fuzzy.default_fis(CONF.fis.defuzz_resolution)


def make_monitor(pipeline, mean_map_path=None):
    path = mean_map_path or pipeline.mean_map
    if not path:
        raise ConfigError('no mean map given; set [monitor] mean_map')
    return perceptionmonitor.RiskMonitor(
        _depth.load_depth_map(path, metric=False), fis=load_fis(pipeline),
        retrieval=pipeline.retrieval, thresholds=pipeline.thresholds,
        metrics_enabled=pipeline.metrics_enabled)


def _map_frames(fn, frames, workers):
    with futures.ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(fn, frames))


def _frame_context(fn):
    def wrapper(record):
        try:
            return fn(record)
        except MonitorError as err:
            raise MonitorError('frame %s: %s' % (record.frame_id, err))
    return wrapper


def frame_objects(record, monitor):
    """Retrieved, predicted and annotated 2.5D objects of one record."""
    depth = _depth.load_depth_map(_dataset.depth_map_path(record))
    return _metrics.FrameObjects(
        record.frame_id, record.condition, monitor.retrieve(depth),
        monitor.project(record.predictions, record.camera),
        monitor.project(record.ground_truths, record.camera))


def run_monitor(frames, monitor, workers=1):
    """Estimate the risk of every frame.

    Returns (frame_id, condition, mean_iou, mean_rdd, risk) rows in input
    order.
    """
    @_frame_context
    def assess(record):
        depth = _depth.load_depth_map(_dataset.depth_map_path(record))
        result = monitor.assess(depth, record.predictions, record.camera)
        LOG.debug('frame %s: iou=%.3f rdd=%.3f risk=%.3f', record.frame_id,
                  result.alignment.mean_iou, result.alignment.mean_rdd,
                  result.risk)
        return (record.frame_id, record.condition,
                result.alignment.mean_iou, result.alignment.mean_rdd,
                result.risk)

    return _map_frames(assess, frames, workers)


def build_targets(frames, monitor, thresholds, workers=1):
    """Training samples: alignment against S and 1 - USC against G."""
    @_frame_context
    def target(record):
        objs = frame_objects(record, monitor)
        alignment = _alignment.align_frame(objs.predictions, objs.retrieved,
                                           thresholds)
        usc = _metrics.usc_frame(objs.predictions, objs.ground_truths,
                                 thresholds)
        return _tuning.TrainingSample(record.frame_id, record.condition,
                                      alignment.mean_iou, alignment.mean_rdd,
                                      usc.target)

    return _map_frames(target, frames, workers)


def do_retrieve():
    pipeline = build_pipeline_config(CONF)
    monitor = make_monitor(pipeline, CONF.command.mean_map)
    depth = _depth.load_depth_map(CONF.command.depth_map)
    objects = monitor.retrieve(depth)
    _dataset.write_json(
        {'depth_map': CONF.command.depth_map,
         'objects': [dict(o._asdict()) for o in objects]},
        CONF.command.output)
    LOG.info('retrieved %d objects from %s', len(objects),
             CONF.command.depth_map)


def do_mean_map():
    pipeline = build_pipeline_config(CONF)
    maps = [_depth.load_depth_map(p) for p in CONF.command.maps]
    mean = _depth.build_mean_map(maps, pipeline.retrieval.epsilon)
    _depth.save_depth_map(mean, CONF.command.output)
    LOG.info('averaged %d depth maps into %s', len(maps),
             CONF.command.output)


def do_monitor():
    pipeline = build_pipeline_config(CONF)
    monitor = make_monitor(pipeline)
    frames = _dataset.load_dataset(CONF.command.dataset)
    rows = run_monitor(frames, monitor, pipeline.workers)
    _dataset.write_csv(CONF.command.output, _dataset.MONITOR_HEADER, rows)
    LOG.info('wrote risk estimates of %d frames to %s', len(rows),
             CONF.command.output)


def do_targets():
    pipeline = build_pipeline_config(CONF)
    monitor = make_monitor(pipeline)
    frames = _dataset.load_dataset(CONF.command.dataset)
    samples = build_targets(frames, monitor, pipeline.thresholds,
                            pipeline.workers)
    _dataset.write_samples(samples, CONF.command.output)
    LOG.info('wrote %d training samples to %s', len(samples),
             CONF.command.output)


def do_fit_fis():
    pipeline = build_pipeline_config(CONF)
    mode = CONF.command.mode
    optimizer = pipeline.optimizer._replace(mode=mode)
    fis = load_fis(pipeline)
    samples = None
    if CONF.command.samples:
        samples = _dataset.read_samples(CONF.command.samples)
    elif mode != 'handcrafted':
        raise ConfigError('fit-fis --mode %s needs --samples' % mode)

    fitted = _tuning.fit_fis(fis, samples, optimizer)
    provenance = {'mode': mode, 'seed': optimizer.seed}
    if mode == 'tune-mf':
        provenance['iterations'] = optimizer.iterations
    elif mode == 'learn-rules':
        provenance['iterations'] = optimizer.swarm_iterations
    if samples:
        provenance['rmse'] = _tuning.evaluate_fis(fitted, samples)
    _fuzzy.save_fis(fitted, CONF.command.output, provenance)

    if CONF.command.surface:
        _dataset.write_csv(CONF.command.surface,
                           ('rdd', 'iou', 'risk'),
                           _fuzzy.output_surface(fitted))


def _correlation_rows(frames, thresholds):
    rows = []
    r_iou, r_rdd = _metrics.correlation_experiment(frames, thresholds)
    rows.append(('all', thresholds.alpha, thresholds.beta, r_iou, r_rdd))
    groups = collections.OrderedDict()
    for frame in frames:
        groups.setdefault(frame.condition, []).append(frame)
    for condition, group in groups.items():
        try:
            r_iou, r_rdd = _metrics.correlation_experiment(group, thresholds)
        except MonitorError as err:
            LOG.warning('no correlation for condition %s: %s', condition,
                        err)
            r_iou = r_rdd = None
        rows.append((condition, thresholds.alpha, thresholds.beta, r_iou,
                     r_rdd))
    return rows


def do_eval():
    pipeline = build_pipeline_config(CONF)
    monitor = make_monitor(pipeline)
    records = _dataset.load_dataset(CONF.command.dataset)
    frames = _map_frames(_frame_context(lambda r: frame_objects(r, monitor)),
                         records, pipeline.workers)
    out = CONF.command.output_dir
    os.makedirs(out, exist_ok=True)

    rows = []
    for thresholds in (STRICT_THRESHOLDS, pipeline.thresholds):
        rows.extend(_correlation_rows(frames, thresholds))
    _dataset.write_csv(os.path.join(out, 'correlation.csv'),
                       ('condition', 'alpha', 'beta', 'r_iou', 'r_rdd'),
                       rows)

    reports = _metrics.recall_analysis(frames, STRICT_THRESHOLDS,
                                       pipeline.thresholds)
    _dataset.write_csv(
        os.path.join(out, 'recall.csv'),
        ('condition', 'frames', 'gt_count', 'recall_s_strict',
         'recall_s_loose', 'recall_p_strict', 'recall_p_loose',
         'tp_retrieved', 'tp_total', 'fn_retrieved', 'fn_total'),
        [(r.condition, r.frames, r.gt_count) + tuple(r.retrieved_by_s)
         + tuple(r.retrieved_by_p) + tuple(r.approved_tp)
         + tuple(r.identified_fn) for r in reports])

    if CONF.command.samples:
        samples = _dataset.read_samples(CONF.command.samples)
    else:
        samples = build_targets(records, monitor, pipeline.thresholds,
                                pipeline.workers)
    fis = monitor.fis
    if CONF.command.fis_path:
        fis = _fuzzy.load_fis(CONF.command.fis_path)
    _dataset.write_csv(os.path.join(out, 'rmse.csv'),
                       ('samples', 'rmse'),
                       [(len(samples), _tuning.evaluate_fis(fis, samples))])

    if CONF.command.variants:
        train, test = _tuning.holdout_split(samples, HOLDOUT_FRACTION,
                                            pipeline.optimizer.seed)
        results = _tuning.compare_variants(train, test, fis,
                                           pipeline.optimizer)
        _dataset.write_csv(os.path.join(out, 'variants.csv'),
                           ('variant', 'train_rmse', 'test_rmse'),
                           [(r.name, r.train_rmse, r.test_rmse)
                            for r in results])
    LOG.info('wrote evaluation of %d frames to %s', len(frames), out)


def do_simulate():
    pipeline = build_pipeline_config(CONF)
    scenario = pipeline.scenario._replace(
        shield_enabled=not CONF.command.no_shield)
    seeds = range(pipeline.optimizer.seed,
                  pipeline.optimizer.seed + CONF.command.runs)
    outcomes = _simulator.sweep(scenario, load_fis(pipeline),
                                pipeline.retrieval, pipeline.thresholds,
                                seeds, pipeline.workers)
    _dataset.write_csv(CONF.command.output, _dataset.OUTCOME_HEADER,
                       [(o.seed, o.collided, o.min_gap, o.stop_time)
                        for o in outcomes])

    if CONF.command.traces_dir:
        os.makedirs(CONF.command.traces_dir, exist_ok=True)
        for o in outcomes:
            _dataset.write_csv(
                os.path.join(CONF.command.traces_dir,
                             'trace-%d.csv' % o.seed),
                ('step', 't', 'risk'),
                [(i, (i + 1) * scenario.dt, r)
                 for i, r in enumerate(o.risk_trace)])

    avoided = sum(1 for o in outcomes if not o.collided)
    LOG.info('avoided collisions in %d of %d runs', avoided, len(outcomes))


def do_demo_data():
    pipeline = build_pipeline_config(CONF)
    out = CONF.command.output_dir
    os.makedirs(out, exist_ok=True)
    docs = _synthetic.write_corpus(out, CONF.command.frames,
                                   pipeline.optimizer.seed)
    dataset = os.path.join(out, 'frames.jsonl')
    _dataset.write_jsonl(docs, dataset)

    monitor = make_monitor(pipeline, os.path.join(out, 'mean.dm01'))
    samples = build_targets(_dataset.load_dataset(dataset), monitor,
                            pipeline.thresholds, pipeline.workers)
    _dataset.write_samples(samples, os.path.join(out, 'samples.csv'))


def add_command_parsers(subparsers):
    parser = subparsers.add_parser(
        'retrieve', help='Retrieve safety-critical objects of a depth map.')
    parser.add_argument('--depth-map', required=True)
    parser.add_argument('--mean-map')
    parser.add_argument('--output', required=True)
    parser.set_defaults(func=do_retrieve)

    parser = subparsers.add_parser(
        'mean-map', help='Average inverted depth maps into a mean map.')
    parser.add_argument('--output', required=True)
    parser.add_argument('maps', nargs='+', metavar='DEPTH_MAP')
    parser.set_defaults(func=do_mean_map)

    parser = subparsers.add_parser(
        'monitor', help='Estimate the risk of every frame of a dataset.')
    parser.add_argument('--dataset', required=True)
    parser.add_argument('--output', required=True)
    parser.set_defaults(func=do_monitor)

    parser = subparsers.add_parser(
        'targets', help='Build fuzzy system training samples.')
    parser.add_argument('--dataset', required=True)
    parser.add_argument('--output', required=True)
    parser.set_defaults(func=do_targets)

    parser = subparsers.add_parser(
        'fit-fis', help='Construct a fuzzy system.')
    parser.add_argument('--mode', required=True, choices=_tuning.MODES)
    parser.add_argument('--samples')
    parser.add_argument('--output', required=True)
    parser.add_argument('--surface')
    parser.set_defaults(func=do_fit_fis)

    parser = subparsers.add_parser(
        'eval', help='Correlation, recall and RMSE reports of a dataset.')
    parser.add_argument('--dataset', required=True)
    parser.add_argument('--samples')
    parser.add_argument('--fis', dest='fis_path')
    parser.add_argument('--variants', action='store_true')
    parser.add_argument('--output-dir', required=True)
    parser.set_defaults(func=do_eval)

    parser = subparsers.add_parser(
        'simulate', help='Run the closed-loop scenario sweep.')
    parser.add_argument('--output', required=True)
    parser.add_argument('--runs', type=int, default=100)
    parser.add_argument('--no-shield', action='store_true')
    parser.add_argument('--traces-dir')
    parser.set_defaults(func=do_simulate)

    parser = subparsers.add_parser(
        'demo-data', help='Generate the synthetic demo corpus.')
    parser.add_argument('--output-dir', required=True)
    parser.add_argument('--frames', type=int, default=20,
                        help='Frames per condition.')
    parser.set_defaults(func=do_demo_data)


_CLI_OPTS = [
    cfg.StrOpt('config', help='JSON document of option overrides.'),
    cfg.IntOpt('seed', min=0, help='Random seed of optimizers and sweeps.'),
    cfg.FloatOpt('alpha', help='Override of [matching] alpha.'),
    cfg.FloatOpt('beta', help='Override of [matching] beta.'),
    cfg.SubCommandOpt('command', title='Commands', dest='command',
                      handler=add_command_parsers),
]
CONF.register_cli_opts(_CLI_OPTS)
logging.register_options(CONF)


def main(argv=None):
    CONF(sys.argv[1:] if argv is None else argv,
         project='perception-monitor', default_config_files=[])
    logging.setup(CONF, 'perceptionmonitor')
    try:
        if CONF.config:
            apply_config_document(CONF, CONF.config)
        _apply_flags(CONF)
        CONF.command.func()
    except MonitorError as err:
        sys.exit('ERROR: %s' % err)


if __name__ == '__main__':
    main()
