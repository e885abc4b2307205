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

"""Derivative-free fitting of the fuzzy system to 1 - USC targets.

Two disjoint parameterizations are offered: the membership function
vertices, tuned with a coordinate pattern search per cross-validation
fold and selected by held-out RMSE, and the consequent of every rule grid
cell, learned with a particle swarm against the training RMSE.
"""

import collections

import numpy as np
from oslo_log import log as logging

from perceptionmonitor import _fuzzy
from perceptionmonitor import _metrics
from perceptionmonitor._exceptions import ConfigError
from perceptionmonitor._exceptions import FISError
from perceptionmonitor._exceptions import MonitorError

LOG = logging.getLogger(__name__)

TrainingSample = collections.namedtuple(
    'TrainingSample',
    ['frame_id', 'condition', 'mean_iou', 'mean_rdd', 'target'])

MODES = ('handcrafted', 'tune-mf', 'learn-rules')

OptimizerConfig = collections.namedtuple(
    'OptimizerConfig',
    ['mode', 'iterations', 'swarm_size', 'swarm_iterations', 'folds', 'seed',
     'initial_mesh', 'min_mesh', 'inertia', 'cognitive', 'social',
     'hybrid_polish'],
    defaults=('tune-mf', 1000, 100, 20, 5, 0, 0.1, 1e-6, 0.729, 1.49445,
              1.49445, True))

SearchResult = collections.namedtuple('SearchResult',
                                      ['params', 'cost', 'history'])
VariantResult = collections.namedtuple(
    'VariantResult', ['name', 'fis', 'train_rmse', 'test_rmse'])


def validate_optimizer_config(cfg):
    if cfg.mode not in MODES:
        raise ConfigError('unknown optimizer mode %r' % (cfg.mode,))
    if cfg.iterations < 1 or cfg.swarm_iterations < 1:
        raise ConfigError('optimizer iterations must be >= 1')
    if cfg.swarm_size < 1:
        raise ConfigError('swarm_size must be >= 1')
    if cfg.folds < 2:
        raise ConfigError('folds must be >= 2')
    if not 0 < cfg.min_mesh <= cfg.initial_mesh:
        raise ConfigError('pattern search needs 0 < min_mesh <= '
                          'initial_mesh')
    return cfg


def _bounds(bounds, dims):
    bounds = np.asarray(bounds, dtype=np.float64).reshape(-1, 2)
    if len(bounds) == 1 and dims > 1:
        bounds = np.repeat(bounds, dims, axis=0)
    if len(bounds) != dims:
        raise MonitorError('expected %d bounds, got %d' % (dims, len(bounds)))
    lower, upper = bounds[:, 0], bounds[:, 1]
    if np.any(upper < lower):
        raise MonitorError('lower bound exceeds upper bound')
    return lower, upper


def _evaluate(objective, x):
    cost = float(objective(x))
    return cost if np.isfinite(cost) else np.inf


def pattern_search(objective, init, bounds, cfg):
    """Minimize objective by polling +/- mesh along every coordinate.

    The incumbent moves to the best strictly improving poll point and the
    mesh doubles; without improvement the mesh halves. Poll points with a
    non-finite cost are skipped.

    Parameters:
        objective: callable mapping a parameter vector to a cost
        init: starting point, clipped into bounds
        bounds: (lo, hi) per coordinate, or one pair for all
        cfg: OptimizerConfig (iterations, initial_mesh, min_mesh)
    """
    best = np.array(init, dtype=np.float64)
    lower, upper = _bounds(bounds, best.size)
    best = np.clip(best, lower, upper)
    best_cost = _evaluate(objective, best)
    if not np.isfinite(best_cost):
        raise MonitorError('pattern search start point is infeasible')

    mesh = cfg.initial_mesh
    max_mesh = float(np.max(upper - lower)) or cfg.initial_mesh
    history = [best_cost]
    skipped = 0
    for iteration in range(cfg.iterations):
        if mesh < cfg.min_mesh:
            break
        move, move_cost = None, best_cost
        for i in range(best.size):
            for step in (mesh, -mesh):
                trial = best.copy()
                trial[i] = min(max(trial[i] + step, lower[i]), upper[i])
                if trial[i] == best[i]:
                    continue
                cost = _evaluate(objective, trial)
                if not np.isfinite(cost):
                    skipped += 1
                    continue
                if cost < move_cost:
                    move, move_cost = trial, cost
        if move is not None:
            best, best_cost = move, move_cost
            mesh = min(mesh * 2.0, max_mesh)
        else:
            mesh *= 0.5
        history.append(best_cost)
        LOG.debug('pattern search iteration %d: cost=%.6g mesh=%.3g',
                  iteration, best_cost, mesh)

    if skipped:
        LOG.warning('pattern search skipped %d infeasible poll points',
                    skipped)
    return SearchResult(best, best_cost, history)


def particle_swarm(objective, dims, bounds, cfg, initial=None):
    """Minimize objective with a constricted global-best particle swarm.

    Parameters:
        objective: callable mapping a parameter vector to a cost
        dims: dimension of the search space
        bounds: (lo, hi) per coordinate, or one pair for all
        cfg: OptimizerConfig (swarm_size, swarm_iterations, inertia,
             cognitive, social, seed)
        initial: optional points injected as the first particles
    """
    if dims < 1:
        raise MonitorError('particle swarm needs at least one dimension')
    lower, upper = _bounds(bounds, dims)
    span = upper - lower
    rng = np.random.default_rng(cfg.seed)

    pos = rng.uniform(lower, upper, size=(cfg.swarm_size, dims))
    if initial is not None:
        seeds = np.atleast_2d(np.asarray(initial, dtype=np.float64))
        count = min(len(seeds), cfg.swarm_size)
        pos[:count] = np.clip(seeds[:count], lower, upper)
    vel = rng.uniform(-span, span, size=(cfg.swarm_size, dims))

    cost = np.array([_evaluate(objective, p) for p in pos])
    pbest, pbest_cost = pos.copy(), cost.copy()
    g = int(np.argmin(pbest_cost))
    gbest, gbest_cost = pbest[g].copy(), float(pbest_cost[g])
    history = [gbest_cost]

    for generation in range(1, cfg.swarm_iterations):
        r1 = rng.random((cfg.swarm_size, dims))
        r2 = rng.random((cfg.swarm_size, dims))
        vel = (cfg.inertia * vel
               + cfg.cognitive * r1 * (pbest - pos)
               + cfg.social * r2 * (gbest - pos))
        vel = np.clip(vel, -span, span)
        pos = np.clip(pos + vel, lower, upper)

        cost = np.array([_evaluate(objective, p) for p in pos])
        improved = cost < pbest_cost
        pbest[improved] = pos[improved]
        pbest_cost[improved] = cost[improved]
        g = int(np.argmin(pbest_cost))
        if pbest_cost[g] < gbest_cost:
            gbest, gbest_cost = pbest[g].copy(), float(pbest_cost[g])
        history.append(gbest_cost)
        LOG.debug('swarm generation %d: best cost %.6g', generation,
                  gbest_cost)

    return SearchResult(gbest, gbest_cost, history)


def kfold_split(n, k, seed):
    """Partition range(n) into k seeded folds of near-equal size."""
    if k < 2:
        raise MonitorError('need at least two folds, got %d' % k)
    if n < k:
        raise MonitorError('cannot split %d samples into %d folds' % (n, k))
    perm = np.random.default_rng(seed).permutation(n)
    return [sorted(int(i) for i in fold) for fold in np.array_split(perm, k)]


def holdout_split(samples, test_fraction, seed):
    """Hold out a share of the samples of every condition for testing.

    Returns (train, test), each in input order.
    """
    if not 0 < test_fraction < 1:
        raise MonitorError('test_fraction must lie in (0, 1)')
    samples = list(samples)
    groups = collections.OrderedDict()
    for idx, sample in enumerate(samples):
        groups.setdefault(sample.condition, []).append(idx)

    rng = np.random.default_rng(seed)
    held_out = set()
    for indices in groups.values():
        n_test = int(round(len(indices) * test_fraction))
        chosen = rng.permutation(len(indices))[:n_test]
        held_out.update(indices[i] for i in chosen)
    train = [s for i, s in enumerate(samples) if i not in held_out]
    test = [s for i, s in enumerate(samples) if i in held_out]
    return train, test


def _arrays(samples):
    samples = list(samples)
    if not samples:
        raise MonitorError('no training samples')
    points = np.array([[s.mean_rdd, s.mean_iou] for s in samples])
    targets = np.array([s.target for s in samples])
    return points, targets


def evaluate_fis(fis, samples):
    """Root mean squared error of the system over the samples."""
    points, targets = _arrays(samples)
    return _metrics.rmse(_fuzzy.infer_batch(fis, points), targets)


def _variables(fis):
    return tuple(fis.inputs) + (fis.output,)


def _encode_mfs(fis):
    params = []
    for var in _variables(fis):
        lo, hi = var.domain
        for term in var.terms:
            params.extend((v - lo) / (hi - lo) for v in term.mf)
    return np.array(params)


def _decode_mfs(fis, params):
    variables = []
    offset = 0
    for var in _variables(fis):
        lo, hi = var.domain
        terms = []
        for term in var.terms:
            # repair a <= b <= c <= d by sorting
            unit = np.sort(params[offset:offset + 4])
            offset += 4
            terms.append(term._replace(mf=_fuzzy.MembershipFunction(
                *[float(lo + u * (hi - lo)) for u in unit])))
        variables.append(var._replace(terms=tuple(terms)))
    return fis._replace(inputs=tuple(variables[:-1]), output=variables[-1])


def tune_mfs(fis, samples, cfg):
    """Tune all membership function vertices with pattern search.

    Every fold runs its own search on the remaining folds and is scored on
    the held-out fold; the candidate with the lowest validation RMSE wins.
    Vertex sets that leave part of a domain uncovered are infeasible. The
    start point is kept when no candidate beats it on the full data. The
    rule base is preserved.
    """
    _fuzzy.validate(fis)
    points, targets = _arrays(samples)
    folds = kfold_split(len(targets), cfg.folds, cfg.seed)

    def training_objective(train):
        def objective(params):
            candidate = _decode_mfs(fis, params)
            try:
                _fuzzy.validate(candidate)
            except FISError:
                return np.inf
            estimates = _fuzzy.infer_batch(candidate, points[train],
                                           check=False)
            return _metrics.rmse(estimates, targets[train])
        return objective

    init = _encode_mfs(fis)
    bounds = [(0.0, 1.0)] * init.size
    best, best_score = None, np.inf
    for idx, held_out in enumerate(folds):
        train = np.setdiff1d(np.arange(len(targets)), held_out)
        result = pattern_search(training_objective(train), init, bounds, cfg)
        candidate = _decode_mfs(fis, result.params)
        score = _metrics.rmse(
            _fuzzy.infer_batch(candidate, points[held_out], check=False),
            targets[held_out])
        LOG.debug('membership tuning fold %d: train rmse %.6g, '
                  'validation rmse %.6g', idx, result.cost, score)
        if score < best_score:
            best, best_score = candidate, score

    before = evaluate_fis(fis, samples)
    after = evaluate_fis(best, samples)
    LOG.info('membership tuning: best validation rmse %.6g, rmse %.6g -> '
             '%.6g', best_score, before, after)
    if after > before:
        LOG.warning('tuned membership functions do not improve the rmse, '
                    'keeping the initial ones')
        return fis
    return best


def _decode_table(params, n_terms):
    return tuple(int(min(max(np.floor(p), 0), n_terms - 1)) for p in params)


def learn_rules(fis, samples, cfg):
    """Learn the consequent of every rule grid cell with a particle swarm.

    Each cell's consequent is a continuous code in [0, n_terms) decoded by
    floor. The current table is injected as one particle and, with
    hybrid_polish, the swarm's best table is refined by single-cell sweeps.
    Membership functions are preserved.
    """
    _fuzzy.validate(fis)
    points, targets = _arrays(samples)
    cells = _fuzzy.rule_grid(fis)
    n_terms = len(fis.output.terms)
    strengths = _fuzzy.rule_strengths(fis, points, cells)
    cache = {}

    def table_cost(table):
        if table not in cache:
            act = _fuzzy.activation(strengths, table, n_terms)
            cache[table] = _metrics.rmse(_fuzzy.defuzzify(fis, act), targets)
        return cache[table]

    def objective(params):
        return table_cost(_decode_table(params, n_terms))

    start = tuple(_fuzzy.consequent_table(fis))
    upper = np.nextafter(float(n_terms), 0.0)
    result = particle_swarm(objective, len(cells), (0.0, upper), cfg,
                            initial=[np.array(start) + 0.5])
    table = _decode_table(result.params, n_terms)
    best = table_cost(table)

    if cfg.hybrid_polish:
        improved = True
        while improved:
            improved = False
            for j in range(len(cells)):
                for term in range(n_terms):
                    if term == table[j]:
                        continue
                    trial = table[:j] + (term,) + table[j + 1:]
                    cost = table_cost(trial)
                    if cost < best:
                        table, best, improved = trial, cost, True

    LOG.info('rule learning: training rmse %.6g -> %.6g (%d tables)',
             table_cost(start), best, len(cache))
    return _fuzzy.with_consequents(fis, table)


def fit_fis(fis, samples, cfg):
    """Fit the system with the approach named by cfg.mode."""
    validate_optimizer_config(cfg)
    if cfg.mode == 'handcrafted':
        return _fuzzy.validate(fis)
    if cfg.mode == 'tune-mf':
        return tune_mfs(fis, samples, cfg)
    return learn_rules(fis, samples, cfg)


def compare_variants(train, test, fis, cfg):
    """Fit all three construction approaches and score them on test data.

    Returns a VariantResult per approach in MODES order.
    """
    results = []
    for mode in MODES:
        fitted = fit_fis(fis, train, cfg._replace(mode=mode))
        results.append(VariantResult(mode, fitted,
                                     evaluate_fis(fitted, train),
                                     evaluate_fis(fitted, test)))
        LOG.info('%s: train rmse %.6g, test rmse %.6g', mode,
                 results[-1].train_rmse, results[-1].test_rmse)
    return results
