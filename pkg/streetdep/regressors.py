"""The regression model family: boosted trees, random forest and OLS.

Models are compared by k-fold cross-validation. A model spec is anything
with a fit(X, y) method returning an object with predict(X); ModelSpec
covers the three built-in kinds.

Example:

  from streetdep import regressors
  report = regressors.cross_validate(
      X, y, regressors.ModelSpec('gbdt', regressors.Hyperparams()), k=10,
      seed=42)
  print(report.format())
  best, log = regressors.random_search(X, y, regressors.XGB_SPACE,
                                       n_draws=30, k=10, seed=42)
"""

import collections
import logging
import warnings

import numpy
import pandas
import sklearn.ensemble
import sklearn.model_selection

from streetdep import gbdt
from streetdep import schema
from streetdep import util
from streetdep.errors import ConfigError
from streetdep.errors import InputError
from streetdep.gbdt import Hyperparams

RIDGE_JITTER = 1e-8

XGB_SPACE = collections.OrderedDict([
    ('max_depth', [3, 4, 5, 6, 8]),
    ('learning_rate', [0.01, 0.05, 0.1, 0.2]),
    ('subsample', [0.6, 0.8, 1.0]),
    ('colsample_bytree', [0.6, 0.8, 1.0]),
    ('gamma', [0, 0.1, 0.5, 1]),
])

RF_SPACE = collections.OrderedDict([
    ('max_depth', [4, 6, 8]),
    ('n_estimators', [100, 150, 200, 300]),
    ('max_features', ['auto', 'sqrt', 'log2']),
])


class OlsModel(object):
  """y = intercept + X coef, fit by the normal equations."""

  def __init__(self, intercept, coef, x_mean, ridge=0.0):
    self.intercept = float(intercept)
    self.coef = numpy.asarray(coef, dtype=float)
    self.x_mean = numpy.asarray(x_mean, dtype=float)
    self.ridge = ridge

  def predict(self, X):
    return self.intercept + numpy.asarray(X, dtype=float) @ self.coef

  def attributions(self, X):
    """Return coef_i * (x_i - mean_i): the exact SHAP values of a linear model."""
    return (numpy.asarray(X, dtype=float) - self.x_mean) * self.coef


def fit_ols(X, y):
  """Fit by the normal equations; constant columns get coefficient 0."""
  X = numpy.asarray(X, dtype=float)
  y = numpy.asarray(y, dtype=float)
  varying = numpy.ones(X.shape[1], dtype=bool)
  if len(X) > 1:
    varying = numpy.ptp(X, axis=0) > 0
  if not varying.all():
    logging.debug('OLS drops %d constant column(s)' % (~varying).sum())
  design = numpy.column_stack([numpy.ones(len(X)), X[:, varying]])
  gram = design.T @ design
  ridge = 0.0
  if len(X) < design.shape[1]:
    logging.warning('OLS with %d rows for %d coefficients; ridge %g applied' %
                    (len(X), design.shape[1], RIDGE_JITTER))
    ridge = RIDGE_JITTER
  elif numpy.linalg.matrix_rank(design) < design.shape[1]:
    logging.warning('OLS columns are collinear; ridge %g applied' %
                    RIDGE_JITTER)
    ridge = RIDGE_JITTER
  beta = numpy.linalg.solve(gram + ridge * numpy.eye(len(gram)), design.T @ y)
  coef = numpy.zeros(X.shape[1])
  coef[varying] = beta[1:]
  return OlsModel(beta[0], coef, X.mean(axis=0), ridge)


class RfParams(object):
  """Random-forest parameters; max_features 'auto' means all features."""

  FIELDS = ('n_estimators', 'max_depth', 'max_features', 'seed')

  __slots__ = FIELDS

  def __init__(self, n_estimators=200, max_depth=8, max_features='sqrt',
               seed=42):
    self.n_estimators = int(n_estimators)
    self.max_depth = int(max_depth)
    self.max_features = max_features
    self.seed = int(seed)
    if self.n_estimators < 1 or self.max_depth < 1:
      raise ConfigError('n_estimators and max_depth must be >= 1')
    if max_features not in ('auto', 'sqrt', 'log2') and not (
        isinstance(max_features, float) and 0 < max_features <= 1):
      raise ConfigError('bad max_features %r' % (max_features,))

  def __repr__(self):
    return 'RfParams(%s)' % ', '.join(
        '%s=%r' % (k, getattr(self, k)) for k in self.FIELDS)

  def as_dict(self):
    return collections.OrderedDict((k, getattr(self, k)) for k in self.FIELDS)

  def replace(self, **kwargs):
    values = self.as_dict()
    values.update(kwargs)
    return RfParams(**values)


def fit_rf(X, y, params):
  max_features = params.max_features
  if max_features == 'auto':
    max_features = 1.0
  seed = int(util.make_rng(params.seed, 'rf').integers(2 ** 31 - 1))
  model = sklearn.ensemble.RandomForestRegressor(
      n_estimators=params.n_estimators, max_depth=params.max_depth,
      max_features=max_features, bootstrap=True, random_state=seed, n_jobs=1)
  return model.fit(numpy.asarray(X, dtype=float), numpy.asarray(y, dtype=float))


def fit_baselines(X, y, params=None):
  """Return {'ols': OlsModel, 'rf': fitted RandomForestRegressor}."""
  if params is None:
    params = RfParams()
  return {'ols': fit_ols(X, y), 'rf': fit_rf(X, y, params)}


class ModelSpec(object):
  """A model kind ('gbdt', 'rf' or 'ols') with its parameters."""

  KINDS = ('gbdt', 'rf', 'ols')

  def __init__(self, kind, params=None, feature_names=None):
    if kind not in self.KINDS:
      raise ConfigError('unknown model kind %r' % (kind,))
    if params is None:
      params = {'gbdt': Hyperparams, 'rf': RfParams}.get(kind, dict)()
    self.kind = kind
    self.params = params
    self.feature_names = feature_names

  def __repr__(self):
    return 'ModelSpec(%r, %r)' % (self.kind, self.params)

  def fit(self, X, y):
    if self.kind == 'gbdt':
      return gbdt.fit_gbdt(X, y, self.params, self.feature_names)
    if self.kind == 'rf':
      return fit_rf(X, y, self.params)
    return fit_ols(X, y)


def r2_score(y, y_hat):
  """Return 1 - SS_res / SS_tot, or None if y is constant."""
  ss_tot = float(((y - y.mean()) ** 2).sum())
  if ss_tot == 0:
    return None
  return 1.0 - float(((y - y_hat) ** 2).sum()) / ss_tot


def rmse(y, y_hat):
  return float(numpy.sqrt(((y - y_hat) ** 2).mean()))


def _mean_std(values):
  values = [v for v in values if v is not None]
  if not values:
    return float('nan'), float('nan')
  if len(values) == 1:
    return float(values[0]), 0.0
  return float(numpy.mean(values)), float(numpy.std(values, ddof=1))


class CvReport(object):
  """Per-fold R2 and RMSE of one model spec; None marks an undefined R2."""

  def __init__(self, r2, rmse, fold_seed, fold_sizes, label=''):
    self.r2 = list(r2)
    self.rmse = list(rmse)
    self.fold_seed = fold_seed
    self.fold_sizes = list(fold_sizes)
    self.label = label
    self.mean_r2, self.std_r2 = _mean_std(self.r2)
    self.mean_rmse, self.std_rmse = _mean_std(self.rmse)

  def band(self, width=3.0):
    """Return mean R2 -/+ width sample standard deviations."""
    return (self.mean_r2 - width * self.std_r2,
            self.mean_r2 + width * self.std_r2)

  def format(self):
    return '%-6s R2 %.4f ± %.4f  RMSE %.4f ± %.4f  (%d folds, seed %d)' % (
        self.label, self.mean_r2, self.std_r2, self.mean_rmse, self.std_rmse,
        len(self.r2), self.fold_seed)

  def to_frame(self):
    return pandas.DataFrame({
        'fold': numpy.arange(len(self.r2)),
        'size': self.fold_sizes,
        'r2': [numpy.nan if v is None else v for v in self.r2],
        'rmse': self.rmse,
    })


def fold_seed(seed):
  return int(util.make_rng(seed, 'cv').integers(2 ** 32 - 1))


def cross_validate(X, y, spec, k=10, seed=42, threads=1, label=''):
  """Return the CvReport of spec under seeded, shuffled k-fold splitting.

  Rows are shuffled once, then cut into k contiguous folds whose sizes
  differ by at most one. Folds are fit independently (threads <= 1 runs
  them in order) and reported in fold order.
  """
  X = numpy.asarray(X, dtype=float)
  y = numpy.asarray(y, dtype=float)
  if k < 2:
    raise ConfigError('k must be >= 2, got %r' % k)
  if len(y) < k:
    raise InputError('%d rows cannot make %d folds' % (len(y), k))
  seed_value = fold_seed(seed)
  splitter = sklearn.model_selection.KFold(n_splits=k, shuffle=True,
                                           random_state=seed_value)
  folds = list(splitter.split(X))

  def RunFold(fold):
    train, test = fold
    model = spec.fit(X[train], y[train])
    y_hat = model.predict(X[test])
    return r2_score(y[test], y_hat), rmse(y[test], y_hat)

  results = util.parallel_map(RunFold, folds, threads)
  for i, (r2, _) in enumerate(results):
    if r2 is None:
      logging.warning('fold %d has a constant target; R2 excluded' % i)
  return CvReport([r for r, _ in results], [e for _, e in results],
                  seed_value, [len(test) for _, test in folds], label)


class SearchLog(object):
  """All draws of a random search, in draw order."""

  def __init__(self):
    self.rows = []

  def __len__(self):
    return len(self.rows)

  def add(self, draw, params, report):
    self.rows.append((draw, params, report))

  def best(self):
    """Highest mean R2, then lower mean RMSE, then earlier draw."""
    def Key(row):
      draw, _, report = row
      r2 = report.mean_r2 if numpy.isfinite(report.mean_r2) else -numpy.inf
      return (-r2, report.mean_rmse, draw)
    return min(self.rows, key=Key)

  def to_frame(self):
    records = []
    for draw, params, report in self.rows:
      record = collections.OrderedDict([('draw', draw)])
      record.update(params.as_dict())
      record.update([('mean_r2', report.mean_r2), ('std_r2', report.std_r2),
                     ('mean_rmse', report.mean_rmse),
                     ('std_rmse', report.std_rmse)])
      records.append(record)
    return pandas.DataFrame(records)

  def write(self, path):
    self.to_frame().to_csv(path, index=False,
                           float_format=schema.CSV_FLOAT_FORMAT,
                           lineterminator='\n')


def random_search(X, y, space, n_draws=30, k=10, seed=42, base=None,
                  kind='gbdt', feature_names=None, threads=1):
  """Return (best params, SearchLog) over n_draws points of space.

  Draws come from sklearn's ParameterSampler without replacement; a space
  with fewer than n_draws points is evaluated exhaustively. Every draw is
  cross-validated on the same folds.
  """
  if not space or not all(space.values()):
    raise ConfigError('empty search space')
  if base is None:
    base = Hyperparams(seed=seed) if kind == 'gbdt' else RfParams(seed=seed)
  sampler_seed = int(util.make_rng(seed, 'search').integers(2 ** 32 - 1))
  with warnings.catch_warnings():
    warnings.simplefilter('ignore', UserWarning)
    draws = list(sklearn.model_selection.ParameterSampler(
        space, n_iter=n_draws, random_state=sampler_seed))
  candidates = [base.replace(**draw) for draw in draws]

  def RunDraw(params):
    return cross_validate(X, y, ModelSpec(kind, params, feature_names), k,
                          seed)

  log = SearchLog()
  reports = util.parallel_map(RunDraw, candidates, threads)
  for i, (params, report) in enumerate(zip(candidates, reports)):
    log.add(i, params, report)
    logging.info('draw %d/%d %r: R2 %.4f ± %.4f' %
                 (i + 1, len(candidates), params, report.mean_r2,
                  report.std_r2))
  _, best, _ = log.best()
  return best, log
