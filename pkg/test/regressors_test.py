#! /usr/bin/python3

import collections
import unittest

import numpy

from streetdep import regressors
from streetdep.errors import ConfigError
from streetdep.errors import InputError


def LinearData(seed, n=40):
  rng = numpy.random.default_rng(seed)
  X = rng.normal(size=(n, 2))
  return X, 1.0 + 2.0 * X[:, 0] - 3.0 * X[:, 1]


class OlsTest(unittest.TestCase):
  def testRecoversCoefficients(self):
    X, y = LinearData(0)
    model = regressors.fit_ols(X, y)
    self.assertAlmostEqual(1.0, model.intercept, places=10)
    numpy.testing.assert_allclose([2.0, -3.0], model.coef, atol=1e-10)
    self.assertEqual(0.0, model.ridge)

  def testAttributionsAddUp(self):
    X, y = LinearData(1)
    model = regressors.fit_ols(X, y)
    phi = model.attributions(X)
    base = model.predict(X).mean()
    numpy.testing.assert_allclose(model.predict(X), base + phi.sum(axis=1),
                                  atol=1e-10)

  def testFewRowsGetsRidge(self):
    with self.assertLogs(level='WARNING'):
      model = regressors.fit_ols([[1.0, 2.0]], [3.0])
    self.assertEqual(regressors.RIDGE_JITTER, model.ridge)

  def testCollinearGetsRidge(self):
    X = numpy.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0]])
    with self.assertLogs(level='WARNING'):
      model = regressors.fit_ols(X, [1.0, 2.0, 3.0, 4.0])
    self.assertTrue(numpy.isfinite(model.coef).all())

  def testConstantColumnIsDropped(self):
    X, y = LinearData(2)
    X = numpy.column_stack([X, numpy.full(len(X), 7.0)])
    with self.assertLogs(level='DEBUG') as logs:
      model = regressors.fit_ols(X, y)
    self.assertFalse([r for r in logs.records if r.levelname == 'WARNING'])
    self.assertEqual(0.0, model.ridge)
    numpy.testing.assert_allclose([2.0, -3.0, 0.0], model.coef, atol=1e-10)
    self.assertAlmostEqual(1.0, model.intercept, places=10)


class CrossValidateTest(unittest.TestCase):
  def testFoldSizes(self):
    X, y = LinearData(2, n=23)
    report = regressors.cross_validate(X, y, regressors.ModelSpec('ols'),
                                       k=5, seed=1)
    self.assertEqual(23, sum(report.fold_sizes))
    self.assertTrue(max(report.fold_sizes) - min(report.fold_sizes) <= 1)
    self.assertEqual(5, len(report.r2))
    self.assertEqual(regressors.fold_seed(1), report.fold_seed)
    for r2 in report.r2:
      self.assertAlmostEqual(1.0, r2, places=9)

  def testDeterministic(self):
    X, y = LinearData(3, n=50)
    y = y + numpy.sin(5 * X[:, 0])
    spec = regressors.ModelSpec(
        'gbdt', regressors.Hyperparams(n_estimators=10, max_depth=2))
    a = regressors.cross_validate(X, y, spec, k=5, seed=7)
    b = regressors.cross_validate(X, y, spec, k=5, seed=7, threads=3)
    self.assertEqual(a.r2, b.r2)
    self.assertEqual(a.rmse, b.rmse)
    c = regressors.cross_validate(X, y, spec, k=5, seed=8)
    self.assertNotEqual(a.r2, c.r2)

  def testRandomForest(self):
    X, y = LinearData(4, n=60)
    spec = regressors.ModelSpec('rf', regressors.RfParams(n_estimators=20,
                                                          max_depth=4))
    a = regressors.cross_validate(X, y, spec, k=3, seed=5)
    b = regressors.cross_validate(X, y, spec, k=3, seed=5)
    self.assertEqual(a.r2, b.r2)
    self.assertTrue(a.mean_r2 > 0.3)

  def testConstantTarget(self):
    X = numpy.arange(10.0).reshape(5, 2)
    with self.assertLogs(level='WARNING'):
      report = regressors.cross_validate(X, numpy.ones(5),
                                         regressors.ModelSpec('ols'), k=5)
    self.assertEqual([None] * 5, report.r2)
    self.assertTrue(numpy.isnan(report.mean_r2))
    self.assertAlmostEqual(0.0, report.mean_rmse, places=6)

  def testBadK(self):
    X, y = LinearData(5, n=4)
    spec = regressors.ModelSpec('ols')
    self.assertRaises(ConfigError, regressors.cross_validate, X, y, spec, k=1)
    self.assertRaises(InputError, regressors.cross_validate, X, y, spec, k=5)
    self.assertRaises(ConfigError, regressors.ModelSpec, 'svm')

  def testReport(self):
    report = regressors.CvReport([0.5, 0.7, None], [1.0, 2.0, 3.0], 11,
                                 [3, 3, 2], label='gbdt')
    self.assertAlmostEqual(0.6, report.mean_r2, places=12)
    self.assertAlmostEqual(numpy.sqrt(0.02), report.std_r2, places=12)
    low, high = report.band()
    self.assertAlmostEqual(0.6 - 3 * numpy.sqrt(0.02), low, places=12)
    self.assertTrue(report.format().startswith('gbdt   R2 0.6000'))
    self.assertTrue(numpy.isnan(report.to_frame()['r2'][2]))


class RandomSearchTest(unittest.TestCase):
  def testSmallSpaceIsExhaustive(self):
    X, y = LinearData(6, n=30)
    space = collections.OrderedDict([('max_depth', [1, 2])])
    base = regressors.Hyperparams(n_estimators=5, seed=3)
    best, log = regressors.random_search(X, y, space, n_draws=5, k=3,
                                         seed=3, base=base)
    self.assertEqual(2, len(log))
    self.assertEqual([1, 2], sorted(p.max_depth for _, p, _ in log.rows))
    self.assertEqual(log.best()[1], best)
    self.assertEqual(5, best.n_estimators)
    frame = log.to_frame()
    self.assertEqual(['draw', 'n_estimators', 'max_depth'],
                     list(frame.columns[:3]))

  def testBestTieBreak(self):
    log = regressors.SearchLog()
    log.add(0, 'a', regressors.CvReport([0.5], [2.0], 1, [5]))
    log.add(1, 'b', regressors.CvReport([0.5], [1.0], 1, [5]))
    log.add(2, 'c', regressors.CvReport([0.5], [1.0], 1, [5]))
    log.add(3, 'd', regressors.CvReport([None], [0.1], 1, [5]))
    self.assertEqual('b', log.best()[1])

  def testEmptySpace(self):
    self.assertRaises(ConfigError, regressors.random_search, [[1.0]], [1.0],
                      {})
    self.assertRaises(ConfigError, regressors.random_search, [[1.0]], [1.0],
                      {'max_depth': []})


if __name__ == '__main__':
  unittest.main()
