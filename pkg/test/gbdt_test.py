#! /usr/bin/python3

import os
import shutil
import tempfile
import unittest

import numpy

from streetdep import gbdt
from streetdep.errors import ConfigError
from streetdep.errors import InputError
from streetdep.errors import ModelIntegrityError

EXACT = dict(subsample=1.0, colsample_bytree=1.0, gamma=0.0, lambda_=0.0,
             min_child_weight=0.0)


def RandomData(seed, n=120, p=5):
  rng = numpy.random.default_rng(seed)
  X = rng.normal(size=(n, p))
  y = numpy.sin(X[:, 0]) + X[:, 1] * X[:, 2] + 0.1 * rng.normal(size=n)
  return X, y


class FitTest(unittest.TestCase):
  def testSingleSplit(self):
    X = [[0.0], [1.0], [2.0], [3.0]]
    params = gbdt.Hyperparams(n_estimators=1, max_depth=1, learning_rate=1.0,
                              **EXACT)
    model = gbdt.fit_gbdt(X, [0.0, 0.0, 1.0, 1.0], params)
    tree = model.trees[0]
    self.assertEqual(3, len(tree))
    self.assertEqual((0, 0, 1.5, 1, 2), tuple(tree.node(0))[:5])
    self.assertEqual([-0.5, 0.5], list(tree.value[1:]))
    self.assertEqual([4.0, 2.0, 2.0], list(tree.cover))
    self.assertEqual([0.0, 0.0, 1.0, 1.0], list(model.predict(X)))
    self.assertEqual(['f0'], model.feature_names)

  def testDepthZeroPredictsMean(self):
    X, y = RandomData(1)
    model = gbdt.fit_gbdt(X, y, gbdt.Hyperparams(n_estimators=5, max_depth=0,
                                                      subsample=1.0))
    self.assertEqual([1] * 5, [len(t) for t in model.trees])
    numpy.testing.assert_allclose(numpy.full(len(y), y.mean()),
                                  model.predict(X), atol=1e-12)

  def testEqualGainPrefersLowerFeature(self):
    X = numpy.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    params = gbdt.Hyperparams(n_estimators=1, max_depth=1, **EXACT)
    model = gbdt.fit_gbdt(X, [0.0, 0.0, 1.0, 1.0], params)
    self.assertEqual(0, model.trees[0].node(0).feature)

  def testWideFrontier(self):
    n = 1 << 16
    i = numpy.arange(n)
    X = i[:, None].astype(float)
    y = sum(((i >> b) & 1) * 4.0 ** b for b in range(16))
    params = gbdt.Hyperparams(n_estimators=1, max_depth=16, learning_rate=1.0,
                              **EXACT)
    model = gbdt.fit_gbdt(X, y, params)
    tree = model.trees[0]
    self.assertEqual(16, tree.depth)
    self.assertEqual(2 * n - 1, len(tree))
    numpy.testing.assert_allclose(y, model.predict(X), atol=0.1)

  def testReducesTrainingError(self):
    X, y = RandomData(2)
    params = gbdt.Hyperparams(n_estimators=60, max_depth=3,
                              learning_rate=0.1)
    model = gbdt.fit_gbdt(X, y, params)
    baseline = numpy.mean((y - y.mean()) ** 2)
    self.assertTrue(numpy.mean((y - model.predict(X)) ** 2) < 0.5 * baseline)
    for tree in model.trees:
      tree.check()
      self.assertTrue(tree.depth <= 3)

  def testDeterministic(self):
    X, y = RandomData(3)
    params = gbdt.Hyperparams(n_estimators=20, max_depth=4, subsample=0.5,
                              colsample_bytree=0.6, seed=9)
    a = gbdt.dump_model(gbdt.fit_gbdt(X, y, params))
    b = gbdt.dump_model(gbdt.fit_gbdt(X, y, params))
    self.assertEqual(a, b)
    c = gbdt.dump_model(gbdt.fit_gbdt(X, y, params.replace(seed=10)))
    self.assertNotEqual(a, c)

  def testBadInput(self):
    params = gbdt.Hyperparams(n_estimators=1)
    self.assertRaises(InputError, gbdt.fit_gbdt, numpy.zeros((0, 2)), [],
                      params)
    self.assertRaises(InputError, gbdt.fit_gbdt, [[numpy.nan]], [1.0], params)
    self.assertRaises(InputError, gbdt.fit_gbdt, [[1.0], [2.0]], [1.0],
                      params)

  def testHyperparamRanges(self):
    self.assertRaises(ConfigError, gbdt.Hyperparams, subsample=0.0)
    self.assertRaises(ConfigError, gbdt.Hyperparams, colsample_bytree=1.5)
    self.assertRaises(ConfigError, gbdt.Hyperparams, lambda_=-1.0)
    self.assertEqual(gbdt.Hyperparams(seed=3),
                     gbdt.Hyperparams().replace(seed=3))


class ModelTextTest(unittest.TestCase):
  def setUp(self):
    self.tmpdir = tempfile.mkdtemp()
    X, y = RandomData(4, n=60)
    self.X = X
    self.model = gbdt.fit_gbdt(
        X, y, gbdt.Hyperparams(n_estimators=10, max_depth=3),
        feature_names=['C_a', 'C_b', 'P_c', 'L_d', 'L_e'])

  def tearDown(self):
    shutil.rmtree(self.tmpdir)

  def testSaveLoad(self):
    path = os.path.join(self.tmpdir, 'model.txt')
    gbdt.save_model(path, self.model)
    back = gbdt.load_model(path)
    self.assertEqual(self.model.feature_names, back.feature_names)
    self.assertEqual(list(self.model.predict(self.X)),
                     list(back.predict(self.X)))
    self.assertEqual(gbdt.dump_model(self.model), gbdt.dump_model(back))

  def testMalformedText(self):
    text = gbdt.dump_model(self.model)
    self.assertRaises(ModelIntegrityError, gbdt.parse_model,
                      'xgboost 1\n' + text.split('\n', 1)[1])
    self.assertRaises(ModelIntegrityError, gbdt.parse_model,
                      '\n'.join(text.splitlines()[:-1]))
    self.assertRaises(ModelIntegrityError, gbdt.parse_model, '')

  def testBadTrees(self):
    bad_child = gbdt.Tree([0, -1, -1], [1.5, 0, 0], [1, -1, -1],
                          [5, -1, -1], [0, 1, 2], [4, 2, 2])
    self.assertRaises(ModelIntegrityError, bad_child.check)
    no_cover = gbdt.Tree([-1], [0], [-1], [-1], [1.0], [0.0])
    self.assertRaises(ModelIntegrityError, no_cover.check)
    unknown = gbdt.Tree([3, -1, -1], [1.5, 0, 0], [1, -1, -1], [2, -1, -1],
                        [0, 1, 2], [4, 2, 2])
    model = gbdt.GbdtModel(0.0, 1.0, [unknown], ['C_a'])
    self.assertRaises(ModelIntegrityError, model.check)


if __name__ == '__main__':
  unittest.main()
