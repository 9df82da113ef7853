#! /usr/bin/python3

import os
import shutil
import tempfile
import unittest

import numpy

from streetdep import explain
from streetdep import gbdt
from streetdep import regressors
from streetdep import schema
from streetdep.errors import OracleSizeError
from streetdep.errors import SchemaError


def RandomModel(seed, p=5, n=80, n_estimators=6, max_depth=4):
  rng = numpy.random.default_rng(seed)
  X = rng.normal(size=(n, p))
  # Rounded values give repeated thresholds and features reused on a path.
  X[:, 0] = numpy.round(X[:, 0])
  y = X[:, 0] * X[:, 1] + numpy.abs(X[:, 2]) + 0.3 * rng.normal(size=n)
  params = gbdt.Hyperparams(n_estimators=n_estimators, max_depth=max_depth,
                            learning_rate=0.3, gamma=0.0, seed=seed)
  return gbdt.fit_gbdt(X, y, params), X


class TreeShapTest(unittest.TestCase):
  def testMatchesOracle(self):
    for seed in range(6):
      model, X = RandomModel(seed, p=3 + seed % 4)
      shap = explain.tree_shap(model, X[:12])
      for r in range(12):
        expected = explain.shapley_oracle(model, X[r])
        numpy.testing.assert_allclose(expected, shap.values[r], rtol=0,
                                      atol=1e-9, err_msg='seed %d' % seed)

  def testAdditivity(self):
    model, X = RandomModel(10, p=6, n_estimators=20)
    shap = explain.tree_shap(model, X, threads=2)
    numpy.testing.assert_allclose(model.predict(X), shap.predictions(),
                                  rtol=0, atol=1e-9)
    self.assertEqual(X.tolist(), shap.data.tolist())

  def testConstantFeatureIsZero(self):
    rng = numpy.random.default_rng(11)
    X = numpy.column_stack([rng.normal(size=(50, 2)), numpy.ones(50)])
    model = gbdt.fit_gbdt(X, X[:, 0] - X[:, 1],
                          gbdt.Hyperparams(n_estimators=5, max_depth=3))
    for tree in model.trees:
      self.assertFalse(2 in tree.used_features())
    shap = explain.tree_shap(model, X)
    self.assertEqual([0.0] * len(X), list(shap.values[:, 2]))

  def testSingleLeafModel(self):
    model, X = RandomModel(12, max_depth=0)
    shap = explain.tree_shap(model, X[:5])
    self.assertEqual(0.0, numpy.abs(shap.values).max())
    self.assertAlmostEqual(model.predict(X[:1])[0], shap.base_value,
                           places=12)

  def testStump(self):
    X = [[0.0], [1.0], [2.0], [3.0]]
    params = gbdt.Hyperparams(n_estimators=1, max_depth=1, learning_rate=1.0,
                              subsample=1.0, colsample_bytree=1.0, gamma=0.0,
                              lambda_=0.0, min_child_weight=0.0)
    model = gbdt.fit_gbdt(X, [0.0, 0.0, 1.0, 1.0], params)
    shap = explain.tree_shap(model, X, segment_ids=['a', 'b', 'c', 'd'])
    self.assertEqual(0.5, shap.base_value)
    numpy.testing.assert_allclose([[-0.5], [-0.5], [0.5], [0.5]], shap.values,
                                  atol=1e-12)
    self.assertEqual(('a', 'b', 'c', 'd'), shap.segment_ids)

  def testOracleSize(self):
    model, X = RandomModel(13, p=explain.MAX_ORACLE_FEATURES + 1,
                           n_estimators=1, max_depth=1)
    self.assertRaises(OracleSizeError, explain.shapley_oracle, model, X[0])

  def testLinearAttributions(self):
    rng = numpy.random.default_rng(14)
    X = rng.normal(size=(30, 2))
    ols = regressors.fit_ols(X, 2.0 * X[:, 0] - X[:, 1] + 0.5)
    shap = explain.ols_attributions(ols, X, ['C_a', 'P_b'])
    numpy.testing.assert_allclose(ols.predict(X), shap.predictions(),
                                  atol=1e-10)


class GroupShapTest(unittest.TestCase):
  def setUp(self):
    names = ['C_a', 'C_D_tree', 'P_b', 'L_c']
    self.shap = explain.ShapMatrix(
        0.25, [[1.0, -2.0, 3.0, 0.0], [1.0, 1.0, -1.0, 2.0]], names,
        data=[[0.0, 1.0, 2.0, 3.0], [1.0, 0.0, 3.0, 2.0]],
        segment_ids=['s1', 's2'])
    self.names = names

  def testSharesAndSums(self):
    groups = explain.group_shap(
        self.shap, schema.TriadSchema.from_names(self.names))
    self.assertEqual(('C', 'O', 'P', 'L'), tuple(groups.dimensions))
    self.assertEqual([2.0 / 11, 3.0 / 11, 4.0 / 11, 2.0 / 11],
                     list(groups.shares.values()))
    self.assertEqual([-2.0, 1.0], list(groups.phi('O')))
    self.assertEqual([0.0, 2.0], list(groups.phi('L')))
    self.assertTrue('share_P 0.363636' in groups.format())

  def testMergedDimensions(self):
    groups = explain.group_shap(
        self.shap, schema.TriadSchema.from_names(self.names,
                                                 merge_o_into_c=True))
    self.assertEqual(('C', 'P', 'L'), tuple(groups.dimensions))
    self.assertEqual([-1.0, 2.0], list(groups.phi('C')))
    self.assertAlmostEqual(5.0 / 11, groups.shares['C'], places=15)
    row = groups.row_shares()
    self.assertEqual([1.0 / 4, 2.0 / 5], list(row['C']))

  def testUngroupable(self):
    shap = explain.ShapMatrix(0.0, [[1.0]], ['X_bad'])
    self.assertRaises(SchemaError, explain.group_shap, shap,
                      schema.TriadSchema.from_names([]))

  def testByRegion(self):
    groups = explain.group_shap(
        self.shap, schema.TriadSchema.from_names(self.names))
    frame = explain.group_shares_by_region(groups, ['north', 'south'])
    self.assertEqual(['north', 'south'], list(frame['region']))
    self.assertEqual(1.0 / 6, frame['share_C'][0])

  def testDependence(self):
    frame = explain.dependence_table(self.shap, 'P_b')
    self.assertEqual(['s1', 's2'], list(frame['segment_id']))
    self.assertEqual([3.0, -1.0], list(frame['phi']))
    self.assertAlmostEqual(-1.0, explain.dependence_spearman(self.shap, 'P_b'),
                           places=12)
    self.assertRaises(KeyError, explain.dependence_table, self.shap, 'C_z')

  def testImportanceOrder(self):
    importance = explain.mean_abs_importance(self.shap)
    self.assertEqual(['P_b', 'C_D_tree', 'C_a', 'L_c'], list(importance.index))
    self.assertEqual(2.0, importance['P_b'])


class ShapFileTest(unittest.TestCase):
  def setUp(self):
    self.tmpdir = tempfile.mkdtemp()

  def tearDown(self):
    shutil.rmtree(self.tmpdir)

  def testWriteRead(self):
    model, X = RandomModel(20, p=3)
    shap = explain.tree_shap(model, X[:10], ['s%d' % i for i in range(10)])
    shap = explain.ShapMatrix(shap.base_value, shap.values,
                              ['C_a', 'P_b', 'L_c'], shap.data,
                              shap.segment_ids)
    groups = explain.group_shap(
        shap, schema.TriadSchema.from_names(shap.feature_names))
    path = os.path.join(self.tmpdir, 'shap.csv')
    explain.write_shap(path, shap, groups)
    back = explain.read_shap(path)
    self.assertEqual(shap.feature_names, back.feature_names)
    self.assertEqual(shap.segment_ids, back.segment_ids)
    self.assertEqual(shap.base_value, back.base_value)
    self.assertEqual(shap.values.tolist(), back.values.tolist())


if __name__ == '__main__':
  unittest.main()
