#! /usr/bin/python3

import unittest

import numpy

from streetdep import explain
from streetdep import intervention
from streetdep import regressors
from streetdep import schema
from streetdep.errors import ScenarioError

NAMES = ['C_a', 'P_b', 'L_c']


def LinearSetup(intercept=10.0, n=40, seed=0):
  """An exact OLS model y = intercept + 2 C_a - P_b + 0.5 L_c."""
  rng = numpy.random.default_rng(seed)
  X = rng.normal(size=(n, 3))
  y = intercept + 2.0 * X[:, 0] - X[:, 1] + 0.5 * X[:, 2]
  model = regressors.fit_ols(X, y)
  shap = explain.ols_attributions(model, X, NAMES,
                                  ['s%d' % i for i in range(n)])
  return model, X, shap


class ScenarioTest(unittest.TestCase):
  def testParse(self):
    scenario = intervention.Scenario('C+L', 0.2, 5)
    self.assertEqual(('C', 'L'), scenario.dimensions)
    self.assertEqual('C+L', scenario.label)
    self.assertEqual(10, len(intervention.standard_grid()))
    spec = intervention.Scenario.from_dict({'dimensions': ['P'],
                                            'top_k': 3},
                                           {'intensity': 0.3})
    self.assertEqual(0.3, spec.intensity)

  def testInvalid(self):
    self.assertRaises(ScenarioError, intervention.Scenario, 'C', 1.5, 5)
    self.assertRaises(ScenarioError, intervention.Scenario, 'C', -0.1, 5)
    self.assertRaises(ScenarioError, intervention.Scenario, 'X', 0.2, 5)
    self.assertRaises(ScenarioError, intervention.Scenario, 'O', 0.2, 5)
    self.assertRaises(ScenarioError, intervention.Scenario, 'C+C', 0.2, 5)
    self.assertRaises(ScenarioError, intervention.Scenario, '', 0.2, 5)
    self.assertRaises(ScenarioError, intervention.Scenario, 'C', 0.2, 0)
    self.assertRaises(ScenarioError, intervention.Scenario, 'C', 0.2, 5,
                      'north')
    self.assertRaises(ScenarioError, intervention.Scenario, 'C', 0.2, 5,
                      'all', 'pearson')

  def testResolveZone(self):
    ids = ['a', 'b', 'c']
    self.assertEqual([0, 1, 2], list(intervention.resolve_zone('all', ids)))
    self.assertEqual([1], list(intervention.resolve_zone('hl', ids, ['b'])))
    self.assertEqual([0, 2],
                     list(intervention.resolve_zone(('c', 'a'), ids)))


class RankTest(unittest.TestCase):
  def setUp(self):
    names = ['C_a', 'C_D_tree', 'P_b', 'L_c']
    self.shap = explain.ShapMatrix(
        0.0, [[1.0, -4.0, 3.0, 0.0], [1.0, 2.0, -1.0, 0.0]], names)
    self.triad = schema.TriadSchema.from_names(names)

  def testOpenSpaceCountsAsConfiguration(self):
    ranked = intervention.rank_features(self.shap, self.triad, ('C',),
                                        [0, 1], top_k=1)
    self.assertEqual(['C_D_tree'], [f.name for f in ranked])
    self.assertEqual('C', ranked[0].dimension)
    self.assertEqual(3.0, ranked[0].importance)

  def testTopKPerDimension(self):
    ranked = intervention.rank_features(self.shap, self.triad,
                                        ('C', 'P', 'L'), [0, 1], top_k=1)
    self.assertEqual(['C_D_tree', 'P_b', 'L_c'], [f.name for f in ranked])
    self.assertTrue(ranked[2].zero_impact)
    everything = intervention.rank_features(self.shap, self.triad,
                                            ('C', 'P', 'L'), [0])
    self.assertEqual(['C_D_tree', 'P_b', 'C_a', 'L_c'],
                     [f.name for f in everything])

  def testEmpty(self):
    self.assertRaises(ScenarioError, intervention.rank_features, self.shap,
                      self.triad, ('C',), [])


class SimulateTest(unittest.TestCase):
  def setUp(self):
    self.model, self.X, self.shap = LinearSetup()
    self.all = numpy.arange(len(self.X))

  def Run(self, dimensions, intensity, zone=None, **kwargs):
    scenario = intervention.Scenario(dimensions, intensity, 5)
    return intervention.simulate(
        self.model, scenario, self.X, self.shap,
        self.all if zone is None else zone, feature_names=NAMES, **kwargs)

  def testZeroIntensity(self):
    report = self.Run('C+P+L', 0.0)
    self.assertEqual(0.0, report.improvement_pct)
    self.assertEqual(0.0, report.standardized_delta)
    self.assertEqual({}, dict(report.deltas))

  def testBeneficialDirections(self):
    report = self.Run('C+P+L', 0.2)
    sd = self.X.std(axis=0)
    self.assertAlmostEqual(0.2 * sd[0], report.deltas['C_a'], places=12)
    self.assertAlmostEqual(-0.2 * sd[1], report.deltas['P_b'], places=12)
    self.assertAlmostEqual(0.2 * sd[2], report.deltas['L_c'], places=12)
    gain = 0.2 * (2.0 * sd[0] + sd[1] + 0.5 * sd[2])
    base = self.model.predict(self.X).mean()
    self.assertAlmostEqual(100.0 * gain / base, report.improvement_pct,
                           places=8)
    self.assertTrue(report.improvement_pct > 0)
    self.assertFalse(report.degenerate)

  def testIntensityIsMonotone(self):
    gains = [self.Run('C+P+L', d).improvement_pct for d in (0.1, 0.2, 0.3)]
    self.assertTrue(gains[0] > 0)
    self.assertTrue(gains[0] < gains[1] < gains[2])

  def testDimensionsAddUp(self):
    c = self.Run('C', 0.2).improvement_pct
    p = self.Run('P', 0.2).improvement_pct
    both = self.Run('C+P', 0.2).improvement_pct
    self.assertAlmostEqual(c + p, both, places=9)
    self.assertTrue(both > c > 0)

  def testOnlyZoneRowsMove(self):
    zone = numpy.arange(10)
    ranked = intervention.rank_features(
        self.shap, intervention.shap_triad(self.shap), ('C', 'P', 'L'), zone)
    perturbed, deltas, skipped = intervention.perturb(
        self.X, NAMES, ranked, 0.3, self.shap, zone)
    self.assertEqual(self.X[10:].tolist(), perturbed[10:].tolist())
    self.assertEqual(3, len(deltas))
    self.assertEqual([], skipped)
    sd = self.X[zone, 0].std()
    numpy.testing.assert_allclose(self.X[zone, 0] + 0.3 * sd,
                                  perturbed[zone, 0], atol=1e-15)
    self.assertEqual(10, self.Run('C', 0.3, zone).affected)

  def testConstantFeatureIsSkipped(self):
    self.X[:, 2] = 1.0
    shap = explain.ShapMatrix(self.shap.base_value, self.shap.values, NAMES,
                              self.X)
    ranked = intervention.rank_features(
        shap, intervention.shap_triad(shap), ('L',), self.all)
    with self.assertLogs(level='WARNING'):
      _, deltas, skipped = intervention.perturb(self.X, NAMES, ranked, 0.2,
                                                shap, self.all)
    self.assertEqual({}, dict(deltas))
    self.assertEqual(['L_c: zero variance in zone'], skipped)

  def testDegenerateBaseline(self):
    rng = numpy.random.default_rng(1)
    X = rng.normal(size=(30, 3))
    X -= X.mean(axis=0)
    model = regressors.fit_ols(X, 2.0 * X[:, 0])
    shap = explain.ols_attributions(model, X, NAMES)
    scenario = intervention.Scenario('C', 0.2, 5)
    with self.assertLogs(level='WARNING'):
      report = intervention.simulate(model, scenario, X, shap,
                                     numpy.arange(30), feature_names=NAMES)
    self.assertTrue(report.degenerate)
    self.assertEqual(None, report.improvement_pct)
    self.assertAlmostEqual(0.4 * X[:, 0].std(), report.absolute_delta,
                           places=9)

  def testLogResponse(self):
    record = schema.NormalizationRecord('log1p_zscore', 0.5, 0.25, False)
    report = self.Run('C', 0.2, response_record=record)
    before = numpy.expm1(self.model.predict(self.X) * 0.25 + 0.5).mean()
    after = numpy.expm1(
        (self.model.predict(self.X) + 0.4 * self.X[:, 0].std()) * 0.25 +
        0.5).mean()
    self.assertAlmostEqual(100.0 * (after - before) / before,
                           report.improvement_pct, places=8)

  def testByLabel(self):
    labels = ['None'] * 20 + ['CPL'] * 20
    report = self.Run('C', 0.2, labels=labels)
    self.assertEqual(['CPL', 'None'], list(report.by_label))
    for value in report.by_label.values():
      self.assertTrue(value > 0)


class ScenarioGridTest(unittest.TestCase):
  def testGrid(self):
    model, X, shap = LinearSetup()
    zones = {'all': numpy.arange(len(X)), 'hl': numpy.arange(5)}
    table = intervention.scenario_grid(model, intervention.standard_grid(), X,
                                       shap, zones, feature_names=NAMES,
                                       threads=2)
    self.assertEqual(10, len(table))
    self.assertEqual(['C', 'P', 'L', 'C+P', 'C+L', 'L+P', 'C+P+L', 'C+P+L',
                      'C+P+L', 'C+P+L'], list(table.to_frame()['type']))
    self.assertEqual(['C_a', 'P_b', 'L_c'], table.top_variables)
    text = table.format()
    self.assertTrue(text.startswith('Type     Intensity Variables'))
    self.assertTrue('Top 3 variables: C_a, P_b, L_c' in text)
    reports = table.reports
    self.assertAlmostEqual(reports[6].improvement_pct,
                           reports[7].improvement_pct, places=9)
    self.assertTrue(reports[8].improvement_pct > reports[7].improvement_pct)

  def testFailedScenarioIsRecorded(self):
    model, X, shap = LinearSetup()
    shap = explain.ShapMatrix(shap.base_value, shap.values[:, :2],
                              NAMES[:2], X[:, :2])
    scenarios = [intervention.Scenario('L', 0.2, 5),
                 intervention.Scenario('C', 0.2, 5)]
    with self.assertLogs(level='WARNING'):
      table = intervention.scenario_grid(model, scenarios, X, shap,
                                         {'all': numpy.arange(len(X))},
                                         feature_names=NAMES)
    frame = table.to_frame()
    self.assertTrue(frame['error'][0].startswith('no features'))
    self.assertEqual('', frame['error'][1])
    self.assertTrue('error: no features' in table.format())

  def testMissingColumnIsRecorded(self):
    model, X, shap = LinearSetup()
    scenarios = [intervention.Scenario('L', 0.2, 5),
                 intervention.Scenario('C', 0.2, 5)]
    with self.assertLogs(level='WARNING'):
      table = intervention.scenario_grid(model, scenarios, X, shap,
                                         {'all': numpy.arange(len(X))},
                                         feature_names=['C_a', 'P_b', 'L_x'])
    frame = table.to_frame()
    self.assertTrue('L_c' in frame['error'][0])
    self.assertEqual('', frame['error'][1])


if __name__ == '__main__':
  unittest.main()
