#! /usr/bin/python3

import os
import shutil
import tempfile
import unittest

import numpy

from streetdep import lisa
from streetdep.errors import ConfigError
from streetdep.errors import WeightsError


def Block(n=10, size=3):
  """Population 1 and supply 0 on a size x size corner block of n x n."""
  x = numpy.zeros((n, n))
  x[:size, :size] = 1.0
  return x.ravel(), 1.0 - x.ravel()


class WeightsTest(unittest.TestCase):
  def testQueenCardinality(self):
    weights = lisa.build_weights((3, 3))
    self.assertEqual([3, 5, 3, 5, 8, 5, 3, 5, 3], list(weights.cardinality))
    self.assertEqual(40, weights.link_count())
    self.assertEqual([0.125] * 8, weights.weights(4))

  def testRook(self):
    weights = lisa.build_weights((3, 3), scheme='rook')
    self.assertEqual(24, weights.link_count())
    self.assertEqual([1, 3, 5, 7], weights.neighbors(4))
    self.assertEqual([0.5, 0.5], weights.weights(0))

  def testExcludedCells(self):
    include = numpy.ones(9, dtype=bool)
    include[[1, 3, 4]] = False
    with self.assertLogs(level='WARNING'):
      weights = lisa.build_weights((3, 3), scheme='rook', include=include)
    self.assertTrue(weights.isolated[0])
    self.assertEqual([], weights.neighbors(4))
    self.assertEqual([2, 8], weights.neighbors(5))
    self.assertEqual(5.0, weights.lag(numpy.arange(9.0))[5])

  def testBadWeights(self):
    self.assertRaises(ConfigError, lisa.build_weights, (3, 3), 'bishop')
    self.assertRaises(WeightsError, lisa.build_weights, (0, 3))
    self.assertRaises(WeightsError, lisa.build_weights, (2, 2), 'queen',
                      numpy.zeros(4, dtype=bool))


class BivariateLisaTest(unittest.TestCase):
  def testMatchesDenseFormula(self):
    rng = numpy.random.default_rng(0)
    x, y = rng.normal(size=25), rng.normal(size=25)
    weights = lisa.build_weights((5, 5))
    result = lisa.bivariate_lisa(x, y, weights, permutations=99, seed=1)
    dense = weights.matrix.toarray()
    z_x = (x - x.mean()) / x.std()
    z_y = (y - y.mean()) / y.std()
    numpy.testing.assert_allclose(z_x * (dense @ z_y), result.local_i,
                                  atol=1e-12)
    self.assertAlmostEqual(lisa.global_bivariate_moran(x, y, weights),
                           result.local_i.mean(), places=12)

  def testConstantField(self):
    weights = lisa.build_weights((4, 4))
    with self.assertLogs(level='WARNING'):
      result = lisa.bivariate_lisa(numpy.ones(16), numpy.arange(16.0),
                                   weights, permutations=99)
    self.assertEqual([0.0] * 16, list(result.local_i))
    self.assertEqual(['NS'] * 16, list(result.clusters))
    self.assertEqual([1.0] * 16, list(result.pseudo_p))

  def testHighPopulationLowSupply(self):
    x, y = Block()
    weights = lisa.build_weights((10, 10))
    result = lisa.bivariate_lisa(x, y, weights, permutations=199, seed=42)
    self.assertEqual('HL', result.clusters[11])
    self.assertEqual(1.0 / 200, result.pseudo_p[11])
    self.assertTrue(11 in result.cells_in('HL'))
    self.assertEqual(100, sum(result.counts().values()))

  def testSeededAndThreadIndependent(self):
    rng = numpy.random.default_rng(3)
    x, y = rng.normal(size=400), rng.normal(size=400)
    weights = lisa.build_weights((20, 20))
    a = lisa.bivariate_lisa(x, y, weights, permutations=99, seed=5)
    b = lisa.bivariate_lisa(x, y, weights, permutations=99, seed=5,
                            threads=3)
    self.assertEqual(list(a.pseudo_p), list(b.pseudo_p))
    self.assertEqual(list(a.clusters), list(b.clusters))
    steps = a.pseudo_p * 100
    numpy.testing.assert_allclose(numpy.round(steps), steps, atol=1e-9)
    self.assertTrue((a.pseudo_p >= 0.01).all())

  def testExcludedCellsAreSkipped(self):
    x, y = Block(n=5, size=2)
    include = numpy.ones(25, dtype=bool)
    include[24] = False
    weights = lisa.build_weights((5, 5), include=include)
    result = lisa.bivariate_lisa(x, y, weights, permutations=99)
    self.assertEqual(list(range(24)), list(result.cell_ids))

  def testBadParameters(self):
    weights = lisa.build_weights((3, 3))
    self.assertRaises(ConfigError, lisa.bivariate_lisa, numpy.zeros(9),
                      numpy.zeros(9), weights, permutations=10)
    self.assertRaises(ConfigError, lisa.bivariate_lisa, numpy.zeros(9),
                      numpy.zeros(9), weights, alpha=0.0)


class MismatchTest(unittest.TestCase):
  def setUp(self):
    clusters = ['HL', 'HL', 'NS', 'NS', 'LH', 'NS', 'NS', 'NS', 'HL']
    cells = numpy.arange(9)
    zeros = numpy.zeros(9)
    self.lisa = lisa.LisaResult(cells, cells // 3, cells % 3, zeros, zeros,
                                zeros, numpy.ones(9), clusters, 99, 0.05, 42)
    self.pairs = [('a', 0), ('b', 1), ('b', 0), ('c', 8), ('d', 4),
                  ('e', 5)]
    self.labels = {'a': 'CPL', 'b': 'None', 'c': 'C-only', 'd': 'PL',
                   'e': 'CP'}

  def testClusters(self):
    report = lisa.mismatch_zones(self.lisa, self.labels, self.pairs)
    self.assertTrue(report)
    self.assertEqual([(0, [0, 1], ['a', 'b']), (1, [8], ['c'])],
                     report.clusters)
    self.assertEqual(0.5, report.label_shares[0]['CPL'])
    self.assertEqual(0.5, report.label_shares[0]['None'])
    self.assertEqual(['a', 'b', 'c'], report.segment_ids())
    self.assertEqual([0, 1, 8], report.cells())
    self.assertTrue(report.format().startswith(
        '# HL clusters: 2, cells 3, segments 3\n'))

  def testCrosstab(self):
    report = lisa.mismatch_zones(self.lisa, self.labels, self.pairs)
    crosstab = report.crosstab
    self.assertEqual(1, crosstab.loc['HL', 'CPL'])
    self.assertEqual(1, crosstab.loc['HL', 'None'])
    self.assertEqual(1, crosstab.loc['HL', 'C-only'])
    self.assertEqual(1, crosstab.loc['LH', 'PL'])
    self.assertEqual(4, crosstab.values.sum())

  def testOtherTarget(self):
    report = lisa.mismatch_zones(self.lisa, self.labels, self.pairs, 'LL')
    self.assertFalse(report)
    self.assertEqual(0, len(report.to_frame()))
    self.assertRaises(ConfigError, lisa.mismatch_zones, self.lisa,
                      self.labels, self.pairs, 'NS')


class LisaFileTest(unittest.TestCase):
  def setUp(self):
    self.tmpdir = tempfile.mkdtemp()

  def tearDown(self):
    shutil.rmtree(self.tmpdir)

  def testWriteRead(self):
    x, y = Block(n=6, size=2)
    result = lisa.bivariate_lisa(x, y, lisa.build_weights((6, 6)),
                                 permutations=99)
    path = os.path.join(self.tmpdir, 'lisa.csv')
    lisa.write_lisa(path, result)
    back = lisa.read_lisa(path)
    self.assertEqual(list(result.cell_ids), list(back.cell_ids))
    self.assertEqual(list(result.local_i), list(back.local_i))
    self.assertEqual(list(result.clusters), list(back.clusters))


if __name__ == '__main__':
  unittest.main()
