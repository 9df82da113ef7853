#! /usr/bin/python3

import os
import shutil
import tempfile
import unittest

import numpy

from streetdep import explain
from streetdep import schema
from streetdep import typology
from streetdep.errors import ConfigError
from streetdep.errors import TypologyError


def BitScores():
  """Segment i is deprived in C, P, L per bits 0, 1, 2 of i."""
  ids = ['s%d' % i for i in range(8)]
  bits = [[float((i >> b) & 1) for i in range(8)] for b in range(3)]
  return typology.DeprivationScores(ids, *bits)


class LabelTest(unittest.TestCase):
  def testLabelOf(self):
    self.assertEqual('None', typology.label_of(False, False, False))
    self.assertEqual('P-only', typology.label_of(False, True, False))
    self.assertEqual('CL', typology.label_of(True, False, True))
    self.assertEqual('CPL', typology.label_of(True, True, True))

  def testAllEightLabels(self):
    result = typology.classify_typology(BitScores(), q=0.5)
    self.assertEqual(['None', 'C-only', 'P-only', 'CP', 'L-only', 'CL', 'PL',
                      'CPL'], result.labels)
    self.assertEqual([1] * 8, list(typology.label_counts(result).values()))
    self.assertEqual(list(typology.LABELS),
                     list(typology.label_counts(result)))
    self.assertEqual({'C': 0.5, 'P': 0.5, 'L': 0.5},
                     dict(result.thresholds[None]))

  def testMonotoneTransformKeepsLabels(self):
    rng = numpy.random.default_rng(0)
    raw = rng.normal(size=(3, 40))
    ids = ['s%d' % i for i in range(40)]
    base = typology.classify_typology(typology.DeprivationScores(ids, *raw))
    shifted = typology.classify_typology(
        typology.DeprivationScores(ids, *(3.0 * raw + 1.0)))
    stretched = typology.classify_typology(
        typology.DeprivationScores(ids, *numpy.exp(raw)))
    self.assertEqual(base.labels, shifted.labels)
    self.assertEqual(base.labels, stretched.labels)

  def testStrictlyAbove(self):
    ids = ['s%d' % i for i in range(5)]
    scores = typology.DeprivationScores(ids, [1.0] * 5, [1.0] * 5, [1.0] * 5)
    result = typology.classify_typology(scores)
    self.assertEqual(['None'] * 5, result.labels)

  def testTooFewSegments(self):
    scores = typology.DeprivationScores(['a', 'b'], [1, 2], [1, 2], [1, 2])
    self.assertRaises(TypologyError, typology.classify_typology, scores)
    self.assertRaises(ConfigError, typology.classify_typology, BitScores(),
                      q=1.0)
    bad = typology.DeprivationScores(['s%d' % i for i in range(5)],
                                     [numpy.nan] + [0.0] * 4, [0.0] * 5,
                                     [0.0] * 5)
    self.assertRaises(TypologyError, typology.classify_typology, bad)


class RegionTest(unittest.TestCase):
  def testSmallRegionFallsBack(self):
    rng = numpy.random.default_rng(1)
    raw = rng.normal(size=(3, 10))
    scores = typology.DeprivationScores(['s%d' % i for i in range(10)], *raw)
    regions = ['a'] * 6 + ['b'] * 2 + [None, '']
    with self.assertLogs(level='WARNING') as logs:
      result = typology.classify_by_region(scores, regions)
    self.assertTrue('region b has 2 segments' in logs.output[0])
    self.assertEqual([None, 'a'], list(result.thresholds))
    citywide = typology.classify_typology(scores)
    self.assertEqual(citywide.labels[6:], list(result.labels[6:]))
    local = typology.classify_typology(scores.select(numpy.arange(6)))
    self.assertEqual(local.labels, list(result.labels[:6]))


class ScoresTest(unittest.TestCase):
  def setUp(self):
    names = ['C_a', 'C_D_tree', 'P_b', 'L_c']
    shap = explain.ShapMatrix(
        0.0, [[1.0, -2.0, 3.0, 0.0], [-1.0, -1.0, -1.0, 2.0]], names)
    self.groups = explain.group_shap(shap,
                                     schema.TriadSchema.from_names(names))

  def testNegatedSum(self):
    scores = typology.deprivation_scores(self.groups)
    self.assertEqual([1.0, 2.0], list(scores['C']))
    self.assertEqual([-3.0, 1.0], list(scores['P']))
    self.assertEqual([0.0, -2.0], list(scores['L']))

  def testNegativeOnly(self):
    scores = typology.deprivation_scores(self.groups, mode='negative_only')
    self.assertEqual([2.0, 2.0], list(scores['C']))
    self.assertEqual([0.0, 1.0], list(scores['P']))
    self.assertEqual([0.0, 0.0], list(scores['L']))
    self.assertRaises(ConfigError, typology.deprivation_scores, self.groups,
                      'mean')


class TypologyFileTest(unittest.TestCase):
  def setUp(self):
    self.tmpdir = tempfile.mkdtemp()

  def tearDown(self):
    shutil.rmtree(self.tmpdir)

  def testWriteRead(self):
    result = typology.classify_typology(BitScores(), q=0.5)
    path = os.path.join(self.tmpdir, 'typology.csv')
    typology.write_typology(path, result)
    ids, labels = typology.read_typology(path)
    self.assertEqual(list(BitScores().segment_ids), ids)
    self.assertEqual(result.labels, labels)
    with open(path) as f:
      self.assertEqual('# typology mode negated_sum, q 0.5\n', f.readline())


if __name__ == '__main__':
  unittest.main()
