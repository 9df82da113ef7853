"""Quantile-threshold deprivation typology of street segments.

A segment is deprived in dimension d when its deprivation score D_d lies
strictly above the q-quantile of D_d over the analysis region. The three
C/P/L exceedances select one of eight labels.
"""

import collections
import logging

import numpy
import pandas

from streetdep import schema
from streetdep.errors import ConfigError
from streetdep.errors import TypologyError

LABELS = ('None', 'C-only', 'P-only', 'L-only', 'CP', 'CL', 'PL', 'CPL')

SCORE_MODES = ('negated_sum', 'negative_only')

MIN_SEGMENTS = 5

DEFAULT_QUANTILE = 0.8


def label_of(c, p, l):
  """Return the label of one (C, P, L) exceedance triple."""
  letters = ''.join(d for d, hit in zip('CPL', (c, p, l)) if hit)
  if not letters:
    return 'None'
  if len(letters) == 1:
    return letters + '-only'
  return letters


class DeprivationScores(object):
  """Per-segment D_C, D_P, D_L; O contributions count as C."""

  def __init__(self, segment_ids, d_c, d_p, d_l, mode='negated_sum'):
    self.segment_ids = tuple(segment_ids)
    self.values = collections.OrderedDict([
        ('C', numpy.asarray(d_c, dtype=float)),
        ('P', numpy.asarray(d_p, dtype=float)),
        ('L', numpy.asarray(d_l, dtype=float)),
    ])
    self.mode = mode

  def __len__(self):
    return len(self.segment_ids)

  def __getitem__(self, dimension):
    return self.values[dimension]

  def select(self, rows):
    return DeprivationScores(
        [self.segment_ids[i] for i in rows],
        *[v[rows] for v in self.values.values()], mode=self.mode)


def deprivation_scores(groups, mode='negated_sum'):
  """Return the DeprivationScores of a GroupContribution.

  negated_sum: D_d = -phi_d; negative_only: D_d = sum of max(0, -phi_i)
  over the member features of d.
  """
  if mode not in SCORE_MODES:
    raise ConfigError('unknown deprivation mode %r' % (mode,))
  shap = groups.shap
  folded = dict((d, ('C', 'O') if d == 'C' else (d,))
                for d in schema.TYPOLOGY_DIMENSIONS)
  scores = []
  for d in schema.TYPOLOGY_DIMENSIONS:
    if mode == 'negated_sum':
      score = -sum((groups.phi(m) for m in folded[d]), numpy.zeros(len(shap)))
    else:
      cols = [j for m in folded[d] for j in groups.members.get(m, ())]
      score = numpy.maximum(0.0, -shap.values[:, cols]).sum(axis=1)
    scores.append(score + 0.0)
  return DeprivationScores(shap.segment_ids, *scores, mode=mode)


class TypologyResult(object):
  """Labels, scores and the per-dimension thresholds they were cut at.

  thresholds maps a region name (None for citywide) to {dimension: value}.
  """

  def __init__(self, scores, labels, thresholds, q, regions=None):
    self.scores = scores
    self.labels = list(labels)
    self.thresholds = thresholds
    self.q = q
    self.regions = regions

  def __len__(self):
    return len(self.labels)

  def label_array(self):
    return numpy.array(self.labels, dtype=object)

  def to_frame(self):
    frame = pandas.DataFrame(collections.OrderedDict(
        [('segment_id', list(self.scores.segment_ids))] +
        [('D_' + d, self.scores[d]) for d in schema.TYPOLOGY_DIMENSIONS] +
        [('label', self.labels)]))
    if self.regions is not None:
      frame.insert(1, 'region', list(self.regions))
    return frame

  def header(self):
    lines = ['# typology mode %s, q %g' % (self.scores.mode, self.q)]
    for region, cut in self.thresholds.items():
      lines.append('# threshold %s %s' % (
          'citywide' if region is None else region,
          ' '.join('%s=%.17g' % (d, cut[d])
                   for d in schema.TYPOLOGY_DIMENSIONS)))
    return '\n'.join(lines) + '\n'


def _thresholds(scores, q):
  return collections.OrderedDict(
      (d, float(numpy.quantile(scores[d], q)))
      for d in schema.TYPOLOGY_DIMENSIONS)


def _labels(scores, cut):
  hits = [scores[d] > cut[d] for d in schema.TYPOLOGY_DIMENSIONS]
  return [label_of(*triple) for triple in zip(*hits)]


def _check(scores, q):
  if not 0 < q < 1:
    raise ConfigError('typology quantile must lie in (0, 1), got %r' % q)
  if len(scores) < MIN_SEGMENTS:
    raise TypologyError('%d segments; the typology needs at least %d' %
                        (len(scores), MIN_SEGMENTS))
  for d in schema.TYPOLOGY_DIMENSIONS:
    if not numpy.isfinite(scores[d]).all():
      raise TypologyError('non-finite D_%s scores' % d)


def classify_typology(scores, q=DEFAULT_QUANTILE):
  """Label every segment against citywide q-quantile thresholds."""
  _check(scores, q)
  cut = _thresholds(scores, q)
  result = TypologyResult(scores, _labels(scores, cut),
                          collections.OrderedDict([(None, cut)]), q)
  logging.info('typology at q=%g: %s' % (q, ' '.join(
      '%s=%d' % item for item in label_counts(result).items())))
  return result


def classify_by_region(scores, regions, q=DEFAULT_QUANTILE):
  """Label segments against thresholds computed within each region.

  Regions with fewer than MIN_SEGMENTS segments, and segments without a
  region, use the citywide thresholds.
  """
  _check(scores, q)
  regions = numpy.asarray(
      [None if r is None or r != r or r == '' else str(r) for r in regions],
      dtype=object)
  citywide = _thresholds(scores, q)
  thresholds = collections.OrderedDict([(None, citywide)])
  labels = numpy.array(_labels(scores, citywide), dtype=object)
  for region in sorted(set(r for r in regions if r is not None)):
    rows = numpy.flatnonzero(regions == region)
    if len(rows) < MIN_SEGMENTS:
      logging.warning('region %s has %d segments; using citywide thresholds' %
                      (region, len(rows)))
      continue
    local = scores.select(rows)
    cut = _thresholds(local, q)
    thresholds[region] = cut
    labels[rows] = _labels(local, cut)
  return TypologyResult(scores, labels, thresholds, q, regions)


def label_counts(result):
  """Return {label: count} for all eight labels in canonical order."""
  counter = collections.Counter(result.labels)
  return collections.OrderedDict((label, counter[label]) for label in LABELS)


def write_typology(path, result):
  with open(path, 'w', encoding='utf-8', newline='') as f:
    f.write(result.header())
    result.to_frame().to_csv(f, index=False,
                             float_format=schema.CSV_FLOAT_FORMAT,
                             lineterminator='\n')


def read_typology(path):
  """Return (segment_ids, labels) from a typology CSV."""
  frame = pandas.read_csv(path, comment='#', dtype={'segment_id': str},
                          keep_default_na=False)
  return list(frame['segment_id']), list(frame['label'])
