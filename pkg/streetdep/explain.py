"""Exact SHAP attributions of boosted tree ensembles and their triad groups.

tree_shap implements path-dependent TreeSHAP: a feature absent from a
coalition is marginalized by descending both children weighted by their
share of the parent's cover. shapley_oracle evaluates the same games by
enumerating all coalitions, so both agree to rounding error.

Every leaf of a tree defines the game v(S) = value * prod_{j in S} o_j *
prod_{j not in S} z_j over the distinct features j on its path, where z_j
is the product of cover fractions along the path and o_j is 1 iff the row
follows every branch on j. The per-leaf Shapley values come from the
EXTEND / UNWOUND-SUM polynomial recurrences, evaluated here for all leaves
and all rows of a chunk at once.
"""

import collections
import logging
import math

import numpy
import pandas
import scipy.stats

from streetdep import schema
from streetdep import util
from streetdep.errors import ModelIntegrityError
from streetdep.errors import OracleSizeError
from streetdep.errors import SchemaError

MAX_ORACLE_FEATURES = 20

ROW_CHUNK = 2048


class ShapMatrix(object):
  """Per-row, per-feature SHAP values.

  base_value + values[r].sum() equals the model prediction of row r.
  data holds the explained feature values (None when read from a file).
  """

  def __init__(self, base_value, values, feature_names, data=None,
               segment_ids=None):
    self.base_value = float(base_value)
    self.values = numpy.asarray(values, dtype=float)
    self.feature_names = list(feature_names)
    self.data = None if data is None else numpy.asarray(data, dtype=float)
    if segment_ids is None:
      segment_ids = [str(i) for i in range(len(self.values))]
    self.segment_ids = tuple(segment_ids)
    if self.values.shape != (len(self.segment_ids), len(self.feature_names)):
      raise ValueError('SHAP values shape %r does not match %d rows x %d '
                       'features' % (self.values.shape, len(self.segment_ids),
                                     len(self.feature_names)))

  def __len__(self):
    return len(self.values)

  def column(self, name):
    return self.values[:, self.feature_names.index(name)]

  def select(self, rows):
    rows = numpy.asarray(rows)
    ids = [self.segment_ids[i] for i in numpy.arange(len(self))[rows]]
    return ShapMatrix(self.base_value, self.values[rows], self.feature_names,
                      None if self.data is None else self.data[rows],
                      ids)

  def predictions(self):
    return self.base_value + self.values.sum(axis=1)


def _leaf_paths(tree):
  """Return [(leaf, [(feature, node, goes_left, cover_fraction), ...])]."""
  paths = []
  stack = [(0, [])]
  while stack:
    node, path = stack.pop()
    if tree.is_leaf(node):
      paths.append((node, path))
      continue
    cover = tree.cover[node]
    for child, goes_left in ((tree.right[node], False),
                             (tree.left[node], True)):
      stack.append((child, path + [(int(tree.feature[node]), node, goes_left,
                                    tree.cover[child] / cover)]))
  return paths


def _tree_shap_chunk(tree, X, n_features):
  """Return the rows x features SHAP values of one tree (unscaled)."""
  n = len(X)
  phi = numpy.zeros((n_features, n))
  paths = [(leaf, path) for leaf, path in _leaf_paths(tree) if path]
  if not paths:
    return phi.T
  inner = numpy.flatnonzero(tree.feature >= 0)
  goes_left = numpy.zeros((len(tree), n), dtype=bool)
  goes_left[inner] = (X[:, tree.feature[inner]] <= tree.threshold[inner]).T

  # Merge repeated features on a path: zero and one fractions multiply.
  merged = []
  for leaf, path in paths:
    elements = collections.OrderedDict()
    for feature, node, left, fraction in path:
      follows = goes_left[node] if left else ~goes_left[node]
      if feature in elements:
        z, o = elements[feature]
        elements[feature] = (z * fraction, o & follows)
      else:
        elements[feature] = (fraction, follows)
    merged.append((leaf, elements))
  depth = max(len(elements) for _, elements in merged)
  n_leaves = len(merged)
  # Padding elements (z = o = 1, feature -1) are null players.
  feature = numpy.full((n_leaves, depth), -1, dtype=numpy.intp)
  zero = numpy.ones((n_leaves, depth))
  one = numpy.ones((n_leaves, depth, n))
  value = numpy.empty(n_leaves)
  for l, (leaf, elements) in enumerate(merged):
    value[l] = tree.value[leaf]
    for e, (f, (z, o)) in enumerate(elements.items()):
      feature[l, e] = f
      zero[l, e] = z
      one[l, e] = o

  # EXTEND: element 0 is the (1, 1) root dummy, elements 1..depth follow.
  weights = [numpy.ones((n_leaves, n))]
  for d in range(1, depth + 1):
    z = zero[:, d - 1, None]
    o = one[:, d - 1]
    weights.append(numpy.zeros((n_leaves, n)))
    for i in range(d - 1, -1, -1):
      weights[i + 1] = weights[i + 1] + o * weights[i] * (i + 1.0) / (d + 1.0)
      weights[i] = z * weights[i] * (d - i) / (d + 1.0)

  # UNWOUND-SUM for every real element, then credit its feature.
  top = depth
  for e in range(depth):
    z = zero[:, e, None]
    o = one[:, e]
    safe_o = numpy.where(o != 0, o, 1.0)
    following = weights[top]
    total_one = numpy.zeros((n_leaves, n))
    total_zero = numpy.zeros((n_leaves, n))
    for i in range(top - 1, -1, -1):
      tmp = following * (top + 1.0) / ((i + 1.0) * safe_o)
      total_one += tmp
      following = weights[i] - tmp * z * (top - i) / (top + 1.0)
      total_zero += weights[i] / z / ((top - i) / (top + 1.0))
    total = numpy.where(o != 0, total_one, total_zero)
    contribution = total * (o - z) * value[:, None]
    real = feature[:, e] >= 0
    numpy.add.at(phi, feature[real, e], contribution[real])
  return phi.T


def _check_covers(model):
  for t, tree in enumerate(model.trees):
    if not (tree.cover > 0).all():
      raise ModelIntegrityError('tree %d has a node with zero cover' % t)


def expected_value(model):
  """Return base_score + learning_rate * sum of cover-weighted tree means."""
  _check_covers(model)
  return model.base_score + model.learning_rate * math.fsum(
      tree.expected_value() for tree in model.trees)


def tree_shap(model, X, segment_ids=None, threads=1):
  """Return the ShapMatrix of model on the rows of X.

  X has the model's feature columns in model order.
  """
  _check_covers(model)
  X = numpy.asarray(X, dtype=float)
  p = len(model.feature_names)
  if X.ndim != 2 or X.shape[1] != p:
    raise ValueError('X must have the %d model features as columns' % p)
  chunks = [numpy.arange(lo, min(lo + ROW_CHUNK, len(X)))
            for lo in range(0, len(X), ROW_CHUNK)]

  def ExplainChunk(rows):
    phi = numpy.zeros((len(rows), p))
    for tree in model.trees:
      phi += _tree_shap_chunk(tree, X[rows], p)
    return phi

  with util.Stopwatch() as sw:
    parts = util.parallel_map(ExplainChunk, chunks, threads)
  values = (numpy.concatenate(parts) if parts else numpy.zeros((0, p)))
  logging.info('TreeSHAP of %d rows x %d trees in %.3fs' %
               (len(X), len(model.trees), sw.elapsed))
  return ShapMatrix(expected_value(model), model.learning_rate * values,
                    model.feature_names, X, segment_ids)


def _conditional_values(tree, x, masks, n_features):
  """Return E[tree | x_S] for every coalition S given as a bit mask."""
  members = ((masks[:, None] >> numpy.arange(n_features)) & 1).astype(bool)

  def Walk(node):
    if tree.is_leaf(node):
      return numpy.full(len(masks), tree.value[node])
    f = tree.feature[node]
    left, right = tree.left[node], tree.right[node]
    left_value, right_value = Walk(left), Walk(right)
    known = left_value if x[f] <= tree.threshold[node] else right_value
    mixed = (tree.cover[left] * left_value +
             tree.cover[right] * right_value) / tree.cover[node]
    return numpy.where(members[:, f], known, mixed)

  return Walk(0)


def shapley_oracle(model, x):
  """Return exact Shapley values of one row by enumerating all coalitions.

  The players are all model features; f(S) descends the trees along x for
  features in S and averages both children by cover otherwise.
  """
  _check_covers(model)
  x = numpy.asarray(x, dtype=float)
  p = len(model.feature_names)
  if p > MAX_ORACLE_FEATURES:
    raise OracleSizeError('%d features; the oracle enumerates 2^n coalitions '
                          'and is limited to %d' % (p, MAX_ORACLE_FEATURES))
  masks = numpy.arange(2 ** p, dtype=numpy.int64)
  f = numpy.full(len(masks), model.base_score)
  for tree in model.trees:
    f += model.learning_rate * _conditional_values(tree, x, masks, p)
  size = numpy.array([bin(m).count('1') for m in range(2 ** p)])
  weight = numpy.array([math.factorial(s) * math.factorial(p - s - 1) /
                        float(math.factorial(p)) if s < p else 0.0
                        for s in range(p + 1)])
  phi = numpy.zeros(p)
  for i in range(p):
    without = masks[(masks >> i) & 1 == 0]
    phi[i] = (weight[size[without]] *
              (f[without | (1 << i)] - f[without])).sum()
  return phi


class GroupContribution(object):
  """Per-row triad dimension sums of SHAP values, plus global shares.

  shares[d] = sum of |phi_i| over rows and the member features i of d,
  divided by the sum of all |phi_i|.
  """

  def __init__(self, shap, triad):
    self.shap = shap
    self.triad = triad
    self.dimensions = triad.dimensions
    index = dict((name, j) for j, name in enumerate(shap.feature_names))
    self.members = collections.OrderedDict(
        (d, [index[name] for name in shap.feature_names
             if triad.dimension(name) == d])
        for d in self.dimensions)
    self.sums = collections.OrderedDict(
        (d, shap.values[:, cols].sum(axis=1) if cols
         else numpy.zeros(len(shap)))
        for d, cols in self.members.items())
    self.shares = self._shares(numpy.arange(len(shap)))

  def _shares(self, rows):
    magnitude = numpy.abs(self.shap.values[rows])
    total = magnitude.sum()
    if total == 0:
      return collections.OrderedDict((d, 0.0) for d in self.dimensions)
    return collections.OrderedDict(
        (d, float(magnitude[:, cols].sum() / total))
        for d, cols in self.members.items())

  def row_shares(self):
    """Return |phi_d| / sum_d |phi_d| per row (zeros for an all-zero row)."""
    stacked = numpy.abs(numpy.column_stack(list(self.sums.values())))
    total = stacked.sum(axis=1, keepdims=True)
    with numpy.errstate(invalid='ignore', divide='ignore'):
      shares = numpy.where(total > 0, stacked / total, 0.0)
    return collections.OrderedDict(
        (d, shares[:, j]) for j, d in enumerate(self.dimensions))

  def phi(self, dimension):
    return self.sums.get(dimension, numpy.zeros(len(self.shap)))

  def format(self):
    lines = ['# SHAP shares by mean |phi|, %d segments' % len(self.shap)]
    for d in self.dimensions:
      lines.append('share_%s %.6f' % (d, self.shares[d]))
    return '\n'.join(lines) + '\n'


def group_shap(shap, triad):
  """Return the GroupContribution of shap under triad."""
  for name in shap.feature_names:
    try:
      triad.dimension(name)
    except SchemaError:
      raise SchemaError('SHAP feature %s cannot be grouped: no triad prefix' %
                        name)
  return GroupContribution(shap, triad)


def group_shares_by_region(groups, regions):
  """Return a frame of triad shares per region label (e.g. district)."""
  regions = numpy.asarray(regions, dtype=object)
  records = []
  for region in sorted(set(r for r in regions if r is not None), key=str):
    rows = numpy.flatnonzero(regions == region)
    record = collections.OrderedDict([('region', region),
                                      ('segments', len(rows))])
    for d, share in groups._shares(rows).items():
      record['share_' + d] = share
    records.append(record)
  return pandas.DataFrame(records)


def dependence_table(shap, feature):
  """Return (segment_id, value, phi) of one feature, sorted by value."""
  if feature not in shap.feature_names:
    raise KeyError('no feature %s in the SHAP matrix' % feature)
  if shap.data is None:
    raise ValueError('the SHAP matrix carries no feature values')
  j = shap.feature_names.index(feature)
  order = numpy.argsort(shap.data[:, j], kind='stable')
  return pandas.DataFrame(collections.OrderedDict([
      ('segment_id', [shap.segment_ids[i] for i in order]),
      ('value', shap.data[order, j]),
      ('phi', shap.values[order, j]),
  ]))


def dependence_spearman(shap, feature, rows=None):
  """Return the Spearman correlation of a feature's values and SHAP values."""
  j = shap.feature_names.index(feature)
  if rows is None:
    rows = numpy.arange(len(shap))
  values, phi = shap.data[rows, j], shap.values[rows, j]
  if numpy.ptp(values) == 0 or numpy.ptp(phi) == 0:
    return 0.0
  return float(scipy.stats.spearmanr(values, phi)[0])


def mean_abs_importance(shap, rows=None):
  """Return mean |phi| per feature, largest first, ties by name."""
  if rows is None:
    rows = numpy.arange(len(shap))
  importance = numpy.abs(shap.values[rows]).mean(axis=0)
  series = pandas.Series(importance, index=shap.feature_names)
  order = sorted(range(len(importance)),
                 key=lambda j: (-importance[j], shap.feature_names[j]))
  return series.iloc[order]


def ols_attributions(ols, X, feature_names, segment_ids=None):
  """Return the exact linear-model ShapMatrix of an OlsModel."""
  X = numpy.asarray(X, dtype=float)
  base = ols.intercept + float(ols.x_mean @ ols.coef)
  return ShapMatrix(base, ols.attributions(X), feature_names, X, segment_ids)


def write_shap(path, shap, groups=None):
  frame = pandas.DataFrame(collections.OrderedDict(
      [('segment_id', list(shap.segment_ids)),
       ('base_value', numpy.full(len(shap), shap.base_value))] +
      [(name, shap.values[:, j]) for j, name in enumerate(shap.feature_names)]))
  if groups is not None:
    for d in schema.DIMENSIONS:
      frame['phi_' + d] = groups.phi(d)
  frame.to_csv(path, index=False, float_format=schema.CSV_FLOAT_FORMAT,
               lineterminator='\n')


def read_shap(path):
  frame = pandas.read_csv(path, dtype={'segment_id': str},
                          float_precision='round_trip')
  names = [c for c in frame.columns[2:] if not c.startswith('phi_')]
  base = float(frame['base_value'].iloc[0]) if len(frame) else 0.0
  return ShapMatrix(base, frame[names].to_numpy(dtype=float), names,
                    segment_ids=frame['segment_id'])


def write_shares(path, groups):
  with open(path, 'w', encoding='utf-8') as f:
    f.write(groups.format())
