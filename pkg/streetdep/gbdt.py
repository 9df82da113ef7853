"""Gradient-boosted regression trees with the squared-error objective.

Trees grow level by level. At every level all frontier nodes are split at
once: each candidate feature keeps its rows sorted by value, grouped by
node, so the best threshold of every node comes from one cumulative sum.
Thresholds are exhaustive over the distinct sorted values (no binning).

Example:

  from streetdep import gbdt
  params = gbdt.Hyperparams(n_estimators=200, max_depth=3)
  model = gbdt.fit_gbdt(X, y, params, feature_names=names)
  y_hat = model.predict(X)
  gbdt.save_model('model.txt', model)
"""

import collections
import logging

import numpy

from streetdep import util
from streetdep.errors import ConfigError
from streetdep.errors import InputError
from streetdep.errors import ModelIntegrityError

MODEL_MAGIC = 'streetdep-gbdt 1'

TreeNode = collections.namedtuple(
    'TreeNode', 'node_id feature threshold left right value cover')
"""One node of a Tree; feature is -1 and left, right are -1 for a leaf."""


class Hyperparams(object):
  """Boosting and tree growth parameters.

  The defaults are the tuned values of the boosted model (200 rounds of
  depth-8 trees at learning rate 0.05); lambda_ and min_child_weight are
  the XGBoost defaults.
  """

  FIELDS = ('n_estimators', 'max_depth', 'learning_rate', 'subsample',
            'colsample_bytree', 'gamma', 'lambda_', 'min_child_weight', 'seed')

  __slots__ = FIELDS

  def __init__(self, n_estimators=200, max_depth=8, learning_rate=0.05,
               subsample=0.8, colsample_bytree=0.8, gamma=0.1, lambda_=1.0,
               min_child_weight=1.0, seed=42):
    self.n_estimators = int(n_estimators)
    self.max_depth = int(max_depth)
    self.learning_rate = float(learning_rate)
    self.subsample = float(subsample)
    self.colsample_bytree = float(colsample_bytree)
    self.gamma = float(gamma)
    self.lambda_ = float(lambda_)
    self.min_child_weight = float(min_child_weight)
    self.seed = int(seed)
    if self.n_estimators < 0:
      raise ConfigError('n_estimators must be >= 0')
    if self.max_depth < 0:
      raise ConfigError('max_depth must be >= 0')
    if not self.learning_rate >= 0:
      raise ConfigError('learning_rate must be >= 0')
    if not 0 < self.subsample <= 1:
      raise ConfigError('subsample must be in (0, 1], got %r' % self.subsample)
    if not 0 < self.colsample_bytree <= 1:
      raise ConfigError('colsample_bytree must be in (0, 1], got %r' %
                        self.colsample_bytree)
    if not (self.gamma >= 0 and self.lambda_ >= 0 and
            self.min_child_weight >= 0):
      raise ConfigError('gamma, lambda_ and min_child_weight must be >= 0')

  def __repr__(self):
    return 'Hyperparams(%s)' % ', '.join(
        '%s=%r' % (k, getattr(self, k)) for k in self.FIELDS)

  def __eq__(self, other):
    return (isinstance(other, Hyperparams) and
            self.as_dict() == other.as_dict())

  def __hash__(self):
    return hash(tuple(sorted(self.as_dict().items())))

  def as_dict(self):
    return collections.OrderedDict((k, getattr(self, k)) for k in self.FIELDS)

  def replace(self, **kwargs):
    values = self.as_dict()
    values.update(kwargs)
    return Hyperparams(**values)


class Tree(object):
  """A regression tree stored as parallel arrays in pre-order.

  Node 0 is the root. A row goes left iff x[feature] <= threshold.
  """

  __slots__ = ['feature', 'threshold', 'left', 'right', 'value', 'cover']

  def __init__(self, feature, threshold, left, right, value, cover):
    self.feature = numpy.asarray(feature, dtype=numpy.intp)
    self.threshold = numpy.asarray(threshold, dtype=float)
    self.left = numpy.asarray(left, dtype=numpy.intp)
    self.right = numpy.asarray(right, dtype=numpy.intp)
    self.value = numpy.asarray(value, dtype=float)
    self.cover = numpy.asarray(cover, dtype=float)

  def __len__(self):
    return len(self.feature)

  def node(self, i):
    return TreeNode(i, int(self.feature[i]), float(self.threshold[i]),
                    int(self.left[i]), int(self.right[i]),
                    float(self.value[i]), float(self.cover[i]))

  def nodes(self):
    return [self.node(i) for i in range(len(self))]

  def is_leaf(self, i):
    return self.feature[i] < 0

  @property
  def depth(self):
    depth = numpy.zeros(len(self), dtype=int)
    for i in range(len(self)):
      if not self.is_leaf(i):
        depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
    return int(depth.max()) if len(self) else 0

  def used_features(self):
    return set(int(f) for f in self.feature[self.feature >= 0])

  def apply(self, X):
    """Return the leaf index of every row of X."""
    X = numpy.asarray(X, dtype=float)
    index = numpy.zeros(len(X), dtype=numpy.intp)
    rows = numpy.arange(len(X))
    while True:
      feature = self.feature[index]
      inner = feature >= 0
      if not inner.any():
        return index
      r = rows[inner]
      go_left = X[r, feature[inner]] <= self.threshold[index[inner]]
      index[r] = numpy.where(go_left, self.left[index[r]],
                             self.right[index[r]])

  def predict(self, X):
    return self.value[self.apply(X)]

  def expected_value(self):
    """Return the cover-weighted mean leaf value."""
    leaves = self.feature < 0
    return float((self.value[leaves] * self.cover[leaves]).sum() /
                 self.cover[0])

  def check(self):
    """Raise ModelIntegrityError unless the tree is structurally valid."""
    n = len(self)
    if not n:
      raise ModelIntegrityError('empty tree')
    seen = numpy.zeros(n, dtype=bool)
    seen[0] = True
    for i in range(n):
      if self.is_leaf(i):
        if self.left[i] != -1 or self.right[i] != -1:
          raise ModelIntegrityError('leaf %d has children' % i)
      else:
        for child in (self.left[i], self.right[i]):
          if not i < child < n or seen[child]:
            raise ModelIntegrityError('node %d: bad child %d' % (i, child))
          seen[child] = True
      if not self.cover[i] > 0:
        raise ModelIntegrityError('node %d has cover %r' % (i, self.cover[i]))
    if not seen.all():
      raise ModelIntegrityError('unreachable nodes in tree')


def _sample_columns(p, colsample, rng):
  if colsample >= 1 or rng is None:
    return numpy.arange(p)
  k = max(1, int(colsample * p))
  return numpy.sort(rng.choice(p, size=k, replace=False))


def _threshold(lo, hi):
  mid = lo + (hi - lo) / 2.0
  if not lo <= mid < hi:
    return lo
  return mid


def _preorder(feature, threshold, left, right, value, cover):
  """Renumber a level-order node list into pre-order arrays."""
  order = []
  stack = [0]
  while stack:
    i = stack.pop()
    order.append(i)
    if feature[i] >= 0:
      stack.append(right[i])
      stack.append(left[i])
  new_id = dict((old, new) for new, old in enumerate(order))
  mapped = lambda ids: [new_id[c] if c >= 0 else -1 for c in ids]
  return Tree([feature[i] for i in order], [threshold[i] for i in order],
              mapped([left[i] for i in order]),
              mapped([right[i] for i in order]),
              [value[i] for i in order], [cover[i] for i in order])


def fit_tree(X, gradients, hessians, params, rng=None):
  """Grow one regression tree on (gradients, hessians).

  Candidate features are drawn from rng per params.colsample_bytree (all
  features if rng is None). A node splits at the best candidate
  (max_depth permitting) iff the gain is > 0 and both children reach
  min_child_weight. Among equal gains, the lower feature index and then the
  lower threshold wins.
  """
  X = numpy.asarray(X, dtype=float)
  g = numpy.asarray(gradients, dtype=float)
  h = numpy.asarray(hessians, dtype=float)
  n = len(X)
  if not n:
    raise InputError('fit_tree on an empty training set')
  if g.shape != (n,) or h.shape != (n,):
    raise InputError('gradients and hessians must have one value per row')
  if not (h > 0).all():
    raise InputError('hessians must be > 0')
  lam, gamma, mcw = params.lambda_, params.gamma, params.min_child_weight
  candidates = _sample_columns(X.shape[1], params.colsample_bytree, rng)
  q = len(candidates)

  feature, threshold, left, right = [-1], [0.0], [-1], [-1]
  node_g, node_h = [float(g.sum())], [float(h.sum())]
  frontier = [0]
  node_of = numpy.zeros(n, dtype=numpy.intp)
  if q:
    order = numpy.argsort(X[:, candidates], axis=0, kind='stable').T
    xs = numpy.take_along_axis(X[:, candidates].T, order, axis=1)

  for _ in range(params.max_depth if q else 0):
    if not frontier:
      break
    m = len(frontier)
    slot_of_node = numpy.full(len(feature), -1, dtype=numpy.intp)
    slot_of_node[frontier] = numpy.arange(m)
    slots = slot_of_node[node_of][order]
    regroup = numpy.argsort(slots, axis=1, kind='stable')
    order = numpy.take_along_axis(order, regroup, axis=1)
    xs = numpy.take_along_axis(xs, regroup, axis=1)
    slot = numpy.take_along_axis(slots, regroup, axis=1)[0].astype(numpy.intp)
    counts = numpy.bincount(slot[slot >= 0], minlength=m)
    closed = n - counts.sum()
    starts = closed + numpy.concatenate([[0], numpy.cumsum(counts)[:-1]])
    ends = starts + counts

    gs, hs = g[order], h[order]
    zero = numpy.zeros((q, 1))
    cg = numpy.concatenate([zero, numpy.cumsum(gs, axis=1)], axis=1)
    ch = numpy.concatenate([zero, numpy.cumsum(hs, axis=1)], axis=1)
    pos_slot = numpy.maximum(slot, 0)
    gl = cg[:, 1:] - cg[:, starts[pos_slot]]
    hl = ch[:, 1:] - ch[:, starts[pos_slot]]
    total_g = numpy.array(node_g)[frontier][pos_slot]
    total_h = numpy.array(node_h)[frontier][pos_slot]
    gr, hr = total_g - gl, total_h - hl
    with numpy.errstate(divide='ignore', invalid='ignore'):
      gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) -
                    total_g * total_g / (total_h + lam)) - gamma
    valid = numpy.zeros((q, n), dtype=bool)
    valid[:, :-1] = ((slot[:-1] >= 0) & (slot[1:] == slot[:-1]))[None, :]
    valid[:, :-1] &= xs[:, :-1] < xs[:, 1:]
    valid &= (hl >= mcw) & (hr >= mcw)
    gain = numpy.where(valid, gain, -numpy.inf)
    best = numpy.maximum.reduceat(gain[:, closed:], starts - closed, axis=1)
    best_feature = numpy.argmax(best, axis=0)

    next_frontier = []
    for k, node in enumerate(frontier):
      f = best_feature[k]
      if not best[f, k] > 0:
        continue
      i = starts[k] + int(numpy.argmax(gain[f, starts[k]:ends[k]]))
      feature[node] = int(candidates[f])
      threshold[node] = _threshold(xs[f, i], xs[f, i + 1])
      for child, lo, hi, cg_, ch_ in (
          (len(feature), starts[k], i + 1, gl[f, i], hl[f, i]),
          (len(feature) + 1, i + 1, ends[k], gr[f, i], hr[f, i])):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        node_g.append(float(cg_))
        node_h.append(float(ch_))
        node_of[order[f, lo:hi]] = child
        next_frontier.append(child)
      left[node], right[node] = len(feature) - 2, len(feature) - 1
    frontier = next_frontier

  node_g, node_h = numpy.array(node_g), numpy.array(node_h)
  value = -node_g / (node_h + lam)
  return _preorder(feature, threshold, left, right, value, node_h)


class GbdtModel(object):
  """base_score + learning_rate * sum of tree outputs."""

  def __init__(self, base_score, learning_rate, trees, feature_names):
    self.base_score = float(base_score)
    self.learning_rate = float(learning_rate)
    self.trees = list(trees)
    self.feature_names = list(feature_names)

  def __repr__(self):
    return 'GbdtModel(%d trees, %d features)' % (len(self.trees),
                                                 len(self.feature_names))

  def raw_sum(self, X):
    """Return sum over trees of tree outputs, in tree order."""
    X = numpy.asarray(X, dtype=float)
    total = numpy.zeros(len(X))
    for tree in self.trees:
      total += tree.predict(X)
    return total

  def predict(self, X):
    return self.base_score + self.learning_rate * self.raw_sum(X)

  def check(self):
    for tree in self.trees:
      tree.check()
      if tree.feature.max(initial=-1) >= len(self.feature_names):
        raise ModelIntegrityError('tree splits on an unknown feature')


def fit_gbdt(X, y, params, feature_names=None):
  """Fit a boosted ensemble for the squared error.

  Round t draws its row subsample (the first subsample * n entries of a
  permutation) and its candidate features from the stream
  make_rng(params.seed, 'gbdt', t).
  """
  X = numpy.asarray(X, dtype=float)
  y = numpy.asarray(y, dtype=float)
  if X.ndim != 2 or y.shape != (len(X),):
    raise InputError('X must be rows x features and y one value per row')
  if not len(y):
    raise InputError('fit_gbdt on an empty training set')
  if not (numpy.isfinite(X).all() and numpy.isfinite(y).all()):
    raise InputError('fit_gbdt needs finite X and y')
  if feature_names is None:
    feature_names = ['f%d' % j for j in range(X.shape[1])]
  n = len(y)
  base_score = float(y.mean())
  y_hat = numpy.full(n, base_score)
  hessians = numpy.ones(n)
  trees = []
  m = max(1, int(numpy.floor(params.subsample * n)))
  for t in range(params.n_estimators):
    rng = util.make_rng(params.seed, 'gbdt', t)
    if m < n:
      rows = rng.permutation(n)[:m]
    else:
      rows = numpy.arange(n)
    gradients = y_hat - y
    tree = fit_tree(X[rows], gradients[rows], hessians[rows], params, rng)
    trees.append(tree)
    y_hat += params.learning_rate * tree.predict(X)
  logging.debug('fit %d trees, mean depth %.2f, train rmse %.6g' %
                (len(trees),
                 numpy.mean([t.depth for t in trees]) if trees else 0.0,
                 numpy.sqrt(numpy.mean((y_hat - y) ** 2))))
  return GbdtModel(base_score, params.learning_rate, trees, feature_names)


def _format(value):
  return '%.17g' % value


def dump_model(model):
  """Return the line-oriented text form of model."""
  lines = [MODEL_MAGIC,
           'base_score %s' % _format(model.base_score),
           'learning_rate %s' % _format(model.learning_rate),
           'features %d' % len(model.feature_names)]
  lines.extend(model.feature_names)
  lines.append('trees %d' % len(model.trees))
  for t, tree in enumerate(model.trees):
    lines.append('tree %d %d' % (t, len(tree)))
    for node in tree.nodes():
      kind = 'leaf' if node.feature < 0 else 'split'
      lines.append(' '.join([
          str(node.node_id), kind, str(node.feature),
          _format(node.threshold), str(node.left), str(node.right),
          _format(node.value), _format(node.cover)]))
  return '\n'.join(lines) + '\n'


def parse_model(text):
  lines = text.splitlines()
  try:
    if lines[0] != MODEL_MAGIC:
      raise ModelIntegrityError('not a model file: %r' % lines[0][:40])
    base_score = float(lines[1].split()[1])
    learning_rate = float(lines[2].split()[1])
    n_features = int(lines[3].split()[1])
    names = lines[4:4 + n_features]
    at = 4 + n_features
    n_trees = int(lines[at].split()[1])
    at += 1
    trees = []
    for t in range(n_trees):
      _, index, size = lines[at].split()
      if int(index) != t:
        raise ModelIntegrityError('tree %d found at position %d' %
                                  (int(index), t))
      rows = [line.split() for line in lines[at + 1:at + 1 + int(size)]]
      at += 1 + int(size)
      if len(rows) != int(size):
        raise ModelIntegrityError('tree %d is truncated' % t)
      tree = Tree([int(r[2]) for r in rows], [float(r[3]) for r in rows],
                  [int(r[4]) for r in rows], [int(r[5]) for r in rows],
                  [float(r[6]) for r in rows], [float(r[7]) for r in rows])
      if [int(r[0]) for r in rows] != list(range(len(rows))):
        raise ModelIntegrityError('tree %d: node ids out of order' % t)
      trees.append(tree)
  except (IndexError, ValueError) as e:
    if isinstance(e, ModelIntegrityError):
      raise
    raise ModelIntegrityError('malformed model text: %s' % e)
  model = GbdtModel(base_score, learning_rate, trees, names)
  model.check()
  return model


def save_model(path, model):
  with open(path, 'w', encoding='utf-8') as f:
    f.write(dump_model(model))


def load_model(path):
  with open(path, encoding='utf-8') as f:
    return parse_model(f.read())
