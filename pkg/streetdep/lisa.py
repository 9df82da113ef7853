"""Bivariate local Moran statistics on the harmonized grid.

The direction is always population (x) at a cell against the spatial lag
of supply (y) around it:

  I_i = zx_i * sum_j w_ij zy_j

Significance comes from conditional permutation: zx_i stays fixed while
the neighbors of i are replaced by a uniform random subset of the other
cells. Each cell draws from its own Philox stream keyed by (seed, cell id),
so results do not depend on the thread count or the cell order.

Example:

  weights = lisa.build_weights((grid.n_rows, grid.n_cols),
                               include=~grid.null_supply)
  result = lisa.bivariate_lisa(grid.population, grid.aggregates['supply'],
                               weights, permutations=999, seed=42)
  zones = lisa.mismatch_zones(result, labels, pairs)
"""

import collections
import logging

import numpy
import pandas
import scipy.sparse
import scipy.sparse.csgraph

from streetdep import schema
from streetdep import typology
from streetdep import util
from streetdep.errors import ConfigError
from streetdep.errors import WeightsError

SCHEMES = ('queen', 'rook')

QUADRANTS = ('HH', 'HL', 'LH', 'LL', 'NS')

MIN_PERMUTATIONS = 99

CELL_CHUNK = 256

_OFFSETS = {
    'rook': ((-1, 0), (0, -1), (0, 1), (1, 0)),
    'queen': ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0),
              (1, 1)),
}


class SpatialWeights(object):
  """Row-standardized lattice contiguity weights.

  Excluded cells have neither neighbors nor incoming links. isolated marks
  included cells left without a neighbor; their rows sum to 0.
  """

  def __init__(self, n_rows, n_cols, matrix, include, scheme):
    self.n_rows = n_rows
    self.n_cols = n_cols
    self.matrix = matrix
    self.include = include
    self.scheme = scheme
    self.cardinality = numpy.diff(matrix.indptr)
    self.isolated = include & (self.cardinality == 0)

  def __len__(self):
    return self.n_rows * self.n_cols

  def neighbors(self, cell):
    return list(self.matrix.indices[
        self.matrix.indptr[cell]:self.matrix.indptr[cell + 1]])

  def weights(self, cell):
    return list(self.matrix.data[
        self.matrix.indptr[cell]:self.matrix.indptr[cell + 1]])

  def lag(self, values):
    return self.matrix @ values

  def link_count(self):
    return int(self.matrix.nnz)


def build_weights(shape, scheme='queen', include=None):
  """Return SpatialWeights on an n_rows x n_cols lattice.

  shape is (n_rows, n_cols) or a GridTable. include masks the cells taking
  part (default all).
  """
  if scheme not in SCHEMES:
    raise ConfigError('unknown weights scheme %r' % (scheme,))
  if hasattr(shape, 'n_rows'):
    shape = (shape.n_rows, shape.n_cols)
  n_rows, n_cols = int(shape[0]), int(shape[1])
  n = n_rows * n_cols
  if n <= 0:
    raise WeightsError('empty grid %dx%d' % (n_rows, n_cols))
  if include is None:
    include = numpy.ones(n, dtype=bool)
  include = numpy.asarray(include, dtype=bool)
  if include.shape != (n,):
    raise WeightsError('include mask has %d cells for %d' % (include.size, n))
  if not include.any():
    raise WeightsError('no cell takes part in the weights')
  cells = numpy.arange(n)
  rows, cols = cells // n_cols, cells % n_cols
  src, dst = [], []
  for dr, dc in _OFFSETS[scheme]:
    r, c = rows + dr, cols + dc
    ok = (r >= 0) & (r < n_rows) & (c >= 0) & (c < n_cols)
    ok &= include
    ok[ok] &= include[r[ok] * n_cols + c[ok]]
    src.append(cells[ok])
    dst.append(r[ok] * n_cols + c[ok])
  src = numpy.concatenate(src)
  dst = numpy.concatenate(dst)
  binary = scipy.sparse.csr_matrix(
      (numpy.ones(len(src)), (src, dst)), shape=(n, n))
  binary.sort_indices()
  degree = numpy.asarray(binary.sum(axis=1)).ravel()
  with numpy.errstate(divide='ignore'):
    scale = numpy.where(degree > 0, 1.0 / degree, 0.0)
  matrix = scipy.sparse.diags(scale) @ binary
  matrix = scipy.sparse.csr_matrix(matrix)
  matrix.sort_indices()
  weights = SpatialWeights(n_rows, n_cols, matrix, include, scheme)
  if weights.isolated.any():
    logging.warning('%d grid cells have no %s neighbor' %
                    (weights.isolated.sum(), scheme))
  return weights


def _zscore(values):
  std = values.std()
  if std == 0:
    return numpy.zeros_like(values), True
  return (values - values.mean()) / std, False


class LisaResult(object):
  """Local statistics of the included cells, in cell id order."""

  def __init__(self, cell_ids, rows, cols, z_x, lag_y, local_i, pseudo_p,
               clusters, permutations, alpha, seed):
    self.cell_ids = numpy.asarray(cell_ids)
    self.rows = numpy.asarray(rows)
    self.cols = numpy.asarray(cols)
    self.z_x = z_x
    self.lag_y = lag_y
    self.local_i = local_i
    self.pseudo_p = pseudo_p
    self.clusters = numpy.asarray(clusters, dtype=object)
    self.permutations = permutations
    self.alpha = alpha
    self.seed = seed

  def __len__(self):
    return len(self.cell_ids)

  def cells_in(self, quadrant):
    return self.cell_ids[self.clusters == quadrant]

  def counts(self):
    return collections.OrderedDict(
        (q, int((self.clusters == q).sum())) for q in QUADRANTS)

  def to_frame(self):
    return pandas.DataFrame(collections.OrderedDict([
        ('cell_id', self.cell_ids),
        ('row', self.rows),
        ('col', self.cols),
        ('z_pop', self.z_x),
        ('lag_supply', self.lag_y),
        ('I', self.local_i),
        ('pseudo_p', self.pseudo_p),
        ('cluster', self.clusters),
    ]))


def _random_subsets(rng, population, size, draws):
  """Return draws x size indices, each row a uniform subset of population.

  Robert Floyd's sampling, vectorized over draws.
  """
  chosen = numpy.empty((draws, size), dtype=numpy.int64)
  for step, j in enumerate(range(population - size, population)):
    t = rng.integers(0, j + 1, size=draws)
    taken = (chosen[:, :step] == t[:, None]).any(axis=1)
    chosen[:, step] = numpy.where(taken, j, t)
  return chosen


def _permutation_p(cells, position, z_x, z_y, local_i, weights, permutations,
                   seed):
  """Return pseudo p-values of the given cells (global ids)."""
  n = len(z_y)
  p = numpy.ones(len(cells))
  for out, cell in enumerate(cells):
    k = weights.cardinality[cell]
    if k == 0 or local_i[position[cell]] == 0:
      continue
    rng = util.make_rng(seed, 'lisa', int(cell))
    draws = _random_subsets(rng, n - 1, k, permutations)
    # Skip the cell itself among the other included cells.
    draws += draws >= position[cell]
    w = weights.weights(cell)
    lag = z_y[draws] @ numpy.asarray(w)
    simulated = z_x[position[cell]] * lag
    extreme = (numpy.abs(simulated) >= abs(local_i[position[cell]])).sum()
    p[out] = (extreme + 1.0) / (permutations + 1.0)
  return p


def bivariate_lisa(x, y, weights, permutations=999, seed=42, alpha=0.05,
                   threads=1):
  """Return the LisaResult of population x against supply y.

  x and y are per-cell arrays over the full lattice; only cells included
  in the weights are standardized and tested. Moments are population
  moments (divide by n).
  """
  if permutations < MIN_PERMUTATIONS:
    raise ConfigError('permutations must be >= %d, got %r' %
                      (MIN_PERMUTATIONS, permutations))
  if not 0 < alpha < 1:
    raise ConfigError('alpha must lie in (0, 1), got %r' % alpha)
  x = numpy.asarray(x, dtype=float)
  y = numpy.asarray(y, dtype=float)
  cells = numpy.flatnonzero(weights.include)
  if not (numpy.isfinite(x[cells]).all() and numpy.isfinite(y[cells]).all()):
    raise ValueError('population and supply must be finite on every '
                     'included cell')
  z_x, constant_x = _zscore(x[cells])
  z_y, constant_y = _zscore(y[cells])
  rows, cols = cells // weights.n_cols, cells % weights.n_cols
  if constant_x or constant_y:
    logging.warning('%s is constant over %d cells; all local I are 0' %
                    ('population' if constant_x else 'supply', len(cells)))
    zeros = numpy.zeros(len(cells))
    return LisaResult(cells, rows, cols, z_x, zeros, zeros.copy(),
                      numpy.ones(len(cells)), ['NS'] * len(cells),
                      permutations, alpha, seed)
  inner = weights.matrix[cells][:, cells]
  lag_y = inner @ z_y
  local_i = z_x * lag_y
  position = numpy.full(len(weights), -1)
  position[cells] = numpy.arange(len(cells))
  chunks = [cells[lo:lo + CELL_CHUNK]
            for lo in range(0, len(cells), CELL_CHUNK)]

  def TestChunk(chunk):
    return _permutation_p(chunk, position, z_x, z_y, local_i, weights,
                          permutations, seed)

  with util.Stopwatch() as sw:
    pseudo_p = numpy.concatenate(util.parallel_map(TestChunk, chunks, threads))
  clusters = numpy.full(len(cells), 'NS', dtype=object)
  significant = pseudo_p <= alpha
  for name, hx, hy in (('HH', 1, 1), ('HL', 1, -1), ('LH', -1, 1),
                       ('LL', -1, -1)):
    clusters[significant & (numpy.sign(z_x) == hx) &
             (numpy.sign(lag_y) == hy)] = name
  result = LisaResult(cells, rows, cols, z_x, lag_y, local_i, pseudo_p,
                      clusters, permutations, alpha, seed)
  logging.info('bivariate LISA on %d cells, %d permutations in %.3fs: %s' %
               (len(cells), permutations, sw.elapsed, ' '.join(
                   '%s=%d' % item for item in result.counts().items())))
  return result


def global_bivariate_moran(x, y, weights):
  """Return zx . (W zy) / n over the included cells."""
  cells = numpy.flatnonzero(weights.include)
  z_x, _ = _zscore(numpy.asarray(x, dtype=float)[cells])
  z_y, _ = _zscore(numpy.asarray(y, dtype=float)[cells])
  inner = weights.matrix[cells][:, cells]
  return float(z_x @ (inner @ z_y)) / len(cells)


class MismatchReport(object):
  """Connected target-quadrant clusters and the typology of their streets.

  clusters is a list of (cluster number, cell ids, segment ids);
  crosstab is a quadrant x label count frame over all significant cells.
  """

  def __init__(self, target, clusters, label_shares, crosstab):
    self.target = target
    self.clusters = clusters
    self.label_shares = label_shares
    self.crosstab = crosstab

  def __bool__(self):
    return bool(self.clusters)

  def cells(self):
    return sorted(int(c) for _, cells, _ in self.clusters for c in cells)

  def segment_ids(self):
    return sorted(set(s for _, _, segments in self.clusters for s in segments))

  def to_frame(self):
    records = []
    for number, cells, segments in self.clusters:
      record = collections.OrderedDict([
          ('cluster', number), ('cells', len(cells)),
          ('segments', len(segments))])
      record.update(self.label_shares[number])
      records.append(record)
    return pandas.DataFrame(records)

  def format(self):
    lines = ['# %s clusters: %d, cells %d, segments %d' % (
        self.target, len(self.clusters), len(self.cells()),
        len(self.segment_ids()))]
    for number, cells, segments in self.clusters:
      shares = self.label_shares[number]
      lines.append('cluster %d: %d cells, %d segments, %s' % (
          number, len(cells), len(segments), ' '.join(
              '%s=%.1f%%' % (label, 100 * shares[label])
              for label in typology.LABELS if shares.get(label))))
    lines.append('# quadrant x typology label (segments)')
    lines.append(self.crosstab.to_string())
    return '\n'.join(lines) + '\n'


def _queen_components(rows, cols):
  """Return component numbers of lattice cells under queen contiguity."""
  index = dict(((r, c), i) for i, (r, c) in enumerate(zip(rows, cols)))
  src, dst = [], []
  for i, (r, c) in enumerate(zip(rows, cols)):
    for dr, dc in _OFFSETS['queen']:
      j = index.get((r + dr, c + dc))
      if j is not None:
        src.append(i)
        dst.append(j)
  link = scipy.sparse.csr_matrix(
      (numpy.ones(len(src)), (src, dst)), shape=(len(rows), len(rows)))
  _, component = scipy.sparse.csgraph.connected_components(link,
                                                           directed=False)
  return component


def mismatch_zones(lisa, labels, segment_cells, target='HL'):
  """Cross-reference target-quadrant cells with the street typology.

  labels maps segment id -> typology label; segment_cells is a sequence of
  (segment id, cell id) pairs. Target cells are grouped into clusters by
  queen contiguity.
  """
  if target not in QUADRANTS[:4]:
    raise ConfigError('unknown target quadrant %r' % (target,))
  by_cell = collections.defaultdict(set)
  for segment_id, cell in segment_cells:
    by_cell[int(cell)].add(str(segment_id))
  quadrant_of = dict(zip((int(c) for c in lisa.cell_ids), lisa.clusters))

  pairs = sorted(set((quadrant_of[cell], segment_id)
                     for cell, segments in by_cell.items()
                     if quadrant_of.get(cell, 'NS') != 'NS'
                     for segment_id in segments))
  crosstab = pandas.DataFrame(0, index=list(QUADRANTS[:4]),
                              columns=list(typology.LABELS))
  for quadrant, segment_id in pairs:
    crosstab.loc[quadrant, labels[segment_id]] += 1

  in_target = lisa.clusters == target
  target_cells = lisa.cell_ids[in_target].astype(int)
  clusters, label_shares = [], {}
  if len(target_cells):
    component = _queen_components(lisa.rows[in_target].astype(int),
                                  lisa.cols[in_target].astype(int))
    for number in range(component.max() + 1):
      cells = target_cells[component == number]
      segments = sorted(set().union(*(by_cell.get(int(c), set())
                                      for c in cells)))
      counter = collections.Counter(labels[s] for s in segments)
      label_shares[number] = collections.OrderedDict(
          (label, counter[label] / float(len(segments)) if segments else 0.0)
          for label in typology.LABELS)
      clusters.append((number, [int(c) for c in cells], segments))
  logging.info('%d %s clusters over %d cells' %
               (len(clusters), target, len(target_cells)))
  return MismatchReport(target, clusters, label_shares, crosstab)


def write_lisa(path, result):
  result.to_frame().to_csv(path, index=False,
                           float_format=schema.CSV_FLOAT_FORMAT,
                           lineterminator='\n')


def read_lisa(path):
  frame = pandas.read_csv(path, float_precision='round_trip')
  return LisaResult(frame['cell_id'].to_numpy(), frame['row'].to_numpy(),
                    frame['col'].to_numpy(), frame['z_pop'].to_numpy(),
                    frame['lag_supply'].to_numpy(), frame['I'].to_numpy(),
                    frame['pseudo_p'].to_numpy(), frame['cluster'].to_numpy(),
                    None, None, None)
