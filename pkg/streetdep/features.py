"""Feature engineering: from raw spatial inputs to a segment FeatureTable.

Buffer queries (trajectory points, check-ins, POIs, land-use cells against
segment polylines) go through a shapely STRtree with the `dwithin'
predicate, so a point counts for a segment iff its minimum distance to the
polyline is <= the radius. A point near several segments counts for each.
"""

import collections
import logging

import numpy
import pandas
import scipy.stats
import shapely

from streetdep import schema
from streetdep.errors import ConfigError
from streetdep.errors import DomainError
from streetdep.errors import InputError
from streetdep.errors import InterpolationError
from streetdep.errors import SchemaError

DEFAULT_INTERVAL_M = 5.0

DEFAULT_DENSITY_RADII = (10, 20, 30)

DEFAULT_POI_RADIUS_M = 300.0

DEFAULT_LANDUSE_RADIUS_M = 100.0

DEFAULT_CHECKIN_RADIUS_M = 30.0

DEFAULT_CELL_SIZE_M = 200.0

LANDUSE_CLASSES = ('transport', 'tree', 'grass', 'water', 'building',
                   'residential', 'commercial', 'bare')

CHECKIN_SCORES = ('urban', 'positive', 'relax', 'explore', 'social', 'sport',
                  'safe_walk', 'context')

CHECKIN_COUNT_COLUMN = 'L_total_checkin_count'

PoiEntropy = collections.namedtuple('PoiEntropy', 'value count')


def _lines(segments):
  return shapely.linestrings([segment.coords for segment in segments])


def _buffer_pairs(xy, segments, radius_m, lines=None):
  """Return (point index, segment index, distance) of pairs within radius_m."""
  xy = numpy.asarray(xy, dtype=float).reshape(-1, 2)
  if not len(xy) or not len(segments):
    empty = numpy.zeros(0, dtype=int)
    return empty, empty, numpy.zeros(0)
  if lines is None:
    lines = _lines(segments)
  points = shapely.points(xy)
  tree = shapely.STRtree(lines)
  point_index, segment_index = tree.query(points, predicate='dwithin',
                                          distance=radius_m)
  distance = shapely.distance(points[point_index], lines[segment_index])
  return point_index, segment_index, distance


# --- Trajectories and the exercise density response.


def resample_trajectory(points, interval_m=DEFAULT_INTERVAL_M):
  """Return points spaced interval_m apart in arc length along a polyline.

  The first and last input points are always kept; the last gap may be
  shorter than interval_m. A track with fewer than 2 distinct points is
  returned unchanged.
  """
  if not interval_m > 0:
    raise ValueError('interval_m must be > 0, got %r' % interval_m)
  points = numpy.asarray(points, dtype=float).reshape(-1, 2)
  if len(points) > 1:
    legs = numpy.hypot(*numpy.diff(points, axis=0).T)
    points = points[numpy.concatenate([[True], legs > 0])]
  if len(points) < 2:
    logging.warning('trajectory with %d distinct point(s) passed through' %
                    len(points))
    return points.copy()
  along = numpy.concatenate(
      [[0.0], numpy.cumsum(numpy.hypot(*numpy.diff(points, axis=0).T))])
  total = along[-1]
  targets = interval_m * numpy.arange(int(numpy.floor(total / interval_m)) + 1)
  if total - targets[-1] > 1e-9 * interval_m:
    targets = numpy.append(targets, total)
  else:
    targets[-1] = total
  return numpy.column_stack([numpy.interp(targets, along, points[:, 0]),
                             numpy.interp(targets, along, points[:, 1])])


def resample_tracks(frame, interval_m=DEFAULT_INTERVAL_M):
  """Resample every track of a trajectory frame (track_id, x, y[, t])."""
  if 'track_id' not in frame:
    return resample_trajectory(frame[['x', 'y']].to_numpy(), interval_m)
  if 't' in frame:
    frame = frame.sort_values(['track_id', 't'], kind='stable')
  parts = [resample_trajectory(group[['x', 'y']].to_numpy(), interval_m)
           for _, group in frame.groupby('track_id', sort=True)]
  if not parts:
    return numpy.zeros((0, 2))
  return numpy.concatenate(parts)


class ExerciseDensity(object):
  """Raw per-meter point densities of each segment, per buffer radius."""

  def __init__(self, segment_ids, radii, counts, lengths):
    self.segment_ids = tuple(segment_ids)
    self.radii = tuple(radii)
    self.counts = collections.OrderedDict(
        (r, numpy.asarray(counts[r], dtype=float)) for r in self.radii)
    self.lengths = numpy.asarray(lengths, dtype=float)

  def density(self, radius):
    return self.counts[radius] / self.lengths

  @staticmethod
  def response_name(radius):
    return 'log_d%d_norm' % radius

  def normalized(self):
    """Return (name -> standardized column, name -> NormalizationRecord)."""
    columns = collections.OrderedDict()
    records = collections.OrderedDict()
    for r in self.radii:
      name = self.response_name(r)
      columns[name], records[name] = normalize(self.density(r), name=name)
    return columns, records

  def to_frame(self):
    frame = pandas.DataFrame({'segment_id': list(self.segment_ids)})
    for r in self.radii:
      frame['count_%d' % r] = self.counts[r]
      frame['d%d' % r] = self.density(r)
    return frame


def match_density(points, segments, radii=DEFAULT_DENSITY_RADII):
  """Count points within each radius of each segment, per meter of length."""
  radii = tuple(sorted(radii))
  if not radii or min(radii) <= 0:
    raise ValueError('radii must be positive, got %r' % (radii,))
  _, segment_index, distance = _buffer_pairs(points, segments, max(radii))
  counts = dict(
      (r, numpy.bincount(segment_index[distance <= r],
                         minlength=len(segments)))
      for r in radii)
  logging.info('matched %d points to %d segments, %d pairs within %gm' %
               (len(numpy.asarray(points).reshape(-1, 2)), len(segments),
                len(segment_index), max(radii)))
  return ExerciseDensity([s.id for s in segments], radii, counts,
                         [s.length_m for s in segments])


# --- Normalization.


def choose_kind(values):
  """Return log1p_zscore for non-negative columns, else zscore."""
  values = numpy.asarray(values, dtype=float)
  if (values[numpy.isfinite(values)] >= 0).all():
    return 'log1p_zscore'
  return 'zscore'


def normalize(values, kind='log1p_zscore', name=None):
  """Return (standardized values, NormalizationRecord).

  Moments are population moments taken after the log1p step. A constant
  column maps to zeros with its record flagged degenerate.
  """
  values = numpy.asarray(values, dtype=float)
  if kind == 'none':
    return values.copy(), schema.NormalizationRecord('none', 0.0, 1.0, False)
  if kind == 'log1p_zscore':
    if (values < 0).any():
      raise DomainError('column %s has %d negative values; log1p needs >= 0' %
                        (name, (values < 0).sum()))
    transformed = numpy.log1p(values)
  elif kind == 'zscore':
    transformed = values
  else:
    raise SchemaError('column %s: unknown transform kind %r' % (name, kind))
  mean = float(transformed.mean())
  std = float(transformed.std())
  if std == 0 or std <= 1e-12 * abs(mean):
    logging.warning('column %s is constant; standardized to zeros' % name)
    return (numpy.zeros_like(transformed),
            schema.NormalizationRecord(kind, mean, 0.0, True))
  return ((transformed - mean) / std,
          schema.NormalizationRecord(kind, mean, std, False))


def inverse(values, record):
  """Invert normalize given its NormalizationRecord."""
  values = numpy.asarray(values, dtype=float)
  if record.kind == 'none':
    return values.copy()
  if record.degenerate:
    restored = numpy.full_like(values, record.mean)
  else:
    restored = values * record.std + record.mean
  if record.kind == 'log1p_zscore':
    return numpy.expm1(restored)
  return restored


# --- Buffer compositions.


def read_pois(path):
  frame = pandas.read_csv(path, dtype={'category': str},
                          keep_default_na=False)
  if (frame['category'].str.len() == 0).any():
    raise InputError('%s: POI with an empty category' % path)
  return frame


def _entropy(categories):
  if not len(categories):
    return PoiEntropy(0.0, 0)
  _, counts = numpy.unique(numpy.asarray(categories, dtype=str),
                           return_counts=True)
  return PoiEntropy(float(scipy.stats.entropy(counts)), int(counts.sum()))


def poi_entropy(pois, segment, radius_m=DEFAULT_POI_RADIUS_M):
  """Return the Shannon entropy (natural log) of POI categories near segment.

  pois is a frame with x, y, category columns. The count field of the
  result is the number of POIs in range; 0 flags an empty buffer.
  """
  if not radius_m > 0:
    raise ValueError('radius_m must be > 0, got %r' % radius_m)
  point_index, _, _ = _buffer_pairs(pois[['x', 'y']].to_numpy(), [segment],
                                    radius_m)
  return _entropy(pois['category'].to_numpy()[point_index])


def poi_entropy_table(pois, segments, radii=(DEFAULT_POI_RADIUS_M,)):
  """Return L_poi_entropy<r> columns and POI counts for every segment."""
  columns = collections.OrderedDict()
  counts = collections.OrderedDict()
  categories = pois['category'].to_numpy()
  lines = _lines(segments)
  for radius in radii:
    point_index, segment_index, _ = _buffer_pairs(
        pois[['x', 'y']].to_numpy(), segments, radius, lines)
    order = numpy.argsort(segment_index, kind='stable')
    bounds = numpy.searchsorted(segment_index[order],
                                numpy.arange(len(segments) + 1))
    values = numpy.zeros(len(segments))
    count = numpy.zeros(len(segments), dtype=int)
    for i in range(len(segments)):
      found = point_index[order[bounds[i]:bounds[i + 1]]]
      values[i], count[i] = _entropy(categories[found])
    name = 'L_poi_entropy%g' % radius
    columns[name] = values
    counts[name] = count
    logging.info('%s: %d segments without POIs' % (name, (count == 0).sum()))
  return columns, counts


def read_landuse(path):
  frame = pandas.read_csv(path, dtype={'class': str})
  unknown = sorted(set(frame['class']) - set(LANDUSE_CLASSES))
  if unknown:
    raise SchemaError('%s: unknown land-use class(es) %s' %
                      (path, ', '.join(unknown)))
  return frame


def _composition(classes, areas):
  proportions = collections.OrderedDict(
      ('C_D_' + c, 0.0) for c in LANDUSE_CLASSES)
  total = float(numpy.sum(areas))
  if not total > 0:
    return proportions, True
  for c in LANDUSE_CLASSES:
    proportions['C_D_' + c] = float(numpy.sum(areas[classes == c])) / total
  return proportions, False


def landuse_composition(cells, segment, radius_m=DEFAULT_LANDUSE_RADIUS_M):
  """Return (C_D_<class> -> area proportion, empty flag) for one segment.

  cells is a frame with x, y (cell centre), class and cell_size_m columns;
  a cell is in the buffer iff its centre is within radius_m.
  """
  unknown = sorted(set(cells['class']) - set(LANDUSE_CLASSES))
  if unknown:
    raise SchemaError('unknown land-use class(es) %s' % ', '.join(unknown))
  point_index, _, _ = _buffer_pairs(cells[['x', 'y']].to_numpy(), [segment],
                                    radius_m)
  classes = cells['class'].to_numpy()[point_index]
  areas = cells['cell_size_m'].to_numpy(dtype=float)[point_index] ** 2
  return _composition(classes, areas)


def landuse_table(cells, segments, radius_m=DEFAULT_LANDUSE_RADIUS_M):
  """Return C_D_<class> columns for every segment, plus empty-buffer flags."""
  unknown = sorted(set(cells['class']) - set(LANDUSE_CLASSES))
  if unknown:
    raise SchemaError('unknown land-use class(es) %s' % ', '.join(unknown))
  point_index, segment_index, _ = _buffer_pairs(
      cells[['x', 'y']].to_numpy(), segments, radius_m)
  areas = cells['cell_size_m'].to_numpy(dtype=float)[point_index] ** 2
  class_index = pandas.Categorical(
      cells['class'].to_numpy()[point_index],
      categories=LANDUSE_CLASSES).codes
  by_class = numpy.zeros((len(segments), len(LANDUSE_CLASSES)))
  numpy.add.at(by_class, (segment_index, class_index), areas)
  totals = by_class.sum(axis=1)
  empty = totals == 0
  with numpy.errstate(invalid='ignore', divide='ignore'):
    shares = numpy.where(empty[:, None], 0.0, by_class / totals[:, None])
  if empty.any():
    logging.info('%d segments with no land-use cell within %gm' %
                 (empty.sum(), radius_m))
  return collections.OrderedDict(
      ('C_D_' + c, shares[:, j]) for j, c in enumerate(LANDUSE_CLASSES)), empty


def aggregate_checkins(posts, segments, radius_m=DEFAULT_CHECKIN_RADIUS_M,
                       scores=None):
  """Average per-post experiential scores over posts near each segment.

  posts has x, y and one column per score. Returns L_<score>_mean columns
  (NaN where no post is in range) and the L_total_checkin_count column.
  """
  if scores is None:
    scores = [c for c in CHECKIN_SCORES if c in posts]
  point_index, segment_index, _ = _buffer_pairs(
      posts[['x', 'y']].to_numpy(), segments, radius_m)
  count = numpy.bincount(segment_index, minlength=len(segments))
  columns = collections.OrderedDict()
  columns[CHECKIN_COUNT_COLUMN] = count.astype(float)
  for score in scores:
    total = numpy.bincount(
        segment_index, weights=posts[score].to_numpy(dtype=float)[point_index],
        minlength=len(segments))
    with numpy.errstate(invalid='ignore', divide='ignore'):
      columns['L_%s_mean' % score] = numpy.where(count > 0, total / count,
                                                 numpy.nan)
  return columns


# --- Missing values.


def interpolate_missing(adjacency, values, missing=None, max_rounds=5,
                        name=None):
  """Fill missing cells from graph-adjacent segments.

  adjacency is the sparse segment adjacency matrix (StreetGraph.
  segment_adjacency()). Each round sets every missing cell with at least one
  known neighbor to the mean of the neighbors known at the start of the
  round. Cells still missing after max_rounds get the mean of the
  originally known values. Returns (filled values, all-False mask).
  """
  values = numpy.array(values, dtype=float)
  if missing is None:
    missing = numpy.isnan(values)
  known = ~numpy.asarray(missing, dtype=bool)
  if not known.any():
    raise InterpolationError('column %s is entirely missing' % name)
  global_mean = float(values[known].mean())
  values[~known] = 0.0
  for _ in range(max_rounds):
    if known.all():
      break
    sums = adjacency @ numpy.where(known, values, 0.0)
    counts = adjacency @ known.astype(float)
    fill = ~known & (counts > 0)
    if not fill.any():
      break
    values[fill] = sums[fill] / counts[fill]
    known = known | fill
  if not known.all():
    logging.warning('column %s: %d cells set to the global mean' %
                    (name, (~known).sum()))
    values[~known] = global_mean
  return values, numpy.zeros(len(values), dtype=bool)


def interpolate_table(adjacency, table, names=None, max_rounds=5):
  """Return table with the missing cells of the named columns filled."""
  if names is None:
    names = table.names
  filled = collections.OrderedDict()
  masks = {}
  for name in names:
    mask = table.missing_mask(name)
    if mask.any():
      logging.info('interpolating %d missing cells of %s' % (mask.sum(), name))
      filled[name], masks[name] = interpolate_missing(
          adjacency, table.column(name), mask, max_rounds, name)
  if not filled:
    return table
  return table.with_columns(filled, masks)


# --- Grid harmonization.


class GridTable(object):
  """A regular lattice of cells with population and aggregated features.

  Cell ids are row * n_cols + col; row 0 is the southern row.
  segment_cells holds (segment index, cell index, clipped length) triples.
  """

  def __init__(self, origin_x, origin_y, size_m, n_rows, n_cols, population,
               aggregates, null_supply, segment_cells):
    self.origin_x = float(origin_x)
    self.origin_y = float(origin_y)
    self.size_m = float(size_m)
    self.n_rows = int(n_rows)
    self.n_cols = int(n_cols)
    self.population = numpy.asarray(population, dtype=float)
    self.aggregates = collections.OrderedDict(aggregates)
    self.null_supply = numpy.asarray(null_supply, dtype=bool)
    self.segment_cells = segment_cells

  def __len__(self):
    return self.n_rows * self.n_cols

  @property
  def rows(self):
    return numpy.arange(len(self)) // self.n_cols

  @property
  def cols(self):
    return numpy.arange(len(self)) % self.n_cols

  def cells(self):
    rows, cols = self.rows, self.cols
    for i in range(len(self)):
      yield schema.GridCell(
          i, rows[i], cols[i], self.origin_x + cols[i] * self.size_m,
          self.origin_y + rows[i] * self.size_m, self.size_m,
          self.population[i],
          dict((k, v[i]) for k, v in self.aggregates.items()),
          self.null_supply[i])

  def to_frame(self):
    frame = pandas.DataFrame(collections.OrderedDict([
        ('cell_id', numpy.arange(len(self))),
        ('row', self.rows),
        ('col', self.cols),
        ('origin_x', self.origin_x + self.cols * self.size_m),
        ('origin_y', self.origin_y + self.rows * self.size_m),
        ('size_m', numpy.full(len(self), self.size_m)),
        ('population', self.population),
        ('null_supply', self.null_supply.astype(int)),
    ]))
    for name, values in self.aggregates.items():
      frame[name] = values
    return frame

  @classmethod
  def from_frame(cls, frame, segment_cells=None):
    size_m = float(frame['size_m'].iloc[0])
    n_rows = int(frame['row'].max()) + 1
    n_cols = int(frame['col'].max()) + 1
    if len(frame) != n_rows * n_cols:
      raise InputError('grid table is not a full %dx%d lattice' %
                       (n_rows, n_cols))
    fixed = ('cell_id', 'row', 'col', 'origin_x', 'origin_y', 'size_m',
             'population', 'null_supply')
    return cls(frame['origin_x'].min(), frame['origin_y'].min(), size_m,
               n_rows, n_cols, frame['population'].to_numpy(dtype=float),
               collections.OrderedDict(
                   (c, frame[c].to_numpy(dtype=float))
                   for c in frame.columns if c not in fixed),
               frame['null_supply'].to_numpy(dtype=bool), segment_cells)


def read_population(path):
  frame = pandas.read_csv(path, float_precision='round_trip')
  if (frame['population'] < 0).any():
    raise InputError('%s: negative population' % path)
  return frame


def _overlap(lo_a, hi_a, lo_b, hi_b):
  return numpy.clip(numpy.minimum(hi_a, hi_b) - numpy.maximum(lo_a, lo_b), 0,
                    None)


def aggregate_grid(segments, table, population_raster,
                   cell_size_m=DEFAULT_CELL_SIZE_M, columns=None):
  """Harmonize segment features and raster population onto a square grid.

  population_raster is a frame with x, y (raster cell centre), cell_size_m
  and population. The grid origin is the extent minimum floored to a
  multiple of cell_size_m, and the extent covers all segments and raster
  cells, so the total population is conserved. Each feature of a cell is
  the clipped-length weighted mean over segments crossing it.
  """
  if not cell_size_m > 0:
    raise ConfigError('cell_size_m must be > 0, got %r' % cell_size_m)
  if columns is None:
    columns = collections.OrderedDict(table.columns)
    if table.response is not None:
      columns[table.response_name] = table.response
  lines = _lines(segments)
  bounds = shapely.bounds(lines)
  rx = population_raster['x'].to_numpy(dtype=float)
  ry = population_raster['y'].to_numpy(dtype=float)
  rhalf = population_raster['cell_size_m'].to_numpy(dtype=float) / 2.0
  rpop = population_raster['population'].to_numpy(dtype=float)
  lo_x = min(bounds[:, 0].min(), (rx - rhalf).min(initial=numpy.inf))
  lo_y = min(bounds[:, 1].min(), (ry - rhalf).min(initial=numpy.inf))
  hi_x = max(bounds[:, 2].max(), (rx + rhalf).max(initial=-numpy.inf))
  hi_y = max(bounds[:, 3].max(), (ry + rhalf).max(initial=-numpy.inf))
  origin_x = numpy.floor(lo_x / cell_size_m) * cell_size_m
  origin_y = numpy.floor(lo_y / cell_size_m) * cell_size_m
  n_cols = int(numpy.floor((hi_x - origin_x) / cell_size_m)) + 1
  n_rows = int(numpy.floor((hi_y - origin_y) / cell_size_m)) + 1

  # Segment x cell clipped lengths.
  col_lo = numpy.floor((bounds[:, 0] - origin_x) / cell_size_m).astype(int)
  col_hi = numpy.floor((bounds[:, 2] - origin_x) / cell_size_m).astype(int)
  row_lo = numpy.floor((bounds[:, 1] - origin_y) / cell_size_m).astype(int)
  row_hi = numpy.floor((bounds[:, 3] - origin_y) / cell_size_m).astype(int)
  seg_index, cell_index = [], []
  for i in range(len(segments)):
    rows, cols = numpy.meshgrid(numpy.arange(row_lo[i], row_hi[i] + 1),
                                numpy.arange(col_lo[i], col_hi[i] + 1),
                                indexing='ij')
    cell_index.append((rows * n_cols + cols).ravel())
    seg_index.append(numpy.full(rows.size, i))
  seg_index = numpy.concatenate(seg_index)
  cell_index = numpy.concatenate(cell_index)
  cell_x = origin_x + (cell_index % n_cols) * cell_size_m
  cell_y = origin_y + (cell_index // n_cols) * cell_size_m
  boxes = shapely.box(cell_x, cell_y, cell_x + cell_size_m,
                      cell_y + cell_size_m)
  clipped = shapely.length(shapely.intersection(lines[seg_index], boxes))
  keep = clipped > 0
  seg_index, cell_index, clipped = (seg_index[keep], cell_index[keep],
                                    clipped[keep])
  n_cells = n_rows * n_cols
  weight = numpy.bincount(cell_index, weights=clipped, minlength=n_cells)
  null_supply = weight == 0
  aggregates = collections.OrderedDict()
  for name, values in columns.items():
    values = numpy.asarray(values, dtype=float)
    total = numpy.bincount(cell_index, weights=values[seg_index] * clipped,
                           minlength=n_cells)
    with numpy.errstate(invalid='ignore', divide='ignore'):
      aggregates[name] = numpy.where(null_supply, numpy.nan, total / weight)

  # Area-weighted population.
  population = numpy.zeros(n_cells)
  for x, y, half, pop in zip(rx, ry, rhalf, rpop):
    c0 = int(numpy.floor((x - half - origin_x) / cell_size_m))
    c1 = int(numpy.floor((x + half - origin_x) / cell_size_m))
    r0 = int(numpy.floor((y - half - origin_y) / cell_size_m))
    r1 = int(numpy.floor((y + half - origin_y) / cell_size_m))
    cols = numpy.arange(max(c0, 0), min(c1, n_cols - 1) + 1)
    rows = numpy.arange(max(r0, 0), min(r1, n_rows - 1) + 1)
    gx = origin_x + cols * cell_size_m
    gy = origin_y + rows * cell_size_m
    wx = _overlap(x - half, x + half, gx, gx + cell_size_m)
    wy = _overlap(y - half, y + half, gy, gy + cell_size_m)
    share = numpy.outer(wy, wx) / (4.0 * half * half)
    population[(rows[:, None] * n_cols + cols[None, :]).ravel()] += (
        pop * share.ravel())
  logging.info('grid %dx%d of %gm cells: %d with supply, population %.6g' %
               (n_rows, n_cols, cell_size_m, (~null_supply).sum(),
                population.sum()))
  return GridTable(origin_x, origin_y, cell_size_m, n_rows, n_cols,
                   population, aggregates, null_supply,
                   (seg_index, cell_index, clipped))


def write_segment_cells(path, segments, grid):
  seg_index, cell_index, clipped = grid.segment_cells
  frame = pandas.DataFrame({
      'segment_id': [segments[i].id for i in seg_index],
      'cell_id': cell_index,
      'length_m': clipped,
  })
  frame.to_csv(path, index=False, float_format=schema.CSV_FLOAT_FORMAT,
               lineterminator='\n')
