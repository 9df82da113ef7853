"""Shared data model of streetdep: segments, feature tables, grid cells.

Feature columns carry their triad dimension in their name prefix:

  C_D_*  objective land use (O), folded into C when merge_o_into_c is set
  C_*    conceived space (C): centrality, speed, capacity
  P_*    perceived space (P): street-view proportions
  L_*    lived space (L): sentiment scores, POI entropy, check-in counts

Response columns are named log_d<radius>_norm and are never features.
All coordinates are planar meters in a projected CRS.
"""

import collections
import json
import logging
import re

import numpy
import pandas
import shapely
import shapely.wkt

from streetdep.errors import InputError
from streetdep.errors import SchemaError

DIMENSIONS = ('C', 'O', 'P', 'L')

TYPOLOGY_DIMENSIONS = ('C', 'P', 'L')

RESPONSE_RE = re.compile(r'log_d\d+_norm\Z')

CSV_FLOAT_FORMAT = '%.17g'
"""17 significant digits: enough to round-trip any finite double."""

LENGTH_RTOL = 1e-6

NORMALIZATION_KINDS = ('log1p_zscore', 'zscore', 'none')


def classify_feature(name, merge_o_into_c=False):
  """Return the triad dimension ('C', 'O', 'P' or 'L') of a feature name."""
  if not name:
    raise SchemaError('empty feature name')
  if name.startswith('C_D_'):
    if merge_o_into_c:
      return 'C'
    return 'O'
  if name.startswith('C_'):
    return 'C'
  if name.startswith('P_'):
    return 'P'
  if name.startswith('L_'):
    return 'L'
  raise SchemaError('column %r has no triad prefix (C_, C_D_, P_, L_)' % name)


def is_response_name(name):
  return bool(RESPONSE_RE.match(name))


class TriadSchema(object):
  """Feature name -> dimension assignments for one column set."""

  __slots__ = ['assignments', 'merge_o_into_c']

  def __init__(self, assignments, merge_o_into_c=False):
    self.assignments = collections.OrderedDict(assignments)
    self.merge_o_into_c = bool(merge_o_into_c)

  @classmethod
  def from_names(cls, names, merge_o_into_c=False):
    return cls(((name, classify_feature(name, merge_o_into_c))
                for name in names), merge_o_into_c)

  def dimension(self, name):
    try:
      return self.assignments[name]
    except KeyError:
      return classify_feature(name, self.merge_o_into_c)

  def members(self, dimension):
    return [name for name, dim in self.assignments.items()
            if dim == dimension]

  @property
  def dimensions(self):
    if self.merge_o_into_c:
      return TYPOLOGY_DIMENSIONS
    return DIMENSIONS


def _arc_length(coords):
  return float(numpy.hypot(*numpy.diff(coords, axis=0).T).sum())


class RoadSegment(object):
  """A road segment: a polyline in planar meters.

  from_node and to_node are None until the segment is snapped into a
  StreetGraph. If length_m is given, it must agree with the polyline.
  """

  __slots__ = ['id', 'coords', 'length_m', 'from_node', 'to_node',
               'district', 'is_loop']

  def __init__(self, id, coords, length_m=None, from_node=None, to_node=None,
               district=None, is_loop=False):
    coords = numpy.array(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2 or len(coords) < 2:
      raise InputError('segment %s: geometry needs >= 2 points' % id)
    if not numpy.isfinite(coords).all():
      raise InputError('segment %s: non-finite coordinate' % id)
    arc_length = _arc_length(coords)
    if length_m is None:
      length_m = arc_length
    elif abs(length_m - arc_length) > LENGTH_RTOL * max(arc_length, 1e-300):
      raise InputError('segment %s: length_m=%r but polyline length is %r' %
                       (id, length_m, arc_length))
    if not length_m > 0:
      raise InputError('segment %s: zero length' % id)
    if (from_node is not None and from_node == to_node and not is_loop):
      raise InputError('segment %s: from_node == to_node without loop flag' %
                       id)
    coords.flags.writeable = False
    self.id = str(id)
    self.coords = coords
    self.length_m = float(length_m)
    self.from_node = from_node
    self.to_node = to_node
    self.district = district
    self.is_loop = bool(is_loop)

  def __repr__(self):
    return 'RoadSegment(%r, length_m=%r)' % (self.id, self.length_m)

  @property
  def line(self):
    return shapely.LineString(self.coords)

  def with_nodes(self, from_node, to_node):
    return RoadSegment(self.id, self.coords, self.length_m, from_node, to_node,
                       self.district, self.is_loop)


def read_segments(path):
  """Read segments from a GeoJSON FeatureCollection or an id,wkt CSV."""
  segments = []
  if path.endswith('.geojson') or path.endswith('.json'):
    with open(path, encoding='utf-8') as f:
      collection = json.load(f)
    for feature in collection['features']:
      geometry = feature.get('geometry') or {}
      props = feature.get('properties') or {}
      if geometry.get('type') != 'LineString':
        raise InputError('segment %s: geometry is not a LineString' %
                         props.get('id'))
      segments.append(RoadSegment(
          props['id'], geometry['coordinates'], district=props.get('district'),
          is_loop=bool(props.get('loop', False))))
  else:
    frame = pandas.read_csv(path, dtype={'id': str, 'district': str},
                            keep_default_na=False)
    for row in frame.itertuples(index=False):
      line = shapely.wkt.loads(row.wkt)
      if line.geom_type != 'LineString':
        raise InputError('segment %s: wkt is not a LINESTRING' % row.id)
      district = getattr(row, 'district', '') or None
      segments.append(RoadSegment(row.id, numpy.asarray(line.coords)[:, :2],
                                  district=district))
  logging.info('read %d segments from %s' % (len(segments), path))
  return segments


def write_segments(path, segments):
  features = []
  for segment in segments:
    props = {'id': segment.id, 'district': segment.district}
    if segment.is_loop:
      props['loop'] = True
    features.append({
        'type': 'Feature',
        'geometry': {'type': 'LineString',
                     'coordinates': [[float(x), float(y)]
                                     for x, y in segment.coords]},
        'properties': props,
    })
  with open(path, 'w', encoding='utf-8') as f:
    json.dump({'type': 'FeatureCollection', 'features': features}, f,
              sort_keys=True)
    f.write('\n')


def _frozen(values, dtype=float):
  values = numpy.array(values, dtype=dtype)
  values.flags.writeable = False
  return values


class FeatureTable(object):
  """Segments x named real feature columns, plus an optional response.

  Missing cells hold NaN in the value vector and True in the missing mask.
  Instances are immutable; the with_* methods return new tables.
  """

  __slots__ = ['segment_ids', 'columns', 'missing', 'response_name',
               'response']

  def __init__(self, segment_ids, columns, missing=None, response_name=None,
               response=None):
    self.segment_ids = tuple(str(i) for i in segment_ids)
    n = len(self.segment_ids)
    if len(set(self.segment_ids)) != n:
      raise InputError('duplicate segment ids in feature table')
    self.columns = collections.OrderedDict()
    self.missing = collections.OrderedDict()
    missing = missing or {}
    for name, values in columns.items():
      values = _frozen(values)
      if values.shape != (n,):
        raise InputError('column %s has %d values for %d segments' %
                         (name, values.size, n))
      mask = missing.get(name)
      if mask is None:
        mask = numpy.isnan(values)
      self.columns[name] = values
      self.missing[name] = _frozen(mask, bool)
    if (response_name is None) != (response is None):
      raise InputError('response needs both a name and values')
    self.response_name = response_name
    self.response = None
    if response is not None:
      self.response = _frozen(response)
      if self.response.shape != (n,):
        raise InputError('response has %d values for %d segments' %
                         (self.response.size, n))

  def __len__(self):
    return len(self.segment_ids)

  @property
  def names(self):
    return list(self.columns)

  def column(self, name):
    return self.columns[name]

  def missing_mask(self, name):
    return self.missing[name]

  def matrix(self, names=None):
    if names is None:
      names = self.names
    if not names:
      return numpy.zeros((len(self), 0))
    return numpy.column_stack([self.columns[name] for name in names])

  def with_columns(self, columns, missing=None):
    """Return a new table with columns added or replaced."""
    merged = collections.OrderedDict(self.columns)
    merged_missing = collections.OrderedDict(self.missing)
    for name, values in columns.items():
      merged[name] = values
      merged_missing[name] = (missing or {}).get(name)
      if merged_missing[name] is None:
        merged_missing[name] = numpy.isnan(numpy.asarray(values, dtype=float))
    return FeatureTable(self.segment_ids, merged, merged_missing,
                        self.response_name, self.response)

  def without_columns(self, names):
    names = set(names)
    return FeatureTable(
        self.segment_ids,
        collections.OrderedDict((k, v) for k, v in self.columns.items()
                                if k not in names),
        dict(self.missing), self.response_name, self.response)

  def with_response(self, name, values):
    return FeatureTable(self.segment_ids, self.columns, self.missing, name,
                        values)

  def select(self, rows):
    rows = numpy.asarray(rows)
    return FeatureTable(
        [self.segment_ids[i] for i in numpy.arange(len(self))[rows]],
        collections.OrderedDict((k, v[rows]) for k, v in self.columns.items()),
        dict((k, v[rows]) for k, v in self.missing.items()),
        self.response_name,
        None if self.response is None else self.response[rows])

  def index_of(self, segment_ids):
    position = dict((sid, i) for i, sid in enumerate(self.segment_ids))
    return numpy.array([position[str(sid)] for sid in segment_ids], dtype=int)


def write_feature_table(path, table):
  """Write a table as CSV; missing cells are written empty."""
  frame = pandas.DataFrame(collections.OrderedDict(
      [('segment_id', list(table.segment_ids))] +
      [(name, numpy.where(table.missing[name], numpy.nan, values))
       for name, values in table.columns.items()]))
  if table.response is not None:
    frame[table.response_name] = table.response
  frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, na_rep='',
               lineterminator='\n')


def read_feature_table(path, response=None):
  """Read a feature table CSV written by write_feature_table.

  A column named like log_d30_norm is taken as the response. If there are
  several, response selects one and the rest are dropped.
  """
  frame = pandas.read_csv(path, dtype={'segment_id': str},
                          float_precision='round_trip', encoding='utf-8')
  if frame.columns[0] != 'segment_id':
    raise InputError('%s: first column must be segment_id' % path)
  responses = [name for name in frame.columns[1:] if is_response_name(name)]
  if response is None and responses:
    response = responses[-1]
  if response is not None and response not in responses:
    raise InputError('%s: response column %s not found' % (path, response))
  columns = collections.OrderedDict()
  for name in frame.columns[1:]:
    if name in responses:
      continue
    columns[name] = frame[name].to_numpy(dtype=float)
  return FeatureTable(
      frame['segment_id'], columns, response_name=response,
      response=None if response is None else
      frame[response].to_numpy(dtype=float))


NormalizationRecord = collections.namedtuple(
    'NormalizationRecord', 'kind mean std degenerate')


class NormalizationParams(object):
  """Per-feature transform records, enough to invert normalize exactly."""

  __slots__ = ['records']

  def __init__(self, records=()):
    self.records = collections.OrderedDict(records)
    for name, record in self.records.items():
      if record.kind not in NORMALIZATION_KINDS:
        raise SchemaError('feature %s: unknown transform kind %r' %
                          (name, record.kind))
      if record.kind != 'none' and not record.degenerate and not record.std > 0:
        raise SchemaError('feature %s: z-scored with std %r' %
                          (name, record.std))

  def __contains__(self, name):
    return name in self.records

  def __getitem__(self, name):
    return self.records[name]

  def __len__(self):
    return len(self.records)

  def updated(self, name, record):
    records = collections.OrderedDict(self.records)
    records[name] = record
    return NormalizationParams(records)


def write_normalization(path, params):
  frame = pandas.DataFrame(
      [(name, r.kind, r.mean, r.std, int(r.degenerate))
       for name, r in params.records.items()],
      columns=['feature', 'kind', 'mean', 'std', 'degenerate'])
  frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT,
               lineterminator='\n')


def read_normalization(path):
  frame = pandas.read_csv(path, float_precision='round_trip',
                          dtype={'feature': str, 'kind': str})
  return NormalizationParams(
      (row.feature, NormalizationRecord(row.kind, float(row.mean),
                                        float(row.std), bool(row.degenerate)))
      for row in frame.itertuples(index=False))


class GridCell(object):
  """One cell of the regular analysis lattice."""

  __slots__ = ['id', 'row', 'col', 'origin_x', 'origin_y', 'size_m',
               'population', 'aggregates', 'null_supply']

  def __init__(self, id, row, col, origin_x, origin_y, size_m=200.0,
               population=0.0, aggregates=None, null_supply=False):
    if not size_m > 0:
      raise InputError('grid cell %s: size_m must be > 0' % id)
    if not population >= 0:
      raise InputError('grid cell %s: negative population' % id)
    self.id = id
    self.row = int(row)
    self.col = int(col)
    self.origin_x = float(origin_x)
    self.origin_y = float(origin_y)
    self.size_m = float(size_m)
    self.population = float(population)
    self.aggregates = dict(aggregates or {})
    self.null_supply = bool(null_supply)

  def __repr__(self):
    return 'GridCell(%r, row=%d, col=%d)' % (self.id, self.row, self.col)


class ValidationReport(object):
  """Problems found by validate_dataset, as (kind, subject, detail) tuples."""

  def __init__(self):
    self.entries = []

  def __bool__(self):
    return bool(self.entries)

  def __len__(self):
    return len(self.entries)

  def __iter__(self):
    return iter(self.entries)

  def add(self, kind, subject, detail):
    self.entries.append((kind, subject, detail))

  def kinds(self):
    return [entry[0] for entry in self.entries]

  def format(self):
    if not self.entries:
      return 'dataset is pipeline-ready\n'
    return ''.join('%s: %s: %s\n' % entry for entry in self.entries)


def validate_dataset(table, segments, merge_o_into_c=False):
  """Return a ValidationReport; an empty report means pipeline-ready."""
  report = ValidationReport()
  if len(table) != len(segments):
    report.add('row_count', 'table',
               '%d rows for %d segments' % (len(table), len(segments)))
  else:
    segment_ids = [segment.id for segment in segments]
    if list(table.segment_ids) != segment_ids:
      report.add('segment_ids', 'table',
                 'segment ids differ from segment order')
  for name, values in table.columns.items():
    try:
      classify_feature(name, merge_o_into_c)
    except SchemaError as e:
      report.add('unresolvable', name, str(e))
    mask = table.missing[name]
    if mask.all():
      report.add('all_missing', name, 'every cell is missing')
    elif mask.any():
      report.add('missing', name, '%d missing cells' % mask.sum())
    bad = ~mask & ~numpy.isfinite(values)
    if bad.any():
      report.add('non_finite', name, '%d non-finite values' % bad.sum())
  if table.response is not None and not numpy.isfinite(table.response).all():
    report.add('non_finite', table.response_name,
               '%d non-finite values' % (~numpy.isfinite(table.response)).sum())
  return report
