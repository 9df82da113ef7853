"""A deterministic synthetic city with a planted exercise response.

The street network is a jittered lattice. Every other input (trajectories,
POIs, land use, population, street attributes, check-ins) is written in
the formats the ingest and features stages read, so a synthetic run goes
through the real ingestion code.

The planted response of segment s is

  y = w_C g_C + w_P g_P + w_L g_L + noise

where, with z(.) the log1p/z-score transform the features stage applies
and u(.) the mid-rank of a column scaled into (0, 1),

  g_C = 2.0 exp(-((u(C_betw_800m) - 0.5) / 0.25)^2)
        + 1.0 [z(C_clo_800m) > 0.25] [z(C_free_speed) < 0.8]
  g_P = 0.8 tanh(2 z(P_vegetation)) - 0.4 [z(P_car) > 0.5]
        + 1.6 (2 u(P_sidewalk) - 1) s_C
  g_L = 0.9 tanh(z(L_positive_mean))
        + 1.4 (2 u(L_poi_entropy300) - 1) s_P

with s_C = +1 if z(C_clo_800m) > 0.25 else -1 and s_P = +1 if
u(P_sidewalk) > 0.5 else -1. The betweenness bump and the two
sign-flipping ramps carry no linear trend.

The response is turned into exercise tracks: segment s receives
round(length * expm1(RATE_BASE + RATE_SCALE * (y - mean y))) resampled
track points, laid out as laps along the middle of the segment.

The optional planted quarter (the north-east quarter of the city) has four
times the population density, less vegetation, more cars and less positive
check-ins, so its streets are predicted to support less exercise.

Every random draw comes from numpy's Philox-4x64 generator keyed by
SHA-256 of "seed:synth:<part>" (see streetdep.util.stream_key).
"""

import collections
import hashlib
import json
import logging
import os

import numpy
import pandas
import scipy.stats

from streetdep import features
from streetdep import graph
from streetdep import schema
from streetdep import util
from streetdep.errors import ConfigError
from streetdep.errors import InputError

RATE_BASE = 0.7

RATE_SCALE = 0.3

TRACK_SPEED_MPS = 2.5

LATERAL_M = 3.0

POI_CATEGORIES = tuple('cat%d' % i for i in range(10))

PERCEIVED_CLASSES = ('sky', 'vegetation', 'building', 'road', 'sidewalk',
                     'car')

LANDUSE_CELL_M = 40.0

POPULATION_CELL_M = 100.0

PLANTED_COLUMNS = ('C_clo_800m', 'C_betw_800m', 'C_free_speed',
                   'P_vegetation', 'P_sidewalk', 'P_car', 'L_positive_mean',
                   'L_poi_entropy300')

CITY_FILES = ('segments.geojson', 'trajectories.csv', 'pois.csv',
              'landuse.csv', 'population.csv', 'attributes.csv',
              'checkins.csv', 'truth.csv')


class SynthConfig(object):
  """Parameters of a synthetic city.

  noise_sd None means: choose it so that the R2 of the noise-free signal
  against y is target_r2_ceiling. n_trajectories None means two tracks per
  segment.
  """

  FIELDS = ('seed', 'blocks_x', 'blocks_y', 'block_m', 'irregularity',
            'n_trajectories', 'n_pois', 'noise_sd', 'target_r2_ceiling',
            'w_C', 'w_P', 'w_L', 'planted_quarter', 'missing_fraction')

  __slots__ = FIELDS

  def __init__(self, seed=42, blocks_x=32, blocks_y=30, block_m=120.0,
               irregularity=0.2, n_trajectories=None, n_pois=8000,
               noise_sd=None, target_r2_ceiling=0.75, w_C=1.0, w_P=1.0,
               w_L=1.0, planted_quarter=True, missing_fraction=0.03):
    self.seed = int(seed)
    self.blocks_x = int(blocks_x)
    self.blocks_y = int(blocks_y)
    self.block_m = float(block_m)
    self.irregularity = float(irregularity)
    self.n_trajectories = None if n_trajectories is None else int(
        n_trajectories)
    self.n_pois = int(n_pois)
    self.noise_sd = None if noise_sd is None else float(noise_sd)
    self.target_r2_ceiling = float(target_r2_ceiling)
    self.w_C = float(w_C)
    self.w_P = float(w_P)
    self.w_L = float(w_L)
    self.planted_quarter = bool(planted_quarter)
    self.missing_fraction = float(missing_fraction)
    if self.blocks_x < 2 or self.blocks_y < 2:
      raise ConfigError('a synthetic city needs at least 2x2 blocks')
    if not self.block_m > 0:
      raise ConfigError('block_m must be > 0')
    if not 0 <= self.irregularity <= 1:
      raise ConfigError('irregularity must lie in [0, 1]')
    if self.noise_sd is not None and self.noise_sd < 0:
      raise ConfigError('noise_sd must be >= 0')
    if not 0 < self.target_r2_ceiling <= 1:
      raise ConfigError('target_r2_ceiling must lie in (0, 1]')
    if self.w_C == self.w_P == self.w_L == 0:
      raise ConfigError('response weights are all zero')
    if not 0 <= self.missing_fraction < 0.5:
      raise ConfigError('missing_fraction must lie in [0, 0.5)')
    if self.n_pois < 0:
      raise ConfigError('n_pois must be >= 0')
    if (self.n_trajectories is not None and
        self.n_trajectories < self.segment_count()):
      raise ConfigError('n_trajectories=%d is below the %d segments' %
                        (self.n_trajectories, self.segment_count()))

  def __repr__(self):
    return 'SynthConfig(%s)' % ', '.join(
        '%s=%r' % (k, getattr(self, k)) for k in self.FIELDS)

  def as_dict(self):
    return collections.OrderedDict((k, getattr(self, k)) for k in self.FIELDS)

  def key(self):
    text = json.dumps(self.as_dict(), sort_keys=True)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()

  def node_count(self):
    return (self.blocks_x + 1) * (self.blocks_y + 1)

  def segment_count(self):
    return (self.blocks_x * (self.blocks_y + 1) +
            (self.blocks_x + 1) * self.blocks_y)


class City(object):
  """Everything generate() produces; frames are in the on-disk layout."""

  def __init__(self, config, segments, features, attributes, trajectories,
               pois, landuse, population, checkins, truth, noise_sd):
    self.config = config
    self.segments = segments
    self.features = features
    self.attributes = attributes
    self.trajectories = trajectories
    self.pois = pois
    self.landuse = landuse
    self.population = population
    self.checkins = checkins
    self.truth = truth
    self.noise_sd = noise_sd

  @property
  def y(self):
    return self.truth['y'].to_numpy()

  @property
  def signal(self):
    return self.truth['signal'].to_numpy()

  def oracle_r2(self):
    """Return the R2 of the noise-free signal as a predictor of y."""
    y = self.y
    return 1.0 - ((y - self.signal) ** 2).sum() / ((y - y.mean()) ** 2).sum()


def _field(rng, u, v, terms=4):
  """Return a smooth random field in [-1, 1] at unit-square points."""
  freq = rng.uniform(0.5, 2.5, size=(terms, 2))
  phase = rng.uniform(0, 2 * numpy.pi, size=terms)
  amp = rng.uniform(0.5, 1.0, size=terms)
  total = sum(a * numpy.cos(2 * numpy.pi * (f[0] * u + f[1] * v) + p)
              for a, f, p in zip(amp, freq, phase))
  return total / amp.sum()


def _lattice(config):
  rng = util.make_rng(config.seed, 'synth', 'lattice')
  nx, ny = config.blocks_x + 1, config.blocks_y + 1
  jitter = config.irregularity * config.block_m / 4.0
  offsets = rng.uniform(-jitter, jitter, size=(ny, nx, 2))
  xs = numpy.arange(nx) * config.block_m
  ys = numpy.arange(ny) * config.block_m
  nodes = numpy.stack(numpy.meshgrid(xs, ys), axis=-1) + offsets
  width = config.blocks_x * config.block_m
  height = config.blocks_y * config.block_m
  ends, arterial = [], []
  for j in range(ny):
    for i in range(config.blocks_x):
      ends.append((nodes[j, i], nodes[j, i + 1]))
      arterial.append(j % 4 == 0)
  for j in range(config.blocks_y):
    for i in range(nx):
      ends.append((nodes[j, i], nodes[j + 1, i]))
      arterial.append(i % 4 == 0)
  segments = []
  for k, (a, b) in enumerate(ends):
    mid = (a + b) / 2.0
    district = 'D%d%d' % (min(int(3 * mid[1] / height), 2),
                          min(int(3 * mid[0] / width), 2))
    segments.append(schema.RoadSegment('s%05d' % k, [a, b],
                                       district=district))
  return segments, numpy.array(arterial), width, height


def _in_quarter(config, x, y, width, height):
  if not config.planted_quarter:
    return numpy.zeros(numpy.shape(x), dtype=bool)
  return (numpy.asarray(x) >= width / 2.0) & (numpy.asarray(y) >= height / 2.0)


def _interior(segment):
  """Return (start point, unit direction, unit normal, margin, span)."""
  a, b = segment.coords[0], segment.coords[-1]
  direction = (b - a) / segment.length_m
  normal = numpy.array([-direction[1], direction[0]])
  margin = min(45.0, 0.4 * segment.length_m)
  return a, direction, normal, margin, segment.length_m - 2 * margin


def _lap_positions(start, total, span):
  """Return 1-D vertex positions of a walk of length total bouncing in span."""
  positions = [start]
  position, heading, remaining = start, 1.0, total
  while remaining > 0:
    room = span - position if heading > 0 else position
    if room <= 0:
      heading = -heading
      continue
    step = min(room, remaining)
    position += heading * step
    remaining -= step
    positions.append(position)
  return numpy.array(positions)


def _tracks(segments, counts, tracks_per_segment, rng):
  interval = features.DEFAULT_INTERVAL_M
  records = []
  track_id = 0
  for segment, count, n_tracks in zip(segments, counts, tracks_per_segment):
    a, direction, normal, margin, span = _interior(segment)
    sizes = numpy.full(n_tracks, count // n_tracks)
    sizes[:count % n_tracks] += 1
    for m in sizes:
      u = _lap_positions(rng.uniform(0, span), interval * (m - 1), span)
      lateral = rng.uniform(-LATERAL_M, LATERAL_M)
      xy = (a[None, :] + (margin + u)[:, None] * direction[None, :] +
            lateral * normal[None, :])
      arc = numpy.concatenate([[0.0], numpy.cumsum(numpy.abs(numpy.diff(u)))])
      records.append(pandas.DataFrame({
          'track_id': track_id, 'x': xy[:, 0], 'y': xy[:, 1],
          't': arc / TRACK_SPEED_MPS}))
      track_id += 1
  return pandas.concat(records, ignore_index=True)


def _zscore(values):
  values = numpy.asarray(values, dtype=float)
  return features.normalize(values, features.choose_kind(values))[0]


def _rank(values):
  values = numpy.asarray(values, dtype=float)
  return (scipy.stats.rankdata(values) - 0.5) / len(values)


def _g_functions(columns):
  z = dict((name, _zscore(columns[name])) for name in PLANTED_COLUMNS)
  u = dict((name, _rank(columns[name]))
           for name in ('C_betw_800m', 'P_sidewalk', 'L_poi_entropy300'))
  central = z['C_clo_800m'] > 0.25
  s_c = numpy.where(central, 1.0, -1.0)
  s_p = numpy.where(u['P_sidewalk'] > 0.5, 1.0, -1.0)
  g_c = (2.0 * numpy.exp(-((u['C_betw_800m'] - 0.5) / 0.25) ** 2) +
         1.0 * (central & (z['C_free_speed'] < 0.8)))
  g_p = (0.8 * numpy.tanh(2 * z['P_vegetation']) -
         0.4 * (z['P_car'] > 0.5) +
         1.6 * (2 * u['P_sidewalk'] - 1) * s_c)
  g_l = (0.9 * numpy.tanh(z['L_positive_mean']) +
         1.4 * (2 * u['L_poi_entropy300'] - 1) * s_p)
  return g_c, g_p, g_l


def oracle_response(table, config):
  """Return the noise-free planted response of a feature table.

  table is a FeatureTable or a frame holding the planted columns of every
  segment of a city generated with config.
  """
  if len(table) != config.segment_count():
    raise InputError('%d rows, but the config describes %d segments' %
                     (len(table), config.segment_count()))
  if isinstance(table, schema.FeatureTable):
    columns = table.columns
  else:
    columns = dict((c, table[c].to_numpy(dtype=float)) for c in PLANTED_COLUMNS
                   if c in table.columns)
  missing = [name for name in PLANTED_COLUMNS if name not in columns]
  if missing:
    raise InputError('feature table lacks planted column(s) %s' %
                     ', '.join(missing))
  for name in PLANTED_COLUMNS:
    if not numpy.isfinite(columns[name]).all():
      raise InputError('planted column %s has missing values' % name)
  g_c, g_p, g_l = _g_functions(columns)
  return config.w_C * g_c + config.w_P * g_p + config.w_L * g_l


def calibrate_noise(signal, ceiling):
  """Return the noise sd giving signal an R2 ceiling of ceiling against y."""
  variance = float(numpy.var(signal))
  if ceiling >= 1 or variance == 0:
    return 0.0
  return float(numpy.sqrt(variance * (1.0 / ceiling - 1.0)))


def generate(config):
  """Return the City of config."""
  with util.Stopwatch() as sw:
    city = _generate(config)
  logging.info('synthetic city: %d segments, %d track points, %d POIs, '
               'noise_sd %.4g, oracle R2 %.4f in %.3fs' %
               (len(city.segments), len(city.trajectories), len(city.pois),
                city.noise_sd, city.oracle_r2(), sw.elapsed))
  return city


def _generate(config):
  seed = config.seed
  segments, arterial, width, height = _lattice(config)
  n = len(segments)
  mid = numpy.array([s.coords.mean(axis=0) for s in segments])
  u, v = mid[:, 0] / width, mid[:, 1] / height
  quarter = _in_quarter(config, mid[:, 0], mid[:, 1], width, height)

  # Conceived space: road metadata and network centrality.
  rng = util.make_rng(seed, 'synth', 'roads')
  speed = numpy.where(arterial, 60.0, 30.0) + rng.normal(0, 3.0, n)
  speed = numpy.maximum(speed, 5.0)
  lanes = numpy.where(arterial, 3, 1)
  capacity = lanes * 900.0 * (1 + rng.normal(0, 0.05, n))
  columns = collections.OrderedDict()
  street_graph = graph.build_graph(segments)
  columns.update(graph.centrality(street_graph).as_columns())
  columns['C_free_speed'] = speed
  columns['C_capacity'] = capacity

  # Perceived space: street-view class proportions.
  rng = util.make_rng(seed, 'synth', 'perceived')
  alpha = numpy.column_stack([
      2.0 * numpy.exp(0.8 * _field(rng, u, v)) for _ in PERCEIVED_CLASSES])
  veg = PERCEIVED_CLASSES.index('vegetation')
  car = PERCEIVED_CLASSES.index('car')
  alpha[quarter, veg] *= 0.25
  alpha[quarter, car] *= 3.0
  draws = rng.gamma(alpha)
  proportions = draws / draws.sum(axis=1, keepdims=True)
  for j, name in enumerate(PERCEIVED_CLASSES):
    columns['P_' + name] = proportions[:, j]

  # Lived space: check-ins carrying per-segment scores, and POIs.
  rng = util.make_rng(seed, 'synth', 'checkins')
  latent = collections.OrderedDict()
  for score in features.CHECKIN_SCORES:
    value = 0.5 + 0.25 * _field(rng, u, v) + rng.normal(0, 0.08, n)
    if score == 'positive':
      value = value - 0.3 * quarter
    latent[score] = numpy.clip(value, 0.0, 1.0)
  if config.missing_fraction > 0:
    posts = rng.poisson(-numpy.log(config.missing_fraction), n)
  else:
    posts = 1 + rng.poisson(2.5, n)
  owner = numpy.repeat(numpy.arange(n), posts)
  checkins = _points_on(segments, owner, rng)
  for score in features.CHECKIN_SCORES:
    checkins[score] = latent[score][owner]
  columns[features.CHECKIN_COUNT_COLUMN] = posts.astype(float)
  for score in features.CHECKIN_SCORES:
    columns['L_%s_mean' % score] = numpy.where(posts > 0, latent[score],
                                               numpy.nan)

  rng = util.make_rng(seed, 'synth', 'pois')
  px = rng.uniform(0, width, config.n_pois)
  py = rng.uniform(0, height, config.n_pois)
  dominance = 0.5 + 0.45 * _field(rng, px / width, py / height)
  region = (numpy.minimum((3 * py / height).astype(int), 2) * 3 +
            numpy.minimum((3 * px / width).astype(int), 2))
  uniform = rng.integers(0, len(POI_CATEGORIES), config.n_pois)
  category = numpy.where(rng.random(config.n_pois) < dominance,
                         region % len(POI_CATEGORIES), uniform)
  pois = pandas.DataFrame({'x': px, 'y': py, 'category': numpy.array(
      POI_CATEGORIES, dtype=object)[category]})
  entropy, _ = features.poi_entropy_table(pois, segments)
  columns.update(entropy)

  # Objective land use and population rasters.
  rng = util.make_rng(seed, 'synth', 'landuse')
  cx, cy = _cell_centres(width, height, LANDUSE_CELL_M)
  scores = numpy.column_stack([
      _field(rng, cx / width, cy / height) + rng.normal(0, 0.1, len(cx))
      for _ in features.LANDUSE_CLASSES])
  landuse = pandas.DataFrame({
      'x': cx, 'y': cy,
      'class': numpy.array(features.LANDUSE_CLASSES,
                           dtype=object)[scores.argmax(axis=1)],
      'cell_size_m': LANDUSE_CELL_M})
  composition, _ = features.landuse_table(landuse, segments)
  columns.update(composition)

  rng = util.make_rng(seed, 'synth', 'population')
  gx, gy = _cell_centres(width, height, POPULATION_CELL_M)
  density = 30.0 * numpy.exp(0.4 * _field(rng, gx / width, gy / height))
  density = density * numpy.where(
      _in_quarter(config, gx, gy, width, height), 4.0, 1.0)
  population = pandas.DataFrame({'x': gx, 'y': gy,
                                 'cell_size_m': POPULATION_CELL_M,
                                 'population': density})

  # The planted response.
  truth_columns = dict((name, columns[name]) for name in PLANTED_COLUMNS)
  truth_columns['L_positive_mean'] = latent['positive']
  g_c, g_p, g_l = _g_functions(truth_columns)
  signal = config.w_C * g_c + config.w_P * g_p + config.w_L * g_l
  noise_sd = config.noise_sd
  if noise_sd is None:
    noise_sd = calibrate_noise(signal, config.target_r2_ceiling)
  noise = util.make_rng(seed, 'synth', 'noise').normal(0, 1.0, n) * noise_sd
  y = signal + noise

  # Exercise tracks whose matched density encodes y.
  n_tracks = config.n_trajectories or 2 * n
  tracks_per_segment = numpy.full(n, n_tracks // n)
  tracks_per_segment[:n_tracks % n] += 1
  lengths = numpy.array([s.length_m for s in segments])
  rate_per_m = numpy.expm1(RATE_BASE + RATE_SCALE * (y - y.mean()))
  counts = numpy.maximum(numpy.rint(lengths * rate_per_m).astype(int),
                         2 * tracks_per_segment)
  trajectories = _tracks(segments, counts, tracks_per_segment,
                         util.make_rng(seed, 'synth', 'tracks'))

  # Street attributes with missing cells.
  rng = util.make_rng(seed, 'synth', 'missing')
  attributes = pandas.DataFrame({'segment_id': [s.id for s in segments]})
  for name in ['C_free_speed', 'C_capacity'] + [
      'P_' + c for c in PERCEIVED_CLASSES]:
    values = numpy.array(columns[name], dtype=float)
    values[rng.random(n) < config.missing_fraction] = numpy.nan
    attributes[name] = values

  truth = pandas.DataFrame(collections.OrderedDict(
      [('segment_id', [s.id for s in segments]),
       ('district', [s.district for s in segments]),
       ('in_quarter', quarter.astype(int))] +
      [(name, truth_columns[name]) for name in PLANTED_COLUMNS] +
      [('g_C', g_c), ('g_P', g_p), ('g_L', g_l), ('signal', signal),
       ('noise', noise), ('y', y), ('count', counts)]))
  table = schema.FeatureTable([s.id for s in segments], dict(
      (name, truth_columns.get(name, values))
      for name, values in columns.items()))
  return City(config, segments, table, attributes, trajectories, pois,
              landuse, population, checkins, truth, noise_sd)


def _cell_centres(width, height, size):
  xs = (numpy.arange(int(numpy.ceil(width / size))) + 0.5) * size
  ys = (numpy.arange(int(numpy.ceil(height / size))) + 0.5) * size
  gx, gy = numpy.meshgrid(xs, ys)
  return gx.ravel(), gy.ravel()


def _points_on(segments, owner, rng):
  """Return a frame of points in the middle part of their owner segments."""
  xy = numpy.zeros((len(owner), 2))
  for k, i in enumerate(owner):
    a, direction, normal, margin, span = _interior(segments[i])
    xy[k] = (a + (margin + rng.uniform(0, span)) * direction +
             rng.uniform(-LATERAL_M, LATERAL_M) * normal)
  return pandas.DataFrame({'x': xy[:, 0], 'y': xy[:, 1]})


def write_city(city, directory):
  """Write the city's input files (CITY_FILES) into directory."""
  if not os.path.isdir(directory):
    os.makedirs(directory)

  def Csv(frame, name):
    frame.to_csv(os.path.join(directory, name), index=False,
                 float_format=schema.CSV_FLOAT_FORMAT, lineterminator='\n')

  schema.write_segments(os.path.join(directory, 'segments.geojson'),
                        city.segments)
  Csv(city.trajectories, 'trajectories.csv')
  Csv(city.pois, 'pois.csv')
  Csv(city.landuse, 'landuse.csv')
  Csv(city.population, 'population.csv')
  Csv(city.attributes, 'attributes.csv')
  Csv(city.checkins, 'checkins.csv')
  Csv(city.truth, 'truth.csv')
  logging.info('wrote synthetic city to %s' % directory)
  return [os.path.join(directory, name) for name in CITY_FILES]
