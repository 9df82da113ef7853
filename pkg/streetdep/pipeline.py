"""File-based pipeline stages and their run manifests.

Every stage reads the artifacts of earlier stages from the run directory,
writes its own files under run_dir/<stage>/ and a manifest.json recording
the stage parameters, the master seed, and the SHA-256 of every file read
and written. Two runs of a stage with the same config and seed produce
the same files and manifests except for wall_time_s.

Example:

  from streetdep import config, pipeline
  cfg = config.load_config('run.yaml')
  pipeline.run_stage('synth', cfg)
  pipeline.run_stage('all', cfg)
"""

import collections
import json
import logging
import os

import numpy
import pandas

from streetdep import explain
from streetdep import features
from streetdep import gbdt
from streetdep import graph
from streetdep import intervention
from streetdep import lisa
from streetdep import regressors
from streetdep import schema
from streetdep import synth
from streetdep import typology
from streetdep import util
from streetdep.config import synth_params
from streetdep.errors import ConfigError
from streetdep.errors import DependencyError
from streetdep.errors import InputError
from streetdep.errors import SchemaError
from streetdep.version import VERSION

STAGES = ('ingest', 'graph', 'features', 'train', 'explain', 'classify',
          'mismatch', 'simulate', 'synth', 'report')

# Stages run by 'all'; synth only produces inputs and runs on request.
ALL_STAGES = ('ingest', 'graph', 'features', 'train', 'explain', 'classify',
              'mismatch', 'simulate', 'report')

# Config sections recorded in each stage manifest.
STAGE_PARAMS = {
    'ingest': ('inputs', 'features'),
    'graph': ('graph',),
    'features': ('graph', 'features'),
    'train': ('train',),
    'explain': ('explain', 'features'),
    'classify': ('classify', 'features'),
    'mismatch': ('mismatch',),
    'simulate': ('simulate',),
    'synth': ('synth',),
    'report': (),
}

MANIFEST = 'manifest.json'


class StageRun(object):
  """The files one stage execution reads and writes."""

  def __init__(self, stage, config):
    self.stage = stage
    self.config = config
    self.directory = os.path.join(config.run_dir, stage)
    self.inputs = []
    self.outputs = []

  def need(self, stage, name):
    """Return the path of an upstream artifact; DependencyError if absent."""
    path = os.path.join(self.config.run_dir, stage, name)
    if not os.path.isfile(path):
      raise DependencyError(stage, path)
    self.inputs.append(path)
    return path

  def source(self, name):
    """Return the path of the raw input inputs.<name>."""
    path = self.config.input_path(name)
    if not os.path.isfile(path):
      city = self.config.resolve(self.config.get('synth.directory'))
      if os.path.dirname(path) == city:
        raise DependencyError('synth', path)
      raise ConfigError('inputs.%s: no such file %s' % (name, path))
    self.inputs.append(path)
    return path

  def output(self, name):
    if not os.path.isdir(self.directory):
      os.makedirs(self.directory)
    path = os.path.join(self.directory, name)
    self.outputs.append(path)
    return path

  def write_text(self, name, text):
    path = self.output(name)
    with open(path, 'w', encoding='utf-8', newline='') as f:
      f.write(text)
    return path

  def write_csv(self, name, frame):
    path = self.output(name)
    frame.to_csv(path, index=False, float_format=schema.CSV_FLOAT_FORMAT,
                 lineterminator='\n')
    return path

  def _relative(self, path):
    return os.path.relpath(path, self.config.base_dir).replace(os.sep, '/')

  def manifest(self, wall_time):
    params = collections.OrderedDict(
        (name, self.config.section(name)) for name in STAGE_PARAMS[self.stage])
    return collections.OrderedDict([
        ('stage', self.stage),
        ('version', VERSION),
        ('seed', self.config.seed),
        ('params', params),
        ('inputs', dict((self._relative(p), util.file_sha256(p))
                        for p in sorted(set(self.inputs)))),
        ('outputs', dict((self._relative(p), util.file_sha256(p))
                         for p in sorted(set(self.outputs)))),
        ('wall_time_s', round(wall_time, 3)),
    ])

  def write_manifest(self, wall_time):
    if not os.path.isdir(self.directory):
      os.makedirs(self.directory)
    path = os.path.join(self.directory, MANIFEST)
    with open(path, 'w', encoding='utf-8', newline='') as f:
      json.dump(self.manifest(wall_time), f, sort_keys=True, indent=1)
      f.write('\n')
    return path


def read_manifest(path):
  with open(path, encoding='utf-8') as f:
    return json.load(f)


def _read_csv(path, **kwargs):
  return pandas.read_csv(path, float_precision='round_trip', **kwargs)


def _aligned(frame, segment_ids, path):
  """Return frame's non-id columns reindexed to segment_ids."""
  frame = frame.set_index('segment_id')
  if frame.index.duplicated().any():
    raise InputError('%s: duplicate segment ids' % path)
  unknown = sorted(set(frame.index) - set(segment_ids))
  if unknown:
    raise InputError('%s: %d rows name unknown segments, e.g. %s' %
                     (path, len(unknown), unknown[0]))
  frame = frame.reindex(list(segment_ids))
  return collections.OrderedDict(
      (name, frame[name].to_numpy(dtype=float)) for name in frame.columns)


def _regions(run, segment_ids):
  segments = schema.read_segments(run.need('ingest', 'segments.geojson'))
  district = dict((s.id, s.district) for s in segments)
  return [district.get(sid) for sid in segment_ids]


# --- Stages.


def _ingest(run):
  merge = run.config.get('features.merge_o_into_c')
  segments = schema.read_segments(run.source('segments'))
  ids = [s.id for s in segments]
  if len(set(ids)) != len(ids):
    raise InputError('duplicate segment ids in %s' %
                     run.config.input_path('segments'))
  path = run.source('attributes')
  frame = _read_csv(path, dtype={'segment_id': str})
  table = schema.FeatureTable(ids, _aligned(frame, ids, path))
  report = schema.validate_dataset(table, segments, merge)
  run.write_text('validation.txt', report.format())
  for kind, subject, detail in report:
    logging.info('validation %s: %s: %s' % (kind, subject, detail))
  fatal = [entry for entry in report if entry[0] != 'missing']
  if fatal:
    error = SchemaError if fatal[0][0] == 'unresolvable' else InputError
    raise error('attributes fail validation: %s: %s: %s' % fatal[0])
  schema.write_segments(run.output('segments.geojson'), segments)
  schema.write_feature_table(run.output('attributes.csv'), table)


def _graph(run):
  config = run.config
  segments = schema.read_segments(run.need('ingest', 'segments.geojson'))
  street_graph = graph.build_graph(segments,
                                   config.get('graph.snap_tolerance_m'))
  result = graph.centrality(street_graph, config.get('graph.radius_m'),
                            config.threads)
  graph.write_edges(run.output('edges.csv'), street_graph)
  graph.write_centrality(run.output('centrality.csv'), result)


def _features(run):
  config = run.config
  params = config.section('features')
  segments = schema.read_segments(run.need('ingest', 'segments.geojson'))
  ids = [s.id for s in segments]
  attributes = schema.read_feature_table(run.need('ingest', 'attributes.csv'))
  path = run.need('graph', 'centrality.csv')
  columns = _aligned(_read_csv(path, dtype={'segment_id': str}), ids, path)
  missing = {}
  columns.update(attributes.columns)
  missing.update(attributes.missing)

  landuse, empty = features.landuse_table(
      features.read_landuse(run.source('landuse')), segments,
      params['landuse_radius_m'])
  columns.update(landuse)
  missing.update((name, empty) for name in landuse)
  entropy, _ = features.poi_entropy_table(
      features.read_pois(run.source('pois')), segments, params['poi_radii'])
  columns.update(entropy)
  columns.update(features.aggregate_checkins(
      _read_csv(run.source('checkins')), segments,
      params['checkin_radius_m']))
  raw = schema.FeatureTable(ids, columns, missing)
  schema.write_feature_table(run.output('raw_features.csv'), raw)

  trajectories = _read_csv(run.source('trajectories'))
  points = features.resample_tracks(trajectories, params['interval_m'])
  density = features.match_density(points, segments, params['density_radii'])
  run.write_csv('density.csv', density.to_frame())
  responses, records = density.normalized()
  response_name = density.response_name(params['response_radius'])

  adjacency = graph.build_graph(
      segments, config.get('graph.snap_tolerance_m')).segment_adjacency()
  filled = features.interpolate_table(
      adjacency, raw, max_rounds=params['max_interpolation_rounds'])
  normalized = collections.OrderedDict()
  normalization = schema.NormalizationParams()
  for name in filled.names:
    values = filled.column(name)
    normalized[name], record = features.normalize(
        values, features.choose_kind(values), name)
    normalization = normalization.updated(name, record)
  for name, record in records.items():
    normalization = normalization.updated(name, record)
  table = schema.FeatureTable(ids, normalized, response_name=response_name,
                              response=responses[response_name])
  schema.write_feature_table(run.output('features.csv'), table)
  schema.write_normalization(run.output('normalization.csv'), normalization)

  population = features.read_population(run.source('population'))
  grid = features.aggregate_grid(segments, table, population,
                                 params['cell_size_m'])
  run.write_csv('grid.csv', grid.to_frame())
  features.write_segment_cells(run.output('segment_cells.csv'), segments,
                               grid)


def _cv_text(reports):
  lines = ['# %d-fold cross-validation' % len(reports[0].r2)]
  for report in reports:
    lo, hi = report.band()
    lines.append('%s  band [%.4f, %.4f]' % (report.format(), lo, hi))
  return '\n'.join(lines) + '\n'


def _train(run):
  config = run.config
  params = config.section('train')
  table = schema.read_feature_table(run.need('features', 'features.csv'))
  if table.response is None:
    raise InputError('features.csv carries no response column')
  names, X, y = table.names, table.matrix(), table.response
  seed, threads, k = config.seed, config.threads, params['k']
  boosted = dict(params['gbdt'])
  boosted['lambda_'] = boosted.pop('lambda')
  boosted = gbdt.Hyperparams(seed=seed, **boosted)
  forest = regressors.RfParams(seed=seed, **params['rf'])
  if params['search']:
    boosted, log = regressors.random_search(
        X, y, regressors.XGB_SPACE, params['n_draws'], k, seed, boosted,
        'gbdt', names, threads)
    log.write(run.output('search_gbdt.csv'))
    if params['baselines']:
      forest, log = regressors.random_search(
          X, y, regressors.RF_SPACE, params['n_draws'], k, seed, forest, 'rf',
          names, threads)
      log.write(run.output('search_rf.csv'))
  specs = [('GBDT', regressors.ModelSpec('gbdt', boosted, names))]
  if params['baselines']:
    specs.append(('RF', regressors.ModelSpec('rf', forest, names)))
    specs.append(('OLS', regressors.ModelSpec('ols', None, names)))
  reports = []
  frames = []
  for label, spec in specs:
    report = regressors.cross_validate(X, y, spec, k, seed, threads, label)
    logging.info(report.format())
    reports.append(report)
    frame = report.to_frame()
    frame.insert(0, 'model', label)
    frames.append(frame)
  run.write_csv('cv.csv', pandas.concat(frames, ignore_index=True))
  run.write_text('cv.txt', _cv_text(reports))
  model = gbdt.fit_gbdt(X, y, boosted, names)
  gbdt.save_model(run.output('model.txt'), model)
  run.write_text('params.txt', '%r\n' % (boosted,))
  run.write_csv('predictions.csv', pandas.DataFrame(collections.OrderedDict([
      ('segment_id', list(table.segment_ids)),
      ('observed', y),
      ('predicted', model.predict(X)),
  ])))


def _explain(run):
  config = run.config
  merge = config.get('features.merge_o_into_c')
  model = gbdt.load_model(run.need('train', 'model.txt'))
  table = schema.read_feature_table(run.need('features', 'features.csv'))
  X = table.matrix(model.feature_names)
  shap = explain.tree_shap(model, X, table.segment_ids, config.threads)
  gap = numpy.abs(shap.predictions() - model.predict(X)).max(initial=0.0)
  logging.info('SHAP additivity: max |base + sum phi - f(x)| = %.3g' % gap)
  groups = explain.group_shap(
      shap, schema.TriadSchema.from_names(shap.feature_names, merge))
  explain.write_shap(run.output('shap.csv'), shap, groups)
  explain.write_shares(run.output('shares.txt'), groups)

  importance = explain.mean_abs_importance(shap)
  run.write_csv('importance.csv', pandas.DataFrame(collections.OrderedDict([
      ('feature', list(importance.index)),
      ('dimension', [groups.triad.dimension(n) for n in importance.index]),
      ('mean_abs_phi', importance.to_numpy()),
      ('spearman', [explain.dependence_spearman(shap, n)
                    for n in importance.index]),
  ])))
  regions = _regions(run, shap.segment_ids)
  run.write_csv('shares_by_district.csv',
                explain.group_shares_by_region(groups, regions))
  for name in importance.index[:config.get('explain.dependence_top')]:
    run.write_csv('dependence_%s.csv' % name,
                  explain.dependence_table(shap, name))


def _classify(run):
  config = run.config
  params = config.section('classify')
  shap = explain.read_shap(run.need('explain', 'shap.csv'))
  triad = schema.TriadSchema.from_names(
      shap.feature_names, config.get('features.merge_o_into_c'))
  scores = typology.deprivation_scores(explain.group_shap(shap, triad),
                                       params['mode'])
  if params['by_region']:
    result = typology.classify_by_region(
        scores, _regions(run, shap.segment_ids), params['q'])
  else:
    result = typology.classify_typology(scores, params['q'])
  typology.write_typology(run.output('typology.csv'), result)
  counts = typology.label_counts(result)
  run.write_text('counts.txt', '# typology labels, %d segments\n' %
                 len(result) + ''.join('%-6s %d\n' % item
                                       for item in counts.items()))


def cell_supply(segment_cells, values, n_cells):
  """Return the clipped-length weighted mean of per-segment values per cell.

  segment_cells is a frame of segment_id, cell_id, length_m; values maps
  segment id -> value. Cells without segments get NaN.
  """
  value = segment_cells['segment_id'].map(values).to_numpy(dtype=float)
  cell = segment_cells['cell_id'].to_numpy(dtype=int)
  length = segment_cells['length_m'].to_numpy(dtype=float)
  weight = numpy.bincount(cell, weights=length, minlength=n_cells)
  total = numpy.bincount(cell, weights=value * length, minlength=n_cells)
  with numpy.errstate(invalid='ignore', divide='ignore'):
    return numpy.where(weight > 0, total / weight, numpy.nan)


def _mismatch(run):
  config = run.config
  params = config.section('mismatch')
  grid = features.GridTable.from_frame(
      _read_csv(run.need('features', 'grid.csv')))
  segment_cells = _read_csv(run.need('features', 'segment_cells.csv'),
                            dtype={'segment_id': str})
  predictions = _read_csv(run.need('train', 'predictions.csv'),
                          dtype={'segment_id': str})
  ids, labels = typology.read_typology(run.need('classify', 'typology.csv'))
  column = 'predicted' if params['supply'] == 'predicted' else 'observed'
  supply = cell_supply(
      segment_cells,
      dict(zip(predictions['segment_id'], predictions[column])), len(grid))
  weights = lisa.build_weights(grid, params['scheme'],
                               include=numpy.isfinite(supply))
  x = grid.population
  y = numpy.where(numpy.isfinite(supply), supply, 0.0)
  result = lisa.bivariate_lisa(x, y, weights, params['permutations'],
                               config.seed, params['alpha'], config.threads)
  moran = lisa.global_bivariate_moran(x, y, weights)
  report = lisa.mismatch_zones(
      result, dict(zip(ids, labels)),
      zip(segment_cells['segment_id'], segment_cells['cell_id']),
      params['target'])
  lisa.write_lisa(run.output('lisa.csv'), result)
  run.write_csv('clusters.csv', report.to_frame())
  crosstab = report.crosstab.copy()
  crosstab.index.name = 'quadrant'
  crosstab.reset_index().to_csv(run.output('crosstab.csv'), index=False,
                                lineterminator='\n')
  header = ['# bivariate LISA, population x %s supply, %s weights' %
            (params['supply'], params['scheme']),
            '# %d cells, %d permutations, alpha %g (unadjusted), seed %d' %
            (len(result), params['permutations'], params['alpha'],
             config.seed),
            '# global bivariate Moran I %.6f' % moran,
            '# ' + ' '.join('%s=%d' % item
                            for item in result.counts().items())]
  run.write_text('report.txt', '\n'.join(header) + '\n' + report.format())
  run.write_text('zone_segments.txt',
                 ''.join('%s\n' % sid for sid in report.segment_ids()))


def _simulate(run):
  config = run.config
  model = gbdt.load_model(run.need('train', 'model.txt'))
  table = schema.read_feature_table(run.need('features', 'features.csv'))
  normalization = schema.read_normalization(
      run.need('features', 'normalization.csv'))
  shap = explain.read_shap(run.need('explain', 'shap.csv'))
  ids, labels = typology.read_typology(run.need('classify', 'typology.csv'))
  with open(run.need('mismatch', 'zone_segments.txt'), encoding='utf-8') as f:
    zone_ids = [line.strip() for line in f if line.strip()]
  if list(shap.segment_ids) != list(table.segment_ids):
    raise InputError('shap.csv and features.csv list different segments')
  label_of = dict(zip(ids, labels))
  X = table.matrix(model.feature_names)
  zones = {
      'all': numpy.arange(len(table)),
      'hl': intervention.resolve_zone('hl', table.segment_ids, zone_ids),
  }
  if not len(zones['hl']):
    logging.warning('no mismatch-zone segments; hl scenarios affect nothing')
  record = normalization[table.response_name]
  result = intervention.scenario_grid(
      model, config.scenarios(), X, shap, zones, record, model.feature_names,
      [label_of.get(sid, 'None') for sid in table.segment_ids],
      config.threads)
  result.write(run.output('scenarios.csv'))
  run.write_text('table.txt', result.format())
  records = []
  for report in result.reports:
    for label, pct in report.by_label.items():
      records.append(collections.OrderedDict([
          ('type', report.scenario.label),
          ('intensity', report.scenario.intensity),
          ('variables', report.scenario.top_k),
          ('label', label),
          ('improvement_pct', pct),
      ]))
  run.write_csv('by_label.csv', pandas.DataFrame(
      records, columns=['type', 'intensity', 'variables', 'label',
                        'improvement_pct']))


def _synth(run):
  config = run.config
  city = synth.generate(synth.SynthConfig(**synth_params(config)))
  directory = config.resolve(config.get('synth.directory'))
  for path in synth.write_city(city, directory):
    run.outputs.append(path)
  run.write_text('oracle.txt', 'noise_sd %.17g\noracle_r2 %.17g\n' %
                 (city.noise_sd, city.oracle_r2()))


REPORT_SECTIONS = (
    ('Model comparison', 'train', 'cv.txt'),
    ('SHAP shares by triad dimension', 'explain', 'shares.txt'),
    ('Typology counts', 'classify', 'counts.txt'),
    ('Mismatch zones and LISA cross-tab', 'mismatch', 'report.txt'),
    ('Intervention scenarios', 'simulate', 'table.txt'),
)


def _report(run):
  parts = ['streetdep %s run report, seed %d\n' % (VERSION, run.config.seed)]
  for title, stage, name in REPORT_SECTIONS:
    with open(run.need(stage, name), encoding='utf-8') as f:
      parts.append('\n== %s ==\n%s' % (title, f.read()))
  run.write_text('report.txt', ''.join(parts))


RUNNERS = {
    'ingest': _ingest,
    'graph': _graph,
    'features': _features,
    'train': _train,
    'explain': _explain,
    'classify': _classify,
    'mismatch': _mismatch,
    'simulate': _simulate,
    'synth': _synth,
    'report': _report,
}


def run_stage(stage, config):
  """Run one stage (or 'all') and return the paths it wrote.

  Raises DependencyError when an upstream artifact is missing and
  ConfigError for an unknown stage name.
  """
  if stage == 'all':
    written = []
    for name in ALL_STAGES:
      written.extend(run_stage(name, config))
    return written
  if stage not in RUNNERS:
    raise ConfigError('unknown stage %r; choose one of %s or all' %
                      (stage, ', '.join(STAGES)))
  run = StageRun(stage, config)
  logging.info('stage %s: start' % stage)
  with util.Stopwatch() as sw:
    RUNNERS[stage](run)
  manifest = run.write_manifest(sw.elapsed)
  logging.info('stage %s: %d files in %.3fs' %
               (stage, len(run.outputs), sw.elapsed))
  return run.outputs + [manifest]
