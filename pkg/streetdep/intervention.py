"""What-if interventions: nudge the most attributed features, re-predict.

A scenario picks the top_k features of some triad dimensions by mean |phi|
inside a zone, moves each of them by intensity * (zone standard deviation)
in its beneficial direction and re-evaluates the model. SHAP values only
choose and orient the features; the improvement itself always comes from
the model's own predictions.

Example:

  scenario = intervention.Scenario(('C', 'L'), 0.2, 5)
  report = intervention.simulate(model, scenario, X, shap, zone, record)
  print(report.improvement_pct)
"""

import collections
import logging

import numpy
import pandas
import scipy.stats

from streetdep import features
from streetdep import schema
from streetdep import util
from streetdep.errors import ScenarioError
from streetdep.errors import SchemaError
from streetdep.errors import StreetdepError

DIRECTION_RULES = ('spearman', 'slope')

ZONE_KINDS = ('all', 'hl')

DEGENERATE_DENOMINATOR = 1e-9

TOP_VARIABLES = 10

STANDARD_GRID = (
    (('C',), 0.2, 5),
    (('P',), 0.2, 5),
    (('L',), 0.2, 5),
    (('C', 'P'), 0.2, 5),
    (('C', 'L'), 0.2, 5),
    (('L', 'P'), 0.2, 5),
    (('C', 'P', 'L'), 0.2, 5),
    (('C', 'P', 'L'), 0.2, 10),
    (('C', 'P', 'L'), 0.3, 10),
    (('C', 'P', 'L'), 0.3, 15),
)


class Scenario(object):
  """One intervention: dimensions, intensity, feature count, zone, rule.

  zone is 'all', 'hl' or a sequence of segment ids.
  """

  __slots__ = ['dimensions', 'intensity', 'top_k', 'zone', 'direction_rule']

  def __init__(self, dimensions, intensity, top_k, zone='all',
               direction_rule='spearman'):
    if isinstance(dimensions, str):
      dimensions = tuple(d for d in dimensions.split('+') if d)
    self.dimensions = tuple(dimensions)
    self.intensity = float(intensity)
    self.top_k = int(top_k)
    self.zone = zone if isinstance(zone, str) else tuple(str(s) for s in zone)
    self.direction_rule = direction_rule
    if not self.dimensions:
      raise ScenarioError('a scenario needs at least one dimension')
    for d in self.dimensions:
      if d not in schema.TYPOLOGY_DIMENSIONS:
        raise ScenarioError('unknown scenario dimension %r' % (d,))
    if len(set(self.dimensions)) != len(self.dimensions):
      raise ScenarioError('repeated dimension in %r' % (self.dimensions,))
    if not 0 <= self.intensity <= 1:
      raise ScenarioError('intensity must lie in [0, 1], got %r' %
                          self.intensity)
    if self.top_k < 1:
      raise ScenarioError('top_k must be >= 1, got %r' % self.top_k)
    if isinstance(self.zone, str) and self.zone not in ZONE_KINDS:
      raise ScenarioError('unknown zone %r' % (self.zone,))
    if direction_rule not in DIRECTION_RULES:
      raise ScenarioError('unknown direction rule %r' % (direction_rule,))

  def __repr__(self):
    return 'Scenario(%s, %g, %d)' % (self.label, self.intensity, self.top_k)

  @property
  def label(self):
    return '+'.join(self.dimensions)

  @classmethod
  def from_dict(cls, spec, defaults=None):
    values = dict(defaults or {})
    values.update(spec)
    return cls(values['dimensions'], values['intensity'], values['top_k'],
               values.get('zone', 'all'),
               values.get('direction_rule', 'spearman'))


def standard_grid(zone='all', direction_rule='spearman'):
  return [Scenario(dims, intensity, top_k, zone, direction_rule)
          for dims, intensity, top_k in STANDARD_GRID]


def resolve_zone(zone, segment_ids, hl_segment_ids=()):
  """Return the row indices of a zone ('all', 'hl' or explicit ids)."""
  if isinstance(zone, str) and zone == 'all':
    return numpy.arange(len(segment_ids))
  wanted = set(str(s) for s in (hl_segment_ids if zone == 'hl' else zone))
  return numpy.array([i for i, sid in enumerate(segment_ids)
                      if str(sid) in wanted], dtype=int)


RankedFeature = collections.namedtuple(
    'RankedFeature', 'name dimension importance zero_impact')


def rank_features(shap, triad, dimensions, zone, top_k=None):
  """Return the RankedFeatures of dimensions by mean |phi| over zone rows.

  Each dimension keeps its own top_k features (O features count as C), so
  the result holds at most top_k * len(dimensions) entries, ordered by
  importance with ties broken by name.
  """
  zone = numpy.asarray(zone, dtype=int)
  if not len(zone):
    raise ScenarioError('empty zone')
  magnitude = numpy.abs(shap.values[zone]).mean(axis=0)
  by_dimension = collections.defaultdict(list)
  for j, name in enumerate(shap.feature_names):
    dimension = triad.dimension(name)
    if dimension == 'O':
      dimension = 'C'
    if dimension in dimensions:
      by_dimension[dimension].append((j, name, dimension))

  def Key(item):
    return (-magnitude[item[0]], item[1])

  if not by_dimension:
    raise ScenarioError('no features in dimensions %s' % '+'.join(dimensions))
  ranked = []
  for candidates in by_dimension.values():
    ranked.extend(sorted(candidates, key=Key)[:top_k])
  return [RankedFeature(name, dimension, float(magnitude[j]),
                        bool(magnitude[j] == 0))
          for j, name, dimension in sorted(ranked, key=Key)]


def _direction(values, phi, rule, all_values, all_phi):
  if rule == 'spearman':
    if numpy.ptp(phi) == 0:
      return 0.0
    rho = scipy.stats.spearmanr(values, phi)[0]
    return 0.0 if numpy.isnan(rho) else float(numpy.sign(rho))
  centred = all_values - all_values.mean()
  return float(numpy.sign(centred @ (all_phi - all_phi.mean())))


def perturb(X, feature_names, ranked, intensity, shap, zone,
            rule='spearman'):
  """Return (X', applied deltas by feature, skipped feature notes).

  Row r of feature k moves by direction_k * intensity * sd_k when r is in
  the zone; direction_k is the sign of the association between x_k and
  phi_k and sd_k the zone standard deviation of x_k.
  """
  X = numpy.asarray(X, dtype=float)
  perturbed = X.copy()
  zone = numpy.asarray(zone, dtype=int)
  deltas = collections.OrderedDict()
  skipped = []
  if intensity == 0 or not len(zone):
    return perturbed, deltas, skipped
  for feature in ranked:
    name = getattr(feature, 'name', feature)
    if name not in feature_names:
      raise SchemaError('feature %s is not a column of the feature matrix' %
                        name)
    j = feature_names.index(name)
    k = shap.feature_names.index(name)
    values = X[zone, j]
    sd = float(values.std())
    if sd == 0:
      logging.warning('feature %s is constant in the zone; not perturbed' %
                      name)
      skipped.append('%s: zero variance in zone' % name)
      continue
    direction = _direction(values, shap.values[zone, k], rule,
                           X[:, j], shap.values[:, k])
    if direction == 0:
      logging.warning('feature %s has no value-phi association; not '
                      'perturbed' % name)
      skipped.append('%s: no direction' % name)
      continue
    deltas[name] = direction * intensity * sd
    perturbed[zone, j] = values + deltas[name]
  return perturbed, deltas, skipped


class InterventionReport(object):
  """The outcome of one scenario.

  improvement_pct is the percent change of the mean back-transformed
  density over the zone; when the baseline mean is degenerate it is None
  and absolute_delta carries the change. standardized_delta is the change
  of the mean model-scale prediction.
  """

  def __init__(self, scenario, affected, ranked, deltas, skipped,
               improvement_pct, absolute_delta, standardized_delta,
               degenerate, by_label=None, error=None):
    self.scenario = scenario
    self.affected = affected
    self.ranked = ranked
    self.deltas = deltas
    self.skipped = skipped
    self.improvement_pct = improvement_pct
    self.absolute_delta = absolute_delta
    self.standardized_delta = standardized_delta
    self.degenerate = degenerate
    self.by_label = by_label or collections.OrderedDict()
    self.error = error

  @classmethod
  def failed(cls, scenario, error):
    return cls(scenario, 0, [], collections.OrderedDict(), [], None, None,
               None, False, error=str(error))

  @property
  def feature_names(self):
    return [f.name for f in self.ranked]


def _improvement(before, after):
  base = float(numpy.mean(before))
  delta = float(numpy.mean(after)) - base
  if base <= DEGENERATE_DENOMINATOR:
    return None, delta, True
  return 100.0 * delta / base, delta, False


def simulate(model, scenario, X, shap, zone, response_record=None,
             feature_names=None, labels=None):
  """Return the InterventionReport of scenario on the zone rows of X.

  response_record is the NormalizationRecord of the response; predictions
  are mapped back through it before the percent change is taken. labels,
  when given, are per-row typology labels to summarize the zone by.
  """
  if feature_names is None:
    feature_names = list(model.feature_names)
  if response_record is None:
    response_record = schema.NormalizationRecord('none', 0.0, 1.0, False)
  X = numpy.asarray(X, dtype=float)
  zone = numpy.asarray(zone, dtype=int)
  if not len(zone):
    return InterventionReport(scenario, 0, [], collections.OrderedDict(), [],
                              0.0, 0.0, 0.0, False)
  ranked = rank_features(shap, shap_triad(shap), scenario.dimensions, zone,
                         scenario.top_k)
  perturbed, deltas, skipped = perturb(X, feature_names, ranked,
                                       scenario.intensity, shap, zone,
                                       scenario.direction_rule)
  before = model.predict(X[zone])
  after = model.predict(perturbed[zone])
  density_before = features.inverse(before, response_record)
  density_after = features.inverse(after, response_record)
  pct, absolute, degenerate = _improvement(density_before, density_after)
  if degenerate:
    logging.warning('%r: mean baseline density %.3g; reporting the absolute '
                    'change' % (scenario, numpy.mean(density_before)))
  by_label = collections.OrderedDict()
  if labels is not None:
    labels = numpy.asarray(labels, dtype=object)[zone]
    for label in sorted(set(labels)):
      rows = labels == label
      by_label[label] = _improvement(density_before[rows],
                                     density_after[rows])[0]
  return InterventionReport(
      scenario, len(zone), ranked, deltas, skipped, pct, absolute,
      float(after.mean() - before.mean()), degenerate, by_label)


def shap_triad(shap):
  return schema.TriadSchema.from_names(shap.feature_names)


class ScenarioTable(object):
  """Scenario reports in grid order plus the zone's top variables."""

  COLUMNS = ('type', 'intensity', 'variables', 'improvement_pct')

  def __init__(self, reports, top_variables):
    self.reports = list(reports)
    self.top_variables = list(top_variables)

  def __len__(self):
    return len(self.reports)

  def to_frame(self):
    records = []
    for report in self.reports:
      scenario = report.scenario
      records.append(collections.OrderedDict([
          ('type', scenario.label),
          ('intensity', scenario.intensity),
          ('variables', scenario.top_k),
          ('improvement_pct', report.improvement_pct),
          ('standardized_delta', report.standardized_delta),
          ('absolute_delta', report.absolute_delta),
          ('degenerate', int(report.degenerate)),
          ('affected', report.affected),
          ('features', ' '.join(report.feature_names)),
          ('error', report.error or ''),
      ]))
    return pandas.DataFrame(records)

  def format(self):
    lines = ['%-8s %9s %9s %14s' % ('Type', 'Intensity', 'Variables',
                                    'Improves %')]
    for report in self.reports:
      scenario = report.scenario
      if report.error:
        outcome = 'error: %s' % report.error
      elif report.degenerate:
        outcome = '%+.6g (abs)' % report.absolute_delta
      else:
        outcome = '%.2f%%' % report.improvement_pct
      lines.append('%-8s %8d%% %9d %14s' % (
          scenario.label, round(100 * scenario.intensity), scenario.top_k,
          outcome))
    lines.append('Top %d variables: %s' % (len(self.top_variables),
                                           ', '.join(self.top_variables)))
    return '\n'.join(lines) + '\n'

  def write(self, path):
    self.to_frame().to_csv(path, index=False,
                           float_format=schema.CSV_FLOAT_FORMAT,
                           lineterminator='\n')


def scenario_grid(model, scenarios, X, shap, zones, response_record=None,
                  feature_names=None, labels=None, threads=1):
  """Run every scenario and return a ScenarioTable in grid order.

  zones maps a scenario zone kind ('all', 'hl') to row indices; explicit
  zones are resolved against the SHAP segment ids. A scenario that fails
  is recorded with its error.
  """
  triad = shap_triad(shap)

  def ZoneOf(scenario):
    if isinstance(scenario.zone, str):
      return zones[scenario.zone]
    return resolve_zone(scenario.zone, shap.segment_ids)

  def RunScenario(scenario):
    try:
      return simulate(model, scenario, X, shap, ZoneOf(scenario),
                      response_record, feature_names, labels)
    except StreetdepError as e:
      logging.warning('scenario %r failed: %s' % (scenario, e))
      return InterventionReport.failed(scenario, e)

  with util.Stopwatch() as sw:
    reports = util.parallel_map(RunScenario, scenarios, threads)
  zone = zones.get('hl', ())
  if not any(s.zone == 'hl' for s in scenarios) or not len(zone):
    zone = numpy.arange(len(shap))
  top = [f.name for f in rank_features(shap, triad,
                                       schema.TYPOLOGY_DIMENSIONS, zone)]
  top = top[:TOP_VARIABLES]
  logging.info('%d scenarios in %.3fs' % (len(reports), sw.elapsed))
  return ScenarioTable(reports, top)
