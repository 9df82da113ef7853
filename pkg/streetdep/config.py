"""Run configuration: a YAML file merged over the built-in defaults.

Every key of the file must exist in DEFAULTS; values are type and range
checked, and errors name the dotted key path (e.g. train.k). Relative
paths are resolved against the directory of the config file.

Example config:

  run_dir: run
  seed: 7
  train:
    k: 5
  simulate:
    zone: all
    grid:
      - {dimensions: C+L, intensity: 0.2, top_k: 5}
"""

import collections
import copy
import numbers
import os

import yaml

from streetdep import intervention
from streetdep.errors import ConfigError
from streetdep.errors import ScenarioError

DEFAULTS = {
    'run_dir': 'run',
    'seed': 42,
    'threads': 1,
    'inputs': {
        'segments': 'city/segments.geojson',
        'trajectories': 'city/trajectories.csv',
        'pois': 'city/pois.csv',
        'landuse': 'city/landuse.csv',
        'population': 'city/population.csv',
        'attributes': 'city/attributes.csv',
        'checkins': 'city/checkins.csv',
    },
    'graph': {
        'snap_tolerance_m': 0.5,
        'radius_m': 800.0,
    },
    'features': {
        'interval_m': 5.0,
        'density_radii': [10, 20, 30],
        'response_radius': 30,
        'poi_radii': [300.0],
        'landuse_radius_m': 100.0,
        'checkin_radius_m': 30.0,
        'cell_size_m': 200.0,
        'max_interpolation_rounds': 5,
        'merge_o_into_c': False,
    },
    'train': {
        'k': 10,
        'search': False,
        'n_draws': 30,
        'baselines': True,
        'gbdt': {
            'n_estimators': 200,
            'max_depth': 8,
            'learning_rate': 0.05,
            'subsample': 0.8,
            'colsample_bytree': 0.8,
            'gamma': 0.1,
            'lambda': 1.0,
            'min_child_weight': 1.0,
        },
        'rf': {
            'n_estimators': 200,
            'max_depth': 8,
            'max_features': 'sqrt',
        },
    },
    'explain': {
        'dependence_top': 5,
    },
    'classify': {
        'q': 0.8,
        'mode': 'negated_sum',
        'by_region': False,
    },
    'mismatch': {
        'scheme': 'queen',
        'permutations': 999,
        'alpha': 0.05,
        'supply': 'predicted',
        'target': 'HL',
    },
    'simulate': {
        'zone': 'hl',
        'direction_rule': 'spearman',
        'grid': 'standard',
    },
    'synth': {
        'directory': 'city',
        'blocks_x': 32,
        'blocks_y': 30,
        'block_m': 120.0,
        'irregularity': 0.2,
        'n_trajectories': None,
        'n_pois': 8000,
        'noise_sd': None,
        'target_r2_ceiling': 0.75,
        'w_C': 1.0,
        'w_P': 1.0,
        'w_L': 1.0,
        'planted_quarter': True,
        'missing_fraction': 0.03,
    },
}

# Dotted key -> (kind, low, high) or (kind, choices). Bounds are inclusive
# unless the kind name ends in '>'.
RULES = {
    'seed': ('int', 0, 2 ** 64 - 1),
    'threads': ('int', 1, 1024),
    'graph.snap_tolerance_m': ('real', 0, None),
    'graph.radius_m': ('real>', 0, None),
    'features.interval_m': ('real>', 0, None),
    'features.density_radii': ('reals>', 0, None),
    'features.response_radius': ('real>', 0, None),
    'features.poi_radii': ('reals>', 0, None),
    'features.landuse_radius_m': ('real>', 0, None),
    'features.checkin_radius_m': ('real>', 0, None),
    'features.cell_size_m': ('real>', 0, None),
    'features.max_interpolation_rounds': ('int', 0, 100),
    'train.k': ('int', 2, 1000),
    'train.n_draws': ('int', 1, 100000),
    'train.gbdt.n_estimators': ('int', 1, 100000),
    'train.gbdt.max_depth': ('int', 1, 30),
    'train.gbdt.learning_rate': ('real>', 0, 1),
    'train.gbdt.subsample': ('real>', 0, 1),
    'train.gbdt.colsample_bytree': ('real>', 0, 1),
    'train.gbdt.gamma': ('real', 0, None),
    'train.gbdt.lambda': ('real', 0, None),
    'train.gbdt.min_child_weight': ('real', 0, None),
    'train.rf.n_estimators': ('int', 1, 100000),
    'train.rf.max_depth': ('int', 1, 100),
    'train.rf.max_features': ('choice', ('auto', 'sqrt', 'log2')),
    'explain.dependence_top': ('int', 0, 1000),
    'classify.q': ('real>', 0, 1),
    'classify.mode': ('choice', ('negated_sum', 'negative_only')),
    'mismatch.scheme': ('choice', ('queen', 'rook')),
    'mismatch.permutations': ('int', 99, 10 ** 6),
    'mismatch.alpha': ('real>', 0, 1),
    'mismatch.supply': ('choice', ('predicted', 'observed')),
    'mismatch.target': ('choice', ('HH', 'HL', 'LH', 'LL')),
    'simulate.zone': ('choice', ('all', 'hl')),
    'simulate.direction_rule': ('choice', intervention.DIRECTION_RULES),
    'synth.blocks_x': ('int', 2, 10000),
    'synth.blocks_y': ('int', 2, 10000),
    'synth.block_m': ('real>', 0, None),
    'synth.irregularity': ('real', 0, 1),
    'synth.n_trajectories': ('int?', 1, None),
    'synth.n_pois': ('int', 0, None),
    'synth.noise_sd': ('real?', 0, None),
    'synth.target_r2_ceiling': ('real>', 0, 1),
    'synth.missing_fraction': ('real', 0, 0.5),
}

GRID_KEYS = ('dimensions', 'intensity', 'top_k', 'zone', 'direction_rule')


class Config(object):
  """A validated configuration tree plus the directory paths resolve from."""

  def __init__(self, tree, base_dir='.', path=None):
    self.tree = tree
    self.base_dir = base_dir
    self.path = path

  def get(self, key):
    node = self.tree
    for part in key.split('.'):
      node = node[part]
    return node

  def resolve(self, path):
    if os.path.isabs(path):
      return path
    return os.path.normpath(os.path.join(self.base_dir, path))

  def input_path(self, name):
    return self.resolve(self.get('inputs.' + name))

  @property
  def run_dir(self):
    return self.resolve(self.tree['run_dir'])

  @property
  def seed(self):
    return self.tree['seed']

  @property
  def threads(self):
    return self.tree['threads']

  def section(self, name):
    return copy.deepcopy(self.tree[name])

  def scenarios(self):
    """Return the scenario grid as a list of intervention.Scenario."""
    simulate = self.tree['simulate']
    if simulate['grid'] == 'standard':
      return intervention.standard_grid(simulate['zone'],
                                        simulate['direction_rule'])
    defaults = {'zone': simulate['zone'],
                'direction_rule': simulate['direction_rule']}
    return [intervention.Scenario.from_dict(entry, defaults)
            for entry in simulate['grid']]

  def with_overrides(self, seed=None, threads=None):
    tree = copy.deepcopy(self.tree)
    if seed is not None:
      tree['seed'] = seed
    if threads is not None:
      tree['threads'] = threads
    validate_tree(tree)
    return Config(tree, self.base_dir, self.path)

  def format(self):
    """Return the full tree, defaults included, as YAML."""
    return yaml.safe_dump(self.tree, default_flow_style=False, sort_keys=True)


def _merge(defaults, given, prefix=''):
  merged = copy.deepcopy(defaults)
  if given is None:
    return merged
  if not isinstance(given, dict):
    raise ConfigError('%s must be a mapping' % (prefix.rstrip('.') or
                                                 'the config'))
  for key, value in given.items():
    path = prefix + str(key)
    if key not in defaults:
      raise ConfigError('unknown config key %s' % path)
    if isinstance(defaults[key], dict):
      merged[key] = _merge(defaults[key], value, path + '.')
    else:
      merged[key] = value
  return merged


def _is_real(value):
  return (isinstance(value, numbers.Real) and not isinstance(value, bool))


def _check_value(key, value, rule):
  kind = rule[0]
  if kind == 'choice':
    if value not in rule[1]:
      raise ConfigError('%s must be one of %s, got %r' %
                        (key, ', '.join(rule[1]), value))
    return
  if kind.endswith('?'):
    if value is None:
      return
    kind = kind[:-1]
  if kind.startswith('reals'):
    if not isinstance(value, list) or not value:
      raise ConfigError('%s must be a non-empty list of numbers' % key)
    for item in value:
      _check_value(key, item, ('real' + kind[len('reals'):],) + rule[1:])
    return
  strict = kind.endswith('>')
  kind = kind.rstrip('>')
  if kind == 'int' and not (isinstance(value, numbers.Integral) and
                            not isinstance(value, bool)):
    raise ConfigError('%s must be an integer, got %r' % (key, value))
  if kind == 'real' and not _is_real(value):
    raise ConfigError('%s must be a number, got %r' % (key, value))
  low, high = rule[1], rule[2]
  if low is not None and (value <= low if strict else value < low):
    raise ConfigError('%s=%r is out of range: must be %s %r' %
                      (key, value, '>' if strict else '>=', low))
  if high is not None and value > high:
    raise ConfigError('%s=%r is out of range: must be <= %r' %
                      (key, value, high))


def _walk(tree, defaults, prefix=''):
  for key, value in tree.items():
    path = prefix + key
    default = defaults[key]
    if isinstance(default, dict):
      _walk(value, default, path + '.')
      continue
    if path in RULES:
      _check_value(path, value, RULES[path])
    elif isinstance(default, bool):
      if not isinstance(value, bool):
        raise ConfigError('%s must be true or false, got %r' % (path, value))
    elif isinstance(default, str) and path != 'simulate.grid':
      if not isinstance(value, str) or not value:
        raise ConfigError('%s must be a non-empty string, got %r' %
                          (path, value))
    elif _is_real(default) and not _is_real(value):
      raise ConfigError('%s must be a number, got %r' % (path, value))


def _check_grid(grid):
  if grid == 'standard':
    return
  if not isinstance(grid, list) or not grid:
    raise ConfigError(
        "simulate.grid must be 'standard' or a non-empty list")
  for i, entry in enumerate(grid):
    path = 'simulate.grid[%d]' % i
    if not isinstance(entry, dict):
      raise ConfigError('%s must be a mapping' % path)
    for key in entry:
      if key not in GRID_KEYS:
        raise ConfigError('unknown config key %s.%s' % (path, key))
    for key in ('dimensions', 'intensity', 'top_k'):
      if key not in entry:
        raise ConfigError('%s.%s is required' % (path, key))
    _check_value(path + '.intensity', entry['intensity'], ('real', 0, 1))
    _check_value(path + '.top_k', entry['top_k'], ('int', 1, None))
    try:
      intervention.Scenario.from_dict(entry)
    except ScenarioError as e:
      raise ConfigError('%s: %s' % (path, e))


def validate_tree(tree):
  _walk(tree, DEFAULTS)
  _check_grid(tree['simulate']['grid'])
  features = tree['features']
  if features['response_radius'] not in features['density_radii']:
    raise ConfigError('features.response_radius=%r is not one of '
                      'features.density_radii' % features['response_radius'])
  synth = tree['synth']
  if synth['w_C'] == synth['w_P'] == synth['w_L'] == 0:
    raise ConfigError('synth.w_C, synth.w_P and synth.w_L are all zero')


def parse_config(text, source='<config>'):
  """Return the merged, validated tree of a YAML document."""
  try:
    given = yaml.safe_load(text)
  except yaml.YAMLError as e:
    mark = getattr(e, 'problem_mark', None)
    if mark is not None:
      raise ConfigError('%s:%d:%d: %s' % (source, mark.line + 1,
                                          mark.column + 1,
                                          getattr(e, 'problem', e)))
    raise ConfigError('%s: %s' % (source, e))
  tree = _merge(DEFAULTS, given)
  validate_tree(tree)
  return tree


def load_config(path=None):
  """Return the Config of a YAML file; None means all defaults."""
  if path is None:
    return Config(_merge(DEFAULTS, None), os.getcwd())
  try:
    with open(path, encoding='utf-8') as f:
      text = f.read()
  except (IOError, OSError) as e:
    raise ConfigError('cannot read config %s: %s' % (path, e))
  return Config(parse_config(text, path),
                os.path.dirname(os.path.abspath(path)), path)


def validate_config(path):
  """Return the YAML echo of the validated config, defaults included."""
  return load_config(path).format()


def synth_params(config):
  """Return the keyword arguments of synth.SynthConfig."""
  params = collections.OrderedDict(
      (k, v) for k, v in sorted(config.tree['synth'].items())
      if k != 'directory')
  params['seed'] = config.seed
  return params
