#! /usr/bin/python3

import os
import shutil
import tempfile
import unittest

import yaml

from streetdep import config
from streetdep.errors import ConfigError


class ParseConfigTest(unittest.TestCase):
  def assertConfigError(self, text, message):
    try:
      config.parse_config(text)
    except ConfigError as e:
      self.assertTrue(message in str(e), str(e))
    else:
      self.fail('no ConfigError for %r' % text)

  def testEmptyGivesDefaults(self):
    self.assertEqual(config.DEFAULTS, config.parse_config(''))
    self.assertEqual(config.DEFAULTS, config.parse_config('{}'))

  def testMergeKeepsSiblings(self):
    tree = config.parse_config('train:\n  gbdt:\n    max_depth: 3\n')
    self.assertEqual(3, tree['train']['gbdt']['max_depth'])
    self.assertEqual(200, tree['train']['gbdt']['n_estimators'])
    self.assertEqual(10, tree['train']['k'])

  def testUnknownKey(self):
    self.assertConfigError('train:\n  folds: 3\n',
                           'unknown config key train.folds')
    self.assertConfigError('colour: red\n', 'unknown config key colour')

  def testRanges(self):
    self.assertConfigError('train:\n  k: 1\n', 'train.k=1 is out of range')
    self.assertConfigError('classify:\n  q: 0\n', 'classify.q=0 is out of range')
    self.assertConfigError('train:\n  k: 2.5\n', 'train.k must be an integer')
    self.assertConfigError('seed: true\n', 'seed must be an integer')
    self.assertConfigError('mismatch:\n  scheme: hex\n',
                           'mismatch.scheme must be one of queen, rook')
    self.assertConfigError('features:\n  density_radii: []\n',
                           'features.density_radii must be a non-empty list')
    self.assertConfigError('features:\n  response_radius: 40\n',
                           'features.response_radius=40 is not one of')
    self.assertConfigError('features:\n  merge_o_into_c: 1\n',
                           'features.merge_o_into_c must be true or false')

  def testGrid(self):
    self.assertConfigError(
        'simulate:\n  grid:\n    - {dimensions: C, intensity: 1.5, '
        'top_k: 5}\n',
        'simulate.grid[0].intensity=1.5 is out of range')
    self.assertConfigError(
        'simulate:\n  grid:\n    - {dimensions: C, intensity: 0.2}\n',
        'simulate.grid[0].top_k is required')
    self.assertConfigError(
        'simulate:\n  grid:\n    - {dimensions: Q, intensity: 0.2, '
        'top_k: 5}\n',
        'simulate.grid[0]: unknown scenario dimension')

  def testSyntaxErrorLocation(self):
    try:
      config.parse_config('seed: 1\ntrain: [1, 2\n', 'run.yaml')
    except ConfigError as e:
      self.assertTrue(str(e).startswith('run.yaml:'), str(e))
    else:
      self.fail('no ConfigError')

  def testOptionalValues(self):
    tree = config.parse_config('synth:\n  noise_sd: 0.3\n  n_trajectories: '
                               '~\n')
    self.assertEqual(0.3, tree['synth']['noise_sd'])
    self.assertEqual(None, tree['synth']['n_trajectories'])
    self.assertConfigError('synth:\n  noise_sd: -1\n', 'synth.noise_sd=-1')


class LoadConfigTest(unittest.TestCase):
  def setUp(self):
    self.tmpdir = tempfile.mkdtemp()
    self.path = os.path.join(self.tmpdir, 'run.yaml')

  def tearDown(self):
    shutil.rmtree(self.tmpdir)

  def Write(self, text):
    with open(self.path, 'w') as f:
      f.write(text)

  def testPathsResolveAgainstConfigDirectory(self):
    self.Write('run_dir: out\ninputs:\n  pois: /data/pois.csv\n')
    cfg = config.load_config(self.path)
    self.assertEqual(os.path.join(self.tmpdir, 'out'), cfg.run_dir)
    self.assertEqual('/data/pois.csv', cfg.input_path('pois'))
    self.assertEqual(os.path.join(self.tmpdir, 'city', 'segments.geojson'),
                     cfg.input_path('segments'))

  def testMissingFile(self):
    self.assertRaises(ConfigError, config.load_config,
                      os.path.join(self.tmpdir, 'absent.yaml'))

  def testScenarios(self):
    self.Write('simulate:\n  zone: all\n  grid:\n'
               '    - {dimensions: C+L, intensity: 0.2, top_k: 5}\n'
               '    - {dimensions: P, intensity: 0.3, top_k: 2, zone: hl}\n')
    scenarios = config.load_config(self.path).scenarios()
    self.assertEqual(['C+L', 'P'], [s.label for s in scenarios])
    self.assertEqual(['all', 'hl'], [s.zone for s in scenarios])
    self.assertEqual(10, len(config.load_config().scenarios()))

  def testOverridesAndEcho(self):
    self.Write('seed: 7\n')
    cfg = config.load_config(self.path)
    self.assertEqual(7, cfg.seed)
    other = cfg.with_overrides(seed=9, threads=4)
    self.assertEqual((9, 4), (other.seed, other.threads))
    self.assertEqual(7, cfg.seed)
    self.assertRaises(ConfigError, cfg.with_overrides, threads=0)
    echoed = yaml.safe_load(config.validate_config(self.path))
    self.assertEqual(7, echoed['seed'])
    self.assertEqual(config.DEFAULTS['train'], echoed['train'])

  def testSynthParams(self):
    self.Write('seed: 3\nsynth:\n  blocks_x: 4\n')
    params = config.synth_params(config.load_config(self.path))
    self.assertEqual(3, params['seed'])
    self.assertEqual(4, params['blocks_x'])
    self.assertFalse('directory' in params)


if __name__ == '__main__':
  unittest.main()
