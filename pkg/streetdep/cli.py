#! /usr/bin/python3

"""Command-line driver: run pipeline stages from a YAML config.

Usage:

  streetdep --config run.yaml --stage synth
  streetdep --config run.yaml --stage all --threads 4
  streetdep --config run.yaml --validate

Exit status is 0 on success, 2 for a missing upstream artifact or a bad
config, 1 for any other error.
"""

import logging
import optparse
import sys

from streetdep import config as config_module
from streetdep import pipeline
from streetdep.errors import ConfigError
from streetdep.errors import DependencyError
from streetdep.version import VERSION

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2


def parse_seed(text):
  try:
    seed = int(text)
  except ValueError:
    raise ConfigError('--seed must be an integer, got %r' % text)
  if not 0 <= seed < 2 ** 64:
    raise ConfigError('--seed must lie in [0, 2**64), got %d' % seed)
  return seed


def main(argv=None):
  parser = optparse.OptionParser(
      usage='%prog [--config FILE] [--stage NAME|all] [options]',
      version='%prog ' + VERSION)
  parser.add_option('-c', '--config', dest='config',
                    help='YAML run config; all defaults if omitted')
  parser.add_option('-s', '--stage', dest='stage', default='all',
                    help='stage to run: %s or all (default all)' %
                    ', '.join(pipeline.STAGES))
  parser.add_option('-t', '--threads', dest='threads', type='int',
                    help='worker threads; results do not depend on it')
  parser.add_option('--seed', dest='seed',
                    help='master seed, overrides the config')
  parser.add_option('--validate', dest='validate', action='store_true',
                    default=False,
                    help='print the validated config with defaults and exit')
  parser.add_option('-v', '--verbose', dest='verbose', action='store_true',
                    default=False, help='log debug messages')
  options, args = parser.parse_args(argv)
  if args:
    parser.error('unexpected arguments: %s' % ' '.join(args))

  logging.BASIC_FORMAT = '[%(created)f] %(levelname)s %(message)s'
  logging.basicConfig()
  logging.root.setLevel(logging.DEBUG if options.verbose else logging.INFO)

  try:
    if options.validate:
      sys.stdout.write(config_module.validate_config(options.config)
                       if options.config else
                       config_module.load_config().format())
      return EXIT_OK
    config = config_module.load_config(options.config)
    seed = None
    if options.seed is not None:
      seed = parse_seed(options.seed)
    config = config.with_overrides(seed=seed, threads=options.threads)
    pipeline.run_stage(options.stage, config)
  except (DependencyError, ConfigError) as e:
    logging.error(str(e))
    return EXIT_USAGE
  except Exception as e:
    logging.error('%s: %s' % (e.__class__.__name__, e))
    logging.debug('traceback of the error', exc_info=True)
    return EXIT_ERROR
  return EXIT_OK


if __name__ == '__main__':
  sys.exit(main())
