"""Exception classes raised by streetdep.

Every class is also a subclass of the builtin exception a caller would
naturally catch (ValueError, LookupError), so code unaware of streetdep
still handles them.
"""


class StreetdepError(Exception):
  """Base class of all streetdep errors."""


class SchemaError(StreetdepError, ValueError):
  """Raised for an unknown feature prefix or land-use class label."""


class InputError(StreetdepError, ValueError):
  """Raised for malformed input data, e.g. duplicate segment ids."""


class NodeLookupError(StreetdepError, LookupError):
  """Raised when a graph node id is not in the graph."""


class DomainError(StreetdepError, ValueError):
  """Raised when a transform gets values outside its domain."""


class InterpolationError(StreetdepError, ValueError):
  """Raised when a column has no known value to propagate."""


class ConfigError(StreetdepError, ValueError):
  """Raised for an unknown config key, a bad type or an out-of-range value."""


class ModelIntegrityError(StreetdepError, ValueError):
  """Raised for a structurally invalid tree model."""


class OracleSizeError(StreetdepError, ValueError):
  """Raised when exhaustive subset enumeration would be too large."""


class TypologyError(StreetdepError, ValueError):
  """Raised when too few segments are given for quantile thresholds."""


class WeightsError(StreetdepError, ValueError):
  """Raised when spatial weights cannot be built."""


class ScenarioError(StreetdepError, ValueError):
  """Raised for an intervention scenario that cannot be evaluated."""


class DependencyError(StreetdepError):
  """Raised when a pipeline stage misses an upstream artifact.

  The message names the stage to run first.
  """

  def __init__(self, stage, path):
    StreetdepError.__init__(
        self, 'missing artifact %s: run %s first' % (path, stage))
    self.stage = stage
    self.path = path
