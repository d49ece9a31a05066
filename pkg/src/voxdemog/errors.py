"""Exception hierarchy shared by every subpackage.

Each class carries the process exit code the CLI maps it to.
"""


class VoxDemogError(Exception):
    exit_code = 1


class ConfigError(VoxDemogError, ValueError):
    exit_code = 2


class FormatError(VoxDemogError, ValueError):
    """Malformed file contents (bad magic, unknown labels, duplicate ids)."""

    exit_code = 3


class UnsupportedError(FormatError):
    pass


class NumericError(VoxDemogError, FloatingPointError):
    exit_code = 4


class DimensionError(VoxDemogError, ValueError):
    exit_code = 5


class GeometryError(DimensionError):
    """A spatial extent collapsed below one voxel or violated a divisibility rule."""


class ContractError(VoxDemogError, ValueError):
    exit_code = 6


class UndefinedMetricError(ContractError):
    pass


class DegenerateInputError(ContractError):
    pass


class CheckpointError(VoxDemogError, IOError):
    exit_code = 3


class CheckpointVersionError(CheckpointError):
    pass
