"""Exception hierarchy shared across the package."""


class KinefuseError(Exception):
    """Base class for all package errors."""


class DegenerateVectorError(KinefuseError, ValueError):
    """A vector (usually a bone) is too short to define a direction."""


class ShapeError(KinefuseError, ValueError):
    """Array dimensions do not match the skeleton or model."""


class RotationError(KinefuseError, ValueError):
    """A matrix is not a proper rotation."""


class SkeletonError(KinefuseError, ValueError):
    """Invalid kinematic tree definition. ``problems`` lists every violation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class CalibrationError(KinefuseError, KeyError):
    """Sensor missing from a calibration set."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigError(KinefuseError, ValueError):
    """Bad configuration file or value."""


class DatasetError(KinefuseError):
    """Base class for dataset and checkpoint file problems."""


class MalformedFileError(DatasetError):
    """File is truncated, not parseable, or missing required records."""


class VersionMismatchError(DatasetError):
    """File was written with an unsupported schema version."""


class ChecksumError(DatasetError):
    """Stored checksum does not match the file body."""


class TrainingError(KinefuseError, RuntimeError):
    """Training could not proceed (empty dataset, non-finite loss)."""
