"""Single-image dehazing with a conditional Wasserstein GAN (gradient penalty),
a dark-channel-prior baseline, and reference / no-reference quality metrics."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CheckpointIntegrityError,
    CheckpointVersionError,
    ConfigurationError,
    ContractError,
    DataError,
    EmptyDatasetError,
    HazeganError,
    IncompatibleCheckpointError,
    InvalidParameterError,
    NumericalError,
    ShapeError,
)
from .haze_model import HazeParams, restore_with_transmission, synthesize_haze, transmission  # noqa: E402
