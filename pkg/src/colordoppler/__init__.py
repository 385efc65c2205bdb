"""Color Doppler velocity estimation: phantom simulation, the lag-one
autocorrelator, SVD clutter filtering, training-set augmentation and
real/complex/ConvNeXt U-Nets for dealiased phase regression."""

from .core import (
    AcquisitionParams,
    ConfigError,
    CorruptHeaderError,
    DataError,
    DopplerError,
    DopplerSample,
    IQEnsemble,
    NonFiniteError,
    NumericError,
    ScanGeometry,
    ShapeMismatchError,
    VelocityMap,
    nyquist_velocity,
    phase_to_velocity,
    read_bundle,
    velocity_to_phase,
    write_bundle,
)
from .estimate import autocorrelator

__version__ = "0.1.0"
