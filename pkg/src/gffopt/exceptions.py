"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match the network or grid."""


class UsageError(ValueError):
    """Invalid argument supplied by the caller."""


class NonFiniteGradientError(FloatingPointError):
    """An optimizer step was handed NaN or inf gradients."""


class GFFInfeasibleError(RuntimeError):
    """A gain-flattening filter would need to amplify (it can only attenuate)."""

    def __init__(self, channel: int, shortfall_db: float):
        self.channel = channel
        self.shortfall_db = shortfall_db
        super().__init__(
            f"GFF infeasible: channel {channel} is {shortfall_db:.3f} dB below target "
            "(insufficient amplifier headroom)"
        )


class CalibrationError(RuntimeError):
    """Noise-figure calibration target lies outside the search bracket."""
