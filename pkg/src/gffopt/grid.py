"""The 89-channel, 50 GHz C-band comb and power-unit helpers."""

from dataclasses import dataclass

import numpy as np

C_LIGHT = 299_792_458.0
PLANCK = 6.626e-34


def dbm_to_w(p_dbm):
    return 1e-3 * 10.0 ** (np.asarray(p_dbm, dtype=np.float64) / 10.0)


def w_to_dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w, dtype=np.float64) / 1e-3)


def total_dbm(p_dbm, axis=-1):
    """Total power (dBm) of a per-channel dBm vector."""
    return 10.0 * np.log10(np.sum(10.0 ** (np.asarray(p_dbm) / 10.0), axis=axis))


@dataclass(frozen=True)
class ChannelGrid:
    n_channels: int = 89
    spacing_hz: float = 50e9
    start_wavelength_nm: float = 1530.0

    @property
    def f0_hz(self) -> float:
        return C_LIGHT / (self.start_wavelength_nm * 1e-9)

    @property
    def frequencies_hz(self) -> np.ndarray:
        return self.f0_hz - np.arange(self.n_channels) * self.spacing_hz

    @property
    def wavelengths_nm(self) -> np.ndarray:
        return C_LIGHT / self.frequencies_hz * 1e9

    @property
    def bandwidth_hz(self) -> float:
        return self.n_channels * self.spacing_hz

    @property
    def center_index(self) -> int:
        return self.n_channels // 2


C_BAND = ChannelGrid()
