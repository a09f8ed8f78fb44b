"""SNR, Shannon capacity and noise-figure calibration.

Nonlinear interference is the closed-form incoherent GN estimate for the
central channel, accumulated linearly over spans and applied unchanged to
every channel.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import edfa
from .exceptions import CalibrationError, UsageError
from .grid import C_BAND, ChannelGrid, w_to_dbm
from .link import (
    ALPHA_DB_PER_KM,
    ChannelState,
    LaunchProfile,
    LinkDesign,
    PatternRunner,
    design_link,
    propagate_full,
)

log = logging.getLogger(__name__)

CONVENTIONAL_CAPACITY_TBPS = 31.3
CALIBRATION_TOP_DBM = 17.0
NF_BRACKET_DB = (3.0, 10.0)


@dataclass(frozen=True)
class NliParams:
    gamma_per_w_km: float = 1.3
    beta2_ps2_per_km: float = -21.7
    alpha_db_per_km: float = ALPHA_DB_PER_KM
    grid: ChannelGrid = C_BAND

    @property
    def alpha_field_np_per_km(self) -> float:
        return self.alpha_db_per_km * math.log(10.0) / 20.0

    @property
    def bandwidth_hz(self) -> float:
        return self.grid.bandwidth_hz

    def effective_length_km(self, span_km: float) -> float:
        a2 = 2.0 * self.alpha_field_np_per_km
        return (1.0 - math.exp(-a2 * span_km)) / a2

    def psd_per_span(self, psd_w_per_hz: float, span_km: float) -> float:
        """NLI power spectral density (W/Hz) generated in one span."""
        beta2 = abs(self.beta2_ps2_per_km) * 1e-24  # s^2/km
        la = 1.0 / (2.0 * self.alpha_field_np_per_km)
        leff = self.effective_length_km(span_km)
        return (
            8.0 / 27.0 * self.gamma_per_w_km**2 * psd_w_per_hz**3 * leff**2
            * math.asinh(math.pi**2 / 2.0 * beta2 * la * self.bandwidth_hz**2)
            / (math.pi * beta2 * la)
        )


def nli_power_central(launch: LaunchProfile, params: NliParams, n_spans: int, span_km: float) -> float:
    if n_spans < 0:
        raise UsageError("span count must be non-negative")
    grid = params.grid
    psd = launch.power_w[grid.center_index] / grid.spacing_hz
    return n_spans * params.psd_per_span(psd, span_km) * grid.spacing_hz


def snr_per_channel(state: ChannelState, nli_w: float) -> tuple[np.ndarray, np.ndarray]:
    noise = state.ase + nli_w
    if np.any(noise <= 0):
        raise ZeroDivisionError("zero noise power: no amplifier noise and no NLI")
    snr = state.signal / noise
    return snr, 10.0 * np.log10(snr)


def capacity_tbps(snr_lin, grid: ChannelGrid = C_BAND) -> float:
    """Dual-polarization Shannon capacity summed over channels, Tb/s."""
    snr_lin = np.asarray(snr_lin)
    if np.any(snr_lin < 0):
        raise UsageError("SNR must be non-negative")
    return float(np.sum(2.0 * grid.spacing_hz * np.log2(1.0 + snr_lin)) / 1e12)


@dataclass
class SnrReport:
    snr_db: np.ndarray
    signal_w: np.ndarray
    ase_w: np.ndarray
    nli_w: float
    capacity_tbps: float
    metadata: dict = field(default_factory=dict)
    grid: ChannelGrid = field(default=C_BAND, repr=False)

    def recomputed_capacity(self) -> float:
        return capacity_tbps(10.0 ** (self.snr_db / 10.0), self.grid)

    def to_dict(self) -> dict:
        freqs = self.grid.frequencies_hz / 1e12
        rows = [
            {
                "channel": i,
                "freq_thz": float(freqs[i]),
                "signal_dbm": float(w_to_dbm(self.signal_w[i])),
                "ase_dbm": float(w_to_dbm(self.ase_w[i])),
                "snr_db": float(self.snr_db[i]),
            }
            for i in range(len(self.snr_db))
        ]
        meta = dict(self.metadata, capacity_tbps=self.capacity_tbps, nli_w=self.nli_w)
        return {"metadata": meta, "channels": rows}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def evaluate(
    launch: LaunchProfile,
    design: LinkDesign,
    model: edfa.SurrogateModel,
    nf_db: float,
    params: NliParams | None = None,
    mode: str = "explicit",
    runner: PatternRunner | None = None,
) -> SnrReport:
    """Propagate ``launch`` over the whole link and report per-channel SNR and capacity."""
    params = params or NliParams()
    state = propagate_full(launch, design, model, nf_db, mode=mode, grid=params.grid, runner=runner)
    nli = nli_power_central(launch, params, design.spans, design.span_km)
    snr, snr_db = snr_per_channel(state, nli)
    meta = dict(design.summary(), nf_db=nf_db, top_dbm=launch.top_dbm, mode=mode,
                launch_excursion_db=launch.excursion_db)
    return SnrReport(snr_db, state.signal, state.ase, nli, capacity_tbps(snr, params.grid), meta, params.grid)


@dataclass
class Calibration:
    nf_db: float
    capacity_tbps: float
    target_tbps: float
    iterations: int
    nli_fraction_18dbm: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def nli_noise_fraction(model, nf_db: float, top_dbm: float = 18.0, params: NliParams | None = None) -> float:
    """NLI share of total noise at the central channel, conventional link, flat launch."""
    params = params or NliParams()
    rep = evaluate(LaunchProfile.flat(top_dbm, params.grid), design_link(1), model, nf_db, params)
    c = params.grid.center_index
    return rep.nli_w / (rep.ase_w[c] + rep.nli_w)


def calibrate_noise_figure(
    model: edfa.SurrogateModel,
    target_tbps: float = CONVENTIONAL_CAPACITY_TBPS,
    bracket: tuple[float, float] = NF_BRACKET_DB,
    tol_tbps: float = 0.05,
    params: NliParams | None = None,
    top_dbm: float = CALIBRATION_TOP_DBM,
    max_iter: int = 60,
) -> Calibration:
    """Bisect the amplifier noise figure so the conventional link carries ``target_tbps``.

    Capacity falls monotonically with noise figure. Raises CalibrationError
    if the target is not bracketed.
    """
    params = params or NliParams()
    design = design_link(1)
    launch = LaunchProfile.flat(top_dbm, params.grid)

    def cap(nf):
        return evaluate(launch, design, model, nf, params).capacity_tbps

    lo, hi = bracket
    c_lo, c_hi = cap(lo), cap(hi)
    if not (c_hi - tol_tbps <= target_tbps <= c_lo + tol_tbps):
        raise CalibrationError(
            f"target {target_tbps} Tb/s outside bracket: {c_lo:.3f} Tb/s at {lo} dB, {c_hi:.3f} Tb/s at {hi} dB"
        )
    it = 0
    nf, c = (lo, c_lo) if abs(c_lo - target_tbps) < abs(c_hi - target_tbps) else (hi, c_hi)
    while abs(c - target_tbps) > tol_tbps and it < max_iter:
        it += 1
        nf = 0.5 * (lo + hi)
        c = cap(nf)
        if c > target_tbps:
            lo = nf
        else:
            hi = nf
    frac = nli_noise_fraction(model, nf, 18.0, params)
    if frac >= 0.1:
        log.warning("NLI is %.1f%% of total noise at 18 dBm TOP: not in the linear regime", 100 * frac)
    else:
        log.info("NLI is %.1f%% of total noise at 18 dBm TOP", 100 * frac)
    return Calibration(nf, c, target_tbps, it, frac)
