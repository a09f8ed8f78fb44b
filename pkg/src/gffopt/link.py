"""Submarine link topology and per-channel signal/ASE cascade.

A pattern is ``f`` amplifiers with a fibre span after each of the first
``f - 1`` and a gain-flattening filter (GFF) after the last, with no fibre
between the GFF and the next amplifier. ``f = 1`` is the conventional layout:
amplifier, 53.7 km span, GFF.

Launch profiles are quoted at the amplifier output (the fibre launch, where
TOP is defined). Pattern boundaries sit at the amplifier input, a nominal
``REFERENCE_GAIN_DB`` lower; states returned by the propagation functions are
referred back to the launch plane, so pattern output totals equal the launch.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import edfa, kernels
from .exceptions import GFFInfeasibleError, UsageError
from .grid import C_BAND, PLANCK, ChannelGrid, dbm_to_w, total_dbm, w_to_dbm

ALPHA_DB_PER_KM = 0.1595
SPAN_KM_GFFLESS = 62.7
SPAN_KM_CONVENTIONAL = 53.7
TARGET_KM = 13_400.0
REFERENCE_GAIN_DB = edfa.NOMINAL_GAIN_DB


@dataclass(frozen=True)
class FibreSpec:
    length_km: float
    alpha_db_per_km: float = ALPHA_DB_PER_KM

    def __post_init__(self):
        if self.alpha_db_per_km <= 0:
            raise UsageError("fibre attenuation must be positive")
        if self.length_km < 0:
            raise UsageError("span length must be non-negative")

    @property
    def loss_db(self) -> float:
        return self.alpha_db_per_km * self.length_km

    @property
    def transmission(self) -> float:
        return 10.0 ** (-self.loss_db / 10.0)


@dataclass(frozen=True)
class LinkDesign:
    gff_frequency: int
    patterns: int
    span_km: float
    target_km: float = TARGET_KM
    alpha_db_per_km: float = ALPHA_DB_PER_KM

    @property
    def conventional(self) -> bool:
        return self.gff_frequency == 1

    @property
    def spans_per_pattern(self) -> int:
        return 1 if self.conventional else self.gff_frequency - 1

    @property
    def amplifiers(self) -> int:
        return self.patterns * self.gff_frequency

    @property
    def gffs(self) -> int:
        return self.patterns

    @property
    def spans(self) -> int:
        return self.patterns * self.spans_per_pattern

    @property
    def total_km(self) -> float:
        return self.spans * self.span_km

    @property
    def fibre(self) -> FibreSpec:
        return FibreSpec(self.span_km, self.alpha_db_per_km)

    def with_patterns(self, m: int) -> "LinkDesign":
        return replace(self, patterns=m)

    def summary(self) -> dict:
        return {
            "gff_frequency": self.gff_frequency,
            "patterns": self.patterns,
            "amplifiers": self.amplifiers,
            "gffs": self.gffs,
            "spans": self.spans,
            "span_km": self.span_km,
            "distance_km": round(self.total_km, 6),
        }


def design_link(
    f: int,
    target_km: float = TARGET_KM,
    span_km_gffless: float = SPAN_KM_GFFLESS,
    span_km_conventional: float = SPAN_KM_CONVENTIONAL,
    alpha_db_per_km: float = ALPHA_DB_PER_KM,
) -> LinkDesign:
    if int(f) != f or f < 1:
        raise UsageError(f"GFF frequency must be an integer >= 1, got {f!r}")
    f = int(f)
    span = span_km_conventional if f == 1 else span_km_gffless
    per_pattern_km = span * (1 if f == 1 else f - 1)
    # round before ceil so 13400/53.7-style ratios are not nudged up by float noise
    m = math.ceil(round(target_km / per_pattern_km, 9))
    return LinkDesign(f, m, span, target_km, alpha_db_per_km)


def write_link_description(design: LinkDesign, nf_db, path) -> None:
    doc = {
        "gff_frequency": design.gff_frequency,
        "target_km": design.target_km,
        "span_km_gffless": design.span_km if not design.conventional else SPAN_KM_GFFLESS,
        "span_km_conventional": design.span_km if design.conventional else SPAN_KM_CONVENTIONAL,
        "alpha_db_per_km": design.alpha_db_per_km,
        "nf_db": nf_db,
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def read_link_description(path) -> tuple[LinkDesign, float | str | None]:
    doc = json.loads(Path(path).read_text())
    design = design_link(
        doc["gff_frequency"],
        doc.get("target_km", TARGET_KM),
        doc.get("span_km_gffless", SPAN_KM_GFFLESS),
        doc.get("span_km_conventional", SPAN_KM_CONVENTIONAL),
        doc.get("alpha_db_per_km", ALPHA_DB_PER_KM),
    )
    return design, doc.get("nf_db")


@dataclass
class LaunchProfile:
    power_dbm: np.ndarray

    def __post_init__(self):
        self.power_dbm = np.asarray(self.power_dbm, dtype=np.float64)
        if not np.all(np.isfinite(self.power_dbm)):
            raise UsageError("launch powers must be finite")

    @property
    def top_dbm(self) -> float:
        return float(total_dbm(self.power_dbm))

    @property
    def power_w(self) -> np.ndarray:
        return dbm_to_w(self.power_dbm)

    @property
    def excursion_db(self) -> float:
        return float(np.ptp(self.power_dbm))

    @classmethod
    def flat(cls, top_dbm: float, grid: ChannelGrid = C_BAND) -> "LaunchProfile":
        return cls(np.full(grid.n_channels, top_dbm - 10.0 * np.log10(grid.n_channels)))


@dataclass
class ChannelState:
    signal: np.ndarray  # W
    ase: np.ndarray  # W, within the channel bandwidth
    distance_km: float = 0.0
    amplifiers: int = 0
    gains_db: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def launch(cls, profile: LaunchProfile) -> "ChannelState":
        return cls(profile.power_w, np.zeros_like(profile.power_dbm))

    @property
    def total(self) -> np.ndarray:
        return self.signal + self.ase

    def scaled(self, factor) -> "ChannelState":
        return replace(self, signal=self.signal * factor, ase=self.ase * factor)


def propagate_span(state: ChannelState, fibre: FibreSpec) -> ChannelState:
    out = state.scaled(fibre.transmission)
    out.distance_km = state.distance_km + fibre.length_km
    return out


def ase_coefficient(nf_db: float, grid: ChannelGrid = C_BAND) -> np.ndarray:
    """Per-channel ASE power per unit of (G - 1), in W."""
    return 10.0 ** (nf_db / 10.0) / 2.0 * PLANCK * grid.frequencies_hz * grid.spacing_hz


def apply_edfa(
    state: ChannelState,
    model: edfa.SurrogateModel,
    current_ma: float = edfa.NOMINAL_CURRENT_MA,
    nf_db: float = 5.0,
    grid: ChannelGrid = C_BAND,
) -> ChannelState:
    """Amplify with the surrogate gain evaluated on total (signal + ASE) input power."""
    g_db = edfa.predict_gain(model, w_to_dbm(state.total), current_ma)
    g = 10.0 ** (g_db / 10.0)
    return replace(
        state,
        signal=state.signal * g,
        ase=state.ase * g + ase_coefficient(nf_db, grid) * (g - 1.0),
        amplifiers=state.amplifiers + 1,
        gains_db=g_db,
    )


def apply_gff(state: ChannelState, target_w) -> ChannelState:
    """Attenuate each channel so that signal + ASE equals ``target_w``."""
    target_w = np.asarray(target_w)
    total = state.total
    short = total < target_w * (1.0 - 1e-12)
    if np.any(short):
        shortfall = 10.0 * np.log10(target_w / total)
        worst = int(np.argmax(shortfall))
        raise GFFInfeasibleError(worst, float(shortfall[worst]))
    return state.scaled(target_w / total)


def _net_arrays(model: edfa.SurrogateModel):
    l1, l2 = model.net.layers
    if l1.activation != "relu" or l2.activation != "identity":
        raise UsageError("cascade kernel expects a relu -> identity surrogate")
    c = np.ascontiguousarray
    return (c(l1.weights), c(l1.biases), c(l2.weights), c(l2.biases),
            c(model.in_mean), c(model.in_std), c(model.out_mean))


def _span_factors(design: LinkDesign) -> np.ndarray:
    t = design.fibre.transmission
    if design.conventional:
        return np.array([t])
    return np.array([t] * (design.gff_frequency - 1) + [1.0])


@dataclass
class PatternRunner:
    """Precomputed arrays for running one pattern many times through the kernel."""

    design: LinkDesign
    model: edfa.SurrogateModel
    nf_db: float
    current_ma: float = edfa.NOMINAL_CURRENT_MA
    grid: ChannelGrid = C_BAND

    def __post_init__(self):
        self._net = _net_arrays(self.model)
        self._spans = _span_factors(self.design)
        self._ase_coef = ase_coefficient(self.nf_db, self.grid)
        self._ref = 10.0 ** (-REFERENCE_GAIN_DB / 10.0)
        self.envelope_violations = 0  # runs that queried the surrogate outside its training range

    def run(self, state: ChannelState, launch_w: np.ndarray) -> ChannelState:
        n_amp = len(self._spans)
        sig = state.signal * self._ref
        ase = state.ase * self._ref
        gains = np.empty((n_amp, self.grid.n_channels))
        totals = np.empty(n_amp)
        kernels.amplifier_chain(
            sig, ase, *self._net, float(self.current_ma), self._spans, self._ase_coef, gains, totals
        )
        lo, hi = edfa.TOTAL_POWER_RANGE_DBM
        if totals.min() < lo or totals.max() > hi:
            self.envelope_violations += 1
            # one warning per runner; the count is kept for callers that want it
            level = logging.WARNING if self.envelope_violations == 1 else logging.DEBUG
            edfa.log.log(
                level,
                "surrogate queried outside its training envelope (amplifier input %.2f..%.2f dBm)",
                totals.min(), totals.max(),
            )
        inner = apply_gff(ChannelState(sig, ase), launch_w * self._ref)
        return ChannelState(
            inner.signal / self._ref,
            inner.ase / self._ref,
            state.distance_km + self.design.spans_per_pattern * self.design.span_km,
            state.amplifiers + n_amp,
            gains,
        )


def propagate_pattern(launch: LaunchProfile, design: LinkDesign, model, nf_db: float,
                      current_ma: float = edfa.NOMINAL_CURRENT_MA,
                      grid: ChannelGrid = C_BAND) -> ChannelState:
    runner = PatternRunner(design, model, nf_db, current_ma, grid)
    return runner.run(ChannelState.launch(launch), launch.power_w)


def propagate_full(launch: LaunchProfile, design: LinkDesign, model, nf_db: float,
                   mode: str = "explicit", current_ma: float = edfa.NOMINAL_CURRENT_MA,
                   grid: ChannelGrid = C_BAND, runner: PatternRunner | None = None) -> ChannelState:
    """Propagate through all ``design.patterns`` patterns.

    ``explicit`` runs every pattern. ``extrapolated`` runs one: each pattern
    sees the same input totals, so it maps the signal by a fixed per-channel
    factor ``rho`` and the end-of-link signal is ``launch * rho**M``, with ASE
    filling the remainder of the launch total.
    """
    if runner is None:
        runner = PatternRunner(design, model, nf_db, current_ma, grid)
    launch_w = launch.power_w
    state = ChannelState.launch(launch)
    m = design.patterns
    if mode == "explicit":
        for _ in range(m):
            state = runner.run(state, launch_w)
        return state
    if mode != "extrapolated":
        raise UsageError(f"unknown propagation mode {mode!r}")
    one = runner.run(state, launch_w)
    signal = launch_w * (one.signal / launch_w) ** m
    return ChannelState(
        signal, launch_w - signal, m * one.distance_km, m * one.amplifiers, one.gains_db
    )
