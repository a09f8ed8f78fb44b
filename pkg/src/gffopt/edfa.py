"""EDFA gain: synthetic ground-truth oracle, training data and the neural surrogate.

The oracle is a smooth closed-form stand-in for a measured amplifier. Its gain
depends on the drive current and on total input power (through a linear
compression term above 3 dBm); the spectral shape comes from two Gaussian
humps plus a sinusoidal ripple.
"""

from __future__ import annotations

import csv
import functools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import nn
from .exceptions import ShapeError, UsageError
from .grid import C_BAND, ChannelGrid, total_dbm

log = logging.getLogger(__name__)

CURRENT_RANGE_MA = (100.0, 800.0)
NOMINAL_CURRENT_MA = 500.0
NOMINAL_GAIN_DB = 10.0
# Flat per-channel amplifier input at which the oracle delivers 10 dB mean gain:
# -2.5 dBm/ch at the output (17 dBm TOP) minus the 10 dB nominal gain.
REFERENCE_INPUT_DBM = -12.5
COMPRESSION_DB_PER_DB = 0.25
COMPRESSION_KNEE_DBM = 3.0

TOTAL_POWER_RANGE_DBM = (0.0, 11.5)
MAX_RIPPLE_DB = 6.0
DEFAULT_ROWS = 6516


def base_shape_db(wavelength_nm):
    lam = np.asarray(wavelength_nm)
    return (
        9.0
        + 2.2 * np.exp(-(((lam - 1531.0) / 3.0) ** 2))
        + 1.2 * np.exp(-(((lam - 1558.0) / 8.0) ** 2))
    )


def ripple_db(wavelength_nm):
    return 0.4 * np.sin(2 * np.pi * (np.asarray(wavelength_nm) - 1530.0) / 7.3)


def current_factor(current_ma):
    return 0.7 + 0.3 * np.sqrt(np.asarray(current_ma, dtype=np.float64) / 500.0)


def _gain(pin_dbm, current_ma, grid, g_cal):
    lam = grid.wavelengths_nm
    shape = base_shape_db(lam) + ripple_db(lam) + g_cal
    kappa = np.asarray(current_factor(current_ma))[..., None]
    p_tot = total_dbm(pin_dbm)
    compression = COMPRESSION_DB_PER_DB * np.maximum(0.0, p_tot - COMPRESSION_KNEE_DBM)
    return shape * kappa - np.asarray(compression)[..., None]


@functools.lru_cache(maxsize=None)
def calibration_offset(grid: ChannelGrid = C_BAND) -> float:
    """Constant added to the spectral shape so the reference mean gain is 10 dB."""
    ref = np.full(grid.n_channels, REFERENCE_INPUT_DBM)

    def excess(g):
        return float(np.mean(_gain(ref, NOMINAL_CURRENT_MA, grid, g))) - NOMINAL_GAIN_DB

    return brentq(excess, -20.0, 20.0, xtol=1e-14, rtol=4 * np.finfo(float).eps)


def oracle_gain(pin_dbm, current_ma, grid: ChannelGrid = C_BAND) -> np.ndarray:
    """Per-channel gain (dB) of the reference amplifier.

    Accepts a single spectrum (89,) with a scalar current, or a batch (n, 89)
    with a length-n current array.
    """
    pin = np.asarray(pin_dbm, dtype=np.float64)
    if pin.shape[-1] != grid.n_channels:
        raise ShapeError(f"expected {grid.n_channels} channel powers, got {pin.shape[-1]}")
    cur = np.asarray(current_ma, dtype=np.float64)
    lo, hi = CURRENT_RANGE_MA
    if np.any(cur < lo) or np.any(cur > hi):
        raise UsageError(f"drive current must lie in [{lo:g}, {hi:g}] mA")
    return _gain(pin, cur, grid, calibration_offset(grid))


def smooth_shapes(rng: np.random.Generator, n: int, grid: ChannelGrid = C_BAND) -> np.ndarray:
    """``n`` random smooth spectral shapes (dB), each with zero minimum and p-p ripple in [0, 6] dB."""
    lam = grid.wavelengths_nm - grid.start_wavelength_nm
    ripple = rng.uniform(0.0, MAX_RIPPLE_DB, n)
    amp = rng.uniform(0.2, 1.0, (n, 3))
    period = rng.uniform(10.0, 80.0, (n, 3))
    phase = rng.uniform(0.0, 2 * np.pi, (n, 3))
    s = np.einsum(
        "rk,rkc->rc", amp, np.sin(2 * np.pi * lam[None, None, :] / period[..., None] + phase[..., None])
    )
    s -= s.min(axis=1, keepdims=True)
    span = s.max(axis=1, keepdims=True)
    return s / np.where(span > 0, span, 1.0) * ripple[:, None]


def set_total(shape_db, total_dbm_target):
    """Shift dB spectra so their total power equals ``total_dbm_target``."""
    shape_db = np.asarray(shape_db)
    return shape_db + (np.asarray(total_dbm_target) - total_dbm(shape_db))[..., None]


@dataclass
class GainDataset:
    pin_dbm: np.ndarray  # (n, 89)
    current_ma: np.ndarray  # (n,)
    gain_db: np.ndarray  # (n, 89)
    seed: int | None = None

    def __len__(self):
        return len(self.current_ma)

    @property
    def inputs(self) -> np.ndarray:
        return np.column_stack([self.pin_dbm, self.current_ma])

    def subset(self, idx) -> "GainDataset":
        return GainDataset(self.pin_dbm[idx], self.current_ma[idx], self.gain_db[idx], self.seed)

    def check(self, grid: ChannelGrid = C_BAND) -> dict:
        """Constraint summary: count of rows violating each bound."""
        tot = total_dbm(self.pin_dbm)
        lo, hi = TOTAL_POWER_RANGE_DBM
        ptp = np.ptp(self.pin_dbm, axis=1)
        clo, chi = CURRENT_RANGE_MA
        return {
            "rows": len(self),
            "total_power_violations": int(np.sum((tot < lo - 1e-9) | (tot > hi + 1e-9))),
            "ripple_violations": int(np.sum(ptp > MAX_RIPPLE_DB + 1e-9)),
            "current_violations": int(np.sum((self.current_ma < clo) | (self.current_ma > chi))),
        }


def generate_dataset(n: int = DEFAULT_ROWS, seed=0, grid: ChannelGrid = C_BAND) -> GainDataset:
    if n < 1:
        raise UsageError("dataset needs at least one row")
    rng = np.random.default_rng(seed)
    total = rng.uniform(*TOTAL_POWER_RANGE_DBM, n)
    pin = set_total(smooth_shapes(rng, n, grid), total)
    current = rng.uniform(*CURRENT_RANGE_MA, n)
    return GainDataset(pin, current, oracle_gain(pin, current, grid), seed)


def write_dataset_csv(ds: GainDataset, path, header_comment: str | None = None) -> None:
    n_ch = ds.pin_dbm.shape[1]
    cols = ["current_mA"] + [f"pin_{i}" for i in range(n_ch)] + [f"gain_{i}" for i in range(n_ch)]
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for cur, pin, g in zip(ds.current_ma, ds.pin_dbm, ds.gain_db):
            w.writerow([f"{v:.9g}" for v in (cur, *pin, *g)])


def read_dataset_csv(path) -> GainDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    header, body = rows[0], np.array(rows[1:], dtype=np.float64)
    n_ch = (len(header) - 1) // 2
    if header[0] != "current_mA" or len(header) != 2 * n_ch + 1:
        raise UsageError(f"{path}: not a gain dataset")
    return GainDataset(body[:, 1 : 1 + n_ch], body[:, 0], body[:, 1 + n_ch :])


@dataclass
class SurrogateModel:
    net: nn.DenseNetwork
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    rmse_db: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = nn.network_to_dict(self.net)
        doc["normalization"] = {
            "input_mean": self.in_mean.tolist(),
            "input_std": self.in_std.tolist(),
            "output_mean": self.out_mean.tolist(),
        }
        doc["rmse_db"] = self.rmse_db
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SurrogateModel":
        norm = doc["normalization"]
        return cls(
            nn.network_from_dict(doc),
            np.array(norm["input_mean"]),
            np.array(norm["input_std"]),
            np.array(norm["output_mean"]),
            doc.get("rmse_db", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SurrogateModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def in_envelope(pin_dbm) -> np.ndarray:
    tot = total_dbm(pin_dbm)
    lo, hi = TOTAL_POWER_RANGE_DBM
    return (tot >= lo) & (tot <= hi)


def warn_outside_envelope(pin_dbm) -> None:
    inside = in_envelope(pin_dbm)
    if not np.all(inside):
        tot = np.atleast_1d(total_dbm(pin_dbm))[~np.atleast_1d(inside)]
        log.warning(
            "surrogate queried outside its training envelope (%d input(s), total %.2f..%.2f dBm)",
            tot.size, tot.min(), tot.max(),
        )


def predict_gain(model: SurrogateModel, pin_dbm, current_ma=NOMINAL_CURRENT_MA) -> np.ndarray:
    pin = np.asarray(pin_dbm, dtype=np.float64)
    warn_outside_envelope(pin)
    cur = np.broadcast_to(np.asarray(current_ma, dtype=np.float64), pin.shape[:-1])
    x = (np.concatenate([pin, cur[..., None]], axis=-1) - model.in_mean) / model.in_std
    return nn.forward(model.net, x) + model.out_mean


def rmse(model: SurrogateModel, ds: GainDataset) -> float:
    err = predict_gain(model, ds.pin_dbm, ds.current_ma) - ds.gain_db
    return float(np.sqrt(np.mean(err**2)))


def train_surrogate(
    ds: GainDataset,
    split: float = 0.8,
    seed=0,
    hidden: int = 100,
    epochs: int = 60,
    lr: float = 3e-3,
    lr_decay: float = 0.95,
    batch_size: int = 32,
    min_rows: int = 100,
) -> tuple[SurrogateModel, float]:
    """Fit the 90-100-89 gain surrogate; return it with the held-out RMSE (dB).

    Inputs are standardized with train-split statistics, targets are centered
    per channel so the loss stays an MSE in dB.
    """
    if len(ds) < min_rows:
        raise UsageError(f"need at least {min_rows} rows to train, got {len(ds)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    n_train = int(round(split * len(ds)))
    train, test = ds.subset(order[:n_train]), ds.subset(order[n_train:])

    x = train.inputs
    in_mean, in_std = x.mean(axis=0), x.std(axis=0)
    if np.any(in_std == 0):
        raise UsageError("degenerate dataset: some input column has zero variance")
    out_mean = train.gain_db.mean(axis=0)

    net = nn.DenseNetwork.init([x.shape[1], hidden, ds.gain_db.shape[1]], ["relu", "identity"], seed=rng)
    nn.train_regression(
        net, (x - in_mean) / in_std, train.gain_db - out_mean,
        epochs=epochs, batch_size=batch_size, seed=rng, lr=lr, lr_decay=lr_decay,
    )
    model = SurrogateModel(net, in_mean, in_std, out_mean)
    model.rmse_db["train"] = rmse(model, train)
    held_out = rmse(model, test) if len(test) else float("nan")
    model.rmse_db["test"] = held_out
    return model, held_out


def constant_gain_model(gain_db, grid: ChannelGrid = C_BAND, hidden: int = 4) -> SurrogateModel:
    """A surrogate that returns ``gain_db`` (scalar or per-channel) for any input. Test stub."""
    n = grid.n_channels
    layers = [
        nn.Layer(np.zeros((hidden, n + 1)), np.zeros(hidden), "relu"),
        nn.Layer(np.zeros((n, hidden)), np.zeros(n), "identity"),
    ]
    return SurrogateModel(
        nn.DenseNetwork(layers), np.zeros(n + 1), np.ones(n + 1),
        np.broadcast_to(np.asarray(gain_db, dtype=np.float64), (n,)).copy(),
    )
