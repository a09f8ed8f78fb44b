"""Pure-NumPy reference kernels. Signatures mirror the compiled ``_kernels`` module."""

import numpy as np


def mlp_forward(W1, b1, W2, b2, x, out):
    """out <- W2 @ relu(W1 @ x + b1) + b2."""
    h = W1 @ x
    h += b1
    np.maximum(h, 0.0, out=h)
    np.dot(W2, h, out=out)
    out += b2


def amplifier_chain(signal, ase, W1, b1, W2, b2, in_mean, in_std, out_mean,
                    current_ma, span_factors, ase_coef, gains_out, totals_out):
    """Run ``len(span_factors)`` surrogate-driven amplifiers, each followed by a
    linear transmission factor, updating ``signal`` and ``ase`` (W) in place.

    Records every amplifier's per-channel gain (dB) in ``gains_out`` and its
    total input power (dBm) in ``totals_out``.
    """
    n = signal.shape[0]
    x = np.empty(n + 1)
    x[n] = current_ma
    g = np.empty(W2.shape[0])
    for k in range(span_factors.shape[0]):
        p_mw = (signal + ase) * 1e3
        x[:n] = 10.0 * np.log10(p_mw)
        totals_out[k] = 10.0 * np.log10(p_mw.sum())
        mlp_forward(W1, b1, W2, b2, (x - in_mean) / in_std, g)
        g += out_mean
        gains_out[k] = g
        lin = 10.0 ** (g / 10.0)
        signal *= lin
        ase *= lin
        ase += ase_coef * (lin - 1.0)
        signal *= span_factors[k]
        ase *= span_factors[k]
