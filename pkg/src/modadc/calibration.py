"""Controlled under-compensation of the fold feedback.

The hardware fold step ``G_total * 2**q * V_LSB`` is set slightly below the
ideal ``2 * lambda``. Left alone, the shortfall ``delta_V`` accumulates with
every fold; the digital correction ``(C_f - 1) * delta_V`` leaves a constant
``delta_V`` offset instead.

Negative fold counts use odd symmetry, ``v(-C_f) = -v(C_f)``.
"""
import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CalibrationParams:
    lam: float
    G_total: float
    q: int
    V_LSB: float
    delta_V: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "delta_V", delta_v(self))

    @property
    def step(self):
        """Hardware fold step in volts."""
        return self.G_total * (1 << self.q) * self.V_LSB

    @classmethod
    def from_step(cls, lam, step, q=0, V_LSB=1.0):
        """Params whose hardware fold step equals ``step`` volts."""
        return cls(lam, step / ((1 << q) * V_LSB), q, V_LSB)


def delta_v(p):
    """Shortfall ``2*lambda - G_total * 2**q * V_LSB``; over-compensation is rejected."""
    dv = 2.0 * p.lam - p.G_total * (1 << p.q) * p.V_LSB
    # tolerate round-off when the step is meant to be exactly 2*lambda
    if dv < 0:
        if dv > -1e-12 * p.lam:
            return 0.0
        raise ValueError(f"over-compensation: fold step exceeds 2*lambda by {-dv:.6g} V")
    return dv


def ideal_feedback(c_f, p):
    return 2.0 * p.lam * np.asarray(c_f, dtype=float)


def raw_feedback(c_f, p):
    """Uncalibrated feedback ``C_f * G_total * 2**q * V_LSB``."""
    return np.asarray(c_f, dtype=float) * p.step


def calibrated_feedback(c_f, p):
    """``v_raw + (C_f - 1) * delta_V`` for C_f >= 1, odd-symmetric, 0 at C_f = 0."""
    c = np.asarray(c_f)
    mag = np.abs(c).astype(float)
    v = mag * p.step + np.maximum(mag - 1.0, 0.0) * p.delta_V
    out = np.sign(c) * v
    return float(out) if out.ndim == 0 else out


def deviation(c_f, delta_V):
    """Gap between ideal and raw feedback, ``C_f * delta_V``."""
    return np.asarray(c_f, dtype=float) * delta_V


def calibration_table(p, c_f_values=range(1, 11)):
    """Rows ``(C_f, ideal, raw, calibrated)`` in volts."""
    rows = []
    for c in c_f_values:
        rows.append((int(c), float(ideal_feedback(c, p)), float(raw_feedback(c, p)), float(calibrated_feedback(c, p))))
    return rows


TABLE_COLUMNS = ("C_f", "ideal_V", "raw_V", "calibrated_V")


def write_table_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for c, *v in rows:
            w.writerow((c, *(format(x, ".17g") for x in v)))
