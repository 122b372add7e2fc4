"""Reconstruction and spectral metrics: SNR_r, oversampling factor, SINAD,
Welch PSD and noise-floor comparison.

Fixed estimator settings, so results are reproducible:

* PSD: Welch average, Hann window, 4096-sample segments, 50 % overlap, no
  detrending, one-sided density in V^2/Hz (white noise of variance s^2 sits
  at 2 s^2 / f_s).
* SINAD: Kaiser window (beta = 38) over the whole record. The fundamental is
  the window main lobe around the peak bin plus two bins either side; the DC
  lobe is excluded; everything else is noise and distortion.
"""
import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import signal as sps

# reserved value for a perfect reconstruction; written to CSV as "inf"
SNR_INF = math.inf

PSD_WINDOW = "hann"
PSD_SEGMENT = 4096
PSD_OVERLAP = 0.5

SINAD_KAISER_BETA = 38.0
SINAD_GUARD_BINS = 2


@dataclass(frozen=True)
class MetricsReport:
    snr_r: float
    of: float
    sinad: Optional[float] = None
    psd: Optional[tuple] = None  # (freqs Hz, dB/Hz)


def snr_r(g, g_tilde, skip_boundary=0):
    """10 log10(sum g^2 / sum (g - g_tilde)^2) over the interior window, dB."""
    g = np.asarray(g, dtype=float)
    g_tilde = np.asarray(g_tilde, dtype=float)
    if g.shape != g_tilde.shape:
        raise ValueError("g and g_tilde must have equal lengths")
    n = g.size
    if n - 2 * skip_boundary < 1:
        raise ValueError("skip_boundary leaves no samples")
    sl = slice(skip_boundary, n - skip_boundary)
    p_sig = np.sum(g[sl] ** 2)
    p_err = np.sum((g[sl] - g_tilde[sl]) ** 2)
    if p_err == 0:
        return SNR_INF  # exact match, including an all-zero signal
    if p_sig == 0:
        raise ValueError("zero-energy reference signal with nonzero error")
    return float(10.0 * np.log10(p_sig / p_err))


def oversampling_factor(f_s, f_nyq):
    """f_s / f_nyq with f_nyq twice the highest signal frequency."""
    if not (f_s > 0 and f_nyq > 0):
        raise ValueError("f_s and f_nyq must be > 0")
    return f_s / f_nyq


def _kaiser_lobe_bins(beta):
    # first null of the Kaiser window transform, in bins
    return int(math.ceil(math.sqrt(1.0 + (beta / math.pi) ** 2)))


def sinad(samples, f_s, f0):
    """Signal to noise-and-distortion ratio of a tone at ``f0``, dB."""
    x = np.asarray(samples, dtype=float)
    if f0 >= f_s / 2:
        raise ValueError("f0 must be below f_s/2")
    if x.size * f0 / f_s < 10:
        raise ValueError("record must hold at least 10 periods of f0")
    w = np.kaiser(x.size, SINAD_KAISER_BETA)
    p = np.abs(np.fft.rfft(x * w)) ** 2
    lobe = _kaiser_lobe_bins(SINAD_KAISER_BETA) + SINAD_GUARD_BINS
    k_nom = int(round(f0 * x.size / f_s))
    lo = max(k_nom - lobe, lobe + 1)
    hi = min(k_nom + lobe, p.size - 1)
    k0 = lo + int(np.argmax(p[lo:hi + 1]))
    fund = slice(max(k0 - lobe, 0), k0 + lobe + 1)
    mask = np.ones(p.size, dtype=bool)
    mask[: lobe + 1] = False  # DC
    mask[fund] = False
    p_fund = np.sum(p[fund])
    p_rest = np.sum(p[mask])
    if p_rest == 0:
        return SNR_INF
    return float(10.0 * np.log10(p_fund / p_rest))


def psd(samples, f_s, segment_len=PSD_SEGMENT, overlap=PSD_OVERLAP, window=PSD_WINDOW):
    """Welch PSD; returns ``(freqs, dB/Hz)`` with density in V^2/Hz."""
    x = np.asarray(samples, dtype=float)
    if segment_len > x.size:
        raise ValueError(f"segment_len {segment_len} exceeds record length {x.size}")
    f, p = sps.welch(x, fs=f_s, window=window, nperseg=segment_len,
                     noverlap=int(segment_len * overlap), detrend=False,
                     return_onesided=True, scaling="density")
    return f, 10.0 * np.log10(np.maximum(p, 1e-300))


def psd_power(freqs, psd_db):
    """Total power of a one-sided PSD (rectangle rule)."""
    df = freqs[1] - freqs[0]
    return float(np.sum(10.0 ** (np.asarray(psd_db) / 10.0)) * df)


def _band_levels(freqs, psd_db, band, exclude):
    f = np.asarray(freqs)
    sel = (f >= band[0]) & (f <= band[1]) & ~exclude(f)
    if not np.any(sel):
        raise ValueError(f"band {band} holds no usable bins")
    return np.asarray(psd_db)[sel]


def noise_floor_delta(psd_a, psd_b, band, f0=None, guard_bins=3):
    """Median PSD level of ``a`` minus that of ``b`` over ``band`` (Hz), dB.

    With ``f0`` given, bins within ``guard_bins`` of any harmonic of ``f0``
    are left out of both medians.
    """
    (fa, pa), (fb, pb) = psd_a, psd_b
    if band[1] <= band[0]:
        raise ValueError("empty band")

    def exclude(f):
        if f0 is None:
            return np.zeros(f.shape, dtype=bool)
        df = f[1] - f[0] if f.size > 1 else 1.0
        h = np.round(f / f0)
        return (h >= 1) & (np.abs(f - h * f0) <= guard_bins * df)

    return float(np.median(_band_levels(fa, pa, band, exclude)) - np.median(_band_levels(fb, pb, band, exclude)))


def _fmt_db(x):
    return "inf" if x == math.inf else ("-inf" if x == -math.inf else f"{x:.2f}")


def write_psd_csv(freqs, psd_db, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("frequency_hz", "psd_db_per_hz"))
        for f, p in zip(freqs, psd_db):
            w.writerow((format(float(f), ".17g"), format(float(p), ".17g")))


def write_metrics_csv(report, path, extra=()):
    """One-row metrics table; dB to 2 decimals, ``inf`` for a perfect match."""
    rows = [("snr_r_db", _fmt_db(report.snr_r)), ("of", f"{report.of:.2f}")]
    if report.sinad is not None:
        rows.append(("sinad_db", _fmt_db(report.sinad)))
    rows.extend(extra)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("metric", "value"))
        w.writerows(rows)
