"""Ideal modulo algebra: folding, fold counts, residuals and the dynamic-range factor.

Every other module uses these functions as the ground-truth oracle. All of
them accept scalars or numpy arrays.
"""
import numpy as np

# relative tolerance for "is a multiple of 2*lambda" checks
GRID_RTOL = 1e-9


def _check_lambda(lam):
    lam = np.asarray(lam, dtype=float)
    if not np.all(np.isfinite(lam) & (lam > 0)):
        raise ValueError(f"lambda must be finite and > 0, got {lam!r}")


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")


def fold_count(x, lam):
    """Number of 2*lambda folds: floor((x + lambda) / (2 * lambda)).

    Returns a Python int for scalar input and an int64 array otherwise.
    """
    _check_lambda(lam)
    _check_finite(x)
    k = np.floor((np.asarray(x, dtype=float) + lam) / (2.0 * lam))
    # x - 2*lam*k can round to exactly +lam; push it into [-lam, lam)
    xf = np.asarray(x, dtype=float)
    r = xf - 2.0 * lam * k
    k = k + (r >= lam) - (r < -lam)
    # on a boundary neither count may land inside; take the -lam side
    k = k + (xf - 2.0 * lam * k >= lam)
    k = k.astype(np.int64)
    if k.ndim == 0:
        return int(k)
    return k


def modulo_fold(x, lam):
    """Fold ``x`` into the half-open interval [-lambda, lambda).

    ``modulo_fold(lam, lam)`` is ``-lam``.
    """
    k = fold_count(x, lam)
    r = np.asarray(x, dtype=float) - 2.0 * lam * np.asarray(k, dtype=float)
    # boundary round-off leaves r an ulp below -lam
    r = np.maximum(r, -np.asarray(lam, dtype=float))
    if r.ndim == 0:
        return float(r)
    return r


def residual(g, lam):
    """Residual sequence eps = g - modulo_fold(g), a multiple of 2*lambda per sample."""
    k = np.atleast_1d(fold_count(np.asarray(g, dtype=float), lam))
    return ResidualSequence(2.0 * lam * k.astype(float), lam)


def rho(amplitude_bound, lam):
    """Dynamic-range expansion factor ||g||_inf / lambda."""
    _check_lambda(lam)
    if not amplitude_bound > 0:
        raise ValueError(f"amplitude_bound must be > 0, got {amplitude_bound!r}")
    return amplitude_bound / lam


def on_grid(values, lam, rtol=GRID_RTOL):
    """True where ``values`` is an integer multiple of 2*lambda within ``rtol * lambda``."""
    v = np.asarray(values, dtype=float) / (2.0 * lam)
    return np.abs(v - np.round(v)) * 2.0 * lam <= rtol * lam


class ResidualSequence:
    """Residual samples, each an integer multiple of ``2 * lam``."""

    __slots__ = ("values", "lam")

    def __init__(self, values, lam):
        _check_lambda(lam)
        values = np.asarray(values, dtype=float)
        if not np.all(on_grid(values, lam)):
            raise ValueError("residual values must lie on the 2*lambda grid")
        self.values = values
        self.lam = float(lam)

    @property
    def counts(self):
        return np.round(self.values / (2.0 * self.lam)).astype(np.int64)

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __repr__(self):
        return f"ResidualSequence(n={len(self)}, lam={self.lam})"


__all__ = [
    "fold_count",
    "modulo_fold",
    "residual",
    "rho",
    "on_grid",
    "ResidualSequence",
    "GRID_RTOL",
]
