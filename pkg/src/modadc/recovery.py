"""Recovery of unfolded samples from modulo samples.

Two families:

* direct recovery from the fold count recorded by the loop,
  ``g = y - 2*lambda*C_f``;
* blind single-channel unfolding from ``y`` alone: high-order differences
  (``usf``), second-order differences (``rsod``) and an iterative first-order
  baseline (``first_order_iter``).

Blind estimates work on integer fold counts, so every residual sample is an
exact multiple of 2*lambda. The integration constants left by
anti-differencing are fixed by assuming that each difference sequence of the
unfolded signal has mean close to zero, and the final one by a zero-mean
prior on ``g`` itself (a constant multiple of 2*lambda is not otherwise
identifiable).

Frequencies are in Hz. The sampling conditions translate the usual
rad/s bandwidth as ``2*pi*Omega``.

New algorithms plug in through :func:`register_algorithm`.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .modulo import fold_count

DIRECT = "direct"
USF = "usf"
RSOD = "rsod"
FIRST_ORDER_ITER = "first_order_iter"


class SamplingConditionError(ValueError):
    pass


@dataclass(frozen=True)
class RecoveryInput:
    y_hat: np.ndarray
    lam: float
    f_s: float
    Omega: float
    c_f_at_sample: Optional[np.ndarray] = None
    tolerance: Optional[float] = None  # allowed |y_hat| excess over lambda; default lambda

    def __post_init__(self):
        y = np.asarray(self.y_hat, dtype=float)
        object.__setattr__(self, "y_hat", y)
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if not (self.f_s > 0 and self.Omega > 0):
            raise ValueError("f_s and Omega must be > 0")
        tol = self.lam if self.tolerance is None else self.tolerance
        if y.size and np.max(np.abs(y)) > self.lam + tol:
            raise ValueError(f"|y_hat| exceeds lambda + {tol:g}: data is not folded into [-lambda, lambda)")
        if self.c_f_at_sample is not None:
            object.__setattr__(self, "c_f_at_sample", np.asarray(self.c_f_at_sample, dtype=np.int64))

    @property
    def T(self):
        return 1.0 / self.f_s

    @property
    def oversampling(self):
        return self.f_s / (2.0 * self.Omega)


@dataclass(frozen=True)
class RecoveryConfig:
    algorithm: str = RSOD
    order_N: Optional[int] = None
    max_iters: int = 50
    tol: float = 1e-9
    strict: bool = False
    # usf: amplitude bound used to pick order_N when it is not given
    amplitude_bound: Optional[float] = None

    def __post_init__(self):
        if self.order_N is not None and self.order_N < 1:
            raise ValueError("order_N must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class RecoveredSignal:
    g_tilde: np.ndarray
    algorithm: str
    converged: bool
    iters_used: int
    residual: np.ndarray
    boundary: int = 0
    params: dict = field(default_factory=dict)

    def interior(self, x=None):
        """Slice of ``x`` (default ``g_tilde``) without the flagged boundary samples."""
        x = self.g_tilde if x is None else x
        b = self.boundary
        return x[b: len(x) - b] if b else x


_REGISTRY: Dict[str, Callable] = {}


def register_algorithm(name):
    """Register ``fn(inp: RecoveryInput, cfg: RecoveryConfig) -> RecoveredSignal``."""

    def deco(fn):
        _REGISTRY[name] = fn
        return fn

    return deco


def algorithms():
    return sorted(_REGISTRY)


def recover(inp, cfg):
    try:
        fn = _REGISTRY[cfg.algorithm]
    except KeyError:
        raise ValueError(f"unknown recovery algorithm {cfg.algorithm!r}; known: {algorithms()}") from None
    return fn(inp, cfg)


# ---------------------------------------------------------------- kernels


def finite_diff(seq, order=1):
    """Forward difference of the given order; ``len`` shrinks by ``order``."""
    x = np.asarray(seq)
    if order < 1:
        raise ValueError("order must be >= 1")
    if x.size <= order:
        raise ValueError(f"sequence of length {x.size} too short for order {order}")
    return np.diff(x, n=order)


def usf_condition(f_s, Omega):
    """T <= 1 / (2 e Omega_rad)."""
    return 1.0 / f_s <= 1.0 / (2.0 * math.e * 2.0 * math.pi * Omega)


def rsod_condition(f_s, Omega):
    """T < 1 / Omega_rad."""
    return 1.0 / f_s < 1.0 / (2.0 * math.pi * Omega)


def usf_order(amplitude_bound, lam, f_s, Omega):
    """Smallest difference order that pushes ||diff^N g|| below lambda.

    Uses ||diff^N g|| <= (T Omega_rad e)^N * beta with beta the smallest
    multiple of 2*lambda covering ``amplitude_bound``.
    """
    a = math.e * 2.0 * math.pi * Omega / f_s
    if a >= 1:
        raise SamplingConditionError("T * Omega_rad * e must be < 1")
    beta = 2.0 * lam * math.ceil(amplitude_bound / (2.0 * lam))
    if beta <= lam:
        return 1
    return max(1, math.ceil((math.log(lam) - math.log(beta)) / math.log(a)))


def _integrate(counts_diff, y_level, lam):
    """Anti-difference fold counts one level down.

    ``counts_diff`` holds diff^(n+1) of the fold counts; ``y_level`` is
    diff^n y. The constant is the one making mean(diff^n g) closest to 0.
    """
    partial = np.concatenate(([0], np.cumsum(counts_diff)))
    c = -int(np.round(np.mean(y_level / (2.0 * lam) + partial)))
    return partial + c


def _unfold_from_order(y, lam, order):
    """Residual counts from diff^order y, assuming |diff^order g| < lambda."""
    levels = [y]
    for _ in range(order):
        levels.append(np.diff(levels[-1]))
    # M(d) - d = -2 lam fold_count(d) equals diff^order of the residual
    counts = -np.asarray(fold_count(levels[order], lam), dtype=np.int64)
    for n in range(order - 1, -1, -1):
        counts = _integrate(counts, levels[n], lam)
    return counts


def _check(cond, inp, cfg, what):
    if cond:
        return True
    if cfg.strict:
        raise SamplingConditionError(f"sampling condition {what} violated (f_s={inp.f_s}, Omega={inp.Omega})")
    return False


def _result(inp, counts, name, converged, iters, boundary, **params):
    eps = 2.0 * inp.lam * counts.astype(float)
    return RecoveredSignal(inp.y_hat + eps, name, bool(converged), int(iters), eps, boundary, params)


@register_algorithm(DIRECT)
def _direct(inp, cfg):
    if inp.c_f_at_sample is None:
        raise ValueError("direct recovery needs c_f_at_sample")
    return direct_recover(inp.y_hat, inp.c_f_at_sample, inp.lam)


def direct_recover(y_hat, c_f, lam):
    """``g = y_hat - 2*lambda*C_f`` with C_f the delay-aligned loop count."""
    y_hat = np.asarray(y_hat, dtype=float)
    c_f = np.asarray(c_f, dtype=np.int64)
    if y_hat.shape != c_f.shape:
        raise ValueError(f"length mismatch: {y_hat.shape} vs {c_f.shape}")
    eps = -2.0 * lam * c_f.astype(float)
    return RecoveredSignal(y_hat + eps, DIRECT, True, 0, eps, 0, {})


@register_algorithm(USF)
def _usf(inp, cfg):
    order = cfg.order_N
    if order is None:
        if cfg.amplitude_bound is None:
            raise ValueError("usf needs order_N or amplitude_bound")
        order = usf_order(cfg.amplitude_bound, inp.lam, inp.f_s, inp.Omega)
    return usf_recover(inp, order, strict=cfg.strict)


def usf_recover(inp, order_N, strict=False):
    """High-order difference unfolding.

    Needs ``T <= 1/(2 e Omega_rad)`` and an order high enough that
    ``|diff^N g| < lambda`` (see :func:`usf_order`).
    """
    cfg = RecoveryConfig(USF, order_N=order_N, strict=strict)
    ok = _check(usf_condition(inp.f_s, inp.Omega), inp, cfg, "T <= 1/(2 e Omega)")
    if inp.y_hat.size <= order_N:
        raise ValueError("sequence too short for the difference order")
    counts = _unfold_from_order(inp.y_hat, inp.lam, order_N)
    return _result(inp, counts, USF, ok, 0, order_N, order_N=order_N)


@register_algorithm(RSOD)
def _rsod(inp, cfg):
    return rsod_recover(inp, strict=cfg.strict)


def rsod_recover(inp, strict=False):
    """Second-order difference unfolding, condition ``T < 1/Omega_rad``.

    Exact whenever ``|diff^2 g| < lambda``, which the condition guarantees for
    moderate dynamic range; the second anti-difference constant comes from
    the zero-mean prior.
    """
    cfg = RecoveryConfig(RSOD, strict=strict)
    ok = _check(rsod_condition(inp.f_s, inp.Omega), inp, cfg, "T < 1/Omega")
    if inp.y_hat.size <= 2:
        raise ValueError("rsod needs at least 3 samples")
    counts = _unfold_from_order(inp.y_hat, inp.lam, 2)
    return _result(inp, counts, RSOD, ok, 0, 2, order_N=2)


class BandlimitedProjector:
    """Least-squares projection onto signals bandlimited to ``Omega``.

    The basis is the Fourier series of period ``extension * N * T`` truncated
    one harmonic above ``Omega``, so records need not hold whole periods. The
    extension plays the role of the periodic extension of a DFT mask without
    its wrap-around discontinuity.
    """

    def __init__(self, n, f_s, Omega, extension=2):
        period = extension * n / f_s
        J = int(math.floor(Omega * period)) + 1
        t = np.arange(n) / f_s
        cols = [np.ones(n)]
        for j in range(1, J + 1):
            w = 2.0 * math.pi * j / period
            cols.append(np.cos(w * t))
            cols.append(np.sin(w * t))
        A = np.stack(cols, axis=1)
        if A.shape[1] >= n:
            raise ValueError("record too short for a bandlimited projection at this bandwidth")
        self.Q, _ = np.linalg.qr(A)

    def __call__(self, x):
        return self.Q @ (self.Q.T @ x)


@register_algorithm(FIRST_ORDER_ITER)
def _first_order(inp, cfg):
    return first_order_iter_recover(inp, cfg.max_iters, cfg.tol)


def first_order_iter_recover(inp, max_iters=50, tol=1e-9):
    """First-order unfolding refined by alternating bandlimited projection.

    In-house baseline of the first-order family: initial residual from fold
    jumps in ``diff y``, then ``eps <- 2 lambda round((P(y + eps) - y) / 2 lambda)``
    with ``P`` the projection onto ``Omega`` until the residual changes by
    less than ``tol`` or ``max_iters`` is reached.
    """
    y, lam = inp.y_hat, inp.lam
    if y.size < 3:
        raise ValueError("first_order_iter needs at least 3 samples")
    counts = _unfold_from_order(y, lam, 1)
    try:
        proj = BandlimitedProjector(y.size, inp.f_s, inp.Omega)
    except ValueError:
        return _result(inp, counts, FIRST_ORDER_ITER, False, 0, 1)
    converged, iters = False, 0
    for _ in range(max_iters):
        g_est = proj(y + 2.0 * lam * counts)
        new = np.round((g_est - y) / (2.0 * lam)).astype(np.int64)
        change = 2.0 * lam * np.max(np.abs(new - counts))
        if change < tol:
            converged = True
            break
        counts = new
        iters += 1
    return _result(inp, counts, FIRST_ORDER_ITER, converged, iters, 1)


# ---------------------------------------------------------------- CSV

RECOVERY_COLUMNS = ("k", "y_hat", "g_tilde", "residual_estimate")


def write_recovery_csv(inp, rec, path):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECOVERY_COLUMNS)
        for k in range(len(rec.g_tilde)):
            w.writerow((k, format(inp.y_hat[k], ".17g"), format(rec.g_tilde[k], ".17g"),
                        format(rec.residual[k], ".17g")))
