"""Analytic test waveforms: sine, periodic sinc, triangle and pulse-shaped
communication signals.

Every waveform is evaluable at arbitrary time (scalar or array) and carries an
amplitude bound and a declared bandlimit in Hz.
"""
from dataclasses import dataclass
from typing import Union

import numpy as np

# Triangular waves are not bandlimited; this harmonic is declared as Omega.
TRIANGLE_HARMONIC = 11
# oversampling used to locate the peak of Fourier-series signals
_PEAK_OVERSAMPLE = 64

QAM_ORDER = 16

# Numerical Recipes LCG constants, modulus 2**32
LCG_A = 1664525
LCG_C = 1013904223


@dataclass(frozen=True)
class Sine:
    amplitude: float
    f_m: float
    phase: float = 0.0


@dataclass(frozen=True)
class PeriodicSinc:
    amplitude: float
    B: float
    f_m: float


@dataclass(frozen=True)
class Triangular:
    amplitude: float
    f0: float


@dataclass(frozen=True)
class Comm:
    """Pulse-shaped QAM/BPSK/FSK waveform; ``B`` is its highest frequency."""

    scheme: str
    symbol_rate: float
    B: float
    amplitude: float
    num_symbols: int = 64
    seed: int = 0
    pulse_rolloff: float = 0.35


SignalSpec = Union[Sine, PeriodicSinc, Triangular, Comm]


def lcg_stream(seed, n):
    """``n`` successive states of x <- (1664525 x + 1013904223) mod 2**32."""
    x = int(seed) % (1 << 32)
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        x = (LCG_A * x + LCG_C) % (1 << 32)
        out[i] = x
    return out


def lcg_symbols(seed, n, m):
    """Symbol indices in [0, m) taken from the upper 16 bits of each LCG state."""
    return ((lcg_stream(seed, n) >> np.uint64(16)) % np.uint64(m)).astype(np.int64)


class ContinuousSignal:
    """Immutable analytic waveform g(t).

    ``amplitude_bound`` is a guaranteed bound on |g(t)| and ``bandlimit_Omega``
    the highest occupied frequency in Hz.
    """

    def __init__(self, spec, amplitude_bound, bandlimit_Omega, period=None):
        self.spec = spec
        self.amplitude_bound = float(amplitude_bound)
        self.bandlimit_Omega = float(bandlimit_Omega)
        self.period = period

    def eval(self, t):
        raise NotImplementedError

    def __call__(self, t):
        return self.eval(t)

    def __repr__(self):
        return f"{type(self).__name__}({self.spec!r})"


class _SineSignal(ContinuousSignal):
    def eval(self, t):
        s = self.spec
        return s.amplitude * np.sin(2.0 * np.pi * s.f_m * np.asarray(t, dtype=float) + s.phase)


class _TriangularSignal(ContinuousSignal):
    # 0 at t=0, +A at a quarter period, -A at three quarters
    def eval(self, t):
        s = self.spec
        u = np.mod(np.asarray(t, dtype=float) * s.f0 + 0.25, 1.0)
        return s.amplitude * (1.0 - 4.0 * np.abs(u - 0.5))


class FourierSignal(ContinuousSignal):
    """Real trigonometric polynomial with period ``period``.

    ``coeffs[m]`` is the complex coefficient of exp(j 2 pi m t / period) for
    m >= 0; the negative-frequency half is the conjugate.
    """

    def __init__(self, spec, coeffs, period, amplitude_bound, bandlimit_Omega):
        super().__init__(spec, amplitude_bound, bandlimit_Omega, period=period)
        coeffs = np.asarray(coeffs, dtype=complex)
        nz = np.flatnonzero(coeffs)
        nz = nz[nz > 0]
        self._dc = float(coeffs[0].real)
        self._m = nz.astype(float)
        self._c = coeffs[nz]

    def eval(self, t, chunk=1 << 16):
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        out = np.empty(flat.shape)
        w = 2.0 * np.pi * self._m / self.period
        for i in range(0, flat.size, chunk):
            # reduce time modulo the period to keep the phase accurate
            tt = np.mod(flat[i:i + chunk], self.period)
            ph = np.outer(tt, w)
            out[i:i + chunk] = self._dc + 2.0 * (np.cos(ph) @ self._c.real - np.sin(ph) @ self._c.imag)
        return out.reshape(t.shape) if t.ndim else float(out[0])


class _PeriodicSincSignal(ContinuousSignal):
    # Dirichlet kernel with harmonics up to K*f_m, peak 1 at t = 0
    def __init__(self, spec):
        self.K = int(np.floor(spec.B / spec.f_m + 1e-9))
        super().__init__(spec, spec.amplitude, spec.B, period=1.0 / spec.f_m)

    def eval(self, t):
        s = self.spec
        t = np.asarray(t, dtype=float)
        # sin(n x) / (n sin x) has period pi in x for odd n; wrap to [-pi/2, pi/2)
        x = np.pi * (np.mod(s.f_m * t + 0.5, 1.0) - 0.5)
        n = 2 * self.K + 1
        small = np.abs(x) < 1e-6
        xs = np.where(small, 1.0, x)
        out = np.where(small, 1.0 - (n * n - 1) * x * x / 6.0, np.sin(n * xs) / (n * np.sin(xs)))
        return s.amplitude * out


def bandlimited_noise(rms, bandlimit, period, seed, f_low=None):
    """Gaussian-like random trig polynomial with power ``rms**2`` in (f_low, bandlimit].

    The frequencies are the harmonics of ``1/period`` so the noise is periodic
    on the record and exactly bandlimited.
    """
    rng = np.random.default_rng(seed)
    m_max = int(np.floor(bandlimit * period + 1e-9))
    m_min = 1 if f_low is None else max(1, int(np.ceil(f_low * period)))
    if m_max < m_min:
        raise ValueError("noise band contains no harmonic of 1/period")
    coeffs = np.zeros(m_max + 1, dtype=complex)
    k = m_max - m_min + 1
    z = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    coeffs[m_min:] = z
    # power of 2 Re sum c e^{...} is 2 * sum |c|^2
    coeffs *= rms / np.sqrt(2.0 * np.sum(np.abs(coeffs) ** 2))
    bound = 2.0 * np.sum(np.abs(coeffs))
    return FourierSignal(("noise", rms, bandlimit, seed), coeffs, period, bound, m_max / period)


class SumSignal(ContinuousSignal):
    """Pointwise sum of signals; the bound is the sum of bounds."""

    def __init__(self, *parts):
        self.parts = parts
        super().__init__(
            tuple(p.spec for p in parts),
            sum(p.amplitude_bound for p in parts),
            max(p.bandlimit_Omega for p in parts),
        )

    def eval(self, t):
        return sum(p.eval(t) for p in self.parts)


def _rrc(f, symbol_rate, beta):
    f = np.abs(f) / symbol_rate
    lo, hi = (1.0 - beta) / 2.0, (1.0 + beta) / 2.0
    h = np.zeros_like(f)
    h[f <= lo] = 1.0
    mid = (f > lo) & (f <= hi)
    h[mid] = np.sqrt(0.5 * (1.0 + np.cos(np.pi / beta * (f[mid] - lo))))
    return h


def _comm_signal(spec):
    scheme = spec.scheme.upper()
    n_sym, rs, beta = int(spec.num_symbols), spec.symbol_rate, spec.pulse_rolloff
    period = n_sym / rs
    half_band = (1.0 + beta) * rs / 2.0 if scheme != "FSK" else 1.5 * rs
    fc = spec.B - half_band
    if fc < half_band:
        raise ValueError(f"Comm: B={spec.B} too small for symbol_rate={rs} (carrier would fold below 0 Hz)")
    c = int(round(fc * period))
    m_max = int(np.floor(spec.B * period + 1e-9))

    # complex envelope on a grid with sps samples per symbol
    sps = 1 << int(np.ceil(np.log2(4.0 * (m_max + 1) / n_sym)))
    L = n_sym * sps
    if scheme in ("QAM", "BPSK"):
        if scheme == "BPSK":
            a = 2.0 * lcg_symbols(spec.seed, n_sym, 2) - 1.0
            a = a.astype(complex)
        else:
            side = int(np.sqrt(QAM_ORDER))
            idx = lcg_symbols(spec.seed, 2 * n_sym, side)
            levels = 2.0 * np.arange(side) - (side - 1)
            a = levels[idx[0::2]] + 1j * levels[idx[1::2]]
        # symbol DFT repeats every n_sym bins; envelope coefficient at bin k
        A = np.fft.fft(a)
        k = np.fft.fftfreq(L, d=1.0 / L).astype(int)
        env = A[k % n_sym] * _rrc(k / period, rs, beta)
    elif scheme == "FSK":
        if n_sym % 2:
            raise ValueError("Comm: FSK needs an even num_symbols to close the phase over one period")
        d = 2.0 * lcg_symbols(spec.seed, n_sym, 2) - 1.0
        # continuous phase, tone spacing = symbol rate (index 1): +-pi per symbol
        inc = np.repeat(d * np.pi / sps, sps)
        phase = np.concatenate(([0.0], np.cumsum(inc)[:-1]))
        env = np.fft.fft(np.exp(1j * phase)) / L
    else:
        raise ValueError(f"Comm: unknown scheme {spec.scheme!r}")

    kk = np.fft.fftfreq(L, d=1.0 / L).astype(int)
    lookup = dict(zip(kk.tolist(), env.tolist()))
    coeffs = np.zeros(m_max + 1, dtype=complex)
    for m in range(m_max + 1):
        # real passband: (E[m-c] + conj(E[-m-c])) / 2
        coeffs[m] = 0.5 * (lookup.get(m - c, 0.0) + np.conj(lookup.get(-m - c, 0.0)))

    # scale so the peak over a dense grid equals the requested amplitude
    n_grid = 2 * _PEAK_OVERSAMPLE * (m_max + 1)
    full = np.zeros(n_grid // 2 + 1, dtype=complex)
    full[: m_max + 1] = coeffs * n_grid
    dense = np.fft.irfft(full, n=n_grid)
    peak = np.max(np.abs(dense))
    if peak <= 0:
        raise ValueError("Comm: degenerate waveform")
    coeffs *= spec.amplitude / peak
    # grid-max bound: |g| <= grid_max / (1 - (pi Omega h)^2 / 2)
    h = period / n_grid
    omega = m_max / period
    bound = spec.amplitude / (1.0 - 0.5 * (np.pi * omega * h) ** 2)
    return FourierSignal(spec, coeffs, period, bound, spec.B)


def _positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be > 0, got {value!r}")


def _nonneg(name, value):
    if not (np.isfinite(value) and value >= 0):
        raise ValueError(f"{name} must be >= 0, got {value!r}")


def make_signal(spec):
    """Build the :class:`ContinuousSignal` for ``spec``; rejects invalid parameters."""
    if isinstance(spec, Sine):
        _nonneg("amplitude", spec.amplitude)
        _positive("f_m", spec.f_m)
        return _SineSignal(spec, spec.amplitude, spec.f_m, period=1.0 / spec.f_m)
    if isinstance(spec, PeriodicSinc):
        _nonneg("amplitude", spec.amplitude)
        _positive("B", spec.B)
        _positive("f_m", spec.f_m)
        if spec.B < spec.f_m:
            raise ValueError(f"B must be >= f_m, got B={spec.B}, f_m={spec.f_m}")
        return _PeriodicSincSignal(spec)
    if isinstance(spec, Triangular):
        _nonneg("amplitude", spec.amplitude)
        _positive("f0", spec.f0)
        return _TriangularSignal(spec, spec.amplitude, TRIANGLE_HARMONIC * spec.f0, period=1.0 / spec.f0)
    if isinstance(spec, Comm):
        _nonneg("amplitude", spec.amplitude)
        _positive("symbol_rate", spec.symbol_rate)
        _positive("B", spec.B)
        if not spec.num_symbols >= 1:
            raise ValueError(f"num_symbols must be >= 1, got {spec.num_symbols!r}")
        if not 0 < spec.pulse_rolloff <= 1:
            raise ValueError(f"pulse_rolloff must be in (0, 1], got {spec.pulse_rolloff!r}")
        return _comm_signal(spec)
    raise TypeError(f"unsupported signal spec {spec!r}")


def sample(signal, f_s, N, t0=0.0):
    """g[k] = signal(t0 + k / f_s) for k = 0..N-1."""
    if not f_s > 0:
        raise ValueError("f_s must be > 0")
    if N < 1:
        raise ValueError("N must be >= 1")
    return signal.eval(t0 + np.arange(N) / f_s)


_SPEC_TYPES = {"sine": Sine, "periodic_sinc": PeriodicSinc, "triangular": Triangular, "comm": Comm}


def spec_from_dict(d):
    d = dict(d)
    kind = d.pop("type")
    try:
        cls = _SPEC_TYPES[kind]
    except KeyError:
        raise ValueError(f"unknown signal type {kind!r}") from None
    return cls(**d)


def spec_to_dict(spec):
    from dataclasses import asdict

    name = {v: k for k, v in _SPEC_TYPES.items()}[type(spec)]
    return {"type": name, **asdict(spec)}
