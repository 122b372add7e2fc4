"""Cycle-accurate simulation of the FPGA folding loop.

Signal flow per analog tick::

    y(t) = g(t) + v_f(t) + noise         summing node
    comparator (Schmitt, +/-lambda)      -> [B1 B0] after comparator_delay
    FSM at every control-clock edge      -> C_f register
    loop_delay_cycles pipeline, ZOH DAC  -> v_f = feedback_voltage(C_f)

A positive over-range (code 01) decrements C_f and a negative one (10)
increments it, so ``y = g + 2*lambda*C_f`` in the ideal mode and the direct
recovery is ``g = y - 2*lambda*C_f``.

Continuous time is discretized at ``analog_ticks_per_cycle`` ticks per control
cycle. The per-tick trace is optional because long runs would not fit in
memory; ADC samples and failure events are always kept.
"""
import csv
import enum
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from numba import njit

from . import calibration
from .modulo import fold_count

DAC_BITS = 13  # magnitude bits of the 14-bit sign-magnitude DAC

# FSM state codes
KEEP, INCREASE, DECREASE, WAIT = 0, 1, 2, 3
# comparator codes [B1 B0]
IN_RANGE, OVRP, OVRN = 0b00, 0b01, 0b10


class FsmState(enum.IntEnum):
    KEEP = KEEP
    INCREASE = INCREASE
    DECREASE = DECREASE
    WAIT = WAIT


class Calibration(str, enum.Enum):
    IDEAL = "ideal"
    UNCALIBRATED = "uncalibrated"
    CALIBRATED = "calibrated"


class ComparatorFlags(NamedTuple):
    b1b0: int = IN_RANGE
    b2: bool = False

    @property
    def bits(self):
        return f"{int(self.b2)}|{self.b1b0:02b}"


def max_fold_count(q):
    """Largest positive fold count, 2**(13 - q) - 1."""
    if not 0 <= q <= DAC_BITS:
        raise ValueError(f"q must be in [0, {DAC_BITS}], got {q}")
    return (1 << (DAC_BITS - q)) - 1


def fold_count_range(q):
    return -(1 << (DAC_BITS - q)), max_fold_count(q)


@dataclass(frozen=True)
class LoopConfig:
    lam: float
    q: int = 7
    V_FS: float = 1.0
    G_total: Optional[float] = None
    f_ctrl: float = 200e6
    f_adc: float = 100e6
    adc_phase_deg: float = 60.0
    hysteresis: float = 3.5e-3
    comparator_delay: float = 4e-9
    loop_delay_cycles: int = 5
    adc_latency: float = 0.0
    wait_cycles: Optional[int] = None
    adc_bits: int = 8
    adc_full_scale: float = 0.5
    analog_ticks_per_cycle: int = 10
    calibration: Calibration = Calibration.IDEAL
    undercomp_margin: float = 0.02
    noise_rms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        cal = Calibration(self.calibration)
        object.__setattr__(self, "calibration", cal)
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if not 0 <= self.q <= DAC_BITS:
            raise ValueError(f"q must be in [0, {DAC_BITS}]")
        if not self.f_ctrl >= self.f_adc > 0:
            raise ValueError("need f_ctrl >= f_adc > 0")
        if not self.lam > self.hysteresis >= 0:
            raise ValueError("need lam > hysteresis >= 0")
        if self.loop_delay_cycles < 1:
            raise ValueError("loop_delay_cycles must be >= 1")
        if self.analog_ticks_per_cycle < 2:
            raise ValueError("analog_ticks_per_cycle must be >= 2")
        if not 1 <= self.adc_bits <= 16:
            raise ValueError("adc_bits must be in [1, 16]")
        if self.comparator_delay < 0 or self.adc_latency < 0 or self.noise_rms < 0:
            raise ValueError("delays and noise_rms must be >= 0")
        if self.wait_cycles is None:
            object.__setattr__(self, "wait_cycles", self.loop_delay_cycles)
        if self.wait_cycles < 0:
            raise ValueError("wait_cycles must be >= 0")
        if self.G_total is None:
            target = 2 * self.lam if cal is Calibration.IDEAL else 2 * self.lam - self.undercomp_margin
            object.__setattr__(self, "G_total", target / ((1 << self.q) * self.V_LSB))
        elif cal is Calibration.IDEAL and not np.isclose(self.fold_step, 2 * self.lam, rtol=1e-12, atol=0):
            raise ValueError("ideal mode requires G_total * 2**q * V_LSB == 2 * lam")
        # raises on over-compensation
        self.calibration_params()

    @property
    def V_LSB(self):
        return self.V_FS / (1 << DAC_BITS)

    @property
    def fold_step(self):
        return self.G_total * (1 << self.q) * self.V_LSB

    @property
    def T_c(self):
        return 1.0 / self.f_ctrl

    @property
    def dt(self):
        return self.T_c / self.analog_ticks_per_cycle

    def calibration_params(self):
        return calibration.CalibrationParams(self.lam, self.G_total, self.q, self.V_LSB)

    def to_dict(self):
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d["calibration"] = self.calibration.value
        return d


def feedback_voltage(c_f, cfg):
    """Summing-node feedback for fold count ``c_f`` under ``cfg.calibration``."""
    p = cfg.calibration_params()
    if cfg.calibration is Calibration.IDEAL:
        return calibration.ideal_feedback(c_f, p)
    if cfg.calibration is Calibration.UNCALIBRATED:
        return calibration.raw_feedback(c_f, p)
    return calibration.calibrated_feedback(c_f, p)


def quantize(y, bits, full_scale):
    """Mid-tread uniform quantizer over [-full_scale, full_scale).

    Returns ``(code, volts)``; codes are signed and clamp to
    [-2**(bits-1), 2**(bits-1) - 1].
    """
    if not 1 <= bits <= 16:
        raise ValueError("bits must be in [1, 16]")
    step = 2.0 * full_scale / (1 << bits)
    half = 1 << (bits - 1)
    code = np.clip(np.floor(np.asarray(y, dtype=float) / step + 0.5), -half, half - 1).astype(np.int64)
    volts = code * step
    if code.ndim == 0:
        return int(code), float(volts)
    return code, volts


def quantizer_step(bits, full_scale):
    return 2.0 * full_scale / (1 << bits)


# ---------------------------------------------------------------- core logic


@njit(cache=True)
def _schmitt(y, lam, hys, pos, neg):
    if y >= lam:
        pos = 1
    elif y < lam - hys:
        pos = 0
    if y < -lam:
        neg = 1
    elif y >= -lam + hys:
        neg = 0
    return pos, neg


@njit(cache=True)
def _fsm(b2, code, c, c_min, c_max):
    # returns (state, new_c, saturated)
    if b2:
        return WAIT, c, False
    if code == OVRN:
        if c + 1 > c_max:
            return INCREASE, c_max, True
        return INCREASE, c + 1, False
    if code == OVRP:
        if c - 1 < c_min:
            return DECREASE, c_min, True
        return DECREASE, c - 1, False
    return KEEP, c, False


def comparator_step(y, lam, hysteresis, prev=ComparatorFlags()):
    """Schmitt-trigger window comparator.

    01 is raised once ``y >= lam`` and held until ``y < lam - hysteresis``;
    10 mirrors it at ``-lam``. The propagation delay is applied by
    :func:`run_loop`, not here. ``b2`` is passed through.
    """
    if not lam > hysteresis:
        raise ValueError("need lam > hysteresis")
    pos, neg = _schmitt(float(y), float(lam), float(hysteresis), prev.b1b0 & 1, (prev.b1b0 >> 1) & 1)
    return ComparatorFlags((neg << 1) | pos, prev.b2)


def fsm_step(state, flags, c_f, q=None):
    """One control-clock update of the fold controller.

    ``state`` is accepted for symmetry with the hardware table but the next
    state depends only on ``[B2 B1 B0]``. With ``q`` given the counter
    saturates at its range; :func:`run_loop` records saturation events.
    """
    c_min, c_max = fold_count_range(q) if q is not None else (-(1 << 62), 1 << 62)
    if not c_min <= c_f <= c_max:
        raise ValueError(f"C_f={c_f} outside [{c_min}, {c_max}]")
    new_state, new_c, _ = _fsm(bool(flags.b2), int(flags.b1b0), int(c_f), c_min, c_max)
    return FsmState(new_state), int(new_c)


# state vector slots for the kernel
_POS, _NEG, _STATE, _WAIT, _CREG, _NODE, _OF_SIDE, _N_OF, _N_CE, _N_SAT, _SPTR, _EDGE, _PREV_NODE, _N_TICK = range(14)


@njit(cache=True)
def _run_chunk(
    g, noise, i0, ticks_per_cycle, lam, hys, vf_table, c_min, c_max, wait_cycles,
    st, comp_ring, c_ring, node_ring,
    rec_y, rec_vf, rec_code, rec_b2, rec_c, rec_state, rec_of,
    sample_ticks, samp_c, samp_of,
    of_events, ce_ticks, sat_ticks,
):
    n = g.shape[0]
    record = rec_y.shape[0] > 0
    hi = lam + hys
    n_comp = comp_ring.shape[0]
    n_pipe = c_ring.shape[0]
    n_node = node_ring.shape[0]
    two_lam = 2.0 * lam
    for j in range(n):
        i = i0 + j
        if i % ticks_per_cycle == 0:
            edge = st[_EDGE]
            # registered comparator output, comparator_delay old
            code = comp_ring[i % n_comp]
            b2 = st[_WAIT] > 0
            state, c_new, sat = _fsm(b2, code, st[_CREG], c_min, c_max)
            if state == WAIT:
                st[_WAIT] -= 1
            elif state == INCREASE or state == DECREASE:
                st[_WAIT] = wait_cycles
            if sat:
                k = st[_N_SAT]
                if k < sat_ticks.shape[0]:
                    sat_ticks[k] = i
                st[_N_SAT] = k + 1
            st[_STATE] = state
            st[_CREG] = c_new
            # pipeline: the register value reaches the DAC n_pipe - 1 cycles later
            c_ring[edge % n_pipe] = c_new
            st[_NODE] = c_ring[(edge + 1) % n_pipe]
            st[_EDGE] = edge + 1
        # DAC output reaches the summing node n_node - 1 ticks later
        node_ring[i % n_node] = st[_NODE]
        c_node = node_ring[(i + 1) % n_node]
        vf = vf_table[c_node - c_min]
        y = g[j] + vf + noise[j]

        changed = st[_N_TICK] > 0 and c_node != st[_PREV_NODE]
        if changed:
            # counter error: the applied update moves C_f away from the oracle
            oracle = -np.floor((g[j] + lam) / two_lam)
            if abs(c_node - oracle) > abs(st[_PREV_NODE] - oracle):
                k = st[_N_CE]
                if k < ce_ticks.shape[0]:
                    ce_ticks[k] = i
                st[_N_CE] = k + 1
        st[_PREV_NODE] = c_node
        st[_N_TICK] += 1

        side = 0
        if y > hi:
            side = 1
        elif y < -hi:
            side = -1
        if st[_OF_SIDE] != 0 and side != st[_OF_SIDE]:
            k = st[_N_OF] - 1
            if k < of_events.shape[0]:
                of_events[k, 1] = i
            st[_OF_SIDE] = 0
        if st[_OF_SIDE] == 0 and side != 0 and changed:
            k = st[_N_OF]
            if k < of_events.shape[0]:
                of_events[k, 0] = i
                of_events[k, 1] = -1
                of_events[k, 2] = side
            st[_N_OF] = k + 1
            st[_OF_SIDE] = side

        pos, neg = _schmitt(y, lam, hys, st[_POS], st[_NEG])
        st[_POS] = pos
        st[_NEG] = neg
        # slot i % n_comp was read at this tick's edge and is free again
        comp_ring[i % n_comp] = (neg << 1) | pos

        p = st[_SPTR]
        while p < sample_ticks.shape[0] and sample_ticks[p] == i:
            samp_c[p] = c_node
            samp_of[p] = st[_OF_SIDE] != 0
            p += 1
        st[_SPTR] = p

        if record:
            rec_y[j] = y
            rec_vf[j] = vf
            rec_code[j] = comp_ring[(i + 1) % n_comp]
            rec_b2[j] = st[_WAIT] > 0
            rec_c[j] = st[_CREG]
            rec_state[j] = st[_STATE]
            rec_of[j] = st[_OF_SIDE] != 0


# ---------------------------------------------------------------- driver

_EVENT_CAP = 1 << 16
_CHUNK = 1 << 20


class OverfoldEvent(NamedTuple):
    """Excursion beyond +/-(lambda + hysteresis + margin) entered through a feedback step."""

    t_start: float
    t_end: float
    side: int  # +1 above +lambda, -1 below -lambda


@dataclass(frozen=True)
class FoldTrace:
    """Result of :func:`run_loop`.

    Per-tick arrays (``g``, ``v_f``, ``y``, ``b1b0``, ``b2``, ``c_f``,
    ``state``, ``overfold``) are ``None`` unless the run recorded ticks.
    ``c_f`` is the FSM register; ``c_f_at_sample`` is the count whose feedback
    is present at the summing node at each sample instant.
    """

    cfg: LoopConfig
    n_ticks: int
    dt: float
    g: Optional[np.ndarray]
    v_f: Optional[np.ndarray]
    y: Optional[np.ndarray]
    b1b0: Optional[np.ndarray]
    b2: Optional[np.ndarray]
    c_f: Optional[np.ndarray]
    state: Optional[np.ndarray]
    overfold: Optional[np.ndarray]
    t_k: np.ndarray
    g_k: np.ndarray
    y_k: np.ndarray
    y_hat_code: np.ndarray
    y_hat_volts: np.ndarray
    c_f_at_sample: np.ndarray
    overfold_at_sample: np.ndarray
    overfold_events: tuple
    counter_error_times: np.ndarray
    saturation_times: np.ndarray

    @property
    def has_ticks(self):
        return self.y is not None

    @property
    def t(self):
        return np.arange(self.n_ticks) * self.dt

    @property
    def k(self):
        return np.arange(len(self.t_k))

    @property
    def spurious_ovrn(self):
        """Over-fold excursions below -lambda; each asserts OVRN without a real over-range."""
        return sum(1 for e in self.overfold_events if e.side < 0)

    @property
    def spurious_ovrp(self):
        return sum(1 for e in self.overfold_events if e.side > 0)


def sample_times(cfg, duration):
    """ADC instants: clock at f_adc advanced by adc_phase_deg, all within [0, duration)."""
    period = 1.0 / cfg.f_adc
    offset = (1.0 - (cfg.adc_phase_deg % 360.0) / 360.0) * period
    n = int(np.floor((duration - offset) / period - 1e-12)) + 1
    return offset + np.arange(max(n, 0)) * period


def run_loop(signal, cfg, duration, record_ticks=True):
    """Simulate the loop on ``signal`` for ``duration`` seconds.

    ``signal`` only needs an ``eval(t)`` method taking arrays.
    """
    if not isinstance(cfg, LoopConfig):
        raise TypeError("cfg must be a LoopConfig")
    t_k = sample_times(cfg, duration)
    if len(t_k) < 1:
        raise ValueError("duration must cover at least one ADC sample")
    dt = cfg.dt
    T = cfg.analog_ticks_per_cycle
    n_ticks = int(np.ceil(duration / dt - 1e-9))
    c_min, c_max = fold_count_range(cfg.q)
    vf_table = np.asarray(feedback_voltage(np.arange(c_min, c_max + 1), cfg), dtype=float)

    st = np.zeros(14, dtype=np.int64)
    comp_ring = np.zeros(int(round(cfg.comparator_delay / dt)) + 1, dtype=np.int64)
    c_ring = np.zeros(cfg.loop_delay_cycles, dtype=np.int64)
    node_ring = np.zeros(int(round(cfg.adc_latency / dt)) + 1, dtype=np.int64)

    sample_ticks = np.floor(t_k / dt + 1e-9).astype(np.int64)
    samp_c = np.zeros(len(t_k), dtype=np.int64)
    samp_of = np.zeros(len(t_k), dtype=np.bool_)
    of_events = np.zeros((_EVENT_CAP, 3), dtype=np.int64)
    ce_ticks = np.zeros(_EVENT_CAP, dtype=np.int64)
    sat_ticks = np.zeros(_EVENT_CAP, dtype=np.int64)

    n_rec = n_ticks if record_ticks else 0
    rec = dict(
        g=np.zeros(n_rec), v_f=np.zeros(n_rec), y=np.zeros(n_rec),
        b1b0=np.zeros(n_rec, dtype=np.int8), b2=np.zeros(n_rec, dtype=np.bool_),
        c_f=np.zeros(n_rec, dtype=np.int32), state=np.zeros(n_rec, dtype=np.int8),
        overfold=np.zeros(n_rec, dtype=np.bool_),
    )
    rng = np.random.default_rng([cfg.seed, 0])
    empty_f = np.zeros(0)
    for i0 in range(0, n_ticks, _CHUNK):
        i1 = min(i0 + _CHUNK, n_ticks)
        g = np.asarray(signal.eval(np.arange(i0, i1) * dt), dtype=float)
        noise = rng.normal(0.0, cfg.noise_rms, i1 - i0) if cfg.noise_rms > 0 else np.zeros(i1 - i0)
        if record_ticks:
            sl = slice(i0, i1)
            rec["g"][sl] = g
            views = [rec[k][sl] for k in ("y", "v_f", "b1b0", "b2", "c_f", "state", "overfold")]
        else:
            views = [empty_f, empty_f, np.zeros(0, np.int8), np.zeros(0, np.bool_),
                     np.zeros(0, np.int32), np.zeros(0, np.int8), np.zeros(0, np.bool_)]
        _run_chunk(
            g, noise, i0, T, cfg.lam, cfg.hysteresis, vf_table, c_min, c_max, cfg.wait_cycles,
            st, comp_ring, c_ring, node_ring, *views,
            sample_ticks, samp_c, samp_of, of_events, ce_ticks, sat_ticks,
        )

    n_of = min(int(st[_N_OF]), _EVENT_CAP)
    events = []
    for s, e, side in of_events[:n_of]:
        end = n_ticks if e < 0 else e
        events.append(OverfoldEvent(s * dt, end * dt, int(side)))

    # ADC: y at the exact sample instant, feedback held by the ZOH
    g_k = np.asarray(signal.eval(t_k), dtype=float)
    sample_noise = (np.random.default_rng([cfg.seed, 1]).normal(0.0, cfg.noise_rms, len(t_k))
                    if cfg.noise_rms > 0 else 0.0)
    y_k = g_k + vf_table[samp_c - c_min] + sample_noise
    code, volts = quantize(y_k, cfg.adc_bits, cfg.adc_full_scale)

    return FoldTrace(
        cfg=cfg, n_ticks=n_ticks, dt=dt,
        **({k: v for k, v in rec.items()} if record_ticks else dict.fromkeys(rec)),
        t_k=t_k, g_k=g_k, y_k=y_k, y_hat_code=np.atleast_1d(code), y_hat_volts=np.atleast_1d(volts),
        c_f_at_sample=samp_c, overfold_at_sample=samp_of,
        overfold_events=tuple(events),
        counter_error_times=ce_ticks[: min(int(st[_N_CE]), _EVENT_CAP)] * dt,
        saturation_times=sat_ticks[: min(int(st[_N_SAT]), _EVENT_CAP)] * dt,
    )


def detect_overfold(trace, margin=0.0):
    """Over-fold intervals of a trace.

    An event starts at a tick where a feedback step lands ``y`` beyond
    ``lambda + hysteresis + margin`` and lasts until ``y`` returns inside.
    Excursions the input drives by itself while a correction is pending are
    normal loop latency and are not reported.
    """
    if margin == 0.0 and not trace.has_ticks:
        return list(trace.overfold_events)
    if not trace.has_ticks:
        raise ValueError("detect_overfold with a margin needs a trace recorded with record_ticks=True")
    if trace.n_ticks == 0:
        raise ValueError("empty trace")
    hi = trace.cfg.lam + trace.cfg.hysteresis + margin
    y = trace.y
    side = np.where(y > hi, 1, np.where(y < -hi, -1, 0))
    changed = np.zeros(len(y), dtype=bool)
    changed[1:] = trace.v_f[1:] != trace.v_f[:-1]
    events = []
    active, start = 0, 0
    # candidates only: ticks out of range
    for i in np.flatnonzero((side != 0) | np.r_[False, side[:-1] != 0]):
        s = side[i]
        if active and s != active:
            events.append(OverfoldEvent(start * trace.dt, i * trace.dt, int(active)))
            active = 0
        if not active and s and changed[i]:
            active, start = int(s), i
    if active:
        events.append(OverfoldEvent(start * trace.dt, trace.n_ticks * trace.dt, active))
    return events


def oracle_fold_counts(trace, signal=None):
    """Ideal register value -fold_count(g) at every ADC sample."""
    return -fold_count(trace.g_k, trace.cfg.lam)


# ---------------------------------------------------------------- CSV

TRACE_COLUMNS = ("t", "g", "v_f", "y", "B1B0", "B2", "C_f", "state", "overfold")
SAMPLE_COLUMNS = ("k", "t_k", "code", "volts", "C_f")


def _num(x):
    return format(float(x), ".17g")


def write_trace_csv(trace, path):
    """Per-tick trace: seconds, volts, 2-bit code as text, FSM state name."""
    if not trace.has_ticks:
        raise ValueError("trace was run without record_ticks")
    names = [s.name for s in FsmState]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        t = trace.t
        for i in range(trace.n_ticks):
            w.writerow((
                _num(t[i]), _num(trace.g[i]), _num(trace.v_f[i]), _num(trace.y[i]),
                f"{int(trace.b1b0[i]):02b}", int(trace.b2[i]), int(trace.c_f[i]),
                names[trace.state[i]], int(trace.overfold[i]),
            ))


def write_samples_csv(trace, path):
    """ADC samples: index, time (s), signed code, dequantized volts, aligned C_f."""
    write_sample_table(path, trace.t_k, trace.y_hat_code, trace.y_hat_volts, trace.c_f_at_sample)


def write_sample_table(path, t_k, code, volts, c_f):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLE_COLUMNS)
        for k in range(len(t_k)):
            w.writerow((k, _num(t_k[k]), int(code[k]), _num(volts[k]), int(c_f[k])))


def write_overfold_csv(events, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t_start", "t_end", "side"))
        for e in events:
            w.writerow((_num(e.t_start), _num(e.t_end), "N" if e.side < 0 else "P"))
