import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from modadc import loop_sim as ls
from modadc.loop_sim import ComparatorFlags, FsmState, LoopConfig, comparator_step, fsm_step, run_loop
from modadc.modulo import fold_count
from modadc.signals import Sine, Triangular, make_signal


class Ramp:
    def __init__(self, slope):
        self.slope = slope

    def eval(self, t):
        return self.slope * np.asarray(t, dtype=float)


class Zero:
    def eval(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))


def fig5_cfg(**kw):
    return LoopConfig(lam=0.36, q=9, loop_delay_cycles=5, **kw)


# ---------------------------------------------------------------- comparator / FSM


def test_comparator_examples():
    lam, hys = 0.1, 3.5e-3
    assert comparator_step(0.0, lam, hys).b1b0 == ls.IN_RANGE
    assert comparator_step(lam + 1e-3, lam, hys).b1b0 == ls.OVRP
    assert comparator_step(-lam - 1e-3, lam, hys).b1b0 == ls.OVRN


def test_comparator_hysteresis_sweep():
    lam, hys = 0.1, 3.5e-3
    flags = ComparatorFlags()
    seen = []
    for y in np.arange(lam + 2e-3, lam - 5e-3, -0.25e-3):
        flags = comparator_step(y, lam, hys, flags)
        seen.append((y, flags.b1b0))
    for y, code in seen:
        assert code == (ls.OVRP if y >= lam - hys else ls.IN_RANGE), y


def test_fsm_examples():
    assert fsm_step(FsmState.KEEP, ComparatorFlags(0b00, False), 7) == (FsmState.KEEP, 7)
    assert fsm_step(FsmState.KEEP, ComparatorFlags(0b10, False), 5) == (FsmState.INCREASE, 6)
    assert fsm_step(FsmState.KEEP, ComparatorFlags(0b01, False), 5) == (FsmState.DECREASE, 4)
    assert fsm_step(FsmState.WAIT, ComparatorFlags(0b10, True), 5) == (FsmState.WAIT, 5)


def test_fsm_saturates():
    assert fsm_step(FsmState.KEEP, ComparatorFlags(0b10, False), 63, q=7) == (FsmState.INCREASE, 63)
    with pytest.raises(ValueError):
        fsm_step(FsmState.KEEP, ComparatorFlags(), 64, q=7)


def test_max_fold_count():
    assert ls.max_fold_count(7) == 63
    assert ls.max_fold_count(13) == 0
    assert ls.max_fold_count(0) == 8191
    with pytest.raises(ValueError):
        ls.max_fold_count(14)


# ---------------------------------------------------------------- config / feedback / quantizer


def test_feedback_voltage_modes():
    ideal = LoopConfig(lam=0.1)
    assert ideal.fold_step == pytest.approx(0.2)
    assert ls.feedback_voltage(0, ideal) == 0
    assert ls.feedback_voltage(3, ideal) == pytest.approx(0.6)
    g = 0.18 / ((1 << 7) / 8192)
    raw = LoopConfig(lam=0.1, G_total=g, calibration="uncalibrated")
    assert ls.feedback_voltage(10, raw) == pytest.approx(1.8)
    calb = LoopConfig(lam=0.1, G_total=g, calibration="calibrated")
    assert ls.feedback_voltage(10, calb) == pytest.approx(1.98)
    for cfg in (raw, calb):
        assert ls.feedback_voltage(0, cfg) == 0


@pytest.mark.parametrize("kw", [
    dict(lam=0.0), dict(lam=0.1, q=14), dict(lam=0.1, f_adc=300e6),
    dict(lam=0.1, hysteresis=0.2), dict(lam=0.1, loop_delay_cycles=0),
    dict(lam=0.1, G_total=1.0), dict(lam=0.1, G_total=100.0, calibration="calibrated"),
])
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        LoopConfig(**kw)


def test_quantize():
    code, v = ls.quantize(0.0, 8, 0.5)
    assert code == 0 and v == 0.0
    # +-0.1 V on a 1 Vpp 8-bit converter is about +-25.6 codes
    assert ls.quantize(0.1, 8, 0.5)[0] == 26
    assert ls.quantize(-0.1, 8, 0.5)[0] == -26
    step = ls.quantizer_step(8, 0.5)
    y = np.linspace(-0.5, 0.5 - step, 100001)
    _, v = ls.quantize(y, 8, 0.5)
    assert np.max(np.abs(v - y)) <= step / 2 + 1e-15
    assert ls.quantize(5.0, 8, 0.5)[0] == 127
    assert ls.quantize(-5.0, 8, 0.5)[0] == -128


# ---------------------------------------------------------------- runs


def test_zero_input():
    tr = run_loop(Zero(), LoopConfig(lam=0.1), 1e-6)
    assert np.all(tr.y == 0) and np.all(tr.c_f == 0) and np.all(tr.v_f == 0)
    assert tr.overfold_events == () and ls.detect_overfold(tr) == []
    assert np.all(tr.state == FsmState.KEEP)


def test_slow_ramp_single_fold():
    lam = 0.1
    slope = 0.15 / 20e-6  # 7.5 mV/us: crosses +lambda once
    cfg = LoopConfig(lam=lam)
    tr = run_loop(Ramp(slope), cfg, 20e-6)
    assert tr.c_f[-1] == -1
    i = int(np.flatnonzero(np.diff(tr.v_f))[0]) + 1
    assert tr.y[i] - tr.y[i - 1] == pytest.approx(-2 * lam, abs=2 * slope * tr.dt)
    assert len(np.flatnonzero(np.diff(tr.v_f))) == 1
    assert ls.detect_overfold(tr) == []


def test_fig5_overfold_and_counter_errors():
    tr = run_loop(make_signal(Triangular(1.09, 610e3)), fig5_cfg(), 2.2 / 610e3)
    ev = ls.detect_overfold(tr)
    assert ev and tr.spurious_ovrn >= 1
    assert len(tr.counter_error_times) >= 1
    assert ev == list(tr.overfold_events)
    assert np.any(tr.overfold)


def test_fig5_slow_is_clean():
    tr = run_loop(make_signal(Triangular(1.09, 10e3)), fig5_cfg(), 1.1e-4, record_ticks=False)
    assert ls.detect_overfold(tr) == []
    assert len(tr.counter_error_times) == 0


def test_detect_overfold_margin_needs_ticks():
    tr = run_loop(Zero(), LoopConfig(lam=0.1), 1e-7, record_ticks=False)
    with pytest.raises(ValueError):
        ls.detect_overfold(tr, margin=0.01)


def test_saturation_recorded():
    # q = 12 leaves one fold either way
    tr = run_loop(make_signal(Sine(0.45, 1e5)), LoopConfig(lam=0.1, q=12, V_FS=0.2 * 8192 / 4096), 1e-5,
                  record_ticks=False)
    assert len(tr.saturation_times) > 0


def test_deterministic_with_noise():
    cfg = LoopConfig(lam=0.1, noise_rms=2e-3, seed=9)
    s = make_signal(Sine(0.7, 2e5))
    a, b = run_loop(s, cfg, 5e-6), run_loop(s, cfg, 5e-6)
    for name in ("y", "v_f", "c_f", "b1b0", "state", "y_hat_code", "c_f_at_sample"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_chunked_matches_single(monkeypatch):
    s = make_signal(Sine(0.9, 3e5))
    cfg = LoopConfig(lam=0.1)
    a = run_loop(s, cfg, 4e-6)
    monkeypatch.setattr(ls, "_CHUNK", 997)
    b = run_loop(s, cfg, 4e-6)
    assert np.array_equal(a.y, b.y) and np.array_equal(a.c_f_at_sample, b.c_f_at_sample)


def test_csv_writers(tmp_path):
    tr = run_loop(make_signal(Triangular(1.09, 610e3)), fig5_cfg(), 2e-6)
    ls.write_trace_csv(tr, tmp_path / "t.csv")
    ls.write_samples_csv(tr, tmp_path / "s.csv")
    ls.write_overfold_csv(tr.overfold_events, tmp_path / "o.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == ",".join(ls.TRACE_COLUMNS) and len(lines) == tr.n_ticks + 1
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == ",".join(ls.SAMPLE_COLUMNS)
    assert len((tmp_path / "o.csv").read_text().splitlines()) == len(tr.overfold_events) + 1


# ---------------------------------------------------------------- invariants


sine_in = st.tuples(st.floats(0.05, 2.5), st.floats(5e3, 4e5), st.floats(0, 2 * np.pi))
# zero phase: the input starts inside the fold interval, so there is no start-up transient
settled_sine = st.tuples(st.floats(0.05, 2.5), st.floats(5e3, 4e5), st.just(0.0))


def _latency(cfg):
    return cfg.comparator_delay + cfg.loop_delay_cycles * cfg.T_c + 2 * cfg.dt


@given(sine_in)
def test_single_step_and_zoh(p):
    a, f, ph = p
    cfg = LoopConfig(lam=0.1)
    tr = run_loop(make_signal(Sine(a, f, ph)), cfg, min(2.0 / f, 2e-5))
    assert np.max(np.abs(np.diff(tr.c_f.astype(int)))) <= 1
    changes = np.flatnonzero(np.diff(tr.v_f)) + 1
    assert np.all(changes % cfg.analog_ticks_per_cycle == 0)


@given(settled_sine)
def test_bounded_folding(p):
    a, f, ph = p
    cfg = LoopConfig(lam=0.1)
    slew = 2 * np.pi * f * a
    t_f = _latency(cfg)
    if not slew * (t_f + cfg.adc_latency) < cfg.lam - cfg.hysteresis:
        return
    tr = run_loop(make_signal(Sine(a, f, ph)), cfg, min(2.0 / f, 2e-5))
    assert ls.detect_overfold(tr) == []
    settle = int(np.ceil(t_f / tr.dt))
    assert np.max(np.abs(tr.y[settle:])) <= cfg.lam + cfg.hysteresis + slew * t_f


@given(settled_sine)
def test_count_consistency(p):
    a, f, ph = p
    cfg = LoopConfig(lam=0.1)
    slew = 2 * np.pi * f * a
    t_f = _latency(cfg)
    if not slew * t_f < cfg.lam - cfg.hysteresis:
        return
    tr = run_loop(make_signal(Sine(a, f, ph)), cfg, min(2.0 / f, 2e-5), record_ticks=False)
    oracle = -fold_count(tr.g_k, cfg.lam)
    bad = np.flatnonzero(tr.c_f_at_sample != oracle)
    # mismatches only while a fold is in flight: the oracle changed within one latency
    changes_t = tr.t_k[np.flatnonzero(np.diff(oracle)) + 1]
    for k in bad:
        assert np.any((tr.t_k[k] >= changes_t) & (tr.t_k[k] - changes_t <= t_f + 1.0 / cfg.f_adc)), k
    # and recovery from the applied count is exact to one quantizer step anyway
    step = ls.quantizer_step(cfg.adc_bits, cfg.adc_full_scale)
    g_rec = tr.y_hat_volts - 2 * cfg.lam * tr.c_f_at_sample
    inside = np.abs(tr.y_k) < cfg.adc_full_scale
    assert np.max(np.abs(g_rec - tr.g_k)[inside]) <= step / 2 + 1e-12


def onset_frequency(delay, freqs=np.geomspace(20e3, 2e6, 41)):
    cfg = fig5_cfg().__class__(lam=0.36, q=9, loop_delay_cycles=delay)
    for f in freqs:
        tr = run_loop(make_signal(Triangular(1.09, f)), cfg, 2.2 / f, record_ticks=False)
        if tr.overfold_events:
            return f
    return np.inf


@given(st.integers(1, 7), st.integers(1, 3))
def test_onset_monotone_in_delay(d, inc):
    assert onset_frequency(d + inc) <= onset_frequency(d)
