"""Experiment pipelines: signal -> acquisition -> recovery -> metrics -> CSV."""
import csv
import json
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import calibration, loop_sim, metrics, recovery, signals
from ..modulo import fold_count, modulo_fold
from . import config as C


class ExperimentError(RuntimeError):
    """A module error tagged with the experiment and pipeline stage."""

    def __init__(self, experiment_id, stage, message):
        super().__init__(f"[{experiment_id}] {stage}: {message}")
        self.experiment_id = experiment_id
        self.stage = stage
        self.message = message

    def to_json(self):
        return json.dumps({"experiment_id": self.experiment_id, "stage": self.stage, "message": self.message},
                          sort_keys=True)


class _Stage:
    def __init__(self, exp_id):
        self.exp_id = exp_id
        self.name = "config"

    def __call__(self, name):
        self.name = name
        return self

    def __enter__(self):
        return self

    def __exit__(self, et, e, tb):
        if e is not None and not isinstance(e, ExperimentError) and isinstance(e, Exception):
            raise ExperimentError(self.exp_id, self.name, f"{type(e).__name__}: {e}") from e
        return False


@dataclass(frozen=True)
class Acquired:
    """Folded samples plus the clean reference they should recover to."""

    t_k: np.ndarray
    g_ref: np.ndarray
    code: np.ndarray
    y_hat: np.ndarray
    c_f: np.ndarray
    trace: object = None  # FoldTrace for the loop model


def _source_noise(cfg, sig, g_ref, period):
    sn = cfg.source_noise
    if sn is None:
        return None
    if sn.rms is not None:
        rms = sn.rms
    else:
        rms = float(np.sqrt(np.mean(g_ref ** 2))) / 10.0 ** (sn.snr_db / 20.0)
    if rms == 0:
        return None
    return signals.bandlimited_noise(rms, sig.bandlimit_Omega, period, [cfg.seed, 2])


def acquire(cfg, sig=None):
    """Produce the folded, quantized samples for ``cfg`` (an ExperimentConfig)."""
    sig = signals.make_signal(cfg.signal) if sig is None else sig
    acq, lp = cfg.acquisition, cfg.loop
    n = acq.num_samples
    if acq.model == C.IDEAL:
        t_k = acq.t0 + np.arange(n) / acq.f_s
    else:
        t_k = loop_sim.sample_times(lp, n / acq.f_s)
    g_ref = np.asarray(sig.eval(t_k), dtype=float)
    noise = _source_noise(cfg, sig, g_ref, n / acq.f_s)
    src = sig if noise is None else signals.SumSignal(sig, noise)
    if acq.model == C.IDEAL:
        g_in = g_ref if noise is None else g_ref + noise.eval(t_k)
        y = modulo_fold(g_in, lp.lam)
        if acq.noise_rms > 0:
            y = y + np.random.default_rng([cfg.seed, 3]).normal(0.0, acq.noise_rms, n)
        code, volts = loop_sim.quantize(y, acq.adc_bits, acq.adc_full_scale)
        c_f = -np.asarray(fold_count(g_in, lp.lam), dtype=np.int64)
        return Acquired(t_k, g_ref, np.atleast_1d(code), np.atleast_1d(volts), np.atleast_1d(c_f))
    tr = loop_sim.run_loop(src, lp, n / acq.f_s, record_ticks=acq.record_trace)
    return Acquired(tr.t_k, g_ref, tr.y_hat_code, tr.y_hat_volts, tr.c_f_at_sample, tr)


def _recovery_input(cfg, acq_out, sig):
    # quantization and ADC noise can push samples a little past lambda
    return recovery.RecoveryInput(acq_out.y_hat, cfg.loop.lam, cfg.acquisition.f_s, sig.bandlimit_Omega,
                                  c_f_at_sample=acq_out.c_f, tolerance=cfg.loop.lam)


def _recovery_config(cfg, sig):
    rc = cfg.recovery
    if rc.algorithm == recovery.USF and rc.order_N is None and rc.amplitude_bound is None:
        from dataclasses import replace

        bound = sig.amplitude_bound
        if cfg.source_noise is not None:
            # headroom for in-band noise on top of the signal
            bound *= 1.5
        rc = replace(rc, amplitude_bound=bound)
    return rc


@dataclass(frozen=True)
class ExperimentResult:
    report: metrics.MetricsReport
    converged: bool
    n_overfold: int
    n_counter_errors: int
    files: tuple


def _sinad_f0(cfg):
    if cfg.sinad_f0 is not None:
        return cfg.sinad_f0
    if isinstance(cfg.signal, signals.Sine):
        return cfg.signal.f_m
    raise ValueError("sinad needs sinad_f0 for non-sine signals")


def run_experiment(cfg, out_dir=None):
    """Run one experiment and write its CSVs into ``out_dir``.

    Files: ``samples.csv``, ``overfold.csv``, ``recovery.csv``,
    ``metrics.csv``, plus ``trace.csv`` (loop model with ``record_trace``)
    and ``psd.csv`` (when requested).
    """
    if isinstance(cfg, dict):
        cfg = C.parse_experiment(cfg)
    stage = _Stage(cfg.id)
    out = Path(out_dir or cfg.output_dir or ".")
    with stage("signal"):
        sig = signals.make_signal(cfg.signal)
    with stage("acquire"):
        a = acquire(cfg, sig)
    with stage("recover"):
        inp = _recovery_input(cfg, a, sig)
        rec = recovery.recover(inp, _recovery_config(cfg, sig))
    with stage("metrics"):
        snr = metrics.snr_r(a.g_ref, rec.g_tilde, rec.boundary)
        of = metrics.oversampling_factor(cfg.acquisition.f_s, 2.0 * sig.bandlimit_Omega)
        sin = metrics.sinad(rec.g_tilde, cfg.acquisition.f_s, _sinad_f0(cfg)) if "sinad" in cfg.metrics else None
        ps = metrics.psd(rec.g_tilde, cfg.acquisition.f_s) if "psd" in cfg.metrics else None
        report = metrics.MetricsReport(snr, of, sin, ps)
    events = a.trace.overfold_events if a.trace is not None else ()
    n_ce = len(a.trace.counter_error_times) if a.trace is not None else 0
    with stage("write"):
        out.mkdir(parents=True, exist_ok=True)
        files = ["samples.csv", "overfold.csv", "recovery.csv", "metrics.csv"]
        loop_sim.write_sample_table(out / "samples.csv", a.t_k, a.code, a.y_hat, a.c_f)
        loop_sim.write_overfold_csv(events, out / "overfold.csv")
        if a.trace is not None and a.trace.has_ticks:
            loop_sim.write_trace_csv(a.trace, out / "trace.csv")
            files.append("trace.csv")
        recovery.write_recovery_csv(inp, rec, out / "recovery.csv")
        extra = [
            ("experiment_id", cfg.id), ("algorithm", rec.algorithm), ("converged", int(rec.converged)),
            ("overfold_events", len(events)), ("counter_errors", n_ce),
        ]
        metrics.write_metrics_csv(report, out / "metrics.csv", extra)
        if ps is not None:
            metrics.write_psd_csv(*ps, out / "psd.csv")
            files.append("psd.csv")
    return ExperimentResult(report, rec.converged, len(events), n_ce, tuple(sorted(files)))


def simulate(cfg, out_dir):
    """Acquisition only: samples, over-fold events and (optionally) the trace."""
    if isinstance(cfg, dict):
        cfg = C.parse_experiment(cfg)
    stage = _Stage(cfg.id)
    out = Path(out_dir)
    with stage("acquire"):
        a = acquire(cfg)
    with stage("write"):
        out.mkdir(parents=True, exist_ok=True)
        loop_sim.write_sample_table(out / "samples.csv", a.t_k, a.code, a.y_hat, a.c_f)
        events = a.trace.overfold_events if a.trace is not None else ()
        loop_sim.write_overfold_csv(events, out / "overfold.csv")
        if a.trace is not None and a.trace.has_ticks:
            loop_sim.write_trace_csv(a.trace, out / "trace.csv")
    return a


# ---------------------------------------------------------------- suites


def _cell_experiment(row, alg, suite_id):
    d = C.deep_merge(row.experiment, {"recovery": {"algorithm": alg}})
    sig = signals.make_signal(signals.spec_from_dict(d["signal"]))
    d["acquisition"]["f_s"] = row.of[alg] * 2.0 * sig.bandlimit_Omega
    d["id"] = f"{suite_id}/{row.id}/{alg}"
    return d


def _run_cell(args):
    d, out = args
    try:
        r = run_experiment(d, out)
        return {"snr_r": r.report.snr_r, "of": r.report.of, "status": "ok"}
    except ExperimentError as e:
        return {"snr_r": None, "of": None, "status": f"error:{e.stage}", "message": e.message}
    except Exception as e:  # config errors surface here too
        return {"snr_r": None, "of": None, "status": "error:config", "message": f"{type(e).__name__}: {e}"}


def _db(x):
    if x is None:
        return "nan"
    return metrics._fmt_db(x)


def run_suite(suite, out_dir, parallelism=1):
    """Run every (row, algorithm) cell and write ``results.csv``.

    Cells write into ``out_dir/<row>/<algorithm>/``. Failures are recorded in
    the table (status column) and ``errors.csv``; the suite keeps going.
    """
    if isinstance(suite, dict):
        suite = C.parse_suite(suite)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for row in suite.rows:
        for alg in suite.algorithms:
            jobs.append((_cell_experiment(row, alg, suite.id), str(out / row.id / alg)))
    if parallelism <= 1:
        results = [_run_cell(j) for j in jobs]
    else:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=parallelism, mp_context=ctx) as ex:
            results = list(ex.map(_run_cell, jobs))

    header = ["row"] + list(suite.columns)
    for alg in suite.algorithms:
        header += [f"{alg}_of", f"{alg}_snr_r_db", f"{alg}_status"]
    lines, errors = [], []
    it = iter(results)
    for row in suite.rows:
        line = [row.id] + [str(row.label.get(c, "")) for c in suite.columns]
        for alg in suite.algorithms:
            r = next(it)
            line += [f"{row.of[alg]:.2f}", _db(r["snr_r"]), r["status"]]
            if r["status"] != "ok":
                errors.append((row.id, alg, r["status"].split(":", 1)[1], r.get("message", "")))
        lines.append(line)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(lines)
    with open(out / "errors.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("row", "algorithm", "stage", "message"))
        w.writerows(errors)
    return out / "results.csv"


# ---------------------------------------------------------------- PSD comparison


@dataclass(frozen=True)
class PsdComparison:
    freqs: np.ndarray
    conventional_db: np.ndarray
    modulo_db: np.ndarray
    delta_db: float  # conventional floor minus modulo floor
    snr_conventional: float
    snr_modulo: float


def run_psd(cfg, out_dir=None):
    """Conventional vs modulo acquisition of the same tone, input-referred."""
    if isinstance(cfg, dict):
        cfg = C.parse_psd(cfg)
    stage = _Stage(cfg.id)
    with stage("signal"):
        sig = signals.make_signal(cfg.signal)
        t = np.arange(cfg.num_samples) / cfg.f_s
        g = np.asarray(sig.eval(t), dtype=float)
        n = (np.random.default_rng([cfg.seed, 4]).normal(0.0, cfg.noise_rms, t.size)
             if cfg.noise_rms > 0 else np.zeros(t.size))
    with stage("acquire"):
        lam, bits = cfg.lam, cfg.bits
        # conventional: attenuate so the peak sits half a step inside full scale
        step = loop_sim.quantizer_step(bits, lam)
        gain = (lam - step) / sig.amplitude_bound
        _, v_conv = loop_sim.quantize(gain * (g + n), bits, lam)
        g_conv = v_conv / gain
        _, y_mod = loop_sim.quantize(modulo_fold(g + n, lam), bits, lam)
    with stage("recover"):
        inp = recovery.RecoveryInput(y_mod, lam, cfg.f_s, sig.bandlimit_Omega)
        rec = recovery.recover(inp, recovery.RecoveryConfig(cfg.algorithm))
    with stage("metrics"):
        f, p_conv = metrics.psd(g_conv, cfg.f_s, cfg.segment_len, cfg.overlap)
        _, p_mod = metrics.psd(rec.g_tilde, cfg.f_s, cfg.segment_len, cfg.overlap)
        f0 = cfg.signal.f_m if isinstance(cfg.signal, signals.Sine) else None
        delta = metrics.noise_floor_delta((f, p_conv), (f, p_mod), cfg.band, f0=f0, guard_bins=cfg.guard_bins)
        res = PsdComparison(f, p_conv, p_mod, delta, metrics.snr_r(g, g_conv), metrics.snr_r(g, rec.g_tilde, rec.boundary))
    if out_dir is not None:
        with stage("write"):
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            metrics.write_psd_csv(f, p_conv, out / "psd_conventional.csv")
            metrics.write_psd_csv(f, p_mod, out / "psd_modulo.csv")
            with open(out / "noise_floor.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("metric", "value"))
                w.writerow(("band_lo_hz", f"{cfg.band[0]:.2f}"))
                w.writerow(("band_hi_hz", f"{cfg.band[1]:.2f}"))
                w.writerow(("noise_floor_delta_db", _db(delta)))
                w.writerow(("snr_r_conventional_db", _db(res.snr_conventional)))
                w.writerow(("snr_r_modulo_db", _db(res.snr_modulo)))
    return res


# ---------------------------------------------------------------- calibration


def run_calibration(cfg, out_dir=None):
    if isinstance(cfg, dict):
        cfg = C.parse_calibration(cfg)
    stage = _Stage(cfg.id)
    with stage("calibration"):
        if cfg.step is not None:
            p = calibration.CalibrationParams.from_step(cfg.lam, cfg.step, cfg.q, cfg.V_LSB)
        else:
            p = calibration.CalibrationParams(cfg.lam, cfg.G_total, cfg.q, cfg.V_LSB)
        rows = calibration.calibration_table(p, cfg.c_f)
    if out_dir is not None:
        with stage("write"):
            os.makedirs(out_dir, exist_ok=True)
            calibration.write_table_csv(rows, Path(out_dir) / "calibration.csv")
    return rows
