"""JSON experiment configs.

Four document kinds, told apart by the ``schema`` field:

``modadc.experiment/1``
    one signal -> acquisition -> recovery -> metrics run
``modadc.suite/1``
    a table of experiments (rows x algorithms), see :class:`SuiteConfig`
``modadc.psd/1``
    conventional-vs-modulo noise-floor comparison
``modadc.calibration/1``
    calibration table sweep

See ``configs/README.md`` for the field reference.
"""
import copy
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .. import signals
from ..loop_sim import LoopConfig
from ..recovery import RecoveryConfig

EXPERIMENT_SCHEMA = "modadc.experiment/1"
SUITE_SCHEMA = "modadc.suite/1"
PSD_SCHEMA = "modadc.psd/1"
CALIBRATION_SCHEMA = "modadc.calibration/1"
SCHEMAS = (EXPERIMENT_SCHEMA, SUITE_SCHEMA, PSD_SCHEMA, CALIBRATION_SCHEMA)

METRICS = ("snr_r", "of", "sinad", "psd")
IDEAL, LOOP = "ideal", "loop"


class ConfigError(ValueError):
    pass


def _take(d, key, where, default=..., types=None):
    if key not in d:
        if default is ...:
            raise ConfigError(f"{where}: missing field {key!r}")
        return default
    v = d[key]
    if types is not None and not isinstance(v, types):
        raise ConfigError(f"{where}.{key}: expected {types}, got {type(v).__name__}")
    return v


def _no_extra(d, allowed, where):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {extra}")


@dataclass(frozen=True)
class Acquisition:
    """How the folded samples are produced.

    ``ideal``: ``y = M_lambda(g + n_src) + n_adc`` at ``t0 + k/f_s``, then the
    quantizer; the fold count is the ideal one. ``loop``: the cycle-level
    loop with ``f_adc = f_s``.
    """

    model: str
    f_s: float
    num_samples: Optional[int] = None  # or give duration (s)
    duration: Optional[float] = None
    t0: float = 0.0
    adc_bits: int = 8
    adc_full_scale: float = 0.5
    noise_rms: float = 0.0  # white, at the ADC input
    record_trace: bool = False  # loop model: write the per-tick trace


@dataclass(frozen=True)
class SourceNoise:
    """In-band error added to the acquired signal but not to the reference.

    Exactly one of ``rms`` (V) or ``snr_db`` (relative to the signal's RMS
    over the record) is set.
    """

    rms: Optional[float] = None
    snr_db: Optional[float] = None


@dataclass(frozen=True)
class ExperimentConfig:
    id: str
    signal: object  # a signals spec
    loop: LoopConfig
    acquisition: Acquisition
    recovery: RecoveryConfig
    metrics: tuple = ("snr_r", "of")
    seed: int = 0
    source_noise: Optional[SourceNoise] = None
    sinad_f0: Optional[float] = None
    output_dir: Optional[str] = None
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def Omega(self):
        return signals.make_signal(self.signal).bandlimit_Omega


def parse_experiment(d, where="experiment"):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    schema = d.get("schema", EXPERIMENT_SCHEMA)
    if schema != EXPERIMENT_SCHEMA:
        raise ConfigError(f"{where}: schema {schema!r}, expected {EXPERIMENT_SCHEMA!r}")
    _no_extra(d, ("schema", "id", "seed", "signal", "loop", "acquisition", "recovery",
                  "metrics", "source_noise", "sinad_f0", "output_dir", "description"), where)
    exp_id = _take(d, "id", where, types=str)
    where = f"{where}[{exp_id}]"
    seed = _take(d, "seed", where, 0, int)
    try:
        sig = signals.spec_from_dict(_take(d, "signal", where, types=dict))
        signals.make_signal(sig)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}.signal: {e}") from None
    loop_d = dict(_take(d, "loop", where, {}, dict))
    acq_d = dict(_take(d, "acquisition", where, types=dict))
    _no_extra(acq_d, Acquisition.__dataclass_fields__, f"{where}.acquisition")
    try:
        acq = Acquisition(**acq_d)
    except TypeError as e:
        raise ConfigError(f"{where}.acquisition: {e}") from None
    if acq.model not in (IDEAL, LOOP):
        raise ConfigError(f"{where}.acquisition.model: expected 'ideal' or 'loop', got {acq.model!r}")
    if (acq.num_samples is None) == (acq.duration is None):
        raise ConfigError(f"{where}.acquisition: set exactly one of 'num_samples' or 'duration'")
    if not acq.f_s > 0:
        raise ConfigError(f"{where}.acquisition: need f_s > 0")
    if acq.num_samples is None:
        acq = replace(acq, num_samples=int(round(acq.duration * acq.f_s)))
    if acq.num_samples < 1:
        raise ConfigError(f"{where}.acquisition: need at least one sample")
    loop_d.setdefault("seed", seed)
    if acq.model == LOOP:
        loop_d["f_adc"] = acq.f_s
        loop_d.setdefault("adc_bits", acq.adc_bits)
        loop_d.setdefault("adc_full_scale", acq.adc_full_scale)
        loop_d.setdefault("noise_rms", acq.noise_rms)
    if "lam" not in loop_d:
        raise ConfigError(f"{where}.loop: missing field 'lam'")
    _no_extra(loop_d, LoopConfig.__dataclass_fields__, f"{where}.loop")
    try:
        loop = LoopConfig(**loop_d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}.loop: {e}") from None
    rec_d = dict(_take(d, "recovery", where, {"algorithm": "rsod"}, dict))
    _no_extra(rec_d, RecoveryConfig.__dataclass_fields__, f"{where}.recovery")
    try:
        rec = RecoveryConfig(**rec_d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}.recovery: {e}") from None
    metrics = tuple(_take(d, "metrics", where, ["snr_r", "of"], list))
    bad = [m for m in metrics if m not in METRICS]
    if bad:
        raise ConfigError(f"{where}.metrics: unknown metric(s) {bad}; known {list(METRICS)}")
    sn = _take(d, "source_noise", where, None, (dict, type(None)))
    if sn is not None:
        _no_extra(sn, ("rms", "snr_db"), f"{where}.source_noise")
        sn = SourceNoise(**sn)
        if (sn.rms is None) == (sn.snr_db is None):
            raise ConfigError(f"{where}.source_noise: set exactly one of 'rms' or 'snr_db'")
    return ExperimentConfig(
        id=exp_id, signal=sig, loop=loop, acquisition=acq, recovery=rec, metrics=metrics,
        seed=seed, source_noise=sn, sinad_f0=_take(d, "sinad_f0", where, None),
        output_dir=_take(d, "output_dir", where, None), raw=copy.deepcopy(d),
    )


def with_seed(d, seed):
    """Copy of an experiment dict with ``seed`` replaced."""
    d = copy.deepcopy(d)
    d["seed"] = int(seed)
    return d


@dataclass(frozen=True)
class SuiteRow:
    id: str
    experiment: dict  # fully merged experiment dict (without algorithm)
    of: dict  # algorithm -> oversampling factor
    label: dict = field(default_factory=dict)  # descriptor columns, e.g. rho


@dataclass(frozen=True)
class SuiteConfig:
    """Rows x algorithms.

    Every cell is ``base`` deep-merged with the row's ``overrides``, the
    algorithm, and ``f_s = OF * 2 * Omega`` for that row and algorithm.
    """

    id: str
    algorithms: tuple
    rows: tuple
    columns: tuple = ()  # descriptor columns taken from each row's label


def deep_merge(a, b):
    out = copy.deepcopy(a)
    for k, v in b.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_suite(d):
    where = "suite"
    if d.get("schema") != SUITE_SCHEMA:
        raise ConfigError(f"{where}: schema must be {SUITE_SCHEMA!r}")
    _no_extra(d, ("schema", "id", "description", "base", "algorithms", "rows", "columns"), where)
    sid = _take(d, "id", where, types=str)
    base = _take(d, "base", where, {}, dict)
    algs = tuple(_take(d, "algorithms", where, types=list))
    if not algs:
        raise ConfigError(f"{where}: empty algorithm list")
    rows = []
    seen = set()
    for i, r in enumerate(_take(d, "rows", where, types=list)):
        rw = f"{where}.rows[{i}]"
        _no_extra(r, ("id", "overrides", "of", "label"), rw)
        rid = _take(r, "id", rw, types=str)
        if rid in seen:
            raise ConfigError(f"{rw}: duplicate row id {rid!r}")
        seen.add(rid)
        of = _take(r, "of", rw, types=(dict, int, float))
        if not isinstance(of, dict):
            of = {a: of for a in algs}
        missing = [a for a in algs if a not in of]
        if missing:
            raise ConfigError(f"{rw}.of: no OF for {missing}")
        exp = deep_merge(base, _take(r, "overrides", rw, {}, dict))
        exp["id"] = f"{sid}/{rid}"
        # validate the row before any run, at the first algorithm's rate
        probe = copy.deepcopy(exp)
        try:
            omega = signals.make_signal(signals.spec_from_dict(probe.get("signal", {}))).bandlimit_Omega
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigError(f"{rw}.signal: {e}") from None
        probe.setdefault("acquisition", {})["f_s"] = float(of[algs[0]]) * 2.0 * omega
        parse_experiment(probe, rw)
        label = _take(r, "label", rw, {}, dict)
        rows.append(SuiteRow(rid, exp, {a: float(of[a]) for a in algs}, label))
    if not rows:
        raise ConfigError(f"{where}: no rows")
    return SuiteConfig(sid, algs, tuple(rows), tuple(_take(d, "columns", where, [], list)))


@dataclass(frozen=True)
class PsdConfig:
    """Conventional vs modulo acquisition of the same tone.

    The conventional path scales the input by ``full_scale / ||g||`` into a
    ``bits``-bit ADC; the modulo path digitizes the folded signal with the
    same bit depth over ``[-lambda, lambda)`` and recovers it with
    ``algorithm``. Both recovered sequences are compared in input-referred
    volts (the conventional samples are scaled back up).
    """

    id: str
    signal: object
    lam: float
    f_s: float
    num_samples: int
    bits: int = 7
    noise_rms: float = 0.0  # white, input-referred, both paths
    algorithm: str = "rsod"
    band: tuple = (5e3, 45e3)
    segment_len: int = 4096
    overlap: float = 0.5
    guard_bins: int = 3
    seed: int = 0


def parse_psd(d):
    where = "psd"
    if d.get("schema") != PSD_SCHEMA:
        raise ConfigError(f"{where}: schema must be {PSD_SCHEMA!r}")
    d = {k: v for k, v in d.items() if k not in ("schema", "description")}
    _no_extra(d, PsdConfig.__dataclass_fields__, where)
    try:
        d["signal"] = signals.spec_from_dict(_take(d, "signal", where, types=dict))
        signals.make_signal(d["signal"])
        if "band" in d:
            d["band"] = tuple(d["band"])
        cfg = PsdConfig(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None
    return cfg


@dataclass(frozen=True)
class CalibrationConfig:
    id: str
    lam: float
    q: int = 0
    V_LSB: float = 1.0
    G_total: Optional[float] = None
    step: Optional[float] = None  # alternative to G_total: raw fold step in volts
    c_f: tuple = tuple(range(1, 11))


def parse_calibration(d):
    where = "calibration"
    if d.get("schema") != CALIBRATION_SCHEMA:
        raise ConfigError(f"{where}: schema must be {CALIBRATION_SCHEMA!r}")
    d = {k: v for k, v in d.items() if k not in ("schema", "description")}
    _no_extra(d, CalibrationConfig.__dataclass_fields__, where)
    if ("G_total" in d) == ("step" in d):
        raise ConfigError(f"{where}: set exactly one of 'G_total' or 'step'")
    if "c_f" in d:
        d["c_f"] = tuple(int(c) for c in d["c_f"])
    try:
        return CalibrationConfig(**d)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from None


def load(path):
    """Read a config file; returns ``(schema, parsed)``."""
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    schema = d.get("schema")
    if schema not in SCHEMAS:
        raise ConfigError(f"{path}: schema must be one of {list(SCHEMAS)}, got {schema!r}")
    return schema, d
