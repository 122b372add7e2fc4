"""Modulo ADC toolkit: fold algebra, a cycle-level model of the folding loop,
recovery algorithms, metrics and a benchmark harness."""
from .modulo import fold_count, modulo_fold, residual, rho
from .signals import Comm, PeriodicSinc, Sine, Triangular, make_signal, sample
from .calibration import CalibrationParams, calibrated_feedback, calibration_table
from .loop_sim import LoopConfig, detect_overfold, max_fold_count, run_loop
from .recovery import RecoveryConfig, RecoveryInput, direct_recover, recover
from .metrics import noise_floor_delta, psd, sinad, snr_r

__version__ = "0.1.0"
