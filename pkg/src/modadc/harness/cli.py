"""``modadc`` command line.

Exit status 0 on success; on failure 1 with ``{"experiment_id", "stage",
"message"}`` JSON on stderr.
"""
import argparse
import json
import sys

from . import config as C
from . import runner


def _fail(exp_id, stage, message):
    sys.stderr.write(json.dumps({"experiment_id": exp_id, "stage": stage, "message": message}, sort_keys=True) + "\n")
    return 1


def _load(path, want, seed):
    schema, d = C.load(path)
    if schema not in want:
        raise C.ConfigError(f"{path}: this command takes {' or '.join(want)}, got {schema!r}")
    if seed is not None:
        if schema == C.SUITE_SCHEMA:
            d.setdefault("base", {})["seed"] = seed
        else:
            d["seed"] = seed
    return schema, d


def _print_metrics(res):
    r = res.report
    print(f"snr_r_db={runner._db(r.snr_r)} of={r.of:.2f}"
          + (f" sinad_db={runner._db(r.sinad)}" if r.sinad is not None else "")
          + f" overfold_events={res.n_overfold}")


def main(argv=None):
    ap = argparse.ArgumentParser(prog="modadc", description="Modulo ADC loop simulator and recovery benchmarks.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name, help_ in (
        ("simulate", "fold a signal (samples, over-fold events, optional tick trace)"),
        ("recover", "full experiment: fold, recover, metrics"),
        ("bench", "run a benchmark suite into a results table"),
        ("psd", "conventional vs modulo noise-floor comparison"),
        ("calib-table", "emit the calibration table"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if name == "bench":
            p.add_argument("--parallel", type=int, default=1, help="worker processes")
    args = ap.parse_args(argv)

    exp_id = args.config
    try:
        if args.cmd in ("simulate", "recover"):
            _, d = _load(args.config, (C.EXPERIMENT_SCHEMA,), args.seed)
            exp_id = d.get("id", exp_id)
            if args.cmd == "simulate":
                a = runner.simulate(d, args.out)
                print(f"samples={len(a.t_k)}" + (f" overfold_events={len(a.trace.overfold_events)}"
                                                  if a.trace is not None else ""))
            else:
                _print_metrics(runner.run_experiment(d, args.out))
        elif args.cmd == "bench":
            _, d = _load(args.config, (C.SUITE_SCHEMA,), args.seed)
            exp_id = d.get("id", exp_id)
            print(runner.run_suite(d, args.out, args.parallel))
        elif args.cmd == "psd":
            _, d = _load(args.config, (C.PSD_SCHEMA,), args.seed)
            exp_id = d.get("id", exp_id)
            res = runner.run_psd(d, args.out)
            print(f"noise_floor_delta_db={runner._db(res.delta_db)}")
        else:
            _, d = _load(args.config, (C.CALIBRATION_SCHEMA,), None)
            exp_id = d.get("id", exp_id)
            runner.run_calibration(d, args.out)
    except runner.ExperimentError as e:
        return _fail(e.experiment_id, e.stage, e.message)
    except C.ConfigError as e:
        return _fail(exp_id, "config", str(e))
    except OSError as e:
        return _fail(exp_id, "io", str(e))
    return 0


if __name__ == "__main__":
    sys.exit(main())
