"""Command-line entry point: ``mixgrad {run,rate,fit,eval}``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from .experiments import ExperimentError, emit_report, eval_model, fit_file, load_config_file, rate_study, run_experiment
from .features import CapacityError
from .io import DataFormatError, SchemaError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("mixgrad")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixgrad", description="Mixed-gradient nonparametric regression experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, out_help):
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help=out_help)
        p.add_argument("--threads", type=int, default=None, help="parallel replications (results do not depend on it)")

    common(sub.add_parser("run", help="run a simulation experiment"), "report directory")
    common(sub.add_parser("rate", help="run the synthetic rate study"), "report directory")
    p = sub.add_parser("fit", help="fit a dataset CSV")
    common(p, "model file to write")
    p.add_argument("data", help="dataset CSV")
    p = sub.add_parser("eval", help="MSE of a saved model against a reference")
    common(p, "optional JSON file for the result")
    p.add_argument("model", help="model file")
    return ap


def _experiment(args):
    cfg, raw = load_config_file(args.config)
    if cfg is None:
        raise ValueError(f"{args.config}: no 'experiment' key")
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.threads is not None:
        over["threads"] = args.threads
    if over:
        cfg = dataclasses.replace(cfg, **over)
    out = args.out or raw.get("output") or "results"
    return cfg, out


def _print_aggregates(report) -> None:
    for a in report.aggregates:
        ratio = a["ratio_to_p0"]
        ratio = f"{ratio:.4f}" if ratio != "" else "-"
        print(f"{a['experiment']} n={a['n']} q={a['q']} rho={a['rho']} p={a['p']}: mean mse {a['mean_mse']:.6g} (se {a['se_mse']:.3g}) ratio {ratio}")


def _dispatch(args) -> int:
    if args.verb == "run":
        cfg, out = _experiment(args)
        report = run_experiment(cfg)
        emit_report(report, out)
        _print_aggregates(report)
        print(f"wrote {out}")
    elif args.verb == "rate":
        cfg, out = _experiment(args)
        rr = rate_study(cfg)
        emit_report(rr.report, out, slopes=rr.slopes)
        _print_aggregates(rr.report)
        for p, s in rr.slopes.items():
            print(f"p={p}: log-log slope {s:.4f}")
        print(f"wrote {out}")
    elif args.verb == "fit":
        _, raw = load_config_file(args.config)
        out = args.out or "model.json"
        summary = fit_file(args.data, raw, out, seed=args.seed)
        for k, v in summary.items():
            print(f"{k}: {v}")
        print(f"wrote {out}")
    else:
        _, raw = load_config_file(args.config)
        res = eval_model(args.model, raw, seed=args.seed)
        print(f"mse {res['mse']:.6g} (se {res['se']:.3g}) against {res['reference']} on {res['n_test']} points")
        if args.out:
            with open(args.out, "w") as fh:
                json.dump(res, fh)
                fh.write("\n")
    return EXIT_OK


def _numeric(exc: BaseException) -> bool:
    while exc is not None:
        if isinstance(exc, (np.linalg.LinAlgError, FloatingPointError, ArithmeticError)):
            return True
        exc = exc.__cause__
    return False


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if _numeric(exc) else EXIT_CONFIG
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError, KeyError, OSError, DataFormatError, SchemaError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
