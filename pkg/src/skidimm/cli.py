"""Command line interface: ``skidimm run | validate | list-scenarios``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as cfgmod
from .imm import PROBABILITY_UPDATES
from .pipeline import run_scenario

log = logging.getLogger("skidimm")

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2


def _num(v):
    # repr is locale independent and round-trips
    return repr(float(v))


def trace_header(trace, labels):
    n = len(labels)
    return (
        ["t", "true_mode", "dominant"]
        + [f"mu_{i}" for i in range(n)]
        + [f"fused_{s}" for s in trace.state_names]
        + [f"truth_{s}" for s in trace.state_names]
        + [f"lik_{i}" for i in range(n)]
    )


def trace_rows(trace):
    for k in range(len(trace.t)):
        yield (
            [f"{trace.t[k]:.6f}", str(int(trace.true_mode[k])), str(int(trace.dominant[k]))]
            + [_num(v) for v in trace.mu[k]]
            + [_num(v) for v in trace.fused[k]]
            + [_num(v) for v in trace.truth[k]]
            + [_num(v) for v in trace.likelihoods[k]]
        )


def write_csv(path, header, rows):
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def summary(result):
    cfg = result.config
    m = result.metrics
    return {
        "scenario": cfg.name,
        "family": cfg.family,
        "seed": cfg.seed,
        "probability_update": cfg.probability_update,
        "mode_labels": list(cfg.labels),
        "n_steps": int(len(result.trace.t)),
        "metrics": {
            "identification_threshold": cfg.threshold,
            "identification_dwell_s": cfg.dwell,
            "segment_latency_s": list(m.latencies),
            "mode_accuracy": m.accuracy,
            "state_rmse": dict(zip(result.trace.state_names, m.rmse)),
            "mean_max_mu": m.mean_max_mu,
        },
        "config": cfg.raw,
    }


def run_one(source, out_root, seed=None, probability_update=None, weights=False):
    """Run a scenario and write its outputs; returns the output directory."""
    cfg = cfgmod.load(source).with_overrides(seed=seed, probability_update=probability_update)
    result = run_scenario(cfg)
    out = Path(out_root) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    trace = result.trace
    write_csv(out / "trace.csv", trace_header(trace, cfg.labels), trace_rows(trace))
    if weights:
        n = cfg.n_modes
        rows = ([f"{trace.t[k]:.6f}", str(int(trace.true_mode[k]))] + [_num(v) for v in trace.mu[k]]
                for k in range(len(trace.t)))
        write_csv(out / "weights.csv", ["t", "true_mode"] + [f"mu_{cfg.labels[i]}" for i in range(n)], rows)
    (out / "summary.json").write_text(json.dumps(summary(result), indent=2) + "\n", encoding="utf-8")
    return out


def _cmd_run(args):
    out_root = args.out or os.environ.get("IMM_OUT_DIR") or "imm_out"
    for source in args.config:
        if not _exists(source):
            print(f"{source}: no such file or bundled scenario", file=sys.stderr)
            return EXIT_IO
        diags = cfgmod.validate(source)
        if diags:
            for d in diags:
                print(f"{source}: {d}", file=sys.stderr)
            return EXIT_CONFIG
    jobs = [(c, out_root, args.seed, args.probability_update, args.weights) for c in args.config]
    try:
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as ex:
                outs = list(ex.map(_run_star, jobs))
        else:
            outs = [run_one(*j) for j in jobs]
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except cfgmod.ConfigError as exc:
        for d in exc.diagnostics:
            print(d, file=sys.stderr)
        return EXIT_CONFIG
    for o in outs:
        print(o)
    return EXIT_OK


def _run_star(job):
    return run_one(*job)


def _exists(source):
    return Path(source).is_file() or source in cfgmod.list_scenarios()


def _cmd_validate(args):
    if not _exists(args.config):
        print(f"{args.config}: no such file or bundled scenario", file=sys.stderr)
        return EXIT_IO
    diags = cfgmod.validate(args.config)
    for d in diags:
        print(d)
    if diags:
        return EXIT_CONFIG
    print("ok")
    return EXIT_OK


def _cmd_list(args):
    for name in cfgmod.list_scenarios():
        print(name)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="skidimm", description="IMM traction-mode identification for skid-steer robots.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate, filter and evaluate one or more scenarios")
    r.add_argument("config", nargs="+", help="config file path or bundled scenario name")
    r.add_argument("--out", help="output root (default: $IMM_OUT_DIR or ./imm_out)")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--probability-update", choices=PROBABILITY_UPDATES, help="mode probability update variant")
    r.add_argument("--weights", action="store_true", help="also write weights.csv")
    r.add_argument("--jobs", type=int, default=1, help="run several scenarios in parallel processes")
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)

    ls = sub.add_parser("list-scenarios", help="list bundled scenarios")
    ls.set_defaults(func=_cmd_list)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
