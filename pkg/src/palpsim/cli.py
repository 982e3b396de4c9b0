"""Command-line interface: headless batch runs, report generation, and the
interactive operator service."""

import argparse
import json
import os
import sys

from . import harness as hz
from . import phantom as ph
from .config import RunConfig, load_config, save_config, to_dict


def _load_phantom(path):
    if path is None or path == "default_neck":
        return ph.load_default_neck()
    return ph.load_phantom(path)


def cmd_run(args):
    model = _load_phantom(args.phantom)
    config = load_config(args.config) if args.config else RunConfig()
    out_dir = args.out
    log_dir = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_dir = os.path.join(out_dir, "logs")
    records = hz.run_batch(args.mode, model, config=config, trials=args.trials,
                           base_seed=args.seed, jobs=args.jobs, log_dir=log_dir)
    table = hz.summarize(records)
    print(hz.format_summary(table))
    if out_dir:
        path = os.path.join(out_dir, "records.csv")
        existing = hz.load_records(path) if os.path.exists(path) else []
        hz.save_records(existing + records, path)
        save_config(config, os.path.join(out_dir, "config.json"))
        print(f"records appended to {path}")
    return 0


def cmd_report(args):
    path = os.path.join(args.in_dir, "records.csv")
    records = hz.load_records(path)
    if not records:
        print("no records found", file=sys.stderr)
        return 1
    table, containment = hz.report(records)
    text = hz.format_summary(table, containment)
    print(text)
    out_csv = os.path.join(args.in_dir, "summary.csv")
    with open(out_csv, "w", encoding="utf-8") as fh:
        fh.write("mode,n,error_mean_mm,error_std_mm,time_mean_s,time_std_s,"
                 "male_containment_pct,female_containment_pct\n")
        for mode, row in table.items():
            male, female = containment[mode]
            fh.write(f"{mode},{row['n']},{row['error_mean']:.6g},"
                     f"{row['error_std']:.6g},{row['time_mean']:.6g},"
                     f"{row['time_std']:.6g},{male:.6g},{female:.6g}\n")
    with open(os.path.join(args.in_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    print(f"summary written to {out_csv}")
    return 0


def cmd_serve(args):
    from .service import serve
    model = _load_phantom(args.phantom)
    config = load_config(args.config) if args.config else RunConfig()
    serve(model, config, host=args.host, port=args.port)
    return 0


def cmd_config(args):
    if args.write:
        save_config(RunConfig(), args.write)
        print(f"default config written to {args.write}")
    else:
        json.dump(to_dict(RunConfig()), sys.stdout, indent=2)
        print()
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="palpsim",
        description="Simulated remote-palpation suite for cricothyrotomy "
                    "landmark identification")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run headless trials of one mode")
    run.add_argument("--mode", type=int, choices=(1, 2, 3, 4), required=True)
    run.add_argument("--phantom", default=None,
                     help="phantom JSON file (default: bundled default_neck)")
    run.add_argument("--trials", type=int, default=10)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--config", default=None, help="run config JSON")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--jobs", type=int, default=1,
                     help="parallel trial processes")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="summarize recorded trials")
    rep.add_argument("--in", dest="in_dir", required=True)
    rep.set_defaults(func=cmd_report)

    srv = sub.add_parser("serve", help="start the interactive operator service")
    srv.add_argument("--port", type=int, default=8400)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--phantom", default=None)
    srv.add_argument("--config", default=None)
    srv.set_defaults(func=cmd_serve)

    cfg = sub.add_parser("config", help="print or write the default config")
    cfg.add_argument("--write", default=None)
    cfg.set_defaults(func=cmd_config)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
