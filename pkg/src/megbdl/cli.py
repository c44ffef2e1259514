"""Command line entry point: ``megbdl <subcommand>``.

Exit codes: 0 success, 2 configuration/input error, 3 numerical failure,
4 too many failed trials.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import protocol
from .errors import BDLError
from .evaluation import identification_tree, normalize_columns, region_labels
from .io import load_head, read_matrix_csv, read_vector, save_head

log = logging.getLogger("megbdl")


def _add_config_flags(parser):
    parser.add_argument("--config", help="YAML config file (key: value pairs)")
    parser.add_argument("--preset", choices=sorted(protocol.PRESETS))
    group = parser.add_argument_group("protocol parameters (override the config file)")
    for f in dataclasses.fields(protocol.ProtocolConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            group.add_argument(flag, dest=f.name, type=str, metavar="{true,false}")
        else:
            group.add_argument(flag, dest=f.name,
                               type={"int": int, "float": float, "str": str}[f.type])


def _config_from_args(args):
    names = [f.name for f in dataclasses.fields(protocol.ProtocolConfig)]
    overrides = {k: getattr(args, k) for k in names if getattr(args, k, None) is not None}
    if args.config:
        if args.preset:
            overrides = {**protocol.PRESETS[args.preset], **overrides}
        return protocol.load_config(args.config, **overrides)
    base = protocol.PRESETS[args.preset or "desk"]
    return protocol.ProtocolConfig.from_dict({**base, **overrides}).validate()


def cmd_build_head(args):
    config = _config_from_args(args)
    space, sensors = protocol.build_head(config)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_head(out, space, sensors, config.to_dict(), config.master_seed)
    print(f"wrote {out} ({space.n_dipoles} dipoles, {sensors.n_channels} channels, "
          f"{space.n_regions} regions)")


def cmd_run_protocol(args):
    config = _config_from_args(args)
    progress = None
    if args.verbose:
        def progress(done, total):
            if done % max(1, total // 20) == 0 or done == total:
                log.info("%d/%d trials", done, total)
    result = protocol.run_protocol(config, progress=progress)
    s1, s2 = result.suite1, result.suite2
    acc = lambda s: np.trace(s.C) / max(s.total, 1)
    print(f"{s1.total} trials ({len(result.failures)} failed) -> {result.output_dir}")
    print(f"accuracy phase I {acc(s1):.3f}, phase II {acc(s2):.3f}")


def cmd_classify_one(args):
    config = _config_from_args(args)
    space, sensors = load_head(args.head)
    b = read_vector(args.query, sensors.n_channels)
    outcome = protocol.classify_query(config, space, sensors, b, args.noise_std)
    print(json.dumps(outcome.summary(), indent=1))


def cmd_report(args):
    res = protocol.report(args.result_dir, args.prune)
    for row in res["ranking"][:args.top]:
        r2 = row["recall2"]
        print(f"{row['label']:>6}  recall II {'n/a' if np.isnan(r2) else f'{r2:.3f}'}")


def cmd_tree_export(args):
    try:
        C = read_matrix_csv(Path(args.result_dir) / f"C{args.phase}.csv", dtype=int)
    except OSError as exc:
        raise protocol.ConfigurationError(f"missing result file: {exc}") from exc
    P, _ = normalize_columns(C)
    tree = identification_tree(P, args.region, region_labels(len(C)), args.prune)
    text = tree.to_dot() if args.format == "dot" else tree.to_json() + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser():
    parser = argparse.ArgumentParser(prog="megbdl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-head", help="generate and save a synthetic head model")
    _add_config_flags(p)
    p.add_argument("-o", "--output", default="head_model.json")
    p.set_defaults(func=cmd_build_head)

    p = sub.add_parser("run-protocol", help="run the simulation protocol")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run_protocol)

    p = sub.add_parser("classify-one", help="classify a single measurement vector")
    _add_config_flags(p)
    p.add_argument("--head", required=True, help="head model JSON")
    p.add_argument("--query", required=True, help="data vector (.npy or text)")
    p.add_argument("--noise-std", type=float, help="noise standard deviation of the data")
    p.set_defaults(func=cmd_classify_one)

    p = sub.add_parser("report", help="tables and trees from a result directory")
    p.add_argument("result_dir")
    p.add_argument("--prune", type=float, default=0.0)
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("tree-export", help="export one identification tree")
    p.add_argument("result_dir")
    p.add_argument("--region", type=int, required=True)
    p.add_argument("--phase", type=int, choices=(1, 2), default=2)
    p.add_argument("--format", choices=("dot", "json"), default="dot")
    p.add_argument("--prune", type=float, default=0.0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_tree_export)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except BDLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
