"""Command-line entry point.

Subcommands ``simulate``, ``norm-study`` and ``toy-dpo`` run a campaign and
write its tables; ``emit`` rebuilds the plot table of an existing campaign
directory. Every scalar or list config key is also a ``--<key>`` flag.

Exit codes: 0 success, 1 config error, 2 numerical failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .campaigns import NormFunctionRecord, PlotRow, run_campaign
from .config import EXPERIMENTS, ExperimentConfig, config_from_dict, load_config, parse_override
from .errors import ConfigError, NumericalError, OracleError, OutputError
from .outputs import (
    METADATA,
    PLOT_DATA,
    RECORD_TYPES,
    RESULTS,
    emit_outputs,
    plot_rows_from_results,
    read_metadata,
    read_table,
    write_table,
)

log = logging.getLogger("aeborda")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3
_SKIP = {"experiment"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aeborda", description="Active exploration over Borda functions.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in (*EXPERIMENTS, "emit"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML/JSON config, or a campaign's metadata.json")
        p.add_argument("--seed-offset", type=int, default=0, help="added to every seed")
        p.add_argument("-v", "--verbose", action="store_true")
        for f in fields(ExperimentConfig):
            if f.name in _SKIP:
                continue
            p.add_argument(f"--{f.name.replace('_', '-')}", dest=f"opt_{f.name}", metavar="VALUE")
    return parser


def resolve_config(args) -> ExperimentConfig:
    data = load_config(args.config).to_dict() if args.config else {}
    for f in fields(ExperimentConfig):
        text = getattr(args, f"opt_{f.name}", None)
        if text is not None:
            data[f.name] = parse_override(f.name, text)
    if args.command in EXPERIMENTS:
        data["experiment"] = args.command
    if args.seed_offset:
        data["seeds"] = [s + args.seed_offset for s in data.get("seeds", ExperimentConfig().seeds)]
    return config_from_dict(data)


def emit(args) -> int:
    """Rebuild ``plot_data.csv`` from the tables next to ``--config`` metadata."""
    if not args.config:
        raise ConfigError("emit needs --config pointing at a campaign's metadata.json")
    meta_path = Path(args.config)
    if meta_path.is_dir():
        meta_path = meta_path / METADATA
    meta = read_metadata(meta_path)
    experiment = meta.get("experiment")
    if experiment not in RECORD_TYPES:
        raise ConfigError(f"{meta_path} does not describe a known campaign")
    source = meta_path.parent
    out = Path(args.opt_out) if args.opt_out else source
    if experiment == "norm-study":
        funcs = read_table(source / "functions.csv", NormFunctionRecord)
        rows = [PlotRow(f.index, m, f"{f.context_dim}-{f.action_dim}", f.seed, getattr(f, m))
                for f in funcs for m in ("reward_norm", "borda_norm")]
    else:
        rows = plot_rows_from_results(experiment, read_table(source / RESULTS, RECORD_TYPES[experiment]))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc}") from exc
    write_table(out / PLOT_DATA, PlotRow, rows)
    print(out / PLOT_DATA)
    return EXIT_OK


def run(args) -> int:
    if args.command == "emit":
        return emit(args)
    config = resolve_config(args)
    result = run_campaign(config)
    written = emit_outputs(result, config.out)
    for path in written.values():
        print(path)
    if result.failures:
        for failure in result.failures:
            log.error("seed %s / %s failed: %s", failure["seed"], failure["strategy"], failure["error"])
        kinds = {f["kind"] for f in result.failures}
        return EXIT_NUMERICAL if "numerical" in kinds else EXIT_IO
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s: %(message)s", level=logging.WARNING)
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            log.setLevel(logging.INFO)
        return run(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (OutputError, OracleError, OSError) as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
