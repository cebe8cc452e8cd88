"""Command line entry point.

    marketstates run --config run.yaml
    marketstates cluster --config run.yaml --k.standard=3 --restarts 20
    marketstates render --matrix out/standard/typical_states.bin --record 1 \\
        --labels out/returns.csv --output state1.svg

Any config key can be overridden with a flag of the same dotted name.
Exit codes: 0 ok, 1 config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, pipeline, render
from .config import load_config
from .errors import ConfigError, DataError, MarketStatesError, NumericalError
from .matrix_core import read_matrices, read_matrix_text

log = logging.getLogger("marketstates")

PIPELINE_COMMANDS = {
    "ingest": ("ingest",),
    "matrices": ("matrices",),
    "cluster": ("cluster",),
    "select-k": ("select-k",),
    "analyze": ("analyze",),
    "robustness": ("robustness",),
    "run": pipeline.STAGES,
}


def _split_overrides(extra: list[str]) -> list[tuple[str, str]]:
    out, i = [], 0
    while i < len(extra):
        arg = extra[i]
        if not arg.startswith("--") or len(arg) < 3:
            raise ConfigError(f"unexpected argument {arg!r}")
        key = arg[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for --{key}")
            value = extra[i + 1]
            i += 2
        out.append((key.replace("-", "_") if "." not in key else key, value))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="marketstates", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in PIPELINE_COMMANDS:
        p = sub.add_parser(name, help=f"{name} stage" if name != "run" else "full pipeline")
        p.add_argument("--config", "-c", type=Path, help="YAML run configuration")
        p.add_argument("--output", "-o", help="output directory (overrides paths.output)")
        p.add_argument("--seed", help="master seed (overrides seed)")
    p = sub.add_parser("render", help="render one matrix as an SVG heatmap")
    p.add_argument("--matrix", required=True, type=Path, help="matrix container (.bin) or delimited text")
    p.add_argument("--record", type=int, default=None,
                   help="epoch/state index to pick from a container (default: first record)")
    p.add_argument("--labels", type=Path, help="returns.csv (sector column) or one label per line")
    p.add_argument("--kind", help="override the matrix kind used for the colour scale")
    p.add_argument("--output", "-o", required=True, type=Path)
    sub.add_parser("sample-config", help="print a config for the bundled synthetic dataset")
    return parser


def _read_labels(path: Path | None, K: int) -> list[str]:
    if path is None:
        return [""] * K
    lines = path.read_text().splitlines()
    if lines and lines[0].startswith("ticker,sector,subsector"):
        return [line.split(",")[1] for line in lines[1:] if line]
    return [line.strip() for line in lines if line.strip()]


def _render(args) -> None:
    if args.matrix.suffix == ".bin":
        mats = read_matrices(args.matrix)
        if not mats:
            raise DataError(f"{args.matrix} holds no matrices")
        pick = mats[0] if args.record is None else next((m for m in mats if m.epoch == args.record), None)
        if pick is None:
            raise DataError(f"no record {args.record} in {args.matrix}")
    else:
        pick = read_matrix_text(args.matrix)
    labels = _read_labels(args.labels, pick.K)
    render.render_heatmap(pick.values, labels, args.output, args.kind or pick.kind,
                          title=f"{pick.kind} {pick.epoch}")


def sample_config() -> str:
    data = resources.files("marketstates") / "data"
    return (data / "sample_config.yaml").read_text()


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "render":
            if extra:
                raise ConfigError(f"unexpected arguments {extra}")
            _render(args)
            return 0
        if args.command == "sample-config":
            sys.stdout.write(sample_config())
            return 0
        overrides = _split_overrides(extra)
        if args.output:
            overrides.append(("paths.output", args.output))
        if args.seed is not None:
            overrides.append(("seed", args.seed))
        cfg = load_config(args.config, overrides)
        pipeline.run_stages(cfg, PIPELINE_COMMANDS[args.command])
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 1
    except DataError as exc:
        log.error("data error: %s", exc)
        return 2
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return 3
    except MarketStatesError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return 3
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
