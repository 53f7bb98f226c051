"""Command line entry point: ``kgrecbias <subcommand> --config experiment.ini``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, validate_config
from .pipeline import StageError, emit_tables, run_pipeline
from .reports import ReportError

EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_IO = 0, 1, 2, 3

# subcommand -> last pipeline stage it runs
_UNTIL = {
    "ingest": "ingest",
    "walk": "walk",
    "embed": "embed",
    "recommend": "recommend",
    "eval": "eval",
    "bias": "genre",
    "run": "genre",
}


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment INI file")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int, help="worker threads (overrides run.threads)")
    common.add_argument("--deterministic", type=_bool, help="bit-reproducible training (default true)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="kgrecbias", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "parse N-Triples dumps into interned graphs",
        "walk": "extract random-walk corpora",
        "embed": "train skip-gram embeddings",
        "recommend": "write top-N recommendation dumps",
        "eval": "precision/recall/F1 per KG",
        "bias": "country/genre bias reports (and the genre grid, if configured)",
        "run": "full pipeline followed by table rendering",
        "report": "render tables from an existing output directory",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    log = logging.getLogger("kgrecbias")
    overrides = {}
    if args.out:
        overrides["output.dir"] = args.out
    if args.threads is not None:
        overrides["run.threads"] = str(args.threads)
    if args.deterministic is not None:
        overrides["run.deterministic"] = str(args.deterministic)
    try:
        cfg = validate_config(args.config, overrides)
        if args.command == "report":
            emit_tables(cfg.out_dir)
        else:
            manifest = run_pipeline(cfg, _UNTIL[args.command])
            executed = sum(r["executed"] for r in manifest["stages"].values())
            log.info("%d stages, %d executed, %d cached", len(manifest["stages"]), executed,
                     len(manifest["stages"]) - executed)
            if args.command == "run":
                emit_tables(cfg.out_dir)
    except ConfigError as err:
        log.error("%s", err)
        return EXIT_CONFIG
    except StageError as err:
        log.error("%s", err)
        return EXIT_STAGE
    except ReportError as err:
        log.error("%s", err)
        return EXIT_STAGE
    except OSError as err:
        log.error("I/O error: %s", err)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
