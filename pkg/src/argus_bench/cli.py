"""``argus-bench`` command line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
"""
import argparse
import logging
import platform
import sys
import time
from pathlib import Path

from . import __version__
from .exceptions import ArgusError, StageError
from .pipeline import COMMANDS, RunConfig
from .tokens import COMPRESSIONS
from .volume import PROFILES

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config; flags override its fields")
    common.add_argument("--seed", type=int)
    common.add_argument("--profile", choices=sorted(PROFILES))
    common.add_argument("--compression", choices=COMPRESSIONS)
    common.add_argument("--connector", type=int, choices=(1, 2), help="connector MLP depth")
    common.add_argument("--out", help="run directory (default: current directory)")
    common.add_argument("--method", help="vision pretraining: mae, flip, mae_then_flip or none")
    common.add_argument("--schedule", help="connector schedule: 1stage, 2stage-frozen, 2stage-unfrozen")
    common.add_argument("--mask-ratio", dest="mask_ratio", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="argus-bench", description="Desk-scale 3D CT report generation benchmark.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or "").strip().split("\n")[0] or None)
    return parser


def _setup_logging(out, verbose):
    root = logging.getLogger("argus_bench")
    root.setLevel(logging.DEBUG)
    root.handlers.clear()
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.INFO if verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root.addHandler(console)
    Path(out).mkdir(parents=True, exist_ok=True)
    logfile = logging.FileHandler(Path(out) / "run.log", encoding="utf-8")
    logfile.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root.addHandler(logfile)
    return root


def main(argv=None):
    args = build_parser().parse_args(argv)
    flags = {k: getattr(args, k) for k in ("seed", "profile", "compression", "connector", "out", "method",
                                            "schedule", "mask_ratio")}
    try:
        cfg = RunConfig.build(args.config, flags)
    except OSError as exc:
        print(f"argus-bench: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArgusError, TypeError, ValueError) as exc:
        print(f"argus-bench: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    log = _setup_logging(cfg.out, args.verbose)
    log.info("start %s argv=%s host=%s", args.command, argv if argv is not None else sys.argv[1:], platform.node())
    started = time.monotonic()
    try:
        result = COMMANDS[args.command](cfg)
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except StageError as exc:
        code = EXIT_IO if isinstance(exc.cause, OSError) else EXIT_VALIDATION
        log.error("%s", exc)
        return code
    except (ArgusError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    log.info("done %s in %.2fs: %s", args.command, time.monotonic() - started, result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
