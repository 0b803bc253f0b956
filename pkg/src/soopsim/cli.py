"""``soopsim`` command line: crlb, simulate and oracle sub-commands.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 oracle failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import (
    MomentUndefined, NyquistViolation, ScenarioParseError, ScenarioValidationError,
    SingularNormalEquations, SingularNuisanceBlock, SoopError,
)
from .experiment import (
    DEFAULT_VARIANTS, SWEEP_AXES, VARIANTS, RunConfig, cmd_crlb, cmd_oracle, cmd_simulate, render,
)
from .scenario_io import parse_scenario

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_ORACLE = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _sweep(text: str) -> tuple[str, tuple[float, ...]]:
    axis, _, grid = text.partition("=")
    if axis not in SWEEP_AXES:
        raise argparse.ArgumentTypeError(f"sweep axis must be one of {', '.join(SWEEP_AXES)}")
    try:
        values = tuple(float(v) for v in grid.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad sweep grid {grid!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("sweep grid is empty")
    return axis, values


def _variants(text: str) -> tuple[str, ...]:
    out = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = [v for v in out if v not in VARIANTS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"variants must be drawn from {', '.join(VARIANTS)}")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="soopsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("scenario", type=Path)
        sp.add_argument("--out", type=Path, help="output file (default: stdout)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    c = sub.add_parser("crlb", help="equivalent Fisher information and CRLB report")
    common(c)
    c.add_argument("--variants", type=_variants, default=DEFAULT_VARIANTS)
    c.add_argument("--offset-sweep", action="store_true", help="report EFIM change over a clock-offset grid")
    c.add_argument("--sweep", type=_sweep, help="axis=v1,v2,... with axis in " + ", ".join(SWEEP_AXES))

    s = sub.add_parser("simulate", help="Monte-Carlo estimator runs against the CRLB")
    common(s)
    s.add_argument("--trials", type=int, required=True)
    s.add_argument("--seed", type=int, default=None, help="master seed (default: scenario seed)")
    s.add_argument("--sweep", type=_sweep)
    s.add_argument("--noiseless", action="store_true")

    o = sub.add_parser("oracle", help="closed-form vs waveform and closed-form vs numeric checks")
    common(o)
    o.add_argument("--seed", type=int, default=None)
    return p


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = parse_scenario(args.scenario)
        seed = getattr(args, "seed", None)
        seed = doc.defaults.seed if seed is None else seed
        sweep = getattr(args, "sweep", None)
        cfg = RunConfig(
            args.command, trials=getattr(args, "trials", 1), seed=seed,
            sweep_axis=sweep[0] if sweep else None, sweep_grid=sweep[1] if sweep else (),
            out=str(args.out) if args.out else None, fmt=args.format,
            noiseless=getattr(args, "noiseless", False),
        )
        if args.command == "crlb":
            result = cmd_crlb(doc, cfg, args.variants, args.offset_sweep)
        elif args.command == "simulate":
            result = cmd_simulate(doc, cfg)
        else:
            result = cmd_oracle(doc, seed)
    except (ScenarioParseError, ScenarioValidationError) as exc:
        print(f"soopsim: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NyquistViolation as exc:
        print(f"soopsim: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SingularNuisanceBlock, SingularNormalEquations, MomentUndefined, ArithmeticError) as exc:
        print(f"soopsim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, SoopError) as exc:
        print(f"soopsim: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    _emit(render(result, args.format), args.out)
    if args.command == "oracle" and not result["passed"]:
        failed = [f"{r['check']}[{r['target']}]" for r in result["rows"] if r["status"] == "fail"]
        print("soopsim: oracle checks failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_ORACLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
