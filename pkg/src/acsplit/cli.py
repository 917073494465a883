"""Command-line driver: ``acsplit {converge,stability,solve}``.

Options may also come from a config file of ``key = value`` lines (``#``
starts a comment); keys are the long flag names with or without the leading
dashes, and flags given on the command line win over the file.

Exit codes: 0 success, 2 invalid specification, 3 solver failure.
"""

from __future__ import annotations

import argparse
import sys

from .harness import (
    SOLVER_FAILURES,
    SpecError,
    StudySpec,
    run_convergence,
    run_solve,
    run_stability,
)
from .schemes import MIXED_CORRECTIONS, SCHEMES, SchemeConfigError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3

DEFAULTS = {
    "scheme": None,
    "dim": None,
    "nx": 32,
    "dt": "0.2,0.1,0.05,0.025",
    "t_final": 10.0,
    "nu": 1.0,
    "chi": 1.0,
    "lambda": 0.0,
    "case": None,
    "nonlinear": False,
    "reference": "fine",
    "refine": 8,
    "out": None,
    "seed": 0,
    "steps": 500,
    "timing": False,
    "mixed_correction": "matched",
    "solver": "direct",
}
BOOL_KEYS = {"nonlinear", "timing"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SpecError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # defaults are applied after merging the config file, hence SUPPRESS
    S = argparse.SUPPRESS
    common.add_argument("--config", default=S, help="file of key = value lines")
    common.add_argument("--scheme", default=S, help=f"one of: {', '.join(SCHEMES)}")
    common.add_argument("--dim", type=int, choices=(2, 3), default=S)
    common.add_argument("--nx", type=int, default=S, help="cells per axis (default 32)")
    common.add_argument("--dt", default=S, help="comma-separated; strictly decreasing for converge")
    common.add_argument("--t-final", dest="t_final", type=float, default=S, help="default 10")
    common.add_argument("--nu", type=float, default=S, help="viscosity (default 1)")
    common.add_argument("--chi", type=float, default=S, help="default 1")
    common.add_argument("--lambda", dest="lambda", type=float, default=S, help="default 0")
    common.add_argument("--case", choices=("mms2d", "mms3d"), default=S)
    common.add_argument("--nonlinear", action="store_true", default=S)
    common.add_argument("--reference", choices=("analytic", "fine"), default=S)
    common.add_argument("--refine", type=int, default=S, help="fine reference uses min(dt)/refine")
    common.add_argument("--out", default=S, help="output path (CSV, or .npz for solve)")
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--timing", action="store_true", default=S,
                        help="fill the wall_seconds column (output no longer reproducible)")
    common.add_argument("--mixed-correction", dest="mixed_correction", choices=MIXED_CORRECTIONS,
                        default=S)
    common.add_argument("--solver", choices=("direct", "cg"), default=S)

    parser = _Parser(prog="acsplit", description="Artificial-compressibility time-stepping studies.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("converge", parents=[common], help="error table and observed orders")
    stab = sub.add_parser("stability", parents=[common], help="energy trace with f = 0")
    stab.add_argument("--steps", type=int, default=S, help="default 500")
    sub.add_parser("solve", parents=[common], help="single run, final fields to .npz")
    return parser


def _parse_bool(key: str, value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise SpecError(f"config key {key!r}: expected a boolean, got {value!r}")


def read_config(path: str) -> dict:
    """Parse a flat ``key = value`` file into raw strings keyed like the CLI dests."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise SpecError(f"cannot read config file {path}: {exc.strerror or exc}") from exc
    out = {}
    for num, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"{path}:{num}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in DEFAULTS:
            raise SpecError(f"{path}:{num}: unknown key {key!r}")
        out[key] = value
    return out


_CASTS = {"dim": int, "nx": int, "t_final": float, "nu": float, "chi": float, "lambda": float,
          "refine": int, "seed": int, "steps": int}


def _coerce(values: dict) -> dict:
    out = {}
    for key, value in values.items():
        if not isinstance(value, str):
            out[key] = value
        elif key in BOOL_KEYS:
            out[key] = _parse_bool(key, value)
        elif key in _CASTS:
            try:
                out[key] = _CASTS[key](value)
            except ValueError:
                raise SpecError(f"{key}: cannot parse {value!r}") from None
        else:
            out[key] = value
    return out


def resolve_options(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    given = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        opts.update(_coerce(read_config(args.config)))
    opts.update(given)
    return opts


def parse_dt_list(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    try:
        return tuple(float(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise SpecError(f"cannot parse dt list {text!r}") from None


def spec_from_options(opts: dict, command: str = "converge") -> StudySpec:
    if not opts.get("scheme"):
        raise SpecError("--scheme is required")
    case = opts.get("case")
    dim = opts.get("dim")
    if case is None:
        case = "mms3d" if dim == 3 else "mms2d"
    return StudySpec(
        scheme=opts["scheme"], case=case, nx=opts["nx"], dts=parse_dt_list(opts["dt"]),
        t_final=opts["t_final"], nu=opts["nu"], chi=opts["chi"], lam=opts["lambda"],
        nonlinear=bool(opts["nonlinear"]), reference=opts["reference"], refine=opts["refine"],
        seed=opts["seed"], dim=dim, timing=bool(opts["timing"]),
        mixed_correction=opts["mixed_correction"], solver=opts["solver"],
    ).validate(ordered=command == "converge")


def _emit(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        opts = resolve_options(args)
        spec = spec_from_options(opts, args.command)
        if args.command == "converge":
            report = run_convergence(spec)
            _emit(report.to_csv(), opts["out"])
            for note in report.notes:
                print(f"note: {note}", file=sys.stderr)
            return EXIT_SOLVER if report.failed else EXIT_OK
        if args.command == "stability":
            traces = run_stability(spec, steps=opts["steps"])
            _emit("".join(t.to_csv() for t in traces), opts["out"])
            return EXIT_OK
        out = opts["out"] or "solution.npz"
        _, err = run_solve(spec, out)
        print(f"wrote {out}: err_u={err.velocity:.6e} err_p={err.pressure:.6e} "
              f"err_div={err.divergence:.6e}", file=sys.stderr)
        return EXIT_OK
    except (SpecError, SchemeConfigError) as exc:
        print(f"acsplit: invalid specification: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SOLVER_FAILURES as exc:
        print(f"acsplit: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"acsplit: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
