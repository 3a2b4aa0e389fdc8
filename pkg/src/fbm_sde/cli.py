"""Command-line front end.

Exit codes: 0 success, 1 invalid input (bad flag, number, config or Hurst
index), 2 failure while running.  CSV goes to ``--out`` or standard output.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import (
    c0_sequence,
    constants_for,
    mean_square_weight_integral,
    nd_condition_estimate,
)
from .fbm_engine import sample_paths, write_paths_csv
from .harness import (
    ExperimentConfig,
    interp_error_study,
    run_experiment,
    select_reference,
    strong_error_study,
)
from .model import SdeProblem, commutator, degeneracy_check
from .schemes import DEFAULT_SUBSTEPS, SchemeKind, solve

__all__ = ["build_parser", "flag_registry", "parse_args", "dispatch", "main", "UsageError"]

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Invalid command line or input file; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _hurst(text: str) -> float:
    try:
        h = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.5 < h < 1.0:
        raise argparse.ArgumentTypeError(f"Hurst index {h} outside the domain (1/2, 1)")
    return h


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _int_list(text: str) -> list[int]:
    return [_positive_int(t) for t in text.split(",") if t.strip()]


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _param(text: str) -> tuple[str, float]:
    name, sep, value = text.partition("=")
    if not sep or not name.strip():
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    try:
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value!r}") from None


def _scheme_list(text: str) -> list[SchemeKind]:
    try:
        return [SchemeKind(t.strip()) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_problem(sp: argparse.ArgumentParser, hurst_required: bool = False) -> None:
    g = sp.add_argument_group("problem")
    g.add_argument("--config", type=Path, help="problem JSON with hurst, x0, drift, diffusion, params")
    g.add_argument("--hurst", type=_hurst, required=hurst_required, help="Hurst index in (1/2, 1)")
    g.add_argument("--x0", type=float, help="initial value")
    g.add_argument("--drift", help="drift expression a(x)")
    g.add_argument("--diffusion", help="diffusion expression sigma(x)")
    g.add_argument("--param", type=_param, action="append", default=[], metavar="NAME=VALUE",
                   help="expression parameter (repeatable)")


def _add_out(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--out", type=Path, help="output file (directory for convergence); default stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fbm-sde", description="Strong approximation of fBm-driven SDEs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("sample", help="sample exact fBm paths as CSV")
    sp.add_argument("--hurst", type=_hurst, required=True, help="Hurst index in (1/2, 1)")
    sp.add_argument("--n", type=_positive_int, required=True, help="grid steps")
    sp.add_argument("--paths", type=_positive_int, default=1, help="number of paths")
    sp.add_argument("--seed", type=_seed, default=0, help="master seed")
    sp.add_argument("--method", choices=["circulant", "cholesky"], default="circulant")
    _add_out(sp)

    sp = sub.add_parser("solve", help="terminal values of one scheme on sampled paths")
    _add_problem(sp)
    sp.add_argument("--scheme", type=SchemeKind, choices=list(SchemeKind), default=SchemeKind.MCSHANE)
    sp.add_argument("--n", type=_positive_int, required=True, help="grid steps")
    sp.add_argument("--paths", type=_positive_int, default=1)
    sp.add_argument("--seed", type=_seed, default=0)
    sp.add_argument("--substeps", type=_positive_int, default=DEFAULT_SUBSTEPS, help="Wong-Zakai RK4 substeps")
    sp.add_argument("--method", choices=["circulant", "cholesky"], default="circulant")
    _add_out(sp)

    sp = sub.add_parser("convergence", help="Monte Carlo strong-error study")
    _add_problem(sp)
    sp.add_argument("--schemes", type=_scheme_list, required=True, help="comma separated scheme names")
    sp.add_argument("--n", type=_int_list, required=True, help="comma separated coarse step counts")
    sp.add_argument("--paths", type=_positive_int, default=1000)
    sp.add_argument("--seed", type=_seed, default=0)
    sp.add_argument("--fine-factor", type=_positive_int, default=32)
    sp.add_argument("--substeps", type=_positive_int, default=DEFAULT_SUBSTEPS)
    sp.add_argument("--method", choices=["circulant", "cholesky"], default="circulant")
    sp.add_argument("--reference", default="auto",
                    help="auto, exact_degenerate, langevin_exact, wong_zakai or coarse:<scheme>")
    _add_out(sp)

    sp = sub.add_parser("interp-error", help="weighted interpolation error of the fBm path")
    _add_problem(sp)
    sp.add_argument("--weight", choices=["langevin", "mc_weight"], default="langevin")
    sp.add_argument("--n", type=_int_list, required=True, help="comma separated coarse step counts")
    sp.add_argument("--paths", type=_positive_int, default=1000)
    sp.add_argument("--seed", type=_seed, default=0)
    sp.add_argument("--fine-factor", type=_positive_int, default=32)
    sp.add_argument("--substeps", type=_positive_int, default=DEFAULT_SUBSTEPS)
    sp.add_argument("--method", choices=["circulant", "cholesky"], default="circulant")
    _add_out(sp)

    sp = sub.add_parser("constants", help="print the error constants for a Hurst index")
    sp.add_argument("--hurst", type=_hurst, required=True, help="Hurst index in (1/2, 1)")

    sp = sub.add_parser("degeneracy", help="classify a problem by its commutator")
    _add_problem(sp)

    sp = sub.add_parser("weight", help="weight-process statistics and the predicted constant")
    _add_problem(sp)
    sp.add_argument("--paths", type=_positive_int, default=1000)
    sp.add_argument("--fine-n", type=_positive_int, default=1024, help="grid steps of the weight paths")
    sp.add_argument("--seed", type=_seed, default=0)
    sp.add_argument("--substeps", type=_positive_int, default=DEFAULT_SUBSTEPS)
    sp.add_argument("--method", choices=["circulant", "cholesky"], default="circulant")
    return parser


def _subparsers(parser: argparse.ArgumentParser) -> dict[str, argparse.ArgumentParser]:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return dict(action.choices)
    return {}


def flag_registry(parser: argparse.ArgumentParser | None = None) -> dict[str, list[str]]:
    """Every long flag accepted by each subcommand."""
    parser = parser or build_parser()
    out = {}
    for name, sp in _subparsers(parser).items():
        out[name] = sorted(
            opt for action in sp._actions for opt in action.option_strings if opt.startswith("--")
        )
    return out


def _problem(args) -> SdeProblem:
    data: dict = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
    for key in ("hurst", "x0", "drift", "diffusion"):
        v = getattr(args, key)
        if v is not None:
            data[key] = v
    if args.param:
        params = dict(data.get("params") or {})
        params.update(dict(args.param))
        data["params"] = params
    missing = [k for k in ("hurst", "x0", "drift", "diffusion") if k not in data]
    if missing:
        raise UsageError(f"problem is missing {', '.join('--' + m for m in missing)} (or give --config)")
    if "hurst" in data:
        try:
            _hurst(str(data["hurst"]))
        except argparse.ArgumentTypeError as exc:
            raise UsageError(f"--hurst: {exc}") from None
    return SdeProblem.from_dict(data)


def parse_args(argv: Sequence[str] | None = None):
    """Parse and validate; returns the namespace with ``problem``/``config`` filled in.

    Raises :class:`UsageError` for anything that maps to exit code 1.
    """
    args = build_parser().parse_args(argv)
    try:
        if hasattr(args, "config"):
            args.problem = _problem(args)
        if args.command == "convergence":
            args.experiment = ExperimentConfig(
                args.problem,
                args.schemes,
                args.n,
                fine_factor=args.fine_factor,
                paths=args.paths,
                master_seed=args.seed,
                substeps=args.substeps,
                output=None if args.out is None else str(args.out),
                method=args.method,
                reference=args.reference,
            )
            select_reference(args.experiment)
        elif args.command == "interp-error":
            args.experiment = ExperimentConfig(
                args.problem,
                [SchemeKind.WONG_ZAKAI],
                args.n,
                fine_factor=args.fine_factor,
                paths=args.paths,
                master_seed=args.seed,
                substeps=args.substeps,
                method=args.method,
            )
    except UsageError:
        raise
    except (ValueError, TypeError) as exc:
        raise UsageError(f"{args.command}: {exc}") from None
    return args


def _open_out(path: Path | None):
    if path is None:
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _cmd_sample(args) -> None:
    rows = sample_paths(args.n, args.hurst, args.seed, range(args.paths), args.method)
    fh, close = _open_out(args.out)
    try:
        write_paths_csv(rows, fh, range(args.paths))
    finally:
        if close:
            fh.close()


def _cmd_solve(args) -> None:
    p = args.problem
    values = sample_paths(args.n, p.hurst, args.seed, range(args.paths), args.method)
    res = solve(args.scheme, p, values, args.substeps)
    term = np.atleast_1d(np.asarray(res.terminal, dtype=float))
    fh, close = _open_out(args.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "scheme", "n", "terminal"])
        for i, v in enumerate(term):
            w.writerow([i, args.scheme.value, args.n, f"{v:.17g}"])
    finally:
        if close:
            fh.close()


def _cmd_convergence(args) -> None:
    cfg = args.experiment
    if args.out is None:
        strong_error_study(cfg).to_csv(sys.stdout)
        return
    art = run_experiment(cfg, args.out)
    for scheme, s in art["summaries"].items():
        print(f"{scheme}: slope={_fmt(s['slope'])} r2={_fmt(s['r2'])}")
    print(f"wrote {art['csv']}")


def _cmd_interp(args) -> None:
    rows = interp_error_study(args.experiment, args.weight)
    fh, close = _open_out(args.out)

    def g(v):
        return "" if v is None else f"{v:.17g}"

    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "mc_value", "mc_stderr", "exact_value", "mc_scaled", "exact_scaled", "target"])
        for r in rows:
            w.writerow([r.n, g(r.mc_value), g(r.mc_stderr), g(r.exact_value), g(r.mc_scaled),
                        g(r.exact_scaled), g(r.target)])
    finally:
        if close:
            fh.close()


def _cmd_constants(args) -> None:
    c = constants_for(args.hurst)
    lines = [
        ("kappa", c.kappa),
        ("zeta_neg2H", c.zeta_neg2H),
        ("beta_H", c.beta),
        ("K2", c.k2),
        ("C0_1e4", c0_sequence(10_000, args.hurst)),
    ]
    for k, v in lines:
        print(f"{k}={_fmt(v)}")


def _cmd_degeneracy(args) -> None:
    p = args.problem
    print(degeneracy_check(p).value)
    print(f"commutator_x0={_fmt(float(commutator(p, p.x0)))}")


def _cmd_weight(args) -> None:
    p = args.problem
    msw = mean_square_weight_integral(p, args.paths, args.fine_n, args.seed, args.substeps, args.method)
    nd = nd_condition_estimate(p, args.paths, args.fine_n, args.seed, args.substeps, args.method)
    beta = constants_for(p.hurst).beta
    print(f"mean_square_weight={_fmt(msw.value)}")
    print(f"mean_square_weight_stderr={_fmt(msw.stderr)}")
    print(f"nd_condition={_fmt(nd.value)}")
    print(f"nd_condition_stderr={_fmt(nd.stderr)}")
    print(f"predicted_constant={_fmt(beta * math.sqrt(max(msw.value, 0.0)))}")


_COMMANDS = {
    "sample": _cmd_sample,
    "solve": _cmd_solve,
    "convergence": _cmd_convergence,
    "interp-error": _cmd_interp,
    "constants": _cmd_constants,
    "degeneracy": _cmd_degeneracy,
    "weight": _cmd_weight,
}


def dispatch(args) -> int:
    try:
        _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 2
        print(f"fbm-sde {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    return dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
