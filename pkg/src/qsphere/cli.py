"""Command line: ``qsphere kernel | transform | verify``.

Every command resolves a :class:`~qsphere.config.RunConfig` (defaults,
then the file named by ``QSPHERE_CONFIG``, then flags) and embeds it in
its JSON output. Failures print ``{"error", "message", "reason"}`` to
stderr and exit with 1 (suite failure), 2 (input error) or 3 (numerical
conditioning).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from .config import DEFAULT_TOLERANCES, RunConfig, config_from_env
from .errors import DomainError, GridMismatch, QSphereError
from .kernels import Discrete, Principal, SignPair, kernel, kernel_phase, lambda_of
from .lattice import GradedFunction, parse_point
from .product import VARIANTS
from .reports import dumps, to_jsonable
from .suites import SUITES, build_context, run_suite
from .transform import Density, KernelTable, SphericalField, fit_density, forward, inverse, roundtrip_report

EXAMPLES = {"function": "example_function.json", "even_delta": "even_delta.json"}
_POINT_FLAGS = ("--p0", "--p1", "--p2")


class UsageError(QSphereError):
    """The command line itself could not be parsed."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, usage=self.format_usage().strip())


# ---------------------------------------------------------------------------
# configuration


def _tolerance(text):
    name, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    try:
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"tolerance value must be a number, got {value!r}") from None


def _common(parser):
    g = parser.add_argument_group("run configuration")
    g.add_argument("--q", type=float, help="deformation parameter in (0, 1)")
    g.add_argument("--kmin", type=int, help="smallest lattice exponent in the window")
    g.add_argument("--kmax", type=int, help="largest lattice exponent in the window")
    g.add_argument("--nodes", type=int, help="Gauss-Legendre nodes on the principal series")
    g.add_argument("--nmax", type=int, help="discrete-series points kept (n = 1..nmax)")
    g.add_argument(
        "--tol",
        type=_tolerance,
        action="append",
        default=[],
        metavar="NAME=VALUE",
        help="override a tolerance; names: " + ", ".join(sorted(DEFAULT_TOLERANCES)),
    )
    g.add_argument("--phase-provider", help="unit, fitted, or a phase-provider JSON file")
    g.add_argument("--a-provider", help="none or an a-provider JSON file")
    g.add_argument("--seed", type=int, help="seed for randomized draws")
    g.add_argument("--out", type=Path, help="write the main output here instead of stdout")
    g.add_argument("--format", choices=["json", "csv"], help="output format")


def resolve_config(args, environ=None) -> RunConfig:
    """Defaults, then ``QSPHERE_CONFIG``, then command-line flags."""
    cfg = config_from_env(environ)
    updates = {
        "q": args.q,
        "k_min": args.kmin,
        "k_max": args.kmax,
        "nodes": args.nodes,
        "n_max": args.nmax,
        "phase_provider": args.phase_provider,
        "a_provider": args.a_provider,
        "seed": args.seed,
    }
    cfg = replace(cfg, **{k: v for k, v in updates.items() if v is not None})
    return cfg.with_tolerances(dict(args.tol)) if args.tol else cfg


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _csv(rows, fields):
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    wr.writeheader()
    for r in rows:
        wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DomainError(f"cannot read {path}: {exc.strerror}", path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path} is not valid JSON: {exc}", path=str(path)) from exc


def _example(name):
    return json.loads(resources.files("qsphere").joinpath("data").joinpath(EXAMPLES[name]).read_text())


# ---------------------------------------------------------------------------
# kernel


_KERNEL_FIELDS = ["series", "x", "n", "j", "signs", "p0", "re", "im", "abs", "phase_re", "phase_im", "real_factor"]


def _kernel_row(j, signs, p0, point, ctx, structural):
    value = complex(kernel(j, signs, p0, point, ctx.phases, ctx.consts, ctx.qb, structural=structural))
    if isinstance(point, Discrete):
        phase = 1 + 0j
        row = {"series": "discrete", "x": point.value(ctx.q), "n": point.n, "j": 1}
    else:
        lam = lambda_of(point, ctx.q)
        phase = complex(kernel_phase(j, signs, p0, lam, ctx.phases, ctx.consts, ctx.qb))
        row = {"series": "principal", "x": point.x, "n": "", "j": j}
    row.update(
        signs=str(signs),
        p0=p0.label(),
        re=value.real,
        im=value.imag,
        abs=abs(value),
        phase_re=phase.real,
        phase_im=phase.imag,
        real_factor=(value / phase).real,
    )
    return row


def cmd_kernel(args, cfg):
    signs = SignPair.parse(args.signs)
    p0 = parse_point(args.p0)
    _, grid, ctx = build_context(cfg)
    if args.sweep:
        points = [Principal(float(x), args.j) for x in grid.xs]
    elif args.discrete_n is not None:
        points = [Discrete(args.discrete_n)]
    elif args.x is not None:
        points = [Principal(args.x, args.j)]
    else:
        raise DomainError("give --x, --discrete-n or --sweep x")
    rows = [_kernel_row(args.j, signs, p0, pt, ctx, not args.formula) for pt in points]
    fmt = args.format or ("csv" if args.sweep else "json")
    if fmt == "csv":
        _emit(_csv(rows, _KERNEL_FIELDS), args.out)
    else:
        _emit(dumps({"config": cfg.to_json(), "rows": rows}), args.out)
    return 0


# ---------------------------------------------------------------------------
# transform


def _input_json(args):
    if args.example:
        return _example(args.example)
    if args.input is None:
        raise DomainError("give --input FILE or --example NAME")
    return _load_json(args.input)


def _block_of(f: GradedFunction):
    """Parity and common sign of a function's support, for fitting a density on it."""
    parity = "all" if (f.even and f.odd) else ("odd" if f.odd else "even")
    signs = {p.sign for p in list(f.even) + list(f.odd)}
    return parity, (signs.pop() if len(signs) == 1 else None)


def _density(args, cfg, grid, window, ctx, block):
    if args.density is not None:
        if args.fit_density:
            raise DomainError("give either --density or --fit-density, not both")
        return Density.from_json(_load_json(args.density)), ctx, None
    if not args.fit_density:
        raise DomainError("a density file (--density) or --fit-density is required")
    parity, sign = block
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        density, rep, new_ctx = fit_density(
            grid,
            window,
            ctx,
            parity=parity,
            sign=sign,
            fit_normalization=True,
            cond_limit=cfg.tol("density_cond"),
            diagonal=args.column_weights,
        )
    rep.notes.extend(str(w.message) for w in caught)
    return density, new_ctx, rep


def _values(f: GradedFunction):
    return np.array(list(f.even.values()) + list(f.odd.values()), dtype=complex)


def _restrict(f: GradedFunction, block):
    """The part of ``f`` on a (parity, sign) block."""
    parity, sign = block

    def keep(part, name):
        if parity not in (name, "all"):
            return {}
        return {p: v for p, v in part.items() if sign is None or p.sign == sign}

    return GradedFunction(f.q, f.window, keep(f.even, "even"), keep(f.odd, "odd"))


def _function_config(cfg, f: GradedFunction):
    return replace(cfg, q=f.q, k_min=f.window.k_min, k_max=f.window.k_max)


def cmd_transform(args, cfg):
    obj = _input_json(args)
    report = {"action": args.action}
    if args.action == "inverse":
        field = SphericalField.from_json(obj)
        window, grid, ctx = build_context(cfg)
        if field.grid != grid:
            raise GridMismatch(
                "spherical field grid differs from the configured grid",
                field_nodes=len(field.grid.principal),
                config_nodes=len(grid.principal),
                field_discrete=list(field.grid.discrete_ns),
                config_discrete=list(grid.discrete_ns),
            )
        density, ctx, fit = _density(args, cfg, grid, window, ctx, ("all", None))
        g = inverse(field, density, window, ctx, grid)
        report.update(config=cfg.to_json(), density_fit=fit.to_json() if fit else None)
        if args.out is not None:
            args.out.write_text(dumps(g.to_json()))
        else:
            report["function"] = g.to_json()
        sys.stdout.write(dumps(report))
        return 0

    f = GradedFunction.from_json(obj)
    cfg = _function_config(cfg, f)
    window, grid, ctx = build_context(cfg)
    report["config"] = cfg.to_json()

    if args.action == "forward":
        field = forward(f, grid, ctx)
        report["summary"] = {
            "diagonal_only": field.is_diagonal(),
            "off_diagonal_only": field.is_off_diagonal(),
            "principal_nodes": len(grid.principal),
            "discrete_points": len(grid.discrete_ns),
        }
        fmt = args.format or "json"
        text = field.to_csv() if fmt == "csv" else dumps(field.to_json())
        if args.out is not None:
            args.out.write_text(text)
        elif fmt == "csv":
            sys.stdout.write(text)
            return 0
        else:
            report["field"] = field.to_json()
        sys.stdout.write(dumps(report))
        return 0

    block = _block_of(f)
    density, ctx, fit = _density(args, cfg, grid, window, ctx, block)
    table = KernelTable(window, grid, ctx)
    g = inverse(forward(f, grid, ctx, table), density, window, ctx, grid, table)
    diff = g.scaled_sum(1.0, f, -1.0)
    norm = np.linalg.norm(_values(f)) or 1.0
    residual = float(np.linalg.norm(_values(diff)) / norm)
    inside = _restrict(diff, block)
    block_residual = float(np.linalg.norm(_values(inside)) / norm)
    leakage = float(np.linalg.norm(_values(diff.scaled_sum(1.0, inside, -1.0))) / norm)
    gram = roundtrip_report(window, grid, density, ctx, parity=block[0], sign=block[1], table=table)
    threshold = cfg.tol("roundtrip")
    report.update(
        block={"parity": block[0], "sign": block[1]},
        residual=residual,
        block_residual=block_residual,
        leakage=leakage,
        threshold=threshold,
        gram=gram.to_json(),
        density_fit=fit.to_json() if fit else None,
        column_weights=bool(args.column_weights),
    )
    report["pass"] = residual <= threshold
    if args.out is not None:
        args.out.write_text(dumps(g.to_json()))
    sys.stdout.write(dumps(report))
    return 0 if report["pass"] else 1


# ---------------------------------------------------------------------------
# verify


def _verify_csv(report):
    rows = []
    for s in report["suites"]:
        for c in s["checks"]:
            rows.append({"suite": s["suite"], "check": c["name"], "value": c["value"], "threshold": c["threshold"], "pass": c["pass"]})
        if not s["checks"]:
            rows.append({"suite": s["suite"], "check": "error", "value": "", "threshold": "", "pass": s["pass"]})
    return _csv(to_jsonable(rows), ["suite", "check", "value", "threshold", "pass"])


def cmd_verify(args, cfg):
    if args.all and args.suite:
        raise DomainError("give a suite name or --all, not both")
    if not args.all and not args.suite:
        raise DomainError("give a suite name or --all", suites=sorted(SUITES))
    names = list(SUITES) if args.all else [args.suite]
    product_kwargs = {}
    if args.variant:
        product_kwargs["variants"] = [args.variant]
    if (args.p1 is None) != (args.p2 is None):
        raise DomainError("--p1 and --p2 go together")
    if args.p1 is not None:
        if not args.variant:
            raise DomainError("a single pair needs --variant")
        product_kwargs["pair"] = (parse_point(args.p1), parse_point(args.p2))
    if args.variant or args.p1:
        if "product" not in names:
            raise DomainError("--variant/--p1/--p2 apply to the product suite only")
    suites = [run_suite(n, cfg, **(product_kwargs if n == "product" else {})) for n in names]
    report = {"config": cfg.to_json(), "suites": suites, "pass": all(s["pass"] for s in suites)}
    text = _verify_csv(report) if args.format == "csv" else dumps(report)
    _emit(text, args.out)
    return 0 if report["pass"] else 1


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = _Parser(prog="qsphere", description="q-lattice spherical functions: kernels, transforms and verification suites")
    sub = parser.add_subparsers(dest="command", required=True)

    k = sub.add_parser("kernel", help="evaluate one kernel at a spectrum point or sweep the grid")
    _common(k)
    k.add_argument("--p0", required=True, help="lattice point, e.g. -q^1 or q^-2")
    k.add_argument("--j", type=int, choices=[1, 2], default=1)
    k.add_argument("--signs", default="++", help="sign pair, one of ++ +- -+ --")
    k.add_argument("--x", type=float, help="principal series point in [0, 1]")
    k.add_argument("--discrete-n", type=int, help="discrete series point mu(q^(2n+1))")
    k.add_argument("--sweep", choices=["x"], help="emit one row per principal grid node")
    k.add_argument("--formula", action="store_true", help="evaluate the closed-form expression at discrete points instead of the structural zero")
    k.set_defaults(func=cmd_kernel)

    t = sub.add_parser("transform", help="forward / inverse transform or a round trip")
    _common(t)
    t.add_argument("action", choices=["forward", "inverse", "roundtrip"])
    src = t.add_mutually_exclusive_group()
    src.add_argument("--input", type=Path, help="graded function (forward, roundtrip) or spherical field (inverse) JSON")
    src.add_argument("--example", choices=sorted(EXAMPLES), help="use a bundled graded function")
    t.add_argument("--density", type=Path, help="density JSON")
    t.add_argument("--fit-density", action="store_true", help="fit the density on the input's support block")
    t.add_argument("--column-weights", action="store_true", help="fit one weight per matrix column instead of a scalar")
    t.set_defaults(func=cmd_transform)

    v = sub.add_parser("verify", help="run invariant suites and write a pass/fail report")
    _common(v)
    v.add_argument("suite", nargs="?", choices=sorted(SUITES))
    v.add_argument("--all", action="store_true", help="run every suite")
    v.add_argument("--variant", choices=sorted(VARIANTS), type=str.upper, help="product variant")
    v.add_argument("--p1", help="first factor's lattice point")
    v.add_argument("--p2", help="second factor's lattice point")
    v.set_defaults(func=cmd_verify)
    return parser


def _join_point_flags(argv):
    """Let ``--p1 -q`` through: a value starting with '-' would otherwise read as an option."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in _POINT_FLAGS and i + 1 < len(argv):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def main(argv=None) -> int:
    argv = _join_point_flags(list(sys.argv[1:] if argv is None else argv))
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except QSphereError as exc:
        sys.stderr.write(dumps({"error": exc.name, "message": str(exc), "reason": exc.reason}))
        return exc.exit_code
    except (OSError, ValueError) as exc:
        sys.stderr.write(dumps({"error": type(exc).__name__, "message": str(exc), "reason": {}}))
        return 2


if __name__ == "__main__":
    sys.exit(main())
