"""Command-line front end tying the laboratory together.

Every subcommand assembles one JSON document: the echoed configuration,
the package version, and the result table, serialized with sorted keys
so that identical configurations reproduce byte-identical payloads; the
wall-clock timestamp lives in its own top-level field and is the only
part that varies between runs.  `--json` prints the document, `--out`
writes it (or an SVG for `render`), and without either a short human
summary is printed.  Exit codes: 0 success, 1 validation failure or
exceeded budget, 2 usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from datetime import datetime, timezone
from fractions import Fraction

import numpy as np

from . import __version__
from . import diffusion as df
from . import network as nw
from .convergence import (
    gamma_liminf_check,
    kz_family,
    measure_convergence,
    parse_params,
    resistance_convergence,
)
from .geodesic import equicontinuity_diagnostic, geodesic_estimate
from .geometry import (
    BudgetError,
    SpecError,
    load_spec,
    render_svg,
    validate_usc,
)
from .trace import critical_sigma_scan, restriction_ratio


# ---------------------------------------------------------------------------
# argument parsing helpers

def _levels_arg(text: str) -> list[int]:
    """'3..5' -> [3,4,5]; '1,4' -> [1,4]; '2' -> [2]."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            out = list(range(int(lo), int(hi) + 1))
        else:
            out = [int(p) for p in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad level range {text!r}") from exc
    if not out or any(n < 1 for n in out):
        raise argparse.ArgumentTypeError(f"levels must be >= 1, got {text!r}")
    return out


def _vertex_arg(text: str):
    """'w:113' -> word (1,1,3); 'i:42' -> index; '1/2,1/3' -> exact point."""
    try:
        if text.startswith("w:"):
            return tuple(int(ch) for ch in text[2:])
        if text.startswith("i:"):
            return int(text[2:])
        xs, ys = text.split(",")
        return (Fraction(xs), Fraction(ys))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"bad vertex {text!r}") from exc


def _point_arg(text: str) -> tuple[Fraction, Fraction]:
    v = _vertex_arg(text)
    if not (isinstance(v, tuple) and len(v) == 2 and isinstance(v[0], Fraction)):
        raise argparse.ArgumentTypeError(f"{text!r} is not an x,y point")
    return v


def _fraction_arg(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"bad rational {text!r}") from exc


def _scheme_from(args) -> nw.ConductanceScheme:
    return nw.ConductanceScheme(
        getattr(args, "scheme", "overlap"),
        getattr(args, "point_conductance", 0.0),
    )


def _clean(obj):
    """JSON-ready copy: numpy scalars/arrays, Fractions, dataclasses."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _clean(dataclasses.asdict(obj))
    return obj


# ---------------------------------------------------------------------------
# subcommand handlers: each returns (result dict, exit code)

def _cmd_validate(args):
    spec = load_spec(args.spec)
    rep = validate_usc(spec)
    result = {
        "name": spec.name,
        "k": spec.k,
        "n_maps": spec.n_maps,
        "ok": rep.ok,
        "checks": [
            {"name": c.name, "passed": c.passed, "detail": c.detail}
            for c in rep.checks
        ],
    }
    return result, 0 if rep.ok else 1


class _UsageError(Exception):
    """Bad flag combination — reported like an argparse error (exit 2)."""


def _cmd_render(args):
    if not args.out:
        raise _UsageError("render needs --out for the SVG file")
    spec = load_spec(args.spec)
    svg = render_svg(spec, args.level)
    with open(args.out, "w") as fh:
        fh.write(svg)
    return {
        "name": spec.name,
        "level": args.level,
        "cells": spec.n_maps**args.level,
        "svg_path": str(args.out),
        "svg_bytes": len(svg),
    }, 0


def _cmd_network(args):
    spec = load_spec(args.spec)
    net = nw.build_cell_network(spec, args.level, _scheme_from(args))
    c = net.strengths()
    return {
        "name": spec.name,
        "level": args.level,
        "scheme": {
            "mode": net.scheme.mode,
            "point_contact_conductance": net.scheme.point_contact_conductance,
        },
        "n_vertices": net.n_vertices,
        "n_edges": net.n_edges,
        "total_conductance": float(net.cond.sum()),
        "strength_min": float(c.min()),
        "strength_max": float(c.max()),
    }, 0


def _cmd_renorm(args):
    spec = load_spec(args.spec)
    est = nw.estimate_renorm(
        spec, args.levels, _scheme_from(args), richardson=args.richardson
    )
    return {"name": spec.name, **est.as_dict()}, 0


def _cmd_metric(args):
    spec = load_spec(args.spec)
    scheme = _scheme_from(args)
    if (args.x is None) != (args.y is None):
        raise SpecError("give both --x and --y, or neither")
    if args.x is not None:
        value = nw.resistance_metric_est(spec, args.level, args.x, args.y, scheme)
        return {
            "name": spec.name,
            "level": args.level,
            "x": str(args.x),
            "y": str(args.y),
            "distance": value,
            "normalization": "left-right crossing resistance = 1",
        }, 0
    from .convergence import default_grid_words

    words = default_grid_words(spec, args.level)
    table = nw.metric_table(spec, args.level, words, scheme)
    return {
        "name": spec.name,
        "level": args.level,
        "words": [list(w) for w in words],
        "table": table,
        "normalization": "left-right crossing resistance = 1",
    }, 0


def _cmd_geodesic(args):
    spec = load_spec(args.spec)
    est = geodesic_estimate(
        spec, args.level, args.src, args.dst, tilde=args.tilde
    )
    return {
        "name": spec.name,
        "tilde": args.tilde,
        "from": str(args.src),
        "to": str(args.dst),
        **_clean(est),
        "exact_value": est.exact_value,
    }, 0


def _cmd_equicont(args):
    fam = kz_family(parse_params(args.params))
    rep = equicontinuity_diagnostic(fam, m=args.level, tau=args.tau)
    return rep, 0


def _cmd_besov(args):
    spec = load_spec(args.spec)
    scheme = _scheme_from(args)
    result = {
        "name": spec.name,
        "scan": critical_sigma_scan(spec, args.level, scheme=scheme),
    }
    if args.ratio:
        lv = (max(2, args.level - 1), args.level)
        result["restriction_ratio"] = restriction_ratio(
            spec, levels=lv, samples=args.samples, seed=args.seed, scheme=scheme
        )
    return result, 0


def _cmd_family_sweep(args):
    fam = kz_family(parse_params(args.params))
    return {
        "measure": measure_convergence(fam, m=args.level + 1),
        "resistance": resistance_convergence(fam, n=args.level),
        "energy": gamma_liminf_check(fam, n=args.level),
    }, 0


def _cmd_walk(args):
    spec = load_spec(args.spec)
    rep = df.simulate_crossings(
        spec,
        args.levels,
        walks=args.walks,
        seed=args.seed,
        scheme=_scheme_from(args),
        workers=args.workers,
    )
    return rep, 0


def _cmd_resolvent(args):
    spec = load_spec(args.spec)
    net = nw.build_cell_network(spec, args.level, _scheme_from(args))
    sol = df.resolvent_kernel(net, args.measure, args.alpha, args.x)
    result = {
        "name": spec.name,
        "level": args.level,
        "alpha": sol.alpha,
        "measure": args.measure,
        "x": sol.x,
        "u_at_x": float(sol.u[sol.x]),
        "u_min": float(sol.u.min()),
        "u_max": float(sol.u.max()),
        "identity_residual": abs(
            sol.alpha * float(sol.u @ sol.measure) - 1.0
        ),
    }
    if args.full:
        result["u"] = sol.u
    return result, 0


def _cmd_report(args):
    spec = load_spec(args.spec)
    scheme = _scheme_from(args)
    rep = validate_usc(spec)
    n = args.level
    result = {
        "name": spec.name,
        "validation": {
            "ok": rep.ok,
            "checks": [
                {"name": c.name, "passed": c.passed} for c in rep.checks
            ],
        },
        "renorm": nw.estimate_renorm(spec, max(2, n), scheme).as_dict(),
        "crossings": df.simulate_crossings(
            spec,
            list(range(1, max(2, n) + 1)),
            walks=args.walks,
            seed=args.seed,
            scheme=scheme,
            workers=args.workers,
        ),
        "heat": df.heat_kernel_diag(
            nw.build_cell_network(spec, n, scheme)
        ),
        "corner_geodesic": _clean(
            geodesic_estimate(
                spec, min(n, 2), (Fraction(0), Fraction(0)),
                (Fraction(1), Fraction(1)),
            )
        ),
    }
    return result, 0 if rep.ok else 1


# ---------------------------------------------------------------------------
# parser assembly

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carpet",
        description="Numerical laboratory for square-based self-similar carpets",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print the JSON document")
    common.add_argument("--out", help="write the JSON (or SVG) to this path")
    common.add_argument(
        "--workers", type=int, default=1, help="worker count; results never depend on it"
    )

    net_flags = argparse.ArgumentParser(add_help=False)
    net_flags.add_argument(
        "--scheme", choices=("overlap", "uniform"), default="overlap"
    )
    net_flags.add_argument(
        "--point-conductance", type=float, default=0.0,
        help="conductance for corner contacts (default 0 = excluded)",
    )

    def cmd(name, handler, parents, help, **spec_kw):
        p = sub.add_parser(name, parents=parents, help=help)
        if spec_kw.get("spec", True):
            p.add_argument("--spec", required=True, help="TOML design file")
        p.set_defaults(handler=handler)
        return p

    cmd("validate", _cmd_validate, [common], "run the four design checks")

    p = cmd("render", _cmd_render, [common], "write an SVG of the level cells")
    p.add_argument("--level", type=int, default=2)

    p = cmd("network", _cmd_network, [common, net_flags], "cell-network summary")
    p.add_argument("--level", type=int, default=2)

    p = cmd("renorm", _cmd_renorm, [common, net_flags],
            "crossing resistances and exponent estimates")
    p.add_argument("--levels", type=int, default=4, help="deepest level")
    p.add_argument("--richardson", action="store_true")

    p = cmd("metric", _cmd_metric, [common, net_flags],
            "normalized resistance metric")
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--x", type=_vertex_arg)
    p.add_argument("--y", type=_vertex_arg)

    p = cmd("geodesic", _cmd_geodesic, [common],
            "geodesic distance bracket between two points")
    p.add_argument("--level", type=int, default=2)
    p.add_argument("--from", dest="src", type=_point_arg, required=True)
    p.add_argument("--to", dest="dst", type=_point_arg, required=True)
    p.add_argument("--tilde", action="store_true",
                   help="allow diagonal shortcuts through cells")

    p = cmd("equicont", _cmd_equicont, [common],
            "family equicontinuity diagnostic", spec=False)
    p.add_argument("--family", choices=("kz",), default="kz")
    p.add_argument("--params", required=True,
                   help="parameter expression, e.g. '1/(10n):n=1..8'")
    p.add_argument("--level", type=int, default=2)
    p.add_argument("--tau", type=float, default=None)

    p = cmd("besov", _cmd_besov, [common, net_flags],
            "smoothness-exponent scan (optionally trace/energy ratios)")
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--ratio", action="store_true")
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)

    p = cmd("family-sweep", _cmd_family_sweep, [common],
            "measure, resistance, and energy family diagnostics", spec=False)
    p.add_argument("--family", choices=("kz",), default="kz")
    p.add_argument("--params", required=True)
    p.add_argument("--level", type=int, default=2)

    p = cmd("walk", _cmd_walk, [common, net_flags],
            "crossing-time Monte Carlo and walk dimension")
    p.add_argument("--levels", type=_levels_arg, default=[1, 2])
    p.add_argument("--walks", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)

    p = cmd("resolvent", _cmd_resolvent, [common, net_flags],
            "resolvent kernel at a base vertex")
    p.add_argument("--level", type=int, default=2)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--x", type=_vertex_arg, default=0)
    p.add_argument("--measure", choices=df.MEASURES, default="uniform")
    p.add_argument("--full", action="store_true", help="include the kernel vector")

    p = cmd("report", _cmd_report, [common, net_flags],
            "combined validation/renorm/walk/heat summary")
    p.add_argument("--level", type=int, default=2)
    p.add_argument("--walks", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)

    return parser


# ---------------------------------------------------------------------------
# document emission

# workers stays out of the echo: results never depend on it, and the
# payload must be byte-identical across worker counts
_CONFIG_SKIP = {"handler", "command", "json", "out", "workers"}


def _config_echo(args) -> dict:
    cfg = {}
    for key, val in sorted(vars(args).items()):
        if key in _CONFIG_SKIP:
            continue
        cfg[key] = _clean(val)
    return cfg


def _summary_lines(command: str, result: dict) -> list[str]:
    lines = [f"carpet {command}"]
    for key, val in result.items():
        if isinstance(val, (str, int, float, bool)) or val is None:
            lines.append(f"  {key}: {val}")
        elif isinstance(val, dict) and "classification" in val:
            lines.append(f"  {key}: {val['classification']}")
    if len(lines) == 1:
        lines.append("  (structured result; use --json)")
    return lines[:14]


def run_command(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        result, code = args.handler(args)
    except _UsageError as exc:
        print(f"carpet {args.command}: {exc}", file=sys.stderr)
        return 2
    except (
        SpecError,
        BudgetError,
        nw.DisconnectedError,
        RuntimeError,
        OSError,       # unreadable spec / output path
        ValueError,    # malformed TOML and kin
    ) as exc:
        print(f"carpet {args.command}: {exc}", file=sys.stderr)
        return 1
    # Everything deterministic lives under "payload"; the timestamp sits
    # beside it so reproducibility checks can strip a single line.
    doc = {
        "payload": {
            "command": args.command,
            "version": __version__,
            "config": _config_echo(args),
            "result": _clean(result),
        },
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if args.out and args.command != "render":
        with open(args.out, "w") as fh:
            fh.write(text)
    if args.json:
        sys.stdout.write(text)
    else:
        print("\n".join(_summary_lines(args.command, doc["payload"]["result"])))
    return code


def main(argv=None) -> int:
    return run_command(argv)


if __name__ == "__main__":
    sys.exit(main())
