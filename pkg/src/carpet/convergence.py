"""Carpet families and convergence diagnostics.

A family is a parametrized sequence of designs sharing k and the map count,
approaching a limit design.  The diagnostics here compare members against
the limit: cell-average measure discrepancies, matched-grid resistance
deviations, and a lower-semicontinuity check for transported energies.
Trend labels are desk-scale classifications, never convergence proofs.
"""
from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .geometry import (
    SpecError,
    USCSpec,
    Word,
    boundary_cells,
    complete_symmetry_orbit,
    hausdorff_distance,
    index_to_word,
    level_geometry,
    match_ifs,
    validate_usc,
)
from . import network as nw

KZ_MAX = Fraction(1, 14)

# Networks compared across a family carry unit conductance on point
# contacts.  A degenerate limit can attach whole pieces of the design by
# corner touches alone where every member attaches them along overlap
# segments; dropping point contacts would rebuild the limit of the member
# networks instead of the network of the limit design, hiding exactly the
# degenerate limits these diagnostics exist to flag.
DIAGNOSTIC_SCHEME = nw.ConductanceScheme(point_contact_conductance=1.0)


def family_kz(z, name: str = "") -> USCSpec:
    """k=7 design: boundary ring plus the 8-orbit of (z + 2/7, 1/7).

    Valid for 0 <= z <= 1/14; beyond that the orbit squares overlap.  At
    z = 1/14 opposite orbit squares touch (still valid); at z = 0 the orbit
    touches the fixed diagonal squares only at corners.
    """
    if isinstance(z, str):
        z = Fraction(z)
    z = Fraction(z)
    if not 0 <= z <= KZ_MAX:
        raise SpecError(f"family parameter z={z} outside [0, 1/14]")
    spec = complete_symmetry_orbit(
        7, [(z + Fraction(2, 7), Fraction(1, 7))], name=name or f"k7-z{z}"
    )
    rep = validate_usc(spec)
    if not rep.ok:
        raise SpecError(f"k7 family z={z}: failed {rep.failed_names()}")
    return spec


@dataclass(frozen=True)
class FamilySpec:
    """A parametrized carpet sequence plus its limit parameter."""

    kind: str
    params: tuple[Fraction, ...]
    limit: Fraction

    def member(self, p) -> USCSpec:
        if self.kind != "kz":
            raise SpecError(f"unknown family kind {self.kind!r}")
        return family_kz(p)

    def limit_spec(self) -> USCSpec:
        return self.member(self.limit)

    def members(self, params=None):
        """(param, spec-or-None, skip reason) per parameter, in order."""
        out = []
        for p in (self.params if params is None else [Fraction(q) for q in params]):
            try:
                out.append((p, self.member(p), ""))
            except SpecError as exc:
                out.append((p, None, str(exc)))
        return out


def kz_family(params, limit=Fraction(1, 28)) -> FamilySpec:
    return FamilySpec("kz", tuple(Fraction(p) for p in params), Fraction(limit))


# ---------------------------------------------------------------------------
# parameter expressions

_RANGE = re.compile(r"^\s*n\s*=\s*(\d+)\s*\.\.\s*(\d+)\s*$")
_IMPLICIT_MUL = re.compile(r"(?<=[0-9n)])\s*(?=[n(])")


def parse_params(expr: str) -> list[Fraction]:
    """Evaluate "formula : n=a..b" into exact parameters.

    The formula is rational arithmetic in n, e.g. "1/28 + 1/(100n)";
    implicit multiplication like 100n is accepted.
    """
    if ":" not in expr:
        raise SpecError(f"parameter expression {expr!r} lacks ':n=a..b'")
    formula, _, rng = expr.rpartition(":")
    m = _RANGE.match(rng)
    if not m:
        raise SpecError(f"bad parameter range {rng!r} (want n=a..b)")
    lo, hi = int(m.group(1)), int(m.group(2))
    if hi < lo:
        raise SpecError(f"empty parameter range {rng!r}")
    cooked = _IMPLICIT_MUL.sub("*", formula.strip()).replace("^", "**")
    try:
        tree = ast.parse(cooked, mode="eval")
    except SyntaxError as exc:
        raise SpecError(f"bad parameter formula {formula!r}") from exc

    def ev(node, n):
        if isinstance(node, ast.Expression):
            return ev(node.body, n)
        if isinstance(node, ast.BinOp):
            ops = {ast.Add: "+", ast.Sub: "-", ast.Mult: "*", ast.Div: "/", ast.Pow: "**"}
            op = ops.get(type(node.op))
            if op is None:
                raise SpecError(f"operator not allowed in {formula!r}")
            a, b = ev(node.left, n), ev(node.right, n)
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                return a / b
            if b.denominator != 1:
                raise SpecError("only integer exponents allowed")
            return a**b.numerator
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand, n)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Constant) and isinstance(node.value, int):
            return Fraction(node.value)
        if isinstance(node, ast.Name) and node.id == "n":
            return Fraction(n)
        raise SpecError(f"disallowed token in parameter formula {formula!r}")

    try:
        return [ev(tree, n) for n in range(lo, hi + 1)]
    except ZeroDivisionError as exc:
        raise SpecError(f"parameter formula divides by zero: {formula!r}") from exc


# ---------------------------------------------------------------------------
# measure convergence

def _builtin_testfns():
    """Monomial test functions with Lipschitz constants on the unit square."""
    return {
        "1": (lambda x, y: np.ones_like(x), 0.0),
        "x1": (lambda x, y: x, 1.0),
        "x1x2": (lambda x, y: x * y, math.sqrt(2.0)),
        "x1^2x2": (lambda x, y: x * x * y, math.sqrt(5.0)),
    }


def _corner_average(spec: USCSpec, m: int, fn) -> float:
    geo = level_geometry(spec, m)
    x = geo.ux / geo.scale
    y = geo.uy / geo.scale
    return float(np.mean(fn(x, y)))


def measure_convergence(
    family: FamilySpec, params=None, m: int = 3, testfns=None
) -> dict:
    """Cell-corner average discrepancies member-vs-limit per test function.

    The self-similar measure gives every level-m cell equal weight, so the
    member and limit averages run over the same word count and need no map
    matching.  Each table carries the oscillation bound Lip(f)*sqrt(2)*k^-m
    for the discretization error of the averages.
    """
    fns = testfns or _builtin_testfns()
    limit = family.limit_spec()
    k = limit.k
    rows = []
    limit_avgs = {
        name: _corner_average(limit, m, fn) for name, (fn, _) in fns.items()
    }
    for p, spec, skip in family.members(params):
        if spec is None:
            rows.append({"param": str(p), "skipped": skip})
            continue
        entry = {"param": str(p), "discrepancy": {}}
        for name, (fn, _) in fns.items():
            avg = _corner_average(spec, m, fn)
            entry["discrepancy"][name] = abs(avg - limit_avgs[name])
        rows.append(entry)
    return {
        "family": family.kind,
        "limit": str(family.limit),
        "m": m,
        "limit_averages": limit_avgs,
        "oscillation_bound": {
            name: lip * math.sqrt(2.0) * float(k) ** -m
            for name, (_, lip) in fns.items()
        },
        "rows": rows,
    }


# ---------------------------------------------------------------------------
# matched-grid transport

def transport_word(perm: tuple[int, ...], w: Word) -> Word:
    """Word in the member carpet matched to a limit-carpet word."""
    return tuple(perm[letter - 1] + 1 for letter in w)


def transport_permutation(perm: tuple[int, ...], n_maps: int, n: int) -> np.ndarray:
    """Cell-index permutation induced by a map matching, at level n."""
    out = np.zeros(n_maps**n, dtype=np.int64)
    p = np.array(perm, dtype=np.int64)
    idx = np.arange(n_maps**n, dtype=np.int64)
    for pos in range(n):
        digit = (idx // n_maps ** (n - 1 - pos)) % n_maps
        out = out * n_maps + p[digit]
    return out


def default_grid_words(spec: USCSpec, n: int) -> list[Word]:
    """Deterministic probe words: corners, edge midpoints, near-center cell."""
    k = spec.n_maps
    corners = [(1,) * n, (spec.k,) * n]
    cells = boundary_cells(spec, n)
    words = list(corners)
    for side in ("bottom", "right", "top", "left"):
        ids = cells[side]
        words.append(index_to_word(k, n, int(ids[len(ids) // 2])))
        words.append(index_to_word(k, n, int(ids[-1])))
    geo = level_geometry(spec, n)
    center = np.argmin(
        (geo.ux + geo.side_units / 2 - geo.scale / 2) ** 2
        + (geo.uy + geo.side_units / 2 - geo.scale / 2) ** 2
    )
    words.append(index_to_word(k, n, int(center)))
    seen, out = set(), []
    for w in words:
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def resistance_convergence(
    family: FamilySpec,
    params=None,
    n: int = 3,
    gridwords: list[Word] | None = None,
    scheme: nw.ConductanceScheme = DIAGNOSTIC_SCHEME,
    tol: float = 1e-10,
    hausdorff_level: int | None = None,
) -> dict:
    """Sup deviation of matched-grid resistances from the limit carpet.

    Probe words live on the limit carpet and are transported to each member
    through the minimum-cost map matching; resistances on both sides are
    normalized by their own left-right crossing resistance.  Also reports
    per-member Hausdorff brackets (a family whose upper bounds do not
    shrink is rejected) and renormalization ratio estimates.

    The default ``DIAGNOSTIC_SCHEME`` keeps corner contacts conductive so
    that a limit design connected only through corners is compared as it
    actually is; see the module-level note.
    """
    limit = family.limit_spec()
    words = gridwords or default_grid_words(limit, n)
    hm = hausdorff_level or min(n, 3)
    limit_table = nw.metric_table(limit, n, words, scheme, tol)
    rows = []
    deviations = []
    haus_his = []
    for p, spec, skip in family.members(params):
        if spec is None:
            rows.append({"param": str(p), "skipped": skip})
            continue
        perm, cost = match_ifs(limit, spec)
        moved = [transport_word(perm, w) for w in words]
        table = nw.metric_table(spec, n, moved, scheme, tol)
        dev = float(np.max(np.abs(table - limit_table)))
        lo, hi = hausdorff_distance(spec, limit, hm)
        est = nw.estimate_renorm(spec, min(n, 3), scheme)
        deviations.append(dev)
        haus_his.append(hi)
        rows.append(
            {
                "param": str(p),
                "deviation": dev,
                "match_cost": cost,
                "hausdorff": [lo, hi],
                "r_hat": est.r_hat,
            }
        )
    if len(haus_his) >= 2 and not haus_his[-1] < haus_his[0] + 1e-12:
        raise SpecError(
            "family does not approach the limit: Hausdorff upper bounds "
            f"{haus_his[0]:.3g} -> {haus_his[-1]:.3g}"
        )
    trend = classify_trend(deviations)
    return {
        "family": family.kind,
        "limit": str(family.limit),
        "level": n,
        "gridwords": [list(w) for w in words],
        "rows": rows,
        "deviations": deviations,
        "trend": trend,
        "note": "matched-grid probe only; quantifies a canonical point "
        "subfamily, not all convergent sequences",
    }


def classify_trend(seq, decreasing_ratio: float = 0.2) -> dict:
    """Last-vs-first trend label for a nonnegative diagnostic sequence."""
    seq = [float(s) for s in seq]
    if not seq:
        return {"classification": "empty"}
    first, last = seq[0], seq[-1]
    ratio = last / first if first > 0 else (0.0 if last == 0 else math.inf)
    if last == 0 and first == 0:
        label = "zero"
    elif ratio <= decreasing_ratio:
        label = "decreasing"
    elif ratio > 0.5:
        label = "not-decreasing"
    else:
        label = "weakly-decreasing"
    return {"first": first, "last": last, "last_over_first": ratio,
            "classification": label}


# ---------------------------------------------------------------------------
# liminf energy check

def gamma_liminf_check(
    family: FamilySpec,
    params=None,
    n: int = 2,
    f_limit: np.ndarray | None = None,
    scheme: nw.ConductanceScheme = DIAGNOSTIC_SCHEME,
    tol: float = 1e-10,
) -> dict:
    """Transported-energy lower-semicontinuity check.

    Takes cell values f on the limit carpet (default: the harmonic function
    with first-coordinate boundary data), transports them to each member by
    the matched word relabeling, and compares normalized energies.  Only
    the liminf side of variational convergence, on one canonical sequence.
    """
    limit = family.limit_spec()
    limit_net = nw.build_cell_network(limit, n, scheme)
    if f_limit is None:
        boundary = np.unique(
            np.concatenate([nw.side_cells(limit, n, s) for s in (1, 2, 3, 4)])
        )
        geo = level_geometry(limit, n)
        data = (geo.ux[boundary] + geo.side_units / 2) / geo.scale
        f_limit = nw.solve_fixed(limit_net, boundary.tolist(), data, tol)
    f_limit = np.asarray(f_limit, dtype=float)
    if len(f_limit) != limit_net.n_vertices:
        raise SpecError("f_limit must give one value per limit cell")
    e_limit = limit_net.energy(f_limit) * nw.crossing_resistance(limit, n, scheme)
    rows = []
    energies = []
    for p, spec, skip in family.members(params):
        if spec is None:
            rows.append({"param": str(p), "skipped": skip})
            continue
        perm, _ = match_ifs(limit, spec)
        move = transport_permutation(perm, limit.n_maps, n)
        f_member = np.empty_like(f_limit)
        f_member[move] = f_limit
        net = nw.build_cell_network(spec, n, scheme)
        e = net.energy(f_member) * nw.crossing_resistance(spec, n, scheme)
        energies.append(e)
        rows.append({"param": str(p), "energy": e})
    holds = bool(e_limit <= min(energies) * (1 + 1e-9) + 1e-12) if energies else None
    return {
        "family": family.kind,
        "limit": str(family.limit),
        "level": n,
        "limit_energy": e_limit,
        "rows": rows,
        "liminf_holds": holds,
        "margin": (min(energies) - e_limit) if energies else None,
        "note": "liminf side only, on the transported sequence",
    }
