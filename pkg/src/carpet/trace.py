"""Dyadic-increment seminorms and boundary-layer (brick) graph energies.

Functions on a segment are measured by weighted sums of squared increments
over nested k-adic grids; functions on the ladder of brick graphs hanging
above the bottom edge are measured by per-generation edge energies.  The
restriction check compares the two with the universal constant 3, and the
cell-pair seminorm scan brackets the critical smoothness exponent against
the walk-dimension estimate.  Infinite sums are truncated with reported
geometric tail bounds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .geometry import SpecError, USCSpec, boundary_cells, level_geometry
from . import network as nw

DEFAULT_DEPTH = 6


def sigma_exponent(r: float, k: int) -> float:
    """Smoothness exponent attached to weight r: 1/2 - log r / (2 log k)."""
    if not 0 < r < 1:
        raise SpecError(f"weight r={r} outside (0, 1)")
    return 0.5 - math.log(r) / (2.0 * math.log(k))


@dataclass(frozen=True)
class DyadicFunction:
    """Samples of a segment function on the depth-M k-adic grid."""

    k: int
    M: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if len(self.values) != self.k**self.M + 1:
            raise SpecError(
                f"need {self.k ** self.M + 1} samples for k={self.k}, "
                f"M={self.M}; got {len(self.values)}"
            )

    @classmethod
    def from_callable(cls, fn, k: int, M: int) -> "DyadicFunction":
        return cls(k, M, [float(fn(Fraction(l, k**M))) for l in range(k**M + 1)])

    def at_level(self, m: int) -> np.ndarray:
        """Samples on the coarser depth-m grid (m <= M)."""
        if not 0 <= m <= self.M:
            raise SpecError(f"level {m} outside 0..{self.M}")
        return self.values[:: self.k ** (self.M - m)]

    def increments(self, m: int) -> np.ndarray:
        return np.diff(self.at_level(m))


def besov_line_seminorm(u: DyadicFunction, r: float, length=1) -> float:
    """sqrt(sum_m r^-m * sum_l increment^2), truncated at u's depth.

    For a function living on a segment of length s (parametrized over the
    unit interval), the value is scaled by s^(1/2 - sigma).  The truncation
    error of the *squared* value is bounded by `line_tail_bound` for
    Lipschitz inputs.
    """
    sigma = sigma_exponent(r, u.k)
    sq = sum(
        r**-m * float(np.sum(u.increments(m) ** 2)) for m in range(u.M + 1)
    )
    return math.sqrt(sq) * float(length) ** (0.5 - sigma)


def line_tail_bound(r: float, k: int, M: int, lip: float = 1.0) -> float:
    """Geometric bound on the squared-seminorm tail beyond depth M.

    A Lipschitz function contributes at most lip^2 * (rk)^-m at depth m,
    so the discarded tail is lip^2 * (rk)^-(M+1) / (1 - (rk)^-1).
    """
    rk = r * k
    if rk <= 1:
        return math.inf
    return lip**2 * rk ** -(M + 1) / (1.0 - 1.0 / rk)


def besov_boundary_seminorm(
    fn, spec: USCSpec, n: int, r: float, depth: int = DEFAULT_DEPTH
) -> float:
    """Root-sum-square of segment seminorms over all 4*N^n cell sides.

    `fn(x, y)` is sampled on each side's depth-`depth` grid; each side of
    length k^-n carries the length scaling of `besov_line_seminorm`.
    """
    geo = level_geometry(spec, n)
    S, D = int(geo.scale), int(geo.side_units)
    k = spec.k
    total = 0.0
    for ux, uy in zip(geo.ux.tolist(), geo.uy.tolist()):
        x0, y0 = Fraction(ux, S), Fraction(uy, S)
        side = Fraction(D, S)
        for horiz, const, lo in (
            (True, y0, x0),
            (True, y0 + side, x0),
            (False, x0, y0),
            (False, x0 + side, y0),
        ):
            ts = [lo + Fraction(l, k**depth) * side for l in range(k**depth + 1)]
            vals = [
                float(fn(t, const)) if horiz else float(fn(const, t)) for t in ts
            ]
            u = DyadicFunction(k, depth, vals)
            total += besov_line_seminorm(u, r, length=side) ** 2
    return math.sqrt(total)


# ---------------------------------------------------------------------------
# brick graphs over the bottom edge

@dataclass(frozen=True)
class BrickGraph:
    """Generations 0..M of k-adic bricks above the bottom edge.

    The generation-0 brick has vertices (0, 1/k), (1, 1/k) and
    (l/k, 1/k^2) for 0 <= l <= k, joined by one top edge, two corner
    verticals, and k bottom-path edges (k+3 edges).  Generation m scales
    that brick by k^-m onto each of the k^m bottom slots; its energy enters
    with weight r^-m.  Vertex rows 0..M+1 hold (l/k^m, 1/k^(m+1)).
    """

    k: int
    r: float
    M: int

    def __post_init__(self):
        if self.k < 2 or self.M < 0:
            raise SpecError("need k >= 2 and M >= 0")
        if not 0 < self.r < 1:
            raise SpecError(f"weight r={self.r} outside (0, 1)")

    def row_coords(self, m: int) -> list:
        """Vertex coordinates of row m (tops of generation-m bricks)."""
        k = self.k
        y = Fraction(1, k ** (m + 1))
        xs = [Fraction(0), Fraction(1)] if m == 0 else [
            Fraction(l, k**m) for l in range(k**m + 1)
        ]
        return [(x, y) for x in xs]

    def vertices(self) -> list:
        out = []
        for m in range(self.M + 2):
            out.extend(self.row_coords(m))
        return out

    def edges(self):
        """(p, q, generation) triples over all brick copies."""
        k = self.k
        for m in range(self.M + 1):
            top_y = Fraction(1, k ** (m + 1))
            bot_y = Fraction(1, k ** (m + 2))
            w = Fraction(1, k**m)
            for j in range(k**m):
                left, right = j * w, (j + 1) * w
                yield (left, top_y), (right, top_y), m
                yield (left, top_y), (left, bot_y), m
                yield (right, top_y), (right, bot_y), m
                for i in range(k):
                    a = left + i * w / k
                    yield (a, bot_y), (a + w / k, bot_y), m

    def rows_from_callable(self, fn) -> list:
        """Sample fn(x, y) on rows 0..M+1 (one array per row)."""
        return [
            np.array([float(fn(x, y)) for x, y in self.row_coords(m)])
            for m in range(self.M + 2)
        ]


def _check_rows(rows, k: int):
    if len(rows) < 2:
        raise SpecError("need vertex rows 0..M+1 with M >= 0")
    want = [2] + [k**m + 1 for m in range(1, len(rows))]
    got = [len(np.atleast_1d(row)) for row in rows]
    if got != want:
        raise SpecError(f"row lengths {got} do not match {want}")
    return [np.asarray(row, dtype=float) for row in rows]


def brick_level_norms(rows, k: int) -> list[float]:
    """Unweighted per-generation energies sqrt(sum of edge increments^2).

    Generation m uses vertex rows m (tops) and m+1 (bottoms); interior
    verticals shared by adjacent bricks are counted once per brick copy,
    matching the sum-over-copies energy.
    """
    rows = _check_rows(rows, k)
    out = []
    for m in range(len(rows) - 1):
        tops, bots = rows[m], rows[m + 1]
        corners = bots[::k]
        sq = (
            float(np.sum(np.diff(tops) ** 2))
            + float(np.sum((tops[:-1] - corners[:-1]) ** 2))
            + float(np.sum((tops[1:] - corners[1:]) ** 2))
            + float(np.sum(np.diff(bots) ** 2))
        )
        out.append(math.sqrt(sq))
    return out


def brick_graph_energy(rows, k: int, r: float) -> float:
    """Weighted ladder energy sum_m r^-m * (generation-m energy)^2."""
    if not 0 < r < 1:
        raise SpecError(f"weight r={r} outside (0, 1)")
    norms = brick_level_norms(rows, k)
    return sum(r**-m * d**2 for m, d in enumerate(norms))


def brick_tail_bound(r: float, k: int, M: int, lip: float = 1.0) -> float:
    """Ladder-energy tail beyond generation M for Lipschitz inputs."""
    rk = r * k
    if rk <= 1:
        return math.inf
    return lip**2 * (k + 3) * rk ** -(M + 1) / (1.0 - 1.0 / rk)


def check_restriction(rows, line, k: int) -> dict:
    """Bottom-edge increment norms against 3x the ladder generations.

    `line` samples the bottom-edge trace on the depth-(M+1) grid (the
    x-grid of the deepest vertex row).  For each scale n <= M the report
    compares lhs = (scale-n trace increment norm) with
    3 * sum of generation norms m = n..M, plus a slack term: twice the
    norm of the gaps between the trace and the deepest row at the scale-n
    gridpoints.  The slack is exactly what the finite ladder cannot see,
    so the inequality holds for arbitrary inputs and the slack shrinks as
    M grows for continuous ones.
    """
    rows = _check_rows(rows, k)
    M = len(rows) - 2
    line = np.asarray(line, dtype=float)
    if len(line) != k ** (M + 1) + 1:
        raise SpecError(
            f"trace needs {k ** (M + 1) + 1} samples on the depth-{M + 1} grid"
        )
    norms = brick_level_norms(rows, k)
    deepest = rows[M + 1]
    table = []
    for n in range(M + 1):
        stride = k ** (M + 1 - n)
        trace_n = line[::stride]
        lhs = math.sqrt(float(np.sum(np.diff(trace_n) ** 2)))
        gaps = trace_n - deepest[::stride]
        slack = 2.0 * math.sqrt(float(np.sum(gaps**2)))
        rhs = sum(norms[n:])
        table.append(
            {
                "n": n,
                "lhs": lhs,
                "rhs": rhs,
                "slack": slack,
                "holds": bool(lhs <= 3.0 * rhs + slack + 1e-12),
            }
        )
    return {
        "k": k,
        "M": M,
        "rows": table,
        "all_hold": all(row["holds"] for row in table),
    }


# ---------------------------------------------------------------------------
# harmonic-sample comparability

def _side_trace(values, spec: USCSpec, n: int, side: str) -> DyadicFunction:
    """Step-function trace of level-n cell values along one outer side."""
    geo = level_geometry(spec, n)
    ids = boundary_cells(spec, n)[side]
    along = geo.ux if side in ("bottom", "top") else geo.uy
    order = ids[np.argsort(along[ids])]
    cells = np.asarray(values, dtype=float)[order]
    samples = cells[np.minimum(np.arange(spec.k**n + 1), spec.k**n - 1)]
    return DyadicFunction(spec.k, n, samples)


def restriction_ratio(
    spec: USCSpec,
    levels=(3, 4),
    samples: int = 20,
    seed: int = 0,
    scheme: nw.ConductanceScheme = nw.ConductanceScheme(),
    tol: float = 1e-10,
) -> dict:
    """Trace-seminorm-to-energy ratios of random discrete harmonics.

    For each level, draws random boundary data, solves for the harmonic
    cell function, and reports [[trace on the four outer sides]]^2 divided
    by the crossing-normalized energy.  The weight r is the estimated
    renormalization ratio; truncation depth equals the level (the cell
    trace is a step function, so deeper increments are grid artifacts).
    Comparability theory promises a k-dependent constant, so the useful
    output is the spread, not the location.
    """
    rng = np.random.default_rng(seed)
    per_level = {}
    ratios_all = []
    r_hats = {}
    for n in levels:
        net = nw.build_cell_network(spec, n, scheme)
        r_hat = nw.estimate_renorm(spec, min(n, 3), scheme).r_hat
        r_hats[n] = r_hat
        cross = nw.crossing_resistance(spec, n, scheme)
        bc = boundary_cells(spec, n)
        bidx = np.unique(np.concatenate([bc[s] for s in bc]))
        ratios = []
        for _ in range(samples):
            data = rng.uniform(size=len(bidx))
            if np.ptp(data) == 0:
                continue  # constant data: both sides vanish
            h = nw.solve_fixed(net, bidx.tolist(), data, tol)
            num = sum(
                besov_line_seminorm(_side_trace(h, spec, n, side), r_hat) ** 2
                for side in ("bottom", "right", "top", "left")
            )
            den = net.energy(h) * cross
            ratios.append(num / den)
        per_level[n] = ratios
        ratios_all.extend(ratios)
    return {
        "levels": list(levels),
        "r_hat": r_hats,
        "sigma": {n: sigma_exponent(r, spec.k) for n, r in r_hats.items()},
        "ratios": per_level,
        "min": min(ratios_all),
        "max": max(ratios_all),
        "spread": max(ratios_all) / min(ratios_all),
    }


# ---------------------------------------------------------------------------
# two-index seminorm and critical-exponent scan

def besov_2inf_seminorm(values, spec: USCSpec, n: int, sigma: float) -> float:
    """Cell-pair seminorm sup_j k^(j(2*sigma+d_H)) * short-range energy.

    The double integral over pairs closer than rho is discretized at
    cell-center granularity with uniform weights N^-n per cell, and the
    sup runs over dyadic radii rho = k^-j, j = 0..n.
    """
    geo = level_geometry(spec, n)
    S, D = float(geo.scale), float(geo.side_units)
    cx = (geo.ux + D / 2) / S
    cy = (geo.uy + D / 2) / S
    f = np.asarray(values, dtype=float)
    if len(f) != spec.n_maps**n:
        raise SpecError(f"need one value per level-{n} cell")
    d_h = math.log(spec.n_maps) / math.log(spec.k)
    nc = len(f)
    sums = np.zeros(n + 1)
    block = max(1, 2**22 // max(nc, 1))
    for lo in range(0, nc, block):
        hi = min(lo + block, nc)
        dist = np.hypot(
            cx[lo:hi, None] - cx[None, :], cy[lo:hi, None] - cy[None, :]
        )
        dsq = (f[lo:hi, None] - f[None, :]) ** 2
        for j in range(n + 1):
            rho = float(spec.k) ** -j
            sums[j] += float(dsq[dist < rho].sum())
    best = 0.0
    for j in range(n + 1):
        rho = float(spec.k) ** -j
        best = max(best, rho ** (-2 * sigma - d_h) * sums[j] / nc**2)
    return math.sqrt(best)


def _harmonic_proxy(spec: USCSpec, n: int, scheme, tol: float) -> np.ndarray:
    net = nw.build_cell_network(spec, n, scheme)
    bc = boundary_cells(spec, n)
    bidx = np.unique(np.concatenate([bc[s] for s in bc]))
    geo = level_geometry(spec, n)
    data = (geo.ux[bidx] + geo.side_units / 2) / geo.scale
    return nw.solve_fixed(net, bidx.tolist(), data, tol)


def critical_sigma_scan(
    spec: USCSpec,
    n: int,
    sigmas=None,
    scheme: nw.ConductanceScheme = nw.ConductanceScheme(),
    tol: float = 1e-10,
) -> dict:
    """Growth-in-level of the cell-pair seminorm of a harmonic proxy.

    Exponents whose seminorm stays level-stable sit below the critical
    smoothness; exponents whose seminorm grows sit above.  The reported
    bracket is compared against half the estimated walk dimension.  Growth
    thresholds (10% / 25% over the scanned levels) are desk-scale artifact
    choices, not derived constants.
    """
    if n < 2:
        raise SpecError("scan needs level n >= 2")
    est = nw.estimate_renorm(spec, min(n, 3), scheme)
    target = est.d_w / 2.0
    if sigmas is None:
        sigmas = [round(target * f, 4) for f in (0.5, 0.8, 0.95, 1.05, 1.25, 1.6)]
    levels = list(range(2, n + 1))
    proxies = {m: _harmonic_proxy(spec, m, scheme, tol) for m in levels}
    rows = []
    for sigma in sigmas:
        vals = [besov_2inf_seminorm(proxies[m], spec, m, sigma) for m in levels]
        growth = vals[-1] / vals[0] if vals[0] > 0 else math.inf
        label = (
            "growing" if growth > 1.25 else "stable" if growth < 1.1
            else "ambiguous"
        )
        rows.append(
            {"sigma": sigma, "values": vals, "growth": growth, "label": label}
        )
    stable = [row["sigma"] for row in rows if row["label"] == "stable"]
    growing = [row["sigma"] for row in rows if row["label"] == "growing"]
    return {
        "levels": levels,
        "target_half_walk_dim": target,
        "rows": rows,
        "bracket": [max(stable) if stable else None,
                    min(growing) if growing else None],
        "bracket_contains_target": bool(
            stable and growing and max(stable) <= target <= min(growing)
        ),
    }
