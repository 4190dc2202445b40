"""Geodesic-distance estimation on carpet skeletons.

The level-m skeleton is the union of all level-m cell boundary segments,
turned into a weighted graph: vertices at segment endpoints, collinear
overlap breakpoints, crossings/T-junctions, and evenly spaced subdivision
points; edges between consecutive points along each maximal segment.  All
vertex coordinates are exact rationals, so point membership and path
lengths (of the form a + b*sqrt(2)) can be recomputed exactly.  The
square-union variant adds center-crossing diagonal shortcuts inside each
cell, and the two variants bracket each other within a sqrt(2) factor.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .geometry import BudgetError, SpecError, USCSpec, level_geometry

ROOT2 = math.sqrt(2.0)
VERTEX_BUDGET = 2_000_000


def _union_components(intervals):
    """Union of closed integer intervals as a sorted list of (lo, hi)."""
    out = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1]:
            if b > out[-1][1]:
                out[-1] = (out[-1][0], b)
        else:
            out.append((a, b))
    return out


@dataclass
class SkeletonGraph:
    """Weighted graph over a level-m cell-boundary skeleton."""

    spec: USCSpec
    m: int
    h: Fraction
    diagonals: bool
    scale: int
    xs: np.ndarray
    ys: np.ndarray
    graph: sp.csr_matrix
    index: dict
    rows: dict
    cols: dict
    _tree: cKDTree | None = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.xs)

    def locate(self, p) -> tuple[int, float]:
        """Vertex for a point, with the snap distance (<= h/2 enforced)."""
        q = (Fraction(p[0]), Fraction(p[1]))
        hit = self.index.get(q)
        if hit is not None:
            return hit, 0.0
        if self._tree is None:
            self._tree = cKDTree(np.column_stack([self.xs, self.ys]))
        d, i = self._tree.query([float(q[0]), float(q[1])])
        if d > float(self.h) / 2 + 1e-12:
            raise SpecError(
                f"point {p} is {d:.3g} from the skeleton; beyond the h/2 "
                f"snap tolerance {float(self.h) / 2:.3g}"
            )
        return int(i), float(d)

    def contains_point(self, p) -> bool:
        """Exact membership of a point in the skeleton's segment union."""
        x, y = Fraction(p[0]), Fraction(p[1])
        for const, axis, table in ((y, x, self.rows), (x, y, self.cols)):
            comps = table.get(const)
            if comps:
                for a, b in comps:
                    if a <= axis <= b:
                        return True
        return False


def _subdivide(a: int, b: int, scale: int, h: Fraction):
    """Points strictly between a/scale and b/scale at spacing <= h."""
    gap = Fraction(b - a, scale)
    pieces = -((-gap.numerator * h.denominator) // (gap.denominator * h.numerator))
    step = gap / pieces
    base = Fraction(a, scale)
    return [base + i * step for i in range(1, pieces)]


@lru_cache(maxsize=8)
def build_skeleton(
    spec: USCSpec,
    m: int,
    h: Fraction | None = None,
    diagonals: bool = False,
    subdivide: bool = True,
) -> SkeletonGraph:
    """Skeleton graph of all level-m cell boundaries.

    h defaults to k^-(m+1).  With `diagonals`, each cell also carries four
    half-diagonal edges through its center (the square-union shortcuts).
    Without `subdivide`, only structural vertices (corners, breakpoints,
    crossings) are kept — shortest paths are unchanged, snapping is coarser.
    """
    if h is None:
        h = Fraction(1, spec.k ** (m + 1))
    h = Fraction(h)
    if h <= 0:
        raise SpecError("spacing h must be positive")
    geo = level_geometry(spec, m)
    S, D = int(geo.scale), int(geo.side_units)
    n_cells = len(geo.ux)
    est = 4 * n_cells * (int(Fraction(D, S) / h) + 3)
    if est > VERTEX_BUDGET:
        raise BudgetError(
            f"skeleton would need ~{est} vertices (budget {VERTEX_BUDGET})"
        )

    row_iv: dict[int, list] = {}
    col_iv: dict[int, list] = {}
    for ux, uy in zip(geo.ux.tolist(), geo.uy.tolist()):
        row_iv.setdefault(uy, []).append((ux, ux + D))
        row_iv.setdefault(uy + D, []).append((ux, ux + D))
        col_iv.setdefault(ux, []).append((uy, uy + D))
        col_iv.setdefault(ux + D, []).append((uy, uy + D))
    rows = {y: _union_components(iv) for y, iv in row_iv.items()}
    cols = {x: _union_components(iv) for x, iv in col_iv.items()}

    row_events: dict[int, set] = {y: set() for y in rows}
    col_events: dict[int, set] = {x: set() for x in cols}
    for y, comps in rows.items():
        for a, b in comps:
            row_events[y].update((a, b))
    for x, comps in cols.items():
        for a, b in comps:
            col_events[x].update((a, b))
    # crossings and T-junctions: a column component passing a row at height y
    # meets every row component containing its x
    sorted_row_ys = sorted(rows)
    for x, comps in cols.items():
        for c, d in comps:
            lo = bisect.bisect_left(sorted_row_ys, c)
            hi = bisect.bisect_right(sorted_row_ys, d)
            for y in sorted_row_ys[lo:hi]:
                for a, b in rows[y]:
                    if a <= x <= b:
                        row_events[y].add(x)
                        col_events[x].add(y)
                        break

    index: dict[tuple, int] = {}
    fxs: list[Fraction] = []
    fys: list[Fraction] = []

    def vid(px: Fraction, py: Fraction) -> int:
        key = (px, py)
        got = index.get(key)
        if got is None:
            got = len(fxs)
            index[key] = got
            fxs.append(px)
            fys.append(py)
        return got

    ei: list[int] = []
    ej: list[int] = []
    wt: list[float] = []

    def chain(points, const, horizontal):
        prev = None
        for p in points:
            cur = vid(p, const) if horizontal else vid(const, p)
            if prev is not None:
                ei.append(prev)
                ej.append(cur)
                wt.append(abs(float(p - prev_p)))
            prev, prev_p = cur, p

    for y, comps in rows.items():
        fy = Fraction(y, S)
        evs = sorted(row_events[y])
        for a, b in comps:
            lo = bisect.bisect_left(evs, a)
            hi = bisect.bisect_right(evs, b)
            pts: list[Fraction] = []
            marks = evs[lo:hi]
            for u, v in zip(marks, marks[1:]):
                pts.append(Fraction(u, S))
                if subdivide:
                    pts.extend(_subdivide(u, v, S, h))
            pts.append(Fraction(marks[-1], S))
            chain(pts, fy, horizontal=True)
    for x, comps in cols.items():
        fx = Fraction(x, S)
        evs = sorted(col_events[x])
        for a, b in comps:
            lo = bisect.bisect_left(evs, a)
            hi = bisect.bisect_right(evs, b)
            pts = []
            marks = evs[lo:hi]
            for u, v in zip(marks, marks[1:]):
                pts.append(Fraction(u, S))
                if subdivide:
                    pts.extend(_subdivide(u, v, S, h))
            pts.append(Fraction(marks[-1], S))
            chain(pts, fx, horizontal=False)

    if diagonals:
        half = ROOT2 * D / (2 * S)
        for ux, uy in zip(geo.ux.tolist(), geo.uy.tolist()):
            cx = Fraction(2 * ux + D, 2 * S)
            cy = Fraction(2 * uy + D, 2 * S)
            c = vid(cx, cy)
            for dx in (0, D):
                for dy in (0, D):
                    ei.append(c)
                    ej.append(vid(Fraction(ux + dx, S), Fraction(uy + dy, S)))
                    wt.append(half)

    nv = len(fxs)
    graph = sp.csr_matrix(
        (np.array(wt + wt), (np.array(ei + ej), np.array(ej + ei))),
        shape=(nv, nv),
    )
    return SkeletonGraph(
        spec=spec,
        m=m,
        h=h,
        diagonals=diagonals,
        scale=S,
        xs=np.array([float(v) for v in fxs]),
        ys=np.array([float(v) for v in fys]),
        graph=graph,
        index=index,
        rows={Fraction(y, S): [(Fraction(a, S), Fraction(b, S)) for a, b in c]
              for y, c in rows.items()},
        cols={Fraction(x, S): [(Fraction(a, S), Fraction(b, S)) for a, b in c]
              for x, c in cols.items()},
    )


@dataclass(frozen=True)
class GeodesicEstimate:
    """Bracket for a geodesic distance: Euclidean below, skeleton above."""

    level: int
    lower: float
    upper: float
    snap_x: float
    snap_y: float
    exact_rational: Fraction | None = None
    exact_root2: Fraction | None = None

    @property
    def exact_value(self) -> float | None:
        if self.exact_rational is None:
            return None
        return float(self.exact_rational) + float(self.exact_root2) * ROOT2


def _exact_path_length(sk: SkeletonGraph, pred: np.ndarray, src: int, dst: int):
    """Re-sum a predecessor path exactly as rational + rational*sqrt(2)."""
    rat = Fraction(0)
    root2 = Fraction(0)
    cur = dst
    coords = {v: k for k, v in sk.index.items()}
    while cur != src:
        p = int(pred[cur])
        if p < 0:
            return None, None
        (x1, y1), (x2, y2) = coords[cur], coords[p]
        if x1 == x2:
            rat += abs(y1 - y2)
        elif y1 == y2:
            rat += abs(x1 - x2)
        else:
            if abs(x1 - x2) != abs(y1 - y2):
                raise RuntimeError("non-axis, non-diagonal skeleton edge")
            root2 += abs(x1 - x2)
        cur = p
    return rat, root2


def geodesic_estimate(
    spec: USCSpec,
    m: int,
    x,
    y,
    tilde: bool = False,
    h: Fraction | None = None,
    exact: bool = True,
) -> GeodesicEstimate:
    """Euclidean lower bound and skeleton upper bound between two points.

    With `tilde`, distances run on the square-union skeleton (diagonal
    shortcuts allowed).  When the Dijkstra path is recovered, its length is
    re-summed exactly and reported as rational + rational*sqrt(2).
    """
    sk = build_skeleton(spec, m, h, diagonals=tilde)
    xi, sx = sk.locate(x)
    yi, sy = sk.locate(y)
    lower = math.hypot(float(x[0]) - float(y[0]), float(x[1]) - float(y[1]))
    if xi == yi:
        return GeodesicEstimate(m, lower, 0.0, sx, sy, Fraction(0), Fraction(0))
    if exact:
        dist, pred = dijkstra(
            sk.graph, indices=[xi], return_predecessors=True, directed=False
        )
        upper = float(dist[0, yi])
        if not math.isfinite(upper):
            raise RuntimeError("skeleton is disconnected; geometry bug")
        rat, root2 = _exact_path_length(sk, pred[0], xi, yi)
        est = GeodesicEstimate(m, lower, upper, sx, sy, rat, root2)
        if abs(est.exact_value - upper) > 1e-9 * max(1.0, upper):
            raise RuntimeError("exact path length disagrees with Dijkstra")
        return est
    dist = dijkstra(sk.graph, indices=[xi], directed=False)
    return GeodesicEstimate(m, lower, float(dist[0, yi]), sx, sy)


def chain_constant(spec: USCSpec) -> float:
    """Upper bound for skeleton-vs-Euclidean distance ratios: 4N/(k-1)."""
    return 4.0 * spec.n_maps / (spec.k - 1)


def continuity_modulus(
    spec: USCSpec,
    m: int,
    etas,
    samples: int = 300,
    seed: int = 0,
    tilde: bool = False,
) -> dict:
    """Table eta -> sup of skeleton distance over sampled pairs closer
    than eta in the plane.

    The sup runs over a deterministic vertex sample, so the table is a
    lower estimate of the true modulus; it is nondecreasing in eta by
    construction and compared against the chain constant times eta.
    """
    sk = build_skeleton(spec, m, diagonals=tilde)
    rng = np.random.default_rng(seed)
    nv = sk.n_vertices
    take = min(samples, nv)
    picks = np.sort(rng.choice(nv, size=take, replace=False))
    dmat = dijkstra(sk.graph, indices=picks, directed=False)[:, picks]
    dx = sk.xs[picks][:, None] - sk.xs[picks][None, :]
    dy = sk.ys[picks][:, None] - sk.ys[picks][None, :]
    euclid = np.hypot(dx, dy)
    etas = sorted(float(e) for e in etas)
    table = []
    cconst = chain_constant(spec)
    for eta in etas:
        mask = (euclid < eta) & np.isfinite(dmat)
        sup = float(dmat[mask].max()) if mask.any() else 0.0
        table.append(
            {"eta": eta, "modulus": sup, "chain_bound": cconst * eta,
             "within_bound": sup <= cconst * eta + 1e-12}
        )
    return {
        "level": m,
        "samples": take,
        "chain_constant": cconst,
        "table": table,
    }


# ---------------------------------------------------------------------------
# cell-anchored distances (for resistance-vs-distance diagnostics)

def _anchor_ids(spec: USCSpec, n: int, sk: SkeletonGraph) -> np.ndarray:
    geo = level_geometry(spec, n)
    S = int(geo.scale)
    out = np.empty(len(geo.ux), dtype=np.int64)
    for i, (ux, uy) in enumerate(zip(geo.ux.tolist(), geo.uy.tolist())):
        out[i] = sk.index[(Fraction(ux, S), Fraction(uy, S))]
    return out


def cell_distances_from(spec: USCSpec, n: int, src: int) -> np.ndarray:
    """Skeleton distances from one cell's anchor corner to every cell's."""
    sk = build_skeleton(spec, n, subdivide=False)
    anchors = _anchor_ids(spec, n, sk)
    dist = dijkstra(sk.graph, indices=[int(anchors[src])], directed=False)
    return dist[0, anchors]


def cell_distance_matrix(spec: USCSpec, n: int, verts) -> np.ndarray:
    """Pairwise anchor-to-anchor skeleton distances for the given cells."""
    sk = build_skeleton(spec, n, subdivide=False)
    anchors = _anchor_ids(spec, n, sk)
    idx = [int(anchors[v]) for v in verts]
    dist = dijkstra(sk.graph, indices=sorted(set(idx)), directed=False)
    row_of = {v: i for i, v in enumerate(sorted(set(idx)))}
    m = len(idx)
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            out[i, j] = dist[row_of[idx[i]], idx[j]]
    return out


# ---------------------------------------------------------------------------
# equicontinuity across a family

def limit_contact_points(spec: USCSpec) -> list:
    """Per touching level-1 square pair: the contact's witness points.

    Segment contacts give both endpoints and the midpoint; point contacts
    give the single corner.  Returns (i, j, kind, points) with 1-based map
    letters i < j.
    """
    k = Fraction(1, spec.k)
    out = []
    n = spec.n_maps
    for i in range(n):
        ax, ay = spec.offsets[i]
        for j in range(i + 1, n):
            bx, by = spec.offsets[j]
            x0, x1 = max(ax, bx), min(ax + k, bx + k)
            y0, y1 = max(ay, by), min(ay + k, by + k)
            if x0 > x1 or y0 > y1:
                continue
            if x0 == x1 and y0 == y1:
                out.append((i + 1, j + 1, "point", [(x0, y0)]))
            elif x0 == x1 or y0 == y1:
                mid = ((x0 + x1) / 2, (y0 + y1) / 2)
                out.append((i + 1, j + 1, "segment", [(x0, y0), mid, (x1, y1)]))
            # overlapping interiors would have been rejected by validation
    return out


def _classify_sequence(vals, h: float, tau: float) -> str:
    first, last = vals[0], vals[-1]
    if last < max(10.0 * h, first / 10.0):
        return "to-zero"
    if last > tau:
        return "bounded-below"
    return "inconclusive"


def equicontinuity_diagnostic(
    family,
    params=None,
    m: int = 2,
    tau: float | None = None,
    h: Fraction | None = None,
) -> dict:
    """Square-union geodesic distances at transported contact points.

    For each touching pair of limit squares and each witness point p, the
    preimages x, y under the two maps are pushed through the matched member
    maps and their square-union skeleton distance is recorded per family
    member.  Sequences heading to zero support equicontinuity; a sequence
    staying above tau (default k^-2) is failure evidence.  Finite witness
    sets can miss extreme pairs, so this is sampling evidence, not proof.
    """
    from .geometry import hausdorff_distance, match_ifs

    limit = family.limit_spec()
    if tau is None:
        tau = float(limit.k) ** -2
    contacts = limit_contact_points(limit)
    members = [t for t in family.members(params)]
    live = [(p, s) for p, s, skip in members if s is not None]
    skipped = [{"param": str(p), "skipped": skip} for p, s, skip in members if s is None]
    if len(live) < 2:
        raise SpecError("need at least two valid family members")
    # level-2 brackets: level 1 is too coarse to order nearby members
    haus_hi = [hausdorff_distance(s, limit, 2)[1] for _, s in live]
    if haus_hi[-1] > haus_hi[0] + 1e-12:
        raise SpecError(
            "family does not approach the limit: Hausdorff upper bounds "
            f"{haus_hi[0]:.3g} -> {haus_hi[-1]:.3g}"
        )

    per_member = []
    for p, spec in live:
        perm, _ = match_ifs(limit, spec)
        sk = build_skeleton(spec, m, h, diagonals=True)
        pairs = []
        for i, j, kind, pts in contacts:
            ii, jj = perm[i - 1], perm[j - 1]
            oxi, oyi = spec.offsets[ii]
            oxj, oyj = spec.offsets[jj]
            axi, ayi = limit.offsets[i - 1]
            axj, ayj = limit.offsets[j - 1]
            for px, py in pts:
                # preimage in the pattern square, then the member's image
                xi = (oxi + (px - axi), oyi + (py - ayi))
                yj = (oxj + (px - axj), oyj + (py - ayj))
                pairs.append((sk.locate(xi), sk.locate(yj)))
        srcs = sorted({a for (a, _), _ in pairs})
        dist = dijkstra(sk.graph, indices=srcs, directed=False)
        row = {s: i for i, s in enumerate(srcs)}
        vals = [float(dist[row[a], b]) for (a, _), (b, _) in pairs]
        per_member.append((p, vals))

    h_eff = float(Fraction(1, limit.k ** (m + 1)) if h is None else h)
    report_pairs = []
    idx = 0
    any_below, all_zero = False, True
    for i, j, kind, pts in contacts:
        for px, py in pts:
            seq = [vals[idx] for _, vals in per_member]
            cls = _classify_sequence(seq, h_eff, tau)
            any_below |= cls == "bounded-below"
            all_zero &= cls == "to-zero"
            report_pairs.append(
                {
                    "maps": [i, j],
                    "kind": kind,
                    "point": [str(px), str(py)],
                    "distances": seq,
                    "classification": cls,
                }
            )
            idx += 1
    return {
        "limit": limit.name,
        "level": m,
        "tau": tau,
        "snap_tolerance": h_eff / 2,
        "params": [str(p) for p, _ in per_member],
        "skipped": skipped,
        "pairs": report_pairs,
        "all_to_zero": bool(all_zero),
        "any_bounded_below": bool(any_below),
        "note": "finite witness set; sampling evidence only",
    }
