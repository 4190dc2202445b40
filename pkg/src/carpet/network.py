"""Resistance networks on level-n carpet cells.

Vertices are the level-n cells (one per word); segment contacts carry
conductance.  The default scheme weights each contact by its shared-segment
length times k^n, so a full shared side has conductance 1 and off-grid
partial contacts get proportionally less; corner contacts are excluded
unless given an explicit conductance.  On top sit Dirichlet solves,
effective resistances between cell sets, the across-square renormalization
ratio sequence with its exponent estimates, and boundary/metric checks.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .geometry import (
    SpecError,
    USCSpec,
    Word,
    boundary_cells,
    cell_contacts,
    index_to_word,
    level_geometry,
    point_cell,
    symmetry_cell_permutation,
    word_to_index,
)

DIRECT_SOLVE_LIMIT = 2000  # vertices; above this, use preconditioned CG


class DisconnectedError(RuntimeError):
    """Network split into components after dropping corner contacts."""


@dataclass(frozen=True)
class ConductanceScheme:
    """How contacts become conductances.

    mode "overlap": conductance = shared length * k^n in (0, 1]; "uniform":
    1 per segment contact.  Corner contacts get point_contact_conductance
    (default 0 = excluded).
    """

    mode: str = "overlap"
    point_contact_conductance: float = 0.0

    def __post_init__(self):
        if self.mode not in ("overlap", "uniform"):
            raise SpecError(f"unknown conductance mode {self.mode!r}")
        if self.point_contact_conductance < 0:
            raise SpecError("point contact conductance must be >= 0")


class CellNetwork:
    """Weighted graph on the level-n cells of a design."""

    def __init__(self, spec, n, scheme, n_vertices, ei, ej, cond):
        self.spec = spec
        self.n = n
        self.scheme = scheme
        self.n_vertices = n_vertices
        self.ei = ei
        self.ej = ej
        self.cond = cond
        self._lap = None

    @property
    def n_edges(self) -> int:
        return len(self.ei)

    def laplacian(self) -> sp.csr_matrix:
        if self._lap is None:
            n = self.n_vertices
            rows = np.concatenate([self.ei, self.ej, self.ei, self.ej])
            cols = np.concatenate([self.ej, self.ei, self.ei, self.ej])
            vals = np.concatenate([-self.cond, -self.cond, self.cond, self.cond])
            self._lap = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return self._lap

    def strengths(self) -> np.ndarray:
        """Total conductance c_x at each vertex."""
        c = np.zeros(self.n_vertices)
        np.add.at(c, self.ei, self.cond)
        np.add.at(c, self.ej, self.cond)
        return c

    def energy(self, u: np.ndarray) -> float:
        """Dirichlet energy sum c_e (du_e)^2."""
        d = u[self.ei] - u[self.ej]
        return float(np.sum(self.cond * d * d))

    def vertex_word(self, idx: int) -> Word:
        return index_to_word(self.spec.n_maps, self.n, idx)


@lru_cache(maxsize=16)
def build_cell_network(
    spec: USCSpec, n: int, scheme: ConductanceScheme = ConductanceScheme()
) -> CellNetwork:
    """Network from level-n cell contacts under a conductance scheme.

    Raises DisconnectedError when dropping corner contacts (conductance 0)
    splits the graph — reported, never silently patched.
    """
    cs = cell_contacts(spec, n)
    if bool((cs.kind == 2).any()):
        raise SpecError("design has overlapping cells; validate it first")
    seg = cs.kind == 1
    ei = cs.ii[seg]
    ej = cs.jj[seg]
    if scheme.mode == "overlap":
        cond = cs.seg_units[seg] / cs.scale * float(spec.k) ** n
    else:
        cond = np.ones(int(seg.sum()))
    if scheme.point_contact_conductance > 0:
        pts = cs.kind == 0
        ei = np.concatenate([ei, cs.ii[pts]])
        ej = np.concatenate([ej, cs.jj[pts]])
        cond = np.concatenate(
            [cond, np.full(int(pts.sum()), scheme.point_contact_conductance)]
        )
    nv = spec.n_maps**n
    adj = sp.csr_matrix(
        (np.ones(len(ei)), (ei, ej)), shape=(nv, nv)
    )
    ncomp, _ = connected_components(adj, directed=False)
    if ncomp > 1:
        raise DisconnectedError(
            f"level-{n} network has {ncomp} components with corner contacts"
            " excluded; set point_contact_conductance > 0 if the design"
            " relies on corner connectivity"
        )
    return CellNetwork(spec, n, scheme, nv, ei, ej, cond.astype(float))


def resolve_vertex(net: CellNetwork, x) -> int:
    """Vertex index from an index, a level-n word, or a rational point."""
    if isinstance(x, (int, np.integer)):
        if not 0 <= x < net.n_vertices:
            raise SpecError(f"vertex index {x} out of range")
        return int(x)
    if isinstance(x, tuple) and all(isinstance(t, (int, np.integer)) for t in x):
        if len(x) != net.n:
            raise SpecError(f"word {x} is not level {net.n}")
        return word_to_index(net.spec.n_maps, x)
    return point_cell(net.spec, net.n, x)


def _solve_spd(lap_ff, rhs, tol, label):
    """Solve the grounded SPD system; verify the residual afterwards."""
    nf = lap_ff.shape[0]
    if rhs.ndim == 1:
        rhs2 = rhs[:, None]
    else:
        rhs2 = rhs
    if nf <= DIRECT_SOLVE_LIMIT:
        x = spla.splu(lap_ff.tocsc()).solve(rhs2)
    else:
        inv_diag = 1.0 / lap_ff.diagonal()
        precond = spla.LinearOperator((nf, nf), matvec=lambda v: inv_diag * v)
        cap = int(50 * math.sqrt(nf)) + 100
        cols = []
        for j in range(rhs2.shape[1]):
            xj, info = spla.cg(
                lap_ff, rhs2[:, j], rtol=tol * 1e-2, atol=0.0, maxiter=cap, M=precond
            )
            if info > 0:
                raise RuntimeError(
                    f"{label}: CG hit the {cap}-iteration cap without converging"
                )
            cols.append(xj)
        x = np.stack(cols, axis=1)
    resid = lap_ff @ x - rhs2
    scale = np.linalg.norm(rhs2, axis=0)
    scale[scale == 0] = 1.0
    rel = np.linalg.norm(resid, axis=0) / scale
    if float(rel.max()) > tol:
        raise RuntimeError(
            f"{label}: residual {rel.max():.2e} exceeds tolerance {tol:.0e}"
        )
    return x if rhs.ndim > 1 else x[:, 0]


def solve_dirichlet(net: CellNetwork, a, b, tol: float = 1e-10) -> np.ndarray:
    """Potentials with u=0 on a, u=1 on b, discrete-harmonic elsewhere.

    a, b: disjoint nonempty vertex collections (indices, words, or points).
    Free vertices in a component with no boundary get value 0 and a warning.
    """
    ai = np.array(sorted({resolve_vertex(net, x) for x in a}), dtype=np.int64)
    bi = np.array(sorted({resolve_vertex(net, x) for x in b}), dtype=np.int64)
    if len(ai) == 0 or len(bi) == 0:
        raise SpecError("boundary sets must be nonempty")
    if np.intersect1d(ai, bi).size:
        raise SpecError("boundary sets must be disjoint")
    nv = net.n_vertices
    u = np.zeros(nv)
    u[bi] = 1.0
    fixed = np.zeros(nv, dtype=bool)
    fixed[ai] = fixed[bi] = True
    free = np.flatnonzero(~fixed)
    if len(free) == 0:
        return u
    lap = net.laplacian()
    lff = lap[free][:, free].tocsr()
    rhs = -(lap[free][:, fixed] @ u[fixed])
    # components of the free subgraph with no tie to the boundary are
    # singular; solve only the anchored part and flag the rest
    ncomp, labels = connected_components(lff, directed=False)
    if ncomp > 1:
        anchored = np.zeros(ncomp, dtype=bool)
        tie = np.flatnonzero(np.abs(lap[free][:, fixed]).sum(axis=1).A.ravel() > 0)
        anchored[labels[tie]] = True
        keep = anchored[labels]
        if not keep.all():
            warnings.warn(
                f"{int((~keep).sum())} free vertices have no path to the "
                "boundary; assigning 0", stacklevel=2
            )
        sel = np.flatnonzero(keep)
        u[free[sel]] = _solve_spd(
            lff[sel][:, sel].tocsr(), rhs[sel], tol, "dirichlet"
        )
        return u
    u[free] = _solve_spd(lff, rhs, tol, "dirichlet")
    return u


def solve_fixed(net: CellNetwork, fixed, values, tol: float = 1e-10) -> np.ndarray:
    """Harmonic extension of arbitrary boundary data.

    fixed: vertex collection; values: matching data.  Same solver path as
    `solve_dirichlet` but without the 0/1 restriction.
    """
    fi = [resolve_vertex(net, x) for x in fixed]
    if len(set(fi)) != len(fi):
        raise SpecError("fixed vertices are not distinct")
    if len(fi) == 0:
        raise SpecError("need at least one fixed vertex")
    nv = net.n_vertices
    u = np.zeros(nv)
    u[fi] = np.asarray(values, dtype=float)
    fixed_mask = np.zeros(nv, dtype=bool)
    fixed_mask[fi] = True
    free = np.flatnonzero(~fixed_mask)
    if len(free) == 0:
        return u
    lap = net.laplacian()
    lff = lap[free][:, free].tocsr()
    rhs = -(lap[free][:, fixed_mask] @ u[fixed_mask])
    u[free] = _solve_spd(lff, rhs, tol, "harmonic extension")
    return u


def effective_resistance(net: CellNetwork, a, b, tol: float = 1e-10) -> float:
    """1 / (energy of the a-b Dirichlet solution)."""
    u = solve_dirichlet(net, a, b, tol=tol)
    e = net.energy(u)
    if e <= 0:
        raise RuntimeError("zero energy: boundary sets may coincide electrically")
    return 1.0 / e


def resistance_table(net: CellNetwork, vertices, tol: float = 1e-10) -> np.ndarray:
    """Pairwise two-point resistances via grounded inverse columns.

    One factorization serves the whole table: with the ground row/column
    removed, R(x,y) = G_xx + G_yy - 2 G_xy.  Residuals of every extracted
    column are checked against `tol`.
    """
    idx = [resolve_vertex(net, v) for v in vertices]
    nv = net.n_vertices
    if 0 not in idx:
        ground = 0
    else:
        rest = set(range(nv)) - set(idx)
        # grounding one of the requested vertices is fine: R(x, ground)
        # reduces to G_xx under the same grounded-Green identity
        ground = max(rest) if rest else idx[0]
    keep = np.flatnonzero(np.arange(nv) != ground)
    pos_of = -np.ones(nv, dtype=np.int64)
    pos_of[keep] = np.arange(nv - 1)
    lap_g = net.laplacian()[keep][:, keep].tocsr()
    cols = sorted({v for v in idx if v != ground})
    rhs = np.zeros((nv - 1, len(cols)))
    for j, v in enumerate(cols):
        rhs[pos_of[v], j] = 1.0
    g = _solve_spd(lap_g, rhs, tol, "resistance table")
    col_of = {v: j for j, v in enumerate(cols)}

    def green(x, y):
        if x == ground or y == ground:
            return 0.0
        return float(g[pos_of[x], col_of[y]])

    m = len(idx)
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            x, y = idx[i], idx[j]
            r = 0.0 if x == y else green(x, x) + green(y, y) - 2 * green(x, y)
            out[i, j] = out[j, i] = r
    return out


# ---------------------------------------------------------------------------
# renormalization

def side_cells(spec: USCSpec, n: int, side: int) -> np.ndarray:
    """Vertex indices of the cells on one unit-square edge (1=bottom..4=left)."""
    names = {1: "bottom", 2: "right", 3: "top", 4: "left"}
    return boundary_cells(spec, n)[names[side]]


@dataclass
class RenormEstimate:
    """Across-square resistances, their ratio sequence, and exponents.

    resistances[i] is the left-to-right effective resistance at levels[i].
    ratios[i] = resistances[i]/resistances[i+1] is the per-level resistance
    scale estimate from the pair (levels[i], levels[i+1]): crossing
    resistances grow with depth, so these ratios sit in (0, 1).  theta and
    d_w are derived from the final ratio; all are estimates, not proven
    limits.
    """

    spec_name: str
    levels: list[int]
    resistances: list[float]
    ratios: list[float]
    r_hat: float
    theta: float
    d_h: float
    d_w: float
    richardson: float | None = None

    def as_dict(self) -> dict:
        rows = [
            {"n": n, "R": r, "ratio": None if i == 0 else self.ratios[i - 1]}
            for i, (n, r) in enumerate(zip(self.levels, self.resistances))
        ]
        out = {
            "levels": rows,
            "r_hat": self.r_hat,
            "theta": self.theta,
            "d_H": self.d_h,
            "d_W": self.d_w,
        }
        if self.richardson is not None:
            out["r_hat_richardson"] = self.richardson
        return out


def estimate_renorm(
    spec: USCSpec,
    n_max: int,
    scheme: ConductanceScheme = ConductanceScheme(),
    tol: float = 1e-10,
    richardson: bool = False,
) -> RenormEstimate:
    """Left-right resistances for n = 1..n_max and the ratio sequence.

    r_hat is the last successive coarse/fine ratio; theta =
    -log(r_hat)/log k; the walk dimension estimate is theta + d_H.  With
    `richardson`, an Aitken extrapolation of the ratio sequence is reported
    alongside.
    """
    if n_max < 2:
        raise SpecError("need n_max >= 2 for at least one ratio")
    levels = list(range(1, n_max + 1))
    res = []
    for n in levels:
        net = build_cell_network(spec, n, scheme)
        res.append(
            effective_resistance(net, side_cells(spec, n, 4), side_cells(spec, n, 2), tol)
        )
    ratios = [res[i] / res[i + 1] for i in range(len(res) - 1)]
    r_hat = ratios[-1]
    theta = -math.log(r_hat) / math.log(spec.k)
    d_h = math.log(spec.n_maps) / math.log(spec.k)
    extrap = None
    if richardson and len(ratios) >= 3:
        a, b, c = ratios[-3:]
        denom = c - 2 * b + a
        extrap = c - (c - b) ** 2 / denom if abs(denom) > 1e-15 else c
    return RenormEstimate(
        spec.name, levels, res, ratios, r_hat, theta, d_h, theta + d_h, extrap
    )


@lru_cache(maxsize=32)
def crossing_resistance(
    spec: USCSpec, n: int, scheme: ConductanceScheme = ConductanceScheme()
) -> float:
    """Left-to-right resistance at level n (the metric normalizer)."""
    net = build_cell_network(spec, n, scheme)
    return effective_resistance(net, side_cells(spec, n, 4), side_cells(spec, n, 2))


def resistance_metric_est(
    spec: USCSpec,
    n: int,
    x,
    y,
    scheme: ConductanceScheme = ConductanceScheme(),
    tol: float = 1e-10,
) -> float:
    """Two-point resistance normalized so left-right resistance equals 1."""
    net = build_cell_network(spec, n, scheme)
    xi, yi = resolve_vertex(net, x), resolve_vertex(net, y)
    if xi == yi:
        warnings.warn(f"{x} and {y} resolve to the same level-{n} cell", stacklevel=2)
        return 0.0
    r = effective_resistance(net, [xi], [yi], tol)
    return r / crossing_resistance(spec, n, scheme)


def metric_table(
    spec: USCSpec,
    n: int,
    vertices,
    scheme: ConductanceScheme = ConductanceScheme(),
    tol: float = 1e-10,
) -> np.ndarray:
    """Normalized pairwise resistance matrix for the given vertices."""
    net = build_cell_network(spec, n, scheme)
    return resistance_table(net, vertices, tol) / crossing_resistance(spec, n, scheme)


def check_boundary_bound(
    spec: USCSpec,
    n: int,
    pairs: int = 50,
    seed: int = 0,
    scheme: ConductanceScheme = ConductanceScheme(),
) -> dict:
    """Max normalized boundary resistance against the 2k^3 corner bound.

    Samples pairs of boundary cells, computes R(x,y)/R(corner q1, corner q2),
    and passes when the max ratio is at most 2 k^3.
    """
    rng = np.random.default_rng(seed)
    boundary = np.unique(np.concatenate([side_cells(spec, n, s) for s in (1, 2, 3, 4)]))
    picks = rng.choice(len(boundary), size=(pairs, 2))
    picks = picks[picks[:, 0] != picks[:, 1]]
    q1 = word_to_index(spec.n_maps, (1,) * n)
    q2 = word_to_index(spec.n_maps, (spec.k,) * n)
    verts = sorted({q1, q2} | set(boundary[picks.ravel()].tolist()))
    table = metric_table(spec, n, verts)
    pos = {v: i for i, v in enumerate(verts)}
    base = table[pos[q1], pos[q2]]
    ratios = [
        table[pos[int(boundary[i])], pos[int(boundary[j])]] / base
        for i, j in picks.tolist()
    ]
    bound = 2.0 * spec.k**3
    return {
        "pairs": len(ratios),
        "max_ratio": max(ratios),
        "bound": bound,
        "base_resistance": base,
        "passed": max(ratios) <= bound,
    }


def symmetry_resistance_deviation(
    spec: USCSpec,
    n: int,
    pairs: int = 50,
    seed: int = 0,
    scheme: ConductanceScheme = ConductanceScheme(),
) -> float:
    """Worst |R(x,y) - R(gx, gy)| over sampled pairs and all 8 symmetries."""
    rng = np.random.default_rng(seed)
    nv = spec.n_maps**n
    perms = [symmetry_cell_permutation(spec, n, g) for g in
             ("rot90", "rot180", "rot270", "flip_x", "flip_y", "transpose",
              "antitranspose")]
    raw = rng.integers(0, nv, size=(pairs, 2))
    raw = raw[raw[:, 0] != raw[:, 1]]
    verts = set(raw.ravel().tolist())
    for p in perms:
        verts |= {int(p[v]) for v in raw.ravel().tolist()}
    verts = sorted(verts)
    pos = {v: i for i, v in enumerate(verts)}
    table = metric_table(spec, n, verts)
    worst = 0.0
    for x, y in raw.tolist():
        base = table[pos[x], pos[y]]
        for p in perms:
            worst = max(worst, abs(table[pos[int(p[x])], pos[int(p[y])]] - base))
    return worst


# ---------------------------------------------------------------------------
# geodesic-coupled diagnostics

def fit_theta(
    spec: USCSpec,
    n: int,
    samples: int = 200,
    seed: int = 0,
    scheme: ConductanceScheme = ConductanceScheme(),
) -> dict:
    """Log-log slope of resistance against geodesic distance on cell pairs.

    Returns the fitted slope, the renormalization-based theta for
    comparison, and the min/max of R / d^theta over the sample.
    """
    from .geodesic import cell_distance_matrix

    rng = np.random.default_rng(seed)
    nv = spec.n_maps**n
    raw = rng.integers(0, nv, size=(samples, 2))
    raw = raw[raw[:, 0] != raw[:, 1]]
    verts = sorted(set(raw.ravel().tolist()))
    pos = {v: i for i, v in enumerate(verts)}
    rmat = metric_table(spec, n, verts)
    dmat = cell_distance_matrix(spec, n, verts)
    rs = np.array([rmat[pos[x], pos[y]] for x, y in raw.tolist()])
    ds = np.array([dmat[pos[x], pos[y]] for x, y in raw.tolist()])
    good = (rs > 0) & (ds > 0)
    rs, ds = rs[good], ds[good]
    if len(rs) < 2 or np.allclose(ds, ds[0]):
        raise SpecError("degenerate sample: need pairs at distinct distances")
    slope, intercept = np.polyfit(np.log(ds), np.log(rs), 1)
    est = estimate_renorm(spec, min(n, 3), scheme)
    ratio = rs / ds**est.theta
    return {
        "slope": float(slope),
        "intercept": float(intercept),
        "theta_renorm": est.theta,
        "ratio_min": float(ratio.min()),
        "ratio_max": float(ratio.max()),
        "pairs": int(len(rs)),
    }


def annulus_resistance(
    spec: USCSpec,
    n: int,
    x: Word,
    rho: float,
    scheme: ConductanceScheme = ConductanceScheme(),
) -> dict:
    """Resistance from a cell to everything at geodesic distance >= rho."""
    from .geodesic import cell_distances_from

    net = build_cell_network(spec, n, scheme)
    xi = resolve_vertex(net, x)
    dists = cell_distances_from(spec, n, xi)
    outside = np.flatnonzero(dists >= rho)
    outside = outside[outside != xi]
    if len(outside) == 0:
        raise SpecError(f"no cells at geodesic distance >= {rho}")
    r = effective_resistance(net, [xi], outside.tolist())
    r_norm = r / crossing_resistance(spec, n, scheme)
    est = estimate_renorm(spec, min(n, 3), scheme)
    return {
        "rho": rho,
        "cells_outside": int(len(outside)),
        "resistance": r_norm,
        "scaled": r_norm / rho**est.theta,
        "theta": est.theta,
    }
