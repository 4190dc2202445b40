"""Exact geometry for square-based self-similar carpets.

A carpet design is a contraction family x -> x/k + c_i on the unit square:
an integer base k >= 3 together with distinct rational corner offsets c_i.
Everything here is exact.  Offsets are `fractions.Fraction` pairs, and each
refinement level n is embedded in an integer grid (common offset denominator
times k^n), so cell contacts, boundary incidence and separation gaps reduce
to integer arithmetic instead of float comparisons.  Floats appear only in
final square roots and in KD-tree pruning, never in a yes/no decision.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

Point = tuple[Fraction, Fraction]
Word = tuple[int, ...]

DEFAULT_CELL_BUDGET = 500_000


class SpecError(ValueError):
    """Malformed carpet design or out-of-range parameter."""


class BudgetError(RuntimeError):
    """A refinement level would materialize more cells than the budget allows."""


def cell_budget() -> int:
    """Maximum number of cells a single level may materialize.

    Override with the CARPET_CELL_BUDGET environment variable.
    """
    return int(os.environ.get("CARPET_CELL_BUDGET", DEFAULT_CELL_BUDGET))


def ensure_cell_budget(spec, n: int) -> None:
    """Raise BudgetError when level n would exceed the cell budget.

    Called at every cached constructor's entry so the outcome depends on
    the current budget, not on whether a previous call warmed the cache.
    """
    count = spec.n_maps**n
    if count > cell_budget():
        raise BudgetError(
            f"level {n} has {count} cells, over the budget of {cell_budget()}"
            " (raise CARPET_CELL_BUDGET to override)"
        )


# ---------------------------------------------------------------------------
# symmetries of the unit square

@dataclass(frozen=True)
class Symmetry:
    """One of the eight symmetries of the unit square, exactly.

    Acts as p -> M p + t with M an integer signed permutation matrix and t a
    0/1 translation, so rational points map to rational points.
    """

    name: str
    m: tuple[int, int, int, int]  # row-major 2x2
    t: tuple[int, int]

    def apply(self, p: Point) -> Point:
        a, b, c, d = self.m
        return (a * p[0] + b * p[1] + self.t[0], c * p[0] + d * p[1] + self.t[1])

    def apply_cell(self, corner: Point, side: Fraction) -> Point:
        """Low corner of the image of the axis-aligned square at `corner`."""
        p = self.apply(corner)
        q = self.apply((corner[0] + side, corner[1] + side))
        return (min(p[0], q[0]), min(p[1], q[1]))


SYMMETRIES: tuple[Symmetry, ...] = (
    Symmetry("id", (1, 0, 0, 1), (0, 0)),
    Symmetry("rot90", (0, -1, 1, 0), (1, 0)),
    Symmetry("rot180", (-1, 0, 0, -1), (1, 1)),
    Symmetry("rot270", (0, 1, -1, 0), (0, 1)),
    Symmetry("flip_x", (-1, 0, 0, 1), (1, 0)),
    Symmetry("flip_y", (1, 0, 0, -1), (0, 1)),
    Symmetry("transpose", (0, 1, 1, 0), (0, 0)),
    Symmetry("antitranspose", (0, -1, -1, 0), (1, 1)),
)

SYMMETRY_BY_NAME = {g.name: g for g in SYMMETRIES}


def apply_symmetry(g, p) -> Point:
    """Image of a rational point under a square symmetry (by name or element)."""
    if not isinstance(g, Symmetry):
        g = SYMMETRY_BY_NAME[g]
    return g.apply((_as_fraction(p[0]), _as_fraction(p[1])))


# ---------------------------------------------------------------------------
# designs

@dataclass(frozen=True)
class USCSpec:
    """A carpet design: base k plus the tuple of rational corner offsets.

    `ring_first` records that the offsets start with the complete boundary
    ring in counterclockwise order (bottom row first, then right, top, left
    edges); `make_spec` produces that canonical labelling whenever the design
    contains the full ring, so bottom-row cells are always maps 1..k.
    """

    k: int
    offsets: tuple[Point, ...]
    name: str = ""
    ring_first: bool = False

    @property
    def n_maps(self) -> int:
        return len(self.offsets)

    @property
    def side(self) -> Fraction:
        return Fraction(1, self.k)

    def map_point(self, letter: int, p: Point) -> Point:
        """Image of p under contraction `letter` (1-based)."""
        c = self.offsets[letter - 1]
        return (p[0] / self.k + c[0], p[1] / self.k + c[1])

    def unmap_point(self, letter: int, p: Point) -> Point:
        """Preimage of p under contraction `letter` (1-based)."""
        c = self.offsets[letter - 1]
        return ((p[0] - c[0]) * self.k, (p[1] - c[1]) * self.k)

    def word_map_point(self, w: Word, p: Point) -> Point:
        """Image of p under the composite contraction for word w."""
        for letter in reversed(w):
            p = self.map_point(letter, p)
        return p

    def word_corner(self, w: Word) -> Point:
        """Low corner of the cell addressed by word w (exact)."""
        x = y = Fraction(0)
        scale = Fraction(1)
        for letter in w:
            c = self.offsets[letter - 1]
            x += c[0] * scale
            y += c[1] * scale
            scale /= self.k
        return (x, y)


def _as_fraction(v) -> Fraction:
    try:
        if isinstance(v, Fraction):
            return v
        if isinstance(v, int):
            return Fraction(v)
        if isinstance(v, str):
            return Fraction(v.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise SpecError(f"bad rational literal {v!r}") from exc
    raise SpecError(f"bad rational literal {v!r} (want int or 'p/q' string)")


def _as_point(v) -> Point:
    if not (isinstance(v, (tuple, list)) and len(v) == 2):
        raise SpecError(f"offset {v!r} is not an (x, y) pair")
    return (_as_fraction(v[0]), _as_fraction(v[1]))


def boundary_ring(k: int) -> tuple[Point, ...]:
    """Corner offsets of the 4(k-1) edge cells, counterclockwise from (0,0).

    Walks bottom, right, top, left; each edge contributes k-1 cells, so cell
    i of edge j sits at ring position (k-1)*j + i.
    """
    s = Fraction(1, k)
    corners = [
        (Fraction(0), Fraction(0)),
        (Fraction(k - 1, k), Fraction(0)),
        (Fraction(k - 1, k), Fraction(k - 1, k)),
        (Fraction(0), Fraction(k - 1, k)),
    ]
    ring: list[Point] = []
    for j in range(4):
        a = corners[j]
        b = corners[(j + 1) % 4]
        ux, uy = (b[0] - a[0]) / (k - 1), (b[1] - a[1]) / (k - 1)
        for i in range(k - 1):
            ring.append((a[0] + i * ux, a[1] + i * uy))
    return tuple(ring)


def make_spec(k: int, offsets, name: str = "") -> USCSpec:
    """Build a design, checking well-formedness and canonicalizing labels.

    Requires k >= 3, between 4(k-1) and k^2-1 distinct offsets, and all
    cells inside the unit square.  If the full boundary ring is present the
    offsets are reordered ring-first (counterclockwise); geometric validity
    beyond that is `validate_usc`'s job.
    """
    if not isinstance(k, int) or k < 3:
        raise SpecError(f"base k must be an integer >= 3, got {k!r}")
    pts = tuple(_as_point(o) for o in offsets)
    if len(set(pts)) != len(pts):
        raise SpecError("offsets are not distinct")
    n = len(pts)
    lo, hi = 4 * (k - 1), k * k - 1
    if not lo <= n <= hi:
        raise SpecError(f"map count {n} outside [{lo}, {hi}] for k={k}")
    top = Fraction(k - 1, k)
    for p in pts:
        if not (0 <= p[0] <= top and 0 <= p[1] <= top):
            raise SpecError(f"cell at {p} leaves the unit square")
    ring = boundary_ring(k)
    ring_first = set(ring) <= set(pts)
    if ring_first:
        rest = [p for p in pts if p not in set(ring)]
        pts = ring + tuple(rest)
    return USCSpec(k=k, offsets=pts, name=name, ring_first=ring_first)


def standard_carpet() -> USCSpec:
    """The classical k=3, 8-map carpet."""
    return make_spec(3, boundary_ring(3), name="sc3")


def spec_from_dict(data: dict) -> USCSpec:
    """Design from a parsed TOML table (direct offsets or a family entry)."""
    name = str(data.get("name", ""))
    if "family" in data:
        fam = data["family"]
        kind = fam.get("kind", "kz")
        if kind != "kz":
            raise SpecError(f"unknown family kind {kind!r}")
        from .convergence import family_kz  # local import: avoids a cycle

        return family_kz(_as_fraction(fam["z"]), name=name)
    try:
        k = data["k"]
        offsets = data["offsets"]
    except KeyError as exc:
        raise SpecError(f"config is missing required key {exc.args[0]!r}") from exc
    if "n_maps" in data and int(data["n_maps"]) != len(offsets):
        raise SpecError(
            f"n_maps={data['n_maps']} but {len(offsets)} offsets supplied"
        )
    return make_spec(int(k), offsets, name=name)


def parse_spec(text: str) -> USCSpec:
    """Design from TOML text (see `load_spec` for files)."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SpecError(f"bad config text: {exc}") from exc
    return spec_from_dict(data)


def load_spec(path) -> USCSpec:
    """Design from a TOML file."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    spec = spec_from_dict(data)
    if not spec.name:
        spec = USCSpec(spec.k, spec.offsets, Path(path).stem, spec.ring_first)
    return spec


@dataclass(frozen=True)
class CellMap:
    """The affine contraction for a word: p -> ratio * p + offset."""

    ratio: Fraction
    offset: Point

    def apply(self, p: Point) -> Point:
        return (p[0] * self.ratio + self.offset[0], p[1] * self.ratio + self.offset[1])

    @property
    def square(self) -> tuple[Point, Fraction]:
        """(low corner, side) of the image of the unit square."""
        return self.offset, self.ratio


def cell_map(spec: USCSpec, w: Word) -> CellMap:
    """Composite contraction and square for a word (empty word = identity)."""
    for letter in w:
        if not 1 <= letter <= spec.n_maps:
            raise SpecError(f"letter {letter} outside 1..{spec.n_maps}")
    return CellMap(Fraction(1, spec.k ** len(w)), spec.word_corner(w))


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of the four design checks, in fixed order."""

    checks: tuple[CheckResult, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.checks if not c.passed)

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {"name": c.name, "passed": c.passed, "detail": c.detail}
                for c in self.checks
            ],
        }


def _overlap_and_contact_pairs(offsets, side):
    """Exact pairwise scan: ([(i,j) interior overlaps], [(i,j) touching])."""
    n = len(offsets)
    overlaps, contacts = [], []
    for i in range(n):
        xi, yi = offsets[i]
        for j in range(i + 1, n):
            wx = side - abs(xi - offsets[j][0])
            wy = side - abs(yi - offsets[j][1])
            if wx >= 0 and wy >= 0:
                contacts.append((i, j))
                if wx > 0 and wy > 0:
                    overlaps.append((i, j))
    return overlaps, contacts


def validate_usc(spec: USCSpec) -> ValidationReport:
    """Check the four design conditions and report each outcome.

    non-overlapping: cell interiors are pairwise disjoint (shared edges and
    corners are fine).  connected: the cell union is connected, where corner
    contact counts.  symmetric: the cell set is invariant under all eight
    square symmetries.  boundary: the union stays in the unit square and
    covers the whole bottom edge.
    """
    s = spec.side
    off = spec.offsets
    overlaps, contacts = _overlap_and_contact_pairs(off, s)

    if overlaps:
        shown = ", ".join(f"({i + 1},{j + 1})" for i, j in overlaps[:4])
        more = "" if len(overlaps) <= 4 else f" and {len(overlaps) - 4} more"
        non_overlap = CheckResult(
            "non-overlapping", False, f"cell pairs {shown}{more} share interior"
        )
    else:
        non_overlap = CheckResult("non-overlapping", True)

    parent = list(range(len(off)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in contacts:
        parent[find(i)] = find(j)
    roots = {find(i) for i in range(len(off))}
    if len(roots) == 1:
        connected = CheckResult("connected", True)
    else:
        connected = CheckResult(
            "connected", False, f"cell union splits into {len(roots)} components"
        )

    off_set = set(off)
    broken = [
        g.name
        for g in SYMMETRIES[1:]
        if {g.apply_cell(c, s) for c in off} != off_set
    ]
    if broken:
        symmetric = CheckResult(
            "symmetric", False, "not invariant under " + ", ".join(broken)
        )
    else:
        symmetric = CheckResult("symmetric", True)

    gap = None
    cover = Fraction(0)
    for x in sorted(c[0] for c in off if c[1] == 0):
        if x > cover:
            gap = (cover, x)
            break
        cover = max(cover, x + s)
    if gap is None and cover < 1:
        gap = (cover, Fraction(1))
    if gap is None:
        boundary = CheckResult("boundary", True)
    else:
        boundary = CheckResult(
            "boundary", False, f"bottom edge uncovered on ({gap[0]}, {gap[1]})"
        )

    return ValidationReport((non_overlap, connected, symmetric, boundary))


# ---------------------------------------------------------------------------
# words and integer-grid levels

def word_to_index(n_maps: int, w: Word) -> int:
    """Lexicographic index of word w (letters 1..N, first letter leading)."""
    idx = 0
    for letter in w:
        if not 1 <= letter <= n_maps:
            raise SpecError(f"letter {letter} outside 1..{n_maps}")
        idx = idx * n_maps + (letter - 1)
    return idx


def index_to_word(n_maps: int, n: int, idx: int) -> Word:
    """Inverse of `word_to_index` for words of length n."""
    letters = []
    for _ in range(n):
        idx, r = divmod(idx, n_maps)
        letters.append(r + 1)
    return tuple(reversed(letters))


class LevelGeometry:
    """All level-n cells of a design on a common integer grid.

    The grid pitch is 1/scale with scale = q * k^n (q = lcm of the offset
    denominators); every cell is then an integer-cornered square of side q,
    and cell order equals lexicographic word order.
    """

    def __init__(self, spec: USCSpec, n: int):
        if n < 0:
            raise SpecError("level must be >= 0")
        ensure_cell_budget(spec, n)
        q = math.lcm(*(f.denominator for c in spec.offsets for f in c))
        self.spec = spec
        self.n = n
        self.scale = q * spec.k**n
        self.side_units = q
        ax = np.array([int(c[0] * q) for c in spec.offsets], dtype=np.int64)
        ay = np.array([int(c[1] * q) for c in spec.offsets], dtype=np.int64)
        ux = np.zeros(1, dtype=np.int64)
        uy = np.zeros(1, dtype=np.int64)
        for _ in range(n):
            ux = (spec.k * ux[:, None] + spec.k * ax[None, :]).ravel()
            uy = (spec.k * uy[:, None] + spec.k * ay[None, :]).ravel()
        self.ux = ux
        self.uy = uy

    @property
    def n_cells(self) -> int:
        return len(self.ux)

    def corner(self, idx: int) -> Point:
        """Exact low corner of cell idx."""
        return (
            Fraction(int(self.ux[idx]), self.scale),
            Fraction(int(self.uy[idx]), self.scale),
        )

    def centers(self) -> np.ndarray:
        """Float cell centers, shape (n_cells, 2)."""
        half = self.side_units / 2
        return np.stack([(self.ux + half), (self.uy + half)], axis=1) / self.scale

    def buckets(self) -> dict:
        """Cell ids grouped by the coarse grid block their corner lies in."""
        if not hasattr(self, "_buckets"):
            d: dict[tuple[int, int], list[int]] = {}
            bx = self.ux // self.side_units
            by = self.uy // self.side_units
            for i, key in enumerate(zip(bx.tolist(), by.tolist())):
                d.setdefault(key, []).append(i)
            self._buckets = d
        return self._buckets


@lru_cache(maxsize=64)
def _level_geometry_cached(spec: USCSpec, n: int) -> LevelGeometry:
    return LevelGeometry(spec, n)


def level_geometry(spec: USCSpec, n: int) -> LevelGeometry:
    ensure_cell_budget(spec, n)
    return _level_geometry_cached(spec, n)


# ---------------------------------------------------------------------------
# cell contacts

@dataclass(frozen=True)
class Contact:
    """One pairwise contact between distinct cells of the same level."""

    a: Word
    b: Word
    kind: str  # "segment" | "point" | "overlap"
    length: Fraction  # shared-boundary length; 0 for point contacts


class ContactSet:
    """All contacts between distinct level-n cells, as flat arrays.

    kind codes: 0 corner-point contact, 1 segment contact, 2 interior
    overlap (only possible for invalid designs).  `seg_units` holds shared
    segment lengths in grid units (pitch 1/scale).
    """

    def __init__(self, spec, n, scale, side_units, ii, jj, kind, seg_units):
        self.spec = spec
        self.n = n
        self.scale = scale
        self.side_units = side_units
        self.ii = ii
        self.jj = jj
        self.kind = kind
        self.seg_units = seg_units

    @property
    def n_contacts(self) -> int:
        return len(self.ii)

    def segment_mask(self) -> np.ndarray:
        return self.kind == 1

    def lengths(self) -> np.ndarray:
        """Float shared-boundary lengths (0 for point contacts)."""
        return self.seg_units / self.scale

    def records(self) -> list[Contact]:
        names = {0: "point", 1: "segment", 2: "overlap"}
        nm = self.spec.n_maps
        out = []
        for i, j, kd, su in zip(
            self.ii.tolist(), self.jj.tolist(), self.kind.tolist(), self.seg_units.tolist()
        ):
            out.append(
                Contact(
                    index_to_word(nm, self.n, i),
                    index_to_word(nm, self.n, j),
                    names[kd],
                    Fraction(su, self.scale),
                )
            )
        return out


@lru_cache(maxsize=32)
def _cell_contacts_cached(spec: USCSpec, n: int) -> ContactSet:
    geo = level_geometry(spec, n)
    D = geo.side_units
    ux, uy = geo.ux, geo.uy
    buckets = geo.buckets()
    lists_i: list[np.ndarray] = []
    lists_j: list[np.ndarray] = []
    for (bx, by), ids in buckets.items():
        if len(ids) > 1:  # same block: only possible when cells overlap
            a = np.array(ids, dtype=np.int64)
            gi, gj = np.meshgrid(a, a, indexing="ij")
            m = gi < gj
            lists_i.append(gi[m])
            lists_j.append(gj[m])
        for sx, sy in ((1, 0), (0, 1), (1, 1), (1, -1)):
            other = buckets.get((bx + sx, by + sy))
            if other:
                a = np.array(ids, dtype=np.int64)
                b = np.array(other, dtype=np.int64)
                gi, gj = np.meshgrid(a, b, indexing="ij")
                lists_i.append(gi.ravel())
                lists_j.append(gj.ravel())
    if lists_i:
        ci = np.concatenate(lists_i)
        cj = np.concatenate(lists_j)
    else:
        ci = cj = np.zeros(0, dtype=np.int64)
    dx = np.abs(ux[ci] - ux[cj])
    dy = np.abs(uy[ci] - uy[cj])
    touch = (dx <= D) & (dy <= D)
    ci, cj, dx, dy = ci[touch], cj[touch], dx[touch], dy[touch]
    ii = np.minimum(ci, cj)
    jj = np.maximum(ci, cj)
    order = np.lexsort((jj, ii))
    ii, jj, dx, dy = ii[order], jj[order], dx[order], dy[order]
    kind = np.ones(len(ii), dtype=np.int8)
    kind[(dx < D) & (dy < D)] = 2
    kind[(dx == D) & (dy == D)] = 0
    seg = np.where(dx == D, D - dy, D - dx)
    seg[kind != 1] = 0
    return ContactSet(spec, n, geo.scale, D, ii, jj, kind, seg)


def cell_adjacency(spec: USCSpec, n: int) -> list[Contact]:
    """Word-addressed contact records for all level-n cell pairs."""
    return cell_contacts(spec, n).records()


# ---------------------------------------------------------------------------
# boundary cells

def boundary_cells(spec: USCSpec, n: int) -> dict[str, np.ndarray]:
    """Indices of level-n cells meeting each edge of the unit square."""
    geo = level_geometry(spec, n)
    m = geo.scale - geo.side_units
    return {
        "bottom": np.flatnonzero(geo.uy == 0),
        "right": np.flatnonzero(geo.ux == m),
        "top": np.flatnonzero(geo.uy == m),
        "left": np.flatnonzero(geo.ux == 0),
    }


SIDE_NAMES = {1: "bottom", 2: "right", 3: "top", 4: "left"}


def boundary_words(spec: USCSpec, n: int, side: int) -> list[Word]:
    """Words of the cells meeting edge `side` (1 bottom, 2 right, 3 top, 4 left).

    Sides are numbered counterclockwise starting from the bottom edge, the
    same walk order as the canonical ring labelling.
    """
    if side not in SIDE_NAMES:
        raise SpecError(f"side must be 1..4, got {side!r}")
    nm = spec.n_maps
    ids = boundary_cells(spec, n)[SIDE_NAMES[side]]
    return [index_to_word(nm, n, int(i)) for i in ids]


def point_cells(spec: USCSpec, n: int, p: Point) -> list[int]:
    """All level-n cells whose closed square contains the rational point p."""
    geo = level_geometry(spec, n)
    S, D = geo.scale, geo.side_units
    px, py = _as_fraction(p[0]) * S, _as_fraction(p[1]) * S
    bx, by = px // D, py // D
    found = []
    for ex in (0, -1):
        for ey in (0, -1):
            for i in geo.buckets().get((bx + ex, by + ey), ()):
                if geo.ux[i] <= px <= geo.ux[i] + D and geo.uy[i] <= py <= geo.uy[i] + D:
                    found.append(i)
    return sorted(set(found))


def point_cell(spec: USCSpec, n: int, p: Point) -> int:
    """Lowest-index level-n cell containing p; error if p is off the union."""
    found = point_cells(spec, n, p)
    if not found:
        raise SpecError(f"point {p} is not on the level-{n} cell union")
    return found[0]


# ---------------------------------------------------------------------------
# separation gap

def _sqrt_lower(d2: int) -> float:
    """Float lower bound on sqrt of an exact integer."""
    r = math.isqrt(d2)
    if r * r == d2:
        return float(r)
    return math.nextafter(math.sqrt(d2), 0.0)


def estimate_c0(spec: USCSpec, n: int) -> float:
    """Scaled minimum gap between level-n cells with no common neighbor.

    Neighbors are cells whose closed squares intersect (corner contact
    counts).  Over all pairs of cells that neither touch nor share a
    neighbor, returns k^n times the minimum Euclidean distance between the
    squares.  The minimizing pair is found exactly: a KD-tree only prunes
    candidates, with a certified re-scan radius.
    """
    geo = level_geometry(spec, n)
    S, D = geo.scale, geo.side_units
    contacts = cell_contacts(spec, n)
    nbrs: list[set[int]] = [set() for _ in range(geo.n_cells)]
    for i, j in zip(contacts.ii.tolist(), contacts.jj.tolist()):
        nbrs[i].add(j)
        nbrs[j].add(i)
    closed = [s | {i} for i, s in enumerate(nbrs)]

    tree = cKDTree(geo.centers())
    radius = 3 * D / S
    diag = math.sqrt(2) * D / S
    while True:
        pairs = tree.query_pairs(radius * (1 + 1e-9), output_type="ndarray")
        best = None
        for i, j in pairs.tolist():
            if not closed[i].isdisjoint(closed[j]):
                continue
            gx = max(0, abs(int(geo.ux[i]) - int(geo.ux[j])) - D)
            gy = max(0, abs(int(geo.uy[i]) - int(geo.uy[j])) - D)
            d2 = gx * gx + gy * gy
            if best is None or d2 < best:
                best = d2
        # pairs beyond the query radius keep a gap > radius - diag
        if best is not None and _sqrt_lower(best) / S <= radius - diag:
            return spec.k**n * _sqrt_lower(best) / S
        if radius > 3 * math.sqrt(2):  # whole square scanned: no qualifying pair
            raise SpecError(f"no level-{n} cell pairs without a common neighbor")
        radius *= 2


# ---------------------------------------------------------------------------
# distance between two carpets

def _directed_semidistance(ga: LevelGeometry, gb: LevelGeometry, g: int):
    """Certified (lower, upper) for sup over A-cells of dist to B's union.

    Samples a g x g center grid in every A-cell, computes each sample's
    exact squared distance to the nearest B-cell on a common integer grid,
    and pays a covering-radius correction for the rest of A.
    """
    L = math.lcm(2 * g * ga.scale, gb.scale)
    fa = L // (2 * g * ga.scale)
    fb = L // gb.scale
    if L > 1_500_000_000:
        raise BudgetError(f"common grid pitch 1/{L} too fine for exact distances")

    offs = np.arange(1, 2 * g, 2, dtype=np.int64) * ga.side_units
    gx, gy = np.meshgrid(offs, offs, indexing="ij")
    px = (2 * g * ga.ux[:, None] + gx.ravel()[None, :]).ravel() * fa
    py = (2 * g * ga.uy[:, None] + gy.ravel()[None, :]).ravel() * fa

    bx = gb.ux * fb
    by = gb.uy * fb
    Db = gb.side_units * fb

    tree = cKDTree(np.stack([bx + Db / 2, by + Db / 2], axis=1) / L)
    pts = np.stack([px, py], axis=1) / L
    upper, _ = tree.query(pts, k=1)
    half_diag_b = math.sqrt(2) / 2 * Db / L
    lists = tree.query_ball_point(pts, upper + half_diag_b * (1 + 1e-9) + 1e-12)

    lens = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
    flat = np.concatenate([np.asarray(l, dtype=np.int64) for l in lists])
    rep = np.repeat(np.arange(len(lists), dtype=np.int64), lens)
    ddx = np.maximum(0, np.maximum(bx[flat] - px[rep], px[rep] - bx[flat] - Db))
    ddy = np.maximum(0, np.maximum(by[flat] - py[rep], py[rep] - by[flat] - Db))
    d2 = ddx * ddx + ddy * ddy
    starts = np.concatenate([[0], np.cumsum(lens)[:-1]])
    per_sample = np.minimum.reduceat(d2, starts)
    worst = int(per_sample.max())

    lower = _sqrt_lower(worst) / L
    cover = math.sqrt(2) * ga.side_units / (2 * g * ga.scale)
    return lower, math.sqrt(worst) / L + cover * (1 + 1e-12)


def hausdorff_distance(
    a: USCSpec, b: USCSpec, m: int, samples_per_side: int = 2
) -> tuple[float, float]:
    """Certified bracket [lo, hi] for the Hausdorff distance of two carpets.

    Works on the level-m cell unions.  Sample-vs-union distances are exact
    on a common integer grid; the bracket then pays the sampling covering
    radius plus half a cell side per carpet (each cell's full boundary
    belongs to the fractal, so union and fractal differ by at most side/2).
    """
    ga = level_geometry(a, m)
    gb = level_geometry(b, m)
    ab_lo, ab_hi = _directed_semidistance(ga, gb, samples_per_side)
    ba_lo, ba_hi = _directed_semidistance(gb, ga, samples_per_side)
    u_lo, u_hi = max(ab_lo, ba_lo), max(ab_hi, ba_hi)
    slack = 0.5 / a.k**m + 0.5 / b.k**m
    return max(0.0, u_lo - slack), u_hi + slack + 1e-12


# ---------------------------------------------------------------------------
# matching and orbits

def match_ifs(a: USCSpec, b: USCSpec) -> tuple[tuple[int, ...], float]:
    """Best bijection between the maps of two designs with equal map counts.

    Minimizes total Euclidean offset displacement.  Returns (perm, cost)
    with perm[i] = 0-based map index in `b` paired with map i of `a`.
    """
    if a.n_maps != b.n_maps:
        raise SpecError(f"map counts differ: {a.n_maps} vs {b.n_maps}")
    ca = np.array(a.offsets, dtype=float)
    cb = np.array(b.offsets, dtype=float)
    cost = np.hypot(
        ca[:, None, 0] - cb[None, :, 0], ca[:, None, 1] - cb[None, :, 1]
    )
    rows, cols = linear_sum_assignment(cost)
    return tuple(int(c) for c in cols), float(cost[rows, cols].sum())


def complete_symmetry_orbit(
    k: int, seeds, include_ring: bool = True, name: str = ""
) -> USCSpec:
    """Design from seed cells closed under the eight square symmetries.

    Starts from the full boundary ring unless `include_ring` is False, then
    adds each seed's symmetry orbit (first-seen order).  Errors if the
    closure creates interior overlaps or leaves the admissible map-count
    range; connectivity is left to `validate_usc`.
    """
    s = Fraction(1, k)
    out: list[Point] = list(boundary_ring(k)) if include_ring else []
    seen = set(out)
    for seed in seeds:
        p = _as_point(seed)
        for g in SYMMETRIES:
            img = g.apply_cell(p, s)
            if img not in seen:
                seen.add(img)
                out.append(img)
    spec = make_spec(k, out, name=name)
    overlaps, _ = _overlap_and_contact_pairs(spec.offsets, s)
    if overlaps:
        i, j = overlaps[0]
        raise SpecError(
            f"orbit closure overlaps: cells at {spec.offsets[i]} and {spec.offsets[j]}"
        )
    return spec


def symmetry_cell_permutation(spec: USCSpec, n: int, sym) -> np.ndarray:
    """perm[i] = index of the image of level-n cell i under a square symmetry."""
    g = sym if isinstance(sym, Symmetry) else SYMMETRY_BY_NAME[sym]
    geo = level_geometry(spec, n)
    S, D = geo.scale, geo.side_units
    a, b, c, d = g.m
    tx, ty = g.t
    x1 = a * geo.ux + b * geo.uy + tx * S
    y1 = c * geo.ux + d * geo.uy + ty * S
    x2 = a * (geo.ux + D) + b * (geo.uy + D) + tx * S
    y2 = c * (geo.ux + D) + d * (geo.uy + D) + ty * S
    nx = np.minimum(x1, x2)
    ny = np.minimum(y1, y2)
    key = geo.ux * np.int64(S + 1) + geo.uy
    order = np.argsort(key)
    skey = key[order]
    nk = nx * np.int64(S + 1) + ny
    pos = np.searchsorted(skey, nk)
    ok = (pos < len(skey)) & (skey[np.minimum(pos, len(skey) - 1)] == nk)
    if not ok.all():
        raise SpecError(f"level-{n} cells are not invariant under {g.name}")
    return order[pos]


# ---------------------------------------------------------------------------
# rendering

def render_svg(spec: USCSpec, level: int = 2, path=None, fill: str = "#1d3557") -> str:
    """Deterministic SVG of the level-`level` cells (integer coordinates)."""
    geo = level_geometry(spec, level)
    S, D = geo.scale, geo.side_units
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {S} {S}">',
        f'<rect width="{S}" height="{S}" fill="white"/>',
    ]
    for x, y in zip(geo.ux.tolist(), geo.uy.tolist()):
        parts.append(
            f'<rect x="{x}" y="{S - y - D}" width="{D}" height="{D}" fill="{fill}"/>'
        )
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
