"""Domains, cell-centered Cartesian grids with cut-cell quadrature, and radial grids.

Grids are cell-centered: node coordinates are offset by h/2 from the lattice
origin so a field singular at the origin (or on an axis plane) is never
evaluated at its singular point.  Cells that intersect the domain but whose
center falls just outside keep a truncated quadrature weight; they belong to
the boundary band and are eliminated (value 0) by the solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_SUBSAMPLES = 4  # per-axis subdivisions for cut-cell volume fractions


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class Domain:
    """A solid of one of three kinds: ball(R), box(bounds), annulus(r0, R)."""

    kind: str                      # "ball" | "box" | "annulus"
    params: tuple
    dim: int = 3

    def __post_init__(self):
        if self.kind not in ("ball", "box", "annulus"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.dim < 3:
            raise ValueError("ambient dimension must be >= 3")
        if self.kind == "annulus":
            r0, R = self.params
            if not 0 < r0 < R:
                raise ValueError("annulus needs 0 < r0 < R")
        elif self.kind == "ball":
            (R,) = self.params
            if R <= 0:
                raise ValueError("ball needs R > 0")
        else:
            for a, b in self.params:
                if b <= a:
                    raise ValueError("box needs a < b on every axis")

    @property
    def key(self) -> str:
        if self.kind == "ball":
            return f"ball:R={self.params[0]:g}"
        if self.kind == "annulus":
            return f"annulus:r0={self.params[0]:g},R={self.params[1]:g}"
        return "box:" + "x".join(f"{a:g},{b:g}" for a, b in self.params)

    @property
    def diameter(self) -> float:
        if self.kind == "ball":
            return 2.0 * self.params[0]
        if self.kind == "annulus":
            return 2.0 * self.params[1]
        return math.sqrt(sum((b - a) ** 2 for a, b in self.params))

    @property
    def measure(self) -> float:
        """Exact Lebesgue measure (dim = 3)."""
        if self.kind == "ball":
            return 4.0 * math.pi / 3.0 * self.params[0] ** 3
        if self.kind == "annulus":
            r0, R = self.params
            return 4.0 * math.pi / 3.0 * (R ** 3 - r0 ** 3)
        vol = 1.0
        for a, b in self.params:
            vol *= b - a
        return vol

    def bounding_box(self):
        if self.kind == "box":
            return np.array([a for a, _ in self.params]), np.array([b for _, b in self.params])
        R = self.params[-1]
        return -R * np.ones(self.dim), R * np.ones(self.dim)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Strict interior test, vectorized over rows of ``pts``."""
        if self.kind == "box":
            lo = np.array([a for a, _ in self.params])
            hi = np.array([b for _, b in self.params])
            return np.all((pts > lo) & (pts < hi), axis=-1)
        r2 = np.sum(pts * pts, axis=-1)
        if self.kind == "ball":
            return r2 < self.params[0] ** 2
        r0, R = self.params
        return (r2 > r0 ** 2) & (r2 < R ** 2)

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        """Negative inside, positive outside."""
        if self.kind == "box":
            lo = np.array([a for a, _ in self.params])
            hi = np.array([b for _, b in self.params])
            d = np.maximum(lo - pts, pts - hi)            # per-axis outside excess
            outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
            inside = np.minimum(np.max(d, axis=-1), 0.0)
            return outside + inside
        r = np.linalg.norm(pts, axis=-1)
        if self.kind == "ball":
            return r - self.params[0]
        r0, R = self.params
        return np.maximum(r - R, r0 - r)


def parse_domain(spec: str) -> Domain:
    """Parse config strings like ``ball:R=1``, ``box:0,1x0,1x0,1``,
    ``annulus:r0=0.25,R=1``."""
    kind, _, rest = spec.partition(":")
    kind = kind.strip()
    if kind == "ball":
        kv = _parse_kv(rest)
        return Domain("ball", (float(kv["R"]),))
    if kind == "annulus":
        kv = _parse_kv(rest)
        return Domain("annulus", (float(kv["r0"]), float(kv["R"])))
    if kind == "box":
        axes = []
        for part in rest.split("x"):
            a, b = part.split(",")
            axes.append((float(a), float(b)))
        if len(axes) != 3:
            raise ValueError("box spec needs three axis ranges")
        return Domain("box", tuple(axes))
    raise ValueError(f"cannot parse domain spec {spec!r}")


def _parse_kv(text: str) -> dict:
    out = {}
    for part in text.split(","):
        if not part:
            continue
        k, _, v = part.partition("=")
        out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------------------
# full Cartesian grid


@dataclass
class Grid:
    """Cell-centered Cartesian grid covering a Domain.

    Nodes are centers of all cells that meet the domain; ``weights`` carry
    h^3 times the cut-cell volume fraction (by 4^3 subsampling of boundary
    cells), so sum(weights) tracks |domain|.  ``inside`` marks nodes whose
    center is strictly interior; only those are solver unknowns.
    """

    domain: Domain
    h: float
    coords: np.ndarray          # (N, 3) cell centers
    weights: np.ndarray         # (N,)
    idx3: np.ndarray            # (N, 3) integer lattice coordinates
    lattice_origin: np.ndarray  # coords = (idx3 + 0.5) * h + lattice_origin
    shape: tuple                # bounding lattice extents
    index_map: np.ndarray       # shape-sized int32 array, node id or -1
    inside: np.ndarray          # (N,) bool
    band: np.ndarray            # (N,) bool, nodes within h of the boundary
    neighbors: np.ndarray = field(default=None)  # (N, 6) node id or -1
    link_frac: np.ndarray = field(default=None)  # (N, 6) boundary-cut fraction

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return 3

    @property
    def key(self) -> str:
        return f"{self.domain.key}@h={self.h:g}"

    def node_at(self, ijk: np.ndarray) -> np.ndarray:
        """Map integer lattice triples to node ids (-1 when absent)."""
        ijk = np.atleast_2d(ijk)
        ok = np.all((ijk >= 0) & (ijk < np.array(self.shape)), axis=1)
        out = np.full(len(ijk), -1, dtype=np.int64)
        sel = ijk[ok]
        out[ok] = self.index_map[sel[:, 0], sel[:, 1], sel[:, 2]]
        return out

    def shift_ids(self, axis: int, step: int) -> np.ndarray:
        """Node id of the neighbor ``step`` cells away along ``axis`` (-1 if absent)."""
        ijk = self.idx3.copy()
        ijk[:, axis] += step
        return self.node_at(ijk)

    def scaled(self, factor: float) -> "Grid":
        """Exact geometric rescaling about the origin (ball domains only).

        Used for the pullback in the scaling-invariance check; weights scale
        by factor^3 and coordinates by factor, both exact for dyadic factors.
        """
        if self.domain.kind != "ball":
            raise ValueError("scaled() supports ball domains only")
        dom = Domain("ball", (self.domain.params[0] * factor,))
        return Grid(
            domain=dom,
            h=self.h * factor,
            coords=self.coords * factor,
            weights=self.weights * factor ** 3,
            idx3=self.idx3,
            lattice_origin=self.lattice_origin * factor,
            shape=self.shape,
            index_map=self.index_map,
            inside=self.inside,
            band=self.band,
            neighbors=self.neighbors,
            link_frac=self.link_frac,
        )


def build_grid(domain: Domain, h: float) -> Grid:
    """Build the cell-centered grid with cut-cell boundary weights."""
    if h >= domain.diameter / 4.0:
        raise ValueError("h too coarse for the domain")
    if domain.dim != 3:
        raise ValueError("full grids support dimension 3 only; use radial_reduce")
    lo, hi = domain.bounding_box()
    # Lattice origin snaps to multiples of h so symmetric domains center exactly.
    origin = np.floor(lo / h - 1e-9) * h
    counts = np.ceil((hi - origin) / h - 1e-9).astype(int)
    ax = [(np.arange(c) + 0.5) * h + origin[d] for d, c in enumerate(counts)]
    X, Y, Z = np.meshgrid(*ax, indexing="ij")
    centers = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    sdist = domain.signed_distance(centers)
    half_diag = 0.5 * h * math.sqrt(3.0)
    deep_inside = sdist < -half_diag
    maybe_cut = np.abs(sdist) <= half_diag

    frac = np.zeros(len(centers))
    frac[deep_inside] = 1.0
    if np.any(maybe_cut):
        frac[maybe_cut] = _cut_fractions(domain, centers[maybe_cut], h)

    keep = frac > 0.0
    if int(keep.sum()) > 128 ** 3:
        raise ValueError("full 3-d grids are capped at 128^3 nodes; "
                         "use radial_reduce for finer studies")
    coords = centers[keep]
    weights = frac[keep] * h ** 3
    sdist = sdist[keep]

    flat_ids = np.flatnonzero(keep)
    idx3 = np.stack(np.unravel_index(flat_ids, tuple(counts)), axis=1).astype(np.int32)
    index_map = np.full(tuple(counts), -1, dtype=np.int32)
    index_map[idx3[:, 0], idx3[:, 1], idx3[:, 2]] = np.arange(len(coords), dtype=np.int32)

    inside = sdist < 0.0
    band = sdist > -h

    grid = Grid(
        domain=domain,
        h=h,
        coords=coords,
        weights=weights,
        idx3=idx3,
        lattice_origin=origin,
        shape=tuple(counts),
        index_map=index_map,
        inside=inside,
        band=band,
    )
    grid.neighbors, grid.link_frac = _link_structure(grid)
    return grid


def _cut_fractions(domain: Domain, centers: np.ndarray, h: float) -> np.ndarray:
    """Volume fraction of each cell inside the domain, 4^3 subsampling."""
    m = _SUBSAMPLES
    offs = (np.arange(m) + 0.5) / m - 0.5
    OX, OY, OZ = np.meshgrid(offs, offs, offs, indexing="ij")
    sub = np.stack([OX.ravel(), OY.ravel(), OZ.ravel()], axis=1) * h  # (64, 3)
    pts = centers[:, None, :] + sub[None, :, :]
    ins = domain.contains(pts.reshape(-1, 3)).reshape(len(centers), -1)
    return ins.mean(axis=1)


def _link_structure(grid: Grid):
    """Neighbor ids and boundary-cut fractions theta for every node and axis.

    For an inside node whose directional neighbor center is outside the
    domain, theta in (0, 1] is the fraction of the step at which the segment
    crosses the boundary; the symmetric Dirichlet closure divides by it.
    """
    N = grid.n_nodes
    nbrs = np.full((N, 6), -1, dtype=np.int64)
    theta = np.ones((N, 6))
    inside = grid.inside
    for axis in range(3):
        for s, step in ((0, -1), (1, +1)):
            col = 2 * axis + s
            ids = grid.shift_ids(axis, step)
            nbrs[:, col] = ids
            nbr_inside = (ids >= 0) & inside[np.maximum(ids, 0)]
            cut = inside & ~nbr_inside
            if np.any(cut):
                theta[cut, col] = _crossing_fraction(
                    grid.domain, grid.coords[cut], axis, step * grid.h
                )
    return nbrs, theta


def _crossing_fraction(domain: Domain, pts: np.ndarray, axis: int, step: float) -> np.ndarray:
    """Smallest t in (0,1] with pts + t*step*e_axis on the boundary."""
    t = np.ones(len(pts))
    if domain.kind == "box":
        lo = np.array([a for a, _ in domain.params])
        hi = np.array([b for _, b in domain.params])
        x = pts[:, axis]
        face = hi[axis] if step > 0 else lo[axis]
        t = (face - x) / step
    else:
        radii = [domain.params[0]] if domain.kind == "ball" else list(domain.params)
        t = np.full(len(pts), np.inf)
        x2 = np.sum(pts * pts, axis=1)
        xa = pts[:, axis]
        for R in radii:
            # |p + t*step*e|^2 = R^2  ->  step^2 t^2 + 2 xa step t + x2 - R^2 = 0
            a, b, c = step * step, 2.0 * xa * step, x2 - R * R
            disc = b * b - 4 * a * c
            ok = disc >= 0
            sq = np.sqrt(np.maximum(disc, 0.0))
            for root in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
                cand = np.where(ok & (root > 0) & (root <= 1.0), root, np.inf)
                t = np.minimum(t, cand)
        t[~np.isfinite(t)] = 1.0
    # Tiny fractions give a huge but harmless diagonal; floor for conditioning.
    return np.clip(t, 0.01, 1.0)


# ---------------------------------------------------------------------------
# radial 1-D reduction


@dataclass
class RadialGrid:
    """1-D reduction of a radially symmetric ball/annulus problem.

    Node i sits at r0 + (i + 1/2) h_r and carries measure
    omega_{n-1} r_i^{n-1} h_r.  A ball has no inner boundary: the r=0 face
    carries zero area so fluxes vanish there naturally.
    """

    domain: Domain
    h: float
    r: np.ndarray
    weights: np.ndarray
    n: int = 3

    @property
    def n_nodes(self) -> int:
        return len(self.r)

    @property
    def dim(self) -> int:
        return 1

    @property
    def key(self) -> str:
        return f"{self.domain.key}@radial-h={self.h:g}"

    @property
    def coords(self) -> np.ndarray:
        return self.r[:, None]

    @property
    def inner_radius(self) -> float:
        return self.domain.params[0] if self.domain.kind == "annulus" else 0.0

    @property
    def outer_radius(self) -> float:
        return self.domain.params[-1]

    @property
    def has_inner_boundary(self) -> bool:
        return self.domain.kind == "annulus"

    @property
    def inside(self) -> np.ndarray:
        return np.ones(self.n_nodes, dtype=bool)

    @property
    def band(self) -> np.ndarray:
        b = np.zeros(self.n_nodes, dtype=bool)
        b[-1] = True
        if self.has_inner_boundary:
            b[0] = True
        return b


def sphere_area(n: int) -> float:
    """Surface measure of the unit (n-1)-sphere."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def radial_reduce(domain: Domain, h_r: float, n: int = 3) -> RadialGrid:
    """Reduce a ball/annulus to its radial grid."""
    if domain.kind not in ("ball", "annulus"):
        raise ValueError("radial reduction needs a ball or annulus domain")
    r0 = domain.params[0] if domain.kind == "annulus" else 0.0
    R = domain.params[-1]
    count = int(round((R - r0) / h_r))
    if count < 4:
        raise ValueError("h_r too coarse for the radial extent")
    h = (R - r0) / count
    r = r0 + (np.arange(count) + 0.5) * h
    w = sphere_area(n) * r ** (n - 1) * h
    return RadialGrid(domain=domain, h=h, r=r, weights=w, n=n)


# ---------------------------------------------------------------------------
# quadrature and discrete calculus


def integrate(f) -> float:
    """Sum of values * weights over the field's grid."""
    return float(np.dot(f.values, f.grid.weights))


def gradient(grid, values: np.ndarray) -> np.ndarray:
    """Discrete gradient, centered where both neighbors exist, one-sided at
    the boundary band.  Returns (N, dim)."""
    if isinstance(grid, RadialGrid):
        return _gradient_1d(grid, values)[:, None]
    out = np.zeros((grid.n_nodes, 3))
    h = grid.h
    for axis in range(3):
        minus = grid.neighbors[:, 2 * axis]
        plus = grid.neighbors[:, 2 * axis + 1]
        has_m, has_p = minus >= 0, plus >= 0
        vm = np.where(has_m, values[np.maximum(minus, 0)], 0.0)
        vp = np.where(has_p, values[np.maximum(plus, 0)], 0.0)
        g = np.zeros(grid.n_nodes)
        both = has_m & has_p
        g[both] = (vp[both] - vm[both]) / (2 * h)
        only_p = has_p & ~has_m
        g[only_p] = (vp[only_p] - values[only_p]) / h
        only_m = has_m & ~has_p
        g[only_m] = (values[only_m] - vm[only_m]) / h
        out[:, axis] = g
    return out


def _gradient_1d(grid: RadialGrid, values: np.ndarray) -> np.ndarray:
    g = np.empty_like(values)
    g[1:-1] = (values[2:] - values[:-2]) / (2 * grid.h)
    g[0] = (values[1] - values[0]) / grid.h
    g[-1] = (values[-1] - values[-2]) / grid.h
    return g


def second_difference(grid: Grid, values: np.ndarray, axis: int) -> np.ndarray:
    """Pure second difference along one axis; one-sided copies at the band."""
    minus = grid.neighbors[:, 2 * axis]
    plus = grid.neighbors[:, 2 * axis + 1]
    has = (minus >= 0) & (plus >= 0)
    out = np.zeros(grid.n_nodes)
    vm = values[np.maximum(minus, 0)]
    vp = values[np.maximum(plus, 0)]
    out[has] = (vp[has] - 2 * values[has] + vm[has]) / grid.h ** 2
    return out


def mixed_difference(grid: Grid, values: np.ndarray, ax1: int, ax2: int) -> np.ndarray:
    """Centered cross second difference; zero where the 4-point stencil is cut."""
    h = grid.h
    out = np.zeros(grid.n_nodes)
    ijk = grid.idx3.astype(np.int64)
    total = np.zeros(grid.n_nodes)
    ok = np.ones(grid.n_nodes, dtype=bool)
    for s1 in (+1, -1):
        for s2 in (+1, -1):
            shifted = ijk.copy()
            shifted[:, ax1] += s1
            shifted[:, ax2] += s2
            ids = grid.node_at(shifted)
            ok &= ids >= 0
            total = total + s1 * s2 * values[np.maximum(ids, 0)]
    out[ok] = total[ok] / (4 * h * h)
    return out


def divergence(grid, comps: np.ndarray) -> np.ndarray:
    """Discrete divergence of a vector sample (N, dim)."""
    if isinstance(grid, RadialGrid):
        # radial divergence of a radial vector field b_r(r) e_r
        b = comps[:, 0]
        g = _gradient_1d(grid, grid.r ** (grid.n - 1) * b)
        return g / grid.r ** (grid.n - 1)
    out = np.zeros(grid.n_nodes)
    for axis in range(3):
        out += gradient(grid, comps[:, axis])[:, axis]
    return out
