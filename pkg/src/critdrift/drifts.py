"""Drift fields and coefficients: singular radial drifts, bump lattices,
divergence-shift decompositions, and mollification.

Constructors attach the analytic divergence where it exists in closed form;
sign conditions are then checked against the analytic values instead of the
difference stencil, which is badly polluted near a 1/|x|^2 singularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grids import Grid, RadialGrid, sphere_area
from .fields import ScalarField, VectorField, zero_vector

DIV_SIGN_TOL_FACTOR = 10.0  # tolerance 10*h on claimed sign conditions


# ---------------------------------------------------------------------------
# named drift fields


def radial_drift(grid, M: float) -> VectorField:
    """b(x) = -M x / |x|^2, with analytic div b = -M (n-2) / |x|^2.

    On a RadialGrid the single component is the radial one, b_r = -M / r.
    """
    if isinstance(grid, RadialGrid):
        n = grid.n
        comps = (-M / grid.r)[:, None]
        div = -M * (n - 2) / grid.r ** 2
    else:
        n = 3
        r2 = np.sum(grid.coords ** 2, axis=1)
        comps = -M * grid.coords / r2[:, None]
        div = -M * (n - 2) / r2
    return VectorField(grid, comps, f"radial(M={M:g})", div_values=div)


def bump_lattice_drift(grid, eps: float, r: float, p: float) -> VectorField:
    """Disjoint singular bumps eps |x - 2rk|^{-n/p} on the balls B_r(2rk).

    The magnitude is the lattice-bump profile; the direction is radial from
    each bump's center so the divergence has the closed form
    eps (n - 1 - n/p) rho^{-n/p - 1} inside each bump.
    """
    if not 0 < r < 1:
        raise ValueError("bump radius must lie in (0, 1)")
    if isinstance(grid, RadialGrid):
        raise ValueError("bump lattices need a full 3-d grid")
    n = 3
    x = grid.coords
    k = np.round(x / (2.0 * r))
    centers = 2.0 * r * k
    rho_vec = x - centers
    rho = np.linalg.norm(rho_vec, axis=1)
    inside = rho < r
    mag = np.zeros(grid.n_nodes)
    mag[inside] = eps * rho[inside] ** (-n / p)
    comps = np.zeros_like(x)
    comps[inside] = mag[inside, None] * rho_vec[inside] / rho[inside, None]
    div = np.zeros(grid.n_nodes)
    div[inside] = eps * (n - 1.0 - n / p) * rho[inside] ** (-n / p - 1.0)
    return VectorField(grid, comps, f"bumps(eps={eps:g},r={r:g},p={p:g})",
                       div_values=div)


def linear_radial_vector(grid, K: float) -> VectorField:
    """K x / n, the divergence-shift field with div = K exactly."""
    if isinstance(grid, RadialGrid):
        n = grid.n
        comps = (K * grid.r / n)[:, None]
    else:
        n = 3
        comps = K * grid.coords / n
    return VectorField(grid, comps, f"shift(K={K:g})",
                       div_values=np.full(grid.n_nodes, float(K)))


def band_limited_scalar(grid, seed: int, n_modes: int = 4, amplitude: float = 1.0,
                        field_id: str = None) -> ScalarField:
    """Seeded random band-limited field; the recipe is grid-independent so the
    same function can be sampled across a refinement ladder."""
    rng = np.random.default_rng(seed)
    ks = rng.integers(1, 4, size=(n_modes, 3))
    phases = rng.uniform(0, 2 * math.pi, size=n_modes)
    amps = rng.normal(0, 1, size=n_modes)
    amps *= amplitude / np.sum(np.abs(amps))
    if isinstance(grid, RadialGrid):
        x = np.stack([grid.r, np.zeros_like(grid.r), np.zeros_like(grid.r)], axis=1)
    else:
        x = grid.coords
    vals = np.zeros(len(x))
    for a, k, ph in zip(amps, ks, phases):
        vals += a * np.cos(math.pi * (x @ k) + ph)
    return ScalarField(grid, vals, field_id or f"bandlimited(seed={seed})")


# ---------------------------------------------------------------------------
# decomposition b = b1 + b2 + b3


@dataclass
class DriftDecomposition:
    """The split b = b1 + b2 + b3 with its checkable side conditions.

    ``div_b1``/``div_b2`` are the discrete divergences (stored per the data
    contract); the sign flag is evaluated on analytic divergences when the
    parts carry them.
    """

    b1: VectorField
    b2: VectorField
    b3: VectorField
    div_b1: ScalarField
    div_b2: ScalarField
    K: float = 0.0
    claims_sign_condition: bool = False
    sign_condition_ok: bool = True

    @property
    def total(self) -> VectorField:
        return VectorField(self.b1.grid,
                           self.b1.components + self.b2.components + self.b3.components,
                           "b1+b2+b3")

    def reconstruction_defect(self, b: VectorField) -> float:
        return float(np.max(np.abs(self.total.components - b.components), initial=0.0))


def decompose_drift(b: VectorField, strategy: str = "radial_shift", K: float = None,
                    b1: VectorField = None, b2: VectorField = None,
                    b3: VectorField = None) -> DriftDecomposition:
    """Split a drift either by the radial shift or by an explicit triple.

    radial_shift(K), valid under a certified lower bound div b >= -K, sets
    b1 = b + Kx/n and b2 = -Kx/n so that div b1 = div b + K >= 0 and
    div b2 = -K exactly; the sum identity div b1 + div b2 = div b holds by
    linearity.
    """
    grid = b.grid
    if strategy == "radial_shift":
        if K is None or K < 0:
            raise ValueError("radial_shift needs a certified K >= 0")
        shift = linear_radial_vector(grid, K)
        b1 = VectorField(grid, b.components + shift.components, "b1",
                         div_values=(None if b.div_values is None
                                     else b.div_values + K))
        b2 = VectorField(grid, -shift.components, "b2",
                         div_values=np.full(grid.n_nodes, -float(K)))
        b3 = zero_vector(grid)
        claims = True
    elif strategy == "explicit":
        if b1 is None or b2 is None:
            raise ValueError("explicit strategy needs b1 and b2")
        b3 = b3 if b3 is not None else zero_vector(grid)
        claims = False
    else:
        raise ValueError(f"unknown strategy {strategy!r}")

    decomp = DriftDecomposition(
        b1=b1, b2=b2, b3=b3,
        div_b1=b1.discrete_divergence(),
        div_b2=b2.discrete_divergence(),
        K=float(K or 0.0),
        claims_sign_condition=claims,
    )
    defect = decomp.reconstruction_defect(b)
    if defect > 1e-12 * max(1.0, float(np.max(np.abs(b.components)))):
        raise ValueError(f"decomposition does not reconstruct b (defect {defect:g})")
    if claims:
        h = getattr(grid, "h", 0.0)
        tol = DIV_SIGN_TOL_FACTOR * h
        div1 = b1.divergence_field().values
        decomp.sign_condition_ok = bool(np.min(div1) >= -tol)
        if not decomp.sign_condition_ok:
            raise ValueError("claimed sign condition div b1 >= 0 fails beyond 10*h")
    return decomp


# ---------------------------------------------------------------------------
# mollification


@dataclass(frozen=True)
class MollifierSpec:
    """Scaled smooth bump Phi_rho = rho^{-n} Phi(./rho), unit discrete mass."""

    rho: float

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")


def _bump_profile(t2: np.ndarray) -> np.ndarray:
    """exp(-1/(1-t^2)) on t^2 < 1, the standard compactly supported bump."""
    out = np.zeros_like(t2)
    ok = t2 < 1.0
    out[ok] = np.exp(-1.0 / (1.0 - t2[ok]))
    return out


def _kernel_offsets(grid: Grid, rho: float):
    m = int(math.ceil(rho / grid.h))
    rng = np.arange(-m, m + 1)
    OX, OY, OZ = np.meshgrid(rng, rng, rng, indexing="ij")
    offs = np.stack([OX.ravel(), OY.ravel(), OZ.ravel()], axis=1)
    t2 = np.sum((offs * grid.h / rho) ** 2, axis=1)
    wk = _bump_profile(t2)
    keep = wk > 0
    offs, wk = offs[keep], wk[keep]
    wk = wk / wk.sum()  # discrete unit mass, exact after normalization
    return offs, wk


def mollify(f, spec: MollifierSpec):
    """Discrete convolution with the scaled bump; f extended by zero outside.

    Rejects rho < 2h, where the sampled kernel cannot be resolved.
    """
    grid = f.grid
    if not isinstance(grid, Grid):
        raise ValueError("mollification needs a full Cartesian grid")
    if spec.rho < 2.0 * grid.h:
        raise ValueError("rho below 2h: kernel unresolvable")
    offs, wk = _kernel_offsets(grid, spec.rho)

    def convolve(values):
        out = np.zeros(grid.n_nodes)
        base = grid.idx3.astype(np.int64)
        for off, w in zip(offs, wk):
            ids = grid.node_at(base - off[None, :])
            ok = ids >= 0
            out[ok] += w * values[ids[ok]]
        return out

    if isinstance(f, ScalarField):
        return ScalarField(grid, convolve(f.values), f"mollify({f.field_id})")
    comps = np.stack([convolve(f.components[:, d]) for d in range(3)], axis=1)
    return VectorField(grid, comps, f"mollify({f.field_id})")


def mollify_ratio_report(f, rhos, p: float, q: float) -> list:
    """Rows of || f * Phi_rho ||_{p,q} / ||f||_{p,q} across a rho ladder."""
    from .lorentz import LorentzSpec, lorentz_quasinorm
    spec_pq = LorentzSpec(p, q)
    base = lorentz_quasinorm(f if isinstance(f, ScalarField) else f.magnitude(), spec_pq)
    rows = []
    for rho in rhos:
        mf = mollify(f, MollifierSpec(rho))
        sm = mf if isinstance(mf, ScalarField) else mf.magnitude()
        val = lorentz_quasinorm(sm, spec_pq)
        rows.append({"rho": rho, "norm": val, "base": base,
                     "ratio": 0.0 if base == 0 else val / base})
    return rows


# ---------------------------------------------------------------------------
# CLI field specs


def parse_field_spec(spec: str, grid, kind: str = "vector"):
    """Build a named field from strings like ``radial:M=2``,
    ``bumps(eps=1,r=0.125,p=3)``, ``zero``, ``const(v=1)``."""
    text = spec.strip()
    if text.startswith("field:"):
        text = text[len("field:"):]
    name, args = _split_spec(text)
    kv = {k: float(v) for k, v in args.items()}
    if name == "zero":
        return zero_vector(grid) if kind == "vector" else \
            ScalarField(grid, np.zeros(grid.n_nodes), "zero")
    if name == "const":
        v = kv.get("v", 1.0)
        if kind == "vector":
            from .fields import const_vector
            return const_vector(grid, v=v)
        from .fields import const_field
        return const_field(grid, v)
    if name == "radial":
        return radial_drift(grid, kv["M"])
    if name == "bumps":
        return bump_lattice_drift(grid, kv["eps"], kv["r"], kv["p"])
    if name == "bandlimited":
        return band_limited_scalar(grid, int(kv.get("seed", 0)))
    if name == "invsq":
        # |x|^{-2} scalar coefficient, the borderline L^{n/2,oo} profile
        r2 = np.sum(grid.coords ** 2, axis=1) if not isinstance(grid, RadialGrid) \
            else grid.r[:, None][:, 0] ** 2
        return ScalarField(grid, kv.get("c", 1.0) / r2, f"invsq(c={kv.get('c', 1.0):g})")
    raise ValueError(f"unknown field spec {spec!r}")


def _split_spec(text: str):
    if "(" in text:
        name, _, rest = text.partition("(")
        rest = rest.rstrip(")")
    else:
        name, _, rest = text.partition(":")
    args = {}
    for part in rest.split(","):
        if not part.strip():
            continue
        k, _, v = part.partition("=")
        args[k.strip()] = v.strip()
    return name.strip(), args
