"""Experiment procedures that confront the quantitative estimates with
discrete measurements: a priori ratios, log estimates, Caccioppoli ratios,
oscillation decay and Holder fits, sup-bound checks, interpolation checks,
bilinear-estimate ratios, and the radial uniqueness probe.

Constants are never compared against theory (none are explicit); stability
of measured ratios under refinement replaces constant-matching throughout.
Corpus fields are recipes (functions of the grid) so a sweep samples the
same function on every refinement level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grids import Grid, RadialGrid, build_grid, radial_reduce, parse_domain, gradient
from .fields import ScalarField, VectorField, const_field, zero_field, zero_vector
from .lorentz import (LorentzSpec, SmallScaleSpec, lorentz_quasinorm, lp_norm,
                      small_scale_quasinorm, INF)
from .drifts import band_limited_scalar, radial_drift
from .solver import (assemble, solve, WeakData, NearSingular, SolveFailure,
                     sobolev_norm, w_minus_one_p_norm, weak_infsup_constant,
                     weak_residual)

DEFAULT_SEED = 20240601


# ---------------------------------------------------------------------------
# exponent bookkeeping and fit helpers


@dataclass(frozen=True)
class ExponentBook:
    """Derived exponents for dimension n and integrability p."""

    n: int
    p: float

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")

    @property
    def conjugate(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def sobolev(self) -> float:
        if not self.p < self.n:
            raise ValueError("Sobolev conjugate needs p < n")
        return self.n * self.p / (self.n - self.p)

    @property
    def sharp(self) -> float:
        return self.n * self.p / (self.n + self.p)


@dataclass
class HolderFit:
    beta: float
    prefactor: float
    r_squared: float

    @property
    def verdict(self) -> str:
        return "pass" if self.r_squared >= 0.9 else "inconclusive"

    @property
    def accepted(self) -> bool:
        return 0.0 < self.beta <= 1.2 and self.r_squared >= 0.9


def fit_power_law(x, y) -> HolderFit:
    """Least-squares fit y ~ C x^beta in log-log space, with R^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return HolderFit(beta=0.0, prefactor=0.0, r_squared=0.0)
    lx, ly = np.log(x[ok]), np.log(y[ok])
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return HolderFit(beta=float(coef[0]), prefactor=float(math.exp(coef[1])),
                     r_squared=r2)


# ---------------------------------------------------------------------------
# corpora


def scalar_corpus(seed: int = DEFAULT_SEED, n_random: int = 5):
    """Recipes for the fixed ratio-experiment corpus: seeded band-limited
    fields plus three named analytic ones."""
    recipes = []
    for i in range(n_random):
        s = seed + i
        recipes.append((f"bandlimited{i}",
                        lambda g, s=s: band_limited_scalar(g, s)))
    recipes.append(("one", lambda g: const_field(g, 1.0)))
    recipes.append(("gauss", lambda g: ScalarField(
        g, np.exp(-2.0 * np.sum((g.coords - 0.2) ** 2, axis=1)), "gauss")))
    recipes.append(("poly", lambda g: ScalarField(
        g, g.coords[:, 0] * g.coords[:, 1] + 0.5 * g.coords[:, 2], "poly")))
    return recipes


def singular_divergence_recipe(x0=(0.15, 0.05, -0.1), s: float = 0.4,
                               amplitude: float = 1.0):
    """G(x) = A |x - x0|^{-s} (x - x0)/|x - x0|: in L^p exactly for p < n/s
    (L^6 at s = 0.4) with sign-definite divergence ~ |x - x0|^{-s-1}, so the
    dual solution carries a genuine Holder kink of exponent 2 - s - 1 at x0."""
    x0 = np.asarray(x0, dtype=float)

    def build(grid) -> VectorField:
        if isinstance(grid, RadialGrid):
            if np.linalg.norm(x0) > 0:
                raise ValueError("radial data must be centered at the origin")
            return VectorField(grid, (grid.r ** (-s))[:, None],
                               f"singG(s={s:g})")
        d = grid.coords - x0
        rad = np.linalg.norm(d, axis=1)
        comps = amplitude * d * (rad ** (-s - 1.0))[:, None]
        return VectorField(grid, comps, f"singG(s={s:g})")

    return build


def interior_bump(grid, center, radius, field_id="bump") -> ScalarField:
    """Smooth compactly supported test function, zero on the boundary band."""
    d = np.linalg.norm(grid.coords - np.asarray(center), axis=1)
    vals = np.zeros(grid.n_nodes)
    ok = (d < radius) & ~grid.band
    t2 = (d[ok] / radius) ** 2
    vals[ok] = np.exp(-1.0 / (1.0 - t2))
    return ScalarField(grid, vals, field_id)


def random_interior_bumps(grid, count: int, seed: int = DEFAULT_SEED):
    """Seeded interior bumps for weak-residual checks."""
    rng = np.random.default_rng(seed)
    lo, hi = grid.domain.bounding_box()
    bumps = []
    while len(bumps) < count:
        c = rng.uniform(lo, hi)
        if grid.domain.signed_distance(c[None, :])[0] > -0.25 * grid.domain.diameter / 2:
            continue
        radius = rng.uniform(0.1, 0.2) * grid.domain.diameter / 2
        phi = interior_bump(grid, c, radius, f"bump{len(bumps)}")
        if np.any(phi.values != 0.0):
            bumps.append(phi)
    return bumps


# ---------------------------------------------------------------------------
# a priori estimate (W^{1,p} against W^{-1,p} data)


def apriori_ratio(decomp, c: ScalarField, f_recipes, p: float, lam_grid,
                  grid, r_small: float = 0.25) -> dict:
    """Solve the primal problem over a data corpus and a lambda grid and
    report ||u||_{W^{1,p}} / ||f||_{W^{-1,p}} per cell.

    Requires p in [2, n) and the decomposition's sign flag; a NearSingular
    signal is recorded as a counterexample candidate row, not an error.
    """
    n = 3
    if not 2.0 <= p < n:
        raise ValueError("p must lie in [2, n)")
    if decomp.claims_sign_condition and not decomp.sign_condition_ok:
        raise ValueError("decomposition sign condition not satisfied")
    b = decomp.total
    b2_small = small_scale_quasinorm(decomp.b2.magnitude(),
                                     SmallScaleSpec(float(n), r_small)) \
        if np.any(decomp.b2.components) else 0.0
    rows = []
    for name, recipe in f_recipes:
        f = recipe(grid)
        data = WeakData(volume=f)
        fnorm = w_minus_one_p_norm(data, p, grid)
        for lam in lam_grid:
            row = {"f": name, "lam": float(lam), "f_norm": fnorm,
                   "b2_small_scale": b2_small}
            try:
                op = assemble("primal", grid, b=b, c=c, lam=float(lam))
                rep = solve(op, data, check_singularity=False)
                unorm = sobolev_norm(rep.solution, p, order=1)
                row.update(u_norm=unorm,
                           ratio=unorm / fnorm if fnorm > 0 else 0.0,
                           status="ok")
            except NearSingular as exc:
                row.update(u_norm=float("nan"), ratio=float("nan"),
                           status="near-singular",
                           sigma=exc.report.smallest_singular_estimate)
            rows.append(row)
    ratios = [r["ratio"] for r in rows if r["status"] == "ok"]
    summary = {
        "max_ratio": max(ratios) if ratios else float("nan"),
        "median_ratio": float(np.median(ratios)) if ratios else float("nan"),
        "near_singular_cells": sum(r["status"] != "ok" for r in rows),
    }
    return {"rows": rows, "summary": summary}


# ---------------------------------------------------------------------------
# log estimate and level sets


def log_estimate_check(u: ScalarField, b: VectorField, data: WeakData,
                       k_ladder=None) -> dict:
    """L = ||ln(1+|u|)||_{W^{1,2}} against R = ||b||_2 + ||f||_{W^{-1,2}},
    plus the level-set corollary |{|u| >= k}| <= C R^2 / ln(1+k)^2."""
    grid = u.grid
    logu = ScalarField(grid, np.log1p(np.abs(u.values)), "log1p_u")
    L = sobolev_norm(logu, 2.0, order=1)
    R = lp_norm(b.magnitude(), 2.0) + w_minus_one_p_norm(data, 2.0, grid)
    umax = float(np.max(np.abs(u.values)))
    if k_ladder is None:
        k_ladder = umax * (1.0 - 0.5 ** np.arange(1, 7)) if umax > 0 else []
    level_rows = []
    for k in k_ladder:
        meas = float(np.sum(grid.weights[np.abs(u.values) >= k]))
        level_rows.append({"k": float(k), "measure": meas,
                           "bound_factor": meas * math.log1p(k) ** 2 / R ** 2
                           if R > 0 else 0.0})
    tail = [(math.log1p(r["k"]), r["measure"]) for r in level_rows
            if r["measure"] > 0 and r["k"] >= 0.5 * umax]
    tail_fit = fit_power_law([t[0] for t in tail], [t[1] for t in tail]) \
        if len(tail) >= 2 else HolderFit(0.0, 0.0, 0.0)
    return {"L": L, "R": R, "ratio": L / R if R > 0 else 0.0,
            "levels": level_rows, "tail_exponent": tail_fit.beta,
            "level_constant": max((r["bound_factor"] for r in level_rows),
                                  default=0.0)}


# ---------------------------------------------------------------------------
# level sets, Caccioppoli, De Giorgi


def _level_set_mask(v: ScalarField, k: float, x0, rho: float) -> np.ndarray:
    grid = v.grid
    if isinstance(grid, RadialGrid):
        dist = np.abs(grid.r - float(np.atleast_1d(x0)[0]))
    else:
        dist = np.linalg.norm(grid.coords - np.asarray(x0), axis=1)
    return (dist < rho) & (v.values > k)


def caccioppoli_ratio(v: ScalarField, G: VectorField, k: float, tau: float,
                      rho: float, x0, c: ScalarField = None,
                      p: float = 6.0) -> float:
    """Level-set energy against the Caccioppoli bracket.

    LHS = int_{A_k(tau)} |grad v|^2; RHS = (rho-tau)^{-2} int_{A_k(rho)}
    (v-k)^2 + (||G||_p^2 + k^2 ||c||_{p#}^2) |A_k(rho)|^{1-2/p}.
    An empty A_k(rho) returns 0 by convention.
    """
    if not tau < rho:
        raise ValueError("needs tau < rho")
    grid = v.grid
    w = grid.weights
    inner = _level_set_mask(v, k, x0, tau)
    outer = _level_set_mask(v, k, x0, rho)
    if not np.any(outer):
        return 0.0
    gv = gradient(grid, v.values)
    lhs = float(np.sum(np.sum(gv[inner] ** 2, axis=1) * w[inner]))
    meas = float(np.sum(w[outer]))
    zero_term = float(np.sum((v.values[outer] - k) ** 2 * w[outer])) / (rho - tau) ** 2
    gnorm = lp_norm(G.magnitude(), p)
    csharp = 0.0
    if c is not None and np.any(c.values):
        psharp = ExponentBook(3, p).sharp
        csharp = lp_norm(c, psharp)
    rhs = zero_term + (gnorm ** 2 + k ** 2 * csharp ** 2) * meas ** (1.0 - 2.0 / p)
    return 0.0 if rhs == 0.0 else lhs / rhs


def caccioppoli_sweep(v: ScalarField, G: VectorField, centers, rhos,
                      k_quantiles=(0.3, 0.5, 0.7), c: ScalarField = None,
                      p: float = 6.0, gap: float = 0.15) -> dict:
    """Ratio sweep over (k, tau, rho, x0) at fixed annular gap tau = rho - gap,
    so the (rho - tau)^{-2} zero-order term is comparable across cells; empty
    cells are excluded from the max/median statistics."""
    ks = np.quantile(v.values, k_quantiles)
    rows = []
    for x0 in centers:
        for rho in rhos:
            if rho <= gap:
                continue
            for kq, k in zip(k_quantiles, ks):
                ratio = caccioppoli_ratio(v, G, float(k), rho - gap, rho, x0,
                                          c=c, p=p)
                rows.append({"x0": tuple(np.atleast_1d(x0).tolist()),
                             "rho": float(rho), "k_quantile": float(kq),
                             "k": float(k), "ratio": ratio,
                             "empty": ratio == 0.0})
    vals = [r["ratio"] for r in rows if not r["empty"]]
    summary = {"max": max(vals) if vals else 0.0,
               "median": float(np.median(vals)) if vals else 0.0,
               "cells": len(rows), "nonempty": len(vals)}
    summary["max_over_median"] = (summary["max"] / summary["median"]
                                  if summary["median"] > 0 else float("inf"))
    return {"rows": rows, "summary": summary}


@dataclass
class OscillationRecord:
    center: tuple
    radii: list
    sup_values: list
    inf_values: list

    @property
    def oscillations(self) -> list:
        return [M - m for M, m in zip(self.sup_values, self.inf_values)]


def oscillation_decay(v: ScalarField, x0, radii, min_nodes: int = 8):
    """Oscillation over shrinking domain caps and its power-law fit.

    Radii with fewer than ``min_nodes`` grid points are truncated from the
    ladder before fitting.
    """
    grid = v.grid
    if isinstance(grid, RadialGrid):
        dist = np.abs(grid.r - float(np.atleast_1d(x0)[0]))
    else:
        dist = np.linalg.norm(grid.coords - np.asarray(x0), axis=1)
    radii = sorted(radii, reverse=True)
    sups, infs, kept = [], [], []
    for rho in radii:
        mask = dist < rho
        if mask.sum() < min_nodes:
            continue
        kept.append(rho)
        sups.append(float(np.max(v.values[mask])))
        infs.append(float(np.min(v.values[mask])))
    record = OscillationRecord(center=tuple(np.atleast_1d(x0).tolist()),
                               radii=kept, sup_values=sups, inf_values=infs)
    fit = fit_power_law(kept, record.oscillations)
    return record, fit


@dataclass
class DeGiorgiDiagnostics:
    """Level-set table and the iteration exponents chi, beta, gamma, alpha."""

    n: int
    p: float
    chi: float
    table: list  # rows (k, rho, measure)

    @property
    def beta(self) -> float:
        return 1.0 - self.n / self.p

    @property
    def gamma(self) -> float:
        return 2.0 * self.beta / self.n

    @property
    def alpha(self) -> float:
        # positive root of alpha^2 + alpha = gamma
        return 0.5 * (-1.0 + math.sqrt(1.0 + 4.0 * self.gamma))


def de_giorgi_diagnostics(v: ScalarField, G: VectorField, p: float, x0,
                          rhos, k_ladder=None) -> DeGiorgiDiagnostics:
    grid = v.grid
    chi = lp_norm(G.magnitude(), p) + float(np.max(np.abs(v.values)))
    if k_ladder is None:
        vmax = float(np.max(np.abs(v.values)))
        k_ladder = vmax * np.array([0.0, 0.25, 0.5, 0.75])
    table = []
    for k in k_ladder:
        for rho in rhos:
            mask = _level_set_mask(v, float(k), x0, rho)
            table.append((float(k), float(rho),
                          float(np.sum(grid.weights[mask]))))
    return DeGiorgiDiagnostics(n=3, p=p, chi=chi, table=table)


def de_giorgi_boundedness_check(v: ScalarField, G: VectorField, p: float,
                                x0, R: float) -> dict:
    """sup over the half cap of v+- against the scale-invariant bracket
    (R^{-n} int v+-^2)^{1/2} + R (R^{-n} int |G|^p)^{1/p}."""
    if not p > 3:
        raise ValueError("needs p > n = 3")
    grid = v.grid
    n = 3
    if isinstance(grid, RadialGrid):
        dist = np.abs(grid.r - float(np.atleast_1d(x0)[0]))
        n = grid.n
    else:
        dist = np.linalg.norm(grid.coords - np.asarray(x0), axis=1)
    half = dist < R / 2.0
    full = dist < R
    w = grid.weights
    out = {}
    gmag = G.magnitude().values
    gterm = R * (np.sum(gmag[full] ** p * w[full]) / R ** n) ** (1.0 / p)
    for sign, tag in ((1.0, "plus"), (-1.0, "minus")):
        part = np.maximum(sign * v.values, 0.0)
        lhs = float(np.max(part[half], initial=0.0))
        vterm = math.sqrt(float(np.sum(part[full] ** 2 * w[full])) / R ** n)
        bracket = vterm + gterm
        out[f"lhs_{tag}"] = lhs
        out[f"bracket_{tag}"] = float(bracket)
    ratios = [out["lhs_plus"] / out["bracket_plus"] if out["bracket_plus"] > 0 else 0.0,
              out["lhs_minus"] / out["bracket_minus"] if out["bracket_minus"] > 0 else 0.0]
    out["ratio"] = max(ratios)
    return out


# ---------------------------------------------------------------------------
# interpolation and bilinear estimates


def holder_seminorm(u: ScalarField, alpha: float, budget: int = 10_000,
                    seed: int = DEFAULT_SEED) -> float:
    """Holder seminorm estimated over random node pairs stratified by dyadic
    separation; the exact sup is unaffordable and unnecessary at the
    acceptance tolerances."""
    grid = u.grid
    rng = np.random.default_rng(seed)
    diam = grid.domain.diameter
    scales = diam * 0.5 ** np.arange(1, 7)
    per_scale = max(budget // len(scales), 1)
    best = 0.0
    for s in scales:
        ids = rng.integers(0, grid.n_nodes, size=per_scale)
        dirs = rng.standard_normal((per_scale, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        targets = grid.coords[ids] + s * dirs
        ijk = np.floor((targets - grid.lattice_origin) / grid.h).astype(np.int64)
        jds = grid.node_at(ijk)
        ok = (jds >= 0) & (jds != ids)
        if not np.any(ok):
            continue
        i, j = ids[ok], jds[ok]
        sep = np.linalg.norm(grid.coords[i] - grid.coords[j], axis=1)
        good = sep > 0
        vals = np.abs(u.values[i][good] - u.values[j][good]) / sep[good] ** alpha
        if len(vals):
            best = max(best, float(np.max(vals)))
    return best


def miranda_nirenberg_check(u_recipes, p: float, alpha: float, grid,
                            budget: int = 10_000) -> dict:
    """||grad u||_{L^r} against ||u||_{W^{2,p}} + ||u||_{C^alpha} with
    r = (2 - alpha) p / (1 - alpha), per corpus member."""
    if not (1.0 <= p < 3.0 and 0.0 < alpha < 1.0):
        raise ValueError("needs p in [1, n) and alpha in (0, 1)")
    r = (2.0 - alpha) * p / (1.0 - alpha)
    rows = []
    for name, recipe in u_recipes:
        u = recipe(grid)
        gmag = np.linalg.norm(gradient(grid, u.values), axis=1)
        grad_norm = float(np.sum(gmag ** r * grid.weights) ** (1.0 / r))
        w2p = sobolev_norm(u, p, order=2)
        calpha = float(np.max(np.abs(u.values))) + \
            holder_seminorm(u, alpha, budget=budget)
        denom = w2p + calpha
        rows.append({"u": name, "r": r, "grad_norm": grad_norm,
                     "w2p": w2p, "c_alpha": calpha,
                     "ratio": grad_norm / denom if denom > 0 else 0.0})
    return {"rows": rows,
            "summary": {"max_ratio": max(r["ratio"] for r in rows)}}


def bilinear_estimate_ratios(b: VectorField, u_recipes, p: float, r: float,
                             grid) -> dict:
    """||u b||_p against ||b||_{n,oo,(r)} (||grad u||_p + r^{-1} ||u||_p),
    alongside the naive global-norm ratio it improves on."""
    n = 3.0
    if not 1.0 < p < n:
        raise ValueError("needs p in (1, n)")
    bmag = b.magnitude()
    small = small_scale_quasinorm(bmag, SmallScaleSpec(n, r))
    glob = lorentz_quasinorm(bmag, LorentzSpec(n, INF))
    rows = []
    for name, recipe in u_recipes:
        u = recipe(grid)
        ub = float(np.sum((np.abs(u.values) * bmag.values) ** p
                          * grid.weights) ** (1.0 / p))
        gmag = np.linalg.norm(gradient(grid, u.values), axis=1)
        gnorm = float(np.sum(gmag ** p * grid.weights) ** (1.0 / p))
        unorm = lp_norm(u, p)
        denom = small * (gnorm + unorm / r)
        naive = glob * sobolev_norm(u, p, order=1)
        rows.append({"u": name, "ub_norm": ub,
                     "ratio": ub / denom if denom > 0 else 0.0,
                     "naive_ratio": ub / naive if naive > 0 else 0.0})
    return {"rows": rows,
            "summary": {"max_ratio": max(x["ratio"] for x in rows),
                        "max_naive_ratio": max(x["naive_ratio"] for x in rows),
                        "b_small_scale": small, "b_global": glob, "r": r}}


def potential_estimate_ratios(c: ScalarField, u_recipes, p: float, r: float,
                              grid) -> dict:
    """||c u||_{W^{-1,p}} against ||c||_{n/2,oo,(r)} (||grad u||_p + r^{-1}||u||_p)."""
    n = 3.0
    small = small_scale_quasinorm(c, SmallScaleSpec(n / 2.0, r))
    rows = []
    for name, recipe in u_recipes:
        u = recipe(grid)
        cu = ScalarField(grid, c.values * u.values, "cu")
        num = w_minus_one_p_norm(WeakData(volume=cu), p, grid)
        gmag = np.linalg.norm(gradient(grid, u.values), axis=1)
        gnorm = float(np.sum(gmag ** p * grid.weights) ** (1.0 / p))
        denom = small * (gnorm + lp_norm(u, p) / r)
        rows.append({"u": name, "ratio": num / denom if denom > 0 else 0.0})
    return {"rows": rows,
            "summary": {"max_ratio": max(x["ratio"] for x in rows),
                        "c_small_scale": small}}


def gradient_drift_ratios(b: VectorField, v_recipes, p: float, r: float,
                          grid) -> dict:
    """||b . grad v||_{W^{-1,p}} against M_r(b) (||grad v||_p + r^{-1}||v||_p),
    M_r(b) = ||b||_{n,oo,(r)} + ||div b||_{n/2,oo,(r)}."""
    n = 3.0
    small_b = small_scale_quasinorm(b.magnitude(), SmallScaleSpec(n, r))
    small_div = small_scale_quasinorm(b.divergence_field().abs(),
                                      SmallScaleSpec(n / 2.0, r))
    mr = small_b + small_div
    rows = []
    for name, recipe in v_recipes:
        v = recipe(grid)
        gv = gradient(grid, v.values)
        bg = ScalarField(grid, np.sum(b.components * gv, axis=1), "b.grad v")
        num = w_minus_one_p_norm(WeakData(volume=bg), p, grid)
        gnorm = float(np.sum(np.linalg.norm(gv, axis=1) ** p
                             * grid.weights) ** (1.0 / p))
        denom = mr * (gnorm + lp_norm(v, p) / r)
        rows.append({"v": name, "ratio": num / denom if denom > 0 else 0.0})
    return {"rows": rows,
            "summary": {"max_ratio": max(x["ratio"] for x in rows), "M_r": mr}}


# ---------------------------------------------------------------------------
# uniqueness probe (radial dual operator on shrinking annuli)


def uniqueness_probe(M_grid, ladder=((1e-2, 1e-3), (1e-3, 5e-4), (1e-4, 2.5e-4)),
                     l_exponents=(1.6, 2.0, 2.5, 2.9), n: int = 3) -> dict:
    """Trace the weak inf-sup constant of the radial dual operator over
    shrinking inner radii, with the near-null profile and its L^l norms.

    Below the drift threshold (n-2)/2 the constant plateaus; above it the
    constant decays toward zero and the normalized null vector approaches
    r^{M-1} - 1.
    """
    rows = []
    for M in M_grid:
        for r0, h_r in ladder:
            dom = parse_domain(f"annulus:r0={r0:g},R=1")
            rg = radial_reduce(dom, h_r, n=n)
            op = assemble("dual", rg, b=radial_drift(rg, M), lam=1.0)
            sigma, vec = weak_infsup_constant(op)
            w = rg.weights
            nf = math.sqrt(float(vec @ (w * vec)))
            vn = vec / nf if nf > 0 else vec
            exact = rg.r ** (M - 1.0) - 1.0 if M != 1.0 else np.log(rg.r)
            en = math.sqrt(float(exact @ (w * exact)))
            ex = exact / en if en > 0 else exact
            if float(vn @ (w * ex)) < 0:
                vn = -vn
            mismatch = math.sqrt(float((vn - ex) @ (w * (vn - ex))))
            row = {"M": float(M), "r0": float(r0), "h_r": float(h_r),
                   "sigma": sigma, "null_match": mismatch}
            for l in l_exponents:
                row[f"null_L{l:g}"] = float(np.sum(np.abs(vn) ** l * w) ** (1.0 / l))
            rows.append(row)
    return {"rows": rows}


# ---------------------------------------------------------------------------
# manufactured solution and convergence studies


def manufactured_problem():
    """Smooth exact solution on the unit box with a divergence-free smooth
    drift and a nonnegative potential; f assembled analytically."""
    pi = math.pi

    def u_exact(x):
        return np.sin(pi * x[:, 0]) * np.sin(pi * x[:, 1]) * np.sin(pi * x[:, 2])

    def grad_u(x):
        s = [np.sin(pi * x[:, d]) for d in range(3)]
        c = [np.cos(pi * x[:, d]) for d in range(3)]
        return pi * np.stack([c[0] * s[1] * s[2],
                              s[0] * c[1] * s[2],
                              s[0] * s[1] * c[2]], axis=1)

    def b_field(grid):
        x = grid.coords
        comps = np.stack([np.sin(pi * x[:, 1]),
                          np.sin(pi * x[:, 2]),
                          np.sin(pi * x[:, 0])], axis=1)
        return VectorField(grid, comps, "smoothdrift",
                           div_values=np.zeros(grid.n_nodes))

    def c_field(grid):
        return ScalarField(grid, 1.0 + grid.coords[:, 0], "c")

    def f_field(grid):
        x = grid.coords
        u = u_exact(x)
        adv = np.sum(b_field(grid).components * grad_u(x), axis=1)
        return ScalarField(grid, 3.0 * pi ** 2 * u + adv
                           + c_field(grid).values * u, "manufactured-f")

    return {"u_exact": u_exact, "b": b_field, "c": c_field, "f": f_field}


def solver_convergence_study(hs=(1 / 16, 1 / 32, 1 / 64)) -> dict:
    """Max-norm error of the primal solve against the manufactured solution."""
    prob = manufactured_problem()
    dom = parse_domain("box:0,1x0,1x0,1")
    rows = []
    for h in hs:
        grid = build_grid(dom, h)
        op = assemble("primal", grid, b=prob["b"](grid), c=prob["c"](grid), lam=1.0)
        rep = solve(op, WeakData(volume=prob["f"](grid)), check_singularity=False)
        err = float(np.max(np.abs(rep.solution.values - prob["u_exact"](grid.coords))))
        rows.append({"h": h, "max_error": err, "grid": grid, "report": rep})
    fit = fit_power_law([r["h"] for r in rows], [r["max_error"] for r in rows])
    return {"rows": rows, "order": fit.beta, "fit": fit}


def weak_residual_decay_study(hs=(1 / 8, 1 / 16, 1 / 32), n_bumps: int = 10,
                              seed: int = DEFAULT_SEED) -> dict:
    """Weak residual of solver output against seeded interior test bumps,
    normalized by the test function's W^{1,1} size, across refinements."""
    prob = manufactured_problem()
    dom = parse_domain("box:0,1x0,1x0,1")
    rows = []
    for h in hs:
        grid = build_grid(dom, h)
        b = prob["b"](grid)
        c = prob["c"](grid)
        data = WeakData(volume=prob["f"](grid))
        rep = solve(assemble("primal", grid, b=b, c=c, lam=1.0), data,
                    check_singularity=False)
        worst = 0.0
        for phi in random_interior_bumps(grid, n_bumps, seed=seed):
            scale = sobolev_norm(phi, 1.0, order=1)
            resid = abs(weak_residual(rep.solution, b, c, data, phi))
            worst = max(worst, resid / scale)
        rows.append({"h": h, "max_residual": worst})
    fit = fit_power_law([r["h"] for r in rows], [r["max_residual"] for r in rows])
    return {"rows": rows, "order": fit.beta}
