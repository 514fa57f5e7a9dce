import math

import numpy as np
import pytest

from critdrift.grids import build_grid, parse_domain, radial_reduce, gradient
from critdrift.fields import (ScalarField, VectorField, const_field, zero_field,
                              zero_vector)
from critdrift.solver import (assemble, solve, continuation_solve, WeakData,
                              NearSingular, weak_residual, very_weak_residual,
                              w_minus_one_p_norm, sobolev_norm,
                              weak_infsup_constant)
from critdrift.drifts import radial_drift, bump_lattice_drift
from critdrift.lab import fit_power_law, interior_bump


def _paraboloid(grid):
    r2 = np.sum(grid.coords ** 2, axis=1)
    vals = np.where(grid.inside, (1 - r2) / 6.0, 0.0)
    return ScalarField(grid, vals, "paraboloid")


def test_lambda_zero_drops_all_lower_order_terms(box8):
    rng = np.random.default_rng(3)
    b = VectorField(box8, rng.normal(size=(box8.n_nodes, 3)), "b")
    c = ScalarField(box8, rng.uniform(0, 1, box8.n_nodes), "c")
    A0 = assemble("primal", box8, b=b, c=c, lam=0.0).matrix()
    Abare = assemble("primal", box8, lam=0.0).matrix()
    assert abs(A0 - Abare).max() == 0.0


def test_laplacian_reproduces_unit_source(ball16):
    # -Lap[(1-|x|^2)/6] = 1, exactly for the centered stencil on full rows
    op = assemble("primal", ball16, lam=0.0)
    u = _paraboloid(ball16)
    Au = op.matrix() @ u.values[op.unknowns]
    full_interior = ~ball16.band[op.unknowns]
    # keep rows whose entire stencil is also interior
    nbr_ok = np.all(ball16.neighbors[op.unknowns] >= 0, axis=1)
    safe = full_interior & nbr_ok
    safe &= np.all(~ball16.band[np.maximum(ball16.neighbors[op.unknowns], 0)], axis=1)
    assert np.max(np.abs(Au[safe] - 1.0)) < 1e-10


def test_laplacian_row_pattern_symmetric(ball16):
    L = assemble("primal", ball16, lam=0.0).laplacian
    pattern = (L != 0).astype(int)
    assert (pattern != pattern.T).nnz == 0


def test_transpose_identity_on_8cube(box8):
    rng = np.random.default_rng(5)
    b = VectorField(box8, rng.normal(size=(box8.n_nodes, 3)), "b")
    c = ScalarField(box8, rng.uniform(0, 1, box8.n_nodes), "c")
    Ap = assemble("primal", box8, b=b, c=c, lam=1.0).matrix()
    Ad = assemble("dual", box8, b=b, c=c, lam=1.0, blend="off").matrix()
    assert abs(Ap - Ad.T).max() == 0.0


def test_transpose_pairing(box8):
    rng = np.random.default_rng(6)
    b = VectorField(box8, rng.normal(size=(box8.n_nodes, 3)), "b")
    op_p = assemble("primal", box8, b=b, lam=1.0)
    op_d = assemble("dual", box8, b=b, lam=1.0, blend="off")
    n = op_p.n_unknowns
    u, v = rng.normal(size=n), rng.normal(size=n)
    lhs = float(v @ (op_p.matrix() @ u))
    rhs = float(u @ (op_d.matrix() @ v))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_radial_weighted_transpose_pairing(annulus_radial):
    b = radial_drift(annulus_radial, 0.7)
    op_p = assemble("primal", annulus_radial, b=b, lam=1.0)
    op_d = assemble("dual", annulus_radial, b=b, lam=1.0)
    rng = np.random.default_rng(8)
    n = op_p.n_unknowns
    w = annulus_radial.weights
    u, v = rng.normal(size=n), rng.normal(size=n)
    lhs = float(np.sum(w * v * (op_p.matrix() @ u)))
    rhs = float(np.sum(w * u * (op_d.matrix() @ v)))
    assert lhs == pytest.approx(rhs, rel=1e-11)


def test_discrete_maximum_principle(box8):
    rng = np.random.default_rng(9)
    f = ScalarField(box8, rng.uniform(0, 1, box8.n_nodes), "f")
    rep = solve(assemble("primal", box8, lam=0.0), WeakData(volume=f),
                check_singularity=False)
    assert rep.solution.values.min() >= 0.0


def test_ball_poisson_convergence_order(ball_domain):
    errs, hs = [], [1 / 16, 1 / 32]
    for h in hs:
        g = build_grid(ball_domain, h)
        rep = solve(assemble("primal", g, lam=0.0),
                    WeakData(volume=const_field(g, 1.0)), check_singularity=False)
        exact = _paraboloid(g)
        errs.append(float(np.max(np.abs(rep.solution.values - exact.values))))
    order = math.log2(errs[0] / errs[1])
    assert order >= 1.8
    # the node nearest the center carries u ~ 1/6
    g = build_grid(ball_domain, 1 / 16)
    rep = solve(assemble("primal", g, lam=0.0),
                WeakData(volume=const_field(g, 1.0)), check_singularity=False)
    i = int(np.argmin(np.linalg.norm(g.coords, axis=1)))
    assert rep.solution.values[i] == pytest.approx(1 / 6, rel=0.01)


def test_dual_radial_below_threshold_unique_zero():
    rg = radial_reduce(parse_domain("annulus:r0=0.001,R=1"), 5e-4)
    rep = solve(assemble("dual", rg, b=radial_drift(rg, 0.4), lam=1.0),
                WeakData(volume=zero_field(rg)))
    assert np.max(np.abs(rep.solution.values)) == 0.0
    assert rep.smallest_singular_estimate > 0.3
    assert not rep.near_singular


def test_dual_radial_above_threshold_degenerates():
    sigmas = []
    for r0, hr in ((1e-2, 1e-3), (1e-3, 5e-4)):
        rg = radial_reduce(parse_domain(f"annulus:r0={r0:g},R=1"), hr)
        op = assemble("dual", rg, b=radial_drift(rg, 2.0), lam=1.0)
        sigma, vec = weak_infsup_constant(op)
        sigmas.append(sigma)
    assert sigmas[1] < sigmas[0]
    # null vector close to r - 1 in the weighted L^2 sense
    w = rg.weights
    exact = rg.r - 1.0
    vec /= math.sqrt(float(vec @ (w * vec)))
    exact /= math.sqrt(float(exact @ (w * exact)))
    if float(vec @ (w * exact)) < 0:
        vec = -vec
    err = math.sqrt(float((vec - exact) @ (w * (vec - exact))))
    assert err <= 0.05


def test_continuation_single_step_is_bitwise_direct(annulus_radial):
    b = radial_drift(annulus_radial, 0.4)
    c = zero_field(annulus_radial)
    data = WeakData(volume=const_field(annulus_radial, 1.0))
    r1 = continuation_solve(annulus_radial, b, c, data, steps=1, kind="dual")
    r2 = solve(assemble("dual", annulus_radial, b=b, c=c, lam=1.0), data)
    assert np.array_equal(r1.solution.values, r2.solution.values)


def test_continuation_reports_near_singular_with_lambda():
    rg = radial_reduce(parse_domain("ball:R=1"), 5e-4)
    with pytest.raises(NearSingular) as err:
        continuation_solve(rg, radial_drift(rg, 2.0), zero_field(rg),
                           WeakData(volume=const_field(rg, 1.0)),
                           steps=5, kind="primal")
    assert err.value.lam <= 1.0
    assert err.value.report.smallest_singular_estimate is not None


def test_continuation_sup_norm_moves_continuously(box8):
    b = bump_lattice_drift(box8, 0.05, 0.125, 3.0)
    data = WeakData(volume=const_field(box8, 1.0))
    rep = continuation_solve(box8, b, zero_field(box8), data, steps=10,
                             kind="primal", check_singularity=False,
                             keep_trace=True)
    sups = [float(np.max(np.abs(r.solution.values))) for r in rep.trace]
    rel = [abs(b - a) / a for a, b in zip(sups, sups[1:])]
    assert max(rel) <= 0.2


def test_weak_residual_zero_on_trivial_data(box8):
    u = zero_field(box8)
    phi = interior_bump(box8, (0.5, 0.5, 0.5), 0.3)
    res = weak_residual(u, zero_vector(box8), zero_field(box8),
                        WeakData(volume=zero_field(box8)), phi)
    assert res == 0.0


def test_weak_residual_rejects_boundary_test_function(box8):
    u = zero_field(box8)
    bad = const_field(box8, 1.0)
    with pytest.raises(ValueError, match="boundary band"):
        weak_residual(u, zero_vector(box8), zero_field(box8),
                      WeakData(volume=zero_field(box8)), bad)


def test_weak_residual_decays_under_refinement(box_domain):
    vals, hs = [], [1 / 8, 1 / 16]
    for h in hs:
        g = build_grid(box_domain, h)
        b = bump_lattice_drift(g, 0.05, 0.125, 3.0)
        c = zero_field(g)
        data = WeakData(volume=const_field(g, 1.0))
        rep = solve(assemble("primal", g, b=b, c=c, lam=1.0), data,
                    check_singularity=False)
        phi = interior_bump(g, (0.5, 0.5, 0.5), 0.3)
        vals.append(abs(weak_residual(rep.solution, b, c, data, phi)))
    assert vals[1] < vals[0]


def test_very_weak_residual_of_null_profile_decays():
    # the M = 2 near-null vector against C^2-like test functions
    vals = []
    for hr in (2e-3, 1e-3):
        rg = radial_reduce(parse_domain("annulus:r0=1e-3,R=1"), hr)
        u = ScalarField(rg, rg.r - 1.0, "null")
        b = radial_drift(rg, 2.0)
        phi = ScalarField(rg, (rg.r - rg.inner_radius) ** 2 * (1 - rg.r) ** 2, "phi")
        vals.append(abs(very_weak_residual(u, b, zero_field(rg), phi)))
        # the profile lies in every L^l at M = 2; record l near (n/2)' = 3
        for l in (1.6, 2.0, 2.5, 2.9):
            assert np.isfinite(np.sum(np.abs(u.values) ** l * rg.weights))
    assert vals[1] < vals[0]


def test_w_minus_one_p_divergence_data_is_direct(ball16):
    G = radial_drift(ball16, 0.5)
    data = WeakData(divergence=G, p=2.0)
    val = w_minus_one_p_norm(data, 2.0, ball16)
    mag = G.magnitude()
    expected = float(np.sum(mag.values ** 2 * ball16.weights) ** 0.5)
    assert val == expected


def test_w_minus_one_p_volume_lift(ball32):
    data = WeakData(volume=const_field(ball32, 1.0))
    val = w_minus_one_p_norm(data, 2.0, ball32)
    assert val == pytest.approx(math.sqrt(4 * math.pi / 45), rel=0.03)


def test_w_minus_one_p_scaling_linearity(ball16):
    f = const_field(ball16, 1.0)
    v1 = w_minus_one_p_norm(WeakData(volume=f), 2.0, ball16)
    v2 = w_minus_one_p_norm(WeakData(volume=const_field(ball16, 2.0)), 2.0, ball16)
    assert v2 == pytest.approx(2.0 * v1, rel=1e-13)


def test_w_minus_one_p_exponent_guard(ball16):
    with pytest.raises(ValueError):
        w_minus_one_p_norm(WeakData(volume=const_field(ball16, 1.0)), 1.0, ball16)


def test_sobolev_norm_linear_on_box(box16):
    u = ScalarField(box16, box16.coords[:, 0], "x1")
    val = sobolev_norm(u, 2.0, order=1)
    # midpoint rule on x^2 gives exactly 1/3 - h^2/12; the gradient part is 1
    exact = (1 / 3 - box16.h ** 2 / 12) + 1.0
    assert val ** 2 == pytest.approx(exact, rel=1e-12)
    assert val ** 2 == pytest.approx(4 / 3, abs=box16.h ** 2)


def test_sobolev_norm_zero(box8):
    assert sobolev_norm(zero_field(box8), 2.0, order=2) == 0.0


def test_sobolev_gradient_matches_lift_example(ball32):
    u = ScalarField(ball32, (1 - np.sum(ball32.coords ** 2, axis=1)) / 6, "u")
    g = gradient(ball32, u.values)
    val = float(np.sum(np.sum(g ** 2, axis=1) * ball32.weights) ** 0.5)
    assert val == pytest.approx(math.sqrt(4 * math.pi / 45), rel=0.03)


def test_sobolev_second_order_requires_full_grid(annulus_radial):
    u = ScalarField(annulus_radial, annulus_radial.r, "r")
    with pytest.raises(ValueError):
        sobolev_norm(u, 2.0, order=2)


def test_weak_data_validation(ball16):
    with pytest.raises(ValueError):
        WeakData()
    with pytest.raises(ValueError):
        WeakData(volume=const_field(ball16, 1.0),
                 divergence=zero_vector(ball16))


def test_assemble_parameter_guards(ball16):
    with pytest.raises(ValueError):
        assemble("sideways", ball16)
    with pytest.raises(ValueError):
        assemble("primal", ball16, lam=1.5)


def test_nan_coefficients_rejected(ball16):
    vals = np.zeros(ball16.n_nodes)
    vals[0] = np.nan
    with pytest.raises(ValueError, match="finite"):
        ScalarField(ball16, vals, "bad")


def test_residual_monotone_in_tolerance(box8, monkeypatch):
    # force the iterative path on a small system and tighten the tolerance
    import critdrift.solver as solver_mod
    monkeypatch.setattr(solver_mod, "DIRECT_SOLVE_CAP", 10)
    b = bump_lattice_drift(box8, 0.05, 0.125, 3.0)
    data = WeakData(volume=const_field(box8, 1.0))
    op = assemble("primal", box8, b=b, lam=1.0)
    loose = solve(op, data, rtol=1e-10, check_singularity=False)
    tight = solve(op, data, rtol=1e-13, check_singularity=False)
    assert tight.residual_norm <= loose.residual_norm
    assert loose.method == "amg-gmres"


def test_benign_operator_not_near_singular(annulus_radial):
    rep = solve(assemble("dual", annulus_radial,
                         b=radial_drift(annulus_radial, 0.2), lam=1.0),
                WeakData(volume=const_field(annulus_radial, 1.0)))
    assert not rep.near_singular
    assert rep.residual_norm <= 1e-10
