import math

import numpy as np
import pytest

from critdrift.grids import (Domain, parse_domain, build_grid, radial_reduce,
                             integrate, gradient)
from critdrift.fields import ScalarField, const_field, zero_field
from critdrift.lab import fit_power_law

BALL_VOLUME = 4 * math.pi / 3


def test_box_grid_is_exact(box_domain):
    g = build_grid(box_domain, 1 / 4)
    assert g.n_nodes == 64
    assert np.allclose(g.weights, 1 / 64)
    assert abs(g.weights.sum() - 1.0) < 1e-14


def test_ball_volume_within_one_percent(ball16):
    assert abs(ball16.weights.sum() - BALL_VOLUME) / BALL_VOLUME < 0.01


def test_annulus_volume_within_one_percent():
    dom = parse_domain("annulus:r0=0.25,R=1")
    g = build_grid(dom, 1 / 16)
    exact = BALL_VOLUME * (1 - 0.25 ** 3)
    assert abs(g.weights.sum() - exact) / exact < 0.01


def test_volume_convergence_order(ball_domain):
    errs, hs = [], [1 / 8, 1 / 16, 1 / 32]
    for h in hs:
        g = build_grid(ball_domain, h)
        errs.append(abs(g.weights.sum() - BALL_VOLUME))
    fit = fit_power_law(hs, errs)
    assert fit.beta >= 0.9


def test_weights_strictly_positive(ball16):
    assert np.all(ball16.weights > 0)


def test_radial_weights_annulus():
    dom = parse_domain("annulus:r0=0.25,R=1")
    rg = radial_reduce(dom, 1 / 1000)
    exact = BALL_VOLUME * (1 - 0.25 ** 3)
    assert abs(rg.weights.sum() - exact) / exact < 1e-4


def test_radial_reduce_rejects_box(box_domain):
    with pytest.raises(ValueError):
        radial_reduce(box_domain, 1e-3)


def test_integrate_constant_box_exact(box8):
    assert abs(integrate(const_field(box8, 1.0)) - 1.0) < 1e-12


def test_integrate_linear_box_exact(box16):
    f = ScalarField(box16, box16.coords[:, 0], "x1")
    assert abs(integrate(f) - 0.5) < 1e-12


def test_integrate_inverse_radius_ball(ball32):
    r = np.linalg.norm(ball32.coords, axis=1)
    f = ScalarField(ball32, 1.0 / r, "invr")
    assert abs(integrate(f) - 2 * math.pi) / (2 * math.pi) < 0.02


def test_zero_field_integrates_to_zero(ball16):
    assert integrate(zero_field(ball16)) == 0.0


def test_radial_and_full_grid_integrals_agree(ball16):
    rg = radial_reduce(ball16.domain, 1e-3)
    # a radial function sampled both ways
    full = ScalarField(ball16, np.sum(ball16.coords ** 2, axis=1), "r2")
    rad = ScalarField(rg, rg.r ** 2, "r2")
    exact = 4 * math.pi / 5
    assert abs(integrate(full) - exact) / exact < 0.01
    assert abs(integrate(rad) - exact) / exact < 1e-4


def test_interior_nodes_have_all_neighbors(ball16):
    interior = ~ball16.band
    assert np.all(ball16.neighbors[interior] >= 0)


def test_band_contains_outside_centers(ball16):
    outside = ~ball16.inside
    assert np.all(ball16.band[outside])


def test_gradient_of_linear_is_exact(box16):
    vals = 2.0 * box16.coords[:, 0] - box16.coords[:, 2]
    g = gradient(box16, vals)
    assert np.allclose(g, np.array([2.0, 0.0, -1.0]), atol=1e-10)


def test_grid_node_cap():
    with pytest.raises(ValueError, match="128"):
        build_grid(parse_domain("ball:R=1"), 1 / 128)


def test_too_coarse_rejected(ball_domain):
    with pytest.raises(ValueError):
        build_grid(ball_domain, 0.6)


def test_parse_domain_specs():
    assert parse_domain("ball:R=2").measure == pytest.approx(BALL_VOLUME * 8)
    ann = parse_domain("annulus:r0=0.25,R=1")
    assert ann.kind == "annulus" and ann.params == (0.25, 1.0)
    box = parse_domain("box:0,1x0,2x0,1")
    assert box.measure == pytest.approx(2.0)
    with pytest.raises(ValueError):
        parse_domain("torus:R=1")
    with pytest.raises(ValueError):
        parse_domain("annulus:r0=1,R=0.5")


def test_domain_dimension_guard():
    with pytest.raises(ValueError):
        Domain("ball", (1.0,), dim=2)
