import pytest

from critdrift.grids import parse_domain, build_grid, radial_reduce


@pytest.fixture(scope="session")
def box_domain():
    return parse_domain("box:0,1x0,1x0,1")


@pytest.fixture(scope="session")
def ball_domain():
    return parse_domain("ball:R=1")


@pytest.fixture(scope="session")
def box8(box_domain):
    return build_grid(box_domain, 1 / 8)


@pytest.fixture(scope="session")
def box16(box_domain):
    return build_grid(box_domain, 1 / 16)


@pytest.fixture(scope="session")
def ball16(ball_domain):
    return build_grid(ball_domain, 1 / 16)


@pytest.fixture(scope="session")
def ball32(ball_domain):
    return build_grid(ball_domain, 1 / 32)


@pytest.fixture(scope="session")
def annulus_radial():
    return radial_reduce(parse_domain("annulus:r0=0.25,R=1"), 1e-3)
