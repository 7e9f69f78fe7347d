import math

import numpy as np
import pytest

from divdivch.manufactured import (case_by_name, case_constant, case_lshape, case_square,
                                   coalescence_initial, f, lshape_angle)

from oracles import fd_deviations, sample_points


@pytest.mark.parametrize("name", ["square", "lshape"])
def test_derivatives_by_finite_differences(name, rng):
    case = case_by_name(name, eps=0.7)
    x, y = sample_points(name, rng)
    dev = fd_deviations(case, x, y, t=0.3)
    assert max(dev.values()) < 1e-5, dev
    # source consistency: g = u_t + divDiv sigma
    g, rhs = case.g(x, y, 0.3), case.u_t(x, y, 0.3) + case.divdiv_sigma(x, y, 0.3)
    assert np.abs(g - rhs).max() < 1e-12 * np.abs(rhs).max()


def test_square_values():
    c = case_square()
    assert c.u(0.0, 0.0, 0.0) == pytest.approx(1.0)
    u = 0.5
    pi = math.pi
    hand = (-1 + 4 * pi ** 4) * u - ((3 * u ** 2 - 1) * (-2 * pi ** 2 * u)
                                     + 6 * u * pi ** 2 * (math.sin(pi / 4) ** 2 * math.cos(pi / 4) ** 2 * 2))
    assert c.g(0.25, 0.25, 0.0) == pytest.approx(hand, rel=1e-12)


def test_square_boundary_data_vanish(rng):
    c = case_square()
    s = rng.uniform(0, 1, 30)
    for x, y, n in [(0 * s, s, (-1, 0)), (1 + 0 * s, s, (1, 0)), (s, 0 * s, (0, -1)), (s, 1 + 0 * s, (0, 1))]:
        nn = np.array(n, float)
        assert np.abs(c.g_a(x, y, nn, 0.2)).max() < 1e-12
        assert np.abs(c.g_b(x, y, nn, 0.2)).max() < 1e-10


def test_lshape_values_and_branch(rng):
    c = case_lshape()
    assert c.u(1.0, 0.0, 0.0) == pytest.approx(1.0)
    assert lshape_angle(-0.5, -0.5) == pytest.approx(5 * math.pi / 4)
    x, y = sample_points("lshape", rng)
    assert np.abs(c.bilap(x, y)).max() == 0.0
    # 13-point stencil for lap^2 with one Richardson step against the h^2 term
    u = lambda a, b: c.u(a, b)
    far = (np.hypot(x, y) > 0.3) & ~((x > -0.1) & (y < 0.1))
    x, y = x[far], y[far]

    def bilap_fd(h):
        d4 = lambda dx, dy: (u(x - 2 * dx, y - 2 * dy) - 4 * u(x - dx, y - dy) + 6 * u(x, y)
                             - 4 * u(x + dx, y + dy) + u(x + 2 * dx, y + 2 * dy)) / h ** 4
        uxxyy = (4 * u(x, y) - 2 * (u(x + h, y) + u(x - h, y) + u(x, y + h) + u(x, y - h))
                 + (u(x + h, y + h) + u(x + h, y - h) + u(x - h, y + h) + u(x - h, y - h))) / h ** 4
        return d4(h, 0) + 2 * uxxyy + d4(0, h)

    b = (4 * bilap_fd(4e-3) - bilap_fd(8e-3)) / 3
    assert len(b) >= 20
    assert np.abs(b).max() < 1e-3


def test_constant_cases():
    one = case_constant(1.0)
    x = np.array([0.1, 0.4])
    assert np.all(one.sigma(x, x) == 0) and np.all(one.g(x, x) == 0)
    zero = case_constant(0.0)
    assert np.all(zero.sigma(x, x) == 0) and np.all(zero.u(x, x) == 0)
    two = case_constant(2.0)
    assert np.allclose(two.sigma(x, x), [-6.0, 0.0, -6.0])
    assert f(2.0) == 6.0


def test_coalescence_initial_values():
    u0 = coalescence_initial()
    assert u0(0.3, 0.5) == pytest.approx(1.0, abs=1e-6)
    a = math.tanh((0.2 - 0.19) / (math.sqrt(2) * 0.01))
    assert u0(0.5, 0.5) == pytest.approx(1 - 2 * a, abs=1e-14)
    assert u0(0.0, 0.0) == pytest.approx(-1.0, abs=1e-6)


def test_bad_eps():
    with pytest.raises(ValueError):
        case_square(0.0)
    with pytest.raises(ValueError):
        case_by_name("circle")
