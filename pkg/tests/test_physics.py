import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ecsupg.cases import planar_swe_balanced, resting_slice
from ecsupg.cli import perturbed_state
from ecsupg.physics import (
    ModelConstants,
    State,
    exner,
    exner_partials,
    sub_energies,
    time_averaged_variations,
    total_energy,
    total_mass,
    variations,
)

C = ModelConstants()


def test_constants():
    assert C.c_p == 1003.5
    assert C.kappa == pytest.approx(0.2860, abs=5e-5)
    assert C.exner_exponent == pytest.approx(C.kappa / (1 - C.kappa))
    with pytest.raises(ValueError):
        ModelConstants(g=-1.0)


def test_exner_examples():
    assert exner(C.p0 / C.R, 1.0, C) == pytest.approx(1.0, rel=1e-15)
    rho = C.p0 / (C.R * 300.0)
    assert rho == pytest.approx(1.16144, rel=1e-5)
    assert exner(rho, 300.0, C) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(ValueError):
        exner(-1.0, 300.0, C)
    with pytest.raises(ValueError):
        exner(np.array([1.0, 0.0]), 300.0, C)


@given(rho=st.floats(0.2, 2.0), theta=st.floats(200.0, 400.0))
def test_exner_partials_match_finite_differences(rho, theta):
    pr, pt = exner_partials(rho, theta, C)
    h = 1e-6
    fr = (exner(rho * (1 + h), theta, C) - exner(rho * (1 - h), theta, C)) / (2 * h * rho)
    ft = (exner(rho, theta * (1 + h), C) - exner(rho, theta * (1 - h), C)) / (2 * h * theta)
    assert pr == pytest.approx(fr, rel=1e-8)
    assert pt == pytest.approx(ft, rel=1e-8)


@given(rho=st.floats(0.2, 2.0), theta=st.floats(200.0, 400.0), a=st.floats(0.1, 10.0))
def test_exner_depends_on_product_only(rho, theta, a):
    assert exner(a * rho, theta / a, C) == pytest.approx(exner(rho, theta, C), rel=1e-13)


@pytest.fixture(scope="module")
def swe_rest():
    case = planar_swe_balanced(n=4, L=4.0e5, u0=0.0, eps=0.0, f0=1e-4)
    return case


@pytest.fixture(scope="module")
def euler_case():
    return resting_slice(4, 4, k=2)


def test_swe_rest_energy_closed_form(swe_rest):
    z, c = swe_rest.state, swe_rest.constants
    A = swe_rest.disc.mesh.Lx * swe_rest.disc.mesh.Lz
    assert total_energy(z, c) == pytest.approx(c.g * 5960.0**2 * A / 2, rel=1e-13)
    K, I, P = sub_energies(z, c)
    assert K == 0.0 and P == 0.0
    v = variations(z, c)
    np.testing.assert_allclose(v.T, 5960.0**2 / 2, rtol=1e-14)
    assert not v.F.any()


def test_euler_energy_scaling(euler_case, rng):
    z, c = perturbed_state(euler_case, rng), euler_case.constants
    K, I, P = sub_energies(z, c)
    assert K + I + P == pytest.approx(total_energy(z, c), rel=1e-12)
    z2 = State(z.disc, 2 * z.u, z.rho, z.theta)
    K2, I2, P2 = sub_energies(z2, c)
    assert K2 == pytest.approx(4 * K, rel=1e-14) and I2 == I and P2 == P
    rest = euler_case.state
    assert sub_energies(rest, c)[0] == 0.0


def test_variation_with_constant_density(swe_rest, rng):
    d = swe_rest.disc
    z = swe_rest.state.copy()
    z.u = rng.standard_normal(len(z.u))
    v = variations(z, swe_rest.constants)
    np.testing.assert_allclose(v.F, 5960.0 * z.u, rtol=1e-12, atol=1e-9)


def test_time_average_of_equal_states_is_instantaneous(euler_case, rng):
    z, c = perturbed_state(euler_case, rng), euler_case.constants
    a, b = time_averaged_variations(z, z, c), variations(z, c)
    np.testing.assert_allclose(a.F, b.F, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(a.D, b.D, rtol=1e-13)
    np.testing.assert_allclose(a.T, b.T, rtol=1e-13)


def test_swe_time_average_closed_form(swe_rest, rng):
    d, c = swe_rest.disc, swe_rest.constants
    za = perturbed_state(swe_rest, rng)
    zb = perturbed_state(swe_rest, rng)
    v = time_averaged_variations(za, zb, c)
    ra, rb = d.E("r", "val") @ za.rho, d.E("r", "val") @ zb.rho
    comps = []
    for key in ("x", "z"):
        ua, ub = d.E("u", key) @ za.u, d.E("u", key) @ zb.u
        comps.append((ra * ua + 0.5 * ra * ub + 0.5 * rb * ua + rb * ub) / 3.0)
    closed = d.project_vector(*comps)
    np.testing.assert_allclose(v.F, closed, rtol=1e-12, atol=1e-12 * np.abs(closed).max())


def test_euler_time_average_quadrature_refinement(euler_case, rng):
    c = euler_case.constants
    za, zb = perturbed_state(euler_case, rng), perturbed_state(euler_case, rng)
    v4 = time_averaged_variations(za, zb, c, 4)
    v8 = time_averaged_variations(za, zb, c, 8)
    for a, b in ((v4.F, v8.F), (v4.D, v8.D), (v4.T, v8.T)):
        assert np.abs(a - b).max() <= 1e-10 * np.abs(b).max()


def _fd(H, z, direction, eps):
    v = z.vector()
    return (H(z.with_vector(v + eps * direction)) - H(z.with_vector(v - eps * direction))) / (2 * eps)


def _pairing(d, v, du, dr, dt):
    """``<dH/du, du> + <dH/drho, dr> + <T, dt>``."""
    ex = d.integrate((d.E("u", "x") @ v.F) * (d.E("u", "x") @ du) + (d.E("u", "z") @ v.F) * (d.E("u", "z") @ du))
    return ex + d.integrate((d.E("r", "val") @ v.D) * (d.E("r", "val") @ dr)) + d.integrate(v.T * (d.E("t", "val") @ dt))


def _setup(which, euler_case, rng):
    case = euler_case if which == "euler" else planar_swe_balanced(n=4, L=4.0e5, with_perturbation=True)
    z = perturbed_state(case, rng)
    d = case.disc
    du = rng.standard_normal(len(z.u)) * np.abs(z.u).mean()
    du[d.u_wall] = 0.0
    dr = rng.standard_normal(len(z.rho)) * 0.1 * np.abs(z.rho).mean()
    dt = rng.standard_normal(len(z.theta)) * 0.01 * np.abs(z.theta).mean()
    return case, z, (du, dr, dt)


@pytest.mark.parametrize("which", ["euler", "swe"])
@pytest.mark.parametrize("block", [0, 1, 2])
def test_block_variation_matches_central_difference(which, block, euler_case, rng):
    case, z, dirs = _setup(which, euler_case, rng)
    d, c = case.disc, case.constants
    parts = [np.zeros_like(x) for x in dirs]
    parts[block] = dirs[block]
    exact = _pairing(d, variations(z, c), *parts)
    fd = _fd(lambda s: total_energy(s, c), z, np.concatenate(parts), 1e-4)
    assert fd == pytest.approx(exact, rel=1e-6)


@pytest.mark.parametrize("which", ["euler", "swe"])
def test_joint_variation_second_order(which, euler_case, rng):
    """Along a joint direction the cubic cross terms make the O(eps^2) error visible."""
    case, z, dirs = _setup(which, euler_case, rng)
    d, c = case.disc, case.constants
    exact = _pairing(d, variations(z, c), *dirs)
    H = lambda s: total_energy(s, c)  # noqa: E731
    eps = np.array([0.2, 0.1, 0.05])
    errs = np.array([abs(_fd(H, z, np.concatenate(dirs), e) - exact) for e in eps])
    rates = np.log2(errs[:-1] / errs[1:])
    assert errs[-1] < 1e-3 * abs(exact)
    np.testing.assert_allclose(rates, 2.0, atol=0.2)


def test_mass_is_integral_of_density(euler_case):
    z = euler_case.state
    d = z.disc
    assert total_mass(z) == pytest.approx(d.integrate(d.E("r", "val") @ z.rho), rel=1e-15)
    with pytest.raises(ValueError):
        State(d, z.u[:-1], z.rho, z.theta)
