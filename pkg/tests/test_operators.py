import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ecsupg.discretization import Discretization
from ecsupg.fem import interpolate
from ecsupg.mesh import build_mesh
from ecsupg.operators import (
    CG_MODE,
    CP_MODE,
    Advection,
    CoercivityWarning,
    SupgConfig,
    SupgContext,
    assemble_supg_mass,
    diagnostic_vorticity,
    l2_project,
    relative_vorticity,
    solve_supg_operator,
    supg_S,
    transport_L,
    transport_L_theta_tests,
    upwind,
    velocity_recovery,
)


@pytest.fixture(scope="module")
def cg_slab():
    """Continuous thermal space with walls, so that z is representable."""
    return Discretization(build_mesh(4, 4, 1.0, 1.0, periodic_z=False), 2, "swe")


def _rand_u(d, rng, scale=1.0):
    u = scale * rng.standard_normal(d.spaces["u"].ndofs)
    u[d.u_wall] = 0.0
    return u


def test_upwind_selector_ties_take_minus():
    un = np.array([1.0, -1.0, 0.0])
    np.testing.assert_array_equal(upwind(un, np.full(3, 7.0), np.full(3, 9.0)), [7.0, 9.0, 9.0])


def test_supg_config_validation(slab_disc):
    with pytest.raises(ValueError):
        SupgConfig(-1.0)
    with pytest.raises(ValueError):
        SupgConfig(1.0, "diagonal")
    assert SupgConfig.for_disc(slab_disc, 1.0).mode == CP_MODE
    u = np.zeros(slab_disc.spaces["u"].ndofs)
    with pytest.raises(ValueError):
        supg_S(slab_disc, u, np.zeros(slab_disc.spaces["t"].ndofs), SupgConfig(1.0, CG_MODE))


# ----------------------------------------------------------------------------
# projection
# ----------------------------------------------------------------------------


@pytest.mark.parametrize("space", ["q", "r", "t"])
def test_projection_of_member_is_identity(slab_disc, rng, space):
    d = slab_disc
    f = rng.standard_normal(d.spaces[space].ndofs)
    if space == "q":
        f = interpolate(d.spaces["q"], lambda x, z: np.cos(2 * np.pi * x) + z**2).coeffs
    np.testing.assert_allclose(l2_project(d, d.E(space, "val") @ f, space), f, atol=1e-12)


def test_projection_of_scaled_velocity(slab_disc, rng):
    d = slab_disc
    u = _rand_u(d, rng)
    c = 1.7
    F = l2_project(d, (c * (d.E("u", "x") @ u), c * (d.E("u", "z") @ u)), "u")
    np.testing.assert_allclose(F, c * u, atol=1e-12)


def test_dg1_projection_matches_dense_least_squares():
    d = Discretization(build_mesh(2, 2, 2.0, 2.0, periodic_z=True), 2, "swe")
    p = l2_project(d, lambda x, z: x**2, "r")
    vals = d.E("r", "val") @ p
    npc = len(d.W) // d.mesh.num_cells
    for cell in range(d.mesh.num_cells):
        sl = slice(cell * npc, (cell + 1) * npc)
        x, z, w = d.X[sl], d.Z[sl], d.W[sl]
        A = np.stack([np.ones_like(x), x, z, x * z], axis=1)
        coef = np.linalg.solve(A.T @ (w[:, None] * A), A.T @ (w * x**2))
        np.testing.assert_allclose(vals[sl], A @ coef, atol=1e-12)


# ----------------------------------------------------------------------------
# SUPG
# ----------------------------------------------------------------------------


def test_supg_S_examples(slab_disc, cg_slab):
    d = slab_disc
    g = np.random.default_rng(0).standard_normal(d.spaces["t"].ndofs)
    cfg = SupgConfig.for_disc(d, 1.0)
    assert not supg_S(d, np.zeros(d.spaces["u"].ndofs), g, cfg).any()
    ux = interpolate(d.spaces["u"], lambda x, z: (1.0 + 0 * x, 0 * x)).coeffs
    assert np.abs(supg_S(d, ux, g, cfg)).max() == 0.0
    c = cg_slab
    uz = interpolate(c.spaces["u"], lambda x, z: (0 * x, 1.0 + 0 * x)).coeffs
    gz = interpolate(c.spaces["t"], lambda x, z: z).coeffs
    np.testing.assert_allclose(supg_S(c, uz, gz, SupgConfig.for_disc(c, 1.0)), 1.0, atol=1e-12)


@pytest.mark.parametrize("which", ["slab_disc", "torus_disc"])
def test_supg_mass_reduces_to_mass(which, request, rng):
    d = request.getfixturevalue(which)
    u = _rand_u(d, rng)
    M = d.mass["t"].toarray()
    Ms0 = assemble_supg_mass(d, 0.0, u, SupgConfig.for_disc(d, 0.0)).toarray()
    np.testing.assert_array_equal(Ms0, M)
    Msu = assemble_supg_mass(d, 5.0, np.zeros_like(u), SupgConfig.for_disc(d, 5.0)).toarray()
    np.testing.assert_allclose(Msu, M, atol=1e-15)


def test_supg_mass_warns_beyond_guard(torus_disc, rng):
    d = torus_disc
    u = _rand_u(d, rng, 100.0)
    with pytest.warns(CoercivityWarning):
        assemble_supg_mass(d, 10.0, u, SupgConfig.for_disc(d, 10.0))


@pytest.mark.parametrize("which", ["slab_disc", "torus_disc"])
def test_supg_operator_reductions_and_roundtrip(which, request, rng):
    d = request.getfixturevalue(which)
    g = rng.standard_normal(d.spaces["t"].ndofs)
    u = _rand_u(d, rng, 0.05)
    np.testing.assert_allclose(solve_supg_operator(d, 0.0, u, g, SupgConfig.for_disc(d, 0.0)), g, atol=1e-12)
    z = np.zeros_like(u)
    np.testing.assert_allclose(solve_supg_operator(d, 0.3, z, g, SupgConfig.for_disc(d, 0.3)), g, atol=1e-12)
    cfg = SupgConfig.for_disc(d, 0.3)
    s = solve_supg_operator(d, 0.3, u, g, cfg)
    Ms = assemble_supg_mass(d, 0.3, u, cfg)
    np.testing.assert_allclose(Ms @ s, d.mass["t"] @ g, atol=1e-11)


@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_supg_operator_is_linear(torus_disc, a, b, seed):
    d = torus_disc
    rng = np.random.default_rng(seed)
    u = _rand_u(d, rng, 0.05)
    cfg = SupgConfig.for_disc(d, 0.5)
    g1, g2 = rng.standard_normal((2, d.spaces["t"].ndofs))
    lhs = solve_supg_operator(d, 0.5, u, a * g1 + b * g2, cfg)
    rhs = a * solve_supg_operator(d, 0.5, u, g1, cfg) + b * solve_supg_operator(d, 0.5, u, g2, cfg)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + abs(a) + abs(b)) * 10)


# ----------------------------------------------------------------------------
# transport
# ----------------------------------------------------------------------------


@pytest.mark.parametrize("which", ["slab_disc", "torus_disc"])
def test_transport_vanishes_for_constant_theta_or_zero_velocity(which, request, rng):
    d = request.getfixturevalue(which)
    u = _rand_u(d, rng)
    ctx = SupgContext(d, 0.2, u)
    const = np.full(d.spaces["t"].ndofs, 3.0)
    out = transport_L_theta_tests(d, ctx, Advection.from_velocity(d, u), const)
    assert np.abs(out).max() < 1e-12
    th = rng.standard_normal(d.spaces["t"].ndofs)
    zero = Advection.from_velocity(d, np.zeros_like(u))
    assert np.abs(transport_L_theta_tests(d, ctx, zero, th)).max() == 0.0


def test_cg_transport_against_quadrature_oracle(torus_disc, rng):
    from ecsupg.fem import Field, evaluate_field, gauss_legendre

    d = torus_disc
    u = _rand_u(d, rng)
    th = rng.standard_normal(d.spaces["t"].ndofs)
    sig = {"vol": d.E("t", "val") @ th}
    val = transport_L(d, Advection.from_velocity(d, u), th, sig, u)
    rule = gauss_legendre(5, 2)
    pts, w = rule.on_unit_interval()
    tf, uf = Field(d.spaces["t"], th), Field(d.spaces["u"], u)
    oracle = 0.0
    for cell in range(d.mesh.num_cells):
        tv, tg = evaluate_field(tf, cell, pts, gradients=True)
        uv = evaluate_field(uf, cell, pts)
        oracle += d.mesh.dx * d.mesh.dz * np.sum(w * tv * (uv[:, 0] * tg[:, 0] + uv[:, 1] * tg[:, 1]))
    assert val == pytest.approx(oracle, abs=1e-12 * max(1.0, abs(oracle)))


def test_cp_transport_with_continuous_theta_is_volume_only(slab_disc, rng):
    d = slab_disc
    u = _rand_u(d, rng)
    th = interpolate(d.spaces["t"], lambda x, z: z**2 + 0 * x).coeffs
    ctx = SupgContext(d, 0.1, u)
    adv = Advection.from_velocity(d, u)
    full = transport_L_theta_tests(d, ctx, adv, th)
    g = adv.ax * (d.E("t", "dx") @ th) + adv.az * (d.E("t", "dz") @ th)
    np.testing.assert_allclose(full, ctx.test_volume(g), atol=1e-12)


@given(seed=st.integers(0, 10_000), a=st.floats(-3, 3))
def test_transport_bilinearity(slab_disc, seed, a):
    d = slab_disc
    rng = np.random.default_rng(seed)
    u1, u2 = _rand_u(d, rng), _rand_u(d, rng)
    th = rng.standard_normal(d.spaces["t"].ndofs)
    ctx = SupgContext(d, 0.1, u1)
    A = lambda v: transport_L_theta_tests(d, ctx, Advection.from_velocity(d, v), th)  # noqa: E731
    np.testing.assert_allclose(A(u1 + a * u2), A(u1) + a * A(u2), atol=1e-11 * (1 + abs(a)))


def test_supg_dissipation_identity(torus_disc, rng):
    d = torus_disc
    u = _rand_u(d, rng, 0.3)
    tau = 0.05
    th = rng.standard_normal(d.spaces["t"].ndofs)
    ctx = SupgContext(d, tau, u)
    ell = transport_L_theta_tests(d, ctx, Advection.from_velocity(d, u), th)
    th_t = ctx._lu.solve(-ell, trans="T")
    tv, tt = d.E("t", "val") @ th, d.E("t", "val") @ th_t
    adv = ctx.ux * (d.E("t", "dx") @ th) + ctx.uz * (d.E("t", "dz") @ th)
    lhs = d.integrate(tt * tv) + d.integrate(tv * adv) + tau * d.integrate(adv**2) + tau * d.integrate(adv * tt)
    assert abs(lhs) <= 1e-10 * max(1.0, d.integrate(tv**2))


# ----------------------------------------------------------------------------
# recovery and vorticity
# ----------------------------------------------------------------------------


def test_velocity_recovery_examples(slab_disc, rng):
    d = slab_disc
    m = _rand_u(d, rng)
    c = np.full(d.spaces["r"].ndofs, 2.5)
    np.testing.assert_allclose(velocity_recovery(d, c, m), m / 2.5, atol=1e-12)
    rho = 1.0 + 0.3 * rng.uniform(size=d.spaces["r"].ndofs)
    u = _rand_u(d, rng)
    rv = d.E("r", "val") @ rho
    mom = d.project_vector(rv * (d.E("u", "x") @ u), rv * (d.E("u", "z") @ u))
    np.testing.assert_allclose(velocity_recovery(d, rho, mom), u, atol=1e-12)
    with pytest.raises(ValueError):
        velocity_recovery(d, -c, m)


def test_diagnostic_vorticity_examples(torus_disc, slab_disc, rng):
    d = torus_disc
    u0 = np.zeros(d.spaces["u"].ndofs)
    q = diagnostic_vorticity(d, u0, np.full(d.spaces["r"].ndofs, 4.0), 2.0)
    np.testing.assert_allclose(q, 0.5, atol=1e-13)
    u = _rand_u(d, rng)
    rho = 1.0 + 0.2 * rng.uniform(size=d.spaces["r"].ndofs)
    q = diagnostic_vorticity(d, u, rho, 1.3)
    assert d.integrate((d.E("q", "val") @ q) * (d.E("r", "val") @ rho)) == pytest.approx(1.3, abs=1e-12)
    s = slab_disc
    shear = interpolate(s.spaces["u"], lambda x, z: (-z + 0.5, 0 * x)).coeffs
    q = diagnostic_vorticity(s, shear, np.ones(s.spaces["r"].ndofs), 0.0)
    np.testing.assert_allclose(q, 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        diagnostic_vorticity(s, shear, -np.ones(s.spaces["r"].ndofs))


def test_relative_vorticity_examples(torus_disc, rng):
    d = torus_disc
    assert not relative_vorticity(d, np.zeros(d.spaces["u"].ndofs)).any()
    const = interpolate(d.spaces["u"], lambda x, z: (0.7 + 0 * x, -0.2 + 0 * x)).coeffs
    assert np.abs(relative_vorticity(d, const)).max() < 1e-12
    zeta = rng.standard_normal(d.spaces["q"].ndofs)
    cx, cz = -(d.E("q", "dz") @ zeta), d.E("q", "dx") @ zeta
    u = d.project_vector(cx, cz)
    om = relative_vorticity(d, u)
    Qx, Qz = d.E("q", "dx"), d.E("q", "dz")
    K = (Qx.T @ (d.W[:, None] * Qx.toarray())) + (Qz.T @ (d.W[:, None] * Qz.toarray()))
    np.testing.assert_allclose(d.mass["q"] @ om, -(K @ zeta), atol=1e-10)
