"""Initial states for the falling bubble, rising bubble and a balanced shallow water jet."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import EULER, SWE, Discretization
from .fem import interpolate
from .mesh import build_mesh
from .physics import ModelConstants, State, exner, exner_partials
from .timestepping import RunConfig


@dataclass
class CaseSetup:
    """A ready-to-run problem.

    ``rho_bg`` and ``theta_bg`` define the resting background used by the
    Picard linearisation.
    """

    name: str
    disc: Discretization
    state: State
    constants: ModelConstants
    rho_bg: np.ndarray
    theta_bg: float
    config: RunConfig
    params: dict = field(default_factory=dict)

    @property
    def model(self) -> str:
        return self.disc.model


def hydrostatic_exner(z, theta0: float, c: ModelConstants):
    """Exner pressure of an isentropic atmosphere, ``1 - g z / (c_p theta0)``."""
    return 1.0 - c.g * np.asarray(z, dtype=float) / (c.c_p * theta0)


def density_from_exner(pi, theta, c: ModelConstants):
    """Invert the equation of state for density."""
    return c.p0 / (c.R * theta) * np.asarray(pi) ** (1.0 / c.exner_exponent)


def hydrostatic_background(disc: Discretization, theta0: float, c: ModelConstants, tol: float = 1e-13, max_iter: int = 50):
    """Discretely balanced isentropic rest state.

    Starts from the analytic profile and runs Newton on each density cell so
    that the projected density variation ``P(g z + c_p theta0 pi(rho))`` is the
    constant ``c_p theta0``.  A constant variation is orthogonal to the
    divergence of every wall-constrained velocity, so the momentum residual at
    rest vanishes up to round-off.

    Returns ``(pi_fn, rho, theta)`` with coefficient vectors for ``rho`` and
    ``theta``.
    """
    if not theta0 > 0:
        raise ValueError("theta0 must be positive")
    top = hydrostatic_exner(disc.mesh.Lz, theta0, c)
    if top <= 0:
        raise ValueError("domain too tall: Exner pressure reaches zero")

    def pi_fn(z):
        return hydrostatic_exner(z, theta0, c)

    Vr = disc.spaces["r"]
    rho = interpolate(Vr, lambda x, z: density_from_exner(pi_fn(z), theta0, c)).coeffs
    theta = np.full(disc.spaces["t"].ndofs, float(theta0))
    Er, W = disc.E("r", "val"), disc.W
    target = c.c_p * theta0
    for _ in range(max_iter):
        rv = Er @ rho
        res = Er.T @ (W * (c.g * disc.Z + c.c_p * theta0 * exner(rv, theta0, c) - target))
        pr, _ = exner_partials(rv, theta0, c)
        Jm = (Er.T @ sp.diags(W * c.c_p * theta0 * pr) @ Er).tocsc()
        delta = spla.spsolve(Jm, -res)
        rho = rho + delta
        if np.abs(delta).max() <= tol * np.abs(rho).max():
            break
    return pi_fn, rho, theta


def _euler_case(name, nx, nz, Lx, Lz, k, theta0, perturb, c, cfg, params):
    mesh = build_mesh(nx, nz, Lx, Lz, periodic_z=False)
    disc = Discretization(mesh, k, EULER)
    pi_fn, rho, theta_bg = hydrostatic_background(disc, theta0, c)
    theta = interpolate(disc.spaces["t"], lambda x, z: theta0 + perturb(x, z, pi_fn(z))).coeffs
    u = np.zeros(disc.spaces["u"].ndofs)
    state = State(disc, u, rho, theta)
    return CaseSetup(name, disc, state, c, rho.copy(), float(theta0), cfg, params)


def resting_slice(nx: int = 4, nz: int = 4, Lx: float = 6400.0, Lz: float = 6400.0, k: int = 2, theta0: float = 300.0, dt: float = 2.0, constants: ModelConstants | None = None) -> CaseSetup:
    """Discretely balanced isentropic atmosphere at rest on an arbitrary slice mesh."""
    c = constants or ModelConstants()
    cfg = RunConfig(dt=dt, n_steps=10, picard_iters=8)
    return _euler_case("rest", nx, nz, Lx, Lz, k, theta0, lambda x, z, pi: 0.0 * x, c, cfg, {})


def _check_resolution(resolution, *lengths):
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    counts = []
    for L in lengths:
        n = L / resolution
        if abs(n - round(n)) > 1e-9 or round(n) < 2:
            raise ValueError(f"resolution {resolution} does not divide length {L} into at least 2 cells")
        counts.append(int(round(n)))
    return counts


def straka_temperature(x, z, xc=16000.0, xr=4000.0, zc=3000.0, zr=2000.0):
    """Cold temperature anomaly of the falling bubble (K)."""
    r = np.sqrt(((x - xc) / xr) ** 2 + ((z - zc) / zr) ** 2)
    return np.where(r < 1.0, -7.5 * (1.0 + np.cos(np.pi * np.minimum(r, 1.0))), 0.0)


def straka_falling_bubble(resolution: float = 400.0, k: int = 2, constants: ModelConstants | None = None) -> CaseSetup:
    """Cold bubble in a 32 km by 6.4 km isentropic slice with theta0 = 300 K.

    The temperature anomaly is converted to potential temperature at the
    unperturbed Exner pressure; the density is left unperturbed.  The
    recommended time step scales as 0.5 s per 100 m.
    """
    c = constants or ModelConstants()
    nx, nz = _check_resolution(resolution, 32000.0, 6400.0)
    dt = 0.5 * resolution / 100.0
    cfg = RunConfig(dt=dt, n_steps=int(round(900.0 / dt)), picard_iters=32)

    def perturb(x, z, pi):
        return straka_temperature(x, z) / pi

    return _euler_case("straka", nx, nz, 32000.0, 6400.0, k, 300.0, perturb, c, cfg, {"resolution": resolution})


def rising_bubble_theta(x, z, xc=5000.0, xr=2000.0, zc=2000.0, zr=2000.0):
    """Warm potential temperature anomaly of the rising bubble (K)."""
    r = np.sqrt(((x - xc) / xr) ** 2 + ((z - zc) / zr) ** 2)
    return np.where(r < 1.0, 2.0 * np.cos(0.5 * np.pi * np.minimum(r, 1.0)) ** 2, 0.0)


def rising_bubble(resolution: float = 100.0, k: int = 3, constants: ModelConstants | None = None) -> CaseSetup:
    """Warm bubble in a 10 km square isentropic slice with theta0 = 300 K."""
    c = constants or ModelConstants()
    nx, nz = _check_resolution(resolution, 10000.0, 10000.0)
    dt = resolution / 100.0
    cfg = RunConfig(dt=dt, n_steps=int(round(1000.0 / dt)), picard_iters=32)

    def perturb(x, z, pi):
        return rising_bubble_theta(x, z)

    return _euler_case("rising_bubble", nx, nz, 10000.0, 10000.0, k, 300.0, perturb, c, cfg, {"resolution": resolution})


def planar_swe_balanced(
    n: int = 32,
    L: float = 6.4e6,
    f0: float = 1e-4,
    H0: float = 5960.0,
    u0: float = 20.0,
    eps: float = 0.05,
    k: int = 2,
    with_perturbation: bool = False,
    dt: float = 1800.0,
    g: float = 9.810616,
) -> CaseSetup:
    """Steady geostrophic jet on a doubly periodic square.

    ``u = (u0 sin(2 pi y / L), 0)``, ``rho = H0 + f0 u0 L / (2 pi g) cos(2 pi y / L)``
    and ``theta = g (1 + eps (H0 / rho)^2)`` solve the continuous thermal
    shallow water equations exactly (the thermal contribution to the
    pressure gradient cancels).  The discrete state is the nodal interpolant,
    so its drift measures the spatial error.  ``with_perturbation`` adds an
    isolated bump to the bottom topography.
    """
    if f0 == 0 and u0 != 0:
        raise ValueError("a geostrophic jet needs a nonzero Coriolis parameter")
    b = 0.0
    if with_perturbation:
        b0, rad, xc, yc = 0.02 * H0, L / 8, L / 2, L / 4

        def b(x, y):
            r = np.sqrt((x - xc) ** 2 + (y - yc) ** 2) / rad
            return np.where(r < 1.0, b0 * np.cos(0.5 * np.pi * np.minimum(r, 1.0)) ** 2, 0.0)

    c = ModelConstants(g=g, f0=f0, b=b)
    mesh = build_mesh(n, n, L, L, periodic_z=True)
    disc = Discretization(mesh, k, SWE)
    amp = f0 * u0 * L / (2 * np.pi * g) if f0 != 0 else 0.0

    def depth(x, y):
        return H0 + amp * np.cos(2 * np.pi * y / L) + 0.0 * x

    def buoy(x, y):
        return g * (1.0 + eps * (H0 / depth(x, y)) ** 2)

    u = interpolate(disc.spaces["u"], lambda x, y: (u0 * np.sin(2 * np.pi * y / L) + 0.0 * x, 0.0 * x)).coeffs
    rho = interpolate(disc.spaces["r"], depth).coeffs
    theta = interpolate(disc.spaces["t"], buoy).coeffs
    if np.min(rho) <= 0:
        raise ValueError("balanced depth is not positive; reduce u0 or f0")
    state = State(disc, u, rho, theta)
    cfg = RunConfig(dt=dt, n_steps=200, picard_iters=4)
    rho_bg = np.full(disc.spaces["r"].ndofs, float(H0))
    params = dict(n=n, L=L, f0=f0, H0=H0, u0=u0, eps=eps, k=k, with_perturbation=with_perturbation)
    return CaseSetup("planar_swe", disc, state, c, rho_bg, float(g), cfg, params)


CASES = {
    "rest": resting_slice,
    "straka": straka_falling_bubble,
    "rising_bubble": rising_bubble,
    "planar_swe": planar_swe_balanced,
}
