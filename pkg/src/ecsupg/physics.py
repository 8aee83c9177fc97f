"""Model constants, state container, Hamiltonians and their variations.

Two Hamiltonians are supported on the same bracket:

* Euler vertical slice: ``H = int rho|u|^2/2 + g rho z + c_v rho theta pi``
* thermal shallow water: ``H = int rho|u|^2/2 + rho theta (rho/2 + b)``

with Exner pressure ``pi = (R rho theta / p0)^(kappa / (1 - kappa))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Union

import numpy as np

from .discretization import EULER, SWE, Discretization
from .fem import Field

Topography = Union[float, Callable[[np.ndarray, np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class ModelConstants:
    """Physical constants in SI units.

    ``f0`` is the Coriolis parameter and ``b`` the bottom topography of the
    shallow water model, given as a constant or a function of ``(x, y)``.
    """

    g: float = 9.810616
    c_v: float = 716.5
    R: float = 287.0
    p0: float = 1.0e5
    f0: float = 0.0
    b: Topography = 0.0

    def __post_init__(self):
        for name in ("g", "c_v", "R", "p0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def c_p(self) -> float:
        return self.R + self.c_v

    @property
    def kappa(self) -> float:
        return self.R / self.c_p

    @property
    def exner_exponent(self) -> float:
        """``kappa / (1 - kappa) = R / c_v``."""
        return self.R / self.c_v

    def with_(self, **kw) -> "ModelConstants":
        return replace(self, **kw)

    def topography(self, x, z) -> np.ndarray:
        if callable(self.b):
            return np.asarray(self.b(x, z), dtype=float)
        return np.full(np.shape(x), float(self.b))


@dataclass
class State:
    """Prognostic triple ``(u, rho, theta)`` as coefficient vectors."""

    disc: Discretization
    u: np.ndarray
    rho: np.ndarray
    theta: np.ndarray
    time: float = 0.0
    model: str = field(init=False)

    def __post_init__(self):
        self.model = self.disc.model
        for name, sp_ in (("u", "u"), ("rho", "r"), ("theta", "t")):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            n = self.disc.spaces[sp_].ndofs
            if arr.shape != (n,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
            setattr(self, name, arr)

    def copy(self) -> "State":
        return State(self.disc, self.u.copy(), self.rho.copy(), self.theta.copy(), self.time)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u, self.rho, self.theta])

    def with_vector(self, v: np.ndarray) -> "State":
        nu, nr = len(self.u), len(self.rho)
        return State(self.disc, v[:nu].copy(), v[nu : nu + nr].copy(), v[nu + nr :].copy(), self.time)

    def fields(self):
        d = self.disc
        return (
            Field(d.spaces["u"], self.u),
            Field(d.spaces["r"], self.rho),
            Field(d.spaces["t"], self.theta),
        )

    def __add__(self, other: "State") -> "State":
        return State(self.disc, self.u + other.u, self.rho + other.rho, self.theta + other.theta, self.time)

    def __sub__(self, other: "State") -> "State":
        return State(self.disc, self.u - other.u, self.rho - other.rho, self.theta - other.theta, self.time)

    def scaled(self, a: float) -> "State":
        return State(self.disc, a * self.u, a * self.rho, a * self.theta, self.time)


def midpoint(a: State, b: State) -> State:
    return State(a.disc, 0.5 * (a.u + b.u), 0.5 * (a.rho + b.rho), 0.5 * (a.theta + b.theta), a.time)


# ----------------------------------------------------------------------------
# thermodynamics
# ----------------------------------------------------------------------------


def exner(rho, theta, c: ModelConstants):
    """Exner pressure ``((R / p0) rho theta)^(kappa / (1 - kappa))``."""
    prod = np.asarray(rho, dtype=float) * np.asarray(theta, dtype=float)
    if np.any(prod <= 0):
        raise ValueError("exner pressure needs rho * theta > 0")
    return (c.R / c.p0 * prod) ** c.exner_exponent


def exner_partials(rho, theta, c: ModelConstants):
    """``(d pi / d rho, d pi / d theta)``."""
    pi = exner(rho, theta, c)
    e = c.exner_exponent
    return e * pi / rho, e * pi / theta


# ----------------------------------------------------------------------------
# pointwise densities
# ----------------------------------------------------------------------------


@dataclass
class PointState:
    """A state evaluated at the volume quadrature points."""

    ux: np.ndarray
    uz: np.ndarray
    rho: np.ndarray
    theta: np.ndarray

    @classmethod
    def of(cls, z: State) -> "PointState":
        d = z.disc
        return cls(d.E("u", "x") @ z.u, d.E("u", "z") @ z.u, d.E("r", "val") @ z.rho, d.E("t", "val") @ z.theta)

    def lerp(self, other: "PointState", s: float) -> "PointState":
        return PointState(
            self.ux + s * (other.ux - self.ux),
            self.uz + s * (other.uz - self.uz),
            self.rho + s * (other.rho - self.rho),
            self.theta + s * (other.theta - self.theta),
        )


def energy_densities(disc: Discretization, p: PointState, c: ModelConstants):
    """Kinetic, internal and potential energy densities at quadrature points."""
    kin = 0.5 * p.rho * (p.ux**2 + p.uz**2)
    if disc.model == EULER:
        internal = c.c_v * p.rho * p.theta * exner(p.rho, p.theta, c)
        pot = c.g * p.rho * disc.Z
    else:
        b = c.topography(disc.X, disc.Z)
        internal = p.rho * p.theta * (0.5 * p.rho + b)
        pot = np.zeros_like(kin)
    return kin, internal, pot


def density_variation(disc: Discretization, p: PointState, c: ModelConstants) -> np.ndarray:
    """Pointwise ``dH/drho`` before projection."""
    ke = 0.5 * (p.ux**2 + p.uz**2)
    if disc.model == EULER:
        return ke + c.g * disc.Z + c.c_p * p.theta * exner(p.rho, p.theta, c)
    b = c.topography(disc.X, disc.Z)
    return ke + p.theta * (p.rho + b)


def thermal_variation(disc: Discretization, p: PointState, c: ModelConstants) -> np.ndarray:
    """Pointwise ``T`` with ``dH/dtheta = P(T)``."""
    if disc.model == EULER:
        return c.c_p * p.rho * exner(p.rho, p.theta, c)
    b = c.topography(disc.X, disc.Z)
    return p.rho * (0.5 * p.rho + b)


# ----------------------------------------------------------------------------
# energies and variations
# ----------------------------------------------------------------------------


def sub_energies(z: State, c: ModelConstants):
    """Kinetic, internal and potential energy ``(K, I, P)``."""
    kin, internal, pot = energy_densities(z.disc, PointState.of(z), c)
    d = z.disc
    return d.integrate(kin), d.integrate(internal), d.integrate(pot)


def total_energy(z: State, c: ModelConstants) -> float:
    kin, internal, pot = energy_densities(z.disc, PointState.of(z), c)
    return z.disc.integrate(kin + internal + pot)


def total_mass(z: State) -> float:
    return z.disc.integrate(z.disc.E("r", "val") @ z.rho)


@dataclass
class Variations:
    """Hamiltonian variations: ``F`` and ``D`` are coefficient vectors, ``T`` pointwise."""

    F: np.ndarray
    D: np.ndarray
    T: np.ndarray


def variations(z: State, c: ModelConstants) -> Variations:
    d = z.disc
    p = PointState.of(z)
    F = d.project_vector(p.rho * p.ux, p.rho * p.uz)
    D = d.project_scalar("r", density_variation(d, p, c))
    return Variations(F, D, thermal_variation(d, p, c))


def gauss_on_unit(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def averaged_pointwise(za: State, zb: State, c: ModelConstants, n_quad: int = 4):
    """Time averages over ``s in [0, 1]`` of ``rho u``, ``dH/drho`` and ``T`` at quadrature points."""
    d = za.disc
    pa, pb = PointState.of(za), PointState.of(zb)
    s_pts, s_w = gauss_on_unit(n_quad)
    mx = np.zeros_like(d.W)
    mz = np.zeros_like(d.W)
    Dv = np.zeros_like(d.W)
    Tv = np.zeros_like(d.W)
    for s, w in zip(s_pts, s_w):
        p = pa.lerp(pb, s)
        mx += w * p.rho * p.ux
        mz += w * p.rho * p.uz
        Dv += w * density_variation(d, p, c)
        Tv += w * thermal_variation(d, p, c)
    return mx, mz, Dv, Tv


def time_averaged_variations(za: State, zb: State, c: ModelConstants, n_quad: int = 4) -> Variations:
    """``int_0^1 dH(za + s (zb - za)) ds`` per variable by Gauss quadrature in ``s``."""
    d = za.disc
    mx, mz, Dv, Tv = averaged_pointwise(za, zb, c, n_quad)
    return Variations(d.project_vector(mx, mz), d.project_scalar("r", Dv), Tv)
