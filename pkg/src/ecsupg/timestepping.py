"""Residuals of the four time-discrete schemes, Picard solver and time loop.

Every residual is written as ``R(z^{n+1}) = 0`` with midpoint averages
``zbar = (z^n + z^{n+1}) / 2``.  The velocity residual is assembled for all
velocity basis functions and then zeroed on wall dofs, where the normal
velocity is fixed to zero.

Schemes
-------
EC_SUPG
    Stabilised bracket with time-averaged variations (energy conserving).
EC_FULL_UPWIND_APPROX
    Upwinded velocity and density transport with density-weighted momentum
    tests; midpoint ``dH/du`` unless ``RunConfig.averaged_velocity``.
NEC_BRACKET
    Bracket whose thermal momentum term is not the adjoint of the SUPG
    transport term.
NEC_DIRECT
    Discretisation of the Euler equations outside the bracket framework.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .discretization import EULER, Discretization
from .linalg import BlockSystem, solve_block
from .operators import (
    Advection,
    SupgContext,
    diagnostic_vorticity,
    traces,
    transport_L_theta_tests,
    transport_L_velocity_tests,
    upwind,
    velocity_recovery,
)
from .physics import (
    ModelConstants,
    PointState,
    State,
    averaged_pointwise,
    exner,
    exner_partials,
    midpoint,
)

log = logging.getLogger(__name__)


class SchemeKind(str, Enum):
    EC_SUPG = "ec_supg"
    EC_FULL_UPWIND_APPROX = "ec_full_upwind_approx"
    NEC_BRACKET = "nec_bracket"
    NEC_DIRECT = "nec_direct"

    @classmethod
    def parse(cls, text) -> "SchemeKind":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown scheme {text!r}; choose one of {names}") from None


@dataclass(frozen=True)
class RunConfig:
    """Time-stepping parameters.

    ``tau`` defaults to ``dt / 2``.  ``averaged_velocity`` switches the
    approximate scheme to the time-averaged momentum variation with velocity
    recovery.
    """

    dt: float
    n_steps: int = 1
    picard_iters: int = 4
    tau: float | None = None
    linear_tol: float = 1e-12
    scheme: SchemeKind = SchemeKind.EC_SUPG
    output_every: int = 1
    averaged_velocity: bool = False
    n_time_quad: int = 4

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        if self.picard_iters < 1:
            raise ValueError("picard_iters must be at least 1")
        if self.tau is not None and self.tau < 0:
            raise ValueError("tau must be non-negative")
        if self.output_every < 1:
            raise ValueError("output_every must be at least 1")
        object.__setattr__(self, "scheme", SchemeKind.parse(self.scheme))

    @property
    def tau_value(self) -> float:
        return 0.5 * self.dt if self.tau is None else float(self.tau)

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)


@dataclass
class Residual:
    u: np.ndarray
    rho: np.ndarray
    theta: np.ndarray

    def norm(self) -> float:
        return float(np.sqrt(self.u @ self.u + self.rho @ self.rho + self.theta @ self.theta))

    def max_abs(self) -> float:
        return float(max(np.abs(self.u).max(initial=0), np.abs(self.rho).max(initial=0), np.abs(self.theta).max(initial=0)))


# ----------------------------------------------------------------------------
# shared pieces
# ----------------------------------------------------------------------------


def coriolis_values(disc: Discretization, c: ModelConstants) -> np.ndarray:
    return np.full_like(disc.W, c.f0)


def _facet_normal_u(disc, fset, coeffs, side="+"):
    """Normal component ``u.n`` (``n`` the ``+`` normal) on a facet set."""
    n = disc.normal[fset]
    if fset == "v":
        return (disc.T("u", fset, side, "x") @ coeffs) * n[:, 0]
    return (disc.T("u", fset, side, "z") @ coeffs) * n[:, 1]


def _normal_test(disc, fset, g):
    """``sum_f g (w_i . n)`` over a facet set for all velocity basis functions."""
    n = disc.normal[fset]
    if fset == "v":
        return disc.T("u", fset, "+", "x").T @ (g * n[:, 0])
    return disc.T("u", fset, "+", "z").T @ (g * n[:, 1])


def _finish_u(disc, Ru):
    Ru[disc.u_wall] = 0.0
    return Ru


def vorticity_term(disc, q, F):
    """``<w_i, q F^perp>`` with ``F^perp = (-F_z, F_x)``."""
    qv = disc.E("q", "val") @ q
    Fx, Fz = disc.E("u", "x") @ F, disc.E("u", "z") @ F
    return disc.E("u", "x").T @ (disc.W * (-qv * Fz)) + disc.E("u", "z").T @ (disc.W * (qv * Fx))


def curl_upwind_term(disc, rho, U, ub):
    """``<grad_perp eta_i, ub> - int [[eta_i]] n_perp.ub~ - int_bdry eta_i n_perp.ub``.

    ``eta_i = rho w_i . U^perp``; ``rho=None`` means unit weight.  ``ub~`` is
    the upwind trace of ``ub`` with respect to ``U.n``.
    """
    d = disc
    W = d.W
    Ux, Uz = d.E("u", "x") @ U, d.E("u", "z") @ U
    ubx, ubz = d.E("u", "x") @ ub, d.E("u", "z") @ ub
    Uxx, Uxz = d.E("u", "x_dx") @ U, d.E("u", "x_dz") @ U
    Uzx, Uzz = d.E("u", "z_dx") @ U, d.E("u", "z_dz") @ U
    if rho is None:
        r = np.ones_like(W)
        rx = rz = np.zeros_like(W)
    else:
        r, rx, rz = (d.E("r", k) @ rho for k in ("val", "dx", "dz"))
    A, B = r * Ux, r * Uz
    Ax, Az = rx * Ux + r * Uxx, rz * Ux + r * Uxz
    Bx, Bz = rx * Uz + r * Uzx, rz * Uz + r * Uzz
    out = d.E("u", "z").T @ (W * (ubz * Ax - ubx * Az))
    out += d.E("u", "z_dx").T @ (W * ubz * A)
    out -= d.E("u", "z_dz").T @ (W * ubx * A)
    out -= d.E("u", "x").T @ (W * (ubz * Bx - ubx * Bz))
    out -= d.E("u", "x_dx").T @ (W * ubz * B)
    out += d.E("u", "x_dz").T @ (W * ubx * B)
    for fs in d.interior_sets():
        n = d.normal[fs]
        Un = _facet_normal_u(d, fs, U)
        sides = {}
        for side in ("+", "-"):
            rs = np.ones(len(n)) if rho is None else d.T("r", fs, side, "val") @ rho
            sides[side] = dict(
                r=rs,
                Ux=d.T("u", fs, side, "x") @ U,
                Uz=d.T("u", fs, side, "z") @ U,
                tb=-n[:, 1] * (d.T("u", fs, side, "x") @ ub) + n[:, 0] * (d.T("u", fs, side, "z") @ ub),
            )
        tt = upwind(Un, sides["+"]["tb"], sides["-"]["tb"])
        g = d.Wf[fs] * tt
        for side, sgn in (("+", 1.0), ("-", -1.0)):
            sd = sides[side]
            out -= sgn * (d.T("u", fs, side, "x").T @ (g * (-sd["r"] * sd["Uz"])))
            out -= sgn * (d.T("u", fs, side, "z").T @ (g * (sd["r"] * sd["Ux"])))
    if d.boundary:
        n = d.normal["b"]
        rs = np.ones(len(n)) if rho is None else d.T("r", "b", "+", "val") @ rho
        Ux_b, Uz_b = d.T("u", "b", "+", "x") @ U, d.T("u", "b", "+", "z") @ U
        tb = -n[:, 1] * (d.T("u", "b", "+", "x") @ ub) + n[:, 0] * (d.T("u", "b", "+", "z") @ ub)
        g = d.Wf["b"] * tb
        out -= d.T("u", "b", "+", "x").T @ (g * (-rs * Uz_b))
        out -= d.T("u", "b", "+", "z").T @ (g * (rs * Ux_b))
    return out


def upwind_density_flux(disc, rho, U):
    """``<rho U, grad phi_i> - int [[phi_i U]] rho~`` for all density basis functions."""
    d = disc
    r = d.E("r", "val") @ rho
    out = d.E("r", "dx").T @ (d.W * r * (d.E("u", "x") @ U))
    out += d.E("r", "dz").T @ (d.W * r * (d.E("u", "z") @ U))
    for fs in d.interior_sets():
        Un = _facet_normal_u(d, fs, U)
        rp, rm = traces(d, "r", fs, rho)
        g = d.Wf[fs] * Un * upwind(Un, rp, rm)
        out -= d.T("r", fs, "+", "val").T @ g - d.T("r", fs, "-", "val").T @ g
    return out


def upwind_pressure_term(disc, rho, D, U):
    """``-<rho w_i, grad_h D> + int [[D w_i]] rho~`` with ``rho~`` upwinded by ``U``."""
    d = disc
    r = d.E("r", "val") @ rho
    out = -(d.E("u", "x").T @ (d.W * r * (d.E("r", "dx") @ D)))
    out -= d.E("u", "z").T @ (d.W * r * (d.E("r", "dz") @ D))
    for fs in d.interior_sets():
        Un = _facet_normal_u(d, fs, U)
        rp, rm = traces(d, "r", fs, rho)
        Dp, Dm = traces(d, "r", fs, D)
        out += _normal_test(d, fs, d.Wf[fs] * (Dp - Dm) * upwind(Un, rp, rm))
    return out


def _inv_rho_faces(disc, rho):
    rp, rm = traces(disc, "r", "v", rho)
    return 1.0 / rp, 1.0 / rm


# ----------------------------------------------------------------------------
# residuals
# ----------------------------------------------------------------------------


def _bracket_common(z_n, z_g, cfg, c, qn=None):
    """Terms shared by the two Poisson-integrator schemes."""
    d = z_n.disc
    zb = midpoint(z_n, z_g)
    mx, mz, Dv, Tv = averaged_pointwise(z_n, z_g, c, cfg.n_time_quad)
    F = d.project_vector(mx, mz)
    D = d.project_scalar("r", Dv)
    if qn is None:
        qn = diagnostic_vorticity(d, z_n.u, z_n.rho, c.f0)
    qg = diagnostic_vorticity(d, z_g.u, z_g.rho, c.f0)
    qb = 0.5 * (qn + qg)
    ctx = SupgContext(d, cfg.tau_value, zb.u)
    dt = cfg.dt
    Ru = d.mass["u"] @ (z_g.u - z_n.u)
    Ru += dt * vorticity_term(d, qb, F)
    Ru -= dt * (d.E("u", "div").T @ (d.W * (d.E("r", "val") @ D)))
    Rr = d.mass["r"] @ (z_g.rho - z_n.rho) + dt * (d.E("r", "val").T @ (d.W * (d.E("u", "div") @ F)))
    adv = Advection.from_velocity(d, F, zb.rho)
    Rt = ctx.Ms.T @ (z_g.theta - z_n.theta) + dt * transport_L_theta_tests(d, ctx, adv, zb.theta)
    return dict(zb=zb, F=F, D=D, Tv=Tv, ctx=ctx, Ru=Ru, Rr=Rr, Rt=Rt)


def residual_ec_supg(z_n: State, z_guess: State, cfg: RunConfig, c: ModelConstants, qn=None) -> Residual:
    """Energy-conserving SUPG bracket with the Poisson integrator."""
    d = z_n.disc
    b = _bracket_common(z_n, z_guess, cfg, c, qn)
    zb, ctx = b["zb"], b["ctx"]
    s = ctx.s_of_pointwise(b["Tv"])
    sig = ctx.sigma(s)
    rb = d.E("r", "val") @ zb.rho
    faces = _inv_rho_faces(d, zb.rho) if d.theta_is_cp else None
    Ru = b["Ru"] - cfg.dt * transport_L_velocity_tests(d, 1.0 / rb, zb.theta, sig, zb.u, faces)
    return Residual(_finish_u(d, Ru), b["Rr"], b["Rt"])


def nec_thermal_term(disc, psi, psi_faces, theta):
    """``-<div(psi w_i), theta> + int [[psi w_i]] {theta}`` for all velocity basis functions.

    Evaluated in the cellwise integrated-by-parts form
    ``<psi w_i, grad_h theta> - int [[theta]] {psi} w_i.n``, which needs no
    derivative of ``psi``.  ``psi`` holds values at volume points and
    ``psi_faces`` maps each interior facet set to the ``(+, -)`` traces.
    """
    d = disc
    tx, tz = d.E("t", "dx") @ theta, d.E("t", "dz") @ theta
    out = d.E("u", "x").T @ (d.W * psi * tx) + d.E("u", "z").T @ (d.W * psi * tz)
    for fs in d.interior_sets():
        pp, pm = psi_faces[fs]
        tp, tm = traces(d, "t", fs, theta)
        out -= _normal_test(d, fs, d.Wf[fs] * (tp - tm) * 0.5 * (pp + pm))
    return out


def psi_data(disc, P, rho):
    """``psi = P / rho`` at volume points and on interior facets."""
    psi = (disc.E("t", "val") @ P) / (disc.E("r", "val") @ rho)
    faces = {}
    for fs in disc.interior_sets():
        Pp, Pm = traces(disc, "t", fs, P)
        rp, rm = traces(disc, "r", fs, rho)
        faces[fs] = (Pp / rp, Pm / rm)
    return psi, faces


def residual_nec_bracket(z_n: State, z_guess: State, cfg: RunConfig, c: ModelConstants, qn=None) -> Residual:
    """Non-antisymmetric bracket with the Poisson integrator."""
    d = z_n.disc
    b = _bracket_common(z_n, z_guess, cfg, c, qn)
    zb = b["zb"]
    psi, faces = psi_data(d, d.project_scalar("t", b["Tv"]), zb.rho)
    Ru = b["Ru"] - cfg.dt * nec_thermal_term(d, psi, faces, zb.theta)
    return Residual(_finish_u(d, Ru), b["Rr"], b["Rt"])


def _upwind_rho_theta_rows(d, z_n, z_g, zb, U, ctx, dt):
    Rr = d.mass["r"] @ (z_g.rho - z_n.rho) - dt * upwind_density_flux(d, zb.rho, U)
    adv = Advection.from_velocity(d, U)
    Rt = ctx.Ms.T @ (z_g.theta - z_n.theta) + dt * transport_L_theta_tests(d, ctx, adv, zb.theta)
    return Rr, Rt


def residual_approx_ec(z_n: State, z_guess: State, cfg: RunConfig, c: ModelConstants, qn=None) -> Residual:
    """Fully upwinded scheme with density-weighted momentum tests.

    The advecting velocity is the midpoint velocity, or with
    ``cfg.averaged_velocity`` the velocity recovered from the time-averaged
    momentum variation.
    """
    d = z_n.disc
    dt = cfg.dt
    zb = midpoint(z_n, z_guess)
    mx, mz, Dv, Tv = averaged_pointwise(z_n, z_guess, c, cfg.n_time_quad)
    D = d.project_scalar("r", Dv)
    if cfg.averaged_velocity:
        U = velocity_recovery(d, zb.rho, d.project_vector(mx, mz))
    else:
        U = zb.u
    ctx = SupgContext(d, cfg.tau_value, zb.u)
    sig = ctx.sigma(ctx.s_of_pointwise(Tv))
    rb = d.E("r", "val") @ zb.rho
    Ru = d.weighted_mass("u", rb) @ (z_guess.u - z_n.u)
    Ru -= dt * curl_upwind_term(d, zb.rho, U, zb.u)
    if c.f0 != 0.0:
        fv = coriolis_values(d, c) * rb
        Ux, Uz = d.E("u", "x") @ U, d.E("u", "z") @ U
        Ru += dt * (d.E("u", "x").T @ (d.W * fv * (-Uz)) + d.E("u", "z").T @ (d.W * fv * Ux))
    Ru -= dt * upwind_pressure_term(d, zb.rho, D, U)
    ones = np.ones_like(d.W)
    faces = (np.ones(len(d.Wf["v"])),) * 2 if d.theta_is_cp else None
    Ru -= dt * transport_L_velocity_tests(d, ones, zb.theta, sig, zb.u, faces)
    Rr, Rt = _upwind_rho_theta_rows(d, z_n, z_guess, zb, U, ctx, dt)
    return Residual(_finish_u(d, Ru), Rr, Rt)


def residual_nec_direct(z_n: State, z_guess: State, cfg: RunConfig, c: ModelConstants, qn=None) -> Residual:
    """Direct discretisation of the Euler equations (not energy conserving)."""
    d = z_n.disc
    if d.model != EULER:
        raise ValueError("the direct scheme is defined for the Euler model only")
    dt = cfg.dt
    zb = midpoint(z_n, z_guess)
    ctx = SupgContext(d, cfg.tau_value, zb.u)
    p = PointState.of(zb)
    pi = exner(p.rho, p.theta, c)
    tx, tz = d.E("t", "dx") @ zb.theta, d.E("t", "dz") @ zb.theta
    Ru = d.mass["u"] @ (z_guess.u - z_n.u)
    force = curl_upwind_term(d, None, zb.u, zb.u)
    force += d.E("u", "div").T @ (d.W * 0.5 * (p.ux**2 + p.uz**2))
    force -= d.E("u", "z").T @ (d.W * c.g)
    force += c.c_p * (d.E("u", "div").T @ (d.W * p.theta * pi))
    force += c.c_p * (d.E("u", "x").T @ (d.W * tx * pi) + d.E("u", "z").T @ (d.W * tz * pi))
    for fs in d.interior_sets():
        tp, tm = traces(d, "t", fs, zb.theta)
        rp, rm = traces(d, "r", fs, zb.rho)
        pavg = 0.5 * (exner(rp, tp, c) + exner(rm, tm, c))
        force -= c.c_p * _normal_test(d, fs, d.Wf[fs] * (tp - tm) * pavg)
    Ru -= dt * force
    Rr, Rt = _upwind_rho_theta_rows(d, z_n, z_guess, zb, zb.u, ctx, dt)
    return Residual(_finish_u(d, Ru), Rr, Rt)


def residual_plain_bracket(z_n: State, z_guess: State, cfg: RunConfig, c: ModelConstants, qn=None) -> Residual:
    """Unstabilised bracket for a continuous thermal space.

    Written without the SUPG machinery: the thermal variation is an ordinary
    L2 projection and transport is the plain Galerkin form.
    """
    d = z_n.disc
    if d.theta_is_cp:
        raise ValueError("the plain bracket reference is defined for a continuous thermal space")
    dt = cfg.dt
    zb = midpoint(z_n, z_guess)
    mx, mz, Dv, Tv = averaged_pointwise(z_n, z_guess, c, cfg.n_time_quad)
    F = d.project_vector(mx, mz)
    D = d.project_scalar("r", Dv)
    P = d.project_scalar("t", Tv)
    if qn is None:
        qn = diagnostic_vorticity(d, z_n.u, z_n.rho, c.f0)
    qb = 0.5 * (qn + diagnostic_vorticity(d, z_guess.u, z_guess.rho, c.f0))
    rb = d.E("r", "val") @ zb.rho
    tx, tz = d.E("t", "dx") @ zb.theta, d.E("t", "dz") @ zb.theta
    coef = (d.E("t", "val") @ P) / rb
    Ru = d.mass["u"] @ (z_guess.u - z_n.u) + dt * vorticity_term(d, qb, F)
    Ru -= dt * (d.E("u", "div").T @ (d.W * (d.E("r", "val") @ D)))
    Ru -= dt * (d.E("u", "x").T @ (d.W * coef * tx) + d.E("u", "z").T @ (d.W * coef * tz))
    Rr = d.mass["r"] @ (z_guess.rho - z_n.rho) + dt * (d.E("r", "val").T @ (d.W * (d.E("u", "div") @ F)))
    adv_x, adv_z = (d.E("u", "x") @ F) / rb, (d.E("u", "z") @ F) / rb
    Rt = d.mass["t"] @ (z_guess.theta - z_n.theta) + dt * (d.E("t", "val").T @ (d.W * (adv_x * tx + adv_z * tz)))
    return Residual(_finish_u(d, Ru), Rr, Rt)


RESIDUALS = {
    SchemeKind.EC_SUPG: residual_ec_supg,
    SchemeKind.EC_FULL_UPWIND_APPROX: residual_approx_ec,
    SchemeKind.NEC_BRACKET: residual_nec_bracket,
    SchemeKind.NEC_DIRECT: residual_nec_direct,
}


def residual(z_n, z_guess, cfg: RunConfig, c: ModelConstants, qn=None) -> Residual:
    return RESIDUALS[cfg.scheme](z_n, z_guess, cfg, c, qn)


# ----------------------------------------------------------------------------
# Picard Jacobian
# ----------------------------------------------------------------------------


def _dg_inverse_mass(disc: Discretization) -> sp.csr_matrix:
    """Exact inverse of the block-diagonal density mass matrix."""
    sp_ = disc.spaces["r"]
    M = disc.mass["r"].tocsr()
    dofs = sp_.cell_dofs
    block = M[dofs[0]][:, dofs[0]].toarray()
    inv = np.linalg.inv(block)
    n = dofs.shape[1]
    rows = np.repeat(dofs, n, axis=1).ravel()
    cols = np.tile(dofs, (1, n)).ravel()
    data = np.tile(inv.ravel(), len(dofs))
    return sp.csr_matrix((data, (rows, cols)), shape=M.shape)


def conservative_divergence(disc: Discretization, rho_bg: np.ndarray) -> sp.csr_matrix:
    """Matrix of ``G(du, phi) = -<rho du, grad_h phi> + int [[phi]] {rho} du.n``.

    Rows index density basis functions, columns velocity dofs.  ``G`` has
    zero column sums against the constant density field, so a Picard update
    never changes the total mass.
    """
    d = disc
    r = d.E("r", "val") @ rho_bg
    G = -(d.E("r", "dx").T @ sp.diags(d.W * r) @ d.E("u", "x"))
    G = G - d.E("r", "dz").T @ sp.diags(d.W * r) @ d.E("u", "z")
    for fs in d.interior_sets():
        rp, rm = traces(d, "r", fs, rho_bg)
        n = d.normal[fs]
        key, comp = ("x", 0) if fs == "v" else ("z", 1)
        un = sp.diags(d.Wf[fs] * 0.5 * (rp + rm) * n[:, comp]) @ d.T("u", fs, "+", key)
        jump = d.T("r", fs, "+", "val") - d.T("r", fs, "-", "val")
        G = G + jump.T @ un
    return G.tocsr()


class PicardJacobian:
    """Linearisation about a resting background ``(rho_bg, theta_bg)``.

    The thermal row is a plain mass matrix, so the thermal increment is
    solved first; its coupling into the momentum row moves to the right-hand
    side of the mixed velocity/density solve.  The mixed matrix is factorised
    once and reused for every Picard iteration of a run.
    """

    def __init__(self, disc: Discretization, c: ModelConstants, cfg: RunConfig, rho_bg: np.ndarray, theta_bg: float):
        if not theta_bg > 0:
            raise ValueError("background thermal field must be positive")
        d = disc
        self.disc, self.cfg = d, cfg
        r = d.E("r", "val") @ rho_bg
        if np.min(r) <= 0:
            raise ValueError("background density must be positive")
        h = 0.5 * cfg.dt
        weighted = cfg.scheme == SchemeKind.EC_FULL_UPWIND_APPROX
        omega = r if weighted else np.ones_like(r)
        if d.model == EULER:
            pi = exner(r, theta_bg, c)
            pr, pt = exner_partials(r, theta_bg, c)
            a_rho = c.g + c.c_p * theta_bg * pr
            a_theta = c.c_p * (theta_bg * pt + pi)
            t_over_r = c.c_p * pi
        else:
            b = c.topography(d.X, d.Z)
            a_rho = np.full_like(r, theta_bg)
            a_theta = r + b
            t_over_r = 0.5 * r + b
        self.a_rho, self.a_theta = a_rho, a_theta
        free = d.u_free
        Ex, Ez, Ediv = d.E("u", "x"), d.E("u", "z"), d.E("u", "div")
        Er, Et = d.E("r", "val"), d.E("t", "val")
        W = d.W
        A_uu = d.weighted_mass("u", omega)
        if c.f0 != 0.0:
            fw = sp.diags(W * c.f0 * omega)
            A_uu = A_uu + h * (Ez.T @ fw @ Ex - Ex.T @ fw @ Ez)
        G = conservative_divergence(d, rho_bg)
        thermal = Ex.T @ sp.diags(W * omega * t_over_r) @ d.E("t", "dx")
        thermal = thermal + Ez.T @ sp.diags(W * omega * t_over_r) @ d.E("t", "dz")
        if weighted:
            Minv = _dg_inverse_mass(d)
            A_ur = -h * (G.T @ Minv @ (Er.T @ sp.diags(W * a_rho) @ Er))
            A_ut = -h * (G.T @ Minv @ (Er.T @ sp.diags(W * a_theta) @ Et) + thermal)
        else:
            A_ur = -h * (Ediv.T @ sp.diags(W * a_rho) @ Er)
            A_ut = -h * (Ediv.T @ sp.diags(W * a_theta) @ Et + thermal)
        A_uu = sp.csr_matrix(A_uu)[free][:, free]
        self.A_ut = sp.csr_matrix(A_ut)[free]
        self.system = BlockSystem(
            A_uu.tocsc(),
            sp.csr_matrix(A_ur)[free].tocsc(),
            (h * G[:, free]).tocsc(),
            d.mass["r"].tocsc(),
        )
        self.system.factor()

    def solve(self, R: Residual):
        """Increment ``dz`` with ``J dz = -R``."""
        d = self.disc
        dth = d.solve_mass("t", -R.theta)
        bu = -R.u[d.u_free] - self.A_ut @ dth
        du_f, dr = solve_block(self.system, self.cfg.linear_tol, bu, -R.rho)
        du = np.zeros(d.spaces["u"].ndofs)
        du[d.u_free] = du_f
        return du, dr, dth


def build_picard_jacobian(disc, c, cfg, rho_bg, theta_bg) -> PicardJacobian:
    return PicardJacobian(disc, c, cfg, rho_bg, theta_bg)


# ----------------------------------------------------------------------------
# Picard iteration and time loop
# ----------------------------------------------------------------------------


@dataclass
class StepLog:
    residual_norms: list = field(default_factory=list)

    @property
    def final(self) -> float:
        return self.residual_norms[-1] if self.residual_norms else float("nan")


class Stepper:
    """Advance states with a fixed number of Picard iterations per step."""

    def __init__(self, disc, c, cfg: RunConfig, rho_bg, theta_bg, residual_fn=None):
        self.disc, self.c, self.cfg = disc, c, cfg
        self.jacobian = PicardJacobian(disc, c, cfg, rho_bg, theta_bg)
        self.residual_fn = residual_fn or RESIDUALS[cfg.scheme]
        self._needs_q = self.residual_fn in (
            residual_ec_supg,
            residual_nec_bracket,
            residual_plain_bracket,
        )

    def picard_step(self, z_n: State, z_k: State, qn=None) -> tuple[State, float]:
        R = self.residual_fn(z_n, z_k, self.cfg, self.c, qn)
        du, dr, dth = self.jacobian.solve(R)
        z = State(self.disc, z_k.u + du, z_k.rho + dr, z_k.theta + dth, z_k.time)
        return z, R.norm()

    def step(self, z_n: State) -> tuple[State, StepLog]:
        qn = diagnostic_vorticity(self.disc, z_n.u, z_n.rho, self.c.f0) if self._needs_q else None
        z = z_n.copy()
        logbook = StepLog()
        for _ in range(self.cfg.picard_iters):
            z, rn = self.picard_step(z_n, z, qn)
            logbook.residual_norms.append(rn)
        z.time = z_n.time + self.cfg.dt
        if len(logbook.residual_norms) > 1 and logbook.residual_norms[-1] > logbook.residual_norms[0]:
            log.warning("Picard residual grew from %.3e to %.3e", logbook.residual_norms[0], logbook.residual_norms[-1])
        return z, logbook


def picard_step(z_n: State, z_k: State, cfg: RunConfig, c: ModelConstants, jacobian: PicardJacobian) -> State:
    R = residual(z_n, z_k, cfg, c)
    du, dr, dth = jacobian.solve(R)
    return State(z_n.disc, z_k.u + du, z_k.rho + dr, z_k.theta + dth, z_k.time)


def step(z_n: State, cfg: RunConfig, c: ModelConstants, rho_bg, theta_bg):
    """One time step; builds a fresh Jacobian (use :class:`Stepper` in loops)."""
    return Stepper(z_n.disc, c, cfg, rho_bg, theta_bg).step(z_n)


def run(case, cfg: RunConfig, c: ModelConstants | None = None, callback=None, residual_fn=None):
    """Time loop with diagnostics after every step.

    Returns ``(records, snapshots, final_state)`` where ``records`` is a list
    of :class:`~ecsupg.diagnostics.DiagnosticsRecord` (one per step,
    including step 0) and ``snapshots`` holds states at ``cfg.output_every``.
    """
    from .diagnostics import DiagnosticsTracker

    c = case.constants if c is None else c
    z = case.state.copy()
    stepper = Stepper(z.disc, c, cfg, case.rho_bg, case.theta_bg, residual_fn)
    tracker = DiagnosticsTracker(c)
    tracker.record(0, z)
    snapshots = [(0, z.copy())]
    for n in range(1, cfg.n_steps + 1):
        z, steplog = stepper.step(z)
        tracker.record(n, z, steplog.final)
        if n % cfg.output_every == 0:
            snapshots.append((n, z.copy()))
        if callback is not None:
            callback(n, z, steplog)
    return tracker.records, snapshots, z
