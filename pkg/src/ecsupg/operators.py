"""Building blocks of the stabilised bracket.

Functions here act on coefficient vectors of a :class:`Discretization`.
Pointwise quantities live at the volume quadrature points (arrays of length
``len(disc.W)``) or at the quadrature points of a facet set (``disc.Wf[s]``).

Facet conventions: for an interior facet, ``+`` is the lower-index cell and
``n`` its outward normal.  A scalar jump is ``a+ - a-``; the jump of a vector
``v`` is ``v+.n + v-.(-n)``.  Upwind values come from the side the flow leaves:
``+`` where ``u.n > 0`` and ``-`` otherwise, so a zero normal velocity selects
the ``-`` side.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import Discretization

CG_MODE = "full"
CP_MODE = "vertical"


class CoercivityWarning(RuntimeWarning):
    """The SUPG parameter exceeds the guaranteed-coercive range."""


@dataclass(frozen=True)
class SupgConfig:
    """SUPG parameter and direction mode.

    ``mode`` is ``"full"`` (streamline derivative ``u.grad``) for continuous
    thermal spaces and ``"vertical"`` (``u_z d/dz``) for the CP space.
    """

    tau: float
    mode: str = CP_MODE

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError(f"tau must be non-negative, got {self.tau}")
        if self.mode not in (CG_MODE, CP_MODE):
            raise ValueError(f"unknown SUPG mode {self.mode!r}")

    @classmethod
    def for_disc(cls, disc: Discretization, tau: float) -> "SupgConfig":
        return cls(tau, CP_MODE if disc.theta_is_cp else CG_MODE)


def _check_mode(disc: Discretization, cfg: SupgConfig):
    want = CP_MODE if disc.theta_is_cp else CG_MODE
    if cfg.mode != want:
        raise ValueError(
            f"SUPG mode {cfg.mode!r} does not match thermal space {disc.spaces['t'].family}"
        )


def upwind(un: np.ndarray, plus: np.ndarray, minus: np.ndarray) -> np.ndarray:
    """Upwind trace: ``plus`` where ``un > 0``, otherwise ``minus``."""
    return np.where(un > 0.0, plus, minus)


def traces(disc: Discretization, space: str, fset: str, coeffs, key: str = "val"):
    """Values on the ``+`` and ``-`` sides of an interior facet set."""
    return disc.T(space, fset, "+", key) @ coeffs, disc.T(space, fset, "-", key) @ coeffs


# ----------------------------------------------------------------------------
# projections, recovery and vorticity
# ----------------------------------------------------------------------------


def l2_project(disc: Discretization, expr, space: str) -> np.ndarray:
    """L2 projection of ``expr`` into ``space``.

    ``expr`` is either an array of values at the volume quadrature points
    (a pair of arrays for the velocity space) or a callable ``f(x, z)``.
    """
    if callable(expr):
        expr = expr(disc.X, disc.Z)
    if space == "u":
        vx, vz = expr
        return disc.project_vector(np.asarray(vx), np.asarray(vz))
    return disc.project_scalar(space, np.broadcast_to(expr, disc.W.shape))


def velocity_recovery(disc: Discretization, rho: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Solve ``<rho v, U> = <v, m>`` for all velocity test functions ``v``."""
    rv = disc.E("r", "val") @ rho
    if np.min(rv) <= 0.0:
        raise ValueError("velocity recovery needs a positive density")
    free = disc.u_free
    A = disc.weighted_mass("u", rv)[free][:, free]
    rhs = (disc.mass["u"] @ m)[free]
    out = np.zeros_like(m, dtype=float)
    out[free] = spla.spsolve(A.tocsc(), rhs)
    return out


def curl_rhs(disc: Discretization, u: np.ndarray) -> np.ndarray:
    """``-<grad_perp eta, u> + <eta, n_perp.u>_boundary`` for all ``eta`` in Vq."""
    ux, uz = disc.E("u", "x") @ u, disc.E("u", "z") @ u
    rhs = disc.E("q", "dz").T @ (disc.W * ux) - disc.E("q", "dx").T @ (disc.W * uz)
    if disc.boundary:
        n = disc.normal["b"]
        bx = disc.T("u", "b", "+", "x") @ u
        bz = disc.T("u", "b", "+", "z") @ u
        tang = -n[:, 1] * bx + n[:, 0] * bz
        rhs += disc.T("q", "b", "+", "val").T @ (disc.Wf["b"] * tang)
    return rhs


def relative_vorticity(disc: Discretization, u: np.ndarray) -> np.ndarray:
    """Weak curl ``omega`` of ``u`` in the vorticity space."""
    return disc.solve_mass("q", curl_rhs(disc, u))


class WeightedMassSolver:
    """Solve ``<eta, c x> = rhs`` in the vorticity space for varying weights ``c``.

    A factorisation at a reference weight preconditions matrix-free conjugate
    gradients; when the weight has drifted so far that the iteration stalls,
    the reference is refactorised at the current weight.
    """

    def __init__(self, disc: Discretization, space: str = "q", rtol: float = 1e-14, max_iter: int = 40):
        self.disc, self.space, self.rtol, self.max_iter = disc, space, rtol, max_iter
        self._lu = None

    def _refactor(self, c):
        self._lu = spla.splu(self.disc.weighted_mass(self.space, c))

    def solve(self, c: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        if self._lu is None:
            self._refactor(c)
            return self._lu.solve(rhs)
        E = self.disc.E(self.space, "val")
        wc = self.disc.W * c
        n = E.shape[1]
        A = spla.LinearOperator((n, n), matvec=lambda x: E.T @ (wc * (E @ x)))
        P = spla.LinearOperator((n, n), matvec=self._lu.solve)
        x, info = spla.cg(A, rhs, x0=self._lu.solve(rhs), rtol=self.rtol, atol=0.0, M=P, maxiter=self.max_iter)
        if info != 0:
            self._refactor(c)
            return self._lu.solve(rhs)
        return x


def diagnostic_vorticity(disc: Discretization, u, rho, f=0.0) -> np.ndarray:
    """Potential vorticity ``q`` with ``<eta, q rho> = <eta, omega> + <eta, f>``."""
    rv = disc.E("r", "val") @ rho
    if np.min(rv) <= 0.0:
        raise ValueError("diagnostic vorticity needs a positive density")
    rhs = curl_rhs(disc, u)
    fv = np.broadcast_to(f(disc.X, disc.Z) if callable(f) else f, disc.W.shape)
    if np.any(fv != 0.0):
        rhs = rhs + disc.E("q", "val").T @ (disc.W * fv)
    solver = disc.cache.setdefault("vorticity_solver", WeightedMassSolver(disc))
    return solver.solve(rv, rhs)


# ----------------------------------------------------------------------------
# SUPG
# ----------------------------------------------------------------------------


def supg_S(disc: Discretization, u: np.ndarray, gamma: np.ndarray, cfg: SupgConfig) -> np.ndarray:
    """Pointwise ``S(u; gamma)`` at the volume quadrature points."""
    _check_mode(disc, cfg)
    uz = disc.E("u", "z") @ u
    out = uz * (disc.E("t", "dz") @ gamma)
    if cfg.mode == CG_MODE:
        out += (disc.E("u", "x") @ u) * (disc.E("t", "dx") @ gamma)
    return out


def supg_c1(disc: Discretization, u: np.ndarray, cfg: SupgConfig) -> float:
    """Sup norm of ``div u`` (full mode) or ``d u_z/dz`` (vertical mode) at quadrature points."""
    key = "div" if cfg.mode == CG_MODE else "z_dz"
    return float(np.max(np.abs(disc.E("u", key) @ u)))


def assemble_supg_mass(disc: Discretization, tau: float, u: np.ndarray, cfg: SupgConfig):
    """``(M_s)_ij = <gamma_j + tau S(u; gamma_j), gamma_i>``."""
    _check_mode(disc, cfg)
    if tau > 0 and supg_c1(disc, u, cfg) * tau / 2 >= 1.0:
        warnings.warn("SUPG parameter beyond coercivity guard", CoercivityWarning, stacklevel=2)
    Ev = disc.E("t", "val")
    if tau == 0.0:
        return disc.mass["t"]
    D = sp.diags(disc.W * tau * (disc.E("u", "z") @ u))
    M = disc.mass["t"] + Ev.T @ D @ disc.E("t", "dz")
    if cfg.mode == CG_MODE:
        Dx = sp.diags(disc.W * tau * (disc.E("u", "x") @ u))
        M = M + Ev.T @ Dx @ disc.E("t", "dx")
    return M.tocsc()


def solve_supg_operator(disc, tau, u, gamma, cfg: SupgConfig, pointwise: bool = False):
    """SUPG operator ``s(tau, u; gamma)``.

    ``gamma`` is a coefficient vector in the thermal space, or with
    ``pointwise=True`` an array of values at volume quadrature points (used
    for expressions that are not projected first).
    """
    rhs = (
        disc.E("t", "val").T @ (disc.W * gamma) if pointwise else disc.mass["t"] @ gamma
    )
    M = assemble_supg_mass(disc, tau, u, cfg)
    return spla.splu(sp.csc_matrix(M)).solve(rhs)


class SupgContext:
    """SUPG data for a frozen upwinding velocity ``ubar``.

    Holds the factorised modified mass matrix and the traces of ``ubar``
    that enter ``sigma = s + tau S(ubar; s)`` and the SUPG-modified test
    functions.
    """

    def __init__(self, disc: Discretization, tau: float, ubar: np.ndarray):
        self.disc, self.tau, self.ubar = disc, float(tau), ubar
        self.cfg = SupgConfig.for_disc(disc, tau)
        self.cp = disc.theta_is_cp
        self.ux = disc.E("u", "x") @ ubar
        self.uz = disc.E("u", "z") @ ubar
        self.Ms = assemble_supg_mass(disc, self.tau, ubar, self.cfg)
        self._lu = spla.splu(sp.csc_matrix(self.Ms))
        self.face = {}
        if self.cp:
            vz = traces(disc, "u", "v", ubar, "z")
            un = disc.T("u", "v", "+", "x") @ ubar * disc.normal["v"][:, 0]
            self.face = {"uz+": vz[0], "uz-": vz[1], "un": un}

    def s_of_pointwise(self, values: np.ndarray) -> np.ndarray:
        """``s(tau, ubar; T)`` for a pointwise expression ``T``."""
        return self._lu.solve(self.disc.E("t", "val").T @ (self.disc.W * values))

    def s_of_field(self, gamma: np.ndarray) -> np.ndarray:
        return self._lu.solve(self.disc.mass["t"] @ gamma)

    def sigma(self, s: np.ndarray) -> dict:
        """``s + tau S(ubar; s)`` at volume points and, for CP, vertical facets."""
        d, tau = self.disc, self.tau
        vol = d.E("t", "val") @ s + tau * self.uz * (d.E("t", "dz") @ s)
        if not self.cp:
            vol = vol + tau * self.ux * (d.E("t", "dx") @ s)
            return {"vol": vol}
        sp_, sm = traces(d, "t", "v", s)
        dp, dm = traces(d, "t", "v", s, "dz")
        return {
            "vol": vol,
            "+": sp_ + tau * self.face["uz+"] * dp,
            "-": sm + tau * self.face["uz-"] * dm,
        }

    def test_volume(self, g: np.ndarray) -> np.ndarray:
        """``sum_q W g (gamma_i + tau S(ubar; gamma_i))`` for all thermal basis functions."""
        d, tau = self.disc, self.tau
        wg = d.W * g
        out = d.E("t", "val").T @ wg + tau * (d.E("t", "dz").T @ (self.uz * wg))
        if not self.cp:
            out += tau * (d.E("t", "dx").T @ (self.ux * wg))
        return out

    def test_facet(self, gp: np.ndarray, gm: np.ndarray) -> np.ndarray:
        """Facet analogue of :meth:`test_volume` on the vertical facets (weights included)."""
        d, tau = self.disc, self.tau
        out = d.T("t", "v", "+", "val").T @ gp + d.T("t", "v", "-", "val").T @ gm
        out += tau * (d.T("t", "v", "+", "dz").T @ (self.face["uz+"] * gp))
        out += tau * (d.T("t", "v", "-", "dz").T @ (self.face["uz-"] * gm))
        return out


# ----------------------------------------------------------------------------
# thermal transport L(u_adv, theta; sigma)
# ----------------------------------------------------------------------------


@dataclass
class Advection:
    """Advecting velocity at volume points and its normal component on vertical facets.

    ``n_plus`` and ``n_minus`` hold ``a.n`` evaluated from the ``+`` and ``-`` cells,
    with ``n`` the ``+`` normal in both cases.
    """

    ax: np.ndarray
    az: np.ndarray
    n_plus: np.ndarray | None = None
    n_minus: np.ndarray | None = None

    @classmethod
    def from_velocity(cls, disc: Discretization, u: np.ndarray, rho=None) -> "Advection":
        """``u`` (optionally divided by a density) in the pointwise form."""
        ax, az = disc.E("u", "x") @ u, disc.E("u", "z") @ u
        un = (disc.T("u", "v", "+", "x") @ u) * disc.normal["v"][:, 0]
        if rho is None:
            return cls(ax, az, un, un.copy())
        rv = disc.E("r", "val") @ rho
        rp, rm = traces(disc, "r", "v", rho)
        return cls(ax / rv, az / rv, un / rp, un / rm)


def theta_facet_data(disc: Discretization, theta: np.ndarray, ubar: np.ndarray):
    """Traces of ``theta`` on vertical facets and the upwind value selected by ``ubar``."""
    tp, tm = traces(disc, "t", "v", theta)
    un = (disc.T("u", "v", "+", "x") @ ubar) * disc.normal["v"][:, 0]
    return tp, tm, upwind(un, tp, tm)


def transport_L(disc, adv: Advection, theta, sigma: dict, ubar) -> float:
    """Scalar value of ``L(u_adv, theta; sigma)``.

    ``sigma`` holds values at volume points (``"vol"``) and, for the CP
    space, on both sides of the vertical facets (``"+"``, ``"-"``).  The
    upwind value on vertical facets is selected by ``ubar``.
    """
    grad_x = disc.E("t", "dx") @ theta
    grad_z = disc.E("t", "dz") @ theta
    val = disc.integrate(sigma["vol"] * (adv.ax * grad_x + adv.az * grad_z))
    if disc.theta_is_cp:
        tp, tm, tt = theta_facet_data(disc, theta, ubar)
        f = adv.n_plus * sigma["+"] * (tt - tp) - adv.n_minus * sigma["-"] * (tt - tm)
        val += float(disc.Wf["v"] @ f)
    return val


def transport_L_theta_tests(disc, ctx: SupgContext, adv: Advection, theta) -> np.ndarray:
    """``L(u_adv, theta; gamma_i + tau S(ubar; gamma_i))`` for every thermal basis function."""
    g = adv.ax * (disc.E("t", "dx") @ theta) + adv.az * (disc.E("t", "dz") @ theta)
    out = ctx.test_volume(g)
    if ctx.cp:
        tp, tm, tt = theta_facet_data(disc, theta, ctx.ubar)
        wf = disc.Wf["v"]
        out += ctx.test_facet(wf * adv.n_plus * (tt - tp), -wf * adv.n_minus * (tt - tm))
    return out


def transport_L_velocity_tests(disc, coef, theta, sigma: dict, ubar, coef_faces=None) -> np.ndarray:
    """``L(c w_i, theta; sigma)`` for every velocity basis function ``w_i``.

    ``coef`` is the pointwise factor ``c`` at volume points; ``coef_faces``
    gives its ``(+, -)`` traces on vertical facets (required for CP).
    """
    wsig = disc.W * sigma["vol"] * coef
    out = disc.E("u", "x").T @ (wsig * (disc.E("t", "dx") @ theta))
    out += disc.E("u", "z").T @ (wsig * (disc.E("t", "dz") @ theta))
    if disc.theta_is_cp:
        tp, tm, tt = theta_facet_data(disc, theta, ubar)
        cp_, cm = coef_faces
        nx = disc.normal["v"][:, 0]
        g = disc.Wf["v"] * nx * (cp_ * sigma["+"] * (tt - tp) - cm * sigma["-"] * (tt - tm))
        out += disc.T("u", "v", "+", "x").T @ g
    return out
