"""Energy series, DG semi-norms, error norms and structural checks."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .discretization import Discretization
from .mesh import Mesh
from .operators import (
    Advection,
    SupgConfig,
    SupgContext,
    assemble_supg_mass,
    diagnostic_vorticity,
    relative_vorticity,
    supg_c1,
    traces,
    transport_L_theta_tests,
    transport_L_velocity_tests,
)
from .physics import ModelConstants, State, sub_energies, total_mass


@dataclass
class DiagnosticsRecord:
    step: int
    time: float
    energy: float
    kinetic: float
    internal: float
    potential: float
    rel_energy_err: float
    mass: float
    dg_rho: float
    dg_u: float
    theta_min: float
    theta_max: float

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    def as_row(self):
        return [getattr(self, f) for f in self.columns()]

    def as_dict(self):
        return asdict(self)


def dg_seminorm_rho(disc: Discretization, rho: np.ndarray) -> float:
    """Broken H1 semi-norm of ``rho`` plus jumps scaled by the facet-normal cell size."""
    W = disc.W
    gx, gz = disc.E("r", "dx") @ rho, disc.E("r", "dz") @ rho
    total = float(W @ (gx**2 + gz**2))
    for fs in disc.interior_sets():
        h = disc.mesh.dx if fs == "v" else disc.mesh.dz
        rp, rm = traces(disc, "r", fs, rho)
        total += float(disc.Wf[fs] @ ((rp - rm) ** 2)) / h
    return float(np.sqrt(total))


def dg_seminorm_u(disc: Discretization, u: np.ndarray) -> float:
    """``sqrt(||div u||^2 + ||omega||^2)`` with the weak relative vorticity ``omega``."""
    div = disc.E("u", "div") @ u
    om = disc.E("q", "val") @ relative_vorticity(disc, u)
    return float(np.sqrt(disc.W @ (div**2 + om**2)))


def relative_energy_error(series) -> np.ndarray:
    e = np.asarray(series, dtype=float)
    if e.size == 0:
        return e
    if e[0] == 0.0:
        raise ValueError("initial energy is zero; relative error undefined")
    return (e - e[0]) / e[0]


def l2_error(disc: Discretization, space: str, a: np.ndarray, b: np.ndarray) -> float:
    """L2 norm of the difference of two fields of the same space."""
    if a.shape != b.shape or a.shape[0] != disc.spaces[space].ndofs:
        raise ValueError("fields do not belong to the same space")
    if space == "u":
        d = a - b
        dx, dz = disc.E("u", "x") @ d, disc.E("u", "z") @ d
        return float(np.sqrt(disc.W @ (dx**2 + dz**2)))
    v = disc.E(space, "val") @ (a - b)
    return float(np.sqrt(disc.W @ v**2))


class DiagnosticsTracker:
    """Accumulate one :class:`DiagnosticsRecord` per step."""

    def __init__(self, c: ModelConstants):
        self.c = c
        self.records: list[DiagnosticsRecord] = []
        self.residuals: list[float] = []
        self._e0 = None

    def record(self, step: int, z: State, residual: float = float("nan")) -> DiagnosticsRecord:
        k, i, p = sub_energies(z, self.c)
        e = k + i + p
        if self._e0 is None:
            self._e0 = e
        rec = DiagnosticsRecord(
            step=step,
            time=z.time,
            energy=e,
            kinetic=k,
            internal=i,
            potential=p,
            rel_energy_err=(e - self._e0) / self._e0,
            mass=total_mass(z),
            dg_rho=dg_seminorm_rho(z.disc, z.rho),
            dg_u=dg_seminorm_u(z.disc, z.u),
            theta_min=float(z.theta.min()),
            theta_max=float(z.theta.max()),
        )
        self.records.append(rec)
        self.residuals.append(residual)
        return rec


def series(records, name: str) -> np.ndarray:
    return np.array([getattr(r, name) for r in records])


# ----------------------------------------------------------------------------
# bracket antisymmetry
# ----------------------------------------------------------------------------


def _unit(n, j):
    e = np.zeros(n)
    e[j] = 1.0
    return e


def bracket_matrix(state: State, c: ModelConstants, tau: float, kind: str = "ec") -> np.ndarray:
    """Dense matrix ``J`` with ``{F, H} = F^T J H`` at frozen state coefficients.

    Columns are obtained by applying the bracket to unit variations ``H``;
    rows enumerate the test variations ``F`` over the free velocity dofs,
    density dofs and thermal dofs.  ``kind`` is ``"ec"`` for the stabilised
    bracket and ``"nec"`` for the non-antisymmetric variant.
    """
    from .timestepping import nec_thermal_term, psi_data, vorticity_term

    d = state.disc
    u, rho, theta = state.u, state.rho, state.theta
    q = diagnostic_vorticity(d, u, rho, c.f0)
    ctx = SupgContext(d, tau, u)
    free = d.u_free
    nU, nR, nT = d.spaces["u"].ndofs, d.spaces["r"].ndofs, d.spaces["t"].ndofs
    nu = len(free)
    N = nu + nR + nT
    r = d.E("r", "val") @ rho
    inv_faces = None
    if d.theta_is_cp:
        rp, rm = traces(d, "r", "v", rho)
        inv_faces = (1.0 / rp, 1.0 / rm)
    Mt = d.mass["t"]
    div_r = (d.E("r", "val").T @ (d.W[:, None] * d.E("u", "div")[:, free].toarray()))
    J = np.zeros((N, N))
    for j in range(nu):
        Hu = np.zeros(nU)
        Hu[free[j]] = 1.0
        col = np.zeros(N)
        col[:nu] = -vorticity_term(d, q, Hu)[free]
        col[nu : nu + nR] = -div_r[:, j]
        ell = transport_L_theta_tests(d, ctx, Advection.from_velocity(d, Hu, rho), theta)
        col[nu + nR :] = -(Mt @ ctx._lu.solve(ell, trans="T"))
        J[:, j] = col
    for j in range(nR):
        col = np.zeros(N)
        col[:nu] = div_r[j, :]
        J[:, nu + j] = col
    for j in range(nT):
        Ht = _unit(nT, j)
        col = np.zeros(N)
        if kind == "ec":
            sig = ctx.sigma(ctx.s_of_field(Ht))
            col[:nu] = transport_L_velocity_tests(d, 1.0 / r, theta, sig, u, inv_faces)[free]
        elif kind == "nec":
            psi, faces = psi_data(d, Ht, rho)
            col[:nu] = nec_thermal_term(d, psi, faces, theta)[free]
        else:
            raise ValueError(f"unknown bracket kind {kind!r}")
        J[:, nu + nR + j] = col
    return J


def check_bracket_antisymmetry(state: State, c: ModelConstants, tau: float, kind: str = "ec") -> float:
    """``max|J + J^T| / max|J|`` for the bracket at ``state`` (0 for a zero matrix)."""
    J = bracket_matrix(state, c, tau, kind)
    scale = np.abs(J).max()
    if scale == 0.0:
        return 0.0
    return float(np.abs(J + J.T).max() / scale)


# ----------------------------------------------------------------------------
# coercivity and complex checks
# ----------------------------------------------------------------------------


@dataclass
class CoercivityResult:
    lambda_min: float
    bound: float
    c1: float

    @property
    def holds(self) -> bool:
        return self.lambda_min >= self.bound - 1e-10


def coercivity_check(disc: Discretization, tau: float, u: np.ndarray) -> CoercivityResult:
    """Smallest generalised eigenvalue of ``(M_s + M_s^T)/2`` against the mass matrix.

    The lower bound is ``1 - c1 tau / 2``, with ``c1`` the maximum of ``|div u|``
    (continuous thermal space) or ``|d u_z / dz|`` (CP space) over the
    quadrature points, where the rule integrates the relevant products exactly.
    """
    cfg = SupgConfig.for_disc(disc, tau)
    Ms = assemble_supg_mass(disc, tau, u, cfg).toarray()
    M = disc.mass["t"].toarray()
    lam = sla.eigh(0.5 * (Ms + Ms.T), M, eigvals_only=True)
    c1 = supg_c1(disc, u, cfg)
    return CoercivityResult(float(lam.min()), 1.0 - c1 * tau / 2.0, c1)


def complex_check(mesh: Mesh, k: int, n_samples: int = 5, seed: int = 0):
    """Residuals of ``grad_perp CG(k) in RT(k)`` and ``div RT(k) in DG(k-1)``.

    Random fields are drawn, mapped by the differential operator, projected
    (without wall constraints) into the target space and compared at all
    quadrature points.  Returns ``(div_residual, curl_residual)``; the
    pointwise identity ``div grad_perp = 0`` is folded into the curl residual.
    """
    d = Discretization(mesh, k, "swe" if mesh.periodic_z else "euler")
    rng = np.random.default_rng(seed)
    Mu = spla.splu(d.mass["u"])
    div_res = curl_res = 0.0
    for _ in range(n_samples):
        w = rng.standard_normal(d.spaces["u"].ndofs)
        div = d.E("u", "div") @ w
        proj = d.E("r", "val") @ d.project_scalar("r", div)
        div_res = max(div_res, np.abs(proj - div).max() / max(1.0, np.abs(div).max()))
        zeta = rng.standard_normal(d.spaces["q"].ndofs)
        cx, cz = -(d.E("q", "dz") @ zeta), d.E("q", "dx") @ zeta
        rhs = d.E("u", "x").T @ (d.W * cx) + d.E("u", "z").T @ (d.W * cz)
        v = Mu.solve(rhs)
        err = max(np.abs(d.E("u", "x") @ v - cx).max(), np.abs(d.E("u", "z") @ v - cz).max())
        scale = max(1.0, np.abs(cx).max(), np.abs(cz).max())
        curl_res = max(curl_res, err / scale, np.abs(d.E("u", "div") @ v).max() / scale)
    return float(div_res), float(curl_res)
