"""Boundary value problems on perforated domains and their homogenized limits.

Weak form: find u with u = g on the outer boundary and

    int A(., grad u) . grad v  +  lam int u v  =  int F v  +  int f . grad v

for all test functions vanishing on the outer boundary; hole boundaries carry
the natural condition.  With eps_scaled the first argument of A is x/eps,
reduced to the unit cell through integer lattice arithmetic, never a floating
point modulus.  The iterative linear path assumes a symmetric flux Jacobian,
which every built-in operator family satisfies.
"""

from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np

from . import fem
from .cellgeom import DomainMesh, Mesh, PerforatedCell, build_domain_mesh
from .cellsolve import EffectiveOperator
from .monotone import VectorField


@dataclasses.dataclass
class DiscreteFunction:
    """Nodal field on a lattice mesh with bilinear point evaluation."""

    mesh: Mesh
    nodal: np.ndarray
    name: str = "u"

    def __call__(self, pts: np.ndarray, mode: str = "error") -> np.ndarray:
        return fem.eval_nodal(self.mesh, self.nodal, pts, mode=mode)

    def grad(self, pts: np.ndarray, mode: str = "error") -> np.ndarray:
        return fem.eval_nodal(self.mesh, self.nodal, pts, mode=mode, grad=True)


@dataclasses.dataclass
class SolveReport:
    ndof: int
    free_dof: int
    newton_iterations: int
    residual: float
    grad_max: float
    warnings: list[str]


@dataclasses.dataclass
class BVPSpec:
    """Problem data for one solve.

    operator is a VectorField (with eps_scaled choosing the x/eps argument)
    or an EffectiveOperator table (constant in x).  Loads and Dirichlet data
    are callables of the physical coordinate; scalars are allowed for g.
    """

    domain: DomainMesh
    operator: VectorField | EffectiveOperator
    eps_scaled: bool = True
    volume_load: Callable[[np.ndarray], np.ndarray] | None = None
    div_load: Callable[[np.ndarray], np.ndarray] | None = None
    dirichlet: Callable[[np.ndarray], np.ndarray] | float = 0.0
    lam: float = 0.0
    tol: float = 1e-10


def _cell_coords(domain: DomainMesh) -> np.ndarray:
    """Quadrature points reduced to the unit cell, (ne, 4, 2).

    The fine lattice index modulo the cell resolution is exact integer
    arithmetic, so points deep inside a large domain lose no precision.
    """
    n = domain.cell.resolution
    cells = domain.mesh.element_cells % n
    return -0.5 + (cells[:, None, :] + fem.QUAD_PTS[None, :, :]) / n


class _Operator:
    """Uniform (flux, jacobian) interface over both operator kinds."""

    def __init__(self, spec: BVPSpec, space: fem.Space):
        self.space = space
        op = spec.operator
        if isinstance(op, EffectiveOperator):
            self._pts = None
            self._table = op
            self.audit_radius = op.radius
        else:
            self._table = None
            self._field = op
            self._pts = _cell_coords(spec.domain) if spec.eps_scaled else space.quad_coords()
            self.audit_radius = op.audit_radius

    def flux(self, grad: np.ndarray) -> np.ndarray:
        if self._table is not None:
            ne, q, _ = grad.shape
            return self._table.a_hat(grad.reshape(ne * q, 2)).reshape(ne, q, 2)
        return self._field(self._pts, grad)

    def jac(self, grad: np.ndarray) -> np.ndarray:
        if self._table is not None:
            ne, q, _ = grad.shape
            return self._table.jacobian(grad.reshape(ne * q, 2)).reshape(ne, q, 2, 2)
        return self._field.jacobian(self._pts, grad)


def _dirichlet_nodal(spec: BVPSpec, space: fem.Space) -> tuple[np.ndarray, np.ndarray]:
    """Boundary dof indices and a full nodal vector carrying g there."""
    mesh = space.mesh
    verts = spec.domain.gamma_vertices()
    dofs = mesh.dof_of_vertex[verts]
    g_nodal = np.zeros(space.ndof)
    if len(verts):
        if callable(spec.dirichlet):
            vals = np.asarray(spec.dirichlet(mesh.vertices[verts]), dtype=float)
        else:
            vals = np.full(len(verts), float(spec.dirichlet))
        g_nodal[dofs] = vals
    return dofs, g_nodal


def solve_bvp(spec: BVPSpec) -> tuple[DiscreteFunction, SolveReport]:
    """Newton solve of the monotone problem with Dirichlet elimination."""
    space = fem.Space(spec.domain.mesh)
    op = _Operator(spec, space)
    ndof = space.ndof
    fixed, g_full = _dirichlet_nodal(spec, space)
    free = np.setdiff1d(np.arange(ndof), fixed)

    rhs = np.zeros(ndof)
    qp = space.quad_coords()
    if spec.volume_load is not None:
        rhs += fem.assemble_load_vector(space, _eval_load(spec.volume_load, qp))
    if spec.div_load is not None:
        rhs += fem.assemble_flux_vector(space, _eval_load(spec.div_load, qp, vec=True))

    mass = None
    if spec.lam > 0.0:
        mass = fem.assemble_mass(space)

    def full(u_free: np.ndarray) -> np.ndarray:
        u = g_full.copy()
        u[free] = u_free
        return u

    def residual(u_free: np.ndarray) -> np.ndarray:
        u = full(u_free)
        grad = space.grad_at_qp(space.nodal_from_dof(u))
        r = fem.assemble_flux_vector(space, op.flux(grad))
        if mass is not None:
            r = r + spec.lam * (mass @ u)
        return (r - rhs)[free]

    def jacobian(u_free: np.ndarray):
        u = full(u_free)
        grad = space.grad_at_qp(space.nodal_from_dof(u))
        K = fem.assemble_matrix(space, jac_qp=op.jac(grad))
        if mass is not None:
            K = (K + spec.lam * mass).tocsr()
        return K[free][:, free].tocsc()

    def lin(K, b):
        return fem.solve_spd(K, b, tol=1e-12)

    # harmonic warm start: the identity-operator solve with the same data.
    # A zero start would put one-element gradient spikes of size g/h at the
    # Dirichlet boundary, far outside any audited or tabulated range.
    K0 = fem.assemble_matrix(space)
    if mass is not None:
        K0 = (K0 + spec.lam * mass).tocsr()
    rhs0 = rhs - K0 @ g_full
    u_init = fem.solve_spd(K0[free][:, free].tocsc(), rhs0[free], tol=1e-12)

    load_scale = max(float(np.linalg.norm(rhs)), float(np.abs(g_full).max()), 1.0)
    u_free, rep = fem.newton_solve(
        residual, jacobian, u_init, lin,
        tol=spec.tol, abs_floor=1e-13 * load_scale,
    )
    u = full(u_free)
    nodal = space.nodal_from_dof(u)
    grad = space.grad_at_qp(nodal)
    gmax = float(np.sqrt((grad ** 2).sum(axis=-1)).max())
    warnings: list[str] = []
    if gmax > op.audit_radius:
        warnings.append(
            f"gradient magnitude {gmax:.3g} leaves the audited radius "
            f"{op.audit_radius:.3g}; constants are unverified out there"
        )
    report = SolveReport(
        ndof=ndof,
        free_dof=len(free),
        newton_iterations=rep.iterations,
        residual=rep.final_residual,
        grad_max=gmax,
        warnings=warnings,
    )
    return DiscreteFunction(space.mesh, nodal), report


def _eval_load(fn: Callable, qp: np.ndarray, vec: bool = False) -> np.ndarray:
    ne, q, _ = qp.shape
    vals = np.asarray(fn(qp.reshape(ne * q, 2)), dtype=float)
    if vec:
        return vals.reshape(ne, q, 2)
    return vals.reshape(ne, q)


@dataclasses.dataclass
class ResolventPair:
    """Perforated torus solution with its homogenized companion."""

    u_eps: DiscreteFunction
    u_hom: DiscreteFunction
    lam: float
    eps: float
    report_eps: SolveReport
    report_hom: SolveReport


def solve_resolvent_torus(
    cell: PerforatedCell,
    field: VectorField,
    effective: EffectiveOperator,
    eps: float,
    lam: float,
    volume_load: Callable[[np.ndarray], np.ndarray],
    side: float = 1.0,
    tol: float = 1e-10,
) -> ResolventPair:
    """Resolvent problems lam u - div A = F on the periodic torus.

    The perforated solve runs on the perforated torus; the companion uses the
    tabulated effective operator on the unperforated torus of the same side.
    Positivity of lam makes both problems coercive without any mean constraint.
    """
    if lam <= 0.0:
        raise ValueError("resolvent problems need lam > 0")
    dom_eps = build_domain_mesh(cell, eps, side=side, torus=True)
    u_eps, rep_eps = _solve_torus(dom_eps, field, True, lam, volume_load, tol)

    plain = PerforatedCell(holes=(), resolution=cell.resolution,
                           separation=cell.separation)
    dom_hom = build_domain_mesh(plain, eps, side=side, torus=True)
    u_hom, rep_hom = _solve_torus(dom_hom, effective, False, lam, volume_load, tol)
    return ResolventPair(
        u_eps=u_eps, u_hom=u_hom, lam=lam, eps=eps,
        report_eps=rep_eps, report_hom=rep_hom,
    )


def _solve_torus(
    domain: DomainMesh,
    operator: VectorField | EffectiveOperator,
    eps_scaled: bool,
    lam: float,
    volume_load: Callable[[np.ndarray], np.ndarray],
    tol: float,
) -> tuple[DiscreteFunction, SolveReport]:
    spec = BVPSpec(
        domain=domain, operator=operator, eps_scaled=eps_scaled,
        volume_load=volume_load, lam=lam, tol=tol,
    )
    return solve_bvp(spec)


def function_norms(
    fn: DiscreteFunction,
    mask: np.ndarray | None = None,
    ps: tuple[float, ...] = (2.0,),
    grad: bool = False,
) -> dict[float, float]:
    """L^p norms of a nodal field (or its gradient) over masked fluid elements."""
    space = fem.Space(fn.mesh)
    out = {}
    for p in ps:
        if grad:
            out[p] = fem.grad_lp_norm(space, fn.nodal, p, mask=mask)
        else:
            out[p] = fem.lp_norm(space, fn.nodal, p, mask=mask)
    return out


def difference_on_fluid(
    u_perf: DiscreteFunction, u_plain: DiscreteFunction
) -> DiscreteFunction:
    """u_perf - u_plain on the perforated mesh.

    Both meshes share one lattice; the plain mesh simply has more elements.
    Vertices are matched by lattice index, so the restriction is exact.
    """
    mp, mq = u_perf.mesh, u_plain.mesh
    if (mp.nx, mp.ny) != (mq.nx, mq.ny) or mp.h != mq.h:
        raise ValueError("meshes do not share a lattice")
    return DiscreteFunction(mp, u_perf.nodal - u_plain.nodal, name="difference")
