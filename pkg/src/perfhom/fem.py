"""Q1 finite element kernels on structured lattice meshes.

Everything is vectorized over elements: meshes are unions of identical
h x h squares, so one set of reference shape tables serves all elements.
Quadrature is 2x2 Gauss throughout.
"""

from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cellgeom import BoundaryEdges, Mesh
from .errors import NewtonDiverged, SupportViolation, TableRangeExceeded

_G1 = 0.5 - 0.5 / np.sqrt(3.0)
_G2 = 0.5 + 0.5 / np.sqrt(3.0)

# reference quadrature on [0,1]^2: points (4, 2), weights (4,)
QUAD_PTS = np.array([[_G1, _G1], [_G2, _G1], [_G2, _G2], [_G1, _G2]])
QUAD_W = np.full(4, 0.25)


def shape_values(pts: np.ndarray) -> np.ndarray:
    """(m, 4) bilinear basis values at reference points; node order SW SE NE NW."""
    a, b = pts[:, 0], pts[:, 1]
    return np.column_stack([(1 - a) * (1 - b), a * (1 - b), a * b, (1 - a) * b])


def shape_gradients(pts: np.ndarray) -> np.ndarray:
    """(m, 4, 2) reference gradients of the bilinear basis."""
    a, b = pts[:, 0], pts[:, 1]
    g = np.empty((len(pts), 4, 2))
    g[:, 0, 0] = -(1 - b)
    g[:, 0, 1] = -(1 - a)
    g[:, 1, 0] = 1 - b
    g[:, 1, 1] = -a
    g[:, 2, 0] = b
    g[:, 2, 1] = a
    g[:, 3, 0] = -b
    g[:, 3, 1] = 1 - a
    return g


N_Q = shape_values(QUAD_PTS)
G_Q = shape_gradients(QUAD_PTS)


class Space:
    """Scalar Q1 space on a mesh, with periodic dof identification baked in."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.edof = mesh.dof_of_vertex[mesh.elements]
        if np.any(self.edof < 0):
            raise ValueError("element references a vertex without a dof")
        self.ndof = mesh.ndof
        rep = np.full(mesh.ndof, -1, dtype=np.int64)
        vid = np.nonzero(mesh.dof_of_vertex >= 0)[0]
        rep[mesh.dof_of_vertex[vid[::-1]]] = vid[::-1]
        self.rep_vertex = rep

    def nodal_from_dof(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros(self.mesh.num_vertices, dtype=u.dtype)
        sel = self.mesh.dof_of_vertex >= 0
        out[sel] = u[self.mesh.dof_of_vertex[sel]]
        return out

    def dof_from_nodal(self, nodal: np.ndarray) -> np.ndarray:
        return nodal[self.rep_vertex]

    def quad_coords(self) -> np.ndarray:
        """(ne, 4, 2) physical quadrature coordinates."""
        m = self.mesh
        org = m.element_cells * m.h + np.asarray(m.origin)
        return org[:, None, :] + QUAD_PTS[None, :, :] * m.h

    def value_at_qp(self, nodal: np.ndarray) -> np.ndarray:
        u = nodal[self.mesh.elements]
        return np.einsum("qk,ek->eq", N_Q, u)

    def grad_at_qp(self, nodal: np.ndarray) -> np.ndarray:
        u = nodal[self.mesh.elements]
        return np.einsum("qkd,ek->eqd", G_Q, u) / self.mesh.h


def _scatter_element_matrices(space: Space, ke: np.ndarray) -> sp.csr_matrix:
    rows = np.repeat(space.edof, 4, axis=1).ravel()
    cols = np.tile(space.edof, (1, 4)).ravel()
    mat = sp.coo_matrix(
        (ke.ravel(), (rows, cols)), shape=(space.ndof, space.ndof)
    )
    return mat.tocsr()


def assemble_matrix(
    space: Space, jac_qp: np.ndarray | None = None
) -> sp.csr_matrix:
    """Stiffness matrix sum_q w (J grad u) . grad v, identity J if omitted.

    jac_qp: (ne, nq, 2, 2).  The h^2 element area cancels the 1/h^2 of the
    two reference gradients, so no mesh factor appears.
    """
    ne = space.mesh.num_elements
    if jac_qp is not None:
        gj = np.einsum("eqdc,qjc->eqjd", jac_qp, G_Q)
        ke = np.einsum("qid,eqjd,q->eij", G_Q, gj, QUAD_W)
    else:
        ke = np.broadcast_to(
            np.einsum("qid,qjd,q->ij", G_Q, G_Q, QUAD_W)[None, :, :], (ne, 4, 4)
        )
    return _scatter_element_matrices(space, ke)


def assemble_mass(
    space: Space, coeff_qp: np.ndarray | float = 1.0
) -> sp.csr_matrix:
    """Mass matrix sum_q w h^2 m u v with coefficient m at quadrature points."""
    m = space.mesh
    mm = np.broadcast_to(
        np.asarray(coeff_qp, dtype=float), (m.num_elements, 4)
    )
    ke = np.einsum("qi,qj,eq,q->eij", N_Q, N_Q, mm, QUAD_W) * m.h ** 2
    return _scatter_element_matrices(space, ke)


def assemble_flux_vector(space: Space, flux_qp: np.ndarray) -> np.ndarray:
    """Assemble r_i = int flux . grad phi_i with flux given at quadrature points."""
    h = space.mesh.h
    contrib = np.einsum("eqd,qid,q->ei", flux_qp, G_Q, QUAD_W) * h
    r = np.zeros(space.ndof)
    np.add.at(r, space.edof, contrib)
    return r


def assemble_load_vector(space: Space, f_qp: np.ndarray) -> np.ndarray:
    """Assemble l_i = int f phi_i with f given at quadrature points."""
    h = space.mesh.h
    contrib = np.einsum("eq,qi,q->ei", f_qp, N_Q, QUAD_W) * h * h
    r = np.zeros(space.ndof)
    np.add.at(r, space.edof, contrib)
    return r


def assemble_edge_load(
    space: Space, edges: BoundaryEdges, g_edge: np.ndarray
) -> np.ndarray:
    """Assemble int_e g phi ds for per-edge constant g (trapezoid is exact)."""
    h = space.mesh.h
    r = np.zeros(space.ndof)
    w = 0.5 * h * np.asarray(g_edge, dtype=float)
    np.add.at(r, space.mesh.dof_of_vertex[edges.v0], w)
    np.add.at(r, space.mesh.dof_of_vertex[edges.v1], w)
    return r


_DIRECT_LIMIT = 60_000


def solve_spd(
    K: sp.spmatrix, b: np.ndarray, tol: float = 1e-12, direct: bool | None = None
) -> np.ndarray:
    """Solve an SPD sparse system: sparse LU when small, AMG-CG when large."""
    n = K.shape[0]
    if direct is None:
        direct = n <= _DIRECT_LIMIT
    if direct:
        return spla.splu(K.tocsc()).solve(b)
    import pyamg

    ml = pyamg.ruge_stuben_solver(K.tocsr(), max_coarse=100)
    M = ml.aspreconditioner(cycle="V")
    x, info = spla.cg(K, b, rtol=tol, atol=0.0, M=M, maxiter=400)
    if info != 0:
        x, info = spla.cg(K, b, x0=x, rtol=tol, atol=0.0, maxiter=20 * n)
        if info != 0:
            raise RuntimeError(f"CG failed to converge (info={info})")
    return x


def solve_mean_zero(
    K: sp.spmatrix, b: np.ndarray, weight: np.ndarray
) -> tuple[np.ndarray, float]:
    """Solve K u = b subject to weight . u = 0 via one scalar Lagrange multiplier."""
    n = K.shape[0]
    w = sp.csr_matrix(weight[None, :])
    A = sp.bmat([[K, w.T], [w, None]], format="csc")
    rhs = np.concatenate([b, [0.0]])
    x = spla.splu(A).solve(rhs)
    return x[:n], float(x[n])


def mean_weight(space: Space) -> np.ndarray:
    """Load vector of 1, i.e. w_i = int phi_i; w . u is the integral of u."""
    ones = np.ones((space.mesh.num_elements, 4))
    return assemble_load_vector(space, ones)


@dataclasses.dataclass
class NewtonReport:
    iterations: int
    residuals: list[float]
    converged: bool
    line_search_steps: list[int]

    @property
    def final_residual(self) -> float:
        return self.residuals[-1]


def newton_solve(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], sp.spmatrix],
    u0: np.ndarray,
    linear_solve: Callable[[sp.spmatrix, np.ndarray], np.ndarray],
    tol: float = 1e-10,
    max_iter: int = 25,
    max_halvings: int = 30,
    abs_floor: float | None = None,
) -> tuple[np.ndarray, NewtonReport]:
    """Damped Newton iteration with halving line search on the residual norm."""
    u = np.array(u0, dtype=float, copy=True)
    r = residual(u)
    rn = float(np.linalg.norm(r))
    floor = abs_floor if abs_floor is not None else 1e-14 * max(1.0, rn)
    target = max(tol * rn, floor)
    history = [rn]
    steps: list[int] = []
    if rn <= target:
        return u, NewtonReport(0, history, True, steps)
    for it in range(1, max_iter + 1):
        K = jacobian(u)
        d = linear_solve(K, -r)
        t = 1.0
        accepted = False
        for hv in range(max_halvings + 1):
            u_try = u + t * d
            try:
                r_try = residual(u_try)
            except TableRangeExceeded:
                # trial state left the tabulated range; shrink the step
                t *= 0.5
                continue
            rt = float(np.linalg.norm(r_try))
            if rt < rn * (1.0 - 1e-4 * t) or rt <= floor:
                accepted = True
                steps.append(hv)
                break
            t *= 0.5
        if not accepted:
            raise NewtonDiverged(
                f"residual stalled at {rn:.3e} after {max_halvings} halvings"
            )
        u, r, rn = u_try, r_try, rt
        history.append(rn)
        if rn <= target:
            return u, NewtonReport(it, history, True, steps)
    raise NewtonDiverged(
        f"no convergence in {max_iter} iterations (residual {rn:.3e})"
    )


def lp_norm(
    space: Space, nodal: np.ndarray, p: float = 2.0, mask: np.ndarray | None = None
) -> float:
    """L^p norm by element quadrature, optionally over an element mask."""
    vals = space.value_at_qp(nodal)
    if mask is not None:
        vals = vals[mask]
    h = space.mesh.h
    acc = float(np.einsum("eq,q->", np.abs(vals) ** p, QUAD_W)) * h * h
    return acc ** (1.0 / p)


def grad_lp_norm(
    space: Space, nodal: np.ndarray, p: float = 2.0, mask: np.ndarray | None = None
) -> float:
    grads = space.grad_at_qp(nodal)
    if mask is not None:
        grads = grads[mask]
    h = space.mesh.h
    mag = np.sqrt(grads[..., 0] ** 2 + grads[..., 1] ** 2)
    acc = float(np.einsum("eq,q->", mag ** p, QUAD_W)) * h * h
    return acc ** (1.0 / p)


def avg_grad_sq(space: Space, nodal: np.ndarray, mask: np.ndarray) -> float:
    """Fluid average of |grad u|^2 over a masked element set."""
    area = float(mask.sum()) * space.mesh.h ** 2
    if area == 0.0:
        return 0.0
    return grad_lp_norm(space, nodal, 2.0, mask) ** 2 / area


def _locate(
    mesh: Mesh, pts: np.ndarray, mode: str
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Map points to (ix, iy, local coords, inside mask) on the lattice."""
    x = (np.asarray(pts, dtype=float) - np.asarray(mesh.origin)) / mesh.h
    eps_pad = 1e-12 * max(mesh.nx, mesh.ny)
    inside = (
        (x[:, 0] >= -eps_pad)
        & (x[:, 0] <= mesh.nx + eps_pad)
        & (x[:, 1] >= -eps_pad)
        & (x[:, 1] <= mesh.ny + eps_pad)
    )
    if mode == "wrap":
        x[:, 0] %= mesh.nx
        x[:, 1] %= mesh.ny
        inside = np.ones(len(x), dtype=bool)
    elif not inside.all():
        if mode == "error":
            raise SupportViolation(
                f"{(~inside).sum()} evaluation points fall outside the mesh"
            )
    ix = np.clip(np.floor(x[:, 0]).astype(np.int64), 0, mesh.nx - 1)
    iy = np.clip(np.floor(x[:, 1]).astype(np.int64), 0, mesh.ny - 1)
    a = x[:, 0] - ix
    b = x[:, 1] - iy
    if mode == "zero":
        a = np.clip(a, 0.0, 1.0)
        b = np.clip(b, 0.0, 1.0)
    return ix, iy, np.column_stack([a, b]), inside


def eval_nodal(
    mesh: Mesh,
    nodal: np.ndarray,
    pts: np.ndarray,
    mode: str = "error",
    grad: bool = False,
) -> np.ndarray:
    """Evaluate a nodal field (or its gradient) at arbitrary points.

    mode: 'error' raises when points leave the mesh, 'zero' returns 0 there,
    'wrap' reduces coordinates periodically.
    """
    ix, iy, loc, inside = _locate(mesh, pts, mode)
    stride = mesh.ny + 1
    v00 = ix * stride + iy
    u00 = nodal[v00]
    u10 = nodal[v00 + stride]
    u11 = nodal[v00 + stride + 1]
    u01 = nodal[v00 + 1]
    a, b = loc[:, 0], loc[:, 1]
    if grad:
        gx = ((1 - b) * (u10 - u00) + b * (u11 - u01)) / mesh.h
        gy = ((1 - a) * (u01 - u00) + a * (u11 - u10)) / mesh.h
        out = np.column_stack([gx, gy])
    else:
        out = (
            (1 - a) * (1 - b) * u00
            + a * (1 - b) * u10
            + a * b * u11
            + (1 - a) * b * u01
        )
    if mode == "zero":
        out[~inside] = 0.0
    return out
