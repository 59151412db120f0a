"""Extension across hole boundaries and ball Poincare measurements.

Holes are filled by the discrete-harmonic extension: interior hole vertices
solve the lattice Laplace problem driven by the trace on the hole boundary.
The Q1 stiffness on squares is an M-matrix, so the fill obeys a maximum
principle, and it reproduces affine data exactly.  One factorization per
distinct hole shape serves every instance through a batched solve.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from . import fem
from .cellgeom import DomainMesh, PerforatedCell, avg_ball_mask, build_domain_mesh
from .errors import BallOutsideDomain, NonzeroTrace
from .pdesolve import DiscreteFunction

# Q1 stiffness on a unit square, vertex order SW, SE, NE, NW
_K_LOC = np.array(
    [
        [2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0],
        [-1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0],
        [-1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0],
        [-1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0],
    ]
)


def _block_factorization(w: int, h: int):
    """Interior solve data for a (w x h)-element rectangular hole block.

    Returns (lu, K_ib, interior_local, boundary_local) where local vertex ids
    run over the (w+1) x (h+1) block lattice in row-major (ix, iy) order.
    """
    nvx, nvy = w + 1, h + 1
    nv = nvx * nvy

    def vid(ix, iy):
        return ix * nvy + iy

    rows, cols, vals = [], [], []
    for ex in range(w):
        for ey in range(h):
            loc = [vid(ex, ey), vid(ex + 1, ey), vid(ex + 1, ey + 1), vid(ex, ey + 1)]
            for a in range(4):
                for b in range(4):
                    rows.append(loc[a])
                    cols.append(loc[b])
                    vals.append(_K_LOC[a, b])
    K = sparse.coo_matrix((vals, (rows, cols)), shape=(nv, nv)).tocsr()
    ix, iy = np.divmod(np.arange(nv), nvy)
    boundary = (ix == 0) | (ix == w) | (iy == 0) | (iy == h)
    interior = np.flatnonzero(~boundary)
    bnd = np.flatnonzero(boundary)
    if len(interior) == 0:
        return None, None, interior, bnd
    K_ii = K[interior][:, interior].tocsc()
    K_ib = K[interior][:, bnd].tocsr()
    return spla.splu(K_ii), K_ib, interior, bnd


@dataclasses.dataclass
class _HoleInstances:
    """All instances of one hole shape: block-local to global vertex maps."""

    shape: tuple[int, int]
    interior_vertices: np.ndarray  # (count, n_int) global vertex ids
    boundary_vertices: np.ndarray  # (count, n_bnd)


class ExtensionOperator:
    """Discrete-harmonic hole fill on a perforated lattice mesh."""

    def __init__(self, domain: DomainMesh):
        self.domain = domain
        mesh = domain.mesh
        n = domain.cell.resolution
        m = domain.cells_per_side
        stride = mesh.ny + 1
        self._groups: list[tuple[object, object, _HoleInstances]] = []
        shapes: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for hole in domain.cell.holes:
            lo = np.asarray(hole.lo)
            hi = np.asarray(hole.hi)
            i_lo = np.rint((lo + 0.5) * n).astype(int)
            i_hi = np.rint((hi + 0.5) * n).astype(int)
            w, hgt = int(i_hi[0] - i_lo[0]), int(i_hi[1] - i_lo[1])
            for cx in range(m):
                for cy in range(m):
                    origin = (cx * n + i_lo[0], cy * n + i_lo[1])
                    shapes.setdefault((w, hgt), []).append(origin)
        for (w, hgt), origins in sorted(shapes.items()):
            lu, K_ib, interior, bnd = _block_factorization(w, hgt)
            nvy = hgt + 1
            ixl, iyl = np.divmod(np.arange((w + 1) * nvy), nvy)
            glob = []
            for ox, oy in origins:
                glob.append((ox + ixl) * stride + (oy + iyl))
            glob = np.asarray(glob)
            inst = _HoleInstances(
                shape=(w, hgt),
                interior_vertices=glob[:, interior],
                boundary_vertices=glob[:, bnd],
            )
            self._groups.append((lu, K_ib, inst))

    def fill_holes(self, nodal: np.ndarray) -> np.ndarray:
        """Extend nodal values into hole interiors; fluid values are untouched."""
        out = np.array(nodal, dtype=float, copy=True)
        for lu, K_ib, inst in self._groups:
            if lu is None:
                continue
            trace = out[inst.boundary_vertices]          # (count, n_bnd)
            rhs = -(K_ib @ trace.T)                       # (n_int, count)
            out[inst.interior_vertices] = lu.solve(rhs).T
        return out

    def extend(self, nodal: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Hole fill gated on a vanishing outer-boundary trace."""
        verts = self.domain.gamma_vertices()
        if len(verts):
            trace = float(np.abs(nodal[verts]).max())
            scale = max(float(np.abs(nodal).max()), 1e-30)
            if trace > tol * scale:
                raise NonzeroTrace(
                    f"outer trace magnitude {trace:.3e} (scale {scale:.3e})"
                )
        return self.fill_holes(nodal)


def companion_domain(domain: DomainMesh) -> DomainMesh:
    """Unperforated domain on the same lattice, for whole-domain norms."""
    plain = PerforatedCell(
        holes=(), resolution=domain.cell.resolution,
        separation=domain.cell.separation,
    )
    return build_domain_mesh(plain, domain.eps, side=domain.side, torus=domain.torus)


@dataclasses.dataclass
class ExtensionAudit:
    ps: tuple[float, ...]
    value_quotients: dict[float, float]
    gradient_quotients: dict[float, float]
    layer_quotient: float
    samples: int
    seed: int


def _random_zero_trace(
    mesh_vertices: np.ndarray, side: float, rng: np.random.Generator, modes: int = 4
) -> np.ndarray:
    x = mesh_vertices / side
    vals = np.zeros(len(mesh_vertices))
    for k1 in range(1, modes + 1):
        for k2 in range(1, modes + 1):
            a = rng.normal() / (k1 * k1 + k2 * k2)
            vals += a * np.sin(k1 * np.pi * x[:, 0]) * np.sin(k2 * np.pi * x[:, 1])
    return vals


def extend_lp_audit(
    domain: DomainMesh,
    ps: tuple[float, ...] = (1.9, 2.0, 2.2),
    samples: int = 20,
    seed: int = 0,
    layer_multiple: int = 4,
) -> ExtensionAudit:
    """Worst measured extension quotients over random zero-trace trig fields.

    Quotients compare L^p norms of the extension over the whole domain with
    the same norms of the input over the fluid region; the layer quotient
    measures |Pu|_L2 near the outer boundary against eps |grad Pu|_L2, the
    thin-layer smallness that drives boundary-layer error terms.
    """
    op = ExtensionOperator(domain)
    space = fem.Space(domain.mesh)
    comp = companion_domain(domain)
    comp_space = fem.Space(comp.mesh)
    rng = np.random.default_rng(seed)
    gamma = domain.gamma_vertices()

    dist = comp.boundary_distance(comp.mesh.barycenters())
    layer_mask = dist < layer_multiple * domain.eps

    vq = {p: 0.0 for p in ps}
    gq = {p: 0.0 for p in ps}
    layer_q = 0.0
    for _ in range(samples):
        u = _random_zero_trace(domain.mesh.vertices, domain.side, rng)
        u[gamma] = 0.0
        pu = op.extend(u)
        for p in ps:
            nv_in = fem.lp_norm(space, u, p)
            nv_out = fem.lp_norm(comp_space, pu, p)
            vq[p] = max(vq[p], nv_out / max(nv_in, 1e-30))
            ng_in = fem.grad_lp_norm(space, u, p)
            ng_out = fem.grad_lp_norm(comp_space, pu, p)
            gq[p] = max(gq[p], ng_out / max(ng_in, 1e-30))
        l2_layer = fem.lp_norm(comp_space, pu, 2.0, mask=layer_mask)
        g2_full = fem.grad_lp_norm(comp_space, pu, 2.0)
        layer_q = max(layer_q, l2_layer / max(domain.eps * g2_full, 1e-30))
    return ExtensionAudit(
        ps=ps,
        value_quotients=vq,
        gradient_quotients=gq,
        layer_quotient=layer_q,
        samples=samples,
        seed=seed,
    )


@dataclasses.dataclass
class PoincareCheck:
    center: np.ndarray
    r: float
    pairs: tuple[tuple[float, float], ...]
    quotients: dict[tuple[float, float], float]


def poincare_check(
    domain: DomainMesh,
    fn: DiscreteFunction,
    center: np.ndarray,
    r: float,
    pairs: tuple[tuple[float, float], ...] = ((2.0, 4.0), (2.0, 6.0)),
) -> PoincareCheck:
    """Mean-value Poincare-Sobolev quotients on concentric fluid balls.

    For each (p, q): (avg_{B_r} |u - c|^q)^{1/q} over r (avg_{B_3r} |grad u|^p)^{1/p},
    with c the fluid average of u over the large ball.  Requires B_3r inside
    the domain square.
    """
    center = np.asarray(center, dtype=float)
    side = domain.side
    if np.any(center - 3.0 * r < 0.0) or np.any(center + 3.0 * r > side):
        raise BallOutsideDomain(
            f"ball of radius {3.0 * r} at {center} leaves the domain square"
        )
    space = fem.Space(domain.mesh)
    small = avg_ball_mask(domain, center, r)
    big = avg_ball_mask(domain, center, 3.0 * r)
    h = domain.mesh.h
    area_small = float(small.sum()) * h * h
    area_big = float(big.sum()) * h * h

    vals = space.value_at_qp(fn.nodal)
    c = float(
        np.einsum("eq,q->", vals[big], fem.QUAD_W) * h * h / area_big
    )
    quots: dict[tuple[float, float], float] = {}
    for p, q in pairs:
        # averaged norms: ||.||_{L^q(B)} / |B|^{1/q}
        lhs = fem.lp_norm(space, fn.nodal - c, q, mask=small) / area_small ** (1.0 / q)
        rhs = fem.grad_lp_norm(space, fn.nodal, p, mask=big) / area_big ** (1.0 / p)
        quots[(p, q)] = lhs / max(r * rhs, 1e-30)
    return PoincareCheck(center=center, r=r, pairs=pairs, quotients=quots)
