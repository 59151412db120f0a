"""Structured quadrilateral geometry for perforated cells and domains.

The reference cell is Y = [-1/2, 1/2)^2 carrying axis-aligned rectangular
holes whose corners sit on the n x n cell lattice.  Domains are unions of
scaled copies eps*(k + Y), meshed by the same lattice, so every geometric
query (porosity, boundary layers, averaging balls) reduces to exact integer
bookkeeping on element indices.
"""

from __future__ import annotations

import dataclasses
from typing import Iterable, Sequence

import numpy as np

from .errors import NonAligned, ScaleMismatch, TooClose

ALIGN_TOL = 1e-9

# boundary edge tags
TAG_HOLE = 1
TAG_OUTER = 2


@dataclasses.dataclass(frozen=True)
class HoleSpec:
    """Axis-aligned rectangular hole, described in cell coordinates."""

    center: tuple[float, float]
    half_widths: tuple[float, float]

    def __post_init__(self) -> None:
        if min(self.half_widths) <= 0:
            raise ValueError("hole half-widths must be positive")

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.half_widths)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.half_widths)

    @property
    def area(self) -> float:
        return 4.0 * self.half_widths[0] * self.half_widths[1]


def _rect_gap(a: HoleSpec, b: HoleSpec, shift: np.ndarray) -> float:
    """Euclidean gap between hole a and hole b translated by shift."""
    d = np.abs(np.asarray(b.center) + shift - np.asarray(a.center))
    g = d - (np.asarray(a.half_widths) + np.asarray(b.half_widths))
    g = np.maximum(g, 0.0)
    touching = np.all(d <= np.asarray(a.half_widths) + np.asarray(b.half_widths))
    if touching:
        return -1.0
    return float(np.hypot(g[0], g[1]))


@dataclasses.dataclass(frozen=True)
class PerforatedCell:
    """Unit periodicity cell with lattice-aligned rectangular holes.

    resolution is the number of elements along each unit edge; separation is
    the declared minimal gap, both between distinct holes (including periodic
    translates) and, halved, between any hole and the cell boundary.
    """

    holes: tuple[HoleSpec, ...]
    resolution: int
    separation: float = 0.25

    def __post_init__(self) -> None:
        n = self.resolution
        if n < 4:
            raise ScaleMismatch(f"cell resolution {n} is too coarse")
        if self.separation <= 0:
            raise TooClose("separation must be positive")
        for hole in self.holes:
            for v in (*hole.lo, *hole.hi):
                pos = (v + 0.5) * n
                if abs(pos - round(pos)) > ALIGN_TOL * n:
                    raise NonAligned(
                        f"hole edge at {v} does not land on the 1/{n} lattice"
                    )
            margin = 0.5 - np.maximum(np.abs(hole.lo), np.abs(hole.hi))
            if float(margin.min()) < self.separation / 2 - ALIGN_TOL:
                raise TooClose(
                    f"hole {hole.center} is within {margin.min():.4f} of the cell "
                    f"boundary (need {self.separation / 2})"
                )
        shifts = [
            np.array([sx, sy], dtype=float)
            for sx in (-1.0, 0.0, 1.0)
            for sy in (-1.0, 0.0, 1.0)
        ]
        for i, a in enumerate(self.holes):
            for j, b in enumerate(self.holes):
                for s in shifts:
                    if i == j and not s.any():
                        continue
                    gap = _rect_gap(a, b, s)
                    if gap < self.separation - ALIGN_TOL:
                        raise TooClose(
                            f"holes {i} and {j} (shift {s}) have gap {gap:.4f} "
                            f"< separation {self.separation}"
                        )

    @property
    def porosity(self) -> float:
        """Fluid volume fraction theta = |Y cap omega|."""
        return 1.0 - sum(h.area for h in self.holes)

    def fluid_mask(self) -> np.ndarray:
        """(n, n) bool, True on elements outside every hole, indexed [ix, iy]."""
        n = self.resolution
        c = (np.arange(n) + 0.5) / n - 0.5
        cx, cy = np.meshgrid(c, c, indexing="ij")
        mask = np.ones((n, n), dtype=bool)
        for hole in self.holes:
            lo, hi = hole.lo, hole.hi
            inside = (cx > lo[0]) & (cx < hi[0]) & (cy > lo[1]) & (cy < hi[1])
            mask &= ~inside
        return mask

    def indicator_plus(self, points: np.ndarray) -> np.ndarray:
        """Y-periodic fluid indicator l+ evaluated at points (m, 2)."""
        pts = np.asarray(points, dtype=float)
        pts = (pts + 0.5) % 1.0 - 0.5
        out = np.ones(pts.shape[:-1], dtype=float)
        for hole in self.holes:
            lo, hi = hole.lo, hole.hi
            inside = np.all((pts > lo) & (pts < hi), axis=-1)
            out[inside] = 0.0
        return out


@dataclasses.dataclass
class BoundaryEdges:
    """Boundary edge arrays: endpoints, owning element, outward normal, tag."""

    v0: np.ndarray
    v1: np.ndarray
    element: np.ndarray
    normal: np.ndarray
    tag: np.ndarray

    def select(self, tag: int) -> "BoundaryEdges":
        keep = self.tag == tag
        return BoundaryEdges(
            self.v0[keep], self.v1[keep], self.element[keep],
            self.normal[keep], self.tag[keep],
        )

    def __len__(self) -> int:
        return len(self.v0)


@dataclasses.dataclass
class Mesh:
    """Q1 lattice mesh with voids.

    vertices covers the full (nx+1) x (ny+1) lattice; elements lists only
    fluid cells (vertex order SW, SE, NE, NW).  dof_of_vertex identifies
    periodic partners and drops vertices interior to holes (-1).
    """

    vertices: np.ndarray
    elements: np.ndarray
    h: float
    nx: int
    ny: int
    origin: tuple[float, float]
    fluid_mask: np.ndarray
    periodic: bool
    element_cells: np.ndarray
    dof_of_vertex: np.ndarray
    ndof: int
    boundary: BoundaryEdges
    periodic_pairs: np.ndarray  # (k, 2) slave, master vertex ids; empty if not periodic

    @property
    def num_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def fluid_area(self) -> float:
        return self.num_elements * self.h * self.h

    def vertex_id(self, ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
        return np.asarray(ix) * (self.ny + 1) + np.asarray(iy)

    def barycenters(self) -> np.ndarray:
        return (self.element_cells + 0.5) * self.h + np.asarray(self.origin)

    def used_vertices(self) -> np.ndarray:
        used = np.zeros(self.num_vertices, dtype=bool)
        used[self.elements.ravel()] = True
        return used

    def edge_midpoints(self, edges: BoundaryEdges) -> np.ndarray:
        return 0.5 * (self.vertices[edges.v0] + self.vertices[edges.v1])


_SIDE_NORMALS = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])


def _build_lattice_mesh(
    nx: int,
    ny: int,
    h: float,
    origin: tuple[float, float],
    fluid: np.ndarray,
    periodic: bool,
) -> Mesh:
    gx, gy = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="ij")
    vertices = np.column_stack(
        [origin[0] + gx.ravel() * h, origin[1] + gy.ravel() * h]
    )

    ix, iy = np.nonzero(fluid)
    element_cells = np.column_stack([ix, iy]).astype(np.int64)

    def vid(ax: np.ndarray, ay: np.ndarray) -> np.ndarray:
        return ax * (ny + 1) + ay

    elements = np.column_stack(
        [vid(ix, iy), vid(ix + 1, iy), vid(ix + 1, iy + 1), vid(ix, iy + 1)]
    ).astype(np.int64)

    # cell-index lookup for edge extraction
    eid = -np.ones((nx, ny), dtype=np.int64)
    eid[ix, iy] = np.arange(len(ix))

    def neighbor_fluid(side: int) -> np.ndarray:
        # fluid state of the neighbor across each element's given side
        if side == 0:
            sx, sy = ix, iy - 1
        elif side == 1:
            sx, sy = ix + 1, iy
        elif side == 2:
            sx, sy = ix, iy + 1
        else:
            sx, sy = ix - 1, iy
        if periodic:
            return fluid[sx % nx, sy % ny], np.zeros(len(ix), dtype=bool)
        inside = (sx >= 0) & (sx < nx) & (sy >= 0) & (sy < ny)
        state = np.zeros(len(ix), dtype=bool)
        state[inside] = fluid[sx[inside], sy[inside]]
        return state, ~inside

    ev0, ev1, eel, enr, etg = [], [], [], [], []
    side_ends = [
        (lambda ax, ay: (vid(ax, ay), vid(ax + 1, ay))),
        (lambda ax, ay: (vid(ax + 1, ay), vid(ax + 1, ay + 1))),
        (lambda ax, ay: (vid(ax + 1, ay + 1), vid(ax, ay + 1))),
        (lambda ax, ay: (vid(ax, ay + 1), vid(ax, ay))),
    ]
    for side in range(4):
        nb_fluid, outside = neighbor_fluid(side)
        hole_edge = ~nb_fluid & ~outside
        outer_edge = outside
        if periodic:
            # rim edges of the lattice are the geometric cell boundary
            if side == 0:
                outer_edge = iy == 0
            elif side == 1:
                outer_edge = ix == nx - 1
            elif side == 2:
                outer_edge = iy == ny - 1
            else:
                outer_edge = ix == 0
        for sel, tag in ((hole_edge, TAG_HOLE), (outer_edge, TAG_OUTER)):
            if not sel.any():
                continue
            a, b = side_ends[side](ix[sel], iy[sel])
            ev0.append(a)
            ev1.append(b)
            eel.append(eid[ix[sel], iy[sel]])
            enr.append(np.tile(_SIDE_NORMALS[side], (sel.sum(), 1)))
            etg.append(np.full(sel.sum(), tag, dtype=np.int8))
    boundary = BoundaryEdges(
        np.concatenate(ev0) if ev0 else np.empty(0, dtype=np.int64),
        np.concatenate(ev1) if ev1 else np.empty(0, dtype=np.int64),
        np.concatenate(eel) if eel else np.empty(0, dtype=np.int64),
        np.concatenate(enr) if enr else np.empty((0, 2)),
        np.concatenate(etg) if etg else np.empty(0, dtype=np.int8),
    )

    used = np.zeros((nx + 1) * (ny + 1), dtype=bool)
    used[elements.ravel()] = True

    if periodic:
        mx = gx.ravel() % nx
        my = gy.ravel() % ny
        master = mx * (ny + 1) + my
        slave_sel = master != np.arange(len(master))
        periodic_pairs = np.column_stack(
            [np.nonzero(slave_sel)[0], master[slave_sel]]
        )
        used_master = np.zeros_like(used)
        np.logical_or.at(used_master, master, used)
        dof_of_vertex = -np.ones(len(master), dtype=np.int64)
        master_ids = np.nonzero(used_master & (master == np.arange(len(master))))[0]
        dof_of_vertex[master_ids] = np.arange(len(master_ids))
        dof_of_vertex = np.where(
            used | used_master[master], dof_of_vertex[master], -1
        )
        ndof = len(master_ids)
    else:
        periodic_pairs = np.empty((0, 2), dtype=np.int64)
        dof_of_vertex = -np.ones(used.shape[0], dtype=np.int64)
        dof_of_vertex[used] = np.arange(used.sum())
        ndof = int(used.sum())

    return Mesh(
        vertices=vertices,
        elements=elements,
        h=h,
        nx=nx,
        ny=ny,
        origin=origin,
        fluid_mask=fluid,
        periodic=periodic,
        element_cells=element_cells,
        dof_of_vertex=dof_of_vertex,
        ndof=ndof,
        boundary=boundary,
        periodic_pairs=periodic_pairs,
    )


def build_cell_mesh(cell: PerforatedCell, perforated: bool = True) -> Mesh:
    """Mesh of Y cap omega (or of the full torus Y when perforated=False)."""
    n = cell.resolution
    fluid = cell.fluid_mask() if perforated else np.ones((n, n), dtype=bool)
    return _build_lattice_mesh(n, n, 1.0 / n, (-0.5, -0.5), fluid, periodic=True)


@dataclasses.dataclass
class DomainMesh:
    """Perforated domain Omega_eps = Omega cap eps*omega on a matching lattice."""

    mesh: Mesh
    cell: PerforatedCell
    eps: float
    side: float
    cells_per_side: int
    torus: bool

    @property
    def h(self) -> float:
        return self.mesh.h

    def gamma_vertices(self) -> np.ndarray:
        """Vertices on the outer Dirichlet boundary Gamma_eps."""
        if self.torus:
            return np.empty(0, dtype=np.int64)
        edges = self.mesh.boundary.select(TAG_OUTER)
        return np.unique(np.concatenate([edges.v0, edges.v1]))

    def hole_count(self) -> int:
        return self.cells_per_side ** 2 * len(self.cell.holes)

    def boundary_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance to the outer boundary of the square Omega."""
        pts = np.asarray(points, dtype=float)
        lo = np.min(pts - 0.0, axis=-1)
        hi = np.min(self.side - pts, axis=-1)
        return np.minimum(lo, hi)


def build_domain_mesh(
    cell: PerforatedCell,
    eps: float,
    side: float = 1.0,
    torus: bool = False,
) -> DomainMesh:
    """Tile Omega = (0, side)^2 with eps-scaled copies of the perforated cell."""
    if eps <= 0:
        raise ScaleMismatch("eps must be positive")
    m_f = side / eps
    m = int(round(m_f))
    if m < 1 or abs(m_f - m) > ALIGN_TOL:
        raise ScaleMismatch(f"side/eps = {m_f} is not an integer")
    n = cell.resolution
    fluid = np.tile(cell.fluid_mask(), (m, m))
    mesh = _build_lattice_mesh(
        m * n, m * n, eps / n, (0.0, 0.0), fluid, periodic=torus
    )
    return DomainMesh(
        mesh=mesh, cell=cell, eps=eps, side=side, cells_per_side=m, torus=torus
    )


@dataclasses.dataclass
class LayerSets:
    """Element masks for boundary layers O_{k*eps} and co-layers Sigma_{k*eps}."""

    domain: DomainMesh
    multiples: tuple[float, ...]
    bary_dist: np.ndarray
    o_masks: dict[float, np.ndarray]

    def o_mask(self, k: float) -> np.ndarray:
        return self.o_masks[k]

    def sigma_mask(self, k: float) -> np.ndarray:
        return ~self.o_masks[k]

    def o_area(self, k: float) -> float:
        return float(self.o_masks[k].sum()) * self.domain.h ** 2

    def sigma_area(self, k: float) -> float:
        return float((~self.o_masks[k]).sum()) * self.domain.h ** 2


def layer_sets(domain: DomainMesh, multiples: Iterable[float]) -> LayerSets:
    """Classify fluid elements by barycenter distance to the outer boundary."""
    if domain.torus:
        raise ScaleMismatch("boundary layers are undefined on a torus")
    mult = tuple(sorted(set(float(k) for k in multiples)))
    bary = domain.mesh.barycenters()
    dist = domain.boundary_distance(bary)
    masks = {k: dist < k * domain.eps for k in mult}
    return LayerSets(domain=domain, multiples=mult, bary_dist=dist, o_masks=masks)


def avg_ball_mask(
    domain: DomainMesh | Mesh, center: Sequence[float], r: float
) -> np.ndarray:
    """Fluid-element mask for the averaging ball B(center, r) cap Omega_eps."""
    mesh = domain.mesh if isinstance(domain, DomainMesh) else domain
    if r <= 2.0 * mesh.h * np.sqrt(2.0):
        raise ScaleMismatch(
            f"ball radius {r} must exceed two element diameters {2 * mesh.h * np.sqrt(2):.4g}"
        )
    bary = mesh.barycenters()
    d = bary - np.asarray(center, dtype=float)
    return (d[:, 0] ** 2 + d[:, 1] ** 2) < r * r


def default_cell(resolution: int = 16) -> PerforatedCell:
    """Campaign geometry: one centered square hole of half-width 1/4."""
    return PerforatedCell(
        holes=(HoleSpec(center=(0.0, 0.0), half_widths=(0.25, 0.25)),),
        resolution=resolution,
        separation=0.25,
    )
