"""Cell problems: correctors, effective operator tables, flux correctors.

The corrector N(., xi) solves the periodic Neumann cell problem on Y cap omega;
the effective operator averages the corrected flux over the fluid part.  Flux
correctors live on the full torus Y and are built in the Fourier calculus of
the uniform element-center grid, where the antisymmetric-divergence identity
closes at solver precision.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from . import fem
from .cellgeom import TAG_HOLE, HoleSpec, Mesh, PerforatedCell, build_cell_mesh
from .errors import MeanNotZero, TableCorrupt, TableRangeExceeded
from .monotone import VectorField

_MAGIC = b"PHCT0001"


@dataclasses.dataclass
class CorrectorSolution:
    """Periodic mean-zero corrector for one value of xi."""

    cell: PerforatedCell
    xi: np.ndarray
    nodal: np.ndarray
    residual: float
    mean: float
    newton_iterations: int
    theta: float


def _cell_space(cell: PerforatedCell, perforated: bool = True) -> fem.Space:
    return fem.Space(build_cell_mesh(cell, perforated=perforated))


def solve_corrector(
    cell: PerforatedCell,
    field: VectorField,
    xi: np.ndarray,
    tol: float = 1e-10,
    space: fem.Space | None = None,
    initial_nodal: np.ndarray | None = None,
) -> CorrectorSolution:
    """Solve the periodic cell problem for N(., xi) with natural hole conditions."""
    sp = space if space is not None else _cell_space(cell)
    xi = np.asarray(xi, dtype=float)
    qp = sp.quad_coords()
    w = fem.mean_weight(sp)

    def residual(u: np.ndarray) -> np.ndarray:
        grad = sp.grad_at_qp(sp.nodal_from_dof(u))
        return fem.assemble_flux_vector(sp, field(qp, xi + grad))

    def jacobian(u: np.ndarray):
        grad = sp.grad_at_qp(sp.nodal_from_dof(u))
        return fem.assemble_matrix(sp, jac_qp=field.jacobian(qp, xi + grad))

    def lin(K, rhs):
        return fem.solve_mean_zero(K, rhs, w)[0]

    u0 = np.zeros(sp.ndof)
    if initial_nodal is not None:
        u0 = sp.dof_from_nodal(initial_nodal)
        u0 -= (w @ u0) / w.sum()
    scale = max(1.0, float(np.linalg.norm(xi)))
    u, rep = fem.newton_solve(
        residual, jacobian, u0, lin, tol=tol, abs_floor=1e-13 * scale
    )
    nodal = sp.nodal_from_dof(u)
    return CorrectorSolution(
        cell=cell,
        xi=xi,
        nodal=nodal,
        residual=rep.final_residual,
        mean=float(w @ u),
        newton_iterations=rep.iterations,
        theta=cell.porosity,
    )


def solve_linear_special(
    cell: PerforatedCell,
    k: int,
    tol: float = 1e-10,
    space: fem.Space | None = None,
) -> np.ndarray:
    """Harmonic cell potential phi_k: -Lap phi_k = 0, normal derivative -n_k on holes.

    Assembled from the surface load on hole boundaries, an independent path
    from the volumetric corrector residual it must reproduce for A = I.
    """
    sp = space if space is not None else _cell_space(cell)
    K = fem.assemble_matrix(sp)
    edges = sp.mesh.boundary.select(TAG_HOLE)
    load = -fem.assemble_edge_load(sp, edges, edges.normal[:, k])
    w = fem.mean_weight(sp)
    u, _ = fem.solve_mean_zero(K, load, w)
    res = float(np.linalg.norm(K @ u - load))
    if res > max(tol * max(np.linalg.norm(load), 1e-30), 1e-12):
        raise RuntimeError(f"linear cell solve residual {res:.3e} above tolerance")
    return sp.nodal_from_dof(u)


def effective_eval(
    cell: PerforatedCell,
    field: VectorField,
    xi: np.ndarray,
    corrector: CorrectorSolution | None = None,
    tol: float = 1e-10,
    space: fem.Space | None = None,
) -> np.ndarray:
    """Effective flux: average of A(y, xi + grad N) over the fluid region."""
    sp = space if space is not None else _cell_space(cell)
    if corrector is None:
        corrector = solve_corrector(cell, field, xi, tol=tol, space=sp)
    qp = sp.quad_coords()
    grad = sp.grad_at_qp(corrector.nodal)
    flux = field(qp, np.asarray(xi, dtype=float) + grad)
    h = sp.mesh.h
    integral = np.einsum("eqd,q->d", flux, fem.QUAD_W) * h * h
    return integral / sp.mesh.fluid_area


def a_hat_matrix_from_special(cell: PerforatedCell) -> np.ndarray:
    """Effective matrix for A = I assembled from the harmonic potentials phi_k."""
    sp = _cell_space(cell)
    h = sp.mesh.h
    cols = []
    for k in range(2):
        phi = solve_linear_special(cell, k, space=sp)
        grad = sp.grad_at_qp(phi)
        ek = np.zeros(2)
        ek[k] = 1.0
        integral = np.einsum("eqd,q->d", ek + grad, fem.QUAD_W) * h * h
        cols.append(integral / sp.mesh.fluid_area)
    return np.column_stack(cols)


def _geometry_dict(cell: PerforatedCell) -> dict:
    return {
        "holes": [
            {"center": list(h.center), "half_widths": list(h.half_widths)}
            for h in cell.holes
        ],
        "resolution": cell.resolution,
        "separation": cell.separation,
    }


def geometry_hash(cell: PerforatedCell) -> str:
    payload = json.dumps(_geometry_dict(cell), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


@dataclasses.dataclass
class EffectiveOperator:
    """Tabulated effective operator with bilinear interpolation in xi.

    a_hat_table is (g, g, 2) over the tensor grid xi_axis x xi_axis;
    corrector_table is (g, g, nv) of nodal corrector values on the cell mesh.
    """

    cell: PerforatedCell
    field_tag: str
    radius: float
    xi_axis: np.ndarray
    a_hat_table: np.ndarray
    corrector_table: np.ndarray
    theta: float
    provenance: dict

    @property
    def grid_n(self) -> int:
        return len(self.xi_axis)

    @property
    def spacing(self) -> float:
        return float(self.xi_axis[1] - self.xi_axis[0])

    def _locate(self, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        lim = self.radius + 1e-12 * max(1.0, self.radius)
        if np.any(np.abs(xi) > lim):
            worst = float(np.abs(xi).max())
            raise TableRangeExceeded(
                f"|xi|_inf = {worst:.4g} exceeds table radius {self.radius}"
            )
        t = (xi + self.radius) / self.spacing
        i = np.clip(np.floor(t).astype(np.int64), 0, self.grid_n - 2)
        frac = t - i
        return i, np.clip(frac, 0.0, 1.0), xi

    def a_hat(self, xi: np.ndarray) -> np.ndarray:
        single = np.asarray(xi).ndim == 1
        i, frac, _ = self._locate(xi)
        g = self.grid_n
        tab = self.a_hat_table.reshape(g * g, 2)
        i0 = i[:, 0] * g + i[:, 1]
        a, b = frac[:, 0][:, None], frac[:, 1][:, None]
        val = (
            (1 - a) * (1 - b) * tab[i0]
            + a * (1 - b) * tab[i0 + g]
            + a * b * tab[i0 + g + 1]
            + (1 - a) * b * tab[i0 + 1]
        )
        return val[0] if single else val

    def jacobian(self, xi: np.ndarray) -> np.ndarray:
        single = np.asarray(xi).ndim == 1
        i, frac, _ = self._locate(xi)
        g = self.grid_n
        tab = self.a_hat_table.reshape(g * g, 2)
        i0 = i[:, 0] * g + i[:, 1]
        a, b = frac[:, 0][:, None], frac[:, 1][:, None]
        d1 = ((1 - b) * (tab[i0 + g] - tab[i0]) + b * (tab[i0 + g + 1] - tab[i0 + 1]))
        d2 = ((1 - a) * (tab[i0 + 1] - tab[i0]) + a * (tab[i0 + g + 1] - tab[i0 + g]))
        out = np.empty((len(i0), 2, 2))
        out[:, :, 0] = d1 / self.spacing
        out[:, :, 1] = d2 / self.spacing
        return out[0] if single else out

    def corrector_weights(
        self, xi: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Flat table-node indices (m, 4) and bilinear weights (m, 4) for xi."""
        i, frac, _ = self._locate(xi)
        g = self.grid_n
        i0 = i[:, 0] * g + i[:, 1]
        idx = np.stack([i0, i0 + g, i0 + g + 1, i0 + 1], axis=1)
        a, b = frac[:, 0], frac[:, 1]
        wts = np.stack(
            [(1 - a) * (1 - b), a * (1 - b), a * b, (1 - a) * b], axis=1
        )
        return idx, wts

    def corrector_at(self, xi: np.ndarray) -> np.ndarray:
        """Interpolated corrector nodal field(s) for one or more xi."""
        idx, wts = self.corrector_weights(xi)
        g = self.grid_n
        tab = self.corrector_table.reshape(g * g, -1)
        out = np.einsum("mk,mkv->mv", wts, tab[idx])
        return out[0] if np.asarray(xi).ndim == 1 else out


def build_corrector_table(
    cell: PerforatedCell,
    field: VectorField,
    radius: float = 4.0,
    grid_n: int = 9,
    tol: float = 1e-10,
) -> EffectiveOperator:
    """Solve the cell problem on a (grid_n x grid_n) xi-grid and tabulate.

    Nodes are visited in a fixed row order with warm starts from the previous
    node, which keeps the build deterministic and cheap.
    """
    if grid_n < 2 or grid_n % 2 == 0:
        raise ValueError("grid_n must be an odd integer >= 3")
    sp = _cell_space(cell)
    axis = np.linspace(-radius, radius, grid_n)
    nv = sp.mesh.num_vertices
    corr = np.zeros((grid_n, grid_n, nv))
    ahat = np.zeros((grid_n, grid_n, 2))
    prev: np.ndarray | None = None
    for i, x1 in enumerate(axis):
        for j, x2 in enumerate(axis):
            xi = np.array([x1, x2])
            # a zero start at xi = 0 recovers N = 0 exactly (A(., 0) = 0),
            # keeping downstream two-scale fields bit-exact where phi = 0
            sol = solve_corrector(
                cell, field, xi, tol=tol, space=sp,
                initial_nodal=None if x1 == 0.0 and x2 == 0.0 else prev,
            )
            corr[i, j] = sol.nodal
            ahat[i, j] = effective_eval(cell, field, xi, corrector=sol, space=sp)
            prev = sol.nodal
        prev = corr[i, 0]
    provenance = {
        "geometry_hash": geometry_hash(cell),
        "field_tag": field.tag,
        "radius": radius,
        "grid_n": grid_n,
        "cell_resolution": cell.resolution,
        "tol": tol,
    }
    return EffectiveOperator(
        cell=cell,
        field_tag=field.tag,
        radius=radius,
        xi_axis=axis,
        a_hat_table=ahat,
        corrector_table=corr,
        theta=cell.porosity,
        provenance=provenance,
    )


def write_table(path: str | Path, table: EffectiveOperator) -> Path:
    """Persist a corrector table: binary payload plus a JSON sidecar."""
    path = Path(path)
    header = {
        "magic": "PHCT",
        "geometry": _geometry_dict(table.cell),
        "geometry_hash": geometry_hash(table.cell),
        "field_tag": table.field_tag,
        "radius": table.radius,
        "grid_n": table.grid_n,
        "theta": table.theta,
        "num_vertices": table.corrector_table.shape[-1],
        "provenance": table.provenance,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    a_bytes = np.ascontiguousarray(table.a_hat_table, dtype="<f8").tobytes()
    c_bytes = np.ascontiguousarray(table.corrector_table, dtype="<f8").tobytes()
    payload_sha = hashlib.sha256(a_bytes + c_bytes).hexdigest()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(hbytes)))
        f.write(hbytes)
        f.write(a_bytes)
        f.write(c_bytes)
    sidecar = {
        "header": header,
        "payload_sha256": payload_sha,
        "xi_axis": table.xi_axis.tolist(),
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def read_table(path: str | Path) -> EffectiveOperator:
    """Load a persisted corrector table, verifying magic and payload hash."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise TableCorrupt(f"{path}: bad magic")
    off = len(_MAGIC)
    (hlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    header = json.loads(raw[off : off + hlen].decode())
    off += hlen
    g = header["grid_n"]
    nv = header["num_vertices"]
    a_len = g * g * 2 * 8
    c_len = g * g * nv * 8
    if len(raw) != off + a_len + c_len:
        raise TableCorrupt(f"{path}: truncated payload")
    payload = raw[off:]
    sidecar_path = Path(str(path) + ".json")
    if sidecar_path.exists():
        sidecar = json.loads(sidecar_path.read_text())
        if hashlib.sha256(payload).hexdigest() != sidecar["payload_sha256"]:
            raise TableCorrupt(f"{path}: payload hash mismatch")
    ahat = np.frombuffer(payload[:a_len], dtype="<f8").reshape(g, g, 2).copy()
    corr = np.frombuffer(payload[a_len:], dtype="<f8").reshape(g, g, nv).copy()
    geo = header["geometry"]
    cell = PerforatedCell(
        holes=tuple(
            HoleSpec(center=tuple(h["center"]), half_widths=tuple(h["half_widths"]))
            for h in geo["holes"]
        ),
        resolution=geo["resolution"],
        separation=geo["separation"],
    )
    if geometry_hash(cell) != header["geometry_hash"]:
        raise TableCorrupt(f"{path}: geometry hash mismatch")
    radius = header["radius"]
    return EffectiveOperator(
        cell=cell,
        field_tag=header["field_tag"],
        radius=radius,
        xi_axis=np.linspace(-radius, radius, g),
        a_hat_table=ahat,
        corrector_table=corr,
        theta=header["theta"],
        provenance=header["provenance"],
    )


@dataclasses.dataclass
class FluxCorrector:
    """Flux discrepancy b, its scalar potential pair f and antisymmetric E.

    Fields live on the uniform n x n element-center grid of the torus Y.
    E has the single independent component e = E_21 = -E_12; the divergence
    identity div E = b holds in the grid Fourier calculus at roundoff level.
    """

    xi: np.ndarray
    b: np.ndarray            # (n, n, 2)
    f: np.ndarray            # (n, n, 2) potentials with Lap f_i = b_i
    e: np.ndarray            # (n, n) independent component of E
    theta: float
    a_hat_center: np.ndarray
    identity_residual_rel: float
    div_defect_rel: float
    mean_abs: float
    grid_n: int

    def E(self) -> np.ndarray:
        """(n, n, 2, 2) antisymmetric matrix field."""
        out = np.zeros(self.e.shape + (2, 2))
        out[..., 1, 0] = self.e
        out[..., 0, 1] = -self.e
        return out

    def b_l2(self) -> float:
        return float(np.sqrt(np.mean(np.sum(self.b ** 2, axis=-1))))


def _grid_l2(field: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.abs(field) ** 2)))


def solve_flux(
    cell: PerforatedCell,
    field: VectorField,
    xi: np.ndarray,
    effective: EffectiveOperator | None = None,
    corrector: CorrectorSolution | None = None,
    tol: float = 1e-10,
) -> FluxCorrector:
    """Build flux correctors on the full torus grid for one xi.

    The corrected flux is sampled at element centers; its discrepancy against
    the effective flux is Leray-projected (defect reported) and integrated to
    the antisymmetric potential E via spectral Poisson solves, so the identity
    b = div E is exact at solver precision.  A caller-supplied effective
    operator is used only as a consistency gate on the recomputed average.
    """
    xi = np.asarray(xi, dtype=float)
    sp = _cell_space(cell)
    if corrector is None:
        corrector = solve_corrector(cell, field, xi, tol=tol, space=sp)
    n = cell.resolution
    mesh = sp.mesh

    # corrected flux at element centers of the full lattice; zero inside holes
    grads = np.einsum(
        "qkd,ek->eqd", fem.shape_gradients(np.array([[0.5, 0.5]])),
        corrector.nodal[mesh.elements],
    ) / mesh.h
    qp_c = mesh.element_cells * mesh.h + np.asarray(mesh.origin) + 0.5 * mesh.h
    flux_f = field(qp_c, xi + grads[:, 0, :])
    sigma = np.zeros((n, n, 2))
    sigma[mesh.element_cells[:, 0], mesh.element_cells[:, 1]] = flux_f

    theta = cell.porosity
    a_hat_c = sigma.sum(axis=(0, 1)) / (n * n * theta)
    if effective is not None:
        ref = effective.a_hat(xi)
        gap = float(np.linalg.norm(ref - a_hat_c))
        if gap > 10.0 * tol + 5e-3 * max(np.linalg.norm(a_hat_c), 1e-12):
            raise MeanNotZero(
                f"supplied effective flux {ref} is inconsistent with the "
                f"recomputed average {a_hat_c} (gap {gap:.3e})"
            )

    b = theta * a_hat_c[None, None, :] - sigma
    mean_abs = float(np.linalg.norm(b.mean(axis=(0, 1))))
    if mean_abs > 10.0 * max(tol, 1e-14) * max(1.0, float(np.linalg.norm(xi))):
        raise MeanNotZero(f"flux discrepancy has cell average {mean_abs:.3e}")

    k1 = 2.0 * np.pi * np.fft.fftfreq(n, d=1.0 / n)
    kx = k1[:, None]
    ky = k1[None, :]
    k2 = kx ** 2 + ky ** 2
    k2safe = np.where(k2 == 0.0, 1.0, k2)

    bh1 = np.fft.fft2(b[..., 0])
    bh2 = np.fft.fft2(b[..., 1])
    kdotb = kx * bh1 + ky * bh2
    div_defect = np.sqrt(np.mean(np.abs(kdotb) ** 2 / k2safe))
    # Leray projection: remove the curl-free part
    bh1 -= kx * kdotb / k2safe
    bh2 -= ky * kdotb / k2safe

    fh1 = -bh1 / k2safe
    fh2 = -bh2 / k2safe
    fh1[0, 0] = 0.0
    fh2[0, 0] = 0.0
    eh = 1j * (ky * fh1 - kx * fh2)

    # identity residual of the returned fields, in the same calculus
    rh1 = bh1 - 1j * ky * eh
    rh2 = bh2 + 1j * kx * eh
    b_sc = np.sqrt(np.mean(np.abs(bh1) ** 2 + np.abs(bh2) ** 2)) / n
    res = np.sqrt(np.mean(np.abs(rh1) ** 2 + np.abs(rh2) ** 2)) / n

    b_proj = np.stack(
        [np.fft.ifft2(bh1).real, np.fft.ifft2(bh2).real], axis=-1
    )
    f_pot = np.stack(
        [np.fft.ifft2(fh1).real, np.fft.ifft2(fh2).real], axis=-1
    )
    e_grid = np.fft.ifft2(eh).real
    b_norm = _grid_l2(np.linalg.norm(b, axis=-1))
    return FluxCorrector(
        xi=xi,
        b=b_proj,
        f=f_pot,
        e=e_grid,
        theta=theta,
        a_hat_center=a_hat_c,
        identity_residual_rel=float(res / max(b_sc, 1e-30)),
        div_defect_rel=float(div_defect / n / max(b_norm, 1e-30)),
        mean_abs=mean_abs,
        grid_n=n,
    )


@dataclasses.dataclass
class AuxPotential:
    """Periodic potential with -Lap Psi = l+ - theta on the full torus Y."""

    nodal: np.ndarray
    mesh: Mesh
    residual_rel: float
    mean: float
    grad_norms: dict[float, float]
    theta: float


def solve_aux_potential(
    cell: PerforatedCell, tol: float = 1e-10, ps: tuple[float, ...] = (2.0, 4.0, 8.0)
) -> AuxPotential:
    """Solve the indicator-defect Poisson problem on the full torus."""
    sp = _cell_space(cell, perforated=False)
    mesh = sp.mesh
    theta = cell.porosity
    centers = mesh.barycenters()
    lplus = cell.indicator_plus(centers)
    rhs_e = np.broadcast_to((lplus - theta)[:, None], (mesh.num_elements, 4))
    load = fem.assemble_load_vector(sp, rhs_e)
    K = fem.assemble_matrix(sp)
    w = fem.mean_weight(sp)
    u, _ = fem.solve_mean_zero(K, load, w)
    res = float(np.linalg.norm(K @ u - load)) / max(float(np.linalg.norm(load)), 1e-30)
    if res > max(tol, 1e-11):
        raise RuntimeError(f"auxiliary potential residual {res:.3e} above tolerance")
    nodal = sp.nodal_from_dof(u)
    norms = {p: fem.grad_lp_norm(sp, nodal, p) for p in ps}
    return AuxPotential(
        nodal=nodal,
        mesh=mesh,
        residual_rel=res,
        mean=float(w @ u),
        grad_norms=norms,
        theta=theta,
    )
