"""Large-scale regularity measurements: Lipschitz profiles and CZ ratios.

The Lipschitz profiles track averaged gradient energy on shrinking balls down
to the microscale; boundedness of the profile relative to the unit ball is
the measurable face of large-scale gradient control.  The quenched CZ check
compares L^p norms of scale-eps maximal functions of |grad u|^2 and |f|^2
for divergence-form data, with ball averages computed by FFT convolution
against a disc kernel on the element-center grid.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.signal import fftconvolve

from . import fem
from .cellgeom import DomainMesh, PerforatedCell, avg_ball_mask, build_domain_mesh
from .cellsolve import EffectiveOperator
from .monotone import VectorField
from .pdesolve import BVPSpec, SolveReport, solve_bvp


@dataclasses.dataclass
class LipschitzProfile:
    kind: str
    eps: float
    radii: np.ndarray
    values: np.ndarray
    reference: float
    ratio_max: float
    report: SolveReport

    def ratios(self) -> np.ndarray:
        return self.values / self.reference


def _profile_radii(eps: float, count: int = 6) -> np.ndarray:
    return np.geomspace(eps, 0.5, count)


def _ball_rms_gradient(
    domain: DomainMesh, space: fem.Space, nodal: np.ndarray,
    center: np.ndarray, r: float,
) -> float:
    mask = avg_ball_mask(domain, center, r)
    return float(np.sqrt(fem.avg_grad_sq(space, nodal, mask)))


def interior_profile(
    cell: PerforatedCell,
    operator: VectorField | EffectiveOperator,
    eps: float,
    side: float = 4.0,
    radii: np.ndarray | None = None,
    eps_scaled: bool = True,
    tol: float = 1e-10,
) -> LipschitzProfile:
    """Interior gradient profile of an operator-harmonic function.

    Solves with zero volume load and sloped oscillatory Dirichlet data, then
    measures the rms fluid gradient on balls around the domain center, from
    radius eps up to the unit reference ball.
    """
    domain = build_domain_mesh(cell, eps, side=side)

    def g(x: np.ndarray) -> np.ndarray:
        return x[:, 0] + 0.3 * np.sin(2.0 * np.pi * x[:, 0])

    spec = BVPSpec(domain=domain, operator=operator, eps_scaled=eps_scaled,
                   dirichlet=g, tol=tol)
    u, report = solve_bvp(spec)
    space = fem.Space(domain.mesh)
    center = np.array([side / 2.0, side / 2.0])
    if radii is None:
        radii = _profile_radii(eps)
    vals = np.array(
        [_ball_rms_gradient(domain, space, u.nodal, center, r) for r in radii]
    )
    ref = _ball_rms_gradient(domain, space, u.nodal, center, 1.0)
    return LipschitzProfile(
        kind="interior", eps=eps, radii=np.asarray(radii, dtype=float),
        values=vals, reference=ref, ratio_max=float((vals / ref).max()),
        report=report,
    )


def boundary_profile(
    cell: PerforatedCell,
    operator: VectorField | EffectiveOperator,
    eps: float,
    side: float = 4.0,
    radii: np.ndarray | None = None,
    eps_scaled: bool = True,
    tol: float = 1e-10,
) -> LipschitzProfile:
    """Gradient profile on half-balls centered at the bottom boundary midpoint.

    The Dirichlet data vanishes on the bottom face, so the profile probes
    regularity up to the flat outer boundary.
    """
    domain = build_domain_mesh(cell, eps, side=side)

    def g(x: np.ndarray) -> np.ndarray:
        return x[:, 1] / side * (1.0 + 0.3 * np.sin(2.0 * np.pi * x[:, 0]))

    spec = BVPSpec(domain=domain, operator=operator, eps_scaled=eps_scaled,
                   dirichlet=g, tol=tol)
    u, report = solve_bvp(spec)
    space = fem.Space(domain.mesh)
    center = np.array([side / 2.0, 0.0])
    if radii is None:
        radii = _profile_radii(eps)
    vals = np.array(
        [_ball_rms_gradient(domain, space, u.nodal, center, r) for r in radii]
    )
    ref = _ball_rms_gradient(domain, space, u.nodal, center, 1.0)
    return LipschitzProfile(
        kind="boundary", eps=eps, radii=np.asarray(radii, dtype=float),
        values=vals, reference=ref, ratio_max=float((vals / ref).max()),
        report=report,
    )


@dataclasses.dataclass
class CZReport:
    eps: float
    load: str
    ratios: dict[float, float]
    energy_ratio: float
    report: SolveReport


def _disc_kernel(radius_cells: float) -> np.ndarray:
    m = int(np.floor(radius_cells))
    d = np.arange(-m, m + 1)
    d1, d2 = np.meshgrid(d, d, indexing="ij")
    return (d1 * d1 + d2 * d2 < radius_cells * radius_cells).astype(float)


def _ball_average_grid(values: np.ndarray, fluid: np.ndarray, kernel: np.ndarray,
                       h: float) -> np.ndarray:
    """Fluid averages of a per-element field over discs, at every element."""
    num = fftconvolve(values * fluid * h * h, kernel, mode="same")
    den = fftconvolve(fluid.astype(float) * h * h, kernel, mode="same")
    return np.where(den > 0.0, num / np.maximum(den, 1e-300), 0.0)


def _load_field(load: str, eps: float):
    if load == "smooth":
        def f(x: np.ndarray) -> np.ndarray:
            return np.stack(
                [np.sin(2.0 * np.pi * x[..., 0]) * np.cos(2.0 * np.pi * x[..., 1]),
                 np.cos(2.0 * np.pi * x[..., 0]) * np.sin(2.0 * np.pi * x[..., 1])],
                axis=-1,
            )
        return f
    if load == "oscillatory":
        def f(x: np.ndarray) -> np.ndarray:
            out = np.zeros(x.shape)
            out[..., 0] = np.sin(2.0 * np.pi * x[..., 0] / eps)
            out[..., 1] = np.cos(2.0 * np.pi * x[..., 1] / eps)
            return out
        return f
    raise ValueError(f"unknown load class {load!r}")


def cz_ratio(
    cell: PerforatedCell,
    field: VectorField,
    eps: float,
    load: str = "smooth",
    ps: tuple[float, ...] = (2.0, 4.0),
    side: float = 1.0,
    tol: float = 1e-10,
) -> CZReport:
    """Quenched CZ quotients for a divergence-form right-hand side.

    Solves the zero-Dirichlet problem with data f under the divergence sign,
    forms scale-eps ball averages of |grad u|^2 and |f|^2 on the element grid,
    and returns the L^p quotients of their square roots over the whole square.
    """
    domain = build_domain_mesh(cell, eps, side=side)
    f = _load_field(load, eps)
    spec = BVPSpec(domain=domain, operator=field, eps_scaled=True,
                   div_load=f, dirichlet=0.0, tol=tol)
    u, report = solve_bvp(spec)
    mesh = domain.mesh
    space = fem.Space(mesh)

    grad = space.grad_at_qp(u.nodal)
    g2_elem = np.einsum("eq,q->e", (grad ** 2).sum(axis=-1), fem.QUAD_W) / fem.QUAD_W.sum()

    centers = mesh.barycenters()
    f2_elem = (f(centers) ** 2).sum(axis=-1)

    nx, ny = mesh.nx, mesh.ny
    fluid = mesh.fluid_mask
    g2_grid = np.zeros((nx, ny))
    g2_grid[mesh.element_cells[:, 0], mesh.element_cells[:, 1]] = g2_elem
    f2_grid = np.zeros((nx, ny))
    f2_grid[mesh.element_cells[:, 0], mesh.element_cells[:, 1]] = f2_elem

    kernel = _disc_kernel(eps / mesh.h)
    g2_avg = _ball_average_grid(g2_grid, fluid, kernel, mesh.h)
    f2_avg = _ball_average_grid(f2_grid, fluid, kernel, mesh.h)

    ratios: dict[float, float] = {}
    for p in ps:
        lhs = float(np.mean(np.sqrt(g2_avg) ** p) ** (1.0 / p))
        rhs = float(np.mean(np.sqrt(f2_avg) ** p) ** (1.0 / p))
        ratios[p] = lhs / max(rhs, 1e-30)

    fq = np.broadcast_to(f2_elem[:, None], (mesh.num_elements, 4))
    f_l2 = float(np.sqrt(np.einsum("eq,q->", fq, fem.QUAD_W) * mesh.h ** 2))
    g_l2 = fem.grad_lp_norm(space, u.nodal, 2.0)
    return CZReport(
        eps=eps,
        load=load,
        ratios=ratios,
        energy_ratio=g_l2 / max(f_l2, 1e-30),
        report=report,
    )
