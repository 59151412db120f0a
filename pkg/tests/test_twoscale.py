import numpy as np
import pytest

from perfhom.cellgeom import PerforatedCell, build_domain_mesh, default_cell
from perfhom.cellsolve import build_corrector_table
from perfhom.monotone import make_identity
from perfhom.pdesolve import DiscreteFunction
from perfhom.twoscale import (
    CutoffPair,
    build_first_order,
    error_report,
    make_mollifier,
    smooth_eval,
    smoothing_quotient,
)

IDENT = make_identity()


def test_mollifier_stencil_frozen():
    mol = make_mollifier()
    assert mol.size == 41
    assert mol.mass_defect() < 1e-15
    assert np.abs(mol.first_moment()).max() < 1e-16
    assert np.linalg.norm(mol.points, axis=1).max() < 0.5
    assert np.all(mol.weights > 0)
    assert mol.plane_factor(0) == pytest.approx(0.51545218996, abs=1e-10)
    assert mol.plane_factor(0) == pytest.approx(mol.plane_factor(1), abs=1e-15)


def test_smoothing_reproduces_affine():
    mol = make_mollifier()
    f = lambda p: 0.7 - 1.3 * p[..., 0] + 0.4 * p[..., 1]
    pts = np.random.default_rng(2).uniform(-1.0, 2.0, size=(60, 2))
    for eps in (0.25, 0.125):
        vals = smooth_eval(f, pts, eps, mol)
        assert np.abs(vals - f(pts)).max() < 1e-12


def test_oscillatory_quotient_is_eps_independent():
    # the unit-frequency probe pins the quotient to the kernel symbol defect
    mol = make_mollifier()
    expected = abs(mol.plane_factor(0) - 1.0) / (2.0 * np.pi)
    vals = [smoothing_quotient(eps, "oscillatory", mol=mol)
            for eps in (0.25, 0.125, 0.0625)]
    assert vals[0] == pytest.approx(0.077118179132, abs=1e-9)
    for v in vals:
        assert v == pytest.approx(expected, abs=1e-12)
    assert max(vals) - min(vals) < 1e-12


def test_smooth_quotient_decays_linearly():
    frozen = {0.25: 0.0242231399, 0.125: 0.0122527560, 0.0625: 0.0061441690}
    for eps, want in frozen.items():
        assert smoothing_quotient(eps, "smooth") == pytest.approx(want, abs=1e-8)
    assert frozen[0.25] / frozen[0.125] == pytest.approx(2.0, rel=0.05)
    assert frozen[0.125] / frozen[0.0625] == pytest.approx(2.0, rel=0.05)


def test_smoothing_quotient_rejects_unknown_probe():
    with pytest.raises(ValueError):
        smoothing_quotient(0.25, probe="spiky")


def test_cutoff_pair_product_vanishes():
    dom = build_domain_mesh(default_cell(8), eps=0.125)
    cut = CutoffPair(dom, 0.125)
    pts = np.random.default_rng(8).uniform(0.0, 1.0, size=(500, 2))
    psi = cut.psi(pts)
    psi_p = cut.psi_prime(pts)
    assert np.all((psi >= 0) & (psi <= 1))
    assert np.all((psi_p >= 0) & (psi_p <= 1))
    assert np.abs(psi * (1.0 - psi_p)).max() == 0.0
    d = dom.boundary_distance(pts)
    assert np.all(psi[d <= 3 * 0.125] == 0.0)
    assert np.all(psi[d >= 4 * 0.125] == 1.0)
    assert np.all(psi_p[d >= 2 * 0.125] == 1.0)


def test_first_order_keeps_dirichlet_trace():
    cell = default_cell(8)
    dom = build_domain_mesh(cell, eps=0.0625)
    table = build_corrector_table(cell, IDENT, radius=1.0, grid_n=3)
    nodal = 0.4 * dom.mesh.vertices[:, 0] + 0.1 * dom.mesh.vertices[:, 1]
    u0 = DiscreteFunction(dom.mesh, nodal)
    res = build_first_order(dom, u0, table)
    gamma = dom.gamma_vertices()
    assert np.array_equal(res.v_eps.nodal[gamma], u0.nodal[gamma])
    assert 0.0 < res.interior_fraction < 1.0


def test_first_order_corrector_is_periodic_in_the_interior():
    # deep inside, phi is the constant gradient and the added corrector
    # tiles with the cell period along the lattice
    cell = default_cell(8)
    eps = 0.0625
    dom = build_domain_mesh(cell, eps=eps)
    table = build_corrector_table(cell, IDENT, radius=1.0, grid_n=3)
    nodal = 0.4 * dom.mesh.vertices[:, 0]
    u0 = DiscreteFunction(dom.mesh, nodal)
    res = build_first_order(dom, u0, table)
    corr = res.corrector_values
    n = cell.resolution
    stride = dom.mesh.ny + 1
    # two vertices one cell apart near the domain center
    va = (8 * n) * stride + (8 * n)
    vb = (9 * n) * stride + (8 * n)
    assert corr[va] != 0.0
    assert corr[va] == pytest.approx(corr[vb], abs=1e-13)
    assert np.allclose(res.phi[va], [0.4, 0.0], atol=1e-13)


def test_first_order_lattice_guard():
    cell = default_cell(8)
    dom = build_domain_mesh(cell, eps=0.125)
    other = build_domain_mesh(cell, eps=0.25)
    table = build_corrector_table(cell, IDENT, radius=1.0, grid_n=3)
    u0 = DiscreteFunction(other.mesh, np.zeros(other.mesh.num_vertices))
    with pytest.raises(ValueError):
        build_first_order(dom, u0, table)


def test_error_report_vanishes_on_identical_fields():
    cell = PerforatedCell(holes=(), resolution=8)
    dom = build_domain_mesh(cell, eps=0.125)
    table = build_corrector_table(cell, IDENT, radius=1.0, grid_n=3)
    nodal = np.sin(np.pi * dom.mesh.vertices[:, 0])
    u = DiscreteFunction(dom.mesh, nodal)
    res = build_first_order(dom, u, table)
    # unperforated cell: the corrector vanishes and v_eps equals u0
    assert np.abs(res.v_eps.nodal - u.nodal).max() < 1e-12
    rep = error_report(dom, u, u, res)
    assert rep.l2_u0 == 0.0
    assert rep.l2_v < 1e-12
    assert rep.h1_v < 1e-11
    assert rep.u_eps_l2 > 0.1
