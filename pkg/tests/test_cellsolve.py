import numpy as np
import pytest

from perfhom import fem
from perfhom.cellgeom import PerforatedCell, build_cell_mesh, default_cell
from perfhom.cellsolve import (
    a_hat_matrix_from_special,
    build_corrector_table,
    effective_eval,
    geometry_hash,
    read_table,
    solve_aux_potential,
    solve_corrector,
    solve_flux,
    solve_linear_special,
    write_table,
)
from perfhom.errors import MeanNotZero, TableCorrupt, TableRangeExceeded
from perfhom.monotone import make_identity, make_paper_example

IDENT = make_identity()

# effective diagonal for the centered square hole, A = I, by cell resolution
A_HAT_DIAG = {8: 0.783568890, 16: 0.775251970, 32: 0.771964874}


def h1_norm(space: fem.Space, nodal: np.ndarray) -> float:
    return float(
        np.hypot(fem.lp_norm(space, nodal, 2.0), fem.grad_lp_norm(space, nodal, 2.0))
    )


def test_unperforated_identity_corrector_vanishes():
    cell = PerforatedCell(holes=(), resolution=16)
    space = fem.Space(build_cell_mesh(cell))
    for xi in ([1.0, 0.0], [0.3, -2.0]):
        sol = solve_corrector(cell, IDENT, np.asarray(xi))
        assert h1_norm(space, sol.nodal) < 1e-12
        assert np.allclose(
            effective_eval(cell, IDENT, np.asarray(xi), corrector=sol), xi,
            atol=1e-12,
        )


def test_corrector_matches_harmonic_potential(cell16):
    # volumetric Newton path against the surface-load linear path
    space = fem.Space(build_cell_mesh(cell16))
    for k in range(2):
        xi = np.zeros(2)
        xi[k] = 1.0
        sol = solve_corrector(cell16, IDENT, xi, space=space)
        phi = solve_linear_special(cell16, k, space=space)
        assert h1_norm(space, sol.nodal - phi) < 1e-9


@pytest.mark.parametrize("n", [8, 16, 32])
def test_effective_identity_frozen(n):
    ahat = a_hat_matrix_from_special(default_cell(n))
    assert ahat[0, 0] == pytest.approx(A_HAT_DIAG[n], abs=1e-8)
    assert ahat[1, 1] == pytest.approx(ahat[0, 0], abs=1e-12)
    assert abs(ahat[0, 1]) < 1e-12
    assert abs(ahat[1, 0]) < 1e-12


def test_effective_eval_agrees_with_special(cell16):
    ahat = a_hat_matrix_from_special(cell16)
    for xi in (np.array([1.0, 0.0]), np.array([0.5, -1.5])):
        av = effective_eval(cell16, IDENT, xi)
        assert np.allclose(av, ahat @ xi, atol=1e-9)


def test_effective_diagonal_refinement_monotone():
    # the discrete effective coefficient decreases towards the continuum value
    d8, d16, d32 = (A_HAT_DIAG[n] for n in (8, 16, 32))
    assert d8 > d16 > d32 > 0.7


def test_corrector_mean_zero_and_periodic(cell16, paper_field):
    sol = solve_corrector(cell16, paper_field, np.array([1.5, -0.5]))
    assert abs(sol.mean) < 1e-12
    pairs = build_cell_mesh(cell16).periodic_pairs
    assert np.array_equal(sol.nodal[pairs[:, 0]], sol.nodal[pairs[:, 1]])


def test_paper_effective_frozen(cell16, paper_field):
    sol = solve_corrector(cell16, paper_field, np.array([1.0, 0.5]))
    assert sol.newton_iterations <= 6
    assert sol.residual < 1e-9
    av = effective_eval(cell16, paper_field, np.array([1.0, 0.5]), corrector=sol)
    assert av == pytest.approx([0.86182367, 0.50294658], abs=2e-6)


def test_corrector_linearity_for_identity(cell8):
    space = fem.Space(build_cell_mesh(cell8))
    e1 = solve_corrector(cell8, IDENT, np.array([1.0, 0.0]), space=space)
    e2 = solve_corrector(cell8, IDENT, np.array([0.0, 1.0]), space=space)
    mix = solve_corrector(cell8, IDENT, np.array([2.0, -3.0]), space=space)
    combo = 2.0 * e1.nodal - 3.0 * e2.nodal
    assert h1_norm(space, mix.nodal - combo) < 1e-9


def test_table_nodes_are_exact(cell8):
    table = build_corrector_table(cell8, IDENT, radius=1.0, grid_n=3)
    for i, x1 in enumerate(table.xi_axis):
        for j, x2 in enumerate(table.xi_axis):
            xi = np.array([x1, x2])
            assert np.array_equal(table.a_hat(xi), table.a_hat_table[i, j])
            assert np.array_equal(table.corrector_at(xi), table.corrector_table[i, j])


def test_table_interpolation_exact_for_linear_map(cell8):
    # identity gives a linear effective map, reproduced exactly by
    # bilinear interpolation anywhere inside the table
    table = build_corrector_table(cell8, IDENT, radius=2.0, grid_n=5)
    ahat = a_hat_matrix_from_special(cell8)
    rng = np.random.default_rng(11)
    xi = rng.uniform(-2.0, 2.0, size=(20, 2))
    assert np.allclose(table.a_hat(xi), xi @ ahat.T, atol=1e-9)
    jac = table.jacobian(np.array([0.3, -1.2]))
    assert np.allclose(jac, ahat, atol=1e-9)


def test_table_range_gate(cell8):
    table = build_corrector_table(cell8, IDENT, radius=1.0, grid_n=3)
    with pytest.raises(TableRangeExceeded):
        table.a_hat(np.array([1.2, 0.0]))
    with pytest.raises(TableRangeExceeded):
        table.corrector_at(np.array([0.0, -1.0001]))


def test_table_grid_validation(cell8):
    with pytest.raises(ValueError):
        build_corrector_table(cell8, IDENT, radius=1.0, grid_n=4)


def test_table_io_roundtrip(tmp_path, cell8):
    table = build_corrector_table(cell8, IDENT, radius=1.0, grid_n=3)
    path = tmp_path / "table.bin"
    write_table(path, table)
    back = read_table(path)
    assert np.array_equal(back.a_hat_table, table.a_hat_table)
    assert np.array_equal(back.corrector_table, table.corrector_table)
    assert np.array_equal(back.xi_axis, table.xi_axis)
    assert back.cell == table.cell
    assert back.theta == table.theta
    assert back.field_tag == table.field_tag


def test_table_io_detects_corruption(tmp_path, cell8):
    table = build_corrector_table(cell8, IDENT, radius=1.0, grid_n=3)
    path = tmp_path / "table.bin"
    write_table(path, table)
    raw = bytearray(path.read_bytes())
    raw[-5] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(TableCorrupt):
        read_table(path)


def test_table_io_detects_bad_magic_and_truncation(tmp_path, cell8):
    table = build_corrector_table(cell8, IDENT, radius=1.0, grid_n=3)
    path = tmp_path / "table.bin"
    write_table(path, table)
    raw = path.read_bytes()
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(TableCorrupt):
        read_table(bad)
    short = tmp_path / "short.bin"
    short.write_bytes(raw[:-16])
    with pytest.raises(TableCorrupt):
        read_table(short)


def test_geometry_hash_distinguishes_cells(cell8, cell16):
    h8, h16 = geometry_hash(cell8), geometry_hash(cell16)
    assert h8 != h16
    assert len(h8) == 16
    assert h8 == geometry_hash(default_cell(8))


def test_flux_corrector_identity_frozen(cell16):
    fx = solve_flux(cell16, IDENT, np.array([1.0, 0.0]))
    assert fx.identity_residual_rel < 1e-12
    assert fx.mean_abs < 1e-12
    assert fx.a_hat_center[0] == pytest.approx(A_HAT_DIAG[16], abs=1e-8)
    assert fx.div_defect_rel == pytest.approx(0.058345, abs=5e-4)
    assert fx.b_l2() == pytest.approx(0.489657373, abs=1e-6)
    E = fx.E()
    assert np.array_equal(E[..., 0, 1], -E[..., 1, 0])
    assert np.all(E[..., 0, 0] == 0.0)
    assert np.all(E[..., 1, 1] == 0.0)


def test_flux_div_defect_shrinks_under_refinement():
    d16 = solve_flux(default_cell(16), IDENT, np.array([1.0, 0.0])).div_defect_rel
    d32 = solve_flux(default_cell(32), IDENT, np.array([1.0, 0.0])).div_defect_rel
    assert d32 < 0.7 * d16


def test_flux_scales_linearly_for_identity(cell8):
    f1 = solve_flux(cell8, IDENT, np.array([0.7, -0.4]))
    f2 = solve_flux(cell8, IDENT, np.array([1.4, -0.8]))
    assert np.allclose(f2.b, 2.0 * f1.b, atol=1e-9)
    assert np.allclose(f2.e, 2.0 * f1.e, atol=1e-9)


def test_flux_effective_consistency_gate(cell8):
    table = build_corrector_table(cell8, IDENT, radius=2.0, grid_n=3)
    tampered = build_corrector_table(cell8, IDENT, radius=2.0, grid_n=3)
    tampered.a_hat_table[...] = 1.5 * table.a_hat_table
    solve_flux(cell8, IDENT, np.array([1.0, 0.0]), effective=table)
    with pytest.raises(MeanNotZero):
        solve_flux(cell8, IDENT, np.array([1.0, 0.0]), effective=tampered)


def test_aux_potential_frozen(cell16):
    aux = solve_aux_potential(cell16)
    assert abs(aux.mean) < 1e-12
    assert aux.theta == pytest.approx(0.75)
    assert aux.grad_norms[2.0] == pytest.approx(0.055677096, abs=1e-7)
    assert aux.grad_norms[4.0] == pytest.approx(0.065080931, abs=1e-7)
    assert aux.grad_norms[8.0] == pytest.approx(0.074310895, abs=1e-7)


def test_aux_potential_stable_under_refinement():
    n16 = solve_aux_potential(default_cell(16)).grad_norms
    n32 = solve_aux_potential(default_cell(32)).grad_norms
    for p in (2.0, 4.0, 8.0):
        assert n32[p] == pytest.approx(n16[p], rel=0.05)
