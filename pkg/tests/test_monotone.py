import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from perfhom.errors import AuditFailed
from perfhom.monotone import (
    audit_structure,
    make_checkerboard,
    make_identity,
    make_paper_example,
    paper_example_eigen_range,
)


def test_identity_field():
    f = make_identity()
    rng = np.random.default_rng(0)
    y = rng.uniform(-0.5, 0.5, size=(20, 2))
    xi = rng.normal(size=(20, 2))
    assert np.allclose(f(y, xi), xi)
    assert np.allclose(f.jacobian(y, xi), np.eye(2))
    rep = audit_structure(f, samples=2000)
    assert rep.passed
    assert rep.mu0_pairs == pytest.approx(1.0, abs=1e-12)
    assert rep.mu1_pairs == pytest.approx(1.0, abs=1e-12)
    assert rep.grid_min_eig == pytest.approx(1.0, abs=1e-14)


def test_checkerboard_values():
    f = make_checkerboard(1.0, 4.0)
    pts = np.array([[0.1, 0.1], [-0.1, 0.1], [-0.1, -0.1], [0.1, -0.1]])
    xi = np.tile([[1.0, 0.0]], (4, 1))
    vals = f(pts, xi)[:, 0]
    # quadrants alternate: NE and SW share a value, NW and SE the other
    assert vals[0] == vals[2]
    assert vals[1] == vals[3]
    assert sorted(set(vals)) == [1.0, 4.0]
    rep = audit_structure(f, samples=2000)
    assert rep.passed
    assert rep.grid_min_eig >= 1.0 - 1e-12
    assert rep.grid_max_norm <= 4.0 + 1e-12


def test_eigen_range_frozen_values():
    lo, hi = paper_example_eigen_range(0.9, 4.0)
    assert lo == pytest.approx(0.467105278, abs=1e-8)
    assert hi == pytest.approx(10.798816568, abs=1e-8)
    lo, hi = paper_example_eigen_range(0.1, 4.0)
    assert lo == pytest.approx(0.897727318, abs=1e-8)
    assert hi == pytest.approx(1.124999969, abs=1e-8)


def test_eigen_range_identity_limit():
    lo, hi = paper_example_eigen_range(0.0, 4.0)
    # delta = 0 means b = 1 and A(y, xi) = xi exactly
    assert lo == pytest.approx(1.0, abs=1e-12)
    assert hi == pytest.approx(1.0, abs=1e-12)


def test_paper_example_reduces_to_identity_where_b_is_one():
    f = make_paper_example(0.9)
    # the modulation vanishes on the axes y1 = 0 and y2 = 0
    y = np.array([[0.0, 0.3], [0.25, 0.0], [0.0, 0.0]])
    xi = np.array([[2.0, -1.0], [0.5, 3.0], [-2.0, -2.0]])
    assert np.allclose(f(y, xi), xi, atol=1e-14)


def test_paper_example_audit_passes(paper_field):
    rep = audit_structure(paper_field, samples=4000)
    assert rep.passed
    lo, hi = paper_example_eigen_range(0.9, 4.0)
    # sampled quotients stay inside the closed-form eigenvalue envelope
    assert rep.mu0_pairs >= lo - 1e-9
    assert rep.mu1_pairs <= hi + 1e-9
    assert rep.grid_min_eig >= lo - 1e-9
    assert rep.grid_max_norm <= hi + 1e-9
    assert rep.zero_defect == 0.0
    assert rep.jacobian_fd_defect < 1e-5


def test_paper_example_declared_constants(paper_field):
    lo, hi = paper_example_eigen_range(0.9, 4.0)
    assert paper_field.mu0 == pytest.approx(lo)
    assert paper_field.mu1 == pytest.approx(hi)
    assert paper_field.audit_radius == 4.0


def test_audit_rejects_nonmonotone_field():
    bad = make_paper_example(10.0)
    with pytest.raises(AuditFailed):
        audit_structure(bad, samples=2000)


def test_jacobian_matches_finite_differences(paper_field):
    rng = np.random.default_rng(7)
    y = rng.uniform(-0.5, 0.5, size=(64, 2))
    xi = rng.uniform(-2.0, 2.0, size=(64, 2))
    J = paper_field.jacobian(y, xi)
    h = 1e-6
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        col = (paper_field(y, xi + e) - paper_field(y, xi - e)) / (2 * h)
        assert np.abs(col - J[..., :, d]).max() < 1e-8


@given(
    st.floats(min_value=-4.0, max_value=4.0),
    st.floats(min_value=-4.0, max_value=4.0),
)
def test_paper_example_periodic_in_y(y1, y2):
    f = make_paper_example(0.9)
    y = np.array([[y1, y2]])
    xi = np.array([[1.3, -0.7]])
    shifted = y + np.array([[2.0, -3.0]])
    assert np.allclose(f(y, xi), f(shifted, xi), atol=1e-12)


@given(st.integers(min_value=0, max_value=10_000))
def test_paper_example_monotone_on_pairs(seed):
    f = make_paper_example(0.9)
    rng = np.random.default_rng(seed)
    y = rng.uniform(-0.5, 0.5, size=(32, 2))
    xi = rng.uniform(-2.8, 2.8, size=(32, 2))
    eta = rng.uniform(-2.8, 2.8, size=(32, 2))
    d = xi - eta
    keep = np.linalg.norm(d, axis=1) > 1e-9
    prod = np.einsum("md,md->m", f(y, xi) - f(y, eta), d)[keep]
    lo, _ = paper_example_eigen_range(0.9, 4.0)
    assert np.all(prod >= (lo - 1e-10) * np.sum(d[keep] ** 2, axis=1))
