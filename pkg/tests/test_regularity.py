import numpy as np
import pytest

from perfhom.cellgeom import default_cell
from perfhom.monotone import make_identity
from perfhom.regularity import (
    _disc_kernel,
    boundary_profile,
    cz_ratio,
    interior_profile,
)

IDENT = make_identity()


def test_disc_kernel_shape():
    k = _disc_kernel(2.0)
    assert k.shape == (5, 5)
    assert k.sum() == 9.0
    assert k[2, 2] == 1.0
    assert k[0, 2] == 0.0
    # point symmetry
    assert np.array_equal(k, k[::-1, ::-1])


def test_interior_profile_flat_for_identity():
    prof = interior_profile(default_cell(8), IDENT, eps=0.25)
    assert prof.kind == "interior"
    assert prof.radii[0] == pytest.approx(0.25)
    assert prof.radii[-1] == pytest.approx(0.5)
    assert prof.ratio_max == pytest.approx(1.00086905, abs=1e-6)
    assert prof.reference == pytest.approx(0.88608802, abs=1e-6)
    # averaged gradients stay within a whisker of the unit-ball reference
    assert np.all(prof.ratios() < 1.01)
    assert np.all(prof.ratios() > 0.98)


def test_boundary_profile_flat_for_identity():
    prof = boundary_profile(default_cell(8), IDENT, eps=0.25)
    assert prof.kind == "boundary"
    assert prof.ratio_max == pytest.approx(1.00090124, abs=1e-6)
    assert prof.reference == pytest.approx(0.22151074, abs=1e-6)
    assert np.all(prof.ratios() < 1.01)


def test_cz_smooth_load_frozen():
    rep = cz_ratio(default_cell(8), IDENT, eps=0.125, load="smooth")
    assert rep.ratios[2.0] == pytest.approx(0.773725167, abs=1e-7)
    assert rep.ratios[4.0] == pytest.approx(0.807477694, abs=1e-7)
    assert rep.energy_ratio == pytest.approx(0.770873293, abs=1e-7)
    # p = 2 ball averaging nearly commutes with the energy estimate
    assert rep.ratios[2.0] == pytest.approx(rep.energy_ratio, rel=0.05)


def test_cz_oscillatory_load_frozen():
    rep = cz_ratio(default_cell(8), IDENT, eps=0.125, load="oscillatory")
    assert rep.ratios[2.0] == pytest.approx(0.954053511, abs=1e-7)
    assert rep.ratios[4.0] == pytest.approx(0.954816685, abs=1e-7)


def test_cz_energy_ratio_bounded_by_ellipticity():
    # testing with u itself gives |grad u|^2 <= f . grad u pointwise in the
    # integral sense, so the energy quotient of the identity cannot exceed 1
    for load in ("smooth", "oscillatory"):
        rep = cz_ratio(default_cell(8), IDENT, eps=0.125, load=load)
        assert rep.energy_ratio <= 1.0 + 1e-10


def test_cz_rejects_unknown_load():
    with pytest.raises(ValueError):
        cz_ratio(default_cell(8), IDENT, eps=0.125, load="bumpy")
