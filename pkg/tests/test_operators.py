import math

import numpy as np
import pytest

from quarterhall.lattice import LatticeOperator, LatticeWindow, MagneticField, interface_distance
from quarterhall.operators import (
    FamilyError,
    HamiltonianSpec,
    asymptotic_pair,
    corner_example_family,
    family_from_builder,
    harper_hamiltonian,
    pump_family,
    rice_mele_chain,
)


def test_harper_hermitian_and_bounded(fluxes):
    w = LatticeWindow.square(12)
    h = harper_hamiltonian(HamiltonianSpec(MagneticField(*fluxes), w))
    assert h.hermitian
    assert np.abs(np.linalg.eigvalsh(h.matrix)).max() <= 4.0 + 1e-12


def test_zero_field_open_square_spectrum():
    # free open square: 2cos(pi a/(n+1)) + 2cos(pi b/(n+1))
    n = 6
    w = LatticeWindow(0, n - 1, 0, n - 1)
    h = harper_hamiltonian(HamiltonianSpec(MagneticField.constant(0.0), w, "bulk_corner"))
    k = 2 * np.cos(np.pi * np.arange(1, n + 1) / (n + 1))
    expect = np.sort((k[:, None] + k[None, :]).ravel())
    assert np.allclose(np.linalg.eigvalsh(h.matrix), expect)


def test_star_potential_shifts_star_region(fluxes):
    w = LatticeWindow.square(10)
    base = HamiltonianSpec(MagneticField(*fluxes), w)
    h0 = harper_hamiltonian(base).matrix
    h8 = harper_hamiltonian(HamiltonianSpec(MagneticField(*fluxes), w, star_potential=8.0)).matrix
    diff = np.diag(h8 - h0).real
    n1, n2 = w.coords()
    assert np.allclose(diff, 8.0 * ~((n1 >= 1) & (n2 >= 1)))


def test_interface_potential_support_checked(fluxes):
    w = LatticeWindow.square(12)
    far = interface_distance(w) > 3
    v_ok = LatticeOperator(w, np.diag(np.where(far, 0.0, 0.3)), hermitian=True)
    spec = HamiltonianSpec(MagneticField(*fluxes), w, interface_potential=v_ok)
    assert harper_hamiltonian(spec).hermitian
    v_bad = LatticeOperator(w, np.diag(np.where(far, 0.3, 0.0)), hermitian=True)
    with pytest.raises(ValueError, match="support"):
        HamiltonianSpec(MagneticField(*fluxes), w, interface_potential=v_bad)
    with pytest.raises(ValueError):
        HamiltonianSpec(MagneticField(*fluxes), w, kind="bulk_corner", interface_potential=v_ok)
    with pytest.raises(ValueError):
        asymptotic_pair(spec)


def test_asymptotic_pair_profiles(fluxes):
    w = LatticeWindow.square(12)
    spec = HamiltonianSpec(MagneticField(*fluxes), w)
    h_u, h_r = asymptotic_pair(spec)
    # H_U: field depends only on n1, so it commutes with translations along n2 in the interior
    assert h_u.hermitian and h_r.hermitian
    assert not np.allclose(h_u.matrix, h_r.matrix)


def test_unknown_kind_rejected(fluxes):
    with pytest.raises(ValueError, match="kind"):
        HamiltonianSpec(MagneticField(*fluxes), LatticeWindow.square(6), kind="bogus")


def test_corner_family_spectrum_and_periodicity():
    w = LatticeWindow.square(10)
    fam = corner_example_family(w, MagneticField(2 * math.pi / 3, 2 * math.pi / 5), grid=11)
    for t, op in fam.samples:
        ev = np.linalg.eigvalsh(op.matrix)
        assert set(np.round(ev, 10)) <= {-1.0, round(1 - 2 * t, 10), 1.0}
        assert np.sum(np.abs(ev - (1 - 2 * t)) < 1e-10) >= 1
    assert fam.periodicity_defect() < 1e-10
    h_u, h_r = fam.meta["asymptotic"](0.3)
    assert np.allclose(np.abs(np.linalg.eigvalsh(h_u.matrix)), 1.0)
    assert np.allclose(np.abs(np.linalg.eigvalsh(h_r.matrix)), 1.0)


def test_family_requires_periodicity():
    w = LatticeWindow(0, 1, 0, 0)
    with pytest.raises(FamilyError):
        family_from_builder(lambda t: LatticeOperator(w, np.diag([t, 1.0]), hermitian=True), 5)
    fam = family_from_builder(lambda t: LatticeOperator(w, np.diag([t, 1.0]), hermitian=True), 5,
                              periodic=False)
    assert fam.reversed().operators[0].matrix[0, 0] == 1.0


def test_family_grid_validation():
    w = LatticeWindow(0, 0, 0, 0)
    op = LatticeOperator(w, np.eye(1), hermitian=True)
    with pytest.raises(FamilyError):
        family_from_builder(lambda t: op, [0.0, 0.5, 0.4, 1.0])


def test_rice_mele_chain_structure():
    h = rice_mele_chain(8, 0.0)
    assert np.allclose(np.diag(h), [1, -1] * 4)
    assert np.allclose(np.diag(h, 1), 1.0)
    h = rice_mele_chain(8, 0.25)
    assert np.allclose(np.diag(h, 1)[:2], [1.6, 0.4])


def test_pump_family_periodic_and_admissible():
    fam = pump_family(20, grid=9)
    assert fam.periodicity_defect() < 1e-12
    with pytest.raises(FamilyError, match="not admissible"):
        pump_family(20, grid=9, delta0=1e-9, stagger=0.0)
    with pytest.raises(ValueError):
        pump_family(21)
