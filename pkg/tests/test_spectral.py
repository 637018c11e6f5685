import math

import numpy as np
import pytest

from quarterhall.lattice import LatticeOperator, LatticeWindow, MagneticField, interface_distance
from quarterhall.operators import HamiltonianSpec, harper_hamiltonian
from quarterhall.spectral import (
    GapWindow,
    SmoothStep,
    SpectralError,
    common_gaps,
    decay_length,
    decay_profile,
    detect_common_gap,
    eig,
    fermi_projection,
    gap_unitary,
    operator_function,
    spectral_gaps,
)


def _bulk(b, size=16):
    w = LatticeWindow(0, size - 1, 0, size - 1)
    return harper_hamiltonian(HamiltonianSpec(MagneticField.constant(b), w, "bulk_corner"))


def test_smooth_step_limits_and_monotone():
    g = SmoothStep((-1.0, 1.0))
    xs = np.linspace(-2, 2, 401)
    vals = g(xs)
    assert vals[xs <= -1].max() == 0.0 and vals[xs >= 1].min() == 1.0
    assert np.all(np.diff(vals) >= 0)
    assert g(0.0) == pytest.approx(0.5)


def test_smooth_step_derivative_matches_finite_difference():
    g = SmoothStep((0.2, 0.9))
    xs = np.linspace(0.25, 0.85, 13)
    h = 1e-6
    fd = (g(xs + h) - g(xs - h)) / (2 * h)
    assert np.allclose(g.derivative(xs), fd, rtol=1e-5, atol=1e-8)
    # integrates to one across the gap
    grid = np.linspace(0.2, 0.9, 20001)
    assert np.trapezoid(g.derivative(grid), grid) == pytest.approx(1.0, abs=1e-6)


def test_gap_window_validation():
    with pytest.raises(ValueError):
        GapWindow(0.0, 1.0, 2.0)
    assert GapWindow.around(-1, 3).mu == 1.0


def test_fermi_projection_is_projection():
    h = _bulk(2 * math.pi / 3)
    p = fermi_projection(h, -1.5)
    m = p.matrix
    assert np.abs(m @ m - m).max() < 1e-10
    assert np.abs(m - m.conj().T).max() < 1e-12


def test_fermi_level_on_spectrum_is_rejected():
    h = _bulk(2 * math.pi / 3, 8)
    ev = np.linalg.eigvalsh(h.matrix)
    with pytest.raises(SpectralError, match="Fermi level"):
        fermi_projection(h, float(ev[5]))


def test_operator_function_matches_polynomial():
    h = _bulk(1.0, 8)
    sq = operator_function(h, lambda x: x ** 2).matrix
    assert np.allclose(sq, h.matrix @ h.matrix, atol=1e-10)


def test_gap_unitary_is_unitary():
    h = _bulk(2 * math.pi / 3, 10)
    u = gap_unitary(h, GapWindow.around(-2.6, -0.8)).matrix
    assert np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=1e-12)


def test_spectral_gaps_and_common_gaps():
    gaps = spectral_gaps(np.array([0.0, 1.0, 3.0]), -1.0, 4.0)
    assert gaps == [(-1.0, 0.0), (0.0, 1.0), (1.0, 3.0), (3.0, 4.0)]
    com = common_gaps([np.array([0.0, 3.0]), np.array([1.0])], -0.5, 3.5, threshold=1.5)
    assert com == [(1.0, 3.0)]


def test_detect_common_gap_between_third_and_fifth():
    a, b = _bulk(2 * math.pi / 3, 24), _bulk(2 * math.pi / 5, 24)
    gap = detect_common_gap(a, b, (-4.5, 4.5), choose="lowest")
    # lowest common gap lies between the first bands of 1/5 and 1/3
    assert -2.95 < gap.lo < -2.85 and -2.78 < gap.hi < -2.70


def test_detect_common_gap_raises_without_gap():
    # zero field: one band [-4, 4]; finite-size level spacing stays below 0.1
    a = _bulk(0.0, 24)
    with pytest.raises(SpectralError, match="no common gap"):
        detect_common_gap(a, a, (-1.0, 1.0), threshold=0.1)


def test_eig_is_deterministic():
    h = _bulk(2 * math.pi / 5, 12)
    a, b = eig(h), eig(h)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.vectors, b.vectors)


def test_gap_unitary_decays_away_from_interface():
    w = LatticeWindow.square(24, 9)
    h = harper_hamiltonian(HamiltonianSpec(MagneticField(2 * math.pi / 3, -2 * math.pi / 3), w))
    u = gap_unitary(h, GapWindow.around(-2.0, -0.7321))
    # columns deep inside the window, far from the interface: u - 1 is small
    inner = w.interior_mask(6)
    mass = np.sqrt((np.abs(u.matrix - np.eye(w.dimension)) ** 2).sum(axis=0))
    dist = interface_distance(w)
    near = mass[inner & (dist <= 1)].mean()
    far = mass[inner & (dist >= 5)].mean()
    assert far < 0.2 * near


def test_decay_profile_and_length():
    w = LatticeWindow(0, 9, 0, 0)
    dist = np.arange(10)
    op = LatticeOperator(w, np.diag(1.0 + np.exp(-dist / 2.0)))
    ks, tail = decay_profile(op, dist)
    assert tail[0] == pytest.approx(np.exp(-0.5))
    assert decay_length(ks, tail) == pytest.approx(2.0)


def test_lattice_operator_is_read_only():
    w = LatticeWindow.square(4)
    op = LatticeOperator(w, np.eye(16))
    with pytest.raises(ValueError):
        op.matrix[0, 0] = 2.0
