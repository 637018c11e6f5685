from fractions import Fraction
from math import gcd

import numpy as np
import pytest

from quarterhall.bloch import (
    BandCrossingError,
    band_groups,
    chern_bloch_oracle,
    fhs_chern,
    gap_chern_labels,
    group_cherns,
    harper_bands,
    harper_bands_full,
    harper_bloch,
    open_gaps,
    pump_chern_oracle,
    rice_mele_min_gap,
    tknn_ok,
)

# gap Chern labels (real-space sign), keyed by the number of bands below the gap;
# frozen from the FHS oracle and cross-checked against the real-space marker
FROZEN_LABELS = {
    (1, 3): {1: 1, 2: -1},
    (1, 4): {1: 1, 3: -1},
    (1, 5): {1: 1, 2: 2, 3: -2, 4: -1},
    (2, 5): {1: -2, 2: 1, 3: -1, 4: 2},
    (1, 6): {1: 1, 2: 2, 4: -2, 5: -1},
}


def test_bloch_matrix_hermitian_and_periodic():
    h = harper_bloch(2, 5, 0.3, 0.7)
    assert np.allclose(h, h.conj().T)
    ev = np.linalg.eigvalsh(h)
    ev_shift = np.linalg.eigvalsh(harper_bloch(2, 5, 0.3 + 2 * np.pi, 0.7 + 2 * np.pi / 5))
    assert np.allclose(ev, ev_shift)


def test_zero_flux_single_band():
    bands = harper_bands(0, 1)
    assert bands.shape == (1, 2)
    assert bands[0] == pytest.approx([-4.0, 4.0])


@pytest.mark.parametrize("p,q", [(1, 3), (2, 5), (1, 4), (3, 7), (1, 2)])
def test_reduced_zone_band_edges_match_full_zone(p, q):
    assert np.abs(harper_bands(p, q) - harper_bands_full(p, q)).max() < 1e-10


def test_half_flux_central_bands_touch_at_zero():
    bands = harper_bands(1, 2)
    assert bands[1, 0] - bands[0, 1] < 1e-12
    assert abs(bands[0, 1]) < 1e-12
    assert band_groups(bands) == [[0, 1]]
    assert open_gaps(1, 2) == []


def test_third_flux_two_open_gaps():
    assert [r for r, _, _ in open_gaps(1, 3)] == [1, 2]


@pytest.mark.parametrize("pq", sorted(FROZEN_LABELS))
def test_frozen_gap_labels(pq):
    assert gap_chern_labels(*pq) == FROZEN_LABELS[pq]


@pytest.mark.parametrize("pq", sorted(FROZEN_LABELS))
def test_band_cherns_sum_to_zero(pq):
    groups = band_groups(harper_bands(*pq))
    assert sum(group_cherns(*pq, groups)) == 0


def test_tknn_for_all_denominators_up_to_twelve():
    for q in range(2, 13):
        for p in range(1, q):
            if gcd(p, q) != 1:
                continue
            for r, ch in gap_chern_labels(p, q).items():
                assert tknn_ok(p, q, r, ch), (p, q, r, ch)
                assert abs(ch) <= q // 2


def test_oracle_accepts_fraction_and_empty_set():
    assert chern_bloch_oracle(Fraction(1, 3), [0]) == 1
    assert chern_bloch_oracle((1, 3), []) == 0
    # all bands: trivial
    assert chern_bloch_oracle((2, 5), range(5)) == 0


def test_oracle_is_grid_stable():
    for nk in (6, 8, 12):
        assert chern_bloch_oracle((2, 5), [0], nk=nk) == -2


def test_fhs_rejects_touching_bands():
    with pytest.raises(BandCrossingError):
        fhs_chern(lambda a, b: harper_bloch(1, 2, a, b), [0], 16, 16, 2 * np.pi, np.pi)


def test_flux_conjugation_flips_labels():
    # alpha -> 1 - alpha is complex conjugation: same bands, opposite Chern numbers
    assert np.allclose(harper_bands(1, 5), harper_bands(4, 5))
    assert {r: -c for r, c in gap_chern_labels(1, 5).items()} == gap_chern_labels(4, 5)


def test_rice_mele_oracle():
    assert rice_mele_min_gap() > 0.1
    assert pump_chern_oracle() == 1
    assert pump_chern_oracle(static=True) == 0
    assert pump_chern_oracle(delta0=-0.6) == -1
