"""Momentum-space oracles: Harper bands, Fukui–Hatsugai–Suzuki Chern numbers.

These routines never touch the real-space machinery; they are the
independent ground truth against which real-space invariants are checked.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

TWO_PI = 2.0 * math.pi


class BandCrossingError(ValueError):
    pass


def harper_bloch(p: int, q: int, k1: float, k2: float) -> np.ndarray:
    """Bloch Hamiltonian of s1 + s1* + s2 + s2* at flux 2*pi*p/q per plaquette.

    Landau gauge with phase n2*b on e1-bonds, magnetic cell of q sites along
    n2.  Quasi-momenta: k1 in [0, 2pi), k2 in [0, 2pi/q).
    """
    b = TWO_PI * p / q
    a = np.arange(q)
    h = np.diag(2.0 * np.cos(k1 - a * b)).astype(complex)
    if q == 1:
        return h + 2.0 * math.cos(k2)
    c = np.zeros((q, q), dtype=complex)
    c[a[1:], a[1:] - 1] = 1.0
    c[0, q - 1] += np.exp(-1j * q * k2)
    return h + c + c.conj().T


def harper_bands(p: int, q: int, nk: int = 9) -> np.ndarray:
    """Band extrema, shape (q, 2): per band (e_min, e_max).

    The spectrum depends on k only through cos(q k1) + cos(q k2) (Chambers'
    relation, checked in the tests), so the reduced zone
    [0, 2pi/q] x [0, 2pi/q] sampled on an nk x nk grid containing
    0 and pi/q (nk odd) gives the exact band edges.
    """
    ks = np.linspace(0.0, TWO_PI / q, nk)
    es = np.array([np.linalg.eigvalsh(harper_bloch(p, q, k1, k2)) for k1 in ks for k2 in ks])
    return np.stack([es.min(axis=0), es.max(axis=0)], axis=1)


def harper_bands_full(p: int, q: int, nk: int = 24) -> np.ndarray:
    """Band extrema from the full magnetic zone (slow reference for ``harper_bands``)."""
    k1s = np.linspace(0.0, TWO_PI, nk * q, endpoint=False)
    k2s = np.linspace(0.0, TWO_PI / q, nk + 1)
    es = np.array([np.linalg.eigvalsh(harper_bloch(p, q, k1, k2)) for k1 in k1s for k2 in k2s])
    return np.stack([es.min(axis=0), es.max(axis=0)], axis=1)


def band_groups(bands: np.ndarray, tol: float = 1e-6) -> list[list[int]]:
    """Maximal runs of bands that touch or overlap (gap <= tol)."""
    groups = [[0]]
    for b in range(1, len(bands)):
        if bands[b, 0] - bands[b - 1, 1] > tol:
            groups.append([b])
        else:
            groups[-1].append(b)
    return groups


def fhs_cherns(hamiltonian, groups, nk1: int, nk2: int, period1: float, period2: float,
               gap_tol: float = 1e-8) -> list[tuple[int, float]]:
    """Chern numbers of band groups of a Bloch family via lattice field strength.

    ``hamiltonian(k1, k2)`` must be exactly periodic with the given periods.
    Each group is a set of band indices; it must be separated (by more than
    ``gap_tol``) from the bands outside it at every grid point.

    Returns ``(chern, residue)`` per group, ``residue`` being the distance of
    the raw plaquette sum / 2pi from the returned integer.
    """
    k1s = np.arange(nk1) * period1 / nk1
    k2s = np.arange(nk2) * period2 / nk2
    hs = np.array([[hamiltonian(k1, k2) for k2 in k2s] for k1 in k1s])
    evals, vecs = np.linalg.eigh(hs)
    out = []
    for group in groups:
        group = sorted(int(b) for b in group)
        for b in group:
            for nb in (b - 1, b + 1):
                if 0 <= nb < evals.shape[-1] and nb not in group:
                    gap = np.abs(evals[..., b] - evals[..., nb]).min()
                    if gap < gap_tol:
                        raise BandCrossingError(f"band {b} touches band {nb} (min gap {gap:.3g})")
        f = vecs[..., group]
        fd = np.conj(np.swapaxes(f, -1, -2))
        u1 = np.linalg.det(fd @ np.roll(f, -1, axis=0))
        u2 = np.linalg.det(fd @ np.roll(f, -1, axis=1))
        u1 /= np.abs(u1)
        u2 /= np.abs(u2)
        plaq = u1 * np.roll(u2, -1, axis=0) * np.conj(np.roll(u1, -1, axis=1)) * np.conj(u2)
        raw = float(np.angle(plaq).sum() / TWO_PI)
        ch = int(round(raw))
        out.append((ch, abs(raw - ch)))
    return out


def fhs_chern(hamiltonian, bands, nk1: int, nk2: int, period1: float, period2: float,
              gap_tol: float = 1e-8) -> tuple[int, float]:
    """Single-group version of ``fhs_cherns``."""
    return fhs_cherns(hamiltonian, [bands], nk1, nk2, period1, period2, gap_tol)[0]


def chern_bloch_oracle(flux: Fraction | tuple[int, int], bands, nk: int = 8) -> int:
    """Chern number of a set of Harper bands at flux 2*pi*p/q.

    FHS on the magnetic zone with Bloch functions psi_n = e^{i k.n} u_k(n)
    gives the Chern number in the momentum-space convention; the real-space
    pairing -2*pi*i T(p [[N1, p], [N2, p]]) equals minus that number (fixed by
    direct comparison in the tests).  The value returned here is converted
    to the real-space sign.  ``nk`` points per 2*pi/q in each direction.
    """
    p, q = (flux.numerator, flux.denominator) if isinstance(flux, Fraction) else flux
    bands = list(bands)
    if not bands:
        return 0
    ch, residue = fhs_chern(lambda k1, k2: harper_bloch(p, q, k1, k2), bands, **_zone_grid(q, nk))
    if residue > 0.01:
        raise ValueError(f"Chern rounding residue {residue:.3g} exceeds 0.01; refine nk")
    return -ch


def _zone_grid(q: int, nk: int) -> dict:
    # the curvature varies on the scale 2*pi/q along k1 as well, so both
    # directions get the same spacing 2*pi/(q*nk)
    return dict(nk1=nk * q, nk2=nk, period1=TWO_PI, period2=TWO_PI / q)


def group_cherns(p: int, q: int, groups, nk: int = 8) -> list[int]:
    """Real-space-sign Chern numbers of several band groups in one pass.

    ``nk`` points per 2*pi/q in each direction.
    """
    res = fhs_cherns(lambda k1, k2: harper_bloch(p, q, k1, k2), groups, **_zone_grid(q, nk))
    for ch, residue in res:
        if residue > 0.01:
            raise ValueError(f"Chern rounding residue {residue:.3g} exceeds 0.01; refine nk")
    return [-ch for ch, _ in res]


def open_gaps(p: int, q: int, tol: float = 1e-6) -> list[tuple[int, float, float]]:
    """Open gaps as (r, lo, hi): r bands below, band edges lo < hi."""
    bands = harper_bands(p, q)
    return [(r, float(bands[r - 1, 1]), float(bands[r, 0]))
            for r in range(1, q) if bands[r, 0] - bands[r - 1, 1] > tol]


def gap_chern_labels(p: int, q: int, nk: int = 8) -> dict[int, int]:
    """Chern number of the Fermi projection in each open gap, keyed by band count r."""
    groups = band_groups(harper_bands(p, q))
    cherns = group_cherns(p, q, groups, nk)
    labels, acc = {}, 0
    for g, c in zip(groups[:-1], cherns[:-1]):
        acc += c
        labels[g[-1] + 1] = acc
    return labels


def tknn_ok(p: int, q: int, r: int, ch: int) -> bool:
    """r = q*s + p*ch for some integer s (up to the global sign convention)."""
    return (r - p * ch) % q == 0 or (r + p * ch) % q == 0


def rice_mele_bloch(t: float, k: float, delta0: float = 0.6, stagger: float = 1.0,
                    static: bool = False) -> np.ndarray:
    """Two-site Bloch Hamiltonian of the Rice–Mele chain.

    On-site +/- stagger*cos(2 pi t), intra-cell hopping 1 + delta0*sin(2 pi t),
    inter-cell hopping 1 - delta0*sin(2 pi t).  ``static`` freezes the
    stagger at +/- stagger, which makes the loop contractible.
    """
    d = stagger if static else stagger * math.cos(TWO_PI * t)
    v = 1.0 + delta0 * math.sin(TWO_PI * t)
    w = 1.0 - delta0 * math.sin(TWO_PI * t)
    off = v + w * np.exp(-1j * k)
    return np.array([[d, off], [np.conj(off), -d]], dtype=complex)


def rice_mele_min_gap(delta0: float = 0.6, stagger: float = 1.0, static: bool = False,
                      nt: int = 64, nk: int = 64) -> float:
    best = math.inf
    for t in np.arange(nt) / nt:
        for k in np.arange(nk) * TWO_PI / nk:
            e = np.linalg.eigvalsh(rice_mele_bloch(t, k, delta0, stagger, static))
            best = min(best, e[1] - e[0])
    return best


def pump_chern_oracle(delta0: float = 0.6, stagger: float = 1.0, static: bool = False,
                      n: int = 48) -> int:
    """FHS Chern number of the lower Rice–Mele band over the (t, k) torus."""
    ch, residue = fhs_chern(lambda t, k: rice_mele_bloch(t, k, delta0, stagger, static), [0],
                            nk1=n, nk2=n, period1=1.0, period2=TWO_PI)
    if residue > 0.01:
        raise ValueError(f"Chern rounding residue {residue:.3g} exceeds 0.01")
    return ch
