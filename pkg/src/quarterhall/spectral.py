"""Eigendecomposition, functional calculus, Fermi projections and gap unitaries."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .lattice import DEFAULT_MARGIN, LatticeOperator, LatticeWindow

DEFAULT_GAP_THRESHOLD = 0.05


class SpectralError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EigenSystem:
    values: np.ndarray
    vectors: np.ndarray
    window: LatticeWindow

    def weights(self, mask: np.ndarray) -> np.ndarray:
        """Weight of each eigenvector on the sites selected by ``mask``."""
        blocks = self.vectors.shape[0] // self.window.dimension
        m = np.tile(np.asarray(mask, dtype=bool), blocks)
        return (np.abs(self.vectors[m]) ** 2).sum(axis=0)

    def boundary_weights(self, margin: int = DEFAULT_MARGIN) -> np.ndarray:
        return self.weights(~self.window.interior_mask(margin))


@dataclass(frozen=True)
class GapWindow:
    lo: float
    hi: float
    mu: float

    def __post_init__(self):
        if not self.lo < self.mu < self.hi:
            raise ValueError(f"need lo < mu < hi, got {self}")

    @classmethod
    def around(cls, lo: float, hi: float) -> "GapWindow":
        return cls(lo, hi, 0.5 * (lo + hi))

    @property
    def width(self) -> float:
        return self.hi - self.lo


def eig(h: LatticeOperator) -> EigenSystem:
    """Full Hermitian eigendecomposition with ascending eigenvalues.

    LAPACK ``heevd`` is used: a fixed, non-randomised algorithm, so repeated
    runs on the same input give identical results.
    """
    if not h.hermitian:
        raise SpectralError("eig requires an operator flagged hermitian")
    values, vectors = np.linalg.eigh(h.matrix)
    return EigenSystem(values, vectors, h.window)


def _from_spectrum(es: EigenSystem, fvals: np.ndarray, hermitian: bool) -> np.ndarray:
    mat = (es.vectors * fvals) @ es.vectors.conj().T
    if hermitian:
        mat = 0.5 * (mat + mat.conj().T)
    return mat


def operator_function(h: LatticeOperator | EigenSystem, f: Callable[[np.ndarray], np.ndarray]) -> LatticeOperator:
    """f(H) = V f(lambda) V^dagger."""
    es = h if isinstance(h, EigenSystem) else eig(h)
    fvals = np.asarray(f(es.values))
    real = np.isrealobj(fvals) or bool(np.all(np.abs(np.imag(fvals)) == 0))
    mat = _from_spectrum(es, fvals.real if real else fvals, hermitian=real)
    return LatticeOperator(es.window, mat, hermitian=real)


def fermi_projection(h: LatticeOperator | EigenSystem, mu: float, tol: float = 1e-9) -> LatticeOperator:
    """Spectral projection onto eigenvalues <= mu."""
    es = h if isinstance(h, EigenSystem) else eig(h)
    if np.any(np.abs(es.values - mu) < tol):
        raise SpectralError(f"Fermi level on spectrum (mu={mu})")
    occ = es.vectors[:, es.values <= mu]
    mat = occ @ occ.conj().T
    return LatticeOperator(es.window, 0.5 * (mat + mat.conj().T), hermitian=True)


def bulk_spectrum(es: EigenSystem, margin: int = DEFAULT_MARGIN, threshold: float = 0.5) -> np.ndarray:
    """Eigenvalues whose eigenvectors carry < ``threshold`` weight near the window boundary."""
    return es.values[es.boundary_weights(margin) < threshold]


def spectral_gaps(values: np.ndarray, lo: float, hi: float) -> list[tuple[float, float]]:
    """Maximal eigenvalue-free open intervals of ``values`` inside ``(lo, hi)``."""
    inside = np.sort(values[(values > lo) & (values < hi)])
    edges = np.concatenate([[lo], inside, [hi]])
    return [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def common_gaps(spectra: list[np.ndarray], lo: float, hi: float,
                threshold: float = DEFAULT_GAP_THRESHOLD) -> list[tuple[float, float]]:
    """Intervals in ``(lo, hi)`` free of all given eigenvalues and wider than ``threshold``.

    The range is clipped to the convex hull of the spectra: the region below
    the lowest or above the highest eigenvalue is not a gap.
    """
    merged = np.concatenate([np.asarray(s) for s in spectra])
    if merged.size == 0:
        return []
    lo, hi = max(lo, float(merged.min())), min(hi, float(merged.max()))
    return [g for g in spectral_gaps(merged, lo, hi) if g[1] - g[0] > threshold]


def detect_common_gap(h_a: LatticeOperator | EigenSystem, h_b: LatticeOperator | EigenSystem,
                      candidate: tuple[float, float], threshold: float = DEFAULT_GAP_THRESHOLD,
                      margin: int = DEFAULT_MARGIN, choose: str = "widest") -> GapWindow:
    """Common spectral gap of two bulk operators.

    Eigenvectors with >= 50% weight within ``margin`` of the window boundary are
    treated as truncation artefacts and ignored.  ``choose`` is ``"widest"`` or
    ``"lowest"``.
    """
    spectra = []
    for h in (h_a, h_b):
        es = h if isinstance(h, EigenSystem) else eig(h)
        spectra.append(bulk_spectrum(es, margin))
    gaps = common_gaps(spectra, candidate[0], candidate[1], threshold)
    if not gaps:
        raise SpectralError(f"no common gap wider than {threshold} in {candidate}")
    if choose == "lowest":
        lo, hi = gaps[0]
    else:
        lo, hi = max(gaps, key=lambda g: g[1] - g[0])
    return GapWindow.around(lo, hi)


# f(s) = exp(-BUMP_RATE / s).  The rate sets how fast the off-diagonal tails of
# functions of H decay; 1/2 beats the textbook 1 on gapped test systems.
BUMP_RATE = 0.5


def _bump(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-BUMP_RATE / s[pos])
    return out


def _bump_prime(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = BUMP_RATE * np.exp(-BUMP_RATE / s[pos]) / s[pos] ** 2
    return out


class SmoothStep:
    """C-infinity nondecreasing step: 0 below ``lo``, 1 above ``hi``.

    Inside the gap g(x) = sigma((x - lo)/(hi - lo)) with
    sigma(s) = f(s) / (f(s) + f(1 - s)) and f(s) = exp(-1/(2s)).
    """

    def __init__(self, gap: GapWindow | tuple[float, float]):
        lo, hi = (gap.lo, gap.hi) if isinstance(gap, GapWindow) else gap
        if not lo < hi:
            raise ValueError("smooth step needs lo < hi")
        self.lo, self.hi = float(lo), float(hi)

    def _s(self, x):
        return (np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo)

    def __call__(self, x):
        s = np.atleast_1d(self._s(x))
        a, b = _bump(s), _bump(1.0 - s)
        inside = (s > 0) & (s < 1)
        out = np.where(s >= 1, 1.0, 0.0)
        out[inside] = a[inside] / (a[inside] + b[inside])
        return out if np.ndim(x) else float(out[0])

    def derivative(self, x):
        s = np.atleast_1d(self._s(x))
        a, b = _bump(s), _bump(1.0 - s)
        da, db = _bump_prime(s), _bump_prime(1.0 - s)
        inside = (s > 0) & (s < 1)
        out = np.zeros_like(s)
        num = da * b + a * db  # d/ds [a / (a + b)] with db/ds = -f'(1-s)
        out[inside] = num[inside] / (a[inside] + b[inside]) ** 2 / (self.hi - self.lo)
        return out if np.ndim(x) else float(out[0])


def smooth_step(gap: GapWindow | tuple[float, float]) -> SmoothStep:
    return SmoothStep(gap)


def gap_unitary(h: LatticeOperator | EigenSystem, gap: GapWindow) -> LatticeOperator:
    """u_Delta = exp(2 pi i g(H))."""
    g = SmoothStep(gap)
    es = h if isinstance(h, EigenSystem) else eig(h)
    mat = _from_spectrum(es, np.exp(2j * math.pi * g(es.values)), hermitian=False)
    return LatticeOperator(es.window, mat, unitary_on_interior=True)


def decay_profile(op: LatticeOperator, distance: np.ndarray, subtract_identity: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Max column mass of ``op - 1`` as a function of an integer site distance.

    Returns ``(k, m_k)`` with m_k = max over columns at distance > k of the
    column 2-norm.
    """
    mat = op.matrix - np.eye(op.dim) if subtract_identity else op.matrix
    mass = np.sqrt((np.abs(mat) ** 2).sum(axis=0))
    dist = np.tile(np.asarray(distance), op.blocks)
    ks = np.arange(int(dist.max()))
    tail = np.array([mass[dist > k].max(initial=0.0) for k in ks])
    return ks, tail


def decay_length(ks: np.ndarray, tail: np.ndarray, floor: float = 1e-13) -> float:
    """Decay length from a log-linear fit to a tail profile (inf if not decaying)."""
    ok = tail > floor
    if ok.sum() < 3:
        return 0.0
    slope = np.polyfit(ks[ok], np.log(tail[ok]), 1)[0]
    return float(-1.0 / slope) if slope < 0 else math.inf


def spectrum_rows(es: EigenSystem, interface_mask: np.ndarray | None = None,
                  margin: int = DEFAULT_MARGIN) -> list[tuple[int, float, float, float]]:
    """Rows (index, eigenvalue, interface_weight, boundary_weight)."""
    bw = es.boundary_weights(margin)
    iw = es.weights(interface_mask) if interface_mask is not None else np.zeros_like(bw)
    return [(k, float(e), float(i), float(b)) for k, (e, i, b) in enumerate(zip(es.values, iw, bw))]
