"""Lattice geometry, quarter-plane magnetic field, gauge and magnetic translations.

Everything here acts on a finite rectangular window of Z^2 with open
(Dirichlet) truncation.  Magnetic translations are partial isometries on the
window; the algebraic identities of the infinite lattice hold exactly on the
*interior*, i.e. on sites at L-infinity distance >= ``margin`` from the window
boundary.

Sites are ordered row-major by ``(n2, n1)``::

    index = (n2 - n2_min) * width + (n1 - n1_min)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse

TWO_PI = 2.0 * math.pi
DEFAULT_MARGIN = 2
_HERM_TOL = 1e-12


class DegenerateFieldError(ValueError):
    """Raised when b_corner - b_star lies in 2*pi*Z for a quarter-plane setup."""


@dataclass(frozen=True)
class LatticeWindow:
    """Finite rectangle ``[n1_min, n1_max] x [n2_min, n2_max]`` of Z^2."""

    n1_min: int
    n1_max: int
    n2_min: int
    n2_max: int

    def __post_init__(self):
        if self.n1_max < self.n1_min or self.n2_max < self.n2_min:
            raise ValueError(f"empty window {self}")

    @classmethod
    def square(cls, size: int, corner_offset: int | None = None) -> "LatticeWindow":
        """A ``size x size`` window hosting the corner site (1, 1).

        ``corner_offset`` is the number of columns/rows with n <= 0 (default
        size // 4), so the two positive half-axes are the long faces.
        """
        if corner_offset is None:
            corner_offset = size // 4
        lo = -corner_offset
        return cls(lo, lo + size - 1, lo, lo + size - 1)

    @property
    def width(self) -> int:
        return self.n1_max - self.n1_min + 1

    @property
    def height(self) -> int:
        return self.n2_max - self.n2_min + 1

    @property
    def dimension(self) -> int:
        return self.width * self.height

    def hosts_quarter_plane(self) -> bool:
        return self.n1_min <= 0 < self.n1_max and self.n2_min <= 0 < self.n2_max

    def contains(self, n) -> bool:
        return self.n1_min <= n[0] <= self.n1_max and self.n2_min <= n[1] <= self.n2_max

    def index(self, n) -> int:
        if not self.contains(n):
            raise KeyError(f"site {tuple(n)} outside window")
        return (n[1] - self.n2_min) * self.width + (n[0] - self.n1_min)

    def site(self, idx: int) -> tuple[int, int]:
        n2, n1 = divmod(int(idx), self.width)
        return (n1 + self.n1_min, n2 + self.n2_min)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays ``(n1, n2)`` of site coordinates in index order."""
        n2, n1 = np.divmod(np.arange(self.dimension), self.width)
        return n1 + self.n1_min, n2 + self.n2_min

    def sites(self) -> Iterable[tuple[int, int]]:
        for n2 in range(self.n2_min, self.n2_max + 1):
            for n1 in range(self.n1_min, self.n1_max + 1):
                yield (n1, n2)

    def boundary_distance(self) -> np.ndarray:
        n1, n2 = self.coords()
        return np.minimum.reduce([n1 - self.n1_min, self.n1_max - n1,
                                  n2 - self.n2_min, self.n2_max - n2])

    def interior_mask(self, margin: int = DEFAULT_MARGIN) -> np.ndarray:
        return self.boundary_distance() >= margin

    def grown(self, k: int) -> "LatticeWindow":
        """Window enlarged by ``k`` sites, keeping the corner at the same offset."""
        return LatticeWindow(self.n1_min, self.n1_max + k, self.n2_min, self.n2_max + k)

    def to_dict(self) -> dict:
        return {"n1_min": self.n1_min, "n1_max": self.n1_max,
                "n2_min": self.n2_min, "n2_max": self.n2_max}


@dataclass(frozen=True)
class MagneticField:
    """Magnetic field strength B: Z^2 -> R (radians of flux per plaquette).

    ``profile`` selects the geometry of the unperturbed field:

    * ``quarter``  -- b_corner on n1 >= 1 and n2 >= 1, b_star elsewhere;
    * ``constant`` -- b_corner everywhere;
    * ``x_step``   -- b_corner for n1 >= 1, b_star for n1 <= 0 (depends on n1 only);
    * ``y_step``   -- b_corner for n2 >= 1, b_star for n2 <= 0 (depends on n2 only).

    ``perturbation`` is an additive, finitely supported correction.
    """

    b_corner: float
    b_star: float
    perturbation: Mapping[tuple[int, int], float] = field(default_factory=dict)
    profile: str = "quarter"
    check_nondegenerate: bool = True

    def __post_init__(self):
        if self.profile not in ("quarter", "constant", "x_step", "y_step"):
            raise ValueError(f"unknown field profile {self.profile!r}")
        object.__setattr__(self, "perturbation",
                           {(int(k[0]), int(k[1])): float(v) for k, v in dict(self.perturbation).items()})
        if self.profile == "quarter" and self.check_nondegenerate and self.is_degenerate():
            raise DegenerateFieldError(
                "b_corner - b_star must not lie in 2*pi*Z "
                f"(got b_corner={self.b_corner!r}, b_star={self.b_star!r})")

    @classmethod
    def constant(cls, b: float) -> "MagneticField":
        return cls(b, b, profile="constant", check_nondegenerate=False)

    def is_degenerate(self) -> bool:
        k = (self.b_corner - self.b_star) / TWO_PI
        return abs(k - round(k)) < 1e-12

    def with_profile(self, profile: str) -> "MagneticField":
        return MagneticField(self.b_corner, self.b_star, self.perturbation, profile, False)

    def with_perturbation(self, perturbation: Mapping[tuple[int, int], float]) -> "MagneticField":
        return MagneticField(self.b_corner, self.b_star, perturbation, self.profile,
                             self.check_nondegenerate)

    def negated(self) -> "MagneticField":
        return MagneticField(-self.b_corner, -self.b_star,
                             {k: -v for k, v in self.perturbation.items()},
                             self.profile, self.check_nondegenerate)

    def _base(self, n1, n2):
        if self.profile == "constant":
            corner = np.ones(np.broadcast(n1, n2).shape, dtype=bool)
        elif self.profile == "quarter":
            corner = (np.asarray(n1) >= 1) & (np.asarray(n2) >= 1)
        elif self.profile == "x_step":
            corner = np.asarray(n1) >= 1 + 0 * np.asarray(n2)
        else:
            corner = np.asarray(n2) >= 1 + 0 * np.asarray(n1)
        return np.where(corner, self.b_corner, self.b_star)

    def sample(self, n1, n2):
        """Vectorised B(n1, n2)."""
        n1 = np.asarray(n1)
        n2 = np.asarray(n2)
        out = np.array(self._base(n1, n2), dtype=float)
        if self.perturbation:
            flat1, flat2 = np.broadcast_arrays(n1, n2)
            out = out.reshape(flat1.shape).copy()
            for (p1, p2), val in self.perturbation.items():
                out[(flat1 == p1) & (flat2 == p2)] += val
        return out

    def to_dict(self) -> dict:
        return {"b_corner": self.b_corner, "b_star": self.b_star, "profile": self.profile,
                "perturbation": [[k[0], k[1], v] for k, v in sorted(self.perturbation.items())]}


def sample_field(field: MagneticField, n) -> float:
    """B(n) for a single site ``n = (n1, n2)``."""
    return float(field.sample(n[0], n[1]))


@dataclass(frozen=True)
class GaugePhases:
    """Bond phases A(n, n - e_j) over a window; ``phase[j-1]`` is in index order."""

    window: LatticeWindow
    phase1: np.ndarray
    phase2: np.ndarray

    def phase(self, n, j: int) -> float:
        arr = self.phase1 if j == 1 else self.phase2
        return float(arr[self.window.index(n)])


def _column_cumsums(field: MagneticField, n1: np.ndarray, n2: np.ndarray) -> np.ndarray:
    """sum_{m=1}^{n2} B(n1, m) for n2 > 0 and -sum_{m=0}^{|n2|-1} B(n1, -m) for n2 < 0."""
    out = np.zeros(n1.shape, dtype=float)
    top = int(max(n2.max(), 0))
    bottom = int(max(-n2.min(), 0))
    for c in np.unique(n1):
        sel = n1 == c
        rows = n2[sel]
        vals = np.zeros(rows.shape)
        if top > 0:
            up = np.concatenate([[0.0], np.cumsum(field.sample(np.full(top, c), np.arange(1, top + 1)))])
            pos = rows > 0
            vals[pos] = up[rows[pos]]
        if bottom > 0:
            down = np.concatenate([[0.0], np.cumsum(field.sample(np.full(bottom, c), -np.arange(0, bottom)))])
            neg = rows < 0
            vals[neg] = -down[-rows[neg]]
        out[sel] = vals
    return out


def build_gauge(field: MagneticField, window: LatticeWindow) -> GaugePhases:
    """Standard vector potential: phases only on e_1 bonds, column sums of B."""
    n1, n2 = window.coords()
    phase1 = _column_cumsums(field, n1, n2)
    return GaugePhases(window, phase1, np.zeros(window.dimension))


def circulation(gauge: GaugePhases, n) -> float:
    """Cir[A](n) = A(n,n-e1) + A(n-e1,n-e1-e2) + A(n-e1-e2,n-e2) + A(n-e2,n)."""
    w = gauge.window
    e1 = (n[0] - 1, n[1])
    e2 = (n[0], n[1] - 1)
    # A is antisymmetric: A(m, m') = -A(m', m)
    return (gauge.phase1[w.index(n)]
            + gauge.phase2[w.index(e1)]
            - gauge.phase1[w.index(e2)]
            - gauge.phase2[w.index(n)])


def _hermitian_defect(m: np.ndarray, block: int = 512) -> float:
    # blockwise to avoid a full-size temporary
    err = 0.0
    for a in range(0, m.shape[0], block):
        err = max(err, float(np.abs(m[a:a + block] - m[:, a:a + block].conj().T).max(initial=0.0)))
    return err


def _projection_defect(m: np.ndarray) -> float:
    d = np.diagonal(m)
    if np.count_nonzero(m) == np.count_nonzero(d):
        return float(np.abs(d * d - d).max(initial=0.0))
    return float(np.abs(m @ m - m).max(initial=0.0))


@dataclass(frozen=True, eq=False)
class LatticeOperator:
    """Dense matrix over the sites of a window.

    Flags are verified on construction; the matrix is made read-only.
    """

    window: LatticeWindow
    matrix: np.ndarray
    hermitian: bool = False
    unitary_on_interior: bool = False
    projection: bool = False

    def __post_init__(self):
        m = np.ascontiguousarray(self.matrix, dtype=complex)
        if m.shape[0] != m.shape[1] or m.shape[0] % self.window.dimension:
            raise ValueError(f"matrix shape {m.shape} does not fit window of dimension "
                             f"{self.window.dimension}")
        if self.projection and not self.hermitian:
            object.__setattr__(self, "hermitian", True)
        if self.hermitian:
            err = _hermitian_defect(m)
            if err >= _HERM_TOL:
                raise ValueError(f"operator flagged hermitian but |M - M^dag|_max = {err:.3g}")
        if self.projection:
            err = _projection_defect(m)
            if err >= _HERM_TOL:
                raise ValueError(f"operator flagged projection but |M^2 - M|_max = {err:.3g}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def blocks(self) -> int:
        return self.dim // self.window.dimension

    def dag(self) -> "LatticeOperator":
        return LatticeOperator(self.window, self.matrix.conj().T, hermitian=self.hermitian,
                               unitary_on_interior=self.unitary_on_interior,
                               projection=self.projection)

    def __matmul__(self, other: "LatticeOperator") -> "LatticeOperator":
        return LatticeOperator(self.window, self.matrix @ other.matrix)

    def __add__(self, other: "LatticeOperator") -> "LatticeOperator":
        return LatticeOperator(self.window, self.matrix + other.matrix)

    def __sub__(self, other: "LatticeOperator") -> "LatticeOperator":
        return LatticeOperator(self.window, self.matrix - other.matrix)

    def scaled(self, c: complex) -> "LatticeOperator":
        return LatticeOperator(self.window, c * self.matrix)

    def diagonal(self) -> np.ndarray:
        return np.diagonal(self.matrix).copy()

    def interior_block(self, margin: int = DEFAULT_MARGIN) -> np.ndarray:
        """Sub-matrix restricted to interior sites (rows and columns)."""
        mask = np.tile(self.window.interior_mask(margin), self.blocks)
        return self.matrix[np.ix_(mask, mask)]

    def dump(self, path) -> None:
        """Binary row-major (re, im) float64 pairs plus a ``.json`` header."""
        from pathlib import Path

        path = Path(path)
        np.ascontiguousarray(self.matrix).view(np.float64).tofile(path)
        header = {"window": self.window.to_dict(), "shape": list(self.matrix.shape),
                  "dtype": "complex128 as (re, im) float64 pairs, row-major",
                  "flags": {"hermitian": self.hermitian,
                            "unitary_on_interior": self.unitary_on_interior,
                            "projection": self.projection}}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(header, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "LatticeOperator":
        from pathlib import Path

        path = Path(path)
        header = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        mat = np.fromfile(path, dtype=np.float64).view(complex).reshape(header["shape"])
        return cls(LatticeWindow(**header["window"]), mat, **header["flags"])


def identity(window: LatticeWindow) -> LatticeOperator:
    return LatticeOperator(window, np.eye(window.dimension), hermitian=True, projection=True)


def diagonal_operator(window: LatticeWindow, values, **flags) -> LatticeOperator:
    return LatticeOperator(window, np.diag(np.asarray(values, dtype=complex)), **flags)


def magnetic_translation(field: MagneticField, window: LatticeWindow, direction: int,
                         gauge: GaugePhases | None = None, periodic: bool = False) -> LatticeOperator:
    """(s_j psi)(n) = exp(i A(n, n - e_j)) psi(n - e_j).

    Rows whose source site n - e_j leaves the window are zero.  With
    ``periodic=True`` the source wraps around the window instead, which makes
    the matrix an exact unitary (used only where a unitary lift is needed).
    """
    if direction not in (1, 2):
        raise ValueError("direction must be 1 or 2")
    if gauge is None:
        gauge = build_gauge(field, window)
    n1, n2 = window.coords()
    phase = gauge.phase1 if direction == 1 else gauge.phase2
    src1, src2 = (n1 - 1, n2) if direction == 1 else (n1, n2 - 1)
    if periodic:
        src1 = (src1 - window.n1_min) % window.width + window.n1_min
        src2 = (src2 - window.n2_min) % window.height + window.n2_min
    ok = (src1 >= window.n1_min) & (src2 >= window.n2_min)
    rows = np.nonzero(ok)[0]
    cols = (src2[ok] - window.n2_min) * window.width + (src1[ok] - window.n1_min)
    mat = np.zeros((window.dimension, window.dimension), dtype=complex)
    mat[rows, cols] = np.exp(1j * phase[ok])
    return LatticeOperator(window, mat, unitary_on_interior=True)


def translations(field: MagneticField, window: LatticeWindow) -> tuple[LatticeOperator, LatticeOperator]:
    gauge = build_gauge(field, window)
    return (magnetic_translation(field, window, 1, gauge),
            magnetic_translation(field, window, 2, gauge))


def flux_operator(field: MagneticField, window: LatticeWindow) -> LatticeOperator:
    n1, n2 = window.coords()
    return diagonal_operator(window, np.exp(1j * field.sample(n1, n2)), unitary_on_interior=True)


def commutator_residual(field: MagneticField, window: LatticeWindow,
                        margin: int = DEFAULT_MARGIN) -> float:
    """max |s1 s2 s1^* s2^* - f_B| over interior rows and columns."""
    s1, s2 = translations(field, window)
    group = s1.matrix @ s2.matrix @ s1.matrix.conj().T @ s2.matrix.conj().T
    diff = LatticeOperator(window, group - flux_operator(field, window).matrix)
    return float(np.abs(diff.interior_block(margin)).max(initial=0.0))


def _interior_pairs(window: LatticeWindow, gamma, margin: int) -> np.ndarray:
    n1, n2 = window.coords()
    d = window.boundary_distance()
    shifted = np.minimum.reduce([n1 - gamma[0] - window.n1_min, window.n1_max - n1 + gamma[0],
                                 n2 - gamma[1] - window.n2_min, window.n2_max - n2 + gamma[1]])
    return (d >= margin) & (shifted >= margin)


def translate_operator(op: LatticeOperator, gamma, field: MagneticField,
                       margin: int = DEFAULT_MARGIN) -> LatticeOperator:
    """s1^g1 s2^g2 op s2^-g2 s1^-g1 with s^-1 realised as s^dagger.

    The result agrees with the infinite-lattice translate on sites n whose
    source n - gamma is also interior.
    """
    gamma = (int(gamma[0]), int(gamma[1]))
    if not _interior_pairs(op.window, gamma, margin + max(abs(gamma[0]), abs(gamma[1]))).any():
        raise ValueError("window too small for translation")
    if gamma == (0, 0):
        return op
    s1, s2 = translations(field, op.window)

    def power(s, k):
        # one nonzero per row: sparse products keep this O(dim^2)
        base = scipy.sparse.csr_matrix(s.matrix if k >= 0 else s.matrix.conj().T)
        out = scipy.sparse.identity(base.shape[0], dtype=complex, format="csr")
        for _ in range(abs(k)):
            out = out @ base
        return out

    left = power(s1, gamma[0]) @ power(s2, gamma[1])
    right = power(s2, -gamma[1]) @ power(s1, -gamma[0])
    mat = (right.T @ (left @ op.matrix).T).T
    return LatticeOperator(op.window, np.asarray(mat))


def translation_valid_mask(window: LatticeWindow, gamma, margin: int = DEFAULT_MARGIN) -> np.ndarray:
    """Sites where ``translate_operator`` reproduces the infinite-lattice value."""
    return _interior_pairs(window, gamma, margin + max(abs(gamma[0]), abs(gamma[1])))


def indicator(window: LatticeWindow, kind: str, n=(0, 0)) -> np.ndarray:
    """0/1 characteristic function over the window (index order).

    ``kind``: ``R`` (right half-line from n), ``U`` (up half-line), ``Q``
    (quarter-plane at n), ``Qc`` (its complement), ``point``.
    """
    n1, n2 = window.coords()
    a, b = n
    if kind == "R":
        chi = (n2 == b) & (n1 >= a)
    elif kind == "U":
        chi = (n1 == a) & (n2 >= b)
    elif kind == "Q":
        chi = (n1 >= a) & (n2 >= b)
    elif kind == "Qc":
        chi = ~((n1 >= a) & (n2 >= b))
    elif kind == "point":
        chi = (n1 == a) & (n2 == b)
    else:
        raise ValueError(f"unknown indicator kind {kind!r}")
    return chi.astype(float)


def indicator_projection(window: LatticeWindow, kind: str, n=(0, 0)) -> LatticeOperator:
    return diagonal_operator(window, indicator(window, kind, n), hermitian=True, projection=True)


def projection_from_flux(window: LatticeWindow, field: MagneticField, which: str) -> LatticeOperator:
    """r_0, u_0 or q_0 from differences of translated flux operators.

    Only meaningful on interior sites; see ``translation_valid_mask``.
    """
    if field.is_degenerate():
        raise DegenerateFieldError("b_corner - b_star lies in 2*pi*Z: flux differences vanish")
    f = flux_operator(field, window)
    scale = 1.0 / (np.exp(1j * field.b_corner) - np.exp(1j * field.b_star))
    diag_shift = translate_operator(f, (-1, -1), field)
    if which == "r0":
        mat = diag_shift.matrix - translate_operator(f, (-1, 0), field).matrix
    elif which == "u0":
        mat = diag_shift.matrix - translate_operator(f, (0, -1), field).matrix
    elif which == "q0":
        mat = diag_shift.matrix - np.exp(1j * field.b_star) * np.eye(window.dimension)
    else:
        raise ValueError(f"unknown projection {which!r}")
    return LatticeOperator(window, scale * mat)


def interface_mask(window: LatticeWindow) -> np.ndarray:
    """Sites of {(n1, 0): n1 >= 0} U {(0, n2): n2 >= 0}."""
    n1, n2 = window.coords()
    return ((n2 == 0) & (n1 >= 0)) | ((n1 == 0) & (n2 >= 0))


def interface_distance(window: LatticeWindow) -> np.ndarray:
    """L-infinity distance from each site to the interface set."""
    n1, n2 = window.coords()
    to_r = np.maximum(np.abs(n2), np.maximum(-n1, 0))
    to_u = np.maximum(np.abs(n1), np.maximum(-n2, 0))
    return np.minimum(to_r, to_u)


def interface_unitary_w(window: LatticeWindow, field: MagneticField,
                        s1: LatticeOperator | None = None,
                        s2: LatticeOperator | None = None) -> LatticeOperator:
    """w = (s1 - 1) r0 + (s2^* - 1) u0 (1 - r0) + 1."""
    if not window.hosts_quarter_plane():
        raise ValueError("window must contain the corner and both positive half-axes")
    if s1 is None or s2 is None:
        s1, s2 = translations(field, window)
    one = np.eye(window.dimension)
    r0 = np.diag(indicator(window, "R"))
    u0 = np.diag(indicator(window, "U"))
    w = (s1.matrix - one) @ r0 + (s2.matrix.conj().T - one) @ u0 @ (one - r0) + one
    return LatticeOperator(window, w, unitary_on_interior=True)


def gauge_transform(op: LatticeOperator, gauge_function) -> LatticeOperator:
    """exp(-iG) op exp(iG) for a real gauge function G given per site."""
    g = np.exp(1j * np.tile(np.asarray(gauge_function, dtype=float), op.blocks))
    return LatticeOperator(op.window, (g.conj()[:, None] * op.matrix) * g[None, :],
                           hermitian=op.hermitian, unitary_on_interior=op.unitary_on_interior)
