"""Hamiltonians: Harper operators, asymptotic (Iwatsuka) pairs and parameter families."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .bloch import rice_mele_min_gap
from .lattice import (
    LatticeOperator,
    LatticeWindow,
    MagneticField,
    build_gauge,
    indicator,
    interface_distance,
    magnetic_translation,
)

KINDS = ("quarter", "bulk_corner", "bulk_star", "iwatsuka_U", "iwatsuka_R")
_PROFILE = {"quarter": "quarter", "iwatsuka_U": "x_step", "iwatsuka_R": "y_step"}
PERIODIC_TOL = 1e-12


class FamilyError(ValueError):
    pass


@dataclass(frozen=True)
class HamiltonianSpec:
    """What to build: field, window, kind, optional interface and star-region potentials.

    ``star_potential`` adds V on every site where the unperturbed field takes
    the value b_star (for ``quarter`` that is the complement of the open
    quadrant; the Iwatsuka kinds use their own step region).  It is a
    multiple of the indicator q^perp, which is generated by the flux
    operators, so it stays inside the magnetic algebra; it is how a gapped
    "vacuum" is realised when b_star = 0.
    """

    field: MagneticField
    window: LatticeWindow
    kind: str = "quarter"
    interface_potential: LatticeOperator | None = None
    interface_support: int = 3
    star_potential: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        v = self.interface_potential
        if v is not None:
            if self.kind != "quarter":
                raise ValueError("interface_potential is only allowed for kind='quarter'")
            if not v.hermitian:
                raise ValueError("interface_potential must be Hermitian")
            far = interface_distance(self.window) > self.interface_support
            mat = v.matrix
            if np.abs(mat[far]).max(initial=0.0) > 0 or np.abs(mat[:, far]).max(initial=0.0) > 0:
                raise ValueError(f"interface_potential has support farther than "
                                 f"{self.interface_support} from the interface")

    def with_kind(self, kind: str) -> "HamiltonianSpec":
        return replace(self, kind=kind, interface_potential=None)

    def effective_field(self) -> MagneticField:
        f = self.field
        if self.kind == "bulk_corner":
            return MagneticField.constant(f.b_corner)
        if self.kind == "bulk_star":
            return MagneticField.constant(f.b_star)
        if self.kind == "quarter":
            return f
        return MagneticField(f.b_corner, f.b_star, {}, _PROFILE[self.kind], False)

    def star_mask(self) -> np.ndarray:
        n1, n2 = self.window.coords()
        if self.kind == "bulk_corner":
            return np.zeros(self.window.dimension, dtype=bool)
        if self.kind == "bulk_star":
            return np.ones(self.window.dimension, dtype=bool)
        if self.kind == "quarter":
            return ~((n1 >= 1) & (n2 >= 1))
        if self.kind == "iwatsuka_U":
            return n1 <= 0
        return n2 <= 0

    def to_dict(self) -> dict:
        return {"field": self.field.to_dict(), "window": self.window.to_dict(), "kind": self.kind,
                "star_potential": self.star_potential,
                "interface_potential": self.interface_potential is not None}


def harper_hamiltonian(spec: HamiltonianSpec) -> LatticeOperator:
    """H = s1 + s1^* + s2 + s2^* (+ v) (+ V q^perp) for the profile selected by ``spec.kind``."""
    fld = spec.effective_field()
    gauge = build_gauge(fld, spec.window)
    s1 = magnetic_translation(fld, spec.window, 1, gauge).matrix
    s2 = magnetic_translation(fld, spec.window, 2, gauge).matrix
    h = s1 + s1.conj().T + s2 + s2.conj().T
    if spec.star_potential:
        h[np.diag_indices_from(h)] += spec.star_potential * spec.star_mask()
    if spec.interface_potential is not None:
        h = h + spec.interface_potential.matrix
    return LatticeOperator(spec.window, 0.5 * (h + h.conj().T), hermitian=True)


def asymptotic_pair(spec: HamiltonianSpec) -> tuple[LatticeOperator, LatticeOperator]:
    """(H_U, H_R): the Harper operator with the x-step and y-step field profiles."""
    if spec.kind != "quarter":
        raise ValueError("asymptotic_pair needs a quarter spec")
    if spec.interface_potential is not None:
        raise ValueError("asymptotic_pair requires a vanishing interface potential")
    return (harper_hamiltonian(spec.with_kind("iwatsuka_U")),
            harper_hamiltonian(spec.with_kind("iwatsuka_R")))


@dataclass(frozen=True, eq=False)
class OperatorFamily:
    """Hermitian operators sampled on a grid 0 = t_0 < ... < t_last = 1.

    ``builder(t)`` (optional) rebuilds a sample at any t; spectral-flow grid
    refinement uses it.  ``check_sites`` (optional boolean mask) restricts
    the periodicity check to a subset of sites; see ``corner_example_family``.
    """

    samples: tuple[tuple[float, LatticeOperator], ...]
    periodic: bool = True
    builder: Callable[[float], LatticeOperator] | None = None
    check_sites: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    periodic_tol: float = PERIODIC_TOL

    def __post_init__(self):
        ts = np.array([t for t, _ in self.samples])
        if len(ts) < 2 or ts[0] != 0.0 or ts[-1] != 1.0 or np.any(np.diff(ts) <= 0):
            raise FamilyError("grid must start at 0, end at 1 and increase strictly")
        if not all(op.hermitian for _, op in self.samples):
            raise FamilyError("every family sample must be Hermitian")
        if self.periodic:
            err = self.periodicity_defect()
            if err >= self.periodic_tol:
                raise FamilyError(f"H(0) != H(1): max deviation {err:.3g}")

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.samples])

    @property
    def operators(self) -> list[LatticeOperator]:
        return [op for _, op in self.samples]

    def periodicity_defect(self) -> float:
        a, b = self.samples[0][1].matrix, self.samples[-1][1].matrix
        if self.check_sites is not None:
            m = np.tile(self.check_sites, self.samples[0][1].blocks)
            a, b = a[np.ix_(m, m)], b[np.ix_(m, m)]
        return float(np.abs(a - b).max(initial=0.0))

    def _like(self, samples, builder, periodic=None) -> "OperatorFamily":
        return OperatorFamily(tuple(samples), self.periodic if periodic is None else periodic,
                              builder, self.check_sites, dict(self.meta), self.periodic_tol)

    def reversed(self) -> "OperatorFamily":
        builder = None if self.builder is None else (lambda t, f=self.builder: f(1.0 - t))
        return self._like(((1.0 - t, op) for t, op in reversed(self.samples)), builder)

    def conjugated(self, unitary: np.ndarray) -> "OperatorFamily":
        """U H(t) U^dagger for a fixed unitary U."""
        def conj(op):
            m = unitary @ op.matrix @ unitary.conj().T
            return LatticeOperator(op.window, 0.5 * (m + m.conj().T), hermitian=True)
        builder = None if self.builder is None else (lambda t, f=self.builder: conj(f(t)))
        return self._like(((t, conj(op)) for t, op in self.samples), builder)

    def concatenated(self, other: "OperatorFamily") -> "OperatorFamily":
        """Traverse ``self`` then ``other``, rescaled to [0, 1]."""
        first = [(0.5 * t, op) for t, op in self.samples]
        second = [(0.5 + 0.5 * t, op) for t, op in other.samples[1:]]
        builder = None
        if self.builder is not None and other.builder is not None:
            a, b = self.builder, other.builder
            builder = lambda t: a(2 * t) if t <= 0.5 else b(2 * t - 1)  # noqa: E731
        return self._like(first + second, builder, self.periodic and other.periodic)


def family_from_builder(builder: Callable[[float], LatticeOperator], grid: Sequence[float] | int,
                        periodic: bool = True, check_sites=None, meta=None,
                        periodic_tol: float = PERIODIC_TOL) -> OperatorFamily:
    ts = np.linspace(0.0, 1.0, grid) if isinstance(grid, int) else np.asarray(grid, dtype=float)
    return OperatorFamily(tuple((float(t), builder(float(t))) for t in ts), periodic, builder,
                          check_sites, meta or {}, periodic_tol)


def _unitary_log(u: np.ndarray) -> np.ndarray:
    """Hermitian Theta with exp(i Theta) = u, spectrum in (-pi, pi].

    Complex Schur form of a normal matrix is diagonal, which gives an
    orthonormal eigenbasis even for degenerate eigenvalues.
    """
    t, z = scipy.linalg.schur(u, output="complex")
    ang = np.angle(np.diag(t))
    ang[ang <= -math.pi + 1e-12] = math.pi
    theta = (z * ang) @ z.conj().T
    return 0.5 * (theta + theta.conj().T)


def corner_example_family(window: LatticeWindow, field: MagneticField,
                          grid: Sequence[float] | int = 101) -> OperatorFamily:
    """h(t) = u(t)^* diag(r_(1,0) + (1 - 2t) z_0 - r_0^perp, 1) u(t) on l2(W) + l2(W).

    u(t) = exp(i t Theta) with Theta the principal logarithm of s1 (+) s1^*,
    where s1 is closed cyclically on the window so that it is unitary.
    z_0 is the projection onto the site (0, 0).

    On a finite window u(1) cannot be a non-trivial shift of a half-line, so
    h(1) differs from h(0) at the single site where the cyclic closure
    wraps r_0 around; periodicity is therefore checked away from the window
    boundary (``check_sites``).
    """
    if not (window.contains((0, 0)) and window.contains((1, 0))
            and window.interior_mask(2)[window.index((0, 0))]
            and window.interior_mask(2)[window.index((1, 0))]):
        raise ValueError("window interior must contain the sites (0, 0) and (1, 0)")
    d = window.dimension
    r10 = indicator(window, "R", (1, 0))
    r0 = indicator(window, "R", (0, 0))
    z0 = indicator(window, "point", (0, 0))
    s1 = magnetic_translation(field, window, 1, periodic=True).matrix
    theta = np.zeros((2 * d, 2 * d), dtype=complex)
    theta[:d, :d] = _unitary_log(s1)
    theta[d:, d:] = -theta[:d, :d]  # log(s1^*) = -log(s1) off the branch cut
    ew, ev = np.linalg.eigh(theta)
    n1, n2 = window.coords()
    line = (n2 == 0).astype(float)
    # bulk evaluations: z_0 is compact and drops out; the half-line projections
    # vanish far up (ev_U) and fill the whole line n2 = 0 far right (ev_R)
    diag_u = np.concatenate([-np.ones(d), np.ones(d)])
    diag_r = np.concatenate([line - (1.0 - line), np.ones(d)])

    def conj(t: float, diag: np.ndarray) -> LatticeOperator:
        u = (ev * np.exp(1j * t * ew)) @ ev.conj().T
        m = u.conj().T @ (diag[:, None] * u)
        return LatticeOperator(window, 0.5 * (m + m.conj().T), hermitian=True)

    def build(t: float) -> LatticeOperator:
        return conj(t, np.concatenate([r10 + (1.0 - 2.0 * t) * z0 - (1.0 - r0), np.ones(d)]))

    def asymptotic(t: float) -> tuple[LatticeOperator, LatticeOperator]:
        return conj(t, diag_u), conj(t, diag_r)

    return family_from_builder(build, grid, periodic=True, check_sites=window.interior_mask(2),
                               meta={"model": "corner_example", "asymptotic": asymptotic},
                               periodic_tol=1e-10)


def rice_mele_chain(length: int, t: float, delta0: float = 0.6, stagger: float = 1.0,
                    static: bool = False) -> np.ndarray:
    """Open Rice–Mele chain on sites 1..L (two-site cells)."""
    c = 1.0 if static else math.cos(2 * math.pi * t)
    s = math.sin(2 * math.pi * t)
    onsite = stagger * c * np.where(np.arange(length) % 2 == 0, 1.0, -1.0)
    hop = np.where(np.arange(length - 1) % 2 == 0, 1.0 + delta0 * s, 1.0 - delta0 * s)
    return np.diag(onsite) + np.diag(hop, 1) + np.diag(hop, -1)


def pump_family(length: int = 60, grid: Sequence[float] | int = 201, delta0: float = 0.6,
                stagger: float = 1.0, cycles: int = 1, static: bool = False) -> OperatorFamily:
    """Rice–Mele cycle on an open chain of ``length`` sites.

    ``cycles`` traverses the loop several times (t -> cycles * t).  The chain
    is embedded as a 1 x L window so it reuses the lattice machinery;
    site n1 = 1..L.  ``static=True`` freezes the stagger (contractible loop).
    """
    if length < 20 or length % 2:
        raise ValueError("pump chain length must be even and >= 20")
    gap = rice_mele_min_gap(delta0, stagger, static)
    if gap <= 1e-6:
        raise FamilyError(f"family not admissible: Bloch gap closes (min gap {gap:.3g})")
    window = LatticeWindow(1, length, 0, 0)

    def build(t: float) -> LatticeOperator:
        return LatticeOperator(window, rice_mele_chain(length, cycles * t, delta0, stagger, static),
                               hermitian=True)

    return family_from_builder(build, grid, periodic=True,
                               meta={"model": "rice_mele", "delta0": delta0, "stagger": stagger,
                                     "cycles": cycles, "length": length, "static": static})
