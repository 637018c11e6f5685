"""Topological invariants: traces, Chern numbers, windings, currents, spectral flow.

Sign bookkeeping (kept in one place)
------------------------------------
Bulk derivations are ``nabla_j = -i [N_j, .]``.  The interface winding is
computed as

    W_i(u) = T_i(u^* [N_i, u]),

which equals ``i T_i(u^* nabla_i u)`` with the same ``nabla_i = -i[N_i, .]``.
With this choice the half-line shift ``w`` has W_1 = +1, W_2 = -1, and the
current identity reads ``T_i(g'(h) nabla_i h) = -W_i(u_Delta) / 2pi``.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .bloch import chern_bloch_oracle  # noqa: F401  (re-exported oracle)
from .lattice import LatticeOperator, LatticeWindow
from .operators import OperatorFamily
from .spectral import (
    EigenSystem,
    GapWindow,
    SmoothStep,
    eig,
    gap_unitary,
)

TWO_PI = 2.0 * math.pi


class InvariantError(ValueError):
    pass


class RefineGridError(InvariantError):
    pass


@dataclass(frozen=True)
class TraceWindow:
    """Averaging range [a, b] along the face direction, transverse range [c, d]."""

    direction: int
    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if self.direction not in (1, 2):
            raise ValueError("direction must be 1 or 2")
        if self.b < self.a or self.d < self.c:
            raise ValueError(f"empty trace window {self}")

    @property
    def length(self) -> int:
        return self.b - self.a + 1

    def mask(self, window: LatticeWindow) -> np.ndarray:
        along, across = _axes(window, self.direction)
        return (along >= self.a) & (along <= self.b) & (across >= self.c) & (across <= self.d)

    def columns(self, window: LatticeWindow) -> np.ndarray:
        along, _ = _axes(window, self.direction)
        return (along >= self.a) & (along <= self.b)

    def validate(self, window: LatticeWindow, margin: int) -> None:
        lo, hi = ((window.n1_min, window.n1_max) if self.direction == 1
                  else (window.n2_min, window.n2_max))
        clo, chi = ((window.n2_min, window.n2_max) if self.direction == 1
                    else (window.n1_min, window.n1_max))
        if self.a < margin or self.b > hi - margin:
            raise ValueError(f"averaging range [{self.a}, {self.b}] closer than {margin} "
                             f"to the corner or the window boundary [{lo}, {hi}]")
        if self.c < clo + margin or self.d > chi - margin:
            raise ValueError(f"transverse range [{self.c}, {self.d}] includes outer margin sites")

    def to_dict(self) -> dict:
        return asdict(self)


def _axes(window: LatticeWindow, direction: int):
    n1, n2 = window.coords()
    return (n1, n2) if direction == 1 else (n2, n1)


def default_trace_window(window: LatticeWindow, direction: int, corner_margin: int = 6,
                         edge_margin: int = 6) -> TraceWindow:
    """Face-``direction`` window: along [corner_margin, max - edge_margin], transverse inside margins."""
    if direction == 1:
        tw = TraceWindow(1, corner_margin, window.n1_max - edge_margin,
                         window.n2_min + edge_margin, window.n2_max - edge_margin)
    else:
        tw = TraceWindow(2, corner_margin, window.n2_max - edge_margin,
                         window.n1_min + edge_margin, window.n1_max - edge_margin)
    tw.validate(window, min(corner_margin, edge_margin))
    return tw


@dataclass
class InvariantReport:
    name: str
    value: float
    imag_residual: float = 0.0
    window: dict = field(default_factory=dict)
    convergence_estimate: float = 0.0
    runtime_ms: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.convergence_estimate >= 0:
            raise ValueError("convergence_estimate must be >= 0")

    CSV_HEADER = ("name", "value", "imag_residual", "window", "convergence_estimate", "runtime_ms")

    def to_dict(self) -> dict:
        return asdict(self)


def _block_coords(window: LatticeWindow, blocks: int, i: int) -> np.ndarray:
    n1, n2 = window.coords()
    return np.tile(n1 if i == 1 else n2, blocks).astype(float)


def bulk_trace_per_volume(a: LatticeOperator | np.ndarray, region: np.ndarray,
                          window: LatticeWindow | None = None) -> complex:
    """(1/|region|) sum over the region of A(n, n).

    ``a`` is an operator or its diagonal; ``region`` a boolean site mask.
    """
    diag = a.diagonal() if isinstance(a, LatticeOperator) else np.asarray(a)
    region = np.asarray(region, dtype=bool)
    if region.sum() == 0:
        raise InvariantError("empty trace region")
    blocks = diag.shape[0] // region.shape[0]
    mask = np.tile(region, blocks)
    return complex(diag[mask].sum() / region.sum())


def interface_trace(a: LatticeOperator | np.ndarray, tw: TraceWindow,
                    window: LatticeWindow | None = None, warn: bool = True) -> complex:
    """Trace per unit length along face ``tw.direction``, full windowed trace across.

    ``a`` may be an operator or a precomputed diagonal (then pass ``window``).
    """
    if isinstance(a, LatticeOperator):
        window, diag = a.window, a.diagonal()
    else:
        diag = np.asarray(a)
    if window is None:
        raise ValueError("window is required when passing a diagonal")
    blocks = diag.shape[0] // window.dimension
    inside = np.tile(tw.mask(window), blocks)
    cols = np.tile(tw.columns(window), blocks)
    total = diag[inside].sum()
    if warn:
        outside = np.abs(diag[cols & ~inside]).sum()
        if outside > 0.01 * max(np.abs(diag[inside]).sum(), 1e-300):
            warnings.warn(f"diagonal mass outside the transverse range is {outside:.3g} "
                          f"(inside {np.abs(diag[inside]).sum():.3g})", RuntimeWarning,
                          stacklevel=2)
    return complex(total / tw.length)


def position_commutator(a: LatticeOperator, i: int) -> LatticeOperator:
    """[N_i, A] with N_i the diagonal position operator."""
    x = _block_coords(a.window, a.blocks, i)
    return LatticeOperator(a.window, (x[:, None] - x[None, :]) * a.matrix)


def _commutator_diag(a: np.ndarray, b_comm: np.ndarray) -> np.ndarray:
    """diag(A B) for dense A, B."""
    return np.einsum("nm,mn->n", a, b_comm)


def chern_real_space(p: LatticeOperator, region: np.ndarray, name: str = "chern") -> InvariantReport:
    """-2 pi i T(p [[N1, p], [N2, p]]) over a region (boolean site mask)."""
    t0 = time.perf_counter()
    mat = p.matrix
    region = np.asarray(region, dtype=bool)
    rows = np.nonzero(np.tile(region, p.blocks))[0]
    if rows.size == 0:
        raise InvariantError("empty trace region")
    probe = mat[rows[: min(8, rows.size)]]
    if np.abs(probe @ mat - probe).max(initial=0.0) > 1e-8:
        raise InvariantError("chern_real_space needs an idempotent p")
    x1 = _block_coords(p.window, p.blocks, 1)
    x2 = _block_coords(p.window, p.blocks, 2)
    c1 = (x1[:, None] - x1[None, :]) * mat
    c2 = (x2[:, None] - x2[None, :]) * mat
    pr = mat[rows]
    d12 = np.einsum("rm,mr->r", pr @ c1, c2[:, rows])
    d21 = np.einsum("rm,mr->r", pr @ c2, c1[:, rows])
    t = (d12 - d21).sum() / rows.size
    val = -2j * math.pi * t
    if abs(val.imag) > 1e-6:
        raise InvariantError(f"non-converged Chern: imaginary part {val.imag:.3g}")
    return InvariantReport(name, float(val.real), float(abs(val.imag)),
                           {"region_sites": int(rows.size), **p.window.to_dict()},
                           runtime_ms=1e3 * (time.perf_counter() - t0))


def _check_unitary_on(u: LatticeOperator, support: np.ndarray, tol: float = 1e-8) -> None:
    rng = np.random.default_rng(12345)
    idx = np.nonzero(np.tile(support, u.blocks))[0]
    x = np.zeros((u.dim, 4), dtype=complex)
    x[idx] = rng.normal(size=(idx.size, 4)) + 1j * rng.normal(size=(idx.size, 4))
    y = u.matrix @ x
    gram = x.conj().T @ x
    err = np.abs(y.conj().T @ y - gram).max() / np.abs(gram).max()
    if err > tol:
        raise InvariantError(f"winding_number needs a unitary input (defect {err:.3g})")


def winding_density(u: LatticeOperator, i: int) -> np.ndarray:
    """diag(u^* [N_i, u])_n = sum_m |u_mn|^2 (N_m - N_n)."""
    x = _block_coords(u.window, u.blocks, i)
    w = np.abs(u.matrix) ** 2
    return x @ w - x * w.sum(axis=0)


def winding_number(u: LatticeOperator, tw: TraceWindow, name: str | None = None,
                   check: bool = True) -> InvariantReport:
    """W_i(u) = T_i(u^* [N_i, u]) (see module docstring for the convention)."""
    t0 = time.perf_counter()
    if check:
        _check_unitary_on(u, tw.mask(u.window))
    x = _block_coords(u.window, u.blocks, tw.direction)
    mask = np.tile(tw.mask(u.window), u.blocks)
    cols = u.matrix[:, mask]
    # complex form, for the imaginary residual
    dens = np.einsum("mn,mn->n", cols.conj(), (x[:, None] - x[mask][None, :]) * cols)
    val = dens.sum() / tw.length
    return InvariantReport(name or f"W{tw.direction}", float(val.real), float(abs(val.imag)),
                           {**tw.to_dict(), **u.window.to_dict()},
                           runtime_ms=1e3 * (time.perf_counter() - t0))


def interface_current(h: LatticeOperator, gap: GapWindow, tw: TraceWindow,
                      es: EigenSystem | None = None, tol: float = 0.05,
                      name: str | None = None) -> InvariantReport:
    """J_i = T_i(g'(H) nabla_i H), nabla_i = -i[N_i, .], with the winding cross-check.

    ``extra`` holds ``winding`` (W_i of the gap unitary), ``from_winding``
    (-W_i / 2pi), ``difference`` and ``flagged``.
    """
    t0 = time.perf_counter()
    es = es if es is not None else eig(h)
    g = SmoothStep(gap)
    gp = (es.vectors * g.derivative(es.values)) @ es.vectors.conj().T
    x = _block_coords(h.window, h.blocks, tw.direction)
    dh = -1j * (x[:, None] - x[None, :]) * h.matrix
    dens = np.einsum("nm,mn->n", gp, dh)
    val = interface_trace(dens, tw, h.window, warn=False)
    u = gap_unitary(es, gap)
    w = winding_number(u, tw, check=False)
    ref = -w.value / TWO_PI
    diff = abs(val.real - ref)
    return InvariantReport(name or f"J{tw.direction}", float(val.real), float(abs(val.imag)),
                           {**tw.to_dict(), **h.window.to_dict()},
                           runtime_ms=1e3 * (time.perf_counter() - t0),
                           extra={"winding": w.value, "from_winding": ref, "difference": diff,
                                  "flagged": bool(diff > tol)})


# -- spectral flow ----------------------------------------------------------

def _step(va: np.ndarray, vb: np.ndarray, mu: float):
    """Signed crossings between consecutive sorted spectra, or None if ambiguous."""
    # "below" means lambda <= mu, matching the Fermi projection chi_(-inf, mu]
    above_a, above_b = va > mu, vb > mu
    count = 0
    for i in np.nonzero(above_a != above_b)[0]:
        spacing = np.inf
        for nb in (i - 1, i + 1):
            if 0 <= nb < len(va):
                spacing = min(spacing, abs(va[i] - va[nb]))
        if abs(vb[i] - va[i]) >= 0.5 * spacing:
            return None
        count += 1 if above_b[i] else -1
    return count


def _masked_filling(op: LatticeOperator, mu: float, site_mask: np.ndarray) -> float:
    es = eig(op)
    w = es.weights(site_mask)
    return float(w[es.values <= mu].sum())


def spectral_flow(fam: OperatorFamily, mu: float = 0.0, site_mask: np.ndarray | None = None,
                  max_refine: int = 4, jump_tol: float = 0.25) -> int:
    """Net number of eigenvalues crossing ``mu`` upward along the family.

    Eigenvalues are matched between consecutive samples by sorted index (the
    optimal assignment in one dimension) and sign changes of lambda - mu are
    counted.  A step whose crossing branch moves by >= half its distance to
    the nearest level is ambiguous: it is bisected with the family builder
    (up to ``max_refine`` times), else ``RefineGridError``.

    With ``site_mask`` only crossings localised on those sites count: each
    step contributes -round(f(t_b) - f(t_a)), where f(t) is the weight of the
    filled states on the mask.  Smooth bulk drift rounds to zero; a branch
    localised on the mask jumps f by one when it crosses mu.  This does not
    depend on how branches are labelled, so simultaneous opposite crossings
    at the two ends of a chain are resolved.  A step is ambiguous when the
    change is farther than ``jump_tol`` from an integer.  A sample with a
    level within 1e-9 of mu is evaluated slightly off its grid point.
    """
    ts = fam.times
    ops = fam.operators
    for op, t in ((ops[0], ts[0]), (ops[-1], ts[-1])):
        if np.any(np.abs(np.linalg.eigvalsh(op.matrix) - mu) < 1e-8):
            raise InvariantError(f"eigenvalue within 1e-8 of mu at t={t}")

    if site_mask is None:
        def measure(op):
            return np.linalg.eigvalsh(op.matrix)

        def step(a, b):
            return _step(a, b, mu)
    else:
        def measure(op):
            return _masked_filling(op, mu, site_mask)

        def measure_sample(t, op):
            # a level sitting on mu (e.g. hybridised end modes of a chain at
            # the crossing point) makes the masked filling ill-defined there;
            # shift the sample off the crossing instead
            if fam.builder is not None and np.abs(np.linalg.eigvalsh(op.matrix) - mu).min() < 1e-9:
                return measure(fam.builder(t + (-nudge if t > 0.5 else nudge)))
            return measure(op)

        def step(a, b):
            d = b - a
            return None if abs(d - round(d)) > jump_tol else -int(round(d))

    def count(ta, a, tb, b, depth):
        c = step(a, b)
        if c is not None:
            return c
        if fam.builder is None or depth >= max_refine:
            raise RefineGridError(f"refine grid: ambiguous eigenvalue matching on [{ta}, {tb}]")
        tm = 0.5 * (ta + tb)
        m = measure(fam.builder(tm))
        return count(ta, a, tm, m, depth + 1) + count(tm, m, tb, b, depth + 1)

    nudge = 1e-3 * float(np.diff(ts).min())
    if site_mask is None:
        vals = [measure(op) for op in ops]
    else:
        vals = [measure_sample(t, op) for t, op in zip(ts, ops)]
    return int(sum(count(ts[k], vals[k], ts[k + 1], vals[k + 1], 0) for k in range(len(ts) - 1)))


# -- Fredholm / asymptotic gap condition --------------------------------------

@dataclass
class FredholmReport:
    is_fredholm: bool
    gap_U: float
    gap_R: float
    threshold: float = 1e-3

    def to_dict(self) -> dict:
        return asdict(self)


def interior_singular_gap(h: LatticeOperator, mu: float, margin: int = 4,
                          es: EigenSystem | None = None) -> float:
    """Smallest |lambda - mu| over eigenvectors with < 50% weight in the boundary margin."""
    es = es if es is not None else eig(h)
    keep = es.boundary_weights(margin) < 0.5
    if not keep.any():
        return math.inf
    return float(np.abs(es.values[keep] - mu).min())


def fredholm_check(h_u: LatticeOperator, h_r: LatticeOperator, mu: float,
                   threshold: float = 1e-3, margin: int = 4) -> FredholmReport:
    """Invertibility of both asymptotic operators at mu (interior singular values)."""
    gu = interior_singular_gap(h_u, mu, margin)
    gr = interior_singular_gap(h_r, mu, margin)
    return FredholmReport(bool(gu > threshold and gr > threshold), gu, gr, threshold)


# -- pump -------------------------------------------------------------------

def pump_polarization(fam: OperatorFamily, region: np.ndarray, mu: float = 0.0) -> float:
    """Delta P = i int dt T(P [d_t P, nabla P]), nabla = -i[N, .].

    T is the trace per unit volume on the chain algebra C*(S) ~ C(T) taken
    with the Lebesgue measure dk on the Brillouin circle, i.e. 2*pi times the
    per-site average over ``region`` (an even number of sites deep inside
    the chain).  This is the normalisation under which Delta P takes values
    in 2*pi*Z.  ``d_t P`` uses central differences on the periodic grid.

    Gap admissibility is checked on the Bloch reference by ``pump_family``;
    end states of the open chain may sit at mu, and their occupation only
    reaches the region through exponentially small tails.
    """
    if not fam.periodic:
        raise InvariantError("pump_polarization needs a periodic family")
    rows = np.nonzero(np.asarray(region, dtype=bool))[0]
    if rows.size == 0:
        raise InvariantError("empty trace region")
    ts = fam.times
    projs = []
    for op in fam.operators[:-1]:
        es = eig(op)
        occ = es.vectors[:, es.values <= mu]
        projs.append(occ @ occ.conj().T)
    n = len(projs)
    x = _block_coords(fam.operators[0].window, 1, 1)
    total = 0.0 + 0.0j
    for k in range(n):
        prev_t = ts[k - 1] - 1.0 if k == 0 else ts[k - 1]
        nxt_t = ts[k + 1]
        dp = (projs[(k + 1) % n] - projs[k - 1]) / (nxt_t - prev_t)
        p = projs[k]
        grad = -1j * (x[:, None] - x[None, :]) * p
        pr = p[rows]
        d1 = np.einsum("rm,mr->r", pr @ dp, grad[:, rows])
        d2 = np.einsum("rm,mr->r", pr @ grad, dp[:, rows])
        total += 0.5 * (nxt_t - prev_t) * 1j * (d1 - d2).sum() / rows.size
    return float(TWO_PI * total.real)
