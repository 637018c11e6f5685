"""Reproducible experiments with three-valued verdicts (pass / fail / skip)."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from math import gcd

import numpy as np

from .bloch import (
    band_groups,
    chern_bloch_oracle,
    group_cherns,
    harper_bands,
    pump_chern_oracle,
    tknn_ok,
)
from .invariants import (
    InvariantReport,
    TraceWindow,
    chern_real_space,
    default_trace_window,
    fredholm_check,
    interface_current,
    pump_polarization,
    spectral_flow,
    winding_number,
)
from .io import ConfigError, validate_config_dict
from .lattice import (
    TWO_PI,
    DegenerateFieldError,
    LatticeWindow,
    MagneticField,
    build_gauge,
    circulation,
    commutator_residual,
    flux_operator,
    gauge_transform,
    indicator,
    interface_mask,
    interface_unitary_w,
    projection_from_flux,
    translate_operator,
    translation_valid_mask,
    translations,
)
from .operators import (
    HamiltonianSpec,
    corner_example_family,
    harper_hamiltonian,
    pump_family,
)
from .spectral import (
    GapWindow,
    SpectralError,
    common_gaps,
    detect_common_gap,
    eig,
    fermi_projection,
    spectrum_rows,
)

EXPERIMENTS = ("identities", "lemma44", "bulk-interface", "robustness", "butterfly", "corner",
               "pump", "spectrum")
QUARTER_EXPERIMENTS = ("lemma44", "bulk-interface", "robustness", "spectrum")

DEFAULT_TOLERANCES = {
    "identity": 1e-10,
    "lemma44": 1e-6,
    "winding": 0.1,
    "current_identity": 0.05,
    "chern": 0.05,
    "robustness": 0.05,
    "corner_spectrum": 1e-10,
    "fredholm": 1e-3,
    "pump_relation": 0.15,
    "pump_oracle": 0.1,
    "touching": 1e-6,
}


def parse_flux(value) -> Fraction | float:
    """A field value in units of 2*pi: exact Fraction from "p/q" strings or integers."""
    if isinstance(value, str):
        return Fraction(value.replace(" ", ""))
    if isinstance(value, int):
        return Fraction(value)
    return float(value)


def flux_str(value) -> str | float:
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}" if value.denominator != 1 else str(value.numerator)
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """All parameters of one experiment run.  Field values are in units of 2*pi."""

    name: str = "bulk-interface"
    b_corner: Fraction | float = Fraction(1, 3)
    b_star: Fraction | float = Fraction(1, 5)
    L: int = 64
    corner_offset: int | None = None
    corner_margin: int = 6
    edge_margin: int = 6
    chern_L: int = 48
    convergence_step: int = 8
    gap: str | tuple[float, float] = "auto"
    gap_choice: str = "lowest"
    gap_threshold: float = 0.05
    star_potential: float = 0.0
    vacuum_potential: float = 8.0
    t_grid: int = 101
    perturbation: dict = field(default_factory=lambda: {"kind": "none"})
    n_pairs: int = 20
    q_max: int = 20
    q_pairs: int = 6
    chain_length: int = 60
    delta0: float = 0.6
    extra_checks: bool = False
    out_dir: str | None = None
    seed: int = 0
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ConfigError(f"$.name: unknown experiment {self.name!r}; expected one of {EXPERIMENTS}")
        object.__setattr__(self, "b_corner", parse_flux(self.b_corner))
        object.__setattr__(self, "b_star", parse_flux(self.b_star))
        if isinstance(self.gap, list):
            object.__setattr__(self, "gap", tuple(float(x) for x in self.gap))
        if isinstance(self.gap, tuple) and not self.gap[0] < self.gap[1]:
            raise ConfigError("$.gap: need lo < hi")
        for key in self.tolerances:
            if key not in DEFAULT_TOLERANCES:
                raise ConfigError(f"$.tolerances.{key}: unknown tolerance")
        if self.name in QUARTER_EXPERIMENTS and self.is_degenerate():
            raise ConfigError("$.b_corner: b_corner - b_star must not lie in 2*pi*Z "
                              "(nondegeneracy of the quarter-plane field)")

    # -- derived ----------------------------------------------------------
    def is_degenerate(self) -> bool:
        d = float(self.b_corner) - float(self.b_star)
        return abs(d - round(d)) < 1e-12

    @property
    def b_corner_rad(self) -> float:
        return TWO_PI * float(self.b_corner)

    @property
    def b_star_rad(self) -> float:
        return TWO_PI * float(self.b_star)

    def tol(self, key: str) -> float:
        return float(self.tolerances.get(key, DEFAULT_TOLERANCES[key]))

    def field(self, check: bool = True) -> MagneticField:
        return MagneticField(self.b_corner_rad, self.b_star_rad, check_nondegenerate=check)

    def window(self, size: int | None = None) -> LatticeWindow:
        size = self.L if size is None else size
        off = self.corner_offset if self.corner_offset is not None else default_corner_offset(size)
        return LatticeWindow.square(size, off)

    # -- (de)serialisation --------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["b_corner"] = flux_str(self.b_corner)
        d["b_star"] = flux_str(self.b_star)
        d["gap"] = self.gap if self.gap == "auto" else list(self.gap)
        return d

    @classmethod
    def from_dict(cls, data: dict, name: str | None = None) -> "ExperimentConfig":
        validate_config_dict(data)
        data = dict(data)
        if name is not None:
            if "name" in data and data["name"] != name:
                raise ConfigError(f"$.name: config is for {data['name']!r}, not {name!r}")
            data["name"] = name
        base = defaults(data.get("name", cls.name))
        known = {f.name for f in fields(cls)}
        return replace(base, **{k: v for k, v in data.items() if k in known})


def default_corner_offset(size: int) -> int:
    """Rows/columns with n <= 0; 3/8 of the window keeps both b_star regions deep."""
    return (3 * size) // 8


_DEFAULTS = {
    "identities": dict(L=24),
    "lemma44": dict(L=32, corner_offset=8, corner_margin=4, edge_margin=3),
    "bulk-interface": dict(),
    "robustness": dict(perturbation={"kind": "corner_block", "size": 3,
                                     "amplitude": math.pi / 4}, convergence_step=0),
    "butterfly": dict(),
    "corner": dict(L=12, t_grid=101),
    "pump": dict(t_grid=201),
    "spectrum": dict(L=32),
}


def defaults(name: str) -> ExperimentConfig:
    if name not in _DEFAULTS:
        raise ConfigError(f"$.name: unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    return ExperimentConfig(name=name, **_DEFAULTS[name])


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class Verdict:
    experiment: str
    status: str  # pass | fail | skip
    reports: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    runtime_s: float = 0.0

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "status": self.status,
                "reports": [r.to_dict() for r in self.reports],
                "checks": [asdict(c) for c in self.checks],
                "diagnostics": list(self.diagnostics), "runtime_s": self.runtime_s}

    def report(self, name: str) -> InvariantReport:
        for r in self.reports:
            if r.name == name:
                return r
        raise KeyError(name)


def _finish(name: str, checks: list, reports: list, t0: float, diagnostics=None,
            tables=None) -> Verdict:
    status = "pass" if all(c.passed for c in checks) else "fail"
    return Verdict(name, status, reports, checks, list(diagnostics or []), dict(tables or {}),
                   time.perf_counter() - t0)


def _skip(name: str, t0: float, why: str, reports=None) -> Verdict:
    return Verdict(name, "skip", list(reports or []), [], [why], {}, time.perf_counter() - t0)


def _rational(x) -> tuple[int, int] | None:
    if isinstance(x, Fraction):
        return x.numerator, x.denominator
    f = Fraction(x).limit_denominator(1000)
    return (f.numerator, f.denominator) if abs(float(f) - x) < 1e-12 else None


# -- identities -------------------------------------------------------------

def identity_residuals(b_corner: float, b_star: float, window: LatticeWindow,
                       rng: np.random.Generator, spectrum: bool = True) -> dict:
    """Residuals of the exact finite identities for one field pair (radians).

    ``spectrum`` adds the (slower) check that a random gauge change leaves
    the Harper spectrum unchanged.
    """
    fld = MagneticField(b_corner, b_star)
    out = {"commutation": commutator_residual(fld, window)}
    gauge = build_gauge(fld, window)
    inner = [n for n in window.sites() if n[0] > window.n1_min and n[1] > window.n2_min]
    out["circulation"] = max(abs(circulation(gauge, n) - fld.sample(*n)) for n in inner)
    valid = translation_valid_mask(window, (-1, -1))
    for g2 in ((-1, 0), (0, -1)):
        valid &= translation_valid_mask(window, g2)
    block = np.ix_(valid, valid)
    proj = 0.0
    ops = {}
    for which, kind in (("r0", "R"), ("u0", "U"), ("q0", "Q")):
        ops[which] = projection_from_flux(window, fld, which).matrix
        proj = max(proj, float(np.abs((ops[which] - np.diag(indicator(window, kind)))[block]).max()))
    out["projection_from_flux"] = proj
    # q0^perp from the translated flux operator alone: (e^{ib_c} - F) / (e^{ib_c} - e^{ib_s})
    shifted = translate_operator(flux_operator(fld, window), (-1, -1), fld).matrix
    qperp = (np.exp(1j * b_corner) * np.eye(window.dimension) - shifted) / (
        np.exp(1j * b_corner) - np.exp(1j * b_star))
    comp = np.abs((ops["q0"] + qperp - np.eye(window.dimension))[block]).max()
    comp = max(comp, np.abs((qperp - np.diag(indicator(window, "Qc")))[block]).max())
    out["q0_complement"] = float(comp)
    s1, s2 = translations(fld, window)
    w = interface_unitary_w(window, fld, s1, s2).matrix
    inner_mask = window.interior_mask(2)
    one = np.eye(int(inner_mask.sum()))
    wi = w[:, inner_mask]
    out["w_unitarity"] = max(float(np.abs(wi.conj().T @ wi - one).max()),
                             float(np.abs((w @ w.conj().T)[np.ix_(inner_mask, inner_mask)] - one).max()))
    # gauge covariance: the algebra relation and the spectrum survive a random gauge change
    g = rng.uniform(-math.pi, math.pi, window.dimension)
    s1g, s2g = gauge_transform(s1, g).matrix, gauge_transform(s2, g).matrix
    group = s1g @ s2g @ s1g.conj().T @ s2g.conj().T - flux_operator(fld, window).matrix
    cov = float(np.abs(group[np.ix_(inner_mask, inner_mask)]).max())
    if spectrum:
        h = harper_hamiltonian(HamiltonianSpec(fld, window))
        hg = gauge_transform(h, g)
        cov = max(cov, float(np.abs(np.linalg.eigvalsh(h.matrix) - np.linalg.eigvalsh(hg.matrix)).max()))
    out["gauge_covariance"] = cov
    return out


def random_admissible_pair(rng: np.random.Generator) -> tuple[float, float]:
    while True:
        bc, bs = rng.uniform(-math.pi, math.pi, 2)
        k = (bc - bs) / TWO_PI
        if abs(k - round(k)) > 1e-3:
            return float(bc), float(bs)


def exp_identities(cfg: ExperimentConfig) -> Verdict:
    t0 = time.perf_counter()
    window = LatticeWindow.square(cfg.L)
    rng = np.random.default_rng(cfg.seed)
    tol = cfg.tol("identity")
    try:
        pairs = [(cfg.b_corner_rad, cfg.b_star_rad)]
        MagneticField(*pairs[0])
    except DegenerateFieldError as exc:
        return _finish(cfg.name, [Check("nondegenerate_field", False, str(exc))], [], t0,
                       diagnostics=[str(exc)])
    pairs += [random_admissible_pair(rng) for _ in range(cfg.n_pairs)]
    worst: dict[str, float] = {}
    rows = []
    for k, (bc, bs) in enumerate(pairs):
        res = identity_residuals(bc, bs, window, rng, spectrum=k == 0)
        rows.append((k, bc, bs, *[res[key] for key in sorted(res)]))
        for key, val in res.items():
            worst[key] = max(worst.get(key, 0.0), val)
    reports = [InvariantReport(f"max_residual_{key}", val, window=window.to_dict())
               for key, val in sorted(worst.items())]
    checks = [Check(key, val < tol, f"{val:.3g} < {tol:g}") for key, val in sorted(worst.items())]
    header = ("pair", "b_corner", "b_star", *sorted(worst))
    return _finish(cfg.name, checks, reports, t0, tables={"identities_pairs": (header, rows)})


# -- Lemma 4.4 -----------------------------------------------------------------

def lemma44_values(cfg: ExperimentConfig, size: int | None = None,
                   unitary: str = "w") -> tuple[float, float, TraceWindow, TraceWindow]:
    window = cfg.window(size)
    fld = cfg.field()
    if unitary == "w":
        u = interface_unitary_w(window, fld)
    else:
        from .lattice import identity
        u = identity(window)
    tws = [default_trace_window(window, d, cfg.corner_margin, cfg.edge_margin) for d in (1, 2)]
    vals = [winding_number(u, tw).value for tw in tws]
    return vals[0], vals[1], tws[0], tws[1]


def exp_lemma44(cfg: ExperimentConfig) -> Verdict:
    t0 = time.perf_counter()
    tol = cfg.tol("lemma44")
    window = cfg.window()
    w1, w2, tw1, tw2 = lemma44_values(cfg)
    reports = [InvariantReport("W1(w)", w1, window={**tw1.to_dict(), **window.to_dict()}),
               InvariantReport("W2(w)", w2, window={**tw2.to_dict(), **window.to_dict()})]
    checks = [Check("W1(w)=+1", abs(w1 - 1) < tol, f"{w1:.12g}"),
              Check("W2(w)=-1", abs(w2 + 1) < tol, f"{w2:.12g}")]
    if cfg.convergence_step:
        v1, v2, _, _ = lemma44_values(cfg, cfg.L + cfg.convergence_step)
        reports[0].convergence_estimate = abs(v1 - w1)
        reports[1].convergence_estimate = abs(v2 + 0 - w2)
    # the corner-including range shows the finite corner term (diagnostic only)
    u = interface_unitary_w(window, cfg.field())
    corner_tw = TraceWindow(1, 0, tw1.b, tw1.c, tw1.d)
    wc = winding_number(u, corner_tw).value
    reports.append(InvariantReport("W1(w)_with_corner", wc,
                                   window={**corner_tw.to_dict(), **window.to_dict()}))
    diags = [f"trace range including the corner gives W1 = {wc:.12g} "
             f"(corner term {wc * corner_tw.length - tw1.length * w1 - (corner_tw.length - tw1.length):.3g})"]
    i1, i2, _, _ = lemma44_values(cfg, unitary="one")
    reports.append(InvariantReport("W1(1)", i1))
    reports.append(InvariantReport("W2(1)", i2))
    checks.append(Check("W(1)=0", abs(i1) < tol and abs(i2) < tol, f"({i1:.3g}, {i2:.3g})"))
    return _finish(cfg.name, checks, reports, t0, diagnostics=diags)


# -- bulk–interface ----------------------------------------------------------

def central_region(window: LatticeWindow, size: int = 4) -> np.ndarray:
    """The central size x size block of a window (deep-interior trace region)."""
    n1, n2 = window.coords()
    c1 = window.n1_min + (window.width - size) // 2
    c2 = window.n2_min + (window.height - size) // 2
    return (n1 >= c1) & (n1 < c1 + size) & (n2 >= c2) & (n2 < c2 + size)


def bulk_window(size: int) -> LatticeWindow:
    return LatticeWindow(0, size - 1, 0, size - 1)


def bulk_operator(b: float, size: int, potential: float = 0.0):
    """Constant-field Harper operator (+ uniform potential) on an open size x size window."""
    kind = "bulk_star" if potential else "bulk_corner"
    return harper_hamiltonian(HamiltonianSpec(MagneticField.constant(b), bulk_window(size), kind,
                                              star_potential=potential))


def oracle_gap_chern(flux, mu: float, potential: float = 0.0) -> int | None:
    """Oracle Chern number of the Fermi projection at mu, or None if unavailable."""
    pq = _rational(flux)
    if pq is None:
        return None
    p, q = pq
    p %= q
    bands = harper_bands(p, q) + potential
    below = bands[:, 1] < mu
    if np.any((bands[:, 0] <= mu) & (bands[:, 1] >= mu)):
        raise SpectralError(f"mu={mu:.6g} lies inside a Bloch band of flux {p}/{q}")
    r = int(below.sum())
    if r in (0, q):
        return 0
    groups = band_groups(bands - potential)
    if any(g[0] < r <= g[-1] for g in groups):
        raise SpectralError(f"mu={mu:.6g} sits between touching bands of flux {p}/{q}")
    return chern_bloch_oracle((p, q), range(r))


@dataclass
class BulkData:
    gap: GapWindow
    chern_corner: InvariantReport
    chern_star: InvariantReport
    oracle_corner: int | None
    oracle_star: int | None


def bulk_stage(cfg: ExperimentConfig, size: int | None = None) -> BulkData:
    """Bulk Chern numbers (real space + oracle) and the common gap."""
    size = cfg.chern_L if size is None else size
    h_c = bulk_operator(cfg.b_corner_rad, size)
    h_s = bulk_operator(cfg.b_star_rad, size, cfg.star_potential)
    es_c, es_s = eig(h_c), eig(h_s)
    del h_c, h_s
    candidate = (-math.inf, math.inf) if cfg.gap == "auto" else cfg.gap
    gap = detect_common_gap(es_c, es_s, candidate, cfg.gap_threshold, choose=cfg.gap_choice)
    region = central_region(bulk_window(size))
    ch_c = chern_real_space(fermi_projection(es_c, gap.mu), region, "Ch_corner")
    ch_s = chern_real_space(fermi_projection(es_s, gap.mu), region, "Ch_star")
    return BulkData(gap, ch_c, ch_s,
                    oracle_gap_chern(cfg.b_corner, gap.mu),
                    oracle_gap_chern(cfg.b_star, gap.mu, cfg.star_potential))


def interface_stage(cfg: ExperimentConfig, gap: GapWindow, size: int | None = None,
                    fld: MagneticField | None = None) -> list[InvariantReport]:
    """Windings W1, W2 of u_Delta and currents J1, J2 on the quarter system."""
    window = cfg.window(size)
    fld = fld if fld is not None else cfg.field()
    h = harper_hamiltonian(HamiltonianSpec(fld, window, "quarter", star_potential=cfg.star_potential))
    es = eig(h)
    out = []
    for d in (1, 2):
        tw = default_trace_window(window, d, cfg.corner_margin, cfg.edge_margin)
        j = interface_current(h, gap, tw, es=es, tol=cfg.tol("current_identity"), name=f"J{d}")
        out.append(InvariantReport(f"W{d}", j.extra["winding"], window=j.window))
        out.append(j)
    return out


def _with_convergence(cfg, base: list[InvariantReport], grown: list[InvariantReport]) -> None:
    for a, b in zip(base, grown):
        a.convergence_estimate = abs(b.value - a.value)
        a.extra[f"value_at_L{cfg.L + cfg.convergence_step}"] = b.value


def _tag(report: InvariantReport, prefix: str) -> InvariantReport:
    if prefix:
        report.name = f"{prefix}{report.name}"
    return report


def bulk_interface_part(cfg: ExperimentConfig, prefix: str = ""):
    """Checks and reports for one field pair; raises SpectralError without a common gap."""
    bulk = bulk_stage(cfg)
    tol_c, tol_w, tol_j = cfg.tol("chern"), cfg.tol("winding"), cfg.tol("current_identity")
    reports = [bulk.chern_corner, bulk.chern_star,
               InvariantReport("gap_lo", bulk.gap.lo), InvariantReport("gap_hi", bulk.gap.hi)]
    checks = []
    diags = [f"{prefix}common gap ({bulk.gap.lo:.6g}, {bulk.gap.hi:.6g}), mu = {bulk.gap.mu:.6g}"]
    targets = []
    for rep, orc in ((bulk.chern_corner, bulk.oracle_corner), (bulk.chern_star, bulk.oracle_star)):
        if orc is None:
            diags.append(f"{prefix}{rep.name}: irrational flux, integer target from real space")
            orc = int(round(rep.value))
        rep.extra["oracle"] = orc
        checks.append(Check(f"{prefix}{rep.name}~oracle", abs(rep.value - orc) < tol_c,
                            f"{rep.value:.6g} vs {orc}"))
        targets.append(orc)
    delta = targets[0] - targets[1]
    iface = interface_stage(cfg, bulk.gap)
    w1, j1, w2, j2 = iface
    checks.append(Check(f"{prefix}W1=Ch_corner-Ch_star", abs(w1.value - delta) < tol_w,
                        f"{w1.value:.6g} vs {delta}"))
    checks.append(Check(f"{prefix}W2=-(Ch_corner-Ch_star)", abs(w2.value + delta) < tol_w,
                        f"{w2.value:.6g} vs {-delta}"))
    for j in (j1, j2):
        checks.append(Check(f"{prefix}{j.name}=-W/2pi", j.extra["difference"] < tol_j,
                            f"{j.value:.6g} vs {j.extra['from_winding']:.6g}"))
    if cfg.convergence_step:
        size = cfg.L + cfg.convergence_step
        grown = interface_stage(cfg, bulk.gap, size)
        _with_convergence(cfg, iface, grown)
        ok = abs(grown[0].value - delta) < tol_w and abs(grown[2].value + delta) < tol_w
        checks.append(Check(f"{prefix}windings also within tolerance at L={size}", ok,
                            f"({grown[0].value:.6g}, {grown[2].value:.6g})"))
    reports += iface
    reports.append(InvariantReport("target_delta_chern", float(delta)))
    return checks, [_tag(r, prefix) for r in reports], diags


def exp_bulk_interface(cfg: ExperimentConfig) -> Verdict:
    """Winding = Chern difference on both faces; optionally repeated against a vacuum."""
    t0 = time.perf_counter()
    try:
        checks, reports, diags = bulk_interface_part(cfg)
    except SpectralError as exc:
        return _skip(cfg.name, t0, f"no admissible common gap: {exc}")
    if cfg.vacuum_potential:
        vac = replace(cfg, b_star=Fraction(0), star_potential=cfg.vacuum_potential)
        try:
            c, r, d = bulk_interface_part(vac, "vacuum_")
        except SpectralError as exc:
            diags.append(f"vacuum run skipped: {exc}")
        else:
            checks += c
            reports += r
            diags += d
    return _finish(cfg.name, checks, reports, t0, diagnostics=diags)


# -- robustness ---------------------------------------------------------------

def perturbation_sites(cfg: ExperimentConfig) -> dict:
    spec = dict(cfg.perturbation)
    kind = spec.get("kind", "none")
    if kind == "none":
        return {}
    size = int(spec.get("size", 3))
    amp = float(spec.get("amplitude", math.pi / 4))
    if "center" in spec:
        c = tuple(spec["center"])
    elif kind == "corner_block":
        c = (1, 1)
    else:
        w = cfg.window()
        c = ((w.n1_max + 1) // 2, (w.n2_max + 1) // 2)
    rng = np.random.default_rng(cfg.seed)
    half = size // 2
    sites = [(c[0] + i, c[1] + j) for j in range(-half, size - half) for i in range(-half, size - half)]
    return {s: float(v) for s, v in zip(sites, rng.uniform(-amp, amp, len(sites)))}


def exp_robustness(cfg: ExperimentConfig, baseline: Verdict | None = None) -> Verdict:
    """Windings with a compactly supported field perturbation vs the unperturbed run.

    ``baseline`` (a bulk-interface verdict with the same field and window) is
    reused when given; otherwise it is computed here.
    """
    t0 = time.perf_counter()
    try:
        bulk = bulk_stage(cfg)
    except SpectralError as exc:
        return _skip(cfg.name, t0, f"no admissible common gap: {exc}")
    if baseline is not None and baseline.status != "skip":
        base = [baseline.report(n) for n in ("W1", "J1", "W2", "J2")]
    else:
        base = interface_stage(cfg, bulk.gap)
    pert = perturbation_sites(cfg)
    fld = cfg.field().with_perturbation(pert)
    moved = interface_stage(cfg, bulk.gap, fld=fld)
    tol = cfg.tol("robustness")
    reports, checks = [], []
    for b, m in zip(base, moved):
        shift = abs(m.value - b.value)
        reports.append(InvariantReport(f"{m.name}_perturbed", m.value, m.imag_residual, m.window,
                                       extra={"baseline": b.value, "shift": shift}))
        if m.name.startswith("W"):
            checks.append(Check(f"|d{m.name}|<{tol}", shift < tol, f"{shift:.3g}"))
    diags = [f"perturbation on {len(pert)} sites: " +
             ", ".join(f"{k}:{v:.4f}" for k, v in sorted(pert.items()))]
    return _finish(cfg.name, checks, reports, t0, diagnostics=diags)


# -- butterfly ---------------------------------------------------------------

def fractions_up_to(q_max: int) -> list[tuple[int, int]]:
    out = [(0, 1)]
    for q in range(1, q_max + 1):
        out += [(p, q) for p in range(1, q + 1) if gcd(p, q) == 1]
    return sorted(out, key=lambda pq: (pq[0] / pq[1], pq[1]))


def butterfly_entry(p: int, q: int) -> tuple[np.ndarray, list[int | None]]:
    """Bands (q, 2) and the Chern label of the gap above each band (None if closed)."""
    p_red = p % q
    bands = harper_bands(p_red, q)
    groups = band_groups(bands)
    cherns = group_cherns(p_red, q, groups) if len(groups) > 1 else [0]
    labels: list[int | None] = [None] * q
    acc = 0
    for g, c in zip(groups[:-1], cherns[:-1]):
        acc += c
        labels[g[-1]] = acc
    return bands, labels


def exp_butterfly(cfg: ExperimentConfig) -> Verdict:
    t0 = time.perf_counter()
    rows = []
    data = {}
    tknn = True
    for p, q in fractions_up_to(cfg.q_max):
        bands, labels = butterfly_entry(p, q)
        data[(p, q)] = (bands, labels)
        for b in range(q):
            lab = labels[b]
            rows.append((p, q, b, float(bands[b, 0]), float(bands[b, 1]), "" if lab is None else lab))
            if lab is not None and q > 1:
                tknn &= tknn_ok(p, q, b + 1, lab)
    checks = []
    reports = []
    half = data.get((1, 2))
    if half is not None:
        touch = float(half[0][1, 0] - half[0][0, 1])
        at_zero = max(abs(half[0][0, 1]), abs(half[0][1, 0]))
        reports.append(InvariantReport("alpha_1/2_central_gap", touch))
        checks.append(Check("1/2 central bands touch at 0",
                            touch < cfg.tol("touching") and at_zero < cfg.tol("touching"),
                            f"gap {touch:.3g} at E={at_zero:.3g}"))
    third = data.get((1, 3))
    if third is not None:
        n_open = sum(lab is not None for lab in third[1][:-1])
        reports.append(InvariantReport("alpha_1/3_open_gaps", float(n_open)))
        checks.append(Check("1/3 has two open gaps", n_open == 2, str(third[1][:-1])))
    checks.append(Check("TKNN Diophantine labels", tknn))
    # admissible pairs for the bulk–interface experiment
    pair_rows = []
    small = [(p, q) for (p, q) in data if q <= cfg.q_pairs]
    for a in small:
        for b in small:
            if a == b or (a[0] * b[1] - b[0] * a[1]) % (a[1] * b[1]) == 0:
                continue
            ba, la = data[a]
            bb, lb = data[b]
            lo_all = min(ba.min(), bb.min())
            hi_all = max(ba.max(), bb.max())
            for lo, hi in common_gaps([ba.ravel(), bb.ravel()], lo_all, hi_all, cfg.gap_threshold):
                if lo <= lo_all or hi >= hi_all:
                    continue
                mu = 0.5 * (lo + hi)
                if np.any((ba[:, 0] < mu) & (ba[:, 1] > mu)) or np.any((bb[:, 0] < mu) & (bb[:, 1] > mu)):
                    continue
                ca = _label_at(ba, la, mu)
                cb = _label_at(bb, lb, mu)
                pair_rows.append((f"{a[0]}/{a[1]}", f"{b[0]}/{b[1]}", lo, hi, ca, cb, ca - cb))
    tables = {"butterfly": (("p", "q", "band_index", "e_min", "e_max", "gap_chern"), rows),
              "butterfly_pairs": (("alpha", "beta", "gap_lo", "gap_hi", "chern_alpha", "chern_beta",
                                   "delta_chern"),
                                  pair_rows)}
    reports.append(InvariantReport("fractions", float(len(data))))
    reports.append(InvariantReport("admissible_pairs", float(len(pair_rows))))
    return _finish(cfg.name, checks, reports, t0, tables=tables)


def _label_at(bands: np.ndarray, labels, mu: float) -> int:
    below = int((bands[:, 1] < mu).sum())
    if below in (0, len(bands)):
        return 0
    lab = labels[below - 1]
    return 0 if lab is None else lab


# -- corner example ------------------------------------------------------------

def local_unitary(window: LatticeWindow, blocks: int, seed: int, margin: int = 3) -> np.ndarray:
    """Random phases everywhere times a Haar unitary on the deep interior of the first block.

    Unlike a global random unitary it leaves the boundary sites (where a
    finite window breaks the periodicity of the corner family) unmixed.
    """
    rng = np.random.default_rng(seed)
    d = window.dimension * blocks
    inner = np.flatnonzero(window.interior_mask(margin))
    z = rng.normal(size=(inner.size, inner.size)) + 1j * rng.normal(size=(inner.size, inner.size))
    qm, r = np.linalg.qr(z)
    qm = qm * (np.diag(r) / np.abs(np.diag(r)))
    u = np.eye(d, dtype=complex)
    u[np.ix_(inner, inner)] = qm
    return np.exp(1j * rng.uniform(-math.pi, math.pi, d))[:, None] * u


def exp_corner(cfg: ExperimentConfig) -> Verdict:
    t0 = time.perf_counter()
    window = LatticeWindow.square(cfg.L)
    fam = corner_example_family(window, cfg.field(check=False), cfg.t_grid)
    tol = cfg.tol("corner_spectrum")
    spec_err = 0.0
    agc_ok = True
    min_gap = math.inf
    asym = fam.meta["asymptotic"]
    for t, op in fam.samples:
        ev = np.linalg.eigvalsh(op.matrix)
        mid = 1.0 - 2.0 * t
        target = np.array([-1.0, mid, 1.0])
        spec_err = max(spec_err, float(np.abs(ev[:, None] - target[None, :]).min(axis=1).max()),
                       float(np.abs(ev - mid).min()))
        h_u, h_r = asym(t)
        fr = fredholm_check(h_u, h_r, 0.0, cfg.tol("fredholm"), margin=0)
        agc_ok &= fr.is_fredholm
        min_gap = min(min_gap, fr.gap_U, fr.gap_R)
    sf = spectral_flow(fam, 0.0)
    sf_rev = spectral_flow(fam.reversed(), 0.0)
    sf_conj = spectral_flow(fam.conjugated(local_unitary(window, 2, cfg.seed)), 0.0)
    reports = [InvariantReport("sf", float(sf)), InvariantReport("sf_reversed", float(sf_rev)),
               InvariantReport("sf_conjugated", float(sf_conj)),
               InvariantReport("spectrum_error", spec_err),
               InvariantReport("agc_min_singular_value", min_gap),
               InvariantReport("periodicity_defect_interior", fam.periodicity_defect())]
    checks = [Check("sf=-1", sf == -1, str(sf)),
              Check("AGC at every sample", agc_ok, f"min singular value {min_gap:.3g}"),
              Check("spectrum {-1,1-2t,1}", spec_err < tol, f"{spec_err:.3g}"),
              Check("reversed sf=+1", sf_rev == 1, str(sf_rev)),
              Check("conjugated sf unchanged", sf_conj == sf, str(sf_conj))]
    return _finish(cfg.name, checks, reports, t0)


# -- pump ----------------------------------------------------------------------

def pump_masks(length: int) -> tuple[np.ndarray, np.ndarray]:
    """(left-end mask for the spectral flow, deep-interior region with an even site count)."""
    x = np.arange(1, length + 1)
    quarter = length // 4
    lo = quarter + 1 if quarter % 2 == 0 else quarter
    region = (x > lo - 1) & (x <= length - lo + 1)
    if region.sum() % 2:
        region &= x < length - lo + 1
    return x <= quarter, region


def exp_pump(cfg: ExperimentConfig) -> Verdict:
    t0 = time.perf_counter()
    fam = pump_family(cfg.chain_length, cfg.t_grid, cfg.delta0)
    left, region = pump_masks(cfg.chain_length)
    sf = spectral_flow(fam, 0.0, site_mask=left)
    dp = pump_polarization(fam, region)
    oracle = pump_chern_oracle(cfg.delta0)
    reports = [InvariantReport("sf_left_end", float(sf)), InvariantReport("delta_P", dp),
               InvariantReport("oracle_chern", float(oracle)),
               InvariantReport("sf_total_finite_chain", float(spectral_flow(fam, 0.0)))]
    checks = [Check("|dP+2pi sf|", abs(dp + TWO_PI * sf) < cfg.tol("pump_relation"),
                    f"{abs(dp + TWO_PI * sf):.3g}"),
              Check("sf=+-oracle", abs(sf) == abs(oracle) and oracle != 0, f"{sf} vs {oracle}"),
              Check("|dP|=2pi|oracle|", abs(abs(dp) - TWO_PI * abs(oracle)) < cfg.tol("pump_oracle"),
                    f"{dp:.6g}")]
    if cfg.extra_checks:
        triv = pump_family(cfg.chain_length, cfg.t_grid, cfg.delta0, static=True)
        sf_t, dp_t = spectral_flow(triv, 0.0, site_mask=left), pump_polarization(triv, region)
        reports += [InvariantReport("sf_trivial", float(sf_t)), InvariantReport("delta_P_trivial", dp_t)]
        checks.append(Check("trivial loop", sf_t == 0 and abs(dp_t) < 0.1, f"{sf_t}, {dp_t:.3g}"))
    return _finish(cfg.name, checks, reports, t0)


# -- spectrum ------------------------------------------------------------------

def exp_spectrum(cfg: ExperimentConfig) -> Verdict:
    t0 = time.perf_counter()
    window = cfg.window()
    h = harper_hamiltonian(HamiltonianSpec(cfg.field(), window, "quarter",
                                           star_potential=cfg.star_potential))
    es = eig(h)
    resid = float(np.abs(h.matrix @ es.vectors - es.vectors * es.values).max())
    rows = spectrum_rows(es, interface_mask(window))
    reports = [InvariantReport("eigen_residual", resid), InvariantReport("dimension", float(window.dimension))]
    checks = [Check("eigen residual", resid < 1e-9 * max(1.0, float(np.abs(es.values).max())),
                    f"{resid:.3g}")]
    return _finish(cfg.name, checks, reports, t0,
                   tables={"spectrum": (("index", "eigenvalue", "interface_weight", "boundary_weight"),
                                        rows)})


REGISTRY = {
    "identities": exp_identities,
    "lemma44": exp_lemma44,
    "bulk-interface": exp_bulk_interface,
    "robustness": exp_robustness,
    "butterfly": exp_butterfly,
    "corner": exp_corner,
    "pump": exp_pump,
    "spectrum": exp_spectrum,
}


def run(cfg: ExperimentConfig) -> Verdict:
    return REGISTRY[cfg.name](cfg)
