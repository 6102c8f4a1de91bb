"""Aperiodic domain layouts that track a target nonlinearity profile.

A layout is an ordered list of ferroelectric domains with signs +-1. Its
phase-matching function is computed exactly, domain by domain, so no
quadrature error enters the purity numbers downstream.

Domain synthesis follows the field-tracking idea: walk along the crystal
and pick each domain orientation so that the generated field at the design
mismatch stays as close as possible to the field an ideal (continuous)
nonlinearity profile would produce. The ideal field is scaled by the
quasi-phase-matching efficiency 2/pi, the fastest growth a +-1 structure
can sustain.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, special

from . import kernels
from .errors import ConfigError

GENERATORS = ("coherence", "subcoherence-fixed", "subcoherence-variable", "imported", "periodic")
QPM_EFFICIENCY = 2.0 / math.pi


@dataclass(frozen=True)
class NonlinearityTarget:
    """Ideal profile g_ideal(z) on [-L/2, L/2].

    ``gaussian`` is exp(-z^2 / (2 sigma^2)) truncated at the facets;
    ``constant`` is 1 everywhere. ``delta_k0`` is the design mismatch (rad/m).
    """

    kind: str
    length_mm: float
    delta_k0: float
    sigma_mm: float | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "constant"):
            raise ConfigError(f"unknown profile kind {self.kind!r}")
        if not self.length_mm > 0:
            raise ConfigError("crystal length must be positive")
        if self.kind == "gaussian" and not (self.sigma_mm and self.sigma_mm > 0):
            raise ConfigError("gaussian profile needs sigma_mm > 0")

    @classmethod
    def gaussian(cls, length_mm, delta_k0, sigma_ratio=1 / 6.04):
        return cls("gaussian", length_mm, delta_k0, sigma_mm=length_mm * sigma_ratio)

    @classmethod
    def constant(cls, length_mm, delta_k0):
        return cls("constant", length_mm, delta_k0)

    @property
    def coherence_length_um(self) -> float:
        if self.delta_k0 == 0:
            return math.inf
        return math.pi / abs(self.delta_k0) * 1e6

    def profile(self, z_mm):
        z = np.asarray(z_mm, dtype=float)
        if self.kind == "constant":
            return np.ones_like(z)
        return np.exp(-0.5 * (z / self.sigma_mm) ** 2)

    def cumulative(self, z_mm):
        """int_{-L/2}^{z} g_ideal dz' in mm, closed form."""
        z = np.asarray(z_mm, dtype=float)
        half = self.length_mm / 2.0
        if self.kind == "constant":
            return z + half
        s = self.sigma_mm * math.sqrt(2.0)
        return self.sigma_mm * math.sqrt(math.pi / 2.0) * (special.erf(z / s) + special.erf(half / s))

    def integral(self) -> float:
        return float(self.cumulative(self.length_mm / 2.0))


def target_field(target: NonlinearityTarget, z_mm, delta_k: float = 0.0):
    """A(z) = -i int_{-L/2}^{z} g_ideal(z') exp(i dk z') dz' in mm.

    ``delta_k`` (rad/m) is measured from the design point, so the default
    evaluates the field at perfect quasi-phase matching. That case, and the
    constant profile, use closed forms; a detuned gaussian is integrated
    adaptively.
    """
    z = np.asarray(z_mm, dtype=float)
    half = target.length_mm / 2.0
    if np.any(z < -half - 1e-12) or np.any(z > half + 1e-12):
        raise ConfigError(f"z outside crystal [-{half}, {half}] mm")
    if delta_k == 0.0:
        return -1j * target.cumulative(z)
    q = delta_k * 1e-3  # rad/mm
    if target.kind == "constant":
        return -(np.exp(1j * q * z) - np.exp(-1j * q * half)) / q

    def one(zz):
        re = integrate.quad(lambda t: target.profile(t) * math.cos(q * t), -half, zz, limit=200)[0]
        im = integrate.quad(lambda t: target.profile(t) * math.sin(q * t), -half, zz, limit=200)[0]
        return -1j * (re + 1j * im)

    out = np.array([one(float(v)) for v in np.ravel(z)], dtype=complex)
    return out.reshape(z.shape) if z.ndim else complex(out[0])


@dataclass(frozen=True)
class FieldTrace:
    """Target and achieved field amplitudes (mm) at the same z samples.

    ``actual`` is expressed in the target's frame: the raw field divided by
    the QPM efficiency and the constant phase of a quasi-phase-matched chain,
    so a perfect structure would give ``actual == target``.
    """

    z_mm: np.ndarray
    target: np.ndarray
    actual: np.ndarray

    def tracking_error(self) -> float:
        """max |actual - target| / max |target|."""
        return float(np.max(np.abs(self.actual - self.target)) / np.max(np.abs(self.target)))


@dataclass(frozen=True)
class DomainLayout:
    """Ordered domains: widths in um and signs +-1.

    Layouts produced by the generators live on a lattice of ``step_um``
    (``counts`` holds each width in steps), which enables the fast
    phasor-table PMF kernel. Imported layouts carry widths only.
    """

    widths_um: np.ndarray
    signs: np.ndarray
    length_mm: float
    min_width_um: float
    generator: str
    step_um: float | None = None
    counts: np.ndarray | None = None
    trace: FieldTrace | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        w = np.asarray(self.widths_um, dtype=float)
        s = np.asarray(self.signs)
        if w.ndim != 1 or w.shape != s.shape or w.size == 0:
            raise ConfigError("widths and signs must be equal-length 1-D sequences")
        if np.any(w <= 0):
            raise ConfigError("domain widths must be positive")
        if not np.all(np.isin(s, (-1, 1))):
            raise ConfigError("domain signs must be +-1")
        if self.generator not in GENERATORS:
            raise ConfigError(f"unknown generator tag {self.generator!r}")

    @property
    def n_domains(self) -> int:
        return int(np.asarray(self.widths_um).size)

    @property
    def total_um(self) -> float:
        return float(np.sum(self.widths_um))

    def boundaries_mm(self) -> np.ndarray:
        start = -self.length_mm / 2.0
        return start + np.concatenate(([0.0], np.cumsum(self.widths_um))) * 1e-3

    def sign_jumps(self) -> np.ndarray:
        """Coefficient of exp(i dk z_j) at each boundary: s_{j-1} - s_j."""
        s = np.asarray(self.signs, dtype=float)
        return np.concatenate(([0.0], s)) - np.concatenate((s, [0.0]))

    def flipped(self) -> "DomainLayout":
        return DomainLayout(
            widths_um=self.widths_um, signs=-np.asarray(self.signs), length_mm=self.length_mm,
            min_width_um=self.min_width_um, generator=self.generator, step_um=self.step_um,
            counts=self.counts,
        )

    def profile(self, z_mm):
        """Sign of the nonlinearity at positions z (0 outside the layout)."""
        edges = self.boundaries_mm()
        z = np.asarray(z_mm, dtype=float)
        idx = np.searchsorted(edges, z, side="right") - 1
        inside = (idx >= 0) & (idx < self.n_domains)
        out = np.zeros(z.shape)
        out[inside] = np.asarray(self.signs)[idx[inside]]
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.round(np.asarray(self.widths_um, dtype=float), 9).tobytes())
        h.update(np.asarray(self.signs, dtype=np.int8).tobytes())
        h.update(repr(self.length_mm).encode())
        return h.hexdigest()[:16]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "width_um", "sign"])
            for i, (wd, sg) in enumerate(zip(self.widths_um, self.signs)):
                w.writerow([i, repr(float(wd)), int(sg)])

    @classmethod
    def from_csv(cls, path, length_mm: float | None = None) -> "DomainLayout":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"layout file not found: {path}")
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(line for line in fh if not line.startswith("#"))
            missing = {"index", "width_um", "sign"} - set(reader.fieldnames or ())
            if missing:
                raise ConfigError(f"layout CSV lacks columns {sorted(missing)}")
            for row in reader:
                rows.append((int(row["index"]), float(row["width_um"]), int(row["sign"])))
        rows.sort()
        widths = np.array([r[1] for r in rows])
        signs = np.array([r[2] for r in rows], dtype=np.int8)
        if length_mm is None:
            length_mm = float(widths.sum()) * 1e-3
        return cls(widths, signs, float(length_mm), float(widths.min()), "imported")


def _tracking_frame(target: NonlinearityTarget) -> complex:
    """Complex factor mapping target-field units onto the lab-frame field (m)."""
    dk = target.delta_k0
    half = target.length_mm * 1e-3 / 2.0
    return QPM_EFFICIENCY * 1j * math.copysign(1.0, dk) * complex(math.cos(-dk * half), math.sin(-dk * half))


def _walk(target: NonlinearityTarget, step_um: float, min_run: int):
    """Run the sign-tracking walk on a uniform step lattice."""
    if target.delta_k0 == 0:
        raise ConfigError("design mismatch is zero: no poling required")
    L_um = target.length_mm * 1e3
    n = int(math.floor(L_um / step_um + 1e-9))
    if n < 1:
        raise ConfigError(
            f"domain width {step_um:.4g} um exceeds crystal length {L_um:.4g} um"
        )
    dk = target.delta_k0
    half_m = target.length_mm * 1e-3 / 2.0
    edges_m = -half_m + np.arange(n + 1) * step_um * 1e-6
    ph = np.exp(1j * dk * edges_m)
    deltas = -(ph[1:] - ph[:-1]) / dk
    frame = _tracking_frame(target)
    ends_mm = edges_m[1:] * 1e3
    ideal = target_field(target, ends_mm)  # mm
    targets = frame * ideal * 1e-3  # lab frame, m
    signs, fld = kernels.track_signs(deltas, targets, min_run)
    trace = FieldTrace(z_mm=ends_mm, target=ideal, actual=fld / frame * 1e3)
    return np.asarray(signs, dtype=np.int8), trace


def _runs(signs: np.ndarray):
    """Collapse a per-step sign array into (counts, signs) of maximal runs."""
    change = np.flatnonzero(np.diff(signs)) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [signs.size]))
    return (ends - starts).astype(np.int64), signs[starts].astype(np.int8)


def _from_steps(signs, step_um, min_width_um, target, generator, trace) -> DomainLayout:
    counts, run_signs = _runs(signs)
    return DomainLayout(
        widths_um=counts * step_um, signs=run_signs, length_mm=target.length_mm,
        min_width_um=min_width_um, generator=generator, step_um=step_um, counts=counts,
        trace=trace,
    )


def engineer_coherence_length(target: NonlinearityTarget) -> DomainLayout:
    """Greedy layout on a grid of coherence-length domains."""
    lc = target.coherence_length_um
    if lc > target.length_mm * 1e3:
        raise ConfigError(
            f"coherence length {lc:.4g} um exceeds crystal length {target.length_mm} mm"
        )
    signs, trace = _walk(target, lc, 1)
    return _from_steps(signs, lc, lc, target, "coherence", trace)


def engineer_subcoherence(
    target: NonlinearityTarget,
    min_width_um: float = 2.0,
    variable: bool = False,
    resolution_um: float | None = None,
) -> DomainLayout:
    """Layout with domains narrower than a coherence length.

    Fixed mode runs the greedy walk on ``min_width_um`` domains. Variable
    mode walks in steps of ``resolution_um`` (default min_width/20) and
    places a domain wall as soon as flipping lowers the tracking deviation,
    never leaving a domain shorter than ``min_width_um``.
    """
    if not min_width_um > 0:
        raise ConfigError("min_width_um must be positive")
    if not variable:
        signs, trace = _walk(target, min_width_um, 1)
        return _from_steps(signs, min_width_um, min_width_um, target, "subcoherence-fixed", trace)
    if resolution_um is None:
        resolution_um = min_width_um / 20.0
    min_run = int(round(min_width_um / resolution_um))
    if min_run < 1 or abs(min_run * resolution_um - min_width_um) > 1e-9 * min_width_um:
        raise ConfigError("min_width_um must be an integer multiple of resolution_um")
    signs, trace = _walk(target, resolution_um, min_run)
    counts, run_signs = _runs(signs)
    if counts.size > 1 and counts[-1] < min_run:
        # a short trailing domain is absorbed into its neighbour
        signs = signs.copy()
        signs[-counts[-1]:] = run_signs[-2]
    return _from_steps(signs, resolution_um, min_width_um, target, "subcoherence-variable", trace)


def periodic_layout(length_mm: float, delta_k0: float) -> DomainLayout:
    """Standard quasi-phase-matched layout: alternating coherence-length domains."""
    lc = math.pi / abs(delta_k0) * 1e6
    n = int(math.floor(length_mm * 1e3 / lc + 1e-9))
    signs = np.where(np.arange(n) % 2 == 0, 1, -1).astype(np.int8)
    counts = np.ones(n, dtype=np.int64)
    return DomainLayout(np.full(n, lc), signs, length_mm, lc, "periodic", step_um=lc, counts=counts)


def pmf_from_layout(layout: DomainLayout, delta_k):
    """phi(dk) = int g(z) exp(i dk z) dz over the layout (m), exact per domain."""
    dk = np.asarray(delta_k, dtype=float)
    coeff = layout.sign_jumps()
    if layout.counts is not None and layout.step_um is not None:
        idx = np.concatenate(([0], np.cumsum(layout.counts)))
        out = kernels.pmf_sum_lattice(
            dk.ravel(), -layout.length_mm * 1e-3 / 2.0, layout.step_um * 1e-6, idx, coeff
        )
    else:
        z = layout.boundaries_mm() * 1e-3
        out = kernels.pmf_sum(dk.ravel(), z, coeff)
    return out.reshape(dk.shape)


def pmf_ideal(target: NonlinearityTarget, delta_k):
    """Analytic transform of the truncated ideal profile (m), baseband dk.

    ``delta_k`` is the mismatch measured from the design point.
    """
    x = np.asarray(delta_k, dtype=float)
    L = target.length_mm * 1e-3
    if target.kind == "constant":
        return (L * np.sinc(x * L / (2.0 * math.pi))).astype(complex)
    sig = target.sigma_mm * 1e-3
    s2 = sig * math.sqrt(2.0)
    a = (L / 2.0) / s2
    b = sig * x / math.sqrt(2.0)
    # exp(-b^2) [erf(a - ib) + erf(a + ib)] written with the Faddeeva function,
    # which stays finite where erf of a complex argument overflows
    w = special.wofz(-b + 1j * a)
    term = np.exp(-b * b) - np.exp(-a * a - 2j * a * b) * w
    return sig * math.sqrt(math.pi / 2.0) * 2.0 * term.real + 0j


def overlap(a, b) -> float:
    """|<a, b>| / (|a| |b|) for sampled complex functions."""
    a = np.ravel(a)
    b = np.ravel(b)
    return float(abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)))
