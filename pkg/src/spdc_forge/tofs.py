"""Time-of-flight spectrometry: forward simulation and inversion.

A dispersive fibre in each arm maps wavelength to arrival time, so a
two-dimensional histogram of (signal delay, idler delay) taken against the
pump clock is a stretched image of the JSI. Copies of that image repeat
along the diagonal at the laser repetition period.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import jsa
from .errors import ConfigError, NumericError

DEFAULT_BIN_PS = 80.0
DEFAULT_PERIOD_NS = 13.15
MIN_RESAMPLES = 30


@dataclass(frozen=True)
class DispersionUnit:
    """Dispersive delay line: t = insertion + D (lam - reference)."""

    d_ps_per_nm: float = -1350.0
    reference_nm: float = 1550.0
    insertion_ps: float = 0.0

    def __post_init__(self):
        if self.d_ps_per_nm == 0 or not math.isfinite(self.d_ps_per_nm):
            raise ConfigError("dispersion D must be finite and non-zero")

    def delay(self, lam_nm):
        return self.insertion_ps + self.d_ps_per_nm * (np.asarray(lam_nm, dtype=float) - self.reference_nm)

    def wavelength(self, t_ps):
        return self.reference_nm + (np.asarray(t_ps, dtype=float) - self.insertion_ps) / self.d_ps_per_nm

    def as_dict(self):
        return {"d_ps_per_nm": self.d_ps_per_nm, "reference_nm": self.reference_nm,
                "insertion_ps": self.insertion_ps}


@dataclass(frozen=True)
class JitterModel:
    contributions_ps: tuple = ()

    def __post_init__(self):
        if any(c < 0 for c in self.contributions_ps):
            raise ConfigError("jitter contributions must be non-negative")


def combined_jitter(model: JitterModel) -> float:
    """RMS jitter of independent contributions added in quadrature."""
    return float(math.sqrt(sum(c * c for c in model.contributions_ps)))


def wavelength_to_delay(d_lambda_nm, unit: DispersionUnit):
    return unit.d_ps_per_nm * np.asarray(d_lambda_nm, dtype=float)


def bin_resolution(unit: DispersionUnit, bin_ps: float = DEFAULT_BIN_PS) -> float:
    """Wavelength width (nm) covered by one time bin."""
    return bin_ps / abs(unit.d_ps_per_nm)


@dataclass
class DelayHistogram:
    """Coincidence counts binned in (signal delay, idler delay).

    Row index runs along the signal delay, column index along the idler delay;
    ``origin_ps`` is the lower edge of bin 0 on each axis.
    """

    counts: np.ndarray
    bin_ps: float
    origin_ps: tuple
    period_ns: float = DEFAULT_PERIOD_NS
    n_features: int = 1
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2:
            raise ConfigError("histogram counts must be a 2-D matrix")
        if np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
            raise ConfigError("histogram counts must be non-negative integers")
        if self.bin_ps <= 0:
            raise ConfigError("bin width must be positive")
        self.counts = c.astype(np.int64)
        self.origin_ps = (float(self.origin_ps[0]), float(self.origin_ps[1]))

    @property
    def shape(self):
        return self.counts.shape

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def centres(self, axis: int) -> np.ndarray:
        return self.origin_ps[axis] + (np.arange(self.counts.shape[axis]) + 0.5) * self.bin_ps

    def __add__(self, other: "DelayHistogram") -> "DelayHistogram":
        if (self.shape != other.shape or self.bin_ps != other.bin_ps
                or self.origin_ps != other.origin_ps):
            raise ConfigError("histograms with different binning cannot be merged")
        return DelayHistogram(self.counts + other.counts, self.bin_ps, self.origin_ps,
                              self.period_ns, self.n_features, dict(self.metadata))

    def to_files(self, csv_path):
        """Write the count matrix as CSV and the binning as a JSON sidecar."""
        csv_path = Path(csv_path)
        np.savetxt(csv_path, self.counts, fmt="%d", delimiter=",")
        meta = {"bin_ps": self.bin_ps, "origin_ps": list(self.origin_ps), "period_ns": self.period_ns,
                "n_features": self.n_features, "shape": list(self.shape), **self.metadata}
        csv_path.with_suffix(".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def from_files(cls, csv_path):
        csv_path = Path(csv_path)
        side = csv_path.with_suffix(".json")
        if not csv_path.is_file() or not side.is_file():
            raise ConfigError(f"histogram needs {csv_path.name} and {side.name}")
        counts = np.loadtxt(csv_path, delimiter=",", dtype=np.int64, ndmin=2)
        meta = json.loads(side.read_text())
        known = {k: meta.pop(k) for k in ("bin_ps", "origin_ps", "period_ns", "n_features")}
        meta.pop("shape", None)
        return cls(counts, known["bin_ps"], tuple(known["origin_ps"]), known["period_ns"],
                   known["n_features"], meta)


def _support(intensity):
    rows = np.flatnonzero(intensity.sum(axis=1) > 0)
    cols = np.flatnonzero(intensity.sum(axis=0) > 0)
    if rows.size == 0:
        raise NumericError("intensity matrix is empty")
    return rows[[0, -1]], cols[[0, -1]]


def _feature_extent(axis_nm, idx_range, unit, jitter_ps):
    step = abs(axis_nm[1] - axis_nm[0])
    lam = np.array([axis_nm[idx_range[0]] - step / 2, axis_nm[idx_range[1]] + step / 2])
    t = unit.delay(lam)
    return float(t.min() - 6 * jitter_ps), float(t.max() + 6 * jitter_ps)


def simulate_histogram(
    intensity,
    grid: jsa.FrequencyGrid,
    unit_s: DispersionUnit,
    unit_i: DispersionUnit,
    events: int,
    jitter_ps: float = 0.0,
    period_ns: float = DEFAULT_PERIOD_NS,
    n_features: int = 1,
    bin_ps: float = DEFAULT_BIN_PS,
    n_bins: int | None = 800,
    origin_ps=None,
    seed=None,
    chunk: int = 2_000_000,
) -> DelayHistogram:
    """Draw ``events`` coincidences from a JSI and bin their arrival delays.

    Each event picks a grid cell with probability proportional to the JSI
    (uniformly inside the cell), a feature k uniformly from ``n_features``
    (delay shift k * period on both arms) and independent Gaussian jitter per
    photon. With ``n_bins=None`` the histogram is sized to fit; otherwise a
    range that cannot hold every feature is an error.
    """
    p = np.asarray(intensity, dtype=float)
    if p.shape != grid.shape:
        raise ConfigError(f"intensity shape {p.shape} does not match grid {grid.shape}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ConfigError("intensity must be finite and non-negative")
    if events <= 0:
        raise ConfigError("event budget must be positive")
    if n_features < 1:
        raise ConfigError("need at least one feature")
    total = p.sum()
    if not total > 0:
        raise NumericError("intensity matrix is empty")
    p = (p / total).ravel()
    period_ps = period_ns * 1e3
    rs, ri = _support(p.reshape(grid.shape))
    es = _feature_extent(grid.signal_nm, rs, unit_s, jitter_ps)
    ei = _feature_extent(grid.idler_nm, ri, unit_i, jitter_ps)
    shift = (n_features - 1) * period_ps
    if n_bins is None:
        # also leave room for the reconstruction crop around each feature
        need_lo = (min(es[0], unit_s.insertion_ps - period_ps / 2), min(ei[0], unit_i.insertion_ps - period_ps / 2))
        need_hi = (max(es[1], unit_s.insertion_ps + period_ps / 2) + shift,
                   max(ei[1], unit_i.insertion_ps + period_ps / 2) + shift)
    else:
        need_lo = (es[0], ei[0])
        need_hi = (es[1] + shift, ei[1] + shift)
    if n_bins is None:
        origin = tuple(math.floor(lo / bin_ps) * bin_ps for lo in need_lo)
        nb = max(int(math.ceil((hi - o) / bin_ps)) for hi, o in zip(need_hi, origin)) + 1
    else:
        nb = int(n_bins)
        if origin_ps is None:
            # centre the span so the default crop window of each feature fits
            origin = tuple(
                math.floor(((lo + hi) / 2 - nb * bin_ps / 2) / bin_ps) * bin_ps
                for lo, hi in zip(need_lo, need_hi)
            )
        else:
            origin = (float(origin_ps[0]), float(origin_ps[1]))
        for ax, (lo, hi, o) in enumerate(zip(need_lo, need_hi, origin)):
            if lo < o or hi > o + nb * bin_ps:
                raise ConfigError(
                    f"histogram range [{o:.0f}, {o + nb * bin_ps:.0f}] ps on axis {ax} cannot hold "
                    f"all features: required span [{lo:.0f}, {hi:.0f}] ps "
                    f"({int(math.ceil((hi - lo) / bin_ps))} bins)"
                )
    rng = np.random.default_rng(seed)
    counts = np.zeros((nb, nb), dtype=np.int64)
    ns, ni = grid.shape
    ds = grid.signal_nm[1] - grid.signal_nm[0]
    di = grid.idler_nm[1] - grid.idler_nm[0]
    done = 0
    while done < events:
        m = min(chunk, events - done)
        cells = rng.choice(p.size, size=m, p=p)
        js, ji = np.divmod(cells, ni)
        lam_s = grid.signal_nm[js] + (rng.random(m) - 0.5) * ds
        lam_i = grid.idler_nm[ji] + (rng.random(m) - 0.5) * di
        k = rng.integers(0, n_features, size=m) * period_ps
        ts = unit_s.delay(lam_s) + k
        ti = unit_i.delay(lam_i) + k
        if jitter_ps > 0:
            ts += rng.normal(0.0, jitter_ps, m)
            ti += rng.normal(0.0, jitter_ps, m)
        bs = np.floor((ts - origin[0]) / bin_ps).astype(np.int64)
        bi = np.floor((ti - origin[1]) / bin_ps).astype(np.int64)
        ok = (bs >= 0) & (bs < nb) & (bi >= 0) & (bi < nb)
        if not ok.all():
            raise NumericError(f"{int((~ok).sum())} events fell outside the histogram; widen the range")
        np.add.at(counts, (bs, bi), 1)
        done += m
    meta = {"events": int(events), "jitter_ps": float(jitter_ps), "seed": seed,
            "unit_signal": unit_s.as_dict(), "unit_idler": unit_i.as_dict()}
    return DelayHistogram(counts, bin_ps, origin, period_ns, n_features, meta)


@dataclass(frozen=True)
class ReconstructedJsi:
    intensity: np.ndarray
    grid: jsa.FrequencyGrid
    counts: np.ndarray

    @property
    def purity(self) -> float:
        return jsa.purity_from_counts(self.intensity)


def reconstruct_jsi(hist: DelayHistogram, unit_s: DispersionUnit, unit_i: DispersionUnit,
                    feature: int = 0) -> ReconstructedJsi:
    """Crop feature ``feature`` and map its delay axes back to wavelength.

    The crop spans +-half a repetition period around the feature centre (the
    reference-wavelength delay plus ``feature`` periods). Features that do
    not fit inside the histogram are rejected.
    """
    if not 0 <= feature < max(hist.n_features, 1):
        raise ConfigError(f"feature {feature} not in histogram with {hist.n_features} features")
    period_ps = hist.period_ns * 1e3
    half = int(round(0.5 * period_ps / hist.bin_ps))
    sl = []
    for ax, unit in enumerate((unit_s, unit_i)):
        centre = unit.insertion_ps + feature * period_ps
        c_idx = int(math.floor((centre - hist.origin_ps[ax]) / hist.bin_ps))
        lo, hi = c_idx - half, c_idx + half
        if lo < 0 or hi > hist.counts.shape[ax]:
            raise ConfigError(
                f"feature {feature} is clipped by the histogram boundary on axis {ax} "
                f"(needs bins [{lo}, {hi}), have [0, {hist.counts.shape[ax]}))"
            )
        sl.append(slice(lo, hi))
    crop = hist.counts[sl[0], sl[1]]
    if crop.sum() == 0:
        raise NumericError(f"feature {feature} holds no counts")
    lam = []
    for ax, unit in enumerate((unit_s, unit_i)):
        t = hist.centres(ax)[sl[ax]] - feature * period_ps
        lam.append(unit.wavelength(t))
    # negative dispersion puts long wavelengths first; flip to ascending
    if lam[0][1] < lam[0][0]:
        crop = crop[::-1, :]
        lam[0] = lam[0][::-1]
    if lam[1][1] < lam[1][0]:
        crop = crop[:, ::-1]
        lam[1] = lam[1][::-1]
    pump = 1.0 / (1.0 / unit_s.reference_nm + 1.0 / unit_i.reference_nm)
    grid = jsa.FrequencyGrid(np.asarray(lam[0]), np.asarray(lam[1]), pump)
    crop = np.ascontiguousarray(crop)
    return ReconstructedJsi(crop / crop.sum(), grid, crop)


def mean_counts_per_bin(counts, floor=0.01) -> float:
    """Mean count over bins holding at least ``floor`` of the peak bin."""
    counts = np.asarray(counts, dtype=float)
    peak = counts.max()
    if peak <= 0:
        return 0.0
    return float(counts[counts >= floor * peak].mean())


def poisson_mean_field(counts, rank: int, iterations: int = 300) -> np.ndarray:
    """Rank-``rank`` Poisson maximum-likelihood estimate of the mean count matrix.

    KL-divergence non-negative factorisation with multiplicative updates.
    Unlike the raw counts, the fit does not pin low-rate tail bins to zero,
    which is what the noise bias of the purity is most sensitive to.
    """
    v = np.asarray(counts, dtype=float)
    n = v.sum()
    if not n > 0:
        raise NumericError("count matrix is empty")
    rng = np.random.default_rng(0)  # fixed start: the estimate is deterministic
    w = np.outer(v.sum(axis=1), np.ones(rank)) / n * (1.0 + 0.1 * rng.random((v.shape[0], rank)))
    h = np.outer(np.ones(rank), v.sum(axis=0)) / rank * (1.0 + 0.1 * rng.random((rank, v.shape[1])))
    for _ in range(iterations):
        q = v / np.maximum(w @ h, 1e-300)
        w *= (q @ h.T) / h.sum(axis=1)
        q = v / np.maximum(w @ h, 1e-300)
        h *= (w.T @ q) / w.sum(axis=0)[:, None]
    return w @ h


def default_rank(counts) -> int:
    k = 1.0 / jsa.purity_from_counts(counts)
    return int(min(12, max(3, math.ceil(3.0 * k))))


@dataclass(frozen=True)
class CorrectedPurity:
    raw: float
    corrected: float
    bias: float
    se: float
    resamples: int
    mean_field: str = "poisson-ml"
    rank: int | None = None

    def as_dict(self):
        return {"raw": self.raw, "corrected": self.corrected, "bias": self.bias, "se": self.se,
                "resamples": self.resamples, "mean_field": self.mean_field, "rank": self.rank}


def poisson_corrected_purity(counts, resamples: int = 100, seed=None, mean_field: str = "poisson-ml",
                             rank: int | None = None) -> CorrectedPurity:
    """Remove the Poisson-noise bias from the purity of sqrt(counts).

    A mean field is estimated from the counts, R Poisson resamples of it
    measure how much shot noise lowers the purity (delta = P(mean field)
    minus the mean resampled purity), and delta is added to the measured
    purity. ``mean_field="measured"`` uses the raw counts as the mean field;
    it underestimates the bias by roughly a quarter because empty tail bins
    stay empty under resampling. The default is a low-rank Poisson
    maximum-likelihood fit (see ``poisson_mean_field``).

    The standard error combines the shot-noise spread of one measurement
    (the resample spread s) with the error of delta: sqrt(s^2 + s^2/R).
    """
    counts = np.asarray(counts)
    if np.any(counts < 0):
        raise ConfigError("counts must be non-negative")
    if np.issubdtype(counts.dtype, np.floating) and not np.all(np.equal(np.mod(counts, 1), 0)):
        raise ConfigError("counts must be raw integers, not normalised intensities")
    if resamples < MIN_RESAMPLES:
        raise ConfigError(f"need at least {MIN_RESAMPLES} resamples for a stable correction")
    rng = np.random.default_rng(seed)
    raw = jsa.purity_from_counts(counts)
    if mean_field == "measured":
        lam, rank = counts.astype(float), None
    elif mean_field == "poisson-ml":
        rank = rank or default_rank(counts)
        lam = poisson_mean_field(counts, rank)
    else:
        raise ConfigError(f"unknown mean field {mean_field!r}")
    draws = np.array([jsa.purity_from_counts(rng.poisson(lam)) for _ in range(resamples)])
    bias = jsa.purity_from_counts(lam) - float(draws.mean())
    s = float(draws.std(ddof=1))
    return CorrectedPurity(raw, raw + bias, bias, math.sqrt(s * s + s * s / resamples), resamples,
                           mean_field, rank)


@dataclass
class PurityCurve:
    events: np.ndarray
    counts_per_bin: np.ndarray
    raw: np.ndarray
    corrected: np.ndarray | None = None
    se: np.ndarray | None = None

    def to_csv(self, path):
        cols = {"events": self.events, "counts_per_bin": self.counts_per_bin, "raw_purity": self.raw}
        if self.corrected is not None:
            cols["corrected_purity"] = self.corrected
            cols["corrected_se"] = self.se
        names = list(cols)
        arr = np.column_stack([np.asarray(cols[n], dtype=float) for n in names])
        np.savetxt(path, arr, delimiter=",", header=",".join(names), comments="", fmt="%.10g")


def purity_vs_counts(
    intensity,
    grid: jsa.FrequencyGrid,
    unit_s: DispersionUnit,
    unit_i: DispersionUnit,
    checkpoints,
    jitter_ps: float = 0.0,
    seed=None,
    correct: bool = False,
    resamples: int = 50,
    n_bins: int | None = None,
) -> PurityCurve:
    """Purity of the reconstructed JSI as events accumulate.

    ``checkpoints`` are cumulative event totals; increments are simulated
    from independent substreams of one seeded generator and summed, so the
    curve behaves like a growing acquisition.
    """
    marks = np.asarray(sorted(int(c) for c in checkpoints))
    if marks.size == 0 or marks[0] <= 0:
        raise ConfigError("checkpoints must be positive event totals")
    streams = np.random.SeedSequence(seed).spawn(2 * marks.size)
    hist = None
    prev = 0
    cpb, raw, cor, se = [], [], [], []
    for j, n in enumerate(marks):
        if n > prev:
            inc = simulate_histogram(intensity, grid, unit_s, unit_i, int(n - prev), jitter_ps,
                                     n_bins=n_bins, seed=streams[2 * j])
            hist = inc if hist is None else hist + inc
        prev = n
        rec = reconstruct_jsi(hist, unit_s, unit_i)
        cpb.append(mean_counts_per_bin(rec.counts))
        raw.append(jsa.purity_from_counts(rec.counts))
        if correct:
            c = poisson_corrected_purity(rec.counts, resamples, seed=streams[2 * j + 1])
            cor.append(c.corrected)
            se.append(c.se)
    return PurityCurve(marks, np.array(cpb), np.array(raw),
                       np.array(cor) if correct else None, np.array(se) if correct else None)
