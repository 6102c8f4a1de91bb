"""Purity sweeps and scalar optimisation of the pump.

Also hosts the pulse bookkeeping used to translate a measured pulse
duration into a GDD interval and a purity bound, and the grating-shaper
model that maps a grating-to-mirror displacement onto GDD.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.constants import c as C_LIGHT

from . import jsa, material, poling
from .errors import ConfigError, NumericError

TIME_BANDWIDTH_GAUSSIAN = 0.441


@dataclass
class SweepResult:
    parameter: str
    unit: str
    values: np.ndarray
    purities: np.ndarray
    optimum: float | None = None
    optimum_purity: float | None = None
    metadata: dict = field(default_factory=dict)

    def to_csv(self, path, extra: dict | None = None):
        cols = {self.parameter: self.values, "purity": self.purities}
        cols.update(extra or {})
        names = list(cols)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in zip(*(cols[n] for n in names)):
                w.writerow([repr(float(v)) for v in row])

    def summary(self) -> dict:
        return {
            "parameter": self.parameter, "unit": self.unit,
            "optimum": self.optimum, "optimum_purity": self.optimum_purity,
            **self.metadata,
        }


def _context(grid, crystal, model):
    return (
        grid or jsa.FrequencyGrid.symmetric(512),
        crystal or material.CrystalSpec(),
        model or material.load_material(),
    )


def matched_pump_width(sigma_mm: float, crystal=None, model=None) -> float:
    """Gaussian pump sigma (nm) that decorrelates a gaussian PMF of width sigma_mm.

    Uses the linearised mismatch dk = ks Ws + ki Wi: the JSA cross term
    vanishes when sigma_w^2 = -1 / (2 sigma^2 ks ki).
    """
    crystal = crystal or material.CrystalSpec()
    model = model or material.load_material()
    ng_p = material.group_index(model, crystal.axis_pump, crystal.lambda_pump_nm)
    ng_s = material.group_index(model, crystal.axis_signal, crystal.lambda_signal_nm)
    ng_i = material.group_index(model, crystal.axis_idler, crystal.lambda_idler_nm)
    ks = (ng_p - ng_s) / C_LIGHT
    ki = (ng_p - ng_i) / C_LIGHT
    if ks * ki >= 0:
        raise NumericError("group velocities do not straddle the pump: no decorrelating pump width")
    sig = sigma_mm * 1e-3
    sigma_w = math.sqrt(-1.0 / (2.0 * sig * sig * ks * ki))
    return jsa.angular_to_nm_width(sigma_w, crystal.lambda_pump_nm)


def purity_for(pump: jsa.PumpEnvelope, source, grid=None, crystal=None, model=None) -> float:
    grid, crystal, model = _context(grid, crystal, model)
    return jsa.purity(jsa.build_jsa(pump, source, grid, crystal, model, warn=False))


def optimize_pump_width(
    source,
    width_range=(0.2, 0.45),
    shape="gaussian",
    n_coarse=25,
    xtol_nm=1e-3,
    grid=None,
    crystal=None,
    model=None,
    gdd_ps2=0.0,
) -> SweepResult:
    """Coarse sweep of the pump width followed by golden-section refinement."""
    grid, crystal, model = _context(grid, crystal, model)
    lo, hi = (float(v) for v in width_range)
    if not 0 < lo < hi:
        raise ConfigError(f"bad pump width range {width_range}")
    base = jsa.PumpEnvelope(shape, crystal.lambda_pump_nm, lo, (gdd_ps2,) if gdd_ps2 else ())
    cache = {}

    def pur(w):
        w = float(w)
        if w not in cache:
            cache[w] = purity_for(base.with_width(w), source, grid, crystal, model)
        return cache[w]

    xs = np.linspace(lo, hi, n_coarse)
    ys = np.array([pur(x) for x in xs])
    k = int(np.argmax(ys))
    if k == 0 or k == len(xs) - 1:
        raise NumericError(
            f"no interior maximum in [{lo}, {hi}] nm (best at the {'lower' if k == 0 else 'upper'} edge)"
        )
    bracket = (xs[k - 1], xs[k], xs[k + 1])
    res = optimize.minimize_scalar(
        lambda w: -pur(w), bracket=bracket, method="golden",
        options={"xtol": xtol_nm / bracket[1]},
    )
    best_x, best_y = float(res.x), -float(res.fun)
    if best_y < ys[k]:
        best_x, best_y = float(xs[k]), float(ys[k])
    return SweepResult(
        parameter=f"{shape}_width", unit="nm", values=xs, purities=ys,
        optimum=best_x, optimum_purity=best_y,
        metadata={"grid": list(grid.shape), "source": _source_tag(source), "refine_evals": int(res.nfev)},
    )


def _source_tag(source) -> str:
    if isinstance(source, poling.DomainLayout):
        return f"layout:{source.generator}:{source.digest()}"
    return f"target:{source.kind}:{source.sigma_mm}"


GENERATOR_FUNCS = {
    "coherence": lambda t, mw: poling.engineer_coherence_length(t),
    "subcoherence-fixed": lambda t, mw: poling.engineer_subcoherence(t, mw, variable=False),
    "subcoherence-variable": lambda t, mw: poling.engineer_subcoherence(t, mw, variable=True),
    "ideal": lambda t, mw: t,
}


def make_source(ratio, generator="coherence", crystal=None, model=None, min_width_um=2.0):
    crystal = crystal or material.CrystalSpec()
    model = model or material.load_material()
    dk0 = material.design_mismatch(crystal, model)
    target = poling.NonlinearityTarget.gaussian(crystal.length_mm, dk0, ratio)
    try:
        return GENERATOR_FUNCS[generator](target, min_width_um)
    except KeyError:
        raise ConfigError(f"unknown generator {generator!r}") from None


def _sweep_point(args):
    r, generator, grid, crystal, model, span, n_coarse, min_width_um = args
    src = make_source(r, generator, crystal, model, min_width_um)
    guess = matched_pump_width(crystal.length_mm * r, crystal, model)
    res = optimize_pump_width(
        src, (guess * (1 - span), guess * (1 + span)), grid=grid, crystal=crystal,
        model=model, n_coarse=n_coarse,
    )
    return res.optimum_purity, res.optimum


def sweep_sigma_ratio(
    ratios,
    generator="coherence",
    grid=None,
    crystal=None,
    model=None,
    span=0.25,
    n_coarse=9,
    min_width_um=2.0,
    workers=1,
):
    """Maximum purity and optimal pump width as functions of sigma/L.

    The pump search window is centred on the analytically matched width for
    each ratio and spans +-``span`` of it. Points run in a process pool when
    ``workers > 1``. Returns (max-purity curve, optimal-width curve).
    """
    grid, crystal, model = _context(grid, crystal, model)
    ratios = np.asarray(sorted(float(r) for r in ratios))
    if np.any(ratios <= 0.05) or np.any(ratios >= 0.5):
        raise ConfigError("sigma/L must lie in (0.05, 0.5)")
    jobs = [(r, generator, grid, crystal, model, span, n_coarse, min_width_um) for r in ratios]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            points = list(pool.map(_sweep_point, jobs))
    else:
        points = [_sweep_point(j) for j in jobs]
    best_p = np.array([p for p, _ in points])
    best_w = np.array([w for _, w in points])
    k = int(np.argmax(best_p))
    meta = {"generator": generator, "grid": list(grid.shape)}
    return (
        SweepResult("sigma_ratio", "1", ratios, best_p, float(ratios[k]), float(best_p[k]), meta),
        SweepResult("sigma_ratio", "1", ratios, best_w, None, None, {**meta, "curve": "optimal_sigma_pef_nm"}),
    )


def purity_vs_fwhm(source, fwhm_values, grid=None, crystal=None, model=None, fit_window=0.02):
    """Purity against intensity FWHM of a flat-phase gaussian pump.

    A quadratic is fitted to the points within ``fit_window`` nm of the
    sampled optimum; its curvature (1/nm^2) goes into the metadata.
    """
    grid, crystal, model = _context(grid, crystal, model)
    fw = np.asarray(fwhm_values, dtype=float)
    ys = np.array([
        purity_for(jsa.PumpEnvelope.gaussian(f / jsa.FWHM_PER_SIGMA, crystal.lambda_pump_nm),
                   source, grid, crystal, model)
        for f in fw
    ])
    k = int(np.argmax(ys))
    near = np.abs(fw - fw[k]) <= fit_window
    meta = {"grid": list(grid.shape)}
    opt, opt_p = float(fw[k]), float(ys[k])
    if near.sum() >= 3:
        a, b, c0 = np.polyfit(fw[near] - fw[k], ys[near], 2)
        if a < 0:
            x0 = -b / (2 * a)
            opt, opt_p = float(fw[k] + x0), float(c0 - b * b / (4 * a))
        meta["curvature_per_nm2"] = float(2 * a)
    return SweepResult("fwhm", "nm", fw, ys, opt, max(opt_p, float(ys[k])), meta)


@dataclass(frozen=True)
class ShaperModel:
    """Folded 4f grating shaper; ``displacement_mm`` is the error in the 4f distance."""

    lines_per_mm: float = 2400.0
    centre_nm: float = 775.0
    focal_mm: float = 500.0
    displacement_mm: float = 0.0
    littrow: bool = True
    incidence_deg: float | None = None

    def __post_init__(self):
        if self.lines_per_mm <= 0 or self.focal_mm <= 0:
            raise ConfigError("line density and focal length must be positive")
        if abs(self.displacement_mm) >= self.focal_mm:
            raise ConfigError("|displacement| must be smaller than the focal length")
        if not self.littrow and self.incidence_deg is None:
            raise ConfigError("non-Littrow geometry needs an incidence angle")

    def diffraction_angle(self) -> float:
        period_nm = 1e6 / self.lines_per_mm
        if self.littrow:
            s = self.centre_nm / (2.0 * period_nm)
        else:
            s = self.centre_nm / period_nm - math.sin(math.radians(self.incidence_deg))
        if abs(s) >= 1.0:
            raise ConfigError("evanescent diffraction order (|sin theta_d| >= 1)")
        return math.asin(s)


def gdd_from_displacement(shaper: ShaperModel) -> float:
    """GDD (ps^2) = 2 D lam^3 / (2 pi c^2 d^2 cos^2 theta_d); odd in D."""
    theta = shaper.diffraction_angle()
    lam = shaper.centre_nm * 1e-9
    d = 1e-3 / shaper.lines_per_mm
    delta = shaper.displacement_mm * 1e-3
    gdd_s2 = 2.0 * delta * lam**3 / (2.0 * math.pi * C_LIGHT**2 * d**2 * math.cos(theta) ** 2)
    return gdd_s2 * 1e24


def displacement_from_gdd(gdd_ps2: float, shaper: ShaperModel | None = None) -> float:
    shaper = shaper or ShaperModel()
    unit = gdd_from_displacement(ShaperModel(
        shaper.lines_per_mm, shaper.centre_nm, shaper.focal_mm, 1.0, shaper.littrow, shaper.incidence_deg,
    ))
    return gdd_ps2 / unit


def stretched_duration(tau0_ps: float, gdd_ps2):
    """FWHM of a gaussian pulse after quadratic phase: tau0 sqrt(1 + (4 ln2 GDD/tau0^2)^2)."""
    if not tau0_ps > 0:
        raise ConfigError("transform-limited duration must be positive")
    g = np.asarray(gdd_ps2, dtype=float)
    out = tau0_ps * np.sqrt(1.0 + (4.0 * math.log(2.0) * g / tau0_ps**2) ** 2)
    return float(out) if out.ndim == 0 else out


def transform_limited_duration(fwhm_nm: float, centre_nm: float = 775.0, tbp=TIME_BANDWIDTH_GAUSSIAN):
    """Gaussian transform limit in ps from a spectral intensity FWHM."""
    dnu = C_LIGHT * fwhm_nm * 1e-9 / (centre_nm * 1e-9) ** 2
    return tbp / dnu * 1e12


def gdd_for_duration(tau_ps: float, tau0_ps: float) -> float:
    """|GDD| (ps^2) that stretches tau0 to tau; the inverse of ``stretched_duration``."""
    if tau_ps < tau0_ps:
        raise ConfigError(f"measured duration {tau_ps} ps is below the transform limit {tau0_ps} ps")
    return tau0_ps**2 / (4.0 * math.log(2.0)) * math.sqrt((tau_ps / tau0_ps) ** 2 - 1.0)


@dataclass(frozen=True)
class GddBound:
    gdd_ps2: float
    gdd_low_ps2: float
    gdd_high_ps2: float
    purity: float
    purity_low: float
    purity_high: float
    tau0_ps: float

    @property
    def intervals(self):
        """The two symmetric GDD intervals compatible with the measurement."""
        return ((-self.gdd_high_ps2, -self.gdd_low_ps2), (self.gdd_low_ps2, self.gdd_high_ps2))

    def as_dict(self):
        return {
            "gdd_ps2": self.gdd_ps2, "gdd_interval_ps2": [self.gdd_low_ps2, self.gdd_high_ps2],
            "purity": self.purity, "purity_interval": [self.purity_low, self.purity_high],
            "tau0_ps": self.tau0_ps,
        }


def purity_vs_gdd(source, gdd_values, sigma_pef_nm=0.321, grid=None, crystal=None, model=None):
    """Purity and stretched pulse duration against pump GDD at fixed bandwidth."""
    grid, crystal, model = _context(grid, crystal, model)
    g = np.asarray(gdd_values, dtype=float)
    pump = jsa.PumpEnvelope.gaussian(sigma_pef_nm, crystal.lambda_pump_nm)
    ys = np.array([purity_for(pump.with_gdd(v), source, grid, crystal, model) for v in g])
    tau0 = transform_limited_duration(pump.fwhm_nm, crystal.lambda_pump_nm)
    k = int(np.argmax(ys))
    res = SweepResult("gdd", "ps^2", g, ys, float(g[k]), float(ys[k]),
                      {"sigma_pef_nm": sigma_pef_nm, "tau0_ps": tau0, "grid": list(grid.shape)})
    res.metadata["duration_ps"] = stretched_duration(tau0, g).tolist()
    return res


def purity_bound_from_duration(
    source, tau_ps, tau_err_ps, sigma_pef_nm=0.321, tau0_ps=None, grid=None, crystal=None, model=None,
) -> GddBound:
    """Invert a measured pulse duration into GDD intervals and the purity they allow."""
    grid, crystal, model = _context(grid, crystal, model)
    pump = jsa.PumpEnvelope.gaussian(sigma_pef_nm, crystal.lambda_pump_nm)
    if tau0_ps is None:
        tau0_ps = transform_limited_duration(pump.fwhm_nm, crystal.lambda_pump_nm)
    g_mid = gdd_for_duration(tau_ps, tau0_ps)
    g_lo = gdd_for_duration(max(tau_ps - tau_err_ps, tau0_ps), tau0_ps)
    g_hi = gdd_for_duration(tau_ps + tau_err_ps, tau0_ps)

    def pur(g):
        return purity_for(pump.with_gdd(g), source, grid, crystal, model)

    return GddBound(g_mid, g_lo, g_hi, pur(g_mid), pur(g_hi), pur(g_lo), tau0_ps)


def save_summary(path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=float)


SHAPE_MATRIX_RANGES = {"constant": (0.04, 0.5), "gaussian": (0.1, 0.8)}


def shape_matrix(grid=None, crystal=None, model=None, ratio=1 / 6.04, n_coarse=19):
    """Width-optimised purity for every (nonlinearity profile, pump shape) pair.

    Returns a dict keyed by "<profile>x<pump>" holding the ``SweepResult``.
    """
    grid, crystal, model = _context(grid, crystal, model)
    dk0 = material.design_mismatch(crystal, model)
    out = {}
    for kind, rng in SHAPE_MATRIX_RANGES.items():
        if kind == "constant":
            target = poling.NonlinearityTarget.constant(crystal.length_mm, dk0)
        else:
            target = poling.NonlinearityTarget.gaussian(crystal.length_mm, dk0, ratio)
        for shape in ("sech", "gaussian"):
            out[f"{kind}x{shape}"] = optimize_pump_width(
                target, rng, shape=shape, n_coarse=n_coarse, grid=grid, crystal=crystal, model=model,
            )
    return out
