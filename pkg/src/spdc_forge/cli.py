"""Command-line entry point: ``spdc-forge <group> <command>``.

Every run writes its CSV artefacts and a ``report.json`` under ``--out``.
Each file carries the hash of the effective configuration. Exit codes are
0 (success), 2 (configuration or usage error), 3 (numerical failure) and 4
(a reproduced result missed its acceptance tolerance).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, interference, jsa, kernels, material, optimizer, poling, tofs
from .errors import ConfigError, ForgeError, NumericError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ACCEPTANCE = 4

log = logging.getLogger("spdc_forge")

MODE_ALIASES = {
    "coherence": "coherence",
    "sub-fixed": "subcoherence-fixed",
    "sub-variable": "subcoherence-variable",
    "ideal": "ideal",
}

TABLE_I_COUNTS = (1386700, 1577124, 1593534, 1333374)  # C11, C22, C12, C21


# -- configuration ------------------------------------------------------------


@dataclass
class RunConfig:
    material: str | None = None
    crystal: dict = field(default_factory=dict)
    generator: str = "coherence"
    sigma_ratio: float = 1 / 6.04
    min_width_um: float = 2.0
    grid: dict = field(default_factory=lambda: {"n": 512, "half_width_nm": 4.0})
    pump: dict = field(default_factory=lambda: {"shape": "gaussian", "width_nm": 0.308, "gdd_ps2": 0.0})
    seed: int = 12345
    out: str = "out"
    fast: bool = False
    workers: int = 1

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(**doc)
        if cfg.material is not None and not Path(cfg.material).is_absolute():
            cfg.material = str((path.parent / cfg.material).resolve())
        return cfg

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self, command: dict | None = None) -> str:
        """Hash of everything that can change results (not the output dir or pool size)."""
        doc = self.as_dict()
        doc.pop("out")
        doc.pop("workers")
        if command:
            doc["command"] = command
        return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()[:16]

    # resolved objects
    def model(self) -> material.SellmeierModel:
        if self.material is not None and not Path(self.material).is_file():
            raise ConfigError(f"material file not found: {self.material}")
        return material.load_material(self.material)

    def crystal_spec(self) -> material.CrystalSpec:
        try:
            return material.CrystalSpec(**self.crystal)
        except TypeError as exc:
            raise ConfigError(f"bad crystal spec: {exc}") from None

    def frequency_grid(self, fast: bool | None = None) -> jsa.FrequencyGrid:
        fast = self.fast if fast is None else fast
        n = int(self.grid.get("n", 512))
        if fast:
            n = min(n, 256)
        pump_nm = self.crystal_spec().lambda_pump_nm
        return jsa.FrequencyGrid.symmetric(n, float(self.grid.get("half_width_nm", 4.0)), pump_nm)

    def pump_envelope(self) -> jsa.PumpEnvelope:
        gdd = float(self.pump.get("gdd_ps2", 0.0))
        return jsa.PumpEnvelope(self.pump.get("shape", "gaussian"), self.crystal_spec().lambda_pump_nm,
                                float(self.pump.get("width_nm", 0.308)), (gdd,) if gdd else ())

    def target(self) -> poling.NonlinearityTarget:
        spec = self.crystal_spec()
        dk0 = material.design_mismatch(spec, self.model())
        return poling.NonlinearityTarget.gaussian(spec.length_mm, dk0, self.sigma_ratio)


@dataclass
class Report:
    command: str
    config_hash: str
    seed: int
    results: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    wall_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks.values())

    def check(self, name, value, ok, expected):
        self.checks[name] = {"value": value, "expected": expected, "pass": bool(ok)}

    def as_dict(self):
        d = dataclasses.asdict(self)
        d["passed"] = self.passed
        return d


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    return str(obj)


class Outputs:
    """Writes artefacts into the output directory and stamps the config hash."""

    def __init__(self, directory, config_hash):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.hash = config_hash
        self.files = []

    def path(self, name) -> Path:
        return self.dir / name

    def stamp(self, path: Path):
        path = Path(path)
        body = path.read_text()
        path.write_text(f"# config_hash={self.hash}\n" + body)
        self.files.append(path.name)

    def sidecar(self, path: Path, payload: dict):
        payload = {"config_hash": self.hash, **payload}
        Path(path).write_text(json.dumps(payload, indent=2, default=_jsonable))
        self.files.append(Path(path).name)

    def curve(self, name, columns: dict):
        path = self.path(name)
        names = list(columns)
        arr = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
        np.savetxt(path, arr, delimiter=",", header=",".join(names), comments="", fmt="%.12g")
        self.stamp(path)
        return path

    def report(self, report: Report):
        report.files = list(self.files)
        path = self.path("report.json")
        path.write_text(json.dumps(report.as_dict(), indent=2, default=_jsonable))
        return path


# -- helpers ------------------------------------------------------------------


def _source(cfg: RunConfig, args) -> object:
    if getattr(args, "layout", None):
        return poling.DomainLayout.from_csv(args.layout, cfg.crystal_spec().length_mm)
    generator = MODE_ALIASES.get(getattr(args, "mode", None) or cfg.generator, cfg.generator)
    return optimizer.make_source(cfg.sigma_ratio, generator, cfg.crystal_spec(), cfg.model(), cfg.min_width_um)


def _ratio(value: float) -> float:
    """Accept sigma/L either as a fraction (<1) or as the divisor L/sigma."""
    return value if value < 1 else 1.0 / value


def _load_matrix(path, intensity: bool):
    mat, grid = jsa.load_matrix_csv(path)
    if intensity:
        return jsa.sqrt_jsi(np.real(mat), grid)
    return jsa.JointSpectrum.from_density(mat, grid)


# -- poling -------------------------------------------------------------------


def cmd_poling_engineer(cfg, args, out, rep):
    cfg.sigma_ratio = _ratio(args.sigma_ratio)
    cfg.min_width_um = args.min_width_um
    mode = MODE_ALIASES[args.mode]
    spec, model = cfg.crystal_spec(), cfg.model()
    layout = optimizer.make_source(cfg.sigma_ratio, mode, spec, model, cfg.min_width_um)
    path = out.path("layout.csv")
    layout.to_csv(path)
    out.stamp(path)
    tr = layout.trace
    if tr is not None:
        out.curve("field_trace.csv", {"z_mm": tr.z_mm, "target_re": tr.target.real, "target_im": tr.target.imag,
                                      "actual_re": tr.actual.real, "actual_im": tr.actual.imag})
    rep.results.update({
        "generator": layout.generator, "domains": layout.n_domains, "min_width_um": layout.min_width_um,
        "length_mm": layout.length_mm, "digest": layout.digest(),
        "tracking_error": tr.tracking_error() if tr is not None else None,
        "coherence_length_um": material.coherence_length(material.design_mismatch(spec, model)),
    })


# -- jsa ----------------------------------------------------------------------


def cmd_jsa_build(cfg, args, out, rep):
    if args.sigma_pef is not None:
        cfg.pump["width_nm"] = args.sigma_pef
    if args.gdd is not None:
        cfg.pump["gdd_ps2"] = args.gdd
    if args.shape:
        cfg.pump["shape"] = args.shape
    grid = cfg.frequency_grid()
    src = cfg.target() if args.ideal else _source(cfg, args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        js = jsa.build_jsa(cfg.pump_envelope(), src, grid, cfg.crystal_spec(), cfg.model())
    for w in caught:
        log.warning("%s", w.message)
    sch = jsa.schmidt(js)
    side = {**js.provenance, "seed": cfg.seed}
    for name, mat in (("jsa.csv", js.amplitude), ("jsi.csv", jsa.jsi(js))):
        path = out.path(name)
        jsa.save_matrix_csv(path, mat, grid)
        out.stamp(path)
    out.sidecar(out.path("jsa.json"), side)
    rep.results.update({"purity": sch.purity, "schmidt_number": sch.schmidt_number,
                        "leading_weights": sch.leading(5), "edge_fraction": js.provenance["edge_fraction"]})
    rep.provenance.update(side)


def cmd_jsa_purity(cfg, args, out, rep):
    js = _load_matrix(args.matrix, args.intensity)
    sch = jsa.schmidt(js)
    rep.results.update({"purity": sch.purity, "schmidt_number": sch.schmidt_number,
                        "leading_weights": sch.leading(5)})


def cmd_jsa_visibility(cfg, args, out, rep):
    a = _load_matrix(args.a, args.intensity)
    b = _load_matrix(args.b, args.intensity)
    rep.results["visibility"] = jsa.heralded_visibility(a, b, args.interfering)
    rep.results["purity_a"] = jsa.purity(a)
    rep.results["purity_b"] = jsa.purity(b)


# -- sweeps -------------------------------------------------------------------


def cmd_sweep_sigma_ratio(cfg, args, out, rep):
    ratios = [_ratio(r) for r in args.ratios]
    mode = MODE_ALIASES[args.mode]
    grid = cfg.frequency_grid()
    pur, wid = optimizer.sweep_sigma_ratio(ratios, mode, grid, cfg.crystal_spec(), cfg.model(),
                                           min_width_um=cfg.min_width_um, workers=cfg.workers)
    out.curve("sigma_ratio.csv", {"sigma_ratio": pur.values, "max_purity": pur.purities,
                                  "optimal_sigma_pef_nm": wid.purities})
    rep.results.update({"optimum": pur.optimum, "value": pur.optimum_purity, "grid": list(grid.shape),
                        "generator": mode, "tolerance_nm": 1e-3})


def cmd_sweep_pump_width(cfg, args, out, rep):
    grid = cfg.frequency_grid()
    res = optimizer.optimize_pump_width(_source(cfg, args), tuple(args.range), shape=args.shape,
                                        n_coarse=args.points, grid=grid, crystal=cfg.crystal_spec(),
                                        model=cfg.model())
    out.curve("pump_width.csv", {"width_nm": res.values, "purity": res.purities})
    rep.results.update({"optimum": res.optimum, "value": res.optimum_purity, "tolerance_nm": 1e-3,
                        "grid": list(grid.shape)})


def cmd_sweep_gdd(cfg, args, out, rep):
    grid = cfg.frequency_grid()
    g = np.linspace(args.range[0], args.range[1], args.points)
    src = _source(cfg, args)
    res = optimizer.purity_vs_gdd(src, g, args.sigma_pef, grid, cfg.crystal_spec(), cfg.model())
    out.curve("gdd.csv", {"gdd_ps2": g, "purity": res.purities, "duration_ps": res.metadata["duration_ps"]})
    rep.results.update({"optimum": res.optimum, "value": res.optimum_purity, "grid": list(grid.shape),
                        "tau0_ps": res.metadata["tau0_ps"]})
    if args.tau_ps is not None:
        b = optimizer.purity_bound_from_duration(src, args.tau_ps, args.tau_err_ps, args.sigma_pef,
                                                 args.tau0_ps, grid, cfg.crystal_spec(), cfg.model())
        rep.results["bound"] = b.as_dict()
        rep.results["gdd_intervals_ps2"] = b.intervals


def cmd_calibrate_shaper(cfg, args, out, rep):
    sh = optimizer.ShaperModel(args.lines_per_mm, args.centre_nm, args.focal_mm, args.delta_mm,
                               args.incidence_deg is None, args.incidence_deg)
    rep.results.update({"delta_mm": args.delta_mm, "gdd_ps2": optimizer.gdd_from_displacement(sh),
                        "diffraction_angle_deg": math.degrees(sh.diffraction_angle())})


# -- tofs ---------------------------------------------------------------------


def _units(args):
    u_s = tofs.DispersionUnit(args.d_signal, args.reference_nm, args.insertion_signal_ps)
    u_i = tofs.DispersionUnit(args.d_idler, args.reference_nm, args.insertion_idler_ps)
    return u_s, u_i


def _source_jsi(cfg, args):
    if getattr(args, "jsi", None):
        mat, grid = jsa.load_matrix_csv(args.jsi)
        return np.real(mat), grid
    grid = cfg.frequency_grid(fast=True)
    js = jsa.build_jsa(cfg.pump_envelope(), _source(cfg, args), grid, cfg.crystal_spec(), cfg.model(), warn=False)
    return jsa.jsi(js), grid


def _jitter(args):
    if args.jitter_components:
        return tofs.combined_jitter(tofs.JitterModel(tuple(args.jitter_components)))
    return args.jitter_ps


def cmd_tofs_simulate(cfg, args, out, rep):
    intensity, grid = _source_jsi(cfg, args)
    u_s, u_i = _units(args)
    hist = tofs.simulate_histogram(intensity, grid, u_s, u_i, args.events, _jitter(args), args.period_ns,
                                   args.features, args.bin_ps, args.bins, seed=cfg.seed)
    path = out.path("histogram.csv")
    hist.to_files(path)
    out.stamp(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    out.sidecar(path.with_suffix(".json"), meta)
    rep.results.update({"events": hist.total, "shape": list(hist.shape), "bin_ps": hist.bin_ps,
                        "resolution_nm": tofs.bin_resolution(u_s, hist.bin_ps),
                        "source_purity": jsa.purity_from_counts(intensity)})


def cmd_tofs_reconstruct(cfg, args, out, rep):
    hist = tofs.DelayHistogram.from_files(args.hist)
    u_s, u_i = _units(args)
    rec = tofs.reconstruct_jsi(hist, u_s, u_i, args.feature)
    path = out.path("jsi_reconstructed.csv")
    jsa.save_matrix_csv(path, rec.intensity, rec.grid)
    out.stamp(path)
    cpath = out.path("jsi_counts.csv")
    jsa.save_matrix_csv(cpath, rec.counts, rec.grid)
    out.stamp(cpath)
    rep.results.update({"feature": args.feature, "purity": rec.purity,
                        "counts_per_bin": tofs.mean_counts_per_bin(rec.counts), "shape": list(rec.counts.shape)})


def cmd_tofs_purity_curve(cfg, args, out, rep):
    intensity, grid = _source_jsi(cfg, args)
    u_s, u_i = _units(args)
    curve = tofs.purity_vs_counts(intensity, grid, u_s, u_i, args.checkpoints, _jitter(args), cfg.seed,
                                  correct=args.corrected, resamples=args.resamples)
    path = out.path("purity_curve.csv")
    curve.to_csv(path)
    out.stamp(path)
    rep.results.update({"source_purity": jsa.purity_from_counts(intensity), "raw": curve.raw,
                        "counts_per_bin": curve.counts_per_bin,
                        "corrected": curve.corrected, "se": curve.se})


def cmd_tofs_corrected_purity(cfg, args, out, rep):
    if args.hist:
        hist = tofs.DelayHistogram.from_files(args.hist)
        u_s, u_i = _units(args)
        counts = tofs.reconstruct_jsi(hist, u_s, u_i, args.feature).counts
    else:
        counts = np.rint(np.real(jsa.load_matrix_csv(args.counts)[0])).astype(np.int64)
    res = tofs.poisson_corrected_purity(counts, args.resamples, seed=cfg.seed, mean_field=args.mean_field)
    rep.results.update(res.as_dict())


# -- tpi ----------------------------------------------------------------------


def cmd_tpi_splitter(cfg, args, out, rep):
    est = interference.splitting_ratio(*args.counts)
    rep.results.update(est.as_dict())
    rep.results["splitter_limited_visibility"] = interference.splitter_limited_visibility(est.tau, est.rho)


def cmd_tpi_fringe_mc(cfg, args, out, rep):
    est = interference.splitting_ratio(*args.counts)
    i_avg = args.i_avg
    if i_avg is None:
        i_avg = interference.calibrate_i_avg(args.target_mean, args.sigma_eps, est.tau, est.rho)
        rep.results["i_avg_calibrated"] = True
    mc = interference.fringe_mc(i_avg, args.sigma_eps, est.tau, est.rho, args.trials, cfg.seed)
    out.curve("fringe_mc.csv", {"visibility": mc.samples})
    rep.results.update({"i_avg": i_avg, "sigma_eps": args.sigma_eps, "mean": mc.mean, "sd": mc.sd,
                        "trials": args.trials})


def _source_model(args):
    if args.p_per_mw is not None:
        return interference.SourceModel(args.p_per_mw, args.herald_eff, args.arm_eff)
    base = interference.SourceModel.from_rates()
    return interference.SourceModel(base.p_per_mw, args.herald_eff or base.herald_efficiency,
                                    args.arm_eff or base.arm_efficiency)


def cmd_tpi_multipair(cfg, args, out, rep):
    est = interference.splitting_ratio(*args.counts)
    src = _source_model(args)
    net = interference.build_network(est.tau, src, mating=args.mating)
    powers = args.power_mw
    vs = [interference.multipair_visibility(net, src.p(p), max_photons=args.pmax) for p in powers]
    out.curve("multipair.csv", {"power_mw": powers, "visibility": [v.visibility for v in vs],
                                "p_coinc_d": [v.p_coinc_d for v in vs], "p_coinc_i": [v.p_coinc_i for v in vs]})
    rep.results.update({"p_per_mw": src.p_per_mw, "herald_efficiency": src.herald_efficiency,
                        "arm_efficiency": src.arm_efficiency,
                        "visibility": {str(p): v.visibility for p, v in zip(powers, vs)}})
    if len(powers) >= 2:
        slope, intercept = np.polyfit(powers, [v.visibility for v in vs], 1)
        rep.results["linear_fit"] = {"slope_per_mw": slope, "intercept": intercept}
    if args.trials:
        mc = interference.multipair_mc(powers[-1], src, est, args.trials, cfg.seed, mating=args.mating)
        rep.results["mc"] = {"power_mw": powers[-1], "mean": mc.mean, "sd": mc.sd, "trials": args.trials}


def cmd_tpi_budget(cfg, args, out, rep):
    rep.results["factors"] = args.factors
    rep.results["visibility"] = interference.visibility_budget(*args.factors)


def cmd_tpi_fit(cfg, args, out, rep):
    data = interference.DipDataset.from_csv(args.data)
    fit = interference.fit_dip(data, args.model, args.robust, args.bootstrap, cfg.seed)
    x = np.linspace(data.delay.min(), data.delay.max(), 400)
    p = [fit.baseline, fit.visibility, fit.centre, fit.width, fit.slope or 0.0]
    out.curve("dip_fit.csv", {"delay": x, "model": interference.dip_model(x, *p)})
    rep.results.update(fit.as_dict())


# -- reproduce ----------------------------------------------------------------


def _repro_fig1(cfg, out, rep):
    grid = cfg.frequency_grid()
    res = optimizer.shape_matrix(grid, cfg.crystal_spec(), cfg.model())
    for key, r in res.items():
        out.curve(f"fig1_{key}.csv", {"width_nm": r.values, "purity": r.purities})
    p = {k: r.optimum_purity for k, r in res.items()}
    rep.results["purity"] = p
    rep.results["optimal_width_nm"] = {k: r.optimum for k, r in res.items()}
    order = (p["constantxsech"] < p["constantxgaussian"] and p["constantxsech"] < p["gaussianxsech"]
             < p["gaussianxgaussian"])
    rep.check("ordering", p, order, "P(a) < P(b), P(a) < P(c) < P(d)")
    rep.check("gauss_x_gauss", p["gaussianxgaussian"], p["gaussianxgaussian"] >= 0.9999, ">= 0.9999")


def _repro_fig2(cfg, out, rep):
    grid = cfg.frequency_grid()
    spec, model = cfg.crystal_spec(), cfg.model()
    ratios = [1 / 7, 1 / 6.04, 1 / 5] if cfg.fast else [1 / 9, 1 / 8, 1 / 7, 1 / 6.5, 1 / 6.04, 1 / 5.5,
                                                         1 / 5, 1 / 4.5, 1 / 4]
    pur, wid = optimizer.sweep_sigma_ratio(ratios, cfg.generator, grid, spec, model, workers=cfg.workers)
    out.curve("fig2a.csv", {"sigma_ratio": pur.values, "max_purity": pur.purities,
                            "optimal_sigma_pef_nm": wid.purities})
    src = optimizer.make_source(1 / 6.04, cfg.generator, spec, model)
    opt = optimizer.optimize_pump_width(src, (0.25, 0.37), n_coarse=13 if cfg.fast else 25, grid=grid,
                                        crystal=spec, model=model)
    out.curve("fig2b.csv", {"sigma_pef_nm": opt.values, "purity": opt.purities})
    tr = src.trace
    out.curve("fig2c.csv", {"z_mm": tr.z_mm, "target_abs": np.abs(tr.target), "actual_abs": np.abs(tr.actual)})
    k = int(np.argmin(np.abs(pur.values - 1 / 6.04)))
    rep.results.update({"ratios": pur.values, "max_purity": pur.purities, "optimal_sigma_pef_nm": wid.purities,
                        "working_point": {"sigma_pef_nm": opt.optimum, "purity": opt.optimum_purity},
                        "tracking_error": tr.tracking_error()})
    rep.check("plateau_purity", pur.purities[k], pur.purities[k] >= 0.9997, ">= 0.9997")
    rep.check("optimal_sigma_pef", opt.optimum, abs(opt.optimum - 0.308) <= 0.005, "0.308 +- 0.005 nm")
    beyond = pur.purities[pur.values >= 1 / 6.04]
    rep.check("decline_beyond_one_sixth", beyond, bool(np.all(np.diff(beyond) <= 1e-7)), "non-increasing")
    rep.check("sigma_pef_monotone", wid.purities, bool(np.all(np.diff(wid.purities) < 0)), "decreasing")


def _repro_fig4(cfg, out, rep):
    grid = cfg.frequency_grid()
    spec, model = cfg.crystal_spec(), cfg.model()
    src = optimizer.make_source(1 / 6.04, cfg.generator, spec, model)
    fw = np.linspace(0.60, 0.90, 16 if cfg.fast else 31)
    fw = np.union1d(fw, [0.755])
    curve = optimizer.purity_vs_fwhm(src, fw, grid, spec, model)
    opt = optimizer.optimize_pump_width(src, (0.25, 0.37), n_coarse=13, grid=grid, crystal=spec, model=model)
    p_755 = float(curve.purities[np.argmin(np.abs(fw - 0.755))])
    deficit_pp = (opt.optimum_purity - p_755) * 100
    out.curve("fig4b.csv", {"fwhm_nm": fw, "purity": curve.purities})
    g = np.linspace(-0.3, 0.3, 13 if cfg.fast else 31)
    gc = optimizer.purity_vs_gdd(src, g, 0.321, grid, spec, model)
    out.curve("fig4c.csv", {"gdd_ps2": g, "purity": gc.purities, "duration_ps": gc.metadata["duration_ps"]})
    tau0 = optimizer.transform_limited_duration(0.755)
    stretched = optimizer.stretched_duration(1.17, 0.13)
    bound = optimizer.purity_bound_from_duration(src, 1.21, 0.02, 0.321, 1.17, grid, spec, model)
    shaper = optimizer.gdd_from_displacement(optimizer.ShaperModel(displacement_mm=1.7))
    rep.results.update({"fwhm_optimum_nm": curve.optimum, "curvature_per_nm2": curve.metadata.get("curvature_per_nm2"),
                        "deficit_at_0.755_pp": deficit_pp, "tau0_ps": tau0, "stretched_ps": stretched,
                        "bound": bound.as_dict(), "gdd_intervals_ps2": bound.intervals,
                        "shaper_gdd_1.7mm_ps2": shaper})
    rep.check("stretched_duration", stretched, abs(stretched - 1.21) <= 0.005, "1.21 +- 0.005 ps")
    rep.check("transform_limit", tau0, abs(tau0 - 1.17) <= 0.01, "1.17 +- 0.01 ps")
    rep.check("gdd_purity_bound", bound.purity, abs(bound.purity - 0.9916) <= 0.005, "0.9916 +- 0.005")
    rep.check("fwhm_tolerance", deficit_pp, deficit_pp <= 1e-3, "<= 1e-3 pp")
    rep.check("shaper_calibration", shaper, abs(abs(shaper) - 0.13) <= 0.25 * 0.13, "0.13 ps^2 +- 25%")


def _repro_fig6(cfg, out, rep):
    spec, model = cfg.crystal_spec(), cfg.model()
    grid = cfg.frequency_grid(fast=True)
    src = optimizer.make_source(1 / 6.04, cfg.generator, spec, model)
    js = jsa.build_jsa(jsa.PumpEnvelope.gaussian(0.308, spec.lambda_pump_nm), src, grid, spec, model, warn=False)
    intensity = jsa.jsi(js)
    p_src = jsa.purity(jsa.sqrt_jsi(intensity, grid))
    unit = tofs.DispersionUnit()
    marks = [300_000, 1_000_000, 3_000_000, 10_000_000, 30_000_000]
    if cfg.fast:
        marks = [300_000, 1_000_000, 3_000_000, 30_000_000]
    curve = tofs.purity_vs_counts(intensity, grid, unit, unit, marks, 37.0, cfg.seed, correct=True,
                                  resamples=30 if cfg.fast else 100)
    path = out.path("fig6.csv")
    curve.to_csv(path)
    out.stamp(path)
    dev_pp = abs(curve.raw[-1] - p_src) * 100
    rep.results.update({"source_purity": p_src, "events": curve.events, "counts_per_bin": curve.counts_per_bin,
                        "raw": curve.raw, "corrected": curve.corrected, "se": curve.se})
    rep.check("round_trip", dev_pp, dev_pp <= 0.05, "<= 0.05 pp at >= 1e7 events")
    rep.check("corrected_above_raw", curve.corrected - curve.raw, bool(np.all(curve.corrected > curve.raw)),
              "corrected > raw at every checkpoint")


def _repro_fig7(cfg, out, rep):
    grid = cfg.frequency_grid()
    spec, model = cfg.crystal_spec(), cfg.model()
    ratios = [1 / 8, 1 / 7, 1 / 6.5] if cfg.fast else [1 / 10, 1 / 9, 1 / 8, 1 / 7.5, 1 / 7, 1 / 6.5, 1 / 6.2]
    cols = {"sigma_ratio": ratios}
    means = {}
    for gen in ("coherence", "subcoherence-fixed", "subcoherence-variable"):
        pur, _ = optimizer.sweep_sigma_ratio(ratios, gen, grid, spec, model, min_width_um=2.0, workers=cfg.workers)
        cols[gen] = pur.purities
        means[gen] = float(pur.purities.mean())
    out.curve("fig7.csv", cols)
    rep.results["mean_max_purity"] = means
    for gen in ("subcoherence-fixed", "subcoherence-variable"):
        rep.check(f"{gen}_vs_coherence", means[gen], means[gen] >= means["coherence"], ">= coherence mean")
        rep.check(f"{gen}_floor", means[gen], means[gen] >= 0.99993, ">= 0.99993")


def _repro_fig9(cfg, out, rep):
    est = interference.splitting_ratio(*TABLE_I_COUNTS)
    src = interference.SourceModel.from_rates()
    powers = np.linspace(1.0, 8.0, 6 if cfg.fast else 15)
    curve = interference.visibility_vs_power(powers, src, est.tau)
    out.curve("fig9.csv", {"power_mw": powers, "visibility": curve.visibility})
    rep.results.update({"p_per_mw": src.p_per_mw, "heralding_efficiency": src.herald_efficiency,
                        "slope_per_mw": curve.slope_per_mw, "intercept": curve.intercept,
                        "visibility_at_5.8mW": curve.at(5.8)})
    rep.check("negative_slope", curve.slope_per_mw, curve.slope_per_mw < 0, "< 0")
    rep.check("monotone", curve.visibility, bool(np.all(np.diff(curve.visibility) < 0)), "decreasing")


def _repro_table1(cfg, out, rep):
    est = interference.splitting_ratio(*TABLE_I_COUNTS)
    v = interference.splitter_limited_visibility(est.tau, est.rho)
    rep.results.update({**est.as_dict(), "splitter_limited_visibility": v})
    rep.check("tau", est.tau, abs(est.tau - 0.4964) <= 0.0002, "49.64 +- 0.02 %")
    rep.check("rho", est.rho, abs(est.rho - 0.5036) <= 0.0002, "50.36 +- 0.02 %")
    rep.check("visibility", v, abs(v - 0.99990) <= 0.00001, "99.990 +- 0.001 %")


def _repro_table2(cfg, out, rep):
    v = interference.visibility_budget(0.9984, 0.9974, 0.99698)
    v_gdd = interference.visibility_budget(0.9984, 0.9916, 0.9974, 0.99698)
    est = interference.splitting_ratio(*TABLE_I_COUNTS)
    i_avg = interference.calibrate_i_avg(0.9992, 0.3, est.tau, est.rho)
    mc = interference.fringe_mc(i_avg, 0.3, est.tau, est.rho, 20000, cfg.seed)
    rep.results.update({"max_visibility": v, "max_visibility_gdd": v_gdd,
                        "fringe_mc": {"i_avg_uw": i_avg, "mean": mc.mean, "sd": mc.sd}})
    rep.check("budget", v, abs(v - 0.9928) <= 0.0002, "0.9928 +- 0.0002")
    rep.check("budget_gdd", v_gdd, abs(v_gdd - 0.9845) <= 0.0005, "0.9845 +- 0.0005")
    rep.check("fringe_mc_mean", mc.mean, abs(mc.mean - 0.9992) <= 0.0006, "0.9992 +- 0.0006")


RECIPES = {
    "fig1": _repro_fig1, "fig2": _repro_fig2, "fig4": _repro_fig4, "fig6": _repro_fig6,
    "fig7": _repro_fig7, "fig9": _repro_fig9, "tableI": _repro_table1, "tableII": _repro_table2,
}


def cmd_reproduce(cfg, args, out, rep):
    RECIPES[args.figure](cfg, out, rep)
    rep.results["figure"] = args.figure


# -- validate -----------------------------------------------------------------


def validate_config(cfg: RunConfig) -> list:
    """Cheap checks of a configuration; returns a list of diagnostics."""
    diags = []

    def add(level, msg):
        diags.append({"level": level, "message": msg})

    try:
        model = cfg.model()
        spec = cfg.crystal_spec()
    except ConfigError as exc:
        add("error", str(exc))
        return diags
    lo, hi = model.validity_nm
    grid_spec = dict(cfg.grid)
    half = float(grid_spec.get("half_width_nm", 4.0))
    for name, lam in (("pump", spec.lambda_pump_nm), ("signal", spec.lambda_signal_nm - half),
                      ("signal", spec.lambda_signal_nm + half)):
        if not lo <= lam <= hi:
            add("error", f"{name} wavelength {lam} nm outside material window [{lo}, {hi}] nm")
    if diags:
        return diags
    if int(grid_spec.get("n", 512)) < 64:
        add("error", "grid needs at least 64 samples per axis")
        return diags
    try:
        dk0 = material.design_mismatch(spec, model)
        lc_um = material.coherence_length(dk0)
    except ForgeError as exc:
        add("error", f"phase mismatch: {exc}")
        return diags
    if lc_um * 1e-3 > spec.length_mm:
        add("error", f"coherence length {lc_um:.1f} um exceeds the crystal length: layout infeasible")
        return diags
    gen = MODE_ALIASES.get(cfg.generator, cfg.generator)
    if gen not in optimizer.GENERATOR_FUNCS:
        add("error", f"unknown generator {cfg.generator!r}")
    if gen.startswith("subcoherence") and not 0 < cfg.min_width_um < lc_um:
        add("error", f"min width {cfg.min_width_um} um must lie in (0, coherence length {lc_um:.2f} um)")
    if not 0.05 < cfg.sigma_ratio < 0.5:
        add("error", "sigma/L must lie in (0.05, 0.5)")
    if cfg.pump.get("shape", "gaussian") not in ("gaussian", "sech") or not float(cfg.pump.get("width_nm", 0)) > 0:
        add("error", "pump needs shape gaussian|sech and a positive width")
    if any(d["level"] == "error" for d in diags):
        return diags
    # coverage: leak estimate on a coarse grid with the ideal target (no layout synthesis)
    coarse = jsa.FrequencyGrid.symmetric(128, half, spec.lambda_pump_nm)
    target = poling.NonlinearityTarget.gaussian(spec.length_mm, dk0, cfg.sigma_ratio)
    js = jsa.build_jsa(cfg.pump_envelope(), target, coarse, spec, model, warn=False)
    leak = js.provenance["edge_fraction"]
    if leak > jsa.LEAK_TOLERANCE:
        add("warning", f"grid may not cover the joint spectrum: leaked norm fraction ~{leak:.2e}")
    return diags


def cmd_validate(cfg, args, out, rep):
    diags = validate_config(cfg)
    rep.results["diagnostics"] = diags
    if any(d["level"] == "error" for d in diags):
        raise ConfigError("; ".join(d["message"] for d in diags if d["level"] == "error"))


# -- parser -------------------------------------------------------------------


def _common():
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="JSON run configuration")
    p.add_argument("--seed", type=int, default=S, help="seed for stochastic commands")
    p.add_argument("--out", default=S, help="output directory (default: out)")
    p.add_argument("--fast", action="store_true", default=S, help="256^2 grids and fewer sweep points")
    p.add_argument("--material", default=S, help="material JSON file")
    p.add_argument("--workers", type=int, default=S, help="process pool size for sweeps")
    p.add_argument("-v", "--verbose", action="store_true", default=S)
    return p


def _tofs_units(p):
    p.add_argument("--d-signal", type=float, default=-1350.0, help="signal arm dispersion (ps/nm)")
    p.add_argument("--d-idler", type=float, default=-1350.0, help="idler arm dispersion (ps/nm)")
    p.add_argument("--reference-nm", type=float, default=1550.0)
    p.add_argument("--insertion-signal-ps", type=float, default=0.0)
    p.add_argument("--insertion-idler-ps", type=float, default=0.0)


def _tofs_jitter(p):
    p.add_argument("--jitter-ps", type=float, default=37.0, help="combined rms jitter")
    p.add_argument("--jitter-components", type=float, nargs="+", help="independent rms contributions (ps)")


def _layout_source(p):
    p.add_argument("--layout", help="domain layout CSV (default: engineer from the config)")
    p.add_argument("--mode", choices=sorted(MODE_ALIASES), help="layout generator")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="spdc-forge", parents=[common],
                                     description="Spectral-purity engineering toolkit for SPDC sources.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    groups = parser.add_subparsers(dest="group", required=True, metavar="<command>")

    def sub(container, name, func, help_):
        p = container.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    g = groups.add_parser("poling", help="domain engineering").add_subparsers(dest="cmd", required=True)
    p = sub(g, "engineer", cmd_poling_engineer, "synthesise a domain layout")
    p.add_argument("--sigma-ratio", type=float, default=6.04, help="L/sigma (or sigma/L if < 1)")
    p.add_argument("--mode", choices=["coherence", "sub-fixed", "sub-variable"], default="coherence")
    p.add_argument("--min-width-um", type=float, default=2.0)

    g = groups.add_parser("jsa", help="joint spectra").add_subparsers(dest="cmd", required=True)
    p = sub(g, "build", cmd_jsa_build, "build a JSA and its purity")
    _layout_source(p)
    p.add_argument("--ideal", action="store_true", help="use the ideal gaussian PMF")
    p.add_argument("--sigma-pef", type=float, help="pump width (nm)")
    p.add_argument("--shape", choices=["gaussian", "sech"])
    p.add_argument("--gdd", type=float, help="pump GDD (ps^2)")
    p = sub(g, "purity", cmd_jsa_purity, "purity of a matrix CSV")
    p.add_argument("matrix")
    p.add_argument("--intensity", action="store_true", help="matrix is a JSI (take the square root)")
    p = sub(g, "visibility", cmd_jsa_visibility, "heralded visibility of two spectra")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--intensity", action="store_true")
    p.add_argument("--interfering", choices=["idler", "signal"], default="idler")

    g = groups.add_parser("sweep", help="parameter sweeps").add_subparsers(dest="cmd", required=True)
    p = sub(g, "sigma-ratio", cmd_sweep_sigma_ratio, "max purity vs sigma/L")
    p.add_argument("--ratios", type=float, nargs="+", default=[8, 7, 6.5, 6.04, 5.5, 5, 4.5, 4])
    p.add_argument("--mode", choices=sorted(MODE_ALIASES), default="coherence")
    p = sub(g, "pump-width", cmd_sweep_pump_width, "optimise the pump width")
    _layout_source(p)
    p.add_argument("--range", type=float, nargs=2, default=[0.25, 0.37])
    p.add_argument("--points", type=int, default=25)
    p.add_argument("--shape", choices=["gaussian", "sech"], default="gaussian")
    p = sub(g, "gdd", cmd_sweep_gdd, "purity vs pump GDD")
    _layout_source(p)
    p.add_argument("--range", type=float, nargs=2, default=[-0.3, 0.3])
    p.add_argument("--points", type=int, default=31)
    p.add_argument("--sigma-pef", type=float, default=0.321)
    p.add_argument("--tau-ps", type=float, help="measured pulse duration to invert")
    p.add_argument("--tau-err-ps", type=float, default=0.02)
    p.add_argument("--tau0-ps", type=float, help="transform limit (default from the pump width)")

    g = groups.add_parser("calibrate", help="calibrations").add_subparsers(dest="cmd", required=True)
    p = sub(g, "shaper", cmd_calibrate_shaper, "GDD from grating displacement")
    p.add_argument("--delta-mm", type=float, required=True)
    p.add_argument("--lines-per-mm", type=float, default=2400.0)
    p.add_argument("--centre-nm", type=float, default=775.0)
    p.add_argument("--focal-mm", type=float, default=500.0)
    p.add_argument("--incidence-deg", type=float, help="incidence angle (default: Littrow)")

    g = groups.add_parser("tofs", help="time-of-flight spectrometry").add_subparsers(dest="cmd", required=True)
    p = sub(g, "simulate", cmd_tofs_simulate, "simulate a delay histogram")
    _layout_source(p)
    _tofs_units(p)
    _tofs_jitter(p)
    p.add_argument("--jsi", help="source JSI CSV (default: engineered source)")
    p.add_argument("--events", type=int, default=10_000_000)
    p.add_argument("--features", type=int, default=1)
    p.add_argument("--period-ns", type=float, default=tofs.DEFAULT_PERIOD_NS)
    p.add_argument("--bin-ps", type=float, default=tofs.DEFAULT_BIN_PS)
    p.add_argument("--bins", type=int, default=800)
    p = sub(g, "reconstruct", cmd_tofs_reconstruct, "JSI from one histogram feature")
    _tofs_units(p)
    p.add_argument("--hist", required=True, help="histogram CSV (with JSON sidecar)")
    p.add_argument("--feature", type=int, default=0)
    p = sub(g, "purity-curve", cmd_tofs_purity_curve, "purity vs accumulated counts")
    _layout_source(p)
    _tofs_units(p)
    _tofs_jitter(p)
    p.add_argument("--jsi")
    p.add_argument("--checkpoints", type=int, nargs="+", default=[300_000, 1_000_000, 3_000_000, 10_000_000])
    p.add_argument("--corrected", action="store_true", help="also report Poisson-corrected purity")
    p.add_argument("--resamples", type=int, default=50)
    p = sub(g, "corrected-purity", cmd_tofs_corrected_purity, "Poisson-bias-corrected purity")
    _tofs_units(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--hist")
    src.add_argument("--counts", help="count matrix CSV")
    p.add_argument("--feature", type=int, default=0)
    p.add_argument("--resamples", type=int, default=100)
    p.add_argument("--mean-field", choices=["poisson-ml", "measured"], default="poisson-ml")

    g = groups.add_parser("tpi", help="two-photon interference").add_subparsers(dest="cmd", required=True)
    p = sub(g, "splitter", cmd_tpi_splitter, "splitting ratio from counts")
    p.add_argument("--counts", type=float, nargs=4, metavar=("C11", "C22", "C12", "C21"),
                   default=list(TABLE_I_COUNTS))
    p = sub(g, "fringe-mc", cmd_tpi_fringe_mc, "fringe visibility Monte Carlo")
    p.add_argument("--counts", type=float, nargs=4, default=list(TABLE_I_COUNTS))
    p.add_argument("--i-avg", type=float, help="average input power (uW); default: calibrate")
    p.add_argument("--target-mean", type=float, default=0.9992)
    p.add_argument("--sigma-eps", type=float, default=0.3)
    p.add_argument("--trials", type=int, default=20000)
    p = sub(g, "multipair", cmd_tpi_multipair, "multi-pair visibility")
    p.add_argument("--counts", type=float, nargs=4, default=list(TABLE_I_COUNTS))
    p.add_argument("--power-mw", type=float, nargs="+", default=[5.8])
    p.add_argument("--pmax", type=int, default=interference.MAX_PHOTONS, help="max total photons")
    p.add_argument("--trials", type=int, default=0, help="Monte Carlo trials (0: none)")
    p.add_argument("--p-per-mw", type=float)
    p.add_argument("--herald-eff", type=float)
    p.add_argument("--arm-eff", type=float)
    p.add_argument("--mating", type=float, default=0.97)
    p = sub(g, "budget", cmd_tpi_budget, "combine visibility factors")
    p.add_argument("--factors", type=float, nargs="+", default=[0.9984, 0.9974, 0.99698])
    p = sub(g, "fit", cmd_tpi_fit, "fit a HOM dip")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=["gauss", "gauss-linear"], default="gauss")
    p.add_argument("--robust", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--bootstrap", type=int, default=200)

    p = groups.add_parser("reproduce", parents=[common], help="reproduce a figure or table")
    p.add_argument("figure", choices=sorted(RECIPES))
    p.set_defaults(func=cmd_reproduce)

    p = groups.add_parser("validate", parents=[common], help="check a configuration")
    p.set_defaults(func=cmd_validate)
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if getattr(args, "config", None) else RunConfig()
    for name in ("seed", "out", "material", "workers"):
        if getattr(args, name, None) is not None:
            setattr(cfg, name, getattr(args, name))
    if getattr(args, "fast", False):
        cfg.fast = True
    if cfg.material is not None and not Path(cfg.material).is_file():
        raise ConfigError(f"material file not found: {cfg.material}")
    return cfg


_GLOBAL_ARGS = {"config", "seed", "out", "fast", "material", "workers", "verbose", "func"}


def _command_args(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _GLOBAL_ARGS}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    command = " ".join(x for x in (args.group, getattr(args, "cmd", None)) if x)
    try:
        cfg = _resolve_config(args)
        if args.group == "reproduce":
            command += f" {args.figure}"
        digest = cfg.digest(_command_args(args))
        out = Outputs(cfg.out, digest)
        rep = Report(command, digest, cfg.seed,
                     provenance={"material": cfg.model().source, "backend": kernels.BACKEND,
                                 "version": __version__, "config": cfg.as_dict()})
        t0 = time.perf_counter()
        args.func(cfg, args, out, rep)
        rep.wall_s = time.perf_counter() - t0
        rep.provenance["config"] = cfg.as_dict()
        rep.provenance["arguments"] = _command_args(args)
        out.report(rep)
    except ConfigError as exc:
        print(f"spdc-forge: {command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"spdc-forge: {command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    summary = {"command": command, "config_hash": rep.config_hash, "results": rep.results}
    if rep.checks:
        summary["checks"] = rep.checks
    print(json.dumps(summary, indent=2, default=_jsonable))
    if not rep.passed:
        failed = [k for k, c in rep.checks.items() if not c["pass"]]
        print(f"spdc-forge: {command}: acceptance failure: {', '.join(failed)}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
