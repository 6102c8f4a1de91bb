"""Joint spectral amplitudes, Schmidt decomposition and purity.

Spectra are sampled on wavelength grids. Amplitudes ``f`` are densities in
angular frequency; the discretised Schmidt problem uses
f * sqrt(d omega_s d omega_i), so purity does not depend on whether the grid
is uniform in wavelength or in frequency.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.constants import c as C_LIGHT

from . import material, poling
from .errors import ConfigError, NumericError

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
LEAK_TOLERANCE = 1e-4  # warning threshold; the default grid leaks ~1e-5


@dataclass(frozen=True)
class FrequencyGrid:
    signal_nm: np.ndarray
    idler_nm: np.ndarray
    pump_nm: float

    def __post_init__(self):
        for name in ("signal_nm", "idler_nm"):
            ax = np.asarray(getattr(self, name), dtype=float)
            if ax.ndim != 1 or ax.size < 64:
                raise ConfigError(f"{name} needs at least 64 samples")
            d = np.diff(ax)
            if np.any(d <= 0) or np.ptp(d) > 1e-9 * abs(d.mean()) + 1e-12:
                raise ConfigError(f"{name} must be ascending and uniform")

    @classmethod
    def symmetric(cls, n=512, half_width_nm=4.0, pump_nm=775.0, n_idler=None):
        centre = 2.0 * pump_nm
        ni = n if n_idler is None else n_idler
        return cls(
            np.linspace(centre - half_width_nm, centre + half_width_nm, n),
            np.linspace(centre - half_width_nm, centre + half_width_nm, ni),
            pump_nm,
        )

    @property
    def shape(self):
        return (len(self.signal_nm), len(self.idler_nm))

    @property
    def omega_s(self):
        return material.wavelength_to_omega(self.signal_nm)

    @property
    def omega_i(self):
        return material.wavelength_to_omega(self.idler_nm)

    @property
    def omega_p(self):
        return float(material.wavelength_to_omega(self.pump_nm))

    def d_omega_s(self):
        return 2.0 * math.pi * C_LIGHT * abs(self.signal_nm[1] - self.signal_nm[0]) * 1e-9 / (
            np.asarray(self.signal_nm) * 1e-9
        ) ** 2

    def d_omega_i(self):
        return 2.0 * math.pi * C_LIGHT * abs(self.idler_nm[1] - self.idler_nm[0]) * 1e-9 / (
            np.asarray(self.idler_nm) * 1e-9
        ) ** 2

    def same_as(self, other: "FrequencyGrid") -> bool:
        return (
            self.shape == other.shape
            and np.allclose(self.signal_nm, other.signal_nm, rtol=0, atol=1e-12)
            and np.allclose(self.idler_nm, other.idler_nm, rtol=0, atol=1e-12)
            and self.pump_nm == other.pump_nm
        )

    def describe(self) -> dict:
        return {
            "signal_nm": [float(self.signal_nm[0]), float(self.signal_nm[-1]), len(self.signal_nm)],
            "idler_nm": [float(self.idler_nm[0]), float(self.idler_nm[-1]), len(self.idler_nm)],
            "pump_nm": self.pump_nm,
        }


def nm_to_angular_width(width_nm: float, centre_nm: float) -> float:
    """Linearised image of a wavelength width in angular frequency (rad/s)."""
    return 2.0 * math.pi * C_LIGHT * width_nm * 1e-9 / (centre_nm * 1e-9) ** 2


def angular_to_nm_width(width_rad_s: float, centre_nm: float) -> float:
    return width_rad_s * (centre_nm * 1e-9) ** 2 / (2.0 * math.pi * C_LIGHT) * 1e9


@dataclass(frozen=True)
class PumpEnvelope:
    """Pump spectrum alpha(omega) with a Taylor spectral phase.

    ``width_nm`` is the intensity-rms sigma for a gaussian and the natural
    sech width for a sech. ``phase_ps`` holds (GDD [ps^2], TOD [ps^3], ...),
    i.e. phi(W) = sum_n phase_ps[n-2] * W^n / n! with W in rad/ps.
    """

    shape: str = "gaussian"
    centre_nm: float = 775.0
    width_nm: float = 0.308
    phase_ps: tuple = ()

    def __post_init__(self):
        if self.shape not in ("gaussian", "sech"):
            raise ConfigError(f"unknown pump shape {self.shape!r}")
        if not self.width_nm > 0:
            raise ConfigError("pump width must be positive")

    @classmethod
    def gaussian(cls, sigma_nm, centre_nm=775.0, gdd_ps2=0.0):
        return cls("gaussian", centre_nm, sigma_nm, (gdd_ps2,) if gdd_ps2 else ())

    @classmethod
    def sech(cls, width_nm, centre_nm=775.0, gdd_ps2=0.0):
        return cls("sech", centre_nm, width_nm, (gdd_ps2,) if gdd_ps2 else ())

    @property
    def gdd_ps2(self) -> float:
        return float(self.phase_ps[0]) if self.phase_ps else 0.0

    @property
    def fwhm_nm(self) -> float:
        if self.shape == "gaussian":
            return FWHM_PER_SIGMA * self.width_nm
        return 2.0 * math.acosh(math.sqrt(2.0)) * self.width_nm

    def with_width(self, width_nm) -> "PumpEnvelope":
        return PumpEnvelope(self.shape, self.centre_nm, float(width_nm), self.phase_ps)

    def with_gdd(self, gdd_ps2) -> "PumpEnvelope":
        rest = tuple(self.phase_ps[1:])
        return PumpEnvelope(self.shape, self.centre_nm, self.width_nm, (float(gdd_ps2),) + rest)

    def spectral_phase(self, detuning):
        """phi(W) for detuning W in rad/s."""
        w_ps = np.asarray(detuning, dtype=float) * 1e-12
        out = np.zeros_like(w_ps)
        for n, coef in enumerate(self.phase_ps, start=2):
            if coef:
                out = out + coef * w_ps**n / math.factorial(n)
        return out

    def amplitude(self, omega):
        """alpha(omega), unit peak at the centre frequency."""
        omega = np.asarray(omega, dtype=float)
        wp = float(material.wavelength_to_omega(self.centre_nm))
        det = omega - wp
        width = nm_to_angular_width(self.width_nm, self.centre_nm)
        if self.shape == "gaussian":
            env = np.exp(-(det**2) / (4.0 * width**2))
        else:
            env = 1.0 / np.cosh(det / width)
        if not self.phase_ps:
            return env.astype(complex)
        return env * np.exp(1j * self.spectral_phase(det))

    def describe(self) -> dict:
        return {
            "shape": self.shape, "centre_nm": self.centre_nm,
            "width_nm": self.width_nm, "phase_ps": list(self.phase_ps),
        }


def pump_amplitude(pump: PumpEnvelope, omega_sum):
    return pump.amplitude(omega_sum)


@dataclass(frozen=True)
class JointSpectrum:
    """Normalised amplitude density f(omega_s, omega_i) on a grid."""

    amplitude: np.ndarray
    grid: FrequencyGrid
    provenance: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_density(cls, f, grid: FrequencyGrid, provenance=None, normalize=True):
        f = np.asarray(f, dtype=complex)
        if f.shape != grid.shape:
            raise ConfigError(f"amplitude shape {f.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(f)):
            raise NumericError("joint spectrum has non-finite entries")
        if normalize:
            norm = _weighted_norm2(f, grid)
            if not norm > 0:
                raise NumericError("cannot normalise an all-zero spectrum")
            f = f / math.sqrt(norm)
        return cls(f, grid, dict(provenance or {}))

    @classmethod
    def from_modes(cls, m, grid: FrequencyGrid, provenance=None):
        """Inverse of :meth:`modes`: discrete mode amplitudes back to a density."""
        ws = np.sqrt(grid.d_omega_s())[:, None]
        wi = np.sqrt(grid.d_omega_i())[None, :]
        return cls.from_density(np.asarray(m, dtype=complex) / (ws * wi), grid, provenance)

    def modes(self) -> np.ndarray:
        """Discrete amplitudes f * sqrt(dws dwi); unit Frobenius norm."""
        ws = np.sqrt(self.grid.d_omega_s())[:, None]
        wi = np.sqrt(self.grid.d_omega_i())[None, :]
        return self.amplitude * ws * wi

    def norm(self) -> float:
        return _weighted_norm2(self.amplitude, self.grid)

    def transposed(self) -> "JointSpectrum":
        g = FrequencyGrid(self.grid.idler_nm, self.grid.signal_nm, self.grid.pump_nm)
        return JointSpectrum(self.amplitude.T.copy(), g, self.provenance)


def _weighted_norm2(f, grid):
    p = np.abs(f) ** 2
    return float(grid.d_omega_s() @ p @ grid.d_omega_i())


@dataclass(frozen=True)
class SchmidtSpectrum:
    weights: np.ndarray

    @property
    def schmidt_number(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    @property
    def purity(self) -> float:
        return float(np.sum(self.weights**2))

    def leading(self, n=5):
        return self.weights[:n].copy()


def schmidt_from_matrix(m) -> SchmidtSpectrum:
    m = np.asarray(m)
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix has non-finite entries")
    s = np.linalg.svd(m, compute_uv=False)
    s2 = s**2
    total = s2.sum()
    if not total > 0:
        raise NumericError("zero matrix has no Schmidt decomposition")
    return SchmidtSpectrum(np.sort(s2 / total)[::-1])


def schmidt(js: JointSpectrum) -> SchmidtSpectrum:
    return schmidt_from_matrix(js.modes())


def purity(js: JointSpectrum) -> float:
    return schmidt(js).purity


def purity_from_counts(counts) -> float:
    """Purity of sqrt(counts), counts being per-bin intensities (already integrated)."""
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0):
        raise ConfigError("negative intensities; clamp explicitly before taking sqrt")
    return schmidt_from_matrix(np.sqrt(counts)).purity


def reduced_density(js: JointSpectrum, keep: str = "idler") -> np.ndarray:
    """Reduced density matrix of one photon (discrete mode basis)."""
    m = js.modes()
    if keep == "idler":
        return m.T @ m.conj()
    if keep == "signal":
        return m @ m.conj().T
    raise ConfigError("keep must be 'signal' or 'idler'")


def heralded_visibility(js1: JointSpectrum, js2: JointSpectrum, interfering: str = "idler") -> float:
    """Tr(rho_1 rho_2) of the heralded photons, computed through Schmidt modes.

    The heralding photon is traced out; ``interfering`` names the photon
    that meets its twin from the other source at the beam splitter.
    """
    if not js1.grid.same_as(js2.grid):
        raise ConfigError("joint spectra live on different grids")
    if interfering not in ("idler", "signal"):
        raise ConfigError("interfering must be 'signal' or 'idler'")

    def modes_of(js):
        m = js.modes()
        if interfering == "signal":
            m = m.T
        _, s, vh = np.linalg.svd(m, full_matrices=False)
        lam = s**2 / np.sum(s**2)
        # rho = sum_n lam_n |v_n><v_n| with v_n = vh[n] (conjugated rows)
        return lam, vh

    l1, v1 = modes_of(js1)
    l2, v2 = modes_of(js2)
    ov = np.abs(v1.conj() @ v2.T) ** 2
    return float(l1 @ ov @ l2)


def jsi(js: JointSpectrum) -> np.ndarray:
    return np.abs(js.amplitude) ** 2


def sqrt_jsi(intensity, grid: FrequencyGrid, provenance=None) -> JointSpectrum:
    """Zero-phase amplitude sqrt(JSI), renormalised."""
    intensity = np.asarray(intensity, dtype=float)
    if np.any(intensity < 0):
        raise ConfigError("negative intensities; clamp explicitly before taking sqrt")
    return JointSpectrum.from_density(np.sqrt(intensity), grid, provenance)


class PmfCache:
    """Memoises PMF matrices: one per (source, grid, crystal, material)."""

    def __init__(self, maxsize=8):
        self._store = {}
        self.maxsize = maxsize

    def get(self, key, factory):
        if key in self._store:
            return self._store[key]
        val = factory()
        if len(self._store) >= self.maxsize:
            self._store.pop(next(iter(self._store)))
        self._store[key] = val
        return val


_PMF_CACHE = PmfCache()


def _grid_key(grid):
    return (grid.shape, float(grid.signal_nm[0]), float(grid.signal_nm[-1]),
            float(grid.idler_nm[0]), float(grid.idler_nm[-1]), grid.pump_nm)


def mismatch_grid(grid: FrequencyGrid, crystal, model):
    return material.phase_mismatch(crystal, model, grid.omega_s[:, None], grid.omega_i[None, :])


def pmf_on_grid(source, grid: FrequencyGrid, crystal=None, model=None):
    """PMF matrix for a layout or an ideal target (targets use baseband dk)."""
    crystal = crystal or material.CrystalSpec()
    model = model or material.load_material()
    if isinstance(source, poling.DomainLayout):
        skey = ("layout", source.digest())
    elif isinstance(source, poling.NonlinearityTarget):
        skey = ("target", source)
    else:
        raise ConfigError(f"unsupported PMF source {type(source).__name__}")
    key = (skey, _grid_key(grid), crystal, model.source, model.path)

    def compute():
        dk = mismatch_grid(grid, crystal, model)
        if skey[0] == "layout":
            return poling.pmf_from_layout(source, dk)
        return poling.pmf_ideal(source, dk - source.delta_k0)

    return _PMF_CACHE.get(key, compute)


def edge_fraction(f, grid: FrequencyGrid) -> float:
    """Estimated share of the norm lying outside the grid.

    Each marginal is extended past its last two samples as a geometric tail;
    a marginal that does not decay there counts as fully leaking.
    """
    p = np.abs(f) ** 2 * np.outer(grid.d_omega_s(), grid.d_omega_i())
    total = p.sum()
    if not total > 0:
        return 0.0
    leak = 0.0
    for marg in (p.sum(axis=1), p.sum(axis=0)):
        for edge, inner in ((marg[0], marg[1]), (marg[-1], marg[-2])):
            if edge == 0.0:
                continue
            r = edge / inner if inner > 0 else np.inf
            leak += edge * r / (1.0 - r) if r < 1.0 else total
    return float(min(leak / total, 1.0))


def build_jsa(pump: PumpEnvelope, source, grid: FrequencyGrid, crystal=None, model=None,
              warn=True) -> JointSpectrum:
    """f = alpha(ws + wi) * phi(ws, wi) on the grid, normalised."""
    phi = pmf_on_grid(source, grid, crystal, model)
    alpha = pump.amplitude(grid.omega_s[:, None] + grid.omega_i[None, :])
    f = alpha * phi
    leak = edge_fraction(f, grid)
    if warn and leak > LEAK_TOLERANCE:
        warnings.warn(
            f"grid may not cover the joint spectrum: {leak:.2e} of the norm sits at the edges",
            stacklevel=2,
        )
    if isinstance(source, poling.DomainLayout):
        src = {"kind": "layout", "generator": source.generator, "digest": source.digest()}
    else:
        src = {"kind": "target", "profile": source.kind, "sigma_mm": source.sigma_mm}
    prov = {"pump": pump.describe(), "pmf": src, "gdd_ps2": pump.gdd_ps2,
            "grid": grid.describe(), "edge_fraction": leak}
    return JointSpectrum.from_density(f, grid, prov)


def save_matrix_csv(path, matrix, grid: FrequencyGrid, sidecar: dict | None = None):
    """CSV with the idler axis in the header row and the signal axis in column 0."""
    matrix = np.asarray(matrix)
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("signal_nm\\idler_nm," + ",".join(repr(float(v)) for v in grid.idler_nm) + "\n")
        for lam, row in zip(grid.signal_nm, matrix):
            if np.iscomplexobj(row):
                cells = (f"{float(v.real)!r}{float(v.imag):+}j" for v in row)
            else:
                cells = (repr(float(v)) for v in row)
            fh.write(repr(float(lam)) + "," + ",".join(cells) + "\n")
    if sidecar is not None:
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, default=_jsonable))


def load_matrix_csv(path, pump_nm=775.0):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"matrix file not found: {path}")
    lines = [ln for ln in path.read_text().strip().splitlines() if not ln.startswith("#")]
    try:
        idler = np.array([float(v) for v in lines[0].split(",")[1:]])
        signal, rows = [], []
        for line in lines[1:]:
            cells = line.split(",")
            signal.append(float(cells[0]))
            rows.append([complex(v) if "j" in v else float(v) for v in cells[1:]])
        mat = np.array(rows)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"malformed matrix CSV {path}: {exc}") from None
    if mat.ndim != 2 or mat.shape != (len(signal), len(idler)):
        raise ConfigError(f"matrix CSV {path} is not rectangular")
    return mat, FrequencyGrid(np.array(signal), idler, pump_nm)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return str(obj)


def spectrum_digest(js: JointSpectrum) -> str:
    return hashlib.sha256(np.ascontiguousarray(js.amplitude).tobytes()).hexdigest()[:16]
