"""Dispersion of the nonlinear crystal.

Refractive indices come from Sellmeier coefficient sets stored as JSON
(see ``data/ktp.json``). Everything else in the package (phase mismatch,
group velocities, poling period) is derived from those indices; all
functions here are pure.

Units: wavelengths in nm at the public surface, angular frequencies in
rad/s, wavenumbers and mismatches in rad/m.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.constants import c as C_LIGHT

from .errors import ConfigError, OutOfWindowError, PerfectPhaseMatching

DEFAULT_MATERIAL = "ktp.json"


@dataclass(frozen=True)
class AxisCoefficients:
    """One principal axis: n^2 = A + sum B_i/(1 - C_i/lam^2) - D lam^2 (lam in um)."""

    A: float
    terms: tuple[tuple[float, float], ...]
    D: float = 0.0

    def n_squared(self, lam_um):
        lam2 = np.square(lam_um)
        out = self.A - self.D * lam2
        for b, c in self.terms:
            out = out + b / (1.0 - c / lam2)
        return out


@dataclass(frozen=True)
class SellmeierModel:
    axes: dict[str, AxisCoefficients]
    validity_nm: tuple[float, float]
    source: str
    path: str | None = None

    @classmethod
    def from_dict(cls, doc: dict, path: str | None = None) -> "SellmeierModel":
        try:
            axes = {
                name: AxisCoefficients(
                    A=float(ax["A"]),
                    terms=tuple((float(b), float(c)) for b, c in ax.get("terms", [])),
                    D=float(ax.get("D", 0.0)),
                )
                for name, ax in doc["axes"].items()
            }
            lo, hi = (float(v) for v in doc["validity_nm"])
            source = str(doc["source"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed material document: {exc}") from exc
        if not 0 < lo < hi:
            raise ConfigError(f"bad validity window [{lo}, {hi}] nm")
        return cls(axes=axes, validity_nm=(lo, hi), source=source, path=path)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "SellmeierModel":
        """Load a material file; ``None`` loads the bundled KTP set."""
        if path is None:
            text = resources.files("spdc_forge.data").joinpath(DEFAULT_MATERIAL).read_text()
            return cls.from_dict(json.loads(text), path=f"<bundled {DEFAULT_MATERIAL}>")
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"material file not found: {p}")
        return cls.from_dict(json.loads(p.read_text()), path=str(p))

    @classmethod
    def constant(cls, n0: float, axes=("x", "y", "z"), validity_nm=(100.0, 10000.0)):
        """Dispersionless model, used as a test fixture and for sanity checks."""
        ax = AxisCoefficients(A=n0 * n0, terms=())
        return cls(axes={a: ax for a in axes}, validity_nm=validity_nm, source=f"constant n={n0}")


def load_material(path=None) -> SellmeierModel:
    return SellmeierModel.load(path)


@dataclass(frozen=True)
class CrystalSpec:
    """Collinear type-II crystal: length, photon-role axes and centre wavelengths."""

    length_mm: float = 30.0
    temperature_c: float = 25.0
    axis_pump: str = "y"
    axis_signal: str = "y"
    axis_idler: str = "z"
    lambda_pump_nm: float = 775.0
    lambda_signal_nm: float = 1550.0
    lambda_idler_nm: float = 1550.0
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.length_mm > 0:
            raise ConfigError(f"crystal length must be positive, got {self.length_mm}")
        mismatch = 1.0 / self.lambda_pump_nm - 1.0 / self.lambda_signal_nm - 1.0 / self.lambda_idler_nm
        if abs(mismatch) > 1e-9:
            raise ConfigError(
                f"centre wavelengths violate energy conservation by {mismatch:.3e} 1/nm"
            )

    @property
    def length_m(self) -> float:
        return self.length_mm * 1e-3

    @property
    def omega_signal(self) -> float:
        return wavelength_to_omega(self.lambda_signal_nm)

    @property
    def omega_idler(self) -> float:
        return wavelength_to_omega(self.lambda_idler_nm)

    @property
    def omega_pump(self) -> float:
        return wavelength_to_omega(self.lambda_pump_nm)


def wavelength_to_omega(lam_nm):
    return 2.0 * math.pi * C_LIGHT / (np.asarray(lam_nm, dtype=float) * 1e-9)


def omega_to_wavelength(omega):
    return 2.0 * math.pi * C_LIGHT / np.asarray(omega, dtype=float) * 1e9


def _check_window(model: SellmeierModel, axis: str, lam_nm):
    lo, hi = model.validity_nm
    arr = np.asarray(lam_nm, dtype=float)
    if arr.size and (np.nanmin(arr) < lo or np.nanmax(arr) > hi or np.isnan(arr).any()):
        bad = arr[(arr < lo) | (arr > hi) | np.isnan(arr)].flat[0]
        raise OutOfWindowError(float(bad), model.validity_nm, axis)
    if axis not in model.axes:
        raise ConfigError(f"axis {axis!r} not in material ({sorted(model.axes)})")


def refractive_index(model: SellmeierModel, axis: str, lam_nm):
    """Refractive index on ``axis`` at vacuum wavelength ``lam_nm`` (scalar or array)."""
    _check_window(model, axis, lam_nm)
    n2 = model.axes[axis].n_squared(np.asarray(lam_nm, dtype=float) * 1e-3)
    n = np.sqrt(n2)
    return float(n) if np.ndim(n) == 0 else n


def wavenumber(model: SellmeierModel, axis: str, omega):
    """k = n(omega) * omega / c in rad/m."""
    omega = np.asarray(omega, dtype=float)
    return refractive_index(model, axis, omega_to_wavelength(omega)) * omega / C_LIGHT


def phase_mismatch(spec: CrystalSpec, model: SellmeierModel, omega_s, omega_i):
    """Delta k = k_p(ws + wi) - k_s(ws) - k_i(wi), rad/m, with full dispersion."""
    omega_s = np.asarray(omega_s, dtype=float)
    omega_i = np.asarray(omega_i, dtype=float)
    if np.any(omega_s <= 0) or np.any(omega_i <= 0):
        raise ConfigError("frequencies must be positive")
    return (
        wavenumber(model, spec.axis_pump, omega_s + omega_i)
        - wavenumber(model, spec.axis_signal, omega_s)
        - wavenumber(model, spec.axis_idler, omega_i)
    )


def design_mismatch(spec: CrystalSpec, model: SellmeierModel) -> float:
    """Phase mismatch at the centre (degenerate) wavelengths."""
    return float(phase_mismatch(spec, model, spec.omega_signal, spec.omega_idler))


def qpm_period(delta_k) -> float:
    """Poling period 2 pi/|dk| in um. The coherence length is half of it."""
    dk = float(delta_k)
    if dk == 0.0:
        raise PerfectPhaseMatching("delta k = 0: phase matched without poling")
    return 2.0 * math.pi / abs(dk) * 1e6


def coherence_length(delta_k) -> float:
    """pi/|dk| in um."""
    return qpm_period(delta_k) / 2.0


def _dn_dlambda(model, axis, lam_nm, h0=1.0, rtol=1e-10, max_halvings=12):
    """dn/dlambda (1/nm) via central differences with Richardson extrapolation.

    The step is halved until two successive extrapolated values agree.
    """
    lo, hi = model.validity_nm
    h = min(h0, 0.5 * (lam_nm - lo), 0.5 * (hi - lam_nm))
    if h <= 0:
        raise OutOfWindowError(lam_nm, model.validity_nm, axis)

    def central(step):
        return (
            refractive_index(model, axis, lam_nm + step) - refractive_index(model, axis, lam_nm - step)
        ) / (2.0 * step)

    prev = None
    d_h = central(h)
    for _ in range(max_halvings):
        d_half = central(h / 2.0)
        rich = (4.0 * d_half - d_h) / 3.0
        if prev is not None and abs(rich - prev) <= rtol * max(abs(rich), 1e-30):
            return rich
        prev, d_h, h = rich, d_half, h / 2.0
    return prev


def group_index(model: SellmeierModel, axis: str, lam_nm: float) -> float:
    lo, hi = model.validity_nm
    if not lo < lam_nm < hi:
        raise OutOfWindowError(lam_nm, model.validity_nm, axis)
    n = refractive_index(model, axis, lam_nm)
    return n - lam_nm * _dn_dlambda(model, axis, lam_nm)


def group_velocity(model: SellmeierModel, axis: str, lam_nm: float) -> float:
    """v_g = c / (n - lambda dn/dlambda) in m/s."""
    return C_LIGHT / group_index(model, axis, lam_nm)


def focal_parameter(length_mm: float, k: float, waist_um: float) -> float:
    """xi = L / (k w^2), with k in rad/m."""
    if length_mm <= 0 or k <= 0 or waist_um <= 0:
        raise ConfigError("focal parameter inputs must be positive")
    return (length_mm * 1e-3) / (k * (waist_um * 1e-6) ** 2)
