"""Two-photon interference budgeting and HOM dip analysis.

Mode convention for the heralded interference network::

    0  herald of source A        3  herald of source B
    1  FBS input 1 (photon A)    2  FBS input 2 (photon B)
    4, 5  herald A / herald B losses
    6, 7  FBS input 1 / input 2 losses
    8, 9  FBS output 1 / output 2 losses

Detected ("core") modes are 0-3. A four-fold coincidence is at least one
photon in each of them (threshold detectors).
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, optimize

from . import kernels
from .errors import ConfigError, NumericError

MAX_PHOTONS = 8
N_CORE = 4
N_MODES = 10
DETECTORS = (0, 1, 2, 3)
BISQUARE_C = 4.685

# Count rates per mW quoted for the sources and the laser repetition rate.
SINGLES_KHZ_PER_MW = (8.5, 9.6)
COINCIDENCES_KHZ_PER_MW = 4.2
REPETITION_MHZ = 76.0


# -- splitting ratio --------------------------------------------------------


@dataclass(frozen=True)
class SplitterEstimate:
    c11: float
    c12: float
    c21: float
    c22: float
    f: float
    tau: float
    rho: float
    sigma_tau: float

    @property
    def sigma_rho(self) -> float:
        return self.sigma_tau

    def as_dict(self):
        return {"counts": {"C11": self.c11, "C12": self.c12, "C21": self.c21, "C22": self.c22},
                "F": self.f, "tau": self.tau, "rho": self.rho,
                "sigma_tau": self.sigma_tau, "sigma_rho": self.sigma_rho}


def splitting_ratio(c11, c22, c12, c21) -> SplitterEstimate:
    """Transmittance/reflectance from single counts C_ij (input i, output j).

    F = C11 C22 / (C12 C21) is independent of input and output losses;
    tau = 1/(1+sqrt F). The uncertainty propagates Poisson variances
    (var C = C) to first order.
    """
    counts = [float(c) for c in (c11, c22, c12, c21)]
    if min(counts) <= 0:
        raise ConfigError("all four counts must be positive to define F")
    f = counts[0] * counts[1] / (counts[2] * counts[3])
    sf = math.sqrt(f)
    tau = 1.0 / (1.0 + sf)
    rel_f = math.sqrt(sum(1.0 / c for c in counts))
    sigma_tau = sf / (2.0 * (1.0 + sf) ** 2) * rel_f
    return SplitterEstimate(counts[0], counts[2], counts[3], counts[1], f, tau, 1.0 - tau, sigma_tau)


def splitter_limited_visibility(tau: float, rho: float | None = None) -> float:
    rho = 1.0 - tau if rho is None else rho
    if abs(tau + rho - 1.0) > 1e-9:
        raise ConfigError("tau + rho must equal 1")
    return 2.0 * tau * rho / (tau * tau + rho * rho)


# -- classical fringes ------------------------------------------------------


def fringe_visibility(i1, i2, tau, rho):
    """Visibility of I(phi) = tau I1 + rho I2 + 2 sqrt(tau rho I1 I2) cos(phi)."""
    i1 = np.asarray(i1, dtype=float)
    i2 = np.asarray(i2, dtype=float)
    if np.any(i1 <= 0) or np.any(i2 <= 0):
        raise ConfigError("intensities must be positive")
    v = 2.0 * np.sqrt(tau * rho * i1 * i2) / (tau * i1 + rho * i2)
    return float(v) if v.ndim == 0 else v


@dataclass(frozen=True)
class FringeMC:
    mean: float
    sd: float
    samples: np.ndarray = field(repr=False)


def fringe_mc(i_avg, sigma_eps, tau, rho, trials=10000, seed=None) -> FringeMC:
    """Monte Carlo of the fringe visibility under an input power mismatch.

    eps ~ Normal(0, sigma_eps); the inputs are I1 = I_avg + |eps| and
    I2 = I_avg - |eps| (I1 enters the transmitted port).
    """
    if i_avg <= 0:
        raise ConfigError("average power must be positive")
    if sigma_eps < 0:
        raise ConfigError("sigma_eps must be non-negative")
    rng = np.random.default_rng(seed)
    eps = np.abs(rng.normal(0.0, sigma_eps, trials)) if sigma_eps > 0 else np.zeros(trials)
    if np.any(eps >= i_avg):
        raise NumericError("power mismatch exceeds the average power; raise I_avg")
    v = fringe_visibility(i_avg + eps, i_avg - eps, tau, rho)
    return FringeMC(float(v.mean()), float(v.std(ddof=1)), v)


def expected_fringe_visibility(i_avg, sigma_eps, tau, rho) -> float:
    """Exact mean of ``fringe_mc`` by quadrature over the half-normal |eps|."""
    if sigma_eps == 0:
        return fringe_visibility(i_avg, i_avg, tau, rho)
    hi = min(8.0 * sigma_eps, i_avg * (1 - 1e-12))

    def integrand(e):
        pdf = 2.0 / (sigma_eps * math.sqrt(2 * math.pi)) * math.exp(-0.5 * (e / sigma_eps) ** 2)
        return pdf * fringe_visibility(i_avg + e, i_avg - e, tau, rho)

    return integrate.quad(integrand, 0.0, hi, limit=200)[0]


def calibrate_i_avg(target_mean, sigma_eps, tau, rho, bracket=(None, 1e6)) -> float:
    """Average power that makes the expected fringe visibility equal ``target_mean``."""
    vmax = 2.0 * math.sqrt(tau * rho)
    if not 0 < target_mean < vmax:
        raise ConfigError(f"target visibility must lie below the balanced-power limit {vmax:.6f}")
    lo = bracket[0] if bracket[0] is not None else 5.0 * sigma_eps
    hi = bracket[1]
    g = lambda ia: expected_fringe_visibility(ia, sigma_eps, tau, rho) - target_mean
    while g(lo) > 0:
        lo /= 2.0
        if lo < 1e-9 * sigma_eps:
            raise NumericError("could not bracket the calibration")
    return float(optimize.brentq(g, lo, hi, xtol=1e-10 * hi))


# -- multi-pair network -----------------------------------------------------


def pair_number_pmf(p: float, n):
    """Thermal pair-number law P(N) = (1 - p) p^N."""
    if not 0 <= p < 1:
        raise ConfigError("p must lie in [0, 1)")
    n = np.asarray(n)
    out = (1.0 - p) * np.power(p, n)
    return float(out) if out.ndim == 0 else out


def pmf_truncation_remainder(p: float, n_max: int) -> float:
    """Probability mass beyond N = n_max."""
    return p ** (n_max + 1)


def fbs_unitary(tau: float) -> np.ndarray:
    rho = 1.0 - tau
    return np.array([[math.sqrt(rho), 1j * math.sqrt(tau)], [1j * math.sqrt(tau), math.sqrt(rho)]])


def core_unitary(tau: float) -> np.ndarray:
    """Heralds pass straight through; photons A and B meet at the FBS."""
    u = np.eye(N_CORE, dtype=complex)
    u[1:3, 1:3] = fbs_unitary(tau)
    return u


def _loss_splitter(n, mode, aux, eta):
    u = np.eye(n, dtype=complex)
    t, r = math.sqrt(eta), math.sqrt(1.0 - eta)
    u[mode, mode] = t
    u[aux, aux] = t
    u[aux, mode] = r
    u[mode, aux] = -r
    return u


@dataclass(frozen=True)
class LossyNetwork:
    unitary: np.ndarray
    channels: dict
    efficiencies: dict

    @property
    def n_modes(self) -> int:
        return self.unitary.shape[0]

    def unitarity_residual(self) -> float:
        u = self.unitary
        return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


def embed_losses(core, herald=(1.0, 1.0), fbs_in=(1.0, 1.0), fbs_out=(1.0, 1.0), tol=1e-10) -> LossyNetwork:
    """Ten-mode unitary: input losses, then the core, then output losses.

    ``herald`` are the efficiencies of modes 0 and 3, ``fbs_in`` of the two
    FBS inputs and ``fbs_out`` of the two FBS outputs.
    """
    core = np.asarray(core, dtype=complex)
    if core.shape != (N_CORE, N_CORE):
        raise ConfigError("core unitary must be 4x4")
    if np.max(np.abs(core.conj().T @ core - np.eye(N_CORE))) > tol:
        raise ConfigError("core matrix is not unitary")
    effs = {"herald_a": herald[0], "herald_b": herald[1], "fbs_in_1": fbs_in[0], "fbs_in_2": fbs_in[1],
            "fbs_out_1": fbs_out[0], "fbs_out_2": fbs_out[1]}
    for k, v in effs.items():
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"efficiency {k}={v} outside [0, 1]")
    big = np.eye(N_MODES, dtype=complex)
    big[:N_CORE, :N_CORE] = core
    l_in = (_loss_splitter(N_MODES, 0, 4, herald[0]) @ _loss_splitter(N_MODES, 3, 5, herald[1])
            @ _loss_splitter(N_MODES, 1, 6, fbs_in[0]) @ _loss_splitter(N_MODES, 2, 7, fbs_in[1]))
    l_out = _loss_splitter(N_MODES, 1, 8, fbs_out[0]) @ _loss_splitter(N_MODES, 2, 9, fbs_out[1])
    u = l_out @ big @ l_in
    channels = {"herald_a": 0, "fbs_in_1": 1, "fbs_in_2": 2, "herald_b": 3,
                "aux": {"herald_a": 4, "herald_b": 5, "fbs_in_1": 6, "fbs_in_2": 7,
                        "fbs_out_1": 8, "fbs_out_2": 9}}
    net = LossyNetwork(u, channels, effs)
    if net.unitarity_residual() > tol:
        raise NumericError("embedded network lost unitarity")
    return net


def _indices(occ):
    return [m for m, k in enumerate(occ) for _ in range(int(k))]


def _check_input(net_or_u, occupation):
    u = net_or_u.unitary if isinstance(net_or_u, LossyNetwork) else np.asarray(net_or_u, dtype=complex)
    occ = np.zeros(u.shape[0], dtype=int)
    occupation = np.asarray(occupation, dtype=int)
    if occupation.size > u.shape[0] or np.any(occupation < 0):
        raise ConfigError("bad input occupation")
    occ[:occupation.size] = occupation
    if occ.sum() > MAX_PHOTONS:
        raise ConfigError(f"{occ.sum()} input photons exceed the budget of {MAX_PHOTONS}")
    return u, occ


def pattern_probability(u, n_in, m_out, mode="indistinguishable") -> float:
    """Probability of output occupation ``m_out`` given input ``n_in``."""
    cols = _indices(n_in)
    rows = _indices(m_out)
    if len(cols) != len(rows):
        return 0.0
    if not cols:
        return 1.0
    out_fact = math.prod(math.factorial(int(k)) for k in m_out)
    if mode == "indistinguishable":
        sub = u[np.ix_(rows, cols)]
        in_fact = math.prod(math.factorial(int(k)) for k in n_in)
        return abs(kernels.permanent(sub)) ** 2 / (in_fact * out_fact)
    if mode == "distinguishable":
        sub = np.abs(u[np.ix_(rows, cols)]) ** 2
        return kernels.permanent(sub).real / out_fact
    raise ConfigError(f"unknown interference mode {mode!r}")


def _patterns_with_floor(n_total, n_modes, floor_modes):
    """Occupations of ``n_total`` photons with >= 1 photon in each floor mode."""
    base = np.zeros(n_modes, dtype=int)
    base[list(floor_modes)] = 1
    rest = n_total - len(floor_modes)
    if rest < 0:
        return
    for combo in itertools.combinations_with_replacement(range(n_modes), rest):
        occ = base.copy()
        for m in combo:
            occ[m] += 1
        yield occ


def transition_probabilities(net, occupation, mode="indistinguishable") -> dict:
    """Every output occupation with its probability (auxiliary modes included)."""
    u, occ = _check_input(net, occupation)
    n = int(occ.sum())
    out = {}
    for occ_out in _patterns_with_floor(n, u.shape[0], ()):
        out[tuple(int(k) for k in occ_out)] = pattern_probability(u, occ, occ_out, mode)
    return out


def coincidence_probability(net, occupation, mode="indistinguishable", detectors=DETECTORS) -> float:
    """Probability that every detector mode receives at least one photon."""
    u, occ = _check_input(net, occupation)
    n = int(occ.sum())
    if n < len(detectors):
        return 0.0
    return float(sum(pattern_probability(u, occ, m, mode)
                     for m in _patterns_with_floor(n, u.shape[0], detectors)))


def coincidence_probability_gram(net, occupation, mode="indistinguishable", detectors=DETECTORS) -> float:
    """Same quantity by inclusion-exclusion over empty detector subsets.

    P(no photon in S) is perm(G)/prod(n!) with G the Gram matrix of the
    columns restricted to the complement of S (indistinguishable), or a
    product of per-photon survival probabilities (distinguishable).
    """
    u, occ = _check_input(net, occupation)
    cols = _indices(occ)
    in_fact = math.prod(math.factorial(int(k)) for k in occ)
    total = 0.0
    for r in range(len(detectors) + 1):
        for s in itertools.combinations(detectors, r):
            keep = [m for m in range(u.shape[0]) if m not in s]
            uc = u[np.ix_(keep, cols)]
            if mode == "indistinguishable":
                p_empty = kernels.permanent(uc.conj().T @ uc).real / in_fact
            elif mode == "distinguishable":
                p_empty = float(np.prod(np.sum(np.abs(uc) ** 2, axis=0)))
            else:
                raise ConfigError(f"unknown interference mode {mode!r}")
            total += (-1) ** r * p_empty
    return float(total)


@dataclass(frozen=True)
class SourceModel:
    """Pair source: p = p_per_mw * power, plus channel efficiencies."""

    p_per_mw: float
    herald_efficiency: float = 0.465
    arm_efficiency: float = 0.465

    def __post_init__(self):
        if self.p_per_mw < 0:
            raise ConfigError("p_per_mw must be non-negative")
        for v in (self.herald_efficiency, self.arm_efficiency):
            if not 0 <= v <= 1:
                raise ConfigError("efficiencies must lie in [0, 1]")

    def p(self, power_mw: float) -> float:
        p = self.p_per_mw * power_mw
        if not 0 <= p < 1:
            raise ConfigError(f"pair probability {p} outside [0, 1) at {power_mw} mW")
        return p

    @classmethod
    def from_rates(cls, singles_hz=(8500.0, 9600.0), coincidences_hz=4200.0, rep_rate_hz=76e6,
                   power_mw=1.0):
        """Pair probability and efficiencies from single and coincidence rates.

        Pair rate S1 S2 / C; heralding efficiencies C/S2 and C/S1.
        """
        s1, s2 = singles_hz
        c = coincidences_hz
        pair_rate = s1 * s2 / c
        eta_h = c / math.sqrt(s1 * s2)
        return cls(pair_rate / rep_rate_hz / power_mw, eta_h, eta_h)


@dataclass(frozen=True)
class MultipairResult:
    p_coinc_d: float
    p_coinc_i: float
    visibility: float
    terms: list = field(repr=False, default_factory=list)
    truncation: float = 0.0


def build_network(tau, source_a: SourceModel, source_b: SourceModel | None = None, mating=0.97):
    """Network for two sources meeting at an FBS; matings split across FBS in/out."""
    source_b = source_b or source_a
    return embed_losses(
        core_unitary(tau),
        herald=(source_a.herald_efficiency, source_b.herald_efficiency),
        fbs_in=(source_a.arm_efficiency * mating, source_b.arm_efficiency * mating),
        fbs_out=(mating, mating),
    )


def multipair_visibility(net: LossyNetwork, p_a: float, p_b: float | None = None,
                         max_photons: int = MAX_PHOTONS) -> MultipairResult:
    """V = (pD - pI) / pD summed over pair-number combinations.

    Each source emitting N pairs puts N photons in its herald mode and N in
    its FBS input; combinations with 2 (N1 + N2) <= max_photons are kept.
    """
    p_b = p_a if p_b is None else p_b
    if max_photons > MAX_PHOTONS:
        raise ConfigError(f"at most {MAX_PHOTONS} photons are supported")
    n_pairs = max_photons // 2
    pd = pi = 0.0
    kept = 0.0
    terms = []
    for n1 in range(n_pairs + 1):
        for n2 in range(n_pairs + 1 - n1):
            w = pair_number_pmf(p_a, n1) * pair_number_pmf(p_b, n2)
            kept += w
            if n1 == 0 or n2 == 0:
                continue  # one herald stays dark: never a four-fold event
            occ = [n1, n1, n2, n2]
            cd = coincidence_probability(net, occ, "distinguishable")
            ci = coincidence_probability(net, occ, "indistinguishable")
            pd += w * cd
            pi += w * ci
            terms.append({"n1": n1, "n2": n2, "weight": w, "p_d": cd, "p_i": ci})
    if pd <= 0:
        raise NumericError("distinguishable coincidence probability vanishes")
    return MultipairResult(pd, pi, (pd - pi) / pd, terms, 1.0 - kept)


@dataclass(frozen=True)
class PowerCurve:
    power_mw: np.ndarray
    visibility: np.ndarray
    slope_per_mw: float
    intercept: float

    def at(self, power_mw: float) -> float:
        return self.intercept + self.slope_per_mw * power_mw


def visibility_vs_power(powers_mw, source: SourceModel, tau: float, mating=0.97) -> PowerCurve:
    net = build_network(tau, source, mating=mating)
    pw = np.asarray(powers_mw, dtype=float)
    v = np.array([multipair_visibility(net, source.p(x)).visibility for x in pw])
    slope, intercept = np.polyfit(pw, v, 1)
    return PowerCurve(pw, v, float(slope), float(intercept))


def multipair_mc(power_mw, source: SourceModel, splitter: SplitterEstimate, trials=200, seed=None,
                 detector_sd=0.03, mating=0.97, mating_sd=0.02, p_rel_sd=0.01) -> FringeMC:
    """Spread of the multi-pair visibility under parameter uncertainties.

    tau is drawn from its Poisson error, every efficiency gets an absolute
    Gaussian perturbation and p a relative one; draws are clipped to the
    physical range.
    """
    rng = np.random.default_rng(seed)
    vals = np.empty(trials)
    clip = lambda x: float(np.clip(x, 1e-6, 1.0))
    for t in range(trials):
        tau = float(np.clip(rng.normal(splitter.tau, splitter.sigma_tau), 1e-6, 1 - 1e-6))
        eff = [clip(rng.normal(source.herald_efficiency, detector_sd)) for _ in range(2)]
        arm = [clip(rng.normal(source.arm_efficiency, detector_sd)) for _ in range(2)]
        mat = [clip(rng.normal(mating, mating_sd)) for _ in range(4)]
        net = embed_losses(core_unitary(tau), herald=tuple(eff),
                           fbs_in=(arm[0] * mat[0], arm[1] * mat[1]), fbs_out=(mat[2], mat[3]))
        p = source.p(power_mw) * max(rng.normal(1.0, p_rel_sd), 0.0)
        vals[t] = multipair_visibility(net, p).visibility
    return FringeMC(float(vals.mean()), float(vals.std(ddof=1)), vals)


def visibility_budget(*factors) -> float:
    """Independent visibility limits combine multiplicatively."""
    out = 1.0
    for f in factors:
        if not 0 < f <= 1:
            raise ConfigError(f"visibility factor {f} outside (0, 1]")
        out *= f
    return out


# -- HOM dip fitting --------------------------------------------------------


@dataclass
class DipDataset:
    delay: np.ndarray
    counts: np.ndarray
    singles: np.ndarray | None = None
    seconds_per_point: float | None = None

    def __post_init__(self):
        self.delay = np.asarray(self.delay, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)
        if self.delay.shape != self.counts.shape or self.delay.ndim != 1:
            raise ConfigError("delay and counts must be 1-D arrays of equal length")
        if np.any(self.counts < 0):
            raise ConfigError("counts must be non-negative")
        d = np.diff(self.delay)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ConfigError("delays must be strictly monotone")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["delay", "counts"] + ([f"singles_{k}" for k in range(self.singles.shape[1])]
                                          if self.singles is not None else [])
            w.writerow(head)
            for j, (x, c) in enumerate(zip(self.delay, self.counts)):
                row = [repr(float(x)), repr(float(c))]
                if self.singles is not None:
                    row += [repr(float(s)) for s in self.singles[j]]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"dip dataset not found: {path}")
        with open(path, newline="") as fh:
            rows = list(csv.reader(line for line in fh if not line.startswith("#")))
        head, body = rows[0], rows[1:]
        if head[:2] != ["delay", "counts"]:
            raise ConfigError("dip CSV must start with columns delay,counts")
        arr = np.array([[float(v) for v in r] for r in body if r])
        singles = arr[:, 2:] if arr.shape[1] > 2 else None
        return cls(arr[:, 0], arr[:, 1], singles)


def dip_model(x, baseline, visibility, centre, width, slope=0.0):
    x = np.asarray(x, dtype=float)
    return baseline * (1.0 + slope * x) * (1.0 - visibility * np.exp(-((x - centre) ** 2) / (2.0 * width**2)))


@dataclass(frozen=True)
class DipFit:
    visibility: float
    sigma_visibility: float
    centre: float
    width: float
    baseline: float
    slope: float | None
    ci: tuple
    model_free_visibility: float
    robust: bool
    weights: np.ndarray = field(repr=False)

    def as_dict(self):
        return {"visibility": self.visibility, "sigma_visibility": self.sigma_visibility,
                "centre": self.centre, "width": self.width, "baseline": self.baseline,
                "slope": self.slope, "ci95": list(self.ci),
                "model_free_visibility": self.model_free_visibility, "robust": self.robust}


def model_free_visibility(data: DipDataset, n_plateau: int = 4) -> float:
    """(mean plateau - min) / mean plateau, plateau being the points farthest from the minimum."""
    k = int(np.argmin(data.counts))
    far = np.argsort(-np.abs(data.delay - data.delay[k]), kind="stable")[:n_plateau]
    top = float(data.counts[far].mean())
    if top <= 0:
        raise NumericError("plateau holds no counts")
    return (top - float(data.counts[k])) / top


def _initial_guess(x, y, linear):
    k = int(np.argmin(y))
    far = np.argsort(-np.abs(x - x[k]))[: max(2, len(x) // 4)]
    b = float(np.mean(y[far]))
    v = float(np.clip(1.0 - y[k] / b, 0.05, 0.999)) if b > 0 else 0.5
    below = np.abs(x[y < b * (1 - v / 2)] - x[k])
    w = float(below.max()) / 1.1774 if below.size else (np.ptp(x) / 8)
    w = max(w, np.min(np.abs(np.diff(x))) / 2)
    p0 = [b, v, float(x[k]), w]
    if linear:
        p0.append(0.0)
    return np.array(p0)


def _weighted_fit(x, y, sigma, w, p0, linear):
    sw = np.sqrt(w) / sigma

    def res(p):
        return sw * (y - dip_model(x, *p))

    lb = [0.0, -1.0, -np.inf, 1e-12] + ([-np.inf] if linear else [])
    ub = [np.inf, 1.0, np.inf, np.inf] + ([np.inf] if linear else [])
    sol = optimize.least_squares(res, p0, bounds=(lb, ub), method="trf", x_scale="jac",
                                 xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=2000)
    return sol


def _fit_once(x, y, linear, robust, max_iter=50):
    sigma = np.sqrt(np.maximum(y, 1.0))
    w = np.ones_like(y)
    p = _initial_guess(x, y, linear)
    sol = _weighted_fit(x, y, sigma, w, p, linear)
    if robust:
        for _ in range(max_iter):
            r = (y - dip_model(x, *sol.x)) / sigma
            mad = np.median(np.abs(r - np.median(r)))
            scale = max(mad / 0.6745, 1e-9 * max(np.max(np.abs(r)), 1e-300))
            u = r / (BISQUARE_C * scale)
            w_new = np.where(np.abs(u) < 1.0, (1.0 - u * u) ** 2, 0.0)
            if np.count_nonzero(w_new) < len(p):
                raise NumericError("robust weights rejected too many points")
            sol_new = _weighted_fit(x, y, sigma, w_new, sol.x, linear)
            done = np.max(np.abs(w_new - w)) < 1e-6
            w, sol = w_new, sol_new
            if done:
                break
    return sol, w, sigma


def fit_dip(data: DipDataset, model: str = "gauss", robust: bool = True, n_boot: int = 200,
            seed=None, n_plateau: int = 4) -> DipFit:
    """Fit B (1 + m x)(1 - V exp(-(x - x0)^2 / 2w^2)) to a HOM dip.

    Counts are weighted by their Poisson error. ``robust`` turns on
    iteratively reweighted least squares with Tukey bisquare weights
    (c = 4.685, MAD scale). The CI is the 2.5-97.5 percentile range of a
    parametric bootstrap (Poisson resamples of the fitted curve).
    """
    if model not in ("gauss", "gauss-linear"):
        raise ConfigError(f"unknown dip model {model!r}")
    linear = model == "gauss-linear"
    x, y = data.delay, data.counts
    if len(x) < 6:
        raise ConfigError("need at least 6 points to fit a dip")
    sol, w, sigma = _fit_once(x, y, linear, robust)
    p = sol.x
    b, v, x0, width = p[:4]
    plateau = np.abs(x - x0) > 2.5 * abs(width)
    if plateau.sum() < 2:
        raise NumericError("degenerate plateau: fewer than two points outside the dip")
    # covariance from the weighted Jacobian, scaled by the residual variance
    jac = sol.jac
    dof = max(len(x) - len(p), 1)
    s2 = max(float(np.sum(sol.fun**2)) / dof, 1.0)
    try:
        cov = np.linalg.inv(jac.T @ jac) * s2
        sig_v = float(math.sqrt(max(cov[1, 1], 0.0)))
    except np.linalg.LinAlgError:
        sig_v = float("nan")
    ci = (float("nan"), float("nan"))
    if n_boot:
        rng = np.random.default_rng(seed)
        mu = np.maximum(dip_model(x, *p), 0.0)
        boots = []
        for _ in range(n_boot):
            yb = rng.poisson(mu).astype(float)
            try:
                sb, _, _ = _fit_once(x, yb, linear, robust)
                boots.append(sb.x[1])
            except NumericError:
                continue
        if boots:
            ci = (float(np.percentile(boots, 2.5)), float(np.percentile(boots, 97.5)))
    return DipFit(float(v), sig_v, float(x0), float(abs(width)), float(b), float(p[4]) if linear else None,
                  ci, model_free_visibility(data, n_plateau), robust, w)


def synthetic_dip(visibility=0.985, baseline=300.0, width=2.0, centre=0.0, slope=0.0,
                  delays=None, seed=None, noise=True) -> DipDataset:
    """Dip data at a given count level; ``noise=False`` returns the exact curve."""
    if delays is None:
        delays = np.array([-12.0, -10.0, -6.0, -4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 6.0, 10.0, 12.0])
    mu = dip_model(delays, baseline, visibility, centre, width, slope)
    y = np.random.default_rng(seed).poisson(mu).astype(float) if noise else mu
    return DipDataset(np.asarray(delays, dtype=float), y)
