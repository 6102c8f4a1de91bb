import itertools
import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import unitary_group

from spdc_forge import interference as it
from spdc_forge import kernels
from spdc_forge.errors import ConfigError, NumericError

TABLE_I = (1386700, 1577124, 1593534, 1333374)


def brute_permanent(a):
    n = a.shape[0]
    return sum(math.prod(a[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def enumerate_output(u, occ, mode):
    """Output distribution by expanding prod_j (sum_k U_kj a_k^dagger) over all photon routings."""
    photons = [m for m, k in enumerate(occ) for _ in range(k)]
    n_modes = u.shape[0]
    amp = defaultdict(complex)
    prob = defaultdict(float)
    for route in itertools.product(range(n_modes), repeat=len(photons)):
        key = [0] * n_modes
        for k in route:
            key[k] += 1
        key = tuple(key)
        terms = [u[k, j] for k, j in zip(route, photons)]
        amp[key] += math.prod(terms)
        prob[key] += math.prod(abs(t) ** 2 for t in terms)
    if mode == "distinguishable":
        return dict(prob)
    norm_in = math.prod(math.factorial(k) for k in occ)
    return {m: abs(a) ** 2 * math.prod(math.factorial(k) for k in m) / norm_in for m, a in amp.items()}


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_permanent_matches_brute_force(n, rng):
    for _ in range(20):
        a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        ref = brute_permanent(a)
        assert abs(kernels.permanent(a) - ref) <= 1e-10 * max(1.0, abs(ref))
        assert abs(kernels.python_backend.permanent(a) - ref) <= 1e-10 * max(1.0, abs(ref))


def test_permanent_known_values():
    assert kernels.permanent(np.ones((4, 4))) == pytest.approx(24.0)
    assert kernels.permanent(np.eye(5)) == pytest.approx(1.0)
    assert kernels.permanent(np.zeros((0, 0))) == 1.0


@pytest.mark.parametrize("mode", ["indistinguishable", "distinguishable"])
@pytest.mark.parametrize("occ", [(1, 1, 0, 0), (2, 1, 0, 0), (1, 1, 1, 1), (2, 0, 0, 2)])
def test_patterns_match_enumeration(mode, occ, rng):
    u = unitary_group.rvs(4, random_state=rng)
    ref = enumerate_output(u, occ, mode)
    got = it.transition_probabilities(u, occ, mode)
    for key, p in ref.items():
        assert got[key] == pytest.approx(p, abs=1e-12)
    assert sum(got.values()) == pytest.approx(1.0, abs=1e-12)


def test_hom_null():
    u = it.fbs_unitary(0.5)
    assert it.coincidence_probability(u, (1, 1), "indistinguishable", detectors=(0, 1)) == pytest.approx(0.0, abs=1e-15)
    assert it.coincidence_probability(u, (1, 1), "distinguishable", detectors=(0, 1)) == pytest.approx(0.5)


def test_network_unitarity_and_layout():
    net = it.embed_losses(it.core_unitary(0.4964), (0.46, 0.47), (0.45, 0.44), (0.97, 0.96))
    assert net.n_modes == 10
    assert net.unitarity_residual() < 1e-12
    # a herald photon survives with its efficiency
    probs = it.transition_probabilities(net, [1, 0, 0, 0])
    surv = sum(p for m, p in probs.items() if m[0] == 1)
    assert surv == pytest.approx(0.46, abs=1e-12)


def test_fbs_path_efficiency():
    net = it.embed_losses(it.core_unitary(0.5), fbs_in=(0.5, 1.0), fbs_out=(0.8, 0.9))
    probs = it.transition_probabilities(net, [0, 1, 0, 0])
    p1 = sum(p for m, p in probs.items() if m[1] == 1)
    p2 = sum(p for m, p in probs.items() if m[2] == 1)
    assert p1 == pytest.approx(0.5 * 0.5 * 0.8)
    assert p2 == pytest.approx(0.5 * 0.5 * 0.9)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.3, 0.7), st.lists(st.floats(0.2, 1.0), min_size=6, max_size=6),
       st.sampled_from([(1, 1, 1, 1), (2, 1, 1, 0), (1, 2, 1, 1)]))
def test_closure_and_gram_route(tau, effs, occ):
    net = it.embed_losses(it.core_unitary(tau), effs[:2], effs[2:4], effs[4:])
    for mode in ("indistinguishable", "distinguishable"):
        probs = it.transition_probabilities(net, occ, mode)
        assert sum(probs.values()) == pytest.approx(1.0, abs=1e-8)
        direct = it.coincidence_probability(net, occ, mode)
        assert it.coincidence_probability_gram(net, occ, mode) == pytest.approx(direct, abs=1e-12)


def test_photon_budget():
    net = it.embed_losses(it.core_unitary(0.5))
    with pytest.raises(ConfigError):
        it.coincidence_probability(net, [3, 3, 2, 1])


def test_non_unitary_core_rejected():
    with pytest.raises(ConfigError):
        it.embed_losses(np.ones((4, 4)))
    with pytest.raises(ConfigError):
        it.embed_losses(it.core_unitary(0.5), herald=(1.2, 1.0))


def test_splitting_ratio_table():
    est = it.splitting_ratio(*TABLE_I)
    assert est.tau == pytest.approx(0.4964, abs=0.0002)
    assert est.rho == pytest.approx(0.5036, abs=0.0002)
    assert it.splitter_limited_visibility(est.tau) == pytest.approx(0.99990, abs=1e-5)


def test_splitting_ratio_loss_invariance():
    # C_ij picks up a_i b_j from input and output efficiencies; F and tau do not
    c11, c22, c12, c21 = TABLE_I
    a1, a2, b1, b2 = 0.7, 0.9, 0.55, 0.8
    ref = it.splitting_ratio(c11, c22, c12, c21)
    lossy = it.splitting_ratio(c11 * a1 * b1, c22 * a2 * b2, c12 * a1 * b2, c21 * a2 * b1)
    assert lossy.tau == pytest.approx(ref.tau, rel=1e-12)


def test_splitting_ratio_poisson_coverage():
    # the propagated sigma_tau covers the truth in ~95% of Poisson replicates
    rng = np.random.default_rng(7)
    tau, eta = 0.4964, (0.8, 0.9)
    n = 20000.0
    mean = (n * (1 - tau) * eta[0], n * (1 - tau) * eta[1], n * tau * eta[1], n * tau * eta[0])
    hits = 0
    trials = 400
    for _ in range(trials):
        c11, c22, c12, c21 = rng.poisson(mean)
        est = it.splitting_ratio(c11, c22, c12, c21)
        hits += abs(est.tau - tau) <= 1.96 * est.sigma_tau
    assert 0.92 <= hits / trials <= 0.98


def test_splitting_ratio_needs_counts():
    with pytest.raises(ConfigError):
        it.splitting_ratio(0, 1, 1, 1)


def test_fringe_visibility_balanced():
    assert it.fringe_visibility(1.0, 1.0, 0.5, 0.5) == pytest.approx(1.0)
    assert it.fringe_visibility(2.0, 1.0, 0.5, 0.5) == pytest.approx(2 * math.sqrt(2) / 3)


def test_fringe_mc_matches_quadrature():
    est = it.splitting_ratio(*TABLE_I)
    mc = it.fringe_mc(6.6, 0.3, est.tau, est.rho, 50000, seed=1)
    exact = it.expected_fringe_visibility(6.6, 0.3, est.tau, est.rho)
    assert mc.mean == pytest.approx(exact, abs=4 * mc.sd / math.sqrt(50000))


def test_calibration_inverts_expectation():
    est = it.splitting_ratio(*TABLE_I)
    ia = it.calibrate_i_avg(0.9992, 0.3, est.tau, est.rho)
    assert it.expected_fringe_visibility(ia, 0.3, est.tau, est.rho) == pytest.approx(0.9992, abs=1e-9)
    with pytest.raises(ConfigError):
        it.calibrate_i_avg(1.0, 0.3, est.tau, est.rho)


def test_fringe_mc_mismatch_too_large():
    with pytest.raises(NumericError):
        it.fringe_mc(0.1, 1.0, 0.5, 0.5, 1000, seed=0)


def test_pair_number_pmf():
    p = 0.01
    n = np.arange(200)
    assert it.pair_number_pmf(p, n).sum() == pytest.approx(1.0)
    assert it.pmf_truncation_remainder(p, 4) == pytest.approx(1 - it.pair_number_pmf(p, np.arange(5)).sum())


def test_source_from_rates():
    src = it.SourceModel.from_rates()
    assert src.p_per_mw == pytest.approx(8500 * 9600 / 4200 / 76e6)
    assert src.herald_efficiency == pytest.approx(4200 / math.sqrt(8500 * 9600))
    with pytest.raises(ConfigError):
        src.p(1e6)


def test_multipair_visibility_decreases_linearly():
    src = it.SourceModel.from_rates()
    curve = it.visibility_vs_power([1.0, 3.0, 5.0, 7.0], src, 0.4964)
    assert curve.slope_per_mw < 0
    assert np.all(np.diff(curve.visibility) < 0)
    resid = curve.visibility - (curve.intercept + curve.slope_per_mw * curve.power_mw)
    assert np.max(np.abs(resid)) < 2e-5


def test_multipair_low_power_limit():
    # with vanishing p only the one-pair-per-source term survives: V -> splitter limit
    src = it.SourceModel(1e-7, 0.5, 0.5)
    net = it.build_network(0.4964, src)
    v = it.multipair_visibility(net, src.p(1.0)).visibility
    assert v == pytest.approx(it.splitter_limited_visibility(0.4964), abs=1e-5)


def test_multipair_mc_seeded():
    src = it.SourceModel.from_rates()
    est = it.splitting_ratio(*TABLE_I)
    a = it.multipair_mc(5.8, src, est, trials=4, seed=3)
    b = it.multipair_mc(5.8, src, est, trials=4, seed=3)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_budget():
    assert it.visibility_budget(0.9984, 0.9974, 0.99698) == pytest.approx(0.9928, abs=2e-4)
    with pytest.raises(ConfigError):
        it.visibility_budget(1.2)


def test_dip_exact_recovery():
    d = it.synthetic_dip(noise=False)
    fit = it.fit_dip(d, n_boot=0)
    assert fit.visibility == pytest.approx(0.985, abs=1e-8)
    assert fit.width == pytest.approx(2.0, abs=1e-6)


def test_dip_with_drift():
    d = it.synthetic_dip(slope=0.01, noise=False, baseline=3000.0)
    fit = it.fit_dip(d, "gauss-linear", n_boot=0)
    assert fit.visibility == pytest.approx(0.985, abs=1e-6)
    assert fit.slope == pytest.approx(0.01, abs=1e-8)


def test_dip_bootstrap_ci_contains_estimate():
    fit = it.fit_dip(it.synthetic_dip(seed=3), n_boot=60, seed=4)
    assert fit.ci[0] <= fit.visibility <= fit.ci[1]
    assert 0 < fit.sigma_visibility < 0.05


def test_dip_csv_roundtrip(tmp_path):
    d = it.synthetic_dip(seed=1)
    p = tmp_path / "dip.csv"
    d.to_csv(p)
    p.write_text("# config_hash=1\n" + p.read_text())
    back = it.DipDataset.from_csv(p)
    np.testing.assert_array_equal(back.counts, d.counts)


def test_dip_degenerate_plateau():
    x = np.linspace(-1, 1, 9)
    d = it.DipDataset(x, it.dip_model(x, 300, 0.9, 0, 2.0))
    with pytest.raises(NumericError):
        it.fit_dip(d, n_boot=0)


def test_dip_input_validation():
    with pytest.raises(ConfigError):
        it.DipDataset([0, 0, 1], [1, 2, 3])
    with pytest.raises(ConfigError):
        it.fit_dip(it.synthetic_dip(), model="lorentz")


def test_model_free_visibility():
    d = it.synthetic_dip(noise=False)
    assert it.model_free_visibility(d) == pytest.approx(0.985, abs=1e-6)
