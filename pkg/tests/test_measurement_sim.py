import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from nhmetal.bloch_core import GridSpec, hamiltonian, spectrum
from nhmetal.errors import DegenerateCounts, NearEP, NotPassive, Overflow, ZeroDenominator
from nhmetal.measurement_sim import (
    GLOBAL, PASSIVE_SLACK, PER_K, R_PRIME, SWAP, T_PRIME, CountRecord, decompose, exact_counts, expm_scaled,
    gaps, global_log_lambda, ideal_probabilities, invert_counts, log_lambda, log_lambda_unconditioned,
    loss_operator, measure_band_structure, measure_point, passivity_shift, prepare_eigenstate,
    probabilities_from_e_prime, results_document, results_to_csv, sample_counts, unwrap_branches,
)
from nhmetal.models import ModelSpec

H1 = ModelSpec.h1()


def k_at_dx(dx):
    return np.array([np.arccos(1 - dx), 0.0])


def wrapped_close(a, b, tol):
    # compare complex numbers with real parts taken modulo 2 pi
    dre = (a.real - b.real + np.pi) % (2 * np.pi) - np.pi
    return abs(dre) < tol and abs(a.imag - b.imag) < tol


def unit(v):
    v = np.asarray(v, dtype=complex)
    return v / np.linalg.norm(v)


# -- passivity shift ---------------------------------------------------------------------

def test_hermitian_has_unit_lambda():
    sh = passivity_shift(ModelSpec.const((0.3, -0.2, 0.7)), (0.1, 0.2))
    assert abs(sh.lambda_cap - 1) < 1e-12 and abs(sh.d0) < 1e-12


def test_h1_origin_example():
    sh = passivity_shift(H1, (0.0, 0.0))
    assert abs(sh.log_lambda - 0.5) < 1e-14
    assert abs(sh.lambda_cap - np.exp(0.5)) < 1e-14
    assert abs(sh.d0 - (-0.25j)) < 1e-15
    dec = decompose(sh.evolution())
    assert abs(dec.l - np.exp(-0.5)) < 1e-12 and abs(dec.global_attenuation - 1) < 1e-12
    assert np.linalg.norm(dec.reconstruct() - sh.evolution()) < 1e-12


def test_shift_preserves_eigenvectors():
    sh = passivity_shift(H1, (0.7, -1.1))
    a, b = spectrum(sh.h), spectrum(sh.h_prime)
    assert abs(b.ePlus - a.ePlus - sh.d0) < 1e-14 and abs(b.eMinus - a.eMinus - sh.d0) < 1e-14
    for u, v in ((a.psiPlus, b.psiPlus), (a.psiMinus, b.psiMinus)):
        assert abs(abs(np.vdot(u, v)) - 1) < 1e-12
    assert np.array_equal(sh.h_prime, sh.h + sh.d0 * np.eye(2))


def test_expm_scaled_matches_scipy(rng):
    for _ in range(50):
        h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        mu = rng.uniform(-2, 2)
        assert np.allclose(expm_scaled(h, mu), scipy.linalg.expm(-1j * h) * np.exp(-mu), atol=1e-12, rtol=1e-12)
    # near-degenerate branch of the closed form
    h = np.array([[0.3, 1e-9], [0, 0.3]], dtype=complex)
    assert np.allclose(expm_scaled(h, 0.0), scipy.linalg.expm(-1j * h), atol=1e-15)


def test_log_domain_matches_direct_path(rng):
    for _ in range(30):
        h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        assert abs(log_lambda(h) - log_lambda_unconditioned(h)) < 1e-10
        direct = np.linalg.svd(scipy.linalg.expm(-1j * h), compute_uv=False)[0] ** 2
        assert abs(log_lambda(h) - np.log(direct)) < 1e-10


def test_strong_gain_log_domain_and_overflow():
    h = hamiltonian(np.array([0, 0, 1000j]))
    assert abs(log_lambda(h) - 2000) < 1e-9
    with pytest.raises(Overflow):
        log_lambda_unconditioned(h)


@pytest.mark.parametrize("spec", [H1, ModelSpec.h2(0.4), ModelSpec.h2(1.42), ModelSpec.knot()])
def test_passivity_over_grid(spec):
    grid = GridSpec((12,) * spec.dimension)
    K = grid.mesh().reshape(-1, spec.dimension)
    glog = global_log_lambda(spec, grid)
    for mode in (PER_K, GLOBAL):
        for k in K[::7]:
            sh = passivity_shift(spec, k, mode, global_log=glog)
            s1 = np.linalg.svd(sh.evolution(), compute_uv=False)[0]
            assert np.isfinite(s1) and s1 <= 1 + PASSIVE_SLACK
            if mode == PER_K:
                assert abs(s1 - 1) < 1e-9


def test_global_shift_needs_grid():
    with pytest.raises(ValueError):
        passivity_shift(H1, (0, 0), GLOBAL)


# -- decomposition ------------------------------------------------------------------------

def test_decompose_identity():
    dec = decompose(np.eye(2))
    assert dec.l == 1 and dec.global_attenuation == 1
    assert np.allclose(dec.r2 @ loss_operator(1) @ dec.r1, np.eye(2), atol=1e-15)
    assert np.array_equal(loss_operator(1), SWAP)


def test_decompose_diagonal():
    u = np.diag([1, 0.5])
    dec = decompose(u)
    assert dec.l == 0.5 and np.allclose(dec.reconstruct(), u, atol=1e-15)


def test_decompose_not_passive():
    with pytest.raises(NotPassive):
        decompose(np.diag([1.01, 0.5]))


def test_decomposition_validity(rng):
    for _ in range(100):
        m = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        u = m / np.linalg.svd(m, compute_uv=False)[0] * rng.uniform(0.1, 1)
        dec = decompose(u)
        for r in (dec.r1, dec.r2):
            assert np.linalg.norm(r.conj().T @ r - np.eye(2)) < 1e-12
        assert 0 <= dec.l <= 1 and 0 < dec.global_attenuation <= 1
        assert np.linalg.norm(dec.reconstruct() - u) < 1e-10


# -- eigenstates and probabilities -------------------------------------------------------

def test_prepare_diagonal():
    sh = passivity_shift(ModelSpec.const((0, 0, 0.5)), (0, 0))
    assert np.allclose(prepare_eigenstate(sh, "+"), [1, 0])
    assert np.allclose(prepare_eigenstate(sh, "-"), [0, 1])


def test_prepare_matches_dense_eigensolve():
    sh = passivity_shift(H1, k_at_dx(0.5))
    w, V = np.linalg.eig(sh.h_prime)
    for band in "+-":
        psi = prepare_eigenstate(sh, band)
        assert abs(np.linalg.norm(psi) - 1) < 1e-14
        lead = psi[0] if abs(psi[0]) > 1e-12 else psi[1]
        assert lead.real > 0 and abs(lead.imag) < 1e-15
        lam = np.vdot(psi, sh.h_prime @ psi)
        assert np.linalg.norm(sh.h_prime @ psi - lam * psi) < 1e-13
        assert min(abs(lam - x) for x in w) < 1e-13


def test_prepare_near_ep():
    sh = passivity_shift(ModelSpec.const((0.25, 0, 0.25j)), (0, 0))
    with pytest.raises(NearEP):
        prepare_eigenstate(sh, "+")
    r = measure_point(ModelSpec.const((0.25, 0, 0.25j)), (0, 0), "+", noiseless=True)
    assert NearEP.code in r.flags


def test_probability_examples():
    p = ideal_probabilities([1, 0], 1.0)
    assert np.allclose(p.as_tuple(), np.array([1, 1, 2, 1]) / 2) and p.arm_weight == 1
    p = probabilities_from_e_prime([1, 0], -1j * np.log(2))
    assert np.allclose(p.as_tuple(), np.array([1, 1 / 4, 9 / 8, 5 / 8]) / 2)
    q = ideal_probabilities(unit([1, 2]), 0.5, R_PRIME)
    assert np.allclose(q.as_tuple(), np.array([1 / 4, 1, 9 / 8, 5 / 8]) / 2) and abs(q.arm_weight - 0.8) < 1e-15


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_probability_reconstruction_identity(re, im):
    z = np.exp(-1j * complex(re, im))
    p = ideal_probabilities([1, 0], z)
    assert abs((2 * p.pPlus - p.pH - p.pV) / (2 * p.pH) - z.real) < 1e-9 * max(1, abs(z))
    assert abs((p.pH + p.pV - 2 * p.pR) / (2 * p.pH) - z.imag) < 1e-9 * max(1, abs(z))


# -- counts and inversion ----------------------------------------------------------------

def test_law_of_large_numbers():
    p = probabilities_from_e_prime(unit([1, 0.5j]), 0.4 - 0.1j)
    c = sample_counts(p, 1e6, np.random.default_rng(1))
    w = p.arm_weight * np.array(p.as_tuple())
    assert np.all(np.abs(np.array(c.as_tuple()) / 1e6 / w - 1) < 0.01)


def test_sampling_deterministic():
    p = probabilities_from_e_prime([1, 0], 0.3)
    a = sample_counts(p, 1e4, np.random.default_rng(7))
    b = sample_counts(p, 1e4, np.random.default_rng(7))
    assert a == b and all(isinstance(x, int) for x in a.as_tuple())


def test_tiny_total_rejected():
    p = probabilities_from_e_prime([1, 0], 0.3)
    rng = np.random.default_rng(0)
    records = [sample_counts(p, 1e-4, rng) for _ in range(200)]
    zero = [r for r in records if r.nH == 0]
    assert zero
    with pytest.raises(ZeroDenominator):
        invert_counts(zero[0])
    with pytest.raises(ValueError):
        sample_counts(p, 0, rng)


def test_degenerate_counts():
    with pytest.raises(DegenerateCounts):
        invert_counts(CountRecord(10, 0, 5, 5, T_PRIME, 10))
    with pytest.raises(DegenerateCounts):
        invert_counts(CountRecord(0, 10, 5, 5, R_PRIME, 10))
    with pytest.raises(ZeroDenominator):
        invert_counts(CountRecord(5, 0, 5, 5, R_PRIME, 10))


def test_invert_unit_amplitude():
    for c in (1, 17, 1000):
        r = invert_counts(CountRecord(c, c, 2 * c, c, T_PRIME, 4 * c))
        assert r.e_prime == 0


@settings(max_examples=1000)
@given(st.floats(0, 2 * np.pi), st.floats(0.05, 1.0), st.floats(-np.pi, np.pi), st.floats(-2.0, 2.0),
       st.sampled_from([T_PRIME, R_PRIME]))
def test_round_trip_exact(phase, ratio, re, im, arm):
    psi = unit([1, ratio * np.exp(1j * phase)]) if arm == T_PRIME else unit([ratio * np.exp(1j * phase), 1])
    e0 = complex(re, im)
    r = invert_counts(exact_counts(probabilities_from_e_prime(psi, e0, arm), 1e4))
    assert wrapped_close(r.e_prime, e0, 1e-12 * max(1, np.exp(abs(im))))
    assert -np.pi < r.e_prime.real <= np.pi


# -- full pipeline -----------------------------------------------------------------------

def random_model_points(n, seed=11):
    rng = np.random.default_rng(seed)
    models = [H1, ModelSpec.h2(0.4), ModelSpec.h2(1.42), ModelSpec.h1((0, 1j * np.pi / 20, 0)),
              ModelSpec.h1((0.1, 0, 0.2)), ModelSpec.h2(np.sqrt(6) - 1, (0.05, 0.02j, 0))]
    for i in range(n):
        yield models[i % len(models)], rng.uniform(-np.pi, np.pi, 2)


def test_noiseless_matches_bloch_core():
    for spec, k in random_model_points(100):
        dR, dI = spec.bloch(k)
        sp = spectrum(hamiltonian(dR + 1j * dI))
        for band, ref in (("+", sp.ePlus), ("-", sp.eMinus)):
            r = measure_point(spec, k, band, noiseless=True)
            assert r.ok and r.flags == []
            assert wrapped_close(r.e_recovered, ref, 1e-10)
            assert r.e_recovered == r.e_prime - r.d0


def test_h1_gap_crossover():
    rows = gaps(measure_band_structure(H1, [k_at_dx(dx) for dx in np.linspace(0, 1, 11)], 1e4, seed=5))
    for dx, (k, gap, ere, eim) in zip(np.linspace(0, 1, 11), rows):
        exact = 2 * np.sqrt(complex(dx * dx - 1 / 16))
        # the band labelling may swap across the ring, so compare magnitudes
        assert abs(abs(gap) - abs(exact)) < 5 * np.hypot(ere, eim)
        if dx > 0.3:
            assert abs(gap.real) > abs(gap.imag)
        elif dx < 0.2:
            assert abs(gap.imag) > abs(gap.real)


def test_shift_modes_agree_noiseless():
    grid = GridSpec((16, 16))
    for spec in (H1, ModelSpec.h2(0.4), ModelSpec.h2(1.42)):
        K = np.random.default_rng(2).uniform(-np.pi, np.pi, (15, 2))
        a = measure_band_structure(spec, K, noiseless=True, shift_mode=PER_K)
        b = measure_band_structure(spec, K, noiseless=True, shift_mode=GLOBAL, grid=grid)
        compared = 0
        for ra, rb in zip(a, b):
            if rb.flags:
                continue
            compared += 1
            assert wrapped_close(ra.e_recovered, rb.e_recovered, 1e-10)
        assert compared >= 20


def test_knot_global_shift_degenerate_per_k_gain_band_ok():
    spec = ModelSpec.knot()
    K = np.random.default_rng(0).uniform(-np.pi, np.pi, (20, 3))
    glob = measure_band_structure(spec, K, 1e4, seed=3, shift_mode=GLOBAL, grid=GridSpec((24, 24, 24)))
    assert sum(DegenerateCounts.code in r.flags for r in glob) > 0.75 * len(glob)
    perk = measure_band_structure(spec, K, 1e4, seed=3, shift_mode=PER_K)
    for ik, k in enumerate(K):
        dR, dI = spec.bloch(k)
        sp = spectrum(hamiltonian(dR + 1j * dI))
        gain = "+" if sp.ePlus.imag >= sp.eMinus.imag else "-"
        r = perk[2 * ik + (0 if gain == "+" else 1)]
        assert r.ok and not r.flags
        ref = sp.ePlus if gain == "+" else sp.eMinus
        assert wrapped_close(r.e_recovered, ref, 6 * r.stderr_estimate)


def test_seeded_batches_reproducible_and_thread_independent():
    K = [k_at_dx(dx) for dx in np.linspace(0, 1, 6)]
    a = measure_band_structure(H1, K, seed=9)
    b = measure_band_structure(H1, K, seed=9, threads=4)
    c = measure_band_structure(H1, K, seed=10)
    assert results_to_csv(a) == results_to_csv(b) != results_to_csv(c)
    doc = results_document(a, H1, 9)
    assert doc["seed"] == 9 and doc["model"]["family"] == "H1" and len(doc["results"]) == 12


def test_unwrap_branches_continuity():
    res = []
    for i, shift in enumerate(np.linspace(0, 3 * np.pi, 40)):
        r = measure_point(ModelSpec.const((shift, 0, 0)), (0, 0), "+", noiseless=True, ik=i)
        res.append(r)
    unwrap_branches(res)
    re = np.array([r.e_prime.real for r in res])
    assert np.all(np.abs(np.diff(re)) < 1.0)
    assert any(r.branch_index != 0 for r in res)


def test_statistics_h1_dx_half():
    k = k_at_dx(0.5)
    exact = 2 * np.sqrt(0.25 - 1 / 16)
    g, re_plus, se_plus = [], [], []
    for t in range(500):
        rp = measure_point(H1, k, "+", 1e4, seed=20, trial=t)
        rm = measure_point(H1, k, "-", 1e4, seed=20, trial=t)
        g.append((rp.e_recovered - rm.e_recovered).real)
        re_plus.append(rp.e_prime.real)
        se_plus.append(rp.stderr_re)
    g = np.array(g)
    assert abs(g.mean() - exact) < 3 * g.std(ddof=1) / np.sqrt(len(g))
    ratio = np.std(re_plus, ddof=1) / np.mean(se_plus)
    assert 1 / 1.5 < ratio < 1.5
