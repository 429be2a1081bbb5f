import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from fme.model import DegenerateModelError, InputError, PanelData
from fme.pca import fit_pc
from fme.qml import (
    EmConfig,
    em_step,
    fit_qml_em,
    fit_qml_homoskedastic,
    fit_qml_unrestricted,
    identify_rotation,
    loglik_direct,
    loglik_exact_diag,
    score_loadings,
)
from fme.simulate import DgpConfig, simulate_panel

seeds = st.integers(0, 2**32 - 1)


def instance(seed, T=30, n=8, r=2):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(T, r)) @ rng.normal(size=(n, r)).T + rng.normal(size=(T, n)) * rng.uniform(0.5, 2, n)
    return x, rng.normal(size=(n, r)), rng.uniform(0.3, 3.0, n)


def panel_with_covariance(cov, T, seed=0):
    """Panel whose sample covariance X'X/T equals ``cov`` up to rounding."""
    n = cov.shape[0]
    q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(T, n)))
    w, v = np.linalg.eigh(cov)
    return np.sqrt(T) * q @ (v * np.sqrt(np.maximum(w, 0))) @ v.T


def stationary_point(seed, n=6, r=2, T=20):
    rng = np.random.default_rng(seed)
    lam = rng.normal(size=(n, r))
    sig = rng.uniform(0.5, 2.0, n)
    x = panel_with_covariance(lam @ lam.T + np.diag(sig), T, seed)
    return x, lam, sig


# log-likelihood


def test_loglik_no_factors_zero_data():
    assert loglik_exact_diag(np.zeros((2, 1)), np.zeros((1, 0)), np.ones(1)) == 0.0


def test_loglik_two_by_two_example():
    # Omega = diag(2, 1): -(1/2) log 2 - (1/2)(1/2 + 1)
    val = loglik_exact_diag(np.array([[1.0, 1.0]]), np.array([[1.0], [0.0]]), np.ones(2))
    assert val == pytest.approx(-0.5 * np.log(2) - 0.75, abs=1e-14)
    assert round(val, 4) == -1.0966


def test_loglik_rejects_nonpositive_variance():
    with pytest.raises(InputError):
        loglik_exact_diag(np.ones((3, 2)), np.ones((2, 1)), np.array([1.0, 0.0]))


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(2, 50), st.integers(1, 3))
def test_loglik_woodbury_matches_direct(seed, n, r):
    x, lam, sig = instance(seed, T=25, n=n, r=r)
    a, b = loglik_exact_diag(x, lam, sig), loglik_direct(x, lam, sig)
    assert abs(a - b) <= 1e-10 * abs(b)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_loglik_rotation_invariant(seed):
    x, lam, sig = instance(seed)
    q = ortho_group.rvs(2, random_state=seed % 2**31)
    assert loglik_exact_diag(x, lam @ q, sig) == pytest.approx(loglik_exact_diag(x, lam, sig), abs=1e-9, rel=1e-12)


# score


def finite_difference_score(x, lam, sig):
    g = np.zeros_like(lam)
    for idx in np.ndindex(*lam.shape):
        h = 1e-6 * (1 + abs(lam[idx]))
        up, dn = lam.copy(), lam.copy()
        up[idx] += h
        dn[idx] -= h
        g[idx] = (loglik_exact_diag(x, up, sig) - loglik_exact_diag(x, dn, sig)) / (2 * h)
    return g


@pytest.mark.parametrize("seed", range(20))
def test_score_matches_finite_differences(seed):
    x, lam, sig = instance(seed)
    s = score_loadings(x, lam, sig)
    fd = finite_difference_score(x, lam, sig)
    assert np.all(np.abs(fd - s) <= 1e-4 * np.maximum(np.abs(s), 1e-2 * np.abs(s).max()))


def test_score_against_direct_formula():
    x, lam, sig = instance(3)
    T = x.shape[0]
    omega_inv = np.linalg.inv(lam @ lam.T + np.diag(sig))
    gx = x.T @ x / T
    expected = T * (omega_inv @ gx @ omega_inv @ lam - omega_inv @ lam)
    np.testing.assert_allclose(score_loadings(x, lam, sig), expected, rtol=1e-9, atol=1e-9)


def test_score_zero_at_stationary_point():
    x, lam, sig = stationary_point(1)
    assert np.abs(score_loadings(x, lam, sig)).max() <= 1e-8 * x.shape[0]


def test_score_zero_loadings():
    x, _, sig = instance(2)
    assert np.all(score_loadings(x, np.zeros((8, 2)), sig) == 0)


# EM


def test_em_fixed_point():
    x, lam, sig = stationary_point(4)
    lam2, sig2 = em_step(x, lam, sig)
    np.testing.assert_allclose(lam2, lam, atol=1e-9)
    np.testing.assert_allclose(sig2, sig, atol=1e-9)


def test_em_step_tiny_panel_by_hand():
    x = np.array([[1.0, 2.0], [-0.5, 0.3], [0.7, -1.1]])
    lam = np.array([[0.8], [0.4]])
    sig = np.array([0.5, 1.5])
    # scalar-factor formulas with an explicit 2 x 2 inverse
    omega = np.array([[0.64 + 0.5, 0.32], [0.32, 0.16 + 1.5]])
    det = omega[0, 0] * omega[1, 1] - omega[0, 1] ** 2
    inv = np.array([[omega[1, 1], -omega[0, 1]], [-omega[0, 1], omega[0, 0]]]) / det
    beta = lam[:, 0] @ inv
    m = np.array([beta @ xt for xt in x])
    s = 1 - beta @ lam[:, 0] + np.mean(m**2)
    sxm = np.array([np.mean(x[:, i] * m) for i in range(2)])
    lam_expected = sxm / s
    sig_expected = np.array([np.mean(x[:, i] ** 2) - lam_expected[i] * sxm[i] for i in range(2)])
    lam2, sig2 = em_step(x, lam, sig)
    np.testing.assert_allclose(lam2[:, 0], lam_expected, rtol=1e-12)
    np.testing.assert_allclose(sig2, sig_expected, rtol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_em_step_increases_likelihood(seed):
    x, lam, sig = instance(seed)
    before = loglik_exact_diag(x, lam, sig)
    lam2, sig2 = em_step(x, lam, sig)
    assert loglik_exact_diag(x, lam2, sig2) > before


def test_fit_qml_trace_and_identification():
    sim = simulate_panel(DgpConfig(n=40, T=80, seed=5))
    fit = fit_qml_em(sim.panel, 2)
    d = fit.diagnostics
    assert d["converged"] and d["rotation_applied"]
    assert np.all(np.diff(d["loglik_trace"]) >= -1e-10 * np.abs(d["loglik_trace"]).max())
    g = fit.loadings.T @ fit.loadings / 40
    assert abs(g[0, 1]) <= 1e-8 * g[0, 0]
    assert g[0, 0] > g[1, 1]
    assert np.all(fit.loadings[0] > 0)
    np.testing.assert_array_equal(fit.residuals, sim.panel.values - fit.factors @ fit.loadings.T)
    assert np.all(fit.idio_variances > 0)
    assert d["foc_residual"] < 1e-3


def test_fit_qml_converged_foc_small_with_tight_tolerance():
    sim = simulate_panel(DgpConfig(n=30, T=100, seed=9))
    fit = fit_qml_em(sim.panel, 2, EmConfig(loglik_rel_tol=1e-14, max_iterations=20000))
    assert fit.diagnostics["foc_residual"] < 1e-6


def test_fit_qml_noiseless_spherical_equals_pc():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(60, 2)) @ rng.normal(size=(15, 2)).T
    fit = fit_qml_em(x, 2)
    np.testing.assert_allclose(fit.loadings, fit_pc(x, 2).loadings, atol=1e-6)


def test_fit_qml_nonconvergence_is_flagged():
    sim = simulate_panel(DgpConfig(n=30, T=60, seed=2))
    fit = fit_qml_em(sim.panel, 2, EmConfig(max_iterations=1, loglik_rel_tol=1e-15))
    assert fit.diagnostics["converged"] is False
    assert fit.diagnostics["iterations"] == 1


def test_em_config_validation():
    with pytest.raises(InputError):
        EmConfig(max_iterations=0)
    with pytest.raises(InputError):
        EmConfig(loglik_rel_tol=0.0)


# homoskedastic closed form


def test_homoskedastic_formula_arithmetic():
    v = ortho_group.rvs(4, random_state=1)
    x = panel_with_covariance((v * [10.0, 5.0, 2.0, 2.0]) @ v.T, 20)
    fit = fit_qml_homoskedastic(x, 2)
    assert fit.diagnostics["sigma2"] == pytest.approx(2.0, abs=1e-10)
    np.testing.assert_allclose(np.linalg.norm(fit.loadings, axis=0), [np.sqrt(8), np.sqrt(3)], rtol=1e-10)
    pc = fit_pc(x, 2)
    np.testing.assert_allclose(fit.loadings / np.linalg.norm(fit.loadings, axis=0),
                               pc.loadings / np.linalg.norm(pc.loadings, axis=0), atol=1e-10)


def test_homoskedastic_noiseless_is_pc():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(30, 2)) @ rng.normal(size=(6, 2)).T
    fit = fit_qml_homoskedastic(x, 2)
    assert fit.diagnostics["sigma2"] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(fit.loadings, fit_pc(x, 2).loadings, rtol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_homoskedastic_matches_full_spectrum_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(50, 2)) @ (3 * rng.normal(size=(10, 2))).T + rng.normal(size=(50, 10))
    w, v = np.linalg.eigh(x.T @ x / 50)
    w, v = w[::-1], v[:, ::-1]
    s2 = w[2:].mean()
    expected = v[:, :2] * np.sign(v[0, :2]) * np.sqrt(w[:2] - s2)
    fit = fit_qml_homoskedastic(x, 2)
    np.testing.assert_allclose(fit.loadings, expected, atol=1e-10)
    assert fit.diagnostics["sigma2"] == pytest.approx(s2, rel=1e-12)


def test_homoskedastic_recovers_sigma2_from_analytic_covariance():
    rng = np.random.default_rng(4)
    lam = rng.normal(size=(8, 2))
    x = panel_with_covariance(lam @ lam.T + 0.7 * np.eye(8), 40)
    assert fit_qml_homoskedastic(x, 2).diagnostics["sigma2"] == pytest.approx(0.7, abs=1e-6)


def test_homoskedastic_without_factor_structure_errors():
    x = panel_with_covariance(np.eye(4), 10)
    with pytest.raises(DegenerateModelError):
        fit_qml_homoskedastic(x, 1)


def test_homoskedastic_distance_to_pc_shrinks_with_n():
    def dist(n):
        out = []
        for b in range(30):
            rng = np.random.default_rng(500 + b)
            x = rng.normal(size=(100, 2)) @ rng.normal(1, 1, size=(n, 2)).T + rng.normal(size=(100, n))
            out.append(np.max(np.linalg.norm(fit_qml_homoskedastic(x, 2).loadings - fit_pc(x, 2).loadings, axis=1)))
        return np.mean(out)

    assert dist(200) < 0.5 * dist(50)


# unrestricted characterization


@pytest.mark.parametrize("seed", range(5))
def test_unrestricted_characterization(seed):
    x, _, _ = instance(seed, T=40, n=10)
    fit = fit_qml_unrestricted(x, 2)
    pc = fit_pc(x, 2)
    assert np.array_equal(fit.loadings, pc.loadings)
    np.testing.assert_allclose(fit.idio_variances, np.mean(pc.residuals**2, axis=0), atol=1e-8)
    assert fit.diagnostics["foc_residual"] <= 1e-10
    assert fit.method == "QML_UNRESTRICTED"


# rotation


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_identify_rotation_properties(seed):
    rng = np.random.default_rng(seed)
    lam = rng.normal(size=(6, 2))
    out = identify_rotation(lam)
    np.testing.assert_allclose(out @ out.T, lam @ lam.T, atol=1e-10)
    g = out.T @ out
    assert abs(g[0, 1]) <= 1e-10 * g[0, 0]
    assert g[0, 0] >= g[1, 1]
    np.testing.assert_allclose(identify_rotation(out), out, atol=1e-12)
    q = ortho_group.rvs(2, random_state=seed % 2**31)
    np.testing.assert_allclose(identify_rotation(lam @ q), out, atol=1e-10)


def test_identify_rotation_rank_deficient():
    with pytest.raises(DegenerateModelError):
        identify_rotation(np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]))


def test_qml_pc_distance_bounded_after_n_squared_scaling():
    # mean of n^2 * per-entry squared distance stays bounded over n
    means = []
    for n in (50, 100, 200):
        vals = []
        for b in range(100):
            sim = simulate_panel(DgpConfig(n=n, T=100, seed=20_000 + b))
            pc = fit_pc(sim.panel, 2).loadings
            q = fit_qml_em(sim.panel, 2).loadings
            q = q * np.where(np.sum(q * pc, axis=0) < 0, -1, 1)
            vals.append(n**2 * np.mean((q - pc) ** 2))
        means.append(np.mean(vals))
    assert max(means) / min(means) < 5, means
