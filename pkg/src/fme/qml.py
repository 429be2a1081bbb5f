"""Quasi maximum likelihood estimation of the loadings.

All inverses of ``Omega = LL' + S`` (S diagonal) go through the Woodbury identity,
so an evaluation costs O(nTr + nr^2) and no n x n matrix is formed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .factors import factors_gls, factors_ols
from .model import (
    DegenerateModelError,
    FactorModelFit,
    InputError,
    as_matrix,
    as_panel,
    fix_signs,
    sample_covariance,
)
from .pca import check_rank, fit_pc, pc_components

log = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-10


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 1000
    loglik_rel_tol: float = 1e-8
    foc_tol: float = 1e-6
    # relative to the mean sample variance of the panel
    variance_floor: float = 1e-8
    init: str = "PC"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InputError("max_iterations must be >= 1")
        for name in ("loglik_rel_tol", "foc_tol", "variance_floor"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be > 0")
        if self.init not in ("PC", "PROVIDED"):
            raise InputError(f"init must be PC or PROVIDED, got {self.init!r}")


@dataclass
class QmlDiagnostics:
    loglik_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    foc_residual: float = float("nan")
    rotation_applied: bool = False
    warnings: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "loglik_trace": [float(v) for v in self.loglik_trace],
            "iterations": self.iterations,
            "converged": self.converged,
            "foc_residual": float(self.foc_residual),
            "rotation_applied": self.rotation_applied,
            "warnings": list(self.warnings),
        }


def _params(panel, loadings, idio_variances):
    x = as_matrix(panel)
    lam = np.asarray(loadings, dtype=float).reshape(x.shape[1], -1)
    sig = np.asarray(idio_variances, dtype=float)
    if sig.shape != (x.shape[1],):
        raise InputError("idio_variances must have one entry per series")
    if np.any(~(sig > 0)):
        raise InputError("idio_variances must be strictly positive")
    return x, lam, sig


def _woodbury(lam, sig):
    """Return ``S^-1 L``, ``L'S^-1 L`` and ``G = (I + L'S^-1 L)^-1``."""
    w = lam / sig[:, None]
    a = lam.T @ w
    g = linalg.inv(np.eye(lam.shape[1]) + a)
    return w, a, 0.5 * (g + g.T)


def loglik_exact_diag(panel, loadings, idio_variances) -> float:
    """Gaussian log-likelihood of an exact factor model with diagonal idiosyncratic covariance.

    The additive constant ``-nT/2 log(2 pi)`` is omitted.
    """
    x, lam, sig = _params(panel, loadings, idio_variances)
    T = x.shape[0]
    quad = np.sum(x**2 / sig)
    logdet = np.sum(np.log(sig))
    if lam.shape[1]:
        w, a, g = _woodbury(lam, sig)
        y = x @ w
        quad -= np.sum((y @ g) * y)
        logdet += np.linalg.slogdet(np.eye(lam.shape[1]) + a)[1]
    return float(-0.5 * T * logdet - 0.5 * quad)


def loglik_direct(panel, loadings, idio_variances) -> float:
    """Same value as :func:`loglik_exact_diag` through an explicit n x n solve (test oracle)."""
    x, lam, sig = _params(panel, loadings, idio_variances)
    omega = lam @ lam.T + np.diag(sig)
    logdet = np.linalg.slogdet(omega)[1]
    quad = np.sum(x.T * linalg.solve(omega, x.T, assume_a="pos"))
    return float(-0.5 * x.shape[0] * logdet - 0.5 * quad)


def _omega_inv_apply(b, lam, sig, w, g):
    # (LL' + S)^-1 b = S^-1 b - S^-1 L G L' S^-1 b
    sb = b / sig[:, None]
    return sb - w @ (g @ (w.T @ b))


def score_loadings(panel, loadings, idio_variances) -> np.ndarray:
    """Gradient of :func:`loglik_exact_diag` with respect to the loadings (n x r)."""
    x, lam, sig = _params(panel, loadings, idio_variances)
    T = x.shape[0]
    w, _, g = _woodbury(lam, sig)
    oinv_lam = w @ g
    return _omega_inv_apply(x.T @ (x @ oinv_lam), lam, sig, w, g) - T * oinv_lam


def em_step(panel, loadings, idio_variances, variance_floor: float = 0.0):
    """One EM update for the exact factor model with diagonal idiosyncratic covariance."""
    x, lam, sig = _params(panel, loadings, idio_variances)
    T, r = x.shape[0], lam.shape[1]
    w, a, g = _woodbury(lam, sig)
    beta_t = w @ g                      # n x r, equals (LL'+S)^-1 L
    m = x @ beta_t                      # rows are E[f_t | x_t]'
    s = np.eye(r) - g @ a + m.T @ m / T
    s = 0.5 * (s + s.T)
    cxm = x.T @ m / T
    try:
        cho = linalg.cho_factor(s)
    except linalg.LinAlgError:
        raise DegenerateModelError("conditional factor second moment is singular") from None
    lam_new = linalg.cho_solve(cho, cxm.T).T
    sig_new = np.mean(x**2, axis=0) - np.sum(lam_new * cxm, axis=1)
    return lam_new, np.maximum(sig_new, variance_floor)


def identify_rotation(loadings) -> np.ndarray:
    """Rotate loadings to ``U D`` from the thin SVD, so ``L'L`` is diagonal and descending.

    ``LL'`` is unchanged; columns follow the first-nonzero-entry-positive sign rule.
    """
    lam = np.asarray(loadings, dtype=float)
    u, d, _ = linalg.svd(lam, full_matrices=False)
    if d.size == 0 or d[-1] < 1e-12 * d[0]:
        raise DegenerateModelError("loadings are rank deficient")
    return fix_signs(u) * d


def foc_residual(panel, loadings, idio_variances) -> float:
    x = as_matrix(panel)
    n, r = np.shape(loadings)
    return float(np.linalg.norm(score_loadings(panel, loadings, idio_variances)) / (x.shape[0] * np.sqrt(n * r)))


def fit_qml_em(panel, r: int, config: EmConfig | None = None, init_loadings=None, init_variances=None) -> FactorModelFit:
    """Maximize the diagonal exact-factor likelihood by EM started from the PC solution."""
    config = config or EmConfig()
    panel = as_panel(panel)
    r = check_rank(panel, r)
    x = panel.values
    floor = config.variance_floor * max(float(np.mean(x**2)), np.finfo(float).tiny)
    if config.init == "PROVIDED":
        if init_loadings is None or init_variances is None:
            raise InputError("init=PROVIDED needs init_loadings and init_variances")
        lam = np.array(init_loadings, dtype=float).reshape(panel.n, r)
        sig = np.maximum(np.array(init_variances, dtype=float), floor)
        notes = []
    else:
        pc = fit_pc(panel, r)
        lam, sig = pc.loadings, np.maximum(pc.idio_variances, floor)
        notes = list(pc.diagnostics["eigen_warnings"])

    diag = QmlDiagnostics(warnings=notes)
    ll = loglik_exact_diag(panel, lam, sig)
    diag.loglik_trace.append(ll)
    for it in range(1, config.max_iterations + 1):
        lam, sig = em_step(panel, lam, sig, floor)
        ll_new = loglik_exact_diag(panel, lam, sig)
        diag.loglik_trace.append(ll_new)
        diag.iterations = it
        if ll_new < ll - MONOTONE_SLACK * max(1.0, abs(ll)):
            diag.warnings.append(f"log-likelihood decreased at iteration {it}")
        change = abs(ll_new - ll) / max(abs(ll), np.finfo(float).tiny)
        ll = ll_new
        if change < config.loglik_rel_tol:
            diag.converged = True
            break
    if not diag.converged:
        log.warning("EM did not converge in %d iterations", config.max_iterations)
    if np.any(sig <= floor):
        diag.warnings.append(f"{int(np.sum(sig <= floor))} idiosyncratic variances at the floor")

    lam = identify_rotation(lam)
    diag.rotation_applied = True
    ssq = np.sum(lam**2, axis=0)
    if np.any(-np.diff(ssq) < 1e-8 * ssq[0]):
        diag.warnings.append("near-tied loading column norms; column order may be unstable")
    diag.foc_residual = foc_residual(panel, lam, sig)
    factors = factors_gls(panel, lam, sig)
    return FactorModelFit(
        loadings=lam,
        idio_variances=sig,
        factors=factors,
        residuals=x - factors @ lam.T,
        r=r,
        method="QML_EM",
        diagnostics=diag.as_dict(),
        column_means=panel.column_means,
        names=panel.names,
    )


def fit_qml_homoskedastic(panel, r: int) -> FactorModelFit:
    """Closed-form maximizer with spherical idiosyncratic covariance."""
    panel = as_panel(panel)
    r = check_rank(panel, r)
    x = panel.values
    mu_all = linalg.eigvalsh(sample_covariance(panel).matrix)[::-1]
    sigma2 = max(float(np.mean(mu_all[r:])), 0.0)
    mu, vec, _, notes = pc_components(panel, r)
    if np.any(mu - sigma2 <= 1e-10 * mu[0]):
        raise DegenerateModelError(
            f"no factor structure: top eigenvalues {mu} do not exceed the noise level {sigma2}"
        )
    lam = vec * np.sqrt(mu - sigma2)
    factors = factors_ols(panel, lam)
    return FactorModelFit(
        loadings=lam,
        idio_variances=np.full(panel.n, sigma2),
        factors=factors,
        residuals=x - factors @ lam.T,
        r=r,
        method="QML_HOMO",
        diagnostics={"sigma2": sigma2, "eigenvalues": mu.tolist(), "eigen_warnings": list(notes)},
        column_means=panel.column_means,
        names=panel.names,
    )


def fit_qml_unrestricted(panel, r: int) -> FactorModelFit:
    """Maximizer with unrestricted idiosyncratic covariance, via its closed-form characterization.

    Loadings are the PC loadings and the idiosyncratic covariance is ``Gx - LL'``.
    """
    panel = as_panel(panel)
    pc = fit_pc(panel, r)
    lam = pc.loadings
    gx = sample_covariance(panel).matrix
    common = lam @ lam.T
    gxi = gx - common
    gap = gx - common - gxi
    foc = np.linalg.norm(lam.T @ np.linalg.pinv(common + gxi, hermitian=True) @ gap)
    return FactorModelFit(
        loadings=lam,
        idio_variances=np.diag(gxi).copy(),
        factors=pc.factors,
        residuals=pc.residuals,
        r=pc.r,
        method="QML_UNRESTRICTED",
        diagnostics={
            "min_idio_eigenvalue": float(linalg.eigvalsh(gxi)[0]),
            "foc_residual": float(foc),
            "eigen_warnings": pc.diagnostics["eigen_warnings"],
        },
        column_means=panel.column_means,
        names=panel.names,
    )
