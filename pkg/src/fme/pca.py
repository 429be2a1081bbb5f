"""Principal-components estimation of loadings and factors."""
from __future__ import annotations

import numpy as np

from .model import (
    DegenerateModelError,
    FactorModelFit,
    InputError,
    as_panel,
    sample_covariance,
    top_r_eigen,
)


def check_rank(panel, r: int) -> int:
    r = int(r)
    if r < 1 or r >= min(panel.n, panel.T):
        raise InputError(f"need 1 <= r < min(n, T) = {min(panel.n, panel.T)}, got r={r}")
    return r


def pc_components(panel, r: int):
    """Return (eigenvalues, eigenvectors, loadings, eigen warnings) of the sample covariance."""
    panel = as_panel(panel)
    r = check_rank(panel, r)
    eig = top_r_eigen(sample_covariance(panel), r)
    mu = eig.eigenvalues
    if np.any(mu <= 0):
        raise DegenerateModelError(f"top-{r} sample eigenvalues must be positive, got {mu}")
    return mu, eig.eigenvectors, eig.eigenvectors * np.sqrt(mu), eig.warnings


def fit_pc(panel, r: int) -> FactorModelFit:
    """Loadings ``V M^{1/2}`` from the n x n covariance; factors ``X V M^{-1/2}``."""
    panel = as_panel(panel)
    mu, vec, loadings, notes = pc_components(panel, r)
    x = panel.values
    factors = (x @ vec) / np.sqrt(mu)
    resid = x - factors @ loadings.T
    return FactorModelFit(
        loadings=loadings,
        idio_variances=np.mean(resid**2, axis=0),
        factors=factors,
        residuals=resid,
        r=int(r),
        method="PC",
        diagnostics={"eigenvalues": mu.tolist(), "eigen_warnings": list(notes)},
        column_means=panel.column_means,
        names=panel.names,
    )


def pc_loadings_via_factors(panel, r: int) -> tuple[np.ndarray, np.ndarray]:
    """T x T route: factors as sqrt(T)-scaled eigenvectors of XX'/T, loadings by projection.

    Only used to cross-check :func:`fit_pc`; signs follow the loadings convention.
    """
    panel = as_panel(panel)
    x = panel.values
    eig = top_r_eigen(x @ x.T / x.shape[0], check_rank(panel, r))
    factors = np.sqrt(x.shape[0]) * eig.eigenvectors
    loadings = x.T @ factors / x.shape[0]
    for j in range(loadings.shape[1]):
        nz = np.flatnonzero(np.abs(loadings[:, j]) >= 1e-12)
        if nz.size and loadings[nz[0], j] < 0:
            loadings[:, j] *= -1
            factors[:, j] *= -1
    return loadings, factors
