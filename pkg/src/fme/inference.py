"""HAC long-run covariance of the loading estimates, confidence intervals, score diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .model import FactorModelFit, InputError, as_matrix
from .qml import score_loadings

AUTO = "auto"


@dataclass(frozen=True)
class HacOptions:
    bandwidth: int | str = AUTO

    def __post_init__(self):
        bw = self.bandwidth
        if isinstance(bw, str):
            if bw.lower() != AUTO:
                raise InputError(f"bandwidth must be a non-negative integer or 'auto', got {bw!r}")
        elif int(bw) != bw or bw < 0:
            raise InputError(f"bandwidth must be a non-negative integer, got {bw!r}")

    def resolve(self, T: int) -> int:
        if isinstance(self.bandwidth, str):
            return int(math.floor(4 * (T / 100) ** (2 / 9)))
        return int(self.bandwidth)


@dataclass(frozen=True)
class HacCovariance:
    per_series: np.ndarray  # n x r x r
    bandwidth_used: int


def hac_phi(factors, residuals, options: HacOptions | None = None) -> HacCovariance:
    """Bartlett-weighted long-run covariance of ``F_t * xi_it`` for every series i."""
    options = options or HacOptions()
    f = np.atleast_2d(np.asarray(factors, dtype=float))
    e = np.atleast_2d(np.asarray(residuals, dtype=float))
    T = f.shape[0]
    if e.shape[0] != T:
        raise InputError("factors and residuals must share the time dimension")
    m = options.resolve(T)
    if m >= T:
        raise InputError(f"bandwidth {m} must be smaller than T = {T}")
    # z[t, i, :] = F_t * xi_it
    z = f[:, None, :] * e[:, :, None]
    phi = np.einsum("tia,tib->iab", z, z) / T
    for k in range(1, m + 1):
        g = np.einsum("tia,tib->iab", z[k:], z[:-k]) / T
        phi += (1 - k / (m + 1)) * (g + g.transpose(0, 2, 1))
    phi = 0.5 * (phi + phi.transpose(0, 2, 1))
    return HacCovariance(phi, m)


def normal_quantile(p: float) -> float:
    return NormalDist().inv_cdf(p)


def loading_confidence_intervals(fit: FactorModelFit, hac: HacCovariance, level: float = 0.95) -> dict:
    """Per-loading estimate, standard error ``sqrt(Phi_i,jj / T)`` and normal CI bounds."""
    if not 0 < level < 1:
        raise InputError("level must lie strictly between 0 and 1")
    T = fit.factors.shape[0]
    z = normal_quantile((1 + level) / 2)
    var = np.diagonal(hac.per_series, axis1=1, axis2=2)
    se = np.sqrt(np.maximum(var, 0.0) / T)
    return {"estimate": fit.loadings, "se": se, "lower": fit.loadings - z * se, "upper": fit.loadings + z * se, "z": z}


def conditional_score(panel, loadings, idio_variances, factors) -> np.ndarray:
    """Score of the likelihood conditional on observed factors: ``S^-1 sum_t xi_t F_t'``."""
    x = as_matrix(panel)
    resid = x - np.asarray(factors) @ np.asarray(loadings).T
    return (resid.T @ factors) / np.asarray(idio_variances)[:, None]


def score_equivalence_gap(panel, true_loadings, true_variances, true_factors, i: int) -> float:
    """``T^-1/2`` norm of the difference between the full and the conditional score, row i."""
    x = as_matrix(panel)
    if not 0 <= i < x.shape[1]:
        raise InputError(f"series index {i} out of range for n = {x.shape[1]}")
    full = score_loadings(x, true_loadings, true_variances)[i]
    cond = conditional_score(x, true_loadings, true_variances, true_factors)[i]
    return float(np.linalg.norm(full - cond) / np.sqrt(x.shape[0]))
