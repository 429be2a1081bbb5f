"""Factor recovery from loadings: OLS, GLS with diagonal weights, and the linear projection."""
from __future__ import annotations

import numpy as np
from scipy import linalg

from .model import InputError, as_matrix

RANK_RTOL = 1e-12


def _check(loadings, idio_variances=None):
    lam = np.atleast_2d(np.asarray(loadings, dtype=float))
    s = linalg.svdvals(lam)
    if s.size == 0 or s[-1] < RANK_RTOL * s[0]:
        raise InputError("loadings are rank deficient")
    if idio_variances is None:
        return lam, None
    sig = np.asarray(idio_variances, dtype=float)
    if sig.shape != (lam.shape[0],):
        raise InputError("idio_variances must have one entry per loading row")
    if np.any(sig <= 0):
        raise InputError("idio_variances must be strictly positive")
    return lam, sig


def _x(panel, n):
    x = as_matrix(panel)
    if x.shape[1] != n:
        raise InputError(f"panel has {x.shape[1]} series but loadings have {n} rows")
    return x


def factors_ols(panel, loadings) -> np.ndarray:
    lam, _ = _check(loadings)
    x = _x(panel, lam.shape[0])
    return linalg.solve(lam.T @ lam, lam.T @ x.T, assume_a="pos").T


def factors_gls(panel, loadings, idio_variances) -> np.ndarray:
    lam, sig = _check(loadings, idio_variances)
    x = _x(panel, lam.shape[0])
    w = lam / sig[:, None]
    return linalg.solve(lam.T @ w, w.T @ x.T, assume_a="pos").T


def factors_lp(panel, loadings, idio_variances) -> np.ndarray:
    """Linear projection ``(L'S^-1 L + I)^-1 L'S^-1 x_t``, the r x r Woodbury form."""
    lam, sig = _check(loadings, idio_variances)
    x = _x(panel, lam.shape[0])
    w = lam / sig[:, None]
    k = lam.T @ w + np.eye(lam.shape[1])
    return linalg.solve(k, w.T @ x.T, assume_a="pos").T


def factors_lp_direct(panel, loadings, idio_variances) -> np.ndarray:
    """Left-hand form ``L'(LL' + S)^-1 x_t`` with an explicit n x n solve (test oracle)."""
    lam, sig = _check(loadings, idio_variances)
    x = _x(panel, lam.shape[0])
    omega = lam @ lam.T + np.diag(sig)
    return (lam.T @ linalg.solve(omega, x.T, assume_a="pos")).T


ESTIMATORS = {"ols": factors_ols, "gls": factors_gls, "lp": factors_lp}
