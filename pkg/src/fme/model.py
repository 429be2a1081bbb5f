"""Core data types, panel preprocessing and the shared eigendecomposition conventions."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

METHODS = ("PC", "QML_EM", "QML_HOMO", "QML_UNRESTRICTED", "OLS_ORACLE")
SIGN_EPS = 1e-12
EIGENGAP_RTOL = 1e-10


class InputError(ValueError):
    """Malformed or out-of-range input."""


class DegenerateModelError(ArithmeticError):
    """The data do not support the requested factor structure."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PanelData:
    """T x n panel, time in rows and series in columns."""

    values: np.ndarray
    demeaned: bool = False
    column_means: np.ndarray | None = None
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        x = np.array(self.values, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise InputError("panel must be a 2-d array")
        if x.shape[0] < 2 or x.shape[1] < 1:
            raise InputError(f"panel needs T >= 2 and n >= 1, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InputError("panel contains non-finite entries")
        means = np.zeros(x.shape[1]) if self.column_means is None else np.asarray(self.column_means, float)
        if means.shape != (x.shape[1],):
            raise InputError("column_means must have one entry per series")
        if self.names is not None and len(self.names) != x.shape[1]:
            raise InputError("names must have one entry per series")
        object.__setattr__(self, "values", _frozen(x))
        object.__setattr__(self, "column_means", _frozen(means))
        if self.names is not None:
            object.__setattr__(self, "names", tuple(str(s) for s in self.names))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class EigenSystem:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    source_dim: int
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class CovarianceEstimate:
    matrix: np.ndarray
    kind: str = "sample_x"

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix))


@dataclass
class FactorModelFit:
    """Estimated loadings, idiosyncratic variances, factors and residuals.

    ``residuals`` is always ``X - factors @ loadings.T`` on the panel that was fitted.
    """

    loadings: np.ndarray
    idio_variances: np.ndarray
    factors: np.ndarray
    residuals: np.ndarray
    r: int
    method: str
    diagnostics: dict = field(default_factory=dict)
    column_means: np.ndarray | None = None
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise InputError(f"unknown method {self.method!r}")


def as_panel(x) -> PanelData:
    return x if isinstance(x, PanelData) else PanelData(np.asarray(x, dtype=float))


def as_matrix(x) -> np.ndarray:
    """Observations as a 2-d array; unlike PanelData a single row is accepted."""
    if isinstance(x, PanelData):
        return x.values
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(a)):
        raise InputError("panel contains non-finite entries")
    return a


def demean(panel: PanelData) -> PanelData:
    x = panel.values
    mu = x.mean(axis=0)
    return PanelData(x - mu, demeaned=True, column_means=panel.column_means + mu, names=panel.names)


def sample_covariance(panel) -> CovarianceEstimate:
    x = as_panel(panel).values
    g = x.T @ x / x.shape[0]
    return CovarianceEstimate(0.5 * (g + g.T), "sample_x")


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the first entry with magnitude >= 1e-12 is positive."""
    v = np.array(vectors, dtype=float, copy=True)
    for j in range(v.shape[1]):
        nz = np.flatnonzero(np.abs(v[:, j]) >= SIGN_EPS)
        if nz.size and v[nz[0], j] < 0:
            v[:, j] = -v[:, j]
    return v


def top_r_eigen(cov, r: int) -> EigenSystem:
    """Largest ``r`` eigenpairs of a symmetric matrix, descending and sign-normalized."""
    a = cov.matrix if isinstance(cov, CovarianceEstimate) else np.asarray(cov, dtype=float)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise InputError("covariance must be square")
    r = int(r)
    if r < 1 or r >= n:
        raise InputError(f"need 1 <= r < n, got r={r}, n={n}")
    a = 0.5 * (a + a.T)
    w, v = linalg.eigh(a, subset_by_index=[n - r - 1, n - 1])
    w, v = w[::-1], v[:, ::-1]
    lam, vec = w[:r].copy(), fix_signs(v[:, :r])
    notes = []
    scale = max(abs(lam[0]), np.finfo(float).tiny)
    if lam[r - 1] - w[r] < EIGENGAP_RTOL * scale:
        notes.append(f"eigengap between eigenvalues {r} and {r + 1} is below {EIGENGAP_RTOL:g} * lambda_1")
    gaps = -np.diff(lam)
    for j in np.flatnonzero(gaps < EIGENGAP_RTOL * scale):
        notes.append(f"eigenvalues {j + 1} and {j + 2} are tied")
    return EigenSystem(_frozen(lam), _frozen(vec), n, tuple(notes))


def read_panel_csv(path) -> PanelData:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [row for row in rows if row]
    if len(rows) < 2:
        raise InputError(f"{path}: need a header row and at least one observation")
    names, body = rows[0], rows[1:]
    try:
        x = np.array([[float(v) for v in row] for row in body], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if x.ndim != 2 or x.shape[1] != len(names):
        raise InputError(f"{path}: ragged rows or header/column mismatch")
    return PanelData(x, names=tuple(names))


def write_panel_csv(path, panel: PanelData) -> None:
    names = panel.names or tuple(f"x{i + 1}" for i in range(panel.n))
    write_matrix_csv(path, panel.values, names)


def write_matrix_csv(path, values, header) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in np.asarray(values):
            w.writerow([repr(float(v)) for v in row])
