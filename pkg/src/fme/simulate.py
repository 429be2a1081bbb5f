"""Simulation design: VAR(1) factors and banded, serially correlated idiosyncratic noise.

Innovations are Gaussian or centered Asymmetric Laplace with unit variance. The
simulated truth is rotated so that F'F/T = I and L'L is diagonal.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .model import DegenerateModelError, InputError, PanelData, fix_signs, write_panel_csv

log = logging.getLogger(__name__)

GAUSSIAN = "GAUSSIAN"
ASYM_LAPLACE = "ASYM_LAPLACE"
PSD_CLIP = 1e-8
KAPPA_RANGE = (0.9, 1.1)


@dataclass(frozen=True)
class DgpConfig:
    n: int
    T: int
    r: int = 2
    tau: float = 0.0
    delta: float = 0.0
    theta_range: tuple[float, float] = (0.25, 0.5)
    distribution: str = GAUSSIAN
    band: int = 10
    burn_in: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "theta_range", tuple(float(v) for v in self.theta_range))
        object.__setattr__(self, "distribution", str(self.distribution).upper())
        for key in ("n", "T", "r"):
            if int(getattr(self, key)) < 1:
                raise InputError(f"{key} must be a positive integer")
        if self.r >= min(self.n, self.T):
            raise InputError("r must be smaller than min(n, T)")
        if not 0 <= self.tau < 1:
            raise InputError("tau must lie in [0, 1)")
        if self.delta < 0:
            raise InputError("delta must be >= 0")
        if self.band < 0:
            raise InputError("band must be >= 0")
        if self.burn_in < 0:
            raise InputError("burn_in must be >= 0")
        lo, hi = self.theta_range
        if len(self.theta_range) != 2 or not 0 <= lo <= hi:
            raise InputError("theta_range must be an interval [lo, hi] with 0 <= lo <= hi")
        if self.distribution not in (GAUSSIAN, ASYM_LAPLACE):
            raise InputError(f"distribution must be {GAUSSIAN} or {ASYM_LAPLACE}")

    @classmethod
    def from_dict(cls, d: dict) -> "DgpConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise InputError(f"unknown DGP config key {unknown[0]!r}")
        for key in ("n", "T"):
            if key not in d:
                raise InputError(f"missing DGP config key {key!r}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InputError(str(exc)) from None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["theta_range"] = list(self.theta_range)
        return d


@dataclass(frozen=True)
class RepairReport:
    clipped: int
    max_adjustment: float


@dataclass(frozen=True)
class SimulatedPanel:
    panel: PanelData
    true_loadings: np.ndarray
    true_factors: np.ndarray
    true_common: np.ndarray
    true_idio_scaled: np.ndarray
    config: DgpConfig
    repair: RepairReport = field(default_factory=lambda: RepairReport(0, 0.0))


def sample_asym_laplace(kappa: float, count, rng=None) -> np.ndarray:
    """Centered Asymmetric Laplace draws with asymmetry ``kappa`` and unit variance.

    Uses ``(E1/kappa - kappa*E2)/scale`` with standard exponentials E1, E2 and
    ``scale = sqrt((1 + kappa^4)/kappa^2)``; the mean ``(1/kappa - kappa)/scale`` is removed.
    """
    if not kappa > 0:
        raise InputError("kappa must be positive")
    rng = np.random.default_rng(rng)
    scale = np.sqrt((1 + kappa**4) / kappa**2)
    e1 = rng.standard_exponential(count)
    e2 = rng.standard_exponential(count)
    return (e1 / kappa - kappa * e2 - (1 / kappa - kappa)) / scale


def _innovations(rng, distribution, shape):
    if distribution == GAUSSIAN:
        return rng.standard_normal(shape)
    kappas = rng.uniform(*KAPPA_RANGE, size=shape[1])
    return np.column_stack([sample_asym_laplace(k, shape[0], rng) for k in kappas])


def banded_covariance(variances, tau: float, band: int) -> np.ndarray:
    v = np.asarray(variances, dtype=float)
    lag = np.abs(np.subtract.outer(np.arange(v.size), np.arange(v.size)))
    c = np.where((lag <= band) & (lag > 0), float(tau) ** lag, 0.0)
    c[np.diag_indices(v.size)] = v
    return c


def repair_psd(c: np.ndarray, clip: float = PSD_CLIP):
    w, v = linalg.eigh(c)
    low = w < clip
    if not np.any(low):
        return c, RepairReport(0, 0.0)
    fixed = (v * np.maximum(w, clip)) @ v.T
    fixed = 0.5 * (fixed + fixed.T)
    return fixed, RepairReport(int(low.sum()), float(np.max(np.abs(fixed - c))))


def build_idio_covariance(config: DgpConfig, rng=None, variances=None):
    """Banded idiosyncratic innovation covariance with a PSD repair report.

    Variances are drawn from U[0.5, 1.5] unless given.
    """
    rng = np.random.default_rng(rng)
    if variances is None:
        variances = rng.uniform(0.5, 1.5, size=config.n)
    c = banded_covariance(variances, config.tau, config.band)
    c, report = repair_psd(c)
    if report.clipped:
        log.info("idiosyncratic covariance repaired: %d eigenvalues clipped", report.clipped)
    return c, report


def _ar1(innov, coef, burn_in):
    out = np.zeros_like(innov)
    prev = np.zeros(innov.shape[1])
    for t in range(innov.shape[0]):
        prev = prev @ coef.T + innov[t] if coef.ndim == 2 else coef * prev + innov[t]
        out[t] = prev
    return out[burn_in:]


def var_matrix(rng, r: int) -> np.ndarray:
    a = rng.uniform(0.0, 0.3, size=(r, r))
    a[np.diag_indices(r)] = rng.uniform(0.5, 0.8, size=r)
    return 0.9 * a / linalg.norm(a, 2)


def identify_truth(common: np.ndarray, r: int):
    """Rotate a rank-r common component to loadings ``V M^{1/2}`` and factors ``M^{-1/2} V' chi_t``."""
    T = common.shape[0]
    g = common.T @ common / T
    w, v = linalg.eigh(0.5 * (g + g.T))
    w, v = w[::-1][:r], fix_signs(v[:, ::-1][:, :r])
    if np.any(w <= 1e-12 * max(w[0], 1e-300)):
        raise DegenerateModelError("common component has fewer than r non-zero eigenvalues")
    return v * np.sqrt(w), (common @ v) / np.sqrt(w)


def simulate_panel(config: DgpConfig, rng=None) -> SimulatedPanel:
    """Draw one panel; ``rng`` defaults to a generator seeded with ``config.seed``."""
    rng = np.random.default_rng(config.seed if rng is None else rng)
    n, T, r, total = config.n, config.T, config.r, config.T + config.burn_in

    ell = rng.normal(1.0, 1.0, size=(n, r))
    a = var_matrix(rng, r)
    f = _ar1(_innovations(rng, config.distribution, (total, r)), a, config.burn_in)

    alpha = rng.uniform(0.0, config.delta, size=n)
    cov, report = build_idio_covariance(config, rng)
    wc, vc = linalg.eigh(cov)
    root = (vc * np.sqrt(np.maximum(wc, 0.0))) @ vc.T
    e = _innovations(rng, config.distribution, (total, n)) @ root
    xi = _ar1(e, alpha, config.burn_in)

    chi = f @ ell.T
    theta = rng.uniform(*config.theta_range, size=n)
    phi = np.sqrt(theta * np.sum(chi**2, axis=0) / np.sum(xi**2, axis=0))
    idio = xi * phi
    x = chi + idio

    lam, fac = identify_truth(chi, r)
    return SimulatedPanel(
        panel=PanelData(x),
        true_loadings=lam,
        true_factors=fac,
        true_common=chi,
        true_idio_scaled=idio,
        config=config,
        repair=report,
    )


def truth_to_dict(sim: SimulatedPanel) -> dict:
    """Sidecar schema: config, loadings[n][r], factors[T][r], repair report."""
    return {
        "config": sim.config.to_dict(),
        "loadings": sim.true_loadings.tolist(),
        "factors": sim.true_factors.tolist(),
        "repair": dataclasses.asdict(sim.repair),
    }


def export(sim: SimulatedPanel, panel_path, truth_path=None) -> None:
    write_panel_csv(panel_path, sim.panel)
    if truth_path is not None:
        Path(truth_path).write_text(json.dumps(truth_to_dict(sim)))
