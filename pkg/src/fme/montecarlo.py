"""Monte Carlo harness: OLS-oracle, PC and QML loadings over a grid of designs."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import DegenerateModelError, InputError
from .pca import fit_pc
from .qml import EmConfig, fit_qml_em
from .simulate import ASYM_LAPLACE, GAUSSIAN, DgpConfig, simulate_panel

log = logging.getLogger(__name__)

ESTIMATORS = ("OLS", "PC", "QML")
MAX_RESAMPLES = 20


@dataclass(frozen=True)
class McConfig:
    grid: tuple[DgpConfig, ...]
    replications: int = 500
    master_seed: int = 0
    threads: int = 1
    em: EmConfig = field(default_factory=EmConfig)

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(self.grid))
        if self.replications < 1:
            raise InputError("replications must be >= 1")
        if self.threads < 1:
            raise InputError("threads must be >= 1")
        if not self.grid:
            raise InputError("grid must contain at least one design")

    @classmethod
    def from_dict(cls, d: dict) -> "McConfig":
        known = {"grid", "full_grid", "replications", "master_seed", "threads", "em"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InputError(f"unknown MC config key {unknown[0]!r}")
        if "grid" in d:
            if not isinstance(d["grid"], list):
                raise InputError("'grid' must be a list of DGP configs")
            grid = [DgpConfig.from_dict(g) for g in d["grid"]]
        elif d.get("full_grid"):
            grid = full_grid()
        else:
            raise InputError("MC config needs 'grid' or 'full_grid'")
        em = d.get("em", {})
        try:
            em = EmConfig(**em)
        except TypeError as exc:
            raise InputError(f"em: {exc}") from None
        return cls(
            grid=grid,
            replications=int(d.get("replications", 500)),
            master_seed=int(d.get("master_seed", 0)),
            threads=int(d.get("threads", 1)),
            em=em,
        )


def full_grid(distributions=(GAUSSIAN, ASYM_LAPLACE), ns=(20, 50, 100, 200), T=100, r=2) -> list[DgpConfig]:
    return [
        DgpConfig(n=n, T=T, r=r, tau=td, delta=td, distribution=dist)
        for dist in distributions
        for td in (0.0, 0.5)
        for n in ns
    ]


def replication_seed(master_seed: int, cell: int, rep: int, attempt: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(cell), int(rep), int(attempt)))


def align_signs(est: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, int]:
    """Flip estimated columns whose inner product with the same truth column is negative."""
    flip = np.sum(est * truth, axis=0) < 0
    out = est.copy()
    out[:, flip] *= -1
    return out, int(flip.sum())


def run_replication(dgp: DgpConfig, rep_seed, em: EmConfig | None = None) -> dict:
    """Simulate once and return truth plus OLS-oracle, PC and QML loadings in a common convention.

    ``rep_seed`` is anything accepted by ``numpy.random.default_rng``; a degenerate draw
    is retried with seeds spawned from it.
    """
    em = em or EmConfig()
    seq = rep_seed if isinstance(rep_seed, np.random.SeedSequence) else np.random.SeedSequence(rep_seed)
    children = seq.spawn(MAX_RESAMPLES)
    for attempt in range(MAX_RESAMPLES + 1):
        rng = np.random.default_rng(seq if attempt == 0 else children[attempt - 1])
        try:
            sim = simulate_panel(dgp, rng)
            pc = fit_pc(sim.panel, dgp.r)
            qml = fit_qml_em(sim.panel, dgp.r, em)
            break
        except DegenerateModelError as exc:
            log.info("degenerate draw (%s); resampling", exc)
    else:
        raise DegenerateModelError(f"{MAX_RESAMPLES} consecutive degenerate draws")
    x, lam, fac = sim.panel.values, sim.true_loadings, sim.true_factors
    ols = np.linalg.solve(fac.T @ fac, fac.T @ x).T
    ols, f_ols = align_signs(ols, lam)
    pc_l, f_pc = align_signs(pc.loadings, lam)
    qml_l, f_qml = align_signs(qml.loadings, lam)
    if f_pc or f_qml:
        log.info("sign flips against truth: PC %d, QML %d", f_pc, f_qml)
    return {
        "truth": lam,
        "OLS": ols,
        "PC": pc_l,
        "QML": qml_l,
        "resamples": attempt,
        "sign_flips": f_ols + f_pc + f_qml,
        "em_iterations": qml.diagnostics["iterations"],
        "em_converged": qml.diagnostics["converged"],
    }


@dataclass
class CellResult:
    dgp: DgpConfig
    replications: int
    mse: dict          # estimator -> length-r mean over replications
    mse_sd: dict       # estimator -> length-r sd over replications
    distance: np.ndarray
    distance_sd: np.ndarray
    mse_rel: np.ndarray
    rate_median: float  # median of n * max_i ||qml_i - pc_i||
    resamples: int = 0
    nonconverged: int = 0


@dataclass
class McResult:
    cells: list


def _per_rep_metrics(rep: dict) -> dict:
    lam = rep["truth"]
    out = {e: np.mean((rep[e] - lam) ** 2, axis=0) for e in ESTIMATORS}
    diff = rep["QML"] - rep["PC"]
    out["D"] = np.mean(diff**2, axis=0)
    out["rate"] = lam.shape[0] * float(np.max(np.linalg.norm(diff, axis=1)))
    return out


def aggregate(dgp: DgpConfig, reps: list) -> CellResult:
    """Average per-replication metrics in replication order."""
    if not reps:
        raise InputError("need at least one replication")
    per = [_per_rep_metrics(r) for r in reps]
    stack = {k: np.array([p[k] for p in per]) for k in (*ESTIMATORS, "D")}
    mse = {e: stack[e].mean(axis=0) for e in ESTIMATORS}
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = mse["PC"] / mse["QML"]  # nan when both are exactly zero
    return CellResult(
        dgp=dgp,
        replications=len(reps),
        mse=mse,
        mse_sd={e: stack[e].std(axis=0) for e in ESTIMATORS},
        distance=stack["D"].mean(axis=0),
        distance_sd=stack["D"].std(axis=0),
        mse_rel=rel,
        rate_median=float(np.median([p["rate"] for p in per])),
        resamples=sum(r["resamples"] for r in reps),
        nonconverged=sum(not r["em_converged"] for r in reps),
    )


def _job(args):
    dgp, seed, em = args
    return run_replication(dgp, seed, em)


def run_cell(dgp: DgpConfig, replications: int, master_seed: int, cell: int = 0,
             em: EmConfig | None = None, executor=None) -> CellResult:
    jobs = [(dgp, replication_seed(master_seed, cell, b), em) for b in range(replications)]
    if executor is None:
        reps = [_job(j) for j in jobs]
    else:
        reps = list(executor.map(_job, jobs, chunksize=max(1, replications // 64)))
    return aggregate(dgp, reps)


def run_mc(config: McConfig) -> McResult:
    """Run every grid cell; output does not depend on ``config.threads``."""
    if config.threads == 1:
        cells = [run_cell(d, config.replications, config.master_seed, c, config.em)
                 for c, d in enumerate(config.grid)]
    else:
        with ProcessPoolExecutor(max_workers=config.threads) as ex:
            cells = [run_cell(d, config.replications, config.master_seed, c, config.em, ex)
                     for c, d in enumerate(config.grid)]
    return McResult(cells)


def _fmt(v: float) -> str:
    return repr(float(v))


def to_csv(result: McResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "T", "tau", "delta", "distribution", "metric", "estimator", "column", "value", "sd"])
    for c in result.cells:
        d = c.dgp
        key = [d.n, d.T, _fmt(d.tau), _fmt(d.delta), d.distribution]
        for j in range(d.r):
            for e in ESTIMATORS:
                w.writerow(key + ["MSE", e, j + 1, _fmt(c.mse[e][j]), _fmt(c.mse_sd[e][j])])
            w.writerow(key + ["D", "QML-PC", j + 1, _fmt(c.distance[j]), _fmt(c.distance_sd[j])])
            w.writerow(key + ["MSE_REL", "PC/QML", j + 1, _fmt(c.mse_rel[j]), ""])
        w.writerow(key + ["RATE_MEDIAN", "QML-PC", "", _fmt(c.rate_median), ""])
    return buf.getvalue()


def format_tables(result: McResult) -> str:
    """Plain-text layout of the MSE table and the QML/PC comparison table."""
    lines = []
    r = max(c.dgp.r for c in result.cells)
    head = ["dist", "n", "T", "tau", "delta"]
    mse_cols = [f"MSE{j + 1}_{e}" for j in range(r) for e in ESTIMATORS]
    lines.append("MSE of loading estimators (replication sd in parentheses)")
    lines.append(" ".join(f"{h:>8}" for h in head) + " " + " ".join(f"{h:>18}" for h in mse_cols))
    for c in result.cells:
        d = c.dgp
        row = [d.distribution[:8], d.n, d.T, d.tau, d.delta]
        vals = [f"{c.mse[e][j]:.4f} ({c.mse_sd[e][j]:.4f})" for j in range(d.r) for e in ESTIMATORS]
        lines.append(" ".join(f"{v!s:>8}" for v in row) + " " + " ".join(f"{v:>18}" for v in vals))
    lines.append("")
    lines.append("QML vs PC: mean squared distance D_j and MSE_REL_j = MSE_PC / MSE_QML")
    cmp_cols = [f"D{j + 1}" for j in range(r)] + [f"REL{j + 1}" for j in range(r)]
    lines.append(" ".join(f"{h:>8}" for h in head) + " " + " ".join(f"{h:>22}" for h in cmp_cols))
    for c in result.cells:
        d = c.dgp
        row = [d.distribution[:8], d.n, d.T, d.tau, d.delta]
        vals = [f"{c.distance[j]:.2e} ({c.distance_sd[j]:.2e})" for j in range(d.r)]
        vals += [f"{c.mse_rel[j]:.2f}" for j in range(d.r)]
        lines.append(" ".join(f"{v!s:>8}" for v in row) + " " + " ".join(f"{v:>22}" for v in vals))
    return "\n".join(lines) + "\n"


def config_dict(config: McConfig) -> dict:
    return {
        "grid": [g.to_dict() for g in config.grid],
        "replications": config.replications,
        "master_seed": config.master_seed,
        "threads": config.threads,
        "em": dataclasses.asdict(config.em),
    }
