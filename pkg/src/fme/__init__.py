"""Principal components and quasi maximum likelihood estimation of approximate factor models."""
from .factors import factors_gls, factors_lp, factors_ols
from .inference import HacCovariance, HacOptions, hac_phi, loading_confidence_intervals, score_equivalence_gap
from .model import (
    CovarianceEstimate,
    DegenerateModelError,
    EigenSystem,
    FactorModelFit,
    InputError,
    PanelData,
    demean,
    sample_covariance,
    top_r_eigen,
)
from .pca import fit_pc
from .qml import (
    EmConfig,
    em_step,
    fit_qml_em,
    fit_qml_homoskedastic,
    fit_qml_unrestricted,
    identify_rotation,
    loglik_exact_diag,
    score_loadings,
)
from .simulate import DgpConfig, SimulatedPanel, sample_asym_laplace, simulate_panel

__version__ = "0.1.0"
