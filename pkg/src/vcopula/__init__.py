"""Gaussian-copula dependence model for binary deal outcomes."""

from .mathcore import (
    DomainError,
    bvn_cdf,
    bvn_cdf_linear,
    bvn_pdf,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_quantile,
)
from .model import (
    ATTRIBUTE_LABELS,
    Deal,
    FounderType,
    Geography,
    InfeasibleVarianceError,
    Market,
    ModelParams,
    bernoulli_correlation,
    decode,
    encode,
    idiosyncratic_variance,
    latent_covariance,
    sigma_block,
)
from .dataset import (
    SyntheticProbRule,
    assign_probability,
    bucket_report,
    derive_cooccurrence,
    generate_population,
    load_deals,
    save_deals,
)
from .estimation import FitConfig, FitReport, fit, fit_metrics, sample_pairs
from .simulation import (
    PortfolioRule,
    PortfolioSpec,
    Setting,
    build_portfolio,
    correlation_histograms,
    moments,
    simulate,
    tail_probabilities,
)

__version__ = "0.1.0"
