"""Deal attributes, the 12-bit encoding and the latent covariance kernel."""

from dataclasses import dataclass, field
from enum import Enum
from typing import FrozenSet, Iterable, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .mathcore import DomainError, bvn_cdf, bvn_cdf_array, std_normal_quantile

__all__ = [
    "FounderType",
    "Geography",
    "Market",
    "Deal",
    "ModelParams",
    "InfeasibleVarianceError",
    "ATTRIBUTE_LABELS",
    "N_ATTRIBUTES",
    "BLOCKS",
    "HOT_MARKETS",
    "encode",
    "encode_many",
    "decode",
    "describe_vector",
    "latent_covariance",
    "idiosyncratic_variance",
    "bernoulli_correlation",
    "bernoulli_correlation_array",
    "sigma_block",
    "diagonal_kernel",
]


class FounderType(str, Enum):
    FIRST_TIME = "FirstTime"
    REPEAT = "Repeat"


class Geography(str, Enum):
    CA = "CA"
    NY = "NY"
    OTHER_US = "OtherUS"
    INTL = "Intl"


class Market(str, Enum):
    SAAS = "SaaS"
    AI = "AI"
    FINTECH = "Fintech"
    CONSUMER = "Consumer"
    DEVTOOLS = "DevTools"
    HEALTH = "Health"


FOUNDERS = tuple(FounderType)
GEOGRAPHIES = tuple(Geography)
MARKETS = tuple(Market)
HOT_MARKETS = frozenset({Market.AI, Market.FINTECH, Market.SAAS})

# Frozen serialisation order; every file format and table uses it.
ATTRIBUTE_LABELS = (
    "F_first",
    "F_repeat",
    "G_CA",
    "G_NY",
    "G_OtherUS",
    "G_Intl",
    "M_SaaS",
    "M_AI",
    "M_Fintech",
    "M_Consumer",
    "M_DevTools",
    "M_Health",
)
N_ATTRIBUTES = len(ATTRIBUTE_LABELS)

_GROUP_SLICES = {"F": slice(0, 2), "G": slice(2, 6), "M": slice(6, 12)}
BLOCKS = {a + b: (_GROUP_SLICES[a], _GROUP_SLICES[b]) for a in "FGM" for b in "FGM"}


@dataclass(frozen=True)
class Deal:
    id: str
    founder: FounderType
    geo: Geography
    markets: FrozenSet[Market] = frozenset()
    p: Optional[float] = None
    outcome: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "founder", FounderType(self.founder))
        object.__setattr__(self, "geo", Geography(self.geo))
        object.__setattr__(self, "markets", frozenset(Market(m) for m in self.markets))
        if self.p is not None and not (0.0 <= self.p <= 1.0):
            raise ValueError(f"deal {self.id}: probability {self.p} outside [0, 1]")
        if self.outcome not in (None, 0, 1):
            raise ValueError(f"deal {self.id}: outcome must be 0, 1 or missing")

    @property
    def attributes(self):
        return (self.founder, self.geo, self.markets)

    @property
    def is_hot(self) -> bool:
        return bool(self.markets & HOT_MARKETS)


def encode(deal: Deal) -> np.ndarray:
    """12-bit indicator vector: founder one-hot, geography one-hot, market multi-hot."""
    bits = np.zeros(N_ATTRIBUTES, dtype=np.int8)
    bits[FOUNDERS.index(deal.founder)] = 1
    bits[2 + GEOGRAPHIES.index(deal.geo)] = 1
    for m in deal.markets:
        bits[6 + MARKETS.index(m)] = 1
    return bits


def encode_many(deals: Iterable[Deal]) -> np.ndarray:
    return np.array([encode(d) for d in deals], dtype=np.int8).reshape(-1, N_ATTRIBUTES)


def decode(bits: Sequence[int]):
    """Inverse of :func:`encode`; returns ``(founder, geo, markets)``."""
    bits = np.asarray(bits)
    if bits.shape != (N_ATTRIBUTES,) or not np.isin(bits, (0, 1)).all():
        raise ValueError(f"not a 12-bit attribute vector: {bits!r}")
    if bits[0:2].sum() != 1 or bits[2:6].sum() != 1:
        raise ValueError(f"founder and geography blocks must be one-hot: {bits!r}")
    founder = FOUNDERS[int(np.argmax(bits[0:2]))]
    geo = GEOGRAPHIES[int(np.argmax(bits[2:6]))]
    markets = frozenset(MARKETS[i] for i in range(6) if bits[6 + i])
    return founder, geo, markets


def describe_vector(bits) -> str:
    return "+".join(lbl for lbl, b in zip(ATTRIBUTE_LABELS, bits) if b) or "<empty>"


class InfeasibleVarianceError(ValueError):
    """alpha0^2 + e' Sigma e >= 1 for some attribute vector."""

    def __init__(self, vectors, values):
        self.vectors = [np.asarray(v) for v in vectors]
        self.values = list(values)
        names = ", ".join(
            f"{describe_vector(v)} ({val:.4f})" for v, val in zip(self.vectors, self.values)
        )
        super().__init__(f"infeasible idiosyncratic variance for: {names}")


@dataclass(frozen=True)
class ModelParams:
    """Global loading ``alpha0`` and factor matrix ``loadings`` (Sigma = L L').

    ``sigma`` defaults to ``L @ L.T``. When built from a published covariance
    table via :meth:`from_sigma`, the table itself is kept as ``sigma`` (it is
    what the kernel uses) and ``loadings`` is its PSD projection, used only
    for sampling the factors.
    """

    alpha0: float
    loadings: np.ndarray
    sigma: np.ndarray = field(default=None)

    def __post_init__(self):
        if not (0.0 <= self.alpha0 < 1.0):
            raise ValueError(f"alpha0 must lie in [0, 1), got {self.alpha0}")
        L = np.array(self.loadings, dtype=float)
        if L.ndim != 2 or L.shape[0] != N_ATTRIBUTES or not 1 <= L.shape[1] <= N_ATTRIBUTES:
            raise ValueError(f"loadings must be 12 x k with 1 <= k <= 12, got {L.shape}")
        L.setflags(write=False)
        object.__setattr__(self, "loadings", L)
        if self.sigma is None:
            sigma = L @ L.T
        else:
            sigma = np.array(self.sigma, dtype=float)
            if sigma.shape != (N_ATTRIBUTES, N_ATTRIBUTES):
                raise ValueError("sigma must be 12 x 12")
            if not np.array_equal(sigma, sigma.T):
                raise ValueError("sigma must be symmetric")
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)

    @property
    def rank(self) -> int:
        return self.loadings.shape[1]

    @classmethod
    def from_sigma(cls, sigma, alpha0: float = 0.0, rank: Optional[int] = None):
        sigma = np.asarray(sigma, dtype=float)
        evals, evecs = np.linalg.eigh(sigma)
        order = np.argsort(evals)[::-1]
        evals = np.clip(evals[order], 0.0, None)
        evecs = evecs[:, order]
        k = rank or N_ATTRIBUTES
        L = evecs[:, :k] * np.sqrt(evals[:k])
        return cls(alpha0=alpha0, loadings=L, sigma=sigma)

    @classmethod
    def zero(cls, rank: int = N_ATTRIBUTES):
        return cls(alpha0=0.0, loadings=np.zeros((N_ATTRIBUTES, rank)))


def latent_covariance(e_i, e_j, params: ModelParams) -> float:
    """alpha0^2 + e_i' Sigma e_j."""
    e_i = np.asarray(e_i, dtype=float)
    e_j = np.asarray(e_j, dtype=float)
    return float(params.alpha0**2 + e_i @ params.sigma @ e_j)


def diagonal_kernel(vectors, params: ModelParams) -> np.ndarray:
    """alpha0^2 + e' Sigma e for each row of ``vectors``."""
    E = np.asarray(vectors, dtype=float).reshape(-1, N_ATTRIBUTES)
    return params.alpha0**2 + np.einsum("ni,ij,nj->n", E, params.sigma, E)


def idiosyncratic_variance(e, params: ModelParams) -> float:
    """phi^2 = 1 - alpha0^2 - e' Sigma e; raises when not strictly positive."""
    s = latent_covariance(e, e, params)
    if s >= 1.0:
        raise InfeasibleVarianceError([e], [s])
    return 1.0 - s


def bernoulli_correlation(p_i: float, p_j: float, r: float) -> float:
    """Correlation of the two indicators implied by marginals and latent r."""
    for p in (p_i, p_j):
        if not (0.0 < p < 1.0):
            raise DomainError(f"marginal probability must lie in (0, 1), got {p}")
    t_i = std_normal_quantile(p_i)
    t_j = std_normal_quantile(p_j)
    joint = bvn_cdf(t_i, t_j, r)
    denom = np.sqrt(p_i * (1 - p_i) * p_j * (1 - p_j))
    return float(np.clip((joint - p_i * p_j) / denom, -1.0, 1.0))


def bernoulli_correlation_array(p_i, p_j, r) -> np.ndarray:
    p_i = np.asarray(p_i, dtype=float)
    p_j = np.asarray(p_j, dtype=float)
    joint = bvn_cdf_array(ndtri(p_i), ndtri(p_j), r)
    denom = np.sqrt(p_i * (1 - p_i) * p_j * (1 - p_j))
    return np.clip((joint - p_i * p_j) / denom, -1.0, 1.0)


def sigma_block(params: ModelParams, block: str) -> np.ndarray:
    """Sub-matrix of Sigma for a block label such as ``"FF"`` or ``"GM"``."""
    try:
        rows, cols = BLOCKS[block]
    except KeyError:
        raise ValueError(f"unknown block {block!r}; expected one of {sorted(BLOCKS)}") from None
    return params.sigma[rows, cols]
