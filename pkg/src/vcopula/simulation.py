"""Portfolio construction and Monte Carlo simulation of success counts.

Correlated draws use the factor form Z = alpha0 U + e'L P + phi eps with U
and P shared by every deal in a replication. Replications are generated in
fixed-size blocks, each with its own counter-based stream keyed by
``(seed, block index)``, so the output does not depend on how blocks are
spread over workers.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .dataset import SyntheticProbRule, assign_probability
from .model import (
    FounderType,
    Geography,
    GEOGRAPHIES,
    InfeasibleVarianceError,
    MARKETS,
    Market,
    ModelParams,
    bernoulli_correlation_array,
    encode_many,
)

__all__ = [
    "Setting",
    "PortfolioRule",
    "PortfolioSpec",
    "Portfolio",
    "SimulationSummary",
    "CorrelationHistograms",
    "InsufficientDealsError",
    "BLOCK_SIZE",
    "build_portfolio",
    "standard_portfolios",
    "check_composition",
    "sample_latent",
    "sample_outcomes",
    "simulate",
    "moments",
    "tail_probabilities",
    "correlation_histograms",
    "bernoulli_correlation_bounds",
    "poisson_binomial_moments",
]

# replications per RNG substream; part of the reproducibility contract
BLOCK_SIZE = 1024


class Setting(str, Enum):
    INDEPENDENT = "Independent"
    CORRELATED = "Correlated"


class PortfolioRule(str, Enum):
    A_5050_GEODIV = "A_5050_geoDiv"
    B_REPEAT_CA = "B_repeatCA"
    C_DIVERSIFIED = "C_diversified"
    C_CONCENTRATED = "C_concentrated"


class InsufficientDealsError(ValueError):
    pass


@dataclass(frozen=True)
class PortfolioSpec:
    name: str
    n: int
    rule: PortfolioRule
    market: Optional[Market] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rule", PortfolioRule(self.rule))
        if self.market is not None:
            object.__setattr__(self, "market", Market(self.market))
        if self.n < 1:
            raise ValueError("portfolio size must be >= 1")
        if self.rule is PortfolioRule.C_CONCENTRATED and self.market is None:
            raise ValueError("concentrated portfolio needs a market")
        if self.rule is PortfolioRule.A_5050_GEODIV and self.n % 2:
            raise ValueError(f"portfolio {self.name}: rule A needs an even size, got {self.n}")


@dataclass(frozen=True)
class Portfolio:
    spec: PortfolioSpec
    deals: tuple

    @property
    def probs(self) -> np.ndarray:
        return np.array([d.p for d in self.deals], dtype=float)

    @property
    def vectors(self) -> np.ndarray:
        return encode_many(self.deals)


def _repeat_count(n, population):
    repeat = sum(d.founder is FounderType.REPEAT for d in population)
    return int(round(n * repeat / len(population)))


def _split_geographies(n, population):
    """(founder, geo) per slot for rule A.

    Geographies are cycled over the whole portfolio. Repeat-founder slots
    are spread round-robin over regions, capped by how many repeat deals
    each region has; first-time deals take the remaining quota.
    """
    quota = {g: sum(1 for i in range(n) if i % 4 == k) for k, g in enumerate(GEOGRAPHIES)}
    avail = {
        g: sum(1 for d in population if d.founder is FounderType.REPEAT and d.geo is g)
        for g in GEOGRAPHIES
    }
    repeat = dict.fromkeys(GEOGRAPHIES, 0)
    need = n // 2
    while need:
        progressed = False
        for g in GEOGRAPHIES:
            if need and repeat[g] < min(quota[g], avail[g]):
                repeat[g] += 1
                need -= 1
                progressed = True
        if not progressed:
            raise InsufficientDealsError(f"not enough repeat-founder deals for {n // 2} slots")
    slots = []
    for g in GEOGRAPHIES:
        slots += [(FounderType.FIRST_TIME, g)] * (quota[g] - repeat[g])
    for g in GEOGRAPHIES:
        slots += [(FounderType.REPEAT, g)] * repeat[g]
    return slots


def _slot_requirements(spec, population, rng):
    """(required, preferred) predicates per slot; slots are filled in order."""
    n = spec.n
    if spec.rule is PortfolioRule.A_5050_GEODIV:
        # market cycling is a preference; some founder x region x market cells are empty
        return [
            (
                lambda d, f=f, g=g: d.founder is f and d.geo is g,
                lambda d, m=MARKETS[i % 6]: m in d.markets,
            )
            for i, (f, g) in enumerate(_split_geographies(n, population))
        ]
    if spec.rule is PortfolioRule.B_REPEAT_CA:
        return [(lambda d: d.founder is FounderType.REPEAT and d.geo is Geography.CA, None)] * n

    repeat_slots = set(rng.choice(n, size=_repeat_count(n, population), replace=False).tolist())
    founders = [FounderType.REPEAT if i in repeat_slots else FounderType.FIRST_TIME for i in range(n)]
    if spec.rule is PortfolioRule.C_DIVERSIFIED:
        markets = [MARKETS[i % 6] for i in range(n)]
    else:
        markets = [spec.market] * n
    return [
        (lambda d, f=f, m=m: d.founder is f and m in d.markets, None)
        for f, m in zip(founders, markets)
    ]


def build_portfolio(spec: PortfolioSpec, population, rule: SyntheticProbRule = SyntheticProbRule()) -> Portfolio:
    """Select ``spec.n`` distinct deals satisfying the composition rule.

    Each slot draws uniformly among unused eligible deals, restricted to
    those meeting the slot's preference when any do. Success probabilities
    are then redrawn with the synthetic rule from the same seeded stream
    and stay fixed for every replication.
    """
    rng = np.random.default_rng([spec.seed, spec.n])
    population = list(population)
    used = set()
    chosen = []
    for slot, (required, preferred) in enumerate(_slot_requirements(spec, population, rng)):
        cands = [i for i, d in enumerate(population) if i not in used and required(d)]
        if preferred is not None:
            cands = [i for i in cands if preferred(population[i])] or cands
        if not cands:
            raise InsufficientDealsError(
                f"portfolio {spec.name}: no eligible deal left for slot {slot}"
            )
        pick = cands[int(rng.integers(len(cands)))]
        used.add(pick)
        chosen.append(population[pick])
    deals = tuple(replace(d, p=assign_probability(d, rng, rule), outcome=None) for d in chosen)
    return Portfolio(spec, deals)


def check_composition(portfolio: Portfolio) -> bool:
    """Predicate for the composition rule of ``portfolio.spec``."""
    spec, deals = portfolio.spec, portfolio.deals
    if len(deals) != spec.n or len({d.id for d in deals}) != spec.n:
        return False
    if spec.rule is PortfolioRule.B_REPEAT_CA:
        return all(d.founder is FounderType.REPEAT and d.geo is Geography.CA for d in deals)
    if spec.rule is PortfolioRule.A_5050_GEODIV:
        first = sum(d.founder is FounderType.FIRST_TIME for d in deals)
        geo_counts = [sum(d.geo is g for d in deals) for g in GEOGRAPHIES]
        return first == spec.n // 2 and max(geo_counts) - min(geo_counts) <= 1
    if spec.rule is PortfolioRule.C_CONCENTRATED:
        return all(spec.market in d.markets for d in deals)
    # diversified: every market appears on at least floor(n / 6) deals
    return all(sum(m in d.markets for d in deals) >= spec.n // 6 for m in MARKETS)


def standard_portfolios(n: int, seed: int = 0) -> List[PortfolioSpec]:
    """The nine reference designs, in table row order."""
    specs = [
        PortfolioSpec("Portfolio A", n, PortfolioRule.A_5050_GEODIV, seed=seed),
        PortfolioSpec("Portfolio B", n, PortfolioRule.B_REPEAT_CA, seed=seed),
        PortfolioSpec("Portfolio C (Diversified)", n, PortfolioRule.C_DIVERSIFIED, seed=seed),
    ]
    specs += [
        PortfolioSpec(f"Portfolio C -- {m.value}", n, PortfolioRule.C_CONCENTRATED, m, seed)
        for m in MARKETS
    ]
    return specs


# ---------------------------------------------------------------------------
# latent sampling


def _factor_terms(vectors, params: ModelParams):
    """Rows of E L and the idiosyncratic scale phi for each deal.

    phi is taken from the loadings actually sampled so Var(Z) = 1 exactly,
    even when ``params.sigma`` is a non-PSD table and L its projection.
    """
    E = np.asarray(vectors, dtype=float)
    EL = E @ params.loadings
    load_var = params.alpha0**2 + np.sum(EL**2, axis=1)
    kernel_var = params.alpha0**2 + np.einsum("ni,ij,nj->n", E, params.sigma, E)
    bad = (load_var >= 1.0) | (kernel_var >= 1.0)
    if bad.any():
        raise InfeasibleVarianceError(E[bad], np.maximum(load_var, kernel_var)[bad])
    return EL, np.sqrt(1.0 - load_var)


def _block_rng(seed, block):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))


def _latent_block(rng, EL, phi, alpha0, reps):
    U = rng.standard_normal(reps)
    P = rng.standard_normal((reps, EL.shape[1]))
    eps = rng.standard_normal((reps, len(phi)))
    return alpha0 * U[:, None] + P @ EL.T + eps * phi


def _blocks(R, block_size):
    return [(b, min(block_size, R - b * block_size)) for b in range(math.ceil(R / block_size))]


def sample_latent(vectors, params: ModelParams, R: int, seed: int, block_size: int = BLOCK_SIZE) -> np.ndarray:
    """R x n matrix of latent draws Z for the given attribute vectors."""
    EL, phi = _factor_terms(vectors, params)
    parts = [
        _latent_block(_block_rng(seed, b), EL, phi, params.alpha0, reps)
        for b, reps in _blocks(R, block_size)
    ]
    return np.concatenate(parts) if parts else np.empty((0, len(phi)))


def sample_outcomes(vectors, probs, params: ModelParams, R: int, seed: int, block_size: int = 64) -> np.ndarray:
    """R independent replications of 0/1 outcomes for a whole population.

    Factors are shared within a replication and redrawn across them.
    Returns a uint8 array of shape (R, n).
    """
    t = ndtri(np.asarray(probs, dtype=float))
    EL, phi = _factor_terms(vectors, params)
    out = np.empty((R, len(t)), dtype=np.uint8)
    for b, reps in _blocks(R, block_size):
        Z = _latent_block(_block_rng(seed, b), EL, phi, params.alpha0, reps)
        out[b * block_size : b * block_size + reps] = Z <= t
    return out


def _count_block(block, reps, seed, setting, probs, t, EL, phi, alpha0):
    rng = _block_rng(seed, block)
    if setting is Setting.INDEPENDENT:
        X = rng.random((reps, len(probs))) < probs
    else:
        X = _latent_block(rng, EL, phi, alpha0, reps) <= t
    return X.sum(axis=1)


# ---------------------------------------------------------------------------
# summaries


def moments(samples):
    """(mean, std, skew, kurt) with 1/R normalisation and Pearson kurtosis.

    Skew and kurtosis are None when the sample has zero variance.
    """
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("moments need at least one sample")
    mean = float(x.mean())
    d = x - mean
    m2 = float(np.mean(d**2))
    if m2 <= 0.0:
        return mean, 0.0, None, None
    m3 = float(np.mean(d**3))
    m4 = float(np.mean(d**4))
    return mean, math.sqrt(m2), m3 / m2**1.5, m4 / m2**2


def _moments_from_hist(counts):
    k = np.arange(len(counts), dtype=float)
    w = np.asarray(counts, dtype=float)
    R = w.sum()
    mean = float((k * w).sum() / R)
    d = k - mean
    m2 = float((w * d**2).sum() / R)
    if m2 <= 0.0:
        return mean, 0.0, None, None
    m3 = float((w * d**3).sum() / R)
    m4 = float((w * d**4).sum() / R)
    return mean, math.sqrt(m2), m3 / m2**1.5, m4 / m2**2


@dataclass(frozen=True)
class SimulationSummary:
    name: str
    n: int
    setting: Setting
    R: int
    counts: np.ndarray  # counts[k] = replications with k successes
    mean: float
    std: float
    skew: Optional[float]
    kurt: Optional[float]

    @property
    def mass(self) -> np.ndarray:
        return self.counts / self.R

    def tail(self, m: int) -> float:
        if m <= 0:
            return 1.0
        if m > self.n:
            return 0.0
        return float(self.counts[m:].sum() / self.R)

    def to_dict(self, thresholds: Sequence[int] = ()) -> Dict:
        return {
            "name": self.name,
            "n": self.n,
            "setting": self.setting.value,
            "R": self.R,
            "moments": {"mean": self.mean, "std": self.std, "skew": self.skew, "kurt": self.kurt},
            # a list keeps threshold order under sorted-key serialisation
            "tail": [[int(m), self.tail(m)] for m in thresholds],
            "histogram": [[k, int(c)] for k, c in enumerate(self.counts)],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SimulationSummary":
        counts = np.zeros(int(data["n"]) + 1, dtype=np.int64)
        for k, c in data["histogram"]:
            counts[int(k)] = int(c)
        return summary_from_counts(data["name"], Setting(data["setting"]), counts)


def summary_from_counts(name: str, setting: Setting, counts) -> SimulationSummary:
    counts = np.asarray(counts, dtype=np.int64)
    R = int(counts.sum())
    mean, std, skew, kurt = _moments_from_hist(counts)
    return SimulationSummary(name, len(counts) - 1, Setting(setting), R, counts, mean, std, skew, kurt)


def tail_probabilities(summary: SimulationSummary, thresholds: Iterable[int]) -> Dict[int, float]:
    """P(K >= m) per threshold, read off the stored histogram."""
    out = {}
    for m in thresholds:
        if int(m) != m or m < 0:
            raise ValueError(f"threshold must be a nonnegative integer, got {m}")
        out[int(m)] = summary.tail(int(m))
    return out


def simulate(
    portfolio: Portfolio,
    params: ModelParams,
    setting: Setting,
    R: int,
    seed: int,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> SimulationSummary:
    """Distribution of the success count K over R replications.

    Feasibility of every deal's variance is checked before drawing, in both
    settings. Block b of replications always uses substream (seed, b), so
    the histogram is identical for any ``workers``.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    setting = Setting(setting)
    probs = portfolio.probs
    if ((probs <= 0) | (probs >= 1)).any():
        raise ValueError("portfolio probabilities must lie strictly inside (0, 1)")
    EL, phi = _factor_terms(portfolio.vectors, params)
    t = ndtri(probs)
    args = (seed, setting, probs, t, EL, phi, params.alpha0)
    blocks = _blocks(R, block_size)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda br: _count_block(br[0], br[1], *args), blocks))
    else:
        parts = [_count_block(b, reps, *args) for b, reps in blocks]
    K = np.concatenate(parts)
    counts = np.bincount(K, minlength=portfolio.spec.n + 1)
    return summary_from_counts(portfolio.spec.name, setting, counts)


def poisson_binomial_moments(probs):
    """Exact (mean, variance, skewness) of a sum of independent Bernoullis."""
    p = np.asarray(probs, dtype=float)
    var = float(np.sum(p * (1 - p)))
    third = float(np.sum(p * (1 - p) * (1 - 2 * p)))
    return float(p.sum()), var, third / var**1.5


# ---------------------------------------------------------------------------
# correlation histograms


def bernoulli_correlation_bounds(p_i, p_j):
    """Attainable range of the indicator correlation for given marginals."""
    p_i = np.asarray(p_i, dtype=float)
    p_j = np.asarray(p_j, dtype=float)
    sd = np.sqrt(p_i * (1 - p_i) * p_j * (1 - p_j))
    hi = (np.minimum(p_i, p_j) - p_i * p_j) / sd
    lo = (np.maximum(0.0, p_i + p_j - 1.0) - p_i * p_j) / sd
    return lo, hi


@dataclass(frozen=True)
class CorrelationHistograms:
    first: np.ndarray
    second: np.ndarray
    latent: np.ndarray
    bernoulli: np.ndarray
    edges: np.ndarray
    latent_counts: np.ndarray
    bernoulli_counts: np.ndarray

    def rows(self):
        """(bin_lo, bin_hi, latent_count, bernoulli_count) per bin."""
        return [
            (float(self.edges[b]), float(self.edges[b + 1]),
             int(self.latent_counts[b]), int(self.bernoulli_counts[b]))
            for b in range(len(self.latent_counts))
        ]


def correlation_histograms(population, params: ModelParams, M: int, seed: int, bins: int = 200) -> CorrelationHistograms:
    """Latent and induced indicator correlations for M random distinct deal pairs."""
    if M < 1:
        raise ValueError("M must be >= 1")
    deals = list(population)
    if len(deals) < 2:
        raise ValueError("need at least two deals")
    E = encode_many(deals).astype(float)
    probs = np.array([d.p for d in deals], dtype=float)
    rng = np.random.default_rng(seed)
    i = rng.integers(len(deals), size=M)
    j = rng.integers(len(deals) - 1, size=M)
    j = j + (j >= i)  # uniform over indices other than i
    r = params.alpha0**2 + np.einsum("ki,ij,kj->k", E[i], params.sigma, E[j])
    if (np.abs(r) >= 1.0).any():
        k = int(np.argmax(np.abs(r) >= 1.0))
        raise InfeasibleVarianceError([E[i[k]]], [r[k]])
    rho = bernoulli_correlation_array(probs[i], probs[j], r)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    return CorrelationHistograms(
        first=i,
        second=j,
        latent=r,
        bernoulli=rho,
        edges=edges,
        latent_counts=np.histogram(r, edges)[0],
        bernoulli_counts=np.histogram(rho, edges)[0],
    )
