"""Moment-matching estimation of (alpha0, Sigma) from pairwise joint success rates.

For every unordered attribute pair (u, v) a sample of ordered deal pairs is
drawn; the empirical joint rate (mean of x_i x_j) is matched to the model
rate (mean of Phi2(t_i, t_j; r_ij)) by weighted least squares over the
loadings L (Sigma = L L') and alpha0.

Gradients are analytic in both Phi2 modes: dPhi2/dr is the bivariate normal
density (exact mode) or phi(t_i) phi(t_j) (linear mode), and r is bilinear
in L. Pair-level sums are aggregated per attribute profile so the gradient
with respect to Sigma costs one 12 x P x P x 12 product.
"""

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr, ndtri

from .mathcore import FixedThresholdBvn, bvn_cdf_array, bvn_cdf_linear_array
from .model import (
    ATTRIBUTE_LABELS,
    N_ATTRIBUTES,
    InfeasibleVarianceError,
    ModelParams,
    encode_many,
)

log = logging.getLogger(__name__)

__all__ = [
    "EmptyCellError",
    "MissingOutcomeError",
    "FitConfig",
    "PairSample",
    "FitReport",
    "CELLS",
    "eligible_pair_count",
    "sample_pairs",
    "empirical_joint",
    "model_joint",
    "objective",
    "fit",
    "fit_metrics",
    "cells_to_table",
    "full_empirical_joint",
    "outcomes_from_deals",
]

# all unordered attribute pairs u <= v, in row-major order
CELLS = tuple((u, v) for u in range(N_ATTRIBUTES) for v in range(u, N_ATTRIBUTES))


class EmptyCellError(ValueError):
    """No ordered deal pair is eligible for an attribute pair."""


class MissingOutcomeError(ValueError):
    pass


@dataclass(frozen=True)
class FitConfig:
    pairs_per_cell: int = 5000
    weights: str = "uniform"  # or "ess"
    phi2_mode: str = "exact"  # or "linear"
    rank: int = N_ATTRIBUTES
    max_iters: int = 5000
    convergence_tol: float = 1e-9
    convergence_window: int = 20
    clamp_eps: float = 0.01
    penalty: float = 10.0
    mse_cells: str = "directed"  # or "unique"
    alpha0_init: float = 0.1
    loading_init: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.pairs_per_cell < 1:
            raise ValueError("pairs_per_cell must be >= 1")
        if not 0.0 < self.clamp_eps < 0.1:
            raise ValueError("clamp_eps must lie in (0, 0.1)")
        if self.weights not in ("uniform", "ess"):
            raise ValueError("weights must be 'uniform' or 'ess'")
        if self.phi2_mode not in ("exact", "linear"):
            raise ValueError("phi2_mode must be 'exact' or 'linear'")
        if self.mse_cells not in ("directed", "unique"):
            raise ValueError("mse_cells must be 'directed' or 'unique'")
        if not 1 <= self.rank <= N_ATTRIBUTES:
            raise ValueError("rank must be between 1 and 12")
        if not 0.0 <= self.alpha0_init < 1.0:
            raise ValueError("alpha0_init must lie in [0, 1)")


@dataclass(frozen=True)
class PairSample:
    """K ordered deal-index pairs for attribute pair (u, v).

    ``first[k]`` carries attribute u, ``second[k]`` carries v, and they are
    distinct deals. ``available`` is the size of the eligible ordered set.
    """

    u: int
    v: int
    first: np.ndarray
    second: np.ndarray
    available: int

    def __len__(self):
        return len(self.first)


def _as_matrix(deals_or_matrix):
    if isinstance(deals_or_matrix, np.ndarray):
        return deals_or_matrix
    return encode_many(deals_or_matrix)


def eligible_pair_count(deals_or_matrix, u: int, v: int) -> int:
    E = _as_matrix(deals_or_matrix)
    cu = E[:, u].astype(bool)
    cv = E[:, v].astype(bool)
    return int(cu.sum()) * int(cv.sum()) - int((cu & cv).sum())


def sample_pairs(deals_or_matrix, u: int, v: int, k: int, seed: int) -> PairSample:
    """Draw ``k`` ordered pairs uniformly, with replacement, from the eligible set.

    Uniform draws from U x V are rejected when both indices name the same
    deal, which leaves the distribution uniform over ordered distinct pairs.
    The stream is keyed by (seed, u, v), so cells are sampled independently
    of one another and of the order in which they are requested.
    """
    E = _as_matrix(deals_or_matrix)
    holders_u = np.flatnonzero(E[:, u])
    holders_v = np.flatnonzero(E[:, v])
    available = eligible_pair_count(E, u, v)
    if available == 0:
        raise EmptyCellError(
            f"no eligible deal pairs for ({ATTRIBUTE_LABELS[u]}, {ATTRIBUTE_LABELS[v]})"
        )
    rng = np.random.default_rng([seed, u, v])
    first = np.empty(k, dtype=np.int64)
    second = np.empty(k, dtype=np.int64)
    filled = 0
    while filled < k:
        need = k - filled
        i = holders_u[rng.integers(len(holders_u), size=need)]
        j = holders_v[rng.integers(len(holders_v), size=need)]
        ok = i != j
        n_ok = int(ok.sum())
        first[filled : filled + n_ok] = i[ok]
        second[filled : filled + n_ok] = j[ok]
        filled += n_ok
    return PairSample(u, v, first, second, available)


def outcomes_from_deals(deals) -> np.ndarray:
    """Outcome vector from deal records; every deal must carry an outcome."""
    out = np.empty(len(deals), dtype=np.uint8)
    for idx, d in enumerate(deals):
        if d.outcome is None:
            raise MissingOutcomeError(f"deal {d.id} has no outcome")
        out[idx] = d.outcome
    return out


def _outcome_matrix(outcomes):
    X = np.asarray(outcomes, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError("outcomes must be a vector or a (worlds x deals) matrix")
    return X


def empirical_joint(sample: PairSample, outcomes, ids: Optional[Sequence[str]] = None) -> float:
    """Mean of x_i * x_j over the sampled pairs.

    ``outcomes`` is a 0/1 vector over deals, or a (worlds x deals) matrix of
    independent replications of the population, in which case the mean also
    runs over worlds. Missing outcomes are NaN.
    """
    X = _outcome_matrix(outcomes)
    xi = X[:, sample.first]
    xj = X[:, sample.second]
    bad = np.isnan(xi).any(axis=0) | np.isnan(xj).any(axis=0)
    if bad.any():
        k = int(np.argmax(bad))
        idx = sample.first[k] if np.isnan(xi[:, k]).any() else sample.second[k]
        name = ids[idx] if ids is not None else f"#{idx}"
        raise MissingOutcomeError(f"missing outcome for deal {name}")
    return float((xi * xj).mean())


def _thresholds(probs):
    p = np.asarray(probs, dtype=float)
    if ((p <= 0) | (p >= 1)).any():
        raise ValueError("success probabilities must lie strictly inside (0, 1)")
    return ndtri(p)


def _phi2(t1, t2, r, mode):
    return bvn_cdf_array(t1, t2, r) if mode == "exact" else bvn_cdf_linear_array(t1, t2, r)


def model_joint(
    sample: PairSample,
    params: ModelParams,
    E,
    probs,
    mode: str = "exact",
    clamp_eps: float = 0.01,
    counter: Optional[Counter] = None,
) -> float:
    """Mean over the sampled pairs of Phi2(t_i, t_j; r_ij) with t = Phi^-1(p).

    ``E`` holds the attribute vectors of all deals (rows indexed like
    ``probs``). Latent correlations are clamped to +-(1 - clamp_eps); the
    number of clamped pairs is added to ``counter["clamped"]`` if given.
    """
    E = np.asarray(E, dtype=float)
    idx = np.union1d(sample.first, sample.second)
    diag = params.alpha0**2 + np.einsum("ni,ij,nj->n", E[idx], params.sigma, E[idx])
    if (diag >= 1.0).any():
        bad = idx[diag >= 1.0]
        raise InfeasibleVarianceError(E[bad], diag[diag >= 1.0])
    t = _thresholds(probs)
    r = params.alpha0**2 + np.einsum(
        "ki,ij,kj->k", E[sample.first], params.sigma, E[sample.second]
    )
    lim = 1.0 - clamp_eps
    clamped = np.abs(r) > lim
    if counter is not None:
        counter["clamped"] += int(clamped.sum())
    r = np.clip(r, -lim, lim)
    return float(_phi2(t[sample.first], t[sample.second], r, mode).mean())


def cells_to_table(values: Dict[Tuple[int, int], float]) -> np.ndarray:
    """Symmetric 12 x 12 table from per-cell values keyed by (u, v), u <= v."""
    table = np.full((N_ATTRIBUTES, N_ATTRIBUTES), np.nan)
    for (u, v), val in values.items():
        table[u, v] = table[v, u] = val
    return table


def fit_metrics(empirical, model, cells: str = "directed") -> Tuple[float, float]:
    """Unweighted MSE / RMSE over 144 directed or 78 unique cells (NaNs skipped)."""
    emp = np.asarray(empirical, dtype=float)
    mod = np.asarray(model, dtype=float)
    if emp.shape != mod.shape:
        raise ValueError(f"shape mismatch: {emp.shape} vs {mod.shape}")
    resid = emp - mod
    if cells == "unique":
        resid = resid[np.triu_indices(resid.shape[0])]
    elif cells != "directed":
        raise ValueError("cells must be 'directed' or 'unique'")
    resid = resid[np.isfinite(resid)]
    mse = float(np.mean(resid**2)) if resid.size else 0.0
    return mse, math.sqrt(mse)


def full_empirical_joint(E, outcomes) -> np.ndarray:
    """Joint success rate over *all* ordered distinct pairs, per attribute pair.

    Uses sum_{i in U, j in V, i != j} x_i x_j = s_u s_v - s_uv, where s_u counts
    successes among holders of u and s_uv among holders of both.
    """
    E = np.asarray(E, dtype=float)
    X = _outcome_matrix(outcomes)
    n = E.sum(axis=0)
    avail = np.outer(n, n) - E.T @ E
    hits = np.zeros_like(avail)
    for x in X:
        s = E.T @ x
        s2 = (E * x[:, None]).T @ E
        hits += np.outer(s, s) - s2
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(avail > 0, hits / (avail * len(X)), np.nan)


# ---------------------------------------------------------------------------
# vectorised objective over all cells


class _Problem:
    """All sampled pairs of all cells, compressed to attribute profiles."""

    def __init__(self, E, probs, samples, emp, weights, mode, clamp_eps, penalty):
        E = np.asarray(E)
        profiles, prof_of_deal = np.unique(E, axis=0, return_inverse=True)
        prof_of_deal = prof_of_deal.ravel()
        self.P = profiles.astype(float)
        self.n_prof = len(profiles)
        t = _thresholds(probs)
        self.cell_of_pair = np.concatenate(
            [np.full(len(s), c, dtype=np.int64) for c, s in enumerate(samples)]
        )
        first = np.concatenate([s.first for s in samples])
        second = np.concatenate([s.second for s in samples])
        self.t1 = t[first]
        self.t2 = t[second]
        self.pa = prof_of_deal[first]
        self.pb = prof_of_deal[second]
        self.flat = self.pa * self.n_prof + self.pb
        self.cell_size = np.array([len(s) for s in samples], dtype=float)
        self.emp = np.asarray(emp, dtype=float)
        self.w = np.asarray(weights, dtype=float)
        self.mode = mode
        self.lim = 1.0 - clamp_eps
        # the penalty wall sits inside the clamp so that, by Cauchy-Schwarz,
        # no pair is clamped (and the gradient has no kink) near the optimum
        self.wall = 1.0 - 1.5 * clamp_eps
        self.penalty = penalty
        # r depends on the pair only through its profile pair
        self.uniq_flat, self.group = np.unique(self.flat, return_inverse=True)
        self.group = self.group.ravel()
        if mode == "exact":
            self.bvn = FixedThresholdBvn(self.t1, self.t2, groups=self.group)
        else:
            self._init_linear(E.astype(float)[first], E.astype(float)[second])

    def _init_linear(self, E1, E2):
        # With nothing clipped the linear model is affine in (alpha0^2, Sigma):
        # cell c = base_c + alpha0^2 s_c + <M_c, Sigma>.
        n_cells = len(self.emp)
        phi_t1 = np.exp(-0.5 * self.t1**2) / math.sqrt(2.0 * math.pi)
        phi_t2 = np.exp(-0.5 * self.t2**2) / math.sqrt(2.0 * math.pi)
        cdf_prod = ndtr(self.t1) * ndtr(self.t2)
        self.lin_slope = phi_t1 * phi_t2
        w = self.lin_slope / self.cell_size[self.cell_of_pair]
        self.lin_base = np.bincount(self.cell_of_pair, cdf_prod, n_cells) / self.cell_size
        self.lin_alpha = np.bincount(self.cell_of_pair, w, n_cells)
        self.lin_M = np.zeros((n_cells, N_ATTRIBUTES, N_ATTRIBUTES))
        bounds = np.concatenate([[0], np.cumsum(self.cell_size.astype(np.int64))])
        for c in range(n_cells):
            sl = slice(bounds[c], bounds[c + 1])
            self.lin_M[c] = (E1[sl] * w[sl, None]).T @ E2[sl]
        # range of r per profile pair where neither the [0, 1] clip nor the
        # correlation clamp binds for any pair sharing those profiles
        lo = np.maximum(-cdf_prod / self.lin_slope, -self.lim)
        hi = np.minimum((1.0 - cdf_prod) / self.lin_slope, self.lim)
        self.lin_flat, inv = np.unique(self.flat, return_inverse=True)
        self.lin_lo = np.full(len(self.lin_flat), -np.inf)
        self.lin_hi = np.full(len(self.lin_flat), np.inf)
        np.maximum.at(self.lin_lo, inv, lo)
        np.minimum.at(self.lin_hi, inv, hi)

    def _linear_affine(self, K):
        if self.mode != "linear":
            return False
        r = K.ravel()[self.lin_flat]
        return bool(np.all(r >= self.lin_lo) and np.all(r <= self.lin_hi))

    # alpha0^2 = a^2 / (1 + a^2) keeps alpha0 in [0, 1); the objective depends
    # on alpha0 only through alpha0^2, which is then quadratic in a near zero
    @staticmethod
    def unpack(theta, rank):
        a = theta[0]
        alpha0 = math.sqrt(a * a / (1.0 + a * a))
        L = theta[1:].reshape(N_ATTRIBUTES, rank)
        return a, alpha0, L

    @staticmethod
    def pack(alpha0, L):
        a = alpha0 / math.sqrt(1.0 - alpha0 * alpha0)
        return np.concatenate([[a], np.asarray(L, dtype=float).ravel()])

    def model_cells(self, alpha0, sigma):
        """Cell means plus the clamped r and the unclamped mask, per profile pair."""
        K = alpha0**2 + self.P @ sigma @ self.P.T
        r = K.ravel()[self.uniq_flat]
        inside = np.abs(r) <= self.lim
        r = np.clip(r, -self.lim, self.lim)
        if self.mode == "exact":
            vals = self.bvn.cdf_grouped(r)
        else:
            vals = bvn_cdf_linear_array(self.t1, self.t2, r[self.group])
        sums = np.bincount(self.cell_of_pair, weights=vals, minlength=len(self.emp))
        return sums / self.cell_size, r, inside

    def value_and_grad(self, theta, rank):
        a, alpha0, L = self.unpack(theta, rank)
        sigma = L @ L.T
        K = alpha0**2 + self.P @ sigma @ self.P.T
        if self._linear_affine(K):
            model = self.lin_base + alpha0**2 * self.lin_alpha + np.tensordot(self.lin_M, sigma)
            resid = self.emp - model
            g_cell = -2.0 * self.w * resid
            d_sigma = np.tensordot(g_cell, self.lin_M, axes=1)
            d_alpha_sq = float(g_cell @ self.lin_alpha)
        else:
            model, r, inside = self.model_cells(alpha0, sigma)
            resid = self.emp - model
            if self.mode == "exact":
                slope = self.bvn.pdf_grouped(r)
            else:
                # clipped linear values are flat in r
                raw = ndtr(self.t1) * ndtr(self.t2) + r[self.group] * self.lin_slope
                slope = np.where((raw > 0.0) & (raw < 1.0), self.lin_slope, 0.0)
            g_pair = np.where(inside[self.group], slope, 0.0) * (
                -2.0 * self.w * resid / self.cell_size
            )[self.cell_of_pair]
            G = np.bincount(self.flat, weights=g_pair, minlength=self.n_prof**2).reshape(
                self.n_prof, self.n_prof
            )
            d_sigma = self.P.T @ G @ self.P
            d_alpha_sq = g_pair.sum()
        value = float(np.sum(self.w * resid**2))

        # hinge penalty on alpha0^2 + e' Sigma e for every profile
        diag = alpha0**2 + np.einsum("pi,ij,pj->p", self.P, sigma, self.P)
        excess = np.maximum(diag - self.wall, 0.0)
        value += self.penalty * float(np.sum(excess**2))
        h = 2.0 * self.penalty * excess
        d_sigma = d_sigma + (self.P * h[:, None]).T @ self.P
        d_alpha_sq += h.sum()

        d_L = (d_sigma + d_sigma.T) @ L
        d_a = d_alpha_sq * 2.0 * a / (1.0 + a * a) ** 2
        return value, np.concatenate([[d_a], d_L.ravel()])

    def max_diag(self, alpha0, sigma):
        return float(np.max(alpha0**2 + np.einsum("pi,ij,pj->p", self.P, sigma, self.P)))


def objective(params: ModelParams, samples, weights, emp, E, probs, mode="exact", clamp_eps=0.01):
    """Weighted sum of squared differences between empirical and model cell rates.

    ``samples``, ``weights`` and ``emp`` are aligned per cell. Cells with zero
    weight contribute nothing.
    """
    prob = _Problem(E, probs, samples, emp, weights, mode, clamp_eps, penalty=0.0)
    model, _, _ = prob.model_cells(params.alpha0, np.asarray(params.sigma))
    return float(np.sum(prob.w * (prob.emp - model) ** 2))


def _shrink_to_feasible(alpha0, L, max_diag_fn, lim):
    """Scale L (and alpha0 if needed) so every profile has diag kernel <= lim."""
    sigma = L @ L.T
    worst = max_diag_fn(alpha0, sigma)
    if worst <= lim:
        return alpha0, L, False
    if alpha0**2 >= lim:
        alpha0 = math.sqrt(lim) * 0.5
    quad = max_diag_fn(0.0, sigma)
    scale = math.sqrt(max(lim - alpha0**2, 0.0) / quad) * (1.0 - 1e-9) if quad > 0 else 1.0
    return alpha0, L * scale, True


@dataclass
class FitReport:
    params: ModelParams
    mse: float
    rmse: float
    empirical: np.ndarray
    model: np.ndarray
    weights: np.ndarray
    iterations: int
    converged: bool
    objective_history: List[float] = field(default_factory=list)
    clamped_pairs: int = 0
    shrunk: bool = False
    config: Optional[FitConfig] = None

    @property
    def residuals(self) -> np.ndarray:
        return self.empirical - self.model

    def to_dict(self) -> Dict:
        def table(tab):
            return {
                ATTRIBUTE_LABELS[i]: {
                    ATTRIBUTE_LABELS[j]: (None if not np.isfinite(tab[i, j]) else float(tab[i, j]))
                    for j in range(N_ATTRIBUTES)
                }
                for i in range(N_ATTRIBUTES)
            }

        return {
            "theta": {
                "alpha0": float(self.params.alpha0),
                "rank": int(self.params.rank),
                "L": [float(x) for x in self.params.loadings.ravel()],
                "sigma": table(np.asarray(self.params.sigma)),
            },
            "metrics": {
                "mse": self.mse,
                "rmse": self.rmse,
                "iterations": self.iterations,
                "converged": self.converged,
                "clamped_pairs": self.clamped_pairs,
                "shrunk_to_feasible": self.shrunk,
                "final_objective": self.objective_history[-1] if self.objective_history else None,
            },
            "tables": {
                "empirical": table(self.empirical),
                "model": table(self.model),
                "residual": table(self.residuals),
            },
            "config": asdict(self.config) if self.config else None,
        }


def params_from_report_dict(data: Dict) -> ModelParams:
    theta = data["theta"]
    L = np.array(theta["L"], dtype=float).reshape(N_ATTRIBUTES, int(theta["rank"]))
    return ModelParams(alpha0=float(theta["alpha0"]), loadings=L)


def _cell_weights(samples_avail, config):
    if config.weights == "uniform":
        return np.ones(len(samples_avail))
    k = config.pairs_per_cell
    return np.array([min(a, k) / k for a in samples_avail], dtype=float)


def fit(
    deals,
    outcomes,
    config: FitConfig = FitConfig(),
    probs=None,
    init: Optional[ModelParams] = None,
) -> FitReport:
    """Fit (alpha0, L) by weighted least squares on the 78 attribute-pair cells.

    Parameters
    ----------
    deals : list of Deal
        Attribute records; ``deal.p`` supplies thresholds unless ``probs`` given.
    outcomes : array
        0/1 outcomes per deal, or a (worlds x deals) matrix of replications.
    config : FitConfig
    init : ModelParams, optional
        Starting point. Infeasible starts are shrunk until feasible.

    Non-convergence within ``max_iters`` is reported through
    ``FitReport.converged`` rather than raised.
    """
    E = encode_many(deals)
    if probs is None:
        probs = np.array([d.p for d in deals], dtype=float)
    outcomes = _outcome_matrix(outcomes)

    samples, emp, avail, cells = [], [], [], []
    for u, v in CELLS:
        try:
            s = sample_pairs(E, u, v, config.pairs_per_cell, config.seed)
        except EmptyCellError:
            log.warning("cell (%s, %s) has no eligible pairs; weight 0",
                        ATTRIBUTE_LABELS[u], ATTRIBUTE_LABELS[v])
            continue
        samples.append(s)
        emp.append(empirical_joint(s, outcomes, ids=[d.id for d in deals]))
        avail.append(s.available)
        cells.append((u, v))
    weights = _cell_weights(avail, config)

    prob = _Problem(
        E, probs, samples, emp, weights, config.phi2_mode, config.clamp_eps, config.penalty
    )
    rank = config.rank
    lim = 1.0 - config.clamp_eps
    if init is None:
        alpha0 = config.alpha0_init
        L = config.loading_init * np.eye(N_ATTRIBUTES, rank)
    else:
        alpha0 = init.alpha0
        L = np.array(init.loadings, dtype=float)
        if L.shape[1] != rank:
            raise ValueError(f"init rank {L.shape[1]} differs from config rank {rank}")
    alpha0, L, _ = _shrink_to_feasible(alpha0, L, prob.max_diag, lim)

    history: List[float] = []
    state = {"converged": False}
    window = config.convergence_window

    def callback(intermediate_result):
        history.append(float(intermediate_result.fun) / scale)
        if len(history) > window:
            old = history[-window - 1]
            new = history[-1]
            if old - new <= config.convergence_tol * max(abs(old), 1e-300):
                state["converged"] = True
                raise StopIteration

    theta0 = _Problem.pack(alpha0, L)
    f0, _ = prob.value_and_grad(theta0, rank)
    history.append(f0)
    # the optimiser sees the objective in units of its starting value
    scale = 1.0 / f0 if f0 > 0 else 1.0

    def scaled(theta):
        f, g = prob.value_and_grad(theta, rank)
        return f * scale, g * scale

    # restart with fresh curvature memory if the line search gives up early
    theta = theta0
    iterations = 0
    while iterations < config.max_iters and not state["converged"]:
        res = minimize(
            scaled,
            theta,
            jac=True,
            method="L-BFGS-B",
            callback=callback,
            options={
                "maxiter": config.max_iters - iterations,
                "ftol": 0.0,
                "gtol": 1e-14,
                "maxcor": 20,
                # the penalty wall is stiff; short line searches give up early
                "maxls": 60,
            },
        )
        iterations += int(res.nit)
        theta = res.x
        log.debug("optimizer stopped after %d iterations: %s", res.nit, res.message)
        if res.status == 0:
            state["converged"] = True
        if res.nit == 0:
            log.warning("line search stalled; returning the last accepted point")
            break
    converged = state["converged"]
    _, alpha0, L = _Problem.unpack(theta, rank)
    alpha0, L, shrunk = _shrink_to_feasible(alpha0, L, prob.max_diag, lim)
    params = ModelParams(alpha0=alpha0, loadings=L)

    model_vals, r, _ = prob.model_cells(alpha0, L @ L.T)
    clamped = int((np.abs(r[prob.group]) >= lim).sum())
    emp_table = cells_to_table(dict(zip(cells, emp)))
    model_table = cells_to_table(dict(zip(cells, model_vals)))
    mse, rmse = fit_metrics(emp_table, model_table, config.mse_cells)
    log.info("fit finished: %d iterations, converged=%s, RMSE=%.6f", iterations, converged, rmse)
    return FitReport(
        params=params,
        mse=mse,
        rmse=rmse,
        empirical=emp_table,
        model=model_table,
        weights=cells_to_table(dict(zip(cells, weights))),
        iterations=iterations,
        converged=bool(converged),
        objective_history=history,
        clamped_pairs=clamped,
        shrunk=shrunk,
        config=config,
    )


def model_joint_table(deals, params: ModelParams, config: FitConfig = FitConfig(), probs=None):
    """Model-implied 12 x 12 joint table on the same pair samples ``fit`` draws."""
    E = encode_many(deals)
    if probs is None:
        probs = np.array([d.p for d in deals], dtype=float)
    values = {}
    for u, v in CELLS:
        try:
            s = sample_pairs(E, u, v, config.pairs_per_cell, config.seed)
        except EmptyCellError:
            continue
        values[(u, v)] = model_joint(
            s, params, E, probs, mode=config.phi2_mode, clamp_eps=config.clamp_eps
        )
    return cells_to_table(values)
