"""Deal-population reconstruction from published first/second-order counts.

The population is rebuilt in three steps:

1. invert the ordered-pair identity ``pairs(u, v) = n_u n_v - n_uv`` to get
   single-deal co-occurrence counts;
2. rake a (founder x geography x market-subset) contingency table onto all
   first- and second-order targets with iterative proportional fitting;
3. repair the fractional IPF table to an integer table that satisfies every
   target exactly, by choosing floor/ceil per cell with a small MILP.

Cells whose attribute vector is infeasible under a reference covariance
(``alpha0^2 + e' Sigma e`` too close to 1) can be pinned to zero so the
population can be simulated under that covariance.
"""

import csv
import logging
from dataclasses import dataclass
from itertools import product
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .model import (
    ATTRIBUTE_LABELS,
    FOUNDERS,
    GEOGRAPHIES,
    HOT_MARKETS,
    MARKETS,
    N_ATTRIBUTES,
    Deal,
    FounderType,
    Geography,
    Market,
    ModelParams,
    diagonal_kernel,
    encode_many,
)

log = logging.getLogger(__name__)

__all__ = [
    "InconsistentTablesError",
    "PopulationInfeasibleError",
    "DealFileError",
    "SyntheticProbRule",
    "PUBLISHED_HOT_COUNTS",
    "PUBLISHED_BUCKET_COUNTS",
    "derive_cooccurrence",
    "cooccurrence_from_deals",
    "pair_counts_from_deals",
    "marginals_from_deals",
    "generate_population",
    "assign_probability",
    "save_deals",
    "load_deals",
    "bucket_report",
    "verify_population",
]

# Deals carrying >= 1 hot market, (first-time, repeat)
PUBLISHED_HOT_COUNTS = (5397, 299)

# bucket -> (first-time count, repeat count)
PUBLISHED_BUCKET_COUNTS = {
    "None": (8833, 422),
    "CA / NY": (4064, 245),
    "Other US / Intl": (4769, 177),
    "Hot Sectors": (5397, 299),
    "Non-Hot Sectors": (3436, 123),
}

_HOT_IDX = [6 + MARKETS.index(m) for m in (Market.SAAS, Market.AI, Market.FINTECH)]


class InconsistentTablesError(ValueError):
    def __init__(self, message, cells=()):
        self.cells = list(cells)
        if self.cells:
            message += ": " + ", ".join(f"({u},{v})" for u, v in self.cells)
        super().__init__(message)


class PopulationInfeasibleError(ValueError):
    def __init__(self, violated):
        self.violated = list(violated)
        super().__init__(
            "no integer population satisfies the targets; violated constraints: "
            + ", ".join(self.violated)
        )


class DealFileError(ValueError):
    pass


def _check_square(pairs):
    pairs = np.asarray(pairs)
    if pairs.shape != (N_ATTRIBUTES, N_ATTRIBUTES):
        raise InconsistentTablesError(f"pair table must be 12 x 12, got {pairs.shape}")
    return pairs


def derive_cooccurrence(marginals, pairs) -> np.ndarray:
    """Single-deal co-occurrence ``n_uv = n_u n_v - pairs(u, v)``.

    Raises InconsistentTablesError naming the offending cells when the tables
    disagree (asymmetry, diagonal != n(n-1), negative or oversized counts,
    nonzero counts across mutually exclusive categories).
    """
    n = np.asarray(marginals, dtype=np.int64)
    pairs = _check_square(np.asarray(pairs, dtype=np.int64))
    if n.shape != (N_ATTRIBUTES,):
        raise InconsistentTablesError("marginals must have 12 entries")
    if n[0:2].sum() != n[2:6].sum():
        raise InconsistentTablesError("founder and geography counts sum to different totals")
    lab = ATTRIBUTE_LABELS
    asym = [(lab[i], lab[j]) for i, j in zip(*np.nonzero(pairs != pairs.T)) if i < j]
    if asym:
        raise InconsistentTablesError("pair table is not symmetric", asym)
    diag_bad = [(lab[i], lab[i]) for i in range(N_ATTRIBUTES) if pairs[i, i] != n[i] * (n[i] - 1)]
    if diag_bad:
        raise InconsistentTablesError("pair-table diagonal differs from n(n-1)", diag_bad)

    cooc = np.outer(n, n) - pairs
    bound = np.minimum.outer(n, n)
    bad = (cooc < 0) | (cooc > bound)
    for block in (slice(0, 2), slice(2, 6)):
        sub = np.zeros_like(bad)
        sub[block, block] = True
        np.fill_diagonal(sub, False)
        bad |= sub & (cooc != 0)
    cells = [(lab[i], lab[j]) for i, j in zip(*np.nonzero(bad)) if i <= j]
    if cells:
        raise InconsistentTablesError("derived co-occurrence counts are infeasible", cells)
    return cooc


def marginals_from_deals(deals) -> np.ndarray:
    return encode_many(deals).sum(axis=0).astype(np.int64)


def cooccurrence_from_deals(deals) -> np.ndarray:
    E = encode_many(deals).astype(np.int64)
    return E.T @ E


def pair_counts_from_deals(deals) -> np.ndarray:
    """Ordered pairs (i, j), i != j, with deal i carrying u and deal j carrying v."""
    E = encode_many(deals).astype(np.int64)
    n = E.sum(axis=0)
    return np.outer(n, n) - E.T @ E


@dataclass(frozen=True)
class SyntheticProbRule:
    repeat_range: tuple = (0.12, 0.20)
    first_range: tuple = (0.05, 0.12)
    geo_nudge: float = 0.01
    sector_nudge: float = 0.01
    cap: float = 0.20

    def __post_init__(self):
        for lo, hi in (self.repeat_range, self.first_range):
            if not lo <= hi:
                raise ValueError("probability ranges must be ordered")
        if self.cap < max(self.repeat_range[1], self.first_range[1]):
            raise ValueError("cap must not be below the upper range ends")


def assign_probability(deal: Deal, rng: np.random.Generator, rule=SyntheticProbRule()) -> float:
    """Synthetic success probability: founder-specific uniform plus nudges, capped.

    The sector nudge is applied once however many hot markets the deal has.
    """
    lo, hi = rule.repeat_range if deal.founder is FounderType.REPEAT else rule.first_range
    p = rng.uniform(lo, hi)
    if deal.geo in (Geography.CA, Geography.NY):
        p += rule.geo_nudge
    if deal.markets & HOT_MARKETS:
        p += rule.sector_nudge
    return float(min(p, rule.cap))


# ---------------------------------------------------------------------------
# contingency-table reconstruction


def _cell_vectors():
    cells = []
    for f, g, m in product(range(2), range(4), range(64)):
        e = np.zeros(N_ATTRIBUTES, dtype=np.int8)
        e[f] = 1
        e[2 + g] = 1
        for k in range(6):
            if m >> k & 1:
                e[6 + k] = 1
        cells.append(e)
    return np.array(cells)


def _constraints(E, n, cooc, hot_counts):
    """(name, mask, target) triples; mutual-exclusion cells are structural."""
    lab = ATTRIBUTE_LABELS
    cons = []
    for f in range(2):
        cons.append((f"{lab[f]}", E[:, f] > 0, int(n[f])))
    for u in range(N_ATTRIBUTES):
        for v in range(u, N_ATTRIBUTES):
            if u < 2 and v < 2:
                continue  # founder marginal already added; off-diagonal forced 0
            if 2 <= u < 6 and 2 <= v < 6 and u != v:
                continue
            name = lab[u] if u == v else f"{lab[u]}x{lab[v]}"
            cons.append((name, (E[:, u] > 0) & (E[:, v] > 0), int(cooc[u, v])))
    if hot_counts is not None:
        hot = E[:, _HOT_IDX].any(axis=1)
        for f in range(2):
            cons.append((f"{lab[f]}xHot", (E[:, f] > 0) & hot, int(hot_counts[f])))
    return cons


def _ipf(seed_table, cons, total, tol=1e-9, max_iter=5000):
    x = seed_table.astype(float).copy()
    if x.sum() > 0:
        x *= total / x.sum()
    masks = [m for _, m, _ in cons]
    targets = [t for _, _, t in cons]
    for it in range(max_iter):
        for mask, target in zip(masks, targets):
            inside = x[mask].sum()
            if inside > 0:
                x[mask] *= target / inside
            outside = x[~mask].sum()
            if outside > 0:
                x[~mask] *= (total - target) / outside
        err = max(abs(x[m].sum() - t) for m, t in zip(masks, targets))
        if err < tol:
            return x, it + 1, err
    return x, max_iter, err


def _round_table(x, A, b, allowed):
    """Integer table with A @ x = b, every cell at floor or ceil of the IPF value."""
    n_cells = len(x)
    lo = np.floor(x + 1e-9)
    hi = np.where(allowed, np.ceil(x - 1e-9), 0.0)
    lo = np.minimum(lo, hi)
    frac = x - lo
    res = milp(
        c=1.0 - 2.0 * frac,
        constraints=[LinearConstraint(A, b, b)],
        integrality=np.ones(n_cells),
        bounds=Bounds(lo, hi),
        options={"mip_rel_gap": 0.2},
    )
    if res.status == 0:
        return np.round(res.x).astype(np.int64)

    # widen the box and minimise L1 distance to the IPF table instead
    width = 3.0
    lo = np.maximum(np.floor(x) - width, 0.0)
    hi = np.where(allowed, np.ceil(x) + width, 0.0)
    A_full = np.hstack([A, np.zeros((A.shape[0], 2 * n_cells))])
    dev = np.hstack([np.eye(n_cells), -np.eye(n_cells), np.eye(n_cells)])
    res = milp(
        c=np.concatenate([np.zeros(n_cells), np.ones(2 * n_cells)]),
        constraints=[LinearConstraint(A_full, b, b), LinearConstraint(dev, x, x)],
        integrality=np.concatenate([np.ones(n_cells), np.zeros(2 * n_cells)]),
        bounds=Bounds(
            np.concatenate([lo, np.zeros(2 * n_cells)]),
            np.concatenate([hi, np.full(2 * n_cells, np.inf)]),
        ),
        options={"mip_rel_gap": 0.2},
    )
    if res.status == 0:
        return np.round(res.x[:n_cells]).astype(np.int64)
    return None


def generate_population(
    marginals,
    cooc,
    seed: int,
    hot_counts: Optional[Sequence[int]] = None,
    feasible_under: Optional[ModelParams] = None,
    margin: float = 0.01,
    rule: SyntheticProbRule = SyntheticProbRule(),
    assign_probabilities: bool = True,
) -> List[Deal]:
    """Rebuild a deal list matching the marginal and co-occurrence counts exactly.

    Parameters
    ----------
    marginals : array of 12 ints
        Deals per attribute.
    cooc : 12 x 12 int array
        Single-deal co-occurrence counts (see :func:`derive_cooccurrence`).
    seed : int
        Controls deal ordering, ids and synthetic probabilities. The cell
        counts do not depend on it.
    hot_counts : (int, int), optional
        Number of first-time and repeat deals carrying at least one hot market.
    feasible_under : ModelParams, optional
        Attribute vectors with ``alpha0^2 + e' Sigma e >= 1 - margin`` are
        excluded from the population.

    Raises
    ------
    PopulationInfeasibleError
        When no integer table meets every target.
    """
    n = np.asarray(marginals, dtype=np.int64)
    cooc = np.asarray(cooc, dtype=np.int64)
    total = int(n[0:2].sum())
    E = _cell_vectors()
    allowed = np.ones(len(E), dtype=bool)
    if feasible_under is not None:
        allowed &= diagonal_kernel(E, feasible_under) < 1.0 - margin

    cons = _constraints(E, n, cooc, hot_counts)
    x, iters, err = _ipf(allowed.astype(float), cons, total)
    log.debug("IPF finished after %d sweeps, max abs residual %.3g", iters, err)

    A = np.array([m for _, m, _ in cons], dtype=float)
    b = np.array([t for _, _, t in cons], dtype=float)
    counts = _round_table(x, A, b, allowed) if np.isfinite(x).all() else None
    if counts is None:
        resid = [abs(x[m].sum() - t) for _, m, t in cons]
        violated = [name for (name, _, _), r in zip(cons, resid) if r > 1e-6]
        raise PopulationInfeasibleError(violated or [name for name, _, _ in cons])

    cell_idx = np.repeat(np.arange(len(E)), counts)
    rng = np.random.default_rng(seed)
    cell_idx = cell_idx[rng.permutation(len(cell_idx))]
    width = max(5, len(str(total)))
    deals = []
    for k, c in enumerate(cell_idx):
        e = E[c]
        deal = Deal(
            id=f"D{k + 1:0{width}d}",
            founder=FOUNDERS[int(np.argmax(e[0:2]))],
            geo=GEOGRAPHIES[int(np.argmax(e[2:6]))],
            markets=frozenset(MARKETS[i] for i in range(6) if e[6 + i]),
        )
        deals.append(deal)
    if assign_probabilities:
        deals = [
            Deal(d.id, d.founder, d.geo, d.markets, p=assign_probability(d, rng, rule))
            for d in deals
        ]
    return deals


# ---------------------------------------------------------------------------
# deal files

DEAL_COLUMNS = ("id", "founder", "geo", "markets", "p", "outcome")


def _format_p(p):
    return "" if p is None else repr(float(p))


def save_deals(deals, path) -> None:
    """Write deals as UTF-8 CSV; probabilities keep full float precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DEAL_COLUMNS)
        for d in deals:
            markets = ";".join(m.value for m in MARKETS if m in d.markets)
            outcome = "" if d.outcome is None else str(d.outcome)
            w.writerow([d.id, d.founder.value, d.geo.value, markets, _format_p(d.p), outcome])


def _parse_row(row, lineno):
    if len(row) != len(DEAL_COLUMNS):
        raise DealFileError(f"line {lineno}: expected {len(DEAL_COLUMNS)} columns, got {len(row)}")
    did, founder, geo, markets, p, outcome = (c.strip() for c in row)
    if not did:
        raise DealFileError(f"line {lineno}: empty id")
    try:
        founder = FounderType(founder)
    except ValueError:
        raise DealFileError(f"line {lineno}: founder {founder!r} is not one of FirstTime/Repeat") from None
    try:
        geo = Geography(geo)
    except ValueError:
        raise DealFileError(
            f"line {lineno}: geography {geo!r} must be exactly one of CA/NY/OtherUS/Intl (one-hot)"
        ) from None
    labels = [m for m in markets.split(";") if m] if markets else []
    try:
        mset = frozenset(Market(m) for m in labels)
    except ValueError:
        raise DealFileError(f"line {lineno}: unknown market label in {markets!r}") from None
    if len(mset) != len(labels):
        raise DealFileError(f"line {lineno}: repeated market label in {markets!r}")
    try:
        pval = float(p) if p else None
        oval = int(outcome) if outcome else None
        return Deal(did, founder, geo, mset, p=pval, outcome=oval)
    except ValueError as exc:
        raise DealFileError(f"line {lineno}: {exc}") from None


def load_deals(path) -> List[Deal]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != DEAL_COLUMNS:
            raise DealFileError(f"line 1: header must be {','.join(DEAL_COLUMNS)}")
        deals = []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            deal = _parse_row(row, lineno)
            if deal.id in seen:
                raise DealFileError(f"line {lineno}: duplicate deal id {deal.id!r}")
            seen.add(deal.id)
            deals.append(deal)
    return deals


# ---------------------------------------------------------------------------
# reports

_BUCKETS = {
    "None": lambda d: True,
    "CA / NY": lambda d: d.geo in (Geography.CA, Geography.NY),
    "Other US / Intl": lambda d: d.geo in (Geography.OTHER_US, Geography.INTL),
    "Hot Sectors": lambda d: d.is_hot,
    "Non-Hot Sectors": lambda d: not d.is_hot,
}


def _mean(values):
    return float(np.mean(values)) if values else None


def bucket_report(deals) -> List[Dict]:
    """Counts, mean synthetic p and (when present) success rate per bucket."""
    rows = []
    for name, keep in _BUCKETS.items():
        row = {"bucket": name}
        for founder, tag in ((FounderType.FIRST_TIME, "first"), (FounderType.REPEAT, "repeat")):
            sel = [d for d in deals if d.founder is founder and keep(d)]
            row[f"{tag}_count"] = len(sel)
            row[f"{tag}_mean_p"] = _mean([d.p for d in sel if d.p is not None])
            row[f"{tag}_success_rate"] = _mean([d.outcome for d in sel if d.outcome is not None])
        rows.append(row)
    return rows


def verify_population(deals, marginals, pairs, bucket_counts=None) -> Dict:
    """Integer diff tables of a population against the target tables."""
    got_n = marginals_from_deals(deals)
    got_pairs = pair_counts_from_deals(deals)
    marg_diff = (got_n - np.asarray(marginals)).tolist()
    pair_diff = (got_pairs - np.asarray(pairs)).tolist()
    report = {
        "n_deals": len(deals),
        "marginal_diff": dict(zip(ATTRIBUTE_LABELS, marg_diff)),
        "pair_count_diff": {
            ATTRIBUTE_LABELS[i]: dict(zip(ATTRIBUTE_LABELS, row)) for i, row in enumerate(pair_diff)
        },
        "marginals_match": not any(marg_diff),
        "pair_counts_match": not np.any(pair_diff),
    }
    if bucket_counts is not None:
        got = {r["bucket"]: (r["first_count"], r["repeat_count"]) for r in bucket_report(deals)}
        report["bucket_counts"] = {
            k: {"expected": list(v), "observed": list(got[k])} for k, v in bucket_counts.items()
        }
        report["bucket_counts_match"] = all(tuple(got[k]) == tuple(v) for k, v in bucket_counts.items())
    return report
