"""Normal-distribution primitives and the bivariate normal CDF.

The bivariate CDF follows the Drezner-Wesolowsky / Genz decomposition:
Gauss-Legendre quadrature on the arcsine form of Plackett's identity for
moderate correlations, and an asymptotic expansion plus quadrature of the
remainder for |r| >= 0.925. Absolute accuracy is close to double precision.

All functions accept scalars. The ``*_array`` variants broadcast over numpy
arrays and skip per-element validation; they are the hot path for fitting.
"""

import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr, ndtri

__all__ = [
    "DomainError",
    "std_normal_cdf",
    "std_normal_quantile",
    "std_normal_pdf",
    "bvn_cdf",
    "bvn_cdf_linear",
    "bvn_pdf",
    "bvn_cdf_array",
    "bvn_cdf_linear_array",
    "bvn_pdf_array",
    "FixedThresholdBvn",
]

TWO_PI = 2.0 * math.pi
_INV_SQRT_2PI = 1.0 / math.sqrt(TWO_PI)


class DomainError(ValueError):
    """Argument outside the domain of a distribution function."""


def _half_rule(n_points):
    # negative half of an even-order Gauss-Legendre rule, as used by Genz
    x, w = leggauss(n_points)
    keep = x < 0
    return x[keep], w[keep]


# 6-, 12- and 20-point rules for |r| < 0.3, < 0.75 and beyond
_RULES = (_half_rule(6), _half_rule(12), _half_rule(20))
_SCALAR_RULES = tuple((xs.tolist(), ws.tolist()) for xs, ws in _RULES)


def _check_finite(x, name="x"):
    if not math.isfinite(x):
        raise DomainError(f"{name} must be finite, got {x!r}")


def _check_corr(r):
    if not math.isfinite(r) or abs(r) >= 1.0:
        raise DomainError(f"correlation must satisfy |r| < 1, got {r!r}")


def std_normal_cdf(x: float) -> float:
    _check_finite(x)
    return float(ndtr(x))


def std_normal_quantile(p: float) -> float:
    if not (0.0 < p < 1.0):
        raise DomainError(f"quantile needs 0 < p < 1, got {p!r}")
    return float(ndtri(p))


def std_normal_pdf(x: float) -> float:
    _check_finite(x)
    return math.exp(-0.5 * x * x) * _INV_SQRT_2PI


def _bvnu_moderate(h, k, r, xs, ws):
    # P(X > h, Y > k) for |r| < 0.925 via the arcsine substitution
    return _moderate_sum(h * k, 0.5 * (h * h + k * k), r, xs, ws) + ndtr(-h) * ndtr(-k)


def _moderate_sum(hk, hs, r, xs, ws):
    asr = np.arcsin(r)
    total = np.zeros_like(hk)
    for x, w in zip(xs, ws):
        for node in (1.0 + x, 1.0 - x):
            sn = np.sin(asr * node * 0.5)
            total += w * np.exp((sn * hk - hs) / (1.0 - sn * sn))
    return total * asr / (2.0 * TWO_PI)


def _bvnu_extreme(h, k, r, xs, ws):
    # P(X > h, Y > k) for 0.925 <= |r| < 1
    neg = r < 0
    k = np.where(neg, -k, k)
    hk = h * k
    a_s = (1.0 - r) * (1.0 + r)
    a = np.sqrt(a_s)
    bs = (h - k) ** 2
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 16.0
    bvn = a * np.exp(-0.5 * (bs / a_s + hk)) * (
        1.0 - c * (bs - a_s) * (1.0 - d * bs / 5.0) / 3.0 + c * d * a_s * a_s / 5.0
    )
    b = np.sqrt(bs)
    with np.errstate(over="ignore", invalid="ignore"):
        tail = (
            np.exp(-0.5 * hk)
            * math.sqrt(TWO_PI)
            * ndtr(-b / a)
            * b
            * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
        )
    bvn = bvn - np.where(hk > -160.0, tail, 0.0)
    half_a = 0.5 * a
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for x, w in zip(xs, ws):
            xsq = (half_a * (1.0 + x)) ** 2
            rs = np.sqrt(1.0 - xsq)
            bvn = bvn + half_a * w * (
                np.exp(-bs / (2.0 * xsq) - hk / (1.0 + rs)) / rs
                - np.exp(-0.5 * (bs / xsq + hk)) * (1.0 + c * xsq * (1.0 + d * xsq))
            )
            xsq = a_s * (1.0 - x) ** 2 / 4.0
            rs = np.sqrt(1.0 - xsq)
            bvn = bvn + half_a * w * np.exp(-0.5 * (bs / xsq + hk)) * (
                np.exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
                - (1.0 + c * xsq * (1.0 + d * xsq))
            )
    bvn = -bvn / TWO_PI
    pos_part = bvn + ndtr(-np.maximum(h, k))
    neg_part = -bvn + np.where(
        k > h,
        np.where(h < 0, ndtr(k) - ndtr(h), ndtr(-h) - ndtr(-k)),
        0.0,
    )
    return np.where(neg, neg_part, pos_part)


def bvn_cdf_array(t1, t2, r):
    """Vectorised P(Z1 <= t1, Z2 <= t2) for a standard bivariate normal.

    Inputs broadcast against each other. ``r`` must already lie strictly
    inside (-1, 1); no validation is done here.
    """
    h, k, r = np.broadcast_arrays(
        -np.asarray(t1, dtype=float),
        -np.asarray(t2, dtype=float),
        np.asarray(r, dtype=float),
    )
    out = np.empty(h.shape, dtype=float)
    ar = np.abs(r)
    groups = (ar < 0.3, (ar >= 0.3) & (ar < 0.75), ar >= 0.75)
    for (xs, ws), in_group in zip(_RULES, groups):
        mod = in_group & (ar < 0.925)
        if mod.any():
            out[mod] = _bvnu_moderate(h[mod], k[mod], r[mod], xs, ws)
        ext = in_group & (ar >= 0.925)
        if ext.any():
            out[ext] = _bvnu_extreme(h[ext], k[ext], r[ext], xs, ws)
    # enforce the Frechet bounds against last-ulp rounding
    c1 = ndtr(-h)
    c2 = ndtr(-k)
    np.clip(out, np.maximum(c1 + c2 - 1.0, 0.0), np.minimum(c1, c2), out=out)
    return out if out.ndim else float(out)


class FixedThresholdBvn:
    """Phi2(t1, t2; r) and its r-derivative for fixed threshold arrays.

    Terms that depend only on the thresholds are computed once, which pays
    off when the same pairs are evaluated at many correlation vectors.
    Results equal :func:`bvn_cdf_array` and :func:`bvn_pdf_array`.
    """

    def __init__(self, t1, t2, groups=None):
        self.t1, self.t2 = np.broadcast_arrays(
            np.asarray(t1, dtype=float), np.asarray(t2, dtype=float)
        )
        # optional labels such that r is shared within a group; enables the
        # *_grouped methods, which do the r-only work once per group
        self.groups = None if groups is None else np.asarray(groups, dtype=np.intp)
        self.h = -self.t1
        self.k = -self.t2
        self.hk = self.h * self.k
        self.hs = 0.5 * (self.h * self.h + self.k * self.k)
        c1 = ndtr(self.t1)
        c2 = ndtr(self.t2)
        self.indep = c1 * c2
        self.lower = np.maximum(c1 + c2 - 1.0, 0.0)
        self.upper = np.minimum(c1, c2)
        self.sq = self.t1 * self.t1 + self.t2 * self.t2
        self.cross = 2.0 * self.t1 * self.t2

    def cdf(self, r):
        r = np.asarray(r, dtype=float)
        out = np.empty(r.shape, dtype=float)
        ar = np.abs(r)
        edges = (0.0, 0.3, 0.75, 0.925)
        for (xs, ws), lo, hi in zip(_RULES, edges[:3], edges[1:]):
            sel = np.flatnonzero((ar >= lo) & (ar < hi))
            if sel.size:
                out[sel] = (
                    _moderate_sum(self.hk[sel], self.hs[sel], r[sel], xs, ws) + self.indep[sel]
                )
        ext = np.flatnonzero(ar >= 0.925)
        if ext.size:
            xs, ws = _RULES[2]
            out[ext] = _bvnu_extreme(self.h[ext], self.k[ext], r[ext], xs, ws)
        np.clip(out, self.lower, self.upper, out=out)
        return out

    def pdf(self, r):
        r = np.asarray(r, dtype=float)
        one_m = 1.0 - r * r
        return np.exp(-(self.sq - r * self.cross) / (2.0 * one_m)) / (TWO_PI * np.sqrt(one_m))

    def cdf_grouped(self, r_group):
        """Like :meth:`cdf` with ``r = r_group[groups]``; agrees to rounding."""
        r_group = np.asarray(r_group, dtype=float)
        band = np.searchsorted([0.3, 0.75, 0.925], np.abs(r_group), side="right")
        asr = np.arcsin(r_group)
        # the 6-node rule runs over every pair, which is cheaper than selecting
        # the (dominant) low band; other bands are recomputed and overwritten
        out = self._grouped_sum(asr, self.groups, self.hk, self.hs, _RULES[0])
        out += self.indep
        pair_band = band[self.groups]
        for b in (1, 2):
            sel = np.flatnonzero(pair_band == b)
            if sel.size:
                out[sel] = (
                    self._grouped_sum(asr, self.groups[sel], self.hk[sel], self.hs[sel], _RULES[b])
                    + self.indep[sel]
                )
        ext = np.flatnonzero(pair_band == 3)
        if ext.size:
            xs, ws = _RULES[2]
            out[ext] = _bvnu_extreme(self.h[ext], self.k[ext], r_group[self.groups[ext]], xs, ws)
        np.clip(out, self.lower, self.upper, out=out)
        return out

    @staticmethod
    def _grouped_sum(asr, g, hk, hs, rule):
        total = np.zeros(g.shape)
        term = np.empty(g.shape)
        for x, w in zip(*rule):
            for node in (1.0 + x, 1.0 - x):
                sn = np.sin(asr * node * 0.5)
                inv = 1.0 / (1.0 - sn * sn)
                np.multiply((sn * inv)[g], hk, out=term)
                term -= inv[g] * hs
                np.exp(term, out=term)
                term *= w
                total += term
        total *= (asr / (2.0 * TWO_PI))[g]
        return total

    def pdf_grouped(self, r_group):
        """Like :meth:`pdf` with ``r = r_group[groups]``."""
        r_group = np.asarray(r_group, dtype=float)
        one_m = 1.0 - r_group * r_group
        scale = 0.5 / one_m
        term = np.multiply((r_group * scale)[self.groups], self.cross)
        term -= scale[self.groups] * self.sq
        np.exp(term, out=term)
        term *= (1.0 / (TWO_PI * np.sqrt(one_m)))[self.groups]
        return term


def bvn_pdf_array(t1, t2, r):
    """Vectorised standard bivariate normal density; equals dPhi2/dr."""
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    r = np.asarray(r, dtype=float)
    one_m = 1.0 - r * r
    q = (t1 * t1 - 2.0 * r * t1 * t2 + t2 * t2) / (2.0 * one_m)
    return np.exp(-q) / (TWO_PI * np.sqrt(one_m))


def bvn_cdf_linear_array(t1, t2, r):
    """First-order expansion of Phi2 around r = 0, clipped to [0, 1]."""
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    phi1 = np.exp(-0.5 * t1 * t1) * _INV_SQRT_2PI
    phi2 = np.exp(-0.5 * t2 * t2) * _INV_SQRT_2PI
    out = np.clip(ndtr(t1) * ndtr(t2) + np.asarray(r) * phi1 * phi2, 0.0, 1.0)
    return out if np.ndim(out) else float(out)


def bvn_cdf(t1: float, t2: float, r: float) -> float:
    """P(Z1 <= t1, Z2 <= t2) with Corr(Z1, Z2) = r.

    Raises DomainError for non-finite thresholds or |r| >= 1; callers that
    may produce boundary correlations clamp first.
    """
    _check_finite(t1, "t1")
    _check_finite(t2, "t2")
    _check_corr(r)
    # evaluate with ordered thresholds so the result is exactly symmetric
    lo, hi = (t1, t2) if t1 <= t2 else (t2, t1)
    if abs(r) >= 0.925:
        return float(bvn_cdf_array(lo, hi, r))
    return _bvn_moderate_scalar(lo, hi, r)


def _bvn_moderate_scalar(t1, t2, r):
    # scalar twin of the moderate branch of bvn_cdf_array, without numpy overhead
    xs, ws = _SCALAR_RULES[0 if abs(r) < 0.3 else 1 if abs(r) < 0.75 else 2]
    hk = t1 * t2
    hs = 0.5 * (t1 * t1 + t2 * t2)
    asr = math.asin(r)
    total = 0.0
    for x, w in zip(xs, ws):
        for node in (1.0 + x, 1.0 - x):
            sn = math.sin(asr * node * 0.5)
            total += w * math.exp((sn * hk - hs) / (1.0 - sn * sn))
    c1 = float(ndtr(t1))
    c2 = float(ndtr(t2))
    value = total * asr / (2.0 * TWO_PI) + c1 * c2
    return min(max(value, c1 + c2 - 1.0, 0.0), c1, c2)


def bvn_cdf_linear(t1: float, t2: float, r: float) -> float:
    _check_finite(t1, "t1")
    _check_finite(t2, "t2")
    _check_corr(r)
    return float(bvn_cdf_linear_array(t1, t2, r))


def bvn_pdf(t1: float, t2: float, r: float) -> float:
    _check_finite(t1, "t1")
    _check_finite(t2, "t2")
    _check_corr(r)
    return float(bvn_pdf_array(t1, t2, r))
