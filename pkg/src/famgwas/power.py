"""Closed-form expected test statistics for case-control and trio designs.

Recessive relative-risk model: ``P(Y=1 | X=0) = r``, ``P(Y=1 | X=1) = rho * r``
with X the homozygous-risk indicator and HWE in the source population, so
``r = K / (rho p^2 + 1 - p^2)``.

Case-control (N cases and N controls)::

    p_cases    = r rho p^2 / K
    p_controls = (1 - r rho) p^2 / (1 - K)
    p_bar      = (p_cases + p_controls) / 2
    E(Z)       = sqrt(N) (p_cases - p_controls) / sqrt(2 p_bar (1 - p_bar))

Trio (N affected probands): only het x het (type 1) and het x hom-risk
(type 2) matings are informative.  Expected counts::

    n1 = r p^2 (1-p)^2 (rho + 3) N / K
    n2 = 2 r p^3 (1-p) (rho + 1) N / K

Mendelian residuals ``P(X=1 | affected, type) - P(X=1 | type)``::

    res1 = 3 (rho - 1) / (4 (rho + 3))
    res2 = (rho - 1) / (2 (rho + 1))

and null variances 3/16 and 1/4, giving
``E(Z) = (n1 res1 + n2 res2) / sqrt(3 n1 / 16 + n2 / 4)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .core import ParameterError

# Reference trio value at p=0.1, K=0.01, rho=1.75, N=1500, reported beside the computed one.
REFERENCE_TRIO_Z = 4.56


@dataclass(frozen=True)
class DesignParams:
    p: float
    rho: float
    K: float
    N: int
    alpha: float = 1e-5

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ParameterError(f"allele frequency p={self.p} must lie in (0, 1)")
        if not self.rho > 0:
            raise ParameterError(f"relative risk rho={self.rho} must be positive")
        if not 0 < self.K < 1:
            raise ParameterError(f"prevalence K={self.K} must lie in (0, 1)")
        if not self.N > 0:
            raise ParameterError(f"N={self.N} must be positive")
        if not 0 < self.alpha < 1:
            raise ParameterError(f"alpha={self.alpha} must lie in (0, 1)")
        r = self.r
        if not 0 < r < 1 or self.rho * r > 1:
            raise ParameterError(f"penetrances r={r:.4g}, rho*r={self.rho * r:.4g} are not "
                                 "probabilities for these parameters")

    @property
    def r(self):
        p2 = self.p * self.p
        return self.K / (self.rho * p2 + (1.0 - p2))


def power_from_z(ez, alpha, two_sided=False):
    """Power of a normal test whose statistic has mean ``ez`` and unit variance."""
    if two_sided:
        c = norm.isf(alpha / 2)
        return float(norm.sf(c - ez) + norm.cdf(-c - ez))
    return float(norm.sf(norm.isf(alpha) - ez))


@dataclass(frozen=True)
class CaseControlPower:
    p_cases: float
    p_controls: float
    p_bar: float
    expected_z: float
    power: float


def case_control_expected_z(params, two_sided=False):
    p2 = params.p ** 2
    r, rho, K = params.r, params.rho, params.K
    p_cases = r * rho * p2 / K
    p_controls = (1 - r * rho) * p2 / (1 - K)
    p_bar = (p_cases + p_controls) / 2
    ez = math.sqrt(params.N) * (p_cases - p_controls) / math.sqrt(2 * p_bar * (1 - p_bar))
    return CaseControlPower(p_cases, p_controls, p_bar, ez, power_from_z(ez, params.alpha, two_sided))


@dataclass(frozen=True)
class MatingTypeBreakdown:
    n_type1: float
    n_type2: float
    residual_type1: float
    residual_type2: float
    var_type1: float = 3 / 16
    var_type2: float = 1 / 4


def trio_mating_breakdown(params):
    p, rho, K, N, r = params.p, params.rho, params.K, params.N, params.r
    n1 = r * p ** 2 * (1 - p) ** 2 * (rho + 3) * N / K
    n2 = 2 * r * p ** 3 * (1 - p) * (rho + 1) * N / K
    res1 = 3 * (rho - 1) / (4 * (rho + 3))
    res2 = (rho - 1) / (2 * (rho + 1))
    return MatingTypeBreakdown(n1, n2, res1, res2)


@dataclass(frozen=True)
class TrioPower:
    expected_z: float
    power: float
    breakdown: MatingTypeBreakdown
    closed_form_z: float
    alt_residual_z: float
    reference_z: float | None


def closed_form_trio_z(params):
    """A single closed-form trio expression often used for this design.

    Kept for comparison only; it does not agree with the residual assembly.
    """
    p, rho, K, N, r = params.p, params.rho, params.K, params.N, params.r
    return (2 * p * (rho - 1) * math.sqrt(N * (r / K) * (1 - p)) * (3 + rho)
            / math.sqrt(rho * (p + 3) - 5 * p + 9))


def trio_expected_z(params, two_sided=False):
    """Residual-based expected trio FBAT Z (recessive coding), plus the alternative variants."""
    b = trio_mating_breakdown(params)
    num = b.n_type1 * b.residual_type1 + b.n_type2 * b.residual_type2
    den = math.sqrt(b.n_type1 * b.var_type1 + b.n_type2 * b.var_type2)
    ez = num / den
    # same assembly with the type-1 residual denominator written as 4(rho + 1)
    alt_res1 = 3 * (params.rho - 1) / (4 * (params.rho + 1))
    alt = (b.n_type1 * alt_res1 + b.n_type2 * b.residual_type2) / den
    ref = REFERENCE_TRIO_Z if (params.p, params.K, params.rho, params.N) == (0.1, 0.01, 1.75, 1500) else None
    return TrioPower(ez, power_from_z(ez, params.alpha, two_sided), b,
                     closed_form_trio_z(params), alt, ref)


# --- odds ratio <-> relative risk -------------------------------------------------------

def coded_genotype_probs(p, kind):
    """P(X = x) for the coded genotype under HWE; returns (values, probs)."""
    q = 1 - p
    if kind == "additive":
        return np.array([0, 1, 2]), np.array([q * q, 2 * p * q, p * p])
    if kind == "dominant":
        return np.array([0, 1]), np.array([q * q, 1 - q * q])
    if kind == "recessive":
        return np.array([0, 1]), np.array([1 - p * p, p * p])
    raise ParameterError(f"unknown genetic model {kind!r}")


def odds_ratio_penetrances(psi, K, p, kind="recessive"):
    """Penetrances f(x) with odds(f(x)) = odds(f(0)) psi^x and mean K under HWE."""
    xs, w = coded_genotype_probs(p, kind)

    def pen(f0):
        o = f0 / (1 - f0) * psi ** xs
        return o / (1 + o)

    f0 = brentq(lambda f: float(w @ pen(f)) - K, 1e-15, 1 - 1e-15, xtol=1e-16, rtol=1e-14)
    return pen(f0)


def relative_risk_from_odds_ratio(psi, K, p, kind="recessive"):
    f = odds_ratio_penetrances(psi, K, p, kind)
    return float(f[1] / f[0])


def power_curves(design, p_grid, K, N, alpha=1e-5, rho=None, odds_ratio=None, two_sided=False):
    """Rows (p, rho, expected_z, power) over allele frequencies ``p_grid``.

    Exactly one of ``rho`` (relative risk) and ``odds_ratio`` is given; an odds
    ratio is converted to the relative risk at prevalence K for each p.
    """
    if (rho is None) == (odds_ratio is None):
        raise ParameterError("give exactly one of rho and odds_ratio")
    if design not in ("cc", "trio"):
        raise ParameterError(f"closed forms exist for designs 'cc' and 'trio', not {design!r}")
    rows = []
    for p in p_grid:
        rr = rho if rho is not None else relative_risk_from_odds_ratio(odds_ratio, K, p)
        params = DesignParams(float(p), rr, K, N, alpha)
        if design == "cc":
            res = case_control_expected_z(params, two_sided)
        else:
            res = trio_expected_z(params, two_sided)
        rows.append((float(p), rr, res.expected_z, res.power))
    return rows
