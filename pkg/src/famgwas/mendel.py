"""Offspring genotype laws under Mendelian transmission, and incompatibility checks.

Distributions are exact (:class:`fractions.Fraction`).  The count-based
tables at the bottom feed the vectorised statistics in :mod:`famgwas.fbat`
and :mod:`famgwas.qc`.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import factorial

import numpy as np
import scipy.sparse as sp

from .core import MODEL_KINDS, GeneticModel, Genotype, ParameterError, code_genotype

HALF = Fraction(1, 2)


@dataclass(frozen=True)
class OffspringDistribution:
    """Finite law of a coded offspring genotype: ``support`` is ((x, prob), ...)."""

    support: tuple

    @property
    def mean(self):
        return sum((Fraction(x) * p for x, p in self.support), Fraction(0))

    @property
    def variance(self):
        mu = self.mean
        return sum(((Fraction(x) - mu) ** 2 * p for x, p in self.support), Fraction(0))

    def prob(self, x):
        return dict(self.support).get(x, Fraction(0))

    @classmethod
    def from_counter(cls, weights):
        total = sum(weights.values())
        return cls(tuple(sorted((x, Fraction(w, 1) / total) for x, w in weights.items())))


def offspring_distribution(parents, model):
    """Law of the coded genotype of one offspring of two typed parents.

    Each parent passes either allele with probability 1/2, independently.
    ``model.risk_allele`` must be an allele label.
    """
    father, mother = parents
    if father is None or mother is None:
        raise ParameterError("both parental genotypes are required; use the sibship path")
    weights = Counter()
    for a in father.alleles:
        for b in mother.alleles:
            weights[code_genotype(Genotype(a, b), model)] += 1
    return OffspringDistribution.from_counter(weights)


@dataclass(frozen=True)
class SibshipConditioning:
    """Multiset of offspring genotypes in a family with no typed parents.

    Conditioning is on the observed multiset alone: every distinct
    assignment of those genotypes to the sibs is equally likely.  The
    general sufficient statistic for missing parents can be finer than the
    multiset in some configurations; agreement with it is not assumed.
    """

    observed_multiset: tuple

    @classmethod
    def from_genotypes(cls, genotypes):
        typed = [g for g in genotypes if g is not None]
        return cls(tuple(sorted(typed)))


def _distinct_permutations(items):
    counts = Counter(items)
    keys = sorted(counts)
    n = len(items)

    def rec(prefix):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for k in keys:
            if counts[k]:
                counts[k] -= 1
                prefix.append(k)
                yield from rec(prefix)
                prefix.pop()
                counts[k] += 1

    yield from rec([])


@dataclass(frozen=True)
class SibshipDistribution:
    """Exchangeable law of sib codings given their genotype multiset.

    Every assignment of the observed genotypes to the sibs is equally likely,
    so each sib has the empirical law of the multiset, and two sibs have
    covariance ``-variance / (n - 1)``.
    """

    values: tuple  # coded values of the sorted multiset

    @property
    def n(self):
        return len(self.values)

    @property
    def marginal(self):
        return OffspringDistribution.from_counter(Counter(self.values))

    @property
    def mean(self):
        return Fraction(sum(self.values), self.n)

    @property
    def variance(self):
        return self.marginal.variance

    @property
    def covariance(self):
        return -self.variance / (self.n - 1)

    @property
    def degenerate(self):
        return len(set(self.values)) == 1

    def joint_law(self):
        """Yield (assignment, probability) over distinct assignments of values to sibs."""
        weight = Fraction(1, factorial(self.n))
        mult = 1
        for c in Counter(self.values).values():
            mult *= factorial(c)
        for perm in _distinct_permutations(list(self.values)):
            yield perm, weight * mult


def sibship_distribution(s, model):
    """Conditional law of sib codings given the observed genotype multiset."""
    if not isinstance(s, SibshipConditioning):
        s = SibshipConditioning.from_genotypes(s)
    if len(s.observed_multiset) < 2:
        raise ParameterError("sibship conditioning needs at least two typed offspring")
    return SibshipDistribution(tuple(code_genotype(g, model) for g in s.observed_multiset))


@dataclass(frozen=True)
class MendelCheck:
    consistent: bool
    reason: str | None = None

    def __bool__(self):
        return self.consistent


def _can_produce(p1, p2, child):
    return any(Genotype(a, b) == child for a in p1.alleles for b in p2.alleles)


def check_mendelian(father, mother, offspring):
    """Check one family at one marker; ``None`` entries are untyped.

    With both parents typed every offspring must be producible from them.
    With one parent typed, some genotype for the other parent must explain
    all typed offspring jointly (for a single child this reduces to sharing
    an allele with the typed parent).  Families with no typed parent, or no
    typed child, are consistent.
    """
    kids = [(i, g) for i, g in enumerate(offspring) if g is not None]
    if not kids or (father is None and mother is None):
        return MendelCheck(True)
    if father is not None and mother is not None:
        for i, g in kids:
            if not _can_produce(father, mother, g):
                return MendelCheck(False, f"offspring {i} genotype {g} incompatible with "
                                          f"parents {father}x{mother}")
        return MendelCheck(True)
    typed = father if father is not None else mother
    who = "father" if father is not None else "mother"
    labels = sorted({a for _, g in kids for a in g.alleles} | set(typed.alleles))
    for a, b in itertools.combinations_with_replacement(labels, 2):
        other = Genotype(a, b)
        if all(_can_produce(typed, other, g) for _, g in kids):
            return MendelCheck(True)
    if len(kids) == 1:
        i, g = kids[0]
        return MendelCheck(False, f"offspring {i} genotype {g} shares no allele with {who} {typed}")
    return MendelCheck(False, f"no genotype for the untyped parent explains the offspring "
                              f"given {who} {typed}")


def check_family(cohort, family, marker):
    """:func:`check_mendelian` for a :class:`~famgwas.core.NuclearFamily` of ``cohort``."""
    j = cohort.marker_index(marker)

    def gt(i):
        return cohort.genotype(i, j) if i >= 0 else None

    return check_mendelian(gt(family.father), gt(family.mother), [gt(c) for c in family.offspring])


# --- count-based tables --------------------------------------------------------------

@lru_cache(maxsize=None)
def transmission_table():
    """``T[f, m, c]``: P(child count = c | parental counts f, m), exact."""
    out = {}
    for f in range(3):
        for m in range(3):
            pf, pm = Fraction(f, 2), Fraction(m, 2)
            probs = [(1 - pf) * (1 - pm), pf * (1 - pm) + (1 - pf) * pm, pf * pm]
            for c in range(3):
                out[f, m, c] = probs[c]
    return out


@lru_cache(maxsize=None)
def moment_tables(kind):
    """Float arrays ``(E[f, m], Var[f, m])`` of the coded child value for risk counts f, m."""
    if kind not in MODEL_KINDS:
        raise ParameterError(f"unknown genetic model {kind!r}")
    code = GeneticModel(kind).code_count
    tt = transmission_table()
    e = np.zeros((3, 3))
    v = np.zeros((3, 3))
    for f in range(3):
        for m in range(3):
            d = OffspringDistribution(tuple((code(c), tt[f, m, c]) for c in range(3) if tt[f, m, c]))
            merged = Counter()
            for x, p in d.support:
                merged[x] += p
            d = OffspringDistribution(tuple(sorted(merged.items())))
            e[f, m] = float(d.mean)
            v[f, m] = float(d.variance)
    e.setflags(write=False)
    v.setflags(write=False)
    return e, v


@lru_cache(maxsize=None)
def allowed_table():
    """``A[f, m, c]``: True iff child count c is producible from parental counts f, m."""
    tt = transmission_table()
    a = np.zeros((3, 3, 3), dtype=bool)
    for (f, m, c), p in tt.items():
        a[f, m, c] = p > 0
    a.setflags(write=False)
    return a


def family_sum_matrix(family_of_row, n_families):
    """Sparse (n_families x n_rows) indicator used to reduce per-offspring terms."""
    n = len(family_of_row)
    return sp.csr_matrix((np.ones(n), (family_of_row, np.arange(n))), shape=(n_families, n))


def mendel_inconsistent(g_aug, child, fa, mo, family_of_row, n_families):
    """Boolean (n_families x n_markers) matrix of Mendelian inconsistencies.

    ``g_aug`` is a count matrix with an extra all-missing last row; parent
    indices of -1 must already point at that row.
    """
    allowed = allowed_table()
    S = family_sum_matrix(family_of_row, n_families)
    gc, gf, gm = g_aug[child], g_aug[fa], g_aug[mo]
    tc, tf, tmo = gc >= 0, gf >= 0, gm >= 0
    c = np.clip(gc, 0, 2)
    f = np.clip(gf, 0, 2)
    m = np.clip(gm, 0, 2)

    def viol(rows_bad):
        return np.asarray(S @ rows_bad.astype(np.float64)) > 0

    # typed status of the parents per family (same for every child of the family)
    first = np.zeros(n_families, dtype=np.int64)
    first[family_of_row[::-1]] = np.arange(len(family_of_row))[::-1]
    ftyped = tf[first]
    mtyped = tmo[first]

    bad_both = viol(tc & ~allowed[f, m, c]) & ftyped & mtyped
    fa_only = ftyped & ~mtyped
    mo_only = mtyped & ~ftyped
    all_f = np.ones_like(bad_both)
    all_m = np.ones_like(bad_both)
    for other in range(3):
        all_f &= viol(tc & ~allowed[f, other, c])
        all_m &= viol(tc & ~allowed[other, m, c])
    return bad_both | (fa_only & all_f) | (mo_only & all_m)
