"""Conditional score test (FBAT) and its TDT special case.

Per family the score is ``sum_j (Y_j - mu) (X_j - E[X_j | .])`` with the
expectation taken under Mendelian transmission given both typed parents,
or, when no parent is typed, under exchangeability of the observed sib
genotype multiset.  The null variance uses ``Var(X | P)`` for parent-
conditioned offspring (transmissions are independent across sibs) and the
exact permutation covariance for sibships.  Families with exactly one typed
parent at a marker are not used.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .core import ADDITIVE, GeneticModel, ParameterError
from .mendel import allowed_table, family_sum_matrix, moment_tables

OK = "ok"
LOW_INFORMATION = "low_information"
MONOMORPHIC = "monomorphic"
NO_INFORMATIVE = "no_informative"

DEFAULT_MIN_INFORMATIVE = 10

RESULT_COLUMNS = ("marker_id", "chrom", "pos", "model", "n_informative", "U", "var0", "Z", "p",
                  "status")


@dataclass(frozen=True)
class OffsetSpec:
    """Trait offset mu: ``auto`` (offspring sample mean) or a fixed value.

    Offsets derived from a penetrance model are not provided; a new
    ``kind`` handled in :meth:`resolve` is where one would go.
    """

    kind: str = "auto"
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("auto", "fixed"):
            raise ParameterError(f"unknown offset kind {self.kind!r}")
        if self.kind == "fixed" and (self.value is None or not math.isfinite(self.value)):
            raise ParameterError("fixed offset needs a finite value")

    @classmethod
    def fixed(cls, value):
        return cls("fixed", float(value))

    def resolve(self, cohort):
        """The numeric offset for ``cohort``.

        ``auto`` is the mean of non-missing offspring traits, except for an
        all-affected binary sample, where it is 0 (the TDT offset; any
        value other than 1 gives the same Z).
        """
        if self.kind == "fixed":
            if cohort.trait_kind == "binary" and not 0.0 <= self.value <= 1.0:
                raise ParameterError("offset for a binary trait must lie in [0, 1]")
            return self.value
        child = cohort.offspring_index()[0]
        y = cohort.trait[child]
        y = y[np.isfinite(y)]
        if y.size == 0:
            return 0.0
        if cohort.trait_kind == "binary" and np.all(y == 1.0):
            return 0.0
        return float(y.mean())


@dataclass(frozen=True)
class FbatResult:
    marker_id: str
    chrom: str
    pos: int
    model: str
    n_informative: int
    U: float
    var0: float
    Z: float
    p_value: float
    status: str

    @property
    def skipped(self):
        return self.status in (MONOMORPHIC, NO_INFORMATIVE)

    def row(self):
        return (self.marker_id, self.chrom, self.pos, self.model, self.n_informative, self.U,
                self.var0, self.Z, self.p_value, self.status)


def z_and_p(U, V):
    """Vectorised Z = U / sqrt(V) and two-sided normal p (NaN where V == 0)."""
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        Z = np.where(V > 0, U / np.sqrt(np.where(V > 0, V, 1.0)), np.nan)
    p = np.where(np.isfinite(Z), 2.0 * norm.sf(np.abs(Z)), np.nan)
    return Z, p


# --- array kernels (shared by cohort scans and Monte Carlo) --------------------------

def trio_terms(gf, gm, gc, t, kind):
    """Per-offspring score and variance terms for parent-conditioned offspring.

    ``gf, gm, gc`` are risk-allele counts (-1 missing), ``t`` the centred
    trait (NaN missing); arrays broadcast.  Rows lacking any of the four
    inputs, or whose child genotype the parents cannot produce, contribute
    zero.
    """
    e_tab, v_tab = moment_tables(kind)
    f = np.clip(gf, 0, 2)
    m = np.clip(gm, 0, 2)
    use = (gf >= 0) & (gm >= 0) & (gc >= 0) & np.isfinite(t) & allowed_table()[f, m, np.clip(gc, 0, 2)]
    x = GeneticModel(kind).code_count(np.clip(gc, 0, 2))
    tt = np.where(use, t, 0.0)
    u = tt * (x - e_tab[f, m])
    v = tt * tt * v_tab[f, m]
    return np.where(use, u, 0.0), np.where(use, v, 0.0)


def sibship_moments(n, st, stt, sx, sxx, stx, constant=None):
    """Family score and null variance from per-family sums over used sibs.

    The variance is ``S_xx * S_tt / (n - 1)`` where S_xx and S_tt are the
    centred sums of squares; families with fewer than two sibs give zero.
    ``n * sxx - sx**2`` is formed in exact integer arithmetic.  Trait sums
    should come from family-centred traits (so ``st`` is ~0 and S_tt does
    not cancel); ``constant`` flags families whose used traits are all
    equal, which have S_tt = 0 exactly.  Without it, S_tt below 1e-12 of
    ``stt`` is treated as rounding noise.
    """
    n = np.asarray(n, dtype=np.int64)
    sx_i = np.rint(sx).astype(np.int64)
    sxx_i = np.rint(sxx).astype(np.int64)
    nn = np.maximum(n, 1)
    sxx_c = (n * sxx_i - sx_i * sx_i) / nn
    stt_c = stt - st * st / nn
    if constant is None:
        stt_c = np.where(stt_c <= 1e-12 * np.maximum(stt, 1e-300), 0.0, stt_c)
    else:
        stt_c = np.where(constant, 0.0, np.maximum(stt_c, 0.0))
    ok = n >= 2
    u = np.where(ok, stx - st * sx / nn, 0.0)
    v = np.where(ok, sxx_c * stt_c / np.maximum(n - 1, 1), 0.0)
    return u, v


def sibship_terms(gs, t, kind):
    """Family-level score/variance for sibships in dense form.

    ``gs`` has sibs on the last axis (risk counts, -1 missing); ``t`` the
    centred traits, same shape.
    """
    use = (gs >= 0) & np.isfinite(t)
    x = np.where(use, GeneticModel(kind).code_count(np.clip(gs, 0, 2)), 0).astype(float)
    tt = np.where(use, t, 0.0)
    n = use.sum(-1)
    tc = np.where(use, tt - (tt.sum(-1) / np.maximum(n, 1))[..., None], 0.0)
    constant = ~(np.where(use, tt, -np.inf).max(-1) > np.where(use, tt, np.inf).min(-1))
    return sibship_moments(n, tc.sum(-1), (tc * tc).sum(-1), x.sum(-1), (x * x).sum(-1),
                           (tc * x).sum(-1), constant)


def _sibship_sums(S, fam, use, x, tt):
    """Per-family sums for :func:`sibship_moments` with traits centred within family.

    Offspring rows are grouped by family (as :meth:`Cohort.offspring_index` returns them).
    """
    w = use.astype(np.float64)
    n = np.asarray(S @ w)
    mean = np.asarray(S @ tt) / np.maximum(n, 1)
    tc = np.where(use, tt - mean[fam], 0.0)
    starts = np.flatnonzero(np.r_[True, np.diff(fam) != 0])
    hi = np.full(n.shape, -np.inf)
    lo = np.full(n.shape, np.inf)
    hi[fam[starts]] = np.maximum.reduceat(np.where(use, tt, -np.inf), starts, axis=0)
    lo[fam[starts]] = np.minimum.reduceat(np.where(use, tt, np.inf), starts, axis=0)
    sums = [n] + [np.asarray(S @ a) for a in (tc, tc * tc, x, x * x, tc * x)]
    return sums, ~(hi > lo)


# --- cohort scans ---------------------------------------------------------------------

class _ScanPlan:
    """Per-cohort index arrays reused across marker chunks."""

    def __init__(self, cohort, model, mu, offspring_mask=None):
        child, fa, mo, fam = cohort.offspring_index()
        t = cohort.trait[child] - mu
        if offspring_mask is not None:
            t = np.where(offspring_mask[child], t, np.nan)
        n = cohort.n_persons
        self.cohort = cohort
        self.model = model
        self.child = child
        self.fa = np.where(fa < 0, n, fa)
        self.mo = np.where(mo < 0, n, mo)
        self.t = t[:, None]
        self.n_fam = len(cohort.families)
        self.S = family_sum_matrix(fam, self.n_fam)
        self.fam = fam
        self._first = np.zeros(self.n_fam, dtype=np.int64)
        self._first[fam[::-1]] = np.arange(len(fam))[::-1]

    def chunk(self, cols):
        """U, V, n_informative and a polymorphism flag for marker indices ``cols``."""
        c = self.cohort
        r = c.risk_counts(self.model, cols)
        g = np.vstack([r, np.full((1, len(cols)), -1, dtype=np.int8)])
        gc, gf, gm = g[self.child], g[self.fa], g[self.mo]
        obs = r >= 0
        lo = np.where(obs, r, 3).min(axis=0)
        hi = np.where(obs, r, -1).max(axis=0)
        polymorphic = (lo < hi) | (lo == 1)
        if self.n_fam == 0:
            z = np.zeros(len(cols))
            return z, z, np.zeros(len(cols), dtype=np.int64), polymorphic
        kind = self.model.kind
        S = self.S
        ftyped = (gf >= 0)[self._first]
        mtyped = (gm >= 0)[self._first]
        both = ftyped & mtyped
        none = ~ftyped & ~mtyped

        u_row, v_row = trio_terms(gf, gm, gc, self.t, kind)
        u_par = np.asarray(S @ u_row)
        v_par = np.asarray(S @ v_row)

        if none.any():
            use = (gc >= 0) & np.isfinite(self.t)
            x = np.where(use, GeneticModel(kind).code_count(np.clip(gc, 0, 2)), 0).astype(np.float64)
            tt = np.where(use, self.t, 0.0)
            sums, constant = _sibship_sums(S, self.fam, use, x, tt)
            u_sib, v_sib = sibship_moments(*sums, constant)
        else:
            u_sib = v_sib = 0.0

        u_fam = np.where(both, u_par, 0.0) + np.where(none, u_sib, 0.0)
        v_fam = np.where(both, v_par, 0.0) + np.where(none, v_sib, 0.0)
        U = u_fam.sum(axis=0)
        V = v_fam.sum(axis=0)
        n_inf = (v_fam > 0).sum(axis=0)
        return U, V, n_inf, polymorphic


def _results(cohort, cols, U, V, n_inf, polymorphic, model, min_informative):
    Z, p = z_and_p(U, V)
    out = []
    for k, j in enumerate(cols):
        mk = cohort.markers[j]
        if not polymorphic[k]:
            status, z, pv = MONOMORPHIC, math.nan, math.nan
        elif V[k] <= 0:
            status, z, pv = NO_INFORMATIVE, math.nan, math.nan
        elif n_inf[k] < min_informative:
            status, z, pv = LOW_INFORMATION, float(Z[k]), math.nan
        else:
            status, z, pv = OK, float(Z[k]), float(p[k])
        out.append(FbatResult(mk.marker_id, mk.chromosome, mk.position, model.kind,
                              int(n_inf[k]), float(U[k]), float(V[k]), z, pv, status))
    return out


def scan(cohort, model=None, offset=None, markers=None, min_informative=DEFAULT_MIN_INFORMATIVE,
         chunk_size=2048, n_jobs=1, offspring_mask=None):
    """FBAT for each requested marker, in request order.

    ``markers`` is a sequence of indices or ids (default: all).  Work is
    split into marker chunks; ``n_jobs > 1`` evaluates chunks on a thread
    pool.  Results do not depend on ``n_jobs`` or ``chunk_size``.
    """
    model = model or GeneticModel()
    offset = offset or OffsetSpec()
    mu = offset.resolve(cohort)
    cols = (np.arange(cohort.n_markers) if markers is None
            else np.array([cohort.marker_index(m) for m in markers], dtype=np.int64))
    plan = _ScanPlan(cohort, model, mu, offspring_mask)
    chunks = [cols[i:i + chunk_size] for i in range(0, len(cols), chunk_size)]
    if n_jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            parts = list(ex.map(plan.chunk, chunks))
    else:
        parts = [plan.chunk(ch) for ch in chunks]
    out = []
    for ch, (U, V, n_inf, poly) in zip(chunks, parts):
        out.extend(_results(cohort, ch, U, V, n_inf, poly, model, min_informative))
    return out


def fbat_statistic(cohort, marker, model=None, offset=None, min_informative=DEFAULT_MIN_INFORMATIVE):
    """FBAT for a single marker (index or id)."""
    return scan(cohort, model, offset, [marker], min_informative=min_informative)[0]


def tdt_scan(cohort, markers=None, risk_allele="minor", min_informative=DEFAULT_MIN_INFORMATIVE,
             chunk_size=2048):
    """TDT for each requested marker: the additive score test on affected
    offspring of two typed parents with offset 0."""
    if cohort.trait_kind != "binary":
        raise ParameterError("the TDT needs a binary trait")
    model = GeneticModel(ADDITIVE, risk_allele)
    cols = (np.arange(cohort.n_markers) if markers is None
            else np.array([cohort.marker_index(m) for m in markers], dtype=np.int64))
    plan = _ScanPlan(cohort, model, 0.0, offspring_mask=cohort.trait == 1.0)
    out = []
    for i in range(0, len(cols), chunk_size):
        ch = cols[i:i + chunk_size]
        out.extend(_results(cohort, ch, *_trio_only(plan, ch), model, min_informative))
    return out


def tdt_statistic(cohort, marker, risk_allele="minor", min_informative=DEFAULT_MIN_INFORMATIVE):
    """TDT for a single marker (index or id)."""
    return tdt_scan(cohort, [marker], risk_allele, min_informative)[0]


def _trio_only(plan, cols):
    c = plan.cohort
    r = c.risk_counts(plan.model, cols)
    g = np.vstack([r, np.full((1, len(cols)), -1, dtype=np.int8)])
    gc, gf, gm = g[plan.child], g[plan.fa], g[plan.mo]
    obs = r >= 0
    lo = np.where(obs, r, 3).min(axis=0)
    hi = np.where(obs, r, -1).max(axis=0)
    poly = (lo < hi) | (lo == 1)
    u_row, v_row = trio_terms(gf, gm, gc, plan.t, ADDITIVE)
    v_fam = np.asarray(plan.S @ v_row)
    U = np.asarray(plan.S @ u_row).sum(axis=0)
    return U, v_fam.sum(axis=0), (v_fam > 0).sum(axis=0), poly


def transmission_counts(cohort, markers=None, risk_allele="minor", chunk_size=2048):
    """TDT transmission counts (b, c) per marker from heterozygous parents to affected offspring.

    b counts transmissions of the risk allele, c of the other allele; an
    offspring whose parents are both heterozygous and who is heterozygous
    contributes one of each.  Mendelian-inconsistent offspring are skipped.
    Returns two integer arrays in ``markers`` order (default: all markers).
    """
    cols = (np.arange(cohort.n_markers) if markers is None
            else np.array([cohort.marker_index(m) for m in markers], dtype=np.int64))
    child, fa, mo, _ = cohort.offspring_index()
    keep = (fa >= 0) & (mo >= 0) & (cohort.trait[child] == 1.0)
    child, fa, mo = child[keep], fa[keep], mo[keep]
    model = GeneticModel(ADDITIVE, risk_allele)
    b = np.zeros(len(cols), dtype=np.int64)
    c = np.zeros(len(cols), dtype=np.int64)
    for i in range(0, len(cols), chunk_size):
        r = cohort.risk_counts(model, cols[i:i + chunk_size]).astype(np.int64)
        x, gf, gm = r[child], r[fa], r[mo]
        ok = (x >= 0) & (gf >= 0) & (gm >= 0)
        ok &= allowed_table()[np.clip(gf, 0, 2), np.clip(gm, 0, 2), np.clip(x, 0, 2)]
        n_het = (gf == 1).astype(np.int64) + (gm == 1)
        # risk alleles sent by heterozygous parents: the child count minus the homozygous share
        hom = np.where(gf == 1, np.where(gm == 1, 0, gm), gf) // 2
        sent = np.where(n_het == 2, x, x - hom)
        use = ok & (n_het > 0)
        b[i:i + chunk_size] = np.where(use, sent, 0).sum(axis=0)
        c[i:i + chunk_size] = np.where(use, n_het - sent, 0).sum(axis=0)
    return b, c


def write_results(path, results):
    from .io import write_tsv

    write_tsv(path, RESULT_COLUMNS, (r.row() for r in results))
