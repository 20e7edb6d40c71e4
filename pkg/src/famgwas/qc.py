"""Quality control: call rates, MAF, Hardy-Weinberg, Mendelian screening, error-rate estimation.

:func:`apply_filters` runs a fixed cascade

    person call rate -> marker call rate -> MAF (founders) -> HWE (founders) -> Mendel

and repeats it until nothing more is removed, so the result is a fixed
point (filtering a filtered cohort changes nothing).  Excluded markers are
dropped; excluded persons and families keep their pedigree rows but lose
every genotype, so family structure is preserved for the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .core import ADDITIVE, FamGwasError, GeneticModel, ParameterError
from .fbat import OffsetSpec, scan
from .io import atomic_write
from .mendel import allowed_table, mendel_inconsistent
from .sim import miscall_matrix, rng_for

CALL_RATE = "call_rate"
PERSON_CALL_RATE = "person_call_rate"
MAF = "maf"
HWE = "hwe"
MENDEL = "mendel"
STEPS = (PERSON_CALL_RATE, CALL_RATE, MAF, HWE, MENDEL)


@dataclass(frozen=True)
class QcConfig:
    """Filter thresholds.  A Mendel threshold of ``None`` disables wholesale removal."""

    max_mendel_errors_per_marker: int | None = 5
    max_mendel_errors_per_family: int | None = 5
    min_marker_call_rate: float = 0.95
    min_person_call_rate: float = 0.90
    min_maf: float = 0.01
    hwe_alpha: float = 1e-6

    def __post_init__(self):
        for name in ("min_marker_call_rate", "min_person_call_rate", "min_maf", "hwe_alpha"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ParameterError(f"{name}={v} must lie in [0, 1]")
        for name in ("max_mendel_errors_per_marker", "max_mendel_errors_per_family"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ParameterError(f"{name}={v} must be non-negative")


@dataclass
class QcReport:
    """Per-marker and per-family statistics plus every exclusion with its reason.

    The statistics describe the input cohort (first cascade round).
    """

    marker_ids: tuple = ()
    call_rate: np.ndarray = None
    maf: np.ndarray = None
    hwe_p: np.ndarray = None
    mendel_errors: np.ndarray = None
    family_ids: tuple = ()
    family_errors: np.ndarray = None
    person_call_rate: np.ndarray = None
    excluded_markers: dict = field(default_factory=dict)
    excluded_families: dict = field(default_factory=dict)
    excluded_persons: dict = field(default_factory=dict)
    deleted_sets: list = field(default_factory=list)
    cascade: list = field(default_factory=list)

    def summary(self):
        return {
            "markers_in": len(self.marker_ids),
            "markers_excluded": len(self.excluded_markers),
            "families_excluded": len(self.excluded_families),
            "persons_excluded": len(self.excluded_persons),
            "genotype_sets_deleted": len(self.deleted_sets),
            "rounds": max((r for r, *_ in self.cascade), default=0),
        }

    def write(self, path):
        """Write the report as TSV sections (``## name``) after a summary block."""
        with atomic_write(path) as fh:
            fh.write("## summary\n")
            for k, v in self.summary().items():
                fh.write(f"{k}\t{v}\n")
            fh.write("\n## cascade\nround\tstep\tremoved\n")
            for r, step, n in self.cascade:
                fh.write(f"{r}\t{step}\t{n}\n")
            fh.write("\n## markers\nmarker_id\tcall_rate\tmaf\thwe_p\tmendel_errors\tstatus\n")
            for j, m in enumerate(self.marker_ids):
                fh.write("\t".join([m, _f(self.call_rate[j]), _f(self.maf[j]), _f(self.hwe_p[j]),
                                    str(int(self.mendel_errors[j])),
                                    self.excluded_markers.get(m, "kept")]) + "\n")
            fh.write("\n## families\nfamily_id\tmendel_errors\tstatus\n")
            for k, f in enumerate(self.family_ids):
                fh.write(f"{f}\t{int(self.family_errors[k])}\t{self.excluded_families.get(f, 'kept')}\n")
            fh.write("\n## excluded_persons\nperson\treason\n")
            for p, why in self.excluded_persons.items():
                fh.write(f"{p}\t{why}\n")
            fh.write("\n## deleted_genotype_sets\nmarker_id\tfamily_id\n")
            for m, f in self.deleted_sets:
                fh.write(f"{m}\t{f}\n")


def _f(x):
    return "NA" if x is None or (isinstance(x, float) and math.isnan(x)) or np.isnan(x) else repr(float(x))


# --- Hardy-Weinberg exact test ---------------------------------------------------------

@lru_cache(maxsize=65536)
def _hwe_table(n, m):
    """Sorted HWE null probabilities of heterozygote counts for n people, m minor alleles."""
    h = np.arange(m % 2, m + 1, 2)
    hom_minor = (m - h) // 2
    hom_major = n - h - hom_minor
    logp = (gammaln(n + 1) - gammaln(hom_major + 1) - gammaln(h + 1) - gammaln(hom_minor + 1)
            + h * math.log(2) + gammaln(m + 1) + gammaln(2 * n - m + 1) - gammaln(2 * n + 1))
    p = np.exp(logp)
    p /= p.sum()
    order = np.argsort(p, kind="stable")
    sp_ = p[order]
    return h, p, sp_, np.cumsum(sp_)


def hwe_exact_test(n_aa, n_ab, n_bb):
    """Exact HWE p-value by probability ordering (sum of outcomes no more probable than observed).

    Conditional on the allele counts; monomorphic or empty samples give 1.
    """
    counts = (int(n_aa), int(n_ab), int(n_bb))
    if min(counts) < 0:
        raise ParameterError(f"genotype counts {counts} must be non-negative")
    n = sum(counts)
    if n == 0:
        raise ParameterError("no genotypes")
    m = min(2 * counts[0] + counts[1], 2 * counts[2] + counts[1])
    if m == 0:
        return 1.0
    h, p, sp_, cum = _hwe_table(n, m)
    obs = p[(counts[1] - m % 2) // 2]
    k = np.searchsorted(sp_, obs * (1 + 1e-7), side="right")
    return float(min(1.0, cum[k - 1]))


def hwe_pvalues(g):
    """HWE p per column of a count matrix (missing excluded); NaN for columns with no calls."""
    obs = g >= 0
    n0 = ((g == 0) & obs).sum(axis=0)
    n1 = (g == 1).sum(axis=0)
    n2 = (g == 2).sum(axis=0)
    out = np.full(g.shape[1], np.nan)
    for j in range(g.shape[1]):
        if n0[j] + n1[j] + n2[j]:
            out[j] = hwe_exact_test(n0[j], n1[j], n2[j])
    return out


# --- Mendelian screen -----------------------------------------------------------------

@dataclass(frozen=True)
class MendelScreen:
    """Inconsistency matrix (families x markers) and the threshold decisions."""

    inconsistent: np.ndarray
    marker_errors: np.ndarray
    family_errors: np.ndarray
    excluded_markers: np.ndarray
    excluded_families: np.ndarray


def _inconsistent(cohort, chunk=4096):
    child, fa, mo, fam = cohort.offspring_index()
    n, M = cohort.n_persons, cohort.n_markers
    nf = len(cohort.families)
    out = np.zeros((nf, M), dtype=bool)
    if nf == 0 or M == 0:
        return out
    fa = np.where(fa < 0, n, fa)
    mo = np.where(mo < 0, n, mo)
    for start in range(0, M, chunk):
        cols = slice(start, min(M, start + chunk))
        g = np.vstack([cohort.genotypes[:, cols], np.full((1, cols.stop - start), -1, np.int8)])
        out[:, cols] = mendel_inconsistent(g, child, fa, mo, fam, nf)
    return out


def mendel_screen(cohort, config=None):
    """Count Mendelian failures per (family, marker) and apply the wholesale thresholds.

    A marker (family) is flagged when it is inconsistent in more than the
    configured number of families (markers).  Remaining inconsistent
    (marker, family) genotype sets are candidates for deletion.
    """
    config = config or QcConfig()
    bad = _inconsistent(cohort)
    me = bad.sum(axis=0)
    fe = bad.sum(axis=1)
    mx_m, mx_f = config.max_mendel_errors_per_marker, config.max_mendel_errors_per_family
    ex_m = me > mx_m if mx_m is not None else np.zeros_like(me, dtype=bool)
    ex_f = fe > mx_f if mx_f is not None else np.zeros_like(fe, dtype=bool)
    return MendelScreen(bad, me, fe, ex_m, ex_f)


def _family_rows(cohort):
    rows = []
    for f in cohort.families:
        r = [i for i in (f.father, f.mother) if i >= 0] + list(f.offspring)
        rows.append(np.asarray(r, dtype=np.int64))
    return rows


def _person_key(cohort, i):
    return f"{cohort.fid[i]}/{cohort.iid[i]}"


# --- cascade --------------------------------------------------------------------------

def _round(cohort, config, report, rnd):
    """One pass of the cascade; returns the filtered cohort and whether anything changed."""
    g = np.array(cohort.genotypes)
    M = cohort.n_markers
    ids = [m.marker_id for m in cohort.markers]
    changed = False

    # person call rate over current markers; persons with no calls at all are untyped
    calls = (g >= 0).sum(axis=1)
    rate = calls / M if M else np.zeros(cohort.n_persons)
    bad_p = (calls > 0) & (rate < config.min_person_call_rate)
    for i in np.flatnonzero(bad_p):
        report.excluded_persons[_person_key(cohort, i)] = PERSON_CALL_RATE
    g[bad_p] = -1
    report.cascade.append((rnd, PERSON_CALL_RATE, int(bad_p.sum())))
    changed |= bool(bad_p.any())
    if rnd == 1:
        report.person_call_rate = rate

    keep = np.ones(M, dtype=bool)
    typed = (g >= 0).any(axis=1)
    n_typed = int(typed.sum())
    cr = (g[typed] >= 0).sum(axis=0) / n_typed if n_typed else np.zeros(M)
    bad = cr < config.min_marker_call_rate
    keep &= _drop(report, ids, bad & keep, CALL_RATE, rnd)

    work = cohort.replace(genotypes=g)
    freq = work.founder_allele_freq()
    maf = np.minimum(freq, 1 - freq)
    bad = maf < config.min_maf
    keep &= _drop(report, ids, bad & keep, MAF, rnd)

    founders = g[work.founders]
    hw = np.full(M, np.nan)
    live = np.flatnonzero(keep)
    if founders.shape[0] and live.size:
        hw[live] = hwe_pvalues(founders[:, live])
    bad = np.nan_to_num(hw, nan=1.0) < config.hwe_alpha
    keep &= _drop(report, ids, bad & keep, HWE, rnd)

    if rnd == 1:
        report.marker_ids = tuple(ids)
        report.call_rate, report.maf, report.hwe_p = cr, maf, hw

    live = np.flatnonzero(keep)
    work = work.replace(markers=live)
    scr = mendel_screen(work, config)
    g2 = np.array(work.genotypes)
    fam_rows = _family_rows(work)
    fam_ids = [f.family_id for f in work.families]
    n_before = len(report.excluded_markers)
    for k in np.flatnonzero(scr.excluded_markers):
        report.excluded_markers[ids[live[k]]] = MENDEL
    for k in np.flatnonzero(scr.excluded_families):
        report.excluded_families.setdefault(fam_ids[k], MENDEL)
        g2[fam_rows[k]] = -1
    mk_keep = ~scr.excluded_markers
    fam_keep = ~scr.excluded_families
    for k, j in zip(*np.nonzero(scr.inconsistent & mk_keep[None, :] & fam_keep[:, None])):
        g2[fam_rows[k], j] = -1
        report.deleted_sets.append((ids[live[j]], fam_ids[k]))
    removed = (len(report.excluded_markers) - n_before + int(scr.excluded_families.sum())
               + int((scr.inconsistent & mk_keep[None, :] & fam_keep[:, None]).sum()))
    report.cascade.append((rnd, MENDEL, removed))
    changed |= removed > 0 or not keep.all()
    if rnd == 1:
        me = np.zeros(M, dtype=np.int64)
        me[live] = scr.marker_errors
        report.mendel_errors = me
        report.family_ids = tuple(fam_ids)
        report.family_errors = scr.family_errors
    out = work.replace(genotypes=g2, markers=np.flatnonzero(mk_keep))
    return out, changed


def _drop(report, ids, mask, reason, rnd):
    for j in np.flatnonzero(mask):
        report.excluded_markers[ids[j]] = reason
    report.cascade.append((rnd, reason, int(mask.sum())))
    return ~mask


def apply_filters(cohort, config=None, max_rounds=20):
    """Run the QC cascade to a fixed point and return ``(clean_cohort, report)``."""
    config = config or QcConfig()
    report = QcReport()
    current = cohort
    for rnd in range(1, max_rounds + 1):
        current, changed = _round(current, config, report, rnd)
        if not changed:
            break
    return current, report


# --- undetected error-rate estimation ---------------------------------------------------

MIN_MARKERS = 1000


class EstimationError(FamGwasError):
    pass


@dataclass(frozen=True)
class ErrorRateEstimate:
    """Estimated error parameter with a bootstrap band and the calibration used."""

    epsilon: float
    low: float
    high: float
    genotype_error_rate: float
    observed_mean_z: float
    grid: np.ndarray = field(repr=False)
    curve: np.ndarray = field(repr=False)
    coef: np.ndarray = field(repr=False)

    def covers(self, eps):
        return self.low <= eps <= self.high


DEFAULT_GRID = (0.0, 0.0025, 0.005, 0.0075, 0.01, 0.0125, 0.015, 0.02)


def _family_confusion(family):
    if family == "miscall":
        return miscall_matrix
    if callable(family):
        return family
    raise ParameterError(f"unknown error model family {family!r}")


def distortion_statistic(cohort, min_informative=1):
    """Per-marker Z for transmission of the major allele (additive, trios and sibships)."""
    res = scan(cohort, GeneticModel(ADDITIVE, "major"), OffsetSpec(), min_informative=min_informative)
    return np.array([r.Z for r in res], dtype=float)


def _pre_error_freqs(observed, confusion):
    """Allele frequencies that the confusion matrix maps (in expectation) onto ``observed``.

    Errors pull founder frequencies toward 1/2; the calibration has to start
    from the frequencies before errors or it understates the distortion.
    """
    p = np.linspace(0.0, 1.0, 4001)
    after = np.stack([(1 - p) ** 2, 2 * p * (1 - p), p * p], axis=1) @ confusion @ [0.0, 0.5, 1.0]
    return np.interp(observed, np.maximum.accumulate(after), p)


def _simulate_distortion(freqs, n_trios, confusion, rng, block=2048):
    """Mean major-allele Z (and its standard error) over simulated null trio markers."""
    allowed = allowed_table()
    zs = []
    cum = np.cumsum(confusion, axis=1)
    for start in range(0, len(freqs), block):
        p = freqs[start:start + block][:, None]
        par = rng.binomial(2, p[..., None], size=(len(p), n_trios, 2)).astype(np.int8)
        u = rng.random((len(p), n_trios, 2))
        kid = ((u[..., 0] < par[..., 0] / 2).astype(np.int8)
               + (u[..., 1] < par[..., 1] / 2).astype(np.int8))
        g = np.concatenate([par, kid[..., None]], axis=-1)
        e = rng.random(g.shape)
        g = (e >= cum[g, 0]).astype(np.int8) + (e >= cum[g, 1]).astype(np.int8)
        f, m, c = g[..., 0], g[..., 1], g[..., 2]
        ok = allowed[f, m, c]
        # orient on the observed founder frequency so "2" counts the major allele
        fr = (np.where(ok[..., None], g[..., :2], 0).sum(axis=(1, 2))
              / np.maximum(2 * 2 * ok.sum(axis=1), 1))
        flip = fr < 0.5
        f = np.where(flip[:, None], 2 - f, f)
        m = np.where(flip[:, None], 2 - m, m)
        c = np.where(flip[:, None], 2 - c, c)
        ex = (f + m) / 2.0
        var = (f == 1) * 0.25 + (m == 1) * 0.25
        U = np.where(ok, c - ex, 0.0).sum(axis=1)
        V = np.where(ok, var, 0.0).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            zs.append(np.where(V > 0, U / np.sqrt(V), np.nan))
    z = np.concatenate(zs)
    z = z[np.isfinite(z)]
    return float(z.mean()), float(z.std(ddof=1) / math.sqrt(z.size))


def estimate_error_rate(cohort, error_model_family="miscall", rng_seed=0, grid=DEFAULT_GRID,
                        n_calibration=20000, n_boot=1000, level=0.95, degree=2):
    """Estimate the undetected error parameter from major-allele over-transmission.

    The cohort should already be Mendelian-screened by per-family deletion
    (wholesale marker removal would select markers and bias the statistic).
    The observed genome-wide mean Z is matched against a calibration curve:
    null trio markers with the cohort's trio count and founder allele
    frequencies (mapped back to their pre-error values at each grid point),
    errors injected at each grid value, inconsistent trios dropped, mean Z
    recorded.  A polynomial of ``degree`` is fitted to the
    curve and inverted.  The band bootstraps markers and, in the same
    draws, perturbs the calibration points by their Monte Carlo error.
    """
    conf = _family_confusion(error_model_family)
    z = distortion_statistic(cohort)
    z = z[np.isfinite(z)]
    if z.size < MIN_MARKERS:
        raise EstimationError(f"{z.size} informative markers; at least {MIN_MARKERS} are needed "
                              "for a stable calibration")
    fr = cohort.founder_allele_freq()
    fr = fr[(fr > 0) & (fr < 1)]
    n_trios = sum(1 for f in cohort.families if f.father >= 0 and f.mother >= 0)
    if n_trios == 0:
        raise EstimationError("calibration needs families with two typed parents")
    rng = rng_for(rng_seed, 20)
    freqs = rng.choice(fr, size=n_calibration)
    grid = np.asarray(grid, dtype=float)
    cal = np.array([_simulate_distortion(_pre_error_freqs(freqs, conf(e)), n_trios, conf(e),
                                         rng_for(rng_seed, 21, k))
                    for k, e in enumerate(grid)])
    curve, curve_se = cal[:, 0], cal[:, 1]
    coef = np.polyfit(grid, curve, degree)
    fine = np.linspace(grid[0], grid[-1], 4001)

    def invert(d, c):
        fitted = np.maximum.accumulate(np.polyval(c, fine))
        return float(np.interp(d, fitted, fine))

    obs = float(z.mean())
    eps = invert(obs, coef)
    brng = rng_for(rng_seed, 22)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        zb = z[brng.integers(0, z.size, z.size)].mean()
        cb = np.polyfit(grid, curve + curve_se * brng.standard_normal(len(grid)), degree)
        boots[b] = invert(zb, cb)
    a = (1 - level) / 2
    lo, hi = np.quantile(boots, [a, 1 - a])
    lo, hi = min(lo, eps), max(hi, eps)
    hw = _hwe_freqs(fr.mean())
    c = conf(eps)
    g_rate = float(hw @ (1 - np.diag(c)))
    return ErrorRateEstimate(eps, float(lo), float(hi), g_rate, obs, grid, curve, coef)


def _hwe_freqs(p):
    return np.array([(1 - p) ** 2, 2 * p * (1 - p), p * p])
