"""Simulation engine: populations, disease models, ascertained designs, genotyping error.

Genotypes are drawn under HWE within subpopulations, parents mate at random
and each offspring receives one allele from each parent with probability
1/2, independently.  Ascertainment (affected proband, discordant sibs, case
and control quotas) is imposed at the causal locus; unlinked null markers
are drawn afterwards given each family's subpopulation.

Random streams are derived from ``(seed, stream, block)`` through
:class:`numpy.random.SeedSequence`, so every quantity is reproducible and
independent of how the work is chunked across threads.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .core import MarkerInfo, ParameterError, Cohort, FamGwasError, GeneticModel
from .fbat import sibship_terms, trio_terms, z_and_p
from .mendel import allowed_table, transmission_table
from .power import coded_genotype_probs, odds_ratio_penetrances

DESIGNS = ("case_control", "trio", "dsp", "dst")
N_SIBS = {"trio": 1, "dsp": 2, "dst": 3}
MAX_ATTEMPTS = 10 ** 8


class SimulationError(FamGwasError, RuntimeError):
    """Ascertainment could not be met within the attempt budget."""


def rng_for(seed, *stream):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


# --- model types ---------------------------------------------------------------------

@dataclass(frozen=True)
class Subpopulation:
    weight: float
    allele_freq: float
    prevalence_scale: float = 1.0


@dataclass(frozen=True)
class PopulationModel:
    """Risk-allele frequencies (the count of allele ``"2"``) and optional substructure.

    ``allele_freq`` applies to every marker unless ``freq_range`` is given,
    in which case each null marker draws its frequency uniformly from the
    range.  Subpopulations override both at every marker.
    """

    allele_freq: float = 0.3
    freq_range: tuple | None = None
    subpopulations: tuple = ()

    def __post_init__(self):
        if self.subpopulations:
            w = sum(s.weight for s in self.subpopulations)
            if abs(w - 1) > 1e-9:
                raise ParameterError(f"subpopulation weights sum to {w}, not 1")
            for s in self.subpopulations:
                if not 0 < s.allele_freq < 1 or s.prevalence_scale <= 0:
                    raise ParameterError(f"bad subpopulation {s}")
        elif not 0 < self.allele_freq < 1:
            raise ParameterError(f"allele frequency {self.allele_freq} must lie in (0, 1)")
        if self.freq_range is not None:
            lo, hi = self.freq_range
            if not 0 < lo <= hi < 1:
                raise ParameterError(f"bad frequency range {self.freq_range}")

    @property
    def n_sub(self):
        return max(1, len(self.subpopulations))

    @property
    def weights(self):
        if not self.subpopulations:
            return np.ones(1)
        return np.array([s.weight for s in self.subpopulations])

    @property
    def scales(self):
        if not self.subpopulations:
            return np.ones(1)
        return np.array([s.prevalence_scale for s in self.subpopulations])

    @property
    def causal_freqs(self):
        if not self.subpopulations:
            return np.array([self.allele_freq])
        return np.array([s.allele_freq for s in self.subpopulations])

    def marker_freqs(self, n_markers, rng):
        """(n_sub, n_markers) frequencies for null markers."""
        if self.subpopulations:
            return np.repeat(self.causal_freqs[:, None], n_markers, axis=1)
        if self.freq_range is not None:
            return rng.uniform(*self.freq_range, size=(1, n_markers))
        return np.full((1, n_markers), self.allele_freq)


@dataclass(frozen=True)
class DiseaseModel:
    """Penetrance (binary) or mean-shift (quantitative) model at the causal locus.

    Binary: ``relative_risk`` gives f(x) = r * rho**x, ``odds_ratio`` gives
    logit f(x) = logit f(0) + x log(psi); either way the baseline is solved
    so that the prevalence in each subpopulation is ``prevalence`` times its
    ``prevalence_scale``.  With neither, penetrance is the prevalence.
    Quantitative: Y = mean + beta * x + sigma * N(0, 1).
    """

    trait: str = "binary"
    prevalence: float = 0.01
    relative_risk: float | None = None
    odds_ratio: float | None = None
    genetic_model: str = "recessive"
    beta: float = 0.0
    sigma: float = 1.0
    mean: float = 0.0

    def __post_init__(self):
        GeneticModel(self.genetic_model)
        if self.trait not in ("binary", "quantitative"):
            raise ParameterError(f"unknown trait {self.trait!r}")
        if self.trait == "binary":
            if not 0 < self.prevalence < 1:
                raise ParameterError(f"prevalence {self.prevalence} must lie in (0, 1)")
            if self.relative_risk is not None and self.odds_ratio is not None:
                raise ParameterError("give a relative risk or an odds ratio, not both")
        elif not self.sigma > 0:
            raise ParameterError("quantitative sigma must be positive")

    @property
    def is_null(self):
        if self.trait == "binary":
            return self.relative_risk is None and self.odds_ratio is None
        return self.beta == 0

    def penetrance(self, p, scale=1.0):
        """Penetrance by risk-allele count (0, 1, 2) in a subpopulation with causal freq ``p``."""
        K = self.prevalence * scale
        if not 0 < K < 1:
            raise ParameterError(f"scaled prevalence {K} is not a probability")
        code = GeneticModel(self.genetic_model).code_count(np.arange(3))
        if self.relative_risk is None and self.odds_ratio is None:
            return np.full(3, K)
        xs, w = coded_genotype_probs(p, self.genetic_model)
        if self.relative_risk is not None:
            r = K / float(w @ self.relative_risk ** xs)
            f = r * self.relative_risk ** code.astype(float)
        else:
            fx = odds_ratio_penetrances(self.odds_ratio, K, p, self.genetic_model)
            f = fx[code]
        if np.any(f > 1) or np.any(f < 0):
            raise ParameterError(f"penetrances {f} are not probabilities")
        return f


@dataclass(frozen=True)
class ErrorModel:
    """Genotyping error applied after phenotypes are assigned.

    ``miscall`` flips each allele call independently; ``confusion`` is an
    explicit 3x3 row-stochastic matrix over true -> observed counts (used
    instead of ``miscall`` when given).  ``case_inflation`` multiplies the
    miscall rate for affected persons (differential error).
    """

    miscall: float = 0.0
    confusion: tuple | None = None
    missing_rate: float = 0.0
    case_inflation: float = 1.0

    def __post_init__(self):
        if not 0 <= self.miscall <= 1 or not 0 <= self.missing_rate <= 1:
            raise ParameterError("error rates must lie in [0, 1]")
        if self.confusion is not None:
            c = np.asarray(self.confusion, dtype=float)
            if c.shape != (3, 3) or np.any(c < 0) or not np.allclose(c.sum(axis=1), 1):
                raise ParameterError("confusion matrix must be 3x3 row-stochastic")
        if self.case_inflation < 0 or self.miscall * self.case_inflation > 1:
            raise ParameterError("bad case inflation factor")

    def matrix(self, inflation=1.0):
        if self.confusion is not None:
            return np.asarray(self.confusion, dtype=float)
        return miscall_matrix(self.miscall * inflation)

    @property
    def is_identity(self):
        return (self.missing_rate == 0
                and np.array_equal(self.matrix(self.case_inflation), np.eye(3))
                and np.array_equal(self.matrix(), np.eye(3)))


def miscall_matrix(eps):
    """Confusion matrix of independent per-allele flips with probability ``eps``."""
    q = 1 - eps
    return np.array([[q * q, 2 * eps * q, eps * eps],
                     [eps * q, q * q + eps * eps, eps * q],
                     [eps * eps, 2 * eps * q, q * q]])


@dataclass(frozen=True)
class DesignSpec:
    """What to sample.  ``n`` is families (trio/dsp/dst) or cases (case_control)."""

    kind: str = "trio"
    n: int = 100
    n_controls: int | None = None
    n_markers: int = 1
    causal: int | None = None
    parents_typed: bool | None = None

    def __post_init__(self):
        if self.kind not in DESIGNS:
            raise ParameterError(f"unknown design {self.kind!r}; expected one of {DESIGNS}")
        if self.n <= 0 or self.n_markers <= 0 or (self.n_controls is not None and self.n_controls <= 0):
            raise ParameterError("design counts must be positive")
        if self.causal is not None and not 0 <= self.causal < self.n_markers:
            raise ParameterError(f"causal index {self.causal} outside 0..{self.n_markers - 1}")

    @property
    def controls(self):
        return self.n if self.n_controls is None else self.n_controls

    @property
    def typed_parents(self):
        if self.parents_typed is not None:
            return self.parents_typed
        return self.kind == "trio"

    @property
    def n_sibs(self):
        return N_SIBS.get(self.kind, 0)


@dataclass(frozen=True)
class Scenario:
    design: DesignSpec = field(default_factory=DesignSpec)
    population: PopulationModel = field(default_factory=PopulationModel)
    disease: DiseaseModel = field(default_factory=DiseaseModel)
    error: ErrorModel | None = None

    @classmethod
    def from_mapping(cls, cfg):
        """Build from flat ``key=value`` settings (strings or numbers)."""
        cfg = dict(cfg)
        known = {"design", "n", "n_controls", "markers", "causal", "parents_typed", "p",
                 "freq_lo", "freq_hi", "subpops", "trait", "prevalence", "relative_risk",
                 "odds_ratio", "genetic_model", "beta", "sigma", "mean", "miscall",
                 "missing_rate", "case_inflation"}
        unknown = set(cfg) - known
        if unknown:
            raise ParameterError(f"unknown scenario keys: {sorted(unknown)}")

        def num(key, default=None, typ=float):
            v = cfg.get(key)
            if v is None or v == "":
                return default
            try:
                return typ(v)
            except ValueError:
                raise ParameterError(f"{key}={v!r} is not a number") from None

        subs = []
        for part in filter(None, str(cfg.get("subpops") or "").split(",")):
            x = part.split(":")
            try:
                subs.append(Subpopulation(float(x[0]), float(x[1]), float(x[2]) if len(x) > 2 else 1.0))
            except (ValueError, IndexError):
                raise ParameterError(f"bad subpops {cfg['subpops']!r}; use w:p:scale,...") from None
        subs = tuple(subs)
        lo, hi = num("freq_lo"), num("freq_hi")
        typed = cfg.get("parents_typed")
        if typed is not None and not isinstance(typed, bool):
            typed = str(typed).lower() in ("1", "true", "yes")
        design = DesignSpec(cfg.get("design", "trio"), num("n", 100, int), num("n_controls", None, int),
                            num("markers", 1, int), num("causal", None, int), typed)
        pop = PopulationModel(num("p", 0.3), (lo, hi) if lo is not None else None, subs)
        dis = DiseaseModel(cfg.get("trait", "binary"), num("prevalence", 0.01),
                           num("relative_risk"), num("odds_ratio"),
                           cfg.get("genetic_model", "recessive"), num("beta", 0.0),
                           num("sigma", 1.0), num("mean", 0.0))
        err = None
        if any(k in cfg for k in ("miscall", "missing_rate", "case_inflation")):
            err = ErrorModel(num("miscall", 0.0), None, num("missing_rate", 0.0),
                             num("case_inflation", 1.0))
        return cls(design, pop, dis, err)


def read_config(path):
    """Parse a flat ``key=value`` file (``#`` comments) into a :class:`Scenario`."""
    cfg = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            if "=" not in s:
                raise ParameterError(f"{path}:{lineno}: expected key=value")
            k, v = s.split("=", 1)
            cfg[k.strip()] = v.strip()
    return Scenario.from_mapping(cfg)


PRESETS = {
    # recessive, odds ratio 1.75, 1500 affected; one causal marker among 100
    "trio-k014-scan": dict(design="trio", n=1500, markers=100, causal=0, p=0.2, prevalence=0.14,
                 odds_ratio=1.75, genetic_model="recessive", freq_lo=0.05, freq_hi=0.5),
    "trio-k001-scan": dict(design="trio", n=1500, markers=100, causal=0, p=0.2, prevalence=0.01,
                 odds_ratio=1.75, genetic_model="recessive", freq_lo=0.05, freq_hi=0.5),
    # sib designs with untyped parents: the usual sib-design setting
    "dsp-k014": dict(design="dsp", n=1500, markers=1, causal=0, p=0.3, prevalence=0.14,
                     odds_ratio=1.75, genetic_model="recessive", parents_typed="false"),
    "dst-k014": dict(design="dst", n=1500, markers=1, causal=0, p=0.3, prevalence=0.14,
                     odds_ratio=1.75, genetic_model="recessive", parents_typed="false"),
    "cc-k001": dict(design="case_control", n=1500, markers=1, causal=0, p=0.1,
                        prevalence=0.01, relative_risk=1.75, genetic_model="recessive"),
    "trio-k001": dict(design="trio", n=1500, markers=1, causal=0, p=0.1, prevalence=0.01,
                          relative_risk=1.75, genetic_model="recessive"),
}


def preset(name):
    try:
        return Scenario.from_mapping(PRESETS[name])
    except KeyError:
        raise ParameterError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# --- ascertainment at the causal locus ----------------------------------------------

def _hwe(p):
    q = 1 - p
    return np.array([q * q, 2 * p * q, p * p])


def _ascertained(kind, y):
    """Acceptance mask for phenotype arrays (..., n_sibs) of family designs."""
    if kind == "trio":
        return y[..., 0]
    if kind == "dsp":
        return y[..., 0] != y[..., 1]
    return y.any(-1) & ~y.all(-1)


@dataclass
class _Skeleton:
    """Ascertained sample at the causal locus (counts are risk-allele counts)."""

    sub: np.ndarray        # (n_units,)
    parents: np.ndarray    # (n, 2) or None for case-control
    sibs: np.ndarray       # (n, n_sibs) or (n,) for case-control
    y: np.ndarray          # phenotypes aligned with sibs (float; 0/1 or quantitative)


def _penetrance_table(pop, disease):
    return np.stack([disease.penetrance(p, s) for p, s in zip(pop.causal_freqs, pop.scales)])


def _child_counts(rng, parents, n_sibs):
    u = rng.random(parents.shape[:-1] + (n_sibs, 2))
    return ((u[..., 0] < parents[..., :1] / 2).astype(np.int8)
            + (u[..., 1] < parents[..., 1:] / 2).astype(np.int8))


def _rejection_families(design, pop, disease, rng, max_attempts):
    n, kind, s_n = design.n, design.kind, design.n_sibs
    pen = _penetrance_table(pop, disease)
    freqs = pop.causal_freqs
    out, got, attempts, rate = [], 0, 0, None
    while got < n:
        need = n - got
        batch = int(min(max(2 * need / (rate or 0.5), 256), 2_000_000))
        if attempts + batch > max_attempts:
            raise SimulationError(f"ascertainment budget of {max_attempts} draws exhausted "
                                  f"after {got}/{n} families (acceptance rate {rate})")
        attempts += batch
        sub = rng.choice(pop.n_sub, size=batch, p=pop.weights)
        par = rng.binomial(2, freqs[sub][:, None], size=(batch, 2)).astype(np.int8)
        kids = _child_counts(rng, par, s_n)
        y = rng.random((batch, s_n)) < pen[sub[:, None], kids]
        ok = _ascertained(kind, y)
        k = int(ok.sum())
        rate = max(k / batch, 1e-9) if rate is None else max((rate + k / batch) / 2, 1e-9)
        idx = np.flatnonzero(ok)[:need]
        out.append((sub[idx], par[idx], kids[idx], y[idx].astype(float)))
        got += len(idx)
    sub, par, kids, y = (np.concatenate(a) for a in zip(*out))
    return _Skeleton(sub, par, kids, y)


def _family_states(design, pop, disease):
    """Enumerate (sub, parents, sibs, y) states with probabilities given ascertainment."""
    s_n, kind = design.n_sibs, design.kind
    pen = _penetrance_table(pop, disease)
    tt = transmission_table()
    states, probs = [], []
    for s, (w, p) in enumerate(zip(pop.weights, pop.causal_freqs)):
        h = _hwe(p)
        for f, m in itertools.product(range(3), repeat=2):
            pp = w * h[f] * h[m]
            for kids in itertools.product(range(3), repeat=s_n):
                pk = pp * math.prod(float(tt[f, m, c]) for c in kids)
                if pk == 0:
                    continue
                for ys in itertools.product((0, 1), repeat=s_n):
                    if not _ascertained(kind, np.array(ys, dtype=bool)):
                        continue
                    py = math.prod(pen[s, c] if yy else 1 - pen[s, c] for c, yy in zip(kids, ys))
                    if py > 0:
                        states.append((s, f, m, *kids, *ys))
                        probs.append(pk * py)
    probs = np.array(probs)
    if probs.sum() <= 0:
        raise SimulationError("ascertainment event has probability zero")
    return np.array(states, dtype=np.int64), probs / probs.sum()


def _exact_families(design, pop, disease, rng, size):
    states, probs = _family_states(design, pop, disease)
    idx = rng.choice(len(probs), size=size, p=probs)
    st = states[idx]
    s_n = design.n_sibs
    return _Skeleton(st[..., 0], st[..., 1:3].astype(np.int8), st[..., 3:3 + s_n].astype(np.int8),
                     st[..., 3 + s_n:].astype(float))


def _quantitative_families(design, pop, disease, rng, size):
    sub = rng.choice(pop.n_sub, size=size, p=pop.weights)
    par = rng.binomial(2, pop.causal_freqs[sub][..., None], size=size + (2,) if isinstance(size, tuple)
                       else (size, 2)).astype(np.int8)
    kids = _child_counts(rng, par, design.n_sibs)
    x = GeneticModel(disease.genetic_model).code_count(kids)
    y = disease.mean + disease.beta * x + disease.sigma * rng.standard_normal(kids.shape)
    return _Skeleton(sub, par, kids, y)


def _case_control_states(pop, disease, affected):
    pen = _penetrance_table(pop, disease)
    p = np.array([[w * h * (f if affected else 1 - f) for h, f in zip(_hwe(q), pen[s])]
                  for s, (w, q) in enumerate(zip(pop.weights, pop.causal_freqs))])
    return p.ravel() / p.sum()


def _rejection_case_control(design, pop, disease, rng, max_attempts):
    pen = _penetrance_table(pop, disease)
    quotas = {1: design.n, 0: design.controls}
    taken = {1: [], 0: []}
    got = {1: 0, 0: 0}
    attempts = 0
    while got[1] < quotas[1] or got[0] < quotas[0]:
        batch = 200_000
        if attempts + batch > max_attempts:
            raise SimulationError(f"case/control quotas not met within {max_attempts} draws")
        attempts += batch
        sub = rng.choice(pop.n_sub, size=batch, p=pop.weights)
        g = rng.binomial(2, pop.causal_freqs[sub]).astype(np.int8)
        y = rng.random(batch) < pen[sub, g]
        for lab in (1, 0):
            idx = np.flatnonzero(y == bool(lab))[: quotas[lab] - got[lab]]
            taken[lab].append((sub[idx], g[idx]))
            got[lab] += len(idx)
    parts = [np.concatenate([a for a, _ in taken[1]]), np.concatenate([a for a, _ in taken[0]])]
    geno = [np.concatenate([b for _, b in taken[1]]), np.concatenate([b for _, b in taken[0]])]
    y = np.concatenate([np.ones(design.n), np.zeros(design.controls)])
    return _Skeleton(np.concatenate(parts), None, np.concatenate(geno), y)


def _exact_case_control(design, pop, disease, rng, size_cases, size_controls):
    out = []
    for affected, size in ((True, size_cases), (False, size_controls)):
        st = rng.choice(pop.n_sub * 3, size=size, p=_case_control_states(pop, disease, affected))
        out.append((st // 3, (st % 3).astype(np.int8)))
    return out


def ascertain(design, pop, disease, rng, method="rejection", max_attempts=MAX_ATTEMPTS):
    """Sample the ascertained units at the causal locus."""
    if design.kind == "case_control":
        if disease.trait != "binary":
            raise ParameterError("case-control sampling needs a binary trait")
        if method == "rejection":
            return _rejection_case_control(design, pop, disease, rng, max_attempts)
        (sc, gc), (s0, g0) = _exact_case_control(design, pop, disease, rng, design.n, design.controls)
        return _Skeleton(np.concatenate([sc, s0]), None, np.concatenate([gc, g0]),
                         np.concatenate([np.ones(design.n), np.zeros(design.controls)]))
    if disease.trait == "quantitative":
        return _quantitative_families(design, pop, disease, rng, design.n)
    if method == "rejection":
        return _rejection_families(design, pop, disease, rng, max_attempts)
    if method == "exact":
        return _exact_families(design, pop, disease, rng, design.n)
    raise ParameterError(f"unknown ascertainment method {method!r}")


# --- cohort generation ------------------------------------------------------------

def apply_errors(g, error, affected, rng):
    """Apply ``error`` to count matrix ``g`` (persons x markers) in place; -1 stays missing."""
    typed = g >= 0
    u = rng.random(g.shape)
    for rows, infl in ((~affected, 1.0), (affected, error.case_inflation)):
        if not rows.any():
            continue
        cum = np.cumsum(error.matrix(infl), axis=1)
        sub = g[rows]
        gi = np.clip(sub, 0, 2)
        new = (u[rows] >= cum[gi, 0]).astype(np.int8) + (u[rows] >= cum[gi, 1]).astype(np.int8)
        g[rows] = np.where(sub >= 0, new, sub)
    if error.missing_rate > 0:
        drop = rng.random(g.shape) < error.missing_rate
        g[typed & drop] = -1
    return g


def generate(design, pop, disease, error=None, seed=0, method="rejection",
             max_attempts=MAX_ATTEMPTS, chunk=4096):
    """Simulate a :class:`~famgwas.core.Cohort` for ``design``.

    Markers are unlinked.  Marker ``design.causal`` (if any) carries the
    disease model; the others are null.  Marker alleles are labelled
    ``"1"``/``"2"`` with ``"2"`` the risk allele of frequency ``p``.
    """
    skel = ascertain(design, pop, disease, rng_for(seed, 0), method, max_attempts)
    M = design.n_markers
    cc = design.kind == "case_control"
    n_units = len(skel.sub)
    s_n = 1 if cc else design.n_sibs
    width = 1 if cc else 2 + s_n
    n_persons = n_units * width
    g = np.empty((n_persons, M), dtype=np.int8)
    for b, start in enumerate(range(0, M, chunk)):
        cols = np.arange(start, min(M, start + chunk))
        rng = rng_for(seed, 1, b)
        freqs = pop.marker_freqs(len(cols), rng)
        pf = freqs[skel.sub]  # (units, cols)
        if cc:
            block = rng.binomial(2, pf).astype(np.int8)[:, None, :]
        else:
            par = rng.binomial(2, pf[:, None, :], size=(n_units, 2, len(cols))).astype(np.int8)
            u = rng.random((n_units, s_n, 2, len(cols)), dtype=np.float32)
            kids = ((u[:, :, 0] < par[:, None, 0] / 2).astype(np.int8)
                    + (u[:, :, 1] < par[:, None, 1] / 2).astype(np.int8))
            block = np.concatenate([par, kids], axis=1)
        if design.causal is not None and start <= design.causal < start + len(cols):
            k = design.causal - start
            block[:, :, k] = skel.sibs[:, None] if cc else np.concatenate([skel.parents, skel.sibs], 1)
        g[:, cols] = block.reshape(n_persons, len(cols))

    fid, iid, pat, mat, sex, trait = _pedigree(design, skel)
    if not cc and not design.typed_parents:
        parent_rows = np.zeros(n_persons, dtype=bool)
        parent_rows.reshape(n_units, width)[:, :2] = True
        g[parent_rows] = -1
    if error is not None and not error.is_identity:
        affected = trait == 1.0
        for b, start in enumerate(range(0, M, chunk)):
            cols = slice(start, min(M, start + chunk))
            g[:, cols] = apply_errors(g[:, cols].copy(), error, affected, rng_for(seed, 2, b))
    markers, g = _normalise_alleles(g)
    return Cohort.from_arrays(fid, iid, pat, mat, sex, trait, g, markers,
                              trait_kind=disease.trait)


def _pedigree(design, skel):
    n = len(skel.sub)
    if design.kind == "case_control":
        ids = np.array([f"S{i + 1}" for i in range(n)], dtype=object)
        zero = np.full(n, "0", dtype=object)
        return ids, ids.copy(), zero, zero.copy(), np.zeros(n, dtype=np.int8), skel.y.astype(float)
    s_n = design.n_sibs
    fid, iid, pat, mat, sex, trait = [], [], [], [], [], []
    for i in range(n):
        f = f"F{i + 1}"
        fid += [f] * (2 + s_n)
        iid += ["fa", "mo"] + [f"c{k + 1}" for k in range(s_n)]
        pat += ["0", "0"] + ["fa"] * s_n
        mat += ["0", "0"] + ["mo"] * s_n
        sex += [1, 2] + [0] * s_n
    trait = np.full((n, 2 + s_n), np.nan)
    trait[:, 2:] = skel.y
    return fid, iid, pat, mat, sex, trait.ravel()


def _normalise_alleles(g):
    """Marker infos with observed labels only; single-label markers recoded to count 0."""
    obs = g >= 0
    has0 = (obs & (g < 2)).any(axis=0)
    has2 = (obs & (g > 0)).any(axis=0)
    markers = []
    for j in range(g.shape[1]):
        if has0[j] and has2[j]:
            al = ("1", "2")
        elif has2[j]:
            al = ("2",)
            g[:, j] = np.where(obs[:, j], 0, -1)
        elif has0[j]:
            al = ("1",)
        else:
            al = ()
        markers.append(MarkerInfo(f"snp{j + 1}", "1", 1000 * (j + 1), al))
    return markers, g


# --- single-marker Monte Carlo -----------------------------------------------------

@dataclass(frozen=True)
class MonteCarloResult:
    power: float
    se: float
    mean_z: float
    sd_z: float
    replicates: int
    z: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)


def case_control_z(x_cases, x_controls):
    """Two-sample score z on coded genotypes with pooled variance (Armitage trend form).

    Missing values (negative codes) are excluded.  Works along the last axis.
    """
    a = np.asarray(x_cases, dtype=float)
    b = np.asarray(x_controls, dtype=float)
    wa, wb = a >= 0, b >= 0
    a, b = np.where(wa, a, 0.0), np.where(wb, b, 0.0)
    na, nb = wa.sum(-1), wb.sum(-1)
    ma = a.sum(-1) / np.maximum(na, 1)
    mb = b.sum(-1) / np.maximum(nb, 1)
    n = na + nb
    m = (a.sum(-1) + b.sum(-1)) / np.maximum(n, 1)
    ss = (a * a).sum(-1) + (b * b).sum(-1) - n * m * m
    s2 = ss / np.maximum(n, 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(s2 > 0, (ma - mb) / np.sqrt(s2 * (1 / np.maximum(na, 1) + 1 / np.maximum(nb, 1))),
                        np.nan)


def _null_marker_families(design, pop, disease, rng, size, freqs):
    """Causal-free families: subpopulation from ascertainment, genotypes at a null marker."""
    skel = (_exact_families(design, pop, disease, rng, size) if disease.trait == "binary"
            else _quantitative_families(design, pop, disease, rng, size))
    p = freqs[skel.sub, np.arange(size[0])[:, None]]
    par = rng.binomial(2, p[..., None], size=skel.parents.shape).astype(np.int8)
    kids = _child_counts(rng, par, design.n_sibs)
    return _Skeleton(skel.sub, par, kids, skel.y)


def simulate_marker(design, pop, disease, rng, replicates, error=None, null_marker=False):
    """Replicated single-marker samples as arrays with a leading replicate axis.

    Family designs return a :class:`_Skeleton` with ``parents`` (R, n, 2),
    ``sibs`` and ``y`` (R, n, s).  Case-control returns two count arrays.
    Uses exact conditional sampling of the ascertained states.
    """
    R = replicates
    if design.kind == "case_control":
        if null_marker:
            freqs = pop.marker_freqs(R, rng)  # (n_sub, R)
            out = []
            for affected, size in ((True, design.n), (False, design.controls)):
                st = rng.choice(pop.n_sub * 3, size=(R, size),
                                p=_case_control_states(pop, disease, affected))
                sub = st // 3
                out.append(rng.binomial(2, freqs[sub, np.arange(R)[:, None]]).astype(np.int8))
            cases, controls = out
        else:
            (_, cases), (_, controls) = _exact_case_control(design, pop, disease, rng, (R, design.n),
                                                            (R, design.controls))
        if error is not None and not error.is_identity:
            cases = _err_arrays(cases, error, True, rng)
            controls = _err_arrays(controls, error, False, rng)
        return cases, controls
    size = (R, design.n)
    if null_marker:
        freqs = pop.marker_freqs(R, rng)
        skel = _null_marker_families(design, pop, disease, rng, size, freqs)
    elif disease.trait == "quantitative":
        skel = _quantitative_families(design, pop, disease, rng, size)
    else:
        skel = _exact_families(design, pop, disease, rng, size)
    if not design.typed_parents:
        skel.parents = np.full_like(skel.parents, -1)
    if error is not None and not error.is_identity:
        affected = skel.y == 1.0
        if design.typed_parents:
            skel.parents = _err_arrays(skel.parents, error, False, rng)
        skel.sibs = _err_arrays(skel.sibs, error, affected, rng)
    return skel


def _err_arrays(g, error, affected, rng):
    flat = g.reshape(-1, 1).copy()
    aff = np.broadcast_to(np.asarray(affected), g.shape).reshape(-1)
    return apply_errors(flat, error, aff, rng).reshape(g.shape)


def mendel_screen_arrays(skel):
    """Mask (R, n) of families passing the Mendelian check (typed parents only)."""
    par, kids = skel.parents, skel.sibs
    if par is None or np.all(par < 0):
        return np.ones(kids.shape[:-1], dtype=bool)
    allowed = allowed_table()
    f, m = np.clip(par[..., :1], 0, 2), np.clip(par[..., 1:], 0, 2)
    ok = allowed[f, m, np.clip(kids, 0, 2)] | (kids < 0) | (par[..., :1] < 0) | (par[..., 1:] < 0)
    return ok.all(-1)


def family_z(skel, kind, mu="auto", family_mask=None):
    """FBAT Z per replicate for a family skeleton (see :func:`simulate_marker`)."""
    y = skel.y
    if family_mask is not None:
        y = np.where(family_mask[..., None], y, np.nan)
    if mu == "auto":
        fin = np.isfinite(y)
        ysum = np.where(fin, y, 0.0).sum(axis=(-1, -2))
        cnt = fin.sum(axis=(-1, -2))
        allaff = np.all(np.where(fin, y == 1.0, True), axis=(-1, -2))
        mu_r = np.where(allaff, 0.0, ysum / np.maximum(cnt, 1))[..., None, None]
    else:
        mu_r = float(mu)
    t = y - mu_r
    if np.all(skel.parents < 0):
        u, v = sibship_terms(skel.sibs, t, kind)
        U, V = u.sum(-1), v.sum(-1)
    else:
        u, v = trio_terms(skel.parents[..., :1], skel.parents[..., 1:], skel.sibs, t, kind)
        U, V = u.sum(axis=(-1, -2)), v.sum(axis=(-1, -2))
    return z_and_p(U, V)


def monte_carlo_power(design, pop, disease, test="fbat", alpha=0.05, replicates=1000, seed=0,
                      model=None, error=None, mendel_screen=True, null_marker=False,
                      block=None, n_jobs=1):
    """Fraction of replicates rejecting at ``alpha`` (two-sided), with binomial SE.

    ``test`` is ``"fbat"`` (coding ``model``, default the disease's genetic
    model), ``"tdt"`` (additive FBAT on affected offspring, mu = 0) or
    ``"case_control"``.  ``null_marker`` tests an unlinked marker instead of
    the causal one.
    """
    kind = model or disease.genetic_model
    n_units = design.n * max(1, design.n_sibs) + (design.controls if design.kind == "case_control" else 0)
    block = block or max(1, min(replicates, 2_000_000 // max(n_units, 1)))
    starts = list(range(0, replicates, block))

    def run(b):
        start = starts[b]
        r = min(block, replicates - start)
        rng = rng_for(seed, 10, b)
        if design.kind == "case_control":
            if test != "case_control":
                raise ParameterError("case-control samples support only the case_control test")
            cases, controls = simulate_marker(design, pop, disease, rng, r, error, null_marker)
            code = GeneticModel(kind).code_count
            z = case_control_z(code(cases), code(controls))
            return z, z_and_p(z, np.ones_like(z))[1]
        if test == "case_control":
            raise ParameterError("family samples do not support the case_control test")
        skel = simulate_marker(design, pop, disease, rng, r, error, null_marker)
        mask = mendel_screen_arrays(skel) if (mendel_screen and error is not None) else None
        if test == "tdt":
            aff = skel.y == 1.0
            skel.y = np.where(aff, 1.0, np.nan)
            return family_z(skel, "additive", mu=0.0, family_mask=mask)
        return family_z(skel, kind, family_mask=mask)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            parts = list(ex.map(run, range(len(starts))))
    else:
        parts = [run(b) for b in range(len(starts))]
    z = np.concatenate([a for a, _ in parts])
    p = np.concatenate([b for _, b in parts])
    rej = np.nan_to_num(p, nan=1.0) <= alpha
    power = float(rej.mean())
    zf = z[np.isfinite(z)]
    return MonteCarloResult(power, math.sqrt(power * (1 - power) / replicates),
                            float(zf.mean()) if zf.size else math.nan,
                            float(zf.std(ddof=1)) if zf.size > 1 else math.nan, replicates, z, p)


# --- type-I error experiments ------------------------------------------------------

@dataclass(frozen=True)
class RateEstimate:
    rejections: int
    replicates: int
    ci_level: float = 0.99

    @property
    def rate(self):
        return self.rejections / self.replicates if self.replicates else math.nan

    @property
    def ci(self):
        ci = binomtest(self.rejections, self.replicates).proportion_ci(self.ci_level, "exact")
        return ci.low, ci.high

    def excess_p(self, alpha):
        """One-sided binomial p-value for a rejection rate above ``alpha``."""
        return binomtest(self.rejections, self.replicates, alpha, alternative="greater").pvalue


STRATIFICATION = dict(n_trios=200, n_cases=200, n_controls=200, prevalence=0.02,
                      subpops=((0.5, 0.1, 1.0), (0.5, 0.5, 5.0)), alpha=0.05)
ERROR_INJECTION = dict(n_trios=500, n_cases=500, n_controls=500, p=0.2, miscall=0.01,
                       prevalence=0.1, alpha=0.05)


def type1_error_experiment(scenario, config=None, replicates=10_000, seed=0):
    """Empirical type-I error of the trio FBAT and a pooled case-control trend test.

    ``scenario`` is ``"stratification"`` (null marker, two subpopulations
    differing in allele frequency and prevalence) or ``"error_injection"``
    (null marker, symmetric allele miscalls; trios are Mendelian-screened by
    dropping inconsistent families, case-control errors are
    non-differential unless ``case_inflation`` is set).  Returns a dict
    with :class:`RateEstimate` for ``"fbat"`` and ``"case_control"``.
    """
    if scenario == "stratification":
        cfg = {**STRATIFICATION, **(config or {})}
        pop = PopulationModel(subpopulations=tuple(Subpopulation(*s) for s in cfg["subpops"]))
        error = None
    elif scenario == "error_injection":
        cfg = {**ERROR_INJECTION, **(config or {})}
        pop = PopulationModel(allele_freq=cfg["p"])
        error = ErrorModel(miscall=cfg["miscall"], case_inflation=cfg.get("case_inflation", 1.0))
    else:
        raise ParameterError(f"unknown scenario {scenario!r}")
    disease = DiseaseModel(prevalence=cfg["prevalence"])
    alpha = cfg["alpha"]
    trio = monte_carlo_power(DesignSpec("trio", cfg["n_trios"]), pop, disease, "tdt", alpha,
                             replicates, seed, error=error, mendel_screen=True, null_marker=True)
    cc = monte_carlo_power(DesignSpec("case_control", cfg["n_cases"], cfg["n_controls"]), pop,
                           disease, "case_control", alpha, replicates, seed + 1, model="additive",
                           error=error, null_marker=True)
    return {"fbat": RateEstimate(int(round(trio.power * replicates)), replicates),
            "case_control": RateEstimate(int(round(cc.power * replicates)), replicates)}
