"""Domain types: alleles, genotypes, genetic-model codings, people, families, cohorts.

Genotypes for a whole cohort live in a single ``int8`` matrix of shape
``(n_persons, n_markers)`` holding the count of the marker's *second* allele
label (``MarkerInfo.alleles[1]``), with ``-1`` for a missing call.  The
per-object types (:class:`Genotype`, :class:`Person`) are views used at the
edges (parsing, reporting, small hand-built examples).
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

MISSING_ALLELES = frozenset({"0", "N", "-", "."})
MISSING_CODE = -1

ADDITIVE = "additive"
DOMINANT = "dominant"
RECESSIVE = "recessive"
MODEL_KINDS = (ADDITIVE, DOMINANT, RECESSIVE)


class FamGwasError(Exception):
    """Base class for errors raised by this package."""


class DataError(FamGwasError, ValueError):
    """Malformed or inconsistent input data."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class ParameterError(FamGwasError, ValueError):
    """Invalid parameter values (model specs, design parameters, configs)."""


@dataclass(frozen=True, order=True)
class Genotype:
    """Unordered pair of allele labels; ``Genotype("B", "A") == Genotype("A", "B")``."""

    first: str
    second: str

    def __post_init__(self):
        a, b = str(self.first), str(self.second)
        if a in MISSING_ALLELES or b in MISSING_ALLELES:
            raise DataError("use Genotype.parse for calls that may be missing")
        if b < a:
            a, b = b, a
        object.__setattr__(self, "first", a)
        object.__setattr__(self, "second", b)

    @classmethod
    def parse(cls, a, b=None):
        """Parse ``"A B"``, ``"AB"`` or two allele tokens; missing or half calls give None."""
        if b is None:
            text = str(a).strip()
            parts = text.split()
            if len(parts) == 2:
                a, b = parts
            elif len(text) == 2:
                a, b = text[0], text[1]
            else:
                raise DataError(f"cannot parse genotype {text!r}")
        a, b = str(a), str(b)
        if a in MISSING_ALLELES or b in MISSING_ALLELES:
            return None
        return cls(a, b)

    @property
    def alleles(self):
        return (self.first, self.second)

    def count(self, allele):
        return (self.first == allele) + (self.second == allele)

    def is_homozygous(self):
        return self.first == self.second

    def __str__(self):
        return self.first + self.second


@dataclass(frozen=True)
class GeneticModel:
    """Coding of a genotype into a number X.

    ``risk_allele`` is an allele label, or one of the keywords ``"minor"`` /
    ``"major"`` meaning the allele that is minor (major) among founders.
    """

    kind: str = ADDITIVE
    risk_allele: str = "minor"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ParameterError(f"unknown genetic model {self.kind!r}; expected one of {MODEL_KINDS}")

    def code_count(self, count):
        """Code risk-allele counts (scalar or array, -1 = missing)."""
        c = np.asarray(count)
        if self.kind == ADDITIVE:
            x = c.astype(np.int8, copy=True)
        elif self.kind == DOMINANT:
            x = (c >= 1).astype(np.int8)
        else:
            x = (c == 2).astype(np.int8)
        x = np.where(c < 0, MISSING_CODE, x)
        return x if x.ndim else int(x)


def code_genotype(g, model, alleles=None):
    """Numerical coding of one genotype; ``None`` (missing) maps to ``None``.

    ``alleles`` is the marker's allele set; when given, a genotype carrying a
    foreign label is a data error.  ``model.risk_allele`` must be a concrete
    label here.
    """
    if g is None:
        return None
    if alleles is not None:
        bad = [a for a in g.alleles if a not in alleles]
        if bad:
            raise DataError(f"allele {bad[0]!r} not in marker allele set {tuple(alleles)}")
    if model.risk_allele in ("minor", "major"):
        raise ParameterError("code_genotype needs a concrete risk allele label")
    return model.code_count(g.count(model.risk_allele))


@dataclass(frozen=True)
class MarkerInfo:
    marker_id: str
    chromosome: str = "1"
    position: int = 0
    alleles: tuple = ()

    def __post_init__(self):
        if self.position < 0:
            raise DataError(f"marker {self.marker_id}: negative position {self.position}")
        if len(self.alleles) > 2:
            raise DataError(f"marker {self.marker_id}: more than two alleles {self.alleles}")


@dataclass(frozen=True)
class Trait:
    """A binary (0/1, NaN missing) or quantitative trait value."""

    kind: str
    value: float

    @property
    def missing(self):
        return not np.isfinite(self.value)


@dataclass(frozen=True)
class Person:
    family_id: str
    person_id: str
    father_id: str | None
    mother_id: str | None
    sex: int
    trait: Trait
    genotypes: tuple


@dataclass(frozen=True)
class NuclearFamily:
    """A parent pair plus their offspring; indices refer to cohort person rows.

    ``father``/``mother`` are -1 when the parent has no row in the cohort.
    Whether a parent is genotyped is a per-marker property of the genotype
    matrix.
    """

    family_id: str
    father: int
    mother: int
    offspring: tuple

    @property
    def parents(self):
        return tuple(i for i in (self.father, self.mother) if i >= 0)


@dataclass(frozen=True, eq=False)
class Cohort:
    """Immutable cohort: person table, genotype matrix, markers, families.

    Build with :func:`build_cohort` (from records) or :meth:`from_arrays`.
    """

    fid: np.ndarray
    iid: np.ndarray
    father_id: np.ndarray
    mother_id: np.ndarray
    sex: np.ndarray
    trait: np.ndarray
    trait_kind: str
    genotypes: np.ndarray
    markers: tuple
    families: tuple = field(default=())
    father: np.ndarray = field(default=None)
    mother: np.ndarray = field(default=None)

    @classmethod
    def from_arrays(cls, fid, iid, father_id, mother_id, sex, trait, genotypes, markers,
                    trait_kind="binary"):
        """Assemble a cohort and derive the family partition.

        Parent ids use ``"0"`` for "no parent".  Raises :class:`DataError` on
        duplicate ids, dangling parent references or shape mismatches.
        """
        fid = np.asarray(fid, dtype=object)
        iid = np.asarray(iid, dtype=object)
        father_id = np.asarray(father_id, dtype=object)
        mother_id = np.asarray(mother_id, dtype=object)
        n = len(iid)
        genotypes = np.asarray(genotypes, dtype=np.int8)
        markers = tuple(markers)
        if genotypes.ndim != 2 or genotypes.shape != (n, len(markers)):
            raise DataError(f"genotype matrix shape {genotypes.shape} does not match "
                            f"{n} persons x {len(markers)} markers")
        if trait_kind not in ("binary", "quantitative"):
            raise ParameterError(f"unknown trait kind {trait_kind!r}")
        ids = set(m.marker_id for m in markers)
        if len(ids) != len(markers):
            raise DataError("duplicate marker ids in panel")

        index = {}
        for i, key in enumerate(zip(fid, iid)):
            if key in index:
                raise DataError(f"duplicate person {key[0]}/{key[1]}")
            index[key] = i

        def resolve(ids_):
            out = np.full(n, -1, dtype=np.int64)
            for i, (f, pid) in enumerate(zip(fid, ids_)):
                if pid == "0":
                    continue
                j = index.get((f, pid))
                if j is None:
                    raise DataError(f"person {f}/{iid[i]}: parent {pid!r} not found in family")
                out[i] = j
            return out

        father = resolve(father_id)
        mother = resolve(mother_id)

        groups = {}
        for i in range(n):
            if father[i] < 0 and mother[i] < 0:
                continue
            groups.setdefault((fid[i], father[i], mother[i]), []).append(i)
        families = tuple(
            NuclearFamily(family_id=str(k[0]), father=int(k[1]), mother=int(k[2]), offspring=tuple(v))
            for k, v in groups.items()
        )
        trait = np.asarray(trait, dtype=float)
        sex = np.asarray(sex, dtype=np.int8)
        return cls(fid=fid, iid=iid, father_id=father_id, mother_id=mother_id, sex=sex,
                   trait=trait, trait_kind=trait_kind, genotypes=genotypes, markers=markers,
                   families=families, father=father, mother=mother)

    def __post_init__(self):
        self.genotypes.setflags(write=False)

    @property
    def n_persons(self):
        return len(self.iid)

    @property
    def n_markers(self):
        return len(self.markers)

    @property
    def founders(self):
        """Boolean mask of persons with no parent row in the cohort."""
        return (self.father < 0) & (self.mother < 0)

    @property
    def unrelated_singletons(self):
        """Indices of founders that are neither offspring nor parents in any family."""
        used = np.zeros(self.n_persons, dtype=bool)
        for fam in self.families:
            used[list(fam.offspring)] = True
            used[list(fam.parents)] = True
        return np.flatnonzero(~used)

    def marker_index(self, marker):
        if isinstance(marker, (int, np.integer)):
            if not 0 <= marker < self.n_markers:
                raise IndexError(f"marker index {marker} out of range")
            return int(marker)
        for i, m in enumerate(self.markers):
            if m.marker_id == marker:
                return i
        raise KeyError(f"unknown marker {marker!r}")

    def genotype(self, person, marker):
        """The :class:`Genotype` (or None) of person row ``person`` at ``marker``."""
        j = self.marker_index(marker)
        c = int(self.genotypes[person, j])
        alleles = self.markers[j].alleles
        if c < 0:
            return None
        a0 = alleles[0] if alleles else "1"
        a1 = alleles[1] if len(alleles) > 1 else "2"
        return Genotype(*([a0] * (2 - c) + [a1] * c))

    def person(self, i):
        kind = self.trait_kind
        gts = tuple(self.genotype(i, j) for j in range(self.n_markers))
        fa = None if self.father_id[i] == "0" else str(self.father_id[i])
        mo = None if self.mother_id[i] == "0" else str(self.mother_id[i])
        return Person(str(self.fid[i]), str(self.iid[i]), fa, mo, int(self.sex[i]),
                      Trait(kind, float(self.trait[i])), gts)

    def risk_counts(self, model, markers=None):
        """Risk-allele counts (persons x markers), oriented per ``model.risk_allele``."""
        cols = np.arange(self.n_markers) if markers is None else np.asarray(markers)
        flip = self.flip_mask(model, cols)
        g = self.genotypes[:, cols]
        return np.where(g < 0, g, np.where(flip, 2 - g, g)).astype(np.int8)

    def flip_mask(self, model, markers=None):
        """True where the risk allele is ``alleles[0]`` (counts must be mirrored)."""
        cols = np.arange(self.n_markers) if markers is None else np.asarray(markers)
        ra = model.risk_allele
        if ra in ("minor", "major"):
            freq = self.founder_allele_freq(cols)
            # ties resolve to alleles[1]
            return freq > 0.5 if ra == "minor" else freq < 0.5
        flip = np.zeros(len(cols), dtype=bool)
        for k, j in enumerate(cols):
            alleles = self.markers[j].alleles
            if len(alleles) > 1 and alleles[1] == ra:
                continue
            if alleles and alleles[0] == ra:
                flip[k] = True
            elif alleles:
                raise DataError(f"risk allele {ra!r} not in marker {self.markers[j].marker_id} "
                                f"allele set {alleles}")
        return flip

    def founder_allele_freq(self, markers=None):
        """Frequency of ``alleles[1]`` among typed founders (all persons if none typed)."""
        cols = np.arange(self.n_markers) if markers is None else np.asarray(markers)
        g = self.genotypes[:, cols]
        f = g[self.founders]
        typed = f >= 0
        n = typed.sum(axis=0)
        s = np.where(typed, f, 0).sum(axis=0, dtype=np.int64)
        typed_all = g >= 0
        n_all = typed_all.sum(axis=0)
        s_all = np.where(typed_all, g, 0).sum(axis=0, dtype=np.int64)
        use_all = n == 0
        num = np.where(use_all, s_all, s).astype(float)
        den = 2.0 * np.where(use_all, n_all, n)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / np.maximum(den, 1), 0.0)

    def offspring_index(self):
        """Arrays (child, father, mother, family) with one entry per offspring row."""
        child, fa, mo, fam = [], [], [], []
        for k, f in enumerate(self.families):
            for c in f.offspring:
                child.append(c)
                fa.append(f.father)
                mo.append(f.mother)
                fam.append(k)
        return (np.asarray(child, dtype=np.int64), np.asarray(fa, dtype=np.int64),
                np.asarray(mo, dtype=np.int64), np.asarray(fam, dtype=np.int64))

    def replace(self, genotypes=None, markers=None, persons=None):
        """Copy with a new genotype matrix and/or a marker subset (indices) and/or person subset."""
        g = self.genotypes if genotypes is None else np.asarray(genotypes, dtype=np.int8)
        mk = self.markers
        if markers is not None:
            markers = np.asarray(markers, dtype=np.int64)
            g = g[:, markers]
            mk = tuple(self.markers[j] for j in markers)
        rows = slice(None) if persons is None else np.asarray(persons, dtype=np.int64)
        return Cohort.from_arrays(self.fid[rows], self.iid[rows], self.father_id[rows],
                                  self.mother_id[rows], self.sex[rows], self.trait[rows],
                                  g[rows], mk, trait_kind=self.trait_kind)

    def __eq__(self, other):
        if not isinstance(other, Cohort):
            return NotImplemented
        same_trait = np.array_equal(self.trait, other.trait, equal_nan=True)
        return (self.trait_kind == other.trait_kind and same_trait
                and self.markers == other.markers
                and np.array_equal(self.genotypes, other.genotypes)
                and all(np.array_equal(getattr(self, a), getattr(other, a))
                        for a in ("fid", "iid", "father_id", "mother_id", "sex")))

    __hash__ = None


@dataclass(frozen=True)
class PedRecord:
    """One pedigree line, already tokenised."""

    fid: str
    iid: str
    pat: str
    mat: str
    sex: str
    pheno: str
    alleles: Sequence  # 2 * n_markers allele tokens


def parse_trait(values, kind="auto"):
    """Map PHENO tokens to floats and decide the trait kind.

    Binary: 1 = unaffected -> 0.0, 2 = affected -> 1.0, 0/-9 -> NaN.
    Quantitative: real numbers, -9 -> NaN.  ``kind="auto"`` is binary iff
    every token is one of 0, 1, 2, -9.
    """
    toks = [str(v) for v in values]
    if kind == "auto":
        kind = "binary" if all(t in ("0", "1", "2", "-9") for t in toks) else "quantitative"
    out = np.empty(len(toks))
    for i, t in enumerate(toks):
        if kind == "binary":
            out[i] = {"1": 0.0, "2": 1.0}.get(t, np.nan)
            if t not in ("0", "1", "2", "-9"):
                raise DataError(f"binary phenotype token {t!r}")
        else:
            try:
                v = float(t)
            except ValueError as exc:
                raise DataError(f"phenotype {t!r} is not a number") from exc
            out[i] = np.nan if t == "-9" else v
            if not np.isfinite(out[i]) and t != "-9":
                raise DataError(f"non-finite phenotype {t!r}")
    return out, kind


def build_cohort(pedigree_records: Iterable[PedRecord], marker_records: Sequence[MarkerInfo],
                 trait_kind="auto"):
    """Assemble a :class:`Cohort` from parsed pedigree and marker records.

    Allele labels per marker are the observed labels in sorted order.  A
    marker with more than two labels is rejected; half-called genotypes are
    treated as missing.
    """
    records = list(pedigree_records)
    markers = list(marker_records)
    m = len(markers)
    n = len(records)
    for r in records:
        if len(r.alleles) != 2 * m:
            raise DataError(f"person {r.fid}/{r.iid}: {len(r.alleles)} allele columns, "
                            f"expected {2 * m}")
    if n == 0:
        return Cohort.from_arrays([], [], [], [], [], [], np.zeros((0, m), dtype=np.int8),
                                  [MarkerInfo(mk.marker_id, mk.chromosome, mk.position) for mk in markers],
                                  trait_kind="binary" if trait_kind == "auto" else trait_kind)
    tok = np.array([list(r.alleles) for r in records], dtype=object).reshape(n, m, 2)
    geno = np.full((n, m), MISSING_CODE, dtype=np.int8)
    out_markers = []
    for j, mk in enumerate(markers):
        a = tok[:, j, 0].astype(str)
        b = tok[:, j, 1].astype(str)
        miss = np.isin(a, list(MISSING_ALLELES)) | np.isin(b, list(MISSING_ALLELES))
        labels = sorted(set(a[~miss]) | set(b[~miss]))
        if len(labels) > 2:
            raise DataError(f"marker {mk.marker_id}: more than two alleles {labels}")
        if labels:
            hi = labels[-1] if len(labels) == 2 else None
            cnt = (a == hi).astype(np.int8) + (b == hi).astype(np.int8) if hi else np.zeros(n, np.int8)
            geno[:, j] = np.where(miss, MISSING_CODE, cnt)
        out_markers.append(MarkerInfo(mk.marker_id, mk.chromosome, mk.position,
                                      tuple(str(x) for x in labels)))
    trait, kind = parse_trait([r.pheno for r in records], trait_kind)
    sex = []
    for r in records:
        try:
            sex.append(int(r.sex))
        except ValueError as exc:
            raise DataError(f"person {r.fid}/{r.iid}: bad sex code {r.sex!r}") from exc
    return Cohort.from_arrays([r.fid for r in records], [r.iid for r in records],
                              [r.pat for r in records], [r.mat for r in records], sex, trait,
                              geno, out_markers, trait_kind=kind)
