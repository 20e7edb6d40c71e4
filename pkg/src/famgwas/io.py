"""Pedigree (PED) and map (MAP) text formats, plus atomic file output.

PED: whitespace-delimited, one person per line::

    FID IID PAT MAT SEX PHENO  a1 a2  a1 a2 ...

``PAT``/``MAT`` of ``0`` mean "no parent row".  Allele ``0`` (also ``N``)
is missing; a genotype with one missing allele is treated as fully missing.
PHENO is 1/2 (unaffected/affected) with 0 or -9 missing for a binary trait,
otherwise a real number with -9 missing.

MAP: ``CHROM MARKER_ID POSITION`` per line, in PED column order.
Blank lines and lines starting with ``#`` are ignored in both.
"""

from __future__ import annotations

import contextlib
import math
import os
import tempfile

import numpy as np

from .core import DataError, MarkerInfo, PedRecord, build_cohort


@contextlib.contextmanager
def atomic_write(path, mode="w"):
    """Write to a temporary file beside ``path`` and rename on success."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _lines(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            yield lineno, s.split()


def read_map(path):
    markers = []
    for lineno, tok in _lines(path):
        if len(tok) != 3:
            raise DataError(f"expected 3 columns (CHROM MARKER_ID POSITION), got {len(tok)}",
                            path, lineno)
        try:
            pos = int(tok[2])
        except ValueError:
            raise DataError(f"position {tok[2]!r} is not an integer", path, lineno) from None
        if pos < 0:
            raise DataError(f"negative position {pos}", path, lineno)
        markers.append(MarkerInfo(tok[1], tok[0], pos))
    return markers


def read_ped_records(path, n_markers=None):
    records = []
    for lineno, tok in _lines(path):
        if len(tok) < 6 or (len(tok) - 6) % 2:
            raise DataError(f"expected 6 + 2*markers columns, got {len(tok)}", path, lineno)
        if n_markers is not None and len(tok) - 6 != 2 * n_markers:
            raise DataError(f"{(len(tok) - 6) // 2} genotype columns, map has {n_markers} markers",
                            path, lineno)
        try:
            int(tok[4])
        except ValueError:
            raise DataError(f"sex code {tok[4]!r} is not an integer", path, lineno) from None
        try:
            if not math.isfinite(float(tok[5])):
                raise ValueError
        except ValueError:
            raise DataError(f"phenotype {tok[5]!r} is not a finite number", path, lineno) from None
        records.append(PedRecord(*tok[:6], alleles=tok[6:]))
    return records


def read_cohort(ped_path, map_path, trait_kind="auto"):
    """Read a PED/MAP pair into a :class:`~famgwas.core.Cohort`."""
    markers = read_map(map_path)
    records = read_ped_records(ped_path, len(markers))
    try:
        return build_cohort(records, markers, trait_kind=trait_kind)
    except DataError as exc:
        if exc.path is None:
            raise DataError(str(exc), ped_path) from exc
        raise


def _pheno_tokens(cohort):
    if cohort.trait_kind == "binary":
        return ["0" if math.isnan(v) else ("2" if v == 1 else "1") for v in cohort.trait]
    return ["-9" if math.isnan(v) else repr(float(v)) for v in cohort.trait]


def ped_lines(cohort):
    """Yield PED lines for ``cohort`` (no trailing newline)."""
    g = cohort.genotypes
    n, m = g.shape
    if m:
        lab = np.empty((m, 4), dtype=object)  # tokens for count 0/1/2/missing
        for j, mk in enumerate(cohort.markers):
            al = mk.alleles
            a0 = al[0] if al else "0"
            a1 = al[1] if len(al) > 1 else a0
            lab[j] = [f"{a0} {a0}", f"{a0} {a1}", f"{a1} {a1}", "0 0"]
        cols = np.arange(m)
    pheno = _pheno_tokens(cohort)
    for i in range(n):
        head = " ".join([str(cohort.fid[i]), str(cohort.iid[i]), str(cohort.father_id[i]),
                         str(cohort.mother_id[i]), str(int(cohort.sex[i])), pheno[i]])
        if m:
            row = g[i].astype(np.int64)
            row = np.where(row < 0, 3, row)
            yield head + " " + " ".join(lab[cols, row])
        else:
            yield head


def write_ped(cohort, path):
    with atomic_write(path) as fh:
        for line in ped_lines(cohort):
            fh.write(line + "\n")


def write_map(cohort, path):
    with atomic_write(path) as fh:
        for mk in cohort.markers:
            fh.write(f"{mk.chromosome} {mk.marker_id} {mk.position}\n")


def write_tsv(path, header, rows):
    """Write a tab-separated table atomically; floats use repr for exactness."""
    with atomic_write(path) as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return "NA"
        return repr(float(v))
    if v is None:
        return "NA"
    return str(v)
