import numpy as np
import pytest

from famgwas.core import Cohort, MarkerInfo, PedRecord, build_cohort


def ped(lines, n_markers=None, trait_kind="auto"):
    """Cohort from PED-style strings ("FID IID PAT MAT SEX PHENO a1 a2 ...")."""
    recs = []
    for line in lines:
        tok = line.split()
        recs.append(PedRecord(*tok[:6], alleles=tok[6:]))
    m = n_markers if n_markers is not None else (len(recs[0].alleles) // 2 if recs else 0)
    markers = [MarkerInfo(f"m{j + 1}", "1", 100 * (j + 1)) for j in range(m)]
    return build_cohort(recs, markers, trait_kind=trait_kind)


def count_cohort(families, trait_kind="binary"):
    """Cohort from count-level family specs.

    Each family is ``(father, mother, kids, traits)``: parents are count rows
    per marker (-1 missing) or None for an untyped parent, ``kids`` a list
    of count rows.  Parent rows always exist so sibs form one family.
    """
    M = len(families[0][2][0])
    fid, iid, pat, mat, sex, trait, rows = [], [], [], [], [], [], []
    for k, (fa, mo, kids, traits) in enumerate(families):
        f = f"F{k}"
        for who, g, s in (("fa", fa, 1), ("mo", mo, 2)):
            fid.append(f); iid.append(who); pat.append("0"); mat.append("0")
            sex.append(s); trait.append(np.nan); rows.append([-1] * M if g is None else g)
        for c, (g, t) in enumerate(zip(kids, traits)):
            fid.append(f); iid.append(f"c{c}"); pat.append("fa"); mat.append("mo")
            sex.append(0); trait.append(t); rows.append(g)
    g = np.array(rows, dtype=np.int8).reshape(len(rows), M)
    markers = [MarkerInfo(f"m{j + 1}", "1", j + 1, ("1", "2")) for j in range(M)]
    return Cohort.from_arrays(fid, iid, pat, mat, sex, trait, g, markers, trait_kind=trait_kind)


@pytest.fixture
def eight_trios():
    """Eight AB x AB trios with BB affected children (one marker)."""
    lines = []
    for k in range(8):
        lines += [f"F{k} fa 0 0 1 0 A B", f"F{k} mo 0 0 2 0 A B", f"F{k} kid fa mo 1 2 B B"]
    return ped(lines)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
