import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from famgwas.core import GeneticModel
from famgwas.fbat import (LOW_INFORMATION, MONOMORPHIC, NO_INFORMATIVE, OK, OffsetSpec,
                          fbat_statistic, scan, tdt_scan, tdt_statistic,
                          transmission_counts)
from conftest import count_cohort, ped

CODE = {"additive": lambda c: c, "dominant": lambda c: int(c >= 1), "recessive": lambda c: int(c == 2)}


def oracle(families, kind, mu):
    """FBAT U and var0 by direct enumeration over Mendel / sibship permutations.

    Exact rational arithmetic on the double-precision centred traits t - mu,
    so an informative family is simply one with v > 0.
    """
    code = CODE[kind]
    U = V = Fraction(0)
    n_inf = 0
    for fa, mo, kids, traits in families:
        fa = fa[0] if fa is not None else -1
        mo = mo[0] if mo is not None else -1
        used = [(k[0], Fraction(t - mu)) for k, t in zip(kids, traits) if k[0] >= 0 and math.isfinite(t)]
        u = v = Fraction(0)
        if fa >= 0 and mo >= 0:
            for x, t in used:
                # skip children the parents cannot produce
                pa = [0] * (2 - fa) + [1] * fa
                pm = [0] * (2 - mo) + [1] * mo
                outcomes = [code(a + b) for a in pa for b in pm]
                if x not in [a + b for a in pa for b in pm]:
                    continue
                e = Fraction(sum(outcomes), 4)
                var = sum((o - e) ** 2 for o in outcomes) / 4
                u += t * (code(x) - e)
                v += t ** 2 * var
        elif fa < 0 and mo < 0 and len(used) >= 2:
            xs = [code(x) for x, _ in used]
            ts = [t for _, t in used]
            sums = [sum(t * x for t, x in zip(ts, p)) for p in itertools.permutations(xs)]
            mean = sum(sums) / Fraction(len(sums))
            u = sum(t * x for t, x in zip(ts, xs)) - mean
            v = sum((s - mean) ** 2 for s in sums) / len(sums)
        U += u
        V += v
        n_inf += v > 0
    return float(U), float(V), n_inf


def test_eight_trios(eight_trios):
    r = fbat_statistic(eight_trios, 0, GeneticModel("additive", "B"), OffsetSpec.fixed(0.0))
    assert (r.U, r.var0, r.Z) == (8.0, 4.0, 4.0)
    assert r.status == LOW_INFORMATION and math.isnan(r.p_value)
    r = fbat_statistic(eight_trios, 0, GeneticModel("additive", "B"), min_informative=1)
    assert r.status == OK and r.p_value == pytest.approx(2 * 3.1671241833119863e-05)
    t = tdt_statistic(eight_trios, 0, "B")
    assert t.Z == 4.0
    b, c = transmission_counts(eight_trios, [0], "B")
    assert (b[0], c[0]) == (16, 0)


def test_auto_offset_all_affected_is_zero(eight_trios):
    assert OffsetSpec().resolve(eight_trios) == 0.0


def test_monomorphic_and_uninformative():
    c = count_cohort([([0, 1], [0, 1], [[0, 1]], [1.0]), ([0, 2], [0, 0], [[0, 1]], [1.0])])
    r = scan(c, GeneticModel("additive", "2"))
    assert r[0].status == MONOMORPHIC
    assert r[1].status == NO_INFORMATIVE or r[1].n_informative == 1


# traits and offsets are 0 or at least 1e-100 in magnitude so squared scores stay in double range
def _finite(lo, hi):
    return st.floats(lo, hi).filter(lambda v: v == 0 or abs(v) >= 1e-100)


fam = st.tuples(
    st.one_of(st.none(), st.integers(-1, 2)), st.one_of(st.none(), st.integers(-1, 2)),
    st.lists(st.tuples(st.integers(-1, 2), st.one_of(_finite(-3, 3), st.just(float("nan")))),
             min_size=1, max_size=4))


@settings(max_examples=200, deadline=None)
@given(st.lists(fam, min_size=1, max_size=8), st.sampled_from(["additive", "dominant", "recessive"]),
       _finite(-1, 1))
def test_scan_matches_enumeration_oracle(fams, kind, mu):
    spec = [([f] if f is not None else None, [m] if m is not None else None,
             [[k] for k, _ in kids], [t for _, t in kids]) for f, m, kids in fams]
    c = count_cohort(spec, trait_kind="quantitative")
    r = fbat_statistic(c, 0, GeneticModel(kind, "2"), OffsetSpec.fixed(mu), min_informative=0)
    U, V, n_inf = oracle(spec, kind, mu)
    assert r.U == pytest.approx(U, abs=1e-9)
    assert r.var0 == pytest.approx(V, abs=1e-9)
    if r.status not in (MONOMORPHIC,):
        assert r.n_informative == n_inf


def test_one_typed_parent_family_is_excluded():
    c = count_cohort([([1], None, [[1], [2]], [1.0, 0.0])], trait_kind="binary")
    r = fbat_statistic(c, 0, GeneticModel("additive", "2"), OffsetSpec.fixed(0.5), min_informative=0)
    assert r.var0 == 0 and r.n_informative == 0


def test_sibship_with_no_parents():
    # affected BB, unaffected AA: U = 0.5 * (2 - 1) + (-0.5) * (0 - 1) = 1;
    # the two assignments give T.X = +1 or -1, so var0 = 1
    c = count_cohort([(None, None, [[2], [0]], [1.0, 0.0])])
    r = fbat_statistic(c, 0, GeneticModel("additive", "2"), OffsetSpec.fixed(0.5), min_informative=0)
    assert (r.U, r.var0) == (1.0, 1.0)


def test_results_independent_of_chunking_and_threads():
    from famgwas.sim import DesignSpec, DiseaseModel, PopulationModel, generate
    c = generate(DesignSpec("dst", 60, n_markers=37, parents_typed=False),
                 PopulationModel(freq_range=(0.1, 0.5)), DiseaseModel(prevalence=0.2), seed=3)
    a = scan(c, min_informative=0)
    b = scan(c, min_informative=0, chunk_size=5, n_jobs=3)
    assert a == b


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2), st.integers(-1, 2)), min_size=1,
                max_size=30))
def test_tdt_equals_transmission_formula(trios):
    spec = [([f], [m], [[k]], [1.0]) for f, m, k in trios]
    c = count_cohort(spec)
    r = tdt_statistic(c, 0, "2", min_informative=0)
    b, cc = (int(v[0]) for v in transmission_counts(c, [0], "2"))
    if b + cc == 0:
        assert r.var0 == 0
    else:
        assert r.Z ** 2 == pytest.approx((b - cc) ** 2 / (b + cc), rel=1e-10, abs=1e-12)


def test_scaling_trait_leaves_z_unchanged():
    from famgwas.sim import DesignSpec, DiseaseModel, PopulationModel, generate
    c = generate(DesignSpec("trio", 80, n_markers=5), PopulationModel(0.3),
                 DiseaseModel(trait="quantitative"), seed=2)
    z1 = [r.Z for r in scan(c, min_informative=0)]
    c2 = c.replace()
    object.__setattr__(c2, "trait", c.trait * 3.0 + 7.0)
    z2 = [r.Z for r in scan(c2, min_informative=0)]
    np.testing.assert_allclose(z1, z2, rtol=1e-10)


def _loop_transmissions(cohort, j, risk):
    """Per-parent transmission tally, one offspring at a time."""
    can = {(f, m): {a + b for a in {f // 2, (f + 1) // 2} for b in {m // 2, (m + 1) // 2}}
           for f in range(3) for m in range(3)}
    r = cohort.risk_counts(GeneticModel("additive", risk), [j])[:, 0]
    b = c = 0
    for fam in cohort.families:
        if fam.father < 0 or fam.mother < 0:
            continue
        gf, gm = int(r[fam.father]), int(r[fam.mother])
        for k in fam.offspring:
            x = int(r[k])
            if cohort.trait[k] != 1.0 or min(gf, gm, x) < 0 or x not in can[gf, gm]:
                continue
            for par, other in ((gf, gm), (gm, gf)):
                if par == 1:
                    # the other parent's contribution is fixed unless it is also heterozygous
                    sent = x - other // 2 if other != 1 else None
                    if sent is None:
                        b += x / 2
                        c += 1 - x / 2
                    else:
                        b += sent
                        c += 1 - sent
    return b, c


def test_transmission_counts_match_loop():
    from famgwas.sim import DesignSpec, DiseaseModel, ErrorModel, PopulationModel, generate
    c = generate(DesignSpec("dsp", 60, n_markers=40, parents_typed=True), PopulationModel(freq_range=(0.1, 0.5)),
                 DiseaseModel(prevalence=0.2), ErrorModel(0.03, missing_rate=0.05), seed=8)
    b, cc = transmission_counts(c, None, "minor")
    for j in range(c.n_markers):
        assert (b[j], cc[j]) == _loop_transmissions(c, j, "minor")
    assert tdt_scan(c, min_informative=0) == [tdt_statistic(c, j, min_informative=0)
                                              for j in range(c.n_markers)]
