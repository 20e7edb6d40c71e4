import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

import famgwas
from famgwas.core import GeneticModel, ParameterError
from famgwas.estimators import FBAT, TDT, ErrorRateEstimator, QualityControl, TwoStageFBAT
from famgwas.fbat import scan
from famgwas.qc import EstimationError, QcConfig, apply_filters
from famgwas.sim import DesignSpec, DiseaseModel, ErrorModel, PopulationModel, generate


@pytest.fixture(scope="module")
def cohort():
    return generate(DesignSpec("trio", 150, n_markers=30, causal=0), PopulationModel(0.3, (0.1, 0.5)),
                    DiseaseModel(prevalence=0.05, relative_risk=4.0), ErrorModel(0.01), seed=2)


@pytest.mark.parametrize("est", [FBAT(model="dominant", n_jobs=2), TDT(risk_allele="2"),
                                 QualityControl(min_maf=0.05), TwoStageFBAT(k=3),
                                 ErrorRateEstimator(n_boot=10)])
def test_params_roundtrip(est):
    params = est.get_params()
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    name = next(iter(params))
    twin.set_params(**{name: params[name]})


def test_fbat_estimator_matches_functional(cohort):
    est = FBAT(model="recessive", risk_allele="2").fit(cohort)
    ref = scan(cohort, GeneticModel("recessive", "2"))
    np.testing.assert_array_equal(est.z_, [r.Z for r in ref])
    out = est.transform(cohort)
    assert out.shape == (cohort.n_markers, 4)
    np.testing.assert_array_equal(out[:, 2], est.z_)
    with pytest.raises(NotFittedError):
        FBAT().transform(cohort)
    with pytest.raises(ParameterError):
        FBAT(model="codominant").fit(cohort)
    with pytest.raises(TypeError):
        FBAT().fit("not a cohort")


def test_tdt_estimator(cohort):
    t = TDT(risk_allele="2").fit(cohort)
    f = FBAT(model="additive", risk_allele="2", offset=0.0).fit(cohort)
    ok = np.isfinite(t.z_) & np.isfinite(f.z_)
    np.testing.assert_allclose(t.z_[ok], f.z_[ok])


def test_qc_transform_replays_cascade(cohort):
    qc = QualityControl(max_mendel_errors_per_marker=2, max_mendel_errors_per_family=1)
    clean = qc.fit_transform(cohort)
    ref, _ = apply_filters(cohort, QcConfig(2, 1))
    assert clean == ref
    assert qc.transform(cohort) == ref
    assert QualityControl(**qc.get_params()).fit(cohort).transform(cohort) == ref


def test_two_stage_estimator(cohort):
    est = TwoStageFBAT(k=5).fit(cohort)
    pred = est.predict()
    assert pred.dtype == bool and pred.shape == (cohort.n_markers,)
    assert [m for m, hit in zip(est.marker_ids_, pred) if hit] == est.rejected_
    with pytest.raises(ParameterError):
        TwoStageFBAT(alpha=1.5).fit(cohort)


def test_error_rate_estimator_refuses_small_panels(cohort):
    with pytest.raises(EstimationError):
        ErrorRateEstimator().fit(cohort)


def test_lazy_package_exports():
    assert famgwas.FBAT is FBAT and famgwas.QualityControl is QualityControl
    with pytest.raises(AttributeError):
        famgwas.NoSuchThing
