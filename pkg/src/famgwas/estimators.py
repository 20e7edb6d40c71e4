"""Estimator-style wrappers around the functional API.

Each class takes its configuration in ``__init__`` (so ``get_params`` and
``set_params`` work as usual) and learns from a :class:`~famgwas.core.Cohort`
in ``fit``.  Fitted attributes end in an underscore.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import qc, twostage
from .fbat import DEFAULT_MIN_INFORMATIVE, OffsetSpec, scan, tdt_scan
from .validation import check_cohort, check_fraction, check_model, check_positive_int


def _offset(value):
    return OffsetSpec() if value == "auto" else OffsetSpec.fixed(value)


class FBAT(BaseEstimator):
    """Genome-wide FBAT scan.

    After ``fit``: ``results_`` (one :class:`~famgwas.fbat.FbatResult` per
    marker), ``z_`` and ``p_values_`` arrays.  ``transform`` returns an
    (n_markers x 4) array of U, var0, Z and p for a cohort.
    """

    def __init__(self, model="additive", risk_allele="minor", offset="auto",
                 min_informative=DEFAULT_MIN_INFORMATIVE, n_jobs=1):
        self.model = model
        self.risk_allele = risk_allele
        self.offset = offset
        self.min_informative = min_informative
        self.n_jobs = n_jobs

    def _scan(self, X):
        check_cohort(X)
        check_positive_int("min_informative", self.min_informative, 0)
        return scan(X, check_model(self.model, self.risk_allele), _offset(self.offset),
                    min_informative=self.min_informative, n_jobs=self.n_jobs)

    def fit(self, X, y=None):
        self.results_ = self._scan(X)
        self.z_ = np.array([r.Z for r in self.results_])
        self.p_values_ = np.array([r.p_value for r in self.results_])
        self.marker_ids_ = [r.marker_id for r in self.results_]
        return self

    def transform(self, X):
        check_is_fitted(self)
        return np.array([[r.U, r.var0, r.Z, r.p_value] for r in self._scan(X)])


class TDT(BaseEstimator):
    """Transmission disequilibrium test per marker (affected offspring, typed parents)."""

    def __init__(self, risk_allele="minor", min_informative=DEFAULT_MIN_INFORMATIVE):
        self.risk_allele = risk_allele
        self.min_informative = min_informative

    def fit(self, X, y=None):
        check_cohort(X)
        self.results_ = tdt_scan(X, None, self.risk_allele, self.min_informative)
        self.z_ = np.array([r.Z for r in self.results_])
        self.p_values_ = np.array([r.p_value for r in self.results_])
        return self


class QualityControl(TransformerMixin, BaseEstimator):
    """QC cascade.  ``fit`` records exclusions; ``transform`` replays them.

    Replaying on the fitted cohort gives exactly the cascade output; on a
    different cohort with the same ids it applies the same exclusions.
    """

    def __init__(self, max_mendel_errors_per_marker=5, max_mendel_errors_per_family=5,
                 min_marker_call_rate=0.95, min_person_call_rate=0.90, min_maf=0.01,
                 hwe_alpha=1e-6):
        self.max_mendel_errors_per_marker = max_mendel_errors_per_marker
        self.max_mendel_errors_per_family = max_mendel_errors_per_family
        self.min_marker_call_rate = min_marker_call_rate
        self.min_person_call_rate = min_person_call_rate
        self.min_maf = min_maf
        self.hwe_alpha = hwe_alpha

    def _config(self):
        return qc.QcConfig(**self.get_params())

    def fit(self, X, y=None):
        check_cohort(X)
        _, self.report_ = qc.apply_filters(X, self._config())
        return self

    def fit_transform(self, X, y=None, **fit_params):
        check_cohort(X)
        clean, self.report_ = qc.apply_filters(X, self._config())
        return clean

    def transform(self, X):
        check_is_fitted(self)
        check_cohort(X)
        rep = self.report_
        g = np.array(X.genotypes)
        persons = {f"{f}/{i}": k for k, (f, i) in enumerate(zip(X.fid, X.iid))}
        for key in rep.excluded_persons:
            if key in persons:
                g[persons[key]] = -1
        fam_rows = {}
        for f in X.families:
            rows = [i for i in (f.father, f.mother) if i >= 0] + list(f.offspring)
            fam_rows.setdefault(f.family_id, []).extend(rows)
        for fid in rep.excluded_families:
            if fid in fam_rows:
                g[fam_rows[fid]] = -1
        col = {m.marker_id: j for j, m in enumerate(X.markers)}
        for mid, fid in rep.deleted_sets:
            if mid in col and fid in fam_rows:
                g[fam_rows[fid], col[mid]] = -1
        keep = [j for j, m in enumerate(X.markers) if m.marker_id not in rep.excluded_markers]
        return X.replace(genotypes=g, markers=keep)


class TwoStageFBAT(BaseEstimator):
    """Screen by between-family regression, then FBAT under a TopK or weighted strategy.

    After ``fit``: ``screen_`` (ranked :class:`~famgwas.twostage.ScreenResult`
    list), ``result_`` and ``rejected_``.  ``predict`` returns a boolean
    rejection vector in marker order.
    """

    def __init__(self, strategy="topk", k=10, alpha=0.05, model="additive", risk_allele="minor",
                 offset="auto", n_jobs=1):
        self.strategy = strategy
        self.k = k
        self.alpha = alpha
        self.model = model
        self.risk_allele = risk_allele
        self.offset = offset
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        check_cohort(X)
        check_fraction("alpha", self.alpha, open_low=True, open_high=True)
        check_positive_int("k", self.k)
        model = check_model(self.model, self.risk_allele)
        spec = twostage.StrategySpec(self.strategy, self.k, self.alpha)
        off = _offset(self.offset)
        self.screen_ = twostage.screen(X, model, off, self.alpha, self.k)
        self.result_ = twostage.test_stage(X, self.screen_, spec, model, off, self.n_jobs)
        self.rejected_ = self.result_.rejected
        self.marker_ids_ = [m.marker_id for m in X.markers]
        return self

    def predict(self, X=None):
        check_is_fitted(self)
        hit = set(self.rejected_)
        return np.array([m in hit for m in self.marker_ids_])


class ErrorRateEstimator(BaseEstimator):
    """Undetected genotyping-error rate from genome-wide major-allele over-transmission."""

    def __init__(self, error_model="miscall", seed=0, grid=qc.DEFAULT_GRID, n_calibration=20000,
                 n_boot=1000, level=0.95):
        self.error_model = error_model
        self.seed = seed
        self.grid = grid
        self.n_calibration = n_calibration
        self.n_boot = n_boot
        self.level = level

    def fit(self, X, y=None):
        check_cohort(X, require_families=True)
        self.estimate_ = qc.estimate_error_rate(X, self.error_model, self.seed, self.grid,
                                                self.n_calibration, self.n_boot, self.level)
        self.epsilon_ = self.estimate_.epsilon
        self.band_ = (self.estimate_.low, self.estimate_.high)
        return self
