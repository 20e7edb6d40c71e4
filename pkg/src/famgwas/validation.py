"""Input-validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numbers

from .core import MODEL_KINDS, Cohort, GeneticModel, ParameterError


def check_cohort(obj, require_families=False):
    if not isinstance(obj, Cohort):
        raise TypeError(f"expected a Cohort, got {type(obj).__name__}")
    if require_families and not obj.families:
        raise ParameterError("cohort has no nuclear families")
    return obj


def check_fraction(name, value, open_low=False, open_high=False):
    if not isinstance(value, numbers.Real):
        raise ParameterError(f"{name} must be a number, got {value!r}")
    lo_ok = value > 0 if open_low else value >= 0
    hi_ok = value < 1 if open_high else value <= 1
    if not (lo_ok and hi_ok):
        lo, hi = "(" if open_low else "[", ")" if open_high else "]"
        raise ParameterError(f"{name}={value} must lie in {lo}0, 1{hi}")
    return float(value)


def check_positive_int(name, value, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ParameterError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_model(kind, risk_allele="minor"):
    if kind not in MODEL_KINDS:
        raise ParameterError(f"unknown genetic model {kind!r}; expected one of {MODEL_KINDS}")
    return GeneticModel(kind, risk_allele)
