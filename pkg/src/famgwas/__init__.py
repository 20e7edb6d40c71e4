"""Family-based association testing for genome-wide studies.

Pedigree ingestion, Mendelian checks, the FBAT/TDT score tests, quality
control, two-stage screening, closed-form power and a simulation engine.
"""

__version__ = "0.1.0"

from .core import (ADDITIVE, DOMINANT, RECESSIVE, Cohort, DataError, FamGwasError, GeneticModel,
                   Genotype, MarkerInfo, NuclearFamily, ParameterError, build_cohort)
from .fbat import OffsetSpec, fbat_statistic, scan, tdt_scan, tdt_statistic
from .io import read_cohort, write_map, write_ped

_LAZY = {"FBAT", "TDT", "QualityControl", "TwoStageFBAT", "ErrorRateEstimator"}


def __getattr__(name):
    # estimators pull in scikit-learn; load it only when asked
    if name in _LAZY:
        from . import estimators
        return getattr(estimators, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = ["ADDITIVE", "DOMINANT", "RECESSIVE", "Cohort", "DataError", "FamGwasError",
           "GeneticModel", "Genotype", "MarkerInfo", "NuclearFamily", "ParameterError",
           "OffsetSpec", "build_cohort", "fbat_statistic", "read_cohort", "scan", "tdt_scan", "tdt_statistic",
           "write_map", "write_ped", *sorted(_LAZY)]
