"""Relevant-difference tests for spectral density operators of functional time series."""

from .core import (BasisError, BasisSpec, FunctionalSeries, OperatorMatrix, center, hs_inner,
                   hs_norm_sq, project_to_basis)
from .eigen import (EigenSystem, GapReport, KroneckerEigenSystem, NotHermitianError,
                    SeparableSeries3D, directional_sequential_estimate, eigengap_diagnostic,
                    eigensystem, kronecker_eigensystem, projector_distance_sq)
from .pivot import PivotSample, cached_pivot, quantile, simulate_pivot
from .relevance import (DistanceCurve, EstimationConfig, HypothesisSpec, SpecError, TestResult,
                        band_integrate, distance_curve, relevant_test, self_normalizer,
                        separable_test)
from .simlab import (ExperimentReport, ScenarioSpec, population_threshold, rejection_experiment,
                     scenario_series)
from .spectral import (BandwidthRule, SpectralEstimate, WindowSpec, naive_sequential_estimate,
                       sequential_estimate, spectral_surface)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
