"""Numerical laboratory for the H-functional, Futaki-type invariants, the
Kähler-Ricci flow and geodesic stability on toric Fano models (CP1 and F1)."""

__version__ = "0.1.0"

from .errors import (ConvergenceFailure, DegenerateMetricError, InvalidArgument,
                     KahlerLabError, NumericalOverflowError, StepRejected)
from .geometry import Polytope, QuadratureRule, build_model, polytope_moments, quadrature
from .metric import (ComplexPotential, ManifoldModel, RicciPotential, SymplecticPotential,
                     get_model, grad_pairing, legendre_dual, metric_catalog, ricci_potential)
from .functionals import FunctionalReport, h_functional, w_and_mu_bound
from .invariants import (ExtremalField, TorusVector, beta_vector, extremal_field, futaki,
                         h_invariant, modified_futaki)
from .flow import FlowState, dH_dt_identity, krf_step, run_krf
from .geodesic import (EpsGeodesicProblem, GeodesicPath, dh_dt_identity, eps_geodesic_solve,
                       h_of_t, stability_probe)
from ._kernels import BACKEND
