"""Finite-window tools for hyperbolicity of diffeomorphisms via transfer operators.

The transfer operator ``(Gamma xi)_k = xi_k - Df(y_{k-1}) xi_{k-1}`` along an
orbit or pseudo-orbit ``y`` is assembled on finite windows and measured in
exponentially graded sequence norms.  Its inverses drive hyperbolicity
diagnostics, pseudo-orbit shadowing and experiments with slowed Anosov maps.
"""

__version__ = "0.1.0"

from .errors import (CertificateError, ContractionViolatedError, DegenerateSplittingError,
                     DimensionError, FamilyConstructionError, GradeTooCoarseError,
                     HypershadowError, NumericError, PreconditionError, PseudoOrbitTooFarError,
                     RadiusViolationError, UsageError, ValidationError)
from .seqspace import INFINITY, GradeParam, TangentSequence, WeightSequence, weighted_norm, shift
from .dynamics import (CatMap, IdentityMap, OrbitWindow, SlowedCatMap, StandardMap, UserMap,
                       evolve, model_from_config, pseudo_orbit)
from .operator import (MatrixRep, TransferOperator, assemble_gamma, induced_norm_estimate,
                       norm_lower, norm_upper)
from .splitting import SplittingFrame, compute_splitting
from .inverse import InverseOperator, splitting_inverse
