"""Adaptive physics-informed networks for dynamic coupled thermo-elasticity
in functionally graded materials, verified with manufactured solutions."""

__version__ = "0.1.0"

from .autodiff import Jet4, JetLayout, Tape, jet_activate, jet_affine, param_gradient
from .errors import (BalancingError, ConfigurationError, GeometryError, MaterialValidityError, NumericError,
                     PrecisionError, SingularMaterialError, ThermoPinnError, UsageError)
from .materials import PhysicalConstants, PropertySpec, builtin_case_materials, derive_lame, eval_property
from .network import ModelState, ParamSet, forward_jet, init_params
from .physics import FieldJets, LossBreakdown, StressState, composite_loss, loss_terms

__all__ = [
    "Jet4", "JetLayout", "Tape", "jet_activate", "jet_affine", "param_gradient",
    "BalancingError", "ConfigurationError", "GeometryError", "MaterialValidityError", "NumericError",
    "PrecisionError", "SingularMaterialError", "ThermoPinnError", "UsageError",
    "PhysicalConstants", "PropertySpec", "builtin_case_materials", "derive_lame", "eval_property",
    "ModelState", "ParamSet", "forward_jet", "init_params",
    "FieldJets", "LossBreakdown", "StressState", "composite_loss", "loss_terms",
    "__version__",
]
