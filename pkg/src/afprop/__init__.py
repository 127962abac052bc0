"""Finite-dimensional computations for Lip-norms on AF algebras and propinquity bounds between their truncations."""

from .algebra import AlgebraShape, BlockElement, op_norm, sa_norm
from .metrics import (
    MetricCertificate,
    beta_bound_certificate,
    kantorovich_commutative_exact,
    kantorovich_lower_bound,
    propinquity_chain_bound,
    rescaling_bridge_bound,
    verify_quantum_isometry,
)
from .seminorms import LipSpec, WeightSequence, effros_shen_spec, lip_cond_exp, lip_interval, quotient_seminorm
from .states import TraceWeights, conditional_expectation, effros_shen_trace
from .towers import ContinuedFraction, Tower, effros_shen_tower, fusing_sequence, golden_family

__version__ = "0.1.0"
