"""Semidefinite bounds on stationary expectation values of bosonic Lindblad dynamics."""

from .algebra import OperatorPolynomial, NormalMonomial, ExactComplex, annihilation, creation, number, identity, multiply, adjoint, commutator
from .lindblad import LindbladSpec, Jump, adjoint_action, build_model, MODELS
from .basis import MonomialBasis, StructureTensors, build_tensors, enumerate_basis
from .relaxation import RelaxationOptions, BoundResult, solve_bounds, estimate_scale
from .sdp import SdpStandardForm, Constraint, SolverSettings, solve
from .fock import TruncationSetting, stationary_state, oracle_extremal

__version__ = "0.1.0"
