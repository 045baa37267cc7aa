"""Minimum-time bang-singular-bang extremals: shooting, certification,
and parameter continuation for single-input control-affine systems."""

__version__ = "0.1.0"

from .errors import (BsbError, EvalDomainError, ExprError, NoConvergence,
                     ParseError, SGLCViolated, SingularJacobian, StepFailure,
                     StructureBroken, ValidationError)
from .geometry import (CotangentPoint, DEFAULT_SGLC_TOL, LiftedHamiltonian,
                       ParametricAffineSystem, SingularHamiltonian,
                       VectorField, lie_bracket, poisson, symplectic_form)
from .flows import FlowSegment, IntegratorOptions, integrate, variational
from .extremal import (BsBExtremal, CertificationReport, CertifyOptions,
                       DEFAULT_CERTIFY_OPTIONS, ExtremalStructure, assemble,
                       certify, integrate_arcs)
from .secondvar import (FlowVerdict, LagrangianFrame, QpVerdict, RankResult,
                        SecondVariationOptions, SingularArcData,
                        build_singular_arc_data, coercivity_hamiltonian,
                        coercivity_qp, controllability_rank)
from .shooting import (ContinuationRecord, DEFAULT_SOLVER_OPTIONS,
                       ShootingResidual, SolverOptions, continue_path,
                       jacobian, newton_solve, residual, uniqueness_scan)
from .problems_io import (ProblemDefinition, ResultBundle, builtin_names,
                          export_csv, load_bundle, load_problem, make_bundle,
                          save_bundle)

__all__ = [
    "__version__",
    # errors
    "BsbError", "EvalDomainError", "ExprError", "NoConvergence", "ParseError",
    "SGLCViolated", "SingularJacobian", "StepFailure", "StructureBroken",
    "ValidationError",
    # geometry
    "CotangentPoint", "DEFAULT_SGLC_TOL", "LiftedHamiltonian",
    "ParametricAffineSystem", "SingularHamiltonian", "VectorField",
    "lie_bracket", "poisson", "symplectic_form",
    # flows
    "FlowSegment", "IntegratorOptions", "integrate", "variational",
    # extremals and certification
    "BsBExtremal", "CertificationReport", "CertifyOptions",
    "DEFAULT_CERTIFY_OPTIONS", "ExtremalStructure", "assemble", "certify",
    "integrate_arcs",
    # second variation
    "FlowVerdict", "LagrangianFrame", "QpVerdict", "RankResult",
    "SecondVariationOptions", "SingularArcData", "build_singular_arc_data",
    "coercivity_hamiltonian", "coercivity_qp", "controllability_rank",
    # shooting and continuation
    "ContinuationRecord", "DEFAULT_SOLVER_OPTIONS", "ShootingResidual",
    "SolverOptions", "continue_path", "jacobian", "newton_solve", "residual",
    "uniqueness_scan",
    # problems and persistence
    "ProblemDefinition", "ResultBundle", "builtin_names", "export_csv",
    "load_bundle", "load_problem", "make_bundle", "save_bundle",
]
