"""Modified stationary measures of Langevin discretizations.

Submodules: ``polycore`` (exact polynomials and Hermite expansions),
``opalg`` (differential operators and the step-size expansion),
``measures`` (Gibbs and modified measures), ``langevin_sim`` (replica SGLD
simulation), ``learnlab`` (losses, data, generalization and stability),
``ode_bea`` (the deterministic Euler analogue) and ``cli``.
"""
from .polycore import Polynomial, format_polynomial, parse_polynomial
from .opalg import DiffOperator, MinibatchSpec, generator, adjoint, one_step_expansion, lj_from_aj
from .measures import GibbsMeasure, ModifiedMeasure, modified_measure, measure_integrate, density, ou_measure

__version__ = "0.1.0"
