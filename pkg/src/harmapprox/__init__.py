"""Harmonic approximation coefficients and multiscale square functions on
finite metric measure spaces."""

from .mmspace import MetricMeasureSpace, Ball, ball, build_space, from_graph
from .cubes import CubeSystem, build_cube_system, validate_cube_system
from .laplace import energy, harmonic_extension, trace_solution
from .coeffs import coefficients, coeff_H, coeff_H_osc, coeff_H_rcd, coeff_omega
from .carleson import discrete_carleson, continuous_square_function
from .multiscale import replacement_sequence, pythagoras_check, telescoping_report
from .heat import decompose, heat_apply, telescope_check, gradient_bound_report
from .functions import make_function

__version__ = "0.1.0"
