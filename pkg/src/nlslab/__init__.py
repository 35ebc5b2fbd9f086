"""Small nonlinear bound states of i psi_t = (-Delta + V) psi + g(psi): construction,
modulation decomposition, split-step evolution and the stability, wave-operator and
slow-decay experiment suites."""

from .boundstate import (BoundStateFamily, BoundStatePoint, D2Q_of_z, DQ_of_z, E_of_z, H_apply,
                         Q_of_z, build_family, solve_point)
from .evolve import IntegratorConfig, Sponge, Trajectory, evolve, extract_scattering, step
from .grid import CartesianGrid, Field, NormKind, RadialGrid, inner, norm, real_inner
from .linear import GaussianWell, LinearModel, build_model, linear_propagate, project_c, project_d
from .modulation import ModulationState, R_apply, decompose, hc_project, modulation_velocity
from .nonlin import HartreeTerm, NonlinearitySpec, PowerTerm, g_apply, linearize_g

__version__ = "0.1.0"
