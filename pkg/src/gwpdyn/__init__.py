"""Quantum wavepacket dynamics in a linearly dependent moving Gaussian basis."""

from .model import (DOUBLE_WELL, RESCALED, ModelSpec, coherent_in_ho,
                    coherent_overlap, cross_matrices, ho_hamiltonian,
                    tau_matrix, well_minimum)
from .workspace import (WorkingSpace, build_working_space, lift, restrict,
                        transform_operator)
from .varprop import (StiefelStep, assemble_utilde, closest_unitary,
                      truncate_grow, truncate_shrink, var_step)
from .baselines import (exact_step, make_exact_state, reg1_inverse,
                        reg2_inverse, reg_cn_step)
from .trajectories import (GaussianFrame, SamplerConfig, classical_rhs,
                           cn_newton_step, sample_initial_conditions)
from .observables import (ErrorSeries, WavepacketState, expectation,
                          local_error, pair_overlap, time_avg_error)
from .harness import RunConfig, revert, run, sweep, unitarity_run

__all__ = [
    "DOUBLE_WELL", "RESCALED", "ModelSpec", "coherent_in_ho",
    "coherent_overlap", "cross_matrices", "ho_hamiltonian", "tau_matrix",
    "well_minimum", "WorkingSpace", "build_working_space", "lift",
    "restrict", "transform_operator", "StiefelStep", "assemble_utilde",
    "closest_unitary", "truncate_grow", "truncate_shrink", "var_step",
    "exact_step", "make_exact_state", "reg1_inverse", "reg2_inverse",
    "reg_cn_step", "GaussianFrame", "SamplerConfig", "classical_rhs",
    "cn_newton_step", "sample_initial_conditions", "ErrorSeries",
    "WavepacketState", "expectation", "local_error", "pair_overlap",
    "time_avg_error", "RunConfig", "revert", "run", "sweep",
    "unitarity_run",
]
