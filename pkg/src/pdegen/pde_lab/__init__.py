"""Parametric PDE data: parameter draws, initial conditions, solvers, datasets."""
from .dataset import (SimConfig, TrajectoryDataset, build_dataset, default_sim, generate_dataset,
                      read_container, subsample_grid, subsample_indices, write_container)
from .initial import (InitialConditionSpec, energy_spectrum, gaussian_sum, grid_1d, grid_2d,
                      sample_initial_condition, spectral_vorticity, trig_sum, vorticity_amplitude)
from .params import RANGES, REGIMES, SYSTEMS, PdeParams, sample_params
from .solvers import StabilityError, solve, wave_energy

__all__ = [
    "SimConfig", "TrajectoryDataset", "build_dataset", "default_sim", "generate_dataset",
    "read_container", "subsample_grid", "subsample_indices", "write_container",
    "InitialConditionSpec", "energy_spectrum", "gaussian_sum", "grid_1d", "grid_2d",
    "sample_initial_condition", "spectral_vorticity", "trig_sum", "vorticity_amplitude",
    "RANGES", "REGIMES", "SYSTEMS", "PdeParams", "sample_params",
    "StabilityError", "solve", "wave_energy",
]
