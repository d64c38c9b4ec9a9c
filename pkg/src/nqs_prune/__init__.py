"""Variational Monte Carlo for neural quantum states with iterative
magnitude pruning, lottery-ticket training, and exact desk-scale oracles."""

from .ansatz import FeedForward, MaskedAnsatz, ShallowConv, init_parameters
from .hamiltonian import ToricCode, TransverseFieldIsing, local_energies, local_energy
from .lattice import SquareLattice, ToricLattice, bonds, flip, toric_cells
from .observables import MetricsRecord, energy_stats, fidelity, magnetization_x, magnetization_z, relative_error
from .pruning import PruneSchedule, PruningTrajectory, make_ticket, run_iterative_pruning, select_prune_set, train_ticket
from .runconfig import ExperimentConfig, PRESETS, load_config, parse_config_text, preset_config
from .sampler import SampleBatch, SamplerConfig, metropolis_step, propose, sample_batch
from .sr import EstimatorSet, SRConfig, estimate_gradient, s_matvec, sr_update, train

__all__ = [
    "EstimatorSet",
    "ExperimentConfig",
    "FeedForward",
    "MaskedAnsatz",
    "MetricsRecord",
    "PRESETS",
    "PruneSchedule",
    "PruningTrajectory",
    "SRConfig",
    "SampleBatch",
    "SamplerConfig",
    "ShallowConv",
    "SquareLattice",
    "ToricCode",
    "ToricLattice",
    "TransverseFieldIsing",
    "bonds",
    "energy_stats",
    "estimate_gradient",
    "fidelity",
    "flip",
    "init_parameters",
    "load_config",
    "local_energies",
    "local_energy",
    "magnetization_x",
    "magnetization_z",
    "make_ticket",
    "metropolis_step",
    "parse_config_text",
    "preset_config",
    "propose",
    "relative_error",
    "run_iterative_pruning",
    "s_matvec",
    "sample_batch",
    "select_prune_set",
    "sr_update",
    "toric_cells",
    "train",
    "train_ticket",
]

__version__ = "0.1.0"
