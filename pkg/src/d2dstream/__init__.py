"""Cooperative D2D video streaming: greedy scheduling, mean-field values,
pivot transfers, coding and simulation."""

from .model import (
    AgentState,
    DeficitGrid,
    GridError,
    MeanField,
    RandomStream,
    SystemParams,
    build_deficit_grid,
    chi_indicator,
    deficit_update,
    point_mass,
    uniform_counts,
    uniform_on,
)
from .allocation import (
    AllocationResult,
    CostFunction,
    brute_force_allocate,
    bystander_allocate,
    exclusion_allocate,
    greedy_allocate,
    partition_agents,
    stage_cost,
)

__version__ = "0.1.0"
