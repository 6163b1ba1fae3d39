"""Coupling constructions for boundary chains and continuous processes."""

from .base import (
    AttemptRecord,
    CouplingOutcome,
    LowerBoundProfile,
    ProductWindow,
    Window,
    gamma_couple,
    success_mass,
)
from .chains import couple_chains
from .chains_batch import BatchChainResult, couple_chains_batch
from .process_disc import (
    BatchCouplingResult,
    couple_process_disc,
    couple_process_disc_batch,
)
from .process_convex import couple_process_convex

__all__ = [
    "AttemptRecord",
    "BatchChainResult",
    "BatchCouplingResult",
    "CouplingOutcome",
    "LowerBoundProfile",
    "ProductWindow",
    "Window",
    "couple_chains",
    "couple_chains_batch",
    "couple_process_convex",
    "couple_process_disc",
    "couple_process_disc_batch",
    "gamma_couple",
    "success_mass",
]
