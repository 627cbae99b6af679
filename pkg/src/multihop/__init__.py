"""Delay, throughput and traffic-shaping analysis of multihop buffered-Aloha networks."""
from .aloha import (
    AlohaHopModel,
    CapacityExceededError,
    DomainError,
    UnstableQueueError,
    build_hop_model,
    hop_model_from_load,
    perhop_pmf,
    solve_success_probability,
)
from .distributions import HopCountPmf, RateAllocation, distance_stats, parse_distribution
from .pmf import DelayPmf
from .transport import TransportModel, transport_pmf_oracle, transport_stats

__version__ = "0.1.0"

__all__ = [
    "AlohaHopModel", "CapacityExceededError", "DelayPmf", "DomainError", "HopCountPmf",
    "RateAllocation", "TransportModel", "UnstableQueueError", "build_hop_model",
    "distance_stats", "hop_model_from_load", "parse_distribution", "perhop_pmf",
    "solve_success_probability", "transport_pmf_oracle", "transport_stats",
]
