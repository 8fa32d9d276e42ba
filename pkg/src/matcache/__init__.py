"""Trace-driven cache simulation with a learned eviction filter at the tail
of a heuristic queue, plus the MIN oracle and a sampling baseline."""

__version__ = "0.1.0"

from .cache import Cache, CacheConfig, HeuristicEngine, SimReport, simulate
from .heuristics import FIFO, LFUDA, LRU, LRUK, TwoQ, make_policy
from .mat import MatConfig, MatEngine
from .oracle import BeladyEngine, SampledEngine, SamplerConfig, build_next_access
from .trace import Request, SyntheticSpec, generate_zipf, parse_trace

__all__ = [
    "Cache", "CacheConfig", "HeuristicEngine", "SimReport", "simulate",
    "FIFO", "LFUDA", "LRU", "LRUK", "TwoQ", "make_policy",
    "MatConfig", "MatEngine",
    "BeladyEngine", "SampledEngine", "SamplerConfig", "build_next_access",
    "Request", "SyntheticSpec", "generate_zipf", "parse_trace",
]
