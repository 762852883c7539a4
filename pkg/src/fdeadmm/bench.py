"""Timing and memory probes for the two O(N log N) kernels."""

from __future__ import annotations

import timeit
import tracemalloc

import numpy as np

from .admm import AdmmConfig, setup
from .circulant import precond_solve
from .problem import ProblemSpec
from .structured import apply_B

__all__ = ["time_kernels", "peak_memory"]


def _best_time(fn, repeats: int) -> float:
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeats, number)) / number


def time_kernels(n: int, repeats: int = 7, seed: int = 0) -> dict:
    """Per-call wall time of ``apply_B`` and ``precond_solve``, best of ``repeats`` timeit batches."""
    prob = setup(ProblemSpec(n=n), AdmmConfig())
    x = np.random.default_rng(seed).standard_normal(prob.N)
    apply_B(prob.op, x)  # warm FFT plan caches
    precond_solve(prob.pc, x)
    return {
        "n": n,
        "N": prob.N,
        "apply_B_seconds": _best_time(lambda: apply_B(prob.op, x), repeats),
        "precond_seconds": _best_time(lambda: precond_solve(prob.pc, x), repeats),
    }


def peak_memory(n: int, seed: int = 0) -> int:
    """Peak bytes allocated while building the operators and applying both kernels."""
    tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        prob = setup(ProblemSpec(n=n), AdmmConfig())
        x = np.random.default_rng(seed).standard_normal(prob.N)
        apply_B(prob.op, x)
        apply_B(prob.op, x, adjoint=True)
        precond_solve(prob.pc, x)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return peak
