"""Reproducible random streams for parallel Monte Carlo runs.

Every random draw of a campaign comes from a stream identified by the triple
``(run, step, role)`` under a 64-bit master seed. The derivation is::

    ss  = numpy.random.SeedSequence(entropy=master_seed,
                                    spawn_key=(run, step, ROLES[role]))
    key = ss.generate_state(2, dtype=numpy.uint64)
    rng = numpy.random.Generator(numpy.random.Philox(key=key))

Philox is counter-based, and ``SeedSequence`` hashing is specified
independently of platform, so the same triple gives the same draws on any
machine and in any worker process, whatever the scheduling order.
"""

from __future__ import annotations

import numpy as np

__all__ = ["ROLES", "derive_stream", "sample_routing", "routing_draws"]

ROLES = {
    "initial": 0,
    "activation": 1,
    "routing": 2,
    "interaction": 3,
    "exogenous": 4,
}

_MASK64 = (1 << 64) - 1


def derive_stream(master_seed: int, run: int, step: int, role: str) -> np.random.Generator:
    """Generator for the ``(run, step, role)`` stream of a campaign."""
    if role not in ROLES:
        raise ValueError(f"unknown stream role {role!r}; expected one of {sorted(ROLES)}")
    if run < 0 or step < 0:
        raise ValueError("run and step must be non-negative")
    ss = np.random.SeedSequence(entropy=int(master_seed) & _MASK64, spawn_key=(int(run), int(step), ROLES[role]))
    key = ss.generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_routing(M: int, m: int, stream: np.random.Generator) -> int:
    """Replica index uniform on ``{0, ..., M-1}`` minus ``{m}`` (0-based)."""
    if M < 2:
        raise ValueError(f"routing needs at least 2 replicas, got M={M}")
    if not 0 <= m < M:
        raise ValueError(f"replica index {m} outside 0..{M - 1}")
    d = int(stream.integers(0, M - 1))
    return d + (d >= m)


def routing_draws(stream: np.random.Generator, M: int, shape: tuple[int, ...]) -> np.ndarray:
    """Routing indices of shape ``(M, *shape)``; entry ``[m, ...]`` avoids ``m``.

    Uses the same draw-then-shift rule as :func:`sample_routing`.
    """
    if M < 2:
        raise ValueError(f"routing needs at least 2 replicas, got M={M}")
    d = stream.integers(0, M - 1, size=(M,) + tuple(shape))
    src = np.arange(M).reshape((M,) + (1,) * len(shape))
    return d + (d >= src)
