"""Exact dynamics of a single network."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .spec import FiapSpec
from .streams import derive_stream

__all__ = ["NetworkState", "StepOutcome", "step_network", "simulate_trajectory", "spec_at"]


@dataclass(frozen=True)
class NetworkState:
    x: np.ndarray
    step: int = 0

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.int64)
        if x.ndim != 1:
            raise ValueError("network state must be a vector")
        if (x < 0).any():
            raise ValueError("network state entries must be non-negative")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class StepOutcome:
    """One transition; ``next_state.x == endogenous + arrivals``."""

    next_state: NetworkState
    activated: np.ndarray
    endogenous: np.ndarray
    arrivals: np.ndarray


def spec_at(spec: Any, step: int) -> FiapSpec:
    """The spec in force at ``step`` (plain specs are time-homogeneous)."""
    if isinstance(spec, FiapSpec):
        return spec
    return spec.at(step)


def step_network(spec: FiapSpec, state: NetworkState, u: np.ndarray) -> StepOutcome:
    """Advance one step given the activation uniforms ``u``.

    Node ``i`` activates iff ``u[i] < sigma_i(x[i])``; ties do not activate.
    """
    x = state.x
    u = np.asarray(u, dtype=float)
    if x.shape != (spec.K,) or u.shape != (spec.K,):
        raise ValueError(f"state and uniforms must have length K={spec.K}, got {x.shape} and {u.shape}")
    activated = u < spec.activation_probs(x)
    endogenous = spec.fragment(x, activated)
    arrivals = spec.emissions(x, activated).sum(axis=0)
    return StepOutcome(
        next_state=NetworkState(endogenous + arrivals, state.step + 1),
        activated=activated,
        endogenous=endogenous,
        arrivals=arrivals,
    )


def simulate_trajectory(spec: Any, init: NetworkState, horizon: int, seed: int) -> list[StepOutcome]:
    """Run ``horizon`` steps; step ``t`` uses the ``(0, t, activation)`` stream.

    ``spec`` may be a :class:`FiapSpec` or a schedule with an ``at(t)`` method
    (see :func:`fiap.extensions.make_inhomogeneous`).
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    out = []
    state = init
    for t in range(state.step, state.step + horizon):
        sp = spec_at(spec, t)
        u = derive_stream(seed, 0, t, "activation").random(sp.K)
        outcome = step_network(sp, state, u)
        out.append(outcome)
        state = outcome.next_state
    return out
