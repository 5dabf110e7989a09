"""Model variants built on the base dynamics.

* :class:`RandomizedInteraction`: deliveries ``h_ij(x_j, V)`` that also depend
  on a fresh uniform ``V`` per (step, source, destination).
* :class:`ExogenousIO`: external inputs ``B_i`` added to the next state and
  external outputs ``D_i = h_o,i(x_i) 1{activated}`` reported alongside.
* :class:`SpecSchedule`: a time-dependent model, one spec per step.
* :class:`PartitionSpec`: the vector-state replica dynamics, where each set
  of a node partition evolves as a block and routes its outputs to other
  sets as whole vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .network import NetworkState, StepOutcome
from .replica import ReplicaSystemState
from .spec import BinnedTable, FiapSpec, IntMap, SpecError, spec_from_dict, validate_spec
from .streams import routing_draws

__all__ = [
    "RandomizedInteraction",
    "step_with_random_interactions",
    "step_replica_with_random_interactions",
    "ExogenousIO",
    "ExogenousOutcome",
    "step_with_exogenous",
    "SpecSchedule",
    "make_inhomogeneous",
    "PartitionSpec",
    "VectorStepOutcome",
    "step_vector_partition_rmf",
    "load_extensions",
]


# ---------------------------------------------------------------------------
# Random interactions


@dataclass(frozen=True)
class RandomizedInteraction:
    """Per-pair tables ``h[i][j]: (state of j, V) -> units delivered to i``.

    ``h[i][i]`` is ``None``. Every table value must be a non-negative integer
    not above ``bound``.
    """

    h: tuple[tuple[BinnedTable | None, ...], ...]
    bound: float

    def __post_init__(self) -> None:
        K = len(self.h)
        for i, row in enumerate(self.h):
            if len(row) != K:
                raise SpecError("randomized interaction table must be K x K")
            for j, table in enumerate(row):
                if i == j:
                    if table is not None:
                        raise SpecError("a node does not deliver to itself")
                    continue
                values = np.asarray(table.values, dtype=float)
                if (values < 0).any() or (values != np.round(values)).any():
                    raise SpecError(f"h[{i}][{j}] must take non-negative integer values")
                if values.max() > self.bound:
                    raise SpecError(f"h[{i}][{j}] reaches {values.max():g}, above the bound {self.bound:g}")

    @property
    def K(self) -> int:
        return len(self.h)

    @classmethod
    def from_routing_matrix(cls, p) -> RandomizedInteraction:
        """``h_ij(k, v) = 1{v < p[j, i]}``: one unit sent from ``j`` to ``i`` with probability ``p[j, i]``."""
        p = np.asarray(p, dtype=float)
        K = p.shape[0]
        if p.shape != (K, K) or (p < 0).any() or (p > 1).any():
            raise SpecError("routing matrix must be K x K with entries in [0, 1]")
        h = []
        for i in range(K):
            row = []
            for j in range(K):
                if i == j:
                    row.append(None)
                elif 0.0 < p[j, i] < 1.0:
                    row.append(BinnedTable((0.0, p[j, i]), ((1, 0),)))
                else:
                    row.append(BinnedTable.constant_in_v((int(p[j, i] >= 1.0),)))
            h.append(tuple(row))
        return cls(tuple(h), 1.0)

    @classmethod
    def from_spec(cls, spec: FiapSpec, states: int | None = None) -> RandomizedInteraction:
        """Embed the deterministic maps of ``spec`` as tables constant in ``v``."""
        h = []
        for i in range(spec.K):
            row = []
            for j in range(spec.K):
                if i == j:
                    row.append(None)
                    continue
                m = spec.h[i][j]
                n = states or _rows_needed(m)
                row.append(BinnedTable.constant_in_v(tuple(int(v) for v in m.apply(np.arange(n)))))
            h.append(tuple(row))
        return cls(tuple(h), float(spec.h_max))

    def emissions(self, x: np.ndarray, activated: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Units sent, shape ``(..., K_src, K_dst)``; ``v`` has the same shape."""
        K = self.K
        out = np.zeros(np.shape(v), dtype=np.int64)
        for i in range(K):
            for j in range(K):
                if i != j:
                    out[..., j, i] = self.h[i][j].apply(x[..., j], v[..., j, i])
        return out * activated[..., :, None]


def _rows_needed(m: IntMap) -> int:
    if m.kind in ("zero", "const"):
        return 1
    if m.kind == "min":
        return m.param + 1
    if m.kind == "table":
        return len(m.param)
    raise SpecError(f"map {m.kind!r} is unbounded and cannot be tabulated")


def step_with_random_interactions(
    spec: FiapSpec,
    interaction: RandomizedInteraction,
    state: NetworkState,
    streams: Mapping[str, np.random.Generator] | None = None,
    *,
    u: np.ndarray | None = None,
    v: np.ndarray | None = None,
) -> StepOutcome:
    """Like :func:`fiap.network.step_network` with ``h_ij(x_j)`` replaced by ``h_ij(x_j, V_ji)``.

    ``u`` (length ``K``) comes from ``streams["activation"]`` and ``v``
    (``K_src x K_dst``) from ``streams["interaction"]`` unless given.
    """
    K = spec.K
    if interaction.K != K:
        raise ValueError("interaction table and spec disagree on K")
    x = state.x
    if u is None:
        u = streams["activation"].random(K)
    if v is None:
        v = streams["interaction"].random((K, K))
    activated = np.asarray(u) < spec.activation_probs(x)
    endogenous = spec.fragment(x, activated)
    arrivals = interaction.emissions(x, activated, np.asarray(v)).sum(axis=0)
    return StepOutcome(NetworkState(endogenous + arrivals, state.step + 1), activated, endogenous, arrivals)


def step_replica_with_random_interactions(
    spec: FiapSpec,
    interaction: RandomizedInteraction,
    state: ReplicaSystemState,
    streams: Mapping[str, np.random.Generator],
) -> tuple[ReplicaSystemState, np.ndarray]:
    """Replica step with randomized deliveries; returns the next state and the arrivals."""
    x = state.x
    M, K = x.shape
    u = streams["activation"].random((M, K))
    routing = routing_draws(streams["routing"], M, (K, K))
    v = streams["interaction"].random((M, K, K))
    activated = u < spec.activation_probs(x)
    emitted = interaction.emissions(x, activated, v)
    dest = routing * K + np.arange(K)
    arrivals = np.bincount(dest.ravel(), weights=emitted.ravel(), minlength=M * K).astype(np.int64).reshape(M, K)
    return ReplicaSystemState(spec.fragment(x, activated) + arrivals, state.step + 1), arrivals


# ---------------------------------------------------------------------------
# Exogenous input and output


@dataclass(frozen=True)
class ExogenousIO:
    """External inputs and outputs per node.

    Parameters
    ----------
    inputs : sequence
        One entry per node: a float is a Poisson rate, a sequence is a PMF on
        ``0, 1, ...``, ``None`` means no input.
    outputs : sequence of IntMap
        ``h_o,i``; node ``i`` emits ``h_o,i(x_i)`` externally when it activates.
    """

    inputs: tuple[Any, ...]
    outputs: tuple[IntMap, ...]

    def __post_init__(self) -> None:
        if len(self.inputs) != len(self.outputs):
            raise SpecError("inputs and outputs must both list every node")
        inputs = []
        for law in self.inputs:
            if law is None or np.ndim(law) == 0:
                rate = 0.0 if law is None else float(law)
                if rate < 0:
                    raise SpecError("Poisson input rates must be non-negative")
                inputs.append(rate)
            else:
                pmf = tuple(float(p) for p in law)
                if min(pmf) < 0 or abs(sum(pmf) - 1.0) > 1e-9:
                    raise SpecError("input PMF must be a probability vector")
                inputs.append(pmf)
        object.__setattr__(self, "inputs", tuple(inputs))
        object.__setattr__(self, "outputs", tuple(IntMap.from_json(m) for m in self.outputs))

    @classmethod
    def poisson(cls, rates: Sequence[float], outputs: Sequence[Any] | None = None) -> ExogenousIO:
        outputs = outputs if outputs is not None else ["zero"] * len(rates)
        return cls(tuple(float(r) for r in rates), tuple(outputs))

    @property
    def K(self) -> int:
        return len(self.inputs)

    def sample_inputs(self, stream: np.random.Generator, replicas: int | None = None) -> np.ndarray:
        """Inputs for every node (and replica, when ``replicas`` is given)."""
        n = 1 if replicas is None else replicas
        out = np.zeros((n, self.K), dtype=np.int64)
        for i, law in enumerate(self.inputs):
            if isinstance(law, float):
                out[:, i] = stream.poisson(law, n)
            else:
                cdf = np.cumsum(law)
                cdf[-1] = 1.0
                out[:, i] = np.searchsorted(cdf, stream.random(n), side="right")
        return out[0] if replicas is None else out

    def outputs_of(self, x: np.ndarray, activated: np.ndarray) -> np.ndarray:
        d = np.stack([self.outputs[i].apply(x[..., i]) for i in range(self.K)], axis=-1)
        return d * activated


@dataclass(frozen=True)
class ExogenousOutcome:
    outcome: StepOutcome
    inputs: np.ndarray
    outputs: np.ndarray


def step_with_exogenous(
    spec: FiapSpec,
    io: ExogenousIO,
    state: NetworkState,
    streams: Mapping[str, np.random.Generator] | None = None,
    *,
    u: np.ndarray | None = None,
    inputs: np.ndarray | None = None,
) -> ExogenousOutcome:
    """One step with external inputs added and external outputs recorded.

    The next state is ``endogenous + arrivals + B``. ``D`` is reported and
    never fed back. ``B`` comes from ``streams["exogenous"]`` unless given.
    """
    K = spec.K
    if io.K != K:
        raise ValueError("exogenous sections and spec disagree on K")
    x = state.x
    if u is None:
        u = streams["activation"].random(K)
    if inputs is None:
        inputs = io.sample_inputs(streams["exogenous"])
    inputs = np.asarray(inputs, dtype=np.int64)
    activated = np.asarray(u) < spec.activation_probs(x)
    endogenous = spec.fragment(x, activated)
    arrivals = spec.emissions(x, activated).sum(axis=0)
    outcome = StepOutcome(NetworkState(endogenous + arrivals + inputs, state.step + 1), activated, endogenous, arrivals)
    return ExogenousOutcome(outcome, inputs, io.outputs_of(x, activated))


# ---------------------------------------------------------------------------
# Time-dependent models


@dataclass(frozen=True)
class SpecSchedule:
    """``specs[t]`` drives the transition out of step ``t``.

    Steps past the end of the list keep using the last spec.
    """

    specs: tuple[FiapSpec, ...]

    def __post_init__(self) -> None:
        specs = tuple(self.specs)
        if not specs:
            raise SpecError("a schedule needs at least one spec")
        Ks = {s.K for s in specs}
        if len(Ks) != 1:
            raise SpecError(f"every spec in a schedule must share K, got {sorted(Ks)}")
        object.__setattr__(self, "specs", specs)

    @property
    def K(self) -> int:
        return self.specs[0].K

    def at(self, t: int) -> FiapSpec:
        return self.specs[min(t, len(self.specs) - 1)]


def make_inhomogeneous(specs: Sequence[FiapSpec]) -> SpecSchedule:
    """Schedule usable wherever a spec is accepted by the simulators."""
    for s in specs:
        validate_spec(s)
    return SpecSchedule(tuple(specs))


# ---------------------------------------------------------------------------
# Vector-state partitions


@dataclass(frozen=True)
class PartitionSpec:
    """A partition of the nodes of ``base`` into blocks.

    ``max_set_size`` and ``max_support`` cap joint-PMF enumeration in the
    analytic PGF. ``pairs=True`` asserts the pair layout (every block has two
    nodes).
    """

    sets: tuple[tuple[int, ...], ...]
    base: FiapSpec
    max_set_size: int = 3
    max_support: int = 8
    pairs: bool = False

    def __post_init__(self) -> None:
        sets = tuple(tuple(int(i) for i in s) for s in self.sets)
        flat = [i for s in sets for i in s]
        if any(not s for s in sets) or sorted(flat) != list(range(self.base.K)):
            raise SpecError(f"partition must split nodes 0..{self.base.K - 1} into disjoint non-empty sets")
        if self.pairs and (self.base.K % 2 or any(len(s) != 2 for s in sets)):
            raise SpecError("the pair layout needs an even K and blocks of size 2")
        object.__setattr__(self, "sets", sets)

    @property
    def block_of(self) -> np.ndarray:
        out = np.empty(self.base.K, dtype=np.int64)
        for p, s in enumerate(self.sets):
            out[list(s)] = p
        return out

    @classmethod
    def singletons(cls, base: FiapSpec) -> PartitionSpec:
        return cls(tuple((i,) for i in range(base.K)), base)

    @classmethod
    def consecutive_pairs(cls, base: FiapSpec) -> PartitionSpec:
        return cls(tuple((i, i + 1) for i in range(0, base.K, 2)), base, pairs=True)


@dataclass(frozen=True)
class VectorStepOutcome:
    """``routed_to[m, q, p]``: replica receiving block ``q``'s output vector for block ``p`` (-1 on the diagonal)."""

    next_state: ReplicaSystemState
    activated: np.ndarray
    endogenous: np.ndarray
    exogenous: np.ndarray
    routed_to: np.ndarray


def step_vector_partition_rmf(
    pspec: PartitionSpec,
    state: ReplicaSystemState,
    streams: Mapping[str, np.random.Generator] | None = None,
    *,
    u: np.ndarray | None = None,
    routing: np.ndarray | None = None,
    pair_output_lead_map: bool = False,
) -> VectorStepOutcome:
    """One step of the vector-state replica dynamics.

    Inside each block the base dynamics run locally. For each source block
    ``q`` and destination block ``p != q``, the vector of units block ``q``
    sends to the members of ``p`` goes, as a whole, to one replica drawn
    uniformly among the others, independently across ``(m, q, p)``.

    Draws: ``M x K`` activation uniforms and an ``M x l x l`` routing block,
    in that order of streams. With singleton blocks this consumes the
    streams exactly like :func:`fiap.replica.step_replica_system`.

    ``pair_output_lead_map`` uses the first member's map ``h_k,i`` for both
    members of a source block instead of each member's own map.
    """
    spec = pspec.base
    x = state.x
    M, K = x.shape
    if K != spec.K:
        raise ValueError(f"state has {K} nodes, spec has {spec.K}")
    n_blocks = len(pspec.sets)
    if u is None:
        u = streams["activation"].random((M, K))
    if routing is None:
        routing = routing_draws(streams["routing"], M, (n_blocks, n_blocks))
    u = np.asarray(u, dtype=float)
    routing = np.asarray(routing, dtype=np.int64)

    activated = u < spec.activation_probs(x)
    fragment = spec.fragment(x, activated)
    emitted = spec.emissions(x, activated)  # (M, K_src j, K_dst k)
    if pair_output_lead_map:
        emitted = emitted.copy()
        for s in pspec.sets:
            lead = s[0]
            for j in s[1:]:
                as_lead = np.stack([spec.h[k][lead].apply(x[:, j]) if k != lead else np.zeros(M, np.int64)
                                    for k in range(K)], axis=-1)
                outside = np.ones(K, dtype=bool)
                outside[list(s)] = False
                emitted[:, j, outside] = (as_lead * activated[:, j, None])[:, outside]

    block = pspec.block_of
    same = block[:, None] == block[None, :]
    local = np.where(same, emitted, 0).sum(axis=1)
    endogenous = fragment + local

    # flat index of the (replica, node) receiving each cross-block delivery
    dest_replica = routing[:, block[:, None], block[None, :]]  # (M, j, k)
    dest = dest_replica * K + np.arange(K)
    cross = np.where(same, 0, emitted)
    exogenous = np.bincount(dest.ravel(), weights=cross.ravel(), minlength=M * K).astype(np.int64).reshape(M, K)

    routed_to = np.where(np.eye(n_blocks, dtype=bool), -1, routing)
    return VectorStepOutcome(
        ReplicaSystemState(endogenous + exogenous, state.step + 1), activated, endogenous, exogenous, routed_to
    )


# ---------------------------------------------------------------------------
# Optional model-file sections


def load_extensions(doc: Mapping[str, Any], spec: FiapSpec | None = None) -> dict[str, Any]:
    """Read the optional sections of a model document.

    Recognized keys: ``schedule`` (list of spec documents), ``exogenous``
    (``{"inputs": [...], "outputs": [...]}``), ``random_interaction``
    (``{"routing_matrix": [[...]]}``) and ``partition`` (list of node lists,
    optional ``pairs``). Missing sections are absent from the result.
    """
    out: dict[str, Any] = {}
    if spec is None and "spec" in doc:
        spec = spec_from_dict(doc["spec"])
    if "schedule" in doc:
        out["schedule"] = make_inhomogeneous([spec_from_dict(s) for s in doc["schedule"]])
    if "exogenous" in doc:
        sec = doc["exogenous"]
        K = len(sec["inputs"])
        out["exogenous"] = ExogenousIO(tuple(sec["inputs"]), tuple(sec.get("outputs", ["zero"] * K)))
    if "random_interaction" in doc:
        sec = doc["random_interaction"]
        if "routing_matrix" not in sec:
            raise SpecError("random_interaction needs a routing_matrix")
        out["random_interaction"] = RandomizedInteraction.from_routing_matrix(sec["routing_matrix"])
    if "partition" in doc:
        if spec is None:
            raise SpecError("a partition section needs a base spec")
        sec = doc["partition"]
        sets = sec["sets"] if isinstance(sec, Mapping) else sec
        opts = dict(sec) if isinstance(sec, Mapping) else {}
        out["partition"] = PartitionSpec(
            tuple(tuple(s) for s in sets),
            spec,
            max_set_size=opts.get("max_set_size", 3),
            max_support=opts.get("max_support", 8),
            pairs=opts.get("pairs", False),
        )
    for key, value in out.items():
        K = value.K if hasattr(value, "K") else value.base.K
        if spec is not None and K != spec.K:
            raise SpecError(f"section {key!r} has K={K}, base spec has K={spec.K}")
    return out
