"""The M-replica mean-field dynamics and Monte Carlo campaigns over them.

Replica and node indices are 0-based throughout. An activation of node ``j``
in replica ``m`` sends ``h_ij(x[m, j])`` units to node ``i`` of replica
``routed_to[m, j, i]``, drawn uniformly among the other replicas and
independently for every destination node ``i``.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .network import spec_at
from .spec import FiapSpec, SpecError, spec_from_dict, spec_to_dict
from .streams import derive_stream, routing_draws

__all__ = [
    "ReplicaSystemState",
    "ArrivalTensor",
    "step_replica_system",
    "RunConfig",
    "Archive",
    "ArchiveError",
    "SimulationError",
    "run_monte_carlo",
    "sample_initial_states",
    "KINDS",
]

KINDS = ("state", "arrival", "activation", "endogenous", "uniform")


class SimulationError(RuntimeError):
    """A campaign failed; the message carries the run and step."""


class ArchiveError(OSError):
    """Reading or writing an archive failed."""


@dataclass(frozen=True)
class ReplicaSystemState:
    x: np.ndarray
    step: int = 0

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.int64)
        if x.ndim != 2:
            raise ValueError("replica state must be an M x K matrix")
        if x.shape[0] < 2:
            raise ValueError(f"need at least 2 replicas, got M={x.shape[0]}")
        if (x < 0).any():
            raise ValueError("replica state entries must be non-negative")
        object.__setattr__(self, "x", x)

    @property
    def M(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class ArrivalTensor:
    """Everything one replica step produced.

    ``routed_to[m, j, i]`` is the destination replica of the delivery from
    ``(m, j)`` to node ``i``, or -1 when ``(m, j)`` did not activate or ``i == j``.
    """

    arrivals: np.ndarray
    activated: np.ndarray
    routed_to: np.ndarray
    endogenous: np.ndarray
    uniforms: np.ndarray
    emitted: np.ndarray


def step_replica_system(
    spec: FiapSpec,
    state: ReplicaSystemState,
    streams: Mapping[str, np.random.Generator] | None = None,
    *,
    u: np.ndarray | None = None,
    routing: np.ndarray | None = None,
) -> tuple[ReplicaSystemState, ArrivalTensor]:
    """One step of the replica dynamics.

    Draws come from ``streams["activation"]`` (an ``M x K`` block of uniforms)
    and ``streams["routing"]`` (an ``M x K x K`` block of routing indices,
    drawn whether or not the source activates). Passing ``u`` or ``routing``
    explicitly overrides the corresponding stream.
    """
    x = state.x
    M, K = x.shape
    if K != spec.K:
        raise ValueError(f"state has {K} nodes, spec has {spec.K}")
    if u is None:
        u = streams["activation"].random((M, K))
    u = np.asarray(u, dtype=float)
    if routing is None:
        routing = routing_draws(streams["routing"], M, (K, K))
    routing = np.asarray(routing, dtype=np.int64)
    if u.shape != (M, K) or routing.shape != (M, K, K):
        raise ValueError("uniforms must be M x K and routing M x K x K")

    activated = u < spec.activation_probs(x)
    endogenous = spec.fragment(x, activated)
    emitted = spec.emissions(x, activated)

    dest = routing * K + np.arange(K)  # flat (replica, node) index of each delivery
    arrivals = np.bincount(dest.ravel(), weights=emitted.ravel(), minlength=M * K)
    arrivals = arrivals.astype(np.int64).reshape(M, K)

    routed_to = np.where(activated[:, :, None] & ~np.eye(K, dtype=bool), routing, -1)
    nxt = ReplicaSystemState(endogenous + arrivals, state.step + 1)
    return nxt, ArrivalTensor(arrivals, activated, routed_to, endogenous, u, emitted)


def _as_pmf_rows(law: Any, K: int) -> np.ndarray:
    rows = [law] * K if np.ndim(law[0]) == 0 else list(law)
    if len(rows) != K:
        raise ValueError(f"initial law lists {len(rows)} nodes, expected {K}")
    width = max(len(r) for r in rows)
    out = np.zeros((K, width))
    for i, r in enumerate(rows):
        r = np.asarray(r, dtype=float)
        if (r < 0).any() or abs(r.sum() - 1.0) > 1e-9:
            raise ValueError(f"initial law of node {i} is not a probability vector")
        out[i, : len(r)] = r
    return out


@dataclass
class RunConfig:
    """A Monte Carlo campaign.

    Parameters
    ----------
    spec : FiapSpec or schedule
        Model (a schedule from :func:`fiap.extensions.make_inhomogeneous` makes
        it time-dependent).
    M : int
        Number of replicas.
    horizon : int
        Steps per run.
    runs : int
        Independent runs ``R``.
    initial_law : sequence
        One PMF on ``{0..S0}`` for every node, or a list of ``K`` PMFs. States
        are drawn i.i.d. across replicas.
    initial_state : sequence of int, optional
        Deterministic state copied to every replica (replaces ``initial_law``).
    master_seed : int
    record : sequence of (replica, node)
        Coordinates recorded at every step.
    record_nodes : sequence of int
        Nodes whose whole replica column is recorded.
    kinds : sequence of str
        Observables to keep, a subset of :data:`KINDS`.
    init_mode : {"iid", "constant-replica"}
        ``constant-replica`` copies replica 0's sampled state to all replicas
        (a deliberately non-chaotic initial condition).
    """

    spec: Any
    M: int
    horizon: int = 1
    runs: int = 1
    initial_law: Any = None
    initial_state: Sequence[int] | None = None
    master_seed: int = 0
    record: Sequence[tuple[int, int]] = ((0, 0),)
    record_nodes: Sequence[int] = ()
    kinds: Sequence[str] = ("state", "arrival", "activation")
    init_mode: str = "iid"
    _pmf_rows: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        sp = spec_at(self.spec, 0)
        K = sp.K
        if self.M < 2:
            raise ValueError(f"need at least 2 replicas, got M={self.M}")
        if self.horizon < 1 or self.runs < 1:
            raise ValueError("horizon and runs must be at least 1")
        if (self.initial_law is None) == (self.initial_state is None):
            raise ValueError("give exactly one of initial_law and initial_state")
        if self.initial_law is not None:
            self._pmf_rows = _as_pmf_rows(self.initial_law, K)
        elif len(self.initial_state) != K or min(self.initial_state) < 0:
            raise ValueError(f"initial_state must be {K} non-negative integers")
        if self.init_mode not in ("iid", "constant-replica"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        self.record = tuple((int(n), int(i)) for n, i in self.record)
        for n, i in self.record:
            if not (0 <= n < self.M and 0 <= i < K):
                raise ValueError(f"recorded coordinate {(n, i)} outside {self.M}x{K}")
        self.record_nodes = tuple(int(i) for i in self.record_nodes)
        if any(not 0 <= i < K for i in self.record_nodes):
            raise ValueError("record_nodes outside 0..K-1")
        unknown = set(self.kinds) - set(KINDS)
        if unknown:
            raise ValueError(f"unknown observable kinds {sorted(unknown)}")
        self.kinds = tuple(k for k in KINDS if k in self.kinds)

    @property
    def coords(self) -> np.ndarray:
        full = [(n, i) for i in self.record_nodes for n in range(self.M)]
        return np.asarray(list(self.record) + full, dtype=np.int64).reshape(-1, 2)

    def to_dict(self) -> dict[str, Any]:
        if isinstance(self.spec, FiapSpec):
            spec_doc: Any = spec_to_dict(self.spec)
        else:
            spec_doc = {"schedule": [spec_to_dict(s) for s in self.spec.specs]}
        return {
            "spec": spec_doc,
            "M": self.M,
            "horizon": self.horizon,
            "runs": self.runs,
            "initial_law": None if self.initial_law is None else np.asarray(self._pmf_rows).tolist(),
            "initial_state": None if self.initial_state is None else list(map(int, self.initial_state)),
            "master_seed": int(self.master_seed),
            "record": [list(c) for c in self.record],
            "record_nodes": list(self.record_nodes),
            "kinds": list(self.kinds),
            "init_mode": self.init_mode,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> RunConfig:
        spec_doc = doc["spec"]
        if "schedule" in spec_doc:
            from .extensions import make_inhomogeneous

            spec: Any = make_inhomogeneous([spec_from_dict(s) for s in spec_doc["schedule"]])
        else:
            spec = spec_from_dict(spec_doc)
        kwargs = {k: doc[k] for k in ("M", "horizon", "runs", "initial_law", "initial_state",
                                      "master_seed", "record", "record_nodes", "kinds", "init_mode") if k in doc}
        return cls(spec=spec, **kwargs)


def sample_initial_states(config: RunConfig, run: int) -> np.ndarray:
    """Initial ``M x K`` state of ``run`` (uses the ``(run, 0, initial)`` stream)."""
    K = spec_at(config.spec, 0).K
    M = config.M
    if config.initial_state is not None:
        return np.tile(np.asarray(config.initial_state, dtype=np.int64), (M, 1))
    u = derive_stream(config.master_seed, run, 0, "initial").random((M, K))
    cdf = np.cumsum(config._pmf_rows, axis=1)
    cdf[:, -1] = 1.0
    x = np.empty((M, K), dtype=np.int64)
    for i in range(K):
        x[:, i] = np.searchsorted(cdf[i], u[:, i], side="right")
    if config.init_mode == "constant-replica":
        x[:] = x[0]
    return x


def _simulate_runs(config: RunConfig, runs: Sequence[int]) -> dict[str, np.ndarray]:
    coords = config.coords
    rows, cols = coords[:, 0], coords[:, 1]
    T = config.horizon
    n = len(runs)
    C = len(coords)
    out: dict[str, np.ndarray] = {}
    for kind in config.kinds:
        steps = T + 1 if kind == "state" else T
        dtype = float if kind == "uniform" else (bool if kind == "activation" else np.int64)
        out[kind] = np.empty((n, steps, C), dtype=dtype)

    for k, r in enumerate(runs):
        t = 0
        try:
            state = ReplicaSystemState(sample_initial_states(config, r), 0)
            if "state" in out:
                out["state"][k, 0] = state.x[rows, cols]
            for t in range(T):
                streams = {
                    "activation": derive_stream(config.master_seed, r, t, "activation"),
                    "routing": derive_stream(config.master_seed, r, t, "routing"),
                }
                state, tensor = step_replica_system(spec_at(config.spec, t), state, streams)
                if "state" in out:
                    out["state"][k, t + 1] = state.x[rows, cols]
                if "arrival" in out:
                    out["arrival"][k, t] = tensor.arrivals[rows, cols]
                if "activation" in out:
                    out["activation"][k, t] = tensor.activated[rows, cols]
                if "endogenous" in out:
                    out["endogenous"][k, t] = tensor.endogenous[rows, cols]
                if "uniform" in out:
                    out["uniform"][k, t] = tensor.uniforms[rows, cols]
        except (ValueError, SpecError, FloatingPointError) as exc:
            raise SimulationError(f"run {r}, step {t}: {exc}") from exc
    return out


@dataclass
class Archive:
    """Recorded observables of a campaign.

    ``data[kind]`` has shape ``(R, steps, C)`` where ``C`` indexes
    :attr:`RunConfig.coords`. ``state`` has ``horizon + 1`` steps (0..T);
    the other kinds have ``horizon`` steps labelled 1..T (the transition that
    ends at that step).
    """

    config: RunConfig
    data: dict[str, np.ndarray]

    def _coord_index(self, replica: int, node: int) -> int:
        coords = self.config.coords
        hit = np.flatnonzero((coords[:, 0] == replica) & (coords[:, 1] == node))
        if hit.size == 0:
            raise KeyError(f"coordinate {(replica, node)} was not recorded")
        return int(hit[0])

    def _step_index(self, kind: str, step: int) -> int:
        if kind == "state":
            if not 0 <= step <= self.config.horizon:
                raise KeyError(f"no state recorded at step {step}")
            return step
        if not 1 <= step <= self.config.horizon:
            raise KeyError(f"no {kind} recorded at step {step}")
        return step - 1

    def values(self, kind: str, replica: int, node: int, step: int) -> np.ndarray:
        """One value per run for a recorded coordinate."""
        if kind not in self.data:
            raise KeyError(f"observable {kind!r} was not recorded")
        return self.data[kind][:, self._step_index(kind, step), self._coord_index(replica, node)]

    def column(self, kind: str, node: int, step: int) -> np.ndarray:
        """``R x M`` values of a node recorded across all replicas."""
        if node not in self.config.record_nodes:
            raise KeyError(f"node {node} was not recorded across replicas")
        if kind not in self.data:
            raise KeyError(f"observable {kind!r} was not recorded")
        coords = self.config.coords
        idx = np.flatnonzero(coords[:, 1] == node)
        idx = idx[np.argsort(coords[idx, 0], kind="stable")]
        # record and record_nodes may both list a coordinate; keep one per replica
        _, first = np.unique(coords[idx, 0], return_index=True)
        return self.data[kind][:, self._step_index(kind, step), idx[first]]

    def rows(self):
        """Yield ``(run, step, replica, node, kind, value)`` in canonical order."""
        coords = self.config.coords
        R = self.config.runs
        for r in range(R):
            for kind in self.config.kinds:
                arr = self.data[kind][r]
                first = 0 if kind == "state" else 1
                for s in range(arr.shape[0]):
                    for c, (n, i) in enumerate(coords):
                        v = arr[s, c]
                        if kind == "uniform":
                            value = repr(float(v))
                        else:
                            value = str(int(v))
                        yield r, s + first, int(n), int(i), kind, value

    def write(self, directory: str | Path) -> tuple[Path, Path]:
        """Write ``archive.csv`` and ``manifest.json`` into ``directory``."""
        directory = Path(directory)
        csv_path = directory / "archive.csv"
        manifest_path = directory / "manifest.json"
        try:
            directory.mkdir(parents=True, exist_ok=True)
            with open(csv_path, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(("run", "step", "replica", "node", "kind", "value"))
                count = 0
                for row in self.rows():
                    writer.writerow(row)
                    count += 1
            manifest = {
                "package": "fiap",
                "version": __version__,
                "config": self.config.to_dict(),
                "archive": {"file": csv_path.name, "rows": count,
                            "columns": ["run", "step", "replica", "node", "kind", "value"]},
            }
            manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
        except OSError as exc:
            raise ArchiveError(f"cannot write archive to {directory}: {exc}") from exc
        return csv_path, manifest_path

    @classmethod
    def read(cls, directory: str | Path) -> Archive:
        directory = Path(directory)
        try:
            manifest = json.loads((directory / "manifest.json").read_text())
            config = RunConfig.from_dict(manifest["config"])
            coords = config.coords
            index = {(int(n), int(i)): c for c, (n, i) in enumerate(coords)}
            T = config.horizon
            data: dict[str, np.ndarray] = {}
            for kind in config.kinds:
                steps = T + 1 if kind == "state" else T
                dtype = float if kind == "uniform" else (bool if kind == "activation" else np.int64)
                data[kind] = np.zeros((config.runs, steps, len(coords)), dtype=dtype)
            with open(directory / manifest["archive"]["file"], newline="") as fh:
                reader = csv.reader(fh)
                next(reader)
                for line, (run, step, replica, node, kind, value) in enumerate(reader, start=2):
                    s = int(step) - (0 if kind == "state" else 1)
                    v = float(value) if kind == "uniform" else int(value)
                    data[kind][int(run), s, index[(int(replica), int(node))]] = v
        except (OSError, KeyError, ValueError) as exc:
            raise ArchiveError(f"cannot read archive from {directory}: {exc}") from exc
        return cls(config, data)


def run_monte_carlo(config: RunConfig, workers: int = 1) -> Archive:
    """Simulate ``config.runs`` independent runs and keep the configured observables.

    The archive depends only on ``config``: runs are split into contiguous
    chunks across ``workers`` processes and reassembled in run order.
    """
    runs = list(range(config.runs))
    if workers <= 1 or config.runs < 2:
        return Archive(config, _simulate_runs(config, runs))
    n_chunks = min(config.runs, 4 * workers)
    chunks = [list(c) for c in np.array_split(np.asarray(runs), n_chunks) if len(c)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_simulate_runs, [config] * len(chunks), chunks))
    data = {kind: np.concatenate([p[kind] for p in parts], axis=0) for kind in config.kinds}
    return Archive(config, data)
