"""Model definitions for fragmentation-interaction-aggregation processes.

A model is a :class:`FiapSpec`: ``K`` nodes, each with an activation table
``sigma_i``, two fragmentation maps ``g1_i`` (applied on activation) and
``g2_i`` (applied otherwise), and a bounded interaction map ``h[i][j]`` giving
the number of units delivered to node ``i`` when node ``j`` activates.

Maps on the integers are :class:`IntMap` values. They are either closed-form
builtins or finite tables whose last entry continues indefinitely.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

__all__ = [
    "SpecError",
    "IntMap",
    "ActivationTable",
    "BinnedTable",
    "FiapSpec",
    "validate_spec",
    "builtin_instance",
    "INSTANCE_NAMES",
    "spec_to_dict",
    "spec_from_dict",
    "load_spec",
    "save_spec",
]


class SpecError(ValueError):
    """A model definition violates one of its structural conditions."""


_NAMED = ("zero", "identity", "decrement", "half", "increment")
_PARAMETRIC = ("const", "min", "table")


@dataclass(frozen=True)
class IntMap:
    """A map from the non-negative integers to the non-negative integers.

    ``kind`` is one of ``zero``, ``identity``, ``decrement`` (``max(k-1, 0)``),
    ``half`` (``k // 2``), ``increment`` (``k + 1``), ``const`` (constant
    ``param``), ``min`` (``min(k, param)``) or ``table`` (``param[k]``, with the
    last entry used for every ``k`` past the end).
    """

    kind: str
    param: int | tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind in _NAMED:
            if self.param is not None:
                raise SpecError(f"map {self.kind!r} takes no parameter")
        elif self.kind in ("const", "min"):
            if not isinstance(self.param, (int, np.integer)) or self.param < 0:
                raise SpecError(f"map {self.kind!r} needs a non-negative integer parameter")
            object.__setattr__(self, "param", int(self.param))
        elif self.kind == "table":
            values = tuple(int(v) for v in (self.param or ()))
            if not values:
                raise SpecError("table map needs at least one entry")
            if min(values) < 0:
                raise SpecError("table map entries must be non-negative")
            object.__setattr__(self, "param", values)
        else:
            raise SpecError(f"unknown map kind {self.kind!r}")

    @classmethod
    def const(cls, c: int) -> IntMap:
        return cls("const", c)

    @classmethod
    def cap(cls, c: int) -> IntMap:
        return cls("min", c)

    @classmethod
    def table(cls, values: Sequence[int]) -> IntMap:
        return cls("table", tuple(values))

    def __call__(self, k: int) -> int:
        return int(self.apply(np.asarray([k]))[0])

    def apply(self, k: np.ndarray) -> np.ndarray:
        k = np.asarray(k, dtype=np.int64)
        kind = self.kind
        if kind == "zero":
            return np.zeros_like(k)
        if kind == "identity":
            return k.copy()
        if kind == "decrement":
            return np.maximum(k - 1, 0)
        if kind == "half":
            return k // 2
        if kind == "increment":
            return k + 1
        if kind == "const":
            return np.full_like(k, self.param)
        if kind == "min":
            return np.minimum(k, self.param)
        values = np.asarray(self.param, dtype=np.int64)
        return values[np.minimum(k, len(values) - 1)]

    def sup(self) -> float:
        """Supremum over all non-negative integers (``inf`` if unbounded)."""
        if self.kind == "zero":
            return 0
        if self.kind in ("const", "min"):
            return self.param
        if self.kind == "table":
            return max(self.param)
        return math.inf

    def to_json(self) -> Any:
        if self.kind in _NAMED:
            return self.kind
        if self.kind == "table":
            return {"table": list(self.param)}
        return {self.kind: self.param}

    @classmethod
    def from_json(cls, obj: Any) -> IntMap:
        if isinstance(obj, IntMap):
            return obj
        if isinstance(obj, bool):
            raise SpecError(f"cannot read a map from {obj!r}")
        if isinstance(obj, (int, np.integer)):
            return cls.const(int(obj))
        if isinstance(obj, str):
            if obj == "one":
                return cls.const(1)
            return cls(obj)
        if isinstance(obj, dict) and len(obj) == 1:
            (kind, param), = obj.items()
            if kind == "table":
                return cls.table(param)
            return cls(kind, param)
        if isinstance(obj, (list, tuple)):
            return cls.table(obj)
        raise SpecError(f"cannot read a map from {obj!r}")


@dataclass(frozen=True)
class ActivationTable:
    """Activation probabilities ``sigma(0..S)``; ``sigma(S)`` continues past ``S``."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        values = tuple(float(v) for v in self.values)
        if not values:
            raise SpecError("activation table is empty")
        object.__setattr__(self, "values", values)

    def __call__(self, k: int) -> float:
        return self.values[min(int(k), len(self.values) - 1)]

    def apply(self, k: np.ndarray) -> np.ndarray:
        values = np.asarray(self.values)
        return values[np.minimum(np.asarray(k, dtype=np.int64), len(values) - 1)]

    def on_support(self, n: int) -> np.ndarray:
        """Values ``sigma(0), ..., sigma(n-1)``."""
        return self.apply(np.arange(n))


@dataclass(frozen=True)
class BinnedTable:
    """A function of ``(state, v)`` with ``v`` in ``[0, 1)`` split into bins.

    ``values[k, b]`` applies when ``edges[b] <= v < edges[b + 1]`` (the last
    bin extends to 1). States past the last row reuse the last row when
    ``beyond == "continue"`` and map to 0 when ``beyond == "zero"``.
    """

    edges: tuple[float, ...]
    values: tuple[tuple[float, ...], ...]
    beyond: str = "continue"

    def __post_init__(self) -> None:
        edges = tuple(float(e) for e in self.edges)
        values = tuple(tuple(row) for row in np.atleast_2d(np.asarray(self.values)).tolist())
        if not edges or edges[0] != 0.0 or any(b <= a for a, b in zip(edges, edges[1:])) or edges[-1] >= 1.0:
            raise SpecError("bin edges must start at 0, increase strictly and stay below 1")
        if any(len(row) != len(edges) for row in values):
            raise SpecError("each table row needs one value per bin")
        if self.beyond not in ("continue", "zero"):
            raise SpecError(f"unknown beyond rule {self.beyond!r}")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant_in_v(cls, values, beyond: str = "continue") -> BinnedTable:
        return cls((0.0,), tuple((v,) for v in values), beyond)

    def apply(self, k: np.ndarray, v: np.ndarray) -> np.ndarray:
        k = np.asarray(k, dtype=np.int64)
        table = np.asarray(self.values)
        b = np.searchsorted(np.asarray(self.edges), np.asarray(v, dtype=float), side="right") - 1
        rows = np.minimum(k, table.shape[0] - 1)
        out = table[rows, b]
        if self.beyond == "zero":
            out = np.where(k < table.shape[0], out, 0)
        return out

    def sup(self) -> float:
        return float(np.max(self.values))


@dataclass(frozen=True)
class FiapSpec:
    """Full model definition.

    ``h[i][j]`` is the interaction map from sender ``j`` to receiver ``i``;
    diagonal entries are ignored and stored as ``None``.
    Construction only normalizes types; use :func:`validate_spec` to check the
    model conditions.
    """

    K: int
    sigma: tuple[ActivationTable, ...]
    g1: tuple[IntMap, ...]
    g2: tuple[IntMap, ...]
    h: tuple[tuple[IntMap | None, ...], ...]
    h_max: int

    def __post_init__(self) -> None:
        K = int(self.K)
        object.__setattr__(self, "K", K)
        sigma = tuple(s if isinstance(s, ActivationTable) else ActivationTable(tuple(s)) for s in self.sigma)
        g1 = tuple(IntMap.from_json(g) for g in self.g1)
        g2 = tuple(IntMap.from_json(g) for g in self.g2)
        if not (len(sigma) == len(g1) == len(g2) == len(self.h) == K):
            raise SpecError(f"per-node fields must all have length K={K}")
        h = []
        for i, row in enumerate(self.h):
            if len(row) != K:
                raise SpecError(f"interaction row {i} has length {len(row)}, expected {K}")
            h.append(tuple(None if i == j else IntMap.from_json(row[j]) for j in range(K)))
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "g1", g1)
        object.__setattr__(self, "g2", g2)
        object.__setattr__(self, "h", tuple(h))
        object.__setattr__(self, "h_max", int(self.h_max))

    @classmethod
    def symmetric(
        cls,
        K: int,
        sigma: Sequence[float],
        g1: Any = "zero",
        g2: Any = "identity",
        h: Any = 1,
        h_max: int | None = None,
    ) -> FiapSpec:
        """All nodes identical; ``h`` is shared by every ordered pair."""
        hmap = IntMap.from_json(h)
        if h_max is None:
            h_max = hmap.sup()
            if math.isinf(h_max):
                raise SpecError("interaction map is unbounded")
        table = ActivationTable(tuple(sigma))
        return cls(
            K=K,
            sigma=(table,) * K,
            g1=(IntMap.from_json(g1),) * K,
            g2=(IntMap.from_json(g2),) * K,
            h=tuple(tuple(hmap for _ in range(K)) for _ in range(K)),
            h_max=int(h_max),
        )

    def is_symmetric(self) -> bool:
        ref = self.h[0][1] if self.K > 1 else None
        same_h = all(self.h[i][j] == ref for i in range(self.K) for j in range(self.K) if i != j)
        return (
            same_h
            and len(set(self.sigma)) == 1
            and len(set(self.g1)) == 1
            and len(set(self.g2)) == 1
        )

    # vectorized helpers used by the simulators; x has shape (..., K)

    def activation_probs(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape, dtype=float)
        for i in range(self.K):
            out[..., i] = self.sigma[i].apply(x[..., i])
        return out

    def fragment(self, x: np.ndarray, activated: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        for i in range(self.K):
            xi = x[..., i]
            out[..., i] = np.where(activated[..., i], self.g1[i].apply(xi), self.g2[i].apply(xi))
        return out

    def emissions(self, x: np.ndarray, activated: np.ndarray) -> np.ndarray:
        """Units emitted, ``e[..., j, i] = h_ij(x_j) * activated_j`` (zero diagonal)."""
        K = self.K
        out = np.zeros(x.shape + (K,), dtype=np.int64)
        for j in range(K):
            xj = x[..., j]
            on = activated[..., j]
            for i in range(K):
                if i != j:
                    out[..., j, i] = np.where(on, self.h[i][j].apply(xj), 0)
        return out


def validate_spec(spec: FiapSpec) -> FiapSpec:
    """Return ``spec`` unchanged if it satisfies every model condition.

    Raises
    ------
    SpecError
        Naming the first violated condition.
    """
    if spec.K < 2:
        raise SpecError(f"K must be at least 2, got {spec.K}")
    for i, table in enumerate(spec.sigma):
        v = table.values
        if v[0] != 0.0:
            raise SpecError(f"node {i}: state 0 must not activate (sigma(0)={v[0]})")
        if len(v) < 2 or v[1] <= 0.0:
            raise SpecError(f"node {i}: sigma(1) must be positive")
        if any(p < 0.0 or p > 1.0 for p in v):
            raise SpecError(f"node {i}: activation probabilities must lie in [0, 1]")
        for k in range(1, len(v)):
            if v[k] < v[k - 1]:
                raise SpecError(
                    f"node {i}: sigma must be non-decreasing (sigma({k - 1})={v[k - 1]} > sigma({k})={v[k]})"
                )
    if spec.h_max < 0:
        raise SpecError("H_max must be non-negative")
    for i in range(spec.K):
        for j in range(spec.K):
            if i == j:
                continue
            bound = spec.h[i][j].sup()
            if math.isinf(bound):
                raise SpecError(f"interaction h[{i}][{j}] is unbounded")
            if bound > spec.h_max:
                raise SpecError(f"interaction h[{i}][{j}] reaches {bound} > H_max={spec.h_max}")
    return spec


INSTANCE_NAMES = ("galves-locherbach", "gordon-newell", "tcp-aimd", "custom-table")


def _per_node(value: Any, K: int, name: str) -> list:
    if value is None:
        raise SpecError(f"missing parameter {name!r}")
    if isinstance(value, dict) and "tables" in value:
        value = value["tables"]
    if isinstance(value, (list, tuple)) and value and isinstance(value[0], (list, tuple, dict, str)):
        if len(value) != K:
            raise SpecError(f"parameter {name!r} lists {len(value)} nodes, expected {K}")
        return list(value)
    return [value] * K


def _sigma_tables(value: Any, K: int) -> tuple[ActivationTable, ...]:
    if isinstance(value, dict) and "tables" not in value:
        tail = value.get("tail", "constant")
        if tail != "constant":
            raise SpecError(f"unsupported sigma tail rule {tail!r}")
        value = value.get("table")
    tables = _per_node(value, K, "sigma")
    return tuple(ActivationTable(tuple(t)) for t in tables)


def _weights(value: Any, K: int) -> list[list[int]]:
    if value is None:
        raise SpecError("missing parameter 'weights'")
    if isinstance(value, (int, np.integer)):
        return [[int(value)] * K for _ in range(K)]
    w = [[int(0 if v is None else v) for v in row] for row in value]
    if len(w) != K or any(len(r) != K for r in w):
        raise SpecError(f"weights must be a {K}x{K} matrix")
    if any(v < 0 for row in w for v in row):
        raise SpecError("weights must be non-negative integers")
    return w


def builtin_instance(name: str, params: dict[str, Any]) -> FiapSpec:
    """Build one of the named model families.

    Parameters
    ----------
    name : {"galves-locherbach", "gordon-newell", "tcp-aimd", "custom-table"}
    params : dict
        Always ``K`` and ``sigma`` (one table, or one per node). Galves-Löcherbach
        needs ``weights`` (scalar or KxK matrix ``mu[i][j]``); tcp-aimd takes
        optional ``weights`` (default 0); custom-table needs ``g1``, ``g2`` and
        ``h`` in the spec-file map syntax.
    """
    if name not in INSTANCE_NAMES:
        raise SpecError(f"unknown instance {name!r}; choose from {', '.join(INSTANCE_NAMES)}")
    if "K" not in params:
        raise SpecError("missing parameter 'K'")
    K = int(params["K"])
    sigma = _sigma_tables(params.get("sigma"), K)

    if name == "galves-locherbach":
        w = _weights(params.get("weights"), K)
        h = [[IntMap.const(w[i][j]) for j in range(K)] for i in range(K)]
        g1, g2 = ["zero"] * K, ["identity"] * K
    elif name == "gordon-newell":
        h = [[IntMap.const(1 if i == (j + 1) % K else 0) for j in range(K)] for i in range(K)]
        g1, g2 = ["decrement"] * K, ["identity"] * K
    elif name == "tcp-aimd":
        w = _weights(params.get("weights", 0), K)
        h = [[IntMap.const(w[i][j]) for j in range(K)] for i in range(K)]
        g1, g2 = ["half"] * K, ["increment"] * K
    else:
        for key in ("g1", "g2", "h"):
            if key not in params:
                raise SpecError(f"missing parameter {key!r}")
        g1 = _per_node(params["g1"], K, "g1")
        g2 = _per_node(params["g2"], K, "g2")
        h = _h_matrix(params["h"], K)

    h_max = params.get("H_max")
    if h_max is None:
        h_max = max((h[i][j] if isinstance(h[i][j], IntMap) else IntMap.from_json(h[i][j])).sup()
                    for i in range(K) for j in range(K) if i != j)
        if math.isinf(h_max):
            raise SpecError("interaction maps are unbounded")
    spec = FiapSpec(K=K, sigma=sigma, g1=tuple(g1), g2=tuple(g2), h=tuple(map(tuple, h)), h_max=int(h_max))
    return validate_spec(spec)


def _h_matrix(value: Any, K: int) -> list[list[Any]]:
    if isinstance(value, list) and len(value) == K and all(isinstance(r, list) and len(r) == K for r in value):
        if not all(isinstance(x, (int, str, dict, list)) or x is None for r in value for x in r):
            raise SpecError("interaction matrix entries must be maps")
        return [[IntMap.const(0) if (i != j and value[i][j] is None) else (None if i == j else value[i][j])
                 for j in range(K)] for i in range(K)]
    return [[None if i == j else value for j in range(K)] for i in range(K)]


def spec_to_dict(spec: FiapSpec) -> dict[str, Any]:
    return {
        "K": spec.K,
        "sigma": {"tables": [list(t.values) for t in spec.sigma], "tail": "constant"},
        "g1": [g.to_json() for g in spec.g1],
        "g2": [g.to_json() for g in spec.g2],
        "h": [[None if m is None else m.to_json() for m in row] for row in spec.h],
        "H_max": spec.h_max,
    }


def spec_from_dict(doc: dict[str, Any], validate: bool = True) -> FiapSpec:
    """Read a spec document; an ``instance`` key delegates to :func:`builtin_instance`."""
    if "instance" in doc:
        params = {k: v for k, v in doc.items() if k != "instance"}
        return builtin_instance(doc["instance"], params)
    try:
        K = int(doc["K"])
        sigma = _sigma_tables(doc["sigma"], K)
        g1 = _per_node(doc["g1"], K, "g1")
        g2 = _per_node(doc["g2"], K, "g2")
        h = _h_matrix(doc["h"], K)
    except KeyError as exc:
        raise SpecError(f"spec document is missing field {exc.args[0]!r}") from None
    h_max = doc.get("H_max")
    if h_max is None:
        raise SpecError("spec document is missing field 'H_max'")
    spec = FiapSpec(K=K, sigma=sigma, g1=tuple(g1), g2=tuple(g2), h=tuple(map(tuple, h)), h_max=int(h_max))
    return validate_spec(spec) if validate else spec


def load_spec(path: str | Path, validate: bool = True) -> FiapSpec:
    with open(path) as fh:
        doc = json.load(fh)
    return spec_from_dict(doc.get("spec", doc), validate=validate)


def save_spec(spec: FiapSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2) + "\n")
