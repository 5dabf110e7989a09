"""Experiment definitions and the verification pipelines behind the CLI.

An experiment is one JSON document (:class:`ExperimentConfig`). The
pipelines here run the campaigns it describes, cut the archives into the
shapes the estimators in :mod:`fiap.stats` expect and collect the reports.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .analytics import CompoundPoissonLaw, Pmf, arrival_limit_law, multivariate_vector_pgf, product_joint_pmf
from .extensions import PartitionSpec, load_extensions, step_vector_partition_rmf
from .network import spec_at
from .replica import Archive, ReplicaSystemState, RunConfig, run_monte_carlo, sample_initial_states
from .spec import FiapSpec, SpecError, load_spec, spec_from_dict
from .stats import (
    DEFAULT_GRID,
    ArrivalLimitTest,
    PairwiseIndependenceTest,
    StatReport,
    TLLNTest,
    empirical_joint_pgf,
    endo_arrival_independence_test,
    reports_to_csv,
    tv_distance,
)
from .streams import derive_stream

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "SuiteResult",
    "sweep_archives",
    "verify_ph",
    "run_vector_campaign",
    "vector_ph",
    "singleton_equivalence",
]

EXPERIMENT_KINDS = ("simulate", "verify-ph", "solve-rate", "vector-ph")


class ConfigError(ValueError):
    """An experiment document is malformed; the message names the field."""


@dataclass
class ExperimentConfig:
    """One experiment.

    ``raw`` keeps the document exactly as read so it can be echoed into the
    output manifest.
    """

    kind: str
    raw: dict[str, Any]
    spec: FiapSpec | None = None
    schedule: Any = None
    M: list[int] = field(default_factory=list)
    runs: int = 1
    horizon: int = 1
    initial_law: Any = None
    initial_state: Any = None
    master_seed: int = 0
    node: int = 0
    pair_node: int | None = None
    step: int = 1
    init_mode: str = "iid"
    record: Any = ((0, 0),)
    record_nodes: Sequence[int] = ()
    kinds: Sequence[str] = ("state", "arrival", "activation")
    tv_threshold: float = 0.02
    n_se: float = 3.0
    pgf_tolerance: float = 0.02
    n_bootstrap: int = 200
    bootstrap_seed: int = 0
    tlln_f: Any = (1.0,)
    grid: Sequence[float] = DEFAULT_GRID
    partition: PartitionSpec | None = None
    block: int = 0
    destination_coords: bool = True
    pair_output_lead_map: bool = False
    b: float | None = None
    mu: float | None = None
    K: int | None = None
    ode: bool = False
    out: str | None = None

    @property
    def model(self) -> Any:
        return self.schedule if self.schedule is not None else self.spec

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], base_dir: str | Path = ".") -> ExperimentConfig:
        if not isinstance(doc, Mapping):
            raise ConfigError("experiment document must be an object")
        raw = json.loads(json.dumps(doc))
        kind = doc.get("kind")
        if kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"field 'kind': expected one of {', '.join(EXPERIMENT_KINDS)}, got {kind!r}")
        cfg = cls(kind=kind, raw=raw)

        def take(name, conv, default=None):
            if name not in doc:
                return default
            try:
                return conv(doc[name])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"field {name!r}: {exc}") from None

        if kind != "solve-rate":
            if "spec" not in doc:
                raise ConfigError("field 'spec': missing (inline document or path)")
            cfg.spec = _read_spec(doc["spec"], Path(base_dir))
            try:
                ext = load_extensions(doc, cfg.spec)
            except (SpecError, KeyError, TypeError) as exc:
                raise ConfigError(f"optional sections: {exc}") from None
            cfg.schedule = ext.get("schedule")
            cfg.partition = ext.get("partition")
        Ms = take("M", lambda v: [int(m) for m in (v if isinstance(v, list) else [v])], [])
        cfg.M = Ms
        cfg.runs = take("runs", int, 1)
        cfg.horizon = take("horizon", int, 1)
        cfg.initial_law = doc.get("initial_law")
        cfg.initial_state = doc.get("initial_state")
        cfg.master_seed = take("master_seed", int, 0)
        cfg.node = take("node", int, 0)
        cfg.pair_node = take("pair_node", int, None)
        cfg.step = take("step", int, 1)
        cfg.init_mode = take("init_mode", str, "iid")
        cfg.record = take("record", lambda v: tuple(tuple(int(a) for a in c) for c in v), ((0, 0),))
        cfg.record_nodes = take("record_nodes", lambda v: tuple(int(a) for a in v), ())
        cfg.kinds = take("kinds", lambda v: tuple(str(a) for a in v), ("state", "arrival", "activation"))
        thresholds = doc.get("thresholds", {})
        if not isinstance(thresholds, Mapping):
            raise ConfigError("field 'thresholds': expected an object")
        try:
            cfg.tv_threshold = float(thresholds.get("tv", 0.02))
            cfg.n_se = float(thresholds.get("n_se", 3.0))
            cfg.pgf_tolerance = float(thresholds.get("pgf", 0.02))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"field 'thresholds': {exc}") from None
        cfg.n_bootstrap = take("n_bootstrap", int, 200)
        cfg.bootstrap_seed = take("bootstrap_seed", int, 0)
        cfg.tlln_f = take("tlln_f", lambda v: tuple(float(a) for a in v), (1.0,))
        cfg.grid = take("grid", lambda v: tuple(float(a) for a in v), DEFAULT_GRID)
        cfg.block = take("block", int, 0)
        cfg.destination_coords = take("destination_coords", bool, True)
        cfg.pair_output_lead_map = take("pair_output_lead_map", bool, False)
        cfg.b = take("b", float)
        cfg.mu = take("mu", float)
        cfg.K = take("K", int)
        cfg.ode = take("ode", bool, False)
        cfg.out = take("out", str)
        if kind == "verify-ph" and len(Ms) < 2:
            raise ConfigError("field 'M': decay verdicts need at least two replica counts in the sweep")
        if kind in ("simulate", "verify-ph", "vector-ph"):
            if not Ms:
                raise ConfigError("field 'M': missing")
            if (cfg.initial_law is None) == (cfg.initial_state is None):
                raise ConfigError("fields 'initial_law'/'initial_state': give exactly one")
        if kind == "vector-ph" and cfg.partition is None:
            raise ConfigError("field 'partition': required for vector-ph")
        if kind == "solve-rate" and None in (cfg.b, cfg.mu, cfg.K):
            raise ConfigError("fields 'b', 'mu', 'K': required for solve-rate")
        return cfg

    def run_config(self, M: int, **overrides) -> RunConfig:
        kwargs = dict(
            spec=self.model,
            M=M,
            horizon=self.horizon,
            runs=self.runs,
            initial_law=self.initial_law,
            initial_state=self.initial_state,
            master_seed=self.master_seed,
            record=self.record,
            record_nodes=self.record_nodes,
            kinds=self.kinds,
            init_mode=self.init_mode,
        )
        kwargs.update(overrides)
        try:
            return RunConfig(**kwargs)
        except (ValueError, SpecError) as exc:
            raise ConfigError(f"campaign at M={M}: {exc}") from None


def _read_spec(value: Any, base_dir: Path) -> FiapSpec:
    if isinstance(value, str):
        path = Path(value)
        if not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"field 'spec': file not found: {path}")
        try:
            return load_spec(path)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        except SpecError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if isinstance(value, Mapping):
        try:
            return spec_from_dict(dict(value))
        except (SpecError, TypeError, ValueError) as exc:
            raise ConfigError(f"field 'spec': {exc}") from None
    raise ConfigError("field 'spec': expected an object or a path")


def load_config(path: str | Path) -> ExperimentConfig:
    """Read an experiment document; relative spec paths resolve against its folder."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return ExperimentConfig.from_dict(doc, path.parent)


@dataclass
class SuiteResult:
    """Reports of one pipeline and the overall verdict."""

    name: str
    reports: list[StatReport]
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def to_dict(self) -> dict[str, Any]:
        return {
            "suite": self.name,
            "passed": self.passed,
            "reports": [r.to_dict() for r in self.reports],
            "details": json.loads(json.dumps(self.details, default=float)),
        }

    def to_csv(self) -> str:
        return reports_to_csv(self.reports)


def sweep_archives(cfg: ExperimentConfig, workers: int = 1) -> dict[int, Archive]:
    """One archive per replica count.

    Every ``M`` uses the same master seed, so the sweep shares random
    streams across ``M`` where their shapes agree.
    """
    i = cfg.node
    j = cfg.node if cfg.pair_node is None else cfg.pair_node
    archives = {}
    for M in sorted(cfg.M):
        rc = cfg.run_config(
            M,
            horizon=max(cfg.horizon, cfg.step),
            record=((0, i), (1, j)),
            record_nodes=(i,),
            kinds=("state", "arrival", "activation", "endogenous"),
        )
        archives[M] = run_monte_carlo(rc, workers=workers)
    return archives


def _target_law(cfg: ExperimentConfig, archives: Mapping[int, Archive]) -> tuple[CompoundPoissonLaw, str]:
    """Limit law of arrivals at ``cfg.node`` for the transition ending at ``cfg.step``.

    At step 1 the law is exact, from the initial law. Later steps use the
    empirical state marginal of the largest ``M`` as the limit-law proxy.
    """
    spec = spec_at(cfg.model, cfg.step - 1)
    if cfg.step == 1 and cfg.initial_law is not None:
        rc = next(iter(archives.values())).config
        pmfs = [Pmf(row) for row in rc._pmf_rows]
        return arrival_limit_law(spec, pmfs, cfg.node), "initial law (exact)"
    if cfg.step == 1:
        x0 = np.asarray(cfg.initial_state, dtype=np.int64)
        pmfs = [Pmf.point(int(v)) for v in x0]
        return arrival_limit_law(spec, pmfs, cfg.node), "initial state (exact)"
    big = archives[max(archives)]
    pmfs = []
    for k in range(spec.K):
        if k not in big.config.record_nodes:
            raise ConfigError(f"step {cfg.step} target needs node {k} recorded across replicas")
        col = big.column("state", k, cfg.step - 1).ravel()
        pmfs.append(Pmf(np.bincount(col) / col.size))
    return arrival_limit_law(spec, pmfs, cfg.node), f"empirical marginal at M={max(archives)} (proxy)"


def verify_ph(cfg: ExperimentConfig, workers: int = 1, archives: Mapping[int, Archive] | None = None) -> SuiteResult:
    """Arrival limit, PAI of outputs, TLLN and endogenous/arrival independence.

    Targets beyond the first step need every node recorded across replicas,
    so set ``record_nodes`` accordingly or keep ``step`` at 1.
    """
    if len(cfg.M) < 2:
        raise ConfigError("field 'M': decay verdicts need at least two replica counts in the sweep")
    if archives is None:
        archives = sweep_archives(cfg, workers)
    Ms = sorted(archives)
    i, step = cfg.node, cfg.step
    j = i if cfg.pair_node is None else cfg.pair_node
    target, target_source = _target_law(cfg, archives)

    arrivals = {M: archives[M].values("arrival", 0, i, step) for M in Ms}
    arrival = ArrivalLimitTest(
        target, cfg.tv_threshold, cfg.n_se, cfg.n_bootstrap, random_state=cfg.bootstrap_seed
    ).fit(arrivals).report_

    pai_fits = {
        M: PairwiseIndependenceTest(cfg.grid, cfg.n_bootstrap, cfg.n_se, cfg.bootstrap_seed).fit(
            np.c_[archives[M].values("state", 0, i, step), archives[M].values("state", 1, j, step)]
        )
        for M in Ms
    }
    gaps = [pai_fits[M].max_gap_ for M in Ms]
    shrinks = gaps[-1] < gaps[0]
    pai = StatReport(
        test="pai_outputs",
        M=Ms,
        estimates=gaps,
        std_errors=[pai_fits[M].max_gap_se_ for M in Ms],
        thresholds=[cfg.n_se * pai_fits[M].max_gap_se_ for M in Ms],
        verdicts=[pai_fits[M].passed_ for M in Ms],
        monotone=shrinks,
        passed=pai_fits[Ms[-1]].passed_ and shrinks,
        details={"pair": [[0, i], [1, j]], "bootstrap_seed": cfg.bootstrap_seed, "gap_shrinks": shrinks},
    )

    tlln = TLLNTest(list(cfg.tlln_f), n_se=cfg.n_se).fit(
        {M: archives[M].column("state", i, step) for M in Ms}
    ).report_

    endo = endo_arrival_independence_test(
        {M: np.c_[archives[M].values("endogenous", 0, i, step), arrivals[M]] for M in Ms},
        cfg.grid,
        cfg.n_bootstrap,
        cfg.bootstrap_seed,
    )
    return SuiteResult(
        "verify-ph",
        [arrival, pai, tlln, endo],
        details={
            "node": i,
            "step": step,
            "target_source": target_source,
            "target_rate": target.rate,
            "target_jumps": target.jump_pmf.tolist(),
            "init_mode": cfg.init_mode,
        },
    )


def run_vector_campaign(
    pspec: PartitionSpec,
    M: int,
    runs: int,
    initial_law: Any,
    master_seed: int,
    pair_output_lead_map: bool = False,
    replica: int = 0,
) -> dict[str, np.ndarray]:
    """One step of the vector-state dynamics per run, observed at one replica.

    Returns ``(runs, K)`` arrays ``exogenous``, ``endogenous`` and ``next``.
    Initial states use the same ``(run, 0, initial)`` stream as the standard
    engine.
    """
    rc = RunConfig(spec=pspec.base, M=M, runs=runs, initial_law=initial_law, master_seed=master_seed)
    K = pspec.base.K
    out = {name: np.empty((runs, K), dtype=np.int64) for name in ("exogenous", "endogenous", "next")}
    for r in range(runs):
        state = ReplicaSystemState(sample_initial_states(rc, r), 0)
        streams = {role: derive_stream(master_seed, r, 0, role) for role in ("activation", "routing")}
        res = step_vector_partition_rmf(pspec, state, streams, pair_output_lead_map=pair_output_lead_map)
        out["exogenous"][r] = res.exogenous[replica]
        out["endogenous"][r] = res.endogenous[replica]
        out["next"][r] = res.next_state.x[replica]
    return out


def _block_joint_pmfs(pspec: PartitionSpec, rows: np.ndarray) -> list[np.ndarray]:
    return [product_joint_pmf([Pmf(rows[k]) for k in s]) for s in pspec.sets]


def vector_pgf_check(
    pspec: PartitionSpec,
    samples: np.ndarray,
    pmf_rows: np.ndarray,
    block: int,
    grid: Sequence[float] = (0.0, 0.5, 1.0),
    tolerance: float = 0.02,
    destination_coords: bool = True,
    M: int = 0,
) -> StatReport:
    """Empirical multivariate PGF of a block's exogenous arrivals against the limit formula."""
    members = pspec.sets[block]
    joints = _block_joint_pmfs(pspec, pmf_rows)
    points = np.asarray(list(itertools.product(grid, repeat=len(members))))
    target = []
    for pt in points:
        z = np.ones(pspec.base.K)
        z[list(members)] = pt
        target.append(
            multivariate_vector_pgf(
                pspec.sets, joints, pspec.base, block, z, destination_coords,
                pspec.max_set_size, pspec.max_support,
            )
        )
    target = np.asarray(target)
    emp, se = empirical_joint_pgf(samples[:, list(members)], points)
    diff = np.abs(emp - target)
    k = int(np.argmax(diff))
    ok = bool(diff[k] < tolerance)
    return StatReport(
        test="vector_pgf",
        M=[M],
        estimates=[float(diff[k])],
        std_errors=[float(se[k])],
        thresholds=[tolerance],
        verdicts=[ok],
        monotone=None,
        passed=ok,
        details={
            "block": list(members),
            "points": points.tolist(),
            "empirical": emp.tolist(),
            "target": target.tolist(),
            "destination_coords": destination_coords,
        },
    )


def vector_ph(cfg: ExperimentConfig) -> SuiteResult:
    """Multivariate PGF check of the exogenous arrivals to one block at each ``M``."""
    pspec = cfg.partition
    rc = cfg.run_config(max(cfg.M))
    if rc._pmf_rows is None:
        raise ConfigError("field 'initial_law': vector-ph needs an initial law")
    reports = []
    for M in sorted(cfg.M):
        data = run_vector_campaign(pspec, M, cfg.runs, cfg.initial_law, cfg.master_seed, cfg.pair_output_lead_map)
        reports.append(
            vector_pgf_check(pspec, data["exogenous"], rc._pmf_rows, cfg.block,
                             cfg.grid if "grid" in cfg.raw else (0.0, 0.5, 1.0),
                             cfg.pgf_tolerance, cfg.destination_coords, M)
        )
    return SuiteResult(
        "vector-ph",
        reports,
        details={
            "partition": [list(s) for s in pspec.sets],
            "destination_coords": cfg.destination_coords,
            "pair_output_lead_map": cfg.pair_output_lead_map,
        },
    )


def singleton_equivalence(
    spec: FiapSpec,
    M: int,
    runs: int,
    initial_law: Any,
    seeds: tuple[int, int] = (1, 2),
    node: int = 0,
    threshold: float = 0.03,
) -> StatReport:
    """TV between arrivals of the singleton-partition engine and the standard engine.

    The two campaigns use different master seeds so the comparison is
    distributional rather than draw-for-draw.
    """
    rc = RunConfig(spec=spec, M=M, runs=runs, initial_law=initial_law, master_seed=seeds[0],
                   record=((0, node),), kinds=("arrival",))
    standard = run_monte_carlo(rc).values("arrival", 0, node, 1)
    vector = run_vector_campaign(PartitionSpec.singletons(spec), M, runs, initial_law, seeds[1])["exogenous"][:, node]
    n = int(max(standard.max(), vector.max())) + 1
    p = np.bincount(standard, minlength=n) / runs
    q = np.bincount(vector, minlength=n) / runs
    tv = tv_distance(p, q)
    return StatReport(
        test="singleton_equivalence",
        M=[M],
        estimates=[tv],
        std_errors=[float("nan")],
        thresholds=[threshold],
        verdicts=[tv < threshold],
        monotone=None,
        passed=tv < threshold,
        details={"seeds": list(seeds), "node": node, "runs": runs},
    )
