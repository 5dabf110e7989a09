"""Statistical verdicts on replica mean-field archives.

The estimators follow the scikit-learn convention: configure in ``__init__``,
call ``fit`` on the data, read the fitted ``report_``. Thin functions named
after each check wrap the estimators for one-shot use.

Data is handed over as plain arrays rather than archives. A sweep is a
``{M: data}`` mapping; helpers in :mod:`fiap.verify` cut archives into that
shape.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_pairs, check_replica_block, check_samples, check_sweep
from .analytics import CompoundPoissonLaw, Pmf

__all__ = [
    "EmpiricalPmf",
    "StatReport",
    "empirical_pmf",
    "empirical_pgf",
    "empirical_joint_pgf",
    "tv_distance",
    "fold_to_cut",
    "PaiCovariance",
    "pai_covariance",
    "PairwiseIndependenceTest",
    "pai_joint_test",
    "TLLNTest",
    "tlln_check",
    "randomized_tlln_check",
    "ArrivalLimitTest",
    "arrival_limit_test",
    "PgfLimitTest",
    "pgf_limit_test",
    "endo_arrival_independence_test",
    "DEFAULT_GRID",
]

DEFAULT_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class EmpiricalPmf:
    """Counts of each observed integer value."""

    counts: np.ndarray
    n: int
    source: str = ""

    def __post_init__(self) -> None:
        if int(np.sum(self.counts)) != self.n:
            raise ValueError("counts must sum to the sample size")

    @property
    def probs(self) -> np.ndarray:
        return self.counts / self.n

    def as_dict(self) -> dict[int, int]:
        return {k: int(c) for k, c in enumerate(self.counts) if c}

    def to_pmf(self) -> Pmf:
        return Pmf(self.probs)


def empirical_pmf(samples, source: str = "") -> EmpiricalPmf:
    """Exact value counts of integer ``samples``."""
    x = check_samples(samples, min_size=1)
    return EmpiricalPmf(np.bincount(x), int(x.size), source)


def empirical_pgf(samples, z_grid: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean of ``z**X`` per grid point with jackknife standard errors."""
    x = check_samples(samples, min_size=2)
    z = np.asarray(z_grid, dtype=float)
    if z.ndim != 1 or (z < 0).any() or (z > 1).any():
        raise ValueError("z grid must be a 1-d array of values in [0, 1]")
    w = np.power(z[None, :], x[:, None])
    n = x.size
    mean = w.mean(axis=0)
    loo = (w.sum(axis=0) - w) / (n - 1)
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return mean, se


def empirical_joint_pgf(samples, points) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean of ``prod_k z_k**X_k`` at each row of ``points``, with standard errors.

    ``samples`` is ``(N, d)``; ``points`` is ``(P, d)``. The standard error is
    the usual ``std / sqrt(N)``, which equals the jackknife value for a mean.
    """
    x = np.asarray(samples, dtype=np.int64)
    pts = np.asarray(points, dtype=float)
    if x.ndim != 2 or pts.ndim != 2 or pts.shape[1] != x.shape[1]:
        raise ValueError("samples must be (N, d) and points (P, d)")
    if x.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    w = np.prod(np.power(pts[None, :, :], x[:, None, :]), axis=2)
    return w.mean(axis=0), w.std(axis=0, ddof=1) / np.sqrt(x.shape[0])


def tv_distance(p, q) -> float:
    """Half the L1 distance between two probability vectors on ``0, 1, ...``.

    The shorter vector is padded with zeros. Callers fold tails into a
    sentinel bin first (see :func:`fold_to_cut`).
    """
    p = np.asarray(p.probs if hasattr(p, "probs") else p, dtype=float)
    q = np.asarray(q.probs if hasattr(q, "probs") else q, dtype=float)
    for v in (p, q):
        if v.ndim != 1 or (v < 0).any() or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError("tv_distance needs two normalized probability vectors")
    n = max(p.size, q.size)
    p = np.pad(p, (0, n - p.size))
    q = np.pad(q, (0, n - q.size))
    return float(min(1.0, 0.5 * np.abs(p - q).sum()))


def fold_to_cut(values: np.ndarray, cut: int) -> np.ndarray:
    """Keep entries ``0..cut`` and fold everything past ``cut`` into one extra bin."""
    values = np.asarray(values, dtype=float)
    head = np.zeros(cut + 2)
    k = min(values.size, cut + 1)
    head[:k] = values[:k]
    head[cut + 1] = values[cut + 1 :].sum()
    return head


@dataclass
class StatReport:
    """Outcome of one check, with one entry per replica count."""

    test: str
    M: list[int]
    estimates: list[float]
    std_errors: list[float]
    thresholds: list[float]
    verdicts: list[bool]
    monotone: bool | None
    passed: bool
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def csv_rows(self) -> list[tuple[str, int, float, float, bool]]:
        return [
            (self.test, m, est, se, ok)
            for m, est, se, ok in zip(self.M, self.estimates, self.std_errors, self.verdicts)
        ]

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"M={m}: {e:.4g}" for m, e in zip(self.M, self.estimates))
        return f"{self.test}: {verdict} ({parts})"


def reports_to_csv(reports: Sequence[StatReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["test", "M", "estimate", "se", "verdict"])
    for rep in reports:
        for test, m, est, se, ok in rep.csv_rows():
            writer.writerow([test, m, repr(float(est)), repr(float(se)), "pass" if ok else "fail"])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------------------
# Pairwise independence


@dataclass(frozen=True)
class PaiCovariance:
    estimate: float
    se: float
    ci_low: float
    ci_high: float

    def covers(self, value: float = 0.0) -> bool:
        return self.ci_low <= value <= self.ci_high


def pai_covariance(pairs, B: Sequence[int], z_crit: float = 1.96) -> PaiCovariance:
    """Plug-in covariance of ``1{Z1 in B}`` and ``1{Z2 in B}``.

    The standard error comes from the influence function of the plug-in
    estimator; the interval is ``estimate +- z_crit * se``.
    """
    z1, z2 = check_pairs(pairs, min_size=30)
    members = np.asarray(sorted(set(int(b) for b in B)))
    a = np.isin(z1, members).astype(float)
    b = np.isin(z2, members).astype(float)
    da, db = a - a.mean(), b - b.mean()
    cov = float(np.mean(da * db))
    psi = da * db - cov
    se = float(np.sqrt(np.mean(psi**2) / a.size))
    return PaiCovariance(cov, se, cov - z_crit * se, cov + z_crit * se)


class PairwiseIndependenceTest(BaseEstimator):
    """Joint-versus-product PGF gap on a ``(u, v)`` grid.

    ``gap_[a, b] = mean(u_a**Z1 * v_b**Z2) - mean(u_a**Z1) * mean(v_b**Z2)``.
    Standard errors come from a seeded nonparametric bootstrap over pairs.
    The check passes when every cell with a positive standard error has
    ``|gap| < n_se * se``. Cells with ``u = 1`` or ``v = 1`` are identically 0.

    Parameters
    ----------
    grid : sequence of float
        Values used for both ``u`` and ``v``.
    n_bootstrap : int
        Bootstrap resamples.
    n_se : float
        Pass band in standard errors.
    random_state : int
        Bootstrap seed, recorded in the report.
    """

    def __init__(self, grid=DEFAULT_GRID, n_bootstrap: int = 200, n_se: float = 3.0, random_state: int = 0):
        self.grid = grid
        self.n_bootstrap = n_bootstrap
        self.n_se = n_se
        self.random_state = random_state

    def fit(self, pairs, y=None):
        z1, z2 = check_pairs(pairs, min_size=100)
        grid = np.asarray(self.grid, dtype=float)
        a = np.power(grid[:, None], z1[None, :])
        b = np.power(grid[:, None], z2[None, :])
        self.gap_ = _gap(a, b)
        rng = np.random.default_rng(self.random_state)
        boot = np.empty((self.n_bootstrap,) + self.gap_.shape)
        chunk = max(1, 4_000_000 // max(1, z1.size * grid.size))
        for start in range(0, self.n_bootstrap, chunk):
            idx = rng.integers(0, z1.size, size=(min(chunk, self.n_bootstrap - start), z1.size))
            boot[start : start + idx.shape[0]] = _gap_batched(a[:, idx], b[:, idx])
        self.se_ = boot.std(axis=0, ddof=1)
        abs_gap = np.abs(self.gap_)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(self.se_ > 0, abs_gap / self.se_, np.where(abs_gap > 1e-15, np.inf, 0.0))
        self.z_scores_ = z
        cell = np.unravel_index(int(np.argmax(abs_gap)), abs_gap.shape)
        self.max_gap_ = float(abs_gap[cell])
        self.max_gap_se_ = float(self.se_[cell])
        self.max_gap_cell_ = (float(grid[cell[0]]), float(grid[cell[1]]))
        self.passed_ = bool(np.all(z < self.n_se))
        return self

    def report(self, M: int = 0, name: str = "pai_joint") -> StatReport:
        return StatReport(
            test=name,
            M=[M],
            estimates=[self.max_gap_],
            std_errors=[self.max_gap_se_],
            thresholds=[self.n_se * self.max_gap_se_],
            verdicts=[self.passed_],
            monotone=None,
            passed=self.passed_,
            details={
                "grid": list(map(float, self.grid)),
                "gap": self.gap_,
                "se": self.se_,
                "max_gap_cell": self.max_gap_cell_,
                "max_z": float(np.max(self.z_scores_)),
                "bootstrap_seed": self.random_state,
                "n_bootstrap": self.n_bootstrap,
            },
        )


def _gap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    joint = a @ b.T / n
    return joint - np.outer(a.mean(axis=-1), b.mean(axis=-1))


def _gap_batched(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # a, b: (grid, batch, N) -> (batch, grid, grid)
    n = a.shape[-1]
    joint = np.einsum("ubn,vbn->buv", a, b) / n
    return joint - a.mean(axis=-1).T[:, :, None] * b.mean(axis=-1).T[:, None, :]


def pai_joint_test(pairs, grid=DEFAULT_GRID, n_bootstrap: int = 200, seed: int = 0, M: int = 0) -> StatReport:
    """Largest joint-versus-product PGF gap of a pair sample, with its verdict."""
    est = PairwiseIndependenceTest(grid, n_bootstrap, random_state=seed).fit(pairs)
    return est.report(M)


def endo_arrival_independence_test(
    pairs_by_M: Mapping[int, Any] | Any, grid=DEFAULT_GRID, n_bootstrap: int = 200, seed: int = 0
) -> StatReport:
    """Independence of the endogenous part and the arrivals at one node.

    Accepts either one ``(N, 2)`` array of ``(endogenous, arrival)`` pairs or
    a ``{M: pairs}`` sweep; the verdict uses the largest ``M``. Gaps at the
    other ``M`` values are reported for context.
    """
    sweep = pairs_by_M if isinstance(pairs_by_M, Mapping) else {0: pairs_by_M}
    Ms = sorted(int(m) for m in sweep)
    fits = {m: PairwiseIndependenceTest(grid, n_bootstrap, random_state=seed).fit(sweep[m]) for m in Ms}
    final = fits[Ms[-1]]
    return StatReport(
        test="endo_arrival_independence",
        M=Ms,
        estimates=[fits[m].max_gap_ for m in Ms],
        std_errors=[fits[m].max_gap_se_ for m in Ms],
        thresholds=[final.n_se * fits[m].max_gap_se_ for m in Ms],
        verdicts=[fits[m].passed_ for m in Ms],
        monotone=None,
        passed=final.passed_,
        details={"verdict_M": Ms[-1], "bootstrap_seed": seed, "max_gap_cell": final.max_gap_cell_},
    )


# ---------------------------------------------------------------------------
# Triangular law of large numbers


def _table_function(f) -> Callable[[np.ndarray], np.ndarray]:
    if callable(f):
        return f
    table = np.asarray(f, dtype=float)
    if table.ndim != 1:
        raise ValueError("f must be a callable or a 1-d table")

    def apply(z):
        z = np.asarray(z, dtype=np.int64)
        return np.where(z < table.size, table[np.minimum(z, table.size - 1)], 0.0)

    return apply


class TLLNTest(BaseEstimator):
    """Variance decay and mean stability of replica averages along a sweep.

    For each ``M`` the per-run average ``(1/M) sum_n f(Z_n)`` is computed and
    its mean and variance taken across runs. Two sub-verdicts:

    * variance decay: along consecutive ``M < M'`` the variance strictly
      decreases by a factor within ``[(M'/M)**decay_low, (M'/M)**decay_high]``
      (all-zero variances count as decayed);
    * mean stability: every mean lies within ``n_se`` combined standard errors
      of the mean at the largest ``M``.

    The overall verdict is their conjunction.

    Parameters
    ----------
    f : callable or 1-d table
        Applied to states (or to ``(states, uniforms)`` when ``randomized``).
        A table is zero past its end.
    randomized : bool
        ``fit`` then takes ``{M: (states, uniforms)}``.
    """

    def __init__(self, f=None, randomized: bool = False, decay_low: float = 0.4, decay_high: float = 1.6, n_se: float = 3.0):
        self.f = f
        self.randomized = randomized
        self.decay_low = decay_low
        self.decay_high = decay_high
        self.n_se = n_se

    def fit(self, sweep: Mapping[int, Any], y=None):
        Ms = check_sweep(sweep)
        means, mean_se, variances, var_se = [], [], [], []
        for m in Ms:
            values = self._apply(sweep[m])
            avg = values.mean(axis=1)
            r = avg.size
            var = float(avg.var(ddof=1))
            means.append(float(avg.mean()))
            mean_se.append(float(np.sqrt(var / r)))
            variances.append(var)
            var_se.append(var * float(np.sqrt(2.0 / (r - 1))))
        factors, decay_ok = [], [True]
        for (ma, va), (mb, vb) in zip(zip(Ms, variances), zip(Ms[1:], variances[1:])):
            if va == 0.0 and vb == 0.0:
                factors.append(float("nan"))
                decay_ok.append(True)
                continue
            factor = va / vb if vb > 0 else float("inf")
            ratio = mb / ma
            factors.append(factor)
            decay_ok.append(vb < va and ratio**self.decay_low <= factor <= ratio**self.decay_high)
        ref, ref_se = means[-1], mean_se[-1]
        mean_ok = [
            abs(mu - ref) <= self.n_se * np.hypot(se, ref_se) + 1e-12 for mu, se in zip(means, mean_se)
        ]
        self.M_ = Ms
        self.means_, self.mean_se_ = means, mean_se
        self.variances_, self.variance_se_ = variances, var_se
        self.factors_ = factors
        self.decay_ok_ = bool(all(decay_ok))
        self.mean_ok_ = bool(all(mean_ok))
        self.passed_ = self.decay_ok_ and self.mean_ok_
        self.report_ = StatReport(
            test="randomized_tlln" if self.randomized else "tlln",
            M=Ms,
            estimates=variances,
            std_errors=var_se,
            thresholds=[float("nan")] + [(b / a) ** self.decay_low for a, b in zip(Ms, Ms[1:])],
            verdicts=[bool(d and m) for d, m in zip(decay_ok, mean_ok)],
            monotone=all(vb < va for va, vb in zip(variances, variances[1:])) or all(v == 0 for v in variances),
            passed=self.passed_,
            details={
                "means": means,
                "mean_se": mean_se,
                "decay_factors": factors,
                "decay_band": [self.decay_low, self.decay_high],
                "variance_decay": self.decay_ok_,
                "mean_stability": self.mean_ok_,
            },
        )
        return self

    def _apply(self, data) -> np.ndarray:
        f = _table_function(self.f if self.f is not None else (lambda z: np.zeros(np.shape(z))))
        if self.randomized:
            states, uniforms = data
            states = check_replica_block(states, "states")
            uniforms = np.asarray(uniforms, dtype=float)
            if uniforms.shape != states.shape:
                raise ValueError("uniform draws must match the state block shape")
            return np.asarray(f(states, uniforms), dtype=float)
        return np.asarray(f(check_replica_block(data)), dtype=float)


def tlln_check(sweep: Mapping[int, Any], f) -> StatReport:
    """TLLN verdict for ``{M: (R, M) state block}`` and a function of the state."""
    return TLLNTest(f).fit(sweep).report_


def randomized_tlln_check(sweep: Mapping[int, Any], f) -> StatReport:
    """TLLN verdict for ``{M: (states, uniforms)}`` and ``f(state, u)``.

    ``f`` may be a callable or a :class:`fiap.spec.BinnedTable` (use
    ``beyond="zero"`` for compact support in the state).
    """
    if hasattr(f, "apply") and not callable(f):
        f = f.apply
    return TLLNTest(f, randomized=True).fit(sweep).report_


# ---------------------------------------------------------------------------
# Arrival limits


class ArrivalLimitTest(BaseEstimator):
    """Total variation between empirical arrivals and a compound Poisson target.

    The common support is cut at the target's ``mass`` quantile and both laws
    fold their tails into one bin. Standard errors come from a seeded
    multinomial bootstrap of the empirical law. The threshold at each ``M``
    is ``max(threshold, n_se * se)``. The check passes when TV strictly
    decreases along the sweep and the final TV is below its threshold.
    """

    def __init__(
        self,
        target: CompoundPoissonLaw | None = None,
        threshold: float = 0.02,
        n_se: float = 3.0,
        n_bootstrap: int = 200,
        mass: float = 1 - 1e-6,
        random_state: int = 0,
    ):
        self.target = target
        self.threshold = threshold
        self.n_se = n_se
        self.n_bootstrap = n_bootstrap
        self.mass = mass
        self.random_state = random_state

    def fit(self, sweep: Mapping[int, Any], y=None):
        Ms = check_sweep(sweep)
        cut = self.target.support_cut(self.mass)
        trunc = self.target.pmf(cut)
        target = np.append(trunc.probs, max(0.0, 1.0 - trunc.probs.sum()))
        rng = np.random.default_rng(self.random_state)
        tvs, ses, thresholds = [], [], []
        for m in Ms:
            x = check_samples(sweep[m], min_size=1)
            emp = fold_to_cut(np.bincount(x), cut) / x.size
            tvs.append(tv_distance(emp, target))
            boot = rng.multinomial(x.size, emp, size=self.n_bootstrap) / x.size
            boot_tv = 0.5 * np.abs(boot - target).sum(axis=1)
            se = float(boot_tv.std(ddof=1))
            ses.append(se)
            thresholds.append(max(self.threshold, self.n_se * se))
        self.M_, self.tv_, self.se_, self.thresholds_ = Ms, tvs, ses, thresholds
        self.monotone_ = _strictly_decreasing(tvs) or all(t == 0 for t in tvs)
        self.final_ok_ = tvs[-1] < thresholds[-1] or tvs[-1] == 0.0
        self.passed_ = bool(self.monotone_ and self.final_ok_)
        self.report_ = StatReport(
            test="arrival_limit",
            M=Ms,
            estimates=tvs,
            std_errors=ses,
            thresholds=thresholds,
            verdicts=[t < thr or t == 0.0 for t, thr in zip(tvs, thresholds)],
            monotone=self.monotone_,
            passed=self.passed_,
            details={
                "support_cut": cut,
                "target_rate": self.target.rate,
                "target_mean": self.target.mean(),
                "bootstrap_seed": self.random_state,
                "n_bootstrap": self.n_bootstrap,
            },
        )
        return self


def arrival_limit_test(
    sweep: Mapping[int, Any],
    target: CompoundPoissonLaw,
    threshold: float = 0.02,
    n_bootstrap: int = 200,
    seed: int = 0,
) -> StatReport:
    """Arrival-law convergence verdict for ``{M: arrival samples}``."""
    return ArrivalLimitTest(target, threshold, n_bootstrap=n_bootstrap, random_state=seed).fit(sweep).report_


class PgfLimitTest(BaseEstimator):
    """Largest gap between empirical and target PGFs on a grid.

    Passes when the gap strictly decreases along the sweep and the final
    gap is below ``tolerance``.

    Parameters
    ----------
    target_pgf : callable
        Vectorized ``z -> E[z**A]`` under the limit law.
    """

    def __init__(self, target_pgf=None, grid=DEFAULT_GRID, tolerance: float = 0.01):
        self.target_pgf = target_pgf
        self.grid = grid
        self.tolerance = tolerance

    def fit(self, sweep: Mapping[int, Any], y=None):
        Ms = check_sweep(sweep)
        z = np.asarray(self.grid, dtype=float)
        target = np.asarray(self.target_pgf(z), dtype=float)
        gaps, ses = [], []
        for m in Ms:
            mean, se = empirical_pgf(sweep[m], z)
            diff = np.abs(mean - target)
            k = int(np.argmax(diff))
            gaps.append(float(diff[k]))
            ses.append(float(se[k]))
        self.M_, self.gaps_, self.se_ = Ms, gaps, ses
        self.monotone_ = _strictly_decreasing(gaps)
        self.passed_ = bool(self.monotone_ and gaps[-1] < self.tolerance)
        self.report_ = StatReport(
            test="pgf_limit",
            M=Ms,
            estimates=gaps,
            std_errors=ses,
            thresholds=[self.tolerance] * len(Ms),
            verdicts=[g < self.tolerance for g in gaps],
            monotone=self.monotone_,
            passed=self.passed_,
            details={"grid": z.tolist(), "target": target.tolist()},
        )
        return self


def pgf_limit_test(sweep: Mapping[int, Any], target_pgf, grid=DEFAULT_GRID, tolerance: float = 0.01) -> StatReport:
    return PgfLimitTest(target_pgf, grid, tolerance).fit(sweep).report_
