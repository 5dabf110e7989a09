"""Closed-form limit objects of the replica mean-field model.

Arrival laws in the infinite-replica limit are (compound) Poisson. For a
receiving node ``i`` and a sender ``j`` in limit state ``X_j``, define

    Phi_ij(z) = E[ z ** (h_ij(X_j) * 1{U < sigma_j(X_j)}) ]

so that the arrival PGF is ``exp(-sum_{j != i} (1 - Phi_ij(z)))``.

The module also carries the continuous-time counting-neuron illustration:
the self-consistent rate equation (through the lower incomplete gamma
function) and the first-order ODE satisfied by the stationary PGF.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .spec import ActivationTable, FiapSpec, IntMap

__all__ = [
    "Pmf",
    "TruncatedPmf",
    "CompoundPoissonLaw",
    "CountingModelParams",
    "CountingOdeSolution",
    "ConvergenceError",
    "BudgetError",
    "theta_from_pmf",
    "sender_pgf",
    "arrival_pgf_symmetric",
    "arrival_pgf_general",
    "arrival_limit_law",
    "weighted_gl_pgf",
    "compound_poisson_pmf",
    "lower_incomplete_gamma",
    "counting_rate_defect",
    "solve_counting_rate",
    "integrate_counting_ode",
    "product_joint_pmf",
    "multivariate_vector_pgf",
]

PMF_ATOL = 1e-12


class ConvergenceError(RuntimeError):
    """An iterative solver ran out of budget."""


class BudgetError(ValueError):
    """An exhaustive enumeration would exceed its configured size."""


@dataclass(frozen=True, eq=False)
class Pmf:
    """A probability mass function on ``{0, ..., S}``."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.array(self.probs, dtype=float).ravel()
        if p.size == 0:
            raise ValueError("a PMF needs at least one entry")
        if (p < 0).any():
            raise ValueError("PMF entries must be non-negative")
        if abs(p.sum() - 1.0) > PMF_ATOL:
            raise ValueError(f"PMF sums to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __eq__(self, other) -> bool:
        return isinstance(other, Pmf) and np.array_equal(self.probs, other.probs)

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())

    @classmethod
    def normalized(cls, weights: Sequence[float]) -> Pmf:
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum())

    @classmethod
    def uniform(cls, n: int) -> Pmf:
        """Uniform on ``{0, ..., n-1}``."""
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def point(cls, k: int) -> Pmf:
        p = np.zeros(k + 1)
        p[k] = 1.0
        return cls(p)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.probs.size)

    def to_dict(self) -> dict:
        return {"pmf": self.probs.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> Pmf:
        return cls(doc["pmf"])

    def expect(self, values: np.ndarray) -> float:
        return float(np.dot(self.probs, values))

    def pgf(self, z):
        z = np.asarray(z, dtype=float)
        return np.sum(self.probs * z[..., None] ** self.support, axis=-1)


@dataclass(frozen=True)
class TruncatedPmf:
    """Probabilities on ``{0..N}`` plus the mass beyond ``N``."""

    probs: np.ndarray
    tail: float

    def folded(self) -> np.ndarray:
        """Probabilities with the tail added to the last bin."""
        p = self.probs.copy()
        p[-1] += self.tail
        return p


@dataclass(frozen=True, eq=False)
class CompoundPoissonLaw:
    """``sum_{k=1}^N J_k`` with ``N ~ Poisson(rate)`` and i.i.d. jumps ``J``.

    Any mass of the jump law at 0 is folded into the rate on construction,
    so ``jump_pmf[0] == 0`` always holds afterwards.
    """

    rate: float
    jump_pmf: np.ndarray

    def __post_init__(self) -> None:
        if self.rate < 0:
            raise ValueError("rate must be non-negative")
        f = np.array(self.jump_pmf, dtype=float).ravel()
        if (f < 0).any() or abs(f.sum() - 1.0) > PMF_ATOL:
            raise ValueError("jump law must be a probability vector")
        rate = float(self.rate) * (1.0 - f[0])
        if f[0] >= 1.0:
            rate, f = 0.0, np.array([0.0, 1.0])
        else:
            f = f / (1.0 - f[0])
            f[0] = 0.0
        if f.size < 2:
            f = np.array([0.0, 1.0])
        f.setflags(write=False)
        object.__setattr__(self, "rate", rate)
        object.__setattr__(self, "jump_pmf", f)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, CompoundPoissonLaw)
            and self.rate == other.rate
            and np.array_equal(self.jump_pmf, other.jump_pmf)
        )

    def __hash__(self) -> int:
        return hash((self.rate, self.jump_pmf.tobytes()))

    @classmethod
    def poisson(cls, rate: float) -> CompoundPoissonLaw:
        return cls(rate, np.array([0.0, 1.0]))

    def to_dict(self) -> dict:
        return {"rate": self.rate, "jumps": self.jump_pmf.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> CompoundPoissonLaw:
        return cls(doc["rate"], doc["jumps"])

    def pgf(self, z):
        z = np.asarray(z, dtype=float)
        phi = np.sum(self.jump_pmf * z[..., None] ** np.arange(self.jump_pmf.size), axis=-1)
        return np.exp(self.rate * (phi - 1.0))

    def mean(self) -> float:
        return self.rate * float(np.dot(np.arange(self.jump_pmf.size), self.jump_pmf))

    def pmf(self, n: int) -> TruncatedPmf:
        return compound_poisson_pmf(self, n)

    def support_cut(self, mass: float = 1.0 - 1e-6, limit: int = 100_000) -> int:
        """Smallest ``N`` whose cumulative probability reaches ``mass``."""
        n = max(8, int(4 * self.mean() + 8))
        while True:
            trunc = compound_poisson_pmf(self, n)
            cdf = np.cumsum(trunc.probs)
            hit = np.flatnonzero(cdf >= mass)
            if hit.size:
                return int(hit[0])
            if n >= limit:
                raise BudgetError(f"law needs more than {limit} states to reach mass {mass}")
            n *= 2


def _sigma_values(sigma, n: int) -> np.ndarray:
    if isinstance(sigma, ActivationTable):
        return sigma.on_support(n)
    s = np.asarray(sigma, dtype=float)
    return s[np.minimum(np.arange(n), s.size - 1)]


def theta_from_pmf(pmf: Pmf, sigma) -> float:
    """Activation probability ``E[sigma(X)]`` for ``X ~ pmf``."""
    return pmf.expect(_sigma_values(sigma, pmf.probs.size))


def sender_pgf(pmf: Pmf, sigma, h: IntMap, z):
    """``E[z ** (h(X) * 1{U < sigma(X)})]`` for ``X ~ pmf``."""
    z = np.asarray(z, dtype=float)
    s = _sigma_values(sigma, pmf.probs.size)
    jumps = h.apply(pmf.support)
    terms = (1.0 - s) + s * z[..., None] ** jumps
    return np.sum(pmf.probs * terms, axis=-1)


def arrival_pgf_symmetric(spec: FiapSpec, pmf: Pmf, z):
    """Limit arrival PGF ``exp((K-1)(Phi(z) - 1))`` of a symmetric model."""
    if not spec.is_symmetric():
        raise ValueError("spec is not symmetric")
    phi = sender_pgf(pmf, spec.sigma[0], spec.h[0][1], z)
    return np.exp((spec.K - 1) * (phi - 1.0))


def _node_pmfs(pmfs, K: int) -> list[Pmf]:
    if isinstance(pmfs, Pmf):
        return [pmfs] * K
    pmfs = list(pmfs)
    if len(pmfs) != K:
        raise ValueError(f"need {K} node laws, got {len(pmfs)}")
    return pmfs


def arrival_pgf_general(spec: FiapSpec, pmfs, i: int, z, receiver_law: bool = False):
    """Limit PGF of the arrivals to node ``i``.

    By default each sender ``j`` contributes through its own law and activation
    table. ``receiver_law=True`` evaluates the variant that uses node ``i``'s
    law and activation table for every sender.
    """
    pmfs = _node_pmfs(pmfs, spec.K)
    total = 0.0
    for j in range(spec.K):
        if j == i:
            continue
        src = i if receiver_law else j
        total = total + (1.0 - sender_pgf(pmfs[src], spec.sigma[src], spec.h[i][j], z))
    return np.exp(-total)


def arrival_limit_law(spec: FiapSpec, pmfs, i: int) -> CompoundPoissonLaw:
    """Compound Poisson law whose PGF is :func:`arrival_pgf_general`."""
    pmfs = _node_pmfs(pmfs, spec.K)
    measure = np.zeros(spec.h_max + 1)
    for j in range(spec.K):
        if j == i:
            continue
        p = pmfs[j]
        s = _sigma_values(spec.sigma[j], p.probs.size)
        np.add.at(measure, spec.h[i][j].apply(p.support), p.probs * s)
    rate = measure.sum()
    if rate == 0.0:
        return CompoundPoissonLaw.poisson(0.0)
    return CompoundPoissonLaw(rate, measure / rate)


def weighted_gl_pgf(weights, thetas, i: int, z, per_sender_theta: bool = False):
    """Limit arrival PGF of a weighted Galves-Löcherbach network.

    Returns ``prod_{j != i} exp(theta_i * (z ** mu_ij - 1))``. With
    ``per_sender_theta=True`` the ``j`` factor uses ``theta_j`` instead.
    """
    w = np.asarray(weights)
    thetas = np.asarray(thetas, dtype=float)
    if (w < 0).any() or not np.issubdtype(w.dtype, np.integer):
        raise ValueError("weights must be non-negative integers")
    z = np.asarray(z, dtype=float)
    log = 0.0
    for j in range(w.shape[0]):
        if j == i:
            continue
        th = thetas[j] if per_sender_theta else thetas[i]
        log = log + th * (z ** w[i, j] - 1.0)
    return np.exp(log)


def compound_poisson_pmf(law: CompoundPoissonLaw, n: int) -> TruncatedPmf:
    """Probabilities of ``0..n`` by the jump-size-weighted recursion.

    ``p_0 = exp(-rate)`` and ``p_m = (rate / m) * sum_k k f_k p_{m-k}``.
    """
    if n < 0:
        raise ValueError("truncation must be non-negative")
    f = law.jump_pmf
    kf = np.arange(f.size) * f
    p = np.zeros(n + 1)
    p[0] = math.exp(-law.rate)
    for m in range(1, n + 1):
        k = min(m, f.size - 1)
        p[m] = law.rate / m * np.dot(kf[1 : k + 1], p[m - 1 :: -1][:k])
    tail = max(0.0, 1.0 - p.sum())
    return TruncatedPmf(p, tail)


# lower incomplete gamma

_EPS = 1e-17
_TINY = 1e-300


def _gamma_series(a: float, x: float) -> float:
    """``sum_{n>=0} x^n / (a (a+1) ... (a+n))``, i.e. ``gamma(a, x) e^x x^-a``."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(100_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total
    raise ConvergenceError(f"incomplete gamma series did not converge for a={a}, x={x}")


def _gamma_cf(a: float, x: float) -> float:
    """Continued fraction for ``Gamma(a, x) e^x x^-a`` (modified Lentz)."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 100_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ConvergenceError(f"incomplete gamma continued fraction did not converge for a={a}, x={x}")


def _gamma_scaled(a: float, x: float) -> float:
    """``gamma(a, x) * e^x * x^-a`` without overflow for large ``a``."""
    if x < a + 1.0:
        return _gamma_series(a, x)
    full = math.exp(math.lgamma(a) + x - a * math.log(x))
    return full - _gamma_cf(a, x)


def lower_incomplete_gamma(a: float, c: float) -> float:
    """``gamma(a, c) = int_0^c t^(a-1) e^-t dt``.

    Series for ``c < a + 1``, continued fraction for the complement otherwise.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    if c < 0:
        raise ValueError("c must be non-negative")
    if c == 0:
        return 0.0
    if c < a + 1.0:
        return math.exp(a * math.log(c) - c) * _gamma_series(a, c)
    upper = math.exp(a * math.log(c) - c) * _gamma_cf(a, c)
    return math.exp(math.lgamma(a)) - upper


# counting-neuron illustration


@dataclass(frozen=True)
class CountingModelParams:
    b: float
    mu: float
    K: int
    beta: float
    a: float
    c: float
    residual: float
    sign_changes: int
    iterations: int


def _shape(beta: float, b: float, mu: float, K: int) -> tuple[float, float]:
    c = (K - 1) * beta / mu
    return c + b / mu, c


def counting_rate_defect(beta: float, b: float, mu: float, K: int) -> float:
    """``beta - mu c^a e^-c / gamma(a, c)`` at the given rate."""
    a, c = _shape(beta, b, mu, K)
    return beta - mu / _gamma_scaled(a, c)


def _check_counting_args(b: float, mu: float, K: int) -> None:
    if K < 2:
        raise ValueError(
            f"K={K}: with a single neuron c = (K-1) beta / mu = 0 and gamma(a, 0) = 0, "
            "so the rate equation is degenerate; K must be at least 2"
        )
    if b <= 0 or mu <= 0:
        raise ValueError("b and mu must be positive")


def solve_counting_rate(
    b: float, mu: float, K: int, tol: float = 1e-12, max_iter: int = 10_000, polish: int = 3
) -> CountingModelParams:
    """Stationary rate ``beta`` of the counting-neuron replica model.

    Bracket ``[1e-8, b + mu (K-1)]`` (doubled upwards if needed), bisection to
    relative width ``tol``, then up to ``polish`` fixed-point iterations, each
    kept only if it lowers the residual.
    """
    _check_counting_args(b, mu, K)

    def defect(beta: float) -> float:
        return counting_rate_defect(beta, b, mu, K)

    lo, hi = 1e-8, b + mu * (K - 1)
    if defect(lo) >= 0:
        raise ConvergenceError(f"defect is not negative at the lower bracket end {lo}")
    for _ in range(60):
        if defect(hi) > 0:
            break
        hi *= 2.0
    else:
        raise ConvergenceError(f"no sign change found up to beta={hi}")

    grid = np.geomspace(lo, hi, 400)
    signs = np.sign([defect(float(g)) for g in grid])
    sign_changes = int(np.count_nonzero(np.diff(signs) != 0))

    it = 0
    while hi - lo > tol * max(1.0, hi):
        it += 1
        if it > max_iter:
            raise ConvergenceError(f"bisection stopped with bracket [{lo!r}, {hi!r}]")
        mid = 0.5 * (lo + hi)
        if defect(mid) < 0:
            lo = mid
        else:
            hi = mid
    beta = 0.5 * (lo + hi)
    res = abs(defect(beta))
    for _ in range(polish):
        a, c = _shape(beta, b, mu, K)
        candidate = mu / _gamma_scaled(a, c)
        cres = abs(defect(candidate))
        if cres >= res:
            break
        beta, res = candidate, cres
    a, c = _shape(beta, b, mu, K)
    return CountingModelParams(b, mu, K, beta, a, c, res, sign_changes, it)


@dataclass(frozen=True)
class CountingOdeSolution:
    z: np.ndarray
    G: np.ndarray
    g1_error: float
    z_start: float
    nfev: int


class OdeIntegrationError(RuntimeError):
    pass


def integrate_counting_ode(params: CountingModelParams, step: float = 1e-2, z_start: float = 1e-3) -> CountingOdeSolution:
    """Integrate ``beta - mu z G' + (beta (K-1)(z-1) - b) G = 0`` on ``[0, 1]``.

    ``z = 0`` is a regular singular point. The analytic branch has
    ``G(0) = beta / (mu a)`` and coefficients ``g_n = c g_{n-1} / (n + a)``;
    the solution starts from that series (to second order) at ``z_start`` and
    continues with an adaptive explicit Runge-Kutta scheme (DOP853) whose step
    never exceeds ``step``.
    """
    beta, mu, b, K, a, c = params.beta, params.mu, params.b, params.K, params.a, params.c
    if not 0 < step <= 0.5:
        raise ValueError("step must lie in (0, 0.5]")
    g0 = beta / (mu * a)
    g1 = c * g0 / (1.0 + a)
    g2 = c * g1 / (2.0 + a)
    start = g0 + g1 * z_start + g2 * z_start**2
    p = beta * (K - 1)

    def rhs(z, G):
        return (beta + (p * (z - 1.0) - b) * G) / (mu * z)

    sol = solve_ivp(rhs, (z_start, 1.0), [start], method="DOP853", rtol=1e-12, atol=1e-14,
                    max_step=step, dense_output=True)
    if not sol.success:
        raise OdeIntegrationError(
            f"integration failed after {sol.nfev} evaluations at z={sol.t[-1]!r}: {sol.message}"
        )
    n = int(round(1.0 / step))
    z = np.linspace(0.0, 1.0, n + 1)
    G = np.empty_like(z)
    early = z < z_start
    G[early] = g0 + g1 * z[early] + g2 * z[early] ** 2
    G[~early] = sol.sol(z[~early])[0]
    G[-1] = sol.y[0, -1]
    return CountingOdeSolution(z, G, abs(G[-1] - 1.0), z_start, int(sol.nfev))


# vector-state partitions


def product_joint_pmf(pmfs: Sequence[Pmf]) -> np.ndarray:
    """Joint PMF array of independent coordinates."""
    out = np.array(1.0)
    for p in pmfs:
        out = np.multiply.outer(out, p.probs)
    return out


def _check_partition(partition: Sequence[Sequence[int]], K: int) -> list[tuple[int, ...]]:
    sets = [tuple(int(i) for i in s) for s in partition]
    flat = [i for s in sets for i in s]
    if any(not s for s in sets) or sorted(flat) != list(range(K)):
        raise ValueError(f"partition must split 0..{K - 1} into disjoint non-empty sets")
    return sets


def multivariate_vector_pgf(
    partition: Sequence[Sequence[int]],
    joint_pmfs: Sequence[np.ndarray | None],
    spec: FiapSpec,
    p: int,
    z: Sequence[float],
    destination_coords: bool = True,
    max_set_size: int = 3,
    max_support: int = 8,
) -> float:
    """Multivariate PGF of the exogenous arrivals to set ``p``.

    Evaluates

        exp( -sum_{q != p} sum_{n} sum_{s subset S_q} pi_{q,s,n} (1 - prod_{i in s} prod_k z_k ** h_ki(n_i)) )

    with ``pi_{q,s,n} = P[X_q = n] prod_{j in s} sigma_j(n_j) prod_{j in S_q \\ s} (1 - sigma_j(n_j))``.
    The inner product runs over ``k`` in the receiving set ``S_p`` by default;
    ``destination_coords=False`` runs it over ``S_q`` instead.
    ``joint_pmfs[q]`` is an array with one axis per member of ``S_q``, in the
    order listed in ``partition``.
    """
    sets = _check_partition(partition, spec.K)
    z = np.asarray(z, dtype=float)
    if z.shape != (spec.K,):
        raise ValueError(f"z must have one entry per node ({spec.K})")
    total = 0.0
    for q, Sq in enumerate(sets):
        if q == p:
            continue
        joint = np.asarray(joint_pmfs[q], dtype=float)
        if joint.ndim != len(Sq):
            raise ValueError(f"joint law of set {q} must have {len(Sq)} axes")
        if len(Sq) > max_set_size or max(joint.shape) > max_support:
            raise BudgetError(
                f"set {q}: size {len(Sq)} / support {max(joint.shape)} exceeds budget "
                f"({max_set_size} / {max_support})"
            )
        if abs(joint.sum() - 1.0) > 1e-9 or (joint < 0).any():
            raise ValueError(f"joint law of set {q} is not a probability array")
        dest = sets[p] if destination_coords else Sq
        for n in itertools.product(*(range(d) for d in joint.shape)):
            prob = joint[n]
            if prob == 0.0:
                continue
            sig = [spec.sigma[j](n[r]) for r, j in enumerate(Sq)]
            for mask in range(1, 1 << len(Sq)):
                pi = prob
                prod = 1.0
                for r, j in enumerate(Sq):
                    if mask >> r & 1:
                        pi *= sig[r]
                        for k in dest:
                            if k != j:
                                prod *= z[k] ** spec.h[k][j](n[r])
                    else:
                        pi *= 1.0 - sig[r]
                total += pi * (1.0 - prod)
    return math.exp(-total)
