"""Covariance matrix adaptation evolution strategy (rank-one + rank-mu, CSA).

Follows the standard (mu/mu_w, lambda) formulation with default strategy
parameters.  Sampling for generation ``g`` draws from a generator seeded
with ``(seed, g)``, so results do not depend on evaluation order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

log = logging.getLogger(__name__)

Objective = Callable[[NDArray[np.float64]], float]
MapFn = Callable[[Objective, Iterable[NDArray[np.float64]]], Iterable[float]]


def default_population(dim: int) -> int:
    return 4 + int(np.floor(3 * np.log(dim)))


@dataclass(frozen=True)
class CmaParams:
    """Strategy constants derived from the dimension and population size."""

    dim: int
    lam: int
    mu: int
    weights: NDArray[np.float64]
    mu_eff: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_1: float
    c_mu: float
    chi_n: float

    @classmethod
    def default(cls, dim: int, lam: int | None = None) -> "CmaParams":
        lam = lam or default_population(dim)
        mu = lam // 2
        w = np.log((lam + 1) / 2) - np.log(np.arange(1, mu + 1))
        w /= w.sum()
        mu_eff = 1.0 / np.sum(w**2)
        c_sigma = (mu_eff + 2) / (dim + mu_eff + 5)
        d_sigma = 1 + 2 * max(0.0, np.sqrt((mu_eff - 1) / (dim + 1)) - 1) + c_sigma
        c_c = (4 + mu_eff / dim) / (dim + 4 + 2 * mu_eff / dim)
        c_1 = 2 / ((dim + 1.3) ** 2 + mu_eff)
        c_mu = min(1 - c_1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((dim + 2) ** 2 + mu_eff))
        chi_n = np.sqrt(dim) * (1 - 1 / (4 * dim) + 1 / (21 * dim**2))
        return cls(dim, lam, mu, w, float(mu_eff), c_sigma, d_sigma, c_c, c_1, c_mu, float(chi_n))


@dataclass(frozen=True, eq=False)
class CmaState:
    mean: NDArray[np.float64]
    sigma: float
    cov: NDArray[np.float64]
    p_sigma: NDArray[np.float64]
    p_c: NDArray[np.float64]
    generation: int
    params: CmaParams
    seed: int = 0

    @classmethod
    def initial(cls, x0: ArrayLike, sigma0: float, seed: int = 0, lam: int | None = None) -> "CmaState":
        x0 = np.asarray(x0, dtype=float).copy()
        d = x0.shape[0]
        if not sigma0 > 0:
            raise ValueError("sigma0 must be positive")
        return cls(x0, float(sigma0), np.eye(d), np.zeros(d), np.zeros(d), 0, CmaParams.default(d, lam), seed)

    @property
    def lam(self) -> int:
        return self.params.lam

    def eigen(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """``(B, D)`` with ``cov = B diag(D**2) B^T``; eigenvalues floored if needed."""
        C = 0.5 * (self.cov + self.cov.T)
        evals, B = np.linalg.eigh(C)
        floor = 1e-14 * max(float(evals.max()), 1e-300)
        if evals.min() <= floor:
            log.warning("covariance lost positive definiteness; flooring eigenvalues")
            evals = np.maximum(evals, floor)
        return B, np.sqrt(evals)

    def restarted(self, sigma_factor: float = 2.0) -> "CmaState":
        """Same distribution with ``sigma`` inflated, for warm restarts."""
        return replace(self, sigma=self.sigma * sigma_factor)


@dataclass
class StepResult:
    state: CmaState
    best_x: NDArray[np.float64]
    best_cost: float
    costs: NDArray[np.float64]


def sample(state: CmaState) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Candidates ``x`` and their normalized steps ``y`` (``x = mean + sigma y``)."""
    rng = np.random.default_rng([state.seed, state.generation])
    B, D = state.eigen()
    z = rng.standard_normal((state.lam, state.mean.shape[0]))
    y = (z * D) @ B.T
    return state.mean + state.sigma * y, y


def tell(state: CmaState, y: NDArray[np.float64], costs: NDArray[np.float64]) -> CmaState:
    """Update mean, paths, covariance and step size from ranked candidates."""
    prm = state.params
    costs = np.asarray(costs, dtype=float)
    if np.all(costs == costs[0]):
        # no ranking information: keep the distribution
        return replace(state, generation=state.generation + 1)
    order = np.argsort(costs, kind="stable")
    y_sel = y[order[: prm.mu]]
    y_w = prm.weights @ y_sel
    mean = state.mean + state.sigma * y_w

    B, D = state.eigen()
    c_inv_sqrt_yw = B @ ((B.T @ y_w) / D)
    cs = prm.c_sigma
    p_sigma = (1 - cs) * state.p_sigma + np.sqrt(cs * (2 - cs) * prm.mu_eff) * c_inv_sqrt_yw
    g = state.generation + 1
    norm_ps = np.linalg.norm(p_sigma)
    h_sigma = norm_ps / np.sqrt(1 - (1 - cs) ** (2 * g)) < (1.4 + 2 / (prm.dim + 1)) * prm.chi_n
    cc = prm.c_c
    p_c = (1 - cc) * state.p_c + h_sigma * np.sqrt(cc * (2 - cc) * prm.mu_eff) * y_w
    rank_mu = (y_sel * prm.weights[:, None]).T @ y_sel
    delta_h = (1 - h_sigma) * cc * (2 - cc)
    cov = (
        (1 - prm.c_1 - prm.c_mu + prm.c_1 * delta_h) * state.cov
        + prm.c_1 * np.outer(p_c, p_c)
        + prm.c_mu * rank_mu
    )
    cov = 0.5 * (cov + cov.T)
    sigma = state.sigma * np.exp((cs / prm.d_sigma) * (norm_ps / prm.chi_n - 1))
    return replace(state, mean=mean, sigma=float(sigma), cov=cov, p_sigma=p_sigma, p_c=p_c, generation=g)


def cma_step(state: CmaState, objective: Objective, map_fn: MapFn = map) -> StepResult:
    """Sample, evaluate and update one generation."""
    x, y = sample(state)
    costs = np.fromiter(map_fn(objective, list(x)), dtype=float, count=state.lam)
    new_state = tell(state, y, costs)
    i = int(np.argmin(costs))
    return StepResult(new_state, x[i].copy(), float(costs[i]), costs)


@dataclass
class HistoryRow:
    generation: int
    evaluations: int
    best_cost: float
    mean_cost: float
    sigma: float


@dataclass
class OptimizeResult:
    best_x: NDArray[np.float64]
    best_cost: float
    evaluations: int
    state: CmaState
    history: list[HistoryRow] = field(default_factory=list)

    def history_csv(self) -> str:
        lines = ["generation,evaluations,best_cost,mean_cost,sigma"]
        for h in self.history:
            lines.append(f"{h.generation},{h.evaluations},{h.best_cost:.17g},{h.mean_cost:.17g},{h.sigma:.17g}")
        return "\n".join(lines) + "\n"


def optimize(
    objective: Objective,
    x0: ArrayLike,
    budget: int,
    sigma0: float = 0.1,
    seed: int = 0,
    state: CmaState | None = None,
    map_fn: MapFn = map,
    lam: int | None = None,
    ftarget: float | None = None,
) -> OptimizeResult:
    """Minimize ``objective`` with at most ``budget`` evaluations.

    ``x0`` is always evaluated first and is the incumbent; pass ``state`` to
    continue a previous search (its mean and covariance are reused).
    """
    if budget < 1:
        raise ValueError("budget must be positive")
    x0 = np.asarray(x0, dtype=float)
    if state is None:
        state = CmaState.initial(x0, sigma0, seed, lam)
    best_x = x0.copy()
    best_cost = float(objective(x0))
    evals = 1
    history = [HistoryRow(state.generation, evals, best_cost, best_cost, state.sigma)]
    while evals + state.lam <= budget:
        res = cma_step(state, objective, map_fn)
        evals += state.lam
        state = res.state
        if res.best_cost < best_cost:
            best_cost, best_x = res.best_cost, res.best_x
        history.append(HistoryRow(state.generation, evals, best_cost, float(np.mean(res.costs)), state.sigma))
        if ftarget is not None and best_cost <= ftarget:
            break
        if state.sigma < 1e-20:
            break
    return OptimizeResult(best_x, best_cost, evals, state, history)


def sphere(x: Sequence[float]) -> float:
    x = np.asarray(x)
    return float(x @ x)
