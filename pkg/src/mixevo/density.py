"""Infinite-population density map and the sampling-error estimates around it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chains import LocalTransitionMatrix
from .errors import NonConvergenceError, ParameterError
from .genotype import check_distribution

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 100_000


def quadratic_map(p, B: LocalTransitionMatrix) -> np.ndarray:
    """p'(z) = sum_{u,v} p(u) p(v) sum_w b(u, v, w, z)."""
    p = check_distribution(p, what="type distribution")
    if p.size != B.r:
        raise ParameterError(f"distribution over {p.size} types, tensor over {B.r}")
    out = np.einsum("u,v,uvz->z", p, p, B.b.sum(axis=2))
    if abs(out.sum() - 1.0) > 1e-9 or np.any(out < -1e-15):
        raise ParameterError(f"tensor does not map distributions to distributions (mass {out.sum():.15g})")
    return np.clip(out, 0.0, None)


@dataclass
class Equilibrium:
    rho: np.ndarray
    steps: int
    residual: float
    history: list = field(default_factory=list, repr=False)


def iterate_to_equilibrium(p0, B: LocalTransitionMatrix, tol: float = DEFAULT_TOL,
                           max_iter: int = DEFAULT_MAX_ITER, keep_history: bool = False) -> Equilibrium:
    """Iterate g from p0 until the L-inf step change is <= tol.

    The returned iterate is checked to satisfy |g(rho) - rho| <= 10 tol.
    """
    if tol <= 0:
        raise ParameterError("tol must be positive")
    p = check_distribution(p0, what="initial distribution")
    history = [p] if keep_history else []
    for step in range(1, max_iter + 1):
        nxt = quadratic_map(p, B)
        if keep_history:
            history.append(nxt)
        change = float(np.max(np.abs(nxt - p)))
        p = nxt
        if change <= tol:
            residual = float(np.max(np.abs(quadratic_map(p, B) - p)))
            if residual > 10 * tol:
                raise NonConvergenceError(
                    f"step change {change:.3g} but fixed-point residual {residual:.3g} exceeds {10 * tol:.3g}",
                    last=p, steps=step,
                )
            return Equilibrium(p, step, residual, history)
    raise NonConvergenceError(f"no equilibrium within {max_iter} iterations", last=p, steps=max_iter)


@dataclass(frozen=True)
class ChernoffReport:
    s: int
    eps: float
    r: int
    alpha_prime: float
    pair_bound: float
    union_bound: float
    abs_error_bound: float
    confidence: float
    warnings: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def chernoff_sample_error(p, s: int, eps: float) -> ChernoffReport:
    """Error bounds for estimating the next density from s sampled pairs.

    Uses the pair-independent exponent alpha' = eps^2 s / 3. Per pair the
    count deviates by more than eps*s with probability < 2 e^-alpha'; for
    some pair, < 2 r^2 e^-alpha'. With the complement probability every
    coordinate of the estimate is within eps*r.
    """
    if s < 1:
        raise ParameterError("sample size s must be >= 1")
    if eps <= 0:
        raise ParameterError("eps must be positive")
    p = check_distribution(p, what="type distribution")
    r = p.size
    alpha = eps * eps * s / 3.0
    pair = 2.0 * math.exp(-alpha)
    union = 2.0 * r * r * math.exp(-alpha)
    warnings = []
    q = s**0.25
    if not q > 3.0 * float(np.max(np.outer(p, p))):
        warnings.append(f"s^(1/4) = {q:.6g} does not exceed 3 max p(u)p(v)")
    if s**0.125 < r:
        warnings.append(f"s^(1/8) = {s ** 0.125:.6g} is below r = {r}")
    return ChernoffReport(s, eps, r, alpha, pair, union, eps * r, 1.0 - union, tuple(warnings))


def pair_exceedance_frequency(p, s: int, eps: float, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo frequency of |s(u,v) - p(u)p(v)s| > eps*s, per pair (u, v).

    Each trial draws s pairs i.i.d. from p x p.
    """
    p = check_distribution(p, what="type distribution")
    pp = np.outer(p, p).ravel()
    counts = rng.multinomial(s, pp, size=trials)
    exceed = np.abs(counts - pp[None, :] * s) > eps * s
    return exceed.mean(axis=0).reshape(p.size, p.size)


def reachable_generations_estimate(N: int, n: int) -> float:
    """Generations after which all N populations may be reachable: log N / (4 log n)."""
    if n < 2:
        raise ParameterError(f"population size must be >= 2, got {n}")
    if N < 1:
        raise ParameterError(f"state count must be >= 1, got {N}")
    return math.log(N) / (4.0 * math.log(n))
