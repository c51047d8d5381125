"""Exact transition matrices for the evolutionary dynamics.

Population chains are indexed by count vectors in colexicographic order;
singleton (bitstring) chains by the integer value of the string.
"""

from __future__ import annotations

import itertools
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InfeasibleError, ParameterError
from .genotype import (
    Fitness,
    Population,
    TypeSpace,
    balanced_fitness,
    population_count,
    selection_probability,
)

DEFAULT_STATE_CAP = 200_000
STATE_CAP_ENV = "MIXEVO_STATE_CAP"
ROW_TOL = 1e-10

PAIRWISE = "pairwise"
TOY_GA = "toy_ga"
SINGLE_BIT = "single_bit"
METROPOLIS = "metropolis"
RULES = (PAIRWISE, TOY_GA, SINGLE_BIT, METROPOLIS)


def state_cap() -> int:
    raw = os.environ.get(STATE_CAP_ENV)
    if raw is None:
        return DEFAULT_STATE_CAP
    try:
        cap = int(raw)
    except ValueError:
        raise ParameterError(f"{STATE_CAP_ENV}={raw!r} is not an integer") from None
    if cap < 1:
        raise ParameterError(f"{STATE_CAP_ENV} must be positive")
    return cap


def _check_size(size: int, cap: int | None, what: str) -> None:
    cap = state_cap() if cap is None else cap
    if size > cap:
        raise InfeasibleError(f"{what} has N = {size} states, above the cap of {cap}", size=size)


@dataclass(frozen=True, eq=False)
class LocalTransitionMatrix:
    """Offspring law b[u, v, w, z]: parents (u, v) produce the pair (w, z)."""

    b: np.ndarray

    def __post_init__(self):
        b = np.array(self.b, dtype=float)
        if b.ndim != 4 or len(set(b.shape)) != 1 or b.shape[0] < 2:
            raise ParameterError(f"local transition matrix must be r x r x r x r, got shape {b.shape}")
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise ParameterError("local transition matrix has negative or non-finite entries")
        sums = b.sum(axis=(2, 3))
        bad = np.argwhere(np.abs(sums - 1.0) > 1e-12)
        if bad.size:
            u, v = bad[0]
            raise ParameterError(f"offspring law of parents ({u}, {v}) sums to {sums[u, v]:.15g}, not 1")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    @property
    def r(self) -> int:
        return self.b.shape[0]

    @classmethod
    def identity(cls, r: int) -> "LocalTransitionMatrix":
        b = np.zeros((r,) * 4)
        for u in range(r):
            for v in range(r):
                b[u, v, u, v] = 1.0
        return cls(b)

    @classmethod
    def from_entries(cls, r: int, entries) -> "LocalTransitionMatrix":
        b = np.zeros((r,) * 4)
        for u, v, w, z, value in entries:
            b[u, v, w, z] += value
        return cls(b)

    def offspring(self, u: int, v: int):
        """Nonzero (w, z, prob) triples for parents (u, v), in index order."""
        block = self.b[u, v]
        return [(int(w), int(z), float(block[w, z])) for w, z in zip(*np.nonzero(block))]


def dictatorial_tensor(eps: float) -> LocalTransitionMatrix:
    """Two-type tensor that mostly copies a parent type onto both offspring."""
    _check_dictator_eps(eps)
    h = 0.5 - eps
    return LocalTransitionMatrix.from_entries(
        2,
        [
            (0, 0, 0, 0, 1 - 4 * eps), (0, 0, 1, 0, eps), (0, 0, 0, 1, eps), (0, 0, 1, 1, 2 * eps),
            (0, 1, 1, 0, h), (0, 1, 0, 1, h), (0, 1, 0, 0, eps), (0, 1, 1, 1, eps),
            (1, 0, 0, 1, h), (1, 0, 1, 0, h), (1, 0, 1, 1, eps), (1, 0, 0, 0, eps),
            (1, 1, 1, 1, 1 - 4 * eps), (1, 1, 0, 1, eps), (1, 1, 1, 0, eps), (1, 1, 0, 0, 2 * eps),
        ],
    )


def _check_dictator_eps(eps: float) -> None:
    if not (0 < eps <= 0.125):
        raise ParameterError(f"dictatorial eps must lie in (0, 1/8], got {eps}")


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """Row-stochastic transition matrix over an explicit state list."""

    states: list
    Q: np.ndarray
    labels: dict = field(default_factory=dict)
    space: TypeSpace | None = None

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ParameterError(f"transition matrix must be square, got shape {Q.shape}")
        if Q.shape[0] != len(self.states):
            raise ParameterError(f"{len(self.states)} states but a {Q.shape[0]}x{Q.shape[0]} matrix")
        if np.any(Q < 0) or not np.all(np.isfinite(Q)):
            raise ParameterError("transition matrix has negative or non-finite entries")
        rows = Q.sum(axis=1)
        bad = np.flatnonzero(np.abs(rows - 1.0) > ROW_TOL)
        if bad.size:
            raise ParameterError(f"row {bad[0]} of the transition matrix sums to {rows[bad[0]]:.15g}")
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "states", list(self.states))

    @property
    def N(self) -> int:
        return self.Q.shape[0]

    def index(self) -> dict:
        return {_state_key(s): i for i, s in enumerate(self.states)}

    def index_of(self, state) -> int:
        return self.index()[_state_key(state)]

    def state_label(self, i: int) -> str:
        s = self.states[i]
        if isinstance(s, Population):
            fmt = self.space.label if self.space is not None else str
            return "{" + ",".join(fmt(u) for u in s.members()) + "}"
        if isinstance(s, (int, np.integer)) and self.space is not None:
            return self.space.label(int(s))
        return str(s)

    def reorder(self, states: Sequence) -> "MarkovChain":
        """Same chain with its states permuted into the given order."""
        idx = self.index()
        perm = [idx[_state_key(s)] for s in states]
        if sorted(perm) != list(range(self.N)):
            raise ParameterError("reorder needs a permutation of the chain's states")
        Q = self.Q[np.ix_(perm, perm)]
        return MarkovChain([self.states[i] for i in perm], Q, dict(self.labels), self.space)

    def to_json(self) -> dict:
        def enc(s):
            if isinstance(s, Population):
                return list(s.counts)
            if isinstance(s, (int, np.integer)) and self.space is not None and self.space.is_bitstring:
                return self.space.label(int(s))
            return s

        return {
            "states": [enc(s) for s in self.states],
            "Q": self.Q.tolist(),
            "labels": _jsonable(self.labels),
        }


def _state_key(s):
    if isinstance(s, Population):
        return ("P", s.counts)
    if isinstance(s, (list, tuple)):
        return ("P", tuple(int(c) for c in s))
    if isinstance(s, np.integer):
        return int(s)
    return s


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass(frozen=True)
class GaDynamics:
    """One of the update rules together with the parameters it needs.

    ``replacement`` applies to the pairwise rule ("with" or "without"),
    ``mutation`` to the toy GA ("lazy" or "always"), ``lazy`` to the
    Metropolis walk.
    """

    space: TypeSpace
    fitness: Fitness
    n: int
    rule: str
    tensor: LocalTransitionMatrix | None = None
    replacement: str = "with"
    mutation: str = "lazy"
    lazy: bool = False

    def __post_init__(self):
        if self.rule not in RULES:
            raise ParameterError(f"unknown update rule {self.rule!r}")
        if self.fitness.r != self.space.r:
            raise ParameterError(f"fitness over {self.fitness.r} types, type space has {self.space.r}")
        if self.n < 1:
            raise ParameterError("population size must be >= 1")
        if self.rule == PAIRWISE:
            if self.tensor is None or self.tensor.r != self.space.r:
                raise ParameterError("pairwise rule needs a local transition matrix over the type space")
            if self.n < 2:
                raise ParameterError("pairwise rule needs n >= 2")
            if self.replacement not in ("with", "without"):
                raise ParameterError(f"replacement must be 'with' or 'without', got {self.replacement!r}")
        if self.rule in (TOY_GA, SINGLE_BIT, METROPOLIS) and not self.space.is_bitstring:
            raise ParameterError(f"rule {self.rule} needs a bitstring type space")
        if self.rule in (SINGLE_BIT, METROPOLIS) and self.n != 1:
            raise ParameterError(f"rule {self.rule} runs on singleton populations")
        if self.rule == TOY_GA and self.mutation not in ("lazy", "always"):
            raise ParameterError(f"mutation must be 'lazy' or 'always', got {self.mutation!r}")

    @property
    def l(self) -> int:
        return self.space.length


def toy_ga_dynamics(l: int, mutation: str = "lazy") -> GaDynamics:
    check_toy_ga_length(l)
    return GaDynamics(TypeSpace.bitstrings(l), balanced_fitness(l), math.isqrt(l), TOY_GA, mutation=mutation)


def pairwise_dynamics(tensor: LocalTransitionMatrix, n: int, fitness: Fitness | None = None,
                      replacement: str = "with") -> GaDynamics:
    fitness = Fitness.constant(tensor.r) if fitness is None else fitness
    return GaDynamics(TypeSpace.abstract(tensor.r), fitness, n, PAIRWISE, tensor=tensor, replacement=replacement)


def check_toy_ga_length(l: int) -> None:
    if l < 4 or l % 2 or math.isqrt(l) ** 2 != l:
        raise ParameterError(f"toy GA needs an even perfect-square length, got l={l}")


def enumerate_states(n: int, r: int, cap: int | None = None) -> list[Population]:
    """All count vectors over r types summing to n, colex ascending."""
    _check_size(population_count(n, r), cap, f"population space (n={n}, r={r})")
    states = []
    for combo in itertools.combinations_with_replacement(range(r), n):
        counts = [0] * r
        for u in combo:
            counts[u] += 1
        states.append(tuple(counts))
    states.sort(key=lambda c: c[::-1])
    return [Population(c) for c in states]


def _population_chain(states, rows, labels, space) -> MarkovChain:
    index = {s.counts: i for i, s in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    for i, row in enumerate(rows):
        for counts, prob in row.items():
            Q[i, index[counts]] += prob
    return MarkovChain(states, Q, labels, space)


def build_pairwise_update_chain(dyn: GaDynamics, cap: int | None = None) -> MarkovChain:
    """Exact chain of the select-a-pair, replace-by-offspring rule.

    Ordered parent pairs (u, v) are drawn by fitness-proportional selection;
    their offspring (w, z) replace them. With n = 2 and replacement the
    offspring pair is the whole next generation. With n > 2 a pair that
    needs two copies of a type present once is infeasible, and the pair
    law is renormalized over feasible pairs.
    """
    if dyn.rule != PAIRWISE:
        raise ParameterError(f"expected the pairwise rule, got {dyn.rule}")
    r, n, B, f = dyn.space.r, dyn.n, dyn.tensor, dyn.fitness
    states = enumerate_states(n, r, cap)
    renormalized = 0
    rows = []
    for P in states:
        pairs = _parent_pairs(P, f, dyn.replacement)
        if dyn.replacement == "with" and n > 2:
            feasible = [(u, v, w) for u, v, w in pairs if u != v or P[u] >= 2]
            if len(feasible) < len(pairs):
                renormalized += 1
                total = math.fsum(w for _, _, w in feasible)
                pairs = [(u, v, w / total) for u, v, w in feasible]
        row = defaultdict(float)
        for u, v, weight in pairs:
            for w, z, prob in B.offspring(u, v):
                if n == 2 and dyn.replacement == "with":
                    nxt = [0] * r
                else:
                    nxt = list(P.counts)
                    nxt[u] -= 1
                    nxt[v] -= 1
                nxt[w] += 1
                nxt[z] += 1
                row[tuple(nxt)] += weight * prob
        rows.append(row)
    labels = {
        "dynamic": PAIRWISE,
        "n": n,
        "r": r,
        "replacement": dyn.replacement,
        "renormalized_states": renormalized,
    }
    return _population_chain(states, rows, labels, dyn.space)


def _parent_pairs(P: Population, f: Fitness, replacement: str):
    p = selection_probability(P, f)
    support = P.support()
    if replacement == "with":
        return [(u, v, p[u] * p[v]) for u in support for v in support]
    pairs = []
    for u in support:
        rest = list(P.counts)
        rest[u] -= 1
        weights = {v: f[v] * rest[v] for v in support if rest[v]}
        total = math.fsum(weights.values())
        pairs.extend((u, v, p[u] * w / total) for v, w in weights.items())
    return pairs


DICTATOR_STATES = (Population((1, 1)), Population((2, 0)), Population((0, 2)))


def build_dictatorial_chain(eps: float) -> MarkovChain:
    """The three-state dictatorial-coin chain, states [{0,1}, {0,0}, {1,1}]."""
    _check_dictator_eps(eps)
    Q = np.array([
        [0.5, 0.25, 0.25],
        [2 * eps, 1 - 4 * eps, 2 * eps],
        [2 * eps, 2 * eps, 1 - 4 * eps],
    ])
    labels = {"dynamic": "dictatorial", "eps": eps, "n": 2, "r": 2}
    return MarkovChain(list(DICTATOR_STATES), Q, labels, TypeSpace.abstract(2))


def _flip_outcomes(l: int, mutation: str):
    # (position or None, probability) for one offspring mutation
    if mutation == "always":
        return [(k, 1.0 / l) for k in range(l)]
    return [(None, 0.5)] + [(k, 0.5 / l) for k in range(l)]


def _flip(x: int, k, l: int) -> int:
    return x if k is None else x ^ (1 << (l - 1 - k))


def build_toy_ga_chain(l: int, mutation: str = "lazy", cap: int | None = None) -> MarkovChain:
    """Exact chain of the toy GA on sqrt(l) strings of length l.

    Half the time nothing happens. Otherwise an ordered slot pair (i, j) is
    drawn by fitness-proportional selection (i = j allowed), one uniform bit
    position is swapped between the two strings, and each offspring gets one
    mutation. ``mutation="lazy"`` picks a uniform position and flips it with
    probability 1/2; ``"always"`` always flips the chosen position.
    """
    dyn = toy_ga_dynamics(l, mutation)
    n, r = dyn.n, dyn.space.r
    _check_size(population_count(n, r), cap, f"toy GA space (l={l})")
    states = enumerate_states(n, r, cap)
    f = dyn.fitness.values
    muts = _flip_outcomes(l, mutation)
    rows = []
    for P in states:
        members = P.members()
        total_f = math.fsum(f[m] for m in members)
        row = defaultdict(float)
        row[P.counts] += 0.5
        for i, j in itertools.product(range(n), repeat=2):
            w_pair = 0.5 * f[members[i]] * f[members[j]] / total_f**2
            if i == j:
                for (a, pa), (b, pb) in itertools.product(muts, muts):
                    nxt = list(members)
                    nxt[i] = _flip(_flip(members[i], a, l), b, l)
                    row[_counts(nxt, r)] += w_pair * pa * pb
                continue
            for k in range(l):
                x, y = members[i], members[j]
                bit = 1 << (l - 1 - k)
                if (x ^ y) & bit:
                    x, y = x ^ bit, y ^ bit
                for (a, pa), (b, pb) in itertools.product(muts, muts):
                    nxt = list(members)
                    nxt[i] = _flip(x, a, l)
                    nxt[j] = _flip(y, b, l)
                    row[_counts(nxt, r)] += w_pair * pa * pb / l
        rows.append(row)
    labels = {"dynamic": TOY_GA, "l": l, "n": n, "r": r, "mutation": mutation}
    return _population_chain(states, rows, labels, dyn.space)


def _counts(members, r: int) -> tuple:
    counts = [0] * r
    for m in members:
        counts[m] += 1
    return tuple(counts)


def build_single_bit_walk(l: int, cap: int | None = None) -> MarkovChain:
    """Lazy hypercube walk: pick a uniform position, flip it with prob 1/2."""
    if l < 1:
        raise ParameterError(f"walk length must be >= 1, got {l}")
    size = 2**l
    _check_size(size, cap, f"hypercube (l={l})")
    Q = np.zeros((size, size))
    for x in range(size):
        Q[x, x] = 0.5
        for k in range(l):
            Q[x, x ^ (1 << k)] += 0.5 / l
    labels = {"dynamic": SINGLE_BIT, "l": l}
    return MarkovChain(list(range(size)), Q, labels, TypeSpace(size, l) if l >= 1 else None)


def build_metropolis_chain(f: Fitness, l: int, lazy: bool = False, cap: int | None = None) -> MarkovChain:
    """Single-bit-flip proposals filtered by the acceptance ratio f(y)/f(x)."""
    size = 2**l
    _check_size(size, cap, f"hypercube (l={l})")
    if f.r != size:
        raise ParameterError(f"fitness over {f.r} types, bitstrings of length {l} need {size}")
    fv = f.values
    Q = np.zeros((size, size))
    for x in range(size):
        for k in range(l):
            y = x ^ (1 << k)
            Q[x, y] = min(1.0, fv[y] / fv[x]) / l
        Q[x, x] = max(0.0, 1.0 - Q[x].sum())
    labels = {"dynamic": METROPOLIS, "l": l, "lazy": False}
    chain = MarkovChain(list(range(size)), Q, labels, TypeSpace(size, l))
    return lazy_transform(chain) if lazy else chain


def lazy_transform(chain: MarkovChain) -> MarkovChain:
    """(I + Q) / 2 on the same state list."""
    Q = 0.5 * (np.eye(chain.N) + chain.Q)
    labels = dict(chain.labels)
    labels["lazy"] = True
    labels["transforms"] = list(labels.get("transforms", [])) + ["lazy"]
    return replace(chain, Q=Q, labels=labels)


def build_chain(dyn: GaDynamics, cap: int | None = None) -> MarkovChain:
    """Exact chain for any dynamic, where the state space is under the cap."""
    if dyn.rule == PAIRWISE:
        return build_pairwise_update_chain(dyn, cap)
    if dyn.rule == TOY_GA:
        return build_toy_ga_chain(dyn.l, dyn.mutation, cap)
    if dyn.rule == SINGLE_BIT:
        return build_single_bit_walk(dyn.l, cap)
    return build_metropolis_chain(dyn.fitness, dyn.l, dyn.lazy, cap)


def single_bit_dynamics(l: int) -> GaDynamics:
    space = TypeSpace.bitstrings(l) if l >= 1 else None
    return GaDynamics(space, Fitness.constant(space.r), 1, SINGLE_BIT)


def metropolis_dynamics(f: Fitness, l: int, lazy: bool = False) -> GaDynamics:
    return GaDynamics(TypeSpace.bitstrings(l), f, 1, METROPOLIS, lazy=lazy)
