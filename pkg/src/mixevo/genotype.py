"""Individuals, fitness tables, populations and the selection formulas."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError

SUM_TOL = 1e-12


@dataclass(frozen=True)
class TypeSpace:
    """The universe of genotypes, either abstract indices or bitstrings.

    Bitstring genotypes are indexed by their integer value with the first
    bit most significant, so ``"0011"`` is type 3.
    """

    r: int
    length: int | None = None

    def __post_init__(self):
        if self.r < 2:
            raise ParameterError(f"type space needs r >= 2, got {self.r}")
        if self.length is not None:
            if self.length < 1:
                raise ParameterError(f"bitstring length must be >= 1, got {self.length}")
            if self.r != 2**self.length:
                raise ParameterError(f"bitstring space of length {self.length} has r = 2^{self.length}, not {self.r}")

    @classmethod
    def abstract(cls, r: int) -> "TypeSpace":
        return cls(r)

    @classmethod
    def bitstrings(cls, length: int) -> "TypeSpace":
        return cls(2**length, length)

    @property
    def is_bitstring(self) -> bool:
        return self.length is not None

    def label(self, u: int) -> str:
        if self.length is None:
            return str(u)
        return format(u, f"0{self.length}b")

    def parse(self, text: str) -> int:
        if self.length is None:
            return int(text)
        if len(text) != self.length or set(text) - {"0", "1"}:
            raise ParameterError(f"{text!r} is not a bitstring of length {self.length}")
        return int(text, 2)


def ones(u: int) -> int:
    return bin(u).count("1")


@dataclass(frozen=True, eq=False)
class Fitness:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ParameterError("fitness must be a 1-d table over at least 2 types")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ParameterError("fitness values must be finite and strictly positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def r(self) -> int:
        return self.values.size

    def __getitem__(self, u):
        return self.values[u]

    def __eq__(self, other):
        return isinstance(other, Fitness) and np.array_equal(self.values, other.values)

    __hash__ = None

    @classmethod
    def constant(cls, r: int, c: float = 1.0) -> "Fitness":
        return cls(np.full(r, float(c)))

    @classmethod
    def from_function(cls, space: TypeSpace, fn) -> "Fitness":
        return cls(np.array([fn(u) for u in range(space.r)], dtype=float))


def balanced_fitness(length: int) -> Fitness:
    """1 for strings with exactly length/2 ones, 1/2 otherwise."""
    return Fitness.from_function(
        TypeSpace.bitstrings(length), lambda u: 1.0 if 2 * ones(u) == length else 0.5
    )


def two_pow_i_squared(length: int) -> Fitness:
    return Fitness.from_function(TypeSpace.bitstrings(length), lambda u: 2.0 ** (ones(u) ** 2))


def ones_count(length: int) -> Fitness:
    # shifted by one to keep 00...0 strictly positive
    return Fitness.from_function(TypeSpace.bitstrings(length), lambda u: 1.0 + ones(u))


@dataclass(frozen=True)
class Population:
    """Count vector over the type space; ``counts[u]`` copies of type u."""

    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ParameterError(f"negative count in population {counts}")
        if sum(counts) < 1:
            raise ParameterError("population must contain at least one individual")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_members(cls, members: Iterable[int], r: int) -> "Population":
        counts = [0] * r
        for u in members:
            counts[u] += 1
        return cls(tuple(counts))

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def r(self) -> int:
        return len(self.counts)

    def members(self) -> list[int]:
        return [u for u, c in enumerate(self.counts) for _ in range(c)]

    def support(self) -> list[int]:
        return [u for u, c in enumerate(self.counts) if c]

    def __getitem__(self, u: int) -> int:
        return self.counts[u]


def check_distribution(p, tol: float = SUM_TOL, what: str = "distribution") -> np.ndarray:
    """Validate a probability vector and return it as a read-only array."""
    p = np.array(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ParameterError(f"{what} must be a non-empty 1-d vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ParameterError(f"{what} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > tol:
        raise ParameterError(f"{what} sums to {p.sum():.17g}, not 1")
    p.setflags(write=False)
    return p


def normalized_fitness(f: Fitness) -> np.ndarray:
    return check_distribution(f.values / f.values.sum())


def selection_probability(population: Population, f: Fitness) -> np.ndarray:
    """Fitness-proportional selection: p(u) = f(u)P(u) / sum_v f(v)P(v)."""
    if population.r != f.r:
        raise ParameterError(f"population over {population.r} types, fitness over {f.r}")
    w = f.values * np.asarray(population.counts, dtype=float)
    p = w / w.sum()
    p.setflags(write=False)
    return p


def population_count(n: int, r: int) -> int:
    """Number of size-n populations over r types, C(n+r-1, r-1). Exact."""
    if n < 1 or r < 2:
        raise ParameterError(f"population_count needs n >= 1 and r >= 2, got n={n}, r={r}")
    return math.comb(n + r - 1, r - 1)


def as_population(value: Population | Sequence[int]) -> Population:
    return value if isinstance(value, Population) else Population(tuple(value))
