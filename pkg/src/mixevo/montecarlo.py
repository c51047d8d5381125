"""Seeded simulation of built chains and matrix-free GA dynamics.

Every run draws from its own Philox stream. The key comes from the master
seed; the run index sits in the high word of the 256-bit counter, so runs
never share random blocks and any run can be replayed on its own.
"""

from __future__ import annotations

import bisect
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .chains import METROPOLIS, SINGLE_BIT, TOY_GA, GaDynamics, MarkovChain, check_toy_ga_length
from .errors import ParameterError
from .genotype import Population, ones

ABUNDANCE_C = 1.0 - math.exp(-math.sqrt(2.0 / math.pi))
ALPHA = ABUNDANCE_C / (16.0 * (1.0 - ABUNDANCE_C))
_CHUNK = 8192


def run_generator(seed: int, run: int = 0) -> np.random.Generator:
    """Independent generator for run ``run`` under master seed ``seed``."""
    if seed < 0 or run < 0:
        raise ParameterError("seed and run index must be nonnegative")
    key = np.random.SeedSequence(seed).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, run]))


class UniformStream:
    """Uniform floats in [0, 1) pulled one at a time from chunked draws."""

    def __init__(self, rng: np.random.Generator, chunk: int = _CHUNK):
        self._rng = rng
        self._chunk = chunk
        self._buf: list[float] = []
        self._pos = 0

    def __call__(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self._rng.random(self._chunk).tolist()
            self._pos = 0
        x = self._buf[self._pos]
        self._pos += 1
        return x


@dataclass
class Trajectory:
    """States X_0 .. X_t of one run.

    ``states`` holds state indices when the run is tied to an exact chain,
    otherwise sorted member tuples (populations) or genotype ints.
    """

    states: list | np.ndarray
    seed: int
    run: int = 0
    label: dict = field(default_factory=dict)

    @property
    def t(self) -> int:
        return len(self.states) - 1

    def to_csv_rows(self):
        return [(step, s) for step, s in enumerate(self.states)]


# -- chain-driven simulation ---------------------------------------------------

def _cumulative(chain: MarkovChain) -> list[list[float]]:
    return np.cumsum(chain.Q, axis=1).tolist()


def simulate(chain: MarkovChain, start: int, t: int, seed: int, run: int = 0) -> Trajectory:
    """t steps by inverse-CDF sampling of the rows of Q."""
    if not 0 <= start < chain.N:
        raise ParameterError(f"start state {start} outside 0..{chain.N - 1}")
    if t < 0:
        raise ParameterError("t must be >= 0")
    cum = _cumulative(chain)
    u = run_generator(seed, run).random(t).tolist()
    last = chain.N - 1
    states = [start]
    s = start
    for x in u:
        s = min(bisect.bisect_right(cum[s], x), last)
        states.append(s)
    return Trajectory(np.array(states), seed, run, {"dynamic": chain.labels.get("dynamic"), "start": start})


def simulate_runs(chain: MarkovChain, start: int, t: int, runs: int, seed: int) -> np.ndarray:
    """``runs`` independent trajectories, shape (runs, t + 1).

    Row k equals ``simulate(chain, start, t, seed, run=k).states``.
    """
    if runs < 1:
        raise ParameterError("runs must be >= 1")
    cum = np.cumsum(chain.Q, axis=1)
    U = np.empty((runs, t))
    for k in range(runs):
        U[k] = run_generator(seed, k).random(t)
    out = np.empty((runs, t + 1), dtype=np.int64)
    out[:, 0] = start
    s = np.full(runs, start)
    last = chain.N - 1
    for step in range(t):
        s = np.minimum((cum[s] <= U[:, step, None]).sum(axis=1), last)
        out[:, step + 1] = s
    return out


# -- matrix-free steppers ------------------------------------------------------

def _pick(weights: Sequence[float], total: float, x: float) -> int:
    acc = 0.0
    target = x * total
    for k, w in enumerate(weights):
        acc += w
        if target < acc:
            return k
    return len(weights) - 1


def _make_stepper(dyn: GaDynamics):
    """A function ``step(members, draw)`` that advances ``members`` in place."""
    f = dyn.fitness.values.tolist()

    if dyn.rule == TOY_GA:
        l, lazy = dyn.l, dyn.mutation == "lazy"
        bits = [1 << (l - 1 - k) for k in range(l)]

        def mutate(x, draw):
            k = int(draw() * l)
            coin = draw()
            if lazy and coin >= 0.5:
                return x
            return x ^ bits[k]

        def step(members, draw):
            if draw() < 0.5:
                return
            w = [f[m] for m in members]
            total = sum(w)
            i = _pick(w, total, draw())
            j = _pick(w, total, draw())
            k = int(draw() * l)
            if i == j:
                members[i] = mutate(mutate(members[i], draw), draw)
                return
            x, y = members[i], members[j]
            if (x ^ y) & bits[k]:
                x ^= bits[k]
                y ^= bits[k]
            members[i] = mutate(x, draw)
            members[j] = mutate(y, draw)

        return step

    if dyn.rule == SINGLE_BIT:
        l = dyn.l

        def step(members, draw):
            k = int(draw() * l)
            if draw() < 0.5:
                members[0] ^= 1 << k

        return step

    if dyn.rule == METROPOLIS:
        l, lazy = dyn.l, dyn.lazy

        def step(members, draw):
            if lazy and draw() < 0.5:
                return
            x = members[0]
            y = x ^ (1 << int(draw() * l))
            if f[y] > f[x] or draw() < f[y] / f[x]:
                members[0] = y

        return step

    B = dyn.tensor
    offspring = {(u, v): B.offspring(u, v) for u in range(B.r) for v in range(B.r)}
    n, with_replacement = dyn.n, dyn.replacement == "with"

    def draw_offspring(u, v, x):
        table = offspring[(u, v)]
        k = _pick([p for _, _, p in table], 1.0, x)
        return table[k][0], table[k][1]

    def step(members, draw):
        w = [f[m] for m in members]
        total = sum(w)
        if with_replacement:
            while True:
                i = _pick(w, total, draw())
                j = _pick(w, total, draw())
                u, v = members[i], members[j]
                if n == 2 or u != v or members.count(u) >= 2:
                    break
            wz = draw_offspring(u, v, draw())
            if n == 2:
                members[:] = list(wz)
                return
            members.remove(u)
            members.remove(v)
        else:
            i = _pick(w, total, draw())
            u = members.pop(i)
            w.pop(i)
            j = _pick(w, sum(w), draw())
            v = members.pop(j)
            wz = draw_offspring(u, v, draw())
        members.extend(wz)

    return step


def _key(members) -> tuple:
    return tuple(sorted(members))


def _start_members(dyn: GaDynamics, start) -> list[int]:
    if start is None:
        return [0] * dyn.n
    if isinstance(start, Population):
        members = start.members()
    else:
        members = [int(m) for m in start]
    if len(members) != dyn.n:
        raise ParameterError(f"start population has {len(members)} members, dynamic needs {dyn.n}")
    if any(not 0 <= m < dyn.space.r for m in members):
        raise ParameterError("start population has members outside the type space")
    return members


def member_index(chain: MarkovChain) -> dict:
    """Sorted member tuple -> state index, for population or singleton chains."""
    out = {}
    for i, s in enumerate(chain.states):
        out[tuple(s.members()) if isinstance(s, Population) else (int(s),)] = i
    return out


def simulate_ga(dyn: GaDynamics, start=None, t: int = 0, seed: int = 0, run: int = 0,
                index: dict | None = None, record: bool = True) -> Trajectory:
    """Matrix-free simulation of a dynamic for t generations.

    ``start`` is a Population or member list (default n copies of 00..0).
    With ``index`` (see ``member_index``) the trajectory records state
    indices; otherwise sorted member tuples. ``record=False`` keeps only the
    endpoints.
    """
    if t < 0:
        raise ParameterError("t must be >= 0")
    members = _start_members(dyn, start)
    step = _make_stepper(dyn)
    draw = UniformStream(run_generator(seed, run))
    enc = (lambda m: index[_key(m)]) if index is not None else _key
    states = [enc(members)]
    for _ in range(t):
        step(members, draw)
        if record:
            states.append(enc(members))
    if not record:
        states.append(enc(members))
    if index is not None:
        states = np.array(states, dtype=np.int64)
    return Trajectory(states, seed, run, {"dynamic": dyn.rule, "n": dyn.n, "t": t})


def one_step_counts(dyn: GaDynamics, start, samples: int, seed: int, index: dict, run: int = 0) -> np.ndarray:
    """Successor-state counts of ``samples`` independent single steps from ``start``."""
    base = _start_members(dyn, start)
    step = _make_stepper(dyn)
    draw = UniformStream(run_generator(seed, run))
    counts = np.zeros(len(index), dtype=np.int64)
    for _ in range(samples):
        members = list(base)
        step(members, draw)
        counts[index[_key(members)]] += 1
    return counts


# -- statistics ------------------------------------------------------------------

@dataclass(frozen=True)
class VisitFrequencies:
    counts: np.ndarray
    total: int
    subset_count: int | None = None

    @property
    def freq(self) -> np.ndarray:
        return self.counts / self.total

    @property
    def subset_mass(self) -> float | None:
        return None if self.subset_count is None else self.subset_count / self.total


def visit_frequencies(traj: Trajectory, N: int, subset: Iterable[int] | None = None,
                      burn_in: float = 0.0) -> VisitFrequencies:
    """c_t(P) / t over X_1 .. X_t after discarding the first ``burn_in`` fraction."""
    states = np.asarray(traj.states)
    if states.size < 2:
        raise ParameterError("trajectory needs at least one step")
    visits = states[1:]
    visits = visits[int(math.floor(burn_in * visits.size)):]
    counts = np.bincount(visits, minlength=N).astype(np.int64)
    sub = None
    if subset is not None:
        sub = int(counts[np.asarray(list(subset), dtype=int)].sum())
    return VisitFrequencies(counts, int(visits.size), sub)


def transition_counts(traj: Trajectory, N: int) -> np.ndarray:
    s = np.asarray(traj.states)
    C = np.zeros((N, N), dtype=np.int64)
    np.add.at(C, (s[:-1], s[1:]), 1)
    return C


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


def optimal_states(chain: MarkovChain, f) -> list[int]:
    """Indices of populations containing a maximum-fitness individual."""
    values = f.values
    best = values.max()
    out = []
    for i, s in enumerate(chain.states):
        members = s.support() if isinstance(s, Population) else [int(s)]
        if any(values[m] == best for m in members):
            out.append(i)
    return out


# -- restart optimization --------------------------------------------------------

@dataclass(frozen=True)
class RestartRecord:
    run: int
    best_individual: int
    best_fitness: float
    success: bool
    best_so_far: float


@dataclass
class RestartOutcome:
    records: list[RestartRecord]
    global_best_individual: int
    global_best_fitness: float
    success_rate: float
    boosted: float
    bound: float
    seed: int
    T: int
    start: str
    elapsed: float = 0.0

    @property
    def successes(self) -> int:
        return sum(r.success for r in self.records)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "T": self.T,
            "restarts": len(self.records),
            "start": self.start,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "boosted_success_estimate": self.boosted,
            "success_bound": self.bound,
            "global_best_individual": self.global_best_individual,
            "global_best_fitness": self.global_best_fitness,
        }


def uniform_populations(n: int, r: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` populations drawn uniformly from all size-n multisets over r types.

    Rows are sorted member arrays, via the stars-and-bars bijection with
    n-subsets of range(n + r - 1).
    """
    out = np.empty((0, n), dtype=np.int64)
    while out.shape[0] < size:
        need = size - out.shape[0]
        draw = rng.integers(0, n + r - 1, size=(need + need // 8 + 8, n))
        draw.sort(axis=1)
        ok = np.all(np.diff(draw, axis=1) > 0, axis=1) if n > 1 else np.ones(draw.shape[0], bool)
        out = np.vstack([out, draw[ok][:need]])
    return out - np.arange(n)[None, :]


def _one_restart(dyn: GaDynamics, T: int, seed: int, run: int, start: str) -> RestartRecord:
    rng = run_generator(seed, run)
    if start == "random":
        members = uniform_populations(dyn.n, dyn.space.r, 1, rng)[0].tolist()
    else:
        members = [0] * dyn.n
    f = dyn.fitness.values
    step = _make_stepper(dyn)
    draw = UniformStream(rng)
    best_seen = max(f[m] for m in members)
    for _ in range(T):
        step(members, draw)
        top = max(f[m] for m in members)
        if top > best_seen:
            best_seen = top
    fittest = max(members, key=lambda m: (f[m], -m))
    return RestartRecord(run, int(fittest), float(f[fittest]), bool(f[fittest] == f.max()), float(best_seen))


def success_bound(t_restarts: int) -> float:
    """1 - 2 exp(-alpha t) with alpha = c / (16 (1 - c))."""
    if t_restarts < 1:
        raise ParameterError("t_restarts must be >= 1")
    return 1.0 - 2.0 * math.exp(-ALPHA * t_restarts)


def restart_optimizer(dyn: GaDynamics, T: int, t_restarts: int, seed: int, start: str = "zeros",
                      workers: int = 1) -> RestartOutcome:
    """Repeat: run the dynamic T generations from a fresh start, keep the fittest.

    Success of a restart means its final population holds an individual of
    maximum fitness. ``start`` is "zeros" (n copies of 00..0) or "random"
    (uniform over populations).
    """
    if T < 1 or t_restarts < 1:
        raise ParameterError("T and t_restarts must be >= 1")
    if start not in ("zeros", "random"):
        raise ParameterError(f"start must be 'zeros' or 'random', got {start!r}")
    t0 = time.perf_counter()
    args = [(dyn, T, seed, k, start) for k in range(t_restarts)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_one_restart, *zip(*args)))
    else:
        records = [_one_restart(*a) for a in args]
    best = max(records, key=lambda r: (r.best_fitness, -r.run))
    rate = sum(r.success for r in records) / t_restarts
    return RestartOutcome(
        records=records,
        global_best_individual=best.best_individual,
        global_best_fitness=best.best_fitness,
        success_rate=rate,
        boosted=1.0 - (1.0 - rate) ** t_restarts,
        bound=success_bound(t_restarts),
        seed=seed,
        T=T,
        start=start,
        elapsed=time.perf_counter() - t0,
    )


@dataclass(frozen=True)
class FractionEstimate:
    estimate: float
    stderr: float
    samples: int
    c: float = ABUNDANCE_C


def optimal_population_fraction(l: int, sample_size: int, seed: int, target=None) -> FractionEstimate:
    """Share of uniform random size-sqrt(l) populations holding a target string.

    The default target is the balanced strings (exactly l/2 ones); ``target``
    may be any predicate on genotype ints.
    """
    check_toy_ga_length(l)
    if sample_size < 1:
        raise ParameterError("sample_size must be >= 1")
    n, r = math.isqrt(l), 2**l
    rng = run_generator(seed)
    pops = uniform_populations(n, r, sample_size, rng)
    if target is None:
        popcount = np.vectorize(ones, otypes=[np.int64])
        hit = popcount(pops) * 2 == l
    else:
        lookup = np.array([bool(target(u)) for u in range(r)])
        hit = lookup[pops]
    est = float(hit.any(axis=1).mean())
    return FractionEstimate(est, math.sqrt(est * (1 - est) / sample_size), sample_size)
