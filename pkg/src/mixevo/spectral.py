"""Stationary distributions, reversibility, spectra and mixing diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chains import MarkovChain
from .errors import NonConvergenceError, NotReversibleError, ParameterError, StructuralError

EXACT = "ExactSymmetrized"
APPROX = "PowerIterationApprox"
DIRECT = "DirectSolve"
POWER = "PowerIteration"
REVERSIBLE_TOL = 1e-12
DENSE_POWER_CAP = 4000  # largest N for which Q^t is formed as a dense matrix


# -- structure ---------------------------------------------------------------

@dataclass(frozen=True)
class Structure:
    irreducible: bool
    period: int | None
    unreachable: tuple[int, ...] = ()

    @property
    def ergodic(self) -> bool:
        return self.irreducible and self.period == 1


def _bfs(adj: list[np.ndarray], start: int, size: int) -> np.ndarray:
    level = np.full(size, -1)
    level[start] = 0
    frontier = [start]
    while frontier:
        nxt = []
        for i in frontier:
            for j in adj[i]:
                if level[j] < 0:
                    level[j] = level[i] + 1
                    nxt.append(j)
        frontier = nxt
    return level


def chain_structure(chain: MarkovChain) -> Structure:
    """Irreducibility and period from the support graph of Q.

    The period is the gcd of level[u] + 1 - level[v] over all edges, with
    BFS levels taken from state 0; this is the gcd of cycle lengths through
    state 0 when the chain is irreducible.
    """
    support = chain.Q > 0
    N = chain.N
    fwd = [np.flatnonzero(row) for row in support]
    bwd = [np.flatnonzero(col) for col in support.T]
    level = _bfs(fwd, 0, N)
    back = _bfs(bwd, 0, N)
    unreachable = tuple(int(i) for i in np.flatnonzero((level < 0) | (back < 0)))
    if unreachable:
        return Structure(False, None, unreachable)
    g = 0
    for u in range(N):
        for v in fwd[u]:
            g = math.gcd(g, int(level[u] + 1 - level[v]))
            if g == 1:
                return Structure(True, 1)
    return Structure(True, g)


def check_ergodic(chain: MarkovChain) -> Structure:
    s = chain_structure(chain)
    if not s.irreducible:
        shown = ", ".join(map(str, s.unreachable[:10]))
        raise StructuralError(
            f"chain is reducible: {len(s.unreachable)} states do not communicate with state 0 ({shown})",
            unreachable=s.unreachable,
        )
    if s.period != 1:
        raise StructuralError(f"chain is periodic with period {s.period}", period=s.period)
    return s


# -- stationary distribution ---------------------------------------------------

def stationary_distribution(chain: MarkovChain, method: str = DIRECT, tol: float = 1e-12,
                            max_iter: int = 10_000_000, require_ergodic: bool = True) -> np.ndarray:
    """Unique normalized left eigenvector of Q for eigenvalue 1.

    ``DirectSolve`` replaces one equation of (Q^T - I) pi = 0 by the
    normalization row; ``PowerIteration`` iterates pi <- pi Q from uniform.
    """
    if require_ergodic:
        check_ergodic(chain)
    Q = chain.Q
    N = chain.N
    if method == DIRECT:
        A = Q.T - np.eye(N)
        A[-1, :] = 1.0
        rhs = np.zeros(N)
        rhs[-1] = 1.0
        pi = np.linalg.solve(A, rhs)
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
    elif method == POWER:
        pi = np.full(N, 1.0 / N)
        for _ in range(max_iter):
            nxt = pi @ Q
            nxt /= nxt.sum()
            if np.max(np.abs(nxt - pi)) <= tol:
                pi = nxt
                break
            pi = nxt
        else:
            raise NonConvergenceError(f"power iteration did not reach {tol} in {max_iter} steps", last=pi,
                                      steps=max_iter)
    else:
        raise ParameterError(f"unknown stationary method {method!r}")
    residual = np.max(np.abs(pi @ Q - pi))
    if residual > max(tol, 1e-10):
        raise NonConvergenceError(f"stationary residual {residual:.3g} above tolerance", last=pi)
    pi.setflags(write=False)
    return pi


@dataclass(frozen=True)
class ReversibilityCheck:
    reversible: bool
    max_violation: float

    def __bool__(self):
        return self.reversible


def check_reversibility(chain: MarkovChain, pi: np.ndarray, tol: float = REVERSIBLE_TOL) -> ReversibilityCheck:
    """Detailed balance: max |pi_i q_ij - pi_j q_ji| <= tol."""
    flow = pi[:, None] * chain.Q
    violation = float(np.max(np.abs(flow - flow.T)))
    return ReversibilityCheck(violation <= tol, violation)


# -- eigenvalues ---------------------------------------------------------------

def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # circle-method tournament: every index pair meets once per sweep
    m = n + (n % 2)
    ring = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(ring[i], ring[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        rounds.append((np.array([a for a, _ in pairs]), np.array([b for _, b in pairs])))
        ring = [ring[0], ring[-1]] + ring[1:-1]
    return rounds


def _off_norm(A: np.ndarray) -> float:
    # direct sum: |A|^2 - |diag|^2 cancels catastrophically near convergence
    off = A - np.diag(np.diag(A))
    return float(np.sqrt(np.sum(off * off)))


def jacobi_eigenvalues(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, in round-robin order so
    that the n/2 rotations of a round act on disjoint index pairs and can be
    applied together. Stops when the Frobenius norm of the off-diagonal
    part is <= tol. Returned in descending order.
    """
    A = np.array(a, dtype=float)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ParameterError("Jacobi needs a square matrix")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12):
        raise ParameterError("Jacobi needs a symmetric matrix")
    A = 0.5 * (A + A.T)
    if n == 1:
        return np.diag(A).copy()
    rounds = _round_robin(n)
    skip = tol / (2.0 * n)
    for _ in range(max_sweeps):
        if _off_norm(A) <= tol:
            break
        for p, q in rounds:
            apq = A[p, q]
            active = np.abs(apq) > skip
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            app, aqq = A[p, p], A[q, q]
            theta = (aqq - app) / (2.0 * apq)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            c = 1.0 / np.hypot(t, 1.0)
            s = t * c
            # J^T A J as two row rotations with a transpose between them
            for _side in range(2):
                rowp, rowq = A[p], A[q]
                A[p], A[q] = c[:, None] * rowp - s[:, None] * rowq, s[:, None] * rowp + c[:, None] * rowq
                A = np.ascontiguousarray(A.T)
            A[p, p] = app - t * apq
            A[q, q] = aqq + t * apq
            A[p, q] = 0.0
            A[q, p] = 0.0
    else:
        off = _off_norm(A)
        if off > tol:
            raise NonConvergenceError(f"Jacobi stopped with off-diagonal norm {off:.3g}", last=np.diag(A))
    return np.sort(np.diag(A))[::-1]


@dataclass(frozen=True)
class SpectralSummary:
    eigenvalues: np.ndarray
    lambda_max: float
    lambda_1: float
    lambda_min: float
    reversible: bool
    method: str

    def to_json(self) -> dict:
        return {
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "lambda_max": self.lambda_max,
            "lambda_1": self.lambda_1,
            "lambda_min": self.lambda_min,
            "reversible": self.reversible,
            "method": self.method,
        }


def symmetrize(chain: MarkovChain, pi: np.ndarray) -> np.ndarray:
    root = np.sqrt(pi)
    S = root[:, None] * chain.Q / root[None, :]
    return 0.5 * (S + S.T)


def symmetrized_spectrum(chain: MarkovChain, pi: np.ndarray | None = None,
                         tol: float = 1e-10) -> SpectralSummary:
    """Real spectrum of a reversible chain from D^(1/2) Q D^(-1/2)."""
    if pi is None:
        pi = stationary_distribution(chain)
    rev = check_reversibility(chain, pi, tol)
    if not rev:
        raise NotReversibleError(
            f"detailed balance fails by {rev.max_violation:.3g}; use lambda_max_estimate for the approximate path"
        )
    eig = jacobi_eigenvalues(symmetrize(chain, pi))
    return _summary(eig, True, EXACT)


def _summary(eig: np.ndarray, reversible: bool, method: str) -> SpectralSummary:
    eig = np.asarray(eig, dtype=float)
    if eig.size == 1:
        return SpectralSummary(eig, 0.0, 0.0, 0.0, reversible, method)
    lam1, lammin = float(eig[1]), float(eig[-1])
    return SpectralSummary(eig, max(abs(lam1), abs(lammin)), lam1, lammin, reversible, method)


@dataclass(frozen=True)
class LambdaEstimate:
    value: float
    method: str


def lambda_max_estimate(chain: MarkovChain, pi: np.ndarray | None = None, window: int = 200) -> LambdaEstimate:
    """Second-largest eigenvalue modulus.

    Exact on reversible chains. Otherwise the geometric decay rate of the
    relative pointwise distance, fitted by least squares on log Delta(t)
    over the later half of the window; tagged as approximate.
    """
    if pi is None:
        pi = stationary_distribution(chain, require_ergodic=False)
    if check_reversibility(chain, pi, 1e-10):
        return LambdaEstimate(symmetrized_spectrum(chain, pi).lambda_max, EXACT)
    deltas = rpd_curve(chain, window, pi)
    ts = np.arange(len(deltas))
    keep = (ts >= 1) & (deltas > 1e-11)
    ts, logs = ts[keep], np.log(deltas[keep])
    if ts.size < 2:
        return LambdaEstimate(0.0, APPROX)
    half = ts.size // 2
    ts, logs = ts[half:], logs[half:]
    if ts.size < 2:
        ts, logs = np.arange(len(deltas))[keep], np.log(deltas[keep])
    slope = np.polyfit(ts, logs, 1)[0]
    return LambdaEstimate(float(min(1.0, math.exp(slope))), APPROX)


# -- relative pointwise distance -----------------------------------------------

def _subset(U, N) -> np.ndarray:
    if U is None:
        return np.arange(N)
    U = np.unique(np.asarray(list(U), dtype=int))
    if U.size == 0:
        raise ParameterError("state subset U must be non-empty")
    if U.min() < 0 or U.max() >= N:
        raise ParameterError("state subset U has indices outside the chain")
    return U


def _delta(Pt_rows: np.ndarray, pi_U: np.ndarray) -> float:
    return float(np.max(np.abs(Pt_rows - pi_U[None, :]) / pi_U[None, :]))


def rpd(chain: MarkovChain, t: int, U: Sequence[int] | None = None, pi: np.ndarray | None = None) -> float:
    """Delta_U(t) = max over i, j in U of |q^t_ij - pi_j| / pi_j."""
    if t < 0:
        raise ParameterError("t must be >= 0")
    if pi is None:
        pi = stationary_distribution(chain)
    U = _subset(U, chain.N)
    if chain.N <= DENSE_POWER_CAP:
        Pt = np.linalg.matrix_power(chain.Q, t)
        return _delta(Pt[np.ix_(U, U)], pi[U])
    rows = np.eye(chain.N)[U]
    for _ in range(t):
        rows = rows @ chain.Q
    return _delta(rows[:, U], pi[U])


def rpd_curve(chain: MarkovChain, t_max: int, pi: np.ndarray | None = None,
              U: Sequence[int] | None = None) -> np.ndarray:
    """Delta_U(t) for t = 0 .. t_max by successive products."""
    if pi is None:
        pi = stationary_distribution(chain)
    U = _subset(U, chain.N)
    rows = np.eye(chain.N)[U]
    out = np.empty(t_max + 1)
    for t in range(t_max + 1):
        out[t] = _delta(rows[:, U], pi[U])
        if t < t_max:
            rows = rows @ chain.Q
    return out


# -- mixing time ---------------------------------------------------------------

@dataclass
class MixingReport:
    eps: float
    tau: int | None
    certified: bool
    inconclusive: bool
    lambda_max: float
    lambda_method: str
    pi_min: float
    envelope_t: int | None
    t: list[int] = field(default_factory=list)
    delta: list[float] = field(default_factory=list)
    lemma1_upper: list[float] = field(default_factory=list)
    lemma2_lower: list[float] = field(default_factory=list)

    def rows(self):
        return list(zip(self.t, self.delta, self.lemma1_upper, self.lemma2_lower))

    def to_json(self) -> dict:
        return {
            "eps": self.eps,
            "tau": self.tau,
            "certified": self.certified,
            "inconclusive": self.inconclusive,
            "lambda_max": self.lambda_max,
            "lambda_method": self.lambda_method,
            "pi_min": self.pi_min,
            "envelope_t": self.envelope_t,
            "table": [
                {"t": t, "delta": d, "lemma1_upper": u, "lemma2_lower": lo}
                for t, d, u, lo in self.rows()
            ],
        }


def envelope_time(lam: float, pi_min: float, eps: float) -> int:
    """Smallest t with lam^t / pi_min <= eps."""
    if lam <= 0.0:
        return 1 if eps < 1.0 / pi_min else 0
    if lam >= 1.0:
        raise ParameterError("no geometric envelope for lambda_max >= 1")
    t = max(0, math.ceil(math.log(eps * pi_min) / math.log(lam)))
    while t > 0 and lam ** (t - 1) / pi_min <= eps:
        t -= 1
    while lam**t / pi_min > eps:
        t += 1
    return t


def polynomial_mixing_constant(l: int, taus: dict) -> float:
    """Smallest C with tau(eps) <= C l^2 (l + ln(1/eps)) over the measured eps -> tau."""
    if l < 1 or not taus:
        raise ParameterError("need l >= 1 and at least one measured tau")
    return max(tau / (l * l * (l + math.log(1.0 / eps))) for eps, tau in taus.items())


def mixing_time(chain: MarkovChain, eps: float, t_cap: int = 100_000, table_max: int = 2000,
                pi: np.ndarray | None = None) -> MixingReport:
    """tau(eps) = min{t : Delta(t') <= eps for all t' >= t}.

    Reversible chains with a nonnegative spectrum have Delta(t) nonincreasing,
    so tau is located by doubling then bisection on exact matrix powers.
    Other reversible chains are scanned linearly up to the time after which
    the lam^t / pi_min envelope already guarantees Delta <= eps. For
    non-reversible chains the scan stops at the first t after which Delta
    stays below eps over a confirmation window and the result is flagged
    as not certified.
    """
    if not (0 < eps <= 1):
        raise ParameterError(f"eps must lie in (0, 1], got {eps}")
    if pi is None:
        pi = stationary_distribution(chain)
    pi_min = float(pi.min())
    rev = check_reversibility(chain, pi, 1e-10)
    if rev:
        spec = symmetrized_spectrum(chain, pi)
        lam, method = spec.lambda_max, EXACT
        nonneg = spec.lambda_min >= -1e-12
    else:
        est = lambda_max_estimate(chain, pi)
        lam, method, nonneg = est.value, est.method, False

    tau, certified, inconclusive, env = None, bool(rev), False, None
    if rev and lam < 1.0:
        env = envelope_time(lam, pi_min, eps)
    if rev and nonneg:
        tau = _bisect_tau(chain, pi, eps, t_cap)
        inconclusive = tau is None
    elif rev and env is not None and env <= t_cap:
        deltas = rpd_curve(chain, env, pi)
        above = np.flatnonzero(deltas[:env] > eps)
        tau = int(above[-1]) + 1 if above.size else 0
    else:
        tau, inconclusive = _scan_tau(chain, pi, eps, t_cap)
        certified = False

    t_hi = min(table_max, max(tau or 0, env or 0, 1)) if not inconclusive else min(table_max, t_cap)
    deltas = rpd_curve(chain, t_hi, pi)
    ts = list(range(t_hi + 1))
    return MixingReport(
        eps=eps,
        tau=tau,
        certified=certified and not inconclusive,
        inconclusive=inconclusive,
        lambda_max=lam,
        lambda_method=method,
        pi_min=pi_min,
        envelope_t=env,
        t=ts,
        delta=[float(d) for d in deltas],
        lemma1_upper=[lam**t / pi_min for t in ts],
        lemma2_lower=[lam**t for t in ts],
    )


def _bisect_tau(chain: MarkovChain, pi: np.ndarray, eps: float, t_cap: int) -> int | None:
    if rpd(chain, 0, pi=pi) <= eps:
        return 0
    lo, hi = 0, 1
    while rpd(chain, hi, pi=pi) > eps:
        lo, hi = hi, hi * 2
        if hi > t_cap:
            if rpd(chain, t_cap, pi=pi) > eps:
                return None
            hi = t_cap
            break
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if rpd(chain, mid, pi=pi) <= eps:
            hi = mid
        else:
            lo = mid
    return hi


def _scan_tau(chain: MarkovChain, pi: np.ndarray, eps: float, t_cap: int, confirm: int = 50):
    rows = np.eye(chain.N)
    last_above = -1
    for t in range(t_cap + 1):
        if _delta(rows, pi) > eps:
            last_above = t
        elif t - last_above >= confirm:
            return last_above + 1, False
        rows = rows @ chain.Q
    return None, True


# -- spectral sandwich ---------------------------------------------------------

@dataclass(frozen=True)
class SandwichRow:
    t: int
    delta: float
    lower: float
    upper: float
    checked: bool
    passed: bool


@dataclass(frozen=True)
class SandwichTable:
    rows: tuple[SandwichRow, ...]
    lambda_max: float
    pi_min: float
    all_t: bool

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows if r.checked)

    def failures(self) -> list[int]:
        return [r.t for r in self.rows if r.checked and not r.passed]


def verify_spectral_sandwich(chain: MarkovChain, t_max: int, slack: float = 1e-9,
                             pi: np.ndarray | None = None) -> SandwichTable:
    """Check lam_max^t <= Delta(t) <= lam_max^t / pi_min.

    The lower bound is only claimed for even t unless every eigenvalue is
    nonnegative, in which case every t is checked.
    """
    if pi is None:
        pi = stationary_distribution(chain)
    spec = symmetrized_spectrum(chain, pi)
    lam, pi_min = spec.lambda_max, float(pi.min())
    all_t = spec.lambda_min >= -1e-12
    deltas = rpd_curve(chain, t_max, pi)
    rows = []
    for t in range(1, t_max + 1):
        lower, upper = lam**t, lam**t / pi_min
        checked = all_t or t % 2 == 0
        ok = lower - slack <= deltas[t] <= upper + slack
        rows.append(SandwichRow(t, float(deltas[t]), lower, upper, checked, ok))
    return SandwichTable(tuple(rows), lam, pi_min, all_t)


# -- test chains ---------------------------------------------------------------

def random_reversible_chain(N: int, rng: np.random.Generator, density: float = 0.5) -> MarkovChain:
    """Metropolis chain towards a random positive target over a random graph.

    The proposal is a symmetric random weight matrix on a graph containing a
    ring (so the chain is irreducible); detailed balance holds by
    construction.
    """
    if N < 2:
        raise ParameterError("need N >= 2")
    target = rng.uniform(0.05, 1.0, N)
    target /= target.sum()
    W = rng.uniform(0.0, 1.0, (N, N)) * (rng.uniform(size=(N, N)) < density)
    W = np.triu(W, 1)
    ring = np.arange(N)
    W[ring, (ring + 1) % N] += rng.uniform(0.1, 1.0, N)
    W = W + W.T
    np.fill_diagonal(W, 0.0)
    K = W / W.sum(axis=1).max()
    Q = K * np.minimum(1.0, target[None, :] / target[:, None])
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, np.maximum(0.0, 1.0 - Q.sum(axis=1)))  # rounding can give -1e-17
    return MarkovChain(list(range(N)), Q, {"dynamic": "random_reversible", "N": N})
