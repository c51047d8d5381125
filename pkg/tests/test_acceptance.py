"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) and
then asserts, so ``pytest tests/test_acceptance.py -v`` gives both views.
"""

import math
import time

import numpy as np
import pytest

from conftest import record_criterion
from mixevo.chains import (
    build_dictatorial_chain,
    build_metropolis_chain,
    build_pairwise_update_chain,
    build_single_bit_walk,
    build_toy_ga_chain,
    dictatorial_tensor,
    lazy_transform,
    metropolis_dynamics,
    pairwise_dynamics,
    single_bit_dynamics,
    toy_ga_dynamics,
    LocalTransitionMatrix,
)
from mixevo.density import pair_exceedance_frequency, chernoff_sample_error, quadratic_map
from mixevo.genotype import two_pow_i_squared
from mixevo.montecarlo import (
    ABUNDANCE_C,
    member_index,
    one_step_counts,
    optimal_population_fraction,
    restart_optimizer,
    run_generator,
    simulate_ga,
    simulate_runs,
    total_variation,
    visit_frequencies,
)
from mixevo.spectral import (
    chain_structure,
    check_reversibility,
    envelope_time,
    mixing_time,
    random_reversible_chain,
    stationary_distribution,
    symmetrized_spectrum,
    verify_spectral_sandwich,
)

SEED = 12345


def random_chain_set():
    rng = run_generator(SEED, 3)
    chains = [build_dictatorial_chain(0.125), build_dictatorial_chain(0.01)]
    for _ in range(20):
        chains.append(random_reversible_chain(int(rng.integers(3, 51)), rng))
    return chains


def closed_form(eps):
    return np.array([4 * eps / (1 + 4 * eps), 1 / (2 + 8 * eps), 1 / (2 + 8 * eps)])


def test_criterion_01_dictatorial_closed_form():
    t0 = time.perf_counter()
    err = max(float(np.max(np.abs(stationary_distribution(build_dictatorial_chain(e)) - closed_form(e))))
              for e in (0.01, 0.05, 0.125))
    dt = time.perf_counter() - t0
    ok = err <= 1e-10 and dt < 1
    record_criterion(1, ok, f"max |pi - closed form| = {err:.2e}, {dt:.2f}s")
    assert ok


def test_criterion_02_dictatorial_eighth():
    t0 = time.perf_counter()
    chain = build_dictatorial_chain(0.125)
    pi = stationary_distribution(chain)
    rev = check_reversibility(chain, pi)
    spec = symmetrized_spectrum(chain, pi)
    sym = np.array_equal(chain.Q, chain.Q.T)
    pi_err = float(np.max(np.abs(pi - 1 / 3)))
    spec_err = float(np.max(np.abs(np.array(spec.eigenvalues) - [1.0, 0.25, 0.25])))
    dt = time.perf_counter() - t0
    ok = sym and rev.max_violation < 1e-12 and pi_err <= 1e-12 and spec_err <= 1e-9 and dt < 1
    record_criterion(2, ok, f"symmetric={sym} violation={rev.max_violation:.1e} "
                            f"pi err={pi_err:.1e} spectrum err={spec_err:.1e}, {dt:.2f}s")
    assert ok


def test_criterion_03_spectral_sandwich():
    t0 = time.perf_counter()
    failures = []
    for k, chain in enumerate(random_chain_set()):
        pi = stationary_distribution(chain)
        plain = verify_spectral_sandwich(chain, 20, 1e-9, pi)
        lazy = verify_spectral_sandwich(lazy_transform(chain), 20, 1e-9, pi)
        if not plain.passed or not all(r.checked for r in plain.rows if r.t % 2 == 0):
            failures.append((k, "plain", plain.failures()))
        if not lazy.passed or not lazy.all_t:
            failures.append((k, "lazy", lazy.failures()))
    dt = time.perf_counter() - t0
    ok = not failures and dt < 30
    record_criterion(3, ok, f"22 chains, failures={failures}, {dt:.2f}s")
    assert ok


def test_criterion_04_lazy_spectrum():
    t0 = time.perf_counter()
    err = 0.0
    for chain in random_chain_set():
        pi = stationary_distribution(chain)
        base = np.sort(symmetrized_spectrum(chain, pi).eigenvalues)
        lazy = np.sort(symmetrized_spectrum(lazy_transform(chain), pi).eigenvalues)
        err = max(err, float(np.max(np.abs(lazy - (1 + base) / 2))))
    dt = time.perf_counter() - t0
    ok = err <= 1e-9 and dt < 30
    record_criterion(4, ok, f"max |eig(lazy) - (1+eig)/2| = {err:.2e}, {dt:.2f}s")
    assert ok


def brute_quadratic(p, b):
    r = p.size
    out = np.zeros(r)
    for u in range(r):
        for v in range(r):
            for w in range(r):
                for z in range(r):
                    out[z] += p[u] * p[v] * b[u, v, w, z]
    return out


def test_criterion_05_density_map():
    t0 = time.perf_counter()
    half = np.array([0.5, 0.5])
    fixed = float(np.max(np.abs(quadratic_map(half, dictatorial_tensor(0.125)) - half)))
    rng = run_generator(SEED, 5)
    err = 0.0
    for _ in range(100):
        r = int(rng.integers(2, 6))
        b = rng.dirichlet(np.ones(r * r), size=(r, r)).reshape(r, r, r, r)
        p = rng.dirichlet(np.ones(r))
        err = max(err, float(np.max(np.abs(quadratic_map(p, LocalTransitionMatrix(b)) - brute_quadratic(p, b)))))
    dt = time.perf_counter() - t0
    ok = fixed <= 1e-12 and err <= 1e-12 and dt < 10
    record_criterion(5, ok, f"fixed-point residual={fixed:.1e}, oracle err={err:.1e}, {dt:.2f}s")
    assert ok


def test_criterion_06_trapping():
    t0 = time.perf_counter()
    eps, t, runs = 1e-4, 10, 100_000
    chain = build_dictatorial_chain(eps)
    end = simulate_runs(chain, 0, t, runs, SEED)[:, t]
    freq = np.bincount(end, minlength=3) / runs
    q = 2.0**-t
    sigma0 = math.sqrt(q * (1 - q) / runs)
    z0 = (freq[0] - q) / sigma0
    var12 = (freq[1] + freq[2] - (freq[1] - freq[2]) ** 2) / runs
    z12 = (freq[1] - freq[2]) / math.sqrt(var12)
    exact = np.linalg.matrix_power(chain.Q, t)[0]
    z_exact = (freq[0] - exact[0]) / math.sqrt(exact[0] * (1 - exact[0]) / runs)
    dt = time.perf_counter() - t0
    ok = abs(z0) <= 3 and abs(z12) <= 3 and dt < 30
    record_criterion(6, ok, f"Pr[P0]={freq[0]:.4e} vs 2^-10={q:.4e} (z={z0:+.2f}); exact {exact[0]:.4e} "
                            f"(z={z_exact:+.2f}); P1-P2 z={z12:+.2f}, {dt:.2f}s")
    assert ok


def _oracle_cases():
    dict_dyn = pairwise_dynamics(dictatorial_tensor(0.125), 2)
    toy = toy_ga_dynamics(4)
    walk = single_bit_dynamics(8)
    metro = metropolis_dynamics(two_pow_i_squared(3), 3)
    return [
        ("dictatorial", dict_dyn, build_pairwise_update_chain(dict_dyn), [0, 1, 2]),
        ("toy GA l=4", toy, build_toy_ga_chain(4), [0, 17, 68, 135]),
        ("single-bit l=8", walk, build_single_bit_walk(8), [0, 37, 255]),
        ("Metropolis l=3", metro, build_metropolis_chain(metro.fitness, 3), list(range(8))),
    ]


def test_criterion_07_simulation_matches_exact_rows():
    t0 = time.perf_counter()
    bad = []
    worst = 0.0
    for name, dyn, chain, rows in _oracle_cases():
        index = member_index(chain)
        per_row = 1_000_000 // len(rows)
        for k, i in enumerate(rows):
            s = chain.states[i]
            start = s if hasattr(s, "counts") else [s]
            counts = one_step_counts(dyn, start, per_row, SEED, index, run=k)
            q = chain.Q[i]
            if np.any(counts[q == 0] != 0):
                bad.append((name, i, "impossible successor"))
            pos = q > 0
            sigma = np.sqrt(per_row * q[pos] * (1 - q[pos]))
            z = np.abs(counts[pos] - per_row * q[pos]) / np.where(sigma > 0, sigma, 1)
            worst = max(worst, float(z.max()))
            if np.any(z > 4):
                bad.append((name, i, float(z.max())))
    dt = time.perf_counter() - t0
    ok = not bad and dt < 120
    record_criterion(7, ok, f"worst |z|={worst:.2f} over 4 dynamics, problems={bad}, {dt:.1f}s")
    assert ok


def test_criterion_08_toy_ga_exact():
    t0 = time.perf_counter()
    dyn = toy_ga_dynamics(4)
    chain = build_toy_ga_chain(4)
    st = chain_structure(chain)
    pi = stationary_distribution(chain)
    traj = simulate_ga(dyn, None, 1_000_000, SEED, index=member_index(chain))
    emp = visit_frequencies(traj, chain.N, burn_in=0.1).freq
    tv = total_variation(emp, pi)
    tv_uniform = total_variation(pi, np.full(chain.N, 1 / chain.N))
    dt = time.perf_counter() - t0
    ok = chain.N == 136 and st.irreducible and st.period == 1 and tv <= 0.02 and dt < 120
    record_criterion(8, ok, f"N={chain.N} irreducible={st.irreducible} period={st.period} "
                            f"TV(empirical, pi)={tv:.4f}; TV(pi, uniform)={tv_uniform:.4f} (reported), {dt:.1f}s")
    assert ok


def test_criterion_09_abundance_constant():
    t0 = time.perf_counter()
    est = optimal_population_fraction(16, 100_000, SEED)
    dt = time.perf_counter() - t0
    ok = est.estimate >= ABUNDANCE_C - 3 * est.stderr and dt < 30
    record_criterion(9, ok, f"fraction={est.estimate:.4f} +- {est.stderr:.4f}, c={ABUNDANCE_C:.6f}, {dt:.2f}s")
    assert ok


@pytest.mark.slow
def test_criterion_10_restarts():
    t0 = time.perf_counter()
    dyn = toy_ga_dynamics(16)
    out = restart_optimizer(dyn, 20_000, 200, SEED)
    dt = time.perf_counter() - t0
    ok = dyn.n == 4 and out.success_rate >= ABUNDANCE_C / 2 and out.global_best_fitness == 1.0 and dt < 300
    record_criterion(10, ok, f"success rate={out.success_rate:.3f} (c/2={ABUNDANCE_C / 2:.3f}), "
                             f"best fitness={out.global_best_fitness}, {dt:.1f}s")
    assert ok


def test_criterion_11_metropolis_stationarity():
    t0 = time.perf_counter()
    f = two_pow_i_squared(3)
    chain = build_metropolis_chain(f, 3)
    target = f.values / f.values.sum()
    err = float(np.max(np.abs(stationary_distribution(chain) - target)))
    traj = simulate_ga(metropolis_dynamics(f, 3), [0], 1_000_000, SEED, index=member_index(chain))
    emp = visit_frequencies(traj, 8, burn_in=0.1).freq
    tv = total_variation(emp, target)
    modal = chain.state_label(int(np.argmax(emp)))
    dt = time.perf_counter() - t0
    ok = err <= 1e-10 and tv <= 0.02 and modal == "111" and dt < 60
    record_criterion(11, ok, f"|pi - f/sum f|={err:.1e} TV={tv:.4f} modal={modal}, {dt:.1f}s")
    assert ok


def test_criterion_12_single_bit_spectrum():
    t0 = time.perf_counter()
    chain = build_single_bit_walk(8)
    pi = stationary_distribution(chain)
    lam = symmetrized_spectrum(chain, pi).lambda_max
    epss = (1e-1, 1e-2, 1e-3)
    taus = [mixing_time(chain, e, pi=pi).tau for e in epss]
    env = [envelope_time(lam, float(pi.min()), e) for e in epss]
    step = math.ceil(math.log(10) / math.log(1 / lam)) + 1
    incs = np.diff(taus)
    affine = all(t <= b for t, b in zip(taus, env)) and all(0 <= d <= step for d in incs) \
        and int(np.diff(incs).max()) <= 1
    dt = time.perf_counter() - t0
    ok = abs(lam - 0.875) <= 1e-9 and affine and dt < 60
    record_criterion(12, ok, f"lambda_max={lam:.12f} tau={taus} envelope={env} per-decade bound={step}, {dt:.2f}s")
    assert ok


def test_criterion_13_chernoff():
    t0 = time.perf_counter()
    p = np.array([0.5, 0.5])  # fixed point of the dictatorial density map
    trials = 10_000
    bad = []
    k = 0
    for eps in (0.05, 0.1, 0.2):
        for s in (100, 500, 2000):
            rep = chernoff_sample_error(p, s, eps)
            pb = min(rep.pair_bound, 1.0)
            freq = pair_exceedance_frequency(p, s, eps, trials, run_generator(SEED, 100 + k))
            k += 1
            limit = pb + 3 * math.sqrt(pb * (1 - pb) / trials)
            if freq.max() > limit:
                bad.append((eps, s, float(freq.max()), limit))
    dt = time.perf_counter() - t0
    ok = not bad and dt < 60
    record_criterion(13, ok, f"9 (eps, s) cells, violations={bad}, {dt:.2f}s")
    assert ok
