"""Command-line entry point: ``mixevo <command> [options]``.

Every command writes ``summary.json`` plus CSV tables into ``--out``.
Exit status: 0 ok, 2 usage, 3 parse, 4 infeasible, 5 non-convergence.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import formats
from .chains import (
    DICTATOR_STATES,
    LocalTransitionMatrix,
    build_dictatorial_chain,
    build_metropolis_chain,
    build_pairwise_update_chain,
    build_toy_ga_chain,
    check_toy_ga_length,
    dictatorial_tensor,
    metropolis_dynamics,
    pairwise_dynamics,
    state_cap,
    toy_ga_dynamics,
)
from .density import iterate_to_equilibrium
from .errors import MixevoError, NonConvergenceError, ParameterError
from .genotype import Fitness, TypeSpace, ones_count, two_pow_i_squared
from .montecarlo import (
    ABUNDANCE_C,
    optimal_states,
    restart_optimizer,
    simulate_ga,
    simulate_runs,
    total_variation,
    visit_frequencies,
)
from .report import analyze_chain, error_summary, out_dir, write_csv, write_json, write_tables
from .spectral import chain_structure, lambda_max_estimate, mixing_time, stationary_distribution, DIRECT

FITNESS_BUILTINS = {
    "two_pow_i_squared": two_pow_i_squared,
    "ones_count": ones_count,
    "constant": lambda l: Fitness.constant(2**l),
}


def cmd_dictator(args) -> int:
    eps = args.eps
    chain = build_dictatorial_chain(eps)
    d = out_dir(args.out)
    formats.save_chain(chain, d / "chain.json")
    write_csv(d / "Q.csv", ["state"] + [chain.state_label(j) for j in range(3)],
              [[chain.state_label(i)] + list(chain.Q[i]) for i in range(3)])

    closed = np.array([4 * eps / (1 + 4 * eps), 1 / (2 + 8 * eps), 1 / (2 + 8 * eps)])
    pi = stationary_distribution(chain)
    built = build_pairwise_update_chain(pairwise_dynamics(dictatorial_tensor(eps), 2)).reorder(DICTATOR_STATES)
    analysis, tables = analyze_chain(chain, args.mix_eps, args.t_max)
    write_tables(d, tables)

    runs = simulate_runs(chain, 0, args.t_max, args.runs, args.seed)
    exact_row = np.eye(3)[0]
    rows = []
    for t in range(args.t_max + 1):
        emp = np.bincount(runs[:, t], minlength=3) / args.runs
        approx0 = 2.0**-t
        se = math.sqrt(approx0 * (1 - approx0) / args.runs)
        rows.append([t, *emp, *exact_row, approx0, 0.5 * (1 - approx0), se])
        exact_row = exact_row @ chain.Q
    write_csv(d / "trapping.csv",
              ["t", "emp_P0", "emp_P1", "emp_P2", "exact_P0", "exact_P1", "exact_P2",
               "approx_P0", "approx_P1", "stderr_P0"], rows)
    last = rows[-1]
    summary = {
        "command": "dictator",
        "params": {"eps": eps, "t_max": args.t_max, "runs": args.runs, "seed": args.seed, "mix_eps": args.mix_eps},
        "states": [chain.state_label(i) for i in range(3)],
        "Q": chain.Q.tolist(),
        "stationary_closed_form": closed.tolist(),
        "stationary_computed": pi.tolist(),
        "stationary_max_abs_diff": float(np.max(np.abs(pi - closed))),
        "pairwise_construction_max_diff": float(np.max(np.abs(built.Q - chain.Q))),
        "analysis": analysis,
        "trapping": {
            "t": args.t_max,
            "runs": args.runs,
            "seed": args.seed,
            "emp_P0": last[1], "emp_P1": last[2], "emp_P2": last[3],
            "exact_P0": last[4],
            "approx_P0": last[7],
            "z_P0_vs_approx": (last[1] - last[7]) / last[9] if last[9] > 0 else None,
        },
    }
    write_json(d / "summary.json", summary)
    print(f"dictator eps={eps}: stationary {np.round(pi, 12).tolist()}, reversible={analysis['reversible']}")
    print(f"trapping t={args.t_max}: Pr[P0]={last[1]:.6g} (2^-t = {last[7]:.6g}, exact {last[4]:.6g})")
    return 0


def cmd_toy_ga(args) -> int:
    l = args.l
    check_toy_ga_length(l)
    T = args.T if args.T is not None else int(round(l**3.5))
    dyn = toy_ga_dynamics(l, args.mutation)
    d = out_dir(args.out)
    summary = {
        "command": "toy-ga",
        "params": {"l": l, "n": dyn.n, "T": T, "restarts": args.restarts, "seed": args.seed,
                   "start": args.start, "mutation": args.mutation, "exact": args.exact},
        "abundance_c": ABUNDANCE_C,
    }
    if args.exact:
        summary["exact"] = _toy_ga_exact(l, args.mutation, args.mix_eps, d)
    t0 = time.perf_counter()
    out = restart_optimizer(dyn, T, args.restarts, args.seed, args.start, args.workers)
    space = dyn.space
    write_csv(d / "restarts.csv", ["run", "best_individual", "best_fitness", "success", "best_so_far"],
              [[r.run, space.label(r.best_individual), r.best_fitness, r.success, r.best_so_far]
               for r in out.records])
    res = out.to_json()
    res["global_best_individual"] = space.label(out.global_best_individual)
    res["half_c"] = ABUNDANCE_C / 2
    res["rate_at_least_half_c"] = out.success_rate >= ABUNDANCE_C / 2
    summary["restarts"] = res
    write_json(d / "summary.json", summary)
    elapsed = time.perf_counter() - t0
    if "exact" in summary:
        print(f"exact chain: N={summary['exact']['N']}")
    print(f"toy-ga l={l}: {out.successes}/{args.restarts} restarts found an optimum "
          f"(rate {out.success_rate:.4f}, bound {out.bound:.4f}); {elapsed:.1f}s")
    return 0


def _toy_ga_exact(l, mutation, mix_eps, d: Path) -> dict:
    chain = build_toy_ga_chain(l, mutation)
    dyn = toy_ga_dynamics(l, mutation)
    st = chain_structure(chain)
    info = {"N": chain.N, "irreducible": st.irreducible, "period": st.period}
    if not st.ergodic:
        info["note"] = f"chain is not ergodic ({len(st.unreachable)} states outside the class of state 0)"
        return info
    pi = stationary_distribution(chain)
    best = optimal_states(chain, dyn.fitness)
    uniform = np.full(chain.N, 1.0 / chain.N)
    est = lambda_max_estimate(chain, pi)
    mix = mixing_time(chain, mix_eps, pi=pi)
    write_csv(d / "stationary.csv", ["index", "population", "pi"],
              [[i, chain.state_label(i), pi[i]] for i in range(chain.N)])
    write_csv(d / "mixing.csv", ["t", "delta", "lemma1_upper", "lemma2_lower"], mix.rows())
    info.update({
        "tv_from_uniform": total_variation(pi, uniform),
        "pi_min": float(pi.min()),
        "pi_max": float(pi.max()),
        "optimal_mass": float(pi[best].sum()),
        "optimal_fraction_uniform": len(best) / chain.N,
        "lambda_max": est.value,
        "lambda_method": est.method,
        "mix_eps": mix_eps,
        "tau": mix.tau,
        "tau_certified": mix.certified,
    })
    return info


def _fitness(spec: str, l: int):
    if spec in FITNESS_BUILTINS:
        return FITNESS_BUILTINS[spec](l)
    path = Path(spec)
    if not path.exists():
        raise ParameterError(f"unknown fitness {spec!r}: not a builtin ({', '.join(FITNESS_BUILTINS)}) or a file")
    f = formats.load_fitness(path)
    if f.r != 2**l:
        raise ParameterError(f"fitness file lists {f.r} values, l={l} needs {2**l}")
    return f


def cmd_metropolis(args) -> int:
    l = args.l
    if l < 1:
        raise ParameterError("l must be >= 1")
    f = _fitness(args.fitness, l)
    space = TypeSpace.bitstrings(l)
    d = out_dir(args.out)
    formula = f.values / f.values.sum()
    summary = {
        "command": "metropolis",
        "params": {"l": l, "fitness": args.fitness, "steps": args.steps, "lazy": args.lazy, "seed": args.seed},
        "pi_f_formula_modal": space.label(int(np.argmax(formula))),
    }
    computed = None
    if 2**l <= state_cap():
        chain = build_metropolis_chain(f, l, args.lazy)
        st = chain_structure(chain)
        summary.update({"irreducible": st.irreducible, "period": st.period})
        if st.irreducible:
            computed = stationary_distribution(chain, DIRECT, require_ergodic=False)
            summary["pi_computed_max_abs_diff"] = float(np.max(np.abs(computed - formula)))
        if st.period != 1:
            summary["note"] = "periodic chain (constant fitness without --lazy): visit frequencies still converge"
    dyn = metropolis_dynamics(f, l, args.lazy)
    index = {(x,): x for x in range(2**l)}
    emp = None
    if args.steps > 0:
        traj = simulate_ga(dyn, [0], args.steps, args.seed, index=index)
        emp = visit_frequencies(traj, 2**l, burn_in=0.1).freq
        summary["empirical_tv"] = total_variation(emp, formula)
        summary["modal_sampled_state"] = space.label(int(np.argmax(emp)))
    if l <= 12:
        summary["pi_f_formula"] = formula.tolist()
        if computed is not None:
            summary["pi_computed"] = computed.tolist()
    rows = []
    for x in range(2**l):
        rows.append([x, space.label(x), formula[x],
                     computed[x] if computed is not None else "", emp[x] if emp is not None else ""])
    write_csv(d / "distribution.csv", ["index", "state", "formula", "computed", "empirical"], rows)
    write_json(d / "summary.json", summary)
    print(f"metropolis l={l} {args.fitness}: formula modal {summary['pi_f_formula_modal']}"
          + (f", sampled modal {summary['modal_sampled_state']}" if emp is not None else ""))
    return 0


def cmd_analyze(args) -> int:
    chain = formats.load_chain(args.chain_file)
    d = out_dir(args.out)
    analysis, tables = analyze_chain(chain, args.eps, args.t_max)
    write_tables(d, tables)
    write_json(d / "summary.json", {"command": "analyze", "params": {"chain_file": str(args.chain_file),
                                                                      "eps": args.eps, "t_max": args.t_max},
                                    "analysis": analysis})
    flag = "reversible" if analysis.get("reversible") else "non-reversible"
    print(f"analyze: N={analysis['N']} ergodic={analysis['ergodic']} {flag} "
          f"lambda_max={analysis.get('lambda_max')} ({analysis.get('lambda_method')})")
    return 0


def _tensor(spec: str) -> LocalTransitionMatrix:
    if spec.startswith("dictatorial:"):
        return dictatorial_tensor(float(spec.split(":", 1)[1]))
    if spec.startswith("identity:"):
        return LocalTransitionMatrix.identity(int(spec.split(":", 1)[1]))
    return formats.load_tensor(spec)


def cmd_density(args) -> int:
    B = _tensor(args.tensor)
    if args.p0:
        try:
            p0 = np.array([float(x) for x in args.p0.split(",")])
        except ValueError:
            raise ParameterError(f"--p0 must be comma-separated numbers, got {args.p0!r}") from None
    else:
        p0 = np.full(B.r, 1.0 / B.r)
    d = out_dir(args.out)
    params = {"tensor": args.tensor, "p0": p0.tolist(), "tol": args.tol, "max_iter": args.max_iter}
    try:
        eq = iterate_to_equilibrium(p0, B, args.tol, args.max_iter, keep_history=True)
    except NonConvergenceError as exc:
        write_json(d / "summary.json", {"command": "density", "params": params, **error_summary(exc),
                                        "last_iterate": None if exc.last is None else list(exc.last)})
        raise
    write_csv(d / "densities.csv", ["step"] + [f"p{z}" for z in range(B.r)],
              [[k, *p] for k, p in enumerate(eq.history)])
    write_json(d / "summary.json", {"command": "density", "params": params, "rho": eq.rho.tolist(),
                                    "steps": eq.steps, "residual": eq.residual})
    print(f"density: equilibrium {np.round(eq.rho, 12).tolist()} after {eq.steps} steps (residual {eq.residual:.3g})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixevo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dictator", help="dictatorial-coin chain: exact analysis and trapping experiment")
    p.add_argument("--eps", type=float, default=0.125)
    p.add_argument("--t-max", type=int, default=20)
    p.add_argument("--runs", type=int, default=10_000)
    p.add_argument("--mix-eps", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="mixevo-out/dictator")
    p.set_defaults(func=cmd_dictator)

    p = sub.add_parser("toy-ga", help="restart optimization with the toy GA")
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--T", type=int, default=None, help="generations per restart (default round(l^3.5))")
    p.add_argument("--restarts", type=int, default=200)
    p.add_argument("--exact", action="store_true", help="also build and analyze the exact chain")
    p.add_argument("--mix-eps", type=float, default=1e-3)
    p.add_argument("--start", choices=("zeros", "random"), default="zeros")
    p.add_argument("--mutation", choices=("lazy", "always"), default="lazy")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="mixevo-out/toy-ga")
    p.set_defaults(func=cmd_toy_ga)

    p = sub.add_parser("metropolis", help="Metropolis-filtered single-bit walk")
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--fitness", default="two_pow_i_squared",
                   help="builtin (two_pow_i_squared, ones_count, constant) or a JSON fitness file")
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--lazy", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="mixevo-out/metropolis")
    p.set_defaults(func=cmd_metropolis)

    p = sub.add_parser("analyze", help="spectral and mixing report for a chain file")
    p.add_argument("chain_file")
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--t-max", type=int, default=20)
    p.add_argument("--out", default="mixevo-out/analyze")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("density", help="iterate the quadratic density map to equilibrium")
    p.add_argument("tensor", help="tensor JSON file, or dictatorial:<eps> / identity:<r>")
    p.add_argument("--p0", default=None, help="comma-separated initial distribution (default uniform)")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--max-iter", type=int, default=100_000)
    p.add_argument("--out", default="mixevo-out/density")
    p.set_defaults(func=cmd_density)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MixevoError as exc:
        print(f"mixevo {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
