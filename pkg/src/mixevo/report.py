"""Output directory writers and the generic chain analysis report."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .chains import MarkovChain
from .errors import MixevoError
from .spectral import (
    DIRECT,
    POWER,
    chain_structure,
    check_reversibility,
    lambda_max_estimate,
    mixing_time,
    stationary_distribution,
    symmetrized_spectrum,
    verify_spectral_sandwich,
)

SIG = 12


def r12(x):
    """Round floats (recursively) to 12 significant digits for output."""
    if isinstance(x, dict):
        return {str(k): r12(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [r12(v) for v in x]
    if isinstance(x, np.ndarray):
        return r12(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return str(x)
        return float(f"{x:.{SIG}g}")
    return x


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.{SIG}g}"
    return str(x)


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(r12(data), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def analyze_chain(chain: MarkovChain, eps: float = 1e-3, t_max: int = 20):
    """Structure, stationary law, reversibility, spectrum, mixing and sandwich.

    Returns ``(summary, tables)`` where tables maps a CSV name to
    ``(header, rows)``. Depends only on Q, so a chain re-read from its
    exported file gives an identical report.
    """
    tables = {}
    st = chain_structure(chain)
    summary = {
        "N": chain.N,
        "irreducible": st.irreducible,
        "period": st.period,
        "ergodic": st.ergodic,
        "unreachable_from_0": len(st.unreachable),
    }
    if not st.irreducible:
        summary["note"] = "reducible chain: no unique stationary distribution"
        return summary, tables
    pi = stationary_distribution(chain, DIRECT, require_ergodic=False)
    summary["stationary"] = pi.tolist()
    summary["pi_min"] = float(pi.min())
    if st.ergodic:
        pi_power = stationary_distribution(chain, POWER)
        summary["power_iteration_max_diff"] = float(np.max(np.abs(pi - pi_power)))
    rev = check_reversibility(chain, pi)
    summary["reversible"] = rev.reversible
    summary["max_detailed_balance_violation"] = rev.max_violation
    lam_rev = check_reversibility(chain, pi, 1e-10).reversible
    if lam_rev:
        spec = symmetrized_spectrum(chain, pi)
        summary["spectrum"] = spec.to_json()
        summary["lambda_max"] = spec.lambda_max
        summary["lambda_method"] = spec.method
    else:
        est = lambda_max_estimate(chain, pi)
        summary["lambda_max"] = est.value
        summary["lambda_method"] = est.method
        summary["note"] = "non-reversible chain: lambda_max is a decay-rate fit, not exact"
    if st.ergodic:
        mix = mixing_time(chain, eps, pi=pi)
        summary["mixing"] = {k: v for k, v in mix.to_json().items() if k != "table"}
        tables["mixing.csv"] = (("t", "delta", "lemma1_upper", "lemma2_lower"), mix.rows())
        if lam_rev:
            sw = verify_spectral_sandwich(chain, t_max, pi=pi)
            summary["sandwich"] = {"t_max": t_max, "all_t": sw.all_t, "passed": sw.passed,
                                   "failures": sw.failures()}
            tables["sandwich.csv"] = (
                ("t", "delta", "lower", "upper", "checked", "passed"),
                [(r.t, r.delta, r.lower, r.upper, r.checked, r.passed) for r in sw.rows],
            )
    return summary, tables


def write_tables(directory: Path, tables: dict, prefix: str = "") -> None:
    for name, (header, rows) in tables.items():
        write_csv(directory / f"{prefix}{name}", header, rows)


def error_summary(exc: MixevoError) -> dict:
    return {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
