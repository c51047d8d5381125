"""JSON file formats for tensors, fitness tables and chains.

Tensor:  {"r": 2, "b": [[u, v, w, z, value], ...]}   unlisted entries are 0
Fitness: {"r": 4, "f": [f(0), f(1), ...]}
Chain:   {"states": [...], "Q": [[...], ...], "labels": {...}}
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .chains import LocalTransitionMatrix, MarkovChain
from .errors import ParameterError, ParseError
from .genotype import Fitness, Population


def _load(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be a JSON object")
    return data


def _field(data: dict, name: str, path):
    if name not in data:
        raise ParseError(f"{path}: missing field {name!r}")
    return data[name]


def _int_field(data, name, path) -> int:
    value = _field(data, name, path)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ParseError(f"{path}: field {name!r} must be an integer")
    return value


def load_tensor(path) -> LocalTransitionMatrix:
    data = _load(path)
    r = _int_field(data, "r", path)
    if r < 2:
        raise ParseError(f"{path}: field 'r' must be >= 2")
    entries = _field(data, "b", path)
    if not isinstance(entries, list):
        raise ParseError(f"{path}: field 'b' must be a list of [u, v, w, z, value] entries")
    b = np.zeros((r,) * 4)
    for k, entry in enumerate(entries):
        if not (isinstance(entry, list) and len(entry) == 5):
            raise ParseError(f"{path}: b[{k}] must be [u, v, w, z, value]")
        *idx, value = entry
        if not all(isinstance(i, int) and 0 <= i < r for i in idx):
            raise ParseError(f"{path}: b[{k}] has an index outside 0..{r - 1}")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ParseError(f"{path}: b[{k}] value must be a number")
        b[tuple(idx)] += value
    try:
        return LocalTransitionMatrix(b)
    except ParameterError as exc:
        raise ParseError(f"{path}: {exc}") from None


def save_tensor(B: LocalTransitionMatrix, path) -> None:
    entries = [[int(u), int(v), int(w), int(z), float(B.b[u, v, w, z])] for u, v, w, z in zip(*np.nonzero(B.b))]
    Path(path).write_text(json.dumps({"r": B.r, "b": entries}, indent=1) + "\n")


def load_fitness(path) -> Fitness:
    data = _load(path)
    r = _int_field(data, "r", path)
    values = _field(data, "f", path)
    if not isinstance(values, list) or len(values) != r:
        raise ParseError(f"{path}: field 'f' must be a list of {r} numbers")
    for k, v in enumerate(values):
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ParseError(f"{path}: f[{k}] must be a number")
    try:
        return Fitness(np.array(values, dtype=float))
    except ParameterError as exc:
        raise ParseError(f"{path}: {exc}") from None


def load_chain(path) -> MarkovChain:
    data = _load(path)
    Q = _field(data, "Q", path)
    if not isinstance(Q, list) or not Q:
        raise ParseError(f"{path}: field 'Q' must be a non-empty list of rows")
    N = len(Q)
    for i, row in enumerate(Q):
        if not isinstance(row, list) or len(row) != N:
            raise ParseError(f"{path}: Q[{i}] must be a list of {N} numbers")
        for j, x in enumerate(row):
            if not isinstance(x, (int, float)) or isinstance(x, bool):
                raise ParseError(f"{path}: Q[{i}][{j}] must be a number")
            if x < 0:
                raise ParseError(f"{path}: Q[{i}][{j}] = {x} is negative")
        total = sum(row)
        if abs(total - 1.0) > 1e-10:
            raise ParseError(f"{path}: row Q[{i}] sums to {total:.15g}, not 1")
    raw_states = data.get("states", list(range(N)))
    if not isinstance(raw_states, list) or len(raw_states) != N:
        raise ParseError(f"{path}: field 'states' must list {N} states")
    states = [_decode_state(s) for s in raw_states]
    labels = data.get("labels", {})
    if not isinstance(labels, dict):
        raise ParseError(f"{path}: field 'labels' must be an object")
    return MarkovChain(states, np.array(Q, dtype=float), labels)


def _decode_state(s):
    if isinstance(s, list) and s and all(isinstance(c, int) and c >= 0 for c in s) and sum(s) > 0:
        return Population(tuple(s))
    return s


def save_chain(chain: MarkovChain, path) -> None:
    Path(path).write_text(json.dumps(chain.to_json(), sort_keys=True) + "\n")
