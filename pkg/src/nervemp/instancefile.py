"""Instance files: JSON encoding of cover, quadratics, task and observations.

The encoding is canonical (sorted keys, no whitespace, repr-roundtrip
floats), so saving a loaded instance reproduces the file byte for byte.
Quadratic matrices are stored as sparse upper-triangle triplets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cover import Graph, SubgraphCover
from .errors import InvalidInstance
from .quadform import QuadFunc
from .solubility import TaskSpec


@dataclass(frozen=True)
class Instance:
    """A complete problem: cover, local quadratics, optional task and observations."""

    cover: SubgraphCover
    quads: tuple
    task: TaskSpec | None = None
    observations: dict | None = None


def _quad_payload(q: QuadFunc) -> dict:
    triplets = []
    n = len(q.vars)
    for i in range(n):
        for j in range(i, n):
            v = float(q.A[i, j])
            if v != 0.0:
                triplets.append([i, j, v])
    return {
        "vars": list(q.vars),
        "A": triplets,
        "b": [float(x) for x in q.b],
        "c": float(q.c),
    }


def _quad_from_payload(payload: dict, index: int) -> QuadFunc:
    variables = tuple(payload["vars"])
    n = len(variables)
    A = np.zeros((n, n))
    for i, j, v in payload["A"]:
        if not (0 <= i <= j < n):
            raise InvalidInstance(
                f"quadratic {index}: triplet ({i}, {j}) outside upper triangle of size {n}"
            )
        A[i, j] = v
        A[j, i] = v
    b = np.array(payload["b"], dtype=float)
    if b.shape != (n,):
        raise InvalidInstance(f"quadratic {index}: b has length {b.shape[0]}, expected {n}")
    return QuadFunc(variables, A, b, float(payload["c"]))


def to_payload(instance: Instance) -> dict:
    cover = instance.cover
    payload = {
        "nodes": cover.graph.n,
        "edges": [list(e) for e in cover.graph.edges],
        "subgraphs": [list(s) for s in cover.subgraphs],
        "observables": [list(s) for s in cover.observables],
        "quads": [_quad_payload(q) for q in instance.quads],
    }
    if instance.task is not None:
        if instance.task.kind == "linear":
            payload["task"] = {
                "kind": "linear",
                "L": [[float(x) for x in row] for row in instance.task.L],
                "d": [float(x) for x in instance.task.d],
            }
        else:
            payload["task"] = {"kind": "objective_value"}
    if instance.observations is not None:
        payload["observations"] = [
            [int(v), float(instance.observations[v])]
            for v in sorted(instance.observations)
        ]
    return payload


def from_payload(payload: dict) -> Instance:
    try:
        n = int(payload["nodes"])
        edges = [tuple(e) for e in payload["edges"]]
        subgraphs = payload["subgraphs"]
        observables = payload["observables"]
    except (KeyError, TypeError) as exc:
        raise InvalidInstance(f"malformed instance payload: {exc}") from exc
    graph = Graph(n, edges)
    cover = SubgraphCover(graph, subgraphs, observables)
    raw_quads = payload.get("quads", [])
    if len(raw_quads) != cover.t:
        raise InvalidInstance(
            f"{len(raw_quads)} quadratics declared for {cover.t} subgraphs"
        )
    quads = []
    for i, qp in enumerate(raw_quads):
        q = _quad_from_payload(qp, i)
        extra = set(q.vars) - cover.node_set(i)
        if extra:
            raise InvalidInstance(
                f"quadratic {i} uses nodes {sorted(extra)} outside subgraph {i}"
            )
        quads.append(q)
    task = None
    if "task" in payload:
        tp = payload["task"]
        try:
            if tp["kind"] == "linear":
                L = np.array(tp["L"], dtype=float)
                if L.ndim != 2 or L.shape[1] != n:
                    raise InvalidInstance(
                        f"task matrix has shape {L.shape}, expected (*, {n})"
                    )
                task = TaskSpec(kind="linear", L=L, d=np.array(tp["d"], dtype=float))
            elif tp["kind"] == "objective_value":
                task = TaskSpec(kind="objective_value")
            else:
                raise InvalidInstance(f"unknown task kind {tp['kind']!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInstance(f"malformed task payload: {exc}") from exc
    observations = None
    if "observations" in payload:
        observations = {}
        for k, (v, val) in enumerate(payload["observations"]):
            if not (0 <= v < n):
                raise InvalidInstance(f"observation {k} names undeclared node {v}")
            observations[int(v)] = float(val)
    return Instance(cover=cover, quads=tuple(quads), task=task, observations=observations)


def dumps(instance: Instance) -> str:
    return json.dumps(to_payload(instance), sort_keys=True, separators=(",", ":"))


def loads(text: str) -> Instance:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInstance(f"not valid JSON: {exc}") from exc
    return from_payload(payload)


def save_instance(instance: Instance, path) -> None:
    Path(path).write_text(dumps(instance) + "\n")


def load_instance(path) -> Instance:
    return loads(Path(path).read_text())
