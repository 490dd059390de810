"""JSON model and scenario documents.

Model document::

    {"nodes": [{"id": 0, "cardinality": 2, "potential": [1.0, 2.0]}, ...],
     "edges": [{"i": 0, "j": 1, "potential": [[2.0, 1.0], [1.0, 2.0]]}, ...]}

Edge endpoints refer to node ids.  Scenario document::

    {"hypotheses": ["nominal", "fault"], "prior": [0.5, 0.5],
     "agents": [{"id": "a", "likelihood": [0.9, 0.1]}, ...],
     "topology": [["a", "b"], ...], "method": "bethe-consensus",
     "epsilon": 1e-6, "params": {...}}

Floats are written with Python's shortest round-trip representation, so
``parse_model(serialize_model(m)) == m`` exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .fdd import METHODS, HypothesisBank, LocalEvidence
from .model import PairwiseMRF


class InputError(ValueError):
    """Malformed input document; the message names the offending key."""


def _load(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def _require(obj, key: str, where: str):
    if not isinstance(obj, dict):
        raise InputError(f"{where} must be an object")
    if key not in obj:
        raise InputError(f"missing key '{key}' in {where}")
    return obj[key]


def _numbers(value, where: str) -> list:
    if not isinstance(value, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise InputError(f"'{where}' must be a list of numbers")
    return [float(v) for v in value]


def _matrix(value, where: str) -> list:
    if not isinstance(value, list) or not value:
        raise InputError(f"'{where}' must be a non-empty list of rows")
    rows = [_numbers(r, where) for r in value]
    if len({len(r) for r in rows}) != 1:
        raise InputError(f"'{where}' rows have different lengths")
    return rows


def model_from_dict(doc) -> PairwiseMRF:
    nodes = _require(doc, "nodes", "model")
    if not isinstance(nodes, list) or not nodes:
        raise InputError("'nodes' must be a non-empty list")
    ids, pots = [], []
    for k, node in enumerate(nodes):
        where = f"nodes[{k}]"
        nid = _require(node, "id", where)
        if nid in ids:
            raise InputError(f"duplicate id {nid!r} in {where}")
        card = _require(node, "cardinality", where)
        pot = _numbers(_require(node, "potential", where), f"{where}.potential")
        if not isinstance(card, int) or card != len(pot):
            raise InputError(f"'{where}.cardinality' does not match its potential length")
        ids.append(nid)
        pots.append(pot)
    index = {nid: k for k, nid in enumerate(ids)}
    edges = []
    for e, edge in enumerate(doc.get("edges", [])):
        where = f"edges[{e}]"
        i, j = _require(edge, "i", where), _require(edge, "j", where)
        for key, val in (("i", i), ("j", j)):
            if val not in index:
                raise InputError(f"'{where}.{key}' references unknown node id {val!r}")
        edges.append((index[i], index[j], _matrix(_require(edge, "potential", where), f"{where}.potential")))
    return PairwiseMRF(pots, edges, ids)


def parse_model(text: str) -> PairwiseMRF:
    return model_from_dict(_load(text))


def model_to_dict(mrf: PairwiseMRF) -> dict:
    return {
        "nodes": [
            {"id": label, "cardinality": len(pot), "potential": pot.tolist()}
            for label, pot in zip(mrf.labels, mrf.node_potentials)
        ],
        "edges": [
            {"i": mrf.labels[i], "j": mrf.labels[j], "potential": pot.tolist()}
            for i, j, pot in mrf.edges
        ],
    }


def serialize_model(mrf: PairwiseMRF) -> str:
    return dumps(model_to_dict(mrf))


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


@dataclass
class Scenario:
    bank: HypothesisBank
    evidences: list
    topology: list
    method: str = "bp-sum"
    epsilon: float = 1e-6
    params: dict = field(default_factory=dict)


def scenario_from_dict(doc) -> Scenario:
    labels = _require(doc, "hypotheses", "scenario")
    if not isinstance(labels, list) or len(labels) < 2:
        raise InputError("'hypotheses' must list at least two labels")
    prior = doc.get("prior")
    if prior is not None:
        prior = _numbers(prior, "prior")
        if len(prior) != len(labels):
            raise InputError("'prior' length does not match 'hypotheses'")
    try:
        bank = HypothesisBank(labels, prior)
    except ValueError as exc:
        raise InputError(f"'prior': {exc}") from exc
    agents = _require(doc, "agents", "scenario")
    if not isinstance(agents, list) or not agents:
        raise InputError("'agents' must be a non-empty list")
    evidences = []
    for k, agent in enumerate(agents):
        where = f"agents[{k}]"
        aid = _require(agent, "id", where)
        lik = _numbers(_require(agent, "likelihood", where), f"{where}.likelihood")
        if len(lik) != len(labels):
            raise InputError(f"'{where}.likelihood' length does not match 'hypotheses'")
        try:
            evidences.append(LocalEvidence(aid, lik))
        except ValueError as exc:
            raise InputError(f"'{where}.likelihood': {exc}") from exc
    topology = doc.get("topology", [])
    if not isinstance(topology, list) or not all(isinstance(e, list) and len(e) == 2 for e in topology):
        raise InputError("'topology' must be a list of [agent, agent] pairs")
    method = doc.get("method", "bp-sum")
    if method not in METHODS:
        raise InputError(f"'method' must be one of {', '.join(METHODS)}")
    epsilon = doc.get("epsilon", 1e-6)
    if not isinstance(epsilon, (int, float)) or not 0 < epsilon <= 1:
        raise InputError("'epsilon' must be a number in (0, 1]")
    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise InputError("'params' must be an object")
    return Scenario(bank, evidences, [tuple(e) for e in topology], method, float(epsilon), params)


def parse_scenario(text: str) -> Scenario:
    return scenario_from_dict(_load(text))


def beliefs_to_list(beliefs) -> list:
    return [np.asarray(b, dtype=float).tolist() for b in beliefs]
