"""Scenario files: a YAML document holding either an explicit tree or a builder tag.

Explicit form::

    format: scenario/1
    name: complete_binomial_log
    time_grid: [0.0, 1.0]
    tree:
      nodes:
        - {id: root, parent: null, time_index: 0, cond_prob: 1.0}
        - {id: up, parent: root, time_index: 1, cond_prob: 0.5}
        - {id: down, parent: root, time_index: 1, cond_prob: 0.5}
    prices: {root: 1.0, up: 2.0, down: 0.5}       # scalar or list per node
    endowment: {root: 0.0, up: 0.0, down: 0.0}    # optional, default 0
    mu: [0.0, 1.0]
    cone: {generators: [[1.0], [-1.0]]}           # optional, default unconstrained
    utility: {family: log}

Builder form::

    format: scenario/1
    builder: complete_binomial
    params: {u: 2.0, d: 0.5, p: 0.5, N: 1}
    utility: {family: power, alpha: 0.5}
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .errors import ScenarioError, UtilityError
from .market_model import ConsumptionMeasure, ConstraintCone, EventTree, MarketScenario, validate_scenario
from .scenarios import BUILDERS
from .utility import Discounted, Log, Mixed, Power, Scaled, StochasticDiscount, UtilityField

FORMAT = "scenario/1"
FAMILIES = ("log", "power", "discounted", "scaled", "mixed", "stochastic_discount")


def _fail(path: str, msg: str):
    raise ScenarioError(f"{path}: {msg}", [f"{path}: {msg}"])


def _number(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(path, f"expected a number, got {v!r}")
    return float(v)


def utility_from_spec(spec, s: MarketScenario | None = None, path: str = "utility") -> UtilityField:
    """Build a field from its mapping form; unknown tags raise ScenarioError."""
    if not isinstance(spec, dict) or "family" not in spec:
        _fail(path, "expected a mapping with a 'family' key")
    fam = spec["family"]
    try:
        if fam == "log":
            return Log()
        if fam == "power":
            return Power(_number(spec.get("alpha"), f"{path}.alpha"))
        if fam == "discounted":
            base = utility_from_spec(spec.get("base"), s, f"{path}.base")
            if "psi" in spec:
                return Discounted(base, [_number(v, f"{path}.psi") for v in spec["psi"]])
            if s is None:
                _fail(path, "discount rate beta needs the scenario's time grid")
            return Discounted.exponential(base, _number(spec.get("beta"), f"{path}.beta"), s.tree.time_grid)
        if fam == "scaled":
            return Scaled(utility_from_spec(spec.get("base"), s, f"{path}.base"), _number(spec.get("scale"), f"{path}.scale"))
        if fam == "mixed":
            if s is None:
                _fail(path, "mixed field needs the scenario's horizon")
            run = utility_from_spec(spec.get("running"), s, f"{path}.running")
            term = utility_from_spec(spec.get("terminal"), s, f"{path}.terminal")
            return Mixed(run, term, s.tree.horizon_index)
        if fam == "stochastic_discount":
            if s is None:
                _fail(path, "stochastic discount needs the scenario's nodes")
            base = utility_from_spec(spec.get("base"), s, f"{path}.base")
            B = spec.get("B")
            if isinstance(B, dict):
                vals = np.array([_number(B[lab], f"{path}.B.{lab}") if lab in B else np.nan for lab in s.tree.labels])
                if np.any(np.isnan(vals)):
                    _fail(f"{path}.B", "missing value for some node")
            else:
                vals = np.array([_number(v, f"{path}.B") for v in B])
            return StochasticDiscount(base, vals)
    except UtilityError as exc:
        _fail(path, str(exc))
    _fail(f"{path}.family", f"unknown utility family {fam!r} (known: {', '.join(FAMILIES)})")


def utility_to_spec(U: UtilityField, s: MarketScenario | None = None) -> dict:
    d = U.describe()
    if d["family"] == "custom":
        raise UtilityError("custom fields cannot be serialized")
    return _relabel(d, s)


def _relabel(d, s):
    d = dict(d)
    d.pop("horizon_index", None)
    for k in ("base", "running", "terminal"):
        if k in d:
            d[k] = _relabel(d[k], s)
    if d["family"] == "stochastic_discount" and s is not None:
        d["B"] = {str(lab): float(b) for lab, b in zip(s.tree.labels, d["B"])}
    return d


def _per_node(obj, labels, path, d=None):
    if not isinstance(obj, dict):
        _fail(path, "expected a mapping from node id to value")
    unknown = set(map(str, obj)) - set(map(str, labels))
    if unknown:
        _fail(path, f"unknown node ids {sorted(unknown)}")
    lookup = {str(k): v for k, v in obj.items()}
    rows = []
    for lab in labels:
        if str(lab) not in lookup:
            _fail(path, f"missing value for node {lab!r}")
        v = lookup[str(lab)]
        vals = v if isinstance(v, list) else [v]
        rows.append([_number(x, f"{path}.{lab}") for x in vals])
    width = {len(r) for r in rows}
    if len(width) != 1 or (d is not None and width != {d}):
        _fail(path, "every node needs the same number of components")
    return np.array(rows)


def scenario_from_document(doc: dict, source: str = "<document>") -> tuple[MarketScenario, UtilityField]:
    if not isinstance(doc, dict):
        _fail(source, "top level must be a mapping")
    if doc.get("format") != FORMAT:
        _fail("format", f"expected {FORMAT!r}, got {doc.get('format')!r}")
    if "builder" in doc:
        tag = doc["builder"]
        if tag not in BUILDERS:
            _fail("builder", f"unknown builder {tag!r} (known: {', '.join(sorted(BUILDERS))})")
        params = doc.get("params") or {}
        try:
            s = BUILDERS[tag](**params)
        except TypeError as exc:
            _fail("params", str(exc))
    else:
        s = _explicit(doc)
    U = utility_from_spec(doc.get("utility", {"family": "log"}), s)
    return s, U


def _explicit(doc):
    for key in ("time_grid", "tree", "prices", "mu"):
        if key not in doc:
            _fail(key, "missing section")
    tg = [_number(v, "time_grid") for v in doc["time_grid"]]
    nodes = (doc["tree"] or {}).get("nodes")
    if not isinstance(nodes, list) or not nodes:
        _fail("tree.nodes", "expected a non-empty list")
    ids, parents, tidx, probs = [], [], [], []
    for i, nd in enumerate(nodes):
        p = f"tree.nodes[{i}]"
        if not isinstance(nd, dict):
            _fail(p, "expected a mapping")
        for key in ("id", "parent", "time_index", "cond_prob"):
            if key not in nd:
                _fail(f"{p}.{key}", "missing")
        cp = _number(nd["cond_prob"], f"{p}.cond_prob")
        if not 0.0 < cp <= 1.0:
            _fail(f"{p}.cond_prob", f"probability must lie in (0, 1], got {cp}")
        ti = nd["time_index"]
        if isinstance(ti, bool) or not isinstance(ti, int) or ti < 0:
            _fail(f"{p}.time_index", f"expected a nonnegative integer, got {ti!r}")
        ids.append(str(nd["id"]))
        parents.append(None if nd["parent"] is None else str(nd["parent"]))
        tidx.append(ti)
        probs.append(cp)
    tree = EventTree.from_nodes(ids, parents, tidx, probs, tg)
    S = _per_node(doc["prices"], tree.labels, "prices")
    E = _per_node(doc["endowment"], tree.labels, "endowment", 1)[:, 0] if doc.get("endowment") else np.zeros(tree.n_nodes)
    mu = ConsumptionMeasure([_number(v, "mu") for v in doc["mu"]])
    cone_doc = doc.get("cone")
    if cone_doc and cone_doc.get("generators") is not None:
        gens = np.array([[_number(v, "cone.generators") for v in (g if isinstance(g, list) else [g])] for g in cone_doc["generators"]])
        cone = ConstraintCone(gens)
    else:
        cone = ConstraintCone.unconstrained(S.shape[1])
    return MarketScenario(tree, S, E, mu, cone, str(doc.get("name", "scenario")))


def load_scenario(path) -> tuple[MarketScenario, UtilityField]:
    """Parse, construct and validate; errors carry line or field context."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ScenarioError(f"{path}: syntax error at {where}: {getattr(exc, 'problem', exc)}") from exc
    s, U = scenario_from_document(doc, str(path))
    validate_scenario(s).raise_if_failed()
    return s, U


def scenario_to_document(s: MarketScenario, U: UtilityField) -> dict:
    tree = s.tree
    labels = [str(lab) for lab in tree.labels]

    def per_node(arr):
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 2 and arr.shape[1] == 1:
            arr = arr[:, 0]
        return {lab: (v.tolist() if np.ndim(v) else float(v)) for lab, v in zip(labels, arr)}

    nodes = [
        {
            "id": labels[n],
            "parent": None if tree.parent[n] < 0 else labels[tree.parent[n]],
            "time_index": int(tree.time_index[n]),
            "cond_prob": float(tree.cond_prob[n]),
        }
        for n in range(tree.n_nodes)
    ]
    return {
        "format": FORMAT,
        "name": s.name,
        "time_grid": [float(t) for t in tree.time_grid],
        "tree": {"nodes": nodes},
        "prices": per_node(s.prices),
        "endowment": per_node(s.endowment),
        "mu": [float(w) for w in s.mu.weights],
        "cone": {"generators": s.cone.generators.tolist()},
        "utility": utility_to_spec(U, s),
    }


def save_scenario(path, s: MarketScenario, U: UtilityField) -> None:
    Path(path).write_text(yaml.safe_dump(scenario_to_document(s, U), sort_keys=False, default_flow_style=None))


def shipped_fixtures() -> dict[str, Path]:
    """Scenario files bundled with the package, keyed by stem."""
    root = Path(__file__).parent / "fixtures"
    return {p.stem: p for p in sorted(root.glob("*.scn"))}
