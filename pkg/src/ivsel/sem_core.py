"""Linear, homogeneous, Gaussian structural equation models on standardized variables.

A :class:`PathModel` is a DAG whose edges carry path coefficients. Every variable
is standardized to unit variance, so the idiosyncratic shock variances are not
free: they are solved for node by node (:func:`solve_shock_variances`). The
implied covariance follows from the reduced form ``V = Gamma @ eps``.

:func:`wright_marginal_cov` recomputes single covariances by enumerating open
paths in the graph. It shares no code with the matrix route and is used as an
independent check on it.
"""
from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateEstimandError, InfeasibleModelError, ModelSpecError

__all__ = [
    "ROLES",
    "PRESETS",
    "PARAM_NAMES",
    "PathModel",
    "ShockVariances",
    "CovarianceStructure",
    "build_model",
    "load_model",
    "preset_defaults",
    "solve_shock_variances",
    "implied_covariance",
    "wright_marginal_cov",
    "conditional_cov",
]

ROLES = ("instrument", "treatment", "outcome", "selection", "confounder", "other")
_UNIQUE_ROLES = ("instrument", "treatment", "outcome", "selection")

# shock variances below this are rejected as infeasible
FEASIBILITY_MARGIN = 1e-9
MAX_PATHS = 10**6

PARAM_NAMES = ("pi", "beta", "gamma", "tau", "delta1", "delta2", "delta3", "delta4")

_BASE_NODES = (
    ("Z", "instrument", False),
    ("U", "confounder", True),
    ("T", "treatment", False),
    ("S", "selection", False),
    ("Y", "outcome", False),
)
_BASE_EDGES = (
    ("Z", "T", "pi"),
    ("U", "T", "delta1"),
    ("T", "S", "gamma"),
    ("T", "Y", "beta"),
    ("U", "Y", "delta2"),
)

# name -> (nodes, edges with symbolic coefficients, default parameter values)
PRESETS = {
    "baseline": (
        _BASE_NODES,
        _BASE_EDGES,
        {"pi": 0.5, "beta": 0.4, "gamma": 0.6, "delta1": 0.5, "delta2": 0.5},
    ),
    "mediator": (
        _BASE_NODES,
        _BASE_EDGES + (("S", "Y", "tau"),),
        {"pi": 0.5, "beta": 0.4, "gamma": 0.6, "tau": 0.2, "delta1": 0.5, "delta2": 0.5},
    ),
    "confounded_mediator": (
        _BASE_NODES + (("W", "confounder", True),),
        _BASE_EDGES + (("S", "Y", "tau"), ("W", "S", "delta3"), ("W", "Y", "delta4")),
        {
            "pi": 0.5, "beta": 0.4, "gamma": 0.6, "tau": 0.2,
            "delta1": 0.5, "delta2": 0.5, "delta3": 0.4, "delta4": 0.2,
        },
    ),
    "treatment_confounder": (
        _BASE_NODES,
        _BASE_EDGES + (("U", "S", "delta3"),),
        {"pi": 0.5, "beta": 0.4, "gamma": 0.6, "delta1": 0.5, "delta2": 0.5, "delta3": 0.3},
    ),
}


def preset_defaults(name):
    """Default parameter values for preset ``name``."""
    try:
        return dict(PRESETS[name][2])
    except KeyError:
        raise ModelSpecError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class PathModel:
    """A validated DAG with role labels and path coefficients.

    Attributes
    ----------
    nodes : tuple of str
        Node names in declaration order. Matrices are indexed in this order.
    roles : dict
        node -> one of :data:`ROLES`.
    edges : tuple of (parent, child, coefficient)
    latent : dict
        node -> bool, True for unobserved variables.
    scenario : str or None
        Preset name the model was built from, if any.
    params : dict
        The preset parameters (empty for hand-written models).
    """

    nodes: tuple
    roles: dict
    edges: tuple
    latent: dict = field(default_factory=dict)
    scenario: str | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        _validate(self)
        object.__setattr__(self, "_topo", tuple(_toposort(self.nodes, self.edges)))

    def role_node(self, role):
        """Name of the unique node carrying ``role``."""
        for node in self.nodes:
            if self.roles[node] == role:
                return node
        raise ModelSpecError(f"no node with role {role!r}")

    @property
    def instrument(self):
        return self.role_node("instrument")

    @property
    def treatment(self):
        return self.role_node("treatment")

    @property
    def outcome(self):
        return self.role_node("outcome")

    @property
    def selection(self):
        return self.role_node("selection")

    @property
    def beta(self):
        """Direct path coefficient treatment -> outcome (0 if absent)."""
        t, y = self.treatment, self.outcome
        return sum(c for p, ch, c in self.edges if p == t and ch == y)

    def index(self, node):
        return self.nodes.index(node)

    def parents(self, node):
        return [(p, c) for p, ch, c in self.edges if ch == node]

    def children(self, node):
        return [(ch, c) for p, ch, c in self.edges if p == node]

    def topological_order(self):
        return list(self._topo)

    def coefficient_matrix(self):
        """``B[child, parent] = coefficient`` in node order."""
        k = len(self.nodes)
        b = np.zeros((k, k))
        for p, ch, c in self.edges:
            b[self.index(ch), self.index(p)] += c
        return b

    def descendants(self, node):
        seen = set()
        stack = [node]
        while stack:
            for ch, _ in self.children(stack.pop()):
                if ch not in seen:
                    seen.add(ch)
                    stack.append(ch)
        return seen

    def to_document(self):
        """The JSON model-spec document for this model."""
        return {
            "nodes": [
                {"name": n, "role": self.roles[n], "latent": bool(self.latent.get(n, False))}
                for n in self.nodes
            ],
            "edges": [{"from": p, "to": ch, "coef": c} for p, ch, c in self.edges],
        }


def _toposort(nodes, edges):
    indegree = {n: 0 for n in nodes}
    for _, ch, _ in edges:
        indegree[ch] += 1
    ready = [n for n in nodes if indegree[n] == 0]
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for p, ch, _ in edges:
            if p == n:
                indegree[ch] -= 1
                if indegree[ch] == 0:
                    ready.append(ch)
    if len(order) != len(nodes):
        stuck = sorted(n for n in nodes if n not in order)
        raise ModelSpecError(f"cycle detected among nodes {stuck}")
    return order


def _validate(model):
    nodes = model.nodes
    if len(set(nodes)) != len(nodes):
        raise ModelSpecError("duplicate node names")
    for n in nodes:
        role = model.roles.get(n)
        if role not in ROLES:
            raise ModelSpecError(f"node {n!r} has invalid role {role!r}")
    for role in _UNIQUE_ROLES:
        holders = [n for n in nodes if model.roles[n] == role]
        if len(holders) > 1:
            raise ModelSpecError(f"duplicate role {role!r}: {holders}")
        if not holders:
            raise ModelSpecError(f"missing role {role!r}")
    seen = set()
    for p, ch, c in model.edges:
        for n in (p, ch):
            if n not in nodes:
                raise ModelSpecError(f"unknown node {n!r} in edge {p}->{ch}")
        if p == ch:
            raise ModelSpecError(f"cycle detected: self-loop on {p!r}")
        if (p, ch) in seen:
            raise ModelSpecError(f"duplicate edge {p}->{ch}")
        seen.add((p, ch))
        if not np.isfinite(c) or abs(c) > 1:
            raise ModelSpecError(f"coefficient {c!r} on {p}->{ch} outside [-1, 1]")
    _toposort(nodes, model.edges)
    s, t = model.selection, model.treatment
    if s not in model.descendants(t):
        raise ModelSpecError(f"selection node {s!r} is not a descendant of treatment {t!r}")


def _from_preset(name, params):
    nodes, edges, defaults = PRESETS[name] if name in PRESETS else (None, None, None)
    if nodes is None:
        raise ModelSpecError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    params = dict(params or {})
    unknown = set(params) - set(defaults)
    if unknown:
        raise ModelSpecError(f"preset {name!r} has no parameter(s) {sorted(unknown)}")
    values = {**defaults, **{k: float(v) for k, v in params.items()}}
    return PathModel(
        nodes=tuple(n for n, _, _ in nodes),
        roles={n: r for n, r, _ in nodes},
        edges=tuple((p, ch, values[sym]) for p, ch, sym in edges),
        latent={n: lat for n, _, lat in nodes},
        scenario=name,
        params=values,
    )


def _from_document(doc):
    try:
        node_entries = doc["nodes"]
        edge_entries = doc.get("edges", [])
        nodes = tuple(str(e["name"]) for e in node_entries)
        roles = {str(e["name"]): e.get("role", "other") for e in node_entries}
        latent = {str(e["name"]): bool(e.get("latent", False)) for e in node_entries}
        edges = tuple((str(e["from"]), str(e["to"]), float(e["coef"])) for e in edge_entries)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelSpecError(f"malformed model document: {exc}") from exc
    return PathModel(nodes=nodes, roles=roles, edges=edges, latent=latent)


def build_model(spec, params=None):
    """Build and validate a :class:`PathModel`.

    Parameters
    ----------
    spec : str or mapping
        A preset name (``baseline``, ``mediator``, ``confounded_mediator``,
        ``treatment_confounder``), a model-spec document
        ``{"nodes": [...], "edges": [...]}``, or ``{"preset": name, "params": {...}}``.
    params : mapping, optional
        Overrides for the preset's parameters, keyed by ``pi``, ``beta``,
        ``gamma``, ``tau`` and ``delta1`` .. ``delta4``.

    Raises
    ------
    ModelSpecError
        Cycles, duplicate or missing roles, unknown nodes, coefficients outside [-1, 1].
    """
    if isinstance(spec, str):
        return _from_preset(spec, params)
    if isinstance(spec, Mapping):
        if "preset" in spec:
            merged = {**dict(spec.get("params") or {}), **dict(params or {})}
            return _from_preset(spec["preset"], merged)
        if params:
            raise ModelSpecError("params only apply to presets")
        return _from_document(spec)
    raise ModelSpecError(f"cannot build a model from {type(spec).__name__}")


def load_model(path, params=None):
    """Read a JSON model-spec document from ``path``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelSpecError(f"cannot read model spec {path}: {exc}") from exc
    return build_model(doc, params)


@dataclass(frozen=True)
class ShockVariances:
    var: dict

    def as_array(self, order):
        return np.array([self.var[n] for n in order])


@dataclass(frozen=True, eq=False)
class CovarianceStructure:
    """Covariance matrix with named rows/columns."""

    order: tuple
    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float)
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "order", tuple(self.order))

    def index(self, node):
        try:
            return self.order.index(node)
        except ValueError:
            raise ModelSpecError(f"unknown node {node!r}") from None

    def cov(self, a, b):
        return float(self.sigma[self.index(a), self.index(b)])

    def reorder(self, order):
        idx = [self.index(n) for n in order]
        return CovarianceStructure(tuple(order), self.sigma[np.ix_(idx, idx)])


def solve_shock_variances(model):
    """Shock variances that give every variable unit variance.

    Nodes are processed in topological order; each shock variance is one minus
    the variance of the node's parent combination under the covariance already
    fixed for the parents.

    Raises
    ------
    InfeasibleModelError
        If some shock variance falls below ``1e-9``; the offending node is reported.
    """
    order = model.topological_order()
    cov = {}
    shocks = {}
    for pos, v in enumerate(order):
        parents = model.parents(v)
        explained = sum(
            ca * cb * (1.0 if pa == pb else cov[pa, pb])
            for pa, ca in parents
            for pb, cb in parents
        )
        shock = 1.0 - explained
        if shock < FEASIBILITY_MARGIN:
            raise InfeasibleModelError(v, shock)
        shocks[v] = shock
        for w in order[:pos]:
            c = sum(cp * (1.0 if p == w else cov[p, w]) for p, cp in parents)
            cov[v, w] = cov[w, v] = c
    return ShockVariances(shocks)


def reduced_form(model):
    """Total-effects matrix ``Gamma = (I - B)^-1`` in node order.

    ``B`` is strictly lower triangular in topological order, so each row is the
    node's own unit vector plus its parents' rows scaled by the path coefficients.
    """
    k = len(model.nodes)
    gamma = np.zeros((k, k))
    for v in model.topological_order():
        i = model.index(v)
        gamma[i, i] = 1.0
        for p, c in model.parents(v):
            gamma[i] += c * gamma[model.index(p)]
    return gamma


def implied_covariance(model):
    """``Gamma @ diag(shock variances) @ Gamma.T`` over the model's nodes."""
    shocks = solve_shock_variances(model).as_array(model.nodes)
    g = reduced_form(model)
    sigma = (g * shocks) @ g.T
    sigma = 0.5 * (sigma + sigma.T)
    return CovarianceStructure(model.nodes, sigma)


def _enumerate_paths(model, a, b):
    """Yield simple paths from a to b as lists of (node, coef, arrow_into_next)."""
    adjacency = {n: [] for n in model.nodes}
    for p, ch, c in model.edges:
        # (neighbor, coefficient, edge points toward neighbor)
        adjacency[p].append((ch, c, True))
        adjacency[ch].append((p, c, False))

    count = 0
    path_nodes = [a]
    steps = []

    def dfs(node):
        nonlocal count
        if node == b:
            count += 1
            if count > MAX_PATHS:
                raise ModelSpecError(f"more than {MAX_PATHS} paths between {a} and {b}")
            yield list(steps)
            return
        for nxt, c, forward in adjacency[node]:
            if nxt in path_nodes:
                continue
            path_nodes.append(nxt)
            steps.append((c, forward))
            yield from dfs(nxt)
            steps.pop()
            path_nodes.pop()

    yield from dfs(a)


def wright_marginal_cov(model, a, b):
    """Marginal covariance of ``a`` and ``b`` by Wright's path-tracing rule.

    Sums the product of path coefficients over every open path between the two
    nodes. Without conditioning a path is open iff it has no collider, i.e. no
    interior node entered by a forward arrow and left by a backward one.
    """
    if a == b:
        raise ValueError("wright_marginal_cov needs two distinct nodes")
    for n in (a, b):
        if n not in model.nodes:
            raise ModelSpecError(f"unknown node {n!r}")
    total = 0.0
    for steps in _enumerate_paths(model, a, b):
        collider = any(steps[i][1] and not steps[i + 1][1] for i in range(len(steps) - 1))
        if not collider:
            total += float(np.prod([c for c, _ in steps]))
    return total


def conditional_cov(sigma, a, b, c):
    """Gaussian covariance of ``a`` and ``b`` given ``c``.

    ``c`` is a node name or a sequence of node names; the general case is the
    Schur complement ``S_ab - S_aC S_CC^-1 S_Cb``.

    Raises
    ------
    DegenerateEstimandError
        If the conditioning set has (numerically) zero residual variance.
    """
    cond = [c] if isinstance(c, str) else list(c)
    if not cond:
        return sigma.cov(a, b)
    ia, ib = sigma.index(a), sigma.index(b)
    ic = [sigma.index(n) for n in cond]
    s = sigma.sigma
    s_cc = s[np.ix_(ic, ic)]
    if np.linalg.eigvalsh(s_cc).min() < 1e-12:
        raise DegenerateEstimandError(f"conditioning set {cond} has zero residual variance")
    coef = np.linalg.solve(s_cc, s[ic, ib])
    return float(s[ia, ib] - s[ia, ic] @ coef)


def condition_on(sigma, cond):
    """Full conditional covariance matrix given the nodes in ``cond``."""
    cond = [cond] if isinstance(cond, str) else list(cond)
    s = sigma.sigma
    ic = [sigma.index(n) for n in cond]
    s_cc = s[np.ix_(ic, ic)]
    if np.linalg.eigvalsh(s_cc).min() < 1e-12:
        raise DegenerateEstimandError(f"conditioning set {cond} has zero residual variance")
    s_xc = s[:, ic]
    out = s - s_xc @ np.linalg.solve(s_cc, s_xc.T)
    return CovarianceStructure(sigma.order, 0.5 * (out + out.T))
