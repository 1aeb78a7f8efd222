"""Conflict-graph inter-cell interference coordination.

Pipeline: RSRP samples land in a typed knowledge graph; an FDS (windowed
RSRP matrix) is extracted on demand; UEs whose neighbor-cell RSRP comes
within ``delta_db`` of the serving cell become edge-class and conflict with
the UEs of that neighbor cell; edge-class UEs are colored and each color
owns a slice of the reserved edge band.  A tabular epsilon-greedy learner
tunes ``(delta_db, edge_fraction)`` on the slow timescale.
"""

from __future__ import annotations

import bisect
import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

log = logging.getLogger(__name__)

MISSING_RSRP_DBM = -300.0
DELTA_GRID_DB = (4.0, 6.0, 8.0, 10.0, 12.0)
FRACTION_GRID = (1 / 4, 1 / 3, 1 / 2)
DEFAULT_ACTIONS = tuple(itertools.product(DELTA_GRID_DB, FRACTION_GRID))


# -- data plane ---------------------------------------------------------------

class KnowledgeGraph:
    """Typed entity/relation graph with per-(UE, cell) RSRP time series.

    Entities are ``("UE", i)``, ``("Cell", i)`` and ``("RRU", i)`` nodes;
    relations are ``servedBy``, ``neighborOf`` and ``measures`` edges.
    Samples must arrive in non-decreasing TTI order per pair.
    """

    ENTITY_KINDS = ("UE", "Cell", "RRU")
    RELATION_KINDS = ("servedBy", "neighborOf", "measures")

    def __init__(self):
        self.g = nx.MultiDiGraph()
        self._times: dict[tuple[int, int], list[int]] = {}
        self._values: dict[tuple[int, int], list[float]] = {}

    @classmethod
    def from_serving(cls, serving: Sequence[int], n_cells: int) -> "KnowledgeGraph":
        kg = cls()
        for c in range(n_cells):
            kg.add_entity("Cell", c)
            kg.add_entity("RRU", c)
        for a, b in itertools.permutations(range(n_cells), 2):
            kg.add_relation("neighborOf", ("Cell", a), ("Cell", b))
        for u, c in enumerate(serving):
            kg.add_entity("UE", u)
            kg.add_relation("servedBy", ("UE", u), ("Cell", int(c)))
        return kg

    def add_entity(self, kind: str, idx: int):
        if kind not in self.ENTITY_KINDS:
            raise ValueError(f"unknown entity kind {kind!r}")
        self.g.add_node((kind, idx), kind=kind)

    def add_relation(self, kind: str, src, dst):
        if kind not in self.RELATION_KINDS:
            raise ValueError(f"unknown relation kind {kind!r}")
        for node in (src, dst):
            if node not in self.g:
                raise KeyError(f"relation references missing entity {node}")
        if not self.g.has_edge(src, dst, key=kind):
            self.g.add_edge(src, dst, key=kind)

    def add_sample(self, ue: int, cell: int, tti: int, rsrp: float):
        key = (ue, cell)
        if key not in self._times:
            self.add_relation("measures", ("UE", ue), ("Cell", cell))
            self._times[key] = []
            self._values[key] = []
        ts = self._times[key]
        if ts and tti < ts[-1]:
            raise ValueError("RSRP samples must be time-ordered")
        ts.append(int(tti))
        self._values[key].append(float(rsrp))

    def add_samples(self, tti: int, rsrp: np.ndarray):
        """Record a full ``(n_ue, n_cell)`` RSRP snapshot at one TTI."""
        for u, c in np.ndindex(rsrp.shape):
            self.add_sample(u, c, tti, rsrp[u, c])

    def ids(self, kind: str) -> list[int]:
        return sorted(i for k, i in self.g.nodes if k == kind)

    def serving(self) -> dict[int, int]:
        return {u[1]: v[1] for u, v, k in self.g.edges(keys=True) if k == "servedBy"}

    def window(self, ue: int, cell: int, start: int, end: int) -> list[float]:
        ts = self._times.get((ue, cell), [])
        lo = bisect.bisect_left(ts, start)
        hi = bisect.bisect_left(ts, end)
        return self._values[(ue, cell)][lo:hi] if hi > lo else []


@dataclass(frozen=True)
class Fds:
    rsrp: np.ndarray
    window: tuple[int, int]

    def to_dict(self) -> dict:
        return {"window": list(self.window), "rsrp_dbm": self.rsrp.tolist()}


def extract_fds(graph: KnowledgeGraph, window: tuple[int, int]) -> Fds:
    """Mean RSRP (dB domain) per (UE, cell) over TTIs ``[start, end)``."""
    start, end = window
    if end <= start:
        raise ValueError(f"empty FDS window {window}")
    ues, cells = graph.ids("UE"), graph.ids("Cell")
    rsrp = np.full((len(ues), len(cells)), MISSING_RSRP_DBM)
    seen = False
    for i, u in enumerate(ues):
        for j, c in enumerate(cells):
            vals = graph.window(u, c, start, end)
            if vals:
                rsrp[i, j] = float(np.mean(vals))
                seen = True
    if not seen:
        raise ValueError(f"window {window} holds no RSRP samples")
    return Fds(rsrp=rsrp, window=(int(start), int(end)))


# -- conflict graph and PRB plans ---------------------------------------------

@dataclass(frozen=True)
class ConflictGraph:
    nodes: tuple[int, ...]
    edges: frozenset
    edge_cells: tuple[frozenset, ...] = ()

    def neighbors(self, u: int) -> set[int]:
        return {b if a == u else a for a, b in self.edges if u in (a, b)}

    def degree(self, u: int) -> int:
        return sum(1 for e in self.edges if u in e)


def build_conflict_graph(fds: Fds, serving: Sequence[int], delta_db: float) -> ConflictGraph:
    """UE ``u`` is edge-class w.r.t. cell ``b`` when its RSRP from ``b`` is
    within ``delta_db`` of its serving RSRP; it then conflicts with every UE
    served by ``b``."""
    serving = [int(c) for c in serving]
    n_ue, n_cell = fds.rsrp.shape
    edge_cells = []
    for u in range(n_ue):
        a = serving[u]
        thresh = fds.rsrp[u, a] - delta_db
        edge_cells.append(frozenset(b for b in range(n_cell) if b != a and fds.rsrp[u, b] >= thresh))
    edges = set()
    for u, v in itertools.combinations(range(n_ue), 2):
        if serving[u] == serving[v]:
            continue
        if serving[v] in edge_cells[u] or serving[u] in edge_cells[v]:
            edges.add((u, v))
    return ConflictGraph(tuple(range(n_ue)), frozenset(edges), tuple(edge_cells))


def greedy_coloring(nodes: Iterable[int], edges: Iterable[tuple[int, int]]) -> dict[int, int]:
    """Highest-degree-first greedy coloring, lowest free color, ties by index."""
    nodes = list(nodes)
    adj = {u: set() for u in nodes}
    for a, b in edges:
        if a in adj and b in adj:
            adj[a].add(b)
            adj[b].add(a)
    colors: dict[int, int] = {}
    for u in sorted(nodes, key=lambda n: (-len(adj[n]), n)):
        used = {colors[v] for v in adj[u] if v in colors}
        colors[u] = next(c for c in itertools.count() if c not in used)
    return colors


@dataclass(frozen=True)
class PrbPlan:
    """PRB sets per edge color and the class of every UE.

    ``ue_class[u]`` is None for center UEs (full band) or the color index.
    Edge sets sit at the top of the band.
    """
    n_prbs: int
    edge_fraction: float
    sets: tuple[tuple[int, ...], ...]
    ue_class: tuple
    fallback: bool = False

    def allowed(self, ue: int) -> np.ndarray:
        c = self.ue_class[ue]
        if c is None:
            return np.arange(self.n_prbs)
        return np.asarray(self.sets[c], dtype=int)

    def cell_mask(self, cell: int, serving: Sequence[int]) -> np.ndarray:
        """PRBs ``cell`` may transmit on: everything except the edge sets
        of colors that none of its own UEs hold."""
        mask = np.ones(self.n_prbs, dtype=bool)
        own = {self.ue_class[u] for u, c in enumerate(serving) if c == cell and self.ue_class[u] is not None}
        for color, prbs in enumerate(self.sets):
            if color not in own:
                mask[list(prbs)] = False
        return mask

    def to_dict(self) -> dict:
        return {"n_prbs": self.n_prbs, "edge_fraction": self.edge_fraction,
                "sets": [list(s) for s in self.sets],
                "ue_class": ["center" if c is None else f"edge({c})" for c in self.ue_class],
                "fallback": self.fallback}


def fr_plan(n_prbs: int, ues) -> PrbPlan:
    """Full reuse: every UE is center-class on the whole band."""
    n = ues if isinstance(ues, int) else len(ues)
    return PrbPlan(n_prbs=n_prbs, edge_fraction=0.0, sets=(), ue_class=(None,) * n)


def color_prbs(conflict: ConflictGraph, n_prbs: int, edge_fraction: float, max_colors: int = 3) -> PrbPlan:
    """Color edge-class UEs and split the reserved edge band among colors.

    Only UEs that are edge-class and have at least one conflict are colored;
    everyone else keeps the full band.  If more than ``max_colors`` colors
    are needed the plan falls back to full reuse with ``fallback`` set.
    """
    if not 0.0 < edge_fraction < 1.0:
        raise ValueError("edge_fraction must be in (0, 1)")
    n_ue = len(conflict.nodes)
    edge_ues = [u for u in conflict.nodes
                if (not conflict.edge_cells or conflict.edge_cells[u]) and conflict.degree(u) > 0]
    if not edge_ues:
        return fr_plan(n_prbs, n_ue)
    colors = greedy_coloring(edge_ues, conflict.edges)
    n_colors = max(colors.values()) + 1
    if n_colors > max_colors:
        log.warning("conflict graph needs %d colors (> %d); falling back to full reuse", n_colors, max_colors)
        return replace(fr_plan(n_prbs, n_ue), fallback=True)
    n_edge = int(edge_fraction * n_prbs)
    per = n_edge // n_colors
    if per < 1:
        raise ValueError(f"{n_prbs} PRBs cannot host {n_colors} edge colors at fraction {edge_fraction}")
    base = n_prbs - per * n_colors
    sets = tuple(tuple(range(base + c * per, base + (c + 1) * per)) for c in range(n_colors))
    ue_class = tuple(colors.get(u) for u in range(n_ue))
    return PrbPlan(n_prbs=n_prbs, edge_fraction=per * n_colors / n_prbs, sets=sets, ue_class=ue_class)


# -- non-RT learner -----------------------------------------------------------

@dataclass(frozen=True)
class IcicParams:
    delta_db: float = 10.0
    edge_fraction: float = 1 / 4
    q_table: tuple[float, ...] = field(default=(0.0,) * len(DEFAULT_ACTIONS))
    epsilon: float = 0.1
    alpha: float = 0.5
    actions: tuple[tuple[float, float], ...] = DEFAULT_ACTIONS

    def __post_init__(self):
        if len(self.q_table) != len(self.actions):
            raise ValueError("q_table must hold one value per action")
        if self.action_index() is None:
            raise ValueError(f"({self.delta_db}, {self.edge_fraction}) is not on the action grid")
        if not 0.0 < self.edge_fraction < 1.0:
            raise ValueError("edge_fraction must be in (0, 1)")
        if not (0.0 <= self.epsilon <= 1.0 and 0.0 <= self.alpha <= 1.0):
            raise ValueError("epsilon and alpha must lie in [0, 1]")

    def action_index(self):
        for i, (d, f) in enumerate(self.actions):
            if np.isclose(d, self.delta_db) and np.isclose(f, self.edge_fraction):
                return i
        return None

    def to_dict(self) -> dict:
        return {"delta_db": self.delta_db, "edge_fraction": self.edge_fraction,
                "q_table": list(self.q_table), "epsilon": self.epsilon, "alpha": self.alpha}


def rl_update(params: IcicParams, reward: float, rng_seed: int, offered: float = 1.0) -> IcicParams:
    """One tabular epsilon-greedy step.

    ``reward / offered`` updates the Q value of the action in use, then the
    next ``(delta_db, edge_fraction)`` is drawn epsilon-greedily (greedy ties
    go to the lowest action index).
    """
    if not np.isfinite(reward) or reward < 0:
        raise ValueError("reward must be finite and non-negative")
    if offered <= 0:
        raise ValueError("offered must be positive")
    q = list(params.q_table)
    a = params.action_index()
    q[a] = (1.0 - params.alpha) * q[a] + params.alpha * (reward / offered)
    rng = np.random.default_rng(rng_seed)
    if rng.random() < params.epsilon:
        nxt = int(rng.integers(len(params.actions)))
    else:
        nxt = int(np.argmax(q))
    d, f = params.actions[nxt]
    return replace(params, delta_db=d, edge_fraction=f, q_table=tuple(q))


def dumps(obj) -> str:
    """Stable JSON for FDS / PrbPlan / IcicParams inspection."""
    return json.dumps(obj.to_dict(), sort_keys=True)
