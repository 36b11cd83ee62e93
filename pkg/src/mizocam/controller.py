"""Camera controller: proxy labels, two least-squares component models, a
trace-gated central unit and a greedy walk on the viewpoint x zoom graph.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .scene import (
    ALL_ACTIONS,
    N_Z,
    VIEWPOINTS,
    CameraAction,
    CameraState,
    SceneError,
    apply_action,
)

# cycle order on the viewpoint ring; neighbours are one camera move apart
# except back_up45 -> left and left -> front_up45, which take two
XY_CYCLE = ("front", "right", "back", "back_up45", "left", "front_up45")
EPS = 1e-6
DEFAULT_TAU = 1e7
PRIOR_ERROR = 0.5
WALK_DISCOUNT = 0.6
Z_PENALTY = 0.1


class ControllerError(RuntimeError):
    pass


# -- proxy labels --------------------------------------------------------------

@dataclass(frozen=True)
class ProxyLabels:
    labels: Dict[tuple, int]
    threshold: float


def generate_proxy_labels(view_scores: Sequence[Tuple[object, float]]) -> ProxyLabels:
    """Label 1 iff a view's score reaches the median of all given scores."""
    if not view_scores:
        raise ControllerError("need at least one scored view")
    scores = np.array([s for _, s in view_scores], dtype=float)
    med = float(np.median(scores))
    return ProxyLabels({v: int(s >= med) for v, s in view_scores}, med)


# -- component models ------------------------------------------------------------

@dataclass
class ComponentFit:
    coefficients: np.ndarray
    residual_trace: float
    outputs: dict
    ranking: Dict[str, List[int]] = field(default_factory=dict)


def _indicator_lstsq(keys: Sequence, y: np.ndarray, levels: Sequence):
    X = np.zeros((len(keys), len(levels)))
    col = {lv: i for i, lv in enumerate(levels)}
    for r, k in enumerate(keys):
        X[r, col[k]] = 1.0
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return coef, float(resid @ resid)


def fit_cm1(observations: Sequence[Tuple[str, float]]) -> ComponentFit:
    """Least squares of correctness labels on viewpoint indicators.

    `observations` holds (viewpoint, label) with label 1 for a correct
    decision. The error probability of a viewpoint is 1 minus its fitted
    value, clamped to [0, 1]; unobserved viewpoints get the prior 0.5.
    """
    seen = [v for v in VIEWPOINTS if any(o[0] == v for o in observations)]
    err = {v: PRIOR_ERROR for v in VIEWPOINTS}
    if not seen:
        return ComponentFit(np.zeros(0), 0.0, err)
    y = np.array([float(lbl) for _, lbl in observations])
    coef, trace = _indicator_lstsq([v for v, _ in observations], y, seen)
    for v, c in zip(seen, coef):
        err[v] = float(np.clip(1.0 - c, 0.0, 1.0))
    return ComponentFit(coef, trace, err)


def fit_cm2(observations: Sequence[Tuple[str, int, float]]) -> ComponentFit:
    """Least squares of labels on (viewpoint, z-level) indicators.

    Outputs the fitted confidence CS per observed pair; `ranking` orders the
    z-levels of every viewpoint by CS, unobserved levels last, ties by index.
    """
    pairs = sorted({(v, z) for v, z, _ in observations}, key=lambda p: (VIEWPOINTS.index(p[0]), p[1]))
    cs: Dict[tuple, float] = {}
    trace, coef = 0.0, np.zeros(0)
    if pairs:
        y = np.array([float(lbl) for *_, lbl in observations])
        coef, trace = _indicator_lstsq([(v, z) for v, z, _ in observations], y, pairs)
        cs = {p: float(c) for p, c in zip(pairs, coef)}
    ranking = {}
    for v in VIEWPOINTS:
        seen = sorted((z for (vv, z) in cs if vv == v), key=lambda z: (-cs[(v, z)], z))
        ranking[v] = seen + [z for z in range(N_Z) if z not in seen]
    return ComponentFit(coef, trace, cs, ranking)


# -- central unit ----------------------------------------------------------------

@dataclass
class GatedPriorities:
    node_priority: np.ndarray
    error: Dict[str, float]
    z_ranking: Dict[str, List[int]]
    accept_cm1: bool
    accept_cm2: bool
    aggregates: Tuple[float, float]

    def log(self) -> dict:
        return {
            "error": {v: round(p, 12) for v, p in self.error.items()},
            "z_top": {v: r[0] for v, r in self.z_ranking.items()},
            "accept_cm1": self.accept_cm1,
            "accept_cm2": self.accept_cm2,
            "aggregates": [round(a, 9) for a in self.aggregates],
        }


def gate(outputs: dict, trace: float, tau: float) -> Tuple[bool, float]:
    """Scale the summed outputs by the inverse trace factor and test against tau."""
    aggregate = float(sum(outputs.values())) / (trace + EPS)
    return aggregate <= tau, aggregate


def central_unit(cm1: ComponentFit, cm2: ComponentFit, tau: float = DEFAULT_TAU) -> GatedPriorities:
    """Accepted CM1 sets viewpoint priority 1 - P(v); accepted CM2 orders zoom levels.

    Rejected components fall back to the priors: uniform viewpoint priority
    and zoom levels in index order (nearest first).
    """
    if tau <= 0:
        raise ControllerError("tau must be positive")
    ok1, agg1 = gate(cm1.outputs, cm1.residual_trace, tau)
    ok2, agg2 = gate(cm2.outputs, cm2.residual_trace, tau)
    error = dict(cm1.outputs) if ok1 else {v: PRIOR_ERROR for v in VIEWPOINTS}
    ranking = cm2.ranking if ok2 and cm2.ranking else {v: list(range(N_Z)) for v in VIEWPOINTS}
    prio = np.zeros(len(XY_CYCLE) * N_Z)
    for z in range(N_Z):
        for i, v in enumerate(XY_CYCLE):
            rank = ranking[v].index(z)
            prio[node_index(i, z)] = (1.0 - error[v]) - Z_PENALTY * rank / N_Z
    return GatedPriorities(prio, error, ranking, ok1, ok2, (agg1, agg2))


def uniform_priorities() -> np.ndarray:
    return np.zeros(len(XY_CYCLE) * N_Z)


# -- interaction matrix ------------------------------------------------------------

@dataclass
class InteractionMatrix:
    adjacency: np.ndarray
    n_xy: int
    n_z: int
    node_values: Optional[np.ndarray] = None

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.sum() // 2)


def node_index(xy: int, z: int, n_xy: int = len(XY_CYCLE)) -> int:
    return z * n_xy + xy


def node_state(node: int, n_xy: int = len(XY_CYCLE)) -> CameraState:
    return CameraState(XY_CYCLE[node % n_xy], node // n_xy)


def state_node(state: CameraState) -> int:
    return node_index(XY_CYCLE.index(state.viewpoint), state.z_level)


def build_interaction_matrix(n_xy: int = len(XY_CYCLE), n_z: int = N_Z) -> InteractionMatrix:
    """Adjacency of the strong product C_{n_xy} x K_{n_z} (z-major node order)."""
    if n_xy < 3:
        raise ControllerError("cycle needs at least 3 vertices")
    if n_z < 1:
        raise ControllerError("need at least one zoom level")
    cyc = np.zeros((n_xy, n_xy), int)
    idx = np.arange(n_xy)
    cyc[idx, (idx + 1) % n_xy] = 1
    cyc[(idx + 1) % n_xy, idx] = 1
    comp = np.ones((n_z, n_z), int) - np.eye(n_z, dtype=int)
    eye_xy, eye_z = np.eye(n_xy, dtype=int), np.eye(n_z, dtype=int)
    # strong product: A = A_z (x) I + I (x) A_xy + A_z (x) A_xy in z-major order
    adj = np.kron(comp, eye_xy) + np.kron(eye_z, cyc) + np.kron(comp, cyc)
    return InteractionMatrix(adj, n_xy, n_z)


def _graph_distances(adj: np.ndarray) -> np.ndarray:
    n = adj.shape[0]
    dist = np.full((n, n), -1)
    for s in range(n):
        dist[s, s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for w in np.nonzero(adj[u])[0]:
                if dist[s, w] < 0:
                    dist[s, w] = dist[s, u] + 1
                    q.append(w)
    return dist


@lru_cache(maxsize=None)
def camera_path(src: CameraState, dst: CameraState) -> Tuple[CameraAction, ...]:
    """Shortest sequence of legal camera actions (ties by action order)."""
    prev = {src: None}
    q = deque([src])
    while q:
        s = q.popleft()
        if s == dst:
            break
        for a in ALL_ACTIONS:
            try:
                t = apply_action(s, a)
            except SceneError:
                continue
            if t not in prev:
                prev[t] = (s, a)
                q.append(t)
    if dst not in prev:
        raise ControllerError("disconnected request")
    out = []
    cur = dst
    while prev[cur] is not None:
        s, a = prev[cur]
        out.append(a)
        cur = s
    return tuple(reversed(out))


def plan_walk(matrix: InteractionMatrix, priorities: np.ndarray, current: CameraState,
              steps: int, discount: float = WALK_DISCOUNT) -> List[int]:
    """Greedy walk: head for the unvisited node with the best discounted priority.

    A node m scores (p(m) - min p) * discount**dist(here, m); ties go to the
    lowest index. The walk moves one edge at a time along a shortest path
    (first hop with the lowest index).
    """
    adj = matrix.adjacency
    n = adj.shape[0]
    p = np.asarray(priorities, dtype=float)
    if p.shape != (n,):
        raise ControllerError("priorities must cover every node")
    dist = _graph_distances(adj)
    if np.any(dist < 0):
        raise ControllerError("disconnected request")
    here = state_node(current)
    visited = {here}
    walk = []
    base = p.min()
    while len(walk) < steps:
        if len(visited) == n:
            visited = {here}
        cand = [m for m in range(n) if m not in visited]
        vals = [(p[m] - base) * discount ** dist[here, m] for m in cand]
        best = max(vals)
        target = cand[vals.index(best)]
        nxt = min(w for w in np.nonzero(adj[here])[0] if dist[w, target] == dist[here, target] - 1) \
            if dist[here, target] > 1 else target
        walk.append(int(nxt))
        visited.add(int(nxt))
        here = int(nxt)
    return walk


def plan_actions(matrix: InteractionMatrix, priorities, current: CameraState,
                 budget: int) -> List[CameraAction]:
    """Exactly `budget` legal camera actions realizing the greedy walk."""
    if budget < 1:
        raise ControllerError("budget must be >= 1")
    actions: List[CameraAction] = []
    state = current
    # each walk edge costs at least one action, so `budget` steps always suffice
    for node in plan_walk(matrix, priorities, current, budget):
        target = node_state(node, matrix.n_xy)
        for a in camera_path(state, target):
            actions.append(a)
            if len(actions) == budget:
                return actions
        state = target
    return actions


def default_tour(budget: int, start: CameraState) -> List[CameraAction]:
    """The fixed measurement-round sequence: the walk under uniform priorities."""
    return plan_actions(build_interaction_matrix(), uniform_priorities(), start, budget)


def replay(start: CameraState, actions: Sequence[CameraAction]) -> List[CameraState]:
    out, s = [], start
    for a in actions:
        s = apply_action(s, a)
        out.append(s)
    return out
