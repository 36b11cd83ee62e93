"""Synthetic polygon scenes, a discrete camera and a noisy decision oracle.

Scenes are flat-shaded polygons on a 128x128 raster. The camera moves
between six viewpoints and four zoom levels. The oracle answers a
description-match question and flips the ground truth with a probability
that falls as the queried content becomes more visible.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw

from .sources import RasterView

VIEWPOINTS = ("front", "right", "back", "left", "front_up45", "back_up45")
LEVEL_CYCLE = ("front", "right", "back", "left")
ELEVATED = {"front": "front_up45", "back": "back_up45"}
N_Z = 4
# camera distance per z-level; z = 0 is nearest to the scene
DISTANCES = tuple(10 + 5 * z for z in range(N_Z))
ZOOM_SCALE = (1.0, 0.8, 0.65, 0.5)
ZOOM_INFO = (1.0, 0.85, 0.7, 0.55)
RASTER = 128
BACKGROUND = (200, 200, 200)
# feature stripes are a darker shade of their object: texture, not a new colour
STRIPE_SHADE = 0.7
POSITIONS = ("left", "right", "front", "back", "center", "top")
_POSITION_XZ = {
    "left": (-1.0, 0.0), "right": (1.0, 0.0), "front": (0.0, -1.0),
    "back": (0.0, 1.0), "center": (0.0, 0.0), "top": (0.0, 0.0),
}
_VIEW_ANGLE = {"front": 0.0, "right": 90.0, "back": 180.0, "left": 270.0,
               "front_up45": 0.0, "back_up45": 180.0}

QUERY_MATCH = "match"
QUERY_SUMMARY = "summary"
QUERY_TEMPLATES = (QUERY_MATCH, QUERY_SUMMARY)


class SceneError(ValueError):
    pass


# -- camera ------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class CameraState:
    viewpoint: str
    z_level: int

    def __post_init__(self):
        if self.viewpoint not in VIEWPOINTS:
            raise SceneError(f"unknown viewpoint {self.viewpoint!r}")
        if not 0 <= self.z_level < N_Z:
            raise SceneError(f"z_level must be in 0..{N_Z - 1}")

    @property
    def distance(self) -> int:
        return DISTANCES[self.z_level]

    def as_list(self) -> list:
        return [self.viewpoint, self.z_level]


@dataclass(frozen=True)
class CameraAction:
    kind: str
    amount: int

    _ALLOWED = {"rotate_x": (90, -90), "rotate_y": (45, -45), "zoom": (5, -5)}

    def __post_init__(self):
        if self.kind not in self._ALLOWED or self.amount not in self._ALLOWED[self.kind]:
            raise SceneError(f"invalid action {self.kind}({self.amount})")

    def __str__(self):
        return f"{self.kind}({self.amount:+d})"

    @classmethod
    def parse(cls, text: str) -> "CameraAction":
        kind, _, rest = text.partition("(")
        return cls(kind, int(rest.rstrip(")")))


ALL_ACTIONS = tuple(CameraAction(k, a) for k, amounts in CameraAction._ALLOWED.items() for a in amounts)


def start_state(start_z: str = "nearest") -> CameraState:
    if start_z not in ("nearest", "outermost"):
        raise SceneError("start_z must be 'nearest' or 'outermost'")
    return CameraState("front", 0 if start_z == "nearest" else N_Z - 1)


def apply_action(state: CameraState, action: CameraAction) -> CameraState:
    v, z = state.viewpoint, state.z_level
    if action.kind == "zoom":
        # zoom(-5) moves toward the scene
        nz = z - 1 if action.amount < 0 else z + 1
        if not 0 <= nz < N_Z:
            raise SceneError("zoom bound")
        return CameraState(v, nz)
    if action.kind == "rotate_y":
        if v in ELEVATED:
            if action.amount < 0:
                raise SceneError("elevation bound")
            return CameraState(ELEVATED[v], z)
        if v in ELEVATED.values():
            if action.amount > 0:
                raise SceneError("elevation bound")
            return CameraState(v.replace("_up45", ""), z)
        raise SceneError("y-rotation constrained to front or back")
    if v not in LEVEL_CYCLE:
        raise SceneError("x-rotation needs a level view")
    i = LEVEL_CYCLE.index(v)
    step = 1 if action.amount > 0 else -1
    return CameraState(LEVEL_CYCLE[(i + step) % 4], z)


def legal_actions(state: CameraState) -> List[CameraAction]:
    out = []
    for a in ALL_ACTIONS:
        try:
            apply_action(state, a)
        except SceneError:
            continue
        out.append(a)
    return out


def all_states() -> List[CameraState]:
    return [CameraState(v, z) for z in range(N_Z) for v in VIEWPOINTS]


# -- scene specs ---------------------------------------------------------------

@dataclass
class FeatureSpec:
    name: str
    visibility: Dict[str, float]


@dataclass
class ObjectSpec:
    sides: int
    color: Tuple[int, int, int]
    position: str
    features: List[FeatureSpec] = field(default_factory=list)
    visibility: Optional[Dict[str, float]] = None


@dataclass
class SceneSpec:
    scene_id: str
    objects: List[ObjectSpec]
    description: str = ""
    occluder: bool = False
    complexity: str = "uniform"
    matches: bool = True
    clutter: float = 0.0
    seed: int = 0
    background: Tuple[int, int, int] = BACKGROUND

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        objs = []
        for o in d["objects"]:
            feats = [FeatureSpec(f["name"], dict(f["visibility"])) for f in o.get("features", [])]
            objs.append(ObjectSpec(int(o["sides"]), tuple(o["color"]), o["position"], feats,
                                   None if o.get("visibility") is None else dict(o["visibility"])))
        rest = {k: v for k, v in d.items() if k != "objects"}
        if "background" in rest:
            rest["background"] = tuple(rest["background"])
        return cls(objects=objs, **rest)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Scene:
    spec: SceneSpec
    # viewpoint -> per-object visible fraction
    object_visibility: Dict[str, Tuple[float, ...]]
    # viewpoint -> per-object tuple of per-feature visible fractions
    feature_visibility: Dict[str, Tuple[Tuple[float, ...], ...]]

    @property
    def scene_id(self) -> str:
        return self.spec.scene_id


def _check_fraction(x: float, what: str) -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise SceneError(f"{what} visibility {x} outside [0, 1]")
    return x


def _check_colour(colour):
    c = tuple(colour)
    if len(c) != 3 or any((not isinstance(x, (int, np.integer))) or not 0 <= x <= 255 for x in c):
        raise SceneError(f"invalid colour {colour!r}")


def generate_scene(spec: SceneSpec) -> Scene:
    if not spec.objects:
        raise SceneError("scene needs at least one object")
    if spec.complexity not in ("uniform", "complex"):
        raise SceneError("complexity must be 'uniform' or 'complex'")
    _check_colour(spec.background)
    for o in spec.objects:
        if int(o.sides) < 3:
            raise SceneError("polygon needs at least 3 sides")
        _check_colour(o.color)
        if o.position not in POSITIONS:
            raise SceneError(f"unknown position {o.position!r}")
    obj_vis, feat_vis = {}, {}
    for v in VIEWPOINTS:
        ov, fv = [], []
        for k, o in enumerate(spec.objects):
            base = 1.0 if o.visibility is None else _check_fraction(o.visibility.get(v, 1.0), "object")
            if spec.occluder and k == 1 and v not in ("back", "back_up45"):
                base = 0.0
            ov.append(base)
            fv.append(tuple(_check_fraction(f.visibility.get(v, 0.0), "feature") for f in o.features))
        obj_vis[v] = tuple(ov)
        feat_vis[v] = tuple(fv)
    return Scene(spec, obj_vis, feat_vis)


# -- rendering -----------------------------------------------------------------

def _polygon(cx: float, cy: float, r: float, sides: int, rot: float) -> List[Tuple[float, float]]:
    return [(cx + r * math.cos(rot + 2 * math.pi * k / sides),
             cy + r * math.sin(rot + 2 * math.pi * k / sides)) for k in range(sides)]


def _layout(scene: Scene, state: CameraState):
    """Per-object (depth, centre x, centre y, radius) in pixels."""
    psi = math.radians(_VIEW_ANGLE[state.viewpoint])
    elevated = state.viewpoint.endswith("_up45")
    scale = ZOOM_SCALE[state.z_level]
    out = []
    for o in scene.spec.objects:
        x, zw = _POSITION_XZ[o.position]
        sx = x * math.cos(psi) + zw * math.sin(psi)
        depth = -x * math.sin(psi) + zw * math.cos(psi)
        # farther objects sit higher in the frame, more so from above
        sy = (-0.6 if o.position == "top" else 0.0) - (0.75 if elevated else 0.55) * depth
        out.append((depth, 64 + 40 * scale * sx, 64 + 40 * scale * sy, 20 * scale))
    return out


def render_view(scene: Scene, state: CameraState) -> RasterView:
    """Deterministic raster of the scene from `state` with disjoint object masks."""
    img = np.empty((RASTER, RASTER, 3), np.uint8)
    img[:] = scene.spec.background
    vi = VIEWPOINTS.index(state.viewpoint)
    if scene.spec.clutter > 0:
        rng = np.random.default_rng([scene.spec.seed, vi, state.z_level, 7])
        for _ in range(int(round(scene.spec.clutter * 80))):
            x, y = rng.integers(0, RASTER - 3, size=2)
            img[y:y + 3, x:x + 3] = rng.integers(0, 256, size=3)
    layout = _layout(scene, state)
    owner = np.full((RASTER, RASTER), -1)
    order = sorted(range(len(layout)), key=lambda k: (-layout[k][0], k))
    for k in order:
        o = scene.spec.objects[k]
        vis = scene.object_visibility[state.viewpoint][k]
        if vis <= 0:
            continue
        _, cx, cy, r = layout[k]
        layer = Image.new("L", (RASTER, RASTER), 0)
        ImageDraw.Draw(layer).polygon(_polygon(cx, cy, r, int(o.sides), math.pi / 2 / o.sides), fill=255)
        m = np.asarray(layer) > 0
        cols = np.nonzero(m.any(axis=0))[0]
        if cols.size == 0:
            continue
        x0, x1 = cols[0], cols[-1] + 1
        cut = x0 + int(math.floor(vis * (x1 - x0) + 1e-9))
        m[:, cut:] = False
        if not m.any():
            continue
        img[m] = o.color
        feats = scene.feature_visibility[state.viewpoint][k]
        if feats:
            rows = np.nonzero(m.any(axis=1))[0]
            y0, y1 = rows[0], rows[-1] + 1
            band = max(1, (y1 - y0) // len(feats))
            stripe = tuple(int(c * STRIPE_SHADE) for c in o.color)
            for j, fv in enumerate(feats):
                if fv <= 0:
                    continue
                fm = np.zeros_like(m)
                ys = slice(y0 + j * band, y0 + (j + 1) * band)
                xe = x0 + int(math.floor(fv * (x1 - x0) + 1e-9))
                xs = np.arange(x0, xe)
                fm[ys, xs[(xs - x0) % 4 < 2]] = True
                img[fm & m] = stripe
        owner[m] = k
    masks = tuple(owner == k for k in range(len(scene.spec.objects)))
    return RasterView(img, masks)


# -- oracle --------------------------------------------------------------------

def _view_info(scene: Scene, state: CameraState) -> float:
    vals = []
    for k, ov in enumerate(scene.object_visibility[state.viewpoint]):
        f = float(np.prod(scene.feature_visibility[state.viewpoint][k])) if scene.feature_visibility[state.viewpoint][k] else 1.0
        vals.append(ov * f)
    return ZOOM_INFO[state.z_level] * min(vals)


def ground_truth_info(scene: Scene, state: CameraState, query: str = QUERY_MATCH,
                      context: Sequence[CameraState] = ()) -> float:
    """Visible fraction of the queried content, scaled by zoom proximity.

    The match query looks at one view: the least visible object (times the
    visible fraction of its features). The summary query averages that
    over the views in `context`, or uses `state` alone when none are given.
    """
    if query == QUERY_MATCH:
        return _view_info(scene, state)
    if query == QUERY_SUMMARY:
        views = list(context) or [state]
        return float(np.mean([_view_info(scene, s) for s in views]))
    raise SceneError(f"unknown query template {query!r}")


@dataclass(frozen=True)
class OracleConfig:
    a: float = 0.0
    b: float = 6.0
    p_err: Optional[float] = None
    latency: float = 0.0


class OracleStream:
    """Counter-based uniform draws: draw k depends only on (seed, episode, k)."""

    def __init__(self, seed: int, episode: int):
        self.seed = int(seed)
        self.episode = int(episode)
        self.counter = 0

    def draw(self) -> float:
        u = np.random.default_rng([self.seed, self.episode, self.counter]).random()
        self.counter += 1
        return float(u)


def error_probability(info: float, cfg: OracleConfig) -> float:
    if cfg.p_err is not None:
        return float(cfg.p_err)
    z = cfg.a - cfg.b * info
    return 1.0 / (1.0 + math.exp(-z)) if z > -700 else 0.0


def oracle_respond(scene: Scene, state: CameraState, query: str, stream: OracleStream,
                   cfg: OracleConfig = OracleConfig(),
                   context: Sequence[CameraState] = ()) -> bool:
    """Ground truth, flipped with probability p_err(info); one draw per call."""
    info = ground_truth_info(scene, state, query, context)
    if cfg.latency > 0:
        time.sleep(cfg.latency)
    flip = stream.draw() < error_probability(info, cfg)
    return bool(scene.spec.matches) != flip
