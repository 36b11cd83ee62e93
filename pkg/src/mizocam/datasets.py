"""Seeded generators for the synthetic scene sets and their on-disk form."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from .scene import BACKGROUND, POSITIONS, VIEWPOINTS, FeatureSpec, ObjectSpec, SceneError, SceneSpec

PALETTE = {
    "red": (200, 40, 40),
    "blue": (40, 40, 200),
    "green": (40, 160, 40),
    "yellow": (220, 180, 30),
    "purple": (160, 60, 180),
    "teal": (30, 170, 170),
    "orange": (230, 120, 40),
    "brown": (120, 80, 40),
}
SHAPES = {3: "triangle", 4: "square", 5: "pentagon", 6: "hexagon", 8: "octagon"}
FEATURES = ("door", "window", "ladder", "panel", "antenna", "wheel")
KINDS = ("diagnostic", "occlusion", "featureid")
DIAGNOSTIC_SIZE = 48


def _pick_objects(rng: np.random.Generator, count: int):
    colours = rng.choice(len(PALETTE), size=count, replace=False)
    positions = rng.choice(len(POSITIONS) - 1, size=count, replace=False)  # no "top"
    names = list(PALETTE)
    out = []
    for c, p in zip(colours, positions):
        sides = int(rng.choice(list(SHAPES)))
        out.append((names[int(c)], sides, POSITIONS[int(p)]))
    return out


def describe(objects: Sequence[ObjectSpec], matches: bool = True) -> str:
    """Plain description of the objects; a non-matching scene swaps the first shape."""
    inv = {v: k for k, v in PALETTE.items()}
    parts = []
    for k, o in enumerate(objects):
        sides = o.sides
        if not matches and k == 0:
            keys = sorted(SHAPES)
            sides = keys[(keys.index(sides) + 1) % len(keys)] if sides in SHAPES else 4
        noun = SHAPES.get(sides, "polygon")
        feat = f" with a {o.features[0].name}" if o.features else ""
        parts.append(f"a {inv.get(tuple(o.color), 'grey')} {noun}{feat}")
    return " and ".join(parts)


def diagnostic_set(seed: int, count: int = DIAGNOSTIC_SIZE) -> List[SceneSpec]:
    """Half uniform scenes, half complex ones with clutter and more objects.

    Each scene has a feature face whose visible fraction (0, 0.5 or 1) is
    drawn per viewpoint and shared by every object, so the visibility that
    drives the oracle shows up inside the object masks. Clutter only touches
    the background.
    """
    rng = np.random.default_rng([seed, 101])
    specs = []
    for i in range(count):
        complex_ = i >= count // 2
        face = {v: float(rng.choice([0.0, 0.5, 1.0])) for v in VIEWPOINTS}
        n_obj = int(rng.integers(2, 4)) if complex_ else int(rng.integers(1, 3))
        objs = [ObjectSpec(sides, PALETTE[c], pos, [FeatureSpec(str(rng.choice(FEATURES)), dict(face))])
                for c, sides, pos in _pick_objects(rng, n_obj)]
        matches = bool(rng.random() < 0.5)
        specs.append(SceneSpec(
            scene_id=f"diag-{i:03d}", objects=objs, description=describe(objs, matches),
            complexity="complex" if complex_ else "uniform", matches=matches,
            clutter=float(rng.uniform(0.5, 1.0)) if complex_ else 0.0,
            seed=int(rng.integers(2**31)),
            background=tuple(int(x) for x in rng.integers(60, 240, size=3)) if complex_ else BACKGROUND))
    return specs


def occlusion_set(seed: int, count: int = 20) -> List[SceneSpec]:
    """Two objects; an occluder hides the second from all but the back views."""
    rng = np.random.default_rng([seed, 102])
    specs = []
    for i in range(count):
        objs = [ObjectSpec(sides, PALETTE[c], pos) for c, sides, pos in _pick_objects(rng, 2)]
        matches = bool(rng.random() < 0.5)
        specs.append(SceneSpec(
            scene_id=f"occl-{i:03d}", objects=objs, description=describe(objs, matches),
            occluder=True, matches=matches, clutter=float(rng.choice([0.0, 0.3])),
            seed=int(rng.integers(2**31))))
    return specs


def featureid_set(seed: int, count: int = 20) -> List[SceneSpec]:
    """Objects with features on their front faces.

    Features read fully from front and front_up45, half from the sides and
    not at all from behind.
    """
    rng = np.random.default_rng([seed, 103])
    face = {"front": 1.0, "front_up45": 1.0, "left": 0.5, "right": 0.5, "back": 0.0, "back_up45": 0.0}
    specs = []
    for i in range(count):
        objs = []
        for c, sides, pos in _pick_objects(rng, 2):
            jitter = float(rng.choice([0.8, 1.0]))
            vis = {v: round(f * jitter, 6) for v, f in face.items()}
            objs.append(ObjectSpec(sides, PALETTE[c], pos, [FeatureSpec(str(rng.choice(FEATURES)), vis)]))
        matches = bool(rng.random() < 0.5)
        specs.append(SceneSpec(
            scene_id=f"feat-{i:03d}", objects=objs, description=describe(objs, matches),
            matches=matches, seed=int(rng.integers(2**31))))
    return specs


def generate_set(kind: str, seed: int, count: int | None = None) -> List[SceneSpec]:
    makers = {"diagnostic": diagnostic_set, "occlusion": occlusion_set, "featureid": featureid_set}
    if kind not in makers:
        raise SceneError(f"unknown dataset kind {kind!r}; valid: {', '.join(KINDS)}")
    return makers[kind](seed) if count is None else makers[kind](seed, count)


def write_dataset(specs: Sequence[SceneSpec], directory) -> List[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in specs:
        p = d / f"{s.scene_id}.json"
        p.write_text(s.to_json() + "\n")
        paths.append(p)
    return paths


def load_dataset(directory) -> List[SceneSpec]:
    """SceneSpec files of a directory in scene-id order."""
    d = Path(directory)
    if not d.is_dir():
        raise SceneError(f"dataset directory {d} not found")
    specs = []
    for p in sorted(d.glob("*.json")):
        try:
            specs.append(SceneSpec.from_json(p.read_text()))
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneError(f"{p.name}: {exc}") from exc
    if not specs:
        raise SceneError(f"no scene files in {d}")
    return sorted(specs, key=lambda s: s.scene_id)


def scene_index(specs: Sequence[SceneSpec]) -> Dict[str, SceneSpec]:
    return {s.scene_id: s for s in specs}
