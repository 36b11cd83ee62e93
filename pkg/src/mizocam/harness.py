"""Two-round benchmark protocol, demonstrations, diagnostics and reports.

An episode runs a measurement round along the default tour, fits MI-ZO on
the demonstration views plus the round-1 views (labels revealed at the
configured feedback fraction), lets the controller plan a correction round,
and runs it. Each round ends with one scene-summary decision.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .controller import (
    DEFAULT_TAU,
    build_interaction_matrix,
    central_unit,
    default_tour,
    fit_cm1,
    fit_cm2,
    generate_proxy_labels,
    plan_actions,
)
from .datasets import diagnostic_set
from .info import Histogram
from .metrics import (
    ConfusionCounts,
    MetricError,
    acc_sq,
    ber,
    pc_dispersion,
    separation_stats,
)
from .mizo import MizoConfig, feedback_mask, run_mizo, score_views
from .scene import (
    QUERY_MATCH,
    QUERY_SUMMARY,
    VIEWPOINTS,
    CameraState,
    OracleConfig,
    OracleStream,
    Scene,
    SceneSpec,
    apply_action,
    generate_scene,
    oracle_respond,
    render_view,
    start_state,
)
from .sources import extract_sources

SCHEMA_VERSION = 1
METRIC_SOURCES = {
    "go-led-ol": ("GO", "LED", "OL"),
    "gh-led": ("GH", "LED"),
    "go": ("GO",),
    "gh": ("GH",),
    "led": ("LED",),
    "ol": ("OL",),
}
FEEDBACK_FRACTIONS = (1.0, 0.5, 0.2)
CONTROLLERS = ("ours", "default-tour")
# oracle streams of demonstration episodes live in their own index range
DEMO_EPISODE_BASE = 1_000_000
# camera states of the separation and dispersion diagnostics
DIAGNOSTIC_STATES = tuple(CameraState(v, z) for z in (0, 2) for v in VIEWPOINTS)


class ConfigError(ValueError):
    pass


# -- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class Metric:
    name: str
    sources: Tuple[str, ...]
    active: bool


def valid_metrics() -> List[str]:
    out = []
    for base, src in METRIC_SOURCES.items():
        out += [f"{base}-ar", f"{base}-no-ar"] if len(src) > 1 else [base]
    return out


def parse_metric(name: str) -> Metric:
    """`<sources>-ar` or `<sources>-no-ar`; single sources may drop the suffix."""
    n = str(name).strip().lower()
    active = True
    base = n
    if n.endswith("-no-ar"):
        base, active = n[: -len("-no-ar")], False
    elif n.endswith("-ar"):
        base = n[: -len("-ar")]
    if base not in METRIC_SOURCES or (base == n and len(METRIC_SOURCES[base]) > 1):
        raise ConfigError(f"unknown metric {name!r}; valid variants: {', '.join(valid_metrics())}")
    return Metric(n, METRIC_SOURCES[base], active)


@dataclass(frozen=True)
class RunConfig:
    dataset: str = ""
    metric: str = "go-led-ol-ar"
    controller: str = "ours"
    budget: int = 8
    demo_fraction: float = 0.05
    feedback: float = 1.0
    seeds: Tuple[int, ...] = (0,)
    oracle_a: float = 0.0
    oracle_b: float = 6.0
    latency: float = 0.0
    start_z: str = "nearest"
    mizo_rounds: int = 20
    tau: float = DEFAULT_TAU
    out: str = ""

    def validate(self) -> "RunConfig":
        parse_metric(self.metric)
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"unknown controller {self.controller!r}; valid: {', '.join(CONTROLLERS)}")
        if self.budget < 1:
            raise ConfigError("action budget must be >= 1")
        if not 0.0 < self.demo_fraction < 1.0:
            raise ConfigError("demonstration fraction must lie in (0, 1)")
        if self.feedback not in FEEDBACK_FRACTIONS:
            raise ConfigError(f"feedback fraction must be one of {FEEDBACK_FRACTIONS}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.start_z not in ("nearest", "outermost"):
            raise ConfigError("start_z must be 'nearest' or 'outermost'")
        if self.mizo_rounds < 1:
            raise ConfigError("mizo_rounds must be >= 1")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.latency < 0:
            raise ConfigError("latency must be nonnegative")
        return self

    @property
    def oracle(self) -> OracleConfig:
        return OracleConfig(self.oracle_a, self.oracle_b, None, self.latency)

    def report_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        # output location and oracle latency do not change any result
        d.pop("out")
        d.pop("latency")
        return d


# -- observation ------------------------------------------------------------------

@dataclass(frozen=True)
class Observation:
    sources: Dict[str, Histogram]
    lam: float


class ViewCache:
    """Rendered sources per (scene, camera state); rendering is pure, so sharing is safe."""

    def __init__(self):
        self._store: Dict[tuple, Observation] = {}
        self.renders = 0

    def get(self, scene: Scene, state: CameraState) -> Observation:
        key = (scene.spec.to_json(), state)
        hit = self._store.get(key)
        if hit is None:
            ss = extract_sources(render_view(scene, state), scene.spec.description)
            hit = Observation(ss.named(), ss.scaling.lambda_value)
            self._store[key] = hit
            self.renders += 1
        return hit


@dataclass
class ViewRecord:
    state: CameraState
    action: str
    decision: bool
    correct: bool
    obs: Observation
    score: Optional[float] = None

    def to_dict(self) -> dict:
        return {"state": self.state.as_list(), "action": self.action, "decision": self.decision,
                "correct": self.correct, "score": self.score}


def _run_round(scene: Scene, actions, start: CameraState, stream: OracleStream,
               oracle: OracleConfig, cache: ViewCache) -> Tuple[List[ViewRecord], dict]:
    views = []
    state = start
    for a in actions:
        state = apply_action(state, a)
        decision = oracle_respond(scene, state, QUERY_MATCH, stream, oracle)
        views.append(ViewRecord(state, str(a), decision, decision == scene.spec.matches,
                                cache.get(scene, state)))
    ctx = [v.state for v in views]
    summary = oracle_respond(scene, ctx[-1], QUERY_SUMMARY, stream, oracle, ctx)
    return views, {"decision": summary, "correct": summary == scene.spec.matches}


def round_accuracy(views: Sequence[ViewRecord], summary: dict) -> Tuple[int, int]:
    """(correct, incorrect) over the per-view match decisions and the summary decision."""
    right = sum(v.correct for v in views) + int(summary["correct"])
    return right, len(views) + 1 - right


# -- demonstrations -------------------------------------------------------------------

@dataclass
class DemoStore:
    scene_ids: List[str]
    views: List[ViewRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"scene_ids": self.scene_ids, "views": [v.to_dict() for v in self.views]}


def demo_count(n_scenes: int, fraction: float) -> int:
    k = math.ceil(round(fraction * n_scenes, 9))
    if k < 1:
        raise ConfigError("demonstration fraction yields 0 scenes")
    return k


def run_demonstrations(specs: Sequence[SceneSpec], config: RunConfig, seed: int,
                       cache: Optional[ViewCache] = None) -> DemoStore:
    """Run ceil(fraction * N) seeded scenes along the default tour and keep true correctness."""
    if not specs:
        raise ConfigError("dataset is empty")
    cache = cache or ViewCache()
    k = demo_count(len(specs), config.demo_fraction)
    chosen = sorted(np.random.default_rng([seed, 3]).permutation(len(specs))[:k].tolist())
    start = start_state(config.start_z)
    tour = default_tour(config.budget, start)
    store = DemoStore([specs[i].scene_id for i in chosen])
    for i in chosen:
        scene = generate_scene(specs[i])
        stream = OracleStream(seed, DEMO_EPISODE_BASE + i)
        views, _ = _run_round(scene, tour, start, stream, config.oracle, cache)
        store.views.extend(views)
    return store


# -- episodes ----------------------------------------------------------------------------

def _source_lists(views: Sequence[ViewRecord], names: Sequence[str]):
    return [[v.obs.sources[n] for n in names] for v in views]


def _orientation(scores: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """+1 when revealed correct views score higher on average, else -1."""
    s, y = scores[mask], labels[mask]
    if y.all() or not y.any():
        return 1.0
    return 1.0 if s[y].mean() >= s[~y].mean() else -1.0


def run_episode(spec: SceneSpec, config: RunConfig, demos: DemoStore, seed: int, episode: int,
                cache: Optional[ViewCache] = None, history: Optional[list] = None) -> dict:
    """Measurement round, MI-ZO fit, controller planning and correction round for one scene.

    `history` holds (viewpoint, z-level, label) triples from earlier episodes
    of the same seed; this episode's round-1 labels are appended to it.
    """
    history = [] if history is None else history
    cache = cache or ViewCache()
    metric = parse_metric(config.metric)
    scene = generate_scene(spec)
    start = start_state(config.start_z)
    stream = OracleStream(seed, episode)
    tour = default_tour(config.budget, start)
    r1, s1 = _run_round(scene, tour, start, stream, config.oracle, cache)

    # MI-ZO over demonstration views and this round's views
    train = list(demos.views) + r1
    labels = np.array([v.correct for v in train])
    revealed = np.concatenate([np.ones(len(demos.views), bool),
                               feedback_mask(len(r1), config.feedback, seed * 100_003 + episode)])
    mcfg = MizoConfig(seed=seed * 100_003 + episode, active=metric.active)
    lams = [v.obs.lam for v in train]
    run = run_mizo(_source_lists(train, metric.sources), labels, rounds=config.mizo_rounds,
                   config=mcfg, lambdas=lams, revealed=revealed)
    scores = np.array([run.scores[i] for i in range(len(train))])
    sign = _orientation(scores, labels, revealed)
    for v, s in zip(r1, scores[len(demos.views):]):
        v.score = float(s)

    gates = None
    if config.controller == "ours":
        r1_rev = revealed[len(demos.views):]
        proxy = generate_proxy_labels([(i, sign * v.score) for i, v in enumerate(r1)]).labels
        lab = [int(v.correct) if r1_rev[i] else proxy[i] for i, v in enumerate(r1)]
        obs2 = [(v.state.viewpoint, v.state.z_level, int(v.correct)) for v in demos.views]
        obs2 += history
        obs2 += [(v.state.viewpoint, v.state.z_level, lab[i]) for i, v in enumerate(r1)]
        obs1 = [(vp, y) for vp, _, y in obs2]
        gp = central_unit(fit_cm1(obs1), fit_cm2(obs2), config.tau)
        history.extend(obs2[len(obs2) - len(r1):])
        plan = plan_actions(build_interaction_matrix(), gp.node_priority, start, config.budget)
        gates = gp.log()
    else:
        plan = tour
    r2, s2 = _run_round(scene, plan, start, stream, config.oracle, cache)
    final = score_views(run.state, _source_lists(r2, metric.sources), [v.obs.lam for v in r2])
    for v, s in zip(r2, final):
        v.score = float(s)

    acc1 = acc_sq([round_accuracy(r1, s1)])
    acc2 = acc_sq([round_accuracy(r2, s2)])
    return {
        "scene_id": spec.scene_id,
        "seed": seed,
        "episode": episode,
        "rounds": [
            {"views": [v.to_dict() for v in r1], "summary": s1, "accuracy": acc1,
             "counts": list(round_accuracy(r1, s1))},
            {"views": [v.to_dict() for v in r2], "summary": s2, "accuracy": acc2,
             "counts": list(round_accuracy(r2, s2))},
        ],
        "controller": gates,
        "mizo": {"theta": run.state.theta.tolist(), "running_mean": run.state.mi_running_mean,
                 "orientation": sign},
        "delta_on_r1": acc2 - acc1,
        "operations": {"actions": 2 * config.budget, "oracle_calls": stream.counter},
    }


# -- benchmark ------------------------------------------------------------------------------

def _sigma(xs: Sequence[float]) -> float:
    return float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0


def _ber_of(episodes: Sequence[dict], specs_by_id: Dict[str, SceneSpec], round_idx: int):
    pred, actual = [], []
    for ep in episodes:
        m = specs_by_id[ep["scene_id"]].matches
        for v in ep["rounds"][round_idx]["views"]:
            pred.append(v["decision"])
            actual.append(m)
    try:
        return ber(ConfusionCounts.from_pairs(pred, actual))
    except MetricError:
        return None


def run_benchmark(specs: Sequence[SceneSpec], config: RunConfig,
                  timings: Optional[list] = None) -> dict:
    """All seeds and scenes; demonstration scenes are not scored unless they are all there is.

    Wall-clock per episode goes to `timings` (when given) and never into the
    report, which stays byte-identical for identical inputs.
    """
    config.validate()
    specs = sorted(specs, key=lambda s: s.scene_id)
    if not specs:
        raise ConfigError("dataset is empty")
    by_id = {s.scene_id: s for s in specs}
    cache = ViewCache()
    episodes, per_seed = [], []
    for seed in config.seeds:
        demos = run_demonstrations(specs, config, seed, cache)
        rows, history = [], []
        # demonstration scenes are scored only when nothing else is left
        skip = set(demos.scene_ids) if len(demos.scene_ids) < len(specs) else set()
        for idx, spec in enumerate(specs):
            if spec.scene_id in skip:
                continue
            t0 = time.perf_counter()
            ep = run_episode(spec, config, demos, seed, idx, cache, history)
            if timings is not None:
                timings.append({"seed": seed, "scene_id": spec.scene_id, "actions": 2 * config.budget,
                                "seconds": time.perf_counter() - t0})
            rows.append(ep)
        per_seed.append({
            "seed": seed,
            "demo_scenes": demos.scene_ids,
            "acc_r1": acc_sq([tuple(e["rounds"][0]["counts"]) for e in rows]),
            "acc_r2": acc_sq([tuple(e["rounds"][1]["counts"]) for e in rows]),
            "ber_r1": _ber_of(rows, by_id, 0),
            "ber_r2": _ber_of(rows, by_id, 1),
        })
        per_seed[-1]["delta_on_r1"] = per_seed[-1]["acc_r2"] - per_seed[-1]["acc_r1"]
        episodes.extend(rows)
    r2 = [p["acc_r2"] for p in per_seed]
    deltas = [p["delta_on_r1"] for p in per_seed]
    return {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "config": config.report_dict(),
        "default_tour": [str(a) for a in default_tour(config.budget, start_state(config.start_z))],
        "per_episode": episodes,
        "aggregate": {
            "metric": "acc_sq",
            "mean": float(np.mean(r2)),
            "sigma": _sigma(r2),
            "delta_on_r1": float(np.mean(deltas)),
            "delta_sigma": _sigma(deltas),
            "acc_r1_mean": float(np.mean([p["acc_r1"] for p in per_seed])),
            "per_seed": per_seed,
        },
        "timing": {
            "sidecar": "timing.json",
            "operations": {"episodes": len(episodes), "actions": sum(e["operations"]["actions"] for e in episodes),
                           "oracle_calls": sum(e["operations"]["oracle_calls"] for e in episodes)},
        },
    }


def report_bytes(report: dict) -> bytes:
    return (json.dumps(report, sort_keys=True, indent=1) + "\n").encode()


def summary_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "scene_id", "acc_r1", "acc_r2", "delta_on_r1"])
    for e in report["per_episode"]:
        w.writerow([e["seed"], e["scene_id"], e["rounds"][0]["accuracy"], e["rounds"][1]["accuracy"],
                    e["delta_on_r1"]])
    return buf.getvalue()


def write_report(report: dict, out_dir, timings: Optional[list] = None) -> Path:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    path = d / "report.json"
    path.write_bytes(report_bytes(report))
    (d / "summary.csv").write_text(summary_csv(report))
    if timings is not None:
        (d / report["timing"]["sidecar"]).write_text(json.dumps(timings, indent=1) + "\n")
    return path


# -- diagnostics ---------------------------------------------------------------------------------

@dataclass
class ViewTable:
    scene_idx: np.ndarray
    observations: List[Observation]
    correct: np.ndarray

    def sources(self, names: Sequence[str], idx=None):
        idx = range(len(self.observations)) if idx is None else idx
        return [[self.observations[i].sources[n] for n in names] for i in idx]

    def lams(self, idx=None) -> np.ndarray:
        idx = range(len(self.observations)) if idx is None else idx
        return np.array([self.observations[i].lam for i in idx])


def diagnostic_table(specs: Sequence[SceneSpec], seed: int, oracle: OracleConfig = OracleConfig(),
                     states: Sequence[CameraState] = DIAGNOSTIC_STATES,
                     cache: Optional[ViewCache] = None) -> ViewTable:
    """Oracle correctness and sources for every scene at every listed state."""
    cache = cache or ViewCache()
    idx, obs, corr = [], [], []
    for i, spec in enumerate(specs):
        scene = generate_scene(spec)
        stream = OracleStream(seed, i)
        for st in states:
            d = oracle_respond(scene, st, QUERY_MATCH, stream, oracle)
            idx.append(i)
            obs.append(cache.get(scene, st))
            corr.append(d == spec.matches)
    return ViewTable(np.array(idx), obs, np.array(corr))


def cross_fitted_scores(table: ViewTable, metric: Metric, seed: int, rounds: int = 50,
                        learn: bool = True, base: MizoConfig = MizoConfig()) -> np.ndarray:
    """Scores oriented toward correctness, each scene scored by weights fit on the other half.

    Scenes split by index parity. With `learn` False the weights stay uniform
    and only the orientation is taken from the other half.
    """
    out = np.zeros(len(table.observations))
    for fold in (0, 1):
        test = np.nonzero(table.scene_idx % 2 == fold)[0]
        train = np.nonzero(table.scene_idx % 2 != fold)[0]
        cfg = replace(base, seed=seed * 2 + fold, active=learn and metric.active)
        run = run_mizo(table.sources(metric.sources, train), table.correct[train], rounds=rounds,
                       config=cfg, lambdas=table.lams(train))
        tr = np.array([run.scores[i] for i in range(train.size)])
        sign = _orientation(tr, table.correct[train], np.ones(train.size, bool))
        out[test] = sign * score_views(run.state, table.sources(metric.sources, test), table.lams(test))
    return out


def separation_diagnostic(seed: int, metrics: Sequence[str] = ("go-led-ol-ar", "gh-led-ar"),
                          oracle: OracleConfig = OracleConfig(), rounds: int = 50,
                          specs: Optional[Sequence[SceneSpec]] = None,
                          table: Optional[ViewTable] = None) -> dict:
    """Separation of learned-weight and fixed-weight scores on the diagnostic set."""
    specs = diagnostic_set(seed) if specs is None else specs
    table = table or diagnostic_table(specs, seed, oracle)
    out = {}
    for name in metrics:
        m = parse_metric(name)
        learned = cross_fitted_scores(table, m, seed, rounds, learn=True)
        fixed = cross_fitted_scores(table, m, seed, rounds, learn=False)
        a = separation_stats(list(zip(learned, table.correct)))
        b = separation_stats(list(zip(fixed, table.correct)))
        out[m.name] = {"learned": a.to_dict(), "fixed": b.to_dict(), "auc_gain": a.auc - b.auc,
                       "views": len(table.observations), "accuracy": float(table.correct.mean())}
    return out


def pcd_diagnostic(seed: int, metrics: Sequence[str] = ("go-led-ol-ar", "gh-led-ar"),
                   oracle: OracleConfig = OracleConfig(), rounds: int = 50, increment: int = 6,
                   specs: Optional[Sequence[SceneSpec]] = None,
                   table: Optional[ViewTable] = None) -> dict:
    """Posterior concentration dispersion of learned and fixed-weight score streams."""
    specs = diagnostic_set(seed) if specs is None else specs
    table = table or diagnostic_table(specs, seed, oracle)
    out = {}
    for name in metrics:
        m = parse_metric(name)
        learned = cross_fitted_scores(table, m, seed, rounds, learn=True)
        fixed = cross_fitted_scores(table, m, seed, rounds, learn=False)
        out[m.name] = {
            "ar": pc_dispersion(learned, table.correct, increment, seed),
            "no_ar": pc_dispersion(fixed, table.correct, increment, seed),
        }
    return out
