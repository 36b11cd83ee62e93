"""MI-ZO: multi-information with zeroth-order active regret minimisation.

A weighted mixture over entropy sources yields one score per view (the
entropy of the scaled mixture). Mixture weights live on the probability
simplex and move by derivative-free proposals that are kept only when the
information the score carries about the system responses increases. A
max-margin separator between additive and reductive histogram bins is
maintained alongside.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from .info import (
    Histogram,
    JointTable,
    bin_indices,
    entropy,
    estimate_intervals,
)

GRID_BINS = 32
# MI values live on this grid so regret bookkeeping is exact in floating point
_MI_QUANTUM = 2.0 ** -40
PMI_CLIP = 16.0


class MizoError(ValueError):
    pass


def snap(x: float) -> float:
    return round(x / _MI_QUANTUM) * _MI_QUANTUM


@dataclass
class Separator:
    w: np.ndarray
    bias: float = 0.0
    gamma: float = math.inf

    @classmethod
    def zero(cls, dim: int = 3) -> "Separator":
        return cls(np.zeros(dim), 0.0, math.inf)

    def copy(self) -> "Separator":
        return Separator(self.w.copy(), self.bias, self.gamma)


@dataclass
class MizoState:
    theta: np.ndarray
    rng_seed: int = 0
    step: int = 0
    mi_running_mean: float = 0.0
    accepted_mi: List[float] = field(default_factory=list)
    loss_history: List[float] = field(default_factory=list)
    mi_history: List[float] = field(default_factory=list)
    regret_history: List[float] = field(default_factory=list)
    phi: List[dict] = field(default_factory=list)
    separator: Separator = field(default_factory=Separator.zero)

    @classmethod
    def initial(cls, n_sources: int, seed: int = 0) -> "MizoState":
        if n_sources < 1:
            raise MizoError("at least one source required")
        return cls(theta=np.full(n_sources, 1.0 / n_sources), rng_seed=seed)

    def copy(self) -> "MizoState":
        return replace(
            self,
            theta=self.theta.copy(),
            accepted_mi=list(self.accepted_mi),
            loss_history=list(self.loss_history),
            mi_history=list(self.mi_history),
            regret_history=list(self.regret_history),
            phi=[dict(p) for p in self.phi],
            separator=self.separator.copy(),
        )

    def to_json(self) -> str:
        d = asdict(self)
        d["theta"] = self.theta.tolist()
        gamma = self.separator.gamma
        d["separator"] = {
            "w": self.separator.w.tolist(),
            "bias": self.separator.bias,
            "gamma": None if math.isinf(gamma) else gamma,
        }
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MizoState":
        d = json.loads(text)
        sep = d.pop("separator")
        gamma = math.inf if sep["gamma"] is None else sep["gamma"]
        return cls(
            theta=np.asarray(d.pop("theta"), dtype=float),
            separator=Separator(np.asarray(sep["w"], dtype=float), sep["bias"], gamma),
            **d,
        )


@dataclass(frozen=True)
class UnitSample:
    feature: np.ndarray
    up: bool

    @property
    def orientation(self) -> str:
        return "Up" if self.up else "Down"


@dataclass(frozen=True)
class MizoConfig:
    """Knobs of run_mizo.

    `probe` scales the tangent perturbation at which the learner loss is read.
    `inner_steps` repeats the global + per-component block within a round.
    The learner scores candidate weights with `learner_bins` intervals (finer
    than the 2-interval `mi_bins` used for the logged MI so that small
    weight moves register). `min_class_labels` holds the learner back until
    the revealed pool has that many labels of each class. With
    `measure_all` the logged MI covers every view; otherwise only the views
    seen so far. With `fd_scale` the update divides the loss difference by
    `probe`, the usual finite-difference gradient estimate.
    """
    grid_bins: int = GRID_BINS
    directions: int = 4
    eta: float = 0.1
    batch_size: int = 8
    mi_bins: int = 2
    proposal_count: int = 32
    probe: float = 0.2
    inner_steps: int = 1
    min_class_labels: int = 1
    learner_bins: Optional[int] = 16
    measure_all: bool = True
    fd_scale: bool = True
    seed: int = 0
    active: bool = True


# -- simplex and mixture -----------------------------------------------------

def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, n + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    w = np.maximum(v - tau, 0.0)
    return w / w.sum()


def to_grid(h, n: int = GRID_BINS) -> np.ndarray:
    """Resample a histogram onto `n` equal bins over [0, 1] through its CDF."""
    bins = h.bins if isinstance(h, Histogram) else np.asarray(h, dtype=float)
    k = bins.size
    if k == n:
        return bins.copy()
    cdf = np.concatenate([[0.0], np.cumsum(bins)])
    out = np.diff(np.interp(np.linspace(0, 1, n + 1), np.linspace(0, 1, k + 1), cdf))
    out = np.maximum(out, 0.0)
    return out / out.sum()


def policy_weights(theta: np.ndarray, available: Optional[np.ndarray] = None) -> np.ndarray:
    """pi(theta; phi): theta restricted to the sources available at this step."""
    if available is None:
        return theta
    w = theta * np.asarray(available, dtype=float)
    s = w.sum()
    if s <= 0:
        raise MizoError("no available source carries weight")
    return w / s


def tilt(mass: np.ndarray, lam) -> np.ndarray:
    """mass ** lam renormalized along the last axis."""
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore"):
        logm = np.where(mass > 0, np.log(np.where(mass > 0, mass, 1.0)), -np.inf)
    z = logm * lam[..., None] if lam.ndim else logm * lam
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=-1, keepdims=True)


def _row_entropy(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, -p * np.log2(p), 0.0)
    return t.sum(axis=-1)


def mixture_score(sources: Sequence, state_or_theta, lam: float = 1.0,
                  available=None, grid_bins: int = GRID_BINS):
    """Scaled mixture S_t of the sources and its scalar score (entropy in bits)."""
    theta = state_or_theta.theta if isinstance(state_or_theta, MizoState) else np.asarray(state_or_theta, float)
    if len(sources) != theta.size:
        raise MizoError(f"{len(sources)} sources but {theta.size} weights")
    grid = np.stack([to_grid(h, grid_bins) for h in sources])
    mix = policy_weights(theta, available) @ grid
    dist = tilt(mix, lam) if lam != 1.0 else mix
    dist = dist / dist.sum()
    return Histogram(dist), float(_row_entropy(dist))


def batch_scores(stack: np.ndarray, lams: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Scores for a (samples, sources, grid) stack under weights theta."""
    mix = np.einsum("snk,n->sk", stack, theta)
    lams = np.asarray(lams, dtype=float)
    if np.all(lams == 1.0):
        return _row_entropy(mix / mix.sum(axis=-1, keepdims=True))
    return _row_entropy(tilt(mix, lams))


def stack_sources(per_view: Sequence[Sequence], grid_bins: int = GRID_BINS) -> np.ndarray:
    return np.stack([np.stack([to_grid(h, grid_bins) for h in srcs]) for srcs in per_view])


# -- information of a score --------------------------------------------------

def mi_of_score(scores, labels, bin_count: int = 2, proposal_count: int = 32) -> float:
    """MI between interval-discretized scores and a boolean response."""
    x = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if x.size < 2 or y.all() or not y.any():
        raise MizoError("degenerate target")
    sx = np.sort(x)
    bins = min(bin_count, int(np.count_nonzero(sx[1:] != sx[:-1])) + 1)
    if bins < 2:
        return 0.0
    cuts = estimate_intervals(x, bins, proposal_count)
    flat = bin_indices(x, cuts) * 2 + y
    mass = np.bincount(flat, minlength=2 * bins).astype(float).reshape(bins, 2)
    mass /= mass.sum()
    # H(X) + H(Y) - H(X, Y), as in mutual_information
    return max(0.0, entropy(mass.sum(axis=1)) + entropy(mass.sum(axis=0)) - entropy(mass))


def mi_of_score_pairs(samples, bin_count: int = 2) -> float:
    xs, ys = zip(*samples) if samples else ((), ())
    return mi_of_score(xs, ys, bin_count)


def regret(state: MizoState, mi_t: float) -> float:
    return state.mi_running_mean - mi_t


# -- zeroth-order update -----------------------------------------------------

def tangent_directions(rng: np.random.Generator, n: int, r: int,
                       coordinate: Optional[int] = None,
                       theta: Optional[np.ndarray] = None) -> np.ndarray:
    """r random signed directions in the simplex tangent space (rows sum to 0).

    With `coordinate` set, every row is +-(e_i - theta): moving along it
    changes weight i while the other weights keep their proportions.
    """
    if coordinate is None:
        d = rng.choice([-1.0, 1.0], size=(r, n))
        return d - d.mean(axis=1, keepdims=True)
    signs = rng.choice([-1.0, 1.0], size=(r, 1))
    base = np.full(n, 1.0 / n) if theta is None else np.asarray(theta, dtype=float)
    e = np.zeros(n)
    e[coordinate] = 1.0
    return signs * (e - base)


def zo_update(state: MizoState, current_loss: float, r: int, rng: np.random.Generator,
              objective: Optional[Callable[[np.ndarray], float]] = None,
              directions: Optional[np.ndarray] = None,
              coordinate: Optional[int] = None, record: bool = True,
              incumbent: Optional[float] = None, baseline: Optional[float] = None):
    """One finite-difference step.

    The coefficient is mean(loss_history) - current_loss; the direction is the
    mean of r signed perturbations. The projected proposal replaces theta
    only when `objective` (the learner's MI) strictly increases over
    `incumbent` (default -current_loss). Returns (new_state, accepted).
    """
    if r < 1:
        raise MizoError("r must be >= 1")
    new = state.copy()
    hist_mean = float(np.mean(state.loss_history)) if state.loss_history else 0.0
    coef = hist_mean - current_loss
    if directions is None:
        directions = tangent_directions(rng, state.theta.size, r, coordinate)
    v = np.mean(np.asarray(directions, dtype=float), axis=0)
    proposal = project_simplex(state.theta + coef * v)
    accepted = False
    if objective is not None and not np.array_equal(proposal, state.theta):
        bar = -current_loss if incumbent is None else incumbent
        if objective(proposal) > bar:
            new.theta = proposal
            accepted = True
    elif objective is None:
        new.theta = proposal
        accepted = True
    if record:
        new.loss_history.append(current_loss)
    return new, accepted


# -- unit separation ---------------------------------------------------------

def source_joint(stack_h: np.ndarray, labels: np.ndarray) -> JointTable:
    """Joint over (grid bin, response) from per-sample histograms of one source."""
    y = np.asarray(labels, dtype=bool)
    mass = np.stack([stack_h[~y].sum(axis=0), stack_h[y].sum(axis=0)], axis=1)
    return JointTable(mass / mass.sum())


def classify_units(source: Histogram, joint_with_y: JointTable) -> List[UnitSample]:
    """Orient every bin by the sign of its pointwise MI with a correct response.

    Feature per bin: (bin mass in `source`, p(Y=1 | bin), PMI(bin; Y=1)).
    PMI > 0 is Up (additive); PMI <= 0 is Down.
    """
    j = joint_with_y.mass
    if j.ndim != 2 or j.shape[1] != 2 or j.shape[0] != len(source):
        raise MizoError("joint dims incompatible with source bins")
    p_bin = j.sum(axis=1)
    p_y1 = j[:, 1].sum()
    units = []
    for b in range(j.shape[0]):
        if p_bin[b] <= 0 or p_y1 <= 0:
            cond, pmi = 0.0, 0.0
        else:
            cond = j[b, 1] / p_bin[b]
            pmi = math.log2(cond / p_y1) if cond > 0 else -PMI_CLIP
            pmi = min(max(pmi, -PMI_CLIP), PMI_CLIP)
        units.append(UnitSample(np.array([source.bins[b], cond, pmi]), pmi > 0))
    return units


def max_margin_step(separator: Separator, units: Sequence[UnitSample], eta: float, alpha: int):
    """Projected hinge-loss subgradient step separating Up from Down units.

    Returns (separator, stepped). No step when alpha is 0 or either
    orientation is missing. w is kept inside the unit ball and
    gamma = 2 / ||w||.
    """
    ups = sum(u.up for u in units)
    if alpha == 0 or ups == 0 or ups == len(units):
        return separator.copy(), False
    X = np.stack([u.feature for u in units])
    y = np.array([1.0 if u.up else -1.0 for u in units])
    margin = y * (X @ separator.w + separator.bias)
    active = margin < 1.0
    gw = -(y[active, None] * X[active]).sum(axis=0) / len(units)
    gb = -y[active].sum() / len(units)
    w = separator.w - eta * alpha * gw
    bias = separator.bias - eta * alpha * gb
    norm = float(np.linalg.norm(w))
    if norm > 1.0:
        w = w / norm
        norm = float(np.linalg.norm(w))
    gamma = 2.0 / norm if norm > 0 else math.inf
    return Separator(w, float(bias), gamma), True


# -- the loop ----------------------------------------------------------------

@dataclass
class MizoRun:
    state: MizoState
    scores: dict
    trace: List[dict]


def feedback_mask(k: int, fraction: float, seed: int) -> np.ndarray:
    """Reveal exactly floor(fraction * k) of k labels, chosen by seeded permutation.

    Masks for smaller fractions are subsets of masks for larger ones.
    """
    order = np.random.default_rng([seed, 2]).permutation(k)
    out = np.zeros(k, dtype=bool)
    out[order[: int(math.floor(fraction * k + 1e-9))]] = True
    return out


def run_mizo(sources: Sequence[Sequence], responses, views: Optional[Sequence] = None,
             rounds: int = 50, config: MizoConfig = MizoConfig(),
             lambdas=None, revealed=None, state: Optional[MizoState] = None,
             available=None) -> MizoRun:
    """Online MI-ZO over the views.

    `sources[i]` lists the histograms of view i in a fixed source order and
    `responses[i]` says whether the system was correct on it. Each round takes
    the next batch of views; updates use only labels flagged in `revealed`,
    while the logged MI, regret and running mean are measured against every
    response in the batch.
    """
    if rounds < 1:
        raise MizoError("rounds must be >= 1")
    if len(sources) == 0 or any(len(s) == 0 for s in sources):
        raise MizoError("empty sources")
    n = len(sources)
    views = list(range(n)) if views is None else list(views)
    y = np.asarray(responses, dtype=bool)
    if y.size != n or len(views) != n:
        raise MizoError("sources, responses and views must align")
    revealed = np.ones(n, bool) if revealed is None else np.asarray(revealed, dtype=bool)
    lams = np.ones(n) if lambdas is None else np.asarray(lambdas, dtype=float)
    stack = stack_sources(sources, config.grid_bins)
    n_src = stack.shape[1]
    st = MizoState.initial(n_src, config.seed) if state is None else state.copy()
    if st.theta.size != n_src:
        raise MizoError("state weights do not match the number of sources")

    batch_rng = np.random.default_rng([config.seed, st.step, 1])
    batch_size = min(config.batch_size, n)
    order: list = []
    seen = np.zeros(n, bool)
    trace = []

    def score_mi(idx: np.ndarray, theta: np.ndarray, labels: np.ndarray,
                 bins: int = config.mi_bins, least: int = 1) -> Optional[float]:
        ups = int(labels[idx].sum())
        if idx.size < 2 or min(ups, idx.size - ups) < least:
            return None
        theta_w = policy_weights(theta, available)
        s = batch_scores(stack[idx], lams[idx], theta_w)
        return mi_of_score(s, labels[idx], bins, config.proposal_count)

    step_scale = 1.0 / config.probe if config.fd_scale else 1.0
    for _ in range(rounds):
        if len(order) < batch_size:
            order.extend(batch_rng.permutation(n).tolist())
        batch = np.array(order[:batch_size])
        del order[:batch_size]
        seen[batch] = True
        t = st.step + 1
        pool = np.nonzero(seen & revealed)[0]
        alpha = int(revealed[batch].any())
        dir_rng = np.random.default_rng([config.seed, t, 0])

        if config.active and n_src > 1:
            memo: dict = {}

            def objective(theta, _pool=pool, _memo=memo):
                key = theta.tobytes()
                if key not in _memo:
                    bins = config.learner_bins or config.mi_bins
                    v = score_mi(_pool, theta, y, bins, config.min_class_labels)
                    _memo[key] = -math.inf if v is None else v
                return _memo[key]

            learner = objective(st.theta)
            if math.isfinite(learner):
                # global step, then the per-component inner loop
                for coord in ([None] + list(range(n_src))) * config.inner_steps:
                    dirs = tangent_directions(dir_rng, n_src, config.directions, coord, st.theta)
                    probe = project_simplex(st.theta + config.probe * dirs.mean(axis=0))
                    probe_loss = -objective(probe)
                    st, _ = zo_update(st, probe_loss, config.directions, dir_rng, objective,
                                      directions=dirs * step_scale,
                                      record=coord is None,
                                      incumbent=learner)
                    learner = objective(st.theta)
            if pool.size and y[pool].any() and not y[pool].all():
                units: list = []
                for h in range(n_src):
                    joint = source_joint(stack[pool, h], y[pool])
                    marginal = Histogram(joint.mass.sum(axis=1))
                    units.extend(classify_units(marginal, joint))
                st.separator, _ = max_margin_step(st.separator, units, config.eta / math.sqrt(t), alpha)

        mi_t = score_mi(np.arange(n) if config.measure_all else np.nonzero(seen)[0], st.theta, y)
        mi_t = snap(0.0 if mi_t is None else mi_t)
        prev = st.mi_running_mean
        r_t = regret(st, mi_t)
        accept = (mi_t >= prev) if config.active else True
        if accept:
            st.accepted_mi.append(mi_t)
            st.mi_running_mean = snap(math.fsum(st.accepted_mi) / len(st.accepted_mi))
        st.mi_history.append(mi_t)
        st.regret_history.append(r_t)
        st.phi.append({"step": t, "alpha": alpha})
        st.step = t
        trace.append({"step": t, "mi": mi_t, "regret": r_t, "running_mean": st.mi_running_mean,
                      "prev_running_mean": prev, "accepted": accept, "theta": st.theta.tolist(),
                      "gamma": st.separator.gamma})

    final = batch_scores(stack, lams, policy_weights(st.theta, available))
    return MizoRun(st, {v: float(s) for v, s in zip(views, final)}, trace)


def score_views(state_or_theta, sources: Sequence[Sequence], lambdas=None,
                grid_bins: int = GRID_BINS) -> np.ndarray:
    """Scores of views under frozen weights (read-only)."""
    theta = state_or_theta.theta if isinstance(state_or_theta, MizoState) else np.asarray(state_or_theta, float)
    stack = stack_sources(sources, grid_bins)
    lams = np.ones(len(sources)) if lambdas is None else np.asarray(lambdas, dtype=float)
    return batch_scores(stack, lams, theta)
