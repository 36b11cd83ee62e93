"""Benchmark metrics, score separation statistics and the posterior
concentration dispersion diagnostic."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.optimize import minimize_scalar
from scipy.special import expit, log_expit

PRIOR_SD = 2.0
ITERATIONS = 1000
BURN_IN = 200
SIGMA_FLOOR = 1e-9
PCD_INCREMENT = 6
# independence proposal: Laplace approximation widened by this factor
PROPOSAL_WIDEN = 1.5


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise MetricError("counts must be nonnegative")

    @classmethod
    def from_pairs(cls, predicted: Sequence[bool], actual: Sequence[bool]) -> "ConfusionCounts":
        p = np.asarray(predicted, bool)
        a = np.asarray(actual, bool)
        return cls(int((p & a).sum()), int((p & ~a).sum()), int((~p & ~a).sum()), int((~p & a).sum()))


def ber(c: ConfusionCounts) -> float:
    """Balanced error rate: mean of the false positive and false negative rates."""
    if c.fp + c.tn == 0 or c.fn + c.tp == 0:
        raise MetricError("undefined rate")
    return 0.5 * (c.fp / (c.fp + c.tn) + c.fn / (c.fn + c.tp))


def acc_sq(per_scene: Sequence[Tuple[int, int]]) -> float:
    """100 x mean over scenes of the fraction of correct decisions."""
    if not per_scene:
        raise MetricError("no scenes")
    fracs = []
    for correct, wrong in per_scene:
        if correct < 0 or wrong < 0 or correct + wrong == 0:
            raise MetricError("each scene needs at least one decision")
        fracs.append(correct / (correct + wrong))
    return 100.0 * math.fsum(fracs) / len(fracs)


def rank_auc(scores, correct) -> float:
    """Probability that a correct item outscores an incorrect one (ties count half)."""
    s = np.asarray(scores, float)
    c = np.asarray(correct, bool)
    n1, n0 = int(c.sum()), int((~c).sum())
    if n1 == 0 or n0 == 0:
        raise MetricError("both classes required")
    ranks = stats.rankdata(s)
    return float((ranks[c].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


@dataclass(frozen=True)
class SeparationStats:
    median_gap: float
    kurtosis_correct: float
    kurtosis_incorrect: float
    auc: float

    def to_dict(self) -> dict:
        return {"median_gap": self.median_gap, "kurtosis_per_class":
                {"correct": self.kurtosis_correct, "incorrect": self.kurtosis_incorrect},
                "auc": self.auc}


def _excess_kurtosis(x: np.ndarray) -> float:
    if x.size < 2 or np.ptp(x) == 0:
        return 0.0
    return float(stats.kurtosis(x, fisher=True, bias=True))


def separation_stats(pairs: Sequence[Tuple[float, bool]]) -> SeparationStats:
    """Median gap (correct minus incorrect), per-class excess kurtosis and rank AUC."""
    if not pairs:
        raise MetricError("single class")
    s = np.array([p[0] for p in pairs], float)
    c = np.array([bool(p[1]) for p in pairs])
    if c.all() or not c.any():
        raise MetricError("single class")
    return SeparationStats(float(np.median(s[c]) - np.median(s[~c])),
                           _excess_kurtosis(s[c]), _excess_kurtosis(s[~c]), rank_auc(s, c))


# -- posterior of a one-coefficient logistic regression ----------------------------

@dataclass(frozen=True)
class PosteriorSummary:
    beta_samples: np.ndarray
    dispersion: float
    acceptance: float

    @property
    def mean(self) -> float:
        return float(self.beta_samples.mean())

    def interval(self, mass: float = 0.9) -> Tuple[float, float]:
        lo = (1 - mass) / 2
        return tuple(float(q) for q in np.quantile(self.beta_samples, [lo, 1 - lo]))


def _log_post(beta: float, x: np.ndarray, y: np.ndarray) -> float:
    z = beta * x
    return float(np.sum(np.where(y, log_expit(z), log_expit(-z)))) - 0.5 * (beta / PRIOR_SD) ** 2


def gibbs_logistic(x, y, iterations: int = ITERATIONS, seed: int = 0,
                   burn_in: int | None = None) -> PosteriorSummary:
    """Sample beta in y ~ Bernoulli(logistic(beta * x)) under a N(0, 2^2) prior.

    Each sweep makes one independence Metropolis move from a widened Laplace
    approximation of the posterior. With no data the proposal is the prior
    itself. The first `burn_in` draws are discarded (default 200 of 1000, a
    fifth of shorter chains).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, bool)
    if x.shape != y.shape:
        raise MetricError("x and y must align")
    if iterations < 100:
        raise MetricError("need at least 100 iterations")
    burn_in = min(BURN_IN, iterations // 5) if burn_in is None else burn_in
    if not 0 <= burn_in < iterations - 1:
        raise MetricError("burn-in must leave at least two draws")
    if x.size and (y.all() or not y.any()):
        raise MetricError("degenerate target")
    if x.size:
        res = minimize_scalar(lambda b: -_log_post(b, x, y), bounds=(-50, 50), method="bounded",
                              options={"xatol": 1e-10})
        mode = float(res.x)
        p = expit(mode * x)
        info = float(np.sum(x * x * p * (1 - p))) + PRIOR_SD ** -2
        scale = PROPOSAL_WIDEN / math.sqrt(info)
    else:
        mode, scale = 0.0, PRIOR_SD
    rng = np.random.default_rng(seed)
    props = rng.normal(mode, scale, size=iterations)
    logu = np.log(rng.random(iterations))

    def log_q(b):
        return -0.5 * ((b - mode) / scale) ** 2

    cur = mode
    cur_w = _log_post(cur, x, y) - log_q(cur)
    out = np.empty(iterations)
    accepted = 0
    for i in range(iterations):
        w = _log_post(props[i], x, y) - log_q(props[i])
        if logu[i] < w - cur_w:
            cur, cur_w = props[i], w
            accepted += 1
        out[i] = cur
    kept = out[burn_in:]
    sd = max(float(kept.std(ddof=1)), SIGMA_FLOOR)
    return PosteriorSummary(kept, 1.0 / sd, accepted / iterations)


def _standardize(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else x - x.mean()


def concentration_path(scores, labels, increment: int = PCD_INCREMENT, seed: int = 0,
                       iterations: int = ITERATIONS) -> list:
    """(prefix length, 1/sd of beta) for cumulative prefixes in steps of `increment`.

    Scores are standardized within each prefix so concentrations compare
    across score scales. Prefixes start at the first one holding both labels.
    """
    x = np.asarray(scores, float)
    y = np.asarray(labels, bool)
    if x.shape != y.shape:
        raise MetricError("scores and labels must align")
    if increment < 1:
        raise MetricError("increment must be >= 1")
    out = []
    for end in range(increment, x.size + 1, increment):
        yy = y[:end]
        if yy.all() or not yy.any():
            continue
        post = gibbs_logistic(_standardize(x[:end]), yy, iterations, seed=seed + end)
        out.append((end, post.dispersion))
    if len(out) < 2:
        raise MetricError("insufficient data for two increments")
    return out


def pc_dispersion(scores, labels, increment: int = PCD_INCREMENT, seed: int = 0,
                  iterations: int = ITERATIONS) -> float:
    """Max minus min posterior concentration over the cumulative prefixes."""
    conc = [c for _, c in concentration_path(scores, labels, increment, seed, iterations)]
    return float(max(conc) - min(conc))
