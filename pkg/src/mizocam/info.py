"""Discrete information estimators and adaptive interval estimation.

All estimators are plug-in (maximum likelihood) and report bits.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

MASS_TOL = 1e-9

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71)


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class Histogram:
    """Normalized discrete distribution; `edges` is set for continuous-origin sources."""

    bins: np.ndarray
    edges: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=float)
        if bins.ndim != 1 or bins.size < 1:
            raise EstimationError("histogram needs at least one bin")
        if np.any(bins < 0):
            raise EstimationError("negative bin mass")
        if abs(bins.sum() - 1.0) > MASS_TOL:
            raise EstimationError(f"masses sum to {bins.sum()!r}, not 1")
        object.__setattr__(self, "bins", bins)
        if self.edges is not None:
            edges = np.asarray(self.edges, dtype=float)
            if np.any(np.diff(edges) <= 0):
                raise EstimationError("edges must be strictly increasing")
            object.__setattr__(self, "edges", edges)

    @classmethod
    def from_counts(cls, counts, edges=None) -> "Histogram":
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            raise EstimationError("empty input")
        return cls(counts / total, edges)

    @classmethod
    def point_mass(cls, size: int, index: int) -> "Histogram":
        bins = np.zeros(size)
        bins[index] = 1.0
        return cls(bins)

    def __len__(self):
        return self.bins.size


@dataclass(frozen=True)
class JointTable:
    """Dense joint mass over a product of discrete variables."""

    mass: np.ndarray

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=float)
        if mass.ndim < 1 or mass.size < 1:
            raise EstimationError("joint table needs at least one dimension")
        if np.any(mass < 0):
            raise EstimationError("negative joint mass")
        if abs(mass.sum() - 1.0) > MASS_TOL:
            raise EstimationError(f"joint mass sums to {mass.sum()!r}, not 1")
        object.__setattr__(self, "mass", mass)

    @property
    def dims(self) -> tuple:
        return self.mass.shape

    @classmethod
    def from_counts(cls, counts) -> "JointTable":
        counts = np.asarray(counts, dtype=float)
        return cls(counts / counts.sum())

    @classmethod
    def from_samples(cls, *columns: Sequence[int], dims: Optional[Sequence[int]] = None) -> "JointTable":
        cols = [np.asarray(c, dtype=int) for c in columns]
        if dims is None:
            dims = [int(c.max()) + 1 for c in cols]
        flat = np.ravel_multi_index(tuple(cols), tuple(dims))
        counts = np.bincount(flat, minlength=int(np.prod(dims))).astype(float).reshape(dims)
        return cls.from_counts(counts)

    def marginal(self, axes: Sequence[int]) -> np.ndarray:
        drop = tuple(i for i in range(self.mass.ndim) if i not in axes)
        return self.mass.sum(axis=drop)


@dataclass(frozen=True)
class CutPoints:
    points: np.ndarray
    target_bin_count: int

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).reshape(-1)
        if points.size != self.target_bin_count - 1:
            raise EstimationError("need exactly target_bin_count - 1 cut points")
        if np.any(np.diff(points) <= 0):
            raise EstimationError("cut points must be strictly increasing")
        object.__setattr__(self, "points", points)


def _entropy_of_mass(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float).reshape(-1)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def entropy(h) -> float:
    """Shannon entropy in bits; accepts a Histogram or a raw mass array."""
    bins = h.bins if isinstance(h, Histogram) else h
    return _entropy_of_mass(bins)


def joint_entropy(j: JointTable, axes: Sequence[int]) -> float:
    return _entropy_of_mass(j.marginal(axes))


def mutual_information(j: JointTable) -> float:
    if j.mass.ndim != 2:
        raise EstimationError(f"mutual information needs a 2-D joint, got {j.mass.ndim}-D")
    return joint_entropy(j, [0]) + joint_entropy(j, [1]) - joint_entropy(j, [0, 1])


def multi_information(j: JointTable) -> float:
    """Signed multi-information between inputs x_1..x_n (leading axes) and target y (last axis).

    Inclusion-exclusion over input subsets of the information each subset
    carries about y::

        sum_{k=1..n} (-1)^(k+1) sum_{|I|=k} I(X_I; y)

    For n = 2 this is I(x1;y) + I(x2;y) - I(x1,x2;y), the co-information,
    which is negative for synergistic inputs (y = x1 xor x2 gives -1 bit).
    """
    n = j.mass.ndim - 1
    if n < 2:
        raise EstimationError("multi-information needs at least two input variables")
    y = n
    h_y = joint_entropy(j, [y])
    total = 0.0
    for k in range(1, n + 1):
        sign = 1.0 if k % 2 else -1.0
        for subset in combinations(range(n), k):
            info = joint_entropy(j, subset) + h_y - joint_entropy(j, subset + (y,))
            total += sign * info
    return total


def co_information_pair(j: JointTable) -> float:
    """Closed form for two inputs and a target, written out term by term."""
    if j.mass.ndim != 3:
        raise EstimationError("expected a joint over (x1, x2, y)")
    h = lambda *ax: joint_entropy(j, ax)  # noqa: E731
    return h(0) + h(1) + h(2) - h(0, 1) - h(0, 2) - h(1, 2) + h(0, 1, 2)


# Stored witness: y = x1 xor x2 with a slight bias on x1; co-information < 0.
NEGATIVE_WITNESS = np.array(
    [[[0.30, 0.00], [0.00, 0.30]],
     [[0.00, 0.20], [0.20, 0.00]]]
)


def halton(index: int, base: int) -> float:
    """Radical inverse of `index` in `base` (van der Corput / Halton coordinate)."""
    if index < 1:
        raise EstimationError("halton index starts at 1")
    if base < 2:
        raise EstimationError("halton base must be >= 2")
    result, f = 0.0, 1.0
    i = index
    while i > 0:
        f /= base
        result += f * (i % base)
        i //= base
    return result


def halton_points(count: int, dims: int, start: int = 1) -> np.ndarray:
    """(count, dims) Halton points; dimension d uses the d-th prime as base."""
    if dims > len(_PRIMES):
        raise EstimationError(f"at most {len(_PRIMES)} Halton dimensions supported")
    return _halton_table(count, dims, start).copy()


@lru_cache(maxsize=64)
def _halton_table(count: int, dims: int, start: int) -> np.ndarray:
    return np.array(
        [[halton(start + i, _PRIMES[d]) for d in range(dims)] for i in range(count)]
    ).reshape(count, dims)


def discretize(samples, cuts: CutPoints) -> Histogram:
    """Counts per adjacent interval; a sample equal to a cut goes to the right interval."""
    x = np.asarray(samples, dtype=float)
    idx = np.searchsorted(cuts.points, x, side="right")
    counts = np.bincount(idx, minlength=cuts.target_bin_count)
    return Histogram.from_counts(counts, edges=cuts.points if cuts.points.size else None)


def bin_indices(samples, cuts: CutPoints) -> np.ndarray:
    return np.searchsorted(cuts.points, np.asarray(samples, dtype=float), side="right")


@lru_cache(maxsize=256)
def _rank_positions(n: int, bin_count: int, proposal_count: int, spread: float) -> np.ndarray:
    """Upper order-statistic index of every proposed cut; depends only on the sample size."""
    k = np.arange(1, bin_count)
    jitter = _halton_table(proposal_count, bin_count - 1, 1) - 0.5
    ranks = (k[None, :] + spread * jitter) / bin_count
    return np.clip(np.rint(ranks * n).astype(int), 1, n - 1)


@lru_cache(maxsize=256)
def _distinct_best(n: int, bin_count: int, proposal_count: int, spread: float) -> np.ndarray:
    """Rank positions of the maximum-entropy proposals when all n samples differ.

    Then a cut between order statistics m - 1 and m leaves exactly m samples
    below it, so validity and entropy depend only on the positions.
    """
    m = _rank_positions(n, bin_count, proposal_count, spread)
    m = m[np.all(np.diff(m, axis=1) > 0, axis=1)]
    if m.size == 0:
        return m
    counts = np.diff(np.concatenate([np.zeros((len(m), 1), int), m, np.full((len(m), 1), n)], axis=1)) / n
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.round(np.where(counts > 0, -counts * np.log2(counts), 0.0).sum(axis=1), 9)
    return m[ent == ent.max()]


def _rank_cuts(sorted_x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Cut values between consecutive order statistics m - 1 and m."""
    return 0.5 * (sorted_x[m - 1] + sorted_x[m])


def estimate_intervals(samples, bin_count: int, proposal_count: int = 32,
                       spread: float = 0.25) -> CutPoints:
    """Entropy-maximizing cut points from Halton proposals.

    Each proposal places cut k in a window of relative width `spread` around
    the k/bin_count quantile; the jitter inside the window comes from the
    Halton coordinate of base prime_k. Proposals whose induced histogram
    reaches the maximum entropy (rounded to 1e-9) are averaged elementwise.
    With tied samples an exact search over the gaps between distinct values
    replaces them whenever it does better.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    if bin_count < 1:
        raise EstimationError("bin_count must be >= 1")
    if proposal_count < 1:
        raise EstimationError("proposal_count must be >= 1")
    if bin_count - 1 > len(_PRIMES):
        raise EstimationError(f"at most {len(_PRIMES)} Halton dimensions supported")
    sorted_x = np.sort(x)
    distinct = int(np.count_nonzero(sorted_x[1:] != sorted_x[:-1])) + 1 if x.size else 0
    if distinct < bin_count:
        raise EstimationError("insufficient support")
    if bin_count == 1:
        return CutPoints(np.empty(0), 1)

    if distinct == x.size:
        top = _distinct_best(x.size, bin_count, proposal_count, float(spread))
        if top.size:
            best = _rank_cuts(sorted_x, top)
            mean = best.mean(axis=0)
            # values one ulp apart can make the averaged cuts collide
            return CutPoints(mean if np.all(np.diff(mean) > 0) else best[0], bin_count)
    proposals = _rank_cuts(sorted_x, _rank_positions(x.size, bin_count, proposal_count, float(spread)))

    valid = np.all(np.diff(proposals, axis=1) > 0, axis=1)
    if not valid.any():
        return CutPoints(_tied_optimum(sorted_x, bin_count), bin_count)
    proposals = proposals[valid]

    below = np.searchsorted(sorted_x, proposals, side="left")
    n = x.size
    edges = np.concatenate([np.zeros((len(proposals), 1)), below, np.full((len(proposals), 1), n)], axis=1)
    counts = np.diff(edges, axis=1) / n
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(counts > 0, -counts * np.log2(counts), 0.0)
    ent = np.round(terms.sum(axis=1), 9)
    best = proposals[ent == ent.max()]
    if distinct < n:
        exact = _tied_optimum(sorted_x, bin_count)
        if _entropy_of_counts(np.diff(np.concatenate([[0], np.searchsorted(sorted_x, exact), [n]]))) \
                > ent.max() + 1e-9:
            return CutPoints(exact, bin_count)
    mean = best.mean(axis=0)
    # values one ulp apart can make the averaged cuts collide
    return CutPoints(mean if np.all(np.diff(mean) > 0) else best[0], bin_count)


def _entropy_of_counts(c: np.ndarray) -> float:
    p = np.asarray(c, dtype=float) / np.sum(c)
    p = p[p > 0]
    return float(np.round(-(p * np.log2(p)).sum(), 9))


def _tied_optimum(sorted_x: np.ndarray, bin_count: int) -> np.ndarray:
    """Entropy-maximizing cuts over the gaps between distinct values (dynamic program).

    Quantile proposals fall short when ties leave few legal cut positions;
    there the exact optimum is cheap.
    """
    n = sorted_x.size
    pos = np.concatenate([[0], np.nonzero(sorted_x[1:] != sorted_x[:-1])[0] + 1, [n]])
    p = (pos[None, :] - pos[:, None]) / n
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), -np.inf)
    score = np.full(pos.size, -np.inf)
    score[0] = 0.0
    back = []
    for _ in range(bin_count):
        total = score[:, None] + gain
        back.append(np.argmax(total, axis=0))
        score = total[back[-1], np.arange(pos.size)]
    cuts, j = [], pos.size - 1
    for arg in reversed(back[1:]):
        j = int(arg[j])
        cuts.append(int(pos[j]))
    cuts = np.array(cuts[::-1])
    return 0.5 * (sorted_x[cuts - 1] + sorted_x[cuts])
