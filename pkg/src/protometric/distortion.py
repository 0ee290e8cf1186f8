"""Distortion measures and prototype regularizers.

The distortion of a prototype arrangement against a finite cost metric D is
the mean relative deviation |d(pi_k, pi_l) - D[k,l]| / D[k,l] over ordered
class pairs. Its scale-free variant minimizes that quantity over a global
multiplicative factor s applied to all prototype distances; the minimizing s
for the L1 form has an exact sorting-based solution, and for the squared
(smooth surrogate) form a closed form. Both regularizers below return
analytic gradients with respect to the prototype coordinates.

The scale multiplies distances, not coordinates. For the Euclidean and
squared kinds the two views coincide (the norms are homogeneous); for the
Huber kind they differ and the distance-scaled form is the one implemented
everywhere.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .geometry import DistanceSpec, dist_from_sqnorm, grad_weight_from_sqnorm
from .taxonomy import FiniteMetric


class DegeneratePrototypesError(ArithmeticError):
    """All prototypes coincide: no scale can be fitted."""


@dataclass(frozen=True)
class PrototypeSet:
    """Learnable class representatives, one row per covered taxonomy node."""

    coords: np.ndarray            # (K', m) float64
    class_map: tuple[int, ...]    # prototype row -> taxonomy node id
    includes_internal: bool = False

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[0] < 2:
            raise ValueError("prototype set needs a (K, m) matrix with K >= 2")
        if not np.all(np.isfinite(coords)):
            raise ValueError("prototype coordinates must be finite")
        class_map = tuple(int(i) for i in self.class_map)
        if len(class_map) != coords.shape[0]:
            raise ValueError("class_map length must match prototype count")
        if len(set(class_map)) != len(class_map):
            raise ValueError("class_map must be a bijection onto the covered nodes")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "class_map", class_map)

    @property
    def size(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def with_coords(self, coords: np.ndarray) -> "PrototypeSet":
        return PrototypeSet(coords, self.class_map, self.includes_internal)

    def subset(self, rows) -> "PrototypeSet":
        rows = list(rows)
        return PrototypeSet(self.coords[rows],
                            tuple(self.class_map[r] for r in rows),
                            includes_internal=False)


@dataclass(frozen=True)
class DistortionReport:
    distortion: float
    scale_free_distortion: float
    s_star_l1: float
    s_star_l2: float
    pair_count: int  # ordered pairs K(K-1)

    def to_dict(self) -> dict:
        return {
            "distortion": self.distortion,
            "scale_free_distortion": self.scale_free_distortion,
            "s_star_l1": self.s_star_l1,
            "s_star_l2": self.s_star_l2,
            "pair_count": self.pair_count,
        }


@dataclass(frozen=True)
class TripletBatch:
    """Ordered distinct class triples (k, l, m) for the rank regularizer."""

    triplets: np.ndarray  # (S, 3) int

    def __post_init__(self):
        t = np.array(self.triplets, dtype=np.intp)
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triplets must be an (S, 3) array")
        if t.shape[0] == 0:
            raise ValueError("empty triplet batch")
        if (t[:, 0] == t[:, 1]).any() or (t[:, 1] == t[:, 2]).any() or (t[:, 0] == t[:, 2]).any():
            raise ValueError("triples must have pairwise-distinct members")
        t.setflags(write=False)
        object.__setattr__(self, "triplets", t)

    @property
    def size(self) -> int:
        return self.triplets.shape[0]


def _pair_data(pi: PrototypeSet, metric: FiniteMetric, spec: DistanceSpec):
    """Unordered-pair distances and costs, plus the index arrays."""
    K = pi.size
    if metric.size != K:
        raise ValueError(f"prototype count {K} does not match metric size {metric.size}")
    iu, ju = np.triu_indices(K, k=1)
    costs = metric.costs[iu, ju]
    if np.any(costs <= 0):
        raise ValueError("cost matrix has a zero or negative off-diagonal entry")
    diff = pi.coords[iu] - pi.coords[ju]
    sq = np.einsum("ij,ij->i", diff, diff)
    d = dist_from_sqnorm(spec, sq)
    return d, sq, costs, iu, ju


def distortion(pi: PrototypeSet, metric: FiniteMetric, spec: DistanceSpec) -> float:
    """Mean over ordered pairs of |d(pi_k, pi_l) - D[k,l]| / D[k,l]."""
    d, _, costs, _, _ = _pair_data(pi, metric, spec)
    K = pi.size
    return float(2.0 * np.sum(np.abs(d - costs) / costs) / (K * (K - 1)))


def _l1_scale(alpha: np.ndarray) -> float:
    """Exact minimizer of f(s) = sum_i |s * alpha_i - 1| over s > 0.

    Sort the ratios ascending (stable, so equal values keep pair order) and
    take s = 1 / alpha_i at the smallest index where the cumulative sum
    reaches half the total; that index is where the subgradient crosses 0.
    """
    if not np.all(np.isfinite(alpha)):
        raise ValueError("non-finite distance/cost ratio")
    order = np.argsort(alpha, kind="stable")
    a = alpha[order]
    total = float(a.sum())
    if total <= 0.0:
        raise DegeneratePrototypesError("degenerate prototypes: all pairwise distances are 0")
    cum = np.cumsum(a)
    i = int(np.argmax(cum >= total - cum))
    return float(1.0 / a[i])


def optimal_scale_l1(pi: PrototypeSet, metric: FiniteMetric, spec: DistanceSpec) -> float:
    """Global minimizer s* of the scaled L1 distortion sum."""
    d, _, costs, _, _ = _pair_data(pi, metric, spec)
    return _l1_scale(d / costs)


def scale_free_distortion(pi: PrototypeSet, metric: FiniteMetric, spec: DistanceSpec) -> float:
    """Distortion with every pairwise distance multiplied by the optimal s*."""
    d, _, costs, _, _ = _pair_data(pi, metric, spec)
    s = _l1_scale(d / costs)
    K = pi.size
    return float(2.0 * np.sum(np.abs(s * d - costs) / costs) / (K * (K - 1)))


def l2_scale(distances: np.ndarray, costs: np.ndarray) -> float:
    """Closed-form minimizer of sum ((s*d - D) / D)^2 over s."""
    distances = np.asarray(distances, dtype=np.float64)
    costs = np.asarray(costs, dtype=np.float64)
    denom = float(np.sum((distances / costs) ** 2))
    if denom <= 0.0:
        raise DegeneratePrototypesError("degenerate prototypes: all pairwise distances are 0")
    return float(np.sum(distances / costs) / denom)


def disto_loss(pi: PrototypeSet, metric: FiniteMetric, spec: DistanceSpec,
               fixed_scale: bool = False):
    """Smooth distortion surrogate with its optimal scale and gradients.

    Returns (value, s_star, grads). The scale is fitted in closed form
    (or pinned to 1 when fixed_scale) and treated as a constant in the
    gradient: the value of the inner minimum is differentiable wherever the
    minimizer is unique, so the partial derivative at s* is the gradient of
    the minimized objective (envelope property).
    """
    d, sq, costs, iu, ju = _pair_data(pi, metric, spec)
    K = pi.size
    s = 1.0 if fixed_scale else l2_scale(d, costs)
    resid = (s * d - costs) / costs
    norm = 2.0 / (K * (K - 1))
    value = float(norm * np.sum(resid * resid))

    dvalue_dd = norm * 2.0 * resid * s / costs
    w = grad_weight_from_sqnorm(spec, sq)
    pair_grad = (dvalue_dd * w)[:, None] * (pi.coords[iu] - pi.coords[ju])
    grads = np.zeros_like(pi.coords)
    np.add.at(grads, iu, pair_grad)
    np.add.at(grads, ju, -pair_grad)
    return value, float(s), grads


def sample_triplets(K: int, S: int, rng: np.random.Generator,
                    exhaustive: bool = False) -> TripletBatch:
    """S ordered distinct triples drawn uniformly with replacement.

    With exhaustive=True, returns all K(K-1)(K-2) ordered triples in
    lexicographic order and ignores S.
    """
    if K < 3:
        raise ValueError("triplet sampling needs at least 3 classes")
    if exhaustive:
        trips = np.array(list(itertools.permutations(range(K), 3)), dtype=np.intp)
        return TripletBatch(trips)
    if S < 1:
        raise ValueError("triplet count must be >= 1")
    k = rng.integers(0, K, size=S)
    l = (k + 1 + rng.integers(0, K - 1, size=S)) % K
    lo = np.minimum(k, l)
    hi = np.maximum(k, l)
    m = rng.integers(0, K - 2, size=S)
    m = m + (m >= lo)
    m = m + (m >= hi)
    return TripletBatch(np.stack([k, l, m], axis=1))


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softplus(t: np.ndarray) -> np.ndarray:
    # log(1 + exp(t)) without overflow
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def rank_loss(pi: PrototypeSet, metric: FiniteMetric, spec: DistanceSpec,
              batch: TripletBatch):
    """Pairwise-ranking regularizer over a triplet batch, with gradients.

    Per triple (k, l, m): the soft ranking R = sigmoid(d(pi_k, pi_l) -
    d(pi_k, pi_m)) is pushed towards the hard cost ranking Rbar, which is 1
    iff D[k,l] > D[k,m] and 0 otherwise (ties give Rbar = 0). Value is the
    mean binary cross-entropy; gradients are analytic.
    """
    if metric.size != pi.size:
        raise ValueError("prototype count does not match metric size")
    t = batch.triplets
    if t.max() >= pi.size:
        raise ValueError("triplet index out of range")
    P = pi.coords
    k, l, m = t[:, 0], t[:, 1], t[:, 2]

    diff_kl = P[k] - P[l]
    diff_km = P[k] - P[m]
    sq_kl = np.einsum("ij,ij->i", diff_kl, diff_kl)
    sq_km = np.einsum("ij,ij->i", diff_km, diff_km)
    gap = dist_from_sqnorm(spec, sq_kl) - dist_from_sqnorm(spec, sq_km)

    rbar = (metric.costs[k, l] > metric.costs[k, m]).astype(np.float64)
    # -[rbar*log(sig) + (1-rbar)*log(1-sig)] in softplus form
    per_triple = rbar * _softplus(-gap) + (1.0 - rbar) * _softplus(gap)
    value = float(per_triple.mean())

    dgap = (_sigmoid(gap) - rbar) / batch.size
    g_kl = (dgap * grad_weight_from_sqnorm(spec, sq_kl))[:, None] * diff_kl
    g_km = (dgap * grad_weight_from_sqnorm(spec, sq_km))[:, None] * diff_km
    grads = np.zeros_like(P)
    np.add.at(grads, k, g_kl - g_km)
    np.add.at(grads, l, -g_kl)
    np.add.at(grads, m, g_km)
    return value, grads


def distortion_report(pi: PrototypeSet, metric: FiniteMetric,
                      spec: DistanceSpec) -> DistortionReport:
    """Bundle the distortion diagnostics used in evaluation output."""
    d, _, costs, _, _ = _pair_data(pi, metric, spec)
    K = pi.size
    s1 = _l1_scale(d / costs)
    plain = float(2.0 * np.sum(np.abs(d - costs) / costs) / (K * (K - 1)))
    scale_free = float(2.0 * np.sum(np.abs(s1 * d - costs) / costs) / (K * (K - 1)))
    return DistortionReport(
        distortion=plain,
        scale_free_distortion=scale_free,
        s_star_l1=s1,
        s_star_l2=l2_scale(d, costs),
        pair_count=K * (K - 1),
    )
