"""Single-token expand-and-aggregate routing.

A token's router logits are expanded into K scored routes (column 0 clean,
the rest Gumbel-perturbed), experts are selected by a two-pass scheme that
penalizes reuse across routes, and the resulting per-route next-token logits
are reduced by confidence-weighted averaging.

The module also carries the two-expert collision analytics: the closed-form
multiplicative downweight f(p, lambda) and its collision probabilities serve
as analytical oracles for the sampling-based simulators, which are kept
independent of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from .kernels.layout import SALT_MC, SALT_RGUMBEL
from .streams import CounterStream, mix64_vec, route_gumbel_offsets, u01_vec


@dataclass(frozen=True)
class RouteMatrix:
    """E x K matrix of router scores; column 0 is the noise-free clean route."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2 or scores.shape[1] < 1:
            raise ValueError("scores must be an E x K matrix with K >= 1")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", scores)

    @property
    def num_experts_E(self) -> int:
        return self.scores.shape[0]

    @property
    def num_routes_K(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class ExpertSelection:
    """Selected experts and gate weights per route (K x m, weights sum to 1)."""

    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        if idx.shape != w.shape or idx.ndim != 2:
            raise ValueError("indices and weights must share a K x m shape")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class RouteProposal:
    """One route's candidate next-token logits and its confidence score."""

    logits: np.ndarray
    confidence: float

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        if self.confidence < 0.0:
            raise ValueError("confidence must be non-negative")
        object.__setattr__(self, "logits", logits)


def gumbel_route_scores(router_logits: Sequence[float], K: int, tau_g: float,
                        stream: CounterStream) -> RouteMatrix:
    """Expand router logits into K route columns: clean plus Gumbel-perturbed.

    Column 0 is the input exactly; columns 1..K-1 add tau_g-scaled Gumbel(0,1)
    noise drawn from the given counter stream.
    """
    r = np.asarray(router_logits, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("router_logits must be a non-empty vector")
    if K < 1:
        raise ValueError("K must be >= 1")
    if tau_g < 0.0:
        raise ValueError("tau_g must be non-negative")
    E = r.size
    scores = np.tile(r[:, None], (1, K))
    if K > 1:
        offs = route_gumbel_offsets(E, np.arange(1, K))
        g = stream.gumbels(SALT_RGUMBEL, offs)  # (K-1, E)
        scores[:, 1:] += tau_g * g.T
    return RouteMatrix(scores)


def _topm_columns(scores: np.ndarray, m: int) -> np.ndarray:
    """Stable top-m row indices per column, ordered by descending score."""
    order = np.argsort(-scores, axis=0, kind="stable")
    return order[:m, :]


def two_pass_expert_sampling(scores: RouteMatrix, gate_size_m: int,
                             lambda_penalty: float) -> ExpertSelection:
    """Select experts per route, penalizing experts already used by prior routes.

    Pass 1 takes the plain top-m per route and records the selected scores in
    a sparse usage matrix.  Each route's penalty is tanh of the column-wise
    prefix sum of earlier routes' usage (route 0 has no history).  Pass 2
    takes the top-m of (scores - lambda * penalty); weights are the softmax
    gate values of the selected entries, renormalized per route.
    """
    if lambda_penalty < 0.0:
        raise ValueError("lambda_penalty must be non-negative")
    S0 = scores.scores
    E, K = S0.shape
    if gate_size_m > E:
        raise ValueError("gate_size_m exceeds expert count")
    if gate_size_m < 1:
        raise ValueError("gate_size_m must be >= 1")

    idx1 = _topm_columns(S0, gate_size_m)  # (m, K)
    usage = np.zeros_like(S0)
    cols = np.arange(K)
    usage[idx1, cols] = S0[idx1, cols]
    prev = np.cumsum(usage, axis=1)
    prev = np.roll(prev, 1, axis=1)
    prev[:, 0] = 0.0
    penalty = np.tanh(prev)
    L2 = S0 - lambda_penalty * penalty
    idx2 = _topm_columns(L2, gate_size_m)  # (m, K)

    shifted = L2 - L2.max(axis=0, keepdims=True)
    expL2 = np.exp(shifted)
    gates = expL2 / expL2.sum(axis=0, keepdims=True)
    w = gates[idx2, cols]
    w = w / w.sum(axis=0, keepdims=True)
    return ExpertSelection(indices=idx2.T.copy(), weights=w.T.copy())


def two_pass_expert_sampling_batch(scores: np.ndarray, gate_size_m: int,
                                   lambda_penalty: float) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized two-pass sampling over a (B, E, K) score stack.

    Returns (indices, weights), each shaped (B, K, m); per-slice results match
    two_pass_expert_sampling exactly.
    """
    if lambda_penalty < 0.0:
        raise ValueError("lambda_penalty must be non-negative")
    S0 = np.asarray(scores, dtype=np.float64)
    B, E, K = S0.shape
    if gate_size_m > E:
        raise ValueError("gate_size_m exceeds expert count")

    order1 = np.argsort(-S0, axis=1, kind="stable")
    idx1 = order1[:, :gate_size_m, :]  # (B, m, K)
    usage = np.zeros_like(S0)
    np.put_along_axis(usage, idx1, np.take_along_axis(S0, idx1, axis=1), axis=1)
    prev = np.cumsum(usage, axis=2)
    prev = np.roll(prev, 1, axis=2)
    prev[:, :, 0] = 0.0
    L2 = S0 - lambda_penalty * np.tanh(prev)
    order2 = np.argsort(-L2, axis=1, kind="stable")
    idx2 = order2[:, :gate_size_m, :]  # (B, m, K)

    shifted = L2 - L2.max(axis=1, keepdims=True)
    expL2 = np.exp(shifted)
    gates = expL2 / expL2.sum(axis=1, keepdims=True)
    w = np.take_along_axis(gates, idx2, axis=1)
    w = w / w.sum(axis=1, keepdims=True)
    return np.transpose(idx2, (0, 2, 1)).copy(), np.transpose(w, (0, 2, 1)).copy()


def aggregate_route_logits(proposals: Sequence[RouteProposal], temp_agg: float = 1.0) -> np.ndarray:
    """Confidence-weighted reduction of route proposals to one logit vector.

    Route weights are softmax(confidence / temp_agg); the output is their
    weighted sum, hence a componentwise convex combination of the inputs.
    """
    if not proposals:
        raise ValueError("at least one proposal required")
    if temp_agg <= 0.0:
        raise ValueError("temp_agg must be positive")
    n = proposals[0].logits.shape[0]
    for p in proposals:
        if p.logits.shape[0] != n:
            raise ValueError("proposal logits length mismatch")
    conf = np.array([p.confidence for p in proposals], dtype=np.float64)
    z = conf / temp_agg
    z -= z.max()
    w = np.exp(z)
    w /= w.sum()
    out = np.zeros(n, dtype=np.float64)
    for wi, p in zip(w, proposals):
        out += wi * p.logits
    return out


def marginal_downweight(p: float, lambda_penalty: float) -> float:
    """Two-expert marginal after multiplicatively downweighting by exp(-lambda)."""
    if not (0.0 < p < 1.0):
        raise ValueError("p must lie in (0, 1)")
    if lambda_penalty < 0.0:
        raise ValueError("lambda_penalty must be non-negative")
    pe = p * math.exp(-lambda_penalty)
    return pe / (pe + (1.0 - p))


class CollisionProbs(NamedTuple):
    roe: float
    ours: float


def collision_probabilities(p1: float, p2: float, lambda_penalty: float) -> CollisionProbs:
    """Closed-form two-route collision rates: independent vs reuse-penalized.

    Independent sampling collides with p1*p2 + (1-p1)*(1-p2); the penalized
    scheme replaces the second route's marginal with the downweighted one and
    is strictly smaller for lambda > 0.
    """
    for p in (p1, p2):
        if not (0.0 < p < 1.0):
            raise ValueError("probabilities must lie in (0, 1)")
    roe = p1 * p2 + (1.0 - p1) * (1.0 - p2)
    ours = p1 * marginal_downweight(p2, lambda_penalty) + (1.0 - p1) * marginal_downweight(1.0 - p2, lambda_penalty)
    return CollisionProbs(roe=roe, ours=ours)


def collision_mc(p1: float, p2: float, lambda_penalty: float, trials: int,
                 stream: CounterStream) -> CollisionProbs:
    """Monte Carlo collision rates for the two-expert process itself.

    Simulates the sampling procedure directly (route 1 from (p1, 1-p1); route
    2 from the penalized marginal given route 1), independently of the closed
    forms, so the two can cross-check each other.
    """
    for p in (p1, p2):
        if not (0.0 < p < 1.0):
            raise ValueError("probabilities must lie in (0, 1)")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    offs = np.arange(trials, dtype=np.uint64)
    u1 = stream.uniforms(SALT_MC, offs)
    u2 = stream.uniforms(SALT_MC, offs + np.uint64(1 << 40))
    e1_is_first = u1 < p1
    # independent baseline
    e2_roe_first = u2 < p2
    roe_rate = float(np.mean(e1_is_first == e2_roe_first))
    # penalized second route
    f2 = marginal_downweight(p2, lambda_penalty)
    f2c = marginal_downweight(1.0 - p2, lambda_penalty)
    p_second_first = np.where(e1_is_first, f2, 1.0 - f2c)
    e2_ours_first = u2 < p_second_first
    ours_rate = float(np.mean(e1_is_first == e2_ours_first))
    return CollisionProbs(roe=roe_rate, ours=ours_rate)


class DistinctExperts(NamedTuple):
    mean_distinct_roe: float
    mean_distinct_ours: float
    diff_mean: float
    diff_se: float


def distinct_expert_simulation(E: int, routes: int, lambda_penalty: float, trials: int,
                               stream: CounterStream, tau_g: float = 0.5,
                               chunk: int = 20000) -> DistinctExperts:
    """Expected distinct experts at m=1: independent routes vs two-pass penalty.

    Each trial draws one random router realization (standard normal logits)
    and one noisy score matrix; both schemes consume the same matrix, so the
    comparison is paired.  Returns the two means plus paired-difference stats.
    """
    if routes < 1:
        raise ValueError("routes must be >= 1")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    sum_roe = 0.0
    sum_ours = 0.0
    sum_d = 0.0
    sum_d2 = 0.0
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        offs = (np.uint64(done) + np.arange(n, dtype=np.uint64))[:, None] * np.uint64(1 << 32) \
            + np.arange(E, dtype=np.uint64)[None, :]
        r = stream.normals(SALT_MC, offs)  # (n, E)
        scores = np.repeat(r[:, :, None], routes, axis=2)
        if routes > 1:
            goffs = offs[:, None, :] + (np.uint64(1) << np.uint64(48)) \
                + np.arange(1, routes, dtype=np.uint64)[None, :, None] * np.uint64(1 << 16)
            g = -np.log(-np.log(u01_vec(mix64_vec(np.uint64(stream.base(SALT_MC)), goffs))))
            scores[:, :, 1:] += tau_g * np.transpose(g, (0, 2, 1))
        idx2, _ = two_pass_expert_sampling_batch(scores, 1, lambda_penalty)
        idx1 = np.argmax(scores, axis=1)  # (n, K): plain noisy top-1 per route
        d_roe = _count_distinct(idx1)
        d_ours = _count_distinct(idx2[:, :, 0])
        diff = d_ours - d_roe
        sum_roe += float(d_roe.sum())
        sum_ours += float(d_ours.sum())
        sum_d += float(diff.sum())
        sum_d2 += float((diff * diff).sum())
        done += n
    mean_roe = sum_roe / trials
    mean_ours = sum_ours / trials
    dm = sum_d / trials
    var_d = max(sum_d2 / trials - dm * dm, 0.0)
    se = math.sqrt(var_d / trials)
    return DistinctExperts(mean_roe, mean_ours, dm, se)


def _count_distinct(idx: np.ndarray) -> np.ndarray:
    s = np.sort(idx, axis=1)
    return 1.0 + (np.diff(s, axis=1) != 0).sum(axis=1).astype(np.float64)
