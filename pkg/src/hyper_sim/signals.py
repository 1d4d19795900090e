"""Per-token and pool-level decoding statistics.

Token confidence is the negative mean log-probability of the top-k
alternatives to the selected token (competitors), so higher means more
confident.  Entropy uses the renormalized top-k distribution including the
selected token.  Pool statistics aggregate one snapshot per surviving path:
mean confidence, mean entropy, top-1 consensus, confidence variance, and a
composite diversity built from pairwise distribution divergence and pairwise
normalized edit distance of recent suffixes.

All functions are pure; probabilities are floored at PROB_EPS before logs.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kernels import pairwise_lev_mean
from .kernels.layout import PROB_EPS

_LOG_EPS = math.log(PROB_EPS)


@dataclass(frozen=True)
class TokenTopK:
    """One decoding step's truncated next-token distribution.

    `token_ids`/`probs` hold the stored top-k entries in non-increasing
    probability order; `selected` is the emitted token, which may fall outside
    the stored entries (out-of-top-k).  `k` is the stored truncation width.
    """

    token_ids: tuple = ()
    probs: tuple = ()
    selected: object = None
    k: int = field(default=0)

    def __post_init__(self):
        object.__setattr__(self, "token_ids", tuple(self.token_ids))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if self.k == 0:
            object.__setattr__(self, "k", len(self.token_ids))
        if len(self.token_ids) != len(self.probs):
            raise ValueError("token_ids and probs must have equal length")
        if len(self.probs) != self.k:
            raise ValueError("k must equal the stored entry count")
        for a, b in zip(self.probs, self.probs[1:]):
            if b > a:
                raise ValueError("probs must be sorted non-increasing")
        for p in self.probs:
            if not (0.0 <= p <= 1.0):
                raise ValueError("probs must lie in [0, 1]")


@dataclass(frozen=True)
class PoolSignals:
    """Pool statistics at one decision step; diversity fields are filled
    separately once suffix and distribution diversity are available."""

    mean_conf: float
    mean_entropy: float
    consensus: float
    conf_variance: float
    pool_size: int
    dist_diversity: Optional[float] = None
    seq_diversity: Optional[float] = None
    composite_diversity: Optional[float] = None


def token_confidence(dist: TokenTopK, k: int) -> float:
    """Negative mean log-probability of the top-k alternatives to `selected`.

    The candidate set excludes the selected token; if the selected token is
    outside the stored entries, the stored top-k are the candidates.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    cands = []
    for tid, p in zip(dist.token_ids, dist.probs):
        if tid == dist.selected:
            continue
        cands.append(p)
        if len(cands) == k:
            break
    if len(cands) < k:
        raise ValueError("insufficient candidates")
    s = 0.0
    for p in cands:
        s += math.log(p) if p > PROB_EPS else _LOG_EPS
    return -s / k


def token_entropy(dist: TokenTopK, k: int) -> float:
    """Shannon entropy of the renormalized top-k set including `selected`."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not dist.token_ids:
        raise ValueError("empty distribution")
    n = min(k, len(dist.token_ids))
    ids = list(dist.token_ids[:n])
    ps = list(dist.probs[:n])
    if dist.selected in dist.token_ids and dist.selected not in ids:
        j = dist.token_ids.index(dist.selected)
        ids[-1] = dist.selected
        ps[-1] = dist.probs[j]
    z = sum(ps)
    if z <= 0.0:
        raise ValueError("degenerate distribution: zero total mass")
    h = 0.0
    for p in ps:
        q = p / z
        if q > 0.0:
            h -= q * math.log(q)
    return h


def pool_signals(current_dists: Sequence[TokenTopK], per_path_confidences: Sequence[float],
                 entropy_k: int = 8) -> PoolSignals:
    """Confidence-group statistics over the surviving pool at one step."""
    n = len(current_dists)
    if n == 0 or len(per_path_confidences) == 0:
        raise ValueError("empty pool")
    if len(per_path_confidences) != n:
        raise ValueError("one confidence per path required")
    conf_sum = 0.0
    for c in per_path_confidences:
        conf_sum += c
    mean_conf = conf_sum / n
    ent_sum = 0.0
    for d in current_dists:
        ent_sum += token_entropy(d, entropy_k)
    mean_entropy = ent_sum / n
    votes = Counter(d.selected for d in current_dists)
    consensus = max(votes.values()) / n
    var = 0.0
    for c in per_path_confidences:
        var += (c - mean_conf) ** 2
    var /= n
    return PoolSignals(
        mean_conf=mean_conf,
        mean_entropy=mean_entropy,
        consensus=consensus,
        conf_variance=var,
        pool_size=n,
    )


def jsd(p: Sequence[float], q: Sequence[float]) -> float:
    """Jensen-Shannon divergence in nats; bounded by ln 2."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("mismatched support lengths")
    if abs(float(p.sum()) - 1.0) > 1e-9 or abs(float(q.sum()) - 1.0) > 1e-9:
        raise ValueError("inputs must each sum to 1")
    m = 0.5 * (p + q)
    kl_pm = float(np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0) / np.where(m > 0.0, m, 1.0)), 0.0).sum())
    kl_qm = float(np.where(q > 0.0, q * np.log(np.where(q > 0.0, q, 1.0) / np.where(m > 0.0, m, 1.0)), 0.0).sum())
    return 0.5 * kl_pm + 0.5 * kl_qm


def project_union(dists: Sequence[TokenTopK]) -> np.ndarray:
    """Project each path's stored top-k onto the union support and renormalize.

    Missing tokens get probability 0.  Rows are aligned to the sorted union
    vocabulary; returns an (n_paths, union_size) matrix of distributions.
    """
    union = sorted({tid for d in dists for tid in d.token_ids})
    index = {tid: i for i, tid in enumerate(union)}
    mat = np.zeros((len(dists), len(union)), dtype=np.float64)
    for r, d in enumerate(dists):
        for tid, p in zip(d.token_ids, d.probs):
            mat[r, index[tid]] = p
    sums = mat.sum(axis=1, keepdims=True)
    sums[sums == 0.0] = 1.0
    return mat / sums


def _pairwise_jsd_mean(mat: np.ndarray) -> float:
    """Mean pairwise JSD over rows of a distribution matrix (vectorized)."""
    n = mat.shape[0]
    p = mat[:, None, :]
    q = mat[None, :, :]
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_p = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0) / np.where(m > 0.0, m, 1.0)), 0.0)
        t_q = np.where(q > 0.0, q * np.log(np.where(q > 0.0, q, 1.0) / np.where(m > 0.0, m, 1.0)), 0.0)
    d = 0.5 * t_p.sum(axis=2) + 0.5 * t_q.sum(axis=2)
    iu = np.triu_indices(n, k=1)
    return float(d[iu].mean())


def dist_diversity(dists: Sequence[np.ndarray]) -> float:
    """Mean pairwise JSD over distributions sharing one support."""
    if len(dists) < 2:
        raise ValueError("diversity undefined")
    mat = np.asarray(dists, dtype=np.float64)
    return _pairwise_jsd_mean(mat)


def normalized_levenshtein(s1: Sequence, s2: Sequence) -> float:
    """Edit distance divided by the longer length; two empties give 0."""
    m = max(len(s1), len(s2))
    if m == 0:
        return 0.0
    return _lev(list(s1), list(s2)) / m


def _lev(a, b) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    cur = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, len(b) + 1):
            cost = 0 if ai == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev, cur = cur, prev
    return prev[len(b)]


def seq_diversity(suffixes: Sequence[Sequence[int]]) -> float:
    """Mean pairwise normalized edit distance over path suffixes."""
    n = len(suffixes)
    if n < 2:
        raise ValueError("diversity undefined")
    maxlen = max((len(s) for s in suffixes), default=0)
    seqs = np.zeros((n, max(maxlen, 1)), dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    for i, s in enumerate(suffixes):
        lengths[i] = len(s)
        if len(s):
            seqs[i, : len(s)] = np.asarray(list(s), dtype=np.int64)
    return float(pairwise_lev_mean(seqs, lengths))


def composite_diversity(d_dist: float, d_seq: float, eta: float = 0.4) -> float:
    """Weighted mixture of distribution-level and suffix-level diversity."""
    if not (0.0 <= eta <= 1.0):
        raise ValueError("eta must lie in [0, 1]")
    return eta * d_dist + (1.0 - eta) * d_seq


def global_max_normalize(x: float, x_max: float) -> float:
    """Clamp x / x_max into [0, 1]; a zero maximum saturates positive inputs."""
    if x < 0.0:
        raise ValueError("statistic must be non-negative")
    if x_max <= 0.0:
        return 1.0 if x > 0.0 else 0.0
    r = x / x_max
    return 1.0 if r > 1.0 else r
