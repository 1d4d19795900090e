"""Executable closed forms for the existence-selection analysis.

Covers the two-answer toy vote (existence probability vs majority-vote
accuracy), the frequency-estimator variance, and the proxy importance-
sampling view of the length-confidence voting rule, including a Monte Carlo
check that ranking by exponential proxy mass agrees with ranking by the
linearized score when the weights are mild.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .kernels.layout import SALT_MC
from .streams import CounterStream


@dataclass(frozen=True)
class ToyVoteParams:
    """Two-answer vote: each of N paths is correct independently w.p. q."""

    q: float
    N: int

    def __post_init__(self):
        if not (0.0 < self.q < 1.0):
            raise ValueError("q must lie in (0, 1)")
        if self.N < 1:
            raise ValueError("N must be >= 1")


def p_exist(q: float, N: int) -> float:
    """Probability that at least one of N paths is correct: 1 - (1-q)^N."""
    ToyVoteParams(q, N)
    return 1.0 - (1.0 - q) ** N


def p_acc_majority(q: float, N: int) -> float:
    """Majority-vote accuracy for odd N: the binomial tail above N/2.

    Summed in the log domain with lgamma-based binomial coefficients, exact
    to double precision at desk scale.
    """
    ToyVoteParams(q, N)
    if N % 2 == 0:
        raise ValueError("closed form requires odd N")
    lo = (N + 1) // 2
    lq = math.log(q)
    l1q = math.log(1.0 - q)
    total = 0.0
    for k in range(lo, N + 1):
        lc = math.lgamma(N + 1) - math.lgamma(k + 1) - math.lgamma(N - k + 1)
        total += math.exp(lc + k * lq + (N - k) * l1q)
    return total


def toy_vote_mc(q: float, N: int, trials: int, stream: CounterStream) -> Tuple[float, float]:
    """Monte Carlo (p_exist, p_acc) estimates for the two-answer toy vote."""
    ToyVoteParams(q, N)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    offs = np.arange(trials * N, dtype=np.uint64).reshape(trials, N)
    correct = stream.uniforms(SALT_MC, offs) < q
    n_correct = correct.sum(axis=1)
    exist = float(np.mean(n_correct >= 1))
    acc = float(np.mean(2 * n_correct > N))
    return exist, acc


def freq_estimator_stats(p_a: float, N: int) -> Tuple[float, float]:
    """(variance, relative stddev) of the support-frequency estimator."""
    if not (0.0 <= p_a <= 1.0):
        raise ValueError("p_a must lie in [0, 1]")
    if N < 1:
        raise ValueError("N must be >= 1")
    var = p_a * (1.0 - p_a) / N
    if p_a == 0.0:
        raise ValueError("degenerate support: relative error undefined at p_a = 0")
    rel = math.sqrt((1.0 - p_a) / (N * p_a))
    return var, rel


@dataclass(frozen=True)
class ProxyISRecord:
    """One path's answer with normalized (length, confidence) features."""

    answer: str
    norm_length: float
    norm_conf: float

    def __post_init__(self):
        if self.norm_length < 0.0:
            raise ValueError("norm_length must be non-negative")
        if not (0.0 <= self.norm_conf <= 1.0):
            raise ValueError("norm_conf must lie in [0, 1]")

    @property
    def features(self) -> Tuple[float, float]:
        return (self.norm_length, self.norm_conf)


def proxy_is_mass(records: Sequence[ProxyISRecord], theta: Sequence[float]) -> Dict[str, float]:
    """Unnormalized per-answer mass: sum of exp(theta . features) over supporters."""
    if not records:
        raise ValueError("no answers")
    th = (float(theta[0]), float(theta[1]))
    masses: Dict[str, float] = {}
    for r in records:
        w = math.exp(th[0] * r.norm_length + th[1] * r.norm_conf)
        masses[r.answer] = masses.get(r.answer, 0.0) + w
    return masses


def snis_marginal(records: Sequence[ProxyISRecord], theta: Sequence[float] = (0.0, 0.0)) -> Dict[str, float]:
    """Self-normalized per-answer probabilities; sums to 1 over answers."""
    masses = proxy_is_mass(records, theta)
    z = sum(masses.values())
    return {a: m / z for a, m in masses.items()}


def linear_proxy_score(records: Sequence[ProxyISRecord], theta: Sequence[float]) -> Dict[str, float]:
    """Per-answer linearized score: sum of theta . features over supporters."""
    if not records:
        raise ValueError("no answers")
    th = (float(theta[0]), float(theta[1]))
    scores: Dict[str, float] = {}
    for r in records:
        s = th[0] * r.norm_length + th[1] * r.norm_conf
        scores[r.answer] = scores.get(r.answer, 0.0) + s
    return scores


def _argmax_answer(scores: Dict[str, float]) -> str:
    return sorted(scores, key=lambda a: (-scores[a], a))[0]


def linearization_agreement(epsilon_bound: float, trials: int, stream: CounterStream,
                            answers: int = 2, per_answer: int = 4,
                            feature_jitter: float = 0.1) -> float:
    """Fraction of random equal-support pools where exponential proxy-mass
    ranking agrees with the linearized ranking.

    Pools give each answer the same support count; per-answer base features
    are uniform in [0, 1]^2 with per-record jitter, and theta is scaled so
    |theta . features| <= epsilon_bound for every record.  Agreement tends to
    1 as the bound shrinks; at 0 both rankings tie and break identically.
    """
    if epsilon_bound < 0.0:
        raise ValueError("epsilon_bound must be non-negative")
    if trials < 1 or answers < 1 or per_answer < 1:
        raise ValueError("trials, answers, per_answer must be >= 1")
    n = answers * per_answer
    agree = 0
    names = [f"a{j}" for j in range(answers)]
    for t in range(trials):
        sub = CounterStream(stream.seed, stream.path_id, stream.step + 1 + t)
        base = sub.uniforms(SALT_MC, np.arange(2 * answers, dtype=np.uint64)).reshape(answers, 2)
        jit = sub.uniforms(SALT_MC, 100 + np.arange(2 * n, dtype=np.uint64)).reshape(n, 2)
        raw_theta = sub.uniforms(SALT_MC, np.uint64(300) + np.arange(2, dtype=np.uint64))
        feats = np.empty((n, 2))
        for j in range(answers):
            rows = slice(j * per_answer, (j + 1) * per_answer)
            feats[rows] = base[j][None, :] + feature_jitter * (jit[rows] - 0.5)
        feats = np.clip(feats, 0.0, 1.0)
        # scale theta so |theta . phi| <= epsilon over this pool
        theta = raw_theta + 0.25  # keep both components positive
        bound = float(np.abs(feats @ theta).max())
        scale = 0.0 if epsilon_bound == 0.0 else (epsilon_bound / bound if bound > 0 else 0.0)
        theta = tuple(theta * scale)
        records = [
            ProxyISRecord(answer=names[i // per_answer],
                          norm_length=float(feats[i, 0]), norm_conf=float(feats[i, 1]))
            for i in range(n)
        ]
        a_mass = _argmax_answer(proxy_is_mass(records, theta))
        a_lin = _argmax_answer(linear_proxy_score(records, theta))
        agree += a_mass == a_lin
    return agree / trials
