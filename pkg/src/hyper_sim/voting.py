"""Answer-time aggregation rules.

Three rules over the answer-producing paths: plain majority,
confidence-weighted, and the length- and confidence-aware rule that first
truncates to the most-supported answers and then scores each candidate by
summing per-path normalized length and confidence contributions.  Length and
confidence normalizers range over every answer-producing path, not just the
candidates; the candidate set only restricts the argmax.

Ties break by count, then summed average confidence, then lexicographic
answer order, so results are reproducible.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Sequence


@dataclass(frozen=True)
class AnswerRecord:
    """One answer-producing path: its answer, length, and mean confidence."""

    answer: str
    length: int
    avg_conf: float
    origin: str = "survived"  # "survived" or "pruned"

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if self.avg_conf < 0.0:
            raise ValueError("avg_conf must be non-negative")
        if self.origin not in ("survived", "pruned"):
            raise ValueError("origin must be 'survived' or 'pruned'")


@dataclass(frozen=True)
class VoteConfig:
    lambda_len: float = 0.6
    lambda_conf: float = 0.4
    k_answers: int = 2

    def __post_init__(self):
        if self.lambda_len < 0.0 or self.lambda_conf < 0.0:
            raise ValueError("vote weights must be non-negative")
        if self.k_answers < 1:
            raise ValueError("k_answers must be >= 1")


def _tallies(records: Sequence[AnswerRecord]):
    counts: Dict[str, int] = defaultdict(int)
    conf_sums: Dict[str, float] = defaultdict(float)
    for r in records:
        counts[r.answer] += 1
        conf_sums[r.answer] += r.avg_conf
    return counts, conf_sums


def topk_candidates(records: Sequence[AnswerRecord], k_answers: int) -> List[str]:
    """The k most frequent answers; ties break by summed confidence, then name."""
    if not records:
        raise ValueError("no answers")
    if k_answers < 1:
        raise ValueError("k_answers must be >= 1")
    counts, conf_sums = _tallies(records)
    ranked = sorted(counts, key=lambda a: (-counts[a], -conf_sums[a], a))
    return ranked[:k_answers]


def majority_vote(records: Sequence[AnswerRecord]) -> str:
    return topk_candidates(records, 1)[0]


def confidence_weighted_vote(records: Sequence[AnswerRecord]) -> str:
    """Answer maximizing the summed average confidence of its supporters."""
    if not records:
        raise ValueError("no answers")
    counts, conf_sums = _tallies(records)
    return sorted(counts, key=lambda a: (-conf_sums[a], -counts[a], a))[0]


def length_confidence_vote(records: Sequence[AnswerRecord], cfg: VoteConfig = VoteConfig()) -> str:
    """Length- and confidence-aware selection among the top-k answers.

    score(a) = sum over supporters p of
        lambda_len * L_p / sum_q L_q + lambda_conf * c_p / max_q c_q
    with normalizers over all records.
    """
    if not records:
        raise ValueError("no answers")
    candidates = topk_candidates(records, cfg.k_answers)
    cand_set = set(candidates)
    total_len = 0.0
    max_conf = 0.0
    for r in records:
        total_len += r.length
        if r.avg_conf > max_conf:
            max_conf = r.avg_conf
    scores: Dict[str, float] = defaultdict(float)
    for r in records:
        if r.answer not in cand_set:
            continue
        term = cfg.lambda_len * (r.length / total_len)
        if max_conf > 0.0:
            term += cfg.lambda_conf * (r.avg_conf / max_conf)
        scores[r.answer] += term
    return sorted(candidates, key=lambda a: (-scores[a], a))[0]


def length_confidence_scores(records: Sequence[AnswerRecord], cfg: VoteConfig = VoteConfig()) -> Dict[str, float]:
    """Per-candidate scores of the length-confidence rule (for reporting)."""
    if not records:
        raise ValueError("no answers")
    candidates = set(topk_candidates(records, cfg.k_answers))
    total_len = sum(r.length for r in records)
    max_conf = max(r.avg_conf for r in records)
    scores: Dict[str, float] = {a: 0.0 for a in candidates}
    for r in records:
        if r.answer not in candidates:
            continue
        term = cfg.lambda_len * (r.length / total_len)
        if max_conf > 0.0:
            term += cfg.lambda_conf * (r.avg_conf / max_conf)
        scores[r.answer] += term
    return scores
