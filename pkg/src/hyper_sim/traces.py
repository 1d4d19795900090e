"""Recorded-trace ingestion and export.

A trace file is newline-delimited JSON, one record per decoding step:

    {"path_id": "p0", "step": 0,
     "topk": [["17", -0.03], ["4", -3.9], ...],
     "selected": "17", "answer": "21"}

`topk` holds the step's stored top-k (token, logprob) pairs in non-increasing
logprob order; `selected` is the emitted token; `answer` appears on a path's
final record only.  Tokens are opaque strings.  Steps within a path must be
strictly increasing.

Confidence is recomputable from the stored logprobs exactly as the online
pipeline computes it, so offline replay reproduces online statistics
bit-for-bit.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .signals import TokenTopK, token_confidence
from .voting import AnswerRecord


@dataclass(frozen=True)
class TraceRecord:
    path_id: str
    step: int
    topk: Tuple[Tuple[str, float], ...]
    selected: str
    answer: Optional[str] = None


def _parse_record(obj, lineno: int) -> TraceRecord:
    if not isinstance(obj, dict):
        raise ValueError(f"line {lineno}: record must be a JSON object")
    try:
        path_id = obj["path_id"]
        step = obj["step"]
        topk = obj["topk"]
        selected = obj["selected"]
    except KeyError as e:
        raise ValueError(f"line {lineno}: missing field {e.args[0]!r}") from None
    if not isinstance(path_id, str):
        raise ValueError(f"line {lineno}: path_id must be a string")
    if not isinstance(step, int) or step < 0:
        raise ValueError(f"line {lineno}: step must be a non-negative integer")
    if not isinstance(selected, str):
        raise ValueError(f"line {lineno}: selected must be a string")
    if not isinstance(topk, list) or not topk:
        raise ValueError(f"line {lineno}: topk must be a non-empty array")
    parsed = []
    prev = None
    for ent in topk:
        if (not isinstance(ent, (list, tuple))) or len(ent) != 2 \
                or not isinstance(ent[0], str) or not isinstance(ent[1], (int, float)):
            raise ValueError(f"line {lineno}: topk entries must be [token, logprob] pairs")
        lp = float(ent[1])
        if lp > 0.0:
            raise ValueError(f"line {lineno}: logprob must be <= 0")
        if prev is not None and lp > prev:
            raise ValueError(f"line {lineno}: topk must be sorted by non-increasing logprob")
        prev = lp
        parsed.append((ent[0], lp))
    answer = obj.get("answer")
    if answer is not None and not isinstance(answer, str):
        raise ValueError(f"line {lineno}: answer must be a string when present")
    return TraceRecord(path_id=path_id, step=step, topk=tuple(parsed),
                       selected=selected, answer=answer)


def load_traces(path: str) -> Dict[str, List[TraceRecord]]:
    """Parse and validate a trace file, grouping records by path.

    Raises ValueError with the offending line number on malformed records or
    non-increasing step ordering within a path.
    """
    groups: Dict[str, List[TraceRecord]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"line {lineno}: invalid JSON ({e.msg})") from None
            rec = _parse_record(obj, lineno)
            bucket = groups.setdefault(rec.path_id, [])
            if bucket and rec.step <= bucket[-1].step:
                raise ValueError(f"line {lineno}: step must increase within path {rec.path_id!r}")
            bucket.append(rec)
    return groups


def trace_confidences(records: Sequence[TraceRecord], conf_k: int = 8) -> List[float]:
    """Per-step token confidences recomputed from stored top-k logprobs."""
    out = []
    for rec in records:
        dist = TokenTopK(
            token_ids=[t for t, _ in rec.topk],
            probs=[math.exp(lp) for _, lp in rec.topk],
            selected=rec.selected,
            k=len(rec.topk),
        )
        out.append(token_confidence(dist, min(conf_k, _candidate_count(dist))))
    return out


def _candidate_count(dist: TokenTopK) -> int:
    n = sum(1 for t in dist.token_ids if t != dist.selected)
    return max(n, 1)


def answer_records_from_traces(groups: Dict[str, List[TraceRecord]],
                               conf_k: int = 8) -> List[AnswerRecord]:
    """Voting records for every traced path that reported an answer."""
    out = []
    for path_id in sorted(groups):
        records = groups[path_id]
        answer = records[-1].answer
        if answer is None:
            continue
        confs = trace_confidences(records, conf_k)
        out.append(AnswerRecord(
            answer=answer,
            length=len(records),
            avg_conf=sum(confs) / len(confs),
            origin="survived",
        ))
    return out


def write_traces(path: str, result, problem) -> int:
    """Export a run's recorded per-step snapshots as a trace file.

    Requires the run to have been decoded with record_topk=True.  Returns the
    number of records written.
    """
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for p, rec_ids, rec_probs in _recorded_paths(result):
            length = len(p.tokens)
            for step in range(length):
                ids = rec_ids[step]
                probs = rec_probs[step]
                topk = [[str(int(t)), _logprob(float(q))] for t, q in zip(ids, probs)]
                obj = {
                    "path_id": f"p{p.path_id}",
                    "step": step,
                    "topk": topk,
                    "selected": str(int(p.tokens[step])),
                }
                if step == length - 1 and p.answer is not None:
                    obj["answer"] = str(p.answer)
                fh.write(json.dumps(obj, sort_keys=True) + "\n")
                n += 1
    return n


def _logprob(q: float) -> float:
    if q <= 0.0:
        return math.log(1e-12)
    lp = math.log(q)
    return lp if lp < 0.0 else 0.0


def _recorded_paths(result):
    if getattr(result, "recorded", None) is None:
        raise ValueError("run was not recorded; pass record_topk=True to run_decode")
    for p in result.paths:
        rec = result.recorded.get(p.path_id)
        if rec is None:
            continue
        yield p, rec[0], rec[1]
