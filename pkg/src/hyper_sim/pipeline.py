"""Decoding pipeline: warm-up, always-on pruning, interval actions, accounting.

A run decodes a pool of hypothesis paths against the synthetic policy.  The
warm-up phase decodes full unpruned traces to estimate the sliding-window
pruning threshold (the loosest bound every top-ranked trace satisfies) and
the warm-up maxima used to normalize controller signals.  The main loop then
queries the controller at steps t with t mod T == 1 and applies the chosen
action for that interval; confidence pruning runs after every decoded token,
including inside multi-token child blocks.

Budget accounting is strict: every decoded token charges one effective token,
single-token aggregation steps charge K per path per step, and the action log
records per-step live counts so the ledger can be recomputed exactly from it.
KV memory is tracked in abstract units (sum of live path lengths, one cache
per live path, never scaled by K); the ledger keeps the running peak, sampled
at decision boundaries and pool expansions.

Everything is a pure function of (problem, configs, seed): per-path random
streams are counter-based, so results do not depend on worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import signals as sig
from .controller import (
    Action,
    ControllerConfig,
    WarmupMaxima,
    expansion_factor,
    normalize_signals,
    score_actions,
    select_action,
)
from .kernels import decode_span, mix64, router_fill, selection_logits, u01
from .kernels.layout import (
    PROB_EPS,
    SALT_SAMPLE,
    STOP_COMPLETED,
    STOP_DEPTH,
    STOP_PRUNED,
)
from .routing import RouteProposal, aggregate_route_logits, two_pass_expert_sampling_batch
from .streams import route_noise_block
from .toymodel import ProblemInstance, extract_answer, probe_distribution
from .voting import AnswerRecord, VoteConfig, confidence_weighted_vote, length_confidence_vote, majority_vote

METHODS = ("sc", "prune_only", "single_only", "multi_only", "manual_schedule", "hyper", "hyper_no_single")

# Methods that aggregate with the length-confidence rule by default; the
# plain baselines vote by majority.
_LC_METHODS = {"single_only", "multi_only", "manual_schedule", "hyper", "hyper_no_single"}

_NEG_INF = float("-inf")


@dataclass
class PruneConfig:
    n_init: int = 16
    window: int = 128
    top_traces: int = 10
    s_max: int = 80
    t_max: Optional[int] = None

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.top_traces > self.n_init:
            raise ValueError("top_traces cannot exceed n_init")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        if self.s_max < 1:
            raise ValueError("s_max must be >= 1")


@dataclass
class BudgetLedger:
    """Monotone run counters; kv_memory_units is the running peak."""

    effective_tokens: int = 0
    instantiated_paths: int = 0
    transient_children: int = 0
    kv_memory_units: int = 0
    decode_steps: int = 0

    def sample_kv(self, units: int) -> None:
        if units > self.kv_memory_units:
            self.kv_memory_units = units


@dataclass(frozen=True)
class PathState:
    """Immutable snapshot of one hypothesis path."""

    path_id: int
    tokens: Tuple[int, ...]
    per_token_conf: Tuple[float, ...]
    status: str  # live, pruned, completed
    answer: Optional[int]
    parent: Optional[int]
    origin: str  # warmup, initial, branch


@dataclass(frozen=True)
class Decision:
    index: int
    t: int
    action: str
    expansion: int
    pool_before: int
    live_counts: Tuple[int, ...]
    children_created: int
    charge: int
    scores: Optional[Dict[str, float]] = None
    signals: Optional[Dict[str, float]] = None


@dataclass(frozen=True)
class DecodeResult:
    method: str
    seed: int
    paths: Tuple[PathState, ...]
    ledger: BudgetLedger
    decisions: Tuple[Decision, ...]
    tau_prune: float
    warmup_maxima: Optional[WarmupMaxima]
    warmup_trace_lengths: Tuple[int, ...]
    problem_summary: Dict[str, object]
    config_snapshot: Dict[str, object]
    recorded: Optional[Dict[int, Tuple[np.ndarray, np.ndarray]]] = None


class _Path:
    """Mutable per-path decode state; snapshots are taken at run end."""

    __slots__ = ("path_id", "parent", "origin", "tokens", "confs", "length",
                 "status", "answer", "rec_ids", "rec_probs")

    def __init__(self, path_id: int, capacity: int, parent: Optional[int] = None,
                 origin: str = "initial", record_topk: bool = False, k_store: int = 0):
        self.path_id = path_id
        self.parent = parent
        self.origin = origin
        self.tokens = np.zeros(capacity, dtype=np.int64)
        self.confs = np.zeros(capacity, dtype=np.float64)
        self.length = 0
        self.status = "live"
        self.answer: Optional[int] = None
        if record_topk:
            self.rec_ids = np.zeros((capacity, k_store), dtype=np.int64)
            self.rec_probs = np.zeros((capacity, k_store), dtype=np.float64)
        else:
            self.rec_ids = None
            self.rec_probs = None

    def fork(self, new_id: int, record_topk: bool = False, k_store: int = 0) -> "_Path":
        child = _Path(new_id, self.tokens.shape[0], parent=self.path_id,
                      origin="branch", record_topk=record_topk, k_store=k_store)
        child.tokens[: self.length] = self.tokens[: self.length]
        child.confs[: self.length] = self.confs[: self.length]
        child.length = self.length
        if record_topk and self.rec_ids is not None:
            child.rec_ids[: self.length] = self.rec_ids[: self.length]
            child.rec_probs[: self.length] = self.rec_probs[: self.length]
        return child

    def snapshot(self) -> PathState:
        return PathState(
            path_id=self.path_id,
            tokens=tuple(int(t) for t in self.tokens[: self.length]),
            per_token_conf=tuple(float(c) for c in self.confs[: self.length]),
            status=self.status,
            answer=self.answer,
            parent=self.parent,
            origin=self.origin,
        )


def sliding_window_confidence(path, window: int) -> float:
    """Mean of the last min(window, length) per-token confidences."""
    confs = getattr(path, "per_token_conf", None)
    if confs is None:
        confs = path.confs[: path.length]
    n = len(confs)
    if n == 0:
        raise ValueError("path has no tokens")
    w = min(window, n)
    s = 0.0
    for c in confs[n - w:]:
        s += float(c)
    return s / w


def kv_memory_units(pool: Sequence) -> int:
    """Instantaneous KV units: summed prefix length over live paths."""
    total = 0
    for p in pool:
        if getattr(p, "status", "live") == "live":
            total += int(getattr(p, "length", len(getattr(p, "tokens", ()))))
    return total


def _finish_if_answered(path: _Path, delimiter: int) -> None:
    l = path.length
    if l >= 2 and int(path.tokens[l - 2]) == delimiter:
        path.status = "completed"
        path.answer = int(path.tokens[l - 1])


def prune_step(pool: Sequence[_Path], tau_prune: float, window: int,
               delimiter: Optional[int] = None) -> List[int]:
    """Apply completion and threshold transitions to every live path.

    Returns the ids of newly pruned paths.  Completion wins over pruning: a
    path whose latest token finishes an answer is completed, not pruned.
    """
    pruned: List[int] = []
    for p in pool:
        if p.status != "live" or p.length == 0:
            continue
        if delimiter is not None:
            _finish_if_answered(p, delimiter)
            if p.status != "live":
                continue
        if tau_prune > _NEG_INF and sliding_window_confidence(p, window) < tau_prune:
            p.status = "pruned"
            pruned.append(p.path_id)
    return pruned


@dataclass
class StepContext:
    """Per-run invariants threaded through the step operators."""

    problem: ProblemInstance
    run_seed: int
    tau_prune: float
    window: int
    executor: Optional[ThreadPoolExecutor] = None
    record_topk: bool = False


def _span_one(ctx: StepContext, path: _Path, t0: int, span: int, tau: float) -> Tuple[int, int]:
    if path.rec_ids is not None:
        rec_i = path.rec_ids[path.length: path.length + span]
        rec_p = path.rec_probs[path.length: path.length + span]
        record = 1
    else:
        rec_i = _DUMMY_I
        rec_p = _DUMMY_F
        record = 0
    steps, stop, new_len = decode_span(
        *ctx.problem.kernel_args, ctx.run_seed, path.path_id,
        path.tokens, path.confs, path.length, t0, span, tau, ctx.window,
        rec_i, rec_p, record,
    )
    path.length = new_len
    if stop == STOP_COMPLETED:
        path.status = "completed"
        path.answer = int(path.tokens[new_len - 1])
    elif stop == STOP_PRUNED:
        path.status = "pruned"
    elif stop == STOP_DEPTH:
        path.status = "completed"
    return steps, stop


_DUMMY_I = np.zeros((1, 1), dtype=np.int64)
_DUMMY_F = np.zeros((1, 1), dtype=np.float64)


def _run_spans(ctx: StepContext, paths: List[_Path], t0: int, span: int, tau: float) -> List[int]:
    """Decode a standard span for each path; returns per-path step counts."""
    if ctx.executor is not None and len(paths) > 1:
        futures = [ctx.executor.submit(_span_one, ctx, p, t0, span, tau) for p in paths]
        return [f.result()[0] for f in futures]
    return [_span_one(ctx, p, t0, span, tau)[0] for p in paths]


def _live(pool: Sequence[_Path]) -> List[_Path]:
    return [p for p in pool if p.status == "live"]


def _live_counts_from_steps(steps: Sequence[int], span: int) -> List[int]:
    counts = [0] * span
    for s in steps:
        for i in range(s):
            counts[i] += 1
    return counts


def apply_none(pool: Sequence[_Path], model: ProblemInstance, ledger: BudgetLedger,
               ctx: StepContext, t: int) -> int:
    """One standard-routing token for every live path; returns the charge."""
    live = _live(pool)
    if not live:
        return 0
    _run_spans(ctx, live, t, 1, _NEG_INF)
    charge = len(live)
    ledger.effective_tokens += charge
    return charge


def apply_single_token(pool: Sequence[_Path], model: ProblemInstance, K: int,
                       ledger: BudgetLedger, ctx: StepContext, t: int,
                       tau_gumbel: float = 0.5, lambda_penalty: float = 0.1,
                       temp_agg: float = 1.0) -> int:
    """One aggregated token per live path from K expert-routed proposals.

    Builds each path's route matrix (clean column plus Gumbel-perturbed ones),
    runs the reuse-penalized two-pass selection, scores every route's
    next-token proposal by its confidence, and samples from the
    confidence-weighted mixture.  Charges K effective tokens per path.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    live = _live(pool)
    if not live:
        return 0
    prob = ctx.problem
    cfg = prob.cfg
    n = len(live)
    E = cfg.num_experts_E
    V = cfg.vocab_size

    routers = np.zeros((n, E), dtype=np.float64)
    for i, p in enumerate(live):
        router_fill(prob.iparams, prob.fparams, p.tokens, p.length, routers[i])

    scores = np.repeat(routers[:, :, None], K, axis=2)
    if K > 1:
        noise = route_noise_block(ctx.run_seed, [p.path_id for p in live], t, E, K)
        scores[:, :, 1:] += tau_gumbel * noise
    sel_idx, sel_w = two_pass_expert_sampling_batch(scores, cfg.gate_size_m, lambda_penalty)

    logits = np.zeros((n, K, V), dtype=np.float64)
    for i, p in enumerate(live):
        for k in range(K):
            selection_logits(prob.iparams, prob.fparams, prob.expert_offsets,
                             prob.expert_alpha, prob.branch_base, p.tokens, p.length,
                             sel_idx[i, k], sel_w[i, k], logits[i, k])

    # route confidences from each proposal's own distribution
    z = logits - logits.max(axis=2, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=2, keepdims=True)
    route_conf = _batched_argmax_confidence(probs, cfg.conf_k)

    delim = cfg.delimiter
    for i, p in enumerate(live):
        proposals = [RouteProposal(logits=logits[i, k], confidence=float(route_conf[i, k]))
                     for k in range(K)]
        agg = aggregate_route_logits(proposals, temp_agg)
        ap = _softmax_1d(agg)
        h = mix64(SALT_SAMPLE, ctx.run_seed)
        h = mix64(h, p.path_id)
        h = mix64(h, t)
        u = u01(h)
        y = _inv_cdf(ap, u)
        topk = _topk_snapshot(ap, cfg.k_store)
        conf = sig.token_confidence(
            sig.TokenTopK(token_ids=topk[0], probs=topk[1], selected=y, k=cfg.k_store),
            cfg.conf_k,
        )
        l = p.length
        p.tokens[l] = y
        p.confs[l] = conf
        if p.rec_ids is not None:
            p.rec_ids[l] = np.asarray(topk[0], dtype=np.int64)
            p.rec_probs[l] = np.asarray(topk[1], dtype=np.float64)
        p.length = l + 1
        _finish_if_answered(p, delim)
    charge = K * n
    ledger.effective_tokens += charge
    return charge


def _batched_argmax_confidence(probs: np.ndarray, conf_k: int) -> np.ndarray:
    """Confidence of each route's would-be (argmax) token, vectorized.

    The argmax token is rank 0, so the candidates are ranks 1..conf_k.
    """
    order = np.argsort(-probs, axis=-1, kind="stable")
    sorted_p = np.take_along_axis(probs, order, axis=-1)
    cand = np.maximum(sorted_p[..., 1:conf_k + 1], PROB_EPS)
    return -np.log(cand).mean(axis=-1)


def _softmax_1d(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    p = np.exp(z)
    return p / p.sum()


def _inv_cdf(probs: np.ndarray, u: float) -> int:
    cum = 0.0
    for v in range(probs.shape[0]):
        cum += float(probs[v])
        if u < cum:
            return v
    return probs.shape[0] - 1


def _topk_snapshot(probs: np.ndarray, k: int) -> Tuple[List[int], List[float]]:
    order = np.argsort(-probs, kind="stable")[:k]
    return [int(i) for i in order], [float(probs[i]) for i in order]


def apply_branch(pool: List[_Path], r_t: int, s_max: int, ledger: BudgetLedger,
                 id_counter: List[int], record_topk: bool = False, k_store: int = 0) -> int:
    """Fork every live path into r_t children, capped at s_max live paths.

    Parents continue as one child each; excess prospective forks are dropped
    in ascending parent id order.  Returns the number of children created.
    """
    if r_t < 1:
        raise ValueError("r_t must be >= 1")
    live = sorted(_live(pool), key=lambda p: p.path_id)
    if r_t == 1 or not live:
        return 0
    prospective = [(parent, j) for parent in live for j in range(r_t - 1)]
    room = max(s_max - len(live), 0)
    n_drop = max(len(prospective) - room, 0)
    kept = prospective[n_drop:]
    created = 0
    for parent, _j in kept:
        child = parent.fork(id_counter[0], record_topk=record_topk, k_store=k_store)
        id_counter[0] += 1
        pool.append(child)
        created += 1
    ledger.instantiated_paths += created
    return created


def apply_multi_token(pool: Sequence[_Path], r_t: int, m: int, model: ProblemInstance,
                      ledger: BudgetLedger, ctx: StepContext, t: int,
                      id_counter: List[int]) -> Tuple[int, List[int]]:
    """Short-horizon expand-and-reduce: r_t children per root for m steps.

    Children decode independently with always-on pruning; per root, the
    non-pruned child with the highest mean confidence over its decoded block
    survives and merges back, the rest are discarded and their caches
    released.  Returns (charge, per-step live child counts).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    roots = sorted(_live(pool), key=lambda p: p.path_id)
    if not roots:
        return 0, []
    groups = []
    for root in roots:
        cands = [root]
        for _ in range(r_t - 1):
            child = root.fork(id_counter[0], record_topk=ctx.record_topk,
                              k_store=model.cfg.k_store)
            id_counter[0] += 1
            cands.append(child)
        ledger.instantiated_paths += r_t - 1
        ledger.transient_children += r_t - 1
        groups.append((root, cands))
    all_cands = [c for _, cands in groups for c in cands]
    ledger.sample_kv(kv_memory_units(all_cands))

    steps = _run_spans(ctx, all_cands, t, m, ctx.tau_prune)
    decoded = {id(c): s for c, s in zip(all_cands, steps)}
    live_counts = _live_counts_from_steps(steps, m)
    charge = sum(steps)
    ledger.effective_tokens += charge
    ledger.sample_kv(kv_memory_units(all_cands))

    for root, cands in groups:
        # survivor: highest mean confidence over the decoded block, pruned
        # candidates ineligible; ties go to the earliest candidate (the root)
        best = None
        best_mean = _NEG_INF
        for c in cands:
            if c.status == "pruned":
                continue
            n_dec = decoded[id(c)]
            if n_dec <= 0:
                continue
            s = 0.0
            for j in range(c.length - n_dec, c.length):
                s += float(c.confs[j])
            mean = s / n_dec
            if mean > best_mean:
                best_mean = mean
                best = c
        if best is None:
            # every candidate was pruned (the root is one of them) or nothing
            # decoded; the root's own status already reflects that
            continue
        if best is not root:
            root.tokens[:best.length] = best.tokens[:best.length]
            root.confs[:best.length] = best.confs[:best.length]
            if ctx.record_topk and root.rec_ids is not None:
                root.rec_ids[:best.length] = best.rec_ids[:best.length]
                root.rec_probs[:best.length] = best.rec_probs[:best.length]
            root.length = best.length
            root.status = best.status
            root.answer = best.answer
    return charge, live_counts


def warmup(model: ProblemInstance, prune_cfg: PruneConfig, controller_cfg: ControllerConfig,
           ctx: StepContext, ledger: BudgetLedger, id_counter: List[int]
           ) -> Tuple[List[_Path], float, WarmupMaxima]:
    """Decode n_init full unpruned traces; estimate tau and signal maxima.

    Traces are ranked by mean token confidence; the pruning threshold is the
    minimum, over the top-ranked traces, of each trace's minimum sliding-
    window confidence, i.e. the loosest bound all of them satisfy everywhere.
    """
    cfg = model.cfg
    traces: List[_Path] = []
    for _ in range(prune_cfg.n_init):
        p = _Path(id_counter[0], cfg.max_depth, origin="warmup",
                  record_topk=ctx.record_topk, k_store=cfg.k_store)
        id_counter[0] += 1
        traces.append(p)
    ledger.instantiated_paths += prune_cfg.n_init
    ledger.sample_kv(kv_memory_units(traces))

    samples = {"conf": [], "entropy": [], "diversity": [], "conf_variance": []}
    t = 1
    T = controller_cfg.interval_T
    while True:
        live = _live(traces)
        if not live:
            break
        if len(live) >= 2:
            pool_sig = _probe_pool(model, live, controller_cfg)
            samples["conf"].append(pool_sig.mean_conf)
            samples["entropy"].append(pool_sig.mean_entropy)
            samples["diversity"].append(pool_sig.composite_diversity)
            samples["conf_variance"].append(pool_sig.conf_variance)
        steps = _run_spans(ctx, live, t, T, _NEG_INF)
        ledger.effective_tokens += sum(steps)
        t += T
        ledger.sample_kv(kv_memory_units(traces))

    for p in traces:
        p.answer = extract_answer(p.tokens[: p.length], cfg.delimiter)
        p.status = "completed"

    ranked = sorted(traces, key=lambda p: (-_mean_conf(p), p.path_id))
    top = ranked[: prune_cfg.top_traces]
    tau = min(_min_window_conf(p, prune_cfg.window) for p in top)

    maxima = WarmupMaxima(
        conf=max(samples["conf"]) if samples["conf"] else 0.0,
        entropy=max(samples["entropy"]) if samples["entropy"] else 0.0,
        diversity=max(samples["diversity"]) if samples["diversity"] else 0.0,
        conf_variance=max(samples["conf_variance"]) if samples["conf_variance"] else 0.0,
    )
    return traces, tau, maxima


def _mean_conf(p: _Path) -> float:
    if p.length == 0:
        return 0.0
    s = 0.0
    for j in range(p.length):
        s += float(p.confs[j])
    return s / p.length


def _min_window_conf(p: _Path, window: int) -> float:
    best = float("inf")
    s = 0.0
    confs = p.confs
    for i in range(p.length):
        s += float(confs[i])
        if i >= window:
            s -= float(confs[i - window])
        w = min(i + 1, window)
        m = s / w
        if m < best:
            best = m
    return best


def _probe_pool(model: ProblemInstance, live: List[_Path], controller_cfg: ControllerConfig) -> sig.PoolSignals:
    """Pool signals from per-path clean next-token probes at a decision step."""
    cfg = model.cfg
    dists = [probe_distribution(model, p.tokens, p.length) for p in live]
    confs = [sig.token_confidence(d, cfg.conf_k) for d in dists]
    pool = sig.pool_signals(dists, confs, entropy_k=cfg.conf_k)
    if len(live) >= 2:
        mat = sig.project_union(dists)
        d_dist = sig._pairwise_jsd_mean(mat)
        L = controller_cfg.interval_T
        suffixes = [[int(x) for x in p.tokens[max(0, p.length - L): p.length]] for p in live]
        d_seq = sig.seq_diversity(suffixes)
    else:
        d_dist = 0.0
        d_seq = 0.0
    d_comp = sig.composite_diversity(d_dist, d_seq, controller_cfg.eta)
    return replace(pool, dist_diversity=d_dist, seq_diversity=d_seq, composite_diversity=d_comp)


def _forced_action(method: str, decision_index: int, n_decisions: int) -> Optional[Action]:
    if method in ("sc", "prune_only"):
        return Action.NONE
    if method == "single_only":
        return Action.SINGLE_TOKEN
    if method == "multi_only":
        return Action.MULTI_TOKEN
    if method == "manual_schedule":
        half = (n_decisions + 1) // 2
        return Action.MULTI_TOKEN if decision_index < half else Action.SINGLE_TOKEN
    return None


def run_decode(problem: ProblemInstance, controller_cfg: ControllerConfig,
               prune_cfg: PruneConfig, seed: int, method: str = "hyper",
               workers: int = 1, record_topk: bool = False,
               tau_gumbel: float = 0.5, lambda_penalty: float = 0.1,
               temp_agg: float = 1.0) -> DecodeResult:
    """Execute one full decode run; deterministic in (problem, configs, seed)."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    cfg = problem.cfg
    t_max = prune_cfg.t_max if prune_cfg.t_max is not None else cfg.max_depth
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    if controller_cfg.target_width_W > prune_cfg.s_max:
        raise ValueError("target_width_W exceeds the pool cap s_max")

    ledger = BudgetLedger()
    id_counter = [0]
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    ctx = StepContext(problem=problem, run_seed=seed, tau_prune=_NEG_INF,
                      window=prune_cfg.window, executor=executor, record_topk=record_topk)
    try:
        warmup_paths: List[_Path] = []
        tau = _NEG_INF
        maxima: Optional[WarmupMaxima] = None
        if method != "sc":
            warmup_paths, tau, maxima = warmup(problem, prune_cfg, controller_cfg, ctx, ledger, id_counter)
            ctx.tau_prune = tau

        pool: List[_Path] = []
        for _ in range(controller_cfg.target_width_W):
            pool.append(_Path(id_counter[0], cfg.max_depth, origin="initial",
                              record_topk=record_topk, k_store=cfg.k_store))
            id_counter[0] += 1
        ledger.instantiated_paths += controller_cfg.target_width_W
        ledger.sample_kv(kv_memory_units(warmup_paths) + kv_memory_units(pool))

        decisions: List[Decision] = []
        T = controller_cfg.interval_T
        n_decisions = -(-t_max // T)
        t = 1
        decision_index = 0
        while t <= t_max:
            live = _live(pool)
            if not live:
                break
            span = min(T, t_max - t + 1)
            forced = _forced_action(method, decision_index, n_decisions)
            scores_log = None
            signals_log = None
            if forced is None:
                pool_sig = _probe_pool(problem, live, controller_cfg)
                vec = normalize_signals(pool_sig, maxima)
                scores = score_actions(vec)
                enable = controller_cfg.enable_single_token and method != "hyper_no_single"
                eff_cfg = controller_cfg if enable == controller_cfg.enable_single_token else replace(
                    controller_cfg, enable_single_token=enable)
                action = select_action(scores, eff_cfg)
                scores_log = {a.value: scores[a] for a in scores}
                signals_log = {
                    "c_hat": vec.c_hat, "h_hat": vec.h_hat, "beta": vec.beta,
                    "d_hat": vec.d_hat, "var_hat": vec.var_hat,
                    "mean_conf": pool_sig.mean_conf, "mean_entropy": pool_sig.mean_entropy,
                    "conf_variance": pool_sig.conf_variance,
                    "dist_diversity": pool_sig.dist_diversity,
                    "seq_diversity": pool_sig.seq_diversity,
                    "composite_diversity": pool_sig.composite_diversity,
                    "pool_size": float(pool_sig.pool_size),
                }
            else:
                action = forced

            r_t = expansion_factor(controller_cfg.target_width_W, len(live))
            pool_before = len(live)
            children_created = 0
            ledger.sample_kv(kv_memory_units(warmup_paths) + kv_memory_units(pool))

            if action is Action.NONE:
                steps = _run_spans(ctx, live, t, span, ctx.tau_prune)
                live_counts = _live_counts_from_steps(steps, span)
                charge = sum(steps)
                ledger.effective_tokens += charge
            elif action is Action.BRANCH:
                children_created = apply_branch(pool, r_t, prune_cfg.s_max, ledger,
                                                id_counter, record_topk, cfg.k_store)
                ledger.sample_kv(kv_memory_units(warmup_paths) + kv_memory_units(pool))
                live2 = _live(pool)
                steps = _run_spans(ctx, live2, t, span, ctx.tau_prune)
                live_counts = _live_counts_from_steps(steps, span)
                charge = sum(steps)
                ledger.effective_tokens += charge
            elif action is Action.SINGLE_TOKEN:
                live_counts = []
                charge = 0
                for s_off in range(span):
                    live_now = _live(pool)
                    if not live_now:
                        break
                    live_counts.append(len(live_now))
                    charge += apply_single_token(pool, problem, r_t, ledger, ctx, t + s_off,
                                                 tau_gumbel=tau_gumbel,
                                                 lambda_penalty=lambda_penalty,
                                                 temp_agg=temp_agg)
                    prune_step(pool, ctx.tau_prune, prune_cfg.window, cfg.delimiter)
            else:  # MULTI_TOKEN
                charge, live_counts = apply_multi_token(pool, r_t, span, problem, ledger,
                                                        ctx, t, id_counter)
                children_created = (r_t - 1) * pool_before

            ledger.decode_steps += span
            decisions.append(Decision(
                index=decision_index, t=t, action=action.value, expansion=r_t,
                pool_before=pool_before, live_counts=tuple(live_counts),
                children_created=children_created, charge=charge,
                scores=scores_log, signals=signals_log,
            ))
            t += span
            decision_index += 1

        for p in pool:
            if p.status == "live":
                p.status = "completed"
                p.answer = extract_answer(p.tokens[: p.length], cfg.delimiter)
        ledger.sample_kv(kv_memory_units(warmup_paths) + kv_memory_units(pool))
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    all_paths = [p.snapshot() for p in warmup_paths + pool]
    return DecodeResult(
        method=method,
        seed=seed,
        paths=tuple(all_paths),
        ledger=ledger,
        decisions=tuple(decisions),
        tau_prune=tau,
        warmup_maxima=maxima,
        warmup_trace_lengths=tuple(p.length for p in warmup_paths),
        problem_summary={
            "problem_seed": problem.problem_seed,
            "planted": problem.planted,
            "decoy": problem.decoy,
            "divergence": problem.divergence,
            "divergence2": problem.divergence2,
            "correct_bias": problem.correct_bias,
        },
        config_snapshot=_config_snapshot(problem, controller_cfg, prune_cfg, method,
                                         tau_gumbel, lambda_penalty, temp_agg),
    )


def _config_snapshot(problem, controller_cfg, prune_cfg, method, tau_gumbel,
                     lambda_penalty, temp_agg) -> Dict[str, object]:
    toy = asdict(problem.cfg)
    toy["answer_vocab"] = list(problem.cfg.answer_vocab)
    return {
        "method": method,
        "interval_T": controller_cfg.interval_T,
        "target_width_W": controller_cfg.target_width_W,
        "eta": controller_cfg.eta,
        "enable_single_token": controller_cfg.enable_single_token,
        "n_init": prune_cfg.n_init,
        "window": prune_cfg.window,
        "top_traces": prune_cfg.top_traces,
        "s_max": prune_cfg.s_max,
        "t_max": prune_cfg.t_max,
        "tau_gumbel": tau_gumbel,
        "lambda_penalty": lambda_penalty,
        "temp_agg": temp_agg,
        "toy_model": toy,
    }


def collect_answer_records(result: DecodeResult) -> List[AnswerRecord]:
    """Answer records from every path that produced an answer."""
    records = []
    for p in result.paths:
        if p.answer is None or len(p.tokens) == 0:
            continue
        mean_conf = sum(p.per_token_conf) / len(p.per_token_conf)
        records.append(AnswerRecord(
            answer=str(p.answer),
            length=len(p.tokens),
            avg_conf=mean_conf,
            origin="pruned" if p.status == "pruned" else "survived",
        ))
    return records


def vote_all_rules(result: DecodeResult, vote_cfg: VoteConfig = VoteConfig()) -> Dict[str, Optional[str]]:
    records = collect_answer_records(result)
    if not records:
        return {"majority": None, "confidence_weighted": None, "length_confidence": None}
    return {
        "majority": majority_vote(records),
        "confidence_weighted": confidence_weighted_vote(records),
        "length_confidence": length_confidence_vote(records, vote_cfg),
    }


def native_vote(result: DecodeResult, vote_cfg: VoteConfig = VoteConfig()) -> Optional[str]:
    """Each method's own aggregation rule: majority for the plain baselines,
    length-confidence for the controlled variants."""
    records = collect_answer_records(result)
    if not records:
        return None
    if result.method in _LC_METHODS:
        return length_confidence_vote(records, vote_cfg)
    return majority_vote(records)


def audit_effective_tokens(result: DecodeResult) -> int:
    """Recompute the effective-token charge from the action log alone."""
    total = sum(result.warmup_trace_lengths)
    for d in result.decisions:
        if d.action == "single_token":
            total += d.expansion * sum(d.live_counts)
        else:
            total += sum(d.live_counts)
    return total


def build_manifest(result: DecodeResult, votes: Dict[str, Optional[str]],
                   vote_cfg: VoteConfig = VoteConfig()) -> Dict[str, object]:
    """JSON-ready run manifest; deterministic for identical runs."""
    records = collect_answer_records(result)
    return {
        "schema": "hyper-sim/run-manifest/v1",
        "method": result.method,
        "seed": result.seed,
        "config": result.config_snapshot,
        "problem": result.problem_summary,
        "tau_prune": result.tau_prune if result.tau_prune > _NEG_INF else None,
        "warmup": {
            "trace_lengths": list(result.warmup_trace_lengths),
            "maxima": asdict(result.warmup_maxima) if result.warmup_maxima else None,
        },
        "ledger": asdict(result.ledger),
        "decisions": [
            {
                "index": d.index, "t": d.t, "action": d.action, "expansion": d.expansion,
                "pool_before": d.pool_before, "live_counts": list(d.live_counts),
                "children_created": d.children_created, "charge": d.charge,
                "scores": d.scores, "signals": d.signals,
            }
            for d in result.decisions
        ],
        "paths": [
            {
                "path_id": p.path_id, "parent": p.parent, "origin": p.origin,
                "status": p.status, "length": len(p.tokens),
                "answer": None if p.answer is None else str(p.answer),
                "avg_conf": (sum(p.per_token_conf) / len(p.per_token_conf)) if p.per_token_conf else 0.0,
            }
            for p in result.paths
        ],
        "answers": {
            "records": [asdict(r) for r in records],
            "votes": votes,
            "vote_config": asdict(vote_cfg),
        },
    }


def manifest_json(result: DecodeResult, votes: Dict[str, Optional[str]],
                  vote_cfg: VoteConfig = VoteConfig()) -> str:
    return json.dumps(build_manifest(result, votes, vote_cfg), sort_keys=True,
                      separators=(",", ":"))
