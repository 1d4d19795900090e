"""Synthetic MoE policy with planted-answer problems.

Each problem plants one correct answer token and a dominant decoy.  A path
decodes deterministic-ish "reasoning" tokens (hash-chained on the last four
context tokens), passes through a short instability lead-in, commits to a
branch at the divergence step by emitting an answer marker, and later emits
the answer delimiter followed by its committed answer.  Incorrect branches
receive growing logit noise after divergence, so their confidence degrades
and they answer early; correct branches stay sharp and answer late.  That
confidence-correctness coupling is synthetic by construction and is the knob
that makes confidence pruning, route aggregation, and length-aware voting
behave the way they do on real decoders.

Experts modulate logits through per-expert offset vectors everywhere and, at
the branch step, through a per-expert truth alignment: routes whose gates
lean on truth-aligned experts get a sharper (more confident) branch
distribution that also favors the planted answer.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .kernels import layout, mix64, probe_topk, selection_logits, standard_logits
from .kernels import router_fill as _router_fill
from .signals import TokenTopK
from .streams import mix64_vec, u01_vec


@dataclass(frozen=True)
class ToyMoEConfig:
    """Shape and dynamics of the synthetic policy and its task family."""

    vocab_size: int = 24
    num_experts_E: int = 8
    gate_size_m: int = 2
    max_depth: int = 176
    base_correct_bias: float = 1.6
    divergence_step: int = 40
    divergence_jitter: int = 8
    second_divergence: Optional[int] = 96
    second_divergence_jitter: int = 10
    noise_late: float = 2.6
    answer_vocab: Tuple[int, ...] = ()
    per_path_q: float = 0.35

    # reasoning / instability shape
    lead: int = 16
    peak_logit: float = 6.5
    lead_peak_min: float = 3.1
    post_peak: float = 6.2
    reason_noise: float = 0.8
    noise_ramp: float = 18.0
    flat_drop: float = 2.8

    # answer emission
    answer_peak: float = 6.0
    answer_noise: float = 0.4
    hazard_base: float = -7.0
    hazard_slope_correct: float = 0.9
    hazard_slope_incorrect: float = 0.9
    correct_answer_start: int = 148
    correct_answer_jitter: int = 12
    incorrect_answer_offset: int = 6
    incorrect_answer_jitter: int = 9

    # expert structure
    route_scale: float = 1.0
    expert_offset_scale: float = 0.15
    alpha_scale: float = 2.2
    sharp_scale: float = 1.4

    # branch distribution masses (logits)
    decoy_logit: float = 2.0
    minor_logit: float = -0.4

    # metric widths
    conf_k: int = 8
    k_store: int = 9

    # calibration of the planted-branch bias
    calibrate: bool = True
    calib_trials: int = 10000
    calib_tol: float = 0.008
    calib_max_iter: int = 40

    def __post_init__(self):
        if not self.answer_vocab:
            object.__setattr__(self, "answer_vocab", tuple(range(self.vocab_size - 6, self.vocab_size)))
        av = tuple(self.answer_vocab)
        if av != tuple(range(av[0], av[0] + len(av))) or av[-1] != self.vocab_size - 1:
            raise ValueError("answer_vocab must be a contiguous block ending the vocabulary")
        if self.gate_size_m > self.num_experts_E:
            raise ValueError("gate_size_m exceeds num_experts_E")
        if not (0.0 < self.per_path_q < 1.0):
            raise ValueError("per_path_q must lie in (0, 1)")
        if self.divergence_step + self.divergence_jitter >= self.max_depth:
            raise ValueError("divergence must precede max_depth")
        if self.second_divergence is not None:
            if self.divergence_step + self.divergence_jitter + self.lead >= \
                    self.second_divergence - self.second_divergence_jitter:
                raise ValueError("checkpoint zones must not overlap")
            if self.second_divergence + self.second_divergence_jitter >= self.correct_answer_start:
                raise ValueError("second checkpoint must precede the answer hazard")
        if self.k_store < self.conf_k + 1:
            raise ValueError("k_store must exceed conf_k")
        if self.vocab_size < self.k_store:
            raise ValueError("vocab too small for stored top-k")

    @property
    def delimiter(self) -> int:
        return self.answer_vocab[0] - 1

    @property
    def num_reasoning(self) -> int:
        return self.delimiter


@dataclass(frozen=True)
class ProblemInstance:
    """One planted-answer task: resolved dynamics plus packed kernel params."""

    cfg: ToyMoEConfig
    problem_seed: int
    planted: int
    decoy: int
    divergence: int
    divergence2: Optional[int]
    hazard_start_correct: int
    hazard_offset_incorrect: int
    correct_bias: float
    measured_q: Optional[float]
    iparams: np.ndarray = field(repr=False)
    fparams: np.ndarray = field(repr=False)
    expert_offsets: np.ndarray = field(repr=False)
    expert_alpha: np.ndarray = field(repr=False)
    branch_base: np.ndarray = field(repr=False)

    @property
    def kernel_args(self):
        return (self.iparams, self.fparams, self.expert_offsets, self.expert_alpha, self.branch_base)


def _pack_params(cfg: ToyMoEConfig, seed: int, planted: int, decoy: int, div: int,
                 div2: Optional[int], hazc: int, hazi_off: int) -> Tuple[np.ndarray, np.ndarray]:
    ip = np.zeros(layout.N_IPARAMS, dtype=np.int64)
    ip[layout.I_VOCAB] = cfg.vocab_size
    ip[layout.I_NEXPERTS] = cfg.num_experts_E
    ip[layout.I_GATEM] = cfg.gate_size_m
    ip[layout.I_MAXDEPTH] = cfg.max_depth
    ip[layout.I_DELIM] = cfg.delimiter
    ip[layout.I_ANSBASE] = cfg.answer_vocab[0]
    ip[layout.I_NANSWERS] = len(cfg.answer_vocab)
    ip[layout.I_PLANTED] = planted
    ip[layout.I_DECOY] = decoy
    ip[layout.I_DIVSTEP] = div
    ip[layout.I_DIV2] = -1 if div2 is None else div2
    ip[layout.I_LEAD] = cfg.lead
    ip[layout.I_HAZC_START] = hazc
    ip[layout.I_HAZI_OFF] = hazi_off
    ip[layout.I_CONFK] = cfg.conf_k
    ip[layout.I_KSTORE] = cfg.k_store
    ip[layout.I_NREASON] = cfg.num_reasoning
    ip[layout.I_SEED] = seed & ((1 << 63) - 1)

    fp = np.zeros(layout.N_FPARAMS, dtype=np.float64)
    fp[layout.F_PEAK] = cfg.peak_logit
    fp[layout.F_LEADMIN] = cfg.lead_peak_min
    fp[layout.F_POSTPEAK] = cfg.post_peak
    fp[layout.F_ANSPEAK] = cfg.answer_peak
    fp[layout.F_RNOISE] = cfg.reason_noise
    fp[layout.F_NOISELATE] = cfg.noise_late
    fp[layout.F_NOISERAMP] = cfg.noise_ramp
    fp[layout.F_FLATDROP] = cfg.flat_drop
    fp[layout.F_HAZBASE] = cfg.hazard_base
    fp[layout.F_HAZSLOPE_C] = cfg.hazard_slope_correct
    fp[layout.F_HAZSLOPE_I] = cfg.hazard_slope_incorrect
    fp[layout.F_ROUTESCALE] = cfg.route_scale
    fp[layout.F_SHARP] = cfg.sharp_scale
    fp[layout.F_ANSNOISE] = cfg.answer_noise
    fp[layout.F_LOWANS] = -8.0
    fp[layout.F_LOWOTHER] = -4.0
    fp[layout.F_PREDELIM] = -20.0
    return ip, fp


def _branch_base(cfg: ToyMoEConfig, planted: int, decoy: int, bias: float) -> np.ndarray:
    bb = np.full(cfg.vocab_size, -4.0, dtype=np.float64)
    bb[cfg.delimiter] = -20.0
    for a in cfg.answer_vocab:
        bb[a] = cfg.minor_logit
    bb[decoy] = cfg.decoy_logit
    bb[planted] = bias
    return bb


def _problem_draw(seed: int, salt_off: int, shape) -> np.ndarray:
    """Uniform(0,1) array derived from the problem seed."""
    base = mix64(layout.SALT_PROBLEM, seed)
    n = int(np.prod(shape))
    offs = np.uint64(salt_off) * np.uint64(1 << 32) + np.arange(n, dtype=np.uint64)
    return u01_vec(mix64_vec(np.uint64(base), offs)).reshape(shape)


def _routing_from_hashes(cfg: ToyMoEConfig, offsets: np.ndarray, alpha: np.ndarray,
                         ctx_hashes: np.ndarray):
    """Standard top-m routing for a batch of context hashes (vectorized)."""
    E = cfg.num_experts_E
    m = cfg.gate_size_m
    keys = ctx_hashes[:, None] if ctx_hashes.ndim == 1 else ctx_hashes
    offs = np.uint64(layout.SALT_ROUTER) + np.arange(E, dtype=np.uint64)
    rl = (u01_vec(mix64_vec(keys, offs[None, :])) * 2.0 - 1.0) * cfg.route_scale
    order = np.argsort(-rl, axis=1, kind="stable")[:, :m]
    sel = np.take_along_axis(rl, order, axis=1)
    sel = sel - sel.max(axis=1, keepdims=True)
    gates = np.exp(sel)
    gates /= gates.sum(axis=1, keepdims=True)
    alpha_mix = (gates * alpha[order]).sum(axis=1)
    off_mix = np.einsum("nm,nmv->nv", gates, offsets[order])
    return alpha_mix, off_mix


def _healed_target(seed: int, pos: int, nreason: int) -> int:
    return mix64(mix64(mix64(layout.SALT_TARGET, seed), 1), pos) % nreason


def _ctx_hash_vec(seed: int, last4: np.ndarray) -> np.ndarray:
    h = np.full(last4.shape[0], mix64(layout.SALT_CHAIN, seed), dtype=np.uint64)
    for j in range(4):
        h = mix64_vec(h, last4[:, j].astype(np.uint64))
    return h


def _roll_arrival_hashes(cfg: ToyMoEConfig, offsets: np.ndarray, alpha: np.ndarray,
                         seed: int, div: int, u_steps: np.ndarray) -> np.ndarray:
    """Context hashes a population of on-track paths carries into a checkpoint.

    Replays the last few pre-checkpoint steps with the true chain dynamics
    (healed position-keyed targets, instability ramp, expert offsets), so the
    arrival-context distribution, including hash lumpiness from shared
    prefixes, matches real decoding.  Seeded from the targets a few steps
    earlier; the initialization error washes out of the 4-token hash window.
    """
    n, n_roll = u_steps.shape
    nreason = cfg.num_reasoning
    nv = cfg.vocab_size
    delim = cfg.delimiter
    ansbase = cfg.answer_vocab[0]
    last4 = np.empty((n, 4), dtype=np.int64)
    for j in range(4):
        last4[:, j] = _healed_target(seed, div - n_roll - 4 + j, nreason)
    zone0 = div - cfg.lead
    for i, l in enumerate(range(div - n_roll, div)):
        h = _ctx_hash_vec(seed, last4)
        if l >= zone0:
            frac = (l - zone0) / cfg.lead
            peak = cfg.peak_logit + (cfg.lead_peak_min - cfg.peak_logit) * frac
        else:
            peak = cfg.peak_logit
        noise_offs = np.uint64(layout.SALT_NOISE) + np.arange(nreason, dtype=np.uint64)
        noise = cfg.reason_noise * (u01_vec(mix64_vec(h[:, None], noise_offs[None, :])) * 2.0 - 1.0)
        logits = np.full((n, nv), -8.0)
        logits[:, :nreason] = noise
        # healed-stream target for this position (same for every path)
        tpos = _healed_target(seed, l, nreason)
        logits[:, tpos] += peak
        logits[:, delim] = -20.0
        _, off_mix = _routing_from_hashes(cfg, offsets, alpha, h)
        logits += off_mix
        tok = _sample_rows(logits, u_steps[:, i])
        last4[:, :3] = last4[:, 1:]
        last4[:, 3] = tok
    return _ctx_hash_vec(seed, last4)


def _marker_draw(cfg: ToyMoEConfig, bb_without_bias: np.ndarray, planted: int,
                 bias: float, alpha_mix: np.ndarray, off_mix: np.ndarray,
                 u: np.ndarray) -> np.ndarray:
    logits = bb_without_bias[None, :] + off_mix
    logits[:, planted] += bias + alpha_mix
    gamma = 1.0 + cfg.sharp_scale * np.maximum(alpha_mix, 0.0)
    logits *= gamma[:, None]
    return _sample_rows(logits, u)


def _simulate_branch_accuracy(cfg: ToyMoEConfig, offsets: np.ndarray, alpha: np.ndarray,
                              bb_without_bias: np.ndarray, planted: int, decoy: int,
                              bias: float, draws: dict) -> float:
    """Monte Carlo per-path correctness of unguided decoding.

    Correctness is decided at the checkpoint and answer steps; their contexts
    are drawn from the rolled arrival-hash populations, so this estimates the
    marginal over full paths without decoding them.
    """
    n = draws["u_marker"].shape[0]
    am1, off1 = _routing_from_hashes(cfg, offsets, alpha, draws["arrival1"])
    marker1 = _marker_draw(cfg, bb_without_bias, planted, bias, am1, off1, draws["u_marker"])
    if cfg.second_divergence is not None:
        am2, off2 = _routing_from_hashes(cfg, offsets, alpha, draws["arrival2"])
        marker2 = _marker_draw(cfg, bb_without_bias, planted, bias, am2, off2, draws["u_marker2"])
        first_wrong = np.where(marker1 != planted, marker1,
                               np.where(marker2 != planted, marker2, planted))
    else:
        first_wrong = marker1

    # answer step under a fresh random routing context (offset effect is tiny)
    am_a, off_ans = _routing_from_hashes(cfg, offsets, alpha, draws["arrival_ans"])
    ansbase = cfg.answer_vocab[0]
    nans = len(cfg.answer_vocab)
    alog = np.full((n, cfg.vocab_size), -4.0)
    alog[:, ansbase:ansbase + nans] = cfg.answer_noise * (draws["ans_noise"] * 2.0 - 1.0)
    intended = np.where((first_wrong >= ansbase) & (first_wrong < ansbase + nans),
                        first_wrong, decoy)
    alog[np.arange(n), intended] = cfg.answer_peak
    alog += off_ans
    answer = _sample_rows(alog, draws["u_answer"])
    return float(np.mean(answer == planted))


def _sample_rows(logits: np.ndarray, u: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    cum = np.cumsum(p, axis=1)
    return (u[:, None] >= cum).sum(axis=1).clip(max=logits.shape[1] - 1)


def sample_problem(cfg: ToyMoEConfig, seed: int) -> ProblemInstance:
    """Generate one planted-answer problem; deterministic in (cfg, seed).

    When calibration is enabled the planted-branch bias is bisected until a
    10^4-path Monte Carlo estimate of unguided per-path accuracy lands within
    calib_tol of per_path_q.
    """
    h = mix64(layout.SALT_PROBLEM, seed)
    nans = len(cfg.answer_vocab)
    planted_idx = mix64(h, 1) % nans
    d_idx = mix64(h, 2) % (nans - 1)
    decoy_idx = d_idx if d_idx < planted_idx else d_idx + 1
    planted = cfg.answer_vocab[planted_idx]
    decoy = cfg.answer_vocab[decoy_idx]

    jit = cfg.divergence_jitter
    div = cfg.divergence_step - jit + (mix64(h, 3) % (2 * jit + 1)) if jit else cfg.divergence_step
    div2 = None
    if cfg.second_divergence is not None:
        jit2 = cfg.second_divergence_jitter
        div2 = cfg.second_divergence - jit2 + (mix64(h, 6) % (2 * jit2 + 1)) if jit2 else cfg.second_divergence
    hazc = cfg.correct_answer_start + (mix64(h, 4) % (cfg.correct_answer_jitter + 1))
    hazi_off = cfg.incorrect_answer_offset + (mix64(h, 5) % (cfg.incorrect_answer_jitter + 1))

    E, V = cfg.num_experts_E, cfg.vocab_size
    offsets = cfg.expert_offset_scale * (_problem_draw(seed, 10, (E, V)) * 2.0 - 1.0)
    alpha = cfg.alpha_scale * (_problem_draw(seed, 11, (E,)) * 2.0 - 1.0)

    bb_nobias = _branch_base(cfg, planted, decoy, 0.0)

    bias = cfg.base_correct_bias
    measured = None
    if cfg.calibrate:
        n = cfg.calib_trials
        n_roll = 6
        arrival1 = _roll_arrival_hashes(cfg, offsets, alpha, seed, div,
                                        _problem_draw(seed, 12, (n, n_roll)))
        if div2 is not None:
            arrival2 = _roll_arrival_hashes(cfg, offsets, alpha, seed, div2,
                                            _problem_draw(seed, 17, (n, n_roll)))
        else:
            arrival2 = None
        # answer-step contexts are effectively random; synthesize hashes
        arrival_ans = mix64_vec(np.uint64(mix64(layout.SALT_PROBLEM, seed)),
                                np.uint64(19) * np.uint64(1 << 32) + np.arange(n, dtype=np.uint64))
        draws = {
            "arrival1": arrival1,
            "arrival2": arrival2,
            "arrival_ans": arrival_ans,
            "u_marker": _problem_draw(seed, 14, (n,)),
            "u_marker2": _problem_draw(seed, 18, (n,)),
            "u_answer": _problem_draw(seed, 15, (n,)),
            "ans_noise": _problem_draw(seed, 16, (n, nans)),
        }
        lo, hi = -8.0, 10.0
        acc_lo = _simulate_branch_accuracy(cfg, offsets, alpha, bb_nobias, planted, decoy, lo, draws)
        acc_hi = _simulate_branch_accuracy(cfg, offsets, alpha, bb_nobias, planted, decoy, hi, draws)
        if not (acc_lo <= cfg.per_path_q <= acc_hi):
            raise ValueError("calibration target outside achievable range")
        ok = False
        for _ in range(cfg.calib_max_iter):
            mid = 0.5 * (lo + hi)
            acc = _simulate_branch_accuracy(cfg, offsets, alpha, bb_nobias, planted, decoy, mid, draws)
            if abs(acc - cfg.per_path_q) <= cfg.calib_tol:
                bias, measured, ok = mid, acc, True
                break
            if acc < cfg.per_path_q:
                lo = mid
            else:
                hi = mid
        if not ok:
            raise ValueError("calibration failed to converge within the iteration budget")

    ip, fp = _pack_params(cfg, seed, planted, decoy, div, div2, hazc, hazi_off)
    bb = _branch_base(cfg, planted, decoy, bias)
    return ProblemInstance(
        cfg=cfg,
        problem_seed=seed,
        planted=planted,
        decoy=decoy,
        divergence=div,
        divergence2=div2,
        hazard_start_correct=hazc,
        hazard_offset_incorrect=hazi_off,
        correct_bias=bias,
        measured_q=measured,
        iparams=ip,
        fparams=fp,
        expert_offsets=offsets,
        expert_alpha=alpha,
        branch_base=bb,
    )


def next_token_logits(problem: ProblemInstance, context: Sequence[int],
                      selection=None) -> np.ndarray:
    """Next-token logits for a context, optionally under a given expert routing.

    `selection` is an (indices, weights) pair for one route; None uses the
    clean standard routing.  Deterministic in (problem, context, selection).
    """
    cfg = problem.cfg
    if len(context) >= cfg.max_depth:
        raise ValueError("must emit answer: context at max depth")
    tokens = np.asarray(list(context), dtype=np.int64)
    out = np.zeros(cfg.vocab_size, dtype=np.float64)
    if selection is None:
        standard_logits(*problem.kernel_args, tokens, len(tokens), out)
    else:
        idx, w = selection
        idx = np.asarray(idx, dtype=np.int64)
        w = np.asarray(w, dtype=np.float64)
        selection_logits(*problem.kernel_args, tokens, len(tokens), idx, w, out)
    return out


def router_logits(problem: ProblemInstance, context: Sequence[int]) -> np.ndarray:
    tokens = np.asarray(list(context), dtype=np.int64)
    out = np.zeros(problem.cfg.num_experts_E, dtype=np.float64)
    _router_fill(problem.iparams, problem.fparams, tokens, len(tokens), out)
    return out


def probe_distribution(problem: ProblemInstance, tokens: np.ndarray, length: int) -> TokenTopK:
    """Clean-routed next-token top-k snapshot as a TokenTopK."""
    k = problem.cfg.k_store
    ids = np.zeros(k, dtype=np.int64)
    ps = np.zeros(k, dtype=np.float64)
    selected = probe_topk(*problem.kernel_args, tokens, length, ids, ps)
    return TokenTopK(token_ids=[int(i) for i in ids], probs=[float(p) for p in ps],
                     selected=int(selected), k=k)


def extract_answer(tokens: Sequence[int], delimiter: int) -> Optional[int]:
    """Token following the last answer delimiter, if any."""
    tokens = list(tokens)
    for i in range(len(tokens) - 2, -1, -1):
        if tokens[i] == delimiter:
            return tokens[i + 1]
    return None


def hard_variant(cfg: ToyMoEConfig, per_path_q: float) -> ToyMoEConfig:
    """Same task family at a different per-path correctness level."""
    return replace(cfg, per_path_q=per_path_q)
