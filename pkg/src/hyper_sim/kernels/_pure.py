"""Pure-Python kernel backend.

Reference implementation of the decode hot path.  The compiled backend in
``_core.pyx`` mirrors this code operation-for-operation so that both produce
bit-identical results; keep the two in sync when editing either.

Performance here is deliberately sacrificed for having a dependency-free
fallback: plain loops, ``math.exp``/``math.log``, sequential summation.
"""

from __future__ import annotations

import math

from .layout import (
    CTX_PAD,
    F_ANSNOISE,
    F_ANSPEAK,
    F_FLATDROP,
    F_HAZBASE,
    F_HAZSLOPE_C,
    F_HAZSLOPE_I,
    F_LEADMIN,
    F_LOWANS,
    F_LOWOTHER,
    F_NOISELATE,
    F_NOISERAMP,
    F_PEAK,
    F_POSTPEAK,
    F_PREDELIM,
    F_RNOISE,
    F_ROUTESCALE,
    F_SHARP,
    I_ANSBASE,
    I_CONFK,
    I_DECOY,
    I_DELIM,
    I_DIV2,
    I_DIVSTEP,
    I_GATEM,
    I_HAZC_START,
    I_HAZI_OFF,
    I_KSTORE,
    I_LEAD,
    I_MAXDEPTH,
    I_NANSWERS,
    I_NEXPERTS,
    I_NREASON,
    I_PLANTED,
    I_SEED,
    I_VOCAB,
    PROB_EPS,
    SALT_CHAIN,
    SALT_NOISE,
    SALT_ROUTER,
    SALT_SAMPLE,
    SALT_TARGET,
    STOP_COMPLETED,
    STOP_DEPTH,
    STOP_PRUNED,
    STOP_SPAN_DONE,
)

_MASK = (1 << 64) - 1
_GOLD = 0x9E3779B97F4A7C15
_LOG_EPS = math.log(PROB_EPS)
_NEG_INF = float("-inf")


def mix64(h: int, k: int) -> int:
    """One chaining step of the counter-based stream (splitmix64 finalizer)."""
    x = (h ^ ((k + _GOLD) & _MASK)) & _MASK
    x = (x + _GOLD) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def u01(x: int) -> float:
    """Map a 64-bit word to a double in the open interval (0, 1)."""
    return ((x >> 11) + 0.5) * 1.1102230246251565e-16  # 2**-53


def _ctx_hash(seed, tk, length):
    h = mix64(SALT_CHAIN, seed)
    for j in range(length - 4, length):
        h = mix64(h, tk[j] if j >= 0 else CTX_PAD)
    return h


def _sample_u(run_seed, path_id, t):
    h = mix64(SALT_SAMPLE, run_seed)
    h = mix64(h, path_id)
    h = mix64(h, t)
    return u01(h)


def _standard_selection(ip, fp, h, sel_idx, sel_w):
    """Clean top-m routing: indices and softmax gates into sel_idx/sel_w."""
    ne = ip[I_NEXPERTS]
    m = ip[I_GATEM]
    scale = fp[F_ROUTESCALE]
    rl = [0.0] * ne
    for e in range(ne):
        rl[e] = (u01(mix64(h, SALT_ROUTER + e)) * 2.0 - 1.0) * scale
    taken = [False] * ne
    for r in range(m):
        best = -1
        bs = _NEG_INF
        for e in range(ne):
            if not taken[e] and rl[e] > bs:
                bs = rl[e]
                best = e
        taken[best] = True
        sel_idx[r] = best
        sel_w[r] = bs
    mx = sel_w[0]
    for r in range(1, m):
        if sel_w[r] > mx:
            mx = sel_w[r]
    s = 0.0
    for r in range(m):
        sel_w[r] = math.exp(sel_w[r] - mx)
        s += sel_w[r]
    for r in range(m):
        sel_w[r] = sel_w[r] / s


def _first_wrong(tk, l, div1, div2, planted):
    """Step index of the first wrong branch commit, or -1 while on track."""
    if l > div1 and tk[div1] != planted:
        return div1
    if div2 >= 0 and l > div2 and tk[div2] != planted:
        return div2
    return -1


def _fill_logits(ip, fp, off, alpha, branch_base, tk, length, sel_idx, sel_w, msel, out):
    """Next-token logits for a context under a given expert selection."""
    nv = ip[I_VOCAB]
    delim = ip[I_DELIM]
    ansbase = ip[I_ANSBASE]
    nans = ip[I_NANSWERS]
    nreason = ip[I_NREASON]
    div1 = ip[I_DIVSTEP]
    div2 = ip[I_DIV2]
    planted = ip[I_PLANTED]
    seed = ip[I_SEED]
    lead = ip[I_LEAD]
    l = length
    h = _ctx_hash(seed, tk, l)
    at_branch = l == div1 or (div2 >= 0 and l == div2)

    if at_branch:
        for v in range(nv):
            out[v] = branch_base[v]
    elif l >= 1 and tk[l - 1] == delim:
        fw = _first_wrong(tk, l, div1, div2, planted)
        intended = planted
        if fw >= 0:
            intended = tk[fw]
            if not (ansbase <= intended < ansbase + nans):
                intended = ip[I_DECOY]
        low = fp[F_LOWOTHER]
        for v in range(nv):
            out[v] = low
        anoise = fp[F_ANSNOISE]
        for j in range(nans):
            a = ansbase + j
            out[a] = anoise * (u01(mix64(h, SALT_NOISE + a)) * 2.0 - 1.0)
        out[intended] = fp[F_ANSPEAK]
    else:
        fw = _first_wrong(tk, l, div1, div2, planted)
        # Chain targets are position-keyed streams that heal after sampled
        # deviations: the correct track shares one stream, each wrong branch
        # follows its marker's stream, and only after the final checkpoint do
        # targets become context-keyed so surviving paths diverge lexically.
        if fw >= 0:
            th = mix64(mix64(mix64(SALT_TARGET, seed), 1000 + tk[fw]), l)
        elif (div2 >= 0 and l <= div2) or (div2 < 0 and l <= div1):
            th = mix64(mix64(mix64(SALT_TARGET, seed), 1), l)
        else:
            th = mix64(h, SALT_TARGET)
        tgt = th % nreason
        if fw >= 0:
            # wrong track: confidence degrades, early answer hazard
            prog = (l - fw) / fp[F_NOISERAMP]
            if prog > 1.0:
                prog = 1.0
            peak = fp[F_POSTPEAK] - fp[F_FLATDROP] * prog
            amp = fp[F_RNOISE] + fp[F_NOISELATE] * prog
            hz_start = fw + ip[I_HAZI_OFF]
            if l >= hz_start:
                dlogit = fp[F_HAZBASE] + fp[F_HAZSLOPE_I] * (l - hz_start)
            else:
                dlogit = fp[F_HAZBASE]
        else:
            # correct track: instability ramps in before each checkpoint
            next_div = -1
            if l < div1:
                next_div = div1
            elif div2 >= 0 and l < div2:
                next_div = div2
            if next_div >= 0 and l >= next_div - lead:
                frac = (l - (next_div - lead)) / lead
                peak = fp[F_PEAK] + (fp[F_LEADMIN] - fp[F_PEAK]) * frac
            elif l < div1:
                peak = fp[F_PEAK]
            else:
                peak = fp[F_POSTPEAK]
            amp = fp[F_RNOISE]
            if next_div < 0:
                hz_start = ip[I_HAZC_START]
                if l >= hz_start:
                    dlogit = fp[F_HAZBASE] + fp[F_HAZSLOPE_C] * (l - hz_start)
                else:
                    dlogit = fp[F_HAZBASE]
            else:
                dlogit = fp[F_PREDELIM]
        if l >= ip[I_MAXDEPTH] - 2:
            dlogit = 40.0
        for v in range(nreason):
            out[v] = amp * (u01(mix64(h, SALT_NOISE + v)) * 2.0 - 1.0)
        out[tgt] += peak
        lowans = fp[F_LOWANS]
        for j in range(nans):
            out[ansbase + j] = lowans
        out[delim] = dlogit

    for i in range(msel):
        e = sel_idx[i]
        w = sel_w[i]
        orow = off[e]
        for v in range(nv):
            out[v] += w * orow[v]
    if at_branch:
        am = 0.0
        for i in range(msel):
            am += sel_w[i] * alpha[sel_idx[i]]
        out[planted] += am
        g = 1.0 + fp[F_SHARP] * (am if am > 0.0 else 0.0)
        for v in range(nv):
            out[v] *= g
    return h


def _softmax(logits, nv, out):
    mx = logits[0]
    for v in range(1, nv):
        if logits[v] > mx:
            mx = logits[v]
    s = 0.0
    for v in range(nv):
        e = math.exp(logits[v] - mx)
        out[v] = e
        s += e
    for v in range(nv):
        out[v] = out[v] / s


def _topk(probs, nv, k, out_ids, out_p):
    taken = [False] * nv
    for r in range(k):
        best = -1
        bp = -1.0
        for v in range(nv):
            if not taken[v] and probs[v] > bp:
                bp = probs[v]
                best = v
        taken[best] = True
        out_ids[r] = best
        out_p[r] = bp


def conf_from_topk(ids, probs, kstore, selected, confk):
    """Negative mean log-probability of the top alternatives to `selected`."""
    s = 0.0
    n = 0
    for r in range(kstore):
        if ids[r] == selected:
            continue
        p = probs[r]
        s += math.log(p) if p > PROB_EPS else _LOG_EPS
        n += 1
        if n == confk:
            break
    return -s / confk


def _unpack(ip_arr, fp_arr, offsets, alpha, branch_base):
    ip = [int(x) for x in ip_arr]
    fp = [float(x) for x in fp_arr]
    off = [[float(x) for x in row] for row in offsets]
    al = [float(x) for x in alpha]
    bb = [float(x) for x in branch_base]
    return ip, fp, off, al, bb


def standard_logits(ip_arr, fp_arr, offsets, alpha, branch_base, tokens, length, out):
    ip, fp, off, al, bb = _unpack(ip_arr, fp_arr, offsets, alpha, branch_base)
    tk = [int(x) for x in tokens[:length]]
    m = ip[I_GATEM]
    sel_idx = [0] * m
    sel_w = [0.0] * m
    h = _ctx_hash(ip[I_SEED], tk, length)
    _standard_selection(ip, fp, h, sel_idx, sel_w)
    buf = [0.0] * ip[I_VOCAB]
    _fill_logits(ip, fp, off, al, bb, tk, length, sel_idx, sel_w, m, buf)
    for v in range(ip[I_VOCAB]):
        out[v] = buf[v]


def selection_logits(ip_arr, fp_arr, offsets, alpha, branch_base, tokens, length, sel_idx, sel_w, out):
    ip, fp, off, al, bb = _unpack(ip_arr, fp_arr, offsets, alpha, branch_base)
    tk = [int(x) for x in tokens[:length]]
    si = [int(x) for x in sel_idx]
    sw = [float(x) for x in sel_w]
    buf = [0.0] * ip[I_VOCAB]
    _fill_logits(ip, fp, off, al, bb, tk, length, si, sw, len(si), buf)
    for v in range(ip[I_VOCAB]):
        out[v] = buf[v]


def router_fill(ip_arr, fp_arr, tokens, length, out):
    ip = [int(x) for x in ip_arr]
    scale = float(fp_arr[F_ROUTESCALE])
    tk = [int(x) for x in tokens[:length]]
    h = _ctx_hash(ip[I_SEED], tk, length)
    for e in range(ip[I_NEXPERTS]):
        out[e] = (u01(mix64(h, SALT_ROUTER + e)) * 2.0 - 1.0) * scale


def probe_topk(ip_arr, fp_arr, offsets, alpha, branch_base, tokens, length, out_ids, out_probs):
    """Clean-routed next-token top-k snapshot; returns the argmax token."""
    ip, fp, off, al, bb = _unpack(ip_arr, fp_arr, offsets, alpha, branch_base)
    tk = [int(x) for x in tokens[:length]]
    m = ip[I_GATEM]
    nv = ip[I_VOCAB]
    kstore = ip[I_KSTORE]
    sel_idx = [0] * m
    sel_w = [0.0] * m
    h = _ctx_hash(ip[I_SEED], tk, length)
    _standard_selection(ip, fp, h, sel_idx, sel_w)
    logits = [0.0] * nv
    _fill_logits(ip, fp, off, al, bb, tk, length, sel_idx, sel_w, m, logits)
    probs = [0.0] * nv
    _softmax(logits, nv, probs)
    ids = [0] * kstore
    ps = [0.0] * kstore
    _topk(probs, nv, kstore, ids, ps)
    for r in range(kstore):
        out_ids[r] = ids[r]
        out_probs[r] = ps[r]
    return ids[0]


def decode_span(ip_arr, fp_arr, offsets, alpha, branch_base, run_seed, path_id,
                tokens, confs, length, t0, span, tau, window,
                rec_ids, rec_probs, record):
    """Decode up to `span` standard-routed tokens for one path.

    Appends tokens and per-token confidences in place, applies the completion
    and sliding-window prune checks after every step, and optionally records
    the per-step top-k snapshot.  Returns (steps_done, stop_code, new_length).
    """
    ip, fp, off, al, bb = _unpack(ip_arr, fp_arr, offsets, alpha, branch_base)
    nv = ip[I_VOCAB]
    m = ip[I_GATEM]
    kstore = ip[I_KSTORE]
    confk = ip[I_CONFK]
    delim = ip[I_DELIM]
    maxdepth = ip[I_MAXDEPTH]
    seed = ip[I_SEED]
    run_seed = int(run_seed)
    path_id = int(path_id)
    length = int(length)

    tk = [int(x) for x in tokens[:length]]
    cf = [float(x) for x in confs[:length]]
    start = length
    logits = [0.0] * nv
    probs = [0.0] * nv
    sel_idx = [0] * m
    sel_w = [0.0] * m
    ids = [0] * kstore
    ps = [0.0] * kstore

    steps = 0
    stop = STOP_SPAN_DONE
    for i in range(span):
        l = length
        if l >= maxdepth:
            stop = STOP_DEPTH
            break
        h = _ctx_hash(seed, tk, l)
        _standard_selection(ip, fp, h, sel_idx, sel_w)
        _fill_logits(ip, fp, off, al, bb, tk, l, sel_idx, sel_w, m, logits)
        _softmax(logits, nv, probs)
        u = _sample_u(run_seed, path_id, t0 + i)
        cum = 0.0
        y = nv - 1
        for v in range(nv):
            cum += probs[v]
            if u < cum:
                y = v
                break
        _topk(probs, nv, kstore, ids, ps)
        c = conf_from_topk(ids, ps, kstore, y, confk)
        tk.append(y)
        cf.append(c)
        length += 1
        if record:
            for r in range(kstore):
                rec_ids[i, r] = ids[r]
                rec_probs[i, r] = ps[r]
        steps += 1
        if l >= 1 and tk[l - 1] == delim:
            stop = STOP_COMPLETED
            break
        if tau > _NEG_INF:
            n = window if length > window else length
            s = 0.0
            for j in range(length - n, length):
                s += cf[j]
            if s / n < tau:
                stop = STOP_PRUNED
                break

    for j in range(start, length):
        tokens[j] = tk[j]
        confs[j] = cf[j]
    return steps, stop, length


def lev_distance(a, la, b, lb):
    """Levenshtein edit distance between a[:la] and b[:lb]."""
    la = int(la)
    lb = int(lb)
    if la == 0:
        return lb
    if lb == 0:
        return la
    prev = list(range(lb + 1))
    cur = [0] * (lb + 1)
    for i in range(1, la + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, lb + 1):
            cost = 0 if ai == b[j - 1] else 1
            x = prev[j] + 1
            y = cur[j - 1] + 1
            z = prev[j - 1] + cost
            best = x if x < y else y
            if z < best:
                best = z
            cur[j] = best
        prev, cur = cur, prev
    return prev[lb]


def pairwise_lev_mean(seqs, lengths):
    """Mean normalized edit distance over all unordered row pairs of `seqs`."""
    n = len(lengths)
    rows = [[int(x) for x in seqs[i, : int(lengths[i])]] for i in range(n)]
    total = 0.0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            li = len(rows[i])
            lj = len(rows[j])
            mx = li if li > lj else lj
            if mx == 0:
                d = 0.0
            else:
                d = lev_distance(rows[i], li, rows[j], lj) / mx
            total += d
            pairs += 1
    return total / pairs
