# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend.

Mirrors ``_pure.py`` operation-for-operation; both backends must produce
bit-identical floats.  Keep edits synchronized.  Compiled with
-ffp-contract=off so no FMA contraction diverges from the Python fallback.
"""

from libc.math cimport exp, log, INFINITY
from libc.stdint cimport int64_t, uint64_t
from libc.stdlib cimport free, malloc

from .layout import (
    CTX_PAD as _CTX_PAD,
    PROB_EPS as _PROB_EPS,
    SALT_CHAIN as _SALT_CHAIN,
    SALT_NOISE as _SALT_NOISE,
    SALT_ROUTER as _SALT_ROUTER,
    SALT_SAMPLE as _SALT_SAMPLE,
    SALT_TARGET as _SALT_TARGET,
    STOP_COMPLETED as _STOP_COMPLETED,
    STOP_DEPTH as _STOP_DEPTH,
    STOP_PRUNED as _STOP_PRUNED,
    STOP_SPAN_DONE as _STOP_SPAN_DONE,
)

# iparam indices (mirrors layout.py)
cdef enum:
    I_VOCAB = 0
    I_NEXPERTS = 1
    I_GATEM = 2
    I_MAXDEPTH = 3
    I_DELIM = 4
    I_ANSBASE = 5
    I_NANSWERS = 6
    I_PLANTED = 7
    I_DECOY = 8
    I_DIVSTEP = 9
    I_LEAD = 10
    I_HAZC_START = 11
    I_HAZI_OFF = 12
    I_CONFK = 13
    I_KSTORE = 14
    I_NREASON = 15
    I_SEED = 16
    I_DIV2 = 17

cdef enum:
    F_PEAK = 0
    F_LEADMIN = 1
    F_POSTPEAK = 2
    F_ANSPEAK = 3
    F_RNOISE = 4
    F_NOISELATE = 5
    F_NOISERAMP = 6
    F_FLATDROP = 7
    F_HAZBASE = 8
    F_HAZSLOPE_C = 9
    F_HAZSLOPE_I = 10
    F_ROUTESCALE = 11
    F_SHARP = 12
    F_ANSNOISE = 13
    F_LOWANS = 14
    F_LOWOTHER = 15
    F_PREDELIM = 16

cdef uint64_t GOLD = 0x9E3779B97F4A7C15UL
cdef uint64_t MIX_C1 = 0xBF58476D1CE4E5B9UL
cdef uint64_t MIX_C2 = 0x94D049BB133111EBUL
cdef uint64_t SALT_CHAIN = <uint64_t>_SALT_CHAIN
cdef uint64_t SALT_TARGET = <uint64_t>_SALT_TARGET
cdef uint64_t SALT_NOISE = <uint64_t>_SALT_NOISE
cdef uint64_t SALT_ROUTER = <uint64_t>_SALT_ROUTER
cdef uint64_t SALT_SAMPLE = <uint64_t>_SALT_SAMPLE
cdef uint64_t CTX_PAD = <uint64_t>_CTX_PAD
cdef double PROB_EPS = _PROB_EPS
cdef double LOG_EPS = log(_PROB_EPS)
cdef double U01_SCALE = 1.1102230246251565e-16  # 2**-53

cdef int STOP_SPAN_DONE = _STOP_SPAN_DONE
cdef int STOP_COMPLETED = _STOP_COMPLETED
cdef int STOP_PRUNED = _STOP_PRUNED
cdef int STOP_DEPTH = _STOP_DEPTH


cdef inline uint64_t c_mix64(uint64_t h, uint64_t k) noexcept nogil:
    cdef uint64_t x = h ^ (k + GOLD)
    x = x + GOLD
    x = (x ^ (x >> 30)) * MIX_C1
    x = (x ^ (x >> 27)) * MIX_C2
    return x ^ (x >> 31)


cdef inline double c_u01(uint64_t x) noexcept nogil:
    return (<double>(x >> 11) + 0.5) * U01_SCALE


def mix64(h, k):
    return int(c_mix64(<uint64_t>h, <uint64_t>k))


def u01(x):
    return c_u01(<uint64_t>x)


cdef uint64_t c_ctx_hash(uint64_t seed, const int64_t* tk, Py_ssize_t length) noexcept nogil:
    cdef uint64_t h = c_mix64(SALT_CHAIN, seed)
    cdef Py_ssize_t j
    for j in range(length - 4, length):
        if j >= 0:
            h = c_mix64(h, <uint64_t>tk[j])
        else:
            h = c_mix64(h, CTX_PAD)
    return h


cdef inline double c_sample_u(uint64_t run_seed, uint64_t path_id, uint64_t t) noexcept nogil:
    cdef uint64_t h = c_mix64(SALT_SAMPLE, run_seed)
    h = c_mix64(h, path_id)
    h = c_mix64(h, t)
    return c_u01(h)


cdef void c_standard_selection(const int64_t* ip, const double* fp, uint64_t h,
                               int64_t* sel_idx, double* sel_w, double* rl,
                               unsigned char* taken) noexcept nogil:
    cdef Py_ssize_t ne = ip[I_NEXPERTS]
    cdef Py_ssize_t m = ip[I_GATEM]
    cdef double scale = fp[F_ROUTESCALE]
    cdef Py_ssize_t e, r, best
    cdef double bs, mx, s
    for e in range(ne):
        rl[e] = (c_u01(c_mix64(h, SALT_ROUTER + <uint64_t>e)) * 2.0 - 1.0) * scale
        taken[e] = 0
    for r in range(m):
        best = -1
        bs = -INFINITY
        for e in range(ne):
            if taken[e] == 0 and rl[e] > bs:
                bs = rl[e]
                best = e
        taken[best] = 1
        sel_idx[r] = best
        sel_w[r] = bs
    mx = sel_w[0]
    for r in range(1, m):
        if sel_w[r] > mx:
            mx = sel_w[r]
    s = 0.0
    for r in range(m):
        sel_w[r] = exp(sel_w[r] - mx)
        s += sel_w[r]
    for r in range(m):
        sel_w[r] = sel_w[r] / s


cdef inline Py_ssize_t c_first_wrong(const int64_t* tk, Py_ssize_t l, Py_ssize_t div1,
                                     Py_ssize_t div2, int64_t planted) noexcept nogil:
    if l > div1 and tk[div1] != planted:
        return div1
    if div2 >= 0 and l > div2 and tk[div2] != planted:
        return div2
    return -1


cdef uint64_t c_fill_logits(const int64_t* ip, const double* fp,
                            const double* off, Py_ssize_t off_stride,
                            const double* alpha, const double* bb,
                            const int64_t* tk, Py_ssize_t length,
                            const int64_t* sel_idx, const double* sel_w, Py_ssize_t msel,
                            double* out) noexcept nogil:
    cdef Py_ssize_t nv = ip[I_VOCAB]
    cdef int64_t delim = ip[I_DELIM]
    cdef Py_ssize_t ansbase = ip[I_ANSBASE]
    cdef Py_ssize_t nans = ip[I_NANSWERS]
    cdef Py_ssize_t nreason = ip[I_NREASON]
    cdef Py_ssize_t div1 = ip[I_DIVSTEP]
    cdef Py_ssize_t div2 = ip[I_DIV2]
    cdef Py_ssize_t lead = ip[I_LEAD]
    cdef int64_t planted = ip[I_PLANTED]
    cdef uint64_t seed = <uint64_t>ip[I_SEED]
    cdef Py_ssize_t l = length
    cdef uint64_t h = c_ctx_hash(seed, tk, l)
    cdef bint at_branch = l == div1 or (div2 >= 0 and l == div2)
    cdef Py_ssize_t v, j, i, tgt, hz_start, fw, next_div
    cdef uint64_t th
    cdef int64_t intended
    cdef double low, anoise, prog, peak, amp, dlogit, frac, lowans
    cdef double w, am, g

    if at_branch:
        for v in range(nv):
            out[v] = bb[v]
    elif l >= 1 and tk[l - 1] == delim:
        fw = c_first_wrong(tk, l, div1, div2, planted)
        intended = planted
        if fw >= 0:
            intended = tk[fw]
            if not (intended >= <int64_t>ansbase and intended < <int64_t>(ansbase + nans)):
                intended = ip[I_DECOY]
        low = fp[F_LOWOTHER]
        for v in range(nv):
            out[v] = low
        anoise = fp[F_ANSNOISE]
        for j in range(nans):
            out[ansbase + j] = anoise * (c_u01(c_mix64(h, SALT_NOISE + <uint64_t>(ansbase + j))) * 2.0 - 1.0)
        out[intended] = fp[F_ANSPEAK]
    else:
        fw = c_first_wrong(tk, l, div1, div2, planted)
        # Chain targets are position-keyed streams that heal after sampled
        # deviations: the correct track shares one stream, each wrong branch
        # follows its marker's stream, and only after the final checkpoint do
        # targets become context-keyed so surviving paths diverge lexically.
        if fw >= 0:
            th = c_mix64(c_mix64(c_mix64(SALT_TARGET, seed), <uint64_t>(1000 + tk[fw])), <uint64_t>l)
        elif (div2 >= 0 and l <= div2) or (div2 < 0 and l <= div1):
            th = c_mix64(c_mix64(c_mix64(SALT_TARGET, seed), 1), <uint64_t>l)
        else:
            th = c_mix64(h, SALT_TARGET)
        tgt = <Py_ssize_t>(th % <uint64_t>nreason)
        if fw >= 0:
            # wrong track: confidence degrades, early answer hazard
            prog = (<double>(l - fw)) / fp[F_NOISERAMP]
            if prog > 1.0:
                prog = 1.0
            peak = fp[F_POSTPEAK] - fp[F_FLATDROP] * prog
            amp = fp[F_RNOISE] + fp[F_NOISELATE] * prog
            hz_start = fw + ip[I_HAZI_OFF]
            if l >= hz_start:
                dlogit = fp[F_HAZBASE] + fp[F_HAZSLOPE_I] * (<double>(l - hz_start))
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
                frac = (<double>(l - (next_div - lead))) / (<double>lead)
                peak = fp[F_PEAK] + (fp[F_LEADMIN] - fp[F_PEAK]) * frac
            elif l < div1:
                peak = fp[F_PEAK]
            else:
                peak = fp[F_POSTPEAK]
            amp = fp[F_RNOISE]
            if next_div < 0:
                hz_start = ip[I_HAZC_START]
                if l >= hz_start:
                    dlogit = fp[F_HAZBASE] + fp[F_HAZSLOPE_C] * (<double>(l - hz_start))
                else:
                    dlogit = fp[F_HAZBASE]
            else:
                dlogit = fp[F_PREDELIM]
        if l >= ip[I_MAXDEPTH] - 2:
            dlogit = 40.0
        for v in range(nreason):
            out[v] = amp * (c_u01(c_mix64(h, SALT_NOISE + <uint64_t>v)) * 2.0 - 1.0)
        out[tgt] += peak
        lowans = fp[F_LOWANS]
        for j in range(nans):
            out[ansbase + j] = lowans
        out[delim] = dlogit

    for i in range(msel):
        w = sel_w[i]
        for v in range(nv):
            out[v] += w * off[sel_idx[i] * off_stride + v]
    if at_branch:
        am = 0.0
        for i in range(msel):
            am += sel_w[i] * alpha[sel_idx[i]]
        out[planted] += am
        g = 1.0 + fp[F_SHARP] * (am if am > 0.0 else 0.0)
        for v in range(nv):
            out[v] *= g
    return h


cdef void c_softmax(const double* logits, Py_ssize_t nv, double* out) noexcept nogil:
    cdef double mx = logits[0]
    cdef Py_ssize_t v
    cdef double e, s
    for v in range(1, nv):
        if logits[v] > mx:
            mx = logits[v]
    s = 0.0
    for v in range(nv):
        e = exp(logits[v] - mx)
        out[v] = e
        s += e
    for v in range(nv):
        out[v] = out[v] / s


cdef void c_topk(const double* probs, Py_ssize_t nv, Py_ssize_t k,
                 int64_t* out_ids, double* out_p, unsigned char* taken) noexcept nogil:
    cdef Py_ssize_t r, v, best
    cdef double bp
    for v in range(nv):
        taken[v] = 0
    for r in range(k):
        best = -1
        bp = -1.0
        for v in range(nv):
            if taken[v] == 0 and probs[v] > bp:
                bp = probs[v]
                best = v
        taken[best] = 1
        out_ids[r] = best
        out_p[r] = bp


cdef double c_conf_from_topk(const int64_t* ids, const double* probs, Py_ssize_t kstore,
                             int64_t selected, Py_ssize_t confk) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t n = 0
    cdef Py_ssize_t r
    cdef double p
    for r in range(kstore):
        if ids[r] == selected:
            continue
        p = probs[r]
        if p > PROB_EPS:
            s += log(p)
        else:
            s += LOG_EPS
        n += 1
        if n == confk:
            break
    return -s / (<double>confk)


def conf_from_topk(ids, probs, kstore, selected, confk):
    cdef int64_t[::1] iv = ids
    cdef double[::1] pv = probs
    return c_conf_from_topk(&iv[0], &pv[0], <Py_ssize_t>kstore, <int64_t>selected, <Py_ssize_t>confk)


def standard_logits(ip_arr, fp_arr, offsets, alpha, branch_base, tokens, length, out):
    cdef int64_t[::1] ip = ip_arr
    cdef double[::1] fp = fp_arr
    cdef double[:, ::1] off = offsets
    cdef double[::1] al = alpha
    cdef double[::1] bb = branch_base
    cdef int64_t[::1] tk = tokens
    cdef double[::1] o = out
    cdef Py_ssize_t l = length
    cdef Py_ssize_t ne = ip[I_NEXPERTS]
    cdef Py_ssize_t m = ip[I_GATEM]
    cdef int64_t* sel_idx = <int64_t*>malloc(m * sizeof(int64_t))
    cdef double* sel_w = <double*>malloc(m * sizeof(double))
    cdef double* rl = <double*>malloc(ne * sizeof(double))
    cdef unsigned char* taken = <unsigned char*>malloc(ne * sizeof(unsigned char))
    cdef uint64_t h
    cdef const int64_t* tkp = &tk[0] if tk.shape[0] > 0 else NULL
    try:
        with nogil:
            h = c_ctx_hash(<uint64_t>ip[I_SEED], tkp, l)
            c_standard_selection(&ip[0], &fp[0], h, sel_idx, sel_w, rl, taken)
            c_fill_logits(&ip[0], &fp[0], &off[0, 0], off.shape[1], &al[0], &bb[0],
                          tkp, l, sel_idx, sel_w, m, &o[0])
    finally:
        free(sel_idx)
        free(sel_w)
        free(rl)
        free(taken)


def selection_logits(ip_arr, fp_arr, offsets, alpha, branch_base, tokens, length, sel_idx, sel_w, out):
    cdef int64_t[::1] ip = ip_arr
    cdef double[::1] fp = fp_arr
    cdef double[:, ::1] off = offsets
    cdef double[::1] al = alpha
    cdef double[::1] bb = branch_base
    cdef int64_t[::1] tk = tokens
    cdef int64_t[::1] si = sel_idx
    cdef double[::1] sw = sel_w
    cdef double[::1] o = out
    cdef Py_ssize_t l = length
    cdef Py_ssize_t msel = si.shape[0]
    cdef const int64_t* tkp = &tk[0] if tk.shape[0] > 0 else NULL
    with nogil:
        c_fill_logits(&ip[0], &fp[0], &off[0, 0], off.shape[1], &al[0], &bb[0],
                      tkp, l, &si[0], &sw[0], msel, &o[0])


def router_fill(ip_arr, fp_arr, tokens, length, out):
    cdef int64_t[::1] ip = ip_arr
    cdef double[::1] fp = fp_arr
    cdef int64_t[::1] tk = tokens
    cdef double[::1] o = out
    cdef Py_ssize_t l = length
    cdef double scale = fp[F_ROUTESCALE]
    cdef uint64_t h
    cdef Py_ssize_t e
    cdef const int64_t* tkp = &tk[0] if tk.shape[0] > 0 else NULL
    with nogil:
        h = c_ctx_hash(<uint64_t>ip[I_SEED], tkp, l)
        for e in range(ip[I_NEXPERTS]):
            o[e] = (c_u01(c_mix64(h, SALT_ROUTER + <uint64_t>e)) * 2.0 - 1.0) * scale


def probe_topk(ip_arr, fp_arr, offsets, alpha, branch_base, tokens, length, out_ids, out_probs):
    cdef int64_t[::1] ip = ip_arr
    cdef double[::1] fp = fp_arr
    cdef double[:, ::1] off = offsets
    cdef double[::1] al = alpha
    cdef double[::1] bb = branch_base
    cdef int64_t[::1] tk = tokens
    cdef int64_t[::1] oi = out_ids
    cdef double[::1] op = out_probs
    cdef Py_ssize_t l = length
    cdef Py_ssize_t nv = ip[I_VOCAB]
    cdef Py_ssize_t ne = ip[I_NEXPERTS]
    cdef Py_ssize_t m = ip[I_GATEM]
    cdef Py_ssize_t kstore = ip[I_KSTORE]
    cdef int64_t* sel_idx = <int64_t*>malloc(m * sizeof(int64_t))
    cdef double* sel_w = <double*>malloc(m * sizeof(double))
    cdef double* rl = <double*>malloc(ne * sizeof(double))
    cdef double* logits = <double*>malloc(nv * sizeof(double))
    cdef double* probs = <double*>malloc(nv * sizeof(double))
    cdef unsigned char* taken = <unsigned char*>malloc((nv if nv > ne else ne) * sizeof(unsigned char))
    cdef uint64_t h
    cdef int64_t selected
    cdef const int64_t* tkp = &tk[0] if tk.shape[0] > 0 else NULL
    try:
        with nogil:
            h = c_ctx_hash(<uint64_t>ip[I_SEED], tkp, l)
            c_standard_selection(&ip[0], &fp[0], h, sel_idx, sel_w, rl, taken)
            c_fill_logits(&ip[0], &fp[0], &off[0, 0], off.shape[1], &al[0], &bb[0],
                          tkp, l, sel_idx, sel_w, m, logits)
            c_softmax(logits, nv, probs)
            c_topk(probs, nv, kstore, &oi[0], &op[0], taken)
            selected = oi[0]
    finally:
        free(sel_idx)
        free(sel_w)
        free(rl)
        free(logits)
        free(probs)
        free(taken)
    return int(selected)


def decode_span(ip_arr, fp_arr, offsets, alpha, branch_base, run_seed, path_id,
                tokens, confs, length, t0, span, tau, window,
                rec_ids, rec_probs, record):
    """Decode up to `span` standard-routed tokens for one path.

    Same contract as the pure backend; releases the GIL for the whole span so
    path workers can run in parallel.
    """
    cdef int64_t[::1] ip = ip_arr
    cdef double[::1] fp = fp_arr
    cdef double[:, ::1] off = offsets
    cdef double[::1] al = alpha
    cdef double[::1] bb = branch_base
    cdef int64_t[::1] tk = tokens
    cdef double[::1] cf = confs
    cdef int64_t[:, ::1] ri = rec_ids
    cdef double[:, ::1] rp = rec_probs
    cdef bint rec = record
    cdef uint64_t rs = <uint64_t>run_seed
    cdef uint64_t pid = <uint64_t>path_id
    cdef Py_ssize_t cur = length
    cdef Py_ssize_t t_start = t0
    cdef Py_ssize_t nspan = span
    cdef Py_ssize_t win = window
    cdef double tau_c = tau

    cdef Py_ssize_t nv = ip[I_VOCAB]
    cdef Py_ssize_t ne = ip[I_NEXPERTS]
    cdef Py_ssize_t m = ip[I_GATEM]
    cdef Py_ssize_t kstore = ip[I_KSTORE]
    cdef Py_ssize_t confk = ip[I_CONFK]
    cdef int64_t delim = ip[I_DELIM]
    cdef Py_ssize_t maxdepth = ip[I_MAXDEPTH]

    cdef double* logits = <double*>malloc(nv * sizeof(double))
    cdef double* probs = <double*>malloc(nv * sizeof(double))
    cdef double* rl = <double*>malloc(ne * sizeof(double))
    cdef double* sel_w = <double*>malloc(m * sizeof(double))
    cdef int64_t* sel_idx = <int64_t*>malloc(m * sizeof(int64_t))
    cdef int64_t* ids = <int64_t*>malloc(kstore * sizeof(int64_t))
    cdef double* ps = <double*>malloc(kstore * sizeof(double))
    cdef unsigned char* taken = <unsigned char*>malloc((nv if nv > ne else ne) * sizeof(unsigned char))

    cdef const int64_t* tkp = &tk[0] if tk.shape[0] > 0 else NULL
    cdef Py_ssize_t steps = 0
    cdef int stop = STOP_SPAN_DONE
    cdef Py_ssize_t i, l, v, j, n, r
    cdef int64_t y
    cdef uint64_t h
    cdef double u, cum, c, s

    try:
        with nogil:
            for i in range(nspan):
                l = cur
                if l >= maxdepth:
                    stop = STOP_DEPTH
                    break
                h = c_ctx_hash(<uint64_t>ip[I_SEED], tkp, l)
                c_standard_selection(&ip[0], &fp[0], h, sel_idx, sel_w, rl, taken)
                c_fill_logits(&ip[0], &fp[0], &off[0, 0], off.shape[1], &al[0], &bb[0],
                              tkp, l, sel_idx, sel_w, m, logits)
                c_softmax(logits, nv, probs)
                u = c_sample_u(rs, pid, <uint64_t>(t_start + i))
                cum = 0.0
                y = nv - 1
                for v in range(nv):
                    cum += probs[v]
                    if u < cum:
                        y = v
                        break
                c_topk(probs, nv, kstore, ids, ps, taken)
                c = c_conf_from_topk(ids, ps, kstore, y, confk)
                tk[l] = y
                cf[l] = c
                cur += 1
                if rec:
                    for r in range(kstore):
                        ri[i, r] = ids[r]
                        rp[i, r] = ps[r]
                steps += 1
                if l >= 1 and tk[l - 1] == delim:
                    stop = STOP_COMPLETED
                    break
                if tau_c > -INFINITY:
                    n = win if cur > win else cur
                    s = 0.0
                    for j in range(cur - n, cur):
                        s += cf[j]
                    if s / (<double>n) < tau_c:
                        stop = STOP_PRUNED
                        break
    finally:
        free(logits)
        free(probs)
        free(rl)
        free(sel_w)
        free(sel_idx)
        free(ids)
        free(ps)
        free(taken)
    return int(steps), int(stop), int(cur)


def lev_distance(a, la, b, lb):
    """Levenshtein edit distance between a[:la] and b[:lb]."""
    cdef int64_t[::1] av = a
    cdef int64_t[::1] bv = b
    cdef Py_ssize_t na = la
    cdef Py_ssize_t nb = lb
    cdef Py_ssize_t out
    cdef Py_ssize_t* prev
    cdef Py_ssize_t* cur
    if na == 0:
        return int(nb)
    if nb == 0:
        return int(na)
    prev = <Py_ssize_t*>malloc((nb + 1) * sizeof(Py_ssize_t))
    cur = <Py_ssize_t*>malloc((nb + 1) * sizeof(Py_ssize_t))
    try:
        with nogil:
            out = c_lev(&av[0], na, &bv[0], nb, prev, cur)
    finally:
        free(prev)
        free(cur)
    return int(out)


cdef Py_ssize_t c_lev(const int64_t* a, Py_ssize_t la, const int64_t* b, Py_ssize_t lb,
                      Py_ssize_t* prev, Py_ssize_t* cur) noexcept nogil:
    cdef Py_ssize_t i, j, x, y, z, best
    cdef int64_t ai
    cdef Py_ssize_t* tmp
    for j in range(lb + 1):
        prev[j] = j
    for i in range(1, la + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, lb + 1):
            x = prev[j] + 1
            y = cur[j - 1] + 1
            z = prev[j - 1] + (0 if ai == b[j - 1] else 1)
            best = x if x < y else y
            if z < best:
                best = z
            cur[j] = best
        tmp = prev
        prev = cur
        cur = tmp
    return prev[lb]


def pairwise_lev_mean(seqs, lengths):
    """Mean normalized edit distance over all unordered row pairs of `seqs`."""
    cdef int64_t[:, ::1] sv = seqs
    cdef int64_t[::1] lv = lengths
    cdef Py_ssize_t n = lv.shape[0]
    cdef Py_ssize_t maxlen = sv.shape[1]
    cdef Py_ssize_t* prev = <Py_ssize_t*>malloc((maxlen + 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t* cur = <Py_ssize_t*>malloc((maxlen + 1) * sizeof(Py_ssize_t))
    cdef double total = 0.0
    cdef Py_ssize_t pairs = 0
    cdef Py_ssize_t i, j, li, lj, mx, d
    cdef double dn
    try:
        with nogil:
            for i in range(n):
                for j in range(i + 1, n):
                    li = lv[i]
                    lj = lv[j]
                    mx = li if li > lj else lj
                    if mx == 0:
                        dn = 0.0
                    else:
                        d = c_lev(&sv[i, 0], li, &sv[j, 0], lj, prev, cur)
                        dn = (<double>d) / (<double>mx)
                    total += dn
                    pairs += 1
    finally:
        free(prev)
        free(cur)
    return total / pairs
