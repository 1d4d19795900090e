"""Shared parameter layout and stream salts for the decode kernels.

Both kernel backends (the compiled core and the pure-Python fallback) consume
the synthetic policy as two flat parameter vectors plus three arrays.  The
index constants below are the single source of truth for that packing; the
policy module builds the vectors and the backends read them.

All randomness is counter-based: a value is a pure function of
(salt, seed, path_id, step, offset) mixed through splitmix64.  This makes
every decode step reproducible independently of scheduling or worker count.
"""

# -- integer parameter vector ------------------------------------------------
I_VOCAB = 0        # vocabulary size V
I_NEXPERTS = 1     # expert count E
I_GATEM = 2        # gate size m (experts mixed per token)
I_MAXDEPTH = 3     # hard depth cap; paths are forced to answer before it
I_DELIM = 4        # answer delimiter token id
I_ANSBASE = 5      # first answer token id (answers are a contiguous block)
I_NANSWERS = 6     # number of answer tokens
I_PLANTED = 7      # planted (correct) answer id
I_DECOY = 8        # dominant wrong answer id
I_DIVSTEP = 9      # first divergence checkpoint: branch-commitment position
I_LEAD = 10        # instability lead-in length before each checkpoint
I_HAZC_START = 11  # correct-track delimiter hazard start (absolute step)
I_HAZI_OFF = 12    # wrong-track delimiter hazard offset from the wrong commit
I_CONFK = 13       # candidate count k for token confidence
I_KSTORE = 14      # stored top-k width (must be >= CONFK + 1)
I_NREASON = 15     # reasoning token ids are 0..NREASON-1
I_SEED = 16        # problem seed (non-negative, < 2**63)
I_DIV2 = 17        # second divergence checkpoint (-1 when absent)
N_IPARAMS = 18

# -- float parameter vector --------------------------------------------------
F_PEAK = 0         # reasoning-mode peak logit
F_LEADMIN = 1      # peak logit at the end of the lead-in (instability floor)
F_POSTPEAK = 2     # chain peak logit after the divergence step
F_ANSPEAK = 3      # intended-answer logit in answer mode
F_RNOISE = 4       # base per-token logit noise amplitude
F_NOISELATE = 5    # extra noise amplitude for incorrect branches (full ramp)
F_NOISERAMP = 6    # steps over which incorrect degradation ramps in
F_FLATDROP = 7     # peak reduction for incorrect branches at full ramp
F_HAZBASE = 8      # delimiter base logit once a hazard is armed
F_HAZSLOPE_C = 9   # delimiter hazard slope, correct branch
F_HAZSLOPE_I = 10  # delimiter hazard slope, incorrect branch
F_ROUTESCALE = 11  # router logit scale
F_SHARP = 12       # confidence-correctness coupling strength at the branch step
F_ANSNOISE = 13    # noise on non-intended answer logits in answer mode
F_LOWANS = 14      # answer-token logit outside answer/branch modes
F_LOWOTHER = 15    # floor logit for out-of-mode tokens
F_PREDELIM = 16    # delimiter logit before any hazard is armed
N_FPARAMS = 17

# -- stream salts (arbitrary odd 64-bit constants, well separated) -----------
SALT_CHAIN = 0x5851F42D4C957F2D    # context hash chain
SALT_TARGET = 0x14057B7EF767814F   # chain target token
SALT_NOISE = 0x27BB2EE687B0B0FD    # per-token logit noise (offset by token id)
SALT_ROUTER = 0x369DEA0F31A53F85   # router logits (offset by expert id)
SALT_SAMPLE = 0x1F83D9ABFB41BD6B   # per-step sampling uniform
SALT_RGUMBEL = 0x452821E638D01377  # route-expansion Gumbel noise
SALT_PROBLEM = 0x9216D5D98979FB1B  # problem generation
SALT_MC = 0x3C6EF372FE94F82B      # Monte Carlo oracles

# Context hash padding key for positions before the first token.
CTX_PAD = 0x7F4A7C15

# Offset stride for (route, expert) Gumbel keys: offset = route * RGUMBEL_STRIDE + expert.
RGUMBEL_STRIDE = 1024

# Probability floor applied before logarithms.
PROB_EPS = 1e-12

# decode_span stop codes.
STOP_SPAN_DONE = 0
STOP_COMPLETED = 1
STOP_PRUNED = 2
STOP_DEPTH = 3
