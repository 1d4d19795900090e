"""Online expand-reduce controller.

Every T decoding steps the controller normalizes the pool signals against
warm-up maxima and scores four actions; the coefficients are plain 1/n
averaging weights, not tuned parameters:

    none         = (c + (1-h) + d) / 3
    single_token = ((1-c) + h + (1-beta)) / 3
    branch       = ((1-d) + (1-beta)) / 2
    multi_token  = ((1-d) + (1-c) + var) / 3

Ties break toward the cheaper action: none > single_token > multi_token >
branch.  Consensus (beta) is already a fraction and is used raw; the other
signals pass through global-max normalization.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence

from .signals import PoolSignals, global_max_normalize


class Action(enum.Enum):
    NONE = "none"
    SINGLE_TOKEN = "single_token"
    MULTI_TOKEN = "multi_token"
    BRANCH = "branch"


# Fixed tie-break priority: cheaper actions first.
ACTION_PRIORITY = (Action.NONE, Action.SINGLE_TOKEN, Action.MULTI_TOKEN, Action.BRANCH)


@dataclass(frozen=True)
class SignalVector:
    """Normalized pool statistics driving action scores; all fields in [0, 1]."""

    c_hat: float
    h_hat: float
    beta: float
    d_hat: float
    var_hat: float

    def __post_init__(self):
        for name in ("c_hat", "h_hat", "beta", "d_hat", "var_hat"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} outside [0, 1]: {v}")


@dataclass(frozen=True)
class WarmupMaxima:
    """Per-signal maxima observed during warm-up, frozen afterwards."""

    conf: float
    entropy: float
    diversity: float
    conf_variance: float


@dataclass
class ControllerConfig:
    interval_T: int = 64
    target_width_W: int = 80
    eta: float = 0.4
    enable_single_token: bool = True
    warmup_maxima: Optional[WarmupMaxima] = None

    def __post_init__(self):
        if self.interval_T < 1:
            raise ValueError("interval_T must be >= 1")
        if self.target_width_W < 1:
            raise ValueError("target_width_W must be >= 1")
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError("eta must lie in [0, 1]")


def expansion_factor(target_width_W: int, pool_size_S: int) -> int:
    """Per-path expansion factor: ceil(W / S)."""
    if pool_size_S < 1:
        raise ValueError("empty pool")
    if target_width_W < 1:
        raise ValueError("target width must be >= 1")
    return -(-target_width_W // pool_size_S)


def normalize_signals(pool: PoolSignals, maxima: WarmupMaxima) -> SignalVector:
    """Map raw pool statistics into [0, 1] using warm-up maxima."""
    if pool.composite_diversity is None:
        raise ValueError("pool signals missing composite diversity")
    return SignalVector(
        c_hat=global_max_normalize(pool.mean_conf, maxima.conf),
        h_hat=global_max_normalize(pool.mean_entropy, maxima.entropy),
        beta=pool.consensus,
        d_hat=global_max_normalize(pool.composite_diversity, maxima.diversity),
        var_hat=global_max_normalize(pool.conf_variance, maxima.conf_variance),
    )


def score_actions(s: SignalVector) -> Dict[Action, float]:
    """Score the four actions from a normalized signal vector."""
    return {
        Action.NONE: (s.c_hat + (1.0 - s.h_hat) + s.d_hat) / 3.0,
        Action.SINGLE_TOKEN: ((1.0 - s.c_hat) + s.h_hat + (1.0 - s.beta)) / 3.0,
        Action.BRANCH: ((1.0 - s.d_hat) + (1.0 - s.beta)) / 2.0,
        Action.MULTI_TOKEN: ((1.0 - s.d_hat) + (1.0 - s.c_hat) + s.var_hat) / 3.0,
    }


def select_action(scores: Mapping[Action, float], config: ControllerConfig) -> Action:
    """Argmax over action scores with fixed tie-break priority.

    With single-token aggregation disabled (dense-model mode) that action is
    excluded before the argmax.
    """
    best = None
    best_score = -math.inf
    for action in ACTION_PRIORITY:
        if action not in scores:
            continue
        if action is Action.SINGLE_TOKEN and not config.enable_single_token:
            continue
        sc = scores[action]
        if not math.isfinite(sc):
            raise ValueError("scores must be finite")
        if sc > best_score:
            best = action
            best_score = sc
    if best is None:
        raise ValueError("no selectable action")
    return best


def update_warmup_maxima(observed: Mapping[str, Sequence[float]]) -> Dict[str, float]:
    """Componentwise maximum of per-signal warm-up observations."""
    out = {}
    for name, samples in observed.items():
        samples = list(samples)
        if not samples:
            raise ValueError(f"no observations for signal {name!r}")
        out[name] = max(samples)
    return out
