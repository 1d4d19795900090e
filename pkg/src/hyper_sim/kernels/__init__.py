"""Kernel backend selection.

The compiled core is used when it importable; set HYPER_SIM_PURE_PY=1 to force
the pure-Python fallback.  Both backends implement the same functions with
bit-identical results (see tests/test_kernels.py).
"""

from __future__ import annotations

import os

from . import _pure

_IMPL = _pure
if os.environ.get("HYPER_SIM_PURE_PY") != "1":
    try:
        from . import _core as _compiled

        _IMPL = _compiled
    except ImportError:
        pass

BACKEND = "core" if _IMPL is not _pure else "pure"

mix64 = _IMPL.mix64
u01 = _IMPL.u01
conf_from_topk = _IMPL.conf_from_topk
standard_logits = _IMPL.standard_logits
selection_logits = _IMPL.selection_logits
router_fill = _IMPL.router_fill
probe_topk = _IMPL.probe_topk
decode_span = _IMPL.decode_span
lev_distance = _IMPL.lev_distance
pairwise_lev_mean = _IMPL.pairwise_lev_mean


def get_backend(name: str):
    """Return a backend module by name ("core" or "pure"); for tests/benchmarks."""
    if name == "pure":
        return _pure
    if name == "core":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
