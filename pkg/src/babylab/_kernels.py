"""Pick the BPE kernel implementation at import time.

The compiled module is used when it was built; ``BABYLAB_PURE_PYTHON=1``
forces the reference implementation.
"""

from __future__ import annotations

import os

from . import _bpe_py

if os.environ.get("BABYLAB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _bpe_py
else:
    try:
        from . import _bpe_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _bpe_py

learn_merges = _impl.learn_merges
apply_merges = _impl.apply_merges
IMPLEMENTATION: str = _impl.IMPLEMENTATION


def implementations() -> dict[str, object]:
    """All importable kernel modules, keyed by name (used by tests and the benchmark)."""
    found: dict[str, object] = {"python": _bpe_py}
    try:
        from . import _bpe_cy

        found["cython"] = _bpe_cy
    except ImportError:
        pass
    return found
