"""Grid kernel selection.

The compiled extension is used when it imported cleanly; otherwise the numpy
fallback takes over. Set ``CROSSPLAN_PURE=1`` to force the fallback (used by
the kernel benchmark and the parity tests).
"""

import os

from . import pure

_force_pure = os.environ.get("CROSSPLAN_PURE", "").strip() not in ("", "0")

if not _force_pure:
    try:
        from . import _gridcore as active
        USING_COMPILED = True
    except ImportError:
        active = pure
        USING_COMPILED = False
else:
    active = pure
    USING_COMPILED = False

rect_cover_cells = active.rect_cover_cells
rect_cover_bits = active.rect_cover_bits
first_disjoint_shift = active.first_disjoint_shift
any_overlap = active.any_overlap


def implementation_name() -> str:
    return "compiled" if USING_COMPILED else "pure"
