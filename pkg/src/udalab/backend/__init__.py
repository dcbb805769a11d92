"""Kernel backend selection.

Two interchangeable implementations of the hot kernels exist:

* ``udalab.backend._kernels`` - Cython extension built at install time;
* ``udalab.backend.kernels_py`` - pure numpy fallback.

The compiled one is preferred when importable. ``UDALAB_BACKEND`` overrides
the choice: ``auto`` (default), ``compiled`` (fail loudly if missing) or
``python``. The selected module is exposed as ``udalab.backend.kernels``.
"""

import os

from . import kernels_py

_CHOICES = ("auto", "compiled", "python")


def _select(mode):
    if mode not in _CHOICES:
        raise ValueError(f"UDALAB_BACKEND must be one of {_CHOICES}, got {mode!r}")
    if mode == "python":
        return kernels_py
    try:
        from . import _kernels
    except ImportError:
        if mode == "compiled":
            raise ImportError(
                "UDALAB_BACKEND=compiled but the extension is not built; "
                "reinstall with a working C toolchain or unset the variable"
            ) from None
        return kernels_py
    return _kernels


kernels = _select(os.environ.get("UDALAB_BACKEND", "auto"))

BACKEND = kernels.NAME


def available_backends():
    """Every importable backend module, compiled first. Used by tests and bench."""
    out = []
    try:
        from . import _kernels
        out.append(_kernels)
    except ImportError:
        pass
    out.append(kernels_py)
    return out
