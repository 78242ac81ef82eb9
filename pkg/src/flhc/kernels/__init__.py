"""Hot training kernels with a compiled core and a pure-numpy fallback.

The backend is picked once at import, controlled by the FLHC_KERNELS
environment variable:

* ``auto`` (default) — use the compiled extension if it was built, else numpy
* ``compiled`` — require the extension, raise if missing
* ``python`` — force the numpy fallback

``set_backend`` rebinds the module-level functions at runtime, which is what
the benchmark and the cross-backend tests use.
"""

from __future__ import annotations

import os

from . import python_ops

try:
    from . import _fastops
except ImportError:
    _fastops = None

_BACKENDS = {"python": python_ops}
if _fastops is not None:
    _BACKENDS["compiled"] = _fastops

_KERNEL_FUNCS = ("conv2d_forward", "conv2d_backward", "maxpool2_forward", "maxpool2_backward")

_active_name = "python"


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def get_backend() -> str:
    return _active_name


def set_backend(name: str) -> str:
    """Bind the named backend's kernels to this module; returns the name."""
    global _active_name
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available_backends()}")
    impl = _BACKENDS[name]
    for func in _KERNEL_FUNCS:
        globals()[func] = getattr(impl, func)
    _active_name = name
    return name


def _initial_backend() -> str:
    requested = os.environ.get("FLHC_KERNELS", "auto").lower()
    if requested == "auto":
        return "compiled" if "compiled" in _BACKENDS else "python"
    if requested == "compiled" and "compiled" not in _BACKENDS:
        raise ImportError("FLHC_KERNELS=compiled but the extension is not built")
    if requested not in ("compiled", "python"):
        raise ValueError(f"FLHC_KERNELS must be auto, compiled or python, got {requested!r}")
    return requested


set_backend(_initial_backend())
