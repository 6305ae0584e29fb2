"""Select the compiled kernels when available, else the numpy fallback."""
import os

from . import _core_py

if os.environ.get("HRMSBO_PURE_PYTHON", "") not in ("", "0"):
    core = _core_py
    NAME = "python"
else:
    try:
        from . import _core as core  # type: ignore[attr-defined]
        NAME = "cython"
    except ImportError:  # extension not built
        core = _core_py
        NAME = "python"

__all__ = ["core", "NAME"]
