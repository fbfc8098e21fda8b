"""Fog-invariant segmentation workbench.

Thin re-export of the compiled core. Inside a built wheel the extension
lives in this package; in a source checkout the build directory is put on
PYTHONPATH instead (see the python_smoke test wiring).
"""

try:
    from ._core import *  # noqa: F401,F403
    from . import _core  # noqa: F401
except ImportError:  # pragma: no cover - in-tree layout
    from _core import *  # noqa: F401,F403
    import _core  # noqa: F401

__version__ = "0.1.0"
