"""Hot matrix-vector kernels with a compiled core and a numpy fallback.

The compiled extension is used when it imports; set ``WAVERNN_ENGINE_PURE=1``
to force the numpy path. ``backend`` is looked up at call time, so
:func:`set_backend` switches every caller at once.
"""

import os
from contextlib import contextmanager

from . import _pykernels as python

try:
    from . import _ckernels as compiled
except ImportError:  # extension not built
    compiled = None

_BACKENDS = {"python": python}
if compiled is not None:
    _BACKENDS["compiled"] = compiled

if compiled is not None and os.environ.get("WAVERNN_ENGINE_PURE") != "1":
    backend = compiled
else:
    backend = python


def available():
    return sorted(_BACKENDS)


def set_backend(name):
    """Select ``"compiled"`` or ``"python"`` for all subsequent kernel calls."""
    global backend
    try:
        backend = _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} not available; have {available()}") from None
    return backend


@contextmanager
def using(name):
    prev = backend
    set_backend(name)
    try:
        yield backend
    finally:
        globals()["backend"] = prev
