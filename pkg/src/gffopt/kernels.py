"""Backend selection for the cascade kernels.

The compiled Cython module is used when it was built; otherwise the NumPy
reference implementation is loaded. ``use_backend`` switches explicitly.
"""

from . import _kernels_py
from .exceptions import UsageError

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

BACKEND = "cython" if _compiled is not None else "python"
_active = BACKENDS[BACKEND]


def use_backend(name: str) -> None:
    global BACKEND, _active
    if name not in BACKENDS:
        raise UsageError(f"backend {name!r} unavailable (have {sorted(BACKENDS)})")
    BACKEND, _active = name, BACKENDS[name]


def mlp_forward(*args):
    _active.mlp_forward(*args)


def amplifier_chain(*args):
    _active.amplifier_chain(*args)
