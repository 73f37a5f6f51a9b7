"""Backend selection for the hot kernels.

Set ``ROUGHPME_NUMBA=0`` (or ``false``/``off``/``no``) before import to force
the pure-numpy kernels. If numba is not importable the numpy kernels are used
regardless of the flag.
"""
import os

_OFF = {"0", "false", "off", "no"}

try:
    import numba  # noqa: F401
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def numba_requested() -> bool:
    return os.environ.get("ROUGHPME_NUMBA", "1").strip().lower() not in _OFF


USE_NUMBA = HAVE_NUMBA and numba_requested()


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
