"""Optional numba acceleration.

Kernels are written in the numba-compatible subset of Python and decorated
with :func:`jit`.  When numba is unavailable, or ``ADJOINTLAB_DISABLE_NUMBA``
is set to a truthy value, :func:`jit` returns the function untouched and the
whole package runs as plain numpy.

A jitted kernel can only call jitted vector fields, so :func:`dispatch`
picks the compiled kernel when every callback is a numba dispatcher and the
kernel's ``py_func`` otherwise.
"""
import os

_FLAG = "ADJOINTLAB_DISABLE_NUMBA"

try:
    import numba
    from numba.core.dispatcher import Dispatcher
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    Dispatcher = ()
    HAS_NUMBA = False


def _disabled_by_env():
    return os.environ.get(_FLAG, "").strip().lower() not in ("", "0", "false", "no")


ENABLED = HAS_NUMBA and not _disabled_by_env()


def jit(fn=None, **kwargs):
    """``numba.njit`` when acceleration is enabled, identity otherwise."""
    def wrap(f):
        if not ENABLED:
            return f
        return numba.njit(**kwargs)(f)

    if fn is None:
        return wrap
    return wrap(fn)


def is_jitted(fn):
    return ENABLED and isinstance(fn, Dispatcher)


def python_impl(fn):
    """The interpreted function behind a dispatcher (or ``fn`` itself)."""
    return getattr(fn, "py_func", fn)


def dispatch(kernel, *callbacks):
    """Select the compiled or interpreted variant of ``kernel``."""
    if all(is_jitted(cb) for cb in callbacks):
        return kernel
    return python_impl(kernel)


def backend_name():
    return "numba" if ENABLED else "numpy"
