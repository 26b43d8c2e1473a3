"""Dispatch between the numba and numpy implementations of the hot kernels."""
from types import SimpleNamespace

from . import _accel, kernels_np

if _accel.NUMBA_INSTALLED:
    from . import kernels_nb
else:  # pragma: no cover
    kernels_nb = None

_BACKENDS = {"numpy": kernels_np}
if kernels_nb is not None:
    _BACKENDS["numba"] = kernels_nb

_active = SimpleNamespace(name=_accel.backend_name())


def available_backends():
    return sorted(_BACKENDS)


def get_backend():
    return _active.name


def set_backend(name):
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _active.name = name


def lf_step(*args):
    return _BACKENDS[_active.name].lf_step(*args)


def interp_points(*args):
    return _BACKENDS[_active.name].interp_points(*args)


def godunov_step(*args):
    return _BACKENDS[_active.name].godunov_step(*args)
