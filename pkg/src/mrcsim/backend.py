"""Kernel backend selection.

The hot loops exist twice: numba ``@njit`` kernels and a pure-numpy
vectorized fallback.  ``MRCSIM_BACKEND=numpy|numba`` forces one; the
default is numba when it imports, numpy otherwise.
"""

from __future__ import annotations

import os
import warnings

from . import kernels_numpy

_ENV_VAR = "MRCSIM_BACKEND"

try:
    from . import kernels_numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    kernels_numba = None
    _HAVE_NUMBA = False


class NumpyBackend:
    name = "numpy"

    @staticmethod
    def euler_step(x, normals, consts):
        kernels_numpy.euler_chunk_step(x, normals, consts)

    @staticmethod
    def direct_step(x, uniforms, consts):
        kernels_numpy.second_order_chunk_step(x, uniforms, consts)


class NumbaBackend:
    name = "numba"

    @staticmethod
    def euler_step(x, normals, consts):
        kernels_numba.euler_chunk_step(
            x, normals, consts.drift_const, consts.drift_decay, consts.a_sqrt_h
        )

    @staticmethod
    def direct_step(x, uniforms, consts):
        kernels_numba.second_order_chunk_step(
            x,
            uniforms,
            consts.xi_decay,
            consts.xi_const,
            consts.taus,
            consts.z_threshold,
            consts.em_quarter,
            consts.em_half,
            consts.e_half,
            consts.g,
        )


def available_backends():
    names = ["numpy"]
    if _HAVE_NUMBA:
        names.append("numba")
    return names


def get_backend(name=None):
    if name is None:
        name = os.environ.get(_ENV_VAR, "")
    name = (name or "").strip().lower()
    if not name:
        name = "numba" if _HAVE_NUMBA else "numpy"
    if name == "numba":
        if not _HAVE_NUMBA:
            warnings.warn("numba unavailable; falling back to the numpy backend")
            return NumpyBackend
        return NumbaBackend
    if name == "numpy":
        return NumpyBackend
    raise ValueError(f"unknown backend {name!r}; choose from numpy, numba")


def set_workers(n):
    """Cap kernel parallelism; has no effect on results."""
    if n is None:
        return
    if _HAVE_NUMBA:
        import numba

        numba.set_num_threads(max(1, int(n)))
