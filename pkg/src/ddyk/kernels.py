"""Backend selection for the numerical hot loops.

The compiled extension ``ddyk._ckernels`` is used when it imports; otherwise
the pure-Python twins in ``ddyk._pykernels`` are used. Set the environment
variable ``DDYK_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("DDYK_PURE_PYTHON", "") != "1":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels


def use_backend(name):
    """Switch backends at runtime (``"cython"`` or ``"python"``).

    Raises:
        ImportError: if the compiled extension was requested but is absent.
    """
    global _impl, BACKEND
    if name == "python":
        _impl = _pykernels
    elif name == "cython":
        from . import _ckernels

        _impl = _ckernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name


def available_backends():
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401

        names.append("cython")
    except ImportError:  # pragma: no cover
        pass
    return names


def tank_rk4(x, p_sp, tau_p, tau_in, tau_out, tau_m, area_tank, k_out, f_max,
             dt, substeps):
    _impl.tank_rk4(x, float(p_sp), float(tau_p), float(tau_in), float(tau_out),
                   float(tau_m), float(area_tank), float(k_out), float(f_max),
                   float(dt), int(substeps))


def ddsim(g_u, g_y, u_win, y_win, u_seq):
    return _impl.ddsim(
        np.ascontiguousarray(g_u, dtype=float),
        np.ascontiguousarray(g_y, dtype=float),
        np.ascontiguousarray(u_win, dtype=float),
        np.ascontiguousarray(y_win, dtype=float),
        np.ascontiguousarray(u_seq, dtype=float),
    )


def lti_sim(A, B, C, D, u):
    return _impl.lti_sim(
        np.ascontiguousarray(A, dtype=float),
        np.ascontiguousarray(np.reshape(B, -1), dtype=float),
        np.ascontiguousarray(np.reshape(C, -1), dtype=float),
        float(D),
        np.ascontiguousarray(u, dtype=float),
    )
