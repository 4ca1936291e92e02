"""Backend selection for the hot loops.

The compiled extension ``_ckernels`` is used when it was built; otherwise,
or when ``DOGDLAB_PURE`` is set, the numpy implementation in
``_pykernels`` is used. Both give bit-identical results.
"""
import os
from types import ModuleType

from . import _pykernels

GT = _pykernels.GT
DOGD = _pykernels.DOGD
INDEPENDENT = _pykernels.INDEPENDENT

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _ckernels is not None else [])


def get_backend(name: str) -> ModuleType:
    if name == "python":
        return _pykernels
    if name == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


if _ckernels is not None and not os.environ.get("DOGDLAB_PURE"):
    BACKEND = "cython"
else:
    BACKEND = "python"

_impl = get_backend(BACKEND)
mix = _pykernels.mix
ridge_network_run = _impl.ridge_network_run
ridge_ogd_paths = _impl.ridge_ogd_paths
