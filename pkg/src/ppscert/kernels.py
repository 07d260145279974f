"""Backend selection for the hot loops.

The compiled extension is used when it imported; otherwise the numpy
reference kernels run. ``PPSCERT_BACKEND=python`` forces the fallback.
"""
from __future__ import annotations

import contextlib
import os
from types import ModuleType

from ppscert import _pykernels

try:
    from ppscert import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_NAMES = ("car_following_batch", "car_following_interval", "grid_rollout_batch", "grid_enumerate")


def available_backends() -> list[str]:
    return ["python"] + (["compiled"] if _compiled is not None else [])


def _resolve(name: str | None) -> ModuleType:
    name = (name or "").strip().lower() or ("compiled" if _compiled is not None else "python")
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not available; reinstall with Cython present")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


_active: ModuleType = _resolve(os.environ.get("PPSCERT_BACKEND"))


def backend() -> str:
    return "compiled" if _active is _compiled and _compiled is not None else "python"


def set_backend(name: str) -> None:
    global _active
    _active = _resolve(name)


@contextlib.contextmanager
def use_backend(name: str):
    global _active
    previous = _active
    _active = _resolve(name)
    try:
        yield
    finally:
        _active = previous


def car_following_batch(*args, **kwargs):
    return _active.car_following_batch(*args, **kwargs)


def car_following_interval(*args, **kwargs):
    return _active.car_following_interval(*args, **kwargs)


def grid_rollout_batch(*args, **kwargs):
    return _active.grid_rollout_batch(*args, **kwargs)


def grid_enumerate(*args, **kwargs):
    return _active.grid_enumerate(*args, **kwargs)
