"""ctypes bridge to the optional native alignment kernel.

The kernel ships as a separate cdylib exposing
``int align_lattice(const float*, int32 S, int32 T, int32* out_durations)``
(0 on success). Durations and path must match the reference implementation
exactly; the score is recomputed on the Python side by summing lattice
entries along the returned path, which keeps conformance independent of the
kernel's internal summation order.
"""

from __future__ import annotations

import ctypes
import os
from pathlib import Path

import numpy as np

from .align import AlignmentResult, _check_sizes

KERNEL_LIB_ENV = "LANDSYN_MAS_KERNEL_LIB"

_SEARCH_RELATIVE = (
    "kernel/target/release/libalign_kernel.so",
    "kernel/target/debug/libalign_kernel.so",
)

_cached: "NativeAligner | None | bool" = False  # False = not probed yet


class NativeAligner:
    def __init__(self, lib: ctypes.CDLL):
        self._fn = lib.align_lattice
        self._fn.restype = ctypes.c_int
        self._fn.argtypes = [
            ctypes.POINTER(ctypes.c_float),
            ctypes.c_int32,
            ctypes.c_int32,
            ctypes.POINTER(ctypes.c_int32),
        ]

    def mas_align(self, lattice: np.ndarray) -> AlignmentResult:
        lat32 = np.ascontiguousarray(lattice, dtype=np.float32)
        s_count, t_count = lat32.shape
        _check_sizes(s_count, t_count)
        durations = np.zeros(s_count, dtype=np.int32)
        rc = self._fn(
            lat32.ctypes.data_as(ctypes.POINTER(ctypes.c_float)),
            s_count,
            t_count,
            durations.ctypes.data_as(ctypes.POINTER(ctypes.c_int32)),
        )
        if rc != 0:
            raise RuntimeError(f"native alignment kernel failed with code {rc}")
        path = np.repeat(np.arange(s_count, dtype=np.int64), durations)
        lat64 = np.asarray(lattice, dtype=np.float64)
        score = float(lat64[path, np.arange(t_count)].sum())
        return AlignmentResult(
            durations=durations.astype(np.int64), path=path, total_log_likelihood=score
        )


def _candidate_paths() -> list[Path]:
    paths = []
    env = os.environ.get(KERNEL_LIB_ENV)
    if env:
        paths.append(Path(env))
    here = Path(__file__).resolve()
    for root in (Path.cwd(), *here.parents):
        for rel in _SEARCH_RELATIVE:
            paths.append(root / rel)
    return paths


def load_kernel(path: str | Path | None = None) -> NativeAligner | None:
    """Load the kernel library, or return None when it is absent."""
    global _cached
    if path is None and _cached is not False:
        return _cached
    candidates = [Path(path)] if path is not None else _candidate_paths()
    for cand in candidates:
        if cand.is_file():
            try:
                aligner = NativeAligner(ctypes.CDLL(str(cand)))
            except OSError:
                continue
            if path is None:
                _cached = aligner
            return aligner
    if path is None:
        _cached = None
    return None
