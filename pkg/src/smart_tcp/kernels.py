"""Batch kernels for 32-bit sequence arithmetic.

Used by the bulk verification suites and benchmarks, where millions of
wraparound additions/comparisons dominate runtime. The numba-compiled path
is the default when numba imports; setting SMART_TCP_PURE_NUMPY=1 (or a
missing numba install) selects the pure-numpy fallback. Both paths are
bit-identical; scalar semantics live in tcp_core/alu.
"""

from __future__ import annotations

import os

import numpy as np

_FORCE_NUMPY = os.environ.get("SMART_TCP_PURE_NUMPY", "") not in ("", "0")

try:  # pragma: no cover - import probe
    if _FORCE_NUMPY:
        raise ImportError("pure-numpy path forced")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def _np_seq_add(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return (a.astype(np.uint32) + n.astype(np.uint32)).astype(np.uint32)


def _np_seq_lt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (b.astype(np.uint32) - a.astype(np.uint32)).astype(np.uint32)
    return (d > 0) & (d < np.uint32(2**31))


def _np_alu_ack(seq: np.ndarray, payload_len: np.ndarray, syn: np.ndarray, fin: np.ndarray) -> np.ndarray:
    consumed = payload_len.astype(np.uint32) + syn.astype(np.uint32) + fin.astype(np.uint32)
    return (seq.astype(np.uint32) + consumed).astype(np.uint32)


@njit(cache=True)
def _nb_seq_add(a, n):  # pragma: no cover - compiled
    out = np.empty(a.shape[0], dtype=np.uint32)
    for i in range(a.shape[0]):
        out[i] = np.uint32(a[i] + n[i])
    return out


@njit(cache=True)
def _nb_seq_lt(a, b):  # pragma: no cover - compiled
    out = np.empty(a.shape[0], dtype=np.bool_)
    half = np.uint32(2**31)
    for i in range(a.shape[0]):
        d = np.uint32(b[i] - a[i])
        out[i] = d > 0 and d < half
    return out


@njit(cache=True)
def _nb_alu_ack(seq, payload_len, syn, fin):  # pragma: no cover - compiled
    out = np.empty(seq.shape[0], dtype=np.uint32)
    for i in range(seq.shape[0]):
        out[i] = np.uint32(seq[i] + payload_len[i] + syn[i] + fin[i])
    return out


def _as_u32(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.uint32))


def batch_seq_add(a, n) -> np.ndarray:
    """Vectorized seq_add over uint32 arrays."""
    a, n = _as_u32(a), _as_u32(n)
    if HAVE_NUMBA:
        return _nb_seq_add(a, n)
    return _np_seq_add(a, n)


def batch_seq_lt(a, b) -> np.ndarray:
    """Vectorized serial-order comparison."""
    a, b = _as_u32(a), _as_u32(b)
    if HAVE_NUMBA:
        return _nb_seq_lt(a, b)
    return _np_seq_lt(a, b)


def batch_alu_ack(seq, payload_len, syn, fin) -> np.ndarray:
    """Vectorized acknowledgment computation: seq + payload + SYN + FIN."""
    seq, payload_len = _as_u32(seq), _as_u32(payload_len)
    syn, fin = _as_u32(syn), _as_u32(fin)
    if HAVE_NUMBA:
        return _nb_alu_ack(seq, payload_len, syn, fin)
    return _np_alu_ack(seq, payload_len, syn, fin)
