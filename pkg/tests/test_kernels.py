"""Batch kernels agree with the scalar arithmetic bit-for-bit."""

import numpy as np

from smart_tcp import kernels
from smart_tcp.tcp_core import SEQ_MOD, seq_add, seq_lt


def rand_u32(rng, n):
    return rng.integers(0, 2**32, size=n, dtype=np.uint32)


def test_batch_seq_add_matches_scalar():
    rng = np.random.default_rng(0)
    a, n = rand_u32(rng, 5000), rand_u32(rng, 5000)
    out = kernels.batch_seq_add(a, n)
    for i in range(0, 5000, 37):
        assert int(out[i]) == seq_add(int(a[i]), int(n[i]))


def test_batch_seq_add_matches_wide_reference():
    rng = np.random.default_rng(1)
    a, n = rand_u32(rng, 200_000), rand_u32(rng, 200_000)
    out = kernels.batch_seq_add(a, n)
    ref = (a.astype(np.uint64) + n.astype(np.uint64)) % SEQ_MOD
    assert np.array_equal(out.astype(np.uint64), ref)


def test_batch_seq_lt_matches_scalar():
    rng = np.random.default_rng(2)
    a, b = rand_u32(rng, 5000), rand_u32(rng, 5000)
    out = kernels.batch_seq_lt(a, b)
    for i in range(0, 5000, 37):
        assert bool(out[i]) == seq_lt(int(a[i]), int(b[i]))


def test_batch_alu_ack_matches_wide_reference():
    rng = np.random.default_rng(3)
    n = 200_000
    seq = rand_u32(rng, n)
    payload = rng.integers(0, 65536, size=n, dtype=np.uint32)
    syn = rng.integers(0, 2, size=n, dtype=np.uint32)
    fin = rng.integers(0, 2, size=n, dtype=np.uint32)
    out = kernels.batch_alu_ack(seq, payload, syn, fin)
    ref = (
        seq.astype(np.uint64) + payload.astype(np.uint64) + syn.astype(np.uint64) + fin.astype(np.uint64)
    ) % SEQ_MOD
    assert np.array_equal(out.astype(np.uint64), ref)


def test_numpy_fallback_agrees_with_active_path():
    rng = np.random.default_rng(4)
    a, b = rand_u32(rng, 10_000), rand_u32(rng, 10_000)
    assert np.array_equal(kernels.batch_seq_add(a, b), kernels._np_seq_add(a, b))
    assert np.array_equal(kernels.batch_seq_lt(a, b), kernels._np_seq_lt(a, b))
    payload = rng.integers(0, 1500, size=10_000, dtype=np.uint32)
    syn = rng.integers(0, 2, size=10_000, dtype=np.uint32)
    fin = rng.integers(0, 2, size=10_000, dtype=np.uint32)
    assert np.array_equal(
        kernels.batch_alu_ack(a, payload, syn, fin),
        kernels._np_alu_ack(a, payload, syn, fin),
    )
