import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from telebtc import _kernels
from telebtc.btc_headers import MAINNET_GENESIS, bits_to_target, encode_header

BACKENDS = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])


def first_nonce_hashlib(prefix76, target, start, count):
    for nonce in range(start, start + count):
        d = hashlib.sha256(hashlib.sha256(prefix76 + struct.pack("<I", nonce)).digest()).digest()
        if int.from_bytes(d, "little") <= target:
            return nonce
    return -1


def test_midstate_matches_reference_compression():
    # a 64-byte block padded to 128 bytes hashes to compress(midstate, padding block)
    block = bytes(range(64))
    mid = _kernels.midstate(block)
    pad = [0x80000000] + [0] * 14 + [512]
    out = _kernels._compress_np([np.array([v], dtype=np.uint32) for v in mid],
                                [np.array([v], dtype=np.uint32) for v in pad])
    digest = b"".join(int(x[0]).to_bytes(4, "big") for x in out)
    assert digest == hashlib.sha256(block).digest()


@pytest.mark.parametrize("backend", BACKENDS)
def test_genesis_nonce_found_near_known_value(backend):
    prefix = encode_header(MAINNET_GENESIS)[:76]
    target = bits_to_target(MAINNET_GENESIS.bits)
    start = MAINNET_GENESIS.nonce - 300
    assert _kernels.search_nonce(prefix, target, start, 1000, backend) == MAINNET_GENESIS.nonce


@pytest.mark.parametrize("backend", BACKENDS)
def test_exhausted_range_returns_minus_one(backend):
    prefix = encode_header(MAINNET_GENESIS)[:76]
    target = bits_to_target(MAINNET_GENESIS.bits)
    assert _kernels.search_nonce(prefix, target, 0, 500, backend) == -1
    assert _kernels.search_nonce(prefix, target, 1 << 32, 10, backend) == -1


@settings(max_examples=30, deadline=None)
@given(st.binary(min_size=76, max_size=76), st.integers(236, 252), st.integers(0, 1 << 20))
def test_backends_agree_with_hashlib(prefix, log_target, start):
    target = (1 << log_target) - 1
    want = first_nonce_hashlib(prefix, target, start, 200)
    for backend in BACKENDS:
        assert _kernels.search_nonce(prefix, target, start, 200, backend) == want


def test_bad_inputs():
    with pytest.raises(ValueError):
        _kernels.search_nonce(b"x" * 75, 1)
    with pytest.raises(ValueError):
        _kernels.search_nonce(b"x" * 76, 1, 0, 1, "gpu")
