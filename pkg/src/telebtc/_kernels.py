"""Nonce-search kernels for toy proof-of-work mining.

Two interchangeable backends implement the same double-SHA-256 nonce scan over
an 80-byte header whose first 76 bytes are fixed:

* ``numba``  - scalar loop compiled with ``@njit`` (default when numba imports)
* ``numpy``  - batch-vectorised SHA-256 over many nonces at once

Set ``TELEBTC_NO_NUMBA=1`` to force the numpy path.  Both return the smallest
nonce in ``[start, start + count)`` whose hash, read as a little-endian 256-bit
integer, is ``<= target``; or ``-1`` if none exists.
"""

from __future__ import annotations

import os
import struct

import numpy as np

try:  # pragma: no cover - exercised implicitly by whichever backend is active
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("TELEBTC_NO_NUMBA", "") not in ("1", "true", "yes")

_K = np.array([
    0x428A2F98, 0x71374491, 0xB5C0FBCF, 0xE9B5DBA5, 0x3956C25B, 0x59F111F1, 0x923F82A4, 0xAB1C5ED5,
    0xD807AA98, 0x12835B01, 0x243185BE, 0x550C7DC3, 0x72BE5D74, 0x80DEB1FE, 0x9BDC06A7, 0xC19BF174,
    0xE49B69C1, 0xEFBE4786, 0x0FC19DC6, 0x240CA1CC, 0x2DE92C6F, 0x4A7484AA, 0x5CB0A9DC, 0x76F988DA,
    0x983E5152, 0xA831C66D, 0xB00327C8, 0xBF597FC7, 0xC6E00BF3, 0xD5A79147, 0x06CA6351, 0x14292967,
    0x27B70A85, 0x2E1B2138, 0x4D2C6DFC, 0x53380D13, 0x650A7354, 0x766A0ABB, 0x81C2C92E, 0x92722C85,
    0xA2BFE8A1, 0xA81A664B, 0xC24B8B70, 0xC76C51A3, 0xD192E819, 0xD6990624, 0xF40E3585, 0x106AA070,
    0x19A4C116, 0x1E376C08, 0x2748774C, 0x34B0BCB5, 0x391C0CB3, 0x4ED8AA4A, 0x5B9CCA4F, 0x682E6FF3,
    0x748F82EE, 0x78A5636F, 0x84C87814, 0x8CC70208, 0x90BEFFFA, 0xA4506CEB, 0xBEF9A3F7, 0xC67178F2,
], dtype=np.uint32)

_IV = np.array([0x6A09E667, 0xBB67AE85, 0x3C6EF372, 0xA54FF53A,
                0x510E527F, 0x9B05688C, 0x1F83D9AB, 0x5BE0CD19], dtype=np.uint32)

NUMPY_BATCH = 4096


# ---------------------------------------------------------------- numpy path

def _rotr_np(x, n):
    return (x >> np.uint32(n)) | (x << np.uint32(32 - n))


def _compress_np(state, words):
    """One SHA-256 compression, vectorised over the trailing axis.

    ``state``: list of 8 uint32 arrays; ``words``: list of 16 uint32 arrays.
    """
    w = list(words)
    for t in range(16, 64):
        s0 = _rotr_np(w[t - 15], 7) ^ _rotr_np(w[t - 15], 18) ^ (w[t - 15] >> np.uint32(3))
        s1 = _rotr_np(w[t - 2], 17) ^ _rotr_np(w[t - 2], 19) ^ (w[t - 2] >> np.uint32(10))
        w.append(w[t - 16] + s0 + w[t - 7] + s1)
    a, b, c, d, e, f, g, h = state
    for t in range(64):
        s1 = _rotr_np(e, 6) ^ _rotr_np(e, 11) ^ _rotr_np(e, 25)
        ch = (e & f) ^ (~e & g)
        t1 = h + s1 + ch + _K[t] + w[t]
        s0 = _rotr_np(a, 2) ^ _rotr_np(a, 13) ^ _rotr_np(a, 22)
        maj = (a & b) ^ (a & c) ^ (b & c)
        t2 = s0 + maj
        h, g, f, e, d, c, b, a = g, f, e, d + t1, c, b, a, t1 + t2
    return [state[0] + a, state[1] + b, state[2] + c, state[3] + d,
            state[4] + e, state[5] + f, state[6] + g, state[7] + h]


def _bswap32(x):
    x = x.astype(np.uint32)
    return ((x & np.uint32(0xFF)) << np.uint32(24)) | ((x & np.uint32(0xFF00)) << np.uint32(8)) \
        | ((x >> np.uint32(8)) & np.uint32(0xFF00)) | (x >> np.uint32(24))


_K_INT = [int(k) for k in _K]
_M32 = 0xFFFFFFFF


def _rotr_int(x: int, n: int) -> int:
    return ((x >> n) | (x << (32 - n))) & _M32


def midstate(prefix64: bytes) -> np.ndarray:
    """SHA-256 state after absorbing the first 64-byte block.

    Runs once per header template, so plain integers beat array dispatch here.
    """
    w = list(struct.unpack(">16I", prefix64))
    for t in range(16, 64):
        s0 = _rotr_int(w[t - 15], 7) ^ _rotr_int(w[t - 15], 18) ^ (w[t - 15] >> 3)
        s1 = _rotr_int(w[t - 2], 17) ^ _rotr_int(w[t - 2], 19) ^ (w[t - 2] >> 10)
        w.append((w[t - 16] + s0 + w[t - 7] + s1) & _M32)
    iv = [int(v) for v in _IV]
    a, b, c, d, e, f, g, h = iv
    for t in range(64):
        s1 = _rotr_int(e, 6) ^ _rotr_int(e, 11) ^ _rotr_int(e, 25)
        ch = (e & f) ^ (~e & g)
        t1 = (h + s1 + ch + _K_INT[t] + w[t]) & _M32
        s0 = _rotr_int(a, 2) ^ _rotr_int(a, 13) ^ _rotr_int(a, 22)
        maj = (a & b) ^ (a & c) ^ (b & c)
        h, g, f, e, d, c, b, a = g, f, e, (d + t1) & _M32, c, b, a, (t1 + s0 + maj) & _M32
    return np.array([(x + y) & _M32 for x, y in zip(iv, (a, b, c, d, e, f, g, h))],
                    dtype=np.uint32)


def _search_numpy(mid, tail, target_words, start, count):
    end = start + count
    n0 = start
    zero_cache: dict[int, np.ndarray] = {}
    while n0 < end:
        n = min(NUMPY_BATCH, end - n0)
        if n not in zero_cache:
            zero_cache[n] = np.zeros(n, dtype=np.uint32)
        z = zero_cache[n]
        nonces = np.arange(n0, n0 + n, dtype=np.uint64).astype(np.uint32)
        with np.errstate(over="ignore"):
            words = [z + tail[0], z + tail[1], z + tail[2], _bswap32(nonces),
                     z + np.uint32(0x80000000)] + [z] * 10 + [z + np.uint32(640)]
            first = _compress_np([z + v for v in mid], words)
            words2 = first + [z + np.uint32(0x80000000)] + [z] * 6 + [z + np.uint32(256)]
            second = _compress_np([z + v for v in _IV], words2)
        # lexicographic <= over the 8 most-significant-first words
        le = np.ones(n, dtype=bool)
        undecided = np.ones(n, dtype=bool)
        for i in range(8):
            hw = _bswap32(second[7 - i])
            tw = target_words[i]
            lt = undecided & (hw < tw)
            gt = undecided & (hw > tw)
            le &= ~gt
            undecided &= ~(lt | gt)
        hits = np.flatnonzero(le)
        if hits.size:
            return n0 + int(hits[0])
        n0 += n
    return -1


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _rotr(x, n):
        return np.uint32((x >> np.uint32(n)) | (x << np.uint32(32 - n)))

    @njit(cache=True, nogil=True)
    def _compress_nb(state, w, out):
        for t in range(16, 64):
            s0 = _rotr(w[t - 15], 7) ^ _rotr(w[t - 15], 18) ^ (w[t - 15] >> np.uint32(3))
            s1 = _rotr(w[t - 2], 17) ^ _rotr(w[t - 2], 19) ^ (w[t - 2] >> np.uint32(10))
            w[t] = np.uint32(w[t - 16] + s0 + w[t - 7] + s1)
        a = state[0]
        b = state[1]
        c = state[2]
        d = state[3]
        e = state[4]
        f = state[5]
        g = state[6]
        h = state[7]
        for t in range(64):
            s1 = _rotr(e, 6) ^ _rotr(e, 11) ^ _rotr(e, 25)
            ch = (e & f) ^ (~e & g)
            t1 = np.uint32(h + s1 + ch + _K[t] + w[t])
            s0 = _rotr(a, 2) ^ _rotr(a, 13) ^ _rotr(a, 22)
            maj = (a & b) ^ (a & c) ^ (b & c)
            t2 = np.uint32(s0 + maj)
            h = g
            g = f
            f = e
            e = np.uint32(d + t1)
            d = c
            c = b
            b = a
            a = np.uint32(t1 + t2)
        out[0] = np.uint32(state[0] + a)
        out[1] = np.uint32(state[1] + b)
        out[2] = np.uint32(state[2] + c)
        out[3] = np.uint32(state[3] + d)
        out[4] = np.uint32(state[4] + e)
        out[5] = np.uint32(state[5] + f)
        out[6] = np.uint32(state[6] + g)
        out[7] = np.uint32(state[7] + h)

    @njit(cache=True, nogil=True)
    def _bswap(x):
        return np.uint32(((x & np.uint32(0xFF)) << np.uint32(24))
                         | ((x & np.uint32(0xFF00)) << np.uint32(8))
                         | ((x >> np.uint32(8)) & np.uint32(0xFF00))
                         | (x >> np.uint32(24)))

    @njit(cache=True, nogil=True)
    def _search_numba(mid, tail, target_words, start, count):
        w = np.zeros(64, dtype=np.uint32)
        first = np.zeros(8, dtype=np.uint32)
        second = np.zeros(8, dtype=np.uint32)
        for k in range(count):
            nonce = np.uint32((start + k) & 0xFFFFFFFF)
            w[0] = tail[0]
            w[1] = tail[1]
            w[2] = tail[2]
            w[3] = _bswap(nonce)
            w[4] = np.uint32(0x80000000)
            for i in range(5, 15):
                w[i] = np.uint32(0)
            w[15] = np.uint32(640)
            _compress_nb(mid, w, first)
            for i in range(8):
                w[i] = first[i]
            w[8] = np.uint32(0x80000000)
            for i in range(9, 15):
                w[i] = np.uint32(0)
            w[15] = np.uint32(256)
            _compress_nb(_IV, w, second)
            ok = True
            for i in range(8):
                hw = _bswap(second[7 - i])
                if hw < target_words[i]:
                    break
                if hw > target_words[i]:
                    ok = False
                    break
            if ok:
                return start + k
        return -1


def _target_words(target: int) -> np.ndarray:
    return np.array([(target >> (32 * (7 - i))) & 0xFFFFFFFF for i in range(8)], dtype=np.uint32)


def search_nonce(prefix76: bytes, target: int, start: int = 0, count: int = 1 << 32,
                 backend: str | None = None) -> int:
    """Scan nonces for a header whose first 76 bytes are ``prefix76``."""
    if len(prefix76) != 76:
        raise ValueError("prefix must be the first 76 header bytes")
    count = min(count, (1 << 32) - start)
    if count <= 0:
        return -1
    mid = midstate(prefix76[:64])
    tail = np.frombuffer(prefix76[64:76], dtype=">u4").astype(np.uint32)
    tw = _target_words(target)
    backend = backend or ("numba" if USE_NUMBA else "numpy")
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        return int(_search_numba(mid, tail, tw, start, count))
    if backend == "numpy":
        return _search_numpy(mid, tail, tw, start, count)
    raise ValueError(f"unknown backend {backend!r}")


def active_backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
