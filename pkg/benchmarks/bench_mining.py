"""Nonce-scan throughput of the numba kernel against the numpy fallback.

Scans a fixed window with an unreachable target so both backends do the
same full amount of work, then checks they agree on the mainnet genesis nonce.
"""

from __future__ import annotations

import argparse
import time

from telebtc._kernels import HAVE_NUMBA, search_nonce
from telebtc.btc_headers import MAINNET_GENESIS, bits_to_target, encode_header


def scan_rate(prefix: bytes, count: int, backend: str, repeat: int) -> float:
    search_nonce(prefix, 0, 0, 64, backend=backend)  # warm up / compile
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        assert search_nonce(prefix, 0, 0, count, backend=backend) == -1
        best = min(best, time.perf_counter() - t)
    return count / best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--nonces", type=int, default=1 << 20)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    prefix = encode_header(MAINNET_GENESIS)[:76]
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    rates = {b: scan_rate(prefix, args.nonces, b, args.repeat) for b in backends}

    target = bits_to_target(MAINNET_GENESIS.bits)
    lo = MAINNET_GENESIS.nonce - 5000
    found = {b: search_nonce(prefix, target, lo, 10_000, backend=b) for b in backends}
    assert set(found.values()) == {MAINNET_GENESIS.nonce}, found

    print("bench_mining")
    print(f"nonces={args.nonces} repeat={args.repeat}")
    for b, r in rates.items():
        print(f"{b}_hashes_per_sec={r:,.0f}")
    if "numba" in rates:
        print(f"speedup={rates['numba'] / rates['numpy']:.1f}x")
    print(f"genesis_nonce={MAINNET_GENESIS.nonce} agreed")


if __name__ == "__main__":
    main()
