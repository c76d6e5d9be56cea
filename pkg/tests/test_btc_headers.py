import hashlib
import struct
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from telebtc.btc_headers import (
    MAINNET_GENESIS,
    BlockHeader,
    EmptyLeaves,
    Hash256,
    IndexOutOfRange,
    MerkleProof,
    NegativeTarget,
    TargetOverflow,
    WrongLength,
    ZERO_HASH,
    bits_to_target,
    decode_header,
    encode_header,
    hash_to_int,
    header_hash,
    meets_pow,
    merkle_branch,
    merkle_root,
    read_headers,
    retarget,
    target_to_bits,
    verify_merkle_branch,
    write_headers,
)

FIXTURES = Path(__file__).parent / "fixtures"

GENESIS_HASH = "000000000019d6689c085ae165831e934ff763ae46a2a6c172b3f1b60a8ce26f"
# Canonical 80-byte mainnet genesis header as printed by archival full nodes.
GENESIS_HEX = (
    "0100000000000000000000000000000000000000000000000000000000000000"
    "000000003ba3edfd7a7b12b27ac72c3e67768f617fc81bc3888a51323a9fb8aa"
    "4b1e5e4a29ab5f49ffff001d1dac2b7c"
)

# Testnet block 1518605: header bytes, hash, and its 17 txids with the root they commit to.
TESTNET_HEADER_HEX = (
    "00008020f48ef3e1ce4aed6cfbf650aa3b0df508c60348360dc067958100000000000000"
    "ba23b5e51b9ceba3ab87b2bf663a537299c0b9bddca0daafaa40965437d32789e1d9eb5c"
    "453e011ac097760a"
)
TESTNET_HASH = "00000000000000dde9c207dad944f56cb9456e7a8ea5b6cb2f77d9b7be7fa14e"
TESTNET_ROOT = "8927d337549640aaafdaa0dcbdb9c09972533a66bfb287aba3eb9c1be5b523ba"
TESTNET_TXIDS = """
32a31fb3f8596e5de0a40a53748839d15e0a1a1d264da5b7dacec9209a59fd2a
45c5dcbe62075d366b87fa375fb919c7a8ede24eba0a3a094df491aef55184ca
170938fa8cd0d26e796d0b407eaa2d40db8a8c0cb660f68bc0df2cc65ffc3990
d0d6241f43a27980da30ce66250bea94d852b77f5413a8e031a5bb545e4be80e
171a04ce755796d033e159bea5c9316555bfee4af21ee1e04723581a293f72b6
4bb6f7b0ecb48430d123849f254f59e9f113c2f47bbf883e3729541c92ac9267
dbcf66ea7f3c5158df7a9495fb4fae099118ff33df0656ecf5d4aef5ad8d22fb
efe24291c27f4602f70f2433548f11e7ac74c8eb7e23d18b21d9c14882400224
6a93578dcd8d580c6d23f627d54d34b3698631bffdf95463f9700f87b2ed8d36
1981dd6950d3674f216d2e2fbbd09d7becd58ddbf33e3c646524088ae1a32542
80d54e4f14b39d98965d9354d34a9663490477b04961c665cb9d9953006bf949
de4fb58f8574e2395c074765acd78d862cfc21fbcc2402f026c4c4bc1aa11369
b3e7d54ccb77ab183f43faf25993a8798e0358c4d67b34989f65d395fbf7866a
3ede276d334f763617ef8f45cc58219eb369df2ed9cf32be86f1c88b94af676e
b244488bd9bd57fb33ea1c3872d510b64abdce2245e17a6607653e0b17628c7a
efb48aaeb133cca84af2d2fb9c13399db1f9f1fdb85b4210a936c545cd3124e7
232aaff768a2653db16fbe84504ff7d59396eb08663d2f5dda1d1587ce297df8
""".split()

hashes = st.binary(min_size=32, max_size=32).map(Hash256)
headers = st.builds(
    BlockHeader,
    version=st.integers(-(1 << 31), (1 << 31) - 1),
    parent_hash=hashes,
    merkle_root=hashes,
    timestamp=st.integers(0, (1 << 32) - 1),
    bits=st.integers(0, (1 << 32) - 1),
    nonce=st.integers(0, (1 << 32) - 1),
)


def _h(n: int) -> Hash256:
    return Hash256(hashlib.sha256(n.to_bytes(4, "little")).digest())


# --- codec -----------------------------------------------------------------

def test_zero_header_encodes_to_80_zero_bytes():
    zero = BlockHeader(0, ZERO_HASH, ZERO_HASH, 0, 0, 0)
    assert encode_header(zero) == bytes(80)
    assert decode_header(bytes(80)) == zero


def test_genesis_serialization_matches_archival_bytes():
    assert encode_header(MAINNET_GENESIS).hex() == GENESIS_HEX
    assert decode_header(bytes.fromhex(GENESIS_HEX)) == MAINNET_GENESIS


def test_genesis_hash_against_independent_sha256():
    raw = bytes.fromhex(GENESIS_HEX)
    digest = hashlib.sha256(hashlib.sha256(raw).digest()).digest()
    assert digest[::-1].hex() == GENESIS_HASH
    assert str(header_hash(MAINNET_GENESIS)) == GENESIS_HASH


def test_archival_testnet_header_round_trip_and_hash():
    raw = bytes.fromhex(TESTNET_HEADER_HEX)
    h = decode_header(raw)
    assert h.version == 545259520
    assert h.timestamp == 1558960609
    assert h.bits == 0x1A013E45
    assert h.nonce == 175544256
    assert str(h.merkle_root) == TESTNET_ROOT
    assert str(header_hash(h)) == TESTNET_HASH
    assert encode_header(h) == raw
    assert meets_pow(h)


@pytest.mark.parametrize("n", [0, 79, 81, 160])
def test_decode_rejects_wrong_length(n):
    with pytest.raises(WrongLength):
        decode_header(bytes(n))


@settings(max_examples=1000)
@given(headers)
def test_encode_decode_round_trip(h):
    assert decode_header(encode_header(h)) == h


def test_nonce_changes_hash():
    assert header_hash(MAINNET_GENESIS) != header_hash(MAINNET_GENESIS.with_nonce(0))


def test_read_write_headers(tmp_path):
    path = tmp_path / "h.bin"
    write_headers([MAINNET_GENESIS] * 3, path)
    assert path.stat().st_size == 240
    assert read_headers(path) == [MAINNET_GENESIS] * 3
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(WrongLength):
        read_headers(path)


def test_first_five_mainnet_headers_link_and_meet_pow():
    hs = read_headers(FIXTURES / "mainnet_headers_0-4.bin")
    assert len(hs) == 5
    assert str(header_hash(hs[0])) == GENESIS_HASH
    for prev, cur in zip(hs, hs[1:]):
        assert cur.parent_hash == header_hash(prev)
        assert cur.bits == 0x1D00FFFF
        assert meets_pow(cur)
    # block 1 as published
    assert str(header_hash(hs[1])) == (
        "00000000839a8e6886ab5951d76f411475428afc90947ee320161bbf18eb6048")


def test_hash256_display_is_reversed():
    h = Hash256(bytes(range(32)))
    assert str(h) == bytes(range(32))[::-1].hex()
    assert Hash256.from_display(str(h)) == h
    with pytest.raises(WrongLength):
        Hash256(b"short")


# --- compact bits / pow --------------------------------------------------------

def test_bits_to_target_mainnet_limit():
    assert bits_to_target(0x1D00FFFF) == 0xFFFF * 256 ** 26


def test_bits_to_target_small_exponents():
    assert bits_to_target(0x03123456) == 0x123456
    assert bits_to_target(0x02123456) == 0x1234
    assert bits_to_target(0x01123456) == 0x12
    assert bits_to_target(0x1D000000) == 0


def test_bits_to_target_rejects_sign_bit_and_overflow():
    with pytest.raises(NegativeTarget):
        bits_to_target(0x04923456)
    with pytest.raises(TargetOverflow):
        bits_to_target(0x2300FFFF)


@given(st.integers(1, (1 << 255)))
def test_target_to_bits_is_lossy_floor(target):
    bits = target_to_bits(target)
    decoded = bits_to_target(bits)
    assert decoded <= target
    # compact form keeps the top 2-3 significant bytes
    assert target - decoded < (1 << max(0, target.bit_length() - 15))
    assert target_to_bits(decoded) == bits


def test_target_to_bits_known_values():
    assert target_to_bits(0xFFFF * 256 ** 26) == 0x1D00FFFF
    assert target_to_bits(0x80) == 0x02008000
    assert target_to_bits(0) == 0


def test_genesis_meets_pow_by_independent_compare():
    digest = hashlib.sha256(hashlib.sha256(bytes.fromhex(GENESIS_HEX)).digest()).digest()
    assert int.from_bytes(digest[::-1], "big") <= 0xFFFF * 256 ** 26
    assert hash_to_int(header_hash(MAINNET_GENESIS)) == int(GENESIS_HASH, 16)
    assert meets_pow(MAINNET_GENESIS)


def test_zero_target_never_met():
    h = BlockHeader(1, ZERO_HASH, ZERO_HASH, 0, 0x1D000000, 7)
    assert not meets_pow(h)


@given(headers.map(lambda h: BlockHeader(h.version, h.parent_hash, h.merkle_root,
                                         h.timestamp, 0x2100FFFF, h.nonce)),
       st.integers(0, 255))
def test_pow_monotone_in_target(h, shift):
    value = hash_to_int(header_hash(h))
    target = bits_to_target(h.bits)
    if value <= target >> shift:
        assert value <= target


# --- retarget ------------------------------------------------------------------

EXPECTED = 2016 * 600


def test_retarget_identity():
    t = bits_to_target(0x1C0FFFFF)
    assert retarget(t, 1000, 1000 + EXPECTED) == t


def test_retarget_halves():
    t = 0xFFFF * 256 ** 20 + 3
    assert retarget(t, 0, EXPECTED // 2) == t * (EXPECTED // 2) // EXPECTED


def test_retarget_clamps_both_ways():
    t = 1 << 200
    assert retarget(t, 0, 10 * EXPECTED) == t * 4
    assert retarget(t, 0, 1) == t // 4
    assert retarget(t, 500, 0) == t // 4  # negative spans clamp rather than fail


def test_retarget_caps_at_pow_limit():
    limit = 0xFFFF * 256 ** 26
    assert retarget(limit, 0, 4 * EXPECTED, pow_limit=limit) == limit


@given(st.integers(1, 1 << 230), st.integers(-(1 << 33), 1 << 33))
def test_retarget_ratio_within_quarter_and_four(old, span):
    new = retarget(old, 0, span)
    clamped = min(max(span, EXPECTED // 4), EXPECTED * 4)
    assert new == old * clamped // EXPECTED
    ratio = Fraction(old * clamped, EXPECTED) / old
    assert Fraction(1, 4) <= ratio <= 4


# --- merkle --------------------------------------------------------------------

def test_merkle_single_and_pair():
    a, b, c = _h(1), _h(2), _h(3)
    assert merkle_root([a]) == a
    pair = hashlib.sha256(hashlib.sha256(a + b).digest()).digest()
    assert merkle_root([a, b]) == pair
    cc = hashlib.sha256(hashlib.sha256(c + c).digest()).digest()
    assert merkle_root([a, b, c]) == hashlib.sha256(hashlib.sha256(pair + cc).digest()).digest()


def test_merkle_root_matches_archival_17_tx_block():
    leaves = [Hash256.from_display(t) for t in TESTNET_TXIDS]
    assert str(merkle_root(leaves)) == TESTNET_ROOT
    root = Hash256.from_display(TESTNET_ROOT)
    for i in range(len(leaves)):
        assert verify_merkle_branch(merkle_branch(leaves, i), root)


def test_merkle_errors():
    with pytest.raises(EmptyLeaves):
        merkle_root([])
    with pytest.raises(IndexOutOfRange):
        merkle_branch([_h(1)], 1)


def test_merkle_branch_shapes():
    a, b = _h(1), _h(2)
    assert merkle_branch([a], 0).siblings == ()
    assert merkle_branch([a, b], 0).siblings == (b,)
    assert verify_merkle_branch(MerkleProof(a, 0, ()), a)


def test_verify_rejects_malformed_proofs():
    leaves = [_h(i) for i in range(5)]
    root = merkle_root(leaves)
    proof = merkle_branch(leaves, 3)
    assert not verify_merkle_branch(MerkleProof(proof.leaf, 2, proof.siblings), root)
    assert not verify_merkle_branch(MerkleProof(proof.leaf, -1, proof.siblings), root)
    assert not verify_merkle_branch(MerkleProof(proof.leaf, 1 << 10, proof.siblings), root)
    assert not verify_merkle_branch(MerkleProof(proof.leaf, 3, proof.siblings[:-1]), root)
    short = MerkleProof(proof.leaf, 3, (b"\x00" * 31,) + proof.siblings[1:])
    assert not verify_merkle_branch(short, root)


@given(st.lists(hashes, min_size=1, max_size=16), st.data())
def test_branch_round_trip(leaves, data):
    i = data.draw(st.integers(0, len(leaves) - 1))
    assert verify_merkle_branch(merkle_branch(leaves, i), merkle_root(leaves))


def test_header_struct_layout():
    h = BlockHeader(2, _h(1), _h(2), 3, 0x1D00FFFF, 4)
    raw = encode_header(h)
    assert struct.unpack("<i", raw[:4])[0] == 2
    assert raw[4:36] == _h(1) and raw[36:68] == _h(2)
    assert struct.unpack("<III", raw[68:]) == (3, 0x1D00FFFF, 4)
