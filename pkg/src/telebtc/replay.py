"""Feed a header stream through either bridge, and the honest-stream equivalence check."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .bridge_optimistic import BridgeError, OptimisticBridge
from .bridge_spv import Accepted, Checkpoint, SpvBridge
from .btc_headers import (
    MAINNET_BLOCK_INTERVAL,
    MAINNET_EPOCH_LEN,
    MAINNET_GENESIS,
    MAINNET_POW_LIMIT,
    BlockHeader,
    Hash256,
    header_hash,
)

AUTO_RELAYER = "auto-relayer"


def genesis_checkpoint() -> Checkpoint:
    return Checkpoint.from_header(MAINNET_GENESIS, 0, MAINNET_GENESIS.timestamp)


@dataclass
class ReplayResult:
    accepted: int = 0
    finalized: int = 0
    rejected_height: Optional[int] = None
    reason: Optional[str] = None
    detail: str = ""
    boundary_checks: list[tuple[int, Optional[int], int]] = field(default_factory=list)
    finalized_chain: list[tuple[int, Hash256]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.rejected_height is None


def _strip_checkpoint(headers: Sequence[BlockHeader],
                      checkpoint: Checkpoint) -> tuple[list[BlockHeader], Checkpoint]:
    headers = list(headers)
    if headers and header_hash(headers[0]) == checkpoint.block_hash:
        first = headers.pop(0)
        checkpoint = Checkpoint.from_header(first, checkpoint.height, checkpoint.epoch_start_ts)
    return headers, checkpoint


def replay_spv(headers: Sequence[BlockHeader], checkpoint: Checkpoint,
               finalization_number: int = 6, epoch_len: int = MAINNET_EPOCH_LEN,
               block_interval: int = MAINNET_BLOCK_INTERVAL,
               pow_limit: int = MAINNET_POW_LIMIT) -> ReplayResult:
    headers, checkpoint = _strip_checkpoint(headers, checkpoint)
    bridge = SpvBridge(checkpoint, finalization_number, epoch_len, block_interval, pow_limit)
    out = ReplayResult()
    for h in headers:
        height = bridge.headers[h.parent_hash].height + 1 if h.parent_hash in bridge.headers \
            else None
        if height is not None and height % epoch_len == 0:
            out.boundary_checks.append((height, bridge.expected_bits(h.parent_hash), h.bits))
        res = bridge.add_header(h)
        if not isinstance(res, Accepted):
            out.rejected_height = height if height is not None else \
                checkpoint.height + out.accepted + 1
            out.reason = res.reason.value
            out.detail = res.detail
            break
        out.accepted += 1
    out.finalized_chain = bridge.finalized_chain()
    out.finalized = len(out.finalized_chain)
    return out


def replay_optimistic(headers: Sequence[BlockHeader], checkpoint: Checkpoint,
                      finalization_number: int = 6, epoch_len: int = MAINNET_EPOCH_LEN,
                      block_interval: int = MAINNET_BLOCK_INTERVAL,
                      pow_limit: int = MAINNET_POW_LIMIT,
                      challenge_period: int = 300) -> ReplayResult:
    """Submit every header's root as an honest relayer would, with no disputer present.

    Sim time follows header timestamps (never moving backwards) and each root is
    left unchallenged for a full challenge period before the next is posted.
    """
    headers, checkpoint = _strip_checkpoint(headers, checkpoint)
    bridge = OptimisticBridge(checkpoint, finalization_number, challenge_period=challenge_period,
                              epoch_len=epoch_len, block_interval=block_interval,
                              pow_limit=pow_limit)
    out = ReplayResult()
    now = checkpoint.timestamp or 0
    prev_root = checkpoint.merkle_root
    for i, h in enumerate(headers):
        height = checkpoint.height + i + 1
        now = max(now, h.timestamp)
        ts = h.timestamp if bridge.needs_epoch_timestamp(height) else None
        try:
            rid = bridge.submit_root(h.merkle_root, height, AUTO_RELAYER, bridge.relayer_bond, ts,
                                     now, parent_root=prev_root)
        except BridgeError as exc:
            out.rejected_height = height
            out.reason = type(exc).__name__
            out.detail = str(exc)
            break
        if height % epoch_len == 0:
            out.boundary_checks.append((height, bridge.required_bits(bridge.records[rid]), h.bits))
        out.accepted += 1
        prev_root = h.merkle_root
        now += challenge_period
        bridge.tick(now)
    out.finalized_chain = bridge.finalized_chain()
    out.finalized = len(out.finalized_chain)
    return out


def replay(headers: Sequence[BlockHeader], bridge: str, checkpoint: Checkpoint,
           **kwargs) -> ReplayResult:
    if bridge == "spv":
        return replay_spv(headers, checkpoint, **kwargs)
    if bridge == "optimistic":
        return replay_optimistic(headers, checkpoint, **kwargs)
    raise ValueError(f"unknown bridge {bridge!r}")


def bridge_equivalence(n_blocks: int = 1000, finalization_number: int = 6,
                       backend: Optional[str] = None):
    """Mine an honest ``n_blocks`` stream and finalize it through both bridges.

    Returns ``(spv_chain, optimistic_chain)`` as lists of ``(height, merkle_root)``.
    """
    from .chainsim import SimChain

    chain = SimChain(backend=backend)
    for _ in range(n_blocks):
        tip = chain.tip
        chain.mine_block(tip.hash, [], tip.header.timestamp + chain.expected_interval(tip.hash))
    genesis = chain.genesis
    cp = Checkpoint.from_header(genesis.header, 0, genesis.header.timestamp)
    headers = [chain.canonical_block(h).header for h in range(1, n_blocks + 1)]
    params = dict(finalization_number=finalization_number, epoch_len=chain.epoch_len,
                  block_interval=chain.block_interval, pow_limit=chain.pow_limit)
    spv = replay_spv(headers, cp, **params)
    opt = replay_optimistic(headers, cp, **params)
    if not spv.ok or not opt.ok:
        raise RuntimeError(f"honest stream rejected: spv={spv.reason} optimistic={opt.reason}")
    return spv.finalized_chain, opt.finalized_chain
