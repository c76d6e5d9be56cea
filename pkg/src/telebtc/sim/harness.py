"""Deterministic tick-driven scenario runner and report builder."""

from __future__ import annotations

import hashlib
import json
from fractions import Fraction
from typing import Optional

from ..bridge_optimistic import OptimisticBridge
from ..bridge_spv import Checkpoint, SpvBridge
from ..btc_headers import Hash256, MerkleProof
from ..chainsim import ChainError, SimChain, SimTx, address_of
from ..lockers import LockersManager, PriceQuote, frac
from ..proxy import DuplicateTx, FeeParams, NotFinalized, Proxy, ProxyError
from .agents import AGENT_CLASSES, Agent
from .invariants import INVARIANT_IDS, InvariantSuite
from .scenario import ROLES, ScenarioConfig, btc_to_sats

REPORT_VERSION = 1


class InvariantViolation(Exception):
    def __init__(self, tick: int, invariant: str, detail: str, digest: str,
                 report: Optional[dict] = None):
        super().__init__(f"tick {tick}: invariant {invariant} violated: {detail} "
                         f"(state {digest[:16]})")
        self.tick = tick
        self.invariant = invariant
        self.detail = detail
        self.digest = digest
        self.report = report


def _jsonable(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (bytes, bytearray)):
        return bytes(x).hex()
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "value") and isinstance(getattr(x, "value"), str):
        return x.value
    return x


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1) + "\n"


class World:
    """All protocol state for one run plus the shared helpers agents use."""

    def __init__(self, cfg: ScenarioConfig, backend: Optional[str] = None):
        self.cfg = cfg
        self.tick = 0
        self.now = cfg.chain["genesis_time"]
        self.quote: PriceQuote = cfg.price_at(0)
        self.agents: list[Agent] = [AGENT_CLASSES[s.role](s, cfg.seed) for s in cfg.agents]
        self.agents.sort(key=lambda a: ROLES.index(a.role))  # stable: roster order within a role

        allocations = [(a.btc_address, btc_to_sats(a.spec.get("btc", 0)))
                       for a in self.agents if a.spec.get("btc")]
        self.chain = SimChain(allocations, genesis_time=cfg.chain["genesis_time"],
                              genesis_bits=cfg.chain["genesis_bits"],
                              epoch_len=cfg.chain["epoch_len"],
                              block_interval=cfg.chain["block_interval"], backend=backend)
        genesis = self.chain.genesis
        checkpoint = Checkpoint.from_header(genesis.header, 0, genesis.header.timestamp)
        bp = dict(cfg.bridge_params)
        common = dict(finalization_number=bp.pop("finalization_number", 6),
                      epoch_len=self.chain.epoch_len, block_interval=self.chain.block_interval,
                      pow_limit=self.chain.pow_limit)
        if cfg.bridge == "spv":
            self.bridge = SpvBridge(checkpoint, **common)
        else:
            self.bridge = OptimisticBridge(checkpoint, **common, **bp)
        self.lockers = LockersManager(cfg.econ)
        fee_kwargs = dict(cfg.fees)
        self.proxy = Proxy(self.bridge, self.lockers, FeeParams(**fee_kwargs),
                           reservation_window=int(cfg.proxy.get("reservation_window", 3 * 3600)),
                           reservation_deposit=frac(cfg.proxy.get("reservation_deposit", "1/2")))

        self.mempool: list[tuple[SimTx, str]] = []
        # one chronological stream shared by every contract
        self._contract_events: list[dict] = []
        for contract in (self.bridge, self.lockers, self.proxy):
            contract.events = self._contract_events
        self.events: list[dict] = []
        self.tick_events: list[dict] = []
        self.fabricated_roots: set[bytes] = set()
        self.liquidations: list = []
        self.locker_spends: dict[str, list[SimTx]] = {}
        self.theft_delta: dict[str, int] = {}
        self.per_tick: list[dict] = []
        self._dead_wraps: set[bytes] = set()

    # ------------------------------------------------------------ events

    def emit(self, name: str, **fields) -> None:
        self._drain()
        ev = {"tick": self.tick, "event": name, **_jsonable(fields)}
        self.events.append(ev)
        self.tick_events.append(ev)

    def _drain(self) -> None:
        for raw in self._contract_events:
            ev = {"tick": self.tick, **_jsonable(raw)}
            self.events.append(ev)
            self.tick_events.append(ev)
        self._contract_events.clear()

    # ---------------------------------------------------------- helpers

    def broadcast(self, tx: SimTx, by: str) -> None:
        self.mempool.append((tx, by))
        self.emit("TxBroadcast", by=by, txid=str(tx.txid))

    def spendable(self, address: bytes):
        pending = {(i.prev_txid, i.index) for tx, _ in self.mempool for i in tx.inputs}
        return [u for u in self.chain.utxos_of(address) if (u.txid, u.index) not in pending]

    def proof_for(self, txid: Hash256) -> Optional[tuple[int, int, MerkleProof]]:
        try:
            _, height, index, proof = self.chain.inclusion_proof(txid)
        except ChainError:
            return None
        return height, index, proof

    def wrap_retryable(self, txid: Hash256) -> bool:
        return bytes(txid) not in self.proxy.minted_txids and bytes(txid) not in self._dead_wraps

    def try_wrap(self, txid: Hash256, submitter: str, actor: str) -> bool:
        loc = self.proof_for(txid)
        if loc is None or not self.bridge.check_tx_proof(txid, *loc):
            return False
        try:
            self.proxy.wrap(self.chain.get_tx(txid), *loc, submitter, self.quote)
        except (DuplicateTx, NotFinalized):
            return False
        except (ProxyError, ValueError) as exc:
            self._dead_wraps.add(bytes(txid))
            self.emit("WrapRejected", by=actor, txid=str(txid), reason=type(exc).__name__,
                      detail=str(exc))
            return False
        return True

    # ------------------------------------------------------------- mining

    def _mine_due_blocks(self) -> None:
        while True:
            tip = self.chain.tip
            ts = tip.header.timestamp + self.chain.expected_interval(tip.hash)
            if ts > self.now:
                return
            txs = [tx for tx, _ in self.mempool]
            ok, bad = self.chain.select_valid(tip.hash, txs)
            for tx, why in bad:
                self.emit("TxDropped", txid=str(tx.txid), reason=why)
            self.mempool = []
            blk = self.chain.mine_block(tip.hash, ok, ts)
            self.emit("BlockMined", height=blk.height, hash=str(blk.hash), txs=len(blk.txs),
                      bits=f"{blk.header.bits:#010x}", timestamp=ts)
            for tx in ok:
                acct = self.lockers.known_address(tx.sender) if tx.sender else None
                if acct is not None:
                    self.locker_spends.setdefault(acct.locker, []).append(tx)

    # --------------------------------------------------------------- run

    def setup(self) -> None:
        for agent in self.agents:
            agent.setup(self)
        self._drain()

    def step(self, suite: InvariantSuite) -> None:
        cfg = self.cfg
        self.now = cfg.chain["genesis_time"] + self.tick * cfg.tick_seconds
        self.quote = cfg.price_at(self.tick)
        self.tick_events = []
        self._mine_due_blocks()
        for agent in self.agents:
            agent.act(self)
            self._drain()
        if isinstance(self.bridge, OptimisticBridge):
            self.bridge.tick(self.now)
        self.proxy.expire_reservations(self.now)
        self._drain()

        self.theft_delta = suite.theft_deltas(self)
        results = suite.check(self)
        failed = [r for r in results if not r.ok]
        self.per_tick.append({
            "tick": self.tick,
            "time": self.now,
            "supply": self.proxy.ledger.total_supply,
            "locked_btc": self.lockers.total_locked(),
            "theft_delta": dict(self.theft_delta),
            "failed": [r.invariant for r in failed],
        })
        if failed:
            first = failed[0]
            raise InvariantViolation(self.tick, first.invariant, first.detail, self.digest())

    def digest(self) -> str:
        state = {
            "tick": self.tick,
            "tip": str(self.chain.canonical_tip),
            "supply": self.proxy.ledger.total_supply,
            "balances": self.proxy.ledger.balances,
            "lockers": {k: [a.collateral, a.locked_btc, a.status.value]
                        for k, a in self.lockers.accounts.items()},
            "finalized": [[h, str(r)] for h, r in self.bridge.finalized_chain()],
        }
        return hashlib.sha256(json.dumps(state, sort_keys=True).encode()).hexdigest()

    def report(self, violation: Optional[InvariantViolation] = None) -> dict:
        cfg = self.cfg
        chain = self.chain
        btc = {}
        for a in self.agents:
            btc[a.name] = chain.balance(a.btc_address)
        for acct in self.lockers.accounts.values():
            stash = chain.balance(address_of(acct.locker + "/stash"))
            if stash:
                btc[acct.locker + "/stash"] = stash
        final = {
            "btc_height": chain.height,
            "btc_balances": btc,
            "telebtc_balances": dict(sorted(self.proxy.ledger.balances.items())),
            "telebtc_supply": self.proxy.ledger.total_supply,
            "lockers": {k: {"collateral": a.collateral, "locked_btc": a.locked_btc,
                            "status": a.status.value,
                            "recorded_payments": sorted(str(Hash256(t))
                                                       for t in a.recorded_payment_txids)}
                        for k, a in self.lockers.accounts.items()},
            "collateral_paid_out": dict(sorted(self.lockers.wallets.items())),
            "treasury": str(self.proxy.treasury),
            "deposits_returned": {k: str(v) for k, v in sorted(self.proxy.deposits_returned.items())},
            "finalized_height": self.bridge.last_finalized_height,
        }
        if isinstance(self.bridge, OptimisticBridge):
            final["bonds"] = {"escrow": self.bridge.escrow,
                              "payouts": dict(sorted(self.bridge.payouts.items()))}
        outcomes = {a.name: _jsonable(a.summary(self)) for a in self.agents}
        unwraps = [{"request": str(r.request_id), "user": r.user, "locker": r.locker,
                    "gross": r.amount_burnt_gross, "due": r.amount_due, "status": r.status.value,
                    "created_at": r.created_at, "deadline": r.deadline,
                    "compensation_value": str(r.compensation_value)
                    if r.compensation_value is not None else None}
                   for r in self.proxy.requests.values()]
        counts: dict[str, int] = {}
        for ev in self.events:
            counts[ev["event"]] = counts.get(ev["event"], 0) + 1
        return {
            "version": REPORT_VERSION,
            "scenario": cfg.name,
            "seed": cfg.seed,
            "bridge": cfg.bridge,
            "duration_ticks": cfg.duration_ticks,
            "tick_seconds": cfg.tick_seconds,
            "ticks_run": len(self.per_tick),
            "invariants": list(INVARIANT_IDS),
            "violation": None if violation is None else {
                "tick": violation.tick, "invariant": violation.invariant,
                "detail": violation.detail, "digest": violation.digest},
            "events": self.events,
            "per_tick": self.per_tick,
            "final": final,
            "unwraps": unwraps,
            "outcomes": outcomes,
            "summary": {"event_counts": dict(sorted(counts.items())),
                        "violations": 0 if violation is None else 1},
        }


def run_scenario(cfg: ScenarioConfig, backend: Optional[str] = None) -> dict:
    """Run ``cfg`` to completion; raises InvariantViolation (carrying the partial report)."""
    world = World(cfg, backend)
    world.setup()
    suite = InvariantSuite()
    for tick in range(cfg.duration_ticks + 1):
        world.tick = tick
        try:
            world.step(suite)
        except InvariantViolation as exc:
            exc.report = world.report(exc)
            raise
    return world.report()


def run_world(cfg: ScenarioConfig, backend: Optional[str] = None) -> World:
    """Like :func:`run_scenario` but returns the live world for inspection."""
    world = World(cfg, backend)
    world.setup()
    suite = InvariantSuite()
    for tick in range(cfg.duration_ticks + 1):
        world.tick = tick
        world.step(suite)
    return world
