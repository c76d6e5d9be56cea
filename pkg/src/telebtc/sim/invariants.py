"""Per-tick invariant suite evaluated over a live :class:`~telebtc.sim.harness.World`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

from ..bridge_optimistic import RootStatus
from ..proxy import RequestStatus

if TYPE_CHECKING:
    from .harness import World

INVARIANT_IDS = (
    "peg_supply",
    "ledger_consistent",
    "peg_backing",
    "no_double_mint",
    "bridge_prefix",
    "bond_conservation",
    "collateral_conservation",
    "liquidation_health",
    "user_outcome",
    "no_fake_verified",
    "unwrap_liveness",
)


@dataclass
class CheckResult:
    invariant: str
    ok: bool
    detail: str = ""


class InvariantSuite:
    """Stateful checker; incremental where a full rescan each tick would be wasteful."""

    def __init__(self):
        self.minted_seen: set[str] = set()
        self.finalized_checked: dict[int, bytes] = {}
        self.liquidations_checked = 0
        self.resolved_checked: set[bytes] = set()

    def theft_deltas(self, world: "World") -> dict[str, int]:
        """Per-locker shortfall of BTC held versus ``locked_btc``."""
        out = {}
        for acct in world.lockers.accounts.values():
            if acct.locked_btc == 0:
                continue
            short = acct.locked_btc - world.chain.balance(acct.btc_address)
            if short > 0:
                out[acct.locker] = short
        return out

    def unreported_spends(self, world: "World", locker: str) -> int:
        acct = world.lockers.account(locker)
        total = 0
        for tx in world.locker_spends.get(locker, []):
            if bytes(tx.txid) in world.proxy.reported_txids:
                continue
            if bytes(tx.txid) in acct.recorded_payment_txids:
                continue
            total += sum(o.amount for o in tx.outputs if o.address != acct.btc_address)
        return total

    def check(self, world: "World") -> list[CheckResult]:
        res = []
        proxy, lockers, bridge = world.proxy, world.lockers, world.bridge

        supply, locked = proxy.ledger.total_supply, lockers.total_locked()
        res.append(CheckResult("peg_supply", supply == locked,
                               f"supply {supply} != locked {locked}"))
        res.append(CheckResult("ledger_consistent", proxy.ledger.consistent(),
                               "total_supply differs from the sum of balances"))

        ok, detail = True, ""
        for locker, short in world.theft_delta.items():
            covered = self.unreported_spends(world, locker)
            if short > covered:
                ok, detail = False, f"{locker} short {short} sat, only {covered} in known theft"
        res.append(CheckResult("peg_backing", ok, detail))

        ok, detail = True, ""
        for ev in world.tick_events:
            if ev["event"] == "Wrapped":
                if ev["txid"] in self.minted_seen:
                    ok, detail = False, f"txid {ev['txid']} minted twice"
                self.minted_seen.add(ev["txid"])
        res.append(CheckResult("no_double_mint", ok, detail))

        ok, detail = True, ""
        for h, root in bridge.finalized_chain():
            prev = self.finalized_checked.get(h)
            if prev is not None:
                if prev != bytes(root):
                    ok, detail = False, f"finalized root at {h} changed"
                continue
            blk = world.chain.canonical_block(h)
            if blk is None or blk.header.merkle_root != root:
                ok, detail = False, f"finalized root at {h} is not on the canonical chain"
            self.finalized_checked[h] = bytes(root)
        res.append(CheckResult("bridge_prefix", ok, detail))

        if world.cfg.bridge == "optimistic":
            res.append(CheckResult("bond_conservation", bridge.bonds_conserved(),
                                   f"posted {bridge.posted_total} paid {bridge.paid_total} "
                                   f"escrow {bridge.escrow}"))
        else:
            res.append(CheckResult("bond_conservation", True))
        res.append(CheckResult("collateral_conservation", lockers.collateral_conserved(),
                               "collateral in != held + paid out"))

        ok, detail = True, ""
        p = lockers.params
        for locker, result, quote in world.liquidations[self.liquidations_checked:]:
            pre, post = result.pre_ratio, result.post_ratio
            if p.discount_ratio > 1 / pre and post is not None and not post > pre:
                ok, detail = False, f"{locker} ratio {pre} -> {post} did not improve"
        self.liquidations_checked = len(world.liquidations)
        res.append(CheckResult("liquidation_health", ok, detail))

        ok, detail = True, ""
        for req in proxy.requests.values():
            key = bytes(req.request_id)
            if req.status is RequestStatus.OPEN or key in self.resolved_checked:
                continue
            self.resolved_checked.add(key)
            if req.status is RequestStatus.PAID:
                tx = world.chain.get_tx(req.payment_txid)
                got = sum(o.amount for o in tx.outputs if o.address == req.btc_receiver)
                if got < req.amount_due:
                    ok, detail = False, f"request {req.request_id} paid {got} < {req.amount_due}"
            else:
                due_value = world.quote.btc_value(req.amount_due)
                if req.compensation_value is None or req.compensation_value < due_value:
                    ok, detail = False, (f"request {req.request_id} compensated "
                                         f"{req.compensation_value} < {due_value}")
        res.append(CheckResult("user_outcome", ok, detail))

        ok, detail = True, ""
        if world.cfg.bridge == "optimistic" and world.fabricated_roots:
            for rec in bridge.records:
                if rec.status is RootStatus.VERIFIED and rec.root is not None \
                        and bytes(rec.root) in world.fabricated_roots:
                    ok, detail = False, f"fabricated root verified at height {rec.height}"
        res.append(CheckResult("no_fake_verified", ok, detail))

        ok, detail = True, ""
        for req in proxy.requests.values():
            if req.status is RequestStatus.OPEN and world.now > req.deadline + world.cfg.tick_seconds:
                ok, detail = False, f"request {req.request_id} unresolved past deadline + 1 tick"
        res.append(CheckResult("unwrap_liveness", ok, detail))
        return res
