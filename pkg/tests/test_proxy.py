from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from telebtc.bridge_spv import SpvBridge
from telebtc.chainsim import (
    COIN,
    SimChain,
    address_of,
    build_lock_tx,
    build_transfer_tx,
    build_unlock_payment_tx,
)
from telebtc.lockers import UNIT, LockersManager, PriceQuote
from telebtc.proxy import (
    AlreadyResolved,
    AmountMismatch,
    CapacityExceeded,
    DeadlineNotReached,
    DeadlinePassed,
    DepositTooSmall,
    DuplicateReport,
    DuplicateTx,
    FeeParams,
    InsufficientCapacity,
    NotALocker,
    NotFinalized,
    Proxy,
    RecordedPayment,
    RequestStatus,
    ReservationStatus,
    TooRecent,
    account_of,
)

from conftest import checkpoint_of, extend

PAR = PriceQuote(1, 1)
ALICE = address_of("alice")
LOCKER = address_of("locker")
RECEIVER = address_of("alice-evm")
ALICE_ACCT = account_of(RECEIVER)


class Env:
    def __init__(self, fees=None, collateral=1000):
        self.chain = SimChain([(ALICE, 10 * COIN), (LOCKER, 5 * COIN)])
        self.bridge = SpvBridge(checkpoint_of(self.chain), finalization_number=6,
                                epoch_len=self.chain.epoch_len,
                                block_interval=self.chain.block_interval,
                                pow_limit=self.chain.pow_limit)
        self.lockers = LockersManager()
        self.lockers.register("L", LOCKER, collateral * UNIT)
        self.proxy = Proxy(self.bridge, self.lockers, fees or FeeParams(20, 20, 30))

    def mine(self, n, txs=()):
        blocks = extend(self.chain, n, txs=txs)
        for b in blocks:
            self.bridge.add_header(b.header)
        return blocks

    def confirm(self, tx):
        """Mine ``tx`` and enough blocks on top to finalize it; returns proof args."""
        self.mine(7, [tx])
        _, height, index, proof = self.chain.inclusion_proof(tx.txid)
        return height, index, proof

    @property
    def now(self):
        return self.chain.tip.header.timestamp

    def lock(self, amount, fee_bps=50):
        tx = build_lock_tx(self.chain.utxos_of(ALICE), LOCKER, amount, RECEIVER, fee_bps)
        return tx, self.confirm(tx)


def test_wrap_fee_split():
    env = Env()
    tx, loc = env.lock(COIN)
    res = env.proxy.wrap(tx, *loc, "relayer", PAR)
    assert (res.teleporter_fee, res.minting_fee, res.receiver_amount) == (500_000, 200_000,
                                                                          99_300_000)
    ledger = env.proxy.ledger
    assert ledger.balance("relayer") == 500_000
    assert ledger.balance("L") == 200_000
    assert ledger.balance(ALICE_ACCT) == 99_300_000
    assert ledger.total_supply == COIN == env.lockers.accounts["L"].locked_btc
    with pytest.raises(DuplicateTx):
        env.proxy.wrap(tx, *loc, "relayer", PAR)


def test_wrap_needs_finalized_proof():
    env = Env()
    tx = build_lock_tx(env.chain.utxos_of(ALICE), LOCKER, COIN, RECEIVER, 0)
    env.mine(3, [tx])
    _, height, index, proof = env.chain.inclusion_proof(tx.txid)
    with pytest.raises(NotFinalized):
        env.proxy.wrap(tx, height, index, proof, "r", PAR)
    env.mine(4)
    env.proxy.wrap(tx, height, index, proof, "r", PAR)


def test_wrap_to_unregistered_address():
    env = Env()
    tx = build_lock_tx(env.chain.utxos_of(ALICE), address_of("nobody"), COIN, RECEIVER, 0)
    loc = env.confirm(tx)
    with pytest.raises(NotALocker):
        env.proxy.wrap(tx, *loc, "r", PAR)


def test_wrap_over_capacity():
    env = Env(collateral=3)  # capacity 2 BTC
    tx, loc = env.lock(3 * COIN)
    with pytest.raises(CapacityExceeded):
        env.proxy.wrap(tx, *loc, "r", PAR)


def _wrapped_env(amount=COIN):
    env = Env()
    tx, loc = env.lock(amount, fee_bps=0)
    env.proxy.wrap(tx, *loc, "r", PAR)
    return env


def test_unwrap_amounts():
    env = Env(FeeParams(0, 0, 30))
    tx, loc = env.lock(COIN, fee_bps=0)
    env.proxy.wrap(tx, *loc, "r", PAR)
    assert env.proxy.ledger.balance(ALICE_ACCT) == COIN
    req = env.proxy.unwrap(ALICE_ACCT, COIN, "L", ALICE, env.now, PAR)
    assert req.amount_due == 99_700_000
    assert env.proxy.ledger.balance("L") == 300_000
    assert env.proxy.ledger.total_supply == env.lockers.accounts["L"].locked_btc == 300_000
    assert req.deadline == env.now + env.lockers.params.unwrap_deadline


def test_zero_fees_are_identity():
    env = Env(FeeParams(0, 0, 0))
    tx, loc = env.lock(COIN, fee_bps=0)
    res = env.proxy.wrap(tx, *loc, "r", PAR)
    assert res.receiver_amount == COIN
    req = env.proxy.unwrap(ALICE_ACCT, COIN, "L", ALICE, env.now, PAR)
    assert req.amount_due == COIN
    assert env.proxy.ledger.total_supply == 0 == env.lockers.accounts["L"].locked_btc


def test_payment_proof_settles_request():
    env = _wrapped_env()
    req = env.proxy.unwrap(ALICE_ACCT, COIN // 2, "L", ALICE, env.now, PAR)
    pay = build_unlock_payment_tx(env.chain.utxos_of(LOCKER), ALICE, req.amount_due,
                                  req.request_id)
    loc = env.confirm(pay)
    assert env.proxy.submit_payment_proof(req.request_id, pay, *loc, env.now) \
        is RequestStatus.PAID
    assert bytes(pay.txid) in env.lockers.accounts["L"].recorded_payment_txids
    with pytest.raises(AlreadyResolved):
        env.proxy.submit_payment_proof(req.request_id, pay, *loc, env.now)
    with pytest.raises(AlreadyResolved):
        env.proxy.claim_timeout(req.request_id, req.deadline + 1, PAR)
    # a recorded payment is not theft
    with pytest.raises(RecordedPayment):
        env.proxy.report_theft(pay, *loc, "s", 0, env.now + 10 ** 6, PAR)


def test_payment_amount_mismatch_and_deadline():
    env = _wrapped_env()
    req = env.proxy.unwrap(ALICE_ACCT, COIN // 2, "L", ALICE, env.now, PAR)
    short = build_unlock_payment_tx(env.chain.utxos_of(LOCKER), ALICE, req.amount_due - 1,
                                    req.request_id)
    loc = env.confirm(short)
    with pytest.raises(AmountMismatch):
        env.proxy.submit_payment_proof(req.request_id, short, *loc, env.now)
    with pytest.raises(DeadlinePassed):
        env.proxy.submit_payment_proof(req.request_id, short, *loc, req.deadline + 1)


def test_claim_timeout():
    env = _wrapped_env()
    req = env.proxy.unwrap(ALICE_ACCT, COIN // 2, "L", ALICE, env.now, PAR)
    with pytest.raises(DeadlineNotReached):
        env.proxy.claim_timeout(req.request_id, req.deadline, PAR)
    out = env.proxy.claim_timeout(req.request_id, req.deadline + 1, PAR)
    due = Fraction(req.amount_due, COIN)
    assert out == int(due / Fraction(19, 20) * UNIT)
    assert env.lockers.wallets[ALICE_ACCT] == out
    assert req.status is RequestStatus.SLASHED
    with pytest.raises(AlreadyResolved):
        env.proxy.claim_timeout(req.request_id, req.deadline + 2, PAR)
    assert env.lockers.collateral_conserved()


def test_report_theft():
    env = _wrapped_env(2 * COIN)
    steal = build_transfer_tx(env.chain.utxos_of(LOCKER), [(address_of("thief"), COIN)])
    loc = env.confirm(steal)
    with pytest.raises(TooRecent):
        env.proxy.report_theft(steal, *loc, ALICE_ACCT, COIN, env.now, PAR)
    later = env.bridge.block_time(loc[0]) + env.lockers.params.theft_grace
    out = env.proxy.report_theft(steal, *loc, ALICE_ACCT, COIN, later, PAR)
    assert out == int(Fraction(1) / Fraction(19, 20) * UNIT)
    assert env.lockers.accounts["L"].locked_btc == COIN
    assert env.proxy.ledger.total_supply == COIN
    with pytest.raises(DuplicateReport):
        env.proxy.report_theft(steal, *loc, ALICE_ACCT, 0, later, PAR)


def test_reservation_lifecycle():
    env = Env(collateral=3)  # capacity 2 BTC
    res = env.proxy.reserve_capacity(ALICE_ACCT, "L", COIN, Fraction(1, 2), 1000, PAR)
    assert env.proxy.free_capacity("L", PAR) == COIN
    with pytest.raises(InsufficientCapacity):
        env.proxy.reserve_capacity("bob", "L", COIN + 1, Fraction(1, 2), 1000, PAR)
    with pytest.raises(DepositTooSmall):
        env.proxy.reserve_capacity("bob", "L", 1, Fraction(1, 3), 1000, PAR)
    assert env.proxy.expire_reservations(res.expires_at) == []
    assert res.status is ReservationStatus.OPEN
    tx, loc = env.lock(COIN)
    env.proxy.wrap(tx, *loc, "r", PAR)
    assert res.status is ReservationStatus.CONSUMED
    assert env.proxy.deposits_returned[ALICE_ACCT] == Fraction(1, 2)
    assert env.proxy.deposits_held == 0


def test_reservation_expiry_forfeits_deposit():
    env = Env(collateral=3)
    res = env.proxy.reserve_capacity("bob", "L", COIN, Fraction(1), 1000, PAR)
    assert env.proxy.expire_reservations(res.expires_at + 1) == [res.reservation_id]
    assert res.status is ReservationStatus.EXPIRED
    assert env.proxy.treasury == 1
    assert env.proxy.free_capacity("L", PAR) == 2 * COIN


def test_fee_function_limits():
    f = FeeParams(10, 100, 30, 1)
    assert f.minting_fee(None) == 10
    assert f.minting_fee(Fraction(0)) == 100
    assert f.minting_fee(Fraction(1, 2)) == 55
    assert f.minting_fee(Fraction(5)) == 10
    assert f.burning_fee(Fraction(0)) == 0
    assert f.burning_fee(Fraction(1, 2)) == 15
    assert f.burning_fee(Fraction(3)) == 30
    assert f.burning_fee(None) == 30
    with pytest.raises(ValueError):
        FeeParams(50, 10, 30)


@given(st.fractions(0, 3), st.fractions(0, 3))
def test_fee_functions_monotone(a, b):
    f = FeeParams()
    lo, hi = min(a, b), max(a, b)
    assert f.minting_fee(lo) >= f.minting_fee(hi)
    assert f.burning_fee(lo) <= f.burning_fee(hi)
