from fractions import Fraction

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from telebtc.chainsim import COIN, address_of
from telebtc.lockers import (
    UNIT,
    AddressInUse,
    AlreadyRegistered,
    EconParams,
    ExceedsPosition,
    InvalidParams,
    LockersManager,
    LockerStatus,
    NotLiquidatable,
    NotRegistered,
    OutstandingLockedBtc,
    OverLiquidation,
    PriceQuote,
    WouldBreachHealth,
    WrongTeleBtcAmount,
    ZeroCollateral,
)

PAR = PriceQuote(1, 1)
ADDR = address_of("locker-1")


def manager_with(collateral_tokens, locked_btc, params=None):
    m = LockersManager(params)
    m.register("L", ADDR, int(Fraction(collateral_tokens) * UNIT))
    m.accounts["L"].locked_btc = int(Fraction(locked_btc) * COIN)
    return m


def test_register_and_capacity():
    m = manager_with(150, 0)
    assert m.accounts["L"].status is LockerStatus.ACTIVE
    assert m.minting_capacity("L", PAR) == 100 * COIN
    with pytest.raises(AlreadyRegistered):
        m.register("L", address_of("other"), UNIT)
    with pytest.raises(ZeroCollateral):
        m.register("M", address_of("other"), 0)
    with pytest.raises(AddressInUse):
        m.register("M", ADDR, UNIT)


def test_capacity_boundary_and_price_move():
    m = manager_with(150, 100)
    assert m.minting_capacity("L", PAR) == 0
    m = manager_with(150, 50)
    assert m.minting_capacity("L", PAR) == 50 * COIN
    # BTC doubles: free value 100 - 100 = 0
    assert m.minting_capacity("L", PriceQuote(2, 1)) == 0
    assert m.minting_capacity("L", PriceQuote(Fraction(3, 2), 1)) == int(
        (Fraction(100) - Fraction(75)) / Fraction(3, 2) * COIN)


def test_deregister():
    m = manager_with(150, 0)
    assert m.deregister("L") == 150 * UNIT
    assert m.accounts["L"].status is LockerStatus.DEREGISTERED
    with pytest.raises(NotRegistered):
        m.deregister("L")
    m = manager_with(150, 0)
    m.accounts["L"].locked_btc = 1
    with pytest.raises(OutstandingLockedBtc):
        m.deregister("L")


def test_deregister_after_partial_slash_returns_rest():
    m = manager_with(150, 10)
    out = m.slash_for_theft("L", 10 * COIN, "s", 10 * COIN, PAR)
    assert m.accounts["L"].locked_btc == 0
    assert m.deregister("L") == 150 * UNIT - out
    assert m.collateral_conserved()


def test_adjust_collateral():
    m = manager_with(150, 100)
    with pytest.raises(WouldBreachHealth):
        m.adjust_collateral("L", -10 * UNIT, PAR)  # leaves ratio 1.4
    assert m.adjust_collateral("L", 30 * UNIT, PAR) == 180 * UNIT
    m = manager_with(150, 0)
    m.adjust_collateral("L", -150 * UNIT, PAR)
    assert m.accounts["L"].collateral == 0
    assert m.collateral_conserved()


def test_params_validated():
    with pytest.raises(InvalidParams):
        EconParams(collateralization_ratio=1)
    with pytest.raises(InvalidParams):
        EconParams(liquidation_ratio=Fraction(8, 5))
    with pytest.raises(InvalidParams):
        EconParams(discount_ratio=Fraction(4, 5))  # not above 1/LR
    with pytest.raises(ValueError):
        PriceQuote(0, 1)


def test_liquidation_worked_example():
    m = manager_with(110, 100)
    res = m.liquidate("L", 40 * COIN, "liq", PAR)
    owed = Fraction(40) / Fraction(19, 20)
    assert owed == Fraction(800, 19)  # 42.105...
    assert res.collateral_out == owed.numerator * UNIT // owed.denominator
    assert res.pre_ratio == Fraction(110, 100)
    acct = m.accounts["L"]
    assert acct.locked_btc == 60 * COIN
    assert res.post_ratio == Fraction(110 * UNIT - res.collateral_out, UNIT) / 60
    assert abs(res.post_ratio - Fraction(110 - owed) / 60) < Fraction(1, 10 ** 9)
    assert round(float(res.post_ratio), 4) == 1.1316
    assert res.post_ratio < Fraction(3, 2)
    assert m.wallets["liq"] == res.collateral_out


def test_liquidation_rejections():
    with pytest.raises(NotLiquidatable):
        manager_with(125, 100).check_liquidation("L", COIN, PAR)
    with pytest.raises(NotLiquidatable):
        manager_with(120, 100).check_liquidation("L", COIN, PAR)  # strict <
    with pytest.raises(OverLiquidation):
        manager_with(110, 100).check_liquidation("L", 90 * COIN, PAR)
    with pytest.raises(ExceedsPosition):
        manager_with(110, 100).check_liquidation("L", 100 * COIN + 1, PAR)
    with pytest.raises(OverLiquidation):
        manager_with(110, 100).check_liquidation("L", 100 * COIN, PAR)


def test_no_immediate_recurrence():
    m = manager_with(110, 100)
    # largest X that is still accepted leaves the ratio just under CR; add collateral on top
    m.liquidate("L", 40 * COIN, "liq", PAR)
    m.adjust_collateral("L", 40 * UNIT, PAR)
    with pytest.raises(NotLiquidatable):
        m.check_liquidation("L", COIN, PAR)


@given(st.integers(101, 119), st.integers(1, 99))
def test_liquidation_improves_ratio(cv, x):
    m = manager_with(cv, 100)
    try:
        res = m.liquidate("L", x * COIN, "liq", PAR)
    except OverLiquidation:
        return
    assume(Fraction(19, 20) > Fraction(100, cv))
    assert res.post_ratio > res.pre_ratio


def test_theft_slash():
    m = manager_with(150, 10)
    out = m.slash_for_theft("L", 10 * COIN, "s", 10 * COIN, PAR)
    value = Fraction(out, UNIT)
    assert value <= Fraction(200, 19) < value + Fraction(1, UNIT)  # 10.526...
    assert value > 10
    assert m.accounts["L"].locked_btc == 0
    with pytest.raises(WrongTeleBtcAmount):
        m.slash_for_theft("L", COIN, "s", COIN - 1, PAR)


def test_theft_slash_capped_at_collateral():
    m = manager_with(5, 10)
    out = m.slash_for_theft("L", 10 * COIN, "s", 10 * COIN, PAR)
    assert out == 5 * UNIT
    assert m.accounts["L"].status is LockerStatus.FULLY_SLASHED


def test_timeout_slash_amounts():
    m = manager_with(150, 0)
    out = m.slash_for_timeout("L", Fraction("99.7"), "u", PAR)
    assert out == int(Fraction("99.7") / Fraction(19, 20) * UNIT)  # 104.947...
    assert Fraction(out, UNIT) >= Fraction("99.7")
    exact = manager_with(150, 0, EconParams(discount_ratio=1))
    assert exact.slash_for_timeout("L", Fraction("99.7"), "u", PAR) == 9_970_000_000


def test_two_timeouts_exhaust_collateral():
    m = manager_with(150, 0)
    first = m.slash_for_timeout("L", Fraction(95), "u1", PAR)
    assert first == 100 * UNIT
    second = m.slash_for_timeout("L", Fraction(95), "u2", PAR)
    assert second == 50 * UNIT
    assert m.accounts["L"].status is LockerStatus.FULLY_SLASHED
    assert m.collateral_conserved()


def test_record_payment_txid_idempotent():
    m = manager_with(150, 0)
    m.record_payment_txid("L", b"a" * 32)
    m.record_payment_txid("L", b"a" * 32)
    m.record_payment_txid("L", b"b" * 32)
    assert m.accounts["L"].recorded_payment_txids == {b"a" * 32, b"b" * 32}
