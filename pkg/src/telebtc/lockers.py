"""Locker registry: collateral, minting capacity, liquidation and slashing.

Collateral is held as integer base units (``UNIT`` per collateral token) and
priced through a :class:`PriceQuote`.  All value comparisons use exact
``Fraction`` arithmetic; conversions back to integer units floor in the
protocol's favour.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

from .chainsim import COIN

UNIT = 100_000_000  # collateral base units per token

Number = Union[int, float, str, Fraction]


class LockerError(Exception):
    pass


class AlreadyRegistered(LockerError):
    pass


class AddressInUse(LockerError):
    pass


class ZeroCollateral(LockerError):
    pass


class NotRegistered(LockerError):
    pass


class OutstandingLockedBtc(LockerError):
    pass


class WouldBreachHealth(LockerError):
    pass


class NotLiquidatable(LockerError):
    pass


class OverLiquidation(LockerError):
    pass


class ExceedsPosition(LockerError):
    pass


class WrongTeleBtcAmount(LockerError):
    pass


class InvalidParams(LockerError):
    pass


def frac(x: Number) -> Fraction:
    """Exact rational from an int, decimal string, float or Fraction."""
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


class LockerStatus(str, enum.Enum):
    ACTIVE = "Active"
    DEREGISTERED = "Deregistered"
    FULLY_SLASHED = "FullySlashed"


@dataclass(frozen=True)
class EconParams:
    collateralization_ratio: Fraction = Fraction(3, 2)
    liquidation_ratio: Fraction = Fraction(6, 5)
    discount_ratio: Fraction = Fraction(19, 20)
    theft_grace: int = 2 * 3600
    unwrap_deadline: int = 6 * 3600

    def __post_init__(self):
        for name in ("collateralization_ratio", "liquidation_ratio", "discount_ratio"):
            object.__setattr__(self, name, frac(getattr(self, name)))
        cr, lr, dr = self.collateralization_ratio, self.liquidation_ratio, self.discount_ratio
        if not cr > 1:
            raise InvalidParams("collateralization_ratio must exceed 1")
        if not 1 < lr < cr:
            raise InvalidParams("liquidation_ratio must lie in (1, collateralization_ratio)")
        if not 1 / lr < dr <= 1:
            raise InvalidParams("discount_ratio must lie in (1/liquidation_ratio, 1]")
        if self.theft_grace < 0 or self.unwrap_deadline <= 0:
            raise InvalidParams("durations must be positive")


@dataclass(frozen=True)
class PriceQuote:
    btc_price: Fraction
    collateral_price: Fraction
    timestamp: int = 0

    def __post_init__(self):
        object.__setattr__(self, "btc_price", frac(self.btc_price))
        object.__setattr__(self, "collateral_price", frac(self.collateral_price))
        if self.btc_price <= 0 or self.collateral_price <= 0:
            raise ValueError("prices must be strictly positive")

    def btc_value(self, sats: int) -> Fraction:
        return Fraction(sats, COIN) * self.btc_price

    def collateral_value(self, units: int) -> Fraction:
        return Fraction(units, UNIT) * self.collateral_price

    def sats_for_value(self, value: Fraction) -> int:
        """Largest satoshi amount worth at most ``value``."""
        return int(value * COIN / self.btc_price) if value > 0 else 0

    def units_for_value(self, value: Fraction) -> int:
        """Largest collateral amount worth at most ``value``."""
        return int(value * UNIT / self.collateral_price) if value > 0 else 0


@dataclass
class LockerAccount:
    locker: str
    btc_address: bytes
    collateral: int
    locked_btc: int = 0
    status: LockerStatus = LockerStatus.ACTIVE
    recorded_payment_txids: set = field(default_factory=set)


@dataclass(frozen=True)
class LiquidationResult:
    collateral_out: int
    pre_ratio: Fraction
    post_ratio: Optional[Fraction]


class LockersManager:
    def __init__(self, params: Optional[EconParams] = None):
        self.params = params or EconParams()
        self.accounts: dict[str, LockerAccount] = {}
        self.collateral_in = 0
        self.collateral_out = 0
        self.wallets: dict[str, int] = {}  # collateral paid out, by recipient
        self.events: list[dict] = []

    # ----------------------------------------------------------- helpers

    def _emit(self, name: str, **fields) -> None:
        self.events.append({"event": name, **fields})

    def account(self, locker: str) -> LockerAccount:
        acct = self.accounts.get(locker)
        if acct is None:
            raise NotRegistered(locker)
        return acct

    def active(self, locker: str) -> LockerAccount:
        acct = self.account(locker)
        if acct.status is not LockerStatus.ACTIVE:
            raise NotRegistered(f"{locker} is {acct.status.value}")
        return acct

    def by_address(self, btc_address: bytes) -> Optional[LockerAccount]:
        for acct in self.accounts.values():
            if acct.btc_address == btc_address and acct.status is LockerStatus.ACTIVE:
                return acct
        return None

    def known_address(self, btc_address: bytes) -> Optional[LockerAccount]:
        """Any locker ever registered under ``btc_address`` (slashing survives deregistration)."""
        active = self.by_address(btc_address)
        if active is not None:
            return active
        for acct in self.accounts.values():
            if acct.btc_address == btc_address:
                return acct
        return None

    def _pay_out(self, acct: LockerAccount, to: str, units: int) -> int:
        units = min(units, acct.collateral)
        acct.collateral -= units
        self.collateral_out += units
        self.wallets[to] = self.wallets.get(to, 0) + units
        if acct.collateral == 0 and acct.status is LockerStatus.ACTIVE:
            acct.status = LockerStatus.FULLY_SLASHED
        return units

    def collateral_ratio(self, locker: str, quote: PriceQuote) -> Optional[Fraction]:
        acct = self.account(locker)
        if acct.locked_btc == 0:
            return None
        return quote.collateral_value(acct.collateral) / quote.btc_value(acct.locked_btc)

    # -------------------------------------------------------- operations

    def register(self, locker: str, btc_address: bytes, collateral: int) -> None:
        existing = self.accounts.get(locker)
        if existing is not None and existing.status is LockerStatus.ACTIVE:
            raise AlreadyRegistered(locker)
        if collateral <= 0:
            raise ZeroCollateral(locker)
        if self.by_address(btc_address) is not None:
            raise AddressInUse(btc_address.hex())
        if existing is not None and existing.locked_btc:
            raise OutstandingLockedBtc(locker)
        self.accounts[locker] = LockerAccount(locker, bytes(btc_address), collateral)
        self.collateral_in += collateral
        self._emit("LockerRegistered", locker=locker, btc_address=btc_address.hex(),
                   collateral=collateral)

    def deregister(self, locker: str) -> int:
        acct = self.active(locker)
        if acct.locked_btc:
            raise OutstandingLockedBtc(f"{locker} still has {acct.locked_btc} sat locked")
        returned = acct.collateral
        self._pay_out(acct, locker, returned)
        acct.status = LockerStatus.DEREGISTERED
        self._emit("LockerDeregistered", locker=locker, returned=returned)
        return returned

    def adjust_collateral(self, locker: str, delta: int, quote: PriceQuote) -> int:
        acct = self.active(locker)
        if delta >= 0:
            acct.collateral += delta
            self.collateral_in += delta
        else:
            new = acct.collateral + delta
            if new < 0:
                raise WouldBreachHealth(f"cannot withdraw {-delta}, only {acct.collateral} held")
            if acct.locked_btc:
                ratio = quote.collateral_value(new) / quote.btc_value(acct.locked_btc)
                if ratio < self.params.collateralization_ratio:
                    raise WouldBreachHealth(f"ratio {float(ratio):.4f} below collateralization ratio")
            self._pay_out(acct, locker, -delta)
            if acct.collateral == 0:
                acct.status = LockerStatus.DEREGISTERED
        self._emit("CollateralAdjusted", locker=locker, delta=delta, collateral=acct.collateral)
        return acct.collateral

    def minting_capacity(self, locker: str, quote: PriceQuote) -> int:
        acct = self.active(locker)
        free = (quote.collateral_value(acct.collateral) / self.params.collateralization_ratio
                - quote.btc_value(acct.locked_btc))
        return quote.sats_for_value(free)

    def check_liquidation(self, locker: str, x_telebtc: int, quote: PriceQuote) -> Fraction:
        """Validate a liquidation of ``x_telebtc`` and return the collateral value owed."""
        acct = self.active(locker)
        if x_telebtc <= 0 or x_telebtc > acct.locked_btc:
            raise ExceedsPosition(f"{x_telebtc} sat outside 1..{acct.locked_btc}")
        p = self.params
        cv = quote.collateral_value(acct.collateral)
        lv = quote.btc_value(acct.locked_btc)
        x = quote.btc_value(x_telebtc)
        if not cv / lv < p.liquidation_ratio:
            raise NotLiquidatable(f"ratio {float(cv / lv):.4f} not below liquidation ratio")
        owed = x / p.discount_ratio
        if x_telebtc == acct.locked_btc:
            # post ratio is +inf unless the collateral does not even cover the payout
            healthy_after = cv - owed > 0
        else:
            healthy_after = not (cv - owed) / (lv - x) < p.collateralization_ratio
        if healthy_after:
            raise OverLiquidation("liquidation would lift the ratio to the collateralization ratio")
        return owed

    def liquidate(self, locker: str, x_telebtc: int, liquidator: str,
                  quote: PriceQuote) -> LiquidationResult:
        """Caller burns ``x_telebtc`` first; this books the collateral side."""
        owed = self.check_liquidation(locker, x_telebtc, quote)
        acct = self.accounts[locker]
        pre = quote.collateral_value(acct.collateral) / quote.btc_value(acct.locked_btc)
        out = self._pay_out(acct, liquidator, quote.units_for_value(owed))
        acct.locked_btc -= x_telebtc
        post = (quote.collateral_value(acct.collateral) / quote.btc_value(acct.locked_btc)
                if acct.locked_btc else None)
        self._emit("Liquidated", locker=locker, liquidator=liquidator, burnt=x_telebtc,
                   collateral_out=out, pre_ratio=str(pre), post_ratio=str(post) if post else None)
        return LiquidationResult(out, pre, post)

    def slash_for_theft(self, locker: str, stolen: int, slasher: str, slasher_telebtc: int,
                        quote: PriceQuote) -> int:
        if slasher_telebtc != stolen:
            raise WrongTeleBtcAmount(f"slasher supplied {slasher_telebtc}, stolen {stolen}")
        acct = self.account(locker)
        owed = quote.btc_value(stolen) / self.params.discount_ratio
        out = self._pay_out(acct, slasher, quote.units_for_value(owed))
        acct.locked_btc -= min(stolen, acct.locked_btc)
        self._emit("TheftSlashed", locker=locker, slasher=slasher, stolen=stolen,
                   collateral_out=out, exhausted=acct.collateral == 0)
        return out

    def slash_for_timeout(self, locker: str, burnt_value: Fraction, user: str,
                          quote: PriceQuote) -> int:
        """Pay ``burnt_value / discount_ratio`` of collateral to ``user``.

        ``burnt_value`` is in value units; the locker's ``locked_btc`` was already
        reduced when the unwrap burned the user's tokens.
        """
        acct = self.account(locker)
        owed = frac(burnt_value) / self.params.discount_ratio
        out = self._pay_out(acct, user, quote.units_for_value(owed))
        self._emit("TimeoutSlashed", locker=locker, user=user, burnt_value=str(burnt_value),
                   collateral_out=out, exhausted=acct.collateral == 0)
        return out

    def record_payment_txid(self, locker: str, txid: bytes) -> None:
        self.account(locker).recorded_payment_txids.add(bytes(txid))

    # ----------------------------------------------------------- queries

    def total_locked(self) -> int:
        return sum(a.locked_btc for a in self.accounts.values())

    def total_collateral(self) -> int:
        return sum(a.collateral for a in self.accounts.values())

    def collateral_conserved(self) -> bool:
        return (self.collateral_in == self.total_collateral() + self.collateral_out
                and self.collateral_out == sum(self.wallets.values()))
