"""Wrap/unwrap front-end: TeleBTC ledger, fees, reservations and slashing entry points.

The proxy owns the wrapped-token ledger and delegates inclusion checks to the
active bridge and custody accounting to :class:`~telebtc.lockers.LockersManager`.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from fractions import Fraction
from math import floor
from typing import Optional, Protocol

from .btc_headers import Hash256, MerkleProof, sha256d
from .chainsim import TAG_LOCK, TAG_UNLOCK, MalformedPayload, SimTx, decode_payload
from .lockers import LockerStatus, LockersManager, PriceQuote, frac

BPS = 10_000


class ProxyError(Exception):
    pass


class DuplicateTx(ProxyError):
    pass


class NotFinalized(ProxyError):
    pass


class NotALocker(ProxyError):
    pass


class CapacityExceeded(ProxyError):
    pass


class InsufficientCapacity(ProxyError):
    pass


class DepositTooSmall(ProxyError):
    pass


class InsufficientBalance(ProxyError):
    pass


class LockerTooSmall(ProxyError):
    pass


class UnknownRequest(ProxyError):
    pass


class DeadlinePassed(ProxyError):
    pass


class DeadlineNotReached(ProxyError):
    pass


class AlreadyResolved(ProxyError):
    pass


class SenderMismatch(ProxyError):
    pass


class ReceiverMismatch(ProxyError):
    pass


class AmountMismatch(ProxyError):
    pass


class NotALockerSpend(ProxyError):
    pass


class RecordedPayment(ProxyError):
    pass


class TooRecent(ProxyError):
    pass


class DuplicateReport(ProxyError):
    pass


class Bridge(Protocol):
    def check_tx_proof(self, txid: Hash256, height: int, tx_index: int,
                       proof: MerkleProof) -> bool: ...

    def block_time(self, height: int) -> Optional[int]: ...


def account_of(address20: bytes) -> str:
    """Target-chain account id for a 20-byte receiver field."""
    return "0x" + bytes(address20).hex()


def _round_half_up(x: Fraction) -> int:
    return floor(x + Fraction(1, 2))


@dataclass(frozen=True)
class FeeParams:
    mint_fee_base: int = 10
    mint_fee_max: int = 100
    burn_fee_max: int = 30
    ratio_knee: Fraction = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "ratio_knee", frac(self.ratio_knee))
        if not 0 <= self.mint_fee_base <= self.mint_fee_max <= BPS:
            raise ValueError("need 0 <= mint_fee_base <= mint_fee_max <= 10000")
        if not 0 <= self.burn_fee_max <= BPS:
            raise ValueError("burn_fee_max outside 0..10000")
        if self.ratio_knee <= 0:
            raise ValueError("ratio_knee must be positive")

    def minting_fee(self, r: Optional[Fraction]) -> int:
        """Basis points; ``None`` stands for an infinite ratio."""
        if r is None:
            r = self.ratio_knee
        slack = max(Fraction(0), 1 - r / self.ratio_knee)
        return _round_half_up(self.mint_fee_base + (self.mint_fee_max - self.mint_fee_base) * slack)

    def burning_fee(self, r: Optional[Fraction]) -> int:
        if r is None:
            r = self.ratio_knee
        return _round_half_up(self.burn_fee_max * min(r / self.ratio_knee, Fraction(1)))


class TeleBtcLedger:
    def __init__(self):
        self.balances: dict[str, int] = {}
        self.total_supply = 0

    def balance(self, account: str) -> int:
        return self.balances.get(account, 0)

    def mint(self, account: str, amount: int) -> None:
        if amount < 0:
            raise ValueError("negative mint")
        if amount:
            self.balances[account] = self.balance(account) + amount
            self.total_supply += amount

    def burn(self, account: str, amount: int) -> None:
        if amount < 0 or self.balance(account) < amount:
            raise InsufficientBalance(f"{account} holds {self.balance(account)}, burn {amount}")
        if amount:
            self.balances[account] -= amount
            self.total_supply -= amount

    def transfer(self, src: str, dst: str, amount: int) -> None:
        if amount < 0 or self.balance(src) < amount:
            raise InsufficientBalance(f"{src} holds {self.balance(src)}, send {amount}")
        if amount:
            self.balances[src] -= amount
            self.balances[dst] = self.balance(dst) + amount

    def consistent(self) -> bool:
        return self.total_supply == sum(self.balances.values())


class RequestStatus(str, enum.Enum):
    OPEN = "Open"
    PAID = "Paid"
    SLASHED = "Slashed"


class ReservationStatus(str, enum.Enum):
    OPEN = "Open"
    CONSUMED = "Consumed"
    EXPIRED = "Expired"


@dataclass
class UnwrapRequest:
    request_id: Hash256
    user: str
    locker: str
    btc_receiver: bytes
    amount_burnt_gross: int
    amount_due: int
    created_at: int
    deadline: int
    status: RequestStatus = RequestStatus.OPEN
    payment_txid: Optional[Hash256] = None
    compensation_units: int = 0
    compensation_value: Optional[Fraction] = None


@dataclass
class Reservation:
    reservation_id: int
    user: str
    locker: str
    amount: int
    deposit: Fraction
    expires_at: int
    status: ReservationStatus = ReservationStatus.OPEN


@dataclass(frozen=True)
class WrapResult:
    txid: Hash256
    locker: str
    amount: int
    teleporter_fee: int
    minting_fee: int
    receiver: str
    receiver_amount: int
    reservation_id: Optional[int] = None


class Proxy:
    def __init__(self, bridge: Bridge, lockers: LockersManager,
                 fees: Optional[FeeParams] = None,
                 reservation_window: int = 3 * 3600,
                 reservation_deposit: Fraction = Fraction(1, 2)):
        self.bridge = bridge
        self.lockers = lockers
        self.fees = fees or FeeParams()
        self.reservation_window = reservation_window
        self.reservation_deposit = frac(reservation_deposit)
        self.ledger = TeleBtcLedger()
        self.minted_txids: set[bytes] = set()
        self.reported_txids: set[bytes] = set()
        self.requests: dict[Hash256, UnwrapRequest] = {}
        self.reservations: list[Reservation] = []
        self.deposits_held = Fraction(0)
        self.deposits_returned: dict[str, Fraction] = {}
        self.treasury = Fraction(0)
        self.events: list[dict] = []
        self._request_nonce = 0

    def _emit(self, name: str, **fields) -> None:
        self.events.append({"event": name, **fields})

    # --------------------------------------------------------------- fees

    def global_ratio(self, quote: PriceQuote) -> Optional[Fraction]:
        """Total free minting capacity value over total locked BTC value."""
        cr = self.lockers.params.collateralization_ratio
        capacity = Fraction(0)
        locked = Fraction(0)
        for acct in self.lockers.accounts.values():
            if acct.status is not LockerStatus.ACTIVE:
                continue
            free = quote.collateral_value(acct.collateral) / cr - quote.btc_value(acct.locked_btc)
            capacity += max(free, Fraction(0))
            locked += quote.btc_value(acct.locked_btc)
        return capacity / locked if locked else None

    def minting_fee_fn(self, r: Optional[Fraction]) -> int:
        return self.fees.minting_fee(r)

    def burning_fee_fn(self, r: Optional[Fraction]) -> int:
        return self.fees.burning_fee(r)

    # ------------------------------------------------------- reservations

    def reserved(self, locker: str) -> int:
        return sum(r.amount for r in self.reservations
                   if r.locker == locker and r.status is ReservationStatus.OPEN)

    def free_capacity(self, locker: str, quote: PriceQuote) -> int:
        return max(0, self.lockers.minting_capacity(locker, quote) - self.reserved(locker))

    def reserve_capacity(self, user: str, locker: str, amount: int, deposit: Fraction,
                         now: int, quote: PriceQuote) -> Reservation:
        deposit = frac(deposit)
        if deposit < self.reservation_deposit:
            raise DepositTooSmall(f"deposit {deposit} below {self.reservation_deposit}")
        free = self.free_capacity(locker, quote)
        if amount <= 0 or amount > free:
            raise InsufficientCapacity(f"{amount} sat requested, {free} free at {locker}")
        res = Reservation(len(self.reservations), user, locker, amount, deposit,
                          now + self.reservation_window)
        self.reservations.append(res)
        self.deposits_held += deposit
        self._emit("CapacityReserved", reservation=res.reservation_id, user=user, locker=locker,
                   amount=amount, deposit=str(deposit), expires_at=res.expires_at)
        return res

    def expire_reservations(self, now: int) -> list[int]:
        expired = []
        for res in self.reservations:
            if res.status is ReservationStatus.OPEN and now > res.expires_at:
                res.status = ReservationStatus.EXPIRED
                self.deposits_held -= res.deposit
                self.treasury += res.deposit
                expired.append(res.reservation_id)
                self._emit("ReservationExpired", reservation=res.reservation_id, user=res.user,
                           forfeited=str(res.deposit))
        return expired

    # --------------------------------------------------------------- wrap

    def wrap(self, tx: SimTx, height: int, tx_index: int, proof: MerkleProof,
             submitter: str, quote: PriceQuote) -> WrapResult:
        txid = tx.txid
        if bytes(txid) in self.minted_txids:
            raise DuplicateTx(str(txid))
        if not self.bridge.check_tx_proof(txid, height, tx_index, proof):
            raise NotFinalized(f"{txid} not provable at height {height}")
        tag, fields = decode_payload(tx.data_payload)
        if tag != TAG_LOCK:
            raise MalformedPayload("not a lock payload")
        receiver_addr, teleporter_bps = fields
        receiver = account_of(receiver_addr)

        acct = None
        for out in tx.outputs:
            acct = self.lockers.by_address(out.address)
            if acct is not None:
                break
        if acct is None:
            raise NotALocker(f"{txid} pays no registered locker")
        amount = sum(o.amount for o in tx.outputs if o.address == acct.btc_address)

        reservation = None
        for res in self.reservations:
            if (res.status is ReservationStatus.OPEN and res.user == receiver
                    and res.locker == acct.locker and res.amount >= amount):
                reservation = res
                break
        if reservation is None:
            free = self.free_capacity(acct.locker, quote)
            if free < amount:
                raise CapacityExceeded(f"{amount} sat exceeds free capacity {free}")

        mint_bps = self.minting_fee_fn(self.global_ratio(quote))
        tele_fee = amount * teleporter_bps // BPS
        mint_fee = amount * mint_bps // BPS
        rest = amount - tele_fee - mint_fee
        self.ledger.mint(submitter, tele_fee)
        self.ledger.mint(acct.locker, mint_fee)
        self.ledger.mint(receiver, rest)
        acct.locked_btc += amount
        self.minted_txids.add(bytes(txid))
        if reservation is not None:
            reservation.status = ReservationStatus.CONSUMED
            self.deposits_held -= reservation.deposit
            self.deposits_returned[reservation.user] = (
                self.deposits_returned.get(reservation.user, Fraction(0)) + reservation.deposit)
        self._emit("Wrapped", txid=str(txid), locker=acct.locker, amount=amount,
                   submitter=submitter, teleporter_fee=tele_fee, minting_fee=mint_fee,
                   receiver=receiver, receiver_amount=rest,
                   reservation=reservation.reservation_id if reservation else None)
        return WrapResult(txid, acct.locker, amount, tele_fee, mint_fee, receiver, rest,
                          reservation.reservation_id if reservation else None)

    # ------------------------------------------------------------- unwrap

    def unwrap(self, user: str, x: int, locker: str, btc_receiver: bytes, now: int,
               quote: PriceQuote) -> UnwrapRequest:
        if x <= 0 or self.ledger.balance(user) < x:
            raise InsufficientBalance(f"{user} holds {self.ledger.balance(user)}, unwrap {x}")
        acct = self.lockers.active(locker)
        fee_bps = self.burning_fee_fn(self.global_ratio(quote))
        due = x * (BPS - fee_bps) // BPS
        if acct.locked_btc < due:
            raise LockerTooSmall(f"{locker} locks {acct.locked_btc}, {due} due")
        self.ledger.transfer(user, locker, x - due)
        self.ledger.burn(user, due)
        acct.locked_btc -= due
        self._request_nonce += 1
        rid = sha256d(b"unwrap" + struct.pack("<Q", self._request_nonce) + user.encode()
                      + bytes(btc_receiver) + struct.pack("<QQ", x, now))
        req = UnwrapRequest(rid, user, locker, bytes(btc_receiver), x, due, now,
                            now + self.lockers.params.unwrap_deadline)
        self.requests[rid] = req
        self._emit("UnwrapRequested", request=str(rid), user=user, locker=locker, gross=x,
                   due=due, burning_fee_bps=fee_bps, deadline=req.deadline)
        return req

    def _request(self, request_id: Hash256) -> UnwrapRequest:
        req = self.requests.get(request_id)
        if req is None:
            raise UnknownRequest(str(request_id))
        return req

    def submit_payment_proof(self, request_id: Hash256, tx: SimTx, height: int, tx_index: int,
                             proof: MerkleProof, now: int) -> RequestStatus:
        req = self._request(request_id)
        if req.status is not RequestStatus.OPEN:
            raise AlreadyResolved(f"request {request_id} is {req.status.value}")
        if now > req.deadline:
            raise DeadlinePassed(f"deadline {req.deadline} passed at {now}")
        if not self.bridge.check_tx_proof(tx.txid, height, tx_index, proof):
            raise NotFinalized(f"{tx.txid} not provable at height {height}")
        tag, fields = decode_payload(tx.data_payload)
        if tag != TAG_UNLOCK or bytes(fields[0]) != bytes(request_id):
            raise MalformedPayload("payment does not reference this request")
        if tx.sender != self.lockers.account(req.locker).btc_address:
            raise SenderMismatch("payment not sent from the locker address")
        paid = sum(o.amount for o in tx.outputs if o.address == req.btc_receiver)
        if not any(o.address == req.btc_receiver for o in tx.outputs):
            raise ReceiverMismatch("payment has no output to the requested receiver")
        if paid != req.amount_due:
            raise AmountMismatch(f"paid {paid}, due {req.amount_due}")
        req.status = RequestStatus.PAID
        req.payment_txid = tx.txid
        self.lockers.record_payment_txid(req.locker, tx.txid)
        self._emit("UnwrapPaid", request=str(request_id), locker=req.locker, txid=str(tx.txid),
                   amount=paid)
        return req.status

    def claim_timeout(self, request_id: Hash256, now: int, quote: PriceQuote) -> int:
        req = self._request(request_id)
        if req.status is not RequestStatus.OPEN:
            raise AlreadyResolved(f"request {request_id} is {req.status.value}")
        if now <= req.deadline:
            raise DeadlineNotReached(f"deadline {req.deadline} not passed at {now}")
        req.status = RequestStatus.SLASHED
        out = self.lockers.slash_for_timeout(req.locker, quote.btc_value(req.amount_due),
                                             req.user, quote)
        req.compensation_units = out
        req.compensation_value = quote.collateral_value(out)
        self._emit("UnwrapSlashed", request=str(request_id), locker=req.locker, user=req.user,
                   collateral_out=out)
        return out

    # ------------------------------------------------------------ slashing

    def theft_amount(self, tx: SimTx) -> int:
        """Satoshi leaving a locker address in ``tx`` (zero if the sender is no locker)."""
        acct = self.lockers.known_address(tx.sender) if tx.sender else None
        if acct is None:
            return 0
        return min(sum(o.amount for o in tx.outputs if o.address != acct.btc_address),
                   acct.locked_btc)

    def report_theft(self, tx: SimTx, height: int, tx_index: int, proof: MerkleProof,
                     slasher: str, slasher_telebtc: int, now: int, quote: PriceQuote) -> int:
        txid = tx.txid
        if bytes(txid) in self.reported_txids:
            raise DuplicateReport(str(txid))
        if not self.bridge.check_tx_proof(txid, height, tx_index, proof):
            raise NotFinalized(f"{txid} not provable at height {height}")
        acct = self.lockers.known_address(tx.sender) if tx.sender else None
        if acct is None:
            raise NotALockerSpend("sender is not a locker address")
        if bytes(txid) in acct.recorded_payment_txids:
            raise RecordedPayment(str(txid))
        block_time = self.bridge.block_time(height)
        if block_time is None or block_time + self.lockers.params.theft_grace > now:
            raise TooRecent(f"block time {block_time} within grace at {now}")
        stolen = self.theft_amount(tx)
        if stolen <= 0:
            raise NotALockerSpend("no value left the locker")
        if self.ledger.balance(slasher) < slasher_telebtc:
            raise InsufficientBalance(f"{slasher} cannot supply {slasher_telebtc}")
        out = self.lockers.slash_for_theft(acct.locker, stolen, slasher, slasher_telebtc, quote)
        self.ledger.burn(slasher, slasher_telebtc)
        self.reported_txids.add(bytes(txid))
        self._emit("TheftReported", txid=str(txid), locker=acct.locker, slasher=slasher,
                   stolen=stolen, collateral_out=out)
        return out

    def liquidate(self, locker: str, x_telebtc: int, liquidator: str, quote: PriceQuote):
        """Burn the liquidator's TeleBTC and buy discounted collateral."""
        self.lockers.check_liquidation(locker, x_telebtc, quote)
        if self.ledger.balance(liquidator) < x_telebtc:
            raise InsufficientBalance(f"{liquidator} cannot supply {x_telebtc}")
        result = self.lockers.liquidate(locker, x_telebtc, liquidator, quote)
        self.ledger.burn(liquidator, x_telebtc)
        return result
