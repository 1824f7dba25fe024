"""CDP lifecycle, stability fees, liquidation auctions, savings pot and the
system-level full-backing check.

All accept/reject decisions are made with exact arithmetic: Fractions for
prices and ratios, Decimals (18 fractional digits, conservative rounding)
for debt. The liquidation criterion `p*c/D > gamma` is strict, as is the
fractional debt-ceiling inequality.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal, localcontext
from fractions import Fraction
from typing import Any

from .errors import (
    AuctionError,
    CeilingViolationError,
    InsufficientBalanceError,
    InvalidParameterError,
    ProtocolError,
    RatioViolationError,
)
from .ledger import OPEN, SCALE, Cdp, CoinChain, System


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


@dataclass(frozen=True)
class SystemParams:
    """Governance-controlled protocol parameters.

    gamma > theta > 1 is required; per-token debt ceilings are fractions of
    system-wide debt (1 means unconstrained). The relay quorum needs
    n >= 3f+1 so that 2f+1 votes certify a decision.
    """

    gamma: Fraction = Fraction(3, 2)  # liquidation ratio
    theta: Fraction = Fraction(11, 10)  # full-backing safety threshold
    stability_fee: Decimal = Decimal("0")  # per-slot debt growth rate
    savings_rate: Decimal = Decimal("0")  # per-slot DSR rate
    liquidation_penalty: Fraction = Fraction(13, 100)
    debt_ceilings: dict[int, Fraction] = field(default_factory=dict)  # token id -> zeta
    auction_duration: int = 12  # slots
    bid_duration: int = 6  # slots
    min_bid_step: Fraction = Fraction(3, 100)
    beta: Fraction = Fraction(1, 10)  # flexibility margin for ceiling derivation
    relay_n: int = 4
    relay_f: int = 1
    transfer_timeout: int = 20  # slots
    bootstrap_ceiling: int = 10**6 * SCALE  # absolute cap for mints while total debt is 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not (self.gamma > self.theta > 1):
            raise InvalidParameterError(
                f"need gamma > theta > 1, got gamma={self.gamma}, theta={self.theta}"
            )
        for name in ("stability_fee", "savings_rate"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be >= 0")
        for name in ("liquidation_penalty", "min_bid_step", "beta"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be >= 0")
        for token, zeta in self.debt_ceilings.items():
            if not (0 <= zeta <= 1):
                raise InvalidParameterError(f"debt ceiling for token {token} not in [0,1]")
        if self.auction_duration <= 0 or self.bid_duration <= 0:
            raise InvalidParameterError("auction durations must be positive")
        if self.relay_f < 0 or self.relay_n < 3 * self.relay_f + 1:
            raise InvalidParameterError(
                f"relay quorum needs n >= 3f+1, got n={self.relay_n}, f={self.relay_f}"
            )
        if self.transfer_timeout <= 0:
            raise InvalidParameterError("transfer_timeout must be positive")
        if self.bootstrap_ceiling < 0:
            raise InvalidParameterError("bootstrap_ceiling must be >= 0")

    def ceiling(self, token_id: int) -> Fraction:
        return self.debt_ceilings.get(token_id, Fraction(1))

    def with_param(self, name: str, value) -> "SystemParams":
        if not hasattr(self, name):
            raise InvalidParameterError(f"unknown parameter {name!r}")
        coerced = _coerce_param(name, value)
        return replace(self, **{name: coerced})

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "SystemParams":
        params = cls()
        for name, value in doc.items():
            params = params.with_param(name, value)
        return params


def _coerce_param(name: str, value):
    if name in ("stability_fee", "savings_rate"):
        return Decimal(str(value))
    if name in ("gamma", "theta", "liquidation_penalty", "min_bid_step", "beta"):
        return Fraction(str(value))
    if name == "debt_ceilings":
        return {int(k): Fraction(str(v)) for k, v in dict(value).items()}
    return int(value)


# ----------------------------------------------------------------------
# helpers


def _find_cdp(system: System, cdp_id: int) -> tuple[CoinChain, Cdp]:
    for chain in system.chains.values():
        if cdp_id in chain.cdps:
            return chain, chain.cdps[cdp_id]
    raise ProtocolError(f"unknown CDP id {cdp_id}")


def collateral_value(system: System, cdp: Cdp, prices=None) -> Fraction:
    prices = prices if prices is not None else system.prices
    price = _frac(prices[cdp.token])
    return price * Fraction(cdp.collateral, SCALE)


def debt_totals(system: System) -> tuple[dict[int, Fraction], Fraction]:
    """Exact per-token and total debt across every chain."""
    per_token: dict[int, Fraction] = {}
    total = Fraction(0)
    for chain in system.chains.values():
        for cdp in chain.cdps.values():
            if cdp.debt:
                d = Fraction(cdp.debt)
                per_token[cdp.token] = per_token.get(cdp.token, Fraction(0)) + d
                total += d
    return per_token, total


# ----------------------------------------------------------------------
# CDP lifecycle


def open_cdp(system: System, chain_id: int, owner: int, token_id: int) -> int:
    chain = system.chain(chain_id)
    token = system.tokens.get(token_id)
    if token is None or token.chain != chain_id:
        raise ProtocolError(f"token {token_id} is not registered on chain {chain_id}")
    cdp_id = system.new_cdp_id()
    system.apply(chain.id, "cdp_open", {"cdp": cdp_id, "owner": owner, "token": token_id})
    return cdp_id


def deposit_collateral(system: System, cdp_id: int, amount: int) -> None:
    chain, cdp = _find_cdp(system, cdp_id)
    if amount < 0:
        raise ProtocolError("deposit amount must be >= 0")
    if cdp.state != OPEN:
        raise ProtocolError(f"CDP {cdp_id} is not open")
    if amount == 0:
        return
    system.apply(chain.id, "cdp_deposit", {"cdp": cdp_id, "amount": amount})


def repay_debt(system: System, cdp_id: int, amount: int) -> None:
    chain, cdp = _find_cdp(system, cdp_id)
    if amount < 0:
        raise ProtocolError("repay amount must be >= 0")
    if chain.balance(cdp.owner) < amount:
        raise InsufficientBalanceError(f"owner {cdp.owner} cannot cover repayment of {amount}")
    if Fraction(amount, SCALE) > Fraction(cdp.debt):
        raise ProtocolError(f"repay {amount} exceeds outstanding debt {cdp.debt}")
    if amount == 0:
        return
    system.apply(chain.id, "cdp_repay", {"cdp": cdp_id, "amount": amount})


def withdraw_stablecoins(system: System, cdp_id: int, amount: int, prices=None) -> int:
    """Mint `amount` minor units against the CDP.

    Accepted only if, after the action, the CDP stays strictly above the
    liquidation ratio and the per-token fractional debt ceiling still holds
    system-wide. While total debt is zero the absolute bootstrap ceiling
    applies instead of the (then-degenerate) fractional rule.
    """
    chain, cdp = _find_cdp(system, cdp_id)
    params: SystemParams = system.params
    if amount < 0:
        raise ProtocolError("mint amount must be >= 0")
    if cdp.state != OPEN:
        raise ProtocolError(f"CDP {cdp_id} is not open")
    if amount == 0:
        return 0

    value = collateral_value(system, cdp, prices)
    new_debt = Fraction(cdp.debt) + Fraction(amount, SCALE)
    if not value > params.gamma * new_debt:
        raise RatioViolationError(
            f"collateral value {float(value):.6g} would not strictly exceed "
            f"gamma * debt = {float(params.gamma * new_debt):.6g}"
        )

    per_token, total = debt_totals(system)
    if total == 0:
        if amount > params.bootstrap_ceiling:
            raise CeilingViolationError(
                f"bootstrap mint {amount} exceeds absolute ceiling {params.bootstrap_ceiling}"
            )
    else:
        zeta = params.ceiling(cdp.token)
        if zeta < 1:
            new_token_debt = per_token.get(cdp.token, Fraction(0)) + Fraction(amount, SCALE)
            new_total = total + Fraction(amount, SCALE)
            if not new_token_debt < zeta * new_total:
                raise CeilingViolationError(
                    f"token {cdp.token} debt would reach "
                    f"{float(new_token_debt / new_total):.6g} of total, ceiling {float(zeta):.6g}"
                )

    system.apply(chain.id, "cdp_mint", {"cdp": cdp_id, "amount": amount})
    return amount


def withdraw_collateral(system: System, cdp_id: int, amount: int, prices=None) -> None:
    chain, cdp = _find_cdp(system, cdp_id)
    params: SystemParams = system.params
    if amount < 0 or amount > cdp.collateral:
        raise ProtocolError("withdrawal amount out of range")
    if cdp.state != OPEN:
        raise ProtocolError(f"CDP {cdp_id} is not open")
    if cdp.debt:
        prices_map = prices if prices is not None else system.prices
        price = _frac(prices_map[cdp.token])
        remaining_value = price * Fraction(cdp.collateral - amount, SCALE)
        if not remaining_value > params.gamma * Fraction(cdp.debt):
            raise RatioViolationError("withdrawal would breach the liquidation ratio")
    if amount == 0:
        return
    system.apply(
        chain.id,
        "cdp_withdraw_collateral",
        {"cdp": cdp_id, "amount": amount, "to": cdp.owner},
    )


def close_cdp(system: System, cdp_id: int) -> None:
    chain, cdp = _find_cdp(system, cdp_id)
    if cdp.state != OPEN:
        raise ProtocolError(f"CDP {cdp_id} is not open")
    if cdp.debt != 0:
        raise ProtocolError(f"CDP {cdp_id} still has debt {cdp.debt}")
    if cdp.collateral:
        system.apply(
            chain.id,
            "cdp_withdraw_collateral",
            {"cdp": cdp_id, "amount": cdp.collateral, "to": cdp.owner},
        )
    system.apply(chain.id, "cdp_close", {"cdp": cdp_id})


# ----------------------------------------------------------------------
# fees and liquidation


def accrue_stability_fee(system: System, slots: int) -> None:
    """Grow every open CDP's debt by (1+delta)^slots; the increase becomes
    surplus claimable through the savings pot of the CDP's chain."""
    if slots < 0:
        raise ProtocolError("slots must be >= 0")
    delta = system.params.stability_fee
    if slots == 0 or delta == 0:
        return
    with localcontext() as ctx:
        ctx.prec = 60
        factor = (1 + delta) ** slots
        for chain in system.chains.values():
            debts: dict[str, str] = {}
            surplus_delta = Decimal(0)
            for cdp in chain.cdps.values():
                if cdp.state != OPEN or not cdp.debt:
                    continue
                new_debt = (cdp.debt * factor).quantize(Decimal("1e-18"), ROUND_HALF_UP)
                surplus_delta += new_debt - cdp.debt
                debts[str(cdp.id)] = str(new_debt)
            if debts:
                system.apply(
                    chain.id,
                    "fee_accrue",
                    {"debts": debts, "surplus_delta": str(surplus_delta)},
                )


def check_liquidatable(cdp: Cdp, price: Fraction, gamma: Fraction) -> bool:
    """True iff p*c/D <= gamma with D > 0 (a debt-free CDP is never liquidatable)."""
    if not cdp.debt:
        return False
    value = _frac(price) * Fraction(cdp.collateral, SCALE)
    return value <= _frac(gamma) * Fraction(cdp.debt)


# ----------------------------------------------------------------------
# collateral auctions (single-phase ascending)


def _auction_deadline(auction, params: SystemParams) -> int:
    deadline = auction.start_slot + params.auction_duration
    if auction.last_bid_slot is not None:
        deadline = min(deadline, auction.last_bid_slot + params.bid_duration)
    return deadline


def start_auction(system: System, cdp_id: int, prices=None) -> int:
    chain, cdp = _find_cdp(system, cdp_id)
    if cdp.state != OPEN:
        raise AuctionError(f"CDP {cdp_id} is not open")
    prices_map = prices if prices is not None else system.prices
    if not check_liquidatable(cdp, prices_map[cdp.token], system.params.gamma):
        raise AuctionError(f"CDP {cdp_id} is not liquidatable at the current price")
    system.apply(chain.id, "auction_start", {"cdp": cdp_id, "slot": chain.clock})
    return cdp_id


def place_bid(system: System, cdp_id: int, bidder: int, amount: int) -> None:
    chain, cdp = _find_cdp(system, cdp_id)
    auction = chain.auctions.get(cdp_id)
    if auction is None or not auction.open:
        raise AuctionError(f"no open auction for CDP {cdp_id}")
    if chain.clock >= _auction_deadline(auction, system.params):
        raise AuctionError("auction expired")
    if amount <= 0:
        raise AuctionError("bid must be positive")
    if auction.best_bidder is not None:
        min_next = Fraction(auction.best_bid) * (1 + system.params.min_bid_step)
        if Fraction(amount) < min_next:
            raise AuctionError(
                f"bid {amount} below minimum step, needs >= {float(min_next):.6g}"
            )
    if chain.balance(bidder) < amount:
        raise InsufficientBalanceError(f"bidder {bidder} cannot cover bid of {amount}")
    system.apply(
        chain.id, "auction_bid", {"cdp": cdp_id, "bidder": bidder, "amount": amount, "slot": chain.clock}
    )


def settle_auction(system: System, cdp_id: int) -> dict:
    """Settle at the deadline.

    With winning bid B and debt D: min(B, D) is burned against the debt,
    up to D*penalty of any excess goes to the savings-pot surplus, the rest
    is refunded to the CDP owner, and the winner takes all collateral.
    B < D (or no bids) leaves the CDP insolvent; the follow-up debt auction
    is out of scope and only logged.
    """
    chain, cdp = _find_cdp(system, cdp_id)
    auction = chain.auctions.get(cdp_id)
    if auction is None or not auction.open:
        raise AuctionError(f"no open auction for CDP {cdp_id}")
    if chain.clock < _auction_deadline(auction, system.params):
        raise AuctionError("auction deadline not reached")

    params: SystemParams = system.params
    if auction.best_bidder is None:
        payload = {
            "cdp": cdp_id,
            "winner": None,
            "bid": 0,
            "burned": 0,
            "to_surplus": 0,
            "refund": 0,
            "collateral": 0,
            "insolvent": True,
        }
        system.apply(chain.id, "auction_settle", payload)
        return payload

    bid = auction.best_bid
    debt_minor = Fraction(cdp.debt) * SCALE  # exact
    debt_ceil = int(debt_minor) + (0 if debt_minor.denominator == 1 else 1)
    if bid >= debt_ceil:
        burned = debt_ceil
        excess = bid - burned
        penalty_cap = int(Fraction(cdp.debt) * params.liquidation_penalty * SCALE)
        to_surplus = min(excess, penalty_cap)
        refund = excess - to_surplus
        insolvent = False
    else:
        burned, to_surplus, refund, insolvent = bid, 0, 0, True
    payload = {
        "cdp": cdp_id,
        "winner": auction.best_bidder,
        "bid": bid,
        "burned": burned,
        "to_surplus": to_surplus,
        "refund": refund,
        "collateral": cdp.collateral,
        "insolvent": insolvent,
    }
    system.apply(chain.id, "auction_settle", payload)
    return payload


# ----------------------------------------------------------------------
# savings pot (DSR)


def savings_deposit(system: System, chain_id: int, user: int, amount: int) -> None:
    chain = system.chain(chain_id)
    if amount < 0:
        raise ProtocolError("deposit amount must be >= 0")
    if chain.balance(user) < amount:
        raise InsufficientBalanceError(f"user {user} cannot cover deposit of {amount}")
    if amount == 0:
        return
    system.apply(chain_id, "savings_deposit", {"user": user, "amount": amount})


def savings_accrue(system: System, chain_id: int, slots: int) -> dict[int, int]:
    """Pay depositors at the savings rate, capped by the available surplus.

    Interest is minted against surplus and never exceeds it; when surplus is
    short the payout is pro-rata, rounded down per user.
    """
    chain = system.chain(chain_id)
    if slots < 0:
        raise ProtocolError("slots must be >= 0")
    rate = system.params.savings_rate
    if slots == 0 or rate == 0 or not chain.pot.deposits:
        return {}
    with localcontext() as ctx:
        ctx.prec = 60
        growth = (1 + rate) ** slots - 1
        owed = {
            user: int(Decimal(dep) * growth)  # floor, minor units
            for user, dep in sorted(chain.pot.deposits.items())
            if dep > 0
        }
        owed = {u: w for u, w in owed.items() if w > 0}
        if not owed:
            return {}
        total_owed = sum(owed.values())
        available = int(chain.pot.surplus * SCALE)  # floor
        if available <= 0:
            return {}
        if total_owed <= available:
            payouts = owed
        else:
            payouts = {
                u: w * available // total_owed for u, w in owed.items()
            }
            payouts = {u: w for u, w in payouts.items() if w > 0}
            if not payouts:
                return {}
    total = sum(payouts.values())
    system.apply(
        chain_id,
        "savings_accrue",
        {"payouts": {str(u): w for u, w in payouts.items()}, "total": total},
    )
    return payouts


def savings_withdraw(system: System, chain_id: int, user: int, amount: int | None = None) -> int:
    chain = system.chain(chain_id)
    held = chain.pot.deposits.get(user, 0)
    if amount is None:
        amount = held
    if amount < 0 or amount > held:
        raise ProtocolError(f"user {user} holds {held} in the pot, cannot withdraw {amount}")
    if amount == 0:
        return 0
    system.apply(chain_id, "savings_withdraw", {"user": user, "amount": amount})
    return amount


# ----------------------------------------------------------------------
# system-wide backing


@dataclass(frozen=True)
class BackingReport:
    collateral_value: Fraction
    total_debt: Fraction
    ratio: Fraction | None  # None encodes +infinity (no debt)
    ok: bool


def full_backing(system: System, prices=None) -> BackingReport:
    """Aggregate collateral value over aggregate debt, compared against theta."""
    prices_map = prices if prices is not None else system.prices
    c_star = Fraction(0)
    d_star = Fraction(0)
    for chain in system.chains.values():
        for cdp in chain.cdps.values():
            if cdp.collateral:
                c_star += _frac(prices_map[cdp.token]) * Fraction(cdp.collateral, SCALE)
            if cdp.debt:
                d_star += Fraction(cdp.debt)
    if d_star == 0:
        return BackingReport(c_star, d_star, None, True)
    ratio = c_star / d_star
    return BackingReport(c_star, d_star, ratio, ratio > system.params.theta)
