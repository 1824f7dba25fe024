"""Per-token price feeds with Gaussian observation noise, corruptible
oracles, the medianizer consumed by vaults, and the corrupted-feed tail
experiment.

Corruption strategies: "constant-offset" shifts every report by a fixed
amount, "fixed-target" reports one constant value regardless of the base
price, "silent" reports nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ProtocolError, QuorumError, StalePriceError
from .ledger import System

STALE_AFTER_SLOTS = 3

CONSTANT_OFFSET = "constant-offset"
FIXED_TARGET = "fixed-target"
SILENT = "silent"


@dataclass
class PriceFeed:
    """One oracle's feed: honest reports carry N(mu, sigma2) observation noise."""

    oracle_id: int
    mu: float = 0.0
    sigma2: float = 1.0
    honest: bool = True
    strategy: str | None = None  # required when honest is False
    strategy_value: float = 0.0
    per_token: dict[int, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ProtocolError("sigma2 must be > 0")
        if not self.honest and self.strategy not in (CONSTANT_OFFSET, FIXED_TARGET, SILENT):
            raise ProtocolError(f"unknown corruption strategy {self.strategy!r}")

    def noise_params(self, token_id: int) -> tuple[float, float]:
        return self.per_token.get(token_id, (self.mu, self.sigma2))


def report_price(
    feed: PriceFeed, token_id: int, slot: int, base_price: float, rng: np.random.Generator
) -> float | None:
    """One report; corrupt feeds follow their strategy, silent ones return None."""
    if base_price <= 0:
        raise ProtocolError("base price must be > 0")
    if feed.honest:
        mu, sigma2 = feed.noise_params(token_id)
        return max(0.0, base_price + rng.normal(mu, math.sqrt(sigma2)))
    if feed.strategy == SILENT:
        return None
    if feed.strategy == FIXED_TARGET:
        return max(0.0, feed.strategy_value)
    return max(0.0, base_price + feed.strategy_value)  # constant-offset


@dataclass(frozen=True)
class MedianizedPrice:
    token: int
    slot: int
    price: float
    feed_count: int


def medianize(reports: list[float]) -> float:
    """Median of the reports; even counts take the mean of the middle two."""
    if not reports:
        raise StalePriceError("no reports this slot, vault keeps its last value")
    ordered = sorted(reports)
    n = len(ordered)
    mid = n // 2
    if n % 2:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def update_vault_price(
    system: System, token_id: int, reports: list[float], slot: int | None = None
) -> MedianizedPrice:
    """Medianize and install the price the vaults will use from now on."""
    slot = system.slot if slot is None else slot
    price = medianize(reports)  # raises StalePriceError when empty
    med = MedianizedPrice(token_id, slot, price, len(reports))
    system.prices[token_id] = Fraction(price)
    system.price_updated_slot[token_id] = slot
    return med


def is_stale(system: System, token_id: int, slot: int | None = None) -> bool:
    slot = system.slot if slot is None else slot
    last = system.price_updated_slot.get(token_id)
    return last is None or slot - last > STALE_AFTER_SLOTS


# ----------------------------------------------------------------------
# corrupted-feed tail experiment


def tail_bound(n_feeds: int, n_corrupt: int, sigma_star: float, c: float) -> float:
    """Analytic exceedance bound: every honest feed must independently land
    beyond c for the median to cross, so the Gaussian tail bound applies once
    per honest feed."""
    if c <= 0:
        return math.inf
    honest = n_feeds - n_corrupt
    return math.exp(-honest * c * c / (2.0 * sigma_star**2)) * sigma_star / (
        c * math.sqrt(2.0 * math.pi)
    )


@dataclass(frozen=True)
class TailEstimate:
    c: float
    empirical: float
    bound: float
    trials: int
    exceedances: int
    n_feeds: int
    n_corrupt: int
    sigma_star: float


def tail_probability_experiment(
    n_feeds: int,
    n_corrupt: int,
    sigma_star: float,
    c: float,
    trials: int,
    rng: np.random.Generator,
    corrupt_target: float | None = None,
) -> TailEstimate:
    """Estimate P(|median - p| > c) with a corrupted minority of feeds.

    By default the corrupted feeds report the displaced price p + c itself,
    the largest fixed distortion the quorum argument still tolerates: the
    median then moves strictly beyond c only when every honest feed does.
    Pass an explicit `corrupt_target` to study farther targets (for which
    a single stray honest feed suffices and the decay is correspondingly
    slower).
    """
    if n_corrupt < 0 or n_feeds <= 0:
        raise QuorumError("feed counts must be positive")
    if not n_corrupt < n_feeds / 2:
        raise QuorumError(
            f"corrupted feeds must be a strict minority: {n_corrupt} of {n_feeds}"
        )
    if trials < 10**4:
        raise ProtocolError("need at least 10^4 trials")
    if sigma_star <= 0:
        raise ProtocolError("sigma_star must be > 0")

    # base price large enough that the floor-at-zero rule never binds
    base = 1000.0 * max(sigma_star, 1.0) + abs(c)
    target = base + c if corrupt_target is None else corrupt_target
    honest = n_feeds - n_corrupt

    exceed = 0
    chunk = 200_000
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        reports = np.empty((n, n_feeds))
        reports[:, :honest] = rng.normal(base, sigma_star, size=(n, honest))
        reports[:, honest:] = target
        med = np.median(reports, axis=1)
        exceed += int(np.count_nonzero(np.abs(med - base) > c))
        done += n
    return TailEstimate(
        c=c,
        empirical=exceed / trials,
        bound=tail_bound(n_feeds, n_corrupt, sigma_star, c),
        trials=trials,
        exceedances=exceed,
        n_feeds=n_feeds,
        n_corrupt=n_corrupt,
        sigma_star=sigma_star,
    )
