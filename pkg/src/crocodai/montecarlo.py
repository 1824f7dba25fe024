"""First-passage failure-probability estimation for a collateral portfolio.

A run fails when the portfolio's relative value (vs. the issue slot) drops
to theta/gamma' or below at any slot of the horizon: the collateral then no
longer covers theta times the stablecoins issued against it at initial
over-collateralization gamma'. Failure depends only on the portfolio's
relative composition, never on its absolute size.

Runs are pure functions of (config, seed, run index): draws come from
fixed-size counter-derived substreams, so parallel and serial execution
aggregate to bit-identical results.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, ModelError
from .riskmodel import NORMAL, STUDENT_T, PriceSeries, ReturnModel, _gap_boundaries

CHUNK_RUNS = 1024  # substream granularity, independent of the job count


@dataclass(frozen=True)
class Portfolio:
    """Collateral basket as value fractions summing to one."""

    name: str
    assets: tuple[str, ...]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "assets", tuple(self.assets))
        if len(self.assets) != len(w) or len(w) == 0:
            raise DataError("portfolio needs one weight per asset")
        if np.any(w < 0):
            raise DataError("portfolio weights must be >= 0")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise DataError(f"portfolio weights must sum to 1, got {w.sum()!r}")

    @classmethod
    def from_amounts(cls, name: str, amounts: Mapping[str, float],
                     prices: Mapping[str, float] | None = None) -> "Portfolio":
        """Build from absolute token amounts (optionally priced); the overall
        scale cancels, only the relative composition survives."""
        assets = tuple(amounts)
        values = np.array(
            [amounts[a] * (prices[a] if prices else 1.0) for a in assets], dtype=float
        )
        total = values.sum()
        if total <= 0:
            raise DataError("portfolio must have positive total value")
        return cls(name, assets, values / total)

    @classmethod
    def from_weights(cls, name: str, weights: Mapping[str, float]) -> "Portfolio":
        assets = tuple(weights)
        w = np.array([weights[a] for a in assets], dtype=float)
        return cls(name, assets, w / w.sum())


@dataclass(frozen=True)
class FailureEstimate:
    probability: float
    ci_half_width: float
    runs: int
    horizon: int
    method: str
    gamma_prime: float
    theta: float
    seed: int
    failures: int

    def as_json(self) -> dict:
        return {
            "probability": self.probability,
            "ci_half_width": self.ci_half_width,
            "runs": self.runs,
            "horizon": self.horizon,
            "method": self.method,
            "gamma_prime": self.gamma_prime,
            "theta": self.theta,
            "seed": self.seed,
            "failures": self.failures,
        }


def confidence_interval(failures: int, runs: int) -> float:
    """Wald 95% half-width; degenerates to 0 at the p=0 and p=1 edges."""
    if not 0 <= failures <= runs or runs < 1:
        raise DataError("need 0 <= failures <= runs with runs >= 1")
    p = failures / runs
    return 1.96 * math.sqrt(p * (1.0 - p) / runs)


def _chunk_min_relvalue(args) -> np.ndarray:
    model, weights, idx, horizon, n, distribution, seed, chunk_index, zero_drift = args
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(chunk_index,)))
    m = len(model.assets)
    if distribution == NORMAL:
        innov = rng.standard_normal((m, horizon, n))
    elif distribution == STUDENT_T:
        innov = np.empty((m, horizon, n))
        for i in range(m):
            nu = float(model.nu[i])
            if nu <= 2:
                raise ModelError(f"nu must exceed 2 for the t sampler, got {nu}")
            innov[i] = rng.standard_t(nu, (horizon, n)) / math.sqrt(nu / (nu - 2.0))
    else:
        raise ModelError(f"unknown distribution {distribution!r}")
    returns = np.einsum("ij,jtn->itn", model.chol, innov)
    if not zero_drift:
        returns += model.mu[:, None, None]
    rel = np.exp(np.cumsum(returns[idx], axis=1))  # per-asset price ratio paths
    value = np.einsum("i,itn->tn", weights, rel)
    return value.min(axis=0)


def _min_relative_values(
    portfolio: Portfolio,
    model: ReturnModel,
    horizon: int,
    runs: int,
    distribution: str,
    seed: int,
    zero_drift: bool,
    jobs: int = 1,
) -> np.ndarray:
    """Minimum relative portfolio value over slots 1..horizon, one per run."""
    idx = model.index_of(portfolio.assets)
    tasks = []
    chunk_index = 0
    remaining = runs
    while remaining > 0:
        n = min(CHUNK_RUNS, remaining)
        tasks.append(
            (model, portfolio.weights, idx, horizon, n, distribution, seed, chunk_index, zero_drift)
        )
        chunk_index += 1
        remaining -= n
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_chunk_min_relvalue, tasks))
    else:
        parts = [_chunk_min_relvalue(t) for t in tasks]
    return np.concatenate(parts)


def _validate_levels(gamma_prime: float, theta: float) -> float:
    if not (gamma_prime > theta > 1.0):
        raise DataError(f"need gamma' > theta > 1, got {gamma_prime}, {theta}")
    return theta / gamma_prime


def simulate_failure(
    portfolio: Portfolio,
    model: ReturnModel,
    gamma_prime: float,
    theta: float,
    horizon: int,
    runs: int,
    distribution: str = STUDENT_T,
    seed: int = 0,
    zero_drift: bool = False,
    jobs: int = 1,
) -> FailureEstimate:
    """Monte Carlo first-passage failure probability with a Wald 95% CI."""
    threshold = _validate_levels(gamma_prime, theta)
    if horizon < 1 or runs < 1:
        raise DataError("horizon and runs must be >= 1")
    mins = _min_relative_values(portfolio, model, horizon, runs, distribution, seed, zero_drift, jobs)
    failures = int(np.count_nonzero(mins <= threshold))
    return FailureEstimate(
        probability=failures / runs,
        ci_half_width=confidence_interval(failures, runs),
        runs=runs,
        horizon=horizon,
        method=distribution,
        gamma_prime=gamma_prime,
        theta=theta,
        seed=seed,
        failures=failures,
    )


# ----------------------------------------------------------------------
# historical replay


def historical_replay(
    portfolio: Portfolio,
    series_map: Mapping[str, PriceSeries],
    gamma_prime: float,
    theta: float,
    horizon: int,
) -> FailureEstimate:
    """Evaluate the first-passage criterion over every horizon-long window of
    actual prices that fits inside a single period."""
    if not (gamma_prime >= theta > 1.0):
        raise DataError(f"need gamma' >= theta > 1, got {gamma_prime}, {theta}")
    threshold = theta / gamma_prime
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    missing = [a for a in portfolio.assets if a not in series_map]
    if missing:
        raise DataError(f"portfolio assets missing from the dataset: {missing}")

    common: np.ndarray | None = None
    for a in portfolio.assets:
        t = series_map[a].times
        common = t if common is None else np.intersect1d(common, t, assume_unique=True)
    if common is None or len(common) < horizon + 1:
        raise DataError("insufficient data: no window of the requested horizon")
    panel = np.empty((len(portfolio.assets), len(common)))
    for i, a in enumerate(portfolio.assets):
        ser = series_map[a]
        panel[i] = ser.prices[np.searchsorted(ser.times, common)]

    cuts = sorted(_gap_boundaries(common) | {0, len(common)})
    windows = 0
    failures = 0
    for a, b in zip(cuts[:-1], cuts[1:]):
        span = b - a
        if span < horizon + 1:
            continue
        for start in range(a, b - horizon):
            seg = panel[:, start : start + horizon + 1]
            rel = portfolio.weights @ (seg / seg[:, :1])
            windows += 1
            if rel.min() <= threshold:
                failures += 1
    if windows == 0:
        raise DataError("insufficient data: no window of the requested horizon")
    return FailureEstimate(
        probability=failures / windows,
        ci_half_width=confidence_interval(failures, windows),
        runs=windows,
        horizon=horizon,
        method="historical",
        gamma_prime=gamma_prime,
        theta=theta,
        seed=0,
        failures=failures,
    )


# ----------------------------------------------------------------------
# batch sweeps (shared random numbers across the whole table)


@dataclass(frozen=True)
class SweepResult:
    gamma_primes: tuple[float, ...]
    portfolios: tuple[str, ...]
    estimates: dict[tuple[float, str], FailureEstimate]

    def to_csv(self) -> str:
        lines = ["gamma_prime," + ",".join(self.portfolios)]
        for g in self.gamma_primes:
            cells = [f"{self.estimates[(g, name)].probability:.6f}" for name in self.portfolios]
            lines.append(f"{g}," + ",".join(cells))
        return "\n".join(lines) + "\n"

    def as_json(self) -> dict:
        return {
            "gamma_primes": list(self.gamma_primes),
            "portfolios": list(self.portfolios),
            "cells": {
                f"{g}|{name}": est.as_json() for (g, name), est in sorted(self.estimates.items())
            },
        }


def table_sweep(
    portfolios: Sequence[Portfolio],
    gamma_primes: Sequence[float],
    model: ReturnModel,
    theta: float,
    horizon: int,
    runs: int,
    distribution: str = STUDENT_T,
    seed: int = 0,
    common_random_numbers: bool = True,
    zero_drift: bool = False,
    jobs: int = 1,
) -> SweepResult:
    """Cartesian product of portfolios and gamma' levels under one model.

    With common random numbers each portfolio's run-wise minimum is computed
    once and thresholded per gamma', which makes the failure probability
    exactly non-increasing down the gamma' rows.
    """
    thresholds = {g: _validate_levels(g, theta) for g in gamma_primes}
    estimates: dict[tuple[float, str], FailureEstimate] = {}
    for p_i, portfolio in enumerate(portfolios):
        base_seed = seed if common_random_numbers else seed + 7919 * (p_i + 1)
        mins = _min_relative_values(
            portfolio, model, horizon, runs, distribution, base_seed, zero_drift, jobs
        )
        for g in gamma_primes:
            failures = int(np.count_nonzero(mins <= thresholds[g]))
            estimates[(g, portfolio.name)] = FailureEstimate(
                probability=failures / runs,
                ci_half_width=confidence_interval(failures, runs),
                runs=runs,
                horizon=horizon,
                method=distribution,
                gamma_prime=g,
                theta=theta,
                seed=base_seed,
                failures=failures,
            )
    return SweepResult(
        gamma_primes=tuple(gamma_primes),
        portfolios=tuple(p.name for p in portfolios),
        estimates=estimates,
    )
