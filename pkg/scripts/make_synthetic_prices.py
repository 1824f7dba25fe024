#!/usr/bin/env python3
"""Generate a synthetic 5-minute price CSV so the full pipeline can be
exercised without the original dataset.

Writes correlated heavy-tailed paths for a handful of symbols, with one
multi-hour gap to exercise the period-boundary handling.
"""

import argparse
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

SYMBOLS = ["BTC", "ETH", "WBTC", "ADA", "DOT", "TRX", "AVAX", "SOL"]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="synthetic_prices.csv")
    parser.add_argument("--slots", type=int, default=5000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--gap-at", type=int, default=2500)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    m = len(SYMBOLS)
    base_corr = 0.65 * np.ones((m, m)) + 0.35 * np.eye(m)
    vols = rng.uniform(0.002, 0.008, m)
    cov = base_corr * np.outer(vols, vols)
    chol = np.linalg.cholesky(cov)

    nu = 4.0
    shocks = rng.standard_t(nu, (m, args.slots)) / np.sqrt(nu / (nu - 2.0))
    returns = chol @ shocks
    prices = 100.0 * np.exp(np.cumsum(returns, axis=1))

    t = datetime(2022, 8, 26, 2, 0, tzinfo=timezone.utc)
    lines = ["timestamp," + ",".join(SYMBOLS)]
    for slot in range(args.slots):
        stamp = t.strftime("%Y-%m-%dT%H:%M:%SZ")
        lines.append(stamp + "," + ",".join(f"{prices[i, slot]:.6f}" for i in range(m)))
        t += timedelta(minutes=5)
        if slot == args.gap_at:
            t += timedelta(hours=6)

    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {args.slots} slots x {m} symbols to {args.out}")


if __name__ == "__main__":
    main()
