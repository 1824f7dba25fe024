#!/usr/bin/env python3
"""Print the abstract cost comparison of the three relay signature designs
for growing quorum sizes."""

from crocodai.relay import N_OF_1, N_OF_N, ONE_OF_1, cost_of_commit


def main() -> None:
    header = f"{'design':8} {'n':>3} {'f':>2} {'tx':>4} {'verify':>7} {'bytes':>7} {'on-chain':>9} {'off-chain s':>12}"
    print(header)
    print("-" * len(header))
    for strategy in (N_OF_N, N_OF_1, ONE_OF_1):
        for n in (4, 10, 16):
            f = (n - 1) // 3
            rec = cost_of_commit(strategy, n, f)
            print(
                f"{rec.strategy:8} {n:>3} {f:>2} {rec.transactions:>4} {rec.verifications:>7} "
                f"{rec.message_bytes:>7} {rec.on_chain_units:>9.2f} {rec.offchain_seconds:>12.3f}"
            )
        print()


if __name__ == "__main__":
    main()
