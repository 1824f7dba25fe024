#!/usr/bin/env python3
"""Walk through both black-swan attacks on a small two-chain deployment and
print the exact backing ratios against the gamma*(1-zeta') guarantee."""

from fractions import Fraction

from crocodai import stablecoin as core
from crocodai.ledger import SCALE, System
from crocodai.relay import register_relays
from crocodai.scenarios import (
    ceiling_headroom,
    compromised_chain_scenario,
    token_crash_scenario,
)
from crocodai.stablecoin import SystemParams


def build() -> System:
    params = SystemParams(
        gamma=Fraction("1.5"),
        theta=Fraction("1.1"),
        debt_ceilings={0: Fraction("0.3"), 1: Fraction("0.8")},
    )
    system = System(params)
    eth_chain = system.create_chain({"name": "eth"})
    sol_chain = system.create_chain({"name": "sol"})
    eth = system.register_token("ETH", eth_chain)
    sol = system.register_token("SOL", sol_chain)
    system.set_price(eth, Fraction(2000))
    system.set_price(sol, Fraction(40))
    register_relays(system)

    # CDPs comfortably above the liquidation ratio, ceilings respected
    for owner, (token, chain, collateral, debt) in enumerate(
        [
            (eth, eth_chain, Fraction("0.25"), 250),
            (sol, sol_chain, Fraction("40"), 800),
        ],
        start=1,
    ):
        cdp = core.open_cdp(system, chain, owner, token)
        core.deposit_collateral(system, cdp, int(collateral * SCALE))
        core.withdraw_stablecoins(system, cdp, debt * SCALE)
    return system


def main() -> None:
    system = build()
    backing = core.full_backing(system)
    print(f"initial backing ratio: {float(backing.ratio):.4f} (theta {float(system.params.theta)})")

    crash = token_crash_scenario(system, [system.token_by_symbol("ETH").id])
    print(
        "\ntoken crash (ETH -> 0): "
        f"ratio {float(crash.ratio):.4f} > bound {float(crash.bound):.4f}? {crash.passed}"
    )

    system = build()
    token = system.token_by_symbol("ETH").id
    h_prime = int(ceiling_headroom(system, token) * SCALE) // 2
    fork = compromised_chain_scenario(system, system.chain_by_name("eth").id, h_prime)
    print(
        f"\n51% attack on the ETH chain, unbacked mint {h_prime / SCALE:.2f}: "
        f"ratio {float(fork.ratio):.4f} > bound {float(fork.bound):.4f}? {fork.passed}"
    )
    print(f"monitor-detected unbacked mint: {fork.details['unbacked_minted'] / SCALE:.2f}")


if __name__ == "__main__":
    main()
