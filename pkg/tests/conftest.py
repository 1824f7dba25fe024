import numpy as np
import pytest

from crocodai.ledger import SCALE, System
from crocodai.stablecoin import SystemParams


def units(x) -> int:
    """Whole stablecoin units -> integer minor units."""
    return round(x * SCALE)


@pytest.fixture
def system():
    """One chain ("main") with token ETH at price 1 and a funded account 1."""
    sys_ = System(SystemParams())
    cid = sys_.create_chain({"name": "main", "accounts": {"1": units(1000)}})
    eth = sys_.register_token("ETH", cid)
    sys_.set_price(eth, 1)
    sys_.main = cid
    sys_.eth = eth
    return sys_


@pytest.fixture
def two_chains():
    """Two chains with relays registered (n=4, f=1) and a funded sender."""
    from crocodai.relay import register_relays

    sys_ = System(SystemParams())
    a = sys_.create_chain({"name": "alpha", "accounts": {"1": units(100)}})
    b = sys_.create_chain({"name": "beta"})
    register_relays(sys_)
    sys_.alpha = a
    sys_.beta = b
    return sys_


def write_price_csv(path, symbols, slots=400, seed=0, gap_at=None, start="2022-08-26T02:00:00Z"):
    """Synthetic 5-minute price CSV; optional multi-hour gap after `gap_at` rows."""
    from datetime import datetime, timedelta, timezone

    rng = np.random.default_rng(seed)
    t0 = datetime.fromisoformat(start.replace("Z", "+00:00")).astimezone(timezone.utc)
    lines = ["timestamp," + ",".join(symbols)]
    prices = {s: 100.0 * (i + 1) for i, s in enumerate(symbols)}
    t = t0
    for row in range(slots):
        cells = [t.strftime("%Y-%m-%dT%H:%M:%SZ")]
        for s in symbols:
            prices[s] *= float(np.exp(rng.normal(0.0, 0.01)))
            cells.append(f"{prices[s]:.6f}")
        lines.append(",".join(cells))
        t += timedelta(minutes=5)
        if gap_at is not None and row == gap_at:
            t += timedelta(hours=4)
    path.write_text("\n".join(lines) + "\n")
    return path
