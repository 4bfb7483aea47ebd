"""Banking benchmark workload over checking and savings tables.

Four single-row transaction shapes, rendered as UPDATE statements with
arithmetic on the current balance so every one is a read-modify-write:

  transact_savings   savings  += amount
  deposit_checking   checking += amount
  send_payment       checking -= amount at src, checking += amount at dst
  write_check        checking -= amount

Account selection is either uniform or rank-based Zipf (weight 1/(v+r-1)^s,
which for v=1 is the classic 1/r^s).  All randomness flows through one seeded
generator, so a (config, seed) pair reproduces the exact transaction stream.
"""

from __future__ import annotations

import bisect
import random
from dataclasses import dataclass

from .errors import ConfigError

CHECKING_TABLE = "checking"
SAVINGS_TABLE = "savings"

CHECKING_DDL = (
    f"CREATE TABLE {CHECKING_TABLE} (custid INT, bal DECIMAL(12, 2), "
    "PRIMARY KEY (custid));"
)
SAVINGS_DDL = (
    f"CREATE TABLE {SAVINGS_TABLE} (custid INT, bal DECIMAL(12, 2), "
    "PRIMARY KEY (custid));"
)

TXN_TYPES = ("transact_savings", "deposit_checking", "send_payment", "write_check")

MIN_BALANCE = 10_000
MAX_BALANCE = 50_000


@dataclass
class SmallbankConfig:
    num_users: int = 10_000
    distribution: str = "zipf"  # zipf | uniform
    zipf_s: float = 1.1
    zipf_v: float = 1.0
    fire_rate: int = 4096  # transactions per client batch
    clients: int = 3

    def __post_init__(self):
        if self.num_users < 1:
            raise ConfigError("num_users must be positive")
        if self.distribution not in ("zipf", "uniform"):
            raise ConfigError(f"unknown distribution {self.distribution!r}")
        if self.zipf_s <= 0 or self.zipf_v <= 0:
            raise ConfigError("zipf parameters must be positive")


class AccountSampler:
    """Draws account ids 1..n from the configured distribution."""

    def __init__(self, cfg: SmallbankConfig):
        self.num_users = cfg.num_users
        self.uniform = cfg.distribution == "uniform"
        if not self.uniform:
            total = 0.0
            self._cdf = []
            for rank in range(1, cfg.num_users + 1):
                total += (cfg.zipf_v + rank - 1) ** -cfg.zipf_s
                self._cdf.append(total)
            self._total = total

    def sample(self, rng: random.Random) -> int:
        if self.uniform:
            return rng.randint(1, self.num_users)
        return bisect.bisect_left(self._cdf, rng.random() * self._total) + 1

    def pmf(self, rank: int) -> float:
        """Probability of drawing the given account, for statistical checks."""
        if self.uniform:
            return 1.0 / self.num_users
        low = self._cdf[rank - 2] if rank > 1 else 0.0
        return (self._cdf[rank - 1] - low) / self._total


def bootstrap_transactions(num_users: int, rng: random.Random, batch: int = 256):
    """DDL plus batched inserts with seeded balances, as plain transactions.

    Balances are whole units drawn from [10000, 50000].
    """
    txns = [CHECKING_DDL, SAVINGS_DDL]
    for table in (CHECKING_TABLE, SAVINGS_TABLE):
        for start in range(1, num_users + 1, batch):
            rows = ", ".join(
                f"({cust}, {rng.randint(MIN_BALANCE, MAX_BALANCE)})"
                for cust in range(start, min(start + batch, num_users + 1))
            )
            txns.append(f"INSERT INTO {table} (custid, bal) VALUES {rows};")
    return txns


def _amount(rng: random.Random) -> str:
    # up to three fractional digits; the balance column holds two, so the
    # engine's rounding quirk decides the final cent
    raw = rng.randint(1, 99_999)
    return f"{raw // 1000}.{raw % 1000:03d}"


def render_transact_savings(cust: int, amount: str) -> str:
    return f"UPDATE {SAVINGS_TABLE} SET bal = bal + {amount} WHERE custid = {cust};"


def render_deposit_checking(cust: int, amount: str) -> str:
    return f"UPDATE {CHECKING_TABLE} SET bal = bal + {amount} WHERE custid = {cust};"


def render_send_payment(src: int, dst: int, amount: str) -> str:
    return (
        f"UPDATE {CHECKING_TABLE} SET bal = bal - {amount} WHERE custid = {src}; "
        f"UPDATE {CHECKING_TABLE} SET bal = bal + {amount} WHERE custid = {dst};"
    )


def render_write_check(cust: int, amount: str) -> str:
    return f"UPDATE {CHECKING_TABLE} SET bal = bal - {amount} WHERE custid = {cust};"


def generate_workload(cfg: SmallbankConfig, seed: int, count: int | None = None):
    """Yield a reproducible stream of SQL transactions.

    Transaction type is uniform over the four shapes; accounts come from the
    configured distribution.  Default count is fire_rate * clients.
    """
    if count is None:
        count = cfg.fire_rate * cfg.clients
    rng = random.Random(seed)
    sampler = AccountSampler(cfg)
    for _ in range(count):
        kind = TXN_TYPES[rng.randrange(4)]
        cust = sampler.sample(rng)
        amount = _amount(rng)
        if kind == "transact_savings":
            yield render_transact_savings(cust, amount)
        elif kind == "deposit_checking":
            yield render_deposit_checking(cust, amount)
        elif kind == "send_payment":
            dst = sampler.sample(rng)
            while dst == cust and cfg.num_users > 1:
                dst = sampler.sample(rng)
            yield render_send_payment(cust, dst, amount)
        else:
            yield render_write_check(cust, amount)


def build_schedule(txns, clients=("client0",), start_tick: int = 0, per_tick: int = 64):
    """Spread transactions over ticks, round-robin across client names."""
    schedule = []
    clients = list(clients)
    for i, sql in enumerate(txns):
        schedule.append((start_tick + i // per_tick, clients[i % len(clients)], sql))
    return schedule
