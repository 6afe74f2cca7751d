"""Double-entry accounts backing bonds, escrow, fees and rewards.

Every movement is a :class:`LedgerEntry` from one account to another, so the
sum over all accounts, ``genesis`` included, is zero at every moment. Opening
balances are drawn from ``genesis``.
"""

__all__ = [
    "LedgerReason",
    "LedgerEntry",
    "Accounts",
    "LedgerAudit",
    "verify_ledger",
    "read_jsonl",
    "escrow_account",
    "GENESIS",
    "TREASURY",
    "BOND_POOL",
    "REWARD_POOL",
]

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, TextIO

import pandas as pd

from . import exc, wire

GENESIS = "genesis"
TREASURY = "treasury"
BOND_POOL = "bond_pool"
REWARD_POOL = "reward_pool"
ESCROW_PREFIX = "escrow:"


def escrow_account(contract_id: str) -> str:
    return ESCROW_PREFIX + contract_id


class LedgerReason(str, enum.Enum):
    OPEN = "open"
    FUND = "fund"
    STAKE = "stake"
    RELEASE = "release"
    SLASH = "slash"
    REFUND = "refund"
    PENALTY = "penalty"
    BOND = "bond"
    REWARD = "reward"
    FEE = "fee"


@dataclass(frozen=True)
class LedgerEntry:
    tick: int
    from_account: str
    to_account: str
    amount: int
    reason: LedgerReason
    memo: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tick": self.tick,
            "from_account": self.from_account,
            "to_account": self.to_account,
            "amount": self.amount,
            "reason": self.reason.value,
            "memo": self.memo,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LedgerEntry":
        return cls(
            tick=int(data["tick"]),
            from_account=data["from_account"],
            to_account=data["to_account"],
            amount=int(data["amount"]),
            reason=LedgerReason(data["reason"]),
            memo=data.get("memo", ""),
        )


class Accounts:
    """Balances plus the append-only list of entries that produced them."""

    def __init__(self) -> None:
        self._balances: Dict[str, int] = {}
        self._entries: List[LedgerEntry] = []
        self._listeners: List[Callable[[LedgerEntry], None]] = []

    def __contains__(self, account: str) -> bool:
        return account in self._balances

    def on_entry(self, callback: Callable[[LedgerEntry], None]) -> None:
        self._listeners.append(callback)

    def open(self, account: str, amount: int = 0, tick: int = 0) -> None:
        self._balances.setdefault(account, 0)
        if amount > 0:
            self.transfer(GENESIS, account, amount, LedgerReason.OPEN, tick)

    def balance(self, account: str) -> int:
        return self._balances.get(account, 0)

    def can_pay(self, account: str, amount: int) -> bool:
        return account == GENESIS or self.balance(account) >= amount

    def transfer(
        self,
        from_account: str,
        to_account: str,
        amount: int,
        reason: LedgerReason,
        tick: int,
        memo: str = "",
    ) -> LedgerEntry:
        """Move ``amount`` micro-units.

        Raises:
            InsufficientFunds: if ``from_account`` cannot cover the amount.
        """

        if amount <= 0:
            raise ValueError(f"ledger amounts must be positive, got {amount}")
        if not self.can_pay(from_account, amount):
            raise exc.InsufficientFunds(
                f"{from_account} holds {self.balance(from_account)}, needs {amount}"
            )

        entry = LedgerEntry(tick, from_account, to_account, amount, reason, memo)
        self._balances[from_account] = self.balance(from_account) - amount
        self._balances[to_account] = self.balance(to_account) + amount
        self._entries.append(entry)

        for callback in self._listeners:
            callback(entry)
        return entry

    def drain(
        self,
        from_account: str,
        to_account: str,
        reason: LedgerReason,
        tick: int,
        memo: str = "",
    ) -> Optional[LedgerEntry]:
        """Move the whole balance of ``from_account``, if any."""

        amount = self.balance(from_account)
        if amount <= 0:
            return None
        return self.transfer(from_account, to_account, amount, reason, tick, memo)

    def total(self) -> int:
        return sum(self._balances.values())

    def balances(self) -> Dict[str, int]:
        return dict(self._balances)

    @property
    def entries(self) -> List[LedgerEntry]:
        return list(self._entries)

    def to_frame(self) -> pd.DataFrame:
        columns = ["tick", "from_account", "to_account", "amount", "reason", "memo"]
        return pd.DataFrame([e.to_dict() for e in self._entries], columns=columns)

    def write_jsonl(self, fh: TextIO) -> None:
        for entry in self._entries:
            fh.write(wire.canonical_json(entry.to_dict()) + "\n")


def read_jsonl(lines: Iterable[str]) -> List[LedgerEntry]:
    entries = []
    for n, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            entries.append(LedgerEntry.from_dict(json.loads(line)))
        except (KeyError, ValueError) as e:
            raise exc.ReplayMismatch(f"ledger line {n}: {e}") from None
    return entries


@dataclass
class LedgerAudit:
    ok: bool
    entries: int
    balances: Dict[str, int]
    problems: List[str] = field(default_factory=list)
    stranded: Dict[str, int] = field(default_factory=dict)


def verify_ledger(entries: Iterable[LedgerEntry]) -> LedgerAudit:
    """Replay entries offline and re-check the double-entry rules.

    Checks that every amount is positive, that no account other than
    ``genesis`` ever goes negative, and that the grand total stays zero.
    Escrow accounts and the bond pool left with a balance are reported as
    stranded.
    """

    balances: Dict[str, int] = {}
    problems: List[str] = []
    count = 0

    for n, entry in enumerate(entries, start=1):
        count += 1
        if entry.amount <= 0:
            problems.append(f"entry {n}: non-positive amount {entry.amount}")
            continue
        balances[entry.from_account] = balances.get(entry.from_account, 0) - entry.amount
        balances[entry.to_account] = balances.get(entry.to_account, 0) + entry.amount
        if entry.from_account != GENESIS and balances[entry.from_account] < 0:
            problems.append(
                f"entry {n}: {entry.from_account} overdrawn to {balances[entry.from_account]}"
            )

    if sum(balances.values()) != 0:
        problems.append(f"conservation broken: total {sum(balances.values())}")

    stranded = {
        account: amount
        for account, amount in sorted(balances.items())
        if amount != 0 and (account.startswith(ESCROW_PREFIX) or account == BOND_POOL)
    }

    return LedgerAudit(
        ok=not problems, entries=count, balances=balances, problems=problems, stranded=stranded
    )
