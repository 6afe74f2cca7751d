"""Event log vocabulary and the metrics recomputed from a log.

Metrics are never kept as live counters: :func:`compute_metrics` derives them
from the log alone, so :func:`~delegsim.simulator.replay` can check them.
"""

__all__ = [
    "EventType",
    "events_frame",
    "compute_metrics",
    "render",
]

import enum
import io
import json
from typing import Any, Dict, List, Mapping, Optional, Sequence

import pandas as pd

_BREACH_KINDS = frozenset(
    {"PerfDegradation", "BudgetOverrun", "VerificationFailure", "Unresponsive", "SecurityFlag"}
)
_COST_REASONS = ("release", "fee")


class EventType(str, enum.Enum):
    AGENT = "AGENT"
    TASK_OPEN = "TASK_OPEN"
    TASK_DIRECT = "TASK_DIRECT"
    TASK_WAIT = "TASK_WAIT"
    TASK_DONE = "TASK_DONE"
    TASK_FAILED = "TASK_FAILED"
    RFQ = "RFQ"
    BID = "BID"
    BID_REJECTED = "BID_REJECTED"
    REQUOTE = "REQUOTE"
    AWARD = "AWARD"
    DELEGATE = "DELEGATE"
    CONTRACT = "CONTRACT"
    LEDGER = "LEDGER"
    PROGRESS = "PROGRESS"
    TOKEN_CHECK = "TOKEN_CHECK"
    VERDICT = "VERDICT"
    CHALLENGE = "CHALLENGE"
    TRIGGER = "TRIGGER"
    RESPONSE = "RESPONSE"
    STABILITY = "STABILITY"
    REDELEGATE = "REDELEGATE"
    CHECKPOINT = "CHECKPOINT"
    OVERSEER = "OVERSEER"
    REPUTATION = "REPUTATION"
    BREAKER = "BREAKER"
    REVOKE = "REVOKE"
    RETRO = "RETRO"
    FEE_UNPAID = "FEE_UNPAID"
    RUN_END = "RUN_END"


def events_frame(events: Sequence[Mapping[str, Any]], kind: Optional[EventType] = None) -> pd.DataFrame:
    """Log records as a DataFrame, optionally only those of one type."""

    frame = pd.DataFrame(list(events))
    if frame.empty:
        return pd.DataFrame(columns=["seq", "tick", "type"])
    if kind is not None:
        frame = frame[frame["type"] == kind.value]
    return frame.reset_index(drop=True)


def _count(frame: pd.DataFrame, kind: EventType) -> int:
    return int((frame["type"] == kind.value).sum()) if not frame.empty else 0


def _net_earnings(ledger: pd.DataFrame) -> Dict[str, int]:
    if ledger.empty:
        return {}
    moves = ledger[ledger["reason"] != "open"]
    credit = moves.groupby("to_account")["amount"].sum()
    debit = moves.groupby("from_account")["amount"].sum()
    net = credit.sub(debit, fill_value=0)
    return {str(k): int(v) for k, v in net.items()}


def compute_metrics(events: Sequence[Mapping[str, Any]]) -> Dict[str, Any]:
    """Metrics of a run, from its event log body."""

    frame = events_frame(events)

    opened = events_frame(events, EventType.TASK_OPEN)
    done = events_frame(events, EventType.TASK_DONE)
    n_open = opened["task_id"].nunique() if not opened.empty else 0
    n_done = done["task_id"].nunique() if not done.empty else 0

    makespan = 0.0
    if n_done:
        first_open = opened.groupby("task_id")["tick"].min()
        first_done = done.groupby("task_id")["tick"].min()
        spans = (first_done - first_open.reindex(first_done.index)).dropna()
        makespan = float(spans.mean()) if len(spans) else 0.0

    ledger = events_frame(events, EventType.LEDGER)
    total_cost = 0
    if not ledger.empty:
        total_cost = int(ledger[ledger["reason"].isin(_COST_REASONS)]["amount"].sum())

    redelegations = events_frame(events, EventType.REDELEGATE)
    oscillation = 0
    if not redelegations.empty:
        oscillation = int(redelegations.groupby("task_id").size().max())

    triggers = events_frame(events, EventType.TRIGGER)
    breaches = _count(frame, EventType.BREAKER)
    if not triggers.empty:
        breaches += int(triggers["kind"].isin(_BREACH_KINDS).sum())

    net = _net_earnings(ledger)
    agents = events_frame(events, EventType.AGENT)
    adversary_accounts, honest_accounts = set(), set()
    for record in agents.to_dict("records"):
        if isinstance(record.get("adversary"), str):
            adversary_accounts.add(record["account"])
        elif record.get("role") != "delegator":
            honest_accounts.add(record["account"])
    honest_accounts -= adversary_accounts

    trajectories: Dict[str, List[List[Any]]] = {}
    for record in events_frame(events, EventType.REPUTATION).to_dict("records"):
        trajectories.setdefault(record["agent"], []).append(
            [int(record["tick"]), float(record["composite"])]
        )

    contracts = events_frame(events, EventType.CONTRACT)
    settled = 0
    if not contracts.empty:
        settled = int((contracts["state"] == "settled").sum())

    return {
        "completion_rate": round(n_done / n_open, 12) if n_open else 0.0,
        "total_cost": total_cost,
        "mean_makespan": round(makespan, 12),
        "redelegation_count": len(redelegations),
        "oscillation_max_per_task": oscillation,
        "breach_detections": breaches,
        "adversary_earnings": sum(net.get(a, 0) for a in sorted(adversary_accounts)),
        "honest_earnings": sum(net.get(a, 0) for a in sorted(honest_accounts)),
        "settled_contracts": settled,
        "tasks_opened": int(n_open),
        "tasks_completed": int(n_done),
        "reputation_trajectories": {k: trajectories[k] for k in sorted(trajectories)},
    }


def render(metrics: Mapping[str, Any], fmt: str = "json") -> str:
    """Metrics as JSON, or as ``metric,value`` CSV of the scalar metrics."""

    if fmt == "json":
        return json.dumps(metrics, sort_keys=True, indent=2)
    if fmt == "csv":
        scalars = [(k, v) for k, v in sorted(metrics.items()) if not isinstance(v, Mapping)]
        buffer = io.StringIO()
        pd.DataFrame(scalars, columns=["metric", "value"]).to_csv(buffer, index=False)
        return buffer.getvalue()
    raise ValueError(f"unknown format {fmt!r}, expected json or csv")
