"""Command-line interface.

Every command reads and writes JSON; the simulator commands exit with 2 when
a run breaks an accounting invariant.
"""

import dataclasses
import glob
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import typer
from typing_extensions import Annotated

from . import exc, wire
from .config import load_config
from .decomposition import CapabilityRegistry, VerifierRegistry, finalize, propose
from .ledger import escrow_account, read_jsonl, verify_ledger
from .market import Bid, Candidate, objective_vector, pareto_filter, select
from .metrics import EventType, compute_metrics, render
from .reputation import ReputationEntry, TrustModel, score_entries
from .simulator import Scenario, read_log, replay, run
from .tasks import TaskCharacteristics, task_from_dict
from .tokens import (
    Caveat,
    CapabilityToken,
    Operation,
    RequestContext,
    attenuate,
    mint_token,
    verify_token,
)

_logger = logging.getLogger("delegsim")

app = typer.Typer(help="Intelligent delegation simulator.", no_args_is_help=True)
sim_app = typer.Typer(help="Run, replay and inspect simulations.", no_args_is_help=True)
dct_app = typer.Typer(help="Delegation capability tokens.", no_args_is_help=True)
market_app = typer.Typer(help="Offline bid selection.", no_args_is_help=True)
contract_app = typer.Typer(help="Contract history from an event log.", no_args_is_help=True)
ledger_app = typer.Typer(help="Offline ledger audit.", no_args_is_help=True)
reputation_app = typer.Typer(help="Offline reputation scoring.", no_args_is_help=True)
coordinate_app = typer.Typer(help="Coordination traces.", no_args_is_help=True)

app.add_typer(sim_app, name="sim")
app.add_typer(dct_app, name="dct")
app.add_typer(market_app, name="market")
app.add_typer(contract_app, name="contract")
app.add_typer(ledger_app, name="ledger")
app.add_typer(reputation_app, name="reputation")
app.add_typer(coordinate_app, name="coordinate")

_TRACE_TYPES = frozenset(
    t.value
    for t in (
        EventType.TRIGGER,
        EventType.RESPONSE,
        EventType.STABILITY,
        EventType.REDELEGATE,
        EventType.CHECKPOINT,
        EventType.OVERSEER,
        EventType.BREAKER,
        EventType.REVOKE,
    )
)


@app.callback()
def main(
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Log at DEBUG level.")] = False,
) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _fail(message: str, code: int = 1) -> None:
    typer.echo(message, err=True)
    raise typer.Exit(code)


def _read_json(path: str) -> Any:
    try:
        with open(path, "r") as fh:
            return json.load(fh)
    except (OSError, ValueError) as e:
        _fail(f"cannot read {path}: {e}")


def _write_json(path: str, data: Any) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, sort_keys=True, indent=2)


def _load_log(path: str) -> List[Dict[str, Any]]:
    try:
        return replay(read_log(path)).event_log
    except OSError as e:
        _fail(f"cannot read {path}: {e}")
    except exc.ReplayMismatch as e:
        _fail(f"replay mismatch: {e}")
    return []


def _run(scenario_path: str, seed: Optional[int]) -> Any:
    try:
        scenario = Scenario.from_json(scenario_path)
        if seed is not None:
            scenario = dataclasses.replace(scenario, seed=seed)
        return run(scenario)
    except exc.InvariantViolation as e:
        _fail(f"invariant violation: {e}", code=2)
    except exc.ConfigError as e:
        _fail(f"bad scenario: {e}")


# sim


@sim_app.command("run")
def sim_run(
    scenario: Annotated[str, typer.Option("--scenario", help="Scenario JSON file.")],
    out: Annotated[str, typer.Option("--out", help="Output directory.")],
    seed: Annotated[Optional[int], typer.Option("--seed", help="Override the scenario seed.")] = None,
) -> None:
    """Simulate a scenario and write its event log, ledger, reputation and metrics."""

    result = _run(scenario, seed)
    paths = result.write(out)
    typer.echo(json.dumps({"digest": result.digest, "files": paths}, sort_keys=True))


@sim_app.command("replay")
def sim_replay(
    log: Annotated[str, typer.Option("--log", help="events.jsonl of a finished run.")],
) -> None:
    """Recompute digest and metrics of a log and check them against its footer."""

    try:
        result = replay(read_log(log))
    except exc.ReplayMismatch as e:
        _fail(f"replay mismatch: {e}")
    typer.echo(json.dumps({"digest": result.digest, "records": len(result.body)}, sort_keys=True))


@sim_app.command("metrics")
def sim_metrics(
    log: Annotated[str, typer.Option("--log", help="events.jsonl of a finished run.")],
    fmt: Annotated[str, typer.Option("--format", help="json or csv.")] = "json",
) -> None:
    """Print the metrics of a log."""

    records = _load_log(log)
    body = [r for r in records if r["type"] != EventType.RUN_END.value]
    try:
        typer.echo(render(compute_metrics(body), fmt))
    except ValueError as e:
        _fail(str(e))


@sim_app.command("archive")
def sim_archive(
    log: Annotated[str, typer.Option("--log", help="events.jsonl of a finished run.")],
    host: Annotated[str, typer.Option("--host")] = "localhost",
    port: Annotated[str, typer.Option("--port")] = "5432",
    user: Annotated[str, typer.Option("--user")] = "postgres",
    password: Annotated[str, typer.Option("--password", envvar="PGPASSWORD")] = "",
    dbname: Annotated[str, typer.Option("--dbname")] = "postgres",
    pre_ping: Annotated[bool, typer.Option("--pre-ping")] = False,
) -> None:
    """Copy a log and its ledger into PostgreSQL."""

    from .archive import Archive, Connector

    records = _load_log(log)
    try:
        connector = Connector(
            pre_ping=pre_ping, host=host, port=port, user=user, password=password, dbname=dbname
        )
        digest = Archive(connector).store(records)
    except exc.ArchiveError as e:
        _fail(f"archive failed: {e}")
    except Exception as e:
        _fail(f"cannot connect: {e}")
    typer.echo(digest)


# dct


def _caveats(texts: List[str]) -> List[Caveat]:
    try:
        return [Caveat.parse(t) for t in texts]
    except exc.InvalidCaveat as e:
        _fail(str(e))
    return []


def _secret(text: str) -> bytes:
    return wire.mac(b"root", text.encode("utf-8"))


@dct_app.command("mint")
def dct_mint(
    secret: Annotated[str, typer.Option("--secret", help="Root key passphrase.")],
    token_id: Annotated[str, typer.Option("--id", help="Token identifier.")],
    out: Annotated[str, typer.Option("--token", help="Where to write the token.")],
    caveat: Annotated[List[str], typer.Option("--caveat", help="<kind>=<value>, repeatable.")] = [],
) -> None:
    token = mint_token(_secret(secret), _caveats(caveat), token_id)
    _write_json(out, token.to_dict())


@dct_app.command("attenuate")
def dct_attenuate(
    token_path: Annotated[str, typer.Option("--token", help="Token file, rewritten in place.")],
    caveat: Annotated[List[str], typer.Option("--caveat", help="<kind>=<value>, repeatable.")],
    out: Annotated[Optional[str], typer.Option("--out", help="Write elsewhere.")] = None,
) -> None:
    """Append caveats; no secret is needed."""

    token = CapabilityToken.from_dict(_read_json(token_path))
    for c in _caveats(caveat):
        token = attenuate(token, c)
    _write_json(out or token_path, token.to_dict())


@dct_app.command("verify")
def dct_verify(
    secret: Annotated[str, typer.Option("--secret", help="Root key passphrase.")],
    token_path: Annotated[str, typer.Option("--token", help="Token file.")],
    request: Annotated[str, typer.Option("--request", help="JSON request context.")],
) -> None:
    """Print Allow or Deny(reason); exit 1 on deny."""

    try:
        data = json.loads(request)
        context = RequestContext(
            resource=data["resource"],
            operation=Operation(data["operation"]),
            now=int(data.get("now", 0)),
            depth=int(data.get("depth", 0)),
            spend=int(data.get("spend", 0)),
        )
    except (ValueError, KeyError) as e:
        _fail(f"bad request: {e}")
    token = CapabilityToken.from_dict(_read_json(token_path))
    decision = verify_token(token, _secret(secret), context)
    if decision.allowed:
        typer.echo("Allow")
        return
    typer.echo(f"Deny({decision.reason.value})")
    raise typer.Exit(1)


# decompose


@app.command("decompose")
def decompose(
    task: Annotated[str, typer.Option("--task", help="Task tree JSON file.")],
    registry: Annotated[str, typer.Option("--registry", help="Capability registry JSON file.")],
    out: Annotated[str, typer.Option("--out", help="Output directory.")],
    k: Annotated[int, typer.Option("-k", help="Number of proposals.")] = 3,
    budget: Annotated[int, typer.Option("--budget", help="Budget split across leaves.")] = 0,
) -> None:
    """Write proposals.json and one spec per leaf of the best proposal."""

    registry_data = _read_json(registry)
    config = load_config()
    try:
        root = task_from_dict(_read_json(task))
        proposals = propose(
            root,
            CapabilityRegistry.from_dict(registry_data),
            k,
            VerifierRegistry.from_dict(registry_data),
            config.decomposition,
        )
    except (exc.InvalidTask, exc.UndecomposableTask, ValueError) as e:
        _fail(str(e))

    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "proposals.json"), [p.to_dict() for p in proposals])
    best = proposals[0]
    total = sum(p.node.characteristics.cost_est for p in best.leaves) or 1
    for plan in best.leaves:
        share = budget * plan.node.characteristics.cost_est // total
        spec = finalize(plan, share, config.monitoring)
        _write_json(os.path.join(out, f"spec-{spec.task_id}.json"), spec.to_dict())
    typer.echo(best.proposal_id)


# market


def _weights(text: str) -> Dict[str, float]:
    weights = {}
    for part in filter(None, text.split(",")):
        name, _, value = part.partition("=")
        try:
            weights[name.strip()] = float(value)
        except ValueError:
            _fail(f"bad weight {part!r}")
    return weights


@market_app.command("run")
def market_run(
    rfq: Annotated[str, typer.Option("--rfq", help="RFQ JSON file.")],
    bids: Annotated[str, typer.Option("--bids", help="Directory of bid JSON files.")],
    weights: Annotated[Optional[str], typer.Option("--weights", help="cost=0.5,latency=0.3,...")] = None,
) -> None:
    """Pareto-filter the bids and print the selected winner."""

    data = _read_json(rfq)
    reputations = data.get("reputations", {})
    try:
        characteristics = TaskCharacteristics.from_dict(data.get("characteristics", {}))
    except exc.InvalidTask as e:
        _fail(str(e))
    chosen = _weights(weights) if weights else data.get("preference_weights") or load_config().market.weights

    candidates = []
    for path in sorted(glob.glob(os.path.join(bids, "*.json"))):
        bid = Bid.from_dict(_read_json(path))
        reputation = float(reputations.get(bid.agent_id, 0.5))
        candidates.append(Candidate(bid, objective_vector(bid, reputation), reputation))

    front = pareto_filter(candidates)
    trust = TrustModel(data.get("delegator", ""), **data.get("trust", {}))
    winner = select(front, chosen, trust, characteristics)
    typer.echo(
        json.dumps(
            {
                "pareto": [c.agent_id for c in front],
                "winner": winner.agent_id if winner else None,
            },
            sort_keys=True,
        )
    )


# contract / ledger / reputation


@contract_app.command("inspect")
def contract_inspect(
    contract_id: Annotated[str, typer.Argument(help="Contract id, e.g. c-000001.")],
    log: Annotated[str, typer.Option("--log", help="events.jsonl of a finished run.")],
) -> None:
    """Print every record about a contract, its escrow movements included."""

    escrow = escrow_account(contract_id)
    found = False
    for record in _load_log(log):
        if record.get("contract_id") == contract_id or escrow in (
            record.get("from_account"), record.get("to_account")
        ):
            found = True
            typer.echo(wire.canonical_json(record))
    if not found:
        _fail(f"no contract {contract_id}")


@ledger_app.command("verify")
def ledger_verify(
    path: Annotated[str, typer.Argument(help="ledger.jsonl file.")],
) -> None:
    """Re-check double entry and conservation; exit 1 on any problem."""

    try:
        with open(path, "r") as fh:
            audit = verify_ledger(read_jsonl(fh))
    except (OSError, exc.ReplayMismatch) as e:
        _fail(str(e))
    typer.echo(
        json.dumps(
            {"ok": audit.ok, "entries": audit.entries, "problems": audit.problems, "stranded": audit.stranded},
            sort_keys=True,
        )
    )
    if not audit.ok:
        raise typer.Exit(1)


@reputation_app.command("score")
def reputation_score(
    ledger: Annotated[str, typer.Option("--ledger", help="reputation.jsonl file.")],
    agent: Annotated[str, typer.Option("--agent", help="Agent DID.")],
    at: Annotated[Optional[int], typer.Option("--at", help="Tick, defaults to the end.")] = None,
) -> None:
    """Recompute a score from the stored entries."""

    try:
        with open(ledger, "r") as fh:
            entries = [ReputationEntry.from_dict(json.loads(line)) for line in fh if line.strip()]
    except (OSError, ValueError, KeyError) as e:
        _fail(f"cannot read {ledger}: {e}")
    score = score_entries(entries, agent, at, load_config().reputation)
    typer.echo(json.dumps(score.to_dict(), sort_keys=True))


@coordinate_app.command("replay")
def coordinate_replay(
    scenario: Annotated[str, typer.Option("--scenario", help="Scenario JSON file.")],
    trace: Annotated[str, typer.Option("--trace", help="Where to write the trace.")],
) -> None:
    """Run a scenario and dump its trigger/response trace as JSON lines."""

    result = _run(scenario, None)
    records = [r for r in result.body if r["type"] in _TRACE_TYPES]
    with open(trace, "w") as fh:
        fh.writelines(wire.canonical_json(r) + "\n" for r in records)
    typer.echo(f"{len(records)} records")
