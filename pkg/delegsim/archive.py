"""PostgreSQL archive of event logs and ledgers.

The archive is optional: nothing in the simulator needs a database. A run is
keyed by its log digest, so archiving the same log twice replaces the rows.
"""

__all__ = ["Connector", "Archive"]

from contextlib import contextmanager
from io import StringIO
import logging
import random
import time
from typing import Any, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd
import psycopg2
from psycopg2 import pool, sql

from . import exc, queries, wire
from .ledger import LedgerEntry
from .metrics import EventType

QueryParams = Union[Sequence[Any], Mapping[str, Any]]

_logger = logging.getLogger("delegsim")


class Connector:
    """Pooled connection to the archive database.

    Besides the basic connection parameters any other connection parameter
    supported by `psycopg2.connect <https://www.psycopg.org/docs/module.html>`_
    can be passed as a keyword.

    Args:
        pool_size:
            The maximum amount of connections the pool will support.
        pre_ping:
            If True, every connection taken from the pool is tested with
            ``SELECT 1`` and the pool is rebuilt if it is dead.
        max_reconnects:
            The maximum amount of reconnects, defaults to 3.
    """

    _pool: pool.SimpleConnectionPool

    def __init__(
        self, pool_size: int = 4, pre_ping: bool = False, max_reconnects: int = 3, **kwargs: str
    ) -> None:
        self._kwargs = kwargs
        if "db_name" in self._kwargs:
            self._kwargs["dbname"] = self._kwargs.pop("db_name")

        self.pool_size = pool_size
        self.pre_ping = pre_ping
        self.max_reconnects = max_reconnects

        self._pool = self.make_pool()

    def __del__(self) -> None:
        if getattr(self, "_pool", None) is not None:
            self.close_all()

    def __repr__(self) -> str:
        keys = [k for k in ("host", "user", "dbname") if k in self._kwargs]
        return "(" + " ".join(f"{k}={self._kwargs[k]}" for k in keys) + ")"

    @contextmanager
    def open_connection(self) -> Iterator[psycopg2.extensions.connection]:
        """Take a free connection from the pool, reconnecting if pre-ping fails."""

        conn = self._pool.getconn()

        if self.pre_ping:
            for n in range(self.max_reconnects):
                if self.ping(conn):
                    break
                if n > 0:
                    time.sleep(self._back_off_time(n - 1))
                _logger.warning("archive connection is dead, reconnecting (%d)", n + 1)
                self._pool = self.restart_pool()
                conn = self._pool.getconn()
        try:
            yield conn
        finally:
            self._pool.putconn(conn)

    def restart_pool(self) -> pool.SimpleConnectionPool:
        self.close_all()
        return self.make_pool()

    def close_all(self) -> None:
        if not self._pool.closed:
            self._pool.closeall()

    def make_pool(self) -> pool.SimpleConnectionPool:
        return pool.SimpleConnectionPool(minconn=1, maxconn=self.pool_size, **self._kwargs)

    @staticmethod
    def ping(conn: psycopg2.extensions.connection) -> bool:
        """Return True if ``SELECT 1`` succeeds on the connection."""

        try:
            with conn.cursor() as cur:
                cur.execute("SELECT 1")
                fetched = cur.fetchall()
        except psycopg2.Error:
            return False
        return bool(fetched) and fetched[0][0] == 1

    @staticmethod
    def _back_off_time(n: int) -> float:
        return (2 ** n) + (random.randint(0, 1000) / 1000)


class Archive:
    """Writes event logs and their ledgers to two tables.

    Args:
        connector:
            Connection handler.
        events_table:
            Name of the event table, optionally schema-qualified.
        ledger_table:
            Name of the ledger table.
    """

    def __init__(
        self, connector: Connector, events_table: str = "delegsim_events",
        ledger_table: str = "delegsim_ledger",
    ) -> None:
        self.connector = connector
        self.events_table = events_table
        self.ledger_table = ledger_table

    def __repr__(self) -> str:
        return repr(self.connector)

    def _execute(
        self, cmd: Union[str, sql.Composed], values: Optional[QueryParams] = None
    ) -> Tuple[List[Any], List[str]]:
        fetched: List[Any] = []
        columns: List[str] = []

        with self.connector.open_connection() as conn:
            try:
                with conn.cursor() as cur:
                    cur.execute(cmd, values)
                    if cur.description is not None:
                        fetched = cur.fetchall()
                        columns = [desc[0] for desc in cur.description]
                conn.commit()
            except Exception as e:
                try:
                    conn.rollback()
                except Exception as ex:
                    exc.raise_with_traceback(
                        exc.ArchiveError(f"Execution failed on sql: {cmd}\n{ex}\n unable to rollback")
                    )
                exc.raise_with_traceback(exc.ArchiveError(f"Execution failed on sql: {cmd}\n{e}\n"))

        return fetched, columns

    @staticmethod
    def _get_schema(table_name: str) -> Tuple[str, str]:
        names = table_name.split(".")
        if len(names) == 2:
            return names[0], names[1]
        return "public", table_name

    def is_table_exist(self, table_name: str) -> bool:
        schema, name = self._get_schema(table_name)
        fetched, _ = self._execute(queries.is_table_exist(name, schema))
        return len(fetched) > 0

    def create_tables(self) -> None:
        self._execute(queries.create_events(self.events_table))
        self._execute(queries.create_ledger(self.ledger_table))

    def store(self, event_log: Sequence[Mapping[str, Any]]) -> str:
        """Archive a complete log (footer included); return its run digest.

        Raises:
            ArchiveError: if the log has no footer or the copy fails.
        """

        if not event_log or event_log[-1].get("type") != EventType.RUN_END.value:
            raise exc.ArchiveError("log has no RUN_END footer")
        digest = str(event_log[-1]["digest"])

        events = pd.DataFrame(
            {
                "run_digest": digest,
                "seq": [int(r["seq"]) for r in event_log],
                "tick": [int(r["tick"]) for r in event_log],
                "type": [r["type"] for r in event_log],
                "record": [wire.canonical_json(r) for r in event_log],
            }
        )
        entries = [
            LedgerEntry.from_dict(r) for r in event_log if r["type"] == EventType.LEDGER.value
        ]
        ledger = pd.DataFrame(
            [e.to_dict() for e in entries],
            columns=["tick", "from_account", "to_account", "amount", "reason", "memo"],
        )
        ledger.insert(0, "n", range(len(ledger)))
        ledger.insert(0, "run_digest", digest)

        if not self.is_table_exist(self.events_table):
            self.create_tables()
        self.copy_from(self.events_table, events, digest)
        self.copy_from(self.ledger_table, ledger, digest)
        _logger.info("archived run %s: %d events, %d transfers", digest, len(events), len(ledger))
        return digest

    def copy_from(self, table_name: str, data: pd.DataFrame, run_digest: str) -> None:
        """Replace the rows of ``run_digest`` in a table with ``data`` via COPY.

        Raises:
            ArchiveError: if execution fails.
        """

        with self.connector.open_connection() as conn:
            try:
                with conn.cursor() as cur:
                    cur.execute(queries.delete_run(table_name), (run_digest,))
                    s_buf = StringIO()
                    data.to_csv(path_or_buf=s_buf, index=False, header=False)
                    s_buf.seek(0)
                    columns = ", ".join(data.columns)
                    cur.copy_expert(f"COPY {table_name} ({columns}) FROM STDIN WITH (FORMAT csv)", s_buf)
                conn.commit()
            except Exception as e:
                try:
                    conn.rollback()
                except Exception as ex:
                    exc.raise_with_traceback(exc.ArchiveError(f"{ex}\n unable to rollback"))
                exc.raise_with_traceback(exc.ArchiveError(f"{e}\n"))

    def summary(self, run_digest: str) -> pd.DataFrame:
        """Record counts per event type of an archived run."""

        records, columns = self._execute(queries.run_summary(self.events_table), (run_digest,))
        return pd.DataFrame.from_records(records, columns=columns)
