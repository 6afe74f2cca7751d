__all__ = ["create_events", "create_ledger", "is_table_exist", "delete_run", "run_summary"]


def create_events(table_name: str) -> str:
    """Return DDL of the event table, one row per log record."""

    return f"""
    CREATE TABLE IF NOT EXISTS {table_name} (
        run_digest TEXT NOT NULL,
        seq INTEGER NOT NULL,
        tick INTEGER NOT NULL,
        type TEXT NOT NULL,
        record JSONB NOT NULL,
        PRIMARY KEY (run_digest, seq)
    )
    """


def create_ledger(table_name: str) -> str:
    """Return DDL of the ledger table, one row per transfer."""

    return f"""
    CREATE TABLE IF NOT EXISTS {table_name} (
        run_digest TEXT NOT NULL,
        n INTEGER NOT NULL,
        tick INTEGER NOT NULL,
        from_account TEXT NOT NULL,
        to_account TEXT NOT NULL,
        amount BIGINT NOT NULL CHECK (amount > 0),
        reason TEXT NOT NULL,
        memo TEXT,
        PRIMARY KEY (run_digest, n)
    )
    """


def is_table_exist(table_name: str, schema: str) -> str:
    """Return table name if it exists in database."""

    return f"""
    SELECT
        table_name
    FROM
        information_schema.tables
    WHERE
        table_name = '{table_name}' AND
        table_schema='{schema}'
    LIMIT 1
    """


def delete_run(table_name: str) -> str:
    return f"DELETE FROM {table_name} WHERE run_digest = %s"


def run_summary(events_table: str) -> str:
    """Return record counts per type of one archived run."""

    return f"""
    SELECT
        type,
        COUNT(*) AS n,
        MIN(tick) AS first_tick,
        MAX(tick) AS last_tick
    FROM
        {events_table}
    WHERE
        run_digest = %s
    GROUP BY
        type
    ORDER BY
        type
    """
