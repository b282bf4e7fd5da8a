"""External backend adapters for generated SQL.

The bundled adapter targets SQLite: it mirrors an in-memory database into a
SQLite connection at construction time and runs generated query text there.
Booleans travel as 0/1 integers; stitching coerces them back by column type.
"""

from __future__ import annotations

import sqlite3
import threading
from pathlib import Path

from .engine import Database, Row
from .ir import ScalarType, TableSchema
from .sqlgen import SqlText

_SQLITE_TYPES = {
    ScalarType.INT: "INTEGER",
    ScalarType.FLOAT: "REAL",
    ScalarType.BOOL: "INTEGER",
    ScalarType.STRING: "TEXT",
}


class SqliteBackend:
    """Runs generated SQL against a SQLite copy of a loaded database."""

    def __init__(self, db: Database, path: str = ":memory:") -> None:
        self._conn = sqlite3.connect(path, check_same_thread=False)
        self._lock = threading.Lock()
        self._load(db)

    def _load(self, db: Database) -> None:
        cur = self._conn.cursor()
        for name, schema in db.schemas.items():
            cols = ", ".join(
                f'"{col}" {_SQLITE_TYPES[t.kind]}' for col, t in schema.columns
            )
            cur.execute(f'DROP TABLE IF EXISTS "{name}"')
            cur.execute(f'CREATE TABLE "{name}" ({cols})')
            col_names = [c for c, _ in schema.columns]
            placeholders = ", ".join("?" for _ in col_names)
            rows = [
                tuple(int(r[c]) if isinstance(r[c], bool) else r[c] for c in col_names)
                for r in db.tables[name]
            ]
            cur.executemany(f'INSERT INTO "{name}" VALUES ({placeholders})', rows)
        self._conn.commit()

    def execute(self, sql: SqlText) -> list[Row]:
        with self._lock:
            cur = self._conn.execute(sql.text)
            names = [d[0] for d in cur.description]
            return [dict(zip(names, row)) for row in cur.fetchall()]

    def close(self) -> None:
        self._conn.close()


def backend_from_connection_string(conn: str, db: Database) -> SqliteBackend:
    """Build a backend from a ``sqlite:`` connection string.

    Accepted forms: ``sqlite://:memory:`` and ``sqlite:///path/to/file.db``.
    """
    if conn.startswith("sqlite://"):
        rest = conn[len("sqlite://") :]
        if rest in ("", ":memory:"):
            return SqliteBackend(db)
        return SqliteBackend(db, str(Path(rest)))
    raise ValueError(f"unsupported backend connection string: {conn!r}")
