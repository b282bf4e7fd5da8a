"""Relational schema of the demo pharmacology database.

A deliberately small closure of the tables the four data pages need: ligands
and their synonyms, protein structure entries, targets ("objects") grouped
into families, ligand-target interactions, diseases with their links to
targets and ligands, and literature references. Every id column that points
at another table must resolve; the loader enforces that.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..engine import Database, load_database
from ..errors import SchemaViolation
from ..ir import BOOL, FLOAT, INT, STRING, TableSchema

PHARM_SCHEMAS: dict[str, TableSchema] = {
    s.name: s
    for s in (
        TableSchema(
            "ligand",
            (
                ("ligand_id", INT),
                ("name", STRING),
                ("type", STRING),
                ("approved", BOOL),
                ("radioactive", BOOL),
                ("labelled", BOOL),
                ("in_gtip", BOOL),
                ("in_gtmp", BOOL),
                ("endogenous", BOOL),
                ("clinical_use_text", STRING),
                ("comments_text", STRING),
            ),
            ("ligand_id",),
        ),
        TableSchema(
            "ligand2synonym",
            (("ligand_id", INT), ("synonym", STRING), ("display", BOOL)),
            ("ligand_id", "synonym"),
        ),
        TableSchema(
            "pdb_structure",
            (("pdb_id", STRING), ("ligand_id", INT)),
            ("pdb_id",),
        ),
        TableSchema(
            "disease",
            (
                ("disease_id", INT),
                ("name", STRING),
                ("description_text", STRING),
                ("in_gtip", BOOL),
            ),
            ("disease_id",),
        ),
        TableSchema(
            "family",
            (
                ("family_id", INT),
                ("name", STRING),
                ("parent_id", INT),
                ("target_type", STRING),
            ),
            ("family_id",),
        ),
        TableSchema(
            "object",
            (
                ("object_id", INT),
                ("name", STRING),
                ("family_id", INT),
                ("nomenclature", STRING),
                ("overview_text", STRING),
            ),
            ("object_id",),
        ),
        TableSchema(
            "interaction",
            (
                ("interaction_id", INT),
                ("object_id", INT),
                ("ligand_id", INT),
                ("action", STRING),
                ("affinity", FLOAT),
                ("comments_text", STRING),
            ),
            ("interaction_id",),
        ),
        TableSchema(
            "reference",
            (
                ("reference_id", INT),
                ("pubmed_id", INT),
                ("title", STRING),
                ("authors", STRING),
                ("year", INT),
            ),
            ("reference_id",),
        ),
        TableSchema(
            "disease2object",
            (("disease_id", INT), ("object_id", INT)),
            ("disease_id", "object_id"),
        ),
        TableSchema(
            "disease2ligand",
            (("disease_id", INT), ("ligand_id", INT)),
            ("disease_id", "ligand_id"),
        ),
    )
}

# (table, column) pairs that must resolve against (table, key column).
_FOREIGN_KEYS = (
    ("ligand2synonym", "ligand_id", "ligand", "ligand_id"),
    ("pdb_structure", "ligand_id", "ligand", "ligand_id"),
    ("object", "family_id", "family", "family_id"),
    ("interaction", "object_id", "object", "object_id"),
    ("interaction", "ligand_id", "ligand", "ligand_id"),
    ("disease2object", "disease_id", "disease", "disease_id"),
    ("disease2object", "object_id", "object", "object_id"),
    ("disease2ligand", "disease_id", "disease", "disease_id"),
    ("disease2ligand", "ligand_id", "ligand", "ligand_id"),
)

# Text columns that may carry embedded Reference/Ligand tags.
TAGGED_TEXT_COLUMNS = (
    ("ligand", "clinical_use_text"),
    ("ligand", "comments_text"),
    ("object", "overview_text"),
    ("disease", "description_text"),
    ("interaction", "comments_text"),
)


def load_pharm_database(data_dir: str | Path) -> Database:
    """Load the demo database and check referential integrity.

    If the directory carries a generator manifest, row counts are
    cross-checked against it.
    """
    data_dir = Path(data_dir)
    db = load_database(data_dir / "schema.json", data_dir)
    _check_foreign_keys(db)
    manifest_path = data_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        for tbl, want in manifest.get("row_counts", {}).items():
            got = len(db.tables[tbl])
            if got != want:
                raise SchemaViolation(
                    f"table '{tbl}' has {got} rows but the manifest records {want}"
                )
    return db


def _check_foreign_keys(db: Database) -> None:
    for tbl, col, target, target_col in _FOREIGN_KEYS:
        known = {row[target_col] for row in db.tables[target]}
        for row in db.tables[tbl]:
            if row[col] not in known:
                raise SchemaViolation(
                    f"{tbl}.{col} value {row[col]!r} resolves to no {target} row"
                )
    # Family trees use parent_id 0 as the root marker.
    families = {row["family_id"] for row in db.tables["family"]}
    for row in db.tables["family"]:
        parent = row["parent_id"]
        if parent != 0 and parent not in families:
            raise SchemaViolation(f"family.parent_id {parent!r} resolves to no family row")
