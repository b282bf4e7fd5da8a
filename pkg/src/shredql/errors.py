"""Exception types shared across the query pipeline and the demo application."""

from __future__ import annotations


class ShredqlError(Exception):
    """Base class for all library errors."""


# --- static checking ---------------------------------------------------------


class TypeError_(ShredqlError):
    """Base for typechecking failures; carries the offending subexpression path."""

    def __init__(self, message: str, path: str = "") -> None:
        self.path = path
        super().__init__(f"{message} (at {path})" if path else message)


class UnboundVariable(TypeError_):
    def __init__(self, name: str, path: str = "") -> None:
        self.name = name
        super().__init__(f"unbound variable '{name}'", path)


class UnknownTable(TypeError_):
    def __init__(self, name: str, path: str = "") -> None:
        self.name = name
        super().__init__(f"unknown table '{name}'", path)


class UnknownField(TypeError_):
    def __init__(self, label: str, available: tuple[str, ...], path: str = "") -> None:
        self.label = label
        self.available = available
        super().__init__(
            f"unknown field '{label}' (record has {', '.join(available) or 'no fields'})", path
        )


class TypeMismatch(TypeError_):
    pass


# --- normalization / shredding ----------------------------------------------


class NotTranslatable(ShredqlError):
    """A construct survived rewriting that cannot reach the flat normal form."""

    def __init__(self, message: str, path: str = "") -> None:
        self.path = path
        super().__init__(f"{message} (at {path})" if path else message)


class NormalizationBudgetExceeded(ShredqlError):
    """The rewrite-step budget was exhausted; signals a rewriting defect."""

    def __init__(self, steps: int, budget: int) -> None:
        self.steps = steps
        self.budget = budget
        super().__init__(f"normalization took {steps} steps, budget {budget}")


class MissingKey(ShredqlError):
    def __init__(self, table: str) -> None:
        self.table = table
        super().__init__(f"table '{table}' declares no key columns; cannot build stitch indexes")


class OrphanRow(ShredqlError):
    """A child row's parent index matched no parent row; an executor defect."""

    def __init__(self, query_index: int, parent_index: tuple) -> None:
        self.query_index = query_index
        self.parent_index = parent_index
        super().__init__(f"query {query_index} row with parent index {parent_index!r} has no parent")


# --- execution ----------------------------------------------------------------


class RuntimeQueryError(ShredqlError):
    pass


# --- data loading -------------------------------------------------------------


class ParseError(ShredqlError):
    def __init__(self, source: str, message: str, line: int | None = None) -> None:
        self.source = source
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


class SchemaViolation(ShredqlError):
    pass


class DuplicateKey(ShredqlError):
    def __init__(self, table: str, key: tuple) -> None:
        self.table = table
        self.key = key
        super().__init__(f"duplicate key {key!r} in table '{table}'")


# --- tag text -----------------------------------------------------------------


class MalformedMarkup(ShredqlError):
    def __init__(self, position: int, reason: str) -> None:
        self.position = position
        self.reason = reason
        super().__init__(f"malformed markup at offset {position}: {reason}")


class UnknownReference(ShredqlError):
    def __init__(self, reference_id: int) -> None:
        self.reference_id = reference_id
        super().__init__(f"reference id {reference_id} cannot be resolved")


class UnknownLigand(ShredqlError):
    def __init__(self, ligand_id: int) -> None:
        self.ligand_id = ligand_id
        super().__init__(f"ligand id {ligand_id} has no known name")


# --- application --------------------------------------------------------------


class UnknownObject(ShredqlError):
    def __init__(self, object_id: int) -> None:
        self.object_id = object_id
        super().__init__(f"no object with id {object_id}")


class UnknownDisease(ShredqlError):
    def __init__(self, disease_id: int) -> None:
        self.disease_id = disease_id
        super().__init__(f"no disease with id {disease_id}")


# --- harness ------------------------------------------------------------------


class MalformedPage(ShredqlError):
    """Rendered HTML does not carry the extraction contract attributes."""


class RequestFailed(ShredqlError):
    def __init__(self, path: str, status: str) -> None:
        self.path = path
        self.status = status
        super().__init__(f"request {path} failed: {status}")
