"""Relational schemas and instances: loading, dumping and key repair.

Identifiers are lowercased once at load time; the original spelling is kept
in ``label`` for display only. Every type here is frozen.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import (
    ArityMismatch,
    ConflictingHints,
    DanglingReference,
    DuplicateKey,
    DuplicateName,
    MissingTableFile,
    ParseError,
    TypeParseError,
)

DATATYPES = ("integer", "real", "text", "boolean")
NUMERIC = ("integer", "real")

_TYPE_ALIASES = {
    "integer": "integer",
    "int": "integer",
    "bigint": "integer",
    "smallint": "integer",
    "real": "real",
    "float": "real",
    "double": "real",
    "number": "real",
    "numeric": "real",
    "decimal": "real",
    "text": "text",
    "string": "text",
    "varchar": "text",
    "char": "text",
    "time": "text",
    "date": "text",
    "others": "text",
    "boolean": "boolean",
    "bool": "boolean",
}

_TRUE = {"true", "t", "1", "yes"}
_FALSE = {"false", "f", "0", "no"}


def normalize_name(name: str) -> str:
    return name.strip().lower()


def datatype_from_string(raw: str) -> str:
    key = raw.strip().lower()
    if "(" in key:  # varchar(20) and friends
        key = key[: key.index("(")].strip()
    try:
        return _TYPE_ALIASES[key]
    except KeyError:
        raise ParseError(f"unknown column type {raw!r}") from None


@dataclass(frozen=True)
class Column:
    name: str
    datatype: str
    nullable: bool = True
    label: str = ""
    surrogate: bool = False

    def __post_init__(self):
        if self.datatype not in DATATYPES:
            raise ParseError(f"column {self.name!r}: datatype must be one of {DATATYPES}")
        if not self.label:
            object.__setattr__(self, "label", self.name)


@dataclass(frozen=True)
class ForeignKey:
    column: str
    ref_table: str
    ref_column: str


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[Column, ...]
    primary_key: tuple[str, ...] = ()
    foreign_keys: tuple[ForeignKey, ...] = ()
    label: str = ""

    def __post_init__(self):
        if not self.label:
            object.__setattr__(self, "label", self.name)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def has_column(self, name: str) -> bool:
        return normalize_name(name) in self.column_names

    def column(self, name: str) -> Column:
        key = normalize_name(name)
        for col in self.columns:
            if col.name == key:
                return col
        raise KeyError(f"{self.name}.{name}")

    def index(self, name: str) -> int:
        return self.column_names.index(normalize_name(name))

    def foreign_key(self, column: str) -> ForeignKey | None:
        key = normalize_name(column)
        for fk in self.foreign_keys:
            if fk.column == key:
                return fk
        return None


@dataclass(frozen=True)
class RelationalSchema:
    name: str
    tables: tuple[Table, ...] = ()
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    @property
    def table_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tables)

    def has_table(self, name: str) -> bool:
        return normalize_name(name) in self.table_names

    def table(self, name: str) -> Table:
        key = normalize_name(name)
        for t in self.tables:
            if t.name == key:
                return t
        raise KeyError(name)

    def foreign_keys(self) -> list[tuple[str, ForeignKey]]:
        """All FKs as ``(owning table, fk)`` pairs in schema order."""
        return [(t.name, fk) for t in self.tables for fk in t.foreign_keys]

    def to_dict(self) -> dict[str, Any]:
        return {
            "db_id": self.name,
            "tables": [
                {
                    "name": t.label,
                    "columns": [
                        {"name": c.label, "type": c.datatype, "nullable": c.nullable}
                        | ({"surrogate": True} if c.surrogate else {})
                        for c in t.columns
                    ],
                    "primary_key": [t.column(k).label for k in t.primary_key],
                    "foreign_keys": [
                        {"column": fk.column, "ref_table": fk.ref_table, "ref_column": fk.ref_column}
                        for fk in t.foreign_keys
                    ],
                }
                for t in self.tables
            ],
        }


def check_schema(schema: RelationalSchema) -> list[str]:
    """Return human-readable diagnostics for soft invariant failures."""
    out = []
    referenced = {fk.ref_table for _, fk in schema.foreign_keys()}
    for t in schema.tables:
        if not t.primary_key:
            tag = " (referenced by a foreign key)" if t.name in referenced else ""
            out.append(f"table {t.name} has no primary key{tag}")
        for fk in t.foreign_keys:
            ref = schema.table(fk.ref_table)
            a, b = t.column(fk.column).datatype, ref.column(fk.ref_column).datatype
            if a != b:
                out.append(f"foreign key {t.name}.{fk.column} ({a}) -> {ref.name}.{fk.ref_column} ({b}) has mismatched datatypes")
    return out


def _validate_structure(schema: RelationalSchema) -> None:
    seen: set[str] = set()
    for t in schema.tables:
        if t.name in seen:
            raise DuplicateName(f"duplicate table {t.name!r}")
        seen.add(t.name)
        cols: set[str] = set()
        for c in t.columns:
            if c.name in cols:
                raise DuplicateName(f"duplicate column {t.name}.{c.name}")
            cols.add(c.name)
        for k in t.primary_key:
            if k not in cols:
                raise DanglingReference(f"primary key column {t.name}.{k} does not exist")
    for tname, fk in schema.foreign_keys():
        if not schema.table(tname).has_column(fk.column):
            raise DanglingReference(f"foreign key column {tname}.{fk.column} does not exist")
        if not schema.has_table(fk.ref_table):
            raise DanglingReference(f"{tname}.{fk.column} references unknown table {fk.ref_table!r}")
        if not schema.table(fk.ref_table).has_column(fk.ref_column):
            raise DanglingReference(f"{tname}.{fk.column} references unknown column {fk.ref_table}.{fk.ref_column}")


def schema_from_dict(doc: Mapping[str, Any]) -> RelationalSchema:
    try:
        tables = []
        for td in doc.get("tables", []):
            cols = tuple(
                Column(
                    name=normalize_name(cd["name"]),
                    datatype=datatype_from_string(cd.get("type", "text")),
                    nullable=bool(cd.get("nullable", True)),
                    label=cd["name"],
                    surrogate=bool(cd.get("surrogate", False)),
                )
                for cd in td.get("columns", [])
            )
            fks = tuple(
                ForeignKey(normalize_name(f["column"]), normalize_name(f["ref_table"]), normalize_name(f["ref_column"]))
                for f in td.get("foreign_keys", [])
            )
            tables.append(
                Table(
                    name=normalize_name(td["name"]),
                    columns=cols,
                    primary_key=tuple(normalize_name(k) for k in td.get("primary_key", [])),
                    foreign_keys=fks,
                    label=td["name"],
                )
            )
        schema = RelationalSchema(name=str(doc.get("db_id", "")), tables=tuple(tables))
    except (KeyError, TypeError, AttributeError) as exc:
        raise ParseError(f"malformed schema document: {exc!r}") from exc
    _validate_structure(schema)
    return replace(schema, diagnostics=tuple(check_schema(schema)))


def load_schema(path: str | Path) -> RelationalSchema:
    """Read a schema document. No repair happens here."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError(f"schema file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    return schema_from_dict(doc)


# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RelationalInstance:
    schema: RelationalSchema
    tables: Mapping[str, tuple[tuple[Any, ...], ...]]

    def rows(self, table: str) -> tuple[tuple[Any, ...], ...]:
        return self.tables.get(normalize_name(table), ())

    def row_counts(self) -> dict[str, int]:
        return {t.name: len(self.rows(t.name)) for t in self.schema.tables}


def parse_cell(raw: str, datatype: str) -> Any:
    """Parse one CSV cell; the empty string is null."""
    if raw == "":
        return None
    if datatype == "text":
        return raw
    if datatype == "integer":
        return int(raw.strip())
    if datatype == "real":
        value = float(raw.strip())
        if math.isnan(value) or math.isinf(value):
            raise ValueError("non-finite real")
        return value
    low = raw.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def check_instance(schema: RelationalSchema, tables: Mapping[str, Sequence[Sequence[Any]]]) -> None:
    """Raise if rows break arity, typing, nullability or key uniqueness."""
    for t in schema.tables:
        pk_idx = [t.index(k) for k in t.primary_key]
        seen: set[tuple] = set()
        for n, row in enumerate(tables.get(t.name, ())):
            if len(row) != len(t.columns):
                raise ArityMismatch(f"{t.name} row {n}: expected {len(t.columns)} values, got {len(row)}")
            for col, value in zip(t.columns, row):
                if value is None:
                    if not col.nullable or col.name in t.primary_key:
                        raise TypeParseError(f"{t.name}.{col.name} row {n}: null in non-nullable column")
                    continue
                if not _conforms(value, col.datatype):
                    raise TypeParseError(f"{t.name}.{col.name} row {n}: {value!r} is not {col.datatype}")
            if pk_idx:
                key = tuple(row[i] for i in pk_idx)
                if key in seen:
                    raise DuplicateKey(f"{t.name}: duplicate primary key {key!r}")
                seen.add(key)


def _conforms(value: Any, datatype: str) -> bool:
    if datatype == "boolean":
        return isinstance(value, bool)
    if isinstance(value, bool):
        return False
    if datatype == "integer":
        return isinstance(value, int)
    if datatype == "real":
        return isinstance(value, (int, float))
    return isinstance(value, str)


def make_instance(schema: RelationalSchema, tables: Mapping[str, Iterable[Sequence[Any]]]) -> RelationalInstance:
    """Build an instance from Python rows (reals may be given as ints)."""
    frozen = {}
    for t in schema.tables:
        rows = []
        for row in tables.get(t.name, ()):
            row = tuple(
                float(v) if c.datatype == "real" and isinstance(v, int) and not isinstance(v, bool) else v
                for c, v in zip(t.columns, row)
            ) if len(row) == len(t.columns) else tuple(row)
            rows.append(row)
        frozen[t.name] = tuple(rows)
    check_instance(schema, frozen)
    return RelationalInstance(schema, frozen)


def parse_table_csv(table: Table, text: str, source: str = "") -> tuple[tuple[Any, ...], ...]:
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        header = []
    where = source or table.name
    header_names = [normalize_name(h) for h in header]
    expected = [c.name for c in table.columns if not c.surrogate]
    surrogates = [c.name for c in table.columns if c.surrogate]
    given = [h for h in header_names if h not in surrogates]
    if sorted(given) != sorted(expected):
        raise ArityMismatch(f"{where}: header {header} does not match columns {list(table.column_names)}")
    positions = {h: i for i, h in enumerate(header_names)}
    rows = []
    for lineno, record in enumerate(reader, start=2):
        if not record:
            continue
        if len(record) != len(header):
            raise ArityMismatch(f"{where} line {lineno}: expected {len(header)} fields, got {len(record)}")
        cells = []
        for col in table.columns:
            if col.name not in positions:  # surrogate key absent from the file
                cells.append(len(rows) + 1)
                continue
            raw = record[positions[col.name]]
            try:
                cells.append(parse_cell(raw, col.datatype))
            except ValueError:
                raise TypeParseError(
                    f"{table.name}.{col.name} row {len(rows)} (line {lineno}): cannot parse {raw!r} as {col.datatype}"
                ) from None
        rows.append(tuple(cells))
    return tuple(rows)


def load_data(schema: RelationalSchema, directory: str | Path) -> RelationalInstance:
    """Load one ``<table>.csv`` per table from ``directory``."""
    directory = Path(directory)
    files = {}
    if directory.is_dir():
        files = {normalize_name(p.stem): p for p in directory.iterdir() if p.suffix.lower() == ".csv"}
    tables = {}
    for t in schema.tables:
        path = files.get(t.name)
        if path is None:
            raise MissingTableFile(f"no data file for table {t.label!r} in {directory}")
        with path.open(encoding="utf-8", newline="") as fh:
            text = fh.read()
        tables[t.name] = parse_table_csv(t, text, source=path.name)
    check_instance(schema, tables)
    return RelationalInstance(schema, tables)


def dump_table_csv(table: Table, rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO(newline="")
    # RFC 4180 line ends; with "\n" alone the writer would leave a bare "\r" unquoted
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow([c.label for c in table.columns])
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    return buf.getvalue()


def dump_data(instance: RelationalInstance, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t in instance.schema.tables:
        (directory / f"{t.label}.csv").write_text(dump_table_csv(t, instance.rows(t.name)), encoding="utf-8", newline="")


# ---------------------------------------------------------------------------
# Repair
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RepairHints:
    add_primary_keys: tuple[tuple[str, tuple[str, ...]], ...] = ()
    add_foreign_keys: tuple[tuple[str, ForeignKey], ...] = ()
    suppress_inferred: tuple[tuple[str, str], ...] = ()

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "RepairHints":
        try:
            pks = tuple(
                (normalize_name(h["table"]), tuple(normalize_name(c) for c in h["columns"]))
                for h in doc.get("add_primary_keys", [])
            )
            fks = tuple(
                (
                    normalize_name(h["table"]),
                    ForeignKey(normalize_name(h["column"]), normalize_name(h["ref_table"]), normalize_name(h["ref_column"])),
                )
                for h in doc.get("add_foreign_keys", [])
            )
            sup = tuple((normalize_name(h["table"]), normalize_name(h["column"])) for h in doc.get("suppress_inferred", []))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed repair hints: {exc!r}") from exc
        return cls(pks, fks, sup)


def load_hints(path: str | Path) -> RepairHints:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read hints {path}: {exc}") from exc
    return RepairHints.from_dict(doc)


@dataclass(frozen=True)
class RepairChange:
    kind: str  # add_primary_key | add_surrogate_key | add_foreign_key | infer_foreign_key | widen_datatype
    table: str
    detail: str

    def to_dict(self) -> dict[str, str]:
        return {"kind": self.kind, "table": self.table, "detail": self.detail}


@dataclass(frozen=True)
class RepairReport:
    changes: tuple[RepairChange, ...] = ()

    def __len__(self) -> int:
        return len(self.changes)

    def of_kind(self, *kinds: str) -> list[RepairChange]:
        return [c for c in self.changes if c.kind in kinds]

    def to_dict(self) -> dict[str, Any]:
        return {"changes": [c.to_dict() for c in self.changes]}


def _widen(a: str, b: str) -> str:
    if a == b:
        return a
    if a in NUMERIC and b in NUMERIC:
        return "real"
    return "text"


def repair_schema(schema: RelationalSchema, hints: RepairHints | None = None) -> tuple[RelationalSchema, RepairReport]:
    """Add missing keys and reconcile FK datatypes.

    Steps run in a fixed order so that repair is idempotent: primary keys
    (hinted, then id-like column, then surrogate), hinted FKs, name-based FK
    inference, and finally datatype widening to a fixpoint.
    """
    hints = hints or RepairHints()
    changes: list[RepairChange] = []

    hinted_pk: dict[str, tuple[str, ...]] = {}
    for tname, cols in hints.add_primary_keys:
        if tname in hinted_pk and hinted_pk[tname] != cols:
            raise ConflictingHints(f"hints declare different primary keys for {tname}: {hinted_pk[tname]} vs {cols}")
        hinted_pk[tname] = cols

    tables = {t.name: t for t in schema.tables}
    for tname, cols in hinted_pk.items():
        if tname not in tables:
            raise DanglingReference(f"hint names unknown table {tname!r}")
        for c in cols:
            if not tables[tname].has_column(c):
                raise DanglingReference(f"hint names unknown column {tname}.{c}")
        existing = tables[tname].primary_key
        if existing and existing != cols:
            raise ConflictingHints(f"hint primary key {cols} for {tname} contradicts declared key {existing}")

    # (a) primary keys
    for tname, t in list(tables.items()):
        if t.primary_key:
            continue
        if tname in hinted_pk:
            tables[tname] = replace(t, primary_key=hinted_pk[tname])
            changes.append(RepairChange("add_primary_key", tname, ",".join(hinted_pk[tname]) + " (hint)"))
            continue
        wanted = {"id", f"{tname}id", f"{tname}_id"}
        candidates = [c.name for c in t.columns if c.name in wanted]
        if len(candidates) == 1:
            tables[tname] = replace(t, primary_key=(candidates[0],))
            changes.append(RepairChange("add_primary_key", tname, f"{candidates[0]} (id-like column)"))
            continue
        sk = f"{tname}_rowid"
        while t.has_column(sk):
            sk += "_"
        col = Column(sk, "integer", nullable=False, surrogate=True)
        tables[tname] = replace(t, columns=t.columns + (col,), primary_key=(sk,))
        changes.append(RepairChange("add_surrogate_key", tname, sk))

    def add_fk(tname: str, fk: ForeignKey, kind: str) -> None:
        t = tables[tname]
        if fk in t.foreign_keys:
            return
        tables[tname] = replace(t, foreign_keys=t.foreign_keys + (fk,))
        changes.append(RepairChange(kind, tname, f"{fk.column} -> {fk.ref_table}.{fk.ref_column}"))

    # (b) hinted foreign keys
    for tname, fk in hints.add_foreign_keys:
        if tname not in tables or not tables[tname].has_column(fk.column):
            raise DanglingReference(f"hint foreign key on unknown column {tname}.{fk.column}")
        if fk.ref_table not in tables or not tables[fk.ref_table].has_column(fk.ref_column):
            raise DanglingReference(f"hint foreign key references unknown {fk.ref_table}.{fk.ref_column}")
        add_fk(tname, fk, "add_foreign_key")

    # (c) name-based inference
    suppressed = set(hints.suppress_inferred)
    for tname in list(tables):
        t = tables[tname]
        for col in t.columns:
            if (tname, col.name) in suppressed or t.foreign_key(col.name) is not None:
                continue
            if t.primary_key == (col.name,):
                continue
            matches = []
            for other in tables.values():
                if other.name == tname or len(other.primary_key) != 1:
                    continue
                pk = other.primary_key[0]
                if col.name in (other.name + pk, pk):
                    matches.append(ForeignKey(col.name, other.name, pk))
            if len(matches) == 1:
                add_fk(tname, matches[0], "infer_foreign_key")

    # (d) datatype widening, iterated because one widening can expose another
    changed = True
    while changed:
        changed = False
        for tname in list(tables):
            for fk in tables[tname].foreign_keys:
                src, dst = tables[tname], tables[fk.ref_table]
                a, b = src.column(fk.column).datatype, dst.column(fk.ref_column).datatype
                if a == b:
                    continue
                wide = _widen(a, b)
                for owner, cname, old in ((tname, fk.column, a), (fk.ref_table, fk.ref_column, b)):
                    if old != wide:
                        t = tables[owner]
                        cols = tuple(replace(c, datatype=wide) if c.name == cname else c for c in t.columns)
                        tables[owner] = replace(t, columns=cols)
                        changes.append(RepairChange("widen_datatype", owner, f"{cname}: {old} -> {wide}"))
                changed = True

    repaired = RelationalSchema(schema.name, tuple(tables[t.name] for t in schema.tables))
    repaired = replace(repaired, diagnostics=tuple(check_schema(repaired)))
    return repaired, RepairReport(tuple(changes))
