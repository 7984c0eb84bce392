"""Direct Mapping of a relational schema/instance to an ontology and RDF graph."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal
from functools import cached_property
from typing import Any, Iterable, Iterator, Union
from urllib.parse import quote

from .errors import ParseError, UnrepairedSchema
from .schema import RelationalInstance, RelationalSchema, normalize_name

DEFAULT_PREFIX = "http://valuenet/ontop/"
RDF_TYPE = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type"
XSD = "http://www.w3.org/2001/XMLSchema#"
XSD_INTEGER = XSD + "integer"
XSD_DECIMAL = XSD + "decimal"
XSD_BOOLEAN = XSD + "boolean"
XSD_STRING = XSD + "string"

_LITERAL_DATATYPE = {"integer": XSD_INTEGER, "real": XSD_DECIMAL, "boolean": XSD_BOOLEAN, "text": None}


@dataclass(frozen=True, order=True)
class IRI:
    value: str

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, order=True)
class Literal:
    lexical: str
    datatype: str | None = None  # None is a plain (xsd:string) literal

    def to_python(self) -> Any:
        if self.datatype == XSD_INTEGER:
            return int(self.lexical)
        if self.datatype == XSD_DECIMAL or self.datatype == XSD + "double":
            return float(self.lexical)
        if self.datatype == XSD_BOOLEAN:
            return self.lexical in ("true", "1")
        return self.lexical


Term = Union[IRI, Literal]
Triple = tuple[IRI, IRI, Term]


def decimal_lexical(value: float) -> str:
    text = format(Decimal(repr(float(value))), "f")
    return text if "." in text else text + ".0"


def literal_for(value: Any, datatype: str) -> Literal:
    if datatype == "integer":
        return Literal(str(int(value)), XSD_INTEGER)
    if datatype == "real":
        return Literal(decimal_lexical(value), XSD_DECIMAL)
    if datatype == "boolean":
        return Literal("true" if value else "false", XSD_BOOLEAN)
    return Literal(str(value))


def encode_name(name: str) -> str:
    return quote(name, safe="-._~")


def encode_key_value(value: Any) -> str:
    if isinstance(value, bool):
        lexical = "true" if value else "false"
    elif isinstance(value, float):
        lexical = decimal_lexical(value)
    else:
        lexical = str(value)
    # '.' separates composite key parts, so it is encoded inside values
    return quote(lexical, safe="-_~").replace(".", "%2E")


# ---------------------------------------------------------------------------
# Ontology
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DataProperty:
    iri: str
    domain: str
    range: str  # one of the four column datatypes
    table: str
    column: str


@dataclass(frozen=True)
class ObjectProperty:
    iri: str
    domain: str
    range: str
    table: str
    column: str
    ref_table: str
    ref_column: str


@dataclass(frozen=True)
class Ontology:
    prefix: str
    classes: tuple[str, ...] = ()
    data_properties: tuple[DataProperty, ...] = ()
    object_properties: tuple[ObjectProperty, ...] = ()

    def local_name(self, iri: str) -> str:
        return iri[len(self.prefix):] if iri.startswith(self.prefix) else iri

    @cached_property
    def _data_index(self) -> dict[tuple[str, str], DataProperty]:
        return {(p.table, p.column): p for p in self.data_properties}

    @cached_property
    def _object_index(self) -> dict[tuple[str, str], ObjectProperty]:
        return {(p.table, p.column): p for p in self.object_properties}

    def class_iri(self, table: str) -> str | None:
        iri = self.prefix + encode_name(normalize_name(table))
        return iri if iri in self.classes else None

    def data_property(self, table: str, column: str) -> DataProperty | None:
        return self._data_index.get((normalize_name(table), normalize_name(column)))

    def object_property(self, table: str, column: str) -> ObjectProperty | None:
        return self._object_index.get((normalize_name(table), normalize_name(column)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "prefix": self.prefix,
            "classes": list(self.classes),
            "data_properties": [{"iri": p.iri, "domain": p.domain, "range": p.range} for p in self.data_properties],
            "object_properties": [{"iri": p.iri, "domain": p.domain, "range": p.range} for p in self.object_properties],
        }


def derive_ontology(schema: RelationalSchema, prefix: str = DEFAULT_PREFIX) -> Ontology:
    """One class per table, one data property per column, one object property per FK."""
    for tname, fk in schema.foreign_keys():
        if not schema.table(fk.ref_table).primary_key:
            raise UnrepairedSchema(f"{tname}.{fk.column} references {fk.ref_table}, which has no primary key")
    classes, dprops, oprops = [], [], []
    for t in schema.tables:
        cls = prefix + encode_name(t.name)
        classes.append(cls)
        for c in t.columns:
            dprops.append(DataProperty(f"{cls}#{encode_name(c.name)}", cls, c.datatype, t.name, c.name))
        for fk in t.foreign_keys:
            oprops.append(
                ObjectProperty(
                    f"{cls}#ref-{encode_name(fk.column)}",
                    cls,
                    prefix + encode_name(fk.ref_table),
                    t.name,
                    fk.column,
                    fk.ref_table,
                    fk.ref_column,
                )
            )
    return Ontology(prefix, tuple(classes), tuple(dprops), tuple(oprops))


def ontology_prompt_summary(ontology: Ontology) -> str:
    """Render the ontology the way few-shot KGQA prompts list it."""

    def names(iris: Iterable[str]) -> str:
        return repr(sorted(ontology.local_name(i) for i in iris))

    return (
        f"PREFIX : <{ontology.prefix}>\n"
        f"\n'classes': {names(ontology.classes)}\n"
        f"\n'object_properties': {names(p.iri for p in ontology.object_properties)}\n"
        f"\n'data_properties': {names(p.iri for p in ontology.data_properties)}\n"
    )


# ---------------------------------------------------------------------------
# Materialization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SkippedReference:
    table: str
    row_key: str
    column: str
    value: Any

    def to_dict(self) -> dict[str, Any]:
        return {"table": self.table, "row": self.row_key, "column": self.column, "value": self.value}


@dataclass(frozen=True)
class Graph:
    triples: frozenset[Triple] = frozenset()
    skipped: tuple[SkippedReference, ...] = field(default=(), compare=False)

    def __len__(self) -> int:
        return len(self.triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self.triples)

    def __contains__(self, triple: object) -> bool:
        return triple in self.triples

    def report(self) -> dict[str, Any]:
        return {"triples": len(self.triples), "skipped_references": [s.to_dict() for s in self.skipped]}


def subject_iri(prefix: str, table: str, key: Iterable[Any]) -> IRI:
    return IRI(f"{prefix}{encode_name(table)}/" + ".".join(encode_key_value(v) for v in key))


def materialize(schema: RelationalSchema, instance: RelationalInstance, ontology: Ontology) -> Graph:
    """Generate every triple the Direct Mapping implies for ``instance``.

    Null cells produce nothing. FK cells whose value matches no referenced
    row are skipped and listed in ``Graph.skipped``.
    """
    prefix = ontology.prefix
    rdf_type = IRI(RDF_TYPE)
    keys: dict[str, list[IRI]] = {}
    for t in schema.tables:
        rows = instance.rows(t.name)
        if rows and not t.primary_key:
            raise UnrepairedSchema(f"table {t.name} has rows but no primary key")
        pk_idx = [t.index(k) for k in t.primary_key]
        keys[t.name] = [subject_iri(prefix, t.name, [r[i] for i in pk_idx]) for r in rows]

    # value of the referenced column -> subjects holding it
    lookup: dict[tuple[str, str], dict[Any, list[IRI]]] = {}
    for _, fk in schema.foreign_keys():
        slot = (fk.ref_table, fk.ref_column)
        if slot in lookup:
            continue
        ref = schema.table(fk.ref_table)
        idx = ref.index(fk.ref_column)
        table_lookup: dict[Any, list[IRI]] = {}
        for row, subj in zip(instance.rows(ref.name), keys[ref.name]):
            if row[idx] is not None:
                table_lookup.setdefault(_key(row[idx]), []).append(subj)
        lookup[slot] = table_lookup

    triples: set[Triple] = set()
    skipped = []
    for t in schema.tables:
        cls = IRI(prefix + encode_name(t.name))
        props = [IRI(ontology.data_property(t.name, c.name).iri) for c in t.columns]
        for row, subj in zip(instance.rows(t.name), keys[t.name]):
            triples.add((subj, rdf_type, cls))
            for col, prop, value in zip(t.columns, props, row):
                if value is not None:
                    triples.add((subj, prop, literal_for(value, col.datatype)))
            for fk in t.foreign_keys:
                value = row[t.index(fk.column)]
                if value is None:
                    continue
                targets = lookup[(fk.ref_table, fk.ref_column)].get(_key(value))
                if not targets:
                    skipped.append(SkippedReference(t.name, subj.value.rsplit("/", 1)[1], fk.column, value))
                    continue
                prop = IRI(ontology.object_property(t.name, fk.column).iri)
                for target in targets:
                    triples.add((subj, prop, target))
    return Graph(frozenset(triples), tuple(skipped))


def _key(value: Any) -> tuple[str, Any]:
    # keeps True distinct from 1 when indexing
    return (type(value).__name__, value)


# ---------------------------------------------------------------------------
# N-Triples
# ---------------------------------------------------------------------------

_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t"}


def _escape(text: str) -> str:
    out = []
    for ch in text:
        if ch in _ESCAPES:
            out.append(_ESCAPES[ch])
        elif ord(ch) < 0x20 or ord(ch) == 0x7F:
            out.append(f"\\u{ord(ch):04X}")
        else:
            out.append(ch)
    return "".join(out)


def term_to_ntriples(term: Term) -> str:
    if isinstance(term, IRI):
        return f"<{term.value}>"
    body = f'"{_escape(term.lexical)}"'
    return body if term.datatype is None else f"{body}^^<{term.datatype}>"


def serialize_graph(graph: Graph, format: str = "ntriples") -> str:
    if format != "ntriples":
        raise ValueError(f"unsupported graph format {format!r}")
    lines = sorted(" ".join(term_to_ntriples(t) for t in triple) + " ." for triple in graph.triples)
    return "".join(line + "\n" for line in lines)


_NT_LINE = re.compile(
    r'^<([^>]*)>\s+<([^>]*)>\s+(?:<([^>]*)>|"((?:[^"\\]|\\.)*)"(?:\^\^<([^>]*)>)?)\s*\.\s*$'
)
_UNESCAPES = {"\\\\": "\\", '\\"': '"', "\\n": "\n", "\\r": "\r", "\\t": "\t"}


def _unescape(text: str) -> str:
    return re.sub(
        r'\\(?:u([0-9A-Fa-f]{4})|U([0-9A-Fa-f]{8})|.)',
        lambda m: chr(int(m.group(1) or m.group(2), 16)) if (m.group(1) or m.group(2)) else _UNESCAPES[m.group(0)],
        text,
    )


def parse_ntriples(text: str) -> Graph:
    """Read the N-Triples subset that ``serialize_graph`` writes."""
    triples = set()
    # only LF/CRLF end a line; splitlines() would also break on U+0085 and friends
    for n, line in enumerate(text.split("\n"), start=1):
        line = line.removesuffix("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        m = _NT_LINE.match(line)
        if not m:
            raise ParseError(f"N-Triples line {n} not understood: {line!r}")
        s, p, o_iri, o_lex, o_dt = m.groups()
        obj: Term = IRI(o_iri) if o_iri is not None else Literal(_unescape(o_lex), o_dt)
        triples.add((IRI(s), IRI(p), obj))
    return Graph(frozenset(triples))
