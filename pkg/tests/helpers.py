"""Shared test support: fixture loading, random generators and independent oracles."""

from __future__ import annotations

import random
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterator

from rdbridge.mapping import Graph, Ontology, derive_ontology, materialize
from rdbridge.schema import (
    ForeignKey,
    RelationalInstance,
    RelationalSchema,
    load_data,
    load_hints,
    load_schema,
    make_instance,
    repair_schema,
    schema_from_dict,
)
from rdbridge.sparql import AggExpr, FilterEl, NotExists, SparqlQuery, SubSelect, UnionEl, walk_expr

DATA = Path(__file__).parent / "data"
GOLDEN = DATA / "golden"
DATABASES = ("flight_2", "world_1", "concert_singer")


@dataclass(frozen=True)
class Fixture:
    schema: RelationalSchema
    instance: RelationalInstance
    ontology: Ontology
    graph: Graph


def load_db_schema(db: str) -> RelationalSchema:
    schema = load_schema(DATA / db / "schema.json")
    hints = DATA / db / "hints.json"
    repaired, _ = repair_schema(schema, load_hints(hints) if hints.exists() else None)
    return repaired


@lru_cache(maxsize=None)
def fixture(db: str, data: str = "data") -> Fixture:
    schema = load_db_schema(db)
    instance = load_data(schema, DATA / db / data)
    ontology = derive_ontology(schema)
    return Fixture(schema, instance, ontology, materialize(schema, instance, ontology))


def golden_items(db: str) -> list[tuple[str, str]]:
    return [(p.stem, p.read_text(encoding="utf-8").strip()) for p in sorted((GOLDEN / db).glob("*.sql"))]


# ---------------------------------------------------------------------------
# SPARQL 1.1 grouping rule, checked without the library's own invariant code
# ---------------------------------------------------------------------------


def _queries(q: SparqlQuery) -> Iterator[SparqlQuery]:
    yield q
    stack = list(q.where)
    while stack:
        el = stack.pop()
        if isinstance(el, SubSelect):
            yield from _queries(el.query)
        elif isinstance(el, UnionEl):
            stack.extend(el.left)
            stack.extend(el.right)
        elif isinstance(el, FilterEl):
            for e in walk_expr(el.expr):
                if isinstance(e, NotExists):
                    stack.extend(e.elements)


def group_rule_violations(q: SparqlQuery) -> list[str]:
    """Non-aggregated projected variables missing from GROUP BY, in any (sub)query."""
    out = []
    for sub in _queries(q):
        has_agg = any(p.expr is not None and any(isinstance(e, AggExpr) for e in walk_expr(p.expr)) for p in sub.projections)
        if not has_agg and not sub.group_by:
            continue
        keys = {v.name for v in sub.group_by}
        for p in sub.projections:
            if p.expr is None and p.var.name not in keys:
                out.append(p.var.name)
    return out


# ---------------------------------------------------------------------------
# Random null-free instances over a fixed schema
# ---------------------------------------------------------------------------

WORDS = ("alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa", "lambda", "Mu")
REALS = tuple(x / 4 for x in range(0, 80))


def _fresh(datatype: str, rng: random.Random) -> Any:
    if datatype == "integer":
        return rng.randrange(0, 40)
    if datatype == "real":
        return rng.choice(REALS)
    if datatype == "boolean":
        return rng.random() < 0.5
    return rng.choice(WORDS)


def _key_value(datatype: str, n: int) -> Any:
    if datatype == "integer":
        return n
    if datatype == "real":
        return n + 0.5
    if datatype == "boolean":
        return n % 2 == 0
    return f"k{n}"


def random_instance(schema: RelationalSchema, rng: random.Random, max_rows: int = 200) -> RelationalInstance:
    """Null-free rows; FK columns draw from the referenced key values (rarely dangling)."""
    order = _fk_order(schema)
    rows: dict[str, list[tuple]] = {}
    for tname in order:
        t = schema.table(tname)
        n = rng.randint(0, max_rows) if rng.random() < 0.1 else rng.randint(1, max(1, max_rows // 4))
        out: list[tuple] = []
        seen: set = set()
        counter = 0
        for _ in range(n * 3):
            if len(out) >= n:
                break
            row = []
            for c in t.columns:
                fk = t.foreign_key(c.name)
                if fk is not None and rows.get(fk.ref_table) and rng.random() > 0.05:
                    ref = schema.table(fk.ref_table)
                    row.append(rng.choice(rows[fk.ref_table])[ref.index(fk.ref_column)])
                elif t.primary_key == (c.name,):
                    counter += 1
                    row.append(_key_value(c.datatype, counter))
                elif c.name in t.primary_key:
                    row.append(_key_value(c.datatype, rng.randrange(1, 12)))
                else:
                    row.append(_fresh(c.datatype, rng))
            key = tuple(row[t.index(k)] for k in t.primary_key)
            if key in seen:
                continue
            seen.add(key)
            out.append(tuple(row))
        rows[tname] = out
    return make_instance(schema, rows)


def _fk_order(schema: RelationalSchema) -> list[str]:
    # referenced tables first where possible; cycles fall back to schema order
    done: list[str] = []
    pending = list(schema.table_names)
    while pending:
        for tname in pending:
            deps = {fk.ref_table for fk in schema.table(tname).foreign_keys} - {tname}
            if deps <= set(done):
                break
        else:
            tname = pending[0]
        done.append(tname)
        pending.remove(tname)
    return done


# ---------------------------------------------------------------------------
# Random dialect queries
# ---------------------------------------------------------------------------

CMP_OPS = ("=", "!=", "<", "<=", ">", ">=")


def _literal(datatype: str, rng: random.Random) -> str:
    if datatype == "integer":
        return str(rng.randrange(0, 40))
    if datatype == "real":
        return repr(rng.choice(REALS))
    if datatype == "boolean":
        return rng.choice(("'T'", "'F'"))
    if rng.random() < 0.3:
        return f"'k{rng.randrange(1, 30)}'"
    return f"'{rng.choice(WORDS)}'"


class QueryGenerator:
    """Random SQL in the supported dialect for one schema.

    Projections in grouped queries only use group keys and aggregates so the
    permissive SQL grouping never depends on which row represents a group.
    """

    def __init__(self, schema: RelationalSchema, rng: random.Random):
        self.schema = schema
        self.rng = rng
        self.edges: list[tuple[str, ForeignKey]] = schema.foreign_keys()

    # -- FROM ---------------------------------------------------------------

    def from_clause(self) -> tuple[str, list[tuple[str, str]]]:
        """Return FROM text and the (alias, table) list."""
        rng = self.rng
        if not self.edges or rng.random() < 0.45:
            t = rng.choice(self.schema.table_names)
            return f"{t} AS T1", [("T1", t)]
        tname, fk = rng.choice(self.edges)
        if tname == fk.ref_table:
            return f"{tname} AS T1", [("T1", tname)]
        aliases = [("T1", tname), ("T2", fk.ref_table)]
        text = f"{tname} AS T1 JOIN {fk.ref_table} AS T2 ON T1.{fk.column} = T2.{fk.ref_column}"
        # optionally extend by one more FK edge touching the tables so far
        if rng.random() < 0.4:
            used = {tname, fk.ref_table}
            options = []
            for other, fk2 in self.edges:
                if other in used and fk2.ref_table not in used:
                    src = "T1" if other == tname else "T2"
                    options.append((fk2.ref_table, f"{src}.{fk2.column} = T3.{fk2.ref_column}"))
                elif fk2.ref_table in used and other not in used:
                    dst = "T1" if fk2.ref_table == tname else "T2"
                    options.append((other, f"T3.{fk2.column} = {dst}.{fk2.ref_column}"))
            if options:
                t3, cond = rng.choice(options)
                aliases.append(("T3", t3))
                text += f" JOIN {t3} AS T3 ON {cond}"
        return text, aliases

    def column(self, aliases: list[tuple[str, str]], types: tuple[str, ...] = ()) -> tuple[str, str] | None:
        cands = []
        for alias, t in aliases:
            for c in self.schema.table(t).columns:
                if not types or c.datatype in types:
                    cands.append((f"{alias}.{c.name}", c.datatype))
        return self.rng.choice(cands) if cands else None

    # -- WHERE --------------------------------------------------------------

    def leaf(self, aliases: list[tuple[str, str]], allow_sub: bool) -> str:
        rng = self.rng
        col, dt = self.column(aliases)
        roll = rng.random()
        if dt == "text" and roll < 0.2:
            pat = rng.choice(("a%", "%a", "%et%", "_e%", "k1%", "%ta"))
            return f"{col} LIKE '{pat}'"
        if dt in ("integer", "real") and roll < 0.3:
            lo, hi = sorted((float(_literal(dt, rng)), float(_literal(dt, rng))))
            if dt == "integer":
                lo, hi = int(lo), int(hi)
            return f"{col} BETWEEN {lo} AND {hi}"
        if allow_sub and roll > 0.8:
            return self.sub_leaf(col, dt)
        ops = CMP_OPS if dt != "boolean" else ("=", "!=")
        return f"{col} {rng.choice(ops)} {_literal(dt, rng)}"

    def sub_leaf(self, col: str, dt: str) -> str:
        rng = self.rng
        numeric = dt in ("integer", "real")
        compatible = [
            (t.name, c.name)
            for t in self.schema.tables
            for c in t.columns
            if c.datatype == dt or (numeric and c.datatype in ("integer", "real"))
        ]
        t, c = rng.choice(compatible)
        inner_where = ""
        if rng.random() < 0.5:
            inner_where = " WHERE " + self.leaf([("S1", t)], allow_sub=False).replace("S1.", "")
        if numeric and rng.random() < 0.4:
            func = rng.choice(("avg", "max", "min", "sum"))
            return f"{col} {rng.choice(CMP_OPS)} (SELECT {func}({c}) FROM {t}{inner_where})"
        neg = "NOT " if rng.random() < 0.4 else ""
        return f"{col} {neg}IN (SELECT {c} FROM {t}{inner_where})"

    def where(self, aliases: list[tuple[str, str]]) -> str:
        rng = self.rng
        n = rng.choice((0, 0, 1, 1, 1, 2, 3))
        if n == 0:
            return ""
        if n >= 2 and rng.random() < 0.3:
            # OR of plain leaves (subqueries are not allowed under OR)
            parts = [self.leaf(aliases, allow_sub=False) for _ in range(n)]
            return " WHERE " + " OR ".join(parts)
        parts = [self.leaf(aliases, allow_sub=i == 0) for i in range(n)]
        return " WHERE " + " AND ".join(parts)

    # -- whole queries ------------------------------------------------------

    def plain(self) -> str:
        rng = self.rng
        frm, aliases = self.from_clause()
        k = rng.randint(1, 4)
        items = []
        for _ in range(k):
            if rng.random() < 0.15:
                a = self.column(aliases, ("integer", "real"))
                b = self.column(aliases, ("integer", "real"))
                if a and b:
                    items.append(f"{a[0]} {rng.choice('+-*/')} {b[0]}")
                    continue
            items.append(self.column(aliases)[0])
        distinct = "DISTINCT " if rng.random() < 0.2 else ""
        sql = f"SELECT {distinct}{', '.join(items)} FROM {frm}{self.where(aliases)}"
        if rng.random() < 0.35:
            key, _ = self.column(aliases, ("integer", "real", "text"))
            direction = rng.choice(("", " ASC", " DESC"))
            sql += f" ORDER BY {key}{direction}"
            if rng.random() < 0.7:
                sql += f" LIMIT {rng.randint(1, 6)}"
        return sql

    def aggregate(self) -> str:
        rng = self.rng
        frm, aliases = self.from_clause()
        keys = [self.column(aliases)[0] for _ in range(rng.choice((0, 1, 1, 2)))]
        keys = list(dict.fromkeys(keys))
        aggs = []
        for _ in range(rng.randint(1, 3)):
            func = rng.choice(("count", "count", "sum", "avg", "min", "max"))
            if func == "count":
                aggs.append("count(*)")
            else:
                types = ("integer", "real") if func in ("sum", "avg") else ("integer", "real", "text")
                col = self.column(aliases, types)
                aggs.append(f"{func}({col[0]})" if col else "count(*)")
        shown = [k for k in keys if rng.random() < 0.8]
        items = shown + aggs
        sql = f"SELECT {', '.join(items)} FROM {frm}{self.where(aliases)}"
        if keys:
            sql += " GROUP BY " + ", ".join(keys)
            if rng.random() < 0.3:
                sql += f" HAVING count(*) {rng.choice(CMP_OPS)} {rng.randrange(0, 4)}"
            if rng.random() < 0.3:
                sql += f" ORDER BY {rng.choice(aggs)}{rng.choice(('', ' DESC'))} LIMIT {rng.randint(1, 4)}"
        return sql

    def set_query(self) -> str:
        rng = self.rng
        kind = rng.choice(("UNION", "INTERSECT", "EXCEPT"))
        t = rng.choice(self.schema.table_names)
        col = self.rng.choice(self.schema.table(t).columns)
        left = f"SELECT {col.name} FROM {t}{self.where([('T1', t)]).replace('T1.', '')}"
        # right branch: same table or any column of the same datatype
        cands = [(u.name, c.name) for u in self.schema.tables for c in u.columns if c.datatype == col.datatype]
        t2, c2 = rng.choice(cands)
        right = f"SELECT {c2} FROM {t2}{self.where([('T1', t2)]).replace('T1.', '')}"
        return f"{left} {kind} {right}"

    def query(self) -> str:
        roll = self.rng.random()
        if roll < 0.45:
            return self.plain()
        if roll < 0.85:
            return self.aggregate()
        return self.set_query()


def generated_corpus(n_per_db: int = 200, seed: int = 7) -> list[tuple[str, str, str]]:
    """``(db, query id, sql)`` triples, deterministic for a given seed."""
    rng = random.Random(seed)
    out = []
    for db in DATABASES:
        gen = QueryGenerator(load_db_schema(db), rng)
        for i in range(n_per_db):
            out.append((db, f"{db}-g{i:03d}", gen.query()))
    return out


# ---------------------------------------------------------------------------
# Random schemas and a brute-force triple enumerator
# ---------------------------------------------------------------------------


def random_schema(rng: random.Random, n_tables: int | None = None) -> RelationalSchema:
    n_tables = n_tables or rng.randint(1, 5)
    doc: dict[str, Any] = {"db_id": "rand", "tables": []}
    for i in range(n_tables):
        cols = [{"name": "id", "type": rng.choice(("integer", "text"))}]
        for j in range(rng.randint(0, 4)):
            cols.append({"name": f"c{j}", "type": rng.choice(("integer", "real", "text", "boolean"))})
        doc["tables"].append({"name": f"T{i}", "columns": cols, "primary_key": ["id"], "foreign_keys": []})
    # FK columns reference earlier tables' id with matching datatype
    for i in range(1, n_tables):
        for j in range(rng.randint(0, 2)):
            ref = rng.randrange(0, i)
            rtype = doc["tables"][ref]["columns"][0]["type"]
            name = f"f{j}"
            doc["tables"][i]["columns"].append({"name": name, "type": rtype})
            doc["tables"][i]["foreign_keys"].append({"column": name, "ref_table": f"T{ref}", "ref_column": "id"})
    return schema_from_dict(doc)


def random_nullable_instance(schema: RelationalSchema, rng: random.Random, max_rows: int = 12) -> RelationalInstance:
    rows: dict[str, list[tuple]] = {}
    for t in schema.tables:
        out = []
        for n in range(rng.randint(0, max_rows)):
            row = []
            for c in t.columns:
                if c.name == "id":
                    row.append(_key_value(c.datatype, n + 1))
                elif rng.random() < 0.2:
                    row.append(None)
                elif t.foreign_key(c.name) is not None:
                    # key values 1..max_rows+3, so some references dangle
                    row.append(_key_value(c.datatype, rng.randint(1, max_rows + 3)))
                else:
                    row.append(_fresh(c.datatype, rng))
            out.append(tuple(row))
        rows[t.name] = out
    return make_instance(schema, rows)


def brute_force_triples(schema: RelationalSchema, instance: RelationalInstance) -> set[tuple]:
    """Enumerate mapping triples as plain tuples by nested loops over rows."""
    out: set[tuple] = set()
    for t in schema.tables:
        pk = [t.index(k) for k in t.primary_key]
        for row in instance.rows(t.name):
            subj = (t.name, tuple(repr(row[i]) for i in pk))
            out.add((subj, "type", t.name))
            for c, v in zip(t.columns, row):
                if v is not None:
                    out.add((subj, c.name, repr(v)))
            for fk in t.foreign_keys:
                v = row[t.index(fk.column)]
                if v is None:
                    continue
                ref = schema.table(fk.ref_table)
                rpk = [ref.index(k) for k in ref.primary_key]
                for rrow in instance.rows(ref.name):
                    rv = rrow[ref.index(fk.ref_column)]
                    if rv == v and type(rv) is type(v):
                        out.add((subj, "ref-" + fk.column, (ref.name, tuple(repr(rrow[i]) for i in rpk))))
    return out


def triple_count_formula(schema: RelationalSchema, instance: RelationalInstance) -> int:
    """rows + non-null cells + resolvable FK cells (key references are unique)."""
    total = 0
    for t in schema.tables:
        rows = instance.rows(t.name)
        total += len(rows)
        total += sum(1 for r in rows for v in r if v is not None)
        for fk in t.foreign_keys:
            ref = schema.table(fk.ref_table)
            targets = {r[ref.index(fk.ref_column)] for r in instance.rows(ref.name)}
            total += sum(1 for r in rows if r[t.index(fk.column)] is not None and r[t.index(fk.column)] in targets)
    return total
