"""SemQL intermediate representation and lowering from the SQL AST.

Grammar (Z is the root)::

    Z           ::= intersect R R | union R R | except R R | R
    R           ::= Select [Filter] [Order | Superlative]
    Select      ::= distinct? N            N ::= A{1..6}
    Order       ::= asc A | desc A
    Superlative ::= most V A | least V A   (V = positive limit count)
    Filter      ::= and F F | or F F | op A V | op A R | between A V V
                  | between A R | in A R | not_in A R | like A V
    A           ::= max|min|count|sum|avg Op | Op
    Op          ::= (+|-|*|/) C T C T | C T

Joins and grouping are not part of the grammar; each R carries them as
annotations (its table set, the FK edges joining it, and the SQL GROUP BY
columns) so the SPARQL emitter can re-derive them.

The dataclasses themselves do not check anything, so malformed trees can be
built for testing ``validate_semql``. The lowercase constructor functions
(``ref``, ``agg``, ``select``, ``between`` ...) enforce the grammar.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Any, Iterator, Optional, Union

from .errors import ProjectionOverflow, SqlSyntaxError, UnsupportedConstruct
from .schema import RelationalSchema
from .sql import ast as sq

MAX_PROJECTIONS = 6
AGG_FUNCS = ("max", "min", "count", "sum", "avg")
CMP_OPS = ("=", "!=", "<", "<=", ">", ">=")
ARITH_OPS = ("-", "+", "*", "/")
SET_KINDS = ("intersect", "union", "except")


# ---------------------------------------------------------------------------
# Node types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Col:
    """A (C, T) pair; ``column == "*"`` only appears under count."""

    column: str
    table: str


@dataclass(frozen=True)
class Ref:
    col: Col


@dataclass(frozen=True)
class ArithOp:
    op: str
    left: Col
    right: Col


Op = Union[Ref, ArithOp]


@dataclass(frozen=True)
class Agg:
    func: str
    op: Op


A = Union[Agg, Ref, ArithOp]


@dataclass(frozen=True)
class Val:
    value: Any


@dataclass(frozen=True)
class Select:
    items: tuple[A, ...]
    distinct: bool = False


@dataclass(frozen=True)
class Order:
    direction: str  # asc | desc
    a: A


@dataclass(frozen=True)
class Superlative:
    kind: str  # most | least
    limit: int
    a: A


@dataclass(frozen=True)
class JoinEdge:
    table: str
    column: str
    ref_table: str
    ref_column: str


@dataclass(frozen=True)
class FAnd:
    left: "Filter"
    right: "Filter"


@dataclass(frozen=True)
class FOr:
    left: "Filter"
    right: "Filter"


@dataclass(frozen=True)
class Cmp:
    op: str
    a: A
    rhs: Union[Val, "R"]


@dataclass(frozen=True)
class Between:
    a: A
    low: Optional[Val]
    high: Optional[Val]


@dataclass(frozen=True)
class BetweenSub:
    """``between A R``: R projects the (low, high) bounds."""

    a: A
    query: "R"


@dataclass(frozen=True)
class In:
    a: A
    query: "R"


@dataclass(frozen=True)
class NotIn:
    a: A
    query: "R"


@dataclass(frozen=True)
class Like:
    a: A
    pattern: Val


Filter = Union[FAnd, FOr, Cmp, Between, BetweenSub, In, NotIn, Like]


@dataclass(frozen=True)
class R:
    select: Select
    filter: Optional[Filter] = None
    order: Optional[Union[Order, Superlative]] = None
    tables: tuple[str, ...] = ()
    joins: tuple[JoinEdge, ...] = ()
    group_by: tuple[Col, ...] = ()


@dataclass(frozen=True)
class SetQuery:
    kind: str
    left: R
    right: R


Z = Union[SetQuery, R]


# ---------------------------------------------------------------------------
# Grammar-enforcing constructors
# ---------------------------------------------------------------------------


def ref(column: str, table: str) -> Ref:
    return Ref(Col(column, table))


def arith(op: str, left: Col, right: Col) -> ArithOp:
    if op not in ARITH_OPS:
        raise ValueError(f"unknown arithmetic operator {op!r}")
    if "*" in (left.column, right.column):
        raise ValueError("arithmetic over '*'")
    return ArithOp(op, left, right)


def agg(func: str, op: Op) -> Agg:
    if func not in AGG_FUNCS:
        raise ValueError(f"unknown aggregate {func!r}")
    if not isinstance(op, (Ref, ArithOp)):
        raise ValueError("aggregate argument must be an Op")
    if isinstance(op, Ref) and op.col.column == "*" and func != "count":
        raise ValueError(f"{func}(*) is not valid")
    return Agg(func, op)


def select(items: list[A] | tuple[A, ...], distinct: bool = False) -> Select:
    items = tuple(items)
    if not items:
        raise ValueError("a projection needs at least one item")
    if len(items) > MAX_PROJECTIONS:
        raise ProjectionOverflow(f"{len(items)} projection items; at most {MAX_PROJECTIONS} are representable")
    for a in items:
        _check_a(a)
    return Select(items, distinct)


def order(direction: str, a: A) -> Order:
    if direction not in ("asc", "desc"):
        raise ValueError(direction)
    _check_a(a)
    return Order(direction, a)


def superlative(kind: str, a: A, limit: int = 1) -> Superlative:
    if kind not in ("most", "least"):
        raise ValueError(kind)
    if not isinstance(limit, int) or isinstance(limit, bool) or limit < 1:
        raise ValueError("superlative limit must be a positive integer")
    _check_a(a)
    return Superlative(kind, limit, a)


def cmp(op: str, a: A, rhs: Union[Val, R]) -> Cmp:
    if op not in CMP_OPS:
        raise ValueError(f"unknown comparison {op!r}")
    _check_a(a)
    if not isinstance(rhs, (Val, R)):
        raise ValueError("comparison right-hand side must be a value or a query")
    return Cmp(op, a, rhs)


def between(a: A, low: Val, high: Val) -> Between:
    _check_a(a)
    if not (isinstance(low, Val) and isinstance(high, Val)):
        raise ValueError("between needs two value bounds")
    return Between(a, low, high)


def between_query(a: A, query: R) -> BetweenSub:
    _check_a(a)
    if len(query.select.items) != 2:
        raise ValueError("between A R needs R to project exactly two bounds")
    return BetweenSub(a, query)


def in_(a: A, query: R) -> In:
    _check_a(a)
    if len(query.select.items) != 1:
        raise ValueError("IN subquery must project one item")
    return In(a, query)


def not_in(a: A, query: R) -> NotIn:
    _check_a(a)
    if len(query.select.items) != 1:
        raise ValueError("NOT IN subquery must project one item")
    return NotIn(a, query)


def like(a: A, pattern: Val) -> Like:
    _check_a(a)
    if not (isinstance(pattern, Val) and isinstance(pattern.value, str)):
        raise ValueError("LIKE pattern must be a text value")
    return Like(a, pattern)


def and_(left: Filter, right: Filter) -> FAnd:
    return FAnd(left, right)


def or_(left: Filter, right: Filter) -> FOr:
    return FOr(left, right)


def query(
    sel: Select,
    filter: Optional[Filter] = None,
    ordering: Optional[Union[Order, Superlative]] = None,
    tables: tuple[str, ...] = (),
    joins: tuple[JoinEdge, ...] = (),
    group_by: tuple[Col, ...] = (),
) -> R:
    if not isinstance(sel, Select):
        raise ValueError("R needs a Select")
    if not tables:
        tables = tuple(dict.fromkeys(c.table for c in cols_of_r_shallow(sel, filter, ordering)))
    return R(sel, filter, ordering, tuple(tables), tuple(joins), tuple(group_by))


def set_query(kind: str, left: R, right: R) -> SetQuery:
    if kind not in SET_KINDS:
        raise ValueError(kind)
    if len(left.select.items) != len(right.select.items):
        raise ValueError("set operation branches must project the same number of items")
    return SetQuery(kind, left, right)


def _check_a(a: Any) -> None:
    if isinstance(a, Agg):
        if a.func not in AGG_FUNCS or not isinstance(a.op, (Ref, ArithOp)):
            raise ValueError(f"malformed aggregate {a!r}")
    elif not isinstance(a, (Ref, ArithOp)):
        raise ValueError(f"not an A node: {a!r}")


# ---------------------------------------------------------------------------
# Traversal helpers
# ---------------------------------------------------------------------------


def op_cols(op: Op) -> tuple[Col, ...]:
    return (op.col,) if isinstance(op, Ref) else (op.left, op.right)


def a_cols(a: A) -> tuple[Col, ...]:
    return op_cols(a.op) if isinstance(a, Agg) else op_cols(a)


def is_agg(a: A) -> bool:
    return isinstance(a, Agg)


def filter_leaves(f: Optional[Filter]) -> Iterator[Filter]:
    if f is None:
        return
    if isinstance(f, (FAnd, FOr)):
        yield from filter_leaves(f.left)
        yield from filter_leaves(f.right)
    else:
        yield f


def conjuncts(f: Optional[Filter]) -> list[Filter]:
    if f is None:
        return []
    if isinstance(f, FAnd):
        return conjuncts(f.left) + conjuncts(f.right)
    return [f]


def leaf_subquery(f: Filter) -> Optional[R]:
    if isinstance(f, Cmp) and isinstance(f.rhs, R):
        return f.rhs
    if isinstance(f, (In, NotIn, BetweenSub)):
        return f.query
    return None


def cols_of_r_shallow(sel: Select, filt: Optional[Filter], ordering: Any) -> list[Col]:
    cols = [c for a in sel.items for c in a_cols(a)]
    for leaf in filter_leaves(filt):
        cols.extend(a_cols(leaf.a))
    if ordering is not None:
        cols.extend(a_cols(ordering.a))
    return cols


def subqueries(r: R) -> list[R]:
    return [q for leaf in filter_leaves(r.filter) if (q := leaf_subquery(leaf)) is not None]


def all_rs(z: Z) -> Iterator[R]:
    """Every R in the tree, outermost first."""
    roots = [z.left, z.right] if isinstance(z, SetQuery) else [z]
    stack = list(reversed(roots))
    while stack:
        r = stack.pop()
        yield r
        stack.extend(reversed(subqueries(r)))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_semql(tree: Z, schema: RelationalSchema) -> list[str]:
    """Grammar and name-resolution diagnostics; empty when the tree conforms."""
    diags: list[str] = []
    if isinstance(tree, SetQuery):
        if tree.kind not in SET_KINDS:
            diags.append(f"Z: unknown set operation {tree.kind!r}")
        for side in (tree.left, tree.right):
            if not isinstance(side, R):
                diags.append(f"Z: {tree.kind} operand is not an R node")
        if isinstance(tree.left, R) and isinstance(tree.right, R):
            if len(tree.left.select.items) != len(tree.right.select.items):
                diags.append(f"Z: {tree.kind} branches project different numbers of items")
            _validate_r(tree.left, schema, diags, "Z.left")
            _validate_r(tree.right, schema, diags, "Z.right")
    elif isinstance(tree, R):
        _validate_r(tree, schema, diags, "R")
    else:
        diags.append(f"root is neither Z nor R: {type(tree).__name__}")
    return diags


def _validate_col(col: Any, r: R, schema: RelationalSchema, diags: list[str], where: str, star_ok: bool) -> None:
    if not isinstance(col, Col):
        diags.append(f"{where}: expected (C, T), got {col!r}")
        return
    if not schema.has_table(col.table):
        diags.append(f"{where}: unknown table {col.table!r}")
        return
    if col.table not in r.tables:
        diags.append(f"{where}: table {col.table!r} is not in this query's table set")
    if col.column == "*":
        if not star_ok:
            diags.append(f"{where}: '*' only allowed under count")
    elif not schema.table(col.table).has_column(col.column):
        diags.append(f"{where}: unknown column {col.table}.{col.column}")


def _validate_op(op: Any, r, schema, diags, where, star_ok=False) -> None:
    if isinstance(op, Ref):
        _validate_col(op.col, r, schema, diags, where, star_ok)
    elif isinstance(op, ArithOp):
        if op.op not in ARITH_OPS:
            diags.append(f"{where}: unknown arithmetic operator {op.op!r}")
        _validate_col(op.left, r, schema, diags, where, False)
        _validate_col(op.right, r, schema, diags, where, False)
    else:
        diags.append(f"{where}: expected Op, got {type(op).__name__}")


def _validate_a(a: Any, r, schema, diags, where) -> None:
    if isinstance(a, Agg):
        if a.func not in AGG_FUNCS:
            diags.append(f"{where}: unknown aggregate {a.func!r}")
        _validate_op(a.op, r, schema, diags, where, star_ok=a.func == "count")
    elif isinstance(a, (Ref, ArithOp)):
        _validate_op(a, r, schema, diags, where)
    else:
        diags.append(f"{where}: expected A, got {type(a).__name__}")


def _validate_val(v: Any, diags, where) -> None:
    if not isinstance(v, Val):
        diags.append(f"{where}: expected a value, got {v!r}")


def _validate_filter(f: Any, r: R, schema, diags, where) -> None:
    if isinstance(f, (FAnd, FOr)):
        _validate_filter(f.left, r, schema, diags, where)
        _validate_filter(f.right, r, schema, diags, where)
        return
    name = type(f).__name__
    if isinstance(f, Cmp):
        if f.op not in CMP_OPS:
            diags.append(f"{where}.{name}: unknown operator {f.op!r}")
        _validate_a(f.a, r, schema, diags, f"{where}.{name}")
        if isinstance(f.rhs, R):
            _validate_r(f.rhs, schema, diags, f"{where}.{name}.R")
            if len(f.rhs.select.items) != 1:
                diags.append(f"{where}.{name}: comparison subquery must project one item")
        else:
            _validate_val(f.rhs, diags, f"{where}.{name}")
    elif isinstance(f, Between):
        _validate_a(f.a, r, schema, diags, f"{where}.Between")
        if not isinstance(f.low, Val) or not isinstance(f.high, Val):
            diags.append(f"{where}.Between: between needs exactly two value bounds")
    elif isinstance(f, BetweenSub):
        _validate_a(f.a, r, schema, diags, f"{where}.BetweenSub")
        _validate_r(f.query, schema, diags, f"{where}.BetweenSub.R")
        if len(f.query.select.items) != 2:
            diags.append(f"{where}.BetweenSub: R must project exactly two bounds")
    elif isinstance(f, (In, NotIn)):
        _validate_a(f.a, r, schema, diags, f"{where}.{name}")
        if not isinstance(f.query, R):
            diags.append(f"{where}.{name}: operand is not an R node")
        else:
            _validate_r(f.query, schema, diags, f"{where}.{name}.R")
            if len(f.query.select.items) != 1:
                diags.append(f"{where}.{name}: subquery must project one item")
    elif isinstance(f, Like):
        _validate_a(f.a, r, schema, diags, f"{where}.Like")
        if not (isinstance(f.pattern, Val) and isinstance(f.pattern.value, str)):
            diags.append(f"{where}.Like: pattern must be a text value")
    else:
        diags.append(f"{where}: unknown filter node {name}")


def _validate_r(r: Any, schema: RelationalSchema, diags: list[str], where: str) -> None:
    if not isinstance(r, R):
        diags.append(f"{where}: expected R, got {type(r).__name__}")
        return
    for t in r.tables:
        if not schema.has_table(t):
            diags.append(f"{where}: unknown table {t!r}")
    if len(set(r.tables)) != len(r.tables):
        diags.append(f"{where}: a table appears more than once in the table set")
    sel = r.select
    if not isinstance(sel, Select):
        diags.append(f"{where}: missing Select")
        return
    if not 1 <= len(sel.items) <= MAX_PROJECTIONS:
        diags.append(f"{where}.Select: N has {len(sel.items)} items (allowed 1..{MAX_PROJECTIONS})")
    for n, a in enumerate(sel.items):
        _validate_a(a, r, schema, diags, f"{where}.Select[{n}]")
    if r.filter is not None:
        _validate_filter(r.filter, r, schema, diags, f"{where}.Filter")
    if isinstance(r.order, Order):
        if r.order.direction not in ("asc", "desc"):
            diags.append(f"{where}.Order: direction must be asc or desc")
        _validate_a(r.order.a, r, schema, diags, f"{where}.Order")
    elif isinstance(r.order, Superlative):
        if r.order.kind not in ("most", "least"):
            diags.append(f"{where}.Superlative: kind must be most or least")
        lim = r.order.limit
        if not isinstance(lim, int) or isinstance(lim, bool) or lim < 1:
            diags.append(f"{where}.Superlative: limit must be a positive integer")
        _validate_a(r.order.a, r, schema, diags, f"{where}.Superlative")
    elif r.order is not None:
        diags.append(f"{where}: unknown ordering node {type(r.order).__name__}")
    for c in r.group_by:
        _validate_col(c, r, schema, diags, f"{where}.group_by", star_ok=False)
    diags.extend(f"{where}: {d}" for d in join_path_problems(r, schema))


def join_path_problems(r: R, schema: RelationalSchema) -> list[str]:
    """Every edge must be a declared FK inside the table set, and the edges must connect it."""
    problems = []
    declared = {(t, fk.column, fk.ref_table, fk.ref_column) for t, fk in schema.foreign_keys()}
    for e in r.joins:
        if (e.table, e.column, e.ref_table, e.ref_column) not in declared:
            problems.append(f"join edge {e.table}.{e.column} -> {e.ref_table}.{e.ref_column} is not a declared foreign key")
        if e.table not in r.tables or e.ref_table not in r.tables:
            problems.append(f"join edge {e.table}.{e.column} leaves the table set")
    if len(r.tables) > 1:
        seen = {r.tables[0]}
        frontier = deque([r.tables[0]])
        while frontier:
            t = frontier.popleft()
            for e in r.joins:
                for a, b in ((e.table, e.ref_table), (e.ref_table, e.table)):
                    if a == t and b not in seen:
                        seen.add(b)
                        frontier.append(b)
        missing = [t for t in r.tables if t not in seen]
        if missing:
            problems.append(f"tables {missing} are not connected to {r.tables[0]} by the join path")
    return problems


# ---------------------------------------------------------------------------
# S-expression form
# ---------------------------------------------------------------------------


def _val_sexpr(v: Val) -> str:
    x = v.value
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, str):
        return json.dumps(x, ensure_ascii=False)
    return repr(x)


def _op_sexpr(op: Op) -> str:
    if isinstance(op, Ref):
        return f"(ref {op.col.column} {op.col.table})"
    return f"({op.op} {op.left.column} {op.left.table} {op.right.column} {op.right.table})"


def _a_sexpr(a: A) -> str:
    return f"({a.func} {_op_sexpr(a.op)})" if isinstance(a, Agg) else _op_sexpr(a)


def _filter_sexpr(f: Filter) -> str:
    if isinstance(f, FAnd):
        return f"(and {_filter_sexpr(f.left)} {_filter_sexpr(f.right)})"
    if isinstance(f, FOr):
        return f"(or {_filter_sexpr(f.left)} {_filter_sexpr(f.right)})"
    if isinstance(f, Cmp):
        rhs = _r_sexpr(f.rhs) if isinstance(f.rhs, R) else _val_sexpr(f.rhs)
        return f"({f.op} {_a_sexpr(f.a)} {rhs})"
    if isinstance(f, Between):
        return f"(between {_a_sexpr(f.a)} {_val_sexpr(f.low)} {_val_sexpr(f.high)})"
    if isinstance(f, BetweenSub):
        return f"(between {_a_sexpr(f.a)} {_r_sexpr(f.query)})"
    if isinstance(f, In):
        return f"(in {_a_sexpr(f.a)} {_r_sexpr(f.query)})"
    if isinstance(f, NotIn):
        return f"(not_in {_a_sexpr(f.a)} {_r_sexpr(f.query)})"
    return f"(like {_a_sexpr(f.a)} {_val_sexpr(f.pattern)})"


def _r_sexpr(r: R) -> str:
    parts = ["R", "(select" + (" distinct" if r.select.distinct else "") + "".join(" " + _a_sexpr(a) for a in r.select.items) + ")"]
    if r.filter is not None:
        parts.append(f"(filter {_filter_sexpr(r.filter)})")
    if isinstance(r.order, Order):
        parts.append(f"({r.order.direction} {_a_sexpr(r.order.a)})")
    elif isinstance(r.order, Superlative):
        parts.append(f"({r.order.kind} {r.order.limit} {_a_sexpr(r.order.a)})")
    parts.append("(from " + " ".join(r.tables) + ")")
    for e in r.joins:
        parts.append(f"(join {e.table}.{e.column} {e.ref_table}.{e.ref_column})")
    if r.group_by:
        parts.append("(group " + " ".join(f"(ref {c.column} {c.table})" for c in r.group_by) + ")")
    return "(" + " ".join(parts) + ")"


def to_sexpr(tree: Z) -> str:
    """Stable one-line debug form, e.g. ``(intersect (R ...) (R ...))``."""
    if isinstance(tree, SetQuery):
        return f"({tree.kind} {_r_sexpr(tree.left)} {_r_sexpr(tree.right)})"
    return _r_sexpr(tree)


# ---------------------------------------------------------------------------
# Lowering SQL -> SemQL
# ---------------------------------------------------------------------------


class _Lowerer:
    def __init__(self, schema: RelationalSchema):
        self.schema = schema

    def z(self, q: sq.Query) -> Z:
        if isinstance(q, sq.SetOp):
            if isinstance(q.left, sq.SetOp) or isinstance(q.right, sq.SetOp):
                raise UnsupportedConstruct("chained set operations")
            return set_query(q.kind, self.r(q.left), self.r(q.right))
        return self.r(q)

    def sub_r(self, q: sq.Query) -> R:
        if isinstance(q, sq.SetOp):
            raise UnsupportedConstruct("set operation inside a subquery")
        return self.r(q)

    # -- A / Op -------------------------------------------------------------

    def col(self, e: sq.ColumnRef) -> Col:
        return Col(e.column, e.table)

    def op(self, e: sq.Expr) -> Op:
        if isinstance(e, sq.ColumnRef):
            return Ref(self.col(e))
        if isinstance(e, sq.Arith):
            if isinstance(e.left, sq.Value) or isinstance(e.right, sq.Value):
                raise UnsupportedConstruct("arithmetic with a literal operand")
            if not (isinstance(e.left, sq.ColumnRef) and isinstance(e.right, sq.ColumnRef)):
                raise UnsupportedConstruct("nested arithmetic")
            return arith(e.op, self.col(e.left), self.col(e.right))
        if isinstance(e, sq.Aggregate):
            raise UnsupportedConstruct("nested aggregate")
        if isinstance(e, sq.Value):
            raise UnsupportedConstruct("literal in projection or operand position")
        if isinstance(e, sq.ScalarQuery):
            raise UnsupportedConstruct("subquery in projection")
        raise UnsupportedConstruct("expression", type(e).__name__)

    def a(self, e: sq.Expr, anchor: str) -> A:
        if isinstance(e, sq.Aggregate):
            if e.distinct:
                raise UnsupportedConstruct("DISTINCT inside aggregate")
            if isinstance(e.arg, sq.ColumnRef) and e.arg.is_star:
                return agg("count", Ref(Col("*", anchor)))
            return agg(e.func, self.op(e.arg))
        return self.op(e)

    # -- R ------------------------------------------------------------------

    def r(self, b: sq.Block) -> R:
        tables = [t.name for t in b.tables]
        dup = [t for t in tables if tables.count(t) > 1]
        if dup:
            raise UnsupportedConstruct("self-join", f"table {dup[0]!r} appears more than once")
        anchor = tables[0]

        edges: list[JoinEdge] = []
        leftovers: list[sq.Expr] = []
        for j in b.joins:
            for c in _sql_conjuncts(j.on):
                edge = self.join_edge(c)
                if edge is None:
                    if _is_column_equality(c):
                        raise UnsupportedConstruct("join condition not backed by a foreign key", sq.expr_to_sql(c))
                    leftovers.append(c)
                else:
                    edges.append(edge)
        where_rest = []
        for c in _sql_conjuncts(b.where):
            edge = self.join_edge(c) if _is_column_equality(c) else None
            if edge is not None:
                edges.append(edge)
            else:
                where_rest.append(c)
        tables, edges = self.connect(tables, list(dict.fromkeys(edges)))

        items = tuple(self.a(i.expr, anchor) for i in b.select)
        sel = select(items, b.distinct)

        for c in leftovers + where_rest:
            if sq.contains_aggregate(c):
                raise SqlSyntaxError("aggregate function in WHERE clause")
        where_filter = self.filters(leftovers + where_rest, anchor)
        having_filter = self.filters(_sql_conjuncts(b.having), anchor, having=True)
        filt = _and_all([f for f in (where_filter, having_filter) if f is not None])

        grouped = bool(b.group_by) or any(isinstance(a, Agg) for a in items)
        group_cols = tuple(self.col(g) for g in b.group_by if isinstance(g, sq.ColumnRef))
        if len(group_cols) != len(b.group_by):
            raise UnsupportedConstruct("GROUP BY expression")

        ordering = None
        if b.order_by:
            if len(b.order_by) > 1:
                raise UnsupportedConstruct("multi-key ORDER BY")
            key = b.order_by[0]
            if isinstance(key.expr, sq.Value):
                raise UnsupportedConstruct("ORDER BY position or literal")
            oa = self.a(key.expr, anchor)
            if grouped and not isinstance(oa, Agg):
                if not set(a_cols(oa)) <= set(group_cols) | {c for a in items if not isinstance(a, Agg) for c in a_cols(a)}:
                    raise UnsupportedConstruct("ORDER BY non-grouped column in aggregate query")
            if b.limit is not None:
                ordering = superlative("most" if key.desc else "least", oa, b.limit)
            else:
                ordering = order("desc" if key.desc else "asc", oa)
        elif b.limit is not None:
            raise UnsupportedConstruct("LIMIT without ORDER BY")

        return R(sel, filt, ordering, tuple(tables), tuple(edges), group_cols)

    def join_edge(self, c: sq.Expr) -> Optional[JoinEdge]:
        if not _is_column_equality(c):
            return None
        l, r = c.left, c.right
        if l.table == r.table:
            return None
        for (a, b) in ((l, r), (r, l)):
            fk = self.schema.table(a.table).foreign_key(a.column)
            if fk is not None and fk.ref_table == b.table and fk.ref_column == b.column:
                return JoinEdge(a.table, a.column, b.table, b.column)
        return None

    def connect(self, tables: list[str], edges: list[JoinEdge]) -> tuple[list[str], list[JoinEdge]]:
        """Add unique shortest FK paths until the table set is connected."""
        while True:
            comps = _components(tables, edges)
            if len(comps) <= 1:
                return tables, edges
            path = self.shortest_path(comps[0], set().union(*comps[1:]))
            for e in path:
                for t in (e.table, e.ref_table):
                    if t not in tables:
                        tables.append(t)
                edges.append(e)

    def shortest_path(self, sources: set[str], targets: set[str]) -> list[JoinEdge]:
        adj: dict[str, list[tuple[str, JoinEdge]]] = {}
        for tname, fk in self.schema.foreign_keys():
            e = JoinEdge(tname, fk.column, fk.ref_table, fk.ref_column)
            adj.setdefault(tname, []).append((fk.ref_table, e))
            adj.setdefault(fk.ref_table, []).append((tname, e))
        # BFS counting the number of shortest paths to detect ambiguity
        dist = {s: 0 for s in sources}
        count = {s: 1 for s in sources}
        back: dict[str, tuple[str, JoinEdge]] = {}
        frontier = deque(sorted(sources))
        while frontier:
            t = frontier.popleft()
            for nxt, e in adj.get(t, []):
                if nxt in sources:
                    continue
                if nxt not in dist:
                    dist[nxt] = dist[t] + 1
                    count[nxt] = count[t]
                    back[nxt] = (t, e)
                    frontier.append(nxt)
                elif dist[nxt] == dist[t] + 1:
                    count[nxt] += count[t]
        reached = [t for t in targets if t in dist]
        if not reached:
            raise UnsupportedConstruct(
                "join path not derivable", f"no foreign-key path between {sorted(sources)} and {sorted(targets)}"
            )
        best = min(dist[t] for t in reached)
        ends = [t for t in reached if dist[t] == best]
        if len(ends) > 1 or count[ends[0]] > 1:
            raise UnsupportedConstruct(
                "ambiguous join path", f"several shortest foreign-key paths between {sorted(sources)} and {sorted(targets)}"
            )
        path = []
        t = ends[0]
        while t not in sources:
            prev, e = back[t]
            path.append(e)
            t = prev
        return list(reversed(path))

    # -- filters ------------------------------------------------------------

    def filters(self, exprs: list[sq.Expr], anchor: str, having: bool = False) -> Optional[Filter]:
        return _and_all([self.filter(e, anchor, top=True) for e in exprs])

    def filter(self, e: sq.Expr, anchor: str, top: bool) -> Filter:
        if isinstance(e, sq.And):
            return FAnd(self.filter(e.left, anchor, top), self.filter(e.right, anchor, top))
        if isinstance(e, sq.Or):
            left, right = self.filter(e.left, anchor, False), self.filter(e.right, anchor, False)
            kinds = {_leaf_has_agg(x) for x in filter_leaves(FOr(left, right))}
            if len(kinds) > 1:
                raise UnsupportedConstruct("OR mixing row and group predicates")
            return FOr(left, right)
        if isinstance(e, sq.Compare):
            left, right, op = e.left, e.right, e.op
            if isinstance(left, sq.Value) and not isinstance(right, sq.Value):
                left, right, op = right, left, _flip(op)
            if op == "like":
                return like(self.a(left, anchor), Val(right.value))
            if isinstance(right, sq.Value):
                return cmp(op, self.a(left, anchor), Val(right.value))
            if isinstance(right, sq.ScalarQuery):
                sub = self.scalar_subquery(right.query)
                return self.subquery_leaf(cmp(op, self.a(left, anchor), sub), top)
            if isinstance(left, sq.ScalarQuery):
                raise UnsupportedConstruct("subquery on the left of a comparison")
            raise UnsupportedConstruct("comparison between two columns")
        if isinstance(e, sq.Between):
            if not (isinstance(e.low, sq.Value) and isinstance(e.high, sq.Value)):
                raise UnsupportedConstruct("BETWEEN with non-literal bounds")
            return between(self.a(e.expr, anchor), Val(e.low.value), Val(e.high.value))
        if isinstance(e, sq.InQuery):
            sub = self.sub_r(e.query)
            node = (not_in if e.negated else in_)(self.a(e.expr, anchor), sub)
            return self.subquery_leaf(node, top)
        raise UnsupportedConstruct("non-boolean expression used as a condition")

    def subquery_leaf(self, leaf: Filter, top: bool) -> Filter:
        if not top:
            raise UnsupportedConstruct("subquery under OR")
        if isinstance(leaf.a, Agg):
            raise UnsupportedConstruct("aggregate compared with a subquery")
        return leaf

    def scalar_subquery(self, q: sq.Query) -> R:
        r = self.sub_r(q)
        if len(r.select.items) != 1:
            raise UnsupportedConstruct("scalar subquery projecting several columns")
        single_row = (not r.group_by and isinstance(r.select.items[0], Agg)) or (
            isinstance(r.order, Superlative) and r.order.limit == 1
        )
        if not single_row:
            raise UnsupportedConstruct("scalar subquery that may return several rows")
        return r


def _flip(op: str) -> str:
    return {"<": ">", ">": "<", "<=": ">=", ">=": "<="}.get(op, op)


def _sql_conjuncts(e: Optional[sq.Expr]) -> list[sq.Expr]:
    if e is None:
        return []
    if isinstance(e, sq.And):
        return _sql_conjuncts(e.left) + _sql_conjuncts(e.right)
    return [e]


def _is_column_equality(e: sq.Expr) -> bool:
    return (
        isinstance(e, sq.Compare)
        and e.op == "="
        and isinstance(e.left, sq.ColumnRef)
        and isinstance(e.right, sq.ColumnRef)
        and e.left.alias != e.right.alias
    )


def _and_all(filters: list[Filter]) -> Optional[Filter]:
    out = None
    for f in filters:
        out = f if out is None else FAnd(out, f)
    return out


def _leaf_has_agg(leaf: Filter) -> bool:
    return isinstance(getattr(leaf, "a", None), Agg)


def _components(tables: list[str], edges: list[JoinEdge]) -> list[set[str]]:
    parent = {t: t for t in tables}

    def find(t: str) -> str:
        while parent[t] != t:
            parent[t] = parent[parent[t]]
            t = parent[t]
        return t

    for e in edges:
        if e.table in parent and e.ref_table in parent:
            parent[find(e.table)] = find(e.ref_table)
    groups: dict[str, set[str]] = {}
    for t in tables:
        groups.setdefault(find(t), set()).add(t)
    # order components by first appearance so inference is deterministic
    return sorted(groups.values(), key=lambda g: min(tables.index(t) for t in g))


def lower_to_semql(ast: sq.Query, schema: RelationalSchema) -> Z:
    """Lower a normalized SQL AST into SemQL, erasing joins and grouping."""
    return _Lowerer(schema).z(ast)
