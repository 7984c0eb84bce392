"""Typed AST for the SPJA SQL dialect, plus a debug serializer.

``to_sql`` emits fully qualified, explicitly parenthesised text so that
``parse_sql(to_sql(ast), schema) == ast`` for resolved trees.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterator, Optional, Union

AGGREGATES = ("min", "max", "count", "sum", "avg")
COMPARISONS = ("=", "!=", "<", "<=", ">", ">=", "like")
ARITHMETIC = ("+", "-", "*", "/")


@dataclass(frozen=True)
class ColumnRef:
    column: str  # "*" for count(*) / SELECT *
    alias: Optional[str] = None  # qualifier; after resolution the FROM alias
    table: Optional[str] = None  # base table, filled in by resolution

    @property
    def is_star(self) -> bool:
        return self.column == "*"


@dataclass(frozen=True)
class Value:
    value: Any  # int | float | str | bool


@dataclass(frozen=True)
class Aggregate:
    func: str
    arg: "Expr"
    distinct: bool = False


@dataclass(frozen=True)
class Arith:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Compare:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Between:
    expr: "Expr"
    low: "Expr"
    high: "Expr"


@dataclass(frozen=True)
class InQuery:
    expr: "Expr"
    query: "Query"
    negated: bool = False


@dataclass(frozen=True)
class ScalarQuery:
    query: "Query"


@dataclass(frozen=True)
class And:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Or:
    left: "Expr"
    right: "Expr"


Expr = Union[ColumnRef, Value, Aggregate, Arith, Compare, Between, InQuery, ScalarQuery, And, Or]


@dataclass(frozen=True)
class SelectItem:
    expr: Expr
    alias: Optional[str] = None


@dataclass(frozen=True)
class TableRef:
    name: str
    alias: str


@dataclass(frozen=True)
class Join:
    table: TableRef
    on: Optional[Expr] = None


@dataclass(frozen=True)
class OrderKey:
    expr: Expr
    desc: bool = False


@dataclass(frozen=True)
class Block:
    select: tuple[SelectItem, ...]
    from_: tuple[TableRef, ...]
    joins: tuple[Join, ...] = ()
    where: Optional[Expr] = None
    group_by: tuple[ColumnRef, ...] = ()
    having: Optional[Expr] = None
    order_by: tuple[OrderKey, ...] = ()
    limit: Optional[int] = None
    distinct: bool = False

    @property
    def tables(self) -> tuple[TableRef, ...]:
        return self.from_ + tuple(j.table for j in self.joins)


@dataclass(frozen=True)
class SetOp:
    kind: str  # union | intersect | except
    left: "Query"
    right: "Query"


Query = Union[Block, SetOp]


def children(expr: Expr) -> Iterator[Expr]:
    """Direct sub-expressions, not descending into subqueries."""
    if isinstance(expr, Aggregate):
        yield expr.arg
    elif isinstance(expr, (Arith, Compare, And, Or)):
        yield expr.left
        yield expr.right
    elif isinstance(expr, Between):
        yield from (expr.expr, expr.low, expr.high)
    elif isinstance(expr, InQuery):
        yield expr.expr


def walk(expr: Expr) -> Iterator[Expr]:
    yield expr
    for child in children(expr):
        yield from walk(child)


def contains_aggregate(expr: Expr) -> bool:
    return any(isinstance(e, Aggregate) for e in walk(expr))


# ---------------------------------------------------------------------------
# Debug serializer
# ---------------------------------------------------------------------------


def _quote(text: str) -> str:
    return "'" + text.replace("'", "''") + "'"


def expr_to_sql(expr: Expr) -> str:
    if isinstance(expr, ColumnRef):
        return expr.column if expr.alias is None else f"{expr.alias}.{expr.column}"
    if isinstance(expr, Value):
        v = expr.value
        if isinstance(v, bool):
            return "TRUE" if v else "FALSE"
        if isinstance(v, str):
            return _quote(v)
        return repr(v)
    if isinstance(expr, Aggregate):
        return f"{expr.func}({'DISTINCT ' if expr.distinct else ''}{expr_to_sql(expr.arg)})"
    if isinstance(expr, Arith):
        return f"({expr_to_sql(expr.left)} {expr.op} {expr_to_sql(expr.right)})"
    if isinstance(expr, Compare):
        op = "LIKE" if expr.op == "like" else expr.op
        return f"{expr_to_sql(expr.left)} {op} {expr_to_sql(expr.right)}"
    if isinstance(expr, Between):
        return f"{expr_to_sql(expr.expr)} BETWEEN {expr_to_sql(expr.low)} AND {expr_to_sql(expr.high)}"
    if isinstance(expr, InQuery):
        neg = "NOT IN" if expr.negated else "IN"
        return f"{expr_to_sql(expr.expr)} {neg} ({to_sql(expr.query)})"
    if isinstance(expr, ScalarQuery):
        return f"({to_sql(expr.query)})"
    if isinstance(expr, And):
        return f"({expr_to_sql(expr.left)} AND {expr_to_sql(expr.right)})"
    if isinstance(expr, Or):
        return f"({expr_to_sql(expr.left)} OR {expr_to_sql(expr.right)})"
    raise TypeError(f"not an expression: {expr!r}")


def to_sql(query: Query) -> str:
    if isinstance(query, SetOp):
        return f"{to_sql(query.left)} {query.kind.upper()} {to_sql(query.right)}"
    parts = ["SELECT"]
    if query.distinct:
        parts.append("DISTINCT")
    parts.append(
        ", ".join(expr_to_sql(i.expr) + (f" AS {i.alias}" if i.alias else "") for i in query.select)
    )
    parts.append("FROM " + ", ".join(f"{t.name} AS {t.alias}" for t in query.from_))
    for j in query.joins:
        parts.append(f"JOIN {j.table.name} AS {j.table.alias}")
        if j.on is not None:
            parts.append("ON " + expr_to_sql(j.on))
    if query.where is not None:
        parts.append("WHERE " + expr_to_sql(query.where))
    if query.group_by:
        parts.append("GROUP BY " + ", ".join(expr_to_sql(c) for c in query.group_by))
    if query.having is not None:
        parts.append("HAVING " + expr_to_sql(query.having))
    if query.order_by:
        parts.append(
            "ORDER BY " + ", ".join(expr_to_sql(k.expr) + (" DESC" if k.desc else " ASC") for k in query.order_by)
        )
    if query.limit is not None:
        parts.append(f"LIMIT {query.limit}")
    return " ".join(parts)
