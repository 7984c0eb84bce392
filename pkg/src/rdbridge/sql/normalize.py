"""Canonicalisation of resolved SQL ASTs.

Aliases become ``t1..tn`` per block in FROM/JOIN order, select-list aliases
are dropped, and literals are coerced to the datatype of the column they are
compared against.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

from ..errors import ArityMismatch, TypeMismatch
from ..schema import NUMERIC, RelationalSchema
from .ast import (
    Aggregate,
    And,
    Arith,
    Between,
    Block,
    ColumnRef,
    Compare,
    Expr,
    InQuery,
    Join,
    Or,
    OrderKey,
    Query,
    ScalarQuery,
    SelectItem,
    SetOp,
    TableRef,
    Value,
)


def expr_type(expr: Expr, schema: RelationalSchema) -> Optional[str]:
    """Static datatype of a value expression, or None when unknown/boolean-valued."""
    if isinstance(expr, ColumnRef):
        if expr.is_star or expr.table is None:
            return None
        return schema.table(expr.table).column(expr.column).datatype
    if isinstance(expr, Value):
        v = expr.value
        if isinstance(v, bool):
            return "boolean"
        if isinstance(v, int):
            return "integer"
        if isinstance(v, float):
            return "real"
        return "text"
    if isinstance(expr, Aggregate):
        if expr.func == "count":
            return "integer"
        if expr.func == "avg":
            return "real"
        return expr_type(expr.arg, schema)
    if isinstance(expr, Arith):
        a, b = expr_type(expr.left, schema), expr_type(expr.right, schema)
        return "integer" if a == b == "integer" else "real"
    if isinstance(expr, ScalarQuery):
        return query_types(expr.query, schema)[0]
    return None


def query_types(query: Query, schema: RelationalSchema) -> list[Optional[str]]:
    if isinstance(query, SetOp):
        return query_types(query.left, schema)
    return [expr_type(i.expr, schema) for i in query.select]


def _compatible(a: Optional[str], b: Optional[str]) -> bool:
    if a is None or b is None or a == b:
        return True
    return a in NUMERIC and b in NUMERIC


def coerce_literal(value: Value, target: Optional[str], context: str) -> Value:
    v = value.value
    if target is None:
        return value
    if target in NUMERIC:
        if isinstance(v, bool):
            raise TypeMismatch(f"{context}: boolean literal compared to {target} column")
        if isinstance(v, str):
            try:
                v = int(v) if target == "integer" and v.strip().lstrip("-").isdigit() else float(v)
            except ValueError:
                raise TypeMismatch(f"{context}: text literal {value.value!r} compared to {target} column") from None
        if target == "real" and isinstance(v, int):
            v = float(v)
        return Value(v)
    if target == "text":
        if not isinstance(v, str):
            raise TypeMismatch(f"{context}: {type(v).__name__} literal {v!r} compared to text column")
        return value
    # boolean
    if isinstance(v, bool):
        return value
    if isinstance(v, int) and v in (0, 1):
        return Value(bool(v))
    if isinstance(v, str) and v.strip().lower() in ("true", "false", "t", "f"):
        return Value(v.strip().lower() in ("true", "t"))
    raise TypeMismatch(f"{context}: literal {v!r} compared to boolean column")


class _Normalizer:
    def __init__(self, schema: RelationalSchema):
        self.schema = schema

    def query(self, q: Query) -> Query:
        if isinstance(q, SetOp):
            left, right = self.query(q.left), self.query(q.right)
            lt, rt = query_types(left, self.schema), query_types(right, self.schema)
            if len(lt) != len(rt):
                raise ArityMismatch(f"{q.kind.upper()} branches project {len(lt)} and {len(rt)} columns")
            for n, (a, b) in enumerate(zip(lt, rt), start=1):
                if not _compatible(a, b):
                    raise TypeMismatch(f"{q.kind.upper()} column {n}: {a} vs {b}")
            return SetOp(q.kind, left, right)
        return self.block(q)

    def block(self, b: Block) -> Block:
        rename = {t.alias: f"t{n}" for n, t in enumerate(b.tables, start=1)}

        def ren(expr: Expr) -> Expr:
            if isinstance(expr, ColumnRef):
                return expr if expr.alias is None else replace(expr, alias=rename.get(expr.alias, expr.alias))
            if isinstance(expr, Value):
                return expr
            if isinstance(expr, Aggregate):
                return replace(expr, arg=ren(expr.arg))
            if isinstance(expr, (Arith, And, Or)):
                return replace(expr, left=ren(expr.left), right=ren(expr.right))
            if isinstance(expr, Compare):
                return self.compare(replace(expr, left=ren(expr.left), right=ren(expr.right)))
            if isinstance(expr, Between):
                return self.between(Between(ren(expr.expr), ren(expr.low), ren(expr.high)))
            if isinstance(expr, InQuery):
                return self.in_query(InQuery(ren(expr.expr), self.query(expr.query), expr.negated))
            if isinstance(expr, ScalarQuery):
                return ScalarQuery(self.query(expr.query))
            raise TypeError(expr)

        select = tuple(SelectItem(self.value_expr(ren(i.expr))) for i in b.select)
        return Block(
            select=select,
            from_=tuple(TableRef(t.name, rename[t.alias]) for t in b.from_),
            joins=tuple(Join(TableRef(j.table.name, rename[j.table.alias]), None if j.on is None else ren(j.on)) for j in b.joins),
            where=None if b.where is None else ren(b.where),
            group_by=tuple(ren(g) for g in b.group_by),
            having=None if b.having is None else ren(b.having),
            order_by=tuple(OrderKey(self.value_expr(ren(k.expr)), k.desc) for k in b.order_by),
            limit=b.limit,
            distinct=b.distinct,
        )

    def value_expr(self, expr: Expr) -> Expr:
        if isinstance(expr, Aggregate) and expr.func in ("sum", "avg"):
            t = expr_type(expr.arg, self.schema)
            if t is not None and t not in NUMERIC:
                raise TypeMismatch(f"{expr.func}() over {t} column")
        if isinstance(expr, Arith):
            for side in (expr.left, expr.right):
                t = expr_type(side, self.schema)
                if t is not None and t not in NUMERIC:
                    raise TypeMismatch(f"arithmetic over {t} operand")
        return expr

    def compare(self, c: Compare) -> Compare:
        left, right = self.value_expr(c.left), self.value_expr(c.right)
        if c.op == "like":
            if expr_type(left, self.schema) not in ("text", None):
                raise TypeMismatch("LIKE applied to a non-text column")
            if not (isinstance(right, Value) and isinstance(right.value, str)):
                raise TypeMismatch("LIKE pattern must be a text literal")
            return Compare(c.op, left, right)
        if isinstance(right, Value) and not isinstance(left, Value):
            right = coerce_literal(right, expr_type(left, self.schema), "comparison")
        elif isinstance(left, Value) and not isinstance(right, Value):
            left = coerce_literal(left, expr_type(right, self.schema), "comparison")
        elif not _compatible(expr_type(left, self.schema), expr_type(right, self.schema)):
            raise TypeMismatch(
                f"comparison between {expr_type(left, self.schema)} and {expr_type(right, self.schema)}"
            )
        return Compare(c.op, left, right)

    def between(self, b: Between) -> Between:
        target = expr_type(b.expr, self.schema)
        low, high = b.low, b.high
        if isinstance(low, Value):
            low = coerce_literal(low, target, "BETWEEN")
        if isinstance(high, Value):
            high = coerce_literal(high, target, "BETWEEN")
        return Between(self.value_expr(b.expr), low, high)

    def in_query(self, q: InQuery) -> InQuery:
        types = query_types(q.query, self.schema)
        if len(types) != 1:
            raise ArityMismatch(f"IN subquery projects {len(types)} columns, expected 1")
        if not _compatible(expr_type(q.expr, self.schema), types[0]):
            raise TypeMismatch(f"IN compares {expr_type(q.expr, self.schema)} with {types[0]}")
        return q


def normalize_sql(query: Query, schema: RelationalSchema) -> Query:
    """Return the canonical form of a resolved query; idempotent."""
    return _Normalizer(schema).query(query)
