"""Naive relational evaluator for the SPJA dialect.

Bag semantics with three-valued logic. GROUP BY is SQLite-permissive: a
non-grouped column takes its value from the first row of the group in
storage order. Ties under ORDER BY are broken by the projected row so that
LIMIT is deterministic.
"""

from __future__ import annotations

import re
from typing import Any, Callable, Optional

from ..errors import EvaluationTypeError
from ..schema import RelationalInstance
from ..sql import ast as sq
from .results import ResultSet, is_number, row_key, sort_key, value_key

Env = dict[str, tuple]  # alias -> row


def like_match(text: str, pattern: str) -> bool:
    """SQL LIKE, case-insensitive as in SQLite; ``%`` any run, ``_`` one char."""
    t, p = text.lower(), pattern.lower()
    # classic two-pointer wildcard match with backtracking on the last %
    i = j = 0
    star_j, star_i = -1, 0
    while i < len(t):
        if j < len(p) and (p[j] == "_" or (p[j] != "%" and p[j] == t[i])):
            i += 1
            j += 1
        elif j < len(p) and p[j] == "%":
            star_j, star_i = j, i
            j += 1
        elif star_j >= 0:
            star_i += 1
            i, j = star_i, star_j + 1
        else:
            return False
    while j < len(p) and p[j] == "%":
        j += 1
    return j == len(p)


def _and(a: Optional[bool], b: Optional[bool]) -> Optional[bool]:
    if a is False or b is False:
        return False
    if a is None or b is None:
        return None
    return True


def _or(a: Optional[bool], b: Optional[bool]) -> Optional[bool]:
    if a is True or b is True:
        return True
    if a is None or b is None:
        return None
    return False


def _compare(op: str, a: Any, b: Any) -> Optional[bool]:
    if a is None or b is None:
        return None
    if op == "like":
        if not isinstance(a, str) or not isinstance(b, str):
            raise EvaluationTypeError("LIKE over non-text values")
        return like_match(a, b)
    if is_number(a) and is_number(b):
        pass
    elif type(a) is not type(b):
        raise EvaluationTypeError(f"cannot compare {type(a).__name__} with {type(b).__name__}")
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise EvaluationTypeError(f"unknown comparison {op!r}")


def _arith(op: str, a: Any, b: Any) -> Any:
    if a is None or b is None:
        return None
    if not (is_number(a) and is_number(b)):
        raise EvaluationTypeError(f"arithmetic over {type(a).__name__} and {type(b).__name__}")
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if b == 0:
        return None  # SQLite yields NULL on division by zero
    if isinstance(a, int) and isinstance(b, int):
        q = abs(a) // abs(b)
        return q if (a >= 0) == (b >= 0) else -q
    return a / b


def aggregate(func: str, values: list[Any], star_count: int) -> Any:
    """Aggregate over the non-null ``values``; ``star_count`` feeds count(*)."""
    if func == "count":
        return star_count if values is None else len(values)
    if not values:
        return None
    if func in ("sum", "avg"):
        for v in values:
            if not is_number(v):
                raise EvaluationTypeError(f"{func}() over {type(v).__name__} values")
        total = sum(values)
        if func == "sum":
            return total
        return total / len(values)
    pick = min if func == "min" else max
    return pick(values, key=sort_key)


class _Evaluator:
    def __init__(self, instance: RelationalInstance):
        self.instance = instance
        self.schema = instance.schema
        self.cache: dict[int, tuple[tuple[str, ...], list[tuple], bool]] = {}

    # -- queries ------------------------------------------------------------

    def query(self, q: sq.Query) -> tuple[tuple[str, ...], list[tuple], bool]:
        key = id(q)
        if key in self.cache:
            return self.cache[key]
        out = self.set_op(q) if isinstance(q, sq.SetOp) else self.block(q)
        self.cache[key] = out
        return out

    def set_op(self, q: sq.SetOp) -> tuple[tuple[str, ...], list[tuple], bool]:
        cols, left, _ = self.query(q.left)
        _, right, _ = self.query(q.right)
        rkeys = {tuple(value_key(v) for v in r) for r in right}
        seen: set = set()
        out = []
        source = left + right if q.kind == "union" else left
        for row in source:
            k = tuple(value_key(v) for v in row)
            if k in seen:
                continue
            if q.kind == "intersect" and k not in rkeys:
                continue
            if q.kind == "except" and k in rkeys:
                continue
            seen.add(k)
            out.append(row)
        return cols, out, False

    def block(self, b: sq.Block) -> tuple[tuple[str, ...], list[tuple], bool]:
        envs = self.from_clause(b)
        if b.where is not None:
            envs = [e for e in envs if self.pred(b.where, e) is True]
        columns = tuple(i.alias or sq.expr_to_sql(i.expr) for i in b.select)
        grouped = bool(b.group_by) or any(
            sq.contains_aggregate(x)
            for x in [i.expr for i in b.select] + [k.expr for k in b.order_by] + ([b.having] if b.having else [])
        )
        # each unit is (representative env, rows of the unit)
        if grouped:
            groups: dict[tuple, list[Env]] = {}
            for e in envs:
                k = tuple(value_key(self.value(g, e, None)) for g in b.group_by)
                groups.setdefault(k, []).append(e)
            if not b.group_by and not groups:
                groups[()] = []
            units = [(rows[0] if rows else None, rows) for rows in groups.values()]
            if b.having is not None:
                units = [u for u in units if self.pred(b.having, u[0], u[1]) is True]
        else:
            units = [(e, None) for e in envs]

        items = []
        for env, rows in units:
            row = tuple(self.value(i.expr, env, rows) for i in b.select)
            keys = tuple(self.value(k.expr, env, rows) for k in b.order_by)
            items.append((keys, row))
        if b.order_by:
            items.sort(key=lambda it: row_key(it[1]))
            for n in reversed(range(len(b.order_by))):
                items.sort(key=lambda it: sort_key(it[0][n]), reverse=b.order_by[n].desc)
        rows_out = [row for _, row in items]
        if b.distinct:
            seen: set = set()
            unique = []
            for row in rows_out:
                k = tuple(value_key(v) for v in row)
                if k not in seen:
                    seen.add(k)
                    unique.append(row)
            rows_out = unique
        if b.limit is not None:
            rows_out = rows_out[: b.limit]
        return columns, rows_out, bool(b.order_by)

    # -- FROM / JOIN --------------------------------------------------------

    def from_clause(self, b: sq.Block) -> list[Env]:
        tables = [(t, None) for t in b.from_] + [(j.table, j.on) for j in b.joins]
        # column equalities from WHERE act as join keys too (inner joins only)
        where_eqs = [c for c in _conjuncts(b.where) if _col_eq(c)]
        envs: list[Env] = [{}]
        bound: set[str] = set()
        for tref, on in tables:
            rows = self.instance.rows(tref.name)
            on_parts = _conjuncts(on)
            key_pairs = []  # (expr over bound aliases, column index in new table)
            for c in on_parts + where_eqs:
                if not _col_eq(c):
                    continue
                for new, old in ((c.left, c.right), (c.right, c.left)):
                    if new.alias == tref.alias and old.alias in bound:
                        key_pairs.append((old, self.schema.table(tref.name).index(new.column)))
                        break
            if key_pairs:
                index: dict[tuple, list[tuple]] = {}
                for r in rows:
                    vals = [r[i] for _, i in key_pairs]
                    if any(v is None for v in vals):
                        continue
                    index.setdefault(tuple(value_key(v) for v in vals), []).append(r)
                nxt = []
                for e in envs:
                    k = tuple(value_key(self.value(old, e, None)) for old, _ in key_pairs)
                    for r in index.get(k, ()):
                        nxt.append({**e, tref.alias: r})
            else:
                nxt = [{**e, tref.alias: r} for e in envs for r in rows]
            bound.add(tref.alias)
            if on is not None:
                nxt = [e for e in nxt if self.pred(on, e) is True]
            envs = nxt
        return envs

    # -- expressions --------------------------------------------------------

    def value(self, x: sq.Expr, env: Optional[Env], rows: Optional[list[Env]]) -> Any:
        if isinstance(x, sq.Value):
            return x.value
        if isinstance(x, sq.ColumnRef):
            if env is None:
                return None  # empty group: non-aggregated columns are NULL
            row = env[x.alias]
            return row[self.schema.table(x.table).index(x.column)]
        if isinstance(x, sq.Aggregate):
            if rows is None:
                raise EvaluationTypeError("aggregate outside a grouped context")
            if isinstance(x.arg, sq.ColumnRef) and x.arg.is_star:
                return aggregate("count", None, len(rows))
            vals = [v for e in rows if (v := self.value(x.arg, e, None)) is not None]
            if x.distinct:
                uniq: dict = {}
                for v in vals:
                    uniq.setdefault(value_key(v), v)
                vals = list(uniq.values())
            return aggregate(x.func, vals, len(rows))
        if isinstance(x, sq.Arith):
            return _arith(x.op, self.value(x.left, env, rows), self.value(x.right, env, rows))
        if isinstance(x, sq.ScalarQuery):
            _, out, _ = self.query(x.query)
            return out[0][0] if out else None
        p = self.pred(x, env, rows)
        return p

    def pred(self, x: sq.Expr, env: Optional[Env], rows: Optional[list[Env]] = None) -> Optional[bool]:
        if isinstance(x, sq.And):
            left = self.pred(x.left, env, rows)
            if left is False:
                return False
            return _and(left, self.pred(x.right, env, rows))
        if isinstance(x, sq.Or):
            left = self.pred(x.left, env, rows)
            if left is True:
                return True
            return _or(left, self.pred(x.right, env, rows))
        if isinstance(x, sq.Compare):
            return _compare(x.op, self.value(x.left, env, rows), self.value(x.right, env, rows))
        if isinstance(x, sq.Between):
            v = self.value(x.expr, env, rows)
            return _and(
                _compare(">=", v, self.value(x.low, env, rows)), _compare("<=", v, self.value(x.high, env, rows))
            )
        if isinstance(x, sq.InQuery):
            v = self.value(x.expr, env, rows)
            _, out, _ = self.query(x.query)
            result: Optional[bool] = False
            if v is None:
                result = None if out else False
            else:
                for r in out:
                    c = _compare("=", v, r[0])
                    if c is True:
                        result = True
                        break
                    if c is None:
                        result = None
            if x.negated:
                return None if result is None else not result
            return result
        v = self.value(x, env, rows)
        if v is None:
            return None
        if isinstance(v, bool):
            return v
        if is_number(v):
            return v != 0
        raise EvaluationTypeError(f"{type(v).__name__} used as a condition")


def _conjuncts(e: Optional[sq.Expr]) -> list[sq.Expr]:
    if e is None:
        return []
    if isinstance(e, sq.And):
        return _conjuncts(e.left) + _conjuncts(e.right)
    return [e]


def _col_eq(e: sq.Expr) -> bool:
    return (
        isinstance(e, sq.Compare)
        and e.op == "="
        and isinstance(e.left, sq.ColumnRef)
        and isinstance(e.right, sq.ColumnRef)
        and not e.left.is_star
        and not e.right.is_star
        and e.left.alias != e.right.alias
    )


def eval_sql(ast: sq.Query, instance: RelationalInstance) -> ResultSet:
    """Evaluate a resolved SQL AST over ``instance``."""
    columns, rows, ordered = _Evaluator(instance).query(ast)
    return ResultSet(tuple(columns), tuple(rows), ordered)
