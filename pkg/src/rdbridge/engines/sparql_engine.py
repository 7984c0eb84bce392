"""In-memory SPARQL evaluator for the subset the emitter produces.

Works on the structured ``SparqlQuery`` rather than text. Literals are held
as Python values; terms are compared by (type, value) so that, as in SPARQL,
``1`` and ``1.0`` are distinct terms while ``=`` still treats them as equal.
"""

from __future__ import annotations

import math
import re
import weakref
from typing import Any, Iterable, Optional

from ..errors import UnsupportedSparql
from ..mapping import IRI, Graph, Literal
from ..sparql import (
    AggExpr,
    Bind,
    BinOp,
    Call,
    Const,
    Element,
    FilterEl,
    IfExpr,
    InExpr,
    NotExists,
    Regex,
    SparqlQuery,
    SubSelect,
    TriplePattern,
    UnionEl,
    Var,
)
from .results import ResultSet, is_number, row_key, sort_key

Solution = dict[str, Any]


class _Error(Exception):
    """A SPARQL expression error (unbound variable, type error, ...)."""


def term_key(v: Any) -> tuple:
    if isinstance(v, bool):
        return ("b", v)
    if isinstance(v, int):
        return ("i", v)
    if isinstance(v, float):
        return ("d", v)
    if isinstance(v, str):
        return ("s", v)
    if isinstance(v, IRI):
        return ("u", v.value)
    raise UnsupportedSparql(f"unexpected term {v!r}")


class GraphIndex:
    """Per-predicate subject/object indexes over a materialized graph."""

    def __init__(self, graph: Graph):
        self.by_p: dict[IRI, list[tuple[Any, Any]]] = {}
        self.by_ps: dict[tuple[IRI, tuple], list[Any]] = {}
        self.by_po: dict[tuple[IRI, tuple], list[Any]] = {}
        for s, p, o in sorted(graph.triples, key=_triple_order):
            val = o.to_python() if isinstance(o, Literal) else o
            self.by_p.setdefault(p, []).append((s, val))
            self.by_ps.setdefault((p, term_key(s)), []).append(val)
            self.by_po.setdefault((p, term_key(val)), []).append(s)


def _triple_order(t: tuple) -> tuple:
    s, p, o = t
    return (s.value, p.value, o.value if isinstance(o, IRI) else o.lexical)


_INDEXES: "weakref.WeakKeyDictionary[Graph, GraphIndex]" = weakref.WeakKeyDictionary()


def index_for(graph: Graph) -> GraphIndex:
    idx = _INDEXES.get(graph)
    if idx is None:
        idx = GraphIndex(graph)
        _INDEXES[graph] = idx
    return idx


# ---------------------------------------------------------------------------
# Expression evaluation
# ---------------------------------------------------------------------------


def ebv(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    if is_number(v):
        return v != 0 and not (isinstance(v, float) and math.isnan(v))
    if isinstance(v, str):
        return v != ""
    raise _Error("no effective boolean value")


def _cmp(op: str, a: Any, b: Any) -> bool:
    if is_number(a) and is_number(b):
        pass
    elif isinstance(a, IRI) and isinstance(b, IRI):
        if op not in ("=", "!="):
            raise _Error("IRIs are not ordered")
        return (a == b) == (op == "=")
    elif type(a) is not type(b):
        raise _Error(f"cannot compare {type(a).__name__} with {type(b).__name__}")
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
    raise UnsupportedSparql(f"operator {op}")


def _numeric(op: str, a: Any, b: Any) -> Any:
    if not (is_number(a) and is_number(b)):
        raise _Error("arithmetic over non-numeric terms")
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if b == 0:
        raise _Error("division by zero")
    return a / b  # integer / integer is a decimal in SPARQL


def _aggregate(func: str, values: list[Any], n: int) -> Any:
    if func == "count":
        return len(values)
    if func in ("sum", "avg"):
        if any(not is_number(v) for v in values):
            raise _Error(f"{func} over non-numeric terms")
        total = sum(values) if values else 0
        if func == "sum":
            return total
        return total / len(values) if values else 0
    if not values:
        raise _Error(f"{func} of an empty group")
    pick = min if func == "min" else max
    return pick(values, key=sort_key)


class _Engine:
    def __init__(self, graph: Graph):
        self.index = index_for(graph)
        self.sub_cache: dict[int, list[Solution]] = {}

    def expr(self, e: Any, sol: Solution, group: Optional[list[Solution]] = None) -> Any:
        if isinstance(e, Var):
            if e.name not in sol:
                raise _Error(f"?{e.name} unbound")
            return sol[e.name]
        if isinstance(e, Const):
            return e.value
        if isinstance(e, IRI):
            return e
        if isinstance(e, BinOp):
            if e.op == "&&":
                return self._logic(e, sol, group, short=False)
            if e.op == "||":
                return self._logic(e, sol, group, short=True)
            a, b = self.expr(e.left, sol, group), self.expr(e.right, sol, group)
            if e.op in ("+", "-", "*", "/"):
                return _numeric(e.op, a, b)
            return _cmp(e.op, a, b)
        if isinstance(e, AggExpr):
            if group is None:
                raise UnsupportedSparql("aggregate outside a grouped context")
            if e.arg is None:
                return len(group)
            vals = []
            for s in group:
                try:
                    vals.append(self.expr(e.arg, s))
                except _Error:
                    pass
            return _aggregate(e.func, vals, len(group))
        if isinstance(e, IfExpr):
            return self.expr(e.then if ebv(self.expr(e.cond, sol, group)) else e.other, sol, group)
        if isinstance(e, InExpr):
            x = self.expr(e.expr, sol, group)
            err = False
            for o in e.options:
                try:
                    if _cmp("=", x, self.expr(o, sol, group)):
                        return not e.negated
                except _Error:
                    err = True
            if err:
                raise _Error("IN comparison error")
            return e.negated
        if isinstance(e, Regex):
            x = self.expr(e.expr, sol, group)
            if not isinstance(x, str):
                raise _Error("REGEX over a non-string")
            flags = re.IGNORECASE if "i" in e.flags else 0
            return re.search(e.pattern, x, flags) is not None
        if isinstance(e, Call):
            if e.name in ("CEIL", "FLOOR") and len(e.args) == 1:
                x = self.expr(e.args[0], sol, group)
                if not is_number(x):
                    raise _Error(f"{e.name} over a non-number")
                if isinstance(x, int):
                    return x
                return float(math.ceil(x) if e.name == "CEIL" else math.floor(x))
            raise UnsupportedSparql(f"function {e.name}")
        if isinstance(e, NotExists):
            return not self.group(e.elements, [dict(sol)])
        raise UnsupportedSparql(f"expression {type(e).__name__}")

    def _logic(self, e: BinOp, sol, group, short: bool) -> bool:
        # || is true if either side is true, && false if either is false; errors otherwise propagate
        results = []
        for side in (e.left, e.right):
            try:
                v = ebv(self.expr(side, sol, group))
            except _Error:
                results.append(None)
                continue
            if v is short:
                return short
            results.append(v)
        if None in results:
            raise _Error("logical operand error")
        return not short

    def test(self, e: Any, sol: Solution, group: Optional[list[Solution]] = None) -> bool:
        try:
            return ebv(self.expr(e, sol, group))
        except _Error:
            return False

    # -- graph patterns -----------------------------------------------------

    def group(self, elements: Iterable[Element], sols: list[Solution]) -> list[Solution]:
        elements = list(elements)
        triples = [e for e in elements if isinstance(e, TriplePattern)]
        sols = self.bgp(triples, sols)
        for el in elements:
            if isinstance(el, SubSelect):
                sols = join(sols, self.subselect(el.query))
            elif isinstance(el, UnionEl):
                branch = self.group(el.left, [{}]) + self.group(el.right, [{}])
                sols = join(sols, branch)
            elif not isinstance(el, (TriplePattern, Bind, FilterEl)):
                raise UnsupportedSparql(f"group element {type(el).__name__}")
        for el in elements:
            if isinstance(el, Bind):
                out = []
                for s in sols:
                    if el.var.name in s:
                        raise UnsupportedSparql(f"BIND to already bound ?{el.var.name}")
                    try:
                        out.append({**s, el.var.name: self.expr(el.expr, s)})
                    except _Error:
                        out.append(s)
                sols = out
        for el in elements:
            if isinstance(el, FilterEl):
                sols = [s for s in sols if self.test(el.expr, s)]
        return sols

    def bgp(self, triples: list[TriplePattern], sols: list[Solution]) -> list[Solution]:
        remaining = list(triples)
        while remaining and sols:
            bound = set(sols[0])
            # most-bound pattern first keeps the nested loops small
            best = max(
                range(len(remaining)),
                key=lambda i: (_bound_score(remaining[i], bound), -i),
            )
            tp = remaining.pop(best)
            sols = [x for s in sols for x in self.match(tp, s)]
        return sols if not remaining else []

    def match(self, tp: TriplePattern, sol: Solution) -> list[Solution]:
        s = _resolve(tp.s, sol)
        o = _resolve(tp.o, sol)
        p = tp.p
        out = []
        if s is not None and o is not None:
            if any(term_key(x) == term_key(o) for x in self.index.by_ps.get((p, term_key(s)), ())):
                out.append(sol)
        elif s is not None:
            for x in self.index.by_ps.get((p, term_key(s)), ()):
                out.append({**sol, tp.o.name: x})
        elif o is not None:
            for x in self.index.by_po.get((p, term_key(o)), ()):
                out.append({**sol, tp.s.name: x})
        else:
            same = isinstance(tp.s, Var) and isinstance(tp.o, Var) and tp.s.name == tp.o.name
            for sx, ox in self.index.by_p.get(p, ()):
                if same:
                    if term_key(sx) == term_key(ox):
                        out.append({**sol, tp.s.name: sx})
                else:
                    out.append({**sol, tp.s.name: sx, tp.o.name: ox})
        return out

    def subselect(self, q: SparqlQuery) -> list[Solution]:
        key = id(q)
        if key not in self.sub_cache:
            cols, rows = self.query(q)
            self.sub_cache[key] = [{c: v for c, v in zip(cols, r) if v is not None} for r in rows]
        return self.sub_cache[key]

    # -- solution modifiers -------------------------------------------------

    def query(self, q: SparqlQuery) -> tuple[list[str], list[tuple]]:
        sols = self.group(q.where, [{}])
        grouped = bool(q.group_by) or q.has_aggregates
        gb = {v.name for v in q.group_by}
        units: list[tuple[Solution, Optional[list[Solution]]]]
        if grouped:
            groups: dict[tuple, list[Solution]] = {}
            for s in sols:
                k = tuple(term_key(s[v.name]) if v.name in s else ("unbound",) for v in q.group_by)
                groups.setdefault(k, []).append(s)
            if not q.group_by and not groups:
                groups[()] = []
            units = []
            for members in groups.values():
                rep = {v.name: members[0][v.name] for v in q.group_by if v.name in members[0]} if members else {}
                if all(self.test(h, rep, members) for h in q.having):
                    units.append((rep, members))
        else:
            units = [(s, None) for s in sols]

        items = []
        for sol, members in units:
            ext = dict(sol)
            row = []
            for p in q.projections:
                if p.expr is None:
                    if grouped and p.var.name not in gb:
                        raise UnsupportedSparql(f"?{p.var.name} projected but not grouped")
                    val = sol.get(p.var.name)
                else:
                    try:
                        val = self.expr(p.expr, sol, members)
                    except _Error:
                        val = None
                    if val is not None:
                        ext[p.var.name] = val
                row.append(val)
            keys = []
            for o in q.order_by:
                try:
                    keys.append(self.expr(o.expr, ext, members))
                except _Error:
                    keys.append(None)
            items.append((keys, tuple(row)))
        if q.order_by:
            items.sort(key=lambda it: row_key(it[1]))
            for n in reversed(range(len(q.order_by))):
                items.sort(key=lambda it: sort_key(it[0][n]), reverse=q.order_by[n].desc)
        rows = [row for _, row in items]
        if q.distinct:
            seen: set = set()
            uniq = []
            for row in rows:
                k = tuple(("unbound",) if v is None else term_key(v) for v in row)
                if k not in seen:
                    seen.add(k)
                    uniq.append(row)
            rows = uniq
        if q.limit is not None:
            rows = rows[: q.limit]
        return [p.var.name for p in q.projections], rows


def _resolve(t: Any, sol: Solution) -> Any:
    if isinstance(t, Var):
        return sol.get(t.name)
    if isinstance(t, Const):
        return t.value
    return t


def _bound_score(tp: TriplePattern, bound: set[str]) -> int:
    score = 0
    for t in (tp.s, tp.o):
        if not isinstance(t, Var) or t.name in bound:
            score += 1
    return score


def join(left: list[Solution], right: list[Solution]) -> list[Solution]:
    """Join of compatible mappings, hashed on variables every solution binds."""
    if not left or not right:
        return []
    shared = set.intersection(*(set(s) for s in left)) & set.intersection(*(set(s) for s in right))
    keys = sorted(shared)
    index: dict[tuple, list[Solution]] = {}
    for r in right:
        index.setdefault(tuple(term_key(r[k]) for k in keys), []).append(r)
    out = []
    for l in left:
        for r in index.get(tuple(term_key(l[k]) for k in keys), ()):
            if all(term_key(l[v]) == term_key(r[v]) for v in r.keys() & l.keys()):
                out.append({**l, **r})
    return out


def eval_sparql(q: SparqlQuery, graph: Graph) -> ResultSet:
    """Evaluate an emitted query over a materialized graph."""
    cols, rows = _Engine(graph).query(q)
    out_rows = tuple(tuple(v.value if isinstance(v, IRI) else v for v in r) for r in rows)
    return ResultSet(tuple(cols), out_rows, bool(q.order_by))
