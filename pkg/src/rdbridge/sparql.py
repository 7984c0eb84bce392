"""Deterministic SemQL -> SPARQL 1.1 emission and canonical serialization.

Naming: each table occurrence gets a query-wide number ``n``; its entity
variable is ``?tn`` and the value of column ``c`` is ``?tn_c``. Projected
aggregates are ``?agg``, ``?agg2``, ...; an aggregate projected by a nested
subquery is ``?agg_tn`` where ``tn`` is that subquery's first table.
Arithmetic results are bound to ``?expr1``, ``?expr2``, ...
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterator, Optional, Union

from . import semql as s
from .errors import ArityMismatch, EmissionBug, InvariantViolation, UnknownProperty
from .mapping import IRI, RDF_TYPE, Ontology, decimal_lexical

# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    value: Any  # int | float | str | bool


@dataclass(frozen=True)
class BinOp:
    op: str  # = != < <= > >= + - * / && ||
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class AggExpr:
    func: str
    arg: Optional["Expr"] = None  # None is count(*)


@dataclass(frozen=True)
class IfExpr:
    cond: "Expr"
    then: "Expr"
    other: "Expr"


@dataclass(frozen=True)
class InExpr:
    expr: "Expr"
    options: tuple["Expr", ...]
    negated: bool = False


@dataclass(frozen=True)
class NotExists:
    elements: tuple["Element", ...]


@dataclass(frozen=True)
class Regex:
    expr: "Expr"
    pattern: str
    flags: str = ""


@dataclass(frozen=True)
class Call:
    name: str  # CEIL | FLOOR
    args: tuple["Expr", ...]


Expr = Union[Var, Const, IRI, BinOp, AggExpr, IfExpr, InExpr, NotExists, Regex, Call]


# ---------------------------------------------------------------------------
# Group elements and the query
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TriplePattern:
    s: Union[Var, IRI]
    p: IRI
    o: Union[Var, IRI, Const]


@dataclass(frozen=True)
class FilterEl:
    expr: Expr


@dataclass(frozen=True)
class Bind:
    expr: Expr
    var: Var


@dataclass(frozen=True)
class SubSelect:
    query: "SparqlQuery"


@dataclass(frozen=True)
class UnionEl:
    left: tuple["Element", ...]
    right: tuple["Element", ...]


Element = Union[TriplePattern, FilterEl, Bind, SubSelect, UnionEl]


@dataclass(frozen=True)
class Projection:
    var: Var
    expr: Optional[Expr] = None  # None projects ``var`` itself

    @property
    def is_aggregate(self) -> bool:
        return self.expr is not None and contains_aggregate(self.expr)


@dataclass(frozen=True)
class OrderCondition:
    expr: Expr
    desc: bool = False


@dataclass(frozen=True)
class SparqlQuery:
    projections: tuple[Projection, ...]
    where: tuple[Element, ...]
    group_by: tuple[Var, ...] = ()
    having: tuple[Expr, ...] = ()
    order_by: tuple[OrderCondition, ...] = ()
    limit: Optional[int] = None
    distinct: bool = False
    prefix: str = field(default="", compare=False)  # only used for prefixed serialization

    @property
    def patterns(self) -> list[TriplePattern]:
        return [e for e in self.where if isinstance(e, TriplePattern)]

    @property
    def filters(self) -> list[Expr]:
        return [e.expr for e in self.where if isinstance(e, FilterEl)]

    @property
    def subqueries(self) -> list["SparqlQuery"]:
        return [e.query for e in self.where if isinstance(e, SubSelect)]

    @property
    def union_branches(self) -> Optional[tuple[tuple[Element, ...], tuple[Element, ...]]]:
        for e in self.where:
            if isinstance(e, UnionEl):
                return (e.left, e.right)
        return None

    @property
    def column_names(self) -> list[str]:
        return [p.var.name for p in self.projections]

    @property
    def has_aggregates(self) -> bool:
        return (
            any(p.is_aggregate for p in self.projections)
            or any(contains_aggregate(h) for h in self.having)
            or any(contains_aggregate(o.expr) for o in self.order_by)
        )


def sub_expressions(e: Expr) -> Iterator[Expr]:
    if isinstance(e, BinOp):
        yield from (e.left, e.right)
    elif isinstance(e, AggExpr):
        if e.arg is not None:
            yield e.arg
    elif isinstance(e, IfExpr):
        yield from (e.cond, e.then, e.other)
    elif isinstance(e, InExpr):
        yield e.expr
        yield from e.options
    elif isinstance(e, (Regex,)):
        yield e.expr
    elif isinstance(e, Call):
        yield from e.args


def walk_expr(e: Expr) -> Iterator[Expr]:
    yield e
    for c in sub_expressions(e):
        yield from walk_expr(c)


def contains_aggregate(e: Expr) -> bool:
    return any(isinstance(x, AggExpr) for x in walk_expr(e))


def expr_vars(e: Expr) -> set[str]:
    return {x.name for x in walk_expr(e) if isinstance(x, Var)}


def bound_vars(elements: tuple[Element, ...]) -> set[str]:
    """Variables a group binds (triples, BINDs, sub-select outputs, UNION branches)."""
    out: set[str] = set()
    for e in elements:
        if isinstance(e, TriplePattern):
            out |= {t.name for t in (e.s, e.o) if isinstance(t, Var)}
        elif isinstance(e, Bind):
            out.add(e.var.name)
        elif isinstance(e, SubSelect):
            out |= {p.var.name for p in e.query.projections}
        elif isinstance(e, UnionEl):
            out |= bound_vars(e.left) | bound_vars(e.right)
    return out


# ---------------------------------------------------------------------------
# Invariants and group-by completion
# ---------------------------------------------------------------------------


def complete_group_by(q: SparqlQuery) -> SparqlQuery:
    """Add every non-aggregated projected variable to GROUP BY.

    Applies only to queries that aggregate or already group; the projected
    variables come first, followed by the remaining original keys.
    """
    if not q.has_aggregates and not q.group_by:
        return q
    keys = [p.var for p in q.projections if not p.is_aggregate and p.expr is None]
    merged = tuple(dict.fromkeys(keys + list(q.group_by)))
    return q if merged == q.group_by else replace(q, group_by=merged)


def check_invariants(q: SparqlQuery, outer: frozenset[str] = frozenset()) -> list[str]:
    problems: list[str] = []
    if not q.where:
        problems.append("empty WHERE pattern list")
    if not q.projections:
        problems.append("empty projection")
    if q.limit is not None and (not isinstance(q.limit, int) or q.limit < 1):
        problems.append(f"LIMIT must be a positive integer, got {q.limit!r}")
    names = [p.var.name for p in q.projections if p.expr is not None]
    if len(set(names)) != len(names):
        problems.append("an expression variable is projected twice")
    bound = bound_vars(q.where)
    grouped = q.has_aggregates or bool(q.group_by)
    if grouped:
        gb = {v.name for v in q.group_by}
        for p in q.projections:
            if p.expr is None and p.var.name not in gb:
                problems.append(f"?{p.var.name} is projected without aggregation but not in GROUP BY")
    for p in q.projections:
        if p.expr is None and p.var.name not in bound:
            problems.append(f"projected ?{p.var.name} is not bound in WHERE")
        if p.expr is not None and p.var.name in bound:
            problems.append(f"?{p.var.name} is both bound in WHERE and assigned in SELECT")
    for v in q.group_by:
        if v.name not in bound:
            problems.append(f"GROUP BY ?{v.name} is not bound in WHERE")
    scope = bound | outer
    for e in q.having:
        for v in expr_vars(e) - scope - set(names):
            problems.append(f"HAVING uses unbound ?{v}")
    for o in q.order_by:
        for v in expr_vars(o.expr) - scope - {p.var.name for p in q.projections}:
            problems.append(f"ORDER BY uses unbound ?{v}")
    problems.extend(_group_problems(q.where, outer))
    return problems


def _group_problems(elements: tuple[Element, ...], outer: frozenset[str]) -> list[str]:
    problems = []
    scope = bound_vars(elements) | outer
    for e in elements:
        if isinstance(e, FilterEl):
            if isinstance(e.expr, NotExists):
                problems.extend(_group_problems(e.expr.elements, frozenset(scope)))
            else:
                for v in expr_vars(e.expr) - scope:
                    problems.append(f"FILTER uses unbound ?{v}")
        elif isinstance(e, Bind):
            for v in expr_vars(e.expr) - scope:
                problems.append(f"BIND uses unbound ?{v}")
        elif isinstance(e, SubSelect):
            problems.extend(check_invariants(e.query))
        elif isinstance(e, UnionEl):
            problems.extend(_group_problems(e.left, outer))
            problems.extend(_group_problems(e.right, outer))
    return problems


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

_VAR_SAFE = re.compile(r"[^A-Za-z0-9_]")


def like_to_regex(pattern: str) -> str:
    """``%`` -> ``.*``, ``_`` -> ``.``, everything else literal; anchored."""
    out = []
    for ch in pattern:
        if ch == "%":
            out.append(".*")
        elif ch == "_":
            out.append(".")
        else:
            out.append(re.escape(ch) if not ch.isalnum() and ch != " " else ch)
    return "^" + "".join(out) + "$"


class _RScope:
    """Per-R emission state: table numbers, bound columns, pending elements."""

    def __init__(self, tmap: dict[str, int]):
        self.tmap = tmap
        self.types: list[TriplePattern] = []
        self.joins: list[TriplePattern] = []
        self.data: list[TriplePattern] = []
        self.subs: list[Element] = []
        self.binds: list[Bind] = []
        self.filters: list[Element] = []
        self.col_vars: dict[tuple[str, str], Var] = {}
        self.arith_vars: dict[s.ArithOp, Var] = {}
        self.used_names: set[str] = set()

    def elements(self) -> tuple[Element, ...]:
        return tuple(self.types + self.joins + self.data + self.subs + self.binds + self.filters)


class _Emitter:
    def __init__(self, ontology: Ontology):
        self.ont = ontology
        self.tables = 0
        self.aggs = 0
        self.exprs = 0

    # -- naming ---------------------------------------------------------------

    def next_agg(self) -> Var:
        self.aggs += 1
        return Var("agg" if self.aggs == 1 else f"agg{self.aggs}")

    def class_iri(self, table: str) -> IRI:
        iri = self.ont.class_iri(table)
        if iri is None:
            raise UnknownProperty(f"ontology has no class for table {table!r}")
        return IRI(iri)

    def col_var(self, sc: _RScope, col: s.Col) -> Var:
        key = (col.table, col.column)
        if key in sc.col_vars:
            return sc.col_vars[key]
        if col.table not in sc.tmap:
            raise EmissionBug(f"column {col.table}.{col.column} outside the query's table set")
        prop = self.ont.data_property(col.table, col.column)
        if prop is None:
            raise UnknownProperty(f"ontology has no data property for {col.table}.{col.column}")
        n = sc.tmap[col.table]
        base = f"t{n}_{_VAR_SAFE.sub('_', col.column)}"
        name, k = base, 2
        while name in sc.used_names:
            name, k = f"{base}_{k}", k + 1
        sc.used_names.add(name)
        v = Var(name)
        sc.col_vars[key] = v
        sc.data.append(TriplePattern(Var(f"t{n}"), IRI(prop.iri), v))
        return v

    # -- A / Op ---------------------------------------------------------------

    def op_expr(self, sc: _RScope, op: s.Op) -> Expr:
        if isinstance(op, s.Ref):
            if op.col.column == "*":
                raise EmissionBug("'*' outside count")
            return self.col_var(sc, op.col)
        if op in sc.arith_vars:
            return sc.arith_vars[op]
        left, right = self.col_var(sc, op.left), self.col_var(sc, op.right)
        expr: Expr = BinOp(op.op, left, right)
        if op.op == "/" and self._is_integer(op.left) and self._is_integer(op.right):
            # integer division truncates toward zero like the relational side
            expr = IfExpr(BinOp("<", expr, Const(0)), Call("CEIL", (expr,)), Call("FLOOR", (expr,)))
        self.exprs += 1
        v = Var(f"expr{self.exprs}")
        sc.arith_vars[op] = v
        sc.binds.append(Bind(expr, v))
        return v

    def _is_integer(self, col: s.Col) -> bool:
        prop = self.ont.data_property(col.table, col.column)
        return prop is not None and prop.range == "integer"

    def agg_expr(self, sc: _RScope, a: s.Agg, guard: bool) -> Expr:
        if isinstance(a.op, s.Ref) and a.op.col.column == "*":
            return AggExpr("count")
        e: Expr = AggExpr(a.func, self.op_expr(sc, a.op))
        if guard and a.func in ("sum", "avg"):
            # SQL yields NULL over no rows where SPARQL yields 0; 1/0 leaves the value unbound
            e = IfExpr(BinOp(">", AggExpr("count"), Const(0)), e, BinOp("/", Const(1), Const(0)))
        return e

    def a_expr(self, sc: _RScope, a: s.A, guard: bool) -> Expr:
        return self.agg_expr(sc, a, guard) if isinstance(a, s.Agg) else self.op_expr(sc, a)

    # -- R --------------------------------------------------------------------

    def emit_r(self, r: s.R, nested: bool) -> SparqlQuery:
        tmap = {}
        for t in r.tables:
            self.tables += 1
            tmap[t] = self.tables
        sc = _RScope(tmap)
        for t in r.tables:
            sc.types.append(TriplePattern(Var(f"t{tmap[t]}"), IRI(RDF_TYPE), self.class_iri(t)))
        for e in r.joins:
            prop = self.ont.object_property(e.table, e.column)
            if prop is None:
                raise UnknownProperty(f"ontology has no object property for {e.table}.{e.column}")
            if e.table not in tmap or e.ref_table not in tmap:
                raise EmissionBug(f"join edge {e.table}.{e.column} leaves the table set")
            sc.joins.append(TriplePattern(Var(f"t{tmap[e.table]}"), IRI(prop.iri), Var(f"t{tmap[e.ref_table]}")))

        has_agg = (
            any(isinstance(a, s.Agg) for a in r.select.items)
            or any(isinstance(getattr(leaf, "a", None), s.Agg) for leaf in s.filter_leaves(r.filter))
            or (r.order is not None and isinstance(r.order.a, s.Agg))
        )
        guard = has_agg and not r.group_by

        projections: list[Projection] = []
        agg_proj: dict[s.Agg, Var] = {}
        first = tmap[r.tables[0]] if r.tables else 0
        nested_aggs = 0
        for a in r.select.items:
            if isinstance(a, s.Agg):
                if nested:
                    nested_aggs += 1
                    v = Var(f"agg_t{first}" if nested_aggs == 1 else f"agg_t{first}_{nested_aggs}")
                else:
                    v = self.next_agg()
                agg_proj.setdefault(a, v)
                projections.append(Projection(v, self.agg_expr(sc, a, guard)))
            else:
                projections.append(Projection(self.op_expr(sc, a)))

        having: list[Expr] = []
        for conj in s.conjuncts(r.filter):
            leaves = list(s.filter_leaves(conj))
            if any(isinstance(getattr(leaf, "a", None), s.Agg) for leaf in leaves):
                having.append(self.filter_expr(sc, conj, guard))
            elif isinstance(conj, (s.In, s.NotIn, s.BetweenSub)) or (
                isinstance(conj, s.Cmp) and isinstance(conj.rhs, s.R)
            ):
                self.subquery_filter(sc, conj)
            else:
                sc.filters.append(FilterEl(self.filter_expr(sc, conj, guard)))

        order_by: tuple[OrderCondition, ...] = ()
        limit = None
        if r.order is not None:
            a = r.order.a
            oe = agg_proj[a] if isinstance(a, s.Agg) and a in agg_proj else self.a_expr(sc, a, guard)
            desc = r.order.direction == "desc" if isinstance(r.order, s.Order) else r.order.kind == "most"
            order_by = (OrderCondition(oe, desc),)
            if isinstance(r.order, s.Superlative):
                limit = r.order.limit

        group_by = tuple(self.col_var(sc, c) for c in r.group_by)
        q = SparqlQuery(
            projections=tuple(projections),
            where=sc.elements(),
            group_by=group_by,
            having=tuple(having),
            order_by=order_by,
            limit=limit,
            distinct=r.select.distinct,
            prefix=self.ont.prefix,
        )
        return complete_group_by(q)

    # -- filters --------------------------------------------------------------

    def filter_expr(self, sc: _RScope, f: s.Filter, guard: bool) -> Expr:
        if isinstance(f, s.FAnd):
            return BinOp("&&", self.filter_expr(sc, f.left, guard), self.filter_expr(sc, f.right, guard))
        if isinstance(f, s.FOr):
            return BinOp("||", self.filter_expr(sc, f.left, guard), self.filter_expr(sc, f.right, guard))
        x = self.a_expr(sc, f.a, guard)
        if isinstance(f, s.Cmp):
            if isinstance(f.rhs, s.R):
                raise EmissionBug("subquery comparison outside a top-level conjunct")
            return BinOp(f.op, x, Const(f.rhs.value))
        if isinstance(f, s.Between):
            return BinOp("&&", BinOp(">=", x, Const(f.low.value)), BinOp("<=", x, Const(f.high.value)))
        if isinstance(f, s.Like):
            return Regex(x, like_to_regex(f.pattern.value), "i")
        raise EmissionBug(f"subquery filter {type(f).__name__} outside a top-level conjunct")

    def subquery_filter(self, sc: _RScope, f: s.Filter) -> None:
        x = self.a_expr(sc, f.a, False)
        if isinstance(f, s.Cmp):
            sub = self.emit_r(f.rhs, nested=True)
            sc.subs.append(SubSelect(sub))
            sc.filters.append(FilterEl(BinOp(f.op, x, sub.projections[0].var)))
            return
        if isinstance(f, s.BetweenSub):
            sub = self.emit_r(f.query, nested=True)
            lo, hi = (p.var for p in sub.projections)
            sc.subs.append(SubSelect(sub))
            sc.filters.append(FilterEl(BinOp("&&", BinOp(">=", x, lo), BinOp("<=", x, hi))))
            return
        sub = _distinct_values(self.emit_r(f.query, nested=True))
        test = FilterEl(InExpr(x, (sub.projections[0].var,)))
        if isinstance(f, s.In):
            sc.subs.append(SubSelect(sub))
            sc.filters.append(test)
        else:
            sc.filters.append(FilterEl(NotExists((SubSelect(sub), test))))

    # -- Z --------------------------------------------------------------------

    def emit_z(self, z: s.Z) -> SparqlQuery:
        if isinstance(z, s.SetQuery):
            return self.set_operation(z)
        return self.emit_r(z, nested=False)

    def set_operation(self, z: s.SetQuery) -> SparqlQuery:
        left = self.emit_r(z.left, nested=False)
        right = self.emit_r(z.right, nested=False)
        if len(left.projections) != len(right.projections):
            raise ArityMismatch(
                f"{z.kind} branches project {len(left.projections)} and {len(right.projections)} items"
            )
        lel, lvars = _inline(left)
        rel, rvars = _inline(right)
        if z.kind == "union":
            targets = lvars if len(set(lvars)) == len(lvars) else [Var(f"u{i}") for i in range(1, len(lvars) + 1)]
            lgroup = lel + tuple(Bind(v, t) for v, t in zip(lvars, targets) if v != t)
            rgroup = rel + tuple(Bind(v, t) for v, t in zip(rvars, targets))
            where: tuple[Element, ...] = (UnionEl(_ordered(lgroup), _ordered(rgroup)),)
            proj = targets
        else:
            tests = tuple(FilterEl(InExpr(lv, (rv,))) for lv, rv in zip(lvars, rvars))
            if z.kind == "intersect":
                where = _ordered(lel + rel + tests)
            else:
                where = _ordered(lel + (FilterEl(NotExists(_ordered(rel + tests))),))
            proj = lvars
        return SparqlQuery(
            projections=tuple(Projection(v) for v in proj), where=where, distinct=True, prefix=self.ont.prefix
        )


def _distinct_values(q: SparqlQuery) -> SparqlQuery:
    """Make an IN-subquery duplicate-free without changing which values it yields."""
    if q.limit is None:
        return replace(q, distinct=True)
    if q.distinct:
        return q
    # DISTINCT would apply before LIMIT, so wrap instead
    return SparqlQuery(
        projections=tuple(Projection(p.var) for p in q.projections),
        where=(SubSelect(q),),
        distinct=True,
        prefix=q.prefix,
    )


def _is_simple(q: SparqlQuery) -> bool:
    return (
        all(p.expr is None for p in q.projections)
        and not q.group_by
        and not q.having
        and not q.order_by
        and q.limit is None
    )


def _inline(q: SparqlQuery) -> tuple[tuple[Element, ...], list[Var]]:
    """A set-op branch either contributes its group directly or as a sub-select."""
    vars_ = [p.var for p in q.projections]
    if _is_simple(q):
        return q.where, vars_
    return (SubSelect(replace(q, distinct=False)),), vars_


_RANK = {TriplePattern: 0, SubSelect: 1, UnionEl: 2, Bind: 3, FilterEl: 4}


def _ordered(elements: tuple[Element, ...]) -> tuple[Element, ...]:
    return tuple(sorted(elements, key=lambda e: _RANK[type(e)]))


def emit_sparql(tree: s.Z, ontology: Ontology) -> SparqlQuery:
    """Translate a validated SemQL tree into a SparqlQuery."""
    q = _Emitter(ontology).emit_z(tree)
    problems = check_invariants(q)
    if problems:
        raise EmissionBug("; ".join(problems))
    return q


def lower_set_operation(z: s.SetQuery, ontology: Ontology) -> SparqlQuery:
    if not isinstance(z, s.SetQuery):
        raise TypeError("lower_set_operation expects an intersect/union/except node")
    return _Emitter(ontology).set_operation(z)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _literal(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return decimal_lexical(value)
    return json.dumps(str(value), ensure_ascii=False)


class _Writer:
    def __init__(self, prefix: Optional[str]):
        self.prefix = prefix  # None writes full IRIs

    def iri(self, iri: IRI) -> str:
        if iri.value == RDF_TYPE:
            return "a"
        if self.prefix and iri.value.startswith(self.prefix):
            local = iri.value[len(self.prefix):]
            return ":" + re.sub(r"([#/?&=!$'()*+,;])", r"\\\1", local)
        return f"<{iri.value}>"

    def term(self, t: Any) -> str:
        if isinstance(t, Var):
            return "?" + t.name
        if isinstance(t, IRI):
            return self.iri(t)
        if isinstance(t, Const):
            return _literal(t.value)
        raise InvariantViolation(f"not a term: {t!r}")

    def expr(self, e: Expr, top: bool = False) -> str:
        if isinstance(e, (Var, IRI, Const)):
            return self.term(e)
        if isinstance(e, BinOp):
            body = f"{self.expr(e.left)} {e.op} {self.expr(e.right)}"
            return body if top else f"({body})"
        if isinstance(e, AggExpr):
            return f"{e.func}(*)" if e.arg is None else f"{e.func}({self.expr(e.arg, top=True)})"
        if isinstance(e, IfExpr):
            return f"IF({self.expr(e.cond, True)}, {self.expr(e.then, True)}, {self.expr(e.other, True)})"
        if isinstance(e, InExpr):
            opts = ", ".join(self.expr(o, True) for o in e.options)
            return f"{self.expr(e.expr)} {'NOT IN' if e.negated else 'IN'} ({opts})"
        if isinstance(e, Regex):
            flags = f", {json.dumps(e.flags)}" if e.flags else ""
            return f"REGEX({self.expr(e.expr, True)}, {json.dumps(e.pattern, ensure_ascii=False)}{flags})"
        if isinstance(e, Call):
            return f"{e.name}({', '.join(self.expr(a, True) for a in e.args)})"
        raise InvariantViolation(f"expression {type(e).__name__} cannot be serialized inline")

    def group(self, elements: tuple[Element, ...], ind: str) -> list[str]:
        lines: list[str] = []
        for el in elements:
            if isinstance(el, TriplePattern):
                lines.append(f"{ind}{self.term(el.s)} {self.iri(el.p)} {self.term(el.o)} .")
            elif isinstance(el, SubSelect):
                lines.append(ind + "{")
                lines.extend(self.query(el.query, ind + "  "))
                lines.append(ind + "}")
            elif isinstance(el, UnionEl):
                lines.append(ind + "{")
                lines.extend(self.group(el.left, ind + "  "))
                lines.append(ind + "}")
                lines.append(ind + "UNION")
                lines.append(ind + "{")
                lines.extend(self.group(el.right, ind + "  "))
                lines.append(ind + "}")
            elif isinstance(el, Bind):
                lines.append(f"{ind}BIND({self.expr(el.expr, True)} AS {self.term(el.var)})")
            elif isinstance(el, FilterEl):
                if isinstance(el.expr, NotExists):
                    lines.append(ind + "FILTER NOT EXISTS {")
                    lines.extend(self.group(el.expr.elements, ind + "  "))
                    lines.append(ind + "}")
                else:
                    lines.append(f"{ind}FILTER({self.expr(el.expr, True)})")
            else:
                raise InvariantViolation(f"unknown group element {type(el).__name__}")
        return lines

    def query(self, q: SparqlQuery, ind: str = "") -> list[str]:
        # the top-level check recurses into nested groups
        problems = check_invariants(q) if not ind else []
        if not q.where:
            raise InvariantViolation("cannot serialize a query with an empty pattern list")
        if problems:
            raise InvariantViolation("; ".join(problems))
        proj = " ".join(
            self.term(p.var) if p.expr is None else f"({self.expr(p.expr, True)} AS {self.term(p.var)})"
            for p in q.projections
        )
        lines = [f"{ind}SELECT {'DISTINCT ' if q.distinct else ''}{proj}", f"{ind}WHERE {{"]
        lines.extend(self.group(q.where, ind + "  "))
        lines.append(ind + "}")
        if q.group_by:
            lines.append(ind + "GROUP BY " + " ".join(self.term(v) for v in q.group_by))
        if q.having:
            lines.append(ind + "HAVING " + " ".join(f"({self.expr(h, True)})" for h in q.having))
        if q.order_by:
            lines.append(
                ind + "ORDER BY " + " ".join(f"{'DESC' if o.desc else 'ASC'}({self.expr(o.expr, True)})" for o in q.order_by)
            )
        if q.limit is not None:
            lines.append(f"{ind}LIMIT {q.limit}")
        return lines


def serialize_sparql(q: SparqlQuery, prefixed: bool = False, prefix: Optional[str] = None) -> str:
    """Canonical text. Full ``<...>`` IRIs by default; ``prefixed`` writes a PREFIX header."""
    if not q.where:
        raise InvariantViolation("cannot serialize a query with an empty pattern list")
    pfx = (prefix or q.prefix) if prefixed else None
    if prefixed and not pfx:
        raise InvariantViolation("prefixed serialization needs a namespace prefix")
    body = "\n".join(_Writer(pfx).query(q)) + "\n"
    return f"PREFIX : <{pfx}>\n\n{body}" if pfx else body
