"""Execution accuracy, query profiling and hardness tiers."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence, Union

from . import semql as s
from .engines import eval_sparql, eval_sql
from .engines.results import ResultSet, row_key, values_equal
from .errors import RdbridgeError, RejectedQuery
from .mapping import Graph, Ontology, derive_ontology
from .pipeline import transpile
from .schema import RelationalInstance, RelationalSchema
from .sparql import (
    FilterEl,
    NotExists,
    SparqlQuery,
    SubSelect,
    TriplePattern,
    UnionEl,
    Var,
)

_ENTITY = re.compile(r"t\d+")

TIERS = ("easy", "medium", "hard", "extra")
CATEGORIES = ("single_hop", "multi_hop", "aggregation")


# ---------------------------------------------------------------------------
# Result comparison
# ---------------------------------------------------------------------------


def _rows_equal(r1: Sequence[Any], r2: Sequence[Any]) -> bool:
    return all(values_equal(a, b) for a, b in zip(r1, r2))


def compare_results(a: ResultSet, b: ResultSet, order_insensitive: bool = False) -> bool:
    """Execution-accuracy equality: arity, then sequence or multiset of rows.

    Column names are ignored. Rows are compared in order when either side
    is ordered (unless ``order_insensitive``), otherwise as multisets.
    """
    if len(a.columns) != len(b.columns) or len(a.rows) != len(b.rows):
        return False
    if (a.ordered or b.ordered) and not order_insensitive:
        return all(_rows_equal(x, y) for x, y in zip(a.rows, b.rows))
    left = sorted(a.rows, key=row_key)
    right = sorted(b.rows, key=row_key)
    if all(_rows_equal(x, y) for x, y in zip(left, right)):
        return True
    # tolerance can reorder near-equal numbers; fall back to greedy matching
    unused = list(right)
    for row in left:
        for i, cand in enumerate(unused):
            if _rows_equal(row, cand):
                del unused[i]
                break
        else:
            return False
    return True


# ---------------------------------------------------------------------------
# Profiling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QueryProfile:
    num_projections: int = 0
    num_selections: int = 0
    comparison_ops: frozenset[str] = frozenset()
    has_order_by: bool = False
    has_math_ops: bool = False
    has_group_having: bool = False
    num_set_ops: int = 0
    num_triple_patterns: int = 0
    num_subqueries: int = 0
    num_aggregations: int = 0
    aggregation_types: frozenset[str] = frozenset()
    num_hops: int = 0

    def __post_init__(self):
        for name in (
            "num_projections",
            "num_selections",
            "num_set_ops",
            "num_triple_patterns",
            "num_subqueries",
            "num_aggregations",
            "num_hops",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if bool(self.aggregation_types) != (self.num_aggregations > 0):
            raise ValueError("aggregation_types must be nonempty exactly when there are aggregations")

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_projections": self.num_projections,
            "num_selections": self.num_selections,
            "comparison_ops": sorted(self.comparison_ops),
            "has_order_by": self.has_order_by,
            "has_math_ops": self.has_math_ops,
            "has_group_having": self.has_group_having,
            "num_set_ops": self.num_set_ops,
            "num_triple_patterns": self.num_triple_patterns,
            "num_subqueries": self.num_subqueries,
            "num_aggregations": self.num_aggregations,
            "aggregation_types": sorted(self.aggregation_types),
            "num_hops": self.num_hops,
        }


_LEAF_OP = {s.Between: "between", s.BetweenSub: "between", s.In: "in", s.NotIn: "not_in", s.Like: "like"}


def _triples(elements: Iterable[Any]) -> Iterable[TriplePattern]:
    for el in elements:
        if isinstance(el, TriplePattern):
            yield el
        elif isinstance(el, SubSelect):
            yield from _triples(el.query.where)
        elif isinstance(el, UnionEl):
            yield from _triples(el.left)
            yield from _triples(el.right)
        elif isinstance(el, FilterEl) and isinstance(el.expr, NotExists):
            yield from _triples(el.expr.elements)


def profile_query(tree: s.Z, q: SparqlQuery) -> QueryProfile:
    """Structural features of a query, read off its SemQL tree and SPARQL form."""
    rs = list(s.all_rs(tree))
    top = tree.left if isinstance(tree, s.SetQuery) else tree
    selections = 0
    ops: set[str] = set()
    aggs: list[str] = []
    math = False
    group_having = False
    has_order = False
    subqueries = 0
    for r in rs:
        a_nodes = list(r.select.items)
        leaves = list(s.filter_leaves(r.filter))
        selections += len(leaves)
        for leaf in leaves:
            ops.add(leaf.op if isinstance(leaf, s.Cmp) else _LEAF_OP[type(leaf)])
            a_nodes.append(leaf.a)
            if isinstance(leaf.a, s.Agg):
                group_having = True
            if s.leaf_subquery(leaf) is not None:
                subqueries += 1
        if r.order is not None:
            has_order = True
            a_nodes.append(r.order.a)
        if r.group_by:
            group_having = True
        for a in a_nodes:
            if isinstance(a, s.Agg):
                aggs.append(a.func)
            op = a.op if isinstance(a, s.Agg) else a
            if isinstance(op, s.ArithOp):
                math = True
    triples = list(_triples(q.where))
    hops = sum(1 for t in triples if _is_entity(t.s) and _is_entity(t.o))
    return QueryProfile(
        num_projections=len(top.select.items),
        num_selections=selections,
        comparison_ops=frozenset(ops),
        has_order_by=has_order,
        has_math_ops=math,
        has_group_having=group_having,
        num_set_ops=1 if isinstance(tree, s.SetQuery) else 0,
        num_triple_patterns=len(triples),
        num_subqueries=subqueries,
        num_aggregations=len(aggs),
        aggregation_types=frozenset(aggs),
        num_hops=hops,
    )


def _is_entity(term: Any) -> bool:
    # object-property patterns link two entity variables ?tN -> ?tM
    return isinstance(term, Var) and _ENTITY.fullmatch(term.name) is not None


def categorize(p: QueryProfile) -> frozenset[str]:
    cats = {"single_hop"} if p.num_hops == 0 and p.num_set_ops == 0 else {"multi_hop"}
    if p.num_aggregations >= 1:
        cats.add("aggregation")
    return frozenset(cats)


def hardness_score(p: QueryProfile) -> int:
    return (
        p.num_aggregations
        + 2 * p.num_set_ops
        + 2 * p.num_subqueries
        + max(0, p.num_hops - 1)
        + int(p.has_group_having)
        + int(p.has_order_by)
        + max(0, p.num_selections - 1)
    )


def hardness(p: QueryProfile) -> str:
    score = hardness_score(p)
    if score <= 1:
        return "easy"
    if score <= 3:
        return "medium"
    if score <= 5:
        return "hard"
    return "extra"


# ---------------------------------------------------------------------------
# Execution accuracy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    verdict: str  # correct | rejected | failed
    error: Optional[str] = None
    hardness: Optional[str] = None
    categories: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "query_id": self.query_id,
            "verdict": self.verdict,
            "error": self.error,
            "hardness": self.hardness,
            "categories": list(self.categories),
        }


@dataclass(frozen=True)
class AccuracyReport:
    records: tuple[QueryRecord, ...] = ()
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.total != self.correct + self.rejected + self.failed:
            raise ValueError("verdicts must be correct, rejected or failed")

    @property
    def total(self) -> int:
        return len(self.records)

    def _count(self, verdict: str) -> int:
        return sum(1 for r in self.records if r.verdict == verdict)

    @property
    def correct(self) -> int:
        return self._count("correct")

    @property
    def rejected(self) -> int:
        return self._count("rejected")

    @property
    def failed(self) -> int:
        return self._count("failed")

    @property
    def accuracy(self) -> float:
        return 1.0 if not self.records else self.correct / self.total

    def breakdown(self, attr: str) -> dict[str, dict[str, int]]:
        keys = TIERS if attr == "hardness" else CATEGORIES
        out = {k: {"total": 0, "correct": 0} for k in keys}
        for r in self.records:
            labels = [r.hardness] if attr == "hardness" else list(r.categories)
            for label in labels:
                if label in out:
                    out[label]["total"] += 1
                    out[label]["correct"] += r.verdict == "correct"
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "total": self.total,
            "correct": self.correct,
            "rejected": self.rejected,
            "failed": self.failed,
            "accuracy": self.accuracy,
            "notes": list(self.notes),
            "by_hardness": self.breakdown("hardness"),
            "by_category": self.breakdown("category"),
            "queries": [r.to_dict() for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        lines = [
            f"total {self.total}  correct {self.correct}  rejected {self.rejected}  "
            f"failed {self.failed}  accuracy {self.accuracy:.4f}"
        ]
        for note in self.notes:
            lines.append(f"note: {note}")
        for title, attr in (("hardness", "hardness"), ("category", "category")):
            lines.append(f"{title:<12} {'total':>6} {'correct':>8}")
            for k, v in self.breakdown(attr).items():
                lines.append(f"{k:<12} {v['total']:>6} {v['correct']:>8}")
        for r in self.records:
            if r.verdict != "correct":
                lines.append(f"{r.verdict:<9} {r.query_id}: {r.error}")
        return "\n".join(lines) + "\n"


CorpusItem = Union[str, tuple[str, str]]


def evaluate_query(
    query_id: str,
    sql_text: str,
    schema: RelationalSchema,
    instance: RelationalInstance,
    graph: Graph,
    ontology: Ontology,
    order_insensitive: bool = False,
) -> QueryRecord:
    try:
        t = transpile(sql_text, schema, ontology)
    except RejectedQuery as e:
        return QueryRecord(query_id, "rejected", f"{e.name}: {e}")
    except RdbridgeError as e:
        return QueryRecord(query_id, "failed", f"{e.name}: {e}")
    profile = profile_query(t.tree, t.sparql)
    tier, cats = hardness(profile), tuple(sorted(categorize(profile)))
    try:
        expected = eval_sql(t.sql, instance)
        actual = eval_sparql(t.sparql, graph)
    except RdbridgeError as e:
        return QueryRecord(query_id, "failed", f"{e.name}: {e}", tier, cats)
    if compare_results(expected, actual, order_insensitive):
        return QueryRecord(query_id, "correct", None, tier, cats)
    return QueryRecord(
        query_id,
        "failed",
        f"ResultMismatch: SQL gave {len(expected)} rows, SPARQL gave {len(actual)} rows",
        tier,
        cats,
    )


def execution_accuracy(
    corpus: Sequence[CorpusItem],
    schema: RelationalSchema,
    instance: RelationalInstance,
    graph: Graph,
    ontology: Optional[Ontology] = None,
    order_insensitive: bool = False,
) -> AccuracyReport:
    """Transpile and run every query on both engines, tallying the verdicts."""
    ontology = ontology or derive_ontology(schema)
    records = []
    for n, item in enumerate(corpus, start=1):
        qid, text = item if isinstance(item, tuple) else (f"q{n}", item)
        records.append(evaluate_query(qid, text, schema, instance, graph, ontology, order_insensitive))
    notes = ("empty corpus: accuracy reported as 1.0 by convention",) if not records else ()
    return AccuracyReport(tuple(records), notes)
