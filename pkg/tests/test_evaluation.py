import json
from dataclasses import replace

import pytest

from rdbridge.engines import ResultSet, eval_sparql, eval_sql
from rdbridge.evaluation import (
    AccuracyReport,
    QueryProfile,
    QueryRecord,
    categorize,
    compare_results,
    execution_accuracy,
    hardness,
    hardness_score,
    profile_query,
)
from rdbridge.pipeline import transpile
from rdbridge.sparql import FilterEl

from helpers import fixture, golden_items


def rs(rows, ordered=False, cols=("a",)):
    return ResultSet(tuple(cols), tuple(tuple(r) for r in rows), ordered)


def profile(sql, db="flight_2"):
    f = fixture(db)
    t = transpile(sql, f.schema, f.ontology)
    return profile_query(t.tree, t.sparql)


class TestCompare:
    def test_identity(self):
        assert compare_results(rs([[2]]), rs([[2]]))

    def test_unordered_vs_ordered(self):
        assert compare_results(rs([["a"], ["b"]]), rs([["b"], ["a"]]))
        assert not compare_results(rs([["a"], ["b"]], True), rs([["b"], ["a"]], True))
        assert compare_results(rs([["a"], ["b"]], True), rs([["b"], ["a"]]), order_insensitive=True)

    def test_tolerance(self):
        assert compare_results(rs([[2.0000000001]]), rs([[2]]))
        assert not compare_results(rs([[2.1]]), rs([[2]]))

    def test_column_names_ignored_but_arity_not(self):
        assert compare_results(rs([[1]], cols=("x",)), rs([[1]], cols=("y",)))
        assert not compare_results(rs([[1, 2]], cols=("a", "b")), rs([[1]]))

    def test_multiset_not_set(self):
        assert not compare_results(rs([[1], [1], [2]]), rs([[1], [2], [2]]))

    def test_greedy_fallback_for_near_values(self):
        a = rs([[1.0, "b"], [1.0 + 1e-12, "a"]], cols=("x", "y"))
        b = rs([[1.0, "a"], [1.0, "b"]], cols=("x", "y"))
        assert compare_results(a, b)


class TestProfile:
    def test_count_airports(self):
        p = profile("SELECT count(*) FROM airports")
        assert p.num_triple_patterns == 1
        assert p.num_aggregations == 1 and p.aggregation_types == frozenset({"count"})
        assert (p.num_hops, p.num_selections, p.num_subqueries, p.num_set_ops) == (0, 0, 0, 0)
        assert categorize(p) == {"single_hop", "aggregation"}
        assert hardness(p) == "easy"

    def test_singer(self):
        p = profile("SELECT avg(Age), min(Age), max(Age) FROM singer WHERE Country = 'France'", "concert_singer")
        assert p.num_aggregations == 3
        assert p.aggregation_types == frozenset({"avg", "min", "max"})
        assert p.num_hops == 0

    def test_district(self):
        p = profile(
            "SELECT count(*), District FROM city WHERE Population > (SELECT avg(Population) FROM city) GROUP BY District",
            "world_1",
        )
        assert p.num_subqueries == 1 and p.has_group_having
        assert hardness(p) in ("hard", "extra")

    def test_intersect(self):
        p = profile("SELECT City FROM airports WHERE AirportCode = 'MMI' INTERSECT SELECT City FROM airports WHERE AirportCode = 'AHN'")
        assert p.num_set_ops == 1 and p.num_triple_patterns == 6
        assert categorize(p) == {"multi_hop"}

    def test_grouped_count_is_medium(self):
        p = profile("SELECT T1.City, count(*) FROM airports AS T1 JOIN flights AS T2 ON T1.AirportCode = T2.SourceAirport GROUP BY T2.SourceAirport")
        assert p.num_hops == 1 and hardness(p) == "medium"
        assert categorize(p) == {"multi_hop", "aggregation"}

    def test_features(self):
        p = profile("SELECT Name, GNP / Population FROM country WHERE Continent = 'Asia' AND Name LIKE 'J%' ORDER BY GNP", "world_1")
        assert p.has_math_ops and p.has_order_by
        assert p.comparison_ops == frozenset({"=", "like"}) and p.num_selections == 2
        assert p.num_projections == 2

    def test_profile_validation(self):
        with pytest.raises(ValueError):
            QueryProfile(num_aggregations=1)
        with pytest.raises(ValueError):
            QueryProfile(num_hops=-1)


class TestHardness:
    def test_floor(self):
        assert hardness(QueryProfile(num_triple_patterns=1)) == "easy"

    def test_medium_rule(self):
        p = QueryProfile(num_aggregations=1, aggregation_types=frozenset({"count"}), has_group_having=True, num_hops=2)
        assert hardness(p) == "medium"

    def test_ceiling(self):
        p = QueryProfile(num_set_ops=1, num_subqueries=1, num_aggregations=2, aggregation_types=frozenset({"max"}))
        assert hardness(p) == "extra"

    def test_score_formula(self):
        p = QueryProfile(num_selections=3, num_hops=3, has_order_by=True)
        assert hardness_score(p) == 2 + 2 + 1

    def test_categories_exclusive(self):
        for hops in range(3):
            for sets in range(2):
                cats = categorize(QueryProfile(num_hops=hops, num_set_ops=sets))
                assert len(cats & {"single_hop", "multi_hop"}) == 1


class TestAccuracy:
    def test_golden_like_corpus(self):
        f = fixture("flight_2")
        report = execution_accuracy(
            [("a", "SELECT count(*) FROM airports"), "SELECT City FROM airports WHERE Country = 'Canada'"],
            f.schema, f.instance, f.graph, f.ontology,
        )
        assert (report.total, report.correct, report.accuracy) == (2, 2, 1.0)
        assert [r.query_id for r in report.records] == ["a", "q2"]

    def test_window_function_rejected(self):
        f = fixture("world_1")
        report = execution_accuracy(["SELECT Name, rank() OVER (ORDER BY Population) FROM city"], f.schema, f.instance, f.graph)
        assert (report.total, report.rejected, report.accuracy) == (1, 1, 0.0)

    def test_empty_corpus(self):
        f = fixture("world_1")
        report = execution_accuracy([], f.schema, f.instance, f.graph)
        assert report.total == 0 and report.accuracy == 1.0
        assert any("empty corpus" in n for n in report.notes)

    def test_failed_input(self):
        f = fixture("world_1")
        report = execution_accuracy(["SELECT nope FROM city"], f.schema, f.instance, f.graph)
        assert report.failed == 1 and "UnknownIdentifier" in report.records[0].error

    def test_report_outputs(self):
        f = fixture("flight_2")
        report = execution_accuracy(["SELECT count(*) FROM airports", "SELECT City FROM airports LIMIT 1"], f.schema, f.instance, f.graph)
        doc = json.loads(report.to_json())
        assert doc["total"] == 2 and doc["rejected"] == 1
        assert doc["by_hardness"]["easy"] == {"total": 1, "correct": 1}
        assert doc["by_category"]["aggregation"]["correct"] == 1
        table = report.to_table()
        assert "accuracy 0.5000" in table and "rejected  q2" in table
        assert report.to_json() == report.to_json()

    def test_tallies_sum(self):
        with pytest.raises(ValueError):
            AccuracyReport((QueryRecord("x", "weird"),))


def test_mutated_sparql_is_caught():
    # dropping every FILTER must change the answer for some golden query
    f = fixture("world_1")
    caught = 0
    for _, sql in golden_items("world_1"):
        t = transpile(sql, f.schema, f.ontology)
        where = tuple(e for e in t.sparql.where if not isinstance(e, FilterEl))
        if where == t.sparql.where:
            continue
        mutant = replace(t.sparql, where=where)
        caught += not compare_results(eval_sql(t.sql, f.instance), eval_sparql(mutant, f.graph))
    assert caught >= 5
