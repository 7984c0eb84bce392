import pytest

from rdbridge.errors import SqlSyntaxError, TypeMismatch, UnknownIdentifier, UnsupportedConstruct
from rdbridge.sql import normalize_sql, parse_sql
from rdbridge.sql import ast as sq
from rdbridge.sql.ast import to_sql
from rdbridge.sql.parser import tokenize

from helpers import generated_corpus, golden_items, load_db_schema

WORLD = load_db_schema("world_1")
FLIGHT = load_db_schema("flight_2")


def norm(text, schema=WORLD):
    return to_sql(normalize_sql(parse_sql(text, schema), schema))


class TestParser:
    def test_tokens_keep_positions(self):
        toks = tokenize("SELECT a FROM b")
        assert [t.text.lower() for t in toks[:4]] == ["select", "a", "from", "b"]
        assert toks[1].pos == 7

    def test_resolves_aliases_and_case(self):
        q = parse_sql("select T1.Name from City as T1 where T1.Population > 5", WORLD)
        assert isinstance(q, sq.Block)
        col = q.select[0].expr
        assert (col.table, col.column, col.alias) == ("city", "name", "t1")

    def test_unqualified_columns_resolve(self):
        q = parse_sql("SELECT Name FROM city WHERE Population > 5", WORLD)
        assert q.where.left.table == "city"

    def test_trailing_semicolon_and_keywords(self):
        assert norm("select Name from city where Name like 'A%' order by Population desc limit 3;") == (
            "SELECT t1.name FROM city AS t1 WHERE t1.name LIKE 'A%' ORDER BY t1.population DESC LIMIT 3"
        )

    def test_set_operations_parse(self):
        q = parse_sql("SELECT Name FROM city INTERSECT SELECT Name FROM country", WORLD)
        assert isinstance(q, sq.SetOp) and q.kind == "intersect"

    def test_subqueries(self):
        q = parse_sql("SELECT Name FROM city WHERE Population > (SELECT avg(Population) FROM city)", WORLD)
        assert isinstance(q.where.right, sq.ScalarQuery)
        q = parse_sql("SELECT Name FROM city WHERE CountryCode NOT IN (SELECT Code FROM country)", WORLD)
        assert isinstance(q.where, sq.InQuery) and q.where.negated

    def test_syntax_error_position(self):
        with pytest.raises(SqlSyntaxError) as info:
            parse_sql("SELECT name FROM city WHERE", WORLD)
        assert info.value.position == 27

    @pytest.mark.parametrize(
        "text",
        ["SELECT nme FROM city", "SELECT name FROM cty", "SELECT Name FROM city, country", "SELECT T9.Name FROM city AS T1"],
    )
    def test_unknown_or_ambiguous(self, text):
        with pytest.raises(UnknownIdentifier):
            parse_sql(text, WORLD)

    def test_double_quoted_strings_rejected(self):
        with pytest.raises(UnsupportedConstruct):
            parse_sql('SELECT Name FROM city WHERE Name = "x"', WORLD)

    @pytest.mark.parametrize(
        "text",
        [
            "SELECT Name, row_number() OVER (ORDER BY Population) FROM city",
            "SELECT CASE WHEN Population > 1 THEN 1 ELSE 0 END FROM city",
            "SELECT T1.Name FROM city AS T1 LEFT JOIN country AS T2 ON T1.CountryCode = T2.Code",
            "SELECT Name FROM city WHERE EXISTS (SELECT 1 FROM country)",
            "SELECT -Population FROM city",
        ],
    )
    def test_out_of_dialect_syntax(self, text):
        with pytest.raises((UnsupportedConstruct, SqlSyntaxError)):
            parse_sql(text, WORLD)


class TestNormalize:
    def test_numeric_string_coerced(self):
        assert norm("SELECT Name FROM city WHERE Population > '100'").endswith("t1.population > 100")

    def test_boolean_literal_coerced(self):
        text = norm("SELECT Language FROM countrylanguage WHERE IsOfficial = 'T'")
        assert text.endswith("t1.isofficial = TRUE")

    def test_type_mismatch(self):
        with pytest.raises(TypeMismatch):
            norm("SELECT Name FROM city WHERE Population > 'abc'")

    def test_negative_literal(self):
        assert norm("SELECT Name FROM city WHERE Population > -5").endswith("> -5")

    def test_integer_literal_for_real_column(self):
        q = normalize_sql(parse_sql("SELECT Name FROM country WHERE GNP > 3", WORLD), WORLD)
        assert q.where.right.value == 3

    def test_idempotent_on_golden(self):
        for db in ("flight_2", "world_1", "concert_singer"):
            schema = load_db_schema(db)
            for _, text in golden_items(db):
                once = normalize_sql(parse_sql(text, schema), schema)
                assert normalize_sql(once, schema) == once


def _round_trip_items():
    out = [(db, sql) for db in ("flight_2", "world_1", "concert_singer") for _, sql in golden_items(db)]
    out += [(db, sql) for db, _, sql in generated_corpus(40, seed=3)]
    return out


@pytest.mark.parametrize("db,text", _round_trip_items())
def test_to_sql_round_trip(db, text):
    schema = load_db_schema(db)
    ast = parse_sql(text, schema)
    again = parse_sql(to_sql(ast), schema)
    assert to_sql(again) == to_sql(ast)
    assert normalize_sql(again, schema) == normalize_sql(ast, schema)
