import json

import pytest

from rdbridge.errors import (
    ArityMismatch,
    ConflictingHints,
    DanglingReference,
    DuplicateKey,
    DuplicateName,
    MissingTableFile,
    ParseError,
    TypeParseError,
)
from rdbridge.schema import (
    RepairHints,
    datatype_from_string,
    dump_data,
    load_data,
    load_schema,
    make_instance,
    parse_cell,
    repair_schema,
    schema_from_dict,
)

from helpers import DATA, load_db_schema


def doc(*tables):
    return {"db_id": "t", "tables": list(tables)}


def table(name, cols, pk=(), fks=()):
    return {
        "name": name,
        "columns": [{"name": c, "type": t} for c, t in cols],
        "primary_key": list(pk),
        "foreign_keys": [dict(zip(("column", "ref_table", "ref_column"), f)) for f in fks],
    }


class TestLoading:
    def test_names_are_lowercased_and_labels_kept(self):
        s = schema_from_dict(doc(table("Airports", [("AirportCode", "TEXT")], pk=["AirportCode"])))
        t = s.table("airports")
        assert t.name == "airports" and t.label == "Airports"
        assert t.primary_key == ("airportcode",)
        assert s.table("AIRPORTS") is t

    @pytest.mark.parametrize(
        "raw,expected",
        [("INT", "integer"), ("varchar(20)", "text"), ("Double", "real"), ("bool", "boolean"), ("number", "real")],
    )
    def test_datatype_aliases(self, raw, expected):
        assert datatype_from_string(raw) == expected

    def test_unknown_datatype(self):
        with pytest.raises(ParseError):
            datatype_from_string("blob")

    def test_duplicate_table(self):
        with pytest.raises(DuplicateName):
            schema_from_dict(doc(table("a", [("x", "int")]), table("A", [("y", "int")])))

    def test_duplicate_column(self):
        with pytest.raises(DuplicateName):
            schema_from_dict(doc(table("a", [("x", "int"), ("X", "text")])))

    def test_dangling_fk(self):
        with pytest.raises(DanglingReference):
            schema_from_dict(doc(table("a", [("x", "int")], fks=[("x", "b", "id")])))

    def test_malformed_document(self):
        with pytest.raises(ParseError):
            schema_from_dict({"tables": [{"columns": []}]})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError):
            load_schema(tmp_path / "nope.json")

    def test_fixture_diagnostics_before_repair(self):
        s = load_schema(DATA / "flight_2" / "schema.json")
        assert s.table("flights").foreign_keys == ()
        assert s.table("flights").primary_key == ("airline", "flightno")


class TestInstances:
    def test_parse_cell_types(self):
        assert parse_cell("12", "integer") == 12
        assert parse_cell("1.5", "real") == 1.5
        assert parse_cell("T", "boolean") is True
        assert parse_cell("", "text") is None

    def test_bad_cell(self):
        with pytest.raises(ValueError):
            parse_cell("abc", "integer")

    def test_bad_cell_in_csv(self, tmp_path):
        s = schema_from_dict(doc(table("a", [("id", "int")], pk=["id"])))
        (tmp_path / "a.csv").write_text("id\nabc\n")
        with pytest.raises(TypeParseError):
            load_data(s, tmp_path)

    def test_duplicate_key(self):
        s = schema_from_dict(doc(table("a", [("id", "int")], pk=["id"])))
        with pytest.raises(DuplicateKey):
            make_instance(s, {"a": [(1,), (1,)]})

    def test_arity(self):
        s = schema_from_dict(doc(table("a", [("id", "int")], pk=["id"])))
        with pytest.raises(ArityMismatch):
            make_instance(s, {"a": [(1, 2)]})

    def test_missing_table_file(self, tmp_path):
        s = schema_from_dict(doc(table("a", [("id", "int")], pk=["id"])))
        with pytest.raises(MissingTableFile):
            load_data(s, tmp_path)

    def test_csv_round_trip(self, tmp_path):
        s = load_db_schema("world_1")
        inst = load_data(s, DATA / "world_1" / "data")
        dump_data(inst, tmp_path)
        again = load_data(s, tmp_path)
        assert again.tables == inst.tables

    def test_fixture_sizes(self):
        s = load_db_schema("world_1")
        counts = load_data(s, DATA / "world_1" / "data").row_counts()
        assert counts == {"city": 31, "country": 11, "countrylanguage": 49}


class TestRepair:
    def test_id_like_primary_key(self):
        s = schema_from_dict(doc(table("singer", [("Singer_ID", "int"), ("Name", "text")])))
        r, report = repair_schema(s)
        assert r.table("singer").primary_key == ("singer_id",)
        assert [c.kind for c in report.changes] == ["add_primary_key"]

    def test_surrogate_key(self):
        s = schema_from_dict(doc(table("log", [("msg", "text")])))
        r, report = repair_schema(s)
        t = r.table("log")
        assert t.primary_key == ("log_rowid",)
        assert t.column("log_rowid").surrogate
        assert report.of_kind("add_surrogate_key")

    def test_name_based_fk_inference(self):
        s = schema_from_dict(
            doc(
                table("country", [("code", "text")], pk=["code"]),
                table("city", [("id", "int"), ("code", "text")], pk=["id"]),
            )
        )
        r, report = repair_schema(s)
        fk = r.table("city").foreign_key("code")
        assert (fk.ref_table, fk.ref_column) == ("country", "code")
        assert report.of_kind("infer_foreign_key")

    def test_suppressed_inference(self):
        s = schema_from_dict(
            doc(
                table("country", [("code", "text")], pk=["code"]),
                table("city", [("id", "int"), ("code", "text")], pk=["id"]),
            )
        )
        hints = RepairHints.from_dict({"suppress_inferred": [{"table": "city", "column": "code"}]})
        r, _ = repair_schema(s, hints)
        assert r.table("city").foreign_keys == ()

    def test_hinted_fk_and_widening(self):
        s = schema_from_dict(
            doc(
                table("airlines", [("uid", "int")], pk=["uid"]),
                table("flights", [("airline", "text"), ("no", "int")], pk=["airline", "no"]),
            )
        )
        hints = RepairHints.from_dict({"add_foreign_keys": [{"table": "flights", "column": "airline", "ref_table": "airlines", "ref_column": "uid"}]})
        r, report = repair_schema(s, hints)
        assert r.table("airlines").column("uid").datatype == "text"
        assert report.of_kind("widen_datatype")
        assert r.diagnostics == ()

    def test_numeric_widening_goes_to_real(self):
        s = schema_from_dict(
            doc(table("a", [("id", "real")], pk=["id"]), table("b", [("id", "int"), ("a_ref", "int")], pk=["id"], fks=[("a_ref", "a", "id")]))
        )
        r, _ = repair_schema(s)
        assert r.table("b").column("a_ref").datatype == "real"

    def test_conflicting_hints(self):
        s = schema_from_dict(doc(table("a", [("x", "int"), ("y", "int")], pk=["x"])))
        with pytest.raises(ConflictingHints):
            repair_schema(s, RepairHints.from_dict({"add_primary_keys": [{"table": "a", "columns": ["y"]}]}))

    def test_dangling_hint(self):
        s = schema_from_dict(doc(table("a", [("x", "int")], pk=["x"])))
        hints = RepairHints.from_dict({"add_foreign_keys": [{"table": "a", "column": "x", "ref_table": "zz", "ref_column": "x"}]})
        with pytest.raises(DanglingReference):
            repair_schema(s, hints)

    @pytest.mark.parametrize("db", ["flight_2", "world_1", "concert_singer"])
    def test_idempotent_on_fixtures(self, db):
        once = load_db_schema(db)
        twice, report = repair_schema(once)
        assert twice == once
        assert len(report) == 0

    def test_flight_fixture_after_hints(self):
        s = load_db_schema("flight_2")
        fks = {(fk.column, fk.ref_table) for _, fk in s.foreign_keys()}
        assert fks == {("sourceairport", "airports"), ("destairport", "airports"), ("airline", "airlines")}

    def test_to_dict_round_trip(self):
        s = load_db_schema("concert_singer")
        again = schema_from_dict(json.loads(json.dumps(s.to_dict())))
        assert again == s
