import json
import shutil
import subprocess
import sys

import pytest

from rdbridge.cli import read_corpus, run_cli

from helpers import DATA, GOLDEN

FLIGHT = str(DATA / "flight_2")
HINTS = str(DATA / "flight_2" / "hints.json")
FLIGHT_DATA = str(DATA / "flight_2" / "data")


def sql_file(tmp_path, text, name="q.sql"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_map(capsys):
    assert run_cli(["map", "--schema", FLIGHT, "--hints", HINTS]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["classes"]) == 3 and len(doc["object_properties"]) == 3


def test_map_custom_prefix(capsys, monkeypatch):
    monkeypatch.setenv("RDBRIDGE_PREFIX", "http://example.org/x/")
    assert run_cli(["map", "--schema", FLIGHT]) == 0
    assert json.loads(capsys.readouterr().out)["prefix"] == "http://example.org/x/"


def test_bad_prefix(capsys):
    assert run_cli(["map", "--schema", FLIGHT, "--prefix", "not an iri"]) == 1
    err = capsys.readouterr().err
    assert err.startswith("rdbridge: CliInputError:") and "absolute IRI" in err


def test_materialize(tmp_path, capsys):
    out, report = tmp_path / "g.nt", tmp_path / "r.json"
    code = run_cli(["materialize", "--schema", FLIGHT, "--hints", HINTS, "--data", str(DATA / "flight_2" / "small"), "-o", str(out), "--report", str(report)])
    assert code == 0
    assert len(out.read_text().splitlines()) == 25
    assert json.loads(report.read_text())["triples"] == 25
    assert "25 triples" in capsys.readouterr().err


def test_transpile_golden(tmp_path, capsys):
    semql = tmp_path / "q.semql"
    code = run_cli(["transpile", "--schema", FLIGHT, "--hints", HINTS, "--sql", str(GOLDEN / "flight_2" / "f01_count_airports.sql"), "--semql", str(semql)])
    assert code == 0
    assert capsys.readouterr().out == (GOLDEN / "flight_2" / "f01_count_airports.sparql").read_text()
    assert semql.read_text() == (GOLDEN / "flight_2" / "f01_count_airports.semql").read_text()


def test_transpile_prefixed(tmp_path, capsys):
    q = sql_file(tmp_path, "SELECT count(*) FROM airports")
    assert run_cli(["transpile", "--schema", FLIGHT, "--sql", q, "--emit-prefixed-iris"]) == 0
    assert capsys.readouterr().out.startswith("PREFIX : <http://valuenet/ontop/>")


def test_transpile_rejection_exit_code(tmp_path, capsys):
    q = sql_file(tmp_path, "SELECT City, row_number() OVER (ORDER BY City) FROM airports")
    assert run_cli(["transpile", "--schema", FLIGHT, "--sql", q]) == 2
    assert capsys.readouterr().err.startswith("rdbridge: UnsupportedConstruct:")


def test_transpile_input_error(tmp_path, capsys):
    q = sql_file(tmp_path, "SELECT nope FROM airports")
    assert run_cli(["transpile", "--schema", FLIGHT, "--sql", q]) == 1
    assert "UnknownIdentifier" in capsys.readouterr().err


def test_missing_files(capsys):
    assert run_cli(["transpile", "--schema", FLIGHT, "--sql", "/nonexistent.sql"]) == 1
    assert run_cli(["map", "--schema", "/nonexistent"]) == 1


def test_usage_error_is_input_error(capsys):
    with pytest.raises(SystemExit) as info:
        run_cli(["transpile"])
    assert info.value.code == 1


@pytest.mark.parametrize("engine", ["sql", "sparql"])
def test_run_both_engines(tmp_path, capsys, engine):
    q = sql_file(tmp_path, "SELECT avg(Age), min(Age), max(Age) FROM singer WHERE Country = 'France'")
    code = run_cli(["run", "--schema", str(DATA / "concert_singer"), "--data", str(DATA / "concert_singer" / "data"), "--sql", q, "--engine", engine])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[1] == "34.5,25,43"


def test_eval_golden_directory(tmp_path, capsys):
    out = tmp_path / "report.json"
    code = run_cli(["eval", "--schema", FLIGHT, "--hints", HINTS, "--data", FLIGHT_DATA, "--corpus", str(GOLDEN / "flight_2"), "-o", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["accuracy"] == 1.0 and doc["rejected"] == 0 and doc["total"] == 16
    assert "accuracy 1.0000" in capsys.readouterr().out


def test_eval_line_corpus(tmp_path, capsys):
    corpus = tmp_path / "c.txt"
    corpus.write_text("-- comment\nok\tSELECT count(*) FROM airports\n\nSELECT City FROM airports LIMIT 2\n")
    assert run_cli(["eval", "--schema", FLIGHT, "--data", FLIGHT_DATA, "--corpus", str(corpus)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [r["query_id"] for r in doc["queries"]] == ["ok", "q4"]
    assert doc["rejected"] == 1


def test_read_corpus_directory():
    items = read_corpus(str(GOLDEN / "world_1"))
    assert len(items) == 23 and items[0][0] == "w01_district_subquery"


def test_analyze(tmp_path, capsys):
    q = sql_file(tmp_path, "SELECT count(*), District FROM city WHERE Population > (SELECT avg(Population) FROM city) GROUP BY District")
    assert run_cli(["analyze", "--schema", str(DATA / "world_1"), "--sql", q]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert rows[0]["profile"]["num_subqueries"] == 1
    assert rows[0]["hardness"] in ("hard", "extra")


def test_analyze_corpus_keeps_going(tmp_path, capsys):
    corpus = tmp_path / "c.txt"
    corpus.write_text("SELECT Name FROM city LIMIT 1\nSELECT Name FROM city\n")
    assert run_cli(["analyze", "--schema", str(DATA / "world_1"), "--corpus", str(corpus)]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert "UnsupportedConstruct" in rows[0]["error"] and rows[1]["hardness"] == "easy"


def test_prompt(capsys):
    assert run_cli(["prompt", "--schema", FLIGHT, "--hints", HINTS]) == 0
    out = capsys.readouterr().out
    assert "'classes': ['airlines', 'airports', 'flights']" in out


@pytest.mark.skipif(shutil.which("rdbridge") is None, reason="console script not installed")
def test_console_script(tmp_path):
    q = sql_file(tmp_path, "SELECT count(*) FROM airports")
    proc = subprocess.run(["rdbridge", "run", "--schema", FLIGHT, "--data", FLIGHT_DATA, "--sql", q], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.splitlines()[1] == "8"


def test_module_entry(tmp_path):
    q = sql_file(tmp_path, "SELECT Name FROM city WHERE Population > ID")
    proc = subprocess.run(
        [sys.executable, "-m", "rdbridge.cli", "transpile", "--schema", str(DATA / "world_1"), "--sql", q],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2 and "UnsupportedConstruct" in proc.stderr
