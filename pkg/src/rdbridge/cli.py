"""Command-line entry point: ``rdbridge <command> ...``.

Exit codes: 0 success, 1 bad input, 2 query rejected as out of dialect,
3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import semql
from .engines import eval_sparql, eval_sql
from .errors import InputError, RdbridgeError
from .evaluation import categorize, execution_accuracy, hardness, profile_query
from .mapping import DEFAULT_PREFIX, derive_ontology, materialize, ontology_prompt_summary, serialize_graph
from .pipeline import transpile
from .schema import RelationalSchema, load_data, load_hints, load_schema, repair_schema
from .sparql import serialize_sparql

log = logging.getLogger("rdbridge")

_IRI = re.compile(r"[A-Za-z][A-Za-z0-9+.\-]*:[^\s<>\"{}|\\^`]*[/#]")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors are input errors, not rejections
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class CliInputError(InputError):
    pass


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rdbridge", description="Relational-to-RDF mapping and SQL-to-SPARQL transpilation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp: argparse.ArgumentParser, data: bool = False) -> None:
        sp.add_argument("--schema", required=True, help="schema JSON file, or a directory holding schema.json")
        sp.add_argument("--hints", help="repair hints JSON")
        sp.add_argument("--prefix", help=f"namespace IRI (default $RDBRIDGE_PREFIX or {DEFAULT_PREFIX})")
        sp.add_argument("--output", "-o", help="write the artifact here instead of stdout")
        if data:
            sp.add_argument("--data", required=True, help="directory of <table>.csv files")

    common(sub.add_parser("map", help="derive the ontology"))
    sp = sub.add_parser("materialize", help="write the RDF graph as N-Triples")
    common(sp, data=True)
    sp.add_argument("--report", help="write the materialization report (JSON) here")

    sp = sub.add_parser("transpile", help="translate one SQL query to SPARQL")
    common(sp)
    sp.add_argument("--sql", required=True, help="file holding the SQL query")
    sp.add_argument("--semql", help="also write the SemQL s-expression here")
    sp.add_argument("--emit-prefixed-iris", action="store_true", help="use a PREFIX header instead of full IRIs")

    sp = sub.add_parser("run", help="run one query on either engine")
    common(sp, data=True)
    sp.add_argument("--sql", required=True, help="file holding the SQL query")
    sp.add_argument("--engine", choices=("sql", "sparql"), default="sparql")

    sp = sub.add_parser("eval", help="execution accuracy over a corpus")
    common(sp, data=True)
    sp.add_argument("--corpus", required=True, help="directory of *.sql files or a file with one query per line")
    sp.add_argument("--order-insensitive", action="store_true", help="compare ordered results as multisets")

    sp = sub.add_parser("analyze", help="profile queries and assign hardness tiers")
    common(sp)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--sql", help="file holding one SQL query")
    g.add_argument("--corpus", help="directory of *.sql files or a file with one query per line")

    common(sub.add_parser("prompt", help="ontology summary for few-shot prompts"))
    return p


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _prefix(args: argparse.Namespace) -> str:
    prefix = args.prefix or os.environ.get("RDBRIDGE_PREFIX") or DEFAULT_PREFIX
    if not _IRI.fullmatch(prefix):
        raise CliInputError(f"prefix {prefix!r} must be an absolute IRI ending in '/' or '#'")
    return prefix


def _schema(args: argparse.Namespace) -> RelationalSchema:
    path = Path(args.schema)
    if path.is_dir():
        path = path / "schema.json"
    schema = load_schema(path)
    hints = load_hints(args.hints) if args.hints else None
    repaired, report = repair_schema(schema, hints)
    for change in report.changes:
        log.info("repair: %s %s %s", change.kind, change.table, change.detail)
    return repaired


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliInputError(f"cannot read {path}: {exc.strerror or exc}") from None


def _write(args: argparse.Namespace, text: str) -> None:
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def read_corpus(path: str) -> list[tuple[str, str]]:
    """``*.sql`` files of a directory (id = file stem), or one query per line."""
    p = Path(path)
    if p.is_dir():
        return [(f.stem, f.read_text(encoding="utf-8").strip()) for f in sorted(p.glob("*.sql"))]
    items = []
    for n, line in enumerate(_read(path).splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("--"):
            continue
        qid, sep, text = line.partition("\t")
        items.append((qid, text) if sep else (f"q{n}", line))
    return items


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_map(args: argparse.Namespace) -> int:
    ontology = derive_ontology(_schema(args), _prefix(args))
    _write(args, json.dumps(ontology.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_materialize(args: argparse.Namespace) -> int:
    schema = _schema(args)
    ontology = derive_ontology(schema, _prefix(args))
    graph = materialize(schema, load_data(schema, args.data), ontology)
    _write(args, serialize_graph(graph))
    report = json.dumps(graph.report(), indent=2, sort_keys=True) + "\n"
    if args.report:
        Path(args.report).write_text(report, encoding="utf-8")
    print(f"{len(graph)} triples, {len(graph.skipped)} skipped references", file=sys.stderr)
    return 0


def cmd_transpile(args: argparse.Namespace) -> int:
    schema = _schema(args)
    ontology = derive_ontology(schema, _prefix(args))
    t = transpile(_read(args.sql), schema, ontology)
    if args.semql:
        Path(args.semql).write_text(semql.to_sexpr(t.tree) + "\n", encoding="utf-8")
    _write(args, serialize_sparql(t.sparql, prefixed=args.emit_prefixed_iris))
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    schema = _schema(args)
    ontology = derive_ontology(schema, _prefix(args))
    instance = load_data(schema, args.data)
    t = transpile(_read(args.sql), schema, ontology)
    if args.engine == "sql":
        result = eval_sql(t.sql, instance)
    else:
        result = eval_sparql(t.sparql, materialize(schema, instance, ontology))
    _write(args, result.to_csv())
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    schema = _schema(args)
    ontology = derive_ontology(schema, _prefix(args))
    instance = load_data(schema, args.data)
    graph = materialize(schema, instance, ontology)
    report = execution_accuracy(read_corpus(args.corpus), schema, instance, graph, ontology, args.order_insensitive)
    if args.output:
        Path(args.output).write_text(report.to_json(), encoding="utf-8")
        sys.stdout.write(report.to_table())
    else:
        sys.stdout.write(report.to_json())
        sys.stderr.write(report.to_table())
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    schema = _schema(args)
    ontology = derive_ontology(schema, _prefix(args))
    corpus = [("query", _read(args.sql))] if args.sql else read_corpus(args.corpus)
    rows = []
    status = 0
    for qid, text in corpus:
        try:
            t = transpile(text, schema, ontology)
        except RdbridgeError as e:
            rows.append({"query_id": qid, "error": f"{e.name}: {e}"})
            if args.sql:
                status = e.exit_code
            continue
        profile = profile_query(t.tree, t.sparql)
        rows.append(
            {
                "query_id": qid,
                "profile": profile.to_dict(),
                "hardness": hardness(profile),
                "categories": sorted(categorize(profile)),
            }
        )
    _write(args, json.dumps(rows, indent=2, sort_keys=True) + "\n")
    for r in rows:
        detail = r.get("error") or f"{r['hardness']:<6} {','.join(r['categories'])}"
        print(f"{r['query_id']:<24} {detail}", file=sys.stderr if not args.output else sys.stdout)
    return status


def cmd_prompt(args: argparse.Namespace) -> int:
    _write(args, ontology_prompt_summary(derive_ontology(_schema(args), _prefix(args))))
    return 0


COMMANDS = {
    "map": cmd_map,
    "materialize": cmd_materialize,
    "transpile": cmd_transpile,
    "run": cmd_run,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "prompt": cmd_prompt,
}


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except RdbridgeError as e:
        print(f"rdbridge: {e.name}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"rdbridge: InputError: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # anything else is our bug
        print(f"rdbridge: InternalError: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
