"""SQL text -> SQL AST -> SemQL -> SPARQL, as one call."""

from __future__ import annotations

from dataclasses import dataclass

from . import semql
from .errors import EmissionBug
from .mapping import Ontology
from .schema import RelationalSchema
from .sparql import SparqlQuery, emit_sparql
from .sql import Query, normalize_sql, parse_sql


@dataclass(frozen=True)
class Transpilation:
    sql: Query  # normalized AST
    tree: semql.Z
    sparql: SparqlQuery


def transpile(sql_text: str, schema: RelationalSchema, ontology: Ontology) -> Transpilation:
    ast = normalize_sql(parse_sql(sql_text, schema), schema)
    tree = semql.lower_to_semql(ast, schema)
    diags = semql.validate_semql(tree, schema)
    if diags:
        raise EmissionBug("lowering produced a non-conforming tree: " + "; ".join(diags))
    return Transpilation(ast, tree, emit_sparql(tree, ontology))
