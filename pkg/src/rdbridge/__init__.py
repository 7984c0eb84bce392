"""rdbridge: Direct Mapping of relational data to RDF and SQL-to-SPARQL transpilation."""

from .engines import ResultSet, eval_sparql, eval_sql
from .evaluation import (
    AccuracyReport,
    QueryProfile,
    categorize,
    compare_results,
    execution_accuracy,
    hardness,
    profile_query,
)
from .mapping import DEFAULT_PREFIX, Graph, Ontology, derive_ontology, materialize, ontology_prompt_summary, serialize_graph
from .pipeline import Transpilation, transpile
from .schema import (
    RelationalInstance,
    RelationalSchema,
    RepairHints,
    load_data,
    load_schema,
    make_instance,
    repair_schema,
    schema_from_dict,
)
from .semql import lower_to_semql, to_sexpr, validate_semql
from .sparql import SparqlQuery, complete_group_by, emit_sparql, lower_set_operation, serialize_sparql
from .sql import normalize_sql, parse_sql

__version__ = "0.1.0"
