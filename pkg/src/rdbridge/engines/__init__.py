"""Reference evaluators for SQL ASTs and emitted SPARQL queries."""

from .results import ResultSet, sort_key, values_equal
from .sparql_engine import eval_sparql
from .sql_engine import eval_sql

__all__ = ["ResultSet", "eval_sparql", "eval_sql", "sort_key", "values_equal"]
