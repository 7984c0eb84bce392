"""SQL frontend: parsing, name resolution and normalisation of the SPJA dialect."""

from .ast import Block, Query, SetOp, to_sql
from .normalize import normalize_sql
from .parser import parse_sql, parse_syntax

__all__ = ["Block", "Query", "SetOp", "normalize_sql", "parse_sql", "parse_syntax", "to_sql"]
