"""Recursive-descent parser for the SPJA dialect.

Parsing runs in two passes: a syntactic pass producing an unresolved tree
(so out-of-dialect constructs are reported before any name lookup), then
resolution of every table and column against the schema.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Optional

from ..errors import SqlSyntaxError, UnknownIdentifier, UnsupportedConstruct
from ..schema import RelationalSchema, normalize_name
from .ast import (
    AGGREGATES,
    And,
    Aggregate,
    Arith,
    Between,
    Block,
    ColumnRef,
    Compare,
    Expr,
    InQuery,
    Join,
    Or,
    OrderKey,
    Query,
    ScalarQuery,
    SelectItem,
    SetOp,
    TableRef,
    Value,
)

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|--[^\n]*)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<string>'(?:[^']|'')*')
  | (?P<dquote>"(?:[^"]|"")*")
  | (?P<btick>`[^`]*`)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|!=|<>|\|\||[=<>+\-*/%(),.;])
    """,
    re.VERBOSE,
)

KEYWORDS = {
    "select", "distinct", "from", "where", "group", "by", "having", "order", "asc", "desc",
    "limit", "offset", "join", "inner", "left", "right", "full", "outer", "cross", "natural",
    "on", "using", "as", "and", "or", "not", "in", "between", "like", "is", "null", "union",
    "intersect", "except", "all", "exists", "case", "when", "then", "else", "end", "cast",
    "over", "partition", "with", "true", "false", "insert", "update", "delete", "create",
    "drop", "alter", "glob", "escape",
}

_STATEMENTS = {"insert", "update", "delete", "create", "drop", "alter"}


@dataclass(frozen=True)
class Token:
    kind: str  # number | string | ident | keyword | op | eof
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise SqlSyntaxError("unexpected character", pos, text[pos])
        kind = m.lastgroup
        raw = m.group()
        if kind == "ws":
            pass
        elif kind == "dquote":
            raise UnsupportedConstruct("double-quoted string literal", raw)
        elif kind == "btick":
            tokens.append(Token("ident", raw[1:-1].lower(), pos))
        elif kind == "ident":
            low = raw.lower()
            tokens.append(Token("keyword" if low in KEYWORDS else "ident", low, pos))
        elif kind == "op":
            tokens.append(Token("op", "!=" if raw == "<>" else raw, pos))
        else:
            tokens.append(Token(kind, raw, pos))
        pos = m.end()
    tokens.append(Token("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    # -- token helpers ------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def at(self, *texts: str) -> bool:
        return self.tok.kind in ("keyword", "op") and self.tok.text in texts

    def accept(self, *texts: str) -> Optional[Token]:
        if self.at(*texts):
            tok = self.tok
            self.i += 1
            return tok
        return None

    def expect(self, text: str) -> Token:
        tok = self.accept(text)
        if tok is None:
            raise SqlSyntaxError(f"expected {text.upper()!r}", self.tok.pos, self.tok.text or "end of input")
        return tok

    def error(self, message: str) -> SqlSyntaxError:
        return SqlSyntaxError(message, self.tok.pos, self.tok.text or "end of input")

    def ident(self) -> str:
        if self.tok.kind != "ident":
            raise self.error("expected identifier")
        text = self.tok.text
        self.i += 1
        return text

    # -- statements ---------------------------------------------------------

    def statement(self) -> Query:
        if self.tok.kind == "keyword" and self.tok.text in _STATEMENTS:
            raise UnsupportedConstruct("DDL/DML statement", self.tok.text.upper())
        if self.at("with"):
            raise UnsupportedConstruct("common table expression")
        query = self.query()
        self.accept(";")
        if self.tok.kind != "eof":
            raise self.error("unexpected trailing input")
        return query

    def query(self) -> Query:
        left: Query = self.block()
        while self.at("union", "intersect", "except"):
            if isinstance(left, Block) and (left.order_by or left.limit is not None):
                raise self.error("ORDER BY/LIMIT must follow the last branch of a set operation")
            kind = self.tok.text
            self.i += 1
            if self.accept("all"):
                raise UnsupportedConstruct(f"{kind.upper()} ALL")
            right = self.block()
            left = SetOp(kind, left, right)
        if isinstance(left, SetOp):
            last = left.right
            if isinstance(last, Block) and (last.order_by or last.limit is not None):
                raise UnsupportedConstruct("ORDER BY/LIMIT over set operation")
        return left

    def block(self) -> Block:
        self.expect("select")
        distinct = bool(self.accept("distinct"))
        self.accept("all")
        items = [self.select_item()]
        while self.accept(","):
            items.append(self.select_item())
        self.expect("from")
        from_ = [self.table_ref()]
        joins: list[Join] = []
        while True:
            if self.accept(","):
                from_.append(self.table_ref())
                continue
            if self.at("left", "right", "full", "outer"):
                raise UnsupportedConstruct("outer join")
            if self.at("natural"):
                raise UnsupportedConstruct("natural join")
            if self.at("cross"):
                raise UnsupportedConstruct("cross join")
            if self.accept("inner"):
                self.expect("join")
            elif not self.accept("join"):
                break
            table = self.table_ref()
            on = None
            if self.accept("on"):
                on = self.expr()
            elif self.at("using"):
                raise UnsupportedConstruct("JOIN ... USING")
            joins.append(Join(table, on))
        where = self.expr() if self.accept("where") else None
        group_by: list[Expr] = []
        if self.accept("group"):
            self.expect("by")
            group_by.append(self.expr())
            while self.accept(","):
                group_by.append(self.expr())
        having = self.expr() if self.accept("having") else None
        order_by = []
        if self.accept("order"):
            self.expect("by")
            order_by.append(self.order_key())
            while self.accept(","):
                order_by.append(self.order_key())
        limit = None
        if self.accept("limit"):
            tok = self.tok
            if tok.kind != "number" or not tok.text.isdigit():
                raise self.error("LIMIT expects a positive integer")
            limit = int(tok.text)
            if limit <= 0:
                raise self.error("LIMIT expects a positive integer")
            self.i += 1
            if self.at("offset", ","):
                raise UnsupportedConstruct("LIMIT offset")
        for g in group_by:
            if not isinstance(g, ColumnRef):
                raise UnsupportedConstruct("GROUP BY expression", "only plain columns may be grouped")
        return Block(
            select=tuple(items),
            from_=tuple(from_),
            joins=tuple(joins),
            where=where,
            group_by=tuple(group_by),
            having=having,
            order_by=tuple(order_by),
            limit=limit,
            distinct=distinct,
        )

    def select_item(self) -> SelectItem:
        if self.at("*"):
            self.i += 1
            return SelectItem(ColumnRef("*"))
        expr = self.expr()
        alias = None
        if self.accept("as"):
            alias = self.ident() if self.tok.kind == "ident" else self._string_alias()
        elif self.tok.kind == "ident":
            alias = self.ident()
        return SelectItem(expr, alias)

    def _string_alias(self) -> str:
        if self.tok.kind == "string":
            text = self.tok.text[1:-1].replace("''", "'").lower()
            self.i += 1
            return text
        raise self.error("expected alias")

    def table_ref(self) -> TableRef:
        if self.at("("):
            raise UnsupportedConstruct("derived table", "subquery in FROM")
        name = self.ident()
        alias = name
        if self.accept("as"):
            alias = self.ident()
        elif self.tok.kind == "ident":
            alias = self.ident()
        return TableRef(name, alias)

    def order_key(self) -> OrderKey:
        expr = self.expr()
        desc = False
        if self.accept("desc"):
            desc = True
        else:
            self.accept("asc")
        return OrderKey(expr, desc)

    # -- expressions --------------------------------------------------------

    def expr(self) -> Expr:
        left = self.and_expr()
        while self.accept("or"):
            left = Or(left, self.and_expr())
        return left

    def and_expr(self) -> Expr:
        left = self.predicate()
        while self.accept("and"):
            left = And(left, self.predicate())
        return left

    def predicate(self) -> Expr:
        if self.at("not"):
            if self.peek().text == "exists":
                raise UnsupportedConstruct("EXISTS subquery")
            raise UnsupportedConstruct("NOT operator")
        if self.at("exists"):
            raise UnsupportedConstruct("EXISTS subquery")
        left = self.additive()
        if self.at("=", "!=", "<", "<=", ">", ">="):
            op = self.tok.text
            self.i += 1
            if self.at("all", "any", "some"):
                raise UnsupportedConstruct("quantified comparison", self.tok.text.upper())
            return Compare(op, left, self.additive())
        negated = False
        if self.at("not"):
            nxt = self.peek().text
            if nxt == "like":
                raise UnsupportedConstruct("NOT LIKE")
            if nxt == "between":
                raise UnsupportedConstruct("NOT BETWEEN")
            if nxt != "in":
                raise self.error("unexpected NOT")
            self.i += 1
            negated = True
        if self.accept("in"):
            self.expect("(")
            if not self.at("select"):
                raise UnsupportedConstruct("IN value list")
            sub = self.query()
            self.expect(")")
            return InQuery(left, sub, negated)
        if self.accept("between"):
            low = self.additive()
            self.expect("and")
            return Between(left, low, self.additive())
        if self.accept("like"):
            pattern = self.additive()
            if self.at("escape"):
                raise UnsupportedConstruct("LIKE ... ESCAPE")
            return Compare("like", left, pattern)
        if self.at("is"):
            raise UnsupportedConstruct("IS [NOT] NULL predicate")
        if self.at("glob"):
            raise UnsupportedConstruct("GLOB")
        return left

    def additive(self) -> Expr:
        left = self.multiplicative()
        while self.at("+", "-"):
            op = self.tok.text
            self.i += 1
            left = Arith(op, left, self.multiplicative())
        if self.at("||"):
            raise UnsupportedConstruct("string concatenation")
        return left

    def multiplicative(self) -> Expr:
        left = self.unary()
        while self.at("*", "/", "%"):
            if self.at("%"):
                raise UnsupportedConstruct("modulo operator")
            op = self.tok.text
            self.i += 1
            left = Arith(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.at("-", "+"):
            sign = self.tok.text
            self.i += 1
            if self.tok.kind != "number":
                raise UnsupportedConstruct("unary operator on non-literal")
            value = self.number()
            return Value(-value.value if sign == "-" else value.value)
        return self.primary()

    def number(self) -> Value:
        text = self.tok.text
        self.i += 1
        if re.fullmatch(r"\d+", text):
            return Value(int(text))
        return Value(float(text))

    def primary(self) -> Expr:
        tok = self.tok
        if tok.kind == "number":
            return self.number()
        if tok.kind == "string":
            self.i += 1
            return Value(tok.text[1:-1].replace("''", "'"))
        if self.accept("true"):
            return Value(True)
        if self.accept("false"):
            return Value(False)
        if self.at("null"):
            raise UnsupportedConstruct("NULL literal")
        if self.at("case"):
            raise UnsupportedConstruct("CASE expression")
        if self.at("cast"):
            raise UnsupportedConstruct("CAST")
        if self.accept("("):
            if self.at("select"):
                sub = self.query()
                self.expect(")")
                return ScalarQuery(sub)
            inner = self.expr()
            self.expect(")")
            return inner
        if tok.kind == "ident":
            if self.peek().text == "(":
                return self.call()
            self.i += 1
            if self.accept("."):
                if self.accept("*"):
                    return ColumnRef("*", tok.text)
                return self._maybe_window(ColumnRef(self.ident(), tok.text))
            return self._maybe_window(ColumnRef(tok.text))
        raise self.error("expected expression")

    def _maybe_window(self, expr: Expr) -> Expr:
        if self.at("over"):
            raise UnsupportedConstruct("window function")
        return expr

    def call(self) -> Expr:
        name = self.ident()
        self.expect("(")
        if name not in AGGREGATES:
            raise UnsupportedConstruct(f"function {name}()")
        distinct = bool(self.accept("distinct"))
        if self.at("*"):
            self.i += 1
            arg: Expr = ColumnRef("*")
            if name != "count":
                raise self.error(f"{name}(*) is not valid")
        else:
            arg = self.expr()
        self.expect(")")
        if self.at("over"):
            raise UnsupportedConstruct("window function")
        return Aggregate(name, arg, distinct)


def parse_syntax(text: str) -> Query:
    """Syntactic pass only: names are left unresolved."""
    return _Parser(text).statement()


# ---------------------------------------------------------------------------
# Name resolution
# ---------------------------------------------------------------------------


class _Scope:
    def __init__(self, schema: RelationalSchema, block: Block, outer: Optional["_Scope"]):
        self.schema = schema
        self.outer = outer
        self.aliases: dict[str, str] = {}
        for ref in block.tables:
            if not schema.has_table(ref.name):
                raise UnknownIdentifier(f"unknown table {ref.name!r}")
            alias = normalize_name(ref.alias)
            if alias in self.aliases:
                raise UnknownIdentifier(f"alias {alias!r} is not unique")
            self.aliases[alias] = normalize_name(ref.name)

    def lookup(self, ref: ColumnRef) -> Optional[ColumnRef]:
        if ref.alias is not None:
            qual = ref.alias
            if qual not in self.aliases:
                matches = [a for a, t in self.aliases.items() if t == qual]
                if len(matches) != 1:
                    return None
                qual = matches[0]
            table = self.schema.table(self.aliases[qual])
            return ColumnRef(ref.column, qual, table.name) if table.has_column(ref.column) else None
        hits = [a for a, t in self.aliases.items() if self.schema.table(t).has_column(ref.column)]
        if len(hits) > 1:
            raise UnknownIdentifier(f"column {ref.column!r} is ambiguous between {', '.join(hits)}")
        return ColumnRef(ref.column, hits[0], self.aliases[hits[0]]) if hits else None

    def resolve(self, ref: ColumnRef) -> ColumnRef:
        found = self.lookup(ref)
        if found is not None:
            return found
        scope = self.outer
        while scope is not None:
            try:
                if scope.lookup(ref) is not None:
                    raise UnsupportedConstruct("correlated subquery", f"reference to outer column {ref.column!r}")
            except UnknownIdentifier:
                pass
            scope = scope.outer
        name = ref.column if ref.alias is None else f"{ref.alias}.{ref.column}"
        raise UnknownIdentifier(f"unknown column {name!r}")


def _resolve_query(query: Query, schema: RelationalSchema, outer: Optional[_Scope]) -> Query:
    if isinstance(query, SetOp):
        return SetOp(query.kind, _resolve_query(query.left, schema, outer), _resolve_query(query.right, schema, outer))
    return _resolve_block(query, schema, outer)


def _resolve_block(block: Block, schema: RelationalSchema, outer: Optional[_Scope]) -> Block:
    scope = _Scope(schema, block, outer)

    def res(expr: Expr) -> Expr:
        if isinstance(expr, ColumnRef):
            return expr if expr.is_star else scope.resolve(expr)
        if isinstance(expr, Value):
            return expr
        if isinstance(expr, Aggregate):
            return replace(expr, arg=res(expr.arg))
        if isinstance(expr, (Arith, Compare, And, Or)):
            return replace(expr, left=res(expr.left), right=res(expr.right))
        if isinstance(expr, Between):
            return Between(res(expr.expr), res(expr.low), res(expr.high))
        if isinstance(expr, InQuery):
            return InQuery(res(expr.expr), _resolve_query(expr.query, schema, scope), expr.negated)
        if isinstance(expr, ScalarQuery):
            return ScalarQuery(_resolve_query(expr.query, schema, scope))
        raise TypeError(expr)

    items: list[SelectItem] = []
    for item in block.select:
        e = item.expr
        if isinstance(e, ColumnRef) and e.is_star:
            if e.alias is None:
                targets = list(scope.aliases)
            else:
                if e.alias not in scope.aliases:
                    raise UnknownIdentifier(f"unknown table alias {e.alias!r}")
                targets = [e.alias]
            for alias in targets:
                for col in schema.table(scope.aliases[alias]).columns:
                    items.append(SelectItem(ColumnRef(col.name, alias, scope.aliases[alias])))
            continue
        items.append(SelectItem(res(e), normalize_name(item.alias) if item.alias else None))

    by_alias = {i.alias: i.expr for i in items if i.alias}

    def res_output(expr: Expr) -> Expr:
        # ORDER BY / HAVING may name a select-list alias
        if isinstance(expr, ColumnRef) and expr.alias is None and expr.column in by_alias:
            if scope.lookup(expr) is None:
                return by_alias[expr.column]
        if isinstance(expr, (Compare, And, Or, Arith)):
            return replace(expr, left=res_output(expr.left), right=res_output(expr.right))
        return res(expr)

    return Block(
        select=tuple(items),
        from_=tuple(TableRef(normalize_name(t.name), normalize_name(t.alias)) for t in block.from_),
        joins=tuple(
            Join(TableRef(normalize_name(j.table.name), normalize_name(j.table.alias)), None if j.on is None else res(j.on))
            for j in block.joins
        ),
        where=None if block.where is None else res(block.where),
        group_by=tuple(res_output(g) for g in block.group_by),
        having=None if block.having is None else res_output(block.having),
        order_by=tuple(OrderKey(res_output(k.expr), k.desc) for k in block.order_by),
        limit=block.limit,
        distinct=block.distinct,
    )


def parse_sql(text: str, schema: RelationalSchema) -> Query:
    """Parse one SQL statement and resolve all names against ``schema``."""
    return _resolve_query(parse_syntax(text), schema, None)
