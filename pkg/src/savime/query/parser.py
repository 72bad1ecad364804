"""Recursive-descent parser for query and DDL text.

Grammar (keywords and operator names are case-insensitive)::

    script     := statement (';' statement)* [';']
    statement  := expr
    expr       := and_expr ('or' and_expr)*
    and_expr   := not_expr ('and' not_expr)*
    not_expr   := 'not' not_expr | comparison
    comparison := additive [('=' | '<>' | '<' | '<=' | '>' | '>=') additive]
    additive   := term (('+' | '-') term)*
    term       := unary (('*' | '/') unary)*
    unary      := ('-' | '+') unary | primary
    primary    := INT | FLOAT | STRING | 'true' | 'false'
                | IDENT '(' [expr (',' expr)* [',']] ')'
                | IDENT | '(' expr ')'
"""
from __future__ import annotations

from ..errors import QuerySyntaxError
from . import ast
from .lexer import EOF, FLOAT, IDENT, INT, KEYWORD, STRING, Token, tokenize, unquote


class Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        if t.kind != EOF:
            self.i += 1
        return t

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == EOF else repr(tok.value)
        raise QuerySyntaxError(f"{message}, found {found}", tok.pos, self.text)

    def expect_op(self, op: str) -> Token:
        if not self.tok.is_op(op):
            self.error(f"expected {op!r}")
        return self.advance()

    # -- entry points -----------------------------------------------------------

    def parse_statement(self) -> ast.Node:
        node = self.expr()
        if self.tok.kind != EOF:
            self.error("expected end of statement")
        return node

    def parse_script(self) -> list[ast.Node]:
        out = []
        while self.tok.kind != EOF:
            if self.tok.is_op(";"):
                self.advance()
                continue
            out.append(self.expr())
            if self.tok.kind != EOF:
                self.expect_op(";")
        return out

    # -- expressions ------------------------------------------------------------

    def expr(self) -> ast.Node:
        node = self.and_expr()
        while self.tok.is_keyword("or"):
            t = self.advance()
            node = ast.Binary("or", node, self.and_expr(), pos=t.pos)
        return node

    def and_expr(self) -> ast.Node:
        node = self.not_expr()
        while self.tok.is_keyword("and"):
            t = self.advance()
            node = ast.Binary("and", node, self.not_expr(), pos=t.pos)
        return node

    def not_expr(self) -> ast.Node:
        if self.tok.is_keyword("not"):
            t = self.advance()
            return ast.Unary("not", self.not_expr(), pos=t.pos)
        return self.comparison()

    def comparison(self) -> ast.Node:
        node = self.additive()
        if self.tok.is_op(*ast.COMPARISONS):
            t = self.advance()
            node = ast.Binary(t.value, node, self.additive(), pos=t.pos)
        return node

    def additive(self) -> ast.Node:
        node = self.term()
        while self.tok.is_op("+", "-"):
            t = self.advance()
            node = ast.Binary(t.value, node, self.term(), pos=t.pos)
        return node

    def term(self) -> ast.Node:
        node = self.unary()
        while self.tok.is_op("*", "/"):
            t = self.advance()
            node = ast.Binary(t.value, node, self.unary(), pos=t.pos)
        return node

    def unary(self) -> ast.Node:
        if self.tok.is_op("-", "+"):
            t = self.advance()
            operand = self.unary()
            if t.value == "+":
                return operand
            if isinstance(operand, ast.Num):
                return ast.Num(-operand.value, pos=t.pos)
            return ast.Unary("-", operand, pos=t.pos)
        return self.primary()

    def primary(self) -> ast.Node:
        t = self.tok
        if t.kind == INT:
            self.advance()
            return ast.Num(int(t.value), pos=t.pos)
        if t.kind == FLOAT:
            self.advance()
            return ast.Num(float(t.value), pos=t.pos)
        if t.kind == STRING:
            self.advance()
            return ast.Str(unquote(t.value), pos=t.pos)
        if t.kind == KEYWORD and t.value.lower() in ("true", "false"):
            self.advance()
            return ast.Bool(t.value.lower() == "true", pos=t.pos)
        if t.kind == IDENT:
            self.advance()
            if self.tok.is_op("("):
                return self.call(t)
            return ast.Ref(t.value, pos=t.pos)
        if t.is_op("("):
            self.advance()
            node = self.expr()
            self.expect_op(")")
            return node
        self.error("expected an expression")

    def call(self, name: Token) -> ast.Call:
        self.expect_op("(")
        args: list[ast.Node] = []
        while not self.tok.is_op(")"):
            args.append(self.expr())
            if self.tok.is_op(","):
                self.advance()
            elif not self.tok.is_op(")"):
                self.error("expected ',' or ')'")
        self.expect_op(")")
        return ast.Call(name.value.lower(), tuple(args), pos=name.pos)


def parse_text(text: str) -> ast.Node:
    """Parse one statement into a syntax tree."""
    return Parser(text).parse_statement()


def parse_script(text: str) -> list[ast.Node]:
    return Parser(text).parse_script()
