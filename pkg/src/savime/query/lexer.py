"""Tokenizer for the functional query language."""
from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import QuerySyntaxError

KEYWORDS = {"and", "or", "not", "true", "false"}

IDENT = "IDENT"
INT = "INT"
FLOAT = "FLOAT"
STRING = "STRING"
OP = "OP"
KEYWORD = "KEYWORD"
EOF = "EOF"

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<float>(?:\d+\.\d*|\.\d+)(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<op><>|<=|>=|[=<>+\-*/(),;])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    value: str
    pos: int

    @property
    def end(self) -> int:
        return self.pos + len(self.value)

    def is_op(self, *ops: str) -> bool:
        return self.kind == OP and self.value in ops

    def is_keyword(self, *words: str) -> bool:
        return self.kind == KEYWORD and self.value.lower() in words


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos] == '"':
                raise QuerySyntaxError("unterminated string literal", pos, text)
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        value = m.group()
        if kind == "ident":
            tokens.append(Token(KEYWORD if value.lower() in KEYWORDS else IDENT, value, pos))
        elif kind in ("int", "float"):
            end = m.end()
            # ``3x`` is a malformed number, not INT followed by IDENT
            if end < n and (text[end].isalpha() or text[end] == "_"):
                raise QuerySyntaxError(f"malformed number {text[pos:end + 1]!r}", pos, text)
            tokens.append(Token(INT if kind == "int" else FLOAT, value, pos))
        elif kind == "string":
            tokens.append(Token(STRING, value, pos))
        elif kind == "op":
            tokens.append(Token(OP, value, pos))
        pos = m.end()
    tokens.append(Token(EOF, "", n))
    return tokens


def unquote(literal: str) -> str:
    body = literal[1:-1]
    return re.sub(r"\\(.)", r"\1", body)


def quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
