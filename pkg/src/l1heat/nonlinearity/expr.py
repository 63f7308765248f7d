"""Recursive-descent parser for source-term expressions in the variable ``u``.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | atom
    atom   := NUMBER | 'u' | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Functions: pow(e, c), min(e, e), max(e, e), abs(e), ln(e), exp(e), sign(e),
odd_extend(e).  ``odd_extend(e)`` evaluates ``e`` at |u| and multiplies by sign(u).
The result of :func:`compile_expression` is a vectorised callable on numpy arrays.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

Evaluator = Callable[[np.ndarray], np.ndarray]


class ExpressionSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Token:
    kind: str  # NUM, NAME, OP, END
    text: str
    pos: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/(),])
    """,
    re.VERBOSE,
)

_FUNCTIONS: dict[str, tuple[int, Callable]] = {
    "pow": (2, np.power),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
    "abs": (1, np.abs),
    "ln": (1, np.log),
    "exp": (1, np.exp),
    "sign": (1, np.sign),
}


def _line_col(text: str, pos: int) -> tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExpressionSyntaxError(f"unexpected character {text[pos]!r}", *_line_col(text, pos))
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token({"num": "NUM", "name": "NAME", "op": "OP"}[kind], m.group(), pos))
        pos = m.end()
    tokens.append(Token("END", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        return ExpressionSyntaxError(message, *_line_col(self.text, tok.pos))

    def expect(self, text: str) -> Token:
        if self.tok.text != text or self.tok.kind not in ("OP",):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        tok = self.tok
        self.i += 1
        return tok

    def parse(self) -> Evaluator:
        node = self.expr()
        if self.tok.kind != "END":
            raise self.error(f"unexpected {self.tok.text!r}")
        return node

    def expr(self) -> Evaluator:
        node = self.term()
        while self.tok.kind == "OP" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            rhs = self.term()
            node = _binary(np.add if op == "+" else np.subtract, node, rhs)
        return node

    def term(self) -> Evaluator:
        node = self.unary()
        while self.tok.kind == "OP" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            rhs = self.unary()
            node = _binary(np.multiply if op == "*" else np.divide, node, rhs)
        return node

    def unary(self) -> Evaluator:
        if self.tok.kind == "OP" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            inner = self.unary()
            return inner if op == "+" else (lambda u: -inner(u))
        return self.atom()

    def atom(self) -> Evaluator:
        tok = self.tok
        if tok.kind == "NUM":
            self.i += 1
            value = float(tok.text)
            return lambda u: np.full(np.shape(u), value)
        if tok.kind == "NAME":
            self.i += 1
            if tok.text == "u":
                return lambda u: u
            if self.tok.text != "(":
                raise self.error(f"unknown variable {tok.text!r}", tok)
            return self.call(tok)
        if tok.kind == "OP" and tok.text == "(":
            self.i += 1
            node = self.expr()
            self.expect(")")
            return node
        raise self.error(f"unexpected {tok.text or 'end of input'!r}")

    def call(self, name: Token) -> Evaluator:
        self.expect("(")
        args = [self.expr()]
        while self.tok.kind == "OP" and self.tok.text == ",":
            self.i += 1
            args.append(self.expr())
        self.expect(")")
        if name.text == "odd_extend":
            if len(args) != 1:
                raise self.error("odd_extend takes 1 argument", name)
            inner = args[0]
            return lambda u: np.sign(u) * inner(np.abs(u))
        if name.text not in _FUNCTIONS:
            raise self.error(f"unknown function {name.text!r}", name)
        arity, fn = _FUNCTIONS[name.text]
        if len(args) != arity:
            raise self.error(f"{name.text} takes {arity} argument(s), got {len(args)}", name)
        if arity == 1:
            (a,) = args
            return lambda u: fn(a(u))
        return _binary(fn, *args)


def _binary(fn, a: Evaluator, b: Evaluator) -> Evaluator:
    return lambda u: fn(a(u), b(u))


def compile_expression(text: str) -> Evaluator:
    return _Parser(text).parse()
