"""Recursive-descent parser for ``.fpdsl`` sources.

Grammar::

    file     := decl*
    decl     := 'func' NAME '(' [param (',' param)*] ')' '=' expr
    param    := NAME ['in' interval]
    interval := ('[' | '(') bound ',' bound (']' | ')')
    expr     := term (('+' | '-') term)*
    term     := unary (('*' | '/') unary)*
    unary    := '-' unary | power
    power    := atom ['^' unary]
    atom     := NUMBER | NAME | NAME '(' args ')' | '(' expr ')'

``#`` starts a comment running to the end of the line. A minus sign applied
directly to a literal that is not the base of ``^`` produces a negative
literal rather than a negation node.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .ast import FUNCTIONS, Binary, Constant, Expr, FunctionDef, Interval, Param, ParamSpec, Unary


class DSLError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f"{line}:{column}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class DSLSyntaxError(DSLError):
    pass


class UnknownIdentifierError(DSLError):
    pass


class ArityError(DSLError):
    pass


class IntervalError(DSLError):
    pass


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<newline>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),=\[\]])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise DSLSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "newline":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


_BINARY_FUNCTIONS = {"pow": "pow"}


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0
        self.scope: dict[str, int] = {}

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def advance(self) -> Token:
        tok = self.tok
        self.pos += 1
        return tok

    def error(self, message: str, tok: Token | None = None, cls=DSLSyntaxError):
        tok = tok or self.tok
        return cls(message, tok.line, tok.column)

    def expect(self, text: str) -> Token:
        if self.tok.text != text or self.tok.kind == "number":
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def parse_file(self) -> list[FunctionDef]:
        defs = []
        while self.tok.kind != "eof":
            defs.append(self.parse_decl())
        return defs

    def parse_decl(self) -> FunctionDef:
        self.expect("func")
        if self.tok.kind != "name":
            raise self.error("expected function name")
        name = self.advance().text
        self.expect("(")
        params: list[ParamSpec] = []
        if self.tok.text != ")":
            params.append(self.parse_param())
            while self.tok.text == ",":
                self.advance()
                params.append(self.parse_param())
        self.expect(")")
        self.expect("=")
        self.scope = {p.name: i for i, p in enumerate(params)}
        if len(self.scope) != len(params):
            raise self.error(f"duplicate parameter name in {name}")
        body = self.parse_expr()
        if self.tok.kind != "eof" and self.tok.text != "func":
            raise self.error(f"unexpected {self.tok.text!r} after expression")
        return FunctionDef(name, tuple(params), body)

    def parse_param(self) -> ParamSpec:
        tok = self.tok
        if tok.kind != "name" or tok.text in FUNCTIONS or tok.text in ("func", "in"):
            raise self.error("expected parameter name")
        self.advance()
        domain = Interval()
        if self.tok.text == "in":
            self.advance()
            domain = self.parse_interval()
        return ParamSpec(tok.text, domain)

    def parse_bound(self) -> float:
        sign = 1.0
        if self.tok.text in ("-", "+"):
            sign = -1.0 if self.advance().text == "-" else 1.0
        tok = self.tok
        if tok.kind == "number":
            self.advance()
            return sign * float(tok.text)
        if tok.text == "inf":
            self.advance()
            return sign * math.inf
        raise self.error("expected interval bound")

    def parse_interval(self) -> Interval:
        start = self.tok
        if start.text not in ("[", "("):
            raise self.error("expected '[' or '(' to open interval")
        self.advance()
        lo = self.parse_bound()
        self.expect(",")
        hi = self.parse_bound()
        if self.tok.text not in ("]", ")"):
            raise self.error("expected ']' or ')' to close interval")
        close = self.advance().text
        try:
            return Interval(lo, hi, start.text == "[", close == "]")
        except ValueError as exc:
            raise IntervalError(str(exc), start.line, start.column) from None

    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while self.tok.text in ("+", "-"):
            op = "add" if self.advance().text == "+" else "sub"
            node = Binary(op, node, self.parse_term())
        return node

    def parse_term(self) -> Expr:
        node = self.parse_unary()
        while self.tok.text in ("*", "/"):
            op = "mul" if self.advance().text == "*" else "div"
            node = Binary(op, node, self.parse_unary())
        return node

    def parse_unary(self) -> Expr:
        if self.tok.text == "-":
            self.advance()
            if self.tok.kind == "number" and self.peek().text != "^":
                tok = self.advance()
                return Constant(-float(tok.text), "-" + tok.text)
            return Unary("neg", self.parse_unary())
        return self.parse_power()

    def parse_power(self) -> Expr:
        base = self.parse_atom()
        if self.tok.text == "^":
            self.advance()
            return Binary("pow", base, self.parse_unary())
        return base

    def parse_atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "number":
            self.advance()
            return Constant(float(tok.text), tok.text)
        if tok.text == "(":
            self.advance()
            node = self.parse_expr()
            self.expect(")")
            return node
        if tok.kind == "name":
            self.advance()
            if self.tok.text == "(":
                return self.parse_call(tok)
            if tok.text in self.scope:
                return Param(self.scope[tok.text], tok.text)
            raise self.error(f"unknown identifier {tok.text!r}", tok, UnknownIdentifierError)
        if tok.kind == "eof":
            raise self.error("unexpected end of input")
        raise self.error(f"unexpected {tok.text!r}")

    def parse_call(self, name: Token) -> Expr:
        if name.text not in FUNCTIONS and name.text not in _BINARY_FUNCTIONS:
            raise self.error(f"unknown function {name.text!r}", name, UnknownIdentifierError)
        self.expect("(")
        args = [self.parse_expr()]
        while self.tok.text == ",":
            self.advance()
            args.append(self.parse_expr())
        self.expect(")")
        expected = 2 if name.text in _BINARY_FUNCTIONS else 1
        if len(args) != expected:
            raise self.error(
                f"{name.text} takes {expected} argument(s), got {len(args)}", name, ArityError
            )
        if expected == 2:
            return Binary(_BINARY_FUNCTIONS[name.text], *args)
        return Unary(name.text, args[0])


def parse_file(text: str) -> list[FunctionDef]:
    """Parse every ``func`` declaration in ``text``."""
    return _Parser(text).parse_file()


def parse(text: str) -> FunctionDef:
    """Parse a source holding exactly one ``func`` declaration."""
    defs = parse_file(text)
    if len(defs) != 1:
        raise DSLSyntaxError(f"expected exactly one function, found {len(defs)}")
    return defs[0]
