"""Tiny analytic-expression language for problem data.

Expressions over the variables x1, x2 (and optionally y, for cost
integrand derivatives) with + - * / ^, unary minus and the functions
sin, cos, exp, sqrt, abs, min, max.  '^' is right-associative.

Grammar:
    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := unary ('^' factor)?
    unary  := '-' unary | atom
    atom   := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
"""

from __future__ import annotations

import math

import numpy as np

_FUNCTIONS = {
    "sin": (np.sin, 1),
    "cos": (np.cos, 1),
    "exp": (np.exp, 1),
    "sqrt": (np.sqrt, 1),
    "abs": (np.abs, 1),
    "min": (np.minimum, 2),
    "max": (np.maximum, 2),
}
_VARIABLES = ("x1", "x2", "y")


class ExprSyntaxError(ValueError):
    def __init__(self, message, offset):
        self.offset = offset  # 1-based byte offset
        super().__init__(f"{message} (at offset {offset})")


class ExprDomainError(ValueError):
    def __init__(self, message, point=None):
        self.point = point
        super().__init__(message if point is None
                         else f"{message} at point {point}")


class Expr:
    """Parsed immutable expression; evaluation is pure in (x1, x2[, y])."""

    def __init__(self, root, text, uses_y):
        self._root = root
        self.text = text
        self.uses_y = uses_y

    def __call__(self, x1, x2, y=None):
        if self.uses_y and y is None:
            raise ExprDomainError(f"expression {self.text!r} needs a value for y")
        try:
            with np.errstate(invalid="ignore", divide="ignore"):
                out = _eval(self._root, x1, x2, y)
        except ZeroDivisionError:
            # the pure-scalar path raises before the finiteness check below
            raise ExprDomainError(f"expression {self.text!r} is undefined",
                                  (x1, x2)) from None
        bad = ~np.isfinite(out) if isinstance(out, np.ndarray) else not math.isfinite(out)
        if np.any(bad):
            if isinstance(out, np.ndarray):
                i = int(np.flatnonzero(np.ravel(bad))[0])
                pt = (np.ravel(x1)[i] if np.ndim(x1) else x1,
                      np.ravel(x2)[i] if np.ndim(x2) else x2)
            else:
                pt = (x1, x2)
            raise ExprDomainError(f"expression {self.text!r} is undefined", pt)
        return out

    def __str__(self):
        return _print(self._root)

    def __repr__(self):
        return f"Expr({str(self)!r})"


# AST nodes: ('num', v) ('var', name) ('call', fname, args) ('neg', a)
# ('+',a,b) ('-',a,b) ('*',a,b) ('/',a,b) ('^',a,b)

def _eval(node, x1, x2, y):
    op = node[0]
    if op == "num":
        return node[1]
    if op == "var":
        return {"x1": x1, "x2": x2, "y": y}[node[1]]
    if op == "neg":
        return -_eval(node[1], x1, x2, y)
    if op == "call":
        fn, _ = _FUNCTIONS[node[1]]
        return fn(*[_eval(a, x1, x2, y) for a in node[2]])
    a = _eval(node[1], x1, x2, y)
    if op == "^":
        e = node[2]
        # small integer powers by repeated multiplication (the common case)
        if e[0] == "num" and float(e[1]).is_integer() and 0 <= e[1] <= 4:
            k = int(e[1])
            out = 1.0 if k == 0 else a
            for _ in range(k - 1):
                out = out * a
            return out
        return np.power(a, _eval(e, x1, x2, y))
    b = _eval(node[2], x1, x2, y)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    return a / b


def _print(node):
    op = node[0]
    if op == "num":
        v = node[1]
        return repr(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(v)
    if op == "var":
        return node[1]
    if op == "neg":
        return f"-({_print(node[1])})"
    if op == "call":
        return f"{node[1]}({', '.join(_print(a) for a in node[2])})"
    return f"({_print(node[1])} {op} {_print(node[2])})"


class _Parser:
    def __init__(self, text):
        self.text = text
        self.pos = 0
        self.uses_y = False

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch):
        if self.peek() != ch:
            raise ExprSyntaxError(f"expected {ch!r}", self.pos + 1)
        self.pos += 1

    def parse(self):
        node = self.expr()
        self.skip_ws()
        if self.pos != len(self.text):
            raise ExprSyntaxError("unexpected trailing input", self.pos + 1)
        return node

    def expr(self):
        node = self.term()
        while self.peek() in ("+", "-"):
            op = self.text[self.pos]
            self.pos += 1
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek() in ("*", "/"):
            op = self.text[self.pos]
            self.pos += 1
            node = (op, node, self.factor())
        return node

    def factor(self):
        node = self.unary()
        if self.peek() == "^":
            self.pos += 1
            node = ("^", node, self.factor())   # right-associative
        return node

    def unary(self):
        if self.peek() == "-":
            self.pos += 1
            return ("neg", self.unary())
        return self.atom()

    def atom(self):
        ch = self.peek()
        if ch == "(":
            self.pos += 1
            node = self.expr()
            self.expect(")")
            return node
        if ch.isdigit() or ch == ".":
            return ("num", self.number())
        if ch.isalpha() or ch == "_":
            name = self.name()
            if self.peek() == "(":
                if name not in _FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {name!r}", self.pos + 1)
                self.pos += 1
                args = [self.expr()]
                while self.peek() == ",":
                    self.pos += 1
                    args.append(self.expr())
                self.expect(")")
                if len(args) != _FUNCTIONS[name][1]:
                    raise ExprSyntaxError(
                        f"{name} takes {_FUNCTIONS[name][1]} argument(s)", self.pos + 1)
                return ("call", name, args)
            if name == "pi":
                return ("num", math.pi)
            if name not in _VARIABLES:
                raise ExprSyntaxError(f"unknown identifier {name!r}",
                                      self.pos - len(name) + 1)
            if name == "y":
                self.uses_y = True
            return ("var", name)
        raise ExprSyntaxError("expected a number, name or '('", self.pos + 1)

    def name(self):
        start = self.pos
        t = self.text
        while self.pos < len(t) and (t[self.pos].isalnum() or t[self.pos] == "_"):
            self.pos += 1
        return t[start:self.pos]

    def number(self):
        start = self.pos
        t = self.text
        while self.pos < len(t) and (t[self.pos].isdigit() or t[self.pos] == "."):
            self.pos += 1
        if self.pos < len(t) and t[self.pos] in "eE":
            save = self.pos
            self.pos += 1
            if self.pos < len(t) and t[self.pos] in "+-":
                self.pos += 1
            if self.pos < len(t) and t[self.pos].isdigit():
                while self.pos < len(t) and t[self.pos].isdigit():
                    self.pos += 1
            else:
                self.pos = save
        try:
            return float(t[start:self.pos])
        except ValueError:
            raise ExprSyntaxError("bad number literal", start + 1) from None


def parse(text: str) -> Expr:
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    p = _Parser(text)
    root = p.parse()
    return Expr(root, text, p.uses_y)
