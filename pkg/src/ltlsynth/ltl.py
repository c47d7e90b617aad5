"""LTL formulas: parsing, formatting and evaluation on lasso words.

Concrete grammar (loosest binding first)::

    f ::= f '->' f          (right associative)
        | f '|' f
        | f '&' f
        | f 'U' f           (right associative)
        | '!' f | 'X' f | 'F' f | 'G' f
        | 'true' | 'false' | atom | '(' f ')'

Atoms are identifiers that are not one of the reserved words ``X``, ``F``,
``G``, ``U``, ``true``, ``false``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Union


class LTLSyntaxError(ValueError):
    def __init__(self, message: str, text: str, pos: int):
        super().__init__(f"{message} at position {pos}: {text!r}")
        self.text = text
        self.pos = pos


class UndeclaredAtomError(ValueError):
    def __init__(self, atom: str):
        super().__init__(f"atom {atom!r} is not a declared atomic proposition")
        self.atom = atom


# -- AST ---------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Atom:
    name: str


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Next:
    arg: "Formula"


@dataclass(frozen=True)
class Until:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Eventually:
    arg: "Formula"


@dataclass(frozen=True)
class Always:
    arg: "Formula"


Formula = Union[Const, Atom, Not, And, Or, Implies, Next, Until, Eventually, Always]

TRUE = Const(True)
FALSE = Const(False)

_UNARY = (Not, Next, Eventually, Always)
_BINARY = (And, Or, Implies, Until)
_TEMPORAL = (Next, Until, Eventually, Always)


def children(f: Formula) -> tuple:
    if isinstance(f, _UNARY):
        return (f.arg,)
    if isinstance(f, _BINARY):
        return (f.left, f.right)
    return ()


def subformulas(f: Formula) -> list:
    """All distinct subformulas of ``f``, children before parents."""
    seen = {}

    def visit(g):
        if g in seen:
            return
        for c in children(g):
            visit(c)
        seen[g] = None

    visit(f)
    return list(seen)


def atoms(f: Formula) -> frozenset:
    return frozenset(g.name for g in subformulas(f) if isinstance(g, Atom))


def is_propositional(f: Formula) -> bool:
    return not any(isinstance(g, _TEMPORAL) for g in subformulas(f))


def depth(f: Formula) -> int:
    cs = children(f)
    return 0 if not cs else 1 + max(depth(c) for c in cs)


def normalize(f: Formula) -> Formula:
    """Rewrite into the core grammar {true, atom, not, and, X, U}."""
    if isinstance(f, Const):
        return TRUE if f.value else Not(TRUE)
    if isinstance(f, Atom):
        return f
    if isinstance(f, Not):
        return Not(normalize(f.arg))
    if isinstance(f, Next):
        return Next(normalize(f.arg))
    if isinstance(f, And):
        return And(normalize(f.left), normalize(f.right))
    if isinstance(f, Or):
        return Not(And(Not(normalize(f.left)), Not(normalize(f.right))))
    if isinstance(f, Implies):
        return Not(And(normalize(f.left), Not(normalize(f.right))))
    if isinstance(f, Until):
        return Until(normalize(f.left), normalize(f.right))
    if isinstance(f, Eventually):
        return Until(TRUE, normalize(f.arg))
    if isinstance(f, Always):
        return Not(Until(TRUE, Not(normalize(f.arg))))
    raise TypeError(f"not a formula: {f!r}")


# -- parsing -----------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(->)|([!&|()])|([A-Za-z_][A-Za-z0-9_]*))")
_KEYWORDS = {"X", "F", "G", "U", "true", "false"}


def _tokenize(text: str) -> list:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise LTLSyntaxError(f"unexpected character {text[start]!r}", text, start)
        tok = m.group(m.lastindex)
        tokens.append((tok, m.start(m.lastindex)))
        pos = m.end()
    tokens.append(("<eof>", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, ap: frozenset):
        self.text = text
        self.ap = ap
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> str:
        return self.tokens[self.i][0]

    def take(self) -> str:
        tok = self.tokens[self.i][0]
        self.i += 1
        return tok

    def error(self, message: str):
        raise LTLSyntaxError(message, self.text, self.tokens[self.i][1])

    def expect(self, tok: str):
        if self.peek() != tok:
            self.error(f"expected {tok!r}, found {self.peek()!r}")
        self.take()

    def parse(self) -> Formula:
        f = self.implication()
        if self.peek() != "<eof>":
            self.error(f"unexpected token {self.peek()!r}")
        return f

    def implication(self):
        left = self.disjunction()
        if self.peek() == "->":
            self.take()
            return Implies(left, self.implication())
        return left

    def disjunction(self):
        f = self.conjunction()
        while self.peek() == "|":
            self.take()
            f = Or(f, self.conjunction())
        return f

    def conjunction(self):
        f = self.until()
        while self.peek() == "&":
            self.take()
            f = And(f, self.until())
        return f

    def until(self):
        left = self.unary()
        if self.peek() == "U":
            self.take()
            return Until(left, self.until())
        return left

    def unary(self):
        tok = self.peek()
        ops = {"!": Not, "X": Next, "F": Eventually, "G": Always}
        if tok in ops:
            self.take()
            return ops[tok](self.unary())
        if tok == "(":
            self.take()
            f = self.implication()
            self.expect(")")
            return f
        if tok == "true":
            self.take()
            return TRUE
        if tok == "false":
            self.take()
            return FALSE
        if tok == "<eof>":
            self.error("unexpected end of formula")
        if tok in _KEYWORDS or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", tok):
            self.error(f"unexpected token {tok!r}")
        if tok not in self.ap:
            raise UndeclaredAtomError(tok)
        self.take()
        return Atom(tok)


def parse_ltl(text: str, ap: Iterable[str]) -> Formula:
    ap = frozenset(ap)
    if not ap:
        raise ValueError("the set of atomic propositions must be nonempty")
    return _Parser(text, ap).parse()


# -- formatting --------------------------------------------------------------

_PREC = {Implies: 1, Or: 2, And: 3, Until: 4}
_UNARY_SYM = {Not: "!", Next: "X ", Eventually: "F ", Always: "G "}
_BINARY_SYM = {Implies: "->", Or: "|", And: "&", Until: "U"}


def format_ltl(f: Formula) -> str:
    if isinstance(f, Const):
        return "true" if f.value else "false"
    if isinstance(f, Atom):
        return f.name
    if isinstance(f, _UNARY):
        arg = format_ltl(f.arg)
        if isinstance(f.arg, _BINARY):
            arg = f"({arg})"
        return _UNARY_SYM[type(f)] + arg
    prec = _PREC[type(f)]
    left, right = format_ltl(f.left), format_ltl(f.right)
    right_assoc = isinstance(f, (Implies, Until))
    # parenthesize any child that would otherwise re-associate differently
    if isinstance(f.left, _BINARY) and (_PREC[type(f.left)] < prec or (right_assoc and _PREC[type(f.left)] == prec)):
        left = f"({left})"
    if isinstance(f.right, _BINARY) and (_PREC[type(f.right)] < prec or (not right_assoc and _PREC[type(f.right)] == prec)):
        right = f"({right})"
    return f"{left} {_BINARY_SYM[type(f)]} {right}"


# -- lasso words -------------------------------------------------------------

@dataclass(frozen=True)
class LassoWord:
    """The infinite word ``prefix . cycle^omega``; letters are frozensets of atoms."""

    prefix: tuple
    cycle: tuple

    def __post_init__(self):
        object.__setattr__(self, "prefix", tuple(frozenset(l) for l in self.prefix))
        object.__setattr__(self, "cycle", tuple(frozenset(l) for l in self.cycle))
        if not self.cycle:
            raise ValueError("lasso cycle must be nonempty")

    def __len__(self):
        return len(self.prefix) + len(self.cycle)

    def letter(self, i: int) -> frozenset:
        """Letter at absolute position ``i`` of the infinite word."""
        if i < len(self.prefix):
            return self.prefix[i]
        return self.cycle[(i - len(self.prefix)) % len(self.cycle)]

    def successor(self, i: int) -> int:
        """Next position in the folded representation (positions ``0..len-1``)."""
        return i + 1 if i + 1 < len(self) else len(self.prefix)

    def letters(self) -> frozenset:
        return frozenset().union(*self.prefix, *self.cycle)

    def check_alphabet(self, ap: Iterable[str]) -> None:
        extra = self.letters() - frozenset(ap)
        if extra:
            raise ValueError(f"lasso uses undeclared propositions {sorted(extra)}")

    def rotate(self, k: int) -> "LassoWord":
        """Same infinite word, with ``k`` cycle letters moved into the prefix."""
        c = len(self.cycle)
        extra = tuple(self.cycle[i % c] for i in range(k))
        cyc = tuple(self.cycle[(k + i) % c] for i in range(c))
        return LassoWord(self.prefix + extra, cyc)


def holds(f: Formula, letter: frozenset) -> bool:
    """Evaluate a propositional formula on a single letter."""
    if isinstance(f, Const):
        return f.value
    if isinstance(f, Atom):
        return f.name in letter
    if isinstance(f, Not):
        return not holds(f.arg, letter)
    if isinstance(f, And):
        return holds(f.left, letter) and holds(f.right, letter)
    if isinstance(f, Or):
        return holds(f.left, letter) or holds(f.right, letter)
    if isinstance(f, Implies):
        return (not holds(f.left, letter)) or holds(f.right, letter)
    raise ValueError(f"temporal operator in propositional context: {format_ltl(f)}")


def _until_fixpoint(word: LassoWord, lhs: list, rhs: list) -> list:
    # least fixpoint of u = rhs | (lhs & X u); two sweeps settle the cycle
    n, k = len(word), len(word.prefix)
    u = [False] * n
    for _ in range(2):
        for i in range(n - 1, k - 1, -1):
            u[i] = rhs[i] or (lhs[i] and u[word.successor(i)])
    for i in range(k - 1, -1, -1):
        u[i] = rhs[i] or (lhs[i] and u[i + 1])
    return u


def _always_fixpoint(word: LassoWord, arg: list) -> list:
    n, k = len(word), len(word.prefix)
    g = [True] * n
    for _ in range(2):
        for i in range(n - 1, k - 1, -1):
            g[i] = arg[i] and g[word.successor(i)]
    for i in range(k - 1, -1, -1):
        g[i] = arg[i] and g[i + 1]
    return g


def eval_lasso(f: Formula, w: LassoWord) -> bool:
    """Decide ``prefix . cycle^omega |= f`` by per-position subformula tables."""
    n = len(w)
    table = {}
    for g in subformulas(f):
        if isinstance(g, Const):
            v = [g.value] * n
        elif isinstance(g, Atom):
            v = [g.name in w.letter(i) for i in range(n)]
        elif isinstance(g, Not):
            v = [not x for x in table[g.arg]]
        elif isinstance(g, And):
            v = [a and b for a, b in zip(table[g.left], table[g.right])]
        elif isinstance(g, Or):
            v = [a or b for a, b in zip(table[g.left], table[g.right])]
        elif isinstance(g, Implies):
            v = [(not a) or b for a, b in zip(table[g.left], table[g.right])]
        elif isinstance(g, Next):
            arg = table[g.arg]
            v = [arg[w.successor(i)] for i in range(n)]
        elif isinstance(g, Until):
            v = _until_fixpoint(w, table[g.left], table[g.right])
        elif isinstance(g, Eventually):
            v = _until_fixpoint(w, [True] * n, table[g.arg])
        elif isinstance(g, Always):
            v = _always_fixpoint(w, table[g.arg])
        else:
            raise TypeError(f"not a formula: {g!r}")
        table[g] = v
    return table[f][0]
