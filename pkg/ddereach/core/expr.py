'''
Polynomial vector-field expressions: parsing, printing, symbolic
differentiation, and evaluation over reals and intervals
'''

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

from ddereach.core.interval import Interval
from ddereach.exceptions import ExprSyntaxError, MissingVariableError, UnknownVariableError

KIND_PRE_DELAY = 'pre-delay'
KIND_DELAYED = 'delayed'
TIME_VAR = 't'
DELAY_SUFFIX = '_tau'

# printing precedence; higher binds tighter
_PREC_ADD = 1
_PREC_MUL = 2
_PREC_NEG = 3
_PREC_POW = 4
_PREC_ATOM = 5


class Expr:
    '''Base class of expression tree nodes. Nodes are immutable.'''

    precedence = _PREC_ATOM

    def children(self):
        return ()

    def variables(self):
        names = set()
        for child in self.children():
            names |= child.variables()
        return names

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float
    enclosure: Interval = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.enclosure is None:
            object.__setattr__(self, 'enclosure', Interval.point(self.value))

    @property
    def precedence(self):
        return _PREC_NEG if self.value < 0 else _PREC_ATOM

    def eval_interval(self, env):
        return self.enclosure

    def eval_real(self, env):
        return self.value


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def variables(self):
        return {self.name}

    def eval_interval(self, env):
        try:
            return env[self.name]
        except KeyError:
            raise MissingVariableError(self.name) from None

    def eval_real(self, env):
        try:
            return env[self.name]
        except KeyError:
            raise MissingVariableError(self.name) from None


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr
    precedence = _PREC_NEG

    def children(self):
        return (self.arg,)

    def eval_interval(self, env):
        return -self.arg.eval_interval(env)

    def eval_real(self, env):
        return -self.arg.eval_real(env)


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr
    precedence = _PREC_ADD

    def children(self):
        return (self.left, self.right)

    def eval_interval(self, env):
        return self.left.eval_interval(env) + self.right.eval_interval(env)

    def eval_real(self, env):
        return self.left.eval_real(env) + self.right.eval_real(env)


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr
    precedence = _PREC_ADD

    def children(self):
        return (self.left, self.right)

    def eval_interval(self, env):
        return self.left.eval_interval(env) - self.right.eval_interval(env)

    def eval_real(self, env):
        return self.left.eval_real(env) - self.right.eval_real(env)


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr
    precedence = _PREC_MUL

    def children(self):
        return (self.left, self.right)

    def eval_interval(self, env):
        return self.left.eval_interval(env) * self.right.eval_interval(env)

    def eval_real(self, env):
        return self.left.eval_real(env) * self.right.eval_real(env)


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int
    precedence = _PREC_POW

    def children(self):
        return (self.base,)

    def eval_interval(self, env):
        return self.base.eval_interval(env) ** self.exponent

    def eval_real(self, env):
        return self.base.eval_real(env) ** self.exponent


ZERO = Const(0.0)
ONE = Const(1.0)


# ── parsing ──

_TOKEN = re.compile(r'''
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\*\*|[-+*^()])
''', re.VERBOSE)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        kind = match.lastgroup
        if kind != 'ws':
            value = match.group(kind)
            if kind == 'op' and value == '**':
                value = '^'
            tokens.append((kind, value, pos))
        pos = match.end()
    tokens.append(('end', '', len(text)))
    return tokens


class _Parser:
    '''Recursive-descent parser; precedence pow > unary minus > mul > add/sub.'''

    def __init__(self, text, alphabet):
        self.text = text
        self.alphabet = alphabet
        self.tokens = _tokenize(text)
        self.index = 0

    @property
    def current(self):
        return self.tokens[self.index]

    def advance(self):
        token = self.tokens[self.index]
        self.index += 1
        return token

    def fail(self, message, position=None):
        if position is None:
            position = self.current[2]
        raise ExprSyntaxError(message, self.text, position)

    def parse(self):
        if self.current[0] == 'end':
            self.fail("empty expression")
        tree = self.sum()
        if self.current[0] != 'end':
            self.fail(f"unexpected token {self.current[1]!r}")
        return tree

    def sum(self):
        tree = self.product()
        while self.current[1] in ('+', '-') and self.current[0] == 'op':
            op = self.advance()[1]
            right = self.product()
            tree = Add(tree, right) if op == '+' else Sub(tree, right)
        return tree

    def product(self):
        tree = self.unary()
        while self.current[0] == 'op' and self.current[1] == '*':
            self.advance()
            tree = Mul(tree, self.unary())
        return tree

    def unary(self):
        if self.current[0] == 'op' and self.current[1] in ('-', '+'):
            op = self.advance()[1]
            arg = self.unary()
            if op == '+':
                return arg
            if isinstance(arg, Const):
                return Const(-arg.value, -arg.enclosure)
            return Neg(arg)
        return self.power()

    def power(self):
        base = self.atom()
        if self.current[0] == 'op' and self.current[1] == '^':
            self.advance()
            kind, value, position = self.current
            if kind == 'op' and value == '-':
                self.fail("exponent must be a nonnegative integer")
            if kind != 'num' or not value.isdigit():
                self.fail("exponent must be a nonnegative integer literal")
            self.advance()
            base = Pow(base, int(value))
            if self.current[0] == 'op' and self.current[1] == '^':
                self.fail("chained powers are not supported; use parentheses")
        return base

    def atom(self):
        kind, value, position = self.current
        if kind == 'num':
            if not math.isfinite(float(value)):
                self.fail(f"number {value!r} is out of range")
            self.advance()
            return Const(float(value), Interval.from_decimal(value))
        if kind == 'name':
            self.advance()
            if self.alphabet is not None and value not in self.alphabet:
                raise UnknownVariableError(f"unknown variable {value!r}", self.text, position)
            return Var(value)
        if kind == 'op' and value == '(':
            self.advance()
            tree = self.sum()
            if not (self.current[0] == 'op' and self.current[1] == ')'):
                self.fail("expected ')'")
            self.advance()
            return tree
        if kind == 'end':
            self.fail("unexpected end of expression")
        self.fail(f"unexpected token {value!r}")


def parse(text: str, alphabet: Iterable[str] | None = None) -> Expr:
    '''
    Parse an arithmetic expression over a declared variable alphabet

    Args:
        text (str): expression text, e.g. "-0.1*x2 + d1*x1"
        alphabet (iterable of str): allowed variable names; None allows any name

    Returns:
        (Expr): the expression tree

    Raises:
        ExprSyntaxError: malformed text or bad exponent (carries the position)
        UnknownVariableError: a name outside the alphabet
    '''
    names = None if alphabet is None else frozenset(alphabet)
    return _Parser(text, names).parse()


# ── printing ──

def _wrap(child, needs_parens):
    text = to_text(child)
    return f"({text})" if needs_parens else text


def to_text(e: Expr) -> str:
    '''Render an expression with the minimal parentheses that re-parse to the same tree.'''
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return '-' + _wrap(e.arg, e.arg.precedence <= _PREC_NEG)
    if isinstance(e, Pow):
        return f"{_wrap(e.base, e.base.precedence < _PREC_ATOM)}^{e.exponent}"
    if isinstance(e, (Add, Sub, Mul)):
        op = {Add: ' + ', Sub: ' - ', Mul: '*'}[type(e)]
        left = _wrap(e.left, e.left.precedence < e.precedence)
        right = _wrap(e.right, e.right.precedence <= e.precedence)
        return left + op + right
    raise TypeError(f"not an expression node: {e!r}")


# ── folding constructors ──

def _is_const(e, value=None):
    return isinstance(e, Const) and (value is None or e.value == value)


def make_neg(a):
    if _is_const(a):
        return Const(-a.value, -a.enclosure)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def make_add(a, b):
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value, a.enclosure + b.enclosure)
    return Add(a, b)


def make_sub(a, b):
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return make_neg(b)
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value, a.enclosure - b.enclosure)
    return Sub(a, b)


def make_mul(a, b):
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value, a.enclosure * b.enclosure)
    return Mul(a, b)


def make_pow(base, k):
    if k == 0:
        return ONE
    if k == 1:
        return base
    return Pow(base, k)


def differentiate(e: Expr, v: str) -> Expr:
    '''
    Exact partial derivative of e with respect to variable v

    Args:
        e (Expr): expression
        v (str): variable name

    Returns:
        (Expr): derivative, with trivial constants folded
    '''
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Neg):
        return make_neg(differentiate(e.arg, v))
    if isinstance(e, Add):
        return make_add(differentiate(e.left, v), differentiate(e.right, v))
    if isinstance(e, Sub):
        return make_sub(differentiate(e.left, v), differentiate(e.right, v))
    if isinstance(e, Mul):
        return make_add(make_mul(differentiate(e.left, v), e.right),
                        make_mul(e.left, differentiate(e.right, v)))
    if isinstance(e, Pow):
        inner = differentiate(e.base, v)
        if _is_const(inner, 0.0):
            return ZERO
        outer = make_mul(Const(float(e.exponent)), make_pow(e.base, e.exponent - 1))
        return make_mul(outer, inner)
    raise TypeError(f"not an expression node: {e!r}")


def eval_interval(e: Expr, env: Mapping[str, Interval]) -> Interval:
    '''Natural interval extension of e over the boxes bound in env.'''
    return e.eval_interval(env)


def eval_real(e: Expr, env: Mapping[str, float]):
    '''Pointwise value of e; env values may also be numpy arrays (elementwise).'''
    return e.eval_real(env)


# ── vector fields ──

def state_names(n):
    return tuple(f"x{i + 1}" for i in range(n))


def delayed_names(n):
    return tuple(f"x{i + 1}{DELAY_SUFFIX}" for i in range(n))


def input_names(m):
    return tuple(f"d{i + 1}" for i in range(m))


def model_alphabet(n, m, kind=KIND_DELAYED):
    names = state_names(n) + input_names(m) + (TIME_VAR,)
    if kind == KIND_DELAYED:
        names += delayed_names(n)
    return frozenset(names)


@dataclass(frozen=True)
class VectorField:
    '''
    Right-hand side of one phase of the delay system

    Args:
        components (tuple of Expr): one expression per state dimension
        kind (str): KIND_PRE_DELAY (g: x, d, t) or KIND_DELAYED (f: x, x_tau, d, t)
        m (int): perturbation dimension
    '''

    components: tuple
    kind: str
    m: int

    def __post_init__(self):
        if self.kind not in (KIND_PRE_DELAY, KIND_DELAYED):
            raise ValueError(f"unknown vector field kind {self.kind!r}")
        allowed = model_alphabet(self.n, self.m, self.kind)
        for i, component in enumerate(self.components):
            stray = component.variables() - allowed
            if stray:
                raise UnknownVariableError(
                    f"component {i + 1} of the {self.kind} field references {sorted(stray)}")

    @classmethod
    def from_texts(cls, texts, kind, m):
        n = len(texts)
        alphabet = model_alphabet(n, m, kind)
        return cls(tuple(parse(text, alphabet) for text in texts), kind, m)

    @property
    def n(self):
        return len(self.components)

    @property
    def state_vars(self):
        return state_names(self.n)

    @property
    def delayed_vars(self):
        return delayed_names(self.n) if self.kind == KIND_DELAYED else ()

    @property
    def input_vars(self):
        return input_names(self.m)

    def uses_delay(self):
        delayed = set(delayed_names(self.n))
        return any(c.variables() & delayed for c in self.components)

    def is_zero(self):
        return all(_is_const(c, 0.0) for c in self.components)

    def _jacobian(self, names):
        return tuple(tuple(differentiate(c, v) for v in names) for c in self.components)

    @cached_property
    def jacobian_x(self):
        '''Symbolic d(field)/dx as rows of Expr.'''
        return self._jacobian(state_names(self.n))

    @cached_property
    def jacobian_tau(self):
        '''Symbolic d(field)/dx_tau; all zero for a pre-delay field.'''
        if self.kind == KIND_PRE_DELAY:
            return tuple(tuple(ZERO for _ in range(self.n)) for _ in range(self.n))
        return self._jacobian(delayed_names(self.n))

    def eval_interval(self, env):
        return [c.eval_interval(env) for c in self.components]

    def eval_real(self, env):
        return [c.eval_real(env) for c in self.components]

    def texts(self):
        return [to_text(c) for c in self.components]
