"""Concrete expression trees: operators, evaluation, complexity, rendering."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence, Union

import numpy as np

DEFAULT_MAGNITUDE_BOUND = 1e8
CONSTANT_DIGITS = 6


class DomainViolation(ArithmeticError):
    """An operator received an argument outside its domain."""


class Overflow(ArithmeticError):
    """An intermediate value exceeded the magnitude bound."""


class UnknownOperator(KeyError):
    pass


class ExpressionSyntaxError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Operator:
    """A unary or binary real operator.

    ``func`` must accept numpy arrays and return NaN wherever the input
    lies outside ``domain``.  Equality and hashing go by ``id`` so that
    reweighted copies of an operator still compare equal.
    """

    id: str
    arity: int
    func: Callable[..., np.ndarray]
    commutative: bool = False
    weight: float = 1.0
    symbol: str | None = None
    precedence: int = 4
    domain: str = "all reals"

    def __post_init__(self):
        if self.arity not in (1, 2):
            raise ValueError(f"operator {self.id!r}: arity must be 1 or 2")
        if self.commutative and self.arity != 2:
            raise ValueError(f"operator {self.id!r}: only binary operators can be commutative")
        if self.weight < 0:
            raise ValueError(f"operator {self.id!r}: negative complexity weight")

    def __eq__(self, other):
        return isinstance(other, Operator) and other.id == self.id

    def __hash__(self):
        return hash(("op", self.id))

    def __repr__(self):
        return f"Operator({self.id!r})"

    def __call__(self, *args):
        with np.errstate(all="ignore"):
            return self.func(*args)


def _sqrt(a):
    return np.sqrt(np.where(a >= 0, a, np.nan))


def _pow(a, b):
    return np.where(a > 0, np.power(np.where(a > 0, a, 1.0), b), np.nan)


ADD = Operator("add", 2, np.add, commutative=True, symbol="+", precedence=1)
SUB = Operator("sub", 2, np.subtract, symbol="-", precedence=1)
MUL = Operator("mul", 2, np.multiply, commutative=True, symbol="*", precedence=2)
POW = Operator("pow", 2, _pow, symbol="^", precedence=3, domain="base > 0")
SQRT = Operator("sqrt", 1, _sqrt, domain="argument >= 0")
CBRT = Operator("cbrt", 1, np.cbrt)

REGISTRY: dict[str, Operator] = {op.id: op for op in (ADD, SUB, MUL, POW, SQRT, CBRT)}
ALIASES = {"+": "add", "-": "sub", "*": "mul", "^": "pow"}
DEFAULT_OPERATORS = ("add", "mul", "sqrt", "cbrt")


def register_operator(op: Operator) -> None:
    """Add an operator to the registry.  Interval rules live in ``exactsr.bounds``."""
    if op.id in REGISTRY:
        raise ValueError(f"operator {op.id!r} already registered")
    REGISTRY[op.id] = op


def lookup_operator(name: str) -> Operator:
    key = ALIASES.get(name, name)
    try:
        return REGISTRY[key]
    except KeyError:
        raise UnknownOperator(name) from None


@dataclass(frozen=True)
class OperatorSet:
    unary: tuple[Operator, ...]
    binary: tuple[Operator, ...]
    caps: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        ids = [op.id for op in self.all]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate operator ids in {ids}")
        if any(op.arity != 1 for op in self.unary) or any(op.arity != 2 for op in self.binary):
            raise ValueError("operator listed under the wrong arity")
        for op_id, cap in self.caps:
            if cap < 1:
                raise ValueError(f"multiplicity cap for {op_id!r} must be >= 1")

    @classmethod
    def from_names(cls, names: Sequence[str], cap: int = 3,
                   weights: dict[str, float] | None = None) -> "OperatorSet":
        weights = weights or {}
        ops = []
        for name in names:
            op = lookup_operator(name)
            w = weights.get(name, weights.get(op.id))
            if w is not None:
                op = Operator(op.id, op.arity, op.func, op.commutative, float(w),
                              op.symbol, op.precedence, op.domain)
            ops.append(op)
        return cls(
            unary=tuple(op for op in ops if op.arity == 1),
            binary=tuple(op for op in ops if op.arity == 2),
            caps=tuple((op.id, cap) for op in ops),
        )

    @property
    def all(self) -> tuple[Operator, ...]:
        return self.binary + self.unary

    @property
    def names(self) -> list[str]:
        return [op.id for op in self.all]

    def cap(self, op_id: str) -> int:
        for k, v in self.caps:
            if k == op_id:
                return v
        return 1 << 30

    def get(self, op_id: str) -> Operator:
        for op in self.all:
            if op.id == op_id:
                return op
        raise UnknownOperator(op_id)

    def __contains__(self, op) -> bool:
        op_id = op.id if isinstance(op, Operator) else op
        return any(o.id == op_id for o in self.all)


# --- trees -----------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based column of x


@dataclass(frozen=True)
class Unary:
    op: Operator
    child: "Tree"

    def __post_init__(self):
        if self.op.arity != 1:
            raise ValueError(f"{self.op.id} is not unary")


@dataclass(frozen=True)
class Binary:
    op: Operator
    left: "Tree"
    right: "Tree"

    def __post_init__(self):
        if self.op.arity != 2:
            raise ValueError(f"{self.op.id} is not binary")


Tree = Union[Const, Var, Unary, Binary]


def children(tree: Tree) -> tuple[Tree, ...]:
    if isinstance(tree, Unary):
        return (tree.child,)
    if isinstance(tree, Binary):
        return (tree.left, tree.right)
    return ()


def walk(tree: Tree) -> Iterator[Tree]:
    """Preorder traversal."""
    yield tree
    for ch in children(tree):
        yield from walk(ch)


def depth(tree: Tree) -> int:
    return 1 + max((depth(ch) for ch in children(tree)), default=-1)


def constants(tree: Tree) -> list[float]:
    return [t.value for t in walk(tree) if isinstance(t, Const)]


def variables(tree: Tree) -> set[int]:
    return {t.index for t in walk(tree) if isinstance(t, Var)}


def with_constants(tree: Tree, values: Sequence[float]) -> Tree:
    """Replace constant leaves, in preorder, by ``values``."""
    it = iter(values)

    def sub(t):
        if isinstance(t, Const):
            return Const(float(next(it)))
        if isinstance(t, Unary):
            return Unary(t.op, sub(t.child))
        if isinstance(t, Binary):
            return Binary(t.op, sub(t.left), sub(t.right))
        return t

    out = sub(tree)
    if next(it, None) is not None:
        raise ValueError("more values than constant leaves")
    return out


# --- evaluation --------------------------------------------------------------

def evaluate(tree: Tree, x: Sequence[float], bound: float = DEFAULT_MAGNITUDE_BOUND) -> float:
    if isinstance(tree, Const):
        v = tree.value
    elif isinstance(tree, Var):
        if not 0 <= tree.index < len(x):
            raise IndexError(f"variable index {tree.index} outside x of length {len(x)}")
        v = float(x[tree.index])
    elif isinstance(tree, Unary):
        a = evaluate(tree.child, x, bound)
        v = float(tree.op(np.float64(a)))
        if np.isnan(v):
            raise DomainViolation(f"{tree.op.id}({a!r})")
    else:
        a = evaluate(tree.left, x, bound)
        b = evaluate(tree.right, x, bound)
        v = float(tree.op(np.float64(a), np.float64(b)))
        if np.isnan(v):
            raise DomainViolation(f"{tree.op.id}({a!r}, {b!r})")
    if not abs(v) <= bound:
        raise Overflow(f"|{v!r}| exceeds {bound:g}")
    return v


def evaluate_many(tree: Tree, X: np.ndarray, consts: np.ndarray | None = None,
                  bound: float = DEFAULT_MAGNITUDE_BOUND) -> np.ndarray:
    """Vectorised evaluation over the rows of ``X``.

    ``consts`` has shape (S, k) and substitutes the k constant leaves (in
    preorder) for each of S parameter vectors; the result then has shape
    (S, n).  Without ``consts`` the tree's own values are used and the
    result has shape (n,).  Invalid entries (domain or magnitude) are NaN.
    """
    X = np.asarray(X, dtype=float)
    counter = iter(range(1 << 30))

    def ev(t):
        if isinstance(t, Const):
            i = next(counter)
            v = t.value if consts is None else consts[:, i:i + 1]
            return np.broadcast_to(np.asarray(v, dtype=float), shape)
        if isinstance(t, Var):
            return np.broadcast_to(X[:, t.index], shape)
        if isinstance(t, Unary):
            v = t.op(ev(t.child))
        else:
            a = ev(t.left)
            v = t.op(a, ev(t.right))
        return np.where(np.abs(v) <= bound, v, np.nan)

    shape = (X.shape[0],) if consts is None else (consts.shape[0], X.shape[0])
    return np.array(ev(tree), dtype=float)


# --- complexity --------------------------------------------------------------

def complexity(tree: Tree) -> int:
    return sum(1 for _ in walk(tree))


def weighted_complexity(tree: Tree, ops: OperatorSet) -> float:
    total = 0.0
    for t in walk(tree):
        if isinstance(t, (Unary, Binary)):
            total += ops.get(t.op.id).weight
    return total


# --- constant folding --------------------------------------------------------

def fold_constants(tree: Tree, bound: float = DEFAULT_MAGNITUDE_BOUND) -> Tree:
    if isinstance(tree, (Const, Var)):
        return tree
    if isinstance(tree, Unary):
        ch = fold_constants(tree.child, bound)
        node = Unary(tree.op, ch)
        if isinstance(ch, Const):
            return Const(evaluate(node, (), bound))
        return node
    left = fold_constants(tree.left, bound)
    right = fold_constants(tree.right, bound)
    node = Binary(tree.op, left, right)
    if isinstance(left, Const) and isinstance(right, Const):
        return Const(evaluate(node, (), bound))
    return node


# --- rendering ---------------------------------------------------------------

def format_constant(value: float) -> str:
    return f"{value:.{CONSTANT_DIGITS}g}"


def render(tree: Tree, names: Sequence[str] | None = None, symbolic_constants: bool = False) -> str:
    """Infix rendering with the fewest parentheses that still parse back to
    the same tree.  With ``symbolic_constants`` every constant prints as ``c``."""

    def name(i):
        return names[i] if names is not None else f"x{i + 1}"

    def atom(t) -> tuple[str, int]:
        if isinstance(t, Const):
            if symbolic_constants:
                return "c", 9
            s = format_constant(t.value)
            return (f"({s})", 9) if s.startswith("-") else (s, 9)
        if isinstance(t, Var):
            return name(t.index), 9
        if isinstance(t, Unary) or t.op.symbol is None:
            args = ", ".join(atom(c)[0] for c in children(t))
            return f"{t.op.id}({args})", 9
        p = t.op.precedence
        ls, lp = atom(t.left)
        rs, rp = atom(t.right)
        right_assoc = t.op.symbol == "^"
        if lp < p or (right_assoc and lp == p):
            ls = f"({ls})"
        if rp < p or (not right_assoc and rp == p):
            rs = f"({rs})"
        sep = " " if p == 1 else ""
        return f"{ls}{sep}{t.op.symbol}{sep}{rs}", p

    return atom(tree)[0]


_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)|([A-Za-z_][A-Za-z_0-9]*)|(.))")


def parse(text: str, names: Sequence[str] | None = None, ops: OperatorSet | None = None) -> Tree:
    """Parse the infix grammar produced by :func:`render`.

    Variables are looked up in ``names`` (default x1, x2, ...); functions and
    infix symbols in ``ops`` or, when omitted, the global registry.
    """
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            break
        num, ident, sym = m.groups()
        if num is not None:
            tokens.append(("num", num))
        elif ident is not None:
            tokens.append(("id", ident))
        elif sym.strip():
            tokens.append(("sym", sym))
        pos = m.end()
    tokens.append(("end", ""))

    def find_op(key):
        if ops is not None:
            for op in ops.all:
                if op.id == key or op.symbol == key:
                    return op
            raise ExpressionSyntaxError(f"operator {key!r} not in operator set")
        for op in REGISTRY.values():
            if op.id == key or op.symbol == key:
                return op
        raise ExpressionSyntaxError(f"unknown operator {key!r}")

    infix = {}
    for op in (ops.all if ops is not None else REGISTRY.values()):
        if op.symbol:
            infix[op.symbol] = op
    i = 0

    def peek():
        return tokens[i]

    def take(kind=None, value=None):
        nonlocal i
        tok = tokens[i]
        if (kind and tok[0] != kind) or (value is not None and tok[1] != value):
            raise ExpressionSyntaxError(f"expected {value or kind}, got {tok[1]!r} in {text!r}")
        i += 1
        return tok

    def expr(min_prec):
        left = primary()
        while True:
            kind, val = peek()
            if kind != "sym" or val not in infix:
                return left
            op = infix[val]
            if op.precedence < min_prec:
                return left
            take()
            nxt = op.precedence if op.symbol == "^" else op.precedence + 1
            left = Binary(op, left, expr(nxt))

    def primary():
        kind, val = peek()
        if kind == "num":
            take()
            return Const(float(val))
        if kind == "sym" and val == "(":
            take()
            if peek() == ("sym", "-") and tokens[i + 1][0] == "num":
                take()
                value = -float(take("num")[1])
                take("sym", ")")
                return Const(value)
            inner = expr(0)
            take("sym", ")")
            return inner
        if kind == "sym" and val == "-" and tokens[i + 1][0] == "num":
            take()
            return Const(-float(take("num")[1]))
        if kind == "id":
            take()
            if peek() == ("sym", "("):
                op = find_op(val)
                take()
                args = [expr(0)]
                while peek() == ("sym", ","):
                    take()
                    args.append(expr(0))
                take("sym", ")")
                if len(args) != op.arity:
                    raise ExpressionSyntaxError(f"{val} takes {op.arity} argument(s)")
                return Unary(op, args[0]) if op.arity == 1 else Binary(op, *args)
            if names is not None:
                if val not in names:
                    raise ExpressionSyntaxError(f"unknown variable {val!r}")
                return Var(list(names).index(val))
            m = re.fullmatch(r"x(\d+)", val)
            if not m or int(m.group(1)) < 1:
                raise ExpressionSyntaxError(f"unknown variable {val!r}")
            return Var(int(m.group(1)) - 1)
        raise ExpressionSyntaxError(f"unexpected {val!r} in {text!r}")

    tree = expr(0)
    if peek()[0] != "end":
        raise ExpressionSyntaxError(f"trailing input {peek()[1]!r} in {text!r}")
    return tree
