"""Structure space over a full binary template tree.

Nodes are indexed breadth first from the root (index 0); node ``n`` has
successors ``2n+1`` (left) and ``2n+2`` (right).  A structure is chosen by
labelling every template node as inactive, an operator, a variable or a
constant.  Search states carry one label per node, with ``None`` for
undecided nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .expr import Binary, Const, Operator, OperatorSet, Tree, Unary, Var, walk

MAX_DEPTH = 4
COUNT_GUARD = 10**9

FAMILIES = (
    "eq-ops",
    "successor-binary",
    "successor-unary",
    "leaf-operator",
    "root-active",
    "extra-constant-children",
    "multiplicity",
)


class DepthTooLarge(ValueError):
    pass


class InvalidAssignment(ValueError):
    pass


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class TreeTemplate:
    depth: int

    @property
    def size(self) -> int:
        return 2 ** (self.depth + 1) - 1

    @property
    def root(self) -> int:
        return 0

    @property
    def leaves(self) -> range:
        return range(2**self.depth - 1, self.size)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(n, c) for n in range(2**self.depth - 1) for c in (2 * n + 1, 2 * n + 2)]

    def is_leaf(self, n: int) -> bool:
        return n >= 2**self.depth - 1

    def successors(self, n: int) -> tuple[int, int] | None:
        return None if self.is_leaf(n) else (2 * n + 1, 2 * n + 2)

    def parent(self, n: int) -> int | None:
        return None if n == 0 else (n - 1) // 2

    def subtree(self, n: int) -> Iterator[int]:
        level = [n]
        while level and level[0] < self.size:
            yield from level
            level = [c for k in level for c in (2 * k + 1, 2 * k + 2)]


def build_template(depth: int, max_depth: int = MAX_DEPTH) -> TreeTemplate:
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    if depth > max_depth:
        raise DepthTooLarge(f"depth {depth} exceeds the maximum {max_depth}")
    return TreeTemplate(depth)


# --- labels and assignments --------------------------------------------------

class Label(NamedTuple):
    kind: str  # "off" | "const" | "var" | "op"
    ref: object = None  # variable index or Operator


OFF = Label("off")
CONST = Label("const")


def var_label(d: int) -> Label:
    return Label("var", d)


def op_label(op: Operator) -> Label:
    return Label("op", op)


@dataclass
class Assignment:
    """Indicator form of a labelling: the (u, z, w, q, c) decision variables.

    ``z`` columns follow ``ops.all`` (binary operators first).
    """

    u: np.ndarray
    z: np.ndarray
    w: np.ndarray
    q: np.ndarray
    c: np.ndarray
    ops: OperatorSet
    m: int

    @classmethod
    def from_labels(cls, template: TreeTemplate, labels: Sequence[Label], ops: OperatorSet,
                    m: int, values: dict[int, float] | None = None) -> "Assignment":
        N = template.size
        op_list = ops.all
        a = cls(np.zeros(N, int), np.zeros((N, len(op_list)), int), np.zeros((N, m), int),
                np.zeros(N, int), np.zeros(N), ops, m)
        for n, lab in enumerate(labels):
            if lab is None:
                raise InvalidAssignment(f"node {n} is undecided")
            if lab.kind == "off":
                continue
            a.u[n] = 1
            if lab.kind == "const":
                a.q[n] = 1
                a.c[n] = (values or {}).get(n, 0.0)
            elif lab.kind == "var":
                a.w[n, lab.ref] = 1
            else:
                a.z[n, op_list.index(lab.ref)] = 1
        return a

    def labels(self) -> list[Label]:
        out = []
        for n in range(len(self.u)):
            if self.q[n]:
                out.append(CONST)
            elif self.w[n].any():
                out.append(var_label(int(np.argmax(self.w[n]))))
            elif self.z[n].any():
                out.append(op_label(self.ops.all[int(np.argmax(self.z[n]))]))
            else:
                out.append(OFF)
        return out


def validate(template: TreeTemplate, a: Assignment, max_constants: int | None = None
             ) -> list[tuple[str, int]]:
    """Return the violated constraints as (family, node) pairs; empty means valid."""
    out = []
    op_list = a.ops.all
    is_bin = np.array([op.arity == 2 for op in op_list], dtype=bool)
    for n in range(template.size):
        if a.q[n] + a.w[n].sum() + a.z[n].sum() != a.u[n]:
            out.append(("eq-ops", n))
        succ = template.successors(n)
        if succ is None:
            if a.z[n].any():
                out.append(("leaf-operator", n))
            continue
        l, r = succ
        if a.u[r] != a.z[n][is_bin].sum():
            out.append(("successor-binary", n))
        if a.u[l] != a.z[n].sum():
            out.append(("successor-unary", n))
        if a.z[n][is_bin].any() and a.q[l] and a.q[r]:
            out.append(("extra-constant-children", n))
        if a.z[n][~is_bin].any() and a.q[l]:
            out.append(("extra-constant-children", n))
    if a.u[template.root] != 1:
        out.append(("root-active", template.root))
    counts = a.z.sum(axis=0)
    for j, op in enumerate(op_list):
        if counts[j] > a.ops.cap(op.id):
            out.append(("multiplicity", -1))
    if max_constants is not None and a.q.sum() > max_constants:
        out.append(("multiplicity", -1))
    return out


def encode(tree: Tree, template: TreeTemplate, ops: OperatorSet, m: int) -> Assignment:
    labels: list[Label] = [OFF] * template.size
    values: dict[int, float] = {}

    def place(t, n):
        if n >= template.size:
            raise InvalidAssignment("tree is deeper than the template")
        if isinstance(t, Const):
            labels[n] = CONST
            values[n] = t.value
        elif isinstance(t, Var):
            if not 0 <= t.index < m:
                raise InvalidAssignment(f"variable index {t.index} outside 0..{m - 1}")
            labels[n] = var_label(t.index)
        else:
            if t.op not in ops:
                raise InvalidAssignment(f"operator {t.op.id} not in the operator set")
            labels[n] = op_label(ops.get(t.op.id))
            if template.is_leaf(n):
                raise InvalidAssignment("tree is deeper than the template")
            if isinstance(t, Unary):
                place(t.child, 2 * n + 1)
            else:
                place(t.left, 2 * n + 1)
                place(t.right, 2 * n + 2)

    place(tree, template.root)
    return Assignment.from_labels(template, labels, ops, m, values)


def decode(template: TreeTemplate, a: Assignment) -> Tree:
    violations = validate(template, a)
    if violations:
        raise InvalidAssignment(f"assignment violates {violations}")
    return labels_to_tree(a.labels(), values={n: float(a.c[n]) for n in range(template.size)})


def labels_to_tree(labels: Sequence[Label], n: int = 0, values: dict[int, float] | None = None) -> Tree:
    lab = labels[n]
    if lab is None or lab.kind == "off":
        raise InvalidAssignment(f"node {n} is not an active decided node")
    if lab.kind == "const":
        return Const((values or {}).get(n, 1.0))
    if lab.kind == "var":
        return Var(lab.ref)
    if lab.ref.arity == 1:
        return Unary(lab.ref, labels_to_tree(labels, 2 * n + 1, values))
    return Binary(lab.ref, labels_to_tree(labels, 2 * n + 1, values),
                  labels_to_tree(labels, 2 * n + 2, values))


# --- canonical keys -----------------------------------------------------------
# constant "0" < variables "1:dddd" < operator-rooted "2:id(...)"

def _leaf_key(lab: Label) -> str:
    return "0" if lab.kind == "const" else f"1:{lab.ref:04d}"


def canonical_key(tree: Tree) -> str:
    if isinstance(tree, Const):
        return "0"
    if isinstance(tree, Var):
        return f"1:{tree.index:04d}"
    if isinstance(tree, Unary):
        return f"2:{tree.op.id}({canonical_key(tree.child)})"
    kl, kr = canonical_key(tree.left), canonical_key(tree.right)
    if tree.op.commutative and kr < kl:
        kl, kr = kr, kl
    return f"2:{tree.op.id}({kl},{kr})"


def is_canonical(tree: Tree) -> bool:
    """True when every commutative node already has its children in key order."""
    for t in walk(tree):
        if isinstance(t, Binary) and t.op.commutative:
            if canonical_key(t.left) > canonical_key(t.right):
                return False
    return True


def partial_key(labels: Sequence[Label | None], n: int) -> tuple[str, bool]:
    """Known prefix of the canonical key of the subtree at ``n``, and whether it is complete."""
    lab = labels[n]
    if lab is None:
        return "", False
    if lab.kind in ("const", "var"):
        return _leaf_key(lab), True
    op = lab.ref
    head = f"2:{op.id}("
    if op.arity == 1:
        k, done = partial_key(labels, 2 * n + 1)
        return (head + k + ")", True) if done else (head + k, False)
    kl, cl = partial_key(labels, 2 * n + 1)
    kr, cr = partial_key(labels, 2 * n + 2)
    if op.commutative:
        if cl and cr:
            a, b = sorted((kl, kr))
            return f"{head}{a},{b})", True
        return head, False
    if not cl:
        return head + kl, False
    return (f"{head}{kl},{kr})", True) if cr else (f"{head}{kl},{kr}", False)


def _order_possible(kl: str, cl: bool, kr: str, cr: bool) -> bool:
    """Can some completion still satisfy key(left) <= key(right)?"""
    if cl and cr:
        return kl <= kr
    k = min(len(kl), len(kr))
    if kl[:k] != kr[:k]:
        return kl[:k] < kr[:k]
    return True


# --- search states ----------------------------------------------------------------

@dataclass(frozen=True)
class PartialAssignment:
    labels: tuple

    @cached_property
    def frontier(self) -> list[int]:
        return [n for n, lab in enumerate(self.labels) if lab is None]

    @property
    def complete(self) -> bool:
        return not self.frontier

    @cached_property
    def op_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for lab in self.labels:
            if lab is not None and lab.kind == "op":
                counts[lab.ref.id] = counts.get(lab.ref.id, 0) + 1
        return counts

    @cached_property
    def n_constants(self) -> int:
        return sum(1 for lab in self.labels if lab is not None and lab.kind == "const")

    def forced_active(self) -> int:
        """Nodes certainly active in every completion."""
        count = 0
        for n, lab in enumerate(self.labels):
            if lab is None:
                count += required_status(self.labels, n) == "active"
            elif lab.kind != "off":
                count += 1
        return count

    def min_weight(self) -> float:
        return sum(lab.ref.weight for lab in self.labels if lab is not None and lab.kind == "op")

    def tree(self, values: dict[int, float] | None = None) -> Tree:
        return labels_to_tree(self.labels, 0, values)


def empty_partial(template: TreeTemplate) -> PartialAssignment:
    return PartialAssignment((None,) * template.size)


def required_status(labels: Sequence[Label | None], n: int) -> str | None:
    """"active" / "off" when the predecessor's label settles node ``n``; else None."""
    if n == 0:
        return "active"
    par = (n - 1) // 2
    pl = labels[par]
    if pl is None:
        return None
    if pl.kind != "op":
        return "off"
    if pl.ref.arity == 2 or n == 2 * par + 1:
        return "active"
    return "off"


def admissible_labels(p: PartialAssignment, n: int, template: TreeTemplate, ops: OperatorSet,
                      m: int, max_constants: int) -> list[Label]:
    """Labels for active node ``n`` allowed by caps and the constant-child rules,
    in branching order: operators, variables, constant."""
    out: list[Label] = []
    if not template.is_leaf(n):
        for op in ops.all:
            if p.op_counts.get(op.id, 0) < ops.cap(op.id):
                out.append(op_label(op))
    out.extend(var_label(d) for d in range(m))
    if p.n_constants < max_constants and _constant_allowed(p.labels, n):
        out.append(CONST)
    return out


def _constant_allowed(labels, n) -> bool:
    if n == 0:
        return True
    par = (n - 1) // 2
    pl = labels[par]
    if pl is None or pl.kind != "op":
        return True
    if pl.ref.arity == 1:
        return False  # unary operator over a constant
    if n == 2 * par + 2:
        left = labels[n - 1]
        return left is None or left.kind != "const"
    right = labels[n + 1]
    return right is None or right.kind != "const"


def assign(p: PartialAssignment, n: int, label: Label, template: TreeTemplate) -> tuple:
    """Label node ``n`` and switch off the successors its label deactivates."""
    labels = list(p.labels)
    labels[n] = label
    succ = template.successors(n)
    if succ is not None:
        off_roots = []
        if label.kind != "op":
            off_roots = list(succ)
        elif label.ref.arity == 1:
            off_roots = [succ[1]]
        for root in off_roots:
            for k in template.subtree(root):
                labels[k] = OFF
    return tuple(labels)


def symmetry_ok(labels: Sequence[Label | None], n: int) -> bool:
    """Check key(left) <= key(right) at every commutative ancestor of ``n``."""
    k = n
    while k > 0:
        k = (k - 1) // 2
        lab = labels[k]
        if lab is not None and lab.kind == "op" and lab.ref.commutative:
            kl, cl = partial_key(labels, 2 * k + 1)
            kr, cr = partial_key(labels, 2 * k + 2)
            if not _order_possible(kl, cl, kr, cr):
                return False
    return True


def branch(p: PartialAssignment, template: TreeTemplate, ops: OperatorSet, m: int,
           max_constants: int = 2, symmetry: bool = True) -> list[PartialAssignment]:
    if not p.frontier:
        raise ValueError("partial assignment has no frontier node")
    n = p.frontier[0]
    status = required_status(p.labels, n)
    if status == "off":
        return [PartialAssignment(assign(p, n, OFF, template))]
    children = []
    for lab in admissible_labels(p, n, template, ops, m, max_constants):
        labels = assign(p, n, lab, template)
        if symmetry and not symmetry_ok(labels, n):
            continue
        children.append(PartialAssignment(labels))
    return children


# --- counting and exhaustive enumeration ---------------------------------------------

def count_structures(depth: int, ops: OperatorSet, m: int, constants: bool = True,
                     max_constants: int | None = None, guard: int = COUNT_GUARD) -> int:
    """Number of valid complete labellings of a depth-``depth`` template, before
    symmetry reduction, honouring caps and the constant-child rules."""
    op_list = ops.all
    caps = [ops.cap(op.id) for op in op_list]
    kmax = max_constants if max_constants is not None else (2 ** depth if constants else 0)
    zero = (0,) * len(op_list)

    # state: (op counts, n constants, root is constant) -> number of subtrees
    leaves: dict = {(zero, 0, False): m}
    if constants and kmax >= 1:
        leaves[(zero, 1, True)] = 1
    leaves = {k: v for k, v in leaves.items() if v}
    level = dict(leaves)
    for _ in range(depth):
        nxt = dict(leaves)
        for j, op in enumerate(op_list):
            def bump(counts):
                if counts[j] >= caps[j]:
                    return None
                return counts[:j] + (counts[j] + 1,) + counts[j + 1:]

            if op.arity == 1:
                for (cnt, nc, is_c), v in level.items():
                    if is_c:
                        continue
                    b = bump(cnt)
                    if b is not None:
                        key = (b, nc, False)
                        nxt[key] = nxt.get(key, 0) + v
            else:
                items = list(level.items())
                for (c1, n1, k1), v1 in items:
                    for (c2, n2, k2), v2 in items:
                        if k1 and k2 or n1 + n2 > kmax:
                            continue
                        merged = tuple(a + b for a, b in zip(c1, c2))
                        if any(x > cap for x, cap in zip(merged, caps)):
                            continue
                        b = bump(merged)
                        if b is not None:
                            key = (b, n1 + n2, False)
                            nxt[key] = nxt.get(key, 0) + v1 * v2
        level = nxt
    total = sum(level.values())
    if total >= guard:
        raise TooLarge(f"{total} structures exceed the guard {guard}")
    return total


def enumerate_trees(depth: int, ops: OperatorSet, m: int, constants: bool = True,
                    max_constants: int | None = None) -> Iterator[Tree]:
    """Every valid structure (constants set to 1.0), flips included.

    Written independently of :func:`branch` so it can serve as its oracle.
    """
    kmax = max_constants if max_constants is not None else (2 ** depth if constants else 0)
    if not constants:
        kmax = 0

    def gen(d):
        for i in range(m):
            yield Var(i)
        yield Const(1.0)
        if d == 0:
            return
        for op in ops.all:
            if op.arity == 1:
                for ch in gen(d - 1):
                    if not isinstance(ch, Const):
                        yield Unary(op, ch)
            else:
                subs = list(gen(d - 1))
                for a in subs:
                    for b in subs:
                        if isinstance(a, Const) and isinstance(b, Const):
                            continue
                        yield Binary(op, a, b)

    for t in gen(depth):
        nodes = list(walk(t))
        if sum(isinstance(x, Const) for x in nodes) > kmax:
            continue
        counts: dict[str, int] = {}
        for x in nodes:
            if isinstance(x, (Unary, Binary)):
                counts[x.op.id] = counts.get(x.op.id, 0) + 1
        if all(v <= ops.cap(k) for k, v in counts.items()):
            yield t
