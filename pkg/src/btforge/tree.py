"""Behavior-tree representation, tick engine and structural surgery.

Trees are immutable arenas of :class:`Node` records.  Every tree produced by
the builders or the surgery functions is stored in preorder with the root at
index 0, but :func:`validate` accepts arbitrary arenas so hand-built (and
possibly broken) trees can be checked.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, NamedTuple, Optional, Union


class Status(enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    RUNNING = "running"


class Action(str, enum.Enum):
    WALK_RIGHT = "right"
    WALK_LEFT = "left"
    CROUCH = "crouch"
    SHOOT = "shoot"
    JUMP = "jump"


class Predicate(str, enum.Enum):
    ENEMY = "enemy"
    OBSTACLE = "obstacle"


class ConditionId(NamedTuple):
    """One receptive-field test: ``predicate`` at window cell (row, col)."""

    row: int
    col: int
    predicate: Predicate

    def __str__(self) -> str:
        return f"{self.predicate.value}@{self.row},{self.col}"


FIELD_SIZE = 5

ALL_CONDITIONS: tuple[ConditionId, ...] = tuple(
    ConditionId(r, c, p)
    for r in range(FIELD_SIZE)
    for c in range(FIELD_SIZE)
    for p in Predicate
)


class DecoratorPolicy(str, enum.Enum):
    INVERT = "inv"
    FORCE_SUCCESS = "force-ok"
    FORCE_FAILURE = "force-fail"


class NodeType(str, enum.Enum):
    SELECTOR = "selector"
    SEQUENCE = "sequence"
    PARALLEL = "parallel"
    DECORATOR = "decorator"
    ACTION = "action"
    CONDITION = "condition"


CONTROL_TYPES = frozenset(
    {NodeType.SELECTOR, NodeType.SEQUENCE, NodeType.PARALLEL, NodeType.DECORATOR}
)
EXECUTION_TYPES = frozenset({NodeType.ACTION, NodeType.CONDITION})


@dataclass(frozen=True)
class Selector:
    type = NodeType.SELECTOR

    def label(self) -> str:
        return "sel"


@dataclass(frozen=True)
class Sequence:
    type = NodeType.SEQUENCE

    def label(self) -> str:
        return "seq"


@dataclass(frozen=True)
class Parallel:
    threshold: int
    type = NodeType.PARALLEL

    def label(self) -> str:
        return f"par {self.threshold}"


@dataclass(frozen=True)
class Decorator:
    policy: DecoratorPolicy
    type = NodeType.DECORATOR

    def label(self) -> str:
        return self.policy.value


@dataclass(frozen=True)
class ActionLeaf:
    action: Action
    type = NodeType.ACTION

    def label(self) -> str:
        return f"act {self.action.value}"


@dataclass(frozen=True)
class ConditionLeaf:
    condition: ConditionId
    type = NodeType.CONDITION

    def label(self) -> str:
        return f"cond {self.condition}"


NodeKind = Union[Selector, Sequence, Parallel, Decorator, ActionLeaf, ConditionLeaf]

# Nested (kind, (child shapes...)) form; the canonical structural identity.
Shape = tuple


class Node(NamedTuple):
    kind: NodeKind
    children: tuple[int, ...] = ()
    parent: Optional[int] = None


class StructureError(Exception):
    """Raised when a tree violates its structural invariants at tick time."""


class SurgeryError(ValueError):
    """Raised for surgery requests that cannot produce a tree."""


@dataclass(frozen=True, eq=False)
class BehaviorTree:
    nodes: tuple[Node, ...]
    root: int = 0

    @classmethod
    def from_shape(cls, shape: Shape) -> BehaviorTree:
        nodes: list[Node] = []

        def build(sh: Shape, parent: Optional[int]) -> int:
            kind, children = sh
            idx = len(nodes)
            nodes.append(Node(kind, (), parent))
            kids = tuple(build(ch, idx) for ch in children)
            nodes[idx] = Node(kind, kids, parent)
            return idx

        build(shape, None)
        return cls(tuple(nodes), 0)

    @cached_property
    def _shape(self) -> Shape:
        return self.shape(self.root)

    def shape(self, node: Optional[int] = None) -> Shape:
        if node is None:
            return self._shape
        rec = self.nodes[node]
        return (rec.kind, tuple(self.shape(c) for c in rec.children))

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BehaviorTree):
            return NotImplemented
        return self._shape == other._shape

    def __hash__(self) -> int:
        return hash(self._shape)

    def __repr__(self) -> str:
        from .text import format_compact

        try:
            return f"BehaviorTree({format_compact(self)})"
        except Exception:
            return f"BehaviorTree(<{len(self.nodes)} nodes>)"

    def kind(self, node: int) -> NodeKind:
        return self.nodes[node].kind

    def depth(self) -> int:
        def d(i: int) -> int:
            kids = self.nodes[i].children
            return 1 + max((d(c) for c in kids), default=0)

        return d(self.root)


# -- builders ---------------------------------------------------------------


def _compose(kind: NodeKind, children: Iterable[BehaviorTree]) -> BehaviorTree:
    return BehaviorTree.from_shape((kind, tuple(c.shape() for c in children)))


def sel(*children: BehaviorTree) -> BehaviorTree:
    return _compose(Selector(), children)


def seq(*children: BehaviorTree) -> BehaviorTree:
    return _compose(Sequence(), children)


def par(threshold: int, *children: BehaviorTree) -> BehaviorTree:
    return _compose(Parallel(threshold), children)


def decorate(policy: DecoratorPolicy, child: BehaviorTree) -> BehaviorTree:
    return _compose(Decorator(policy), (child,))


def inv(child: BehaviorTree) -> BehaviorTree:
    return decorate(DecoratorPolicy.INVERT, child)


def act(action: Union[Action, str]) -> BehaviorTree:
    return BehaviorTree.from_shape((ActionLeaf(Action(action)), ()))


def cond(predicate: Union[Predicate, str], row: int, col: int) -> BehaviorTree:
    cid = ConditionId(row, col, Predicate(predicate))
    return BehaviorTree.from_shape((ConditionLeaf(cid), ()))


# -- execution --------------------------------------------------------------


class Blackboard:
    """Per-tick view of the world handed to :func:`tick`.

    ``conditions`` holds the ConditionIds that are true this tick; every other
    condition is false.  Action nodes call :meth:`request`; only the first
    feasible request of a tick pass is kept in ``requested``.
    """

    def __init__(
        self,
        conditions: Iterable[ConditionId] = (),
        feasible: Iterable[Action] = tuple(Action),
        on_tick: Optional[Callable[[int], None]] = None,
    ):
        self.conditions = frozenset(conditions)
        self.feasible = frozenset(feasible)
        self.on_tick = on_tick
        self.requested: Optional[Action] = None

    def holds(self, condition: ConditionId) -> bool:
        return condition in self.conditions

    def request(self, action: Action) -> Status:
        if action not in self.feasible:
            return Status.FAILURE
        if self.requested is None:
            self.requested = action
        return Status.RUNNING


_INVERT = {
    Status.SUCCESS: Status.FAILURE,
    Status.FAILURE: Status.SUCCESS,
    Status.RUNNING: Status.RUNNING,
}


def apply_policy(policy: DecoratorPolicy, status: Status) -> Status:
    if status is Status.RUNNING:
        return status
    if policy is DecoratorPolicy.INVERT:
        return _INVERT[status]
    if policy is DecoratorPolicy.FORCE_SUCCESS:
        return Status.SUCCESS
    return Status.FAILURE


def tick(tree: BehaviorTree, node: int, blackboard: Blackboard) -> Status:
    """Propagate one tick from ``node`` and return its status."""
    nodes = tree.nodes
    if not 0 <= node < len(nodes):
        raise StructureError(f"invalid node index {node}")
    if blackboard.on_tick is not None:
        blackboard.on_tick(node)
    rec = nodes[node]
    kind = rec.kind
    kt = type(kind)

    if kt is ConditionLeaf:
        return Status.SUCCESS if kind.condition in blackboard.conditions else Status.FAILURE
    if kt is ActionLeaf:
        return blackboard.request(kind.action)
    if kt is Selector:
        for child in rec.children:
            status = tick(tree, child, blackboard)
            if status is not Status.FAILURE:
                return status
        return Status.FAILURE
    if kt is Sequence:
        for child in rec.children:
            status = tick(tree, child, blackboard)
            if status is not Status.SUCCESS:
                return status
        return Status.SUCCESS
    if kt is Parallel:
        n = len(rec.children)
        if not 1 <= kind.threshold <= n:
            raise StructureError(f"parallel threshold {kind.threshold} out of range for {n} children")
        successes = failures = 0
        for child in rec.children:
            status = tick(tree, child, blackboard)
            if status is Status.SUCCESS:
                successes += 1
            elif status is Status.FAILURE:
                failures += 1
        if successes >= kind.threshold:
            return Status.SUCCESS
        if failures >= n - kind.threshold + 1:
            return Status.FAILURE
        return Status.RUNNING
    if kt is Decorator:
        if len(rec.children) != 1:
            raise StructureError(f"decorator at {node} must have exactly one child")
        return apply_policy(kind.policy, tick(tree, rec.children[0], blackboard))
    raise StructureError(f"unknown node kind {kind!r}")


def tick_root(tree: BehaviorTree, blackboard: Blackboard) -> Status:
    return tick(tree, tree.root, blackboard)


# -- validation -------------------------------------------------------------


class Violation(NamedTuple):
    node: Optional[int]
    rule: str
    message: str


def _arity_ok(kind: NodeKind, n: int) -> bool:
    if kind.type in EXECUTION_TYPES:
        return n == 0
    if kind.type is NodeType.DECORATOR:
        return n == 1
    return n >= 1


def validate(tree: BehaviorTree) -> list[Violation]:
    """Return every structural violation; an empty list means the tree is ok."""
    out: list[Violation] = []
    nodes = tree.nodes
    n = len(nodes)
    if not 0 <= tree.root < n:
        return [Violation(None, "root", f"root index {tree.root} outside arena of {n}")]
    if nodes[tree.root].parent is not None:
        out.append(Violation(tree.root, "root", "root has a parent"))

    for i, rec in enumerate(nodes):
        for c in rec.children:
            if not 0 <= c < n:
                out.append(Violation(i, "index", f"child index {c} outside arena"))
            elif nodes[c].parent != i:
                out.append(Violation(c, "linkage", f"parent link {nodes[c].parent} disagrees with parent {i}"))
        if rec.parent is not None:
            if not 0 <= rec.parent < n:
                out.append(Violation(i, "index", f"parent index {rec.parent} outside arena"))
            elif i not in nodes[rec.parent].children:
                out.append(Violation(i, "linkage", f"node not listed among children of {rec.parent}"))
        if not _arity_ok(rec.kind, len(rec.children)):
            out.append(Violation(i, "arity", f"{rec.kind.type.value} with {len(rec.children)} children"))
        if isinstance(rec.kind, Parallel):
            m = rec.kind.threshold
            if m < 1 or (rec.children and m > len(rec.children)):
                out.append(Violation(i, "threshold", f"M={m} for {len(rec.children)} children"))

    seen: set[int] = set()
    stack = [tree.root]
    while stack:
        i = stack.pop()
        if i in seen:
            out.append(Violation(i, "cycle", "node reached twice from root"))
            continue
        seen.add(i)
        stack.extend(c for c in nodes[i].children if 0 <= c < n)
    for i in range(n):
        if i not in seen:
            out.append(Violation(i, "orphan", "node unreachable from root"))
    return out


def is_valid(tree: BehaviorTree) -> bool:
    return not validate(tree)


# -- enumeration and surgery ------------------------------------------------


def enumerate_subtrees(tree: BehaviorTree) -> list[int]:
    """Breadth-first node order from the root, siblings left to right."""
    order = []
    queue = deque([tree.root])
    while queue:
        i = queue.popleft()
        order.append(i)
        queue.extend(tree.nodes[i].children)
    return order


def subtree_size(tree: BehaviorTree, node: int) -> int:
    count = 0
    stack = [node]
    while stack:
        i = stack.pop()
        count += 1
        stack.extend(tree.nodes[i].children)
    return count


def _check_index(tree: BehaviorTree, node: int) -> None:
    if not 0 <= node < len(tree.nodes):
        raise SurgeryError(f"node index {node} outside tree of {len(tree.nodes)} nodes")


def extract_subtree(tree: BehaviorTree, node: int) -> BehaviorTree:
    _check_index(tree, node)
    return BehaviorTree.from_shape(tree.shape(node))


def replace_subtree(tree: BehaviorTree, node: int, replacement: BehaviorTree) -> BehaviorTree:
    _check_index(tree, node)
    problems = validate(replacement)
    if problems:
        raise SurgeryError(f"replacement tree is invalid: {problems[0].message}")
    new = replacement.shape()

    def rebuild(i: int) -> Shape:
        if i == node:
            return new
        rec = tree.nodes[i]
        return (rec.kind, tuple(rebuild(c) for c in rec.children))

    return BehaviorTree.from_shape(rebuild(tree.root))


def remove_subtree(tree: BehaviorTree, node: int) -> BehaviorTree:
    """Delete ``node`` and its descendants.

    Control nodes left without children are removed as well, cascading
    upwards; Parallel thresholds are clamped to the surviving child count.
    """
    _check_index(tree, node)
    if node == tree.root:
        raise SurgeryError("cannot remove the root")

    def rebuild(i: int) -> Optional[Shape]:
        if i == node:
            return None
        rec = tree.nodes[i]
        if not rec.children:
            return (rec.kind, ())
        kids = tuple(s for s in (rebuild(c) for c in rec.children) if s is not None)
        if not kids:
            return None
        kind = rec.kind
        if isinstance(kind, Parallel) and kind.threshold > len(kids):
            kind = Parallel(len(kids))
        return (kind, kids)

    shape = rebuild(tree.root)
    if shape is None:
        raise SurgeryError("removal would empty the tree")
    return BehaviorTree.from_shape(shape)


def labels(tree: BehaviorTree) -> list[str]:
    return [rec.kind.label() for rec in tree.nodes]
