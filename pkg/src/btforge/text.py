"""S-expression syntax for behavior trees: parser, canonical printer, DOT export.

::

    (sel
      (seq
        (cond enemy@2,3)
        (act jump))
      (act right))
"""

from __future__ import annotations

from pathlib import Path
from typing import NamedTuple, Optional, Union

from .tree import (
    Action,
    ActionLeaf,
    BehaviorTree,
    ConditionId,
    ConditionLeaf,
    Decorator,
    DecoratorPolicy,
    Parallel,
    Predicate,
    Selector,
    Sequence,
    Shape,
    FIELD_SIZE,
)

HEADER = "; bt-forge v1"
MAX_DEPTH = 400

_CONTROL_HEADS = {"sel", "seq", "par"}
_DECORATOR_HEADS = {p.value: p for p in DecoratorPolicy}
_ACTIONS = {a.value: a for a in Action}
_PREDICATES = {p.value: p for p in Predicate}


class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.message = message
        self.line = line
        self.column = column


class Token(NamedTuple):
    text: str
    line: int
    column: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line, col = line + 1, 1
            i += 1
        elif ch.isspace():
            i += 1
            col += 1
        elif ch == ";":
            while i < n and text[i] != "\n":
                i += 1
                col += 1
        elif ch in "()@,":
            tokens.append(Token(ch, line, col))
            i += 1
            col += 1
        elif ch.isascii() and (ch.isalnum() or ch == "-"):
            start, start_col = i, col
            while i < n and text[i].isascii() and (text[i].isalnum() or text[i] == "-"):
                i += 1
                col += 1
            tokens.append(Token(text[start:i], line, start_col))
        else:
            raise ParseError(f"unexpected character {ch!r}", line, col)
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0
        lines = text.split("\n")
        self.eof = (len(lines), len(lines[-1]) + 1)

    def peek(self) -> Optional[Token]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self, what: str) -> Token:
        tok = self.peek()
        if tok is None:
            raise ParseError(f"unexpected end of input, expected {what}", *self.eof)
        self.pos += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.next(repr(text))
        if tok.text != text:
            raise ParseError(f"expected {text!r}, found {tok.text!r}", tok.line, tok.column)
        return tok

    def nat(self, lo: int, hi: int, what: str) -> int:
        tok = self.next(what)
        if not tok.text.isdigit():
            raise ParseError(f"expected {what}, found {tok.text!r}", tok.line, tok.column)
        value = int(tok.text)
        if not lo <= value <= hi:
            raise ParseError(f"{what} {value} out of range [{lo},{hi}]", tok.line, tok.column)
        return value

    def node(self, depth: int) -> Shape:
        open_tok = self.next("'('")
        if open_tok.text != "(":
            raise ParseError(f"expected '(', found {open_tok.text!r}", open_tok.line, open_tok.column)
        if depth > MAX_DEPTH:
            raise ParseError("tree nested too deeply", open_tok.line, open_tok.column)
        head = self.next("node head")
        h = head.text

        if h == "act":
            tok = self.next("action name")
            if tok.text not in _ACTIONS:
                raise ParseError(f"unknown action {tok.text!r}", tok.line, tok.column)
            self.expect(")")
            return (ActionLeaf(_ACTIONS[tok.text]), ())

        if h == "cond":
            tok = self.next("predicate")
            if tok.text not in _PREDICATES:
                raise ParseError(f"unknown predicate {tok.text!r}", tok.line, tok.column)
            self.expect("@")
            row = self.nat(0, FIELD_SIZE - 1, "row")
            self.expect(",")
            col = self.nat(0, FIELD_SIZE - 1, "column")
            self.expect(")")
            return (ConditionLeaf(ConditionId(row, col, _PREDICATES[tok.text])), ())

        if h in _DECORATOR_HEADS:
            child = self.node(depth + 1)
            close = self.next("')'")
            if close.text != ")":
                raise ParseError(f"{h} takes exactly one child", close.line, close.column)
            return (Decorator(_DECORATOR_HEADS[h]), (child,))

        if h in _CONTROL_HEADS:
            threshold = None
            if h == "par":
                tok = self.next("threshold M")
                if not tok.text.isdigit():
                    raise ParseError(f"expected threshold M, found {tok.text!r}", tok.line, tok.column)
                threshold = (int(tok.text), tok)
            children = []
            while True:
                tok = self.peek()
                if tok is None:
                    raise ParseError(f"unclosed ({h}", open_tok.line, open_tok.column)
                if tok.text == ")":
                    self.pos += 1
                    break
                children.append(self.node(depth + 1))
            if not children:
                raise ParseError(f"({h} needs at least one child", open_tok.line, open_tok.column)
            if h == "sel":
                return (Selector(), tuple(children))
            if h == "seq":
                return (Sequence(), tuple(children))
            m, mtok = threshold
            if not 1 <= m <= len(children):
                raise ParseError(
                    f"M={m} out of range for {len(children)} children", mtok.line, mtok.column
                )
            return (Parallel(m), tuple(children))

        raise ParseError(f"unknown node head {h!r}", head.line, head.column)


def parse(text: Union[str, bytes]) -> BehaviorTree:
    """Parse one tree; raises :class:`ParseError` carrying line and column."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not UTF-8: {exc.reason}", 1, exc.start + 1) from None
    p = _Parser(text)
    shape = p.node(0)
    extra = p.peek()
    if extra is not None:
        raise ParseError(f"trailing input {extra.text!r}", extra.line, extra.column)
    return BehaviorTree.from_shape(shape)


def _head(kind) -> str:
    if isinstance(kind, Selector):
        return "sel"
    if isinstance(kind, Sequence):
        return "seq"
    if isinstance(kind, Parallel):
        return f"par {kind.threshold}"
    if isinstance(kind, Decorator):
        return kind.policy.value
    if isinstance(kind, ActionLeaf):
        return f"act {kind.action.value}"
    return f"cond {kind.condition}"


def format_tree(tree: BehaviorTree) -> str:
    """Canonical text: one node per line, two spaces per depth level."""
    lines: list[str] = []

    def emit(i: int, depth: int) -> None:
        rec = tree.nodes[i]
        lines.append("  " * depth + "(" + _head(rec.kind))
        for c in rec.children:
            emit(c, depth + 1)
        lines[-1] += ")"

    emit(tree.root, 0)
    return "\n".join(lines)


def format_compact(tree: BehaviorTree, node: Optional[int] = None) -> str:
    i = tree.root if node is None else node
    rec = tree.nodes[i]
    inner = " ".join(format_compact(tree, c) for c in rec.children)
    return f"({_head(rec.kind)}{' ' + inner if inner else ''})"


def dumps(tree: BehaviorTree) -> str:
    """File contents for a ``.bt`` artifact."""
    return f"{HEADER}\n{format_tree(tree)}\n"


def write_bt(path: Union[str, Path], tree: BehaviorTree) -> None:
    Path(path).write_bytes(dumps(tree).encode("utf-8"))


def read_bt(path: Union[str, Path]) -> BehaviorTree:
    return parse(Path(path).read_bytes())


def _dot_label(kind) -> str:
    if isinstance(kind, Selector):
        return "?"
    if isinstance(kind, Sequence):
        return "→"
    if isinstance(kind, Parallel):
        return f"⇉ {kind.threshold}"
    if isinstance(kind, Decorator):
        return kind.policy.value
    if isinstance(kind, ActionLeaf):
        return kind.action.value
    return str(kind.condition)


def to_dot(tree: BehaviorTree, name: str = "bt") -> str:
    lines = [f"digraph {name} {{", "  node [fontname=\"Helvetica\"];"]
    order: list[int] = []
    stack = [tree.root]
    while stack:
        i = stack.pop()
        order.append(i)
        stack.extend(reversed(tree.nodes[i].children))
    ids = {i: f"n{k}" for k, i in enumerate(order)}
    for i in order:
        kind = tree.nodes[i].kind
        shape = "ellipse" if isinstance(kind, ConditionLeaf) else "box"
        label = _dot_label(kind).replace('"', '\\"')
        lines.append(f'  {ids[i]} [label="{label}", shape={shape}];')
    for i in order:
        for c in tree.nodes[i].children:
            lines.append(f"  {ids[i]} -> {ids[c]};")
    lines.append("}")
    return "\n".join(lines) + "\n"
