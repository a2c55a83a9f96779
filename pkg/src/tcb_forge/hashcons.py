"""Hash-consed term DAGs.

Every term is built through :func:`intern`, which looks the (tag, children)
pair up in a table of all existing nodes and only allocates a new node when
no structurally identical one exists.  Node ids are dense integers handed out
in creation order, so within a context ``a == b`` on ids is equivalent to
structural equality of the terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, NamedTuple

from .errors import ContractError

NodeId = int


class Tag(NamedTuple):
    """Constructor symbol: a kind plus an optional static parameter.

    ``Tag("BinOp", "Add")``, ``Tag("InitReg", 3)``, ``Tag("ConstI64", -5)``.
    """

    kind: str
    arg: Any = None

    def __str__(self):
        return self.kind if self.arg is None else f"{self.kind}:{self.arg}"


TERM_ARITY = {
    "InitReg": 0,
    "ConstI64": 0,
    "InitMem": 0,
    "UnOp": 1,
    "BinOp": 2,
    "TernOp": 3,
    "Load": 2,
    "DismissibleLoad": 2,
    "Store": 3,
    "Select": 3,
}


def term_arity(tag: Tag) -> int:
    try:
        return TERM_ARITY[tag.kind]
    except KeyError:
        raise ContractError(f"unknown constructor {tag.kind!r}") from None


@dataclass(frozen=True)
class Term:
    id: NodeId
    tag: Tag
    children: tuple[NodeId, ...]


class InternContext:
    """Append-only intern table.  One per pipeline run; never shared across threads."""

    def __init__(self, arity: Callable[[Tag], int] = term_arity):
        self._arity = arity
        self.table: dict[tuple[Tag, tuple[NodeId, ...]], NodeId] = {}
        self.nodes: list[Term] = []

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, nid):
        return isinstance(nid, int) and 0 <= nid < len(self.nodes)

    def node(self, nid: NodeId) -> Term:
        if nid not in self:
            raise ContractError(f"unknown node id {nid!r}")
        return self.nodes[nid]

    def intern(self, tag: Tag, children=()) -> NodeId:
        children = tuple(children)
        key = (tag, children)
        nid = self.table.get(key)
        if nid is not None:
            return nid
        if len(children) != self._arity(tag):
            raise ContractError(
                f"{tag} expects {self._arity(tag)} children, got {len(children)}")
        n = len(self.nodes)
        for c in children:
            if not (isinstance(c, int) and 0 <= c < n):
                raise ContractError(f"unknown child id {c!r}")
        self.nodes.append(Term(n, tag, children))
        self.table[key] = n
        return n

    def dump(self) -> str:
        """One line per node: ``<id> <tag> <child-ids...>``."""
        lines = []
        for t in self.nodes:
            lines.append(" ".join([str(t.id), str(t.tag), *map(str, t.children)]))
        return "\n".join(lines) + ("\n" if lines else "")


def intern(ctx: InternContext, tag: Tag, children=()) -> NodeId:
    return ctx.intern(tag, children)


def structural_eq(ctx: InternContext, a: NodeId, b: NodeId) -> bool:
    """Slow reference equality: compare the unfolded trees, ignoring ids.

    Ids only serve as memo keys for already-compared pairs; the answer for a
    pair is always derived from tags and the children's answers.  Iterative so
    deep store chains do not hit the recursion limit.
    """
    ctx.node(a), ctx.node(b)
    memo: dict[tuple[NodeId, NodeId], bool] = {}
    stack = [(a, b)]
    while stack:
        x, y = stack[-1]
        if (x, y) in memo:
            stack.pop()
            continue
        nx, ny = ctx.nodes[x], ctx.nodes[y]
        if nx.tag != ny.tag or len(nx.children) != len(ny.children):
            memo[(x, y)] = False
            stack.pop()
            continue
        pairs = list(zip(nx.children, ny.children))
        todo = [p for p in pairs if p not in memo]
        if todo:
            stack.extend(todo)
            continue
        memo[(x, y)] = all(memo[p] for p in pairs)
        stack.pop()
    return memo[(a, b)]


def verify_intern(ctx: InternContext, tag: Tag, children, candidate: NodeId) -> bool:
    """Shallow check that ``candidate`` is the node for ``tag(children)``.

    O(arity): compares the root tag and the children by id, never descending.
    """
    if candidate not in ctx:
        return False
    node = ctx.nodes[candidate]
    children = tuple(children)
    if node.tag != tag or len(node.children) != len(children):
        return False
    return all(x == y for x, y in zip(node.children, children))
