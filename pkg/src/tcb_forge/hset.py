"""Hash-consed integer sets (big-endian Patricia tries, Okasaki & Gill).

Trie nodes live in an :class:`InternContext` of their own, so equal sets get
the same root id and ``hset_eq`` is an integer comparison.  ``hset_union`` and
``hset_inter`` return the left operand as soon as both sides of a recursive
call are the same node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import ContractError, DomainError
from .hashcons import InternContext, NodeId, Tag

MAX_ELEMENT = 1023

_EMPTY = Tag("Empty")
_ARITY = {"Empty": 0, "Leaf": 0, "Branch": 2}


def _set_arity(tag: Tag) -> int:
    return _ARITY[tag.kind]


def _highest_bit(x: int) -> int:
    return 1 << (x.bit_length() - 1)


def _prefix(k: int, m: int) -> int:
    # bits strictly above the branching bit
    return k & ~((m << 1) - 1)


def _zero(k: int, m: int) -> bool:
    return k & m == 0


class HSetContext:
    """Intern table for set nodes, plus the shortcut-hit counter."""

    def __init__(self, shortcuts: bool = True):
        self.nodes = InternContext(_set_arity)
        self.shortcuts = shortcuts
        self.shortcut_hits = 0
        self.empty_id = self.nodes.intern(_EMPTY)

    def empty(self) -> "HSet":
        return HSet(self, self.empty_id)

    def of(self, elems: Iterable[int]) -> "HSet":
        root = self.empty_id
        for e in elems:
            root = self._insert(_check(e), root)
        return HSet(self, root)

    # -- node helpers --------------------------------------------------------
    def _leaf(self, k):
        return self.nodes.intern(Tag("Leaf", k))

    def _branch(self, p, m, left, right):
        # canonical form: never keep an empty subtrie
        if left == self.empty_id:
            return right
        if right == self.empty_id:
            return left
        return self.nodes.intern(Tag("Branch", (p, m)), (left, right))

    def _key(self, nid):
        """(prefix, mask) of a non-empty node; a leaf is its own prefix with mask 0."""
        tag = self.nodes.nodes[nid].tag
        if tag.kind == "Leaf":
            return tag.arg, 0
        return tag.arg

    def _join(self, p0, t0, p1, t1):
        m = _highest_bit(p0 ^ p1)
        if _zero(p0, m):
            return self._branch(_prefix(p0, m), m, t0, t1)
        return self._branch(_prefix(p0, m), m, t1, t0)

    def _insert(self, k, t):
        node = self.nodes.nodes[t]
        kind = node.tag.kind
        if kind == "Empty":
            return self._leaf(k)
        if kind == "Leaf":
            j = node.tag.arg
            if j == k:
                return t
            return self._join(k, self._leaf(k), j, t)
        p, m = node.tag.arg
        if _prefix(k, m) == p:
            left, right = node.children
            if _zero(k, m):
                return self._branch(p, m, self._insert(k, left), right)
            return self._branch(p, m, left, self._insert(k, right))
        return self._join(k, self._leaf(k), p, t)

    def _mem(self, k, t):
        while True:
            node = self.nodes.nodes[t]
            kind = node.tag.kind
            if kind == "Empty":
                return False
            if kind == "Leaf":
                return node.tag.arg == k
            p, m = node.tag.arg
            if _prefix(k, m) != p:
                return False
            t = node.children[0] if _zero(k, m) else node.children[1]

    def _union(self, s, t):
        if s == t and self.shortcuts:
            self.shortcut_hits += 1
            return s
        e = self.empty_id
        if s == e:
            return t
        if t == e:
            return s
        ns, nt = self.nodes.nodes[s], self.nodes.nodes[t]
        if ns.tag.kind == "Leaf":
            return self._insert(ns.tag.arg, t)
        if nt.tag.kind == "Leaf":
            return self._insert(nt.tag.arg, s)
        p, m = ns.tag.arg
        q, n = nt.tag.arg
        s0, s1 = ns.children
        t0, t1 = nt.children
        if m == n and p == q:
            return self._branch(p, m, self._union(s0, t0), self._union(s1, t1))
        if m > n and _prefix(q, m) == p:
            if _zero(q, m):
                return self._branch(p, m, self._union(s0, t), s1)
            return self._branch(p, m, s0, self._union(s1, t))
        if m < n and _prefix(p, n) == q:
            if _zero(p, n):
                return self._branch(q, n, self._union(s, t0), t1)
            return self._branch(q, n, t0, self._union(s, t1))
        return self._join(p, s, q, t)

    def _inter(self, s, t):
        if s == t and self.shortcuts:
            self.shortcut_hits += 1
            return s
        e = self.empty_id
        if s == e or t == e:
            return e
        ns, nt = self.nodes.nodes[s], self.nodes.nodes[t]
        if ns.tag.kind == "Leaf":
            return s if self._mem(ns.tag.arg, t) else e
        if nt.tag.kind == "Leaf":
            return t if self._mem(nt.tag.arg, s) else e
        p, m = ns.tag.arg
        q, n = nt.tag.arg
        s0, s1 = ns.children
        t0, t1 = nt.children
        if m == n and p == q:
            return self._branch(p, m, self._inter(s0, t0), self._inter(s1, t1))
        if m > n and _prefix(q, m) == p:
            return self._inter(s0 if _zero(q, m) else s1, t)
        if m < n and _prefix(p, n) == q:
            return self._inter(s, t0 if _zero(p, n) else t1)
        return e

    def _elements(self, t, out):
        node = self.nodes.nodes[t]
        if node.tag.kind == "Leaf":
            out.append(node.tag.arg)
        elif node.tag.kind == "Branch":
            self._elements(node.children[0], out)
            self._elements(node.children[1], out)


def _check(e):
    if not isinstance(e, int) or not 0 <= e <= MAX_ELEMENT:
        raise DomainError(f"set element {e!r} outside 0..{MAX_ELEMENT}")
    return e


@dataclass(frozen=True)
class HSet:
    ctx: HSetContext
    root: NodeId

    def __iter__(self):
        out: list[int] = []
        self.ctx._elements(self.root, out)
        return iter(out)

    def __len__(self):
        out: list[int] = []
        self.ctx._elements(self.root, out)
        return len(out)

    def __contains__(self, e):
        return hset_mem(self, e)

    def __eq__(self, other):
        return isinstance(other, HSet) and hset_eq(self, other)

    def __hash__(self):
        return hash((id(self.ctx), self.root))

    def __repr__(self):
        return f"HSet({sorted(self)})"


def _same_ctx(a: HSet, b: HSet) -> HSetContext:
    if a.ctx is not b.ctx:
        raise ContractError("sets belong to different intern contexts")
    return a.ctx


def hset_union(a: HSet, b: HSet) -> HSet:
    ctx = _same_ctx(a, b)
    return HSet(ctx, ctx._union(a.root, b.root))


def hset_inter(a: HSet, b: HSet) -> HSet:
    ctx = _same_ctx(a, b)
    return HSet(ctx, ctx._inter(a.root, b.root))


def hset_mem(a: HSet, e: int) -> bool:
    return a.ctx._mem(_check(e), a.root)


def hset_add(a: HSet, e: int) -> HSet:
    return HSet(a.ctx, a.ctx._insert(_check(e), a.root))


def hset_eq(a: HSet, b: HSet) -> bool:
    return _same_ctx(a, b) is not None and a.root == b.root


def hset_subset(a: HSet, b: HSet) -> bool:
    """a ⊆ b, decided by one union and an id comparison."""
    return hset_union(a, b).root == b.root
