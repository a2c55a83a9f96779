import random

import pytest
from hypothesis import given, settings, strategies as st

from tcb_forge.errors import ContractError
from tcb_forge.hashcons import InternContext, Tag, intern, structural_eq, verify_intern


def const(ctx, k):
    return intern(ctx, Tag("ConstI64", k))


def test_intern_same_constant_twice():
    ctx = InternContext()
    assert const(ctx, 5) == const(ctx, 5)
    assert len(ctx) == 1


def test_intern_binop_idempotent():
    ctx = InternContext()
    x, y = const(ctx, 1), const(ctx, 2)
    a = intern(ctx, Tag("BinOp", "Add"), [x, y])
    assert intern(ctx, Tag("BinOp", "Add"), [x, y]) == a
    assert intern(ctx, Tag("BinOp", "Add"), [y, x]) != a


def test_ids_are_dense_and_children_smaller():
    ctx = InternContext()
    x, y = const(ctx, 1), const(ctx, 2)
    a = intern(ctx, Tag("BinOp", "Mul"), [x, y])
    assert (x, y, a) == (0, 1, 2)
    for t in ctx.nodes:
        assert all(c < t.id for c in t.children)


@pytest.mark.parametrize("tag,children", [
    (Tag("BinOp", "Add"), [0]),
    (Tag("Store"), [0, 0]),
    (Tag("ConstI64", 3), [0]),
])
def test_arity_mismatch(tag, children):
    ctx = InternContext()
    const(ctx, 0)
    with pytest.raises(ContractError):
        intern(ctx, tag, children)


def test_unknown_child_and_tag():
    ctx = InternContext()
    with pytest.raises(ContractError):
        intern(ctx, Tag("UnOp", "Neg"), [7])
    with pytest.raises(ContractError):
        intern(ctx, Tag("Frobnicate"), [])
    with pytest.raises(ContractError):
        structural_eq(ctx, 0, 0)


def test_structural_eq_examples():
    ctx = InternContext()
    x, y = const(ctx, 1), const(ctx, 2)
    assert structural_eq(ctx, x, x)
    assert not structural_eq(ctx, x, y)


def test_structural_eq_ignores_ids():
    from tcb_forge.hashcons import Term
    ctx = InternContext()
    x, y = const(ctx, 1), const(ctx, 2)
    a = intern(ctx, Tag("BinOp", "Add"), [x, y])
    # plant a duplicate of x behind the table's back: same tree, new id
    dup = len(ctx.nodes)
    ctx.nodes.append(Term(dup, Tag("ConstI64", 1), ()))
    b = len(ctx.nodes)
    ctx.nodes.append(Term(b, Tag("BinOp", "Add"), (dup, y)))
    assert a != b
    assert structural_eq(ctx, a, b)
    assert not verify_intern(ctx, Tag("BinOp", "Add"), [x, y], b)


def test_verify_intern():
    ctx = InternContext()
    x, y = const(ctx, 1), const(ctx, 2)
    add = Tag("BinOp", "Add")
    assert verify_intern(ctx, add, [x, y], intern(ctx, add, [x, y]))
    assert not verify_intern(ctx, add, [x, y], intern(ctx, add, [y, x]))
    assert not verify_intern(ctx, Tag("BinOp", "Sub"), [x, y], intern(ctx, add, [x, y]))
    assert not verify_intern(ctx, add, [x, y], 999)


def test_dump_format():
    ctx = InternContext()
    x = const(ctx, -3)
    intern(ctx, Tag("UnOp", "Neg"), [x])
    assert ctx.dump() == "0 ConstI64:-3\n1 UnOp:Neg 0\n"


# -- random DAGs against a tree oracle ------------------------------------------

LEAVES = [Tag("ConstI64", k) for k in range(3)] + [Tag("InitReg", r) for r in range(2)] + [Tag("InitMem")]
INNER = [Tag("UnOp", "Neg"), Tag("BinOp", "Add"), Tag("BinOp", "Sub"), Tag("TernOp", "Fmadd"),
         Tag("Load"), Tag("Store")]


def random_construction(ctx, rng, steps, max_size=400):
    """Interleaved intern calls; returns (ids, trees) where trees[i] is a plain nested tuple.

    Unfolded tree size is capped so the tuple oracle stays cheap.
    """
    ids, trees, size = [], [], []
    for _ in range(steps):
        small = [j for j in range(max(0, len(ids) - 20), len(ids)) if size[j] * 3 < max_size]
        if not small or rng.random() < 0.3:
            tag, kids = rng.choice(LEAVES), []
        else:
            tag = rng.choice(INNER)
            # bias to recent nodes so trees get deep
            kids = [rng.choice(small) for _ in range(ctx._arity(tag))]
        nid = ctx.intern(tag, [ids[j] for j in kids])
        ids.append(nid)
        trees.append((tag,) + tuple(trees[j] for j in kids))
        size.append(1 + sum(size[j] for j in kids))
    return ids, trees


def tree_eq(a, b):
    """Recursive structural comparison with no identity shortcut."""
    if a[0] != b[0] or len(a) != len(b):
        return False
    return all(tree_eq(x, y) for x, y in zip(a[1:], b[1:]))


def test_random_dags_ids_agree_with_tree_oracle():
    rng = random.Random(1)
    ctx = InternContext()
    ids, trees = random_construction(ctx, rng, 2000)
    for _ in range(2000):
        i, j = rng.randrange(len(ids)), rng.randrange(len(ids))
        same = tree_eq(trees[i], trees[j])
        assert (ids[i] == ids[j]) == same
        assert structural_eq(ctx, ids[i], ids[j]) == same


def test_interning_is_deterministic():
    a, b = InternContext(), InternContext()
    ids_a, _ = random_construction(a, random.Random(5), 500)
    ids_b, _ = random_construction(b, random.Random(5), 500)
    assert ids_a == ids_b
    assert a.dump() == b.dump()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 300))
def test_canonicity_property(seed, steps):
    ctx = InternContext()
    rng = random.Random(seed)
    ids, trees = random_construction(ctx, rng, steps)
    for _ in range(200):
        i, j = rng.randrange(steps), rng.randrange(steps)
        assert (ids[i] == ids[j]) == tree_eq(trees[i], trees[j]) == structural_eq(ctx, ids[i], ids[j])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32))
def test_verify_accepts_exactly_interned(seed):
    rng = random.Random(seed)
    ctx = InternContext()
    ids, _ = random_construction(ctx, rng, 100)
    for cand in set(ids):
        t = ctx.nodes[cand]
        assert verify_intern(ctx, t.tag, t.children, cand)
        other = rng.choice(ids)
        if other != cand:
            assert not verify_intern(ctx, t.tag, t.children, other)
