"""Symbolic execution into hash-consed terms, and the block equivalence checker.

The checker is sound but deliberately incomplete: it performs no
simplification, so two blocks are accepted only when every observed register,
the memory term and the trap set come out as the very same interned nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional

from .errors import ContractError
from .hashcons import InternContext, NodeId, Tag
from .hset import HSetContext
from .machine import (NUM_REGS, AddI, BinR, Block, Fmadd, Ld, MovI, Pseudo, Sd,
                      Sld)

# -- verdicts ----------------------------------------------------------------

REGISTER_MISMATCH = "register-mismatch"
MEMORY_MISMATCH = "memory-mismatch"
TRAP_SET_MISMATCH = "trap-set-mismatch"
OUTCOME_MISMATCH = "outcome-mismatch"
STRUCTURAL_MISMATCH = "structural-mismatch"
CHECKSUM_MISMATCH = "checksum-mismatch"
ASM_ERROR = "asm-error"


@dataclass(frozen=True)
class Reason:
    kind: str
    detail: Any = None

    def __str__(self):
        if self.detail is None:
            return self.kind
        if self.kind == REGISTER_MISMATCH:
            return f"{self.kind} r{self.detail}"
        return f"{self.kind} {self.detail}"


@dataclass(frozen=True)
class Verdict:
    """``reason is None`` means Equivalent.  ``witness`` names a failing input."""

    reason: Optional[Reason] = None
    witness: Optional[str] = None

    @property
    def equivalent(self) -> bool:
        return self.reason is None

    def __bool__(self):
        return self.equivalent

    def __str__(self):
        if self.equivalent:
            return "EQUIVALENT"
        s = f"REJECTED {self.reason}"
        return f"{s} ({self.witness})" if self.witness else s


EQUIVALENT = Verdict()


def rejected(kind, detail=None, witness=None) -> Verdict:
    return Verdict(Reason(kind, detail), witness)


# -- symbolic execution -----------------------------------------------------


@dataclass(frozen=True)
class SymbolicState:
    """Register terms, memory term and trap-address terms of a block.

    Two states compare equal when registers and memory agree by id and the trap
    terms agree as a set; the order in which independent loads were listed is
    not observable.
    """

    reg_terms: tuple[NodeId, ...]
    mem_term: NodeId
    trap_terms: tuple[NodeId, ...]

    @property
    def trap_set(self) -> frozenset:
        return frozenset(self.trap_terms)

    def __eq__(self, other):
        if not isinstance(other, SymbolicState):
            return NotImplemented
        return (self.reg_terms == other.reg_terms and self.mem_term == other.mem_term
                and self.trap_set == other.trap_set)

    def __hash__(self):
        return hash((self.reg_terms, self.mem_term, self.trap_set))


def initial_state(ctx: InternContext) -> SymbolicState:
    regs = tuple(ctx.intern(Tag("InitReg", r)) for r in range(NUM_REGS))
    return SymbolicState(regs, ctx.intern(Tag("InitMem")), ())


def _addr_term(ctx, base, off):
    return ctx.intern(Tag("UnOp", ("AddImm", off)), (base,))


def symb_exec(ctx: InternContext, b: Block) -> SymbolicState:
    st = initial_state(ctx)
    regs = list(st.reg_terms)
    mem = st.mem_term
    traps: list[NodeId] = []
    intern = ctx.intern
    for i in b.instrs:
        t = type(i)
        if t is BinR:
            regs[i.rd] = intern(Tag("BinOp", i.op), (regs[i.rs1], regs[i.rs2]))
        elif t is AddI:
            regs[i.rd] = intern(Tag("UnOp", ("AddImm", i.imm)), (regs[i.rs1],))
        elif t is MovI:
            regs[i.rd] = intern(Tag("ConstI64", i.imm))
        elif t is Fmadd:
            regs[i.rd] = intern(Tag("TernOp", "Fmadd"), (regs[i.rs1], regs[i.rs2], regs[i.rs3]))
        elif t is Ld:
            a = _addr_term(ctx, regs[i.rs], i.off)
            traps.append(a)
            regs[i.rd] = intern(Tag("Load"), (mem, a))
        elif t is Sld:
            a = _addr_term(ctx, regs[i.rs], i.off)
            regs[i.rd] = intern(Tag("DismissibleLoad"), (mem, a))
        elif t is Sd:
            a = _addr_term(ctx, regs[i.rs1], i.off)
            traps.append(a)
            mem = intern(Tag("Store"), (mem, a, regs[i.rs2]))
        elif t is Pseudo:
            raise ContractError("pseudo-instructions must be expanded before symbolic execution")
        else:
            raise ContractError(f"unknown instruction {i!r}")
    return SymbolicState(tuple(regs), mem, tuple(traps))


def equiv_check(ctx: InternContext, b1: Block, b2: Block, *, trap_subset=False,
                sets: Optional[HSetContext] = None) -> Verdict:
    """Validate ``b2`` (e.g. a schedule) against ``b1``.

    Register terms over the live-out set and the memory term must be id-equal.
    Trap-address terms must match as sets; with ``trap_subset`` the candidate
    may drop trapping operations (it then only refines ``b1``'s outcome).
    """
    if b1.live_out != b2.live_out:
        raise ContractError("blocks disagree on live_out")
    s1 = symb_exec(ctx, b1)
    s2 = symb_exec(ctx, b2)
    sets = sets or HSetContext()
    for r in sets.of(b1.live_regs):
        if s1.reg_terms[r] != s2.reg_terms[r]:
            return rejected(REGISTER_MISMATCH, r)
    if s1.mem_term != s2.mem_term:
        return rejected(MEMORY_MISMATCH)
    t1, t2 = s1.trap_set, s2.trap_set
    if not (t2 <= t1 if trap_subset else t2 == t1):
        return rejected(TRAP_SET_MISMATCH)
    return EQUIVALENT


def check_blocks(b1: Block, b2: Block, **kw) -> Verdict:
    """``equiv_check`` in a fresh private context."""
    return equiv_check(InternContext(), b1, b2, **kw)


# -- untrusted oracles --------------------------------------------------------


def validated(block: Block, oracle: Callable[[Block], Block]) -> tuple[Block, Verdict]:
    """Call ``oracle`` once and keep its output only if it validates.

    On rejection, or if the oracle raises, the original block is returned.
    """
    try:
        candidate = oracle(block)
    except Exception as exc:  # untrusted code must not abort the pipeline
        return block, rejected("oracle-failure", type(exc).__name__)
    if not isinstance(candidate, Block) or candidate.live_out != block.live_out:
        return block, rejected("oracle-failure", "malformed artifact")
    verdict = check_blocks(block, candidate)
    return (candidate if verdict else block), verdict


def oracle_twice_consistency(block: Block, oracle: Callable[[Block], Block],
                             validate: Callable[[Block, Block], Verdict] = check_blocks) -> bool:
    """Run the oracle twice and check each artifact on its own.

    True iff every artifact's verdict is a function of that artifact alone:
    re-validating it in a fresh context gives the same answer, and the verdict
    never involves comparing the two runs with each other.
    """
    for artifact in (oracle(block), oracle(block)):
        first = validate(block, artifact)
        again = validate(block, artifact)
        if first != again:
            return False
    return True
