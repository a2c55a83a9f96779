"""Pseudo-instruction expansion with fixed, per-case clobber specifications.

The case split lives in :func:`select_variant` (checked code): each variant
has its own clobber set, fixed in the table below.  :func:`expand` is the
untrusted part; whatever it emits goes through :func:`validate_expansion`,
which checks the register footprint symbolically and the semantics
concretely, including an aliasing matrix over the copy's source and
destination.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

from .errors import ContractError
from .hashcons import InternContext
from .hset import HSet, HSetContext, hset_subset, hset_union
from .machine import (CELL, NUM_REGS, UNDEF, AddI, BinR, Block, ExecState, Ld,
                      LoadImm64, MemCopy, MemoryState, MovI, Outcome, Pseudo,
                      Sd, exec_block, exec_instr, fits_signed, refines)
from .validator import (EQUIVALENT, MEMORY_MISMATCH, OUTCOME_MISMATCH,
                        REGISTER_MISMATCH, Verdict, initial_state, rejected,
                        symb_exec)

STRAIGHT_MAX = 64
MAX_OFFSET = 2047


@dataclass(frozen=True)
class Variant:
    name: str
    clobbers: frozenset
    applies: Callable
    n_pairs: int = 0

    def __str__(self):
        return f"{self.name}({self.n_pairs})" if self.name == "CopyStraight" else self.name


def _is_copy(p):
    return isinstance(p, MemCopy)


VARIANTS = (
    Variant("CopyEmpty", frozenset(), lambda p: _is_copy(p) and p.size == 0),
    Variant("CopyStraight", frozenset({15}),
            lambda p: _is_copy(p) and 0 < p.size <= STRAIGHT_MAX),
    Variant("CopyLoop", frozenset({14, 15}), lambda p: _is_copy(p) and p.size > STRAIGHT_MAX),
    Variant("Imm16", frozenset(),
            lambda p: isinstance(p, LoadImm64) and fits_signed(p.imm, 16)),
    Variant("Imm64Full", frozenset(),
            lambda p: isinstance(p, LoadImm64) and not fits_signed(p.imm, 16)),
)


def select_variant(p) -> Variant:
    if not isinstance(p, (MemCopy, LoadImm64)):
        raise ContractError(f"not a pseudo-instruction: {p!r}")
    for v in VARIANTS:
        if v.applies(p):
            if v.name == "CopyStraight":
                return Variant(v.name, v.clobbers, v.applies, p.size // CELL)
            return v
    raise ContractError(f"no variant covers {p!r}")


@dataclass(frozen=True)
class ClobberSpec:
    destinations: HSet
    clobbers: HSet
    mem_effect: Optional[tuple] = None  # ("writes", dst_reg, size)


def clobber_spec(p, sets: HSetContext) -> ClobberSpec:
    v = select_variant(p)
    if isinstance(p, LoadImm64):
        return ClobberSpec(sets.of([p.rd]), sets.of(v.clobbers))
    return ClobberSpec(sets.empty(), sets.of(v.clobbers), ("writes", p.dst, p.size))


# -- expansion (untrusted) ----------------------------------------------------

EXPANDER_FAULTS = ("undeclared-clobber", "memcpy-aliasing", "memcpy-operand-order",
                   "memcpy-offset")


def _copy_cell(out, dst, src, off, tmp, base_tmp, unchecked=False):
    if off <= MAX_OFFSET or unchecked:
        mk_ld = Ld.unchecked if unchecked else Ld
        mk_sd = Sd.unchecked if unchecked else Sd
        out.append(mk_ld(tmp, off, src))
        out.append(mk_sd(tmp, off, dst))
        return
    # rebase through the pointer scratch; off - 2047 stays in range up to 4094
    out.append(AddI(base_tmp, src, MAX_OFFSET))
    out.append(Ld(tmp, off - MAX_OFFSET, base_tmp))
    out.append(AddI(base_tmp, dst, MAX_OFFSET))
    out.append(Sd(tmp, off - MAX_OFFSET, base_tmp))


def _expand_copy(p: MemCopy, fault=None):
    dst, src = p.dst, p.src
    if fault == "memcpy-operand-order":
        dst, src = src, dst
    tmp = 13 if fault == "undeclared-clobber" else 15
    offsets = list(range(0, p.size, CELL))
    if fault == "memcpy-aliasing" and p.dst != p.src:
        # distinct registers taken to mean disjoint blocks: copies top-down
        offsets.reverse()
    out: list = []
    unchecked = fault == "memcpy-offset"
    for off in offsets:
        _copy_cell(out, dst, src, off, tmp, 14, unchecked)
    return out


def _expand_imm64(rd, v):
    """Horner over 11-bit chunks: doubling shifts, add-immediate ors, rd only."""
    out = [MovI(rd, v >> 55)]
    for k in range(4, -1, -1):
        out.extend(BinR("Add", rd, rd, rd) for _ in range(11))
        chunk = (v >> (11 * k)) & 0x7FF
        if chunk:
            out.append(AddI(rd, rd, chunk))
    return out


def expand(p, fault: Optional[str] = None) -> list:
    """Real instructions implementing ``p``.  ``fault`` seeds a known bug class."""
    if fault is not None and fault not in EXPANDER_FAULTS:
        raise ContractError(f"unknown expander fault {fault!r}")
    v = select_variant(p)
    if v.name == "CopyEmpty":
        return []
    if isinstance(p, MemCopy):
        return _expand_copy(p, fault)
    if v.name == "Imm16":
        return [MovI(p.rd, p.imm)]
    return _expand_imm64(p.rd, p.imm)


def expand_block(b: Block, fault=None, validate=None) -> tuple[Block, list]:
    """Expand every pseudo in ``b``.

    With ``validate`` (a callable ``(p, e) -> Verdict``) each expansion is
    checked and a rejected one is replaced by the fault-free expansion.
    Returns the block and a list of ``(pseudo, verdict)`` rejections.
    """
    out: list = []
    rejections = []
    for i in b.instrs:
        if not isinstance(i, Pseudo):
            out.append(i)
            continue
        e = expand(i.p, fault)
        if validate is not None:
            verdict = validate(i.p, e)
            if not verdict:
                rejections.append((i.p, verdict))
                e = expand(i.p)
        out.extend(e)
    return Block(out, b.live_out), rejections


# -- reference semantics (trusted) --------------------------------------------


def exec_pseudo(s: ExecState, p) -> ExecState:
    if s.trapped:
        raise ContractError("cannot execute from a trapped state")
    v = select_variant(p)
    regs = list(s.regs)
    if isinstance(p, LoadImm64):
        regs[p.rd] = p.imm
        return ExecState(tuple(regs), s.mem, Outcome.RUNNING)
    dst, src = regs[p.dst], regs[p.src]
    cells = s.mem.cells
    n = p.size // CELL
    if n:
        if dst is UNDEF or src is UNDEF:
            return ExecState(s.regs, s.mem, Outcome.TRAPPED)
        dst &= (1 << 64) - 1
        src &= (1 << 64) - 1
        span = [((src + CELL * k) & ((1 << 64) - 1), (dst + CELL * k) & ((1 << 64) - 1))
                for k in range(n)]
        if any(a not in cells or b not in cells for a, b in span):
            return ExecState(s.regs, s.mem, Outcome.TRAPPED)
        cells = dict(cells)
        for a, b in span:  # forward, cell by cell
            cells[b] = cells[a]
    for r in v.clobbers:
        regs[r] = UNDEF
    return ExecState(tuple(regs), MemoryState(cells), Outcome.RUNNING)


def exec_reference(s: ExecState, b: Block) -> ExecState:
    """Run a block that may still contain pseudos, using their reference semantics."""
    for i in b.instrs:
        if s.trapped:
            break
        s = exec_pseudo(s, i.p) if isinstance(i, Pseudo) else exec_instr(s, i)
    return s


# -- validation -----------------------------------------------------------------

DEFAULT_RANDOM_STATES = 512
MEM_BASE = 0x10000


def _random_regs(rng):
    regs = []
    for _ in range(NUM_REGS):
        x = rng.random()
        if x < 0.1:
            regs.append(UNDEF)
        elif x < 0.5:
            regs.append(rng.randrange(-64, 64))
        else:
            regs.append(rng.getrandbits(64) - (1 << 63))
    return regs


def _copy_state(rng, p: MemCopy, dst_addr, src_addr, holes=False):
    regs = _random_regs(rng)
    regs[p.dst] = dst_addr
    regs[p.src] = src_addr
    lo = min(dst_addr, src_addr) - 2 * CELL
    hi = max(dst_addr, src_addr) + p.size + 2 * CELL
    cells = {}
    for a in range(lo, hi, CELL):
        if holes and rng.random() < 0.02:
            continue
        cells[a] = UNDEF if rng.random() < 0.05 else rng.getrandbits(64) - (1 << 63)
    return ExecState(tuple(regs), MemoryState(cells))


def aliasing_matrix(p, rng=None) -> Iterator[tuple[str, ExecState]]:
    """States covering how the copy's source and destination can overlap.

    For distinct argument registers: identical blocks, overlap by one cell
    and by half the block in each direction, exact adjacency both ways, and
    a gap of one cell.  A single register used as both arguments forces the
    identical case.
    """
    rng = rng or random.Random(0x5EED)
    if not isinstance(p, MemCopy):
        return
    if p.dst == p.src:
        deltas = [0]
    else:
        half = (p.size // 2) // CELL * CELL
        # overlapping cases first: they are the ones that expose ordering bugs
        deltas = list(dict.fromkeys([0, CELL, -CELL, half, -half, p.size, -p.size,
                                     p.size + CELL, -(p.size + CELL)]))
    for d in deltas:
        dst_addr = MEM_BASE + p.size + 4 * CELL
        yield f"alias delta={d}", _copy_state(rng, p, dst_addr, dst_addr + d)


def random_states(p, n, rng) -> Iterator[tuple[str, ExecState]]:
    for k in range(n):
        if isinstance(p, MemCopy):
            if p.dst == p.src:
                dst_addr = src_addr = MEM_BASE + rng.randrange(0, 64) * CELL
            else:
                dst_addr = MEM_BASE + rng.randrange(0, 64) * CELL
                src_addr = dst_addr + p.size + CELL * rng.randrange(1, 64)
                if rng.random() < 0.5:
                    dst_addr, src_addr = src_addr, dst_addr
            s = _copy_state(rng, p, dst_addr, src_addr, holes=rng.random() < 0.1)
        else:
            cells = {MEM_BASE + CELL * j: rng.getrandbits(64) - (1 << 63) for j in range(4)}
            s = ExecState(tuple(_random_regs(rng)), MemoryState(cells))
        yield f"random #{k}", s


def _compare(out: ExecState, ref: ExecState) -> Optional[tuple]:
    if out.outcome is not ref.outcome:
        return (OUTCOME_MISMATCH, None)
    if out.trapped:
        return None
    for r in range(NUM_REGS):
        if not refines(out.regs[r], ref.regs[r]):
            return (REGISTER_MISMATCH, r)
    c1, c2 = out.mem.cells, ref.mem.cells
    if c1 == c2:  # Undef is a singleton, so equal maps refine trivially
        return None
    if c1.keys() != c2.keys() or not all(refines(c1[a], c2[a]) for a in c2):
        return (MEMORY_MISMATCH, None)
    return None


def validate_expansion(p, e, n_random: int = DEFAULT_RANDOM_STATES, seed: int = 0,
                       sets: Optional[HSetContext] = None) -> Verdict:
    """Check ``e`` against the reference semantics of ``p``.

    (a) every register ``e`` leaves different from its initial term is a
    declared destination or clobber; (b) on ``n_random`` random states plus
    the aliasing matrix, running ``e`` refines ``exec_pseudo`` on every
    register and memory cell, with the same outcome.
    """
    block = Block(e)
    if block.has_pseudo():
        raise ContractError("expansion contains pseudo-instructions")
    sets = sets or HSetContext()
    spec = clobber_spec(p, sets)
    ctx = InternContext()
    init = initial_state(ctx)
    final = symb_exec(ctx, block)
    modified = sets.of(r for r in range(NUM_REGS) if final.reg_terms[r] != init.reg_terms[r])
    allowed = hset_union(spec.destinations, spec.clobbers)
    if not hset_subset(modified, allowed):
        bad = min(r for r in modified if r not in allowed)
        return rejected(REGISTER_MISMATCH, bad, "symbolic footprint")

    rng = random.Random(seed)
    # generated lazily: a rejection stops before the remaining states are built
    for label, s in itertools.chain(aliasing_matrix(p, rng), random_states(p, n_random, rng)):
        diff = _compare(exec_block(s, block), exec_pseudo(s, p))
        if diff is not None:
            return rejected(diff[0], diff[1], label)
    return EQUIVALENT
