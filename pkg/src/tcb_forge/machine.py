"""The miniature ISA and its concrete reference interpreter.

Values are Python ints normalised to signed 64-bit two's complement, or the
``UNDEF`` sentinel.  Undef is poison: any arithmetic touching it yields Undef,
and any concrete value refines it.  Memory is a flat map of 8-byte cells; a
cell exists iff its address is valid.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Optional, Union

from .errors import ContractError, ImmediateRangeError

NUM_REGS = 16
SCRATCH = (14, 15)
MASK64 = (1 << 64) - 1
CELL = 8


class _Undef:
    __slots__ = ()

    def __repr__(self):
        return "Undef"

    def __reduce__(self):
        return (_undef, ())


def _undef():
    return UNDEF


UNDEF = _Undef()
Value = Union[int, _Undef]


def wrap64(x: int) -> int:
    """Reduce an int to signed 64-bit two's complement."""
    x &= MASK64
    return x - (1 << 64) if x >> 63 else x


def fits_signed(x: int, bits: int) -> bool:
    return -(1 << (bits - 1)) <= x < (1 << (bits - 1))


# --------------------------------------------------------------------------
# instructions

BINOPS = ("Add", "Sub", "Mul", "And", "Or", "Xor", "Nand", "Sll", "Srl")

IMM_BITS = {"AddI": 12, "MovI": 16, "Ld": 12, "Sld": 12, "Sd": 12}


def _reg(r):
    if not isinstance(r, int) or isinstance(r, bool) or not 0 <= r < NUM_REGS:
        raise ContractError(f"bad register {r!r}")


def _imm(name, value, bits):
    if not isinstance(value, int) or isinstance(value, bool):
        raise ImmediateRangeError(f"{name}: immediate {value!r} is not an integer")
    if not fits_signed(value, bits):
        raise ImmediateRangeError(
            f"{name}: immediate {value} does not fit signed {bits}-bit")


class Instr:
    """Base class.  ``reads``/``writes`` give the register footprint."""

    __slots__ = ()
    is_mem = False
    is_store = False

    def reads(self) -> tuple[int, ...]:
        return ()

    def writes(self) -> tuple[int, ...]:
        return ()

    @property
    def mnemonic(self) -> str:
        return type(self).__name__.lower()

    @classmethod
    def unchecked(cls, *args):
        """Build without range checks.  Test hook for seeded offset bugs only."""
        obj = object.__new__(cls)
        for name, value in zip(cls.__dataclass_fields__, args):
            object.__setattr__(obj, name, value)
        return obj


@dataclass(frozen=True)
class BinR(Instr):
    op: str
    rd: int
    rs1: int
    rs2: int

    def __post_init__(self):
        if self.op not in BINOPS:
            raise ContractError(f"unknown binary op {self.op!r}")
        for r in (self.rd, self.rs1, self.rs2):
            _reg(r)

    @property
    def mnemonic(self):
        return self.op.lower()

    def reads(self):
        return (self.rs1, self.rs2)

    def writes(self):
        return (self.rd,)


@dataclass(frozen=True)
class AddI(Instr):
    rd: int
    rs1: int
    imm: int

    def __post_init__(self):
        _reg(self.rd), _reg(self.rs1)
        _imm("addi", self.imm, 12)

    def reads(self):
        return (self.rs1,)

    def writes(self):
        return (self.rd,)


@dataclass(frozen=True)
class MovI(Instr):
    rd: int
    imm: int

    def __post_init__(self):
        _reg(self.rd)
        _imm("movi", self.imm, 16)

    def writes(self):
        return (self.rd,)


@dataclass(frozen=True)
class Fmadd(Instr):
    """rd := rs1 * rs2 + rs3 (wrapping)."""

    rd: int
    rs1: int
    rs2: int
    rs3: int

    def __post_init__(self):
        for r in (self.rd, self.rs1, self.rs2, self.rs3):
            _reg(r)

    def reads(self):
        return (self.rs1, self.rs2, self.rs3)

    def writes(self):
        return (self.rd,)


@dataclass(frozen=True)
class Ld(Instr):
    """Trapping load: rd := mem[rs + off]."""

    rd: int
    off: int
    rs: int
    is_mem = True

    def __post_init__(self):
        _reg(self.rd), _reg(self.rs)
        _imm("ld", self.off, 12)

    def reads(self):
        return (self.rs,)

    def writes(self):
        return (self.rd,)


@dataclass(frozen=True)
class Sld(Instr):
    """Dismissible load: an invalid address yields Undef instead of a trap."""

    rd: int
    off: int
    rs: int
    is_mem = True

    def __post_init__(self):
        _reg(self.rd), _reg(self.rs)
        _imm("sld", self.off, 12)

    def reads(self):
        return (self.rs,)

    def writes(self):
        return (self.rd,)


@dataclass(frozen=True)
class Sd(Instr):
    """Store: mem[rs1 + off] := rs2."""

    rs2: int
    off: int
    rs1: int
    is_mem = True
    is_store = True

    def __post_init__(self):
        _reg(self.rs1), _reg(self.rs2)
        _imm("sd", self.off, 12)

    def reads(self):
        return (self.rs1, self.rs2)


@dataclass(frozen=True)
class MemCopy:
    """Copy ``size`` bytes from [src, src+size) to [dst, dst+size), cell by cell."""

    dst: int
    src: int
    size: int
    align: int = 8

    def __post_init__(self):
        _reg(self.dst), _reg(self.src)
        if self.dst in SCRATCH or self.src in SCRATCH:
            raise ContractError("memcpy arguments may not be scratch registers")
        if not isinstance(self.size, int) or not 0 <= self.size <= 4096 or self.size % 8:
            raise ContractError(f"memcpy size {self.size!r} not a multiple of 8 in 0..4096")
        if self.align != 8:
            raise ContractError(f"memcpy alignment must be 8, got {self.align!r}")


@dataclass(frozen=True)
class LoadImm64:
    rd: int
    imm: int

    def __post_init__(self):
        _reg(self.rd)
        if self.rd in SCRATCH:
            raise ContractError("loadimm64 destination may not be a scratch register")
        if not isinstance(self.imm, int) or not -(1 << 63) <= self.imm < (1 << 64):
            raise ImmediateRangeError(f"loadimm64: {self.imm!r} is not a 64-bit integer")
        object.__setattr__(self, "imm", wrap64(self.imm))


PseudoInstr = Union[MemCopy, LoadImm64]


@dataclass(frozen=True)
class Pseudo(Instr):
    p: PseudoInstr

    def __post_init__(self):
        if not isinstance(self.p, (MemCopy, LoadImm64)):
            raise ContractError(f"not a pseudo-instruction: {self.p!r}")

    def reads(self):
        if isinstance(self.p, MemCopy):
            return (self.p.dst, self.p.src)
        return ()

    def writes(self):
        if isinstance(self.p, LoadImm64):
            return (self.p.rd,)
        return ()


MAX_BLOCK = 10_000


@dataclass(frozen=True)
class Block:
    """Straight-line code.  ``live_out=None`` means every register is observed."""

    instrs: tuple = ()
    live_out: Optional[frozenset] = None

    def __post_init__(self):
        object.__setattr__(self, "instrs", tuple(self.instrs))
        if len(self.instrs) > MAX_BLOCK:
            raise ContractError(f"block longer than {MAX_BLOCK} instructions")
        for i in self.instrs:
            if not isinstance(i, Instr):
                raise ContractError(f"not an instruction: {i!r}")
        if self.live_out is not None:
            live = frozenset(self.live_out)
            for r in live:
                _reg(r)
            object.__setattr__(self, "live_out", live)

    def __len__(self):
        return len(self.instrs)

    def __iter__(self):
        return iter(self.instrs)

    @property
    def live_regs(self) -> tuple[int, ...]:
        if self.live_out is None:
            return tuple(range(NUM_REGS))
        return tuple(sorted(self.live_out))

    def has_pseudo(self) -> bool:
        return any(isinstance(i, Pseudo) for i in self.instrs)


# --------------------------------------------------------------------------
# state


class Outcome(enum.Enum):
    RUNNING = "running"
    TRAPPED = "trapped"


@dataclass(frozen=True)
class MemoryState:
    """Cells keyed by unsigned byte address; exactly the valid cells are present."""

    cells: dict = field(default_factory=dict)

    @classmethod
    def from_ranges(cls, ranges, fill=0):
        """Valid memory over half-open byte ranges, every cell set to ``fill``."""
        cells = {}
        for lo, hi in ranges:
            if lo % CELL or hi % CELL:
                raise ContractError("memory ranges must be 8-byte aligned")
            for a in range(lo, hi, CELL):
                cells[a] = fill
        return cls(cells)

    def is_valid(self, addr) -> bool:
        return addr in self.cells

    @property
    def valid(self) -> list[tuple[int, int]]:
        """The valid address ranges, merged, as half-open byte intervals."""
        out: list[list[int]] = []
        for a in sorted(self.cells):
            if out and out[-1][1] == a:
                out[-1][1] = a + CELL
            else:
                out.append([a, a + CELL])
        return [tuple(r) for r in out]

    def __hash__(self):
        return hash(tuple(sorted(self.cells.items(), key=lambda kv: kv[0])))


@dataclass(frozen=True)
class ExecState:
    regs: tuple = (0,) * NUM_REGS
    mem: MemoryState = field(default_factory=MemoryState)
    outcome: Outcome = Outcome.RUNNING

    def __post_init__(self):
        regs = tuple(self.regs)
        if len(regs) != NUM_REGS:
            raise ContractError(f"need {NUM_REGS} registers, got {len(regs)}")
        object.__setattr__(self, "regs", tuple(v if v is UNDEF else wrap64(v) for v in regs))

    @property
    def trapped(self):
        return self.outcome is Outcome.TRAPPED

    def with_reg(self, r, v) -> "ExecState":
        regs = list(self.regs)
        regs[r] = v
        return ExecState(tuple(regs), self.mem, self.outcome)


# --------------------------------------------------------------------------
# interpreter


def _binop(op, a, b):
    if a is UNDEF or b is UNDEF:
        return UNDEF
    if op == "Add":
        r = a + b
    elif op == "Sub":
        r = a - b
    elif op == "Mul":
        r = a * b
    elif op == "And":
        r = a & b
    elif op == "Or":
        r = a | b
    elif op == "Xor":
        r = a ^ b
    elif op == "Nand":
        r = ~(a & b)
    elif op == "Sll":
        r = a << (b & 63)
    else:  # Srl
        r = (a & MASK64) >> (b & 63)
    return wrap64(r)


def _addr(base, off):
    if base is UNDEF:
        return None
    return (base + off) & MASK64


def _step(regs: list, cells: dict, i) -> bool:
    """Execute ``i`` in place.  Returns False on trap."""
    t = type(i)
    if t is BinR:
        regs[i.rd] = _binop(i.op, regs[i.rs1], regs[i.rs2])
    elif t is AddI:
        a = regs[i.rs1]
        regs[i.rd] = UNDEF if a is UNDEF else wrap64(a + i.imm)
    elif t is MovI:
        regs[i.rd] = i.imm
    elif t is Fmadd:
        a, b, c = regs[i.rs1], regs[i.rs2], regs[i.rs3]
        regs[i.rd] = UNDEF if UNDEF in (a, b, c) else wrap64(a * b + c)
    elif t is Ld:
        addr = _addr(regs[i.rs], i.off)
        if addr not in cells:
            return False
        regs[i.rd] = cells[addr]
    elif t is Sld:
        addr = _addr(regs[i.rs], i.off)
        regs[i.rd] = cells.get(addr, UNDEF) if addr is not None else UNDEF
    elif t is Sd:
        addr = _addr(regs[i.rs1], i.off)
        if addr not in cells:
            return False
        cells[addr] = regs[i.rs2]
    elif t is Pseudo:
        raise ContractError("pseudo-instructions must be expanded before execution")
    else:
        raise ContractError(f"unknown instruction {i!r}")
    return True


def exec_instr(s: ExecState, i: Instr) -> ExecState:
    if s.trapped:
        raise ContractError("cannot execute from a trapped state")
    regs = list(s.regs)
    cells = dict(s.mem.cells) if i.is_store else s.mem.cells
    if not _step(regs, cells, i):
        return ExecState(s.regs, s.mem, Outcome.TRAPPED)
    mem = MemoryState(cells) if i.is_store else s.mem
    return ExecState(tuple(regs), mem, Outcome.RUNNING)


def exec_block(s0: ExecState, b: Block) -> ExecState:
    """Run ``b`` from ``s0``, stopping at the first trap.  Pure."""
    if s0.trapped:
        raise ContractError("cannot execute from a trapped state")
    regs = list(s0.regs)
    cells = dict(s0.mem.cells)
    for i in b.instrs:
        if not _step(regs, cells, i):
            return ExecState(tuple(regs), MemoryState(cells), Outcome.TRAPPED)
    return ExecState(tuple(regs), MemoryState(cells), Outcome.RUNNING)


# --------------------------------------------------------------------------
# refinement and checksums


def refines(v1: Value, v2: Value) -> bool:
    """v1 is at least as defined as v2: anything refines Undef."""
    if v2 is UNDEF:
        return True
    return v1 is not UNDEF and v1 == v2


def state_refines(s1: ExecState, s2: ExecState, regs=None) -> bool:
    """Point-wise refinement.  Trapped states carry no observable contents."""
    if s1.outcome is not s2.outcome:
        return False
    if s1.trapped:
        return True
    for r in (range(NUM_REGS) if regs is None else regs):
        if not refines(s1.regs[r], s2.regs[r]):
            return False
    c1, c2 = s1.mem.cells, s2.mem.cells
    if c1.keys() != c2.keys():
        return False
    return all(refines(c1[a], c2[a]) for a in c2)


_PACK_I64 = struct.Struct("<Bq").pack
_PACK_CELL = struct.Struct("<BQ").pack


def checksum(s: ExecState, regs=None) -> int:
    """64-bit digest of registers (index order) then memory (address order).

    Undef hashes as a distinct tag byte; every trapped state shares one digest.
    """
    h = hashlib.blake2b(digest_size=8)
    if s.trapped:
        h.update(b"T")
        return int.from_bytes(h.digest(), "little")
    h.update(b"R")
    for r in (range(NUM_REGS) if regs is None else regs):
        v = s.regs[r]
        h.update(b"\x02" if v is UNDEF else _PACK_I64(1, v))
    h.update(b"M")
    cells = s.mem.cells
    for a in sorted(cells):
        v = cells[a]
        h.update(_PACK_CELL(3, a))
        h.update(b"\x02" if v is UNDEF else _PACK_I64(1, v))
    return int.from_bytes(h.digest(), "little")
