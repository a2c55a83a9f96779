"""Textual assembly: a table-driven printer, a range-checking parser, and the
printer differential.

Grammar, one instruction per line::

    add   rd, rs1, rs2        (sub mul and or xor nand sll srl likewise)
    addi  rd, rs1, imm12
    movi  rd, imm16
    fmadd rd, rs1, rs2, rs3   # rd := rs1 * rs2 + rs3
    ld    rd, off12(rs)
    sld   rd, off12(rs)
    sd    rs2, off12(rs1)     # mem[rs1 + off] := rs2

Pseudo-instructions (``memcpy dst, src, size, align`` and ``li rd, imm64``)
are accepted only when explicitly allowed.  ``#`` starts a comment; blank
lines are ignored.  Immediates are signed decimal.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Optional

from .errors import ContractError, ImmediateRangeError
from .machine import (BINOPS, IMM_BITS, NUM_REGS, AddI, BinR, Block,
                      Fmadd, Ld, LoadImm64, MemCopy, MovI, Pseudo, Sd, Sld,
                      checksum, exec_block, fits_signed)
from .validator import (ASM_ERROR, CHECKSUM_MISMATCH, EQUIVALENT,
                        STRUCTURAL_MISMATCH, Verdict, rejected)


class AsmError(ValueError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno
        self.msg = msg


class AsmRangeError(AsmError):
    pass


class PrintError(ValueError):
    pass


# -- print table ----------------------------------------------------------------


def _shape(i) -> str:
    if isinstance(i, BinR):
        return i.op
    if isinstance(i, Pseudo):
        return type(i.p).__name__
    return type(i).__name__


@dataclass(frozen=True)
class PrintTable:
    """Instruction shape -> format template.  ``offset_scale`` multiplies
    load/store offsets on the way out (1 in a correct table)."""

    templates: dict = field(default_factory=dict)
    offset_scale: int = 1

    def mnemonics(self) -> dict:
        return {shape: t.split()[0] for shape, t in self.templates.items()}


def default_table() -> PrintTable:
    t = {op: f"{op.lower()} {{rd}}, {{rs1}}, {{rs2}}" for op in BINOPS}
    t.update({
        "AddI": "addi {rd}, {rs1}, {imm}",
        "MovI": "movi {rd}, {imm}",
        "Fmadd": "fmadd {rd}, {rs1}, {rs2}, {rs3}",
        "Ld": "ld {rd}, {off}({rs})",
        "Sld": "sld {rd}, {off}({rs})",
        "Sd": "sd {rs2}, {off}({rs1})",
        "MemCopy": "memcpy {dst}, {src}, {size}, {align}",
        "LoadImm64": "li {rd}, {imm}",
    })
    return PrintTable(t)


PRINTER_FAULTS = ("nand-as-and", "fmadd-swap", "offset-scale")


def faulty_table(fault: str) -> PrintTable:
    """A print table with one of the known printer bug classes seeded in."""
    base = default_table()
    t = dict(base.templates)
    if fault == "nand-as-and":
        t["Nand"] = "and {rd}, {rs1}, {rs2}"
        return PrintTable(t)
    if fault == "fmadd-swap":
        t["Fmadd"] = "fmadd {rd}, {rs1}, {rs3}, {rs2}"
        return PrintTable(t)
    if fault == "offset-scale":
        return PrintTable(t, offset_scale=8)
    raise ContractError(f"unknown printer fault {fault!r}")


def table_is_injective(table: PrintTable) -> bool:
    m = list(table.mnemonics().values())
    return len(m) == len(set(m))


# -- printing ---------------------------------------------------------------------


def _fields(i, table):
    if isinstance(i, Pseudo):
        i = i.p
    out = {}
    for name, value in vars(i).items():
        if name in ("rd", "rs", "rs1", "rs2", "rs3", "dst", "src"):
            out[name] = f"r{value}"
        elif name == "op":
            continue
        else:
            out[name] = value
    if "off" in out:
        out["off"] = out["off"] * table.offset_scale
    return out


def print_instr(i, table: Optional[PrintTable] = None) -> str:
    table = table or default_table()
    f = _fields(i, table)
    bits = IMM_BITS.get(type(i).__name__)
    if bits is not None:
        imm = f.get("off", f.get("imm"))
        if not fits_signed(imm, bits):
            raise PrintError(f"{i.mnemonic}: immediate {imm} does not fit signed {bits}-bit")
    return table.templates[_shape(i)].format(**f)


def print_block(b: Block, table: Optional[PrintTable] = None, allow_pseudo=False) -> str:
    if not allow_pseudo and b.has_pseudo():
        raise ContractError("expand pseudo-instructions before printing")
    return "".join(print_instr(i, table) + "\n" for i in b.instrs)


# -- parsing --------------------------------------------------------------------

_REG = re.compile(r"r(\d+)\Z")
_MEMOP = re.compile(r"(-?\d+)\((r\d+)\)\Z")
_INT = re.compile(r"-?\d+\Z")
_ARITY = {"addi": 3, "movi": 2, "fmadd": 4, "ld": 2, "sld": 2, "sd": 2,
          "memcpy": 4, "li": 2, **{op.lower(): 3 for op in BINOPS}}


def _reg(tok, lineno):
    m = _REG.match(tok)
    if not m or int(m.group(1)) >= NUM_REGS or (len(m.group(1)) > 1 and m.group(1)[0] == "0"):
        raise AsmError(lineno, f"bad register {tok!r}")
    return int(m.group(1))


def _int(tok, lineno):
    if not _INT.match(tok):
        raise AsmError(lineno, f"bad integer {tok!r}")
    return int(tok)


def _ranged(tok, bits, lineno):
    v = _int(tok, lineno)
    if not fits_signed(v, bits):
        raise AsmRangeError(lineno, f"immediate {v} does not fit signed {bits}-bit")
    return v


def _memop(tok, lineno):
    m = _MEMOP.match(tok)
    if not m:
        raise AsmError(lineno, f"bad memory operand {tok!r}")
    return _ranged(m.group(1), 12, lineno), _reg(m.group(2), lineno)


def parse_line(line: str, lineno: int = 1, allow_pseudo=False):
    """One instruction, or None for a blank/comment line."""
    text = line.split("#", 1)[0].strip()
    if not text:
        return None
    if not text.isascii():
        raise AsmError(lineno, "non-ASCII text")
    parts = text.split(None, 1)
    mn = parts[0]
    ops = [o.strip() for o in parts[1].split(",")] if len(parts) > 1 else []
    if mn not in _ARITY:
        raise AsmError(lineno, f"unknown mnemonic {mn!r}")
    if mn in ("memcpy", "li") and not allow_pseudo:
        raise AsmError(lineno, f"pseudo-instruction {mn!r} not allowed here")
    if len(ops) != _ARITY[mn] or any(not o for o in ops):
        raise AsmError(lineno, f"{mn} takes {_ARITY[mn]} operands, got {len(ops)}")
    try:
        if mn == "addi":
            return AddI(_reg(ops[0], lineno), _reg(ops[1], lineno), _ranged(ops[2], 12, lineno))
        if mn == "movi":
            return MovI(_reg(ops[0], lineno), _ranged(ops[1], 16, lineno))
        if mn == "fmadd":
            return Fmadd(*(_reg(o, lineno) for o in ops))
        if mn in ("ld", "sld"):
            off, rs = _memop(ops[1], lineno)
            return (Ld if mn == "ld" else Sld)(_reg(ops[0], lineno), off, rs)
        if mn == "sd":
            off, rs1 = _memop(ops[1], lineno)
            return Sd(_reg(ops[0], lineno), off, rs1)
        if mn == "memcpy":
            return Pseudo(MemCopy(_reg(ops[0], lineno), _reg(ops[1], lineno),
                                  _int(ops[2], lineno), _int(ops[3], lineno)))
        if mn == "li":
            return Pseudo(LoadImm64(_reg(ops[0], lineno), _int(ops[1], lineno)))
        op = next(o for o in BINOPS if o.lower() == mn)
        return BinR(op, *(_reg(o, lineno) for o in ops))
    except ImmediateRangeError as exc:
        raise AsmRangeError(lineno, str(exc)) from None
    except ContractError as exc:
        raise AsmError(lineno, str(exc)) from None


def parse_block(text: str, allow_pseudo=False, live_out=None) -> Block:
    instrs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        i = parse_line(line, lineno, allow_pseudo)
        if i is not None:
            instrs.append(i)
    return Block(instrs, live_out)


def parse_pseudo(line: str):
    """Parse a single pseudo spec line such as ``memcpy r1, r2, 64, 8``."""
    i = parse_line(line, 1, allow_pseudo=True)
    if not isinstance(i, Pseudo):
        raise AsmError(1, "expected a pseudo-instruction (memcpy or li)")
    return i.p


# -- printer differential ----------------------------------------------------


def printer_differential(b: Block, table: Optional[PrintTable] = None,
                         states=None, n_states: int = 8, seed: int = 0) -> Verdict:
    """Print with ``table``, re-parse with the reference grammar, and compare.

    Checks structural equality and, independently, checksums of concrete runs
    of both blocks on ``states`` (random ones when not given).  Checksum
    divergence is reported in preference to a purely structural mismatch.
    """
    try:
        text = print_block(b, table)
        back = parse_block(text, live_out=b.live_out)
    except (PrintError, AsmError) as exc:
        return rejected(ASM_ERROR, str(exc))
    if states is None:
        from .harness import random_state_for
        rng = random.Random(seed)
        states = [random_state_for(b, rng) for _ in range(n_states)]
    for k, s in enumerate(states):
        lhs = checksum(exec_block(s, b), b.live_regs)
        rhs = checksum(exec_block(s, back), b.live_regs)
        if lhs != rhs:
            return rejected(CHECKSUM_MISMATCH, f"lhs={lhs:016x} rhs={rhs:016x}", f"state #{k}")
    if back.instrs != b.instrs:
        k = next(j for j, (x, y) in enumerate(zip(b.instrs, back.instrs)) if x != y)
        return rejected(STRUCTURAL_MISMATCH, k, f"instruction {k}")
    return EQUIVALENT


# -- structured form (what the ``parse`` subcommand writes) ---------------------

_KINDS = {c.__name__: c for c in (BinR, AddI, MovI, Fmadd, Ld, Sld, Sd)}
_PSEUDOS = {c.__name__: c for c in (MemCopy, LoadImm64)}


def block_to_json(b: Block) -> dict:
    instrs = []
    for i in b.instrs:
        if isinstance(i, Pseudo):
            instrs.append({"kind": type(i.p).__name__, **vars(i.p)})
        else:
            instrs.append({"kind": type(i).__name__, **vars(i)})
    live = None if b.live_out is None else sorted(b.live_out)
    return {"live_out": live, "instrs": instrs}


def block_from_json(data: dict) -> Block:
    instrs = []
    for k, d in enumerate(data["instrs"]):
        d = dict(d)
        kind = d.pop("kind", None)
        try:
            if kind in _KINDS:
                instrs.append(_KINDS[kind](**d))
            elif kind in _PSEUDOS:
                instrs.append(Pseudo(_PSEUDOS[kind](**d)))
            else:
                raise ContractError(f"unknown instruction kind {kind!r}")
        except TypeError as exc:
            raise ContractError(f"instruction {k}: {exc}") from None
    return Block(instrs, data.get("live_out"))
