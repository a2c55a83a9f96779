"""Random block generation, the end-to-end differential pipeline, and the
regression scenarios for the known bug classes."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .asmtext import (PRINTER_FAULTS, AsmError, PrintError, default_table,
                      faulty_table, parse_block, print_block, printer_differential)
from .errors import ContractError
from .expander import (EXPANDER_FAULTS, exec_reference, expand, expand_block,
                       validate_expansion)
from .hset import HSetContext
from .machine import (BINOPS, MASK64, NUM_REGS, UNDEF, AddI, BinR, Block, ExecState,
                      Fmadd, Ld, LoadImm64, MemCopy, MemoryState, MovI, Pseudo, Sd,
                      Sld, checksum, exec_block, exec_instr, refines, state_refines)
from .scheduler import DEFAULT_FUEL, Fuel, MachineDesc, list_schedule, pipeline_sim
from .validator import validated

SCHEDULER_FAULTS = ("bad-schedule",)
FAULTS = PRINTER_FAULTS + EXPANDER_FAULTS + SCHEDULER_FAULTS

MEM_BASE = 0x1000
BASE_REGS = (8, 9, 10, 11)
DATA_REGS = (0, 1, 2, 3, 4, 5, 6, 7, 12, 13, 14, 15)
PLAIN_REGS = tuple(r for r in DATA_REGS if r not in (14, 15))


@dataclass(frozen=True)
class FuzzConfig:
    seed: int = 0
    count: int = 10_000
    block_len: tuple = (1, 64)
    mem_valid_cells: tuple = (16, 64)
    pseudo_ratio: float = 0.2
    fault: Optional[str] = None
    invalid_ratio: float = 0.02
    validate_states: int = 16
    fuel: int = DEFAULT_FUEL

    def __post_init__(self):
        if self.count < 1:
            raise ContractError("count must be >= 1")
        for lo, hi in (self.block_len, self.mem_valid_cells):
            if lo > hi or lo < 0:
                raise ContractError(f"empty range {lo}..{hi}")
        if self.fault is not None and self.fault not in FAULTS:
            raise ContractError(f"unknown fault {self.fault!r}; known: {', '.join(FAULTS)}")


def case_seed(seed: int, index: int) -> int:
    return (seed * 1_000_003 + index) & MASK64


# -- generation -------------------------------------------------------------------


def _value(rng):
    x = rng.random()
    if x < 0.03:
        return UNDEF
    if x < 0.5:
        return rng.randrange(-100, 100)
    return rng.randrange(-(1 << 63), 1 << 63)


def gen_state(rng, cells: int) -> ExecState:
    """Valid memory ``[MEM_BASE, MEM_BASE + 8*cells)``; base registers point at
    its four quarters, everything else holds random data."""
    quarter = max(cells // 4, 1)
    regs = [_value(rng) for _ in range(NUM_REGS)]
    for k, r in enumerate(BASE_REGS):
        regs[r] = MEM_BASE + 8 * quarter * k
    mem = {MEM_BASE + 8 * j: _value(rng) for j in range(cells)}
    return ExecState(tuple(regs), MemoryState(mem))


def _mem_offset(rng, quarter, invalid_ratio):
    if rng.random() < invalid_ratio:
        if rng.random() < 0.5:
            return rng.choice((-8, -16, 1, 4, 8 * 4 * quarter + 8))
        return rng.randrange(-2048, 2048)
    return 8 * rng.randrange(0, quarter)


def _gen_instr(rng, quarter, invalid_ratio):
    x = rng.random()
    src = lambda: rng.randrange(NUM_REGS)
    dst = lambda: rng.choice(DATA_REGS)
    if x < 0.40:
        return BinR(rng.choice(BINOPS), dst(), src(), src())
    if x < 0.48:
        if rng.random() < 0.15:
            r = rng.choice(BASE_REGS)
            return AddI(r, r, 8 * rng.randrange(-2, 3))
        return AddI(dst(), src(), rng.randrange(-2048, 2048))
    if x < 0.56:
        return MovI(dst(), rng.randrange(-32768, 32768))
    if x < 0.64:
        return Fmadd(dst(), src(), src(), src())
    off = min(max(_mem_offset(rng, quarter, invalid_ratio), -2048), 2047)
    base = rng.choice(BASE_REGS)
    if x < 0.78:
        return Ld(dst(), off, base)
    if x < 0.86:
        return Sld(dst(), off, base)
    return Sd(src(), off, base)


def _copy_size(rng):
    x = rng.random()
    if x < 0.65:
        return 8 * rng.randrange(0, 9)
    if x < 0.95:
        return 8 * rng.randrange(9, 65)
    return 8 * rng.randrange(257, 513)


def _gen_pseudo(rng):
    if rng.random() < 0.6:
        dst = rng.choice(BASE_REGS)
        src = dst if rng.random() < 0.15 else rng.choice(BASE_REGS)
        return MemCopy(dst, src, _copy_size(rng))
    imm = rng.randrange(-30000, 30000) if rng.random() < 0.4 else rng.randrange(-(1 << 63), 1 << 63)
    return LoadImm64(rng.choice(PLAIN_REGS), imm)


def gen_block(seed: int, cfg: FuzzConfig = FuzzConfig()) -> tuple[Block, ExecState]:
    """Deterministic in ``seed``: a block (possibly with pseudos) and a start state."""
    rng = random.Random(seed)
    n = rng.randint(*cfg.block_len)
    cells = max(rng.randint(*cfg.mem_valid_cells), 4)
    pseudos = []
    if n and rng.random() < cfg.pseudo_ratio:
        pseudos = [_gen_pseudo(rng) for _ in range(rng.randint(1, 2))]
        for p in pseudos:
            if isinstance(p, MemCopy):
                cells = max(cells, 4 * (p.size // 8) + 4)
    quarter = cells // 4
    instrs = [_gen_instr(rng, quarter, cfg.invalid_ratio) for _ in range(n)]
    for p in pseudos:
        instrs[rng.randrange(n)] = Pseudo(p)
    return Block(instrs), gen_state(rng, cells)


def random_state_for(b: Block, rng, cells: int = 64) -> ExecState:
    """A start state in the generator's memory layout, sized for ``b``'s offsets."""
    need = max((i.off // 8 + 1 for i in b.instrs if isinstance(i, (Ld, Sld, Sd))), default=0)
    return gen_state(rng, max(cells, 4 * need))


# -- pipeline ---------------------------------------------------------------------


@dataclass(frozen=True)
class Divergence:
    seed: int
    stage: str
    lhs: int
    rhs: int

    def __str__(self):
        return f"DEFECT seed={self.seed} stage={self.stage} lhs={self.lhs:016x} rhs={self.rhs:016x}"


@dataclass(frozen=True)
class Rejection:
    seed: int
    stage: str
    reason: str

    def __str__(self):
        return f"REJECT seed={self.seed} stage={self.stage} reason={self.reason}"


@dataclass
class CaseResult:
    seed: int
    length: int = 0
    divergences: list = field(default_factory=list)
    rejections: list = field(default_factory=list)
    cycles_before: Optional[int] = None
    cycles_after: Optional[int] = None
    shortcut_hits: int = 0


def _bad_scheduler(seed):
    def oracle(b: Block) -> Block:
        instrs = list(b.instrs)
        random.Random(seed).shuffle(instrs)
        return Block(instrs, b.live_out)
    return oracle


def run_pipeline(b: Block, s0: ExecState, m: MachineDesc, seed: int,
                 cfg: FuzzConfig = FuzzConfig()) -> CaseResult:
    """expand -> validate -> schedule -> check -> print -> parse, with
    checksum comparisons after every stage.  Rejected artifacts fall back to
    the unoptimised version; divergences are recorded, never raised."""
    fault = cfg.fault
    res = CaseResult(seed, len(b))
    sets = HSetContext()

    def check_expansion(p, e):
        return validate_expansion(p, e, n_random=cfg.validate_states, seed=seed, sets=sets)

    bx, rej = expand_block(b, fault if fault in EXPANDER_FAULTS else None, check_expansion)
    res.rejections += [Rejection(seed, "expand", str(v)) for _, v in rej]
    res.shortcut_hits = sets.shortcut_hits
    ref = exec_reference(s0, b)
    sx = exec_block(s0, bx)
    if not ref.trapped and not state_refines(sx, ref):
        res.divergences.append(Divergence(seed, "expand", checksum(ref), checksum(sx)))

    if fault == "bad-schedule":
        oracle = _bad_scheduler(seed)
    else:
        oracle = lambda blk: list_schedule(blk, m, Fuel(cfg.fuel), seed).block
    sched, verdict = validated(bx, oracle)
    if not verdict:
        res.rejections.append(Rejection(seed, "schedule", str(verdict)))
    res.cycles_before = pipeline_sim(bx, m)
    res.cycles_after = pipeline_sim(sched, m)
    c_x = checksum(sx)
    c_sched = checksum(exec_block(s0, sched))
    if c_sched != c_x:
        res.divergences.append(Divergence(seed, "schedule", c_x, c_sched))

    table = faulty_table(fault) if fault in PRINTER_FAULTS else default_table()
    try:
        final = parse_block(print_block(sched, table), live_out=sched.live_out)
    except PrintError as exc:
        res.rejections.append(Rejection(seed, "print", str(exc)))
        return res
    except AsmError as exc:
        res.rejections.append(Rejection(seed, "parse", str(exc)))
        return res
    c_final = checksum(exec_block(s0, final))
    if c_final != c_sched:
        res.divergences.append(Divergence(seed, "print", c_sched, c_final))
    return res


@dataclass
class FuzzReport:
    cases_run: int = 0
    divergences: list = field(default_factory=list)
    rejections: list = field(default_factory=list)
    makespan_regressions: int = 0
    shortcut_hits: int = 0
    makespans: list = field(default_factory=list)

    def add(self, case: CaseResult):
        self.cases_run += 1
        self.divergences += case.divergences
        self.rejections += case.rejections
        self.shortcut_hits += case.shortcut_hits
        if case.cycles_before is not None:
            self.makespans.append((case.cycles_before, case.cycles_after))
            if case.cycles_after > case.cycles_before:
                self.makespan_regressions += 1

    @property
    def flagged(self) -> bool:
        return bool(self.divergences or self.rejections)

    @property
    def exit_code(self) -> int:
        return 1 if self.divergences else 0

    def rejections_by_stage(self) -> dict:
        out: dict = {}
        for r in self.rejections:
            out[r.stage] = out.get(r.stage, 0) + 1
        return out

    def lines(self):
        for d in self.divergences:
            yield str(d)
        for r in self.rejections:
            yield str(r)
        n = len(self.makespans) or 1
        yield (f"cases={self.cases_run} divergences={len(self.divergences)} "
               f"rejections={len(self.rejections)} "
               f"makespan_regressions={self.makespan_regressions} "
               f"({100.0 * self.makespan_regressions / n:.1f}%) "
               f"shortcut_hits={self.shortcut_hits}")


def fuzz(cfg: FuzzConfig, m: Optional[MachineDesc] = None, stop_on_flag=False,
         progress: Optional[Callable] = None) -> FuzzReport:
    m = m or MachineDesc.default()
    report = FuzzReport()
    for k in range(cfg.count):
        seed = case_seed(cfg.seed, k)
        b, s0 = gen_block(seed, cfg)
        report.add(run_pipeline(b, s0, m, seed, cfg))
        if progress:
            progress(k)
        if stop_on_flag and report.flagged:
            break
    return report


def replay(seed: int, cfg: FuzzConfig = FuzzConfig(), m: Optional[MachineDesc] = None) -> CaseResult:
    """Re-run the single case a report entry's seed refers to."""
    b, s0 = gen_block(seed, cfg)
    return run_pipeline(b, s0, m or MachineDesc.default(), seed, cfg)


# -- regression scenarios -----------------------------------------------------------


def _scenario_states(b, n=16):
    rng = random.Random(7)
    return [random_state_for(b, rng) for _ in range(n)]


def _fmadd_order():
    b = Block([MovI(2, 3), MovI(3, 5), MovI(4, 7), Fmadd(1, 2, 3, 4)])
    clean = printer_differential(b, states=_scenario_states(b))
    bad = printer_differential(b, faulty_table("fmadd-swap"), states=_scenario_states(b))
    return bool(clean) and not bad, f"clean={clean}; seeded={bad}"


def _nand_and():
    b = Block([MovI(2, 0xF0), MovI(3, 0xFF), BinR("Nand", 1, 2, 3)])
    clean = printer_differential(b, states=_scenario_states(b))
    bad = printer_differential(b, faulty_table("nand-as-and"), states=_scenario_states(b))
    return bool(clean) and not bad, f"clean={clean}; seeded={bad}"


def _memcpy_offset():
    p = MemCopy(1, 2, 4096)
    try:
        print_block(Block(expand(p, "memcpy-offset")))
        caught = "seeded expansion printed without complaint"
    except PrintError as exc:
        caught = None
        detail = f"assembler-side rejection: {exc}"
    good = Block(expand(p))
    print_block(good)
    ok = validate_expansion(p, good.instrs, n_random=8)
    return caught is None and bool(ok), caught or f"{detail}; fixed expansion {ok}"


def _memcpy_aliasing():
    p = MemCopy(1, 2, 64)
    bad = validate_expansion(p, expand(p, "memcpy-aliasing"), n_random=64)
    good = validate_expansion(p, expand(p), n_random=64)
    detected = not bad and (bad.witness or "").startswith("alias")
    return detected and bool(good), f"seeded={bad}; fixed={good}"


def _undeclared_clobber():
    p = MemCopy(1, 2, 16)
    bad = validate_expansion(p, expand(p, "undeclared-clobber"), n_random=8)
    return (not bad and bad.reason.detail == 13), f"seeded={bad}"


def _speculative_load():
    s = ExecState(tuple([0] * NUM_REGS), MemoryState({MEM_BASE: 42}))
    s = s.with_reg(2, MEM_BASE + 800)
    out = exec_instr(s, Sld(1, 0, 2))
    trap = exec_instr(s, Ld(1, 0, 2))
    ok = (out.regs[1] is UNDEF and not out.trapped and trap.trapped
          and refines(0, UNDEF) and not refines(UNDEF, 0))
    return ok, f"sld from invalid -> {out.regs[1]!r}; ld traps={trap.trapped}"


SCENARIOS = (
    ("fmadd-order", _fmadd_order),
    ("nand-as-and", _nand_and),
    ("memcpy-offset", _memcpy_offset),
    ("memcpy-aliasing", _memcpy_aliasing),
    ("speculative-load", _speculative_load),
    ("undeclared-clobber", _undeclared_clobber),
)


def regress() -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in SCENARIOS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a miss, not an abort
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
    return results
