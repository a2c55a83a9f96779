"""Untrusted list scheduler, interlocked pipeline simulator, fuel-bounded loops.

Nothing here is trusted: a schedule only matters once ``equiv_check`` has
accepted it, and latency tables can only change how fast code runs.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from .errors import ContractError, FuelExhausted
from .machine import BINOPS, Block, Instr, Pseudo

DEFAULT_FUEL = 10**12

MNEMONICS = tuple(op.lower() for op in BINOPS) + ("addi", "movi", "fmadd", "ld", "sld", "sd")


@dataclass
class MachineDesc:
    latency: dict = field(default_factory=dict)
    slots: int = 2
    unit: dict = field(default_factory=dict)
    unit_count: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.slots < 1:
            raise ContractError("slots must be >= 1")
        for m in MNEMONICS:
            if self.latency.get(m, 0) < 1:
                raise ContractError(f"missing or non-positive latency for {m!r}")
            if m not in self.unit:
                raise ContractError(f"no functional unit for {m!r}")
        for u in set(self.unit.values()):
            self.unit_count.setdefault(u, 1)
            if self.unit_count[u] < 1:
                raise ContractError(f"unit {u!r} needs a count >= 1")

    @classmethod
    def default(cls) -> "MachineDesc":
        latency = {m: 1 for m in MNEMONICS}
        latency.update(mul=3, fmadd=4, ld=3, sld=3)
        unit = {m: "ALU" for m in MNEMONICS}
        unit.update(mul="MUL", fmadd="MUL", ld="MEM", sld="MEM", sd="MEM")
        return cls(latency, 2, unit, {"ALU": 2, "MEM": 1, "MUL": 1})

    @classmethod
    def parse(cls, text: str, base: "MachineDesc | None" = None) -> "MachineDesc":
        """Read ``latency``/``slots``/``unit``/``units`` lines over a base description.

        ``units <unit-name> <n>`` sets how many instances of a unit exist.
        """
        base = base or cls.default()
        latency, unit = dict(base.latency), dict(base.unit)
        counts, slots = dict(base.unit_count), base.slots
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].split()
            if not line:
                continue
            try:
                if line[0] == "latency" and len(line) == 3 and line[1] in MNEMONICS:
                    latency[line[1]] = int(line[2])
                elif line[0] == "slots" and len(line) == 2:
                    slots = int(line[1])
                elif line[0] == "unit" and len(line) == 3 and line[1] in MNEMONICS:
                    unit[line[1]] = line[2]
                elif line[0] == "units" and len(line) == 3:
                    counts[line[1]] = int(line[2])
                else:
                    raise ValueError
            except ValueError:
                raise ContractError(f"machine description line {lineno}: {raw.strip()!r}") from None
        return cls(latency, slots, unit, counts)

    def lat(self, i: Instr) -> int:
        return self.latency[i.mnemonic]

    def unit_of(self, i: Instr) -> str:
        return self.unit[i.mnemonic]


def load_machine(path) -> MachineDesc:
    with open(path) as f:
        return MachineDesc.parse(f.read())


# -- dependences --------------------------------------------------------------

RAW, WAR, WAW, MEM = "RAW", "WAR", "WAW", "MEM"


class Edge(NamedTuple):
    src: int
    dst: int
    kind: str


@dataclass
class DepGraph:
    n: int
    edges: set

    def preds(self) -> list[list[Edge]]:
        out: list[list[Edge]] = [[] for _ in range(self.n)]
        for e in self.edges:
            out[e.dst].append(e)
        return out

    def succs(self) -> list[list[Edge]]:
        out: list[list[Edge]] = [[] for _ in range(self.n)]
        for e in self.edges:
            out[e.src].append(e)
        return out

    def respects(self, order) -> bool:
        """True iff ``order`` (a permutation of node indices) keeps every edge."""
        pos = {node: k for k, node in enumerate(order)}
        if sorted(pos) != list(range(self.n)):
            return False
        return all(pos[e.src] < pos[e.dst] for e in self.edges)


def build_depgraph(b: Block) -> DepGraph:
    """Nearest register dependences plus a total order on stores vs. all memory ops.

    Loads may pass each other; nothing may pass a store.
    """
    edges = set()
    last_write: dict[int, int] = {}
    readers: dict[int, list[int]] = {}
    last_store = None
    loads_since_store: list[int] = []
    for j, i in enumerate(b.instrs):
        if isinstance(i, Pseudo):
            raise ContractError("pseudo-instructions must be expanded before scheduling")
        for r in set(i.reads()):
            if r in last_write:
                edges.add(Edge(last_write[r], j, RAW))
        for r in i.writes():
            for k in readers.get(r, ()):
                if k != j:
                    edges.add(Edge(k, j, WAR))
            if r in last_write:
                edges.add(Edge(last_write[r], j, WAW))
        for r in set(i.reads()):
            readers.setdefault(r, []).append(j)
        for r in i.writes():
            last_write[r] = j
            readers[r] = []
        if i.is_mem:
            if last_store is not None:
                edges.add(Edge(last_store, j, MEM))
            if i.is_store:
                for k in loads_since_store:
                    edges.add(Edge(k, j, MEM))
                last_store = j
                loads_since_store = []
            else:
                loads_since_store.append(j)
    return DepGraph(len(b.instrs), edges)


# -- fuel ---------------------------------------------------------------------


@dataclass
class Fuel:
    remaining: int = DEFAULT_FUEL

    def __post_init__(self):
        if self.remaining < 1:
            raise ContractError("fuel must be positive")

    def burn(self):
        if self.remaining == 0:
            return False
        self.remaining -= 1
        return True


def bounded_iter(fuel, step: Callable, init, done: Callable):
    """Apply ``step`` until ``done(state)``; raise FuelExhausted if fuel runs out.

    ``fuel`` is a :class:`Fuel` (consumed in place) or a plain step budget.
    """
    if not isinstance(fuel, Fuel):
        fuel = Fuel(fuel)
    state = init
    steps = 0
    while not done(state):
        if not fuel.burn():
            raise FuelExhausted(steps)
        state = step(state)
        steps += 1
    return state


# -- list scheduling ------------------------------------------------------------


class ScheduleResult(NamedTuple):
    block: Block
    order: tuple
    exhausted: bool


def critical_path(b: Block, g: DepGraph, m: MachineDesc) -> list[int]:
    succ = g.succs()
    cp = [0] * g.n
    for j in reversed(range(g.n)):
        lat = m.lat(b.instrs[j])
        cp[j] = lat + max((cp[e.dst] for e in succ[j]), default=0)
    return cp


class _ListState:
    def __init__(self, b, g, m, seed):
        self.instrs = b.instrs
        self.m = m
        self.preds = g.preds()
        self.succs = g.succs()
        self.missing = [len(p) for p in self.preds]
        self.earliest = [0] * g.n
        self.issue = [None] * g.n
        cp = critical_path(b, g, m)
        rng = random.Random(seed)
        self.prio = [(-cp[j], rng.random(), j) for j in range(g.n)]
        self.ready = [self.prio[j] for j in range(g.n) if self.missing[j] == 0]
        heapq.heapify(self.ready)
        self.order: list[int] = []
        self.cycle = 0

    def done(self):
        return len(self.order) == len(self.instrs)

    def _release(self, j, cycle):
        lat = self.m.lat(self.instrs[j])
        for e in self.succs[j]:
            k = e.dst
            t = cycle + lat if e.kind == RAW else cycle
            if t > self.earliest[k]:
                self.earliest[k] = t
            self.missing[k] -= 1
            if self.missing[k] == 0:
                heapq.heappush(self.ready, self.prio[k])

    def step(self):
        """Fill one issue cycle, best priority first."""
        m = self.m
        used: dict[str, int] = {}
        issued = 0
        deferred = []
        while self.ready and issued < m.slots:
            item = heapq.heappop(self.ready)
            j = item[2]
            unit = m.unit_of(self.instrs[j])
            if self.earliest[j] > self.cycle or used.get(unit, 0) >= m.unit_count[unit]:
                deferred.append(item)
                continue
            used[unit] = used.get(unit, 0) + 1
            issued += 1
            self.issue[j] = self.cycle
            self.order.append(j)
            self._release(j, self.cycle)
        for item in deferred:
            heapq.heappush(self.ready, item)
        self.cycle += 1
        return self


def list_schedule(b: Block, m: MachineDesc, fuel=None, seed: int = 0) -> ScheduleResult:
    """Greedy cycle-by-cycle list scheduling.  The output is untrusted.

    Priority is critical-path length, ties broken by a seed-derived shuffle.
    On fuel exhaustion the original block comes back unchanged.
    """
    if b.has_pseudo():
        raise ContractError("pseudo-instructions must be expanded before scheduling")
    fuel = Fuel() if fuel is None else fuel
    g = build_depgraph(b)
    try:
        st = bounded_iter(fuel, _ListState.step, _ListState(b, g, m, seed), _ListState.done)
    except FuelExhausted:
        return ScheduleResult(b, tuple(range(len(b))), True)
    order = tuple(st.order)
    return ScheduleResult(Block([b.instrs[j] for j in order], b.live_out), order, False)


def pipeline_sim(b: Block, m: MachineDesc) -> int:
    """Cycles for an in-order, interlocked machine to finish ``b``.

    Up to ``slots`` instructions issue per cycle, subject to unit counts; an
    instruction waits until every source register's pending write has
    completed.  The count runs until the last result is written.
    """
    if b.has_pseudo():
        raise ContractError("pseudo-instructions must be expanded before simulation")
    ready = [0] * 16
    cycle = 0
    issued = 0
    used: dict[str, int] = {}
    end = 0
    for i in b.instrs:
        t = max([cycle] + [ready[r] for r in i.reads()])
        unit = m.unit_of(i)
        while True:
            if t > cycle:
                cycle, issued, used = t, 0, {}
            if issued < m.slots and used.get(unit, 0) < m.unit_count[unit]:
                break
            t = cycle + 1
        issued += 1
        used[unit] = used.get(unit, 0) + 1
        done = cycle + m.lat(i)
        for r in i.writes():
            ready[r] = done
        end = max(end, done)
    return end
