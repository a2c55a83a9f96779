"""Acceptance criteria 1-10, one test each.

Every test records a ``criterion N: PASS|FAIL`` line (printed in the pytest
terminal summary, or directly when this file is run as a script) and then
asserts the criterion, including its time budget.
"""

import gc
import itertools
import random
import sys
import time

from tcb_forge.asmtext import parse_block, print_block
from tcb_forge.errors import FuelExhausted
from tcb_forge.expander import EXPANDER_FAULTS, expand, validate_expansion
from tcb_forge.hashcons import InternContext, Tag, structural_eq
from tcb_forge.harness import FAULTS, FuzzConfig, fuzz, gen_block, random_state_for, regress
from tcb_forge.hset import HSetContext, hset_eq, hset_inter, hset_union
from tcb_forge.machine import Block, LoadImm64, MemCopy, checksum, exec_block
from tcb_forge.scheduler import Fuel, MachineDesc, bounded_iter, build_depgraph, list_schedule
from tcb_forge.scheduler import pipeline_sim
from tcb_forge.validator import check_blocks, symb_exec

RESULTS: list[str] = []


def record(n, ok, elapsed, detail, budget=None):
    verdict = "PASS" if ok and (budget is None or elapsed < budget) else "FAIL"
    limit = f" (limit {budget:g} s)" if budget else ""
    RESULTS.append(f"criterion {n}: {verdict} {elapsed:.2f} s{limit} {detail}")
    return verdict == "PASS"


def timed(fn):
    # objects left by earlier tests are moved out of the collector's way so the
    # time budget measures the criterion's own work
    gc.collect()
    gc.freeze()
    try:
        t0 = time.perf_counter()
        out = fn()
        return out, time.perf_counter() - t0
    finally:
        gc.unfreeze()


def plain_blocks(seed, count, lo=1, hi=32):
    cfg = FuzzConfig(block_len=(lo, hi), pseudo_ratio=0.0)
    rng = random.Random(seed)
    for _ in range(count):
        yield gen_block(rng.randrange(1 << 40), cfg)[0]


def random_machine(rng):
    base = MachineDesc.default()
    lat = {k: rng.randint(1, 8) for k in base.latency}
    return MachineDesc(lat, rng.randint(1, 4), dict(base.unit), dict(base.unit_count))


# -- 1: hash-consing canonicity -------------------------------------------------------

LEAVES = [Tag("ConstI64", k) for k in range(4)] + [Tag("InitReg", r) for r in range(3)]
INNER = [Tag("UnOp", "Neg"), Tag("BinOp", "Add"), Tag("BinOp", "Mul"), Tag("TernOp", "Fmadd"),
         Tag("Load"), Tag("Store")]


def _canonicity():
    rng = random.Random(1)
    ctx = InternContext()
    ids, recipe, size, clones = [], [], [], []
    by_kind: dict = {}

    def issue(tag, kids):
        ids.append(ctx.intern(tag, [ids[k] for k in kids]))
        recipe.append((tag, kids))
        size.append(1 + sum(size[k] for k in kids))
        by_kind.setdefault(tag.kind, []).append(len(ids) - 1)
        return len(ids) - 1

    def rebuild(k):
        # re-issue the whole subtree bottom-up: a different construction path to the same tree
        tag, kids = recipe[k]
        return issue(tag, [rebuild(c) for c in kids])

    while len(ids) < 100_000:
        x = rng.random()
        small = [k for k in range(max(0, len(ids) - 64), len(ids)) if size[k] < 150]
        if not small or x < 0.3:
            issue(rng.choice(LEAVES), [])
        elif x < 0.9:
            tag = rng.choice(INNER)
            issue(tag, [rng.choice(small) for _ in range(ctx._arity(tag))])
        else:
            k = rng.choice(small)
            clones.append((k, rebuild(k)))
    ids = ids[:100_000]
    clones = [(a, b) for a, b in clones if b < 100_000]
    pairs = rng.sample(clones, min(len(clones), 3000))
    while len(pairs) < 10_000:
        i = rng.randrange(100_000)
        bucket = by_kind[recipe[i][0].kind]
        j = rng.choice(bucket) if rng.random() < 0.7 else rng.randrange(100_000)
        if j < 100_000:
            pairs.append((i, j))
    violations = equal = 0
    for i, j in pairs:
        same = structural_eq(ctx, ids[i], ids[j])
        equal += same
        violations += (ids[i] == ids[j]) != same
    clone_misses = sum(ids[a] != ids[b] for a, b in clones)
    ok = violations == 0 and clone_misses == 0
    return ok, (f"interns=100000 nodes={len(ctx)} pairs={len(pairs)} structurally_equal={equal} "
                f"violations={violations} clone_misses={clone_misses}")


def test_criterion_1_hashcons_canonicity():
    (ok, detail), dt = timed(_canonicity)
    assert record(1, ok, dt, detail, budget=5), RESULTS[-1]


# -- 2: HSet brute force -----------------------------------------------------------------


def _hset_bruteforce():
    ctx = HSetContext()
    members = [[k for k in range(8) if m >> k & 1] for m in range(256)]
    sets = [ctx.of(xs) for xs in members]
    violations = 0
    for a, b in itertools.product(range(256), repeat=2):
        sa, sb = sets[a], sets[b]
        if list(hset_union(sa, sb)) != sorted(set(members[a]) | set(members[b])):
            violations += 1
        if list(hset_inter(sa, sb)) != sorted(set(members[a]) & set(members[b])):
            violations += 1
        if hset_eq(sa, sb) != (members[a] == members[b]):
            violations += 1
    s = sets[0b10110101]
    before = ctx.shortcut_hits
    same_root = hset_union(s, s).root == s.root
    ok = violations == 0 and same_root and ctx.shortcut_hits > before > 0
    return ok, (f"pairs=65536 violations={violations} union(s,s)_same_root={same_root} "
                f"shortcut_hits={ctx.shortcut_hits}")


def test_criterion_2_hset_bruteforce():
    (ok, detail), dt = timed(_hset_bruteforce)
    assert record(2, ok, dt, detail, budget=5), RESULTS[-1]


# -- 3: checker soundness ----------------------------------------------------------------


def _candidate(b, rng):
    """An untrusted rewrite of ``b``: sometimes a valid schedule, often not."""
    k = rng.randrange(5)
    instrs = list(b.instrs)
    if k == 0:
        return list_schedule(b, random_machine(rng), seed=rng.randrange(1 << 30)).block
    if k == 1:
        rng.shuffle(instrs)
    elif k == 2:
        for _ in range(rng.randint(1, 4)):
            if len(instrs) > 1:
                j = rng.randrange(len(instrs) - 1)
                instrs[j], instrs[j + 1] = instrs[j + 1], instrs[j]
    elif k == 3:
        # random topological order of the dependence graph
        g = build_depgraph(b)
        preds = [{e.src for e in p} for p in g.preds()]
        done: list = []
        left = set(range(len(instrs)))
        while left:
            j = rng.choice(sorted(j for j in left if preds[j] <= set(done)))
            done.append(j)
            left.remove(j)
        instrs = [b.instrs[j] for j in done]
    else:
        if len(instrs) > 1:
            j = rng.randrange(len(instrs))
            del instrs[j]
    return Block(instrs, b.live_out)


def _soundness():
    rng = random.Random(3)
    accepted = unsound = 0
    n = 0
    for b in plain_blocks(30, 10_000, 1, 24):
        c = _candidate(b, rng)
        n += 1
        if not check_blocks(b, c):
            continue
        accepted += 1
        for _ in range(16):
            s = random_state_for(b, rng)
            if checksum(exec_block(s, b)) != checksum(exec_block(s, c)):
                unsound += 1
                break
    return unsound == 0 and accepted > 1000, (
        f"pairs={n} accepted={accepted} rejected={n - accepted} states_per_pair=16 "
        f"unsound_acceptances={unsound}")


def test_criterion_3_checker_soundness():
    (ok, detail), dt = timed(_soundness)
    assert record(3, ok, dt, detail, budget=60), RESULTS[-1]


# -- 4: order insensitivity --------------------------------------------------------------


def _order_insensitivity():
    transpositions = violations = 0
    for b in plain_blocks(40, 1000, 2, 48):
        edges = {(e.src, e.dst) for e in build_depgraph(b).edges}
        ctx = InternContext()
        ref = symb_exec(ctx, b)
        for j in range(len(b) - 1):
            if (j, j + 1) in edges:
                continue
            swapped = list(b.instrs)
            swapped[j], swapped[j + 1] = swapped[j + 1], swapped[j]
            transpositions += 1
            violations += symb_exec(ctx, Block(swapped)) != ref
    return violations == 0 and transpositions > 0, (
        f"blocks=1000 transpositions={transpositions} violations={violations}")


def test_criterion_4_order_insensitivity():
    (ok, detail), dt = timed(_order_insensitivity)
    assert record(4, ok, dt, detail), RESULTS[-1]


# -- 5: latency tables only move performance ----------------------------------------------


def _latency_separation():
    rng = random.Random(5)
    tables = [random_machine(rng) for _ in range(10)]
    checks = accepted = varied = 0
    for b in plain_blocks(50, 100, 8, 48):
        spans = set()
        for m in tables:
            out = list_schedule(b, m, seed=rng.randrange(1 << 30)).block
            checks += 1
            accepted += bool(check_blocks(b, out))
            spans.add(pipeline_sim(out, m))
        varied += len(spans) > 1
    return accepted == checks and varied > 0, (
        f"blocks=100 tables=10 accepted={accepted}/{checks} "
        f"blocks_with_varying_makespan={varied}")


def test_criterion_5_latency_separation():
    (ok, detail), dt = timed(_latency_separation)
    assert record(5, ok, dt, detail), RESULTS[-1]


# -- 6: fuel monotonicity -------------------------------------------------------------------


def _collatz(n):
    return n // 2 if n % 2 == 0 else 3 * n + 1


def _fuel_monotonicity():
    rng = random.Random(6)
    runs = successes = violations = 0
    for _ in range(1000):
        start, f = rng.randint(1, 10_000), rng.randint(1, 200)
        runs += 1
        try:
            small = bounded_iter(f, _collatz, start, lambda x: x == 1)
        except FuelExhausted:
            continue
        successes += 1
        violations += bounded_iter(10 * f, _collatz, start, lambda x: x == 1) != small
    sched_runs = fallbacks = bad_fallbacks = 0
    for b in plain_blocks(60, 300, 1, 32):
        f = rng.randint(1, 40)
        m = random_machine(rng)
        seed = rng.randrange(99)
        res = list_schedule(b, m, fuel=Fuel(f), seed=seed)
        sched_runs += 1
        if res.exhausted:
            fallbacks += 1
            bad_fallbacks += res.block is not b
        else:
            violations += list_schedule(b, m, fuel=Fuel(10 * f), seed=seed).block != res.block
    ok = violations == 0 and bad_fallbacks == 0 and successes and fallbacks
    return bool(ok), (f"iterations={runs} succeeded={successes} schedules={sched_runs} "
                      f"exhausted={fallbacks} violations={violations} "
                      f"unsound_fallbacks={bad_fallbacks}")


def test_criterion_6_fuel_monotonicity():
    (ok, detail), dt = timed(_fuel_monotonicity)
    assert record(6, ok, dt, detail), RESULTS[-1]


# -- 7: expansion validation -----------------------------------------------------------------

GRID_STATES = 16
REG_PAIRS = ((1, 2), (2, 1), (3, 3))  # distinct either way round, and one register for both


def _expansion_validation():
    faults = [f for f in EXPANDER_FAULTS if f != "memcpy-offset"]
    clean_fail, checked = [], 0
    fault_misses: dict = {}
    fault_hits = {f: 0 for f in faults}
    for size in range(0, 4097, 8):
        for dst, src in REG_PAIRS:
            p = MemCopy(dst, src, size)
            clean = expand(p)
            checked += 1
            if not validate_expansion(p, clean, n_random=GRID_STATES, seed=size):
                clean_fail.append(str(p))
            for fault in faults:
                e = expand(p, fault)
                if e == clean:
                    continue  # the seeded bug does not change this instance
                if validate_expansion(p, e, n_random=GRID_STATES, seed=size):
                    fault_misses.setdefault(fault, []).append(str(p))
                else:
                    fault_hits[fault] += 1
    imms = [0, 1, -1, 32767, -32768, 32768, -32769, 1 << 40, -(1 << 63), (1 << 63) - 1]
    rng = random.Random(7)
    imms += [rng.randrange(-(1 << 63), 1 << 63) for _ in range(100)]
    for v in imms:
        p = LoadImm64(5, v)
        checked += 1
        if not validate_expansion(p, expand(p), n_random=GRID_STATES):
            clean_fail.append(str(p))
    ok = not clean_fail and not fault_misses and all(fault_hits.values())
    hits = " ".join(f"{k}={v}" for k, v in sorted(fault_hits.items()))
    return ok, (f"expansions={checked} clean_rejected={len(clean_fail)} "
                f"faults_rejected[{hits}] fault_misses={sum(map(len, fault_misses.values()))} "
                f"random_states={GRID_STATES}")


def test_criterion_7_expansion_validation():
    (ok, detail), dt = timed(_expansion_validation)
    assert record(7, ok, dt, detail, budget=60), RESULTS[-1]


# -- 8: round trip ----------------------------------------------------------------------------


def _roundtrip():
    cfg = FuzzConfig(pseudo_ratio=0.2)
    mismatches = 0
    for seed in range(10_000):
        b, _ = gen_block(seed, cfg)
        text = print_block(b, allow_pseudo=True)
        mismatches += parse_block(text, allow_pseudo=True, live_out=b.live_out) != b
    return mismatches == 0, f"blocks=10000 mismatches={mismatches}"


def test_criterion_8_roundtrip():
    (ok, detail), dt = timed(_roundtrip)
    assert record(8, ok, dt, detail), RESULTS[-1]


# -- 9: regression scenarios ----------------------------------------------------------------


def _regress():
    results = regress()
    misses = [name for name, ok, _ in results if not ok]
    return not misses, f"scenarios={len(results)} misses={len(misses)} {' '.join(misses)}".rstrip()


def test_criterion_9_regressions():
    (ok, detail), dt = timed(_regress)
    assert record(9, ok, dt, detail), RESULTS[-1]


# -- 10: end-to-end fuzz ----------------------------------------------------------------------


def _end_to_end():
    clean = fuzz(FuzzConfig(seed=0, count=10_000))
    flagged, first = [], {}
    for fault in FAULTS:
        r = fuzz(FuzzConfig(seed=0, count=10_000, fault=fault), stop_on_flag=True)
        if r.flagged:
            flagged.append(fault)
            first[fault] = r.cases_run
    missed = [f for f in FAULTS if f not in flagged]
    n = len(clean.makespans)
    better = sum(a < b for b, a in clean.makespans)
    ok = not clean.divergences and not clean.rejections and not missed
    return ok, (f"clean_cases={clean.cases_run} divergences={len(clean.divergences)} "
                f"rejections={len(clean.rejections)} improved={better}/{n} "
                f"regressed={clean.makespan_regressions} faults_flagged={len(flagged)}/{len(FAULTS)} "
                f"cases_to_flag[{' '.join(f'{k}={v}' for k, v in first.items())}]"
                + (f" missed={','.join(missed)}" if missed else ""))


def test_criterion_10_end_to_end_fuzz():
    (ok, detail), dt = timed(_end_to_end)
    assert record(10, ok, dt, detail, budget=120), RESULTS[-1]


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_criterion_")]
    tests.sort(key=lambda f: int(f.__name__.split("_")[2]))
    failed = 0
    for t in tests:
        try:
            t()
        except AssertionError:
            failed += 1
        print(RESULTS[-1], flush=True)
    sys.exit(1 if failed else 0)
