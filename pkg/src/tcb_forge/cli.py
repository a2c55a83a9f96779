"""``tcb-forge`` command line.

Exit codes: 0 success, 1 rejected verdict or divergence, 2 usage/input error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import asmtext, harness
from .asmtext import AsmError, PrintError
from .errors import ContractError
from .expander import expand, expand_block, select_variant, validate_expansion
from .hashcons import InternContext
from .machine import UNDEF, Block
from .scheduler import DEFAULT_FUEL, Fuel, MachineDesc, list_schedule, load_machine, pipeline_sim
from .validator import equiv_check

GLOBAL_DEFAULTS = {"machine": None, "seed": 0, "fuel": DEFAULT_FUEL}


class UsageError(Exception):
    pass


def _read(path):
    if path == "-":
        return sys.stdin.read()
    try:
        with open(path, encoding="ascii") as f:
            return f.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="ascii") as f:
            f.write(text)


def _machine(args) -> MachineDesc:
    return load_machine(args.machine) if args.machine else MachineDesc.default()


def _live_out(spec):
    if spec is None:
        return None
    try:
        return frozenset(int(tok.strip().lstrip("r")) for tok in spec.split(",") if tok.strip())
    except ValueError:
        raise UsageError(f"bad --live-out {spec!r}") from None


def _load_block(path, live_out=None) -> Block:
    """Parse assembly, expanding any pseudo-instructions with the fault-free expander."""
    b = asmtext.parse_block(_read(path), allow_pseudo=True, live_out=live_out)
    return expand_block(b)[0] if b.has_pseudo() else b


# -- subcommands ------------------------------------------------------------------


def cmd_gen(args):
    lo, hi = args.len
    cfg = harness.FuzzConfig(block_len=(lo, hi), pseudo_ratio=args.pseudo_ratio)
    b, s0 = harness.gen_block(args.seed, cfg)
    lines = [f"# generated with seed {args.seed}"]
    for r, v in enumerate(s0.regs):
        lines.append(f"# init r{r} = {'undef' if v is UNDEF else v}")
    for lo_addr, hi_addr in s0.mem.valid:
        lines.append(f"# valid memory [{lo_addr:#x}, {hi_addr:#x})")
    _write(args.output, "\n".join(lines) + "\n" + asmtext.print_block(b, allow_pseudo=True))
    return 0


def cmd_sched(args):
    m = _machine(args)
    b = _load_block(args.file, _live_out(args.live_out))
    res = list_schedule(b, m, Fuel(args.fuel), args.seed)
    out = res.block
    if res.exhausted:
        print("# fuel exhausted: keeping program order", file=sys.stderr)
    verdict = equiv_check(InternContext(), b, out)
    if not verdict:
        print(f"# schedule {verdict}: keeping program order", file=sys.stderr)
        out = b
    _write(args.output, asmtext.print_block(out))
    print(f"cycles: {pipeline_sim(b, m)} -> {pipeline_sim(out, m)}")
    return 0


def cmd_check(args):
    if args.machine:
        load_machine(args.machine)  # latencies cannot affect the verdict; validate the file only
    live = _live_out(args.live_out)
    b1, b2 = _load_block(args.a, live), _load_block(args.b, live)
    ctx = InternContext()
    verdict = equiv_check(ctx, b1, b2)
    if args.dump:
        _write(args.dump, ctx.dump())
    print("EQUIVALENT" if verdict else f"REJECTED {verdict.reason}")
    return 0 if verdict else 1


def cmd_expand(args):
    p = asmtext.parse_pseudo(" ".join(args.spec))
    e = expand(p, args.fault)
    print(f"# variant {select_variant(p)}, clobbers "
          f"{{{', '.join(f'r{r}' for r in sorted(select_variant(p).clobbers))}}}")
    try:
        sys.stdout.write(asmtext.print_block(Block(e)))
    except PrintError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.validate:
        verdict = validate_expansion(p, e, n_random=args.states, seed=args.seed)
        print(f"# {verdict}")
        return 0 if verdict else 1
    return 0


def cmd_parse(args):
    b = asmtext.parse_block(_read(args.file), allow_pseudo=True)
    _write(args.output, json.dumps(asmtext.block_to_json(b), indent=1) + "\n")
    return 0


def cmd_print(args):
    try:
        b = asmtext.block_from_json(json.loads(_read(args.file)))
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{args.file}: not a parsed block: {exc}") from None
    _write(args.output, asmtext.print_block(b, allow_pseudo=True))
    return 0


def cmd_roundtrip(args):
    b = _load_block(args.file)
    table = asmtext.faulty_table(args.fault) if args.fault else None
    verdict = asmtext.printer_differential(b, table, n_states=args.states, seed=args.seed)
    print("EQUIVALENT" if verdict else str(verdict))
    return 0 if verdict else 1


def cmd_fuzz(args):
    lo, hi = args.len
    cfg = harness.FuzzConfig(seed=args.seed, count=args.count, block_len=(lo, hi),
                             pseudo_ratio=args.pseudo_ratio, fault=args.fault,
                             validate_states=args.validate_states, fuel=args.fuel)
    m = _machine(args)
    if args.replay is not None:
        report = harness.FuzzReport()
        report.add(harness.replay(args.replay, cfg, m))
    else:
        report = harness.fuzz(cfg, m, stop_on_flag=args.stop_on_flag)
    for line in report.lines():
        print(line)
    if args.figures:
        from .report import write_figures
        for p in write_figures(report, args.figures):
            print(f"figure: {p}")
    return report.exit_code


def cmd_regress(args):
    failed = 0
    for name, ok, detail in harness.regress():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += not ok
    return 1 if failed else 0


# -- argument parsing ---------------------------------------------------------------


def _range(text):
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
        elif ":" in text:
            lo, hi = text.split(":", 1)
        else:
            lo = hi = text
        return int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or LO..HI, got {text!r}") from None


def _globals(parser):
    # SUPPRESS lets the options appear before or after the subcommand; main() fills defaults
    d = argparse.SUPPRESS
    parser.add_argument("--machine", metavar="FILE", default=d,
                        help="machine description (latency/slots/unit lines)")
    parser.add_argument("--seed", type=int, default=d)
    parser.add_argument("--fuel", type=int, default=d, help="iteration budget for the scheduler")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tcb-forge", description=__doc__.splitlines()[0])
    _globals(p)
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _globals(common)

    def add(name, fn, help):
        sp = sub.add_parser(name, parents=[common], help=help)
        sp.set_defaults(func=fn)
        return sp

    sp = add("gen", cmd_gen, "generate a random block")
    sp.add_argument("--len", type=_range, default=(1, 64), metavar="LO..HI")
    sp.add_argument("--pseudo-ratio", type=float, default=0.2)
    sp.add_argument("-o", "--output")

    sp = add("sched", cmd_sched, "schedule a block and report makespan")
    sp.add_argument("file")
    sp.add_argument("--live-out", metavar="REGS")
    sp.add_argument("-o", "--output")

    sp = add("check", cmd_check, "validate that block B may replace block A")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--live-out", metavar="REGS")
    sp.add_argument("--dump", metavar="FILE", help="write the term table used by the check")

    sp = add("expand", cmd_expand, "expand a pseudo-instruction")
    sp.add_argument("spec", nargs="+", help='e.g. "memcpy r1, r2, 64, 8" or "li r3, 123456789"')
    sp.add_argument("--validate", action="store_true")
    sp.add_argument("--states", type=int, default=512, help="random states for --validate")
    sp.add_argument("--fault", choices=harness.EXPANDER_FAULTS)

    sp = add("parse", cmd_parse, "assembly -> structured JSON")
    sp.add_argument("file")
    sp.add_argument("-o", "--output")

    sp = add("print", cmd_print, "structured JSON -> assembly")
    sp.add_argument("file")
    sp.add_argument("-o", "--output")

    sp = add("roundtrip", cmd_roundtrip, "print/parse a block and compare")
    sp.add_argument("file")
    sp.add_argument("--fault", choices=asmtext.PRINTER_FAULTS)
    sp.add_argument("--states", type=int, default=64)

    sp = add("fuzz", cmd_fuzz, "differential fuzzing of the whole pipeline")
    sp.add_argument("--count", type=int, default=10_000)
    sp.add_argument("--len", type=_range, default=(1, 64), metavar="LO..HI")
    sp.add_argument("--pseudo-ratio", type=float, default=0.2)
    sp.add_argument("--fault", choices=harness.FAULTS)
    sp.add_argument("--validate-states", type=int, default=16)
    sp.add_argument("--replay", type=int, metavar="CASE_SEED")
    sp.add_argument("--stop-on-flag", action="store_true")
    sp.add_argument("--figures", metavar="DIR", help="also write PNG figures here")

    add("regress", cmd_regress, "replay the known bug-class scenarios")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for k, v in GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    try:
        if args.fuel < 1:
            raise UsageError("--fuel must be positive")
        return args.func(args)
    except (UsageError, AsmError, ContractError) as exc:
        print(f"tcb-forge: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
