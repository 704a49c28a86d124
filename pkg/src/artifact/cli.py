"""Command-line entry point: parse, run, compile, check and lift.

Exit codes: 0 success or passing verdict, 1 error or failing verdict,
2 fuel exhausted, 3 check not applicable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import __version__
from .compose import check_confluence, check_projection_preservation, check_rollback_transparency
from .corpus import attacker_corpus
from .errors import ArtifactError, FuelExhausted, NotApplicable
from .lang import instantiate_labels, link, load_unit, pretty
from .lift import (
    lift_corpus, lift_report, safe_nesting, safe_nesting_corpus, syntactic_independence,
    trapped_corpus, trapped_speculation,
)
from .machine import DEFAULT_FUEL, Options, trace_to_jsonl
from .passes import PASS_ORDER, PASSES, compile
from .report import figure_path, plot_matrix, render_lift, render_matrix, write_atomic
from .security import check_robust, check_sni, check_ss
from .spec import DEFAULT_OMEGA, parse_sources, run_spec

EXIT_OK, EXIT_FAIL, EXIT_FUEL, EXIT_NA = 0, 1, 2, 3


def _opts(args) -> Options:
    return Options(store_writes_safe=getattr(args, "store_writes_safe", False))


def _program(args, path=None, compiled=True):
    """Programs that are run may be compiler output, so popret/modret are admitted."""
    return load_unit(path or args.program, ext_vassign=args.ext_vassign, allow_admin=compiled)


def _attacker(args):
    return load_unit(args.attacker) if getattr(args, "attacker", None) else None


def _emit(args, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if getattr(args, "out", None):
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


def _verdict_exit(ok: bool) -> int:
    return EXIT_OK if ok else EXIT_FAIL


# --------------------------------------------------------------------------
# subcommands


def cmd_parse(args) -> int:
    p = _program(args, compiled=args.compiled)
    out = pretty(p)
    if args.attacker is not None or not p.imports:
        w = link(_attacker(args), p)
        out += "# labels " + json.dumps(instantiate_labels(w)) + "\n"
    if args.out:
        write_atomic(args.out, out)
    else:
        sys.stdout.write(out)
    return EXIT_OK


def cmd_run(args) -> int:
    s = parse_sources(args.sources)
    w = link(_attacker(args), _program(args))
    trace = run_spec(w, s, args.omega, args.fuel, _opts(args))
    text = trace_to_jsonl(trace)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_compile(args) -> int:
    p = _program(args, args.input, compiled=False)
    q = compile(args.pass_id, p, ext_vassign=args.ext_vassign)
    if args.out:
        write_atomic(args.out, pretty(q))
    else:
        sys.stdout.write(pretty(q))
    return EXIT_OK


def _check_ss(args) -> int:
    s = parse_sources(args.sources)
    v = check_ss(link(_attacker(args), _program(args)), s, args.omega, args.fuel, _opts(args))
    _emit(args, v.as_dict() | {"omega": args.omega})
    return _verdict_exit(v.safe)


def _check_sni(args) -> int:
    s = parse_sources(args.sources)
    v = check_sni(_program(args), _attacker(args), s, args.pairs,
                  args.omega, args.fuel, args.seed, _opts(args))
    _emit(args, v.as_dict() | {"omega": args.omega})
    return _verdict_exit(v.safe)


def _check_robust(args) -> int:
    s = parse_sources(args.sources)
    p = _program(args)
    corpus = attacker_corpus(p, seed=args.seed)
    v = check_robust(args.prop.upper(), p, corpus, s, args.omega,
                     args.fuel, args.pairs, args.seed, _opts(args))
    _emit(args, v.as_dict() | {"omega": args.omega, "seed": args.seed})
    return _verdict_exit(v.safe)


def _check_wfc(args) -> int:
    x, y = parse_sources(args.x), parse_sources(args.y)
    w = link(_attacker(args), _program(args))
    kw = dict(omega=args.omega, fuel=args.fuel, opts=_opts(args), name=args.program)
    reps = [check_projection_preservation(w, x, y, **kw),
            check_confluence(w, x | y, args.trials, **kw),
            check_rollback_transparency(w, x | y, **kw)]
    ok = all(r.ok for r in reps)
    _emit(args, {"verdict": "pass" if ok else "fail", "omega": args.omega,
                 "checks": [r.as_dict() for r in reps]})
    return _verdict_exit(ok)


def _check_trapped(args) -> int:
    if args.program:
        v = trapped_speculation(args.pass_id, _program(args), _attacker(args), args.omega,
                                args.fuel, _opts(args), args.ext_vassign)
    else:
        v = trapped_corpus(args.pass_id, lift_corpus(args.pass_id, seed=args.seed),
                           omega=args.omega, fuel=args.fuel, opts=_opts(args))
    _emit(args, v.as_dict() | {"pass": args.pass_id, "omega": args.omega})
    return _verdict_exit(v.safe)


def _check_nesting(args) -> int:
    s = parse_sources(args.sources)
    if len(s) < 2:
        raise NotApplicable("safe nesting needs at least two speculation sources")
    if args.program:
        p = _program(args)
        if args.pass_id:
            p = compile(args.pass_id, p, ext_vassign=args.ext_vassign)
        v = safe_nesting(link(_attacker(args), p), s, args.omega, args.fuel, _opts(args))
    elif args.pass_id:
        v = safe_nesting_corpus(args.pass_id, s, lift_corpus(args.pass_id, seed=args.seed),
                                omega=args.omega, fuel=args.fuel, opts=_opts(args))
    else:
        raise ArtifactError("check nesting needs --program or --pass")
    _emit(args, v.as_dict() | {"omega": args.omega})
    return _verdict_exit(v.safe)


def _check_si(args) -> int:
    v = syntactic_independence(args.pass_id, parse_sources(args.set or args.sources))
    _emit(args, v.as_dict())
    return _verdict_exit(v.safe)


_CHECKS = {"ss": _check_ss, "sni": _check_sni, "robust": _check_robust, "wfc": _check_wfc,
           "trapped": _check_trapped, "nesting": _check_nesting, "si": _check_si}


def cmd_check(args) -> int:
    return _CHECKS[args.kind](args)


def _lift_one(pass_id, corpus_dir, ext, omega, fuel, seed, store_writes_safe):
    programs = None
    if corpus_dir:
        programs = {os.path.splitext(f)[0]: load_unit(os.path.join(corpus_dir, f), ext_vassign=ext)
                    for f in sorted(os.listdir(corpus_dir)) if f.endswith(".uasm")}
    corpus = lift_corpus(pass_id, seed=seed, programs=programs, ext_vassign=ext)
    return lift_report(pass_id, corpus, omega=omega, fuel=fuel,
                       opts=Options(store_writes_safe=store_writes_safe))


def cmd_lift(args) -> int:
    ids = list(PASS_ORDER) if args.pass_id == "all" else [args.pass_id]
    job = (args.corpus, args.ext_vassign, args.omega, args.fuel, args.seed, args.store_writes_safe)
    if args.jobs > 1 and len(ids) > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            reports = list(ex.map(_lift_one, ids, *[[j] * len(ids) for j in job]))
    else:
        reports = [_lift_one(i, *job) for i in ids]
    text = "".join(render_lift(r) + "\n" for r in reports) + render_matrix(reports)
    obj = {"omega": args.omega, "seed": args.seed, "fuel": args.fuel,
           "reports": [r.as_dict() for r in reports]}
    if args.out:
        write_atomic(args.out, json.dumps(obj, indent=2, sort_keys=True) + "\n")
        write_atomic(os.path.splitext(args.out)[0] + ".txt", text)
        plot_matrix(reports, figure_path(args.out))
    sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser, sources=True) -> None:
    if sources:
        p.add_argument("--sources", default="", help="comma-separated subset of B,J,S,R,SLS")
    p.add_argument("--omega", type=int, default=DEFAULT_OMEGA, help="speculation window")
    p.add_argument("--fuel", type=int, default=DEFAULT_FUEL, help="architectural step bound")
    p.add_argument("--ext-vassign", action="store_true", help="enable variable-latency vassign")
    p.add_argument("--store-writes-safe", action="store_true",
                   help="public stores write S into the cell")
    p.add_argument("--out", help="output file (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="artifact", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("parse", help="parse, validate and pretty-print a unit")
    p.add_argument("program")
    p.add_argument("--attacker")
    p.add_argument("--ext-vassign", action="store_true")
    p.add_argument("--compiled", action="store_true", help="admit compiler-only popret/modret")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("run", help="run a linked program and write its JSON-lines trace")
    p.add_argument("program")
    p.add_argument("--attacker")
    _common(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("compile", help="apply a countermeasure pass")
    p.add_argument("--pass", dest="pass_id", required=True, choices=sorted(PASSES))
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--ext-vassign", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_compile)

    p = sub.add_parser("check", help="run one checker and write a JSON verdict")
    p.add_argument("kind", choices=sorted(_CHECKS))
    p.add_argument("--program")
    p.add_argument("--attacker")
    p.add_argument("--pass", dest="pass_id", choices=sorted(PASSES))
    p.add_argument("--set", help="source set for check si")
    p.add_argument("--x", default="", help="first source set for check wfc")
    p.add_argument("--y", default="", help="second source set for check wfc")
    p.add_argument("--prop", default="ss", choices=("ss", "sni"), help="property for check robust")
    p.add_argument("--pairs", type=int, default=50, help="low-equivalent pairs for sni")
    p.add_argument("--trials", type=int, default=5, help="confluence re-runs for wfc")
    p.add_argument("--seed", type=int, default=0)
    _common(p)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("lift", help="lattice-wide lifting report with text matrix and figure")
    p.add_argument("--pass", dest="pass_id", required=True, choices=sorted(PASSES) + ["all"])
    p.add_argument("--corpus", help="directory of component .uasm files (default: bundled fixtures)")
    p.add_argument("--seed", type=int, default=0, help="seed for the random attackers")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for --pass all")
    _common(p, sources=False)
    p.set_defaults(fn=cmd_lift)
    return ap


def _needs(args) -> None:
    if args.cmd == "check":
        need = {"ss": ["program"], "sni": ["program"], "robust": ["program"], "wfc": ["program"],
                "trapped": ["pass_id"], "si": ["pass_id"]}.get(args.kind, [])
        for a in need:
            if not getattr(args, a):
                raise ArtifactError(f"check {args.kind} needs --{a.replace('_id', '')}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _needs(args)
        return args.fn(args)
    except FuelExhausted as e:
        print(f"error: FuelExhausted: {e}", file=sys.stderr)
        return EXIT_FUEL
    except NotApplicable as e:
        print(f"not applicable: {e}", file=sys.stderr)
        return EXIT_NA
    except (ArtifactError, ValueError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
