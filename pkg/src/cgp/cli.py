"""Command-line interface.

Exit codes: 0 success, 2 family-spec parse error, 3 precondition violation,
4 resource budget exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

from .classify import classify_ballsbins, classify_leadership, classify_monopoly, classify_strict
from .engine import ProcessConfig, simulate_embedded, simulate_ballsbins, trajectory_records
from .errors import ParseError, PreconditionError, ResourceBudgetError
from .families import FeedbackFamily, WaitingFamily, embed_feedback, parse_family
from .harness import ExperimentSpec, equivalence_test, run_mc, sweep
from .series import atom_bruteforce, atom_criterion, fluctuation_scan


def _ints(text):
    return tuple(int(x) for x in text.split(","))


def _resolve_mode(fam, mode):
    from .engine import _MODE_FOR_SUPPORT

    if mode == "float":
        return "float"
    if mode == "exact":
        kind = fam.base.support_kind
        want = _MODE_FOR_SUPPORT[kind]
        if want == "float":
            raise PreconditionError("exact mode needs a lattice family")
        return want
    return mode


def _cmd_simulate(args):
    fam = parse_family(args.family)
    if isinstance(fam, FeedbackFamily):
        fam = embed_feedback(fam)
    cfg = ProcessConfig(
        family=fam,
        initial_values=_ints(args.init),
        horizon=args.horizon,
        numeric_mode=_resolve_mode(fam, args.mode),
        seed=args.seed,
    )
    traj = simulate_embedded(cfg)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for rec in trajectory_records(traj):
            out.write(json.dumps(rec, sort_keys=True) + "\n")
        summary = {
            "final_values": list(traj.final_values),
            "tie_count": traj.tie_count,
            "explosion_flag": traj.explosion_flag,
        }
        out.write(json.dumps({"type": "summary", **summary}, sort_keys=True) + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def _cmd_classify(args):
    fam = parse_family(args.family)
    if args.feedback or isinstance(fam, FeedbackFamily):
        if not isinstance(fam, FeedbackFamily):
            raise PreconditionError("--feedback needs a feedback family spec")
        mono, strict = classify_ballsbins(fam)
        lead = classify_leadership(embed_feedback(fam))
        for v in (lead, strict, mono):
            print(v.to_text())
        return 0
    init = _ints(args.init) if args.init else (0, 0)
    lead = classify_leadership(fam)
    strict = classify_strict(fam, init)
    mono = classify_monopoly(fam, init)
    for v in (lead, strict, mono):
        print(v.to_text())
    return 0


def _cmd_sweep(args):
    lo, hi, step = (float(x) for x in args.p.split(":"))
    grid = []
    x = lo
    while x <= hi + 1e-12:
        grid.append(round(x, 10))
        x += step
    rows = sweep(
        grid,
        _ints(args.horizons),
        args.reps,
        seed=args.seed,
        out_path=args.out,
        workers=args.workers,
    )
    if not args.out:
        for r in rows:
            print(json.dumps(r, sort_keys=True))
    return 0


def _cmd_equivalence(args):
    fb = parse_family(args.feedback)
    if not isinstance(fb, FeedbackFamily):
        raise PreconditionError("equivalence needs a feedback family")
    stat, dof, p = equivalence_test(
        fb, _ints(args.init), args.prefix, args.samples, seed=args.seed
    )
    print(json.dumps({"chi_square": stat, "dof": dof, "p_value": p}, sort_keys=True))
    return 0


def _cmd_atom(args):
    fam = parse_family(args.family)
    if not isinstance(fam, WaitingFamily):
        raise PreconditionError("atom analysis needs a waiting family")
    verdict = atom_criterion(fam)
    print(json.dumps({
        "criterion": verdict.has_atom.value,
        "reason": verdict.reason,
    }, sort_keys=True))
    if fam.lattice is None:
        print(json.dumps({"bruteforce": "unavailable (no exact lattice view)"}))
        return 0
    report = atom_bruteforce(fam.lattice, args.depth, mass_floor=Fraction(1, 10 ** 15))
    top = sorted(report.atoms, key=lambda a: -a.prefix_mass)[:10]
    print(json.dumps({
        "depth": report.depth,
        "atom_count": len(report.atoms),
        "max_atom_upper": report.max_atom_upper,
        "top_atoms": [
            {
                "location": str(a.location),
                "prefix_mass": float(a.prefix_mass),
                "mass_lower": a.mass_lower,
                "mass_upper": a.mass_upper,
            }
            for a in top
        ],
    }, sort_keys=True))
    return 0


def _cmd_fluctuate(args):
    fam = parse_family(args.family)
    if not isinstance(fam, WaitingFamily):
        raise PreconditionError("fluctuation probe needs a waiting family")
    from .engine import make_rng
    import numpy as np

    for r in range(args.reps):
        rng = make_rng(args.seed, r)
        xs = np.array([float(fam.base.sample(j, rng)) for j in range(1, args.n + 1)])
        stats = fluctuation_scan(np.cumsum(xs))
        print(json.dumps({
            "rep": r,
            "max": stats.running_max,
            "min": stats.running_min,
            "zero_crossings": stats.zero_crossings,
            "last_sign_change": stats.last_sign_change,
        }, sort_keys=True))
    return 0


def _cmd_mc(args):
    spec = ExperimentSpec(
        family=args.family,
        initial=_ints(args.init),
        horizons=_ints(args.horizons),
        replications=args.reps,
        events=tuple(args.events.split(",")),
        process=args.process,
        window=args.window,
        seed=args.seed,
        out_path=args.out,
        workers=args.workers,
    )
    for est in run_mc(spec):
        print(json.dumps(est.to_record(), sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cgp", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    sim = sub.add_parser("simulate", help="simulate the embedded process")
    sim.add_argument("--family", required=True)
    sim.add_argument("--init", default="0,0")
    sim.add_argument("--horizon", type=int, required=True)
    sim.add_argument("--mode", default="float", choices=["float", "exact"])
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", default=None)
    sim.set_defaults(func=_cmd_simulate)

    cls = sub.add_parser("classify", help="analytic verdicts for a family")
    cls.add_argument("--family", required=True)
    cls.add_argument("--feedback", action="store_true")
    cls.add_argument("--init", default=None)
    cls.set_defaults(func=_cmd_classify)

    sw = sub.add_parser("sweep", help="phase table over power feedback")
    sw.add_argument("--p", required=True, help="lo:hi:step")
    sw.add_argument("--horizons", required=True)
    sw.add_argument("--reps", type=int, required=True)
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--out", default=None)
    sw.add_argument("--workers", type=int, default=1)
    sw.set_defaults(func=_cmd_sweep)

    eq = sub.add_parser("equivalence", help="embedded vs exact chain GOF")
    eq.add_argument("--feedback", required=True)
    eq.add_argument("--init", required=True)
    eq.add_argument("--prefix", type=int, required=True)
    eq.add_argument("--samples", type=int, required=True)
    eq.add_argument("--seed", type=int, default=0)
    eq.set_defaults(func=_cmd_equivalence)

    at = sub.add_parser("atom", help="atom criterion and brute-force oracle")
    at.add_argument("--family", required=True)
    at.add_argument("--depth", type=int, default=20)
    at.set_defaults(func=_cmd_atom)

    fl = sub.add_parser("fluctuate", help="partial-sum fluctuation probe")
    fl.add_argument("--family", required=True)
    fl.add_argument("--n", type=int, required=True)
    fl.add_argument("--reps", type=int, default=1)
    fl.add_argument("--seed", type=int, default=0)
    fl.set_defaults(func=_cmd_fluctuate)

    mc = sub.add_parser("mc", help="Monte Carlo event estimates")
    mc.add_argument("--family", required=True)
    mc.add_argument("--init", default="0,0")
    mc.add_argument("--horizons", required=True)
    mc.add_argument("--reps", type=int, required=True)
    mc.add_argument("--events", default="leadership,strict_leadership,monopoly")
    mc.add_argument("--process", default="embedded", choices=["embedded", "ballsbins"])
    mc.add_argument("--window", type=float, default=0.5)
    mc.add_argument("--seed", type=int, default=0)
    mc.add_argument("--out", default=None)
    mc.add_argument("--workers", type=int, default=1)
    mc.set_defaults(func=_cmd_mc)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return 2
    except PreconditionError as e:
        print(f"precondition violated: {e}", file=sys.stderr)
        return 3
    except ResourceBudgetError as e:
        print(f"resource budget exceeded: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
