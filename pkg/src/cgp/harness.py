"""Monte Carlo experiment runner, statistics, exact product bounds, sweeps.

Replications are independent tasks: the seed of replication ``i`` at horizon
index ``h`` derives only from ``(master_seed, h, i)`` through a counter-based
(Philox) stream, so results are reproducible and independent of worker count
or chunking.  Aggregation is a commutative merge of success counts.

Output formats: JSONL for per-replication records and estimates (stable key
order; a single meta line carries the timestamp, which comparisons exclude),
CSV for sweep tables.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special as sp
from scipy import stats as st

from .classify import Event, Outcome, Verdict, classify_ballsbins, classify_leadership
from .engine import (
    EXACT_INTEGER,
    FLOAT,
    ProcessConfig,
    detect_events,
    explosion_race,
    make_rng,
    simulate_ballsbins,
    simulate_embedded,
    chain_prefix_prob,
)
from .errors import PreconditionError
from .families import (
    ATOMLESS,
    FeedbackFamily,
    WaitingFamily,
    embed_feedback,
    geometric_counter,
    parse_family,
    power_feedback,
    two_point_counter,
)
from .numerics import infinite_product

__all__ = [
    "ExperimentSpec",
    "MCEstimate",
    "run_mc",
    "wilson_ci",
    "chi_square_gof",
    "stats",
    "equivalence_test",
    "Prop4Bounds",
    "prop4_bounds",
    "prop4_verdicts",
    "race_monopoly_mc",
    "strict_leadership_mc",
    "sweep",
]

SEED_RULE = "philox-seedseq(master,horizon_index,rep_index)"

EVENT_NAMES = ("leadership", "strict_leadership", "monopoly", "tie_in_window")


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def wilson_ci(k: int, n: int, alpha: float = 0.05) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n < 1 or not (0 <= k <= n):
        raise PreconditionError("need 0 <= k <= n, n >= 1")
    z = float(st.norm.ppf(1.0 - alpha / 2.0))
    phat = k / n
    z2 = z * z
    denom = 1.0 + z2 / n
    centre = (phat + z2 / (2 * n)) / denom
    half = (z / denom) * math.sqrt(phat * (1 - phat) / n + z2 / (4 * n * n))
    return max(0.0, centre - half), min(1.0, centre + half)


def chi_square_gof(
    counts: Sequence[float],
    probs: Sequence[float],
    min_expected: float = 0.0,
) -> tuple[float, int, float]:
    """Pearson chi-square goodness of fit: (stat, dof, p_value).

    The p-value is the regularised upper incomplete gamma Q(dof/2, stat/2).
    Cells with expected count below ``min_expected`` are pooled into one
    (dof adjusts accordingly).
    """
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if counts.shape != probs.shape or counts.ndim != 1:
        raise PreconditionError("counts and probs must be 1-d and aligned")
    if np.any(counts < 0):
        raise PreconditionError("counts must be nonnegative")
    if abs(float(probs.sum()) - 1.0) > 1e-12:
        raise PreconditionError("probabilities must sum to 1 within 1e-12")
    n = float(counts.sum())
    expected = probs * n
    if min_expected > 0.0:
        keep = expected >= min_expected
        if not np.all(keep):
            pooled_c = counts[~keep].sum()
            pooled_e = expected[~keep].sum()
            counts = np.append(counts[keep], pooled_c)
            expected = np.append(expected[keep], pooled_e)
    if expected.size < 2:
        raise PreconditionError("dof <= 0 after pooling")
    if np.any(expected <= 0):
        raise PreconditionError("expected counts must be positive")
    stat = float(np.sum((counts - expected) ** 2 / expected))
    dof = int(expected.size - 1)
    p = float(sp.gammaincc(dof / 2.0, stat / 2.0))
    return stat, dof, p


def stats(kind: str, **inputs):
    """Dispatcher: kind in {'wilson_ci', 'chi_square_gof'}."""
    if kind == "wilson_ci":
        return wilson_ci(**inputs)
    if kind == "chi_square_gof":
        return chi_square_gof(**inputs)
    raise PreconditionError(f"unknown stats kind {kind!r}")


# ---------------------------------------------------------------------------
# Monte Carlo runner
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    """One Monte Carlo experiment over a horizon ladder."""

    family: str
    initial: tuple[int, ...]
    horizons: tuple[int, ...]
    replications: int
    events: tuple[str, ...] = ("leadership", "strict_leadership", "monopoly")
    process: str = "embedded"  # or "ballsbins"
    numeric_mode: Optional[str] = None
    window: float = 0.5
    seed: int = 0
    out_path: Optional[str] = None
    workers: int = 1

    def validate(self):
        if self.replications < 1:
            raise PreconditionError("need at least one replication")
        if list(self.horizons) != sorted(set(self.horizons)) or not self.horizons:
            raise PreconditionError("horizons must be nonempty and strictly increasing")
        if self.process not in ("embedded", "ballsbins"):
            raise PreconditionError(f"unknown process {self.process!r}")
        for ev in self.events:
            if ev not in EVENT_NAMES:
                raise PreconditionError(f"unknown event {ev!r}")
        parse_family(self.family)  # raises on bad spec


@dataclass(frozen=True)
class MCEstimate:
    event: str
    horizon: int
    successes: int
    trials: int
    estimate: float
    wilson_low: float
    wilson_high: float
    master_seed: int
    seed_rule: str = SEED_RULE

    def to_record(self) -> dict:
        d = asdict(self)
        d["type"] = "estimate"
        return d


def _default_mode(fam) -> str:
    from .engine import _MODE_FOR_SUPPORT

    return _MODE_FOR_SUPPORT[fam.base.support_kind]


def _event_flags(prox, events) -> dict[str, bool]:
    flags = {}
    for ev in events:
        if ev == "leadership":
            flags[ev] = prox.leader_stable
        elif ev == "strict_leadership":
            flags[ev] = prox.strict_leader_stable
        elif ev == "monopoly":
            flags[ev] = prox.monopoly_proxy
        elif ev == "tie_in_window":
            flags[ev] = prox.last_tie_step >= prox.window_start
        else:
            raise PreconditionError(f"unknown event {ev!r}")
    return flags


def _mc_chunk(args):
    (family_text, process, initial, horizon, mode, window, master, h_idx,
     rep_lo, rep_hi, events) = args
    fam = parse_family(family_text)
    out = []
    for i in range(rep_lo, rep_hi):
        seed = (master, h_idx, i)
        try:
            if process == "ballsbins":
                traj = simulate_ballsbins(fam, initial, horizon, seed=seed)
            else:
                wf = fam if isinstance(fam, WaitingFamily) else embed_feedback(fam)
                cfg = ProcessConfig(
                    family=wf,
                    initial_values=tuple(initial),
                    horizon=horizon,
                    numeric_mode=mode or _default_mode(wf),
                    seed=seed,
                )
                traj = simulate_embedded(cfg)
            prox = detect_events(traj, window)
        except Exception as e:
            raise RuntimeError(f"replication {i} at horizon {horizon} failed: {e}") from e
        out.append((h_idx, i, _event_flags(prox, events)))
    return out


def run_mc(spec: ExperimentSpec) -> list[MCEstimate]:
    """Run the experiment; returns estimates and optionally writes JSONL."""
    spec.validate()
    fam = parse_family(spec.family)
    if spec.process == "embedded":
        wf = fam if isinstance(fam, WaitingFamily) else embed_feedback(fam)
        mode = spec.numeric_mode or _default_mode(wf)
    else:
        mode = None

    chunk = max(1, math.ceil(spec.replications / max(1, 4 * spec.workers)))
    tasks = []
    for h_idx, N in enumerate(spec.horizons):
        for lo in range(0, spec.replications, chunk):
            hi = min(spec.replications, lo + chunk)
            tasks.append((
                spec.family, spec.process, tuple(spec.initial), N, mode,
                spec.window, spec.seed, h_idx, lo, hi, tuple(spec.events),
            ))

    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as ex:
            chunks = list(ex.map(_mc_chunk, tasks))
    else:
        chunks = [_mc_chunk(t) for t in tasks]

    reps = sorted(itertools.chain.from_iterable(chunks), key=lambda r: (r[0], r[1]))
    counts = {(h, ev): 0 for h in range(len(spec.horizons)) for ev in spec.events}
    for h_idx, _i, flags in reps:
        for ev, hit in flags.items():
            counts[(h_idx, ev)] += int(hit)

    estimates = []
    for h_idx, N in enumerate(spec.horizons):
        for ev in spec.events:
            k = counts[(h_idx, ev)]
            lo_ci, hi_ci = wilson_ci(k, spec.replications)
            estimates.append(MCEstimate(
                event=ev, horizon=N, successes=k, trials=spec.replications,
                estimate=k / spec.replications, wilson_low=lo_ci,
                wilson_high=hi_ci, master_seed=spec.seed,
            ))

    if spec.out_path:
        with open(spec.out_path, "w") as fh:
            spec_desc = asdict(spec)
            # execution details, not experiment identity
            spec_desc.pop("workers", None)
            spec_desc.pop("out_path", None)
            meta = {
                "type": "meta",
                "spec": spec_desc,
                "seed_rule": SEED_RULE,
                "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            }
            fh.write(json.dumps(meta, sort_keys=True) + "\n")
            for h_idx, i, flags in reps:
                rec = {
                    "type": "rep",
                    "horizon": int(spec.horizons[h_idx]),
                    "rep": i,
                    "events": {k: bool(v) for k, v in flags.items()},
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            for est in estimates:
                fh.write(json.dumps(est.to_record(), sort_keys=True) + "\n")
    return estimates


# ---------------------------------------------------------------------------
# Embedding-equivalence test
# ---------------------------------------------------------------------------

def equivalence_test(
    fb: FeedbackFamily,
    initial: Sequence[int],
    prefix: int,
    samples: int,
    seed: int = 0,
    simulator: str = "embedded",
    simulator_family: Optional[FeedbackFamily] = None,
) -> tuple[float, int, float]:
    """Chi-square GOF of simulated selection prefixes vs exact chain law.

    Reference probabilities always come from ``fb``; ``simulator_family``
    (default ``fb``) drives the simulator, so a deliberately corrupted
    simulator can be tested against the true law as a negative control.
    ``simulator`` is "embedded" or "ballsbins" (self-test).
    """
    if prefix < 0 or samples < 1:
        raise PreconditionError("need prefix >= 0 and samples >= 1")
    if not fb.deterministic:
        raise PreconditionError("equivalence test needs deterministic feedback")
    if prefix == 0:
        return 0.0, 0, 1.0
    A = len(initial)
    sim_fb = simulator_family if simulator_family is not None else fb

    cells = list(itertools.product(range(A), repeat=prefix))
    probs = np.array(
        [float(chain_prefix_prob(fb, initial, picks)) for picks in cells]
    )
    index = {picks: k for k, picks in enumerate(cells)}

    counts = np.zeros(len(cells), dtype=np.int64)
    if simulator == "embedded":
        wf = embed_feedback(sim_fb)
        for i in range(samples):
            cfg = ProcessConfig(
                family=wf, initial_values=tuple(initial), horizon=prefix,
                numeric_mode=FLOAT, seed=(seed, i),
            )
            traj = simulate_embedded(cfg)
            picks = tuple(traj.group(g)[0] for g in range(prefix))
            counts[index[picks]] += 1
    elif simulator == "ballsbins":
        for i in range(samples):
            traj = simulate_ballsbins(sim_fb, initial, prefix, seed=(seed, i))
            picks = tuple(traj.group(g)[0] for g in range(prefix))
            counts[index[picks]] += 1
    else:
        raise PreconditionError(f"unknown simulator {simulator!r}")

    return chi_square_gof(counts, probs, min_expected=5.0)


# ---------------------------------------------------------------------------
# Exact non-zero-one bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Prop4Bounds:
    """Rigorous lower bounds exhibiting 0 < P(event) < 1 for the two
    counterexample families: monopoly for the two-point family, strict
    leadership for the geometric family."""

    monopoly_complement_lower: float
    slead_complement_lower: float
    mon_lower: float
    slead_lower: float
    square_product: tuple[float, float]      # prod_{j>=1} (1 - 1/(j+1)^2)
    geometric_product: tuple[float, float]   # prod_{j>=1} (1 - 2/((j+1)^2+1))

    def monopoly_envelope(self) -> tuple[float, float]:
        return self.mon_lower, 1.0 - self.monopoly_complement_lower

    def slead_envelope(self) -> tuple[float, float]:
        return self.slead_lower, 1.0 - self.slead_complement_lower


def prop4_bounds(width: float = 1e-7) -> Prop4Bounds:
    """Compute the explicit probability bounds via rigorous product enclosures."""

    def q_square(j):
        j = np.asarray(j, dtype=float)
        return 1.0 / (j + 1.0) ** 2

    def q_geom(j):
        j = np.asarray(j, dtype=float)
        return 2.0 / ((j + 1.0) ** 2 + 1.0)

    tail = lambda J: 1.0 / J
    sq_lo, sq_hi = infinite_product(q_square, tail, width=width)
    ge_lo, ge_hi = infinite_product(q_geom, lambda J: 2.0 / J, width=width)

    # products with the first factor removed, by exact division
    sq2_lo = sq_lo / 0.75
    ge2_lo = ge_lo / 0.6

    mon_comp = sq_lo * sq_lo
    mon_lower = 0.25 * sq2_lo * sq_lo
    # P(first draw strictly smaller) = 1/5 for the geometric pair at j = 1
    slead_lower = 0.2 * ge2_lo
    return Prop4Bounds(
        monopoly_complement_lower=mon_comp,
        slead_complement_lower=ge_lo,
        mon_lower=mon_lower,
        slead_lower=slead_lower,
        square_product=(sq_lo, sq_hi),
        geometric_product=(ge_lo, ge_hi),
    )


def prop4_verdicts(bounds: Optional[Prop4Bounds] = None) -> tuple[Verdict, Verdict]:
    """PositiveNondegenerate verdicts from the explicit bounds.

    Both events have a proven lower bound and a proven complement lower
    bound, so 0 < P < 1 rigorously; this is the only place that outcome is
    assigned.
    """
    b = bounds if bounds is not None else prop4_bounds()
    mono = Verdict(
        Event.MONOPOLY, Outcome.POSITIVE_NONDEGENERATE,
        f"two-point family: P(monopoly) in [{b.mon_lower:.6f}, "
        f"{1 - b.monopoly_complement_lower:.6f}] by exact product bounds",
    )
    slead = Verdict(
        Event.STRICT_LEADERSHIP, Outcome.POSITIVE_NONDEGENERATE,
        f"geometric family: P(strict leadership) in [{b.slead_lower:.6f}, "
        f"{1 - b.slead_complement_lower:.6f}] by exact product bounds",
    )
    return mono, slead


def race_monopoly_mc(
    replications: int = 10_000,
    depth_budget: int = 40,
    seed: int = 0,
) -> MCEstimate:
    """Monte Carlo monopoly estimate for the two-point family.

    Monopoly holds exactly when one explosion time is strictly smallest;
    each replication races exact dyadic partial sums to separation within
    the depth budget.  Undecided races count as failures, so the estimate
    is conservative (a lower estimate of the true monopoly probability).
    """
    fam = two_point_counter()
    k = 0
    for i in range(replications):
        res = explosion_race(
            fam, (0, 0), precision=0.0, seed=(seed, i),
            depth_budget=depth_budget, check_convergence=(i == 0),
        )
        if isinstance(res.winner, int):
            k += 1
    lo, hi = wilson_ci(k, replications)
    return MCEstimate(
        event="monopoly", horizon=depth_budget, successes=k,
        trials=replications, estimate=k / replications,
        wilson_low=lo, wilson_high=hi, master_seed=seed,
        seed_rule="philox-seedseq(master,rep_index) via race",
    )


def strict_leadership_mc(
    replications: int = 10_000,
    depth_budget: int = 40,
    seed: int = 0,
    window: float = 0.5,
) -> MCEstimate:
    """Monte Carlo strict-leadership proxy estimate for the geometric family.

    Runs the embedded race in exact integer mode to about ``depth_budget``
    levels per agent and reads the strict-leader window proxy.
    """
    fam = geometric_counter()
    horizon = 2 * depth_budget
    k = 0
    for i in range(replications):
        cfg = ProcessConfig(
            family=fam, initial_values=(0, 0), horizon=horizon,
            numeric_mode=EXACT_INTEGER, seed=(seed, i),
        )
        prox = detect_events(simulate_embedded(cfg), window)
        k += int(prox.strict_leader_stable)
    lo, hi = wilson_ci(k, replications)
    return MCEstimate(
        event="strict_leadership", horizon=horizon, successes=k,
        trials=replications, estimate=k / replications,
        wilson_low=lo, wilson_high=hi, master_seed=seed,
    )


# ---------------------------------------------------------------------------
# Phase sweep
# ---------------------------------------------------------------------------

def sweep(
    p_grid: Sequence[float],
    horizons: Sequence[int],
    replications: int,
    seed: int = 0,
    out_path: Optional[str] = None,
    window: float = 0.5,
    workers: int = 1,
) -> list[dict]:
    """Proxy estimates plus classifier verdicts across a power-feedback grid.

    Returns CSV-ready rows sorted by (p, horizon, event); writes them when
    ``out_path`` is given.
    """
    if not p_grid:
        raise PreconditionError("p grid must be nonempty")
    if not horizons:
        raise PreconditionError("horizon list must be nonempty")
    rows = []
    for p in sorted(p_grid):
        fb = power_feedback(p)
        mono_v, strict_v = classify_ballsbins(fb)
        lead_v = classify_leadership(embed_feedback(fb))
        verdicts = {
            "leadership": lead_v.outcome.value,
            "strict_leadership": strict_v.outcome.value,
            "monopoly": mono_v.outcome.value,
        }
        spec = ExperimentSpec(
            family=f"power_exponential{{p={p:g}}}",
            initial=(0, 0),
            horizons=tuple(sorted(horizons)),
            replications=replications,
            events=("leadership", "strict_leadership", "monopoly"),
            window=window,
            seed=seed,
            workers=workers,
        )
        for est in run_mc(spec):
            rows.append({
                "p": p,
                "horizon": est.horizon,
                "event": est.event,
                "successes": est.successes,
                "trials": est.trials,
                "estimate": est.estimate,
                "wilson_low": est.wilson_low,
                "wilson_high": est.wilson_high,
                "verdict": verdicts[est.event],
            })
    rows.sort(key=lambda r: (r["p"], r["horizon"], r["event"]))
    if out_path:
        with open(out_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    return rows
