"""Event-driven simulation of the embedded process and the discrete urn chain.

``simulate_embedded`` runs the value race: every agent carries its own
absolute clock (the partial sum of its waiting times) and the next event is
always the global minimum of the next-jump times.  In exact numeric modes
equal times are detected exactly and all simultaneous jumps are emitted as a
single tie group: the discrete index advances by the group size and the
emitted times inside the group coincide, so the value vector visible at such
a step already includes every jump at that instant.

``simulate_ballsbins`` runs the discrete-time chain directly: an urn holding
``u`` balls is selected with probability proportional to its (lazily sampled
and cached) feedback value at ``u``.

Float mode is reserved for atomless waiting laws, where ties have
probability zero; lattice laws must use an exact mode, otherwise tie
detection would be unsound and is rejected.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from .errors import PreconditionError
from .families import (
    ATOMLESS,
    DYADIC_LATTICE,
    INTEGER_LATTICE,
    FeedbackFamily,
    WaitingFamily,
)
from .numerics import Dyadic, SeriesStatus

__all__ = [
    "ProcessConfig",
    "Trajectory",
    "EventProxies",
    "simulate_embedded",
    "simulate_ballsbins",
    "chain_prefix_prob",
    "detect_events",
    "explosion_race",
    "trajectory_records",
    "borel_cantelli_probe",
]

FLOAT = "float"
EXACT_DYADIC = "exact_dyadic"
EXACT_INTEGER = "exact_integer"

_MODE_FOR_SUPPORT = {
    ATOMLESS: FLOAT,
    DYADIC_LATTICE: EXACT_DYADIC,
    INTEGER_LATTICE: EXACT_INTEGER,
}

TimePoint = Union[float, int, Dyadic]


def make_rng(*key) -> np.random.Generator:
    """Counter-style generator: a Philox stream keyed by the seed tuple."""
    flat: list[int] = []
    for k in key:
        if isinstance(k, (tuple, list)):
            flat.extend(int(x) & 0xFFFFFFFFFFFFFFFF for x in k)
        else:
            flat.append(int(k) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(tuple(flat))))


@dataclass(frozen=True)
class ProcessConfig:
    """Configuration of one embedded-process run.

    ``horizon`` counts discrete value increments to emit (a trailing tie
    group is completed, so up to ``agent_count - 1`` extra increments may be
    emitted).  ``numeric_mode`` must match the family's support kind.
    """

    family: WaitingFamily
    initial_values: tuple[int, ...]
    horizon: int
    numeric_mode: str = FLOAT
    seed: Union[int, tuple] = 0

    @property
    def agent_count(self) -> int:
        return len(self.initial_values)

    def validate(self):
        if self.agent_count < 2:
            raise PreconditionError("need at least 2 agents")
        if any(v < 0 for v in self.initial_values):
            raise PreconditionError("initial values must be nonnegative")
        if self.horizon < 0:
            raise PreconditionError("horizon must be >= 0")
        kind = self.family.base.support_kind
        want = _MODE_FOR_SUPPORT[kind]
        if self.numeric_mode != want:
            if self.numeric_mode == FLOAT:
                raise PreconditionError(
                    f"float mode with {kind} family: tie detection would be unsound"
                )
            raise PreconditionError(
                f"numeric mode {self.numeric_mode} does not match support {kind}"
            )
        if not self.family.base.nonnegative:
            raise PreconditionError("waiting times must be nonnegative")


@dataclass
class Trajectory:
    """The embedded discrete process, grouped by simultaneous-jump events.

    Parallel sequences: event ``g`` covers discrete indices
    ``(n_end[g] - group size, n_end[g]]``, all sharing the time ``times[g]``;
    group ``g`` lists the jumping agents with multiplicity.
    ``sum(values at any emitted n) == n`` exactly.

    For tie-free runs ``jumps`` may be stored as a plain integer array (one
    jumper per step); use :meth:`group` / :meth:`iter_groups` to consume
    uniformly.
    """

    initial_values: tuple[int, ...]
    numeric_mode: str
    n_end: Union[list, np.ndarray] = field(default_factory=list)
    times: Union[list, np.ndarray] = field(default_factory=list)
    jumps: Union[list, np.ndarray] = field(default_factory=list)
    final_values: tuple[int, ...] = ()
    tie_count: int = 0
    explosion_flag: bool = False

    @property
    def start_index(self) -> int:
        return sum(self.initial_values)

    @property
    def steps(self) -> int:
        return int(self.n_end[-1] - self.start_index) if len(self.n_end) else 0

    def group(self, g: int) -> tuple:
        j = self.jumps[g]
        return (int(j),) if isinstance(self.jumps, np.ndarray) else j

    def iter_groups(self):
        if isinstance(self.jumps, np.ndarray):
            for j in self.jumps:
                yield (int(j),)
        else:
            yield from self.jumps


def simulate_embedded(cfg: ProcessConfig) -> Trajectory:
    """Run the embedded value race.  Deterministic given (cfg, seed)."""
    cfg.validate()
    rng = make_rng(cfg.seed)
    traj = Trajectory(initial_values=tuple(cfg.initial_values), numeric_mode=cfg.numeric_mode)
    if cfg.horizon == 0:
        traj.final_values = tuple(cfg.initial_values)
        return traj
    if cfg.numeric_mode == FLOAT:
        return _simulate_float(cfg, rng, traj)
    return _simulate_exact(cfg, rng, traj)


def _simulate_float(cfg: ProcessConfig, rng, traj: Trajectory) -> Trajectory:
    fam = cfg.family
    A = cfg.agent_count
    values = list(cfg.initial_values)
    if fam.make_stepper is not None:
        draw = fam.make_stepper(rng)
    else:
        sample = fam.base.sample
        draw = lambda j: float(sample(j, rng))

    H = cfg.horizon
    n0 = sum(values)
    jumpers = np.empty(H, dtype=np.int64)
    times = np.empty(H, dtype=np.float64)
    explosion = False

    if A == 2:
        v0, v1 = values
        s0 = draw(v0 + 1)
        s1 = draw(v1 + 1)
        c0 = c1 = 0.0
        n0_, n1_ = s0, s1  # materialised next-jump times
        for step in range(H):
            if n0_ <= n1_:
                best = n0_
                v0 += 1
                jumpers[step] = 0
                x = draw(v0 + 1)
                t = s0 + x
                c0 += ((s0 - t) + x) if s0 >= x else ((x - t) + s0)
                s0 = t
                n0_ = t + c0
                if x > 0.0 and n0_ == best:
                    explosion = True
            else:
                best = n1_
                v1 += 1
                jumpers[step] = 1
                x = draw(v1 + 1)
                t = s1 + x
                c1 += ((s1 - t) + x) if s1 >= x else ((x - t) + s1)
                s1 = t
                n1_ = t + c1
                if x > 0.0 and n1_ == best:
                    explosion = True
            times[step] = best
        values = [v0, v1]
    else:
        # per-agent compensated clocks (s, c) and materialised next-jump times
        s = [0.0] * A
        c = [0.0] * A
        nxt = [0.0] * A
        for a in range(A):
            x = draw(values[a] + 1)
            if x < 0:
                raise PreconditionError("negative waiting time")
            s[a] = x
            nxt[a] = x
        for step in range(H):
            a = 0
            best = nxt[0]
            for b in range(1, A):
                if nxt[b] < best:
                    best = nxt[b]
                    a = b
            values[a] += 1
            jumpers[step] = a
            times[step] = best
            x = draw(values[a] + 1)
            sa = s[a]
            t = sa + x
            if sa >= x:
                c[a] += (sa - t) + x
            else:
                c[a] += (x - t) + sa
            s[a] = t
            new_next = t + c[a]
            if x > 0.0 and new_next == best:
                explosion = True  # waiting time lost below float resolution
            nxt[a] = new_next
    traj.n_end = np.arange(n0 + 1, n0 + H + 1, dtype=np.int64)
    traj.times = times
    traj.jumps = jumpers
    traj.final_values = tuple(values)
    traj.tie_count = 0
    traj.explosion_flag = explosion
    return traj


def _simulate_exact(cfg: ProcessConfig, rng, traj: Trajectory) -> Trajectory:
    fam = cfg.family
    A = cfg.agent_count
    values = list(cfg.initial_values)
    sample = fam.base.sample
    zero = Dyadic(0) if cfg.numeric_mode == EXACT_DYADIC else 0

    heap = []
    clocks = [zero] * A
    for a in range(A):
        x = sample(values[a] + 1, rng)
        clocks[a] = clocks[a] + x
        heapq.heappush(heap, (clocks[a], a))
    n = sum(values)
    steps = 0
    tie_count = 0
    H = cfg.horizon
    group_cap = H + 4 * A  # guards against an all-zero waiting cascade
    while steps < H:
        t, a = heapq.heappop(heap)
        group = [a]
        # everyone whose next jump time is exactly t jumps in this group,
        # including repeat jumps caused by zero waiting times
        while True:
            values[group[-1]] += 1
            x = sample(values[group[-1]] + 1, rng)
            clocks[group[-1]] = clocks[group[-1]] + x
            heapq.heappush(heap, (clocks[group[-1]], group[-1]))
            if heap[0][0] == t and steps + len(group) < group_cap:
                _, b = heapq.heappop(heap)
                group.append(b)
            else:
                break
        size = len(group)
        steps += size
        n += size
        traj.n_end.append(n)
        traj.times.append(t)
        traj.jumps.append(tuple(group))
        if size > 1:
            tie_count += 1
    traj.final_values = tuple(values)
    traj.tie_count = tie_count
    traj.explosion_flag = False
    return traj


# ---------------------------------------------------------------------------
# Discrete urn chain
# ---------------------------------------------------------------------------

def simulate_ballsbins(
    fb: FeedbackFamily,
    initial: Sequence[int],
    horizon: int,
    seed: int = 0,
) -> Trajectory:
    """Run the urn chain: pick urn a with probability F_a(u_a) / sum F.

    Each feedback value is sampled lazily on first need and cached per
    (agent, count), as the chain definition requires.  Times are the step
    indices (exact integers).
    """
    if len(initial) < 2:
        raise PreconditionError("need at least 2 urns")
    if any(u < 1 for u in initial):
        raise PreconditionError("initial counts must be >= 1")
    if horizon < 0:
        raise PreconditionError("horizon must be >= 0")
    rng = make_rng(seed, 0xB1B5)
    A = len(initial)
    counts = list(initial)
    cache: dict[tuple[int, int], float] = {}

    def feed(a, u):
        key = (a, u)
        v = cache.get(key)
        if v is None:
            v = float(fb.sample_F(u, rng))
            if not (v > 0.0) or not math.isfinite(v):
                raise PreconditionError(f"feedback value must be positive, got {v}")
            cache[key] = v
        return v

    weights = [feed(a, counts[a]) for a in range(A)]
    total = sum(weights)
    traj = Trajectory(initial_values=tuple(initial), numeric_mode=EXACT_INTEGER)
    n = sum(counts)
    buf = rng.random(1024)
    pos = 0
    for step in range(1, horizon + 1):
        if pos >= buf.size:
            buf = rng.random(1024)
            pos = 0
        u = buf[pos] * total
        pos += 1
        acc = 0.0
        a = A - 1
        for b in range(A):
            acc += weights[b]
            if u < acc:
                a = b
                break
        counts[a] += 1
        n += 1
        traj.n_end.append(n)
        traj.times.append(step)
        traj.jumps.append((a,))
        w = feed(a, counts[a])
        total += w - weights[a]
        weights[a] = w
    traj.final_values = tuple(counts)
    return traj


def chain_prefix_prob(
    fb: FeedbackFamily,
    initial: Sequence[int],
    picks: Sequence[int],
) -> Fraction:
    """Exact probability of a pick sequence under the urn chain.

    Requires deterministic feedback with exact rational values.
    """
    if not fb.deterministic:
        raise PreconditionError("chain_prefix_prob needs deterministic feedback")
    if fb.exact_value is None:
        raise PreconditionError("feedback has no exact rational values")
    if any(u < 1 for u in initial):
        raise PreconditionError("initial counts must be >= 1")
    counts = list(initial)
    A = len(counts)
    weights = []
    for a in range(A):
        v = fb.exact_value(counts[a])
        if v is None or v <= 0:
            raise PreconditionError(f"feedback not exactly rational/positive at {counts[a]}")
        weights.append(v)
    prob = Fraction(1)
    for a in picks:
        if not (0 <= a < A):
            raise PreconditionError(f"pick {a} out of range")
        prob *= Fraction(weights[a], 1) / sum(weights)
        counts[a] += 1
        v = fb.exact_value(counts[a])
        if v is None or v <= 0:
            raise PreconditionError(f"feedback not exactly rational/positive at {counts[a]}")
        weights[a] = v
    return prob


# ---------------------------------------------------------------------------
# Event detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EventProxies:
    """Finite-horizon stand-ins for the asymptotic events, on a trailing window.

    ``leader_stable``: some fixed agent lies in the argmax set at every step
    of the window.  ``strict_leader_stable``: the argmax is a singleton, the
    same agent, throughout.  ``monopoly_proxy``: strict stability and every
    window jump belongs to that leader (the strict form is implied, keeping
    the proxy hierarchy monotone by construction).  Index fields are
    absolute discrete indices n (0 = never happened).
    """

    window: float
    window_start: int
    leader_stable: bool
    strict_leader_stable: bool
    monopoly_proxy: bool
    last_tie_step: int
    last_lead_change_step: int
    last_loser_jump_step: int


def detect_events(traj: Trajectory, beta: float = 0.5) -> EventProxies:
    """Exact proxy computation on the last ceil(beta * steps) steps."""
    if not (0.0 < beta < 1.0):
        raise PreconditionError("beta must lie in (0, 1)")
    if len(traj.n_end) == 0:
        raise PreconditionError("trajectory is empty")
    A = len(traj.initial_values)
    n_last = traj.n_end[-1]
    steps = traj.steps
    win = math.ceil(beta * steps)
    window_start = n_last - win + 1  # window = {n : n >= window_start}

    if traj.tie_count == 0 and A <= 64:
        return _detect_events_fast(traj, beta, window_start)

    values = list(traj.initial_values)
    in_window_candidates = set(range(A))
    strict_agent: Optional[int] = None
    strict_ok = True
    seen_window = False
    last_tie = 0
    last_change = 0
    last_loser = 0
    prev_argmax: Optional[frozenset] = None
    groups = list(traj.iter_groups())
    for g in range(len(traj.n_end)):
        for a in groups[g]:
            values[a] += 1
        n = int(traj.n_end[g])
        mx = max(values)
        argmax = frozenset(a for a in range(A) if values[a] == mx)
        if len(argmax) > 1:
            last_tie = n
        if prev_argmax is not None and argmax != prev_argmax:
            last_change = n
        prev_argmax = argmax
        jump_set = set(groups[g])
        if jump_set - argmax:
            last_loser = n
        if n >= window_start:
            seen_window = True
            in_window_candidates &= argmax
            if len(argmax) != 1:
                strict_ok = False
            else:
                (leader,) = argmax
                if strict_agent is None:
                    strict_agent = leader
                elif strict_agent != leader:
                    strict_ok = False
    leader_stable = seen_window and bool(in_window_candidates)
    strict_stable = seen_window and strict_ok and strict_agent is not None
    monopoly = strict_stable and all(
        set(groups[g]) == {strict_agent}
        for g in range(len(traj.n_end))
        if traj.n_end[g] >= window_start
    )
    return EventProxies(
        window=beta,
        window_start=window_start,
        leader_stable=leader_stable,
        strict_leader_stable=strict_stable,
        monopoly_proxy=monopoly,
        last_tie_step=last_tie,
        last_lead_change_step=last_change,
        last_loser_jump_step=last_loser,
    )


def _detect_events_fast(traj: Trajectory, beta: float, window_start: int) -> EventProxies:
    """Vectorised detector for tie-free (single-jump) trajectories."""
    A = len(traj.initial_values)
    if isinstance(traj.jumps, np.ndarray):
        jumpers = traj.jumps
    else:
        jumpers = np.fromiter((g[0] for g in traj.jumps), dtype=np.int64, count=len(traj.jumps))
    steps = jumpers.size
    n_end = np.asarray(traj.n_end, dtype=np.int64)
    onehot = np.zeros((steps, A), dtype=np.int64)
    onehot[np.arange(steps), jumpers] = 1
    values = np.cumsum(onehot, axis=0) + np.asarray(traj.initial_values, dtype=np.int64)
    mx = values.max(axis=1)
    is_max = values == mx[:, None]
    n_max = is_max.sum(axis=1)

    ties = np.nonzero(n_max > 1)[0]
    last_tie = int(n_end[ties[-1]]) if ties.size else 0
    changes = np.nonzero((is_max[1:] != is_max[:-1]).any(axis=1))[0]
    last_change = int(n_end[changes[-1] + 1]) if changes.size else 0
    loser = ~is_max[np.arange(steps), jumpers]
    losers = np.nonzero(loser)[0]
    last_loser = int(n_end[losers[-1]]) if losers.size else 0

    w = n_end >= window_start
    leader_stable = bool(is_max[w].all(axis=0).any())
    strict = bool((n_max[w] == 1).all()) and np.unique(values[w].argmax(axis=1)).size == 1
    if strict:
        leader = int(values[w][0].argmax())
        monopoly = bool((jumpers[w] == leader).all())
    else:
        monopoly = False
    return EventProxies(
        window=beta,
        window_start=int(window_start),
        leader_stable=leader_stable,
        strict_leader_stable=strict,
        monopoly_proxy=monopoly,
        last_tie_step=last_tie,
        last_lead_change_step=last_change,
        last_loser_jump_step=last_loser,
    )


# ---------------------------------------------------------------------------
# Explosion race
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RaceResult:
    winner: Optional[Union[int, str]]  # agent index, "tie", or None (undetermined)
    sigma_bounds: tuple[tuple[float, float], ...]
    depth: int


def explosion_race(
    fam: WaitingFamily,
    initial: Sequence[int],
    precision: float = 1e-12,
    seed: Union[int, tuple] = 0,
    depth_budget: int = 64,
    check_convergence: bool = True,
) -> RaceResult:
    """Race the agents' total waiting-time sums to their (finite) limits.

    Requires a family whose total series is proven almost-surely finite and
    which supplies a sure tail bound ``sup_tail``.  Partial sums accumulate
    exactly; the race is decided as soon as the enclosing intervals
    ``[S_a, S_a + tail]`` separate.  A tie is certified when the remaining
    terms are forced equal (deterministic family, equal partial sums, equal
    per-agent indices) or when all intervals fit inside a common interval
    narrower than ``precision``.
    """
    from .series import positive_series_check  # local import to avoid cycle

    if check_convergence:
        rep = positive_series_check(fam, C=1.0)
        if rep.status is not SeriesStatus.PROVEN_CONVERGENT:
            raise PreconditionError(
                f"explosion race needs a proven-convergent total series, got {rep.status.value}"
            )
    if fam.sup_tail is None:
        raise PreconditionError("family supplies no sure tail bound")
    if len(initial) < 2:
        raise PreconditionError("need at least 2 agents")
    rng = make_rng(seed, 0x5ACE)
    A = len(initial)
    sums = [Fraction(0)] * A
    idx = list(initial)
    for _ in range(depth_budget):
        for a in range(A):
            idx[a] += 1
            x = fam.base.sample(idx[a], rng)
            sums[a] = sums[a] + (x.as_fraction() if isinstance(x, Dyadic) else Fraction(x))
        tails = [Fraction(fam.sup_tail(idx[a])) for a in range(A)]
        lows = sums
        highs = [sums[a] + tails[a] for a in range(A)]
        order = sorted(range(A), key=lambda a: highs[a])
        lead = order[0]
        if all(highs[lead] < lows[b] for b in order[1:]):
            return RaceResult(
                winner=lead,
                sigma_bounds=tuple((float(lows[a]), float(highs[a])) for a in range(A)),
                depth=idx[lead] - initial[lead],
            )
        if fam.deterministic and len(set(initial)) == 1 and len(set(sums)) == 1:
            return RaceResult(
                winner="tie",
                sigma_bounds=tuple((float(lows[a]), float(highs[a])) for a in range(A)),
                depth=idx[0] - initial[0],
            )
        lo = min(lows)
        hi = max(highs)
        if hi - lo < Fraction(precision):
            return RaceResult(
                winner="tie",
                sigma_bounds=tuple((float(lows[a]), float(highs[a])) for a in range(A)),
                depth=idx[0] - initial[0],
            )
    return RaceResult(
        winner=None,
        sigma_bounds=tuple(
            (float(sums[a]), float(sums[a] + Fraction(fam.sup_tail(idx[a]))))
            for a in range(A)
        ),
        depth=depth_budget,
    )


# ---------------------------------------------------------------------------
# Export and probes
# ---------------------------------------------------------------------------

def _render_time(t: TimePoint) -> str:
    if isinstance(t, Dyadic):
        return t.render()
    if isinstance(t, (int, np.integer)):
        return str(int(t))
    return repr(float(t))


def trajectory_records(traj: Trajectory):
    """Line-delimited records (n, tau, agents, values...) for export.

    Times render exactly in exact modes (``num/2^exp`` for dyadics).
    """
    values = list(traj.initial_values)
    for g, group in enumerate(traj.iter_groups()):
        for a in group:
            values[a] += 1
        yield {
            "n": int(traj.n_end[g]),
            "tau": _render_time(traj.times[g]),
            "agents": [int(a) for a in group],
            "values": list(values),
        }


def borel_cantelli_probe(
    fam: WaitingFamily,
    initial: tuple[int, int],
    depth: int,
    reps: int,
    seed: int = 0,
) -> np.ndarray:
    """Empirical frequencies of the near-catch-up event along sampled paths.

    For a pair of agents, tallies per k how often the shifted difference of
    partial waiting-time sums lands in [0, X_{k+1}).  A diagnostic only: no
    analytic decision is derived from it.
    """
    if len(initial) != 2:
        raise PreconditionError("probe is defined for a pair of agents")
    v_a, v_b = initial
    counts = np.zeros(depth, dtype=np.int64)
    for r in range(reps):
        rng = make_rng(seed, 0xBC, r)
        s_a = 0.0
        s_b = 0.0
        xs_a = []
        for k in range(1, depth + 2):
            xa = float(fam.base.sample(v_a + k, rng))
            xs_a.append(xa)
        xs_b = [float(fam.base.sample(v_b + k, rng)) for k in range(1, depth + 2)]
        # difference of partial sums aligned at common levels
        for k in range(depth):
            s_a += xs_a[k]
            s_b += xs_b[k]
            gap = s_b - s_a
            if 0.0 <= gap < xs_a[k + 1]:
                counts[k] += 1
    return counts / float(reps)
