"""Competing growth processes: simulation, classification, verification.

Subpackages by role:

* :mod:`cgp.numerics` -- exact dyadic arithmetic, compensated summation,
  rigorous series/product evaluation with caller-supplied bounds.
* :mod:`cgp.families` -- waiting-time and feedback distribution families,
  the exponential embedding, and the family-spec DSL.
* :mod:`cgp.series` -- exponential-difference closed forms, three-series
  checkers, the atom criterion and its brute-force convolution oracle, the
  fluctuation probe.
* :mod:`cgp.engine` -- event-driven embedded simulation with exact tie
  groups, the discrete urn chain, exact prefix probabilities, event-proxy
  detectors, the explosion race.
* :mod:`cgp.classify` -- almost-sure verdicts for leadership, strict
  leadership and monopoly.
* :mod:`cgp.harness` -- Monte Carlo experiments, statistics, exact
  counterexample bounds, phase sweeps; :mod:`cgp.cli` the command line.
"""

from .numerics import (
    ConvergenceReport,
    Dyadic,
    SeriesStatus,
    compensated_sum,
    infinite_product,
    series_eval,
)
from .families import (
    FeedbackFamily,
    IndexedLaw,
    WaitingFamily,
    counter_families,
    embed_feedback,
    parse_family,
)
from .classify import Event, Outcome, Verdict

__version__ = "0.1.0"

__all__ = [
    "ConvergenceReport",
    "Dyadic",
    "SeriesStatus",
    "compensated_sum",
    "infinite_product",
    "series_eval",
    "FeedbackFamily",
    "IndexedLaw",
    "WaitingFamily",
    "counter_families",
    "embed_feedback",
    "parse_family",
    "Event",
    "Outcome",
    "Verdict",
    "__version__",
]
