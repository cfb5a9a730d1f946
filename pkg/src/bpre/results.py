"""Result records shared by the simulators and the rare-event estimators."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional


class Method(str, enum.Enum):
    NAIVE = "Naive"
    TILT_ONLY = "TiltOnly"
    TWO_PHASE = "TwoPhase"


@dataclass(frozen=True)
class EstimatorResult:
    """One probability estimate with its uncertainty bookkeeping.

    ``ess`` is the effective sample size (sum of weights squared over sum
    of squared weights) of the event-weighted sample; for a naive run it
    equals the raw hit count.  ``estimate`` equal to 0.0 is an exact "no
    event mass seen" outcome, flagged by ``zero_mass``.
    """

    estimate: float
    stderr: float
    ess: float
    method: Method
    n: int
    c: float
    replicas: int
    seed: int
    zero_mass: bool = False
    tilt: Optional[float] = None        # tilt exponent used, if any
    hold_steps: int = 0                 # forced-holding phase length, if any
