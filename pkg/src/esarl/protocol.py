"""Label-style darbepoetin titration, reviewed every four weeks.

The rules, checked in priority order at each monthly review:

1. While treatment is interrupted, resume at 75% of the pre-interruption
   dose once hemoglobin starts falling; otherwise stay at zero.
2. If hemoglobin exceeds 12 g/dl and is still rising although the previous
   review already reduced the dose for the same reason, interrupt treatment
   and remember the suspended dose. (A previous review with hemoglobin above
   12 g/dl always reduced, so "reduced last time" is read off the stored
   previous observation.)
3. If hemoglobin exceeds 12 g/dl, reduce the dose by 25%.
4. If hemoglobin rose by more than 2 g/dl over the month, reduce by 25%.
   Coinciding with rule 3 this still means a single 25% reduction.
5. If hemoglobin rose by less than 1 g/dl, sits below the 11 g/dl target
   floor, and no increase happened within the last review interval,
   increase the dose by 25%.

Otherwise the dose is held. Rise-based rules need a previous observation and
stay silent on the very first review.
"""

from __future__ import annotations

from dataclasses import dataclass

INITIAL_DOSE = 0.45
REDUCE_ABOVE_HB = 12.0
INCREASE_BELOW_HB = 11.0
FAST_RISE = 2.0
SLOW_RISE = 1.0
REDUCTION_FACTOR = 0.75
INCREASE_FACTOR = 1.25


@dataclass(frozen=True)
class ProtocolState:
    dose: float
    months_since_increase: int = 1
    interrupted: bool = False
    dose_before_interrupt: float = 0.0
    hb_prev: float | None = None


def protocol_init(initial_dose: float = INITIAL_DOSE,
                  hb_prev: float | None = None) -> ProtocolState:
    """Fresh titration state; pass ``hb_prev`` when an earlier observation
    exists (e.g. the last warm-up month) so rise-based rules apply at once."""
    if initial_dose < 0:
        raise ValueError("initial dose must be non-negative")
    return ProtocolState(dose=initial_dose, hb_prev=hb_prev)


def protocol_step(state: ProtocolState, hb_now: float,
                  dose_cap: float | None = None):
    """One review: returns (next state, dose for the coming month)."""
    if hb_now <= 0:
        raise ValueError("hemoglobin must be positive")
    months = state.months_since_increase + 1
    dose = state.dose
    interrupted = state.interrupted
    before = state.dose_before_interrupt
    prev = state.hb_prev

    if interrupted:
        if prev is not None and hb_now < prev:
            dose = REDUCTION_FACTOR * before
            interrupted = False
            before = 0.0
        else:
            dose = 0.0
    elif (prev is not None and hb_now > REDUCE_ABOVE_HB
          and prev > REDUCE_ABOVE_HB and hb_now > prev):
        before = dose
        dose = 0.0
        interrupted = True
    elif hb_now > REDUCE_ABOVE_HB:
        dose *= REDUCTION_FACTOR
    elif prev is not None and hb_now - prev > FAST_RISE:
        dose *= REDUCTION_FACTOR
    elif (prev is not None and hb_now - prev < SLOW_RISE
          and hb_now < INCREASE_BELOW_HB and months >= 1):
        dose *= INCREASE_FACTOR
        months = 0

    if dose_cap is not None:
        dose = min(dose, dose_cap)
    new_state = ProtocolState(dose=dose, months_since_increase=months,
                              interrupted=interrupted,
                              dose_before_interrupt=before, hb_prev=hb_now)
    return new_state, dose
