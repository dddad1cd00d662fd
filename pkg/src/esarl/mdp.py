"""Monthly dosing decision problem on top of the response model.

Each patient is reviewed every 28 days. The review state combines the latest
hemoglobin observation, its change since the previous review, the doses
administered over the last three months, and the patient's cohort group. The
action chosen at a review is the weekly dose for the following month, so on a
transition s -> s_next the action equals ``s_next.da0``.

The per-transition reward scores the next observation against the 11-12 g/dl
target band: inside the band it peaks at 11.5 g/dl, below the band it rewards
a rise of 1 g/dl per month, above the band a fall of the same size. Each
branch is a squared-sech bell, worth 1.0 at its optimum and exactly 0.05 at
distance ``REWARD_WIDTH`` from it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TARGET_HB_LOW = 11.0
TARGET_HB_HIGH = 12.0
REWARD_BAND_LOW = 10.5
REWARD_BAND_HIGH = 12.5
REWARD_CENTER = 11.5
REWARD_WIDTH = 0.5
# Bell steepness: tanh(W)**2 == 0.95, so each branch scores exactly
# 1 - 0.95 = 0.05 one width away from its optimum.
REWARD_STEEPNESS = math.atanh(math.sqrt(0.95))

HB_FILTER_DEFAULT = 20.0

CSV_HEADER = ["hb", "d_hb", "da0", "da1", "da2", "group", "action", "reward",
              "hb_next", "d_hb_next", "da0_next", "da1_next", "da2_next",
              "group_next", "terminal"]


def reward(hb_current: float, hb_next: float) -> float:
    """Score the month outcome ``hb_next`` given the review level ``hb_current``."""
    if hb_current <= 0 or hb_next <= 0:
        raise ValueError("hemoglobin must be positive")
    if REWARD_BAND_LOW < hb_current < REWARD_BAND_HIGH:
        u = abs(hb_next - REWARD_CENTER) / REWARD_WIDTH
    elif hb_current >= REWARD_BAND_HIGH:
        u = abs(hb_next - hb_current + 1.0) / REWARD_WIDTH
    else:
        u = abs(hb_next - hb_current - 1.0) / REWARD_WIDTH
    return 1.0 - math.tanh(u * REWARD_STEEPNESS) ** 2


@dataclass(frozen=True)
class ActionSet:
    """Ordered weekly doses (ug/kg) the learners may prescribe."""

    doses: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)

    def __post_init__(self):
        if len(self.doses) < 2:
            raise ValueError("need at least two actions")
        if any(d < 0 for d in self.doses):
            raise ValueError("doses must be non-negative")
        if list(self.doses) != sorted(set(self.doses)):
            raise ValueError("doses must be strictly increasing")

    def __len__(self):
        return len(self.doses)

    def index_of(self, dose: float) -> int:
        for i, d in enumerate(self.doses):
            if abs(d - dose) <= 1e-12:
                return i
        raise ValueError(f"dose {dose} is not in the action set")


@dataclass(frozen=True)
class StateVec:
    """Review-time state: hemoglobin, its monthly change, the three most
    recently administered doses (newest first) and the cohort group."""

    hb: float
    d_hb: float
    da0: float
    da1: float
    da2: float
    group: int

    def as_array(self) -> np.ndarray:
        return np.array([self.hb, self.d_hb, self.da0, self.da1, self.da2,
                         float(self.group)], dtype=np.float64)


def states_matrix(states: Sequence[StateVec]) -> np.ndarray:
    out = np.empty((len(states), 6))
    for i, s in enumerate(states):
        out[i] = s.as_array()
    return out


def build_states(hb_series: Sequence[float], dose_series: Sequence[float],
                 group: int) -> list[StateVec]:
    """One state per review; ``hb_series[k]`` and ``dose_series[k]`` are the
    observation at the end of month k and the dose administered during it.
    History entries before the first month are taken as zero."""
    hb = list(hb_series)
    doses = list(dose_series)
    if len(hb) != len(doses):
        raise ValueError("hemoglobin and dose series must have equal length")
    if any(h <= 0 for h in hb):
        raise ValueError("hemoglobin must be positive")
    states = []
    for k in range(len(hb)):
        states.append(StateVec(
            hb=hb[k],
            d_hb=hb[k] - hb[k - 1] if k >= 1 else 0.0,
            da0=doses[k],
            da1=doses[k - 1] if k >= 1 else 0.0,
            da2=doses[k - 2] if k >= 2 else 0.0,
            group=group,
        ))
    return states


@dataclass(frozen=True)
class Transition:
    s: StateVec
    a: int
    r: float
    s_next: StateVec
    terminal: bool


@dataclass
class TransitionDataset:
    """Flat list of transitions plus the action set they index into."""

    transitions: list
    actions: ActionSet
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.transitions)

    def to_arrays(self):
        """(states, action index, reward, next states, terminal) as arrays."""
        m = len(self.transitions)
        x = np.empty((m, 6))
        xn = np.empty((m, 6))
        a = np.empty(m, dtype=np.int64)
        r = np.empty(m)
        term = np.zeros(m, dtype=bool)
        for i, t in enumerate(self.transitions):
            x[i] = t.s.as_array()
            xn[i] = t.s_next.as_array()
            a[i] = t.a
            r[i] = t.r
            term[i] = t.terminal
        return x, a, r, xn, term

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for t in self.transitions:
                s, sn = t.s, t.s_next
                w.writerow([repr(float(s.hb)), repr(float(s.d_hb)),
                            repr(float(s.da0)), repr(float(s.da1)),
                            repr(float(s.da2)), s.group,
                            repr(self.actions.doses[t.a]), repr(float(t.r)),
                            repr(float(sn.hb)), repr(float(sn.d_hb)),
                            repr(float(sn.da0)), repr(float(sn.da1)),
                            repr(float(sn.da2)), sn.group,
                            int(t.terminal)])

    @classmethod
    def from_csv(cls, path, actions: ActionSet) -> "TransitionDataset":
        transitions = []
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            if header != CSV_HEADER:
                raise ValueError("unrecognized transition file header")
            for row in rd:
                vals = [float(v) for v in row]
                s = StateVec(vals[0], vals[1], vals[2], vals[3], vals[4], int(vals[5]))
                sn = StateVec(vals[8], vals[9], vals[10], vals[11], vals[12], int(vals[13]))
                transitions.append(Transition(
                    s=s, a=actions.index_of(vals[6]), r=vals[7], s_next=sn,
                    terminal=bool(int(vals[14]))))
        return cls(transitions=transitions, actions=actions)


def episodes_to_transitions(traces: Iterable[tuple], actions: ActionSet,
                            hb_max: float = HB_FILTER_DEFAULT,
                            metadata: dict | None = None) -> TransitionDataset:
    """Assemble per-patient (states, doses, rewards) trajectories.

    ``doses[k]`` is the dose chosen at review k (administered during the month
    leading to ``states[k + 1]``) and ``rewards[k]`` scores that month. The
    final transition of each trajectory is marked terminal. Transitions whose
    endpoint hemoglobin exceeds ``hb_max`` are dropped and counted, since such
    extremes sit outside the clinically meaningful state space.
    """
    transitions = []
    dropped = 0
    total = 0
    for states, doses, rewards in traces:
        if len(doses) != len(states) - 1 or len(rewards) != len(states) - 1:
            raise ValueError("need one action and one reward per state pair")
        for k in range(len(states) - 1):
            total += 1
            s, sn = states[k], states[k + 1]
            r = rewards[k]
            if not 0.0 <= r <= 1.0:
                raise ValueError("rewards must lie in [0, 1]")
            if abs(sn.d_hb - (sn.hb - s.hb)) > 1e-9:
                raise ValueError("inconsistent hemoglobin change between states")
            if abs(sn.da0 - doses[k]) > 1e-12:
                raise ValueError("next state must record the dose just taken")
            if s.hb > hb_max or sn.hb > hb_max:
                dropped += 1
                continue
            transitions.append(Transition(
                s=s, a=actions.index_of(doses[k]), r=r, s_next=sn,
                terminal=(k == len(states) - 2)))
    meta = dict(metadata or {})
    meta["n_source_transitions"] = total
    meta["n_dropped_hb_filter"] = dropped
    return TransitionDataset(transitions=transitions, actions=actions, metadata=meta)
