"""Delay-compartment model of erythropoiesis under weekly darbepoetin boluses.

Two cell pools are tracked per patient: marrow progenitors P and circulating
red cells R. Total erythropoietin (endogenous level ``ep`` plus exogenous drug
concentration) stimulates inflow through a saturating response
``H(E) = E / (e_50 + E)``, and each pool loses cells as lifespan-delayed
copies of past inflow:

    P'(t) = cp * H(E(t)) * P(t)
            - (cp / t_p) * sum_{j=1..t_p} H(E(t - j)) * P(t - j)

    R'(t) = cr * H(E(t - t_p - t_m)) * P(t - t_p - t_m)
            - cr * sum_{j=1..t_r} w_j * H(E(t - t_p - t_m - j)) * P(t - t_p - t_m - j)

Progenitors mature for ``t_p`` days, transit a pure-delay compartment for
``t_m`` days, then live as red cells around ``t_r`` days; the senescence
weights ``w_j`` form a normalized Gaussian over red-cell age centred on
``t_r``. Hemoglobin is proportional to the red-cell pool: ``Hb = mch * R``.

Exogenous drug concentration decays exponentially with a 25 hour half-life
between boluses. The drug distributes over a volume proportional to body
weight (``v_d`` ml per kg), so a bolus of D micrograms raises the
concentration instantly by ``D / (v_d * 1e-3 * weight_kg)`` ug/l; for a
weight-normalized dose d ug/kg that is ``d * 1000 / v_d`` regardless of
weight. The decay is applied in closed form (never integrated numerically),
so stored day-start concentrations reconstruct the concentration exactly at
any lagged fractional time.

Integration runs on a fixed daily grid, matching the whole-day delays, with a
classical fourth-order one-step scheme split into ``n_substeps`` equal
sub-steps per day. Lagged P values between grid points are interpolated
linearly from the stored daily series. Because the delayed terms depend only
on stored history, the per-day right-hand side is affine in the current P and
independent of the current R, which the stepper exploits: stage coefficients
are evaluated once per distinct stage time and reused.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

MCH_MALE = 2.7
MCH_FEMALE = 2.4

DAYS_PER_WEEK = 7
DAYS_PER_MONTH = 28
BOLUS_DAYS = (0, 7, 14, 21)


@dataclass(frozen=True)
class ModelConstants:
    """Structural constants of the response model.

    ``v_d`` is the specific distribution volume of the drug in ml per kg of
    body weight; a patient's absolute volume is ``v_d * 1e-3 * weight_kg``
    liters. ``senescence_variance`` is the variance (not the standard
    deviation) of the red-cell lifespan distribution around ``t_r``.
    """

    t_p: int = 9
    t_m: int = 4
    t_r: int = 70
    v_d: float = 52.4
    senescence_variance: float = 30.0
    n_substeps: int = 4

    def __post_init__(self):
        if self.t_p < 1 or self.t_m < 0 or self.t_r < 1:
            raise ValueError("lifespans must be positive whole days")
        if self.v_d <= 0:
            raise ValueError("distribution volume must be positive")
        if self.senescence_variance <= 0:
            raise ValueError("senescence variance must be positive")
        if self.n_substeps < 1:
            raise ValueError("need at least one sub-step per day")

    @property
    def e_50(self) -> float:
        """Half-saturation EPO concentration (ug/l), tied to ``v_d``."""
        return 100.0 / self.v_d

    @property
    def elimination_rate(self) -> float:
        """Exogenous drug elimination rate per day (25 h half-life)."""
        return (24.0 / 25.0) * math.log(2.0)

    @property
    def history_days(self) -> int:
        """Longest lag entering the dynamics, in days."""
        return self.t_p + self.t_m + self.t_r

    def exo_decay_factor(self, dt: float) -> float:
        """Exact decay multiplier for the exogenous concentration over ``dt`` days."""
        return math.exp(-self.elimination_rate * dt)

    def bolus_concentration(self, micrograms: float, weight_kg: float) -> float:
        """Concentration jump (ug/l) from a bolus of ``micrograms`` in a patient."""
        return micrograms / (self.v_d * 1e-3 * weight_kg)

    def senescence_weights(self) -> np.ndarray:
        """Normalized Gaussian weights over red-cell ages 1..t_r (sum to 1)."""
        ages = np.arange(1, self.t_r + 1, dtype=np.float64)
        g = np.exp(-((ages - self.t_r) ** 2) / (2.0 * self.senescence_variance))
        return g / g.sum()


DEFAULT_CONSTANTS = ModelConstants()


@dataclass(frozen=True)
class PatientParams:
    """Individual response parameters.

    ep : endogenous EPO concentration (ug/l)
    cp : progenitor proliferation gain (1/day)
    cr : red-cell production gain (1/day)
    mch : hemoglobin per unit red-cell pool (g/dl)
    weight_kg : body weight, converts per-kg doses to bolus micrograms
    """

    ep: float
    cp: float
    cr: float
    mch: float = MCH_MALE
    weight_kg: float = 67.97

    def __post_init__(self):
        if self.ep < 0:
            raise ValueError("endogenous EPO must be non-negative")
        if self.cp <= 0 or self.cr <= 0:
            raise ValueError("gain parameters must be positive")
        if self.mch <= 0 or self.weight_kg <= 0:
            raise ValueError("mch and weight must be positive")


def hill(e_tot, e_50: float = DEFAULT_CONSTANTS.e_50):
    """Saturating EPO response E / (e_50 + E); accepts scalars or arrays."""
    if e_50 <= 0:
        raise ValueError("e_50 must be positive")
    e = np.asarray(e_tot, dtype=np.float64)
    if np.any(e < 0):
        raise ValueError("EPO concentration must be non-negative")
    out = e / (e_50 + e)
    return float(out) if np.isscalar(e_tot) else out


@dataclass(frozen=True)
class SimState:
    """Snapshot of one patient's dynamic state on a day boundary.

    ``p_hist`` and ``e_hist`` hold the last ``history_days + 1`` daily values
    of P and of the day-start exogenous drug concentration, oldest first; the
    final entry belongs to the current day. ``pending_boluses`` are
    (absolute day, micrograms) pairs applied at the start of their day.
    """

    day: int
    p_hist: np.ndarray
    e_hist: np.ndarray
    r_now: float
    pending_boluses: tuple = ()

    def __post_init__(self):
        if self.p_hist.ndim != 1 or self.e_hist.ndim != 1:
            raise ValueError("history buffers must be one-dimensional")
        if self.p_hist.size != self.e_hist.size:
            raise ValueError("P and drug histories must cover the same days")

    @property
    def e_exo(self) -> float:
        return float(self.e_hist[-1])

    def hb(self, params: PatientParams) -> float:
        return params.mch * self.r_now


def make_initial_state(consts: ModelConstants = DEFAULT_CONSTANTS) -> SimState:
    """Standard initial condition: P and R at 1 with no drug on board."""
    n = consts.history_days + 1
    return SimState(
        day=0,
        p_hist=np.ones(n, dtype=np.float64),
        e_hist=np.zeros(n, dtype=np.float64),
        r_now=1.0,
    )


def administer_bolus(state: SimState, dose_per_kg: float, weight_kg: float,
                     consts: ModelConstants = DEFAULT_CONSTANTS) -> SimState:
    """Apply a bolus of ``dose_per_kg * weight_kg`` micrograms right now."""
    if dose_per_kg < 0 or weight_kg <= 0:
        raise ValueError("dose must be non-negative and weight positive")
    e_hist = state.e_hist.copy()
    e_hist[-1] += consts.bolus_concentration(dose_per_kg * weight_kg, weight_kg)
    return replace(state, e_hist=e_hist)


def _advance_day(p_win: np.ndarray, e_win: np.ndarray, r: np.ndarray,
                 ep: np.ndarray, cp: np.ndarray, cr: np.ndarray,
                 consts: ModelConstants, weights: np.ndarray):
    """Integrate one day for a batch of patients.

    ``p_win`` and ``e_win`` are (n, history_days + 1) windows whose last
    column is the current day (drug column already includes today's boluses).
    Returns (P, R, pre-bolus drug concentration) at the next day boundary.
    """
    lag = consts.history_days
    e50 = consts.e_50
    k = consts.elimination_rate
    nsub = consts.n_substeps
    h = 1.0 / nsub

    # Lag index j (0-based) corresponds to a delay of j+1 days.
    lag_p0 = p_win[:, lag - 1::-1]
    lag_p1 = p_win[:, lag:0:-1]
    lag_e = e_win[:, lag - 1::-1]
    e_now = e_win[:, lag]

    split = consts.t_p + consts.t_m
    n_times = 2 * nsub + 1
    a_coef = np.empty((n_times, r.size))
    b_coef = np.empty_like(a_coef)
    c_coef = np.empty_like(a_coef)
    for i in range(n_times):
        s = i / (2.0 * nsub)
        decay = math.exp(-k * s)
        e_lag = ep[:, None] + lag_e * decay
        h_lag = e_lag / (e50 + e_lag)
        p_lag = (1.0 - s) * lag_p0 + s * lag_p1
        flux = h_lag * p_lag
        e_cur = ep + e_now * decay
        a_coef[i] = cp * (e_cur / (e50 + e_cur))
        b_coef[i] = -(cp / consts.t_p) * flux[:, :consts.t_p].sum(axis=1)
        c_coef[i] = cr * (flux[:, split - 1] - flux[:, split:] @ weights)

    p = p_win[:, lag].copy()
    r_new = r.copy()
    for m in range(nsub):
        a0, b0 = a_coef[2 * m], b_coef[2 * m]
        a1, b1 = a_coef[2 * m + 1], b_coef[2 * m + 1]
        a2, b2 = a_coef[2 * m + 2], b_coef[2 * m + 2]
        k1 = a0 * p + b0
        k2 = a1 * (p + 0.5 * h * k1) + b1
        k3 = a1 * (p + 0.5 * h * k2) + b1
        k4 = a2 * (p + h * k3) + b2
        p += (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        r_new += (h / 6.0) * (c_coef[2 * m] + 4.0 * c_coef[2 * m + 1] + c_coef[2 * m + 2])

    np.maximum(p, 0.0, out=p)
    np.maximum(r_new, 0.0, out=r_new)
    return p, r_new, e_now * consts.exo_decay_factor(1.0)


class CohortSim:
    """Lock-step simulator for a batch of patients on a shared daily clock.

    All patients advance together, so the per-day lag bookkeeping is shared.
    History buffers grow as needed; `clone` snapshots the full state so a
    common warm-up can branch into several treatment arms.
    """

    def __init__(self, patients: Sequence[PatientParams],
                 consts: ModelConstants = DEFAULT_CONSTANTS,
                 history: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None):
        self.consts = consts
        self.n = len(patients)
        if self.n == 0:
            raise ValueError("need at least one patient")
        self.ep = np.array([p.ep for p in patients], dtype=np.float64)
        self.cp = np.array([p.cp for p in patients], dtype=np.float64)
        self.cr = np.array([p.cr for p in patients], dtype=np.float64)
        self.mch = np.array([p.mch for p in patients], dtype=np.float64)
        self.weight = np.array([p.weight_kg for p in patients], dtype=np.float64)
        self._weights = consts.senescence_weights()

        lag = consts.history_days
        self._cap = lag + 1 + 64
        self._p = np.empty((self.n, self._cap))
        self._e = np.empty((self.n, self._cap))
        if history is None:
            self._p[:, :lag + 1] = 1.0
            self._e[:, :lag + 1] = 0.0
            self._r = np.ones(self.n)
        else:
            p_hist, e_hist, r = history
            if p_hist.shape != (self.n, lag + 1) or e_hist.shape != (self.n, lag + 1):
                raise ValueError("history must cover history_days + 1 days per patient")
            self._p[:, :lag + 1] = p_hist
            self._e[:, :lag + 1] = e_hist
            self._r = np.array(r, dtype=np.float64).copy()
        self.day = 0
        self._r_daily = [self._r.copy()]

    def _ensure(self, extra_days: int):
        need = self.consts.history_days + 1 + self.day + extra_days
        if need <= self._cap:
            return
        new_cap = max(need, 2 * self._cap)
        for name in ("_p", "_e"):
            buf = np.empty((self.n, new_cap))
            buf[:, :self._cap] = getattr(self, name)
            setattr(self, name, buf)
        self._cap = new_cap

    def add_bolus(self, micrograms: np.ndarray):
        """Inject the given per-patient bolus amounts at the current day start."""
        col = self.consts.history_days + self.day
        amounts = np.asarray(micrograms, dtype=np.float64)
        self._e[:, col] += amounts / (self.consts.v_d * 1e-3 * self.weight)

    def advance_day(self):
        self._ensure(1)
        col = self.consts.history_days + self.day
        lo = col - self.consts.history_days
        p, r, e_pre = _advance_day(
            self._p[:, lo:col + 1], self._e[:, lo:col + 1], self._r,
            self.ep, self.cp, self.cr, self.consts, self._weights)
        self._p[:, col + 1] = p
        self._e[:, col + 1] = e_pre
        self._r = r
        self.day += 1
        self._r_daily.append(r.copy())

    def run_month(self, weekly_dose_per_kg: np.ndarray) -> np.ndarray:
        """Advance 28 days with weekly boluses; returns month-end hemoglobin."""
        dose = np.asarray(weekly_dose_per_kg, dtype=np.float64)
        if dose.shape != (self.n,):
            raise ValueError("need one weekly dose per patient")
        if np.any(dose < 0):
            raise ValueError("doses must be non-negative")
        for d in range(DAYS_PER_MONTH):
            if d % DAYS_PER_WEEK == 0:
                self.add_bolus(dose * self.weight)
            self.advance_day()
        return self.hb()

    def run_months(self, dose_matrix: np.ndarray) -> np.ndarray:
        """Run one column of monthly doses after another; returns (n, months) Hb."""
        dose_matrix = np.asarray(dose_matrix, dtype=np.float64)
        if dose_matrix.ndim != 2 or dose_matrix.shape[0] != self.n:
            raise ValueError("dose matrix must be (patients, months)")
        months = dose_matrix.shape[1]
        out = np.empty((self.n, months))
        for m in range(months):
            out[:, m] = self.run_month(dose_matrix[:, m])
        return out

    def hb(self) -> np.ndarray:
        return self.mch * self._r

    def state_of(self, i: int) -> SimState:
        """Single-patient snapshot at the current day boundary."""
        lag = self.consts.history_days
        col = lag + self.day
        return SimState(
            day=self.day,
            p_hist=self._p[i, col - lag:col + 1].copy(),
            e_hist=self._e[i, col - lag:col + 1].copy(),
            r_now=float(self._r[i]),
        )

    def daily_series(self, i: int):
        """Daily (P, R, e_exo) arrays for patient ``i`` from day 0 to now."""
        lag = self.consts.history_days
        p = self._p[i, lag:lag + self.day + 1].copy()
        e = self._e[i, lag:lag + self.day + 1].copy()
        r = np.array([row[i] for row in self._r_daily])
        return p, r, e

    def clone(self) -> "CohortSim":
        dup = object.__new__(CohortSim)
        dup.consts = self.consts
        dup.n = self.n
        for name in ("ep", "cp", "cr", "mch", "weight", "_weights"):
            setattr(dup, name, getattr(self, name))
        dup._cap = self._cap
        dup._p = self._p.copy()
        dup._e = self._e.copy()
        dup._r = self._r.copy()
        dup.day = self.day
        dup._r_daily = [row.copy() for row in self._r_daily]
        return dup


def step_day(state: SimState, params: PatientParams,
             consts: ModelConstants = DEFAULT_CONSTANTS) -> SimState:
    """Advance one patient from day t to day t + 1.

    Boluses pending for the current day are applied at its start, before
    integration; later ones stay queued.
    """
    lag = consts.history_days
    if state.p_hist.size != lag + 1:
        raise ValueError("history does not match the model's lag structure")
    due = sum(ug for (d, ug) in state.pending_boluses if d == state.day)
    still_pending = tuple((d, ug) for (d, ug) in state.pending_boluses if d != state.day)

    e_win = state.e_hist.copy().reshape(1, -1)
    e_win[0, -1] += consts.bolus_concentration(due, params.weight_kg)
    p_win = state.p_hist.reshape(1, -1)
    p, r, e_pre = _advance_day(
        p_win, e_win, np.array([state.r_now]),
        np.array([params.ep]), np.array([params.cp]), np.array([params.cr]),
        consts, consts.senescence_weights())

    p_hist = np.empty(lag + 1)
    p_hist[:-1] = state.p_hist[1:]
    p_hist[-1] = p[0]
    e_hist = np.empty(lag + 1)
    e_hist[:-2] = state.e_hist[1:-1]
    e_hist[-2] = e_win[0, -1]
    e_hist[-1] = e_pre[0]
    return SimState(day=state.day + 1, p_hist=p_hist, e_hist=e_hist,
                    r_now=float(r[0]), pending_boluses=still_pending)


@dataclass
class HbTrace:
    """Monthly hemoglobin observations; ``monthly_hb[k]`` is taken at the end
    of month k, i.e. on day 28 * (k + 1). Daily series are optional."""

    monthly_hb: np.ndarray
    daily_hb: np.ndarray | None = None
    daily_p: np.ndarray | None = None
    daily_e_exo: np.ndarray | None = None
    params: PatientParams | None = None


def simulate_months(params: PatientParams, dose_schedule: Sequence[float],
                    months: int | None = None, init: SimState | None = None,
                    consts: ModelConstants = DEFAULT_CONSTANTS,
                    record_daily: bool = False) -> HbTrace:
    """Simulate whole months of weekly dosing for a single patient.

    ``dose_schedule`` holds one weekly dose (ug/kg) per month. ``init`` lets a
    run continue from a previous snapshot instead of the standard start.
    """
    doses = np.asarray(dose_schedule, dtype=np.float64)
    if months is None:
        months = doses.size
    if doses.size != months:
        raise ValueError("need exactly one monthly dose per simulated month")
    history = None
    if init is not None:
        history = (init.p_hist.reshape(1, -1), init.e_hist.reshape(1, -1),
                   np.array([init.r_now]))
    sim = CohortSim([params], consts=consts, history=history)
    monthly = sim.run_months(doses.reshape(1, -1))[0]
    trace = HbTrace(monthly_hb=monthly, params=params)
    if record_daily:
        p, r, e = sim.daily_series(0)
        trace.daily_p = p
        trace.daily_hb = params.mch * r
        trace.daily_e_exo = e
    return trace


def write_dense_trace_csv(path, params: PatientParams, trace: HbTrace):
    """Write the daily series of a `simulate_months(record_daily=True)` run."""
    if trace.daily_hb is None:
        raise ValueError("trace has no daily series; simulate with record_daily=True")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "P", "R", "E_exo", "E_tot", "Hb"])
        r_series = trace.daily_hb / params.mch
        for d in range(trace.daily_hb.size):
            e_exo = float(trace.daily_e_exo[d])
            w.writerow([d, repr(float(trace.daily_p[d])), repr(float(r_series[d])),
                        repr(e_exo), repr(params.ep + e_exo),
                        repr(float(trace.daily_hb[d]))])
