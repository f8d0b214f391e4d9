"""Post-islanding frequency dynamics of a single-bus equivalent microgrid.

Closed-form trajectory, nadir/RoCoF/steady-state metrics, and an
independent fixed-step RK4 integrator used as a numerical oracle.

Model: 2H * df'(t) = -D * df(t) + dR(t) - dP_L(t), df(0) = 0, where the
disturbance steps down from dp_l0 to dp_l1 = dp_l0 - dp_s once the
delayed load shedding acts at t = t_s, and the governor response ramps
linearly from 0 to r over [0, t_d], staying at r afterwards.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter


class InvalidEventParams(ValueError):
    """Raised when event parameters violate their physical invariants."""


@dataclass(frozen=True)
class FrequencyParams:
    """Everything that determines one islanding event.

    h: total inertia [MWs/Hz], d: total damping [MW/Hz], r: total ramped
    reserve [MW], t_d: reserve delivery time [s], t_s: shedding delay [s],
    dp_l0: generation loss at t=0 [MW], dp_s: shed amount at t=t_s [MW].
    """

    h: float
    d: float
    r: float
    t_d: float
    t_s: float
    dp_l0: float
    dp_s: float

    def __post_init__(self):
        errs = []
        if not self.h > 0:
            errs.append(f"h must be > 0, got {self.h}")
        if not self.d > 0:
            errs.append(f"d must be > 0, got {self.d}")
        if self.r < 0:
            errs.append(f"r must be >= 0, got {self.r}")
        if not 0 <= self.dp_s <= self.dp_l0:
            errs.append(f"dp_s must lie in [0, dp_l0], got {self.dp_s}")
        if not 0 <= self.t_s < self.t_d:
            errs.append(f"need 0 <= t_s < t_d, got t_s={self.t_s}, t_d={self.t_d}")
        if errs:
            raise InvalidEventParams("; ".join(errs))

    @property
    def dp_l1(self) -> float:
        return self.dp_l0 - self.dp_s


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    df: float
    dfdot: float


def _df_core(p: FrequencyParams, t, dp_l):
    """Trajectory branch for a constant disturbance dp_l and ramping reserve."""
    a = dp_l / p.d + 2.0 * p.h * p.r / (p.t_d * p.d**2)
    return a * (np.exp(-p.d / (2.0 * p.h) * t) - 1.0) + p.r * t / (p.t_d * p.d)


def _df_shed(p: FrequencyParams, t):
    """Contribution of the shedding delay, zero when t_s = 0."""
    return (
        p.dp_s
        / p.d
        * (1.0 - math.exp(p.d * p.t_s / (2.0 * p.h)))
        * np.exp(-p.d / (2.0 * p.h) * t)
    )


def frequency_at(p: FrequencyParams, t: float) -> float:
    """Closed-form frequency deviation at time t in [0, horizon].

    Beyond t_d the reserve is held constant at r and the remaining
    first-order decay towards the steady state is used.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if t <= p.t_s:
        return float(_df_core(p, t, p.dp_l0))
    if t <= p.t_d:
        return float(_df_core(p, t, p.dp_l1) + _df_shed(p, t))
    df_td = _df_core(p, p.t_d, p.dp_l1) + _df_shed(p, p.t_d)
    df_ss = steady_state_deviation(p)
    decay = math.exp(-p.d / (2.0 * p.h) * (t - p.t_d))
    return float(df_ss + (df_td - df_ss) * decay)


def derivative_at(p: FrequencyParams, t: float) -> float:
    """d(df)/dt from the closed forms; one-sided from the right at steps."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if t < p.t_s:
        dp_l, shed = p.dp_l0, 0.0
    elif t <= p.t_d:
        dp_l = p.dp_l1
        shed = -p.d / (2.0 * p.h) * _df_shed(p, t)
    else:
        df = frequency_at(p, t)
        return float((-p.d * df + p.r - p.dp_l1) / (2.0 * p.h))
    a = dp_l / p.d + 2.0 * p.h * p.r / (p.t_d * p.d**2)
    core = -p.d / (2.0 * p.h) * a * math.exp(-p.d / (2.0 * p.h) * t) + p.r / (
        p.t_d * p.d
    )
    return float(core + shed)


def max_rocof(p: FrequencyParams) -> float:
    """Largest instantaneous rate of change of frequency, at t = 0+."""
    return -p.dp_l0 / (2.0 * p.h)


def steady_state_deviation(p: FrequencyParams) -> float:
    """Frequency deviation as t -> infinity."""
    return (p.r - p.dp_l1) / p.d


def nadir_time(p: FrequencyParams) -> float:
    """Time of the interior frequency minimum after the shed acts.

    With r = 0 there is no interior stationary point (the deviation
    declines monotonically towards steady state); t_d is returned as the
    time of the minimum over the delivery window.
    """
    dp_eff = p.dp_l0 - p.dp_s * math.exp(p.d * p.t_s / (2.0 * p.h))
    if p.r == 0.0:
        return p.t_d
    arg = p.t_d * p.d * dp_eff / (2.0 * p.h * p.r) + 1.0
    if arg <= 0.0:
        raise InvalidEventParams(
            f"no real nadir time: log argument {arg} <= 0 (over-shed event)"
        )
    return 2.0 * p.h / p.d * math.log(arg)


def frequency_nadir(p: FrequencyParams) -> tuple[float, float]:
    """Frequency deviation at the nadir and the delay-induced part of it.

    Returns (df_nadir, df_shed_component); the second term is <= 0 and
    vanishes when t_s = 0.
    """
    t_n = nadir_time(p)
    shed = float(_df_shed(p, t_n))
    core = float(_df_core(p, t_n, p.dp_l1))
    return core + shed, shed


class SwingTrajectory:
    """Dense RK4 trajectory with per-sample derivative."""

    def __init__(self, t: np.ndarray, df: np.ndarray, dfdot: np.ndarray):
        self.t = t
        self.df = df
        self.dfdot = dfdot

    @property
    def min_df(self) -> float:
        return float(self.df.min())

    @property
    def max_abs_rocof(self) -> float:
        return float(np.abs(self.dfdot).max())

    @property
    def terminal_df(self) -> float:
        return float(self.df[-1])

    def __len__(self):
        return len(self.t)

    def __iter__(self):
        for ti, fi, di in zip(self.t, self.df, self.dfdot):
            yield TrajectorySample(float(ti), float(fi), float(di))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "delta_f_hz", "delta_fdot_hz_per_s"])
            for s in self:
                w.writerow([f"{s.t:.6f}", f"{s.df:.9f}", f"{s.dfdot:.9f}"])


def _rk4_affine(y0, a, forcing, dt):
    """RK4 recursion for y' = a*y + g(t), exploiting linearity of the RHS.

    forcing holds g evaluated at (t_n, t_n + dt/2, t_n + dt) for each step,
    shape (n, 3). Algebraically identical to stepwise RK4 but runs as a
    single linear recurrence.
    """
    z = a * dt
    alpha = 1.0 + z + z**2 / 2.0 + z**3 / 6.0 + z**4 / 24.0
    c1 = 1.0 + z + z**2 / 2.0 + z**3 / 4.0
    c2 = 4.0 + 2.0 * z + z**2 / 2.0
    beta = dt / 6.0 * (c1 * forcing[:, 0] + c2 * forcing[:, 1] + forcing[:, 2])
    if len(beta) == 0:
        return np.array([y0])
    out = lfilter([1.0], [1.0, -alpha], beta) + (alpha ** np.arange(1, len(beta) + 1)) * y0
    return np.concatenate(([y0], out))


def simulate_swing_ode(
    p: FrequencyParams, dt: float = 1e-4, horizon: float | None = None
) -> SwingTrajectory:
    """Integrate the swing equation with fixed-step RK4.

    Steps are aligned with the discontinuities at t_s and t_d so the
    forcing is smooth within every integrated segment.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if horizon is None:
        horizon = p.t_d
    if horizon < p.t_s:
        raise ValueError(f"horizon {horizon} shorter than shed delay {p.t_s}")

    a = -p.d / (2.0 * p.h)
    inv2h = 1.0 / (2.0 * p.h)

    def forcing_fn(t):
        ramp = np.where(t <= p.t_d, p.r * t / p.t_d, p.r)
        dp = np.where(t <= p.t_s, p.dp_l0, p.dp_l1)
        return (ramp - dp) * inv2h

    bounds = [0.0]
    for b in (p.t_s, p.t_d, horizon):
        if bounds[-1] < b <= horizon:
            bounds.append(b)
    if bounds[-1] < horizon:
        bounds.append(horizon)

    ts = [np.array([0.0])]
    dfs = [np.array([0.0])]
    y = 0.0
    for lo, hi in zip(bounds, bounds[1:]):
        n = max(1, int(math.ceil((hi - lo) / dt - 1e-12)))
        h_step = (hi - lo) / n
        t0 = lo + h_step * np.arange(n)
        # forcing sampled from within the open segment: nudge the left edge
        # so the pre-step value of a stepwise disturbance is not used
        eps = 1e-12 * max(1.0, hi)
        fvals = np.stack(
            [
                forcing_fn(np.maximum(t0, lo + eps)),
                forcing_fn(t0 + h_step / 2.0),
                forcing_fn(np.minimum(t0 + h_step, hi)),
            ],
            axis=1,
        )
        seg = _rk4_affine(y, a, fvals, h_step)
        y = float(seg[-1])
        ts.append(t0[1:] if len(t0) > 1 else np.empty(0))
        dfs.append(seg[1:-1])
        ts.append(np.array([hi]))
        dfs.append(seg[-1:])

    t = np.concatenate(ts)
    df = np.concatenate(dfs)
    # one-sided (right) derivative at the disturbance steps
    t_eval = np.minimum(np.maximum(t, 1e-15), horizon)
    dfdot = a * df + forcing_fn(np.where(t_eval == p.t_s, t_eval + 1e-12, t_eval))
    return SwingTrajectory(t, df, dfdot)


def aggregate_inertia(system, commitment: dict[str, bool],
                      wind_h: dict[str, float],
                      storage_h: dict[str, float],
                      storage_role_flags: dict[str, tuple[int, int]]) -> float:
    """Total system inertia [MWs/Hz] for one operating point.

    Committed synchronous machines contribute their inertia constant
    scaled by capacity over nominal frequency; wind units contribute
    their programmed virtual inertia; storage contributes only when its
    role flag selects the inertia service (z_h + z_d = 1 per unit).
    """
    for bid, (zh, zd) in storage_role_flags.items():
        if zh + zd != 1 or zh not in (0, 1) or zd not in (0, 1):
            raise ValueError(
                f"storage {bid}: role flags must be one-hot, got z_h={zh}, z_d={zd}")
    f0 = system.limits.f0
    h = sum(g.inertia_const * g.p_max / f0
            for g in system.generators if commitment.get(g.id, False))
    h += sum(wind_h.values())
    h += sum(hv for bid, hv in storage_h.items()
             if storage_role_flags.get(bid, (0, 0))[0] == 1)
    return float(h)


def aggregate_damping(system, demand: float,
                      storage_d: dict[str, float],
                      storage_role_flags: dict[str, tuple[int, int]],
                      wind_h: dict[str, float],
                      gamma: dict[str, float]) -> float:
    """Total system damping [MW/Hz] for one operating point.

    Load damping plus storage virtual damping (damping-role units only),
    reduced by the wind rotor-recovery penalty gamma_w * H_w**2. A
    non-positive result is returned as-is; it fails the FrequencyParams
    invariant downstream, which is the intended flag.
    """
    for bid, (zh, zd) in storage_role_flags.items():
        if zh + zd != 1 or zh not in (0, 1) or zd not in (0, 1):
            raise ValueError(
                f"storage {bid}: role flags must be one-hot, got z_h={zh}, z_d={zd}")
    d = system.limits.load_damping_coeff * demand
    d += sum(dv for bid, dv in storage_d.items()
             if storage_role_flags.get(bid, (0, 0))[1] == 1)
    d -= sum(gamma.get(wid, 0.0) * hv * hv for wid, hv in wind_h.items())
    return float(d)


def random_event_params(
    rng: np.random.Generator, require_interior_nadir: bool = True
) -> FrequencyParams:
    """Draw physically plausible event parameters for randomized checks.

    When require_interior_nadir is set, draws are rejected until the
    stationary point lands strictly inside (t_s, t_d).
    """
    for _ in range(10_000):
        h = rng.uniform(0.5, 6.0)
        d = rng.uniform(0.05, 2.0)
        r = rng.uniform(0.2, 4.0)
        t_d = rng.uniform(5.0, 15.0)
        t_s = rng.uniform(0.0, 1.0)
        dp_l0 = rng.uniform(0.3, 3.0)
        dp_s = rng.uniform(0.0, 0.6) * dp_l0
        p = FrequencyParams(h=h, d=d, r=r, t_d=t_d, t_s=t_s, dp_l0=dp_l0, dp_s=dp_s)
        if not require_interior_nadir:
            return p
        try:
            t_n = nadir_time(p)
        except InvalidEventParams:
            continue
        if t_s + 0.05 < t_n < t_d - 0.05:
            return p
    raise RuntimeError("could not draw valid event parameters")
