"""Frequency security as optimization constraints.

Builders that emit, into a ModelIR:
- the rotated-cone nadir constraint with its piecewise-linearized
  auxiliary square root,
- linear RoCoF and steady-state rows (the latter a degenerate cone when
  wind recovery penalties are active),
- storage power/energy headroom for the virtual inertia/damping services,
- the k-largest reformulation making the constraint set robust against
  k simultaneous parameter-update failures, and
- the daily limit on the number of IBR parameter changes.

All builders accept variable ids or affine expressions and are pure:
they only append to the model they are given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .grid_model import FrequencyLimits, StorageUnit
from .milp_core import LinExpr, Model, ModelError


def _expr(x) -> LinExpr:
    if isinstance(x, LinExpr):
        return x
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return LinExpr.term(x)
    if isinstance(x, float):
        return LinExpr(const=x)
    raise ModelError(f"expected variable id, float or LinExpr, got {type(x).__name__}")


@dataclass(frozen=True)
class NadirContext:
    """Per-hour data for the nadir security constraint.

    delta_f_lim is tightened by the shedding-delay margin; dp_l1 is the
    post-shed disturbance (a constant in fixed-disturbance mode) and
    dp_l1_max the bound used in the wind recovery term of the cone.
    """

    delta_f_lim: float
    margin: float
    t_d: float
    d0: float
    dp_l1: float
    dp_l1_max: float
    segments: int = 8
    d_b_max: float = 0.0  # reachable IBR damping ceiling, narrows the sqrt domain

    def __post_init__(self):
        if not 0 < self.effective_limit <= self.delta_f_lim:
            raise ModelError(
                f"need 0 < delta_f_lim - margin <= delta_f_lim, got limit "
                f"{self.delta_f_lim}, margin {self.margin}")
        if self.t_d <= 0 or self.dp_l1 < 0 or self.dp_l1_max < self.dp_l1:
            raise ModelError(
                f"need t_d > 0 and 0 <= dp_l1 <= dp_l1_max, got t_d={self.t_d}, "
                f"dp_l1={self.dp_l1}, dp_l1_max={self.dp_l1_max}")
        if self.segments < 1:
            raise ModelError(f"segments must be >= 1, got {self.segments}")

    @property
    def effective_limit(self) -> float:
        return self.delta_f_lim - self.margin


@dataclass(frozen=True)
class RobustConfig:
    """Tolerate up to k simultaneous IBR parameter-update failures.

    A failed unit provides no frequency service at all; stale-parameter
    semantics are out of scope.
    """

    k: int
    failure_semantics: str = "zero_service"

    def __post_init__(self):
        if self.k < 0:
            raise ModelError(f"k must be >= 0, got {self.k}")
        if self.failure_semantics != "zero_service":
            raise ModelError(
                f"unsupported failure semantics {self.failure_semantics!r}")


def delay_margin(d_hat: float, h_hat: float, t_n_hat: float,
                 dp_s_max: float, t_s: float) -> float:
    """Largest nadir depression caused by the shedding delay.

    Evaluated at a conservative operating point (low damping d_hat, low
    inertia h_hat, early nadir time t_n_hat); grows with both the shed
    amount and the delay.
    """
    if min(d_hat, h_hat, t_n_hat) <= 0 or dp_s_max < 0 or t_s < 0:
        raise ValueError(
            f"need d_hat, h_hat, t_n_hat > 0 and dp_s_max, t_s >= 0, got "
            f"({d_hat}, {h_hat}, {t_n_hat}, {dp_s_max}, {t_s})")
    if t_n_hat <= t_s:
        raise ValueError(f"t_n_hat ({t_n_hat}) must exceed t_s ({t_s})")
    return abs(dp_s_max / d_hat * (1.0 - math.exp(d_hat * t_s / (2.0 * h_hat)))
               * math.exp(-d_hat * t_n_hat / (2.0 * h_hat)))


def build_nadir_soc(model: Model, ctx: NadirContext, h, r,
                    wind_terms: list[tuple[object, float]], d_b,
                    name: str) -> dict:
    """Nadir security: h*r >= x1**2 + sum_w coeff_w * h_w**2.

    x1 carries the disturbance/damping part through a conservative
    piecewise square root of x1sq >= A - B*d_b (never understated), so
    any point accepted here keeps the true nadir inside the tightened
    limit. Returns the created auxiliary ids.
    """
    if ctx.effective_limit <= 0:
        raise ModelError("effective nadir limit must be positive")
    h, r, d_b = _expr(h), _expr(r), _expr(d_b)
    a_const = (ctx.dp_l1 ** 2 * ctx.t_d / (4.0 * ctx.effective_limit)
               - ctx.dp_l1 * ctx.t_d * ctx.d0 / 4.0)
    b_coef = ctx.dp_l1 * ctx.t_d / 4.0

    x1sq = x1 = block = None
    if a_const <= 1e-12:
        # damping alone covers the disturbance share; no x1 leg needed
        legs = []
    else:
        # the reachable x1sq interval given the damping ceiling; a narrow
        # domain keeps the conservative sqrt interpolation tight
        lo = max(0.0, a_const - b_coef * ctx.d_b_max)
        hi = a_const + 1e-12
        if hi - lo < 1e-9:
            x1 = model.add_variable("continuous", math.sqrt(a_const),
                                    math.sqrt(a_const), name=f"{name}_x1")
        else:
            x1sq = model.add_variable("continuous", lo, hi, name=f"{name}_x1sq")
            width = (hi - lo) / ctx.segments
            # headroom above sqrt(hi) for the conservative node lift
            # (bounded by the chord gap of one segment, sqrt(width)/4)
            x1_ub = math.sqrt(hi) + math.sqrt(width) / 4.0 + 1e-9
            x1 = model.add_variable("continuous", 0.0, x1_ub, name=f"{name}_x1")
            block = model.add_piecewise_sqrt(x1sq, x1, (lo, hi), ctx.segments,
                                             conservative=True, name=f"{name}_pw")
            # x1sq >= A - B * d_b  (and >= lo from its bound)
            lower = LinExpr.term(x1sq) + d_b * b_coef
            model.add_linear(lower, ">=", a_const, name=f"{name}_x1sq_lb")
        legs = [LinExpr.term(x1)]
    for h_w, gamma in wind_terms:
        coef = ctx.dp_l1_max * ctx.t_d * gamma / 4.0
        if coef > 0:
            legs.append(_expr(h_w) * math.sqrt(coef))
    cone = model.add_cone(h, r, legs, name=f"{name}_cone")
    return {"x1sq": x1sq, "x1": x1, "pw_block": block, "cone": cone}


def build_rocof_ss(model: Model, limits: FrequencyLimits, h, r, d_affine,
                   wind_terms: list[tuple[object, float]],
                   dp_l0: float, dp_l1: float, name: str) -> dict:
    """Linear RoCoF row and the steady-state row.

    RoCoF: 2 * h * rocof_limit >= dp_l0. Steady state:
    r + ss_limit * (d_affine - sum_w gamma_w h_w**2) >= dp_l1, which is a
    degenerate rotated cone (second leg constant 1) whenever a wind
    recovery penalty is active, else a plain linear row.
    """
    h, r, d_affine = _expr(h), _expr(r), _expr(d_affine)
    out = {}
    out["rocof"] = model.add_linear(h * (2.0 * limits.rocof_limit), ">=", dp_l0,
                                    name=f"{name}_rocof")
    u = r + d_affine * limits.ss_limit + LinExpr(const=-dp_l1)
    legs = [_expr(h_w) * math.sqrt(limits.ss_limit * gamma)
            for h_w, gamma in wind_terms if gamma > 0]
    if legs:
        out["ss"] = model.add_cone(u, LinExpr(const=1.0), legs,
                                   name=f"{name}_ss")
    else:
        out["ss"] = model.add_linear(u, ">=", 0.0, name=f"{name}_ss")
    return out


def build_storage_power_limit(model: Model, unit: StorageUnit,
                              limits: FrequencyLimits, p_b, h_prod, d_prod,
                              z_h, z_d, name: str,
                              add_onehot: bool = True) -> dict:
    """Discharge headroom for the worst in-event service injection.

    p_b + 2 * h_prod * rocof_limit + d_prod * nadir_limit <= discharge_max,
    where h_prod/d_prod are the role-masked services (products of the
    continuous service level with the role binary, linearized upstream).
    """
    out = {}
    if add_onehot:
        out["onehot"] = model.add_linear({z_h: 1.0, z_d: 1.0}, "==", 1.0,
                                         name=f"{name}_role")
    expr = (_expr(p_b) + _expr(h_prod) * (2.0 * limits.rocof_limit)
            + _expr(d_prod) * limits.nadir_limit)
    out["power"] = model.add_linear(expr, "<=", unit.discharge_max,
                                    name=f"{name}_pow")
    return out


def build_storage_energy_limit(model: Model, unit: StorageUnit,
                               limits: FrequencyLimits, p_b, h_prod, d_prod,
                               soc_exprs: list, t_d: float, name: str) -> list:
    """Event energy budget against the stored charge.

    Bounds the piecewise-linear overestimate of the in-event energy
    (baseline output over the whole window, damping response along the
    limit trajectory, inertia response over the delivery ramp) by the
    usable stored energy at each supplied state of charge (conservative
    when both interval endpoints are given). Left side is MW*s; the
    stored side SoC * E_c * eta is MWh, hence the 3600 s/h factor.
    """
    t0 = limits.event_horizon
    if t0 <= t_d:
        raise ModelError(f"event horizon {t0} must exceed delivery time {t_d}")
    damp_secs = limits.nadir_limit * t_d + limits.ss_limit * (t0 - t_d)
    used = (_expr(p_b) * t0 + _expr(d_prod) * damp_secs
            + _expr(h_prod) * (limits.rocof_limit * t_d))
    ids = []
    for i, soc in enumerate(soc_exprs):
        stored = _expr(soc) * (unit.energy_capacity * unit.efficiency * 3600.0)
        ids.append(model.add_linear(used + stored * -1.0, "<=", 0.0,
                                    name=f"{name}_en{i}"))
    return ids


def build_k_largest(model: Model, values: list, count: int,
                    name: str, value_ub: float) -> tuple[int, list]:
    """Variable upper-bounding the sum of the `count` largest values.

    Every feasible point satisfies sum_var >= sum of the count largest
    of `values`; under minimization pressure on sum_var the bound is
    tight. `value_ub` bounds each individual value.
    """
    if count < 0:
        raise ModelError(f"count must be >= 0, got {count}")
    if count > len(values):
        raise ModelError(f"count {count} exceeds {len(values)} values")
    sum_var = model.add_variable("continuous", 0.0, count * value_ub + 1e-9,
                                 name=f"{name}_sum")
    ids = []
    if count == 0:
        ids.append(model.add_linear({sum_var: 1.0}, ">=", 0.0,
                                    name=f"{name}_zero"))
        return sum_var, ids
    e = model.add_variable("continuous", 0.0, value_ub, name=f"{name}_e")
    vs = [model.add_variable("continuous", 0.0, value_ub, name=f"{name}_v{i}")
          for i in range(len(values))]
    expr = LinExpr.term(sum_var) + LinExpr.term(e) * -float(count)
    for v in vs:
        expr = expr + LinExpr.term(v) * -1.0
    ids.append(model.add_linear(expr, ">=", 0.0, name=f"{name}_bound"))
    for i, (v, val) in enumerate(zip(vs, values)):
        row = LinExpr.term(e) + LinExpr.term(v) + _expr(val) * -1.0
        ids.append(model.add_linear(row, ">=", 0.0, name=f"{name}_ev{i}"))
    return sum_var, ids


def build_robust_failure(model: Model, robust: RobustConfig, ctx: NadirContext,
                         limits: FrequencyLimits, *, h_firm, r, d_firm,
                         inertia_services: list, damping_services: list,
                         service_ub: float,
                         wind_terms: list[tuple[object, float]],
                         dp_l0: float, name: str) -> list[dict]:
    """Frequency security under any combination of k service failures.

    For each split g in {0..k} (g inertia-service failures, k-g
    damping-service failures) the worst case removes the largest
    contributions, captured by the k-largest reformulation; one
    nadir/RoCoF/steady-state group is emitted per split, 3*(k+1) groups
    total, exactly covering the exhaustive failure enumeration. The wind
    recovery penalty stays in force even for failed units (conservative).
    """
    n_services = len(inertia_services) + len(damping_services)
    if robust.k > n_services:
        raise ModelError(f"k={robust.k} exceeds the {n_services} failable services")
    h_firm, r, d_firm = _expr(h_firm), _expr(r), _expr(d_firm)
    h_services = LinExpr()
    for s in inertia_services:
        h_services = h_services + _expr(s)
    d_services = LinExpr()
    for s in damping_services:
        d_services = d_services + _expr(s)

    groups = []
    for g in range(robust.k + 1):
        g_h = min(g, len(inertia_services))
        g_d = min(robust.k - g, len(damping_services))
        tag = f"{name}_f{g}"
        h_lost = LinExpr()
        if g_h > 0:
            sum_h, _ = build_k_largest(model, inertia_services, g_h,
                                       f"{tag}_kh", service_ub)
            h_lost = LinExpr.term(sum_h)
        d_lost = LinExpr()
        if g_d > 0:
            sum_d, _ = build_k_largest(model, damping_services, g_d,
                                       f"{tag}_kd", service_ub)
            d_lost = LinExpr.term(sum_d)
        h_eff = h_firm + h_services + h_lost * -1.0
        d_b_eff = d_services + d_lost * -1.0
        group = {
            "nadir": build_nadir_soc(model, ctx, h_eff, r, wind_terms,
                                     d_b_eff, name=f"{tag}_nad"),
            "rocof_ss": build_rocof_ss(model, limits, h_eff, r,
                                       d_firm + d_b_eff, wind_terms,
                                       dp_l0, ctx.dp_l1, name=tag),
        }
        groups.append(group)
    return groups


def build_update_limit(model: Model, tau_max: int,
                       parameter_series: list[tuple[list[int], float]],
                       name: str) -> dict:
    """Cap the number of hours in which any IBR control parameter changes.

    parameter_series: (per-hour variable ids, bound on |value|) per
    parameter. One change binary per hour-transition; a parameter may
    move between hours t-1 and t only when that hour's binary is set.
    """
    if tau_max < 0:
        raise ModelError(f"tau_max must be >= 0, got {tau_max}")
    horizon = max((len(series) for series, _ in parameter_series), default=0)
    if horizon < 2:
        raise ModelError("need a horizon of at least 2 hours")
    taus = [model.add_variable("binary", name=f"{name}_tau{t}")
            for t in range(1, horizon)]
    ids = []
    for j, (series, bound) in enumerate(parameter_series):
        if len(series) != horizon:
            raise ModelError(
                f"parameter series {j} has {len(series)} hours, expected {horizon}")
        for t in range(1, horizon):
            ids.append(model.add_linear(
                {series[t]: 1.0, series[t - 1]: -1.0, taus[t - 1]: -bound},
                "<=", 0.0, name=f"{name}_p{j}t{t}_up"))
            ids.append(model.add_linear(
                {series[t]: -1.0, series[t - 1]: 1.0, taus[t - 1]: -bound},
                "<=", 0.0, name=f"{name}_p{j}t{t}_dn"))
    budget = model.add_linear({tau: 1.0 for tau in taus}, "<=", float(tau_max),
                              name=f"{name}_budget")
    return {"taus": taus, "rows": ids, "budget": budget}
