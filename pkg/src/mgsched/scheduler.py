"""Two-stage stochastic frequency-secured day-ahead scheduling.

Assembles the full unit-commitment / storage-dispatch / IBR-service
co-optimization into a ModelIR, solves it with the embedded optimizer
and extracts a Schedule. Slow synchronous generators are committed
first-stage (shared across scenarios); fast generators, dispatch,
storage operation and load shedding are per-scenario recourse. IBR
frequency-service parameters (wind virtual inertia, storage virtual
inertia/damping and role flags) are first-stage per hour, matching
day-ahead parameter programming.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

from . import solver
from .freq_constraints import (NadirContext, RobustConfig, build_robust_failure,
                               build_storage_energy_limit,
                               build_storage_power_limit, build_update_limit,
                               delay_margin)
from .grid_model import MicrogridSystem, Scenario, ScenarioSet
from .milp_core import LinExpr, Model, ModelError


@dataclass
class ScheduleOptions:
    virtual_inertia: bool = True
    virtual_damping: bool = True
    delay_aware: bool = True
    robust_k: int = 0
    tau_max: int | None = None
    disturbance_mode: str = "fixed"  # "fixed" | "variable"
    nadir_segments: int = 2
    qc_segments: int = 4
    dp_l1_segments: int = 8  # variable-disturbance discretization
    gap: float = 2e-3  # practical default for desk-scale runs
    time_limit: float | None = None

    @classmethod
    def for_case(cls, case: str, **kw) -> "ScheduleOptions":
        """Feature toggles for the four benchmark cases.

        I: no virtual inertia, no virtual damping; II: inertia only;
        III: damping only; IV: both.
        """
        table = {"I": (False, False), "II": (True, False),
                 "III": (False, True), "IV": (True, True)}
        if case not in table:
            raise ValueError(f"unknown case {case!r}, expected one of I II III IV")
        vi, vd = table[case]
        return cls(virtual_inertia=vi, virtual_damping=vd, **kw)


@dataclass
class EventSpec:
    """Frozen islanding-event data for one (hour, scenario) pair."""

    dp_l0: float
    dp_s: float
    dp_l1: float
    margin: float
    t_d: float
    d0: float
    t_s: float


@dataclass
class Schedule:
    """Extracted solution of one scheduling run."""

    objective: float
    status: str
    gap: float
    horizon: int
    n_scenarios: int
    probabilities: tuple[float, ...]
    # per (t, s, unit id)
    commit: dict = field(default_factory=dict)       # y
    startup: dict = field(default_factory=dict)      # z
    dispatch: dict = field(default_factory=dict)     # p [MW]
    pfr: dict = field(default_factory=dict)          # R_g [MW]
    charge: dict = field(default_factory=dict)       # p_ch [MW, >= 0]
    discharge: dict = field(default_factory=dict)    # p_dch [MW, >= 0]
    soc: dict = field(default_factory=dict)
    wind_power: dict = field(default_factory=dict)
    pv_power: dict = field(default_factory=dict)
    shed_p: dict = field(default_factory=dict)
    shed_q: dict = field(default_factory=dict)
    qc_penalty: dict = field(default_factory=dict)   # modeled (q_c)^2 value
    # per (t, unit id) first-stage services
    wind_h: dict = field(default_factory=dict)
    storage_h: dict = field(default_factory=dict)
    storage_d: dict = field(default_factory=dict)
    role_h: dict = field(default_factory=dict)       # z^H
    role_d: dict = field(default_factory=dict)       # z^D
    tau: tuple[float, ...] = ()
    events: dict = field(default_factory=dict)       # (t, s) -> EventSpec
    cost: dict = field(default_factory=dict)
    partial: bool = False
    # raw solution vector, reusable as a warm start for a relaxation of
    # the same model layout; not serialized
    raw_x: object = field(default=None, repr=False, compare=False)

    def write_csv(self, path) -> None:
        """Long-format dump: t, s, kind, id, field, value."""
        rows = []
        for (t, s, uid), v in sorted(self.commit.items()):
            rows.append((t, s, "generator", uid, "commit", v))
        for name, data in (("startup", self.startup), ("dispatch", self.dispatch),
                           ("pfr", self.pfr)):
            for (t, s, uid), v in sorted(data.items()):
                rows.append((t, s, "generator", uid, name, v))
        for name, data in (("charge", self.charge), ("discharge", self.discharge),
                           ("soc", self.soc)):
            for (t, s, uid), v in sorted(data.items()):
                rows.append((t, s, "storage", uid, name, v))
        for (t, s, uid), v in sorted(self.wind_power.items()):
            rows.append((t, s, "wind", uid, "power", v))
        for (t, s, uid), v in sorted(self.pv_power.items()):
            rows.append((t, s, "pv", uid, "power", v))
        for name, data in (("shed_p", self.shed_p), ("shed_q", self.shed_q)):
            for (t, s, uid), v in sorted(data.items()):
                rows.append((t, s, "load", uid, name, v))
        for name, data in (("wind_h", self.wind_h),):
            for (t, uid), v in sorted(data.items()):
                rows.append((t, -1, "wind", uid, name, v))
        for name, data in (("storage_h", self.storage_h),
                           ("storage_d", self.storage_d),
                           ("role_h", self.role_h), ("role_d", self.role_d)):
            for (t, uid), v in sorted(data.items()):
                rows.append((t, -1, "storage", uid, name, v))
        for t, v in enumerate(self.tau):
            rows.append((t + 1, -1, "system", "tau", "tau", v))
        for (t, s), ev in sorted(self.events.items()):
            for f in ("dp_l0", "dp_s", "dp_l1", "margin", "t_d", "d0", "t_s"):
                rows.append((t, s, "event", "event", f, getattr(ev, f)))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "s", "kind", "id", "field", "value"])
            w.writerow([-1, -1, "meta", "objective", "value", self.objective])
            w.writerow([-1, -1, "meta", "status", "value", self.status])
            w.writerow([-1, -1, "meta", "horizon", "value", self.horizon])
            w.writerow([-1, -1, "meta", "n_scenarios", "value", self.n_scenarios])
            for i, p in enumerate(self.probabilities):
                w.writerow([-1, i, "meta", "probability", "value", p])
            for r in rows:
                w.writerow([*r[:5], f"{r[5]:.10g}"])


def load_schedule_csv(path) -> Schedule:
    """Read a schedule written by Schedule.write_csv (or hand-built)."""
    sched = Schedule(objective=0.0, status="external", gap=math.inf,
                     horizon=0, n_scenarios=0, probabilities=())
    probs: dict[int, float] = {}
    events: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            t, s = int(row["t"]), int(row["s"])
            kind, uid, f = row["kind"], row["id"], row["field"]
            if kind == "meta":
                if uid == "objective":
                    sched.objective = float(row["value"])
                elif uid == "status":
                    sched.status = row["value"]
                elif uid == "horizon":
                    sched.horizon = int(float(row["value"]))
                elif uid == "n_scenarios":
                    sched.n_scenarios = int(float(row["value"]))
                elif uid == "probability":
                    probs[s] = float(row["value"])
                continue
            v = float(row["value"])
            if kind == "event":
                events.setdefault((t, s), {})[f] = v
            elif kind == "generator":
                {"commit": sched.commit, "startup": sched.startup,
                 "dispatch": sched.dispatch, "pfr": sched.pfr}[f][(t, s, uid)] = v
            elif kind == "storage" and s == -1:
                {"storage_h": sched.storage_h, "storage_d": sched.storage_d,
                 "role_h": sched.role_h, "role_d": sched.role_d}[f][(t, uid)] = v
            elif kind == "storage":
                {"charge": sched.charge, "discharge": sched.discharge,
                 "soc": sched.soc}[f][(t, s, uid)] = v
            elif kind == "wind" and s == -1:
                sched.wind_h[(t, uid)] = v
            elif kind == "wind":
                sched.wind_power[(t, s, uid)] = v
            elif kind == "pv":
                sched.pv_power[(t, s, uid)] = v
            elif kind == "load":
                {"shed_p": sched.shed_p, "shed_q": sched.shed_q}[f][(t, s, uid)] = v
            elif kind == "system" and f == "tau":
                sched.tau = (*sched.tau, v)
    sched.probabilities = tuple(probs[i] for i in sorted(probs))
    sched.events = {key: EventSpec(**fields) for key, fields in events.items()}
    if sched.horizon == 0 and sched.dispatch:
        sched.horizon = 1 + max(t for t, _, _ in sched.dispatch)
    if sched.n_scenarios == 0:
        sched.n_scenarios = max(len(sched.probabilities), 1)
    return sched


@dataclass
class VarMap:
    """Model variable ids for extraction, keyed exactly like Schedule."""

    commit: dict = field(default_factory=dict)
    startup: dict = field(default_factory=dict)
    dispatch: dict = field(default_factory=dict)
    pfr: dict = field(default_factory=dict)
    charge: dict = field(default_factory=dict)
    discharge: dict = field(default_factory=dict)
    soc: dict = field(default_factory=dict)
    wind_power: dict = field(default_factory=dict)
    pv_power: dict = field(default_factory=dict)
    shed_p: dict = field(default_factory=dict)
    shed_q: dict = field(default_factory=dict)
    qc_penalty: dict = field(default_factory=dict)
    wind_h: dict = field(default_factory=dict)
    storage_h: dict = field(default_factory=dict)
    storage_d: dict = field(default_factory=dict)
    storage_h_prod: dict = field(default_factory=dict)
    storage_d_prod: dict = field(default_factory=dict)
    role_h: dict = field(default_factory=dict)
    role_d: dict = field(default_factory=dict)
    taus: list = field(default_factory=list)
    events: dict = field(default_factory=dict)
    cost_terms: dict = field(default_factory=dict)  # component -> LinExpr


def _screening_point(system: MicrogridSystem, events: list[EventSpec]):
    """Conservative (low damping, low inertia, early nadir) estimate.

    Damping is the smallest hourly load damping (no IBR contribution),
    inertia the smallest value the RoCoF constraint can admit, and the
    nadir time is evaluated at full reserve delivery (earliest possible),
    floored just above the shedding delay where the margin peaks.
    """
    lim = system.limits
    d_hat = min((ev.d0 for ev in events), default=lim.load_damping_coeff)
    dp_max = max((ev.dp_l0 for ev in events), default=0.0)
    h_hat = max(dp_max / (2.0 * lim.rocof_limit), 1e-6)
    r_hat = max(sum(g.pfr_max for g in system.generators), 1e-6)
    t_d = system.max_delivery_time()
    dp_eff = min((ev.dp_l0 - ev.dp_s * math.exp(d_hat * ev.t_s / (2 * h_hat))
                  for ev in events), default=0.0)
    arg = t_d * d_hat * dp_eff / (2.0 * h_hat * r_hat) + 1.0
    t_n_hat = (2.0 * h_hat / d_hat) * math.log(arg) if arg > 1.0 else 0.0
    t_n_hat = max(t_n_hat, lim.shed_delay * 1.001 + 1e-6)
    return d_hat, h_hat, t_n_hat


def build_uc_model(system: MicrogridSystem,
                   scenarios: ScenarioSet | None = None,
                   options: ScheduleOptions | None = None) -> tuple[Model, VarMap]:
    """Assemble the scheduling model; returns the model and its variable map."""
    options = options or ScheduleOptions()
    if scenarios is None:
        scenarios = system.scenarios
    if scenarios is None:
        # single nominal scenario from the base forecasts
        scenarios = ScenarioSet((Scenario(
            probability=1.0,
            wind={w.id: w.forecast_power for w in system.wind},
            demand={l.id: l.demand for l in system.loads}),))
    if options.disturbance_mode not in ("fixed", "variable"):
        raise ModelError(f"unknown disturbance mode {options.disturbance_mode!r}")

    T = system.horizon
    dt = system.dt
    lim = system.limits
    t_d = system.max_delivery_time()
    S = len(scenarios.scenarios)
    m = Model(system.name)
    vm = VarMap()

    def demand_of(s: Scenario, load, t: int) -> float:
        return s.demand.get(load.id, load.demand)[t]

    def wind_avail(s: Scenario, w, t: int) -> float:
        return s.wind.get(w.id, w.forecast_power)[t]

    # static capability check: the islanding step must be coverable by the
    # RoCoF limit even with full commitment and maximal virtual inertia
    h_cap = sum(g.inertia_const * g.p_max / lim.f0 for g in system.generators)
    if options.virtual_inertia:
        h_cap += sum(b.virtual_inertia_max for b in system.storage)
    for t in range(T):
        dp_l0 = system.import_power[t]
        h_t = h_cap
        if options.virtual_inertia:
            h_t += sum(w.virtual_inertia_max[t] for w in system.wind)
        if dp_l0 > 2.0 * h_t * lim.rocof_limit + 1e-9:
            raise ModelError(
                f"hour {t}: islanding step {dp_l0} MW exceeds the RoCoF "
                f"capability {2.0 * h_t * lim.rocof_limit:.4f} MW even with "
                f"full commitment and maximal virtual inertia")

    # -------------------------------------------------- event parameters
    events: dict[tuple[int, int], EventSpec] = {}
    for t in range(T):
        for si, s in enumerate(scenarios.scenarios):
            dp_l0 = system.import_power[t]
            dem = sum(demand_of(s, l, t) for l in system.loads)
            pool = sum(l.non_essential_fraction * demand_of(s, l, t)
                       for l in system.loads)
            dp_s = min(dp_l0, pool)
            events[(t, si)] = EventSpec(
                dp_l0=dp_l0, dp_s=dp_s, dp_l1=dp_l0 - dp_s, margin=0.0,
                t_d=t_d, d0=lim.load_damping_coeff * dem, t_s=lim.shed_delay)
    if options.delay_aware and lim.shed_delay > 0:
        evs = [ev for ev in events.values() if ev.dp_s > 0]
        if evs:
            d_hat, h_hat, t_n_hat = _screening_point(system, evs)
            for key, ev in events.items():
                if ev.dp_s > 0:
                    ev.margin = delay_margin(d_hat, h_hat, t_n_hat, ev.dp_s,
                                             ev.t_s)
    vm.events = events

    # -------------------------------------------------- first-stage units
    slow = [g for g in system.generators if g.sg_class == "slow"]
    fast = [g for g in system.generators if g.sg_class == "fast"]
    y_slow = {(t, g.id): m.add_variable("binary", name=f"y_{g.id}_t{t}")
              for t in range(T) for g in slow}
    z_slow = {(t, g.id): m.add_variable("continuous", 0.0, 1.0,
                                        name=f"z_{g.id}_t{t}")
              for t in range(T) for g in slow}
    for g in slow:
        for t in range(T):
            prev = {y_slow[(t - 1, g.id)]: 1.0} if t > 0 else {}
            m.add_linear({z_slow[(t, g.id)]: 1.0, y_slow[(t, g.id)]: -1.0, **prev},
                         ">=", 0.0, name=f"su_{g.id}_t{t}")

    # IBR service parameters (first-stage, per hour)
    for t in range(T):
        for w in system.wind:
            cap = w.virtual_inertia_max[t] if options.virtual_inertia else 0.0
            vm.wind_h[(t, w.id)] = m.add_variable(
                "continuous", 0.0, cap, name=f"Hw_{w.id}_t{t}")
        for b in system.storage:
            cap_h = b.virtual_inertia_max if options.virtual_inertia else 0.0
            cap_d = b.virtual_damping_max if options.virtual_damping else 0.0
            hb = m.add_variable("continuous", 0.0, cap_h, name=f"Hb_{b.id}_t{t}")
            db = m.add_variable("continuous", 0.0, cap_d, name=f"Db_{b.id}_t{t}")
            zh = m.add_variable("binary", name=f"zH_{b.id}_t{t}")
            zd = m.add_variable("binary", name=f"zD_{b.id}_t{t}")
            # the product bound uses the physical ceiling even when the
            # service is toggled off (the variable's own ub enforces that),
            # keeping the variable layout identical across case toggles so
            # solutions can warm-start less constrained variants
            hp = m.add_indicator_product(
                hb, zh, max(b.virtual_inertia_max, 1e-9),
                name=f"Hbz_{b.id}_t{t}")
            dp = m.add_indicator_product(
                db, zd, max(b.virtual_damping_max, 1e-9),
                name=f"Dbz_{b.id}_t{t}")
            vm.storage_h[(t, b.id)] = hb
            vm.storage_d[(t, b.id)] = db
            vm.role_h[(t, b.id)] = zh
            vm.role_d[(t, b.id)] = zd
            vm.storage_h_prod[(t, b.id)] = hp
            vm.storage_d_prod[(t, b.id)] = dp

    # -------------------------------------------------- per-scenario stage
    obj = LinExpr()
    startup_cost = LinExpr()
    running_cost = LinExpr()
    voll_cost = LinExpr()
    for g in slow:
        for t in range(T):
            startup_cost = startup_cost + LinExpr.term(
                z_slow[(t, g.id)], g.startup_cost)
    for t in range(T):
        for si, s in enumerate(scenarios.scenarios):
            pi = s.probability
            balance = LinExpr(const=system.import_power[t])
            # synchronous generators
            for g in system.generators:
                if g.sg_class == "slow":
                    y = y_slow[(t, g.id)]
                    z = z_slow[(t, g.id)]
                else:
                    y = m.add_variable("binary", name=f"y_{g.id}_t{t}s{si}")
                    z = m.add_variable("continuous", 0.0, 1.0,
                                       name=f"z_{g.id}_t{t}s{si}")
                    prev = ({vm.commit[(t - 1, si, g.id)]: 1.0} if t > 0 else {})
                    m.add_linear({z: 1.0, y: -1.0, **prev}, ">=", 0.0,
                                 name=f"su_{g.id}_t{t}s{si}")
                    startup_cost = startup_cost + LinExpr.term(
                        z, pi * g.startup_cost)
                p = m.add_variable("continuous", 0.0, g.p_max,
                                   name=f"p_{g.id}_t{t}s{si}")
                r = m.add_variable("continuous", 0.0, g.pfr_max,
                                   name=f"r_{g.id}_t{t}s{si}")
                m.add_linear({p: 1.0, y: -g.p_max}, "<=", 0.0,
                             name=f"pmax_{g.id}_t{t}s{si}")
                if g.p_min > 0:
                    m.add_linear({p: 1.0, y: -g.p_min}, ">=", 0.0,
                                 name=f"pmin_{g.id}_t{t}s{si}")
                # reserve only from committed headroom
                m.add_linear({r: 1.0, p: 1.0, y: -g.p_max}, "<=", 0.0,
                             name=f"rhead_{g.id}_t{t}s{si}")
                m.add_linear({r: 1.0, y: -g.pfr_max}, "<=", 0.0,
                             name=f"rcap_{g.id}_t{t}s{si}")
                vm.commit[(t, si, g.id)] = y
                vm.startup[(t, si, g.id)] = z
                vm.dispatch[(t, si, g.id)] = p
                vm.pfr[(t, si, g.id)] = r
                balance = balance + LinExpr.term(p)
                running_cost = running_cost + LinExpr.term(
                    y, pi * dt * g.running_cost_fixed) + LinExpr.term(
                    p, pi * dt * g.running_cost_marginal)
            # storage
            for b in system.storage:
                pch = m.add_variable("continuous", 0.0, -b.charge_max,
                                     name=f"pch_{b.id}_t{t}s{si}")
                pdch = m.add_variable("continuous", 0.0, b.discharge_max,
                                      name=f"pdch_{b.id}_t{t}s{si}")
                soc = m.add_variable("continuous", b.soc_min, b.soc_max,
                                     name=f"soc_{b.id}_t{t}s{si}")
                ec = b.energy_capacity
                prev_expr = (LinExpr.term(vm.soc[(t - 1, si, b.id)], ec)
                             if t > 0 else LinExpr(const=b.soc_initial * ec))
                rec = (LinExpr.term(soc, ec) + prev_expr * -1.0
                       + LinExpr.term(pdch, dt / b.efficiency)
                       + LinExpr.term(pch, -b.efficiency * dt))
                m.add_linear(rec, "==", 0.0, name=f"socrec_{b.id}_t{t}s{si}")
                if t == T - 1:
                    m.add_linear({soc: 1.0}, "==", b.soc_initial,
                                 name=f"socend_{b.id}_s{si}")
                vm.charge[(t, si, b.id)] = pch
                vm.discharge[(t, si, b.id)] = pdch
                vm.soc[(t, si, b.id)] = soc
                balance = balance + LinExpr.term(pdch) + LinExpr.term(pch, -1.0)
            # wind / pv (curtailable, zero marginal cost)
            for w in system.wind:
                pw = m.add_variable("continuous", 0.0, wind_avail(s, w, t),
                                    name=f"pw_{w.id}_t{t}s{si}")
                vm.wind_power[(t, si, w.id)] = pw
                balance = balance + LinExpr.term(pw)
            for u in system.pv:
                pp = m.add_variable("continuous", 0.0, u.forecast_power[t],
                                    name=f"ppv_{u.id}_t{t}s{si}")
                vm.pv_power[(t, si, u.id)] = pp
                balance = balance + LinExpr.term(pp)
            # load shedding (active + tied reactive with quadratic penalty)
            for l in system.loads:
                dem = demand_of(s, l, t)
                pc = m.add_variable("continuous", 0.0, dem,
                                    name=f"pc_{l.id}_t{t}s{si}")
                vm.shed_p[(t, si, l.id)] = pc
                balance = balance + LinExpr.term(pc)
                voll_cost = voll_cost + LinExpr.term(pc, pi * dt * l.voll)
                ratio = (l.reactive_demand[t] / dem) if dem > 0 else 0.0
                qc = m.add_variable("continuous", 0.0, dem * ratio + 1e-12,
                                    name=f"qc_{l.id}_t{t}s{si}")
                m.add_linear({qc: 1.0, pc: -ratio}, "==", 0.0,
                             name=f"qtie_{l.id}_t{t}s{si}")
                vm.shed_q[(t, si, l.id)] = qc
                qmax = dem * ratio
                if qmax > 1e-12:
                    # convex-combination chord of qc^2: exact at breakpoints,
                    # overestimates inside, needs no binaries under minimization
                    nseg = options.qc_segments
                    bps = [qmax * j / nseg for j in range(nseg + 1)]
                    lams = [m.add_variable("continuous", 0.0, 1.0,
                                           name=f"qcl_{l.id}_t{t}s{si}_{j}")
                            for j in range(nseg + 1)]
                    m.add_linear({lv: 1.0 for lv in lams}, "==", 1.0,
                                 name=f"qcsum_{l.id}_t{t}s{si}")
                    m.add_linear({qc: 1.0, **{lv: -v for lv, v in zip(lams, bps)}},
                                 "==", 0.0, name=f"qcx_{l.id}_t{t}s{si}")
                    qsq = m.add_variable("continuous", 0.0, qmax * qmax,
                                         name=f"qcsq_{l.id}_t{t}s{si}")
                    m.add_linear({qsq: 1.0, **{lv: -v * v for lv, v in zip(lams, bps)}},
                                 "==", 0.0, name=f"qcy_{l.id}_t{t}s{si}")
                    vm.qc_penalty[(t, si, l.id)] = qsq
                    voll_cost = voll_cost + LinExpr.term(qsq, pi * dt * l.voll)
            dem_total = sum(demand_of(s, l, t) for l in system.loads)
            m.add_linear(balance, "==", dem_total, name=f"bal_t{t}s{si}")

            # ------------------------------------------ frequency security
            ev = events[(t, si)]
            if ev.dp_l0 > 0:
                h_firm = LinExpr()
                for g in system.generators:
                    h_firm = h_firm + LinExpr.term(
                        vm.commit[(t, si, g.id)],
                        g.inertia_const * g.p_max / lim.f0)
                r_total = LinExpr()
                for g in system.generators:
                    r_total = r_total + LinExpr.term(vm.pfr[(t, si, g.id)])
                inertia_services = [LinExpr.term(vm.wind_h[(t, w.id)])
                                    for w in system.wind]
                inertia_services += [LinExpr.term(vm.storage_h_prod[(t, b.id)])
                                     for b in system.storage]
                damping_services = [LinExpr.term(vm.storage_d_prod[(t, b.id)])
                                    for b in system.storage]
                # physical ceiling regardless of the case toggle (the
                # service variables are already capped at 0 when off), so
                # the auxiliary layout is identical across cases
                d_b_max = sum(b.virtual_damping_max for b in system.storage)
                service_ub = max(
                    [w.virtual_inertia_max[t] for w in system.wind]
                    + [b.virtual_inertia_max for b in system.storage]
                    + [b.virtual_damping_max for b in system.storage]
                    + [1e-6])
                wind_terms = [(LinExpr.term(vm.wind_h[(t, w.id)]),
                               w.recovery_coefficient[t])
                              for w in system.wind]
                dp_l1_max = max(e.dp_l0 for e in events.values())
                ctx = NadirContext(
                    delta_f_lim=lim.nadir_limit, margin=ev.margin, t_d=ev.t_d,
                    d0=ev.d0, dp_l1=ev.dp_l1, dp_l1_max=dp_l1_max,
                    segments=options.nadir_segments, d_b_max=d_b_max)
                build_robust_failure(
                    m, RobustConfig(k=options.robust_k), ctx, lim,
                    h_firm=h_firm, r=r_total, d_firm=LinExpr(const=ev.d0),
                    inertia_services=inertia_services,
                    damping_services=damping_services, service_ub=service_ub,
                    wind_terms=wind_terms, dp_l0=ev.dp_l0,
                    name=f"fq_t{t}s{si}")
            # storage service headroom (per scenario: operation varies)
            for b in system.storage:
                pb = (LinExpr.term(vm.discharge[(t, si, b.id)])
                      + LinExpr.term(vm.charge[(t, si, b.id)], -1.0))
                build_storage_power_limit(
                    m, b, lim, pb, vm.storage_h_prod[(t, b.id)],
                    vm.storage_d_prod[(t, b.id)], vm.role_h[(t, b.id)],
                    vm.role_d[(t, b.id)], name=f"sp_{b.id}_t{t}s{si}",
                    add_onehot=(si == 0))
                socs = [vm.soc[(t, si, b.id)]]
                if t > 0:
                    socs.append(vm.soc[(t - 1, si, b.id)])
                build_storage_energy_limit(
                    m, b, lim, pb, vm.storage_h_prod[(t, b.id)],
                    vm.storage_d_prod[(t, b.id)], socs, ev.t_d,
                    name=f"se_{b.id}_t{t}s{si}")

    # -------------------------------------------------- update budget
    if options.tau_max is not None and T >= 2:
        series = []
        for w in system.wind:
            bound = max(max(w.virtual_inertia_max), 1e-9)
            series.append(([vm.wind_h[(t, w.id)] for t in range(T)], bound))
        for b in system.storage:
            series.append(([vm.storage_h_prod[(t, b.id)] for t in range(T)],
                           max(b.virtual_inertia_max, 1e-9)))
            series.append(([vm.storage_d_prod[(t, b.id)] for t in range(T)],
                           max(b.virtual_damping_max, 1e-9)))
        blk = build_update_limit(m, options.tau_max, series, name="upd")
        vm.taus = blk["taus"]

    obj = startup_cost + running_cost + voll_cost
    vm.cost_terms = {"startup": startup_cost, "running": running_cost,
                     "voll": voll_cost}
    m.set_objective(dict(obj.coeffs), "min", const=obj.const)
    return m, vm


def solve_schedule(system: MicrogridSystem,
                   scenarios: ScenarioSet | None = None,
                   options: ScheduleOptions | None = None,
                   warm=None, log=None) -> Schedule:
    """Build, solve and extract; raises on infeasibility.

    ``warm`` is an optional solution vector from a model with the same
    variable layout (e.g. a more constrained variant) used as a starting
    incumbent.
    """
    options = options or ScheduleOptions()
    model, vm = build_uc_model(system, scenarios, options)
    res = solver.solve_mip(model, gap_tol=options.gap,
                           time_limit=options.time_limit, warm=warm, log=log)
    if res.x is None:
        raise ModelError(f"scheduling model not solvable: status {res.status}")
    return extract_schedule(system, scenarios, options, vm, res)


def extract_schedule(system, scenarios, options, vm: VarMap,
                     res: solver.SolveResult) -> Schedule:
    if scenarios is None:
        scenarios = system.scenarios
    probs = (tuple(s.probability for s in scenarios.scenarios)
             if scenarios is not None else (1.0,))
    n_s = len(probs)
    x = res.x

    def grab(d):
        return {k: float(x[v]) for k, v in d.items()}

    sched = Schedule(
        objective=float(res.objective), status=res.status, gap=res.gap,
        horizon=system.horizon, n_scenarios=n_s, probabilities=probs,
        commit={k: round(float(x[v])) for k, v in vm.commit.items()},
        startup=grab(vm.startup), dispatch=grab(vm.dispatch), pfr=grab(vm.pfr),
        charge=grab(vm.charge), discharge=grab(vm.discharge), soc=grab(vm.soc),
        wind_power=grab(vm.wind_power), pv_power=grab(vm.pv_power),
        shed_p=grab(vm.shed_p), shed_q=grab(vm.shed_q),
        qc_penalty=grab(vm.qc_penalty),
        wind_h=grab(vm.wind_h), storage_h=grab(vm.storage_h),
        storage_d=grab(vm.storage_d),
        role_h={k: round(float(x[v])) for k, v in vm.role_h.items()},
        role_d={k: round(float(x[v])) for k, v in vm.role_d.items()},
        tau=tuple(float(x[v]) for v in vm.taus),
        events=dict(vm.events),
        cost={name: float(expr.value(x))
              for name, expr in vm.cost_terms.items()},
        partial=(res.status != "optimal"),
        raw_x=x.copy(),
    )
    # invariant checks
    _check_schedule(system, scenarios, sched)
    return sched


def _check_schedule(system, scenarios, sched: Schedule) -> None:
    lim_resid = 1e-6
    for t in range(sched.horizon):
        for si in range(sched.n_scenarios):
            s = scenarios.scenarios[si] if scenarios else None
            supply = system.import_power[t]
            supply += sum(sched.dispatch[(t, si, g.id)] for g in system.generators)
            supply += sum(sched.discharge[(t, si, b.id)]
                          - sched.charge[(t, si, b.id)] for b in system.storage)
            supply += sum(sched.wind_power[(t, si, w.id)] for w in system.wind)
            supply += sum(sched.pv_power[(t, si, u.id)] for u in system.pv)
            supply += sum(sched.shed_p[(t, si, l.id)] for l in system.loads)
            dem = sum((s.demand.get(l.id, l.demand)[t] if s else l.demand[t])
                      for l in system.loads)
            if abs(supply - dem) > lim_resid:
                raise ModelError(
                    f"balance residual {supply - dem:.3e} MW at hour {t}, "
                    f"scenario {si}")
    for b in system.storage:
        for si in range(sched.n_scenarios):
            end = sched.soc[(sched.horizon - 1, si, b.id)]
            if abs(end - b.soc_initial) > 1e-6:
                raise ModelError(
                    f"terminal state of charge {end} differs from initial "
                    f"{b.soc_initial} for {b.id}, scenario {si}")


def cost_breakdown(schedule: Schedule) -> dict[str, float]:
    """Component costs; they sum to the objective exactly."""
    out = dict(schedule.cost)
    out["total"] = sum(schedule.cost.values())
    if abs(out["total"] - schedule.objective) > 1e-8 * max(1.0, abs(schedule.objective)):
        raise ModelError(
            f"cost components sum to {out['total']}, objective is "
            f"{schedule.objective}")
    return out
