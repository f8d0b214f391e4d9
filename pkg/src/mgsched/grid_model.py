"""Domain types for microgrid assets, input ingestion and scenario building.

A system document (JSON or TOML) carries sections system / generators /
storage / wind / pv / loads / limits / scenarios. Ingestion validates
every invariant and reports all violations at once, each with a locus
like ``storage[0].soc_min``. All types are immutable after construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from scipy.stats import norm


class SystemValidationError(ValueError):
    """Raised with the full list of invariant violations found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid system description:\n" + "\n".join(
            f"  - {e}" for e in errors))


class DocumentParseError(ValueError):
    """Raised when the input text is neither valid JSON nor valid TOML."""


@dataclass(frozen=True)
class SynchronousGenerator:
    """Dispatchable synchronous machine providing inertia and ramped reserve."""

    id: str
    p_max: float                 # capacity [MW]
    inertia_const: float         # inertia time constant [s]
    sg_class: str                # "fast" (second-stage) or "slow" (first-stage)
    startup_cost: float          # [GBP per start]
    running_cost_fixed: float    # no-load cost [GBP/h]
    running_cost_marginal: float  # [GBP/MWh]
    pfr_max: float               # reserve ceiling [MW]
    pfr_delivery_time: float     # ramp completion time [s]
    p_min: float = 0.0           # minimum stable output [MW]


@dataclass(frozen=True)
class StorageUnit:
    """Battery storage; power out of the unit is the positive direction."""

    id: str
    charge_max: float            # [MW], strictly negative by sign convention
    discharge_max: float         # [MW], strictly positive
    energy_capacity: float       # [MWh]
    efficiency: float            # round-trip split symmetrically, in (0, 1]
    soc_min: float               # fraction of capacity
    soc_max: float
    soc_initial: float
    virtual_inertia_max: float = 0.0   # [MWs/Hz] ceiling for the inertia role
    virtual_damping_max: float = 0.0   # [MW/Hz] ceiling for the damping role


@dataclass(frozen=True)
class WindUnit:
    """Wind turbine able to program a virtual-inertia response."""

    id: str
    capacity: float                    # [MW]
    forecast_power: tuple[float, ...]  # per hour [MW]
    virtual_inertia_max: tuple[float, ...]  # per hour [MWs/Hz]
    recovery_coefficient: tuple[float, ...]  # per hour; 0 = above-rated mode


@dataclass(frozen=True)
class PVUnit:
    """Non-dispatchable injection with curtailment only."""

    id: str
    capacity: float
    forecast_power: tuple[float, ...]  # per hour [MW]


@dataclass(frozen=True)
class LoadPoint:
    id: str
    demand: tuple[float, ...]           # per hour [MW]
    reactive_demand: tuple[float, ...]  # per hour [MVar]
    non_essential_fraction: float       # bounds the fast-shed pool
    voll: float                         # [GBP/MWh]


@dataclass(frozen=True)
class FrequencyLimits:
    f0: float                  # nominal frequency [Hz]
    nadir_limit: float         # [Hz]
    ss_limit: float            # steady-state deviation limit [Hz]
    rocof_limit: float         # [Hz/s]
    shed_delay: float          # [s]
    load_damping_coeff: float  # fraction of demand per Hz
    event_horizon: float       # [s] window for the storage energy budget


@dataclass(frozen=True)
class Scenario:
    probability: float
    wind: dict[str, tuple[float, ...]]    # unit id -> per-hour realization [MW]
    demand: dict[str, tuple[float, ...]]  # load id -> per-hour realization [MW]


@dataclass(frozen=True)
class ScenarioSet:
    scenarios: tuple[Scenario, ...]

    def __post_init__(self):
        errs = []
        total = sum(s.probability for s in self.scenarios)
        if abs(total - 1.0) > 1e-9:
            errs.append(f"scenario probabilities sum to {total}, expected 1")
        for i, s in enumerate(self.scenarios):
            if not s.probability > 0:
                errs.append(f"scenarios[{i}].probability must be > 0, got {s.probability}")
            for key, series in (("wind", s.wind), ("demand", s.demand)):
                for uid, vals in series.items():
                    if any(v < 0 for v in vals):
                        errs.append(f"scenarios[{i}].{key}[{uid}] has negative values")
        if errs:
            raise SystemValidationError(errs)

    def __len__(self):
        return len(self.scenarios)


@dataclass(frozen=True)
class MicrogridSystem:
    name: str
    horizon: int                       # number of hourly steps
    dt: float                          # [h]
    import_power: tuple[float, ...]    # scheduled maingrid import per hour [MW]
    limits: FrequencyLimits
    generators: tuple[SynchronousGenerator, ...]
    storage: tuple[StorageUnit, ...]
    wind: tuple[WindUnit, ...]
    pv: tuple[PVUnit, ...]
    loads: tuple[LoadPoint, ...]
    scenarios: ScenarioSet | None = None

    def total_demand(self, t: int) -> float:
        return sum(l.demand[t] for l in self.loads)

    def shed_pool(self, t: int) -> float:
        """Largest fast-sheddable power at hour t [MW]."""
        return sum(l.non_essential_fraction * l.demand[t] for l in self.loads)

    def max_delivery_time(self) -> float:
        """Reserve delivery time of the slowest committed-capable machine."""
        if not self.generators:
            return 10.0
        return max(g.pfr_delivery_time for g in self.generators)


# ---------------------------------------------------------------------------
# ingestion


def _per_hour(value, horizon: int, locus: str, errs: list[str]) -> tuple[float, ...]:
    """Accept a scalar (broadcast) or an exact-length per-hour list."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (float(value),) * horizon
    if isinstance(value, (list, tuple)):
        if len(value) != horizon:
            errs.append(f"{locus}: expected {horizon} hourly values, got {len(value)}")
            return tuple(float(v) for v in value) or (0.0,) * horizon
        return tuple(float(v) for v in value)
    errs.append(f"{locus}: expected number or list, got {type(value).__name__}")
    return (0.0,) * horizon


def _require(raw: dict, fields: dict[str, type | tuple], locus: str, errs: list[str]) -> bool:
    ok = True
    for name in fields:
        if name not in raw:
            errs.append(f"{locus}.{name}: missing required field")
            ok = False
    return ok


def _parse_document(text: str) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as je:
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as te:
            raise DocumentParseError(
                f"input is neither JSON (line {je.lineno}: {je.msg}) "
                f"nor TOML ({te})") from te


def load_system(document: str | Path | dict) -> MicrogridSystem:
    """Parse and fully validate a system description.

    `document` may be a mapping, a JSON/TOML text, or a path to one.
    Raises DocumentParseError on malformed text and SystemValidationError
    listing every violated invariant with its locus.
    """
    if isinstance(document, Path):
        document = document.read_text()
    elif isinstance(document, str) and "\n" not in document and (
            document.endswith((".json", ".toml")) and Path(document).exists()):
        document = Path(document).read_text()
    if isinstance(document, str):
        document = _parse_document(document)
    if not isinstance(document, dict):
        raise DocumentParseError(f"expected a mapping, got {type(document).__name__}")

    errs: list[str] = []
    sysec = document.get("system", {})
    horizon = int(sysec.get("horizon", 24))
    if horizon < 1:
        errs.append(f"system.horizon must be >= 1, got {horizon}")
        horizon = 1
    dt = float(sysec.get("dt", 1.0))
    if dt <= 0:
        errs.append(f"system.dt must be > 0, got {dt}")
    name = str(sysec.get("name", "microgrid"))
    import_power = _per_hour(sysec.get("import_power", 0.0), horizon,
                             "system.import_power", errs)
    if any(v < 0 for v in import_power):
        errs.append("system.import_power: values must be >= 0")

    generators = []
    for i, raw in enumerate(document.get("generators", [])):
        locus = f"generators[{i}]"
        if not _require(raw, {"id": str, "p_max": float, "inertia_const": float},
                        locus, errs):
            continue
        g = SynchronousGenerator(
            id=str(raw["id"]),
            p_max=float(raw["p_max"]),
            inertia_const=float(raw["inertia_const"]),
            sg_class=str(raw.get("class", raw.get("sg_class", "fast"))),
            startup_cost=float(raw.get("startup_cost", 0.0)),
            running_cost_fixed=float(raw.get("running_cost_fixed", 0.0)),
            running_cost_marginal=float(raw.get("running_cost_marginal", 0.0)),
            pfr_max=float(raw.get("pfr_max", 0.0)),
            pfr_delivery_time=float(raw.get("pfr_delivery_time", 10.0)),
            p_min=float(raw.get("p_min", 0.0)),
        )
        if not g.p_max > 0:
            errs.append(f"{locus}.p_max must be > 0, got {g.p_max}")
        if g.inertia_const < 0:
            errs.append(f"{locus}.inertia_const must be >= 0, got {g.inertia_const}")
        if g.sg_class not in ("fast", "slow"):
            errs.append(f"{locus}.class must be 'fast' or 'slow', got {g.sg_class!r}")
        if not g.pfr_delivery_time > 0:
            errs.append(f"{locus}.pfr_delivery_time must be > 0, got {g.pfr_delivery_time}")
        if not 0 <= g.p_min <= g.p_max:
            errs.append(f"{locus}.p_min must lie in [0, p_max], got {g.p_min}")
        if g.pfr_max < 0:
            errs.append(f"{locus}.pfr_max must be >= 0, got {g.pfr_max}")
        if min(g.startup_cost, g.running_cost_fixed, g.running_cost_marginal) < 0:
            errs.append(f"{locus}: cost fields must be >= 0")
        generators.append(g)

    storage = []
    for i, raw in enumerate(document.get("storage", [])):
        locus = f"storage[{i}]"
        if not _require(raw, {"id": str, "charge_max": float, "discharge_max": float,
                              "energy_capacity": float}, locus, errs):
            continue
        b = StorageUnit(
            id=str(raw["id"]),
            charge_max=float(raw["charge_max"]),
            discharge_max=float(raw["discharge_max"]),
            energy_capacity=float(raw["energy_capacity"]),
            efficiency=float(raw.get("efficiency", 1.0)),
            soc_min=float(raw.get("soc_min", 0.0)),
            soc_max=float(raw.get("soc_max", 1.0)),
            soc_initial=float(raw.get("soc_initial", raw.get("soc_min", 0.0))),
            virtual_inertia_max=float(raw.get("virtual_inertia_max", 0.0)),
            virtual_damping_max=float(raw.get("virtual_damping_max", 0.0)),
        )
        if not b.charge_max < 0:
            errs.append(f"{locus}.charge_max must be < 0 (power out of the unit "
                        f"is positive), got {b.charge_max}")
        if not b.discharge_max > 0:
            errs.append(f"{locus}.discharge_max must be > 0, got {b.discharge_max}")
        if not b.energy_capacity > 0:
            errs.append(f"{locus}.energy_capacity must be > 0, got {b.energy_capacity}")
        if not 0 < b.efficiency <= 1:
            errs.append(f"{locus}.efficiency must lie in (0, 1], got {b.efficiency}")
        if not b.soc_min < b.soc_max:
            errs.append(f"{locus}: soc_min must be < soc_max, "
                        f"got [{b.soc_min}, {b.soc_max}]")
        if not 0 <= b.soc_min <= 1 or not 0 <= b.soc_max <= 1:
            errs.append(f"{locus}: soc bounds must lie in [0, 1]")
        if not b.soc_min <= b.soc_initial <= b.soc_max:
            errs.append(f"{locus}.soc_initial must lie in "
                        f"[{b.soc_min}, {b.soc_max}], got {b.soc_initial}")
        if b.virtual_inertia_max < 0 or b.virtual_damping_max < 0:
            errs.append(f"{locus}: virtual service ceilings must be >= 0")
        storage.append(b)

    wind = []
    for i, raw in enumerate(document.get("wind", [])):
        locus = f"wind[{i}]"
        if not _require(raw, {"id": str, "capacity": float, "forecast_power": list},
                        locus, errs):
            continue
        w = WindUnit(
            id=str(raw["id"]),
            capacity=float(raw["capacity"]),
            forecast_power=_per_hour(raw["forecast_power"], horizon,
                                     f"{locus}.forecast_power", errs),
            virtual_inertia_max=_per_hour(raw.get("virtual_inertia_max", 0.0),
                                          horizon, f"{locus}.virtual_inertia_max", errs),
            recovery_coefficient=_per_hour(raw.get("recovery_coefficient", 0.0),
                                           horizon, f"{locus}.recovery_coefficient", errs),
        )
        if not w.capacity > 0:
            errs.append(f"{locus}.capacity must be > 0, got {w.capacity}")
        if any(not 0 <= p <= w.capacity for p in w.forecast_power):
            errs.append(f"{locus}.forecast_power must lie in [0, capacity]")
        if any(h < 0 for h in w.virtual_inertia_max):
            errs.append(f"{locus}.virtual_inertia_max must be >= 0")
        if any(g < 0 for g in w.recovery_coefficient):
            errs.append(f"{locus}.recovery_coefficient must be >= 0")
        wind.append(w)

    pv = []
    for i, raw in enumerate(document.get("pv", [])):
        locus = f"pv[{i}]"
        if not _require(raw, {"id": str, "capacity": float, "forecast_power": list},
                        locus, errs):
            continue
        u = PVUnit(
            id=str(raw["id"]),
            capacity=float(raw["capacity"]),
            forecast_power=_per_hour(raw["forecast_power"], horizon,
                                     f"{locus}.forecast_power", errs),
        )
        if not u.capacity > 0:
            errs.append(f"{locus}.capacity must be > 0, got {u.capacity}")
        if any(not 0 <= p <= u.capacity for p in u.forecast_power):
            errs.append(f"{locus}.forecast_power must lie in [0, capacity]")
        pv.append(u)

    loads = []
    for i, raw in enumerate(document.get("loads", [])):
        locus = f"loads[{i}]"
        if not _require(raw, {"id": str, "demand": list}, locus, errs):
            continue
        l = LoadPoint(
            id=str(raw["id"]),
            demand=_per_hour(raw["demand"], horizon, f"{locus}.demand", errs),
            reactive_demand=_per_hour(raw.get("reactive_demand", 0.0), horizon,
                                      f"{locus}.reactive_demand", errs),
            non_essential_fraction=float(raw.get("non_essential_fraction", 0.0)),
            voll=float(raw.get("voll", 0.0)),
        )
        if any(d < 0 for d in l.demand):
            errs.append(f"{locus}.demand must be >= 0")
        if not 0 <= l.non_essential_fraction <= 1:
            errs.append(f"{locus}.non_essential_fraction must lie in [0, 1], "
                        f"got {l.non_essential_fraction}")
        if l.voll < 0:
            errs.append(f"{locus}.voll must be >= 0, got {l.voll}")
        loads.append(l)

    lim_raw = document.get("limits", {})
    limits = FrequencyLimits(
        f0=float(lim_raw.get("f0", 50.0)),
        nadir_limit=float(lim_raw.get("nadir_limit", 0.8)),
        ss_limit=float(lim_raw.get("ss_limit", 0.5)),
        rocof_limit=float(lim_raw.get("rocof_limit", 1.0)),
        shed_delay=float(lim_raw.get("shed_delay", 0.0)),
        load_damping_coeff=float(lim_raw.get("load_damping_coeff", 0.005)),
        event_horizon=float(lim_raw.get("event_horizon", 30.0)),
    )
    if not limits.f0 > 0:
        errs.append(f"limits.f0 must be > 0, got {limits.f0}")
    if not 0 < limits.ss_limit <= limits.nadir_limit:
        errs.append(f"limits: need 0 < ss_limit <= nadir_limit, got "
                    f"ss_limit={limits.ss_limit}, nadir_limit={limits.nadir_limit}")
    if not limits.rocof_limit > 0:
        errs.append(f"limits.rocof_limit must be > 0, got {limits.rocof_limit}")
    if limits.shed_delay < 0:
        errs.append(f"limits.shed_delay must be >= 0, got {limits.shed_delay}")
    min_td = min((g.pfr_delivery_time for g in generators), default=math.inf)
    if generators and not limits.shed_delay < min_td:
        errs.append(f"limits.shed_delay ({limits.shed_delay}) must be smaller than "
                    f"the fastest reserve delivery time ({min_td})")
    if limits.load_damping_coeff < 0:
        errs.append(f"limits.load_damping_coeff must be >= 0, "
                    f"got {limits.load_damping_coeff}")
    max_td = max((g.pfr_delivery_time for g in generators), default=0.0)
    if not limits.event_horizon > max_td:
        errs.append(f"limits.event_horizon ({limits.event_horizon}) must exceed the "
                    f"slowest reserve delivery time ({max_td})")

    for section, items in (("generators", generators), ("storage", storage),
                           ("wind", wind), ("pv", pv), ("loads", loads)):
        seen: set[str] = set()
        for u in items:
            if u.id in seen:
                errs.append(f"{section}: duplicate id {u.id!r}")
            seen.add(u.id)

    scenarios = None
    raw_scen = document.get("scenarios")
    if raw_scen:
        wind_ids = {w.id for w in wind}
        load_ids = {l.id for l in loads}
        parsed = []
        for i, raw in enumerate(raw_scen):
            locus = f"scenarios[{i}]"
            wser, dser = {}, {}
            for uid, vals in raw.get("wind", {}).items():
                if uid not in wind_ids:
                    errs.append(f"{locus}.wind: unknown unit id {uid!r}")
                wser[uid] = _per_hour(vals, horizon, f"{locus}.wind[{uid}]", errs)
            for uid, vals in raw.get("demand", {}).items():
                if uid not in load_ids:
                    errs.append(f"{locus}.demand: unknown load id {uid!r}")
                dser[uid] = _per_hour(vals, horizon, f"{locus}.demand[{uid}]", errs)
            parsed.append(Scenario(probability=float(raw.get("probability", 0.0)),
                                   wind=wser, demand=dser))
        try:
            scenarios = ScenarioSet(tuple(parsed))
        except SystemValidationError as e:
            errs.extend(e.errors)

    if errs:
        raise SystemValidationError(errs)
    return MicrogridSystem(
        name=name, horizon=horizon, dt=dt, import_power=import_power,
        limits=limits, generators=tuple(generators), storage=tuple(storage),
        wind=tuple(wind), pv=tuple(pv), loads=tuple(loads), scenarios=scenarios,
    )


def serialize_system(system: MicrogridSystem) -> str:
    """Canonical JSON form; load_system(serialize_system(s)) == s."""
    doc = {
        "system": {
            "name": system.name,
            "horizon": system.horizon,
            "dt": system.dt,
            "import_power": list(system.import_power),
        },
        "generators": [
            {"id": g.id, "p_max": g.p_max, "inertia_const": g.inertia_const,
             "class": g.sg_class, "startup_cost": g.startup_cost,
             "running_cost_fixed": g.running_cost_fixed,
             "running_cost_marginal": g.running_cost_marginal,
             "pfr_max": g.pfr_max, "pfr_delivery_time": g.pfr_delivery_time,
             "p_min": g.p_min}
            for g in system.generators
        ],
        "storage": [
            {"id": b.id, "charge_max": b.charge_max, "discharge_max": b.discharge_max,
             "energy_capacity": b.energy_capacity, "efficiency": b.efficiency,
             "soc_min": b.soc_min, "soc_max": b.soc_max,
             "soc_initial": b.soc_initial,
             "virtual_inertia_max": b.virtual_inertia_max,
             "virtual_damping_max": b.virtual_damping_max}
            for b in system.storage
        ],
        "wind": [
            {"id": w.id, "capacity": w.capacity,
             "forecast_power": list(w.forecast_power),
             "virtual_inertia_max": list(w.virtual_inertia_max),
             "recovery_coefficient": list(w.recovery_coefficient)}
            for w in system.wind
        ],
        "pv": [
            {"id": u.id, "capacity": u.capacity,
             "forecast_power": list(u.forecast_power)}
            for u in system.pv
        ],
        "loads": [
            {"id": l.id, "demand": list(l.demand),
             "reactive_demand": list(l.reactive_demand),
             "non_essential_fraction": l.non_essential_fraction, "voll": l.voll}
            for l in system.loads
        ],
        "limits": {
            "f0": system.limits.f0,
            "nadir_limit": system.limits.nadir_limit,
            "ss_limit": system.limits.ss_limit,
            "rocof_limit": system.limits.rocof_limit,
            "shed_delay": system.limits.shed_delay,
            "load_damping_coeff": system.limits.load_damping_coeff,
            "event_horizon": system.limits.event_horizon,
        },
    }
    if system.scenarios is not None:
        doc["scenarios"] = [
            {"probability": s.probability,
             "wind": {k: list(v) for k, v in s.wind.items()},
             "demand": {k: list(v) for k, v in s.demand.items()}}
            for s in system.scenarios.scenarios
        ]
    return json.dumps(doc, indent=2, sort_keys=True)


def build_scenarios(system: MicrogridSystem,
                    error_quantiles: list[tuple[float, float]],
                    wind_sigma: float = 0.1,
                    demand_sigma: float = 0.1) -> ScenarioSet:
    """One scenario per (quantile, probability) pair of the forecast error.

    The error is Gaussian with per-asset standard deviation proportional
    to the base forecast (wind_sigma / demand_sigma fractions); each
    realization = base + z_q * sigma, truncated at the physical bounds
    (>= 0, and <= capacity for wind).
    """
    errs = []
    total = sum(p for _, p in error_quantiles)
    if abs(total - 1.0) > 1e-9:
        errs.append(f"quantile probabilities sum to {total}, expected 1")
    for q, p in error_quantiles:
        if not 0 < q < 1:
            errs.append(f"quantile {q} outside (0, 1)")
        if not p > 0:
            errs.append(f"probability {p} must be > 0")
    qs = [q for q, _ in error_quantiles]
    if qs != sorted(qs):
        errs.append(f"quantiles must be monotone non-decreasing, got {qs}")
    if errs:
        raise SystemValidationError(errs)

    scenarios = []
    for q, p in error_quantiles:
        z = float(norm.ppf(q))
        wser = {
            w.id: tuple(
                min(w.capacity, max(0.0, base + z * wind_sigma * base))
                for base in w.forecast_power)
            for w in system.wind
        }
        dser = {
            l.id: tuple(max(0.0, base + z * demand_sigma * base)
                        for base in l.demand)
            for l in system.loads
        }
        scenarios.append(Scenario(probability=p, wind=wser, demand=dser))
    return ScenarioSet(tuple(scenarios))
