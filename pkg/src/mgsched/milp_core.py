"""Solver-independent optimization model representation.

Holds continuous/binary variables, sparse linear constraints, rotated
second-order cones (u*v >= sum w_i^2 with affine u, v, w), piecewise
blocks and a linear objective. Cones stay first-class; export expands
them into quadratic rows (MPS) or rejects them (LP format).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field


class ModelError(ValueError):
    pass


class LinExpr:
    """Sparse affine expression: sum coef*var + const."""

    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs=None, const: float = 0.0):
        self.coeffs: dict[int, float] = dict(coeffs) if coeffs else {}
        self.const = float(const)

    @classmethod
    def term(cls, var: int, coef: float = 1.0) -> "LinExpr":
        return cls({var: coef})

    def copy(self) -> "LinExpr":
        return LinExpr(self.coeffs, self.const)

    def add(self, var: int, coef: float) -> "LinExpr":
        self.coeffs[var] = self.coeffs.get(var, 0.0) + coef
        return self

    def __add__(self, other):
        out = self.copy()
        if isinstance(other, LinExpr):
            for v, c in other.coeffs.items():
                out.add(v, c)
            out.const += other.const
        else:
            out.const += float(other)
        return out

    def __mul__(self, scalar: float):
        return LinExpr({v: c * scalar for v, c in self.coeffs.items()}, self.const * scalar)

    __rmul__ = __mul__

    def value(self, x) -> float:
        return self.const + sum(c * x[v] for v, c in self.coeffs.items())

    def is_single_var(self) -> bool:
        return self.const == 0.0 and len(self.coeffs) == 1 and next(iter(self.coeffs.values())) == 1.0


@dataclass
class Variable:
    id: int
    kind: str  # "continuous" | "binary"
    lb: float
    ub: float
    name: str


@dataclass
class LinearConstraint:
    id: int
    coeffs: dict[int, float]
    sense: str  # "<=", ">=", "=="
    rhs: float
    name: str


@dataclass
class RotatedCone:
    """u*v >= sum(w_i^2), u >= 0, v >= 0, all affine."""

    id: int
    u: LinExpr
    v: LinExpr
    ws: list[LinExpr]
    name: str

    def violation(self, x) -> float:
        wsq = sum(w.value(x) ** 2 for w in self.ws)
        return wsq - self.u.value(x) * self.v.value(x)


@dataclass
class PiecewiseBlock:
    id: int
    x_var: int
    y_var: int
    breakpoints: list[float]
    node_values: list[float]
    lambda_vars: list[int]
    segment_binaries: list[int]
    max_error: float
    name: str


@dataclass
class Objective:
    coeffs: dict[int, float] = field(default_factory=dict)
    sense: str = "min"
    const: float = 0.0


class Model:
    """Single-writer model; hand `snapshot()` (self, immutable by convention)
    to the solver once construction is done."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: list[Variable] = []
        self.linear: list[LinearConstraint] = []
        self.cones: list[RotatedCone] = []
        self.piecewise: list[PiecewiseBlock] = []
        self.objective = Objective()
        self._names: set[str] = set()

    # -- construction ---------------------------------------------------

    def _check_name(self, name: str) -> str:
        if not name:
            raise ModelError("a non-empty name is required")
        if name in self._names:
            raise ModelError(f"duplicate name {name!r}")
        self._names.add(name)
        return name

    def add_variable(self, kind: str = "continuous", lb: float = 0.0,
                     ub: float = math.inf, name: str = "") -> int:
        if kind not in ("continuous", "binary"):
            raise ModelError(f"unknown variable kind {kind!r}")
        if kind == "binary":
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if lb > ub:
            raise ModelError(f"bounds lo={lb} > hi={ub} for {name!r}")
        vid = len(self.variables)
        self.variables.append(Variable(vid, kind, float(lb), float(ub),
                                       self._check_name(name or f"x{vid}")))
        return vid

    def add_linear(self, coeffs, sense: str, rhs: float, name: str = "") -> int:
        if sense not in ("<=", ">=", "=="):
            raise ModelError(f"unknown sense {sense!r}")
        if isinstance(coeffs, LinExpr):
            rhs = rhs - coeffs.const
            coeffs = coeffs.coeffs
        for v in coeffs:
            if not 0 <= v < len(self.variables):
                raise ModelError(f"constraint references unknown variable id {v}")
        cid = len(self.linear)
        self.linear.append(LinearConstraint(
            cid, {v: float(c) for v, c in coeffs.items() if c != 0.0},
            sense, float(rhs), self._check_name(name or f"c{cid}")))
        return cid

    def add_cone(self, u: LinExpr, v: LinExpr, ws: list[LinExpr], name: str = "") -> int:
        for expr in (u, v, *ws):
            for vid in expr.coeffs:
                if not 0 <= vid < len(self.variables):
                    raise ModelError(f"cone references unknown variable id {vid}")
        cid = len(self.cones)
        name = self._check_name(name or f"cone{cid}")
        self.cones.append(RotatedCone(cid, u.copy(), v.copy(), [w.copy() for w in ws], name))
        # nonnegativity of the cone legs keeps the SOC form valid
        self.add_linear(u, ">=", 0.0, name=f"{name}_upos")
        self.add_linear(v, ">=", 0.0, name=f"{name}_vpos")
        return cid

    def add_indicator_product(self, cont_var: int, bin_var: int, bound: float,
                              name: str = "") -> int:
        """Variable equal to cont*bin, exact at binary points; needs 0 <= cont <= bound."""
        if bound <= 0:
            raise ModelError(f"indicator product bound must be > 0, got {bound}")
        if self.variables[bin_var].kind != "binary":
            raise ModelError(f"{self.variables[bin_var].name!r} is not binary")
        name = name or f"prod_{self.variables[cont_var].name}_{self.variables[bin_var].name}"
        w = self.add_variable("continuous", 0.0, bound, name=name)
        self.add_linear({w: 1.0, bin_var: -bound}, "<=", 0.0, name=f"{name}_ub_bin")
        self.add_linear({w: 1.0, cont_var: -1.0}, "<=", 0.0, name=f"{name}_ub_cont")
        self.add_linear({w: 1.0, cont_var: -1.0, bin_var: -bound}, ">=", -bound,
                        name=f"{name}_lb")
        return w

    def add_piecewise_sqrt(self, x_var: int, y_var: int, domain: tuple[float, float],
                           segments: int, conservative: bool = False,
                           name: str = "") -> int:
        """Tie y to sqrt(x) by a piecewise-linear equality over `domain`.

        Default orientation interpolates through (u_i, sqrt(u_i)), so y
        understates sqrt(x) strictly inside segments and is exact at
        breakpoints. With `conservative=True` the node values are lifted
        so the interpolant never falls below sqrt(x) (y**2 never
        understates x), the safe direction when y feeds a cone term that
        must not be underestimated.
        """
        lo, hi = domain
        if not (0 <= lo < hi):
            raise ModelError(f"need 0 <= lo < hi, got domain {domain}")
        if segments < 1:
            raise ModelError("segments must be >= 1")
        bps = [lo + (hi - lo) * i / segments for i in range(segments + 1)]
        vals = [math.sqrt(u) for u in bps]

        gaps = []
        for a, b, fa, fb in zip(bps, bps[1:], vals, vals[1:]):
            # max of sqrt(u) - chord(u) on [a, b]; stationary where the
            # chord slope matches d/du sqrt(u)
            su = (fa + fb) / 2.0
            slope = (fb - fa) / (b - a)
            gaps.append(su - (fa + slope * (su * su - a)))
        max_gap = max(gaps)
        if conservative:
            lifts = [max(gaps[max(0, i - 1)], gaps[min(len(gaps) - 1, i)])
                     for i in range(len(bps))]
            vals = [v + e for v, e in zip(vals, lifts)]

        bid = len(self.piecewise)
        name = self._check_name(name or f"pw{bid}")
        lams = [self.add_variable("continuous", 0.0, 1.0, name=f"{name}_l{i}")
                for i in range(len(bps))]
        self.add_linear({l: 1.0 for l in lams}, "==", 1.0, name=f"{name}_sum")
        self.add_linear({x_var: 1.0, **{l: -u for l, u in zip(lams, bps)}},
                        "==", 0.0, name=f"{name}_x")
        self.add_linear({y_var: 1.0, **{l: -g for l, g in zip(lams, vals)}},
                        "==", 0.0, name=f"{name}_y")
        deltas: list[int] = []
        if segments > 1:
            deltas = [self.add_variable("binary", name=f"{name}_s{i}")
                      for i in range(segments)]
            self.add_linear({d: 1.0 for d in deltas}, "==", 1.0, name=f"{name}_onehot")
            for i, l in enumerate(lams):
                adj = {}
                if i > 0:
                    adj[deltas[i - 1]] = -1.0
                if i < segments:
                    adj[deltas[i]] = -1.0
                self.add_linear({l: 1.0, **adj}, "<=", 0.0, name=f"{name}_adj{i}")
        self.piecewise.append(PiecewiseBlock(bid, x_var, y_var, bps, vals, lams,
                                             deltas, max_gap, name))
        return bid

    def set_objective(self, coeffs, sense: str = "min", const: float = 0.0) -> None:
        if sense not in ("min", "max"):
            raise ModelError(f"unknown objective sense {sense!r}")
        if isinstance(coeffs, LinExpr):
            const += coeffs.const
            coeffs = coeffs.coeffs
        self.objective = Objective({v: float(c) for v, c in coeffs.items()}, sense, const)

    def snapshot(self) -> "Model":
        return self

    @property
    def binary_ids(self) -> list[int]:
        return [v.id for v in self.variables if v.kind == "binary"]

    # -- export ----------------------------------------------------------

    def export_standard(self, fmt: str) -> str:
        if fmt == "LP":
            return self._export_lp()
        if fmt == "MPS":
            return self._export_mps()
        raise ModelError(f"unknown format {fmt!r} (use 'MPS' or 'LP')")

    def _export_lp(self) -> str:
        if self.cones:
            names = ", ".join(c.name for c in self.cones)
            raise ModelError(f"LP format cannot express cone rows: {names}")
        out = io.StringIO()
        out.write("\\ " + self.name + "\n")
        out.write("Minimize\n" if self.objective.sense == "min" else "Maximize\n")
        terms = [f"{c:+.12g} {self.variables[v].name}"
                 for v, c in self.objective.coeffs.items()]
        out.write(" obj: " + (" ".join(terms) if terms else "0 " + self.variables[0].name if self.variables else "0") + "\n")
        out.write("Subject To\n")
        for row in self.linear:
            terms = " ".join(f"{c:+.12g} {self.variables[v].name}"
                             for v, c in row.coeffs.items())
            op = {"<=": "<=", ">=": ">=", "==": "="}[row.sense]
            out.write(f" {row.name}: {terms or '0 ' + self.variables[0].name} {op} {row.rhs:.12g}\n")
        out.write("Bounds\n")
        for v in self.variables:
            if v.kind == "binary":
                continue
            lo = f"{v.lb:.12g}" if v.lb != -math.inf else "-inf"
            hi = f"{v.ub:.12g}" if v.ub != math.inf else "+inf"
            out.write(f" {lo} <= {v.name} <= {hi}\n")
        bins = [v for v in self.variables if v.kind == "binary"]
        if bins:
            out.write("Binaries\n " + " ".join(v.name for v in bins) + "\n")
        out.write("End\n")
        return out.getvalue()

    def _export_mps(self) -> str:
        out = io.StringIO()
        out.write(f"NAME          {self.name}\n")
        out.write("ROWS\n")
        out.write(" N  OBJ\n")
        sense_tag = {"<=": "L", ">=": "G", "==": "E"}
        for row in self.linear:
            out.write(f" {sense_tag[row.sense]}  {row.name}\n")
        for cone in self.cones:
            out.write(f" L  {cone.name}\n")

        # cones need plain variables on every leg; alias affine legs
        cone_alias: list[tuple[str, list[tuple[str, str, float]]]] = []
        alias_rows: list[tuple[str, dict[int, float], float]] = []
        alias_vars: list[tuple[str, float, float]] = []

        def leg_var(expr: LinExpr, tag: str):
            if expr.is_single_var():
                return self.variables[next(iter(expr.coeffs))].name, None
            aname = tag
            alias_vars.append((aname, -1e30, 1e30))
            alias_rows.append((f"{aname}_def", dict(expr.coeffs), -expr.const))
            return aname, aname

        for cone in self.cones:
            qterms = []
            un, _ = leg_var(cone.u, f"{cone.name}_u")
            vn, _ = leg_var(cone.v, f"{cone.name}_v")
            qterms.append((un, vn, -1.0))
            for i, w in enumerate(cone.ws):
                wn, _ = leg_var(w, f"{cone.name}_w{i}")
                qterms.append((wn, wn, 1.0))
            cone_alias.append((cone.name, qterms))
        for rname, _, _ in alias_rows:
            out.write(f" E  {rname}\n")

        out.write("COLUMNS\n")
        col_entries: dict[str, list[tuple[str, float]]] = {}
        for v in self.variables:
            col_entries[v.name] = []
            c = self.objective.coeffs.get(v.id)
            if c:
                col_entries[v.name].append(("OBJ", c if self.objective.sense == "min" else -c))
        for row in self.linear:
            for vid, c in row.coeffs.items():
                col_entries[self.variables[vid].name].append((row.name, c))
        for rname, coeffs, _ in alias_rows:
            for vid, c in coeffs.items():
                col_entries[self.variables[vid].name].append((rname, c))
        for aname, _, _ in alias_vars:
            col_entries[aname] = [(f"{aname}_def", -1.0)]

        in_binary = False
        for v in self.variables:
            if v.kind == "binary" and not in_binary:
                out.write("    MARKER                 'MARKER'                 'INTORG'\n")
                in_binary = True
            elif v.kind != "binary" and in_binary:
                out.write("    MARKER                 'MARKER'                 'INTEND'\n")
                in_binary = False
            for rname, c in col_entries[v.name]:
                out.write(f"    {v.name:<10} {rname:<10} {c:.12g}\n")
            if not col_entries[v.name]:
                out.write(f"    {v.name:<10} OBJ        0\n")
        if in_binary:
            out.write("    MARKER                 'MARKER'                 'INTEND'\n")
        for aname, _, _ in alias_vars:
            for rname, c in col_entries[aname]:
                out.write(f"    {aname:<10} {rname:<10} {c:.12g}\n")

        out.write("RHS\n")
        for row in self.linear:
            if row.rhs != 0.0:
                out.write(f"    RHS       {row.name:<10} {row.rhs:.12g}\n")
        for rname, _, rhs in alias_rows:
            if rhs != 0.0:
                out.write(f"    RHS       {rname:<10} {rhs:.12g}\n")

        out.write("BOUNDS\n")
        for v in self.variables:
            if v.kind == "binary":
                out.write(f" BV BND       {v.name}\n")
                continue
            if v.lb == -math.inf:
                out.write(f" MI BND       {v.name}\n")
            elif v.lb != 0.0:
                out.write(f" LO BND       {v.name:<10} {v.lb:.12g}\n")
            if v.ub != math.inf:
                out.write(f" UP BND       {v.name:<10} {v.ub:.12g}\n")
        for aname, lo, hi in alias_vars:
            out.write(f" LO BND       {aname:<10} {lo:.12g}\n")
            out.write(f" UP BND       {aname:<10} {hi:.12g}\n")

        for cname, qterms in cone_alias:
            out.write(f"QCMATRIX   {cname}\n")
            for a, b, c in qterms:
                out.write(f"    {a:<10} {b:<10} {c:.12g}\n")
        out.write("ENDATA\n")
        return out.getvalue()


def parse_mps(text: str) -> Model:
    """Parse the subset of fixed-form MPS emitted by `export_standard`.

    Reconstructs variables, bounds, linear rows, objective and rotated
    cones (from QCMATRIX blocks in the writer's shape).
    """
    model = Model()
    section = None
    row_sense: dict[str, str] = {}
    row_order: list[str] = []
    cols: dict[str, dict[str, float]] = {}
    col_order: list[str] = []
    binaries: set[str] = set()
    rhs: dict[str, float] = {}
    lbs: dict[str, float] = {}
    ubs: dict[str, float] = {}
    quad: dict[str, list[tuple[str, str, float]]] = {}
    qc_row = None
    in_int = False

    for raw in text.splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        head = raw.split()
        if not raw.startswith(" ") and not raw.startswith("    "):
            kw = head[0]
            if kw == "NAME":
                model.name = head[1] if len(head) > 1 else "model"
                section = None
                continue
            if kw in ("ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA"):
                section = kw
                continue
            if kw == "QCMATRIX":
                section = "QCMATRIX"
                qc_row = head[1]
                quad[qc_row] = []
                continue
        toks = head
        if section == "ROWS":
            tag, name = toks
            if tag == "N":
                continue
            row_sense[name] = {"L": "<=", "G": ">=", "E": "=="}[tag]
            row_order.append(name)
        elif section == "COLUMNS":
            if len(toks) >= 2 and toks[1] == "'MARKER'":
                in_int = toks[2] == "'INTORG'"
                continue
            cname, rname, val = toks[0], toks[1], float(toks[2])
            if cname not in cols:
                cols[cname] = {}
                col_order.append(cname)
                if in_int:
                    binaries.add(cname)
            if val != 0.0 or rname == "OBJ":
                cols[cname][rname] = val
        elif section == "RHS":
            rhs[toks[1]] = float(toks[2])
        elif section == "BOUNDS":
            tag, _, name = toks[0], toks[1], toks[2]
            if tag == "BV":
                binaries.add(name)
            elif tag == "MI":
                lbs[name] = -math.inf
            elif tag == "LO":
                lbs[name] = float(toks[3])
            elif tag == "UP":
                ubs[name] = float(toks[3])
        elif section == "QCMATRIX":
            quad[qc_row].append((toks[0], toks[1], float(toks[2])))

    alias_names = {c for c in col_order if f"{c}_def" in row_sense}
    ids: dict[str, int] = {}
    for cname in col_order:
        if cname in alias_names:
            continue
        kind = "binary" if cname in binaries else "continuous"
        lb = lbs.get(cname, 0.0)
        ub = ubs.get(cname, 1.0 if kind == "binary" else math.inf)
        ids[cname] = model.add_variable(kind, lb, ub, name=cname)

    obj = {}
    for cname in col_order:
        if cname in alias_names:
            continue
        c = cols[cname].get("OBJ")
        if c:
            obj[ids[cname]] = c
    model.set_objective(obj, "min")

    alias_defs: dict[str, LinExpr] = {}
    for cname in col_order:
        if cname not in alias_names:
            continue
        defrow = f"{cname}_def"
        expr = LinExpr()
        for other in col_order:
            if other in alias_names:
                continue
            c = cols[other].get(defrow)
            if c:
                expr.add(ids[other], c)
        # writer's def row reads: sum(coeffs) - alias = -const
        expr.const = -rhs.get(defrow, 0.0)
        alias_defs[cname] = expr

    def leg_expr(name: str) -> LinExpr:
        if name in alias_defs:
            return alias_defs[name]
        return LinExpr.term(ids[name])

    skip_rows = {f"{a}_def" for a in alias_names} | set(quad)
    for rname in row_order:
        if rname in skip_rows:
            continue
        coeffs = {}
        for cname in col_order:
            if cname in alias_names:
                continue
            c = cols[cname].get(rname)
            if c:
                coeffs[ids[cname]] = c
        model.add_linear(coeffs, row_sense[rname], rhs.get(rname, 0.0), name=rname)

    for cone_row, entries in quad.items():
        u = v = None
        ws = []
        for a, b, c in entries:
            if c < 0:
                u, v = leg_expr(a), leg_expr(b)
            else:
                ws.append(leg_expr(a))
        # nonneg helper rows were reconstructed as plain linear rows above,
        # so register the cone without re-adding them
        cid = len(model.cones)
        model._names.add(cone_row)
        model.cones.append(RotatedCone(cid, u, v, ws, cone_row))
    return model
