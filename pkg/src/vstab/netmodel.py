"""Grid description: case file parsing, validation and admittance matrix assembly.

Accepts the de-facto M-file case tables (bus/gen/branch matrices on a 100 MVA
style base) or a JSON mirror with the same columns. All quantities are held
in per-unit on the system base.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

PQ, PV, SLACK = 1, 2, 3


class CaseParseError(ValueError):
    """Raised when a case file cannot be parsed; carries line/field context."""


class CaseValidationError(ValueError):
    """Raised when parsed case data violates a model invariant."""


@dataclass(frozen=True)
class Bus:
    id: int
    btype: int  # PQ=1, PV=2, SLACK=3
    pd: float   # base real load, p.u.
    qd: float   # base reactive load, p.u.
    gs: float   # shunt conductance, p.u.
    bs: float   # shunt susceptance, p.u.
    vm: float = 1.0   # published/initial voltage magnitude
    va: float = 0.0   # published/initial angle, degrees


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float        # total line charging susceptance, p.u.
    tap: float = 1.0
    status: int = 1
    scale: float = 1.0  # admittance multiplier, (1-K) under a parametrized outage


@dataclass(frozen=True)
class Generator:
    bus: int
    pg: float       # active power setpoint, p.u.
    vg: float       # voltage setpoint, p.u.
    qmax: float     # p.u.
    qmin: float     # p.u.
    qg: float = 0.0  # base-case reactive output (informational)
    status: int = 1


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    base_mva: float = 100.0
    name: str = ""

    # derived lookups, filled in __post_init__
    _index_of: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, "_index_of", {b.id: i for i, b in enumerate(self.buses)}
        )

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self, bus_id: int) -> int:
        try:
            return self._index_of[bus_id]
        except KeyError:
            raise CaseValidationError(f"unknown bus id {bus_id}") from None

    @property
    def slack_index(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.btype == SLACK)

    def in_service_branches(self) -> list[tuple[int, Branch]]:
        return [(l, br) for l, br in enumerate(self.branches) if br.status]

    def gen_at(self, bus_id: int) -> Generator | None:
        for g in self.generators:
            if g.bus == bus_id and g.status:
                return g
        return None

    def validate(self) -> "NetworkModel":
        slacks = [b.id for b in self.buses if b.btype == SLACK]
        if len(slacks) != 1:
            raise CaseValidationError(
                f"exactly one slack bus required, found {len(slacks)}: {slacks}"
            )
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseValidationError("duplicate bus ids")
        for g in self.generators:
            if g.bus not in self._index_of:
                raise CaseValidationError(f"generator references unknown bus {g.bus}")
            if g.qmin > g.qmax:
                raise CaseValidationError(
                    f"generator at bus {g.bus}: Qmin {g.qmin} > Qmax {g.qmax}"
                )
        seen_gen_bus = set()
        for g in self.generators:
            if g.status:
                if g.bus in seen_gen_bus:
                    raise CaseValidationError(
                        f"more than one in-service generator at bus {g.bus}"
                    )
                seen_gen_bus.add(g.bus)
        for k, br in enumerate(self.branches):
            if br.from_bus == br.to_bus:
                raise CaseValidationError(f"branch {k}: endpoints coincide ({br.from_bus})")
            if br.from_bus not in self._index_of or br.to_bus not in self._index_of:
                raise CaseValidationError(f"branch {k}: unknown endpoint")
            if br.r == 0 and br.x == 0:
                raise CaseValidationError(f"branch {k}: zero series impedance")
        return self

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        mva = self.base_mva
        return {
            "base_mva": mva,
            "name": self.name,
            "bus": [
                [b.id, b.btype, b.pd * mva, b.qd * mva, b.gs * mva, b.bs * mva, b.vm, b.va]
                for b in self.buses
            ],
            "gen": [
                [g.bus, g.pg * mva, g.qg * mva, g.qmax * mva, g.qmin * mva, g.vg, g.status]
                for g in self.generators
            ],
            "branch": [
                [br.from_bus, br.to_bus, br.r, br.x, br.b, br.tap, br.status, br.scale]
                for br in self.branches
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _model_from_tables(bus_rows, gen_rows, branch_rows, base_mva, name="") -> NetworkModel:
    buses = []
    for row in bus_rows:
        buses.append(
            Bus(
                id=int(row[0]),
                btype=int(row[1]),
                pd=row[2] / base_mva,
                qd=row[3] / base_mva,
                gs=row[4] / base_mva,
                bs=row[5] / base_mva,
                vm=row[7] if len(row) > 7 else 1.0,
                va=row[8] if len(row) > 8 else 0.0,
            )
        )
    gens = []
    for row in gen_rows:
        gens.append(
            Generator(
                bus=int(row[0]),
                pg=row[1] / base_mva,
                qg=row[2] / base_mva,
                qmax=row[3] / base_mva,
                qmin=row[4] / base_mva,
                vg=row[5],
                status=int(row[7]) if len(row) > 7 else 1,
            )
        )
    branches = []
    for row in branch_rows:
        tap = row[8] if len(row) > 8 else 0.0
        branches.append(
            Branch(
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                r=row[2],
                x=row[3],
                b=row[4],
                tap=tap if tap not in (0, 0.0) else 1.0,
                status=int(row[10]) if len(row) > 10 else 1,
            )
        )
    return NetworkModel(
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(gens),
        base_mva=base_mva,
        name=name,
    ).validate()


_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\];", re.S)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([\d.eE+-]+)\s*;")


def _parse_mfile(text: str, name: str) -> NetworkModel:
    m = _SCALAR_RE.search(text)
    base_mva = float(m.group(1)) if m else 100.0
    tables: dict[str, list[list[float]]] = {}
    for mat in _MATRIX_RE.finditer(text):
        key, body = mat.group(1), mat.group(2)
        rows = []
        for lineno, line in enumerate(body.splitlines(), 1):
            line = line.split("%")[0].strip().rstrip(";")
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.split()])
            except ValueError as exc:
                raise CaseParseError(
                    f"{name}: table mpc.{key}, row {lineno}: {exc}"
                ) from None
        tables[key] = rows
    for required in ("bus", "gen", "branch"):
        if required not in tables:
            raise CaseParseError(f"{name}: missing mpc.{required} table")
    return _model_from_tables(
        tables["bus"], tables["gen"], tables["branch"], base_mva, name
    )


def _parse_json_case(text: str, name: str) -> NetworkModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"{name}: {exc}") from None
    if "bus" in doc and doc.get("branch") and len(doc["branch"][0]) == 8:
        # our own to_json round-trip format (already per-unit scaled by base)
        base = float(doc.get("base_mva", 100.0))
        buses = tuple(
            Bus(int(r[0]), int(r[1]), r[2] / base, r[3] / base, r[4] / base,
                r[5] / base, r[6], r[7])
            for r in doc["bus"]
        )
        gens = tuple(
            Generator(bus=int(r[0]), pg=r[1] / base, qg=r[2] / base,
                      qmax=r[3] / base, qmin=r[4] / base, vg=r[5], status=int(r[6]))
            for r in doc["gen"]
        )
        branches = tuple(
            Branch(int(r[0]), int(r[1]), r[2], r[3], r[4], tap=r[5] or 1.0,
                   status=int(r[6]), scale=r[7])
            for r in doc["branch"]
        )
        return NetworkModel(buses, branches, gens, base,
                            name=doc.get("name", name)).validate()
    for required in ("bus", "gen", "branch"):
        if required not in doc:
            raise CaseParseError(f"{name}: missing '{required}' array")
    return _model_from_tables(
        doc["bus"], doc["gen"], doc["branch"], float(doc.get("base_mva", 100.0)), name
    )


def load_case(source: str | Path) -> NetworkModel:
    """Load a case from a file path, a bundled case name, or raw case text."""
    text = None
    name = str(source)
    p = Path(source)
    if p.suffix in (".m", ".json") and p.exists():
        text = p.read_text()
    elif re.fullmatch(r"\w+", name):
        for ext in (".m", ".json"):
            ref = resources.files("vstab.cases") / f"{name}{ext}"
            if ref.is_file():
                text = ref.read_text()
                name = f"{name}{ext}"
                break
    if text is None:
        if "mpc." in name or name.lstrip().startswith("{"):
            text, name = name, "<inline>"
        else:
            raise CaseParseError(f"case source not found: {source}")
    if name.endswith(".json") or text.lstrip().startswith("{"):
        return _parse_json_case(text, name)
    return _parse_mfile(text, name)


# -- admittance matrix ----------------------------------------------------


@dataclass(frozen=True)
class AdmittanceMatrix:
    ybus: np.ndarray                  # dense complex (n, n)
    # per in-service branch: (branch_index, i, j, yff, yft, ytf, ytt)
    stamps: tuple[tuple, ...]

    @property
    def n(self) -> int:
        return self.ybus.shape[0]

    def branch_delta(self, branch_index: int) -> np.ndarray:
        """Dense Ybus contribution of one branch (what a full outage removes)."""
        for (l, i, j, yff, yft, ytf, ytt) in self.stamps:
            if l == branch_index:
                d = np.zeros_like(self.ybus)
                d[i, i] += yff
                d[i, j] += yft
                d[j, i] += ytf
                d[j, j] += ytt
                return d
        raise KeyError(f"branch {branch_index} not in service")


def branch_admittances(br: Branch) -> tuple[complex, complex, complex, complex]:
    ys = 1.0 / complex(br.r, br.x)
    bc = 1j * br.b / 2.0
    t = br.tap
    s = br.scale
    yff = s * (ys + bc) / (t * t)
    yft = -s * ys / t
    ytf = -s * ys / t
    ytt = s * (ys + bc)
    return yff, yft, ytf, ytt


def build_ybus(model: NetworkModel) -> AdmittanceMatrix:
    n = model.n_bus
    ybus = np.zeros((n, n), dtype=complex)
    stamps = []
    for l, br in model.in_service_branches():
        i = model.bus_index(br.from_bus)
        j = model.bus_index(br.to_bus)
        yff, yft, ytf, ytt = branch_admittances(br)
        ybus[i, i] += yff
        ybus[i, j] += yft
        ybus[j, i] += ytf
        ybus[j, j] += ytt
        stamps.append((l, i, j, yff, yft, ytf, ytt))
    for b in model.buses:
        k = model.bus_index(b.id)
        ybus[k, k] += complex(b.gs, b.bs)
    return AdmittanceMatrix(ybus=ybus, stamps=tuple(stamps))


class IslandingError(ValueError):
    """Outage or topology splits the network into disconnected islands."""


def connectivity_check(model: NetworkModel, min_scale: float = 1e-9) -> None:
    """Raise IslandingError when in-service branches leave the grid disconnected."""
    n = model.n_bus
    rows, cols = [], []
    for _, br in model.in_service_branches():
        if br.scale <= min_scale:
            continue
        rows.append(model.bus_index(br.from_bus))
        cols.append(model.bus_index(br.to_bus))
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    ncomp, labels = connected_components(adj, directed=False)
    if ncomp > 1:
        slack_label = labels[model.slack_index]
        isolated = [model.buses[i].id for i in range(n) if labels[i] != slack_label]
        raise IslandingError(f"buses islanded from slack: {isolated}")


def apply_outage(model: NetworkModel, branch_index: int, severity: float = 1.0) -> NetworkModel:
    """Scale one branch's admittance by (1 - severity); severity 1 is full outage."""
    if not 0.0 <= severity <= 1.0:
        raise ValueError(f"severity must be in [0, 1], got {severity}")
    if branch_index < 0 or branch_index >= len(model.branches):
        raise KeyError(f"unknown branch index {branch_index}")
    br = model.branches[branch_index]
    if not br.status:
        raise ValueError(f"branch {branch_index} already out of service")
    new_scale = br.scale * (1.0 - severity)
    branches = list(model.branches)
    if severity >= 1.0:
        branches[branch_index] = replace(br, scale=0.0, status=0)
    else:
        branches[branch_index] = replace(br, scale=new_scale)
    out = replace(model, branches=tuple(branches))
    if severity >= 1.0:
        connectivity_check(out)
    return out


def find_branch(model: NetworkModel, from_bus: int, to_bus: int) -> int:
    """Index of the first in-service branch between two buses (either direction)."""
    for l, br in model.in_service_branches():
        if {br.from_bus, br.to_bus} == {from_bus, to_bus}:
            return l
    raise KeyError(f"no in-service branch {from_bus}-{to_bus}")
