"""Three-phase radial LV feeder model and per-unit admittance assembly.

A feeder is described by buses, phase-coupled line segments (3x3 complex
series impedance), one slack bus held at fixed balanced phasors, and a map
from household ids to (bus, phase) connection points.  The admittance model
derived from it carries, per line, the 3x3 admittance block (the matrix
inverse of the series impedance, in per-unit) together with the assembled
nodal conductance/susceptance matrix used by the power-flow mismatch
equations, and the tree traversal order exploited by the sweep solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from .errors import ConfigError, FeederError

PHASES = ("a", "b", "c")

# Row-major lower-triangle order of the 3x3 impedance matrix: the six
# (R, X) column pairs in config files follow this sequence.
LOWER_TRIANGLE = ((0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2))


@dataclass(frozen=True)
class BaseValues:
    """Per-unit bases. ``power_va`` is the single-phase base power."""

    voltage_v: float = 230.0
    power_va: float = 100_000.0

    @property
    def impedance_ohm(self) -> float:
        return self.voltage_v ** 2 / self.power_va

    def kw_to_pu(self, kw):
        return np.asarray(kw) * 1e3 / self.power_va


@dataclass(frozen=True)
class LineSegment:
    from_bus: str
    to_bus: str
    z_ohm: np.ndarray  # (3, 3) complex, symmetric

    def __post_init__(self):
        z = np.array(self.z_ohm, dtype=complex)
        if z.shape != (3, 3):
            raise FeederError(f"line {self.from_bus}-{self.to_bus}: impedance must be 3x3")
        z.setflags(write=False)
        object.__setattr__(self, "z_ohm", z)


@dataclass(frozen=True)
class FeederModel:
    """Validated radial feeder. Immutable after construction."""

    buses: tuple[str, ...]
    slack_bus: str
    lines: tuple[LineSegment, ...]
    base: BaseValues
    household_map: dict[str, tuple[str, int]]
    slack_voltage_pu: float = 1.0
    bus_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "bus_index", {b: i for i, b in enumerate(self.buses)})

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def household_node(self, household_id: str) -> tuple[int, int]:
        bus, phase = self.household_map[household_id]
        return self.bus_index[bus], phase

    def slack_phasors(self) -> np.ndarray:
        """Balanced phasors (a at 0 deg, b at -120, c at +120), pu."""
        angles = np.array([0.0, -2.0 * math.pi / 3.0, 2.0 * math.pi / 3.0])
        return self.slack_voltage_pu * np.exp(1j * angles)


@dataclass
class AdmittanceModel:
    """Per-line admittance blocks plus tree ordering, all in per-unit.

    ``order`` lists non-slack bus indices parents-first from the slack;
    ``parent[i]`` and ``z_line_pu[i]`` / ``y_line_pu[i]`` refer to the line
    feeding bus ``i``.  ``ybus`` is the dense (3N, 3N) nodal admittance
    matrix whose real/imaginary parts are the conductance/susceptance
    coefficients of the power-balance equations; flat index = 3 * bus + phase.
    """

    feeder: FeederModel
    order: np.ndarray        # (N-1,) int
    parent: np.ndarray       # (N,) int, -1 at slack
    z_line_pu: np.ndarray    # (N, 3, 3) complex, zeros at slack
    y_line_pu: np.ndarray    # (N, 3, 3) complex, zeros at slack
    ybus: np.ndarray         # (3N, 3N) complex

    @property
    def n_bus(self) -> int:
        return self.feeder.n_bus

    def node_flat(self, bus_idx: int, phase: int) -> int:
        return 3 * bus_idx + phase


def _validate_radial(buses, slack_bus, lines):
    """Return {bus: parent_bus} for a connected radial graph or raise."""
    if slack_bus not in buses:
        raise FeederError(f"slack bus '{slack_bus}' is not in the bus list")
    if len(lines) != len(buses) - 1:
        raise FeederError(
            f"non-radial feeder: {len(buses)} buses need {len(buses) - 1} lines, got {len(lines)}"
        )
    adjacency: dict[str, list[tuple[str, int]]] = {b: [] for b in buses}
    for k, ln in enumerate(lines):
        for end in (ln.from_bus, ln.to_bus):
            if end not in adjacency:
                raise FeederError(f"line {ln.from_bus}-{ln.to_bus} references unknown bus '{end}'")
        adjacency[ln.from_bus].append((ln.to_bus, k))
        adjacency[ln.to_bus].append((ln.from_bus, k))

    parent = {slack_bus: None}
    stack = [slack_bus]
    used = set()
    while stack:
        bus = stack.pop()
        for nxt, k in adjacency[bus]:
            if k in used:
                continue
            if nxt in parent:
                raise FeederError(f"non-radial feeder: line {lines[k].from_bus}-{lines[k].to_bus} closes a loop")
            used.add(k)
            parent[nxt] = (bus, k)
            stack.append(nxt)
    missing = [b for b in buses if b not in parent]
    if missing:
        raise FeederError(f"feeder is disconnected: no path from slack to {missing}")
    return parent


def build_feeder(config: dict) -> FeederModel:
    """Validate a parsed feeder description and return the model.

    ``config`` keys: ``buses`` (list of ids), ``slack`` (id), ``lines``
    (list of (from, to, z_ohm 3x3)), ``households`` (id -> (bus, phase)),
    and optional ``base_voltage_v``, ``base_power_va``, ``slack_voltage_pu``.
    """
    buses = tuple(str(b) for b in config["buses"])
    if len(set(buses)) != len(buses):
        dupes = sorted({b for b in buses if list(buses).count(b) > 1})
        raise FeederError(f"duplicate bus ids: {dupes}")
    slack = str(config["slack"])
    lines = tuple(
        ln if isinstance(ln, LineSegment) else LineSegment(str(ln[0]), str(ln[1]), ln[2])
        for ln in config["lines"]
    )
    _validate_radial(buses, slack, lines)

    for ln in lines:
        z = ln.z_ohm
        if not np.allclose(z, z.T, rtol=0.0, atol=1e-12):
            raise FeederError(f"line {ln.from_bus}-{ln.to_bus}: impedance matrix is not symmetric")
        if abs(np.linalg.det(z)) < 1e-15:
            raise FeederError(f"line {ln.from_bus}-{ln.to_bus}: singular impedance matrix")

    household_map: dict[str, tuple[str, int]] = {}
    taken: dict[tuple[str, int], str] = {}
    for hid, (bus, phase) in config["households"].items():
        hid = str(hid)
        bus = str(bus)
        phase = int(phase)
        if bus not in buses:
            raise FeederError(f"household '{hid}' maps to unknown bus '{bus}'")
        if bus == slack:
            raise FeederError(f"household '{hid}' may not connect to the slack bus")
        if phase not in (0, 1, 2):
            raise FeederError(f"household '{hid}': phase must be 0, 1 or 2, got {phase}")
        if (bus, phase) in taken:
            raise FeederError(
                f"duplicate connection ({bus}, phase {phase}): households "
                f"'{taken[(bus, phase)]}' and '{hid}'"
            )
        taken[(bus, phase)] = hid
        household_map[hid] = (bus, phase)

    base = BaseValues(
        voltage_v=float(config.get("base_voltage_v", 230.0)),
        power_va=float(config.get("base_power_va", 100_000.0)),
    )
    return FeederModel(
        buses=buses,
        slack_bus=slack,
        lines=lines,
        base=base,
        household_map=MappingProxyType(household_map),
        slack_voltage_pu=float(config.get("slack_voltage_pu", 1.0)),
    )


def assemble_admittance(feeder: FeederModel, cond_max: float = 1e12) -> AdmittanceModel:
    """Invert each line's series impedance and assemble the nodal matrix.

    Raises FeederError when an impedance block is numerically singular
    (condition number above ``cond_max``).
    """
    n = feeder.n_bus
    z_base = feeder.base.impedance_ohm

    parent_map = _validate_radial(feeder.buses, feeder.slack_bus, feeder.lines)

    parent = np.full(n, -1, dtype=int)
    z_line = np.zeros((n, 3, 3), dtype=complex)
    y_line = np.zeros((n, 3, 3), dtype=complex)
    for bus, entry in parent_map.items():
        if entry is None:
            continue
        parent_bus, k = entry
        bi = feeder.bus_index[bus]
        parent[bi] = feeder.bus_index[parent_bus]
        z_pu = feeder.lines[k].z_ohm / z_base
        if np.linalg.cond(z_pu) > cond_max:
            raise FeederError(
                f"line {feeder.lines[k].from_bus}-{feeder.lines[k].to_bus}: "
                f"impedance condition number exceeds {cond_max:g}"
            )
        z_line[bi] = z_pu
        y_line[bi] = np.linalg.inv(z_pu)

    # Parents-first ordering by walking down from the slack.
    order = []
    children: dict[int, list[int]] = {i: [] for i in range(n)}
    for i in range(n):
        if parent[i] >= 0:
            children[parent[i]].append(i)
    stack = [feeder.bus_index[feeder.slack_bus]]
    while stack:
        b = stack.pop()
        if parent[b] >= 0:
            order.append(b)
        stack.extend(reversed(children[b]))

    ybus = np.zeros((3 * n, 3 * n), dtype=complex)
    for i in order:
        p = parent[i]
        y = y_line[i]
        si, sp = 3 * i, 3 * p
        ybus[si:si + 3, si:si + 3] += y
        ybus[sp:sp + 3, sp:sp + 3] += y
        ybus[si:si + 3, sp:sp + 3] -= y
        ybus[sp:sp + 3, si:si + 3] -= y

    return AdmittanceModel(
        feeder=feeder,
        order=np.array(order, dtype=int),
        parent=parent,
        z_line_pu=z_line,
        y_line_pu=y_line,
        ybus=ybus,
    )


# ---------------------------------------------------------------------------
# Config file parsing
# ---------------------------------------------------------------------------

def _read_sections(path) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip().lower()
                sections.setdefault(current, [])
            elif current is None:
                raise ConfigError(f"{path}:{lineno}: content before any [section] header")
            else:
                sections[current].append(line)
    return sections


def _kv(lines, path, section):
    out = {}
    for line in lines:
        if "=" not in line:
            raise ConfigError(f"{path}: [{section}] expects 'key = value' lines, got '{line}'")
        key, val = line.split("=", 1)
        out[key.strip().lower()] = val.strip()
    return out


def _parse_triangle(fields, where):
    if len(fields) != 12:
        raise ConfigError(f"{where}: expected 6 (R, X) pairs, got {len(fields)} numbers")
    vals = [float(x) for x in fields]
    z = np.zeros((3, 3), dtype=complex)
    for k, (i, j) in enumerate(LOWER_TRIANGLE):
        z[i, j] = vals[2 * k] + 1j * vals[2 * k + 1]
        z[j, i] = z[i, j]
    return z


def load_feeder(path) -> FeederModel:
    """Parse a feeder config file and build the validated model.

    Sections: [base] (optional key=value), [buses] (one id per line),
    [slack] (single id), [conductors] (code + 6 lower-triangle (R, X)
    ohm/km pairs), [lines] (from to length_m code), [households]
    (id bus phase).  A line may also give 12 inline numbers in place of
    ``length_m code`` meaning ohms directly.
    """
    sections = _read_sections(path)
    for required in ("buses", "slack", "lines", "households"):
        if required not in sections:
            raise ConfigError(f"{path}: missing [{required}] section")

    base_kv = _kv(sections.get("base", []), path, "base")

    conductors = {}
    for line in sections.get("conductors", []):
        fields = line.split()
        code, rest = fields[0], fields[1:]
        conductors[code] = _parse_triangle(rest, f"{path}: conductor '{code}'")

    buses = [ln.split()[0] for ln in sections["buses"]]
    slack_lines = sections["slack"]
    if len(slack_lines) != 1 or len(slack_lines[0].split()) != 1:
        raise ConfigError(f"{path}: [slack] must name exactly one bus")
    slack = slack_lines[0].strip()

    lines = []
    for ln in sections["lines"]:
        fields = ln.split()
        if len(fields) == 4:
            frm, to, length_m, code = fields
            if code not in conductors:
                raise ConfigError(f"{path}: line {frm}-{to} references unknown conductor '{code}'")
            z = conductors[code] * (float(length_m) / 1000.0)
        elif len(fields) == 14:
            frm, to = fields[0], fields[1]
            z = _parse_triangle(fields[2:], f"{path}: line {frm}-{to}")
        else:
            raise ConfigError(
                f"{path}: line rows need 'from to length_m conductor' or "
                f"'from to' + 12 ohm values, got {len(fields)} fields"
            )
        lines.append((frm, to, z))

    households = {}
    for ln in sections["households"]:
        fields = ln.split()
        if len(fields) != 3:
            raise ConfigError(f"{path}: household rows need 'id bus phase', got '{ln}'")
        hid, bus, phase = fields
        if hid in households:
            raise ConfigError(f"{path}: duplicate household id '{hid}'")
        households[hid] = (bus, int(phase))

    config = {
        "buses": buses,
        "slack": slack,
        "lines": lines,
        "households": households,
    }
    for key in ("base_voltage_v", "base_power_va", "slack_voltage_pu"):
        if key in base_kv:
            config[key] = base_kv[key]
    return build_feeder(config)


def dump_feeder(feeder: FeederModel, path) -> None:
    """Write a feeder model back to the config format (round-trip exact)."""
    out = []
    out.append("[base]")
    out.append(f"base_voltage_v = {feeder.base.voltage_v!r}")
    out.append(f"base_power_va = {feeder.base.power_va!r}")
    out.append(f"slack_voltage_pu = {feeder.slack_voltage_pu!r}")
    out.append("[buses]")
    out.extend(feeder.buses)
    out.append("[slack]")
    out.append(feeder.slack_bus)
    out.append("[lines]")
    for ln in feeder.lines:
        vals = []
        for i, j in LOWER_TRIANGLE:
            vals.append(repr(float(ln.z_ohm[i, j].real)))
            vals.append(repr(float(ln.z_ohm[i, j].imag)))
        out.append(f"{ln.from_bus} {ln.to_bus} " + " ".join(vals))
    out.append("[households]")
    for hid, (bus, phase) in feeder.household_map.items():
        out.append(f"{hid} {bus} {phase}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
