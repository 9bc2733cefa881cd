"""Three-phase unbalanced feeder model and bus admittance matrices.

A feeder is a set of buses, each carrying a subset of the phases a/b/c, tied
together by lines whose series impedance is a 3x3 phase-frame block (mutual
coupling included).  Single-phase PV inverters and SVCs attach to individual
(bus, phase) pairs.  Everything electrical is converted to per-unit on the
system MVA base and the per-bus line-to-neutral voltage base at load time.

The node-phase index map is the backbone of the package: every (bus, phase)
pair that physically exists gets one slot in a flat vector, bus-major
(ascending bus id) then phase-major (a, b, c).  Injections, voltage
magnitudes and surrogate features all share this layout.
"""

from __future__ import annotations

import importlib.resources
import json
from dataclasses import dataclass

import numpy as np

PHASES = ("a", "b", "c")
PHASE_INDEX = {"a": 0, "b": 1, "c": 2}


class FeederError(ValueError):
    """A feeder file or feeder definition violates the model invariants."""


@dataclass(frozen=True)
class Bus:
    id: int
    phases: tuple[str, ...]
    is_slack: bool = False
    v_base: float = 2401.8  # line-to-neutral volts


@dataclass(frozen=True)
class Line:
    """One line segment; admittances are per-unit and restricted to the
    phases shared by both endpoints (other entries exactly zero)."""

    from_bus: int
    to_bus: int
    y_series: np.ndarray  # 3x3 complex, per-unit
    y_shunt: np.ndarray   # 3x3 complex, per-unit, total line charging


@dataclass(frozen=True)
class PvUnit:
    bus: int
    phase: str
    p_rated: float  # MW
    s_rated: float  # MVA


@dataclass(frozen=True)
class SvcUnit:
    bus: int
    phase: str
    q_min: float  # MVar
    q_max: float  # MVar


class Feeder:
    """Validated feeder with the node-phase index map and per-unit bases.

    Treat instances as immutable after construction; derived matrices and
    index arrays may be shared freely across threads.
    """

    def __init__(self, buses, lines, pvs, svcs, s_base=1.0, v0=1.0):
        self.buses = sorted(buses, key=lambda b: b.id)
        self.lines = list(lines)
        self.pvs = list(pvs)
        self.svcs = list(svcs)
        self.s_base = float(s_base)
        self.v0 = float(v0)
        self._validate()
        self._build_index()
        self._cache_device_arrays()

    # -- validation ---------------------------------------------------------

    def _validate(self):
        if self.s_base <= 0:
            raise FeederError("s_base_mva must be > 0")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise FeederError("duplicate bus ids: %s" % sorted(ids))
        by_id = {b.id: b for b in self.buses}

        slacks = [b for b in self.buses if b.is_slack]
        if len(slacks) == 0:
            raise FeederError("no slack bus defined")
        if len(slacks) > 1:
            raise FeederError(
                "duplicate slack: buses %s" % sorted(b.id for b in slacks))
        if tuple(slacks[0].phases) != PHASES:
            raise FeederError(
                "slack bus %d must carry all three phases" % slacks[0].id)
        self.slack_bus = slacks[0]

        for b in self.buses:
            if b.id < 0:
                raise FeederError("bus id %d is negative" % b.id)
            if not b.phases or any(p not in PHASES for p in b.phases):
                raise FeederError(
                    "bus %d: phases must be a non-empty subset of a/b/c" % b.id)
            if b.v_base <= 0:
                raise FeederError("bus %d: v_base must be > 0" % b.id)

        for ln in self.lines:
            if ln.from_bus == ln.to_bus:
                raise FeederError("line %d-%d is a self-loop" % (ln.from_bus, ln.to_bus))
            for end in (ln.from_bus, ln.to_bus):
                if end not in by_id:
                    raise FeederError(
                        "line %d-%d references unknown bus %d"
                        % (ln.from_bus, ln.to_bus, end))
            shared = set(by_id[ln.from_bus].phases) & set(by_id[ln.to_bus].phases)
            if not shared:
                raise FeederError(
                    "line %d-%d: endpoints share no phase" % (ln.from_bus, ln.to_bus))
            if by_id[ln.from_bus].v_base != by_id[ln.to_bus].v_base:
                raise FeederError(
                    "line %d-%d: endpoint voltage bases differ (no transformers)"
                    % (ln.from_bus, ln.to_bus))
            for mat in (ln.y_series, ln.y_shunt):
                for a in PHASES:
                    for b_ in PHASES:
                        if (a not in shared or b_ not in shared) and \
                                mat[PHASE_INDEX[a], PHASE_INDEX[b_]] != 0:
                            raise FeederError(
                                "line %d-%d: admittance on phase pair (%s,%s) "
                                "absent at an endpoint" % (ln.from_bus, ln.to_bus, a, b_))

        # connectivity over buses (phase-level islands surface in build_zbus)
        adj = {b.id: set() for b in self.buses}
        for ln in self.lines:
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
        seen = {self.slack_bus.id}
        stack = [self.slack_bus.id]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        unreachable = set(by_id) - seen
        if unreachable:
            raise FeederError(
                "disconnected graph: buses %s unreachable from slack"
                % sorted(unreachable))

        for pv in self.pvs:
            self._check_device("PV", pv.bus, pv.phase, by_id)
            if pv.p_rated <= 0:
                raise FeederError("PV at bus %d phase %s: p_rated must be > 0"
                                  % (pv.bus, pv.phase))
            if pv.s_rated < pv.p_rated:
                raise FeederError("PV at bus %d phase %s: s_rated < p_rated"
                                  % (pv.bus, pv.phase))
        for svc in self.svcs:
            self._check_device("SVC", svc.bus, svc.phase, by_id)
            if not (svc.q_min <= 0.0 <= svc.q_max):
                raise FeederError("SVC at bus %d phase %s: box must contain 0"
                                  % (svc.bus, svc.phase))

    @staticmethod
    def _check_device(kind, bus, phase, by_id):
        if bus not in by_id:
            raise FeederError("%s references unknown bus %d" % (kind, bus))
        if phase not in by_id[bus].phases:
            raise FeederError("device on absent phase: %s at bus %d phase %s"
                              % (kind, bus, phase))

    # -- node-phase indexing -------------------------------------------------

    def _build_index(self):
        self.node_phases = []
        self._index = {}
        for b in self.buses:
            for p in PHASES:
                if p in b.phases:
                    self._index[(b.id, p)] = len(self.node_phases)
                    self.node_phases.append((b.id, p))
        self.nph = len(self.node_phases)
        self.slack_indices = np.array(
            [self._index[(self.slack_bus.id, p)] for p in PHASES], dtype=int)
        mask = np.ones(self.nph, dtype=bool)
        mask[self.slack_indices] = False
        self.nonslack_indices = np.flatnonzero(mask)
        self.phase_labels = np.array([p for _, p in self.node_phases])

    def npidx(self, bus, phase):
        """Flat index of one (bus, phase) pair."""
        try:
            return self._index[(bus, phase)]
        except KeyError:
            raise FeederError("no node-phase (%s, %s) in feeder" % (bus, phase))

    def zeros(self):
        """A fresh NodePhaseVector (all zeros)."""
        return np.zeros(self.nph)

    # -- per-unit ------------------------------------------------------------

    def mva_to_pu(self, x):
        return x / self.s_base

    def pu_to_mva(self, x):
        return x * self.s_base

    def _cache_device_arrays(self):
        self.pv_npidx = np.array(
            [self.npidx(pv.bus, pv.phase) for pv in self.pvs], dtype=int)
        self.svc_npidx = np.array(
            [self.npidx(s.bus, s.phase) for s in self.svcs], dtype=int)
        self.pv_p_rated_pu = np.array([self.mva_to_pu(pv.p_rated) for pv in self.pvs])
        self.pv_s_rated_pu = np.array([self.mva_to_pu(pv.s_rated) for pv in self.pvs])
        self.svc_q_min_pu = np.array([self.mva_to_pu(s.q_min) for s in self.svcs])
        self.svc_q_max_pu = np.array([self.mva_to_pu(s.q_max) for s in self.svcs])

    @property
    def n_controls(self):
        """Action dimension: PVs in file order, then SVCs."""
        return len(self.pvs) + len(self.svcs)


# -- feeder file ---------------------------------------------------------

def _pair_matrix(raw, what, where):
    """Parse a 3x3 array of [re, im] pairs into a complex matrix."""
    m = np.asarray(raw, dtype=float)
    if m.shape != (3, 3, 2):
        raise FeederError("%s of %s must be a 3x3 array of pairs" % (what, where))
    return m[:, :, 0] + 1j * m[:, :, 1]


def _line_from_json(obj, by_id, s_base_mva):
    fb, tb = int(obj["from"]), int(obj["to"])
    where = "line %d-%d" % (fb, tb)
    if fb not in by_id or tb not in by_id:
        raise FeederError("%s references unknown bus" % where)
    shared = sorted(set(by_id[fb].phases) & set(by_id[tb].phases),
                    key=PHASE_INDEX.get)
    if not shared:
        raise FeederError("%s: endpoints share no phase" % where)
    # per-unit conversion on the endpoint L-N voltage base and the MVA base
    z_base = by_id[fb].v_base ** 2 / (s_base_mva * 1e6)

    z_ohm = _pair_matrix(obj["z_series_ohm"], "z_series_ohm", where)
    idx = [PHASE_INDEX[p] for p in shared]
    off = np.ones((3, 3), dtype=bool)
    off[np.ix_(idx, idx)] = False
    if np.any(z_ohm[off] != 0):
        raise FeederError("%s: impedance entry on a phase absent at an endpoint"
                          % where)
    sub = z_ohm[np.ix_(idx, idx)]
    if not np.allclose(sub, sub.T):
        raise FeederError("%s: series impedance must be symmetric" % where)
    try:
        y_sub = np.linalg.inv(sub)
    except np.linalg.LinAlgError:
        raise FeederError("%s: singular series impedance block" % where)
    y_series = np.zeros((3, 3), dtype=complex)
    y_series[np.ix_(idx, idx)] = (y_sub + y_sub.T) / 2.0  # keep bit-exact symmetry
    y_series *= z_base  # siemens -> per-unit

    y_shunt = np.zeros((3, 3), dtype=complex)
    if "y_shunt_s" in obj:
        ys = _pair_matrix(obj["y_shunt_s"], "y_shunt_s", where)
        if np.any(ys[off] != 0):
            raise FeederError("%s: shunt entry on a phase absent at an endpoint"
                              % where)
        y_shunt = ((ys + ys.T) / 2.0) * z_base
    return Line(fb, tb, y_series, y_shunt)


def load_feeder(path):
    """Load and validate a feeder from a JSON file.

    See docs/formats.md for the schema.  Impedances in ohm and device ratings
    in MW/MVA/MVar are converted to per-unit here.
    """
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FeederError("parse failure in %s: %s" % (path, exc))

    for key in ("s_base_mva", "buses", "lines"):
        if key not in raw:
            raise FeederError("feeder file missing key %r" % key)
    s_base = float(raw["s_base_mva"])
    if s_base <= 0:
        raise FeederError("s_base_mva must be > 0")

    buses = []
    for b in raw["buses"]:
        phases = tuple(sorted(set(b["phases"]), key=PHASE_INDEX.get))
        buses.append(Bus(id=int(b["id"]), phases=phases,
                         is_slack=bool(b.get("slack", False)),
                         v_base=float(b["v_base_v"])))
    by_id = {b.id: b for b in buses}
    if len(by_id) != len(buses):
        raise FeederError("duplicate bus ids in file")

    lines = [_line_from_json(obj, by_id, s_base) for obj in raw["lines"]]

    pvs = [PvUnit(int(o["bus"]), str(o["phase"]), float(o["p_rated_mw"]),
                  float(o["s_rated_mva"])) for o in raw.get("pvs", [])]
    svcs = [SvcUnit(int(o["bus"]), str(o["phase"]), float(o["q_min_mvar"]),
                    float(o["q_max_mvar"])) for o in raw.get("svcs", [])]

    return Feeder(buses, lines, pvs, svcs, s_base=s_base,
                  v0=float(raw.get("v0_pu", 1.0)))


def bundled_feeder_path(name="feeder10.json"):
    """Filesystem path of a feeder shipped with the package."""
    return str(importlib.resources.files("voltreg").joinpath("data", name))


# -- admittance matrices ---------------------------------------------------

def build_ybus(feeder):
    """Bus admittance matrix over existing node-phases (complex, symmetric).

    Off-diagonal block (i, j) is -y_series(i, j); diagonal blocks accumulate
    incident series admittance plus half the line shunt per end.
    """
    n = feeder.nph
    y = np.zeros((n, n), dtype=complex)
    for ln in feeder.lines:
        for pa in PHASES:
            ia = PHASE_INDEX[pa]
            ka_f = feeder._index.get((ln.from_bus, pa))
            ka_t = feeder._index.get((ln.to_bus, pa))
            for pb in PHASES:
                ib = PHASE_INDEX[pb]
                ys = ln.y_series[ia, ib]
                ysh = ln.y_shunt[ia, ib]
                if ys == 0 and ysh == 0:
                    continue
                kb_f = feeder._index.get((ln.from_bus, pb))
                kb_t = feeder._index.get((ln.to_bus, pb))
                y[ka_f, kb_t] -= ys
                y[ka_t, kb_f] -= ys
                y[ka_f, kb_f] += ys + ysh / 2.0
                y[ka_t, kb_t] += ys + ysh / 2.0
    return y


def build_zbus(feeder, ybus=None):
    """Impedance matrix of the non-slack partition: inverse of Y_nn.

    Dense LU with partial pivoting (LAPACK); fine at desk scale.  Raises
    FeederError naming the offending node-phase when a row is electrically
    empty (islanded node-phase), or when the inverse fails the residual
    check ||Y_nn Z - I||_max < 1e-10.
    """
    if ybus is None:
        ybus = build_ybus(feeder)
    ns = feeder.nonslack_indices
    y_nn = ybus[np.ix_(ns, ns)]
    row_mag = np.abs(y_nn).sum(axis=1)
    dead = np.flatnonzero(row_mag == 0.0)
    if dead.size:
        bus, phase = feeder.node_phases[ns[dead[0]]]
        raise FeederError(
            "singular Y partition: islanded node-phase (bus %d, phase %s)"
            % (bus, phase))
    try:
        z = np.linalg.inv(y_nn)
    except np.linalg.LinAlgError:
        raise FeederError("singular Y partition: non-slack block not invertible")
    resid = np.max(np.abs(y_nn @ z - np.eye(len(ns))))
    if not resid < 1e-10:
        raise FeederError(
            "ill-conditioned Y partition: inverse residual %.3e" % resid)
    return z
