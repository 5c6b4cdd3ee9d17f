"""Client (Alice) and server (Bob) for the blind protocol on unit clusters.

One run proceeds as:

1. Alice prepares every computation qubit ``|+_kappa>`` (inputs of the
   first unit carry the logical input) and all ``|R1>`` traps, assigns them
   shuffled positions and sends them.
2. For each unit: Bob applies the ordered CZs, returns the group, Alice
   splices in ``|R2>`` traps under fresh shuffled labels and sends it back.
3. Alice issues an ``HOrder`` and then one encrypted angle at a time;
   Bob answers each with an outcome bit.
4. After an eight-qubit unit that is not the last one, Alice orders the
   Hadamard correction on the affected output.
5. Alice decides: evaluate the computation (probability ``q``) or test
   either trap family (``(1 - q) / 2`` each).

Bob's side is any :class:`ServerStrategy`; it only ever sees the public
messages and the quantum memory, never the :class:`ClientSecret`.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import mbqc, qsim
from .angles import ALL_ANGLES, PI, Angle8

EVALUATE = "EvaluateComputation"
TEST_R1 = "TestR1"
TEST_R2 = "TestR2"
ACCEPT = "Accept"
REJECT = "Reject"

MAX_R2 = {"six": 6, "eight": 8}


class ProtocolError(RuntimeError):
    pass


class BadConfig(ValueError):
    pass


class TrapBudgetExceeded(ValueError):
    pass


class MissingDependency(ProtocolError):
    pass


class ProtocolViolation(ProtocolError):
    """The server answered with something that is not a valid outcome list."""


# ---------------------------------------------------------------------------
# messages


@dataclass(frozen=True)
class QubitBatch:
    positions: tuple
    sender = "alice"


@dataclass(frozen=True)
class EntangleOrder:
    unit: int
    kind: str
    positions: tuple
    edges: tuple
    sender = "alice"


@dataclass(frozen=True)
class ReturnBatch:
    positions: tuple
    sender = "bob"


@dataclass(frozen=True)
class HOrder:
    positions: tuple
    sender = "alice"


@dataclass(frozen=True)
class AngleList:
    positions: tuple
    angles: tuple
    sender = "alice"


@dataclass(frozen=True)
class OutcomeList:
    bits: tuple
    sender = "bob"


def message_to_dict(msg) -> dict:
    out = {"type": type(msg).__name__, "sender": msg.sender}
    for key, value in asdict(msg).items():
        if key == "angles":
            value = [a.k if isinstance(a, Angle8) else a["k"] for a in msg.angles]
        out[key] = _jsonable(value)
    return out


def message_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type")
    d.pop("sender", None)
    if kind == "AngleList":
        return AngleList(tuple(d["positions"]), tuple(Angle8(k) for k in d["angles"]))
    if kind == "EntangleOrder":
        edges = tuple(tuple(e) for e in d["edges"])
        return EntangleOrder(d["unit"], d["kind"], tuple(d["positions"]), edges)
    cls = {"QubitBatch": QubitBatch, "ReturnBatch": ReturnBatch, "HOrder": HOrder, "OutcomeList": OutcomeList}[kind]
    (key,) = d
    return cls(tuple(d[key]))


def _jsonable(value):
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    return value


# ---------------------------------------------------------------------------
# Bob's quantum memory


class QubitStore:
    """Product of small entangled factors keyed by position label.

    Traps never interact with the cluster, so keeping tensor factors
    separate keeps every factor at unit size instead of the whole batch.
    """

    def __init__(self):
        self._factors = {}  # factor id -> (StateVector, [positions])
        self._where = {}
        self._next = 0

    def __contains__(self, pos) -> bool:
        return pos in self._where

    @property
    def positions(self) -> list:
        return sorted(self._where)

    def add(self, pos, prep_or_state) -> None:
        if pos in self._where:
            raise ProtocolError(f"position {pos} already occupied")
        state = prep_or_state if isinstance(prep_or_state, qsim.StateVector) else qsim.prepare_state([prep_or_state])
        fid = self._next
        self._next += 1
        self._factors[fid] = (state, [pos])
        self._where[pos] = fid

    def replace(self, pos, prep_or_state, rng=None) -> None:
        """Discard whatever sits at ``pos`` and put a fresh qubit there."""
        self.discard(pos, rng)
        self.add(pos, prep_or_state)

    def discard(self, pos, rng=None) -> None:
        """Remove ``pos``; if it is entangled, the rest collapses as if it were measured in Z."""
        fid = self._where.pop(pos)
        state, members = self._factors.pop(fid)
        if len(members) > 1:
            _, rest, _ = qsim.measure_computational(state, members.index(pos), rng=rng or np.random.default_rng(), keep=False)
            self._factors[fid] = (rest, [p for p in members if p != pos])

    def relabel(self, mapping: dict) -> None:
        for fid, (state, members) in self._factors.items():
            self._factors[fid] = (state, [mapping.get(p, p) for p in members])
        self._where = {mapping.get(p, p): fid for p, fid in self._where.items()}

    def _merge(self, a, b) -> None:
        fa, fb = self._where[a], self._where[b]
        if fa == fb:
            return
        sa, ma = self._factors[fa]
        sb, mb = self._factors.pop(fb)
        self._factors[fa] = (sa.tensor(sb), ma + mb)
        for p in mb:
            self._where[p] = fa

    def cz(self, a, b) -> None:
        self._merge(a, b)
        state, members = self._factors[self._where[a]]
        self._factors[self._where[a]] = (qsim.apply_cz(state, members.index(a), members.index(b)), members)

    def apply(self, pos, matrix) -> None:
        fid = self._where[pos]
        state, members = self._factors[fid]
        self._factors[fid] = (qsim.apply_matrix(state, matrix, [members.index(pos)]), members)

    def measure_planar(self, pos, angle, rng) -> int:
        fid = self._where.pop(pos)
        state, members = self._factors.pop(fid)
        bit, post, _ = qsim.measure_planar(state, members.index(pos), angle, rng=rng, keep=False)
        members = [p for p in members if p != pos]
        if members:
            self._factors[fid] = (post, members)
        return bit

    def state_of(self, positions) -> qsim.StateVector:
        """Joint state of ``positions`` (they must form whole factors)."""
        fids = []
        for p in positions:
            if self._where[p] not in fids:
                fids.append(self._where[p])
        state, order = None, []
        for fid in fids:
            s, members = self._factors[fid]
            state = s if state is None else state.tensor(s)
            order += members
        if sorted(order) != sorted(positions):
            raise ProtocolError("requested positions do not cover whole factors")
        perm = [order.index(p) for p in positions]
        amps = state.amps.reshape([2] * len(order)).transpose(perm)
        return qsim.StateVector._trusted(amps)

    def factor_sizes(self) -> list:
        return sorted(len(m) for _, m in self._factors.values())


# ---------------------------------------------------------------------------
# server


class ServerStrategy:
    """Honest Bob. Subclasses override the hooks to deviate.

    Hooks receive Bob's quantum memory and the public message only.
    """

    name = "honest"

    def __init__(self, seed=None, **params):
        self.params = params
        self.rng = np.random.default_rng(seed)

    def reseed(self, seed) -> None:
        self.rng = np.random.default_rng(seed)

    def on_receive(self, store: QubitStore, batch: QubitBatch) -> None:
        pass

    def on_entangle(self, store: QubitStore, order: EntangleOrder) -> ReturnBatch:
        for a, b in order.edges:
            store.cz(a, b)
        return ReturnBatch(order.positions)

    def on_h_order(self, store: QubitStore, order: HOrder) -> None:
        for p in order.positions:
            store.apply(p, qsim.H)

    def on_measure(self, store: QubitStore, angles: AngleList) -> OutcomeList:
        bits = [store.measure_planar(p, a, self.rng) for p, a in zip(angles.positions, angles.angles)]
        return OutcomeList(tuple(bits))

    def describe(self) -> dict:
        return {"name": self.name, **self.params}


# ---------------------------------------------------------------------------
# client


@dataclass
class ProtocolConfig:
    m1: int = 1
    q: float = 0.5
    seed: int = 0
    inputs: tuple = ("0", "0")
    readout: tuple = ("Z", "Z")
    output_wire: int = 0
    expected: int | None = None
    force_branch: str | None = None
    h_camouflage: bool = True

    def validate(self) -> None:
        if not 0 <= self.q <= 1:
            raise BadConfig(f"q must lie in [0, 1], got {self.q}")
        # two logical wires -> m = 2 rows, so 1 <= m1 <= m/2 forces m1 = 1
        if self.m1 != 1:
            raise BadConfig(f"m1 must satisfy 1 <= m1 <= m/2 = 1, got {self.m1}")
        if len(self.inputs) != 2 or any(s not in ("0", "1", "+", "-") for s in self.inputs):
            raise BadConfig(f"inputs must be two of 0/1/+/-, got {self.inputs}")
        if len(self.readout) != 2 or any(b not in ("Z", "X") for b in self.readout):
            raise BadConfig(f"readout must be two of Z/X, got {self.readout}")
        if self.output_wire not in (0, 1):
            raise BadConfig("output_wire must be 0 or 1")
        if self.force_branch not in (None, EVALUATE, TEST_R1, TEST_R2):
            raise BadConfig(f"unknown branch {self.force_branch!r}")


class ColumnTrapPolicy:
    """Allocate ``2*m1`` R1 qubits per new lattice column of each unit.

    Summed over the chain this gives ``K1 = 2 * m1 * n``. Each pair is one
    ``|0>`` and one ``|1>``.
    """

    def allocate(self, units, m1: int) -> list:
        counts = []
        for t, unit in enumerate(units):
            cols = unit.length if t == 0 else unit.length - 1
            counts.append(2 * m1 * cols)
        return counts


@dataclass
class ClientSecret:
    kappas: dict = field(default_factory=dict)
    r_bits: dict = field(default_factory=dict)
    preps: dict = field(default_factory=dict)
    roles: dict = field(default_factory=dict)
    trap_layout_r1: dict = field(default_factory=dict)  # position -> prepared bit
    trap_layout_r2: dict = field(default_factory=dict)  # position -> (phi, sign, hadamard)
    h_instructions: set = field(default_factory=set)
    vertex_positions: list = field(default_factory=list)  # per unit: vertex -> position
    r1_by_unit: list = field(default_factory=list)
    r2_by_unit: list = field(default_factory=list)
    relabels: list = field(default_factory=list)

    @property
    def r1_count(self) -> int:
        return sum(len(p) for p in self.r1_by_unit)


@dataclass
class Decision:
    branch: str
    verdict: str
    flip_applied: tuple
    decoded: tuple
    r1_pass: bool
    r2_pass: bool
    computation_ok: bool

    @property
    def accepted(self) -> bool:
        return self.verdict == ACCEPT


_HADAMARD_PREP = {"0": "+", "1": "-", "+": "0", "-": "1"}


def insert_traps(sequence, new_items, rng) -> list:
    """Insert each of ``new_items`` at a uniformly random slot of ``sequence``."""
    seq = list(sequence)
    for item in new_items:
        seq.insert(int(rng.integers(len(seq) + 1)), item)
    return seq


def direct_output_distribution(circuit, inputs=("0", "0"), readout=("Z", "Z")) -> dict:
    """Exact distribution of the two readout bits for ``circuit`` applied to ``inputs``."""
    preps = [qsim.Prep(s) for s in inputs]
    psi = qsim.prepare_state(preps).amps
    for g in circuit:
        psi = mbqc.gate_matrix(g) @ psi
    state = qsim.StateVector(psi, normalize=True)
    for w, basis in enumerate(readout):
        if basis == "X":
            state = qsim.apply_matrix(state, qsim.H, [w])
    probs = state.probabilities()
    return {(b >> 1 & 1, b & 1): float(probs[b]) for b in range(4)}


class Client:
    """Alice's side of one protocol run."""

    def __init__(self, circuit, config: ProtocolConfig | None = None, trap_policy=None):
        self.circuit = list(circuit)
        if not self.circuit:
            raise BadConfig("circuit must contain at least one gate")
        for g in self.circuit:
            if g not in mbqc.GATE_LABELS:
                raise BadConfig(f"unknown gate {g!r}")
        self.config = config or ProtocolConfig()
        self.config.validate()
        self.trap_policy = trap_policy or ColumnTrapPolicy()
        self.rng = np.random.default_rng([self.config.seed, 0])
        self.initial_frame, self.steps = mbqc.plan_frames(self.circuit)
        self.patterns = [step.pattern for step in self.steps]
        self.units = [p.unit for p in self.patterns]
        self.m = 2
        self.n = mbqc.circuit_columns(self.circuit)
        self.secret = ClientSecret()
        self.results = {}  # (unit, vertex) -> decrypted outcome
        self.trap_results = {}  # position -> decrypted outcome
        self.readout_results = {}  # wire -> decoded bit
        self.sequences = []
        # per-wire logical bookkeeping
        self.frame = [[0, 0], [0, 0]]
        self.phase = [0, 0]  # leftover Rz (eighths of pi) absorbed by the current unit's inputs
        self.wire_kappa = [Angle8(0), Angle8(0)]
        self._next_label = 0

    # -- helpers ---------------------------------------------------------

    @property
    def last(self) -> int:
        return len(self.units) - 1

    def _fresh_labels(self, count):
        labels = list(range(self._next_label, self._next_label + count))
        self._next_label += count
        perm = self.rng.permutation(count)
        return [labels[i] for i in perm]

    def _needs_physical_h(self, t, w) -> bool:
        return t < self.last and w in self.steps[t + 1].h_before

    # -- step 1 ----------------------------------------------------------

    def prepare(self) -> QubitBatch:
        s = self.secret
        slots = []  # (kind, unit, item)
        for t, unit in enumerate(self.units):
            fresh = unit.vertices if t == 0 else [v for v in unit.vertices if v not in unit.inputs]
            slots += [("comp", t, v) for v in fresh]
        r1_counts = self.trap_policy.allocate(self.units, self.config.m1)
        for t, count in enumerate(r1_counts):
            if count > MAX_R2[self.units[t].kind]:
                raise TrapBudgetExceeded(f"unit {t} would need {count} traps")
            slots += [("r1", t, i) for i in range(count)]
        labels = self._fresh_labels(len(slots))

        s.vertex_positions = [dict() for _ in self.units]
        s.r1_by_unit = [[] for _ in self.units]
        for (kind, t, item), pos in zip(slots, labels):
            if kind == "comp":
                s.vertex_positions[t][item] = pos
                s.roles[pos] = "computation"
                w, c = item
                restricted = c == self.units[t].length - 1 and self._needs_physical_h(t, w)
                kappa = Angle8(4 * int(self.rng.integers(2))) if restricted else ALL_ANGLES[self.rng.integers(8)]
                s.kappas[pos] = kappa
                if t == 0 and item in self.units[0].inputs:
                    label = self.config.inputs[w]
                    if self.initial_frame[w]:
                        label = _HADAMARD_PREP[label]
                    prep = qsim.Prep(label, kappa) if label in "+-" else qsim.Prep(label)
                else:
                    prep = qsim.Plus(kappa)
                s.preps[pos] = prep
            else:
                bit = item % 2
                s.r1_by_unit[t].append(pos)
                s.trap_layout_r1[pos] = bit
                s.roles[pos] = "r1"
                s.preps[pos] = qsim.One if bit else qsim.Zero
        for t in range(1, len(self.units)):
            prev = self.units[t - 1]
            for w in (0, 1):
                s.vertex_positions[t][(w, 0)] = s.vertex_positions[t - 1][prev.outputs[w]]
        for w in (0, 1):
            self.wire_kappa[w] = s.kappas[s.vertex_positions[0][(w, 0)]]
        return QubitBatch(tuple(sorted(labels)))

    # -- step 2 ----------------------------------------------------------

    def entangle_order(self, t) -> EntangleOrder:
        unit = self.units[t]
        vp = self.secret.vertex_positions[t]
        group = list(vp.values()) + list(self.secret.r1_by_unit[t])
        group = [group[i] for i in self.rng.permutation(len(group))]
        edges = tuple((vp[a], vp[b]) for a, b in unit.edges)
        return EntangleOrder(t, unit.kind, tuple(group), edges)

    def insert_r2(self, t, returned: ReturnBatch, count=None):
        """Generate the unit's R2 traps, splice them in and relabel everything.

        Returns ``(batch, relabel, new_preps)``: the public batch message,
        the old-to-new label map Alice applies while holding the qubits,
        and the preparations of the new traps keyed by their new labels.
        """
        s = self.secret
        unit = self.units[t]
        if count is None:
            count = len(s.r1_by_unit[t])
        if count > MAX_R2[unit.kind]:
            raise TrapBudgetExceeded(f"{count} R2 traps exceed the {unit.kind} budget of {MAX_R2[unit.kind]}")
        returned = list(returned.positions)
        new_items = [("r2", i) for i in range(count)]
        sequence = insert_traps(returned, new_items, self.rng)
        labels = self._fresh_labels(len(sequence))
        relabel = {}
        new_preps = {}
        n_h = count // 2 if self.config.h_camouflage else 0
        h_pick = set(self.rng.permutation(count)[:n_h].tolist())
        r2_positions = []
        for item, new in zip(sequence, labels):
            if isinstance(item, tuple):
                i = item[1]
                hadamard = i in h_pick
                phi = Angle8(int(self.rng.choice([2, 6]))) if hadamard else ALL_ANGLES[self.rng.integers(8)]
                sign = int(self.rng.integers(2))
                prep = qsim.Prep("-" if sign else "+", phi)
                s.trap_layout_r2[new] = (phi, sign, hadamard)
                s.roles[new] = "r2"
                s.preps[new] = prep
                new_preps[new] = prep
                r2_positions.append(new)
            else:
                relabel[item] = new
        self._apply_relabel(relabel)
        s.r2_by_unit.append(r2_positions)
        s.relabels.append(relabel)
        return QubitBatch(tuple(sorted(labels))), relabel, new_preps

    def _apply_relabel(self, mapping):
        s = self.secret
        for d in (s.kappas, s.preps, s.roles, s.trap_layout_r1):
            for old, new in mapping.items():
                if old in d:
                    d[new] = d.pop(old)
        for t, vp in enumerate(s.vertex_positions):
            for v, p in vp.items():
                vp[v] = mapping.get(p, p)
        s.r1_by_unit = [[mapping.get(p, p) for p in unit] for unit in s.r1_by_unit]

    # -- step 3 ----------------------------------------------------------

    def measurement_plan(self, t):
        """``(HOrder, sequence)`` for unit ``t``: dependency-respecting order with traps spliced in."""
        s = self.secret
        unit = self.units[t]
        vp = s.vertex_positions[t]
        base = [vp[v] for v in unit.measured]
        hset = []
        if t == self.last:
            for w, v in enumerate(unit.outputs):
                base.append(vp[v])
                if self._readout_basis(w) == "Z":
                    hset.append(vp[v])
        traps = list(s.r1_by_unit[t]) + list(s.r2_by_unit[t])
        sequence = insert_traps(base, traps, self.rng)
        hset += s.r1_by_unit[t]
        hset += [p for p in s.r2_by_unit[t] if s.trap_layout_r2[p][2]]
        for p in sequence:
            s.r_bits[p] = int(self.rng.integers(2))
        s.h_instructions |= set(hset)
        self.sequences.append(sequence)
        return HOrder(tuple(sorted(hset))), sequence

    def _readout_basis(self, w) -> str:
        basis = self.config.readout[w]
        if self.patterns[self.last].frame_out[w]:
            return "Z" if basis == "X" else "X"
        return basis

    def _vertex_of(self, t, pos):
        for v, p in self.secret.vertex_positions[t].items():
            if p == pos:
                return v
        return None

    def _parities(self, t, v):
        pattern = self.patterns[t]
        unit = self.units[t]
        deps_x = pattern.output_x_deps.get(v)
        deps_z = pattern.output_z_deps.get(v)
        cmd = next((c for c in pattern.commands if c.vertex == v), None)
        if cmd is not None:
            deps_x, deps_z = cmd.x_deps, cmd.z_deps
        missing = [d for d in deps_x | deps_z if (t, d) not in self.results]
        if missing:
            raise MissingDependency(f"unit {t} vertex {v} waits on {missing}")
        s_x = sum(self.results[(t, d)] for d in deps_x) & 1
        s_z = sum(self.results[(t, d)] for d in deps_z) & 1
        # byproducts carried in from the previous unit
        if v in unit.inputs:
            w = v[0]
            s_x ^= self.frame[w][0]
            s_z ^= self.frame[w][1]
        effects = mbqc.input_frame_effects(unit, {unit.inputs[w]: self.frame[w][0] for w in (0, 1)})
        s_z ^= effects.get(v, 0)
        return s_x, s_z

    def angle_for(self, t, pos) -> Angle8:
        s = self.secret
        role = s.roles[pos]
        r = s.r_bits[pos]
        if role == "r1":
            return PI * r
        if role == "r2":
            phi, _, hadamard = s.trap_layout_r2[pos]
            # H|+-_{pi/2}> ~ |+-_{3pi/2}> and vice versa
            return (-phi if hadamard else phi) + PI * r
        v = self._vertex_of(t, pos)
        unit = self.units[t]
        kappa = s.kappas[pos]
        if v in unit.outputs:
            w = v[0]
            s_x, s_z = self._parities(t, v)
            if self._readout_basis(w) == "Z":
                return PI * r
            theta = Angle8(self.patterns[t].phase[w])
            return mbqc.adaptive_angle(theta, s_x, s_z, kappa, r)
        cmd = next(c for c in self.patterns[t].commands if c.vertex == v)
        theta = cmd.angle
        if v in unit.inputs:
            # raw = Rz(phi) ideal, so measuring at theta + phi undoes it
            theta = theta + self.phase[v[0]]
        s_x, s_z = self._parities(t, v)
        return mbqc.adaptive_angle(theta, s_x, s_z, kappa, r)

    def angle_list(self, t, pos) -> AngleList:
        return AngleList((pos,), (self.angle_for(t, pos),))

    def record(self, t, angles: AngleList, outcomes: OutcomeList) -> None:
        bits = outcomes.bits
        if not isinstance(bits, tuple) or len(bits) != len(angles.positions):
            raise ProtocolViolation(f"expected {len(angles.positions)} outcomes, got {bits!r}")
        for pos, b in zip(angles.positions, bits):
            if b not in (0, 1) or isinstance(b, bool):
                raise ProtocolViolation(f"outcome {b!r} is not a bit")
            bit = int(b) ^ self.secret.r_bits[pos]
            role = self.secret.roles[pos]
            if role != "computation":
                self.trap_results[pos] = bit
                continue
            v = self._vertex_of(t, pos)
            unit = self.units[t]
            if v in unit.outputs:
                w = v[0]
                if self._readout_basis(w) == "Z":
                    s_x, _ = self._parities(t, v)
                    bit ^= s_x
                self.readout_results[w] = bit
            else:
                self.results[(t, v)] = bit

    # -- step 4 ----------------------------------------------------------

    def finish_unit(self, t):
        """Carry the output byproducts into the next unit; returns an ``HOrder`` if one is planned."""
        unit = self.units[t]
        s = self.secret
        if t == self.last:
            return None
        self.frame = [list(self._parities(t, v)) for v in unit.outputs]
        self.phase = list(self.patterns[t].phase)
        h_positions = []
        for w in self.steps[t + 1].h_before:
            pos = s.vertex_positions[t][unit.outputs[w]]
            c = s.kappas[pos].k // 4  # kappa restricted to {0, pi}
            fx, fz = self.frame[w]
            # H Z^c X^fx Z^fz = X^(fz^c) Z^fx H up to phase
            self.frame[w] = [fz ^ c, fx]
            s.kappas[pos] = Angle8(0)
            h_positions.append(pos)
        for w, v in enumerate(unit.outputs):
            self.wire_kappa[w] = s.kappas[s.vertex_positions[t][v]]
        if h_positions:
            s.h_instructions |= set(h_positions)
            return HOrder(tuple(sorted(h_positions)))
        return None

    # -- step 5 ----------------------------------------------------------

    def trap_checks(self):
        s = self.secret
        r1_ok = all(self.trap_results.get(p) == bit for p, bit in s.trap_layout_r1.items())
        r2_ok = all(self.trap_results.get(p) == sign for p, (_, sign, _) in s.trap_layout_r2.items())
        return r1_ok, r2_ok

    def expected_bit(self) -> int:
        if self.config.expected is not None:
            return int(self.config.expected)
        dist = direct_output_distribution(self.circuit, self.config.inputs, self.config.readout)
        w = self.config.output_wire
        p1 = sum(p for bits, p in dist.items() if bits[w] == 1)
        return int(p1 > 0.5)

    def decide(self, rng=None) -> Decision:
        rng = rng if rng is not None else self.rng
        q = self.config.q
        u = rng.random()
        if self.config.force_branch:
            branch = self.config.force_branch
        elif u < q:
            branch = EVALUATE
        elif u < q + (1 - q) / 2:
            branch = TEST_R1
        else:
            branch = TEST_R2
        r1_ok, r2_ok = self.trap_checks()
        decoded = tuple(self.readout_results.get(w) for w in (0, 1))
        comp_ok = decoded[self.config.output_wire] == self.expected_bit()
        verdict = {EVALUATE: comp_ok, TEST_R1: r1_ok, TEST_R2: r2_ok}[branch]
        last = self.units[self.last]
        flips = tuple(self.secret.r_bits[self.secret.vertex_positions[self.last][v]] for v in last.outputs)
        return Decision(branch, ACCEPT if verdict else REJECT, flips, decoded, r1_ok, r2_ok, comp_ok)


# ---------------------------------------------------------------------------
# transcript and driver


@dataclass
class Transcript:
    circuit: list
    config: dict
    server: dict
    messages: list = field(default_factory=list)
    alice_actions: list = field(default_factory=list)
    units: list = field(default_factory=list)
    decision: Decision | None = None

    def log(self, msg) -> None:
        self.messages.append(msg)

    @property
    def sent_angles(self) -> list:
        return [a for m in self.messages if isinstance(m, AngleList) for a in m.angles]

    def angles_outside_h(self) -> list:
        """Angles for positions Bob was not told to Hadamard in the same unit."""
        out, hset = [], set()
        for m in self.messages:
            if isinstance(m, EntangleOrder):
                hset = set()
            elif isinstance(m, HOrder):
                hset |= set(m.positions)
            elif isinstance(m, AngleList):
                out += [a for p, a in zip(m.positions, m.angles) if p not in hset]
        return out

    def shape(self) -> list:
        """Message types and lengths: everything Bob sees except the values."""
        shape = []
        for m in self.messages:
            d = message_to_dict(m)
            shape.append((d["type"], tuple(len(v) for k, v in d.items() if isinstance(v, list))))
        return shape

    def to_jsonl(self) -> str:
        lines = [json.dumps({"type": "header", "circuit": self.circuit, "config": self.config, "server": self.server}, sort_keys=True)]
        lines += [json.dumps(message_to_dict(m), sort_keys=True) for m in self.messages]
        for action in self.alice_actions:
            lines.append(json.dumps({"type": "alice_action", **action}, sort_keys=True))
        if self.decision is not None:
            lines.append(json.dumps({"type": "decision", **asdict(self.decision)}, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> Transcript:
        lines = [json.loads(line) for line in text.splitlines() if line.strip()]
        header = lines[0]
        tr = cls(header["circuit"], header["config"], header["server"])
        for d in lines[1:]:
            if d["type"] == "alice_action":
                d = dict(d)
                d.pop("type")
                tr.alice_actions.append(d)
            elif d["type"] == "decision":
                d = dict(d)
                d.pop("type")
                tr.decision = Decision(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})
            else:
                tr.messages.append(message_from_dict(d))
        return tr


def _prep_dict(preps: dict) -> dict:
    return {str(p): str(prep) for p, prep in preps.items()}


def _parse_prep(text: str) -> qsim.Prep:
    if text in ("0", "1"):
        return qsim.Prep(text)
    return qsim.Prep(text[0], Angle8(int(text[1:])))


def run_protocol(circuit, config: ProtocolConfig | None = None, server: ServerStrategy | None = None,
                 seed: int | None = None, trap_policy=None) -> Transcript:
    """Execute one full run and return its transcript (decision included)."""
    config = config or ProtocolConfig()
    if seed is not None:
        config = ProtocolConfig(**{**asdict(config), "seed": seed})
    server = server or ServerStrategy()
    server.reseed([config.seed, 1])
    client = Client(circuit, config, trap_policy)
    store = QubitStore()
    tr = Transcript(list(circuit), asdict(config), server.describe())

    batch = client.prepare()
    for pos in batch.positions:
        store.add(pos, client.secret.preps[pos])
    tr.alice_actions.append({"step": "prepare", "preps": _prep_dict({p: client.secret.preps[p] for p in batch.positions})})
    tr.log(batch)
    server.on_receive(store, batch)

    for t in range(len(client.units)):
        order = client.entangle_order(t)
        tr.log(order)
        returned = server.on_entangle(store, order)
        if not isinstance(returned, ReturnBatch) or sorted(returned.positions) != sorted(order.positions):
            raise ProtocolViolation("server must return exactly the ordered group")
        tr.log(returned)
        batch, relabel, new_preps = client.insert_r2(t, returned)
        store.relabel(relabel)
        for pos, prep in new_preps.items():
            store.add(pos, prep)
        tr.alice_actions.append({"step": "insert_r2", "unit": t, "relabel": {str(k): v for k, v in relabel.items()}, "preps": _prep_dict(new_preps)})
        tr.log(batch)
        server.on_receive(store, batch)

        h_order, sequence = client.measurement_plan(t)
        tr.log(h_order)
        server.on_h_order(store, h_order)
        unit_outcomes = []
        for pos in sequence:
            angles = client.angle_list(t, pos)
            tr.log(angles)
            outcomes = server.on_measure(store, angles)
            if not isinstance(outcomes, OutcomeList):
                raise ProtocolViolation("server must answer with an OutcomeList")
            outcomes = OutcomeList(tuple(outcomes.bits))
            client.record(t, angles, outcomes)
            tr.log(outcomes)
            unit_outcomes.append((pos, outcomes.bits[0]))
        correction = client.finish_unit(t)
        if correction is not None:
            tr.log(correction)
            server.on_h_order(store, correction)
        roles = client.secret.roles
        tr.units.append({
            "gate": client.circuit[t],
            "unit_kind": client.units[t].kind,
            "outcomes": [b for p, b in unit_outcomes if roles[p] == "computation"],
            "trap_outcomes": [b for p, b in unit_outcomes if roles[p] != "computation"],
        })
    tr.decision = client.decide()
    tr.secret = client.secret
    return tr


def replay_outcomes(transcript: Transcript, server: ServerStrategy | None = None) -> list:
    """Rerun a server against the logged Alice messages; returns its outcome bits.

    With an honest server and the same seed this reproduces the logged
    outcomes exactly.
    """
    server = server or ServerStrategy()
    server.reseed([transcript.config["seed"], 1])
    store = QubitStore()
    actions = iter(transcript.alice_actions)
    bits = []
    for msg in transcript.messages:
        if isinstance(msg, QubitBatch):
            action = next(actions)
            if action["step"] == "insert_r2":
                store.relabel({int(k): v for k, v in action["relabel"].items()})
            for pos, text in action["preps"].items():
                store.add(int(pos), _parse_prep(text))
            server.on_receive(store, msg)
        elif isinstance(msg, EntangleOrder):
            server.on_entangle(store, msg)
        elif isinstance(msg, HOrder):
            server.on_h_order(store, msg)
        elif isinstance(msg, AngleList):
            bits += list(server.on_measure(store, msg).bits)
    return bits


def logged_outcomes(transcript: Transcript) -> list:
    return [b for m in transcript.messages if isinstance(m, OutcomeList) for b in m.bits]


# module-level forms of the individual steps


def client_prepare(circuit, config: ProtocolConfig | None = None):
    client = Client(circuit, config)
    batch = client.prepare()
    return client.secret, batch


def server_entangle(store: QubitStore, order: EntangleOrder, server: ServerStrategy | None = None) -> ReturnBatch:
    return (server or ServerStrategy()).on_entangle(store, order)


def server_measure(store: QubitStore, angles: AngleList, h_order: HOrder | None, seed) -> OutcomeList:
    server = ServerStrategy(seed)
    if h_order is not None:
        server.on_h_order(store, h_order)
    return server.on_measure(store, angles)


def branch_counts(decisions) -> dict:
    counts = {EVALUATE: 0, TEST_R1: 0, TEST_R2: 0}
    for d in decisions:
        counts[d.branch] += 1
    return counts


__all__ = [name for name in dir() if not name.startswith("_") and name not in ("itertools", "json", "np")]
