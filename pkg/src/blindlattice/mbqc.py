"""Latticed cluster state, unit clusters and their measurement patterns.

A unit cluster is two horizontal wires of ``L`` vertices each (``L = 3``
for the six-qubit unit, ``L = 4`` for the eight-qubit unit) with CZ along
each wire and vertical CZs at wire columns 0 and 2, the same spacing the
lattice rules use (``(x, y)`` and ``(x, y + 2)``). Vertices are labelled
``(wire, column)``; column 0 holds the inputs and column ``L - 1`` the
outputs.

Measuring vertex ``(w, c)`` at planar angle ``a`` teleports the logical
qubit of wire ``w`` to ``(w, c + 1)`` as ``X^s H Rz(-a)``. Byproducts are
tracked with the usual flow rule: outcome ``s`` of vertex ``i`` adds ``X``
to ``f(i) = (w, c + 1)`` and ``Z`` to every other neighbour of ``f(i)``.
A Pauli frame ``X^x Z^z`` on a vertex measured at ``a`` is undone by
measuring at ``(-1)^x a + z pi`` instead.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import qsim
from .angles import HALF_PI, PI, Angle8

GATE_LABELS = ("I", "S", "T", "X", "Y", "Z", "H", "CNOT")
UNIVERSAL_SET = frozenset({"H", "T", "CNOT"})
SIX_GATES = frozenset({"I", "S", "T", "X", "Y", "Z"})
EIGHT_GATES = frozenset({"H", "CNOT"})

Vertex = tuple[int, int]


class UnitVerificationFailed(AssertionError):
    def __init__(self, gate, branch, input_index, infidelity):
        super().__init__(
            f"{gate}: branch {branch} on input #{input_index} has infidelity {infidelity:.3g}"
        )
        self.gate = gate
        self.branch = branch
        self.input_index = input_index
        self.infidelity = infidelity


def is_universal(labels) -> bool:
    return UNIVERSAL_SET <= set(labels)


# ---------------------------------------------------------------------------
# lattice


@dataclass(frozen=True)
class LatticeSpec:
    m: int
    n: int
    edges: frozenset

    @property
    def num_vertices(self) -> int:
        return self.m * self.n

    def sorted_edges(self) -> list:
        return sorted(self.edges)


def _edge(a, b):
    return (a, b) if a <= b else (b, a)


def edge_rule(edge) -> int:
    """Which construction rule (3, 4 or 5) produced ``edge``; 0 if none."""
    (x1, y1), (x2, y2) = edge
    if x1 == x2 and y2 == y1 + 1:
        return 3
    if y1 == y2 and x2 == x1 + 1:
        x, y = x1, y1
        # vertical edges come in pairs at columns y0 and y0 + 2
        starts = (y, y - 2)
        if x % 2 == 1 and any(s >= 1 and s % 5 == 1 for s in starts):
            return 4
        if x % 2 == 0 and any(s >= 1 and s % 5 == 3 for s in starts):
            return 5
    return 0


def build_lattice(m: int, n: int) -> LatticeSpec:
    """Edge set of the ``m x n`` latticed state (1-based ``(row, column)`` vertices)."""
    if m < 1 or n < 1:
        raise ValueError(f"lattice needs m, n >= 1, got ({m}, {n})")
    edges = set()
    for x in range(1, m + 1):
        for y in range(1, n):
            edges.add(_edge((x, y), (x, y + 1)))
    for x in range(1, m):
        residue = 1 if x % 2 == 1 else 3
        for y in range(1, n + 1):
            if y % 5 != residue:
                continue
            for col in (y, y + 2):
                if col <= n:
                    edges.add(_edge((x, col), (x + 1, col)))
    return LatticeSpec(m, n, frozenset(edges))


# ---------------------------------------------------------------------------
# unit clusters


@dataclass(frozen=True)
class ClusterUnit:
    kind: str  # "six" or "eight"

    @property
    def length(self) -> int:
        return 3 if self.kind == "six" else 4

    @property
    def vertices(self) -> list:
        return [(w, c) for w in (0, 1) for c in range(self.length)]

    @property
    def edges(self) -> list:
        horizontal = [((w, c), (w, c + 1)) for w in (0, 1) for c in range(self.length - 1)]
        vertical = [((0, c), (1, c)) for c in (0, 2)]
        return horizontal + vertical

    @property
    def inputs(self) -> list:
        return [(0, 0), (1, 0)]

    @property
    def outputs(self) -> list:
        return [(0, self.length - 1), (1, self.length - 1)]

    @property
    def measured(self) -> list:
        """Non-output vertices in measurement order (column by column)."""
        return [(w, c) for c in range(self.length - 1) for w in (0, 1)]

    def neighbours(self, v: Vertex) -> set:
        out = set()
        for a, b in self.edges:
            if a == v:
                out.add(b)
            elif b == v:
                out.add(a)
        return out

    def __post_init__(self):
        if self.kind not in ("six", "eight"):
            raise ValueError(f"unit kind must be 'six' or 'eight', got {self.kind!r}")


SIX = ClusterUnit("six")
EIGHT = ClusterUnit("eight")


@dataclass(frozen=True)
class Command:
    vertex: Vertex
    angle: Angle8
    x_deps: frozenset = frozenset()
    z_deps: frozenset = frozenset()

    @property
    def rotation(self) -> Angle8:
        """Argument of the ``Rz`` this measurement applies (``H Rz(-angle)``)."""
        return -self.angle


@dataclass(frozen=True)
class MeasurementPattern:
    """Measurement commands of one unit plus what remains on its outputs.

    ``corrections`` lists ``(gate, wire)`` pairs applied to the outputs after
    the Pauli byproducts are removed. ``"H"`` is an explicit Hadamard;
    ``"Rz+"`` is ``Rz(pi/2)``, which can instead be absorbed by the next
    measurement of that wire (see :func:`absorb_cnot_correction`).

    Framed patterns (see :func:`framed_pattern`) act on wires whose state
    carries a pending Hadamard: with ``frame_in = (a, b)`` the unit maps
    ``(H^a x H^b) psi`` to ``Rz(phase) (H^a' x H^b') G psi`` where
    ``frame_out = (a', b')`` and ``phase`` is in eighths of pi per wire.
    """

    gate: str
    unit: ClusterUnit
    commands: tuple
    output_x_deps: dict = field(default_factory=dict)
    output_z_deps: dict = field(default_factory=dict)
    corrections: tuple = ()
    frame_in: tuple = (0, 0)
    frame_out: tuple = (0, 0)
    phase: tuple = (0, 0)

    @property
    def absorb_wires(self) -> list:
        return [w for g, w in self.corrections if g == "Rz+"]

    @property
    def hadamard_wires(self) -> list:
        return [w for g, w in self.corrections if g == "H"]

    @property
    def angles_k(self) -> list:
        return [c.angle.k for c in self.commands]


# physical measurement angles (multiples of pi/4) per wire, left to right
_ANGLES = {
    "I": ((0, 0), (0, 0)),
    "S": ((6, 0), (0, 0)),
    "T": ((7, 0), (0, 0)),
    "Z": ((4, 0), (0, 0)),
    "X": ((0, 4), (4, 0)),
    "Y": ((4, 4), (4, 0)),
    "H": ((0, 0, 0), (0, 0, 0)),
    "CNOT": ((0, 0, 2), (0, 6, 6)),
}
_CORRECTIONS = {
    "H": (("H", 1),),
    "CNOT": (("H", 0), ("Rz+", 1)),
}


def flow_dependencies(unit: ClusterUnit):
    """Static X/Z dependency sets for every vertex of ``unit``.

    Returns ``(x_deps, z_deps)`` mapping each vertex to the frozenset of
    measured vertices whose outcomes it depends on.
    """
    x_deps = {v: set() for v in unit.vertices}
    z_deps = {v: set() for v in unit.vertices}
    for w, c in unit.measured:
        succ = (w, c + 1)
        x_deps[succ] ^= {(w, c)}
        for nb in unit.neighbours(succ) - {(w, c)}:
            z_deps[nb] ^= {(w, c)}
    return (
        {v: frozenset(s) for v, s in x_deps.items()},
        {v: frozenset(s) for v, s in z_deps.items()},
    )


def gate_pattern(gate: str):
    """Compile ``gate`` to ``(ClusterUnit, MeasurementPattern)``.

    Single-qubit gates act on wire 0 of a six-qubit unit; ``H`` acts on wire
    0 of an eight-qubit unit and ``CNOT`` uses wire 0 as control.
    """
    if gate not in GATE_LABELS:
        raise ValueError(f"unknown gate {gate!r}")
    unit = SIX if gate in SIX_GATES else EIGHT
    x_deps, z_deps = flow_dependencies(unit)
    angles = _ANGLES[gate]
    commands = tuple(
        Command((w, c), Angle8(angles[w][c]), x_deps[(w, c)], z_deps[(w, c)])
        for w, c in unit.measured
    )
    pattern = MeasurementPattern(
        gate=gate,
        unit=unit,
        commands=commands,
        output_x_deps={v: x_deps[v] for v in unit.outputs},
        output_z_deps={v: z_deps[v] for v in unit.outputs},
        corrections=_CORRECTIONS.get(gate, ()),
    )
    return unit, pattern


# (gate, frame_in) -> {frame_out: (wire 0 angles, wire 1 angles, phase)}
_FRAMED = {
    ("H", (0, 0)): {(0, 1): ((0, 0, 0), (0, 0, 0), (0, 0))},
    ("H", (0, 1)): {(0, 0): ((0, 0, 0), (0, 0, 0), (0, 0))},
    ("H", (1, 0)): {(1, 1): ((0, 0, 0), (0, 0, 0), (0, 0))},
    ("H", (1, 1)): {(1, 0): ((0, 0, 0), (0, 0, 0), (0, 0))},
    ("CNOT", (0, 0)): {
        (1, 0): ((0, 0, 6), (0, 2, 2), (0, 2)),
        (1, 1): ((0, 0, 6), (0, 2, 0), (0, 6)),
    },
    ("CNOT", (1, 1)): {
        (0, 0): ((0, 2, 0), (0, 0, 6), (6, 0)),
        (1, 0): ((0, 2, 2), (0, 0, 6), (2, 0)),
    },
}
for _g in ("I", "S", "T", "X", "Y", "Z"):
    for _f in ((0, 0), (0, 1)):
        _FRAMED[(_g, _f)] = {_f: (*_ANGLES[_g], (0, 0))}
for _f in ((1, 0), (1, 1)):
    # under a Hadamard frame on wire 0, X and Z swap roles; Y and I keep theirs
    for _g, _src in (("I", "I"), ("X", "Z"), ("Y", "Y"), ("Z", "X")):
        _FRAMED[(_g, _f)] = {_f: (*_ANGLES[_src], (0, 0))}


def frame_transitions(gate: str, frame_in) -> dict:
    """Output frames reachable by ``gate`` from ``frame_in``, each with its leftover phase.

    Empty when no unit pattern exists (``S`` and ``T`` on a Hadamard-framed
    wire 0, ``CNOT`` from a mixed frame).
    """
    return {out: spec[2] for out, spec in _FRAMED.get((gate, tuple(frame_in)), {}).items()}


def framed_pattern(gate: str, frame_in, frame_out) -> MeasurementPattern:
    frame_in, frame_out = tuple(frame_in), tuple(frame_out)
    try:
        top, bottom, phase = _FRAMED[(gate, frame_in)][frame_out]
    except KeyError:
        raise ValueError(f"no pattern for {gate} from frame {frame_in} to {frame_out}") from None
    unit, base = gate_pattern(gate)
    angles = (top, bottom)
    commands = tuple(
        Command(c.vertex, Angle8(angles[c.vertex[0]][c.vertex[1]]), c.x_deps, c.z_deps) for c in base.commands
    )
    return MeasurementPattern(
        gate=gate,
        unit=unit,
        commands=commands,
        output_x_deps=base.output_x_deps,
        output_z_deps=base.output_z_deps,
        frame_in=frame_in,
        frame_out=frame_out,
        phase=phase,
    )


def all_framed_patterns() -> list:
    return [framed_pattern(g, fin, fout) for (g, fin), outs in sorted(_FRAMED.items()) for fout in sorted(outs)]


@dataclass(frozen=True)
class FrameStep:
    """One unit of a planned chain; ``h_before`` lists wires needing a physical Hadamard first."""

    pattern: MeasurementPattern
    h_before: tuple = ()


def plan_frames(circuit) -> tuple:
    """Choose Hadamard frames along ``circuit`` so that physical Hadamards are rare.

    Returns ``(initial_frame, steps)``. The initial frame is free because the
    client prepares the logical inputs already rotated. Between units a
    physical Hadamard may toggle a wire's frame, but only where no leftover
    phase is pending on that wire. Ties go to fewer leftover phases.
    """
    circuit = list(circuit)
    if not circuit:
        raise ValueError("empty circuit")
    frames = list(itertools.product((0, 1), repeat=2))
    # best[frame] = (cost, phases, initial_frame, steps) for the prefix ending in frame
    best = {f: (0, 0, f, [], (0, 0)) for f in frames}
    for gate in circuit:
        nxt = {}
        for f_end, (cost, nphase, init, steps, phase) in sorted(best.items()):
            for flips in frames:
                if steps == [] and any(flips):
                    continue
                if any(flips[w] and phase[w] for w in (0, 1)):
                    continue
                f_in = (f_end[0] ^ flips[0], f_end[1] ^ flips[1])
                for f_out, ph in sorted(frame_transitions(gate, f_in).items()):
                    h = tuple(w for w in (0, 1) if flips[w])
                    cand = (cost + len(h), nphase + sum(1 for p in ph if p), init,
                            steps + [FrameStep(framed_pattern(gate, f_in, f_out), h)], ph)
                    if f_out not in nxt or cand[:2] < nxt[f_out][:2]:
                        nxt[f_out] = cand
        best = nxt
    cost, _, init, steps, _ = min(best.values(), key=lambda c: c[:2])
    return init, steps


# ---------------------------------------------------------------------------
# angle arithmetic


def adaptive_angle(theta: Angle8, s_x: int, s_z: int, kappa: Angle8 = Angle8(0), r: int = 0) -> Angle8:
    """``(-1)^s_x * theta + s_z * pi + kappa + r * pi`` on the eighths of pi."""
    base = -theta if s_x & 1 else theta
    return base + PI * (s_z & 1) + kappa + PI * (r & 1)


def absorb_cnot_correction(angle: Angle8) -> Angle8:
    """Shift a measurement angle by ``-pi/2``.

    Measuring ``Rz(-pi/2)|phi>`` at ``angle - pi/2`` has the same statistics
    as measuring ``|phi>`` at ``angle``, so the leftover ``Rz(-pi/2)`` on the
    CNOT target never has to be applied.
    """
    return angle - HALF_PI


def input_frame_effects(unit: ClusterUnit, frame_x: dict) -> dict:
    """Z parities induced on neighbours by X byproducts sitting on inputs before the CZs."""
    effects = {}
    for v, x in frame_x.items():
        if x & 1:
            for nb in unit.neighbours(v):
                effects[nb] = effects.get(nb, 0) ^ 1
    return effects


# ---------------------------------------------------------------------------
# branch simulation


def _unit_state(unit: ClusterUnit, input_state: qsim.StateVector):
    """Input on qubits 0 and 1, all other vertices ``|+>``, entangled."""
    order = unit.inputs + [v for v in unit.vertices if v not in unit.inputs]
    rest = qsim.prepare_state([qsim.Plus(0)] * (len(order) - 2))
    state = input_state.tensor(rest)
    for a, b in unit.edges:
        state = qsim.apply_cz(state, order.index(a), order.index(b))
    return state, order


_CORRECTION_MATRICES = {"H": qsim.H, "Rz+": qsim.rz(np.pi / 2)}


def simulate_unit_branch(unit: ClusterUnit, pattern: MeasurementPattern, input_state, outcomes):
    """Run one forced-outcome branch of ``pattern``.

    Returns ``(output, branch_prob)`` where ``output`` is the corrected
    2-qubit state on (wire 0, wire 1).
    """
    outcomes = list(outcomes)
    if len(outcomes) != len(pattern.commands):
        raise ValueError(f"need {len(pattern.commands)} outcomes, got {len(outcomes)}")
    if input_state.num_qubits != 2:
        raise ValueError("unit input must be a 2-qubit state")
    state, alive = _unit_state(unit, input_state)
    results = {}
    prob = 1.0
    for cmd, s in zip(pattern.commands, outcomes):
        s_x = sum(results[d] for d in cmd.x_deps) & 1
        s_z = sum(results[d] for d in cmd.z_deps) & 1
        angle = adaptive_angle(cmd.angle, s_x, s_z)
        _, state, p = qsim.measure_planar(state, alive.index(cmd.vertex), angle, outcome=s, keep=False)
        alive.remove(cmd.vertex)
        results[cmd.vertex] = s
        prob *= p
    for w, v in enumerate(unit.outputs):
        q = alive.index(v)
        if sum(results[d] for d in pattern.output_x_deps[v]) & 1:
            state = qsim.apply_matrix(state, qsim.X, [q])
        if sum(results[d] for d in pattern.output_z_deps[v]) & 1:
            state = qsim.apply_matrix(state, qsim.Z, [q])
        if pattern.phase[w]:
            state = qsim.apply_matrix(state, qsim.rz(-pattern.phase[w] * np.pi / 4), [q])
    for g, w in pattern.corrections:
        state = qsim.apply_matrix(state, _CORRECTION_MATRICES[g], [alive.index(unit.outputs[w])])
    if alive.index(unit.outputs[0]) != 0:
        state = qsim.StateVector._trusted(state.amps.reshape(2, 2).T)
    return state, prob


def gate_matrix(gate: str) -> np.ndarray:
    """Two-wire unitary a unit labelled ``gate`` should implement."""
    if gate == "CNOT":
        return qsim.CNOT.copy()
    single = qsim.GateSpec(gate).matrix()
    return np.kron(single, qsim.I2)


def spanning_inputs() -> list:
    """Four computational basis states plus two states with non-Clifford phases."""
    states = [qsim.basis_state(bits) for bits in itertools.product((0, 1), repeat=2)]
    states.append(qsim.prepare_state([qsim.Plus(1), qsim.Plus(3)]))
    entangled = np.array([np.sqrt(0.6), 0, 0.4 * np.exp(0.25j * np.pi), np.sqrt(0.2) * np.exp(-0.75j * np.pi)])
    states.append(qsim.StateVector(entangled, normalize=True))
    return states


@dataclass
class VerificationReport:
    gate: str
    branches_checked: int
    inputs_checked: int
    max_infidelity: float


def _hadamard_frame(frame) -> np.ndarray:
    return np.kron(qsim.H if frame[0] else qsim.I2, qsim.H if frame[1] else qsim.I2)


def pattern_target(pattern: MeasurementPattern) -> np.ndarray:
    """Two-wire map the pattern must realise, Hadamard frames included."""
    return _hadamard_frame(pattern.frame_out) @ gate_matrix(pattern.gate) @ _hadamard_frame(pattern.frame_in)


def verify_unit_implements_gate(gate: str, tol: float = 1e-9, pattern: MeasurementPattern | None = None) -> VerificationReport:
    """Check every outcome branch of ``gate``'s pattern on :func:`spanning_inputs`.

    ``pattern`` defaults to the unframed compilation of ``gate``.
    """
    if pattern is None:
        pattern = gate_pattern(gate)[1]
    unit = pattern.unit
    target = pattern_target(pattern)
    inputs = spanning_inputs()
    worst = 0.0
    n_branches = 2 ** len(pattern.commands)
    for branch in itertools.product((0, 1), repeat=len(pattern.commands)):
        for i, psi in enumerate(inputs):
            out, _ = simulate_unit_branch(unit, pattern, psi, branch)
            expected = qsim.StateVector._trusted(target @ psi.amps)
            infidelity = 1 - qsim.fidelity(out, expected)
            worst = max(worst, infidelity)
            if infidelity > tol:
                raise UnitVerificationFailed(gate, branch, i, infidelity)
    return VerificationReport(gate, n_branches, len(inputs), worst)


# ---------------------------------------------------------------------------
# circuits and export


def circuit_columns(circuit) -> int:
    """Lattice columns used by a chain of units sharing boundary columns."""
    units = [gate_pattern(g)[0] for g in circuit]
    return 1 + sum(u.length - 1 for u in units)


def export_json(m: int, n: int, circuit=()) -> dict:
    """Lattice plus compiled units in the documented JSON layout."""
    lattice = build_lattice(m, n)
    units = []
    for g in circuit:
        unit, pattern = gate_pattern(g)
        units.append(
            {
                "kind": unit.kind,
                "gate": g,
                "angles_k": pattern.angles_k,
                "corrections": [f"{name}@{wire}" for name, wire in pattern.corrections],
            }
        )
    return {
        "m": m,
        "n": n,
        "edges": [[list(a), list(b)] for a, b in lattice.sorted_edges()],
        "units": units,
    }
