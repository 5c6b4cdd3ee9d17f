import dataclasses
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blindlattice import mbqc, qsim
from blindlattice.angles import ALL_ANGLES, HALF_PI, PI, Angle8

I2, H, X, Y, Z = qsim.I2, qsim.H, qsim.X, qsim.Y, qsim.Z
rz, rx, CZ = qsim.rz, qsim.rx, qsim.CZ


def same_up_to_phase(u, v, tol=1e-10):
    # compare columns on every computational basis state
    return qsim.matrices_equal_up_to_phase(u, v, tol)


# -- gate identities -------------------------------------------------------

DECOMPOSITIONS = {
    "I": H @ rz(0) @ H @ rz(0),
    "S": H @ rz(0) @ H @ rz(np.pi / 2),
    "T": H @ rz(0) @ H @ rz(np.pi / 4),
    "Z": H @ rz(0) @ H @ rz(np.pi),
    "X": H @ rz(np.pi) @ H @ rz(0),
    "Y": H @ rz(np.pi) @ H @ rz(np.pi),
    "H": H @ rz(0) @ H @ rz(0) @ H @ rz(0),
}


@pytest.mark.parametrize("gate", sorted(DECOMPOSITIONS))
def test_single_qubit_decompositions(gate):
    assert same_up_to_phase(DECOMPOSITIONS[gate], qsim.GateSpec(gate).matrix())


def test_cnot_decomposition():
    m = np.kron(rz(np.pi / 2), rx(np.pi / 2)) @ CZ @ np.kron(I2, rx(-np.pi / 2)) @ CZ
    assert same_up_to_phase(m, qsim.CNOT)


def test_commutation_identities():
    for theta in np.linspace(-np.pi, np.pi, 9):
        np.testing.assert_allclose(np.kron(rz(theta), I2) @ CZ, CZ @ np.kron(rz(theta), I2), atol=1e-12)
        np.testing.assert_allclose(H @ rz(theta) @ H, rx(theta), atol=1e-12)
    lhs = np.kron(rx(np.pi), I2) @ CZ
    rhs = np.exp(0.5j * np.pi) * CZ @ np.kron(rx(np.pi), rz(np.pi))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    np.testing.assert_allclose(np.kron(Y, I2) @ CZ, CZ @ np.kron(Y, Z), atol=1e-12)


def test_universality_set():
    assert mbqc.is_universal(["H", "T", "CNOT", "S"])
    assert not mbqc.is_universal(["H", "T"])


# -- lattice ---------------------------------------------------------------


def lattice_oracle(m, n):
    """Enumerate rules 3-5 literally."""
    edges = set()
    for x in range(1, m + 1):
        for y in range(1, n):
            edges.add(((x, y), (x, y + 1)))
    for x in range(1, m):
        for y in range(1, n + 1):
            if (x % 2 == 1 and y % 5 == 1) or (x % 2 == 0 and y % 5 == 3):
                for yy in (y, y + 2):
                    if yy <= n:
                        edges.add(((x, yy), (x + 1, yy)))
    return edges


def test_lattice_single_row():
    assert mbqc.build_lattice(1, 3).edges == {((1, 1), (1, 2)), ((1, 2), (1, 3))}


def test_lattice_two_by_five():
    edges = mbqc.build_lattice(2, 5).edges
    vertical = {e for e in edges if e[0][1] == e[1][1]}
    assert len(edges) == 10
    assert vertical == {((1, 1), (2, 1)), ((1, 3), (2, 3))}


def test_lattice_three_by_five_even_rows():
    edges = mbqc.build_lattice(3, 5).edges
    assert ((2, 3), (3, 3)) in edges
    assert ((2, 5), (3, 5)) in edges


def test_lattice_degenerate_and_errors():
    assert mbqc.build_lattice(1, 1).edges == frozenset()
    assert {mbqc.edge_rule(e) for e in mbqc.build_lattice(1, 7).edges} == {3}
    # a single column still carries the rule-4 vertical at y = 1
    assert mbqc.build_lattice(3, 1).edges == {((1, 1), (2, 1))}
    with pytest.raises(ValueError):
        mbqc.build_lattice(0, 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 15))
def test_lattice_rule_partition(m, n):
    lat = mbqc.build_lattice(m, n)
    assert lat.edges == lattice_oracle(m, n)
    assert mbqc.build_lattice(m, n) == lat
    for a, b in lat.edges:
        assert a != b
        rule = mbqc.edge_rule((a, b))
        if a[0] == b[0]:
            assert rule == 3
        else:
            assert rule in (4, 5)
            assert (rule == 4) == (a[0] % 2 == 1)


# -- units and patterns ----------------------------------------------------


def test_unit_shapes():
    assert len(mbqc.SIX.vertices) == 6 and len(mbqc.SIX.edges) == 6
    assert len(mbqc.EIGHT.vertices) == 8 and len(mbqc.EIGHT.edges) == 8
    assert mbqc.SIX.inputs == [(0, 0), (1, 0)]
    assert mbqc.EIGHT.outputs == [(0, 3), (1, 3)]
    with pytest.raises(ValueError):
        mbqc.ClusterUnit("ten")


def test_pattern_identity_all_zero():
    unit, pattern = mbqc.gate_pattern("I")
    assert unit is mbqc.SIX or unit == mbqc.SIX
    assert all(c.angle == Angle8(0) for c in pattern.commands)


def test_pattern_t_slot():
    _, pattern = mbqc.gate_pattern("T")
    first = pattern.commands[0]
    assert first.vertex == (0, 0)
    assert first.rotation == Angle8(1)
    assert all(c.angle == Angle8(0) for c in pattern.commands[1:])


def test_pattern_cnot_corrections():
    unit, pattern = mbqc.gate_pattern("CNOT")
    assert unit == mbqc.EIGHT
    assert ("H", 0) in pattern.corrections
    assert pattern.absorb_wires == [1]


def test_dependencies_refer_to_earlier_commands():
    for gate in mbqc.GATE_LABELS:
        _, pattern = mbqc.gate_pattern(gate)
        seen = set()
        for cmd in pattern.commands:
            assert cmd.x_deps <= seen and cmd.z_deps <= seen
            seen.add(cmd.vertex)
        assert seen == set(pattern.unit.measured)


def test_unknown_gate():
    with pytest.raises(ValueError):
        mbqc.gate_pattern("SWAP")


# -- angle arithmetic ------------------------------------------------------


def test_adaptive_angle_examples():
    q = Angle8(1)
    assert mbqc.adaptive_angle(q, 0, 0) == Angle8(1)
    assert mbqc.adaptive_angle(q, 1, 0) == Angle8(7)
    assert mbqc.adaptive_angle(q, 0, 1, Angle8(2), 1) == Angle8(3)


def test_adaptive_angle_exhaustive():
    for t, sx, sz, kappa, r in itertools.product(range(8), (0, 1), (0, 1), range(8), (0, 1)):
        want = ((-1) ** sx * t + 4 * sz + kappa + 4 * r) % 8
        assert mbqc.adaptive_angle(Angle8(t), sx, sz, Angle8(kappa), r).k == want


def test_adaptive_angle_is_bijection():
    for sx, sz, kappa, r in itertools.product((0, 1), (0, 1), range(8), (0, 1)):
        image = {mbqc.adaptive_angle(a, sx, sz, Angle8(kappa), r) for a in ALL_ANGLES}
        assert image == set(ALL_ANGLES)


def test_absorb_examples():
    assert mbqc.absorb_cnot_correction(Angle8(0)) == Angle8(6)
    assert mbqc.absorb_cnot_correction(HALF_PI) == Angle8(0)
    a = Angle8(3)
    for _ in range(8):
        a = mbqc.absorb_cnot_correction(a)
    assert a == Angle8(3)


def test_absorb_two_path_oracle():
    rng = np.random.default_rng(5)
    for _ in range(5):
        psi = qsim.random_state(2, rng)
        for eta in ALL_ANGLES:
            for s in (0, 1):
                # path 1: project onto the explicitly rotated basis vector Rz(-pi/2)|+-_eta>
                bra = (rz(-np.pi / 2) @ qsim.planar_vector(eta.radians, s)).conj()
                reduced = np.tensordot(bra, psi.amps.reshape(2, 2), axes=([0], [0]))
                p1 = float(np.vdot(reduced, reduced).real)
                # path 2: plain planar measurement at the absorbed angle
                p2 = qsim.measure_planar(psi, 0, mbqc.absorb_cnot_correction(eta), outcome=s)[2]
                assert p1 == pytest.approx(p2, abs=1e-12)


def test_absorbed_angle_undoes_leftover_rotation():
    # raw = Rz(phi) ideal, measured at eta + phi, has the statistics of ideal at eta
    rng = np.random.default_rng(6)
    psi = qsim.random_state(1, rng)
    for phi in ALL_ANGLES:
        raw = qsim.apply_matrix(psi, rz(phi.radians), [0])
        for eta in ALL_ANGLES:
            p_raw = qsim.measure_planar(raw, 0, eta + phi, outcome=0)[2]
            p_ideal = qsim.measure_planar(psi, 0, eta, outcome=0)[2]
            assert p_raw == pytest.approx(p_ideal, abs=1e-12)


def test_angle8_arithmetic():
    assert Angle8(9) == Angle8(1)
    assert Angle8(3) - HALF_PI == Angle8(1)
    assert -Angle8(1) == Angle8(7)
    assert PI * 3 == PI
    assert Angle8.from_radians(np.pi / 2) == HALF_PI
    with pytest.raises(ValueError):
        Angle8.from_radians(0.1)
    with pytest.raises(TypeError):
        Angle8(1.5)


# -- branch simulation -----------------------------------------------------


def test_identity_branch_zero():
    unit, pattern = mbqc.gate_pattern("I")
    out, prob = mbqc.simulate_unit_branch(unit, pattern, qsim.basis_state([0, 0]), [0] * 4)
    assert prob > 0
    assert qsim.equal_up_to_global_phase(out, qsim.basis_state([0, 0]))


def test_t_branch_zero():
    unit, pattern = mbqc.gate_pattern("T")
    psi = qsim.prepare_state([qsim.Plus(0), qsim.Zero])
    out, _ = mbqc.simulate_unit_branch(unit, pattern, psi, [0] * 4)
    want = qsim.StateVector._trusted(np.kron(qsim.T @ H @ [1, 0], [1, 0]))
    assert qsim.equal_up_to_global_phase(out, want)


def test_cnot_every_branch_on_10():
    unit, pattern = mbqc.gate_pattern("CNOT")
    total = 0.0
    for branch in itertools.product((0, 1), repeat=6):
        out, prob = mbqc.simulate_unit_branch(unit, pattern, qsim.basis_state([1, 0]), branch)
        assert qsim.equal_up_to_global_phase(out, qsim.basis_state([1, 1]))
        total += prob
    assert total == pytest.approx(1)


def test_simulate_rejects_wrong_outcome_count():
    unit, pattern = mbqc.gate_pattern("I")
    with pytest.raises(ValueError):
        mbqc.simulate_unit_branch(unit, pattern, qsim.basis_state([0, 0]), [0, 0])


@pytest.mark.parametrize("gate", mbqc.GATE_LABELS)
def test_every_gate_passes_branch_oracle(gate):
    rep = mbqc.verify_unit_implements_gate(gate)
    assert rep.branches_checked == (16 if gate in mbqc.SIX_GATES else 64)
    assert rep.inputs_checked == 6
    assert rep.max_infidelity <= 1e-9


def test_oracle_rejects_zero_idle_wire_for_x():
    unit, pattern = mbqc.gate_pattern("X")
    commands = tuple(
        dataclasses.replace(c, angle=Angle8(0)) if c.vertex[0] == 1 else c for c in pattern.commands
    )
    broken = dataclasses.replace(pattern, commands=commands)
    with pytest.raises(mbqc.UnitVerificationFailed) as info:
        mbqc.verify_unit_implements_gate("X", pattern=broken)
    assert info.value.infidelity > 0.1


def test_eight_unit_single_qubit_gate_needs_hadamards():
    # an eight-qubit unit can carry T on wire 0, at the price of H on both outputs
    _, base = mbqc.gate_pattern("H")
    angles = {(0, 2): 7}
    commands = tuple(dataclasses.replace(c, angle=Angle8(angles.get(c.vertex, 0))) for c in base.commands)
    fig5 = dataclasses.replace(base, gate="T", commands=commands, corrections=(("H", 0), ("H", 1)))
    assert mbqc.verify_unit_implements_gate("T", pattern=fig5).max_infidelity <= 1e-9
    without = dataclasses.replace(fig5, corrections=())
    with pytest.raises(mbqc.UnitVerificationFailed):
        mbqc.verify_unit_implements_gate("T", pattern=without)


# -- Hadamard frames -------------------------------------------------------


def test_framed_patterns_pass_branch_oracle():
    patterns = mbqc.all_framed_patterns()
    assert len(patterns) == 28
    for p in patterns:
        assert mbqc.verify_unit_implements_gate(p.gate, pattern=p).max_infidelity <= 1e-9


def test_missing_frame_transitions():
    assert mbqc.frame_transitions("T", (1, 0)) == {}
    assert mbqc.frame_transitions("CNOT", (0, 1)) == {}
    assert set(mbqc.frame_transitions("H", (0, 0))) == {(0, 1)}
    with pytest.raises(ValueError):
        mbqc.framed_pattern("S", (1, 1), (1, 1))


def test_plan_avoids_hadamards_when_possible():
    init, steps = mbqc.plan_frames(["H", "CNOT", "T"])
    assert all(step.h_before == () for step in steps)
    init, steps = mbqc.plan_frames(["CNOT", "T", "CNOT", "S"])
    assert sum(len(s.h_before) for s in steps) == 1


@settings(max_examples=80, deadline=None)
@given(st.lists(st.sampled_from(mbqc.GATE_LABELS), min_size=1, max_size=8))
def test_plan_is_consistent(circuit):
    init, steps = mbqc.plan_frames(circuit)
    frame, phase = tuple(init), (0, 0)
    for i, (gate, step) in enumerate(zip(circuit, steps)):
        p = step.pattern
        assert p.gate == gate
        if i == 0:
            assert step.h_before == ()
        for w in step.h_before:
            assert phase[w] == 0
        expected_in = tuple(f ^ (w in step.h_before) for w, f in enumerate(frame))
        assert p.frame_in == expected_in
        frame, phase = p.frame_out, p.phase


def test_circuit_columns_share_boundaries():
    assert mbqc.circuit_columns(["I"]) == 3
    assert mbqc.circuit_columns(["I", "H"]) == 6
    assert mbqc.circuit_columns(["CNOT", "CNOT", "T"]) == 9


def test_export_json_schema():
    data = mbqc.export_json(2, 5, ["T", "CNOT"])
    json.dumps(data)
    assert set(data) == {"m", "n", "edges", "units"}
    assert len(data["edges"]) == 10
    assert data["units"][0] == {"kind": "six", "gate": "T", "angles_k": [7, 0, 0, 0], "corrections": []}
    assert data["units"][1]["kind"] == "eight"
