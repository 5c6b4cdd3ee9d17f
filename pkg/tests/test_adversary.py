import math

import numpy as np
import pytest

from blindlattice import adversary, qsim
from blindlattice import protocol as P


def run(circuit, strategy, seed, **cfg):
    return P.run_protocol(circuit, P.ProtocolConfig(**cfg), strategy, seed=seed)


def trap_passes(tr):
    """Per-trap pass/fail read back from the transcript and the revealed secret."""
    s = tr.secret
    outcome = {}
    for a, b in zip(tr.messages, tr.messages[1:]):
        if isinstance(a, P.AngleList):
            outcome.update(zip(a.positions, b.bits))
    r1 = [outcome[p] ^ s.r_bits[p] == bit for p, bit in s.trap_layout_r1.items()]
    r2 = [outcome[p] ^ s.r_bits[p] == sign for p, (_, sign, _) in s.trap_layout_r2.items()]
    return r1, r2


def within(successes, n, p, k=3):
    return abs(successes - n * p) <= k * math.sqrt(n * p * (1 - p))


def test_honest_traps_always_pass():
    for seed in range(20):
        r1, r2 = trap_passes(run(["T", "CNOT"], adversary.honest(), seed))
        assert all(r1) and all(r2)


@pytest.mark.parametrize("dist", sorted(adversary.FAKE_DISTRIBUTIONS))
def test_replacement_pass_probability_is_half(dist):
    assert adversary.replacement_pass_probability(dist) == pytest.approx(0.5, abs=1e-12)


def test_fake_graph_traps_pass_half_the_time():
    r1_all, r2_all = [], []
    for seed in range(150):
        r1, r2 = trap_passes(run(["I"], adversary.fake_graph(), seed))
        r1_all += r1
        r2_all += r2
    assert within(sum(r1_all), len(r1_all), 0.5)
    assert within(sum(r2_all), len(r2_all), 0.5)


def test_fake_graph_is_caught_by_the_traps():
    rejected = sum(not run(["I"], adversary.fake_graph(), s, q=0.0).decision.accepted for s in range(60))
    assert rejected >= 55


def test_fake_graph_rejects_unknown_distribution():
    with pytest.raises(ValueError):
        adversary.fake_graph("gaussian")


def test_replace_collapses_entangled_partner():
    store = P.QubitStore()
    store.add(0, qsim.Plus(0))
    store.add(1, qsim.Plus(0))
    store.cz(0, 1)
    store.replace(0, qsim.One, np.random.default_rng(0))
    assert store.factor_sizes() == [1, 1]
    assert store.state_of([0]).probabilities()[1] == pytest.approx(1)


def test_flip_zero_behaves_honestly():
    for seed in range(20):
        tr = run(["X"], adversary.flip_outcomes(0.0), seed, force_branch=P.EVALUATE)
        r1, r2 = trap_passes(tr)
        assert all(r1) and all(r2)
        assert tr.decision.decoded[0] == 1


def test_flip_one_fails_every_trap():
    for seed in range(20):
        tr = run(["T"], adversary.flip_outcomes(1.0), seed, q=0.0)
        r1, r2 = trap_passes(tr)
        assert not any(r1) and not any(r2)
        assert not tr.decision.accepted


def test_flip_half_per_trap_rate():
    passes = []
    for seed in range(100):
        r1, r2 = trap_passes(run(["I"], adversary.flip_outcomes(0.5), seed))
        passes += r1 + r2
    assert within(sum(passes), len(passes), 0.5)


def test_flip_rejects_bad_probability():
    with pytest.raises(ValueError):
        adversary.flip_outcomes(1.5)


def test_skip_entangle_passes_traps():
    for seed in range(20):
        r1, r2 = trap_passes(run(["CNOT", "H"], adversary.skip_entangle(), seed))
        assert all(r1) and all(r2)


def test_skip_entangle_breaks_the_computation():
    decoded = {run(["X"], adversary.skip_entangle(), s, force_branch=P.EVALUATE).decision.decoded[0] for s in range(30)}
    assert decoded == {0, 1}


def test_strategies_are_deterministic_per_seed():
    for make in (adversary.fake_graph, lambda: adversary.flip_outcomes(0.3), adversary.skip_entangle):
        assert run(["S"], make(), 4).to_jsonl() == run(["S"], make(), 4).to_jsonl()


def test_strategy_hooks_see_no_secret():
    seen = []

    class Spy(P.ServerStrategy):
        def on_measure(self, store, angles):
            seen.append((store, angles))
            return super().on_measure(store, angles)

    run(["T"], Spy(), 0)
    for store, msg in seen:
        for obj in (store, msg):
            for value in vars(obj).values() if hasattr(obj, "__dict__") else ():
                assert not isinstance(value, (P.ClientSecret, P.Client))
        assert isinstance(msg, P.AngleList)


@pytest.mark.parametrize(
    "text,cls,params",
    [
        ("honest", adversary.Honest, {}),
        ("fake", adversary.FakeGraph, {"dist": "uniform18"}),
        ("fake_graph:dist=planar", adversary.FakeGraph, {"dist": "planar"}),
        ("flip:p=0.25", adversary.FlipOutcomes, {"p": 0.25}),
        ("skip_entangle", adversary.SkipEntangle, {}),
    ],
)
def test_parse_strategy(text, cls, params):
    strat = adversary.parse_strategy(text)
    assert isinstance(strat, cls)
    assert strat.params == params


@pytest.mark.parametrize("text", ["nope", "flip:p", "flip:q=0.5", "flip:p=abc", "fake:dist=gauss"])
def test_parse_strategy_errors(text):
    with pytest.raises(ValueError):
        adversary.parse_strategy(text)


def test_describe_names_the_strategy():
    assert adversary.parse_strategy("flip:p=0.5").describe() == {"name": "flip_outcomes", "p": 0.5}
