"""Server strategies for probing soundness.

Every strategy only sees what an honest server sees: the public messages
and its own quantum memory. None of them can reach the client's secret.
"""

from __future__ import annotations

import numpy as np

from . import qsim
from .angles import ALL_ANGLES
from .protocol import OutcomeList, ReturnBatch, ServerStrategy

# |0>, |1> and |+-_k> for every eighth of pi
EIGHTEEN_STATES = (qsim.Zero, qsim.One) + tuple(qsim.Prep(s, a) for a in ALL_ANGLES for s in "+-")

FAKE_DISTRIBUTIONS = {
    "uniform18": EIGHTEEN_STATES,
    "planar": tuple(qsim.Prep(s, a) for a in ALL_ANGLES for s in "+-"),
    "computational": (qsim.Zero, qsim.One),
    "zero": (qsim.Zero,),
}


class Honest(ServerStrategy):
    name = "honest"


class FakeGraph(ServerStrategy):
    """Swap every received qubit for a fresh sample, then follow the orders honestly."""

    name = "fake_graph"

    def __init__(self, seed=None, dist="uniform18"):
        if dist not in FAKE_DISTRIBUTIONS:
            raise ValueError(f"unknown replacement distribution {dist!r}; choose from {sorted(FAKE_DISTRIBUTIONS)}")
        super().__init__(seed, dist=dist)
        self.states = FAKE_DISTRIBUTIONS[dist]

    def on_receive(self, store, batch):
        for pos in batch.positions:
            prep = self.states[int(self.rng.integers(len(self.states)))]
            store.replace(pos, prep, self.rng)


class FlipOutcomes(ServerStrategy):
    """Honest execution, then each reported bit is flipped with probability ``p``."""

    name = "flip_outcomes"

    def __init__(self, seed=None, p=0.5):
        p = float(p)
        if not 0 <= p <= 1:
            raise ValueError(f"p must lie in [0, 1], got {p}")
        super().__init__(seed, p=p)
        self.p = p

    def on_measure(self, store, angles):
        honest = super().on_measure(store, angles)
        flips = self.rng.random(len(honest.bits)) < self.p
        return OutcomeList(tuple(b ^ int(f) for b, f in zip(honest.bits, flips)))


class SkipEntangle(ServerStrategy):
    """Never applies the ordered CZ gates."""

    name = "skip_entangle"

    def on_entangle(self, store, order):
        return ReturnBatch(order.positions)


def honest(seed=None) -> ServerStrategy:
    return Honest(seed)


def fake_graph(dist="uniform18", seed=None) -> ServerStrategy:
    return FakeGraph(seed, dist=dist)


def flip_outcomes(p, seed=None) -> ServerStrategy:
    return FlipOutcomes(seed, p=p)


def skip_entangle(seed=None) -> ServerStrategy:
    return SkipEntangle(seed)


STRATEGIES = {
    "honest": Honest,
    "fake_graph": FakeGraph,
    "fake": FakeGraph,
    "flip_outcomes": FlipOutcomes,
    "flip": FlipOutcomes,
    "skip_entangle": SkipEntangle,
    "skip": SkipEntangle,
}


def parse_strategy(text: str, seed=None) -> ServerStrategy:
    """Build a strategy from ``name`` or ``name:key=value,key=value``.

    >>> parse_strategy("flip:p=0.25").p
    0.25
    """
    name, _, rest = text.strip().partition(":")
    if name not in STRATEGIES:
        raise ValueError(f"unknown strategy {name!r}; choose from {sorted(set(STRATEGIES))}")
    params = {}
    for item in filter(None, (part.strip() for part in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq:
            raise ValueError(f"strategy parameter {item!r} is not key=value")
        params[key.strip()] = value.strip()
    try:
        return STRATEGIES[name](seed, **params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {name}: {params}") from exc


def replacement_pass_probability(dist="uniform18") -> float:
    """Chance that a replaced ``|+-_phi>`` trap still yields its predicted outcome.

    Averaged over the replacement distribution and over ``phi``; for any
    distribution symmetric under ``+ <-> -`` this is exactly 1/2.
    """
    states = FAKE_DISTRIBUTIONS[dist]
    total = 0.0
    for phi in ALL_ANGLES:
        bra = qsim.planar_vector(phi.radians, 0).conj()
        for prep in states:
            total += abs(bra @ prep.vector()) ** 2
    return total / (len(ALL_ANGLES) * len(states))
