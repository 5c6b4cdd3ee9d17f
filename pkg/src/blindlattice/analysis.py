"""Closed-form bounds, the blindness identity and Monte Carlo acceptance."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import qsim
from .angles import ALL_ANGLES
from .protocol import ProtocolConfig, ServerStrategy, run_protocol


class DomainError(ValueError):
    pass


class SingularDenominator(ZeroDivisionError):
    pass


def _check_unit_interval(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and 0 <= value <= 1):
        raise DomainError(f"{name} must lie in [0, 1], got {value!r}")


# ---------------------------------------------------------------------------
# blindness identity


def input_ensemble() -> list:
    """The 18 single-qubit states a server may be handed: ``|0>``, ``|1>`` and ``|+-_k>``."""
    states = [qsim.Zero, qsim.One]
    states += [qsim.Prep(sign, a) for a in ALL_ANGLES for sign in "+-"]
    return states


def average_density(preps) -> qsim.DensityMatrix:
    preps = list(preps)
    rho = sum(np.outer(p.vector(), p.vector().conj()) for p in preps) / len(preps)
    return qsim.DensityMatrix(rho)


def average_input_density() -> qsim.DensityMatrix:
    return average_density(input_ensemble())


def max_deviation_from_mixed(rho: qsim.DensityMatrix) -> float:
    dim = rho.entries.shape[0]
    return float(np.abs(rho.entries - np.eye(dim) / dim).max())


# ---------------------------------------------------------------------------
# completeness and soundness


def completeness_bound(q: float) -> float:
    """``2q/3 + (1 - q)`` simplified: honest acceptance is at least ``1 - q/3``."""
    _check_unit_interval("q", q)
    return 1 - q / 3


def soundness_bounds(q: float, eps: float) -> tuple:
    """``(xi1, xi2, xi3)`` evaluated as closed forms."""
    _check_unit_interval("q", q)
    _check_unit_interval("epsilon", eps)
    xi1 = 1 - (1 - q) * eps
    xi2 = 1 - eps / 2 + (eps / 2 - 2 / 3) * q
    xi3 = 1 - (1 / 3 - 2 * math.sqrt(eps)) * q
    return xi1, xi2, xi3


def xi3_variants(q: float, eps: float) -> dict:
    """Three forms of the third bound that appear in the derivation."""
    _check_unit_interval("q", q)
    _check_unit_interval("epsilon", eps)
    r = math.sqrt(eps)
    return {
        "1-(1/3-2sqrt(eps))q": 1 - (1 / 3 - 2 * r) * q,
        "1-(2/3-2sqrt(eps))q": 1 - (2 / 3 - 2 * r) * q,
        "1-(1/3+eps-2sqrt(eps))q": 1 - (1 / 3 + eps - 2 * r) * q,
    }


def g(eps: float) -> float:
    """``3 eps / (1 + 3 eps - 6 sqrt(eps))``."""
    den = 1 + 3 * eps - 6 * math.sqrt(eps)
    if abs(den) < 1e-15:
        raise SingularDenominator(f"1 + 3e - 6 sqrt(e) vanishes at e = {eps}")
    return 3 * eps / den


def q_lower_bound(eps: float) -> tuple:
    """``(g(eps), 3 eps / (4 + 3 eps))``: the xi1-vs-xi3 and xi1-vs-xi2 conditions on q."""
    if eps < 0:
        raise DomainError(f"epsilon must be non-negative, got {eps}")
    return g(eps), 3 * eps / (4 + 3 * eps)


def singular_epsilons() -> tuple:
    """Where ``1 + 3e - 6 sqrt(e) = 0``: ``sqrt(e) = 1 +- sqrt(2/3)``, only the minus root in [0, 1]."""
    root = 1 - math.sqrt(2 / 3)
    return (root * root,)


def f(x: float) -> float:
    r = math.sqrt(x)
    return 18 * x * r + 3 * x - 12 * r + 2


def f_prime(x: float) -> float:
    r = math.sqrt(x)
    return 27 * r + 3 - 6 / r


def bisect(func, lo: float, hi: float, tol: float = 1e-6, max_iter: int = 200) -> float:
    flo, fhi = func(lo), func(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise ValueError(f"no sign change on [{lo}, {hi}]")
    for _ in range(max_iter):
        mid = (lo + hi) / 2
        fm = func(mid)
        if fm == 0 or hi - lo < tol:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return (lo + hi) / 2


@dataclass(frozen=True)
class FeasibleRange:
    low: float
    high: float
    stationary: float
    f_at_stationary: float

    @property
    def interval(self) -> tuple:
        return (self.low, self.high)


def epsilon_feasible_range(tol: float = 1e-9) -> FeasibleRange:
    """Roots of ``f`` on [0, 1] bracketed at the minimum of ``f``."""
    stationary = bisect(f_prime, 1e-6, 1.0, tol)
    low = bisect(f, 0.0, stationary, tol)
    high = bisect(f, stationary, 1.0, tol)
    return FeasibleRange(low, high, stationary, f(stationary))


def gentle_check(rho: qsim.DensityMatrix, rho2: qsim.DensityMatrix, eps: float) -> bool:
    """True iff the trace distance of the two states is at most ``2 sqrt(eps)``."""
    if rho.entries.shape != rho2.entries.shape:
        raise qsim.DimMismatch(f"{rho.entries.shape} vs {rho2.entries.shape}")
    if eps < 0:
        raise DomainError("epsilon must be non-negative")
    return qsim.trace_distance(rho, rho2) <= 2 * math.sqrt(eps) + 1e-12


# ---------------------------------------------------------------------------
# reports


@dataclass
class BoundReport:
    q: float
    epsilon: float
    xi1: float
    xi2: float
    xi3: float
    completeness_bound: float
    q_lower_bound: float
    q_lower_bound_xi2: float
    feasible_epsilon: tuple

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def bound_report(q: float, eps: float) -> BoundReport:
    xi1, xi2, xi3 = soundness_bounds(q, eps)
    qlb, qlb2 = q_lower_bound(eps)
    return BoundReport(q, eps, xi1, xi2, xi3, completeness_bound(q), qlb, qlb2, epsilon_feasible_range().interval)


def grid_sweep(q_points: int = 50, eps_points: int = 50) -> list:
    """Rows ``(q, epsilon, xi1, xi2, xi3, q_lb, feasible)`` on a uniform grid of [0, 1]^2."""
    rng = epsilon_feasible_range()
    rows = []
    singular = singular_epsilons()[0]
    for q in np.linspace(0, 1, q_points):
        for eps in np.linspace(0, 1, eps_points):
            q, eps = float(q), float(eps)
            xi1, xi2, xi3 = soundness_bounds(q, eps)
            q_lb = g(eps) if abs(eps - singular) > 1e-12 else math.nan
            rows.append({
                "q": q, "epsilon": eps, "xi1": xi1, "xi2": xi2, "xi3": xi3, "q_lb": q_lb,
                "feasible": rng.low <= eps <= rng.high,
            })
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["q", "epsilon", "xi1", "xi2", "xi3", "q_lb", "feasible"], lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def conditional_xi1_check(points: int = 50) -> dict:
    """Where ``eps >= 2 / (3 (1 - q))`` holds, ``xi1 <= 1/3`` must follow."""
    checked = violations = 0
    for q in np.linspace(0, 1, points):
        for eps in np.linspace(0, 1, points):
            if q >= 1 or eps < 2 / (3 * (1 - q)):
                continue
            checked += 1
            if soundness_bounds(float(q), float(eps))[0] > 1 / 3 + 1e-12:
                violations += 1
    return {"checked": checked, "violations": violations}


def consistency_report() -> dict:
    """Numerical inconsistencies found among the printed bound formulas."""
    rng = epsilon_feasible_range()
    samples = [rng.low, 1 / 9, 0.2, rng.high]
    xi3_rows = []
    for eps in samples:
        variants = xi3_variants(1.0, eps)
        spread = max(variants.values()) - min(variants.values())
        xi3_rows.append({"epsilon": eps, "q": 1.0, **variants, "spread": spread})
    qlb_rows = []
    for eps in samples:
        den = 1 + 3 * eps - 6 * math.sqrt(eps)
        qlb_rows.append({"epsilon": eps, "denominator": den, "q_lower_bound": g(eps), "negative": g(eps) < 0})
    all_negative = all(r["negative"] for r in qlb_rows)
    return {
        "discrepancies": [
            {
                "id": "xi3-forms",
                "description": "The third soundness bound appears as 1-(1/3-2sqrt(eps))q, then as "
                "1-(2/3-2sqrt(eps))q and 1-(1/3+eps-2sqrt(eps))q when compared with xi1; the forms disagree.",
                "detected": any(r["spread"] > 1e-9 for r in xi3_rows),
                "samples": xi3_rows,
            },
            {
                "id": "q-bound-sign",
                "description": "For eps in the feasible range the denominator 1+3eps-6sqrt(eps) is negative, "
                "so q >= 3eps/(1+3eps-6sqrt(eps)) is a negative and therefore vacuous bound (g(1/9) = -1/2).",
                "detected": all_negative,
                "samples": qlb_rows,
            },
        ],
        "feasible_epsilon": rng.interval,
        "singular_epsilon": singular_epsilons()[0],
    }


# ---------------------------------------------------------------------------
# Monte Carlo


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple:
    if trials <= 0:
        raise DomainError("trials must be positive")
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class AcceptanceEstimate:
    rate: float
    ci95: tuple
    accepted: int
    trials: int
    branches: dict

    @property
    def sigma(self) -> float:
        return math.sqrt(max(self.rate * (1 - self.rate), 1e-300) / self.trials)

    def to_dict(self) -> dict:
        return {"rate": self.rate, "ci95": list(self.ci95), "accepted": self.accepted, "trials": self.trials, "branches": self.branches}


def estimate_acceptance(circuit, strategy_factory=None, q: float = 0.5, trials: int = 1000, seed: int = 0,
                        config: ProtocolConfig | None = None) -> AcceptanceEstimate:
    """Run ``trials`` independent protocol instances; trial ``i`` uses seed ``seed + i``.

    ``strategy_factory`` is called once per trial so no strategy state is
    shared between instances; ``None`` means an honest server.
    """
    if trials < 1:
        raise DomainError("trials must be at least 1")
    _check_unit_interval("q", q)
    base = asdict(config) if config else {}
    accepted = 0
    branches = {}
    for i in range(trials):
        cfg = ProtocolConfig(**{**base, "q": q, "seed": seed + i})
        server = strategy_factory() if strategy_factory else ServerStrategy()
        decision = run_protocol(circuit, cfg, server).decision
        accepted += decision.accepted
        key = f"{decision.branch}:{decision.verdict}"
        branches[key] = branches.get(key, 0) + 1
    return AcceptanceEstimate(accepted / trials, wilson_interval(accepted, trials), accepted, trials, dict(sorted(branches.items())))
