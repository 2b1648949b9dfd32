"""Closed-form diagnostics for binary-feature minimum-volume rules.

These values are reported alongside a fit; apart from ``max_degree`` (the
default beam depth) they never influence the solver.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass


def _check_lambda1(lambda1: float) -> None:
    if not 0 < lambda1 <= 1:
        raise ValueError(f"lambda1 must lie in (0, 1], got {lambda1}")


def max_degree(lambda1: float) -> int:
    """Largest conjunction degree an optimal rule can use: 1 + floor(log2(1/lambda1))."""
    _check_lambda1(lambda1)
    return 1 + math.floor(math.log2(1.0 / lambda1) + 1e-12)


def epsilon_bound(samples: int, d: int, lambda1: float, delta: float) -> float:
    """Uniform deviation term for ``samples`` draws (data or reference).

    sqrt((log(2d)/lambda1 + ceil(1 + log2(1/lambda1)) log(1/lambda1) + log(4/delta)) / (2 samples))
    """
    if samples < 1 or d < 1:
        raise ValueError("samples and d must be >= 1")
    _check_lambda1(lambda1)
    # any delta < 4 keeps log(4/delta) positive; only delta < 1 is a meaningful confidence level
    if not 0 < delta < 4:
        raise ValueError(f"delta must lie in (0, 4), got {delta}")
    inv = 1.0 / lambda1
    num = inv * math.log(2 * d) + math.ceil(1 + math.log2(inv) - 1e-12) * math.log(inv) + math.log(4 / delta)
    return math.sqrt(num / (2 * samples))


def candidate_bound_log(d: int, lambda1: float) -> float:
    """log of the bound 2 (2d)^(1/lambda1) (1/lambda1)^p_max on the number of candidate rules."""
    if d < 1:
        raise ValueError("d must be >= 1")
    _check_lambda1(lambda1)
    inv = 1.0 / lambda1
    return math.log(2) + inv * math.log(2 * d) + max_degree(lambda1) * math.log(inv)


@dataclass(frozen=True)
class TheoryReport:
    m: int
    n: int
    d: int
    lambda1: float
    delta: float
    p_max: int
    epsilon_m: float
    epsilon_n: float
    log_candidate_bound: float

    def to_dict(self) -> dict:
        return asdict(self)


def theory_report(m: int, n: int, d: int, lambda1: float, delta: float = 0.05) -> TheoryReport | None:
    """All diagnostics at once; ``None`` when lambda1 is outside (0, 1]."""
    if not 0 < lambda1 <= 1:
        return None
    return TheoryReport(
        m=m,
        n=n,
        d=d,
        lambda1=lambda1,
        delta=delta,
        p_max=max_degree(lambda1),
        epsilon_m=epsilon_bound(m, d, lambda1, delta),
        epsilon_n=epsilon_bound(n, d, lambda1, delta),
        log_candidate_bound=candidate_bound_log(d, lambda1),
    )
