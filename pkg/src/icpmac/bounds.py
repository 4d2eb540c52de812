"""Lower bounds on the support-recovery error probability.

Each ``bound_*`` function evaluates one bound for a single environment. The
error probability over all environments is at least the largest of the
per-environment values, which is what :func:`assemble_report` reports as
``overall``.

Only ``sigma_min`` enters the bounds: a larger noise variance can never make
recovery easier, so the smallest admissible variance gives a valid bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from math import comb
from typing import Mapping, Sequence

import numpy as np

from .core import (
    CapacityError,
    EnvironmentData,
    all_signals,
    as_coefficients,
    nearest_neighbor_distances,
    std_normal_cdf,
)

BOUND_NAMES = ("prop1", "prop2", "cor1", "prop3", "cor2")


def _check_sigma(sigma_min: float) -> None:
    if not sigma_min > 0:
        raise ValueError(f"sigma_min must be positive, got {sigma_min}")


def _check_budget(m: int, n_e: int, power: float, name: str) -> None:
    if n_e < 1:
        raise ValueError(f"n_e must be >= 1, got {n_e}")
    if power < 0:
        raise ValueError(f"{name} must be >= 0, got {power}")


def bound_data_dependent(env: EnvironmentData, w, sigma_min: float) -> float:
    """Average over supports of ``Phi(-d_min(S) / (2 sigma_min))``.

    ``d_min(S)`` is the distance from the sent signal of ``S`` to the
    nearest signal of any other support. Colliding supports have
    ``d_min = 0`` and contribute ``1/2`` each.
    """
    _check_sigma(sigma_min)
    V = all_signals(env, w)
    d_min = nearest_neighbor_distances(V)
    return float(np.mean(std_normal_cdf(-d_min / (2.0 * sigma_min))))


def _power_term(m: int, i: int, n_e: int, p_e: float, sigma_min: float) -> float:
    # Phi factor of the i-th summand; codebook reduced to m - i codewords
    j = m - i
    arg = (2.0**j) * j * n_e * p_e / (4.0 * sigma_min**2 * (2.0**j - 1.0))
    return std_normal_cdf(-np.sqrt(arg))


def power_constraint_terms(m: int, n_e: int, p_e: float, sigma_min: float) -> np.ndarray:
    """Unweighted Phi factors ``i = 1 .. m-1`` of :func:`bound_power_constraint`."""
    return np.array([_power_term(m, i, n_e, p_e, sigma_min) for i in range(1, m)])


def bound_power_constraint(m: int, n_e: int, p_e: float, sigma_min: float) -> float:
    """Bound for designs obeying the total codeword power budget ``m * n_e * p_e``.

    Sum over ``i = 1 .. m-1`` of ``2**-i`` times the Phi factor obtained
    after stripping ``i`` codewords from the codebook.
    """
    if m < 2:
        raise ValueError("the power-constraint bound needs m >= 2 (empty sum otherwise)")
    _check_sigma(sigma_min)
    _check_budget(m, n_e, p_e, "p_e")
    terms = power_constraint_terms(m, n_e, p_e, sigma_min)
    weights = 0.5 ** np.arange(1, m)
    return float(weights @ terms)


def bound_power_constraint_simple(m: int, n_e: int, p_e: float, sigma_min: float) -> float:
    """Single-term relaxation: keep the first ``floor(m/2)`` summands at the last one's value.

    For even ``m`` this is ``(1 - 2**(-m/2)) Phi(-sqrt(2**(m/2) m n_e p_e /
    (8 sigma_min**2 (2**(m/2) - 1))))``.
    """
    if m < 2:
        raise ValueError("the simplified power-constraint bound needs m >= 2")
    _check_sigma(sigma_min)
    _check_budget(m, n_e, p_e, "p_e")
    k0 = m // 2
    return float((1.0 - 0.5**k0) * _power_term(m, k0, n_e, p_e, sigma_min))


def bound_signal_constraint(m: int, n_e: int, q_e: float, sigma_min: float) -> float:
    """Bound for designs obeying the all-signals energy budget ``2**m * n_e * q_e``.

    ``(1/2**m) sum_{i=1}^{2**m-1} Phi(-sqrt((2**m - i) n_e q_e /
    (2 sigma_min**2 (2**m - 1 - i))))``. The last summand has a zero
    denominator; its ``q_e > 0`` limit is ``Phi(-inf) = 0``.
    """
    if m < 1:
        raise ValueError("the signal-constraint bound needs m >= 1")
    if m > 24:
        raise CapacityError(f"m = {m} too large")
    _check_sigma(sigma_min)
    if not q_e > 0:
        raise ValueError(f"q_e must be > 0 (degenerate summand is 0/0 otherwise), got {q_e}")
    if n_e < 1:
        raise ValueError(f"n_e must be >= 1, got {n_e}")
    N = 2.0**m
    i = np.arange(1, 2**m - 1, dtype=float)
    args = (N - i) * n_e * q_e / (2.0 * sigma_min**2 * (N - 1.0 - i))
    return float(np.sum(std_normal_cdf(-np.sqrt(args))) / N)


def bound_signal_constraint_simple(m: int, n_e: int, q_e: float, sigma_min: float) -> float:
    if m < 2:
        raise ValueError("the simplified signal-constraint bound needs m >= 2")
    _check_sigma(sigma_min)
    _check_budget(m, n_e, q_e, "q_e")
    N = 2.0**m
    return 0.5 * std_normal_cdf(-np.sqrt(N * n_e * q_e / (2.0 * sigma_min**2 * (N - 2.0))))


@dataclass(frozen=True)
class PowerConstraint:
    """Per-environment budgets: ``p_e`` on weighted codewords, ``q_e`` on all sent signals."""

    p_e: float | None = None
    q_e: float | None = None

    def __post_init__(self):
        for name in ("p_e", "q_e"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0")


def tight_constraints_from_data(env: EnvironmentData, w) -> PowerConstraint:
    """Smallest ``p_e``, ``q_e`` for which the given design meets both budgets."""
    w = as_coefficients(w, env.m)
    m, n = env.m, env.n
    p_e = float(np.sum((env.X * w) ** 2) / (m * n)) if m else 0.0
    V = all_signals(env, w)
    q_e = float(np.sum(V**2) / (2**m * n))
    return PowerConstraint(p_e=p_e, q_e=q_e)


def average_squared_distance(env: EnvironmentData, w) -> float:
    """Mean squared distance over unordered pairs of distinct supports.

    Uses ``sum_{S,S'} ||v_S - v_S'||^2 = 2 (N sum_S ||v_S||^2 - ||sum_S v_S||^2)``
    with ``N = 2**m``.
    """
    if env.m > 12:
        raise CapacityError("average_squared_distance is limited to m <= 12")
    V = all_signals(env, w)
    N = len(V)
    if N < 2:
        return 0.0
    total = N * float(np.sum(V**2)) - float(np.sum(V.sum(axis=0) ** 2))
    return max(total, 0.0) / comb(N, 2)


@dataclass
class BoundValues:
    prop1: float | None = None
    prop2: float | None = None
    cor1: float | None = None
    prop3: float | None = None
    cor2: float | None = None

    def as_dict(self) -> dict[str, float | None]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class BoundReport:
    per_env: dict[int, BoundValues] = field(default_factory=dict)
    overall: BoundValues = field(default_factory=BoundValues)
    constraints: dict[int, PowerConstraint] = field(default_factory=dict)


def _env_bounds(env, w, sigma_min, constraint: PowerConstraint | None, which) -> BoundValues:
    m, n = env.m, env.n
    out = BoundValues()
    if "prop1" in which:
        out.prop1 = bound_data_dependent(env, w, sigma_min)
    if constraint is None:
        return out
    if constraint.p_e is not None and m >= 2:
        if "prop2" in which:
            out.prop2 = bound_power_constraint(m, n, constraint.p_e, sigma_min)
        if "cor1" in which:
            out.cor1 = bound_power_constraint_simple(m, n, constraint.p_e, sigma_min)
    if constraint.q_e is not None:
        if "prop3" in which and constraint.q_e > 0:
            out.prop3 = bound_signal_constraint(m, n, constraint.q_e, sigma_min)
        if "cor2" in which and m >= 2:
            out.cor2 = bound_signal_constraint_simple(m, n, constraint.q_e, sigma_min)
    return out


def assemble_report(
    envs: Sequence[EnvironmentData],
    w,
    sigma_min: float,
    constraints: str | PowerConstraint | Mapping[int, PowerConstraint] | None = "from-data",
    bounds: Sequence[str] = BOUND_NAMES,
) -> BoundReport:
    """Evaluate the requested bounds per environment and take the max across environments.

    ``constraints`` is ``"from-data"`` (tight budgets computed from each
    design), one :class:`PowerConstraint` shared by all environments, a
    mapping ``env_id -> PowerConstraint``, or ``None`` to skip the
    constraint-based bounds. Bounds that do not apply (``m = 1`` for the
    ``m >= 2`` forms, ``q_e = 0`` for ``prop3``) are left as ``None``.
    """
    if not envs:
        raise ValueError("at least one environment is required")
    unknown = set(bounds) - set(BOUND_NAMES)
    if unknown:
        raise ValueError(f"unknown bounds: {sorted(unknown)}")
    _check_sigma(sigma_min)
    report = BoundReport()
    for env in envs:
        if constraints == "from-data":
            c = tight_constraints_from_data(env, w)
        elif isinstance(constraints, PowerConstraint) or constraints is None:
            c = constraints
        else:
            c = constraints.get(env.env_id)
        if c is not None:
            report.constraints[env.env_id] = c
        report.per_env[env.env_id] = _env_bounds(env, w, sigma_min, c, set(bounds))
    for name in BOUND_NAMES:
        vals = [getattr(b, name) for b in report.per_env.values() if getattr(b, name) is not None]
        setattr(report.overall, name, max(vals) if vals else None)
    return report
