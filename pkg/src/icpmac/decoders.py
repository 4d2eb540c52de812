"""Support recovery from multi-environment data.

Known-coefficient decoders (:func:`icp_mdd_known`, :func:`mii_known`) compare
``Y`` against the sent signal of every support. :func:`icp_mdd` estimates the
coefficients by pooled least squares and keeps every subset whose residual is
close to the per-environment minimum, returning the intersection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .core import (
    EnvironmentData,
    SupportSet,
    all_signals,
    collision_tolerance,
    support_matrix,
)

EXACT_FIT_RTOL = 1e-12
MII_TEST = "z-test(mean, known sigma) + chi2(sum r^2/sigma^2, df=n_e); p=min(1, 2*min); score=min over envs"


@dataclass
class DecodeOutcome:
    estimate: SupportSet | None
    per_env_estimates: dict[int, SupportSet] = field(default_factory=dict)
    accepted_sets: tuple[SupportSet, ...] | None = None
    flags: tuple[str, ...] = ()


@dataclass
class RegressionFit:
    gamma_hat: np.ndarray
    residual_norm: float


def _require_y(env: EnvironmentData) -> np.ndarray:
    if env.Y is None:
        raise ValueError(f"environment {env.env_id} has no response Y")
    return env.Y


def _first_within(values: np.ndarray, tol: float) -> int:
    return int(np.flatnonzero(values <= values.min() + tol)[0])


def decode_min_distance(env: EnvironmentData, w) -> SupportSet:
    """Support whose sent signal is closest to ``Y``.

    Distances within the collision tolerance of the minimum count as ties and
    go to the earliest support, so colliding supports decode identically.
    """
    Y = _require_y(env)
    V = all_signals(env, w)
    dist = np.linalg.norm(Y[None, :] - V, axis=1)
    return SupportSet(_first_within(dist, collision_tolerance(V)))


def icp_mdd_known(envs: Sequence[EnvironmentData], w) -> DecodeOutcome:
    if not envs:
        raise ValueError("at least one environment is required")
    per_env = {env.env_id: decode_min_distance(env, w) for env in envs}
    found = set(per_env.values())
    estimate = found.pop() if len(found) == 1 else None
    return DecodeOutcome(estimate, per_env, flags=() if estimate is not None else ("disagreement",))


def residual_pvalues(R: np.ndarray, sigma: float) -> np.ndarray:
    """Combined invariance p-value for each row of residuals ``R`` (shape k x n_e).

    The mean is checked with a two-sided z-test against 0 and the energy
    ``sum(r**2) / sigma**2`` with a two-sided chi-square test on ``n_e``
    degrees of freedom; the two are merged as ``min(1, 2 * min(p_mean, p_var))``.
    """
    n = R.shape[1]
    z = R.mean(axis=1) * np.sqrt(n) / sigma
    p_mean = 2.0 * stats.norm.sf(np.abs(z))
    T = np.sum(R**2, axis=1) / sigma**2
    p_var = 2.0 * np.minimum(stats.chi2.cdf(T, n), stats.chi2.sf(T, n))
    return np.minimum(1.0, 2.0 * np.minimum(p_mean, np.minimum(p_var, 1.0)))


def mii_known(envs: Sequence[EnvironmentData], w, sigma: float) -> DecodeOutcome:
    """Return the most invariant support: largest of the per-subset minimum p-values.

    Residuals ``Y - X_S w_S`` use the true coefficients and true noise
    level, see :func:`residual_pvalues`.
    """
    if not envs:
        raise ValueError("at least one environment is required")
    if not sigma > 0:
        raise ValueError("mii_known needs the true sigma > 0")
    score = None
    for env in envs:
        V = all_signals(env, w)
        p = residual_pvalues(_require_y(env)[None, :] - V, sigma)
        score = p if score is None else np.minimum(score, p)
    best = int(np.flatnonzero(score >= score.max() * (1.0 - 1e-9))[0])
    flags = ("all-p-values-zero",) if score.max() == 0.0 else ()
    return DecodeOutcome(SupportSet(best), {env.env_id: SupportSet(best) for env in envs}, flags=flags)


def _pooled(envs: Sequence[EnvironmentData]) -> tuple[np.ndarray, np.ndarray]:
    ordered = sorted(envs, key=lambda e: e.env_id)
    X = np.vstack([e.X for e in ordered])
    Y = np.concatenate([_require_y(e) for e in ordered])
    return X, Y


def pooled_least_squares(envs: Sequence[EnvironmentData], S: SupportSet) -> RegressionFit:
    """Minimum-norm least squares of pooled ``Y`` on the columns in ``S`` (no intercept)."""
    if not envs or sum(e.n for e in envs) == 0:
        raise ValueError("pooled data is empty")
    X, Y = _pooled(envs)
    XS = X[:, S.mask(X.shape[1])]
    if XS.shape[1] == 0:
        return RegressionFit(np.zeros(0), float(np.linalg.norm(Y)))
    gamma, *_ = np.linalg.lstsq(XS, Y, rcond=None)
    return RegressionFit(gamma, float(np.linalg.norm(Y - XS @ gamma)))


def pooled_residual_norms(envs: Sequence[EnvironmentData]) -> np.ndarray:
    """``d[S, e] = ||Y^e - X^e_S gamma_S||`` with ``gamma_S`` fit on pooled data.

    Rows follow support enumeration order, columns follow ``envs``. Norms
    below ``EXACT_FIT_RTOL * (1 + ||Y^e||)`` are set to zero.
    """
    m = envs[0].m
    X, Y = _pooled(envs)
    masks = support_matrix(m).astype(bool)
    out = np.empty((len(masks), len(envs)))
    for b, mask in enumerate(masks):
        if mask.any():
            gamma, *_ = np.linalg.lstsq(X[:, mask], Y, rcond=None)
        for k, env in enumerate(envs):
            resid = env.Y - env.X[:, mask] @ gamma if mask.any() else env.Y
            out[b, k] = np.linalg.norm(resid)
    # exact fits leave rounding-level residuals; they must compare equal
    scale = np.array([1.0 + np.linalg.norm(env.Y) for env in envs])
    out[out <= EXACT_FIT_RTOL * scale[None, :]] = 0.0
    return out


def icp_mdd_from_norms(norms: np.ndarray, p: float, env_ids: Sequence[int] = ()) -> DecodeOutcome:
    """Acceptance and intersection step of :func:`icp_mdd` on precomputed residual norms."""
    if p < 0:
        raise ValueError("p must be >= 0")
    thresholds = (1.0 + p) * norms.min(axis=0)
    accepted_bits = np.flatnonzero(np.all(norms <= thresholds[None, :], axis=1))
    accepted = tuple(SupportSet(int(b)) for b in accepted_bits)
    if not accepted:
        return DecodeOutcome(None, accepted_sets=(), flags=("no-accepted-set",))
    inter = accepted[0]
    for S in accepted[1:]:
        inter = inter & S
    per_env = {e: inter for e in env_ids}
    return DecodeOutcome(inter, per_env, accepted_sets=accepted)


def icp_mdd(envs: Sequence[EnvironmentData], p: float) -> DecodeOutcome:
    """Unknown-coefficient decoder with relative residual threshold ``1 + p``.

    A subset is accepted when, in every environment, its residual norm is
    at most ``(1 + p)`` times the smallest residual norm of that
    environment. With no accepted subset the estimate is ``None``.
    """
    if not envs:
        raise ValueError("at least one environment is required")
    if p < 0:
        raise ValueError("p must be >= 0")
    return icp_mdd_from_norms(pooled_residual_norms(envs), p, [e.env_id for e in envs])
