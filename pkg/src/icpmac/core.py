"""Supports, sent signals and the normal CDF shared by bounds and decoders.

A support is a subset of the predictor indices ``{1, ..., m}`` stored as a
bitmask: index ``i`` lives at bit ``i - 1``. Supports are always enumerated in
ascending bitmask order with the empty set first, and every argmin/argmax
tie-break in the package resolves to the earliest support in that order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.special import erfc

MAX_PREDICTORS = 24
COLLISION_RTOL = 1e-9

# rows of the pairwise block kept in memory at once (rows * 2**m entries)
_BLOCK_ENTRIES = 1 << 22


class CapacityError(ValueError):
    """Raised when a request would enumerate more than 2**MAX_PREDICTORS supports."""


class DimensionError(ValueError):
    """Raised when matrices, vectors and supports disagree on shape."""


@dataclass(frozen=True, order=True)
class SupportSet:
    bits: int = 0

    def __post_init__(self):
        if self.bits < 0 or self.bits >> MAX_PREDICTORS:
            raise CapacityError(f"support bitmask {self.bits} outside 0..2**{MAX_PREDICTORS}-1")

    @classmethod
    def from_indices(cls, indices: Iterable[int]) -> "SupportSet":
        bits = 0
        for i in indices:
            if i < 1 or i > MAX_PREDICTORS:
                raise CapacityError(f"index {i} outside 1..{MAX_PREDICTORS}")
            bits |= 1 << (i - 1)
        return cls(bits)

    def indices(self) -> tuple[int, ...]:
        return tuple(i + 1 for i in range(self.bits.bit_length()) if self.bits >> i & 1)

    @property
    def max_index(self) -> int:
        return self.bits.bit_length()

    def mask(self, m: int) -> np.ndarray:
        """Boolean column selector of length ``m``."""
        if self.max_index > m:
            raise DimensionError(f"support {self} has index beyond m={m}")
        return np.array([bool(self.bits >> i & 1) for i in range(m)], dtype=bool)

    def __len__(self) -> int:
        return bin(self.bits).count("1")

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices())

    def __contains__(self, i: object) -> bool:
        return isinstance(i, (int, np.integer)) and i >= 1 and bool(self.bits >> (int(i) - 1) & 1)

    def __or__(self, other: "SupportSet") -> "SupportSet":
        return SupportSet(self.bits | other.bits)

    def __and__(self, other: "SupportSet") -> "SupportSet":
        return SupportSet(self.bits & other.bits)

    def __str__(self) -> str:
        return "{" + ", ".join(map(str, self.indices())) + "}"


@dataclass
class EnvironmentData:
    """Design matrix ``X`` (n_e x m) of one environment, plus its response once generated."""

    X: np.ndarray
    Y: np.ndarray | None = None
    env_id: int = 0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            raise DimensionError(f"X must be 2-D, got shape {self.X.shape}")
        if self.X.shape[0] < 1:
            raise DimensionError("environment needs at least one sample")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("X contains non-finite entries")
        if self.Y is not None:
            self.Y = np.asarray(self.Y, dtype=float)
            if self.Y.shape != (self.X.shape[0],):
                raise DimensionError(f"Y has shape {self.Y.shape}, expected ({self.X.shape[0]},)")
            if not np.all(np.isfinite(self.Y)):
                raise ValueError("Y contains non-finite entries")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 1.0
    sigma_min: float | None = None
    sigma_max: float | None = None

    def __post_init__(self):
        if self.sigma_min is None:
            object.__setattr__(self, "sigma_min", self.sigma)
        if self.sigma_max is None:
            object.__setattr__(self, "sigma_max", max(self.sigma, self.sigma_min))
        if self.sigma_min <= 0:
            raise ValueError("sigma_min must be positive")
        if self.sigma_max < self.sigma_min:
            raise ValueError("sigma_max must be >= sigma_min")
        # sigma == 0 is allowed for noise-free generation only
        if self.sigma > 0 and not self.sigma_min <= self.sigma <= self.sigma_max:
            raise ValueError("sigma must lie in [sigma_min, sigma_max]")


@dataclass(frozen=True)
class ModelSpec:
    w: np.ndarray
    s_star: SupportSet
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        object.__setattr__(self, "w", as_coefficients(self.w))
        if self.s_star.max_index > len(self.w):
            raise DimensionError(f"S* = {self.s_star} exceeds m = {len(self.w)}")

    @property
    def m(self) -> int:
        return len(self.w)

    @property
    def gamma(self) -> np.ndarray:
        return np.where(self.s_star.mask(self.m), self.w, 0.0)


def as_coefficients(w: Sequence[float] | np.ndarray, m: int | None = None) -> np.ndarray:
    w = np.asarray(w, dtype=float).reshape(-1)
    if m is not None and len(w) != m:
        raise DimensionError(f"w has length {len(w)}, expected m = {m}")
    if np.any(w == 0) or not np.all(np.isfinite(w)):
        raise ValueError("every coefficient must be finite and non-zero")
    return w


def _check_m(m: int) -> None:
    if not 0 <= m <= MAX_PREDICTORS:
        raise CapacityError(f"m = {m} outside 0..{MAX_PREDICTORS}")


def enumerate_supports(m: int) -> list[SupportSet]:
    """All ``2**m`` subsets of ``{1..m}`` in ascending bitmask order."""
    _check_m(m)
    return [SupportSet(b) for b in range(1 << m)]


@lru_cache(maxsize=32)
def _support_matrix(m: int) -> np.ndarray:
    bits = np.arange(1 << m, dtype=np.int64)[:, None]
    out = ((bits >> np.arange(m)) & 1).astype(float)
    out.setflags(write=False)
    return out


def support_matrix(m: int) -> np.ndarray:
    """0/1 matrix of shape ``(2**m, m)``; row ``b`` is the indicator of support ``b``."""
    _check_m(m)
    return _support_matrix(m)


def _weighted_design(env: EnvironmentData, w) -> np.ndarray:
    w = as_coefficients(w, env.m)
    return env.X * w


def sent_signal(env: EnvironmentData, w, S: SupportSet) -> np.ndarray:
    Xw = _weighted_design(env, w)
    return Xw[:, S.mask(env.m)].sum(axis=1)


def all_signals(env: EnvironmentData, w) -> np.ndarray:
    """Sent signals for every support, shape ``(2**m, n_e)`` in enumeration order."""
    _check_m(env.m)
    Xw = _weighted_design(env, w)
    return support_matrix(env.m) @ Xw.T


def pairwise_distance(env: EnvironmentData, w, S: SupportSet, S2: SupportSet) -> float:
    m = env.m
    Xw = _weighted_design(env, w)
    # signed combination avoids rounding differences for S == S2
    coef = S.mask(m).astype(float) - S2.mask(m).astype(float)
    return float(np.linalg.norm(Xw @ coef))


def collision_tolerance(V: np.ndarray) -> float:
    norms = np.linalg.norm(V, axis=1) if V.size else np.zeros(1)
    return COLLISION_RTOL * (1.0 + float(norms.max(initial=0.0)))


def _pairwise_blocks(V: np.ndarray):
    """Yield ``(start, d2_block)`` with squared distances of rows start.. to all rows.

    Distances come from the Gram identity; entries small relative to the
    signal energy are recomputed directly so near-collisions stay exact.
    """
    sq = np.einsum("ij,ij->i", V, V)
    scale = 1.0 + float(sq.max(initial=0.0))
    rows = max(1, _BLOCK_ENTRIES // max(1, len(V)))
    for start in range(0, len(V), rows):
        block = V[start:start + rows]
        d2 = sq[start:start + rows, None] + sq[None, :] - 2.0 * (block @ V.T)
        np.maximum(d2, 0.0, out=d2)
        ii, jj = np.nonzero(d2 <= 1e-6 * scale)
        if len(ii):
            diff = block[ii] - V[jj]
            d2[ii, jj] = np.einsum("ij,ij->i", diff, diff)
        yield start, d2


def nearest_neighbor_distances(V: np.ndarray) -> np.ndarray:
    """For each row of ``V`` the Euclidean distance to the closest *other* row."""
    out = np.empty(len(V))
    if len(V) < 2:
        out.fill(np.inf)
        return out
    for start, d2 in _pairwise_blocks(V):
        idx = np.arange(len(d2))
        d2[idx, start + idx] = np.inf
        out[start:start + len(d2)] = np.sqrt(d2.min(axis=1))
    return out


def detect_collisions(env: EnvironmentData, w) -> list[tuple[SupportSet, SupportSet]]:
    """Pairs of distinct supports whose sent signals coincide (within tolerance).

    An empty list certifies the environment is collision free.
    """
    V = all_signals(env, w)
    tol = collision_tolerance(V)
    pairs = []
    for start, d2 in _pairwise_blocks(V):
        ii, jj = np.nonzero(d2 <= tol * tol)
        for i, j in zip(ii + start, jj):
            if i < j:
                pairs.append((SupportSet(int(i)), SupportSet(int(j))))
    pairs.sort()
    return pairs


def std_normal_cdf(z):
    """Standard normal CDF through the complementary error function.

    Accepts scalars or arrays, including ``+-inf``.
    """
    out = 0.5 * erfc(-np.asarray(z, dtype=float) / np.sqrt(2.0))
    return float(out) if out.ndim == 0 else out
