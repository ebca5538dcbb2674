"""Poincaré-ball primitives (curvature -1).

All functions broadcast over leading axes: a point is the last axis of an
array. Arithmetic runs in ``np.longdouble`` so that points which sit within
~1e-12 of the boundary (routine for deep trees, see :func:`compute_tau`)
keep their hyperbolic position to better than 1e-6.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericOverflow

WORK = np.longdouble
DOUBLE_EPS = float(np.finfo(np.float64).eps)  # 2**-52

PoincarePoint = np.ndarray


def poincare_point(coords, eps: float = DOUBLE_EPS) -> PoincarePoint:
    """Validate ``coords`` as a point strictly inside the unit ball."""
    x = np.asarray(coords, dtype=WORK)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ValueError("a point needs at least one coordinate")
    if not np.all(np.isfinite(x)):
        raise ValueError("point coordinates must be finite")
    if np.any(_sqnorm(x) >= 1):
        raise ValueError("point lies on or outside the unit sphere")
    return x


def _sqnorm(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1)


def _inner(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sum(x * y, axis=-1)


def _check_inside(*points: np.ndarray) -> None:
    for p in points:
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite coordinates")
        if np.any(_sqnorm(p) >= 1):
            raise ValueError("point lies on or outside the unit sphere")


def project_to_ball(x: np.ndarray, eps: float = DOUBLE_EPS) -> np.ndarray:
    """Radially pull points with ``|x|^2 > 1 - 10 eps`` back to that shell."""
    x = np.asarray(x, dtype=WORK)
    limit = WORK(1) - WORK(10) * WORK(eps)
    sq = _sqnorm(x)
    over = sq > limit
    if np.any(over):
        factor = np.where(over, np.sqrt(limit / np.where(over, sq, 1)), 1)
        x = x * factor[..., None]
    return x


def mobius_add(a, b, eps: float = DOUBLE_EPS) -> np.ndarray:
    """Möbius addition ``a ⊕ b``."""
    a = np.asarray(a, dtype=WORK)
    b = np.asarray(b, dtype=WORK)
    _check_inside(a, b)
    ab = _inner(a, b)
    a2 = _sqnorm(a)
    b2 = _sqnorm(b)
    num = (1 + 2 * ab + b2)[..., None] * a + (1 - a2)[..., None] * b
    den = 1 + 2 * ab + a2 * b2
    if np.any(den < WORK(eps) ** 2):
        raise NumericOverflow("Möbius denominator underflow; points too close to the boundary")
    out = num / den[..., None]
    if not np.all(np.isfinite(out)):
        raise NumericOverflow("non-finite Möbius sum")
    return project_to_ball(out, eps)


def translate(a, x, eps: float = DOUBLE_EPS) -> np.ndarray:
    """Left gyro-translation ``x -> a ⊕ x``; an isometry mapping 0 to ``a``."""
    return mobius_add(a, x, eps)


def distance(a, b) -> np.ndarray | float:
    """Hyperbolic distance ``2 artanh |(-a) ⊕ b|``.

    Evaluated through the equivalent closed form
    ``2 asinh(sqrt(|a-b|^2 / ((1-|a|^2)(1-|b|^2))))`` which avoids the
    cancellation of the Möbius route for nearby points.
    """
    a = np.asarray(a, dtype=WORK)
    b = np.asarray(b, dtype=WORK)
    _check_inside(a, b)
    diff = a - b
    s = _sqnorm(diff) / ((1 - _sqnorm(a)) * (1 - _sqnorm(b)))
    d = 2 * np.arcsinh(np.sqrt(s))
    if not np.all(np.isfinite(d)):
        raise NumericOverflow("distance overflow")
    d = d.astype(np.float64)
    return float(d) if d.ndim == 0 else d


def conformal_factor(a) -> np.ndarray | float:
    a = np.asarray(a, dtype=WORK)
    _check_inside(a)
    lam = (2 / (1 - _sqnorm(a))).astype(np.float64)
    return float(lam) if lam.ndim == 0 else lam


def compute_tau(max_path_length: int, eps: float = DOUBLE_EPS) -> float:
    """Edge length that keeps a path of ``max_path_length`` edges representable."""
    if max_path_length < 1:
        raise ValueError("max_path_length must be >= 1")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    half = eps / 2
    return math.log((2 - half) / half) / (1.3 * max_path_length)


def hadamard_capacity(dimension: int) -> int:
    """Order of the largest Sylvester Hadamard matrix fitting in ``dimension``."""
    return 1 << (int(dimension).bit_length() - 1)


def select_dimension(max_degree: int) -> int:
    # strict inequality: every non-root node also spends one code on its parent
    if max_degree < 1:
        raise ValueError("max_degree must be >= 1")
    n = 10
    while hadamard_capacity(n) <= max_degree:
        n += 10
    return n


@dataclass(frozen=True)
class EmbeddingConfig:
    dimension: int
    tau: float
    epsilon: float = DOUBLE_EPS
    max_path_length: int = 1

    def __post_init__(self):
        if self.dimension < 2:
            raise ValueError("dimension must be >= 2")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.max_path_length < 1:
            raise ValueError("max_path_length must be >= 1")

    @classmethod
    def auto(cls, max_degree: int, depth: int, epsilon: float = DOUBLE_EPS,
             dimension: int | None = None) -> "EmbeddingConfig":
        """Dimension from the Hadamard rule, tau from depth and precision."""
        ell = max(depth, 1)
        dim = dimension if dimension is not None else select_dimension(max(max_degree, 1))
        return cls(dimension=dim, tau=compute_tau(ell, epsilon),
                   epsilon=epsilon, max_path_length=ell)
