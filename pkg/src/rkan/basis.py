"""Basis functions that parameterize KAN kernels.

Chebyshev polynomials are evaluated by their recurrence
``T_0 = 1, T_1 = x, T_d = 2x T_{d-1} - T_{d-2}`` on ``[-1, 1]``; Gaussian
radial basis functions are the drop-in alternative. Inputs are expected to
be tanh-normalized first, so the domain guard only has to absorb rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError

MAX_CHEBYSHEV_DEGREE = 16
DOMAIN_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Chebyshev:
    """Chebyshev basis up to ``degree`` (inclusive), ``degree + 1`` terms."""

    degree: int

    def __post_init__(self):
        if not 0 <= self.degree <= MAX_CHEBYSHEV_DEGREE:
            raise ParameterError(
                f"chebyshev degree must be in [0, {MAX_CHEBYSHEV_DEGREE}], "
                f"got {self.degree}"
            )

    @property
    def size(self):
        return self.degree + 1


@dataclass(frozen=True)
class GaussianRBF:
    """Gaussian bumps ``exp(-(x - c)^2 / (2 h^2))`` at each center ``c``."""

    centers: tuple[float, ...] = (-1.0, 0.0, 1.0)
    width: float = 1.0

    def __post_init__(self):
        if self.width <= 0:
            raise ParameterError(f"rbf width must be positive, got {self.width}")
        if len(self.centers) == 0:
            raise ParameterError("rbf needs at least one center")
        if any(b <= a for a, b in zip(self.centers, self.centers[1:])):
            raise ParameterError(
                f"rbf centers must be strictly increasing, got {self.centers}"
            )

    @property
    def size(self):
        return len(self.centers)


BasisKind = Chebyshev | GaussianRBF


def evenly_spaced_rbf(count):
    """RBF kind with ``count`` even centers over [-1, 1], width = spacing."""
    if count < 1:
        raise ParameterError(f"center count must be >= 1, got {count}")
    if count == 1:
        return GaussianRBF(centers=(0.0,), width=1.0)
    centers = tuple(np.linspace(-1.0, 1.0, count))
    return GaussianRBF(centers=centers, width=2.0 / (count - 1))


def _check_domain(x):
    amax = np.abs(x).max() if x.size else 0.0
    if amax > 1.0 + DOMAIN_TOLERANCE:
        raise DomainError(
            f"chebyshev input must satisfy |x| <= 1 (+{DOMAIN_TOLERANCE:g}), "
            f"got max |x| = {amax}"
        )


def chebyshev_basis(x, degree):
    """Stack ``T_0(x) .. T_degree(x)`` along a new last axis."""
    x = np.asarray(x)
    _check_domain(x)
    terms = [np.ones_like(x)]
    if degree >= 1:
        terms.append(x.copy())
    for _ in range(2, degree + 1):
        terms.append(2.0 * x * terms[-1] - terms[-2])
    return np.stack(terms, axis=-1)


def chebyshev_basis_grad(x, degree):
    """Stack ``dT_d/dx`` for d = 0..degree along a new last axis.

    Differentiated recurrence: ``T_d' = 2 T_{d-1} + 2x T_{d-1}' - T_{d-2}'``.
    """
    x = np.asarray(x)
    _check_domain(x)
    terms = [np.ones_like(x)]
    grads = [np.zeros_like(x)]
    if degree >= 1:
        terms.append(x.copy())
        grads.append(np.ones_like(x))
    for _ in range(2, degree + 1):
        grads.append(2.0 * terms[-1] + 2.0 * x * grads[-1] - grads[-2])
        terms.append(2.0 * x * terms[-1] - terms[-2])
    return np.stack(grads, axis=-1)


def rbf_basis(x, centers, width):
    """Stack Gaussian components, one per center, along a new last axis."""
    if width <= 0:
        raise ParameterError(f"rbf width must be positive, got {width}")
    x = np.asarray(x)
    c = np.asarray(centers, dtype=x.dtype)
    d = x[..., None] - c
    return np.exp(-(d * d) / (2.0 * width * width))


def rbf_basis_grad(x, centers, width):
    """Derivative of each Gaussian component with respect to ``x``."""
    if width <= 0:
        raise ParameterError(f"rbf width must be positive, got {width}")
    x = np.asarray(x)
    c = np.asarray(centers, dtype=x.dtype)
    d = x[..., None] - c
    return -(d / (width * width)) * np.exp(-(d * d) / (2.0 * width * width))


def basis_values(kind, x):
    if isinstance(kind, Chebyshev):
        return chebyshev_basis(x, kind.degree)
    return rbf_basis(x, kind.centers, kind.width)


def basis_grads(kind, x):
    if isinstance(kind, Chebyshev):
        return chebyshev_basis_grad(x, kind.degree)
    return rbf_basis_grad(x, kind.centers, kind.width)


def tanh_normalize(patches):
    """Squash raw patch values into (-1, 1) ahead of basis expansion."""
    return np.tanh(patches)
