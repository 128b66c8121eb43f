"""Residual KAN stage block: reduce, KAN convs, expand, additive merge.

The block consumes a stage's input tensor, compresses channels through a 1x1
bottleneck (SiLU), refines with a 3x3 KAN conv that carries the stage's
stride, expands channels back with a second 1x1 conv, optionally applies a
second full-width 3x3 KAN conv, and is merged with the stage's main-path
output by element-wise addition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import Chebyshev, GaussianRBF, evenly_spaced_rbf
from .errors import ConfigError, GeometryError
from .kan_conv import KanConv2d
from .layers import Activation, Conv2d, Module

REDUCE_FACTORS = (1, 2, 4, 8, 16, 32)
BASIS_NAMES = ("chebyshev", "rbf")


@dataclass(frozen=True)
class RkanBlockConfig:
    """Geometry and basis plan for one block.

    ``stride`` must match the spatial downsampling of the enclosed stage so
    the block output aligns with the main path. ``zero_init_expand`` is a
    diagnostic mode that zero-initializes the block's final projection (the
    expand conv, and the second KAN conv's coefficients when present) so the
    block contributes exactly zero at init.
    """

    in_channels: int
    stage_channels: int
    reduce_factor: int = 2
    stride: int = 2
    degrees: tuple[int, int] = (3, 2)
    second_kan: bool = True
    basis: str = "chebyshev"
    rbf_centers: tuple[float, ...] = (-1.0, 0.0, 1.0)
    rbf_width: float = 1.0
    rbf_match_degree: bool = field(default=False)
    zero_init_expand: bool = False

    def violations(self):
        problems = []
        if self.reduce_factor not in REDUCE_FACTORS:
            problems.append(
                f"reduce_factor must be one of {REDUCE_FACTORS}, "
                f"got {self.reduce_factor}")
        elif self.in_channels % self.reduce_factor != 0:
            problems.append(
                f"in_channels {self.in_channels} not divisible by "
                f"reduce_factor {self.reduce_factor}")
        if self.in_channels < 1 or self.stage_channels < 1:
            problems.append("channel counts must be positive")
        if self.stride < 1:
            problems.append(f"stride must be >= 1, got {self.stride}")
        if self.basis not in BASIS_NAMES:
            problems.append(
                f"basis must be one of {BASIS_NAMES}, got {self.basis!r}")
        if len(self.degrees) != 2 or any(d < 0 for d in self.degrees):
            problems.append(f"degrees must be two nonnegative ints, got {self.degrees}")
        return problems

    def basis_for(self, degree):
        if self.basis == "chebyshev":
            return Chebyshev(degree)
        if self.rbf_match_degree:
            return evenly_spaced_rbf(degree + 1)
        return GaussianRBF(centers=self.rbf_centers, width=self.rbf_width)


class RkanBlock(Module):
    """The residual stage module; see :class:`RkanBlockConfig`."""

    def __init__(self, config: RkanBlockConfig, rng=None):
        problems = config.violations()
        if problems:
            raise ConfigError("invalid block config: " + "; ".join(problems))
        rng = rng if rng is not None else np.random.default_rng()
        self.config = config
        mid = config.in_channels // config.reduce_factor
        self.reduce = Conv2d(config.in_channels, mid, 1, init="fan_in", rng=rng)
        self.act = Activation("silu")
        self.kan1 = KanConv2d(mid, mid, 3, stride=config.stride, padding=1,
                              basis=config.basis_for(config.degrees[0]), rng=rng)
        self.expand = Conv2d(mid, config.stage_channels, 1, init="fan_in", rng=rng)
        if config.second_kan:
            self.kan2 = KanConv2d(
                config.stage_channels, config.stage_channels, 3, stride=1,
                padding=1, basis=config.basis_for(config.degrees[1]), rng=rng)
        else:
            self.kan2 = None
        if config.zero_init_expand:
            self.expand.weight.data[:] = 0.0
            if self.kan2 is not None:
                self.kan2.alpha.data[:] = 0.0
                self.kan2.w_lin.data[:] = 0.0

    def forward(self, x):
        if x.shape[1] != self.config.in_channels:
            raise GeometryError(
                f"block expects {self.config.in_channels} channels, "
                f"got {x.shape[1]}")
        y = self.act.forward(self.reduce.forward(x))
        y = self.expand.forward(self.kan1.forward(y))
        if self.kan2 is not None:
            y = self.kan2.forward(y)
        return y

    def backward(self, grad_out):
        g = grad_out
        if self.kan2 is not None:
            g = self.kan2.backward(g)
        g = self.kan1.backward(self.expand.backward(g))
        return self.reduce.backward(self.act.backward(g))


def aggregate(main, residual):
    """Element-wise sum of the main-path and block outputs."""
    if main.shape != residual.shape:
        raise GeometryError(
            f"cannot aggregate shapes {main.shape} and {residual.shape}")
    return main + residual
