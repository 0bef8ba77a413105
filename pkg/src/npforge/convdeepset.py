"""Functional embedding of data sets on a uniform grid, and RBF smoothing back off it."""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

DENSITY = 64  # grid points per unit input
MARGIN = 1.0
DENSITY_FLOOR = 1e-8


@dataclass(frozen=True)
class Discretization:
    start: float
    spacing: float
    count: int

    def __post_init__(self):
        if not self.spacing > 0 or self.count < 2:
            raise ValueError("need spacing > 0 and at least two grid points")

    @property
    def points(self):
        return self.start + self.spacing * np.arange(self.count)

    @property
    def stop(self):
        return self.start + self.spacing * (self.count - 1)

    def shifted(self, slots):
        return Discretization(self.start + slots * self.spacing, self.spacing, self.count)


def make_discretization(xs, density=DENSITY, margin=MARGIN):
    """Grid over [min(xs) - margin, max(xs) + margin] at ``density`` points per unit."""
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    if xs.size == 0:
        raise ValueError("cannot discretise an empty input set; include the target inputs")
    if not density > 0:
        raise ValueError("density must be positive")
    lo = float(xs.min()) - margin
    hi = float(xs.max()) + margin
    span = hi - lo
    count = int(math.ceil(span * density - 1e-9)) + 1
    return Discretization(lo, 1.0 / density, max(count, 2))


@dataclass
class FunctionalRepresentation:
    disc: Discretization
    channels: ad.Value  # (B, K, 2): density, normalised data

    @property
    def density(self):
        return self.channels.data[..., 0]

    @property
    def data(self):
        return self.channels.data[..., 1]


class LengthscaleSet:
    """Four positive lengthscales stored unconstrained and mapped through softplus."""

    names = ("embed_data", "embed_density", "smooth_mean", "smooth_std")

    def __init__(self, raw):
        self.raw = raw  # name -> Value of shape (1,)

    @classmethod
    def initial(cls, spacing, prefix=""):
        init = ad.softplus_inverse(np.array([2.0 * spacing]))
        return cls({n: ad.Value(init.copy(), requires_grad=True, name=prefix + n) for n in cls.names})

    def __getitem__(self, name):
        return ad.softplus(self.raw[name])

    def values(self):
        return {n: float(ad.softplus(self.raw[n]).data[0]) for n in self.names}


def _grid_inputs(disc, batch):
    return np.broadcast_to(disc.points, (batch, disc.count))


def canonical_order(xc, yc, mask):
    """Sort each context row by (mask, x, y) so any permutation gives bit-identical sums."""
    order = np.lexsort((yc, xc, mask), axis=-1)
    return tuple(np.take_along_axis(a, order, axis=-1) for a in (xc, yc, mask))


def embed(xc, yc, mask, disc, ls_data, ls_density):
    """Density and density-normalised data channels on the grid.

    ``xc``, ``yc``, ``mask`` are (B, N) arrays (mask 0 marks padding);
    lengthscales are (1,)-shaped Values. Returns a FunctionalRepresentation
    whose channels are (B, K, 2).
    """
    xc = np.asarray(xc, dtype=np.float64)
    yc = np.asarray(yc, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    xc, yc, mask = canonical_order(xc, yc, mask)
    B = xc.shape[0]
    grid = _grid_inputs(disc, B)
    h0 = ad.rbf_setconv(xc, mask[..., None], grid, ls_density)
    h1 = ad.rbf_setconv(xc, (mask * yc)[..., None], grid, ls_data)
    h1 = h1 / ad.clamp_min(h0, DENSITY_FLOOR)
    return FunctionalRepresentation(disc, ad.concat([h0, h1], axis=-1))


def smooth(grid_values, disc, targets, scale):
    """RBF-weighted sums of (B*G, K, C) grid values at (B, M) target inputs.

    With G > 1 every consecutive block of G value sets shares one row of targets.
    """
    grid_values = ad.const(grid_values)
    targets = np.asarray(targets, dtype=np.float64)
    _, K, C = grid_values.shape
    B = targets.shape[0]
    if K != disc.count:
        raise ad.ShapeError("smooth", grid_values.shape, (disc.count,), detail="grid size mismatch")
    scale = ad.const(scale)
    if scale.shape == (1,) and C > 1:
        scale = ad.concat([scale] * C)
    return ad.rbf_setconv(_grid_inputs(disc, B), grid_values, targets, scale)
