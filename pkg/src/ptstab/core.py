"""Foundational numerics: weight vectors, dilations, signed powers, sphere sampling.

Everything here is pure and deterministic; higher modules build gain
synthesis, certificates and simulations on top of these primitives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ChainSpec",
    "WeightVector",
    "pnf_weights",
    "hong_weights",
    "jordan_block",
    "dilate",
    "dilation_matrix",
    "signed_power",
    "kappa_grid",
    "sample_sphere",
    "sphere_residual",
]


@dataclass(frozen=True)
class ChainSpec:
    """Plant description for the n-th order perturbed chain of integrators.

    Parameters
    ----------
    n : int
        Plant order (number of states), n >= 1.
    T : float
        Prescribed horizon in seconds, T > 0.
    b_lower : float
        Lower bound on the control gain b(t), > 0.
    b_upper : float
        Upper bound on b(t); may be ``math.inf``.
    d_bound : float
        Bound on the matched disturbance, >= 0.
    """

    n: int
    T: float
    b_lower: float = 1.0
    b_upper: float = math.inf
    d_bound: float = 0.0

    def __post_init__(self):
        if not (isinstance(self.n, int) and self.n >= 1):
            raise ValueError(f"plant order n must be a positive integer, got {self.n}")
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if not 0 < self.b_lower <= self.b_upper:
            raise ValueError(
                f"need 0 < b_lower <= b_upper, got ({self.b_lower}, {self.b_upper})"
            )
        if self.d_bound < 0:
            raise ValueError(f"d_bound must be nonnegative, got {self.d_bound}")


@dataclass(frozen=True)
class WeightVector:
    """Homogeneity weights r together with the convention that produced them.

    ``convention`` is "pnf" (r_i = n-i+1) or "hong" (r_j = 1+(j-1)*kappa with
    kappa in [-1/(2n), 1/(2n)]).
    """

    r: tuple
    convention: str
    kappa: float = 0.0

    @property
    def n(self) -> int:
        return len(self.r)


def pnf_weights(n: int) -> WeightVector:
    """Weights (n, n-1, ..., 1) used by the time-varying linear feedback."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return WeightVector(r=tuple(float(n - i) for i in range(n)), convention="pnf")


def hong_weights(n: int, kappa: float) -> WeightVector:
    """Weights r_j = 1 + (j-1)*kappa for the homogeneous cascade controller."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if abs(kappa) > 1.0 / (2 * n) + 1e-12:
        raise ValueError(f"kappa={kappa} outside [-1/(2n), 1/(2n)] for n={n}")
    return WeightVector(
        r=tuple(1.0 + j * kappa for j in range(n)), convention="hong", kappa=kappa
    )


def jordan_block(n: int) -> np.ndarray:
    """Upper shift matrix J_n with J e_i = e_{i-1} (ones on the superdiagonal)."""
    J = np.zeros((n, n))
    for i in range(n - 1):
        J[i, i + 1] = 1.0
    return J


def dilate(w: WeightVector, lam: float, x) -> np.ndarray:
    """Apply the dilation D^r_lam = diag(lam^{r_i}) to x (last axis is the state)."""
    if not lam > 0:
        raise ValueError(f"dilation parameter must be positive, got {lam}")
    scales = np.asarray([lam**ri for ri in w.r])
    return np.asarray(x, dtype=float) * scales


def dilation_matrix(w: WeightVector, lam: float) -> np.ndarray:
    """Dense diag(lam^{r_i}); D^r_1 is the identity."""
    if not lam > 0:
        raise ValueError(f"dilation parameter must be positive, got {lam}")
    return np.diag([lam**ri for ri in w.r])


def signed_power(x, alpha: float):
    """Sign-preserving power sign(x)*|x|^alpha; odd and strictly increasing.

    Works on scalars and numpy arrays.
    """
    if not alpha > 0:
        raise ValueError(f"exponent must be positive, got {alpha}")
    if np.ndim(x) == 0:
        xf = float(x)
        if xf == 0.0:
            return 0.0
        return math.copysign(abs(xf) ** alpha, xf)
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.abs(x) ** alpha


def kappa_grid(n: int, points: int = 11) -> np.ndarray:
    """Evenly spaced grid over the full admissible range [-1/(2n), 1/(2n)]."""
    k = 1.0 / (2 * n)
    if points == 1:
        return np.array([0.0])
    return np.linspace(-k, k, points)


def sphere_residual(x, kappa: float) -> float:
    """|sum_i |x_i|^{2/r_i} - 1| for the kappa-weighted unit sphere in R^j."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    j = x.shape[-1]
    r = np.array([1.0 + i * kappa for i in range(j)])
    val = np.sum(np.abs(x) ** (2.0 / r), axis=-1)
    return float(np.max(np.abs(val - 1.0)))


def sample_sphere(j: int, kappa_grid, N: int, seed: int) -> np.ndarray:
    """Sample N points per kappa on the weighted unit sphere in R^j.

    For each kappa a standard-normal direction z is drawn and dilated onto
    the sphere {sum |x_i|^{2/r_i(kappa)} = 1}.  The defining map scales as
    lam^2 under the dilation, so the placing parameter is lam = nu(z)^{-1/2}
    and membership is exact by construction.

    Returns an array of shape (len(kappa_grid), N, j).
    """
    if j < 1:
        raise ValueError("dimension j must be >= 1")
    if N < 1:
        raise ValueError("need at least one sample point")
    grid = np.atleast_1d(np.asarray(kappa_grid, dtype=float))
    for kap in grid:
        if abs(kap) > 1.0 / (2 * j) + 1e-12:
            raise ValueError(f"kappa={kap} outside [-1/(2j), 1/(2j)] for j={j}")
    rng = np.random.default_rng(seed)
    out = np.empty((len(grid), N, j))
    for g, kap in enumerate(grid):
        r = np.array([1.0 + i * kap for i in range(j)])
        z = rng.standard_normal((N, j))
        # degenerate draws (exact zeros) would break the normalization
        z[np.all(z == 0.0, axis=1)] = 1.0
        nu = np.sum(np.abs(z) ** (2.0 / r), axis=1)
        lam = nu**-0.5
        out[g] = z * lam[:, None] ** r[None, :]
    return out
