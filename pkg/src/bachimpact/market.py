"""Bachelier market data, payoffs, path simulation and the payoff inflation
transform used throughout the scaling analysis.

Price dynamics are arithmetic: S_t = s0 + mu*t + W_t sigma with W a standard
d-dimensional Brownian motion and sigma a fixed SPD volatility matrix.  All
vectors are row vectors; ``z sigma`` means the row-vector/matrix product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from numpy.random import Generator, Philox

from .errors import DimensionMismatchError, InvalidParameterError
from .linalg import SpdMatrix, inverse, quad_form

# grid-search defaults for the generic sup-convolution (see sup_convolve)
SEARCH_GRID_POINTS = 41
SEARCH_ROUNDS = 3
SEARCH_SHRINK = 0.2


@dataclass(frozen=True)
class BachelierModel:
    """Arithmetic Brownian market: initial prices, drift, volatility, horizon."""

    s0: np.ndarray
    mu: np.ndarray
    sigma: SpdMatrix
    T: float

    def __post_init__(self):
        object.__setattr__(self, "s0", np.atleast_1d(np.asarray(self.s0, dtype=float)))
        object.__setattr__(self, "mu", np.atleast_1d(np.asarray(self.mu, dtype=float)))
        d = self.sigma.dim
        if self.s0.shape != (d,) or self.mu.shape != (d,):
            raise DimensionMismatchError(
                f"s0/mu must have length {d}, got {self.s0.shape}, {self.mu.shape}"
            )
        if not self.T > 0.0:
            raise InvalidParameterError(f"horizon T must be positive, got {self.T}")

    @property
    def d(self) -> int:
        return self.sigma.dim


@dataclass(frozen=True)
class BasketCall:
    """Payoff (<a, x> + b)^+ with closed forms for everything downstream."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        object.__setattr__(self, "a", np.atleast_1d(np.asarray(self.a, dtype=float)))
        object.__setattr__(self, "b", float(self.b))

    @property
    def lipschitz_constant(self) -> float:
        return float(np.linalg.norm(self.a))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.maximum(x @ self.a + self.b, 0.0)


@dataclass(frozen=True)
class GenericLipschitz:
    """Arbitrary Lipschitz payoff with a declared constant.

    ``fn`` must accept arrays of shape (..., d) and return shape (...);
    the declared constant is what the inflation transform's search radius
    is derived from, so it must genuinely dominate the payoff's slope.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    lipschitz_constant: float
    name: str = "generic"

    def __post_init__(self):
        if self.lipschitz_constant < 0.0:
            raise InvalidParameterError("Lipschitz constant must be >= 0")

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)


Payoff = Union[BasketCall, GenericLipschitz]


def payoff_eval(payoff: Payoff, x) -> float:
    """Evaluate a payoff at a single point."""
    return float(payoff.evaluate(np.atleast_1d(np.asarray(x, dtype=float))))


def _zero_fn(x: np.ndarray) -> np.ndarray:
    return np.zeros(np.asarray(x).shape[:-1])


def zero_payoff() -> GenericLipschitz:
    """The identically-zero claim (picklable, safe for worker pools)."""
    return GenericLipschitz(fn=_zero_fn, lipschitz_constant=0.0, name="zero")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_n = T."""

    n_steps: int
    T: float
    knots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_steps < 1:
            raise InvalidParameterError("n_steps must be >= 1")
        if not self.T > 0.0:
            raise InvalidParameterError("T must be positive")
        object.__setattr__(self, "knots", np.linspace(0.0, self.T, self.n_steps + 1))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps


@dataclass(frozen=True)
class SimulatedPath:
    """Brownian and stock trajectories on a time grid.

    The stock rows satisfy s_k = s0 + mu*t_k + w_k sigma exactly by
    construction, so there is no discretisation bias at the knots.
    """

    grid: TimeGrid
    w: np.ndarray
    s: np.ndarray


@dataclass(frozen=True)
class ImpactParams:
    """Impact coefficient lam and the fixed product a_risk = alpha * lam."""

    lam: float
    a_risk: float

    def __post_init__(self):
        if self.lam <= 0.0 or self.a_risk <= 0.0:
            raise InvalidParameterError("lam and a_risk must be positive")

    @property
    def alpha(self) -> float:
        return self.a_risk / self.lam


def brownian_increments(seed: int, path_index: int, n_steps: int, d: int) -> np.ndarray:
    """Standard-normal step draws for one path's counter-based substream.

    Keyed by (seed, path_index) so every path is reproducible independent of
    chunking, worker count or how many paths are simulated in total.
    """
    rng = Generator(Philox(key=np.array([seed, path_index], dtype=np.uint64)))
    return rng.standard_normal((n_steps, d))


def simulate_paths(
    model: BachelierModel,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
) -> list[SimulatedPath]:
    """Exact Gaussian simulation of the price dynamics at the grid knots.

    Deterministic given (seed, n_paths, grid); path i is identical no matter
    how many other paths are requested.  For large-scale Monte Carlo use the
    batched hedger instead of materialising path objects.
    """
    if n_paths < 1:
        raise InvalidParameterError("n_paths must be >= 1")
    d = model.d
    sqrt_dt = math.sqrt(grid.dt)
    t = grid.knots[:, None]
    out = []
    for i in range(n_paths):
        dw = brownian_increments(seed, i, grid.n_steps, d) * sqrt_dt
        w = np.vstack([np.zeros((1, d)), np.cumsum(dw, axis=0)])
        s = model.s0[None, :] + model.mu[None, :] * t + w @ model.sigma.entries
        out.append(SimulatedPath(grid=grid, w=w, s=s))
    return out


def _search_radius(payoff: Payoff, a_risk: float, sigma: SpdMatrix) -> float:
    # the quadratic penalty dominates the payoff gain beyond this radius:
    # f(x+y) - f(x) <= L ||y|| while <y sigma^{-1}, y>/(2 sqrt A) >= ||y||^2/(2 sqrt A lam_max)
    lip = payoff.lipschitz_constant
    return 2.0 * math.sqrt(a_risk) * sigma.max_eig * lip


def _axis_offsets(radius: float, d: int, points: int) -> np.ndarray:
    axis = np.linspace(-radius, radius, points)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def _sup_convolve_batch(
    payoff: Payoff,
    a_risk: float,
    sigma: SpdMatrix,
    x: np.ndarray,
    rounds: int = SEARCH_ROUNDS,
    grid_points: int = SEARCH_GRID_POINTS,
    row_block: int = 2048,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised grid-plus-refinement search, returning values and argmaxes.

    Shared by the scalar entry points below and by the quadrature pricer,
    which evaluates the transform on thousands of abscissae at once.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    if isinstance(payoff, BasketCall):
        shift = payoff.a @ sigma.entries * math.sqrt(a_risk)
        inflated = x @ payoff.a + payoff.b + 0.5 * math.sqrt(a_risk) * quad_form(
            payoff.a, sigma.entries
        )
        vals = np.maximum(inflated, 0.0)
        ys = np.where(inflated[:, None] > 0.0, shift[None, :], 0.0)
        return vals, ys

    radius0 = _search_radius(payoff, a_risk, sigma)
    best_val = payoff.evaluate(x)
    best_y = np.zeros_like(x)
    if radius0 == 0.0:
        return best_val, best_y
    sig_inv = inverse(sigma).entries
    inv_two_sqrt_a = 1.0 / (2.0 * math.sqrt(a_risk))
    for lo in range(0, n, row_block):
        hi = min(lo + row_block, n)
        xb = x[lo:hi]
        vb = best_val[lo:hi].copy()
        yb = best_y[lo:hi].copy()
        centers = np.zeros_like(xb)
        radius = radius0
        for _ in range(rounds + 1):
            offsets = _axis_offsets(radius, d, grid_points)
            cand = centers[:, None, :] + offsets[None, :, :]
            penalty = inv_two_sqrt_a * np.einsum("mgj,jk,mgk->mg", cand, sig_inv, cand)
            obj = payoff.evaluate(xb[:, None, :] + cand) - penalty
            idx = np.argmax(obj, axis=1)
            rows = np.arange(xb.shape[0])
            improved = obj[rows, idx] > vb
            vb = np.where(improved, obj[rows, idx], vb)
            yb = np.where(improved[:, None], cand[rows, idx], yb)
            centers = yb
            radius *= SEARCH_SHRINK
        best_val[lo:hi] = vb
        best_y[lo:hi] = yb
    return best_val, best_y


def sup_convolve(payoff: Payoff, a_risk: float, sigma: SpdMatrix, x) -> float:
    """Inflated payoff sup_y [f(x+y) - <y sigma^{-1}, y>/(2 sqrt(a_risk))].

    This is the effective claim in the small-impact scaling limit.  Basket
    calls use the closed form (<a,x> + b + sqrt(a_risk) <a sigma, a>/2)^+;
    generic payoffs are maximised by a bounded-ball grid search with local
    refinement (the maximiser provably lies within
    2 sqrt(a_risk) lam_max(sigma) L of the origin).  Always >= f(x).
    """
    if a_risk <= 0.0:
        raise InvalidParameterError("a_risk must be positive")
    vals, _ = _sup_convolve_batch(payoff, a_risk, sigma, np.atleast_1d(x))
    return float(vals[0])


def sup_convolve_argmax(
    payoff: Payoff,
    a_risk: float,
    sigma: SpdMatrix,
    x,
    eps: float = 1e-9,
) -> np.ndarray:
    """A displacement y achieving the inflated payoff within ``eps``.

    For basket calls returns sqrt(a_risk) * a sigma on the inflated-positive
    branch and 0 otherwise (ties at the kink resolve to 0, which keeps the
    selector bounded and measurable).  Generic payoffs refine the grid search
    until the residual resolution is below ``eps``.
    """
    if a_risk <= 0.0 or eps <= 0.0:
        raise InvalidParameterError("a_risk and eps must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    rounds = _rounds_for_eps(payoff, a_risk, sigma, eps)
    _, ys = _sup_convolve_batch(payoff, a_risk, sigma, x, rounds=rounds)
    return ys[0]


def sup_convolve_argmax_batch(
    payoff: Payoff,
    a_risk: float,
    sigma: SpdMatrix,
    x: np.ndarray,
    eps: float = 1e-9,
) -> np.ndarray:
    """Row-wise :func:`sup_convolve_argmax` for (n, d) evaluation points."""
    if a_risk <= 0.0 or eps <= 0.0:
        raise InvalidParameterError("a_risk and eps must be positive")
    rounds = _rounds_for_eps(payoff, a_risk, sigma, eps)
    _, ys = _sup_convolve_batch(payoff, a_risk, sigma, x, rounds=rounds)
    return ys


def _rounds_for_eps(payoff: Payoff, a_risk: float, sigma: SpdMatrix, eps: float) -> int:
    if isinstance(payoff, BasketCall):
        return SEARCH_ROUNDS
    radius = _search_radius(payoff, a_risk, sigma)
    if radius == 0.0:
        return SEARCH_ROUNDS
    # objective is Lipschitz in y with constant at most slope_bound near the
    # ball; one grid spacing of resolution error per round
    slope_bound = payoff.lipschitz_constant + radius / (
        math.sqrt(a_risk) * sigma.min_eig
    )
    rounds = SEARCH_ROUNDS
    spacing = 2.0 * radius / (SEARCH_GRID_POINTS - 1)
    while slope_bound * spacing * SEARCH_SHRINK**rounds > eps and rounds < 12:
        rounds += 1
    return rounds
