"""Pricing of the inflated claim by Gaussian quadrature, its gradient and
heat-equation residual, and the scaling-limit values.

The claim price is

    u(t, x) = E[ g(x + W_{T-t} sigma) ],

with g the inflated payoff from :mod:`bachimpact.market`.  Basket calls
dispatch to the normal-model closed form; everything else integrates g over a
deterministic rule for N(0, I_d) abscissae.  For s the basket direction's
vol, m the moneyness of the inflated strike, the closed form is the usual
arithmetic-model pair

    u = s * (m * Phi(m) + phi(m)),        delta = a * Phi(m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtr, roots_hermitenorm

from .errors import (
    BudgetExceededError,
    InvalidParameterError,
    InvalidTimeError,
)
from .linalg import quad_form, row_vec_mul
from .market import (
    BachelierModel,
    BasketCall,
    Payoff,
    _sup_convolve_batch,
    sup_convolve,
)

NODE_BUDGET = 1_000_000
# fallback Monte Carlo settings for d >= 4 (antithetic, fixed substream)
MC_FALLBACK_SAMPLES = 500_000
MC_FALLBACK_KEY = 0x9E3779B9


@dataclass(frozen=True)
class QuadratureRule:
    """Deterministic rule for expectations against N(0, I_d).

    Weights are positive and sum to one; the node set is symmetric under
    negation so odd moments vanish identically.  ``tag`` records how the rule
    was built so a coarser companion can be constructed for error estimates.
    """

    nodes: np.ndarray
    weights: np.ndarray
    tag: tuple

    @property
    def d(self) -> int:
        return self.nodes.shape[1]


def _tensorize(nodes_1d: np.ndarray, weights_1d: np.ndarray, d: int, tag: tuple) -> QuadratureRule:
    m = len(nodes_1d)
    if m**d > NODE_BUDGET:
        raise BudgetExceededError(f"{m}^{d} nodes exceed the {NODE_BUDGET} budget")
    grids = np.meshgrid(*([nodes_1d] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*([weights_1d] * d), indexing="ij")
    weights = np.ones(m**d)
    for g in wgrids:
        weights = weights * g.ravel()
    weights = weights / weights.sum()
    return QuadratureRule(nodes=nodes, weights=weights, tag=tag)


def build_gauss_hermite(m: int, d: int) -> QuadratureRule:
    """Tensorised Gauss-Hermite rule normalised to the N(0, I_d) weight.

    Exact for polynomials of degree <= 2m-1 per axis.  Convergence on kinked
    integrands is slow (roughly m^{-3/2}); prefer :func:`build_normal_panel`
    when a payoff kink must be integrated tightly.
    """
    if m < 2 or d < 1:
        raise InvalidParameterError("need m >= 2 and d >= 1")
    nodes, weights = roots_hermitenorm(m)
    weights = weights / weights.sum()
    return _tensorize(nodes, weights, d, tag=("hermite", m, d))


def build_normal_panel(
    n_panels: int,
    order: int,
    d: int,
    radius: float = 12.0,
) -> QuadratureRule:
    """Composite Gauss-Legendre rule under the standard normal density.

    Panels of equal width tile [-radius, radius]; per panel a Legendre rule
    is weighted by the normal pdf and the whole rule renormalised (truncation
    mass at radius 12 is ~1e-32).  Robust to kinks anywhere on the axis: one
    panel absorbs the kink while all others see a smooth integrand.
    """
    if n_panels < 1 or order < 2:
        raise InvalidParameterError("need n_panels >= 1 and order >= 2")
    gl_x, gl_w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-radius, radius, n_panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1] - edges[0])
    z = (mid[:, None] + half * gl_x[None, :]).ravel()
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    w = (half * gl_w[None, :] * pdf.reshape(n_panels, order)).ravel()
    return _tensorize(z, w / w.sum(), d, tag=("panel", n_panels, order, radius, d))


def coarsen_rule(rule: QuadratureRule) -> QuadratureRule:
    """Companion rule at half resolution, for self-estimated tolerances."""
    kind = rule.tag[0]
    if kind == "hermite":
        _, m, d = rule.tag
        return build_gauss_hermite(max(2, m // 2), d)
    _, n_panels, order, radius, d = rule.tag
    return build_normal_panel(max(1, n_panels // 2), order, d, radius)


@lru_cache(maxsize=8)
def default_quadrature(d: int) -> Optional[QuadratureRule]:
    """Per-dimension default rules; None selects the Monte Carlo fallback."""
    if d == 1:
        return build_normal_panel(800, 16, 1)
    if d == 2:
        return build_normal_panel(30, 6, 2)
    if d == 3:
        return build_gauss_hermite(16, 3)
    return None


def _mc_fallback_points(d: int) -> np.ndarray:
    rng = Generator(Philox(key=np.array([MC_FALLBACK_KEY, d], dtype=np.uint64)))
    half = rng.standard_normal((MC_FALLBACK_SAMPLES, d))
    return np.vstack([half, -half])


def _basket_scale(model: BachelierModel, payoff: BasketCall, t: float) -> float:
    v = payoff.a @ model.sigma.entries
    return math.sqrt(max(model.T - t, 0.0) * float(v @ v))


def _basket_closed_form(
    a_risk: float,
    model: BachelierModel,
    payoff: BasketCall,
    t: float,
    x: np.ndarray,
) -> float:
    b_inf = payoff.b + 0.5 * math.sqrt(a_risk) * quad_form(payoff.a, model.sigma.entries)
    intrinsic = float(x @ payoff.a) + b_inf
    scale = _basket_scale(model, payoff, t)
    if scale == 0.0:
        return max(intrinsic, 0.0)
    m = intrinsic / scale
    return scale * (m * ndtr(m) + math.exp(-0.5 * m * m) / math.sqrt(2.0 * math.pi))


def price_u(
    a_risk: float,
    model: BachelierModel,
    payoff: Payoff,
    t: float,
    x,
    rule: Optional[QuadratureRule] = None,
    *,
    force_quadrature: bool = False,
) -> float:
    """Price of the inflated claim at time t and (shifted) spot x.

    Integrates the inflated payoff over the Gaussian increment to maturity;
    at t == T this reduces to the inflated payoff itself, exactly.  Basket
    calls use the closed form unless ``force_quadrature`` is set (used by the
    cross-checking tests).  With ``rule`` None and d >= 4 an antithetic
    Monte Carlo fallback on a fixed substream is used.
    """
    if a_risk <= 0.0:
        raise InvalidParameterError("a_risk must be positive")
    if t < 0.0 or t > model.T:
        raise InvalidTimeError(f"t={t} outside [0, {model.T}]")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if t == model.T:
        return sup_convolve(payoff, a_risk, model.sigma, x)
    if isinstance(payoff, BasketCall) and not force_quadrature:
        return _basket_closed_form(a_risk, model, payoff, t, x)
    if rule is None:
        rule = default_quadrature(model.d)
    if rule is None:
        z = _mc_fallback_points(model.d)
        weights = np.full(len(z), 1.0 / len(z))
    else:
        z, weights = rule.nodes, rule.weights
    points = x[None, :] + math.sqrt(model.T - t) * (z @ model.sigma.entries)
    vals, _ = _sup_convolve_batch(payoff, a_risk, model.sigma, points)
    return float(weights @ vals)


def default_fd_step(t: float, x: np.ndarray, T: float) -> float:
    """Spatial FD step: scale-aware, shrinking near maturity.

    Capped at (T - t)/16 so the near-maturity guard can always be met for
    t < T (the Gaussian smoothing that keeps the FD well conditioned decays
    as maturity approaches).
    """
    base = 1e-4 * (1.0 + float(np.linalg.norm(x))) * max(math.sqrt(max(T - t, 0.0)), 0.05)
    return min(base, (T - t) / 16.0) if T > t else base


def delta_u(
    a_risk: float,
    model: BachelierModel,
    payoff: Payoff,
    t: float,
    x,
    rule: Optional[QuadratureRule] = None,
    fd_step: Optional[float] = None,
    *,
    force_fd: bool = False,
) -> np.ndarray:
    """Spatial gradient of the claim price.

    Basket calls return the closed form a * Phi(m); otherwise central finite
    differences of :func:`price_u` per coordinate.  Gaussian smoothing makes
    the price C-infinity for t < T, so the FD is well conditioned away from
    maturity; evaluation inside the 10-step guard band raises.
    """
    if t >= model.T:
        raise InvalidTimeError("gradient undefined at maturity (payoff kinks)")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(payoff, BasketCall) and not force_fd:
        return basket_delta_closed_form(a_risk, model, payoff, t, x)
    h = fd_step if fd_step is not None else default_fd_step(t, x, model.T)
    if t > model.T - 10.0 * h:
        raise InvalidTimeError(f"t={t} within 10 fd steps of maturity; reduce fd_step")
    grad = np.empty(model.d)
    for i in range(model.d):
        e = np.zeros(model.d)
        e[i] = h
        up = price_u(a_risk, model, payoff, t, x + e, rule)
        dn = price_u(a_risk, model, payoff, t, x - e, rule)
        grad[i] = (up - dn) / (2.0 * h)
    return grad


def basket_delta_closed_form(
    a_risk: float,
    model: BachelierModel,
    payoff: BasketCall,
    t: float,
    x: np.ndarray,
) -> np.ndarray:
    """Closed-form gradient of the inflated basket call."""
    b_inf = payoff.b + 0.5 * math.sqrt(a_risk) * quad_form(payoff.a, model.sigma.entries)
    scale = _basket_scale(model, payoff, t)
    if scale == 0.0:
        raise InvalidTimeError("delta undefined at zero remaining variance")
    m = (float(x @ payoff.a) + b_inf) / scale
    return payoff.a * ndtr(m)


def pde_residual(
    a_risk: float,
    model: BachelierModel,
    payoff: Payoff,
    t: float,
    x,
    rule: Optional[QuadratureRule] = None,
    fd_step_t: float = 1e-3,
    fd_step_x: Optional[float] = None,
) -> float:
    """Finite-difference estimate of du/dt + tr(sigma^2 D^2 u)/2.

    The claim price solves the backward heat equation in the volatility
    metric, so the residual should vanish to FD accuracy at interior points.
    """
    if t > model.T - 10.0 * fd_step_t:
        raise InvalidTimeError("too close to maturity for the time difference")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    hx = fd_step_x if fd_step_x is not None else 1e-3 * (1.0 + float(np.linalg.norm(x)))

    def u(tt, xx):
        return price_u(a_risk, model, payoff, tt, xx, rule)

    if t - fd_step_t >= 0.0:
        du_dt = (u(t + fd_step_t, x) - u(t - fd_step_t, x)) / (2.0 * fd_step_t)
    else:
        du_dt = (
            -3.0 * u(t, x) + 4.0 * u(t + fd_step_t, x) - u(t + 2.0 * fd_step_t, x)
        ) / (2.0 * fd_step_t)

    d = model.d
    center = u(t, x)
    hess = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = hx
        hess[i, i] = (u(t, x + ei) - 2.0 * center + u(t, x - ei)) / (hx * hx)
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = hx
            cross = (
                u(t, x + ei + ej)
                - u(t, x + ei - ej)
                - u(t, x - ei + ej)
                + u(t, x - ei - ej)
            ) / (4.0 * hx * hx)
            hess[i, j] = cross
            hess[j, i] = cross
    sigma_sq = model.sigma.entries @ model.sigma.entries
    return float(du_dt + 0.5 * np.trace(sigma_sq @ hess))


def limit_value(
    a_risk: float,
    model: BachelierModel,
    payoff: Payoff,
    phi0,
    rule: Optional[QuadratureRule] = None,
) -> float:
    """Scaling limit of the certainty equivalent for initial inventory phi0.

    Claim price at the inventory-shifted spot plus the quadratic carrying
    value of the initial position.
    """
    phi0 = np.atleast_1d(np.asarray(phi0, dtype=float))
    shifted = model.s0 - math.sqrt(a_risk) * row_vec_mul(phi0, model.sigma.entries)
    inventory = 0.5 * math.sqrt(a_risk) * quad_form(phi0, model.sigma.entries)
    return price_u(a_risk, model, payoff, 0.0, shifted, rule) + inventory


def indifference_limit(
    a_risk: float,
    model: BachelierModel,
    payoff: Payoff,
    phi0,
    rule: Optional[QuadratureRule] = None,
) -> float:
    """Scaling limit of the indifference price: the claim-price term alone."""
    phi0 = np.atleast_1d(np.asarray(phi0, dtype=float))
    shifted = model.s0 - math.sqrt(a_risk) * row_vec_mul(phi0, model.sigma.entries)
    return price_u(a_risk, model, payoff, 0.0, shifted, rule)
