"""Certainty-equivalent estimators, the dual lower-bound functional, and the
hyperbolic kernel family with its small-impact limits.

The two sides of the scaling limit are checked from here: the Monte Carlo
certainty equivalent along the tracking hedge approaches the limit from the
primal side, while the dual functional evaluated at any bounded selector
bounds the limit from below, with equality at the optimal selector.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from numpy.random import Generator, Philox
from scipy.integrate import quad

from .errors import (
    InvalidParameterError,
    OverflowGuardError,
    SingularDenominatorError,
)
from .linalg import SpdMatrix, hyperbolic_ratio, inverse, row_vec_mul
from .market import (
    BachelierModel,
    Payoff,
    TimeGrid,
    sup_convolve_argmax_batch,
    zero_payoff,
)
from .hedging import run_hedge_batch
from .pricing import QuadratureRule, coarsen_rule, default_quadrature

LAM_DESK_FLOOR = 0.02


@dataclass(frozen=True)
class CeEstimate:
    """Log-domain Monte Carlo estimate of a certainty equivalent."""

    value: float
    std_error: float
    n_paths: int
    lam: float
    a_risk: float


@dataclass(frozen=True)
class DualSpec:
    """A candidate selector for the dual functional.

    ``h`` maps terminal Brownian values (m, d) to displacement rows (m, d);
    an optional constant ``shift`` is added on top.  ``bound`` documents the
    selector's sup-norm when ``bounded`` is set and is checked on the sampled
    points as a diagnostic.
    """

    h: Callable[[np.ndarray], np.ndarray]
    shift: Optional[np.ndarray] = None
    bounded: bool = True
    bound: float = float("inf")
    name: str = "dual"

    def displacements(self, w_terminal: np.ndarray) -> np.ndarray:
        y = np.asarray(self.h(w_terminal), dtype=float)
        if self.shift is not None:
            y = y + np.asarray(self.shift, dtype=float)[None, :]
        if self.bounded and np.isfinite(self.bound):
            worst = float(np.linalg.norm(y, axis=1).max(initial=0.0))
            if worst > self.bound * (1.0 + 1e-9) + 1e-12:
                warnings.warn(
                    f"dual spec {self.name!r} exceeded its declared bound "
                    f"({worst:.4g} > {self.bound:.4g})",
                    RuntimeWarning,
                    stacklevel=2,
                )
        return y


def _log_mean_exp(exponents: np.ndarray) -> tuple[float, float, float]:
    """Shifted log-sum-exp with the pieces needed for the delta method."""
    if not np.all(np.isfinite(exponents)):
        raise OverflowGuardError("utility exponents left the representable range")
    mx = float(exponents.max())
    w = np.exp(exponents - mx)
    mean_w = float(w.mean())
    sd_w = float(w.std(ddof=1)) if len(w) > 1 else 0.0
    return math.log(mean_w) + mx, mean_w, sd_w


def certainty_equivalent_mc(
    a_risk: float,
    lam: float,
    model: BachelierModel,
    payoff: Payoff,
    phi0,
    n_paths: int,
    grid: TimeGrid,
    seed: int,
    rule: Optional[QuadratureRule] = None,
    workers: int = 1,
) -> CeEstimate:
    """Certainty equivalent along the tracking hedge, by simulation.

    Exponents (A/lam)(payoff - wealth) are aggregated with a shifted
    log-sum-exp so large ratios never overflow; the standard error comes from
    the delta method on the exponential mean.  The tracking family is
    asymptotically optimal rather than exactly infimising, so for finite
    impact this is an upper-bound proxy that converges to the limit value.
    """
    if lam <= 0.0 or a_risk <= 0.0:
        raise InvalidParameterError("lam and a_risk must be positive")
    if lam < LAM_DESK_FLOOR:
        warnings.warn(
            f"lam={lam} below the desk floor {LAM_DESK_FLOOR}; "
            "exponential-moment variance may be extreme",
            RuntimeWarning,
            stacklevel=2,
        )
    batch = run_hedge_batch(
        a_risk, lam, model, payoff, phi0, grid, n_paths, seed, workers=workers, rule=rule
    )
    log_mean, mean_w, sd_w = _log_mean_exp(batch.utility_exponent)
    value = (lam / a_risk) * log_mean
    std_error = 0.0
    if sd_w > 0.0:
        std_error = (lam / a_risk) * sd_w / (mean_w * math.sqrt(n_paths))
    return CeEstimate(
        value=value, std_error=std_error, n_paths=n_paths, lam=lam, a_risk=a_risk
    )


def indifference_price_mc(
    a_risk: float,
    lam: float,
    model: BachelierModel,
    payoff: Payoff,
    phi0,
    n_paths: int,
    grid: TimeGrid,
    seed: int,
    rule: Optional[QuadratureRule] = None,
    workers: int = 1,
) -> CeEstimate:
    """Indifference price as a difference of certainty equivalents.

    The claim run and the zero-claim run share random numbers (the same
    keyed substreams), each with its own tracking strategy; the standard
    error accounts for the common-random-number covariance.  Like the
    certainty equivalent it is an upper-bound proxy at finite impact and
    converges to the indifference limit.
    """
    batch_f = run_hedge_batch(
        a_risk, lam, model, payoff, phi0, grid, n_paths, seed, workers=workers, rule=rule
    )
    batch_0 = run_hedge_batch(
        a_risk, lam, model, zero_payoff(), phi0, grid, n_paths, seed, workers=workers
    )
    log_f, mean_f, sd_f = _log_mean_exp(batch_f.utility_exponent)
    log_0, mean_0, sd_0 = _log_mean_exp(batch_0.utility_exponent)
    value = (lam / a_risk) * (log_f - log_0)
    wf = np.exp(batch_f.utility_exponent - batch_f.utility_exponent.max())
    w0 = np.exp(batch_0.utility_exponent - batch_0.utility_exponent.max())
    var = 0.0
    if n_paths > 1:
        cov = float(np.cov(wf, w0, ddof=1)[0, 1])
        var = (
            (sd_f / mean_f) ** 2 + (sd_0 / mean_0) ** 2 - 2.0 * cov / (mean_f * mean_0)
        ) / n_paths
    std_error = (lam / a_risk) * math.sqrt(max(var, 0.0))
    return CeEstimate(
        value=value, std_error=std_error, n_paths=n_paths, lam=lam, a_risk=a_risk
    )


def dual_lower_bound(
    a_risk: float,
    model: BachelierModel,
    payoff: Payoff,
    phi0,
    spec: DualSpec,
    n_samples_or_rule: Union[int, QuadratureRule, None] = None,
    seed: int = 0,
) -> tuple[float, float]:
    """Value of the dual functional for one selector.

    Expectation over the terminal Brownian value of

        f(s0 + w sigma - Y) + <phi0, Y> - <Y, Y sigma^{-1}>/(2 sqrt A),

    with Y = spec(w).  Any bounded measurable selector yields a valid lower
    bound for the scaling limit.  Quadrature (d <= 3) reports the
    half-resolution refinement gap as its tolerance; Monte Carlo reports a
    standard error.
    """
    if a_risk <= 0.0:
        raise InvalidParameterError("a_risk must be positive")
    phi0 = np.atleast_1d(np.asarray(phi0, dtype=float))
    rule: Optional[QuadratureRule]
    if isinstance(n_samples_or_rule, QuadratureRule):
        rule = n_samples_or_rule
    elif n_samples_or_rule is None:
        rule = default_quadrature(model.d)
    else:
        rule = None

    if rule is not None:
        value = _dual_on_rule(a_risk, model, payoff, phi0, spec, rule)
        coarse = _dual_on_rule(a_risk, model, payoff, phi0, spec, coarsen_rule(rule))
        return value, abs(value - coarse)

    n_samples = int(n_samples_or_rule) if n_samples_or_rule else 100_000
    rng = Generator(Philox(key=np.array([seed, 0xD0A1], dtype=np.uint64)))
    half = rng.standard_normal((n_samples // 2, model.d))
    z = np.vstack([half, -half])
    terms = _dual_terms(a_risk, model, payoff, phi0, spec, math.sqrt(model.T) * z)
    return float(terms.mean()), float(terms.std(ddof=1) / math.sqrt(len(terms)))


def _dual_on_rule(a_risk, model, payoff, phi0, spec, rule) -> float:
    w_terminal = math.sqrt(model.T) * rule.nodes
    terms = _dual_terms(a_risk, model, payoff, phi0, spec, w_terminal)
    return float(rule.weights @ terms)


def _dual_terms(a_risk, model, payoff, phi0, spec, w_terminal) -> np.ndarray:
    y = spec.displacements(w_terminal)
    sig_inv = inverse(model.sigma).entries
    points = model.s0[None, :] + w_terminal @ model.sigma.entries - y
    payoff_vals = np.asarray(payoff.evaluate(points), dtype=float)
    penalty = np.einsum("ij,jk,ik->i", y, sig_inv, y) / (2.0 * math.sqrt(a_risk))
    return payoff_vals + y @ phi0 - penalty


def optimal_dual_Y(
    a_risk: float,
    model: BachelierModel,
    payoff: Payoff,
    phi0,
    eps: float = 1e-9,
) -> DualSpec:
    """Selector achieving the scaling limit in the dual functional.

    At each terminal Brownian value w, evaluate the inflated payoff's
    eps-displacement at x = s0 - sqrt(A) phi0 sigma + w sigma; the selector is
    the NEGATED displacement plus the constant inventory shift
    sqrt(A) phi0 sigma.  (The dual functional evaluates the payoff at
    s0 + w sigma - Y, so recovering f(x + y*) requires Y to carry -y*.)
    """
    phi0 = np.atleast_1d(np.asarray(phi0, dtype=float))
    sqa = math.sqrt(a_risk)
    base_shift = sqa * row_vec_mul(phi0, model.sigma.entries)

    def selector(w_terminal: np.ndarray) -> np.ndarray:
        x = model.s0[None, :] - base_shift[None, :] + w_terminal @ model.sigma.entries
        y_star = sup_convolve_argmax_batch(payoff, a_risk, model.sigma, x, eps=eps)
        return -y_star

    bound = (
        2.0 * sqa * model.sigma.max_eig * payoff.lipschitz_constant
        + float(np.linalg.norm(base_shift))
    )
    return DualSpec(
        h=selector, shift=base_shift, bounded=True, bound=bound, name="optimal"
    )


# ---------------------------------------------------------------------------
# kernel family
# ---------------------------------------------------------------------------


def _kernel_pre(lam: float, T: float, t: float, s: float, s_strict: bool) -> None:
    if lam <= 0.0:
        raise InvalidParameterError("lam must be positive")
    if not (0.0 <= s <= t <= T):
        raise InvalidParameterError(f"need 0 <= s <= t <= T, got s={s}, t={t}, T={T}")
    if s_strict and s >= T:
        raise SingularDenominatorError("kernel denominator vanishes at s = T")


def kernel_K(
    a_risk: float, lam: float, sigma: SpdMatrix, T: float, t: float, s: float
) -> np.ndarray:
    """cosh(sqrt(A)(T-t) sigma/lam) sinh(sqrt(A)(T-s) sigma/lam)^{-1}."""
    _kernel_pre(lam, T, t, s, s_strict=True)
    c = math.sqrt(a_risk) / lam
    return hyperbolic_ratio(sigma, "cosh", "sinh", c * (T - t), c * (T - s))


def kernel_G(a_risk: float, lam: float, sigma: SpdMatrix, T: float, t: float) -> np.ndarray:
    """sinh(sqrt(A)(T-t) sigma/lam) sinh(sqrt(A) T sigma/lam)^{-1}."""
    _kernel_pre(lam, T, t, 0.0, s_strict=True)
    c = math.sqrt(a_risk) / lam
    return hyperbolic_ratio(sigma, "sinh", "sinh", c * (T - t), c * T)


def kernel_L(
    a_risk: float, lam: float, sigma: SpdMatrix, T: float, t: float, s: float
) -> np.ndarray:
    """sinh(sqrt(A)(T-t) sigma/lam) sinh(sqrt(A)(T-s) sigma/lam)^{-1}."""
    _kernel_pre(lam, T, t, s, s_strict=True)
    c = math.sqrt(a_risk) / lam
    return hyperbolic_ratio(sigma, "sinh", "sinh", c * (T - t), c * (T - s))


def _stable_inv_sinh_sq(y: np.ndarray) -> np.ndarray:
    # 1/sinh^2(y) = 4 e^{-2y} / (1 - e^{-2y})^2  for y > 0
    e = np.exp(-2.0 * y)
    return 4.0 * e / (1.0 - e) ** 2


def _stable_coth(y: np.ndarray) -> np.ndarray:
    e = np.exp(-2.0 * y)
    return (1.0 + e) / (1.0 - e)


def kernel_limit_integral(
    a_risk: float,
    lam: float,
    sigma: SpdMatrix,
    T: float,
    s: float,
    which: str = "K",
) -> np.ndarray:
    """(1/(2 lam)) * integral over t in [s, T] of the squared kernel.

    Evaluated per eigenvalue by the closed antiderivative of cosh^2/sinh^2,
    in overflow-free exponential form; converges to sigma^{-1}/(4 sqrt A) as
    the impact vanishes, exponentially fast.
    """
    _kernel_pre(lam, T, s, s, s_strict=True)
    if which not in ("K", "L"):
        raise InvalidParameterError("which must be 'K' or 'L'")
    tau = T - s
    c = math.sqrt(a_risk) * sigma.eig_values / lam
    y = c * tau
    boundary = 0.5 * tau * _stable_inv_sinh_sq(y)
    bulk = _stable_coth(y) / (2.0 * c)
    vals = (boundary + bulk) if which == "K" else (bulk - boundary)
    vals = vals / (2.0 * lam)
    q = sigma.eig_vectors
    out = (q * vals) @ q.T
    return 0.5 * (out + out.T)


def kernel_time_integral(
    a_risk: float, lam: float, sigma: SpdMatrix, T: float, s: float
) -> np.ndarray:
    """Adaptive time quadrature of kernel_K over [s, T], as a cross-check.

    The identity (sqrt A / lam) * integral = sigma^{-1} holds for every s;
    this routine intentionally avoids the closed antiderivative so it can
    verify the kernels independently.  The integrand's boundary layer near
    t = s is split off explicitly for the adaptive integrator.
    """
    _kernel_pre(lam, T, s, s, s_strict=True)
    c = math.sqrt(a_risk) / lam
    vals = np.empty(sigma.dim)
    for i, eig in enumerate(sigma.eig_values):

        def integrand(t, eig=eig):
            p = c * (T - t) * eig
            q_ = c * (T - s) * eig
            return math.exp(p - q_) * (1.0 + math.exp(-2.0 * p)) / (1.0 - math.exp(-2.0 * q_))

        split = min(s + 10.0 / (c * eig), T)
        total, _ = quad(integrand, s, split, limit=200)
        if split < T:
            tail, _ = quad(integrand, split, T, limit=200)
            total += tail
        vals[i] = total
    q = sigma.eig_vectors
    out = (q * vals) @ q.T
    return 0.5 * (out + out.T)
