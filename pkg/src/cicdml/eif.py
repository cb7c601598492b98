"""Efficient influence functions for the ATT and distributional targets.

Implements the orthogonal scores built from the nuisance triple
(gamma, nu, pi): the ATT score, the counterfactual-distribution and
counterfactual-quantile scores, and a generic evaluator for moment-type
targets defined through a right-continuous, bounded-variation link
function of the transported baseline outcome. The control-arm correction
is an integral of the treatment odds between the observed period-1
outcome and the transported baseline outcome; it is computed by adaptive
Simpson quadrature by default.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import MissingDensity, QuadratureNonConvergence, ZeroDenominator
from .nuisance import NuisanceSet

DEFAULT_ABS_TOL = 1e-6
DEFAULT_MAX_DEPTH = 20
DEFAULT_N_POINTS = 256

QUAD_RULES = ("adaptive-simpson", "fixed-trapezoid")


@dataclass(frozen=True)
class QuadratureConfig:
    """Quadrature scheme for the odds integral.

    ``adaptive-simpson`` refines until the absolute tolerance is met
    (raising if ``max_depth`` is exhausted first); ``fixed-trapezoid``
    uses a deterministic ``n_points``-node composite rule.
    """

    rule: str = "adaptive-simpson"
    abs_tol: float = DEFAULT_ABS_TOL
    max_depth: int = DEFAULT_MAX_DEPTH
    n_points: int = DEFAULT_N_POINTS

    def __post_init__(self):
        if self.rule not in QUAD_RULES:
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        if self.abs_tol <= 0:
            raise ValueError("abs_tol must be positive")


@dataclass(frozen=True)
class Observation:
    """A single observed data point (y0, y1, a, l)."""

    y0: float
    y1: float
    a: int
    l: np.ndarray = None

    def __post_init__(self):
        l = np.empty(0) if self.l is None else np.asarray(self.l, dtype=float)
        object.__setattr__(self, "l", l)

    @classmethod
    def from_dataset(cls, dataset, i: int) -> "Observation":
        return cls(y0=float(dataset.y0[i]), y1=float(dataset.y1[i]),
                   a=int(dataset.a[i]), l=dataset.l[i])


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


def _simpson_recurse(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm = f(lm)
    frm = f(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    err = left + right - whole
    if abs(err) <= 15.0 * tol:
        return left + right + err / 15.0
    if depth <= 0:
        raise QuadratureNonConvergence(
            f"adaptive Simpson did not reach tol={tol:g} on [{a:g}, {b:g}]")
    return (_simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + _simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1))


def _adaptive_simpson(f, a, b, abs_tol, max_depth):
    fa = f(a)
    fb = f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _simpson_recurse(f, a, b, fa, fm, fb, whole, abs_tol, max_depth)


def integrate_nu(lo: float, hi: float, l, nu, quad: Optional[QuadratureConfig] = None) -> float:
    """Signed integral of the odds function over [lo, hi] at covariates l.

    Orientation: swapping the limits flips the sign, so
    ``integrate_nu(hi, lo, ...) == -integrate_nu(lo, hi, ...)``.
    """
    quad = quad or QuadratureConfig()
    lo = float(lo)
    hi = float(hi)
    if lo == hi:
        return 0.0
    sign = 1.0
    a, b = lo, hi
    if b < a:
        a, b = b, a
        sign = -1.0

    def f(x):
        return float(nu(x, l))

    if quad.rule == "fixed-trapezoid":
        xs = np.linspace(a, b, quad.n_points)
        ys = np.array([f(x) for x in xs])
        return sign * float(np.trapezoid(ys, xs))
    return sign * _adaptive_simpson(f, a, b, quad.abs_tol, quad.max_depth)


def integrate_nu_many(lo, hi, l, nu, quad: Optional[QuadratureConfig] = None) -> np.ndarray:
    """Vectorized signed odds integrals over per-unit intervals.

    Dispatches to the odds object's own ``integral_many`` when it offers
    one (closed forms for analytic odds; a cached dense antiderivative
    for the covariate-free kernel fit), otherwise falls back to a
    batched fixed-node Simpson rule with ``quad.n_points`` nodes.
    """
    quad = quad or QuadratureConfig()
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = lo.shape[0]
    if n == 0:
        return np.zeros(0)
    if hasattr(nu, "integral_many"):
        try:
            return nu.integral_many(lo, hi, l)
        except NotImplementedError:
            pass
    n_nodes = quad.n_points + 1 - quad.n_points % 2  # odd node count
    t = np.linspace(0.0, 1.0, n_nodes)
    x = lo[:, None] + (hi - lo)[:, None] * t[None, :]
    l_mat = np.empty((n, 0)) if l is None or np.asarray(l).size == 0 else np.asarray(l, dtype=float)
    l_rep = np.repeat(l_mat, n_nodes, axis=0)
    vals = np.asarray(nu(x.ravel(), l_rep)).reshape(n, n_nodes)
    w = np.ones(n_nodes)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return (vals @ w) * (hi - lo) / (3.0 * (n_nodes - 1))


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------


def psi_att(w: Observation, theta: float, eta: NuisanceSet,
            quad: Optional[QuadratureConfig] = None) -> float:
    """ATT score at one observation.

    Treated arm: ``(a / pi) * ((y1 - gamma(y0, l)) - theta)``.
    Control arm: ``((1 - a) / pi)`` times the odds integral from y1 to
    the transported baseline outcome.
    """
    g = float(eta.gamma(w.y0, w.l))
    treated = w.a / eta.pi * ((w.y1 - g) - theta)
    if w.a == 1:
        return treated
    return treated + (1 - w.a) / eta.pi * integrate_nu(w.y1, g, w.l, eta.nu, quad)


def psi_counterfactual_mean(w: Observation, vartheta: float, eta: NuisanceSet,
                            quad: Optional[QuadratureConfig] = None) -> float:
    """Score of the counterfactual mean on the treated (the transported part
    of the ATT score, with opposite sign on the control correction)."""
    g = float(eta.gamma(w.y0, w.l))
    val = w.a * (g - vartheta)
    if w.a == 0:
        val -= integrate_nu(w.y1, g, w.l, eta.nu, quad)
    return val / eta.pi


def chi(x: float, w: Observation, gamma) -> int:
    """Compound sign: sign(y1 - gamma(y0, l)) if x lies in the closed
    interval between y1 and gamma(y0, l), else 0."""
    g = float(gamma(w.y0, w.l))
    if not min(w.y1, g) <= x <= max(w.y1, g):
        return 0
    if w.y1 > g:
        return 1
    if w.y1 < g:
        return -1
    return 0


def psi_cdt(w: Observation, y: float, vartheta: float, eta: NuisanceSet) -> float:
    """Counterfactual-distribution score at evaluation point y."""
    g = float(eta.gamma(w.y0, w.l))
    out = w.a / eta.pi * ((1.0 if g < y else 0.0) - vartheta)
    if w.a == 0:
        out += (w.a - 1) / eta.pi * float(eta.nu(y, w.l)) * chi(y, w, eta.gamma)
    return out


def psi_qtt(w: Observation, tau: float, vartheta1: float, vartheta2: float,
            eta: NuisanceSet) -> float:
    """Quantile-treatment-effect score; needs both fitted densities."""
    if eta.dens_y1_treated is None or eta.dens_gamma_treated is None:
        raise MissingDensity("QTT score needs dens_y1_treated and dens_gamma_treated")
    f1 = float(eta.dens_y1_treated(vartheta1))
    f2 = float(eta.dens_gamma_treated(vartheta2))
    g = float(eta.gamma(w.y0, w.l))
    first = w.a / eta.pi * ((1.0 if w.y1 <= vartheta1 else 0.0) - tau) / (-f1)
    num = w.a * ((1.0 if g < vartheta2 else 0.0) - tau)
    if w.a == 0:
        num += (w.a - 1) * float(eta.nu(vartheta2, w.l)) * chi(vartheta2, w, eta.gamma)
    return first - num / (-eta.pi * f2)


# ---------------------------------------------------------------------------
# General moment-type targets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GTildeSpec:
    """Link function of the transported outcome defining a moment target.

    Either smooth (``dx`` is the partial derivative in x) or a step
    function described by its jump locations and sizes, which may depend
    on the target value. Right-continuity and bounded variation on the
    outcome range are assumed.
    """

    value: Callable[[float, float], float]
    kind: str
    dx: Optional[Callable[[float, float], float]] = None
    jumps: Optional[Callable[[float], tuple]] = None
    right_continuous: bool = True
    # d/dt of the conditional moment among the treated: a known constant
    # for mean- and CDF-type links, or "gamma-density" for quantile-type
    # links (estimated by a kernel density of the transported outcome).
    dtheta: object = -1.0
    # For smooth links whose x-derivative does not involve the target
    # value, the control correction can be computed once per solve.
    dx_constant_in_target: bool = False

    def __post_init__(self):
        if self.kind not in ("smooth", "step"):
            raise ValueError("kind must be 'smooth' or 'step'")
        if self.kind == "smooth" and self.dx is None:
            raise ValueError("smooth link needs its x-derivative")
        if self.kind == "step" and self.jumps is None:
            raise ValueError("step link needs jump locations and sizes")


def gtilde_counterfactual_mean() -> GTildeSpec:
    """g(x, t) = x - t: the counterfactual mean on the treated."""
    return GTildeSpec(value=lambda x, t: x - t, kind="smooth",
                      dx=lambda x, t: np.ones_like(np.asarray(x, dtype=float)),
                      dx_constant_in_target=True)


def gtilde_cdf_indicator(y: float) -> GTildeSpec:
    """g(x, t) = 1{x < y} - t: the counterfactual distribution at y."""
    return GTildeSpec(
        value=lambda x, t: (np.asarray(x) < y).astype(float) - t,
        kind="step",
        jumps=lambda t: (np.array([y]), np.array([-1.0])),
    )


def gtilde_quantile(tau: float) -> GTildeSpec:
    """g(x, t) = 1{x < t} - tau: the counterfactual quantile at level tau."""
    return GTildeSpec(
        value=lambda x, t: (np.asarray(x) < t).astype(float) - tau,
        kind="step",
        jumps=lambda t: (np.array([t]), np.array([-1.0])),
        dtheta="gamma-density",
    )


def _stieltjes_step(y1: float, g: float, l, nu, spec: GTildeSpec, vartheta: float) -> float:
    """Oriented Lebesgue-Stieltjes sum over the half-open interval (y1, g].

    Jumps exactly at the lower endpoint are excluded, at the upper
    endpoint included; when g < y1 the interval flips to (g, y1] with a
    minus sign.
    """
    pts, sizes = spec.jumps(vartheta)
    pts = np.asarray(pts, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    if g >= y1:
        mask = (pts > y1) & (pts <= g)
        sign = 1.0
    else:
        mask = (pts > g) & (pts <= y1)
        sign = -1.0
    if not mask.any():
        return 0.0
    nu_vals = np.array([float(nu(pt, l)) for pt in pts[mask]])
    return sign * float(np.sum(nu_vals * sizes[mask]))


def psi_general(w: Observation, spec: GTildeSpec, vartheta: float, eta: NuisanceSet,
                denom: float, quad: Optional[QuadratureConfig] = None) -> float:
    """Score for a general moment-type target.

    ``denom`` is minus pi times the derivative of the conditional moment
    in the target value (a known constant for mean- and CDF-type links;
    a density for quantile-type links), supplied by the caller.
    """
    if denom == 0.0:
        raise ZeroDenominator("moment-derivative denominator is zero")
    g = float(eta.gamma(w.y0, w.l))
    num = w.a * float(np.asarray(spec.value(g, vartheta)))
    if w.a == 0:
        if spec.kind == "step":
            integral = _stieltjes_step(w.y1, g, w.l, eta.nu, spec, vartheta)
        else:
            quad_ = quad or QuadratureConfig()
            lo, hi = w.y1, g
            sign = 1.0
            if hi < lo:
                lo, hi = hi, lo
                sign = -1.0
            if lo == hi:
                integral = 0.0
            elif quad_.rule == "fixed-trapezoid":
                xs = np.linspace(lo, hi, quad_.n_points)
                ys = np.array([float(eta.nu(x, w.l)) * float(np.asarray(spec.dx(x, vartheta)))
                               for x in xs])
                integral = sign * float(np.trapezoid(ys, xs))
            else:
                def f(x):
                    return float(eta.nu(x, w.l)) * float(np.asarray(spec.dx(x, vartheta)))

                integral = sign * _adaptive_simpson(f, lo, hi, quad_.abs_tol, quad_.max_depth)
        num += (w.a - 1) * integral
    return num / denom


# ---------------------------------------------------------------------------
# Vectorized scores (Monte Carlo and estimation hot paths)
# ---------------------------------------------------------------------------


def psi_att_many(y0, y1, a, l, theta: float, eta: NuisanceSet,
                 quad: Optional[QuadratureConfig] = None) -> np.ndarray:
    """ATT score evaluated over arrays of observations."""
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    a = np.asarray(a)
    g = np.asarray(eta.gamma(y0, l))
    psi = a * ((y1 - g) - theta)
    ctrl = a == 0
    if ctrl.any():
        l_ctrl = None if l is None else np.asarray(l)[ctrl]
        integrals = integrate_nu_many(y1[ctrl], g[ctrl], l_ctrl, eta.nu, quad)
        psi[ctrl] += integrals
    return psi / eta.pi
