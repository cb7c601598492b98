"""Simulation data generators with oracle ground truth.

The core generator is a semiparametric transformation model: untreated
outcomes are a strictly increasing time-specific transform of a linear
index in covariates, latent confounders, and noise, with treatment
assigned by a logistic rule over covariates and confounders. The model
admits a closed-form transport map, an exact (Gauss-Hermite) treatment
odds function for the linear-Gaussian family, and an analytic
quantile-quantile invariance diagnostic. The linear special case with
identity transforms and independent treatment reproduces the classical
two-period difference-in-differences design.

Latent confounders and the assignment noise live only inside this
module; nothing downstream ever observes them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit, logit

from .data_model import PanelDataset, validate
from .errors import InvalidTransform
from .nuisance import (
    GridAntiderivative,
    NuisanceSet,
    _as_matrix,
    _bandwidth_vector,
    _nw_mean,
)

GH_NODES = 64
_GH_X, _GH_W = np.polynomial.hermite.hermgauss(GH_NODES)
_SQRT_PI = math.sqrt(math.pi)

# |intercept| + 3 * ||slopes|| must stay below this logit so propensities
# remain well inside (0, 1) over the bulk of the covariate distribution.
MAX_TREAT_LOGIT = 6.9

TRANSFORM_KINDS = ("identity", "exp", "power", "affine")


@dataclass(frozen=True)
class TransformSpec:
    """A strictly increasing outcome transform.

    kinds: ``identity``; ``exp``; ``power`` with exponent c > 0, acting as
    sign(x) |x|^c so it is increasing on all of R; ``affine`` a * x + b
    with a > 0.
    """

    kind: str
    a: float = 1.0
    b: float = 0.0
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise InvalidTransform(f"unknown transform kind {self.kind!r}")
        if self.kind == "power" and self.c <= 0:
            raise InvalidTransform("power transform needs a positive exponent")
        if self.kind == "affine" and self.a <= 0:
            raise InvalidTransform("affine transform needs a positive slope")

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "identity":
            return x
        if self.kind == "exp":
            return np.exp(x)
        if self.kind == "power":
            return np.sign(x) * np.abs(x) ** self.c
        return self.a * x + self.b

    def invert(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "identity":
            return y
        if self.kind == "exp":
            if np.any(y <= 0):
                raise InvalidTransform("exp transform inverse needs positive values")
            return np.log(y)
        if self.kind == "power":
            return np.sign(y) * np.abs(y) ** (1.0 / self.c)
        return (y - self.b) / self.a

    def invert_extended(self, y):
        """Inverse with constant continuation below the range (for odds
        evaluation off the outcome support, e.g. under perturbed maps)."""
        y = np.asarray(y, dtype=float)
        if self.kind == "exp":
            return np.log(np.clip(y, 1e-12, None))
        return self.invert(y)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b, "c": self.c}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformSpec":
        return cls(kind=d["kind"], a=d.get("a", 1.0), b=d.get("b", 0.0), c=d.get("c", 1.0))


identity = TransformSpec("identity")


@dataclass(frozen=True)
class StmConfig:
    """Parameters of the semiparametric transformation model.

    Untreated outcomes: ``Y_t = beta_t(k_t(L) + m(U) + eps_t)`` with
    ``k_t(L)`` linear in the covariates, ``m(U)`` linear in the latent
    confounders and ``eps_t`` iid Gaussian noise. Treatment:
    ``A = 1{b0 + bL L + bU U + logistic noise > 0}``. The treated
    period-1 outcome adds ``effect`` (or multiplies by it when
    ``effect_kind="multiplicative"``).

    ``eps_u_scale > 0`` deliberately violates the transport assumption by
    scaling the period-1 noise with the first latent coordinate; it
    exists for diagnostics only.
    """

    n: int
    p: int = 0
    q: int = 1
    beta0: TransformSpec = identity
    beta1: TransformSpec = identity
    k0_intercept: float = 0.0
    k0_coef: tuple = ()
    k1_intercept: float = 0.0
    k1_coef: tuple = ()
    m_coeffs: tuple = (1.0,)
    treat_intercept: float = 0.0
    treat_l: tuple = ()
    treat_u: tuple = (0.0,)
    eps_sigma: float = 1.0
    effect: float = 0.0
    effect_kind: str = "additive"
    eps_u_scale: float = 0.0
    seed: int = 0
    mc_size: int = 1_000_000

    def __post_init__(self):
        if len(self.k0_coef) != self.p or len(self.k1_coef) != self.p:
            raise ValueError("k0_coef and k1_coef must have length p")
        if len(self.m_coeffs) != self.q or len(self.treat_u) != self.q:
            raise ValueError("m_coeffs and treat_u must have length q")
        if len(self.treat_l) != self.p:
            raise ValueError("treat_l must have length p")
        if self.eps_sigma <= 0:
            raise ValueError("eps_sigma must be positive")
        if self.effect_kind not in ("additive", "multiplicative"):
            raise ValueError("effect_kind must be additive or multiplicative")
        if self.effect_kind == "multiplicative" and self.effect <= 0:
            raise ValueError("multiplicative effect must be positive")
        slope_norm = math.sqrt(sum(c * c for c in self.treat_l)
                               + sum(c * c for c in self.treat_u))
        if abs(self.treat_intercept) + 3.0 * slope_norm > MAX_TREAT_LOGIT:
            raise ValueError(
                "treatment model too extreme: positivity bound "
                f"|b0| + 3 ||slopes|| <= {MAX_TREAT_LOGIT} violated")

    @property
    def treatment_independent(self) -> bool:
        return all(c == 0.0 for c in self.treat_l) and all(c == 0.0 for c in self.treat_u)

    def k0(self, l):
        return self.k0_intercept + (l @ np.asarray(self.k0_coef) if self.p else 0.0)

    def k1(self, l):
        return self.k1_intercept + (l @ np.asarray(self.k1_coef) if self.p else 0.0)

    def to_dict(self) -> dict:
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d["beta0"] = self.beta0.to_dict()
        d["beta1"] = self.beta1.to_dict()
        for key in ("k0_coef", "k1_coef", "m_coeffs", "treat_l", "treat_u"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StmConfig":
        d = dict(d)
        d["beta0"] = TransformSpec.from_dict(d["beta0"])
        d["beta1"] = TransformSpec.from_dict(d["beta1"])
        for key in ("k0_coef", "k1_coef", "m_coeffs", "treat_l", "treat_u"):
            d[key] = tuple(d[key])
        return cls(**d)


class AnalyticGamma:
    """Closed-form transport map of the transformation model:
    ``beta1(beta0^{-1}(y) + k1(l) - k0(l))``, strictly increasing in y."""

    def __init__(self, cfg: StmConfig):
        self.cfg = cfg

    def __call__(self, y, l=None):
        cfg = self.cfg
        y_arr = np.atleast_1d(np.asarray(y, dtype=float))
        if cfg.p:
            l_arr = np.asarray(l, dtype=float)
            if l_arr.ndim == 1:
                l_arr = np.broadcast_to(l_arr, (y_arr.shape[0], cfg.p))
            shift = cfg.k1(l_arr) - cfg.k0(l_arr)
        else:
            shift = cfg.k1_intercept - cfg.k0_intercept
        out = cfg.beta1.apply(cfg.beta0.invert(y_arr) + shift)
        return float(out[0]) if np.isscalar(y) else out


class ConstantNu:
    """Constant treatment odds (independent assignment)."""

    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, x, l=None):
        if np.isscalar(x):
            return self.value
        return np.full(np.asarray(x).shape, self.value)

    def integral_many(self, lo, hi, l=None):
        return self.value * (np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float))


class LinearNu:
    """Odds linear in the transported outcome: slope * x + intercept."""

    def __init__(self, slope: float, intercept: float):
        self.slope = float(slope)
        self.intercept = float(intercept)

    def __call__(self, x, l=None):
        out = self.slope * np.asarray(x, dtype=float) + self.intercept
        return float(out) if np.isscalar(x) else out

    def integral_many(self, lo, hi, l=None):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        return 0.5 * self.slope * (hi * hi - lo * lo) + self.intercept * (hi - lo)


class GaussHermiteNu:
    """Exact treatment odds for the linear-Gaussian logistic family.

    Conditioning on the transported outcome pins down the latent index
    up to a Gaussian posterior, so the propensity is a one-dimensional
    Gaussian integral of the logistic link, evaluated by Gauss-Hermite
    quadrature.
    """

    def __init__(self, cfg: StmConfig):
        self.cfg = cfg
        m = np.asarray(cfg.m_coeffs, dtype=float)
        bu = np.asarray(cfg.treat_u, dtype=float)
        var_z = float(m @ m) + cfg.eps_sigma ** 2
        cov_mb = float(m @ bu)
        self._kappa = cov_mb / var_z
        self._post_var = max(float(bu @ bu) - cov_mb ** 2 / var_z, 0.0)
        self._grid = None

    def propensity_many(self, x, l):
        cfg = self.cfg
        x = np.asarray(x, dtype=float)
        z = cfg.beta1.invert_extended(x) - cfg.k1(np.asarray(l, dtype=float) if cfg.p else None)
        mu = cfg.treat_intercept + self._kappa * z
        if cfg.p:
            mu = mu + np.asarray(l, dtype=float) @ np.asarray(cfg.treat_l)
        spread = math.sqrt(2.0 * self._post_var)
        vals = expit(mu[:, None] + spread * _GH_X[None, :])
        p = vals @ _GH_W / _SQRT_PI
        return np.clip(p, 1e-12, 1.0 - 1e-12)

    def __call__(self, x, l=None):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        if self.cfg.p:
            l_arr = np.asarray(l, dtype=float)
            if l_arr.ndim == 1:
                l_arr = np.broadcast_to(l_arr, (x_arr.shape[0], self.cfg.p))
        else:
            l_arr = None
        pr = self.propensity_many(x_arr, l_arr)
        out = pr / (1.0 - pr)
        return float(out[0]) if np.isscalar(x) else out

    def integral_many(self, lo, hi, l=None):
        if self.cfg.p:
            raise NotImplementedError("cached antiderivative requires p = 0")
        if self._grid is None:
            self._grid = GridAntiderivative(lambda gx: self(gx, None))
        return self._grid.integrate(lo, hi)


@dataclass(frozen=True)
class OracleTruth:
    """Ground truth carried alongside a generated dataset."""

    gamma_true: AnalyticGamma
    att_true: float
    nu_available: bool = True
    mc_size: int = 1_000_000


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), int(tag), 0x5D6)))


def _draw(cfg: StmConfig, n: int, rng: np.random.Generator):
    """One draw of (l, u, a, y0, y1_untreated) from the model."""
    l = rng.standard_normal((n, cfg.p))
    u = rng.standard_normal((n, cfg.q))
    noise = rng.logistic(0.0, 1.0, n)
    logit_index = cfg.treat_intercept + noise
    if cfg.p:
        logit_index = logit_index + l @ np.asarray(cfg.treat_l)
    logit_index = logit_index + u @ np.asarray(cfg.treat_u)
    a = (logit_index > 0.0).astype(int)
    m_u = u @ np.asarray(cfg.m_coeffs)
    eps0 = rng.normal(0.0, cfg.eps_sigma, n)
    eps1 = rng.normal(0.0, cfg.eps_sigma, n)
    if cfg.eps_u_scale:
        eps1 = eps1 * (1.0 + cfg.eps_u_scale * np.abs(u[:, 0]))
    y0 = cfg.beta0.apply(cfg.k0(l) + m_u + eps0)
    y1_untreated = cfg.beta1.apply(cfg.k1(l) + m_u + eps1)
    return l, u, a, y0, y1_untreated


def _apply_effect(cfg: StmConfig, y1_untreated: np.ndarray) -> np.ndarray:
    if cfg.effect_kind == "additive":
        return y1_untreated + cfg.effect
    return y1_untreated * cfg.effect


def gen_stm(cfg: StmConfig) -> tuple[PanelDataset, OracleTruth]:
    """Generate a dataset from the transformation model with its oracle.

    The ATT truth is the additive effect directly, or a Monte Carlo
    average of the treated counterfactual contrast for multiplicative
    effects (``cfg.mc_size`` fresh draws).
    """
    rng = _rng(cfg.seed, 1)
    l, _, a, y0, y1_untreated = _draw(cfg, cfg.n, rng)
    y1 = np.where(a == 1, _apply_effect(cfg, y1_untreated), y1_untreated)
    data = PanelDataset(y0=y0, y1=y1, a=a, l=l)
    validate(data)
    if cfg.effect_kind == "additive":
        att = float(cfg.effect)
    else:
        mc_rng = _rng(cfg.seed, 2)
        _, _, a_mc, _, y1u_mc = _draw(cfg, cfg.mc_size, mc_rng)
        treated = a_mc == 1
        att = float(np.mean(_apply_effect(cfg, y1u_mc[treated]) - y1u_mc[treated]))
    truth = OracleTruth(gamma_true=AnalyticGamma(cfg), att_true=att, mc_size=cfg.mc_size)
    return data, truth


def did_config(n: int, trend: float = 1.0, effect: float = 2.0, pi: float = 0.5,
               seed: int = 0) -> StmConfig:
    """The linear special case: identity transforms, no covariates,
    treatment independent of everything."""
    if not 0.0 < pi < 1.0:
        raise ValueError("pi must lie in (0, 1)")
    return StmConfig(n=n, p=0, q=1, k0_intercept=0.0, k1_intercept=float(trend),
                     m_coeffs=(1.0,), treat_intercept=float(logit(pi)),
                     treat_u=(0.0,), eps_sigma=1.0, effect=float(effect), seed=seed)


def gen_did(n: int, c: float = 1.0, delta: float = 2.0, pi: float = 0.5,
            seed: int = 0) -> tuple[PanelDataset, OracleTruth]:
    """Generate from the linear model; the transport map is y + c and the
    treatment odds are the constant pi / (1 - pi)."""
    return gen_stm(did_config(n, trend=c, effect=delta, pi=pi, seed=seed))


def true_pi(cfg: StmConfig) -> float:
    """Marginal treatment probability implied by the logistic model."""
    slope_sq = sum(c * c for c in cfg.treat_l) + sum(c * c for c in cfg.treat_u)
    if slope_sq == 0.0:
        return float(expit(cfg.treat_intercept))
    spread = math.sqrt(2.0 * slope_sq)
    vals = expit(cfg.treat_intercept + spread * _GH_X)
    return float(vals @ _GH_W / _SQRT_PI)


class _McNu:
    """Monte Carlo regression oracle for the treatment odds.

    Oversmooths the rule-of-thumb bandwidth by 1.5x: the oracle trades
    a little bias for low variance, and its bias is bounded by the
    analytic cross-check.
    """

    def __init__(self, cfg: StmConfig, mc_size: int, seed: int):
        rng = _rng(seed, 3)
        l, _, a, y0, _ = _draw(cfg, mc_size, rng)
        gamma = AnalyticGamma(cfg)
        x = gamma(y0, l if cfg.p else None)
        z = np.column_stack([x, l]) if cfg.p else x.reshape(-1, 1)
        self._z = z
        self._a = a.astype(float)
        self._h = 1.5 * _bandwidth_vector(z, None)
        self.p = cfg.p

    def __call__(self, x, l=None):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        if self.p:
            l_arr = np.asarray(l, dtype=float)
            if l_arr.ndim == 1:
                l_arr = np.broadcast_to(l_arr, (x_arr.shape[0], self.p))
            query = np.column_stack([x_arr, l_arr])
        else:
            query = x_arr.reshape(-1, 1)
        pr = _nw_mean(query, self._z, self._a, self._h, "gaussian",
                      fallback=float(self._a.mean()))
        pr = np.clip(pr, 1e-6, 1.0 - 1e-6)
        out = pr / (1.0 - pr)
        return float(out[0]) if np.isscalar(x) else out


def true_nuisances(cfg: StmConfig, method: str = "auto",
                   mc_size: Optional[int] = None, seed: int = 0) -> NuisanceSet:
    """Oracle nuisance set for a model configuration.

    ``method="auto"`` uses the closed-form transport map, the exact
    constant odds under independent treatment, and the Gauss-Hermite
    posterior odds otherwise. ``method="mc"`` replaces the odds with a
    Monte Carlo kernel-regression oracle on ``mc_size`` fresh draws
    (default ``cfg.mc_size``), kept as an independent cross-check of the
    analytic route.
    """
    if method not in ("auto", "analytic", "mc"):
        raise ValueError("method must be auto, analytic or mc")
    gamma = AnalyticGamma(cfg)
    pi = true_pi(cfg)
    if method == "mc":
        nu = _McNu(cfg, mc_size or cfg.mc_size, seed)
    elif cfg.treatment_independent:
        nu = ConstantNu(pi / (1.0 - pi))
    else:
        nu = GaussHermiteNu(cfg)
    return NuisanceSet(gamma=gamma, nu=nu, pi=pi)


# ---------------------------------------------------------------------------
# Quantile-quantile invariance diagnostic
# ---------------------------------------------------------------------------


def qq_transform(cfg: StmConfig, u: float, y, l=None) -> np.ndarray:
    """Latent-conditional quantile-quantile transform at confounder value u.

    Computed analytically from the model: the period-0 outcome is mapped
    through the u-conditional CDF at t = 0 and the u-conditional quantile
    at t = 1. When the noise law is the same in both periods all
    u-dependence cancels; the ``eps_u_scale`` violation leaves a
    u-dependent stretch.
    """
    y = np.asarray(y, dtype=float)
    l_mat = _as_matrix(l, y.shape[0]) if cfg.p else None
    m_u = float(cfg.m_coeffs[0]) * u
    ratio = 1.0 + cfg.eps_u_scale * abs(u)
    k0 = cfg.k0(l_mat) if cfg.p else cfg.k0_intercept
    k1 = cfg.k1(l_mat) if cfg.p else cfg.k1_intercept
    inner = k1 + m_u + ratio * (cfg.beta0.invert(y) - m_u - k0)
    return cfg.beta1.apply(inner)


def qq_invariance_diagnostic(cfg: StmConfig, u_grid=None, y_grid=None, l_grid=None) -> float:
    """Max deviation of the latent-conditional transform across confounder
    values: zero (to rounding) when the transport assumption holds,
    strictly positive under the period-asymmetric noise violation."""
    if u_grid is None:
        u_grid = np.linspace(-2.0, 2.0, 7)
    if y_grid is None:
        width = math.sqrt(sum(c * c for c in cfg.k0_coef)
                          + sum(c * c for c in cfg.m_coeffs) + cfg.eps_sigma ** 2)
        z = np.linspace(cfg.k0_intercept - 2.5 * width, cfg.k0_intercept + 2.5 * width, 41)
        y_grid = cfg.beta0.apply(z)
    if cfg.p:
        if l_grid is None:
            l_grid = np.vstack([np.zeros(cfg.p), 0.7 * np.ones(cfg.p), -0.7 * np.ones(cfg.p)])
        rows = [np.broadcast_to(row, (len(y_grid), cfg.p)) for row in np.atleast_2d(l_grid)]
    else:
        rows = [None]
    worst = 0.0
    for l_row in rows:
        vals = np.stack([qq_transform(cfg, float(u), y_grid, l_row) for u in u_grid])
        worst = max(worst, float(np.max(vals.max(axis=0) - vals.min(axis=0))))
    return worst


# ---------------------------------------------------------------------------
# Named configurations
# ---------------------------------------------------------------------------

DGP_NAMES = ("did", "stm-exp", "stm-power", "stm-broken", "stm-cov")


def named_config(name: str, n: int = 2000, seed: int = 0,
                 effect: Optional[float] = None, trend: Optional[float] = None,
                 pi: float = 0.5) -> StmConfig:
    """Shipped model configurations addressable by name from the CLI."""
    if name == "did":
        return did_config(n, trend=1.0 if trend is None else trend,
                          effect=2.0 if effect is None else effect, pi=pi, seed=seed)
    if name == "stm-exp":
        return StmConfig(n=n, p=0, q=1, beta0=identity, beta1=TransformSpec("exp"),
                         k0_intercept=0.2, k1_intercept=0.7, m_coeffs=(1.0,),
                         treat_intercept=0.0, treat_u=(0.8,), eps_sigma=0.5,
                         effect=2.0 if effect is None else effect, seed=seed)
    if name == "stm-power":
        return StmConfig(n=n, p=0, q=2, beta0=identity, beta1=TransformSpec("power", c=2.0),
                         k0_intercept=0.3, k1_intercept=0.8, m_coeffs=(0.8, 0.6),
                         treat_intercept=0.2, treat_u=(0.6, -0.4), eps_sigma=0.7,
                         effect=1.5 if effect is None else effect, seed=seed)
    if name == "stm-broken":
        cfg = named_config("stm-exp", n=n, seed=seed, effect=effect)
        return replace(cfg, eps_u_scale=0.75)
    if name == "stm-cov":
        return StmConfig(n=n, p=2, q=1, beta0=identity, beta1=identity,
                         k0_intercept=0.0, k0_coef=(0.5, -0.3),
                         k1_intercept=0.8, k1_coef=(0.8, 0.1), m_coeffs=(1.0,),
                         treat_intercept=0.0, treat_l=(0.4, 0.2), treat_u=(0.6,),
                         eps_sigma=1.0, effect=2.0 if effect is None else effect,
                         seed=seed)
    raise ValueError(f"unknown DGP name {name!r}; expected one of {DGP_NAMES}")
