"""Cross-fitted estimation: repetitions, estimating equations, inference.

The full procedure: repeat S times {partition into K folds, fit nuisances
on each fold's complement, solve the pooled estimating equation built
from the orthogonal score, estimate its variance}; aggregate the S
repetitions by medians (variance inflated by the squared deviation of
each repetition from the median point estimate); form a normal-quantile
confidence interval. Plug-in estimators that evaluate the identification
formulas directly (no cross-fitting, no inference) live here too.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.stats import norm

from .data_model import (
    EstimandKind,
    EstimandSpec,
    FoldAssignment,
    PanelDataset,
    partition_folds,
    validate,
)
from .eif import GTildeSpec, QuadratureConfig, chi, integrate_nu_many
from .errors import DegenerateArm, InsufficientData, NoBracket, NoTreatedInEvaluation
from .nuisance import (
    NuisanceSet,
    compose_gamma,
    estimate_pi,
    fit_cond_cdf,
    fit_cond_quantile,
    fit_density,
    fit_nu,
    select_bandwidth_scale,
    silverman_bandwidth,
    _bandwidth_vector,
)

DEFAULT_EPS_CLIP = 0.01
DEFAULT_F_MIN = 1e-3


@dataclass(frozen=True)
class CrossFitConfig:
    """Settings for the cross-fitted estimator.

    K folds, S repetitions, optional K' model-selection folds (None
    keeps the rule-of-thumb bandwidths), confidence level alpha, master
    seed, nuisance options, quadrature scheme, and whether folds are
    stratified by treatment arm.
    """

    K: int = 5
    S: int = 1
    K_prime: Optional[int] = None
    alpha: float = 0.05
    seed: int = 0
    kernel: str = "gaussian"
    bandwidth: Optional[float] = None
    eps_clip: float = DEFAULT_EPS_CLIP
    f_min: float = DEFAULT_F_MIN
    quad: QuadratureConfig = field(default_factory=QuadratureConfig)
    stratify: bool = True

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if self.S < 1:
            raise ValueError("S must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class EstimateReport:
    """Output of one cross-fitted run: estimate, variance, interval,
    per-repetition diagnostics, and configuration echoes."""

    theta_hat: float
    sigma2_hat: float
    ci_lo: float
    ci_hi: float
    per_rep: Tuple[Tuple[float, float], ...]
    estimand: EstimandSpec
    n: int
    K: int
    S: int
    alpha: float
    seed: int

    def to_dict(self) -> dict:
        d = {
            "theta_hat": self.theta_hat,
            "sigma2_hat": self.sigma2_hat,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "per_rep": [list(t) for t in self.per_rep],
            "estimand": self.estimand.kind.value,
            "n": self.n,
            "K": self.K,
            "S": self.S,
            "alpha": self.alpha,
            "seed": self.seed,
        }
        if self.estimand.y_point is not None:
            d["y_point"] = self.estimand.y_point
        if self.estimand.tau is not None:
            d["tau"] = self.estimand.tau
        return d


def _rep_seed(seed: int, s: int) -> int:
    return int(np.random.SeedSequence(entropy=(int(seed), int(s), 0xCF17)).generate_state(1)[0])


def _l_or_none(data: PanelDataset, idx=None):
    if data.p == 0:
        return None
    return data.l if idx is None else data.l[idx]


# ---------------------------------------------------------------------------
# Per-fold nuisance fitting
# ---------------------------------------------------------------------------


def fit_fold_nuisances(data: PanelDataset, train_idx: np.ndarray, cfg: CrossFitConfig,
                       need_densities: bool = False) -> NuisanceSet:
    """Fit (gamma, nu, pi) — and the treated outcome densities when asked —
    on a training complement.

    The transport map is fitted on training controls only; the odds
    regression uses the whole training set with the fitted map applied
    first. With ``cfg.K_prime`` set, a bandwidth scale is selected by
    K'-fold cross-validation inside the complement.
    """
    y0 = data.y0[train_idx]
    y1 = data.y1[train_idx]
    a = data.a[train_idx]
    l = _l_or_none(data, train_idx)
    n_treated = int((a == 1).sum())
    n_control = int((a == 0).sum())
    if n_treated == 0 or n_control == 0:
        raise DegenerateArm("training complement lost a treatment arm")
    if n_control < 2:
        raise InsufficientData("need at least 2 control units to fit the transport map")

    scale = 1.0
    if cfg.K_prime is not None:
        scale = select_bandwidth_scale(y0, y1, a, l, cfg.K_prime, seed=cfg.seed,
                                       kernel=cfg.kernel)

    ctrl = a == 0
    l_ctrl = None if l is None else l[ctrl]

    def scaled_bw(mat):
        if cfg.bandwidth is not None:
            return cfg.bandwidth
        if scale == 1.0:
            return None
        return _bandwidth_vector(mat, None) * scale

    cdf0 = fit_cond_cdf(y0[ctrl], l_ctrl, kernel=cfg.kernel,
                        bandwidth=None if l is None else scaled_bw(l_ctrl))
    quant1 = fit_cond_quantile(y1[ctrl], l_ctrl, kernel=cfg.kernel,
                               bandwidth=None if l is None else scaled_bw(l_ctrl))
    gamma = compose_gamma(cdf0, quant1)

    x_train = gamma(y0, l)
    z = np.column_stack([x_train, l]) if l is not None else x_train.reshape(-1, 1)
    nu = fit_nu(x_train, l, a, kernel=cfg.kernel, bandwidth=scaled_bw(z),
                eps_clip=cfg.eps_clip)
    pi = estimate_pi(a)

    dens_y1 = dens_gamma = None
    if need_densities:
        treated = a == 1
        dens_y1 = fit_density(y1[treated], kernel=cfg.kernel, f_min=cfg.f_min)
        dens_gamma = fit_density(x_train[treated], kernel=cfg.kernel, f_min=cfg.f_min)
    return NuisanceSet(gamma=gamma, nu=nu, pi=pi,
                       dens_y1_treated=dens_y1, dens_gamma_treated=dens_gamma)


@dataclass
class _FoldPieces:
    """Per-unit quantities shared by the solvers, in dataset order."""

    gamma_of: np.ndarray      # transported baseline outcome per unit
    integral: np.ndarray      # odds integral (controls; 0 for treated)
    pi_of: np.ndarray         # fold-specific pi per unit
    fold_of: np.ndarray


def _att_pieces(data: PanelDataset, folds: FoldAssignment, fitted: List[NuisanceSet],
                quad: Optional[QuadratureConfig]) -> _FoldPieces:
    n = data.n
    gamma_of = np.empty(n)
    integral = np.zeros(n)
    pi_of = np.empty(n)
    for k in range(folds.K):
        ev = folds.eval_indices(k)
        eta = fitted[k]
        g = np.asarray(eta.gamma(data.y0[ev], _l_or_none(data, ev)))
        gamma_of[ev] = g
        pi_of[ev] = eta.pi
        ctrl = data.a[ev] == 0
        if ctrl.any():
            idx = ev[ctrl]
            l_ctrl = _l_or_none(data, idx)
            integral[idx] = integrate_nu_many(data.y1[idx], g[ctrl], l_ctrl, eta.nu, quad)
    return _FoldPieces(gamma_of=gamma_of, integral=integral, pi_of=pi_of,
                       fold_of=folds.fold_of)


def solve_att_once(data: PanelDataset, folds: FoldAssignment, fitted: List[NuisanceSet],
                   quad: Optional[QuadratureConfig] = None) -> Tuple[float, float]:
    """Solve the pooled ATT estimating equation for one fold assignment.

    The score is linear in the target with coefficient a / pi_fold, so
    the solution is closed-form: a pi-weighted ratio of the treated
    outcome contrasts plus the control odds integrals over the treated
    weights. With stratified folds all fold pi's coincide and this
    reduces to the plain ratio. Returns the point estimate and the mean
    squared score.
    """
    pieces = _att_pieces(data, folds, fitted, quad)
    a = data.a
    d = data.y1 - pieces.gamma_of
    num = float(np.sum((a * d + (1 - a) * pieces.integral) / pieces.pi_of))
    den = float(np.sum(a / pieces.pi_of))
    if den == 0.0:
        raise NoTreatedInEvaluation("no treated units in the evaluation folds")
    theta = num / den
    psi = (a * (d - theta) + (1 - a) * pieces.integral) / pieces.pi_of
    sigma2 = float(np.mean(psi * psi))
    return theta, sigma2


def att_psi_values(data: PanelDataset, folds: FoldAssignment, fitted: List[NuisanceSet],
                   theta: float, quad: Optional[QuadratureConfig] = None) -> np.ndarray:
    """Per-unit ATT scores at a given target value (for residual checks)."""
    pieces = _att_pieces(data, folds, fitted, quad)
    a = data.a
    d = data.y1 - pieces.gamma_of
    return (a * (d - theta) + (1 - a) * pieces.integral) / pieces.pi_of


# ---------------------------------------------------------------------------
# Root finding for quantile-type estimating equations
# ---------------------------------------------------------------------------


def solve_quantile_root(estimating_fn: Callable[[float], float],
                        bracket: Tuple[float, float],
                        candidates: Optional[np.ndarray] = None,
                        tol: float = 1e-8,
                        scan_points: int = 256) -> float:
    """Smallest point where a nondecreasing empirical moment crosses zero.

    With ``candidates`` (sorted jump locations of a step function) the
    crossing is located exactly by index bisection, matching the
    generalized-inverse convention. Otherwise a coarse scan finds the
    first sign change and bisection refines it to ``tol``.
    """
    if candidates is not None:
        cand = np.asarray(candidates, dtype=float)
        lo, hi = -1, cand.shape[0] - 1
        if cand.shape[0] == 0 or estimating_fn(float(cand[-1])) < 0.0:
            raise NoBracket("no candidate reaches a nonnegative moment")
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if estimating_fn(float(cand[mid])) >= 0.0:
                hi = mid
            else:
                lo = mid
        return float(cand[hi])

    lo, hi = float(bracket[0]), float(bracket[1])
    f_lo = estimating_fn(lo)
    if f_lo >= 0.0:
        return lo
    grid = np.linspace(lo, hi, max(2, scan_points))
    upper = None
    prev = lo
    for x in grid[1:]:
        if estimating_fn(float(x)) >= 0.0:
            upper = float(x)
            break
        prev = float(x)
    if upper is None:
        raise NoBracket(f"no sign change on [{lo:g}, {hi:g}]")
    lo = prev
    hi = upper
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if estimating_fn(mid) >= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# Aggregation and intervals
# ---------------------------------------------------------------------------


def median_adjust(reps: List[Tuple[float, float]]) -> Tuple[float, float]:
    """Median-aggregate repetition estimates and variances.

    The point estimate is the median of the per-repetition estimates;
    the variance is the median of the per-repetition variances inflated
    by the squared distance of each estimate from the median. Even
    counts use the average of the two central order statistics.
    """
    thetas = np.array([r[0] for r in reps], dtype=float)
    sig2s = np.array([r[1] for r in reps], dtype=float)
    theta_hat = float(np.median(thetas))
    sigma2_hat = float(np.median(sig2s + (thetas - theta_hat) ** 2))
    return theta_hat, sigma2_hat


def confidence_interval(theta_hat: float, sigma2_hat: float, n: int,
                        alpha: float) -> Tuple[float, float]:
    """Normal interval: theta +/- z_{alpha/2} sigma / sqrt(n)."""
    half = float(norm.ppf(1.0 - alpha / 2.0)) * np.sqrt(sigma2_hat / n)
    return theta_hat - half, theta_hat + half


# ---------------------------------------------------------------------------
# Full cross-fitted procedure
# ---------------------------------------------------------------------------


def _solve_cdt_once(data, folds, fitted, y_point):
    n = data.n
    a = data.a
    ind = np.empty(n)
    corr = np.zeros(n)
    pi_of = np.empty(n)
    gamma_of = np.empty(n)
    for k in range(folds.K):
        ev = folds.eval_indices(k)
        eta = fitted[k]
        gamma_of[ev] = np.asarray(eta.gamma(data.y0[ev], _l_or_none(data, ev)))
        pi_of[ev] = eta.pi
    ind = (gamma_of < y_point).astype(float)
    nu_at = _make_nu_at_point(data, folds, fitted)
    ctrl_idx = np.nonzero(a == 0)[0]
    if ctrl_idx.size:
        chi_vals = _chi_many(y_point, data.y1[ctrl_idx], gamma_of[ctrl_idx])
        corr[ctrl_idx] = -nu_at(y_point, ctrl_idx) * chi_vals
    den = float(np.sum(a / pi_of))
    if den == 0.0:
        raise NoTreatedInEvaluation("no treated units in the evaluation folds")
    vartheta = float(np.sum((a * ind + corr) / pi_of) / den)
    psi = (a * (ind - vartheta) + corr) / pi_of
    return vartheta, float(np.mean(psi * psi))


def _chi_many(x: float, y1: np.ndarray, g: np.ndarray) -> np.ndarray:
    inside = (np.minimum(y1, g) <= x) & (x <= np.maximum(y1, g))
    return np.sign(y1 - g) * inside


def _make_nu_at_point(data: PanelDataset, folds: FoldAssignment, fitted):
    """Evaluator for fold-specific odds at one x across selected units.

    With no covariates the odds at a point are a single number per fold,
    so they are computed once and broadcast."""
    if data.p == 0:
        cache = {}

        def nu_at(point: float, idx: np.ndarray) -> np.ndarray:
            vals = np.empty(idx.shape[0])
            for k in range(folds.K):
                sel = folds.fold_of[idx] == k
                if sel.any():
                    key = (k, point)
                    if key not in cache:
                        cache[key] = float(fitted[k].nu(point, None))
                    vals[sel] = cache[key]
            return vals
    else:
        def nu_at(point: float, idx: np.ndarray) -> np.ndarray:
            vals = np.empty(idx.shape[0])
            for k in range(folds.K):
                sel = folds.fold_of[idx] == k
                if sel.any():
                    vals[sel] = np.asarray(fitted[k].nu(
                        np.full(int(sel.sum()), point), _l_or_none(data, idx[sel])))
            return vals
    return nu_at


def _solve_qtt_once(data, folds, fitted, tau):
    a = data.a
    n = data.n
    gamma_of = np.empty(n)
    pi_of = np.empty(n)
    for k in range(folds.K):
        ev = folds.eval_indices(k)
        eta = fitted[k]
        gamma_of[ev] = np.asarray(eta.gamma(data.y0[ev], _l_or_none(data, ev)))
        pi_of[ev] = eta.pi
    treated = a == 1
    w_treat = 1.0 / pi_of[treated]

    y1_treated_sorted = np.sort(data.y1[treated])

    def moment1(t):
        return float(np.sum(w_treat * ((data.y1[treated] <= t) - tau)))

    vartheta1 = solve_quantile_root(moment1, bracket=None, candidates=y1_treated_sorted)

    ctrl_idx = np.nonzero(~treated)[0]
    y1_ctrl = data.y1[ctrl_idx]
    g_ctrl = gamma_of[ctrl_idx]
    w_ctrl = 1.0 / pi_of[ctrl_idx]
    nu_at = _make_nu_at_point(data, folds, fitted)

    def moment2(t):
        val = float(np.sum(w_treat * ((gamma_of[treated] < t) - tau)))
        if ctrl_idx.size:
            chi_vals = _chi_many(t, y1_ctrl, g_ctrl)
            active = chi_vals != 0
            if active.any():
                idx = ctrl_idx[active]
                val -= float(np.sum(w_ctrl[active] * nu_at(t, idx) * chi_vals[active]))
        return val

    all_points = np.concatenate([data.y1, gamma_of])
    pad = 0.05 * (all_points.max() - all_points.min()) + 1e-9
    vartheta2 = solve_quantile_root(moment2,
                                    bracket=(all_points.min() - pad, all_points.max() + pad))

    theta = vartheta1 - vartheta2
    # Variance from the full quantile score with fold-specific densities.
    psi = np.empty(n)
    for k in range(folds.K):
        ev = folds.eval_indices(k)
        eta = fitted[k]
        f1 = float(eta.dens_y1_treated(vartheta1))
        f2 = float(eta.dens_gamma_treated(vartheta2))
        a_ev = a[ev]
        first = a_ev / eta.pi * ((data.y1[ev] <= vartheta1) - tau) / (-f1)
        num = a_ev * ((gamma_of[ev] < vartheta2) - tau).astype(float)
        ctrl = a_ev == 0
        if ctrl.any():
            idx = ev[ctrl]
            chi_vals = _chi_many(vartheta2, data.y1[idx], gamma_of[idx])
            num[ctrl] += -nu_at(vartheta2, idx) * chi_vals
        psi[ev] = first - num / (-eta.pi * f2)
    return theta, float(np.mean(psi * psi))


class _WeightedNu:
    """Odds times the x-derivative of a smooth link, as one integrand.

    With no covariates the signed integrals go through a cached dense
    antiderivative, like the plain odds integrals.
    """

    def __init__(self, nu, dx, vartheta):
        self.nu = nu
        self.dx = dx
        self.vartheta = vartheta
        self._grid = None

    def __call__(self, x, l=None):
        return np.asarray(self.nu(x, l)) * np.asarray(self.dx(x, self.vartheta))

    def integral_many(self, lo, hi, l=None):
        if getattr(self.nu, "p", 0):
            raise NotImplementedError("cached antiderivative requires p = 0")
        if self._grid is None:
            from .nuisance import GridAntiderivative

            self._grid = GridAntiderivative(lambda gx: self(gx, None))
        return self._grid.integrate(lo, hi)


def _solve_general_once(data, folds, fitted, gspec: GTildeSpec, quad):
    """Solve the pooled estimating equation of a general moment-type link.

    The target solves the pi-weighted numerator moment; the (sign-fixed)
    denominator enters only the variance, via the full score.
    """
    a = data.a
    n = data.n
    gamma_of = np.empty(n)
    pi_of = np.empty(n)
    for k in range(folds.K):
        ev = folds.eval_indices(k)
        eta = fitted[k]
        gamma_of[ev] = np.asarray(eta.gamma(data.y0[ev], _l_or_none(data, ev)))
        pi_of[ev] = eta.pi
    ctrl_idx = np.nonzero(a == 0)[0]
    y1c = data.y1[ctrl_idx]
    gc = gamma_of[ctrl_idx]
    w_ctrl = 1.0 / pi_of[ctrl_idx]
    treated = a == 1
    w_treat = 1.0 / pi_of[treated]

    fold_nu_at = _make_nu_at_point(data, folds, fitted)

    smooth_cache = {}

    def stieltjes(t: float) -> np.ndarray:
        """Oriented Lebesgue-Stieltjes term per control unit."""
        out = np.zeros(ctrl_idx.shape[0])
        if gspec.kind == "step":
            pts, sizes = gspec.jumps(t)
            for pt, sz in zip(np.asarray(pts, dtype=float), np.asarray(sizes, dtype=float)):
                fwd = (gc >= y1c) & (pt > y1c) & (pt <= gc)
                bwd = (gc < y1c) & (pt > gc) & (pt <= y1c)
                active = fwd | bwd
                if active.any():
                    nu_vals = fold_nu_at(float(pt), ctrl_idx[active])
                    out[active] += np.where(fwd[active], 1.0, -1.0) * nu_vals * sz
            return out
        cache_key = None if not gspec.dx_constant_in_target else "fixed"
        if cache_key in smooth_cache:
            return smooth_cache[cache_key]
        for k in range(folds.K):
            sel = folds.fold_of[ctrl_idx] == k
            if sel.any():
                idx = ctrl_idx[sel]
                out[sel] = integrate_nu_many(
                    data.y1[idx], gamma_of[idx], _l_or_none(data, idx),
                    _WeightedNu(fitted[k].nu, gspec.dx, t), quad)
        if cache_key is not None:
            smooth_cache[cache_key] = out
        return out

    def numerator_moment(t: float) -> float:
        val = float(np.sum(np.asarray(gspec.value(gamma_of[treated], t), dtype=float)
                           * w_treat))
        if ctrl_idx.size:
            val -= float(np.sum(w_ctrl * stieltjes(t)))
        return val

    span = np.concatenate([data.y1, gamma_of])
    pad = 4.0 * (span.max() - span.min() + 1.0)
    lo, hi = float(span.min() - pad), float(span.max() + pad)
    if gspec.kind == "step":
        vartheta = solve_quantile_root(numerator_moment, bracket=(lo, hi))
    else:
        f_lo, f_hi = numerator_moment(lo), numerator_moment(hi)
        if f_lo == 0.0:
            vartheta = lo
        elif f_lo * f_hi > 0.0:
            raise NoBracket("general moment has no sign change over the padded range")
        else:
            sgn = 1.0 if f_lo < 0.0 else -1.0
            vartheta = solve_quantile_root(lambda t: sgn * numerator_moment(t),
                                           bracket=(lo, hi))

    # Full score for the variance, with the moment-derivative denominator.
    st = stieltjes(vartheta)
    psi = np.empty(n)
    for k in range(folds.K):
        ev = folds.eval_indices(k)
        eta = fitted[k]
        if gspec.dtheta == "gamma-density":
            if eta.dens_gamma_treated is None:
                raise InsufficientData("quantile-type link needs the gamma density")
            denom = -eta.pi * float(eta.dens_gamma_treated(vartheta))
        else:
            denom = -eta.pi * float(gspec.dtheta)
        num = a[ev] * np.asarray(gspec.value(gamma_of[ev], vartheta), dtype=float)
        sel = folds.fold_of[ctrl_idx] == k
        if sel.any():
            num[data.a[ev] == 0] += -st[sel]
        psi[ev] = num / denom
    return vartheta, float(np.mean(psi * psi))


def estimate(data: PanelDataset, spec: EstimandSpec, cfg: CrossFitConfig) -> EstimateReport:
    """Run the full cross-fitted procedure for one estimand.

    For each repetition: random (optionally arm-stratified) K-fold
    partition with a seed derived from (cfg.seed, repetition), fold-wise
    nuisance fits on complements, estimating-equation solve, variance.
    Repetitions are median-aggregated and a normal interval is attached.
    Deterministic given the configuration.
    """
    validate(data)
    need_densities = spec.kind == EstimandKind.QTT or (
        spec.kind == EstimandKind.GENERAL_MOMENT
        and getattr(spec.gtilde, "dtheta", None) == "gamma-density")
    reps: List[Tuple[float, float]] = []
    for s in range(1, cfg.S + 1):
        folds = partition_folds(data.n, cfg.K,
                                stratify_on=data.a if cfg.stratify else None,
                                seed=_rep_seed(cfg.seed, s))
        fitted = [fit_fold_nuisances(data, folds.train_indices(k), cfg,
                                     need_densities=need_densities)
                  for k in range(cfg.K)]
        if spec.kind == EstimandKind.ATT:
            reps.append(solve_att_once(data, folds, fitted, cfg.quad))
        elif spec.kind == EstimandKind.CDT:
            reps.append(_solve_cdt_once(data, folds, fitted, spec.y_point))
        elif spec.kind == EstimandKind.QTT:
            reps.append(_solve_qtt_once(data, folds, fitted, spec.tau))
        else:
            reps.append(_solve_general_once(data, folds, fitted, spec.gtilde, cfg.quad))
    theta_hat, sigma2_hat = median_adjust(reps)
    ci_lo, ci_hi = confidence_interval(theta_hat, sigma2_hat, data.n, cfg.alpha)
    return EstimateReport(theta_hat=theta_hat, sigma2_hat=sigma2_hat,
                          ci_lo=ci_lo, ci_hi=ci_hi, per_rep=tuple(reps),
                          estimand=spec, n=data.n, K=cfg.K, S=cfg.S,
                          alpha=cfg.alpha, seed=cfg.seed)


# ---------------------------------------------------------------------------
# Identification-formula plug-ins
# ---------------------------------------------------------------------------


def _fit_full_gamma(data: PanelDataset, kernel: str, bandwidth):
    a = data.a
    if (a == 1).sum() == 0 or (a == 0).sum() == 0:
        raise DegenerateArm("plug-in estimators need both treatment arms")
    ctrl = a == 0
    l_ctrl = _l_or_none(data)[ctrl] if data.p else None
    cdf0 = fit_cond_cdf(data.y0[ctrl], l_ctrl, kernel=kernel, bandwidth=bandwidth)
    quant1 = fit_cond_quantile(data.y1[ctrl], l_ctrl, kernel=kernel, bandwidth=bandwidth)
    return compose_gamma(cdf0, quant1)


def plugin_att(data: PanelDataset, kernel: str = "gaussian", bandwidth=None) -> float:
    """Direct plug-in of the identification formula: fit the transport map
    on all controls and average y1 minus the transported y0 over the
    treated. No cross-fitting, no interval."""
    gamma = _fit_full_gamma(data, kernel, bandwidth)
    treated = data.a == 1
    g = gamma(data.y0[treated], _l_or_none(data)[treated] if data.p else None)
    return float(np.mean(data.y1[treated] - g))


def imputed_counterfactuals(data: PanelDataset, kernel: str = "gaussian",
                            bandwidth=None) -> np.ndarray:
    """Transported baseline outcomes of the treated units (their imputed
    untreated period-1 outcomes)."""
    gamma = _fit_full_gamma(data, kernel, bandwidth)
    treated = data.a == 1
    return np.asarray(gamma(data.y0[treated],
                            _l_or_none(data)[treated] if data.p else None))


def plugin_cdt(data: PanelDataset, y: float, kernel: str = "gaussian",
               bandwidth=None) -> float:
    """Plug-in counterfactual distribution at y: the share of treated units
    whose transported baseline outcome falls strictly below y."""
    g = imputed_counterfactuals(data, kernel=kernel, bandwidth=bandwidth)
    return float(np.mean(g < y))


def _empirical_quantile(samples: np.ndarray, tau: float) -> float:
    s = np.sort(np.asarray(samples, dtype=float))
    idx = int(np.ceil(tau * s.shape[0] - 1e-9)) - 1
    return float(s[min(max(idx, 0), s.shape[0] - 1)])


def plugin_qtt(data: PanelDataset, tau: float, kernel: str = "gaussian",
               bandwidth=None) -> float:
    """Plug-in quantile treatment effect on the treated: the empirical
    tau-quantile of treated y1 minus the generalized inverse of the
    plug-in counterfactual distribution curve."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    g = imputed_counterfactuals(data, kernel=kernel, bandwidth=bandwidth)
    treated_q = _empirical_quantile(data.y1[data.a == 1], tau)
    return treated_q - _empirical_quantile(g, tau)
