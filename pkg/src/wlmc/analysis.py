"""Energy fits, diagnostics, and classical-limit trajectory studies.

Works on kernel-versus-time series produced by the estimator: weighted
linear fits of ln K extract energies, window and spike detectors flag the
regions where the ground-state-dominated linear behaviour holds, chi-square
tests compare empirical exponent histograms against analytic densities, and
trajectory reports compare weight-dominant loops with the classical path.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from . import loopgen


@dataclass(frozen=True)
class KernelSeries:
    """Rows of (t, ln K, sem of ln K, optional analytic ln K)."""

    t: np.ndarray
    ln_value: np.ndarray
    sem_ln: np.ndarray
    ln_analytic: np.ndarray = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.size < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("t must be strictly increasing with >= 2 rows")
        finite = np.isfinite(self.sem_ln)
        if np.any(np.asarray(self.sem_ln)[finite] < 0):
            raise ValueError("sem_ln must be non-negative")

    @classmethod
    def from_estimates(cls, estimates, ln_analytic=None):
        order = np.argsort([e.t for e in estimates])
        est = [estimates[i] for i in order]
        ana = None
        if ln_analytic is not None:
            ana = np.asarray(ln_analytic, dtype=float)[order]
        return cls(t=np.array([e.t for e in est]),
                   ln_value=np.array([e.ln_value for e in est]),
                   sem_ln=np.array([e.sem_ln for e in est]),
                   ln_analytic=ana)

    def __len__(self):
        return self.t.size


@dataclass(frozen=True)
class EnergyFit:
    """Slope-extracted energy over a fit window."""

    energy: float
    uncertainty: float
    window: tuple
    intercept: float
    residual_rms: float
    n_points: int
    non_spectral: bool = False


FIT_SIGNS = ("bound_above", "bound_below")


def _wls_line(tt, yy, ww):
    sw = ww.sum()
    tbar = float((ww * tt).sum() / sw)
    ybar = float((ww * yy).sum() / sw)
    sxx = float((ww * (tt - tbar) ** 2).sum())
    if sxx == 0.0:
        raise ValueError("degenerate window: no spread in t")
    slope = float((ww * (tt - tbar) * (yy - ybar)).sum() / sxx)
    return slope, ybar - slope * tbar, sxx


def fit_energy(series, window, sign="bound_above"):
    """Weighted least-squares energy from ln K over [t_lo, t_hi].

    The energy is minus the slope of ln K regardless of sign convention;
    sign only records whether the level is expected above or below zero.
    Points are weighted by 1/sem_ln^2; on noiseless input (all sems zero)
    an unweighted fit with residual-based slope error is used.
    """
    if sign not in FIT_SIGNS:
        raise ValueError("sign must be one of %s" % (FIT_SIGNS,))
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise ValueError("degenerate window")
    mask = (series.t >= lo) & (series.t <= hi)
    if mask.sum() < 3:
        raise ValueError("window must contain at least 3 points")
    tt = series.t[mask]
    yy = np.asarray(series.ln_value, dtype=float)[mask]
    ss = np.asarray(series.sem_ln, dtype=float)[mask]
    if not np.all(np.isfinite(yy)):
        raise ValueError("non-finite ln K inside the fit window")
    noiseless = np.all(ss == 0.0)
    if not noiseless and np.any(ss <= 0.0):
        raise ValueError("mixed zero and positive sems in window")
    ww = np.ones_like(tt) if noiseless else 1.0 / ss ** 2
    slope, intercept, sxx = _wls_line(tt, yy, ww)
    resid = yy - (intercept + slope * tt)
    residual_rms = float(np.sqrt(np.mean(resid ** 2)))
    if noiseless:
        dof = max(tt.size - 2, 1)
        slope_se = math.sqrt(float((resid ** 2).sum()) / dof / sxx)
    else:
        slope_se = math.sqrt(1.0 / sxx)
    return EnergyFit(energy=-slope, uncertainty=slope_se,
                     window=(lo, hi), intercept=intercept,
                     residual_rms=residual_rms, n_points=int(mask.sum()))


def detect_window(series, min_points=4, residual_threshold=2.0):
    """Longest [t_lo, t_hi] where a linear fit holds within tolerances.

    A window qualifies when the rms of the fit residuals in units of sem_ln
    stays below residual_threshold and, when analytic values are attached,
    every point satisfies |ln K - ln K_analytic| <= 3 sem_ln.  With all sems
    zero the residuals are used unnormalized.  Returns None when nothing
    qualifies; ties resolve to the earliest window.
    """
    if min_points < 3:
        raise ValueError("min_points must be >= 3")
    n = len(series)
    tt = np.asarray(series.t, dtype=float)
    yy = np.asarray(series.ln_value, dtype=float)
    ss = np.asarray(series.sem_ln, dtype=float)
    usable = np.isfinite(yy)
    if series.ln_analytic is not None:
        ana = np.asarray(series.ln_analytic, dtype=float)
        with np.errstate(invalid="ignore"):
            close = np.abs(yy - ana) <= 3.0 * ss
        usable &= np.where(np.isfinite(ana), close, True)
    norm = np.where(ss > 0.0, ss, 1.0)
    best = None
    for i in range(n):
        if not usable[i]:
            continue
        for j in range(i + min_points - 1, n):
            if not np.all(usable[i:j + 1]):
                break
            w = np.ones(j - i + 1)
            slope, intercept, _ = _wls_line(tt[i:j + 1], yy[i:j + 1],
                                            1.0 / norm[i:j + 1] ** 2)
            resid = (yy[i:j + 1] - intercept - slope * tt[i:j + 1]) \
                / norm[i:j + 1]
            rms = math.sqrt(float(np.mean(resid ** 2)))
            if rms > residual_threshold:
                continue
            length = j - i
            if best is None or length > best[0]:
                best = (length, i, j)
    if best is None:
        return None
    return float(tt[best[1]]), float(tt[best[2]])


def detect_skyscrapers(series):
    """Indices of points spiking above both neighbours beyond 3 sigma."""
    tt = series.t
    yy = np.asarray(series.ln_value, dtype=float)
    ss = np.asarray(series.sem_ln, dtype=float)
    hits = []
    for i in range(1, tt.size - 1):
        up = yy[i] - yy[i - 1] > 3.0 * math.hypot(ss[i], ss[i - 1])
        down = yy[i] - yy[i + 1] > 3.0 * math.hypot(ss[i], ss[i + 1])
        if up and down:
            hits.append(i)
    return hits


# ----------------------------------------------------------------------
# goodness of fit


def _bin_probabilities(density, edges):
    """Integral of the density over each bin (composite Simpson)."""
    n_sub = 8  # even, so Simpson applies per bin
    lo = edges[:-1]
    width = np.diff(edges)
    offsets = np.linspace(0.0, 1.0, n_sub + 1)
    grid = lo[:, None] + width[:, None] * offsets[None, :]
    vals = np.asarray(density(grid.ravel()), dtype=float).reshape(grid.shape)
    simpson_w = np.ones(n_sub + 1)
    simpson_w[1:-1:2] = 4.0
    simpson_w[2:-1:2] = 2.0
    h = width / n_sub
    return (vals * simpson_w[None, :]).sum(axis=1) * h / 3.0


def chi_square_gof(histogram, analytic_density):
    """Pearson chi-square p-value of a histogram against a density.

    Adjacent bins are merged until each group expects at least 5 counts;
    probability mass outside the histogram range is carried by one
    complement group with zero observations.
    """
    counts = np.asarray(histogram.counts, dtype=float)
    n = float(histogram.n_samples)
    if n < 25:
        raise ValueError("too few samples for a chi-square test")
    probs = _bin_probabilities(analytic_density, histogram.bin_edges)
    groups_obs, groups_exp = [], []
    acc_o = acc_e = 0.0
    for c, p in zip(counts, probs):
        acc_o += c
        acc_e += n * p
        if acc_e >= 5.0:
            groups_obs.append(acc_o)
            groups_exp.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0.0 and groups_exp:
        groups_obs[-1] += acc_o
        groups_exp[-1] += acc_e
    outside = n * max(0.0, 1.0 - float(probs.sum()))
    if outside >= 5.0:
        groups_obs.append(0.0)
        groups_exp.append(outside)
    elif groups_exp:
        groups_exp[-1] += outside
    if len(groups_exp) < 2:
        raise ValueError("fewer than 2 groups with expected counts >= 5")
    obs = np.array(groups_obs)
    exp = np.array(groups_exp)
    stat = float(((obs - exp) ** 2 / exp).sum())
    dof = len(groups_exp) - 1
    return float(stats.chi2.sf(stat, dof))


def integrand_gof_pvalue(tv_samples, t, omega):
    """Chi-square p-value testing the weighted sample against the kernel
    integrand P(v) e^{-v} for the diagonal oscillator configuration.

    The count histogram of v stays consistent with P(v) at any t because
    of the scaling law, so shape comparisons cannot flag undersampling;
    what breaks at large t is the mass.  The weights e^{-v} estimate the
    integral of P(v) e^{-v}, exactly sqrt(omega t / sinh(omega t)) at
    y = x = 0, and once the loops stop visiting the small-v region that
    dominates the integrand, the estimate falls below the exact mass by
    many times its own standard error.  The statistic is that squared
    normalised deviation, on one degree of freedom.
    """
    tv = np.asarray(tv_samples, dtype=float)
    n = tv.size
    if n < 25:
        raise ValueError("too few samples for a chi-square test")
    if float(tv.min()) == float(tv.max()):
        raise ValueError("degenerate sample range")
    w = np.exp(-tv)
    sem = float(w.std(ddof=1)) / math.sqrt(n)
    if sem == 0.0:
        raise ValueError("weights carry no spread")
    wt = float(omega) * float(t)
    if wt > 700.0:
        exact = math.sqrt(2.0 * wt) * math.exp(-0.5 * wt)
    else:
        exact = math.sqrt(wt / math.sinh(wt))
    z = (float(w.mean()) - exact) / sem
    return float(stats.chi2.sf(z * z, 1))


def first_excited_energy(projected_series, window):
    """E_1 from the slope of the parity-projected kernel series."""
    lo, hi = float(window[0]), float(window[1])
    mask = (projected_series.t >= lo) & (projected_series.t <= hi)
    yy = np.asarray(projected_series.ln_value, dtype=float)[mask]
    if not np.all(np.isfinite(yy)):
        raise ValueError("non-positive projected kernel inside the window "
                         "(precision-loss regime)")
    fit = fit_energy(projected_series, window, sign="bound_above")
    ss = np.asarray(projected_series.sem_ln, dtype=float)[mask]
    if np.all(ss == 0.0):
        scale = max(1.0, float(np.max(np.abs(yy))))
        non_spectral = fit.residual_rms > 1e-9 * scale
    else:
        non_spectral = fit.residual_rms > 3.0 * float(np.median(ss))
    return replace(fit, non_spectral=bool(non_spectral))


# ----------------------------------------------------------------------
# classical limit


def classical_params(m, t, y, x):
    """Dimensionless regime markers lambda = m^2 t, mu = (m/t)(x-y)^2."""
    if t <= 0:
        raise ValueError("t must be positive")
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    return float(m * m * t), float(m / t * np.sum((x - y) ** 2))


def classical_solution_ho(omega, t, y, x, tau):
    """Classical (Euclidean) oscillator path between (0, y) and (t, x)."""
    if omega <= 0 or t <= 0:
        raise ValueError("omega and t must be positive")
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr < 0) or np.any(tau_arr > t):
        raise ValueError("tau must lie in [0, t]")
    denom = math.sinh(omega * t)
    out = (y * np.sinh(omega * (t - tau_arr))
           + x * np.sinh(omega * tau_arr)) / denom
    if np.isscalar(tau) or np.asarray(tau).ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class TrajectoryReport:
    """Weight-dominant trajectory of a simulation (or their average)."""

    tau: np.ndarray
    positions: np.ndarray  # (N_p+1, d) scaled trajectory
    weight_share: float
    dominant_weight: float
    lam: float
    mu: float
    average: np.ndarray = None
    average_se: np.ndarray = None
    n_sims: int = 1


def dominant_trajectory(ensemble, weights, y, x, t, m):
    """The loop with maximal weight and its share of the total weight."""
    w = np.asarray(weights, dtype=float).ravel()
    if w.size == 0 or w.size != ensemble.n_loops:
        raise ValueError("weights must match the ensemble size")
    k = int(np.argmax(w))
    total = math.fsum(w)
    path = loopgen.scale_paths(ensemble.loops[k][None], y, x, t, m)[0]
    u = np.arange(ensemble.n_points + 1, dtype=float) / ensemble.n_points
    lam, mu = classical_params(m, t, y, x)
    return TrajectoryReport(tau=u * t, positions=path,
                            weight_share=float(w[k] / total),
                            dominant_weight=float(w[k]), lam=lam, mu=mu)


def weighted_average_trajectory(reports):
    """Average the per-simulation dominant trajectories, weighted by W.

    Returns a report carrying the globally dominant trajectory plus the
    weighted average and its per-point standard error across simulations.
    """
    if len(reports) < 2:
        raise ValueError("averaging needs at least 2 simulations")
    tau = reports[0].tau
    for r in reports[1:]:
        if not np.array_equal(r.tau, tau):
            raise ValueError("simulations disagree on the tau grid")
    weights = np.array([r.dominant_weight for r in reports])
    om = weights / weights.sum()
    paths = np.stack([r.positions for r in reports])
    avg = np.einsum("s,sid->id", om, paths)
    n_eff = 1.0 / float(np.sum(om ** 2))
    var = np.einsum("s,sid->id", om, (paths - avg[None]) ** 2) / (n_eff - 1.0)
    best = int(np.argmax(weights))
    return TrajectoryReport(tau=tau, positions=reports[best].positions,
                            weight_share=reports[best].weight_share,
                            dominant_weight=float(weights[best]),
                            lam=reports[best].lam, mu=reports[best].mu,
                            average=avg, average_se=np.sqrt(var),
                            n_sims=len(reports))
