"""Monte Carlo kernel estimates built from loop ensembles and potentials.

Each loop is rescaled onto the requested endpoints, the line integral v of
the potential is evaluated along it, and the kernel follows as the free
prefactor times the ensemble mean of W = exp(-t v).  Reductions run in loop
index order with compensated summation, so results are bit-identical for a
fixed seed regardless of how generation or evaluation is parallelized.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import loopgen, potentials
from .analytic import ln_kernel_free

# above this exponent the weights are accumulated in shifted log space
EXP_SHIFT = 700.0

PARITY_EVEN_KINDS = ("free", "harmonic", "poschl_teller", "delta_well")


@dataclass(frozen=True)
class KernelEstimate:
    """One kernel value with its statistical errors and provenance."""

    value: float
    ln_value: float
    sem: float
    sem_ln: float
    mean_W: float
    t: float
    y: tuple
    x: tuple
    n_ensembles: int
    provenance: tuple  # (algorithm, seed, n_loops, n_points)
    n_singular_events: int = 0


@dataclass(frozen=True)
class Histogram:
    """Equal-width histogram with enough metadata to form a density."""

    bin_edges: np.ndarray
    counts: np.ndarray
    n_samples: float

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def widths(self):
        return np.diff(self.bin_edges)

    def density(self):
        return self.counts / (self.n_samples * self.widths)


def sem(samples):
    """Standard error of the mean: sqrt(sum (x - mean)^2 / (N(N-1)))."""
    arr = np.asarray(samples, dtype=float).ravel()
    if arr.size < 2:
        raise ValueError("sem needs at least 2 samples")
    mean = math.fsum(arr) / arr.size
    dev = arr - mean
    with np.errstate(over="ignore"):
        ss = math.fsum(dev ** 2)
    if math.isinf(ss):
        # deviations beyond ~1e154 overflow when squared; factor out the
        # largest one so the ratio sum stays finite
        scale = float(np.max(np.abs(dev)))
        ss = math.fsum((dev / scale) ** 2)
        return scale * math.sqrt(ss / (arr.size * (arr.size - 1.0)))
    return math.sqrt(ss / (arr.size * (arr.size - 1.0)))


def _endpoints(y, x, d):
    y = np.asarray(y, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    if y.size == 1 and d > 1:
        y = np.full(d, y[0])
    if x.size == 1 and d > 1:
        x = np.full(d, x[0])
    if y.size != d or x.size != d:
        raise ValueError("endpoint dimension does not match the ensemble")
    return y, x


def weight(potential, loop, y, x, t, m, method=potentials.POINTWISE):
    """W = exp(-t v) for a single unit loop rescaled to (y, x, t, m)."""
    loop = np.asarray(loop, dtype=float)
    y, x = _endpoints(y, x, loop.shape[1])
    path = loopgen.scale_paths(loop[None], y, x, t, m)[0]
    res = potentials.line_integral(potential, path, method, t, m)
    return math.exp(-t * res.v)


def exponent_samples(potential, y, x, t, m, ensemble, method):
    """Per-loop dimensionless exponents t*v, plus total fallback count."""
    if t <= 0 or m <= 0:
        raise ValueError("t and m must be positive")
    if ensemble.n_loops < 1:
        raise ValueError("empty ensemble")
    y, x = _endpoints(y, x, ensemble.d)
    potentials.check_method(potential, method, ensemble.d)
    tv = np.empty(ensemble.n_loops)
    events = 0
    lo = 0
    for block in ensemble.iter_blocks():
        paths = loopgen.scale_paths(block, y, x, t, m)
        v, ev = potentials.line_integral_block(potential, paths, method)
        tv[lo:lo + v.size] = t * v
        events += int(ev.sum())
        lo += v.size
    return tv, events


def loop_weights(potential, y, x, t, m, ensemble, method=potentials.POINTWISE):
    """W_k for every loop of the ensemble (overflow raises)."""
    tv, _ = exponent_samples(potential, y, x, t, m, ensemble, method)
    if np.max(-tv) > EXP_SHIFT:
        raise OverflowError("weights overflow; use estimate_kernel")
    return np.exp(-tv)


def _mean_and_sem_shifted(exponents):
    """(ln mean, mean, sem, sem_ln) of exp(exponents), overflow-safe."""
    n = exponents.size
    mx = float(np.max(exponents))
    if mx <= EXP_SHIFT:
        w = np.exp(exponents)
        mean = math.fsum(w) / n
        err = sem(w) if n > 1 else 0.0
        return math.log(mean), mean, err, err / mean
    shifted = np.exp(exponents - mx)
    mean_s = math.fsum(shifted) / n
    err_s = sem(shifted) if n > 1 else 0.0
    ln_mean = mx + math.log(mean_s)
    # the linear-scale value may exceed the float range; ln_mean stays finite
    scale = math.exp(mx) if mx < 709.0 else math.inf
    return ln_mean, scale * mean_s, scale * err_s, err_s / mean_s


def estimate_kernel(potential, y, x, t, m, ensemble, method=potentials.POINTWISE):
    """Single-ensemble kernel estimate at one (y, x, t)."""
    tv, events = exponent_samples(potential, y, x, t, m, ensemble, method)
    ln_mean, mean_w, err, err_ln = _mean_and_sem_shifted(-tv)
    y, x = _endpoints(y, x, ensemble.d)
    ln_pref = ln_kernel_free(y, x, t, m, ensemble.d)
    pref = math.exp(ln_pref)
    return KernelEstimate(
        value=pref * mean_w, ln_value=ln_pref + ln_mean, sem=pref * err,
        sem_ln=err_ln, mean_W=mean_w, t=float(t), y=tuple(y), x=tuple(x),
        n_ensembles=1,
        provenance=(ensemble.algorithm, ensemble.seed, ensemble.n_loops,
                    ensemble.n_points),
        n_singular_events=events)


def estimate_kernel_multi(potential, y, x, t, m, config, n_ensembles,
                          base_seed, method=potentials.POINTWISE):
    """Grand mean over independent ensembles; sem from their spread.

    config supplies (algorithm, n_loops, n_points, d); each ensemble is
    generated from a seed derived from (base_seed, ensemble index).
    """
    if n_ensembles < 2:
        raise ValueError("need at least 2 ensembles")
    means = np.empty(n_ensembles)
    events = 0
    for j in range(n_ensembles):
        spec = loopgen.ensemble_spec(config.algorithm, config.n_loops,
                                     config.n_points, config.d,
                                     loopgen.derive_seed(base_seed, j))
        est = estimate_kernel(potential, y, x, t, m, spec, method)
        means[j] = est.mean_W
        events += est.n_singular_events
    grand = math.fsum(means) / n_ensembles
    err = sem(means)
    y, x = _endpoints(y, x, config.d)
    ln_pref = ln_kernel_free(y, x, t, m, config.d)
    pref = math.exp(ln_pref)
    return KernelEstimate(
        value=pref * grand, ln_value=ln_pref + math.log(grand),
        sem=pref * err, sem_ln=err / grand, mean_W=grand, t=float(t),
        y=tuple(y), x=tuple(x), n_ensembles=n_ensembles,
        provenance=(config.algorithm, int(base_seed), config.n_loops,
                    config.n_points),
        n_singular_events=events)


def estimate_parity_projected(potential, y, x, t, m, ensemble,
                              method=potentials.POINTWISE):
    """Half-difference estimator (K(x,y) - K(x,-y))/2 on a shared ensemble.

    Each loop is rescaled twice, onto the paths y -> x and -y -> x with the
    same fluctuation, so the projection vanishes loop by loop at y = 0.
    """
    if potential.kind not in PARITY_EVEN_KINDS:
        raise ValueError("parity projection supports %s"
                         % (", ".join(PARITY_EVEN_KINDS),))
    y, x = _endpoints(y, x, ensemble.d)
    tv1, ev1 = exponent_samples(potential, y, x, t, m, ensemble, method)
    tv2, ev2 = exponent_samples(potential, -y, x, t, m, ensemble, method)
    ln_pref1 = ln_kernel_free(y, x, t, m, ensemble.d)
    ln_pref2 = ln_kernel_free(-y, x, t, m, ensemble.d)
    e1 = -tv1
    e2 = -tv2 + (ln_pref2 - ln_pref1)
    mx = max(float(np.max(e1)), float(np.max(e2)))
    shift = mx if mx > EXP_SHIFT else 0.0
    reduced = 0.5 * (np.exp(e1 - shift) - np.exp(e2 - shift))
    mean_r = math.fsum(reduced) / reduced.size
    err_r = sem(reduced) if reduced.size > 1 else 0.0
    pref1 = math.exp(ln_pref1)
    scale = math.exp(shift)
    mean_s = scale * mean_r
    value = pref1 * mean_s
    ln_value = ln_pref1 + shift + math.log(mean_r) if mean_r > 0 \
        else math.nan
    sem_ln = err_r / mean_r if mean_r > 0 else math.nan
    return KernelEstimate(
        value=value, ln_value=ln_value, sem=pref1 * scale * err_r,
        sem_ln=sem_ln, mean_W=mean_s, t=float(t), y=tuple(y), x=tuple(x),
        n_ensembles=1,
        provenance=(ensemble.algorithm, ensemble.seed, ensemble.n_loops,
                    ensemble.n_points),
        n_singular_events=ev1 + ev2)


def resample_error(per_loop_weights, method="jackknife", n_boot=200, seed=0):
    """Resampled standard error of the mean weight."""
    arr = np.asarray(per_loop_weights, dtype=float).ravel()
    n = arr.size
    if n < 10:
        raise ValueError("resampling needs at least 10 samples")
    if method == "jackknife":
        total = math.fsum(arr)
        deleted = (total - arr) / (n - 1.0)
        center = deleted.mean()
        return math.sqrt((n - 1.0) / n * math.fsum((deleted - center) ** 2))
    if method == "bootstrap":
        if n_boot < 100:
            raise ValueError("bootstrap needs n_boot >= 100")
        rng = np.random.default_rng(seed)
        boot = np.empty(n_boot)
        for b in range(n_boot):
            boot[b] = arr[rng.integers(0, n, n)].mean()
        return float(np.std(boot, ddof=1))
    raise ValueError("method must be jackknife or bootstrap")


def _build_histogram(samples, n_bins):
    samples = np.asarray(samples, dtype=float)
    if samples.size < 1:
        raise ValueError("empty sample set")
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    lo, hi = float(samples.min()), float(samples.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, n_bins + 1)
    counts, _ = np.histogram(samples, bins=edges)
    return Histogram(bin_edges=edges, counts=counts,
                     n_samples=float(samples.size))


def v_histogram(potential, y, x, t, m, ensemble, method, n_bins):
    """Histogram of the dimensionless exponent t*v over the ensemble."""
    tv, _ = exponent_samples(potential, y, x, t, m, ensemble, method)
    return _build_histogram(tv, n_bins)


def w_histogram(potential, y, x, t, m, ensemble, method, n_bins):
    """Histogram of the weights W = exp(-t*v) over the ensemble."""
    tv, _ = exponent_samples(potential, y, x, t, m, ensemble, method)
    if np.max(-tv) > EXP_SHIFT:
        raise OverflowError("weights overflow; histogram t*v instead")
    return _build_histogram(np.exp(-tv), n_bins)
