"""Closed-form and semi-analytic reference results.

Exact kernels (free, harmonic, delta well), the large-t asymptotic kernel for
the Poschl-Teller well, bound-state energies, and the series representation
of the probability density of the path-averaged potential for the harmonic
oscillator pinned at the origin, together with its small-v tail.
"""

import math

import numpy as np
from scipy import integrate
from scipy.special import kve, logsumexp

# screening at which the Yukawa bound state disappears, in units of alpha*m;
# exposed for input validation only
YUKAWA_CRITICAL_SCREENING = 1.19


class QuadratureConvergenceError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


def _vec(z, d):
    arr = np.asarray(z, dtype=float).reshape(-1)
    if arr.size == 1 and d > 1:
        arr = np.full(d, arr[0])
    if arr.size != d:
        raise ValueError("endpoint has %d components, expected %d"
                         % (arr.size, d))
    return arr


def _check_tm(t, m):
    if t <= 0 or m <= 0:
        raise ValueError("t and m must be positive")


def _ln_sinh(z):
    """log(sinh z) for z > 0 without overflow."""
    return z + math.log1p(-math.exp(-2.0 * z)) - math.log(2.0)


# ----------------------------------------------------------------------
# kernels


def ln_kernel_free(y, x, t, m, d):
    _check_tm(t, m)
    y = _vec(y, d)
    x = _vec(x, d)
    dx2 = float(np.dot(x - y, x - y))
    return 0.5 * d * math.log(m / (2.0 * math.pi * t)) - m * dx2 / (2.0 * t)


def kernel_free(y, x, t, m, d):
    """Free Euclidean kernel (m/2 pi t)^{d/2} e^{-m(x-y)^2/2t}."""
    return math.exp(ln_kernel_free(y, x, t, m, d))


def ln_kernel_ho(y, x, t, m, omega, d):
    _check_tm(t, m)
    if omega <= 0:
        raise ValueError("omega must be positive")
    y = _vec(y, d)
    x = _vec(x, d)
    z = omega * t
    coth = 1.0 / math.tanh(z)
    inv_sinh = 2.0 * math.exp(-z) / (1.0 - math.exp(-2.0 * z))
    quad_form = (float(np.dot(y, y)) + float(np.dot(x, x))) * coth \
        - 2.0 * float(np.dot(y, x)) * inv_sinh
    return 0.5 * d * (math.log(m * omega) - math.log(2.0 * math.pi)
                      - _ln_sinh(z)) - 0.5 * m * omega * quad_form


def kernel_ho(y, x, t, m, omega, d):
    """Exact harmonic-oscillator kernel, stable up to very large omega*t."""
    return math.exp(ln_kernel_ho(y, x, t, m, omega, d))


def _sech(z):
    return 2.0 * math.exp(-abs(z)) / (1.0 + math.exp(-2.0 * abs(z)))


def _pt_terms(y, x, t, m, a, nu):
    """(sign, ln|term|) parts of the asymptotic Poschl-Teller kernel, d=1."""
    y = float(np.asarray(y, dtype=float).reshape(-1)[0])
    x = float(np.asarray(x, dtype=float).reshape(-1)[0])
    terms = []
    if nu == 1:
        # psi_0 = sqrt(a/2) sech(a x), E_0 = -a^2/2m
        amp = 0.5 * a * _sech(a * y) * _sech(a * x)
        terms.append((1.0, math.log(amp) + a * a * t / (2.0 * m)))
    elif nu == 2:
        # psi_0 = sqrt(3a/4) sech^2, E_0 = -2 a^2/m
        amp0 = 0.75 * a * _sech(a * y) ** 2 * _sech(a * x) ** 2
        terms.append((1.0, math.log(amp0) + 2.0 * a * a * t / m))
        # psi_1 = sqrt(3a/2) tanh sech, E_1 = -a^2/2m
        prod = (1.5 * a * math.tanh(a * y) * _sech(a * y)
                * math.tanh(a * x) * _sech(a * x))
        if prod != 0.0:
            terms.append((math.copysign(1.0, prod),
                          math.log(abs(prod)) + a * a * t / (2.0 * m)))
    else:
        raise ValueError("asymptotic kernel supports nu in {1, 2}")
    terms.append((1.0, ln_kernel_free(y, x, t, m, 1)))
    return terms


def ln_kernel_pt_asymptotic(y, x, t, m, a, nu):
    signs, lns = zip(*[(s, l) for s, l in _pt_terms(y, x, t, m, a, nu)])
    val, sign = logsumexp(np.array(lns), b=np.array(signs), return_sign=True)
    if sign <= 0:
        raise ValueError("asymptotic kernel non-positive at these arguments")
    return float(val)


def kernel_pt_asymptotic(y, x, t, m, a, nu):
    """Large-t Poschl-Teller kernel: bound-state sum plus the free term."""
    _check_tm(t, m)
    if a <= 0:
        raise ValueError("a must be positive")
    return math.exp(ln_kernel_pt_asymptotic(y, x, t, m, a, nu))


def kernel_delta(y, x, t, m, g):
    """1d kernel of V = -g delta(x): bound-state pole plus continuum integral."""
    _check_tm(t, m)
    if g <= 0:
        raise ValueError("g must be positive")
    y = float(np.asarray(y, dtype=float).reshape(-1)[0])
    x = float(np.asarray(x, dtype=float).reshape(-1)[0])
    s = abs(x) + abs(y)
    diff = x - y
    bound = m * g * math.exp(0.5 * m * g * g * t - m * g * s)

    def integrand(k):
        damp = math.exp(-k * k * t / (2.0 * m))
        scatter = g * (g * math.cos(k * s) + (k / m) * math.sin(k * s)) \
            / (g * g + k * k / (m * m))
        return damp * (math.cos(k * diff) - scatter)

    k_max = math.sqrt(92.0 * m / t)
    result = integrate.quad(integrand, 0.0, k_max, epsabs=1e-13, epsrel=1e-8,
                            limit=500, full_output=1)
    if len(result) > 3:
        raise QuadratureConvergenceError(result[3])
    continuum = result[0] / math.pi
    return bound + continuum


def ln_kernel_delta(y, x, t, m, g):
    return math.log(kernel_delta(y, x, t, m, g))


# ----------------------------------------------------------------------
# bound-state energies


def energy_ho(n, d, omega):
    """E_n = (n + d/2) omega."""
    if n < 0 or d < 1:
        raise ValueError("need n >= 0 and d >= 1")
    return (n + 0.5 * d) * omega


def energy_pt(n, nu, a, m):
    """E_n = -(a^2/2m)(nu - n)^2 for the nu(nu+1) well, n = 0..nu-1."""
    if not 0 <= n < nu:
        raise ValueError("bound levels are n = 0..nu-1")
    return -(a * a / (2.0 * m)) * (nu - n) ** 2


def energy_delta(m, g):
    """Single bound state E_0 = -m g^2/2."""
    if m <= 0 or g <= 0:
        raise ValueError("m and g must be positive")
    return -0.5 * m * g * g


def energy_coulomb(n, m, alpha):
    """E_n = -m alpha^2 / (2 n^2), principal quantum number n >= 1."""
    if n < 1:
        raise ValueError("principal quantum number starts at 1")
    return -m * alpha * alpha / (2.0 * n * n)


# ----------------------------------------------------------------------
# density of the path-averaged potential (harmonic oscillator, y = x = 0)


def pv_ho_series(v, t, omega, n_max=50):
    """Truncated series for the density of the dimensionless exponent v.

    v here is t * integral_0^1 du V(x(u)) for the oscillator pinned at the
    origin.  The Bessel functions of negative argument are reduced to real
    exponentially scaled K_{1/4}, K_{5/4} through the standard analytic
    continuation (only the real part survives in the formula).
    """
    _check_tm(t, 1.0)
    if omega <= 0:
        raise ValueError("omega must be positive")
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    wt = omega * t
    v_arr = np.atleast_1d(np.asarray(v, dtype=float))
    out = np.zeros_like(v_arr)
    pos = v_arr > 0.0
    if np.any(pos):
        vp = v_arr[pos]
        acc = np.zeros_like(vp)
        for n in range(0, n_max + 1, 2):
            c = (n + 0.5) * wt
            vn = c * c / (8.0 * vp)
            amp = math.comb(n, n // 2) / 2.0 ** n
            live = vn <= 372.5  # e^{-2 v_n} underflows beyond this
            if not np.any(live):
                continue
            vnl = vn[live]
            bracket = (vnl - 0.75) * kve(0.25, vnl) + vnl * kve(1.25, vnl)
            acc[live] += amp * vnl ** 1.5 * c ** -2.5 \
                * np.exp(-2.0 * vnl) * bracket
        out[pos] = 32.0 * math.sqrt(wt / (2.0 * math.pi ** 2)) * acc
    if np.isscalar(v) or np.asarray(v).ndim == 0:
        return float(out[0])
    return out


def pv_scale(v, t, density_at_t1):
    """Rescale a t=1 exponent density to time t: P(v|t) = P(v/t^2|1)/t^2."""
    if t <= 0:
        raise ValueError("t must be positive")
    return density_at_t1(np.asarray(v, dtype=float) / t ** 2) / t ** 2


def pv_tail_ho(v, t, omega):
    """Small-v asymptotic density (8 omega t/pi^2 v^2) e^{-omega^2 t^2/16v}."""
    v_arr = np.asarray(v, dtype=float)
    if np.any(v_arr <= 0):
        raise ValueError("tail defined for v > 0")
    wt = omega * t
    return (8.0 * wt / (math.pi ** 2 * v_arr ** 2)) \
        * np.exp(-wt * wt / (16.0 * v_arr))


def tail_diagnostic(v, t, omega, n_max=50):
    """-ln P(v) + ln(8 omega t/pi^2) - 2 ln v; linear in ln v with slope -1
    where the small-v asymptotic regime holds."""
    v_arr = np.asarray(v, dtype=float)
    wt = omega * t
    dens = pv_ho_series(v_arr, t, omega, n_max)
    return -np.log(dens) + math.log(8.0 * wt / math.pi ** 2) \
        - 2.0 * np.log(v_arr)


def w_density_from_v(density_v):
    """Change of variables W = e^{-v}: P_W(W) = P_v(-ln W)/W."""

    def density_w(w):
        w_arr = np.asarray(w, dtype=float)
        if np.any(w_arr <= 0):
            raise ValueError("W must be positive")
        return density_v(-np.log(w_arr)) / w_arr

    return density_w
