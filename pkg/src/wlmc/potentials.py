"""Potentials and line integrals of V along discretized trajectories.

The central quantity is v = integral_0^1 du V(x(u)) evaluated on a path of
N_p+1 points (t-independent; the Monte Carlo weight is W = exp(-t v)).  The
plain estimate is the right-endpoint Riemann sum (1/N_p) sum_{i=1..N_p}
V(x_i); for singular potentials each term can be replaced by the exact or
quadrature line average over the segment, and the delta well is handled by
counting origin crossings.
"""

import math
from dataclasses import dataclass

import numpy as np

# below this segment length the smoothed line average degenerates to a
# pointwise evaluation at the segment end
EPS_SEGMENT = 1e-12


class PotentialError(ValueError):
    """Base class for potential and line-integral failures."""


class SingularEvaluationError(PotentialError):
    """Pointwise evaluation requested exactly at the singular point."""


class PointwiseUnsupportedError(PotentialError):
    """The potential has no pointwise values (distributional potential)."""


class LogSingularSegmentError(PotentialError):
    """A smoothed segment passes exactly through the singularity."""


class DegenerateCrossingError(PotentialError):
    """A zero-length segment was flagged as an origin crossing."""


class MethodCompatibilityError(PotentialError):
    """Line-integral method not valid for this potential or dimension."""


# ----------------------------------------------------------------------
# potential definitions


class Free:
    """V = 0."""

    kind = "free"

    def evaluate_array(self, r2):
        return np.zeros_like(r2)


class Harmonic:
    """V = (1/2) m omega^2 |x|^2."""

    kind = "harmonic"

    def __init__(self, m, omega):
        if m <= 0 or omega <= 0:
            raise ValueError("m and omega must be positive")
        self.m = float(m)
        self.omega = float(omega)

    def evaluate_array(self, r2):
        return 0.5 * self.m * self.omega ** 2 * r2


class PoschlTeller:
    """V = -(a^2/2m) nu(nu+1) / cosh^2(a|x|)."""

    kind = "poschl_teller"

    def __init__(self, a, nu, m):
        if a <= 0 or m <= 0:
            raise ValueError("a and m must be positive")
        if int(nu) != nu or nu < 1:
            raise ValueError("nu must be a positive integer")
        self.a = float(a)
        self.nu = int(nu)
        self.m = float(m)

    def evaluate_array(self, r2):
        depth = self.a ** 2 * self.nu * (self.nu + 1) / (2.0 * self.m)
        return -depth / np.cosh(self.a * np.sqrt(r2)) ** 2


class DeltaWell:
    """V = -g delta(x) in d=1; evaluated only through crossing counting."""

    kind = "delta_well"

    def __init__(self, g):
        if g <= 0:
            raise ValueError("g must be positive")
        self.g = float(g)

    def evaluate_array(self, r2):
        raise PointwiseUnsupportedError(
            "delta well has no pointwise values; use the crossing-count method")


class Coulomb:
    """V = -alpha / r."""

    kind = "coulomb"

    def __init__(self, alpha):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.alpha = float(alpha)

    def evaluate_array(self, r2):
        if np.any(r2 == 0.0):
            raise SingularEvaluationError("Coulomb evaluated at the origin")
        return -self.alpha / np.sqrt(r2)


class Yukawa:
    """V = -alpha exp(-mu r) / r."""

    kind = "yukawa"

    def __init__(self, alpha, mu):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        if mu < 0:
            raise ValueError("mu must be non-negative")
        self.alpha = float(alpha)
        self.mu = float(mu)

    def evaluate_array(self, r2):
        if np.any(r2 == 0.0):
            raise SingularEvaluationError("Yukawa evaluated at the origin")
        r = np.sqrt(r2)
        return -self.alpha * np.exp(-self.mu * r) / r


def evaluate(potential, position):
    """Pointwise V(position); position is a d-vector (or scalar for d=1)."""
    pos = np.atleast_1d(np.asarray(position, dtype=float))
    r2 = np.array([np.dot(pos, pos)])
    return float(potential.evaluate_array(r2)[0])


# ----------------------------------------------------------------------
# line-integral methods


@dataclass(frozen=True)
class LineIntegralMethod:
    """Rule used to turn a discretized path into a value of v."""

    variant: str  # pointwise | smoothed_analytic | smoothed_numeric | crossing_count
    n_sub: int = 4

    def __post_init__(self):
        if self.variant not in ("pointwise", "smoothed_analytic",
                                "smoothed_numeric", "crossing_count"):
            raise ValueError("unknown line-integral variant %r" % (self.variant,))
        if self.n_sub < 1:
            raise ValueError("n_sub must be >= 1")


POINTWISE = LineIntegralMethod("pointwise")
SMOOTHED_ANALYTIC = LineIntegralMethod("smoothed_analytic")
CROSSING_COUNT = LineIntegralMethod("crossing_count")


def smoothed_numeric(n_sub=4):
    return LineIntegralMethod("smoothed_numeric", n_sub=n_sub)


def check_method(potential, method, d):
    """Reject method/potential/dimension combinations outside their domain."""
    kind = potential.kind
    v = method.variant
    if v == "smoothed_analytic" and kind != "coulomb":
        raise MethodCompatibilityError("analytic smoothing is Coulomb-only")
    if v == "smoothed_numeric" and kind not in ("yukawa", "coulomb"):
        raise MethodCompatibilityError(
            "numeric smoothing applies to Yukawa (and Coulomb cross-checks)")
    if v == "crossing_count" and (kind != "delta_well" or d != 1):
        raise MethodCompatibilityError(
            "crossing counting applies to the delta well in d=1 only")
    if v == "pointwise" and kind == "delta_well":
        raise MethodCompatibilityError(
            "delta well needs the crossing-count method")
    if kind == "delta_well" and v != "crossing_count":
        raise MethodCompatibilityError(
            "delta well needs the crossing-count method")


@dataclass(frozen=True)
class LineIntegralResult:
    """Value of v on one path plus a count of segment fallbacks."""

    v: float
    n_singular_events: int


# ----------------------------------------------------------------------
# block implementations; paths has shape (batch, N_p+1, d)


def _pointwise_block(potential, paths):
    r2 = np.einsum("bid,bid->bi", paths[:, 1:, :], paths[:, 1:, :])
    values = potential.evaluate_array(r2)
    n_points = paths.shape[1] - 1
    return values.sum(axis=1) / n_points, np.zeros(paths.shape[0], dtype=np.int64)


def _segment_geometry(paths):
    """Per-segment norms and projections used by both smoothing rules."""
    x_prev = paths[:, :-1, :]
    x_cur = paths[:, 1:, :]
    delta = x_cur - x_prev
    a = np.sqrt(np.einsum("bid,bid->bi", x_prev, x_prev))
    b = np.sqrt(np.einsum("bid,bid->bi", x_cur, x_cur))
    dist = np.sqrt(np.einsum("bid,bid->bi", delta, delta))
    dot_prev = np.einsum("bid,bid->bi", x_prev, delta)
    dot_cur = np.einsum("bid,bid->bi", x_cur, delta)
    return x_prev, delta, a, b, dist, dot_prev, dot_cur


def _smoothed_coulomb_block(potential, paths):
    """Exact per-segment line averages of -alpha/r."""
    alpha = potential.alpha
    x_prev, delta, a, b, dist, dot_prev, dot_cur = _segment_geometry(paths)
    n_points = paths.shape[1] - 1

    degenerate = dist < EPS_SEGMENT
    if np.any(b[degenerate] == 0.0) or np.any((a == 0.0) & ~degenerate) \
            or np.any((b == 0.0) & ~degenerate):
        raise LogSingularSegmentError("segment endpoint at the origin")

    ratio = np.empty_like(dist)
    with np.errstate(invalid="ignore", divide="ignore"):
        # both projections >= 0: segment points away from the closest approach
        fwd = dot_prev >= 0.0
        np.copyto(ratio, (b * dist + dot_cur) / (a * dist + dot_prev),
                  where=fwd)
        # both < 0: mirror of the first case (never brackets the origin)
        bwd = dot_cur < 0.0
        np.copyto(ratio, (a * dist - dot_prev) / (b * dist - dot_cur),
                  where=bwd)
        # mixed sign: closest approach inside the segment; use the rejection
        # |x_perp|^2 for a cancellation-free logarithm
        mid = ~fwd & ~bwd & ~degenerate
        if np.any(mid):
            scale = np.where(dist > 0.0, dist, 1.0)
            proj = x_prev + (-dot_prev / scale ** 2)[:, :, None] * delta
            perp2 = np.einsum("bid,bid->bi", proj, proj)
            if np.any(perp2[mid] == 0.0):
                raise LogSingularSegmentError(
                    "segment passes exactly through the origin")
            num = (b * dist + dot_cur) * (a * dist - dot_prev)
            np.copyto(ratio, num / (dist ** 2 * perp2), where=mid)
        seg = -alpha * np.log(ratio) / dist
    fallback = -alpha / b
    seg = np.where(degenerate, fallback, seg)
    v = seg.sum(axis=1) / n_points
    return v, degenerate.sum(axis=1).astype(np.int64)


def _smoothed_numeric_block(potential, paths, n_sub):
    """Midpoint-rule per-segment line averages (screened or bare Coulomb)."""
    alpha = potential.alpha
    mu = potential.mu if potential.kind == "yukawa" else 0.0
    x_prev = paths[:, :-1, :]
    delta = paths[:, 1:, :] - x_prev
    dist2 = np.einsum("bid,bid->bi", delta, delta)
    n_points = paths.shape[1] - 1

    degenerate = dist2 < EPS_SEGMENT ** 2
    seg = np.zeros(dist2.shape)
    for j in range(n_sub):
        node = (j + 0.5) / n_sub
        pos = x_prev + node * delta
        r2 = np.einsum("bid,bid->bi", pos, pos)
        if np.any(r2[~degenerate] == 0.0):
            raise LogSingularSegmentError("quadrature node at the origin")
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.sqrt(r2)
            seg += np.exp(-mu * r) / r
    seg *= -alpha / n_sub

    b2 = np.einsum("bid,bid->bi", paths[:, 1:, :], paths[:, 1:, :])
    if np.any(b2[degenerate] == 0.0):
        raise LogSingularSegmentError("degenerate segment at the origin")
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.sqrt(b2)
        fallback = -alpha * np.exp(-mu * b) / b
    seg = np.where(degenerate, fallback, seg)
    v = seg.sum(axis=1) / n_points
    return v, degenerate.sum(axis=1).astype(np.int64)


def _crossing_block(potential, paths):
    """Delta-well v from sign changes; paths must be (batch, N_p+1, 1)."""
    g = potential.g
    x = paths[:, :, 0]
    n_points = x.shape[1] - 1
    crossing = x[:, :-1] * x[:, 1:] < 0.0
    # an interior point exactly at zero marks one crossing, attributed to the
    # segment ending there (backwards difference)
    if n_points >= 2:
        crossing[:, :-1] |= x[:, 1:-1] == 0.0
    delta = np.abs(np.diff(x, axis=1))
    if np.any(delta[crossing] == 0.0):
        raise DegenerateCrossingError("zero-length segment at a crossing")
    inv = np.where(crossing, 1.0 / np.where(crossing, delta, 1.0), 0.0)
    v = -(g / n_points) * inv.sum(axis=1)
    return v, np.zeros(x.shape[0], dtype=np.int64)


def line_integral_block(potential, paths, method):
    """v and fallback counts for a block of scaled paths."""
    if method.variant == "pointwise":
        return _pointwise_block(potential, paths)
    if method.variant == "smoothed_analytic":
        return _smoothed_coulomb_block(potential, paths)
    if method.variant == "smoothed_numeric":
        return _smoothed_numeric_block(potential, paths, method.n_sub)
    return _crossing_block(potential, paths)


def line_integral(potential, path, method, t, m):
    """v = integral_0^1 du V along one scaled path of N_p+1 points."""
    if t <= 0 or m <= 0:
        raise ValueError("t and m must be positive")
    path = np.asarray(path, dtype=float)
    if path.ndim == 1:
        path = path[:, None]
    if path.shape[0] < 2:
        raise ValueError("path needs at least 2 points")
    check_method(potential, method, path.shape[1])
    v, events = line_integral_block(potential, path[None], method)
    return LineIntegralResult(v=float(v[0]), n_singular_events=int(events[0]))


# ----------------------------------------------------------------------
# single-segment entry points


def segment_smoothed_coulomb(x_prev, x_cur, alpha):
    """Line average of -alpha/r over the straight segment x_prev -> x_cur."""
    pot = Coulomb(alpha)
    pair = np.stack([np.atleast_1d(np.asarray(x_prev, dtype=float)),
                     np.atleast_1d(np.asarray(x_cur, dtype=float))])[None]
    v, _ = _smoothed_coulomb_block(pot, pair)
    # one segment: v is the average over N_p = 1 segments, i.e. the value
    return float(v[0])


def segment_smoothed_yukawa(x_prev, x_cur, alpha, mu, n_sub=4):
    """Midpoint-rule line average of -alpha e^{-mu r}/r over one segment."""
    pot = Yukawa(alpha, mu)
    pair = np.stack([np.atleast_1d(np.asarray(x_prev, dtype=float)),
                     np.atleast_1d(np.asarray(x_cur, dtype=float))])[None]
    v, _ = _smoothed_numeric_block(pot, pair, int(n_sub))
    return float(v[0])


def delta_crossings(path, g, t, n_points):
    """Delta-well line integral from origin crossings of a d=1 path."""
    path = np.asarray(path, dtype=float)
    if path.ndim == 1:
        path = path[:, None]
    if path.shape[1] != 1:
        raise MethodCompatibilityError("crossing counting requires d=1")
    if n_points != path.shape[0] - 1:
        raise ValueError("n_points does not match the path length")
    if n_points < 2:
        raise ValueError("crossing counting needs N_p >= 2")
    if t <= 0:
        raise ValueError("t must be positive")
    v, events = _crossing_block(DeltaWell(g), path[None])
    return LineIntegralResult(v=float(v[0]), n_singular_events=int(events[0]))
