"""Generation of closed unit loops (Brownian bridges on [0, 1]).

A unit loop is a discretized trajectory q_0..q_{N_p} with q_0 = q_{N_p} = 0
drawn from the Gaussian density proportional to
exp(-(N_p/2) sum_i (q_i - q_{i-1})^2), whose continuum limit is the standard
Brownian bridge with covariance min(u, u')(1 - max(u, u')).  Three equivalent
constructions are provided: a backward (velocity-space) recursion, a forward
(position-space) recursion, and a linearly shifted open walk.  All three
consume normal draws with per-component variance 1/2.
"""

import math
from dataclasses import dataclass

import numpy as np

SQRT_HALF = math.sqrt(0.5)

ALGORITHMS = ("vloop", "yloop", "lsol")

# loops per generation/evaluation block; fixed so results never depend on
# worker count or available memory
BLOCK_SIZE = 512


def loop_rng(seed, index):
    """Independent per-loop generator derived from (ensemble seed, loop index)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(*keys):
    """Collapse a tuple of integer keys into a single 64-bit seed."""
    ss = np.random.SeedSequence([int(k) for k in keys])
    return int(ss.generate_state(1, np.uint64)[0])


def gaussian_vector(rng, d):
    """One d-component draw with independent N(0, 1/2) components."""
    return rng.standard_normal(int(d)) * SQRT_HALF


def _check_args(n_points, d):
    if n_points < 1:
        raise ValueError("n_points must be >= 1, got %r" % (n_points,))
    if d < 1:
        raise ValueError("dimension must be >= 1, got %r" % (d,))


def _assemble_vloop(omega):
    """Batch backward-recursion assembly; omega is (batch, N_p - 1, d)."""
    b, k, d = omega.shape
    n = k + 1
    q = np.zeros((b, n + 1, d))
    if k == 0:
        return q
    i = np.arange(1, k + 1, dtype=float)
    coef = np.sqrt(2.0 / n) * np.sqrt((n + 1.0 - i) / (n + 2.0 - i))
    coef[0] = 1.0 / math.sqrt(n)
    vbar = omega * coef[None, :, None]
    # running sums of the unwound increments, telescoped to closed form:
    # S_i = (N_p+1-i) * sum_{j=2..i} vbar_j / (N_p+1-j)
    c = np.zeros_like(vbar)
    c[:, 1:, :] = vbar[:, 1:, :] / (n + 1.0 - i[1:])[None, :, None]
    s = np.cumsum(c, axis=1) * (n + 1.0 - i)[None, :, None]
    q1 = vbar[:, 0, :] - 0.5 * s[:, -1, :]
    q[:, 1, :] = q1
    if k > 1:
        q[:, 2:n, :] = q1[:, None, :] + s[:, 1:, :]
    return q


def _assemble_yloop(omega):
    """Batch forward-recursion assembly; omega is (batch, N_p - 1, d)."""
    b, k, d = omega.shape
    n = k + 1
    q = np.zeros((b, n + 1, d))
    if k == 0:
        return q
    i = np.arange(1, k + 1, dtype=float)
    coef = np.sqrt(2.0 / n) * np.sqrt((n - i) / (n + 1.0 - i))
    qbar = omega * coef[None, :, None]
    # recursion q_i = qbar_i + ((N_p-i)/(N_p+1-i)) q_{i-1}, telescoped:
    # q_i = (N_p-i) * sum_{j<=i} qbar_j / (N_p-j)
    w = qbar / (n - i)[None, :, None]
    q[:, 1:n, :] = np.cumsum(w, axis=1) * (n - i)[None, :, None]
    return q


def _assemble_lsol(omega):
    """Batch shifted-open-walk assembly; omega is (batch, N_p, d)."""
    b, n, d = omega.shape
    q = np.zeros((b, n + 1, d))
    walk = np.cumsum(omega * math.sqrt(2.0 / n), axis=1)
    frac = (np.arange(1, n + 1, dtype=float) / n)[None, :, None]
    q[:, 1:, :] = walk - frac * walk[:, -1:, :]
    q[:, n, :] = 0.0
    return q


_ASSEMBLERS = {"vloop": _assemble_vloop,
               "yloop": _assemble_yloop,
               "lsol": _assemble_lsol}


def _draw_rows(algorithm, n_points):
    """Number of variance-1/2 draw rows each algorithm consumes per loop."""
    return n_points if algorithm == "lsol" else n_points - 1


def generate_vloop(n_points, d, rng):
    """One unit loop via the backward recursion; returns (N_p+1, d)."""
    _check_args(n_points, d)
    omega = rng.standard_normal((n_points - 1, d)) * SQRT_HALF
    return _assemble_vloop(omega[None])[0]


def generate_yloop(n_points, d, rng):
    """One unit loop via the forward recursion; returns (N_p+1, d)."""
    _check_args(n_points, d)
    omega = rng.standard_normal((n_points - 1, d)) * SQRT_HALF
    return _assemble_yloop(omega[None])[0]


def generate_lsol(n_points, d, rng):
    """One unit loop via the shifted open walk; returns (N_p+1, d)."""
    _check_args(n_points, d)
    omega = rng.standard_normal((n_points, d)) * SQRT_HALF
    return _assemble_lsol(omega[None])[0]


def _generate_block(algorithm, seed, first, count, n_points, d):
    """Loops first..first+count-1 of the ensemble keyed by seed."""
    rows = _draw_rows(algorithm, n_points)
    omega = np.empty((count, rows, d))
    for j in range(count):
        rng = loop_rng(seed, first + j)
        omega[j] = rng.standard_normal((rows, d))
    omega *= SQRT_HALF
    return _ASSEMBLERS[algorithm](omega)


@dataclass(frozen=True)
class LoopEnsemble:
    """Materialized collection of unit loops sharing one (N_p, d)."""

    loops: np.ndarray  # (n_loops, n_points + 1, d)
    algorithm: str
    seed: int

    @property
    def n_loops(self):
        return self.loops.shape[0]

    @property
    def n_points(self):
        return self.loops.shape[1] - 1

    @property
    def d(self):
        return self.loops.shape[2]

    def iter_blocks(self, block_size=BLOCK_SIZE):
        for lo in range(0, self.n_loops, block_size):
            yield self.loops[lo:lo + block_size]


@dataclass(frozen=True)
class EnsembleSpec:
    """Recipe for an ensemble, generated lazily block by block.

    Produces bit-identical loops to the materialized ensemble with the same
    parameters; use it when n_loops * n_points is too large to hold at once.
    """

    algorithm: str
    n_loops: int
    n_points: int
    d: int
    seed: int

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError("unknown algorithm %r" % (self.algorithm,))
        if self.n_loops < 1:
            raise ValueError("n_loops must be >= 1")
        _check_args(self.n_points, self.d)

    def iter_blocks(self, block_size=BLOCK_SIZE):
        for lo in range(0, self.n_loops, block_size):
            count = min(block_size, self.n_loops - lo)
            yield _generate_block(self.algorithm, self.seed, lo, count,
                                  self.n_points, self.d)

    def materialize(self):
        blocks = list(self.iter_blocks())
        loops = np.concatenate(blocks, axis=0) if len(blocks) > 1 else blocks[0]
        loops.flags.writeable = False
        return LoopEnsemble(loops=loops, algorithm=self.algorithm,
                            seed=self.seed)


def generate_ensemble(algorithm, n_loops, n_points, d, seed):
    """Materialize n_loops unit loops; bit-identical for identical inputs."""
    return EnsembleSpec(algorithm=algorithm, n_loops=int(n_loops),
                        n_points=int(n_points), d=int(d),
                        seed=int(seed)).materialize()


def ensemble_spec(algorithm, n_loops, n_points, d, seed):
    """Lazy counterpart of generate_ensemble for block-streamed evaluation."""
    return EnsembleSpec(algorithm=algorithm, n_loops=int(n_loops),
                        n_points=int(n_points), d=int(d), seed=int(seed))


def scale_point(loop, i, y, x, t, m):
    """Physical position y + (x-y)(i/N_p) + sqrt(t/m) q_i of loop point i."""
    if t <= 0 or m <= 0:
        raise ValueError("t and m must be positive")
    n_points = loop.shape[0] - 1
    if not 0 <= i <= n_points:
        raise ValueError("index %d outside 0..%d" % (i, n_points))
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    u = i / n_points
    return y + (x - y) * u + math.sqrt(t / m) * loop[i]


def scale_paths(loops, y, x, t, m):
    """Scale a block of unit loops onto physical paths from y to x.

    loops is (batch, N_p+1, d); returns the same shape in length units.
    """
    if t <= 0 or m <= 0:
        raise ValueError("t and m must be positive")
    n_points = loops.shape[1] - 1
    y = np.asarray(y, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    u = (np.arange(n_points + 1, dtype=float) / n_points)[None, :, None]
    straight = y[None, None, :] + (x - y)[None, None, :] * u
    return straight + math.sqrt(t / m) * loops
