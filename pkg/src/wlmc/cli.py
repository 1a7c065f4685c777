"""Configuration-driven experiment runner.

Subcommands: generate-loops, kernel-scan, energy-fit, pv-hist, classical,
validate.  Every run is reproducible: outputs are written atomically, all
seeds derive from one base seed, reductions are fixed-order, and a JSON
manifest records config hash, seeds, timings, and warnings.
"""

import argparse
import configparser
import hashlib
import io
import json
import math
import os
import sys
import time
import zipfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, analysis, analytic, estimator, loopgen, potentials

OK = 0
EXIT_VALIDATE_FAIL = 1
EXIT_CONFIG = 2
EXIT_WINDOW = 3
EXIT_COMPUTE = 4

DEFAULT_OUT = {
    "generate-loops": "loops.npz",
    "kernel-scan": "scan.csv",
    "energy-fit": "fit.csv",
    "pv-hist": "pvhist.csv",
    "classical": "classical.csv",
}

ALLOWED_KEYS = {
    "potential": {"kind", "m", "omega", "a", "nu", "g", "alpha", "mu"},
    "endpoints": {"y", "x"},
    "grid": {"t_min", "t_max", "t_step", "t_values"},
    "ensemble": {"algorithm", "n_loops", "n_points", "d", "seed",
                 "n_ensembles", "projection"},
    "integration": {"method", "n_sub"},
    "histogram": {"n_bins", "tail_columns"},
    "fit": {"window", "sign", "min_points", "residual_threshold"},
    "classical": {"n_sims"},
    "output": {"path"},
    "run": {"threads"},
}

POTENTIAL_KEYS = {
    "free": set(),
    "harmonic": {"omega"},
    "poschl_teller": {"a", "nu"},
    "delta_well": {"g"},
    "coulomb": {"alpha"},
    "yukawa": {"alpha", "mu"},
}


class ConfigError(ValueError):
    """Configuration file failed schema or physics validation."""


def _parse_vector(text):
    try:
        return np.array([float(p) for p in text.split(",")], dtype=float)
    except ValueError:
        raise ConfigError("cannot parse vector %r" % (text,))


class ExperimentConfig:
    """Validated run parameters assembled from one INI file."""

    def __init__(self, path, seed_override=None, threads=None):
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        with open(path, "r") as fh:
            raw = fh.read()
        self.config_sha256 = hashlib.sha256(raw.encode()).hexdigest()
        try:
            parser.read_string(raw)
        except configparser.Error as exc:
            raise ConfigError("cannot parse config: %s" % (exc,))
        self._check_schema(parser)
        self._build_potential(parser)
        self._build_ensemble(parser, seed_override)
        self._build_grid(parser)
        self._build_endpoints(parser)
        self._build_method(parser)
        self._build_analysis(parser)
        self.out_path = parser.get("output", "path", fallback=None)
        threads_cfg = parser.getint("run", "threads", fallback=0)
        self.threads = threads if threads else (threads_cfg or os.cpu_count())
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @staticmethod
    def _check_schema(parser):
        for section in parser.sections():
            if section not in ALLOWED_KEYS:
                raise ConfigError("unknown section [%s]" % (section,))
            for key in parser[section]:
                if key not in ALLOWED_KEYS[section]:
                    raise ConfigError("unknown key %r in [%s]"
                                      % (key, section))
        if not parser.has_option("potential", "kind"):
            raise ConfigError("[potential] kind is required")

    def _build_potential(self, parser):
        sec = parser["potential"]
        kind = sec.get("kind")
        if kind not in POTENTIAL_KEYS:
            raise ConfigError("unknown potential kind %r" % (kind,))
        extra = set(sec) - {"kind", "m"} - POTENTIAL_KEYS[kind]
        if extra:
            raise ConfigError("keys %s do not apply to potential %r"
                              % (sorted(extra), kind))
        self.kind = kind
        self.m = sec.getfloat("m", fallback=1.0)
        if self.m <= 0:
            raise ConfigError("m must be positive")
        try:
            if kind == "free":
                self.potential = potentials.Free()
            elif kind == "harmonic":
                self.omega = sec.getfloat("omega", fallback=1.0)
                self.potential = potentials.Harmonic(self.m, self.omega)
            elif kind == "poschl_teller":
                self.potential = potentials.PoschlTeller(
                    sec.getfloat("a", fallback=1.0),
                    sec.getint("nu", fallback=1), self.m)
            elif kind == "delta_well":
                self.potential = potentials.DeltaWell(
                    sec.getfloat("g", fallback=1.0))
            elif kind == "coulomb":
                self.potential = potentials.Coulomb(
                    sec.getfloat("alpha", fallback=1.0))
            else:
                self.potential = potentials.Yukawa(
                    sec.getfloat("alpha", fallback=1.0),
                    sec.getfloat("mu", fallback=0.1))
        except ValueError as exc:
            raise ConfigError("invalid potential parameters: %s" % (exc,))
        if kind == "yukawa":
            limit = analytic.YUKAWA_CRITICAL_SCREENING \
                * self.potential.alpha * self.m
            if self.potential.mu >= limit:
                raise ConfigError(
                    "mu = %g screens away the bound state (critical value "
                    "%.4g)" % (self.potential.mu, limit))

    def _build_ensemble(self, parser, seed_override):
        sec = parser["ensemble"] if parser.has_section("ensemble") else {}
        get = sec.get if hasattr(sec, "get") else (lambda *a, **k: None)
        self.algorithm = (get("algorithm") or "vloop")
        if self.algorithm not in loopgen.ALGORITHMS:
            raise ConfigError("unknown algorithm %r" % (self.algorithm,))
        default_d = 3 if self.kind in ("coulomb", "yukawa") else 1
        self.n_loops = int(get("n_loops") or 20000)
        self.n_points = int(get("n_points") or 2000)
        self.d = int(get("d") or default_d)
        seed_cfg = int(get("seed") or 0)
        self.seed = int(seed_override) if seed_override is not None \
            else seed_cfg
        self.n_ensembles = int(get("n_ensembles") or 1)
        self.projection = (get("projection") or "none")
        if self.projection not in ("none", "parity"):
            raise ConfigError("projection must be none or parity")
        if self.projection == "parity" and self.n_ensembles != 1:
            raise ConfigError("parity projection runs on a single ensemble")
        if self.n_loops < 1 or self.n_points < 1 or self.d < 1:
            raise ConfigError("ensemble sizes must be positive")
        if self.n_ensembles < 1:
            raise ConfigError("n_ensembles must be >= 1")
        if self.kind == "delta_well" and self.d != 1:
            raise ConfigError("the delta well is defined in d = 1")

    def _build_grid(self, parser):
        sec = parser["grid"] if parser.has_section("grid") else None
        if sec is not None and sec.get("t_values") is not None:
            if sec.get("t_min") or sec.get("t_max") or sec.get("t_step"):
                raise ConfigError("give either t_values or t_min/t_max/t_step")
            self.t_values = _parse_vector(sec.get("t_values"))
        else:
            t_min = sec.getfloat("t_min", fallback=5.0) if sec else 5.0
            t_max = sec.getfloat("t_max", fallback=19.0) if sec else 19.0
            t_step = sec.getfloat("t_step", fallback=1.0) if sec else 1.0
            if t_step <= 0 or t_max < t_min:
                raise ConfigError("grid needs t_step > 0 and t_max >= t_min")
            n = int(math.floor((t_max - t_min) / t_step + 1e-9)) + 1
            self.t_values = t_min + t_step * np.arange(n)
        if self.t_values.size < 1 or np.any(self.t_values <= 0):
            raise ConfigError("t values must be positive")
        if np.any(np.diff(self.t_values) <= 0):
            raise ConfigError("t values must be strictly increasing")

    def _build_endpoints(self, parser):
        if self.kind in ("coulomb", "yukawa"):
            default = np.zeros(self.d)
            default[0] = 0.01
        else:
            default = np.zeros(self.d)
        sec = parser["endpoints"] if parser.has_section("endpoints") else None
        self.y = _parse_vector(sec.get("y")) if sec is not None \
            and sec.get("y") else default.copy()
        self.x = _parse_vector(sec.get("x")) if sec is not None \
            and sec.get("x") else default.copy()
        if self.y.size == 1 and self.d > 1:
            self.y = np.full(self.d, self.y[0])
        if self.x.size == 1 and self.d > 1:
            self.x = np.full(self.d, self.x[0])
        if self.y.size != self.d or self.x.size != self.d:
            raise ConfigError("endpoints must have d = %d components"
                              % (self.d,))

    def _build_method(self, parser):
        defaults = {"free": "pointwise", "harmonic": "pointwise",
                    "poschl_teller": "pointwise",
                    "delta_well": "crossing_count",
                    "coulomb": "smoothed_analytic",
                    "yukawa": "smoothed_numeric"}
        sec = parser["integration"] if parser.has_section("integration") \
            else None
        variant = sec.get("method") if sec is not None and sec.get("method") \
            else defaults[self.kind]
        n_sub = sec.getint("n_sub", fallback=4) if sec is not None else 4
        try:
            self.method = potentials.LineIntegralMethod(variant, n_sub=n_sub)
            potentials.check_method(self.potential, self.method, self.d)
        except ValueError as exc:
            raise ConfigError(str(exc))

    def _build_analysis(self, parser):
        hist = parser["histogram"] if parser.has_section("histogram") else None
        self.n_bins = hist.getint("n_bins", fallback=400) if hist else 400
        self.tail_columns = hist.getboolean("tail_columns", fallback=False) \
            if hist else False
        if self.n_bins < 2:
            raise ConfigError("n_bins must be >= 2")
        fit = parser["fit"] if parser.has_section("fit") else None
        window = fit.get("window", fallback="auto") if fit else "auto"
        if window == "auto":
            self.fit_window = None
        else:
            parts = _parse_vector(window)
            if parts.size != 2 or parts[0] >= parts[1]:
                raise ConfigError("fit window must be 'auto' or 'lo,hi'")
            self.fit_window = (float(parts[0]), float(parts[1]))
        self.fit_sign = fit.get("sign", fallback="bound_above") if fit \
            else "bound_above"
        if self.fit_sign not in analysis.FIT_SIGNS:
            raise ConfigError("fit sign must be one of %s"
                              % (analysis.FIT_SIGNS,))
        self.min_points = fit.getint("min_points", fallback=4) if fit else 4
        self.residual_threshold = fit.getfloat(
            "residual_threshold", fallback=2.0) if fit else 2.0
        cls = parser["classical"] if parser.has_section("classical") else None
        self.n_sims = cls.getint("n_sims", fallback=20) if cls else 20
        if self.n_sims < 1:
            raise ConfigError("n_sims must be >= 1")


# ----------------------------------------------------------------------
# output helpers


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _atomic_write_text(path, text):
    tmp = "%s.tmp.%d" % (path, os.getpid())
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_write_npz(path, arrays):
    """Deterministic npz: fixed timestamps, fixed entry order, no compression."""
    tmp = "%s.tmp.%d" % (path, os.getpid())
    with open(tmp, "wb") as fh:
        with zipfile.ZipFile(fh, "w", zipfile.ZIP_STORED) as zf:
            for name in sorted(arrays):
                bio = io.BytesIO()
                np.lib.format.write_array(bio, np.asarray(arrays[name]),
                                          allow_pickle=False)
                info = zipfile.ZipInfo(name + ".npy",
                                       date_time=(1980, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_STORED
                info.external_attr = 0o644 << 16
                zf.writestr(info, bio.getvalue())
    os.replace(tmp, path)


def _metadata_lines(command, cfg, extra=()):
    lines = [
        "# command = %s" % command,
        "# version = %s" % __version__,
        "# config_sha256 = %s" % cfg.config_sha256,
        "# potential = %s" % cfg.kind,
        "# m = %s" % _fmt(cfg.m),
        "# d = %d" % cfg.d,
        "# y = %s" % ",".join(_fmt(v) for v in cfg.y),
        "# x = %s" % ",".join(_fmt(v) for v in cfg.x),
        "# algorithm = %s" % cfg.algorithm,
        "# n_loops = %d" % cfg.n_loops,
        "# n_points = %d" % cfg.n_points,
        "# n_ensembles = %d" % cfg.n_ensembles,
        "# projection = %s" % cfg.projection,
        "# method = %s" % cfg.method.variant,
        "# seed = %d" % cfg.seed,
    ]
    lines.extend(extra)
    return lines


def _write_manifest(out_path, command, cfg, per_t_seeds, timings, warnings):
    manifest = {
        "command": command,
        "version": __version__,
        "config_sha256": cfg.config_sha256,
        "seed": cfg.seed,
        "per_t_seeds": [int(s) for s in per_t_seeds],
        "threads": cfg.threads,
        "timings_s": timings,
        "warnings": warnings,
        "output": os.path.basename(out_path),
    }
    _atomic_write_text(out_path + ".manifest.json",
                       json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------------
# analytic references


def reference_ln_kernel(cfg, t):
    """ln K for potentials with a usable closed form, else nan."""
    if cfg.projection == "parity":
        if cfg.kind == "harmonic":
            k = 0.5 * (analytic.kernel_ho(cfg.y, cfg.x, t, cfg.m, cfg.omega,
                                          cfg.d)
                       - analytic.kernel_ho(-cfg.y, cfg.x, t, cfg.m,
                                            cfg.omega, cfg.d))
        elif cfg.kind == "free":
            k = 0.5 * (analytic.kernel_free(cfg.y, cfg.x, t, cfg.m, cfg.d)
                       - analytic.kernel_free(-cfg.y, cfg.x, t, cfg.m, cfg.d))
        else:
            return math.nan
        return math.log(k) if k > 0 else math.nan
    if cfg.kind == "free":
        return analytic.ln_kernel_free(cfg.y, cfg.x, t, cfg.m, cfg.d)
    if cfg.kind == "harmonic":
        return analytic.ln_kernel_ho(cfg.y, cfg.x, t, cfg.m, cfg.omega, cfg.d)
    if cfg.kind == "poschl_teller" and cfg.potential.nu in (1, 2) \
            and cfg.d == 1:
        return analytic.ln_kernel_pt_asymptotic(cfg.y, cfg.x, t, cfg.m,
                                                cfg.potential.a,
                                                cfg.potential.nu)
    if cfg.kind == "delta_well":
        return analytic.ln_kernel_delta(cfg.y, cfg.x, t, cfg.m,
                                        cfg.potential.g)
    return math.nan


def reference_energy(cfg):
    """Exact fit target when one is known, else nan."""
    if cfg.projection == "parity":
        if cfg.kind == "harmonic":
            return analytic.energy_ho(1, cfg.d, cfg.omega)
        return math.nan
    if cfg.kind == "harmonic":
        return analytic.energy_ho(0, cfg.d, cfg.omega)
    if cfg.kind == "poschl_teller":
        return analytic.energy_pt(0, cfg.potential.nu, cfg.potential.a, cfg.m)
    if cfg.kind == "delta_well":
        return analytic.energy_delta(cfg.m, cfg.potential.g)
    if cfg.kind == "coulomb":
        return analytic.energy_coulomb(1, cfg.m, cfg.potential.alpha)
    return math.nan


# ----------------------------------------------------------------------
# scan machinery


def _scan_cell(cfg, index):
    t = float(cfg.t_values[index])
    seed_t = loopgen.derive_seed(cfg.seed, index)
    if cfg.projection == "parity":
        spec = loopgen.ensemble_spec(cfg.algorithm, cfg.n_loops,
                                     cfg.n_points, cfg.d, seed_t)
        e = estimator.estimate_parity_projected(cfg.potential, cfg.y, cfg.x,
                                                t, cfg.m, spec, cfg.method)
    elif cfg.n_ensembles > 1:
        e = estimator.estimate_kernel_multi(cfg.potential, cfg.y, cfg.x, t,
                                            cfg.m, cfg, cfg.n_ensembles,
                                            seed_t, cfg.method)
    else:
        spec = loopgen.ensemble_spec(cfg.algorithm, cfg.n_loops,
                                     cfg.n_points, cfg.d, seed_t)
        e = estimator.estimate_kernel(cfg.potential, cfg.y, cfg.x, t, cfg.m,
                                      spec, cfg.method)
    return e, reference_ln_kernel(cfg, t), seed_t


def run_scan(cfg):
    """Kernel estimates over the t-grid, one fresh ensemble per cell."""
    indices = range(cfg.t_values.size)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            cells = list(pool.map(lambda i: _scan_cell(cfg, i), indices))
    else:
        cells = [_scan_cell(cfg, i) for i in indices]
    estimates = [c[0] for c in cells]
    ln_analytic = np.array([c[1] for c in cells])
    seeds = [c[2] for c in cells]
    series = analysis.KernelSeries.from_estimates(
        estimates, ln_analytic=None if np.all(np.isnan(ln_analytic))
        else ln_analytic)
    return estimates, series, seeds


def _scan_warnings(estimates, series):
    warnings = []
    events = sum(e.n_singular_events for e in estimates)
    if events:
        warnings.append("singular_events: %d" % events)
    finite = np.isfinite(series.ln_value)
    if not np.all(finite):
        warnings.append("non_positive_estimates: %d"
                        % int((~finite).sum()))
    spikes = analysis.detect_skyscrapers(series)
    if spikes:
        warnings.append("skyscrapers_at_t: %s"
                        % ",".join(_fmt(series.t[i]) for i in spikes))
    return warnings


def cmd_kernel_scan(cfg, out_path):
    start = time.perf_counter()
    estimates, series, seeds = run_scan(cfg)
    rows = ["t,ln_K_mc,sem_ln,mean_W,ln_K_analytic,n_singular_events"]
    for i, e in enumerate(estimates):
        ana = series.ln_analytic[i] if series.ln_analytic is not None \
            else math.nan
        rows.append(",".join([_fmt(e.t), _fmt(e.ln_value), _fmt(e.sem_ln),
                              _fmt(e.mean_W), _fmt(ana),
                              str(e.n_singular_events)]))
    text = "\n".join(_metadata_lines("kernel-scan", cfg) + rows) + "\n"
    _atomic_write_text(out_path, text)
    warnings = _scan_warnings(estimates, series)
    _write_manifest(out_path, "kernel-scan", cfg, seeds,
                    {"total": time.perf_counter() - start}, warnings)
    return OK


# ----------------------------------------------------------------------
# energy fit


def read_scan_csv(path):
    """KernelSeries from a kernel-scan CSV."""
    t, ln, sem, ana = [], [], [], []
    with open(path, "r") as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                expected = ["t", "ln_K_mc", "sem_ln", "mean_W",
                            "ln_K_analytic", "n_singular_events"]
                if header != expected:
                    raise ValueError("unrecognized scan header %r" % (line,))
                continue
            parts = line.split(",")
            t.append(float(parts[0]))
            ln.append(float(parts[1]))
            sem.append(float(parts[2]))
            ana.append(float(parts[4]))
    if not t:
        raise ValueError("scan CSV has no data rows")
    ana_arr = np.array(ana)
    return analysis.KernelSeries(
        t=np.array(t), ln_value=np.array(ln), sem_ln=np.array(sem),
        ln_analytic=None if np.all(np.isnan(ana_arr)) else ana_arr)


def cmd_energy_fit(cfg, out_path, scan_path=None):
    start = time.perf_counter()
    if scan_path is None:
        estimates, series, seeds = run_scan(cfg)
        warnings = _scan_warnings(estimates, series)
    else:
        series = read_scan_csv(scan_path)
        seeds, warnings = [], []
    if cfg.fit_window is not None:
        window = cfg.fit_window
    else:
        window = analysis.detect_window(
            series, min_points=cfg.min_points,
            residual_threshold=cfg.residual_threshold)
        if window is None:
            print("error: no compatibility window found", file=sys.stderr)
            return EXIT_WINDOW
    try:
        if cfg.projection == "parity":
            fit = analysis.first_excited_energy(series, window)
        else:
            fit = analysis.fit_energy(series, window, sign=cfg.fit_sign)
    except ValueError as exc:
        print("error: fit failed: %s" % (exc,), file=sys.stderr)
        return EXIT_COMPUTE
    exact = reference_energy(cfg)
    rows = ["field,value",
            "window_lo,%s" % _fmt(fit.window[0]),
            "window_hi,%s" % _fmt(fit.window[1]),
            "window_source,%s" % ("config" if cfg.fit_window else "auto"),
            "energy,%s" % _fmt(fit.energy),
            "uncertainty,%s" % _fmt(fit.uncertainty),
            "intercept,%s" % _fmt(fit.intercept),
            "residual_rms,%s" % _fmt(fit.residual_rms),
            "n_points,%d" % fit.n_points,
            "non_spectral,%s" % fit.non_spectral,
            "energy_exact,%s" % _fmt(exact)]
    if not math.isnan(exact):
        rows.append("energy_error,%s" % _fmt(fit.energy - exact))
    text = "\n".join(_metadata_lines("energy-fit", cfg) + rows) + "\n"
    _atomic_write_text(out_path, text)
    if fit.non_spectral:
        warnings.append("non_spectral_fit")
    _write_manifest(out_path, "energy-fit", cfg, seeds,
                    {"total": time.perf_counter() - start}, warnings)
    return OK


# ----------------------------------------------------------------------
# exponent histogram


def cmd_pv_hist(cfg, out_path):
    start = time.perf_counter()
    t = float(cfg.t_values[0])
    seed_t = loopgen.derive_seed(cfg.seed, 0)
    spec = loopgen.ensemble_spec(cfg.algorithm, cfg.n_loops, cfg.n_points,
                                 cfg.d, seed_t)
    tv, events = estimator.exponent_samples(cfg.potential, cfg.y, cfg.x, t,
                                            cfg.m, spec, cfg.method)
    hist = estimator._build_histogram(tv, cfg.n_bins)
    is_ho = cfg.kind == "harmonic" and cfg.d == 1 \
        and not np.any(cfg.y) and not np.any(cfg.x)
    centers = hist.centers
    density = hist.density()
    if is_ho:
        series_density = analytic.pv_ho_series(centers, t, cfg.omega)
        try:
            p_value = analysis.chi_square_gof(
                hist, lambda v: analytic.pv_ho_series(v, t, cfg.omega))
        except ValueError:
            p_value = math.nan
    else:
        series_density = np.full(centers.size, math.nan)
        p_value = math.nan
    header = "bin_center,density_mc,density_series"
    if cfg.tail_columns:
        header += ",tail_density,tail_diagnostic"
        if is_ho:
            tail = analytic.pv_tail_ho(np.maximum(centers, 1e-300), t,
                                       cfg.omega)
            diag = analytic.tail_diagnostic(np.maximum(centers, 1e-300), t,
                                            cfg.omega)
        else:
            tail = np.full(centers.size, math.nan)
            diag = np.full(centers.size, math.nan)
    rows = [header]
    for i in range(centers.size):
        cells = [_fmt(centers[i]), _fmt(density[i]), _fmt(series_density[i])]
        if cfg.tail_columns:
            cells += [_fmt(tail[i]), _fmt(diag[i])]
        rows.append(",".join(cells))
    rows.append("# chi_square_p = %s" % _fmt(p_value))
    extra = ["# t = %s" % _fmt(t), "# n_bins = %d" % cfg.n_bins]
    text = "\n".join(_metadata_lines("pv-hist", cfg, extra) + rows) + "\n"
    _atomic_write_text(out_path, text)
    warnings = []
    if events:
        warnings.append("singular_events: %d" % events)
    _write_manifest(out_path, "pv-hist", cfg, [seed_t],
                    {"total": time.perf_counter() - start}, warnings)
    return OK


# ----------------------------------------------------------------------
# classical-limit study


def cmd_classical(cfg, out_path):
    if cfg.kind != "harmonic" or cfg.d != 1:
        print("error: the classical study needs the harmonic potential in "
              "d = 1", file=sys.stderr)
        return EXIT_CONFIG
    start = time.perf_counter()
    t = float(cfg.t_values[0])
    reports, seeds = [], []
    for s in range(cfg.n_sims):
        seed_s = loopgen.derive_seed(cfg.seed, s)
        seeds.append(seed_s)
        ens = loopgen.generate_ensemble(cfg.algorithm, cfg.n_loops,
                                        cfg.n_points, 1, seed_s)
        w = estimator.loop_weights(cfg.potential, cfg.y, cfg.x, t, cfg.m,
                                   ens, cfg.method)
        reports.append(analysis.dominant_trajectory(ens, w, cfg.y, cfg.x, t,
                                                    cfg.m))
    if cfg.n_sims >= 2:
        rep = analysis.weighted_average_trajectory(reports)
        avg = rep.average[:, 0]
        avg_se = rep.average_se[:, 0]
    else:
        rep = reports[0]
        avg = rep.positions[:, 0]
        avg_se = np.full(rep.tau.size, math.nan)
    classical = analysis.classical_solution_ho(cfg.omega, t, float(cfg.y[0]),
                                               float(cfg.x[0]), rep.tau)
    extra = ["# t = %s" % _fmt(t),
             "# n_sims = %d" % cfg.n_sims,
             "# lambda = %s" % _fmt(rep.lam),
             "# mu = %s" % _fmt(rep.mu),
             "# dominant_weight_share = %s" % _fmt(rep.weight_share)]
    rows = ["tau,dominant,weighted_average,average_se,classical"]
    for i in range(rep.tau.size):
        rows.append(",".join([_fmt(rep.tau[i]), _fmt(rep.positions[i, 0]),
                              _fmt(avg[i]), _fmt(avg_se[i]),
                              _fmt(classical[i])]))
    text = "\n".join(_metadata_lines("classical", cfg, extra) + rows) + "\n"
    _atomic_write_text(out_path, text)
    _write_manifest(out_path, "classical", cfg, seeds,
                    {"total": time.perf_counter() - start}, [])
    return OK


# ----------------------------------------------------------------------
# ensemble export


def cmd_generate_loops(cfg, out_path):
    start = time.perf_counter()
    seed = loopgen.derive_seed(cfg.seed, 0)
    ens = loopgen.generate_ensemble(cfg.algorithm, cfg.n_loops, cfg.n_points,
                                    cfg.d, seed)
    _atomic_write_npz(out_path, {
        "loops": ens.loops,
        "algorithm": np.array(cfg.algorithm),
        "seed": np.array(seed, dtype=np.uint64),
        "n_loops": np.array(cfg.n_loops, dtype=np.int64),
        "n_points": np.array(cfg.n_points, dtype=np.int64),
        "d": np.array(cfg.d, dtype=np.int64),
    })
    _write_manifest(out_path, "generate-loops", cfg, [seed],
                    {"total": time.perf_counter() - start}, [])
    return OK


# ----------------------------------------------------------------------
# validation suite


def _validate_checks():
    checks = []

    def check(name):
        def wrap(fn):
            checks.append((name, fn))
            return fn
        return wrap

    @check("loop closure and endpoints")
    def _closure():
        for alg in loopgen.ALGORITHMS:
            ens = loopgen.generate_ensemble(alg, 200, 64, 2, seed=1)
            assert np.all(ens.loops[:, 0, :] == 0.0)
            assert np.all(np.abs(ens.loops[:, -1, :]) < 1e-12)

    @check("bridge variance u(1-u)")
    def _variance():
        n_l, n_p, i = 20000, 64, 32
        for alg in loopgen.ALGORITHMS:
            ens = loopgen.generate_ensemble(alg, n_l, n_p, 1, seed=2)
            u = i / n_p
            target = u * (1.0 - u)
            var = float(np.var(ens.loops[:, i, 0]))
            se = target * math.sqrt(2.0 / (n_l - 1.0))
            assert abs(var - target) < 3.0 * se, "%s: %g vs %g" \
                % (alg, var, target)

    @check("algorithm equivalence (KS)")
    def _equivalence():
        from scipy import stats
        samples = {}
        for alg in loopgen.ALGORITHMS:
            ens = loopgen.generate_ensemble(alg, 20000, 64, 1, seed=3)
            samples[alg] = ens.loops[:, 32, 0]
        for a, b in (("vloop", "yloop"), ("vloop", "lsol"),
                     ("yloop", "lsol")):
            p = stats.ks_2samp(samples[a], samples[b]).pvalue
            assert p > 0.01, "%s vs %s: p = %g" % (a, b, p)

    @check("free kernel exactness")
    def _free():
        ens = loopgen.generate_ensemble("vloop", 100, 32, 1, seed=4)
        e = estimator.estimate_kernel(potentials.Free(), 0.0, 1.0, 2.0, 1.0,
                                      ens)
        exact = analytic.kernel_free(0.0, 1.0, 2.0, 1.0, 1)
        assert e.mean_W == 1.0 and e.sem == 0.0
        assert abs(e.value - exact) < 1e-15 * exact

    @check("Coulomb smoothing consistency")
    def _smoothing():
        v = potentials.segment_smoothed_coulomb([1.0, 0.0, 0.0],
                                                [2.0, 0.0, 0.0], 1.0)
        assert abs(v + math.log(2.0)) < 1e-12
        rng = np.random.default_rng(5)
        for _ in range(20):
            a = rng.uniform(0.3, 2.0, size=3)
            b = rng.uniform(0.3, 2.0, size=3)
            assert potentials.segment_smoothed_coulomb(a, b, 1.0) < 0.0

    @check("delta crossing rule")
    def _delta():
        res = potentials.delta_crossings([1.0, -1.0, 1.0], g=1.0, t=1.0,
                                         n_points=2)
        assert res.v == -0.5

    @check("classical solution Euler-Lagrange")
    def _classical():
        tau = np.linspace(0.0, 10.0, 4001)
        path = analysis.classical_solution_ho(1.0, 10.0, 1.0, -1.0, tau)
        h = tau[1] - tau[0]
        acc = (path[2:] - 2.0 * path[1:-1] + path[:-2]) / h ** 2
        assert np.max(np.abs(acc - path[1:-1])) < 1e-6

    return checks


def cmd_validate():
    failures = 0
    for name, fn in _validate_checks():
        try:
            fn()
        except AssertionError as exc:
            failures += 1
            print("FAIL  %s (%s)" % (name, exc))
        else:
            print("PASS  %s" % name)
    if failures:
        print("%d check(s) failed" % failures)
        return EXIT_VALIDATE_FAIL
    print("all checks passed")
    return OK


# ----------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wlmc",
        description="Worldline Monte Carlo kernel estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate-loops", "kernel-scan", "energy-fit", "pv-hist",
                 "classical"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        if name == "energy-fit":
            p.add_argument("--scan", default=None,
                           help="fit an existing kernel-scan CSV")
    sub.add_parser("validate")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        return cmd_validate()
    try:
        cfg = ExperimentConfig(args.config, seed_override=args.seed,
                               threads=args.threads)
    except (ValueError, OSError) as exc:
        print("config error: %s" % (exc,), file=sys.stderr)
        return EXIT_CONFIG
    out_path = args.out or cfg.out_path or DEFAULT_OUT[args.command]
    try:
        if args.command == "generate-loops":
            return cmd_generate_loops(cfg, out_path)
        if args.command == "kernel-scan":
            return cmd_kernel_scan(cfg, out_path)
        if args.command == "energy-fit":
            return cmd_energy_fit(cfg, out_path, scan_path=args.scan)
        if args.command == "pv-hist":
            return cmd_pv_hist(cfg, out_path)
        return cmd_classical(cfg, out_path)
    except (ValueError, OverflowError, OSError) as exc:
        print("error: %s" % (exc,), file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
