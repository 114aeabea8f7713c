"""Configuration-driven reproductions of the simulation studies and the
marked point process analysis.

Each ``run_*`` function takes an :class:`ExperimentConfig`, returns a results
dictionary and, when ``config.out`` is set, writes ``manifest.json``,
``results.json`` and plot-ready CSV tables into that directory.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import MARKED, DataError, Dataset, WeightSchedule, MarkedPoint
from .kernels import AngularGaussianKernel, BivariateGaussianKernel, GaussianIsoKernel, MarkedPPKernel
from .metrics import (
    DensityEstimate,
    conditional_mark_density,
    empirical_mark_density,
    grid_mixture_estimate,
    kl_divergence_mc,
    kl_divergence_quadrature,
    l1_distance,
    mixture_density_particle,
    neighbours,
    particle_mixture_estimate,
    plugin_mixing_density,
    silverman_bandwidth,
    total_variation,
    weighted_kde,
    weighted_quantiles,
)
from .particles import ess, init_particles, permutation_average, run_prticle
from .quadrature import (
    make_grid,
    make_sphere_grid,
    mixture_density_quadrature,
    run_pr_quadrature,
    trapezoid_weights,
    write_table,
)
from .refresh import run_with_refresh
from .sampling import (
    DATA_STREAM,
    KL_STREAM,
    TRUTH_STREAM,
    AngularMixtureDirections,
    Example3Truth,
    MarkedPPPrior,
    PointMass,
    ScaledBetaProduct,
    SphereTimesUniform,
    UniformBox,
    rng_stream,
    sample_mixture_data,
)

EXPERIMENTS = ("example1-d1", "example1-d2", "example2-sphere", "example3-5dim",
               "convergence-study", "marked-pp")

#: Locations at which conditional mark densities are reported.
MARK_LOCATIONS = ((81.0, 120.0), (100.0, 100.0), (105.0, 140.0), (185.0, 87.0))
MARK_GRID = np.linspace(2.0, 80.0, 401)[1:]

# Uniform initial-guess box for the 5-dim bivariate-normal mixing space:
# (mu1, mu2, var1, var2, rho).  Each side holds >= 99.9% of the true marginal.
EXAMPLE3_BOX = ((-5.0, 15.0), (0.0, 20.0), (0.0, 7.0), (0.0, 15.0), (0.0, 1.0))
EXAMPLE3_XBOX = ((-8.0, 18.0), (-3.0, 23.0))

# Directions of the bimodal true mixing distribution on the sphere.
SPHERE_CENTERS = ((0.0, 0.0, 1.0), (np.sqrt(3.0) / 2.0, 0.0, -0.5))


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    T: int | None = None
    T_list: list | None = None
    n: int | None = None
    gamma: float = 1.0
    seed: int = 0
    n_seeds: int | None = None
    n_perms: int = 1
    df: float = 5.0
    inflate: float = 1.5
    rounds: int = 1
    refresh: bool | None = None
    out: str | None = None
    data_path: str | None = None
    synthetic: bool = False
    variant: str = "both"
    sigma2: float = 0.5
    n_mc: int = 100_000
    beta_bounds: list = field(default_factory=lambda: [0.0, 0.5])
    true_beta: float = 0.1
    true_concentration: float = 0.25
    mesh: list = field(default_factory=lambda: [180, 360])

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.T_list is None and self.T is not None:
            self.T_list = [self.T]
        for key, value in _DEFAULTS[self.experiment].items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(0.5 < float(self.gamma) <= 1.0, "gamma must lie in (0.5, 1]")
        need(int(self.T) >= 1, "T must be >= 1")
        need(all(int(t) >= 1 for t in self.T_list), "every T in T_list must be >= 1")
        need(int(self.n) >= 0, "n must be >= 0")
        need(int(self.n_seeds) >= 1, "n_seeds must be >= 1")
        need(int(self.n_perms) >= 1, "n_perms must be >= 1")
        need(float(self.df) > 2, "df must exceed 2")
        need(float(self.inflate) >= 1, "inflate must be >= 1")
        need(int(self.rounds) >= 0, "rounds must be >= 0")
        need(self.variant in ("full", "reduced", "both"), "variant must be full, reduced or both")
        need(float(self.sigma2) > 0, "sigma2 must be positive")
        need(int(self.n_mc) >= 2, "n_mc must be >= 2")
        lo, hi = map(float, self.beta_bounds)
        need(0 <= lo <= hi and hi > 0, "beta_bounds must satisfy 0 <= lo <= hi, hi > 0")
        need(float(self.true_beta) > 0, "true_beta must be positive")
        if self.experiment == "marked-pp":
            need(self.data_path is not None or self.synthetic,
                 "marked-pp needs data_path (longleaf CSV) or synthetic: true")
        self.T, self.n, self.n_seeds, self.n_perms = int(self.T), int(self.n), int(self.n_seeds), int(self.n_perms)
        self.T_list = [int(t) for t in self.T_list]

    def as_dict(self):
        return dataclasses.asdict(self)


_DEFAULTS = {
    "example1-d1": dict(T=1000, T_list=[100, 300, 500, 1000], n=500, n_seeds=5, refresh=False),
    "example1-d2": dict(T=1000, T_list=[100, 300, 500, 1000], n=500, n_seeds=5, refresh=False),
    "example2-sphere": dict(T=1000, T_list=[1000], n=2000, n_seeds=1, refresh=False),
    "example3-5dim": dict(T=5000, T_list=[5000], n=500, n_seeds=5, refresh=True),
    "convergence-study": dict(T=10000, T_list=[100, 300, 1000, 3000, 10000], n=100, n_seeds=5,
                              refresh=False),
    "marked-pp": dict(T=20000, T_list=[20000], n=584, n_seeds=1, refresh=True),
}


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Flat key-value config (YAML or JSON) with keyword overrides on top."""
    import yaml

    values = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError("config must be a flat key-value mapping")
        values.update(loaded or {})
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "experiment" not in values:
        raise ConfigError("config must name an experiment")
    try:
        return ExperimentConfig(**values)
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(str(err)) from err


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _dump(path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


class _Output:
    def __init__(self, config: ExperimentConfig):
        self.dir = None if config.out is None else Path(config.out)
        self.config = config
        self.started = time.perf_counter()
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def table(self, name, header, rows):
        if self.dir is not None:
            write_table(self.dir / name, header, rows)

    def finish(self, results, extra_manifest=None):
        results.setdefault("seed", self.config.seed)
        if self.dir is None:
            return results
        manifest = {
            "config": self.config.as_dict(),
            "seed": self.config.seed,
            "versions": {
                "predrec": __version__,
                "numpy": np.__version__,
                "python": platform.python_version(),
            },
            "wall_time_s": time.perf_counter() - self.started,
        }
        manifest.update(extra_manifest or {})
        _dump(self.dir / "manifest.json", manifest)
        _dump(self.dir / "results.json", results)
        return results


def _median_by(rows, key, fields):
    out = {}
    for k in sorted({r[key] for r in rows}):
        sel = [r for r in rows if r[key] == k]
        out[k] = {f: float(np.median([r[f] for r in sel])) for f in fields}
    return out


# ---------------------------------------------------------------------------
# Example 1: Gaussian location mixtures with d = 1, 2
# ---------------------------------------------------------------------------

def example1_setup(d, sigma2=0.5):
    kernel = GaussianIsoKernel(sigma2, d)
    params = [(10, 5, 0, 10), (5, 10, 0, 10)][:d]
    truth = ScaledBetaProduct(params)
    p0 = UniformBox([(0.0, 10.0)] * d)
    return kernel, truth, p0


def _fit_example1(data, kernel, p0, T, seed, schedule, n_perms, perm_seed):
    start = init_particles(p0, T, seed, kernel.coord_names)
    if n_perms == 1:
        state, _ = run_prticle(data, start, schedule, kernel)
    else:
        state = permutation_average(data, start, schedule, kernel, n_perms, perm_seed)
    return state


def _quadrature_fit(data, grid, schedule, kernel, n_perms, perm_seed):
    from .core import permute_dataset

    if n_perms == 1:
        return run_pr_quadrature(data, grid, schedule, kernel)[0]
    total = np.zeros_like(grid.values)
    for k in range(n_perms):
        total += run_pr_quadrature(permute_dataset(data, perm_seed + k), grid, schedule, kernel)[0].values
    return grid.with_values(total / n_perms)


def run_example1(config: ExperimentConfig) -> dict:
    """ESS and KL(m_n, m_hat_n) table for the d = 1 or d = 2 Gaussian mixture."""
    if config.experiment not in ("example1-d1", "example1-d2"):
        raise ConfigError("run_example1 needs experiment example1-d1 or example1-d2")
    d = 1 if config.experiment == "example1-d1" else 2
    out = _Output(config)
    kernel, truth, p0 = example1_setup(d, config.sigma2)
    schedule = WeightSchedule(config.gamma)
    rows = []
    curves = None
    for s in range(config.seed, config.seed + config.n_seeds):
        data = sample_mixture_data(truth, kernel, config.n, rng_stream(s, DATA_STREAM))
        grid = _quadrature_fit(data, make_grid([(0.0, 10.0)] * d), schedule, kernel,
                               config.n_perms, s)
        if d == 1:
            xs = np.linspace(-4.0, 14.0, 2000)
            xw = trapezoid_weights(xs)
            m_ref = mixture_density_quadrature(xs[:, None], grid, kernel)
        reference = grid_mixture_estimate(grid, kernel)
        for T in config.T_list:
            state = _fit_example1(data, kernel, p0, T, s, schedule, config.n_perms, s)
            if d == 1:
                m_hat = mixture_density_particle(xs[:, None], state, kernel)
                kl, se, method = kl_divergence_quadrature(m_ref, m_hat, xw), 0.0, "quadrature"
                if s == config.seed and T == max(config.T_list):
                    curves = np.column_stack([xs, m_ref, m_hat])
            else:
                res = kl_divergence_mc(reference, particle_mixture_estimate(state, kernel),
                                       n_mc=config.n_mc, rng=rng_stream(s * 100003 + T, KL_STREAM))
                kl, se, method = res.value, res.std_error, "monte-carlo"
            rows.append({"seed": s, "T": T, "ess": ess(state), "ess_over_T": ess(state) / T,
                         "kl": kl, "kl_se": se, "kl_method": method})
    summary = _median_by(rows, "T", ["ess", "ess_over_T", "kl"])
    out.table(f"table1_d{d}.csv", ["seed", "T", "ess", "ess_over_T", "kl", "kl_se"],
              [[r["seed"], r["T"], r["ess"], r["ess_over_T"], r["kl"], r["kl_se"]] for r in rows])
    out.table(f"table1_d{d}_median.csv", ["T", "ess", "ess_over_T", "kl"],
              [[T, v["ess"], v["ess_over_T"], v["kl"]] for T, v in summary.items()])
    if curves is not None:
        out.table("mixture_density_d1.csv", ["x", "m_quadrature", "m_particle"], curves)
    results = {"experiment": config.experiment, "d": d, "rows": rows,
               "median_by_T": {str(k): v for k, v in summary.items()}}
    return out.finish(results)


# ---------------------------------------------------------------------------
# Example 2: angular Gaussian mixtures on the sphere
# ---------------------------------------------------------------------------

def sphere_mesh(n_theta, n_phi):
    """Cell-centred latitude-longitude mesh with exact cell areas."""
    g = make_sphere_grid(n_theta, n_phi)
    theta, phi = g.axes
    T, P = np.meshgrid(theta, phi, indexing="ij")
    return g.points, g.cell_weights, T.ravel(), P.ravel()


def run_example2(config: ExperimentConfig) -> dict:
    """Fit over (direction, concentration) and tabulate the mixture on a mesh."""
    if config.experiment != "example2-sphere":
        raise ConfigError("run_example2 needs experiment example2-sphere")
    out = _Output(config)
    s = config.seed
    schedule = WeightSchedule(config.gamma)
    truth = AngularMixtureDirections(SPHERE_CENTERS, config.true_concentration, config.true_beta)
    kernel = AngularGaussianKernel()
    data = sample_mixture_data(truth, kernel, config.n, rng_stream(s, DATA_STREAM))
    p0 = SphereTimesUniform(tuple(config.beta_bounds))
    diagnostics = {}
    if config.refresh:
        state, diag = run_with_refresh(data, p0, config.T, schedule, kernel, config.df,
                                       config.inflate, s, config.rounds)
        diagnostics = diag.as_dict()
    else:
        start = init_particles(p0, config.T, s, kernel.coord_names)
        state, _ = run_prticle(data, start, schedule, kernel)
    points, area, theta, phi = sphere_mesh(*config.mesh)
    m_hat = mixture_density_particle(points, state, kernel)

    # grid recursion over directions with the concentration held at its true value
    fixed = AngularGaussianKernel(config.true_beta)
    ref_grid, _ = run_pr_quadrature(data, make_sphere_grid(60, 120), schedule, fixed)
    m_ref = mixture_density_quadrature(points, ref_grid, fixed)

    header = ["theta", "phi", "x", "y", "z", "density"]
    north = points[:, 2] >= 0
    for name, dens in (("particle", m_hat), ("grid_fixed_beta", m_ref)):
        rows = np.column_stack([theta, phi, points, dens])
        out.table(f"sphere_{name}_north.csv", header, rows[north])
        out.table(f"sphere_{name}_south.csv", header, rows[~north])
    if out.dir is not None:
        state.to_csv(out.dir / "particles.csv")
    results = {
        "experiment": config.experiment,
        "T": config.T,
        "n": config.n,
        "ess": ess(state),
        "mesh_integral_particle": float(np.sum(m_hat * area)),
        "mesh_integral_grid": float(np.sum(m_ref * area)),
        "l1_particle_vs_grid": float(np.sum(np.abs(m_hat - m_ref) * area)),
        "refresh": diagnostics,
    }
    return out.finish(results)


# ---------------------------------------------------------------------------
# Example 3: five-dimensional mixing over bivariate normal parameters
# ---------------------------------------------------------------------------

QUANTILE_LEVELS = np.linspace(0.1, 0.9, 9)


def run_example3(config: ExperimentConfig) -> dict:
    """Refreshed particle fit over (mu1, mu2, var1, var2, rho)."""
    if config.experiment != "example3-5dim":
        raise ConfigError("run_example3 needs experiment example3-5dim")
    out = _Output(config)
    kernel = BivariateGaussianKernel()
    truth = Example3Truth()
    schedule = WeightSchedule(config.gamma)
    p0 = UniformBox(EXAMPLE3_BOX)
    rows, qrows = [], []
    true_q = truth.marginal_ppf(QUANTILE_LEVELS)
    contour = None
    for s in range(config.seed, config.seed + config.n_seeds):
        data = sample_mixture_data(truth, kernel, config.n, rng_stream(s, DATA_STREAM))
        state, diag = run_with_refresh(data, p0, config.T, schedule, kernel, config.df,
                                       config.inflate, s, config.rounds)
        Z = sample_mixture_data(truth, kernel, config.n_mc, rng_stream(s, KL_STREAM)).values
        ref_vals = truth.mixture_pdf(Z, rng_stream(s, TRUTH_STREAM), n_inner=1000)
        reference = DensityEstimate("truth", lambda X, v=ref_vals: v)
        kl = kl_divergence_mc(reference, particle_mixture_estimate(state, kernel), Z, name="kl_refreshed")
        kl1 = kl_divergence_mc(reference, particle_mixture_estimate(diag.pass1, kernel), Z,
                               name="kl_pass1")
        est_q = np.column_stack([weighted_quantiles(state.particles[:, j], state.deltas, QUANTILE_LEVELS)
                                 for j in range(5)])
        for qi, q in enumerate(QUANTILE_LEVELS):
            qrows.append([s, q] + list(true_q[qi]) + list(est_q[qi]))
        rows.append({"seed": s, "ess_pass1": diag.ess_pass1, "ess_pass2": diag.ess_pass2,
                     "kl": kl.value, "kl_se": kl.std_error, "kl_pass1": kl1.value,
                     "flagged_points": kl.flagged_points,
                     "mu1_median_quantile_error": float(np.median(np.abs(est_q[:, 0] - true_q[:, 0]))),
                     "mu1_max_quantile_error": float(np.max(np.abs(est_q[:, 0] - true_q[:, 0])))})
        if s == config.seed:
            a1 = np.linspace(*EXAMPLE3_XBOX[0], 100)
            a2 = np.linspace(*EXAMPLE3_XBOX[1], 100)
            X = np.column_stack([m.ravel() for m in np.meshgrid(a1, a2, indexing="ij")])
            contour = np.column_stack([
                X,
                mixture_density_particle(X, state, kernel),
                mixture_density_particle(X, diag.pass1, kernel),
                truth.mixture_pdf(X, rng_stream(s, TRUTH_STREAM), n_inner=1000),
            ])
            if out.dir is not None:
                state.to_csv(out.dir / "particles.csv")
                write_table(out.dir / "data.csv", ["x1", "x2"], data.values)
    names = list(kernel.coord_names)
    out.table("ess_kl.csv", ["seed", "ess_pass1", "ess_pass2", "kl", "kl_se", "kl_pass1"],
              [[r[k] for k in ("seed", "ess_pass1", "ess_pass2", "kl", "kl_se", "kl_pass1")]
               for r in rows])
    out.table("quantiles.csv", ["seed", "level"] + [f"true_{n}" for n in names]
              + [f"fit_{n}" for n in names], qrows)
    if contour is not None:
        out.table("mixture_contour.csv", ["x1", "x2", "m_refreshed", "m_pass1", "m_true"], contour)
    results = {
        "experiment": config.experiment,
        "T": config.T,
        "rows": rows,
        "median_ess_pass1": float(np.median([r["ess_pass1"] for r in rows])),
        "median_ess_pass2": float(np.median([r["ess_pass2"] for r in rows])),
        "median_kl": float(np.median([r["kl"] for r in rows])),
        "median_kl_pass1": float(np.median([r["kl_pass1"] for r in rows])),
    }
    return out.finish(results, {"p0_box": EXAMPLE3_BOX})


# ---------------------------------------------------------------------------
# convergence of the particle approximation to the grid recursion
# ---------------------------------------------------------------------------

def run_convergence_study(config: ExperimentConfig) -> dict:
    """Median L1 between particle and grid mixing densities along a T ladder."""
    if config.experiment != "convergence-study":
        raise ConfigError("run_convergence_study needs experiment convergence-study")
    out = _Output(config)
    kernel, truth, p0 = example1_setup(1, config.sigma2)
    schedule = WeightSchedule(config.gamma)
    data = sample_mixture_data(truth, kernel, config.n, rng_stream(config.seed, DATA_STREAM))
    grid, _ = run_pr_quadrature(data, make_grid([(0.0, 10.0)], 2000), schedule, kernel)
    rows = []
    for T in config.T_list:
        for j in range(config.n_seeds):
            pseed = config.seed + 1 + j
            start = init_particles(p0, T, pseed, kernel.coord_names)
            state, m_hats = run_prticle(data, start, schedule, kernel)
            kde = weighted_kde(state, silverman_bandwidth(state), grid.points)
            plug = plugin_mixing_density(grid.points, data, m_hats, p0.pdf, kernel, schedule)
            rows.append({"T": T, "particle_seed": pseed,
                         "l1_kde": l1_distance(kde, grid.values, grid),
                         "l1_plugin": l1_distance(plug, grid.values, grid),
                         "ess": ess(state)})
    summary = _median_by(rows, "T", ["l1_kde", "l1_plugin", "ess"])
    out.table("l1_by_seed.csv", ["T", "particle_seed", "l1_kde", "l1_plugin", "ess"],
              [[r["T"], r["particle_seed"], r["l1_kde"], r["l1_plugin"], r["ess"]] for r in rows])
    out.table("l1_median.csv", ["T", "l1_kde", "l1_plugin", "ess"],
              [[T, v["l1_kde"], v["l1_plugin"], v["ess"]] for T, v in summary.items()])
    results = {"experiment": config.experiment, "rows": rows,
               "median_by_T": {str(k): v for k, v in summary.items()}}
    return out.finish(results)


# ---------------------------------------------------------------------------
# marked point process
# ---------------------------------------------------------------------------

_MARK_ALIASES = ("diameter", "marks", "mark", "dbh")


def read_longleaf(path):
    """Parse a longleaf-format CSV (header ``x,y,diameter``).

    Returns the dataset and a report of rejected rows.  Rows with a diameter
    of at most 2 or a location outside the open window are dropped and
    counted; unparseable rows raise :class:`DataError` listing line numbers.
    """
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as err:
        raise DataError(f"cannot open {path}: {err}") from err
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().strip('"').lower() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        cols = {}
        for want, names in (("x", ("x",)), ("y", ("y",)), ("d", _MARK_ALIASES)):
            hit = [i for i, h in enumerate(header) if h in names]
            if not hit:
                raise DataError(f"{path}: missing column {names[0]!r} (header {header})")
            cols[want] = hit[0]
        rows, bad = [], []
        small = outside = 0
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                x, y, d = (float(rec[cols[k]]) for k in ("x", "y", "d"))
            except (ValueError, IndexError):
                bad.append(lineno)
                continue
            if not (np.isfinite(x) and np.isfinite(y) and np.isfinite(d)):
                bad.append(lineno)
            elif not d > 2.0:
                small += 1
            elif not (0 < x < 200 and 0 < y < 200):
                outside += 1
            else:
                rows.append((x, y, d))
    if bad:
        raise DataError(f"{path}: unparseable rows at lines {bad}")
    data = Dataset(np.array(rows, dtype=float).reshape(-1, 3), kind=MARKED)
    report = {"accepted": data.n, "rejected_small_diameter": small, "rejected_outside_window": outside}
    return data, report


def ingest_longleaf(path) -> Dataset:
    return read_longleaf(path)[0]


def synthetic_longleaf(seed=0, n=584) -> Dataset:
    """A longleaf-format stand-in: scattered large trees plus clusters of
    small ones.  Used when the real data file is not available."""
    rng = rng_stream(seed, DATA_STREAM)
    n_mature = int(round(0.4 * n))
    mature = np.column_stack([
        rng.uniform(5, 195, (n_mature, 2)),
        2 + np.exp(rng.normal(np.log(33.0), 0.35, n_mature)),
    ])
    centers = np.array([(105.0, 140.0), (185.0, 87.0), (40.0, 40.0), (150.0, 25.0), (30.0, 170.0)])
    n_young = n - n_mature
    c = centers[rng.integers(0, len(centers), n_young)]
    young = np.column_stack([
        np.clip(c + rng.normal(0, 10.0, (n_young, 2)), 1.0, 199.0),
        2 + np.exp(rng.normal(np.log(7.0), 0.6, n_young)),
    ])
    rows = np.vstack([mature, young])
    return Dataset(rows[rng.permutation(n)], kind=MARKED)


def write_longleaf(path, data: Dataset):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "diameter"])
        for x, y, d in data.values:
            w.writerow([repr(float(x)), repr(float(y)), repr(float(d))])


def _mass_above(density, grid, threshold=30.0):
    cell = trapezoid_weights(grid)
    return float(np.sum((density * cell)[grid > threshold]))


def fit_marked_pp(data, variant, config: ExperimentConfig):
    reduced = variant == "reduced"
    kernel = MarkedPPKernel(reduced)
    prior = MarkedPPPrior(reduced=reduced)
    schedule = WeightSchedule(config.gamma)
    if config.refresh and config.rounds > 0:
        state, diag = run_with_refresh(data, prior, config.T, schedule, kernel, config.df,
                                       config.inflate, config.seed, config.rounds)
        info = diag.as_dict()
    else:
        start = init_particles(prior, config.T, config.seed, kernel.coord_names)
        state, _ = run_prticle(data, start, schedule, kernel)
        info = {"ess_pass1": ess(state)}
    return state, kernel, info


def run_marked_pp(config: ExperimentConfig) -> dict:
    """Fit the marked point process mixture and tabulate conditional mark
    densities at the reporting locations."""
    if config.experiment != "marked-pp":
        raise ConfigError("run_marked_pp needs experiment marked-pp")
    out = _Output(config)
    if config.data_path is not None:
        data, report = read_longleaf(config.data_path)
        source = str(config.data_path)
    else:
        data = synthetic_longleaf(config.seed, config.n)
        report = {"accepted": data.n, "rejected_small_diameter": 0, "rejected_outside_window": 0}
        source = "synthetic"
    variants = ("full", "reduced") if config.variant == "both" else (config.variant,)
    fits = {}
    for variant in variants:
        state, kernel, info = fit_marked_pp(data, variant, config)
        per_loc = {}
        for s in MARK_LOCATIONS:
            g = conditional_mark_density(s, MARK_GRID, state, kernel)
            try:
                emp = empirical_mark_density(data, s, 30.0, None, MARK_GRID)
            except ValueError:
                emp = np.full_like(MARK_GRID, np.nan)
            tag = f"{int(s[0])}_{int(s[1])}"
            out.table(f"conditional_{variant}_{tag}.csv", ["mark", "conditional", "empirical"],
                      np.column_stack([MARK_GRID, g, emp]))
            per_loc[tag] = {
                "integral": float(np.sum(g * trapezoid_weights(MARK_GRID))),
                "mass_above_30": _mass_above(g, MARK_GRID),
                "empirical_mass_above_30": _mass_above(emp, MARK_GRID) if np.all(np.isfinite(emp)) else None,
                "neighbours_within_30": int(neighbours(data, s, 30.0).sum()),
                "total_variation": total_variation(g),
            }
        fits[variant] = {"fit": info, "locations": per_loc}
    results = {
        "experiment": config.experiment,
        "data_source": source,
        "ingest": report,
        "n": data.n,
        "intensity_total_estimate": data.n,
        "T": config.T,
        "fits": fits,
    }
    prior = MarkedPPPrior()
    manifest = {"p0": {"mean_bounds": prior.mean_bounds, "logvar_bounds": prior.logvar_bounds,
                       "corr_bounds": prior.corr_bounds, "reduced_corr": 0.0},
                "data_source": source}
    return out.finish(results, manifest)


RUNNERS = {
    "example1-d1": run_example1,
    "example1-d2": run_example1,
    "example2-sphere": run_example2,
    "example3-5dim": run_example3,
    "convergence-study": run_convergence_study,
    "marked-pp": run_marked_pp,
}


def run(config: ExperimentConfig) -> dict:
    return RUNNERS[config.experiment](config)
