"""Experiment runners.

Each runner takes a resolved :class:`ExperimentConfig` and returns CSV
tables, a JSON summary, pass/fail checks and derived quantities.
:func:`run_experiment` writes them to the output directory together with the
resolved config and a manifest holding content hashes.
"""

import hashlib
import io
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import __version__
from ..chain import (
    GaussianState,
    approx_propagator,
    evolve,
    exact_propagator,
    kernel_completeness,
)
from ..decoherence import (
    DEFAULT_TOLERANCE,
    default_k_grid,
    peaking_ratio,
    smallk_asymptote,
)
from ..densities import (
    correlation_profile,
    conservation_residual,
    number_variance_split,
    real_space_fields,
    spectral_moment,
)
from ..hydro import (
    SCHEME,
    Floors,
    HydroError,
    HydroFields,
    build_local_equilibrium,
    extract_fields,
    hydro_evolve,
    momentum_floor,
)
from .config import ConfigError, ExperimentConfig, build_grid, chain_from_block
from .oracles import make_rng

logger = logging.getLogger(__name__)

__all__ = ["EXPERIMENTS", "Check", "RunManifest", "run_experiment", "build_state",
           "perturbed_fields", "crossover_wavenumber"]


@dataclass
class Check:
    name: str
    passed: bool
    value: object = None
    bound: object = None
    detail: str = ""


@dataclass
class RunManifest:
    config: dict
    version: str
    wall_time: float
    checks: list
    derived: dict
    files: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(c["passed"] for c in self.checks)

    def to_json(self):
        return json.dumps(_jsonable(asdict(self)), sort_keys=True, indent=2)


@dataclass
class _Result:
    tables: dict  # name -> (header, rows)
    summary: dict
    checks: list
    derived: dict
    extra: dict = field(default_factory=dict)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _csv_text(header, rows):
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


# ------------------------------------------------------------------ helpers


def _relaxation_time(params):
    return 1.0 / (params.gamma * params.omega) if params.coupling > 0 else math.inf


def _time_grid(config, params, default=None):
    spec = config.grids.get("t", default)
    units = spec.get("units", "absolute") if isinstance(spec, dict) else "absolute"
    scale = {
        "absolute": 1.0,
        "relaxation": _relaxation_time(params),
        "period": 2 * math.pi / params.omega,
    }.get(units)
    if scale is None:
        raise ConfigError(f"unknown time units {units!r}")
    if not math.isfinite(scale):
        raise ConfigError("relaxation time units need nu^2 > 0")
    return build_grid(spec, scale), scale


def _derived(params):
    return {
        "omega": params.omega,
        "gamma": params.gamma,
        "relaxation_time": _relaxation_time(params),
    }


def _per_site(value, n, what):
    if isinstance(value, (list, tuple)):
        arr = np.array(value, dtype=float)
        if arr.size != n:
            raise ConfigError(f"{what} needs {n} entries")
        return arr
    return np.full(n, float(value))


def build_state(config, params):
    """Initial product Gaussian state from a ``product-gaussian`` state block.

    Keys: ``q_mean`` ("fixed-point", number or list), ``q_shift``, ``p_mean``,
    ``q_var``/``p_var`` (numbers or lists), ``units`` ("ground" measures the
    variances in units of the single-site ground state 1/(2 m Omega) and
    m Omega / 2; "absolute" otherwise), and ``q_var_jitter``/``p_var_jitter``,
    relative half-widths of per-site uniform disorder drawn from the run seed.
    """
    block = config.state
    if block.get("kind", "product-gaussian") != "product-gaussian":
        raise ConfigError("this experiment needs a product-gaussian state")
    n = params.n_particles
    qm = block.get("q_mean", "fixed-point")
    q_mean = params.fixed_point.copy() if qm == "fixed-point" else _per_site(qm, n, "q_mean")
    q_mean = q_mean + float(block.get("q_shift", 0.0))
    p_mean = _per_site(block.get("p_mean", 0.0), n, "p_mean")
    units = block.get("units", "ground")
    if units == "ground":
        q_unit = 1.0 / (2 * params.mass * params.omega)
        p_unit = params.mass * params.omega / 2
    elif units == "absolute":
        q_unit = p_unit = 1.0
    else:
        raise ConfigError(f"unknown variance units {units!r}")
    q_var = _per_site(block.get("q_var", 1.0), n, "q_var") * q_unit
    p_var = _per_site(block.get("p_var", 1.0), n, "p_var") * p_unit
    rng = make_rng(config.seed)
    jq = float(block.get("q_var_jitter", 0.0))
    jp = float(block.get("p_var_jitter", 0.0))
    if not (0 <= jq < 1 and 0 <= jp < 1):
        raise ConfigError("variance jitter must lie in [0, 1)")
    q_var = q_var * rng.uniform(1 - jq, 1 + jq, n)
    p_var = p_var * rng.uniform(1 - jp, 1 + jp, n)
    return GaussianState.product(q_mean, p_mean, q_var, p_var)


def perturbed_fields(x, params, theta0, density=0.0, velocity=0.0, temperature=0.0):
    """Trap equilibrium with smooth bumps in f, v and theta.

    With sigma = sqrt(theta0 / K):
    f = exp(-x^2 / 2 sigma^2) (1 + a_f exp(-(x - sigma)^2 / (2 (sigma / 2)^2))),
    v = a_v sqrt(theta0 / m) exp(-x^2 / 2 sigma^2) and
    theta = theta0 (1 + a_theta tanh(x / sigma)). f is normalised on the grid.
    """
    sig = math.sqrt(theta0 / params.binding)
    f = np.exp(-0.5 * x * x / sig ** 2)
    f = f * (1 + density * np.exp(-0.5 * (x - sig) ** 2 / (0.5 * sig) ** 2))
    f = f / (np.sum(f) * (x[1] - x[0]))
    v = velocity * math.sqrt(theta0 / params.mass) * np.exp(-0.5 * x * x / sig ** 2)
    th = theta0 * (1 + temperature * np.tanh(x / sig))
    return f, v, th


def crossover_wavenumber(k_grid, ratio, level=1.0):
    """First k where |ratio| crosses ``level`` (log-linear interpolation), else NaN."""
    k_grid = np.asarray(k_grid, dtype=float)
    mag = np.abs(np.asarray(ratio, dtype=float))
    side = mag >= level
    for i in range(1, len(k_grid)):
        if side[i] != side[i - 1] and k_grid[i - 1] > 0:
            a, b = mag[i - 1], mag[i]
            w = (level - a) / (b - a)
            lk = math.log(k_grid[i - 1]) + w * (math.log(k_grid[i]) - math.log(k_grid[i - 1]))
            return math.exp(lk)
    return math.nan


# --------------------------------------------------------------- experiments


def _decoherence_scan(config):
    params = config.params()
    state0 = build_state(config, params)
    times, _ = _time_grid(config, params, default=[0.0])
    opts, tol = config.options, config.tolerances
    kinds = tuple(opts.get("kinds", ["number"]))
    tolerance = float(tol.get("peaking", DEFAULT_TOLERANCE))
    if "k" in config.grids:
        k_spec = config.grids["k"]
        scale = 1.0
        if isinstance(k_spec, dict) and k_spec.get("units") == "inverse-width":
            scale = 1.0 / float(np.mean(np.sqrt(state0.q_var)))
        k_grid = build_grid(k_spec, scale)
    else:
        k_grid = default_k_grid(state0)
    if np.any(np.diff(k_grid) <= 0) or k_grid[0] < 0:
        raise ConfigError("k grid must be ascending and non-negative")

    moments, peaking = [], []
    k_star, corr_len, crossover, zero_ok, coherent_max = [], [], [], True, []
    kxi_max = float(tol.get("coherent_kxi", 0.1))
    for t in times:
        state = evolve(state0, exact_propagator(params, t))
        xi = correlation_profile(state)[1]
        corr_len.append(xi)
        worst = np.zeros(k_grid.size)
        for which in kinds:
            for ik, k in enumerate(k_grid):
                mom = spectral_moment(state, k, which, params)
                r = peaking_ratio(mom)
                moments.append((t, k, which, mom.mean.real, mom.mean.imag, mom.variance))
                peaking.append((t, k, which, r, smallk_asymptote(state, k)))
                worst[ik] = max(worst[ik], r)
                if k == 0 and r != 0:
                    zero_ok = False
        ok = worst <= tolerance
        last = len(k_grid) - 1 if ok.all() else int(np.argmin(ok)) - 1
        k_star.append(float(k_grid[last]) if last >= 0 else 0.0)
        split = [number_variance_split(state, k) for k in k_grid]
        ratio = [c / d if d > 0 else 0.0 for d, c in split]
        crossover.append(crossover_wavenumber(k_grid, ratio))
        coh = worst[k_grid * xi <= kxi_max]
        coherent_max.append(float(coh.max()) if coh.size else math.nan)

    checks = []
    if np.any(k_grid == 0):
        checks.append(asdict(Check("peaking_zero_at_k0", zero_ok, 0.0 if zero_ok else None, 0.0)))
    if opts.get("crossover", False):
        factor = float(tol.get("crossover_factor", 3.0))
        prod = [kx * xi for kx, xi in zip(crossover, corr_len)]
        good = all(math.isfinite(p) and 1 / factor <= p <= factor for p in prod)
        checks.append(asdict(Check("crossover_tracks_corr_length", good, prod,
                                   [1 / factor, factor], "k_cross * corr_length per time")))
        bound = float(tol.get("coherent_bound", 0.05))
        good = all(math.isfinite(c) and c < bound for c in coherent_max)
        checks.append(asdict(Check("coherent_regime_peaked", good, coherent_max, bound,
                                   f"max R over k * corr_length <= {kxi_max}")))
    summary = {
        "tolerance": tolerance,
        "times": times,
        "k_star_per_time": k_star,
        "corr_length_per_time": corr_len,
        "crossover_k_per_time": crossover,
        "coherent_max_R_per_time": coherent_max,
    }
    derived = _derived(params)
    derived.update({"corr_length": corr_len[-1], "k_star": k_star[-1]})
    tables = {
        "moments.csv": (("t", "k", "which", "mean_re", "mean_im", "variance"), moments),
        "peaking.csv": (("t", "k", "which", "R", "R_smallk"), peaking),
    }
    return _Result(tables, summary, checks, derived)


def _thermalization(config):
    params = config.params()
    state0 = build_state(config, params)
    times, _ = _time_grid(config, params)
    opts, tol = config.options, config.tolerances
    samples = int(opts.get("period_samples", 8))
    edge = float(opts.get("interior_fraction", 0.0 if params.periodic else 0.1))
    profile_every = int(opts.get("profile_every", 10))
    flat_tol = float(tol.get("flatness", 0.1))
    n = params.n_particles
    cut = int(round(edge * n))
    interior = slice(cut, n - cut)
    period = 2 * math.pi / params.omega
    relax = _relaxation_time(params)

    rows, prof_rows = [], []
    spread, peak_series = [], []
    for it, t in enumerate(times):
        # average the fast 2 Omega breathing over one bare period
        pv = np.mean([
            evolve(state0, exact_propagator(params, t + period * a / samples)).p_var
            for a in range(samples)
        ], axis=0)[interior]
        state = evolve(state0, exact_propagator(params, t))
        prof, xi = correlation_profile(state)
        cv = float(np.std(pv) / np.mean(pv))
        peak = float(np.max(np.abs(prof[1:]))) if prof.size > 1 else 0.0
        spread.append(cv)
        peak_series.append(peak)
        rows.append((t, t / relax, float(np.mean(pv)), cv, peak, xi))
        if it % profile_every == 0 or it == len(times) - 1:
            prof_rows.extend((t, r, v) for r, v in enumerate(prof))

    below = [i for i, c in enumerate(spread) if c < flat_tol]
    t_eq = times[below[0]] / relax if below else math.nan
    lo, hi = tol.get("equilibration_window", [0.3, 10.0])
    ipk = int(np.argmax(peak_series))
    rise = peak_series[ipk] > peak_series[0]
    decay = ipk < len(peak_series) - 1 and peak_series[-1] < peak_series[ipk]
    checks = [
        asdict(Check("equilibration_time", math.isfinite(t_eq) and lo <= t_eq <= hi, t_eq,
                     [lo, hi], "first t (units of 1/(gamma Omega)) with spread < "
                     f"{flat_tol}")),
        asdict(Check("correlations_rise_then_decay", bool(rise and decay),
                     {"initial": peak_series[0], "peak": peak_series[ipk],
                      "peak_time": float(times[ipk] / relax), "final": peak_series[-1]}, None)),
    ]
    derived = _derived(params)
    derived.update({"equilibration_time": t_eq, "corr_length": rows[-1][5]})
    summary = {"equilibration_time": t_eq, "flatness_tolerance": flat_tol,
               "peak_correlation": peak_series[ipk], "peak_time": float(times[ipk] / relax)}
    tables = {
        "flatness.csv": (("t", "t_relax", "p_var_mean", "spread", "max_corr", "corr_length"),
                         rows),
        "profile.csv": (("t", "r", "profile"), prof_rows),
    }
    return _Result(tables, summary, checks, derived)


def _rel_l2(a, b, mask, norm=None):
    d = a[mask] - b[mask]
    ref = b[mask] if norm is None else np.full(d.shape, norm)
    den = float(np.sum(ref * ref))
    return float(np.sqrt(np.sum(d * d) / den)) if den > 0 else math.nan


def _hydro_compare(config):
    params = config.params()
    if np.any(params.centers != 0):
        raise ConfigError("hydro-compare needs b_j = 0")
    block, opts, tol = config.state, config.options, config.tolerances
    if block.get("kind") != "local-equilibrium":
        raise ConfigError("hydro-compare needs a local-equilibrium state")
    theta0 = float(block["theta0"])
    sig = math.sqrt(theta0 / params.binding)
    lo, hi, ncell = block.get("domain", [-7.5 * sig, 7.5 * sig, 400])
    ncell = int(ncell)
    dxh = (hi - lo) / ncell
    xh = lo + dxh * (np.arange(ncell) + 0.5)
    pert = block.get("perturbation", {})
    f, v, th = perturbed_fields(xh, params, theta0, float(pert.get("density", 0.0)),
                                float(pert.get("velocity", 0.0)),
                                float(pert.get("temperature", 0.0)))
    width = block.get("width", "ground")
    s = math.sqrt(1 / (2 * params.mass * params.omega)) if width == "ground" else float(width)
    state0 = build_local_equilibrium(HydroFields(xh, f, v, th), params, s)
    # the momentum floor is part of every local momentum variance
    th_floor = momentum_floor(s) / params.mass
    h0 = HydroFields(xh, f, v, th + th_floor)

    window = float(config.grids.get("window", 0.1))
    refine = int(math.ceil(dxh / (window / 2) - 1e-9))
    refine += refine % 2 == 0
    xf = lo + dxh / refine * (np.arange(ncell * refine) + 0.5)
    sub = np.arange(ncell) * refine + refine // 2

    times, _ = _time_grid(config, params)
    relax = _relaxation_time(params)
    cfl = float(opts.get("cfl", 0.4))
    floors = Floors(**opts.get("floors", {}))
    until = float(tol.get("compare_until", 1.0))
    bound = float(tol.get("closure", 0.1))
    mask_level = float(tol.get("mask", 0.05))
    vth = math.sqrt(theta0 / params.mass)

    t0 = time.perf_counter()
    failure = None
    hyd, cur = [], h0
    for t in times:
        # advance snapshot by snapshot so that a late failure keeps earlier output
        try:
            cur = hydro_evolve(cur, params, float(t) - cur.t, cfl=cfl, floors=floors)[-1]
        except HydroError as exc:
            failure = str(exc)
            logger.warning("hydro run failed: %s", exc)
            break
        hyd.append(cur)
    hydro_seconds = time.perf_counter() - t0

    micro_rows, hydro_rows, disc_rows = [], [], []
    worst = 0.0
    asserted_ok = True
    for it, t in enumerate(times):
        dens = real_space_fields(evolve(state0, exact_propagator(params, t)), xf, window,
                                 params=params)
        ext = extract_fields(dens, params, n_floor=mask_level * float(dens.n.max()))
        for i in sub:
            micro_rows.append((t, xf[i], dens.n[i], dens.g[i], dens.h[i], dens.tau[i],
                               dens.j[i], dens.T[i]))
        asserted = t <= until * relax * (1 + 1e-12)
        if it < len(hyd):
            h = hyd[it]
            hydro_rows.extend(zip([t] * ncell, xh, h.f, h.v, h.theta))
            mk = ext.mask[sub] & h.mask
            errs = (_rel_l2(ext.f[sub], h.f, mk), _rel_l2(ext.v[sub], h.v, mk, vth),
                    _rel_l2(ext.theta[sub], h.theta, mk))
        else:
            errs = (math.nan,) * 3
        disc_rows.append((t, t / relax) + errs + (asserted,))
        if asserted:
            m = max(errs)
            if not math.isfinite(m) or m > bound:
                asserted_ok = False
            worst = max(worst, m) if math.isfinite(m) else math.inf

    checks = [asdict(Check("closure_agreement", asserted_ok, worst, bound,
                           f"max relative L2 discrepancy for t <= {until} / (gamma Omega)"))]
    extra = {"hydro": {"scheme": SCHEME, "cfl": cfl, "dx": dxh, "domain": [lo, hi, ncell],
                       "floors": asdict(floors), "failure": failure,
                       "seconds": hydro_seconds}}
    summary = {"max_asserted_discrepancy": worst, "window": window, "mask_level": mask_level,
               "velocity_scale": vth, "theta_floor": th_floor, "hydro_failure": failure}
    derived = _derived(params)
    tables = {
        "micro_fields.csv": (("t", "x", "n", "g", "h", "tau", "j", "T"), micro_rows),
        "hydro_fields.csv": (("t", "x", "f", "v", "theta"), hydro_rows),
        "discrepancy.csv": (("t", "t_relax", "f", "v", "theta", "asserted"), disc_rows),
    }
    return _Result(tables, summary, checks, derived, extra)


def _bessel_accuracy(config):
    base = config.chain
    opts, tol = config.options, config.tolerances
    couplings = [float(c) for c in opts.get("couplings", [base["coupling"]])]
    pad = int(opts.get("r_pad", 25))
    t_stop = float(opts.get("t_stop", 5.0))
    t_points = int(opts.get("t_points", 41))
    rows, maxima, deficits = [], [], []
    n = base["n_particles"]
    for nu2 in couplings:
        params = chain_from_block(dict(base, coupling=nu2))
        relax = _relaxation_time(params)
        worst = 0.0
        for t in np.linspace(0.0, t_stop * relax, t_points):
            r_max = int(math.ceil(params.gamma * params.omega * t)) + pad
            ex = exact_propagator(params, t).matrix
            ap = approx_propagator(params, t, r_max).matrix
            err = float(np.max(np.abs(ex[:n] - ap[:n])))
            deficit = kernel_completeness(params, t, r_max)
            worst = max(worst, err)
            deficits.append(abs(deficit))
            rows.append((nu2, t, t / relax, r_max, err, deficit))
        maxima.append(worst)
    ratios = [a / b if b > 0 else math.inf for a, b in zip(maxima, maxima[1:])]
    need = float(tol.get("error_ratio", 2.0))
    comp = float(tol.get("completeness", 1e-8))
    checks = [
        asdict(Check("error_ratio", all(r >= need for r in ratios), ratios, need,
                     "max error ratio between successive couplings")),
        asdict(Check("kernel_completeness", max(deficits) <= comp, max(deficits), comp)),
    ]
    summary = {"couplings": couplings, "max_error": maxima, "ratios": ratios}
    derived = {"gamma": [c / (base["binding"] + 2 * c) for c in couplings]}
    tables = {"errors.csv": (("coupling", "t", "t_relax", "r_max", "max_error", "deficit"),
                             rows)}
    return _Result(tables, summary, checks, derived)


def _conservation_check(config):
    params = config.params()
    state0 = build_state(config, params)
    opts, tol = config.options, config.tolerances
    levels = int(opts.get("levels", 3))
    dt0 = float(opts.get("dt", 0.01)) / params.omega
    duration = float(opts.get("duration", 0.5))
    t_start = float(opts.get("t_start", 0.0))
    window = float(config.grids.get("window", 0.5))
    xlo, xhi = config.grids.get("x_range", [-5.0, 5.0])
    dx0 = float(opts.get("dx", window / 2))
    rows, number = [], []
    for lev in range(levels):
        dt, dx = dt0 / 2 ** lev, dx0 / 2 ** lev
        steps = int(round(duration / dt))
        grid = xlo + dx * np.arange(int(round((xhi - xlo) / dx)) + 1)
        states = [evolve(state0, exact_propagator(params, t_start + i * dt))
                  for i in range(steps + 1)]
        res = conservation_residual(states, dt, params, grid, window)
        for law in ("number", "momentum", "energy"):
            rows.append((lev, dt, dx, law, res[law]["abs"], res[law]["rel"]))
        number.append(res["number"]["abs"])
    orders = [math.log2(a / b) for a, b in zip(number, number[1:])]
    need = float(tol.get("min_order", 1.9))
    checks = [asdict(Check("number_residual_order", all(o >= need for o in orders), orders,
                           need))]
    summary = {"number_residuals": number, "orders": orders}
    tables = {"residuals.csv": (("level", "dt", "dx", "law", "abs", "rel"), rows)}
    return _Result(tables, summary, checks, _derived(params))


EXPERIMENTS = {
    "decoherence-scan": _decoherence_scan,
    "thermalization": _thermalization,
    "hydro-compare": _hydro_compare,
    "bessel-accuracy": _bessel_accuracy,
    "conservation-check": _conservation_check,
}


def _sha256(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def run_experiment(config, output_dir=None):
    """Run ``config`` and write its outputs; returns the :class:`RunManifest`.

    Files written: ``config.json`` (resolved config), one CSV per table,
    ``summary.json`` and ``manifest.json``. Everything except the manifest's
    wall time is a deterministic function of the config.
    """
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    if output_dir is not None:
        config = config.with_overrides(output_dir=output_dir)
    runner = EXPERIMENTS[config.experiment]
    start = time.perf_counter()
    result = runner(config)
    wall = time.perf_counter() - start

    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    texts = {"config.json": config.to_json() + "\n"}
    for name, (header, rows) in result.tables.items():
        texts[name] = _csv_text(header, rows)
    texts["summary.json"] = json.dumps(_jsonable(result.summary), sort_keys=True,
                                       indent=2) + "\n"
    hashes = {}
    for name, text in texts.items():
        with open(os.path.join(out, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        hashes[name] = _sha256(text)
    manifest = RunManifest(config.to_dict(), __version__, wall, result.checks,
                           result.derived, hashes, result.extra)
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(manifest.to_json() + "\n")
    return manifest
