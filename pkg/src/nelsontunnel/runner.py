"""Single runs, parameter sweeps, artifacts and plot-data files.

A run directory holds::

    config.cfg        echoed configuration (re-runnable as is)
    tau.txt           raw tunneling times of transmitted paths, one per line
    transmitted.tsv   per transmitted path: pid, lineage root, x0, weight, tau, final-crossing tau
    histogram.tsv     binned distribution used for the fit
    fit.json          Gamma fits (least squares and MLE)
    summary.json      run summary; bit-stable for a given config
    timing.json       wall-clock data (the only non-deterministic file)
    ERROR             present only when the run failed

Every file is written to a temporary name and renamed into place.
"""

import concurrent.futures
import json
import logging
import math
import os
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import stats
from .config import SimulationConfig
from .errors import ConfigurationError, FitError
from .paths import PathStatus, run_lockstep
from .scaling import DEFAULT_EPSILONS, epsilon_sweep

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "NELSONTUNNEL_OUTPUT_ROOT"
SWEEP_KINDS = ("width", "packet", "epsilon")
FIGURES = ("fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "fig10", "fig11")
UNITS = "# units: length 1/k0, time 1/k0^2 (m = hbar = 1)"


def default_output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


# file helpers

def _clean(obj):
    """JSON-safe copy with NaN/inf mapped to None and numpy scalars unwrapped."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _atomic_write(path, text):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path, obj):
    _atomic_write(path, json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _columns(header_lines, cols):
    lines = [h if h.startswith("#") else f"# {h}" for h in header_lines]
    if cols:
        for row in zip(*cols):
            lines.append(" ".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return repr(v) if math.isfinite(v) else "nan"


# single run

@dataclass
class RunResult:
    """In-memory outcome of one lockstep run."""

    config: SimulationConfig
    diagnostics: object
    times: np.ndarray
    crossing: np.ndarray
    roots: np.ndarray
    pids: np.ndarray
    x0: np.ndarray
    weights: np.ndarray
    counts: dict
    fractions: dict
    fit_ls: object = None
    fit_mle: object = None
    fit_errors: dict = field(default_factory=dict)
    histogram: object = None
    wall_clock: float = 0.0

    @property
    def estimator_times(self):
        return self.crossing if self.config.time_estimator == "final_crossing" else self.times

    @property
    def fit(self):
        return self.fit_mle if self.config.fit_method == "mle" else self.fit_ls


def _fits(times, config):
    """Histogram plus both fits; fit failures are recorded, not raised."""
    hist = fit_ls = fit_mle = None
    errors = {}
    t = times[times > 0]
    if t.size:
        hist = stats.build_histogram(t, config.bins or None)
        try:
            fit_ls = stats.fit_gamma_least_squares(hist, weighted=config.weighted_fit)
        except FitError as exc:
            errors["least_squares"] = str(exc)
    else:
        errors["least_squares"] = "no transmitted paths"
    try:
        fit_mle = stats.fit_gamma_mle(t)
    except FitError as exc:
        errors["mle"] = str(exc)
    return hist, fit_ls, fit_mle, errors


def simulate(config):
    """Run the lockstep engine and the statistics, without touching the disk."""
    t0 = time.perf_counter()
    ens, diag = run_lockstep(config)
    elapsed = time.perf_counter() - t0
    tr = ens.mask(PathStatus.TRANSMITTED)
    counts = {s.name.lower(): int(np.count_nonzero(ens.mask(s))) for s in PathStatus}
    fractions = {s.name.lower(): ens.weighted_fraction(s) for s in PathStatus}
    res = RunResult(
        config=config, diagnostics=diag,
        times=ens.view("tau")[tr].copy(), crossing=ens.view("tcross")[tr].copy(),
        roots=ens.view("root")[tr].copy(), pids=ens.view("pid")[tr].copy(),
        x0=ens.view("x0")[tr].copy(), weights=ens.view("weight")[tr].copy(),
        counts=counts, fractions=fractions, wall_clock=elapsed,
    )
    res.histogram, res.fit_ls, res.fit_mle, res.fit_errors = _fits(res.estimator_times, config)
    return res


def pipeline_times(config):
    """``(times, fit)`` for one config; the hook used by epsilon sweeps."""
    res = simulate(config)
    return res.estimator_times, res.fit


@dataclass
class RunSummary:
    config: dict
    counts: dict
    fractions: dict
    transmission_pde: float
    n_transmitted: int
    mean: float
    deviation: float
    fit_least_squares: dict
    fit_mle: dict
    fit_errors: dict
    tau_wkb: float
    kappa_d: float
    kappa2_beta: float
    crossing_mean: float
    crossing_deviation: float
    front_shift: float
    histogram_bins: int
    diagnostics: dict
    frames: dict
    wall_clock: float = 0.0

    def to_dict(self, timing=False):
        out = asdict(self)
        if not timing:
            out.pop("wall_clock")
        return out


def summarize(res):
    c = res.config
    t = res.estimator_times
    mean, dev = stats.moments(t) if t.size >= 2 else (float("nan"), float("nan"))
    cm, cd = stats.moments(res.crossing) if res.crossing.size >= 2 else (float("nan"), float("nan"))
    try:
        tau_wkb = stats.wkb_time(c.barrier(), c.e0)
    except ValueError:
        tau_wkb = float("nan")
    fit = res.fit
    return RunSummary(
        config={k: getattr(c, k) for k in c.__dataclass_fields__},
        counts=res.counts, fractions=res.fractions,
        transmission_pde=res.diagnostics.transmission_pde,
        n_transmitted=int(t.size), mean=mean, deviation=dev,
        fit_least_squares=res.fit_ls.to_dict() if res.fit_ls else None,
        fit_mle=res.fit_mle.to_dict() if res.fit_mle else None,
        fit_errors=res.fit_errors,
        tau_wkb=tau_wkb, kappa_d=c.kappa_d,
        kappa2_beta=fit.kappa2_beta(c.kappa) if fit else float("nan"),
        crossing_mean=cm, crossing_deviation=cd,
        front_shift=float((res.x0.mean() - c.x_mean) / c.delta_x) if res.x0.size else float("nan"),
        histogram_bins=len(res.histogram.counts) if res.histogram else 0,
        diagnostics=res.diagnostics.to_dict(),
        frames={"epsilon": c.epsilon, "geometry_scale": c.geometry_scale,
                "d_scaled_frame": c.d, "d_base_frame": c.d * c.epsilon,
                "delta_x_base_frame": c.delta_x / c.geometry_scale,
                "p_mean": c.p_mean, "e0": c.e0, "v0": c.v0, "m": c.m},
        wall_clock=res.wall_clock,
    )


def write_artifacts(res, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    c = res.config
    _atomic_write(out / "tau.txt", "".join(f"{v!r}\n" for v in map(float, res.estimator_times)))
    _atomic_write(out / "transmitted.tsv", _columns(
        [f"transmitted paths; tau estimator: {c.time_estimator}", UNITS,
         "pid root x0 weight tau tau_final_crossing"],
        [res.pids, res.roots, res.x0, res.weights, res.times, res.crossing]))
    h = res.histogram
    if h is not None:
        _atomic_write(out / "histogram.tsv", _columns(
            [f"n_transmitted {h.n_transmitted} bin_width {h.bin_width!r}", UNITS,
             "tau_lo tau_hi count density(per transmitted path)"],
            [h.edges[:-1], h.edges[1:], h.counts, h.density()]))
    _write_json(out / "fit.json", {
        "least_squares": res.fit_ls.to_dict() if res.fit_ls else None,
        "mle": res.fit_mle.to_dict() if res.fit_mle else None,
        "errors": res.fit_errors, "bins": len(h.counts) if h else 0,
    })
    summary = summarize(res)
    _write_json(out / "summary.json", summary.to_dict())
    _write_json(out / "timing.json", {"wall_clock_s": res.wall_clock,
                                      "finished": time.strftime("%Y-%m-%dT%H:%M:%S")})
    return summary


def run_single(config, out_dir=None):
    """Run one config and persist its artifacts; returns the :class:`RunSummary`.

    On failure an ``ERROR`` file describing it is left beside whatever was
    already written, and the exception propagates.
    """
    out = Path(out_dir or config.output_dir or default_output_root() / _run_name(config))
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "ERROR"
    if marker.exists():
        marker.unlink()
    config.save(out / "config.cfg")
    try:
        res = simulate(config)
        return write_artifacts(res, out)
    except Exception as exc:
        _atomic_write(marker, f"{type(exc).__name__}: {exc}\n\n{traceback.format_exc()}")
        raise


def _run_name(config):
    return f"run_d{config.d:g}_dx{config.delta_x:g}_seed{config.master_seed}"


# sweeps

SWEEP_COLUMNS = ("value", "kappa_d", "tau_wkb", "mean", "deviation", "alpha", "beta",
                 "kappa2_beta", "n_transmitted", "transmission", "transmission_pde",
                 "crossing_mean", "crossing_deviation")


@dataclass
class SweepRow:
    kind: str
    value: float
    kappa_d: float = float("nan")
    tau_wkb: float = float("nan")
    mean: float = float("nan")
    deviation: float = float("nan")
    alpha: float = float("nan")
    beta: float = float("nan")
    kappa2_beta: float = float("nan")
    n_transmitted: int = 0
    transmission: float = float("nan")
    transmission_pde: float = float("nan")
    crossing_mean: float = float("nan")
    crossing_deviation: float = float("nan")
    run_dir: str = ""
    error: str = ""


def sweep_config(kind, config, value):
    if kind == "width":
        return config.replace(d=float(value))
    if kind == "packet":
        return config.replace(delta_x=float(value))
    raise ConfigurationError(f"unknown sweep kind {kind!r}; choose from {SWEEP_KINDS}")


def _sweep_entry(kind, config, value, out_dir):
    row = SweepRow(kind, float(value), run_dir=str(out_dir))
    try:
        cfg = sweep_config(kind, config, value)
        s = run_single(cfg, out_dir)
    except Exception as exc:  # noqa: BLE001 - sweeps record failures and go on
        log.error("%s=%g failed: %s", kind, value, exc)
        row.error = f"{type(exc).__name__}: {exc}"
        return row
    fit = s.fit_mle if cfg.fit_method == "mle" else s.fit_least_squares
    row.kappa_d, row.tau_wkb = s.kappa_d, s.tau_wkb
    row.mean, row.deviation = s.mean, s.deviation
    if fit:
        row.alpha, row.beta, row.kappa2_beta = fit["alpha"], fit["beta"], s.kappa2_beta
    row.n_transmitted = s.n_transmitted
    row.transmission = s.fractions["transmitted"]
    row.transmission_pde = s.transmission_pde
    row.crossing_mean, row.crossing_deviation = s.crossing_mean, s.crossing_deviation
    return row


def run_sweep(kind, config, values, out_root=None, jobs=1):
    """One run per value; writes ``sweep.tsv`` under ``out_root`` and returns the rows.

    ``width`` varies the barrier width ``d``, ``packet`` the packet width
    ``delta_x`` and ``epsilon`` the Planck-constant scale.  A failed entry
    keeps its row with the error text.
    """
    values = list(values)
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    if kind not in SWEEP_KINDS:
        raise ConfigurationError(f"unknown sweep kind {kind!r}; choose from {SWEEP_KINDS}")
    root = Path(out_root or default_output_root() / f"sweep_{kind}")
    root.mkdir(parents=True, exist_ok=True)
    if kind == "epsilon":
        rows = _epsilon_rows(config, values, root)
    else:
        dirs = [root / f"{kind}_{float(v):g}" for v in values]
        if jobs > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
                rows = list(pool.map(_sweep_entry, [kind] * len(values), [config] * len(values),
                                     values, dirs))
        else:
            rows = [_sweep_entry(kind, config, v, d) for v, d in zip(values, dirs)]
    write_sweep_table(rows, root / "sweep.tsv", kind)
    return rows


def _epsilon_rows(config, values, root):
    def run(cfg):
        res = simulate(cfg)
        write_artifacts(res, _ensure(root / f"epsilon_{cfg.epsilon:g}", cfg))
        return res.estimator_times, res.fit

    rows = []
    for r in epsilon_sweep(config, values, run=run):
        # kappa_d here is the effective opacity kappa*d/eps of the scaled frame
        rows.append(SweepRow("epsilon", r.epsilon, kappa_d=r.kappa_d_scaled, tau_wkb=r.tau_wkb,
                             mean=r.mean, deviation=r.deviation, alpha=r.alpha, beta=r.beta,
                             n_transmitted=r.n_transmitted,
                             run_dir=str(root / f"epsilon_{r.epsilon:g}"), error=r.error))
    return rows


def _ensure(path, cfg):
    path.mkdir(parents=True, exist_ok=True)
    cfg.save(path / "config.cfg")
    return path


def write_sweep_table(rows, path, kind):
    head = [f"sweep over {kind}", UNITS, "columns: " + " ".join(SWEEP_COLUMNS) + " error"]
    lines = [f"# {h}" for h in head]
    for r in rows:
        vals = [getattr(r, c) for c in SWEEP_COLUMNS]
        lines.append(" ".join(_fmt(v) for v in vals) + " " + (json.dumps(r.error) if r.error else "-"))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_sweep_table(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            parts = line.split(" ", len(SWEEP_COLUMNS))
            rec = {c: float(v) for c, v in zip(SWEEP_COLUMNS, parts)}
            rec["error"] = "" if parts[-1].strip() == "-" else json.loads(parts[-1])
            rows.append(rec)
    return rows


def default_epsilons():
    return list(DEFAULT_EPSILONS)


# plot data

def emit_plot_data(artifact, figure_id, out_path=None):
    """Write the two-or-more-column data file for one figure analog.

    ``artifact`` is a run directory (fig2, fig7) or a sweep directory
    holding ``sweep.tsv`` (the rest).  Returns the written path.
    """
    if figure_id not in FIGURES:
        raise ConfigurationError(f"unknown figure id {figure_id!r}; choose from {', '.join(FIGURES)}")
    art = Path(artifact)
    if not art.exists():
        raise ConfigurationError(f"artifact {art} does not exist")
    out = Path(out_path) if out_path else art / f"{figure_id}.dat"
    if figure_id in ("fig2", "fig7"):
        text = _histogram_figure(art, figure_id)
    else:
        text = _sweep_figure(art, figure_id)
    _atomic_write(out, text)
    return out


def _histogram_figure(run_dir, figure_id):
    hist_path = run_dir / "histogram.tsv"
    if not hist_path.exists():
        raise ConfigurationError(f"{run_dir} has no histogram.tsv")
    data = np.loadtxt(hist_path, ndmin=2)
    centers = 0.5 * (data[:, 0] + data[:, 1])
    dens = data[:, 3]
    if figure_id == "fig2":
        return _columns(["tunneling-time distribution", UNITS,
                         "tau[1/k0^2] P(tau)[k0^2, per transmitted path]"], [centers, dens])
    fit = json.loads((run_dir / "fit.json").read_text())["least_squares"]
    if fit is None:
        raise ConfigurationError(f"{run_dir} has no least-squares fit")
    model = stats.gamma_pdf(fit["alpha"], fit["beta"], np.maximum(centers, 1e-300))
    return _columns(["tunneling-time distribution with least-squares Gamma fit", UNITS,
                     f"alpha {fit['alpha']!r} beta {fit['beta']!r}",
                     "tau[1/k0^2] P(tau)[k0^2] gamma_fit[k0^2]"], [centers, dens, model])


def _sweep_figure(sweep_dir, figure_id):
    table = sweep_dir / "sweep.tsv"
    if not table.exists():
        raise ConfigurationError(f"{sweep_dir} has no sweep.tsv")
    rows = [r for r in read_sweep_table(table) if not r["error"]]
    col = {k: np.array([r[k] for r in rows]) for k in SWEEP_COLUMNS}
    if figure_id == "fig3":
        return _columns(["average tunneling time vs barrier width", UNITS,
                         "d[1/k0] mean_tau[1/k0^2] tau_wkb[1/k0^2]"],
                        [col["value"], col["mean"], col["tau_wkb"]])
    if figure_id == "fig4":
        return _columns(["tunneling-time deviation vs barrier width", UNITS,
                         "d[1/k0] deviation[1/k0^2]"], [col["value"], col["deviation"]])
    if figure_id == "fig5":
        keep = col["kappa_d"] <= 2.0
        return _columns(["thin-barrier zoom (kappa d <= 2)", UNITS,
                         "d[1/k0] mean_tau[1/k0^2] tau_wkb[1/k0^2]"],
                        [col["value"][keep], col["mean"][keep], col["tau_wkb"][keep]])
    if figure_id == "fig6":
        head = ["deviation vs average tunneling time", UNITS]
        for label, keep in (("kappa_d<=2", col["kappa_d"] <= 2.0), ("kappa_d>=2", col["kappa_d"] >= 2.0)):
            pts = np.column_stack([col["mean"][keep], col["deviation"][keep]])
            pts = pts[np.all(np.isfinite(pts) & (pts > 0), axis=1)]
            slope = stats.regime_slope(pts) if len(pts) >= 3 else float("nan")
            head.append(f"log-log slope {label}: {_fmt(slope)}")
        head.append("reference lines: deviation = c*mean (slope 1), deviation = c*sqrt(mean) (slope 1/2)")
        head.append("mean_tau[1/k0^2] deviation[1/k0^2]")
        return _columns(head, [col["mean"], col["deviation"]])
    if figure_id == "fig8":
        return _columns(["Gamma shape vs opacity", "alpha is dimensionless",
                         "kappa_d alpha"], [col["kappa_d"], col["alpha"]])
    if figure_id == "fig9":
        return _columns(["Gamma scale vs opacity", "kappa^2 beta is dimensionless (beta in 1/k0^2)",
                         "kappa_d kappa2_beta"], [col["kappa_d"], col["kappa2_beta"]])
    if figure_id == "fig10":
        return _columns(["epsilon dependence of the average tunneling time (base frame)", UNITS,
                         "epsilon mean_tau[1/k0^2] tau_wkb[1/k0^2]"],
                        [col["value"], col["mean"], col["tau_wkb"]])
    return _columns(["epsilon dependence of the tunneling-time deviation (base frame)", UNITS,
                     "epsilon deviation[1/k0^2] mean_tau[1/k0^2]"],
                    [col["value"], col["deviation"], col["mean"]])
