"""Planck-constant scaling: runs with ``hbar~ = epsilon*hbar`` in rescaled coordinates.

With ``X = x/eps`` and ``T = t/eps`` the Schroedinger equation for
``hbar~`` becomes the ordinary one, with the barrier width ``D = d/eps``
and every other physical parameter (m, V0, E0, p) unchanged.  A scaled run
is therefore an ordinary run on a stretched geometry, and its tunneling
times map back as ``tau~ = eps * tau``.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .config import SimulationConfig
from .errors import ConfigurationError

log = logging.getLogger(__name__)

DEFAULT_EPSILONS = (1.0, 0.8, 0.6, 0.5, 0.4, 0.3, 0.25, 0.2)
DEFAULT_MAX_POINTS = 400_001


@dataclass(frozen=True)
class ScalingSpec:
    epsilon: float
    base_config: SimulationConfig

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigurationError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.base_config.epsilon != 1.0:
            raise ConfigurationError("base config must be an unscaled (epsilon = 1) config")


def scaled_config(spec, max_points=DEFAULT_MAX_POINTS):
    """Ordinary-hbar config in the X-T frame of ``spec``.

    The barrier width always becomes ``d/eps``.  The packet geometry
    (domain, centre, width) and the time cap stretch by the same ``1/eps``
    unless the grid would exceed ``max_points``; then they stretch by the
    largest factor that fits and the shortfall is logged and recorded in
    ``geometry_scale``.  ``dx`` and ``dt`` stay put: the wavenumber and the
    decay constant are the same in the X-T frame, so the base resolution
    still applies.
    """
    eps = spec.epsilon
    base = spec.base_config
    s = 1.0 / eps
    g = s
    span = base.x_max - base.x_min
    n_points = span * s / base.dx + 1
    if n_points > max_points:
        g = max(1.0, (max_points - 1) * base.dx / span)
        log.warning("epsilon=%g: grid of %d points exceeds %d; packet geometry stretched by %.4g "
                    "instead of %.4g", eps, int(n_points), max_points, g, s)
    return base.replace(
        x_min=base.x_min * g, x_max=base.x_max * g,
        x_mean=base.x_mean * g, delta_x=base.delta_x * g,
        d=base.d * s, t_max=base.t_max * g,
        epsilon=eps, geometry_scale=g,
    )


def unscale_times(times, epsilon):
    """Map X-T frame times back: ``tau~ = eps * tau``."""
    if not 0.0 < epsilon <= 1.0:
        raise ConfigurationError(f"epsilon must lie in (0, 1], got {epsilon}")
    return np.asarray(times, dtype=float) * epsilon


def wkb_time_scaled(base):
    """``sqrt(m / (2 (V0 - E0))) * d``: the same for every epsilon."""
    return math.sqrt(base.m / (2.0 * (base.v0 - base.e0))) * base.d


@dataclass
class EpsilonRow:
    epsilon: float
    mean: float = float("nan")
    deviation: float = float("nan")
    alpha: float = float("nan")
    beta: float = float("nan")
    n_transmitted: int = 0
    tau_wkb: float = float("nan")
    kappa_d_scaled: float = float("nan")
    geometry_scale: float = 1.0
    error: str = ""


def epsilon_sweep(base, epsilons=DEFAULT_EPSILONS, run=None, max_points=DEFAULT_MAX_POINTS):
    """Run the pipeline at each epsilon and tabulate statistics in the base frame.

    ``run(config) -> (times, fit)`` executes one scaled-frame config and
    returns its transmitted times and Gamma fit (or ``None``).  Failures are
    recorded in the row's ``error`` field and the sweep moves on.  Rows come
    back ordered by decreasing epsilon.
    """
    if run is None:
        from .runner import pipeline_times
        run = pipeline_times
    tau_wkb = wkb_time_scaled(base)
    rows = []
    for eps in sorted(set(float(e) for e in epsilons), reverse=True):
        row = EpsilonRow(eps, tau_wkb=tau_wkb)
        try:
            cfg = scaled_config(ScalingSpec(eps, base), max_points)
            row.geometry_scale = cfg.geometry_scale
            row.kappa_d_scaled = cfg.kappa_d
            times, fit = run(cfg)
            t = unscale_times(times, eps)
            row.n_transmitted = int(t.size)
            if t.size >= 2:
                row.mean = float(t.mean())
                row.deviation = float(t.std(ddof=1))
            if fit is not None:
                # alpha is scale-free; beta is a time
                row.alpha, row.beta = fit.alpha, fit.beta * eps
        except Exception as exc:  # noqa: BLE001 - a failed entry must not stop the sweep
            log.error("epsilon=%g failed: %s", eps, exc)
            row.error = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def crossover_epsilon(eps, mean, deviation):
    """Epsilon where the deviation switches between its two scaling modes.

    Large epsilon (wave mode): ``dev = a * mean``.  Small epsilon (particle
    mode): ``dev = b * sqrt(eps * mean)``.  Each mode has a fixed form and
    one free constant.  The split that minimizes the total squared log error
    is chosen, and the crossover is the epsilon where the two fitted curves
    intersect, with ``mean`` interpolated linearly in ``log eps``.  Returns
    ``(eps_c, a, b)``.
    """
    e = np.asarray(eps, dtype=float)
    m = np.asarray(mean, dtype=float)
    s = np.asarray(deviation, dtype=float)
    ok = np.isfinite(e) & np.isfinite(m) & np.isfinite(s) & (m > 0) & (s > 0)
    e, m, s = e[ok], m[ok], s[ok]
    order = np.argsort(e)
    e, m, s = e[order], m[order], s[order]
    if e.size < 4:
        raise ValueError("need at least 4 valid epsilon points")
    la = np.log(s / m)                    # log a per point
    lb = np.log(s / np.sqrt(e * m))       # log b per point
    best = None
    # particle mode on e[:k], wave mode on e[k:], each side at least 2 points
    for k in range(2, e.size - 1):
        b = lb[:k].mean()
        a = la[k:].mean()
        sse = np.sum((lb[:k] - b) ** 2) + np.sum((la[k:] - a) ** 2)
        if best is None or sse < best[0]:
            best = (sse, a, b)
    _, log_a, log_b = best
    # log(a m) - log(b sqrt(e m)) = log_a - log_b + 0.5 log m - 0.5 log e
    le = np.log(e)
    gap = log_a - log_b + 0.5 * np.log(m) - 0.5 * le
    grid = np.linspace(le[0], le[-1], 2001)
    gi = log_a - log_b + 0.5 * np.interp(grid, le, np.log(m)) - 0.5 * grid
    sign = np.sign(gi)
    idx = np.flatnonzero(sign[:-1] * sign[1:] <= 0)
    if idx.size == 0:
        # no intersection inside the sampled range; report the nearer end
        eps_c = float(e[0] if abs(gap[0]) < abs(gap[-1]) else e[-1])
    else:
        j = idx[0]
        x0, x1, y0, y1 = grid[j], grid[j + 1], gi[j], gi[j + 1]
        eps_c = float(math.exp(x0 if y1 == y0 else x0 - y0 * (x1 - x0) / (y1 - y0)))
    return eps_c, float(math.exp(log_a)), float(math.exp(log_b))
