"""Tunneling-time histograms, moments and Gamma-distribution fits.

The Gamma density is parameterized by a shape offset ``alpha`` and a scale
``beta``::

    P(tau) = tau**alpha * exp(-tau/beta) / (beta**(alpha+1) * Gamma(alpha+1))

so the mean is ``beta*(alpha+1)`` and the variance ``beta**2*(alpha+1)``.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize, special

from .errors import FitError

# log-parameter box for the least-squares search
_LOG_BOUNDS = (-12.0, 12.0)


@dataclass(frozen=True)
class TunnelingHistogram:
    """Equal-width histogram of transmitted-path tunneling times on ``[t_min, edges[-1]]``."""

    edges: np.ndarray
    counts: np.ndarray
    n_transmitted: int
    t_min: float = 0.0

    @property
    def bin_width(self):
        return float(self.edges[1] - self.edges[0])

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def density(self, n_paths=None):
        """Heights ``counts / (n * bin_width)``.

        ``n`` defaults to the transmitted count, which makes the histogram a
        unit-normalized density comparable with the Gamma pdf.  Passing the
        total number of paths gives the ``delta n / N`` convention instead.
        """
        n = self.n_transmitted if n_paths is None else n_paths
        return self.counts / (n * self.bin_width)

    @property
    def nonempty_bins(self):
        return int(np.count_nonzero(self.counts))

    def to_dict(self):
        return {"edges": self.edges.tolist(), "counts": self.counts.tolist(),
                "n_transmitted": self.n_transmitted, "t_min": self.t_min,
                "bin_width": self.bin_width}


def default_bins(n):
    return max(20, math.ceil(math.sqrt(n)))


def _as_times(times, positive=True):
    t = np.asarray(times, dtype=float).ravel()
    if not np.all(np.isfinite(t)):
        raise ValueError("tunneling times must be finite")
    if positive and np.any(t <= 0):
        raise ValueError("tunneling times must be positive")
    return t


def build_histogram(times, bins=None):
    """Histogram on ``[0, max(tau)*(1 + 1e-9)]``; ``bins`` of 0/None picks ``max(20, ceil(sqrt n))``."""
    t = _as_times(times)
    if t.size == 0:
        raise ValueError("no transmitted paths")
    nb = default_bins(t.size) if not bins else int(bins)
    if nb < 1:
        raise ValueError("need at least one bin")
    top = t.max() * (1.0 + 1e-9)
    edges = np.linspace(0.0, top, nb + 1)
    counts, _ = np.histogram(t, bins=edges)
    return TunnelingHistogram(edges, counts.astype(np.int64), int(t.size))


def moments(times):
    """Sample mean and standard deviation (``n - 1`` denominator)."""
    t = _as_times(times, positive=False)
    if t.size < 2:
        raise ValueError("need at least two samples for a deviation")
    return float(t.mean()), float(t.std(ddof=1))


def skewness(times):
    t = _as_times(times, positive=False)
    sd = t.std()
    if sd == 0:
        return 0.0
    return float(np.mean((t - t.mean()) ** 3) / sd ** 3)


def _check_params(alpha, beta):
    if not (alpha > 0 and beta > 0):
        raise ValueError(f"Gamma parameters must be positive (alpha={alpha}, beta={beta})")


def gamma_logpdf(alpha, beta, tau):
    _check_params(alpha, beta)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("tau must be positive")
    return alpha * np.log(tau) - tau / beta - (alpha + 1.0) * math.log(beta) - special.gammaln(alpha + 1.0)


def gamma_pdf(alpha, beta, tau):
    """Gamma density with shape ``alpha + 1`` and scale ``beta``."""
    out = np.exp(gamma_logpdf(alpha, beta, tau))
    return float(out) if out.ndim == 0 else out


def gamma_moments(alpha, beta):
    """``(mean, deviation) = (beta*(alpha+1), beta*sqrt(alpha+1))``."""
    _check_params(alpha, beta)
    return beta * (alpha + 1.0), beta * math.sqrt(alpha + 1.0)


def moment_parameters(mean, deviation):
    """Invert the moment relations: ``alpha = (mean/dev)**2 - 1``, ``beta = dev**2/mean``."""
    if mean <= 0 or deviation <= 0:
        raise ValueError("mean and deviation must be positive")
    return (mean / deviation) ** 2 - 1.0, deviation ** 2 / mean


@dataclass(frozen=True)
class GammaFit:
    alpha: float
    beta: float
    residual: float
    method: str
    n_samples: int = 0
    iterations: int = 0
    # True when the shape ran into the search box (no Gamma fits the data)
    degenerate: bool = False

    @property
    def mean(self):
        return self.beta * (self.alpha + 1.0)

    @property
    def deviation(self):
        return self.beta * math.sqrt(self.alpha + 1.0)

    def kappa2_beta(self, kappa):
        return kappa * kappa * self.beta

    def to_dict(self):
        out = asdict(self)
        out.update(mean=self.mean, deviation=self.deviation)
        return out


def _hist_moment_start(hist):
    c = hist.centers
    w = hist.counts / hist.counts.sum()
    mean = float(np.sum(w * c))
    var = float(np.sum(w * (c - mean) ** 2))
    var = max(var, hist.bin_width ** 2 / 12.0)
    alpha, beta = moment_parameters(mean, math.sqrt(var))
    return max(alpha, 1e-3), beta


def fit_gamma_least_squares(hist, weighted=False, max_iter=4000):
    """Least-squares fit of the Gamma pdf to the unit-normalized histogram.

    Unweighted by default.  ``weighted=True`` divides each residual by its
    Poisson standard error ``sqrt(max(count, 1)) / (n * bin_width)``.  The
    search runs Nelder-Mead over ``(log alpha, log beta)`` from the
    method-of-moments start.
    """
    if hist.nonempty_bins < 5:
        raise FitError(f"least-squares fit needs at least 5 non-empty bins, got {hist.nonempty_bins}")
    x = hist.centers
    y = hist.density()
    if weighted:
        sigma = np.sqrt(np.maximum(hist.counts, 1)) / (hist.n_transmitted * hist.bin_width)
    else:
        sigma = np.ones_like(y)
    lo, hi = _LOG_BOUNDS

    def objective(p):
        p = np.clip(p, lo, hi)
        a, b = math.exp(p[0]), math.exp(p[1])
        with np.errstate(over="ignore", under="ignore"):
            model = np.exp(a * np.log(x) - x / b - (a + 1.0) * p[1] - special.gammaln(a + 1.0))
        r = (y - model) / sigma
        return float(np.dot(r, r))

    a0, b0 = _hist_moment_start(hist)
    start = np.log([a0, b0])
    res = optimize.minimize(objective, start, method="Nelder-Mead",
                            options={"maxiter": max_iter, "xatol": 1e-9, "fatol": 1e-14 * max(1.0, objective(start))})
    p = np.clip(res.x, lo, hi)
    fit = GammaFit(float(math.exp(p[0])), float(math.exp(p[1])), float(res.fun),
                   "least_squares_weighted" if weighted else "least_squares",
                   hist.n_transmitted, int(res.nit),
                   degenerate=bool(np.any(np.abs(res.x) >= hi - 1e-6)))
    if not res.success:
        raise FitError(f"Nelder-Mead did not converge: {res.message}", best=fit)
    return fit


def fit_gamma_mle(times, tol=1e-12, max_iter=100):
    """Maximum-likelihood Gamma fit by Newton iteration on ``log k - digamma(k) = s``.

    ``k = alpha + 1`` is the shape and ``s = log(mean) - mean(log tau)``.
    """
    t = _as_times(times)
    if t.size < 10:
        raise FitError(f"MLE fit needs at least 10 samples, got {t.size}")
    mean = float(t.mean())
    s = math.log(mean) - float(np.mean(np.log(t)))
    if s <= 1e-14:
        raise FitError("all samples equal: Gamma shape diverges (degenerate)")
    # Minka's closed-form start
    k = (3.0 - s + math.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    it = 0
    for it in range(1, max_iter + 1):
        f = math.log(k) - special.digamma(k) - s
        fp = 1.0 / k - special.polygamma(1, k)
        k_new = k - f / fp
        if k_new <= 0:
            k_new = 0.5 * k
        done = abs(k_new - k) <= tol * k
        k = k_new
        if done:
            break
    else:
        best = GammaFit(k - 1.0, mean / k, float("nan"), "mle", t.size, it)
        raise FitError("Newton iteration for the Gamma shape did not converge", best=best)
    alpha, beta = float(k - 1.0), float(mean / k)
    loglik = float(np.sum((k - 1.0) * np.log(t) - t / beta) - t.size * (k * math.log(beta) + special.gammaln(k)))
    fit = GammaFit(alpha, beta, -loglik / t.size, "mle", t.size, it)
    if alpha <= 0:
        raise FitError(f"MLE shape offset alpha={alpha:.4g} is not positive", best=fit)
    return fit


def fit_gamma(times, method="least_squares", bins=None, weighted=False):
    if method == "least_squares":
        return fit_gamma_least_squares(build_histogram(times, bins), weighted=weighted)
    if method == "mle":
        return fit_gamma_mle(times)
    raise ValueError(f"unknown fit method {method!r}")


def wkb_time(barrier, e0):
    """``m d / (hbar kappa)`` for incident energy ``e0`` below the barrier."""
    if e0 >= barrier.v0:
        raise ValueError(f"incident energy {e0} is not below the barrier height {barrier.v0}")
    kappa = math.sqrt(2.0 * barrier.m * (barrier.v0 - e0)) / barrier.hbar
    return barrier.m * barrier.d / (barrier.hbar * kappa)


def wkb_time_classical(d, v0, e0, m=1.0):
    """Same time written without hbar: ``sqrt(m / (2 (v0 - e0))) * d``."""
    if e0 >= v0:
        raise ValueError(f"incident energy {e0} is not below the barrier height {v0}")
    if d < 0:
        raise ValueError("width must be non-negative")
    return math.sqrt(m / (2.0 * (v0 - e0))) * d


def regime_slope(points):
    """Least-squares slope of ``log dtau`` against ``log <tau>``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError("need at least 3 (mean, deviation) pairs")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("means and deviations must be positive")
    return float(np.polyfit(np.log(pts[:, 0]), np.log(pts[:, 1]), 1)[0])


def cluster_bootstrap(times, groups, statistic, n_boot=200, seed=0):
    """Standard error of ``statistic(times)`` resampling whole groups.

    Clones from path splitting share their history up to the split, so
    samples from one lineage are correlated; resampling lineages keeps the
    error bars honest.  Returns the bootstrap standard deviation, one entry
    per component of ``statistic``.
    """
    t = np.asarray(times, dtype=float)
    g = np.asarray(groups)
    uniq, inv = np.unique(g, return_inverse=True)
    order = np.argsort(inv, kind="stable")
    starts = np.searchsorted(inv[order], np.arange(len(uniq) + 1))
    members = [order[starts[i]:starts[i + 1]] for i in range(len(uniq))]
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_boot):
        pick = rng.integers(0, len(uniq), len(uniq))
        idx = np.concatenate([members[i] for i in pick])
        try:
            out.append(np.atleast_1d(statistic(t[idx])))
        except (FitError, ValueError):
            continue
    if len(out) < 2:
        raise FitError("bootstrap produced fewer than two valid replicates")
    return np.std(np.array(out), axis=0, ddof=1)
