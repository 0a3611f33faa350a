"""Ensemble of Nelson sample paths evolved in lockstep with the wavefunction.

Each path obeys the Ito equation ``dx = (u + v) dt + dw`` with
``<dw dw> = (hbar/m) dt`` and accumulates the time it spends on the closed
barrier interval.  The noise of path ``pid`` at step ``k`` comes from the
counter-based stream keyed by ``(master_seed, pid, k)``.

Opaque barriers transmit so rarely that a plain ensemble sees no
transmitted paths.  With ``splitting`` enabled, a path is cloned into two
half-weight copies (fresh stream ids, shared history) each time its running
maximum first crosses one of a ladder of levels inside the barrier.  Every
transmitted path has crossed the whole ladder, so transmitted paths all
carry the same weight and their tunneling times are an unweighted sample of
the conditional distribution; the transmission probability is the summed
weight.
"""

import enum
import logging
import math
from dataclasses import asdict, dataclass, replace

import numba as nb
import numpy as np

from . import field as qf
from .field import cn_step
from .errors import ConfigurationError, NumericalError
from .rng import INIT_STEP, normals, stream_normal

log = logging.getLogger(__name__)


class PathStatus(enum.IntEnum):
    UNDECIDED = 0
    TRANSMITTED = 1
    REFLECTED = -1


@dataclass(frozen=True)
class PathRecord:
    x: float
    tau: float
    pid: int
    status: PathStatus = PathStatus.UNDECIDED


class PathEnsemble:
    """Structure-of-arrays store for a (possibly growing) path population.

    Arrays are allocated with spare capacity; the live population is the
    first ``n`` entries.  ``n_total`` is the number of initial paths, against
    which weights are normalized.
    """

    _ARRAYS = ("x", "tau", "tcross", "pid", "root", "x0", "weight", "level", "status", "wall")

    def __init__(self, x, master_seed, t=0.0, step=0, capacity=None):
        n = len(x)
        cap = max(capacity or n, n)
        self.n = n
        self.n_total = n
        self.master_seed = int(master_seed)
        self.t = float(t)
        self.step = int(step)
        self.next_pid = n
        self.x = np.zeros(cap)
        self.x[:n] = x
        self.tau = np.zeros(cap)
        # occupancy since the path was last left of the barrier
        self.tcross = np.zeros(cap)
        self.pid = np.zeros(cap, dtype=np.uint64)
        self.pid[:n] = np.arange(n, dtype=np.uint64)
        self.root = np.zeros(cap, dtype=np.int64)
        self.root[:n] = np.arange(n)
        self.x0 = self.x.copy()
        self.weight = np.zeros(cap)
        self.weight[:n] = 1.0
        self.level = np.zeros(cap, dtype=np.int64)
        self.status = np.zeros(cap, dtype=np.int8)
        self.wall = np.zeros(cap, dtype=np.bool_)
        self.nsplit = np.zeros(cap, dtype=np.int64)

    def __len__(self):
        return self.n

    def view(self, name):
        return getattr(self, name)[: self.n]

    def record(self, i):
        return PathRecord(float(self.x[i]), float(self.tau[i]), int(self.pid[i]),
                          PathStatus(int(self.status[i])))

    def copy(self):
        other = PathEnsemble.__new__(PathEnsemble)
        other.__dict__.update(self.__dict__)
        for name in self._ARRAYS + ("nsplit",):
            setattr(other, name, getattr(self, name).copy())
        return other

    def reserve(self, extra):
        need = self.n + extra
        cap = self.x.shape[0]
        if need <= cap:
            return
        new_cap = max(need, 2 * cap)
        for name in self._ARRAYS + ("nsplit",):
            old = getattr(self, name)
            arr = np.zeros(new_cap, dtype=old.dtype)
            arr[: self.n] = old[: self.n]
            setattr(self, name, arr)

    def state_dict(self):
        """Arrays and counters sufficient to resume the ensemble exactly."""
        out = {name: self.view(name).copy() for name in self._ARRAYS}
        out.update(n_total=self.n_total, master_seed=self.master_seed, t=self.t,
                   step=self.step, next_pid=self.next_pid)
        return out

    @classmethod
    def from_state_dict(cls, state):
        ens = cls(state["x"], state["master_seed"], state["t"], state["step"])
        for name in cls._ARRAYS:
            getattr(ens, name)[:] = state[name]
        ens.n_total = int(state["n_total"])
        ens.next_pid = int(state["next_pid"])
        return ens

    # summaries
    def mask(self, status):
        return self.view("status") == int(status)

    def weighted_fraction(self, status):
        return float(self.view("weight")[self.mask(status)].sum() / self.n_total)

    def transmitted_times(self):
        return self.view("tau")[self.mask(PathStatus.TRANSMITTED)].copy()

    def crossing_times(self):
        """Final-crossing occupancy of transmitted paths (diagnostic)."""
        return self.view("tcross")[self.mask(PathStatus.TRANSMITTED)].copy()


def init_paths(n, initial, master_seed, packet=None):
    """Draw ``n`` initial positions i.i.d. from ``|psi(x, 0)|^2``.

    With ``packet`` the exact Gaussian of that packet is sampled; otherwise
    the discrete density of ``initial`` is inverted through its CDF.  Draws
    use the reserved initial counter of each path's stream.
    """
    if n < 1:
        raise ConfigurationError("need at least one path")
    g = initial.grid
    z = normals(master_seed, np.arange(n), INIT_STEP)
    if packet is not None:
        x = packet.x_mean + packet.delta_x * z
    else:
        from scipy.special import ndtr
        cdf = initial.density.cumsum()
        cdf /= cdf[-1]
        x = np.interp(ndtr(z), cdf, g.x)
    x = np.clip(x, g.x_min + g.dx, g.x_max - g.dx)
    return PathEnsemble(x, master_seed)


@nb.njit(cache=True, inline="always")
def _node_drift(psi, j, n_grid, rho_min, scale):
    if j <= 0 or j >= n_grid - 1:
        return 0.0, 0.0
    p = psi[j]
    r = p.real * p.real + p.imag * p.imag
    if r < rho_min:
        r = rho_min
    dp = psi[j + 1] - psi[j - 1]
    return (scale * (dp.real * p.real + dp.imag * p.imag) / r,
            scale * (dp.imag * p.real - dp.real * p.imag) / r)


@nb.njit(parallel=True, cache=True)
def _paths_phase(x, tau, tcross, pid, level, wall, nsplit, n, psi, rho_min, scale, x_min, dx,
                 dt, half_d, seed, step, sigma, cap, levels):
    """Clock, drift and noise for every live path; returns (caps, walls, clones needed)."""
    n_grid = psi.shape[0]
    lo = x_min + dx
    hi = x_min + (n_grid - 2) * dx
    n_levels = levels.shape[0]
    cap_events = 0
    wall_hits = 0
    clones = 0
    for i in nb.prange(n):
        xi = x[i]
        if xi < -half_d:
            tcross[i] = 0.0
        elif xi <= half_d:
            tau[i] += dt
            tcross[i] += dt
        s = (xi - x_min) / dx
        j = int(s)
        if j < 0:
            j = 0
        elif j > n_grid - 2:
            j = n_grid - 2
        w = s - j
        u0, v0 = _node_drift(psi, j, n_grid, rho_min, scale)
        u1, v1 = _node_drift(psi, j + 1, n_grid, rho_min, scale)
        uu = (1.0 - w) * u0 + w * u1
        vv = (1.0 - w) * v0 + w * v1
        c = 0
        if uu > cap:
            uu = cap
            c = 1
        elif uu < -cap:
            uu = -cap
            c = 1
        if vv > cap:
            vv = cap
            c = 1
        elif vv < -cap:
            vv = -cap
            c = 1
        cap_events += c
        xn = xi + (uu + vv) * dt
        if sigma > 0.0:
            xn += sigma * stream_normal(seed, pid[i], step)
        hit = 0
        if xn < lo:
            xn = lo
            hit = 1
        elif xn > hi:
            xn = hi
            hit = 1
        if hit:
            wall[i] = True
        wall_hits += hit
        x[i] = xn
        lev = level[i]
        k = 0
        while lev < n_levels and xn > levels[lev]:
            lev += 1
            k += 1
        level[i] = lev
        nsplit[i] = k
        clones += (1 << k) - 1
    return cap_events, wall_hits, clones


@nb.njit(cache=True)
def _apply_splits(x, tau, tcross, pid, root, x0, weight, level, wall, status, nsplit, n, next_pid):
    """Append clones for paths flagged in ``nsplit``; returns the new (n, next_pid)."""
    m = n
    for i in range(n):
        k = nsplit[i]
        if k == 0:
            continue
        f = 1 << k
        weight[i] /= f
        for _ in range(f - 1):
            x[m] = x[i]
            tau[m] = tau[i]
            tcross[m] = tcross[i]
            root[m] = root[i]
            x0[m] = x0[i]
            weight[m] = weight[i]
            level[m] = level[i]
            wall[m] = wall[i]
            status[m] = 0
            pid[m] = next_pid
            nsplit[m] = 0
            next_pid += 1
            m += 1
        nsplit[i] = 0
    return m, next_pid


@nb.njit(cache=True)
def _run_chunk(nsteps, pending, x, tau, tcross, pid, root, x0, weight, level, wall, status, nsplit,
               counters, fstate, psi, b_diag, off_b, lp, inv_denom, cp, work,
               floor, scale, x_min, dx, dt, half_d, seed, sigma, cap, levels, i_lo, cell_w):
    """Advance up to ``nsteps`` lockstep iterations.

    ``counters`` = [n, next_pid, step, cap_events, wall_hits, clones, evaluations]
    and ``fstate`` = [t, peak density, time-integrated barrier probability].  Returns 0 when all steps ran, or 1
    with the current step half-done (paths moved, clones pending) when the
    arrays lack room for the clones; the caller grows them and resumes with
    ``pending=True``.
    """
    capacity = x.shape[0]
    done = 0
    while done < nsteps:
        n = counters[0]
        if not pending:
            caps, walls, need = _paths_phase(
                x, tau, tcross, pid, level, wall, nsplit, n, psi, floor * fstate[1], scale,
                x_min, dx, dt, half_d, seed, np.uint64(counters[2]), sigma, cap, levels)
            counters[3] += caps
            counters[4] += walls
            counters[6] += n
            if n + need > capacity:
                return 1
        pending = False
        n_new, next_pid = _apply_splits(x, tau, tcross, pid, root, x0, weight, level, wall, status,
                                        nsplit, n, np.uint64(counters[1]))
        counters[5] += n_new - n
        counters[0] = n_new
        counters[1] = next_pid
        acc = 0.0
        for q in range(cell_w.shape[0]):
            p = psi[i_lo + q]
            acc += cell_w[q] * (p.real * p.real + p.imag * p.imag)
        fstate[2] += acc * dx * dt
        fstate[1] = cn_step(psi, b_diag, off_b, lp, inv_denom, cp, work)
        counters[2] += 1
        fstate[0] += dt
        done += 1
    return 0


def accumulate_barrier_time(path, barrier, dt):
    """Add ``dt`` to the path's clock when it sits on ``[-d/2, d/2]``."""
    half = 0.5 * barrier.d
    if -half <= path.x <= half:
        return replace(path, tau=path.tau + dt)
    return path


def split_levels(barrier, e0, spacing=0.0):
    """Ladder of splitting thresholds strictly inside the barrier.

    Default spacing ``ln 2 / (2 kappa)`` halves the evanescent density between
    rungs, which keeps the cloned population roughly flat across the ladder.
    """
    if e0 >= barrier.v0:
        return np.zeros(0)
    if spacing <= 0:
        spacing = math.log(2.0) / (2.0 * barrier.kappa(e0))
    half = 0.5 * barrier.d
    n = int(math.floor(barrier.d / spacing - 1e-12))
    return -half + spacing * np.arange(1, n + 1)


class _Stepper:
    """Binds an ensemble, a wavefunction and a propagator to the numba driver."""

    def __init__(self, ens, psi, propagator, half_d, m, hbar, dt, noise, floor, cap,
                 levels, max_population):
        self.ens = ens
        self.psi = psi
        self.prop = propagator
        self.half_d = half_d
        self.scale = hbar / m / (2.0 * propagator.grid.dx)
        self.dt = dt
        self.sigma = math.sqrt(hbar / m * dt) if noise else 0.0
        self.floor = floor
        self.cap = cap
        self.levels = np.ascontiguousarray(levels, dtype=float)
        self.max_population = max_population
        self.caps = 0
        self.walls = 0
        self.clones = 0
        self.evaluations = 0
        self.dwell = 0.0
        # cell-overlap weights of the nodes covering [-d/2, d/2]
        g = propagator.grid
        x = g.x
        w = np.clip(np.minimum(x + 0.5 * g.dx, half_d) - np.maximum(x - 0.5 * g.dx, -half_d), 0.0, g.dx)
        nz = np.flatnonzero(w)
        self.i_lo = int(nz[0]) if nz.size else 0
        self.cell_w = np.ascontiguousarray(w[self.i_lo: self.i_lo + nz.size] / g.dx)

    def run(self, nsteps):
        ens = self.ens
        g = self.prop.grid
        peak = float(np.max(np.abs(self.psi) ** 2))
        counters = np.array([ens.n, ens.next_pid, ens.step, 0, 0, 0, 0], dtype=np.int64)
        fstate = np.array([ens.t, peak, 0.0])
        pending = False
        start = ens.step
        while True:
            remaining = nsteps - (int(counters[2]) - start)
            if remaining <= 0:
                break
            code = _run_chunk(remaining, pending, ens.x, ens.tau, ens.tcross, ens.pid, ens.root, ens.x0,
                              ens.weight, ens.level, ens.wall, ens.status, ens.nsplit,
                              counters, fstate, self.psi, self.prop.b_diag, self.prop.off_b,
                              self.prop.lp, self.prop.inv_denom, self.prop.cp, self.prop.work,
                              self.floor, self.scale, g.x_min, g.dx, self.dt, self.half_d,
                              np.uint64(ens.master_seed), self.sigma, self.cap, self.levels,
                              self.i_lo, self.cell_w)
            ens.n = int(counters[0])
            if code == 0:
                break
            need = int(np.sum((1 << ens.nsplit[: ens.n]) - 1))
            if ens.n + need > self.max_population:
                raise NumericalError(
                    f"splitting population would exceed {self.max_population} paths; "
                    "raise max_population_factor or widen split_spacing", int(counters[2]))
            ens.reserve(need)
            pending = True
        ens.n = int(counters[0])
        ens.next_pid = int(counters[1])
        ens.step = int(counters[2])
        ens.t = float(fstate[0])
        self.caps += int(counters[3])
        self.walls += int(counters[4])
        self.clones += int(counters[5])
        self.evaluations += int(counters[6])
        self.dwell += float(fstate[2])
        if not math.isfinite(fstate[1]):
            raise NumericalError("non-finite wavefunction after tridiagonal solve", ens.step)


def advance_paths(ens, field_state, dt, barrier=None, m=1.0, hbar=1.0, noise=True,
                  cap=None, floor=1e-12, levels=None, max_population=None):
    """One Euler-Maruyama step of every path over a frozen field snapshot.

    The barrier clock is charged with the position held at the start of the
    step.  The field itself is not advanced.  Returns
    ``(cap_events, wall_hits, clones_created)``.
    """
    if not math.isclose(field_state.t, ens.t, rel_tol=0, abs_tol=1e-9 * max(1.0, abs(ens.t))):
        raise NumericalError(f"field time {field_state.t} differs from ensemble time {ens.t}", ens.step)
    g = field_state.grid
    psi = np.ascontiguousarray(field_state.psi, dtype=np.complex128)
    peak = float(np.max(np.abs(psi) ** 2))
    if peak <= 0:
        raise NumericalError("wavefunction vanishes everywhere", ens.step)
    half_d = 0.5 * barrier.d if barrier is not None else -1.0
    cap = g.dx / dt if cap is None else cap
    levels = np.zeros(0) if levels is None else np.ascontiguousarray(levels, dtype=float)
    sigma = math.sqrt(hbar / m * dt) if noise else 0.0
    n = ens.n
    caps, walls, need = _paths_phase(
        ens.x, ens.tau, ens.tcross, ens.pid, ens.level, ens.wall, ens.nsplit, n, psi, floor * peak,
        hbar / m / (2.0 * g.dx), g.x_min, g.dx, dt, half_d, np.uint64(ens.master_seed),
        np.uint64(ens.step), sigma, cap, levels)
    if need:
        if max_population is not None and n + need > max_population:
            raise NumericalError(f"splitting population would exceed {max_population} paths", ens.step)
        ens.reserve(need)
        ens.n, ens.next_pid = _apply_splits(ens.x, ens.tau, ens.tcross, ens.pid, ens.root, ens.x0, ens.weight,
                                            ens.level, ens.wall, ens.status, ens.nsplit, n,
                                            np.uint64(ens.next_pid))
        ens.next_pid = int(ens.next_pid)
    ens.t += dt
    ens.step += 1
    return int(caps), int(walls), int(need)


def classify_paths(ens, barrier, undecided_tol=1e-3):
    """Label paths by final side of the barrier; returns the undecided count.

    Paths still on the barrier stay undecided and are left out of the
    tunneling-time sample.
    """
    half = 0.5 * barrier.d
    x = ens.view("x")
    st = np.zeros(ens.n, dtype=np.int8)
    st[x > half] = PathStatus.TRANSMITTED
    st[x < -half] = PathStatus.REFLECTED
    ens.status[: ens.n] = st
    undecided = int(np.count_nonzero(st == PathStatus.UNDECIDED))
    if undecided > undecided_tol * ens.n:
        log.warning("%d of %d paths still inside the barrier at t=%g; t_f looks too short",
                    undecided, ens.n, ens.t)
    return undecided


@dataclass
class RunDiagnostics:
    steps: int = 0
    t_final: float = 0.0
    stop_reason: str = ""
    norm_initial: float = 0.0
    norm_drift: float = 0.0
    energy_initial: float = 0.0
    energy_drift: float = 0.0
    drift_evaluations: int = 0
    cap_events: int = 0
    wall_hits: int = 0
    clones: int = 0
    population: int = 0
    undecided: int = 0
    undecided_flag: bool = False
    p_region2_final: float = 0.0
    transmission_pde: float = 0.0
    reflection_pde: float = 0.0
    n_levels: int = 0
    dwell_pde: float = 0.0
    dwell_paths: float = 0.0

    @property
    def cap_fraction(self):
        return self.cap_events / self.drift_evaluations if self.drift_evaluations else 0.0

    def to_dict(self):
        out = asdict(self)
        out["cap_fraction"] = self.cap_fraction
        return out


class LockstepSimulation:
    """Alternates one ensemble step and one Crank-Nicolson step.

    The field is streamed: only the current wavefunction is kept.  A run can
    be paused between steps, saved with :meth:`snapshot` and resumed with
    :meth:`from_snapshot` without changing any result.
    """

    def __init__(self, config, _restore=None):
        self.config = c = config
        self.grid = c.grid()
        self.barrier = c.barrier()
        self.packet = c.packet()
        self.potential = qf.rect_potential(self.barrier, self.grid, c.barrier_sampling)
        self.propagator = qf.CrankNicolson(self.grid, self.potential, c.dt, c.m, c.hbar)
        self.levels = split_levels(self.barrier, c.e0, c.split_spacing) if c.splitting else np.zeros(0)
        self.max_population = int(c.max_population_factor * c.n_paths)
        self.check_every = max(1, int(round(c.check_interval / c.dt)))
        self.n_max = int(math.floor(c.t_max / c.dt + 0.5))
        v = self.packet.velocity
        self.t_min = max(0.0, (-0.5 * c.d - c.x_mean) / v) if v > 0 else 0.0
        if _restore is None:
            self.state = qf.init_gaussian(self.packet, self.grid, c.hbar)
            self.ens = init_paths(c.n_paths, self.state, c.master_seed, self.packet)
            self.diag = RunDiagnostics(n_levels=len(self.levels))
            self.diag.norm_initial = self.state.norm()
            self.diag.energy_initial = qf.energy_expectation(self.state, self.propagator)
        else:
            self.state, self.ens, self.diag = _restore
        self._stepper = _Stepper(self.ens, self.state.psi, self.propagator, 0.5 * c.d, c.m, c.hbar,
                                 c.dt, c.noise, c.drift_floor, self.grid.dx / c.dt, self.levels,
                                 self.max_population)

    @property
    def t(self):
        return self.ens.t

    def advance(self, nsteps):
        """Run ``nsteps`` lockstep iterations (no stopping test)."""
        st = self._stepper
        before = (st.caps, st.walls, st.clones, st.evaluations, st.dwell)
        try:
            st.run(nsteps)
        except NumericalError:
            raise
        except Exception as exc:
            raise NumericalError(f"{type(exc).__name__}: {exc}", self.ens.step) from exc
        d = self.diag
        d.cap_events += st.caps - before[0]
        d.wall_hits += st.walls - before[1]
        d.clones += st.clones - before[2]
        d.drift_evaluations += st.evaluations - before[3]
        d.dwell_pde += st.dwell - before[4]
        d.steps = self.ens.step
        self.state.t = self.ens.t
        self._check_norm()

    def advance_to(self, t):
        self.advance(int(round((t - self.t) / self.config.dt)))

    def _check_norm(self):
        norm = self.state.norm()
        if not math.isfinite(norm):
            raise NumericalError("wavefunction norm is not finite", self.ens.step)
        self.diag.norm_drift = max(self.diag.norm_drift, abs(norm - self.diag.norm_initial))

    def region2_probability(self):
        half = 0.5 * self.barrier.d
        return qf.probability_in_region(self.state, -half, half)

    def undecided_fraction(self):
        x = self.ens.view("x")
        half = 0.5 * self.barrier.d
        return float(np.count_nonzero((x >= -half) & (x <= half))) / self.ens.n

    def stop_reason(self):
        c = self.config
        if self.ens.step >= self.n_max:
            return "t_max"
        if self.t < self.t_min - 0.5 * c.dt:
            return None
        if self.region2_probability() < c.region_tol and self.undecided_fraction() < c.undecided_tol:
            return "converged"
        return None

    def run(self):
        reason = self.stop_reason()
        while reason is None:
            # land exactly on t_min, then test every check interval
            k_min = int(math.ceil(self.t_min / self.config.dt - 1e-9))
            k = self.ens.step
            nsteps = k_min - k if k < k_min else self.check_every
            self.advance(min(max(nsteps, 1), self.n_max - k))
            reason = self.stop_reason()
        return self.finish(reason)

    def finish(self, reason="manual"):
        c = self.config
        self._check_norm()
        d = self.diag
        d.t_final = self.t
        d.stop_reason = reason
        d.energy_drift = abs(qf.energy_expectation(self.state, self.propagator) - d.energy_initial)
        half = 0.5 * c.d
        x = self.grid.x
        rho = self.state.density * self.grid.dx
        d.p_region2_final = float(rho[(x >= -half) & (x <= half)].sum())
        d.transmission_pde = float(rho[x > half].sum())
        d.reflection_pde = float(rho[x < -half].sum())
        d.undecided = classify_paths(self.ens, self.barrier, c.undecided_tol)
        d.undecided_flag = d.undecided > c.undecided_tol * self.ens.n
        d.population = self.ens.n
        d.dwell_paths = float(np.sum(self.ens.view("weight") * self.ens.view("tau")) / self.ens.n_total)
        return self.ens, d

    def snapshot(self):
        return {
            "psi": self.state.psi.copy(),
            "ensemble": self.ens.state_dict(),
            "diagnostics": asdict(self.diag),
        }

    @classmethod
    def from_snapshot(cls, config, snap):
        ens = PathEnsemble.from_state_dict(snap["ensemble"])
        state = qf.WaveState(config.grid(), np.array(snap["psi"], dtype=np.complex128), ens.t)
        diag = RunDiagnostics(**snap["diagnostics"])
        return cls(config, _restore=(state, ens, diag))


def run_lockstep(config):
    """Full lockstep run; returns the classified ensemble and diagnostics."""
    sim = LockstepSimulation(config)
    try:
        return sim.run()
    except NumericalError as exc:
        exc.config = config
        raise
