"""Flat key/value simulation configuration.

Units: ``m = hbar = 1`` by default and the incident wavenumber ``k0 = p_mean/hbar``
sets the scale, so lengths are in ``1/k0`` and times in ``1/k0**2`` (for ``m = 1``).
"""

import configparser
import dataclasses
import io
import math
from dataclasses import dataclass, fields

from .errors import ConfigurationError
from .field import BarrierSpec, Grid1D, PacketSpec, packet_tail_mass

SECTION = "simulation"

PROFILES = {
    "desk": {"n_paths": 10_000, "dx": 0.1},
    "paper": {"n_paths": 100_000, "dx": 0.05},
}

_HEADER = """\
# Nelson tunneling-time simulation.
# Units: m = hbar = 1, lengths in 1/k0, times in 1/k0^2, energies in k0^2 (k0 = p_mean/hbar).
"""


@dataclass(frozen=True)
class SimulationConfig:
    # grid
    x_min: float = -1000.0
    x_max: float = 1000.0
    dx: float = 0.1
    # barrier
    v0: float = 1.0
    d: float = 10.0
    m: float = 1.0
    hbar: float = 1.0
    # packet
    x_mean: float = -500.0
    p_mean: float = 1.0
    delta_x: float = 50.0
    # ensemble
    n_paths: int = 10_000
    master_seed: int = 0
    noise: bool = True
    splitting: bool = True
    split_spacing: float = 0.0
    max_population_factor: float = 64.0
    drift_floor: float = 1e-12
    barrier_sampling: str = "cell"
    # time stepping and stopping
    dt: float = 0.01
    t_max: float = 1500.0
    region_tol: float = 1e-4
    undecided_tol: float = 1e-3
    check_interval: float = 1.0
    # analysis; "occupancy" is total barrier time, "final_crossing" only counts
    # the sojourn since the path last stood left of the barrier
    time_estimator: str = "occupancy"
    bins: int = 0
    fit_method: str = "least_squares"
    weighted_fit: bool = False
    # Planck-constant scaling: this config lives in the X-T frame of hbar~ = epsilon*hbar
    epsilon: float = 1.0
    geometry_scale: float = 1.0
    output_dir: str = ""

    def __post_init__(self):
        self.validate()

    @classmethod
    def for_profile(cls, profile="desk", **overrides):
        try:
            base = dict(PROFILES[profile])
        except KeyError:
            raise ConfigurationError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def validate(self):
        if self.dx <= 0 or self.dt <= 0:
            raise ConfigurationError("dx and dt must be positive")
        if self.n_paths < 1:
            raise ConfigurationError("n_paths must be at least 1")
        if self.fit_method not in ("least_squares", "mle"):
            raise ConfigurationError(f"fit_method must be least_squares or mle, not {self.fit_method!r}")
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigurationError("epsilon must lie in (0, 1]")
        if self.time_estimator not in ("occupancy", "final_crossing"):
            raise ConfigurationError("time_estimator must be occupancy or final_crossing")
        if self.barrier_sampling not in ("point", "cell"):
            raise ConfigurationError("barrier_sampling must be point or cell")
        if self.t_max <= 0 or self.check_interval <= 0:
            raise ConfigurationError("t_max and check_interval must be positive")
        if self.bins < 0:
            raise ConfigurationError("bins must be >= 0 (0 selects the automatic rule)")
        # constructors below raise on their own invariants
        grid = self.grid()
        self.barrier()
        packet = self.packet()
        if not (grid.x_min < -0.5 * self.d and 0.5 * self.d < grid.x_max):
            raise ConfigurationError(f"barrier of width {self.d} does not fit in [{self.x_min}, {self.x_max}]")
        if not self.x_mean < -0.5 * self.d:
            raise ConfigurationError("the packet must start left of the barrier")
        lost = packet_tail_mass(packet, grid)
        if lost > 1e-10:
            raise ConfigurationError(f"packet tail outside the box carries probability {lost:.3g}")

    # derived objects
    def grid(self):
        return Grid1D.from_spacing(self.x_min, self.x_max, self.dx)

    def barrier(self):
        return BarrierSpec(self.v0, self.d, self.m, self.hbar)

    def packet(self):
        return PacketSpec(self.x_mean, self.p_mean, self.delta_x, self.m)

    @property
    def e0(self):
        return self.p_mean ** 2 / (2.0 * self.m)

    @property
    def k0(self):
        return self.p_mean / self.hbar

    @property
    def kappa(self):
        if self.e0 >= self.v0:
            return float("nan")
        return math.sqrt(2.0 * self.m * (self.v0 - self.e0)) / self.hbar

    @property
    def kappa_d(self):
        return self.kappa * self.d

    # persistence
    def to_text(self):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp[SECTION] = {f.name: _format(getattr(self, f.name)) for f in fields(self)}
        buf = io.StringIO()
        buf.write(_HEADER)
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigurationError(f"unreadable config: {exc}") from exc
        if SECTION not in cp:
            raise ConfigurationError(f"config has no [{SECTION}] section")
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in cp[SECTION].items():
            if key not in known:
                raise ConfigurationError(f"unknown config key {key!r}")
            values[key] = _parse(known[key].type, raw, key)
        return cls(**values)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
        return cls.from_text(text)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(typ, raw, key):
    typ = typ if isinstance(typ, str) else typ.__name__
    raw = raw.strip()
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from None
    return raw
