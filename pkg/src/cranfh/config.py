"""System configuration: scenario dimensions, powers, thresholds and algorithm knobs."""

from dataclasses import dataclass, fields, replace
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Raised when a config document is malformed or violates an invariant."""


# Coupling-constraint variants for the convex subproblem. "epigraph" ties the
# per-RAU traffic to the current-iterate capacity epigraph variables (default);
# "frozen" keeps the previous-iterate capacity as a constant on the right-hand
# side, which leaves the fronthaul blocks uncoupled from everything but power.
COUPLING_VARIANTS = ("epigraph", "frozen")


@dataclass(frozen=True)
class SystemConfig:
    """All scenario and algorithm parameters for one cell."""

    # Dimensions
    n_bbu_antennas: int         # BBU transmit antennas
    n_raus: int                 # remote antenna units
    n_rau_antennas: int         # antennas (= fronthaul streams) per RAU
    n_users: int                # single-antenna users

    # Radio / geometry
    total_power: float          # shared fronthaul+access budget, W
    carrier_freq: float         # GHz
    cell_radius: float          # m
    noise_power: float = 1e-7   # W, same value at RAU antennas and user receivers

    # Resource split starting point
    tau_u_init: float = 0.5
    tau_r_init: float = 0.5

    # Sparsity / association
    epsilon_assoc: float = 0.01   # W, association power threshold
    mu_reweight: float = 1e-5     # reweighting regularizer

    # Resource reallocation
    search_depth: int = 6                   # binary-search evaluations for the mismatch budget
    d_realloc_threshold: float = 1.0        # (bps/Hz)^2, gate for reallocation
    d_converged_threshold: float = 0.1      # (bps/Hz)^2, informational convergence flag

    # Termination
    psi_window: int = 3
    psi_variance_threshold: float = 1.0     # (bps/Hz)^2
    max_iterations: int = 100
    stall_rel_tol: float = 1e-3   # relative sum-rate change treated as a stall

    # Randomness / placement
    rng_seed: int = 0
    min_user_distance: float = 10.0   # m, keep users off transmitters

    # Algorithm switches
    enable_reallocation: bool = True
    coupling_rhs: str = "epigraph"

    # Solver
    solver_tolerance: float = 1e-6

    def __post_init__(self):
        self.validate()

    @property
    def n_streams(self) -> int:
        """Total fronthaul streams, one per RAU receive antenna."""
        return self.n_raus * self.n_rau_antennas

    def validate(self):
        for key in ("n_bbu_antennas", "n_raus", "n_rau_antennas", "n_users"):
            v = getattr(self, key)
            if not isinstance(v, int) or v < 0:
                raise ConfigError(f"{key}: must be a nonnegative integer, got {v!r}")
        for key in ("n_bbu_antennas", "n_raus", "n_rau_antennas"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be >= 1")
        if self.n_bbu_antennas < self.n_streams:
            raise ConfigError(
                "n_bbu_antennas: need at least n_raus*n_rau_antennas transmit "
                f"antennas ({self.n_streams}), got {self.n_bbu_antennas}"
            )
        if self.total_power <= 0:
            raise ConfigError("total_power: must be > 0")
        if self.carrier_freq <= 0:
            raise ConfigError("carrier_freq: must be > 0")
        if self.cell_radius <= 0:
            raise ConfigError("cell_radius: must be > 0")
        if self.noise_power <= 0:
            raise ConfigError("noise_power: must be > 0")
        if abs(self.tau_u_init + self.tau_r_init - 1.0) > 1e-9:
            raise ConfigError(
                f"tau_u_init: shares must sum to 1, got "
                f"{self.tau_u_init} + {self.tau_r_init}"
            )
        if not (0.0 < self.tau_u_init < 1.0):
            raise ConfigError("tau_u_init: must lie strictly inside (0, 1)")
        if self.n_users > 0:
            per_link = self.total_power / (self.n_raus * self.n_users)
            if not (0.0 < self.epsilon_assoc < per_link):
                raise ConfigError(
                    f"epsilon_assoc: must satisfy 0 < eps < P/(N*K) = {per_link:g}"
                )
        if not (0.0 < self.mu_reweight < self.epsilon_assoc):
            raise ConfigError("mu_reweight: must satisfy 0 < mu < epsilon_assoc")
        if self.search_depth < 1:
            raise ConfigError("search_depth: must be >= 1")
        if self.psi_window < 2:
            raise ConfigError("psi_window: must be >= 2")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations: must be >= 1")
        if self.min_user_distance < 0:
            raise ConfigError("min_user_distance: must be >= 0")
        if self.coupling_rhs not in COUPLING_VARIANTS:
            raise ConfigError(
                f"coupling_rhs: must be one of {COUPLING_VARIANTS}, got {self.coupling_rhs!r}"
            )


REQUIRED_KEYS = (
    "n_bbu_antennas",
    "n_raus",
    "n_rau_antennas",
    "n_users",
    "total_power",
    "carrier_freq",
    "cell_radius",
)

_FIELD_TYPES = {f.name: f.type for f in fields(SystemConfig)}


def _coerce(key, value):
    """Check the declared type of one config entry, allowing int -> float."""
    want = _FIELD_TYPES[key]
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected integer, got {value!r}")
        return value
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected number, got {value!r}")
        return float(value)
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected boolean, got {value!r}")
        return value
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected string, got {value!r}")
        return value
    return value


def load_config(source) -> SystemConfig:
    """Build a validated SystemConfig from a mapping, a YAML string, or a file path.

    Required keys: the scenario dimensions and radio parameters in
    REQUIRED_KEYS. Everything else falls back to the documented defaults.
    Unknown keys are rejected.
    """
    if isinstance(source, SystemConfig):
        return source
    if isinstance(source, (str, Path)) and Path(source).exists():
        text = Path(source).read_text()
        doc = yaml.safe_load(text)
    elif isinstance(source, str):
        doc = yaml.safe_load(source)
    else:
        doc = source
    if not isinstance(doc, dict):
        raise ConfigError(f"config document must be a key-value mapping, got {type(doc).__name__}")

    unknown = set(doc) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = [k for k in REQUIRED_KEYS if k not in doc]
    if missing:
        raise ConfigError(f"missing required config keys: {missing}")

    kwargs = {k: _coerce(k, v) for k, v in doc.items()}
    return SystemConfig(**kwargs)


def with_overrides(cfg: SystemConfig, **kwargs) -> SystemConfig:
    """Copy of cfg with fields replaced (re-validated)."""
    return replace(cfg, **kwargs)
