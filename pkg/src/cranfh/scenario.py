"""Cell geometry, path loss and seeded random channel generation.

All randomness flows through an explicit numpy Generator so that identical
seeds reproduce channels bit-exactly.
"""

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig

RAU_RING_FRACTION = 2.0 / 3.0   # RAUs sit on the ring of (2/3) * cell radius
PLACEMENT_RETRY_CAP = 10000


class PlacementError(RuntimeError):
    """Raised when rejection sampling cannot place a user."""


@dataclass(frozen=True)
class Geometry:
    """Node positions in meters, BBU at the origin."""

    bbu_position: np.ndarray       # shape (2,)
    rau_positions: np.ndarray      # shape (N, 2)
    user_positions: np.ndarray     # shape (K, 2)


@dataclass(frozen=True)
class ChannelSet:
    """One channel realization.

    fronthaul_blocks[n] is the N_r x N_B matrix from the BBU to RAU n;
    access_rows[k] is the 1 x (N*N_r) row from all RAU antennas to user k.
    """

    fronthaul_blocks: list          # N matrices, each (N_r, N_B) complex
    access_rows: list               # K vectors, each (N*N_r,) complex
    geometry: Geometry

    @property
    def fronthaul_stacked(self) -> np.ndarray:
        """Full (N*N_r, N_B) fronthaul matrix."""
        return np.vstack(self.fronthaul_blocks)

    @property
    def access_stacked(self) -> np.ndarray:
        """Full (K, N*N_r) access matrix."""
        if not self.access_rows:
            n_r = self.fronthaul_stacked.shape[0]
            return np.zeros((0, n_r), dtype=complex)
        return np.vstack(self.access_rows)


def path_loss_db(distance_m: float, carrier_freq_ghz: float) -> float:
    """Link path loss in dB for distance in meters and carrier frequency in GHz."""
    if distance_m <= 0:
        raise ValueError(f"distance must be > 0, got {distance_m}")
    if carrier_freq_ghz <= 0:
        raise ValueError(f"carrier frequency must be > 0, got {carrier_freq_ghz}")
    return -30.18 + 20.0 * np.log10(distance_m) + 20.0 * np.log10(carrier_freq_ghz)


def place_nodes(cfg: SystemConfig, rng: np.random.Generator) -> Geometry:
    """Place the BBU at the origin, RAUs equally spaced on the inner ring,
    and users uniformly over the disk, redrawn while any transmitter is
    closer than cfg.min_user_distance."""
    bbu = np.zeros(2)
    ring = RAU_RING_FRACTION * cfg.cell_radius
    angles = 2.0 * np.pi * np.arange(cfg.n_raus) / cfg.n_raus
    raus = ring * np.column_stack([np.cos(angles), np.sin(angles)])

    transmitters = np.vstack([bbu[None, :], raus])
    users = np.zeros((cfg.n_users, 2))
    for k in range(cfg.n_users):
        for _ in range(PLACEMENT_RETRY_CAP):
            r = cfg.cell_radius * np.sqrt(rng.uniform())
            phi = rng.uniform(0.0, 2.0 * np.pi)
            pos = np.array([r * np.cos(phi), r * np.sin(phi)])
            if np.min(np.linalg.norm(transmitters - pos, axis=1)) >= cfg.min_user_distance:
                users[k] = pos
                break
        else:
            raise PlacementError(f"could not place user {k} after {PLACEMENT_RETRY_CAP} draws")
    return Geometry(bbu_position=bbu, rau_positions=raus, user_positions=users)


def _gain(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circularly-symmetric complex Gaussian entries."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def draw_channels(cfg: SystemConfig, geom: Geometry, rng: np.random.Generator) -> ChannelSet:
    """Draw one channel realization: i.i.d. complex Gaussian entries scaled by
    the amplitude path-loss factor of each link."""
    n_r = cfg.n_rau_antennas
    fronthaul = []
    for n in range(cfg.n_raus):
        d = np.linalg.norm(geom.rau_positions[n] - geom.bbu_position)
        amp = 10.0 ** (-path_loss_db(d, cfg.carrier_freq) / 20.0)
        fronthaul.append(amp * _gain(rng, (n_r, cfg.n_bbu_antennas)))

    access = []
    for k in range(cfg.n_users):
        row = np.zeros(cfg.n_streams, dtype=complex)
        for n in range(cfg.n_raus):
            d = np.linalg.norm(geom.user_positions[k] - geom.rau_positions[n])
            amp = 10.0 ** (-path_loss_db(d, cfg.carrier_freq) / 20.0)
            row[n * n_r:(n + 1) * n_r] = amp * _gain(rng, n_r)
        access.append(row)

    return ChannelSet(fronthaul_blocks=fronthaul, access_rows=access, geometry=geom)


def build_instance(cfg: SystemConfig, seed=None) -> ChannelSet:
    """Geometry + channels from one seed (cfg.rng_seed unless overridden)."""
    rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
    geom = place_nodes(cfg, rng)
    return draw_channels(cfg, geom, rng)
