"""Geometry, path loss, frequency-selective fading and RSRP.

Channel tensors are indexed ``[rru_antenna, ue_antenna, subcarrier]`` with
antennas stacked across all RRUs / UEs in topology order.  Each simulated
subcarrier stands for one PRB (the PRB-representative tone) unless the
topology asks for more tones per PRB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Rru:
    position: tuple[float, float]
    n_antennas: int = 1
    edu_id: int = 0
    tx_power_dbm: float = 30.0


@dataclass(frozen=True)
class Ue:
    position: tuple[float, float]
    n_antennas: int = 1
    serving_cell: int = 0
    tx_power_dbm: float = 23.0


@dataclass(frozen=True)
class Topology:
    rrus: tuple[Rru, ...]
    ues: tuple[Ue, ...]
    carrier_freq: float = 4.9e9
    bandwidth: float = 100e6
    n_subcarriers: int = 273
    n_prbs: int = 273

    def __post_init__(self):
        object.__setattr__(self, "rrus", tuple(self.rrus))
        object.__setattr__(self, "ues", tuple(self.ues))
        if not self.rrus:
            raise ValueError("topology needs at least one RRU")
        for node in self.rrus + self.ues:
            if not all(math.isfinite(c) for c in node.position):
                raise ValueError(f"non-finite position {node.position}")
            if node.n_antennas < 1:
                raise ValueError("n_antennas must be >= 1")
        for ue in self.ues:
            if not 0 <= ue.serving_cell < len(self.rrus):
                raise ValueError(f"serving_cell {ue.serving_cell} is not an RRU index")
        if self.n_prbs < 1 or self.n_subcarriers % self.n_prbs:
            raise ValueError("n_subcarriers must be an integer multiple of n_prbs")
        if self.carrier_freq <= 0 or self.bandwidth <= 0:
            raise ValueError("carrier_freq and bandwidth must be positive")

    @property
    def n_rru_antennas(self) -> int:
        return sum(r.n_antennas for r in self.rrus)

    @property
    def n_ue_antennas(self) -> int:
        return sum(u.n_antennas for u in self.ues)

    @property
    def prb_bandwidth(self) -> float:
        return self.bandwidth / self.n_prbs

    @property
    def serving(self) -> np.ndarray:
        return np.array([u.serving_cell for u in self.ues], dtype=int)

    def rru_slices(self) -> list[slice]:
        return _slices([r.n_antennas for r in self.rrus])

    def ue_slices(self) -> list[slice]:
        return _slices([u.n_antennas for u in self.ues])

    def distances(self) -> np.ndarray:
        """RRU-to-UE distances in meters, shape ``(n_rru, n_ue)``."""
        a = np.array([r.position for r in self.rrus], dtype=float)
        b = np.array([u.position for u in self.ues], dtype=float).reshape(-1, 2)
        return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)

    def prb_tones(self) -> np.ndarray:
        """Index of the representative (center) subcarrier of each PRB."""
        per = self.n_subcarriers // self.n_prbs
        return np.arange(self.n_prbs) * per + per // 2


def _slices(counts: Sequence[int]) -> list[slice]:
    edges = np.concatenate([[0], np.cumsum(counts)]).astype(int)
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


@dataclass(frozen=True)
class FadingProfile:
    n_taps: int = 8
    delay_decay: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_taps < 1:
            raise ValueError("n_taps must be >= 1")
        if self.delay_decay < 0:
            raise ValueError("delay_decay must be >= 0")

    def tap_powers(self) -> np.ndarray:
        p = np.exp(-self.delay_decay * np.arange(self.n_taps))
        return p / p.sum()


@dataclass
class Csi:
    h: np.ndarray
    long_term_gain: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not np.all(np.isfinite(self.h)):
            raise ValueError("channel tensor has non-finite entries")

    def block(self, topology: Topology, rru: int, ue: int) -> np.ndarray:
        return self.h[topology.rru_slices()[rru], topology.ue_slices()[ue], :]


def path_loss_db(distance, carrier):
    """Close-in path loss (dB) for distances in meters and carrier in Hz.

    Valid from 1 m; raises ``ValueError`` below that.
    """
    d = np.asarray(distance, dtype=float)
    if np.any(d < 1.0):
        raise ValueError("path loss model is only valid for distance >= 1 m")
    pl = 32.4 + 20.0 * np.log10(carrier / 1e9) + 31.9 * np.log10(d)
    return float(pl) if pl.ndim == 0 else pl


def long_term_gains(topology: Topology) -> np.ndarray:
    """Linear path gain per (rru, ue); distances are floored at 1 m."""
    d = np.maximum(topology.distances(), 1.0)
    return 10.0 ** (-path_loss_db(d, topology.carrier_freq) / 10.0)


def _rng(fading: FadingProfile, seed: int) -> np.random.Generator:
    return np.random.default_rng([int(fading.seed) & (2**64 - 1), int(seed) & (2**64 - 1)])


def generate_csi(topology: Topology, fading: FadingProfile | None = None, seed: int = 0) -> Csi:
    """Draw one frequency-selective channel realization.

    Every (RRU antenna, UE antenna) link gets independent complex-Gaussian
    taps with an exponential power-delay profile; the per-subcarrier
    response is the DFT of the taps over ``n_subcarriers`` tones, scaled by
    the square root of the pair's path gain.
    """
    fading = fading or FadingProfile()
    rng = _rng(fading, seed)
    m, k, n = topology.n_rru_antennas, topology.n_ue_antennas, topology.n_subcarriers
    amp = np.sqrt(fading.tap_powers() / 2.0)
    taps = (rng.standard_normal((m, k, fading.n_taps))
            + 1j * rng.standard_normal((m, k, fading.n_taps))) * amp
    if fading.n_taps == 1:
        h = np.repeat(taps, n, axis=2)
    else:
        phase = np.exp(-2j * np.pi * np.outer(np.arange(fading.n_taps), np.arange(n)) / n)
        h = taps @ phase
    gain = long_term_gains(topology)
    scale = np.sqrt(_expand(gain, topology))
    return Csi(h=h * scale[:, :, None], long_term_gain=gain)


def _expand(pair_values: np.ndarray, topology: Topology) -> np.ndarray:
    """Broadcast a per-(rru, ue) array to per-(rru antenna, ue antenna)."""
    rows = np.repeat(np.arange(len(topology.rrus)), [r.n_antennas for r in topology.rrus])
    cols = np.repeat(np.arange(len(topology.ues)), [u.n_antennas for u in topology.ues])
    return pair_values[np.ix_(rows, cols)]


def rsrp_dbm(csi: Csi, topology: Topology, cell: int, ue: int) -> float:
    """RSRP of ``cell`` at ``ue``: RRU transmit power plus long-term gain."""
    if not 0 <= cell < len(topology.rrus):
        raise IndexError(f"cell {cell} out of range")
    if not 0 <= ue < len(topology.ues):
        raise IndexError(f"ue {ue} out of range")
    return topology.rrus[cell].tx_power_dbm + 10.0 * math.log10(csi.long_term_gain[cell, ue])


def rsrp_matrix(csi: Csi, topology: Topology) -> np.ndarray:
    """All RSRPs as ``(n_ue, n_cell)`` in dBm."""
    tx = np.array([r.tx_power_dbm for r in topology.rrus])
    return (tx[:, None] + 10.0 * np.log10(csi.long_term_gain)).T


def prb_gains(csi: Csi, topology: Topology) -> np.ndarray:
    """Per-PRB channel power gain per (cell, ue), shape ``(n_cell, n_ue, n_prbs)``.

    Power is averaged over antenna pairs (no array gain) on each PRB's
    representative tone.
    """
    tones = topology.prb_tones()
    p = np.abs(csi.h[:, :, tones]) ** 2
    out = np.empty((len(topology.rrus), len(topology.ues), topology.n_prbs))
    for i, rs in enumerate(topology.rru_slices()):
        for j, us in enumerate(topology.ue_slices()):
            out[i, j] = p[rs, us].mean(axis=(0, 1))
    return out
