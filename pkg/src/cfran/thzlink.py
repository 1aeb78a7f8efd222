"""Fiber-THz-fiber link: heterodyne frequency plan, rate arithmetic and a
DP-QPSK 2x2 MIMO baseband BER simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

WR22_BAND = (330e9, 500e9)
SD_FEC_THRESHOLD = 1.56e-2


@dataclass(frozen=True)
class FrequencyPlan:
    f_tx_signal: float
    f_tx_lo: float
    f_thz: float
    f_if: float
    f_down_lo: float
    f_rx_lo: float
    f_rx_signal: float
    in_band: bool = True


def frequency_plan(f_tx_signal: float, f_tx_lo: float, f_rx_lo: float,
                   f_if: float = 20e9, band: tuple[float, float] = WR22_BAND) -> FrequencyPlan:
    """Carrier bookkeeping through photomixing and hybrid down-conversion.

    The THz carrier is the optical beat ``f_tx_signal - f_tx_lo``.  The
    receiver mixes down to ``f_if`` with an electrical LO at
    ``f_thz - f_if``, and the intensity modulator's upper sideband around
    ``f_rx_lo`` is kept.  ``in_band`` is False when the carrier lies outside
    ``band``.
    """
    if f_tx_signal <= f_tx_lo:
        raise ValueError("f_tx_signal must exceed f_tx_lo")
    if min(f_tx_signal, f_tx_lo, f_rx_lo, f_if) <= 0:
        raise ValueError("frequencies must be positive")
    f_thz = f_tx_signal - f_tx_lo
    if f_if >= f_thz:
        raise ValueError("IF must be below the THz carrier")
    return FrequencyPlan(
        f_tx_signal=f_tx_signal, f_tx_lo=f_tx_lo, f_thz=f_thz, f_if=f_if,
        f_down_lo=f_thz - f_if, f_rx_lo=f_rx_lo, f_rx_signal=f_rx_lo + f_if,
        in_band=band[0] <= f_thz <= band[1],
    )


def line_rate(baud: float, polarizations: int = 2, bits_per_symbol_per_pol: int = 2) -> float:
    if baud <= 0 or polarizations <= 0 or bits_per_symbol_per_pol <= 0:
        raise ValueError("rate inputs must be positive")
    return baud * polarizations * bits_per_symbol_per_pol


def net_rate(line_rate: float, total_overhead: float) -> float:
    if not 0.0 <= total_overhead < 1.0:
        raise ValueError("total_overhead must be in [0, 1)")
    return line_rate * (1.0 - total_overhead)


def overhead_between(line: float, net: float) -> float:
    """Total overhead fraction that maps ``line`` onto ``net``."""
    return 1.0 - net / line


def qpsk_ber_theory(ebn0_db):
    """Gray QPSK bit error rate ``Q(sqrt(2 Eb/N0))``."""
    ebn0 = 10.0 ** (np.asarray(ebn0_db, dtype=float) / 10.0)
    return 0.5 * erfc(np.sqrt(ebn0))


@dataclass(frozen=True)
class LinkConfig:
    """``snr_db`` is Eb/N0 per bit at the equalizer input for a unit channel."""
    baud: float = 31.379e9
    polarizations: int = 2
    bits_per_symbol_per_pol: int = 2
    mimo_channel: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=complex), compare=False)
    snr_db: float = 4.0
    fec_threshold: float = SD_FEC_THRESHOLD
    fec_overhead: float = 0.15

    def __post_init__(self):
        if self.baud <= 0:
            raise ValueError("baud must be positive")
        h = np.asarray(self.mimo_channel, dtype=complex)
        if h.shape != (self.polarizations, self.polarizations):
            raise ValueError("mimo_channel must be square with one row per polarization")
        object.__setattr__(self, "mimo_channel", h)


@dataclass(frozen=True)
class LinkReport:
    ber: float
    pre_fec_ok: bool
    line_rate: float
    net_rate: float
    n_bits: int
    n_errors: int


def simulate_ber(config: LinkConfig, n_symbols: int, seed: int) -> LinkReport:
    """Gray QPSK per polarization, mixed by the 2x2 channel, AWGN, ZF with
    the known channel, hard decisions."""
    if n_symbols < 10_000:
        raise ValueError("n_symbols must be >= 1e4")
    h = config.mimo_channel
    if abs(np.linalg.det(h)) < 1e-12 or not np.all(np.isfinite(h)):
        raise ValueError("MIMO channel is singular")
    n_pol = config.polarizations
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(2, n_pol, n_symbols), dtype=np.int8)
    x = ((1 - 2 * bits[0]) + 1j * (1 - 2 * bits[1])) / math.sqrt(2.0)
    noise = (rng.standard_normal((n_pol, n_symbols)) + 1j * rng.standard_normal((n_pol, n_symbols)))
    if math.isinf(config.snr_db) and config.snr_db > 0:
        n0 = 0.0
    else:
        n0 = 0.5 / 10.0 ** (config.snr_db / 10.0)  # Es = 1, Eb = Es/2
    y = h @ x + math.sqrt(n0 / 2.0) * noise
    xh = np.linalg.solve(h, y)
    dec = np.stack([(xh.real < 0), (xh.imag < 0)]).astype(np.int8)
    errors = int(np.count_nonzero(dec != bits))
    ber = errors / bits.size
    lr = line_rate(config.baud, n_pol, config.bits_per_symbol_per_pol)
    return LinkReport(ber=ber, pre_fec_ok=ber <= config.fec_threshold, line_rate=lr,
                      net_rate=net_rate(lr, config.fec_overhead), n_bits=bits.size, n_errors=errors)
