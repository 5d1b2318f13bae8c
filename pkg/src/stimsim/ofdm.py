"""Single-antenna OFDM baseline at matched spectral efficiency.

N subcarriers all carry modulation symbols; the unitary IDFT plus a length
L-1 cyclic prefix diagonalizes the multipath channel, so per-subcarrier
nearest-symbol decisions (combined across receive antennas) are exact ML.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alphabet import Alphabet, ConfigError, bits_to_index, index_to_bits
from .channel import ChannelRealization


@dataclass(frozen=True)
class OfdmConfig:
    n_r: int
    n_slots: int
    l_taps: int
    alphabet: Alphabet

    def __post_init__(self):
        if self.n_slots < self.l_taps:
            raise ConfigError(f"need N >= L, got N={self.n_slots}, L={self.l_taps}")
        if self.n_r < 1 or self.l_taps < 1:
            raise ConfigError("n_r and l_taps must be >= 1")

    @property
    def n_t(self) -> int:
        # single transmit antenna, single RF chain
        return 1

    @property
    def bits_per_frame(self) -> int:
        return self.n_slots * self.alphabet.m_bits


def ofdm_modulate(bits, cfg: OfdmConfig) -> np.ndarray:
    """Map bits to N subcarrier symbols and emit the CP-extended time block."""
    bits = np.asarray(bits, dtype=np.int8)
    m = cfg.alphabet.m_bits
    n = cfg.n_slots
    if bits.size != n * m:
        raise ValueError(f"expected {n * m} bits, got {bits.size}")
    idx = [bits_to_index(bits[i * m : (i + 1) * m]) for i in range(n)]
    freq = cfg.alphabet.points[idx]
    time = np.fft.ifft(freq, norm="ortho")
    return np.concatenate([time[n - cfg.l_taps + 1 :], time])


def ofdm_transmit(
    block: np.ndarray, ch: ChannelRealization, sigma2: float, rng: np.random.Generator
) -> np.ndarray:
    """Push a CP-extended block through the multipath channel.

    Returns the (n_r, N) received samples after CP removal: per-antenna
    linear convolution with the taps, keeping samples L-1 .. N+L-2.
    """
    l_taps, n_r, n_t = ch.taps.shape
    if n_t != 1:
        raise ValueError("OFDM baseline is single-transmit-antenna")
    n = block.size - (l_taps - 1)
    y = np.empty((n_r, n), dtype=np.complex128)
    for r in range(n_r):
        full = np.convolve(block, ch.taps[:, r, 0])
        y[r] = full[l_taps - 1 : l_taps - 1 + n]
    noise = np.sqrt(sigma2 / 2.0) * (
        rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
    )
    return y + noise


def ofdm_detect(y: np.ndarray, ch: ChannelRealization, sigma2: float, cfg: OfdmConfig) -> np.ndarray:
    """Per-subcarrier ML over the diagonalized channel, demapped to bits."""
    n = cfg.n_slots
    freq_rx = np.fft.fft(y, axis=1, norm="ortho")  # (n_r, N)
    lam = np.fft.fft(ch.taps[:, :, 0], n=n, axis=0).T  # (n_r, N) frequency response
    pts = cfg.alphabet.points
    metric = np.abs(freq_rx[:, :, None] - lam[:, :, None] * pts[None, None, :]) ** 2
    idx = np.argmin(metric.sum(axis=0), axis=1)
    m = cfg.alphabet.m_bits
    out = np.empty(n * m, dtype=np.int8)
    for i, v in enumerate(idx):
        out[i * m : (i + 1) * m] = index_to_bits(int(v), m)
    return out


def joint_ml_reference(y: np.ndarray, ch: ChannelRealization, cfg: OfdmConfig) -> np.ndarray:
    """Exhaustive joint ML over all |alphabet|^N frames (oracle for tests)."""
    n, m = cfg.n_slots, cfg.alphabet.m_bits
    pts = cfg.alphabet.points
    lam = np.fft.fft(ch.taps[:, :, 0], n=n, axis=0).T
    freq_rx = np.fft.fft(y, axis=1, norm="ortho")
    best_bits, best_val = None, np.inf
    for v in range(pts.size**n):
        digits = [(v // pts.size ** (n - 1 - i)) % pts.size for i in range(n)]
        s = pts[digits]
        val = float(np.sum(np.abs(freq_rx - lam * s[None, :]) ** 2))
        if val < best_val:
            best_val = val
            best_bits = np.concatenate([index_to_bits(d, m) for d in digits])
    return best_bits
