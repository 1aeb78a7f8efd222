"""Spatiotemporal 2-D channel coding.

Each of ``S`` information streams is encoded in time with the terminated
rate-1/2, memory-2 convolutional code with generators (7, 5) octal.  A
single-parity-check stream across the ``S`` time codewords is then added in
space, giving a ``[n_time, S + 1]`` grid.  Because the time code is linear,
the parity column is itself a valid time codeword.

Decoding runs, per iteration, a min-sum parity refinement on every row
(rows are independent) followed by per-column trellis decoding.  LLRs are
positive when bit 0 is more likely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

G1, G2 = 0o7, 0o5
MEMORY = 2
N_STATES = 1 << MEMORY
# Large finite LLR used for noiseless channels.
LLR_CLIP = 1e6


def _trellis():
    """Next state and the two output bits for every (state, input)."""
    nxt = np.zeros((N_STATES, 2), dtype=int)
    out = np.zeros((N_STATES, 2, 2), dtype=np.int8)
    for s in range(N_STATES):
        s1, s2 = (s >> 1) & 1, s & 1  # s1: most recent input
        for u in (0, 1):
            out[s, u, 0] = u ^ s1 ^ s2
            out[s, u, 1] = u ^ s2
            nxt[s, u] = (u << 1) | s1
    return nxt, out


NEXT_STATE, OUTPUT = _trellis()
# (prev state, input) pairs entering each state, used by the decoders.
_PREV = np.array([[ps for ps in range(N_STATES) for u in (0, 1) if NEXT_STATE[ps, u] == s]
                  for s in range(N_STATES)])
_PREV_IN = np.array([[u for ps in range(N_STATES) for u in (0, 1) if NEXT_STATE[ps, u] == s]
                     for s in range(N_STATES)])


@dataclass(frozen=True)
class Code2DConfig:
    n_info_per_stream: int = 100
    n_streams: int = 4
    decoder_iterations: int = 1

    def __post_init__(self):
        if self.n_info_per_stream < 1:
            raise ValueError("n_info_per_stream must be >= 1")
        if self.n_streams < 1:
            raise ValueError("n_streams must be >= 1")
        if self.decoder_iterations < 1:
            raise ValueError("decoder_iterations must be >= 1")

    @property
    def n_time(self) -> int:
        return 2 * (self.n_info_per_stream + MEMORY)

    @property
    def rate(self) -> float:
        """Information bits per transmitted bit."""
        return self.n_streams * self.n_info_per_stream / (self.n_time * (self.n_streams + 1))


# -- time-domain code ---------------------------------------------------------

def conv_encode(info) -> np.ndarray:
    """Terminated (7,5) encoding along the last axis; output is interleaved
    ``[c1_0, c2_0, c1_1, c2_1, ...]`` with ``2*(n+2)`` bits."""
    u = np.asarray(info, dtype=np.int8) & 1
    u = np.concatenate([u, np.zeros(u.shape[:-1] + (MEMORY,), dtype=np.int8)], axis=-1)
    s1 = np.zeros_like(u)
    s2 = np.zeros_like(u)
    s1[..., 1:] = u[..., :-1]
    s2[..., 2:] = u[..., :-2]
    c = np.empty(u.shape[:-1] + (2 * u.shape[-1],), dtype=np.int8)
    c[..., 0::2] = u ^ s1 ^ s2
    c[..., 1::2] = u ^ s2
    return c


def _branch_metrics(llr: np.ndarray) -> np.ndarray:
    """Correlation metric per (batch, step, state, input); larger is better."""
    l1 = llr[..., 0::2]
    l2 = llr[..., 1::2]
    sgn = 1 - 2 * OUTPUT.astype(float)  # bit 0 -> +1
    return 0.5 * (l1[..., None, None] * sgn[None, None, :, :, 0]
                  + l2[..., None, None] * sgn[None, None, :, :, 1])


def viterbi_decode(llr, n_info: int) -> np.ndarray:
    """Soft-input Viterbi for terminated (7,5) codewords.

    ``llr`` has shape ``[batch, 2*(n_info+2)]``; returns ``[batch, n_info]``
    decoded bits.  Ties go to the first entering branch.
    """
    llr = np.atleast_2d(np.asarray(llr, dtype=float))
    batch, n = llr.shape
    steps = n // 2
    if steps != n_info + MEMORY:
        raise ValueError("LLR length does not match n_info")
    # only four distinct branch metrics per step, indexed by the output pair 2*c1 + c2
    l1, l2 = 0.5 * llr[:, 0::2], 0.5 * llr[:, 1::2]
    uniq = np.stack([l1 + l2, l1 - l2, l2 - l1, -l1 - l2], axis=-1)
    pattern = 2 * OUTPUT[..., 0] + OUTPUT[..., 1]
    k0, k1 = pattern[_PREV[:, 0], _PREV_IN[:, 0]], pattern[_PREV[:, 1], _PREV_IN[:, 1]]
    p0, p1 = _PREV[:, 0], _PREV[:, 1]
    metric = np.full((batch, N_STATES), -np.inf)
    metric[:, 0] = 0.0
    choice = np.zeros((steps, batch, N_STATES), dtype=bool)
    for t in range(steps):
        u = uniq[:, t]
        c0 = metric[:, p0] + u[:, k0]
        c1 = metric[:, p1] + u[:, k1]
        pick = c1 > c0
        choice[t] = pick
        metric = np.where(pick, c1, c0)
    state = np.zeros(batch, dtype=int)  # terminated in state 0
    bits = np.zeros((batch, steps), dtype=np.int8)
    rows = np.arange(batch)
    for t in range(steps - 1, -1, -1):
        b = choice[t, rows, state].astype(int)
        bits[:, t] = _PREV_IN[state, b]
        state = _PREV[state, b]
    return bits[:, :n_info]


def maxlog_map(llr) -> np.ndarray:
    """Max-log BCJR over terminated (7,5) codewords.

    Returns extrinsic LLRs on the coded bits, same shape as ``llr``.
    """
    llr = np.atleast_2d(np.asarray(llr, dtype=float))
    batch, n = llr.shape
    steps = n // 2
    bm = _branch_metrics(llr)
    alpha = np.full((steps + 1, batch, N_STATES), -np.inf)
    beta = np.full((steps + 1, batch, N_STATES), -np.inf)
    alpha[0, :, 0] = 0.0
    beta[steps, :, 0] = 0.0
    for t in range(steps):
        a = alpha[t][:, _PREV] + bm[:, t, _PREV, _PREV_IN]
        alpha[t + 1] = a.max(axis=-1)
        alpha[t + 1] -= alpha[t + 1].max(axis=-1, keepdims=True)
    for t in range(steps - 1, -1, -1):
        b = bm[:, t] + beta[t + 1][:, NEXT_STATE]
        beta[t] = b.max(axis=-1)
        beta[t] -= beta[t].max(axis=-1, keepdims=True)
    # full path metric for each (step, state, input)
    tot = alpha[:-1][..., None] + np.moveaxis(bm, 1, 0) + beta[1:][:, :, NEXT_STATE]
    ext = np.empty_like(llr)
    for j in (0, 1):
        is0 = OUTPUT[:, :, j] == 0
        m0 = np.where(is0, tot, -np.inf).max(axis=(-1, -2))
        m1 = np.where(~is0, tot, -np.inf).max(axis=(-1, -2))
        ext[:, j::2] = (m0 - m1).T - llr[:, j::2]
    return np.clip(ext, -LLR_CLIP, LLR_CLIP)


# -- space-domain code --------------------------------------------------------

def spc_minsum(llr: np.ndarray) -> np.ndarray:
    """Min-sum extrinsic LLR of every entry of each row's parity check.

    Operates along the last axis; each row is independent.
    """
    llr = np.asarray(llr, dtype=float)
    mag = np.abs(llr)
    sgn = np.where(llr < 0, -1.0, 1.0)
    total_sign = np.prod(sgn, axis=-1, keepdims=True)
    first = np.argmin(mag, axis=-1)[..., None]
    is_min = np.arange(llr.shape[-1]) == first
    m1 = np.take_along_axis(mag, first, axis=-1)
    m2 = np.where(is_min, np.inf, mag).min(axis=-1, keepdims=True)
    return total_sign * sgn * np.where(is_min, m2, m1)


# -- 2-D code -----------------------------------------------------------------

def encode2d(info, config: Code2DConfig) -> np.ndarray:
    """Encode ``info[S, n_info]`` into the ``[n_time, S+1]`` code grid."""
    info = np.asarray(info)
    expected = (config.n_streams, config.n_info_per_stream)
    if info.shape[-2:] != expected:
        raise ValueError(f"info shape {info.shape} does not match {expected}")
    cw = conv_encode(info)  # [..., S, n_time]
    parity = np.bitwise_xor.reduce(cw, axis=-2)
    grid = np.concatenate([cw, parity[..., None, :]], axis=-2)
    return np.swapaxes(grid, -1, -2)


def decode2d(llrs, config: Code2DConfig, ablate_space: bool = False) -> np.ndarray:
    """Decode an LLR grid ``[..., n_time, S+1]`` to info bits ``[..., S, n_info]``.

    With ``ablate_space`` the parity stage is skipped and only the time
    decoders run on the channel LLRs of the information columns.
    """
    llrs = np.asarray(llrs, dtype=float)
    s = config.n_streams
    if llrs.shape[-2:] != (config.n_time, s + 1):
        raise ValueError(f"LLR grid shape {llrs.shape[-2:]} != {(config.n_time, s + 1)}")
    lead = llrs.shape[:-2]
    ch = llrs.reshape((-1, config.n_time, s + 1))
    n_info = config.n_info_per_stream
    if ablate_space:
        cols = np.swapaxes(ch[:, :, :s], 1, 2).reshape(-1, config.n_time)
        return viterbi_decode(cols, n_info).reshape(lead + (s, n_info))
    prior = np.zeros_like(ch)
    for it in range(config.decoder_iterations):
        # the time decoders only see channel + space extrinsic, never their own output
        refined = ch + spc_minsum(ch + prior)
        if it == config.decoder_iterations - 1:
            cols = np.swapaxes(refined[:, :, :s], 1, 2).reshape(-1, config.n_time)
            return viterbi_decode(cols, n_info).reshape(lead + (s, n_info))
        # the parity column is a time codeword too, so every column gets a trellis pass
        cols = np.swapaxes(refined, 1, 2).reshape(-1, config.n_time)
        prior = np.swapaxes(maxlog_map(cols).reshape(-1, s + 1, config.n_time), 1, 2)


def bpsk_llr(bits, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Transmit bits as BPSK (0 -> +1) over AWGN and return channel LLRs."""
    x = 1.0 - 2.0 * np.asarray(bits, dtype=float)
    if sigma2 == 0:
        return x * LLR_CLIP
    y = x + np.sqrt(sigma2) * rng.standard_normal(x.shape)
    return np.clip(2.0 * y / sigma2, -LLR_CLIP, LLR_CLIP)


def ber_sim(config: Code2DConfig, ebn0_db: float, n_blocks: int, seed: int,
            ablate_space: bool = False, return_counts: bool = False):
    """Monte-Carlo info-bit error rate of the 2-D code, BPSK over AWGN.

    Eb/N0 counts the parity stream and termination as overhead.  The
    information bits and noise depend only on ``seed``, so full and
    ablated runs with the same seed see identical realizations.
    """
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    rng = np.random.default_rng(seed)
    info = rng.integers(0, 2, size=(n_blocks, config.n_streams, config.n_info_per_stream), dtype=np.int8)
    grid = encode2d(info, config)
    if np.isinf(ebn0_db) and ebn0_db > 0:
        sigma2 = 0.0
    else:
        sigma2 = 1.0 / (2.0 * config.rate * 10.0 ** (ebn0_db / 10.0))
    llr = bpsk_llr(grid, sigma2, rng)
    dec = decode2d(llr, config, ablate_space=ablate_space)
    errors = int(np.count_nonzero(dec != info))
    ber = errors / info.size
    return (ber, errors, info.size) if return_counts else ber


def latency_terms(config: Code2DConfig, total_info_bits: int,
                  time_per_trellis_step: float) -> tuple[float, float]:
    """(time-domain term, space-stage term) of the decoding latency.

    Bits are packed into blocks of ``S * n_info_per_stream``; blocks are
    decoded back to back, each taking ``n_time`` trellis steps, and the
    row-parallel space stage adds a single pipeline step.
    """
    per_block = config.n_streams * config.n_info_per_stream
    if total_info_bits < 1 or total_info_bits % per_block:
        raise ValueError(f"{total_info_bits} info bits do not fill blocks of {per_block}")
    n_blocks = total_info_bits // per_block
    return n_blocks * config.n_time * time_per_trellis_step, time_per_trellis_step


def latency_model(config: Code2DConfig, total_info_bits: int, time_per_trellis_step: float) -> float:
    time_term, space_term = latency_terms(config, total_info_bits, time_per_trellis_step)
    return time_term + space_term
