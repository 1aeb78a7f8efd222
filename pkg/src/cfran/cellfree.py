"""Cell-free transmission: pilots, estimation, joint LMMSE, RB-grouped
precoding, reciprocity calibration and the peak-SE calculator.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .channel import Csi, Topology


@dataclass(frozen=True)
class PilotPlan:
    n_pilots: int
    assignment: tuple[int, ...]

    def sharers(self, ue: int) -> list[int]:
        p = self.assignment[ue]
        return [v for v, q in enumerate(self.assignment) if q == p]


@dataclass(frozen=True)
class CalibrationCoefficients:
    c: np.ndarray
    reference_antenna: int = 0


@dataclass(frozen=True)
class DetectionReport:
    sinr: np.ndarray
    se: float
    per_stream_se: np.ndarray


# -- pilots and estimation ---------------------------------------------------

def assign_pilots(topology: Topology, csi_longterm: Csi, n_pilots: int) -> PilotPlan:
    """Greedy pilot assignment.

    UEs are visited strongest-first (total long-term gain over RRUs).  Each
    takes the pilot whose current holders have the smallest worst-case
    cross gain ``sum_r sqrt(beta_ru * beta_rv)`` to it; unused pilots win
    outright, so the plan is injective whenever ``n_ue <= n_pilots``.
    """
    if n_pilots < 1:
        raise ValueError("n_pilots must be >= 1")
    beta = np.asarray(csi_longterm.long_term_gain, dtype=float)
    n_ue = len(topology.ues)
    amp = np.sqrt(beta)
    cross = amp.T @ amp
    order = sorted(range(n_ue), key=lambda u: (-beta[:, u].sum(), u))
    holders: list[list[int]] = [[] for _ in range(n_pilots)]
    assignment = [0] * n_ue
    for u in order:
        cost = [max((cross[u, v] for v in hs), default=-np.inf) for hs in holders]
        p = int(np.argmin(cost))
        holders[p].append(u)
        assignment[u] = p
    return PilotPlan(n_pilots, tuple(assignment))


def estimate_channels(csi: Csi, plan: PilotPlan, noise_var: float, seed: int,
                      topology: Topology | None = None) -> Csi:
    """Least-squares channel estimate under pilot reuse.

    UEs sharing a pilot see the same despread observation: the sum of all
    their channels plus one draw of CN(0, noise_var) noise per entry.
    Antenna ``i`` of a UE is matched with antenna ``i`` of its co-pilot UEs.
    Without a topology every UE is taken as single-antenna.
    """
    if noise_var < 0:
        raise ValueError("noise_var must be >= 0")
    h = csi.h
    if topology is None:
        ue_slices = [slice(j, j + 1) for j in range(h.shape[1])]
    else:
        ue_slices = topology.ue_slices()
    if len(ue_slices) != len(plan.assignment):
        raise ValueError("pilot plan does not match the number of UEs")
    rng = np.random.default_rng(seed)
    width = max(s.stop - s.start for s in ue_slices)
    shape = (plan.n_pilots, h.shape[0], width, h.shape[2])
    noise = np.sqrt(noise_var / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    rx = noise.copy()
    for u, s in enumerate(ue_slices):
        rx[plan.assignment[u], :, : s.stop - s.start] += h[:, s, :]
    est = np.empty_like(h)
    for u, s in enumerate(ue_slices):
        est[:, s, :] = rx[plan.assignment[u], :, : s.stop - s.start]
    return replace(csi, h=est)


# -- detection ----------------------------------------------------------------

def lmmse_sinr(h, noise_var: float) -> np.ndarray:
    """Per-stream SINR of the LMMSE detector with unit transmit powers.

    ``SINR_k = 1 / [(I + H^H H / noise_var)^-1]_kk - 1``.  ``h`` may carry
    leading batch dimensions (``[..., M, K]``).
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim < 2 or h.shape[-1] < 1 or h.shape[-2] < 1:
        raise ValueError("h must be at least M x K with M, K >= 1")
    if not np.all(np.isfinite(h)) or not np.isfinite(noise_var):
        raise ValueError("non-finite input")
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    k = h.shape[-1]
    gram = np.conj(np.swapaxes(h, -1, -2)) @ h / noise_var
    a = gram + np.eye(k)
    mse = np.real(np.diagonal(np.linalg.inv(a), axis1=-2, axis2=-1))
    return np.maximum(1.0 / mse - 1.0, 0.0)


def sum_se(sinr) -> float:
    sinr = np.asarray(sinr, dtype=float)
    if np.any(sinr < 0) or not np.all(np.isfinite(sinr)):
        raise ValueError("SINR values must be finite and non-negative")
    return float(np.sum(np.log2(1.0 + sinr)))


def detect(h, noise_var: float) -> DetectionReport:
    sinr = lmmse_sinr(h, noise_var)
    per = np.log2(1.0 + sinr)
    return DetectionReport(sinr=sinr, se=float(per.sum()), per_stream_se=per)


def joint_se(csi: Csi, noise_var: float, antennas=slice(None)) -> float:
    """Uplink sum SE averaged over subcarriers, LMMSE over the given RRU antennas."""
    h = np.moveaxis(csi.h[antennas], -1, 0)
    sinr = lmmse_sinr(h, noise_var)
    return float(np.mean(np.sum(np.log2(1.0 + sinr), axis=-1)))


# -- downlink precoding -------------------------------------------------------

def rzf_precoder(h, noise_var: float) -> np.ndarray:
    """Regularized zero-forcing precoders with unit-norm columns.

    ``h`` is the uplink channel ``[..., M, K]``; by reciprocity the
    downlink channel is its transpose.  Regularizer is ``noise_var * K``.
    """
    h = np.asarray(h, dtype=complex)
    k = h.shape[-1]
    d = np.swapaxes(h, -1, -2)
    dh = np.conj(h)
    w = dh @ np.linalg.inv(d @ dh + noise_var * k * np.eye(k))
    return w / np.linalg.norm(w, axis=-2, keepdims=True)


def rb_group_precode(csi: Csi, group_size: int, noise_var: float,
                     topology: Topology | None = None) -> np.ndarray:
    """One RZF precoder per group of ``group_size`` consecutive PRBs.

    The group's center PRB supplies the channel.  Returns an array of shape
    ``(n_prbs, M, K)`` holding the precoder applied on each PRB.
    """
    n_prbs = topology.n_prbs if topology is not None else csi.h.shape[-1]
    tones = topology.prb_tones() if topology is not None else np.arange(n_prbs)
    if group_size < 1 or n_prbs % group_size:
        raise ValueError(f"group_size {group_size} does not divide n_prbs {n_prbs}")
    n_groups = n_prbs // group_size
    centers = tones[np.arange(n_groups) * group_size + group_size // 2]
    # one 2-D solve per group keeps group_size=1 bit-identical to per-PRB precoding
    w = np.stack([rzf_precoder(csi.h[:, :, k], noise_var) for k in centers])
    return np.repeat(w, group_size, axis=0)


def downlink_sinr(csi: Csi, precoders: np.ndarray, noise_var: float,
                  topology: Topology | None = None) -> np.ndarray:
    """Per-PRB, per-stream downlink SINR with unit power per stream."""
    n_prbs = precoders.shape[0]
    tones = topology.prb_tones() if topology is not None else np.arange(n_prbs)
    d = np.swapaxes(np.moveaxis(csi.h[:, :, tones], -1, 0), -1, -2)
    g = np.abs(d @ precoders) ** 2
    sig = np.diagonal(g, axis1=-2, axis2=-1)
    return sig / (g.sum(axis=-1) - sig + noise_var)


def downlink_se(csi: Csi, group_size: int, noise_var: float,
                topology: Topology | None = None) -> float:
    w = rb_group_precode(csi, group_size, noise_var, topology)
    sinr = downlink_sinr(csi, w, noise_var, topology)
    return float(np.mean(np.sum(np.log2(1.0 + sinr), axis=-1)))


# -- reciprocity calibration --------------------------------------------------

def calibration_measurements(t, r, h, noise_var: float = 0.0, seed: int = 0) -> np.ndarray:
    """Over-the-air calibration exchange ``y[i, j] = r_j h_ij t_i + n``.

    ``h`` must be symmetric; NaN entries mark unmeasured pairs and the
    diagonal is left NaN.
    """
    t, r, h = (np.asarray(x, dtype=complex) for x in (t, r, h))
    rng = np.random.default_rng(seed)
    n = t.size
    noise = np.sqrt(noise_var / 2.0) * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    y = t[:, None] * h * r[None, :] + noise
    y[np.eye(n, dtype=bool)] = np.nan
    return y


def calibrate(pairwise_measurements, noise_var=0.0, reference: int = 0) -> CalibrationCoefficients:
    """Least-squares reciprocity calibration.

    Reciprocity gives ``c_i y_ji = c_j y_ij`` for every measured pair, with
    ``c_i = t_i / r_i``.  The homogeneous system is solved in the LS sense
    with ``c[reference] = 1``.  ``noise_var`` may be a scalar or a per-pair
    matrix; each equation is weighted by ``1/sqrt(var_ij + var_ji)``.
    """
    y = np.asarray(pairwise_measurements, dtype=complex)
    n = y.shape[0]
    if y.shape != (n, n):
        raise ValueError("measurements must be a square matrix")
    if not 0 <= reference < n:
        raise ValueError("reference antenna out of range")
    var = np.broadcast_to(np.asarray(noise_var, dtype=float), (n, n))
    ok = np.isfinite(y) & np.isfinite(y.T)
    np.fill_diagonal(ok, False)
    ii, jj = np.nonzero(np.triu(ok))
    n_comp, _ = connected_components(csr_matrix((np.ones(ii.size), (ii, jj)), shape=(n, n)), directed=False)
    if n_comp > 1:
        raise ValueError("calibration measurement graph is disconnected")
    if n == 1:
        return CalibrationCoefficients(np.ones(1, dtype=complex), reference)
    wvar = var[ii, jj] + var[jj, ii]
    wt = 1.0 / np.sqrt(wvar) if np.all(wvar > 0) else np.ones(ii.size)
    a = np.zeros((ii.size, n), dtype=complex)
    rows = np.arange(ii.size)
    a[rows, ii] = y[jj, ii] * wt
    a[rows, jj] = -y[ii, jj] * wt
    free = np.arange(n) != reference
    sol, *_ = np.linalg.lstsq(a[:, free], -a[:, reference], rcond=None)
    c = np.ones(n, dtype=complex)
    c[free] = sol
    if not np.all(np.isfinite(c)) or np.any(c == 0):
        raise ValueError("calibration produced degenerate coefficients")
    return CalibrationCoefficients(c, reference)


# -- peak spectral efficiency -------------------------------------------------

def peak_se(streams: int, bits_per_symbol: int, code_rate: float, overhead: float) -> float:
    """Nominal SE: streams x bits/symbol x code rate x (1 - overhead)."""
    if not 0.0 <= overhead < 1.0:
        raise ValueError("overhead must be in [0, 1)")
    if not 0.0 < code_rate <= 1.0:
        raise ValueError("code_rate must be in (0, 1]")
    if streams < 0 or bits_per_symbol < 0:
        raise ValueError("counts must be non-negative")
    return streams * bits_per_symbol * code_rate * (1.0 - overhead)
