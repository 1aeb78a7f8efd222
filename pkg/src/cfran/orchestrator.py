"""Three-timescale simulation loop and experiment drivers.

RT (every TTI): RSRP sampling, scheduling, SINR -> rate, backlog update.
Near-RT (every ``near_rt_period`` TTIs): FDS extraction, conflict graph,
PRB plan.  Non-RT (every ``non_rt_period`` TTIs): learner update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cellfree
from .channel import Csi, FadingProfile, Rru, Topology, Ue, generate_csi, prb_gains, rsrp_matrix
from .icic import (IcicParams, KnowledgeGraph, PrbPlan, build_conflict_graph, color_prbs,
                   extract_fds, fr_plan, rl_update)


@dataclass(frozen=True)
class SimConfig:
    tti: float = 1e-3
    near_rt_period: int = 100
    non_rt_period: int = 1000
    duration: int = 3000
    offered_load: float = 20e6
    link_adaptation_cap: float = 6 * 0.89
    noise_density_dbm_hz: float = -174.0
    noise_figure_db: float = 7.0
    rsrp_noise_db: float = 1.0
    la_smoothing: float = 0.1
    seed: int = 0
    icic: IcicParams = field(default_factory=IcicParams)
    fading: FadingProfile = field(default_factory=FadingProfile)

    def __post_init__(self):
        if not 0 < self.near_rt_period <= self.non_rt_period <= self.duration:
            raise ValueError("need 0 < near_rt_period <= non_rt_period <= duration")
        if self.link_adaptation_cap <= 0:
            raise ValueError("link_adaptation_cap must be positive")
        if self.tti <= 0 or self.offered_load < 0:
            raise ValueError("tti must be positive and offered_load non-negative")

    def noise_mw(self, bandwidth: float) -> float:
        return 10.0 ** ((self.noise_density_dbm_hz + self.noise_figure_db + 10 * math.log10(bandwidth)) / 10.0)


@dataclass
class SimReport:
    mode: str
    offered_load: float
    per_ue_throughput: np.ndarray
    system_throughput: float
    time_series: np.ndarray
    params_trace: list
    mean_sinr_db: np.ndarray
    seed: int

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "offered_load_bps": self.offered_load, "seed": self.seed,
            "per_ue_throughput_bps": self.per_ue_throughput.tolist(),
            "system_throughput_bps": self.system_throughput,
            "time_series_bps": self.time_series.tolist(),
            "mean_sinr_db": [None if not np.isfinite(x) else x for x in self.mean_sinr_db.tolist()],
            "params_trace": [p.to_dict() for p in self.params_trace],
        }


# -- default layouts ----------------------------------------------------------

def icic_layout(spacing: float = 200.0, close_distance: float = 20.0, far_fraction: float = 1.0,
                tx_power_dbm: float = 46.0, bandwidth: float = 36e6, n_prbs: int = 100,
                carrier: float = 4.9e9) -> Topology:
    """Three RRUs on an equilateral triangle, one close and one far UE per cell.

    Far UEs sit on the line from their RRU toward the triangle centroid at
    ``far_fraction`` of the RRU-centroid distance; the default 1.0 puts them
    at the point equidistant from all three RRUs.
    UE order: ``[close_0, far_0, close_1, far_1, close_2, far_2]``.
    """
    radius = spacing / math.sqrt(3.0)
    rrus, ues = [], []
    for c in range(3):
        ang = math.radians(90.0 + 120.0 * c)
        pos = np.array([radius * math.cos(ang), radius * math.sin(ang)])
        inward = -pos / radius
        rrus.append(Rru(position=tuple(pos), tx_power_dbm=tx_power_dbm, edu_id=c))
        for d in (close_distance, far_fraction * radius):
            ues.append(Ue(position=tuple(pos + d * inward), serving_cell=c))
    return Topology(rrus=tuple(rrus), ues=tuple(ues), carrier_freq=carrier,
                    bandwidth=bandwidth, n_subcarriers=n_prbs, n_prbs=n_prbs)


def cellfree_layout(n_rrus: int = 12, n_ues: int = 12, antennas: int = 4, spacing: float = 30.0,
                    ue_tx_power_dbm: float = 23.0, bandwidth: float = 100e6, n_prbs: int = 273,
                    carrier: float = 4.9e9, seed: int = 0) -> Topology:
    """RRUs on a near-square grid, UEs uniform over the same area.

    All RRUs belong to one EDU.
    """
    cols = math.ceil(math.sqrt(n_rrus))
    rrus = tuple(Rru(position=((i % cols) * spacing, (i // cols) * spacing), n_antennas=antennas, edu_id=0)
                 for i in range(n_rrus))
    rows = math.ceil(n_rrus / cols)
    rng = np.random.default_rng(seed)
    xy = rng.uniform([0.0, 0.0], [(cols - 1) * spacing or spacing, (rows - 1) * spacing or spacing], size=(n_ues, 2))
    rpos = np.array([r.position for r in rrus])
    ues = tuple(Ue(position=tuple(p), n_antennas=antennas, tx_power_dbm=ue_tx_power_dbm,
                   serving_cell=int(np.argmin(np.linalg.norm(rpos - p, axis=1))))
                for p in xy)
    return Topology(rrus=rrus, ues=ues, carrier_freq=carrier, bandwidth=bandwidth,
                    n_subcarriers=n_prbs, n_prbs=n_prbs)


# -- RT layer -----------------------------------------------------------------

def _tx_power_per_prb_mw(topology: Topology) -> np.ndarray:
    return np.array([10.0 ** (r.tx_power_dbm / 10.0) for r in topology.rrus]) / topology.n_prbs


def sinr_per_prb(topology: Topology, csi: Csi, scheduled: dict, prb: int, ue: int,
                 noise_mw: float) -> float:
    """Downlink SINR of ``ue`` on ``prb`` given the per-cell PRB->UE maps.

    ``scheduled[c][k]`` is the UE cell ``c`` serves on PRB ``k`` (-1 idle);
    ``noise_mw`` is the noise power per PRB.
    """
    serving = topology.ues[ue].serving_cell
    if scheduled[serving][prb] != ue:
        raise ValueError(f"ue {ue} is not scheduled on prb {prb}")
    g = prb_gains(csi, topology)[:, ue, prb]
    p = _tx_power_per_prb_mw(topology)
    interf = sum(p[c] * g[c] for c in scheduled if c != serving and scheduled[c][prb] >= 0)
    return float(p[serving] * g[serving] / (interf + noise_mw))


def _sinr_grid(gain_mw: np.ndarray, assign: np.ndarray, serving: np.ndarray, noise_mw: float) -> np.ndarray:
    """SINR for every (ue, prb) given ``assign[cell, prb]``; NaN where unscheduled.

    ``gain_mw[c, u, k]`` is received power from cell ``c`` at ``u`` on ``k``.
    """
    active = assign >= 0
    total = np.einsum("cuk,ck->uk", gain_mw, active)
    own = gain_mw[serving, np.arange(len(serving))]
    own_active = active[serving]
    interf = total - own * own_active
    sinr = own / (interf + noise_mw)
    n_cell, n_prbs = assign.shape
    mine = np.zeros_like(sinr, dtype=bool)
    for c in range(n_cell):
        ks = np.nonzero(active[c])[0]
        mine[assign[c, ks], ks] = True
    return np.where(mine, sinr, np.nan)


def schedule_tti(plan: PrbPlan, backlogs, serving, demand=None, cell_masks=None, start: int = 0) -> dict:
    """Round-robin PRB assignment per cell.

    UEs with positive backlog take turns, each grabbing the lowest free PRB
    in its allowed set (and the cell's transmit mask) until its demand in
    PRBs is met or its set is exhausted.  ``start`` rotates the turn order.
    Returns ``{cell: int array of length n_prbs}`` with -1 for idle PRBs.
    """
    backlogs = np.asarray(backlogs, dtype=float)
    serving = np.asarray(serving, dtype=int)
    n_cells = int(serving.max()) + 1 if cell_masks is None else len(cell_masks)
    if demand is None:
        demand = np.full(len(backlogs), plan.n_prbs)
    out = {}
    for c in range(n_cells):
        free = [True] * plan.n_prbs if cell_masks is None else cell_masks[c].tolist()
        assign = [-1] * plan.n_prbs
        ues = [int(u) for u in np.nonzero(serving == c)[0] if backlogs[u] > 0 and demand[u] > 0]
        if ues:
            r = start % len(ues)
            ues = ues[r:] + ues[:r]
        allowed = {u: plan.allowed(u).tolist() for u in ues}
        ptr = dict.fromkeys(ues, 0)
        need = {u: int(demand[u]) for u in ues}
        while ues:
            still = []
            for u in ues:
                a, i = allowed[u], ptr[u]
                while i < len(a) and not free[a[i]]:
                    i += 1
                if i == len(a):
                    continue
                free[a[i]] = False
                assign[a[i]] = u
                ptr[u] = i + 1
                need[u] -= 1
                if need[u] > 0:
                    still.append(u)
            ues = still
        assign = np.array(assign, dtype=int)
        out[c] = assign
    return out


def run_icic_experiment(config: SimConfig, topology: Topology, mode: str = "icic") -> SimReport:
    """Simulate ``config.duration`` TTIs in ``icic`` or ``fr`` mode."""
    if mode not in ("icic", "fr"):
        raise ValueError(f"unknown mode {mode!r}")
    n_ue, n_cell = len(topology.ues), len(topology.rrus)
    serving = topology.serving
    csi = generate_csi(topology, config.fading, config.seed)
    gain_mw = prb_gains(csi, topology) * _tx_power_per_prb_mw(topology)[:, None, None]
    b_prb = topology.prb_bandwidth
    noise = config.noise_mw(b_prb)
    cap_bits = b_prb * config.tti * config.link_adaptation_cap
    rsrp_true = rsrp_matrix(csi, topology)
    meas_rng = np.random.default_rng([config.seed, 1])
    kg = KnowledgeGraph.from_serving(serving, n_cell)

    params = config.icic
    trace = [params]
    plan = fr_plan(topology.n_prbs, n_ue)
    if mode == "icic":
        # first plan comes from the TTI-0 measurement instead of a reuse-1 warmup
        kg.add_samples(0, rsrp_true + config.rsrp_noise_db * meas_rng.standard_normal(rsrp_true.shape))
        plan = color_prbs(build_conflict_graph(extract_fds(kg, (0, 1)), serving, params.delta_db),
                          topology.n_prbs, params.edge_fraction)
    masks = [plan.cell_mask(c, serving) for c in range(n_cell)]
    arrivals = config.offered_load * config.tti
    backlog = np.zeros(n_ue)
    delivered = np.zeros(n_ue)
    window_bits = 0.0
    nonrt_bits = 0.0
    series = []
    est = np.full(n_ue, cap_bits)
    sinr_db_sum = np.zeros(n_ue)
    sinr_n = np.zeros(n_ue)

    for t in range(config.duration):
        if t > 0 and t % config.near_rt_period == 0:
            if mode == "icic" and t % config.non_rt_period == 0:
                offered = arrivals * n_ue * config.non_rt_period
                params = rl_update(params, nonrt_bits, rng_seed=_derive(config.seed, t), offered=offered)
                trace.append(params)
                nonrt_bits = 0.0
            series.append(window_bits / (config.near_rt_period * config.tti))
            window_bits = 0.0
            if mode == "icic":
                fds = extract_fds(kg, (t - config.near_rt_period, t))
                conflict = build_conflict_graph(fds, serving, params.delta_db)
                plan = color_prbs(conflict, topology.n_prbs, params.edge_fraction)
            else:
                plan = fr_plan(topology.n_prbs, n_ue)
            masks = [plan.cell_mask(c, serving) for c in range(n_cell)]

        if t > 0 or mode != "icic":
            kg.add_samples(t, rsrp_true + config.rsrp_noise_db * meas_rng.standard_normal(rsrp_true.shape))
        backlog += arrivals
        demand = np.ceil(backlog / np.maximum(est, 1e-9))
        sched = schedule_tti(plan, backlog, serving, demand=demand, cell_masks=masks, start=t)
        assign = np.stack([sched[c] for c in range(n_cell)])
        sinr = _sinr_grid(gain_mw, assign, serving, noise)
        used = ~np.isnan(sinr)
        se = np.minimum(np.log2(1.0 + np.where(used, sinr, 0.0)), config.link_adaptation_cap)
        bits_prb = se * b_prb * config.tti
        n_used = used.sum(axis=1)
        got = bits_prb.sum(axis=1)
        sent = np.minimum(got, backlog)
        backlog -= sent
        delivered += sent
        window_bits += sent.sum()
        nonrt_bits += sent.sum()
        on = n_used > 0
        est[on] = (1 - config.la_smoothing) * est[on] + config.la_smoothing * got[on] / n_used[on]
        with np.errstate(divide="ignore"):
            sinr_db_sum += np.where(used, 10 * np.log10(np.where(used, sinr, 1.0)), 0.0).sum(axis=1)
        sinr_n += n_used

    series.append(window_bits / (config.near_rt_period * config.tti))
    seconds = config.duration * config.tti
    per_ue = delivered / seconds
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_sinr = np.where(sinr_n > 0, sinr_db_sum / np.maximum(sinr_n, 1), np.nan)
    return SimReport(mode=mode, offered_load=config.offered_load, per_ue_throughput=per_ue,
                     system_throughput=float(per_ue.sum()), time_series=np.array(series),
                     params_trace=trace, mean_sinr_db=mean_sinr, seed=config.seed)


def _derive(seed: int, t: int) -> int:
    return int(np.random.SeedSequence([seed, t]).generate_state(1)[0])


# -- spectral-efficiency experiment -------------------------------------------

@dataclass(frozen=True)
class SeStats:
    mean: float
    p5: float
    p50: float
    p95: float
    single_rru_mean: float
    ratio: float
    joint: np.ndarray
    single: np.ndarray


def run_se_experiment(topology: Topology, n_drops: int, noise_var: float, seed: int,
                      fading: FadingProfile | None = None, max_tones: int | None = None) -> SeStats:
    """Uplink sum SE of joint LMMSE over all RRU antennas vs the best single RRU.

    Channels are scaled by each UE's transmit power (mW) and ``noise_var``
    is the noise power in mW.  SE per drop is averaged over subcarriers
    (optionally thinned to ``max_tones`` evenly spaced tones).
    """
    if topology.n_ue_antennas > topology.n_rru_antennas:
        raise ValueError(f"{topology.n_ue_antennas} streams exceed {topology.n_rru_antennas} BS antennas")
    if n_drops < 1:
        raise ValueError("n_drops must be >= 1")
    fading = fading or FadingProfile()
    p = np.repeat([10.0 ** (u.tx_power_dbm / 10.0) for u in topology.ues], [u.n_antennas for u in topology.ues])
    tones = np.arange(topology.n_subcarriers)
    if max_tones is not None and max_tones < tones.size:
        tones = np.linspace(0, topology.n_subcarriers - 1, max_tones).round().astype(int)
    joint, single = np.empty(n_drops), np.empty(n_drops)
    ss = np.random.SeedSequence(seed).generate_state(n_drops)
    for d in range(n_drops):
        csi = generate_csi(topology, fading, int(ss[d]))
        csi = Csi(h=csi.h[:, :, tones] * np.sqrt(p)[None, :, None], long_term_gain=csi.long_term_gain)
        joint[d] = cellfree.joint_se(csi, noise_var)
        single[d] = max(cellfree.joint_se(csi, noise_var, s) for s in topology.rru_slices())
    return SeStats(mean=float(joint.mean()), p5=float(np.percentile(joint, 5)),
                   p50=float(np.percentile(joint, 50)), p95=float(np.percentile(joint, 95)),
                   single_rru_mean=float(single.mean()), ratio=float(joint.mean() / single.mean()),
                   joint=joint, single=single)


# -- calibration experiment ---------------------------------------------------

def run_calibration_experiment(n_antennas: int, noise_var: float, trials: int, seed: int) -> np.ndarray:
    """Mean relative coefficient error of LS calibration, one value per trial.

    Each trial draws transmit/receive gains with amplitude in [0.5, 2] and
    uniform phase, a symmetric CN(0, 1) propagation matrix and measurement
    noise of variance ``noise_var``.
    """
    if n_antennas < 2 or trials < 1:
        raise ValueError("need n_antennas >= 2 and trials >= 1")
    errs = np.empty(trials)
    for k in range(trials):
        rng = np.random.default_rng([seed, k])
        t, r = (rng.uniform(0.5, 2.0, n_antennas) * np.exp(2j * np.pi * rng.uniform(size=n_antennas))
                for _ in range(2))
        h = (rng.standard_normal((n_antennas, n_antennas))
             + 1j * rng.standard_normal((n_antennas, n_antennas))) / np.sqrt(2.0)
        h = (h + h.T) / 2
        y = cellfree.calibration_measurements(t, r, h, noise_var, seed=int(rng.integers(2**31)))
        cal = cellfree.calibrate(y, noise_var)
        truth = (t / r) / (t[0] / r[0])
        errs[k] = np.mean(np.abs(cal.c - truth) / np.abs(truth))
    return errs
