"""End-to-end acceptance checks.

Each test records one PASS/FAIL line; conftest prints them in the terminal
summary so they show up under ``pytest -v`` as well as ``-s``.
"""

import time

import numpy as np

from cfran import cellfree as cf
from cfran import cli
from cfran import coding2d as c2
from cfran import thzlink as thz
from cfran.icic import IcicParams, greedy_coloring
from cfran.orchestrator import (SimConfig, cellfree_layout, icic_layout, run_calibration_experiment,
                                run_icic_experiment, run_se_experiment)

from test_cellfree import combiner_sinr
from test_icic import chromatic_number, random_graph

RESULTS: list[str] = []


def record(name: str, ok: bool, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_icic_directional_gain():
    t0 = time.perf_counter()
    topo = icic_layout()
    loads = (20e6, 85e6, 150e6)
    tput = np.zeros((2, 3, 5))
    for m, mode in enumerate(("fr", "icic")):
        for i, load in enumerate(loads):
            for s in range(5):
                cfg = SimConfig(offered_load=load, seed=s, icic=IcicParams())
                tput[m, i, s] = run_icic_experiment(cfg, topo, mode).system_throughput
    elapsed = time.perf_counter() - t0
    fr, ic = tput.mean(axis=-1)
    gain = ic / fr - 1
    ok = (gain[0] <= 0.15 and gain[2] >= 0.40 and gain[0] <= gain[1] <= gain[2] and elapsed < 120)
    record("ICIC vs FR directional gain", ok,
           f"FR {np.round(fr / 1e6, 1).tolist()} Mbps, ICIC {np.round(ic / 1e6, 1).tolist()} Mbps, "
           f"gain {np.round(100 * gain, 1).tolist()} % (need <=15, monotone, >=40), {elapsed:.0f} s")


def test_lmmse_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(100):
        m, k = (64, 48) if i == 0 else (int(rng.integers(1, 65)), int(rng.integers(1, 49)))
        h = (rng.standard_normal((m, k)) + 1j * rng.standard_normal((m, k))) / np.sqrt(2)
        nv = 10 ** rng.uniform(-2, 1)
        a, b = cf.lmmse_sinr(h, nv), combiner_sinr(h, nv)
        worst = max(worst, float(np.max(np.abs(a - b) / np.abs(b))))
    elapsed = time.perf_counter() - t0
    record("LMMSE equals explicit combiner", worst < 1e-9 and elapsed < 10,
           f"max rel error {worst:.2e} over 100 instances up to 64x48, {elapsed:.1f} s")


def test_joint_processing_gain():
    t0 = time.perf_counter()
    topo = cellfree_layout()
    st = run_se_experiment(topo, 100, SimConfig().noise_mw(topo.bandwidth), seed=0, max_tones=8)
    elapsed = time.perf_counter() - t0
    dominance = bool(np.all(st.joint >= st.single))
    ok = dominance and st.ratio >= 5 and elapsed < 60
    record("joint detection dominance and ratio", ok,
           f"dominates on all drops={dominance}, joint {st.mean:.1f} vs single-RRU {st.single_rru_mean:.1f} "
           f"bps/Hz, ratio {st.ratio:.1f}x (need >=5), {elapsed:.1f} s")


def test_peak_se_arithmetic():
    a = cf.peak_se(48, 6, 0.89, 0.1848)
    b = cf.peak_se(48, 6, 0.89, 0)
    record("peak SE arithmetic", 208.5 <= a <= 209.5 and b == 256.32,
           f"with overhead {a:.4f}, without {b!r} bps/Hz")


def test_coding2d_round_trip_ablation_latency():
    # exhaustive noiseless round trip, chunked to bound memory
    bad = []
    for s in range(1, 4):
        for n in range(1, 9):
            cfg = c2.Code2DConfig(n_info_per_stream=n, n_streams=s)
            total = n * s
            for lo in range(0, 2**total, 2**18):
                idx = np.arange(lo, min(lo + 2**18, 2**total))
                info = ((idx[:, None] >> np.arange(total)) & 1).astype(np.int8).reshape(-1, s, n)
                llr = (1.0 - 2.0 * c2.encode2d(info, cfg)) * 50.0
                if not np.array_equal(c2.decode2d(llr, cfg), info):
                    bad.append((n, s))
                    break
    cfg = c2.Code2DConfig()
    full, _, n_bits = c2.ber_sim(cfg, 3.0, 250, seed=1, return_counts=True)
    abl, _, _ = c2.ber_sim(cfg, 3.0, 250, seed=1, ablate_space=True, return_counts=True)
    se = np.sqrt(abl * (1 - abl) / n_bits)
    margin = (abl - full) / se
    t1, _ = c2.latency_terms(c2.Code2DConfig(n_info_per_stream=100, n_streams=1), 1000, 1e-9)
    t10, _ = c2.latency_terms(c2.Code2DConfig(n_info_per_stream=100, n_streams=10), 1000, 1e-9)
    ok = not bad and n_bits >= 1e5 and margin >= 3 and t10 / t1 == 0.1
    record("2-D code round trip, ablation, latency", ok,
           f"round-trip failures {bad}, BER full {full:.2e} vs ablated {abl:.2e} over {n_bits} bits "
           f"({margin:.1f} sigma), time-term ratio S=10/S=1 {t10 / t1!r}")


def test_calibration():
    rng = np.random.default_rng(7)
    t = rng.uniform(0.5, 2, 8) * np.exp(2j * np.pi * rng.uniform(size=8))
    r = rng.uniform(0.5, 2, 8) * np.exp(2j * np.pi * rng.uniform(size=8))
    h = (rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))) / np.sqrt(2)
    h = (h + h.T) / 2
    c = cf.calibrate(cf.calibration_measurements(t, r, h)).c
    truth = (t / r) / (t[0] / r[0])
    exact = float(np.max(np.abs(c - truth) / np.abs(truth)))
    lo, hi = (run_calibration_experiment(8, nv, 100, seed=0).mean() for nv in (1e-4, 1e-2))
    record("reciprocity calibration", exact < 1e-9 and lo < hi,
           f"noiseless max rel error {exact:.1e}, mean error {lo:.2e} at 1e-4 vs {hi:.2e} at 1e-2")


def test_thz_anchors():
    lr = thz.line_rate(31.379e9, 2, 2)
    net = thz.net_rate(lr, 0.17839)
    net4 = float(f"{net:.4g}") == float(f"{103.125e9:.4g}")
    rel = {}
    for e in (4.0, 6.0, 8.0):
        rep = thz.simulate_ber(thz.LinkConfig(snr_db=e), 1_000_000, seed=11)
        rel[e] = float(abs(rep.ber / thz.qpsk_ber_theory(e) - 1))
        if e == 4.0:
            flag = rep.pre_fec_ok and rep.ber <= thz.SD_FEC_THRESHOLD
    ok = lr == 125.516e9 and net4 and all(v < 0.2 for v in rel.values()) and flag
    record("THz rate anchors and BER", ok,
           f"line {lr!r} bps, net {net / 1e9:.4f} Gbps, BER rel error "
           f"{ {k: round(v, 3) for k, v in rel.items()} }, pre-FEC ok at 4 dB={flag}")


def test_coloring_validity_and_brute_force():
    rng = np.random.default_rng(99)
    improper = 0
    for _ in range(500):
        n = int(rng.integers(1, 21))
        edges = random_graph(rng, n, rng.uniform())
        col = greedy_coloring(range(n), edges)
        improper += any(col[a] == col[b] for a, b in edges)
    worse = 0
    for _ in range(300):
        n = int(rng.integers(1, 9))
        edges = random_graph(rng, n, rng.uniform())
        used = max(greedy_coloring(range(n), edges).values()) + 1
        worse += used > chromatic_number(range(n), edges) + 1
    record("graph coloring validity", improper == 0 and worse == 0,
           f"{improper} improper of 500 graphs (<=20 nodes), {worse} of 300 exceed optimum+1 (<=8 nodes)")


def test_cli_determinism(tmp_path):
    same = {}
    for sub in cli.SUBCOMMANDS:
        blobs = []
        for d in ("a", "b"):
            assert cli.main([sub, "--out", str(tmp_path / sub / d)]) == 0
            blobs.append({p.name: p.read_bytes() for p in sorted((tmp_path / sub / d).iterdir())})
        same[sub] = blobs[0] == blobs[1] and bool(blobs[0])
    record("CLI byte-identical reruns", all(same.values()), str(same))
