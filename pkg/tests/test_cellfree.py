import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfran import cellfree as cf
from cfran.channel import Csi, FadingProfile, generate_csi
from cfran.orchestrator import cellfree_layout

from conftest import crandn, line_topology


def combiner_sinr(h, noise_var):
    """Explicit LMMSE combiner w_k = (H H^H + s2 I)^-1 h_k, SINR from its outputs."""
    m, k = h.shape
    w = np.linalg.solve(h @ h.conj().T + noise_var * np.eye(m), h)
    out = []
    for i in range(k):
        g = np.abs(w[:, i].conj() @ h) ** 2
        out.append(g[i] / (g.sum() - g[i] + noise_var * np.linalg.norm(w[:, i]) ** 2))
    return np.array(out)


# -- pilots -------------------------------------------------------------------

def _gains_csi(beta):
    beta = np.asarray(beta, dtype=float)
    return Csi(h=np.zeros((beta.shape[0], beta.shape[1], 1), dtype=complex), long_term_gain=beta)


def test_three_ues_three_pilots_distinct():
    topo = line_topology(ue_x=(5.0, 20.0, 60.0))
    plan = cf.assign_pilots(topo, generate_csi(topo, seed=0), 3)
    assert sorted(plan.assignment) == [0, 1, 2]


def test_colocated_pair_gets_distinct_pilots():
    topo = line_topology(ue_x=(10.0, 10.0, 300.0), rru_x=(0.0, 290.0))
    plan = cf.assign_pilots(topo, generate_csi(topo, seed=0), 2)
    assert plan.assignment[0] != plan.assignment[1]


def test_single_pilot_shared():
    topo = line_topology(ue_x=(5.0, 20.0, 60.0))
    assert cf.assign_pilots(topo, generate_csi(topo, seed=0), 1).assignment == (0, 0, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 8), st.integers(0, 2**31))
def test_pilots_injective_when_enough(n_ue, extra, seed):
    rng = np.random.default_rng(seed)
    topo = line_topology(ue_x=tuple(rng.uniform(1, 100, n_ue)), rru_x=(0.0, 50.0))
    plan = cf.assign_pilots(topo, _gains_csi(rng.uniform(0.1, 1, (2, n_ue))), n_ue + extra)
    assert len(set(plan.assignment)) == n_ue
    assert all(0 <= p < n_ue + extra for p in plan.assignment)


# -- estimation ---------------------------------------------------------------

def test_noiseless_injective_estimation_exact(rng):
    csi = Csi(h=crandn(rng, 6, 3, 4), long_term_gain=np.ones((1, 3)))
    est = cf.estimate_channels(csi, cf.PilotPlan(3, (0, 1, 2)), 0.0, seed=1)
    assert np.array_equal(est.h, csi.h)


def test_contamination_sums_sharers(rng):
    csi = Csi(h=crandn(rng, 4, 2, 3), long_term_gain=np.ones((1, 2)))
    est = cf.estimate_channels(csi, cf.PilotPlan(1, (0, 0)), 0.0, seed=1)
    both = csi.h[:, 0] + csi.h[:, 1]
    assert np.allclose(est.h[:, 0], both) and np.allclose(est.h[:, 1], both)


def test_estimation_error_variance(rng):
    csi = Csi(h=crandn(rng, 100, 4, 25), long_term_gain=np.ones((1, 4)))
    est = cf.estimate_channels(csi, cf.PilotPlan(4, (0, 1, 2, 3)), 0.3, seed=2)
    assert np.mean(np.abs(est.h - csi.h) ** 2) == pytest.approx(0.3, rel=0.03)


def test_estimation_multi_antenna_ues(rng):
    topo = line_topology(ue_x=(5.0, 9.0), n_rru_ant=3, n_ue_ant=2)
    csi = generate_csi(topo, seed=4)
    est = cf.estimate_channels(csi, cf.PilotPlan(1, (0, 0)), 0.0, seed=0, topology=topo)
    assert np.allclose(est.h[:, 0:2], csi.h[:, 0:2] + csi.h[:, 2:4])


# -- LMMSE --------------------------------------------------------------------

def test_lmmse_scalar():
    sinr = cf.lmmse_sinr(np.array([[1.0]]), 1.0)
    assert sinr[0] == pytest.approx(1.0)
    assert cf.sum_se(sinr) == pytest.approx(1.0)


def test_lmmse_noise_dominated(rng):
    assert np.all(cf.lmmse_sinr(crandn(rng, 4, 3), 1e6) < 1e-3)


@pytest.mark.parametrize("m, k", [(4, 2), (8, 8), (16, 5), (1, 1), (3, 6)])
def test_lmmse_matches_combiner(rng, m, k):
    h = crandn(rng, m, k)
    np.testing.assert_allclose(cf.lmmse_sinr(h, 0.4), combiner_sinr(h, 0.4), rtol=1e-9)


def test_lmmse_rejects_nonfinite():
    with pytest.raises(ValueError):
        cf.lmmse_sinr(np.array([[np.nan]]), 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.floats(1e-3, 10), st.floats(1.01, 100), st.integers(0, 2**31))
def test_sinr_monotone_in_noise(m, k, noise, factor, seed):
    h = crandn(np.random.default_rng(seed), m, k)
    assert np.all(cf.lmmse_sinr(h, noise / factor) >= cf.lmmse_sinr(h, noise) * (1 - 1e-12))


def test_sum_se_examples():
    assert cf.sum_se([1, 3]) == pytest.approx(3.0)
    assert cf.sum_se([0, 0, 0]) == 0.0
    assert cf.sum_se([1e5] * 48) == pytest.approx(48 * np.log2(1 + 1e5))
    assert cf.sum_se([1e5] * 48) == pytest.approx(797, abs=1)
    with pytest.raises(ValueError):
        cf.sum_se([-0.1])


def test_joint_dominates_single_rru():
    topo = cellfree_layout(n_rrus=4, n_ues=2, antennas=2, n_prbs=8, seed=2)
    for s in range(10):
        csi = generate_csi(topo, seed=s)
        csi = Csi(h=csi.h * np.sqrt(200.0), long_term_gain=csi.long_term_gain)
        joint = cf.joint_se(csi, 1e-9)
        for sl in topo.rru_slices():
            assert joint >= cf.joint_se(csi, 1e-9, sl) - 1e-9


# -- RB-group precoding -------------------------------------------------------

def _norm_csi(topo, seed, fading):
    csi = generate_csi(topo, fading, seed)
    return Csi(h=csi.h / np.sqrt(csi.long_term_gain.mean()), long_term_gain=csi.long_term_gain)


def test_group_size_one_is_per_prb():
    topo = line_topology(ue_x=(5.0, 9.0, 30.0), rru_x=(0.0, 20.0), n_rru_ant=2, n_prbs=8)
    csi = _norm_csi(topo, 1, FadingProfile())
    w = cf.rb_group_precode(csi, 1, 0.1, topo)
    per_prb = np.stack([cf.rzf_precoder(csi.h[:, :, k], 0.1) for k in topo.prb_tones()])
    assert w.tobytes() == per_prb.tobytes()
    np.testing.assert_allclose(np.linalg.norm(w, axis=1), 1.0)


def test_flat_channel_group_size_irrelevant():
    topo = line_topology(ue_x=(5.0, 9.0), rru_x=(0.0, 20.0), n_rru_ant=2, n_prbs=16)
    csi = _norm_csi(topo, 2, FadingProfile(n_taps=1))
    base = cf.downlink_se(csi, 1, 0.1, topo)
    for g in (2, 4, 8, 16):
        assert cf.downlink_se(csi, g, 0.1, topo) == pytest.approx(base, rel=1e-12)


def test_group_size_must_divide():
    topo = line_topology(n_prbs=8)
    with pytest.raises(ValueError):
        cf.rb_group_precode(generate_csi(topo, seed=0), 3, 0.1, topo)


def test_grouping_costs_se_on_selective_channel():
    topo = line_topology(ue_x=(5.0, 9.0, 30.0), rru_x=(0.0, 20.0), n_rru_ant=2, n_prbs=16)
    fading = FadingProfile(n_taps=8, delay_decay=0.2)
    se = {g: [] for g in (1, 4, 16)}
    for s in range(200):
        csi = _norm_csi(topo, s, fading)
        for g in se:
            se[g].append(cf.downlink_se(csi, g, 0.05, topo))
    means = [np.mean(se[g]) for g in (1, 4, 16)]
    assert means[0] >= means[1] >= means[2]


# -- calibration --------------------------------------------------------------

def _random_hw(rng, n):
    t = rng.uniform(0.5, 2.0, n) * np.exp(2j * np.pi * rng.uniform(size=n))
    r = rng.uniform(0.5, 2.0, n) * np.exp(2j * np.pi * rng.uniform(size=n))
    h = crandn(rng, n, n)
    return t, r, (h + h.T) / 2


def test_identity_hardware():
    rng = np.random.default_rng(0)
    _, _, h = _random_hw(rng, 5)
    y = cf.calibration_measurements(np.ones(5), np.ones(5), h)
    np.testing.assert_allclose(cf.calibrate(y).c, 1.0, rtol=1e-12)


def test_noiseless_calibration_exact():
    rng = np.random.default_rng(1)
    t, r, h = _random_hw(rng, 8)
    cal = cf.calibrate(cf.calibration_measurements(t, r, h))
    truth = (t / r) / (t[0] / r[0])
    assert cal.c[0] == 1
    assert np.max(np.abs(cal.c - truth) / np.abs(truth)) < 1e-9


def test_calibration_sparse_but_connected():
    rng = np.random.default_rng(2)
    t, r, h = _random_hw(rng, 6)
    y = cf.calibration_measurements(t, r, h)
    keep = np.zeros((6, 6), dtype=bool)
    for i in range(5):  # a chain 0-1-2-3-4-5
        keep[i, i + 1] = keep[i + 1, i] = True
    y[~keep] = np.nan
    truth = (t / r) / (t[2] / r[2])
    np.testing.assert_allclose(cf.calibrate(y, reference=2).c, truth, rtol=1e-9)


def test_disconnected_graph_rejected():
    rng = np.random.default_rng(3)
    t, r, h = _random_hw(rng, 4)
    y = cf.calibration_measurements(t, r, h)
    y[:2, 2:] = np.nan
    y[2:, :2] = np.nan
    with pytest.raises(ValueError):
        cf.calibrate(y)


def test_calibration_error_grows_with_noise():
    errs = []
    for nv in (1e-4, 1e-2):
        e = []
        for trial in range(100):
            rng = np.random.default_rng(trial)
            t, r, h = _random_hw(rng, 8)
            cal = cf.calibrate(cf.calibration_measurements(t, r, h, nv, seed=trial), nv)
            truth = (t / r) / (t[0] / r[0])
            e.append(np.mean(np.abs(cal.c - truth) / np.abs(truth)))
        errs.append(np.mean(e))
    assert errs[0] < errs[1]


# -- peak SE ------------------------------------------------------------------

def test_peak_se():
    assert cf.peak_se(48, 6, 0.89, 0) == 256.32
    assert 208.5 <= cf.peak_se(48, 6, 0.89, 0.1848) <= 209.5
    assert cf.peak_se(1, 2, 1, 0) == 2


@pytest.mark.parametrize("rate, overhead", [(0.0, 0.1), (1.2, 0.1), (0.5, 1.0), (0.5, -0.1)])
def test_peak_se_rejects(rate, overhead):
    with pytest.raises(ValueError):
        cf.peak_se(4, 2, rate, overhead)
