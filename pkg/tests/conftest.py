import sys

import numpy as np
import pytest

from cfran.channel import Rru, Topology, Ue


def line_topology(ue_x=(10.0,), rru_x=(0.0,), n_rru_ant=1, n_ue_ant=1, n_prbs=8, tx=30.0):
    rrus = [Rru(position=(x, 0.0), n_antennas=n_rru_ant, tx_power_dbm=tx) for x in rru_x]
    ues = [Ue(position=(x, 0.0), n_antennas=n_ue_ant, serving_cell=0) for x in ue_x]
    return Topology(rrus=rrus, ues=ues, n_subcarriers=n_prbs, n_prbs=n_prbs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
