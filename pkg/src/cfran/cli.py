"""Experiment runner.

Reads a sectioned ``key = value`` config, runs one subcommand and writes a
self-describing CSV (plus JSON for ``icic``).  Outputs depend only on the
subcommand, the config bytes and the seed.

Exit codes: 0 ok, 1 config/usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .channel import FadingProfile
from .coding2d import Code2DConfig, ber_sim
from .icic import IcicParams
from .orchestrator import (SimConfig, cellfree_layout, icic_layout, run_calibration_experiment,
                           run_icic_experiment, run_se_experiment)
from .thzlink import LinkConfig, simulate_ber

log = logging.getLogger(__name__)

OUT_DIR_ENV = "CFRAN_OUT_DIR"
SUBCOMMANDS = ("icic", "cellfree-se", "coding2d-ber", "thz-ber", "calibrate")


class ConfigError(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    vals = tuple(float(v) for v in text.split(",") if v.strip())
    if not vals:
        raise ValueError("empty list")
    return vals


# Every accepted key with its type and default.  Types: int, float, or
# _floats for comma-separated lists.
SCHEMA: dict[str, dict[str, tuple]] = {
    "topology": {
        "spacing": (float, 200.0), "close_distance": (float, 20.0), "far_fraction": (float, 1.0),
        "tx_power_dbm": (float, 46.0), "bandwidth": (float, 36e6), "n_prbs": (int, 100),
        "carrier_freq": (float, 4.9e9),
        "cf_n_rrus": (int, 12), "cf_n_ues": (int, 12), "cf_antennas": (int, 4), "cf_spacing": (float, 30.0),
        "cf_ue_tx_power_dbm": (float, 23.0), "cf_bandwidth": (float, 100e6), "cf_n_prbs": (int, 273),
        "cf_seed": (int, 0),
    },
    "sim": {
        "seed": (int, 0), "tti": (float, 1e-3), "near_rt_period": (int, 100), "non_rt_period": (int, 1000),
        "duration": (int, 3000), "link_adaptation_cap": (float, 6 * 0.89),
        "noise_density_dbm_hz": (float, -174.0), "noise_figure_db": (float, 7.0),
        "rsrp_noise_db": (float, 1.0), "la_smoothing": (float, 0.1),
        "fading_taps": (int, 8), "fading_decay": (float, 0.5),
        "loads_mbps": (_floats, (20.0, 85.0, 150.0)), "n_drops": (int, 100), "max_tones": (int, 4),
    },
    "coding2d": {
        "n_info_per_stream": (int, 100), "n_streams": (int, 4), "decoder_iterations": (int, 1),
        "ebn0_db": (_floats, (1.0, 2.0, 3.0, 4.0, 5.0)), "n_blocks": (int, 50),
    },
    "thz": {
        "baud": (float, 31.379e9), "polarizations": (int, 2), "bits_per_symbol_per_pol": (int, 2),
        "snr_db": (_floats, (4.0, 6.0, 8.0)), "fec_threshold": (float, 1.56e-2), "fec_overhead": (float, 0.15),
        "n_symbols": (int, 100_000), "rotation_deg": (float, 0.0),
    },
    "icic": {
        "delta_db": (float, 10.0), "edge_fraction": (float, 0.25), "epsilon": (float, 0.1), "alpha": (float, 0.5),
    },
    "calibrate": {
        "n_antennas": (int, 8), "noise_var": (_floats, (1e-4, 1e-2)), "trials": (int, 100),
    },
}


@dataclass
class RunConfig:
    """Typed configs built from one parsed file."""
    values: dict
    sim: SimConfig
    icic: IcicParams
    coding2d: Code2DConfig
    thz: LinkConfig
    fading: FadingProfile

    def icic_topology(self):
        t = self.values["topology"]
        return icic_layout(spacing=t["spacing"], close_distance=t["close_distance"],
                           far_fraction=t["far_fraction"], tx_power_dbm=t["tx_power_dbm"],
                           bandwidth=t["bandwidth"], n_prbs=t["n_prbs"], carrier=t["carrier_freq"])

    def cellfree_topology(self):
        t = self.values["topology"]
        return cellfree_layout(n_rrus=t["cf_n_rrus"], n_ues=t["cf_n_ues"], antennas=t["cf_antennas"],
                               spacing=t["cf_spacing"], ue_tx_power_dbm=t["cf_ue_tx_power_dbm"],
                               bandwidth=t["cf_bandwidth"], n_prbs=t["cf_n_prbs"],
                               carrier=t["carrier_freq"], seed=t["cf_seed"])


def parse_raw(text: str) -> dict:
    """``{section: {key: (value_text, line)}}``; syntax and key checks only."""
    raw: dict = {s: {} for s in SCHEMA}
    section = None
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}], line {n}")
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, line {n}")
        if section is None:
            raise ConfigError(f"key outside any section, line {n}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key '{key}' in [{section}], line {n}")
        if key in raw[section]:
            raise ConfigError(f"duplicate key '{key}' in [{section}], line {n}")
        raw[section][key] = (value, n)
    return raw


def build(raw: dict) -> RunConfig:
    values = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (typ, default) in keys.items():
            if key not in raw[section]:
                values[section][key] = default
                continue
            text, n = raw[section][key]
            try:
                values[section][key] = typ(text)
            except ValueError:
                where = f"line {n}" if n else "command line"
                raise ConfigError(f"invalid value {text!r} for key '{key}' in [{section}], {where}") from None
    s, i, c, t = values["sim"], values["icic"], values["coding2d"], values["thz"]
    try:
        section = "sim"
        fading = FadingProfile(n_taps=s["fading_taps"], delay_decay=s["fading_decay"])
        section = "icic"
        icic = IcicParams(delta_db=i["delta_db"], edge_fraction=i["edge_fraction"], epsilon=i["epsilon"],
                          alpha=i["alpha"])
        section = "sim"
        sim = SimConfig(tti=s["tti"], near_rt_period=s["near_rt_period"], non_rt_period=s["non_rt_period"],
                        duration=s["duration"], link_adaptation_cap=s["link_adaptation_cap"],
                        noise_density_dbm_hz=s["noise_density_dbm_hz"], noise_figure_db=s["noise_figure_db"],
                        rsrp_noise_db=s["rsrp_noise_db"], la_smoothing=s["la_smoothing"], seed=s["seed"],
                        icic=icic, fading=fading)
        section = "coding2d"
        code = Code2DConfig(n_info_per_stream=c["n_info_per_stream"], n_streams=c["n_streams"],
                            decoder_iterations=c["decoder_iterations"])
        section = "thz"
        th = math.radians(t["rotation_deg"])
        rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]], dtype=complex)
        if t["polarizations"] != 2:
            raise ValueError("only dual polarization is supported")
        thz = LinkConfig(baud=t["baud"], polarizations=t["polarizations"],
                         bits_per_symbol_per_pol=t["bits_per_symbol_per_pol"], mimo_channel=rot,
                         fec_threshold=t["fec_threshold"], fec_overhead=t["fec_overhead"])
    except ValueError as e:
        lines = [n for _, n in raw[section].values()]
        where = f", line {max(lines)}" if lines and max(lines) else ""
        raise ConfigError(f"invalid [{section}] config{where}: {e}") from None
    return RunConfig(values=values, sim=sim, icic=icic, coding2d=code, thz=thz, fading=fading)


def parse_config(text: str) -> RunConfig:
    """Parse sectioned ``key = value`` text into typed configs.

    Sections: [topology], [sim], [coding2d], [thz], [icic], [calibrate].
    Omitted keys take the defaults in ``SCHEMA``.  Raises ``ConfigError``
    naming the section, key and line on unknown keys or bad values.
    """
    return build(parse_raw(text))


# -- subcommands --------------------------------------------------------------

def run_icic(cfg: RunConfig):
    topo = cfg.icic_topology()
    n_ue = len(topo.ues)
    header = ["mode", "load_mbps", "system_tput_mbps"] + [f"ue{u}_tput_mbps" for u in range(n_ue)] + ["seed"]
    rows, reports = [], []
    for mode in ("fr", "icic"):
        for load in cfg.values["sim"]["loads_mbps"]:
            rep = run_icic_experiment(replace(cfg.sim, offered_load=load * 1e6), topo, mode)
            rows.append([mode, load, rep.system_throughput / 1e6, *(rep.per_ue_throughput / 1e6), cfg.sim.seed])
            reports.append(rep.to_dict())
    return header, rows, {"reports": reports}


def run_cellfree(cfg: RunConfig):
    topo = cfg.cellfree_topology()
    s = cfg.values["sim"]
    noise = cfg.sim.noise_mw(topo.bandwidth)
    st = run_se_experiment(topo, s["n_drops"], noise, cfg.sim.seed, fading=cfg.fading,
                           max_tones=s["max_tones"] or None)
    header = ["n_drops", "joint_se_mean", "joint_se_p5", "joint_se_p50", "joint_se_p95",
              "single_rru_se_mean", "ratio", "seed"]
    return header, [[s["n_drops"], st.mean, st.p5, st.p50, st.p95, st.single_rru_mean, st.ratio, cfg.sim.seed]], None


def run_coding2d(cfg: RunConfig):
    c = cfg.values["coding2d"]
    rows = []
    for ablated in (False, True):
        for ebn0 in c["ebn0_db"]:
            ber, _, n_bits = ber_sim(cfg.coding2d, ebn0, c["n_blocks"], cfg.sim.seed,
                                     ablate_space=ablated, return_counts=True)
            rows.append([ebn0, ber, n_bits, int(ablated), cfg.sim.seed])
    return ["ebn0_db", "ber", "n_bits", "ablated", "seed"], rows, None


def run_thz(cfg: RunConfig):
    t = cfg.values["thz"]
    rows = []
    for snr in t["snr_db"]:
        rep = simulate_ber(replace(cfg.thz, snr_db=snr), t["n_symbols"], cfg.sim.seed)
        rows.append([snr, rep.ber, int(rep.pre_fec_ok), rep.line_rate, rep.net_rate, cfg.sim.seed])
    return ["snr_db", "ber", "pre_fec_ok", "line_rate", "net_rate", "seed"], rows, None


def run_calibrate(cfg: RunConfig):
    c = cfg.values["calibrate"]
    rows = []
    for nv in c["noise_var"]:
        err = run_calibration_experiment(c["n_antennas"], nv, c["trials"], cfg.sim.seed)
        rows.append([nv, float(err.mean()), float(err.max()), c["n_antennas"], c["trials"], cfg.sim.seed])
    return ["noise_var", "mean_rel_error", "max_rel_error", "n_antennas", "trials", "seed"], rows, None


RUNNERS = {"icic": run_icic, "cellfree-se": run_cellfree, "coding2d-ber": run_coding2d,
           "thz-ber": run_thz, "calibrate": run_calibrate}


# -- output -------------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"


def _write_atomic(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as f:
        f.write(text)
    os.replace(tmp, path)


def render_csv(header, rows, comment: str) -> str:
    lines = [f"# {comment}", ",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _sweep_values(arg: str):
    if "=" not in arg or "." not in arg.split("=", 1)[0]:
        raise ConfigError(f"--sweep expects SECTION.KEY=v1,v2,..., got {arg!r}")
    name, vals = arg.split("=", 1)
    section, key = name.split(".", 1)
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigError(f"unknown sweep key '{name}'")
    if SCHEMA[section][key][0] is _floats:
        raise ConfigError(f"cannot sweep list-valued key '{name}'")
    values = [v.strip() for v in vals.split(",") if v.strip()]
    if not values:
        raise ConfigError("--sweep needs at least one value")
    return section, key, values


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cfran", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", type=Path, help="sectioned key=value config file")
    p.add_argument("--seed", type=int, help="overrides [sim] seed")
    p.add_argument("--out", type=Path, help=f"output directory (default ${OUT_DIR_ENV} or ./out)")
    p.add_argument("--sweep", help="SECTION.KEY=v1,v2,... runs once per value")
    p.add_argument("--version", action="version", version=f"cfran {__version__}")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        text = args.config.read_text() if args.config else ""
        raw = parse_raw(text)
        if args.seed is not None:
            raw["sim"]["seed"] = (str(args.seed), 0)
        sweep = _sweep_values(args.sweep) if args.sweep else None
        variants = []
        for v in (sweep[2] if sweep else [None]):
            r = copy.deepcopy(raw)
            if sweep:
                r[sweep[0]][sweep[1]] = (v, 0)
            variants.append((v, build(r)))
        out = args.out or Path(os.environ.get(OUT_DIR_ENV) or "out")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1

    try:
        header, rows, blobs = None, [], []
        for v, cfg in variants:
            h, rs, blob = RUNNERS[args.subcommand](cfg)
            if sweep:
                h = [f"{sweep[0]}.{sweep[1]}"] + h
                rs = [[v] + r for r in rs]
            header = h
            rows.extend(rs)
            if blob is not None:
                blobs.append({"sweep_value": v, **blob} if sweep else blob)
        seed = variants[0][1].sim.seed
        digest = hashlib.sha256(text.encode()).hexdigest()[:16]
        comment = f"cfran {__version__} subcommand={args.subcommand} seed={seed} config_sha256={digest}"
        if sweep:
            comment += f" sweep={args.sweep}"
        out.mkdir(parents=True, exist_ok=True)
        stem = args.subcommand.replace("-", "_")
        _write_atomic(out / f"{stem}.csv", render_csv(header, rows, comment))
        if blobs:
            doc = {"version": __version__, "subcommand": args.subcommand, "seed": seed, "config_sha256": digest,
                   "runs": blobs if sweep else blobs[0]}
            _write_atomic(out / f"{stem}.json", json.dumps(doc, sort_keys=True, indent=1) + "\n")
    except Exception as e:  # noqa: BLE001 - any failure during a run maps to exit 2
        log.error("%s failed: %s", args.subcommand, e)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
