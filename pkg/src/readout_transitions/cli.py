"""Command-line front end.

Usage::

    readout-transitions {spectrum,impedance,rates,scan,emulate} --config run.json
        [--out DIR] [--workers N] [--seed S]

Data files go to the output directory; stdout gets a one-line JSON summary.
Exit codes: 0 success, 2 configuration error, 3 fewer than 99% of scan cells
succeeded, 4 rate fit not identifiable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .constants import TWO_PI
from .emulator import (
    AssignmentThresholds,
    IdentifiabilityError,
    PulseSequence,
    ShotTable,
    build_generator,
    extract_rates_mle,
    run_experiment,
)
from .environment import QubitPeakError, re_z_lumped, weighted_from_re_z
from .rates import DriveSpec, RateEntry, RateSet, assemble_rate_set
from .scanner import ScanSetup, build_rate_map, find_multiphoton_resonances
from .spectrum import eigensystem

EXIT_OK, EXIT_CONFIG, EXIT_SCAN, EXIT_FIT = 0, 2, 3, 4
SCAN_SUCCESS_FRACTION = 0.99

log = logging.getLogger("readout_transitions")


class _Run:
    """Resolved config plus output handling shared by the subcommands."""

    def __init__(self, cfg: RunConfig, out: Path, workers: int):
        self.cfg = cfg
        self.out = out
        self.workers = max(1, workers)
        self.files: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def want(self, fmt):
        return fmt in self.cfg.output.formats

    def write(self, name, text):
        path = self.out / name
        path.write_text(text)
        self.files.append(str(path))

    def write_json(self, name, data):
        if self.want("json"):
            self.write(name, json.dumps(data, indent=2, sort_keys=True) + "\n")

    def write_csv(self, name, header, rows):
        if not self.want("csv"):
            return
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
        self.write(name, buf.getvalue())

    # shared builders
    def working_point(self):
        params = self.cfg.device.transmon()
        spec = eigensystem(params, n_cut=self.cfg.device.n_cut, n_levels=self.cfg.device.n_levels)
        w_q = float(spec.energies[1])
        env = self.cfg.environment.build(params.e_c, w_q)
        return params, spec, env


def cmd_spectrum(run: _Run) -> dict:
    dev_cfg = run.cfg.device
    dev = dev_cfg.tunable()
    n = dev_cfg.n_levels
    fluxes = dev_cfg.flux if dev_cfg.flux is not None else (dev_cfg.working_flux(),)
    header = ["flux", "omega_q_hz"]
    pairs = [(0, k) for k in range(1, n)] + [(1, k) for k in range(2, n)]
    header += [f"omega_{f}_{i}_hz" for i, f in pairs]
    rows = []
    for x in fluxes:
        lv = dev.levels(x, n)
        rows.append([float(x), float(lv[1]) / TWO_PI] + [float(lv[f] - lv[i]) / TWO_PI for i, f in pairs])
    run.write_csv("spectrum.csv", header, rows)

    summary = {"rows": len(rows)}
    if run.cfg.drive is not None and run.cfg.environment.omega_res_hz is not None:
        hits = find_multiphoton_resonances(
            dev, TWO_PI * run.cfg.drive.omega_in_hz, TWO_PI * run.cfg.environment.omega_res_hz,
            0.0, max_level=n - 1, max_order=1,
        )
        run.write_json("intersections.json", {"intersections": [h.to_dict() for h in hits]})
        summary["intersections"] = len(hits)
    params = dev_cfg.transmon()
    run.write_json("working_point.json", eigensystem(params, dev_cfg.n_cut, n).to_dict())
    return summary


def cmd_impedance(run: _Run) -> dict:
    params, spec, env = run.working_point()
    w_q = float(spec.energies[1])
    grid = run.cfg.require("impedance").omega_hz
    rows, skipped = [], 0
    circuit = env.circuit
    for f in grid:
        w = TWO_PI * f
        try:
            z = env.re_z(params.e_c, w_q, w)
        except QubitPeakError:
            skipped += 1
            continue
        row = [f, z, weighted_from_re_z(z, w_q, w)]
        if circuit is not None:
            row.append(re_z_lumped(circuit, w_q, w, env.peak_exclusion))
        rows.append(row)
    header = ["omega_hz", "re_z_ohm", "weighted_hz"] + (["re_z_lumped_ohm"] if circuit is not None else [])
    # weighted impedance is an angular rate; store it per 2pi like every other frequency column
    rows = [[r[0], r[1], r[2] / TWO_PI] + r[3:] for r in rows]
    run.write_csv("impedance.csv", header, rows)
    run.write_json("impedance.json", {"columns": header, "rows": rows, "skipped_in_qubit_band": skipped})
    return {"rows": len(rows), "skipped": skipped}


def cmd_rates(run: _Run) -> dict:
    params, spec, env = run.working_point()
    drive_cfg = run.cfg.require("drive")
    rc = run.cfg.rates
    rows, blobs = [], []
    for f in drive_cfg.delta_omega_hz:
        rs = assemble_rate_set(
            spec, env, DriveSpec(TWO_PI * drive_cfg.omega_in_hz, TWO_PI * f), rc.temperature, rc.gamma_down_0,
            two_photon=rc.two_photon, two_out=rc.two_out,
        )
        totals = rs.totals()
        for e in rs:
            rows.append([f, e.initial, e.final, e.mechanism, e.rate, totals[(e.initial, e.final)]])
        blobs.append({"delta_omega_hz": f, **rs.to_dict()})
    run.write_csv("rates.csv", ["delta_omega_hz", "initial", "final", "mechanism", "rate_hz", "total_hz"], rows)
    run.write_json("rates.json", {"omega_q_hz": float(spec.energies[1]) / TWO_PI, "points": blobs})
    return {"rows": len(rows)}


def _scan_setup(run: _Run) -> ScanSetup:
    params, spec, env = run.working_point()
    scan = run.cfg.require("scan")
    drive = run.cfg.require("drive")
    rc = run.cfg.rates
    return ScanSetup(
        device=run.cfg.device.tunable(),
        env=env,
        omega_in=TWO_PI * drive.omega_in_hz,
        temperature=rc.temperature,
        gamma_down_0=rc.gamma_down_0,
        n_levels=max(run.cfg.device.n_levels, scan.max_level + 1),
        two_photon=rc.two_photon,
        two_out=rc.two_out,
        max_level=scan.max_level,
        max_order=scan.max_order,
        feature_tolerance=None if scan.feature_tolerance_hz is None else TWO_PI * scan.feature_tolerance_hz,
    )


def cmd_scan(run: _Run) -> dict:
    setup = _scan_setup(run)
    grid_q = np.array(run.cfg.scan.omega_q_hz) * TWO_PI
    grid_d = np.array(run.cfg.drive.delta_omega_hz) * TWO_PI
    rmap = build_rate_map(setup, grid_q, grid_d, workers=run.workers)
    for (iq, idw), msg in sorted(rmap.errors.items()):
        log.warning("cell (%d, %d) failed: %s", iq, idw, msg)
    if run.want("csv"):
        run.write("ratemap.csv", rmap.to_csv())
    run.write_json("ratemap.json", rmap.to_dict())
    return {
        "cells": rmap.n_cells,
        "failed": len(rmap.errors),
        "success_fraction": rmap.success_fraction,
        "annotations": len(rmap.annotations),
    }


def _emulate_one(args):
    seq, g, thresholds, shots, seed = args
    return run_experiment(seq, g, thresholds, shots, seed)


def cmd_emulate(run: _Run, seed_override=None) -> tuple[dict, int]:
    em = run.cfg.require("emulation")
    seed = seed_override if seed_override is not None else em.seed
    if seed is None:
        raise ConfigError("emulation.seed", "a seed is required for emulation (config or --seed)")
    if em.rates is not None:
        truth = RateSet(tuple(RateEntry(int(r["initial"]), int(r["final"]), r["rate_hz"], "injected") for r in em.rates))
    else:
        params, spec, env = run.working_point()
        drive = run.cfg.require("drive")
        dw = em.delta_omega_hz if em.delta_omega_hz is not None else drive.delta_omega_hz[-1]
        rc = run.cfg.rates
        truth = assemble_rate_set(
            spec, env, DriveSpec(TWO_PI * drive.omega_in_hz, TWO_PI * dw), rc.temperature, rc.gamma_down_0,
            two_photon=rc.two_photon, two_out=rc.two_out,
        )
    g = build_generator(truth, em.model_levels)
    thresholds = AssignmentThresholds(n_states=em.model_levels + 1, separation_ratio=em.separation_ratio)
    tasks = [
        (PulseSequence(s, em.durations_s, readout_backaction=em.readout_backaction), g, thresholds, em.shots, seed)
        for s in em.initial_states
    ]
    if run.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=run.workers) as pool:
            tables = list(pool.map(_emulate_one, tasks))
    else:
        tables = [_emulate_one(t) for t in tasks]
    table = ShotTable.concatenate(tables)
    if run.want("csv"):
        run.write("shots.csv", table.to_csv())

    summary = {"shots": len(table), "seed": seed}
    try:
        fit = extract_rates_mle(table, em.model_levels, thresholds)
    except IdentifiabilityError as exc:
        run.write_json("extracted.json", {"error": str(exc), "parameter": list(exc.parameter or [])})
        summary["error"] = str(exc)
        return summary, EXIT_FIT
    run.write_json("extracted.json", fit.rates.to_dict())

    truth_g = g.matrix
    rows = []
    n_within = n_checked = 0
    for e in fit.rates:
        f = min(e.final, em.model_levels)
        t = float(truth_g[f, e.initial])
        z = (e.rate - t) / e.stderr if e.stderr else None
        if z is not None:
            n_checked += 1
            n_within += abs(z) <= 3
        rows.append([e.initial, e.final, t, e.rate, e.stderr if e.stderr is not None else "",
                     e.upper if e.upper is not None else "", "" if z is None else z])
    run.write_csv("comparison.csv", ["initial", "final", "truth_hz", "estimate_hz", "stderr_hz", "upper_hz", "z"], rows)
    summary.update({"checked": n_checked, "within_3sigma": n_within})
    return summary, EXIT_OK


COMMANDS = ("spectrum", "impedance", "rates", "scan", "emulate")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="readout-transitions", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--seed", type=int, default=None, help="emulation seed (overrides config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    summary = {"command": args.command}
    code = EXIT_OK
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed", "must be non-negative")
        cfg = RunConfig.load(args.config)
        out = Path(args.out) if args.out is not None else Path(cfg.output.directory)
        run = _Run(cfg, out, args.workers)
        if args.command == "emulate":
            extra, code = cmd_emulate(run, args.seed)
        else:
            extra = globals()[f"cmd_{args.command}"](run)
            if args.command == "scan" and extra["success_fraction"] < SCAN_SUCCESS_FRACTION:
                code = EXIT_SCAN
        summary.update(extra)
        summary["files"] = run.files
    except ConfigError as exc:
        code = EXIT_CONFIG
        summary["error"] = str(exc)
        print(f"config error: {exc}", file=sys.stderr)
    summary["status"] = {EXIT_OK: "ok", EXIT_CONFIG: "config_error", EXIT_SCAN: "partial", EXIT_FIT: "not_identifiable"}[code]
    summary["exit_code"] = code
    print(json.dumps(summary, sort_keys=True, default=_json_default))
    return code


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x) if math.isfinite(x) else None
    raise TypeError(type(x))


if __name__ == "__main__":
    sys.exit(main())
