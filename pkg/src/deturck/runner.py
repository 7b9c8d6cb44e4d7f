"""Run orchestration: generate, evolve, diagnose, fit and probe, with all
artifacts written to the output directory.

Artifacts: `series.csv` (fixed schema, byte-reproducible for a given config
and seed), RDTF snapshots under `snapshots/`, `probes.csv` for kernel probes,
`summary.txt` with fitted exponents and the inequality pass/fail table, and
`run_meta.txt` (config echo, package version, wall time; not covered by the
byte-reproducibility contract).
"""

from __future__ import annotations

import os
import time

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .diagnostics import DiagnosticsSeries, adm_mass, decay_fit, lp_norm
from .errors import ConfigError
from .flow import FlowState, diffeo_flow, run_flow
from .grid import SymTensorField, tensor_abs
from .harnack import (
    HarnackConstants,
    build_background,
    kernel_lower_bound_check,
    measure_c2,
    probe_rows_to_csv,
    rigidity_probe,
)
from .initial_data import Xoshiro256StarStar, generate
from .snapshot import read_snapshot, write_snapshot


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def generate_artifacts(cfg: ExperimentConfig, out_dir: str) -> dict:
    """Build initial data, write its snapshot and provenance record."""
    _ensure_dir(out_dir)
    h0, record = generate(
        cfg.init_kind, cfg.grid, cfg.init_params, p_list=cfg.p_list, backend=cfg.backend
    )
    write_snapshot(os.path.join(out_dir, "initial.rdtf"), h0, time=0.0)
    lines = [f"kind = {record['kind']}", f"sup_h0 = {record['sup_h0']!r}"]
    for p, val in record["lp_h0"].items():
        lines.append(f"l{p:g}_h0 = {val!r}")
    if "min_R0" in record:
        lines.append(f"min_R0 = {record['min_R0']!r}")
        lines.append(f"max_R0 = {record['max_R0']!r}")
    with open(os.path.join(out_dir, "provenance.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return {"h0": h0, "record": record}


class _SnapshotRecorder:
    def __init__(self, cfg: ExperimentConfig, out_dir: str, series: DiagnosticsSeries):
        self.cfg = cfg
        self.series = series
        self.snap_dir = None
        if cfg.snapshot_every > 0:
            self.snap_dir = _ensure_dir(os.path.join(out_dir, "snapshots"))
        self._count = 0

    def __call__(self, state: FlowState, cache) -> None:
        if self._count % self.cfg.csv_every == 0:
            self.series.record(state, cache)
        if self.snap_dir is not None and state.step_index % self.cfg.snapshot_every == 0:
            write_snapshot(
                os.path.join(self.snap_dir, f"snap_{state.step_index:06d}.rdtf"),
                state.h,
                time=state.t,
            )
        self._count += 1


def run_experiment(cfg: ExperimentConfig, out_dir: str, quiet: bool = False) -> dict:
    """generate -> evolve -> diagnostics (-> probes), writing all artifacts."""
    _ensure_dir(out_dir)
    t_wall = time.time()
    gen = generate_artifacts(cfg, out_dir)
    h0 = gen["h0"]
    record = gen["record"]

    series = DiagnosticsSeries(
        p=cfg.p,
        local_mass_radii=cfg.local_mass_radii,
        local_mass_p=cfg.local_mass_p,
        curvature=cfg.curvature,
        backend=cfg.backend,
    )
    recorder = _SnapshotRecorder(cfg, out_dir, series)
    traj = run_flow(
        h0,
        cfg.flow,
        recorder=recorder,
        store_every=cfg.store_every,
        record_every=cfg.record_every,
    )
    series.to_csv(os.path.join(out_dir, "series.csv"))

    summary = _summarize(cfg, record, series, traj)
    harnack_report = None
    if cfg.harnack_enabled:
        harnack_report = _harnack_section(cfg, record, traj, out_dir, summary)

    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(summary) + "\n")
    with open(os.path.join(out_dir, "run_meta.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(
            [f"version = {__version__}"]
            + cfg.echo_lines()
            + [f"wall_seconds = {time.time() - t_wall:.3f}"]
        ) + "\n")
    if not quiet:
        for line in summary:
            print(line)
    return {"series": series, "trajectory": traj, "summary": summary, "harnack": harnack_report}


def _summarize(cfg, record, series: DiagnosticsSeries, traj) -> list:
    lines = [f"init.kind = {cfg.init_kind}", f"sup_h0 = {record['sup_h0']!r}"]
    if "min_R0" in record:
        lines.append(f"min_R0 = {record['min_R0']!r}")
    times = series.series("t")
    sup = series.series("sup_h")

    # decay exponent over the configured (or widest usable) window
    window = cfg.fit_window
    try:
        fit = decay_fit(times, sup, window)
        lines.append(f"decay_exponent = {fit[0]!r}")
        lines.append(f"decay_r2 = {fit[1]!r}")
        lines.append(f"decay_expected = {-cfg.grid.n / (2.0 * cfg.p)!r}")
    except ValueError as exc:
        lines.append(f"decay_exponent = n/a ({exc})")

    # L2 non-expansion with 1% slack
    l2 = series.series("l2_h")
    if l2.size >= 2 and np.max(l2) > 0:
        ok = bool(np.all(l2[1:] <= l2[:-1] * 1.01))
        lines.append(f"l2_nonexpansion[1%] = {'PASS' if ok else 'FAIL'}")

    # space-time gradient bound against 2 * lp(h0)^p
    grad_cum = series.series("grad_l2_cum")
    if grad_cum.size:
        total = float(grad_cum[-1])
        p_bound = min(cfg.p, 2.0)
        bound = 2.0 * record["lp_h0"].get(p_bound, record["lp_h0"].get(2.0, 0.0)) ** p_bound
        lines.append(f"spacetime_grad_l2 = {total!r}")
        lines.append(f"spacetime_grad_bound = {bound!r}")
        if bound > 0:
            lines.append(f"spacetime_grad[<=bound] = {'PASS' if total <= bound else 'FAIL'}")

    # scalar curvature sign floor
    if cfg.curvature:
        min_R = series.series("min_R")
        floor = -10.0 * max(abs(min(record.get("min_R0", 0.0), 0.0)), 1e-12)
        ok = bool(np.all(min_R >= floor))
        lines.append(f"min_R_floor = {floor!r}")
        lines.append(f"scalar_sign[>=floor] = {'PASS' if ok else 'FAIL'}")

    # flux integral at configured radii on the final state
    if cfg.adm_radii:
        masses = adm_mass(traj.fields[-1], cfg.adm_radii, backend=cfg.backend)
        for r, m in zip(cfg.adm_radii, masses):
            lines.append(f"adm_mass[r={r:g}] = {float(m)!r}")
    return lines


def _probe_set(cfg, grid, t0, t_end, count, seed=1234):
    """Deterministic probe pairs inside the diffusion-validity window."""
    prng = Xoshiro256StarStar(seed)
    center = grid.center()
    probes = []
    for _ in range(count):
        span = t_end - t0
        s = t0 + 0.1 * span * prng.uniform()
        tau = (0.25 + 0.55 * prng.uniform()) * (t_end - s)
        z2 = (1.0 + 8.0 * prng.uniform()) * tau
        ang = prng.uniform(0.0, 2.0 * np.pi)
        if grid.n == 2:
            direction = np.array([np.cos(ang), np.sin(ang)])
        else:
            cz = prng.uniform(-1.0, 1.0)
            sz = np.sqrt(max(0.0, 1.0 - cz**2))
            direction = np.array([sz * np.cos(ang), sz * np.sin(ang), cz])[: grid.n]
        offset = 0.2 * grid.box_length * (prng.uniform() - 0.5)
        y = center + offset * direction
        x = y + np.sqrt(z2) * direction
        probes.append({"x": x, "y": y, "s": s, "t": s + tau})
    return probes


def _harnack_section(cfg, record, traj, out_dir, summary_lines) -> dict:
    t0 = cfg.harnack_t0 if cfg.harnack_t0 > 0 else 0.25 * cfg.flow.t_end
    times = traj.times_array()
    idx = int(np.argmin(np.abs(times - t0)))
    t0 = float(times[idx])
    pullback = diffeo_flow(traj, t0=t0, backend=cfg.backend)
    h0_lp = record["lp_h0"].get(cfg.harnack_p) or lp_norm(traj.fields[0], cfg.harnack_p)
    bg = build_background(traj, pullback, cfg.harnack_p, h0_lp, backend=cfg.backend)

    c2, curv_exponent, curv_r2 = measure_c2(bg)
    eps_run = max(float(np.max(tensor_abs(h))) for h in traj.fields)
    constants = HarnackConstants.from_run(
        c2=c2, h0_lp=h0_lp, lam=bg.lam, t0=t0, eps_run=eps_run, n=cfg.grid.n
    )
    summary_lines.append(f"harnack_t0 = {t0!r}")
    summary_lines.append(f"harnack_c2 = {c2!r}")
    summary_lines.append(f"harnack_c3 = {constants.c3!r}")
    summary_lines.append(f"harnack_c4 = {constants.c4!r}")
    summary_lines.append(f"harnack_c5 = {constants.c5!r}")
    if curv_exponent is not None:
        summary_lines.append(f"curvature_decay_exponent = {curv_exponent!r}")

    report = {"c2": c2, "constants": constants, "curv_exponent": curv_exponent}
    if cfg.harnack_probes > 0:
        probes = _probe_set(cfg, cfg.grid, t0, cfg.flow.t_end, cfg.harnack_probes)
        rows, violations = kernel_lower_bound_check(bg, probes, constants, backend=cfg.backend)
        probe_rows_to_csv(rows, os.path.join(out_dir, "probes.csv"))
        live = [r for r in rows if not r.skipped]
        summary_lines.append(f"kernel_probes = {len(live)}")
        summary_lines.append(f"kernel_violations = {violations}")
        summary_lines.append(f"kernel_bound[zero_violations] = {'PASS' if violations == 0 else 'FAIL'}")
        report["rows"] = rows
        report["violations"] = violations

    probe = rigidity_probe(bg, traj, cfg.harnack_p)
    summary_lines.append(f"rigidity_verdict = {probe['verdict']}")
    report["rigidity"] = probe
    return report


def diagnose_snapshots(cfg: ExperimentConfig, snap_dir: str, out_path: str) -> DiagnosticsSeries:
    """Recompute the diagnostics series from stored snapshots."""
    names = sorted(f for f in os.listdir(snap_dir) if f.endswith(".rdtf"))
    if not names:
        raise ConfigError(f"no snapshots found in {snap_dir}")
    _ensure_dir(os.path.dirname(os.path.abspath(out_path)))
    series = DiagnosticsSeries(
        p=cfg.p,
        local_mass_radii=cfg.local_mass_radii,
        local_mass_p=cfg.local_mass_p,
        curvature=cfg.curvature,
        backend=cfg.backend,
    )
    for k, name in enumerate(names):
        field, t = read_snapshot(os.path.join(snap_dir, name))
        series.record(FlowState(t=t, h=field, step_index=k), None)
    series.to_csv(out_path)
    return series


def fit_decay_csv(path: str, window=None) -> dict:
    """Fit the sup-norm decay exponent from a series CSV."""
    import csv as _csv

    times = []
    sups = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.DictReader(fh)
        for row in reader:
            times.append(float(row["t"]))
            sups.append(float(row["sup_h"]))
    exponent, r2 = decay_fit(np.asarray(times), np.asarray(sups), window)
    return {"exponent": exponent, "r2": r2, "samples": len(times)}
