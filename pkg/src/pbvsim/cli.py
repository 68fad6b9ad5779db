"""
Command-line entry point.

Each subcommand runs one experiment and writes into the output directory:
``<experiment>.csv`` (plus auxiliary tables), ``<experiment>.svg``,
``report.json`` with fitted quantities, and ``manifest.json`` with the config
echo, calibration, tool version, wall-clock duration and SHA-256 of every
output.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, cpt, dynamics, emitter, fitting, io, photon_stats, plotting
from .calibration import (
    REFERENCE_FREE_PARAMS,
    REFERENCE_TARGETS,
    Calibration,
    calibrate,
    orbach_only_alpha,
)
from .errors import ConfigError, ExperimentError, PbvError


def _map(fn, items, workers):
    items = list(items)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


class _Outputs:
    """Tracks files written in the output directory, in order."""

    def __init__(self, root: Path):
        self.root = root
        self.files = []

    def path(self, name):
        self.files.append(name)
        return self.root / name

    def csv(self, name, header, rows):
        io.write_csv(self.path(name), header, rows)

    def json(self, name, obj):
        io.write_json(self.path(name), obj)


# -- experiments --------------------------------------------------------------


def run_ple(cfg, cal: Calibration, out: _Outputs):
    sw = cfg.sweep
    det = np.linspace(-sw["span_hz"], sw["span_hz"], sw["n_points"])
    lw = sw["linewidth_fwhm"]

    def one(b):
        table = emitter.emitter_table(cal.emitter, emitter.FieldConfig.along(b, sw["direction"]))
        return table, emitter.ple_spectrum(table, lw, cal.emitter.zpl_freq + det)

    results = _map(one, sw["fields_tesla"], cfg.workers)
    rows = [(b, d, v) for b, (_, spec) in zip(sw["fields_tesla"], results)
            for d, v in zip(det, spec)]
    out.csv("ple.csv", ["field_tesla", "detuning_hz", "intensity"], rows)
    lines = []
    for b, (table, _) in zip(sw["fields_tesla"], results):
        lines.append([b] + [table[lab].frequency - cal.emitter.zpl_freq for lab in emitter.LABELS]
                     + [table[lab].relative_strength for lab in emitter.LABELS]
                     + [table.qubit_freq, table.spin_conserving_splitting])
    out.csv("ple_transitions.csv",
            ["field_tesla"] + [f"{lab}_detuning_hz" for lab in emitter.LABELS]
            + [f"{lab}_strength" for lab in emitter.LABELS]
            + ["qubit_freq_hz", "spin_conserving_splitting_hz"], lines)
    plotting.ple_map(out.path("ple.svg"), sw["fields_tesla"], det, [s for _, s in results])

    report = {"linewidth_fwhm": lw}
    fields = np.asarray(sw["fields_tesla"])
    split = np.array([t.spin_conserving_splitting for t, _ in results])
    if len(fields) >= 2 and np.ptp(fields) > 0:
        slope, icpt = np.polyfit(fields, split, 1)
        resid = split - (slope * fields + icpt)
        ss = np.sum((split - split.mean()) ** 2)
        report["zeeman_slope_hz_per_t"] = float(slope)
        report["zeeman_intercept_hz"] = float(icpt)
        report["zeeman_r2"] = float(1 - np.sum(resid ** 2) / ss) if ss > 0 else 1.0
    zero = [i for i, b in enumerate(fields) if b == 0]
    if zero:
        spec = results[zero[0]][1]
        core = np.abs(det) <= 10 * lw
        if core.sum() >= 4:
            res = fitting.fit(fitting.lorentzian(), det[core], spec[core])
            report["zero_field_fit"] = res.to_dict()
    report["transitions_at_max_field"] = {
        e.label: {"detuning_hz": e.frequency - cal.emitter.zpl_freq,
                  "relative_strength": e.relative_strength}
        for e in results[int(np.argmax(fields))][0].entries
    }
    report["branching_ratio_at_max_field"] = emitter.branching_ratio(results[int(np.argmax(fields))][0])
    return report


def run_init(cfg, cal: Calibration, out: _Outputs):
    sw = cfg.sweep
    power = sw["power"] if sw["power"] is not None else cal.dynamics.init_power
    model = cal.rate_model(cal.t1_temperature_k)
    res = dynamics.simulate_initialization(model, power, sw["duration"], sw["time_bin"], sw["target"])
    out.csv("init.csv", ["time_s", "counts"], zip(res.times, res.counts))
    fit = fitting.fit(fitting.mono_exponential(), res.times, res.counts)
    plotting.trace(out.path("init.svg"), res.times, res.counts,
                   fitting.mono_exponential()(fit.params, res.times),
                   xlabel="Time (us)", ylabel="Counts per bin", xscale=1e6)
    return {
        "power_w": power,
        "target": sw["target"],
        "fidelity": res.fidelity,
        "contrast_fidelity": res.contrast_fidelity,
        "steady_state": res.steady_state,
        "pumping_rate": dynamics.pumping_rate(model, sw["target"], power),
        "fit": fit.to_dict(),
    }


def run_saturation(cfg, cal: Calibration, out: _Outputs):
    sw = cfg.sweep
    model = cal.rate_model(cal.t1_temperature_k)
    powers = np.asarray(sw["powers"])
    true = np.array(_map(lambda p: dynamics.pumping_rate(model, sw["target"], p), powers, cfg.workers))
    noisy = true * (1 + sw["noise"] * _rng(cfg.seed).standard_normal(len(true)))
    spec = fitting.saturation_rate(cal.emitter.gamma_rad)
    fit = fitting.fit(spec, powers, noisy, weights=1.0 / true)
    out.csv("saturation.csv", ["power_w", "rate_model", "rate_noisy"], zip(powers, true, noisy))
    plotting.trace(out.path("saturation.svg"), powers, noisy, spec(fit.params, powers),
                   xlabel="Power (nW)", ylabel="Initialization rate (1/s)", xscale=1e9, logx=True)
    return {"noise": sw["noise"], "fit": fit.to_dict(),
            "p_sat_true": cal.dynamics.p_sat, "eta_true": model.eta}


def run_ssr(cfg, cal: Calibration, out: _Outputs):
    sw = cfg.sweep
    scfg = cal.ssr_config(seed=cfg.seed, n_repeats=sw["n_repeats"])
    summ = photon_stats.ssr_summary(scfg, sw["threshold"], workers=cfg.workers)
    h_r, h_d = summ["readout"], summ["dark"]
    ro, dk = photon_stats.analytic_pmfs(scfg)
    n_max = max(h_r.max_count, h_d.max_count)
    ro_h, dk_h = h_r.as_array(n_max), h_d.as_array(n_max)
    pad = lambda p: np.pad(p, (0, max(0, n_max + 1 - len(p))))[: n_max + 1]  # noqa: E731
    rows = zip(range(n_max + 1), ro_h.astype(int), dk_h.astype(int), pad(ro), pad(dk))
    out.csv("ssr.csv", ["counts", "readout_occurrences", "dark_occurrences",
                        "readout_pmf", "dark_pmf"], rows)
    plotting.histograms(out.path("ssr.svg"), np.arange(n_max + 1), ro_h / h_r.n_total,
                        dk_h / h_d.n_total, pad(ro), pad(dk))
    return {
        "n_repeats": scfg.n_repeats,
        "seed": cfg.seed,
        "mean_readout": summ["mean_readout"],
        "mean_dark": summ["mean_dark"],
        "threshold": summ["threshold"],
        "f_ssr": summ["f_ssr"],
        "e_r": summ["e_r"],
        "e_d": summ["e_d"],
        "optimal_threshold": summ["optimal_threshold"],
        "optimal_f_ssr": summ["optimal_f_ssr"],
        "tv_readout": photon_stats.total_variation(h_r, ro),
        "tv_dark": photon_stats.total_variation(h_d, dk),
        "analytic_f_ssr": photon_stats.pmf_fidelity(ro, dk, sw["threshold"])[0],
        "config": scfg.to_dict(),
    }


def run_t1(cfg, cal: Calibration, out: _Outputs):
    sw = cfg.sweep
    rng = _rng(cfg.seed)
    model = cal.rate_model()
    d = cal.dynamics
    delays = np.asarray(sw["delays"])
    counts = dynamics.simulate_t1_sequence(model, delays, sw["temperature_k"], cal.temperature,
                                           d.init_power, d.init_duration, d.probe_window)
    noisy = counts + sw["noise"] * counts.max() * rng.standard_normal(len(counts))
    tau, res = dynamics.fit_t1(delays, noisy)
    out.csv("t1.csv", ["delay_s", "counts_model", "counts_noisy"], zip(delays, counts, noisy))
    plotting.trace(out.path("t1.svg"), delays, noisy, fitting.mono_exponential()(res.params, delays),
                   xlabel="Delay (ms)", ylabel="Probe counts", xscale=1e3)

    temps = np.asarray(sw["temperatures_k"])
    rates = dynamics.spin_flip_rate(temps, cal.temperature)
    noisy_rates = rates * (1 + sw["rate_noise"] * rng.standard_normal(len(rates)))
    alpha, orb = orbach_only_alpha(cal.temperature, temps, noisy_rates)
    combo_spec = fitting.orbach_raman(cal.temperature.delta_gs, cal.temperature.alpha)
    combo = fitting.fit(combo_spec, temps, noisy_rates, weights=1.0 / noisy_rates)
    out.csv("t1_temperature.csv", ["temperature_k", "rate_model", "rate_noisy"],
            zip(temps, rates, noisy_rates))
    plotting.trace(out.path("t1_temperature.svg"), temps, noisy_rates,
                   combo_spec(combo.params, temps), xlabel="Temperature (K)",
                   ylabel="1/T1 (1/s)", logy=True, fit_label="Orbach + Raman")
    return {
        "temperature_k": sw["temperature_k"],
        "t1_fit_s": tau,
        "t1_model_s": dynamics.t1_model_value(sw["temperature_k"], cal.temperature),
        "recovery_fit": res.to_dict(),
        "orbach_only_alpha": alpha,
        "orbach_only_fit": orb.to_dict(),
        "orbach_raman_fit": combo.to_dict(),
    }


def run_cpt(cfg, cal: Calibration, out: _Outputs):
    sw = cfg.sweep
    if sw["gamma_dephasing"] is not None:
        cal = replace(cal, cpt=replace(cal.cpt, gamma_dephasing=sw["gamma_dephasing"]))
    powers = sw["powers_w"] if sw["powers_w"] is not None else list(cal.cpt.powers_w)
    system = cal.lambda_system(sw["temperature_k"])
    ms = cpt.measure_series(system, powers, cal.rabi_calibration(), sw["n_points"], cfg.workers)
    rows = [(p, f, s, n) for p, m in zip(powers, ms)
            for f, s, n in zip(m.grid, m.spectrum, m.normalized)]
    out.csv("cpt.csv", ["power_w", "raman_offset_hz", "fluorescence", "normalized"], rows)
    series = [(float(p), m.fwhm) for p, m in zip(powers, ms)]
    out.csv("cpt_linewidth.csv", ["power_w", "fwhm_hz"], series)
    plotting.cpt_spectra(out.path("cpt.svg"), [m.grid for m in ms], [m.normalized for m in ms],
                         [f"{p * 1e9:g} nW" for p in powers], system.qubit_freq)
    report = {
        "qubit_freq_hz": system.qubit_freq,
        "gamma_dephasing": system.gamma_dephasing,
        "gamma_spin": system.gamma_spin,
        "weak_drive_fwhm_hz": cpt.weak_drive_fwhm(system),
        "linewidths": [{"power_w": p, "fwhm_hz": w} for p, w in series],
        "dip_fits": [m.dip.to_dict() for m in ms],
        "lowest_power_dip_center_hz": ms[int(np.argmin(powers))].dip["center"],
        "lowest_power_grid_step_hz": float(np.diff(ms[int(np.argmin(powers))].grid)[0]),
    }
    if len(series) >= 3:
        t2s, b = cpt.extract_t2star(series)
        report["zero_power_fwhm_hz"] = b
        report["t2star_s"] = t2s
    return report


def run_calibrate(cfg, cal: Calibration, out: _Outputs):
    sw = cfg.sweep
    targets = sw["targets"] if sw["targets"] is not None else REFERENCE_TARGETS
    free = sw["free_params"] if sw["free_params"] is not None else list(REFERENCE_FREE_PARAMS)
    new, rep = calibrate(targets, free, cal)
    out.json("calibration.json", new.to_dict())
    names = list(rep["targets"])
    out.csv("calibrate.csv", ["target", "value", "achieved", "relative_residual"],
            [(n, rep["targets"][n]["target"], rep["targets"][n]["achieved"],
              rep["targets"][n]["relative_residual"]) for n in names])
    plotting.bars(out.path("calibrate.svg"), names,
                  [rep["targets"][n]["relative_residual"] for n in names], "Relative residual")
    return rep


EXPERIMENTS = {
    "ple": run_ple,
    "init": run_init,
    "saturation": run_saturation,
    "ssr": run_ssr,
    "t1": run_t1,
    "cpt": run_cpt,
    "calibrate": run_calibrate,
}


def run_experiment(cfg: io.RunConfig) -> dict:
    """Execute ``cfg`` and write its outputs; returns the manifest.

    Raises
    ------
    ConfigError
        If the calibration source cannot be read.
    ExperimentError
        Wrapping any failure inside the experiment. Files written by this
        run are removed first.
    """
    cal = io.resolve_calibration(cfg.emitter)
    root = Path(cfg.output_dir)
    created = not root.exists()
    root.mkdir(parents=True, exist_ok=True)
    out = _Outputs(root)
    t0 = time.perf_counter()
    try:
        report = EXPERIMENTS[cfg.experiment](cfg, cal, out)
        out.json("report.json", {"experiment": cfg.experiment, "results": report,
                                 "calibration_notes": list(cal.notes)})
    except Exception as exc:
        for name in out.files:
            (root / name).unlink(missing_ok=True)
        if created:
            shutil.rmtree(root, ignore_errors=True)
        raise ExperimentError(cfg.experiment, exc) from exc
    manifest = {
        "tool": "pbvsim",
        "version": __version__,
        "config": cfg.to_dict(),
        "calibration": cal.to_dict(),
        "duration_s": time.perf_counter() - t0,
        "files": {name: io.sha256_file(root / name) for name in out.files},
    }
    io.write_json(root / "manifest.json", manifest)
    return manifest


def _summary(experiment, report) -> str:
    r = report["results"]
    picks = {
        "ple": ("zeeman_slope_hz_per_t", "zeeman_r2"),
        "init": ("fidelity", "contrast_fidelity"),
        "saturation": (),
        "ssr": ("mean_readout", "mean_dark", "f_ssr"),
        "t1": ("t1_fit_s", "orbach_only_alpha"),
        "cpt": ("zero_power_fwhm_hz", "t2star_s"),
        "calibrate": (),
    }[experiment]
    parts = [f"{k}={r[k]:.6g}" for k in picks if k in r]
    if experiment == "saturation":
        fit = r["fit"]["params"]
        parts = [f"p_sat={fit['p_sat']['value']:.6g}", f"eta={fit['eta']['value']:.6g}"]
    if experiment == "calibrate":
        worst = max(abs(v["relative_residual"]) for v in r["targets"].values()) if r["targets"] else 0.0
        parts = [f"targets={len(r['targets'])}", f"max_relative_residual={worst:.3g}"]
    return f"{experiment}: " + " ".join(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pbvsim",
        description="Simulate and fit spin-photon experiments on a lead-vacancy center.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True)
    helps = {
        "ple": "Zeeman-split PLE spectra versus magnetic field",
        "init": "optical spin initialization trace and fidelity",
        "saturation": "initialization rate versus power with saturation fit",
        "ssr": "single-shot readout photon statistics (Monte Carlo)",
        "t1": "spin relaxation recovery curve and temperature dependence",
        "cpt": "coherent population trapping dips and T2* extrapolation",
        "calibrate": "fit model parameters to target observables",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="64-bit RNG seed (overrides the config)")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--workers", type=int, help="worker threads (overrides the config)")
        p.add_argument("--quiet", action="store_true", help="suppress the summary line")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            doc = json.loads(args.config.read_text()) if args.config.exists() else None
            if doc is None:
                raise ConfigError(str(args.config), "file not found")
        else:
            doc = {"experiment": args.experiment}
        if isinstance(doc, dict):
            if doc.get("experiment", args.experiment) != args.experiment:
                raise ConfigError("$.experiment",
                                  f"config is for {doc['experiment']!r}, not {args.experiment!r}")
            doc.setdefault("experiment", args.experiment)
            if args.seed is not None:
                doc["seed"] = args.seed
            if args.out is not None:
                doc["output_dir"] = str(args.out)
            if args.workers is not None:
                doc["workers"] = args.workers
        cfg = io.parse_config(doc)
    except json.JSONDecodeError as exc:
        print(f"error: {args.config}: malformed JSON: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        run_experiment(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PbvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        report = json.loads((Path(cfg.output_dir) / "report.json").read_text())
        print(_summary(cfg.experiment, report))
        print(f"outputs written to {cfg.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
