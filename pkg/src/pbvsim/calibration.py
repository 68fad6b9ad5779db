"""
Model calibration against measured observables.

:class:`Calibration` bundles every parameter the simulators consume and
round-trips through JSON. :func:`calibrate` adjusts a chosen set of free
parameters so that model predictions hit a set of target observables, by
damped least squares through :mod:`pbvsim.fitting`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import dynamics, photon_stats
from .constants import DELTA_GS, LINEWIDTH_FWHM
from .cpt import LambdaSystem, RabiCalibration, extract_t2star, linewidth_vs_power
from .emitter import EmitterParams, FieldConfig, branching_ratio, emitter_table, zeeman_slope
from .errors import CalibrationError, InvalidInputError
from .fitting import ModelSpec, fit, orbach

SLOPE_FIELDS = tuple(np.round(np.linspace(0.0, 0.2, 11), 12))
ALPHA_TEMPERATURES = tuple(np.linspace(6.0, 14.0, 9))

REFERENCE_TARGETS = {
    "qubit_freq": 4.24e9,
    "zeeman_slope": 5.98e9,
    "branching_ratio": 87.0,
    "init_fidelity": 0.987,
    "p_sat": 3.1e-9,
    "t1": 12e-3,
    "orbach_alpha": 0.5,
    "ssr_mean_readout": 4.83,
    "ssr_mean_dark": 0.64,
    "ssr_fidelity": 0.76,
    "t2star": 354e-9,
}

REFERENCE_FREE_PARAMS = (
    "f_orb_gs", "f_orb_es", "strain_es", "init_power", "p_sat",
    "a_orbach", "a_raman", "detected_rate", "flip_rate_readout",
    "background_rate", "gamma_dephasing",
)

# target -> parameters that can move it (identifiability table)
INFLUENCE = {
    "qubit_freq": {"f_orb_gs", "strain_gs", "g_spin"},
    "zeeman_slope": {"f_orb_gs", "f_orb_es", "strain_gs", "strain_es", "delta_es", "g_spin"},
    "branching_ratio": {"f_orb_gs", "f_orb_es", "strain_gs", "strain_es", "delta_es"},
    "init_fidelity": {"init_power", "p_sat", "linewidth_fwhm"},
    "p_sat": {"p_sat"},
    "t1": {"a_orbach", "a_raman"},
    "orbach_alpha": {"a_orbach", "a_raman"},
    "ssr_mean_readout": {"detected_rate", "flip_rate_readout", "background_rate"},
    "ssr_mean_dark": {"detected_rate", "flip_rate_readout", "background_rate"},
    "ssr_fidelity": {"detected_rate", "flip_rate_readout", "background_rate"},
    "t2star": {"gamma_dephasing"},
}

# parameter -> (section, search transform, linear scale)
PARAMETERS = {
    "f_orb_gs": ("emitter", "lin", 1.0),
    "f_orb_es": ("emitter", "lin", 1.0),
    "strain_gs": ("emitter", "lin", 1e11),
    "strain_es": ("emitter", "log", 1.0),
    "delta_es": ("emitter", "log", 1.0),
    "g_spin": ("emitter", "log", 1.0),
    "init_power": ("dynamics", "log", 1.0),
    "p_sat": ("dynamics", "log", 1.0),
    "linewidth_fwhm": ("dynamics", "log", 1.0),
    "a_orbach": ("temperature", "log", 1.0),
    "a_raman": ("temperature", "log", 1.0),
    "detected_rate": ("ssr", "log", 1.0),
    "flip_rate_readout": ("ssr", "log", 1.0),
    "background_rate": ("ssr", "log", 1.0),
    "gamma_dephasing": ("cpt", "log", 1.0),
}

_REG_WEIGHT = 1e-7
_MIN_SENSITIVITY = 1e-6


@dataclass(frozen=True)
class DynamicsSettings:
    field_tesla: float = 0.22
    p_sat: float = 3.1e-9
    linewidth_fwhm: float = LINEWIDTH_FWHM
    init_power: float = 2e-7
    init_duration: float = 150e-6
    probe_window: float = dynamics.PROBE_WINDOW
    detection_efficiency: float = 1e-2


@dataclass(frozen=True)
class SsrSettings:
    detected_rate: float = 4.5e4
    flip_rate_readout: float = 1e4
    background_rate: float = 1.3e3
    init_duration: float = 150e-6
    readout_duration: float = 300e-6
    dark_duration: float = 300e-6
    gaps: float = 10e-6


@dataclass(frozen=True)
class CptSettings:
    gamma_dephasing: float = math.pi * 0.9e6
    temperature_k: float = 6.5
    pump_fraction: float = 0.5
    powers_w: tuple = (1e-11, 2e-11, 4e-11, 8e-11, 1.6e-10)


@dataclass(frozen=True)
class Calibration:
    """Every parameter consumed by the simulators."""

    emitter: EmitterParams = field(default_factory=EmitterParams)
    dynamics: DynamicsSettings = field(default_factory=DynamicsSettings)
    temperature: dynamics.TemperatureModel = field(
        default_factory=lambda: dynamics.TemperatureModel(4e10, 1.0, 6e-5, DELTA_GS))
    t1_temperature_k: float = 7.5
    ssr: SsrSettings = field(default_factory=SsrSettings)
    cpt: CptSettings = field(default_factory=CptSettings)
    notes: tuple = ()

    # -- serialization --

    def to_dict(self) -> dict:
        cpt = asdict(self.cpt)
        cpt["powers_w"] = list(cpt["powers_w"])
        return {
            "emitter": self.emitter.to_dict(),
            "dynamics": asdict(self.dynamics),
            "temperature": asdict(self.temperature),
            "t1_temperature_k": self.t1_temperature_k,
            "ssr": asdict(self.ssr),
            "cpt": cpt,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Calibration":
        """Build from a calibration document.

        A flat mapping of emitter fields is accepted as well; the other
        sections then keep their defaults.
        """
        emitter_keys = {f.name for f in fields(EmitterParams)}
        if doc and set(doc) <= emitter_keys:
            return cls(emitter=EmitterParams.from_dict(doc))
        known = {"emitter", "dynamics", "temperature", "t1_temperature_k", "ssr", "cpt", "notes"}
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"unknown calibration sections: {sorted(unknown)}")
        base = cls()

        def section(name, typ, current):
            sub = doc.get(name)
            if sub is None:
                return current
            allowed = {f.name for f in fields(typ)}
            bad = set(sub) - allowed
            if bad:
                raise InvalidInputError(f"unknown keys in {name}: {sorted(bad)}")
            vals = dict(sub)
            if "powers_w" in vals:
                vals["powers_w"] = tuple(float(v) for v in vals["powers_w"])
            return replace(current, **vals)

        return cls(
            emitter=EmitterParams.from_dict(doc["emitter"]) if "emitter" in doc else base.emitter,
            dynamics=section("dynamics", DynamicsSettings, base.dynamics),
            temperature=section("temperature", dynamics.TemperatureModel, base.temperature),
            t1_temperature_k=float(doc.get("t1_temperature_k", base.t1_temperature_k)),
            ssr=section("ssr", SsrSettings, base.ssr),
            cpt=section("cpt", CptSettings, base.cpt),
            notes=tuple(doc.get("notes", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "Calibration":
        return cls.from_dict(json.loads(Path(path).read_text()))

    # -- parameter access --

    def get(self, name: str) -> float:
        section = PARAMETERS[name][0]
        return float(getattr(getattr(self, section), name))

    def with_params(self, **values) -> "Calibration":
        cal = self
        for name, v in values.items():
            section = PARAMETERS[name][0]
            cal = replace(cal, **{section: replace(getattr(cal, section), **{name: float(v)})})
        return cal

    # -- derived model objects --

    def field(self, magnitude=None) -> FieldConfig:
        b = self.dynamics.field_tesla if magnitude is None else magnitude
        return FieldConfig.along(b, (0, 0, 1))

    def table(self, magnitude=None):
        return emitter_table(self.emitter, self.field(magnitude))

    def rate_model(self, temperature=None) -> dynamics.RateModel:
        d = self.dynamics
        model = dynamics.RateModel.from_table(
            self.table(), self.emitter.gamma_rad, p_sat=d.p_sat,
            linewidth_fwhm=d.linewidth_fwhm, detection_efficiency=d.detection_efficiency)
        if temperature is None:
            return model
        return model.at_temperature(temperature, self.temperature)

    def lambda_system(self, temperature=None) -> LambdaSystem:
        t = self.cpt.temperature_k if temperature is None else temperature
        table = self.table()
        eta = branching_ratio(table)
        gamma = self.emitter.gamma_rad
        return LambdaSystem(
            qubit_freq=table.qubit_freq,
            raman_offset=table.qubit_freq,
            gamma_rad=gamma,
            branch_down=1.0 / (eta + 1.0),
            branch_up=eta / (eta + 1.0),
            gamma_dephasing=self.cpt.gamma_dephasing,
            gamma_spin=float(dynamics.spin_flip_rate(t, self.temperature)),
        )

    def rabi_calibration(self) -> RabiCalibration:
        table = self.table()
        ratio = table["B1"].relative_strength / table["B2"].relative_strength
        return RabiCalibration(self.dynamics.p_sat, self.emitter.gamma_rad,
                               probe_strength_ratio=ratio,
                               pump_fraction=self.cpt.pump_fraction)

    def ssr_config(self, seed: int = 0, n_repeats: int = 10_000) -> photon_stats.SsrConfig:
        return photon_stats.SsrConfig(n_repeats=n_repeats, rng_seed=seed, **asdict(self.ssr))


def shipped_calibration() -> Calibration:
    """The calibration file distributed with the package."""
    text = resources.files("pbvsim").joinpath("data/calibration.json").read_text()
    return Calibration.from_dict(json.loads(text))


# -- predictions -------------------------------------------------------------


def init_fidelity(cal: Calibration) -> float:
    model = cal.rate_model(cal.t1_temperature_k)
    return dynamics.initialization_fidelity(model, cal.dynamics.init_power)


def orbach_only_alpha(tmodel: dynamics.TemperatureModel, temperatures=ALPHA_TEMPERATURES,
                      rates=None):
    """``alpha`` of a modified-Orbach-only fit to a relaxation-rate series."""
    t = np.asarray(temperatures, dtype=float)
    if rates is None:
        rates = dynamics.spin_flip_rate(t, tmodel)
    rates = np.asarray(rates, dtype=float)
    res = fit(orbach(tmodel.delta_gs), t, rates, weights=1.0 / rates)
    return res["alpha"], res


def ssr_predictions(cal: Calibration) -> dict:
    ro, dk = photon_stats.analytic_pmfs(cal.ssr_config())
    n = np.arange(len(ro))
    f = photon_stats.pmf_fidelity(ro, dk, 1)[0]
    return {"ssr_mean_readout": float(ro @ n), "ssr_mean_dark": float(dk @ n), "ssr_fidelity": f}


def cpt_t2star(cal: Calibration) -> float:
    series = linewidth_vs_power(cal.lambda_system(), cal.cpt.powers_w, cal.rabi_calibration())
    return extract_t2star(series)[0]


def predict(cal: Calibration, targets) -> dict:
    """Model value of each named observable."""
    out = {}
    need = set(targets)
    if need & {"qubit_freq", "branching_ratio"}:
        table = cal.table()
        out["qubit_freq"] = table.qubit_freq
        out["branching_ratio"] = branching_ratio(table)
    if "zeeman_slope" in need:
        out["zeeman_slope"] = zeeman_slope(cal.emitter, SLOPE_FIELDS)[1]
    if "init_fidelity" in need:
        out["init_fidelity"] = init_fidelity(cal)
    if "p_sat" in need:
        out["p_sat"] = cal.dynamics.p_sat
    if "t1" in need:
        out["t1"] = dynamics.t1_model_value(cal.t1_temperature_k, cal.temperature)
    if "orbach_alpha" in need:
        out["orbach_alpha"] = orbach_only_alpha(cal.temperature)[0]
    if need & {"ssr_mean_readout", "ssr_mean_dark", "ssr_fidelity"}:
        out.update(ssr_predictions(cal))
    if "t2star" in need:
        out["t2star"] = cpt_t2star(cal)
    return {k: float(out[k]) for k in targets}


# -- calibration -------------------------------------------------------------


def _to_search(name, value):
    _, kind, scale = PARAMETERS[name]
    if kind == "log":
        if not value > 0:
            raise CalibrationError(f"{name} must start positive for a log search")
        return math.log(value)
    return value / scale


def _from_search(name, u):
    _, kind, scale = PARAMETERS[name]
    return math.exp(u) if kind == "log" else u * scale


def _components(targets, free):
    """Group targets and free parameters into independently solvable blocks."""
    nodes = [("t", t) for t in targets] + [("p", p) for p in free]
    parent = {n: n for n in nodes}

    def find(n):
        while parent[n] != n:
            parent[n] = parent[parent[n]]
            n = parent[n]
        return n

    for t in targets:
        for p in free:
            if p in INFLUENCE[t]:
                parent[find(("t", t))] = find(("p", p))
    groups = {}
    for n in nodes:
        groups.setdefault(find(n), []).append(n)
    order = ["emitter", "dynamics", "temperature", "ssr", "cpt"]

    def rank(group):
        secs = [order.index(PARAMETERS[n[1]][0]) for n in group if n[0] == "p"]
        return min(secs) if secs else len(order)

    out = []
    for g in sorted(groups.values(), key=rank):
        out.append(([n[1] for n in g if n[0] == "t"], [n[1] for n in g if n[0] == "p"]))
    return out


def check_identifiable(targets, free):
    unknown_t = [t for t in targets if t not in INFLUENCE]
    if unknown_t:
        raise CalibrationError(f"unsupported targets: {unknown_t}")
    unknown_p = [p for p in free if p not in PARAMETERS]
    if unknown_p:
        raise CalibrationError(f"unsupported free parameters: {unknown_p}")
    orphan_t = [t for t in targets if not INFLUENCE[t] & set(free)]
    orphan_p = [p for p in free if not any(p in INFLUENCE[t] for t in targets)]
    if orphan_t or orphan_p:
        raise CalibrationError(
            "rank deficiency: "
            + (f"targets {orphan_t} have no free parameter; " if orphan_t else "")
            + (f"parameters {orphan_p} influence no target" if orphan_p else "")
        )


def calibrate(targets: dict, free_params, base: Calibration | None = None):
    """Fit ``free_params`` so model predictions match ``targets``.

    Parameters
    ----------
    targets : dict
        Observable name -> measured value (see ``INFLUENCE`` for names).
    free_params : sequence of str
        Parameters to adjust (see ``PARAMETERS``).
    base : Calibration, optional
        Starting point; defaults to :class:`Calibration()`.

    Returns
    -------
    calibration : Calibration
    report : dict
        Per-target achieved values and relative residuals, per-block fit
        diagnostics.

    Raises
    ------
    CalibrationError
        If a target has no free parameter, a free parameter moves no target,
        or the numerical Jacobian of the targets is rank deficient.
    """
    cal = Calibration() if base is None else base
    targets = dict(targets)
    free = list(dict.fromkeys(free_params))
    report = {"targets": {}, "blocks": []}
    if not targets:
        if free:
            raise CalibrationError(f"rank deficiency: parameters {free} influence no target")
        return cal, report
    check_identifiable(targets, free)

    for t_names, p_names in _components(list(targets), free):
        goal = np.array([targets[t] for t in t_names], dtype=float)
        u0 = np.array([_to_search(p, cal.get(p)) for p in p_names])
        n_t = len(t_names)
        current = cal

        def build(u, _base=current, _p=p_names):
            return _base.with_params(**{p: _from_search(p, v) for p, v in zip(_p, u)})

        def evaluate(u, x, _t=t_names):
            try:
                pred = predict(build(u), _t)
            except (InvalidInputError, ValueError):
                return np.full(len(x), np.nan)
            return np.concatenate([[pred[t] for t in _t], u])

        jac = _numeric_jacobian(lambda u: evaluate(u, None)[:n_t], u0)
        scaled = jac / np.abs(goal)[:, None]
        sv = np.linalg.svd(scaled, compute_uv=False)
        # relative target change per unit search coordinate
        rank = int(np.sum(sv > max(1e-8 * sv.max(), _MIN_SENSITIVITY)))
        if rank < min(n_t, len(p_names)):
            raise CalibrationError(
                f"rank deficiency: Jacobian of {t_names} w.r.t. {p_names} has rank "
                f"{rank} < {min(n_t, len(p_names))}")

        model = ModelSpec(
            "calibration",
            tuple(p_names),
            tuple(-np.inf for _ in p_names),
            tuple(np.inf for _ in p_names),
            evaluate,
        )
        x = np.arange(n_t + len(p_names), dtype=float)
        y = np.concatenate([goal, u0])
        w = np.concatenate([1.0 / np.abs(goal), np.full(len(p_names), _REG_WEIGHT)])
        res = fit(model, x, y, weights=w, init=u0)
        cal = build(res.params)
        report["blocks"].append({
            "targets": t_names,
            "free_params": p_names,
            "converged": res.converged,
            "n_iterations": res.n_iterations,
        })

    achieved = predict(cal, list(targets))
    for t, v in targets.items():
        report["targets"][t] = {
            "target": float(v),
            "achieved": achieved[t],
            "relative_residual": (achieved[t] - v) / abs(v),
        }
    report["params"] = {p: cal.get(p) for p in free}
    return cal, report


def _numeric_jacobian(fun, u0, step=1e-4):
    """Central differences, so stationary points give an exactly flat column."""
    cols = []
    for j in range(len(u0)):
        h = step * max(abs(u0[j]), 1.0)
        up, dn = u0.copy(), u0.copy()
        up[j] += h
        dn[j] -= h
        cols.append((np.asarray(fun(up)) - np.asarray(fun(dn))) / (2 * h))
    return np.column_stack(cols)


def calibrate_reference(base: Calibration | None = None):
    """Calibrate every free parameter against the full set of reference values."""
    base = Calibration(notes=NOTES) if base is None else base
    return calibrate(REFERENCE_TARGETS, REFERENCE_FREE_PARAMS, base)


NOTES = (
    "gamma_rad is not measured directly; it is set from the 38 MHz "
    "transform-limited linewidth as 2*pi*38 MHz.",
    "delta_es, f_orb_*, strain_* are effective-model parameters fitted to "
    "the 5.98 GHz/T slope, the 4.24 GHz qubit frequency at 220 mT and eta = 87.",
    "detection_efficiency is a placeholder; it scales trace counts only.",
)
